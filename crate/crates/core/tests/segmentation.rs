mod common;

use common::*;
use proptest::prelude::*;
use sihd_core::encoding_tree::{layer_partition, EncodingTree};
use sihd_core::segmentation::{build_hierarchy, pad_sequence, segment_layer};

#[test]
fn hundred_random_trajectories_reconstruct_and_nest() {
    let mut r = rng(31);
    for _ in 0..100 {
        let (tree, ids) = random_case(&mut r);
        let hier = build_hierarchy(&ids, &tree).unwrap();
        check_hierarchy(&tree, &ids, &hier);
        assert_eq!(build_hierarchy(&ids, &tree).unwrap(), hier);
    }
}

#[test]
fn one_community_gives_one_segment_per_layer() {
    let tree = EncodingTree::from_partition(4, &[vec![0, 1], vec![2, 3]]).unwrap();
    let hier = build_hierarchy(&[0, 1, 0, 0, 1], &tree).unwrap();
    assert_eq!(hier.layer(1).len(), 1);
    assert_eq!(hier.subgoals(1), vec![4]);
}

#[test]
fn alternating_communities_cut_every_step() {
    let tree = EncodingTree::from_partition(4, &[vec![0, 1], vec![2, 3]]).unwrap();
    let lp = layer_partition(&tree, 1).unwrap();
    let segs = segment_layer(&[0, 2, 1, 3, 0, 2], &lp).unwrap();
    assert_eq!(segs.len(), 6);
    assert!(segs.iter().all(|s| s.len() == 1));
}

#[test]
fn three_room_crossing_cuts_at_room_transitions() {
    // rooms {0..4}, {4..8}, {8..12}
    let rooms = [vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9, 10, 11]];
    let tree = EncodingTree::from_partition(12, &rooms).unwrap();
    let lp = layer_partition(&tree, 1).unwrap();
    let ids = [0, 1, 3, 2, 4, 6, 5, 7, 9, 8, 10, 11, 11];
    let label = |v: usize| v / 4;
    let expected: Vec<usize> = std::iter::once(0)
        .chain((1..ids.len()).filter(|&t| label(ids[t]) != label(ids[t - 1])))
        .collect();
    let segs = segment_layer(&ids, &lp).unwrap();
    assert_eq!(segs.len(), 3);
    assert_eq!(segs.iter().map(|s| s.start).collect::<Vec<_>>(), expected);
}

#[test]
fn unmapped_vertex_is_rejected() {
    let tree = EncodingTree::from_partition(4, &[vec![0, 1], vec![2, 3]]).unwrap();
    let lp = layer_partition(&tree, 1).unwrap();
    assert!(segment_layer(&[0, 9], &lp).is_err());
}

/// Rooms at height 2, two sub-rooms of two vertices each at height 1.
fn room_tree() -> EncodingTree {
    let mut parents = vec![None, Some(0), Some(0), Some(0)];
    for room in 1..=3 {
        parents.extend([Some(room), Some(room)]);
    }
    let mut vertex = vec![None; parents.len()];
    for v in 0..12 {
        parents.push(Some(4 + v / 2));
        vertex.push(Some(v));
    }
    EncodingTree::from_parents(12, &parents, &vertex).unwrap()
}

#[test]
fn twelve_step_manual_hierarchy() {
    let tree = room_tree();
    assert_eq!(tree.height(), 3);
    // sub-rooms: {0,1} {2,3} | {4,5} {6,7} | {8,9} {10,11}
    let ids = [0, 2, 1, 3, 3, 4, 6, 5, 7, 8, 11, 10];
    let hier = build_hierarchy(&ids, &tree).unwrap();
    // worked by hand from the sub-room and room of each step
    assert_eq!(hier.boundaries(1), vec![0, 1, 2, 3, 5, 6, 7, 8, 9, 10]);
    assert_eq!(hier.subgoals(1), vec![0, 1, 2, 4, 5, 6, 7, 8, 9, 11]);
    assert_eq!(hier.boundaries(2), vec![0, 5, 9]);
    assert_eq!(hier.subgoals(2), vec![4, 8, 11]);
    assert_eq!(hier.child_sequence(2, 0), vec![0, 1, 2, 4]);
    assert_eq!(hier.child_sequence(2, 1), vec![5, 6, 7, 8]);
    assert_eq!(hier.child_sequence(2, 2), vec![9, 11]);
    assert_eq!(hier.child_sequence(1, 3), vec![3, 4]);
    assert_eq!(hier.top_sequence(), vec![4, 8, 11]);
    check_hierarchy(&tree, &ids, &hier);
}

#[test]
fn padding_examples() {
    let seq: Vec<usize> = (0..8).collect();
    let p = pad_sequence(&seq, 8).unwrap();
    assert_eq!(p.values, seq);
    assert!(p.mask.iter().all(|&m| m));
    let p = pad_sequence(&[1, 2, 3], 8).unwrap();
    assert_eq!(p.values, vec![1, 2, 3, 3, 3, 3, 3, 3]);
    assert_eq!(p.unpad(), vec![1, 2, 3]);
    assert!(pad_sequence(&[1, 2, 3], 2).is_err());
}

proptest! {
    #[test]
    fn hierarchy_invariants_hold(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (tree, ids) = random_case(&mut r);
        let hier = build_hierarchy(&ids, &tree).unwrap();
        check_hierarchy(&tree, &ids, &hier);
    }

    #[test]
    fn pad_then_unpad_round_trips(seq in prop::collection::vec(any::<i32>(), 1..20), extra in 0usize..10) {
        let p = pad_sequence(&seq, seq.len() + extra).unwrap();
        prop_assert_eq!(p.values.len(), seq.len() + extra);
        prop_assert_eq!(p.unpad(), seq);
    }
}
