mod common;

use common::stack::*;
use common::*;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sihd_core::diffusion::*;
use sihd_core::encoding_tree::{bound_check, layer_partition, node_gain, EncodingTree};
use sihd_core::pipeline::train_from_artifacts;
use sihd_core::SihdError;


// schedules

#[test]
fn linear_two_step_endpoints() {
    let s = make_schedule(ScheduleKind::Linear, 2).unwrap();
    assert_eq!(s.betas(), &[1e-4, 2e-2]);
}

#[test]
fn cosine_twenty_steps_matches_closed_form() {
    let k = 20;
    let s = make_schedule(ScheduleKind::Cosine, k).unwrap();
    let f = |t: f64| ((t / k as f64 + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2).cos().powi(2);
    // every step but the last is unclamped, so the product telescopes
    for step in 0..k {
        let closed = f(step as f64) / f(0.0);
        assert!((s.alpha_bar(step) - closed).abs() < 1e-12, "step {step}");
    }
    // f(K) = 0 puts β_K at its 0.999 cap
    assert!((s.alpha_bar(k) - f((k - 1) as f64) / f(0.0) * 1e-3).abs() < 1e-15);
    assert!(s.alpha_bar(k) < 0.05);
}

#[test]
fn schedule_rejects_single_step() {
    assert!(make_schedule(ScheduleKind::Cosine, 1).is_err());
}

proptest! {
    #[test]
    fn alpha_bar_strictly_decreasing(steps in 2usize..200, cosine in any::<bool>()) {
        let kind = if cosine { ScheduleKind::Cosine } else { ScheduleKind::Linear };
        let s = make_schedule(kind, steps).unwrap();
        for k in 1..=steps {
            prop_assert!(s.beta(k) > 0.0 && s.beta(k) < 1.0);
            prop_assert!(s.alpha_bar(k) < s.alpha_bar(k - 1));
        }
    }

    #[test]
    fn forward_diffuse_preserves_shape(len in 1usize..40, k in 0usize..=20, seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = make_schedule(ScheduleKind::Cosine, 20).unwrap();
        let x = normal_vec(len, &mut r);
        let e = normal_vec(len, &mut r);
        prop_assert_eq!(forward_diffuse(&x, k, &s, &e).unwrap().len(), len);
    }
}

// forward process

#[test]
fn forward_diffuse_identity_and_zero_signal() {
    let s = make_schedule(ScheduleKind::Linear, 10).unwrap();
    let x = vec![0.3, -1.2, 2.0];
    let e = vec![1.0, -0.5, 0.25];
    assert_eq!(forward_diffuse(&x, 0, &s, &e).unwrap(), x);
    let out = forward_diffuse(&[0.0; 3], 7, &s, &e).unwrap();
    let c = (1.0 - s.alpha_bar(7)).sqrt();
    for (o, e) in out.iter().zip(&e) {
        assert_eq!(*o, c * e);
    }
    assert!(matches!(
        forward_diffuse(&x, 3, &s, &[0.0; 2]),
        Err(SihdError::ShapeMismatch { .. })
    ));
}

#[test]
fn forward_diffuse_final_step_is_standard_normal() {
    let s = make_schedule(ScheduleKind::Cosine, 20).unwrap();
    let mut r = rng(7);
    let n = 10_000;
    let xs: Vec<f64> = (0..n)
        .map(|_| {
            let x0: f64 = StandardNormal.sample(&mut r);
            let e: f64 = StandardNormal.sample(&mut r);
            forward_diffuse(&[x0], 20, &s, &[e]).unwrap()[0]
        })
        .collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean.abs() < 0.05, "mean {mean}");
    assert!((var - 1.0).abs() < 0.05, "var {var}");
}

// reverse process

#[test]
fn true_noise_at_first_step_recovers_x0() {
    let s = make_schedule(ScheduleKind::Cosine, 2).unwrap();
    let mut r = rng(3);
    let x0 = normal_vec(6, &mut r);
    let e = normal_vec(6, &mut r);
    let x1 = forward_diffuse(&x0, 1, &s, &e).unwrap();
    // posterior mean at k = 1 is x̂_0 = (x_1 - √(1-ᾱ_1)ε)/√ᾱ_1
    let back = posterior_mean(&x1, &e, 1, &s, false);
    for (a, b) in back.iter().zip(&x0) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn last_reverse_step_adds_no_noise() {
    let net = small_net(1);
    let s = make_schedule(ScheduleKind::Cosine, 5).unwrap();
    let x = normal_vec(4, &mut rng(2));
    let opts = SampleOptions::default();
    let a = reverse_step(&net, &x, 0.3, 1, &s, opts, &mut rng(10)).unwrap();
    let b = reverse_step(&net, &x, 0.3, 1, &s, opts, &mut rng(11)).unwrap();
    assert_eq!(a, b);
    let c = reverse_step(&net, &x, 0.3, 3, &s, opts, &mut rng(10)).unwrap();
    let d = reverse_step(&net, &x, 0.3, 3, &s, opts, &mut rng(11)).unwrap();
    assert_ne!(c, d);
    assert_eq!(c.len(), x.len());
}

// guidance

#[test]
fn guidance_endpoints_match_single_branch() {
    let mut r = rng(5);
    for i in 0..20 {
        let net = small_net(100 + i);
        let x = normal_vec(4, &mut r);
        let y: f64 = r.random_range(-1.0..1.0);
        let k = r.random_range(1..=20);
        let cond = net.predict_with_embedding(&x, &net.embed(y), k).unwrap();
        let null = net.predict_with_embedding(&x, &net.null_embedding(), k).unwrap();
        assert_eq!(cfg_predict(&net, &x, y, 0.0, k).unwrap(), cond);
        assert_eq!(cfg_predict(&net, &x, y, 1.0, k).unwrap(), null);
        assert_eq!(cfg_predict(&net, &x, y, 0.3, k).unwrap(), cfg_predict(&net, &x, y, 0.3, k).unwrap());
    }
}

#[test]
fn output_space_guidance_combines_branches() {
    let net = small_net(9);
    let x = normal_vec(4, &mut rng(4));
    let c = net.predict_with_embedding(&x, &net.embed(0.7), 3).unwrap();
    let u = net.predict_with_embedding(&x, &net.null_embedding(), 3).unwrap();
    let got = cfg_predict_mode(&net, &x, 0.7, 0.5, 3, GuidanceMode::Output).unwrap();
    for i in 0..4 {
        assert!((got[i] - (1.5 * c[i] - 0.5 * u[i])).abs() < 1e-12);
    }
}

// loss and gradients

#[test]
fn gradient_matches_central_differences() {
    let net = small_net(21);
    assert!(net.params.len() <= 1000, "{} params", net.params.len());
    let batch = random_batch(&net, 5, &mut rng(22));
    let (_, grad) = net.mse_and_grad(&batch).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..net.params.len() {
        let mut plus = net.clone();
        plus.params[i] += h;
        let mut minus = net.clone();
        minus.params[i] -= h;
        let numeric = (plus.mse_and_grad(&batch).unwrap().0 - minus.mse_and_grad(&batch).unwrap().0) / (2.0 * h);
        // absolute floor keeps near-zero partials from dividing rounding noise
        let denom = grad[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn perfect_prediction_has_zero_loss() {
    let mut net = small_net(30);
    net.layer = 2;
    let mut batch = random_batch(&net, 4, &mut rng(31));
    for ex in &mut batch {
        let emb = net.blended_embedding(ex.y, ex.blend);
        ex.noise = net.predict_with_embedding(&ex.noised, &emb, ex.step).unwrap();
    }
    let (loss, mse, grad) = training_loss(&net, &batch, 0.1, None).unwrap();
    assert_eq!((loss, mse), (0.0, 0.0));
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn regularizer_only_on_layer_one() {
    let net = small_net(40);
    let batch = random_batch(&net, 3, &mut rng(41));
    let (loss, mse, _) = training_loss(&net, &batch, 0.0, None).unwrap();
    assert_eq!(loss, mse);
    let terms = uniform_terms(4);
    let (loss, mse, _) = training_loss(&net, &batch, 0.5, Some(&terms)).unwrap();
    assert!((loss - (mse - 0.5 * terms.lower_bound())).abs() < 1e-12);
    let mut upper = net.clone();
    upper.layer = 2;
    assert!(training_loss(&upper, &batch, 0.5, Some(&terms)).is_err());
}

// overfitting a single segment

#[test]
fn two_hundred_steps_cut_the_loss_tenfold() {
    let samples = one_segment();
    let cfg = overfit_config(200);
    let schedule = make_schedule(ScheduleKind::Cosine, 20).unwrap();
    let mut r = rng(50);
    let mut model = init_layer(&samples, cfg.hidden, &mut r).unwrap();
    let log = train_layer(&mut model, &samples, &schedule, &cfg, &mut r, None).unwrap();
    let window = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = window(&log.mse[..10]);
    let last = window(&log.mse[190..]);
    assert!(last < 0.1 * first, "initial {first}, final {last}");
}

#[test]
fn overfit_segment_is_reproduced_by_sampling() {
    let samples = one_segment();
    let cfg = overfit_config(2000);
    let schedule = make_schedule(ScheduleKind::Cosine, 20).unwrap();
    let mut r = rng(51);
    let mut model = init_layer(&samples, cfg.hidden, &mut r).unwrap();
    train_layer(&mut model, &samples, &schedule, &cfg, &mut r, None).unwrap();
    let reqs = vec![
        RawRequest {
            y: Some(0.5),
            pinned: Vec::new(),
        };
        16
    ];
    let out = model.generate(&reqs, &schedule, cfg.sample_options(), &mut r).unwrap();
    let target = &samples.rows[0];
    let mut se = 0.0;
    let mut n = 0;
    for seq in &out {
        for (row, t) in seq.iter().zip(target) {
            for (a, b) in row.iter().zip(t) {
                se += (a - b).powi(2);
                n += 1;
            }
        }
    }
    let rmse = (se / n as f64).sqrt();
    assert!(rmse < 0.1, "rmse {rmse}");
}

// condition values

#[test]
fn condition_value_matches_independent_gains() {
    let mut e = clique(0, 3, 1.0);
    e.extend(clique(3, 3, 1.0));
    e.push((2, 3, 1.0));
    let g = graph(6, &e);
    let tree = EncodingTree::from_partition(6, &[vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
    let gains = GainTable::new(&tree, &tree.stats(&g).unwrap()).unwrap();
    let lp = layer_partition(&tree, 1).unwrap();
    let independent: Vec<f64> = lp.nodes.iter().map(|&a| node_gain(&g, &tree, a).unwrap()).collect();
    let max = independent.iter().copied().fold(0.0, f64::max);
    for (&a, gain) in lp.nodes.iter().zip(&independent) {
        let v = condition_value(1, 2, SegmentContext::Community(a), 1.0, &gains).unwrap();
        assert!((v - gain / max).abs() < 1e-12);
    }
    assert_eq!(condition_value(2, 2, SegmentContext::Reward(3.0), 3.0, &gains).unwrap(), 1.0);
    assert!(matches!(
        condition_value(1, 2, SegmentContext::Community(tree.root()), 1.0, &gains),
        Err(SihdError::UnresolvedCommunity(_))
    ));
}

#[test]
fn zero_gain_community_conditions_on_zero() {
    // two disconnected triangles: neither community has a cut edge
    let mut e = clique(0, 3, 1.0);
    e.extend(clique(3, 3, 1.0));
    let g = graph(6, &e);
    let tree = EncodingTree::from_partition(6, &[vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
    let gains = GainTable::new(&tree, &tree.stats(&g).unwrap()).unwrap();
    let a = tree.children(tree.root())[0];
    assert_eq!(condition_value(1, 2, SegmentContext::Community(a), 1.0, &gains).unwrap(), 0.0);
}

// kernel density and entropy terms

#[test]
fn kde_matches_direct_kernel_sum_and_peaks_at_the_mean() {
    let mut r = rng(60);
    let sigma = [0.5, 2.0];
    let pts: Vec<Vec<f64>> = (0..400)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut r);
            let b: f64 = StandardNormal.sample(&mut r);
            vec![1.0 + sigma[0] * a, -2.0 + sigma[1] * b]
        })
        .collect();
    let bw = scott_bandwidth(&pts);
    let direct = |q: &[f64]| -> f64 {
        let norm: f64 = bw.iter().map(|h| 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt())).product();
        pts.iter()
            .map(|p| (-0.5 * ((p[0] - q[0]) / bw[0]).powi(2) - 0.5 * ((p[1] - q[1]) / bw[1]).powi(2)).exp())
            .sum::<f64>()
            * norm
            / pts.len() as f64
    };
    let mean = [
        pts.iter().map(|p| p[0]).sum::<f64>() / 400.0,
        pts.iter().map(|p| p[1]).sum::<f64>() / 400.0,
    ];
    let far = [mean[0] + 3.0 * sigma[0], mean[1] + 3.0 * sigma[1]];
    for q in [&mean[..], &far[..]] {
        let got = kde_log_density(&pts, &bw, q).exp();
        assert!((got - direct(q)).abs() <= 1e-9 * direct(q));
    }
    assert!(kde_log_density(&pts, &bw, &mean) > kde_log_density(&pts, &bw, &far));
}

#[test]
fn point_mass_pair_takes_all_mass() {
    let vertices = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0]];
    let pairs = vec![(vec![0.0, 0.0], vec![1.0, 0.0]); 8];
    let tm = TransitionModel::from_pairs(&pairs, &vertices, 8).unwrap();
    assert!((tm.p(0, 1) + tm.p(1, 0) - 1.0).abs() < 1e-12);
    assert!((tm.visitation.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(tm.visitation[2], 0.0);
}

fn uniform_model(n: usize) -> TransitionModel {
    let vertices: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
    let p = 1.0 / (n * (n - 1)) as f64;
    let joint = (0..n * n).map(|i| if i / n == i % n { 0.0 } else { p }).collect();
    TransitionModel::from_joint(vertices, joint, 0, vec![1.0, 1.0]).unwrap()
}

fn uniform_terms(n: usize) -> EntropyTerms {
    let tree = EncodingTree::from_partition(n, &[(0..n / 2).collect(), (n / 2..n).collect()]).unwrap();
    entropy_terms(&uniform_model(n), &tree).unwrap()
}

#[test]
fn uniform_visitation_over_sixteen_states_is_four_bits() {
    let t = uniform_terms(16);
    assert!((t.h_s - 4.0).abs() < 1e-12);
}

#[test]
fn single_community_has_zero_layer_entropy() {
    let tree = EncodingTree::from_partition(16, &[(0..16).collect()]).unwrap();
    let t = entropy_terms(&uniform_model(16), &tree).unwrap();
    assert_eq!(t.layer_entropies[0], 0.0);
    let small = EncodingTree::from_partition(4, &[vec![0, 1], vec![2, 3]]).unwrap();
    assert!(matches!(
        entropy_terms(&uniform_model(16), &small),
        Err(SihdError::VertexMismatch { .. })
    ));
}

#[test]
fn entropy_terms_sandwich_on_random_instances() {
    let mut r = rng(70);
    for _ in 0..50 {
        let n = 3 + r.random_range(0..10usize);
        let vertices: Vec<Vec<f64>> = (0..n).map(|_| vec![r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)]).collect();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..30)
            .map(|_| {
                let a = vertices[r.random_range(0..n)].clone();
                let b = vertices[r.random_range(0..n)].clone();
                (a, b)
            })
            .collect();
        let tm = TransitionModel::from_pairs(&pairs, &vertices, 30).unwrap();
        let (parents, vertex) = random_tree(n, &mut r);
        let tree = EncodingTree::from_parents(n, &parents, &vertex).unwrap();
        let t = entropy_terms(&tm, &tree).unwrap();
        let oracle = bound_check(&tm.graph, &tree).unwrap();
        assert!(oracle.holds(1e-9), "{oracle:?}");
        assert_eq!(t.lower_bound(), oracle.lower);
        assert_eq!(t.h_s, oracle.upper);
        // 𝒢'_s degree equals visitation
        for s in 0..n {
            assert!((tm.graph.degree(s) - tm.visitation[s]).abs() < 1e-12);
        }
    }
}

#[test]
fn surrogate_weights_favor_rare_states() {
    let w = surrogate_weights(&[0.7, 0.2, 0.1], &[vec![0, 0], vec![2, 2], vec![1]], 0.5);
    assert!(w[1] > w[2] && w[2] > w[0]);
    assert!((w.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
}

// full stacks

#[test]
fn training_is_seed_deterministic_and_checkpoints_round_trip() {
    let (data, art) = tiny_setup();
    let (a, log_a) = train_from_artifacts(&data, &art, &tiny_config(0.1), [7; 32]).unwrap();
    let (b, log_b) = train_from_artifacts(&data, &art, &tiny_config(0.1), [7; 32]).unwrap();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    let mut other = tiny_config(0.1);
    other.seed = 4;
    assert_ne!(train_from_artifacts(&data, &art, &other, [7; 32]).unwrap().0, a);

    let bytes = write_stack(&a);
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    assert_eq!(read_stack(&bytes).unwrap(), a);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_stack(&a, &path).unwrap();
    assert_eq!(load_stack(&path).unwrap(), a);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_stack(&bad), Err(SihdError::Checkpoint(_))));
    let mut newer = bytes.clone();
    newer[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(read_stack(&newer), Err(SihdError::Checkpoint(_))));
    assert!(read_stack(&bytes[..bytes.len() - 3]).is_err());
    let mut long = bytes;
    long.push(0);
    assert!(read_stack(&long).is_err());
}

#[test]
fn regularized_training_logs_entropy_refreshes() {
    let (data, art) = tiny_setup();
    let (_, log) = train_from_artifacts(&data, &art, &tiny_config(0.1), [0; 32]).unwrap();
    let l1 = &log.layers[0];
    assert_eq!(l1.refreshes.iter().map(|r| r.step).collect::<Vec<_>>(), vec![20, 40]);
    for rec in &l1.refreshes {
        assert!(rec.h_s.is_finite() && rec.h_s > 0.0);
        assert!(rec.lower <= rec.value + 1e-9 && rec.value <= rec.upper + 1e-9);
    }
    assert!(log.layers[1..].iter().all(|l| l.refreshes.is_empty()));
    let (_, plain) = train_from_artifacts(&data, &art, &tiny_config(0.0), [0; 32]).unwrap();
    assert!(plain.layers[0].refreshes.is_empty());
    assert_eq!(plain.layers[0].mse, plain.layers[0].loss);
}

#[test]
fn transition_estimates_need_a_trained_layer() {
    let (data, art) = tiny_setup();
    let (stack, _) = train_from_artifacts(&data, &art, &tiny_config(0.0), [0; 32]).unwrap();
    let opts = stack.sample_options();
    let mut fresh = stack.layer(1).clone();
    fresh.steps_trained = 0;
    let mut r = rng(80);
    assert!(matches!(
        estimate_transitions(&fresh, 2, &stack.schedule, opts, 4, &mut r, &art.vertices),
        Err(SihdError::Untrained)
    ));
    assert!(estimate_transitions(stack.layer(1), 2, &stack.schedule, opts, 1, &mut r, &art.vertices).is_err());
    let tm = estimate_transitions(stack.layer(1), 2, &stack.schedule, opts, 4, &mut r, &art.vertices).unwrap();
    assert!((tm.visitation.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(tm.joint.iter().all(|&p| p >= 0.0));
}

#[test]
fn pinned_entries_survive_generation() {
    let (data, art) = tiny_setup();
    let (stack, _) = train_from_artifacts(&data, &art, &tiny_config(0.0), [0; 32]).unwrap();
    let req = RawRequest {
        y: Some(0.4),
        pinned: vec![(0, vec![0.5, 0.5]), (5, vec![3.5, 2.5])],
    };
    let l2 = stack.layer(2);
    let out = l2.generate(&[req], &stack.schedule, stack.sample_options(), &mut rng(81)).unwrap();
    assert_eq!(out[0][0], vec![0.5, 0.5]);
    assert_eq!(out[0][5], vec![3.5, 2.5]);
}
