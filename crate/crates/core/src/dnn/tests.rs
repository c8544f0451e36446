use super::*;
use crate::acoustic::{Gmm, GmmHmmSet};
use crate::features::{FeatureKind, Frontend};
use crate::jointlik::{read_tensor, vts_joint_tensor, write_tensor, GmmCombination, MismatchContext, TensorScale};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Input width 8: 3 log-mel values, the gain and a 2-speaker pair code.
fn spec8() -> DnnInputSpec {
    DnnInputSpec {
        n_mel: 3,
        context: 0,
        n_speakers: 2,
    }
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let z: f64 = v.iter().sum();
    v.into_iter().map(|x| x / z).collect()
}

fn simplex_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    let mut m = Array2::zeros((n, d));
    for mut row in m.outer_iter_mut() {
        row.assign(&Array1::from(random_simplex(rng, d)));
    }
    m
}

fn outer(a: &[f64], b: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

#[test]
fn zero_weights_give_one_half() {
    let mut net = JointPosteriorNet::random(spec8(), &[4], (2, 3), 1.0, 0).unwrap();
    for l in &mut net.layers {
        l.weights.fill(0.0);
        l.bias.fill(0.0);
    }
    let x = forward(&net, &[0.3; 8]).unwrap();
    assert_eq!(x.dim(), (2, 3));
    assert!(x.iter().all(|v| *v == 0.5));
}

#[test]
fn forward_matches_hand_rolled_arithmetic() {
    let spec = DnnInputSpec {
        n_mel: 1,
        context: 0,
        n_speakers: 1,
    };
    assert_eq!(spec.dim(), 3);
    let net = JointPosteriorNet::random(spec, &[4], (2, 3), 0.8, 11).unwrap();
    let input = [0.2, -1.3, 1.0];
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut h = [0.0; 4];
    for (k, hk) in h.iter_mut().enumerate() {
        let mut z = net.layers[0].bias[k];
        for (i, xi) in input.iter().enumerate() {
            z += xi * net.layers[0].weights[[i, k]];
        }
        *hk = sig(z);
    }
    let x = forward(&net, &input).unwrap();
    for r in 0..2 {
        for c in 0..3 {
            let o = r * 3 + c;
            let mut z = net.layers[1].bias[o];
            for (k, hk) in h.iter().enumerate() {
                z += hk * net.layers[1].weights[[k, o]];
            }
            assert!((x[[r, c]] - sig(z)).abs() < 1e-12);
        }
    }
    assert_eq!(forward(&net, &input).unwrap(), x);
    assert!(matches!(forward(&net, &[0.0; 2]), Err(Error::Dimension { .. })));
}

#[test]
fn stacking_one_rbm_is_its_hidden_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = random_rows(&mut rng, 50, 8);
    let rbm = rbm_train_pcd(&data, VisibleKind::Gaussian, 5, &RbmHyper { epochs: 2, ..RbmHyper::default() }).unwrap();
    let stack = stack_dbn(&[rbm.clone()]).unwrap();
    let net = JointPosteriorNet::from_stack(stack, (2, 2), spec8(), Standardization::identity(4), 0).unwrap();
    let hidden = net.layers[0].activate(&data);
    assert_eq!(hidden, rbm.hidden_probs(&data));
    let other = rbm_train_pcd(&data, VisibleKind::Gaussian, 5, &RbmHyper::default()).unwrap();
    assert!(stack_dbn(&[rbm, other]).is_err());
}

#[test]
fn presets() {
    assert_eq!(FULL_HIDDEN, [2025, 2500, 3600, 5625]);
    assert_eq!(FULL_STATES_PER_CHAIN * FULL_STATES_PER_CHAIN, 1600);
    assert_eq!(DESK_HIDDEN, [64, 64, 256]);
    // 17-frame window of 50 log-mel values
    let spec = DnnInputSpec {
        n_mel: 50,
        context: 8,
        n_speakers: 2,
    };
    assert_eq!(spec.window_dim(), 850);
}

#[test]
fn marginalize_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_simplex(&mut rng, 3);
    let b = random_simplex(&mut rng, 4);
    let (ma, mb) = marginalize(&outer(&a, &b));
    for (x, y) in ma.iter().zip(&a) {
        assert!((x - y).abs() < 1e-15);
    }
    for (x, y) in mb.iter().zip(&b) {
        assert!((x - y).abs() < 1e-15);
    }
    let (za, zb) = marginalize(&Array2::zeros((2, 5)));
    assert!(za.iter().chain(zb.iter()).all(|v| *v == 0.0));
}

#[test]
fn feasible_point_is_stationary() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let a = random_simplex(&mut rng, 3);
        let b = random_simplex(&mut rng, 4);
        let x = outer(&a, &b);
        assert!(finetune_loss(&x, &a, &b).unwrap() <= 1e-28);
        assert!(finetune_output_grad(&x, &a, &b).unwrap().iter().all(|g| g.abs() <= 1e-14));
    }
    assert!(finetune_loss(&Array2::zeros((3, 4)), &[1.0; 2], &[0.25; 4]).is_err());
}

#[test]
fn output_gradient_has_rank_at_most_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_rows(&mut rng, 5, 6).mapv(f64::abs);
    let a = random_simplex(&mut rng, 5);
    let b = random_simplex(&mut rng, 6);
    let g = finetune_output_grad(&x, &a, &b).unwrap();
    let m = nalgebra::DMatrix::from_fn(5, 6, |i, j| g[[i, j]]);
    let sv = m.singular_values();
    let top = sv.max();
    let significant = sv.iter().filter(|s| **s > 1e-12 * top).count();
    assert!(significant <= 2, "{sv:?}");
}

#[test]
fn output_gradient_matches_differences_of_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_rows(&mut rng, 3, 4).mapv(f64::abs);
    let a = random_simplex(&mut rng, 3);
    let b = random_simplex(&mut rng, 4);
    let g = finetune_output_grad(&x, &a, &b).unwrap();
    let h = 1e-5;
    for i in 0..3 {
        for j in 0..4 {
            let mut p = x.clone();
            p[[i, j]] += h;
            let mut m = x.clone();
            m[[i, j]] -= h;
            // the loss is quadratic in X, so the central difference is exact up to rounding
            let fd = (finetune_loss(&p, &a, &b).unwrap() - finetune_loss(&m, &a, &b).unwrap()) / (2.0 * h);
            assert!((fd - g[[i, j]]).abs() < 1e-8, "{fd} vs {}", g[[i, j]]);
        }
    }
}

#[test]
fn transposed_outputs_with_swapped_labels_tie() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_rows(&mut rng, 4, 4).mapv(f64::abs);
    let a = random_simplex(&mut rng, 4);
    let b = random_simplex(&mut rng, 4);
    let xt = x.t().to_owned();
    assert_eq!(finetune_loss(&x, &a, &b).unwrap(), finetune_loss(&xt, &b, &a).unwrap());
}

#[test]
fn network_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = JointPosteriorNet::random(spec8(), &[10, 12], (3, 4), 0.7, 8).unwrap();
    let inputs = random_rows(&mut rng, 5, 8);
    let d = simplex_rows(&mut rng, 5, 12);
    let init = gradient_check(&net, &inputs, |out| init_batch_objective(out, &d), 1e-4).unwrap();
    assert!(init < 1e-6, "init objective {init}");
    let dm_a = simplex_rows(&mut rng, 5, 3);
    let dm_b = simplex_rows(&mut rng, 5, 4);
    let fine = gradient_check(&net, &inputs, |out| finetune_batch_objective(out, (3, 4), &dm_a, &dm_b), 1e-4).unwrap();
    assert!(fine < 1e-6, "finetune objective {fine}");
    // a flipped output gradient must be caught
    let flipped = gradient_check(
        &net,
        &inputs,
        |out| {
            finetune_batch_objective_with(out, (3, 4), &dm_a, &dm_b, |x, a, b| {
                finetune_output_grad(x, a, b).map(|g| -g)
            })
        },
        1e-4,
    )
    .unwrap();
    assert!(flipped > 1.0);
}

fn labelled_set(net: &JointPosteriorNet, rng: &mut ChaCha8Rng, n: usize) -> TrainSet {
    let (sa, sb) = net.joint_shape;
    TrainSet {
        inputs: random_rows(rng, n, net.input_spec.dim()),
        init_labels: Some(simplex_rows(rng, n, sa * sb)),
        marginal_labels: Some((simplex_rows(rng, n, sa), simplex_rows(rng, n, sb))),
    }
}

#[test]
fn labels_at_the_outputs_leave_the_net_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = JointPosteriorNet::random(spec8(), &[6], (2, 2), 0.5, 9).unwrap();
    let mut set = labelled_set(&net, &mut rng, 40);
    let out = net.forward_batch(&set.inputs).unwrap();
    // the init loss is stationary wherever D = X, normalized or not
    let (_, grads) = backprop(&net, &set.inputs, |o| init_batch_objective(o, &out)).unwrap();
    assert!(grads.iter().all(|g| g.weights.iter().chain(g.bias.iter()).all(|v| *v == 0.0)));
    set.init_labels = None;
    let hyper = SgdHyper { rate: 0.0, epochs: 3, ..SgdHyper::finetune_default() };
    let mut initd = net.clone();
    initd.stage = Stage::Init;
    let (same, log) = train_finetune_phase(initd.clone(), &set, None, &hyper).unwrap();
    assert_eq!(same.layers, initd.layers);
    assert_eq!(log.len(), 4);
}

#[test]
fn init_phase_descends() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let net = JointPosteriorNet::random(spec8(), &[6, 6], (2, 3), 0.5, 10).unwrap();
    let set = labelled_set(&net, &mut rng, 64);
    let mut losses = Vec::new();
    let mut cur = net;
    for step in 0..6 {
        let hyper = SgdHyper {
            rate: 0.05,
            momentum: 0.0,
            batch: 64,
            epochs: 1,
            patience: None,
            seed: step,
        };
        let (next, log) = train_init_phase(cur, &set, None, &hyper).unwrap();
        if step == 0 {
            losses.push(log[0].loss);
        }
        losses.push(log[1].loss);
        cur = next;
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert_eq!(cur.stage, Stage::Init);
}

#[test]
fn phases_are_ordered() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = JointPosteriorNet::random(spec8(), &[4], (2, 2), 0.5, 11).unwrap();
    let set = labelled_set(&net, &mut rng, 10);
    let err = train_finetune_phase(net.clone(), &set, None, &SgdHyper::finetune_default()).unwrap_err();
    assert!(matches!(err, Error::PhaseOrder { found: "generative", required: "init" }));
    let (initd, _) = train_init_phase(net, &set, None, &SgdHyper { epochs: 1, ..SgdHyper::init_default() }).unwrap();
    let (tuned, _) = train_finetune_phase(initd, &set, None, &SgdHyper { epochs: 1, ..SgdHyper::finetune_default() }).unwrap();
    assert_eq!(tuned.stage, Stage::Finetune);
    assert!(matches!(
        train_init_phase(tuned, &set, None, &SgdHyper::init_default()),
        Err(Error::PhaseOrder { .. })
    ));
}

#[test]
fn bad_labels_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let net = JointPosteriorNet::random(spec8(), &[4], (2, 2), 0.5, 12).unwrap();
    let mut set = labelled_set(&net, &mut rng, 10);
    set.init_labels.as_mut().unwrap()[[3, 0]] += 0.5;
    assert!(train_init_phase(net, &set, None, &SgdHyper::init_default()).is_err());
}

/// Inputs from a known factorial model: chain a moves the first two input
/// dimensions, chain b the third, with Gaussian noise.
fn factorial_data(seed: u64, n: usize) -> (TrainSet, Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sa, sb) = (2, 3);
    let mut inputs = Array2::zeros((n, 8));
    let mut dm_a = Array2::zeros((n, sa));
    let mut dm_b = Array2::zeros((n, sb));
    for k in 0..n {
        let i = rng.gen_range(0..sa);
        let j = rng.gen_range(0..sb);
        inputs[[k, 0]] = if i == 0 { 1.5 } else { -1.5 } + 0.4 * rng.gen_range(-1.0..1.0);
        inputs[[k, 1]] = rng.gen_range(-1.0..1.0);
        inputs[[k, 2]] = (j as f64 - 1.0) * 1.5 + 0.4 * rng.gen_range(-1.0..1.0);
        inputs[[k, 4]] = 1.0;
        dm_a[[k, i]] = 1.0;
        dm_b[[k, j]] = 1.0;
    }
    let set = TrainSet {
        inputs,
        init_labels: None,
        marginal_labels: Some((dm_a.clone(), dm_b.clone())),
    };
    (set, dm_a, dm_b)
}

fn mean_tv(net: &JointPosteriorNet, set: &TrainSet, dm_a: &Array2<f64>, dm_b: &Array2<f64>) -> f64 {
    let out = net.forward_batch(&set.inputs).unwrap();
    let mut tv = 0.0;
    for (k, row) in out.outer_iter().enumerate() {
        let x = row.to_owned().into_shape_with_order(net.joint_shape).unwrap();
        let (ma, mb) = marginalize(&x);
        tv += 0.5 * ma.iter().zip(dm_a.row(k)).map(|(p, q)| (p - q).abs()).sum::<f64>();
        tv += 0.5 * mb.iter().zip(dm_b.row(k)).map(|(p, q)| (p - q).abs()).sum::<f64>();
    }
    tv / (2 * out.nrows()) as f64
}

#[test]
fn finetuning_improves_held_out_marginals() {
    let mut wins = 0;
    for seed in 0..10 {
        let (train, _, _) = factorial_data(100 + seed, 400);
        let (held, ha, hb) = factorial_data(200 + seed, 200);
        let mut net = JointPosteriorNet::random(spec8(), &[8], (2, 3), 0.3, seed).unwrap();
        net.stage = Stage::Init;
        let hyper = SgdHyper {
            rate: 0.1,
            epochs: 5,
            batch: 32,
            seed,
            ..SgdHyper::finetune_default()
        };
        let before = mean_tv(&net, &held, &ha, &hb);
        let (tuned, log) = train_finetune_phase(net, &train, Some(&held), &hyper).unwrap();
        let after = mean_tv(&tuned, &held, &ha, &hb);
        if log[5].held_out.unwrap() < log[0].held_out.unwrap() && after < before {
            wins += 1;
        }
        let out = tuned.forward_batch(&held.inputs).unwrap();
        assert!(out.iter().all(|v| *v > 0.0 && *v < 1.0));
    }
    assert!(wins >= 6, "{wins} of 10");
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let (train, _, _) = factorial_data(1, 200);
    let (held, _, _) = factorial_data(2, 100);
    let mut net = JointPosteriorNet::random(spec8(), &[8], (2, 3), 0.3, 1).unwrap();
    net.stage = Stage::Init;
    let hyper = SgdHyper {
        rate: 5.0,
        epochs: 30,
        patience: Some(2),
        ..SgdHyper::finetune_default()
    };
    let (tuned, log) = train_finetune_phase(net, &train, Some(&held), &hyper).unwrap();
    let best = log.iter().map(|e| e.held_out.unwrap()).fold(f64::INFINITY, f64::min);
    let out = tuned.forward_batch(&held.inputs).unwrap();
    let dm = held.marginal_labels.as_ref().unwrap();
    let j = finetune_batch_objective(&out, (2, 3), &dm.0, &dm.1).unwrap().0 / held.len() as f64;
    assert!((j - best).abs() < 1e-12);
}

fn tiny_models() -> (Frontend, GmmHmmSet, GmmHmmSet) {
    let fe = Frontend::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut make = |n: usize| GmmHmmSet {
        phones: (0..n).map(|i| format!("p{i}")).collect(),
        gmms: (0..n)
            .map(|_| Gmm::single((0..13).map(|_| rng.gen_range(-2.0..4.0)).collect(), vec![0.5; 13]))
            .collect(),
        self_loop: vec![0.7; n],
        priors: vec![1.0 / n as f64; n],
        n_static: 13,
    };
    let a = make(2);
    let b = make(3);
    (fe, a, b)
}

#[test]
fn vts_labels_are_tensor_slices() {
    let (fe, a, b) = tiny_models();
    let ctx = MismatchContext::new(&fe);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mixed = FeatureSequence::new(random_rows(&mut rng, 6, 13) * 3.0, FeatureKind::MfccStatic, 0.01);
    let d = init_labels_vts(&mixed, &a, &b, &ctx, GmmCombination::PairWise).unwrap();
    let t = vts_joint_tensor(&mixed, &a, &b, &ctx, GmmCombination::PairWise, TensorScale::Posterior).unwrap();
    assert_eq!(d.dim(), (6, 6));
    for f in 0..6 {
        for (x, y) in d.row(f).iter().zip(t.frame(f)) {
            assert_eq!(*x, *y as f64);
        }
        let x = d.row(f).to_owned().into_shape_with_order((2, 3)).unwrap();
        let (ma, mb) = marginalize(&x);
        assert!((ma.sum() - 1.0).abs() < 1e-6 && (mb.sum() - 1.0).abs() < 1e-6);
        assert!(ma.iter().chain(mb.iter()).all(|v| *v >= 0.0));
    }
    let one = GmmHmmSet {
        phones: vec!["p0".into()],
        gmms: vec![a.gmms[0].clone()],
        self_loop: vec![0.5],
        priors: vec![1.0],
        n_static: 13,
    };
    let d1 = init_labels_vts(&mixed, &one, &one, &ctx, GmmCombination::Collapse).unwrap();
    assert!(d1.iter().all(|v| *v == 1.0));
}

fn log_mel_sequence(seed: u64, t: usize, m: usize) -> FeatureSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureSequence::new(random_rows(&mut rng, t, m) * 4.0, FeatureKind::LogMel, 0.01)
}

#[test]
fn inferred_tensor_is_normalized_deterministic_and_round_trips() {
    let spec = DnnInputSpec {
        n_mel: 4,
        context: 1,
        n_speakers: 3,
    };
    let net = JointPosteriorNet::random(spec, &[7], (3, 2), 0.5, 15).unwrap();
    let fs = log_mel_sequence(16, 9, 4);
    let t = infer_joint_tensor(&net, &fs, (1, 2), -3.0).unwrap();
    assert_eq!(t.shape(), (9, 3, 2));
    assert_eq!(t.scale(), TensorScale::Posterior);
    for f in 0..9 {
        let s: f64 = t.frame(f).iter().map(|v| *v as f64).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    assert_eq!(infer_joint_tensor(&net, &fs, (1, 2), -3.0).unwrap(), t);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.bin");
    write_tensor(&p, &t).unwrap();
    let back = read_tensor(&p).unwrap();
    assert_eq!(back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert!(matches!(infer_joint_tensor(&net, &fs, (3, 0), 0.0), Err(Error::SpeakerCode(3, 0))));
}

#[test]
fn net_and_log_files_round_trip() {
    let spec = DnnInputSpec {
        n_mel: 4,
        context: 1,
        n_speakers: 2,
    };
    let mut net = JointPosteriorNet::random(spec, &[5, 3], (2, 2), 0.5, 17).unwrap();
    net.stage = Stage::Init;
    net.standardization.mean[0] = 1.25;
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("net.bin");
    write_net(&p, &net).unwrap();
    assert_eq!(read_net(&p).unwrap(), net);
    std::fs::write(&p, b"FHMM-DNN v2\n").unwrap();
    assert!(matches!(read_net(&p), Err(Error::Format(_))));

    let log = vec![
        EpochLog { phase: Stage::Init, epoch: 0, loss: 0.5, held_out: None },
        EpochLog { phase: Stage::Finetune, epoch: 3, loss: 0.125, held_out: Some(0.25) },
    ];
    let lp = dir.path().join("log.csv");
    write_training_log(&lp, &log).unwrap();
    assert_eq!(read_training_log(&lp).unwrap(), log);
    let text = std::fs::read_to_string(&lp).unwrap();
    assert!(text.starts_with("phase,epoch,loss,held_out\n"));
}

proptest! {
    #[test]
    fn marginals_share_the_grand_sum(vals in proptest::collection::vec(0.0f64..1.0, 12)) {
        let x = Array2::from_shape_vec((3, 4), vals).unwrap();
        let (ma, mb) = marginalize(&x);
        let total = x.sum();
        prop_assert!((ma.sum() - total).abs() < 1e-12);
        prop_assert!((mb.sum() - total).abs() < 1e-12);
        let (ta, _) = marginalize(&x.t().to_owned());
        prop_assert_eq!(mb, ta);
    }

    #[test]
    fn outputs_stay_in_the_open_unit_interval(seed in 0u64..1000, scale in 0.1f64..3.0) {
        let net = JointPosteriorNet::random(spec8(), &[5], (2, 3), scale, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = net.forward_batch(&random_rows(&mut rng, 10, 8)).unwrap();
        prop_assert!(out.iter().all(|v| *v > 0.0 && *v < 1.0));
    }
}
