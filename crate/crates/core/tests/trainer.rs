mod common;

use autograd::Tensor;
use proptest::prelude::*;
use psp_core::checkpoint::Checkpoint;
use psp_core::setting::OptimizerKind;
use psp_core::trainer::{
    clip_global_norm, fit, history_header, task_names, teacher_forcing_prob, train_step, validation_loss, FitOptions,
    OptimizerState, TrainConfig, CHECKPOINT_FILE, HISTORY_FILE,
};
use psp_core::objective::TaskWeights;
use psp_core::ulstm::{Model, ModelParams};
use psp_core::CoreError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn one_tensor(values: Vec<f32>) -> ModelParams<f32> {
    ModelParams {
        names: vec!["w".into()],
        tensors: vec![Tensor::new(&[values.len()], values).unwrap()],
    }
}

/// Textbook Adam on plain `f64` vectors.
fn adam_oracle(theta: &mut [f64], grads: &[Vec<f64>], lr: f64, wd: f64, decoupled: bool) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        for i in 0..theta.len() {
            if decoupled {
                theta[i] -= lr * wd * theta[i];
            }
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            theta[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[test]
fn adam_and_adamw_match_hand_oracle() {
    let init = vec![0.5f32, -1.25, 2.0, 0.0];
    let grads: Vec<Vec<f64>> = vec![
        vec![0.1, -0.3, 2.0, 0.0],
        vec![-0.2, -0.1, 1.5, 1e-3],
        vec![0.05, 0.4, -0.7, 0.0],
    ];
    for (kind, decoupled) in [(OptimizerKind::Adam, false), (OptimizerKind::Adamw, true)] {
        let mut params = one_tensor(init.clone());
        let mut opt = OptimizerState::new(kind, 1e-2, 0.1, &params);
        for g in &grads {
            let gt = Tensor::new(&[4], g.iter().map(|&x| x as f32).collect()).unwrap();
            opt.step(&mut params, &[gt]).unwrap();
        }
        let mut expect: Vec<f64> = init.iter().map(|&x| f64::from(x)).collect();
        adam_oracle(&mut expect, &grads, 1e-2, 0.1, decoupled);
        for (a, e) in params.tensors[0].data().iter().zip(&expect) {
            assert!((f64::from(*a) - e).abs() < 1e-6, "{kind:?}: {a} vs {e}");
        }
    }
}

#[test]
fn non_finite_gradient_is_rejected() {
    let mut params = one_tensor(vec![1.0, 2.0]);
    let mut opt = OptimizerState::new(OptimizerKind::Adam, 1e-3, 0.0, &params);
    let g = Tensor::new(&[2], vec![1.0, f32::NAN]).unwrap();
    assert!(matches!(opt.step(&mut params, &[g]), Err(CoreError::NonFinite(_))));
    assert_eq!(params.tensors[0].data(), &[1.0, 2.0]);
}

proptest! {
    #[test]
    fn zero_gradient_leaves_adam_parameters_unchanged(values in prop::collection::vec(-5.0f32..5.0, 1..20), steps in 1usize..5) {
        let mut params = one_tensor(values.clone());
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 1e-3, 1e-4, &params);
        for _ in 0..steps {
            opt.step(&mut params, &[Tensor::zeros(&[values.len()])]).unwrap();
        }
        prop_assert_eq!(params.tensors[0].data(), values.as_slice());
    }

    #[test]
    fn clipping_bounds_the_global_norm(values in prop::collection::vec(-100.0f32..100.0, 1..30), max in 0.1f64..10.0) {
        let mut grads = vec![Tensor::new(&[values.len()], values.clone()).unwrap()];
        let before = clip_global_norm(&mut grads, max);
        let after = grads[0].norm_sq().sqrt();
        prop_assert!(after <= max * (1.0 + 1e-5) + 1e-9);
        if before <= max {
            prop_assert_eq!(grads[0].data(), values.as_slice());
        }
    }

    #[test]
    fn teacher_forcing_is_flat_then_decays_to_zero(epochs in 2usize..300) {
        let tf: Vec<f64> = (0..epochs).map(|e| teacher_forcing_prob(e, epochs, 0.8, 0.2)).collect();
        for (e, &p) in tf.iter().enumerate() {
            if e as f64 <= 0.2 * epochs as f64 {
                prop_assert_eq!(p, 0.8);
            }
            prop_assert!((0.0..=0.8).contains(&p));
        }
        prop_assert!(tf.windows(2).all(|w| w[1] <= w[0]));
        if (epochs - 1) as f64 > 0.2 * epochs as f64 {
            prop_assert_eq!(tf[epochs - 1], 0.0);
        }
    }
}

#[test]
fn step_breakdown_recomposes_total() {
    let setting = common::setting(1, 8);
    let ds = common::repair_dataset(40, 3, &setting);
    let model = Model::new(&setting, &ds.encoding, 3).unwrap();
    let cfg = TrainConfig::new(setting, 2, 16, 1e-3, 3);
    let batch: Vec<_> = ds.train.iter().take(16).collect();
    let weights = TaskWeights::new(task_names(&ds.encoding).len(), 1.5, 0.025);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = train_step(&model, &ds.encoding, &batch, &weights, &cfg, 0.8, &mut rng).unwrap();
    let bd = &out.breakdown;
    assert!(bd.l2_term > 0.0, "setting 1 puts the L2 penalty in the loss");
    assert!((bd.recomposed() - bd.total).abs() < 1e-4 * bd.total.abs().max(1.0));
    assert_eq!(out.grads.len(), model.params.len());
    assert_eq!(out.task_grad_norms.len(), bd.tasks.len());
    assert!(out.task_grad_norms.iter().all(|g| g.is_finite() && *g > 0.0));
}

#[test]
fn validation_loss_is_repeatable() {
    let setting = common::setting(2, 8);
    let ds = common::repair_dataset(40, 4, &setting);
    let model = Model::new(&setting, &ds.encoding, 4).unwrap();
    let cfg = TrainConfig::new(setting, 2, 16, 1e-3, 4);
    let a = validation_loss(&model, &ds.validation, &cfg, 0.1).unwrap();
    let b = validation_loss(&model, &ds.validation, &cfg, 0.1).unwrap();
    assert_eq!(a, b);
    let det = validation_loss(&model, &ds.validation, &cfg, 0.0).unwrap();
    assert!(det.is_finite() && det != a);
}

#[test]
fn training_reduces_loss_and_keeps_weights_normalized() {
    let setting = common::setting(2, 16);
    let ds = common::repair_dataset(80, 5, &setting);
    let cfg = TrainConfig::new(setting, 6, 32, 3e-3, 5);
    let r = fit(&ds.train, &ds.validation, &ds.encoding, &cfg, FitOptions::default()).unwrap();
    let h = &r.history;
    assert_eq!(h.len(), 6);
    assert!(h[5].train_total < h[0].train_total, "{} -> {}", h[0].train_total, h[5].train_total);
    let n = r.weights.weights.len() as f64;
    assert!((r.weights.weights.iter().sum::<f64>() - n).abs() < 1e-9);
    assert!(r.weights.weights.iter().all(|&w| w >= 1e-4));
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let setting = common::setting(2, 8);
    let ds = common::repair_dataset(40, 6, &setting);
    let mut cfg = TrainConfig::new(setting, 4, 16, 1e-3, 6);
    cfg.checkpoint_every = 1;
    let full = tempfile::tempdir().unwrap();
    let part = tempfile::tempdir().unwrap();
    fit(&ds.train, &ds.validation, &ds.encoding, &cfg, FitOptions {
        out_dir: Some(full.path()),
        ..Default::default()
    })
    .unwrap();
    fit(&ds.train, &ds.validation, &ds.encoding, &cfg, FitOptions {
        out_dir: Some(part.path()),
        stop_after: Some(2),
        ..Default::default()
    })
    .unwrap();
    let ck = Checkpoint::load(&part.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.manifest.training.as_ref().unwrap().epoch, 2);
    fit(&ds.train, &ds.validation, &ds.encoding, &cfg, FitOptions {
        out_dir: Some(part.path()),
        resume: Some(ck),
        ..Default::default()
    })
    .unwrap();
    let a = std::fs::read(full.path().join(CHECKPOINT_FILE)).unwrap();
    let b = std::fs::read(part.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(a, b);
    let ha = std::fs::read_to_string(full.path().join(HISTORY_FILE)).unwrap();
    let hb = std::fs::read_to_string(part.path().join(HISTORY_FILE)).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(ha.lines().next().unwrap(), history_header(&task_names(&ds.encoding)));
    assert_eq!(ha.lines().count(), 5);
}

#[test]
fn checkpoint_round_trips_and_rejects_other_encoding() {
    let setting = common::setting(2, 8);
    let ds = common::repair_dataset(40, 7, &setting);
    let cfg = TrainConfig::new(setting.clone(), 1, 16, 1e-3, 7);
    let r = fit(&ds.train, &ds.validation, &ds.encoding, &cfg, FitOptions::default()).unwrap();
    let bytes = r.checkpoint.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, r.checkpoint);
    assert_eq!(back.model(&ds.encoding).unwrap(), r.model);
    let other = common::repair_dataset(40, 8, &setting);
    assert!(matches!(back.model(&other.encoding), Err(CoreError::HashMismatch { .. })));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}
