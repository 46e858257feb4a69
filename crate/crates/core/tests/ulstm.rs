mod common;

use autograd::{grad_check, Graph, Tensor};
use psp_core::features::PrefixSuffixPair;
use psp_core::trainer::batch_task_losses;
use psp_core::ulstm::{
    decoder_step, encode, sample_masks, Architecture, EncoderInput, Model, RowRngs, StackMasks, StepInput,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn whole_model_gradient_matches_finite_differences() {
    let setting = common::setting(1, 3);
    let ds = common::repair_dataset(20, 1, &setting);
    let model = Model::new(&setting, &ds.encoding, 1).unwrap();
    let arch = model.arch.clone();
    // Prefixes of different lengths so padded positions are exercised.
    let a = ds.train.iter().find(|p| p.k == 1).unwrap();
    let b = ds.train.iter().find(|p| p.k == 3).unwrap();
    let batch: Vec<&PrefixSuffixPair> = vec![a, b];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let enc_masks: StackMasks<f64> = sample_masks(&mut RowRngs::Shared(&mut rng), 2, arch.layers, arch.hidden, 0.3, false);
    let dec_masks: StackMasks<f64> = sample_masks(&mut RowRngs::Shared(&mut rng), 2, arch.layers, arch.hidden, 0.3, true);
    let width = arch.head_layout().width;
    let coef: Vec<f64> = (0..2 * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    let params = model.params.cast::<f64>().tensors;
    let report = grad_check(
        |g, pv| {
            let input = EncoderInput::<f64>::from_pairs(&batch);
            let state = encode(g, &arch, pv, &input, &enc_masks).unwrap();
            let start = StepInput::from_events(&[&a.decoder_start, &b.decoder_start]);
            let step = decoder_step(g, &arch, pv, &start, &state, &dec_masks).unwrap();
            let w = g.constant(Tensor::matrix(2, width, coef.clone())?);
            let y = g.mul(step.out, w)?;
            Ok(g.sum(y))
        },
        &params,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "worst relative error {}", report.worst());
}

fn final_hidden(model: &Model, input: &EncoderInput<f32>) -> Vec<Vec<f32>> {
    let mut g = Graph::<f32>::new();
    let pv = model.params.constants(&mut g);
    let state = encode(&mut g, &model.arch, &pv, input, &StackMasks::none(model.arch.layers)).unwrap();
    state.iter().map(|&(h, _)| g.value(h).data().to_vec()).collect()
}

#[test]
fn extra_left_padding_does_not_change_the_state() {
    let setting = common::setting(2, 8);
    let ds = common::repair_dataset(30, 2, &setting);
    let model = Model::new(&setting, &ds.encoding, 2).unwrap();
    let pair = ds.test.iter().find(|p| p.k == 2).unwrap();
    let input = EncoderInput::<f32>::from_pairs(&[pair]);
    let mut padded = input.clone();
    for _ in 0..4 {
        padded.steps.insert(0, input.steps[0].clone());
        padded.valid.insert(0, vec![false]);
    }
    assert_eq!(final_hidden(&model, &input), final_hidden(&model, &padded));
}

#[test]
fn batch_rows_do_not_interact() {
    let setting = common::setting(2, 8);
    let ds = common::repair_dataset(30, 3, &setting);
    let model = Model::new(&setting, &ds.encoding, 3).unwrap();
    let pairs: Vec<&PrefixSuffixPair> = ds.test.iter().take(6).collect();
    let together = final_hidden(&model, &EncoderInput::from_pairs(&pairs));
    let h = model.arch.hidden;
    for (r, p) in pairs.iter().enumerate() {
        let alone = final_hidden(&model, &EncoderInput::from_pairs(&[*p]));
        for (l, layer) in alone.iter().enumerate() {
            for (x, y) in layer.iter().zip(&together[l][r * h..(r + 1) * h]) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn zero_dropout_draws_nothing_and_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let before = rng.clone();
    let m: StackMasks<f32> = sample_masks(&mut RowRngs::Shared(&mut rng), 4, 2, 8, 0.0, true);
    assert_eq!(m, StackMasks::none(2));
    assert_eq!(rng, before);

    let setting = common::setting(2, 8);
    let ds = common::repair_dataset(30, 4, &setting);
    let model = Model::new(&setting, &ds.encoding, 4).unwrap();
    let batch: Vec<&PrefixSuffixPair> = ds.train.iter().take(8).collect();
    let run = || batch_task_losses::<f32, _>(&model, &batch, 0.0, 0.5, 3, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

#[test]
fn parameters_follow_the_architecture() {
    let setting = common::setting(3, 8);
    let ds = common::repair_dataset(30, 5, &setting);
    let model = Model::new(&setting, &ds.encoding, 5).unwrap();
    let arch = Architecture::new(&setting, &ds.encoding).unwrap();
    assert_eq!(model.arch, arch);
    let specs = arch.param_specs(Some(&ds.encoding));
    assert_eq!(specs.len(), model.params.len());
    for ((name, shape), (n, t)) in specs.iter().zip(model.params.names.iter().zip(&model.params.tensors)) {
        assert_eq!(name, n);
        assert_eq!(shape.as_slice(), t.shape());
    }
    assert_eq!(arch.layers, 4);
    assert_eq!(model.params.hash(), Model::new(&setting, &ds.encoding, 5).unwrap().params.hash());
    assert_ne!(model.params.hash(), Model::new(&setting, &ds.encoding, 6).unwrap().params.hash());
}

#[test]
fn selected_mask_rows_keep_their_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m: StackMasks<f32> = sample_masks(&mut RowRngs::Shared(&mut rng), 3, 2, 4, 0.5, true);
    let sub = m.select_rows(&[2, 0]);
    let full = m.recurrent[0].as_ref().unwrap();
    let part = sub.recurrent[0].as_ref().unwrap();
    assert_eq!(&part.data()[..4], &full.data()[8..12]);
    assert_eq!(&part.data()[4..], &full.data()[..4]);
}
