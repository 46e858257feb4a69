mod common;

use proptest::prelude::*;
use psp_core::evalkit::stats::{chi_square_gof, ks_two_sample};
use psp_core::features::Dataset;
use psp_core::mcsampler::{
    aggregate, masks_shared, mc_suffix_sampling, most_likely_suffix, sample_categorical, sample_trials, trial_rng,
    write_sample_dump, DecoderDropout, DecoderMasks, SampleConfig, SampleSet, SampledEvent, SampledSuffix, StopReason,
};
use psp_core::ulstm::{Model, LOGVAR_CLAMP};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(setting_id: u8, seed: u64) -> (Dataset, Model) {
    let setting = common::setting(setting_id, 16);
    let ds = common::repair_dataset(30, seed, &setting);
    let model = Model::new(&setting, &ds.encoding, seed).unwrap();
    (ds, model)
}

fn activities(s: &SampledSuffix) -> Vec<usize> {
    s.events.iter().map(|e| e.cat[0]).collect()
}

#[test]
fn degenerate_sampling_matches_greedy_decode() {
    let (ds, model) = common::degenerate_rig(2, 16, 100, 1);
    let cfg = SampleConfig {
        t: 100,
        p: 0.0,
        ..Default::default()
    };
    for pair in ds.test.iter().take(20) {
        let ml = most_likely_suffix(&model, &ds.encoding, pair, cfg.max_len(&ds.encoding)).unwrap();
        let set = mc_suffix_sampling(&model, &ds.encoding, pair, &cfg, 9).unwrap();
        assert_eq!(set.suffixes.len(), 100);
        for s in &set.suffixes {
            assert_eq!(activities(s), activities(&ml));
            assert_eq!(s.stop, ml.stop);
            for (a, b) in s.events.iter().zip(&ml.events) {
                for (x, y) in a.con_scaled.iter().zip(&b.con_scaled) {
                    // Residual noise has standard deviation exp(-5) in scaled units.
                    assert!((x - y).abs() < 0.05, "{x} vs {y}");
                }
            }
        }
    }
}

#[test]
fn dominant_eos_stops_every_trial_after_one_event() {
    let (ds, model) = fixture(2, 2);
    let mut model = model.degenerate(1.0, -LOGVAR_CLAMP as f32);
    let layout = model.arch.head_layout();
    let eos_col = layout.logits(0).start + ds.encoding.eos_index();
    let hb = model.arch.head_b();
    model.params.tensors[hb].data_mut()[eos_col] = 1e4;
    let cfg = SampleConfig {
        t: 50,
        ..Default::default()
    };
    let set = mc_suffix_sampling(&model, &ds.encoding, &ds.test[0], &cfg, 3).unwrap();
    assert!(set.suffixes.iter().all(|s| s.events.len() == 1 && s.stop == StopReason::Eos));
    let summary = aggregate(&set, &ds.encoding, ds.test[0].prefix_case_elapsed).unwrap();
    assert_eq!(summary.mean_length, 0.0);
}

#[test]
fn zero_sigma_class_draws_follow_softmax() {
    let logits = [0.5, -1.0, 2.0, 0.0, 1.2, -0.3];
    let sigma = [0.0; 6];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut counts = [0usize; 6];
    for _ in 0..100_000 {
        counts[sample_categorical(&mut rng, &logits, &sigma)] += 1;
    }
    let test = chi_square_gof(&counts, &probs);
    assert!(test.p_value > 0.01, "chi2 {} p {}", test.statistic, test.p_value);
}

#[test]
fn trial_ranges_compose_exactly() {
    let (ds, model) = fixture(2, 3);
    let cfg = SampleConfig {
        t: 12,
        ..Default::default()
    };
    let pair = &ds.test[1];
    let whole = sample_trials(&model, &ds.encoding, pair, &cfg, 5, 0..12).unwrap();
    let a = sample_trials(&model, &ds.encoding, pair, &cfg, 5, 0..5).unwrap();
    let b = sample_trials(&model, &ds.encoding, pair, &cfg, 5, 5..12).unwrap();
    let joined: Vec<SampledSuffix> = a.suffixes.into_iter().chain(b.suffixes).collect();
    assert_eq!(joined, whole.suffixes);
}

#[test]
fn split_streams_give_same_remaining_time_distribution() {
    let (ds, model) = fixture(2, 4);
    let cfg = SampleConfig {
        t: 1000,
        m: Some(6),
        ..Default::default()
    };
    let pair = &ds.test[0];
    let first = sample_trials(&model, &ds.encoding, pair, &cfg, 8, 0..500).unwrap();
    let second = sample_trials(&model, &ds.encoding, pair, &cfg, 8, 500..1000).unwrap();
    let ce = pair.prefix_case_elapsed;
    let a = aggregate(&first, &ds.encoding, ce).unwrap().rt_sums();
    let b = aggregate(&second, &ds.encoding, ce).unwrap().rt_sums();
    let ks = ks_two_sample(&a, &b);
    assert!(ks.p_value > 0.01, "D = {} p = {}", ks.statistic, ks.p_value);
}

#[test]
fn sampling_does_not_touch_parameters_and_greedy_is_repeatable() {
    let (ds, model) = fixture(1, 5);
    let before = model.params.hash();
    let cfg = SampleConfig {
        t: 20,
        ..Default::default()
    };
    mc_suffix_sampling(&model, &ds.encoding, &ds.test[0], &cfg, 1).unwrap();
    let m = cfg.max_len(&ds.encoding);
    let a = most_likely_suffix(&model, &ds.encoding, &ds.test[0], m).unwrap();
    let b = most_likely_suffix(&model, &ds.encoding, &ds.test[0], m).unwrap();
    assert_eq!(a, b);
    assert_eq!(model.params.hash(), before);
}

#[test]
fn log_normal_times_decode_non_negative() {
    let (ds, model) = fixture(3, 6);
    let cfg = SampleConfig {
        t: 50,
        ..Default::default()
    };
    let (ce, ee) = ds.encoding.decoder_time_slots();
    for pair in ds.test.iter().take(3) {
        let set = mc_suffix_sampling(&model, &ds.encoding, pair, &cfg, 2).unwrap();
        for e in set.suffixes.iter().flat_map(|s| &s.events) {
            assert!(e.con_decoded[ce] >= 0.0 && e.con_decoded[ee] >= 0.0);
            assert!(e.con_decoded.iter().all(|x| x.is_finite()));
        }
    }
}

#[test]
fn variational_decoder_masks_persist_and_naive_masks_change() {
    let mut rngs: Vec<ChaCha8Rng> = (0..4).map(|j| trial_rng(1, j)).collect();
    let active = [0, 1, 2, 3];
    let var = DecoderMasks::new(DecoderDropout::Variational, &mut rngs, 2, 32, 0.1);
    let a = var.for_step(&mut rngs, &active);
    let b = var.for_step(&mut rngs, &active);
    assert!(masks_shared(&a, &b));
    let naive = DecoderMasks::new(DecoderDropout::Naive, &mut rngs, 2, 32, 0.1);
    let c = naive.for_step(&mut rngs, &active);
    let d = naive.for_step(&mut rngs, &active);
    assert_ne!(c, d);
    let off = DecoderMasks::new(DecoderDropout::Naive, &mut rngs, 2, 32, 0.0);
    let e = off.for_step(&mut rngs, &active);
    assert!(e.head.is_none() && e.recurrent.iter().all(Option::is_none));
}

fn fake_event(ds: &Dataset, activity: usize, event_elapsed: f64, case_elapsed: f64) -> SampledEvent {
    let (ce, ee) = ds.encoding.decoder_time_slots();
    let n = ds.encoding.routing.decoder_continuous.len();
    let mut con = vec![0.0; n];
    con[ce] = case_elapsed;
    con[ee] = event_elapsed;
    SampledEvent {
        cat: vec![activity; ds.encoding.routing.decoder_categorical.len()],
        con_scaled: vec![0.0; n],
        con_decoded: con,
    }
}

#[test]
fn aggregate_means_follow_examples() {
    let (ds, _) = fixture(2, 7);
    let eos = ds.encoding.eos_index();
    let day = 86_400.0;
    let suffix = |n: usize, step: f64| SampledSuffix {
        events: (0..n)
            .map(|i| fake_event(&ds, 0, step, step * (i + 1) as f64))
            .chain(std::iter::once(fake_event(&ds, eos, 0.0, 0.0)))
            .collect(),
        stop: StopReason::Eos,
    };
    let set = SampleSet {
        prefix_id: "x".into(),
        suffixes: vec![suffix(1, 2.0 * day), suffix(2, 2.0 * day), suffix(3, 2.0 * day)],
    };
    let s = aggregate(&set, &ds.encoding, 0.0).unwrap();
    assert_eq!(s.mean_length, 2.0);
    assert_eq!(s.mean_rt_sum, 4.0 * day);
    assert_eq!(s.mean_rt_last, 4.0 * day);
    let two = SampleSet {
        prefix_id: "y".into(),
        suffixes: vec![suffix(1, 2.0 * day), suffix(2, 2.0 * day)],
    };
    assert_eq!(aggregate(&two, &ds.encoding, 0.0).unwrap().mean_rt_sum, 3.0 * day);
    let same = SampleSet {
        prefix_id: "z".into(),
        suffixes: vec![suffix(2, day); 4],
    };
    let s = aggregate(&same, &ds.encoding, 0.0).unwrap();
    assert_eq!((s.mean_length, s.mean_rt_sum, s.mean_rt_last), (2.0, 2.0 * day, 2.0 * day));
    let mut csv = Vec::new();
    write_sample_dump(&mut csv, &ds.encoding, &[set]).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("prefix_id,trial,step,activity,event_elapsed_s,case_elapsed_s,stop_reason\n"));
    assert_eq!(text.lines().count(), 1 + 2 + 3 + 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn every_suffix_terminates_within_bounds(seed in 0u64..1000, scale in 0.1f32..50.0, m in 1usize..8, t in 1usize..12) {
        let (ds, model) = fixture(2, 11);
        let mut model = Model::new(&model.setting, &ds.encoding, seed).unwrap();
        for t in &mut model.params.tensors {
            for x in t.data_mut() {
                *x *= scale;
            }
        }
        let cfg = SampleConfig { t, m: Some(m), p: 0.3, ..Default::default() };
        let set = mc_suffix_sampling(&model, &ds.encoding, &ds.test[0], &cfg, seed).unwrap();
        prop_assert_eq!(set.suffixes.len(), t);
        for s in &set.suffixes {
            prop_assert!((1..=m).contains(&s.events.len()));
            prop_assert_eq!(s.stop == StopReason::MaxLength, s.events.last().unwrap().cat[0] != ds.encoding.eos_index());
        }
    }
}
