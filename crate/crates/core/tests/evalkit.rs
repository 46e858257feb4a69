mod common;

use proptest::prelude::*;
use psp_core::checkpoint::Checkpoint;
use psp_core::eventlog::TimeUnit;
use psp_core::evalkit::stats::{chi_square_uniform, ks_two_sample, mann_kendall};
use psp_core::evalkit::{dl_distance, dls, evaluate_checkpoint, evaluate_prefix, evaluate_run, pit_histogram, pit_value, EvalReport, PIT_BINS};
use psp_core::mcsampler::{ProbabilisticSummary, SampleConfig, SuffixSummary};
use psp_core::ulstm::Model;
use psp_core::CoreError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

/// Cheapest edit path over suffixes `a[i..]`, `b[j..]`, trying every
/// operation that consumes characters left to right: delete, insert,
/// substitute or keep, and swapping an adjacent pair.
fn edit_path_oracle(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut [Option<usize>], w: usize) -> usize {
        if let Some(v) = memo[i * w + j] {
            return v;
        }
        let v = if i == a.len() {
            b.len() - j
        } else if j == b.len() {
            a.len() - i
        } else {
            let mut best = 1 + go(a, b, i + 1, j, memo, w);
            best = best.min(1 + go(a, b, i, j + 1, memo, w));
            best = best.min(usize::from(a[i] != b[j]) + go(a, b, i + 1, j + 1, memo, w));
            if i + 1 < a.len() && j + 1 < b.len() && a[i] == b[j + 1] && a[i + 1] == b[j] {
                best = best.min(1 + go(a, b, i + 2, j + 2, memo, w));
            }
            best
        };
        memo[i * w + j] = Some(v);
        v
    }
    let w = b.len() + 1;
    let mut memo = vec![None; (a.len() + 1) * w];
    go(a, b, 0, 0, &mut memo, w)
}

fn all_strings(max_len: usize, alphabet: &[u8]) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &c in alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn dl_distance_matches_edit_path_search_up_to_length_four() {
    // The full length-6 enumeration runs in the acceptance suite.
    let strings = all_strings(4, b"abc");
    for a in &strings {
        for b in &strings {
            assert_eq!(dl_distance(a, b), edit_path_oracle(a, b), "{a:?} {b:?}");
        }
    }
}

#[test]
fn distance_examples() {
    assert_eq!(dl_distance(b"abc", b"abc"), 0);
    assert_eq!(dl_distance(b"abc", b"acb"), 1);
    assert_eq!(dl_distance(b"", b"ab"), 2);
    // Restricted distance: the swapped pair cannot be edited again.
    assert_eq!(dl_distance(b"ca", b"abc"), 3);
}

#[test]
fn restricted_distance_breaks_the_triangle_inequality() {
    let (x, y, z) = (b"ca", b"ac", b"abc");
    assert!(dl_distance(x, z) > dl_distance(x, y) + dl_distance(y, z));
}

#[test]
fn dls_examples() {
    assert_eq!(dls(b"abc", b"abc"), 1.0);
    assert_eq!(dls(b"abc", b"xyz"), 0.0);
    assert!((dls(b"abc", b"acb") - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(dls::<u8>(&[], &[]), 1.0);
}

proptest! {
    #[test]
    fn distance_is_symmetric_and_bounded(a in prop::collection::vec(0u8..4, 0..7), b in prop::collection::vec(0u8..4, 0..7)) {
        let d = dl_distance(&a, &b);
        prop_assert_eq!(d, dl_distance(&b, &a));
        prop_assert!(d >= a.len().abs_diff(b.len()) && d <= a.len().max(b.len()));
        prop_assert_eq!(d == 0, a == b);
        let s = dls(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn histogram_area_is_one(u in prop::collection::vec(0.0f64..=1.0, 1..500), bins in 1usize..40) {
        let h = pit_histogram(&u, bins).unwrap();
        let area: f64 = h.iter().map(|d| d / bins as f64).sum();
        prop_assert!((area - 1.0).abs() < 1e-12);
    }
}

#[test]
fn pit_examples() {
    assert_eq!(pit_value(&[1.0, 2.0], 5.0), 1.0);
    assert_eq!(pit_value(&[1.0, 2.0], 0.5), 0.0);
    assert_eq!(pit_value(&[1.0, 2.0, 3.0, 4.0], 2.5), 0.5);
    let n = 1000;
    let grid: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    for d in pit_histogram(&grid, PIT_BINS).unwrap() {
        assert!((d - 1.0).abs() <= 1.0 / n as f64 + 1e-12);
    }
    let ones = pit_histogram(&[1.0; 10], PIT_BINS).unwrap();
    assert_eq!(ones[PIT_BINS - 1], PIT_BINS as f64);
    assert!(ones[..PIT_BINS - 1].iter().all(|&d| d == 0.0));
    assert!(matches!(pit_histogram(&[], PIT_BINS), Err(CoreError::Data(_))));
}

/// With 199 samples the PIT takes 200 equally likely values, ten per bin.
#[test]
fn calibrated_reference_gives_uniform_pit() {
    let dist = LogNormal::new(10.0, 0.8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let u: Vec<f64> = (0..2000)
        .map(|_| {
            let samples: Vec<f64> = (0..199).map(|_| dist.sample(&mut rng)).collect();
            pit_value(&samples, dist.sample(&mut rng))
        })
        .collect();
    let test = chi_square_uniform(&u, PIT_BINS);
    assert!(test.p_value > 0.01, "chi2 {} p {}", test.statistic, test.p_value);
    let hist = pit_histogram(&u, PIT_BINS).unwrap();
    assert!(mann_kendall(&hist).p_value > 0.01);
}

#[test]
fn overdispersed_reference_is_rejected() {
    let truth = LogNormal::new(10.0, 0.3).unwrap();
    let wide = LogNormal::new(10.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u: Vec<f64> = (0..2000)
        .map(|_| {
            let samples: Vec<f64> = (0..199).map(|_| wide.sample(&mut rng)).collect();
            pit_value(&samples, truth.sample(&mut rng))
        })
        .collect();
    assert!(chi_square_uniform(&u, PIT_BINS).p_value < 1e-6);
}

#[test]
fn ks_detects_shift_only_when_present() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
    let c: Vec<f64> = (0..500).map(|_| rng.random::<f64>() + 0.3).collect();
    assert!(ks_two_sample(&a, &b).p_value > 0.01);
    assert!(ks_two_sample(&a, &c).p_value < 1e-6);
}

fn summary(acts: &[&str], rt_sum: f64, rt_last: f64) -> SuffixSummary {
    SuffixSummary {
        activities: acts.iter().map(|s| s.to_string()).collect(),
        length: acts.len(),
        rt_sum,
        rt_last,
    }
}

#[test]
fn prefix_record_examples() {
    let setting = common::setting(2, 8);
    let ds = common::repair_dataset(30, 1, &setting);
    let pair = ds.test.iter().find(|p| p.truth.len() == 3).expect("a prefix with three remaining events");
    let acts: Vec<&str> = pair.truth.activities.iter().map(String::as_str).collect();
    let rt = pair.truth.remaining_time_sum();
    let last = pair.truth.remaining_time_last(pair.prefix_case_elapsed);
    let ml = summary(&acts, rt, last);
    let prob = ProbabilisticSummary::from_summaries(vec![
        summary(&acts[..2], rt - 1000.0, last),
        summary(&acts, rt + 1000.0, last),
        summary(&[acts[0], acts[1], acts[2], "x"], rt, last),
    ])
    .unwrap();
    let r = evaluate_prefix(pair, &ml, &prob);
    assert_eq!((r.dls_ml, r.len_ae_ml, r.rt_sum_ae_ml, r.rt_last_ae_ml), (1.0, 0.0, 0.0, 0.0));
    assert_eq!(r.len_ae_prob, 0.0);
    assert!(r.rt_sum_ae_prob.abs() < 1e-6);
    assert!((r.dls_prob - (2.0 / 3.0 + 1.0 + 0.75) / 3.0).abs() < 1e-12);
    assert!((r.pit_sum - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn empty_evaluation_is_an_error() {
    assert!(matches!(EvalReport::from_records(Vec::new(), TimeUnit::Days), Err(CoreError::Data(_))));
    let setting = common::setting(2, 8);
    let ds = common::repair_dataset(30, 2, &setting);
    let model = Model::new(&setting, &ds.encoding, 2).unwrap();
    let r = evaluate_run(&model, &ds.encoding, &[], &SampleConfig::default(), TimeUnit::Days);
    assert!(matches!(r, Err(CoreError::Data(_))));
}

#[test]
fn degenerate_model_has_equal_label_metrics() {
    let (ds, model) = common::degenerate_rig(1, 16, 100, 3);
    let cfg = SampleConfig {
        t: 20,
        p: 0.0,
        ..Default::default()
    };
    let report = evaluate_run(&model, &ds.encoding, &ds.test, &cfg, TimeUnit::Days).unwrap();
    for r in &report.records {
        // The probabilistic values are means over identical samples.
        assert!((r.dls_ml - r.dls_prob).abs() < 1e-12);
        assert!((r.len_ae_ml - r.len_ae_prob).abs() < 1e-12);
    }
    let o = &report.overall;
    assert!((o.rt_sum_mae_ml - o.rt_sum_mae_prob).abs() < 0.05 * o.rt_sum_mae_ml.max(1e-3));
}

#[test]
fn report_files_are_deterministic_and_thread_independent() {
    let setting = common::setting(2, 8);
    let ds = common::repair_dataset(30, 4, &setting);
    let model = Model::new(&setting, &ds.encoding, 4).unwrap();
    let cfg = SampleConfig {
        t: 10,
        seed: 5,
        ..Default::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| evaluate_run(&model, &ds.encoding, &ds.test, &cfg, TimeUnit::Days).unwrap())
    };
    let (a, b) = (run(1), run(3));
    let csv = |r: &EvalReport| {
        let mut v = Vec::new();
        r.write_metrics_csv(&mut v).unwrap();
        String::from_utf8(v).unwrap()
    };
    assert_eq!(csv(&a), csv(&b));
    let text = csv(&a);
    assert!(text.starts_with("prefix_len,n,dls_ml,dls_prob,len_mae_ml,len_mae_prob,rt_sum_mae_ml,rt_sum_mae_prob,rt_last_mae_ml,rt_last_mae_prob\n"));
    assert!(text.lines().last().unwrap().starts_with("all,"));
    let dir = tempfile::tempdir().unwrap();
    a.write_artifacts(dir.path(), true).unwrap();
    for f in ["metrics.csv", "pit.csv", "dls_by_prefix.svg", "pit_rt_sum.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let pit = std::fs::read_to_string(dir.path().join("pit.csv")).unwrap();
    assert_eq!(pit.lines().count(), 1 + 2 * a.records.len());
}

#[test]
fn checkpoint_for_another_encoding_is_rejected() {
    let setting = common::setting(2, 8);
    let ds = common::repair_dataset(30, 5, &setting);
    let other = common::repair_dataset(30, 6, &setting);
    let model = Model::new(&setting, &ds.encoding, 5).unwrap();
    let ck = Checkpoint::for_model(&model, &ds.encoding, 5);
    let r = evaluate_checkpoint(&ck, &other.encoding, &other.test, &SampleConfig::default(), TimeUnit::Days);
    assert!(matches!(r, Err(CoreError::HashMismatch { .. })));
}
