//! Suffix metrics (DLS, length and remaining-time errors), PIT calibration
//! values, per-prefix-length aggregation and report files.

pub mod plot;
pub mod stats;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{CoreError, Result};
use crate::eventlog::TimeUnit;
use crate::features::{EncodingModel, PrefixSuffixPair};
use crate::mcsampler::{
    aggregate, mc_suffix_sampling, most_likely_suffix, prefix_id, prefix_seed, summarize, ProbabilisticSummary,
    SampleConfig, SuffixSummary,
};
use crate::ulstm::Model;

pub const PIT_BINS: usize = 20;

/// Restricted Damerau-Levenshtein (optimal string alignment) distance.
pub fn dl_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut v = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                v = v.min(d[i - 2][j - 2] + 1);
            }
            d[i][j] = v;
        }
    }
    d[n][m]
}

/// `1 - DL(a, b) / max(|a|, |b|)`; two empty sequences count as identical.
pub fn dls<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let len = a.len().max(b.len());
    if len == 0 {
        return 1.0;
    }
    1.0 - dl_distance(a, b) as f64 / len as f64
}

/// Share of samples at or below the truth.
pub fn pit_value(samples: &[f64], truth: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    samples.iter().filter(|&&s| s <= truth).count() as f64 / samples.len() as f64
}

/// Density histogram over `bins` equal bins of [0, 1] (bar areas sum to 1).
pub fn pit_histogram(u: &[f64], bins: usize) -> Result<Vec<f64>> {
    if u.is_empty() || bins == 0 {
        return Err(CoreError::Data("PIT histogram needs values and at least one bin".into()));
    }
    let mut counts = vec![0usize; bins];
    for &x in u {
        counts[stats::bin_of(x, bins)] += 1;
    }
    let scale = bins as f64 / u.len() as f64;
    Ok(counts.iter().map(|&c| c as f64 * scale).collect())
}

/// Errors for one prefix. Times are in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixRecord {
    pub prefix_id: String,
    pub prefix_len: usize,
    pub true_len: usize,
    pub dls_ml: f64,
    pub dls_prob: f64,
    pub len_ae_ml: f64,
    pub len_ae_prob: f64,
    pub rt_sum_ae_ml: f64,
    pub rt_sum_ae_prob: f64,
    pub rt_last_ae_ml: f64,
    pub rt_last_ae_prob: f64,
    pub true_rt_sum: f64,
    pub true_rt_last: f64,
    pub pit_sum: f64,
    pub pit_last: f64,
}

/// Compares the truth with the most-likely suffix and with the sample set.
pub fn evaluate_prefix(
    pair: &PrefixSuffixPair,
    ml: &SuffixSummary,
    prob: &ProbabilisticSummary,
) -> PrefixRecord {
    let truth = &pair.truth;
    let true_rt_sum = truth.remaining_time_sum();
    let true_rt_last = truth.remaining_time_last(pair.prefix_case_elapsed);
    let n = prob.suffixes.len() as f64;
    let dls_prob = prob
        .suffixes
        .iter()
        .map(|s| dls(&truth.activities, &s.activities))
        .sum::<f64>()
        / n;
    PrefixRecord {
        prefix_id: prefix_id(pair),
        prefix_len: pair.k,
        true_len: truth.len(),
        dls_ml: dls(&truth.activities, &ml.activities),
        dls_prob,
        len_ae_ml: (ml.length as f64 - truth.len() as f64).abs(),
        len_ae_prob: (prob.mean_length - truth.len() as f64).abs(),
        rt_sum_ae_ml: (ml.rt_sum - true_rt_sum).abs(),
        rt_sum_ae_prob: (prob.mean_rt_sum - true_rt_sum).abs(),
        rt_last_ae_ml: (ml.rt_last - true_rt_last).abs(),
        rt_last_ae_prob: (prob.mean_rt_last - true_rt_last).abs(),
        true_rt_sum,
        true_rt_last,
        pit_sum: pit_value(&prob.rt_sums(), true_rt_sum),
        pit_last: pit_value(&prob.rt_lasts(), true_rt_last),
    }
}

/// Means over a group of prefixes; times in the report unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// `None` for the all-prefixes row.
    pub prefix_len: Option<usize>,
    pub n: usize,
    pub dls_ml: f64,
    pub dls_prob: f64,
    pub len_mae_ml: f64,
    pub len_mae_prob: f64,
    pub rt_sum_mae_ml: f64,
    pub rt_sum_mae_prob: f64,
    pub rt_last_mae_ml: f64,
    pub rt_last_mae_prob: f64,
}

impl MetricRow {
    fn from_records(prefix_len: Option<usize>, recs: &[&PrefixRecord], unit: TimeUnit) -> Self {
        let n = recs.len();
        let mean = |f: &dyn Fn(&PrefixRecord) -> f64| recs.iter().map(|r| f(r)).sum::<f64>() / n as f64;
        let t = |s: f64| unit.from_seconds(s);
        Self {
            prefix_len,
            n,
            dls_ml: mean(&|r| r.dls_ml),
            dls_prob: mean(&|r| r.dls_prob),
            len_mae_ml: mean(&|r| r.len_ae_ml),
            len_mae_prob: mean(&|r| r.len_ae_prob),
            rt_sum_mae_ml: t(mean(&|r| r.rt_sum_ae_ml)),
            rt_sum_mae_prob: t(mean(&|r| r.rt_sum_ae_prob)),
            rt_last_mae_ml: t(mean(&|r| r.rt_last_ae_ml)),
            rt_last_mae_prob: t(mean(&|r| r.rt_last_ae_prob)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub unit: TimeUnit,
    pub records: Vec<PrefixRecord>,
    /// Ascending prefix length.
    pub by_prefix_len: Vec<MetricRow>,
    pub overall: MetricRow,
}

impl EvalReport {
    pub fn from_records(records: Vec<PrefixRecord>, unit: TimeUnit) -> Result<Self> {
        if records.is_empty() {
            return Err(CoreError::Data("no test prefixes to evaluate".into()));
        }
        let mut lens: Vec<usize> = records.iter().map(|r| r.prefix_len).collect();
        lens.sort_unstable();
        lens.dedup();
        let by_prefix_len = lens
            .iter()
            .map(|&k| {
                let group: Vec<&PrefixRecord> = records.iter().filter(|r| r.prefix_len == k).collect();
                MetricRow::from_records(Some(k), &group, unit)
            })
            .collect();
        let all: Vec<&PrefixRecord> = records.iter().collect();
        let overall = MetricRow::from_records(None, &all, unit);
        Ok(Self {
            unit,
            records,
            by_prefix_len,
            overall,
        })
    }

    pub fn pit_sum(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.pit_sum).collect()
    }

    pub fn pit_last(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.pit_last).collect()
    }

    pub fn write_metrics_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "prefix_len",
            "n",
            "dls_ml",
            "dls_prob",
            "len_mae_ml",
            "len_mae_prob",
            "rt_sum_mae_ml",
            "rt_sum_mae_prob",
            "rt_last_mae_ml",
            "rt_last_mae_prob",
        ])?;
        for row in self.by_prefix_len.iter().chain(std::iter::once(&self.overall)) {
            w.write_record([
                row.prefix_len.map_or_else(|| "all".to_string(), |k| k.to_string()),
                row.n.to_string(),
                row.dls_ml.to_string(),
                row.dls_prob.to_string(),
                row.len_mae_ml.to_string(),
                row.len_mae_prob.to_string(),
                row.rt_sum_mae_ml.to_string(),
                row.rt_sum_mae_prob.to_string(),
                row.rt_last_mae_ml.to_string(),
                row.rt_last_mae_prob.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_pit_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "u"])?;
        for (name, values) in [("rt_sum", self.pit_sum()), ("rt_last", self.pit_last())] {
            for u in values {
                w.write_record([name.to_string(), u.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `metrics.csv`, `pit.csv` and, with `svg`, the plots.
    pub fn write_artifacts(&self, dir: &Path, svg: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_metrics_csv(std::fs::File::create(dir.join("metrics.csv"))?)?;
        self.write_pit_csv(std::fs::File::create(dir.join("pit.csv"))?)?;
        if svg {
            for (name, plot) in self.svg_plots()? {
                std::fs::write(dir.join(name), plot)?;
            }
        }
        Ok(())
    }

    pub fn svg_plots(&self) -> Result<Vec<(String, String)>> {
        let xs: Vec<usize> = self.by_prefix_len.iter().filter_map(|r| r.prefix_len).collect();
        let col = |f: fn(&MetricRow) -> f64| self.by_prefix_len.iter().map(f).collect::<Vec<f64>>();
        let unit = self.unit.label();
        Ok(vec![
            (
                "dls_by_prefix.svg".into(),
                plot::line_chart(
                    "DLS by prefix length",
                    &xs,
                    &[("most likely", col(|r| r.dls_ml)), ("probabilistic", col(|r| r.dls_prob))],
                ),
            ),
            (
                "rt_sum_mae_by_prefix.svg".into(),
                plot::line_chart(
                    &format!("Remaining time (sum) MAE, {unit}"),
                    &xs,
                    &[("most likely", col(|r| r.rt_sum_mae_ml)), ("probabilistic", col(|r| r.rt_sum_mae_prob))],
                ),
            ),
            (
                "pit_rt_sum.svg".into(),
                plot::histogram("PIT, remaining time (sum)", &pit_histogram(&self.pit_sum(), PIT_BINS)?),
            ),
            (
                "pit_rt_last.svg".into(),
                plot::histogram("PIT, remaining time (last)", &pit_histogram(&self.pit_last(), PIT_BINS)?),
            ),
        ])
    }
}

/// Samples and scores every pair. Prefix `i` uses generators derived from
/// `cfg.seed` and `i`, so the report does not depend on the thread count.
pub fn evaluate_run(
    model: &Model,
    enc: &EncodingModel,
    pairs: &[PrefixSuffixPair],
    cfg: &SampleConfig,
    unit: TimeUnit,
) -> Result<EvalReport> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(CoreError::Data("no test prefixes to evaluate".into()));
    }
    let m = cfg.max_len(enc);
    let records = pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let ml = most_likely_suffix(model, enc, pair, m)?;
            let ml = summarize(&ml, enc, pair.prefix_case_elapsed);
            let set = mc_suffix_sampling(model, enc, pair, cfg, prefix_seed(cfg.seed, i))?;
            let prob = aggregate(&set, enc, pair.prefix_case_elapsed)?;
            Ok(evaluate_prefix(pair, &ml, &prob))
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_records(records, unit)
}

/// [`evaluate_run`] for a stored checkpoint; fails when the checkpoint was
/// trained with a different encoding.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    enc: &EncodingModel,
    pairs: &[PrefixSuffixPair],
    cfg: &SampleConfig,
    unit: TimeUnit,
) -> Result<EvalReport> {
    let model = ck.model(enc)?;
    evaluate_run(&model, enc, pairs, cfg, unit)
}
