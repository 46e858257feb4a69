//! Monte Carlo suffix sampling with dropout kept on, most-likely decoding and
//! per-prefix aggregation.
//!
//! Trials of one prefix run as rows of a single batch. Trial `j` draws all of
//! its randomness (masks, noise, class draws) from its own generator,
//! `ChaCha8(prefix seed)` on stream `j`, so results do not depend on how
//! trials are batched or scheduled.

use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use autograd::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::features::{EncodedEvent, EncodingModel, PrefixSuffixPair, CASE_ELAPSED, EVENT_ELAPSED};
use crate::ulstm::{
    attach_state, decoder_step, detach_state, encode, sample_masks, EncoderInput, Model, RowRngs, StackMasks, StepInput,
    LOGVAR_CLAMP,
};

/// How the decoder's dropout masks are drawn while sampling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderDropout {
    /// A fresh mask at every decoding step.
    #[default]
    Naive,
    /// One mask per trial for the whole suffix.
    Variational,
}

fn default_t() -> usize {
    1000
}
fn default_p() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    /// Trials per prefix.
    #[serde(default = "default_t")]
    pub t: usize,
    /// Maximum suffix length; the encoding's padding length when `None`.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub decoder_dropout: DecoderDropout,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            t: default_t(),
            m: None,
            p: default_p(),
            decoder_dropout: DecoderDropout::Naive,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.m == Some(0) {
            return Err(CoreError::Config("T and M must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(CoreError::Config(format!("dropout p = {} must lie in [0, 1)", self.p)));
        }
        Ok(())
    }

    pub fn max_len(&self, enc: &EncodingModel) -> usize {
        self.m.unwrap_or(enc.pad_length).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    MaxLength,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Eos => "eos",
            StopReason::MaxLength => "max_length",
        }
    }
}

/// One generated event, aligned with the decoder's routed attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledEvent {
    pub cat: Vec<usize>,
    pub con_scaled: Vec<f64>,
    /// Original units; elapsed times are floored at 0.
    pub con_decoded: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledSuffix {
    /// Includes the final EOS event when `stop == Eos`.
    pub events: Vec<SampledEvent>,
    pub stop: StopReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub prefix_id: String,
    /// Indexed by trial.
    pub suffixes: Vec<SampledSuffix>,
}

pub fn prefix_id(pair: &PrefixSuffixPair) -> String {
    format!("{}#{}", pair.case_id, pair.k)
}

/// Seed of the generator family for prefix number `index` of a run.
pub fn prefix_seed(seed: u64, index: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(index as u64))
}

pub fn trial_rng(prefix_seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(prefix_seed);
    rng.set_stream(trial as u64);
    rng
}

/// Draws a class from `softmax(logits + sigma * eps)` with standard-normal
/// `eps`, one value per class.
pub fn sample_categorical<R: Rng>(rng: &mut R, logits: &[f64], sigma: &[f64]) -> usize {
    let z: Vec<f64> = logits
        .iter()
        .zip(sigma)
        .map(|(l, s)| l + s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.len() - 1
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn select_rows(t: &Tensor<f32>, rows: &[usize]) -> Tensor<f32> {
    let cols = t.cols();
    let mut data = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        data.extend_from_slice(t.row(r));
    }
    Tensor::matrix(rows.len(), cols, data).expect("non-empty selection")
}

/// Decoder dropout masks for a set of trial rows.
pub struct DecoderMasks {
    layers: usize,
    hidden: usize,
    p: f64,
    rows: usize,
    /// Variational masks drawn once for all rows.
    fixed: Option<StackMasks<f32>>,
}

impl DecoderMasks {
    /// Draws the variational masks immediately (one set per row, from the
    /// row generators); naive masks are drawn by [`DecoderMasks::for_step`].
    pub fn new<R: Rng>(mode: DecoderDropout, rngs: &mut [R], layers: usize, hidden: usize, p: f64) -> Self {
        let rows = rngs.len();
        let fixed = (mode == DecoderDropout::Variational)
            .then(|| sample_masks(&mut RowRngs::PerRow(rngs), rows, layers, hidden, p, true));
        Self {
            layers,
            hidden,
            p,
            rows,
            fixed,
        }
    }

    /// Masks for the next step. `active` lists the original row index of each
    /// current row and `rngs` holds their generators in the same order.
    pub fn for_step<R: Rng>(&self, rngs: &mut [R], active: &[usize]) -> StackMasks<f32> {
        match &self.fixed {
            Some(m) if active.len() == self.rows => m.clone(),
            Some(m) => m.select_rows(active),
            None => sample_masks(&mut RowRngs::PerRow(rngs), active.len(), self.layers, self.hidden, self.p, true),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Stochastic,
    MostLikely,
}

struct Live {
    trial: usize,
    input: EncodedEvent,
    case_elapsed: f64,
    events: Vec<SampledEvent>,
}

/// Decodes trials `trials` of one prefix.
#[allow(clippy::too_many_arguments)]
fn rollout(
    model: &Model,
    enc: &EncodingModel,
    pair: &PrefixSuffixPair,
    trials: Range<usize>,
    p: f64,
    m: usize,
    dropout: DecoderDropout,
    seed: u64,
    mode: Mode,
) -> Result<Vec<SampledSuffix>> {
    let n = trials.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let arch = &model.arch;
    let layout = arch.head_layout();
    let (ce_slot, ee_slot) = enc.decoder_time_slots();
    let dec_con_attrs = &enc.routing.decoder_continuous;
    let eos = enc.eos_index();
    let mut rngs: Vec<ChaCha8Rng> = trials.clone().map(|j| trial_rng(seed, j)).collect();

    let mut g = Graph::<f32>::new();
    let pv = model.params.constants(&mut g);
    let base = g.len();
    let rows: Vec<&PrefixSuffixPair> = vec![pair; n];
    let enc_in: EncoderInput<f32> = EncoderInput::from_pairs(&rows);
    let enc_masks = sample_masks(&mut RowRngs::PerRow(&mut rngs), n, arch.layers, arch.hidden, p, false);
    let state = encode(&mut g, arch, &pv, &enc_in, &enc_masks)?;
    let mut state = detach_state(&g, &state);
    let dec_masks = DecoderMasks::new(dropout, &mut rngs, arch.layers, arch.hidden, p);

    let mut live: Vec<Live> = trials
        .clone()
        .map(|trial| Live {
            trial,
            input: pair.decoder_start.clone(),
            case_elapsed: pair.prefix_case_elapsed,
            events: Vec::new(),
        })
        .collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut done: Vec<Option<SampledSuffix>> = vec![None; n];

    while !live.is_empty() {
        g.truncate(base);
        let st = attach_state(&mut g, std::mem::take(&mut state));
        let masks = dec_masks.for_step(&mut rngs, &active);
        let refs: Vec<&EncodedEvent> = live.iter().map(|l| &l.input).collect();
        let step_in = StepInput::<f32>::from_events(&refs);
        let step = decoder_step(&mut g, arch, &pv, &step_in, &st, &masks)?;
        let out = g.value(step.out).clone();
        let new_state = detach_state(&g, &step.state);

        let mut keep = Vec::with_capacity(live.len());
        for (r, row) in live.iter_mut().enumerate() {
            let vals: Vec<f64> = out.row(r).iter().map(|&x| f64::from(x)).collect();
            let rng = &mut rngs[r];
            let cat: Vec<usize> = (0..arch.dec_cat.len())
                .map(|d| {
                    let logits = &vals[layout.logits(d)];
                    match mode {
                        Mode::MostLikely => argmax(logits),
                        Mode::Stochastic => {
                            let sigma: Vec<f64> = vals[layout.cat_logvar(d)]
                                .iter()
                                .map(|v| (0.5 * v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)).exp())
                                .collect();
                            sample_categorical(rng, logits, &sigma)
                        }
                    }
                })
                .collect();
            let con_scaled: Vec<f64> = (0..arch.dec_con)
                .map(|j| {
                    let mean = vals[layout.con_mean(j)];
                    match mode {
                        Mode::MostLikely => mean,
                        Mode::Stochastic => {
                            let v = vals[layout.con_logvar(j)].clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP);
                            mean + (0.5 * v).exp() * rng.sample::<f64, _>(StandardNormal)
                        }
                    }
                })
                .collect();
            let con_decoded: Vec<f64> = con_scaled
                .iter()
                .zip(dec_con_attrs)
                .map(|(&x, &a)| {
                    let y = enc.decode_continuous(x, a);
                    if a == CASE_ELAPSED || a == EVENT_ELAPSED {
                        y.max(0.0)
                    } else {
                        y
                    }
                })
                .collect();

            let is_eos = cat[0] == eos;
            row.case_elapsed += con_decoded[ee_slot];
            let mut next_con = con_scaled.clone();
            next_con[ce_slot] = enc.continuous[CASE_ELAPSED].decoder.encode(row.case_elapsed);
            let next = EncodedEvent {
                cat: cat.clone(),
                con: next_con,
                present: vec![true; arch.dec_con],
            };
            row.events.push(SampledEvent {
                cat,
                con_scaled,
                con_decoded,
            });
            let stop = if is_eos {
                Some(StopReason::Eos)
            } else if row.events.len() >= m {
                Some(StopReason::MaxLength)
            } else {
                None
            };
            match stop {
                Some(stop) => {
                    done[row.trial - trials.start] = Some(SampledSuffix {
                        events: std::mem::take(&mut row.events),
                        stop,
                    });
                }
                None => {
                    row.input = next;
                    keep.push(r);
                }
            }
        }

        if keep.len() == live.len() {
            state = new_state;
        } else if !keep.is_empty() {
            state = new_state
                .iter()
                .map(|(h, c)| (select_rows(h, &keep), select_rows(c, &keep)))
                .collect();
            let mut kept = vec![false; live.len()];
            for &r in &keep {
                kept[r] = true;
            }
            let mut flags = kept.iter();
            live.retain(|_| *flags.next().expect("one flag per row"));
            let mut flags = kept.iter();
            rngs.retain(|_| *flags.next().expect("one flag per row"));
            active = keep.iter().map(|&r| active[r]).collect();
        } else {
            live.clear();
        }
    }
    Ok(done.into_iter().map(|s| s.expect("every trial stops")).collect())
}

/// `cfg.t` sampled suffixes for one prefix, with dropout active in both the
/// encoder (one mask per trial) and the decoder.
pub fn mc_suffix_sampling(
    model: &Model,
    enc: &EncodingModel,
    pair: &PrefixSuffixPair,
    cfg: &SampleConfig,
    prefix_seed: u64,
) -> Result<SampleSet> {
    sample_trials(model, enc, pair, cfg, prefix_seed, 0..cfg.t)
}

/// Trials `trials` only; concatenating disjoint ranges reproduces a single
/// call over their union.
pub fn sample_trials(
    model: &Model,
    enc: &EncodingModel,
    pair: &PrefixSuffixPair,
    cfg: &SampleConfig,
    prefix_seed: u64,
    trials: Range<usize>,
) -> Result<SampleSet> {
    cfg.validate()?;
    let m = cfg.max_len(enc);
    let suffixes = rollout(model, enc, pair, trials, cfg.p, m, cfg.decoder_dropout, prefix_seed, Mode::Stochastic)?;
    Ok(SampleSet {
        prefix_id: prefix_id(pair),
        suffixes,
    })
}

/// Greedy decode without dropout: argmax classes and mean values.
pub fn most_likely_suffix(model: &Model, enc: &EncodingModel, pair: &PrefixSuffixPair, m: usize) -> Result<SampledSuffix> {
    if m == 0 {
        return Err(CoreError::Config("M must be at least 1".into()));
    }
    let mut v = rollout(model, enc, pair, 0..1, 0.0, m, DecoderDropout::Naive, 0, Mode::MostLikely)?;
    Ok(v.remove(0))
}

/// Per-suffix quantities in original units, EOS excluded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuffixSummary {
    pub activities: Vec<String>,
    pub length: usize,
    /// Sum of decoded event elapsed times, seconds.
    pub rt_sum: f64,
    /// Last decoded case elapsed time minus the prefix's, floored at 0.
    pub rt_last: f64,
}

pub fn summarize(suffix: &SampledSuffix, enc: &EncodingModel, prefix_case_elapsed: f64) -> SuffixSummary {
    let (ce_slot, ee_slot) = enc.decoder_time_slots();
    let eos = enc.eos_index();
    let act = enc.activity();
    let real: Vec<&SampledEvent> = suffix.events.iter().filter(|e| e.cat[0] != eos).collect();
    SuffixSummary {
        activities: real.iter().map(|e| act.label(e.cat[0]).to_string()).collect(),
        length: real.len(),
        rt_sum: real.iter().map(|e| e.con_decoded[ee_slot]).sum(),
        rt_last: real
            .last()
            .map_or(0.0, |e| (e.con_decoded[ce_slot] - prefix_case_elapsed).max(0.0)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticSummary {
    pub suffixes: Vec<SuffixSummary>,
    pub mean_length: f64,
    pub mean_rt_sum: f64,
    pub mean_rt_last: f64,
}

impl ProbabilisticSummary {
    pub fn from_summaries(suffixes: Vec<SuffixSummary>) -> Result<Self> {
        if suffixes.is_empty() {
            return Err(CoreError::Data("cannot aggregate an empty sample set".into()));
        }
        let n = suffixes.len() as f64;
        Ok(Self {
            mean_length: suffixes.iter().map(|s| s.length as f64).sum::<f64>() / n,
            mean_rt_sum: suffixes.iter().map(|s| s.rt_sum).sum::<f64>() / n,
            mean_rt_last: suffixes.iter().map(|s| s.rt_last).sum::<f64>() / n,
            suffixes,
        })
    }

    pub fn rt_sums(&self) -> Vec<f64> {
        self.suffixes.iter().map(|s| s.rt_sum).collect()
    }

    pub fn rt_lasts(&self) -> Vec<f64> {
        self.suffixes.iter().map(|s| s.rt_last).collect()
    }
}

pub fn aggregate(set: &SampleSet, enc: &EncodingModel, prefix_case_elapsed: f64) -> Result<ProbabilisticSummary> {
    ProbabilisticSummary::from_summaries(
        set.suffixes
            .iter()
            .map(|s| summarize(s, enc, prefix_case_elapsed))
            .collect(),
    )
}

/// One CSV row per sampled event.
pub fn write_sample_dump<W: Write>(out: W, enc: &EncodingModel, sets: &[SampleSet]) -> Result<()> {
    let (ce_slot, ee_slot) = enc.decoder_time_slots();
    let act = enc.activity();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["prefix_id", "trial", "step", "activity", "event_elapsed_s", "case_elapsed_s", "stop_reason"])?;
    for set in sets {
        for (trial, s) in set.suffixes.iter().enumerate() {
            for (step, e) in s.events.iter().enumerate() {
                w.write_record([
                    set.prefix_id.clone(),
                    trial.to_string(),
                    step.to_string(),
                    act.label(e.cat[0]).to_string(),
                    e.con_decoded[ee_slot].to_string(),
                    e.con_decoded[ce_slot].to_string(),
                    s.stop.as_str().to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Convenience for tests and tooling: the masks of one sampling trial share
/// storage across steps exactly when they are variational.
pub fn masks_shared(a: &StackMasks<f32>, b: &StackMasks<f32>) -> bool {
    let same = |x: &Option<Arc<Tensor<f32>>>, y: &Option<Arc<Tensor<f32>>>| match (x, y) {
        (Some(x), Some(y)) => Arc::ptr_eq(x, y),
        (None, None) => true,
        _ => false,
    };
    a.recurrent.iter().zip(&b.recurrent).all(|(x, y)| same(x, y)) && same(&a.head, &b.head)
}
