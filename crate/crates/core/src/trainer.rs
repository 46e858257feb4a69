//! Adam/AdamW, the teacher-forcing schedule, batched training steps with
//! GradNorm, validation and the epoch loop.
//!
//! Randomness: epoch `e` draws from `ChaCha8(seed)` on stream `e + 1`
//! (shuffling, dropout masks, forcing coins, loss noise, in that order per
//! batch). Validation uses a fresh generator on a reserved stream each time, so
//! its masks do not change between epochs.

use std::fmt::Write as _;
use std::path::Path;

use autograd::{Graph, Scalar, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Moments, OptimizerManifest, TrainingManifest};
use crate::error::{CoreError, Result};
use crate::features::{EncodedEvent, EncodingModel, PrefixSuffixPair};
use crate::objective::{
    categorical_loss, continuous_loss, draw_noise, gradnorm_step, loss_ratios, total_loss, LossBreakdown, TaskWeights,
};
use crate::setting::{HyperparameterSetting, OptimizerKind};
use crate::ulstm::{decoder_step, encode, sample_masks, Architecture, EncoderInput, Model, ModelParams, RowRngs, StepInput};

const VALIDATION_STREAM: u64 = u64::MAX;

fn default_window() -> usize {
    5
}
fn default_tf_start() -> f64 {
    0.8
}
fn default_tf_decay_start() -> f64 {
    0.2
}
fn default_dropout() -> f64 {
    0.1
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_t_mc() -> usize {
    10
}
fn default_clip() -> f64 {
    5.0
}
fn default_true() -> bool {
    true
}
fn default_alpha() -> f64 {
    1.5
}
fn default_gradnorm_lr() -> f64 {
    0.025
}
fn default_checkpoint_every() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub setting: HyperparameterSetting,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Decoder window length `S`.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_tf_start")]
    pub tf_start: f64,
    /// Fraction of the epochs after which teacher forcing starts to decay.
    #[serde(default = "default_tf_decay_start")]
    pub tf_decay_start: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Explicit L2 coefficient with Adam, decoupled decay with AdamW.
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Noise draws for the attenuated classification loss.
    #[serde(default = "default_t_mc")]
    pub t_mc: usize,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    #[serde(default = "default_true")]
    pub gradnorm: bool,
    #[serde(default = "default_alpha")]
    pub gradnorm_alpha: f64,
    #[serde(default = "default_gradnorm_lr")]
    pub gradnorm_lr: f64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(setting: HyperparameterSetting, epochs: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        Self {
            setting,
            epochs,
            batch_size,
            lr,
            window: default_window(),
            tf_start: default_tf_start(),
            tf_decay_start: default_tf_decay_start(),
            dropout: default_dropout(),
            weight_decay: default_weight_decay(),
            t_mc: default_t_mc(),
            clip_norm: default_clip(),
            gradnorm: true,
            gradnorm_alpha: default_alpha(),
            gradnorm_lr: default_gradnorm_lr(),
            checkpoint_every: default_checkpoint_every(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.setting.validate()?;
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.window == 0 || self.t_mc == 0 {
            return bad("epochs, batch_size, window and t_mc must be positive");
        }
        if !self.lr.is_finite() || self.lr <= 0.0 || !(0.0..1.0).contains(&self.dropout) {
            return bad("lr must be positive and dropout in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.tf_start) || !(0.0..=1.0).contains(&self.tf_decay_start) {
            return bad("teacher forcing parameters must lie in [0, 1]");
        }
        if self.weight_decay < 0.0 || self.clip_norm <= 0.0 {
            return bad("weight_decay must be non-negative and clip_norm positive");
        }
        Ok(())
    }

    fn l2_in_loss(&self) -> Option<f64> {
        (self.setting.optimizer == OptimizerKind::Adam && self.weight_decay > 0.0).then_some(self.weight_decay)
    }
}

/// Constant `start` through epoch `decay_start * epochs`, then linear down
/// to 0 at the last epoch.
pub fn teacher_forcing_prob(epoch: usize, epochs: usize, start: f64, decay_start: f64) -> f64 {
    let e0 = decay_start * epochs as f64;
    let last = epochs.saturating_sub(1) as f64;
    let e = epoch as f64;
    if e <= e0 || last <= e0 {
        return start;
    }
    (start * (last - e) / (last - e0)).clamp(0.0, start)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64, params: &ModelParams<f32>) -> Self {
        let zeros: Vec<Tensor<f32>> = params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            kind,
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn manifest(&self) -> OptimizerManifest {
        OptimizerManifest {
            kind: self.kind,
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            step: self.step,
        }
    }

    pub fn from_manifest(m: &OptimizerManifest, moments: Moments) -> Self {
        Self {
            kind: m.kind,
            lr: m.lr,
            weight_decay: m.weight_decay,
            beta1: m.beta1,
            beta2: m.beta2,
            eps: m.eps,
            step: m.step,
            m: moments.0,
            v: moments.1,
        }
    }

    /// One bias-corrected Adam step; AdamW first shrinks every parameter by
    /// `1 - lr * weight_decay`.
    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &[Tensor<f32>]) -> Result<()> {
        if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
            return Err(CoreError::NonFinite(format!("gradient of {}", params.names[i])));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = match self.kind {
            OptimizerKind::Adamw => 1.0 - self.lr * self.weight_decay,
            OptimizerKind::Adam => 1.0,
        };
        for (k, g) in grads.iter().enumerate() {
            let p = params.tensors[k].data_mut();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for i in 0..p.len() {
                let gi = f64::from(g.data()[i]);
                let mi = self.beta1 * f64::from(m[i]) + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * f64::from(v[i]) + (1.0 - self.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                p[i] = (f64::from(p[i]) * decay - update) as f32;
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor<f32>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// Task names in loss order: decoder categorical attributes, then continuous.
pub fn task_names(enc: &EncodingModel) -> Vec<String> {
    let (cats, cons) = enc.decoder_attribute_names();
    cats.into_iter().chain(cons).collect()
}

struct Forward {
    task_losses: Vec<Var>,
    head_inputs: Vec<Var>,
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

/// The event a decoder row would feed back without forcing: argmax classes
/// and mean continuous values.
fn predicted_event<T: Scalar>(out: &Tensor<T>, row: usize, arch: &Architecture) -> EncodedEvent {
    let layout = arch.head_layout();
    let vals: Vec<f64> = out.row(row).iter().map(|x| x.as_f64()).collect();
    let cat = (0..arch.dec_cat.len()).map(|d| argmax(&vals[layout.logits(d)])).collect();
    let con = (0..arch.dec_con).map(|j| vals[layout.con_mean(j)]).collect();
    EncodedEvent {
        cat,
        con,
        present: vec![true; arch.dec_con],
    }
}

/// Builds the encoder pass, the `S`-step decoder rollout and every task loss.
#[allow(clippy::too_many_arguments)]
fn forward<T: Scalar, R: Rng>(
    g: &mut Graph<T>,
    pv: &[Var],
    arch: &Architecture,
    batch: &[&PrefixSuffixPair],
    p: f64,
    tf: f64,
    t_mc: usize,
    rng: &mut R,
) -> Result<Forward> {
    let b = batch.len();
    let s = batch[0].target.len();
    let layers = arch.layers;
    let enc_input: EncoderInput<T> = EncoderInput::from_pairs(batch);
    let enc_masks = sample_masks(&mut RowRngs::Shared(&mut *rng), b, layers, arch.hidden, p, false);
    let mut state = encode(g, arch, pv, &enc_input, &enc_masks)?;
    let dec_masks = sample_masks(&mut RowRngs::Shared(&mut *rng), b, layers, arch.hidden, p, true);

    let mut inputs: Vec<EncodedEvent> = batch.iter().map(|q| q.decoder_start.clone()).collect();
    let mut outs = Vec::with_capacity(s);
    let mut head_inputs = Vec::with_capacity(s);
    for t in 0..s {
        let refs: Vec<&EncodedEvent> = inputs.iter().collect();
        let step_in = StepInput::from_events(&refs);
        let step = decoder_step(g, arch, pv, &step_in, &state, &dec_masks)?;
        state = step.state;
        outs.push(step.out);
        head_inputs.push(step.head_input);
        if t + 1 < s {
            let out_val = g.value(step.out).clone();
            for (r, q) in batch.iter().enumerate() {
                let forced = rng.random::<f64>() < tf;
                inputs[r] = if forced {
                    q.target[t].clone()
                } else {
                    predicted_event(&out_val, r, arch)
                };
            }
        }
    }

    let all = if outs.len() == 1 { outs[0] } else { g.concat_rows(&outs)? };
    let rows = s * b;
    let layout = arch.head_layout();
    let target_at = |i: usize| &batch[i % b].target[i / b];
    let eos_at = |i: usize| batch[i % b].target_eos[i / b];
    let mut task_losses = Vec::new();

    for d in 0..arch.dec_cat.len() {
        let r = layout.logits(d);
        let lv = layout.cat_logvar(d);
        let logits = g.slice_cols(all, r.start, r.end)?;
        let v = g.slice_cols(all, lv.start, lv.end)?;
        let targets: Vec<usize> = (0..rows).map(|i| target_at(i).cat[d]).collect();
        // The activity must learn to emit EOS; other attributes skip EOS slots.
        let include: Vec<bool> = (0..rows).map(|i| d == 0 || !eos_at(i)).collect();
        let eps = draw_noise::<T, _>(rng, t_mc, rows, r.len());
        task_losses.push(categorical_loss(g, logits, v, &targets, &include, &eps)?);
    }
    for j in 0..arch.dec_con {
        let yhat = g.slice_cols(all, layout.con_mean(j), layout.con_mean(j) + 1)?;
        let v = g.slice_cols(all, layout.con_logvar(j), layout.con_logvar(j) + 1)?;
        let y: Vec<T> = (0..rows).map(|i| T::of(target_at(i).con[j])).collect();
        let include: Vec<T> = (0..rows)
            .map(|i| {
                if !eos_at(i) && target_at(i).present[j] {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        let y = g.constant(Tensor::matrix(rows, 1, y)?);
        let include = Tensor::matrix(rows, 1, include)?;
        task_losses.push(continuous_loss(g, y, yhat, v, &include)?);
    }
    Ok(Forward {
        task_losses,
        head_inputs,
    })
}

/// Result of one training step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub breakdown: LossBreakdown,
    /// Aligned with the model parameters.
    pub grads: Vec<Tensor<f32>>,
    /// Norm of each unweighted task-loss gradient at the head inputs.
    pub task_grad_norms: Vec<f64>,
}

/// Forward and backward pass for one batch.
pub fn train_step<R: Rng>(
    model: &Model,
    enc: &EncodingModel,
    batch: &[&PrefixSuffixPair],
    weights: &TaskWeights,
    cfg: &TrainConfig,
    tf: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(CoreError::Data("empty training batch".into()));
    }
    let mut g = Graph::<f32>::new();
    let pv = model.params.leaves(&mut g);
    let fw = forward(&mut g, &pv, &model.arch, batch, cfg.dropout, tf, cfg.t_mc, rng)?;
    let l2 = cfg.l2_in_loss();
    let (total, penalty) = total_loss(&mut g, &fw.task_losses, &weights.weights, l2.map(|l| (l, pv.as_slice())))?;
    let grads_all = g.backward(total)?;
    let grads = pv.iter().map(|&v| grads_all.wrt(v)).collect();
    let task_grad_norms = if cfg.gradnorm {
        fw.task_losses
            .iter()
            .map(|&l| {
                let gs = g.backward_to(l, &fw.head_inputs)?;
                Ok(gs.iter().map(Tensor::norm_sq).sum::<f64>().sqrt())
            })
            .collect::<Result<Vec<f64>>>()?
    } else {
        Vec::new()
    };
    let breakdown = LossBreakdown {
        task_names: task_names(enc),
        tasks: fw.task_losses.iter().map(|&l| f64::from(g.value(l).data()[0])).collect(),
        weights: weights.weights.clone(),
        l2_term: penalty.map_or(0.0, |v| f64::from(g.value(v).data()[0])),
        total: f64::from(g.value(total).data()[0]),
    };
    Ok(StepOutcome {
        breakdown,
        grads,
        task_grad_norms,
    })
}

/// Task losses of one batch without building gradients.
pub fn batch_task_losses<T: Scalar, R: Rng>(
    model: &Model,
    batch: &[&PrefixSuffixPair],
    p: f64,
    tf: f64,
    t_mc: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut g = Graph::<T>::new();
    let params: ModelParams<T> = model.params.cast();
    let pv = params.constants(&mut g);
    let fw = forward(&mut g, &pv, &model.arch, batch, p, tf, t_mc, rng)?;
    Ok(fw.task_losses.iter().map(|&l| g.value(l).data()[0].as_f64()).collect())
}

/// Sum of the unweighted task losses under full teacher forcing, averaged
/// over the pairs. Uses a fixed random stream so successive calls with the
/// same parameters agree.
pub fn validation_loss(model: &Model, pairs: &[PrefixSuffixPair], cfg: &TrainConfig, p: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(f64::NAN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(VALIDATION_STREAM);
    let mut acc = 0.0;
    for chunk in pairs.chunks(cfg.batch_size) {
        let refs: Vec<&PrefixSuffixPair> = chunk.iter().collect();
        let losses = batch_task_losses::<f32, _>(model, &refs, p, 1.0, cfg.t_mc, &mut rng)?;
        acc += losses.iter().sum::<f64>() * chunk.len() as f64;
    }
    Ok(acc / pairs.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_total: f64,
    pub train_tasks: Vec<f64>,
    pub val_total_det: f64,
    pub val_total_mc: f64,
    pub tf_prob: f64,
    pub weights: Vec<f64>,
    /// Optimizer steps taken so far.
    pub step: u64,
}

pub fn history_header(names: &[String]) -> String {
    let mut h = String::from("epoch,train_total");
    for n in names {
        let _ = write!(h, ",train_task_{n}");
    }
    h.push_str(",val_total_det,val_total_mc,tf_prob");
    for n in names {
        let _ = write!(h, ",w_task_{n}");
    }
    h.push_str(",step");
    h
}

impl HistoryRow {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},{}", self.epoch, self.train_total);
        for x in &self.train_tasks {
            let _ = write!(s, ",{x}");
        }
        let _ = write!(s, ",{},{},{}", self.val_total_det, self.val_total_mc, self.tf_prob);
        for x in &self.weights {
            let _ = write!(s, ",{x}");
        }
        let _ = write!(s, ",{}", self.step);
        s
    }
}

pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "model.uedl";

#[derive(Default)]
pub struct FitOptions<'a> {
    /// Where history and checkpoints go; nothing is written when `None`.
    pub out_dir: Option<&'a Path>,
    pub resume: Option<Checkpoint>,
    /// Stop after this many completed epochs (the schedule still assumes
    /// `cfg.epochs`).
    pub stop_after: Option<usize>,
    pub verbose: bool,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: Model,
    pub history: Vec<HistoryRow>,
    pub checkpoint: Checkpoint,
    pub weights: TaskWeights,
}

struct TrainState {
    model: Model,
    opt: OptimizerState,
    weights: TaskWeights,
    epoch: usize,
}

fn make_checkpoint(st: &TrainState, enc: &EncodingModel, cfg: &TrainConfig) -> Checkpoint {
    let mut ck = Checkpoint::for_model(&st.model, enc, cfg.seed);
    ck.manifest.training = Some(TrainingManifest {
        epoch: st.epoch,
        task_names: task_names(enc),
        task_weights: st.weights.weights.clone(),
        initial_losses: st.weights.initial_losses.clone(),
        optimizer: st.opt.manifest(),
    });
    ck.moments = Some((st.opt.m.clone(), st.opt.v.clone()));
    ck
}

fn initial_state(enc: &EncodingModel, cfg: &TrainConfig, resume: Option<Checkpoint>) -> Result<TrainState> {
    let n_tasks = task_names(enc).len();
    match resume {
        None => {
            let model = Model::new(&cfg.setting, enc, cfg.seed)?;
            let opt = OptimizerState::new(cfg.setting.optimizer, cfg.lr, cfg.weight_decay, &model.params);
            Ok(TrainState {
                model,
                opt,
                weights: TaskWeights::new(n_tasks, cfg.gradnorm_alpha, cfg.gradnorm_lr),
                epoch: 0,
            })
        }
        Some(ck) => {
            let model = ck.model(enc)?;
            let tm = ck
                .manifest
                .training
                .clone()
                .ok_or_else(|| CoreError::Checkpoint("checkpoint has no training state to resume".into()))?;
            let moments = ck.moments.clone().expect("training state implies moments");
            Ok(TrainState {
                model,
                opt: OptimizerState::from_manifest(&tm.optimizer, moments),
                weights: TaskWeights {
                    weights: tm.task_weights,
                    alpha: cfg.gradnorm_alpha,
                    lr: cfg.gradnorm_lr,
                    initial_losses: tm.initial_losses,
                },
                epoch: tm.epoch,
            })
        }
    }
}

fn write_history(dir: &Path, names: &[String], keep: &[String], rows: &[HistoryRow]) -> Result<()> {
    let mut s = history_header(names);
    s.push('\n');
    for line in keep {
        s.push_str(line);
        s.push('\n');
    }
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    std::fs::write(dir.join(HISTORY_FILE), s)?;
    Ok(())
}

/// Earlier history lines to keep when resuming at `start_epoch`.
fn previous_history(dir: &Path, start_epoch: usize) -> Vec<String> {
    let Ok(text) = std::fs::read_to_string(dir.join(HISTORY_FILE)) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|e| e.parse::<usize>().ok())
                .is_some_and(|e| e < start_epoch)
        })
        .map(str::to_string)
        .collect()
}

/// Trains for `cfg.epochs` epochs (or until `stop_after`) without early
/// stopping. A non-finite loss aborts the run and leaves the last written
/// checkpoint untouched.
pub fn fit(
    train: &[PrefixSuffixPair],
    val: &[PrefixSuffixPair],
    enc: &EncodingModel,
    cfg: &TrainConfig,
    opts: FitOptions<'_>,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CoreError::Data("no training pairs".into()));
    }
    let names = task_names(enc);
    let mut st = initial_state(enc, cfg, opts.resume)?;
    let end = opts.stop_after.unwrap_or(cfg.epochs).min(cfg.epochs);
    let keep = opts.out_dir.map(|d| previous_history(d, st.epoch)).unwrap_or_default();
    let mut history = Vec::new();

    while st.epoch < end {
        let epoch = st.epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let tf = teacher_forcing_prob(epoch, cfg.epochs, cfg.tf_start, cfg.tf_decay_start);

        let mut sum_total = 0.0;
        let mut sum_tasks = vec![0.0; names.len()];
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PrefixSuffixPair> = chunk.iter().map(|&i| &train[i]).collect();
            let mut out = train_step(&st.model, enc, &batch, &st.weights, cfg, tf, &mut rng)?;
            let bd = &out.breakdown;
            if !bd.total.is_finite() {
                return Err(CoreError::NonFinite(format!("training loss at epoch {epoch}")));
            }
            if st.weights.initial_losses.is_none() {
                st.weights.initial_losses = Some(bd.tasks.clone());
            }
            clip_global_norm(&mut out.grads, cfg.clip_norm);
            st.opt.step(&mut st.model.params, &out.grads)?;
            if cfg.gradnorm {
                let initial = st.weights.initial_losses.clone().expect("set above");
                let ratios = loss_ratios(&bd.tasks, &initial);
                gradnorm_step(&mut st.weights, &out.task_grad_norms, &ratios);
            }
            sum_total += bd.total;
            for (a, x) in sum_tasks.iter_mut().zip(&bd.tasks) {
                *a += x;
            }
            n_batches += 1;
        }

        let val_det = validation_loss(&st.model, val, cfg, 0.0)?;
        let val_mc = validation_loss(&st.model, val, cfg, cfg.dropout)?;
        if !val.is_empty() && !val_det.is_finite() {
            return Err(CoreError::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let nb = n_batches as f64;
        let row = HistoryRow {
            epoch,
            train_total: sum_total / nb,
            train_tasks: sum_tasks.iter().map(|x| x / nb).collect(),
            val_total_det: val_det,
            val_total_mc: val_mc,
            tf_prob: tf,
            weights: st.weights.weights.clone(),
            step: st.opt.step,
        };
        if opts.verbose {
            eprintln!(
                "epoch {:>4}  train {:>10.4}  val(det) {:>10.4}  val(mc) {:>10.4}  tf {:.3}",
                epoch, row.train_total, row.val_total_det, row.val_total_mc, tf
            );
        }
        history.push(row);
        st.epoch += 1;

        if let Some(dir) = opts.out_dir {
            write_history(dir, &names, &keep, &history)?;
            let every = cfg.checkpoint_every.max(1);
            if st.epoch % every == 0 || st.epoch == end {
                make_checkpoint(&st, enc, cfg).save(&dir.join(CHECKPOINT_FILE))?;
            }
        }
    }

    let checkpoint = make_checkpoint(&st, enc, cfg);
    Ok(FitResult {
        model: st.model,
        history,
        checkpoint,
        weights: st.weights,
    })
}
