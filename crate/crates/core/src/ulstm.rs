//! Encoder-decoder LSTM with dropout masks and mean/log-variance heads.
//!
//! Forward passes are written against an [`autograd::Graph`] so the same code
//! trains (`f32` leaves), samples (`f32` constants) and gets gradient-checked
//! (`f64`). The encoder and decoder share the embedding matrices.

use std::sync::Arc;

use autograd::{Graph, Scalar, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::features::{EncodedEvent, EncodingModel, PrefixSuffixPair};
use crate::setting::HyperparameterSetting;

/// Log-variance outputs are clipped to `[-LOGVAR_CLAMP, LOGVAR_CLAMP]`.
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingShape {
    pub rows: usize,
    pub dim: usize,
}

/// Column ranges of the head output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadLayout {
    pub n_con: usize,
    /// `(logit_start, classes)` per decoder categorical attribute; the
    /// log-variances follow the logits.
    pub cat: Vec<(usize, usize)>,
    pub width: usize,
}

impl HeadLayout {
    pub fn con_mean(&self, j: usize) -> usize {
        j
    }

    pub fn con_logvar(&self, j: usize) -> usize {
        self.n_con + j
    }

    pub fn logits(&self, d: usize) -> std::ops::Range<usize> {
        let (s, c) = self.cat[d];
        s..s + c
    }

    pub fn cat_logvar(&self, d: usize) -> std::ops::Range<usize> {
        let (s, c) = self.cat[d];
        s + c..s + 2 * c
    }
}

/// Shapes derived from a setting and a fitted encoding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: usize,
    pub layers: usize,
    /// One per categorical attribute of the encoding model.
    pub embeddings: Vec<EmbeddingShape>,
    pub enc_cat: Vec<usize>,
    pub enc_con: usize,
    pub dec_cat: Vec<usize>,
    pub dec_con: usize,
}

impl Architecture {
    pub fn new(setting: &HyperparameterSetting, enc: &EncodingModel) -> Result<Self> {
        setting.validate()?;
        Ok(Self {
            hidden: setting.hidden_size,
            layers: setting.encoder_layers,
            embeddings: enc
                .categorical
                .iter()
                .map(|c| EmbeddingShape {
                    rows: c.n_classes(),
                    dim: c.embed_dim,
                })
                .collect(),
            enc_cat: enc.routing.encoder_categorical.clone(),
            enc_con: enc.routing.encoder_continuous.len(),
            dec_cat: enc.routing.decoder_categorical.clone(),
            dec_con: enc.routing.decoder_continuous.len(),
        })
    }

    fn input_width(&self, cats: &[usize], n_con: usize) -> usize {
        cats.iter().map(|&a| self.embeddings[a].dim).sum::<usize>() + n_con
    }

    pub fn encoder_input_width(&self) -> usize {
        self.input_width(&self.enc_cat, self.enc_con)
    }

    pub fn decoder_input_width(&self) -> usize {
        self.input_width(&self.dec_cat, self.dec_con)
    }

    pub fn head_layout(&self) -> HeadLayout {
        let mut off = 2 * self.dec_con;
        let mut cat = Vec::new();
        for &a in &self.dec_cat {
            let c = self.embeddings[a].rows;
            cat.push((off, c));
            off += 2 * c;
        }
        HeadLayout {
            n_con: self.dec_con,
            cat,
            width: off,
        }
    }

    pub fn n_embeddings(&self) -> usize {
        self.embeddings.len()
    }

    /// Index of `[w, u, b]` for encoder layer `l`.
    pub fn enc_layer(&self, l: usize) -> usize {
        self.n_embeddings() + 3 * l
    }

    pub fn dec_layer(&self, l: usize) -> usize {
        self.n_embeddings() + 3 * (self.layers + l)
    }

    pub fn head_w(&self) -> usize {
        self.n_embeddings() + 6 * self.layers
    }

    pub fn head_b(&self) -> usize {
        self.head_w() + 1
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_specs(&self, enc: Option<&EncodingModel>) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        let mut out = Vec::new();
        for (a, e) in self.embeddings.iter().enumerate() {
            let name = enc.map_or_else(|| a.to_string(), |m| m.categorical[a].name.clone());
            out.push((format!("emb.{name}"), vec![e.rows, e.dim]));
        }
        for (side, width) in [("enc", self.encoder_input_width()), ("dec", self.decoder_input_width())] {
            for l in 0..self.layers {
                let inp = if l == 0 { width } else { h };
                out.push((format!("{side}.{l}.w"), vec![inp, 4 * h]));
                out.push((format!("{side}.{l}.u"), vec![h, 4 * h]));
                out.push((format!("{side}.{l}.b"), vec![4 * h]));
            }
        }
        out.push(("head.w".into(), vec![h, self.head_layout().width]));
        out.push(("head.b".into(), vec![self.head_layout().width]));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors.iter().map(Tensor::norm_sq).sum()
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Adds every tensor to the graph as a trainable leaf.
    pub fn leaves(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Adds every tensor to the graph as a constant.
    pub fn constants(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| g.constant(t.clone())).collect()
    }

    /// Hex SHA-256 over names and raw values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            h.update(n.as_bytes());
            for x in t.data() {
                h.update(x.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases except a forget-gate
/// bias of 1.
pub fn init_params(arch: &Architecture, enc: Option<&EncodingModel>, seed: u64) -> ModelParams<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (arch.hidden as f64).sqrt();
    let h = arch.hidden;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape) in arch.param_specs(enc) {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = if name.ends_with(".b") {
            (0..n).map(|i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 }).collect()
        } else if name == "head.b" {
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect()
        };
        tensors.push(Tensor::new(&shape, data).expect("spec shapes are positive"));
        names.push(name);
    }
    ModelParams { names, tensors }
}

/// A trained (or freshly initialized) network with its shapes and setting.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub setting: HyperparameterSetting,
    pub arch: Architecture,
    pub params: ModelParams<f32>,
}

impl Model {
    pub fn new(setting: &HyperparameterSetting, enc: &EncodingModel, seed: u64) -> Result<Self> {
        let arch = Architecture::new(setting, enc)?;
        let params = init_params(&arch, Some(enc), seed);
        Ok(Self {
            setting: setting.clone(),
            arch,
            params,
        })
    }
}

impl Model {
    /// Copy with logit weights scaled by `logit_scale` and every
    /// log-variance output fixed at `logvar` (zero weights, constant bias).
    /// The decoder also stops reading its continuous inputs, so the residual
    /// noise of sampled times cannot move later logits. With a large scale
    /// and `logvar = -LOGVAR_CLAMP`, sampled and greedy decodes then agree.
    pub fn degenerate(&self, logit_scale: f32, logvar: f32) -> Self {
        let mut out = self.clone();
        let layout = self.arch.head_layout();
        let width = layout.width;
        let mut logvar_cols: Vec<usize> = (0..layout.n_con).map(|j| layout.con_logvar(j)).collect();
        let mut logit_cols = Vec::new();
        for d in 0..layout.cat.len() {
            logit_cols.extend(layout.logits(d));
            logvar_cols.extend(layout.cat_logvar(d));
        }
        let (hw, hb) = (self.arch.head_w(), self.arch.head_b());
        let w = out.params.tensors[hw].data_mut();
        for r in 0..w.len() / width {
            for &c in &logit_cols {
                w[r * width + c] *= logit_scale;
            }
            for &c in &logvar_cols {
                w[r * width + c] = 0.0;
            }
        }
        let b = out.params.tensors[hb].data_mut();
        for &c in &logit_cols {
            b[c] *= logit_scale;
        }
        for &c in &logvar_cols {
            b[c] = logvar;
        }
        let dec_w = out.params.tensors[self.arch.dec_layer(0)].data_mut();
        let cols = 4 * self.arch.hidden;
        let first_con = self.arch.decoder_input_width() - self.arch.dec_con;
        dec_w[first_con * cols..].fill(0.0);
        out
    }
}

pub type Mask<T> = Option<Arc<Tensor<T>>>;

/// Dropout masks for one LSTM stack.
#[derive(Clone, Debug, PartialEq)]
pub struct StackMasks<T: Scalar = f32> {
    /// Per layer; layer 0 (the embedded input) is never dropped.
    pub input: Vec<Mask<T>>,
    pub recurrent: Vec<Mask<T>>,
    /// Decoder only: applied to the top hidden state before the head.
    pub head: Mask<T>,
}

impl<T: Scalar> StackMasks<T> {
    pub fn none(layers: usize) -> Self {
        Self {
            input: vec![None; layers],
            recurrent: vec![None; layers],
            head: None,
        }
    }

    /// Keeps only the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let sel = |m: &Mask<T>| {
            m.as_ref().map(|t| {
                let cols = t.cols();
                let mut data = Vec::with_capacity(rows.len() * cols);
                for &r in rows {
                    data.extend_from_slice(t.row(r));
                }
                Arc::new(Tensor::matrix(rows.len(), cols, data).expect("non-empty selection"))
            })
        };
        Self {
            input: self.input.iter().map(sel).collect(),
            recurrent: self.recurrent.iter().map(sel).collect(),
            head: sel(&self.head),
        }
    }
}

/// Where each batch row draws its randomness from.
pub enum RowRngs<'a, R> {
    /// All rows draw in turn from one generator.
    Shared(&'a mut R),
    /// Row `r` draws from its own generator `r`.
    PerRow(&'a mut [R]),
}

impl<R: Rng> RowRngs<'_, R> {
    pub fn row(&mut self, r: usize) -> &mut R {
        match self {
            RowRngs::Shared(g) => g,
            RowRngs::PerRow(v) => &mut v[r],
        }
    }
}

/// Draws inverted-dropout masks (entries `0` or `1/(1-p)`) for a stack of
/// `layers` LSTM layers over `rows` rows. With `p == 0` nothing is drawn and
/// all masks are `None`.
///
/// Per row the draw order is: for each layer its input mask (layers above
/// the first) then its recurrent mask, then the head mask.
pub fn sample_masks<T: Scalar, R: Rng>(
    rngs: &mut RowRngs<'_, R>,
    rows: usize,
    layers: usize,
    hidden: usize,
    p: f64,
    with_head: bool,
) -> StackMasks<T> {
    if p <= 0.0 {
        return StackMasks::none(layers);
    }
    let keep = T::of(1.0 / (1.0 - p));
    let n_masks = 2 * layers + 1;
    let mut buffers: Vec<Vec<T>> = vec![Vec::with_capacity(rows * hidden); n_masks];
    for r in 0..rows {
        let rng = rngs.row(r);
        let mut draw = |buf: &mut Vec<T>| {
            for _ in 0..hidden {
                buf.push(if rng.random::<f64>() < p { T::zero() } else { keep });
            }
        };
        for l in 0..layers {
            if l > 0 {
                draw(&mut buffers[2 * l]);
            }
            draw(&mut buffers[2 * l + 1]);
        }
        if with_head {
            draw(&mut buffers[2 * layers]);
        }
    }
    let mut it = buffers.into_iter();
    let mut input = Vec::with_capacity(layers);
    let mut recurrent = Vec::with_capacity(layers);
    let to_mask = |b: Vec<T>| Some(Arc::new(Tensor::matrix(rows, hidden, b).expect("positive mask shape")));
    for l in 0..layers {
        let i = it.next().expect("buffer");
        let rc = it.next().expect("buffer");
        input.push(if l > 0 { to_mask(i) } else { None });
        recurrent.push(to_mask(rc));
    }
    let head = it.next().expect("buffer");
    StackMasks {
        input,
        recurrent,
        head: if with_head { to_mask(head) } else { None },
    }
}

/// One time step of routed inputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInput<T: Scalar = f32> {
    /// Per routed categorical attribute, one class index per row.
    pub cat: Vec<Vec<usize>>,
    /// `rows x n_con`, or `None` when no continuous attribute is routed.
    pub con: Option<Tensor<T>>,
}

impl<T: Scalar> StepInput<T> {
    pub fn from_events(events: &[&EncodedEvent]) -> Self {
        let n_cat = events.first().map_or(0, |e| e.cat.len());
        let n_con = events.first().map_or(0, |e| e.con.len());
        let cat = (0..n_cat).map(|j| events.iter().map(|e| e.cat[j]).collect()).collect();
        let con = (n_con > 0).then(|| {
            let data = events.iter().flat_map(|e| e.con.iter().map(|&x| T::of(x))).collect();
            Tensor::matrix(events.len(), n_con, data).expect("consistent event widths")
        });
        Self { cat, con }
    }

    pub fn rows(&self) -> usize {
        self.cat
            .first()
            .map(Vec::len)
            .or_else(|| self.con.as_ref().map(Tensor::rows))
            .unwrap_or(0)
    }
}

/// Padded prefixes of a batch, one [`StepInput`] per position.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput<T: Scalar = f32> {
    pub steps: Vec<StepInput<T>>,
    /// `valid[t][r]`: position `t` of row `r` holds a real event.
    pub valid: Vec<Vec<bool>>,
}

impl<T: Scalar> EncoderInput<T> {
    pub fn from_pairs(pairs: &[&PrefixSuffixPair]) -> Self {
        let len = pairs.first().map_or(0, |p| p.prefix.len());
        let steps = (0..len)
            .map(|t| {
                let evs: Vec<&EncodedEvent> = pairs.iter().map(|p| &p.prefix[t]).collect();
                StepInput::from_events(&evs)
            })
            .collect();
        let valid = (0..len).map(|t| pairs.iter().map(|p| p.mask[t]).collect()).collect();
        Self { steps, valid }
    }
}

/// Per-layer `(h, c)`.
pub type LatentState = Vec<(Var, Var)>;

/// Concatenates the embedding rows of the routed categorical attributes and
/// the raw continuous features.
pub fn embed<T: Scalar>(g: &mut Graph<T>, pv: &[Var], attrs: &[usize], input: &StepInput<T>) -> Result<Var> {
    let mut parts = Vec::with_capacity(attrs.len() + 1);
    for (j, &a) in attrs.iter().enumerate() {
        parts.push(g.gather(pv[a], &input.cat[j])?);
    }
    if let Some(con) = &input.con {
        parts.push(g.constant(con.clone()));
    }
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    Ok(g.concat_cols(&parts)?)
}

/// Gate order in the packed weights is input, forget, cell, output.
#[allow(clippy::too_many_arguments)]
pub fn lstm_cell<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    state: (Var, Var),
    w: Var,
    u: Var,
    b: Var,
    m_in: &Mask<T>,
    m_rec: &Mask<T>,
) -> Result<(Var, Var)> {
    let (h, c) = state;
    let hidden = g.value(h).cols();
    let x = match m_in {
        Some(m) => g.dropout(x, m.clone())?,
        None => x,
    };
    let hr = match m_rec {
        Some(m) => g.dropout(h, m.clone())?,
        None => h,
    };
    let a = g.matmul(x, w)?;
    let r = g.matmul(hr, u)?;
    let s = g.add(a, r)?;
    let z = g.add_bias(s, b)?;
    let zi = g.slice_cols(z, 0, hidden)?;
    let zf = g.slice_cols(z, hidden, 2 * hidden)?;
    let zg = g.slice_cols(z, 2 * hidden, 3 * hidden)?;
    let zo = g.slice_cols(z, 3 * hidden, 4 * hidden)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let gg = g.tanh(zg);
    let o = g.sigmoid(zo);
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, gg)?;
    let c2 = g.add(fc, ig)?;
    let tc = g.tanh(c2);
    let h2 = g.mul(o, tc)?;
    Ok((h2, c2))
}

fn zero_state<T: Scalar>(g: &mut Graph<T>, rows: usize, hidden: usize, layers: usize) -> LatentState {
    (0..layers)
        .map(|_| {
            let h = g.constant(Tensor::zeros(&[rows, hidden]));
            let c = g.constant(Tensor::zeros(&[rows, hidden]));
            (h, c)
        })
        .collect()
}

/// Runs the encoder over a padded batch. Rows keep their state unchanged at
/// padded positions, so the result does not depend on the amount of padding.
pub fn encode<T: Scalar>(
    g: &mut Graph<T>,
    arch: &Architecture,
    pv: &[Var],
    input: &EncoderInput<T>,
    masks: &StackMasks<T>,
) -> Result<LatentState> {
    let rows = input.steps.first().map_or(0, StepInput::rows);
    if rows == 0 {
        return Err(CoreError::Data("empty encoder batch".into()));
    }
    for r in 0..rows {
        if !input.valid.iter().any(|v| v[r]) {
            return Err(CoreError::Data(format!("row {r} has an all-padding prefix")));
        }
    }
    let first = input
        .valid
        .iter()
        .position(|v| v.iter().any(|&b| b))
        .expect("checked above");
    let mut state = zero_state(g, rows, arch.hidden, arch.layers);
    for t in first..input.steps.len() {
        let valid = &input.valid[t];
        let all_valid = valid.iter().all(|&b| b);
        let mut x = embed(g, pv, &arch.enc_cat, &input.steps[t])?;
        for (l, slot) in state.iter_mut().enumerate() {
            let k = arch.enc_layer(l);
            let (h2, c2) = lstm_cell(g, x, *slot, pv[k], pv[k + 1], pv[k + 2], &masks.input[l], &masks.recurrent[l])?;
            let next = if all_valid {
                (h2, c2)
            } else {
                (g.where_rows(valid, h2, slot.0)?, g.where_rows(valid, c2, slot.1)?)
            };
            *slot = next;
            x = next.0;
        }
    }
    Ok(state)
}

/// Output of one decoder step.
#[derive(Clone, Debug)]
pub struct DecoderStep {
    /// `rows x head width`.
    pub out: Var,
    /// The (dropped) top hidden state fed to the head.
    pub head_input: Var,
    pub state: LatentState,
}

pub fn decoder_step<T: Scalar>(
    g: &mut Graph<T>,
    arch: &Architecture,
    pv: &[Var],
    input: &StepInput<T>,
    state: &LatentState,
    masks: &StackMasks<T>,
) -> Result<DecoderStep> {
    let mut x = embed(g, pv, &arch.dec_cat, input)?;
    let mut next = Vec::with_capacity(arch.layers);
    for (l, &slot) in state.iter().enumerate() {
        let k = arch.dec_layer(l);
        let s = lstm_cell(g, x, slot, pv[k], pv[k + 1], pv[k + 2], &masks.input[l], &masks.recurrent[l])?;
        next.push(s);
        x = s.0;
    }
    let head_input = match &masks.head {
        Some(m) => g.dropout(x, m.clone())?,
        None => x,
    };
    let z = g.matmul(head_input, pv[arch.head_w()])?;
    let out = g.add_bias(z, pv[arch.head_b()])?;
    Ok(DecoderStep {
        out,
        head_input,
        state: next,
    })
}

/// Keeps only the given rows of every state tensor.
pub fn select_state<T: Scalar>(g: &mut Graph<T>, state: &LatentState, rows: &[usize]) -> Result<LatentState> {
    state
        .iter()
        .map(|&(h, c)| Ok((g.gather(h, rows)?, g.gather(c, rows)?)))
        .collect()
}

/// Copies state values out of the graph so it can be truncated.
pub fn detach_state<T: Scalar>(g: &Graph<T>, state: &LatentState) -> Vec<(Tensor<T>, Tensor<T>)> {
    state
        .iter()
        .map(|&(h, c)| (g.value(h).clone(), g.value(c).clone()))
        .collect()
}

pub fn attach_state<T: Scalar>(g: &mut Graph<T>, state: Vec<(Tensor<T>, Tensor<T>)>) -> LatentState {
    state
        .into_iter()
        .map(|(h, c)| (g.constant(h), g.constant(c)))
        .collect()
}
