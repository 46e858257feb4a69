//! Attenuated regression and classification losses, the weighted total with
//! L2 penalty, and GradNorm task-weight updates.

use autograd::{Graph, Scalar, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ulstm::LOGVAR_CLAMP;

/// Smallest task weight GradNorm may leave behind.
pub const MIN_TASK_WEIGHT: f64 = 1e-4;

/// Bound on the log loss change used for GradNorm's training-rate ratio.
const MAX_LOG_RATIO: f64 = 20.0;

fn clamp_logvar<T: Scalar>(g: &mut Graph<T>, v: Var) -> Var {
    g.clamp(v, T::of(-LOGVAR_CLAMP), T::of(LOGVAR_CLAMP))
}

/// Mean over positions with `include == 1` of `0.5 * (exp(-v) (y - yhat)^2 + v)`,
/// with `v` clipped to the log-variance range. Zero when nothing is included.
pub fn continuous_loss<T: Scalar>(g: &mut Graph<T>, y: Var, yhat: Var, v: Var, include: &Tensor<T>) -> Result<Var> {
    let count = include.sum_f64();
    if count == 0.0 {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let v = clamp_logvar(g, v);
    let diff = g.sub(y, yhat)?;
    let sq = g.square(diff);
    let neg_v = g.scale(v, -T::one());
    let prec = g.exp(neg_v);
    let weighted = g.mul(prec, sq)?;
    let sum = g.add(weighted, v)?;
    let mask = g.constant(include.clone());
    let masked = g.mul(sum, mask)?;
    let total = g.sum(masked);
    Ok(g.scale(total, T::of(0.5 / count)))
}

/// `t_mc` standard-normal noise tensors of shape `rows x classes`.
pub fn draw_noise<T: Scalar, R: Rng>(rng: &mut R, t_mc: usize, rows: usize, classes: usize) -> Vec<Tensor<T>> {
    (0..t_mc)
        .map(|_| {
            let data = (0..rows * classes)
                .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
                .collect();
            Tensor::matrix(rows, classes, data).expect("positive noise shape")
        })
        .collect()
}

/// Mean over the noise draws of the mean cross-entropy of
/// `softmax(logits + exp(v / 2) * eps_t)` against `targets`, over rows with
/// `include[r]`. Gradients reach both the logits and `v` through the fixed
/// noise `eps`.
pub fn categorical_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    v: Var,
    targets: &[usize],
    include: &[bool],
    eps: &[Tensor<T>],
) -> Result<Var> {
    let count = include.iter().filter(|&&b| b).count();
    if count == 0 || eps.is_empty() {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let rows = g.value(logits).rows();
    let v = clamp_logvar(g, v);
    let half_v = g.scale(v, T::of(0.5));
    let sigma = g.exp(half_v);
    let t_mc = eps.len();
    let (l_rep, s_rep) = if t_mc == 1 {
        (logits, sigma)
    } else {
        (g.concat_rows(&vec![logits; t_mc])?, g.concat_rows(&vec![sigma; t_mc])?)
    };
    let noise = if t_mc == 1 {
        eps[0].clone()
    } else {
        let cols = eps[0].cols();
        let data = eps.iter().flat_map(|e| e.data().iter().copied()).collect();
        Tensor::matrix(rows * t_mc, cols, data)?
    };
    let noise = g.constant(noise);
    let jitter = g.mul(s_rep, noise)?;
    let z = g.add(l_rep, jitter)?;
    let ls = g.log_softmax(z);
    let all_targets: Vec<usize> = targets.iter().copied().cycle().take(rows * t_mc).collect();
    let picked = g.pick(ls, &all_targets)?;
    let weights: Vec<T> = include
        .iter()
        .cycle()
        .take(rows * t_mc)
        .map(|&b| if b { T::one() } else { T::zero() })
        .collect();
    let w = g.constant(Tensor::matrix(rows * t_mc, 1, weights)?);
    let masked = g.mul(picked, w)?;
    let total = g.sum(masked);
    Ok(g.scale(total, T::of(-1.0 / (count * t_mc) as f64)))
}

/// `sum_k w_k L_k (+ lambda * sum ||theta||^2)`.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    task_losses: &[Var],
    weights: &[f64],
    l2: Option<(f64, &[Var])>,
) -> Result<(Var, Option<Var>)> {
    let mut acc: Option<Var> = None;
    for (&l, &w) in task_losses.iter().zip(weights) {
        let term = g.scale(l, T::of(w));
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    let mut total = acc.unwrap_or_else(|| g.constant(Tensor::scalar(T::zero())));
    let mut penalty = None;
    if let Some((lambda, params)) = l2 {
        let mut sq: Option<Var> = None;
        for &p in params {
            let s = g.square(p);
            let s = g.sum(s);
            sq = Some(match sq {
                Some(a) => g.add(a, s)?,
                None => s,
            });
        }
        if let Some(sq) = sq {
            let term = g.scale(sq, T::of(lambda));
            total = g.add(total, term)?;
            penalty = Some(term);
        }
    }
    Ok((total, penalty))
}

/// Per-task loss values and how they combine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task_names: Vec<String>,
    pub tasks: Vec<f64>,
    pub weights: Vec<f64>,
    /// `lambda * sum ||theta||^2`, zero when the penalty is not in the loss.
    pub l2_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// The weighted sum recomputed from the parts.
    pub fn recomposed(&self) -> f64 {
        self.tasks.iter().zip(&self.weights).map(|(l, w)| l * w).sum::<f64>() + self.l2_term
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub lr: f64,
    /// Task losses at the first training step.
    pub initial_losses: Option<Vec<f64>>,
}

impl TaskWeights {
    pub fn new(n_tasks: usize, alpha: f64, lr: f64) -> Self {
        Self {
            weights: vec![1.0; n_tasks],
            alpha,
            lr,
            initial_losses: None,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Relative inverse training rates `r_k = Lt_k / mean(Lt)` with
/// `Lt_k = exp(L_k - L0_k)`.
///
/// The attenuated regression loss can be zero or negative, which rules out the
/// plain quotient `L_k / L0_k`; the exponentiated difference is the same
/// quantity for the log of a positive loss and stays well defined otherwise.
pub fn loss_ratios(losses: &[f64], initial: &[f64]) -> Vec<f64> {
    let lt: Vec<f64> = losses
        .iter()
        .zip(initial)
        .map(|(l, l0)| (l - l0).clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp())
        .collect();
    let mean = lt.iter().sum::<f64>() / lt.len().max(1) as f64;
    lt.iter().map(|x| x / mean).collect()
}

/// One GradNorm step. `grad_norms[k]` is the norm of the unweighted task
/// loss gradient at the shared layer, so `G_k = w_k * grad_norms[k]`.
///
/// Each weight moves by `-lr * sign(G_k - mean(G) * r_k^alpha) * grad_norms[k]`
/// (the gradient of the L1 GradNorm objective with the target held fixed),
/// is floored at [`MIN_TASK_WEIGHT`], and the vector is rescaled to sum to
/// the task count.
pub fn gradnorm_step(weights: &mut TaskWeights, grad_norms: &[f64], ratios: &[f64]) {
    let n = weights.len();
    if n == 0 {
        return;
    }
    let big_g: Vec<f64> = weights.weights.iter().zip(grad_norms).map(|(w, g)| w * g).collect();
    let mean_g = big_g.iter().sum::<f64>() / n as f64;
    for k in 0..n {
        let target = mean_g * ratios[k].powf(weights.alpha);
        let diff = big_g[k] - target;
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        let step = weights.lr * sign * grad_norms[k];
        if step.is_finite() {
            weights.weights[k] -= step;
        }
    }
    normalize_with_floor(&mut weights.weights);
}

/// Rescales to sum to the length while keeping every entry at or above
/// [`MIN_TASK_WEIGHT`]: entries that would fall below are pinned there and
/// the rest share what remains.
fn normalize_with_floor(w: &mut [f64]) {
    let n = w.len() as f64;
    let mut pinned = vec![false; w.len()];
    for x in w.iter_mut() {
        *x = x.max(MIN_TASK_WEIGHT);
    }
    loop {
        let n_pinned = pinned.iter().filter(|&&p| p).count() as f64;
        let free: f64 = w.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(x, _)| x).sum();
        let scale = (n - n_pinned * MIN_TASK_WEIGHT) / free;
        let mut changed = false;
        for (x, p) in w.iter_mut().zip(pinned.iter_mut()) {
            if *p {
                *x = MIN_TASK_WEIGHT;
            } else if *x * scale < MIN_TASK_WEIGHT {
                *p = true;
                changed = true;
            }
        }
        if !changed {
            for (x, &p) in w.iter_mut().zip(&pinned) {
                if !p {
                    *x *= scale;
                }
            }
            return;
        }
    }
}
