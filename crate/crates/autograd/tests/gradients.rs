use std::sync::Arc;

use autograd::{grad_check, Graph, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Reduces a matrix node to a scalar through fixed random weights so every
/// output element contributes with a distinct coefficient.
fn weighted_sum(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = g.constant(Tensor::new(&shape, w)?);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

fn check<F>(name: &str, params: Vec<Tensor<f64>>, f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let report = grad_check(f, &params, EPS, TOL).unwrap();
    assert!(report.passed(), "{name}: worst relative error {}", report.worst());
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100u64 {
        let (r, c, k) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..4));
        let a = random(&mut rng, r, c, -2.0, 2.0);
        let b = random(&mut rng, r, c, -2.0, 2.0);
        let pos = random(&mut rng, r, c, 0.5, 3.0);
        let m = random(&mut rng, c, k, -1.0, 1.0);
        let bias = random(&mut rng, 1, c, -1.0, 1.0);
        let s = trial;

        check("matmul", vec![a.clone(), m.clone()], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, s)
        });
        check("add", vec![a.clone(), b.clone()], |g, v| {
            let y = g.add(v[0], v[1])?;
            weighted_sum(g, y, s)
        });
        check("sub", vec![a.clone(), b.clone()], |g, v| {
            let y = g.sub(v[0], v[1])?;
            weighted_sum(g, y, s)
        });
        check("mul", vec![a.clone(), b.clone()], |g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted_sum(g, y, s)
        });
        check("div", vec![a.clone(), pos.clone()], |g, v| {
            let y = g.div(v[0], v[1])?;
            weighted_sum(g, y, s)
        });
        check("add_bias", vec![a.clone(), bias.clone()], |g, v| {
            let y = g.add_bias(v[0], v[1])?;
            weighted_sum(g, y, s)
        });
        check("scale+offset", vec![a.clone()], |g, v| {
            let y = g.scale(v[0], -1.7);
            let y = g.offset(y, 0.3);
            weighted_sum(g, y, s)
        });
        check("concat", vec![a.clone(), b.clone()], |g, v| {
            let y = g.concat_cols(&[v[0], v[1]])?;
            let z = g.concat_rows(&[y, y])?;
            weighted_sum(g, z, s)
        });
        check("slice", vec![a.clone()], |g, v| {
            let cols = g.value(v[0]).cols();
            let y = g.slice_cols(v[0], cols / 2, cols)?;
            weighted_sum(g, y, s)
        });
        check("gather", vec![m.clone()], |g, v| {
            let rows = g.value(v[0]).rows();
            let idx: Vec<usize> = (0..5).map(|i| (i * 7 + 1) % rows).collect();
            let y = g.gather(v[0], &idx)?;
            weighted_sum(g, y, s)
        });
        check("pick", vec![a.clone()], |g, v| {
            let (rows, cols) = (g.value(v[0]).rows(), g.value(v[0]).cols());
            let idx: Vec<usize> = (0..rows).map(|i| (i * 3 + 1) % cols).collect();
            let y = g.pick(v[0], &idx)?;
            weighted_sum(g, y, s)
        });
        check("sigmoid", vec![a.clone()], |g, v| {
            let y = g.sigmoid(v[0]);
            weighted_sum(g, y, s)
        });
        check("tanh", vec![a.clone()], |g, v| {
            let y = g.tanh(v[0]);
            weighted_sum(g, y, s)
        });
        check("exp", vec![a.clone()], |g, v| {
            let y = g.exp(v[0]);
            weighted_sum(g, y, s)
        });
        check("log", vec![pos.clone()], |g, v| {
            let y = g.log(v[0]);
            weighted_sum(g, y, s)
        });
        check("square", vec![a.clone()], |g, v| {
            let y = g.square(v[0]);
            weighted_sum(g, y, s)
        });
        check("softmax", vec![a.clone()], |g, v| {
            let y = g.softmax(v[0]);
            weighted_sum(g, y, s)
        });
        check("log_softmax", vec![a.clone()], |g, v| {
            let y = g.log_softmax(v[0]);
            weighted_sum(g, y, s)
        });
        check("sum+mean", vec![a.clone()], |g, v| {
            let sq = g.square(v[0]);
            let s1 = g.sum(sq);
            let m1 = g.mean(v[0]);
            g.add(s1, m1)
        });
        check("dropout", vec![a.clone()], |g, v| {
            let shape = g.shape(v[0]).to_vec();
            let n: usize = shape.iter().product();
            let mask: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 / 0.9 }).collect();
            let y = g.dropout(v[0], Arc::new(Tensor::new(&shape, mask)?))?;
            weighted_sum(g, y, s)
        });
        check("where_rows", vec![a.clone(), b.clone()], |g, v| {
            let rows = g.value(v[0]).rows();
            let take: Vec<bool> = (0..rows).map(|i| i % 2 == 0).collect();
            let y = g.where_rows(&take, v[0], v[1])?;
            weighted_sum(g, y, s)
        });
        // Points away from the clamp boundaries.
        let interior = a.map(|x| if (x.abs() - 1.0).abs() < 0.05 { x * 0.5 } else { x });
        check("clamp", vec![interior], |g, v| {
            let y = g.clamp(v[0], -1.0, 1.0);
            weighted_sum(g, y, s)
        });
    }
}

#[test]
fn softmax_cross_entropy_head_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let h = random(&mut rng, 4, 6, -1.0, 1.0);
        let w = random(&mut rng, 6, 5, -1.0, 1.0);
        let targets: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
        let report = grad_check(
            |g, v| {
                let logits = g.matmul(v[0], v[1])?;
                let ls = g.log_softmax(logits);
                let picked = g.pick(ls, &targets)?;
                let m = g.mean(picked);
                Ok(g.scale(m, -1.0))
            },
            &[h, w],
            EPS,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "worst {}", report.worst());
    }
}

#[test]
fn linear_function_gradient_is_exact() {
    let x = Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
    let report = grad_check(
        |g, v| {
            let w = g.constant(Tensor::matrix(3, 1, vec![2.0, 3.0, -1.0])?);
            let y = g.matmul(v[0], w)?;
            Ok(g.sum(y))
        },
        &[x],
        EPS,
        1e-10,
    )
    .unwrap();
    assert!(report.passed(), "worst {}", report.worst());
}

fn build_f(g: &mut Graph<f64>, x: Var) -> Result<Var> {
    let t = g.tanh(x);
    let s = g.square(t);
    Ok(g.sum(s))
}

fn build_h(g: &mut Graph<f64>, x: Var) -> Result<Var> {
    let e = g.sigmoid(x);
    Ok(g.mean(e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear(
        vals in proptest::collection::vec(-3.0f64..3.0, 6),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let x = Tensor::matrix(2, 3, vals).unwrap();

        let grad_of = |which: u8| {
            let mut g = Graph::<f64>::new();
            let v = g.param(x.clone());
            let out = match which {
                0 => build_f(&mut g, v).unwrap(),
                1 => build_h(&mut g, v).unwrap(),
                _ => {
                    let f = build_f(&mut g, v).unwrap();
                    let h = build_h(&mut g, v).unwrap();
                    let fa = g.scale(f, a);
                    let hb = g.scale(h, b);
                    g.add(fa, hb).unwrap()
                }
            };
            g.backward(out).unwrap().wrt(v)
        };
        let (gf, gh, gc) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..6 {
            let want = a * gf.data()[i] + b * gh.data()[i];
            prop_assert!((gc.data()[i] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_inputs_give_bit_identical_gradients() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f32>::new();
        let x = g.param(random(&mut rng, 8, 16, -1.0, 1.0).cast());
        let w = g.param(random(&mut rng, 16, 4, -1.0, 1.0).cast());
        let y = g.matmul(x, w).unwrap();
        let y = g.tanh(y);
        let l = g.log_softmax(y);
        let l = g.sum(l);
        let grads = g.backward(l).unwrap();
        (g.value(l).clone(), grads.wrt(x), grads.wrt(w))
    };
    assert_eq!(run(), run());
}
