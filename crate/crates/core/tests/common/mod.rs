//! Finite-difference gradient oracle shared by the gradient tests and the
//! acceptance suite. Everything here runs in f64 and only uses forward
//! passes of the code under test.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use pvad::nn::conv1d::Conv1d;
use pvad::nn::loss::{l1_loss_sum, softmax_xent_sum};
use pvad::nn::{Linear, LstmStack, ParamSet};
use pvad::pvad::{PvadClass, PvadModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-5;
/// Denominator floor for the relative error, so gradients that are
/// numerically zero are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Central differences of `loss` with respect to every parameter of `params`.
pub fn numeric_param_grad<P: ParamSet<f64>>(params: &P, loss: impl Fn(&P) -> f64) -> Vec<f64> {
    let n = params.num_params();
    let mut out = Vec::with_capacity(n);
    let mut work = params.clone();
    for idx in 0..n {
        let orig = get(&work, idx);
        set(&mut work, idx, orig + FD_STEP);
        let up = loss(&work);
        set(&mut work, idx, orig - FD_STEP);
        let down = loss(&work);
        set(&mut work, idx, orig);
        out.push((up - down) / (2.0 * FD_STEP));
    }
    out
}

pub fn numeric_input_grad(x: &Array2<f64>, loss: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut work = x.clone();
    let mut g = Array2::zeros(x.dim());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let orig = work[[i, j]];
            work[[i, j]] = orig + FD_STEP;
            let up = loss(&work);
            work[[i, j]] = orig - FD_STEP;
            let down = loss(&work);
            work[[i, j]] = orig;
            g[[i, j]] = (up - down) / (2.0 * FD_STEP);
        }
    }
    g
}

fn get<P: ParamSet<f64>>(p: &P, mut idx: usize) -> f64 {
    for s in p.slices() {
        if idx < s.len() {
            return s[idx];
        }
        idx -= s.len();
    }
    panic!("index out of range")
}

fn set<P: ParamSet<f64>>(p: &mut P, mut idx: usize, v: f64) {
    for s in p.slices_mut() {
        if idx < s.len() {
            s[idx] = v;
            return;
        }
        idx -= s.len();
    }
    panic!("index out of range")
}

/// Largest relative error between two gradient vectors.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

fn weighted_sum(y: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (y * r).sum()
}

/// One random LSTM instance: returns the worst relative error over
/// parameters and inputs.
pub fn lstm_trial(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, d, h, layers) = (
        r.random_range(1..=6),
        r.random_range(1..=3),
        r.random_range(1..=4),
        r.random_range(1..=2),
    );
    let mut lstm = LstmStack::<f64>::init("enc", d, h, layers, &mut r);
    // move biases off their init values so every gate is exercised
    for l in &mut lstm.layers {
        l.bias.mapv_inplace(|b| b + r.random_range(-0.5..0.5));
    }
    let x = random_matrix(&mut r, t, d, 1.0);
    let proj = random_matrix(&mut r, t, h, 1.0);
    let (_, _, cache) = lstm.forward(x.view(), None).unwrap();
    let (g, gx) = lstm.backward(&cache, proj.view()).unwrap();
    let loss_p = |p: &LstmStack<f64>| weighted_sum(&p.forward(x.view(), None).unwrap().0, &proj);
    let num = numeric_param_grad(&lstm, loss_p);
    let num_x = numeric_input_grad(&x, |xx| weighted_sum(&lstm.forward(xx.view(), None).unwrap().0, &proj));
    max_rel_err(&g.to_flat(), &num).max(max_rel_err(gx.as_slice().unwrap(), num_x.as_slice().unwrap()))
}

pub fn conv1d_trial(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, cin, cout) = (r.random_range(1..=6), r.random_range(1..=4), r.random_range(1..=4));
    let k = [1, 3, 5][r.random_range(0..3)];
    let mut conv = Conv1d::<f64>::init("c", cin, cout, k, &mut r).unwrap();
    conv.bias = Array1::from_shape_fn(cout, |_| r.random_range(-1.0..1.0));
    let x = random_matrix(&mut r, t, cin, 1.0);
    let proj = random_matrix(&mut r, t, cout, 1.0);
    let (_, cache) = conv.forward(x.view()).unwrap();
    let (g, gx) = conv.backward(&cache, proj.view()).unwrap();
    let num = numeric_param_grad(&conv, |p| weighted_sum(&p.forward(x.view()).unwrap().0, &proj));
    let num_x = numeric_input_grad(&x, |xx| weighted_sum(&conv.forward(xx.view()).unwrap().0, &proj));
    max_rel_err(&g.to_flat(), &num).max(max_rel_err(gx.as_slice().unwrap(), num_x.as_slice().unwrap()))
}

pub fn linear_trial(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, din, dout) = (r.random_range(1..=6), r.random_range(1..=5), r.random_range(1..=5));
    let mut lin = Linear::<f64>::init("l", din, dout, &mut r);
    lin.bias = Array1::from_shape_fn(dout, |_| r.random_range(-1.0..1.0));
    let x = random_matrix(&mut r, t, din, 1.0);
    let proj = random_matrix(&mut r, t, dout, 1.0);
    let (g, gx) = lin.backward(x.view(), proj.view()).unwrap();
    let num = numeric_param_grad(&lin, |p| weighted_sum(&p.forward(x.view()).unwrap(), &proj));
    let num_x = numeric_input_grad(&x, |xx| weighted_sum(&lin.forward(xx.view()).unwrap(), &proj));
    max_rel_err(&g.to_flat(), &num).max(max_rel_err(gx.as_slice().unwrap(), num_x.as_slice().unwrap()))
}

pub fn softmax_xent_trial(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, k) = (r.random_range(1..=6), r.random_range(2..=4));
    let logits = random_matrix(&mut r, t, k, 3.0);
    let targets: Vec<usize> = (0..t).map(|_| r.random_range(0..k)).collect();
    let mut mask: Vec<bool> = (0..t).map(|_| r.random_bool(0.8)).collect();
    mask[0] = true;
    let (_, count, g) = softmax_xent_sum(logits.view(), &targets, &mask).unwrap();
    let loss = |z: &Array2<f64>| {
        let (s, c, _) = softmax_xent_sum(z.view(), &targets, &mask).unwrap();
        s / c as f64
    };
    let num = numeric_input_grad(&logits, loss);
    let analytic: Vec<f64> = g.iter().map(|v| v / count as f64).collect();
    max_rel_err(&analytic, num.as_slice().unwrap())
}

pub fn l1_trial(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, d) = (r.random_range(1..=6), r.random_range(1..=5));
    let target = random_matrix(&mut r, t, d, 1.0);
    // keep every residual at least 1e-3 away from the kink
    let pred = Array2::from_shape_fn((t, d), |(i, j)| {
        let delta: f64 = r.random_range(1e-3..1.0);
        target[[i, j]] + if r.random_bool(0.5) { delta } else { -delta }
    });
    let mut mask: Vec<bool> = (0..t).map(|_| r.random_bool(0.8)).collect();
    mask[0] = true;
    let (_, count, g) = l1_loss_sum(pred.view(), target.view(), &mask).unwrap();
    let num = numeric_input_grad(&pred, |p| {
        let (s, c, _) = l1_loss_sum(p.view(), target.view(), &mask).unwrap();
        s / c as f64
    });
    let analytic: Vec<f64> = g.iter().map(|v| v / count as f64).collect();
    max_rel_err(&analytic, num.as_slice().unwrap())
}

/// Full PVAD loss (encoder, head, α, β) on a tiny model, with α and β chosen
/// so every frame's scaled similarity lies inside the clamp interval.
pub fn pvad_trial(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (t, d, h) = (r.random_range(1..=6), r.random_range(1..=3), r.random_range(1..=4));
    let mut model = PvadModel::<f64>::with_sizes(d, h, 2, &mut r);
    model.alpha = r.random_range(0.1..0.4);
    model.beta = r.random_range(0.45..0.55);
    model.head.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
    let x = random_matrix(&mut r, t, d, 1.0);
    let sims: Vec<f64> = (0..t).map(|_| r.random_range(-1.0..1.0)).collect();
    let labels: Vec<PvadClass> = (0..t).map(|_| PvadClass::ALL[r.random_range(0..3)]).collect();
    let (_, count, g) = model.loss_sum_and_grad(x.view(), &sims, &labels, None).unwrap();
    let loss = |m: &PvadModel<f64>| {
        let (s, c, _) = m.loss_sum_and_grad(x.view(), &sims, &labels, None).unwrap();
        s / c as f64
    };
    let num = numeric_param_grad(&model, loss);
    let analytic: Vec<f64> = g.to_flat().iter().map(|v| v / count as f64).collect();
    max_rel_err(&analytic, &num)
}
