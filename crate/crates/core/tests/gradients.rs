mod common;

use common::*;
use ndarray::Array2;
use pvad::nn::loss::softmax_xent_sum;
use pvad::nn::{Adam, AdamConfig, Linear, LstmStack, ParamSet};
use pvad::pvad::{PvadClass, PvadModel};
use rand::Rng;

const TRIALS: u64 = 100;

fn worst(trial: fn(u64) -> f64) -> f64 {
    (0..TRIALS).map(trial).fold(0.0, f64::max)
}

#[test]
fn lstm_gradients_match_finite_differences() {
    let e = worst(lstm_trial);
    assert!(e < REL_TOL, "worst relative error {e:e}");
}

#[test]
fn conv1d_gradients_match_finite_differences() {
    let e = worst(conv1d_trial);
    assert!(e < REL_TOL, "worst relative error {e:e}");
}

#[test]
fn linear_gradients_match_finite_differences() {
    let e = worst(linear_trial);
    assert!(e < REL_TOL, "worst relative error {e:e}");
}

#[test]
fn softmax_xent_gradients_match_finite_differences() {
    let e = worst(softmax_xent_trial);
    assert!(e < REL_TOL, "worst relative error {e:e}");
}

#[test]
fn l1_gradients_match_finite_differences() {
    let e = worst(l1_trial);
    assert!(e < REL_TOL, "worst relative error {e:e}");
}

#[test]
fn pvad_loss_gradients_match_finite_differences() {
    let e = worst(pvad_trial);
    assert!(e < REL_TOL, "worst relative error {e:e}");
}

#[test]
fn clamped_similarity_passes_no_gradient_to_scaling() {
    let mut r = rng(5);
    let mut model = PvadModel::<f64>::with_sizes(3, 4, 2, &mut r);
    let x = random_matrix(&mut r, 5, 3, 1.0);
    let labels = [PvadClass::Tss, PvadClass::Ntss, PvadClass::Tss, PvadClass::Ntss, PvadClass::Ns];
    // s' = 2s + 2 > 1 for all s in [-0.4, 1]
    model.alpha = 2.0;
    model.beta = 2.0;
    let sims = [0.9, 0.5, -0.4, 0.0, 0.3];
    let (_, _, g) = model.loss_sum_and_grad(x.view(), &sims, &labels, None).unwrap();
    assert_eq!((g.alpha, g.beta), (0.0, 0.0));
}

#[test]
fn one_small_adam_step_does_not_increase_batch_loss() {
    for seed in 0..TRIALS {
        let mut r = rng(1000 + seed);
        let (t, d, h) = (r.random_range(2..=6), r.random_range(1..=3), r.random_range(1..=4));
        let mut lstm = LstmStack::<f64>::init("enc", d, h, 1, &mut r);
        let mut head = Linear::<f64>::init("head", h, 2, &mut r);
        let x = random_matrix(&mut r, t, d, 1.0);
        let y: Vec<usize> = (0..t).map(|_| r.random_range(0..2)).collect();
        let mask = vec![true; t];
        let loss = |lstm: &LstmStack<f64>, head: &Linear<f64>| -> (f64, LstmStack<f64>) {
            let (hs, _, cache) = lstm.forward(x.view(), None).unwrap();
            let z = head.forward(hs.view()).unwrap();
            let (s, c, gz) = softmax_xent_sum(z.view(), &y, &mask).unwrap();
            let (_, gh) = head.backward(hs.view(), gz.view()).unwrap();
            let (g, _) = lstm.backward(&cache, gh.view()).unwrap();
            (s / c as f64, g)
        };
        let (before, mut g) = loss(&lstm, &head);
        g.scale(1.0 / t as f64);
        let mut adam = Adam::new(&lstm, AdamConfig::default());
        adam.step(&mut lstm, &g, 1e-7).unwrap();
        let (after, _) = loss(&lstm, &head);
        assert!(after <= before, "seed {seed}: {before} -> {after}");
        let _ = &mut head;
    }
}

#[test]
fn gradients_in_f32_track_f64() {
    let mut r = rng(77);
    let m64 = PvadModel::<f64>::with_sizes(40, 8, 2, &mut r);
    let m32: PvadModel<f32> = m64.cast();
    let x = random_matrix(&mut r, 20, 40, 2.0);
    let sims: Vec<f64> = (0..20).map(|_| r.random_range(-1.0..1.0)).collect();
    let labels: Vec<PvadClass> = (0..20).map(|_| PvadClass::ALL[r.random_range(0..3)]).collect();
    let (l64, _, g64) = m64.loss_sum_and_grad(x.view(), &sims, &labels, None).unwrap();
    let x32: Array2<f32> = x.mapv(|v| v as f32);
    let s32: Vec<f32> = sims.iter().map(|&v| v as f32).collect();
    let (l32, _, g32) = m32.loss_sum_and_grad(x32.view(), &s32, &labels, None).unwrap();
    assert!((l64 - l32).abs() < 1e-4 * l64.abs());
    let diff: f64 = g64
        .to_flat()
        .iter()
        .zip(g32.to_flat())
        .map(|(a, b)| (a - b as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(diff < 1e-4 * g64.global_norm());
}
