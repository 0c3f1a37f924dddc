//! Additive noise at a target SNR and room-impulse-response convolution.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

pub fn mean_square(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}

/// `10 log10(P_signal / P_noise)` with powers measured as mean squares.
pub fn measure_snr_db(signal: &[f32], noise: &[f32]) -> f64 {
    10.0 * (mean_square(signal) / mean_square(noise)).log10()
}

/// `noise` cut or tiled to exactly `len` samples, starting at a random offset.
pub fn fit_noise<R: Rng>(noise: &[f32], len: usize, rng: &mut R) -> Result<Vec<f32>> {
    if noise.is_empty() {
        return Err(Error::invalid("noise clip is empty"));
    }
    let start = if noise.len() > len {
        rng.random_range(0..=noise.len() - len)
    } else {
        0
    };
    Ok((0..len).map(|i| noise[(start + i) % noise.len()]).collect())
}

/// Scaled noise such that `signal + noise` has the requested SNR.
pub fn scale_noise_to_snr(signal: &[f32], noise: &[f32], snr_db: f64) -> Result<Vec<f32>> {
    if noise.len() < signal.len() {
        return Err(Error::invalid(format!(
            "noise ({} samples) shorter than signal ({})",
            noise.len(),
            signal.len()
        )));
    }
    let noise = &noise[..signal.len()];
    let (ps, pn) = (mean_square(signal), mean_square(noise));
    if !(ps > 0.0) || !(pn > 0.0) {
        return Err(Error::invalid("SNR mixing needs non-zero signal and noise power"));
    }
    let gain = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(noise.iter().map(|&n| (n as f64 * gain) as f32).collect())
}

/// `signal + g·noise` with `g` chosen so the SNR over the full signal extent
/// is `snr_db`. `noise` must be at least as long as `signal`.
pub fn mix_at_snr(signal: &[f32], noise: &[f32], snr_db: f64) -> Result<Vec<f32>> {
    let scaled = scale_noise_to_snr(signal, noise, snr_db)?;
    Ok(signal.iter().zip(&scaled).map(|(s, n)| s + n).collect())
}

/// Linear convolution via FFT, full length `a.len() + b.len() - 1`.
pub fn fft_convolve(a: &[f32], b: &[f32]) -> Vec<f32> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |x: &[f32]| {
        let mut v: Vec<Complex<f64>> = x.iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let (mut fa, mut fb) = (pad(a), pad(b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..out_len].iter().map(|c| (c.re / n as f64) as f32).collect()
}

fn peak(x: &[f32]) -> f32 {
    x.iter().fold(0.0f32, |m, v| m.max(v.abs()))
}

/// Reverberate `signal`: full convolution with `rir`, truncated to the input
/// length and rescaled to the dry signal's peak.
pub fn apply_rir(signal: &[f32], rir: &[f32]) -> Result<Vec<f32>> {
    if rir.is_empty() || rir.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("room impulse response is empty or all zero"));
    }
    let mut wet = fft_convolve(signal, rir);
    wet.truncate(signal.len());
    let (dry_peak, wet_peak) = (peak(signal), peak(&wet));
    if wet_peak > 0.0 {
        let g = dry_peak / wet_peak;
        for v in &mut wet {
            *v *= g;
        }
    }
    Ok(wet)
}

/// Exponentially decaying noise tail behind a unit direct path:
/// `h[0] = 1`, `h[n] ~ N(0, σ²) · 10^(-3 n / (RT60 · fs))` after a short
/// pre-delay. The tail energy reaches -60 dB at `rt60_s`.
pub fn synthetic_rir<R: Rng>(rt60_s: f64, sample_rate: u32, rng: &mut R) -> Vec<f32> {
    let len = ((rt60_s * sample_rate as f64) as usize).max(2);
    let predelay = (0.002 * sample_rate as f64) as usize + rng.random_range(0..(0.004 * sample_rate as f64) as usize + 1);
    let decay = (10f64).ln() * 3.0 / (rt60_s * sample_rate as f64);
    let mut h = vec![0.0f32; len];
    h[0] = 1.0;
    for (n, v) in h.iter_mut().enumerate().skip(predelay.min(len - 1).max(1)) {
        let g: f64 = rng.sample(StandardNormal);
        *v = (0.3 * g * (-decay * n as f64).exp()) as f32;
    }
    h
}
