//! Noise bank: typed pools of noise clips, either loaded from a directory of
//! WAVs (`<dir>/<type>/*.wav`) or generated synthetically.
//!
//! The synthetic types are stand-ins with distinct spectral/temporal
//! character: bus (brown rumble plus engine harmonics), cafe (pink noise,
//! distant babble and cutlery clatter), pedestrian (modulated pink noise with
//! footsteps), street (band-limited traffic swells and horns), babble (six
//! overlapping synthetic talkers) and speech-shaped (white noise coloured by
//! the corpus long-term spectrum).

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};

use super::mix::{fft_convolve, mean_square};
use super::synth::{synth_utterance, SynthConfig, Voice};
use crate::audio::{read_wav, write_wav, AudioBuffer};
use crate::error::{Error, Result};
use crate::features::hann_periodic;
use crate::rng::{self, SeedStreams};

pub const NOISE_RMS: f64 = 0.1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseBank {
    clips: BTreeMap<String, Vec<Vec<f32>>>,
}

impl NoiseBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, noise_type: &str, clip: Vec<f32>) -> Result<()> {
        if clip.is_empty() || !(mean_square(&clip) > 0.0) {
            return Err(Error::invalid(format!("{noise_type}: noise clip is empty or silent")));
        }
        self.clips.entry(noise_type.to_string()).or_default().push(clip);
        Ok(())
    }

    pub fn types(&self) -> Vec<&str> {
        self.clips.keys().map(String::as_str).collect()
    }

    pub fn clips(&self, noise_type: &str) -> Result<&[Vec<f32>]> {
        self.clips
            .get(noise_type)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("noise bank has no '{noise_type}' clips")))
    }

    pub fn require(&self, types: &[impl AsRef<str>]) -> Result<()> {
        for t in types {
            self.clips(t.as_ref())?;
        }
        Ok(())
    }

    /// A random clip of `noise_type`.
    pub fn pick<R: Rng>(&self, noise_type: &str, rng: &mut R) -> Result<&[f32]> {
        let clips = self.clips(noise_type)?;
        Ok(&clips[rng.random_range(0..clips.len())])
    }

    /// Reads `<dir>/<type>/*.wav`, clips sorted by file name.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut bank = Self::new();
        let mut types: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .collect();
        types.sort_by_key(|e| e.file_name());
        for t in types {
            let name = t.file_name().to_string_lossy().to_string();
            let mut files: Vec<_> = fs::read_dir(t.path())
                .map_err(|e| Error::io(t.path(), e))?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "wav"))
                .collect();
            files.sort();
            for f in files {
                bank.insert(&name, read_wav(&f)?.samples)?;
            }
        }
        Ok(bank)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>, sample_rate: u32) -> Result<()> {
        let dir = dir.as_ref();
        for (name, clips) in &self.clips {
            let sub = dir.join(name);
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for (i, c) in clips.iter().enumerate() {
                write_wav(sub.join(format!("{name}_{i:02}.wav")), &AudioBuffer::new(c.clone(), sample_rate)?)?;
            }
        }
        Ok(())
    }

    /// Generate `clips_per_type` clips of `clip_s` seconds for every type.
    /// `speech_psd` is the long-term speech power spectrum (FFT bins of a
    /// 512-point transform) used for speech-shaped noise.
    pub fn synthetic(
        types: &[&str],
        clips_per_type: usize,
        clip_s: f64,
        sample_rate: u32,
        speech_psd: &[f64],
        seeds: &SeedStreams,
    ) -> Result<Self> {
        let n = (clip_s * sample_rate as f64) as usize;
        let jobs: Vec<(usize, usize)> = (0..types.len())
            .flat_map(|t| (0..clips_per_type).map(move |c| (t, c)))
            .collect();
        let made = crate::par::map(&jobs, |_, &(t, c)| {
            let mut r = seeds.child(rng::NOISE, 0).rng(types[t], c as u64);
            generate(types[t], n, sample_rate, speech_psd, &mut r)
        });
        let mut bank = Self::new();
        for (&(t, _), clip) in jobs.iter().zip(made) {
            bank.insert(types[t], clip?)?;
        }
        Ok(bank)
    }
}

fn white<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Paul Kellet's economy pink filter.
fn pink<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    white(n, rng)
        .into_iter()
        .map(|w| {
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

fn brown<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut y = 0.0;
    white(n, rng)
        .into_iter()
        .map(|w| {
            y = 0.995 * y + 0.1 * w;
            y
        })
        .collect()
}

fn one_pole_lowpass(x: &mut [f64], cutoff: f64, sr: f64) {
    let a = (-TAU * cutoff / sr).exp();
    let mut y = 0.0;
    for v in x.iter_mut() {
        y = a * y + (1.0 - a) * *v;
        *v = y;
    }
}

fn one_pole_highpass(x: &mut [f64], cutoff: f64, sr: f64) {
    let mut low = x.to_vec();
    one_pole_lowpass(&mut low, cutoff, sr);
    for (v, l) in x.iter_mut().zip(low) {
        *v -= l;
    }
}

fn normalize(x: &mut [f64], rms: f64) {
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if cur > 0.0 {
        x.iter_mut().for_each(|v| *v *= rms / cur);
    }
}

/// Continuous speech from `talkers` random voices, each normalized and summed.
fn babble<R: Rng>(talkers: usize, n: usize, sr: u32, rng: &mut R) -> Vec<f64> {
    let cfg = SynthConfig {
        sample_rate_hz: sr,
        min_utterance_s: 2.0,
        max_utterance_s: 4.0,
        level_rms: 0.05,
        noise_floor_rms: 0.0,
    };
    let mut acc = vec![0.0; n];
    for k in 0..talkers {
        let voice = Voice::random(format!("babble{k}"), rng);
        let mut stream = Vec::with_capacity(n);
        while stream.len() < n {
            let (s, _) = synth_utterance(&voice, &cfg, rng);
            stream.extend(s.iter().map(|&v| v as f64));
        }
        // random start so talkers do not pause together
        let off = rng.random_range(0..stream.len() - n + 1);
        let mut part = stream[off..off + n].to_vec();
        normalize(&mut part, 1.0);
        acc.iter_mut().zip(part).for_each(|(a, p)| *a += p);
    }
    acc
}

/// Decaying sinusoid bursts at Poisson times: clatter, footsteps, horns.
fn add_events<R: Rng>(
    x: &mut [f64],
    rate_hz: f64,
    freq: (f64, f64),
    decay_s: f64,
    amp: f64,
    sr: f64,
    rng: &mut R,
) {
    let mut t = 0.0;
    loop {
        t += -rng.random_range(1e-9f64..1.0).ln() / rate_hz;
        let start = (t * sr) as usize;
        if start >= x.len() {
            break;
        }
        let f = rng.random_range(freq.0..freq.1);
        let a = amp * rng.random_range(0.5..1.0);
        let len = ((decay_s * 5.0 * sr) as usize).min(x.len() - start);
        for j in 0..len {
            let tt = j as f64 / sr;
            x[start + j] += a * (-tt / decay_s).exp() * (TAU * f * tt).sin();
        }
    }
}

/// Colour white noise with the magnitude response `sqrt(psd)` (zero-phase,
/// Hann-windowed FIR of the transform length).
fn shaped<R: Rng>(psd: &[f64], n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if psd.len() < 2 || psd.iter().any(|p| !p.is_finite() || *p < 0.0) || psd.iter().all(|&p| p == 0.0) {
        return Err(Error::invalid("speech-shaped noise needs a non-trivial power spectrum"));
    }
    let fft_size = 2 * (psd.len() - 1);
    let mut spec: Vec<Complex<f64>> = (0..fft_size)
        .map(|k| {
            let bin = if k < psd.len() { k } else { fft_size - k };
            Complex::new(psd[bin].sqrt(), 0.0)
        })
        .collect();
    FftPlanner::<f64>::new().plan_fft_inverse(fft_size).process(&mut spec);
    let win = hann_periodic(fft_size);
    // centre the zero-phase response and window it
    let fir: Vec<f32> = (0..fft_size)
        .map(|i| (spec[(i + fft_size / 2) % fft_size].re * win[i]) as f32)
        .collect();
    let w: Vec<f32> = white(n + fft_size, rng).into_iter().map(|v| v as f32).collect();
    let y = fft_convolve(&w, &fir);
    Ok(y[fft_size..fft_size + n].iter().map(|&v| v as f64).collect())
}

pub fn generate<R: Rng>(noise_type: &str, n: usize, sample_rate: u32, speech_psd: &[f64], rng: &mut R) -> Result<Vec<f32>> {
    let sr = sample_rate as f64;
    let mut x = match noise_type {
        "bus" => {
            let mut x = brown(n, rng);
            normalize(&mut x, 1.0);
            let f_engine = rng.random_range(28.0..45.0);
            let (mut ph, drift) = (0.0, rng.random_range(0.05..0.2));
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / sr;
                let f = f_engine * (1.0 + 0.1 * (TAU * drift * t).sin());
                ph += TAU * f / sr;
                let hum: f64 = (1..=6).map(|h| (h as f64 * ph).sin() / h as f64).sum();
                *v += 0.6 * hum;
            }
            x
        }
        "cafe" => {
            let mut x = pink(n, rng);
            normalize(&mut x, 0.6);
            let mut b = babble(4, n, sample_rate, rng);
            normalize(&mut b, 0.8);
            one_pole_lowpass(&mut b, 2500.0, sr);
            x.iter_mut().zip(b).for_each(|(a, b)| *a += b);
            add_events(&mut x, 2.5, (2000.0, 6000.0), 0.015, 2.0, sr, rng);
            x
        }
        "pedestrian" => {
            let mut x = pink(n, rng);
            normalize(&mut x, 1.0);
            let (rate, phase) = (rng.random_range(0.2..0.8), rng.random_range(0.0..TAU));
            for (i, v) in x.iter_mut().enumerate() {
                *v *= 0.7 + 0.3 * (TAU * rate * i as f64 / sr + phase).sin();
            }
            add_events(&mut x, 2.0, (60.0, 120.0), 0.03, 2.5, sr, rng);
            let mut b = babble(2, n, sample_rate, rng);
            normalize(&mut b, 0.3);
            x.iter_mut().zip(b).for_each(|(a, b)| *a += b);
            x
        }
        "street" => {
            let mut x = white(n, rng);
            one_pole_lowpass(&mut x, 2000.0, sr);
            one_pole_highpass(&mut x, 150.0, sr);
            normalize(&mut x, 1.0);
            // passing vehicles: gaussian swells
            let mut env = vec![0.4; n];
            let mut t = 0.0;
            loop {
                t += rng.random_range(1.0..4.0);
                if t * sr >= n as f64 {
                    break;
                }
                let width = rng.random_range(0.5..1.5);
                let height = rng.random_range(0.5..1.5);
                for (i, e) in env.iter_mut().enumerate() {
                    let d = (i as f64 / sr - t) / width;
                    *e += height * (-0.5 * d * d).exp();
                }
            }
            x.iter_mut().zip(env).for_each(|(v, e)| *v *= e);
            add_events(&mut x, 0.15, (350.0, 500.0), 0.12, 1.5, sr, rng);
            x
        }
        "babble" => babble(6, n, sample_rate, rng),
        "speech_shaped" => shaped(speech_psd, n, rng)?,
        other => return Err(Error::invalid(format!("unknown synthetic noise type '{other}'"))),
    };
    normalize(&mut x, NOISE_RMS);
    Ok(x.into_iter().map(|v| v as f32).collect())
}

/// Long-term average power spectrum over all frames with any signal,
/// `fft_size / 2 + 1` bins, Hann-windowed with 50% overlap.
pub fn average_power_spectrum(audio: &[&[f32]], fft_size: usize) -> Vec<f64> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let win = hann_periodic(fft_size);
    let mut acc = vec![0.0; fft_size / 2 + 1];
    let mut frames = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for x in audio {
        let mut start = 0;
        while start + fft_size <= x.len() {
            let seg = &x[start..start + fft_size];
            if seg.iter().any(|&v| v != 0.0) {
                for (b, (&s, &w)) in buf.iter_mut().zip(seg.iter().zip(&win)) {
                    *b = Complex::new(s as f64 * w, 0.0);
                }
                fft.process(&mut buf);
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += b.norm_sqr();
                }
                frames += 1;
            }
            start += fft_size / 2;
        }
    }
    if frames > 0 {
        acc.iter_mut().for_each(|a| *a /= frames as f64);
    }
    acc
}
