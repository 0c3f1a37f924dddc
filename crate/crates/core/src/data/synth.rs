//! Synthetic speech: glottal pulse trains through a speaker's formant
//! filter, with syllabic amplitude modulation and pauses between phrases.
//! Pauses carry only a faint white recording floor (none when
//! `noise_floor_rms` is 0). Labels are exact by construction.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::features::{frame_count, FeatureConfig};
use crate::rng::{self, SeedStreams};

use super::Utterance;

/// Fixed vocal characteristics of one synthetic speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Voice {
    pub speaker_id: String,
    pub f0_hz: f64,
    pub formants_hz: [f64; 3],
    pub bandwidths_hz: [f64; 3],
    /// One-pole lowpass coefficient on the glottal source (spectral tilt).
    pub tilt: f64,
}

impl Voice {
    pub fn random<R: Rng>(speaker_id: impl Into<String>, rng: &mut R) -> Self {
        Self {
            speaker_id: speaker_id.into(),
            f0_hz: rng.random_range(80.0..300.0),
            formants_hz: [
                rng.random_range(300.0..850.0),
                rng.random_range(900.0..2300.0),
                rng.random_range(2400.0..3400.0),
            ],
            bandwidths_hz: [
                rng.random_range(60.0..120.0),
                rng.random_range(80.0..160.0),
                rng.random_range(120.0..220.0),
            ],
            tilt: rng.random_range(0.6..0.9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sample_rate_hz: u32,
    pub min_utterance_s: f64,
    pub max_utterance_s: f64,
    /// RMS level of voiced regions.
    pub level_rms: f64,
    /// RMS of white noise added to the whole utterance.
    pub noise_floor_rms: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: SAMPLE_RATE,
            min_utterance_s: 3.0,
            max_utterance_s: 6.0,
            level_rms: 0.05,
            noise_floor_rms: 5e-4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0
            || !(self.min_utterance_s > 0.5)
            || self.max_utterance_s < self.min_utterance_s
            || !(self.level_rms > 0.0 && self.level_rms < 0.3)
            || !(self.noise_floor_rms >= 0.0 && self.noise_floor_rms < self.level_rms)
        {
            return Err(Error::config(
                "synth: need sample_rate > 0, 0.5 < min_utterance_s <= max_utterance_s, 0 < level_rms < 0.3, \
                 0 <= noise_floor_rms < level_rms",
            ));
        }
        Ok(())
    }
}

/// Two-pole resonator `y[n] = g·x[n] + a1·y[n-1] + a2·y[n-2]` with unit
/// gain at its centre frequency (approximately).
#[derive(Debug, Clone, Copy)]
struct Resonator {
    a1: f64,
    a2: f64,
    g: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bw: f64, sr: f64) -> Self {
        let mut r = Self { a1: 0.0, a2: 0.0, g: 0.0, y1: 0.0, y2: 0.0 };
        r.tune(freq, bw, sr);
        r
    }

    fn tune(&mut self, freq: f64, bw: f64, sr: f64) {
        let rad = (-std::f64::consts::PI * bw / sr).exp();
        let theta = 2.0 * std::f64::consts::PI * freq / sr;
        self.a1 = 2.0 * rad * theta.cos();
        self.a2 = -rad * rad;
        self.g = (1.0 - rad) * (1.0 - 2.0 * rad * (2.0 * theta).cos() + rad * rad).sqrt();
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.g * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// One voiced phrase of `n` samples: syllables with their own vowel
/// colouring and pitch offset, a slow intonation contour and a syllabic
/// envelope that never reaches zero inside the phrase.
pub fn synth_phrase<R: Rng>(voice: &Voice, n: usize, sr: u32, rng: &mut R) -> Vec<f32> {
    let srf = sr as f64;
    let mut res: Vec<Resonator> = (0..3)
        .map(|k| Resonator::new(voice.formants_hz[k], voice.bandwidths_hz[k], srf))
        .collect();
    let contour_rate = rng.random_range(0.3..1.2);
    let contour_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut out = Vec::with_capacity(n);
    let (mut phase, mut src) = (0.0f64, 0.0f64);
    let mut i = 0;
    while i < n {
        let syl_len = ((rng.random_range(0.12..0.28) * srf) as usize).min(n - i).max(1);
        let vowel: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.9..1.1));
        let pitch = rng.random_range(0.95..1.05);
        for (k, r) in res.iter_mut().enumerate() {
            r.tune(voice.formants_hz[k] * vowel[k], voice.bandwidths_hz[k], srf);
        }
        for j in 0..syl_len {
            let t = (i + j) as f64 / srf;
            let u = j as f64 / syl_len as f64;
            let f0 = voice.f0_hz * pitch * (1.0 + 0.08 * (std::f64::consts::TAU * contour_rate * t + contour_phase).sin());
            phase += f0 / srf;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            let aspiration: f64 = 0.03 * rng.sample::<f64, _>(StandardNormal);
            src = voice.tilt * src + (1.0 - voice.tilt) * (pulse + aspiration);
            let mut y = src;
            for r in res.iter_mut() {
                y = r.tick(y);
            }
            let env = 0.35 + 0.65 * (std::f64::consts::PI * u).sin();
            out.push(y * env);
        }
        i += syl_len;
    }
    // 10 ms fades so phrases start and end without clicks
    let fade = ((0.01 * srf) as usize).min(n / 2);
    for j in 0..fade {
        let g = j as f64 / fade as f64;
        out[j] *= g;
        out[n - 1 - j] *= g;
    }
    out.into_iter().map(|v| v as f32).collect()
}

/// Sample-index intervals `[start, end)` of voiced audio.
pub type VoicedIntervals = Vec<(usize, usize)>;

/// A full utterance: leading silence, phrases separated by pauses, trailing
/// silence. Voiced regions are scaled to `cfg.level_rms` before the floor is added.
pub fn synth_utterance<R: Rng>(voice: &Voice, cfg: &SynthConfig, rng: &mut R) -> (Vec<f32>, VoicedIntervals) {
    let sr = cfg.sample_rate_hz as f64;
    let total = (rng.random_range(cfg.min_utterance_s..=cfg.max_utterance_s) * sr) as usize;
    let mut samples = vec![0.0f32; total];
    let mut voiced = Vec::new();
    let tail = (rng.random_range(0.1..0.4) * sr) as usize;
    let mut pos = (rng.random_range(0.1..0.5) * sr) as usize;
    while pos + (0.3 * sr) as usize + tail < total {
        let len = ((rng.random_range(0.4..1.5) * sr) as usize).min(total - tail - pos);
        let phrase = synth_phrase(voice, len, cfg.sample_rate_hz, rng);
        let rms = (phrase.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / len as f64).sqrt();
        let gain = if rms > 0.0 { cfg.level_rms / rms } else { 0.0 };
        for (dst, &v) in samples[pos..pos + len].iter_mut().zip(&phrase) {
            *dst = (v as f64 * gain) as f32;
        }
        voiced.push((pos, pos + len));
        pos += len + (rng.random_range(0.15..0.6) * sr) as usize;
    }
    if cfg.noise_floor_rms > 0.0 {
        for v in &mut samples {
            *v += (cfg.noise_floor_rms * rng.sample::<f64, _>(StandardNormal)) as f32;
        }
    }
    (samples, voiced)
}

/// Frame `t` is speech when at least half of its window overlaps voiced audio.
pub fn speech_labels(voiced: &[(usize, usize)], n_samples: usize, feat: &FeatureConfig) -> Vec<bool> {
    let (len, shift) = (feat.frame_length_samples(), feat.frame_shift_samples());
    (0..frame_count(n_samples, feat))
        .map(|t| {
            let (a, b) = (t * shift, t * shift + len);
            let overlap: usize = voiced
                .iter()
                .map(|&(s, e)| e.min(b).saturating_sub(s.max(a)))
                .sum();
            2 * overlap >= len
        })
        .collect()
}

/// Speaker ids are `spk000`, `spk001`, ...
pub fn speaker_id(i: usize) -> String {
    format!("spk{i:03}")
}

/// Voices for `n` speakers drawn from the corpus stream.
pub fn corpus_voices(n: usize, seeds: &SeedStreams) -> Vec<Voice> {
    (0..n)
        .map(|i| Voice::random(speaker_id(i), &mut seeds.rng(rng::CORPUS, i as u64)))
        .collect()
}

/// `n_speakers × utterances_per_speaker` labelled single-speaker utterances.
/// Each utterance has its own RNG stream, so the corpus is identical however
/// it is generated.
pub fn synth_corpus(
    n_speakers: usize,
    utterances_per_speaker: usize,
    cfg: &SynthConfig,
    feat: &FeatureConfig,
    seeds: &SeedStreams,
) -> Result<Vec<Utterance>> {
    if n_speakers < 2 {
        return Err(Error::invalid("synthetic corpus needs at least two speakers"));
    }
    cfg.validate()?;
    let voices = corpus_voices(n_speakers, seeds);
    let jobs: Vec<(usize, usize)> = (0..n_speakers)
        .flat_map(|s| (0..utterances_per_speaker).map(move |u| (s, u)))
        .collect();
    crate::par::map(&jobs, |_, &(s, u)| {
        let stream = (s * utterances_per_speaker + u) as u64;
        let mut r = seeds.child(rng::CORPUS, 1).rng("utterance", stream);
        synth_single(&voices[s], format!("{}_u{u:03}", voices[s].speaker_id), cfg, feat, &mut r)
    })
    .into_iter()
    .collect()
}

pub fn synth_single<R: Rng>(
    voice: &Voice,
    id: String,
    cfg: &SynthConfig,
    feat: &FeatureConfig,
    rng: &mut R,
) -> Result<Utterance> {
    let (samples, voiced) = synth_utterance(voice, cfg, rng);
    let speech = speech_labels(&voiced, samples.len(), feat);
    Ok(Utterance {
        id,
        speaker_id: voice.speaker_id.clone(),
        audio: AudioBuffer::new(samples, cfg.sample_rate_hz)?,
        speech,
    })
}
