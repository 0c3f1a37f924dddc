//! Multistyle training: random reverberation and additive noise applied to
//! whole utterances on the fly. Labels are never touched.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mix::{apply_rir, fit_noise, mix_at_snr, synthetic_rir};
use super::noise::NoiseBank;
use super::{MultiSpeakerUtterance, TRAIN_NOISE_TYPES};
use crate::audio::{read_wav, write_wav, AudioBuffer};
use crate::error::{Error, Result};
use crate::rng::SeedStreams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MtrConfig {
    pub noise_types: Vec<String>,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub p_noise: f64,
    pub p_rir: f64,
    /// Synthetic RIR pool, used when no RIR directory is given.
    pub rir_pool_size: usize,
    pub rt60_min_s: f64,
    pub rt60_max_s: f64,
}

impl Default for MtrConfig {
    fn default() -> Self {
        Self {
            noise_types: TRAIN_NOISE_TYPES.iter().map(|s| s.to_string()).collect(),
            snr_min_db: -5.0,
            snr_max_db: 20.0,
            p_noise: 0.5,
            p_rir: 0.5,
            rir_pool_size: 16,
            rt60_min_s: 0.2,
            rt60_max_s: 0.8,
        }
    }
}

impl MtrConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_noise) || !prob(self.p_rir) {
            return Err(Error::config("mtr: probabilities must lie in [0, 1]"));
        }
        if !(self.snr_min_db <= self.snr_max_db) {
            return Err(Error::config("mtr: snr_min_db must not exceed snr_max_db"));
        }
        if !(self.rt60_min_s > 0.0 && self.rt60_min_s <= self.rt60_max_s) {
            return Err(Error::config("mtr: need 0 < rt60_min_s <= rt60_max_s"));
        }
        if self.p_noise > 0.0 && self.noise_types.is_empty() {
            return Err(Error::config("mtr: noise enabled but no noise types listed"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RirPool {
    pub rirs: Vec<Vec<f32>>,
}

impl RirPool {
    pub fn synthetic(cfg: &MtrConfig, sample_rate: u32, seeds: &SeedStreams) -> Self {
        let rirs = (0..cfg.rir_pool_size)
            .map(|i| {
                let mut r = seeds.rng("rir", i as u64);
                let rt60 = r.random_range(cfg.rt60_min_s..=cfg.rt60_max_s);
                synthetic_rir(rt60, sample_rate, &mut r)
            })
            .collect();
        Self { rirs }
    }

    /// Writes `rir_NNN.wav`; responses peaking above 1 are scaled down, which
    /// `apply_rir` undoes by renormalizing to the dry peak.
    pub fn save_dir(&self, dir: impl AsRef<Path>, sample_rate: u32) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, h) in self.rirs.iter().enumerate() {
            let peak = h.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            let g = if peak > 1.0 { 1.0 / peak } else { 1.0 };
            let samples = h.iter().map(|v| v * g).collect();
            write_wav(dir.join(format!("rir_{i:03}.wav")), &AudioBuffer::new(samples, sample_rate)?)?;
        }
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "wav"))
            .collect();
        files.sort();
        let rirs = files.iter().map(|f| read_wav(f).map(|a| a.samples)).collect::<Result<_>>()?;
        Ok(Self { rirs })
    }
}

/// What one augmentation draw did.
#[derive(Debug, Clone, PartialEq)]
pub struct MtrApplied {
    pub rir: Option<usize>,
    pub noise: Option<(String, f64)>,
}

/// Reverberate with probability `p_rir`, then add noise with probability
/// `p_noise` at an SNR drawn uniformly from the configured range.
pub fn augment_samples<R: Rng>(
    samples: &[f32],
    cfg: &MtrConfig,
    bank: &NoiseBank,
    rirs: &RirPool,
    rng: &mut R,
) -> Result<(Vec<f32>, MtrApplied)> {
    let do_rir = rng.random_bool(cfg.p_rir);
    let do_noise = rng.random_bool(cfg.p_noise);
    let mut out = samples.to_vec();
    let mut applied = MtrApplied { rir: None, noise: None };
    if do_rir {
        if rirs.rirs.is_empty() {
            return Err(Error::invalid("RIR pool is empty"));
        }
        let i = rng.random_range(0..rirs.rirs.len());
        out = apply_rir(&out, &rirs.rirs[i])?;
        applied.rir = Some(i);
    }
    if do_noise {
        let t = &cfg.noise_types[rng.random_range(0..cfg.noise_types.len())];
        let clip = bank.pick(t, rng)?;
        let snr = rng.random_range(cfg.snr_min_db..=cfg.snr_max_db);
        let noise = fit_noise(clip, out.len(), rng)?;
        out = mix_at_snr(&out, &noise, snr)?;
        applied.noise = Some((t.clone(), snr));
    }
    Ok((out, applied))
}

pub fn mtr_augment<R: Rng>(
    utt: &MultiSpeakerUtterance,
    cfg: &MtrConfig,
    bank: &NoiseBank,
    rirs: &RirPool,
    rng: &mut R,
) -> Result<(MultiSpeakerUtterance, MtrApplied)> {
    let (samples, applied) = augment_samples(&utt.audio.samples, cfg, bank, rirs, rng)?;
    let mut out = utt.clone();
    out.audio = AudioBuffer::new(samples, utt.audio.sample_rate_hz)?;
    Ok((out, applied))
}
