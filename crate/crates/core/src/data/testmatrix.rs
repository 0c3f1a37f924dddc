//! The clean test set plus one copy per (noise type, SNR) condition.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{read_manifest, write_manifest};
use super::mix::{fit_noise, scale_noise_to_snr};
use super::noise::NoiseBank;
use super::{MultiSpeakerUtterance, TEST_NOISE_TYPES, TEST_SNRS_DB};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::rng::{self, SeedStreams};

/// Peak level above which a mixture is scaled down before it is stored.
pub const MAX_PEAK: f32 = 0.99;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TestCondition {
    pub noise_type: String,
    pub snr_db: i32,
}

impl TestCondition {
    /// The 24 standard conditions, noise-type major.
    pub fn standard() -> Vec<Self> {
        TEST_NOISE_TYPES
            .iter()
            .flat_map(|t| {
                TEST_SNRS_DB.iter().map(move |&snr| TestCondition {
                    noise_type: t.to_string(),
                    snr_db: snr,
                })
            })
            .collect()
    }

    pub fn dir_name(&self) -> String {
        format!("{}_{}dB", self.noise_type, self.snr_db)
    }
}

impl fmt::Display for TestCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} dB", self.noise_type, self.snr_db)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    /// `None` for the clean set.
    pub condition: Option<TestCondition>,
    pub utterances: Vec<MultiSpeakerUtterance>,
    /// Whole-mixture gain applied to each utterance to avoid clipping.
    pub gains: Vec<f64>,
}

impl TestSet {
    pub fn name(&self) -> String {
        self.condition.as_ref().map_or_else(|| "clean".to_string(), TestCondition::dir_name)
    }
}

/// Mix every clean utterance with a seeded crop of each test noise at each
/// test SNR. Returns the clean set first, then the 24 noisy sets.
pub fn build_test_matrix(
    clean: &[MultiSpeakerUtterance],
    bank: &NoiseBank,
    seeds: &SeedStreams,
) -> Result<Vec<TestSet>> {
    if clean.is_empty() {
        return Err(Error::invalid("clean test set is empty"));
    }
    bank.require(&TEST_NOISE_TYPES)?;
    let conditions = TestCondition::standard();
    let mut sets = vec![TestSet {
        condition: None,
        utterances: clean.to_vec(),
        gains: vec![1.0; clean.len()],
    }];
    let noisy = crate::par::map(&conditions, |ci, cond| -> Result<TestSet> {
        let stream = seeds.child(rng::TEST_MATRIX, ci as u64);
        let mut utterances = Vec::with_capacity(clean.len());
        let mut gains = Vec::with_capacity(clean.len());
        for (ui, u) in clean.iter().enumerate() {
            let mut r = stream.rng("utterance", ui as u64);
            let clip = bank.pick(&cond.noise_type, &mut r)?;
            let noise = fit_noise(clip, u.audio.len(), &mut r)?;
            let scaled = scale_noise_to_snr(&u.audio.samples, &noise, cond.snr_db as f64)?;
            let mut mixed: Vec<f32> = u.audio.samples.iter().zip(&scaled).map(|(s, n)| s + n).collect();
            let peak = mixed.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            let gain = if peak > MAX_PEAK { (MAX_PEAK / peak) as f64 } else { 1.0 };
            if gain != 1.0 {
                mixed.iter_mut().for_each(|v| *v = (*v as f64 * gain) as f32);
            }
            let mut out = u.clone();
            out.audio = AudioBuffer::new(mixed, u.audio.sample_rate_hz)?;
            utterances.push(out);
            gains.push(gain);
        }
        Ok(TestSet {
            condition: Some(cond.clone()),
            utterances,
            gains,
        })
    });
    for s in noisy {
        sets.push(s?);
    }
    Ok(sets)
}

fn file_name(i: usize) -> String {
    format!("utt{i:04}.wav")
}

/// Writes `<out>/<set>/utt*.wav` and `<out>/<set>/manifest.jsonl`.
pub fn write_test_matrix(sets: &[TestSet], out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    for set in sets {
        let dir = out_dir.join(set.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut records = Vec::with_capacity(set.utterances.len());
        for (i, (u, &g)) in set.utterances.iter().zip(&set.gains).enumerate() {
            let mut rec = u.save(&dir, &file_name(i))?;
            if let Some(c) = &set.condition {
                rec.condition = Some(c.clone());
                rec.mix_gain = Some(g);
                rec.clean_path = Some(format!("../clean/{}", file_name(i)));
            }
            records.push(rec);
        }
        write_manifest(dir.join("manifest.jsonl"), &records)?;
    }
    Ok(())
}

/// Loads every set directory under `dir` that holds a manifest; clean first,
/// then conditions in standard order.
pub fn load_test_matrix(dir: impl AsRef<Path>, feat: &FeatureConfig) -> Result<Vec<TestSet>> {
    let dir = dir.as_ref();
    let mut names = vec!["clean".to_string()];
    names.extend(TestCondition::standard().iter().map(TestCondition::dir_name));
    let mut sets = Vec::new();
    for name in names {
        let sub = dir.join(&name);
        let manifest = sub.join("manifest.jsonl");
        if !manifest.exists() {
            continue;
        }
        let records = read_manifest(&manifest)?;
        let mut utterances = Vec::with_capacity(records.len());
        let mut gains = Vec::with_capacity(records.len());
        let mut condition = None;
        for r in &records {
            utterances.push(MultiSpeakerUtterance::load(r, &sub, feat)?);
            gains.push(r.mix_gain.unwrap_or(1.0));
            condition = r.condition.clone();
        }
        if condition.as_ref().map_or("clean".to_string(), TestCondition::dir_name) != name {
            return Err(Error::format(format!("{}: condition does not match directory", sub.display())));
        }
        sets.push(TestSet {
            condition,
            utterances,
            gains,
        });
    }
    if sets.is_empty() {
        return Err(Error::invalid(format!("no test sets found under {}", dir.display())));
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mix::measure_snr_db;
    use crate::data::{concatenate, Utterance};

    fn clean_set() -> Vec<MultiSpeakerUtterance> {
        let feat = FeatureConfig::default();
        (0..3)
            .map(|i| {
                let samples: Vec<f32> = (0..4000).map(|t| 0.2 * ((t * (i + 3)) as f32 * 0.01).sin()).collect();
                let u = Utterance {
                    id: format!("u{i}"),
                    speaker_id: "a".into(),
                    audio: AudioBuffer::new(samples, 16_000).unwrap(),
                    speech: vec![true; 23],
                };
                concatenate(format!("m{i}"), &[&u], "a", &feat).unwrap()
            })
            .collect()
    }

    fn bank() -> NoiseBank {
        let mut b = NoiseBank::new();
        for (k, t) in TEST_NOISE_TYPES.iter().enumerate() {
            let clip = (0..9000).map(|i| (((i * (k + 2) * 7919) % 2000) as f32 / 1000.0) - 1.0).collect();
            b.insert(t, clip).unwrap();
        }
        b
    }

    #[test]
    fn builds_twenty_four_conditions_at_exact_snr() {
        let clean = clean_set();
        let sets = build_test_matrix(&clean, &bank(), &SeedStreams::new(1)).unwrap();
        assert_eq!(sets.len(), 25);
        assert!(sets[0].condition.is_none());
        for set in &sets[1..] {
            let snr = set.condition.as_ref().unwrap().snr_db as f64;
            for ((u, c), &g) in set.utterances.iter().zip(&clean).zip(&set.gains) {
                let residual: Vec<f32> = u
                    .audio
                    .samples
                    .iter()
                    .zip(&c.audio.samples)
                    .map(|(n, s)| (*n as f64 / g) as f32 - s)
                    .collect();
                assert!((measure_snr_db(&c.audio.samples, &residual) - snr).abs() < 0.05);
                assert_eq!(u.labels, c.labels);
            }
        }
        let again = build_test_matrix(&clean, &bank(), &SeedStreams::new(1)).unwrap();
        assert_eq!(sets, again);
    }

    #[test]
    fn missing_noise_type_is_an_error() {
        let mut b = NoiseBank::new();
        b.insert("bus", vec![0.1; 100]).unwrap();
        assert!(build_test_matrix(&clean_set(), &b, &SeedStreams::new(1)).is_err());
    }

    #[test]
    fn write_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let feat = FeatureConfig::default();
        let sets = build_test_matrix(&clean_set(), &bank(), &SeedStreams::new(2)).unwrap();
        write_test_matrix(&sets, dir.path()).unwrap();
        let back = load_test_matrix(dir.path(), &feat).unwrap();
        assert_eq!(back.len(), 25);
        for (a, b) in sets.iter().zip(&back) {
            assert_eq!(a.condition, b.condition);
            assert_eq!(a.gains, b.gains);
            assert_eq!(a.utterances[1].labels, b.utterances[1].labels);
        }
    }
}
