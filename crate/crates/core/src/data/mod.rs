//! Corpus construction: synthetic speakers, multi-speaker concatenation,
//! multistyle (MTR) augmentation, the noisy test matrix and manifests.

pub mod manifest;
pub mod mix;
pub mod mtr;
pub mod noise;
pub mod synth;
pub mod testmatrix;

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::features::{frame_count, FeatureConfig};
use crate::pvad::PvadClass;

pub use manifest::{read_manifest, write_manifest, LabelRun, ManifestRecord};
pub use mix::{apply_rir, measure_snr_db, mix_at_snr};
pub use mtr::{mtr_augment, MtrConfig, RirPool};
pub use noise::NoiseBank;
pub use synth::{synth_corpus, SynthConfig, Voice};
pub use testmatrix::{build_test_matrix, TestCondition, TestSet};

/// Noise types available to multistyle training by default. Café is held
/// out and only appears in the test matrix.
pub const TRAIN_NOISE_TYPES: [&str; 5] = ["babble", "bus", "pedestrian", "street", "speech_shaped"];
pub const TEST_NOISE_TYPES: [&str; 4] = ["bus", "cafe", "babble", "speech_shaped"];
pub const TEST_SNRS_DB: [i32; 6] = [-5, 0, 5, 10, 15, 20];

/// A single-speaker utterance with frame-wise speech labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub audio: AudioBuffer,
    pub speech: Vec<bool>,
}

impl Utterance {
    pub fn validate(&self, feat: &FeatureConfig) -> Result<()> {
        if self.speaker_id.is_empty() {
            return Err(Error::invalid(format!("utterance {}: empty speaker id", self.id)));
        }
        let expected = frame_count(self.audio.len(), feat);
        if self.speech.len() != expected {
            return Err(Error::invalid(format!(
                "utterance {}: {} labels for {expected} frames",
                self.id,
                self.speech.len()
            )));
        }
        Ok(())
    }
}

/// Frames `[start_frame, end_frame)` of a concatenation that came from one
/// source utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub speaker_id: String,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSpeakerUtterance {
    pub id: String,
    pub audio: AudioBuffer,
    pub segments: Vec<Segment>,
    pub target_speaker_id: String,
    pub labels: Vec<PvadClass>,
}

impl MultiSpeakerUtterance {
    /// Checks the segment table tiles `[0, T)` and that labels agree with it.
    pub fn validate(&self, feat: &FeatureConfig) -> Result<()> {
        let t = frame_count(self.audio.len(), feat);
        if self.labels.len() != t {
            return Err(Error::invalid(format!("{}: {} labels for {t} frames", self.id, self.labels.len())));
        }
        let mut pos = 0;
        for s in &self.segments {
            if s.start_frame != pos || s.end_frame <= s.start_frame {
                return Err(Error::invalid(format!("{}: segment table does not tile the utterance", self.id)));
            }
            let is_target = s.speaker_id == self.target_speaker_id;
            for &l in &self.labels[s.start_frame..s.end_frame] {
                if (l == PvadClass::Tss && !is_target) || (l == PvadClass::Ntss && is_target) {
                    return Err(Error::invalid(format!("{}: label inconsistent with segment speaker", self.id)));
                }
            }
            pos = s.end_frame;
        }
        if pos != t {
            return Err(Error::invalid(format!("{}: segments cover {pos} of {t} frames", self.id)));
        }
        let n_target = self.segments.iter().filter(|s| s.speaker_id == self.target_speaker_id).count();
        if n_target != 1 {
            return Err(Error::invalid(format!("{}: target speaker in {n_target} segments", self.id)));
        }
        Ok(())
    }
}

/// Utterances grouped by speaker, in speaker-id order.
pub fn by_speaker(pool: &[Utterance]) -> BTreeMap<&str, Vec<&Utterance>> {
    let mut map: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
    for u in pool {
        map.entry(u.speaker_id.as_str()).or_default().push(u);
    }
    map
}

/// Concatenate utterances of distinct speakers and label every frame relative
/// to `target`.
///
/// Each part is zero-padded to a whole number of frame shifts so that part
/// `i` starts exactly at a frame boundary; frame `t` of the result belongs to
/// the part whose start frame is the largest one `<= t`, and takes that
/// part's local label (non-speech past the part's own last frame).
pub fn concatenate(
    id: String,
    parts: &[&Utterance],
    target_speaker_id: &str,
    feat: &FeatureConfig,
) -> Result<MultiSpeakerUtterance> {
    if parts.is_empty() {
        return Err(Error::invalid("nothing to concatenate"));
    }
    let shift = feat.frame_shift_samples();
    let sr = parts[0].audio.sample_rate_hz;
    let mut samples = Vec::new();
    let mut starts = Vec::with_capacity(parts.len());
    for p in parts {
        if p.audio.sample_rate_hz != sr {
            return Err(Error::invalid("cannot concatenate audio with different sample rates"));
        }
        starts.push(samples.len() / shift);
        samples.extend_from_slice(&p.audio.samples);
        samples.resize(samples.len().div_ceil(shift) * shift, 0.0);
    }
    let total = frame_count(samples.len(), feat);
    let mut segments = Vec::with_capacity(parts.len());
    let mut labels = Vec::with_capacity(total);
    for (i, p) in parts.iter().enumerate() {
        let start = starts[i].min(total);
        let end = if i + 1 < parts.len() { starts[i + 1].min(total) } else { total };
        if end <= start {
            return Err(Error::invalid(format!("utterance {} is too short to concatenate", p.id)));
        }
        let is_target = p.speaker_id == target_speaker_id;
        for t in start..end {
            let speech = p.speech.get(t - starts[i]).copied().unwrap_or(false);
            labels.push(match (speech, is_target) {
                (false, _) => PvadClass::Ns,
                (true, true) => PvadClass::Tss,
                (true, false) => PvadClass::Ntss,
            });
        }
        segments.push(Segment {
            start_frame: start,
            end_frame: end,
            speaker_id: p.speaker_id.clone(),
            source_id: p.id.clone(),
        });
    }
    Ok(MultiSpeakerUtterance {
        id,
        audio: AudioBuffer::new(samples, sr)?,
        segments,
        target_speaker_id: target_speaker_id.to_string(),
        labels,
    })
}

/// Draw `k ~ U{1,2,3}` distinct speakers, one random utterance each, and a
/// uniformly chosen target among them.
pub fn make_multispeaker<R: Rng>(
    pool: &[Utterance],
    id: String,
    feat: &FeatureConfig,
    rng: &mut R,
) -> Result<MultiSpeakerUtterance> {
    let speakers = by_speaker(pool);
    if speakers.len() < 3 {
        return Err(Error::invalid(format!(
            "multi-speaker sampling needs at least 3 speakers, pool has {}",
            speakers.len()
        )));
    }
    let names: Vec<&str> = speakers.keys().copied().collect();
    let k = rng.random_range(1..=3);
    let chosen = index::sample(rng, names.len(), k);
    let parts: Vec<&Utterance> = chosen
        .iter()
        .map(|s| {
            let utts = &speakers[names[s]];
            utts[rng.random_range(0..utts.len())]
        })
        .collect();
    let target = parts[rng.random_range(0..k)].speaker_id.clone();
    concatenate(id, &parts, &target, feat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStreams;

    fn utt(id: &str, spk: &str, frames: usize, speech: impl Fn(usize) -> bool) -> Utterance {
        let feat = FeatureConfig::default();
        let n = 400 + 160 * (frames - 1);
        let u = Utterance {
            id: id.into(),
            speaker_id: spk.into(),
            audio: AudioBuffer::new(vec![0.01; n], 16_000).unwrap(),
            speech: (0..frames).map(speech).collect(),
        };
        u.validate(&feat).unwrap();
        u
    }

    fn pool() -> Vec<Utterance> {
        let mut v = Vec::new();
        for s in 0..4 {
            for j in 0..3 {
                v.push(utt(&format!("s{s}u{j}"), &format!("s{s}"), 20 + 7 * j + s, |t| t % 5 < 3));
            }
        }
        v
    }

    #[test]
    fn single_speaker_speech_is_all_tss() {
        let feat = FeatureConfig::default();
        let a = utt("a", "A", 30, |t| t > 5 && t < 20);
        let m = concatenate("m".into(), &[&a], "A", &feat).unwrap();
        m.validate(&feat).unwrap();
        assert!(!m.labels.contains(&PvadClass::Ntss));
        assert_eq!(m.labels.iter().filter(|&&l| l == PvadClass::Tss).count(), 14);
    }

    #[test]
    fn concatenation_preserves_local_labels() {
        let feat = FeatureConfig::default();
        let a = utt("a", "A", 12, |t| t >= 4);
        let b = utt("b", "B", 15, |t| t < 6);
        let m = concatenate("m".into(), &[&a, &b], "B", &feat).unwrap();
        m.validate(&feat).unwrap();
        // a spans 400 + 11*160 = 2160 samples, padded to 2240 = 14 frames of shift
        assert_eq!(m.segments[0].end_frame, 14);
        assert_eq!(m.segments[1].start_frame, 14);
        assert_eq!(m.labels.len(), frame_count(m.audio.len(), &feat));
        for t in 0..14 {
            let want = if (4..12).contains(&t) { PvadClass::Ntss } else { PvadClass::Ns };
            assert_eq!(m.labels[t], want, "frame {t}");
        }
        for t in 14..m.labels.len() {
            let want = if t - 14 < 6 { PvadClass::Tss } else { PvadClass::Ns };
            assert_eq!(m.labels[t], want, "frame {t}");
        }
    }

    #[test]
    fn multispeaker_draws_are_valid() {
        let feat = FeatureConfig::default();
        let pool = pool();
        let mut r = SeedStreams::new(2).rng("m", 0);
        for i in 0..200 {
            let m = make_multispeaker(&pool, format!("m{i}"), &feat, &mut r).unwrap();
            m.validate(&feat).unwrap();
            let mut spk: Vec<&str> = m.segments.iter().map(|s| s.speaker_id.as_str()).collect();
            spk.sort();
            spk.dedup();
            assert_eq!(spk.len(), m.segments.len());
            let has_ntss = m.labels.contains(&PvadClass::Ntss);
            assert_eq!(has_ntss, m.segments.len() > 1);
        }
    }

    #[test]
    fn small_pool_rejected() {
        let feat = FeatureConfig::default();
        let pool: Vec<Utterance> = pool().into_iter().filter(|u| u.speaker_id < "s2".to_string()).collect();
        let mut r = SeedStreams::new(2).rng("m", 0);
        assert!(make_multispeaker(&pool, "x".into(), &feat, &mut r).is_err());
    }
}
