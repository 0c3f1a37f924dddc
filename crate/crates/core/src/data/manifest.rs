//! Line-delimited JSON manifests. One record per utterance; labels are
//! run-length encoded as `[class, start_frame, end_frame]` triples.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MultiSpeakerUtterance, Segment, TestCondition, Utterance};
use crate::audio::{read_wav, write_wav};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::pvad::PvadClass;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRun(pub String, pub usize, pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    /// Relative to the manifest's directory unless absolute.
    pub audio_path: String,
    pub sample_rate: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_speaker_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<Segment>,
    pub labels: Vec<LabelRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<TestCondition>,
    /// Gain applied to the whole mixture after noise was added.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix_gain: Option<f64>,
    /// Clean counterpart of a noisy test file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_path: Option<String>,
}

pub fn encode_runs<T: Copy + PartialEq>(labels: &[T], name: impl Fn(T) -> &'static str) -> Vec<LabelRun> {
    let mut runs: Vec<LabelRun> = Vec::new();
    let mut start = 0;
    for t in 1..=labels.len() {
        if t == labels.len() || labels[t] != labels[start] {
            runs.push(LabelRun(name(labels[start]).to_string(), start, t));
            start = t;
        }
    }
    runs
}

pub fn decode_runs<T: Copy>(runs: &[LabelRun], parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for LabelRun(name, start, end) in runs {
        if *start != out.len() || end <= start {
            return Err(Error::format(format!("label runs are not contiguous at frame {start}")));
        }
        let v = parse(name).ok_or_else(|| Error::format(format!("unknown label '{name}'")))?;
        out.extend(std::iter::repeat_n(v, end - start));
    }
    Ok(out)
}

fn speech_name(s: bool) -> &'static str {
    if s {
        "speech"
    } else {
        "ns"
    }
}

fn parse_speech(s: &str) -> Option<bool> {
    match s {
        "speech" => Some(true),
        "ns" => Some(false),
        _ => None,
    }
}

fn parse_class(s: &str) -> Option<PvadClass> {
    PvadClass::ALL.into_iter().find(|c| c.name() == s)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::format(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn resolve(base: &Path, audio_path: &str) -> PathBuf {
    let p = Path::new(audio_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Utterance {
    /// Writes the WAV at `dir/rel_path` and returns its manifest record.
    pub fn save(&self, dir: &Path, rel_path: &str) -> Result<ManifestRecord> {
        let full = dir.join(rel_path);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_wav(&full, &self.audio)?;
        Ok(ManifestRecord {
            audio_path: rel_path.to_string(),
            sample_rate: self.audio.sample_rate_hz,
            speaker_id: Some(self.speaker_id.clone()),
            target_speaker_id: None,
            segments: Vec::new(),
            labels: encode_runs(&self.speech, speech_name),
            condition: None,
            mix_gain: None,
            clean_path: None,
        })
    }

    pub fn load(rec: &ManifestRecord, base: &Path, feat: &FeatureConfig) -> Result<Self> {
        let speaker_id = rec
            .speaker_id
            .clone()
            .ok_or_else(|| Error::format(format!("{}: record has no speaker_id", rec.audio_path)))?;
        let audio = read_wav(resolve(base, &rec.audio_path))?;
        if audio.sample_rate_hz != rec.sample_rate {
            return Err(Error::format(format!("{}: sample rate disagrees with manifest", rec.audio_path)));
        }
        let u = Utterance {
            id: rec.audio_path.clone(),
            speaker_id,
            audio,
            speech: decode_runs(&rec.labels, parse_speech)?,
        };
        u.validate(feat)?;
        Ok(u)
    }
}

impl MultiSpeakerUtterance {
    pub fn save(&self, dir: &Path, rel_path: &str) -> Result<ManifestRecord> {
        let full = dir.join(rel_path);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_wav(&full, &self.audio)?;
        Ok(ManifestRecord {
            audio_path: rel_path.to_string(),
            sample_rate: self.audio.sample_rate_hz,
            speaker_id: None,
            target_speaker_id: Some(self.target_speaker_id.clone()),
            segments: self.segments.clone(),
            labels: encode_runs(&self.labels, PvadClass::name),
            condition: None,
            mix_gain: None,
            clean_path: None,
        })
    }

    pub fn load(rec: &ManifestRecord, base: &Path, feat: &FeatureConfig) -> Result<Self> {
        let target = rec
            .target_speaker_id
            .clone()
            .ok_or_else(|| Error::format(format!("{}: record has no target_speaker_id", rec.audio_path)))?;
        let audio = read_wav(resolve(base, &rec.audio_path))?;
        let m = MultiSpeakerUtterance {
            id: rec.audio_path.clone(),
            audio,
            segments: rec.segments.clone(),
            target_speaker_id: target,
            labels: decode_runs(&rec.labels, parse_class)?,
        };
        m.validate(feat)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioBuffer;

    #[test]
    fn runs_round_trip() {
        let labels = [PvadClass::Ns, PvadClass::Ns, PvadClass::Tss, PvadClass::Ntss, PvadClass::Ntss];
        let runs = encode_runs(&labels, PvadClass::name);
        assert_eq!(
            runs,
            vec![
                LabelRun("ns".into(), 0, 2),
                LabelRun("tss".into(), 2, 3),
                LabelRun("ntss".into(), 3, 5)
            ]
        );
        assert_eq!(decode_runs(&runs, parse_class).unwrap(), labels);
        assert!(encode_runs::<bool>(&[], speech_name).is_empty());
        let gap = [LabelRun("ns".into(), 0, 2), LabelRun("tss".into(), 3, 4)];
        assert!(decode_runs(&gap, parse_class).is_err());
        assert!(decode_runs(&[LabelRun("x".into(), 0, 1)], parse_class).is_err());
    }

    #[test]
    fn utterance_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let feat = FeatureConfig::default();
        let samples: Vec<f32> = (0..1200).map(|i| ((i % 50) as f32 - 25.0) / 100.0).collect();
        let u = Utterance {
            id: "x".into(),
            speaker_id: "spk".into(),
            audio: AudioBuffer::new(samples, 16_000).unwrap(),
            speech: vec![false, true, true, false, true, true],
        };
        let rec = u.save(dir.path(), "a/x.wav").unwrap();
        let mpath = dir.path().join("m.jsonl");
        write_manifest(&mpath, &[rec.clone()]).unwrap();
        let back = read_manifest(&mpath).unwrap();
        assert_eq!(back, vec![rec]);
        let v = Utterance::load(&back[0], dir.path(), &feat).unwrap();
        assert_eq!(v.speech, u.speech);
        assert_eq!(v.speaker_id, "spk");
        fs::write(&mpath, "{\"audio_path\": 3}\n").unwrap();
        assert!(matches!(read_manifest(&mpath), Err(Error::Format(_))));
    }
}
