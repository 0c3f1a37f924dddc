//! The full run configuration, read from TOML. Every key has a default and
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::apc::ApcConfig;
use crate::data::{MtrConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::pvad::TrainConfig;
use crate::speaker::EmbedderConfig;

/// Sizes of the synthetic corpus and how it is split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub speakers: usize,
    /// The last `test_speakers` speakers only appear in test mixtures.
    pub test_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Per speaker, held out of every mixture and used for enrollment.
    pub enroll_utterances: usize,
    pub finetune_mixtures: usize,
    pub test_mixtures: usize,
    /// Pretraining utterances are cut into chunks of this length.
    pub pretrain_chunk_s: f64,
    /// Separate voices the stand-in speaker embedder is trained on.
    pub embedder_speakers: usize,
    pub embedder_utterances: usize,
    pub noise_clips_per_type: usize,
    pub noise_clip_s: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            speakers: 20,
            test_speakers: 6,
            utterances_per_speaker: 20,
            enroll_utterances: 2,
            finetune_mixtures: 24,
            test_mixtures: 16,
            pretrain_chunk_s: 1.0,
            embedder_speakers: 40,
            embedder_utterances: 6,
            noise_clips_per_type: 3,
            noise_clip_s: 8.0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.test_speakers < 3 || self.speakers < self.test_speakers + 3 {
            return Err(Error::config(
                "corpus: need at least 3 test speakers and 3 training speakers",
            ));
        }
        if self.enroll_utterances == 0 || self.utterances_per_speaker <= self.enroll_utterances {
            return Err(Error::config(
                "corpus: every speaker needs enrollment utterances and at least one more",
            ));
        }
        if self.finetune_mixtures == 0 || self.test_mixtures == 0 {
            return Err(Error::config("corpus: mixture counts must be positive"));
        }
        if !(self.pretrain_chunk_s > 0.0) || !(self.noise_clip_s > 0.0) || self.noise_clips_per_type == 0 {
            return Err(Error::config("corpus: chunk and noise lengths must be positive"));
        }
        if self.embedder_speakers < 2 || self.embedder_utterances == 0 {
            return Err(Error::config("corpus: the embedder needs at least two speakers"));
        }
        Ok(())
    }

    pub fn train_speakers(&self) -> usize {
        self.speakers - self.test_speakers
    }
}

/// Model variants of the replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: usize,
    pub variants: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: 5,
            variants: ["baseline", "apc", "baseline+mtr", "apc+mtr", "dn-apc+mtr"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub features: FeatureConfig,
    pub synth: SynthConfig,
    pub corpus: CorpusConfig,
    pub apc: ApcConfig,
    pub train: TrainConfig,
    pub mtr: MtrConfig,
    pub embedder: EmbedderConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            features: FeatureConfig::default(),
            synth: SynthConfig::default(),
            corpus: CorpusConfig::default(),
            apc: ApcConfig::default(),
            train: TrainConfig::default(),
            mtr: MtrConfig::default(),
            embedder: EmbedderConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    /// Settings for the small synthetic corpus: fine-tuning that actually
    /// moves the model (the defaults are sized for a large corpus), and
    /// standardized VAD inputs, without which APC saturates the encoder.
    pub fn desk() -> Self {
        Self {
            features: FeatureConfig {
                standardize: true,
                ..FeatureConfig::default()
            },
            train: TrainConfig {
                batch_size: 8,
                lr0: 5e-3,
                epochs: 15,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.synth.validate()?;
        self.corpus.validate()?;
        self.apc.validate()?;
        self.train.validate()?;
        self.mtr.validate()?;
        if self.synth.sample_rate_hz != self.features.sample_rate_hz {
            return Err(Error::config("synth and feature sample rates differ"));
        }
        if self.experiment.seeds == 0 {
            return Err(Error::config("experiment: seeds must be positive"));
        }
        for v in &self.experiment.variants {
            crate::experiment::Variant::parse(v)?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_desk_config_matches_the_preset() {
        let text = include_str!("../../../configs/desk.toml");
        assert_eq!(RunConfig::from_toml(text).unwrap(), RunConfig::desk());
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.seed = 17;
        c.apc.denoising = true;
        c.corpus.test_mixtures = 3;
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("sede = 3"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[apc]\nhorizn = 3"), Err(Error::Config(_))));
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = RunConfig::from_toml("seed = 4\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.apc, ApcConfig::default());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[corpus]\ntest_speakers = 1").is_err());
        assert!(RunConfig::from_toml("[experiment]\nvariants = [\"nope\"]").is_err());
        assert!(RunConfig::from_toml("[mtr]\np_noise = 2.0").is_err());
    }
}
