//! Desk-scale replication: synthetic corpus, stand-in speaker embedder,
//! APC / DN-APC pretraining, fine-tuning with and without MTR, and the
//! 25-condition evaluation, repeated over training seeds.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::apc::{self, ApcConfig, ApcOutcome, ApcPair, NoisyApcSource};
use crate::audio::AudioBuffer;
use crate::container::TensorContainer;
use crate::config::RunConfig;
use crate::data::noise::{average_power_spectrum, NoiseBank};
use crate::data::{
    build_test_matrix, make_multispeaker, mtr_augment, synth_corpus, MtrConfig, MultiSpeakerUtterance, RirPool,
    TestSet, Utterance, TEST_NOISE_TYPES, TRAIN_NOISE_TYPES,
};
use crate::error::{Error, Result};
use crate::eval::{self, Comparison, EvalReport, EvalSet};
use crate::data::{read_manifest, write_manifest};
use crate::features::{FeatureConfig, FeatureSequence, FeatureStats, LogMel};
use crate::nn::LstmStack;
use crate::pvad::{self, ExampleSource, PvadExample, TrainConfig, TrainOutcome};
use crate::rng::{self, SeedStreams};
use crate::speaker::{self, cosine_similarity, Dvector, EnrollmentProfile, SpeakerExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Baseline,
    Apc,
    BaselineMtr,
    ApcMtr,
    DnApcMtr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pretraining {
    Apc,
    DenoisingApc,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Apc,
        Variant::BaselineMtr,
        Variant::ApcMtr,
        Variant::DnApcMtr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Apc => "apc",
            Variant::BaselineMtr => "baseline+mtr",
            Variant::ApcMtr => "apc+mtr",
            Variant::DnApcMtr => "dn-apc+mtr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant '{s}'")))
    }

    pub fn pretraining(self) -> Option<Pretraining> {
        match self {
            Variant::Baseline | Variant::BaselineMtr => None,
            Variant::Apc | Variant::ApcMtr => Some(Pretraining::Apc),
            Variant::DnApcMtr => Some(Pretraining::DenoisingApc),
        }
    }

    pub fn mtr(self) -> bool {
        matches!(self, Variant::BaselineMtr | Variant::ApcMtr | Variant::DnApcMtr)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything synthesized from the global seed before any model is trained.
#[derive(Debug, Clone)]
pub struct Corpus {
    /// Non-enrollment utterances of the training speakers.
    pub train_pool: Vec<Utterance>,
    /// Non-enrollment utterances of the test speakers.
    pub test_pool: Vec<Utterance>,
    /// Enrollment utterances of every speaker.
    pub enroll: Vec<Utterance>,
    /// Disjoint voices for training the speaker embedder.
    pub embedder_pool: Vec<Utterance>,
    pub finetune: Vec<MultiSpeakerUtterance>,
    pub test: Vec<MultiSpeakerUtterance>,
    /// Training-type noise for MTR and DN-APC.
    pub train_noise: NoiseBank,
    /// Separately drawn clips of the test types.
    pub test_noise: NoiseBank,
    pub rirs: RirPool,
}

pub fn build_corpus(cfg: &RunConfig, seeds: &SeedStreams) -> Result<Corpus> {
    cfg.validate()?;
    let c = &cfg.corpus;
    let feat = &cfg.features;
    let all = synth_corpus(c.speakers, c.utterances_per_speaker, &cfg.synth, feat, seeds)?;
    let first_test = c.train_speakers();
    let (mut train_pool, mut test_pool, mut enroll) = (Vec::new(), Vec::new(), Vec::new());
    for (i, u) in all.into_iter().enumerate() {
        let (spk, k) = (i / c.utterances_per_speaker, i % c.utterances_per_speaker);
        if k < c.enroll_utterances {
            enroll.push(u);
        } else if spk < first_test {
            train_pool.push(u);
        } else {
            test_pool.push(u);
        }
    }
    let embedder_pool = synth_corpus(
        c.embedder_speakers,
        c.embedder_utterances,
        &cfg.synth,
        feat,
        &seeds.child(rng::EMBEDDER, 0),
    )?
    .into_iter()
    .map(|mut u| {
        u.speaker_id = format!("emb-{}", u.speaker_id);
        u.id = format!("emb-{}", u.id);
        u
    })
    .collect();

    let mix_seeds = seeds.child(rng::MIXTURES, 0);
    let finetune = (0..c.finetune_mixtures)
        .map(|i| make_multispeaker(&train_pool, format!("ft{i:04}"), feat, &mut mix_seeds.rng("finetune", i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..c.test_mixtures)
        .map(|i| make_multispeaker(&test_pool, format!("test{i:04}"), feat, &mut mix_seeds.rng("test", i as u64)))
        .collect::<Result<Vec<_>>>()?;

    let speech: Vec<&[f32]> = train_pool.iter().map(|u| u.audio.samples.as_slice()).collect();
    let psd = average_power_spectrum(&speech, feat.fft_size);
    let sr = feat.sample_rate_hz;
    let train_types: Vec<&str> = cfg.mtr.noise_types.iter().map(String::as_str).collect();
    let noise = |types: &[&str], stream: u64| {
        NoiseBank::synthetic(
            types,
            c.noise_clips_per_type,
            c.noise_clip_s,
            sr,
            &psd,
            &seeds.child(rng::NOISE, stream),
        )
    };
    let train_noise = noise(&train_types, 0)?;
    let test_noise = noise(&TEST_NOISE_TYPES, 1)?;
    let rirs = RirPool::synthetic(&cfg.mtr, sr, &seeds.child(rng::MTR, 0));
    Ok(Corpus {
        train_pool,
        test_pool,
        enroll,
        embedder_pool,
        finetune,
        test,
        train_noise,
        test_noise,
        rirs,
    })
}

const MANIFEST: &str = "manifest.jsonl";

/// On-disk layout of a synthesized corpus, one manifest per directory.
pub mod layout {
    pub const TRAIN: &str = "train";
    pub const TEST_POOL: &str = "test_pool";
    pub const ENROLL: &str = "enroll";
    pub const EMBEDDER: &str = "embedder";
    pub const FINETUNE: &str = "finetune";
    pub const TEST: &str = "test";
    pub const TRAIN_NOISE: &str = "noise/train";
    pub const TEST_NOISE: &str = "noise/test";
    pub const RIR: &str = "rir";
}

fn save_singles(dir: &Path, utts: &[Utterance]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records = utts
        .iter()
        .map(|u| u.save(dir, &format!("{}.wav", u.id)))
        .collect::<Result<Vec<_>>>()?;
    write_manifest(dir.join(MANIFEST), &records)
}

fn save_mixtures(dir: &Path, utts: &[MultiSpeakerUtterance]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records = utts
        .iter()
        .map(|u| u.save(dir, &format!("{}.wav", u.id)))
        .collect::<Result<Vec<_>>>()?;
    write_manifest(dir.join(MANIFEST), &records)
}

fn strip_wav(id: String) -> String {
    id.strip_suffix(".wav").map(str::to_string).unwrap_or(id)
}

pub fn load_singles(dir: &Path, feat: &FeatureConfig) -> Result<Vec<Utterance>> {
    read_manifest(dir.join(MANIFEST))?
        .iter()
        .map(|r| {
            let mut u = Utterance::load(r, dir, feat)?;
            u.id = strip_wav(u.id);
            Ok(u)
        })
        .collect()
}

pub fn load_mixtures(dir: &Path, feat: &FeatureConfig) -> Result<Vec<MultiSpeakerUtterance>> {
    read_manifest(dir.join(MANIFEST))?
        .iter()
        .map(|r| {
            let mut u = MultiSpeakerUtterance::load(r, dir, feat)?;
            u.id = strip_wav(u.id);
            Ok(u)
        })
        .collect()
}

impl Corpus {
    pub fn save(&self, dir: impl AsRef<Path>, sample_rate: u32) -> Result<()> {
        let dir = dir.as_ref();
        save_singles(&dir.join(layout::TRAIN), &self.train_pool)?;
        save_singles(&dir.join(layout::TEST_POOL), &self.test_pool)?;
        save_singles(&dir.join(layout::ENROLL), &self.enroll)?;
        save_singles(&dir.join(layout::EMBEDDER), &self.embedder_pool)?;
        save_mixtures(&dir.join(layout::FINETUNE), &self.finetune)?;
        save_mixtures(&dir.join(layout::TEST), &self.test)?;
        self.train_noise.save_dir(dir.join(layout::TRAIN_NOISE), sample_rate)?;
        self.test_noise.save_dir(dir.join(layout::TEST_NOISE), sample_rate)?;
        self.rirs.save_dir(dir.join(layout::RIR), sample_rate)
    }

    pub fn load(dir: impl AsRef<Path>, feat: &FeatureConfig) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            train_pool: load_singles(&dir.join(layout::TRAIN), feat)?,
            test_pool: load_singles(&dir.join(layout::TEST_POOL), feat)?,
            enroll: load_singles(&dir.join(layout::ENROLL), feat)?,
            embedder_pool: load_singles(&dir.join(layout::EMBEDDER), feat)?,
            finetune: load_mixtures(&dir.join(layout::FINETUNE), feat)?,
            test: load_mixtures(&dir.join(layout::TEST), feat)?,
            train_noise: NoiseBank::load_dir(dir.join(layout::TRAIN_NOISE))?,
            test_noise: NoiseBank::load_dir(dir.join(layout::TEST_NOISE))?,
            rirs: RirPool::load_dir(dir.join(layout::RIR))?,
        })
    }
}

/// Train the stand-in embedder on the embedder pool.
pub fn train_embedder(corpus: &Corpus, cfg: &RunConfig, frontend: &LogMel, seeds: &SeedStreams) -> Result<Dvector<f32>> {
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    for u in &corpus.embedder_pool {
        let n = ids.len();
        ids.entry(u.speaker_id.as_str()).or_insert(n);
    }
    let examples = crate::par::map(&corpus.embedder_pool, |_, u| -> Result<SpeakerExample> {
        Ok(SpeakerExample {
            features: frontend.compute(&u.audio, &u.id)?.frames,
            speaker: ids[u.speaker_id.as_str()],
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(speaker::train_embedder(&examples, ids.len(), &cfg.embedder, seeds.child(rng::EMBEDDER, 1))?.embedder)
}

/// One profile per speaker from its enrollment utterances.
pub fn enroll_all(
    embedder: &Dvector<f32>,
    enroll: &[Utterance],
    frontend: &LogMel,
) -> Result<BTreeMap<String, EnrollmentProfile>> {
    let groups: Vec<(&str, Vec<&Utterance>)> = crate::data::by_speaker(enroll).into_iter().collect();
    let profiles = crate::par::map(&groups, |_, (spk, utts)| {
        let audio: Vec<AudioBuffer> = utts.iter().map(|u| u.audio.clone()).collect();
        embedder.enroll(spk, &audio, frontend)
    });
    profiles
        .into_iter()
        .map(|p| p.map(|p| (p.speaker_id.clone(), p)))
        .collect()
}

/// Features, target similarity and labels of one mixture.
pub fn pvad_example(
    u: &MultiSpeakerUtterance,
    frontend: &LogMel,
    embedder: &Dvector<f32>,
    profiles: &BTreeMap<String, EnrollmentProfile>,
) -> Result<PvadExample> {
    let profile = profiles
        .get(&u.target_speaker_id)
        .ok_or_else(|| Error::invalid(format!("{}: no enrollment profile for {}", u.id, u.target_speaker_id)))?;
    let mut features = frontend.compute(&u.audio, &u.id)?.frames;
    if features.nrows() != u.labels.len() {
        return Err(Error::shape(format!(
            "{}: {} feature frames, {} labels",
            u.id,
            features.nrows(),
            u.labels.len()
        )));
    }
    let similarity = embedder.framewise_similarity(features.view(), &profile.embedding)?;
    if let Some(st) = frontend.stats() {
        st.apply(&mut features);
    }
    Ok(PvadExample {
        features,
        similarity,
        labels: u.labels.clone(),
    })
}

/// Fine-tuning examples with fresh multistyle corruption every epoch.
pub struct MtrSource<'a> {
    pub utterances: &'a [MultiSpeakerUtterance],
    pub frontend: &'a LogMel,
    pub embedder: &'a Dvector<f32>,
    pub profiles: &'a BTreeMap<String, EnrollmentProfile>,
    pub bank: &'a NoiseBank,
    pub rirs: &'a RirPool,
    pub mtr: &'a MtrConfig,
    pub seeds: SeedStreams,
}

impl ExampleSource for MtrSource<'_> {
    fn len(&self) -> usize {
        self.utterances.len()
    }

    fn example(&self, epoch: usize, index: usize) -> Result<PvadExample> {
        let mut r = self.seeds.child(rng::MTR, epoch as u64).rng("finetune", index as u64);
        let (noisy, _) = mtr_augment(&self.utterances[index], self.mtr, self.bank, self.rirs, &mut r)?;
        pvad_example(&noisy, self.frontend, self.embedder, self.profiles)
    }
}

/// Pretraining chunks and their clean features.
#[derive(Debug, Clone)]
pub struct PretrainData {
    pub audio: Vec<AudioBuffer>,
    pub features: Vec<FeatureSequence>,
}

/// Cut utterances into `chunk_s` pieces. Tails shorter than half a chunk
/// and pieces of pure silence (nothing to denoise) are dropped.
pub fn pretraining_chunks(pool: &[Utterance], chunk_s: f64, frontend: &LogMel) -> Result<PretrainData> {
    let sr = frontend.config().sample_rate_hz;
    let chunk = (chunk_s * sr as f64) as usize;
    if chunk == 0 {
        return Err(Error::config("pretraining chunk is shorter than one sample"));
    }
    let audio: Vec<AudioBuffer> = pool
        .iter()
        .flat_map(|u| {
            u.audio
                .samples
                .chunks(chunk)
                .filter(|c| c.len() >= chunk / 2 && c.iter().any(|&v| v != 0.0))
        })
        .map(|c| AudioBuffer::new(c.to_vec(), sr))
        .collect::<Result<_>>()?;
    let features = crate::par::map(&audio, |i, a| frontend.compute_vad(a, &format!("chunk{i}")))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(PretrainData { audio, features })
}

/// The frontend and the pretraining chunks of `pool`. With
/// `features.standardize` the stats come from those chunks.
pub fn vad_frontend(cfg: &RunConfig, pool: &[Utterance]) -> Result<(LogMel, PretrainData)> {
    let frontend = LogMel::new(&cfg.features)?;
    let mut data = pretraining_chunks(pool, cfg.corpus.pretrain_chunk_s, &frontend)?;
    if !cfg.features.standardize {
        return Ok((frontend, data));
    }
    let stats = FeatureStats::estimate(&data.features)?;
    data.features.iter_mut().for_each(|f| stats.apply(&mut f.frames));
    Ok((frontend.with_stats(stats)?, data))
}

const STATS_ATTR: &str = "feature_stats";

/// Record the frontend's stats, if any, in a checkpoint.
pub fn stamp_stats(c: &mut TensorContainer, frontend: &LogMel) -> Result<()> {
    if let Some(st) = frontend.stats() {
        let json = serde_json::to_string(st).map_err(|e| Error::format(format!("feature stats: {e}")))?;
        c.set_attr(STATS_ATTR, json);
    }
    Ok(())
}

/// The frontend a checkpoint was trained with.
pub fn frontend_for(c: &TensorContainer, feat: &FeatureConfig) -> Result<LogMel> {
    let frontend = LogMel::new(feat)?;
    match c.attr(STATS_ATTR) {
        None => Ok(frontend),
        Some(json) => {
            let st: FeatureStats =
                serde_json::from_str(json).map_err(|e| Error::format(format!("feature stats: {e}")))?;
            frontend.with_stats(st)
        }
    }
}

/// Noise, reverberation and the sampling policy shared by DN-APC and MTR.
#[derive(Clone, Copy)]
pub struct Corruption<'a> {
    pub noise: &'a NoiseBank,
    pub rirs: &'a RirPool,
    pub mtr: &'a MtrConfig,
}

/// Labelled mixtures plus everything needed to turn them into examples.
#[derive(Clone, Copy)]
pub struct FinetuneData<'a> {
    pub mixtures: &'a [MultiSpeakerUtterance],
    /// Clean examples of `mixtures`, in the same order.
    pub examples: &'a [PvadExample],
    pub frontend: &'a LogMel,
    pub embedder: &'a Dvector<f32>,
    pub profiles: &'a BTreeMap<String, EnrollmentProfile>,
}

pub fn examples_for(
    mixtures: &[MultiSpeakerUtterance],
    frontend: &LogMel,
    embedder: &Dvector<f32>,
    profiles: &BTreeMap<String, EnrollmentProfile>,
) -> Result<Vec<PvadExample>> {
    crate::par::map(mixtures, |_, u| pvad_example(u, frontend, embedder, profiles))
        .into_iter()
        .collect()
}

pub fn eval_sets_for(
    sets: &[TestSet],
    frontend: &LogMel,
    embedder: &Dvector<f32>,
    profiles: &BTreeMap<String, EnrollmentProfile>,
) -> Result<Vec<EvalSet>> {
    sets.iter()
        .map(|set| {
            Ok(EvalSet {
                condition: set.condition.clone(),
                examples: examples_for(&set.utterances, frontend, embedder, profiles)?,
            })
        })
        .collect()
}

/// Shared state for every run of the replication.
pub struct Prepared {
    pub cfg: RunConfig,
    pub frontend: LogMel,
    pub corpus: Corpus,
    pub embedder: Dvector<f32>,
    pub profiles: BTreeMap<String, EnrollmentProfile>,
    pub pretrain_data: PretrainData,
    pub finetune_examples: Vec<PvadExample>,
    pub eval_sets: Vec<EvalSet>,
}

impl Prepared {
    pub fn corruption(&self) -> Corruption<'_> {
        Corruption {
            noise: &self.corpus.train_noise,
            rirs: &self.corpus.rirs,
            mtr: &self.cfg.mtr,
        }
    }

    pub fn finetune_data(&self) -> FinetuneData<'_> {
        FinetuneData {
            mixtures: &self.corpus.finetune,
            examples: &self.finetune_examples,
            frontend: &self.frontend,
            embedder: &self.embedder,
            profiles: &self.profiles,
        }
    }
}

pub fn prepare(cfg: &RunConfig, progress: &dyn Fn(&str)) -> Result<Prepared> {
    let seeds = SeedStreams::new(cfg.seed);
    progress("synthesizing corpus");
    let corpus = build_corpus(cfg, &seeds)?;
    let (frontend, pretrain_data) = vad_frontend(cfg, &corpus.train_pool)?;
    progress("training speaker embedder");
    let embedder = train_embedder(&corpus, cfg, &frontend, &seeds)?;
    let profiles = enroll_all(&embedder, &corpus.enroll, &frontend)?;
    progress("computing fine-tuning and test features");
    let finetune_examples = examples_for(&corpus.finetune, &frontend, &embedder, &profiles)?;
    let sets = build_test_matrix(&corpus.test, &corpus.test_noise, &seeds)?;
    let eval_sets = eval_sets_for(&sets, &frontend, &embedder, &profiles)?;
    Ok(Prepared {
        cfg: cfg.clone(),
        frontend,
        corpus,
        embedder,
        profiles,
        pretrain_data,
        finetune_examples,
        eval_sets,
    })
}

/// Seeds of training run `k`; the corpus does not depend on them.
pub fn run_seeds(cfg: &RunConfig, k: usize) -> SeedStreams {
    SeedStreams::new(cfg.seed).child("run", k as u64)
}

/// APC or DN-APC pretraining. Returns the outcome and the effective config.
pub fn pretrain(
    data: &PretrainData,
    apc_cfg: &ApcConfig,
    frontend: &LogMel,
    corruption: Corruption<'_>,
    kind: Pretraining,
    seeds: &SeedStreams,
) -> Result<(ApcOutcome, ApcConfig)> {
    let mut cfg = apc_cfg.clone();
    cfg.denoising = kind == Pretraining::DenoisingApc;
    let outcome = if cfg.denoising {
        let source = NoisyApcSource {
            audio: &data.audio,
            clean: &data.features,
            frontend,
            bank: corruption.noise,
            rirs: corruption.rirs,
            mtr: corruption.mtr,
            horizon: cfg.horizon,
            noise_prob: cfg.noise_prob,
            use_rir: cfg.use_rir,
            seeds: seeds.child("dn-apc", 0),
        };
        apc::pretrain(&source, &cfg, seeds.child("dn-apc", 1))?
    } else {
        let pairs = data
            .features
            .iter()
            .filter(|f| f.len() > cfg.horizon)
            .map(|f| apc::make_apc_pairs(f.frames.view(), None, cfg.horizon))
            .collect::<Result<Vec<ApcPair>>>()?;
        apc::pretrain(pairs.as_slice(), &cfg, seeds.child("apc", 1))?
    };
    Ok((outcome, cfg))
}

/// Fine-tune on clean examples, or with MTR when `corruption` is given.
pub fn finetune(
    train_cfg: &TrainConfig,
    data: FinetuneData<'_>,
    corruption: Option<Corruption<'_>>,
    encoder: Option<&LstmStack<f32>>,
    seeds: &SeedStreams,
) -> Result<TrainOutcome> {
    let mut cfg = train_cfg.clone();
    cfg.mtr_enabled = corruption.is_some();
    let train_seeds = seeds.child("finetune", 0);
    match corruption {
        Some(c) => {
            let source = MtrSource {
                utterances: data.mixtures,
                frontend: data.frontend,
                embedder: data.embedder,
                profiles: data.profiles,
                bank: c.noise,
                rirs: c.rirs,
                mtr: c.mtr,
                seeds: seeds.child("mtr", 0),
            };
            pvad::train(&source, &cfg, train_seeds, encoder)
        }
        None => pvad::train(data.examples, &cfg, train_seeds, encoder),
    }
}

#[derive(Debug, Clone)]
pub struct VariantRun {
    pub variant: Variant,
    pub seed_index: usize,
    pub report: EvalReport,
    /// Serialized fine-tuned model.
    pub checkpoint: Vec<u8>,
    pub loss_curve: Vec<f64>,
}

/// Train and evaluate the requested variants for one seed, pretraining each
/// encoder kind at most once.
pub fn run_seed(p: &Prepared, k: usize, variants: &[Variant], progress: &dyn Fn(&str)) -> Result<Vec<VariantRun>> {
    let seeds = run_seeds(&p.cfg, k);
    let mut encoders: BTreeMap<&str, LstmStack<f32>> = BTreeMap::new();
    let mut out = Vec::with_capacity(variants.len());
    for &v in variants {
        let encoder = match v.pretraining() {
            None => None,
            Some(kind) => {
                let key = match kind {
                    Pretraining::Apc => "apc",
                    Pretraining::DenoisingApc => "dn-apc",
                };
                if !encoders.contains_key(key) {
                    progress(&format!("seed {k}: pretraining {key}"));
                    let (outcome, _) = pretrain(&p.pretrain_data, &p.cfg.apc, &p.frontend, p.corruption(), kind, &seeds)?;
                    encoders.insert(key, outcome.model.encoder);
                }
                Some(&encoders[key])
            }
        };
        progress(&format!("seed {k}: fine-tuning {v}"));
        let corruption = v.mtr().then(|| p.corruption());
        let trained = finetune(&p.cfg.train, p.finetune_data(), corruption, encoder, &seeds)?;
        let report = eval::evaluate(&trained.model, &p.eval_sets)?;
        out.push(VariantRun {
            variant: v,
            seed_index: k,
            report,
            checkpoint: trained.model.to_container()?.to_bytes()?,
            loss_curve: trained.loss_curve,
        });
    }
    Ok(out)
}

pub fn run_all(p: &Prepared, progress: &dyn Fn(&str)) -> Result<Vec<VariantRun>> {
    let variants = p
        .cfg
        .experiment
        .variants
        .iter()
        .map(|v| Variant::parse(v))
        .collect::<Result<Vec<_>>>()?;
    let mut runs = Vec::new();
    for k in 0..p.cfg.experiment.seeds {
        runs.extend(run_seed(p, k, &variants, progress)?);
    }
    Ok(runs)
}

pub fn summarize(runs: &[VariantRun]) -> Result<Comparison> {
    let mut sorted: Vec<&VariantRun> = runs.iter().collect();
    sorted.sort_by_key(|r| (r.variant, r.seed_index));
    let named: Vec<(String, EvalReport)> = sorted
        .iter()
        .map(|r| (r.variant.name().to_string(), r.report.clone()))
        .collect();
    eval::compare(&named)
}

/// Mean cosine similarity between each held-out utterance embedding and its
/// own speaker's profile, and the mean over all other profiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnrollmentGeometry {
    pub same_speaker: f64,
    pub cross_speaker: f64,
}

impl EnrollmentGeometry {
    pub fn margin(&self) -> f64 {
        self.same_speaker - self.cross_speaker
    }
}

pub fn enrollment_geometry(
    embedder: &Dvector<f32>,
    profiles: &BTreeMap<String, EnrollmentProfile>,
    held_out: &[Utterance],
    frontend: &LogMel,
) -> Result<EnrollmentGeometry> {
    let scores = crate::par::map(held_out, |_, u| -> Result<(f64, f64, usize)> {
        let f = frontend.compute(&u.audio, &u.id)?;
        let (e, _) = embedder.mean_window_embedding(std::slice::from_ref(&f))?;
        let (mut same, mut cross, mut n_cross) = (f64::NAN, 0.0, 0);
        for (id, p) in profiles {
            let c = cosine_similarity(&e, &p.embedding);
            if *id == u.speaker_id {
                same = c;
            } else {
                cross += c;
                n_cross += 1;
            }
        }
        if same.is_nan() {
            return Err(Error::invalid(format!("{}: speaker is not enrolled", u.id)));
        }
        Ok((same, cross, n_cross))
    });
    let (mut same, mut cross, mut n, mut n_cross) = (0.0, 0.0, 0, 0);
    for s in scores {
        let (a, b, c) = s?;
        same += a;
        cross += b;
        n += 1;
        n_cross += c;
    }
    if n == 0 || n_cross == 0 {
        return Err(Error::invalid("enrollment geometry needs held-out audio and at least two speakers"));
    }
    Ok(EnrollmentGeometry {
        same_speaker: same / n as f64,
        cross_speaker: cross / n_cross as f64,
    })
}

/// Enrollment geometry on a corpus drawn from `corpus_seed`, scored with an
/// already trained embedder.
pub fn enrollment_geometry_for_seed(
    embedder: &Dvector<f32>,
    cfg: &RunConfig,
    corpus_seed: u64,
    frontend: &LogMel,
) -> Result<EnrollmentGeometry> {
    let c = &cfg.corpus;
    let seeds = SeedStreams::new(corpus_seed);
    let all = synth_corpus(c.speakers, c.utterances_per_speaker, &cfg.synth, &cfg.features, &seeds)?;
    let (enroll, held): (Vec<(usize, Utterance)>, Vec<(usize, Utterance)>) = all
        .into_iter()
        .enumerate()
        .partition(|(i, _)| i % c.utterances_per_speaker < c.enroll_utterances);
    let enroll: Vec<Utterance> = enroll.into_iter().map(|(_, u)| u).collect();
    let held: Vec<Utterance> = held.into_iter().map(|(_, u)| u).collect();
    let profiles = enroll_all(embedder, &enroll, frontend)?;
    enrollment_geometry(embedder, &profiles, &held, frontend)
}

/// Seen-noise average at SNR <= 5 dB, the regime where augmentation matters.
pub fn low_snr_seen_map(report: &EvalReport) -> Option<f64> {
    report.mean_map(|r| eval::is_seen(r) && r.snr_db.is_some_and(|s| s <= 5))
}

/// Mean over all noisy conditions.
pub fn noisy_map(report: &EvalReport) -> Option<f64> {
    report.mean_map(|r| r.snr_db.is_some())
}

pub fn clean_map(report: &EvalReport) -> Option<f64> {
    report.get("clean").map(|r| r.map)
}

/// Per-variant mean of `metric` over seeds.
pub fn mean_over_seeds(runs: &[VariantRun], variant: Variant, metric: fn(&EvalReport) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = runs
        .iter()
        .filter(|r| r.variant == variant)
        .filter_map(|r| metric(&r.report))
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Frame-level sanity numbers of a prepared corpus.
pub fn corpus_summary(p: &Prepared) -> String {
    let secs = |v: &[Utterance]| v.iter().map(|u| u.audio.duration_s()).sum::<f64>();
    let msecs = |v: &[MultiSpeakerUtterance]| v.iter().map(|u| u.audio.duration_s()).sum::<f64>();
    let frames: usize = p.pretrain_data.features.iter().map(|f| f.len()).sum();
    format!(
        "train pool {:.1} min, test pool {:.1} min, enrollment {:.1} min, embedder pool {:.1} min; \
         fine-tune mixtures {:.1} min, test mixtures {:.1} min; {} pretraining chunks ({} frames); \
         train noise types {:?}",
        secs(&p.corpus.train_pool) / 60.0,
        secs(&p.corpus.test_pool) / 60.0,
        secs(&p.corpus.enroll) / 60.0,
        secs(&p.corpus.embedder_pool) / 60.0,
        msecs(&p.corpus.finetune) / 60.0,
        msecs(&p.corpus.test) / 60.0,
        p.pretrain_data.audio.len(),
        frames,
        TRAIN_NOISE_TYPES.iter().filter(|t| p.cfg.mtr.noise_types.iter().any(|n| n == *t)).collect::<Vec<_>>(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> RunConfig {
        let mut cfg = RunConfig::desk();
        cfg.corpus.speakers = 7;
        cfg.corpus.test_speakers = 3;
        cfg.corpus.utterances_per_speaker = 4;
        cfg.corpus.finetune_mixtures = 4;
        cfg.corpus.test_mixtures = 3;
        cfg.corpus.embedder_speakers = 3;
        cfg.corpus.embedder_utterances = 2;
        cfg.corpus.noise_clips_per_type = 1;
        cfg.corpus.noise_clip_s = 2.0;
        cfg.corpus.pretrain_chunk_s = 2.0;
        cfg.embedder.epochs = 1;
        cfg.apc.epochs = 1;
        cfg.train.epochs = 1;
        cfg.mtr.rir_pool_size = 2;
        cfg
    }

    #[test]
    fn corpus_save_load() {
        let cfg = tiny();
        let c = build_corpus(&cfg, &SeedStreams::new(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path(), 16_000).unwrap();
        let back = Corpus::load(dir.path(), &cfg.features).unwrap();
        assert_eq!(back.finetune.len(), c.finetune.len());
        assert_eq!(back.test[0].labels, c.test[0].labels);
        assert_eq!(back.test[0].id, c.test[0].id);
        assert_eq!(back.enroll[1].speaker_id, c.enroll[1].speaker_id);
        assert_eq!(back.train_noise.types(), c.train_noise.types());
        assert_eq!(back.rirs.rirs.len(), c.rirs.rirs.len());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert!(Variant::parse("apc+dn").is_err());
        assert!(!Variant::Apc.mtr());
        assert_eq!(Variant::DnApcMtr.pretraining(), Some(Pretraining::DenoisingApc));
    }

    #[test]
    fn corpus_split_keeps_test_speakers_apart() {
        let cfg = tiny();
        let c = build_corpus(&cfg, &SeedStreams::new(3)).unwrap();
        let train: Vec<&str> = c.train_pool.iter().map(|u| u.speaker_id.as_str()).collect();
        for u in &c.test {
            for s in &u.segments {
                assert!(!train.contains(&s.speaker_id.as_str()));
            }
        }
        assert_eq!(c.enroll.len(), cfg.corpus.speakers * cfg.corpus.enroll_utterances);
        assert!(c.test_noise.clips("cafe").is_ok());
        assert!(c.train_noise.clips("cafe").is_err());
        let enrolled: Vec<&str> = c.enroll.iter().map(|u| u.id.as_str()).collect();
        for m in c.finetune.iter().chain(&c.test) {
            for s in &m.segments {
                assert!(!enrolled.contains(&s.source_id.as_str()));
            }
        }
    }

    #[test]
    fn tiny_pipeline_runs_and_is_repeatable() {
        let cfg = tiny();
        let quiet = |_: &str| {};
        let p = prepare(&cfg, &quiet).unwrap();
        assert_eq!(p.eval_sets.len(), 25);
        let a = run_seed(&p, 0, &[Variant::Baseline, Variant::DnApcMtr], &quiet).unwrap();
        let b = run_seed(&p, 0, &[Variant::Baseline], &quiet).unwrap();
        assert_eq!(a[0].checkpoint, b[0].checkpoint);
        assert_eq!(a[0].report.to_csv().unwrap(), b[0].report.to_csv().unwrap());
        assert_eq!(a[0].report.rows.len(), 25);
        let cmp = summarize(&a).unwrap();
        assert_eq!(cmp.models, vec!["baseline", "dn-apc+mtr"]);
        let g = enrollment_geometry_for_seed(&p.embedder, &cfg, 5, &p.frontend).unwrap();
        assert!(g.same_speaker.is_finite() && g.cross_speaker.is_finite());
    }
}
