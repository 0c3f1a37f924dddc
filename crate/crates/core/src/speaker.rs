//! Frozen d-vector speaker embedder: window embeddings, enrollment and
//! cosine scoring.
//!
//! The canonical architecture is a 3-layer, 256-unit LSTM on 40-dim log-mel
//! frames followed by a 256-dim linear projection. Weights are loaded from a
//! checkpoint; [`train_embedder`] produces a small stand-in on the synthetic
//! corpus by speaker classification on L2-normalized embeddings, after which
//! the classifier is dropped.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::container::{Tensor, TensorContainer};
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, LogMel};
use crate::nn::loss::softmax_xent_sum;
use crate::nn::{AdamConfig, Linear, LstmStack, ParamSet, Scalar};
use crate::rng::{self, SeedStreams};
use crate::trainer::{self, FitConfig};

/// Enrollment window: 1.6 s of 10 ms frames.
pub const WINDOW_FRAMES: usize = 160;
/// Enrollment window shift: 0.4 s.
pub const WINDOW_SHIFT: usize = 40;
pub const MIN_ENROLL_S: f64 = 5.0;
pub const EMBED_DIM: usize = 256;

/// Unit-norm speaker embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    vector: Vec<f32>,
}

impl SpeakerEmbedding {
    /// L2-normalizes `v`; the zero vector has no direction and is rejected.
    pub fn new(v: &[f32]) -> Result<Self> {
        let norm = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::invalid("cannot normalize a zero or non-finite embedding"));
        }
        Ok(Self {
            vector: v.iter().map(|&x| (x as f64 / norm) as f32).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Dot product of two unit vectors, clamped into [-1, 1] against rounding.
pub fn cosine_similarity(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> f64 {
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(&x, &y)| x as f64 * y as f64).sum();
    dot.clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrollmentProfile {
    pub speaker_id: String,
    pub embedding: SpeakerEmbedding,
    pub n_windows: usize,
    pub total_enrolled_seconds: f64,
}

/// LSTM stack plus linear projection; the last-frame output of a window is
/// the d-vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dvector<F: Scalar = f32> {
    pub lstm: LstmStack<F>,
    pub projection: Linear<F>,
}

impl<F: Scalar> Dvector<F> {
    pub fn init<R: Rng>(input: usize, hidden: usize, layers: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            lstm: LstmStack::init("dvector.lstm", input, hidden, layers, rng),
            projection: Linear::init("dvector.proj", hidden, dim, rng),
        }
    }

    /// 3 x 256 LSTM on 40-dim input with a 256-dim projection.
    pub fn canonical<R: Rng>(rng: &mut R) -> Self {
        Self::init(40, 256, 3, EMBED_DIM, rng)
    }

    pub fn param_count(input: usize, hidden: usize, layers: usize, dim: usize) -> usize {
        LstmStack::<F>::param_count(input, hidden, layers) + hidden * dim + dim
    }

    pub fn embed_dim(&self) -> usize {
        self.projection.output_size()
    }

    /// Un-normalized projected outputs for every frame.
    pub fn frame_outputs(&self, features: ArrayView2<F>) -> Result<Array2<F>> {
        let (h, _, _) = self.lstm.forward(features, None)?;
        self.projection.forward(h.view())
    }

    pub fn checksum(&self) -> u64 {
        // FNV-1a over the little-endian f32 bytes
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for s in self.slices() {
            for x in s {
                for b in x.to_f32().unwrap().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

impl Dvector<f32> {
    /// The d-vector of one 160-frame window.
    pub fn embed_window(&self, window: ArrayView2<f32>) -> Result<SpeakerEmbedding> {
        if window.nrows() != WINDOW_FRAMES {
            return Err(Error::shape(format!(
                "embedding window must have {WINDOW_FRAMES} frames, got {}",
                window.nrows()
            )));
        }
        let out = self.frame_outputs(window)?;
        SpeakerEmbedding::new(out.row(WINDOW_FRAMES - 1).as_slice().unwrap())
    }

    /// Average of window embeddings (160-frame windows every 40 frames within
    /// each utterance), renormalized.
    pub fn enroll_features(
        &self,
        speaker_id: &str,
        utterances: &[FeatureSequence],
        total_seconds: f64,
    ) -> Result<EnrollmentProfile> {
        if total_seconds < MIN_ENROLL_S {
            return Err(Error::InsufficientAudio {
                seconds: total_seconds,
                required: MIN_ENROLL_S,
            });
        }
        let (embedding, n_windows) = self.mean_window_embedding(utterances).map_err(|e| match e {
            Error::InvalidInput(m) => Error::invalid(format!("{speaker_id}: {m}")),
            e => e,
        })?;
        Ok(EnrollmentProfile {
            speaker_id: speaker_id.to_string(),
            embedding,
            n_windows,
            total_enrolled_seconds: total_seconds,
        })
    }

    /// Renormalized mean of all window embeddings, and the window count.
    pub fn mean_window_embedding(&self, utterances: &[FeatureSequence]) -> Result<(SpeakerEmbedding, usize)> {
        let mut acc = vec![0.0f64; self.embed_dim()];
        let mut n = 0;
        for f in utterances {
            for start in window_starts(f.len()) {
                let e = self.embed_window(f.frames.slice(ndarray::s![start..start + WINDOW_FRAMES, ..]))?;
                for (a, &v) in acc.iter_mut().zip(e.as_slice()) {
                    *a += v as f64;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::invalid(format!("no utterance is at least {WINDOW_FRAMES} frames long")));
        }
        let mean: Vec<f32> = acc.iter().map(|&a| (a / n as f64) as f32).collect();
        Ok((SpeakerEmbedding::new(&mean)?, n))
    }

    pub fn enroll(&self, speaker_id: &str, utterances: &[AudioBuffer], frontend: &LogMel) -> Result<EnrollmentProfile> {
        let total: f64 = utterances.iter().map(AudioBuffer::duration_s).sum();
        if total < MIN_ENROLL_S {
            return Err(Error::InsufficientAudio {
                seconds: total,
                required: MIN_ENROLL_S,
            });
        }
        let feats = utterances
            .iter()
            .enumerate()
            .map(|(i, a)| frontend.compute(a, &format!("{speaker_id}/enroll{i}")))
            .collect::<Result<Vec<_>>>()?;
        self.enroll_features(speaker_id, &feats, total)
    }

    /// Causal per-frame similarity: cosine between the normalized running
    /// d-vector output at frame t and the profile. Frames whose output is
    /// exactly zero score 0.
    pub fn framewise_similarity(&self, features: ArrayView2<f32>, profile: &SpeakerEmbedding) -> Result<Vec<f32>> {
        if profile.dim() != self.embed_dim() {
            return Err(Error::shape(format!(
                "profile has {} dims, embedder produces {}",
                profile.dim(),
                self.embed_dim()
            )));
        }
        let out = self.frame_outputs(features)?;
        Ok(out
            .rows()
            .into_iter()
            .map(|r| match SpeakerEmbedding::new(r.as_slice().unwrap()) {
                Ok(e) => cosine_similarity(&e, profile) as f32,
                Err(_) => 0.0,
            })
            .collect())
    }

    pub fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        c.extend(self.to_tensors())?;
        c.set_attr("kind", "dvector");
        c.set_attr("input", self.lstm.input_size().to_string());
        c.set_attr("hidden", self.lstm.hidden_size().to_string());
        c.set_attr("layers", self.lstm.num_layers().to_string());
        c.set_attr("dim", self.embed_dim().to_string());
        Ok(c)
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        if c.attr("kind") != Some("dvector") {
            return Err(Error::format("checkpoint is not a d-vector model"));
        }
        let dims = |k: &str| -> Result<usize> {
            c.attr(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format(format!("checkpoint attr {k} missing")))
        };
        let mut m = Dvector {
            lstm: LstmStack::zeros("dvector.lstm", dims("input")?, dims("hidden")?, dims("layers")?),
            projection: Linear::zeros("dvector.proj", dims("hidden")?, dims("dim")?),
        };
        m.load_tensors(&c.map_with_prefix("dvector."))?;
        Ok(m)
    }
}

/// Start frames of the enrollment windows over `n_frames` frames.
pub fn window_starts(n_frames: usize) -> impl Iterator<Item = usize> {
    let n = if n_frames < WINDOW_FRAMES {
        0
    } else {
        (n_frames - WINDOW_FRAMES) / WINDOW_SHIFT + 1
    };
    (0..n).map(|i| i * WINDOW_SHIFT)
}

impl<F: Scalar> ParamSet<F> for Dvector<F> {
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut l = self.lstm.layout();
        l.extend(self.projection.layout());
        l
    }

    fn slices(&self) -> Vec<&[F]> {
        let mut s = self.lstm.slices();
        s.extend(self.projection.slices());
        s
    }

    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut s = self.lstm.slices_mut();
        s.extend(self.projection.slices_mut());
        s
    }
}

/// Profiles keyed by speaker id, stored as `profile.<id>` tensors.
pub fn profiles_to_container(profiles: &[EnrollmentProfile]) -> Result<TensorContainer> {
    let mut c = TensorContainer::new();
    c.set_attr("kind", "profiles");
    for p in profiles {
        c.push(format!("profile.{}", p.speaker_id), Tensor::vector(p.embedding.as_slice().to_vec()))?;
        c.set_attr(format!("windows.{}", p.speaker_id), p.n_windows.to_string());
        c.set_attr(format!("seconds.{}", p.speaker_id), format!("{}", p.total_enrolled_seconds));
    }
    Ok(c)
}

pub fn profiles_from_container(c: &TensorContainer) -> Result<BTreeMap<String, EnrollmentProfile>> {
    if c.attr("kind") != Some("profiles") {
        return Err(Error::format("container does not hold enrollment profiles"));
    }
    let mut out = BTreeMap::new();
    for (name, t) in c.map_with_prefix("profile.") {
        let id = name.trim_start_matches("profile.").to_string();
        let num = |k: &str| c.attr(&format!("{k}.{id}")).and_then(|v| v.parse::<f64>().ok());
        let profile = EnrollmentProfile {
            embedding: SpeakerEmbedding::new(&t.data)?,
            n_windows: num("windows").unwrap_or(0.0) as usize,
            total_enrolled_seconds: num("seconds").unwrap_or(0.0),
            speaker_id: id.clone(),
        };
        out.insert(id, profile);
    }
    Ok(out)
}

/// Hyperparameters of the desk-scale stand-in embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Crop length range in frames for each training item.
    pub min_crop: usize,
    pub max_crop: usize,
    /// Frames at the start of a crop excluded from the loss while the LSTM
    /// state builds up.
    pub warmup: usize,
    /// Logit scale applied to the cosine classifier.
    pub scale: f64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 1,
            dim: EMBED_DIM,
            epochs: 12,
            batch_size: 16,
            lr0: 0.01,
            min_crop: WINDOW_FRAMES,
            max_crop: 320,
            warmup: 20,
            scale: 10.0,
        }
    }
}

/// Embedder plus a bias-free classifier over unit-normalized embeddings,
/// `logits = scale · W n`, used only for training.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerClassifier<F: Scalar> {
    pub embedder: Dvector<F>,
    pub classifier: Array2<F>,
    pub scale: F,
}

impl<F: Scalar> ParamSet<F> for SpeakerClassifier<F> {
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut l = self.embedder.layout();
        l.push(("classifier.weight".into(), self.classifier.shape().to_vec()));
        l
    }

    fn slices(&self) -> Vec<&[F]> {
        let mut s = self.embedder.slices();
        s.push(self.classifier.as_slice().unwrap());
        s
    }

    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut s = self.embedder.slices_mut();
        s.push(self.classifier.as_slice_mut().unwrap());
        s
    }
}

impl<F: Scalar> SpeakerClassifier<F> {
    /// Summed cross-entropy over frames with `mask[t]`, and its gradient.
    pub fn loss_sum_and_grad(&self, features: ArrayView2<F>, speaker: usize, mask: &[bool]) -> Result<(f64, usize, Self)> {
        let (h, _, cache) = self.embedder.lstm.forward(features, None)?;
        let e = self.embedder.projection.forward(h.view())?;
        let norms: Array1<F> = e.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(F::of(1e-12)));
        let n = &e / &norms.view().insert_axis(Axis(1));
        let logits = n.dot(&self.classifier.t()) * self.scale;
        let targets = vec![speaker; features.nrows()];
        let (sum, count, glogits) = softmax_xent_sum(logits.view(), &targets, mask)?;
        let glogits = glogits * self.scale;
        let gw = glogits.t().dot(&n);
        let gn = glogits.dot(&self.classifier);
        // d n / d e = (I - n nᵀ) / |e|
        let proj = (&gn * &n).sum_axis(Axis(1));
        let ge = (&gn - &(&n * &proj.view().insert_axis(Axis(1)))) / &norms.view().insert_axis(Axis(1));
        let (gproj, gh) = self.embedder.projection.backward(h.view(), ge.view())?;
        let (glstm, _) = self.embedder.lstm.backward(&cache, gh.view())?;
        Ok((
            sum,
            count,
            SpeakerClassifier {
                embedder: Dvector {
                    lstm: glstm,
                    projection: gproj,
                },
                classifier: gw,
                scale: self.scale,
            },
        ))
    }
}

/// One training utterance for the embedder.
#[derive(Debug, Clone)]
pub struct SpeakerExample {
    pub features: Array2<f32>,
    pub speaker: usize,
}

#[derive(Debug, Clone)]
pub struct EmbedderOutcome {
    pub embedder: Dvector<f32>,
    pub loss_curve: Vec<f64>,
}

/// Train the stand-in embedder. Each epoch every utterance contributes one
/// random crop; the loss covers every crop frame after the warm-up.
pub fn train_embedder(
    examples: &[SpeakerExample],
    n_speakers: usize,
    cfg: &EmbedderConfig,
    seeds: SeedStreams,
) -> Result<EmbedderOutcome> {
    if examples.is_empty() || n_speakers < 2 {
        return Err(Error::invalid("embedder training needs examples from at least two speakers"));
    }
    if cfg.min_crop <= cfg.warmup || cfg.max_crop < cfg.min_crop {
        return Err(Error::config("embedder: need warmup < min_crop <= max_crop"));
    }
    let input = examples[0].features.ncols();
    let mut init = seeds.rng(rng::INIT, 0);
    let mut model = SpeakerClassifier {
        embedder: Dvector::<f32>::init(input, cfg.hidden, cfg.layers, cfg.dim, &mut init),
        classifier: Array2::from_shape_fn((n_speakers, cfg.dim), |_| init.random_range(-0.1f32..0.1)),
        scale: cfg.scale as f32,
    };
    let fit_cfg = FitConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr0: cfg.lr0,
        min_lr: 0.0,
        clip_norm: Some(5.0),
        adam: AdamConfig::default(),
    };
    let result = trainer::fit(&mut model, examples.len(), &fit_cfg, seeds, |m, epoch, i| {
        let ex = &examples[i];
        let t = ex.features.nrows();
        let mut r = seeds.child(rng::EMBEDDER, epoch as u64).rng("crop", i as u64);
        let len = r.random_range(cfg.min_crop..=cfg.max_crop).min(t);
        let start = r.random_range(0..=t - len);
        let crop = ex.features.slice(ndarray::s![start..start + len, ..]);
        let mask: Vec<bool> = (0..len).map(|k| k >= cfg.warmup.min(len - 1)).collect();
        m.loss_sum_and_grad(crop, ex.speaker, &mask)
    })?;
    Ok(EmbedderOutcome {
        embedder: model.embedder,
        loss_curve: result.loss_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;
    use rand::SeedableRng;

    fn small<R: Rng>(rng: &mut R) -> Dvector<f32> {
        Dvector::init(40, 8, 1, 16, rng)
    }

    fn feats(t: usize, seed: u64) -> Array2<f32> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((t, 40), |_| r.random_range(-2.0f32..2.0))
    }

    #[test]
    fn canonical_parameter_count() {
        // 4H(D+H+1) per layer: 4·256·297 + 2·4·256·513, plus 256·256 + 256
        assert_eq!(Dvector::<f32>::param_count(40, 256, 3, 256), 1_420_544);
    }

    #[test]
    fn window_count_for_five_seconds() {
        let cfg = FeatureConfig::default();
        let frames = crate::features::frame_count(80_000, &cfg);
        let starts: Vec<usize> = window_starts(frames).collect();
        assert_eq!(starts, (0..9).map(|i| i * 40).collect::<Vec<_>>());
        assert_eq!(window_starts(159).count(), 0);
        assert_eq!(window_starts(160).count(), 1);
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let mut r = SeedStreams::new(1).rng("t", 0);
        let d = small(&mut r);
        let w = feats(160, 1);
        let a = d.embed_window(w.view()).unwrap();
        let b = d.embed_window(w.view()).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.as_slice().iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(d.embed_window(feats(159, 1).view()).is_err());
    }

    #[test]
    fn zero_weights_cannot_be_normalized() {
        let d = Dvector::<f32> {
            lstm: LstmStack::zeros("dvector.lstm", 40, 4, 1),
            projection: Linear::zeros("dvector.proj", 4, 8),
        };
        assert!(d.embed_window(feats(160, 2).view()).is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = SpeakerEmbedding::new(&[1.0, 2.0, 3.0]).unwrap();
        let neg = SpeakerEmbedding::new(&[-1.0, -2.0, -3.0]).unwrap();
        let orth = SpeakerEmbedding::new(&[3.0, 0.0, -1.0]).unwrap();
        assert!((cosine_similarity(&a, &a) - 1.0).abs() < 1e-6);
        assert!((cosine_similarity(&a, &neg) + 1.0).abs() < 1e-6);
        assert!(cosine_similarity(&a, &orth).abs() < 1e-6);
        let scaled = SpeakerEmbedding::new(&[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(a, scaled);
        assert!(SpeakerEmbedding::new(&[0.0; 3]).is_err());
    }

    #[test]
    fn enrollment_contract() {
        let mut r = SeedStreams::new(3).rng("t", 0);
        let d = small(&mut r);
        let fs = FeatureSequence {
            frames: feats(498, 3),
            frame_shift_ms: 10.0,
            source_id: "x".into(),
        };
        let p = d.enroll_features("a", std::slice::from_ref(&fs), 5.0).unwrap();
        assert_eq!(p.n_windows, 9);
        let twice = d.enroll_features("a", &[fs.clone(), fs.clone()], 10.0).unwrap();
        assert_eq!(twice.n_windows, 18);
        for (x, y) in p.embedding.as_slice().iter().zip(twice.embedding.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }
        let short = FeatureSequence {
            frames: feats(160, 4),
            ..fs
        };
        assert!(matches!(
            d.enroll_features("a", &[short], 1.6),
            Err(Error::InsufficientAudio { .. })
        ));
    }

    #[test]
    fn enroll_from_audio_counts_windows() {
        let mut r = SeedStreams::new(4).rng("t", 0);
        let d = small(&mut r);
        let audio = AudioBuffer::new((0..80_000).map(|i| ((i % 97) as f32 / 97.0) - 0.5).collect(), 16_000).unwrap();
        let frontend = LogMel::new(&FeatureConfig::default()).unwrap();
        let p = d.enroll("a", &[audio.clone()], &frontend).unwrap();
        assert_eq!(p.n_windows, 9);
        assert_eq!(p.total_enrolled_seconds, 5.0);
        let short = AudioBuffer::new(audio.samples[..25_600].to_vec(), 16_000).unwrap();
        assert!(d.enroll("a", &[short], &frontend).is_err());
    }

    #[test]
    fn framewise_similarity_is_causal_and_bounded() {
        let mut r = SeedStreams::new(5).rng("t", 0);
        let d = small(&mut r);
        let x = feats(30, 5);
        let profile = SpeakerEmbedding::new(d.frame_outputs(x.view()).unwrap().row(29).as_slice().unwrap()).unwrap();
        let s = d.framewise_similarity(x.view(), &profile).unwrap();
        assert!(s.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!((s[29] - 1.0).abs() < 1e-6);
        let mut y = x.clone();
        y.row_mut(20).fill(9.0);
        let s2 = d.framewise_similarity(y.view(), &profile).unwrap();
        assert_eq!(s[..20], s2[..20]);
        assert_ne!(s[20], s2[20]);
    }

    #[test]
    fn container_round_trips() {
        let mut r = SeedStreams::new(6).rng("t", 0);
        let d = small(&mut r);
        let back = Dvector::from_container(&d.to_container().unwrap()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.checksum(), d.checksum());
        let p = d
            .enroll_features(
                "spk001",
                &[FeatureSequence {
                    frames: feats(500, 6),
                    frame_shift_ms: 10.0,
                    source_id: "x".into(),
                }],
                5.0,
            )
            .unwrap();
        let c = profiles_to_container(std::slice::from_ref(&p)).unwrap();
        let bytes = c.to_bytes().unwrap();
        let loaded = profiles_from_container(&TensorContainer::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(loaded["spk001"], p);
    }

    #[test]
    fn classifier_gradient_matches_finite_differences() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut m = SpeakerClassifier::<f64> {
            embedder: Dvector::init(3, 3, 1, 4, &mut r),
            classifier: Array2::from_shape_fn((3, 4), |_| r.random_range(-1.0..1.0)),
            scale: 3.0,
        };
        m.embedder.projection.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
        let x = Array2::from_shape_fn((5, 3), |_| r.random_range(-1.0..1.0));
        let mask = [false, true, true, false, true];
        let (_, _, g) = m.loss_sum_and_grad(x.view(), 1, &mask).unwrap();
        let flat = g.to_flat();
        let h = 1e-5;
        for k in 0..m.num_params() {
            let bump = |m: &mut SpeakerClassifier<f64>, d: f64| {
                let mut i = k;
                for s in m.slices_mut() {
                    if i < s.len() {
                        s[i] += d;
                        return;
                    }
                    i -= s.len();
                }
            };
            bump(&mut m, h);
            let up = m.loss_sum_and_grad(x.view(), 1, &mask).unwrap().0;
            bump(&mut m, -2.0 * h);
            let down = m.loss_sum_and_grad(x.view(), 1, &mask).unwrap().0;
            bump(&mut m, h);
            let num = (up - down) / (2.0 * h);
            let err = (num - flat[k]).abs() / num.abs().max(flat[k].abs()).max(1e-4);
            assert!(err < 1e-5, "param {k}: {num} vs {}", flat[k]);
        }
    }
}
