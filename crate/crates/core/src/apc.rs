//! Autoregressive predictive coding: the VAD encoder learns to predict the
//! feature frame `n` steps ahead through a 1-D convolutional projection,
//! trained with an ℓ1 loss. The denoising variant feeds noisy features and
//! keeps clean targets.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::container::TensorContainer;
use crate::data::mix::{apply_rir, fit_noise, mix_at_snr};
use crate::data::{MtrConfig, NoiseBank, RirPool};
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, LogMel};
use crate::nn::conv1d::Conv1d;
use crate::nn::loss::l1_loss_sum;
use crate::nn::{AdamConfig, LstmStack, ParamSet, Scalar};
use crate::pvad::{HIDDEN, INPUT_DIM, LAYERS};
use crate::rng::{self, SeedStreams};
use crate::trainer::{self, FitConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApcConfig {
    pub horizon: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub min_lr: f64,
    pub denoising: bool,
    /// Per-utterance probability of corrupting the input in denoising mode.
    pub noise_prob: f64,
    /// Also reverberate denoising inputs (with the MTR RIR probability).
    pub use_rir: bool,
    pub kernel: usize,
    pub hidden: usize,
    pub layers: usize,
    pub clip_norm: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for ApcConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            epochs: 10,
            batch_size: 32,
            lr0: 0.01,
            min_lr: 0.0,
            denoising: false,
            noise_prob: 1.0,
            use_rir: false,
            kernel: 1,
            hidden: HIDDEN,
            layers: LAYERS,
            clip_norm: Some(5.0),
            adam: AdamConfig::default(),
        }
    }
}

impl ApcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.epochs == 0 || self.batch_size == 0 || !(self.lr0 > 0.0) {
            return Err(Error::config("apc: horizon, epochs, batch_size and lr0 must be positive"));
        }
        if !(0.0..=1.0).contains(&self.noise_prob) {
            return Err(Error::config("apc: noise_prob must lie in [0, 1]"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("apc: projection kernel width must be odd"));
        }
        Ok(())
    }
}

/// Aligned input/target frames: `targets[t]` is the clean frame `t + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApcPair {
    pub inputs: Array2<f32>,
    pub targets: Array2<f32>,
}

impl ApcPair {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn make_apc_pairs(clean: ArrayView2<f32>, noisy: Option<ArrayView2<f32>>, n: usize) -> Result<ApcPair> {
    let t = clean.nrows();
    if n == 0 || t <= n {
        return Err(Error::invalid(format!("sequence of {t} frames is too short for horizon {n}")));
    }
    let src = match noisy {
        Some(x) if x.dim() != clean.dim() => {
            return Err(Error::shape(format!(
                "noisy features {:?} do not match clean {:?}",
                x.dim(),
                clean.dim()
            )))
        }
        Some(x) => x,
        None => clean,
    };
    Ok(ApcPair {
        inputs: src.slice(s![..t - n, ..]).to_owned(),
        targets: clean.slice(s![n.., ..]).to_owned(),
    })
}

/// Encoder plus projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct ApcModel<F: Scalar> {
    pub encoder: LstmStack<F>,
    pub head: Conv1d<F>,
}

impl<F: Scalar> ApcModel<F> {
    pub fn init<R: Rng>(input: usize, hidden: usize, layers: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            encoder: LstmStack::init("encoder", input, hidden, layers, rng),
            head: Conv1d::init("apc_head", hidden, input, kernel, rng)?,
        })
    }

    /// Predicted frames for every input position.
    pub fn predict(&self, inputs: ArrayView2<F>) -> Result<Array2<F>> {
        let (h, _, _) = self.encoder.forward(inputs, None)?;
        Ok(self.head.forward(h.view())?.0)
    }

    pub fn loss_sum_and_grad(&self, inputs: ArrayView2<F>, targets: ArrayView2<F>) -> Result<(f64, usize, Self)> {
        let (h, _, lstm_cache) = self.encoder.forward(inputs, None)?;
        let (y, conv_cache) = self.head.forward(h.view())?;
        let mask = vec![true; y.nrows()];
        let (sum, count, gy) = l1_loss_sum(y.view(), targets, &mask)?;
        let (ghead, gh) = self.head.backward(&conv_cache, gy.view())?;
        let (genc, _) = self.encoder.backward(&lstm_cache, gh.view())?;
        Ok((
            sum,
            count,
            ApcModel {
                encoder: genc,
                head: ghead,
            },
        ))
    }
}

impl<F: Scalar> ParamSet<F> for ApcModel<F> {
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut l = self.encoder.layout();
        l.extend(self.head.layout());
        l
    }

    fn slices(&self) -> Vec<&[F]> {
        let mut s = self.encoder.slices();
        s.extend(self.head.slices());
        s
    }

    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut s = self.encoder.slices_mut();
        s.extend(self.head.slices_mut());
        s
    }
}

impl ApcModel<f32> {
    pub fn to_container(&self, cfg: &ApcConfig) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        c.extend(self.to_tensors())?;
        c.set_attr("kind", "apc");
        c.set_attr("input", self.encoder.input_size().to_string());
        c.set_attr("hidden", self.encoder.hidden_size().to_string());
        c.set_attr("layers", self.encoder.num_layers().to_string());
        c.set_attr("kernel", self.head.kernel().to_string());
        c.set_attr("horizon", cfg.horizon.to_string());
        c.set_attr("denoising", cfg.denoising.to_string());
        Ok(c)
    }
}

/// The transferable encoder from an APC checkpoint (or a bare encoder
/// checkpoint with the same tensor names).
pub fn encoder_from_container(c: &TensorContainer) -> Result<LstmStack<f32>> {
    let dims = |k: &str| -> Result<usize> {
        c.attr(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(format!("checkpoint attr {k} missing")))
    };
    let mut enc = LstmStack::zeros("encoder", dims("input")?, dims("hidden")?, dims("layers")?);
    enc.load_tensors(&c.map_with_prefix("encoder."))?;
    Ok(enc)
}

/// Supplies (input, target) pairs; `epoch` lets noisy sources redraw noise.
pub trait ApcSource: Sync {
    fn len(&self) -> usize;
    fn pair(&self, epoch: usize, index: usize) -> Result<ApcPair>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Precomputed pairs.
impl ApcSource for [ApcPair] {
    fn len(&self) -> usize {
        <[ApcPair]>::len(self)
    }

    fn pair(&self, _epoch: usize, index: usize) -> Result<ApcPair> {
        Ok(self[index].clone())
    }
}

/// Clean waveforms that are corrupted on the fly for denoising APC. Targets
/// always come from the clean features.
pub struct NoisyApcSource<'a> {
    pub audio: &'a [AudioBuffer],
    pub clean: &'a [FeatureSequence],
    pub frontend: &'a LogMel,
    pub bank: &'a NoiseBank,
    pub rirs: &'a RirPool,
    pub mtr: &'a MtrConfig,
    pub horizon: usize,
    pub noise_prob: f64,
    pub use_rir: bool,
    pub seeds: SeedStreams,
}

impl<'a> NoisyApcSource<'a> {
    pub fn corrupt(&self, epoch: usize, index: usize) -> Result<Vec<f32>> {
        let mut r = self.seeds.child(rng::MTR, epoch as u64).rng("dn-apc", index as u64);
        let clean = &self.audio[index].samples;
        let mut x = clean.clone();
        if self.use_rir && r.random_bool(self.mtr.p_rir) && !self.rirs.rirs.is_empty() {
            let k = r.random_range(0..self.rirs.rirs.len());
            x = apply_rir(&x, &self.rirs.rirs[k])?;
        }
        if r.random_bool(self.noise_prob) {
            let t = &self.mtr.noise_types[r.random_range(0..self.mtr.noise_types.len())];
            let clip = self.bank.pick(t, &mut r)?;
            let snr = r.random_range(self.mtr.snr_min_db..=self.mtr.snr_max_db);
            let noise = fit_noise(clip, x.len(), &mut r)?;
            x = mix_at_snr(&x, &noise, snr)?;
        }
        Ok(x)
    }
}

impl ApcSource for NoisyApcSource<'_> {
    fn len(&self) -> usize {
        self.audio.len()
    }

    fn pair(&self, epoch: usize, index: usize) -> Result<ApcPair> {
        let noisy = self.corrupt(epoch, index)?;
        let sr = self.audio[index].sample_rate_hz;
        let feats = self.frontend.compute_vad(&AudioBuffer::new(noisy, sr)?, "noisy")?;
        make_apc_pairs(self.clean[index].frames.view(), Some(feats.frames.view()), self.horizon)
    }
}

#[derive(Debug, Clone)]
pub struct ApcOutcome {
    pub model: ApcModel<f32>,
    /// Mean ℓ1 of the untrained model over the epoch-0 corpus.
    pub initial_loss: f64,
    /// Mean ℓ1 per epoch.
    pub loss_curve: Vec<f64>,
}

pub fn pretrain<S: ApcSource + ?Sized>(source: &S, cfg: &ApcConfig, seeds: SeedStreams) -> Result<ApcOutcome> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::invalid("APC corpus is empty"));
    }
    let input = source.pair(0, 0)?.inputs.ncols();
    let mut model = ApcModel::<f32>::init(input, cfg.hidden, cfg.layers, cfg.kernel, &mut seeds.rng(rng::INIT, 0))?;
    let initial_loss = mean_l1(&model, source)?;
    let fit_cfg = FitConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr0: cfg.lr0,
        min_lr: cfg.min_lr,
        clip_norm: cfg.clip_norm,
        adam: cfg.adam,
    };
    let result = trainer::fit(&mut model, source.len(), &fit_cfg, seeds, |m, epoch, i| {
        let p = source.pair(epoch, i)?;
        m.loss_sum_and_grad(p.inputs.view(), p.targets.view())
    })?;
    Ok(ApcOutcome {
        model,
        initial_loss,
        loss_curve: result.loss_curve,
    })
}

fn mean_l1<S: ApcSource + ?Sized>(model: &ApcModel<f32>, source: &S) -> Result<f64> {
    let parts = crate::par::map_range(source.len(), |i| -> Result<(f64, usize)> {
        let p = source.pair(0, i)?;
        let y = model.predict(p.inputs.view())?;
        let (sum, count, _) = l1_loss_sum(y.view(), p.targets.view(), &vec![true; y.nrows()])?;
        Ok((sum, count))
    });
    let (mut sum, mut count) = (0.0, 0usize);
    for part in parts {
        let (s, c) = part?;
        sum += s;
        count += c;
    }
    Ok(sum / count.max(1) as f64)
}

/// Default encoder shape check for transfer into the PVAD model.
pub fn matches_pvad_encoder(enc: &LstmStack<f32>) -> bool {
    enc.input_size() == INPUT_DIM && enc.hidden_size() == HIDDEN && enc.num_layers() == LAYERS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pvad::{transfer_encoder, PvadModel};

    fn seq(t: usize, d: usize, f: impl Fn(usize, usize) -> f32) -> Array2<f32> {
        Array2::from_shape_fn((t, d), |(i, j)| f(i, j))
    }

    #[test]
    fn pair_alignment() {
        let clean = seq(10, 4, |t, d| (t * 10 + d) as f32);
        let p = make_apc_pairs(clean.view(), None, 3).unwrap();
        assert_eq!(p.len(), 7);
        for t in 0..7 {
            assert_eq!(p.inputs.row(t), clean.row(t));
            assert_eq!(p.targets.row(t), clean.row(t + 3));
        }
        let noisy = clean.mapv(|v| v + 0.5);
        let p = make_apc_pairs(clean.view(), Some(noisy.view()), 3).unwrap();
        assert_eq!(p.inputs.row(2), noisy.row(2));
        assert_eq!(p.targets.row(2), clean.row(5));
        assert!(make_apc_pairs(clean.view(), None, 10).is_err());
        assert!(make_apc_pairs(clean.view(), Some(seq(9, 4, |_, _| 0.0).view()), 3).is_err());
    }

    #[test]
    fn perfect_predictor_on_constant_sequence_has_zero_loss() {
        let clean = seq(8, 3, |_, d| d as f32);
        let p = make_apc_pairs(clean.view(), None, 3).unwrap();
        let (loss, _) = crate::nn::loss::l1_loss(p.inputs.view(), p.targets.view(), &[true; 5]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn prediction_is_causal() {
        let mut r = SeedStreams::new(1).rng("t", 0);
        let m = ApcModel::<f32>::init(5, 6, 2, 1, &mut r).unwrap();
        let x = seq(12, 5, |t, d| ((t * 7 + d * 3) % 11) as f32 / 5.0 - 1.0);
        let y = m.predict(x.view()).unwrap();
        let mut x2 = x.clone();
        x2.row_mut(8).fill(3.0);
        let y2 = m.predict(x2.view()).unwrap();
        assert_eq!(y.slice(s![..8, ..]), y2.slice(s![..8, ..]));
        assert_ne!(y.row(8), y2.row(8));
    }

    #[test]
    fn untrained_loss_is_positive_and_training_is_reproducible() {
        let mut r = SeedStreams::new(2).rng("t", 0);
        let pairs: Vec<ApcPair> = (0..8)
            .map(|_| {
                let x = Array2::from_shape_fn((20, 4), |_| r.random_range(-1.0f32..1.0));
                make_apc_pairs(x.view(), None, 3).unwrap()
            })
            .collect();
        let cfg = ApcConfig {
            hidden: 8,
            epochs: 3,
            batch_size: 4,
            ..Default::default()
        };
        let out = pretrain(pairs.as_slice(), &cfg, SeedStreams::new(3)).unwrap();
        assert!(out.loss_curve[0] > 0.0);
        assert!(out.initial_loss > 0.0 && out.initial_loss.is_finite());
        assert_eq!(out.loss_curve.len(), 3);
        let again = pretrain(pairs.as_slice(), &cfg, SeedStreams::new(3)).unwrap();
        assert_eq!(out.model, again.model);
        assert_eq!(out.loss_curve, again.loss_curve);
    }

    #[test]
    fn encoder_transfer_round_trip() {
        let mut r = SeedStreams::new(4).rng("t", 0);
        let apc = ApcModel::<f32>::init(40, 64, 2, 1, &mut r).unwrap();
        let c = apc.to_container(&ApcConfig::default()).unwrap();
        let enc = encoder_from_container(&TensorContainer::from_bytes(&c.to_bytes().unwrap()).unwrap()).unwrap();
        assert!(matches_pvad_encoder(&enc));
        let mut pvad = PvadModel::<f32>::init(&mut r);
        transfer_encoder(&enc, &mut pvad).unwrap();
        let a: Vec<_> = pvad.encoder.to_tensors();
        let b: Vec<_> = apc.encoder.to_tensors();
        assert_eq!(a, b);
        let small = LstmStack::<f32>::init("encoder", 40, 32, 2, &mut r);
        assert!(transfer_encoder(&small, &mut pvad).is_err());
    }
}
