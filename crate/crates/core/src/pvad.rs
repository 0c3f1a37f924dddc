//! Personalized VAD: a 2-layer LSTM with a two-class (non-speech / speech)
//! head whose speech posterior is split between target and non-target speech
//! by a learned affine rescaling of the speaker similarity.
//!
//! Per frame, with `s'` the scaled similarity:
//!
//! ```text
//! z_ns   = softmax(head(h_t))[ns]
//! z_tss  = s' · z_s
//! z_ntss = (1 - s') · z_s
//! ```

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container::{Tensor, TensorContainer};
use crate::error::{Error, Result};
use crate::nn::loss::log_softmax;
use crate::nn::{AdamConfig, Linear, LstmStack, ParamSet, Scalar};
use crate::rng::{self, SeedStreams};
use crate::trainer::{self, FitConfig};

/// Clamp margin keeping `s'` strictly inside (0, 1).
pub const SIM_EPS: f64 = 1e-6;

pub const INPUT_DIM: usize = 40;
pub const HIDDEN: usize = 64;
pub const LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PvadClass {
    Ns = 0,
    Tss = 1,
    Ntss = 2,
}

impl PvadClass {
    pub const ALL: [PvadClass; 3] = [PvadClass::Ns, PvadClass::Tss, PvadClass::Ntss];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PvadClass::Ns => "ns",
            PvadClass::Tss => "tss",
            PvadClass::Ntss => "ntss",
        }
    }

    pub fn is_speech(self) -> bool {
        self != PvadClass::Ns
    }
}

/// `clamp(s·α + β, ε, 1 − ε)`.
pub fn scale_similarity<F: Scalar>(s: F, alpha: F, beta: F) -> F {
    let eps = F::of(SIM_EPS);
    (s * alpha + beta).max(eps).min(F::one() - eps)
}

/// `(z_ns, s'·z_s, (1 − s')·z_s)`.
pub fn combine<F: Scalar>(z_ns: F, z_s: F, s_prime: F) -> [F; 3] {
    [z_ns, s_prime * z_s, (F::one() - s_prime) * z_s]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PvadModel<F: Scalar = f32> {
    pub encoder: LstmStack<F>,
    pub head: Linear<F>,
    pub alpha: F,
    pub beta: F,
}

impl<F: Scalar> PvadModel<F> {
    /// Fresh model: LSTM and head initialized from `rng`, identity similarity
    /// scaling (α = 1, β = 0).
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        Self::with_sizes(INPUT_DIM, HIDDEN, LAYERS, rng)
    }

    pub fn with_sizes<R: Rng>(input: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let encoder = LstmStack::init("encoder", input, hidden, layers, rng);
        let head = Linear::init("vad_head", hidden, 2, rng);
        Self {
            encoder,
            head,
            alpha: F::one(),
            beta: F::zero(),
        }
    }

    pub fn param_count(input: usize, hidden: usize, layers: usize) -> usize {
        LstmStack::<F>::param_count(input, hidden, layers) + 2 * hidden + 2 + 2
    }

    pub fn cast<G: Scalar>(&self) -> PvadModel<G> {
        PvadModel {
            encoder: self.encoder.cast(),
            head: self.head.cast(),
            alpha: G::of(self.alpha.f64()),
            beta: G::of(self.beta.f64()),
        }
    }

    /// Per-frame `(z_ns, z_s)` logits of the VAD head.
    pub fn vad_logits(&self, features: ArrayView2<F>) -> Result<Array2<F>> {
        let (h, _, _) = self.encoder.forward(features, None)?;
        self.head.forward(h.view())
    }

    /// Combined `T x 3` posteriors in class order (ns, tss, ntss).
    pub fn forward(&self, features: ArrayView2<F>, similarity: &[F]) -> Result<Array2<F>> {
        if similarity.len() != features.nrows() {
            return Err(Error::shape(format!(
                "{} feature frames but {} similarity scores",
                features.nrows(),
                similarity.len()
            )));
        }
        let logp = log_softmax(self.vad_logits(features)?.view());
        let mut out = Array2::<F>::zeros((features.nrows(), 3));
        for t in 0..features.nrows() {
            let sp = scale_similarity(similarity[t], self.alpha, self.beta);
            let [a, b, c] = combine(logp[[t, 0]].exp(), logp[[t, 1]].exp(), sp);
            out[[t, 0]] = a;
            out[[t, 1]] = b;
            out[[t, 2]] = c;
        }
        Ok(out)
    }

    /// Summed three-class NLL over unmasked frames, the number of frames, and
    /// the gradient of the sum with respect to every parameter.
    pub fn loss_sum_and_grad(
        &self,
        features: ArrayView2<F>,
        similarity: &[F],
        labels: &[PvadClass],
        mask: Option<&[bool]>,
    ) -> Result<(f64, usize, PvadModel<F>)> {
        let t_len = features.nrows();
        if similarity.len() != t_len || labels.len() != t_len || mask.is_some_and(|m| m.len() != t_len) {
            return Err(Error::shape(format!(
                "{t_len} frames, {} scores, {} labels",
                similarity.len(),
                labels.len()
            )));
        }
        let (h, _, cache) = self.encoder.forward(features, None)?;
        let logits = self.head.forward(h.view())?;
        let logp = log_softmax(logits.view());
        let eps = F::of(SIM_EPS);
        let one = F::one();
        let mut dlogits = Array2::<F>::zeros((t_len, 2));
        let (mut dalpha, mut dbeta) = (F::zero(), F::zero());
        let mut sum = 0.0;
        let mut count = 0;
        for t in 0..t_len {
            if mask.is_some_and(|m| !m[t]) {
                continue;
            }
            let raw = similarity[t] * self.alpha + self.beta;
            let sp = raw.max(eps).min(one - eps);
            let interior = raw > eps && raw < one - eps;
            let speech_idx = match labels[t] {
                PvadClass::Ns => {
                    sum -= logp[[t, 0]].f64();
                    0
                }
                PvadClass::Tss => {
                    sum -= (logp[[t, 1]] + sp.ln()).f64();
                    if interior {
                        let ds = -one / sp;
                        dalpha += ds * similarity[t];
                        dbeta += ds;
                    }
                    1
                }
                PvadClass::Ntss => {
                    sum -= (logp[[t, 1]] + (one - sp).ln()).f64();
                    if interior {
                        let ds = one / (one - sp);
                        dalpha += ds * similarity[t];
                        dbeta += ds;
                    }
                    1
                }
            };
            dlogits[[t, 0]] = logp[[t, 0]].exp();
            dlogits[[t, 1]] = logp[[t, 1]].exp();
            dlogits[[t, speech_idx]] -= one;
            count += 1;
        }
        let (head_grad, dh) = self.head.backward(h.view(), dlogits.view())?;
        let (enc_grad, _) = self.encoder.backward(&cache, dh.view())?;
        Ok((
            sum,
            count,
            PvadModel {
                encoder: enc_grad,
                head: head_grad,
                alpha: dalpha,
                beta: dbeta,
            },
        ))
    }
}

impl<F: Scalar> ParamSet<F> for PvadModel<F> {
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut l = self.encoder.layout();
        l.extend(self.head.layout());
        l.push(("pvad.alpha".into(), vec![1]));
        l.push(("pvad.beta".into(), vec![1]));
        l
    }

    fn slices(&self) -> Vec<&[F]> {
        let mut s = self.encoder.slices();
        s.extend(self.head.slices());
        s.push(std::slice::from_ref(&self.alpha));
        s.push(std::slice::from_ref(&self.beta));
        s
    }

    fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut s = self.encoder.slices_mut();
        s.extend(self.head.slices_mut());
        s.push(std::slice::from_mut(&mut self.alpha));
        s.push(std::slice::from_mut(&mut self.beta));
        s
    }
}

impl PvadModel<f32> {
    pub fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        c.extend(self.to_tensors())?;
        c.set_attr("kind", "pvad");
        c.set_attr("hidden", self.encoder.hidden_size().to_string());
        c.set_attr("layers", self.encoder.num_layers().to_string());
        c.set_attr("input", self.encoder.input_size().to_string());
        Ok(c)
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let dims = |k: &str| -> Result<usize> {
            c.attr(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format(format!("checkpoint attr {k} missing")))
        };
        if c.attr("kind") != Some("pvad") {
            return Err(Error::format("checkpoint is not a pvad model"));
        }
        let mut m = PvadModel {
            encoder: LstmStack::zeros("encoder", dims("input")?, dims("hidden")?, dims("layers")?),
            head: Linear::zeros("vad_head", dims("hidden")?, 2),
            alpha: 0.0,
            beta: 0.0,
        };
        let map = c.map_with_prefix("");
        m.load_tensors(&map)?;
        Ok(m)
    }
}

/// Copy pretrained encoder weights into `target`; the head is untouched.
pub fn transfer_encoder<F: Scalar>(pretrained: &LstmStack<F>, target: &mut PvadModel<F>) -> Result<()> {
    if !pretrained.same_architecture(&target.encoder) {
        return Err(Error::shape(format!(
            "pretrained encoder {}x{} (input {}) does not match target {}x{} (input {})",
            pretrained.num_layers(),
            pretrained.hidden_size(),
            pretrained.input_size(),
            target.encoder.num_layers(),
            target.encoder.hidden_size(),
            target.encoder.input_size()
        )));
    }
    for (dst, src) in target.encoder.layers.iter_mut().zip(&pretrained.layers) {
        *dst = src.clone();
    }
    Ok(())
}

/// One labelled training/eval utterance in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct PvadExample {
    pub features: Array2<f32>,
    pub similarity: Vec<f32>,
    pub labels: Vec<PvadClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub min_lr: f64,
    pub epochs: usize,
    pub mtr_enabled: bool,
    pub clip_norm: Option<f64>,
    /// Keep the encoder fixed and train only head, α and β.
    pub freeze_encoder: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr0: 5e-5,
            min_lr: 0.0,
            epochs: 20,
            mtr_enabled: false,
            clip_norm: Some(5.0),
            freeze_encoder: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || !(self.lr0 > 0.0) {
            return Err(Error::config("train: batch_size, epochs and lr0 must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PvadModel<f32>,
    pub loss_curve: Vec<f64>,
    pub optimizer_state: TensorContainer,
}

/// Supplies training examples; `epoch` lets augmenting sources draw fresh
/// corruption every pass.
pub trait ExampleSource: Sync {
    fn len(&self) -> usize;
    fn example(&self, epoch: usize, index: usize) -> Result<PvadExample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ExampleSource for [PvadExample] {
    fn len(&self) -> usize {
        <[PvadExample]>::len(self)
    }

    fn example(&self, _epoch: usize, index: usize) -> Result<PvadExample> {
        Ok(self[index].clone())
    }
}

impl ExampleSource for Vec<PvadExample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn example(&self, _epoch: usize, index: usize) -> Result<PvadExample> {
        Ok(self[index].clone())
    }
}

/// Fine-tune (or train from scratch) a PVAD model with the three-class NLL.
///
/// The head is always freshly initialized from `seeds`; if `init_encoder` is
/// given its weights replace the random encoder.
pub fn train<S: ExampleSource + ?Sized>(
    source: &S,
    cfg: &TrainConfig,
    seeds: SeedStreams,
    init_encoder: Option<&LstmStack<f32>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    let mut model = PvadModel::<f32>::init(&mut seeds.rng(rng::INIT, 0));
    if let Some(enc) = init_encoder {
        transfer_encoder(enc, &mut model)?;
    }
    let fit_cfg = FitConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr0: cfg.lr0,
        min_lr: cfg.min_lr,
        clip_norm: cfg.clip_norm,
        adam: cfg.adam,
    };
    let freeze = cfg.freeze_encoder;
    let result = trainer::fit(&mut model, source.len(), &fit_cfg, seeds, |m, epoch, i| {
        let ex = source.example(epoch, i)?;
        if ex.labels.is_empty() {
            return Err(Error::invalid(format!("example {i} has no labelled frames")));
        }
        let (sum, count, mut g) = m.loss_sum_and_grad(ex.features.view(), &ex.similarity, &ex.labels, None)?;
        if freeze {
            g.encoder = g.encoder.zeros_like();
        }
        Ok((sum, count, g))
    })?;
    let mut opt = TensorContainer::new();
    for (prefix, set) in [("adam.m.", &result.optimizer.m), ("adam.v.", &result.optimizer.v)] {
        for (name, t) in set.to_tensors() {
            opt.push(format!("{prefix}{name}"), t)?;
        }
    }
    opt.push("adam.step", Tensor::scalar(result.optimizer.step as f32))?;
    Ok(TrainOutcome {
        model,
        loss_curve: result.loss_curve,
        optimizer_state: opt,
    })
}

/// Frame-wise decision and posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub posteriors: Array2<f32>,
    pub classes: Vec<PvadClass>,
}

/// Run the model on precomputed features and similarity scores.
pub fn predict_frames(model: &PvadModel<f32>, features: ArrayView2<f32>, similarity: &[f32]) -> Result<Prediction> {
    if features.nrows() == 0 {
        return Err(Error::invalid("audio shorter than one frame"));
    }
    let posteriors = model.forward(features, similarity)?;
    let classes = posteriors
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for k in 1..3 {
                if r[k] > r[best] {
                    best = k;
                }
            }
            PvadClass::from_index(best).unwrap()
        })
        .collect();
    Ok(Prediction { posteriors, classes })
}
