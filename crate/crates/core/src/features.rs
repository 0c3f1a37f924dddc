//! Log-mel filterbank frontend.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate_hz: u32,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub n_mels: usize,
    pub fft_size: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
    /// Pipelines estimate `FeatureStats` on the unlabelled pool and
    /// standardize all features with them.
    pub standardize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            n_mels: 40,
            fft_size: 512,
            fmin_hz: 0.0,
            fmax_hz: 8_000.0,
            log_floor: 1e-10,
            standardize: false,
        }
    }
}

impl FeatureConfig {
    pub fn frame_length_samples(&self) -> usize {
        (self.frame_length_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn frame_shift_samples(&self) -> usize {
        (self.frame_shift_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if self.sample_rate_hz == 0 {
            return Err(Error::config("sample_rate_hz must be positive"));
        }
        if self.n_mels == 0 {
            return Err(Error::config("n_mels must be at least 1"));
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return Err(Error::config(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= nyquist ({nyquist})",
                self.fmin_hz, self.fmax_hz
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log_floor must be positive"));
        }
        let len = self.frame_length_samples();
        let shift = self.frame_shift_samples();
        if len == 0 || shift == 0 {
            return Err(Error::config("frame length and shift must be at least one sample"));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < len {
            return Err(Error::config(format!(
                "fft_size {} must be a power of two >= frame length {len}",
                self.fft_size
            )));
        }
        Ok(())
    }

    pub fn floor_value(&self) -> f32 {
        self.log_floor.ln() as f32
    }
}

/// T x n_mels log-mel features of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Array2<f32>,
    pub frame_shift_ms: f64,
    pub source_id: String,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn frame_count(n_samples: usize, cfg: &FeatureConfig) -> usize {
    let len = cfg.frame_length_samples();
    if n_samples < len {
        0
    } else {
        (n_samples - len) / cfg.frame_shift_samples() + 1
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels x (fft_size / 2 + 1)`, unit peak height.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Array2<f64>,
    centers_hz: Vec<f64>,
    // nonzero column span per row
    spans: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn new(cfg: &FeatureConfig, sample_rate_hz: u32) -> Result<Self> {
        cfg.validate()?;
        if sample_rate_hz != cfg.sample_rate_hz {
            return Err(Error::config(format!(
                "sample rate {sample_rate_hz} does not match feature config {}",
                cfg.sample_rate_hz
            )));
        }
        let n_bins = cfg.fft_size / 2 + 1;
        let (mel_lo, mel_hi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate_hz as f64 / cfg.fft_size as f64;
        let mut weights = Array2::<f64>::zeros((cfg.n_mels, n_bins));
        let mut spans = Vec::with_capacity(cfg.n_mels);
        for m in 0..cfg.n_mels {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let (mut first, mut last) = (usize::MAX, 0);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = ((f - lo) / (center - lo)).min((hi - f) / (hi - center)).max(0.0);
                if w > 0.0 {
                    weights[[m, k]] = w;
                    first = first.min(k);
                    last = k;
                }
            }
            if first == usize::MAX {
                return Err(Error::config(format!(
                    "mel band {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; n_mels={} is too large for fft_size={}",
                    cfg.n_mels, cfg.fft_size
                )));
            }
            spans.push((first, last + 1));
        }
        Ok(Self {
            weights,
            centers_hz: edges[1..=cfg.n_mels].to_vec(),
            spans,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn center_frequencies(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, &(a, b)) in self.spans.iter().enumerate() {
            let row = self.weights.row(m);
            out[m] = (a..b).map(|k| row[k] * power[k]).sum();
        }
    }
}

pub fn mel_filterbank(cfg: &FeatureConfig, sample_rate_hz: u32) -> Result<Array2<f64>> {
    MelFilterbank::new(cfg, sample_rate_hz).map(|fb| fb.weights)
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reusable frontend: filterbank, window and FFT plan built once.
pub struct LogMel {
    cfg: FeatureConfig,
    filterbank: MelFilterbank,
    window: Vec<f64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    stats: Option<FeatureStats>,
}

impl std::fmt::Debug for LogMel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMel").field("cfg", &self.cfg).finish()
    }
}

impl LogMel {
    pub fn new(cfg: &FeatureConfig) -> Result<Self> {
        let filterbank = MelFilterbank::new(cfg, cfg.sample_rate_hz)?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            cfg: cfg.clone(),
            filterbank,
            window: hann_periodic(cfg.frame_length_samples()),
            fft,
            stats: None,
        })
    }

    /// Attach the stats `compute_vad` standardizes with.
    pub fn with_stats(mut self, stats: FeatureStats) -> Result<Self> {
        if stats.mean.len() != self.cfg.n_mels {
            return Err(Error::shape(format!(
                "feature stats have {} bands, frontend {}",
                stats.mean.len(),
                self.cfg.n_mels
            )));
        }
        self.stats = Some(stats);
        Ok(self)
    }

    pub fn stats(&self) -> Option<&FeatureStats> {
        self.stats.as_ref()
    }

    /// Input features of the VAD network: `compute`, then standardized if
    /// stats are attached. The speaker embedder always sees raw features.
    pub fn compute_vad(&self, audio: &AudioBuffer, source_id: &str) -> Result<FeatureSequence> {
        let mut seq = self.compute(audio, source_id)?;
        if let Some(st) = &self.stats {
            st.apply(&mut seq.frames);
        }
        Ok(seq)
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn compute(&self, audio: &AudioBuffer, source_id: &str) -> Result<FeatureSequence> {
        audio.validate()?;
        if audio.sample_rate_hz != self.cfg.sample_rate_hz {
            return Err(Error::invalid(format!(
                "audio sample rate {} does not match feature config {}",
                audio.sample_rate_hz, self.cfg.sample_rate_hz
            )));
        }
        let cfg = &self.cfg;
        let n_frames = frame_count(audio.len(), cfg);
        let (len, shift, n_fft) = (
            cfg.frame_length_samples(),
            cfg.frame_shift_samples(),
            cfg.fft_size,
        );
        let n_mels = cfg.n_mels;
        let mut frames = Array2::<f32>::zeros((n_frames, n_mels));
        let mut buf = vec![Complex::new(0.0f64, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0f64, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; n_fft / 2 + 1];
        let mut mel = vec![0.0f64; n_mels];
        for t in 0..n_frames {
            let start = t * shift;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < len {
                    Complex::new(audio.samples[start + i] as f64 * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            self.filterbank.apply(&power, &mut mel);
            for (out, &e) in frames.row_mut(t).iter_mut().zip(&mel) {
                *out = e.max(cfg.log_floor).ln() as f32;
            }
        }
        Ok(FeatureSequence {
            frames,
            frame_shift_ms: cfg.frame_shift_ms,
            source_id: source_id.to_string(),
        })
    }
}

/// Per-band mean and standard deviation of log-mel features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl FeatureStats {
    pub fn estimate(seqs: &[FeatureSequence]) -> Result<Self> {
        let bands = seqs.first().map_or(0, |s| s.frames.ncols());
        let n: usize = seqs.iter().map(|s| s.frames.nrows()).sum();
        if n < 2 || seqs.iter().any(|s| s.frames.ncols() != bands) {
            return Err(Error::invalid("feature stats need at least two frames of equal width"));
        }
        let mut mean = vec![0f64; bands];
        for row in seqs.iter().flat_map(|s| s.frames.rows()) {
            mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v as f64);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0f64; bands];
        for row in seqs.iter().flat_map(|s| s.frames.rows()) {
            for ((a, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
                *a += (v as f64 - m).powi(2);
            }
        }
        Ok(Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var.iter().map(|&v| (v / (n - 1) as f64).sqrt().max(1e-3) as f32).collect(),
        })
    }

    pub fn apply(&self, frames: &mut Array2<f32>) {
        for mut row in frames.rows_mut() {
            for ((v, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

pub fn log_mel(audio: &AudioBuffer, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    LogMel::new(cfg)?.compute(audio, "")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn audio(samples: Vec<f32>) -> AudioBuffer {
        AudioBuffer::new(samples, 16_000).unwrap()
    }

    #[test]
    fn frame_count_examples() {
        let cfg = FeatureConfig::default();
        assert_eq!(frame_count(400, &cfg), 1);
        assert_eq!(frame_count(399, &cfg), 0);
        assert_eq!(frame_count(0, &cfg), 0);
        // enumerate window starts
        let starts = (0..16000usize).step_by(160).filter(|s| s + 400 <= 16000).count();
        assert_eq!(starts, 98);
        assert_eq!(frame_count(16000, &cfg), 98);
    }

    #[test]
    fn count_grows_by_at_most_one_per_shift() {
        let cfg = FeatureConfig::default();
        for n in 0..2000 {
            for extra in 0..160 {
                assert!(frame_count(n + extra, &cfg) <= frame_count(n, &cfg) + 1);
            }
        }
    }

    #[test]
    fn single_band_peaks_at_mel_midpoint() {
        let cfg = FeatureConfig {
            n_mels: 1,
            ..Default::default()
        };
        let fb = MelFilterbank::new(&cfg, 16_000).unwrap();
        let center = mel_to_hz(hz_to_mel(8000.0) / 2.0);
        assert!((fb.center_frequencies()[0] - center).abs() < 1e-9);
        let row = fb.weights().row(0);
        let peak = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let bin_hz = 16000.0 / 512.0;
        assert!((peak as f64 * bin_hz - center).abs() <= bin_hz);
    }

    #[test]
    fn default_filterbank_rows_are_nonnegative_and_nonempty() {
        let w = mel_filterbank(&FeatureConfig::default(), 16_000).unwrap();
        assert_eq!(w.dim(), (40, 257));
        for row in w.rows() {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!(row.sum() > 0.0);
        }
    }

    #[test]
    fn center_frequencies_match_independent_grid() {
        // direct recomputation of the mel grid without the library helpers
        let fb = MelFilterbank::new(&FeatureConfig::default(), 16_000).unwrap();
        let top = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        let mut prev = 0.0;
        for (i, &c) in fb.center_frequencies().iter().enumerate() {
            let mel = top * (i + 1) as f64 / 41.0;
            let hz = 700.0 * (10f64.powf(mel / 2595.0) - 1.0);
            assert!((c - hz).abs() < 1e-9 * hz.max(1.0));
            assert!(c > prev);
            prev = c;
        }
    }

    #[test]
    fn too_many_mels_is_a_config_error() {
        let cfg = FeatureConfig {
            n_mels: 200,
            ..Default::default()
        };
        assert!(matches!(MelFilterbank::new(&cfg, 16_000), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            FeatureConfig { fmax_hz: 9000.0, ..Default::default() },
            FeatureConfig { fmin_hz: 8000.0, ..Default::default() },
            FeatureConfig { log_floor: 0.0, ..Default::default() },
            FeatureConfig { fft_size: 300, ..Default::default() },
            FeatureConfig { fft_size: 256, ..Default::default() },
            FeatureConfig { n_mels: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = FeatureConfig::default();
        let f = log_mel(&audio(vec![0.0; 16000]), &cfg).unwrap();
        assert_eq!(f.frames.dim(), (98, 40));
        let floor = (1e-10f64).ln() as f32;
        assert!(f.frames.iter().all(|&v| v == floor));
    }

    #[test]
    fn sine_peaks_in_its_band() {
        let cfg = FeatureConfig::default();
        let fb = MelFilterbank::new(&cfg, 16_000).unwrap();
        // 1 kHz sits exactly on bin 32
        let band = (0..40)
            .max_by(|&a, &b| fb.weights()[[a, 32]].partial_cmp(&fb.weights()[[b, 32]]).unwrap())
            .unwrap();
        let samples: Vec<f32> = (0..16000)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16000.0).sin() as f32 * 0.5)
            .collect();
        let f = log_mel(&audio(samples), &cfg).unwrap();
        for t in 1..f.len() - 1 {
            let row = f.frames.row(t);
            let arg = (0..40).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
            assert_eq!(arg, band, "frame {t}");
        }
    }

    #[test]
    fn short_audio_gives_empty_sequence() {
        let f = log_mel(&audio(vec![0.1; 399]), &FeatureConfig::default()).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn mismatched_rate_rejected() {
        let a = AudioBuffer::new(vec![0.0; 1000], 8000).unwrap();
        assert!(log_mel(&a, &FeatureConfig::default()).is_err());
    }

    #[test]
    fn gain_never_lowers_entries_above_floor() {
        let cfg = FeatureConfig::default();
        let lm = LogMel::new(&cfg).unwrap();
        let mut state = 12345u64;
        let samples: Vec<f32> = (0..4000)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f32 / (1u64 << 31) as f32 - 0.5) * 0.2
            })
            .collect();
        let base = lm.compute(&audio(samples.clone()), "").unwrap();
        let louder = lm
            .compute(&audio(samples.iter().map(|s| s * 1.7).collect()), "")
            .unwrap();
        let floor = cfg.floor_value();
        for (a, b) in base.frames.iter().zip(louder.frames.iter()) {
            if *a > floor {
                assert!(b >= a);
            }
        }
        let again = lm.compute(&audio(samples), "").unwrap();
        assert_eq!(base, again);
    }
}
