//! Training objectives and the SI-SNR metric.
//!
//! Every loss has a plain `f64` form working on [`Waveform`]s, [`LogitSet`]s
//! and [`FeatureStack`]s, and a tensor form used by the trainer where the
//! gradient is needed. The plain forms double as references for the tensor
//! ones in tests.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{self, MelFilterbank, TensorStft, Waveform};

/// Frequency axis used by the spectral loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectrumKind {
    Linear,
    /// Mel bands; capped at the bin count for small windows.
    Mel {
        n_mels: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralLossConfig {
    pub scales: Vec<usize>,
    pub epsilon: f64,
    pub kind: SpectrumKind,
}

impl Default for SpectralLossConfig {
    fn default() -> Self {
        Self { scales: (6..=11).map(|p| 1usize << p).collect(), epsilon: 1e-5, kind: SpectrumKind::Mel { n_mels: 64 } }
    }
}

impl SpectralLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Config("spectral loss needs at least one scale".into()));
        }
        for &s in &self.scales {
            signal::check_window(s)?;
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if let SpectrumKind::Mel { n_mels: 0 } = self.kind {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        Ok(())
    }

    /// Mel bands used at window length `s`, if any.
    pub fn mels_at(&self, s: usize) -> Option<usize> {
        match self.kind {
            SpectrumKind::Linear => None,
            SpectrumKind::Mel { n_mels } => Some(n_mels.min(s / 2 + 1)),
        }
    }

    fn filterbank(&self, s: usize, sample_rate: u32) -> Result<Option<MelFilterbank>> {
        self.mels_at(s).map(|m| MelFilterbank::new(m, s, sample_rate)).transpose()
    }
}

/// Weight of the log term at window length `s`: √(s/2).
pub fn alpha(s: usize) -> f64 {
    (s as f64 / 2.0).sqrt()
}

/// Spectrogram at scale `s` with hop `s/4`, on the axis chosen by `cfg`.
pub fn loss_spectrogram(w: &Waveform, s: usize, cfg: &SpectralLossConfig) -> Result<signal::Spectrogram> {
    let spec = signal::stft(w, s, s / 4)?;
    match cfg.filterbank(s, w.sample_rate())? {
        Some(bank) => bank.project(&spec),
        None => Ok(spec),
    }
}

/// Σ_s Σ_t ‖X_t − X̂_t‖₁ + α_s ‖log(X_t + ε) − log(X̂_t + ε)‖₂².
pub fn multiscale_spectral_loss(x: &Waveform, xhat: &Waveform, cfg: &SpectralLossConfig) -> Result<f64> {
    cfg.validate()?;
    if x.len() != xhat.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: xhat.len() });
    }
    let mut total = 0.0;
    for &s in &cfg.scales {
        let a = loss_spectrogram(x, s, cfg)?;
        let b = loss_spectrogram(xhat, s, cfg)?;
        total += spectral_terms(a.values(), b.values(), s, cfg.epsilon);
    }
    Ok(total)
}

/// The per-scale sum for already computed spectrogram values.
pub fn spectral_terms(x: &[f64], xhat: &[f64], s: usize, epsilon: f64) -> f64 {
    let l1: f64 = x.iter().zip(xhat).map(|(a, b)| (a - b).abs()).sum();
    let log2: f64 = x.iter().zip(xhat).map(|(a, b)| ((a + epsilon).ln() - (b + epsilon).ln()).powi(2)).sum();
    l1 + alpha(s) * log2
}

/// Tensor form of [`multiscale_spectral_loss`] for `[batch, len]` inputs,
/// averaged over the batch.
#[derive(Debug, Clone)]
pub struct SpectralLoss {
    scales: Vec<(f64, TensorStft)>,
    epsilon: f64,
    len: usize,
}

impl SpectralLoss {
    pub fn new(cfg: &SpectralLossConfig, len: usize, sample_rate: u32, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let scales = cfg
            .scales
            .iter()
            .map(|&s| {
                let bank = cfg.filterbank(s, sample_rate)?;
                let op = TensorStft::new(len, s, s / 4, bank.as_ref(), dtype, device)?;
                Ok((alpha(s), op))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scales, epsilon: cfg.epsilon, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, x: &Tensor, xhat: &Tensor) -> Result<Tensor> {
        let batch = x.dim(0)?;
        if x.dims() != xhat.dims() {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.dims(), xhat.dims())));
        }
        let mut total: Option<Tensor> = None;
        for (alpha, op) in &self.scales {
            let a = op.forward(x)?;
            let b = op.forward(xhat)?;
            let l1 = (&a - &b)?.abs()?.sum_all()?;
            let la = a.affine(1.0, self.epsilon)?.log()?;
            let lb = b.affine(1.0, self.epsilon)?.log()?;
            let l2 = (la - lb)?.sqr()?.sum_all()?;
            let term = (l1 + l2.affine(*alpha, 0.0)?)?;
            total = Some(match total {
                Some(t) => (t + term)?,
                None => term,
            });
        }
        let total = total.expect("validated non-empty scales");
        Ok(total.affine(1.0 / batch as f64, 0.0)?)
    }
}

/// λ weights of the combined generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_feat: f64,
    pub lambda_dis: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_adv: 1.0, lambda_feat: 100.0, lambda_dis: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_adv, self.lambda_feat, self.lambda_dis];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("loss weights must not all be zero".into()));
        }
        Ok(())
    }
}

/// Logits of each discriminator along time.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSet(pub Vec<Vec<f64>>);

impl LogitSet {
    fn check(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Empty("logit set"));
        }
        if self.0.iter().any(Vec::is_empty) {
            return Err(Error::Empty("discriminator with no logits"));
        }
        Ok(())
    }
}

/// One internal activation: `channels × time`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub values: Vec<f64>,
}

/// Per-discriminator, per-layer activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack(pub Vec<Vec<FeatureMap>>);

fn mean_hinge(logits: &[f64], sign: f64) -> f64 {
    logits.iter().map(|d| (1.0 + sign * d).max(0.0)).sum::<f64>() / logits.len() as f64
}

/// (1/K) Σ_k (1/T_k) Σ_t max(0, 1 − D_k,t(X̂)).
pub fn generator_adv_loss(fake: &LogitSet) -> Result<f64> {
    fake.check()?;
    let k = fake.0.len() as f64;
    Ok(fake.0.iter().map(|l| mean_hinge(l, -1.0)).sum::<f64>() / k)
}

/// Mean absolute difference per layer, averaged over layers and
/// discriminators.
pub fn feature_matching_loss(real: &FeatureStack, fake: &FeatureStack) -> Result<f64> {
    if real.0.is_empty() {
        return Err(Error::Empty("feature stack"));
    }
    if real.0.len() != fake.0.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} discriminators", real.0.len(), fake.0.len())));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, (rl, fl)) in real.0.iter().zip(&fake.0).enumerate() {
        if rl.len() != fl.len() {
            return Err(Error::ShapeMismatch(format!("discriminator {k}: layer counts differ")));
        }
        for (l, (r, f)) in rl.iter().zip(fl).enumerate() {
            if r.channels != f.channels || r.values.len() != f.values.len() || r.values.is_empty() {
                return Err(Error::ShapeMismatch(format!("discriminator {k} layer {l}")));
            }
            let sum: f64 = r.values.iter().zip(&f.values).map(|(a, b)| (a - b).abs()).sum();
            total += sum / r.values.len() as f64;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Hinge loss of the discriminators on real and generated audio.
pub fn discriminator_loss(real: &LogitSet, fake: &LogitSet) -> Result<f64> {
    real.check()?;
    fake.check()?;
    if real.0.len() != fake.0.len() {
        return Err(Error::ShapeMismatch(format!("{} real vs {} fake discriminators", real.0.len(), fake.0.len())));
    }
    let k = real.0.len() as f64;
    let r: f64 = real.0.iter().map(|l| mean_hinge(l, -1.0)).sum();
    let f: f64 = fake.0.iter().map(|l| mean_hinge(l, 1.0)).sum();
    Ok((r + f) / k)
}

pub fn generator_total_loss(adv: f64, feat: f64, dis: f64, w: &LossWeights) -> f64 {
    w.lambda_adv * adv + w.lambda_feat * feat + w.lambda_dis * dis
}

fn mean_of(ts: impl Iterator<Item = Result<Tensor>>) -> Result<Tensor> {
    let parts = ts.collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        return Err(Error::Empty("tensor list"));
    }
    let n = parts.len() as f64;
    Ok(Tensor::stack(&parts, 0)?.sum_all()?.affine(1.0 / n, 0.0)?)
}

/// Tensor form of [`generator_adv_loss`]; each logit tensor is averaged over
/// all of its elements (batch included).
pub fn generator_adv_loss_t(fake: &[Tensor]) -> Result<Tensor> {
    mean_of(fake.iter().map(|d| Ok(d.neg()?.affine(1.0, 1.0)?.relu()?.mean_all()?)))
}

/// Tensor form of [`feature_matching_loss`].
pub fn feature_matching_loss_t(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<Tensor> {
    if real.len() != fake.len() {
        return Err(Error::ShapeMismatch("discriminator counts differ".into()));
    }
    let pairs = real.iter().zip(fake).flat_map(|(r, f)| r.iter().zip(f));
    mean_of(pairs.map(|(r, f)| Ok((r - f)?.abs()?.mean_all()?)))
}

/// Tensor form of [`discriminator_loss`].
pub fn discriminator_loss_t(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    if real.len() != fake.len() {
        return Err(Error::ShapeMismatch("discriminator counts differ".into()));
    }
    let r = mean_of(real.iter().map(|d| Ok(d.neg()?.affine(1.0, 1.0)?.relu()?.mean_all()?)))?;
    let f = mean_of(fake.iter().map(|d| Ok(d.affine(1.0, 1.0)?.relu()?.mean_all()?)))?;
    Ok((r + f)?)
}

/// Upper limit reported by [`si_snr`] (and its negative as lower limit).
pub const SI_SNR_CAP_DB: f64 = 100.0;

/// Scale-invariant SNR in dB: `est` is projected onto `reference`.
pub fn si_snr(reference: &Waveform, est: &Waveform) -> Result<f64> {
    if reference.len() != est.len() {
        return Err(Error::LengthMismatch { left: reference.len(), right: est.len() });
    }
    let r = reference.samples();
    let e = est.samples();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::ZeroPower("reference"));
    }
    let scale = r.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target: f64 = rr * scale * scale;
    let residual: f64 = r.iter().zip(e).map(|(a, b)| (b - scale * a).powi(2)).sum();
    let db = if residual == 0.0 {
        SI_SNR_CAP_DB
    } else if target == 0.0 {
        -SI_SNR_CAP_DB
    } else {
        10.0 * (target / residual).log10()
    };
    Ok(db.clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}
