//! The adversary: an STFT discriminator (index 0) and waveform
//! discriminators on the signal, its ×2 and its ×4 average-pooled versions.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{FeatureMap, FeatureStack, LogitSet};
use crate::params::{init_rng, ParamSet};
use crate::signal::{TensorStft, Waveform};

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSetConfig {
    /// Number of waveform scales (each one further ×2 downsampling).
    pub waveform_scales: usize,
    /// Channels of the waveform discriminator layers; the layer count is L.
    pub waveform_channels: Vec<usize>,
    pub waveform_strides: Vec<usize>,
    pub waveform_kernels: Vec<usize>,
    pub waveform_groups: Vec<usize>,
    /// Channels of the STFT discriminator layers; must have length L too.
    pub stft_channels: Vec<usize>,
    pub stft_window: usize,
    pub stft_hop: usize,
}

impl Default for DiscriminatorSetConfig {
    fn default() -> Self {
        Self {
            waveform_scales: 3,
            waveform_channels: vec![16, 32, 64, 64],
            waveform_strides: vec![1, 4, 4, 1],
            waveform_kernels: vec![15, 11, 11, 5],
            waveform_groups: vec![1, 4, 8, 1],
            stft_channels: vec![8, 16, 16, 32],
            stft_window: 1024,
            stft_hop: 256,
        }
    }
}

impl DiscriminatorSetConfig {
    /// K: the STFT discriminator plus the waveform scales.
    pub fn count(&self) -> usize {
        1 + self.waveform_scales
    }

    pub fn layers(&self) -> usize {
        self.waveform_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.waveform_channels.len();
        if self.count() < 2 || l < 2 {
            return Err(Error::Config("need K >= 2 discriminators and L >= 2 layers".into()));
        }
        if [
            self.waveform_strides.len(),
            self.waveform_kernels.len(),
            self.waveform_groups.len(),
            self.stft_channels.len(),
        ]
        .iter()
        .any(|&n| n != l)
        {
            return Err(Error::Config("discriminator layer lists must have equal lengths".into()));
        }
        let mut c_in = 1;
        for i in 0..l {
            let (c, g) = (self.waveform_channels[i], self.waveform_groups[i]);
            if g == 0 || c_in % g != 0 || c % g != 0 || self.waveform_strides[i] == 0 || self.waveform_kernels[i] == 0 {
                return Err(Error::Config(format!("waveform discriminator layer {i} is inconsistent")));
            }
            c_in = c;
        }
        crate::signal::check_window(self.stft_window)?;
        if self.stft_hop == 0 {
            return Err(Error::Config("stft hop must be positive".into()));
        }
        Ok(())
    }

    /// Shortest input for which every discriminator emits a logit.
    pub fn min_input_len(&self) -> usize {
        let total: usize = self.waveform_strides.iter().product();
        total << (self.waveform_scales - 1)
    }
}

/// Logits and internal features of all discriminators for a batch.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    /// K tensors; the STFT one is `[batch, 1, frames', bins']`, the waveform
    /// ones `[batch, 1, T_k]`.
    pub logits: Vec<Tensor>,
    /// K × L activations.
    pub features: Vec<Vec<Tensor>>,
}

impl DiscriminatorOutput {
    /// Host copy of the first batch item's logits.
    pub fn logit_set(&self) -> Result<LogitSet> {
        let sets = self
            .logits
            .iter()
            .map(|t| Ok(t.get(0)?.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?))
            .collect::<Result<Vec<_>>>()?;
        Ok(LogitSet(sets))
    }

    /// Host copy of the first batch item's features.
    pub fn feature_stack(&self) -> Result<FeatureStack> {
        let stack = self
            .features
            .iter()
            .map(|layers| {
                layers
                    .iter()
                    .map(|t| {
                        let item = t.get(0)?;
                        Ok(FeatureMap {
                            channels: item.dim(0)?,
                            values: item.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureStack(stack))
    }
}

#[derive(Debug, Clone)]
struct Conv1d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
    groups: usize,
}

impl Conv1d {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = crate::ops::conv1d(x, &self.weight, self.padding, self.stride, 1, self.groups)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

#[derive(Debug, Clone)]
struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
}

impl Conv2d {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = crate::ops::conv2d(x, &self.weight, 1, self.stride)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
struct WaveformDisc {
    layers: Vec<Conv1d>,
    head: Conv1d,
}

impl WaveformDisc {
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut h = x.clone();
        let mut feats = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            h = leaky_relu(&l.forward(&h)?)?;
            feats.push(h.clone());
        }
        Ok((self.head.forward(&h)?, feats))
    }
}

#[derive(Debug, Clone)]
struct StftDisc {
    stft: TensorStft,
    layers: Vec<Conv2d>,
    head: Conv2d,
}

impl StftDisc {
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (b, _, t) = x.dims3()?;
        let mag = self.stft.forward(&x.reshape((b, t))?)?;
        let mut h = mag.unsqueeze(1)?;
        let mut feats = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            h = leaky_relu(&l.forward(&h)?)?;
            feats.push(h.clone());
        }
        Ok((self.head.forward(&h)?, feats))
    }
}

fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(LEAKY_SLOPE, 0.0)?)?)
}

/// Average pooling by 2 with floor length, on a `[batch, 1, T]` tensor.
pub fn downsample2_t(x: &Tensor) -> Result<Tensor> {
    let (b, c, t) = x.dims3()?;
    if t < 2 {
        return Err(Error::InputTooShort(format!("{t} samples cannot be halved")));
    }
    let half = t / 2;
    Ok(x.narrow(2, 0, half * 2)?.reshape((b, c, half, 2))?.mean(3)?)
}

/// Average pooling by 2 with floor length.
pub fn downsample2(w: &Waveform) -> Result<Waveform> {
    if w.len() < 2 {
        return Err(Error::InputTooShort(format!("{} samples cannot be halved", w.len())));
    }
    let s = w.samples();
    Waveform::new(s.chunks_exact(2).map(|p| (p[0] + p[1]) / 2.0).collect(), w.sample_rate())
}

/// All K discriminators with their parameters.
#[derive(Debug, Clone)]
pub struct DiscriminatorSet {
    cfg: DiscriminatorSetConfig,
    params: ParamSet,
    len: usize,
    stft_disc: StftDisc,
    wave_discs: Vec<WaveformDisc>,
}

impl DiscriminatorSet {
    /// Discriminators for inputs of exactly `len` samples.
    pub fn new(cfg: &DiscriminatorSetConfig, len: usize, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        if len < cfg.min_input_len().max(2 << cfg.waveform_scales) {
            return Err(Error::InputTooShort(format!(
                "discriminators need at least {} samples, got {len}",
                cfg.min_input_len()
            )));
        }
        let mut p = ParamSet::new(dtype, device);
        let mut rng = init_rng(seed, 3);

        let mut conv2d = |p: &mut ParamSet, name: &str, c_in: usize, c_out: usize, stride: usize| -> Result<Conv2d> {
            let bound = 1.0 / ((c_in * 9) as f64).sqrt();
            Ok(Conv2d {
                weight: p.uniform(&format!("{name}.weight"), &[c_out, c_in, 3, 3], bound, &mut rng)?,
                bias: p.uniform(&format!("{name}.bias"), &[c_out], bound, &mut rng)?,
                stride,
            })
        };
        let mut layers = Vec::new();
        let mut c_in = 1;
        for (i, &c) in cfg.stft_channels.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            layers.push(conv2d(&mut p, &format!("stft.layer{i}"), c_in, c, stride)?);
            c_in = c;
        }
        let head = conv2d(&mut p, "stft.head", c_in, 1, 1)?;
        let stft = TensorStft::new(len, cfg.stft_window, cfg.stft_hop, None, dtype, device)?;
        let stft_disc = StftDisc { stft, layers, head };

        let mut rng = init_rng(seed, 4);
        let mut wave_discs = Vec::new();
        for k in 0..cfg.waveform_scales {
            let mut layers = Vec::new();
            let mut c_in = 1;
            for i in 0..cfg.layers() {
                let (c, kern, g) = (cfg.waveform_channels[i], cfg.waveform_kernels[i], cfg.waveform_groups[i]);
                let bound = 1.0 / ((c_in / g * kern) as f64).sqrt();
                let name = format!("wave{k}.layer{i}");
                layers.push(Conv1d {
                    weight: p.uniform(&format!("{name}.weight"), &[c, c_in / g, kern], bound, &mut rng)?,
                    bias: p.uniform(&format!("{name}.bias"), &[c], bound, &mut rng)?,
                    stride: cfg.waveform_strides[i],
                    padding: kern / 2,
                    groups: g,
                });
                c_in = c;
            }
            let bound = 1.0 / ((c_in * 3) as f64).sqrt();
            let head = Conv1d {
                weight: p.uniform(&format!("wave{k}.head.weight"), &[1, c_in, 3], bound, &mut rng)?,
                bias: p.uniform(&format!("wave{k}.head.bias"), &[1], bound, &mut rng)?,
                stride: 1,
                padding: 1,
                groups: 1,
            };
            wave_discs.push(WaveformDisc { layers, head });
        }
        Ok(Self { cfg: cfg.clone(), params: p, len, stft_disc, wave_discs })
    }

    pub fn config(&self) -> &DiscriminatorSetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn input_len(&self) -> usize {
        self.len
    }

    /// Runs all discriminators on `[batch, 1, len]` audio.
    pub fn forward_all(&self, x: &Tensor) -> Result<DiscriminatorOutput> {
        let (_, c, t) = x.dims3()?;
        if c != 1 || t != self.len {
            return Err(Error::ShapeMismatch(format!(
                "discriminator input [_, {c}, {t}], expected [_, 1, {}]",
                self.len
            )));
        }
        let mut logits = Vec::with_capacity(self.cfg.count());
        let mut features = Vec::with_capacity(self.cfg.count());
        let (l, f) = self.stft_disc.forward(x)?;
        logits.push(l);
        features.push(f);
        let mut h = x.clone();
        for (k, d) in self.wave_discs.iter().enumerate() {
            if k > 0 {
                h = downsample2_t(&h)?;
            }
            let (l, f) = d.forward(&h)?;
            logits.push(l);
            features.push(f);
        }
        Ok(DiscriminatorOutput { logits, features })
    }

    /// Convenience wrapper for a single waveform.
    pub fn forward_waveform(&self, w: &Waveform) -> Result<DiscriminatorOutput> {
        let x = Tensor::from_vec(w.samples().to_vec(), (1, 1, w.len()), self.params.device())?
            .to_dtype(self.params.dtype())?;
        self.forward_all(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 24000).unwrap()
    }

    #[test]
    fn downsample_examples() {
        assert_eq!(downsample2(&wave(vec![1.0, 1.0, 3.0, 3.0])).unwrap().samples(), &[1.0, 3.0]);
        assert_eq!(downsample2(&wave(vec![0.25; 7])).unwrap().samples(), &[0.25; 3]);
        assert!(downsample2(&wave(vec![1.0])).is_err());
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let twice = downsample2(&downsample2(&wave(x.clone())).unwrap()).unwrap();
        let four: Vec<f64> = x.chunks(4).map(|c| c.iter().sum::<f64>() / 4.0).collect();
        assert_eq!(twice.samples(), four.as_slice());
    }

    #[test]
    fn tensor_downsample_matches_plain() {
        let x: Vec<f64> = (0..9).map(|i| (i * i) as f64).collect();
        let t = Tensor::from_vec(x.clone(), (1, 1, 9), &Device::Cpu).unwrap();
        let d: Vec<f64> = downsample2_t(&t).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(d, downsample2(&wave(x)).unwrap().samples());
    }

    #[test]
    fn four_discriminators_with_nonempty_outputs() {
        let cfg = DiscriminatorSetConfig::default();
        let set = DiscriminatorSet::new(&cfg, 2048, 0, DType::F32, &Device::Cpu).unwrap();
        let w = wave((0..2048).map(|i| (i as f64 * 0.05).sin() * 0.5).collect());
        let out = set.forward_waveform(&w).unwrap();
        assert_eq!(out.logits.len(), 4);
        let logits = out.logit_set().unwrap();
        assert!(logits.0.iter().all(|l| !l.is_empty()));
        let feats = out.feature_stack().unwrap();
        assert!(feats.0.iter().all(|k| k.len() == cfg.layers() && k.iter().all(|f| !f.values.is_empty())));
        let again = set.forward_waveform(&w).unwrap().feature_stack().unwrap();
        assert_eq!(feats, again);
    }

    #[test]
    fn longer_input_never_shrinks_logit_counts() {
        let cfg = DiscriminatorSetConfig::default();
        let lens = |n: usize| -> Vec<usize> {
            let set = DiscriminatorSet::new(&cfg, n, 0, DType::F32, &Device::Cpu).unwrap();
            let out = set.forward_waveform(&wave(vec![0.1; n])).unwrap();
            out.logit_set().unwrap().0.iter().map(Vec::len).collect()
        };
        let (a, b) = (lens(1024), lens(2048));
        assert!(a.iter().zip(&b).all(|(x, y)| y >= x), "{a:?} vs {b:?}");
    }

    #[test]
    fn too_short_input_is_rejected() {
        let cfg = DiscriminatorSetConfig::default();
        assert!(matches!(DiscriminatorSet::new(&cfg, 16, 0, DType::F32, &Device::Cpu), Err(Error::InputTooShort(_))));
    }
}
