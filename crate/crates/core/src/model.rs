//! Causal convolutional encoder and decoder.
//!
//! The encoder is an input convolution, one block per stride (residual units
//! followed by a strided convolution that doubles the channel count) and an
//! output convolution to the latent dimension. The decoder mirrors it with
//! sub-pixel upsampling: a convolution to `stride × channels` followed by a
//! reshape that interleaves the phases along time.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{init_rng, ParamSet};
use crate::signal::Waveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub strides: Vec<usize>,
    pub latent_dim: usize,
    pub base_channels: usize,
    pub residual_units_per_block: usize,
    pub kernel_size: usize,
    pub sample_rate: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            strides: vec![2, 4, 5, 8],
            latent_dim: 256,
            base_channels: 8,
            residual_units_per_block: 3,
            kernel_size: 7,
            sample_rate: 24000,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strides.is_empty() || self.strides.contains(&0) {
            return Err(Error::Config("strides must be non-empty and positive".into()));
        }
        if self.latent_dim == 0 || self.base_channels == 0 || self.kernel_size == 0 {
            return Err(Error::Config("latent_dim, base_channels and kernel_size must be positive".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }

    /// Samples per latent frame.
    pub fn hop(&self) -> usize {
        self.strides.iter().product()
    }

    /// Latent frames per second.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop() as f64
    }

    fn channels(&self, block: usize) -> usize {
        self.base_channels << block
    }
}

/// ceil(len / Π strides).
pub fn output_frames(len: usize, cfg: &ModelConfig) -> usize {
    len.div_ceil(cfg.hop())
}

/// Length after right zero-padding to a whole number of frames.
pub fn padded_len(len: usize, cfg: &ModelConfig) -> usize {
    output_frames(len, cfg) * cfg.hop()
}

/// Continuous latents of one signal, `frames × dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl LatentSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Empty("latent sequence"));
        }
        if data.len() != frames * dim {
            return Err(Error::ShapeMismatch(format!("{} values for {frames}x{dim} latents", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidWaveform("non-finite latent".into()));
        }
        Ok(Self { frames, dim, data })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// `[batch, dim, frames]` tensor → one sequence per batch item.
    pub fn from_tensor(t: &Tensor) -> Result<Vec<Self>> {
        let (b, d, f) = t.dims3()?;
        let host: Vec<f64> = t.to_dtype(DType::F64)?.transpose(1, 2)?.flatten_all()?.to_vec1()?;
        (0..b).map(|i| Self::new(f, d, host[i * f * d..(i + 1) * f * d].to_vec())).collect()
    }

    /// Stacks sequences with equal shapes into `[batch, dim, frames]`.
    pub fn to_tensor(seqs: &[Self], dtype: DType, device: &Device) -> Result<Tensor> {
        let first = seqs.first().ok_or(Error::Empty("latent batch"))?;
        if seqs.iter().any(|s| s.frames != first.frames || s.dim != first.dim) {
            return Err(Error::ShapeMismatch("latent sequences differ in shape".into()));
        }
        let data: Vec<f64> = seqs.iter().flat_map(|s| s.data.iter().copied()).collect();
        let t = Tensor::from_vec(data, (seqs.len(), first.frames, first.dim), device)?;
        Ok(t.transpose(1, 2)?.contiguous()?.to_dtype(dtype)?)
    }
}

/// A causal 1-D convolution: left padding only, so output step `j` sees
/// input up to `(j + 1)·stride − 1`.
#[derive(Debug, Clone)]
struct CausalConv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    dilation: usize,
    left_pad: usize,
}

impl CausalConv {
    #[allow(clippy::too_many_arguments)]
    fn new(
        p: &mut ParamSet,
        rng: &mut rand_chacha::ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        let weight = p.uniform(&format!("{name}.weight"), &[c_out, c_in, kernel], bound, rng)?;
        let bias = p.uniform(&format!("{name}.bias"), &[c_out], bound, rng)?;
        let span = dilation * (kernel - 1) + 1;
        let left_pad = span.saturating_sub(stride);
        Ok(Self { weight, bias, stride, dilation, left_pad })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = if self.left_pad > 0 { x.pad_with_zeros(2, self.left_pad, 0)? } else { x.clone() };
        let y = crate::ops::conv1d(&x, &self.weight, 0, self.stride, self.dilation, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

/// x + conv1x1(elu(conv_k(elu(x)))).
#[derive(Debug, Clone)]
struct ResidualUnit {
    conv_a: CausalConv,
    conv_b: CausalConv,
}

impl ResidualUnit {
    fn new(
        p: &mut ParamSet,
        rng: &mut rand_chacha::ChaCha8Rng,
        name: &str,
        ch: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv_a: CausalConv::new(p, rng, &format!("{name}.conv_a"), ch, ch, kernel, 1, dilation)?,
            conv_b: CausalConv::new(p, rng, &format!("{name}.conv_b"), ch, ch, 1, 1, 1)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv_a.forward(&x.elu(1.0)?)?;
        let h = self.conv_b.forward(&h.elu(1.0)?)?;
        Ok((x + h)?)
    }
}

fn dilation_for(unit: usize) -> usize {
    3usize.pow((unit % 3) as u32)
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    units: Vec<ResidualUnit>,
    down: CausalConv,
}

/// Waveform → latent frames.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: ModelConfig,
    params: ParamSet,
    conv_in: CausalConv,
    blocks: Vec<EncoderBlock>,
    conv_out: CausalConv,
}

impl Encoder {
    pub fn new(cfg: &ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut p = ParamSet::new(dtype, device);
        let mut rng = init_rng(seed, 1);
        let k = cfg.kernel_size;
        let conv_in = CausalConv::new(&mut p, &mut rng, "conv_in", 1, cfg.channels(0), k, 1, 1)?;
        let mut blocks = Vec::new();
        for (i, &s) in cfg.strides.iter().enumerate() {
            let ch = cfg.channels(i);
            let units = (0..cfg.residual_units_per_block)
                .map(|u| ResidualUnit::new(&mut p, &mut rng, &format!("block{i}.res{u}"), ch, k, dilation_for(u)))
                .collect::<Result<Vec<_>>>()?;
            let down =
                CausalConv::new(&mut p, &mut rng, &format!("block{i}.down"), ch, cfg.channels(i + 1), 2 * s, s, 1)?;
            blocks.push(EncoderBlock { units, down });
        }
        let last = cfg.channels(cfg.strides.len());
        let conv_out = CausalConv::new(&mut p, &mut rng, "conv_out", last, cfg.latent_dim, 3, 1, 1)?;
        Ok(Self { cfg: cfg.clone(), params: p, conv_in, blocks, conv_out })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// `[batch, 1, T]` with `T` a multiple of the hop → `[batch, latent, T/hop]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, t) = x.dims3()?;
        if c != 1 || t == 0 || t % self.cfg.hop() != 0 {
            return Err(Error::ShapeMismatch(format!(
                "encoder input [_, {c}, {t}] needs one channel and a multiple of {} samples",
                self.cfg.hop()
            )));
        }
        let mut h = self.conv_in.forward(x)?;
        for b in &self.blocks {
            for u in &b.units {
                h = u.forward(&h)?;
            }
            h = b.down.forward(&h.elu(1.0)?)?;
        }
        self.conv_out.forward(&h.elu(1.0)?)
    }

    /// Encodes one waveform, right-padding with zeros to a whole frame.
    pub fn encode(&self, w: &Waveform) -> Result<LatentSequence> {
        let x = waveform_batch(std::slice::from_ref(w), &self.cfg, self.params.dtype(), self.params.device())?;
        let z = self.forward(&x)?;
        Ok(LatentSequence::from_tensor(&z)?.remove(0))
    }
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    up: CausalConv,
    stride: usize,
    channels: usize,
    units: Vec<ResidualUnit>,
}

/// Latent frames → waveform.
#[derive(Debug, Clone)]
pub struct Decoder {
    cfg: ModelConfig,
    params: ParamSet,
    conv_in: CausalConv,
    blocks: Vec<DecoderBlock>,
    conv_out: CausalConv,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut p = ParamSet::new(dtype, device);
        let mut rng = init_rng(seed, 2);
        let k = cfg.kernel_size;
        let n = cfg.strides.len();
        let conv_in = CausalConv::new(&mut p, &mut rng, "conv_in", cfg.latent_dim, cfg.channels(n), k, 1, 1)?;
        let mut blocks = Vec::new();
        for (i, &s) in cfg.strides.iter().rev().enumerate() {
            let c_in = cfg.channels(n - i);
            let c_out = cfg.channels(n - i - 1);
            let up = CausalConv::new(&mut p, &mut rng, &format!("block{i}.up"), c_in, c_out * s, 3, 1, 1)?;
            let units = (0..cfg.residual_units_per_block)
                .map(|u| ResidualUnit::new(&mut p, &mut rng, &format!("block{i}.res{u}"), c_out, k, dilation_for(u)))
                .collect::<Result<Vec<_>>>()?;
            blocks.push(DecoderBlock { up, stride: s, channels: c_out, units });
        }
        let conv_out = CausalConv::new(&mut p, &mut rng, "conv_out", cfg.channels(0), 1, k, 1, 1)?;
        Ok(Self { cfg: cfg.clone(), params: p, conv_in, blocks, conv_out })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// `[batch, latent, F]` → `[batch, 1, F·hop]`.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let (_, d, f) = z.dims3()?;
        if d != self.cfg.latent_dim || f == 0 {
            return Err(Error::ShapeMismatch(format!(
                "decoder input [_, {d}, {f}] needs {} latent channels and at least one frame",
                self.cfg.latent_dim
            )));
        }
        let mut h = self.conv_in.forward(z)?;
        for b in &self.blocks {
            let u = b.up.forward(&h.elu(1.0)?)?;
            let (batch, _, t) = u.dims3()?;
            h = u.reshape((batch, b.channels, b.stride, t))?.transpose(2, 3)?.reshape((
                batch,
                b.channels,
                t * b.stride,
            ))?;
            for unit in &b.units {
                h = unit.forward(&h)?;
            }
        }
        self.conv_out.forward(&h.elu(1.0)?)
    }

    pub fn decode(&self, z: &LatentSequence) -> Result<Waveform> {
        let t = LatentSequence::to_tensor(std::slice::from_ref(z), self.params.dtype(), self.params.device())?;
        let y = self.forward(&t)?;
        let samples: Vec<f64> = y.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        Waveform::new(samples, self.cfg.sample_rate)
    }
}

/// Stacks waveforms into `[batch, 1, padded_len]`, zero-padding each on the
/// right to the longest one's frame boundary.
pub fn waveform_batch(ws: &[Waveform], cfg: &ModelConfig, dtype: DType, device: &Device) -> Result<Tensor> {
    let longest = ws.iter().map(Waveform::len).max().ok_or(Error::Empty("waveform batch"))?;
    let len = padded_len(longest, cfg);
    let mut data = Vec::with_capacity(ws.len() * len);
    for w in ws {
        data.extend_from_slice(w.samples());
        data.extend(std::iter::repeat_n(0.0, len - w.len()));
    }
    Ok(Tensor::from_vec(data, (ws.len(), 1, len), device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { latent_dim: 16, base_channels: 2, residual_units_per_block: 1, ..Default::default() }
    }

    #[test]
    fn frame_arithmetic() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.hop(), 320);
        assert_eq!(output_frames(24000, &cfg), 75);
        assert_eq!(cfg.frame_rate(), 75.0);
        assert_eq!(output_frames(8640, &cfg), 27);
        assert_eq!(output_frames(1, &cfg), 1);
        assert_eq!(output_frames(961, &cfg), 4);
    }

    #[test]
    fn encode_shapes_follow_ceiling_rule() {
        let cfg = ModelConfig { base_channels: 2, residual_units_per_block: 1, ..Default::default() };
        let enc = Encoder::new(&cfg, 0, DType::F32, &Device::Cpu).unwrap();
        for (len, frames) in [(960, 3), (320, 1), (961, 4)] {
            let z = enc.encode(&Waveform::new(vec![0.1; len], 24000).unwrap()).unwrap();
            assert_eq!((z.frames, z.dim), (frames, 256), "len {len}");
        }
    }

    #[test]
    fn decode_length_is_frames_times_hop() {
        let cfg = tiny();
        let dec = Decoder::new(&cfg, 0, DType::F32, &Device::Cpu).unwrap();
        for frames in [1, 3] {
            let z = LatentSequence::new(frames, 16, vec![0.2; frames * 16]).unwrap();
            assert_eq!(dec.decode(&z).unwrap().len(), frames * 320);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cfg = tiny();
        let dec = Decoder::new(&cfg, 0, DType::F32, &Device::Cpu).unwrap();
        let z = Tensor::zeros((1, 8, 2), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(dec.forward(&z), Err(Error::ShapeMismatch(_))));
        let enc = Encoder::new(&cfg, 0, DType::F32, &Device::Cpu).unwrap();
        let x = Tensor::zeros((1, 1, 100), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(enc.forward(&x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = tiny();
        let a = Encoder::new(&cfg, 9, DType::F32, &Device::Cpu).unwrap();
        let b = Encoder::new(&cfg, 9, DType::F32, &Device::Cpu).unwrap();
        let c = Encoder::new(&cfg, 10, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(a.params().digest().unwrap(), b.params().digest().unwrap());
        assert_ne!(a.params().digest().unwrap(), c.params().digest().unwrap());
    }
}
