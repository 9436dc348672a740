//! Waveforms, WAV I/O and time-frequency analysis.
//!
//! Two STFT paths live here. [`stft`] and [`mel_spectrogram`] work on plain
//! `f64` samples through an FFT and are used for evaluation and as the
//! reference. [`TensorStft`] computes the same magnitudes as a windowed DFT
//! matrix product on candle tensors so that losses and the STFT
//! discriminator can be differentiated.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// Smallest and largest supported analysis window.
pub const MIN_WINDOW: usize = 64;
pub const MAX_WINDOW: usize = 2048;

/// Floor added under the square root of the tensor magnitude so its gradient
/// stays finite at zero.
pub const MAGNITUDE_FLOOR: f64 = 1e-20;

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("waveform has no samples"));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidWaveform(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn power(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    /// Copy of `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.samples.len() {
            return Err(Error::InputTooShort(format!(
                "slice {start}..{} of {} samples",
                start + len,
                self.samples.len()
            )));
        }
        Self::new(self.samples[start..start + len].to_vec(), self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self { samples: self.samples.iter().map(|s| s * gain).collect(), sample_rate: self.sample_rate }
    }
}

/// Reads a 16-bit PCM mono WAV file, scaling samples by 1/32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::NonMono { channels: spec.channels });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedEncoding(format!("{:?} {} bits", spec.sample_format, spec.bits_per_sample)));
    }
    let samples =
        reader.samples::<i16>().map(|s| s.map(|v| v as f64 / 32768.0)).collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a 16-bit PCM mono WAV file. Samples outside [-1, 1] are clipped.
pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    let mut clipped = 0usize;
    for &s in &w.samples {
        if !(-1.0..=1.0).contains(&s) {
            clipped += 1;
        }
        writer.write_sample(pcm16(s))?;
    }
    writer.finalize()?;
    if clipped > 0 {
        log::warn!("clipped {clipped} samples outside [-1, 1] while writing {}", path.as_ref().display());
    }
    Ok(())
}

/// Nearest 16-bit code for an amplitude, saturating at the rails.
pub fn pcm16(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Magnitude spectrogram, `frames × bins` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    magnitudes: Vec<f64>,
    frames: usize,
    bins: usize,
    window_length: usize,
    hop: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.magnitudes[t * self.bins..(t + 1) * self.bins]
    }

    pub fn values(&self) -> &[f64] {
        &self.magnitudes
    }
}

pub fn check_window(window_length: usize) -> Result<()> {
    if !window_length.is_power_of_two() || !(MIN_WINDOW..=MAX_WINDOW).contains(&window_length) {
        return Err(Error::InvalidWindow(window_length));
    }
    Ok(())
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()).collect()
}

/// Number of STFT frames for a signal of `len` samples.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

/// Index into a signal of length `n` after reflect padding, folding as many
/// times as needed so short signals still get a well-defined padding.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Source sample index for every element of every frame, `frames × s`,
/// with `s/2` reflect padding on both sides.
pub fn frame_indices(len: usize, window_length: usize, hop: usize) -> Vec<usize> {
    let frames = frame_count(len, hop);
    let half = (window_length / 2) as isize;
    let mut idx = Vec::with_capacity(frames * window_length);
    for t in 0..frames {
        let start = (t * hop) as isize - half;
        for k in 0..window_length {
            idx.push(reflect_index(start + k as isize, len));
        }
    }
    idx
}

/// Hann-windowed, center-padded (reflect) magnitude STFT.
pub fn stft(w: &Waveform, window_length: usize, hop: usize) -> Result<Spectrogram> {
    check_window(window_length)?;
    if hop == 0 {
        return Err(Error::Config("hop must be at least 1".into()));
    }
    if w.is_empty() {
        return Err(Error::Empty("waveform"));
    }
    let window = hann_window(window_length);
    let bins = window_length / 2 + 1;
    let frames = frame_count(w.len(), hop);
    let idx = frame_indices(w.len(), window_length, hop);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_length);
    let mut buf = vec![Complex::new(0.0, 0.0); window_length];
    let mut magnitudes = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let src = &idx[t * window_length..(t + 1) * window_length];
        for ((b, &i), win) in buf.iter_mut().zip(src).zip(&window) {
            *b = Complex::new(w.samples[i] * win, 0.0);
        }
        fft.process(&mut buf);
        magnitudes.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    Ok(Spectrogram { magnitudes, frames, bins, window_length, hop })
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters spanning 0 Hz to Nyquist.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    n_mels: usize,
    bins: usize,
    sample_rate: u32,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, window_length: usize, sample_rate: u32) -> Result<Self> {
        let bins = window_length / 2 + 1;
        if n_mels == 0 {
            return Err(Error::Config("n_mels must be at least 1".into()));
        }
        if n_mels > bins {
            return Err(Error::TooManyMels { n_mels, bins });
        }
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64)).collect();
        let bin_hz = |k: usize| k as f64 * sample_rate as f64 / window_length as f64;
        let mut weights = vec![0.0; n_mels * bins];
        for m in 0..n_mels {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let row = &mut weights[m * bins..(m + 1) * bins];
            for (k, wgt) in row.iter_mut().enumerate() {
                let f = bin_hz(k);
                let v = if f > lo && f <= center {
                    (f - lo) / (center - lo)
                } else if f > center && f < hi {
                    (hi - f) / (hi - center)
                } else {
                    0.0
                };
                *wgt = v.max(0.0);
            }
            // Narrow low-frequency filters can fall between bins.
            if row.iter().all(|&v| v == 0.0) {
                let nearest = ((center / bin_hz(1)).round() as usize).min(bins - 1);
                row[nearest] = 1.0;
            }
        }
        Ok(Self { weights, n_mels, bins, sample_rate })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Projects one magnitude frame onto the mel bands.
    pub fn apply(&self, frame: &[f64]) -> Vec<f64> {
        (0..self.n_mels).map(|m| self.row(m).iter().zip(frame).map(|(w, x)| w * x).sum()).collect()
    }

    /// Projects every frame of a spectrogram.
    pub fn project(&self, spec: &Spectrogram) -> Result<Spectrogram> {
        if spec.bins != self.bins {
            return Err(Error::ShapeMismatch(format!(
                "filterbank expects {} bins, spectrogram has {}",
                self.bins, spec.bins
            )));
        }
        let mut magnitudes = Vec::with_capacity(spec.frames * self.n_mels);
        for t in 0..spec.frames {
            magnitudes.extend(self.apply(spec.frame(t)));
        }
        Ok(Spectrogram {
            magnitudes,
            frames: spec.frames,
            bins: self.n_mels,
            window_length: spec.window_length,
            hop: spec.hop,
        })
    }
}

/// Mel magnitude spectrogram with hop `s/4`. The result's `bins()` is the
/// number of mel bands.
pub fn mel_spectrogram(w: &Waveform, window_length: usize, n_mels: usize) -> Result<Spectrogram> {
    check_window(window_length)?;
    let bank = MelFilterbank::new(n_mels, window_length, w.sample_rate)?;
    let spec = stft(w, window_length, window_length / 4)?;
    bank.project(&spec)
}

/// Differentiable magnitude STFT over a batch of signals of fixed length.
///
/// Frames are gathered with an index tensor (reflect padding included) and
/// multiplied by a `[s, 2·bins]` matrix holding the Hann-windowed cosine and
/// sine DFT rows. The optional filterbank maps bins to mel bands.
#[derive(Debug, Clone)]
pub struct TensorStft {
    window_length: usize,
    hop: usize,
    len: usize,
    frames: usize,
    bins: usize,
    frame_idx: Tensor,
    basis: Tensor,
    mel: Option<Tensor>,
}

impl TensorStft {
    pub fn new(
        len: usize,
        window_length: usize,
        hop: usize,
        mel: Option<&MelFilterbank>,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        check_window(window_length)?;
        if hop == 0 || len == 0 {
            return Err(Error::Config("hop and length must be positive".into()));
        }
        let bins = window_length / 2 + 1;
        let frames = frame_count(len, hop);
        let idx: Vec<u32> = frame_indices(len, window_length, hop).into_iter().map(|i| i as u32).collect();
        let frame_idx = Tensor::from_vec(idx, frames * window_length, device)?;

        let window = hann_window(window_length);
        let mut basis = vec![0.0f64; window_length * 2 * bins];
        for n in 0..window_length {
            for k in 0..bins {
                let phase = -2.0 * std::f64::consts::PI * ((n * k) % window_length) as f64 / window_length as f64;
                basis[n * 2 * bins + k] = window[n] * phase.cos();
                basis[n * 2 * bins + bins + k] = window[n] * phase.sin();
            }
        }
        let basis = Tensor::from_vec(basis, (window_length, 2 * bins), device)?.to_dtype(dtype)?;
        let mel = match mel {
            Some(bank) => {
                if bank.bins() != bins {
                    return Err(Error::ShapeMismatch(format!(
                        "filterbank has {} bins, window gives {bins}",
                        bank.bins()
                    )));
                }
                let t = Tensor::from_vec(bank.weights().to_vec(), (bank.n_mels(), bins), device)?
                    .t()?
                    .contiguous()?
                    .to_dtype(dtype)?;
                Some(t)
            }
            None => None,
        };
        Ok(Self { window_length, hop, len, frames, bins, frame_idx, basis, mel })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of output channels per frame (bins, or mel bands).
    pub fn channels(&self) -> usize {
        match &self.mel {
            Some(m) => m.dim(1).unwrap_or(self.bins),
            None => self.bins,
        }
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// `[batch, len]` → `[batch, frames, channels]` magnitudes.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (batch, len) = x.dims2()?;
        if len != self.len {
            return Err(Error::LengthMismatch { left: len, right: self.len });
        }
        let frames = x.index_select(&self.frame_idx, 1)?.reshape((batch * self.frames, self.window_length))?;
        let spec = frames.matmul(&self.basis)?;
        let re = spec.narrow(1, 0, self.bins)?;
        let im = spec.narrow(1, self.bins, self.bins)?;
        let mag = (re.sqr()? + im.sqr()?)?.affine(1.0, MAGNITUDE_FLOOR)?.sqrt()?;
        let out = match &self.mel {
            Some(m) => mag.matmul(m)?,
            None => mag,
        };
        let channels = out.dim(1)?;
        Ok(out.reshape((batch, self.frames, channels))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft_magnitudes(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, x) in frame.iter().enumerate() {
                    let ph = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                    re += x * ph.cos();
                    im += x * ph.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn zero_waveform_has_zero_spectrum() {
        let w = Waveform::zeros(500, 24000).unwrap();
        let s = stft(&w, 64, 16).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_follows_ceiling_rule() {
        let w = Waveform::zeros(1024, 24000).unwrap();
        assert_eq!(stft(&w, 64, 16).unwrap().frames(), 64);
        let w = Waveform::zeros(1025, 24000).unwrap();
        assert_eq!(stft(&w, 64, 16).unwrap().frames(), 65);
    }

    #[test]
    fn bin_four_cosine_peaks_at_bin_four() {
        let samples: Vec<f64> = (0..512).map(|n| (2.0 * std::f64::consts::PI * 4.0 * n as f64 / 64.0).cos()).collect();
        let s = stft(&Waveform::new(samples, 24000).unwrap(), 64, 16).unwrap();
        for t in 0..s.frames() {
            let frame = s.frame(t);
            let argmax = (0..frame.len()).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
            assert_eq!(argmax, 4, "frame {t}");
        }
    }

    #[test]
    fn stft_matches_dft_by_definition() {
        let samples: Vec<f64> = (0..300).map(|n| ((n * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let w = Waveform::new(samples.clone(), 16000).unwrap();
        let s = stft(&w, 128, 32).unwrap();
        let idx = frame_indices(samples.len(), 128, 32);
        let win = hann_window(128);
        for t in 0..s.frames() {
            let frame: Vec<f64> = (0..128).map(|k| samples[idx[t * 128 + k]] * win[k]).collect();
            let oracle = naive_dft_magnitudes(&frame);
            for (a, b) in s.frame(t).iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn reflect_padding_mirrors_without_edge_repeat() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(6, 5), 2);
        assert_eq!(reflect_index(-9, 5), 1);
        assert_eq!(reflect_index(3, 1), 0);
    }

    #[test]
    fn invalid_windows_are_rejected() {
        let w = Waveform::zeros(100, 8000).unwrap();
        assert!(matches!(stft(&w, 100, 25), Err(Error::InvalidWindow(100))));
        assert!(matches!(stft(&w, 32, 8), Err(Error::InvalidWindow(32))));
        assert!(matches!(stft(&w, 4096, 8), Err(Error::InvalidWindow(4096))));
        assert!(Waveform::new(vec![], 8000).is_err());
    }

    #[test]
    fn every_mel_row_has_support() {
        for &(n_mels, s) in &[(33, 64), (64, 128), (64, 2048), (8, 64)] {
            let bank = MelFilterbank::new(n_mels, s, 24000).unwrap();
            for m in 0..n_mels {
                assert!(bank.row(m).iter().any(|&v| v > 0.0), "row {m} of {n_mels}x{s}");
                assert!(bank.row(m).iter().all(|&v| v >= 0.0 && v.is_finite()));
            }
        }
        assert!(matches!(MelFilterbank::new(34, 64, 24000), Err(Error::TooManyMels { n_mels: 34, bins: 33 })));
    }

    #[test]
    fn single_tone_lights_only_overlapping_mel_rows() {
        let s = 256;
        let bin = 20usize;
        let samples: Vec<f64> =
            (0..4096).map(|n| (2.0 * std::f64::consts::PI * bin as f64 * n as f64 / s as f64).sin()).collect();
        let w = Waveform::new(samples, 24000).unwrap();
        let bank = MelFilterbank::new(32, s, 24000).unwrap();
        let spec = stft(&w, s, s / 4).unwrap();
        // an interior frame, away from the reflect padding
        let frame = spec.frame(spec.frames() / 2);
        let mel = bank.apply(frame);
        // the Hann main lobe covers bins bin-1..=bin+1
        for (m, v) in mel.iter().enumerate() {
            let row = bank.row(m);
            let touches = row[bin] > 0.0;
            let near = (bin - 1..=bin + 1).any(|k| row[k] > 0.0);
            if touches {
                assert!(*v > 1.0, "row {m} overlaps the tone but got {v}");
            } else if !near {
                assert!(*v < 1e-6 * frame[bin], "row {m} has leakage {v}");
            }
        }
    }

    #[test]
    fn tensor_stft_matches_fft_path() {
        let samples: Vec<f64> = (0..700).map(|n| ((n as f64) * 0.37).sin() * 0.5).collect();
        let w = Waveform::new(samples.clone(), 24000).unwrap();
        let op = TensorStft::new(700, 128, 32, None, DType::F64, &Device::Cpu).unwrap();
        let x = Tensor::from_vec(samples, (1, 700), &Device::Cpu).unwrap();
        let t = op.forward(&x).unwrap().squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        let s = stft(&w, 128, 32).unwrap();
        for (f, row) in t.iter().enumerate() {
            for (a, b) in row.iter().zip(s.frame(f)) {
                assert!((a - b).abs() < 1e-5, "frame {f}: {a} vs {b}");
            }
        }
    }
}
