//! Noisy-mixture synthesis, corpora and training batches.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{load_wav, Waveform};

/// How training examples are cut and mixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMixSpec {
    pub snr_db: (f64, f64),
    pub insertion_period_secs: f64,
    pub peak_target: f64,
    pub gain: (f64, f64),
    pub crop_secs: f64,
}

impl Default for NoiseMixSpec {
    fn default() -> Self {
        Self { snr_db: (0.0, 15.0), insertion_period_secs: 3.0, peak_target: 0.95, gain: (0.3, 1.0), crop_secs: 0.36 }
    }
}

impl NoiseMixSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.snr_db;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config("snr range must satisfy lo <= hi".into()));
        }
        if !(self.peak_target > 0.0 && self.peak_target <= 1.0) {
            return Err(Error::Config("peak target must be in (0, 1]".into()));
        }
        let (glo, ghi) = self.gain;
        if !(glo > 0.0 && glo <= ghi && ghi <= 1.0) {
            return Err(Error::Config("gain range must satisfy 0 < lo <= hi <= 1".into()));
        }
        if !(self.crop_secs > 0.0) || !(self.insertion_period_secs > 0.0) {
            return Err(Error::Config("crop and insertion period must be positive".into()));
        }
        Ok(())
    }

    pub fn crop_len(&self, sample_rate: u32) -> usize {
        (self.crop_secs * sample_rate as f64).round() as usize
    }
}

/// Scales `noise` so the clean-to-noise power ratio is `snr_db` and adds it.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    Ok(add_noise(clean, noise, snr_db)?.0)
}

/// [`mix_at_snr`] that also returns the noise amplitude scale.
pub fn add_noise(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<(Waveform, f64)> {
    if clean.len() != noise.len() {
        return Err(Error::LengthMismatch { left: clean.len(), right: noise.len() });
    }
    let pc = clean.power();
    let pn = noise.power();
    if pc == 0.0 {
        return Err(Error::ZeroPower("clean"));
    }
    if pn == 0.0 {
        return Err(Error::ZeroPower("noise"));
    }
    let scale = (pc / pn / 10f64.powf(snr_db / 10.0)).sqrt();
    let mixed = clean.samples().iter().zip(noise.samples()).map(|(c, n)| c + scale * n).collect();
    Ok((Waveform::new(mixed, clean.sample_rate())?, scale))
}

/// A training pair: network input and clean target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Waveform,
    pub target: Waveform,
    /// Crop start within the clean clip.
    pub start: usize,
    /// Normalization × gain applied to the clean fragment.
    pub gain: f64,
    /// Mixing SNR, when noise was added.
    pub snr_db: Option<f64>,
}

/// Noise for `[start, start + len)` of a clip: an independent segment of the
/// (looped) noise recording is drawn for every insertion period.
fn noise_track(noise: &Waveform, start: usize, len: usize, period: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = noise.len();
    let src = noise.samples();
    let first = start / period;
    let last = (start + len - 1) / period;
    let offsets: Vec<usize> = (first..=last).map(|_| rng.random_range(0..n)).collect();
    (start..start + len)
        .map(|i| {
            let block = i / period - first;
            src[(offsets[block] + i % period) % n]
        })
        .collect()
}

/// Random crop, peak normalization and gain of `clean`, with optional noise
/// mixed in at a random SNR. The target gets the same normalization and
/// gain, so `input − target` is exactly the scaled noise.
pub fn prepare_example(clean: &Waveform, noise: Option<&Waveform>, spec: &NoiseMixSpec, seed: u64) -> Result<Example> {
    spec.validate()?;
    let sr = clean.sample_rate();
    let crop = spec.crop_len(sr);
    if clean.len() < crop {
        return Err(Error::InputTooShort(format!("clip has {} samples, crop needs {crop}", clean.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..=clean.len() - crop);
    let fragment = clean.slice(start, crop)?;
    let peak = fragment.peak();
    let gain_draw = rng.random_range(spec.gain.0..=spec.gain.1);
    let gain = if peak > 0.0 { spec.peak_target / peak * gain_draw } else { 1.0 };
    let target = fragment.scaled(gain);
    let (input, snr_db) = match noise {
        Some(noise) if target.power() > 0.0 => {
            if noise.sample_rate() != sr {
                return Err(Error::Config(format!(
                    "noise sample rate {} differs from clean {sr}",
                    noise.sample_rate()
                )));
            }
            let period = (spec.insertion_period_secs * sr as f64).round().max(1.0) as usize;
            let track = Waveform::new(noise_track(noise, start, crop, period, &mut rng), sr)?;
            let snr = rng.random_range(spec.snr_db.0..=spec.snr_db.1);
            (mix_at_snr(&target, &track, snr)?, Some(snr))
        }
        _ => (target.clone(), None),
    };
    Ok(Example { input, target, start, gain, snr_db })
}

/// Clean clips and noise recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub clean: Vec<Waveform>,
    pub noise: Vec<Waveform>,
}

const CLEAN_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Voiced-like harmonic clip: f0 in [80, 300] Hz, 3 to 6 harmonics with
/// decaying weights, and a slow amplitude envelope.
fn harmonic_clip(len: usize, sr: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f0 = rng.random_range(80.0..=300.0);
    let harmonics = rng.random_range(3..=6usize);
    let amps: Vec<f64> = (1..=harmonics).map(|h| rng.random_range(0.5..1.0) / h as f64).collect();
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let env_rate = rng.random_range(0.5..3.0);
    let env_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let norm: f64 = amps.iter().sum();
    (0..len)
        .map(|n| {
            let t = n as f64 / sr as f64;
            let env = 0.6 + 0.4 * (std::f64::consts::TAU * env_rate * t + env_phase).sin();
            let s: f64 = amps
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(h, (a, p))| a * (std::f64::consts::TAU * f0 * (h + 1) as f64 * t + p).sin())
                .sum();
            0.9 * env * s / norm
        })
        .collect()
}

/// White noise through a one-pole low-pass with a random cutoff, peak
/// normalized to a random level ≤ 1.
fn noise_clip(len: usize, sr: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cutoff = rng.random_range(500.0..(sr as f64 / 2.0));
    let a = (-std::f64::consts::TAU * cutoff / sr as f64).exp();
    let mut y = 0.0;
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let x: f64 = rng.random_range(-1.0..1.0);
            y = a * y + (1.0 - a) * x;
            y
        })
        .collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let level = rng.random_range(0.3..0.9);
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= level / peak);
    }
    out
}

/// Deterministic synthetic corpus standing in for speech and noise data.
pub fn synth_corpus(n_clips: usize, duration_secs: f64, sample_rate: u32, seed: u64) -> Result<Corpus> {
    if n_clips == 0 {
        return Err(Error::Empty("corpus must have at least one clip"));
    }
    let len = (duration_secs * sample_rate as f64).round() as usize;
    if len == 0 {
        return Err(Error::Empty("clip duration"));
    }
    let mut crng = stream_rng(seed, CLEAN_STREAM);
    let mut nrng = stream_rng(seed, NOISE_STREAM);
    let clean = (0..n_clips)
        .map(|_| Waveform::new(harmonic_clip(len, sample_rate, &mut crng), sample_rate))
        .collect::<Result<Vec<_>>>()?;
    let noise = (0..n_clips)
        .map(|_| Waveform::new(noise_clip(len, sample_rate, &mut nrng), sample_rate))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { clean, noise })
}

/// One manifest record.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub noise: Option<PathBuf>,
    pub seed: u64,
}

/// Parses `clean<TAB>noise|-<TAB>seed` lines; blank lines and `#` comments
/// are skipped. Relative paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Manifest {
                line: line_no,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let resolve = |p: &str| {
            let p = Path::new(p.trim());
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let noise = match fields[1].trim() {
            "-" => None,
            p => Some(resolve(p)),
        };
        let seed =
            fields[2].trim().parse().map_err(|e| Error::Manifest { line: line_no, msg: format!("bad seed: {e}") })?;
        out.push(ManifestEntry { clean: resolve(fields[0]), noise, seed });
    }
    Ok(out)
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| {
            let noise = e.noise.as_ref().map_or("-".to_string(), |p| p.display().to_string());
            format!("{}\t{}\t{}\n", e.clean.display(), noise, e.seed)
        })
        .collect()
}

/// Loads every file a manifest references. Noise files are collected
/// without duplicates in order of first appearance.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base)?;
    if entries.is_empty() {
        return Err(Error::Empty("manifest has no entries"));
    }
    let mut clean = Vec::with_capacity(entries.len());
    let mut noise_paths: Vec<&PathBuf> = Vec::new();
    for e in &entries {
        clean.push(load_wav(&e.clean)?);
        if let Some(n) = &e.noise {
            if !noise_paths.contains(&n) {
                noise_paths.push(n);
            }
        }
    }
    let noise = noise_paths.into_iter().map(load_wav).collect::<Result<Vec<_>>>()?;
    Ok(Corpus { clean, noise })
}

/// Batch composition: depends only on `(seed, step)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    /// Probability that an example gets noise mixed in.
    pub noisy_fraction: f64,
    pub mix: NoiseMixSpec,
}

impl BatchPlan {
    /// Examples of batch `step`.
    pub fn batch(&self, corpus: &Corpus, step: usize) -> Result<Vec<Example>> {
        if corpus.clean.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_ba7c);
        rng.set_stream(step as u64 + 1);
        (0..self.batch_size)
            .map(|_| {
                let clip = &corpus.clean[rng.random_range(0..corpus.clean.len())];
                let noisy = !corpus.noise.is_empty() && rng.random_bool(self.noisy_fraction.clamp(0.0, 1.0));
                let noise = if noisy { Some(&corpus.noise[rng.random_range(0..corpus.noise.len())]) } else { None };
                let seed = rng.random::<u64>();
                prepare_example(clip, noise, &self.mix, seed)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, f: f64) -> Waveform {
        Waveform::new((0..len).map(|n| (n as f64 * f).sin() * 0.5).collect(), 24000).unwrap()
    }

    #[test]
    fn mixing_hits_the_requested_snr() {
        let clean = tone(4000, 0.01);
        let noise = tone(4000, 0.37);
        for snr in [0.0, 5.0, 10.0, 15.0] {
            let (mixed, scale) = add_noise(&clean, &noise, snr).unwrap();
            let added: Vec<f64> = mixed.samples().iter().zip(clean.samples()).map(|(m, c)| m - c).collect();
            let pn = added.iter().map(|v| v * v).sum::<f64>() / added.len() as f64;
            let got = 10.0 * (clean.power() / pn).log10();
            assert!((10f64.powf((got - snr) / 10.0) - 1.0).abs() < 1e-6);
            if snr == 15.0 {
                let expect = 10f64.powf(-15.0 / 20.0) * (clean.power().sqrt() / noise.power().sqrt());
                assert!((scale - expect).abs() < 1e-12);
            }
        }
        assert!(matches!(
            mix_at_snr(&clean, &Waveform::zeros(4000, 24000).unwrap(), 0.0),
            Err(Error::ZeroPower("noise"))
        ));
    }

    #[test]
    fn prepared_pair_shapes_and_bookkeeping() {
        let corpus = synth_corpus(2, 1.0, 24000, 3).unwrap();
        let spec = NoiseMixSpec::default();
        let ex = prepare_example(&corpus.clean[0], Some(&corpus.noise[1]), &spec, 42).unwrap();
        assert_eq!(ex.input.len(), 8640);
        assert_eq!(ex.target.len(), 8640);
        let peak = ex.target.peak();
        assert!((0.285 - 1e-12..=0.95 + 1e-12).contains(&peak), "{peak}");
        let again = prepare_example(&corpus.clean[0], Some(&corpus.noise[1]), &spec, 42).unwrap();
        assert_eq!(ex, again);
        let clean_only = prepare_example(&corpus.clean[0], None, &spec, 42).unwrap();
        assert_eq!(clean_only.input, clean_only.target);
        assert!(prepare_example(&tone(100, 0.1), None, &spec, 0).is_err());
    }

    #[test]
    fn noise_is_redrawn_at_period_boundaries() {
        let noise = Waveform::new((0..1000).map(|i| i as f64).collect(), 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let track = noise_track(&noise, 250, 100, 300, &mut rng);
        // samples 250..300 and 300..350 come from independent offsets
        for w in track[..50].windows(2) {
            assert_eq!((w[1] - w[0]).rem_euclid(1000.0), 1.0);
        }
        for w in track[50..].windows(2) {
            assert_eq!((w[1] - w[0]).rem_euclid(1000.0), 1.0);
        }
    }

    #[test]
    fn synthetic_corpus_contract() {
        let c = synth_corpus(10, 1.0, 24000, 7).unwrap();
        assert_eq!(c.clean.len(), 10);
        assert!(c.clean.iter().chain(&c.noise).all(|w| w.len() == 24000 && w.peak() <= 1.0));
        assert_eq!(c, synth_corpus(10, 1.0, 24000, 7).unwrap());
        assert_ne!(c, synth_corpus(10, 1.0, 24000, 8).unwrap());
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let base = Path::new("/data");
        let text = "a.wav\t-\t1\n# comment\n\n/abs/b.wav\tn.wav\t22\n";
        let m = parse_manifest(text, base).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0], ManifestEntry { clean: "/data/a.wav".into(), noise: None, seed: 1 });
        assert_eq!(m[1].noise.as_deref(), Some(Path::new("/data/n.wav")));
        assert_eq!(parse_manifest(&write_manifest(&m), base).unwrap(), m);
        assert!(matches!(parse_manifest("a.wav\t-\n", base), Err(Error::Manifest { line: 1, .. })));
        assert!(matches!(parse_manifest("a\t-\tx\n", base), Err(Error::Manifest { .. })));
    }

    #[test]
    fn batches_depend_only_on_seed_and_step() {
        let corpus = synth_corpus(4, 0.5, 24000, 1).unwrap();
        let plan = BatchPlan { batch_size: 3, seed: 9, noisy_fraction: 0.5, mix: NoiseMixSpec::default() };
        assert_eq!(plan.batch(&corpus, 5).unwrap(), plan.batch(&corpus, 5).unwrap());
        assert_ne!(plan.batch(&corpus, 5).unwrap(), plan.batch(&corpus, 6).unwrap());
    }
}
