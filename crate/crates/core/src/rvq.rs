//! Residual vector quantizer.
//!
//! Stage `k` quantizes what stages `0..k` left over. Each stage keeps EMA
//! statistics so codewords follow the mean of the residuals assigned to
//! them; codewords whose usage decays away are re-seeded from the batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LatentSequence;
use crate::params::{digest_named, HostTensor, ParameterDigest};

/// Usage below which a codeword counts as dead and is re-seeded.
pub const DEAD_CODEWORD_COUNT: f64 = 1e-3;
const COUNT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub num_quantizers: usize,
    pub codebook_size: usize,
    pub ema_decay: f64,
    pub dropout: bool,
    /// Weight of the commitment term ‖z − sg(q)‖²; zero disables it.
    pub commitment_weight: f64,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self { num_quantizers: 24, codebook_size: 1024, ema_decay: 0.99, dropout: true, commitment_weight: 0.0 }
    }
}

impl QuantizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_quantizers == 0 || self.num_quantizers > 255 {
            return Err(Error::Config("num_quantizers must be in 1..=255".into()));
        }
        if self.codebook_size < 2 || !self.codebook_size.is_power_of_two() || self.codebook_size > 1 << 16 {
            return Err(Error::Config("codebook_size must be a power of two in 2..=65536".into()));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::Config("ema_decay must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn bits_per_index(&self) -> u32 {
        self.codebook_size.trailing_zeros()
    }
}

/// R = Nq · S · log2(N) in bits per second.
pub fn bitrate(num_quantizers: usize, codebook_size: usize, frames_per_second: f64) -> f64 {
    num_quantizers as f64 * frames_per_second * (codebook_size as f64).log2()
}

/// Quantizer indices, `frames × stages` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeFrames {
    pub frames: usize,
    pub stages: usize,
    pub indices: Vec<u32>,
}

impl CodeFrames {
    pub fn new(frames: usize, stages: usize, indices: Vec<u32>) -> Result<Self> {
        if indices.len() != frames * stages {
            return Err(Error::ShapeMismatch(format!(
                "{} indices for {frames} frames x {stages} stages",
                indices.len()
            )));
        }
        Ok(Self { frames, stages, indices })
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        &self.indices[t * self.stages..(t + 1) * self.stages]
    }

    /// The first `k` stages of every frame.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.stages {
            return Err(Error::QuantizerRange { requested: k, available: self.stages });
        }
        let indices = (0..self.frames).flat_map(|t| self.frame(t)[..k].to_vec()).collect();
        Ok(Self { frames: self.frames, stages: k, indices })
    }
}

/// One assignment made during quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub stage: usize,
    pub index: usize,
    pub residual: Vec<f64>,
}

/// Result of quantizing a latent sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub quantized: LatentSequence,
    pub codes: CodeFrames,
    /// Residual entering each stage, `stages × frames × dim`.
    pub stage_inputs: Vec<Vec<f64>>,
}

impl Quantized {
    pub fn assignments(&self) -> Vec<Assignment> {
        let dim = self.quantized.dim;
        let mut out = Vec::with_capacity(self.codes.indices.len());
        for (stage, residuals) in self.stage_inputs.iter().enumerate() {
            for t in 0..self.codes.frames {
                out.push(Assignment {
                    stage,
                    index: self.codes.frame(t)[stage] as usize,
                    residual: residuals[t * dim..(t + 1) * dim].to_vec(),
                });
            }
        }
        out
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..4 {
            let d = x[i] - y[i];
            acc[i] += d * d;
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| (x - y) * (x - y)).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Codewords and EMA statistics for all stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    stages: usize,
    size: usize,
    dim: usize,
    entries: Vec<f64>,
    ema_counts: Vec<f64>,
    ema_sums: Vec<f64>,
}

impl Codebook {
    /// Codebook with every codeword set to zero.
    pub fn zeros(stages: usize, size: usize, dim: usize) -> Result<Self> {
        if stages == 0 || size < 2 || dim == 0 {
            return Err(Error::Config("codebook needs >= 1 stage, >= 2 entries and dim >= 1".into()));
        }
        Ok(Self {
            stages,
            size,
            dim,
            entries: vec![0.0; stages * size * dim],
            ema_counts: vec![1.0; stages * size],
            ema_sums: vec![0.0; stages * size * dim],
        })
    }

    /// Codebook from explicit entries `stages × size × dim`; EMA sums start
    /// at the entries with unit counts.
    pub fn from_entries(stages: usize, size: usize, dim: usize, entries: Vec<f64>) -> Result<Self> {
        let mut cb = Self::zeros(stages, size, dim)?;
        if entries.len() != stages * size * dim {
            return Err(Error::ShapeMismatch(format!("{} values for a {stages}x{size}x{dim} codebook", entries.len())));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("codebook entries must be finite".into()));
        }
        cb.ema_sums.clone_from(&entries);
        cb.entries = entries;
        Ok(cb)
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codeword(&self, stage: usize, index: usize) -> &[f64] {
        let o = (stage * self.size + index) * self.dim;
        &self.entries[o..o + self.dim]
    }

    fn codeword_mut(&mut self, stage: usize, index: usize) -> &mut [f64] {
        let o = (stage * self.size + index) * self.dim;
        &mut self.entries[o..o + self.dim]
    }

    pub fn ema_count(&self, stage: usize, index: usize) -> f64 {
        self.ema_counts[stage * self.size + index]
    }

    /// Nearest codeword of one stage; ties go to the lowest index.
    pub fn nearest(&self, stage: usize, v: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for j in 0..self.size {
            let d = sq_dist(v, self.codeword(stage, j));
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }

    fn check_active(&self, nq_active: usize) -> Result<()> {
        if nq_active == 0 || nq_active > self.stages {
            return Err(Error::QuantizerRange { requested: nq_active, available: self.stages });
        }
        Ok(())
    }

    /// Greedy residual quantization with the first `nq_active` stages.
    pub fn quantize(&self, z: &LatentSequence, nq_active: usize) -> Result<Quantized> {
        self.check_active(nq_active)?;
        if z.dim != self.dim {
            return Err(Error::ShapeMismatch(format!("latent dim {} vs codebook dim {}", z.dim, self.dim)));
        }
        let mut residual = z.data.clone();
        let mut quantized = vec![0.0; z.data.len()];
        let mut indices = vec![0u32; z.frames * nq_active];
        let mut stage_inputs = Vec::with_capacity(nq_active);
        for k in 0..nq_active {
            stage_inputs.push(residual.clone());
            for t in 0..z.frames {
                let r = &mut residual[t * self.dim..(t + 1) * self.dim];
                let (j, _) = self.nearest(k, r);
                indices[t * nq_active + k] = j as u32;
                let c = self.codeword(k, j);
                let q = &mut quantized[t * self.dim..(t + 1) * self.dim];
                for i in 0..self.dim {
                    r[i] -= c[i];
                    q[i] += c[i];
                }
            }
        }
        Ok(Quantized {
            quantized: LatentSequence { frames: z.frames, dim: z.dim, data: quantized },
            codes: CodeFrames { frames: z.frames, stages: nq_active, indices },
            stage_inputs,
        })
    }

    /// Sum of the referenced codewords per frame.
    pub fn dequantize(&self, codes: &CodeFrames) -> Result<LatentSequence> {
        self.check_active(codes.stages)?;
        let mut data = vec![0.0; codes.frames * self.dim];
        for t in 0..codes.frames {
            let out = &mut data[t * self.dim..(t + 1) * self.dim];
            for (k, &j) in codes.frame(t).iter().enumerate() {
                let j = j as usize;
                if j >= self.size {
                    return Err(Error::IndexOutOfRange { index: j, size: self.size });
                }
                for (o, c) in out.iter_mut().zip(self.codeword(k, j)) {
                    *o += c;
                }
            }
        }
        LatentSequence::new(codes.frames, self.dim, data)
    }

    /// EMA step over one batch of assignments. Counts and sums of every
    /// codeword decay; only assigned codewords are recomputed, so for the
    /// others the sum/count ratio and the codeword itself stay put.
    pub fn ema_update(&mut self, assignments: &[Assignment], decay: f64) -> Result<()> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config("ema decay must be in [0, 1)".into()));
        }
        let mut batch_counts = vec![0.0; self.stages * self.size];
        let mut batch_sums = vec![0.0; self.stages * self.size * self.dim];
        for a in assignments {
            if a.stage >= self.stages || a.index >= self.size {
                return Err(Error::IndexOutOfRange { index: a.index, size: self.size });
            }
            if a.residual.len() != self.dim {
                return Err(Error::ShapeMismatch("assignment residual has wrong dim".into()));
            }
            let slot = a.stage * self.size + a.index;
            batch_counts[slot] += 1.0;
            for (s, r) in batch_sums[slot * self.dim..(slot + 1) * self.dim].iter_mut().zip(&a.residual) {
                *s += r;
            }
        }
        for slot in 0..self.stages * self.size {
            self.ema_counts[slot] = decay * self.ema_counts[slot] + (1.0 - decay) * batch_counts[slot];
            let sums = &mut self.ema_sums[slot * self.dim..(slot + 1) * self.dim];
            for (s, b) in sums.iter_mut().zip(&batch_sums[slot * self.dim..(slot + 1) * self.dim]) {
                *s = decay * *s + (1.0 - decay) * b;
            }
            if batch_counts[slot] > 0.0 {
                let n = self.ema_counts[slot].max(COUNT_FLOOR);
                let (stage, index) = (slot / self.size, slot % self.size);
                let new: Vec<f64> =
                    self.ema_sums[slot * self.dim..(slot + 1) * self.dim].iter().map(|s| s / n).collect();
                self.codeword_mut(stage, index).copy_from_slice(&new);
            }
        }
        Ok(())
    }

    /// Re-seeds codewords whose EMA count fell below
    /// [`DEAD_CODEWORD_COUNT`] with random residuals from the same stage.
    /// Returns how many were replaced.
    pub fn reseed_dead(&mut self, assignments: &[Assignment], rng: &mut ChaCha8Rng) -> usize {
        let mut replaced = 0;
        for stage in 0..self.stages {
            let pool: Vec<&Assignment> = assignments.iter().filter(|a| a.stage == stage).collect();
            if pool.is_empty() {
                continue;
            }
            for index in 0..self.size {
                let slot = stage * self.size + index;
                if self.ema_counts[slot] < DEAD_CODEWORD_COUNT {
                    let pick = &pool[rng.random_range(0..pool.len())].residual;
                    self.codeword_mut(stage, index).copy_from_slice(pick);
                    self.ema_counts[slot] = 1.0;
                    self.ema_sums[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(pick);
                    replaced += 1;
                }
            }
        }
        replaced
    }

    /// k-means++ seeding plus `lloyd_iters` Lloyd iterations per stage,
    /// stage 0 on `vectors` and later stages on the residuals left by the
    /// stages before.
    pub fn kmeans_init(&mut self, vectors: &[Vec<f64>], seed: u64, lloyd_iters: usize) -> Result<()> {
        if vectors.len() < self.size {
            return Err(Error::BatchTooSmall { needed: self.size, got: vectors.len() });
        }
        if vectors.iter().any(|v| v.len() != self.dim) {
            return Err(Error::ShapeMismatch("k-means input has wrong dim".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut residuals: Vec<Vec<f64>> = vectors.to_vec();
        for stage in 0..self.stages {
            let centers = kmeans(&residuals, self.size, lloyd_iters, &mut rng);
            for (j, c) in centers.iter().enumerate() {
                self.codeword_mut(stage, j).copy_from_slice(c);
                let slot = stage * self.size + j;
                self.ema_counts[slot] = 1.0;
                self.ema_sums[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(c);
            }
            for r in residuals.iter_mut() {
                let (j, _) = self.nearest(stage, r);
                for (x, c) in r.iter_mut().zip(self.codeword(stage, j)) {
                    *x -= c;
                }
            }
        }
        Ok(())
    }

    pub fn to_host(&self) -> Vec<(&'static str, HostTensor)> {
        vec![
            ("entries", HostTensor::from_f64(vec![self.stages, self.size, self.dim], self.entries.clone())),
            ("ema_counts", HostTensor::from_f64(vec![self.stages, self.size], self.ema_counts.clone())),
            ("ema_sums", HostTensor::from_f64(vec![self.stages, self.size, self.dim], self.ema_sums.clone())),
        ]
    }

    pub fn from_host(entries: &HostTensor, counts: &HostTensor, sums: &HostTensor) -> Result<Self> {
        let [stages, size, dim] = entries.shape[..] else {
            return Err(Error::ShapeMismatch("codebook entries must be 3-d".into()));
        };
        if counts.shape != [stages, size] || sums.shape != entries.shape {
            return Err(Error::ShapeMismatch("codebook statistics do not match entries".into()));
        }
        let mut cb = Self::from_entries(stages, size, dim, entries.as_f64())?;
        cb.ema_counts = counts.as_f64();
        cb.ema_sums = sums.as_f64();
        if cb.ema_counts.iter().any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(Error::Config("negative codebook count".into()));
        }
        Ok(cb)
    }

    /// Digest of entries and EMA statistics.
    pub fn digest(&self) -> ParameterDigest {
        let mut host = self.to_host();
        host.sort_by_key(|(k, _)| *k);
        digest_named(host.iter().map(|(k, v)| (*k, v)))
    }
}

/// k-means++ seeding followed by Lloyd iterations. With as many distinct
/// points as clusters the result is a permutation of the points.
fn kmeans(points: &[Vec<f64>], k: usize, iters: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().enumerate().filter(|(i, _)| !chosen[*i]).map(|(_, d)| d).sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if chosen[i] || d == 0.0 {
                    continue;
                }
                if u < d {
                    pick = Some(i);
                    break;
                }
                u -= d;
            }
            // rounding can run past the end; take the last candidate
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| !chosen[i] && d2[i] > 0.0).expect("positive mass"))
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(points[pick].clone());
        let c = centers.last().expect("just pushed");
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    let dim = points[0].len();
    for _ in 0..iters {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centers.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            counts[best.0] += 1;
            for (s, x) in sums[best.0].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    centers
}
