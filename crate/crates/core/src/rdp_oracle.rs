//! Exhaustive rate-distortion-perception analysis of small scalar sources
//! observed through independent additive noise.
//!
//! Rate is a codeword budget `M`: an encoder is any deterministic map from
//! the support of the noisy observation `X' = X + N` to `{0, …, M−1}`. For
//! each encoder the oracle computes
//!
//! * `d_inf`: the MSE of the conditional-mean decoder `m_z = E[X | Z = z]`
//!   (no perception constraint);
//! * `d_0`: the least MSE of a stochastic decoder whose output law equals
//!   `p_X`, which is `E[Var(X | Z)] + W₂²(law of m_Z, p_X)` with the
//!   transport solved exactly by the monotone coupling;
//! * `d_ps`: the MSE of sampling the output from `p(X | X_mse)`.
//!
//! All encoders are enumerated, so the sets of optimal encoders under each
//! criterion are exact up to a 1e-12 tie tolerance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distortions within this distance of the minimum count as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;
/// Largest noisy-observation support the oracle accepts.
pub const MAX_OBSERVATIONS: usize = 16;
/// Largest number of encoders enumerated for one instance.
pub const MAX_ENCODERS: u64 = 1_000_000;

const MERGE_TOLERANCE: f64 = 1e-12;

/// Finite scalar distribution on sorted distinct values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Pmf {
    /// Sorts by value; rejects duplicates, negative mass and totals away
    /// from one by more than 1e-12.
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(Error::InvalidDistribution(
                "values and probabilities must be non-empty and of equal length".into(),
            ));
        }
        if values.iter().chain(&probs).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite entry".into()));
        }
        if probs.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidDistribution("negative probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        let mut pairs: Vec<(f64, f64)> = values.into_iter().zip(probs).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidDistribution("duplicate values".into()));
        }
        let (values, probs) = pairs.into_iter().unzip();
        Ok(Self { values, probs })
    }

    pub fn point(value: f64) -> Self {
        Self { values: vec![value], probs: vec![1.0] }
    }

    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }
}

pub type DiscreteSource = Pmf;
pub type AdditiveNoise = Pmf;

/// Source, independent noise and codeword budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpInstance {
    pub source: DiscreteSource,
    pub noise: AdditiveNoise,
    pub codewords: usize,
}

/// Deterministic encoder: codeword of every observation (in sorted order).
pub type EncoderMap = Vec<usize>;

/// Joint law of `X` and `X'` for an instance.
#[derive(Debug, Clone)]
struct Joint {
    x: Vec<f64>,
    px: Vec<f64>,
    obs: Vec<f64>,
    /// `p[i][o]` = P(X = x_i, X' = obs_o).
    p: Vec<Vec<f64>>,
}

impl RdpInstance {
    pub fn new(source: DiscreteSource, noise: AdditiveNoise, codewords: usize) -> Result<Self> {
        let inst = Self { source, noise, codewords };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        // re-run the distribution checks on deserialized data
        Pmf::new(self.source.values.clone(), self.source.probs.clone())?;
        Pmf::new(self.noise.values.clone(), self.noise.probs.clone())?;
        let n = self.observations().len();
        if n > MAX_OBSERVATIONS {
            return Err(Error::TooLarge(format!("{n} observation values exceed {MAX_OBSERVATIONS}")));
        }
        if self.codewords == 0 || self.codewords > n {
            return Err(Error::Config(format!("codeword budget {} must be in 1..={n}", self.codewords)));
        }
        Ok(())
    }

    /// Sorted distinct values of `X + N`.
    pub fn observations(&self) -> Vec<f64> {
        let mut sums: Vec<f64> =
            self.source.values.iter().flat_map(|x| self.noise.values.iter().map(move |n| x + n)).collect();
        sums.sort_by(f64::total_cmp);
        sums.dedup_by(|a, b| (*a - *b).abs() <= MERGE_TOLERANCE);
        sums
    }

    fn joint(&self) -> Joint {
        let obs = self.observations();
        let locate = |s: f64| obs.iter().position(|o| (o - s).abs() <= MERGE_TOLERANCE).expect("sum is an observation");
        let mut p = vec![vec![0.0; obs.len()]; self.source.len()];
        for (i, (&x, &px)) in self.source.values.iter().zip(&self.source.probs).enumerate() {
            for (&n, &pn) in self.noise.values.iter().zip(&self.noise.probs) {
                p[i][locate(x + n)] += px * pn;
            }
        }
        Joint { x: self.source.values.clone(), px: self.source.probs.clone(), obs, p }
    }

    /// Number of deterministic encoders, `M^|support(X')|`.
    pub fn encoder_count(&self) -> Result<u64> {
        let n = self.observations().len() as u32;
        (self.codewords as u64)
            .checked_pow(n)
            .filter(|&c| c <= MAX_ENCODERS)
            .ok_or_else(|| Error::TooLarge(format!("{}^{n} encoders exceed {MAX_ENCODERS}", self.codewords)))
    }

    fn check_encoder(&self, encoder: &[usize]) -> Result<()> {
        let n = self.observations().len();
        if encoder.len() != n || encoder.iter().any(|&z| z >= self.codewords) {
            return Err(Error::Config(format!("encoder must map {n} observations into 0..{}", self.codewords)));
        }
        Ok(())
    }
}

/// Posterior of `X` given one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub observation: f64,
    pub prob: f64,
    /// P(X = x_i | X' = observation), aligned with the source values.
    pub posterior: Vec<f64>,
    /// E[X | X' = observation].
    pub mean: f64,
}

/// Bayes posterior for every observation; the means form `X_deN`.
pub fn posterior_denoise(inst: &RdpInstance) -> Result<Vec<Posterior>> {
    inst.validate()?;
    let j = inst.joint();
    Ok((0..j.obs.len())
        .map(|o| {
            let prob: f64 = j.p.iter().map(|row| row[o]).sum();
            let posterior: Vec<f64> = j.p.iter().map(|row| row[o] / prob).collect();
            let mean = posterior.iter().zip(&j.x).map(|(q, x)| q * x).sum();
            Posterior { observation: j.obs[o], prob, posterior, mean }
        })
        .collect())
}

/// Per-codeword statistics of an encoder.
#[derive(Debug, Clone, PartialEq)]
struct Cells {
    /// P(X = x_i, Z = z) as `mass[z][i]`.
    mass: Vec<Vec<f64>>,
    pz: Vec<f64>,
    means: Vec<f64>,
}

fn cells(j: &Joint, encoder: &[usize], m: usize) -> Cells {
    let mut mass = vec![vec![0.0; j.x.len()]; m];
    for (o, &z) in encoder.iter().enumerate() {
        for (cell, row) in mass[z].iter_mut().zip(&j.p) {
            *cell += row[o];
        }
    }
    let pz: Vec<f64> = mass.iter().map(|r| r.iter().sum()).collect();
    let means = mass
        .iter()
        .zip(&pz)
        .map(|(r, &p)| if p > 0.0 { r.iter().zip(&j.x).map(|(q, x)| q * x).sum::<f64>() / p } else { 0.0 })
        .collect();
    Cells { mass, pz, means }
}

fn mmse(j: &Joint, c: &Cells) -> f64 {
    c.mass.iter().zip(&c.means).map(|(r, m)| r.iter().zip(&j.x).map(|(q, x)| q * (x - m).powi(2)).sum::<f64>()).sum()
}

/// Optimal transport plan between two scalar laws under squared cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub cost: f64,
    /// `(index into a, index into b, mass)`.
    pub plan: Vec<(usize, usize, f64)>,
}

/// Monotone (quantile) coupling of two discrete laws given as
/// `(value, mass)` atoms in any order; exact for squared cost in 1-D.
pub fn monotone_coupling(a: &[(f64, f64)], b: &[(f64, f64)]) -> Coupling {
    let order = |v: &[(f64, f64)]| {
        let mut idx: Vec<usize> = (0..v.len()).filter(|&i| v[i].1 > 0.0).collect();
        idx.sort_by(|&p, &q| v[p].0.total_cmp(&v[q].0).then(p.cmp(&q)));
        idx
    };
    let (oa, ob) = (order(a), order(b));
    let mut plan = Vec::new();
    let mut cost = 0.0;
    let (mut i, mut k) = (0, 0);
    let (mut ra, mut rb) = (oa.first().map_or(0.0, |&p| a[p].1), ob.first().map_or(0.0, |&q| b[q].1));
    while i < oa.len() && k < ob.len() {
        let m = ra.min(rb);
        let (p, q) = (oa[i], ob[k]);
        if m > 0.0 {
            plan.push((p, q, m));
            cost += m * (a[p].0 - b[q].0).powi(2);
        }
        ra -= m;
        rb -= m;
        // leftovers of order 1e-16 come from rounding in the totals
        if ra <= 1e-15 {
            i += 1;
            ra = oa.get(i).map_or(0.0, |&p| a[p].1);
        }
        if rb <= 1e-15 {
            k += 1;
            rb = ob.get(k).map_or(0.0, |&q| b[q].1);
        }
    }
    Coupling { cost, plan }
}

/// Perfect-perception decoding of one encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionOptimum {
    pub d_inf: f64,
    /// W₂² between the law of `m_Z` and `p_X`.
    pub w2_squared: f64,
    pub d_0: f64,
    /// P(X̂ = x_i | Z = z) as `kernel[z][i]`; rows of unused codewords are
    /// the source law.
    pub kernel: Vec<Vec<f64>>,
    /// Law of the decoder output, aligned with the source values.
    pub output_law: Vec<f64>,
}

/// Least distortion under `p_X̂ = p_X` for a fixed encoder.
pub fn perception_opt_distortion(inst: &RdpInstance, encoder: &[usize]) -> Result<PerceptionOptimum> {
    inst.validate()?;
    inst.check_encoder(encoder)?;
    let j = inst.joint();
    let c = cells(&j, encoder, inst.codewords);
    Ok(perception_from_cells(&j, &c))
}

fn perception_from_cells(j: &Joint, c: &Cells) -> PerceptionOptimum {
    let d_inf = mmse(j, c);
    let a: Vec<(f64, f64)> = c.means.iter().copied().zip(c.pz.iter().copied()).collect();
    let b: Vec<(f64, f64)> = j.x.iter().copied().zip(j.px.iter().copied()).collect();
    let coupling = monotone_coupling(&a, &b);
    let mut kernel = vec![vec![0.0; j.x.len()]; c.pz.len()];
    for &(z, i, m) in &coupling.plan {
        kernel[z][i] += m / c.pz[z];
    }
    for (z, row) in kernel.iter_mut().enumerate() {
        if c.pz[z] == 0.0 {
            row.clone_from(&j.px);
        }
    }
    let output_law = (0..j.x.len()).map(|i| kernel.iter().zip(&c.pz).map(|(row, p)| row[i] * p).sum()).collect();
    PerceptionOptimum { d_inf, w2_squared: coupling.cost, d_0: d_inf + coupling.cost, kernel, output_law }
}

/// Both sides of `E‖X − X_mse‖² = E‖X − X_deN‖² + E‖X_deN − X_mse‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub lhs: f64,
    pub denoise_term: f64,
    pub codec_term: f64,
    pub rhs: f64,
    pub residual: f64,
}

pub fn check_decomposition(inst: &RdpInstance, encoder: &[usize]) -> Result<Decomposition> {
    check_decomposition_with_fault(inst, encoder, 0.0)
}

/// [`check_decomposition`] with `fault` added to the right-hand side, for
/// exercising failure reporting.
pub fn check_decomposition_with_fault(inst: &RdpInstance, encoder: &[usize], fault: f64) -> Result<Decomposition> {
    inst.validate()?;
    inst.check_encoder(encoder)?;
    let j = inst.joint();
    let c = cells(&j, encoder, inst.codewords);
    let posts = posterior_denoise(inst)?;
    let (mut lhs, mut denoise_term, mut codec_term) = (0.0, 0.0, 0.0);
    for (i, &x) in j.x.iter().enumerate() {
        for (o, post) in posts.iter().enumerate() {
            let p = j.p[i][o];
            if p == 0.0 {
                continue;
            }
            let x_mse = c.means[encoder[o]];
            lhs += p * (x - x_mse).powi(2);
            denoise_term += p * (x - post.mean).powi(2);
            codec_term += p * (post.mean - x_mse).powi(2);
        }
    }
    let rhs = denoise_term + codec_term + fault;
    Ok(Decomposition { lhs, denoise_term, codec_term, rhs, residual: (lhs - rhs).abs() })
}

/// Posterior-sampling decoder: X̂ drawn from p(X | X_mse).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSampling {
    pub d_inf: f64,
    pub d_ps: f64,
    pub d_0: f64,
    /// max |p_{X̂,X_mse} − p_{X,X_mse}| over the joint table.
    pub joint_residual: f64,
    /// max |p_X̂ − p_X|.
    pub marginal_residual: f64,
    /// `d_ps − d_0`, never negative.
    pub gap: f64,
}

pub fn posterior_sampling_check(inst: &RdpInstance, encoder: &[usize]) -> Result<PosteriorSampling> {
    inst.validate()?;
    inst.check_encoder(encoder)?;
    let j = inst.joint();
    let c = cells(&j, encoder, inst.codewords);
    let opt = perception_from_cells(&j, &c);

    // classes of equal X_mse value
    let mut classes: Vec<(f64, Vec<f64>)> = Vec::new();
    for (z, row) in c.mass.iter().enumerate() {
        if c.pz[z] == 0.0 {
            continue;
        }
        match classes.iter_mut().find(|(m, _)| (m - c.means[z]).abs() <= MERGE_TOLERANCE) {
            Some((_, acc)) => acc.iter_mut().zip(row).for_each(|(a, r)| *a += r),
            None => classes.push((c.means[z], row.clone())),
        }
    }
    let mut d_ps = 0.0;
    let mut joint_residual: f64 = 0.0;
    let mut out_law = vec![0.0; j.x.len()];
    for (_, row) in &classes {
        let pc: f64 = row.iter().sum();
        let cond: Vec<f64> = row.iter().map(|r| r / pc).collect();
        for (a, &xa) in j.x.iter().enumerate() {
            for (b, &xb) in j.x.iter().enumerate() {
                d_ps += pc * cond[a] * cond[b] * (xa - xb).powi(2);
            }
            let sampled = pc * cond[a];
            joint_residual = joint_residual.max((sampled - row[a]).abs());
            out_law[a] += sampled;
        }
    }
    let marginal_residual = out_law.iter().zip(&j.px).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(PosteriorSampling {
        d_inf: opt.d_inf,
        d_ps,
        d_0: opt.d_0,
        joint_residual,
        marginal_residual,
        gap: d_ps - opt.d_0,
    })
}

/// Distortions of one encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderEval {
    pub encoder: EncoderMap,
    pub d_inf: f64,
    pub d_0: f64,
    pub cond_means: Vec<f64>,
}

fn encoder_from_index(mut idx: u64, n: usize, m: usize) -> EncoderMap {
    (0..n)
        .map(|_| {
            let z = (idx % m as u64) as usize;
            idx /= m as u64;
            z
        })
        .collect()
}

/// Evaluates every deterministic encoder.
pub fn evaluate_all(inst: &RdpInstance) -> Result<Vec<EncoderEval>> {
    inst.validate()?;
    let count = inst.encoder_count()?;
    let j = inst.joint();
    let n = j.obs.len();
    Ok((0..count)
        .map(|e| {
            let encoder = encoder_from_index(e, n, inst.codewords);
            let c = cells(&j, &encoder, inst.codewords);
            let opt = perception_from_cells(&j, &c);
            EncoderEval { encoder, d_inf: opt.d_inf, d_0: opt.d_0, cond_means: c.means }
        })
        .collect())
}

/// All encoders attaining the least MSE, with that MSE.
pub fn mmse_codec(inst: &RdpInstance) -> Result<(Vec<EncoderMap>, f64)> {
    let evals = evaluate_all(inst)?;
    let best = evals.iter().map(|e| e.d_inf).fold(f64::INFINITY, f64::min);
    let set = evals.into_iter().filter(|e| e.d_inf <= best + TIE_TOLERANCE).map(|e| e.encoder).collect();
    Ok((set, best))
}

/// Whether every MSE-optimal encoder is also optimal under perfect
/// perception.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub holds: bool,
    pub min_d_inf: f64,
    pub min_d_0: f64,
    /// Indices into `evaluations`.
    pub a_inf: Vec<usize>,
    pub a_0: Vec<usize>,
    /// MSE-optimal encoders that are not perception-optimal.
    pub witnesses: Vec<usize>,
    pub evaluations: Vec<EncoderEval>,
}

pub fn verify_theorem2(inst: &RdpInstance) -> Result<Theorem2Report> {
    let evaluations = evaluate_all(inst)?;
    let min_d_inf = evaluations.iter().map(|e| e.d_inf).fold(f64::INFINITY, f64::min);
    let min_d_0 = evaluations.iter().map(|e| e.d_0).fold(f64::INFINITY, f64::min);
    let a_inf: Vec<usize> =
        (0..evaluations.len()).filter(|&i| evaluations[i].d_inf <= min_d_inf + TIE_TOLERANCE).collect();
    let a_0: Vec<usize> = (0..evaluations.len()).filter(|&i| evaluations[i].d_0 <= min_d_0 + TIE_TOLERANCE).collect();
    let witnesses: Vec<usize> = a_inf.iter().copied().filter(|i| a_0.binary_search(i).is_err()).collect();
    Ok(Theorem2Report { holds: witnesses.is_empty(), min_d_inf, min_d_0, a_inf, a_0, witnesses, evaluations })
}

/// Instance family swept by the theory check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Source values are subsets of these.
    pub base_values: Vec<f64>,
    /// Noise values are subsets of `scale × base_values` for each scale.
    pub noise_scales: Vec<f64>,
    pub max_source_support: usize,
    pub max_noise_support: usize,
    pub max_codewords: usize,
    /// Probabilities are positive multiples of `1 / pmf_denominator`.
    pub pmf_denominator: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            base_values: vec![-1.0, 0.0, 1.0],
            noise_scales: vec![0.5, 1.0],
            max_source_support: 3,
            max_noise_support: 3,
            max_codewords: 3,
            pmf_denominator: 4,
        }
    }
}

/// Positive compositions of `total` into `parts` parts.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return if total >= 1 { vec![vec![total]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in 1..total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn subsets<T: Clone>(items: &[T], k: usize) -> Vec<Vec<T>> {
    if k == 0 {
        return vec![vec![]];
    }
    if items.len() < k {
        return vec![];
    }
    let mut with: Vec<Vec<T>> = subsets(&items[1..], k - 1)
        .into_iter()
        .map(|mut s| {
            s.insert(0, items[0].clone());
            s
        })
        .collect();
    with.extend(subsets(&items[1..], k));
    with
}

fn grid_pmfs(values: &[f64], max_support: usize, denom: usize) -> Vec<Pmf> {
    let mut out = Vec::new();
    for k in 1..=max_support.min(values.len()) {
        for vs in subsets(values, k) {
            for c in compositions(denom, k) {
                let probs = c.iter().map(|&n| n as f64 / denom as f64).collect();
                out.push(Pmf::new(vs.clone(), probs).expect("grid pmf is valid"));
            }
        }
    }
    out
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_values.is_empty() || self.noise_scales.is_empty() || self.pmf_denominator == 0 {
            return Err(Error::Config("grid needs values, noise scales and a pmf step".into()));
        }
        if self.max_source_support == 0 || self.max_noise_support == 0 || self.max_codewords == 0 {
            return Err(Error::Config("grid supports and codeword budget must be positive".into()));
        }
        Ok(())
    }

    /// Every instance of the grid, in a fixed order. Fails if any instance
    /// is beyond exhaustive reach.
    pub fn instances(&self) -> Result<Vec<RdpInstance>> {
        self.validate()?;
        let sources = grid_pmfs(&self.base_values, self.max_source_support, self.pmf_denominator);
        let mut out = Vec::new();
        for &scale in &self.noise_scales {
            let nv: Vec<f64> = self.base_values.iter().map(|v| v * scale).collect();
            let noises = grid_pmfs(&nv, self.max_noise_support, self.pmf_denominator);
            for s in &sources {
                for n in &noises {
                    let probe = RdpInstance { source: s.clone(), noise: n.clone(), codewords: 1 };
                    let support = probe.observations().len();
                    for m in 1..=self.max_codewords.min(support) {
                        let inst = RdpInstance::new(s.clone(), n.clone(), m)?;
                        inst.encoder_count()?;
                        out.push(inst);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Results for one instance of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub index: usize,
    pub instance: RdpInstance,
    pub theorem2_holds: bool,
    pub min_d_inf: f64,
    pub min_d_0: f64,
    /// `d_ps` of the first MSE-optimal encoder.
    pub d_ps: f64,
    /// `d_0` of the first MSE-optimal encoder.
    pub d_0_of_mmse_encoder: f64,
    pub mmse_encoders: usize,
    pub witnesses: Vec<EncoderEval>,
    pub max_decomposition_residual: f64,
    /// d_inf ≤ d_0 ≤ d_ps = 2·d_inf for every MSE-optimal encoder.
    pub endpoints_ok: bool,
    pub max_law_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub grid: GridSpec,
    pub instances: Vec<InstanceResult>,
    pub theorem2_failures: usize,
    pub decomposition_failures: usize,
    pub endpoint_failures: usize,
    pub decomposition_tolerance: f64,
    pub endpoint_tolerance: f64,
}

impl SweepReport {
    pub fn all_passed(&self) -> bool {
        self.theorem2_failures == 0 && self.decomposition_failures == 0 && self.endpoint_failures == 0
    }

    /// One line per instance plus a summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.instances {
            s.push_str(&format!(
                "instance={} M={} d_inf={:.12} d_0={:.12} d_ps={:.12} inclusion={} decomposition_residual={:.3e} endpoints={}\n",
                r.index,
                r.instance.codewords,
                r.min_d_inf,
                r.d_0_of_mmse_encoder,
                r.d_ps,
                if r.theorem2_holds { "holds" } else { "FAILS" },
                r.max_decomposition_residual,
                if r.endpoints_ok { "ok" } else { "FAIL" },
            ));
        }
        s.push_str(&format!(
            "instances={} inclusion_failures={} decomposition_failures={} endpoint_failures={}\n",
            self.instances.len(),
            self.theorem2_failures,
            self.decomposition_failures,
            self.endpoint_failures
        ));
        s
    }
}

/// Options for [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub decomposition_tolerance: f64,
    pub endpoint_tolerance: f64,
    /// Added to the decomposition's right-hand side to exercise failures.
    pub inject_fault: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { decomposition_tolerance: 1e-9, endpoint_tolerance: 1e-9, inject_fault: 0.0 }
    }
}

/// Runs the encoder-inclusion, decomposition and perception endpoint
/// checks over every instance of `grid`.
pub fn sweep(grid: &GridSpec, opts: SweepOptions) -> Result<SweepReport> {
    let instances = grid.instances()?;
    let mut results = Vec::with_capacity(instances.len());
    for (index, inst) in instances.into_iter().enumerate() {
        let t2 = verify_theorem2(&inst)?;
        let mut max_res: f64 = 0.0;
        let mut max_law: f64 = 0.0;
        let mut endpoints_ok = true;
        let mut first_ps = None;
        for &e in &t2.a_inf {
            let enc = &t2.evaluations[e].encoder;
            let dec = check_decomposition_with_fault(&inst, enc, opts.inject_fault)?;
            max_res = max_res.max(dec.residual);
            let ps = posterior_sampling_check(&inst, enc)?;
            let tol = opts.endpoint_tolerance;
            endpoints_ok &=
                ps.d_inf <= ps.d_0 + tol && ps.d_0 <= ps.d_ps + tol && (ps.d_ps - 2.0 * ps.d_inf).abs() <= tol;
            max_law = max_law.max(ps.joint_residual).max(ps.marginal_residual);
            first_ps.get_or_insert(ps);
        }
        let ps = first_ps.expect("at least one optimal encoder");
        results.push(InstanceResult {
            index,
            theorem2_holds: t2.holds,
            min_d_inf: t2.min_d_inf,
            min_d_0: t2.min_d_0,
            d_ps: ps.d_ps,
            d_0_of_mmse_encoder: ps.d_0,
            mmse_encoders: t2.a_inf.len(),
            witnesses: t2.witnesses.iter().map(|&w| t2.evaluations[w].clone()).collect(),
            max_decomposition_residual: max_res,
            endpoints_ok,
            max_law_residual: max_law,
            instance: inst,
        });
    }
    let theorem2_failures = results.iter().filter(|r| !r.theorem2_holds).count();
    let decomposition_failures =
        results.iter().filter(|r| !(r.max_decomposition_residual <= opts.decomposition_tolerance)).count();
    let endpoint_failures = results.iter().filter(|r| !r.endpoints_ok).count();
    Ok(SweepReport {
        grid: grid.clone(),
        instances: results,
        theorem2_failures,
        decomposition_failures,
        endpoint_failures,
        decomposition_tolerance: opts.decomposition_tolerance,
        endpoint_tolerance: opts.endpoint_tolerance,
    })
}

/// Random instance with up to `max_support` source and noise values drawn
/// from [-2, 2] and random positive probabilities.
pub fn random_instance(rng: &mut impl Rng, max_support: usize) -> RdpInstance {
    let dist = |rng: &mut dyn rand::RngCore| loop {
        let k = rng.random_range(1..=max_support.max(1));
        let values: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let head: f64 = probs[..k - 1].iter().sum();
        probs[k - 1] = 1.0 - head;
        if let Ok(p) = Pmf::new(values, probs) {
            return p;
        }
    };
    loop {
        let source = dist(rng);
        let noise = dist(rng);
        let probe = RdpInstance { source: source.clone(), noise: noise.clone(), codewords: 1 };
        let n = probe.observations().len();
        if n > MAX_OBSERVATIONS {
            continue;
        }
        let m = rng.random_range(1..=n.min(3));
        if let Ok(inst) = RdpInstance::new(source, noise, m) {
            if inst.encoder_count().is_ok() {
                return inst;
            }
        }
    }
}
