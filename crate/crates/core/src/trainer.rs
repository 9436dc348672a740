//! Two-stage training.
//!
//! Stage 1 trains encoder, residual quantizer and decoder `G_d` on the
//! multi-scale spectral loss only. Stage 2 freezes encoder and codebooks and
//! trains a fresh decoder `G_p` against the discriminators, alternating one
//! discriminator step and one generator step per batch.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{BatchPlan, Corpus, Example, NoiseMixSpec};
use crate::discriminators::{DiscriminatorSet, DiscriminatorSetConfig};
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss_t, feature_matching_loss_t, generator_adv_loss_t, generator_total_loss, LossWeights,
    SpectralLoss, SpectralLossConfig,
};
use crate::model::{padded_len, waveform_batch, Decoder, Encoder, LatentSequence, ModelConfig};
use crate::params::{HostTensor, ParamSet, ParameterDigest};
use crate::rvq::{Codebook, Quantized, QuantizerConfig};

/// Training runs in single precision on the CPU.
pub const TRAIN_DTYPE: DType = DType::F32;

const NQ_STREAM: u64 = 11;
const RESEED_STREAM: u64 = 12;
const KMEANS_STEP_BASE: usize = 1 << 40;
const PERCEPTUAL_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must be in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction over a fixed list of variables.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    vars: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    /// Optimizes every variable of the given sets; names become
    /// `"{prefix}.{name}"`.
    pub fn new(cfg: AdamConfig, sets: &[(&str, &ParamSet)]) -> Result<Self> {
        cfg.validate()?;
        let mut vars = Vec::new();
        for (prefix, set) in sets {
            for (name, var) in set.vars() {
                vars.push((format!("{prefix}.{name}"), var.clone()));
            }
        }
        let m = vars.iter().map(|(_, v)| v.zeros_like()).collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self { cfg, t: 0, vars, m, v })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update; variables without a gradient are left alone.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.t += 1;
        let AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, epsilon: eps } = self.cfg;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (i, (_, var)) in self.vars.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            // no autograd history may survive into the next step
            let g = g.detach();
            let m = ((&self.m[i] * b1)? + (&g * (1.0 - b1))?)?.detach();
            let v = ((&self.v[i] * b2)? + (g.sqr()? * (1.0 - b2))?)?.detach();
            let denom = ((&v / c2)?.sqrt()? + eps)?;
            let update = ((&m / c1)? / denom)?;
            var.set(&(var.as_tensor().detach() - (update * lr)?)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }

    pub fn to_host(&self) -> Result<Vec<(String, HostTensor)>> {
        let mut out = vec![("t".to_string(), HostTensor::from_f64(vec![1], vec![self.t as f64]))];
        for (i, (name, _)) in self.vars.iter().enumerate() {
            out.push((format!("m/{name}"), HostTensor::from_tensor(&self.m[i])?));
            out.push((format!("v/{name}"), HostTensor::from_tensor(&self.v[i])?));
        }
        Ok(out)
    }

    pub fn load_host(&mut self, host: &BTreeMap<String, HostTensor>) -> Result<()> {
        let t = host.get("t").ok_or_else(|| Error::Checkpoint("optimizer step missing".into()))?;
        self.t = t.as_f64().first().copied().unwrap_or(0.0) as u64;
        for (i, (name, var)) in self.vars.iter().enumerate() {
            for (slot, key) in [(&mut self.m[i], format!("m/{name}")), (&mut self.v[i], format!("v/{name}"))] {
                let h = host.get(&key).ok_or_else(|| Error::Checkpoint(format!("optimizer state {key} missing")))?;
                if h.shape != var.dims() {
                    return Err(Error::Checkpoint(format!("optimizer state {key} has shape {:?}", h.shape)));
                }
                *slot = h.to_tensor(var.device())?.to_dtype(var.dtype())?;
            }
        }
        Ok(())
    }
}

/// Uniform draw from `1..=nq`.
pub fn sample_active_quantizers(nq: usize, rng: &mut impl Rng) -> Result<usize> {
    if nq == 0 {
        return Err(Error::QuantizerRange { requested: 0, available: 0 });
    }
    Ok(rng.random_range(1..=nq))
}

/// RNG for one purpose at one step, independent of any other step.
fn step_rng(seed: u64, step: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (step as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneConfig {
    pub model: ModelConfig,
    pub quantizer: QuantizerConfig,
    pub spectral: SpectralLossConfig,
    pub mix: NoiseMixSpec,
    pub steps: usize,
    pub batch_size: usize,
    /// Fraction of examples that get noise mixed in.
    pub noisy_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub kmeans_lloyd_iters: usize,
}

impl Default for StageOneConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            quantizer: QuantizerConfig::default(),
            spectral: SpectralLossConfig::default(),
            mix: NoiseMixSpec::default(),
            steps: 2000,
            batch_size: 8,
            noisy_fraction: 0.5,
            adam: AdamConfig::default(),
            seed: 0,
            kmeans_lloyd_iters: 2,
        }
    }
}

impl StageOneConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.quantizer.validate()?;
        self.spectral.validate()?;
        self.mix.validate()?;
        self.adam.validate()?;
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noisy_fraction) {
            return Err(Error::Config("noisy_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    fn plan(&self) -> BatchPlan {
        BatchPlan {
            batch_size: self.batch_size,
            seed: self.seed,
            noisy_fraction: self.noisy_fraction,
            mix: self.mix.clone(),
        }
    }

    fn crop_len(&self) -> usize {
        padded_len(self.mix.crop_len(self.model.sample_rate), &self.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTwoConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub noisy_fraction: f64,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    pub weights: LossWeights,
    pub discriminators: DiscriminatorSetConfig,
    pub spectral: SpectralLossConfig,
    pub mix: NoiseMixSpec,
    pub seed: u64,
    /// Initialize `G_p` from `G_d` instead of from scratch.
    pub warm_start: bool,
}

impl Default for StageTwoConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            noisy_fraction: 0.5,
            generator_adam: AdamConfig::default(),
            discriminator_adam: AdamConfig::default(),
            weights: LossWeights::default(),
            discriminators: DiscriminatorSetConfig::default(),
            spectral: SpectralLossConfig::default(),
            mix: NoiseMixSpec::default(),
            seed: 0,
            warm_start: false,
        }
    }
}

impl StageTwoConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator_adam.validate()?;
        self.discriminator_adam.validate()?;
        self.weights.validate()?;
        self.discriminators.validate()?;
        self.spectral.validate()?;
        self.mix.validate()?;
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noisy_fraction) {
            return Err(Error::Config("noisy_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    fn plan(&self) -> BatchPlan {
        BatchPlan {
            batch_size: self.batch_size,
            seed: self.seed,
            noisy_fraction: self.noisy_fraction,
            mix: self.mix.clone(),
        }
    }
}

/// Loss values of one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub stage: u8,
    pub step: usize,
    pub active_quantizers: usize,
    pub l_dis: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_adv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_feat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codewords_reseeded: Option<usize>,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn finite(step: usize, what: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Diverged { step, what: what.to_string(), value })
    }
}

/// Network inputs and targets of one batch.
fn batch_tensors(examples: &[Example], model: &ModelConfig, device: &Device) -> Result<(Tensor, Tensor)> {
    let inputs: Vec<_> = examples.iter().map(|e| e.input.clone()).collect();
    let targets: Vec<_> = examples.iter().map(|e| e.target.clone()).collect();
    Ok((waveform_batch(&inputs, model, TRAIN_DTYPE, device)?, waveform_batch(&targets, model, TRAIN_DTYPE, device)?))
}

/// Quantizes `[B, D, F]` latents with the first `nq` stages.
pub fn quantize_batch(codebook: &Codebook, z: &Tensor, nq: usize) -> Result<(Tensor, Vec<Quantized>)> {
    let seqs = LatentSequence::from_tensor(&z.detach())?;
    let qs = seqs.iter().map(|s| codebook.quantize(s, nq)).collect::<Result<Vec<_>>>()?;
    let q: Vec<LatentSequence> = qs.iter().map(|q| q.quantized.clone()).collect();
    Ok((LatentSequence::to_tensor(&q, z.dtype(), z.device())?, qs))
}

fn host_map(ps: &ParamSet) -> Result<Vec<(String, HostTensor)>> {
    Ok(ps.to_host()?.into_iter().collect())
}

fn codebook_from(ck: &Checkpoint) -> Result<Codebook> {
    let g = ck.group("codebook");
    let get = |k: &str| g.get(k).ok_or_else(|| Error::Checkpoint(format!("codebook/{k} missing")));
    Codebook::from_host(get("entries")?, get("ema_counts")?, get("ema_sums")?)
}

fn config_of<T: serde::de::DeserializeOwned>(ck: &Checkpoint, key: &str) -> Result<T> {
    let v = ck.config.get(key).ok_or_else(|| Error::Checkpoint(format!("config snapshot lacks {key}")))?;
    Ok(serde_json::from_value(v.clone())?)
}

/// Stage-1 training state.
#[derive(Debug)]
pub struct StageOne {
    cfg: StageOneConfig,
    encoder: Encoder,
    decoder: Decoder,
    codebook: Codebook,
    adam: Adam,
    loss: SpectralLoss,
    step: usize,
    device: Device,
}

impl StageOne {
    /// Fresh networks and a codebook initialized by k-means on encoder
    /// outputs of as many batches as it takes to collect one latent per
    /// codeword.
    pub fn new(cfg: &StageOneConfig, corpus: &Corpus) -> Result<Self> {
        cfg.validate()?;
        if corpus.clean.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let device = Device::Cpu;
        let encoder = Encoder::new(&cfg.model, cfg.seed, TRAIN_DTYPE, &device)?;
        let decoder = Decoder::new(&cfg.model, cfg.seed, TRAIN_DTYPE, &device)?;
        let mut codebook =
            Codebook::zeros(cfg.quantizer.num_quantizers, cfg.quantizer.codebook_size, cfg.model.latent_dim)?;
        let plan = cfg.plan();
        let mut vectors: Vec<Vec<f64>> = Vec::new();
        let mut b = 0;
        while vectors.len() < cfg.quantizer.codebook_size {
            let ex = plan.batch(corpus, KMEANS_STEP_BASE + b)?;
            let (x, _) = batch_tensors(&ex, &cfg.model, &device)?;
            for seq in LatentSequence::from_tensor(&encoder.forward(&x)?)? {
                vectors.extend((0..seq.frames).map(|t| seq.frame(t).to_vec()));
            }
            b += 1;
        }
        codebook.kmeans_init(&vectors, cfg.seed, cfg.kmeans_lloyd_iters)?;
        log::info!("codebook initialized from {} latents ({b} batches)", vectors.len());
        let adam = Adam::new(cfg.adam, &[("encoder", encoder.params()), ("decoder", decoder.params())])?;
        let loss = SpectralLoss::new(&cfg.spectral, cfg.crop_len(), cfg.model.sample_rate, TRAIN_DTYPE, &device)?;
        Ok(Self { cfg: cfg.clone(), encoder, decoder, codebook, adam, loss, step: 0, device })
    }

    /// Resumes from a stage-1 checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.stage != 1 {
            return Err(Error::Checkpoint(format!("expected a stage-1 checkpoint, found stage {}", ck.stage)));
        }
        ck.verify()?;
        let cfg: StageOneConfig = config_of(ck, "stage1")?;
        cfg.validate()?;
        let device = Device::Cpu;
        let encoder = Encoder::new(&cfg.model, cfg.seed, TRAIN_DTYPE, &device)?;
        let decoder = Decoder::new(&cfg.model, cfg.seed, TRAIN_DTYPE, &device)?;
        encoder.params().load_host(&ck.group("encoder"))?;
        decoder.params().load_host(&ck.group("decoder"))?;
        let codebook = codebook_from(ck)?;
        let mut adam = Adam::new(cfg.adam, &[("encoder", encoder.params()), ("decoder", decoder.params())])?;
        adam.load_host(&ck.group("adam"))?;
        let loss = SpectralLoss::new(&cfg.spectral, cfg.crop_len(), cfg.model.sample_rate, TRAIN_DTYPE, &device)?;
        Ok(Self { cfg, encoder, decoder, codebook, adam, loss, step: ck.step as usize, device })
    }

    pub fn config(&self) -> &StageOneConfig {
        &self.cfg
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    /// Active quantizer count for a step.
    pub fn active_quantizers(&self, step: usize) -> Result<usize> {
        let nq = self.cfg.quantizer.num_quantizers;
        if self.cfg.quantizer.dropout {
            sample_active_quantizers(nq, &mut step_rng(self.cfg.seed, step, NQ_STREAM))
        } else {
            Ok(nq)
        }
    }

    /// One Adam step on the spectral loss and one EMA codebook update.
    pub fn step(&mut self, corpus: &Corpus) -> Result<StepLog> {
        let step = self.step;
        let examples = self.cfg.plan().batch(corpus, step)?;
        let (x, y) = batch_tensors(&examples, &self.cfg.model, &self.device)?;
        let z = self.encoder.forward(&x)?;
        finite(step, "latent sum", scalar(&z.sum_all()?)?)?;
        let nq = self.active_quantizers(step)?;
        let (q, quantized) = quantize_batch(&self.codebook, &z, nq)?;
        // straight-through: forward uses q, gradient flows to z unchanged
        let zq = ((&z - z.detach())? + &q)?;
        let xhat = self.decoder.forward(&zq)?;
        let l_dis = self.loss.forward(&y.squeeze(1)?, &xhat.squeeze(1)?)?;
        let mut total = l_dis.clone();
        if self.cfg.quantizer.commitment_weight > 0.0 {
            let commit = (&z - &q)?.sqr()?.mean_all()?;
            total = (total + (commit * self.cfg.quantizer.commitment_weight)?)?;
        }
        let l_dis_v = finite(step, "L_dis", scalar(&l_dis)?)?;
        finite(step, "stage-1 loss", scalar(&total)?)?;
        let grads = total.backward()?;
        self.adam.step(&grads)?;

        let assignments: Vec<_> = quantized.iter().flat_map(|q| q.assignments()).collect();
        self.codebook.ema_update(&assignments, self.cfg.quantizer.ema_decay)?;
        let reseeded = self.codebook.reseed_dead(&assignments, &mut step_rng(self.cfg.seed, step, RESEED_STREAM));
        self.step += 1;
        Ok(StepLog {
            stage: 1,
            step,
            active_quantizers: nq,
            l_dis: l_dis_v,
            l_adv: None,
            l_feat: None,
            l_g: None,
            l_d: None,
            codewords_reseeded: Some(reseeded),
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let config = serde_json::json!({
            "model": self.cfg.model,
            "quantizer": self.cfg.quantizer,
            "stage1": self.cfg,
        });
        let mut ck = Checkpoint::new(1, self.step as u64, config);
        ck.insert_group("encoder", host_map(self.encoder.params())?);
        ck.insert_group("decoder", host_map(self.decoder.params())?);
        ck.insert_group("codebook", self.codebook.to_host().into_iter().map(|(k, v)| (k.to_string(), v)));
        ck.insert_group("adam", self.adam.to_host()?);
        Ok(ck)
    }
}

/// Runs stage 1 for `cfg.steps` steps, calling `on_log` after each.
pub fn train_stage1(corpus: &Corpus, cfg: &StageOneConfig, mut on_log: impl FnMut(&StepLog)) -> Result<Checkpoint> {
    let mut s = StageOne::new(cfg, corpus)?;
    while s.step < cfg.steps {
        let log = s.step(corpus)?;
        on_log(&log);
    }
    s.checkpoint()
}

/// Inputs of one stage-2 batch after the frozen encoder and quantizer.
#[derive(Debug, Clone)]
pub struct FrozenBatch {
    pub quantized: Tensor,
    pub target: Tensor,
    pub active_quantizers: usize,
}

/// Stage-2 training state.
#[derive(Debug)]
pub struct StageTwo {
    cfg: StageTwoConfig,
    stage1: StageOneConfig,
    encoder: Encoder,
    decoder: Decoder,
    codebook: Codebook,
    perceptual: Decoder,
    discriminators: DiscriminatorSet,
    opt_g: Adam,
    opt_d: Adam,
    loss: SpectralLoss,
    step: usize,
    encoder_digest: ParameterDigest,
    codebook_digest: ParameterDigest,
    device: Device,
}

impl StageTwo {
    /// Loads the frozen parts from a stage-1 (or stage-2) checkpoint and
    /// builds `G_p` and the discriminators.
    pub fn new(stage1: &Checkpoint, cfg: &StageTwoConfig) -> Result<Self> {
        cfg.validate()?;
        stage1.verify()?;
        let s1: StageOneConfig = config_of(stage1, "stage1")?;
        s1.validate()?;
        let device = Device::Cpu;
        let encoder = Encoder::new(&s1.model, s1.seed, TRAIN_DTYPE, &device)?;
        let decoder = Decoder::new(&s1.model, s1.seed, TRAIN_DTYPE, &device)?;
        encoder.params().load_host(&stage1.group("encoder"))?;
        decoder.params().load_host(&stage1.group("decoder"))?;
        let codebook = codebook_from(stage1)?;
        let perceptual = Decoder::new(&s1.model, cfg.seed ^ PERCEPTUAL_SEED_OFFSET, TRAIN_DTYPE, &device)?;
        if cfg.warm_start {
            perceptual.params().copy_from(decoder.params())?;
        }
        let len = padded_len(cfg.mix.crop_len(s1.model.sample_rate), &s1.model);
        let discriminators = DiscriminatorSet::new(&cfg.discriminators, len, cfg.seed, TRAIN_DTYPE, &device)?;
        let opt_g = Adam::new(cfg.generator_adam, &[("perceptual_decoder", perceptual.params())])?;
        let opt_d = Adam::new(cfg.discriminator_adam, &[("discriminators", discriminators.params())])?;
        let loss = SpectralLoss::new(&cfg.spectral, len, s1.model.sample_rate, TRAIN_DTYPE, &device)?;
        let encoder_digest = encoder.params().digest()?;
        let codebook_digest = codebook.digest();
        if stage1.digests.get("encoder") != Some(&encoder_digest)
            || stage1.digests.get("codebook") != Some(&codebook_digest)
        {
            return Err(Error::Checkpoint("loaded encoder or codebook does not match its recorded digest".into()));
        }
        Ok(Self {
            cfg: cfg.clone(),
            stage1: s1,
            encoder,
            decoder,
            codebook,
            perceptual,
            discriminators,
            opt_g,
            opt_d,
            loss,
            step: 0,
            encoder_digest,
            codebook_digest,
            device,
        })
    }

    /// Resumes from a stage-2 checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.stage != 2 {
            return Err(Error::Checkpoint(format!("expected a stage-2 checkpoint, found stage {}", ck.stage)));
        }
        let cfg: StageTwoConfig = config_of(ck, "stage2")?;
        let mut s = Self::new(ck, &cfg)?;
        s.perceptual.params().load_host(&ck.group("perceptual_decoder"))?;
        s.discriminators.params().load_host(&ck.group("discriminators"))?;
        s.opt_g.load_host(&ck.group("adam_g"))?;
        s.opt_d.load_host(&ck.group("adam_d"))?;
        s.step = ck.step as usize;
        Ok(s)
    }

    pub fn config(&self) -> &StageTwoConfig {
        &self.cfg
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn perceptual_decoder(&self) -> &Decoder {
        &self.perceptual
    }

    pub fn discriminators(&self) -> &DiscriminatorSet {
        &self.discriminators
    }

    pub fn frozen_digests(&self) -> (ParameterDigest, ParameterDigest) {
        (self.encoder_digest, self.codebook_digest)
    }

    pub fn active_quantizers(&self, step: usize) -> Result<usize> {
        let nq = self.stage1.quantizer.num_quantizers;
        if self.stage1.quantizer.dropout {
            sample_active_quantizers(nq, &mut step_rng(self.cfg.seed, step, NQ_STREAM))
        } else {
            Ok(nq)
        }
    }

    /// Quantized latents and targets of batch `step`.
    pub fn frozen_batch(&self, corpus: &Corpus, step: usize) -> Result<FrozenBatch> {
        let examples = self.cfg.plan().batch(corpus, step)?;
        let (x, y) = batch_tensors(&examples, &self.stage1.model, &self.device)?;
        let z = self.encoder.forward(&x)?.detach();
        let nq = self.active_quantizers(step)?;
        let (q, _) = quantize_batch(&self.codebook, &z, nq)?;
        Ok(FrozenBatch { quantized: q, target: y, active_quantizers: nq })
    }

    /// One discriminator step followed by one generator step.
    pub fn step(&mut self, corpus: &Corpus) -> Result<StepLog> {
        let step = self.step;
        let FrozenBatch { quantized: q, target: y, active_quantizers: nq } = self.frozen_batch(corpus, step)?;

        let fake = self.perceptual.forward(&q)?.detach();
        let real_out = self.discriminators.forward_all(&y)?;
        let fake_out = self.discriminators.forward_all(&fake)?;
        let l_d = discriminator_loss_t(&real_out.logits, &fake_out.logits)?;
        let l_d_v = finite(step, "L_D", scalar(&l_d)?)?;
        self.opt_d.step(&l_d.backward()?)?;

        let xhat = self.perceptual.forward(&q)?;
        let fake_out = self.discriminators.forward_all(&xhat)?;
        let real_out = self.discriminators.forward_all(&y)?;
        let real_feats: Vec<Vec<Tensor>> =
            real_out.features.iter().map(|fs| fs.iter().map(Tensor::detach).collect()).collect();
        let l_adv = generator_adv_loss_t(&fake_out.logits)?;
        let l_feat = feature_matching_loss_t(&real_feats, &fake_out.features)?;
        let l_dis = self.loss.forward(&y.squeeze(1)?, &xhat.squeeze(1)?)?;
        let w = self.cfg.weights;
        let l_g = (((&l_adv * w.lambda_adv)? + (&l_feat * w.lambda_feat)?)? + (&l_dis * w.lambda_dis)?)?;
        let (adv, feat, dis) = (scalar(&l_adv)?, scalar(&l_feat)?, scalar(&l_dis)?);
        let total = finite(step, "L_G", scalar(&l_g)?)?;
        for (name, v) in [("L_adv", adv), ("L_feat", feat), ("L_dis", dis)] {
            finite(step, name, v)?;
        }
        let recomputed = generator_total_loss(adv, feat, dis, &w);
        if (total - recomputed).abs() > 1e-6 * recomputed.abs().max(1e-12) {
            return Err(Error::Diverged {
                step,
                what: format!("L_G bookkeeping ({total} vs {recomputed})"),
                value: total,
            });
        }
        self.opt_g.step(&l_g.backward()?)?;

        if self.encoder.params().digest()? != self.encoder_digest {
            return Err(Error::FrozenDrift { step, group: "encoder".into() });
        }
        if self.codebook.digest() != self.codebook_digest {
            return Err(Error::FrozenDrift { step, group: "codebook".into() });
        }
        self.step += 1;
        Ok(StepLog {
            stage: 2,
            step,
            active_quantizers: nq,
            l_dis: dis,
            l_adv: Some(adv),
            l_feat: Some(feat),
            l_g: Some(total),
            l_d: Some(l_d_v),
            codewords_reseeded: None,
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let config = serde_json::json!({
            "model": self.stage1.model,
            "quantizer": self.stage1.quantizer,
            "stage1": self.stage1,
            "stage2": self.cfg,
        });
        let mut ck = Checkpoint::new(2, self.step as u64, config);
        ck.insert_group("encoder", host_map(self.encoder.params())?);
        ck.insert_group("decoder", host_map(self.decoder.params())?);
        ck.insert_group("codebook", self.codebook.to_host().into_iter().map(|(k, v)| (k.to_string(), v)));
        ck.insert_group("perceptual_decoder", host_map(self.perceptual.params())?);
        ck.insert_group("discriminators", host_map(self.discriminators.params())?);
        ck.insert_group("adam_g", self.opt_g.to_host()?);
        ck.insert_group("adam_d", self.opt_d.to_host()?);
        Ok(ck)
    }
}

/// Runs stage 2 from a stage-1 checkpoint for `cfg.steps` steps.
pub fn train_stage2(
    stage1: &Checkpoint,
    corpus: &Corpus,
    cfg: &StageTwoConfig,
    mut on_log: impl FnMut(&StepLog),
) -> Result<Checkpoint> {
    let mut s = StageTwo::new(stage1, cfg)?;
    while s.step < cfg.steps {
        let log = s.step(corpus)?;
        on_log(&log);
    }
    s.checkpoint()
}
