//! Command-line front end for the `ses` codec.
//!
//! Every command is reachable through [`run`], which parses arguments,
//! writes human-readable output to the given sink and returns the process
//! exit code.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ses_core::data::{load_manifest, write_manifest, ManifestEntry};
use ses_core::rdp_oracle::{sweep, GridSpec, SweepOptions};
use ses_core::{
    load_wav, multiscale_spectral_loss, save_wav, si_snr, synth_corpus, Bitstream, Checkpoint, Codec, Corpus,
    DecoderKind, LossWeights, SpectralLossConfig, StageOneConfig, StageTwoConfig, StepLog, Strictness, Waveform,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Neural speech codec: training, coding and theory checks.
#[derive(Debug, Parser)]
#[command(name = "ses", version)]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic clean/noise corpus and its manifest.
    SynthData(SynthDataArgs),
    /// Train encoder, quantizer and distortion decoder.
    TrainStage1(TrainStage1Args),
    /// Train the perceptual decoder on a frozen stage-1 model.
    TrainStage2(TrainStage2Args),
    /// Encode a WAV file into a bitstream.
    Encode(EncodeArgs),
    /// Decode a bitstream into a WAV file.
    Decode(DecodeArgs),
    /// Compare a test WAV against a reference.
    Eval(EvalArgs),
    /// Exhaustive rate-distortion-perception checks on small sources.
    VerifyTheory(VerifyTheoryArgs),
}

#[derive(Debug, Args)]
pub struct SynthDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub clips: usize,
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 24000)]
    pub sample_rate: u32,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Manifest of `clean<TAB>noise` paths; synthetic data when absent.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub synth_clips: usize,
    #[arg(long, default_value_t = 1.0)]
    pub synth_duration: f64,
    /// Fraction of examples with noise mixed in.
    #[arg(long, default_value_t = 0.5)]
    pub noisy_fraction: f64,
    /// Write one JSON line per step here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct TrainStage1Args {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 24)]
    pub num_quantizers: usize,
    #[arg(long, default_value_t = 1024)]
    pub codebook_size: usize,
    #[arg(long, default_value_t = 256)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub base_channels: usize,
    /// Always use every quantizer stage during training.
    #[arg(long)]
    pub no_dropout: bool,
}

#[derive(Debug, Args)]
pub struct TrainStage2Args {
    /// Stage-1 checkpoint.
    #[arg(long)]
    pub stage1: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr_g: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr_d: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_adv: f64,
    #[arg(long, default_value_t = 100.0)]
    pub lambda_feat: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_dis: f64,
    /// Start the perceptual decoder from the distortion decoder.
    #[arg(long)]
    pub warm_start: bool,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Active quantizer stages; all of them by default.
    #[arg(long)]
    pub nq: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecoderChoice {
    Distortion,
    Perceptual,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = DecoderChoice::Distortion)]
    pub decoder: DecoderChoice,
    /// Accept nonzero padding bits.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Largest length difference that is silently truncated.
    #[arg(long, default_value_t = 320)]
    pub hop: usize,
}

#[derive(Debug, Args)]
pub struct VerifyTheoryArgs {
    /// JSON grid specification; the default grid otherwise.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Full JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-instance text summary.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Corrupt the decomposition check to exercise failure reporting.
    #[arg(long)]
    pub inject_fault: bool,
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Verification(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Verification(_) => EXIT_VERIFY,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<ses_core::Error> for CliError {
    fn from(e: ses_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Errors go to stderr, normal output to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = e.print();
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::SynthData(a) => cmd_synth_data(a, cli.seed, out),
        Command::TrainStage1(a) => cmd_train_stage1(a, cli.seed, out),
        Command::TrainStage2(a) => cmd_train_stage2(a, cli.seed, out),
        Command::Encode(a) => cmd_encode(a, out),
        Command::Decode(a) => cmd_decode(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::VerifyTheory(a) => cmd_verify_theory(a, out),
    }
}

pub fn cmd_synth_data(a: &SynthDataArgs, seed: u64, out: &mut dyn Write) -> CliResult<()> {
    if a.clips == 0 || !(a.duration > 0.0) {
        return Err(CliError::Usage("--clips and --duration must be positive".into()));
    }
    let corpus = synth_corpus(a.clips, a.duration, a.sample_rate, seed)?;
    for sub in ["clean", "noise"] {
        std::fs::create_dir_all(a.out.join(sub)).with_context(|| format!("creating {}", a.out.display()))?;
    }
    let mut entries = Vec::with_capacity(a.clips);
    for (i, (c, n)) in corpus.clean.iter().zip(&corpus.noise).enumerate() {
        let clean = PathBuf::from(format!("clean/{i:04}.wav"));
        let noise = PathBuf::from(format!("noise/{i:04}.wav"));
        save_wav(c, a.out.join(&clean))?;
        save_wav(n, a.out.join(&noise))?;
        entries.push(ManifestEntry { clean, noise: Some(noise), seed: seed.wrapping_add(i as u64) });
    }
    let manifest = a.out.join("manifest.tsv");
    std::fs::write(&manifest, write_manifest(&entries))?;
    writeln!(out, "wrote {} clips to {}", a.clips, a.out.display())?;
    writeln!(out, "manifest={}", manifest.display())?;
    Ok(())
}

fn corpus_for(d: &DataArgs, sample_rate: u32, seed: u64) -> CliResult<Corpus> {
    match &d.manifest {
        Some(m) => Ok(load_manifest(m)?),
        None => {
            if d.synth_clips == 0 || !(d.synth_duration > 0.0) {
                return Err(CliError::Usage("--synth-clips and --synth-duration must be positive".into()));
            }
            Ok(synth_corpus(d.synth_clips, d.synth_duration, sample_rate, seed)?)
        }
    }
}

/// Step logger: JSON lines to a file plus periodic progress lines.
struct LogSink<'a> {
    file: Option<BufWriter<File>>,
    every: usize,
    out: &'a mut dyn Write,
    error: Option<std::io::Error>,
}

impl<'a> LogSink<'a> {
    fn new(path: Option<&Path>, every: usize, out: &'a mut dyn Write) -> CliResult<Self> {
        let file = path
            .map(|p| File::create(p).with_context(|| format!("creating {}", p.display())))
            .transpose()?
            .map(BufWriter::new);
        Ok(Self { file, every: every.max(1), out, error: None })
    }

    fn record(&mut self, log: &StepLog) {
        let mut go = || -> std::io::Result<()> {
            if let Some(f) = &mut self.file {
                serde_json::to_writer(&mut *f, log)?;
                f.write_all(b"\n")?;
            }
            if log.step.is_multiple_of(self.every) {
                let mut line = format!(
                    "stage={} step={} nq={} l_dis={:.6}",
                    log.stage, log.step, log.active_quantizers, log.l_dis
                );
                for (k, v) in [("l_adv", log.l_adv), ("l_feat", log.l_feat), ("l_g", log.l_g), ("l_d", log.l_d)] {
                    if let Some(v) = v {
                        line.push_str(&format!(" {k}={v:.6}"));
                    }
                }
                writeln!(self.out, "{line}")?;
            }
            Ok(())
        };
        if let Err(e) = go() {
            self.error.get_or_insert(e);
        }
    }

    fn finish(mut self) -> CliResult<()> {
        if let Some(e) = self.error.take() {
            return Err(e.into());
        }
        if let Some(f) = &mut self.file {
            f.flush()?;
        }
        Ok(())
    }
}

pub fn stage1_config(a: &TrainStage1Args, seed: u64) -> StageOneConfig {
    let mut cfg = StageOneConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        seed,
        noisy_fraction: a.data.noisy_fraction,
        ..Default::default()
    };
    cfg.adam.learning_rate = a.lr;
    cfg.quantizer.num_quantizers = a.num_quantizers;
    cfg.quantizer.codebook_size = a.codebook_size;
    cfg.quantizer.dropout = !a.no_dropout;
    cfg.model.latent_dim = a.latent_dim;
    cfg.model.base_channels = a.base_channels;
    cfg
}

pub fn cmd_train_stage1(a: &TrainStage1Args, seed: u64, out: &mut dyn Write) -> CliResult<()> {
    let cfg = stage1_config(a, seed);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let corpus = corpus_for(&a.data, cfg.model.sample_rate, seed)?;
    let mut sink = LogSink::new(a.data.log.as_deref(), a.data.log_every, out)?;
    let ck = ses_core::train_stage1(&corpus, &cfg, |l| sink.record(l))?;
    sink.finish()?;
    ck.save(&a.out)?;
    writeln!(out, "stage1 checkpoint={} steps={}", a.out.display(), ck.step)?;
    for (g, d) in &ck.digests {
        writeln!(out, "digest.{g}={d}")?;
    }
    Ok(())
}

pub fn stage2_config(a: &TrainStage2Args, seed: u64) -> StageTwoConfig {
    let mut cfg = StageTwoConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        seed,
        noisy_fraction: a.data.noisy_fraction,
        warm_start: a.warm_start,
        weights: LossWeights { lambda_adv: a.lambda_adv, lambda_feat: a.lambda_feat, lambda_dis: a.lambda_dis },
        ..Default::default()
    };
    cfg.generator_adam.learning_rate = a.lr_g;
    cfg.discriminator_adam.learning_rate = a.lr_d;
    cfg
}

pub fn cmd_train_stage2(a: &TrainStage2Args, seed: u64, out: &mut dyn Write) -> CliResult<()> {
    let cfg = stage2_config(a, seed);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let stage1 = Checkpoint::load(&a.stage1)?;
    let sr = stage1
        .config
        .get("model")
        .and_then(|m| m.get("sample_rate"))
        .and_then(|v| v.as_u64())
        .ok_or_else(|| anyhow!("stage-1 checkpoint lacks a model sample rate"))? as u32;
    let corpus = corpus_for(&a.data, sr, seed)?;
    let mut sink = LogSink::new(a.data.log.as_deref(), a.data.log_every, out)?;
    let ck = ses_core::train_stage2(&stage1, &corpus, &cfg, |l| sink.record(l))?;
    sink.finish()?;
    ck.save(&a.out)?;
    writeln!(out, "stage2 checkpoint={} steps={}", a.out.display(), ck.step)?;
    for (g, d) in &ck.digests {
        writeln!(out, "digest.{g}={d}")?;
    }
    Ok(())
}

pub fn cmd_encode(a: &EncodeArgs, out: &mut dyn Write) -> CliResult<()> {
    let codec = Codec::load(&a.checkpoint)?;
    let available = codec.quantizer().num_quantizers;
    let nq = a.nq.unwrap_or(available);
    if nq == 0 || nq > available {
        return Err(CliError::Usage(format!("--nq {nq} not in 1..={available}")));
    }
    let w = load_wav(&a.input)?;
    let b = codec.encode_bitstream(&w, nq)?;
    std::fs::write(&a.out, b.to_bytes())?;
    writeln!(out, "frames={}", b.header.num_frames)?;
    writeln!(out, "nq={nq}")?;
    writeln!(out, "payload_bits={}", b.header.payload_bits())?;
    writeln!(out, "bitrate_bps={}", b.header.bitrate())?;
    Ok(())
}

pub fn cmd_decode(a: &DecodeArgs, out: &mut dyn Write) -> CliResult<()> {
    let codec = Codec::load(&a.checkpoint)?;
    let kind = match a.decoder {
        DecoderChoice::Distortion => DecoderKind::Distortion,
        DecoderChoice::Perceptual => DecoderKind::Perceptual,
    };
    let bytes = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let b = Bitstream::from_bytes(&bytes)?;
    let strictness = if a.lenient { Strictness::Lenient } else { Strictness::Strict };
    let w = codec.decode_bitstream(&b, kind, strictness)?;
    save_wav(&w, &a.out)?;
    writeln!(out, "samples={}", w.len())?;
    Ok(())
}

/// Evaluation metrics as `key=value` lines.
pub fn eval_report(reference: &Waveform, test: &Waveform, hop: usize) -> CliResult<String> {
    if reference.sample_rate() != test.sample_rate() {
        return Err(CliError::Runtime(anyhow!(
            "sample rates differ: {} vs {}",
            reference.sample_rate(),
            test.sample_rate()
        )));
    }
    let diff = reference.len().abs_diff(test.len());
    if diff > hop {
        return Err(CliError::Runtime(anyhow!(
            "lengths differ by {diff} samples (> {hop}): {} vs {}",
            reference.len(),
            test.len()
        )));
    }
    let n = reference.len().min(test.len());
    let r = reference.slice(0, n)?;
    let t = test.slice(0, n)?;
    let snr = si_snr(&r, &t)?;
    let dist = multiscale_spectral_loss(&r, &t, &SpectralLossConfig::default())?;
    Ok(format!("samples={n}\ntruncated={diff}\nsi_snr_db={snr:.6}\nspectral_distance={dist:.6}\n"))
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let r = load_wav(&a.reference)?;
    let t = load_wav(&a.test)?;
    out.write_all(eval_report(&r, &t, a.hop)?.as_bytes())?;
    Ok(())
}

pub fn cmd_verify_theory(a: &VerifyTheoryArgs, out: &mut dyn Write) -> CliResult<()> {
    let grid: GridSpec = match &a.grid {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("grid file: {e}")))?
        }
        None => GridSpec::default(),
    };
    let opts = SweepOptions { inject_fault: if a.inject_fault { 1e-3 } else { 0.0 }, ..Default::default() };
    let report = match sweep(&grid, opts) {
        Err(e @ (ses_core::Error::TooLarge(_) | ses_core::Error::Config(_))) => {
            return Err(CliError::Usage(e.to_string()))
        }
        r => r?,
    };
    if let Some(p) = &a.report {
        let f = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
        serde_json::to_writer_pretty(f, &report).context("writing report")?;
    }
    let summary = report.summary();
    if let Some(p) = &a.summary {
        std::fs::write(p, &summary)?;
    }
    for r in report.instances.iter().filter(|r| !r.theorem2_holds).take(5) {
        writeln!(
            out,
            "witness instance={} source={:?}/{:?} noise={:?}/{:?} M={} min_d_0={:.12} d_0_of_mmse_encoder={:.12}",
            r.index,
            r.instance.source.values,
            r.instance.source.probs,
            r.instance.noise.values,
            r.instance.noise.probs,
            r.instance.codewords,
            r.min_d_0,
            r.d_0_of_mmse_encoder
        )?;
    }
    write!(out, "{}", summary.lines().last().map(|l| format!("{l}\n")).unwrap_or_default())?;
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{} encoder-inclusion failures, {} decomposition failures, {} endpoint failures",
            report.theorem2_failures, report.decomposition_failures, report.endpoint_failures
        )))
    }
}
