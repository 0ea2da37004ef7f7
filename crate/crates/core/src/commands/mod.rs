//! The `swis` batch front end.
//!
//! Every command writes into a fresh output directory (or an existing one
//! with `--force`) and finishes with `run.json`: the command, its arguments
//! minus the output directory, the tool version and SHA-256 digests of every
//! input. Nothing time- or host-dependent is recorded, so a re-run with the
//! same inputs, seed and flags reproduces every file byte for byte.

mod analyze;
mod quantize;
mod schedule;
mod simulate;
mod verify;

pub use analyze::{AnalyzeArgs, AnalyzeKind};
pub use quantize::QuantizeArgs;
pub use schedule::{ScheduleArgs, ScheduleFile, ScheduledLayerRecord};
pub use simulate::SimulateArgs;
pub use verify::{run_suites, SuiteResult, VerifyArgs, VerifyOptions};

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::Rational64;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model_io::{load_manifest_resolved, LayerTensor, ModelIoError, ModelManifest};
use crate::quantizer::{Metric, QuantConfig, QuantError, QuantMode};
use crate::scheduler::ScheduleError;
use crate::synth::{synthetic_blob, synthetic_manifest, Arch};
use crate::sysarray::SimError;

#[derive(Debug, Parser)]
#[command(name = "swis", version, about = "Shared weight bit-sparsity quantization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize every layer at a uniform shift count.
    Quantize(QuantizeArgs),
    /// Schedule per-filter shift counts to hit a fractional layer average.
    Schedule(ScheduleArgs),
    /// Probability, compression and RMSE sweeps.
    Analyze(AnalyzeArgs),
    /// Cycle, traffic and energy estimates on the systolic array model.
    Simulate(SimulateArgs),
    /// Run the oracle suites.
    Verify(VerifyArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Quantize(_) => "quantize",
            Command::Schedule(_) => "schedule",
            Command::Analyze(_) => "analyze",
            Command::Simulate(_) => "simulate",
            Command::Verify(_) => "verify",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("{0}")]
    Usage(String),
    #[error("output directory {} is not empty; pass --force to overwrite", .0.display())]
    OutputExists(PathBuf),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelIoError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 2 for bad invocations, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) => e.exit_code(),
            CliError::Usage(_) | CliError::OutputExists(_) => 2,
            CliError::Quant(
                QuantError::InvalidShifts { .. }
                | QuantError::InvalidBits(_)
                | QuantError::InvalidGroupSize
                | QuantError::InvalidAlpha(_),
            ) => 2,
            CliError::Schedule(ScheduleError::InvalidTarget(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite files in a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

/// Where the model comes from: a manifest on disk or a seeded synthetic one.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Model manifest (JSON).
    #[arg(long, conflicts_with = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Synthetic model: resnet18, mobilenet-v2, vgg16 or tiny.
    #[arg(long)]
    pub synthetic: Option<Arch>,
    /// Seed for synthetic weights.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricKind {
    Mse,
    Msepp,
}

/// Quantizer settings shared by several commands.
#[derive(Debug, Clone, Args)]
pub struct QuantArgs {
    /// swis, swis-c or trunc.
    #[arg(long, default_value = "swis")]
    pub mode: QuantMode,
    /// Group size M.
    #[arg(long, default_value_t = 4)]
    pub group: usize,
    /// Selection metric.
    #[arg(long, value_enum, default_value_t = MetricKind::Msepp)]
    pub metric: MetricKind,
    /// MSE++ drift coefficient.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Weight magnitude width B.
    #[arg(long, default_value_t = crate::DEFAULT_BITS)]
    pub bits: u8,
}

impl QuantArgs {
    fn metric(&self) -> Metric {
        match self.metric {
            MetricKind::Mse => Metric::Mse,
            MetricKind::Msepp => Metric::MsePlusPlus { alpha: self.alpha },
        }
    }

    fn config(&self, shifts: u8) -> Result<QuantConfig> {
        let cfg = QuantConfig {
            mode: self.mode,
            shifts,
            group_size: self.group,
            metric: self.metric(),
            bits: self.bits,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `ROWSxCOLS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrayShape {
    pub rows: usize,
    pub cols: usize,
}

impl FromStr for ArrayShape {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected ROWSxCOLS, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&v| v > 0);
        match (parse(r), parse(c)) {
            (Some(rows), Some(cols)) => Ok(ArrayShape { rows, cols }),
            _ => Err(format!("expected positive ROWSxCOLS, got `{s}`")),
        }
    }
}

/// Exact rational from `p/q`, an integer or a decimal like `2.5`.
pub fn parse_rational(s: &str) -> std::result::Result<Rational64, String> {
    let bad = || format!("expected a number like 2.5 or 5/2, got `{s}`");
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p: i64 = p.trim().parse().map_err(|_| bad())?;
        let q: i64 = q.trim().parse().map_err(|_| bad())?;
        if q == 0 {
            return Err(bad());
        }
        return Ok(Rational64::new(p, q));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() || !frac.chars().all(|c| c.is_ascii_digit()) || frac.len() > 12 {
        return Err(bad());
    }
    let negative = int.starts_with('-');
    let whole: i64 = match int.trim_start_matches(['-', '+']) {
        "" => 0,
        digits => digits.parse().map_err(|_| bad())?,
    };
    let scale = 10i64.pow(frac.len() as u32);
    let part: i64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
    let value = Rational64::new(whole * scale + part, scale);
    Ok(if negative { -value } else { value })
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A loaded model, its blob when needed, and digests of what was read.
pub struct ModelSource {
    pub manifest: ModelManifest,
    blob: Option<Vec<u8>>,
    pub inputs: Vec<InputDigest>,
}

impl ModelSource {
    pub fn load(args: &ModelArgs, need_weights: bool) -> Result<ModelSource> {
        match (&args.manifest, args.synthetic) {
            (Some(path), _) => {
                let loaded = load_manifest_resolved(path)?;
                let text = fs::read(path).map_err(io_err(path))?;
                let mut inputs = vec![InputDigest {
                    name: path.display().to_string(),
                    sha256: sha256_hex(&text),
                }];
                let blob = if need_weights {
                    let blob = loaded.read_blob()?;
                    inputs.push(InputDigest {
                        name: loaded.data_path.display().to_string(),
                        sha256: sha256_hex(&blob),
                    });
                    Some(blob)
                } else {
                    None
                };
                Ok(ModelSource {
                    manifest: loaded.manifest,
                    blob,
                    inputs,
                })
            }
            (None, Some(arch)) => {
                let manifest = synthetic_manifest(arch);
                let text = serde_json::to_vec(&manifest).expect("manifest serializes");
                let mut inputs = vec![InputDigest {
                    name: format!("synthetic:{arch}"),
                    sha256: sha256_hex(&text),
                }];
                let blob = need_weights.then(|| synthetic_blob(&manifest, args.seed));
                if let Some(b) = &blob {
                    inputs.push(InputDigest {
                        name: format!("synthetic:{arch}:seed={}", args.seed),
                        sha256: sha256_hex(b),
                    });
                }
                Ok(ModelSource {
                    manifest,
                    blob,
                    inputs,
                })
            }
            (None, None) => Err(CliError::Usage("pass --manifest FILE or --synthetic NAME".into())),
        }
    }

    /// Sign-magnitude tensors for every layer (or just `only`).
    pub fn tensors(&self, bits: u8, only: Option<&str>) -> Result<Vec<LayerTensor>> {
        let blob = self.blob.as_deref().expect("weights were loaded");
        let layers: Vec<_> = match only {
            Some(name) => vec![self
                .manifest
                .layer(name)
                .ok_or_else(|| CliError::Usage(format!("no layer named `{name}`")))?],
            None => self.manifest.layers.iter().collect(),
        };
        layers
            .into_iter()
            .map(|spec| {
                let values = self.manifest.layer_weights(blob, spec)?;
                let scale = self.manifest.scale_policy.get(&spec.name).copied();
                Ok(LayerTensor::from_real(spec.clone(), &values, bits, scale)?)
            })
            .collect()
    }
}

/// Output directory guard and writer.
pub struct Output {
    dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    pub fn prepare(args: &OutArgs) -> Result<Output> {
        let dir = &args.out;
        if dir.exists() {
            let mut entries = fs::read_dir(dir).map_err(io_err(dir))?;
            if entries.next().is_some() && !args.force {
                return Err(CliError::OutputExists(dir.clone()));
            }
        }
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Output {
            dir: dir.clone(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value).expect("report serializes");
        text.push(b'\n');
        self.write(name, &text)
    }

    pub fn csv_rows<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(|e| CliError::Failed(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Failed(format!("csv: {e}")))?;
        self.write(name, &bytes)
    }

    pub fn with_writer(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        let path = self.dir.join(name);
        f(&mut buf).map_err(io_err(&path))?;
        self.write(name, &buf)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    args: Vec<String>,
    inputs: &'a [InputDigest],
    outputs: &'a [String],
}

/// Arguments with the output directory removed.
fn recorded_args(argv: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in argv.iter().skip(1) {
        if skip {
            skip = false;
            continue;
        }
        if a == "--out" {
            skip = true;
            continue;
        }
        if a.starts_with("--out=") {
            continue;
        }
        out.push(a.clone());
    }
    out
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_from<I, S>(argv: I) -> Result<i32>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&argv)?;
    let name = cli.command.name();
    let out_args = match &cli.command {
        Command::Quantize(a) => &a.out,
        Command::Schedule(a) => &a.out,
        Command::Analyze(a) => &a.out,
        Command::Simulate(a) => &a.out,
        Command::Verify(a) => &a.out,
    };
    let mut out = Output::prepare(out_args)?;
    let (code, inputs) = match &cli.command {
        Command::Quantize(a) => quantize::run(a, &mut out)?,
        Command::Schedule(a) => schedule::run(a, &mut out)?,
        Command::Analyze(a) => analyze::run(a, &mut out)?,
        Command::Simulate(a) => simulate::run(a, &mut out)?,
        Command::Verify(a) => verify::run(a, &mut out)?,
    };
    let mut outputs = out.written.clone();
    outputs.push("run.json".into());
    let record = RunRecord {
        tool: "swis",
        version: env!("CARGO_PKG_VERSION"),
        command: name,
        args: recorded_args(&argv),
        inputs: &inputs,
        outputs: &outputs,
    };
    out.json("run.json", &record)?;
    Ok(code)
}
