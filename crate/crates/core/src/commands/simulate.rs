use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use super::{io_err, sha256_hex, ArrayShape, CliError, InputDigest, ModelArgs, ModelSource, OutArgs, Output, Result};
use super::schedule::ScheduleFile;
use crate::bitserial::PeMode;
use crate::model_io::{LayerKind, LayerSpec};
use crate::quantizer::QuantMode;
use crate::sysarray::{
    dram_ratio_report, simulate_network, write_report_csv, write_report_json, ArrayConfig, CostTable,
    LayerShifts, SimReport, Workload,
};

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// swis, swis-c or trunc.
    #[arg(long, default_value = "swis")]
    pub mode: QuantMode,
    /// Uniform shift counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub shifts: Vec<u8>,
    /// PE modes to sweep (ss, ds).
    #[arg(long, value_delimiter = ',', default_value = "ss")]
    pub pe: Vec<PeMode>,
    /// Activation widths for the dense-weight bit-serial baseline.
    #[arg(long, value_delimiter = ',')]
    pub act_bits: Vec<u8>,
    /// schedule.json from `swis schedule`; adds one scheduled configuration.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long, default_value = "8x8")]
    pub sa: ArrayShape,
    /// Group size M.
    #[arg(long, default_value_t = 4)]
    pub group: usize,
    /// Energy cost table (JSON); defaults to the shipped placeholder table.
    #[arg(long)]
    pub costs: Option<PathBuf>,
    /// DRAM bandwidth.
    #[arg(long, default_value_t = 16)]
    pub dram_bytes_per_cycle: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Serialize)]
struct SummaryRow {
    label: String,
    pe: &'static str,
    compute_cycles: u64,
    stall_cycles: u64,
    total_cycles: u64,
    dram_bytes: u64,
    energy_joules: f64,
    frames_per_second: f64,
    frames_per_joule: f64,
    /// Relative to the first configuration.
    speedup: f64,
    energy_efficiency: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    model_name: &'a str,
    cost_table: &'a str,
    skipped_layers: &'a [String],
    configurations: &'a [SummaryRow],
}

struct Run {
    label: String,
    cfg: ArrayConfig,
    workloads: Vec<Workload>,
}

pub(super) fn run(args: &SimulateArgs, out: &mut Output) -> Result<(i32, Vec<InputDigest>)> {
    let src = ModelSource::load(&args.model, false)?;
    let mut inputs = src.inputs.clone();
    let costs = match &args.costs {
        Some(path) => {
            let table = CostTable::load(path)?;
            let bytes = fs::read(path).map_err(io_err(path))?;
            inputs.push(InputDigest {
                name: path.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
            table
        }
        None => CostTable::placeholder(),
    };
    let base = ArrayConfig {
        rows: args.sa.rows,
        cols: args.sa.cols,
        group_size: args.group,
        dram_bytes_per_cycle: args.dram_bytes_per_cycle,
        costs,
        ..ArrayConfig::default()
    };
    base.validate()?;

    // the array model has no fully connected mapping
    let (layers, skipped): (Vec<&LayerSpec>, Vec<&LayerSpec>) = src
        .manifest
        .layers
        .iter()
        .partition(|l| l.kind != LayerKind::FullyConnected);
    let layers: Vec<LayerSpec> = layers.into_iter().cloned().collect();
    let skipped: Vec<String> = skipped.into_iter().map(|l| l.name.clone()).collect();
    if layers.is_empty() {
        return Err(CliError::Usage("model has no convolution layers to simulate".into()));
    }

    let mut runs = Vec::new();
    for &pe in &args.pe {
        for &n in &args.shifts {
            if n == 0 || n > crate::MAX_BITS {
                return Err(CliError::Usage(format!("--shifts values must be in 1..={}", crate::MAX_BITS)));
            }
            runs.push(Run {
                label: format!("{}-n{n}-{pe}", args.mode.as_str()),
                cfg: ArrayConfig { pe_mode: pe, ..base.clone() },
                workloads: vec![Workload::uniform(args.mode, n); layers.len()],
            });
        }
    }
    for &b in &args.act_bits {
        if b == 0 || b > crate::MAX_BITS {
            return Err(CliError::Usage(format!("--act-bits values must be in 1..={}", crate::MAX_BITS)));
        }
        runs.push(Run {
            label: format!("act{b}"),
            cfg: base.clone(),
            workloads: vec![Workload::ActTrunc { act_bits: b }; layers.len()],
        });
    }
    if let Some(path) = &args.schedule {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let file: ScheduleFile = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Failed(format!("cannot parse {}: {e}", path.display())))?;
        inputs.push(InputDigest {
            name: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        let by_name: BTreeMap<&str, _> = file.layers.iter().map(|l| (l.name.as_str(), l)).collect();
        let workloads = layers
            .iter()
            .map(|l| {
                let rec = by_name
                    .get(l.name.as_str())
                    .ok_or_else(|| CliError::Failed(format!("schedule has no entry for layer `{}`", l.name)))?;
                Ok(Workload::Swis {
                    mode: file.mode,
                    shifts: LayerShifts::Scheduled(rec.assignment.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pe = file.target.pe_mode;
        runs.push(Run {
            label: format!("sched-{pe}"),
            cfg: ArrayConfig {
                pe_mode: pe,
                group_size: file.group_size,
                ..base.clone()
            },
            workloads,
        });
    }
    if runs.is_empty() {
        return Err(CliError::Usage("nothing to simulate".into()));
    }

    let mut reports: Vec<(String, SimReport)> = Vec::with_capacity(runs.len());
    for r in runs {
        let report = simulate_network(&layers, &r.workloads, &r.cfg)?;
        out.with_writer(&format!("sim-{}.json", r.label), |w| write_report_json(&report, w))?;
        out.with_writer(&format!("sim-{}.csv", r.label), |w| write_report_csv(&report, w))?;
        reports.push((r.label, report));
    }

    let first = &reports[0].1;
    let rows: Vec<SummaryRow> = reports
        .iter()
        .map(|(label, r)| SummaryRow {
            label: label.clone(),
            pe: r.config.pe_mode.as_str(),
            compute_cycles: r.compute_cycles,
            stall_cycles: r.stall_cycles,
            total_cycles: r.total_cycles,
            dram_bytes: r.dram.total(),
            energy_joules: r.energy_joules,
            frames_per_second: r.frames_per_second,
            frames_per_joule: r.frames_per_joule,
            speedup: first.total_cycles as f64 / r.total_cycles as f64,
            energy_efficiency: first.energy_joules / r.energy_joules,
        })
        .collect();
    out.json(
        "summary.json",
        &Summary {
            model_name: &src.manifest.model_name,
            cost_table: &first.config.costs.label,
            skipped_layers: &skipped,
            configurations: &rows,
        },
    )?;
    out.csv_rows("summary.csv", &rows)?;

    let ratios = dram_ratio_report(first);
    out.json("dram_ratio.json", &ratios)?;
    out.csv_rows("dram_ratio.csv", &ratios)?;
    Ok((0, inputs))
}
