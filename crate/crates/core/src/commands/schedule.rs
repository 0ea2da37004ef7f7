use clap::Args;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use super::{
    parse_rational, ArrayShape, CliError, InputDigest, ModelArgs, ModelSource, OutArgs, Output,
    QuantArgs, Result,
};
use crate::bitserial::PeMode;
use crate::model_io::write_quantized;
use crate::quantizer::{Metric, QuantMode, QuantizedModel};
use crate::scheduler::{schedule_layer, uniform_error, ScheduleAssignment, ScheduleTarget};

#[derive(Debug, Clone, Args)]
pub struct ScheduleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub quant: QuantArgs,
    /// Target average shifts per weight, e.g. 2.5 or 5/2.
    #[arg(long, value_parser = parse_rational)]
    pub target_shifts: Rational64,
    /// ss or ds.
    #[arg(long, default_value = "ss")]
    pub pe: PeMode,
    /// Array shape; columns set how many filters share a shift count.
    #[arg(long, default_value = "8x8")]
    pub sa: ArrayShape,
    /// Allowed per-filter shift counts (default: the two levels around the
    /// target, even counts for ds).
    #[arg(long, value_delimiter = ',')]
    pub levels: Vec<u8>,
    /// Filters demoted per greedy step.
    #[arg(long, default_value_t = 1)]
    pub demotion_step: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformPoint {
    pub shifts: u8,
    pub metric_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledLayerRecord {
    pub name: String,
    pub assignment: ScheduleAssignment,
    pub greedy_demotions: usize,
    pub metric_total: f64,
    /// Uniform assignments at the allowed levels around the target.
    pub uniform: Vec<UniformPoint>,
}

/// `schedule.json`: enough to re-simulate the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub model_name: String,
    pub mode: QuantMode,
    pub group_size: usize,
    pub metric: Metric,
    pub bits: u8,
    pub target: ScheduleTarget,
    pub layers: Vec<ScheduledLayerRecord>,
}

#[derive(Serialize)]
struct Row<'a> {
    layer: &'a str,
    filters: usize,
    target: String,
    achieved: String,
    group_shifts: String,
    metric: &'static str,
    scheduled: f64,
    uniform_below_shifts: Option<u8>,
    uniform_below: Option<f64>,
    uniform_above_shifts: Option<u8>,
    uniform_above: Option<f64>,
}

pub(super) fn run(args: &ScheduleArgs, out: &mut Output) -> Result<(i32, Vec<InputDigest>)> {
    let cfg = args.quant.config(1)?;
    let mut target = if args.levels.is_empty() {
        ScheduleTarget::bracketing(args.target_shifts, args.pe, args.sa.cols)
    } else {
        ScheduleTarget::new(args.target_shifts, args.pe, args.sa.cols, &args.levels)
    };
    target.demotion_step = args.demotion_step;
    target.validate(cfg.bits)?;
    if cfg.mode == QuantMode::LayerTrunc {
        return Err(CliError::Usage("scheduling applies to swis and swis-c".into()));
    }
    let src = ModelSource::load(&args.model, true)?;
    let tensors = src.tensors(cfg.bits, None)?;

    let below = target
        .allowed_shifts
        .iter()
        .rev()
        .find(|&&l| Rational64::from(i64::from(l)) <= target.target_avg)
        .copied();
    let above = target
        .allowed_shifts
        .iter()
        .find(|&&l| Rational64::from(i64::from(l)) >= target.target_avg)
        .copied();

    let mut records = Vec::new();
    let mut layers = Vec::new();
    for t in &tensors {
        let s = schedule_layer(t, &target, &cfg).map_err(|e| CliError::Failed(format!("layer `{}`: {e}", t.spec.name)))?;
        let mut uniform = Vec::new();
        for n in [below, above].into_iter().flatten() {
            if uniform.iter().all(|u: &UniformPoint| u.shifts != n) {
                uniform.push(UniformPoint {
                    shifts: n,
                    metric_total: uniform_error(t, n, &cfg)?.metric_total(&cfg.metric),
                });
            }
        }
        records.push(ScheduledLayerRecord {
            name: t.spec.name.clone(),
            greedy_demotions: s.greedy.demotions,
            metric_total: s.result.error.metric_total(&cfg.metric),
            assignment: s.assignment,
            uniform,
        });
        layers.push(s.result.layer);
    }

    let file = ScheduleFile {
        model_name: src.manifest.model_name.clone(),
        mode: cfg.mode,
        group_size: cfg.group_size,
        metric: cfg.metric,
        bits: cfg.bits,
        target: target.clone(),
        layers: records,
    };
    let rows: Vec<Row> = file
        .layers
        .iter()
        .map(|rec| {
            let pick = |n: Option<u8>| n.and_then(|n| rec.uniform.iter().find(|u| u.shifts == n));
            let seq: Vec<String> = rec.assignment.group_shifts.iter().map(u8::to_string).collect();
            Row {
                layer: &rec.name,
                filters: rec.assignment.filter_shifts.len(),
                target: target.target_avg.to_string(),
                achieved: rec.assignment.achieved_avg.to_string(),
                group_shifts: seq.join(" "),
                metric: cfg.metric.name(),
                scheduled: rec.metric_total,
                uniform_below_shifts: pick(below).map(|u| u.shifts),
                uniform_below: pick(below).map(|u| u.metric_total),
                uniform_above_shifts: pick(above).map(|u| u.shifts),
                uniform_above: pick(above).map(|u| u.metric_total),
            }
        })
        .collect();
    let model = QuantizedModel {
        model_name: file.model_name.clone(),
        bits: cfg.bits,
        layers,
    };
    out.json("schedule.json", &file)?;
    out.csv_rows("schedule.csv", &rows)?;
    out.write("model.swisq", &write_quantized(&model)?)?;
    Ok((0, src.inputs))
}
