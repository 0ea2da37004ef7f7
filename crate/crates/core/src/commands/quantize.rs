use clap::Args;
use serde::Serialize;

use super::{InputDigest, ModelArgs, ModelSource, OutArgs, Output, QuantArgs, Result};
use crate::model_io::write_quantized;
use crate::quantizer::{quantize_tensor, QuantConfig, QuantizedModel};

#[derive(Debug, Clone, Args)]
pub struct QuantizeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub quant: QuantArgs,
    /// Shifts per group N.
    #[arg(long, default_value_t = 3)]
    pub shifts: u8,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Serialize)]
struct LayerRow {
    layer: String,
    kind: &'static str,
    filters: usize,
    weights: usize,
    groups: usize,
    effective_shifts: f64,
    rmse: f64,
    mse_int: f64,
    metric_total: f64,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    model_name: &'a str,
    config: QuantConfig,
    /// Shift count averaged over all weights.
    effective_shifts: f64,
    layers: &'a [LayerRow],
}

pub(super) fn run(args: &QuantizeArgs, out: &mut Output) -> Result<(i32, Vec<InputDigest>)> {
    let cfg = args.quant.config(args.shifts)?;
    let src = ModelSource::load(&args.model, true)?;
    let tensors = src.tensors(cfg.bits, None)?;
    let mut layers = Vec::with_capacity(tensors.len());
    let mut rows = Vec::with_capacity(tensors.len());
    for t in &tensors {
        let r = quantize_tensor(t, &cfg)?;
        rows.push(LayerRow {
            layer: t.spec.name.clone(),
            kind: t.spec.kind.as_str(),
            filters: t.spec.out_channels,
            weights: t.spec.weight_count(),
            groups: r.layer.groups.len(),
            effective_shifts: r.layer.effective_shifts(),
            rmse: r.error.stats.mse().sqrt() * t.scale,
            mse_int: r.error.stats.mse(),
            metric_total: r.error.metric_total(&cfg.metric),
        });
        layers.push(r.layer);
    }
    let model = QuantizedModel {
        model_name: src.manifest.model_name.clone(),
        bits: cfg.bits,
        layers,
    };
    out.write("model.swisq", &write_quantized(&model)?)?;
    out.json(
        "metrics.json",
        &Report {
            model_name: &model.model_name,
            config: cfg,
            effective_shifts: model.effective_shifts(),
            layers: &rows,
        },
    )?;
    out.csv_rows("metrics.csv", &rows)?;
    Ok((0, src.inputs))
}
