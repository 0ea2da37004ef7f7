use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::model_io::LayerTensor;
use crate::quantizer::{quantize_tensor, Metric, QuantConfig, QuantMode, Result};

/// One long-format report row: `layer, method, M, N, metric, value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub layer: String,
    pub method: String,
    #[serde(rename = "M")]
    pub group_size: usize,
    #[serde(rename = "N")]
    pub shifts: f64,
    pub metric: String,
    pub value: f64,
}

/// Sweep configs in the order of the classic comparison table: for each `N`
/// (descending), SWIS and SWIS-C at every group size, then layer truncation.
pub fn table_configs(shifts: &[u8], group_sizes: &[usize], metric: Metric) -> Vec<QuantConfig> {
    let mut ns = shifts.to_vec();
    ns.sort_unstable_by(|a, b| b.cmp(a));
    let mut out = Vec::new();
    for n in ns {
        for &m in group_sizes {
            for mode in [QuantMode::Swis, QuantMode::SwisC] {
                out.push(QuantConfig {
                    mode,
                    shifts: n,
                    group_size: m,
                    metric,
                    bits: crate::DEFAULT_BITS,
                });
            }
        }
        out.push(QuantConfig {
            mode: QuantMode::LayerTrunc,
            shifts: n,
            group_size: 1,
            metric,
            bits: crate::DEFAULT_BITS,
        });
    }
    out
}

/// Quantizes `layer` under each config and reports dequantized-domain RMSE.
pub fn rmse_report(layer: &LayerTensor, configs: &[QuantConfig]) -> Result<Vec<ReportRow>> {
    configs
        .iter()
        .map(|cfg| {
            let cfg = QuantConfig {
                bits: layer.bits,
                ..*cfg
            };
            let r = quantize_tensor(layer, &cfg)?;
            Ok(ReportRow {
                layer: layer.spec.name.clone(),
                method: cfg.mode.as_str().to_string(),
                group_size: cfg.group_size,
                shifts: f64::from(cfg.shifts),
                metric: "rmse".to_string(),
                value: r.error.stats.mse().sqrt() * layer.scale,
            })
        })
        .collect()
}

pub fn write_rows_csv<W: Write>(rows: &[ReportRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()
}

pub fn write_rows_json<W: Write>(rows: &[ReportRow], out: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(out, rows)?;
    Ok(())
}
