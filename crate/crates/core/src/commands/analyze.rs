use clap::{Args, ValueEnum};
use serde::Serialize;

use super::{CliError, InputDigest, MetricKind, ModelArgs, ModelSource, OutArgs, Output, Result};
use crate::analytics::{
    brute_force_lossless, compression_ratio, dpred_compression, p_lossless, rmse_report,
    table_configs, to_f64, write_rows_csv, CompressionMethod, LosslessMethod,
};
use crate::quantizer::Metric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeKind {
    /// Lossless probabilities, checked against the exhaustive count.
    Prob,
    /// Storage compression over an (M, N) grid.
    Compression,
    /// Dequantized RMSE per layer for each method.
    Rmse,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    pub kind: AnalyzeKind,
    /// Model for rmse and the data-dependent compression rows.
    #[command(flatten)]
    pub model: ModelArgs,
    /// Only this layer (rmse).
    #[arg(long)]
    pub layer: Option<String>,
    /// Shift counts N (default: 0..=B for prob, 1..=8 for compression,
    /// 2,3,4,5 for rmse).
    #[arg(long, value_delimiter = ',')]
    pub shifts: Vec<u8>,
    /// Group sizes M (default: 2..=16 for compression, 1,4 for rmse).
    #[arg(long, value_delimiter = ',')]
    pub group: Vec<usize>,
    #[arg(long, value_enum, default_value_t = MetricKind::Mse)]
    pub metric: MetricKind,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = crate::DEFAULT_BITS)]
    pub bits: u8,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Serialize)]
struct ProbRow {
    method: &'static str,
    #[serde(rename = "N")]
    shifts: u8,
    p: String,
    p_value: f64,
    oracle: String,
    exact: bool,
}

#[derive(Serialize)]
struct CompressionRow {
    method: &'static str,
    #[serde(rename = "M")]
    group_size: usize,
    #[serde(rename = "N")]
    shifts: Option<u8>,
    ratio: String,
    ratio_value: f64,
}

fn defaults<T: Clone>(given: &[T], fallback: impl FnOnce() -> Vec<T>) -> Vec<T> {
    if given.is_empty() {
        fallback()
    } else {
        given.to_vec()
    }
}

fn check_bits(bits: u8) -> Result<()> {
    if bits == 0 || bits > crate::MAX_BITS {
        return Err(CliError::Usage(format!("--bits must be in 1..={}", crate::MAX_BITS)));
    }
    Ok(())
}

pub(super) fn run(args: &AnalyzeArgs, out: &mut Output) -> Result<(i32, Vec<InputDigest>)> {
    check_bits(args.bits)?;
    let bits = args.bits;
    let mut inputs = Vec::new();
    match args.kind {
        AnalyzeKind::Prob => {
            let ns = defaults(&args.shifts, || (0..=bits).collect());
            if let Some(&n) = ns.iter().find(|&&n| n > bits) {
                return Err(CliError::Usage(format!("N = {n} exceeds B = {bits}")));
            }
            let mut rows = Vec::new();
            for m in LosslessMethod::ALL {
                for &n in &ns {
                    let p = p_lossless(m, n, bits);
                    let oracle = brute_force_lossless(m, n, bits);
                    rows.push(ProbRow {
                        method: m.as_str(),
                        shifts: n,
                        p: p.to_string(),
                        p_value: to_f64(p),
                        oracle: oracle.to_string(),
                        exact: p == oracle,
                    });
                }
            }
            out.json("prob.json", &rows)?;
            out.csv_rows("prob.csv", &rows)?;
            if let Some(bad) = rows.iter().find(|r| !r.exact) {
                return Err(CliError::Failed(format!(
                    "closed form for {} at N = {} disagrees with the exhaustive count",
                    bad.method, bad.shifts
                )));
            }
        }
        AnalyzeKind::Compression => {
            let ns = defaults(&args.shifts, || (1..=8).collect());
            let ms = defaults(&args.group, || (2..=16).collect());
            if ns.contains(&0) || ms.contains(&0) {
                return Err(CliError::Usage("group sizes and shift counts must be positive".into()));
            }
            let mut rows = Vec::new();
            for method in [CompressionMethod::Swis, CompressionMethod::SwisC] {
                for &m in &ms {
                    for &n in &ns {
                        let r = compression_ratio(method, m, n, bits).expect("positive sizes");
                        rows.push(CompressionRow {
                            method: method.as_str(),
                            group_size: m,
                            shifts: Some(n),
                            ratio: r.to_string(),
                            ratio_value: to_f64(r),
                        });
                    }
                }
            }
            if args.model.manifest.is_some() || args.model.synthetic.is_some() {
                let src = ModelSource::load(&args.model, true)?;
                let tensors = src.tensors(bits, args.layer.as_deref())?;
                for &m in &ms {
                    let (mut dense, mut stored) = (0i64, 0i64);
                    for t in &tensors {
                        let r = dpred_compression(t, m);
                        // combine as total dense bits over total stored bits
                        let groups = (t.spec.out_channels
                            * crate::quantizer::group_layout(&t.spec, m).groups_per_filter())
                            as i64;
                        let d = i64::from(bits) * m as i64 * groups;
                        dense += d;
                        stored += (num_rational::Rational64::from(d) / r).to_integer();
                    }
                    let r = num_rational::Rational64::new(dense, stored.max(1));
                    rows.push(CompressionRow {
                        method: CompressionMethod::Dpred.as_str(),
                        group_size: m,
                        shifts: None,
                        ratio: r.to_string(),
                        ratio_value: to_f64(r),
                    });
                }
                inputs = src.inputs;
            }
            out.json("compression.json", &rows)?;
            out.csv_rows("compression.csv", &rows)?;
        }
        AnalyzeKind::Rmse => {
            let ns = defaults(&args.shifts, || vec![2, 3, 4, 5]);
            let ms = defaults(&args.group, || vec![1, 4]);
            if ns.iter().any(|&n| n == 0 || n > bits) || ms.contains(&0) {
                return Err(CliError::Usage(format!(
                    "shift counts must be in 1..={bits} and group sizes positive"
                )));
            }
            let metric = match args.metric {
                MetricKind::Mse => Metric::Mse,
                MetricKind::Msepp => Metric::MsePlusPlus { alpha: args.alpha },
            };
            metric.validate()?;
            let src = ModelSource::load(&args.model, true)?;
            let tensors = src.tensors(bits, args.layer.as_deref())?;
            let configs = table_configs(&ns, &ms, metric);
            let mut rows = Vec::new();
            for t in &tensors {
                rows.extend(rmse_report(t, &configs)?);
            }
            out.json("rmse.json", &rows)?;
            out.with_writer("rmse.csv", |w| write_rows_csv(&rows, w))?;
            inputs = src.inputs;
        }
    }
    Ok((0, inputs))
}
