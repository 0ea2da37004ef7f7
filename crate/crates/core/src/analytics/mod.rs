//! Closed-form lossless probabilities, storage compression accounting and
//! RMSE sweeps.

mod compression;
mod prob;
mod report;

pub use compression::{compression_ratio, dpred_compression, CompressionMethod, CompressionPoint};
pub use prob::{
    brute_force_lossless, p_layerwise, p_lossless, p_swis, p_swisc, LosslessMethod, ProbPoint,
};
pub use report::{rmse_report, table_configs, write_rows_csv, write_rows_json, ReportRow};

use num_rational::Rational64;

/// Rational → f64 for presentation only.
pub fn to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}
