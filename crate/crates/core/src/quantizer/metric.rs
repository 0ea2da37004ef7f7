use serde::{Deserialize, Serialize};

use super::{dequant_group, GroupEncoding, QuantError, Result};
use crate::model_io::SignMagWeight;

/// Group error metric. Both are divided by the group size `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Mse,
    /// `(α·(Σe)² + Σe²) / M`
    MsePlusPlus { alpha: f64 },
}

impl Default for Metric {
    fn default() -> Self {
        Metric::MsePlusPlus { alpha: 1.0 }
    }
}

impl Metric {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Metric::MsePlusPlus { alpha } if !(alpha.is_finite() && alpha >= 0.0) => {
                Err(QuantError::InvalidAlpha(alpha))
            }
            _ => Ok(()),
        }
    }

    /// Numerator of the metric; comparisons within one group size use this
    /// directly. The integer sums are exact, only `α` is real.
    pub fn numerator(&self, stats: &ErrorStats) -> f64 {
        match *self {
            Metric::Mse => stats.squared_sum as f64,
            Metric::MsePlusPlus { alpha } => {
                let s = stats.signed_sum as f64;
                alpha * s * s + stats.squared_sum as f64
            }
        }
    }

    /// Metric value for a group of `group_size` lanes.
    pub fn score(&self, stats: &ErrorStats, group_size: usize) -> f64 {
        self.numerator(stats) / group_size as f64
    }

    /// Sum of group scores from `Σ_g (Σe)²` and `Σe²` over groups of `M`.
    pub fn total(&self, drift_sq: i64, squared_sum: i64, group_size: usize) -> f64 {
        let num = match *self {
            Metric::Mse => squared_sum as f64,
            Metric::MsePlusPlus { alpha } => alpha * drift_sq as f64 + squared_sum as f64,
        };
        num / group_size.max(1) as f64
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::MsePlusPlus { .. } => "msepp",
        }
    }
}

/// Exact integer error sums over a set of weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub signed_sum: i64,
    pub squared_sum: i64,
    pub count: usize,
}

impl ErrorStats {
    pub fn push(&mut self, original: i32, decoded: i32) {
        let e = i64::from(original) - i64::from(decoded);
        self.signed_sum += e;
        self.squared_sum += e * e;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &ErrorStats) {
        self.signed_sum += other.signed_sum;
        self.squared_sum += other.squared_sum;
        self.count += other.count;
    }

    pub fn between(original: &[SignMagWeight], enc: &GroupEncoding) -> ErrorStats {
        assert_eq!(original.len(), enc.group_size(), "group length mismatch");
        let mut stats = ErrorStats::default();
        for (w, d) in original.iter().zip(dequant_group(enc)) {
            stats.push(w.value(), d);
        }
        stats
    }

    pub fn mse(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.squared_sum as f64 / self.count as f64
        }
    }
}

pub fn mse(group: &[SignMagWeight], enc: &GroupEncoding) -> f64 {
    ErrorStats::between(group, enc).mse()
}

pub fn signed_error(group: &[SignMagWeight], enc: &GroupEncoding) -> i64 {
    ErrorStats::between(group, enc).signed_sum
}

pub fn msepp(group: &[SignMagWeight], enc: &GroupEncoding, alpha: f64) -> f64 {
    let stats = ErrorStats::between(group, enc);
    Metric::MsePlusPlus { alpha }.score(&stats, group.len())
}
