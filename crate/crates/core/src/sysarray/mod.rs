//! Analytical model of an output-stationary systolic array of SWIS PEs.
//!
//! Output pixels map to array rows and filters to columns. Each PE walks a
//! filter's depthwise groups; for every group the activation vector is held
//! for as many cycles as the group's shifts need, so a tile costs
//! `groups × group_cycles(N) + active_rows + active_cols - 2` cycles including fill and
//! drain. Weights cross DRAM once (compressed); activations are re-read when
//! the input does not fit its buffer. Traffic that outpaces compute turns
//! into stall cycles.

mod sim;

pub use sim::{
    dram_ratio_report, simulate_layer, simulate_network, tile_layer, write_report_csv,
    write_report_json, DramTraffic, LayerReport, RatioRow, SimReport, SramAccesses, TilePlan,
};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitserial::PeMode;
use crate::model_io::LayerKind;
use crate::quantizer::QuantMode;
use crate::scheduler::ScheduleAssignment;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("layer `{layer}`: {kind} layers are not supported by the array model", kind = .kind.as_str())]
    UnsupportedLayer { layer: String, kind: LayerKind },
    #[error("invalid array config: {0}")]
    InvalidConfig(String),
    #[error("invalid cost table: {0}")]
    InvalidCosts(String),
    #[error("layer `{layer}`: {msg}")]
    Contract { layer: String, msg: String },
    #[error("{layers} layers but {workloads} workloads")]
    WorkloadCount { layers: usize, workloads: usize },
    #[error("cannot read cost table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse cost table {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Energy constants (pJ) and clock (MHz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    #[serde(default)]
    pub label: String,
    pub frequency_mhz: f64,
    /// One M-wide mask, sign and adder-tree pass.
    pub shift_op_pj: f64,
    /// Per active PE cycle.
    pub pe_cycle_pj: f64,
    /// One group record (signs, shift fields, masks) from the weight buffer.
    pub weight_sram_read_pj: f64,
    /// One M-wide activation vector from the activation buffer.
    pub act_sram_read_pj: f64,
    pub out_sram_write_pj: f64,
    pub dram_pj_per_byte: f64,
    pub static_pj_per_cycle: f64,
}

const PLACEHOLDER_COSTS: &str = include_str!("../../costs/placeholder.json");

impl CostTable {
    /// The shipped placeholder table.
    pub fn placeholder() -> CostTable {
        serde_json::from_str(PLACEHOLDER_COSTS).expect("shipped cost table parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CostTable> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| SimError::Io {
            path: shown.clone(),
            source,
        })?;
        let table: CostTable =
            serde_json::from_str(&text).map_err(|source| SimError::Parse { path: shown, source })?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_mhz.is_finite() && self.frequency_mhz > 0.0) {
            return Err(SimError::InvalidCosts("frequency_mhz must be positive".into()));
        }
        let fields = [
            ("shift_op_pj", self.shift_op_pj),
            ("pe_cycle_pj", self.pe_cycle_pj),
            ("weight_sram_read_pj", self.weight_sram_read_pj),
            ("act_sram_read_pj", self.act_sram_read_pj),
            ("out_sram_write_pj", self.out_sram_write_pj),
            ("dram_pj_per_byte", self.dram_pj_per_byte),
            ("static_pj_per_cycle", self.static_pj_per_cycle),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidCosts(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    pub group_size: usize,
    pub pe_mode: PeMode,
    pub act_buffer_bytes: u64,
    /// Recorded for the report; weight DRAM traffic is compulsory whatever
    /// its size.
    pub weight_buffer_bytes: u64,
    pub out_buffer_bytes: u64,
    pub dram_bytes_per_cycle: u64,
    pub costs: CostTable,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            rows: 8,
            cols: 8,
            group_size: 4,
            pe_mode: PeMode::SingleShift,
            act_buffer_bytes: 64 * 1024,
            weight_buffer_bytes: 64 * 1024,
            out_buffer_bytes: 16 * 1024,
            dram_bytes_per_cycle: 16,
            costs: CostTable::placeholder(),
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("rows", self.rows as u64),
            ("cols", self.cols as u64),
            ("group_size", self.group_size as u64),
            ("act_buffer_bytes", self.act_buffer_bytes),
            ("weight_buffer_bytes", self.weight_buffer_bytes),
            ("out_buffer_bytes", self.out_buffer_bytes),
            ("dram_bytes_per_cycle", self.dram_bytes_per_cycle),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(SimError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        self.costs.validate()
    }
}

/// Shift counts for one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerShifts {
    Uniform(u8),
    Scheduled(ScheduleAssignment),
}

/// What one layer runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Workload {
    /// SWIS, SWIS-C or layer-truncated weights on shift-serial PEs.
    Swis { mode: QuantMode, shifts: LayerShifts },
    /// Dense 8-bit weights with activations fed bit-serially at `act_bits`.
    ActTrunc { act_bits: u8 },
}

impl Workload {
    pub fn uniform(mode: QuantMode, n: u8) -> Workload {
        Workload::Swis {
            mode,
            shifts: LayerShifts::Uniform(n),
        }
    }
}
