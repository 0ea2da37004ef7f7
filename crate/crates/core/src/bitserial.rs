//! Bit-exact MAC evaluation and per-group cycle counts.
//!
//! The shared-sparsity MAC walks the group's shift list: for every shift it
//! masks the activations with that shift's mask bits, applies the weight
//! signs, sums across the group and accumulates the partial sum shifted into
//! place. The bit-serial baseline does the same over activation bits with
//! parallel weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantizer::{truncate_activation, GroupEncoding};

/// Largest group the 32-bit accumulator is sized for.
pub const MAX_MAC_GROUP: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MacError {
    #[error("{activations} activations for a group of {weights} weights")]
    LengthMismatch { activations: usize, weights: usize },
    #[error("group size {0} exceeds the accumulator bound of {MAX_MAC_GROUP}")]
    GroupTooLarge(usize),
    #[error("unknown PE mode `{0}` (expected ss or ds)")]
    UnknownPeMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PeMode {
    #[serde(rename = "ss")]
    SingleShift,
    #[serde(rename = "ds")]
    DoubleShift,
}

impl PeMode {
    pub fn shifts_per_cycle(self) -> u32 {
        match self {
            PeMode::SingleShift => 1,
            PeMode::DoubleShift => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PeMode::SingleShift => "ss",
            PeMode::DoubleShift => "ds",
        }
    }
}

impl fmt::Display for PeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PeMode {
    type Err = MacError;

    fn from_str(s: &str) -> Result<Self, MacError> {
        match s {
            "ss" | "single" | "single-shift" => Ok(PeMode::SingleShift),
            "ds" | "double" | "double-shift" => Ok(PeMode::DoubleShift),
            other => Err(MacError::UnknownPeMode(other.to_string())),
        }
    }
}

/// Activations paired with one encoded weight group.
#[derive(Debug, Clone, PartialEq)]
pub struct MacGroup {
    pub activations: Vec<u8>,
    pub encoding: GroupEncoding,
}

impl MacGroup {
    pub fn new(activations: Vec<u8>, encoding: GroupEncoding) -> Result<Self, MacError> {
        if activations.len() != encoding.group_size() {
            return Err(MacError::LengthMismatch {
                activations: activations.len(),
                weights: encoding.group_size(),
            });
        }
        if activations.len() > MAX_MAC_GROUP {
            return Err(MacError::GroupTooLarge(activations.len()));
        }
        Ok(MacGroup {
            activations,
            encoding,
        })
    }
}

/// `Σ_j (Σ_i sign_i·(a_i & m_i[j])) << s_j`.
pub fn eval_swis_mac(g: &MacGroup) -> i32 {
    let enc = &g.encoding;
    let mut acc: i32 = 0;
    for (j, &shift) in enc.shift_set.shifts().iter().enumerate() {
        let partial: i32 = g
            .activations
            .iter()
            .enumerate()
            .filter(|&(i, _)| enc.mask_bit(i, j))
            .map(|(i, &a)| enc.signs[i].factor() * i32::from(a))
            .sum();
        acc += partial << shift;
    }
    acc
}

/// Plain integer dot product.
pub fn eval_reference_mac(activations: &[u8], weights: &[i32]) -> i64 {
    activations
        .iter()
        .zip(weights)
        .map(|(&a, &w)| i64::from(a) * i64::from(w))
        .sum()
}

/// Activation-serial baseline: activations truncated to their top `n_act`
/// bits, weights applied in parallel, one activation bit per step.
pub fn eval_bitserial_trunc_mac(activations: &[u8], weights: &[i32], n_act: u8) -> i64 {
    assert_eq!(activations.len(), weights.len(), "length mismatch");
    let truncated: Vec<u8> = activations
        .iter()
        .map(|&a| truncate_activation(a, n_act))
        .collect();
    let low = 8u8.saturating_sub(n_act);
    let mut acc: i64 = 0;
    for bit in low..8 {
        let partial: i64 = truncated
            .iter()
            .zip(weights)
            .filter(|(&a, _)| a >> bit & 1 == 1)
            .map(|(_, &w)| i64::from(w))
            .sum();
        acc += partial << bit;
    }
    acc
}

/// Cycles a PE spends on one group at `n_shifts`. Double-shift PEs process
/// two shifts per cycle, so odd counts leave one lane idle in the last cycle.
pub fn group_cycles(n_shifts: u32, mode: PeMode) -> u64 {
    u64::from(n_shifts.div_ceil(mode.shifts_per_cycle()))
}

/// Per-PE energy constants, in picojoules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeEnergy {
    /// One M-wide mask + sign + adder-tree pass (one shift).
    pub shift_op_pj: f64,
    /// Per active PE cycle: activation buffering, sign inversion, accumulator.
    pub pe_cycle_pj: f64,
}

impl PeEnergy {
    pub fn is_valid(&self) -> bool {
        [self.shift_op_pj, self.pe_cycle_pj]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// A processing element: shift mode, group width and energy constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeModel {
    pub mode: PeMode,
    pub group_size: usize,
    pub energy: PeEnergy,
}

impl PeModel {
    pub fn group_cycles(&self, n_shifts: u32) -> u64 {
        group_cycles(n_shifts, self.mode)
    }
}
