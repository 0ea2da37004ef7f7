//! Per-group shift selection for SWIS, SWIS-C and layer-wise truncation.
//!
//! A group of `M` sign-magnitude weights shares a supporting vector of `N`
//! bit positions. Each weight stores one mask bit per position, so its
//! decoded magnitude is `Σ_j 2^{s_j}·m_i[j]`. Selection is exhaustive: every
//! admissible shift set is tried, each weight snaps to its nearest
//! representable value, and the set with the lowest group metric wins.

mod catalog;
mod layer;
mod metric;
mod select;

pub use catalog::{catalog, ShiftCatalog};
pub use layer::{
    group_layout, quantize_filter, quantize_tensor, quantize_tensor_with_shifts, FilterError,
    GroupLayout, LayerError, QuantizedLayer, QuantizedModel, QuantResult,
};
pub use metric::{msepp, mse, signed_error, ErrorStats, Metric};
pub use select::{
    dequant_group, fit_masks, quantize_group, quantize_layer_trunc, select_shifts_swis,
    select_shifts_swisc, trunc_group, truncate_activation,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_io::{LayerKind, Sign};
use crate::MAX_BITS;

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("shift count {n} outside 1..={bits}")]
    InvalidShifts { n: u8, bits: u8 },
    #[error("bit width {0} outside 1..={MAX_BITS}")]
    InvalidBits(u8),
    #[error("group size must be at least 1")]
    InvalidGroupSize,
    #[error("MSE++ coefficient must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),
    #[error("invalid shift set: {0}")]
    InvalidShiftSet(String),
    #[error("invalid group encoding: {0}")]
    InvalidEncoding(String),
    #[error("layer kind `{}` is not supported", .0.as_str())]
    UnsupportedLayer(LayerKind),
    #[error("expected {expected} per-filter shift counts, got {got}")]
    ShiftCountMismatch { expected: usize, got: usize },
    #[error("unknown quantization mode `{0}` (expected swis, swis-c or trunc)")]
    UnknownMode(String),
}

pub type Result<T> = std::result::Result<T, QuantError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShiftMode {
    #[serde(rename = "sparse")]
    Sparse,
    #[serde(rename = "consecutive")]
    Consecutive,
}

/// The supporting vector of one group: `N` strictly increasing bit positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShiftSet {
    shifts: Vec<u8>,
    mode: ShiftMode,
}

impl ShiftSet {
    pub fn new(shifts: Vec<u8>, mode: ShiftMode, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        if shifts.is_empty() || shifts.len() > usize::from(bits) {
            return Err(QuantError::InvalidShiftSet(format!(
                "{} shifts, expected 1..={bits}",
                shifts.len()
            )));
        }
        if shifts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QuantError::InvalidShiftSet(format!(
                "{shifts:?} is not strictly increasing"
            )));
        }
        if shifts.iter().any(|&s| s >= bits) {
            return Err(QuantError::InvalidShiftSet(format!(
                "{shifts:?} has a position outside 0..{bits}"
            )));
        }
        if mode == ShiftMode::Consecutive && shifts.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(QuantError::InvalidShiftSet(format!(
                "{shifts:?} is not a contiguous window"
            )));
        }
        Ok(ShiftSet { shifts, mode })
    }

    /// Window `offset..offset+n`.
    pub fn window(offset: u8, n: u8, bits: u8) -> Result<Self> {
        if u16::from(offset) + u16::from(n) > u16::from(bits) {
            return Err(QuantError::InvalidShiftSet(format!(
                "window {offset}+{n} exceeds {bits} bits"
            )));
        }
        ShiftSet::new((offset..offset + n).collect(), ShiftMode::Consecutive, bits)
    }

    pub fn shifts(&self) -> &[u8] {
        &self.shifts
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn mode(&self) -> ShiftMode {
        self.mode
    }

    pub fn offset(&self) -> u8 {
        self.shifts[0]
    }

    /// Bit positions as a bitmask over `0..B`.
    pub fn positions(&self) -> u16 {
        self.shifts.iter().fold(0u16, |acc, &s| acc | (1 << s))
    }

    /// Magnitude selected by `mask` (bit `j` of `mask` is `m[j]`).
    pub fn decode(&self, mask: u16) -> u16 {
        self.shifts
            .iter()
            .enumerate()
            .filter(|(j, _)| mask >> j & 1 == 1)
            .map(|(_, &s)| 1u16 << s)
            .sum()
    }
}

/// A quantized group: shared shift set, per-weight signs and masks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupEncoding {
    pub shift_set: ShiftSet,
    pub signs: Vec<Sign>,
    /// `masks[i]` bit `j` is `m_i[j]`.
    pub masks: Vec<u16>,
}

impl GroupEncoding {
    pub fn new(shift_set: ShiftSet, signs: Vec<Sign>, masks: Vec<u16>) -> Result<Self> {
        let enc = GroupEncoding {
            shift_set,
            signs,
            masks,
        };
        enc.validate()?;
        Ok(enc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.signs.is_empty() {
            return Err(QuantError::InvalidEncoding("empty group".into()));
        }
        if self.signs.len() != self.masks.len() {
            return Err(QuantError::InvalidEncoding(format!(
                "{} signs but {} masks",
                self.signs.len(),
                self.masks.len()
            )));
        }
        let n = self.shift_set.len();
        if let Some(m) = self.masks.iter().find(|&&m| u32::from(m) >> n != 0) {
            return Err(QuantError::InvalidEncoding(format!(
                "mask {m:#b} uses more than {n} shifts"
            )));
        }
        Ok(())
    }

    pub fn group_size(&self) -> usize {
        self.signs.len()
    }

    pub fn shift_count(&self) -> usize {
        self.shift_set.len()
    }

    /// Whether weight `i` has mask bit `j` set.
    pub fn mask_bit(&self, i: usize, j: usize) -> bool {
        self.masks[i] >> j & 1 == 1
    }

    pub fn magnitude(&self, i: usize) -> u16 {
        self.shift_set.decode(self.masks[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuantMode {
    #[serde(rename = "swis")]
    Swis,
    #[serde(rename = "swis-c")]
    SwisC,
    #[serde(rename = "trunc")]
    LayerTrunc,
}

impl QuantMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantMode::Swis => "swis",
            QuantMode::SwisC => "swis-c",
            QuantMode::LayerTrunc => "trunc",
        }
    }

    pub fn shift_mode(self) -> ShiftMode {
        match self {
            QuantMode::Swis => ShiftMode::Sparse,
            _ => ShiftMode::Consecutive,
        }
    }
}

impl fmt::Display for QuantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuantMode {
    type Err = QuantError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swis" => Ok(QuantMode::Swis),
            "swis-c" | "swis_c" | "swisc" => Ok(QuantMode::SwisC),
            "trunc" | "layer-trunc" | "layer_trunc" => Ok(QuantMode::LayerTrunc),
            other => Err(QuantError::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub mode: QuantMode,
    pub shifts: u8,
    pub group_size: usize,
    pub metric: Metric,
    pub bits: u8,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            mode: QuantMode::Swis,
            shifts: 3,
            group_size: 4,
            metric: Metric::default(),
            bits: crate::DEFAULT_BITS,
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits)?;
        check_shifts(self.shifts, self.bits)?;
        if self.group_size == 0 {
            return Err(QuantError::InvalidGroupSize);
        }
        self.metric.validate()
    }
}

pub(crate) fn check_bits(bits: u8) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(QuantError::InvalidBits(bits));
    }
    Ok(())
}

pub(crate) fn check_shifts(n: u8, bits: u8) -> Result<()> {
    if n == 0 || n > bits {
        return Err(QuantError::InvalidShifts { n, bits });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_set_validation() {
        assert!(ShiftSet::new(vec![0, 7], ShiftMode::Sparse, 8).is_ok());
        assert!(ShiftSet::new(vec![7, 0], ShiftMode::Sparse, 8).is_err());
        assert!(ShiftSet::new(vec![3, 3], ShiftMode::Sparse, 8).is_err());
        assert!(ShiftSet::new(vec![8], ShiftMode::Sparse, 8).is_err());
        assert!(ShiftSet::new(vec![], ShiftMode::Sparse, 8).is_err());
        assert!(ShiftSet::new(vec![2, 4], ShiftMode::Consecutive, 8).is_err());
        assert!(ShiftSet::window(6, 2, 8).is_ok());
        assert!(ShiftSet::window(7, 2, 8).is_err());
    }

    #[test]
    fn decode_uses_mask_bits_in_shift_order() {
        let set = ShiftSet::new(vec![0, 7], ShiftMode::Sparse, 8).unwrap();
        assert_eq!(set.decode(0b11), 129);
        assert_eq!(set.decode(0b10), 128);
        assert_eq!(set.positions(), 0b1000_0001);
    }

    #[test]
    fn encoding_rejects_oversized_mask() {
        let set = ShiftSet::window(0, 2, 8).unwrap();
        assert!(GroupEncoding::new(set.clone(), vec![Sign::Pos], vec![0b100]).is_err());
        assert!(GroupEncoding::new(set, vec![Sign::Pos, Sign::Neg], vec![0b1]).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("swis-c".parse::<QuantMode>().unwrap(), QuantMode::SwisC);
        assert!(matches!(
            "bogus".parse::<QuantMode>(),
            Err(QuantError::UnknownMode(_))
        ));
    }
}
