use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::model_io::{shift_field_bits, LayerTensor};
use crate::quantizer::group_layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompressionMethod {
    #[serde(rename = "swis")]
    Swis,
    #[serde(rename = "swis-c")]
    SwisC,
    #[serde(rename = "dpred")]
    Dpred,
}

impl CompressionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CompressionMethod::Swis => "swis",
            CompressionMethod::SwisC => "swis-c",
            CompressionMethod::Dpred => "dpred",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionPoint {
    pub method: CompressionMethod,
    pub group_size: usize,
    pub shifts: u8,
    pub ratio: Rational64,
}

/// Dense `B`-bit storage over SWIS storage for one group.
///
/// A group stores `M` sign bits and `M·N` mask bits, plus `N` shift fields
/// (SWIS) or a single offset field (SWIS-C). DPRed depends on the data and
/// is handled by [`dpred_compression`]; asking for it here returns `None`.
pub fn compression_ratio(
    method: CompressionMethod,
    group_size: usize,
    n: u8,
    bits: u8,
) -> Option<Rational64> {
    let (m, n) = (group_size as i64, i64::from(n));
    if m < 1 || n < 1 {
        return None;
    }
    let field = i64::from(shift_field_bits(bits));
    let stored = match method {
        CompressionMethod::Swis => m + field * n + m * n,
        CompressionMethod::SwisC => m + field + m * n,
        CompressionMethod::Dpred => return None,
    };
    Some(Rational64::new(i64::from(bits) * m, stored))
}

/// Group-wise bitwidth compression: each group stores its magnitudes at the
/// width of its largest one, plus a width field and one sign bit per weight.
pub fn dpred_compression(layer: &LayerTensor, group_size: usize) -> Rational64 {
    let layout = group_layout(&layer.spec, group_size);
    let field = i64::from(shift_field_bits(layer.bits));
    let m = group_size as i64;
    let mut groups = 0i64;
    let mut stored = 0i64;
    for f in 0..layer.spec.out_channels {
        let filter = layer.filter(f);
        for g in 0..layout.groups_per_filter() {
            let max = layout
                .gather(filter, g)
                .iter()
                .map(|w| w.magnitude())
                .max()
                .unwrap_or(0);
            let width = i64::from(16 - max.leading_zeros() as u16);
            stored += m * width + field + m;
            groups += 1;
        }
    }
    Rational64::new(i64::from(layer.bits) * m * groups, stored)
}
