use super::catalog::{catalog, CatalogEntry};
use super::{
    check_shifts, ErrorStats, GroupEncoding, Metric, QuantMode, Result, ShiftMode,
    ShiftSet,
};
use crate::model_io::SignMagWeight;

/// Signed decoded values `sign_i · Σ_j 2^{s_j}·m_i[j]`.
pub fn dequant_group(enc: &GroupEncoding) -> Vec<i32> {
    enc.signs
        .iter()
        .zip(&enc.masks)
        .map(|(s, &m)| s.factor() * i32::from(enc.shift_set.decode(m)))
        .collect()
}

fn stats_for(group: &[SignMagWeight], entry: &CatalogEntry) -> ErrorStats {
    let mut stats = ErrorStats::default();
    for w in group {
        let decoded = i32::from(entry.snap[usize::from(w.magnitude())].decoded);
        stats.push(w.value(), w.sign().factor() * decoded);
    }
    stats
}

fn encode_with(group: &[SignMagWeight], entry: &CatalogEntry, set: ShiftSet) -> GroupEncoding {
    GroupEncoding {
        shift_set: set,
        signs: group.iter().map(|w| w.sign()).collect(),
        masks: group
            .iter()
            .map(|w| entry.snap[usize::from(w.magnitude())].mask)
            .collect(),
    }
}

/// Nearest-value masks for a fixed shift set. Ties go to the smaller
/// magnitude; signs are copied from the input.
pub fn fit_masks(group: &[SignMagWeight], shift_set: &ShiftSet, bits: u8) -> Result<GroupEncoding> {
    let cat = catalog(bits)?;
    if shift_set.shifts().iter().any(|&s| s >= bits) {
        return Err(super::QuantError::InvalidShiftSet(format!(
            "{:?} outside {bits} bits",
            shift_set.shifts()
        )));
    }
    let entry = cat.entry_for(shift_set);
    Ok(encode_with(group, entry, shift_set.clone()))
}

fn argmin<'a>(
    group: &[SignMagWeight],
    candidates: impl Iterator<Item = &'a CatalogEntry>,
    metric: &Metric,
) -> &'a CatalogEntry {
    let mut best: Option<(&CatalogEntry, f64)> = None;
    for entry in candidates {
        let cost = metric.numerator(&stats_for(group, entry));
        // Strict improvement keeps the earliest (lexicographically smallest)
        // candidate on ties.
        if best.is_none_or(|(_, c)| cost < c) {
            best = Some((entry, cost));
        }
    }
    best.expect("at least one candidate").0
}

/// Exhaustive search over all `C(B, N)` sparse shift sets.
pub fn select_shifts_swis(
    group: &[SignMagWeight],
    n: u8,
    bits: u8,
    metric: &Metric,
) -> Result<GroupEncoding> {
    check_shifts(n, bits)?;
    let cat = catalog(bits)?;
    let entry = argmin(group, cat.sets(n).iter(), metric);
    Ok(encode_with(group, entry, entry.shift_set(ShiftMode::Sparse, bits)))
}

/// Exhaustive search over the `B - N + 1` contiguous windows.
pub fn select_shifts_swisc(
    group: &[SignMagWeight],
    n: u8,
    bits: u8,
    metric: &Metric,
) -> Result<GroupEncoding> {
    check_shifts(n, bits)?;
    let cat = catalog(bits)?;
    let entry = argmin(group, (0..=bits - n).map(|o| cat.window(o, n)), metric);
    Ok(encode_with(
        group,
        entry,
        entry.shift_set(ShiftMode::Consecutive, bits),
    ))
}

/// Layer-wise truncation of one group: keep the top `N` bit positions,
/// round to nearest (half up) and clip at the window maximum.
pub fn trunc_group(group: &[SignMagWeight], n: u8, bits: u8) -> Result<GroupEncoding> {
    check_shifts(n, bits)?;
    let offset = bits - n;
    let max_q = (1u32 << n) - 1;
    let masks = group
        .iter()
        .map(|w| {
            let m = u32::from(w.magnitude());
            let q = if offset == 0 {
                m
            } else {
                (m + (1 << (offset - 1))) >> offset
            };
            q.min(max_q) as u16
        })
        .collect();
    Ok(GroupEncoding {
        shift_set: ShiftSet::window(offset, n, bits)?,
        signs: group.iter().map(|w| w.sign()).collect(),
        masks,
    })
}

/// Layer-wise truncation applied to consecutive groups of `group_size`.
pub fn quantize_layer_trunc(
    weights: &[SignMagWeight],
    n: u8,
    bits: u8,
    group_size: usize,
) -> Result<Vec<GroupEncoding>> {
    if group_size == 0 {
        return Err(super::QuantError::InvalidGroupSize);
    }
    weights
        .chunks(group_size)
        .map(|g| trunc_group(g, n, bits))
        .collect()
}

pub fn quantize_group(
    group: &[SignMagWeight],
    mode: QuantMode,
    n: u8,
    bits: u8,
    metric: &Metric,
) -> Result<GroupEncoding> {
    match mode {
        QuantMode::Swis => select_shifts_swis(group, n, bits, metric),
        QuantMode::SwisC => select_shifts_swisc(group, n, bits, metric),
        QuantMode::LayerTrunc => trunc_group(group, n, bits),
    }
}

/// Clears the low `8 - N` bits of an 8-bit activation.
pub fn truncate_activation(a: u8, n: u8) -> u8 {
    match n {
        0 => 0,
        n if n >= 8 => a,
        n => a & !((1u8 << (8 - n)) - 1),
    }
}
