use std::collections::HashMap;
use std::sync::OnceLock;

use super::{check_bits, QuantError, Result, ShiftMode, ShiftSet};
use crate::MAX_BITS;

/// Nearest representable value for one magnitude under one shift set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snap {
    pub decoded: u16,
    pub mask: u16,
}

#[derive(Debug)]
pub struct CatalogEntry {
    pub shifts: Vec<u8>,
    /// Indexed by magnitude, `0..2^B`.
    pub snap: Vec<Snap>,
}

/// Every shift set for one bit width, in lexicographic order per `N`, with a
/// precomputed nearest-value table for each.
#[derive(Debug)]
pub struct ShiftCatalog {
    bits: u8,
    by_len: Vec<Vec<CatalogEntry>>,
    index: HashMap<u16, (usize, usize)>,
}

impl ShiftCatalog {
    fn build(bits: u8) -> Self {
        let mut by_len: Vec<Vec<CatalogEntry>> = (0..=bits).map(|_| Vec::new()).collect();
        let mut index = HashMap::new();
        for n in 1..=bits {
            for shifts in combinations(bits, n) {
                let positions = shifts.iter().fold(0u16, |a, &s| a | 1 << s);
                let entry = CatalogEntry {
                    snap: snap_table(&shifts, bits),
                    shifts,
                };
                let list = &mut by_len[usize::from(n)];
                index.insert(positions, (usize::from(n), list.len()));
                list.push(entry);
            }
        }
        ShiftCatalog {
            bits,
            by_len,
            index,
        }
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    /// All `C(B, n)` sets of size `n`, lexicographically ordered.
    pub fn sets(&self, n: u8) -> &[CatalogEntry] {
        &self.by_len[usize::from(n)]
    }

    /// The contiguous window `offset..offset+n`.
    pub fn window(&self, offset: u8, n: u8) -> &CatalogEntry {
        let positions = ((1u32 << n) - 1) << offset;
        self.entry(positions as u16).expect("window inside bit width")
    }

    pub fn entry(&self, positions: u16) -> Option<&CatalogEntry> {
        self.index
            .get(&positions)
            .map(|&(n, i)| &self.by_len[n][i])
    }

    pub fn entry_for(&self, set: &ShiftSet) -> &CatalogEntry {
        self.entry(set.positions())
            .expect("validated shift sets are always catalogued")
    }
}

impl CatalogEntry {
    pub fn shift_set(&self, mode: ShiftMode, bits: u8) -> ShiftSet {
        ShiftSet::new(self.shifts.clone(), mode, bits).expect("catalog sets are valid")
    }
}

/// Shared catalog for `bits`, built on first use.
pub fn catalog(bits: u8) -> Result<&'static ShiftCatalog> {
    static CATALOGS: [OnceLock<ShiftCatalog>; MAX_BITS as usize + 1] =
        [const { OnceLock::new() }; MAX_BITS as usize + 1];
    check_bits(bits).map_err(|_| QuantError::InvalidBits(bits))?;
    Ok(CATALOGS[usize::from(bits)].get_or_init(|| ShiftCatalog::build(bits)))
}

/// `k`-subsets of `0..n` in lexicographic order.
pub(crate) fn combinations(n: u8, k: u8) -> Vec<Vec<u8>> {
    fn rec(start: u8, n: u8, k: u8, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if cur.len() == usize::from(k) {
            out.push(cur.clone());
            return;
        }
        let need = k - cur.len() as u8;
        for s in start..=n - need {
            cur.push(s);
            rec(s + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(0, n, k, &mut Vec::new(), &mut out);
    }
    out
}

/// For each magnitude, the closest subset sum; ties go to the smaller value.
fn snap_table(shifts: &[u8], bits: u8) -> Vec<Snap> {
    let mut cands: Vec<Snap> = (0u16..1 << shifts.len())
        .map(|mask| Snap {
            decoded: shifts
                .iter()
                .enumerate()
                .filter(|(j, _)| mask >> j & 1 == 1)
                .map(|(_, &s)| 1u16 << s)
                .sum(),
            mask,
        })
        .collect();
    cands.sort_by_key(|c| c.decoded);
    let mut table = Vec::with_capacity(1 << bits);
    let mut k = 0;
    for m in 0u16..(1u16 << bits) {
        while k + 1 < cands.len() && cands[k + 1].decoded <= m {
            k += 1;
        }
        let lo = cands[k];
        let pick = match cands.get(k + 1) {
            Some(&hi) if hi.decoded - m < m - lo.decoded => hi,
            _ => lo,
        };
        table.push(pick);
    }
    table
}
