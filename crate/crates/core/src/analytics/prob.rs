use num_integer::binomial;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LosslessMethod {
    #[serde(rename = "swis")]
    Swis,
    #[serde(rename = "swis-c")]
    SwisC,
    #[serde(rename = "layerwise")]
    Layerwise,
}

impl LosslessMethod {
    pub const ALL: [LosslessMethod; 3] = [
        LosslessMethod::Swis,
        LosslessMethod::SwisC,
        LosslessMethod::Layerwise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LosslessMethod::Swis => "swis",
            LosslessMethod::SwisC => "swis-c",
            LosslessMethod::Layerwise => "layerwise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbPoint {
    pub method: LosslessMethod,
    pub shifts: u8,
    pub p: Rational64,
}

fn choose(k: i64, n: i64) -> i64 {
    match (k, n) {
        (_, 0) => 1,
        (k, n) if k < 0 || n > k => 0,
        (k, n) => binomial(k, n),
    }
}

fn over_all_values(count: i64, bits: u8) -> Rational64 {
    Rational64::new(count, 1 << bits)
}

/// Values with at most `N` set bits: `Σ_{n≤N} C(B,n) / 2^B`.
pub fn p_swis(n: u8, bits: u8) -> Rational64 {
    let b = i64::from(bits);
    let count = (0..=i64::from(n.min(bits))).map(|k| choose(b, k)).sum();
    over_all_values(count, bits)
}

/// Values whose set bits fit one length-`N` window. Per popcount `n` there
/// are `C(N,n)·(B+1-N) - (B-N)·C(N-1,n)` such values: every window's subsets
/// minus the ones shared by adjacent windows.
pub fn p_swisc(n: u8, bits: u8) -> Rational64 {
    let (b, big_n) = (i64::from(bits), i64::from(n.min(bits)));
    let count = (0..=big_n)
        .map(|k| choose(big_n, k) * (b + 1 - big_n) - (b - big_n) * choose(big_n - 1, k))
        .sum();
    over_all_values(count, bits)
}

/// One fixed window for everything: `Σ_{n≤N} C(N,n) / 2^B`.
pub fn p_layerwise(n: u8, bits: u8) -> Rational64 {
    let big_n = i64::from(n.min(bits));
    let count = (0..=big_n).map(|k| choose(big_n, k)).sum();
    over_all_values(count, bits)
}

pub fn p_lossless(method: LosslessMethod, n: u8, bits: u8) -> Rational64 {
    match method {
        LosslessMethod::Swis => p_swis(n, bits),
        LosslessMethod::SwisC => p_swisc(n, bits),
        LosslessMethod::Layerwise => p_layerwise(n, bits),
    }
}

/// Exhaustive count over all `2^B` values: a value is lossless when some
/// admissible shift set covers every one of its set bits.
pub fn brute_force_lossless(method: LosslessMethod, n: u8, bits: u8) -> Rational64 {
    let n = n.min(bits);
    let covered = |v: u32, window: u32| v & !window == 0;
    let window = |offset: u8| ((1u32 << n) - 1) << offset;
    let count = (0u32..1 << bits)
        .filter(|&v| match method {
            LosslessMethod::Swis => v.count_ones() <= u32::from(n),
            LosslessMethod::SwisC => (0..=bits - n).any(|o| covered(v, window(o))),
            LosslessMethod::Layerwise => covered(v, window(0)),
        })
        .count();
    over_all_values(count as i64, bits)
}
