use clap::Args;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{CliError, InputDigest, OutArgs, Output, Result};
use crate::analytics::{brute_force_lossless, p_lossless, LosslessMethod};
use crate::bitserial::{eval_reference_mac, eval_swis_mac, MacGroup};
use crate::model_io::{read_quantized, write_quantized, Sign, SignMagWeight};
use crate::quantizer::{
    dequant_group, quantize_group, quantize_tensor, GroupEncoding, Metric, QuantConfig, QuantMode,
    QuantizedModel, ShiftMode, ShiftSet,
};
use crate::synth::{synthetic_blob, synthetic_manifest, Arch};

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random M = 4 groups for the MAC check.
    #[arg(long, default_value_t = 100_000)]
    pub mac_groups: u64,
    /// Random groups (M ≤ 4, N ≤ 3) for the shift-selection optimality check.
    #[arg(long, default_value_t = 1_000)]
    pub opt_groups: u64,
    /// Corrupt the MAC result of this random group (self-test of the harness).
    #[arg(long, hide = true)]
    pub inject_fault: Option<u64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub mac_groups: u64,
    pub opt_groups: u64,
    pub inject_fault: Option<u64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            mac_groups: 100_000,
            opt_groups: 1_000,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub passed: bool,
    pub checked: u64,
    pub failures: u64,
    /// First failure, if any.
    pub detail: String,
}

impl SuiteResult {
    fn new(suite: &'static str) -> Self {
        SuiteResult {
            suite,
            passed: true,
            checked: 0,
            failures: 0,
            detail: String::new(),
        }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            if self.failures == 0 {
                self.detail = detail();
            }
            self.failures += 1;
            self.passed = false;
        }
    }
}

fn prob_suite() -> SuiteResult {
    let mut r = SuiteResult::new("prob");
    let bits = crate::DEFAULT_BITS;
    for m in LosslessMethod::ALL {
        for n in 0..=bits {
            let (p, o) = (p_lossless(m, n, bits), brute_force_lossless(m, n, bits));
            r.check(p == o, || format!("{} N={n}: closed form {p}, count {o}", m.as_str()));
        }
    }
    r
}

/// Every sparse shift set, sign pair and mask pair at M = 2, N ≤ 2, against
/// every pair of 4-bit activations.
fn mac_exhaustive_suite() -> SuiteResult {
    let mut r = SuiteResult::new("mac-exhaustive");
    let bits = crate::DEFAULT_BITS;
    let signs = [Sign::Pos, Sign::Neg];
    for n in 1..=2usize {
        for pos in 0u16..1 << bits {
            if pos.count_ones() as usize != n {
                continue;
            }
            let shifts: Vec<u8> = (0..bits).filter(|&s| pos >> s & 1 == 1).collect();
            let set = ShiftSet::new(shifts, ShiftMode::Sparse, bits).expect("valid set");
            for s0 in signs {
                for s1 in signs {
                    for m0 in 0u16..1 << n {
                        for m1 in 0u16..1 << n {
                            let enc = GroupEncoding::new(set.clone(), vec![s0, s1], vec![m0, m1])
                                .expect("valid encoding");
                            let w = dequant_group(&enc);
                            for a0 in 0u8..16 {
                                for a1 in 0u8..16 {
                                    let acts = vec![a0, a1];
                                    let want = eval_reference_mac(&acts, &w);
                                    let g = MacGroup::new(acts, enc.clone()).expect("sizes match");
                                    let got = i64::from(eval_swis_mac(&g));
                                    r.check(got == want, || {
                                        format!("set {:?} masks [{m0},{m1}] acts [{a0},{a1}]: {got} != {want}", set.shifts())
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    r
}

fn random_group(rng: &mut ChaCha8Rng, m: usize, bits: u8) -> Vec<SignMagWeight> {
    (0..m)
        .map(|_| {
            let mag: u16 = rng.random_range(0..1u16 << bits);
            let sign = if mag != 0 && rng.random::<bool>() { Sign::Neg } else { Sign::Pos };
            SignMagWeight::new(sign, mag, bits).expect("in range")
        })
        .collect()
}

const MODES: [QuantMode; 3] = [QuantMode::Swis, QuantMode::SwisC, QuantMode::LayerTrunc];

fn mac_random_suite(opts: &VerifyOptions) -> SuiteResult {
    let mut r = SuiteResult::new("mac-random");
    let bits = crate::DEFAULT_BITS;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for id in 0..opts.mac_groups {
        let m = 4;
        let n = rng.random_range(1..=bits);
        let mode = MODES[rng.random_range(0..MODES.len())];
        let group = random_group(&mut rng, m, bits);
        let acts: Vec<u8> = (0..m).map(|_| rng.random()).collect();
        let enc = quantize_group(&group, mode, n, bits, &Metric::Mse).expect("valid config");
        let want = eval_reference_mac(&acts, &dequant_group(&enc));
        let g = MacGroup::new(acts, enc).expect("sizes match");
        let mut got = i64::from(eval_swis_mac(&g));
        if opts.inject_fault == Some(id) {
            got += 1;
        }
        r.check(got == want, || {
            format!("group {id} (seed {}, {} M={m} N={n}): {got} != {want}", opts.seed, mode.as_str())
        });
    }
    r
}

/// Lowest achievable squared error for a fixed set, each weight taking its
/// best mask on its own.
fn best_sq_error(group: &[SignMagWeight], shifts: &[u8]) -> i64 {
    group
        .iter()
        .map(|w| {
            (0u32..1 << shifts.len())
                .map(|mask| {
                    let v: i64 = shifts
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| mask >> j & 1 == 1)
                        .map(|(_, &s)| 1i64 << s)
                        .sum();
                    (i64::from(w.magnitude()) - v).pow(2)
                })
                .min()
                .expect("non-empty")
        })
        .sum()
}

fn sq_error(group: &[SignMagWeight], enc: &GroupEncoding) -> i64 {
    group
        .iter()
        .zip(dequant_group(enc))
        .map(|(w, d)| (i64::from(w.value()) - i64::from(d)).pow(2))
        .sum()
}

/// Chosen sets against a brute force over every candidate set under MSE.
fn optimality_suite(opts: &VerifyOptions) -> SuiteResult {
    let mut r = SuiteResult::new("optimality");
    let bits = crate::DEFAULT_BITS;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_0971);
    for id in 0..opts.opt_groups {
        let m = rng.random_range(1..=4usize);
        let n = rng.random_range(1..=3u8);
        let group = random_group(&mut rng, m, bits);
        for mode in [QuantMode::Swis, QuantMode::SwisC] {
            let candidates: Vec<Vec<u8>> = match mode {
                QuantMode::Swis => (0u16..1 << bits)
                    .filter(|p| p.count_ones() == u32::from(n))
                    .map(|p| (0..bits).filter(|&s| p >> s & 1 == 1).collect())
                    .collect(),
                _ => (0..=bits - n).map(|o| (o..o + n).collect()).collect(),
            };
            let best = candidates.iter().map(|s| best_sq_error(&group, s)).min().expect("candidates");
            let enc = quantize_group(&group, mode, n, bits, &Metric::Mse).expect("valid config");
            let got = sq_error(&group, &enc);
            r.check(got == best, || {
                format!(
                    "group {id} (seed {}, {} M={m} N={n}): chose {:?} with error {got}, optimum {best}",
                    opts.seed,
                    mode.as_str(),
                    enc.shift_set.shifts()
                )
            });
        }
    }
    r
}

fn qfile_suite(opts: &VerifyOptions) -> SuiteResult {
    let mut r = SuiteResult::new("qfile-roundtrip");
    let manifest = synthetic_manifest(Arch::Tiny);
    let blob = synthetic_blob(&manifest, opts.seed);
    for mode in MODES {
        for (n, m) in [(1u8, 4usize), (3, 4), (2, 3), (8, 1)] {
            let cfg = QuantConfig {
                mode,
                shifts: n,
                group_size: m,
                metric: Metric::Mse,
                bits: crate::DEFAULT_BITS,
            };
            let layers = manifest
                .layers
                .iter()
                .map(|spec| {
                    let values = manifest.layer_weights(&blob, spec).expect("synthetic blob");
                    let t = crate::model_io::LayerTensor::from_real(spec.clone(), &values, cfg.bits, None)
                        .expect("valid tensor");
                    quantize_tensor(&t, &cfg).expect("valid config").layer
                })
                .collect();
            let model = QuantizedModel {
                model_name: manifest.model_name.clone(),
                bits: cfg.bits,
                layers,
            };
            let ok = write_quantized(&model)
                .and_then(|bytes| read_quantized(&bytes))
                .is_ok_and(|back| back == model);
            r.check(ok, || format!("{} N={n} M={m}: read back differs", mode.as_str()));
        }
    }
    r
}

/// Runs every suite. Results are in a fixed order.
pub fn run_suites(opts: &VerifyOptions) -> Vec<SuiteResult> {
    vec![
        prob_suite(),
        mac_exhaustive_suite(),
        mac_random_suite(opts),
        optimality_suite(opts),
        qfile_suite(opts),
    ]
}

#[derive(Serialize)]
struct Report<'a> {
    seed: u64,
    mac_groups: u64,
    opt_groups: u64,
    passed: bool,
    suites: &'a [SuiteResult],
}

pub(super) fn run(args: &VerifyArgs, out: &mut Output) -> Result<(i32, Vec<InputDigest>)> {
    if args.mac_groups == 0 || args.opt_groups == 0 {
        return Err(CliError::Usage("--mac-groups and --opt-groups must be positive".into()));
    }
    let opts = VerifyOptions {
        seed: args.seed,
        mac_groups: args.mac_groups,
        opt_groups: args.opt_groups,
        inject_fault: args.inject_fault,
    };
    let suites = run_suites(&opts);
    let passed = suites.iter().all(|s| s.passed);
    for s in &suites {
        let status = if s.passed { "ok" } else { "FAILED" };
        eprintln!("{:<16} {status:<6} {} checked, {} failed {}", s.suite, s.checked, s.failures, s.detail);
    }
    out.json(
        "verify.json",
        &Report {
            seed: opts.seed,
            mac_groups: opts.mac_groups,
            opt_groups: opts.opt_groups,
            passed,
            suites: &suites,
        },
    )?;
    out.csv_rows("verify.csv", &suites)?;
    Ok((if passed { 0 } else { 1 }, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> VerifyOptions {
        VerifyOptions {
            seed,
            mac_groups: 2_000,
            opt_groups: 50,
            inject_fault: None,
        }
    }

    #[test]
    fn all_suites_pass() {
        for s in run_suites(&small(3)) {
            assert!(s.passed, "{}: {}", s.suite, s.detail);
            assert!(s.checked > 0);
        }
    }

    #[test]
    fn injected_fault_names_group_and_seed() {
        let opts = VerifyOptions {
            inject_fault: Some(17),
            ..small(9)
        };
        let mac = mac_random_suite(&opts);
        assert!(!mac.passed);
        assert_eq!(mac.failures, 1);
        assert!(mac.detail.starts_with("group 17 (seed 9"), "{}", mac.detail);
    }

    #[test]
    fn brute_force_counts_zero_mask() {
        let w = [SignMagWeight::new(Sign::Pos, 3, 8).unwrap()];
        assert_eq!(best_sq_error(&w, &[7]), 9);
        assert_eq!(best_sq_error(&w, &[0, 1]), 0);
    }
}
