//! Non-uniform per-filter shift budgets.
//!
//! Scheduling runs in two phases. A greedy pass starts every filter at the
//! smallest allowed level above the target and repeatedly demotes the filter
//! whose next demotion costs the least error until the layer average hits the
//! target; filters are then sorted by their greedy shift count. The second
//! pass cuts the sorted filters into consecutive groups of `sa_cols` (the
//! filters that run side by side on the array) and enumerates every
//! nondecreasing per-group level sequence that meets the target exactly,
//! keeping the one with the lowest total error.
//!
//! Every filter in a conv layer has the same weight count, so weight-weighted
//! and filter-weighted averages coincide; budgets are kept as exact integer
//! shift sums.

use std::collections::BTreeSet;
use std::fmt;

use num_rational::Rational64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitserial::PeMode;
use crate::model_io::LayerTensor;
use crate::quantizer::{
    quantize_filter, quantize_tensor_with_shifts, FilterError, Metric, QuantConfig, QuantError,
    QuantResult,
};

/// Largest number of simultaneous filter groups the sequence search accepts.
pub const MAX_FILTER_GROUPS: usize = 64;
/// Largest number of allowed levels the sequence search accepts.
pub const MAX_LEVELS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule target: {0}")]
    InvalidTarget(String),
    #[error("target average {target} is not reachable with {filters} filters; nearest feasible averages: {}", fmt_neighbors(.below, .above))]
    Infeasible {
        target: Rational64,
        filters: usize,
        below: Option<Rational64>,
        above: Option<Rational64>,
    },
    #[error("{groups} simultaneous filter groups exceed the search limit of {MAX_FILTER_GROUPS}; raise the array width")]
    TooManyGroups { groups: usize },
    #[error("{0} allowed levels exceed the search limit of {MAX_LEVELS}")]
    TooManyLevels(usize),
    #[error(transparent)]
    Quant(#[from] QuantError),
}

fn fmt_neighbors(below: &Option<Rational64>, above: &Option<Rational64>) -> String {
    let show = |r: &Option<Rational64>| r.map_or_else(|| "none".to_string(), |r| r.to_string());
    format!("below {}, above {}", show(below), show(above))
}

pub type Result<T> = std::result::Result<T, ScheduleError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleTarget {
    /// Shifts per weight, averaged over the layer.
    pub target_avg: Rational64,
    pub pe_mode: PeMode,
    /// Filters that run simultaneously and must share a shift count.
    pub sa_cols: usize,
    pub allowed_shifts: BTreeSet<u8>,
    /// Filters moved down per greedy step.
    pub demotion_step: usize,
}

impl ScheduleTarget {
    pub fn new(target_avg: Rational64, pe_mode: PeMode, sa_cols: usize, allowed: &[u8]) -> Self {
        ScheduleTarget {
            target_avg,
            pe_mode,
            sa_cols,
            allowed_shifts: allowed.iter().copied().collect(),
            demotion_step: 1,
        }
    }

    /// Target with the two levels that bracket it: neighbouring integers for
    /// single-shift PEs, neighbouring even counts for double-shift PEs.
    pub fn bracketing(target_avg: Rational64, pe_mode: PeMode, sa_cols: usize) -> Self {
        let step = i64::from(pe_mode.shifts_per_cycle());
        let lo = (target_avg / step).floor().to_integer() * step;
        let hi = (target_avg / step).ceil().to_integer() * step;
        let clamp = |v: i64| v.clamp(0, i64::from(u8::MAX)) as u8;
        ScheduleTarget::new(target_avg, pe_mode, sa_cols, &[clamp(lo), clamp(hi)])
    }

    pub fn validate(&self, bits: u8) -> Result<()> {
        let bad = |msg: String| Err(ScheduleError::InvalidTarget(msg));
        let (Some(&min), Some(&max)) = (self.allowed_shifts.first(), self.allowed_shifts.last())
        else {
            return bad("no allowed shift counts".into());
        };
        if min == 0 || max > bits {
            return bad(format!("allowed shift counts must lie in 1..={bits}"));
        }
        if self.sa_cols == 0 {
            return bad("array width must be at least 1".into());
        }
        if self.demotion_step == 0 {
            return bad("demotion step must be at least 1".into());
        }
        if self.target_avg < Rational64::from(i64::from(min))
            || self.target_avg > Rational64::from(i64::from(max))
        {
            return bad(format!(
                "target {} outside allowed range [{min}, {max}]",
                self.target_avg
            ));
        }
        if self.pe_mode == PeMode::DoubleShift && self.allowed_shifts.iter().any(|n| n % 2 != 0) {
            return bad("double-shift PEs need even shift counts".into());
        }
        if self.allowed_shifts.len() > MAX_LEVELS {
            return Err(ScheduleError::TooManyLevels(self.allowed_shifts.len()));
        }
        Ok(())
    }

    fn levels(&self) -> Vec<u8> {
        self.allowed_shifts.iter().copied().collect()
    }

    /// Exact shift total the layer must reach, if the target is integral
    /// over `filters` filters.
    fn target_sum(&self, filters: usize) -> Option<i64> {
        let t = self.target_avg * Rational64::from(filters as i64);
        t.is_integer().then(|| t.to_integer())
    }
}

/// Result of the two-phase schedule for one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleAssignment {
    /// Filters in scheduled order: entry `i` runs in filter group `i / sa_cols`.
    pub filter_order: Vec<usize>,
    /// Nondecreasing shift count per filter group.
    pub group_shifts: Vec<u8>,
    /// Shift count per filter, indexed by original filter.
    pub filter_shifts: Vec<u8>,
    pub achieved_avg: Rational64,
    pub sa_cols: usize,
}

impl ScheduleAssignment {
    /// Filter groups in scheduled order: `(shift count, filters)`.
    pub fn tiles(&self) -> impl Iterator<Item = (u8, &[usize])> {
        self.filter_order
            .chunks(self.sa_cols)
            .zip(&self.group_shifts)
            .map(|(fs, &n)| (n, fs))
    }
}

/// Greedy phase output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreedyResult {
    pub filter_shifts: Vec<u8>,
    /// Filters sorted by shift count, then next-demotion cost, then index.
    pub order: Vec<usize>,
    pub demotions: usize,
}

/// Per-(filter, level) quantization errors, filled on demand.
pub struct ErrorTable<'a> {
    layer: &'a LayerTensor,
    cfg: QuantConfig,
    levels: Vec<u8>,
    cells: Vec<Option<FilterError>>,
}

impl<'a> ErrorTable<'a> {
    pub fn new(layer: &'a LayerTensor, cfg: &QuantConfig, levels: &[u8]) -> Self {
        ErrorTable {
            layer,
            cfg: *cfg,
            levels: levels.to_vec(),
            cells: vec![None; layer.spec.out_channels * levels.len()],
        }
    }

    fn slot(&self, f: usize, li: usize) -> usize {
        f * self.levels.len() + li
    }

    fn compute(&self, f: usize, li: usize) -> Result<FilterError> {
        Ok(quantize_filter(self.layer, f, self.levels[li], &self.cfg)?.1)
    }

    pub fn get(&mut self, f: usize, li: usize) -> Result<FilterError> {
        let slot = self.slot(f, li);
        if let Some(e) = self.cells[slot] {
            return Ok(e);
        }
        let e = self.compute(f, li)?;
        self.cells[slot] = Some(e);
        Ok(e)
    }

    /// Computes the listed cells in parallel.
    pub fn fill(&mut self, wanted: &[(usize, usize)]) -> Result<()> {
        let missing: Vec<(usize, usize)> = wanted
            .iter()
            .copied()
            .filter(|&(f, li)| self.cells[self.slot(f, li)].is_none())
            .collect();
        let computed: Vec<FilterError> = missing
            .par_iter()
            .map(|&(f, li)| self.compute(f, li))
            .collect::<Result<_>>()?;
        for ((f, li), e) in missing.into_iter().zip(computed) {
            let slot = self.slot(f, li);
            self.cells[slot] = Some(e);
        }
        Ok(())
    }

    pub fn fill_all(&mut self) -> Result<()> {
        let all: Vec<(usize, usize)> = (0..self.layer.spec.out_channels)
            .flat_map(|f| (0..self.levels.len()).map(move |li| (f, li)))
            .collect();
        self.fill(&all)
    }

    pub fn metric(&self) -> Metric {
        self.cfg.metric
    }
}

/// Error increase from quantizing filter `f` at `to` shifts instead of `from`.
pub fn filter_demotion_cost(
    layer: &LayerTensor,
    f: usize,
    from: u8,
    to: u8,
    cfg: &QuantConfig,
) -> Result<f64> {
    let at = |n: u8| -> Result<f64> { Ok(quantize_filter(layer, f, n, cfg)?.1.metric_total(&cfg.metric)) };
    Ok(at(to)? - at(from)?)
}

/// Whether `count` filters can each take a level from `levels` and sum to
/// exactly `sum`; also returns the nearest reachable sums on either side.
fn reachable_sums(levels: &[u8], count: usize, sum: i64) -> (bool, Option<i64>, Option<i64>) {
    let max = i64::from(*levels.last().expect("levels")) * count as i64;
    let mut reach = vec![false; max as usize + 1];
    reach[0] = true;
    for i in 0..count {
        let top = i64::from(*levels.last().unwrap()) * i as i64;
        let mut next = vec![false; max as usize + 1];
        for s in 0..=top as usize {
            if reach[s] {
                for &l in levels {
                    next[s + usize::from(l)] = true;
                }
            }
        }
        reach = next;
    }
    let hit = (0..=max).contains(&sum) && reach[sum as usize];
    let below = (0..sum.min(max + 1)).rev().find(|&s| reach[s as usize]);
    let above = (sum.max(-1) + 1..=max).find(|&s| reach[s as usize]);
    (hit, below, above)
}

fn is_arithmetic(levels: &[u8]) -> bool {
    levels.windows(3).all(|w| w[1] - w[0] == w[2] - w[1])
}

/// Whether filters at `current` levels, each moving down to any allowed
/// level, can shed exactly `need` shifts in total.
fn can_shed(levels: &[u8], current: &[usize], need: i64) -> bool {
    let need = need as usize;
    let mut reach = vec![false; need + 1];
    reach[0] = true;
    for &li in current {
        let mut next = reach.clone();
        for s in 0..=need {
            if !reach[s] {
                continue;
            }
            for lower in &levels[..li] {
                let d = usize::from(levels[li] - lower);
                if s + d <= need {
                    next[s + d] = true;
                }
            }
        }
        reach = next;
    }
    reach[need]
}

fn infeasible(target: &ScheduleTarget, filters: usize) -> ScheduleError {
    let f = filters as i64;
    let scaled = target.target_avg * Rational64::from(f);
    let (_, below, above) = reachable_sums(&target.levels(), filters, scaled.ceil().to_integer());
    let above = if scaled.is_integer() {
        above
    } else {
        reachable_sums(&target.levels(), filters, scaled.floor().to_integer()).2
    };
    ScheduleError::Infeasible {
        target: target.target_avg,
        filters,
        below: below.map(|s| Rational64::new(s, f)),
        above: above.map(|s| Rational64::new(s, f)),
    }
}

fn check_feasible(target: &ScheduleTarget, filters: usize) -> Result<i64> {
    let sum = target.target_sum(filters).ok_or_else(|| infeasible(target, filters))?;
    if !reachable_sums(&target.levels(), filters, sum).0 {
        return Err(infeasible(target, filters));
    }
    Ok(sum)
}

/// Filters by shift count, then by the cost of their next demotion, then
/// by index: within a level, the cheapest filters to demote come first and
/// so receive the lower levels in the sequence search.
fn order_filters(levels: &[u8], current: &[usize], cost: &[f64]) -> Vec<usize> {
    let key = |f: usize| if current[f] == 0 { 0.0 } else { cost[f] };
    let mut order: Vec<usize> = (0..current.len()).collect();
    order.sort_by(|&a, &b| {
        levels[current[a]]
            .cmp(&levels[current[b]])
            .then(key(a).total_cmp(&key(b)))
            .then(a.cmp(&b))
    });
    order
}

fn demotion_costs(table: &mut ErrorTable<'_>, current: &[usize]) -> Result<Vec<f64>> {
    let metric = table.metric();
    let wanted: Vec<(usize, usize)> = current
        .iter()
        .enumerate()
        .filter(|(_, &li)| li > 0)
        .flat_map(|(f, &li)| [(f, li), (f, li - 1)])
        .collect();
    table.fill(&wanted)?;
    current
        .iter()
        .enumerate()
        .map(|(f, &li)| {
            if li == 0 {
                return Ok(0.0);
            }
            Ok(table.get(f, li - 1)?.metric_total(&metric) - table.get(f, li)?.metric_total(&metric))
        })
        .collect()
}

/// Greedy demotion over a shared error table.
pub fn greedy_demote_with(table: &mut ErrorTable<'_>, target: &ScheduleTarget) -> Result<GreedyResult> {
    let layer = table.layer;
    target.validate(layer.bits)?;
    let levels = target.levels();
    let filters = layer.spec.out_channels;
    let target_sum = check_feasible(target, filters)?;

    if let Some(li) = levels.iter().position(|&l| Rational64::from(i64::from(l)) == target.target_avg) {
        let current = vec![li; filters];
        let cost = demotion_costs(table, &current)?;
        return Ok(GreedyResult {
            order: order_filters(&levels, &current, &cost),
            filter_shifts: vec![levels[li]; filters],
            demotions: 0,
        });
    }
    let start = levels
        .iter()
        .position(|&l| Rational64::from(i64::from(l)) > target.target_avg)
        .expect("validated target lies below the largest level");
    let metric = table.metric();
    let mut current = vec![start; filters];
    let mut sum = i64::from(levels[start]) * filters as i64;
    let arithmetic = is_arithmetic(&levels);

    let mut cost = demotion_costs(table, &current)?;

    let mut demotions = 0;
    while sum > target_sum {
        for _ in 0..target.demotion_step {
            if sum == target_sum {
                break;
            }
            let mut best: Option<usize> = None;
            for f in 0..filters {
                let li = current[f];
                if li == 0 {
                    continue;
                }
                let after = sum - i64::from(levels[li] - levels[li - 1]);
                if after < target_sum {
                    continue;
                }
                if best.is_some_and(|b| cost[f].total_cmp(&cost[b]).is_ge()) {
                    continue;
                }
                if !arithmetic {
                    let mut trial = current.clone();
                    trial[f] = li - 1;
                    if !can_shed(&levels, &trial, after - target_sum) {
                        continue;
                    }
                }
                best = Some(f);
            }
            let Some(f) = best else {
                return Err(infeasible(target, filters));
            };
            let li = current[f];
            sum -= i64::from(levels[li] - levels[li - 1]);
            current[f] = li - 1;
            demotions += 1;
            if li - 1 > 0 {
                let here = table.get(f, li - 1)?.metric_total(&metric);
                cost[f] = table.get(f, li - 2)?.metric_total(&metric) - here;
            }
        }
    }
    Ok(GreedyResult {
        order: order_filters(&levels, &current, &cost),
        filter_shifts: current.iter().map(|&li| levels[li]).collect(),
        demotions,
    })
}

/// Greedy demotion: see the module docs.
pub fn greedy_demote(layer: &LayerTensor, target: &ScheduleTarget, cfg: &QuantConfig) -> Result<GreedyResult> {
    let mut table = ErrorTable::new(layer, cfg, &target.levels());
    greedy_demote_with(&mut table, target)
}

struct Search<'t> {
    /// `value[g][l]`: approximate metric total of group `g` at level `l`.
    value: Vec<Vec<f64>>,
    /// `exact[g][l]`: integer `(Σ(Σe)², Σe²)` totals.
    exact: Vec<Vec<(i64, i64)>>,
    /// Real filters per group.
    weight: Vec<i64>,
    /// `suffix_min[g][l]`: lower bound on groups `g..` at levels `≥ l`.
    suffix_min: Vec<Vec<f64>>,
    /// Real filters in groups `g..`.
    suffix_weight: Vec<i64>,
    levels: &'t [u8],
    metric: Metric,
    group_size: usize,
    best: Option<(f64, Vec<usize>)>,
    seq: Vec<usize>,
}

impl Search<'_> {
    fn run(&mut self, g: usize, min_level: usize, need: i64, approx: f64, exact: (i64, i64)) {
        let groups = self.weight.len();
        if g == groups {
            if need != 0 {
                return;
            }
            let v = self.metric.total(exact.0, exact.1, self.group_size);
            if self.best.as_ref().is_none_or(|(b, _)| v < *b) {
                self.best = Some((v, self.seq.clone()));
            }
            return;
        }
        for li in min_level..self.levels.len() {
            let rest = self.suffix_weight[g];
            let lo = i64::from(self.levels[li]) * rest;
            let hi = i64::from(*self.levels.last().unwrap()) * rest;
            if need < lo {
                break;
            }
            if need > hi {
                return;
            }
            if let Some((b, _)) = &self.best {
                let bound = approx + self.suffix_min[g][li];
                if bound > *b + 1e-9 * b.abs().max(1.0) {
                    // bounds only grow with the level floor
                    break;
                }
            }
            let (a, q) = self.exact[g][li];
            self.seq.push(li);
            self.run(
                g + 1,
                li,
                need - i64::from(self.levels[li]) * self.weight[g],
                approx + self.value[g][li],
                (exact.0 + a, exact.1 + q),
            );
            self.seq.pop();
        }
    }
}

/// Phase two: best nondecreasing per-filter-group level sequence over the
/// sorted filters. Pad filters (to a multiple of `sa_cols`) carry no cost and
/// no budget.
pub fn assign_filter_groups_with(
    table: &mut ErrorTable<'_>,
    sorted_filters: &[usize],
    target: &ScheduleTarget,
) -> Result<ScheduleAssignment> {
    let layer = table.layer;
    target.validate(layer.bits)?;
    let filters = sorted_filters.len();
    if filters != layer.spec.out_channels {
        return Err(ScheduleError::InvalidTarget(format!(
            "filter order has {filters} entries for {} filters",
            layer.spec.out_channels
        )));
    }
    let levels = target.levels();
    let target_sum = check_feasible(target, filters)?;
    let groups = filters.div_ceil(target.sa_cols);
    if groups > MAX_FILTER_GROUPS {
        return Err(ScheduleError::TooManyGroups { groups });
    }
    table.fill_all()?;
    let metric = table.metric();
    let chunks: Vec<&[usize]> = sorted_filters.chunks(target.sa_cols).collect();
    let mut exact = vec![vec![(0i64, 0i64); levels.len()]; groups];
    let mut value = vec![vec![0.0f64; levels.len()]; groups];
    let mut group_size = 1;
    for (g, members) in chunks.iter().enumerate() {
        for li in 0..levels.len() {
            let mut tot = FilterError::default();
            for &f in *members {
                tot.add(&table.get(f, li)?);
            }
            group_size = group_size.max(tot.group_size);
            exact[g][li] = (tot.drift_sq, tot.stats.squared_sum);
            value[g][li] = tot.metric_total(&metric);
        }
    }
    let weight: Vec<i64> = chunks.iter().map(|c| c.len() as i64).collect();
    let mut suffix_weight = vec![0i64; groups + 1];
    let mut suffix_min = vec![vec![0.0f64; levels.len()]; groups + 1];
    for g in (0..groups).rev() {
        suffix_weight[g] = suffix_weight[g + 1] + weight[g];
        let mut running = f64::INFINITY;
        for li in (0..levels.len()).rev() {
            running = running.min(value[g][li]);
            suffix_min[g][li] = suffix_min[g + 1][li] + running;
        }
    }
    let mut search = Search {
        value,
        exact,
        weight,
        suffix_min,
        suffix_weight,
        levels: &levels,
        metric,
        group_size,
        best: None,
        seq: Vec::with_capacity(groups),
    };
    search.run(0, 0, target_sum, 0.0, (0, 0));
    let Some((_, seq)) = search.best else {
        return Err(infeasible_grouped(target, &chunks));
    };
    let group_shifts: Vec<u8> = seq.iter().map(|&li| levels[li]).collect();
    let mut filter_shifts = vec![0u8; filters];
    for (members, &n) in chunks.iter().zip(&group_shifts) {
        for &f in *members {
            filter_shifts[f] = n;
        }
    }
    let total: i64 = filter_shifts.iter().map(|&n| i64::from(n)).sum();
    Ok(ScheduleAssignment {
        filter_order: sorted_filters.to_vec(),
        group_shifts,
        filter_shifts,
        achieved_avg: Rational64::new(total, filters as i64),
        sa_cols: target.sa_cols,
    })
}

/// Nearest averages reachable when whole filter groups share a level.
fn infeasible_grouped(target: &ScheduleTarget, chunks: &[&[usize]]) -> ScheduleError {
    let filters: usize = chunks.iter().map(|c| c.len()).sum();
    let f = filters as i64;
    let mut reach = BTreeSet::from([0i64]);
    for c in chunks {
        reach = reach
            .iter()
            .flat_map(|&s| target.allowed_shifts.iter().map(move |&l| s + i64::from(l) * c.len() as i64))
            .collect();
    }
    let scaled = target.target_avg * Rational64::from(f);
    let below = reach.iter().rev().find(|&&s| Rational64::from(s) < scaled).copied();
    let above = reach.iter().find(|&&s| Rational64::from(s) > scaled).copied();
    ScheduleError::Infeasible {
        target: target.target_avg,
        filters,
        below: below.map(|s| Rational64::new(s, f)),
        above: above.map(|s| Rational64::new(s, f)),
    }
}

pub fn assign_filter_groups(
    layer: &LayerTensor,
    sorted_filters: &[usize],
    target: &ScheduleTarget,
    cfg: &QuantConfig,
) -> Result<ScheduleAssignment> {
    let mut table = ErrorTable::new(layer, cfg, &target.levels());
    assign_filter_groups_with(&mut table, sorted_filters, target)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledLayer {
    pub assignment: ScheduleAssignment,
    pub greedy: GreedyResult,
    pub result: QuantResult,
}

/// Both phases, then quantizes the layer at the scheduled shift counts.
pub fn schedule_layer(layer: &LayerTensor, target: &ScheduleTarget, cfg: &QuantConfig) -> Result<ScheduledLayer> {
    let mut table = ErrorTable::new(layer, cfg, &target.levels());
    let greedy = greedy_demote_with(&mut table, target)?;
    let assignment = assign_filter_groups_with(&mut table, &greedy.order, target)?;
    let result = quantize_tensor_with_shifts(layer, cfg, &assignment.filter_shifts)?;
    Ok(ScheduledLayer {
        assignment,
        greedy,
        result,
    })
}

/// Layer error when every filter uses `n` shifts.
pub fn uniform_error(layer: &LayerTensor, n: u8, cfg: &QuantConfig) -> Result<FilterError> {
    let shifts = vec![n; layer.spec.out_channels];
    Ok(quantize_tensor_with_shifts(layer, cfg, &shifts)?.error)
}

impl fmt::Display for ScheduleAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let seq: Vec<String> = self.group_shifts.iter().map(u8::to_string).collect();
        write!(f, "[{}] avg {}", seq.join(","), self.achieved_avg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::{signmag_from_int, LayerSpec, SignMagWeight};
    use crate::quantizer::QuantMode;
    use crate::synth::gaussian_values;
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    fn cfg(metric: Metric) -> QuantConfig {
        QuantConfig {
            mode: QuantMode::Swis,
            shifts: 1,
            group_size: 4,
            metric,
            bits: 8,
        }
    }

    fn tensor_from(filters: usize, cin: usize, vals: &[i32]) -> LayerTensor {
        let spec = LayerSpec::conv("t", filters, cin, 1, 1, 1, 0);
        let w: Vec<SignMagWeight> = vals.iter().map(|&v| signmag_from_int(v, 8).unwrap()).collect();
        LayerTensor::new(spec, 8, w, 1.0).unwrap()
    }

    fn random_layer(filters: usize, cin: usize, seed: u64) -> LayerTensor {
        let spec = LayerSpec::conv("r", filters, cin, 3, 3, 1, 0);
        let vals = gaussian_values(spec.weight_count(), 1.0, seed);
        LayerTensor::from_real(spec, &vals, 8, None).unwrap()
    }

    /// One filter with many distinct bits per group, the rest nearly empty.
    fn heterogeneous() -> LayerTensor {
        let mut vals = vec![0i32; 8 * 8];
        let hard = [
            [0b1010_1011, 0b0101_0110, 0b1100_1101, 0b0011_0111],
            [0b1110_0101, 0b0111_1001, 0b1001_0111, 0b0110_1110],
        ];
        for (i, v) in hard.iter().flatten().enumerate() {
            vals[i] = *v;
        }
        for f in 1..8 {
            for i in 0..8 {
                vals[f * 8 + i] = if (i + f) % 3 == 0 { 0 } else { 16 << (f % 3) };
            }
        }
        tensor_from(8, 8, &vals)
    }

    #[test]
    fn target_validation() {
        let t = ScheduleTarget::new(r(5, 2), PeMode::DoubleShift, 4, &[2, 3]);
        assert!(t.validate(8).is_err());
        let t = ScheduleTarget::new(r(9, 1), PeMode::SingleShift, 4, &[2, 3]);
        assert!(t.validate(8).is_err());
        let t = ScheduleTarget::new(r(5, 2), PeMode::SingleShift, 0, &[2, 3]);
        assert!(t.validate(8).is_err());
        let t = ScheduleTarget::new(r(5, 2), PeMode::SingleShift, 4, &[]);
        assert!(t.validate(8).is_err());
        assert!(ScheduleTarget::new(r(5, 2), PeMode::DoubleShift, 4, &[2, 4]).validate(8).is_ok());
    }

    #[test]
    fn bracketing_levels() {
        let t = ScheduleTarget::bracketing(r(5, 2), PeMode::SingleShift, 8);
        assert_eq!(t.levels(), vec![2, 3]);
        let t = ScheduleTarget::bracketing(r(3, 1), PeMode::DoubleShift, 8);
        assert_eq!(t.levels(), vec![2, 4]);
        let t = ScheduleTarget::bracketing(r(4, 1), PeMode::DoubleShift, 8);
        assert_eq!(t.levels(), vec![4]);
    }

    #[test]
    fn demotion_cost_zero_when_representable() {
        // every group fits in two shifts
        let t = tensor_from(2, 4, &[3, 2, 1, 0, 96, 64, 32, 0]);
        let c = cfg(Metric::default());
        assert_eq!(filter_demotion_cost(&t, 0, 3, 2, &c).unwrap(), 0.0);
        assert_eq!(filter_demotion_cost(&t, 1, 3, 2, &c).unwrap(), 0.0);
        assert!(filter_demotion_cost(&t, 0, 2, 1, &c).unwrap() > 0.0);
    }

    #[test]
    fn demotion_cost_matches_recomputation() {
        let t = random_layer(3, 5, 21);
        let c = cfg(Metric::default());
        for f in 0..3 {
            let at = |n| quantize_filter(&t, f, n, &c).unwrap().1.metric_total(&c.metric);
            assert_eq!(filter_demotion_cost(&t, f, 3, 2, &c).unwrap(), at(2) - at(3));
        }
    }

    #[test]
    fn duplicate_filters_cost_the_same() {
        let base = random_layer(1, 8, 5);
        let mut w = base.weights.clone();
        w.extend(base.weights.iter().copied());
        let spec = LayerSpec::conv("d", 2, 8, 3, 3, 1, 0);
        let t = LayerTensor::new(spec, 8, w, 1.0).unwrap();
        let c = cfg(Metric::default());
        assert_eq!(
            filter_demotion_cost(&t, 0, 3, 2, &c).unwrap(),
            filter_demotion_cost(&t, 1, 3, 2, &c).unwrap()
        );
    }

    #[test]
    fn integral_target_is_uniform() {
        let t = random_layer(6, 4, 3);
        let target = ScheduleTarget::new(r(3, 1), PeMode::SingleShift, 2, &[2, 3, 4]);
        let g = greedy_demote(&t, &target, &cfg(Metric::default())).unwrap();
        assert_eq!(g.filter_shifts, vec![3; 6]);
        assert_eq!(g.demotions, 0);
    }

    #[test]
    fn identical_filters_split_by_index() {
        let one = random_layer(1, 8, 17);
        let w: Vec<SignMagWeight> = (0..6).flat_map(|_| one.weights.iter().copied()).collect();
        let t = LayerTensor::new(LayerSpec::conv("i", 6, 8, 3, 3, 1, 0), 8, w, 1.0).unwrap();
        let target = ScheduleTarget::new(r(5, 2), PeMode::SingleShift, 1, &[2, 3]);
        let g = greedy_demote(&t, &target, &cfg(Metric::default())).unwrap();
        assert_eq!(g.filter_shifts, vec![2, 2, 2, 3, 3, 3]);
        assert_eq!(g.order, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(g.demotions, 3);
    }

    #[test]
    fn greedy_beats_lower_uniform() {
        let t = random_layer(8, 6, 99);
        let c = cfg(Metric::Mse);
        let target = ScheduleTarget::new(r(5, 2), PeMode::SingleShift, 1, &[2, 3]);
        let g = greedy_demote(&t, &target, &c).unwrap();
        let sched = quantize_tensor_with_shifts(&t, &c, &g.filter_shifts).unwrap().error;
        let low = uniform_error(&t, 2, &c).unwrap();
        let high = uniform_error(&t, 3, &c).unwrap();
        assert!(sched.metric_total(&c.metric) <= low.metric_total(&c.metric));
        assert!(sched.metric_total(&c.metric) >= high.metric_total(&c.metric));
        let total: u32 = g.filter_shifts.iter().map(|&n| u32::from(n)).sum();
        assert_eq!(total, 20);
    }

    #[test]
    fn infeasible_target_names_neighbours() {
        let t = random_layer(3, 4, 1);
        // 2.5 over 3 filters needs 7.5 shifts
        let target = ScheduleTarget::new(r(5, 2), PeMode::SingleShift, 1, &[2, 3]);
        match greedy_demote(&t, &target, &cfg(Metric::Mse)) {
            Err(ScheduleError::Infeasible { below, above, .. }) => {
                assert_eq!(below, Some(r(7, 3)));
                assert_eq!(above, Some(r(8, 3)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn group_granularity_can_make_target_infeasible() {
        let t = random_layer(4, 4, 2);
        // 2.5 needs two filters at 3, but groups of four move together
        let target = ScheduleTarget::new(r(5, 2), PeMode::SingleShift, 4, &[2, 3]);
        let err = schedule_layer(&t, &target, &cfg(Metric::Mse)).unwrap_err();
        assert_eq!(
            err,
            ScheduleError::Infeasible {
                target: r(5, 2),
                filters: 4,
                below: Some(r(2, 1)),
                above: Some(r(3, 1)),
            }
        );
    }

    #[test]
    fn double_shift_half_and_half() {
        let t = random_layer(8, 4, 8);
        let target = ScheduleTarget::new(r(3, 1), PeMode::DoubleShift, 2, &[2, 4]);
        let s = schedule_layer(&t, &target, &cfg(Metric::default())).unwrap();
        assert_eq!(s.assignment.achieved_avg, r(3, 1));
        assert_eq!(s.assignment.group_shifts.len(), 4);
        assert!(s.assignment.group_shifts.iter().all(|n| n % 2 == 0));
        assert!(s.assignment.group_shifts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_group_is_forced() {
        let t = random_layer(4, 4, 4);
        let target = ScheduleTarget::new(r(3, 1), PeMode::SingleShift, 4, &[2, 3, 4]);
        let s = schedule_layer(&t, &target, &cfg(Metric::default())).unwrap();
        assert_eq!(s.assignment.group_shifts, vec![3]);
    }

    /// Every nondecreasing sequence, scored by the same exact totals.
    fn enumerate_oracle(
        t: &LayerTensor,
        order: &[usize],
        target: &ScheduleTarget,
        c: &QuantConfig,
    ) -> (f64, Vec<u8>) {
        let levels = target.levels();
        let chunks: Vec<&[usize]> = order.chunks(target.sa_cols).collect();
        let mut best: Option<(f64, Vec<u8>)> = None;
        let mut seq = vec![0usize; chunks.len()];
        loop {
            if seq.windows(2).all(|w| w[0] <= w[1]) {
                let mut shifts = vec![0u8; order.len()];
                for (members, &li) in chunks.iter().zip(&seq) {
                    for &f in *members {
                        shifts[f] = levels[li];
                    }
                }
                let total: i64 = shifts.iter().map(|&n| i64::from(n)).sum();
                if Rational64::new(total, order.len() as i64) == target.target_avg {
                    let e = quantize_tensor_with_shifts(t, c, &shifts).unwrap().error.metric_total(&c.metric);
                    let lv: Vec<u8> = seq.iter().map(|&li| levels[li]).collect();
                    if best.as_ref().is_none_or(|(b, _)| e < *b) {
                        best = Some((e, lv));
                    }
                }
            }
            let mut i = seq.len();
            loop {
                if i == 0 {
                    return best.expect("some feasible sequence");
                }
                i -= 1;
                seq[i] += 1;
                if seq[i] < levels.len() {
                    break;
                }
                seq[i] = 0;
            }
        }
    }

    #[test]
    fn search_matches_enumeration_oracle() {
        let c = cfg(Metric::default());
        for seed in 0..4 {
            let t = random_layer(8, 4, 100 + seed);
            let target = ScheduleTarget::new(r(3, 1), PeMode::SingleShift, 2, &[2, 3, 4]);
            let s = schedule_layer(&t, &target, &c).unwrap();
            let (e, seq) = enumerate_oracle(&t, &s.greedy.order, &target, &c);
            assert_eq!(s.result.error.metric_total(&c.metric), e);
            assert_eq!(s.assignment.group_shifts, seq);
        }
    }

    #[test]
    fn heterogeneous_layer_beats_uniform() {
        let t = heterogeneous();
        let c = cfg(Metric::default());
        let target = ScheduleTarget::new(r(2, 1), PeMode::SingleShift, 1, &[1, 2, 3, 4]);
        let s = schedule_layer(&t, &target, &c).unwrap();
        let uni = uniform_error(&t, 2, &c).unwrap().metric_total(&c.metric);
        let got = s.result.error.metric_total(&c.metric);
        assert!(got < uni, "scheduled {got} vs uniform {uni}");
        assert_eq!(s.assignment.achieved_avg, r(2, 1));
        assert!(s.assignment.filter_shifts[0] > 2);
    }

    #[test]
    fn non_arithmetic_levels_reach_target() {
        let t = random_layer(2, 4, 12);
        let target = ScheduleTarget::new(r(3, 1), PeMode::SingleShift, 1, &[1, 2, 5]);
        let g = greedy_demote(&t, &target, &cfg(Metric::Mse)).unwrap();
        let total: u32 = g.filter_shifts.iter().map(|&n| u32::from(n)).sum();
        assert_eq!(total, 6);
    }

    #[test]
    fn too_many_groups_rejected() {
        let spec = LayerSpec::conv("w", 65, 1, 1, 1, 1, 0);
        let t = LayerTensor::from_real(spec.clone(), &gaussian_values(65, 1.0, 1), 8, None).unwrap();
        let target = ScheduleTarget::new(r(3, 1), PeMode::SingleShift, 1, &[2, 3, 4]);
        assert!(matches!(
            assign_filter_groups(&t, &(0..65).collect::<Vec<_>>(), &target, &cfg(Metric::Mse)),
            Err(ScheduleError::TooManyGroups { groups: 65 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn exact_budget_and_shape(seed in any::<u64>(), filters in 1usize..=12, cols in 1usize..=4, num in 4i64..=16) {
            let t = random_layer(filters, 3, seed);
            let target = ScheduleTarget::new(r(num, 4), PeMode::SingleShift, cols, &[1, 2, 3, 4]);
            match schedule_layer(&t, &target, &cfg(Metric::default())) {
                Ok(s) => {
                    let a = &s.assignment;
                    prop_assert_eq!(a.achieved_avg, target.target_avg);
                    prop_assert!(a.group_shifts.windows(2).all(|w| w[0] <= w[1]));
                    for (n, members) in a.tiles() {
                        prop_assert!(target.allowed_shifts.contains(&n));
                        prop_assert!(members.iter().all(|&f| a.filter_shifts[f] == n));
                    }
                    let mut order = a.filter_order.clone();
                    order.sort_unstable();
                    prop_assert_eq!(order, (0..filters).collect::<Vec<_>>());
                }
                Err(ScheduleError::Infeasible { .. }) => {}
                Err(e) => prop_assert!(false, "{}", e),
            }
        }

        #[test]
        fn never_worse_than_uniform(seed in any::<u64>(), n in 1u8..=4) {
            let t = random_layer(6, 4, seed);
            let c = cfg(Metric::default());
            let target = ScheduleTarget::new(r(i64::from(n), 1), PeMode::SingleShift, 2, &[1, 2, 3, 4]);
            let s = schedule_layer(&t, &target, &c).unwrap();
            let uni = uniform_error(&t, n, &c).unwrap().metric_total(&c.metric);
            prop_assert!(s.result.error.metric_total(&c.metric) <= uni);
        }

        #[test]
        fn deterministic(seed in any::<u64>()) {
            let t = random_layer(8, 4, seed);
            let target = ScheduleTarget::new(r(5, 2), PeMode::SingleShift, 2, &[2, 3]);
            let a = schedule_layer(&t, &target, &cfg(Metric::default())).unwrap();
            let b = schedule_layer(&t, &target, &cfg(Metric::default())).unwrap();
            prop_assert_eq!(a.assignment, b.assignment);
        }
    }
}
