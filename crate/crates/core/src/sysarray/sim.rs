use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ArrayConfig, LayerShifts, Result, SimError, Workload};
use crate::bitserial::group_cycles;
use crate::model_io::{group_record_bits, LayerKind, LayerSpec};
use crate::quantizer::{group_layout, QuantMode};

/// Output-stationary tiling of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub output_pixels: usize,
    pub filters: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_tiles: usize,
    pub col_tiles: usize,
    /// Depthwise groups each PE walks per tile.
    pub groups_per_filter: usize,
}

impl TilePlan {
    pub fn tiles(&self) -> usize {
        self.row_tiles * self.col_tiles
    }

    pub fn active_cols(&self, ct: usize) -> usize {
        self.cols.min(self.filters - ct * self.cols)
    }

    /// Fill and drain of the staggered feed summed over tiles: each tile
    /// pays `active_rows + active_cols - 2`.
    pub fn skew_cycles(&self) -> u64 {
        (self.col_tiles * self.output_pixels + self.row_tiles * self.filters) as u64 - 2 * self.tiles() as u64
    }
}

/// Rows take output pixels, columns take filters. Tiles run column-tile
/// major: all row tiles of one filter block before the next block.
pub fn tile_layer(layer: &LayerSpec, cfg: &ArrayConfig) -> Result<TilePlan> {
    cfg.validate()?;
    if layer.kind == LayerKind::FullyConnected {
        return Err(SimError::UnsupportedLayer {
            layer: layer.name.clone(),
            kind: layer.kind,
        });
    }
    let pixels = layer.output_pixels();
    Ok(TilePlan {
        output_pixels: pixels,
        filters: layer.out_channels,
        rows: cfg.rows,
        cols: cfg.cols,
        row_tiles: pixels.div_ceil(cfg.rows),
        col_tiles: layer.out_channels.div_ceil(cfg.cols),
        groups_per_filter: group_layout(layer, cfg.group_size).groups_per_filter(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SramAccesses {
    /// Group records (one per group and shift) from the weight buffer.
    pub weight_reads: u64,
    /// M-wide activation vectors, one per group per PE row and tile.
    pub act_reads: u64,
    pub out_writes: u64,
}

impl SramAccesses {
    fn add(&mut self, o: &SramAccesses) {
        self.weight_reads += o.weight_reads;
        self.act_reads += o.act_reads;
        self.out_writes += o.out_writes;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DramTraffic {
    pub weight_bytes: u64,
    pub act_bytes: u64,
    pub out_bytes: u64,
}

impl DramTraffic {
    pub fn total(&self) -> u64 {
        self.weight_bytes + self.act_bytes + self.out_bytes
    }

    fn add(&mut self, o: &DramTraffic) {
        self.weight_bytes += o.weight_bytes;
        self.act_bytes += o.act_bytes;
        self.out_bytes += o.out_bytes;
    }
}

/// Energy by component, in pJ.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub pe_pj: f64,
    pub weight_sram_pj: f64,
    pub act_sram_pj: f64,
    pub out_sram_pj: f64,
    pub dram_pj: f64,
    pub static_pj: f64,
}

impl EnergyBreakdown {
    pub fn total_pj(&self) -> f64 {
        self.pe_pj + self.weight_sram_pj + self.act_sram_pj + self.out_sram_pj + self.dram_pj + self.static_pj
    }

    fn add(&mut self, o: &EnergyBreakdown) {
        self.pe_pj += o.pe_pj;
        self.weight_sram_pj += o.weight_sram_pj;
        self.act_sram_pj += o.act_sram_pj;
        self.out_sram_pj += o.out_sram_pj;
        self.dram_pj += o.dram_pj;
        self.static_pj += o.static_pj;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub plan: TilePlan,
    /// Shifts (or activation bits) averaged over filters.
    pub effective_shifts: f64,
    pub compute_cycles: u64,
    pub stall_cycles: u64,
    pub total_cycles: u64,
    pub shift_ops: u64,
    pub sram: SramAccesses,
    pub dram: DramTraffic,
    pub energy: EnergyBreakdown,
    pub energy_pj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: ArrayConfig,
    pub layers: Vec<LayerReport>,
    pub compute_cycles: u64,
    pub stall_cycles: u64,
    pub total_cycles: u64,
    pub sram: SramAccesses,
    pub dram: DramTraffic,
    pub energy: EnergyBreakdown,
    pub energy_joules: f64,
    pub frames_per_second: f64,
    pub frames_per_joule: f64,
}

/// `(shift count, filters)` per column tile, in tile order.
fn column_shifts(layer: &LayerSpec, plan: &TilePlan, wl: &Workload, cols: usize) -> Result<Vec<(u32, usize)>> {
    let uniform = |n: u32| (0..plan.col_tiles).map(|ct| (n, plan.active_cols(ct))).collect();
    match wl {
        Workload::ActTrunc { act_bits } => Ok(uniform(u32::from(*act_bits))),
        Workload::Swis {
            shifts: LayerShifts::Uniform(n),
            ..
        } => Ok(uniform(u32::from(*n))),
        Workload::Swis {
            shifts: LayerShifts::Scheduled(a),
            ..
        } => {
            let bad = |msg: String| SimError::Contract {
                layer: layer.name.clone(),
                msg,
            };
            if a.sa_cols != cols {
                return Err(bad(format!(
                    "schedule built for {} simultaneous filters, array has {cols} columns",
                    a.sa_cols
                )));
            }
            if a.filter_order.len() != layer.out_channels || a.filter_shifts.len() != layer.out_channels {
                return Err(bad("schedule filter count does not match the layer".into()));
            }
            a.tiles()
                .map(|(n, members)| {
                    if members.iter().any(|&f| a.filter_shifts[f] != n) {
                        return Err(bad("filters in one column tile have different shift counts".into()));
                    }
                    Ok((u32::from(n), members.len()))
                })
                .collect()
        }
    }
}

fn record_bits(wl: &Workload, group_size: usize, n: u32) -> u64 {
    let m = group_size as u64;
    match wl {
        Workload::ActTrunc { .. } => m * 8,
        // the truncation window is fixed per layer, so groups carry no field
        Workload::Swis {
            mode: QuantMode::LayerTrunc,
            ..
        } => m * (u64::from(n) + 1),
        Workload::Swis { mode, .. } => group_record_bits(*mode, group_size, n as usize, crate::DEFAULT_BITS),
    }
}

/// Cycles, buffer accesses, DRAM traffic and energy for one layer.
pub fn simulate_layer(layer: &LayerSpec, workload: &Workload, cfg: &ArrayConfig) -> Result<LayerReport> {
    let plan = tile_layer(layer, cfg)?;
    let columns = column_shifts(layer, &plan, workload, cfg.cols)?;
    if let Workload::Swis { shifts: LayerShifts::Uniform(0), .. } | Workload::ActTrunc { act_bits: 0 } = workload {
        return Err(SimError::Contract {
            layer: layer.name.clone(),
            msg: "shift count must be at least 1".into(),
        });
    }
    let groups = plan.groups_per_filter as u64;
    let pixels = plan.output_pixels as u64;
    let row_tiles = plan.row_tiles as u64;

    let mut compute = 0u64;
    let mut shift_ops = 0u64;
    let mut pe_cycles = 0u64;
    let mut sram = SramAccesses::default();
    let mut weight_bits = 0u64;
    let mut shift_sum = 0u64;
    for &(n, active) in &columns {
        let active = active as u64;
        let per_group = match workload {
            Workload::ActTrunc { .. } => u64::from(n),
            Workload::Swis { .. } => group_cycles(n, cfg.pe_mode),
        };
        let records = match workload {
            Workload::ActTrunc { .. } => 1,
            Workload::Swis { .. } => u64::from(n),
        };
        compute += row_tiles * (groups * per_group + active) + pixels - 2 * row_tiles;
        shift_ops += pixels * active * groups * u64::from(n);
        pe_cycles += pixels * active * groups * per_group;
        sram.weight_reads += row_tiles * active * groups * records;
        sram.act_reads += pixels * groups;
        sram.out_writes += pixels * active;
        shift_sum += u64::from(n) * active;

        // compulsory: each column tile's weights stream in once
        weight_bits += active * groups * record_bits(workload, cfg.group_size, n);
    }

    let input_bytes = (layer.input_channels() * layer.input_h * layer.input_w) as u64;
    let act_fetches = if input_bytes > cfg.act_buffer_bytes {
        plan.col_tiles as u64
    } else {
        1
    };
    let dram = DramTraffic {
        weight_bytes: weight_bits.div_ceil(8),
        act_bytes: input_bytes * act_fetches,
        out_bytes: pixels * plan.filters as u64,
    };
    let stall = dram
        .total()
        .div_ceil(cfg.dram_bytes_per_cycle)
        .saturating_sub(compute);
    let total = compute + stall;

    let c = &cfg.costs;
    let energy = EnergyBreakdown {
        pe_pj: shift_ops as f64 * c.shift_op_pj + pe_cycles as f64 * c.pe_cycle_pj,
        weight_sram_pj: sram.weight_reads as f64 * c.weight_sram_read_pj,
        act_sram_pj: sram.act_reads as f64 * c.act_sram_read_pj,
        out_sram_pj: sram.out_writes as f64 * c.out_sram_write_pj,
        dram_pj: dram.total() as f64 * c.dram_pj_per_byte,
        static_pj: total as f64 * c.static_pj_per_cycle,
    };
    Ok(LayerReport {
        name: layer.name.clone(),
        effective_shifts: shift_sum as f64 / plan.filters as f64,
        plan,
        compute_cycles: compute,
        stall_cycles: stall,
        total_cycles: total,
        shift_ops,
        sram,
        dram,
        energy_pj: energy.total_pj(),
        energy,
    })
}

/// Simulates every layer (in parallel) and sums in layer order.
pub fn simulate_network(layers: &[LayerSpec], workloads: &[Workload], cfg: &ArrayConfig) -> Result<SimReport> {
    cfg.validate()?;
    if layers.len() != workloads.len() {
        return Err(SimError::WorkloadCount {
            layers: layers.len(),
            workloads: workloads.len(),
        });
    }
    let reports: Vec<LayerReport> = layers
        .par_iter()
        .zip(workloads.par_iter())
        .map(|(l, w)| simulate_layer(l, w, cfg))
        .collect::<Result<_>>()?;
    let mut sram = SramAccesses::default();
    let mut dram = DramTraffic::default();
    let mut energy = EnergyBreakdown::default();
    let (mut compute, mut stall) = (0u64, 0u64);
    for r in &reports {
        compute += r.compute_cycles;
        stall += r.stall_cycles;
        sram.add(&r.sram);
        dram.add(&r.dram);
        energy.add(&r.energy);
    }
    let total = compute + stall;
    let joules = energy.total_pj() * 1e-12;
    let hz = cfg.costs.frequency_mhz * 1e6;
    Ok(SimReport {
        config: cfg.clone(),
        layers: reports,
        compute_cycles: compute,
        stall_cycles: stall,
        total_cycles: total,
        sram,
        dram,
        energy,
        energy_joules: joules,
        frames_per_second: if total == 0 { 0.0 } else { hz / total as f64 },
        frames_per_joule: if joules == 0.0 { 0.0 } else { 1.0 / joules },
    })
}

/// Per-layer DRAM weight-to-activation traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub layer: String,
    /// Name prefix before the first `.`.
    pub stage: String,
    pub weight_bytes: u64,
    pub act_bytes: u64,
    pub ratio: f64,
}

pub fn dram_ratio_report(report: &SimReport) -> Vec<RatioRow> {
    report
        .layers
        .iter()
        .map(|l| RatioRow {
            layer: l.name.clone(),
            stage: l.name.split('.').next().unwrap_or_default().to_string(),
            weight_bytes: l.dram.weight_bytes,
            act_bytes: l.dram.act_bytes,
            ratio: l.dram.weight_bytes as f64 / l.dram.act_bytes.max(1) as f64,
        })
        .collect()
}

#[derive(Serialize)]
struct CsvRow<'a> {
    layer: &'a str,
    row_tiles: usize,
    col_tiles: usize,
    effective_shifts: f64,
    compute_cycles: u64,
    stall_cycles: u64,
    total_cycles: u64,
    weight_sram_reads: u64,
    act_sram_reads: u64,
    out_sram_writes: u64,
    dram_weight_bytes: u64,
    dram_act_bytes: u64,
    dram_out_bytes: u64,
    energy_pj: f64,
}

/// One row per layer plus a `total` row.
pub fn write_report_csv<W: Write>(report: &SimReport, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for l in &report.layers {
        w.serialize(CsvRow {
            layer: &l.name,
            row_tiles: l.plan.row_tiles,
            col_tiles: l.plan.col_tiles,
            effective_shifts: l.effective_shifts,
            compute_cycles: l.compute_cycles,
            stall_cycles: l.stall_cycles,
            total_cycles: l.total_cycles,
            weight_sram_reads: l.sram.weight_reads,
            act_sram_reads: l.sram.act_reads,
            out_sram_writes: l.sram.out_writes,
            dram_weight_bytes: l.dram.weight_bytes,
            dram_act_bytes: l.dram.act_bytes,
            dram_out_bytes: l.dram.out_bytes,
            energy_pj: l.energy_pj,
        })?;
    }
    let tiles = |f: fn(&TilePlan) -> usize| report.layers.iter().map(|l| f(&l.plan)).sum();
    w.serialize(CsvRow {
        layer: "total",
        row_tiles: tiles(|p| p.row_tiles),
        col_tiles: tiles(|p| p.col_tiles),
        effective_shifts: f64::NAN,
        compute_cycles: report.compute_cycles,
        stall_cycles: report.stall_cycles,
        total_cycles: report.total_cycles,
        weight_sram_reads: report.sram.weight_reads,
        act_sram_reads: report.sram.act_reads,
        out_sram_writes: report.sram.out_writes,
        dram_weight_bytes: report.dram.weight_bytes,
        dram_act_bytes: report.dram.act_bytes,
        dram_out_bytes: report.dram.out_bytes,
        energy_pj: report.energy.total_pj(),
    })?;
    w.flush()
}

pub fn write_report_json<W: Write>(report: &SimReport, out: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(out, report)?;
    Ok(())
}
