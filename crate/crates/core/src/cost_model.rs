//! Cost aggregation: streaming-vs-dense comparisons and the dual-mode
//! trade-off, reported with stable key names.
//!
//! Everything here is analytic — schedules and FIFO replays supply event
//! and byte counts, tile arithmetic supplies cycles — so reports over
//! 16k-step sequences take milliseconds.

use serde::Serialize;

use crate::netmodel::NetworkConfig;
use crate::oracle;
use crate::pe_array::{memmap, peak_throughput, ArrayMode};
use crate::scheduler::{self, LayerGraph};
use crate::{Error, Result};

/// Per-mode cycle and bank-activity figures.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct ModeMetrics {
    pub cycles: u64,
    pub peak_ops_per_s: f64,
    pub ops_per_cycle: f64,
    pub active_banks: usize,
    /// Active banks times wall-clock time, expressed in 16x16-mode cycle
    /// units with each mode clocked to finish the workload in the same
    /// time. The leakage proxy for real-time workloads.
    pub bank_time: u64,
}

/// Streaming-vs-dense comparison for one network and sequence length.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub sequence_length: usize,
    pub weight_count: usize,
    pub weight_bytes: usize,
    pub scheduled_events: usize,
    pub scheduled_macs: u64,
    pub dense_macs: u64,
    pub compute_ratio: f64,
    pub activation_bytes_pruned: usize,
    pub activation_bytes_dense: usize,
    pub input_bytes_pruned: usize,
    pub input_bytes_dense: usize,
    pub memory_ratio: f64,
    pub weights_per_activation_kb: f64,
    pub clock_hz: f64,
    pub mode_16x16: ModeMetrics,
    /// Absent when the network exceeds the always-on capacity.
    pub mode_4x4: Option<ModeMetrics>,
}

impl MetricsReport {
    /// Flat `key value` lines, one metric per line, stable names.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} {v}\n"));
        kv("sequence_length", self.sequence_length.to_string());
        kv("weight_count", self.weight_count.to_string());
        kv("weight_bytes", self.weight_bytes.to_string());
        kv("scheduled_events", self.scheduled_events.to_string());
        kv("scheduled_macs", self.scheduled_macs.to_string());
        kv("dense_macs", self.dense_macs.to_string());
        kv("compute_ratio", format!("{:.3}", self.compute_ratio));
        kv(
            "activation_bytes_pruned",
            self.activation_bytes_pruned.to_string(),
        );
        kv(
            "activation_bytes_dense",
            self.activation_bytes_dense.to_string(),
        );
        kv("input_bytes_pruned", self.input_bytes_pruned.to_string());
        kv("input_bytes_dense", self.input_bytes_dense.to_string());
        kv("memory_ratio", format!("{:.3}", self.memory_ratio));
        kv(
            "weights_per_activation_kb",
            format!("{:.1}", self.weights_per_activation_kb),
        );
        kv("clock_hz", format!("{:.0}", self.clock_hz));
        kv("cycles_16x16", self.mode_16x16.cycles.to_string());
        kv(
            "peak_ops_per_s_16x16",
            format!("{:.0}", self.mode_16x16.peak_ops_per_s),
        );
        kv(
            "ops_per_cycle_16x16",
            format!("{:.3}", self.mode_16x16.ops_per_cycle),
        );
        kv(
            "active_banks_16x16",
            self.mode_16x16.active_banks.to_string(),
        );
        kv("bank_time_16x16", self.mode_16x16.bank_time.to_string());
        if let Some(m4) = &self.mode_4x4 {
            kv("cycles_4x4", m4.cycles.to_string());
            kv("peak_ops_per_s_4x4", format!("{:.0}", m4.peak_ops_per_s));
            kv("ops_per_cycle_4x4", format!("{:.3}", m4.ops_per_cycle));
            kv("active_banks_4x4", m4.active_banks.to_string());
            kv("bank_time_4x4", m4.bank_time.to_string());
        }
        out
    }
}

/// Array cycles for one output timestep of each graph layer (projection
/// work included on its block-output layer), in 16x16 mode.
fn cycles_per_event_16(graph: &LayerGraph) -> Vec<u64> {
    graph
        .layers
        .iter()
        .map(|l| {
            let mut c = (l.kernel * l.out_ch.div_ceil(16) * l.in_ch.div_ceil(16)) as u64;
            if let Some(res) = l.residual {
                if res.projection.is_some() {
                    let src_ch = graph.channels_at(res.level);
                    c += (l.out_ch.div_ceil(16) * src_ch.div_ceil(16)) as u64;
                }
            }
            c
        })
        .collect()
}

/// Exact multiply-accumulate count for one output timestep per layer.
fn macs_per_event(graph: &LayerGraph) -> Vec<u64> {
    graph
        .layers
        .iter()
        .map(|l| {
            let mut m = (l.kernel * l.out_ch * l.in_ch) as u64;
            if let Some(res) = l.residual {
                if res.projection.is_some() {
                    m += (l.out_ch * graph.channels_at(res.level)) as u64;
                }
            }
            m
        })
        .collect()
}

/// Whether a network fits the always-on (4x4 mode) memories.
pub fn fits_4x4(config: &NetworkConfig) -> bool {
    let mut addresses = 0usize;
    let mut biases = 0usize;
    for s in config.layer_shapes() {
        addresses += s.kernel * s.out_ch.div_ceil(4) * s.in_ch.div_ceil(4);
        if s.has_bias {
            biases += s.out_ch.div_ceil(4) * 4;
        }
    }
    addresses <= memmap::CAP_4X4_ADDRESSES && biases <= memmap::CAP_4X4_BIASES
}

fn mode_metrics(mode: ArrayMode, cycles_16: u64, macs: u64, clock_hz: f64) -> ModeMetrics {
    let cycles = match mode {
        ArrayMode::M16x16 => cycles_16,
        ArrayMode::M4x4 => 16 * cycles_16,
    };
    ModeMetrics {
        cycles,
        peak_ops_per_s: peak_throughput(mode, clock_hz),
        ops_per_cycle: 2.0 * macs as f64 / cycles.max(1) as f64,
        active_banks: mode.active_banks(),
        // iso-latency: the 4x4 run takes 16x the cycles at 16x the clock,
        // i.e. the same wall time = cycles_16 reference cycles
        bank_time: cycles_16 * mode.active_banks() as u64,
    }
}

/// Runs the streaming scheduler and the dense baseline over the same
/// network and reports both sides with their ratios.
pub fn compare_strategies(
    config: &NetworkConfig,
    n: usize,
    clock_hz: f64,
) -> Result<MetricsReport> {
    let violations = config.validate();
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sequence length must be positive".into(),
        ));
    }
    let graph = LayerGraph::from_config(config);
    let deps = scheduler::dependency_sets(&graph, n);
    let schedule = scheduler::greedy_schedule(&deps, &graph);
    let fifo = scheduler::simulate_fifo(&schedule, &graph)
        .map_err(|e| Error::InvalidArgument(format!("schedule failed its own replay: {e}")))?;

    let per_event_cycles = cycles_per_event_16(&graph);
    let per_event_macs = macs_per_event(&graph);
    let mut cycles_16 = 0u64;
    let mut macs = 0u64;
    for (level, set) in deps.sets.iter().enumerate().skip(1) {
        cycles_16 += set.len() as u64 * per_event_cycles[level - 1];
        macs += set.len() as u64 * per_event_macs[level - 1];
    }

    let dense = oracle::dense_cost(config, n);
    let pruned_total = fifo.activation_bytes + fifo.input_bytes;
    let dense_total = dense.activation_bytes + dense.input_bytes;
    let weight_count = config.weight_count();

    let mode_16x16 = mode_metrics(ArrayMode::M16x16, cycles_16, macs, clock_hz);
    let mode_4x4 =
        fits_4x4(config).then(|| mode_metrics(ArrayMode::M4x4, cycles_16, macs, clock_hz));

    Ok(MetricsReport {
        sequence_length: n,
        weight_count,
        weight_bytes: weight_count.div_ceil(2),
        scheduled_events: schedule.events.len(),
        scheduled_macs: macs,
        dense_macs: dense.macs,
        compute_ratio: dense.macs as f64 / macs.max(1) as f64,
        activation_bytes_pruned: fifo.activation_bytes,
        activation_bytes_dense: dense.activation_bytes,
        input_bytes_pruned: fifo.input_bytes,
        input_bytes_dense: dense.input_bytes,
        memory_ratio: dense_total as f64 / pruned_total.max(1) as f64,
        weights_per_activation_kb: weight_count as f64
            / (fifo.activation_bytes.max(1) as f64 / 1024.0),
        clock_hz,
        mode_16x16,
        mode_4x4,
    })
}

/// Per-mode cycles, throughput and bank activity for one workload.
/// Errors when the network cannot be deployed in 4x4 mode at all.
pub fn mode_tradeoff(
    config: &NetworkConfig,
    n: usize,
    clock_hz: f64,
) -> Result<(ModeMetrics, ModeMetrics)> {
    let report = compare_strategies(config, n, clock_hz)?;
    let m4 = report.mode_4x4.ok_or(Error::Capacity {
        what: "4x4-mode weight addresses (16 weights each)",
        needed: config.weight_count(),
        available: memmap::CAP_4X4_WEIGHTS,
    })?;
    Ok((report.mode_16x16, m4))
}
