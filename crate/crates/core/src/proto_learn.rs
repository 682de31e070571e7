//! Gradient-free class learning.
//!
//! A new class is learned by summing its support embeddings into a
//! prototype and converting the sums into one row of an equivalent fully
//! connected layer: the weights are the power-of-two requantized sums, the
//! bias folds the prototype's squared norm, computed entirely with shifts
//! (squaring a power of two doubles its exponent, dividing by the shot
//! count is a right shift). Classification then runs the query through
//! that FC layer on the ordinary array datapath and picks the
//! highest-scoring class, which reproduces nearest-prototype
//! classification under the squared L2 distance.
//!
//! The hardware flow is three steps: stage the support embeddings in
//! activation memory, stream them through the array to accumulate the
//! prototype, then extract and store the FC parameters. Its controller
//! trace is `(k + 2) * V/16 + 1` cycles on the full array for
//! 16-aligned embedding widths.

use crate::audit;
use crate::netmodel::format::ClassRecord;
use crate::pe_array::{PeArrayState, Tile16};
use crate::quant::{quantize_log2_int, LogWeight, QAct, QBias, QuantStats, Rounding};
use crate::{Error, Result};

pub const MAX_WAYS: usize = 256;
pub const MAX_SHOTS: u32 = 128;
pub const MAX_EMBED_DIM: usize = 1024;

/// Ceiling log2 for shot counts (0 for k = 1).
pub fn ceil_log2(k: u32) -> u32 {
    k.next_power_of_two().trailing_zeros()
}

/// How the prototype division by `2k` is realized as a right shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasShift {
    /// Shift by `1 + ceil(log2 k)`: exact `1/(2k)` for power-of-two shot
    /// counts (the default).
    #[default]
    Exact,
    /// Shift by `2 * ceil(log2 k)`, the doubled-ceiling convention. Note
    /// it disagrees with `1/(2k)` at k = 1 (no shift at all).
    DoubledCeil,
}

impl BiasShift {
    pub fn shift_for(self, shots: u32) -> u32 {
        match self {
            BiasShift::Exact => 1 + ceil_log2(shots),
            BiasShift::DoubledCeil => 2 * ceil_log2(shots),
        }
    }
}

/// Accumulated (not yet averaged) class prototype.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prototype {
    pub class_id: u32,
    /// Component-wise sums of the support embeddings, accumulator-width.
    pub sums: Vec<i32>,
    pub shots: u32,
}

impl Prototype {
    pub fn new(class_id: u32, dim: usize) -> Prototype {
        Prototype {
            class_id,
            sums: vec![0; dim],
            shots: 0,
        }
    }
}

/// One output neuron of the equivalent FC layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalentFcEntry {
    pub class_id: u32,
    pub weights: Vec<LogWeight>,
    pub bias: QBias,
}

/// Converts a prototype into FC parameters using shifts only: weights are
/// the log2-requantized sums; the bias sums `2^(2e)` over the non-zero
/// weight exponents and right-shifts by the mode's `2k` realization,
/// saturating into the 14-bit bias range.
pub fn extract_fc_params(
    proto: &Prototype,
    mode: BiasShift,
    stats: &mut QuantStats,
) -> EquivalentFcEntry {
    assert!(proto.shots >= 1, "extraction needs at least one shot");
    let mut weights = Vec::with_capacity(proto.sums.len());
    let mut squared_sum: i64 = 0;
    for &s in &proto.sums {
        let w = quantize_log2_int(s as i64, Rounding::Nearest, stats);
        if let Some(e) = w.exponent() {
            audit::record_shift();
            audit::record_add();
            squared_sum += 1i64 << (e << 1);
        }
        weights.push(w);
    }
    audit::record_shift();
    let shifted = squared_sum >> mode.shift_for(proto.shots);
    let mut saturated = false;
    let bias = QBias::saturating_from(shifted, &mut saturated);
    if saturated {
        stats.bias_saturations += 1;
    }
    EquivalentFcEntry {
        class_id: proto.class_id,
        weights,
        bias,
    }
}

/// Remaining room in the weight/bias memories for learned classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryBudget {
    pub weight_nibbles: usize,
    pub bias_entries: usize,
}

impl MemoryBudget {
    /// Whatever the deployed network leaves free on chip.
    pub fn after_deploying(config: &crate::netmodel::NetworkConfig) -> Result<MemoryBudget> {
        let weights = config.weight_count();
        let biases = config.bias_count();
        if weights > crate::pe_array::memmap::CAP_16X16_WEIGHTS
            || biases > crate::pe_array::memmap::CAP_16X16_BIASES
        {
            return Err(Error::Capacity {
                what: "weights",
                needed: weights,
                available: crate::pe_array::memmap::CAP_16X16_WEIGHTS,
            });
        }
        Ok(MemoryBudget {
            weight_nibbles: crate::pe_array::memmap::CAP_16X16_WEIGHTS - weights,
            bias_entries: crate::pe_array::memmap::CAP_16X16_BIASES - biases,
        })
    }

    pub fn unlimited() -> MemoryBudget {
        MemoryBudget {
            weight_nibbles: usize::MAX,
            bias_entries: usize::MAX,
        }
    }
}

/// A committed class: retained prototype plus the stored FC row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LearnedClass {
    pub prototype: Prototype,
    pub entry: EquivalentFcEntry,
}

/// Controller micro-ops of the learning flow; the trace length is the
/// cycle count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerOp {
    /// Stream one staged shot's slice through the array accumulators.
    Accumulate { slice: usize, shot: u32 },
    /// Requantize one slice of sums and write the weight row.
    ExtractWeights { slice: usize },
    /// Fold one slice's squared exponents into the bias accumulator.
    BiasPartial { slice: usize },
    /// Shift and store the finished bias.
    BiasWrite,
}

/// Outcome of learning one class.
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub class_id: u32,
    pub cycles: u64,
    pub trace: Vec<ControllerOp>,
}

/// Tracks learned classes, the pending prototype and the remaining
/// capacity. Learned parameters are append-only: committing a new class
/// never rewrites a stored one.
#[derive(Debug, Clone)]
pub struct LearnerState {
    embed_dim: usize,
    bias_mode: BiasShift,
    budget: MemoryBudget,
    classes: Vec<LearnedClass>,
    pending: Option<Prototype>,
    pub stats: QuantStats,
}

impl LearnerState {
    pub fn new(
        embed_dim: usize,
        budget: MemoryBudget,
        bias_mode: BiasShift,
    ) -> Result<LearnerState> {
        if embed_dim == 0 || embed_dim > MAX_EMBED_DIM {
            return Err(Error::InvalidArgument(format!(
                "embedding dimension {embed_dim} outside 1..={MAX_EMBED_DIM}"
            )));
        }
        Ok(LearnerState {
            embed_dim,
            bias_mode,
            budget,
            classes: Vec::new(),
            pending: None,
            stats: QuantStats::default(),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn classes(&self) -> &[LearnedClass] {
        &self.classes
    }

    pub fn ways(&self) -> usize {
        self.classes.len()
    }

    /// Storage cost of one more class: the weight row plus one 14-bit bias
    /// padded to whole bytes.
    pub fn bytes_per_way(&self) -> usize {
        bytes_per_way(self.embed_dim)
    }

    fn check_room(&self) -> Result<()> {
        if self.classes.len() >= MAX_WAYS {
            return Err(Error::Capacity {
                what: "ways",
                needed: self.classes.len() + 1,
                available: MAX_WAYS,
            });
        }
        if self.budget.weight_nibbles < self.embed_dim {
            return Err(Error::Capacity {
                what: "weight-memory bytes",
                needed: bytes_per_way(self.embed_dim),
                available: self.budget.weight_nibbles / 2 + 2 * self.budget.bias_entries.min(1),
            });
        }
        if self.budget.bias_entries < 1 {
            return Err(Error::Capacity {
                what: "bias entries",
                needed: 1,
                available: 0,
            });
        }
        Ok(())
    }

    /// Adds one support embedding to the pending prototype (saturating,
    /// component-wise). Starts a new pending class if none is open.
    pub fn accumulate_shot(&mut self, embedding: &[QAct]) -> Result<()> {
        if embedding.len() != self.embed_dim {
            return Err(Error::DimensionMismatch {
                expected: self.embed_dim,
                got: embedding.len(),
            });
        }
        let next_id = self.classes.len() as u32;
        let proto = self
            .pending
            .get_or_insert_with(|| Prototype::new(next_id, embedding.len()));
        if proto.shots >= MAX_SHOTS {
            return Err(Error::Capacity {
                what: "shots per class",
                needed: proto.shots as usize + 1,
                available: MAX_SHOTS as usize,
            });
        }
        for (sum, a) in proto.sums.iter_mut().zip(embedding) {
            *sum = crate::quant::Accum::new(*sum)
                .saturating_add(a.get() as i32)
                .get();
        }
        proto.shots += 1;
        Ok(())
    }

    /// Extracts and stores the pending prototype as a new class.
    pub fn commit_pending(&mut self) -> Result<&LearnedClass> {
        let proto = self
            .pending
            .take()
            .ok_or_else(|| Error::InvalidArgument("no pending shots to commit".into()))?;
        self.check_room()?;
        let entry = extract_fc_params(&proto, self.bias_mode, &mut self.stats);
        self.budget.weight_nibbles -= self.embed_dim;
        self.budget.bias_entries -= 1;
        self.classes.push(LearnedClass {
            prototype: proto,
            entry,
        });
        Ok(self.classes.last().unwrap())
    }

    /// The full hardware learning flow for one class: stage the shots in
    /// activation memory, stream them back through the array to build the
    /// prototype, then extract and store the FC row. Returns the
    /// controller trace; its length is the cycle count,
    /// `(k + 2) * ceil(V / lanes) + 1`.
    pub fn learn_class(
        &mut self,
        embeddings: &[Vec<QAct>],
        array: &mut PeArrayState,
    ) -> Result<LearnOutcome> {
        if embeddings.is_empty() || embeddings.len() as u32 > MAX_SHOTS {
            return Err(Error::InvalidArgument(format!(
                "shot count {} outside 1..={MAX_SHOTS}",
                embeddings.len()
            )));
        }
        for e in embeddings {
            if e.len() != self.embed_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.embed_dim,
                    got: e.len(),
                });
            }
        }
        self.check_room()?;
        if self.pending.is_some() {
            return Err(Error::InvalidArgument(
                "pending shot-by-shot class not committed".into(),
            ));
        }

        // step 1: the embeddings sit in activation memory (they were
        // written there by the embedding inference passes)
        let staged: Vec<&[QAct]> = embeddings.iter().map(|e| e.as_slice()).collect();

        // step 2: accumulate the prototype through the array, one
        // 16-component slice at a time, one staged shot per cycle
        let lanes = array.mode.lanes();
        let slices = self.embed_dim.div_ceil(lanes);
        let identity = identity_tile(lanes);
        let mut trace = Vec::new();
        let class_id = self.classes.len() as u32;
        let mut proto = Prototype::new(class_id, self.embed_dim);
        for slice in 0..slices {
            array.reset_accumulators();
            for (shot, emb) in staged.iter().enumerate() {
                let mut acts = [QAct::ZERO; 16];
                for (lane, slot) in acts.iter_mut().enumerate().take(lanes) {
                    if let Some(a) = emb.get(slice * lanes + lane) {
                        *slot = *a;
                    }
                }
                array.array_cycle(&acts, &identity);
                trace.push(ControllerOp::Accumulate {
                    slice,
                    shot: shot as u32,
                });
            }
            for lane in 0..lanes {
                let i = slice * lanes + lane;
                if i < self.embed_dim {
                    proto.sums[i] = array.accumulator(lane).get();
                }
            }
            trace.push(ControllerOp::ExtractWeights { slice });
            trace.push(ControllerOp::BiasPartial { slice });
        }
        proto.shots = embeddings.len() as u32;

        // step 3: extract and store the FC parameters
        let entry = extract_fc_params(&proto, self.bias_mode, &mut self.stats);
        trace.push(ControllerOp::BiasWrite);
        self.budget.weight_nibbles -= self.embed_dim;
        self.budget.bias_entries -= 1;
        self.classes.push(LearnedClass {
            prototype: proto,
            entry,
        });

        let cycles = trace.len() as u64;
        Ok(LearnOutcome {
            class_id,
            cycles,
            trace,
        })
    }

    /// Extension: grow an existing class with more shots by reusing its
    /// retained sums, then re-extract its FC row in place.
    pub fn add_shots(&mut self, class_id: u32, embeddings: &[Vec<QAct>]) -> Result<()> {
        let class = self
            .classes
            .iter_mut()
            .find(|c| c.entry.class_id == class_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class {class_id}")))?;
        if class.prototype.shots + embeddings.len() as u32 > MAX_SHOTS {
            return Err(Error::Capacity {
                what: "shots per class",
                needed: (class.prototype.shots as usize) + embeddings.len(),
                available: MAX_SHOTS as usize,
            });
        }
        for e in embeddings {
            if e.len() != self.embed_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.embed_dim,
                    got: e.len(),
                });
            }
            for (sum, a) in class.prototype.sums.iter_mut().zip(e) {
                *sum = crate::quant::Accum::new(*sum)
                    .saturating_add(a.get() as i32)
                    .get();
            }
            class.prototype.shots += 1;
        }
        class.entry = extract_fc_params(&class.prototype, self.bias_mode, &mut self.stats);
        Ok(())
    }

    /// Scores the query through the equivalent FC layer on the array
    /// datapath and returns the best class (ties to the lowest id) plus
    /// the per-class scores.
    pub fn classify(&self, query: &[QAct], array: &mut PeArrayState) -> Result<(u32, Vec<i32>)> {
        if self.classes.is_empty() {
            return Err(Error::NoClasses);
        }
        if query.len() != self.embed_dim {
            return Err(Error::DimensionMismatch {
                expected: self.embed_dim,
                got: query.len(),
            });
        }
        let lanes = array.mode.lanes();
        let class_tiles = self.classes.len().div_ceil(lanes);
        let comp_tiles = self.embed_dim.div_ceil(lanes);
        let mut scores = vec![0i32; self.classes.len()];
        for ct in 0..class_tiles {
            array.reset_accumulators();
            for it in 0..comp_tiles {
                let mut acts = [QAct::ZERO; 16];
                for (lane, slot) in acts.iter_mut().enumerate().take(lanes) {
                    if let Some(a) = query.get(it * lanes + lane) {
                        *slot = *a;
                    }
                }
                let mut tile: Tile16 = [[LogWeight::ZERO; 16]; 16];
                for (r, row) in tile.iter_mut().enumerate().take(lanes) {
                    for (c, cell) in row.iter_mut().enumerate().take(lanes) {
                        let class = ct * lanes + c;
                        let comp = it * lanes + r;
                        if class < self.classes.len() && comp < self.embed_dim {
                            *cell = self.classes[class].entry.weights[comp];
                        }
                    }
                }
                array.array_cycle(&acts, &tile);
            }
            for lane in 0..lanes {
                let class = ct * lanes + lane;
                if class < self.classes.len() {
                    let acc = array.accumulator(lane);
                    scores[class] = acc
                        .saturating_add(-(self.classes[class].entry.bias.get() as i32))
                        .get();
                }
            }
        }
        let mut best = 0usize;
        for (j, s) in scores.iter().enumerate() {
            audit::record_compare();
            if *s > scores[best] {
                best = j;
            }
        }
        Ok((self.classes[best].entry.class_id, scores))
    }

    /// Export for the checkpoint text format.
    pub fn export_classes(&self) -> Vec<ClassRecord> {
        self.classes
            .iter()
            .map(|c| ClassRecord {
                class_id: c.entry.class_id,
                shots: c.prototype.shots,
                weights: c.entry.weights.clone(),
                bias: c.entry.bias,
            })
            .collect()
    }

    /// Resume from an exported table. Prototype sums are reconstructed
    /// from the stored (already requantized) weights, so growing an
    /// imported class with [`LearnerState::add_shots`] re-accumulates on
    /// the quantized values.
    pub fn import_classes(&mut self, records: &[ClassRecord]) -> Result<()> {
        for r in records {
            if r.weights.len() != self.embed_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.embed_dim,
                    got: r.weights.len(),
                });
            }
            self.check_room()?;
            self.budget.weight_nibbles -= self.embed_dim;
            self.budget.bias_entries -= 1;
            self.classes.push(LearnedClass {
                prototype: Prototype {
                    class_id: r.class_id,
                    sums: r.weights.iter().map(|w| w.decode()).collect(),
                    shots: r.shots,
                },
                entry: EquivalentFcEntry {
                    class_id: r.class_id,
                    weights: r.weights.clone(),
                    bias: r.bias,
                },
            });
        }
        Ok(())
    }
}

/// Storage per learned class: V 4-bit weights plus one 14-bit bias, each
/// rounded to whole bytes.
pub fn bytes_per_way(embed_dim: usize) -> usize {
    (embed_dim * 4).div_ceil(8) + 2
}

fn identity_tile(lanes: usize) -> Tile16 {
    let mut tile = [[LogWeight::ZERO; 16]; 16];
    for (i, row) in tile.iter_mut().enumerate().take(lanes) {
        row[i] = LogWeight::new(crate::quant::Sign::Pos, 0);
    }
    tile
}
