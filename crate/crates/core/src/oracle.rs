//! Independent brute-force references.
//!
//! [`dense_forward`] evaluates every node of the network — all timesteps,
//! no pruning — using decoded integer weights and real multiplications
//! (reported to the audit as such), with the same saturating accumulator,
//! rescale and requantization rules and the same tap-major, input-ascending
//! accumulation order as the datapath. The streamed, shift-only execution
//! must match it bit for bit. [`l2_prototype_classify`] is the direct
//! squared-distance prototype classifier the learning path must agree
//! with, and [`dense_cost`] prices the unpruned weight-stationary baseline.
//!
//! Everything here walks the network config directly; no scheduler or
//! array code is involved beyond the shared numeric primitives.

use crate::audit;
use crate::netmodel::{Checkpoint, NetworkConfig, ResidualKind};
use crate::quant::{requantize, Accum, QAct, QBias, QuantStats, RescaleSpec};

/// Dense activations of one level: `values[t][ch]`.
type Plane = Vec<Vec<QAct>>;

fn mul(w: i32, a: i32) -> i32 {
    audit::record_mul();
    w * a
}

fn output_stage(
    acc: Accum,
    rescale: &RescaleSpec,
    bias: QBias,
    residual: Option<i32>,
    stats: &mut QuantStats,
) -> QAct {
    let mut acc = acc;
    if let Some(r) = residual {
        audit::record_shift();
        let s = rescale.input_shift;
        let aligned = if s >= 0 { r << s } else { r >> (-s) };
        acc = acc.saturating_add(aligned);
    }
    acc = acc.saturating_add(bias.get() as i32);
    requantize(acc, rescale, stats)
}

/// One dense convolution plane: every output timestep, implicit zero
/// padding before t = 0, accumulation tap-major then input-ascending.
#[allow(clippy::too_many_arguments)]
fn conv_plane(
    ckpt: &Checkpoint,
    slot: usize,
    input: &Plane,
    kernel: usize,
    dilation: usize,
    in_ch: usize,
    out_ch: usize,
    residual: Option<&[Vec<i32>]>,
    skip: &dyn Fn(usize) -> bool,
    stats: &mut QuantStats,
) -> Plane {
    let shapes = ckpt.config.layer_shapes();
    let shape = &shapes[slot];
    let params = &ckpt.layers[slot];
    let n = input.len();
    let mut out = vec![vec![QAct::ZERO; out_ch]; n];
    for t in 0..n {
        if skip(t) {
            continue;
        }
        for oc in 0..out_ch {
            let mut acc = Accum::ZERO;
            for tap in 0..kernel {
                let reach = tap * dilation;
                if reach > t {
                    continue;
                }
                let row = &input[t - reach];
                for (ic, act) in row.iter().enumerate().take(in_ch) {
                    let w = ckpt.weight(slot, shape, oc, ic, tap).decode();
                    acc = acc.saturating_add(mul(w, act.get() as i32));
                }
            }
            let bias = if shape.has_bias {
                ckpt.bias(slot, oc)
            } else {
                QBias::default()
            };
            let res = residual.map(|r| r[t][oc]);
            out[t][oc] = output_stage(acc, &params.rescale, bias, res, stats);
        }
    }
    out
}

/// Evaluates the whole network densely and returns the final-timestep
/// output vector. `skip(level, t)` forces that node to zero, for probing
/// whether a node actually matters; pass `|_, _| false` for the plain
/// forward pass. Levels count the input as 0, each conv layer and each
/// head layer as one more.
pub fn dense_forward_masked(
    ckpt: &Checkpoint,
    input: &[Vec<QAct>],
    skip: &dyn Fn(usize, usize) -> bool,
) -> Vec<QAct> {
    let config = &ckpt.config;
    let shapes = config.layer_shapes();
    let slot_of = |role| shapes.iter().position(|s| s.role == role).unwrap();
    let mut stats = QuantStats::default();
    let n = input.len();

    let mut plane: Plane = input
        .iter()
        .enumerate()
        .map(|(t, row)| {
            if skip(0, t) {
                vec![QAct::ZERO; row.len()]
            } else {
                row.clone()
            }
        })
        .collect();
    let mut level = 0usize;

    for (b, block) in config.blocks.iter().enumerate() {
        let block_input = plane.clone();
        let conv1 = slot_of(crate::netmodel::LayerRole::Conv {
            block: b,
            position: 1,
        });
        level += 1;
        let skip1 = {
            let l = level;
            move |t: usize| skip(l, t)
        };
        let mid = conv_plane(
            ckpt,
            conv1,
            &plane,
            block.conv1.kernel_size,
            block.conv1.dilation,
            block.conv1.in_channels,
            block.conv1.out_channels,
            None,
            &skip1,
            &mut stats,
        );

        // residual operand for every timestep: identity passthrough or the
        // 1x1 projection (itself a full layer with bias and rescale)
        let residual: Vec<Vec<i32>> = match block.residual {
            ResidualKind::Identity => block_input
                .iter()
                .map(|row| row.iter().map(|a| a.get() as i32).collect())
                .collect(),
            ResidualKind::Conv1x1 => {
                let proj = slot_of(crate::netmodel::LayerRole::Projection { block: b });
                let projected = conv_plane(
                    ckpt,
                    proj,
                    &block_input,
                    1,
                    1,
                    block.conv1.in_channels,
                    block.conv2.out_channels,
                    None,
                    &|_| false,
                    &mut stats,
                );
                projected
                    .iter()
                    .map(|row| row.iter().map(|a| a.get() as i32).collect())
                    .collect()
            }
        };

        let conv2 = slot_of(crate::netmodel::LayerRole::Conv {
            block: b,
            position: 2,
        });
        level += 1;
        let skip2 = {
            let l = level;
            move |t: usize| skip(l, t)
        };
        plane = conv_plane(
            ckpt,
            conv2,
            &mid,
            block.conv2.kernel_size,
            block.conv2.dilation,
            block.conv2.in_channels,
            block.conv2.out_channels,
            Some(&residual),
            &skip2,
            &mut stats,
        );
    }

    let mut prev_width = config
        .blocks
        .last()
        .map(|b| b.conv2.out_channels)
        .unwrap_or(config.input_channels);
    for (i, width) in config.head.iter().enumerate() {
        let slot = slot_of(crate::netmodel::LayerRole::Head { index: i });
        level += 1;
        let skip_h = {
            let l = level;
            move |t: usize| skip(l, t)
        };
        plane = conv_plane(
            ckpt, slot, &plane, 1, 1, prev_width, *width, None, &skip_h, &mut stats,
        );
        prev_width = *width;
    }

    plane[n - 1].clone()
}

/// Plain dense forward pass: the bit-exact reference for the streaming
/// engine.
pub fn dense_forward(ckpt: &Checkpoint, input: &[Vec<QAct>]) -> Vec<QAct> {
    dense_forward_masked(ckpt, input, &|_, _| false)
}

/// Unpruned baseline costs under weight-stationary full-sequence
/// buffering: every layer holds all `n` timesteps, every node is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseCost {
    /// Activation elements across all non-input layers.
    pub activation_count: usize,
    /// Bytes for those activations at 4 bits each, rounded per layer.
    pub activation_bytes: usize,
    /// Full-sequence input buffering.
    pub input_bytes: usize,
    /// Multiply-accumulates over every node, dilation zeros included.
    pub macs: u64,
    /// Computed nodes (timesteps x layers, projections included).
    pub nodes: u64,
}

/// Core counting over (in, out, kernel) layer triples.
pub fn dense_cost_for_layers(
    layers: &[(usize, usize, usize)],
    input_channels: usize,
    n: usize,
) -> DenseCost {
    let mut cost = DenseCost {
        activation_count: 0,
        activation_bytes: 0,
        input_bytes: (n * input_channels * 4).div_ceil(8),
        macs: 0,
        nodes: 0,
    };
    for (in_ch, out_ch, kernel) in layers {
        cost.activation_count += n * out_ch;
        cost.activation_bytes += (n * out_ch * 4).div_ceil(8);
        cost.macs += (n * in_ch * out_ch * kernel) as u64;
        cost.nodes += n as u64;
    }
    cost
}

pub fn dense_cost(config: &NetworkConfig, n: usize) -> DenseCost {
    let layers: Vec<(usize, usize, usize)> = config
        .layer_shapes()
        .iter()
        .map(|s| (s.in_ch, s.out_ch, s.kernel))
        .collect();
    dense_cost_for_layers(&layers, config.input_channels, n)
}

/// Direct prototype classifier: class-wise mean of the support
/// embeddings, then argmin squared L2 distance to the query. Ties go to
/// the lowest class index.
pub fn l2_prototype_classify(support: &[Vec<Vec<f64>>], query: &[f64]) -> usize {
    assert!(!support.is_empty(), "at least one class");
    let mut best = (0usize, f64::INFINITY);
    for (class, shots) in support.iter().enumerate() {
        assert!(!shots.is_empty(), "at least one shot per class");
        let k = shots.len() as f64;
        let dim = query.len();
        let mut dist = 0.0;
        for i in 0..dim {
            let mean = shots.iter().map(|s| s[i]).sum::<f64>() / k;
            let d = mean - query[i];
            dist += d * d;
        }
        if dist < best.1 {
            best = (class, dist);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{Checkpoint, LayerParams, NetworkConfig};
    use crate::quant::{LogWeight, OverflowMode, RescaleSpec, Sign};

    #[test]
    fn zero_network_outputs_zero() {
        let config = NetworkConfig::uniform(1, 6, 1, 2, 2, vec![]);
        let shapes = config.layer_shapes();
        let layers = shapes.iter().map(LayerParams::zeroed).collect();
        let ckpt = Checkpoint { config, layers };
        let input = vec![vec![QAct::ZERO]; 6];
        assert!(dense_forward(&ckpt, &input).iter().all(|a| a.get() == 0));
    }

    #[test]
    fn identity_single_block_passes_input_through() {
        // conv2's identity-diagonal tap 0 with unit rescale reproduces the
        // conv1 output; conv1 likewise passes the input
        let config = NetworkConfig::uniform(2, 5, 1, 2, 2, vec![]);
        let shapes = config.layer_shapes();
        let mut layers: Vec<LayerParams> = shapes.iter().map(LayerParams::zeroed).collect();
        for (slot, shape) in shapes.iter().enumerate() {
            for oc in 0..shape.out_ch {
                // tap 0, ic == oc
                layers[slot].weights[(oc * shape.in_ch + oc) * shape.kernel] =
                    LogWeight::new(Sign::Pos, 0);
            }
            // residual contributes; shift it away to keep the identity
            layers[slot].rescale = RescaleSpec {
                input_shift: -7,
                output_shift: 0,
                overflow: OverflowMode::Clamp,
                zero_point: 0,
            };
        }
        let ckpt = Checkpoint { config, layers };
        let input: Vec<Vec<QAct>> = (0..5)
            .map(|t| vec![QAct::new((t % 8) as u8), QAct::new((t % 3) as u8)])
            .collect();
        let out = dense_forward(&ckpt, &input);
        assert_eq!(out, input[4]);
    }

    #[test]
    fn masked_nodes_can_change_the_output() {
        // zeroing the newest conv1 output perturbs the result for some
        // checkpoint (not necessarily all: a weight draw can wash it out)
        let hit = (0..20).any(|seed| {
            let mut rng = crate::test_rng(seed);
            let config = NetworkConfig::uniform(1, 8, 1, 3, 2, vec![]);
            let ckpt = Checkpoint::random(config, &mut rng);
            let input: Vec<Vec<QAct>> = (0..8)
                .map(|t| vec![QAct::new((3 + t * 5) as u8 % 16)])
                .collect();
            let base = dense_forward(&ckpt, &input);
            let masked = dense_forward_masked(&ckpt, &input, &|level, t| level == 1 && t == 7);
            base != masked
        });
        assert!(hit);
    }

    #[test]
    fn dense_cost_counts_a_single_layer() {
        let cost = dense_cost_for_layers(&[(1, 1, 2)], 1, 4);
        assert_eq!(cost.activation_count, 4);
        assert_eq!(cost.activation_bytes, 2);
        assert_eq!(cost.input_bytes, 2);
        assert_eq!(cost.macs, 8);
    }

    #[test]
    fn prototype_classifier_hand_cases() {
        // query lying on a prototype
        let support = vec![vec![vec![2.0, 4.0]], vec![vec![8.0, 1.0]]];
        assert_eq!(l2_prototype_classify(&support, &[2.0, 4.0]), 0);
        assert_eq!(l2_prototype_classify(&support, &[8.0, 1.0]), 1);
        // averaging: class 0 prototype is (2,4) from two shots
        let support = vec![vec![vec![1.0, 3.0], vec![3.0, 5.0]], vec![vec![8.0, 1.0]]];
        assert_eq!(l2_prototype_classify(&support, &[2.0, 4.0]), 0);
        // equidistant tie picks the lowest class index
        let support = vec![vec![vec![0.0]], vec![vec![2.0]]];
        assert_eq!(l2_prototype_classify(&support, &[1.0]), 0);
    }

    #[test]
    fn dense_forward_records_multiplies() {
        let mut rng = crate::test_rng(5);
        let config = NetworkConfig::uniform(1, 4, 1, 2, 2, vec![]);
        let ckpt = Checkpoint::random(config, &mut rng);
        let input = vec![vec![QAct::new(3)]; 4];
        let (_, counts) = crate::audit::with_scope(|| dense_forward(&ckpt, &input));
        assert!(counts.muls > 0, "reference path must report its multiplies");
    }
}
