//! TCN topology description, hardware-limit validation, receptive-field
//! arithmetic and checkpoint storage.
//!
//! A network is a stack of residual blocks (two dilated causal 1D
//! convolutions each, dilation doubling per block) followed by a fully
//! connected head that is modeled as kernel-size-1 convolutions applied to
//! the final timestep. Checkpoints bundle the topology with per-layer
//! power-of-two weight codes, 14-bit biases and rescale specs; they
//! round-trip bit-exactly through both a packed binary format and a
//! line-oriented text format (see [`format`]).

pub mod format;

use rand::Rng;

use crate::quant::{LogWeight, QBias, RescaleSpec, Rounding};
use crate::{Error, Result};

/// One causal 1D convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub has_bias: bool,
}

/// Residual branch of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    /// Pass the block input through unchanged (requires matching widths).
    Identity,
    /// 1x1 convolution projecting the block input onto the output width.
    Conv1x1,
}

/// Two convolutions sharing a dilation factor plus a residual connection
/// from the block input to the block output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualBlockSpec {
    pub conv1: ConvLayerSpec,
    pub conv2: ConvLayerSpec,
    pub residual: ResidualKind,
}

/// Hardware limits enforced by [`NetworkConfig::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HwLimits {
    /// Maximum number of on-chip weights.
    pub max_weights: usize,
    /// Maximum on-chip bias entries.
    pub max_bias_entries: usize,
    /// Widest supported layer (also the widest embedding).
    pub max_channels: usize,
    pub max_kernel: usize,
}

impl Default for HwLimits {
    fn default() -> Self {
        HwLimits {
            max_weights: 133 * 1024,
            max_bias_entries: 2048,
            max_channels: 1024,
            max_kernel: 8,
        }
    }
}

/// Complete network topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub input_channels: usize,
    /// Nominal streaming sequence length (drivers may override per run).
    pub sequence_length: usize,
    pub blocks: Vec<ResidualBlockSpec>,
    /// Widths of the FC head layers applied to the final timestep. The last
    /// entry (or the last conv width when empty) is the embedding dimension.
    pub head: Vec<usize>,
}

/// Identifies one parameter tensor within a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRole {
    /// `position` is 1 or 2 within the block.
    Conv {
        block: usize,
        position: u8,
    },
    /// Residual 1x1 projection of a block.
    Projection {
        block: usize,
    },
    Head {
        index: usize,
    },
}

impl std::fmt::Display for LayerRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerRole::Conv { block, position } => write!(f, "block{block}.conv{position}"),
            LayerRole::Projection { block } => write!(f, "block{block}.proj"),
            LayerRole::Head { index } => write!(f, "head{index}"),
        }
    }
}

/// Shape of one parameter tensor, in canonical checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub role: LayerRole,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub has_bias: bool,
}

impl LayerShape {
    pub fn weight_count(&self) -> usize {
        self.in_ch * self.out_ch * self.kernel
    }
}

/// A violated hardware or structural constraint. Violations are data, not
/// faults: [`NetworkConfig::validate`] collects all of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoBlocks,
    WeightCount {
        count: usize,
        max: usize,
    },
    BiasCount {
        count: usize,
        max: usize,
    },
    ChannelWidth {
        layer: String,
        width: usize,
        max: usize,
    },
    KernelSize {
        layer: String,
        kernel: usize,
        max: usize,
    },
    DilationNotPowerOfTwo {
        block: usize,
        dilation: usize,
    },
    DilationSchedule {
        block: usize,
        expected: usize,
        got: usize,
    },
    DilationMismatch {
        block: usize,
    },
    ChannelChain {
        layer: String,
        expected: usize,
        got: usize,
    },
    IdentityResidualWidth {
        block: usize,
        in_ch: usize,
        out_ch: usize,
    },
    EmptyDimension {
        what: String,
    },
    RescaleShift {
        layer: String,
    },
    ZeroPoint {
        layer: String,
        zero_point: i8,
    },
    ShapeMismatch {
        layer: String,
        what: String,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NoBlocks => write!(f, "no blocks"),
            Violation::WeightCount { count, max } => {
                write!(f, "weight count {count} exceeds {max}")
            }
            Violation::BiasCount { count, max } => {
                write!(f, "bias count {count} exceeds {max}")
            }
            Violation::ChannelWidth { layer, width, max } => {
                write!(f, "{layer}: channel width {width} exceeds {max}")
            }
            Violation::KernelSize { layer, kernel, max } => {
                write!(f, "{layer}: kernel size {kernel} exceeds {max}")
            }
            Violation::DilationNotPowerOfTwo { block, dilation } => {
                write!(f, "block{block}: dilation {dilation} is not a power of two")
            }
            Violation::DilationSchedule {
                block,
                expected,
                got,
            } => {
                write!(
                    f,
                    "block{block}: dilation {got}, schedule requires {expected}"
                )
            }
            Violation::DilationMismatch { block } => {
                write!(f, "block{block}: conv1 and conv2 dilations differ")
            }
            Violation::ChannelChain {
                layer,
                expected,
                got,
            } => {
                write!(f, "{layer}: expects {expected} input channels, gets {got}")
            }
            Violation::IdentityResidualWidth {
                block,
                in_ch,
                out_ch,
            } => {
                write!(
                    f,
                    "block{block}: identity residual between widths {in_ch} and {out_ch}"
                )
            }
            Violation::EmptyDimension { what } => write!(f, "{what} must be positive"),
            Violation::RescaleShift { layer } => {
                write!(f, "{layer}: rescale shift out of range")
            }
            Violation::ZeroPoint { layer, zero_point } => {
                write!(
                    f,
                    "{layer}: nonzero activation zero-point {zero_point} unsupported"
                )
            }
            Violation::ShapeMismatch { layer, what } => write!(f, "{layer}: {what}"),
        }
    }
}

impl NetworkConfig {
    /// Builds the canonical doubling-dilation stack: `blocks` residual
    /// blocks of `channels` width (the first projecting from
    /// `input_channels`), uniform kernel, head widths appended.
    pub fn uniform(
        input_channels: usize,
        sequence_length: usize,
        blocks: usize,
        channels: usize,
        kernel: usize,
        head: Vec<usize>,
    ) -> NetworkConfig {
        let mut specs = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let dilation = 1usize << b;
            let in_ch = if b == 0 { input_channels } else { channels };
            let conv = |i, o| ConvLayerSpec {
                in_channels: i,
                out_channels: o,
                kernel_size: kernel,
                dilation,
                has_bias: true,
            };
            specs.push(ResidualBlockSpec {
                conv1: conv(in_ch, channels),
                conv2: conv(channels, channels),
                residual: if in_ch == channels {
                    ResidualKind::Identity
                } else {
                    ResidualKind::Conv1x1
                },
            });
        }
        NetworkConfig {
            input_channels,
            sequence_length,
            blocks: specs,
            head,
        }
    }

    /// Raw-audio keyword-spotting configuration: 13 blocks (26 conv layers)
    /// of 48 channels at kernel size 2 give a receptive field of 16383
    /// timesteps — enough to classify one second of 16 kHz audio without
    /// any feature extraction — within the on-chip weight budget.
    pub fn kws_raw_audio() -> NetworkConfig {
        NetworkConfig::uniform(1, 16_000, 13, 48, 2, vec![12])
    }

    /// Few-shot embedder for 28x28 images flattened to pixel sequences:
    /// 14 conv layers, 54 channels, kernel size 3, 48-dimensional embedding.
    pub fn fsl_image_embedder() -> NetworkConfig {
        NetworkConfig::uniform(1, 784, 7, 54, 3, vec![48])
    }

    /// Number of convolution layers in the residual stack (excludes
    /// projections and head).
    pub fn conv_layers(&self) -> usize {
        self.blocks.len() * 2
    }

    /// Embedding dimension: last head width, or the last block's output
    /// width when there is no head.
    pub fn embedding_dim(&self) -> usize {
        self.head
            .last()
            .copied()
            .or_else(|| self.blocks.last().map(|b| b.conv2.out_channels))
            .unwrap_or(0)
    }

    /// Parameter tensors in canonical checkpoint order: per block conv1,
    /// conv2 and (when projecting) the residual 1x1, then the head.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            shapes.push(LayerShape {
                role: LayerRole::Conv {
                    block: b,
                    position: 1,
                },
                in_ch: block.conv1.in_channels,
                out_ch: block.conv1.out_channels,
                kernel: block.conv1.kernel_size,
                dilation: block.conv1.dilation,
                has_bias: block.conv1.has_bias,
            });
            shapes.push(LayerShape {
                role: LayerRole::Conv {
                    block: b,
                    position: 2,
                },
                in_ch: block.conv2.in_channels,
                out_ch: block.conv2.out_channels,
                kernel: block.conv2.kernel_size,
                dilation: block.conv2.dilation,
                has_bias: block.conv2.has_bias,
            });
            if block.residual == ResidualKind::Conv1x1 {
                shapes.push(LayerShape {
                    role: LayerRole::Projection { block: b },
                    in_ch: block.conv1.in_channels,
                    out_ch: block.conv2.out_channels,
                    kernel: 1,
                    dilation: 1,
                    has_bias: true,
                });
            }
        }
        let mut prev = self
            .blocks
            .last()
            .map(|b| b.conv2.out_channels)
            .unwrap_or(self.input_channels);
        for (i, width) in self.head.iter().enumerate() {
            shapes.push(LayerShape {
                role: LayerRole::Head { index: i },
                in_ch: prev,
                out_ch: *width,
                kernel: 1,
                dilation: 1,
                has_bias: true,
            });
            prev = *width;
        }
        shapes
    }

    pub fn weight_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(LayerShape::weight_count)
            .sum()
    }

    pub fn bias_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .filter(|s| s.has_bias)
            .map(|s| s.out_ch)
            .sum()
    }

    /// Receptive field of the residual stack for uniform kernel size `k`:
    /// one plus the dilated reach of every block, which doubles per block.
    /// Rejects non-uniform kernels (use the scheduler's dependency sets for
    /// the exact per-graph depth instead).
    pub fn receptive_field(&self) -> Result<usize> {
        if self.blocks.is_empty() {
            return Err(Error::Invalid(vec![Violation::NoBlocks]));
        }
        let k = self.blocks[0].conv1.kernel_size;
        for block in &self.blocks {
            if block.conv1.kernel_size != k || block.conv2.kernel_size != k {
                return Err(Error::NonUniformKernel);
            }
        }
        let mut r = 1usize;
        for b in 1..=self.blocks.len() {
            r += (1usize << b) * (k - 1);
        }
        Ok(r)
    }

    pub fn validate(&self) -> Vec<Violation> {
        self.validate_with(&HwLimits::default())
    }

    pub fn validate_with(&self, limits: &HwLimits) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.blocks.is_empty() {
            out.push(Violation::NoBlocks);
        }
        if self.input_channels == 0 {
            out.push(Violation::EmptyDimension {
                what: "input_channels".into(),
            });
        }
        if self.sequence_length == 0 {
            out.push(Violation::EmptyDimension {
                what: "sequence_length".into(),
            });
        }
        let mut prev = self.input_channels;
        for (b, block) in self.blocks.iter().enumerate() {
            if block.conv1.dilation != block.conv2.dilation {
                out.push(Violation::DilationMismatch { block: b });
            }
            let d = block.conv1.dilation;
            if !d.is_power_of_two() {
                out.push(Violation::DilationNotPowerOfTwo {
                    block: b,
                    dilation: d,
                });
            }
            let expected = 1usize << b;
            if d != expected {
                out.push(Violation::DilationSchedule {
                    block: b,
                    expected,
                    got: d,
                });
            }
            if block.conv1.in_channels != prev {
                out.push(Violation::ChannelChain {
                    layer: format!("block{b}.conv1"),
                    expected: prev,
                    got: block.conv1.in_channels,
                });
            }
            if block.conv2.in_channels != block.conv1.out_channels {
                out.push(Violation::ChannelChain {
                    layer: format!("block{b}.conv2"),
                    expected: block.conv1.out_channels,
                    got: block.conv2.in_channels,
                });
            }
            if block.residual == ResidualKind::Identity
                && block.conv1.in_channels != block.conv2.out_channels
            {
                out.push(Violation::IdentityResidualWidth {
                    block: b,
                    in_ch: block.conv1.in_channels,
                    out_ch: block.conv2.out_channels,
                });
            }
            for (name, conv) in [("conv1", &block.conv1), ("conv2", &block.conv2)] {
                let layer = format!("block{b}.{name}");
                if conv.in_channels == 0 || conv.out_channels == 0 {
                    out.push(Violation::EmptyDimension {
                        what: format!("{layer} channels"),
                    });
                }
                let widest = conv.in_channels.max(conv.out_channels);
                if widest > limits.max_channels {
                    out.push(Violation::ChannelWidth {
                        layer: layer.clone(),
                        width: widest,
                        max: limits.max_channels,
                    });
                }
                if conv.kernel_size == 0 {
                    out.push(Violation::EmptyDimension {
                        what: format!("{layer} kernel"),
                    });
                } else if conv.kernel_size > limits.max_kernel {
                    out.push(Violation::KernelSize {
                        layer,
                        kernel: conv.kernel_size,
                        max: limits.max_kernel,
                    });
                }
            }
            prev = block.conv2.out_channels;
        }
        for (i, width) in self.head.iter().enumerate() {
            if *width == 0 {
                out.push(Violation::EmptyDimension {
                    what: format!("head{i} width"),
                });
            } else if *width > limits.max_channels {
                out.push(Violation::ChannelWidth {
                    layer: format!("head{i}"),
                    width: *width,
                    max: limits.max_channels,
                });
            }
        }
        let weights = self.weight_count();
        if weights > limits.max_weights {
            out.push(Violation::WeightCount {
                count: weights,
                max: limits.max_weights,
            });
        }
        let biases = self.bias_count();
        if biases > limits.max_bias_entries {
            out.push(Violation::BiasCount {
                count: biases,
                max: limits.max_bias_entries,
            });
        }
        out
    }
}

/// Parameters of one layer: weight codes in `[out][in][tap]` order, biases
/// (empty when the layer has none) and the OPE rescale spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerParams {
    pub weights: Vec<LogWeight>,
    pub bias: Vec<QBias>,
    pub rescale: RescaleSpec,
}

impl LayerParams {
    pub fn zeroed(shape: &LayerShape) -> LayerParams {
        LayerParams {
            weights: vec![LogWeight::ZERO; shape.weight_count()],
            bias: if shape.has_bias {
                vec![QBias::default(); shape.out_ch]
            } else {
                Vec::new()
            },
            rescale: RescaleSpec::default(),
        }
    }
}

/// Topology plus all parameter tensors, aligned with
/// [`NetworkConfig::layer_shapes`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub layers: Vec<LayerParams>,
}

impl Checkpoint {
    /// Weight of `layer` at (out channel, in channel, tap).
    pub fn weight(
        &self,
        layer: usize,
        shape: &LayerShape,
        oc: usize,
        ic: usize,
        tap: usize,
    ) -> LogWeight {
        self.layers[layer].weights[(oc * shape.in_ch + ic) * shape.kernel + tap]
    }

    pub fn bias(&self, layer: usize, oc: usize) -> QBias {
        self.layers[layer].bias.get(oc).copied().unwrap_or_default()
    }

    /// Checks that every tensor matches its shape and every rescale spec is
    /// usable. Violations name the offending layer.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = self.config.validate();
        let shapes = self.config.layer_shapes();
        if shapes.len() != self.layers.len() {
            out.push(Violation::ShapeMismatch {
                layer: "checkpoint".into(),
                what: format!(
                    "{} layer tensors for {} layers",
                    self.layers.len(),
                    shapes.len()
                ),
            });
            return out;
        }
        for (shape, params) in shapes.iter().zip(&self.layers) {
            let layer = shape.role.to_string();
            if params.weights.len() != shape.weight_count() {
                out.push(Violation::ShapeMismatch {
                    layer: layer.clone(),
                    what: format!(
                        "{} weight codes, shape needs {}",
                        params.weights.len(),
                        shape.weight_count()
                    ),
                });
            }
            let want_bias = if shape.has_bias { shape.out_ch } else { 0 };
            if params.bias.len() != want_bias {
                out.push(Violation::ShapeMismatch {
                    layer: layer.clone(),
                    what: format!("{} biases, shape needs {want_bias}", params.bias.len()),
                });
            }
            if !params.rescale.valid() {
                out.push(Violation::RescaleShift {
                    layer: layer.clone(),
                });
            }
            if params.rescale.zero_point != 0 {
                out.push(Violation::ZeroPoint {
                    layer,
                    zero_point: params.rescale.zero_point,
                });
            }
        }
        out
    }

    pub fn into_valid(self) -> Result<Checkpoint> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(Error::Invalid(violations))
        }
    }

    /// [`Checkpoint::random`] with a self-contained seeded generator.
    pub fn random_seeded(config: NetworkConfig, seed: u64) -> Checkpoint {
        use rand::SeedableRng;
        Checkpoint::random(config, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }

    /// Deterministic pseudo-random checkpoint for fixtures and tests.
    /// Output rescale shifts are sized so activations stay informative.
    pub fn random<R: Rng>(config: NetworkConfig, rng: &mut R) -> Checkpoint {
        let mut stats = crate::quant::QuantStats::default();
        let layers = config
            .layer_shapes()
            .iter()
            .map(|shape| {
                let weights = (0..shape.weight_count())
                    .map(|_| {
                        if rng.gen_bool(0.15) {
                            LogWeight::ZERO
                        } else {
                            let v: i64 = rng.gen_range(-32i64..=32);
                            crate::quant::quantize_log2_int(v, Rounding::Nearest, &mut stats)
                        }
                    })
                    .collect();
                let bias = if shape.has_bias {
                    (0..shape.out_ch)
                        .map(|_| QBias::new(rng.gen_range(-48..=96)))
                        .collect()
                } else {
                    Vec::new()
                };
                // sized so post-shift values land around the 4-bit range:
                // signs cancel, so the sum grows ~sqrt(fan_in)
                let fan_in = (shape.in_ch * shape.kernel).max(1);
                let bits = (usize::BITS - fan_in.leading_zeros()) as u8;
                let base = 2 + bits / 2;
                let rescale = RescaleSpec {
                    input_shift: rng.gen_range(0..=1),
                    output_shift: (base + rng.gen_range(0..2)).min(RescaleSpec::MAX_OUTPUT_SHIFT),
                    overflow: if rng.gen_bool(0.8) {
                        crate::quant::OverflowMode::Wrap
                    } else {
                        crate::quant::OverflowMode::Clamp
                    },
                    zero_point: 0,
                };
                LayerParams {
                    weights,
                    bias,
                    rescale,
                }
            })
            .collect();
        Checkpoint { config, layers }
    }
}
