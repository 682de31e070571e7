//! Bit-exact functional simulator of a MatMul-free temporal convolutional
//! network (TCN) accelerator with on-chip prototypical few-shot and
//! continual learning.
//!
//! The crate models the accelerator at the value level: 4-bit power-of-two
//! weights, shift-only processing elements, greedy dilation-aware streaming
//! execution with FIFO activation memory, a dual-mode (4x4 / 16x16) compute
//! array with banked weight storage and power gating, and gradient-free
//! class learning by converting prototypes into an equivalent fully
//! connected layer. Independent brute-force references live in [`oracle`]
//! and every datapath result can be checked bit-for-bit against them.
//!
//! With the default `parallel` feature, batch workloads (episode
//! evaluation) fan out over rayon; disabling it falls back to sequential
//! loops with identical results.

pub mod audit;
pub mod cost_model;
pub mod episode;
mod error;
pub mod netmodel;
pub mod oracle;
pub mod pe_array;
pub mod proto_learn;
pub mod quant;
pub mod scheduler;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) fn test_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
