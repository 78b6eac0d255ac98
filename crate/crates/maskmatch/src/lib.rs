//! Few-shot segmentation by mask-proposal matching.
//!
//! The pipeline decomposes a query image into class-agnostic soft mask
//! proposals with a transformer decoder over learnable embeddings, then
//! blends the proposals guided by support examples: feature alignment
//! (self + cross), masked-GAP prototypes, cosine similarity, and a
//! learnable matching head. Training is two-stage (proposals first, then
//! matching with the proposal stack frozen) on a deterministic synthetic
//! shapes dataset.
//!
//! Entry points: the `examples/` directory walks each capability; the
//! `maskmatch` binary exposes `gen-data`, `train-pos`, `train-mm`, and
//! `eval` subcommands.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod manifest;
pub mod mm;
pub mod nn;
pub mod pos;
pub mod rng;
pub mod tensor;
pub mod train;
