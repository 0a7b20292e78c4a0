//! Multimodal enzyme-class prediction from sequence, structure and quantum
//! descriptors.
//!
//! The crate is organised around a small set of self-contained subsystems:
//!
//! - [`chem`]: SMILES/SELFIES tokenization, molecular graphs, Morgan-style
//!   fingerprints, 2D layout and rasterization.
//! - [`quantum`]: amplitude encoding of descriptor vectors via uniformly
//!   controlled rotations and a dense statevector simulator.
//! - [`tensor`]: dense `f64` tensors with tape-based reverse-mode
//!   differentiation.
//! - [`encoders`]: per-modality encoders producing fixed-width embeddings.
//! - [`model`]: cross-attention fusion, classification head and focal loss.
//! - [`data`]: record schema, JSONL loading, synthetic data generation and
//!   stratified splitting.
//! - [`train`]: Adam optimizer and the deterministic training loop.
//! - [`eval`]: classification metrics, ablation harness and cost profiling.
//!
//! Everything runs on a single thread in plain `f64`; all randomness is
//! drawn from explicitly seeded generators so that repeated runs with the
//! same configuration are bit-for-bit reproducible.

pub mod chem;
pub mod data;
pub mod encoders;
pub mod eval;
pub mod model;
pub mod quantum;
pub mod tensor;
pub mod train;
