//! Mixture-of-Channels (MoC) feed-forward layers on plain `f64` matrices.
//!
//! A SwiGLU FFN keeps all of `G`, `U`, `S = SiLU(G)` and `Z = S ⊙ U` alive for
//! the backward pass. MoC ranks the gate channels per row, keeps only the
//! top-K of them, and stores the surviving channels compactly, which shrinks
//! activation memory from `4·d_ffn + d` to `5·K + d` values per token (and to
//! `3·K + d` with checkpointed recomputation of `S` and `Z`).
//!
//! The crate contains the dense baseline and the MoC layer with exact
//! backward passes, the channel-masking machinery, an analytic
//! activation-memory model with a tape auditor, the constructive embedding of
//! any dense FFN into a grouped-sparse MoC layer, a single-token decode path
//! with multiply-accumulate accounting, and a deterministic teacher-regression
//! training harness. No GPU, no autograd framework, no unsafe.

pub mod decode;
pub mod embedding;
pub mod ffn;
pub mod linalg;
pub mod masking;
pub mod memory;
pub mod moc;
pub mod rng;
pub mod train;

mod error;

pub use error::Error;
