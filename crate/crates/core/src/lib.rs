//! Cross-stain contrastive pretraining for H&E slide representations.
//!
//! Multi-stain patch-embedding bags (H&E plus aligned IHC) train a residual
//! H&E adapter with a patch-level contrastive loss, then an attention fusion
//! and gated-attention MIL aggregator with a slide-level loss. At inference
//! only the H&E bag is needed.
//!
//! The `cscl` binary wraps the pipeline; see [`cli`].

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod math;
pub mod models;
pub mod training;
pub mod verify;

pub use error::{CsclError, Result};
