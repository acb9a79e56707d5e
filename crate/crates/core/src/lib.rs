//! Frequency-aware multimodal recommendation engine.
//!
//! The pipeline builds graph-propagated representations per modality,
//! decomposes each into orthogonal frequency bands via thin SVD, fuses the
//! bands through identity-preserving per-node gates, and trains end-to-end
//! with a BCE objective regularized by an incremental information-bottleneck
//! surrogate and a cross-modal spectral consistency loss.
//!
//! The [`theory`] module is a self-contained Gaussian-IB sandbox that
//! numerically verifies the spectral information-theoretic claims the design
//! rests on (bandwise decoupling, reverse water-filling, the Wiener limit).

pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod graph;
pub mod losses;
pub mod spectral;
pub mod synth;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
