//! Simulation and inference toolkit for cross-site CSI structure.
//!
//! - [`scene`]: single-bounce geometric channel simulator
//! - [`features`]: angular transform, log-whitening, DFT codebooks, APS
//! - [`dependence`]: entropy, mutual information, canonical correlation, AoA scaling
//! - [`neural`]: MLP and GRU sequence-to-sequence models with exact gradients
//! - [`tasks`]: static, sequence and APS inference harnesses
//! - [`scheduling`]: APS-overlap user grouping and sum-rate evaluation

pub mod dependence;
pub mod features;
pub mod neural;
pub mod scene;
pub mod scheduling;
pub mod seed;
pub mod tasks;
