//! Kernel-wise mixed-precision quantization search.
//!
//! A hierarchical agent assigns a quantization bit number (QBN) to every
//! weight kernel and every activation layer of a CNN. The high-level
//! controller picks a per-layer goal, the low-level controller picks
//! per-kernel QBNs, and both learn with TD3 against analytic accuracy and
//! hardware-cost oracles.

pub mod accuracy;
pub mod agent;
pub mod cost;
pub mod env;
pub mod error;
pub mod model;
pub mod quantize;
pub mod search;

pub use error::{Error, Result};
pub use model::{LayerKind, LayerSpec, NetworkSpec, QbnPolicy, StateVector};
