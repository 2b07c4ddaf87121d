//! Robustness margins for linear neutral and retarded systems whose delays
//! vary in time.
//!
//! The crate computes L₂ and L∞ (BIBO) gains of a nominal fixed-delay system,
//! turns them into small-gain conditions on the admissible delay variation,
//! and checks those conditions against direct simulation.

pub mod analysis;
pub mod bibo;
pub mod feedback;
pub mod freq;
pub mod io;
pub mod linalg;
pub mod margins;
pub mod model;
pub mod quad;
pub mod simulate;

pub use model::{DelaySystem, PerturbationBounds};
