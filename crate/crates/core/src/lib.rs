//! Symmetrically processed splitting integrators for Hamiltonian Monte Carlo.
//!
//! * [`splitting`]: drift/kick schedules, processors and integration legs.
//! * [`harmonic`]: transfer matrices on the unit oscillator, stability
//!   lengths, expected energy errors and the `ρ` metric.
//! * [`tuner`]: parameter search minimizing `‖ρ‖`.
//! * [`targets`]: target distributions and evaluation counting.
//! * [`hmc`]: the sampler and acceptance-per-gradient curves.
//! * [`fourth_order`]: positive-coefficient fourth-order processed Rowlands.
//! * [`catalog`]: published coefficient sets and integrator names.

pub mod catalog;
pub mod error;
pub mod fourth_order;
pub mod harmonic;
pub mod hmc;
pub mod splitting;
pub mod targets;
pub mod tuner;

pub use error::{Error, Result};
pub use splitting::{
    Flow, FlowRunner, FlowSchedule, LegIntegrator, PhaseState, ProcessedIntegrator,
};
pub use targets::Target;
