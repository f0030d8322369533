//! Phasor-domain co-simulation of a transmission grid with distribution-connected
//! PV inverters, plus aggregate fractional-tripping models and the particle-swarm
//! calibration used to fit them against simulated disturbance traces.
//!
//! The library is organized around six building blocks: [`network`] (admittance
//! assembly, power flow, per-step algebraic solves), [`machines`] (two-axis
//! synchronous machines with DC1A excitation), [`der_fleet`] (individually
//! modeled inverters with voltage-ride-through state machines), [`trip_models`]
//! (aggregate active-fraction blocks), [`calibrate`] (objective + bound-constrained
//! PSO), and [`scenarios`] (disturbance suites, the co-simulation loop, trace
//! persistence, and model evaluation).

pub mod calibrate;
pub mod der_fleet;
pub mod error;
pub mod fixtures;
pub mod machines;
pub mod network;
pub mod scenarios;
pub mod trip_models;

mod util;

pub use calibrate::{FitResult, FittedParams, SwarmConfig};
pub use error::CoreError;
pub use fixtures::FixtureSet;
pub use network::{assemble_test_system, Branch, Bus, BusKind, DisturbanceEvent, PhasorNetwork, TestSystem};
pub use scenarios::{
    evaluate_models, fit_block, generate_suite, read_traces, run_cosimulation, run_suite,
    write_traces, Scenario, SimulationTrace, SuiteKind, SuiteReport, FIT_DECIMATION,
};
pub use trip_models::{make_default_models, CompositeModel, GridCode, ModelFamily, Side};

/// Complex scalar used throughout the network model.
pub type C64 = num_complex::Complex64;

/// Nominal per-code power shares of the installed PV capacity, ordered
/// (INV2005, INV2015, INV2020).
pub const CODE_SHARES: [f64; 3] = [0.15, 0.5, 0.35];
