//! Simulation engine for coupled bank-asset contagion dynamics.
//!
//! Banks adjust portfolio holdings in response to their equity growth;
//! prices respond to aggregate holdings flow; equities are marked to market.
//! The product of the two feedback exponents, `gamma = alpha * beta`,
//! controls stability. This crate integrates the lagged second-order system
//! deterministically, classifies outcomes (equilibrium, crash, bubble,
//! timeout), and layers analysis tools on top: per-bank shock sweeps,
//! survival-equity bisection and systemic rankings, phase diagrams over
//! `(alpha, beta)`, rewiring experiments, coupling calibration from price
//! panels, and synthetic network generation.

// The numeric kernels walk several parallel flat arrays at once; indexed
// loops keep those in lockstep more legibly than nested zips.
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod calib;
pub mod engine;
pub mod error;
pub mod mat;
pub mod model;
pub mod netgen;
pub mod rng;

pub use engine::{
    apply_shock, save_trajectory_csvs, save_verdict_json, simulate, verdict_json, Engine,
    FailureEvent, IntegratorConfig, Trajectory, Verdict,
};
pub use error::{ContagionError, Result};
pub use mat::Mat;
pub use model::{
    initial_state, load_network, save_network, AssetRecord, BankRecord, HoldingsMatrix,
    LoadSummary, ModelParams, ShockSpec, SystemState,
};
