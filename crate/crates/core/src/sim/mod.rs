//! Crosstalk physics of transmon qubits joined by tunable couplers.
//!
//! Units: frequencies in GHz, times in ns, and a state evolves as
//! `exp(-i 2π H t) ψ0`. A resonant drive of strength `Ω` therefore
//! completes a π rotation at `t = 1 / (2Ω)`.

mod basis;
mod crosstalk;
mod dataset;
mod hamiltonian;
mod propagate;
mod zz;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use basis::FockBasis;
pub use crosstalk::{
    durations, target_excitation, BasisCaps, Operation, ScheduledOp, Scenario, Simulator,
};
pub use dataset::{
    clamp_log_error, generate_dataset, local_window, scale_holdout_dataset, CrosstalkSample, Dataset,
    DatasetConfig, OpKind, SampleDists, SampleFreqs, SplitDataset, LOG_ERR_MAX, LOG_ERR_MIN,
};
pub use hamiltonian::{build_block_hamiltonian, Axis, BlockDrive, BuildingBlock, Drive, ModeSystem};
pub use propagate::{evolve, Propagator};
pub use zz::{g_xy_eff, g_zz_eff, solve_zz_free, ZzSolver};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("no ZZ-free coupler frequency for qubits at {omega_q0} / {omega_q1} GHz in the search window")]
    NoZzFreePoint { omega_q0: f64, omega_q1: f64 },
    #[error("ambiguous dressed-state match for {state} (best overlap {overlap:.3})")]
    Degeneracy { state: &'static str, overlap: f64 },
    #[error("coupler at {omega_c} GHz is only {detuning:.3} GHz from a qubit; perturbative coupling invalid")]
    PerturbationInvalid { omega_c: f64, detuning: f64 },
    #[error("effective gate coupling {g_ghz:e} GHz too small to define gate durations")]
    GateCouplingTooSmall { g_ghz: f64 },
    #[error("initial state norm {0} is not 1")]
    NotNormalized(f64),
    #[error("assembled Hamiltonian is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("graph with {nodes} nodes exceeds the simulator limit of {limit}")]
    TooLarge { nodes: usize, limit: usize },
    #[error("invalid simulation request: {0}")]
    Invalid(String),
}

/// Device constants shared by every simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicalParams {
    pub alpha: f64,
    pub g_qq: f64,
    pub g_qc: f64,
    pub drive_omega: f64,
    pub residual_2hop: f64,
    pub residual_3hop: f64,
    pub qubit_band: (f64, f64),
    pub coupler_guess: f64,
    pub coupler_window: (f64, f64),
    pub levels_per_mode: usize,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            alpha: -0.300,
            g_qq: 0.010,
            g_qc: 0.100,
            drive_omega: 0.025,
            residual_2hop: 1e-4,
            residual_3hop: 1e-5,
            qubit_band: (4.9, 5.1),
            coupler_guess: 6.0,
            coupler_window: (5.3, 7.0),
            levels_per_mode: 3,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Invalid(m.to_string()));
        if self.levels_per_mode < 3 {
            return bad("levels_per_mode must be at least 3");
        }
        if !(self.qubit_band.0 < self.qubit_band.1) {
            return bad("qubit band must be nonempty");
        }
        if !(self.coupler_window.0 < self.coupler_window.1) {
            return bad("coupler window must be nonempty");
        }
        if self.g_qq < 0.0 || self.g_qc < 0.0 || self.residual_2hop < 0.0 || self.residual_3hop < 0.0 {
            return bad("couplings must be nonnegative");
        }
        if !(self.drive_omega > 0.0) {
            return bad("drive strength must be positive");
        }
        Ok(())
    }

    pub fn band_span(&self) -> f64 {
        self.qubit_band.1 - self.qubit_band.0
    }

    /// Residual exchange coupling between qubits `d` hops apart (`d ≥ 2`).
    pub fn residual(&self, d: u32) -> f64 {
        match d {
            2 => self.residual_2hop,
            3 => self.residual_3hop,
            _ => 0.0,
        }
    }
}
