//! Two-point boundary-value solver for the coefficient dynamics.
//!
//! The discrete problem has one complex equation per node and mode:
//!
//! * node 0: `C(t_i) = C₀`;
//! * node 1: `(C_1 − C_0)/dt = 0`, the discrete `Ċ(t_i) = 0`;
//! * nodes `2..N−2`: the interior evolution residual;
//! * node `N−1`: the natural boundary condition, the derivative of the
//!   discrete action with respect to `C*(t_f)`.
//!
//! The constrained variant adds an endpoint multiplier and the row
//! `Σ|C(t_f)|² = 1`.

mod linearization;
mod newton;
pub mod nonlocal;
mod picard;
pub mod residual;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{Couplings, ModeSpectrum, TimeGrid};
use crate::trajectory::CoefficientTrajectory;
use crate::{Error, Result};

pub use nonlocal::{c_tilde, c_tilde_all, NonlocalContext};
pub use residual::{
    ide_residual_constrained, ide_residual_unconstrained, lambda_assembly, lambda_of_t, lambda_trace, nbc_residual,
};

use residual::{Assembler, BoundarySystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Unconstrained,
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    StationarityNewton,
    PicardRelaxation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    ConstantHold,
    PhaseRotating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub variant: Variant,
    pub strategy: Strategy,
    pub max_iters: usize,
    pub residual_tol: f64,
    pub continuation_steps_nu: usize,
    pub initial_guess: InitialGuess,
    /// Relaxation factor for Picard sweeps, in `(0, 1]`.
    pub picard_damping: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Unconstrained,
            strategy: Strategy::StationarityNewton,
            max_iters: 50,
            residual_tol: 1e-10,
            continuation_steps_nu: 4,
            initial_guess: InitialGuess::ConstantHold,
            picard_damping: 1.0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.residual_tol > 0.0 && self.residual_tol.is_finite()) {
            return Err(Error::Config(format!("residual_tol must be > 0, got {}", self.residual_tol)));
        }
        if self.continuation_steps_nu < 1 {
            return Err(Error::Config("continuation_steps_nu must be >= 1".into()));
        }
        if !(self.picard_damping > 0.0 && self.picard_damping <= 1.0) {
            return Err(Error::Config(format!("picard_damping must lie in (0, 1], got {}", self.picard_damping)));
        }
        if self.variant == Variant::Constrained && self.strategy == Strategy::PicardRelaxation {
            return Err(Error::Config("the constrained variant requires stationarity_newton".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub trajectory: CoefficientTrajectory,
    pub converged: bool,
    /// Largest complex row magnitude of the full boundary-value system.
    pub final_residual_norm: f64,
    pub iterations: usize,
    /// `λ(t)` at every node; empty for the unconstrained variant.
    pub lambda_trace: Vec<f64>,
    /// Endpoint multiplier of the constrained variant.
    pub lambda_end: Option<f64>,
    /// `max_q |∂S/∂C*_q(t_f)|`, plus the endpoint multiplier term when constrained.
    pub nbc_residual: f64,
    pub interior_residual_norm: f64,
    /// `max_q |C_q(t_1) − C_q(t_0)| / dt`.
    pub initial_derivative_norm: f64,
}

/// Starting trajectory for the iteration.
pub fn initial_guess(
    initial: &[Complex64],
    spectrum: &ModeSpectrum,
    couplings: &Couplings,
    grid: &TimeGrid,
    kind: InitialGuess,
) -> Result<CoefficientTrajectory> {
    match kind {
        InitialGuess::ConstantHold => CoefficientTrajectory::constant(*grid, spectrum, initial),
        InitialGuess::PhaseRotating => {
            let energies = spectrum.energies();
            let rate = 2.0 / couplings.hbar();
            CoefficientTrajectory::from_fn(*grid, spectrum, |n, q| {
                initial[q] * Complex64::from_polar(1.0, rate * energies[q] * (grid.time(n) - grid.t_i()))
            })
        }
    }
}

/// Outcome of one inner solve at fixed couplings.
pub(crate) struct InnerOutcome {
    pub values: Vec<Complex64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn solve_bvp(
    initial: &[Complex64],
    spectrum: &ModeSpectrum,
    couplings: &Couplings,
    grid: &TimeGrid,
    config: &SolveConfig,
) -> Result<SolveResult> {
    config.validate()?;
    if initial.len() != spectrum.n_modes() {
        return Err(Error::Shape(format!(
            "initial state has {} modes, spectrum has {}",
            initial.len(),
            spectrum.n_modes()
        )));
    }
    let weight: f64 = initial.iter().map(|c| c.norm_sqr()).sum();
    if (weight - 1.0).abs() > 1e-10 || initial.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument(format!("initial state must have unit weight, got {weight}")));
    }
    let guess = initial_guess(initial, spectrum, couplings, grid, config.initial_guess)?;
    let mut values = guess.into_values();
    let mut lambda = 0.0;
    let mut iterations = 0;
    let mut converged = true;

    let interacting = couplings.mu() != 0.0 || couplings.nu() != 0.0;
    let steps = if interacting { config.continuation_steps_nu } else { 1 };
    for k in 1..=steps {
        let scale = k as f64 / steps as f64;
        let stage = couplings.with_interaction_scale(scale);
        let asm = Assembler::new(spectrum, &stage, grid);
        let sys = BoundarySystem { asm: &asm, initial, variant: config.variant };
        let out = match config.strategy {
            Strategy::StationarityNewton => newton::solve(&sys, values, lambda, config)?,
            Strategy::PicardRelaxation => picard::solve(&sys, values, config)?,
        };
        iterations += out.iterations;
        values = out.values;
        lambda = out.lambda;
        converged = out.converged;
        if !converged {
            break;
        }
    }

    let asm = Assembler::new(spectrum, couplings, grid);
    let sys = BoundarySystem { asm: &asm, initial, variant: config.variant };
    let parts = sys.residual_parts(&values, lambda);
    if parts.has_nan() || values.iter().any(|c| !c.is_finite()) {
        return Err(Error::NumericalBlowup { iterations, context: "final residual".into() });
    }
    let final_residual_norm = parts.norm();
    let nbc = parts.node(grid.n_nodes() - 1).iter().map(|c| c.norm()).fold(0.0, f64::max);
    let initial_derivative_norm = parts.node(1).iter().map(|c| c.norm()).fold(0.0, f64::max);
    let interior_residual_norm = parts.interior_norm();
    let converged = converged && final_residual_norm <= config.residual_tol;
    let trajectory = CoefficientTrajectory::new(*grid, spectrum.j_count(), spectrum.k_count(), values)?;
    let (lambda_trace, lambda_end) = match config.variant {
        Variant::Unconstrained => (Vec::new(), None),
        Variant::Constrained => (residual::lambda_trace(&trajectory, spectrum, couplings)?, Some(lambda)),
    };
    Ok(SolveResult {
        trajectory,
        converged,
        final_residual_norm,
        iterations,
        lambda_trace,
        lambda_end,
        nbc_residual: nbc,
        interior_residual_norm,
        initial_derivative_norm,
    })
}
