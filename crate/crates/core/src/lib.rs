//! Nonlocal two-time variational dynamics for a measured system coupled to a
//! measurement apparatus.
//!
//! The joint state is carried entirely in the mode-coefficient representation
//! `C_jk(t)`: `j` indexes eigenstates of the measured observable on the system,
//! `k` the pointer eigenstates of the apparatus. Coefficients are stored
//! row-major over `(j, k)` so the flat mode index is `m = j * K + k`.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] – spectra, couplings and the time grid.
//! * [`kernel`] – the even, compactly supported temporal kernel `f(t1 - t2)`.
//! * [`trajectory`] – sampled coefficients, derivatives, weights and collapse
//!   diagnostics.
//! * [`action`] – the discrete action and its gradients.
//! * [`solver`] – the nonlocal term, the evolution residuals and the two-point
//!   boundary value solver.
//! * [`ensemble`] – seeded hidden-variable ensembles and outcome statistics.
//! * [`varcalc2t`] – scalar two-time calculus of variations used to validate
//!   the discretisation.
//! * [`io`] – CSV/JSON encodings of trajectories.

pub mod action;
pub mod ensemble;
mod error;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod solver;
pub mod trajectory;
pub mod varcalc2t;

pub use error::{Error, Result};
pub use num_complex::Complex64;

pub use action::ActionBreakdown;
pub use ensemble::{EnsembleReport, HiddenVariableDistribution};
pub use kernel::{KernelFamily, KernelSpec};
pub use model::{Couplings, ModeSpectrum, Problem, TimeGrid};
pub use solver::{SolveConfig, SolveResult};
pub use trajectory::{CoefficientTrajectory, CollapseMetrics, CollapseThresholds};
