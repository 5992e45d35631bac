//! The discrete action `S = S¹ + S² + Sᴵ + Rᴵ` and its gradients.
//!
//! The kinetic/energy part is integrated interval by interval with midpoint
//! differences, `(C_{n+1} − C_n)/dt` for `Ċ` and the interval mean for `C`:
//!
//! ```text
//! s¹² ≈ B Σ_q Σ_n [ |C_{n+1} − C_n|²/dt − (2/ħ) E_q Im{C*_n C_{n+1}} ]
//! ```
//!
//! The local and nonlocal interaction terms use the trapezoid rule and its
//! tensor product. With this choice the exact gradient of the discrete action
//! with respect to `C*` at an interior node is `−B dt` times the central
//! finite-difference residual of the evolution equation, which makes the
//! variational consistency check exact up to rounding.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{Couplings, ModeSpectrum};
use crate::solver::nonlocal::NonlocalContext;
use crate::trajectory::CoefficientTrajectory;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBreakdown {
    pub s12: f64,
    #[serde(rename = "sI")]
    pub s_i: f64,
    #[serde(rename = "rI")]
    pub r_i: f64,
    pub total: f64,
}

/// `S¹ + S²`.
pub fn eval_s12(traj: &CoefficientTrajectory, spectrum: &ModeSpectrum, couplings: &Couplings) -> Result<f64> {
    traj.check_spectrum(spectrum)?;
    Ok(s12_values(traj.values(), traj.n_modes(), traj.grid().dt(), spectrum, couplings))
}

fn s12_values(values: &[Complex64], m: usize, dt: f64, spectrum: &ModeSpectrum, couplings: &Couplings) -> f64 {
    let energies = spectrum.energies();
    let n_nodes = values.len() / m;
    let mut kinetic = 0.0;
    let mut phase = 0.0;
    for n in 0..n_nodes - 1 {
        for q in 0..m {
            let a = values[n * m + q];
            let b = values[(n + 1) * m + q];
            kinetic += (b - a).norm_sqr();
            phase += energies[q] * (a.conj() * b).im;
        }
    }
    couplings.b() * (kinetic / dt - 2.0 / couplings.hbar() * phase)
}

/// `Sᴵ = μ ∫ Σ Δ²|C|² dt`.
pub fn eval_s_i(traj: &CoefficientTrajectory, spectrum: &ModeSpectrum, couplings: &Couplings) -> Result<f64> {
    traj.check_spectrum(spectrum)?;
    Ok(s_i_values(traj, traj.values(), spectrum, couplings))
}

fn s_i_values(traj: &CoefficientTrajectory, values: &[Complex64], spectrum: &ModeSpectrum, couplings: &Couplings) -> f64 {
    let m = traj.n_modes();
    let d2: Vec<f64> = spectrum.deltas().iter().map(|d| d * d).collect();
    let grid = traj.grid();
    let mut total = 0.0;
    for n in 0..grid.n_nodes() {
        let local: f64 = (0..m).map(|q| d2[q] * values[n * m + q].norm_sqr()).sum();
        total += grid.weight(n) * local;
    }
    couplings.mu() * total
}

/// `Rᴵ`, the symmetrised nonlocal double integral over the kernel band.
pub fn eval_r_i(traj: &CoefficientTrajectory, spectrum: &ModeSpectrum, couplings: &Couplings) -> Result<f64> {
    traj.check_spectrum(spectrum)?;
    if couplings.nu() == 0.0 {
        return Ok(0.0);
    }
    let ctx = NonlocalContext::new(spectrum, couplings, traj.grid());
    Ok(couplings.nu() * ctx.double_integral(traj.values()).re)
}

pub fn evaluate(traj: &CoefficientTrajectory, spectrum: &ModeSpectrum, couplings: &Couplings) -> Result<ActionBreakdown> {
    let s12 = eval_s12(traj, spectrum, couplings)?;
    let s_i = eval_s_i(traj, spectrum, couplings)?;
    let r_i = eval_r_i(traj, spectrum, couplings)?;
    Ok(ActionBreakdown {
        s12,
        s_i,
        r_i,
        total: s12 + s_i + r_i,
    })
}

fn total_action(traj: &CoefficientTrajectory, values: &[Complex64], spectrum: &ModeSpectrum, couplings: &Couplings, ctx: &NonlocalContext) -> f64 {
    let s12 = s12_values(values, traj.n_modes(), traj.grid().dt(), spectrum, couplings);
    let s_i = s_i_values(traj, values, spectrum, couplings);
    let r_i = if couplings.nu() == 0.0 {
        0.0
    } else {
        couplings.nu() * ctx.double_integral(values).re
    };
    s12 + s_i + r_i
}

/// Exact gradient `∂S/∂C*` of the discrete action at every node and mode.
pub fn action_gradient(traj: &CoefficientTrajectory, spectrum: &ModeSpectrum, couplings: &Couplings) -> Result<Vec<Complex64>> {
    traj.check_spectrum(spectrum)?;
    let ctx = NonlocalContext::new(spectrum, couplings, traj.grid());
    let c_tilde = if couplings.nu() == 0.0 {
        vec![Complex64::new(0.0, 0.0); traj.values().len()]
    } else {
        ctx.c_tilde_all(traj.values())
    };
    Ok((0..traj.n_nodes())
        .flat_map(|n| node_gradient(traj, spectrum, couplings, &c_tilde, n))
        .collect())
}

/// `∂S/∂C*_q(t_n)` for all modes `q`, given precomputed `C̃`.
pub(crate) fn node_gradient(
    traj: &CoefficientTrajectory,
    spectrum: &ModeSpectrum,
    couplings: &Couplings,
    c_tilde: &[Complex64],
    n: usize,
) -> Vec<Complex64> {
    let m = traj.n_modes();
    let grid = traj.grid();
    let dt = grid.dt();
    let last = grid.n_nodes() - 1;
    let energies = spectrum.energies();
    let deltas = spectrum.deltas();
    let b = couplings.b();
    let i_over_hbar = Complex64::new(0.0, 1.0 / couplings.hbar());
    let w = grid.weight(n);
    (0..m)
        .map(|q| {
            let c = traj.at(n, q);
            let mut kinetic = Complex64::new(0.0, 0.0);
            let mut rotation = Complex64::new(0.0, 0.0);
            if n > 0 {
                let prev = traj.at(n - 1, q);
                kinetic += c - prev;
                rotation -= prev;
            }
            if n < last {
                let next = traj.at(n + 1, q);
                kinetic += c - next;
                rotation += next;
            }
            let local = kinetic * (b / dt) + rotation * i_over_hbar * (b * energies[q]);
            let interaction = c * (couplings.mu() * deltas[q] * deltas[q])
                + c_tilde[n * m + q] * (2.0 * couplings.nu());
            local + interaction * w
        })
        .collect()
}

/// Default finite-difference step `1e−6 · max(1, ‖C‖∞)`.
pub fn default_fd_step(traj: &CoefficientTrajectory) -> f64 {
    1e-6 * traj.max_abs().max(1.0)
}

/// Central finite-difference gradient of `functional` with respect to each
/// real and imaginary coefficient component, laid out as
/// `((node * M + mode) * 2 + {0: re, 1: im})`.
pub fn finite_difference_gradient(
    traj: &CoefficientTrajectory,
    h: f64,
    mut functional: impl FnMut(&[Complex64]) -> f64,
) -> Vec<f64> {
    let mut work = traj.values().to_vec();
    let mut out = vec![0.0; 2 * work.len()];
    for i in 0..work.len() {
        for (part, unit) in [(0, Complex64::new(h, 0.0)), (1, Complex64::new(0.0, h))] {
            let orig = work[i];
            work[i] = orig + unit;
            let plus = functional(&work);
            work[i] = orig - unit;
            let minus = functional(&work);
            work[i] = orig;
            out[2 * i + part] = (plus - minus) / (2.0 * h);
        }
    }
    out
}

/// Finite-difference gradient of the total action.
pub fn action_gradient_fd(traj: &CoefficientTrajectory, spectrum: &ModeSpectrum, couplings: &Couplings, h: f64) -> Result<Vec<f64>> {
    traj.check_spectrum(spectrum)?;
    if !(h > 0.0) {
        return Err(crate::Error::InvalidArgument(format!("finite-difference step must be > 0, got {h}")));
    }
    let ctx = NonlocalContext::new(spectrum, couplings, traj.grid());
    Ok(finite_difference_gradient(traj, h, |v| total_action(traj, v, spectrum, couplings, &ctx)))
}

/// Pairs real/imaginary partials into `∂S/∂C* = (∂S/∂x + i ∂S/∂y) / 2`.
pub fn conjugate_pairing(real_gradient: &[f64]) -> Vec<Complex64> {
    real_gradient
        .chunks_exact(2)
        .map(|g| Complex64::new(0.5 * g[0], 0.5 * g[1]))
        .collect()
}

/// Finite-difference gradient of a single piece of the action, for tests and
/// diagnostics.
pub fn piece_gradient_fd(
    traj: &CoefficientTrajectory,
    spectrum: &ModeSpectrum,
    couplings: &Couplings,
    h: f64,
    piece: ActionPiece,
) -> Vec<f64> {
    let ctx = NonlocalContext::new(spectrum, couplings, traj.grid());
    let m = traj.n_modes();
    let dt = traj.grid().dt();
    finite_difference_gradient(traj, h, |v| match piece {
        ActionPiece::S12 => s12_values(v, m, dt, spectrum, couplings),
        ActionPiece::SI => s_i_values(traj, v, spectrum, couplings),
        ActionPiece::RI => couplings.nu() * ctx.double_integral(v).re,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionPiece {
    S12,
    SI,
    RI,
}
