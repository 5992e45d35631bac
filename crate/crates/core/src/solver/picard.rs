use num_complex::Complex64;

use crate::linalg::BandedMatrix;
use crate::{Error, Result};

use super::residual::BoundarySystem;
use super::{InnerOutcome, SolveConfig, Variant};

const I: Complex64 = Complex64::new(0.0, 1.0);

fn add_complex(a: &mut BandedMatrix, row: usize, col: usize, v: Complex64) {
    let (r, c) = (2 * row, 2 * col);
    for (i, j, x) in [(r, c, v.re), (r, c + 1, -v.im), (r + 1, c, v.im), (r + 1, c + 1, v.re)] {
        if x != 0.0 {
            a.add(i, j, x);
        }
    }
}

/// One mode's local two-point problem with `C̃` frozen.
fn solve_mode(sys: &BoundarySystem<'_>, c_tilde: &[Complex64], q: usize) -> Result<Vec<Complex64>> {
    let asm = sys.asm;
    let n_nodes = asm.n_nodes;
    let m = asm.m;
    let last = n_nodes - 1;
    let dt = asm.dt;
    let mut a = BandedMatrix::zeros(2 * n_nodes, 3, 3);
    let mut rhs = vec![Complex64::new(0.0, 0.0); n_nodes];
    let one = Complex64::new(1.0, 0.0);

    add_complex(&mut a, 0, 0, one);
    rhs[0] = sys.initial[q];
    add_complex(&mut a, 1, 1, one / dt);
    add_complex(&mut a, 1, 0, -one / dt);

    let inv = 1.0 / (dt * dt);
    let rot = I * (asm.energies[q] / (asm.hbar * dt));
    let local = asm.mu / asm.b * asm.d2[q];
    for n in 2..last {
        add_complex(&mut a, n, n + 1, inv - rot);
        add_complex(&mut a, n, n, Complex64::new(-2.0 * inv - local, 0.0));
        add_complex(&mut a, n, n - 1, inv + rot);
        rhs[n] = c_tilde[n * m + q] * (2.0 * asm.nu / asm.b);
    }
    let w = 0.5 * dt;
    add_complex(&mut a, last, last, Complex64::new(asm.b / dt + w * asm.mu * asm.d2[q], 0.0));
    add_complex(&mut a, last, last - 1, -asm.b / dt - I * (asm.b * asm.energies[q] / asm.hbar));
    rhs[last] = -c_tilde[last * m + q] * (w * 2.0 * asm.nu);

    let mut b: Vec<f64> = rhs.iter().flat_map(|z| [z.re, z.im]).collect();
    a.solve_in_place(&mut b)?;
    Ok(b.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
}

pub(crate) fn solve(sys: &BoundarySystem<'_>, mut values: Vec<Complex64>, config: &SolveConfig) -> Result<InnerOutcome> {
    if sys.variant != Variant::Unconstrained {
        return Err(Error::Config("picard relaxation supports only the unconstrained variant".into()));
    }
    let m = sys.asm.m;
    let omega = config.picard_damping;
    let mut iterations = 0;
    loop {
        let parts = sys.residual_parts(&values, 0.0);
        if parts.has_nan() {
            return Err(Error::NumericalBlowup { iterations, context: "Picard residual".into() });
        }
        if parts.norm() <= config.residual_tol {
            return Ok(InnerOutcome { values, lambda: 0.0, iterations, converged: true });
        }
        if iterations >= config.max_iters {
            return Ok(InnerOutcome { values, lambda: 0.0, iterations, converged: false });
        }
        iterations += 1;
        let c_tilde = sys.asm.c_tilde(&values);
        for q in 0..m {
            let next = match solve_mode(sys, &c_tilde, q) {
                Ok(v) => v,
                Err(Error::Singular(_)) => return Ok(InnerOutcome { values, lambda: 0.0, iterations, converged: false }),
                Err(e) => return Err(e),
            };
            for (n, v) in next.into_iter().enumerate().skip(1) {
                let old = values[n * m + q];
                values[n * m + q] = old + (v - old) * omega;
            }
        }
    }
}
