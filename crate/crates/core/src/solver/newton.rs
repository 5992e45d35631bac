use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::linalg::{dense_solve, BandedMatrix};
use crate::{Error, Result};

use super::linearization::JacobianSink;
use super::residual::BoundarySystem;
use super::{InnerOutcome, SolveConfig};

const MIN_STEP: f64 = 1.0 / 1024.0 / 1024.0;

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `J δ = −f`, banded unless the band covers most of the matrix.
fn newton_step(sys: &BoundarySystem<'_>, x: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let dim = sys.dim();
    let bw = sys.bandwidth();
    let mut rhs: Vec<f64> = f.iter().map(|v| -v).collect();
    if 3 * bw >= dim {
        let mut jac = DMatrix::zeros(dim, dim);
        sys.jacobian(x, &mut JacobianSink::Dense(&mut jac));
        dense_solve(jac, &mut rhs)?;
    } else {
        let mut jac = BandedMatrix::zeros(dim, bw, bw);
        sys.jacobian(x, &mut JacobianSink::Banded(&mut jac));
        jac.solve_in_place(&mut rhs)?;
    }
    Ok(rhs)
}

pub(crate) fn solve(
    sys: &BoundarySystem<'_>,
    values: Vec<Complex64>,
    lambda: f64,
    config: &SolveConfig,
) -> Result<InnerOutcome> {
    let mut x = sys.pack(&values, lambda);
    let mut f = sys.residual(&x);
    let mut iterations = 0;
    let outcome = |x: &[f64], iterations, converged| {
        let (values, lambda) = sys.split(x);
        InnerOutcome { values, lambda, iterations, converged }
    };
    loop {
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup { iterations, context: "Newton residual".into() });
        }
        let (values, lambda) = sys.split(&x);
        if sys.residual_parts(&values, lambda).norm() <= config.residual_tol {
            return Ok(outcome(&x, iterations, true));
        }
        if iterations >= config.max_iters {
            return Ok(outcome(&x, iterations, false));
        }
        iterations += 1;
        let delta = match newton_step(sys, &x, &f) {
            Ok(d) => d,
            Err(Error::Singular(_)) => return Ok(outcome(&x, iterations, false)),
            Err(e) => return Err(e),
        };
        let f_norm = l2(&f);
        let mut step = 1.0;
        let mut accepted = None;
        while step >= MIN_STEP {
            let mut trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
            sys.pin(&mut trial);
            let f_trial = sys.residual(&trial);
            let n = l2(&f_trial);
            if n.is_finite() && n <= (1.0 - 1e-4 * step) * f_norm {
                accepted = Some((trial, f_trial));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((xn, fnew)) => {
                x = xn;
                f = fnew;
            }
            None => return Ok(outcome(&x, iterations, false)),
        }
    }
}
