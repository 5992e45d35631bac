//! Real banded and dense linear solves for the Newton and Picard systems.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Square banded matrix in LAPACK `gbtrf` layout: column-major with `kl`
/// extra rows reserved for fill-in from partial pivoting.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let kl = kl.min(n.saturating_sub(1));
        let ku = ku.min(n.saturating_sub(1));
        let ldab = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ldab,
            data: vec![0.0; ldab * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        (self.kl + self.ku + i - j) + j * self.ldab
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    /// Adds `v` at `(i, j)`. Panics when the entry lies outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            self.in_band(i, j),
            "entry ({i}, {j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// LU-factorises in place and solves `A x = b`, overwriting `b` with `x`.
    pub fn solve_in_place(mut self, b: &mut [f64]) -> Result<()> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let kl = self.kl;
        let kv = self.kl + self.ku;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;

        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = self.data[self.idx(j, j)].abs();
            for i in 1..=km {
                let v = self.data[self.idx(j + i, j)].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(j));
            }
            ju = ju.max((j + self.ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = self.idx(j, c);
                    let bi = self.idx(j + jp, c);
                    self.data.swap(a, bi);
                }
            }
            let pivot = self.data[self.idx(j, j)];
            for i in 1..=km {
                let k = self.idx(j + i, j);
                self.data[k] /= pivot;
            }
            for c in (j + 1)..=ju {
                let a = self.data[self.idx(j, c)];
                if a == 0.0 {
                    continue;
                }
                for i in 1..=km {
                    let l = self.data[self.idx(j + i, j)];
                    let k = self.idx(j + i, c);
                    self.data[k] -= l * a;
                }
            }
        }

        // L y = P b
        for j in 0..n {
            let p = ipiv[j];
            if p != j {
                b.swap(p, j);
            }
            let km = kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                for i in 1..=km {
                    b[j + i] -= self.data[self.idx(j + i, j)] * bj;
                }
            }
        }
        // U x = y
        for j in (0..n).rev() {
            b[j] /= self.data[self.idx(j, j)];
            let bj = b[j];
            if bj != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    b[i] -= self.data[self.idx(i, j)] * bj;
                }
            }
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular(n));
        }
        Ok(())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

/// Solves with a dense LU; used when the band covers most of the matrix.
pub fn dense_solve(a: DMatrix<f64>, b: &mut [f64]) -> Result<()> {
    let rhs = DVector::from_column_slice(b);
    let x = a.lu().solve(&rhs).ok_or(Error::Singular(0))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(0));
    }
    b.copy_from_slice(x.as_slice());
    Ok(())
}
