use num_complex::Complex64;

use crate::linalg::BandedMatrix;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Linearisation of one node's complex residual vector `Y_q(n)` with respect
/// to coefficients at nodes `lo..=hi`:
/// `dY_q = Σ_{p,s} hol[p,q,s] dC_s(p) + anti[p,q,s] dC*_s(p)`.
#[derive(Debug, Clone)]
pub struct RowLinearization {
    m: usize,
    lo: usize,
    hi: usize,
    hol: Vec<Complex64>,
    anti: Vec<Complex64>,
}

impl RowLinearization {
    pub fn zeros(m: usize, lo: usize, hi: usize) -> Self {
        let len = (hi - lo + 1) * m * m;
        Self {
            m,
            lo,
            hi,
            hol: vec![ZERO; len],
            anti: vec![ZERO; len],
        }
    }

    pub fn range(&self) -> (usize, usize) {
        (self.lo, self.hi)
    }

    #[inline]
    fn idx(&self, p: usize, q: usize, s: usize) -> usize {
        debug_assert!(p >= self.lo && p <= self.hi, "node {p} outside {}..={}", self.lo, self.hi);
        ((p - self.lo) * self.m + q) * self.m + s
    }

    #[inline]
    pub fn hol_mut(&mut self, p: usize, q: usize, s: usize) -> &mut Complex64 {
        let i = self.idx(p, q, s);
        &mut self.hol[i]
    }

    #[inline]
    pub fn anti_mut(&mut self, p: usize, q: usize, s: usize) -> &mut Complex64 {
        let i = self.idx(p, q, s);
        &mut self.anti[i]
    }

    /// `(∂Y_q/∂C_s(p), ∂Y_q/∂C*_s(p))`, zero outside the stored range.
    pub fn get(&self, p: usize, q: usize, s: usize) -> (Complex64, Complex64) {
        if p < self.lo || p > self.hi {
            return (ZERO, ZERO);
        }
        let i = self.idx(p, q, s);
        (self.hol[i], self.anti[i])
    }

    /// Adds `factor ×` (row `q` of `other`) into row `q` of `self`.
    pub fn add_scaled(&mut self, other: &RowLinearization, factor: Complex64) {
        assert!(other.lo >= self.lo && other.hi <= self.hi && other.m == self.m);
        for p in other.lo..=other.hi {
            for q in 0..self.m {
                for s in 0..self.m {
                    let (a, b) = other.get(p, q, s);
                    let i = self.idx(p, q, s);
                    self.hol[i] += a * factor;
                    self.anti[i] += b * factor;
                }
            }
        }
    }

    /// Iterates `(p, q, s, hol, anti)` over nonzero entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize, Complex64, Complex64)> + '_ {
        let m = self.m;
        (0..self.hol.len()).filter_map(move |i| {
            let (h, a) = (self.hol[i], self.anti[i]);
            if h == ZERO && a == ZERO {
                return None;
            }
            let s = i % m;
            let q = (i / m) % m;
            let p = self.lo + i / (m * m);
            Some((p, q, s, h, a))
        })
    }

    /// Writes the real Jacobian block of row node `n` into `jac`, with the
    /// unknown ordering `((node * M + mode) * 2 + {re, im})`, scaled by `scale`.
    pub fn scatter(&self, n: usize, scale: f64, jac: &mut JacobianSink<'_>) {
        let m = self.m;
        for (p, q, s, a, b) in self.entries() {
            let row = (n * m + q) * 2;
            let col = (p * m + s) * 2;
            let sum = (a + b) * scale;
            let diff = (a - b) * scale;
            // dY = (a + b) dx + i (a − b) dy
            jac.add(row, col, sum.re);
            jac.add(row, col + 1, -diff.im);
            jac.add(row + 1, col, sum.im);
            jac.add(row + 1, col + 1, diff.re);
        }
    }
}

/// Destination of Jacobian entries: a banded or a dense matrix.
pub enum JacobianSink<'a> {
    Banded(&'a mut BandedMatrix),
    Dense(&'a mut nalgebra::DMatrix<f64>),
}

impl JacobianSink<'_> {
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        match self {
            JacobianSink::Banded(b) => b.add(i, j, v),
            JacobianSink::Dense(d) => d[(i, j)] += v,
        }
    }
}
