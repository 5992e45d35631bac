//! The nonlocal term
//!
//! ```text
//! C̃_jk(t) = Σ_lm Δ_jm Δ_lk C_lm(t) ∫ dt' C*_lm(t') C_jk(t') f(t − t') e^{−i(E_jk − E_lm)(t' − t)/ħ}
//! ```
//!
//! evaluated with the trapezoid rule in `t'`, visiting only nodes inside the
//! kernel band. Flat modes are written `q = (j, k)` and `r = (l, m)`; the
//! coupling `Δ_jm Δ_lk` is tabulated as `pair_delta[q * M + r]`.

use num_complex::Complex64;

use crate::model::{Couplings, ModeSpectrum, TimeGrid};
use crate::trajectory::CoefficientTrajectory;
use crate::Result;

use super::linearization::RowLinearization;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Tables shared by every nonlocal evaluation on one grid.
#[derive(Debug, Clone)]
pub struct NonlocalContext {
    m: usize,
    n_nodes: usize,
    halfwidth: usize,
    pair_delta: Vec<f64>,
    /// `phase[(q * M + r) * (2b + 1) + (d + b)] = exp(−i (E_q − E_r) d dt / ħ)`.
    phase: Vec<Complex64>,
    kernel: Vec<f64>,
    weights: Vec<f64>,
}

impl NonlocalContext {
    pub fn new(spectrum: &ModeSpectrum, couplings: &Couplings, grid: &TimeGrid) -> Self {
        let b = couplings.kernel().support_halfwidth(grid);
        Self::with_halfwidth(spectrum, couplings, grid, b)
    }

    /// Context that visits node pairs up to `halfwidth` apart. A halfwidth of
    /// `n_nodes − 1` gives the dense evaluation.
    pub fn with_halfwidth(
        spectrum: &ModeSpectrum,
        couplings: &Couplings,
        grid: &TimeGrid,
        halfwidth: usize,
    ) -> Self {
        let m = spectrum.n_modes();
        let halfwidth = halfwidth.min(grid.n_nodes() - 1);
        let energies = spectrum.energies();
        let mut pair_delta = vec![0.0; m * m];
        for q in 0..m {
            let (j, k) = spectrum.mode_pair(q);
            for r in 0..m {
                let (l, mm) = spectrum.mode_pair(r);
                pair_delta[q * m + r] = (spectrum.sigma1()[j] - spectrum.sigma2()[mm])
                    * (spectrum.sigma1()[l] - spectrum.sigma2()[k]);
            }
        }
        let width = 2 * halfwidth + 1;
        let dt = grid.dt();
        let mut phase = vec![ZERO; m * m * width];
        for q in 0..m {
            for r in 0..m {
                let omega = (energies[q] - energies[r]) / couplings.hbar();
                for i in 0..width {
                    let d = i as f64 - halfwidth as f64;
                    phase[(q * m + r) * width + i] = Complex64::from_polar(1.0, -omega * d * dt);
                }
            }
        }
        Self {
            m,
            n_nodes: grid.n_nodes(),
            halfwidth,
            pair_delta,
            phase,
            kernel: couplings.kernel().offsets(grid, halfwidth),
            weights: grid.weights(),
        }
    }

    pub fn halfwidth(&self) -> usize {
        self.halfwidth
    }

    #[inline]
    fn phase(&self, q: usize, r: usize, d: isize) -> Complex64 {
        let width = 2 * self.halfwidth + 1;
        self.phase[(q * self.m + r) * width + (d + self.halfwidth as isize) as usize]
    }

    #[inline]
    fn band(&self, n: usize) -> (usize, usize) {
        (
            n.saturating_sub(self.halfwidth),
            (n + self.halfwidth).min(self.n_nodes - 1),
        )
    }

    /// `w_p f(t_n − t_p)`, zero outside the band.
    #[inline]
    fn kernel_weight(&self, n: usize, p: usize) -> f64 {
        self.weights[p] * self.kernel[n.abs_diff(p)]
    }

    /// Overlap integrals `I[r * M + q] = Σ_p w_p f C*_r(p) C_q(p) φ_qr(p − n)`.
    fn overlaps(&self, values: &[Complex64], n: usize, out: &mut [Complex64]) {
        let m = self.m;
        out.iter_mut().for_each(|z| *z = ZERO);
        let (lo, hi) = self.band(n);
        for p in lo..=hi {
            let kw = self.kernel_weight(n, p);
            let d = p as isize - n as isize;
            let cp = &values[p * m..(p + 1) * m];
            for r in 0..m {
                let cr = cp[r].conj() * kw;
                for q in 0..m {
                    if self.pair_delta[q * m + r] == 0.0 {
                        continue;
                    }
                    out[r * m + q] += cr * cp[q] * self.phase(q, r, d);
                }
            }
        }
    }

    /// `C̃` at node `n` for every mode.
    pub fn c_tilde_at(&self, values: &[Complex64], n: usize) -> Vec<Complex64> {
        let m = self.m;
        let mut overlap = vec![ZERO; m * m];
        self.overlaps(values, n, &mut overlap);
        let cn = &values[n * m..(n + 1) * m];
        (0..m)
            .map(|q| {
                (0..m)
                    .map(|r| cn[r] * overlap[r * m + q] * self.pair_delta[q * m + r])
                    .sum()
            })
            .collect()
    }

    /// `C̃` at every node, node-major.
    pub fn c_tilde_all(&self, values: &[Complex64]) -> Vec<Complex64> {
        let m = self.m;
        let mut out = vec![ZERO; values.len()];
        let mut overlap = vec![ZERO; m * m];
        for n in 0..self.n_nodes {
            self.overlaps(values, n, &mut overlap);
            let cn = &values[n * m..(n + 1) * m];
            for q in 0..m {
                let mut acc = ZERO;
                for r in 0..m {
                    let d = self.pair_delta[q * m + r];
                    if d != 0.0 {
                        acc += cn[r] * overlap[r * m + q] * d;
                    }
                }
                out[n * m + q] = acc;
            }
        }
        out
    }

    /// `Σ_ab w_a w_b r(t_a, t_b) / ν`, the nonlocal double integral before
    /// the coupling constant. The sum over both orderings is real up to
    /// rounding; the imaginary part is returned for inspection.
    pub fn double_integral(&self, values: &[Complex64]) -> Complex64 {
        let m = self.m;
        let mut total = ZERO;
        for a in 0..self.n_nodes {
            let (lo, hi) = self.band(a);
            let ca = &values[a * m..(a + 1) * m];
            let mut row = ZERO;
            for b in lo..=hi {
                let f = self.kernel[a.abs_diff(b)];
                if f == 0.0 {
                    continue;
                }
                let cb = &values[b * m..(b + 1) * m];
                let d = b as isize - a as isize;
                let mut s = ZERO;
                for q in 0..m {
                    for r in 0..m {
                        let pd = self.pair_delta[q * m + r];
                        if pd == 0.0 {
                            continue;
                        }
                        // Δ_jm Δ_lk C*_jk(a) C*_lm(b) C_lm(a) C_jk(b) e^{−iω(t_b − t_a)}
                        s += ca[q].conj() * cb[r].conj() * ca[r] * cb[q] * self.phase(q, r, d) * pd;
                    }
                }
                row += s * (self.weights[b] * f);
            }
            total += row * self.weights[a];
        }
        total
    }

    /// `⟨⟨|C_q|²⟩⟩(t_n) = ∫ dt' f(t_n − t') |C_q(t')|²`.
    pub fn moving_average(&self, values: &[Complex64], n: usize, q: usize) -> f64 {
        let (lo, hi) = self.band(n);
        (lo..=hi)
            .map(|p| self.kernel_weight(n, p) * values[p * self.m + q].norm_sqr())
            .sum()
    }

    /// Derivative of `C̃(t_n)` with respect to every coefficient in its band,
    /// split into holomorphic (`∂/∂C`) and anti-holomorphic (`∂/∂C*`) parts.
    pub fn c_tilde_linearization(&self, values: &[Complex64], n: usize) -> RowLinearization {
        let m = self.m;
        let (lo, hi) = self.band(n);
        let mut lin = RowLinearization::zeros(m, lo, hi);
        let mut overlap = vec![ZERO; m * m];
        self.overlaps(values, n, &mut overlap);
        let cn = &values[n * m..(n + 1) * m];

        // ∂C̃_q(n)/∂C_r(n) through the prefactor C_r(n).
        for q in 0..m {
            for r in 0..m {
                let d = self.pair_delta[q * m + r];
                if d != 0.0 {
                    *lin.hol_mut(n, q, r) += overlap[r * m + q] * d;
                }
            }
        }
        // Through the overlap integrals.
        for p in lo..=hi {
            let kw = self.kernel_weight(n, p);
            if kw == 0.0 {
                continue;
            }
            let dp = p as isize - n as isize;
            let cp = &values[p * m..(p + 1) * m];
            for q in 0..m {
                for r in 0..m {
                    let d = self.pair_delta[q * m + r];
                    if d == 0.0 {
                        continue;
                    }
                    let common = cn[r] * self.phase(q, r, dp) * (kw * d);
                    // ∂/∂C_q(p) from C_q(p)
                    *lin.hol_mut(p, q, q) += common * cp[r].conj();
                    // ∂/∂C*_r(p) from C*_r(p)
                    *lin.anti_mut(p, q, r) += common * cp[q];
                }
            }
        }
        lin
    }
}

/// `C̃` at one node, visiting only the kernel band.
pub fn c_tilde(
    traj: &CoefficientTrajectory,
    spectrum: &ModeSpectrum,
    couplings: &Couplings,
    node: usize,
) -> Result<Vec<Complex64>> {
    traj.check_spectrum(spectrum)?;
    check_node(traj, node)?;
    let ctx = NonlocalContext::new(spectrum, couplings, traj.grid());
    Ok(ctx.c_tilde_at(traj.values(), node))
}

/// `C̃` at every node.
pub fn c_tilde_all(
    traj: &CoefficientTrajectory,
    spectrum: &ModeSpectrum,
    couplings: &Couplings,
) -> Result<Vec<Complex64>> {
    traj.check_spectrum(spectrum)?;
    let ctx = NonlocalContext::new(spectrum, couplings, traj.grid());
    Ok(ctx.c_tilde_all(traj.values()))
}

pub(crate) fn check_node(traj: &CoefficientTrajectory, node: usize) -> Result<()> {
    if node >= traj.n_nodes() {
        return Err(crate::Error::InvalidArgument(format!(
            "node {node} out of range for {} nodes",
            traj.n_nodes()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(
        seed: u64,
        j: usize,
        k: usize,
        n: usize,
        kernel: KernelSpec,
    ) -> (ModeSpectrum, Couplings, CoefficientTrajectory) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |a: f64, b: f64| rng.random_range(a..b);
        let spectrum = ModeSpectrum::new(
            (0..j).map(|_| r(-1.0, 1.0)).collect(),
            (0..k).map(|_| r(-1.0, 1.0)).collect(),
            (0..j).map(|_| r(0.0, 2.0)).collect(),
            (0..k).map(|_| r(0.0, 2.0)).collect(),
        )
        .unwrap();
        let couplings = Couplings::new(1.3, -0.7, 0.4, 0.9, kernel).unwrap();
        let grid = TimeGrid::new(0.0, 3.0, n).unwrap();
        let values = (0..n * j * k).map(|_| Complex64::new(r(-1.0, 1.0), r(-1.0, 1.0))).collect();
        let traj = CoefficientTrajectory::new(grid, j, k, values).unwrap();
        (spectrum, couplings, traj)
    }

    #[test]
    fn zero_trajectory_gives_zero() {
        let (s, c, t) = setup(1, 2, 2, 16, KernelSpec::cosine_taper(1.0).unwrap());
        let z = t.scaled(Complex64::new(0.0, 0.0));
        assert!(c_tilde_all(&z, &s, &c).unwrap().iter().all(|v| *v == ZERO));
    }

    #[test]
    fn matched_single_eigenvalue_gives_zero() {
        let s = ModeSpectrum::new(vec![0.7], vec![0.7], vec![0.3], vec![1.1]).unwrap();
        let c = Couplings::new(1.0, -1.0, -1.0, 1.0, KernelSpec::constant()).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 9).unwrap();
        let t = CoefficientTrajectory::from_fn(g, &s, |n, _| Complex64::new(n as f64, 1.0)).unwrap();
        assert!(c_tilde_all(&t, &s, &c).unwrap().iter().all(|v| *v == ZERO));
    }

    #[test]
    fn single_node_agrees_with_all_nodes() {
        let (s, c, t) = setup(3, 2, 3, 20, KernelSpec::tophat(0.5).unwrap());
        let all = c_tilde_all(&t, &s, &c).unwrap();
        for n in [0, 7, 19] {
            let one = c_tilde(&t, &s, &c, n).unwrap();
            assert_eq!(&all[n * 6..(n + 1) * 6], one.as_slice());
        }
        assert!(c_tilde(&t, &s, &c, 20).is_err());
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let (s, c, t) = setup(7, 2, 2, 12, KernelSpec::cosine_taper(0.8).unwrap());
        let ctx = NonlocalContext::new(&s, &c, t.grid());
        let m = 4;
        let h = 1e-6;
        for n in [0, 5, 11] {
            let lin = ctx.c_tilde_linearization(t.values(), n);
            for p in 0..t.n_nodes() {
                for sm in 0..m {
                    for (dir, unit) in [(0, Complex64::new(1.0, 0.0)), (1, Complex64::new(0.0, 1.0))] {
                        let mut plus = t.values().to_vec();
                        let mut minus = t.values().to_vec();
                        plus[p * m + sm] += unit * h;
                        minus[p * m + sm] -= unit * h;
                        let fp = ctx.c_tilde_at(&plus, n);
                        let fm = ctx.c_tilde_at(&minus, n);
                        for q in 0..m {
                            let fd = (fp[q] - fm[q]) / (2.0 * h);
                            let (a, b) = lin.get(p, q, sm);
                            let analytic = if dir == 0 { a + b } else { (a - b) * Complex64::new(0.0, 1.0) };
                            assert!(
                                (fd - analytic).norm() < 1e-7 * (1.0 + fd.norm()),
                                "n={n} p={p} q={q} s={sm} dir={dir}: fd {fd} vs {analytic}"
                            );
                        }
                    }
                }
            }
        }
    }
}
