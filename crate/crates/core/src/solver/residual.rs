//! Evolution-equation residuals, the boundary rows of the two-point problem
//! and their analytic Jacobian.
//!
//! Interior residual (unconstrained):
//!
//! ```text
//! R_q(n) = δ²C_q/dt² − F_q(n),
//! F_q    = (2i/ħ) E_q δC_q/(2dt) + (μ/B) Δ_q² C_q + (2ν/B) C̃_q
//! ```
//!
//! The constrained form adds the normalisation reaction `C_q S(n)` with
//! `S = Σ_s κ_s + Re{C*_s F_s}` and `κ = (|C_{n+1} − C_n|² + |C_n − C_{n−1}|²)/(2dt²)`.
//! With this κ the discrete total weight obeys
//! `u_{n+1} − 2u_n + u_{n−1} + 2dt² S u_n = 0` for `u = Σ|C|² − 1`, so
//! normalisation propagates exactly.

use num_complex::Complex64;

use crate::action::node_gradient;
use crate::model::{Couplings, ModeSpectrum, TimeGrid};
use crate::trajectory::CoefficientTrajectory;
use crate::Result;

use super::linearization::{JacobianSink, RowLinearization};
use super::nonlocal::{check_node, NonlocalContext};
use super::Variant;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Everything needed to evaluate residuals for one problem on one grid.
#[derive(Debug, Clone)]
pub(crate) struct Assembler {
    pub m: usize,
    pub n_nodes: usize,
    pub dt: f64,
    pub b: f64,
    pub mu: f64,
    pub nu: f64,
    pub hbar: f64,
    pub energies: Vec<f64>,
    pub d2: Vec<f64>,
    pub ctx: NonlocalContext,
    spectrum: ModeSpectrum,
    couplings: Couplings,
    grid: TimeGrid,
}

impl Assembler {
    pub fn new(spectrum: &ModeSpectrum, couplings: &Couplings, grid: &TimeGrid) -> Self {
        Self {
            m: spectrum.n_modes(),
            n_nodes: grid.n_nodes(),
            dt: grid.dt(),
            b: couplings.b(),
            mu: couplings.mu(),
            nu: couplings.nu(),
            hbar: couplings.hbar(),
            energies: spectrum.energies(),
            d2: spectrum.deltas().iter().map(|d| d * d).collect(),
            ctx: NonlocalContext::new(spectrum, couplings, grid),
            spectrum: spectrum.clone(),
            couplings: couplings.clone(),
            grid: *grid,
        }
    }

    pub fn has_nonlocal(&self) -> bool {
        self.nu != 0.0
    }

    /// Node halfwidth of the coupling between residual rows and unknowns.
    pub fn node_halfwidth(&self) -> usize {
        if self.has_nonlocal() {
            self.ctx.halfwidth().max(1)
        } else {
            1
        }
    }

    pub fn c_tilde(&self, values: &[Complex64]) -> Vec<Complex64> {
        if self.has_nonlocal() {
            self.ctx.c_tilde_all(values)
        } else {
            vec![ZERO; values.len()]
        }
    }

    #[inline]
    fn c(&self, values: &[Complex64], n: usize, q: usize) -> Complex64 {
        values[n * self.m + q]
    }

    /// Forcing `F_q(n)` with the central first difference, interior nodes only.
    pub fn forcing(&self, values: &[Complex64], c_tilde: &[Complex64], n: usize) -> Vec<Complex64> {
        let rot = 2.0 / self.hbar / (2.0 * self.dt);
        let nonlocal = 2.0 * self.nu / self.b;
        (0..self.m)
            .map(|q| {
                let dc = self.c(values, n + 1, q) - self.c(values, n - 1, q);
                I * (rot * self.energies[q]) * dc
                    + self.c(values, n, q) * (self.mu / self.b * self.d2[q])
                    + c_tilde[n * self.m + q] * nonlocal
            })
            .collect()
    }

    pub fn second_difference(&self, values: &[Complex64], n: usize, q: usize) -> Complex64 {
        (self.c(values, n + 1, q) - self.c(values, n, q) * 2.0 + self.c(values, n - 1, q)) / (self.dt * self.dt)
    }

    pub fn kappa(&self, values: &[Complex64], n: usize) -> f64 {
        let mut k = 0.0;
        for q in 0..self.m {
            let dp = self.c(values, n + 1, q) - self.c(values, n, q);
            let dm = self.c(values, n, q) - self.c(values, n - 1, q);
            k += dp.norm_sqr() + dm.norm_sqr();
        }
        0.5 * k / (self.dt * self.dt)
    }

    /// `S(n) = Σ_s κ_s + Re{C*_s F_s}`.
    pub fn reaction(&self, values: &[Complex64], forcing: &[Complex64], n: usize) -> f64 {
        let mut s = self.kappa(values, n);
        for q in 0..self.m {
            s += (self.c(values, n, q).conj() * forcing[q]).re;
        }
        s
    }

    pub fn interior_unconstrained(&self, values: &[Complex64], c_tilde: &[Complex64], n: usize) -> Vec<Complex64> {
        let f = self.forcing(values, c_tilde, n);
        (0..self.m).map(|q| self.second_difference(values, n, q) - f[q]).collect()
    }

    pub fn interior_constrained(&self, values: &[Complex64], c_tilde: &[Complex64], n: usize) -> Vec<Complex64> {
        let f = self.forcing(values, c_tilde, n);
        let s = self.reaction(values, &f, n);
        (0..self.m)
            .map(|q| self.second_difference(values, n, q) - f[q] + self.c(values, n, q) * s)
            .collect()
    }

    /// Gradient of the discrete action with respect to `C*` at the last node.
    pub fn endpoint_gradient(&self, values: &[Complex64], c_tilde: &[Complex64]) -> Vec<Complex64> {
        let traj = CoefficientTrajectory::new(self.grid, self.spectrum.j_count(), self.spectrum.k_count(), values.to_vec())
            .expect("solver iterate has a consistent shape");
        node_gradient(&traj, &self.spectrum, &self.couplings, c_tilde, self.n_nodes - 1)
    }

    /// Row range touched by node `n`, clipped to the grid.
    fn row_range(&self, n: usize) -> (usize, usize) {
        let h = self.node_halfwidth();
        (n.saturating_sub(h), (n + h).min(self.n_nodes - 1))
    }

    /// Linearisation of the forcing `F(n)`.
    fn forcing_linearization(&self, values: &[Complex64], n: usize) -> RowLinearization {
        let (lo, hi) = self.row_range(n);
        let mut lin = RowLinearization::zeros(self.m, lo, hi);
        let rot = 2.0 / self.hbar / (2.0 * self.dt);
        for q in 0..self.m {
            let e = I * (rot * self.energies[q]);
            *lin.hol_mut(n + 1, q, q) += e;
            *lin.hol_mut(n - 1, q, q) -= e;
            *lin.hol_mut(n, q, q) += Complex64::new(self.mu / self.b * self.d2[q], 0.0);
        }
        if self.has_nonlocal() {
            let ct = self.ctx.c_tilde_linearization(values, n);
            lin.add_scaled(&ct, Complex64::new(2.0 * self.nu / self.b, 0.0));
        }
        lin
    }

    fn interior_linearization(&self, values: &[Complex64], c_tilde: &[Complex64], n: usize, variant: Variant) -> RowLinearization {
        let (lo, hi) = self.row_range(n);
        let fl = self.forcing_linearization(values, n);
        let mut lin = RowLinearization::zeros(self.m, lo, hi);
        let inv = 1.0 / (self.dt * self.dt);
        for q in 0..self.m {
            *lin.hol_mut(n + 1, q, q) += inv;
            *lin.hol_mut(n, q, q) -= 2.0 * inv;
            *lin.hol_mut(n - 1, q, q) += inv;
        }
        lin.add_scaled(&fl, Complex64::new(-1.0, 0.0));
        if variant == Variant::Constrained {
            let f = self.forcing(values, c_tilde, n);
            let s = self.reaction(values, &f, n);
            let ds = self.reaction_linearization(values, &f, &fl, n);
            for q in 0..self.m {
                *lin.hol_mut(n, q, q) += s;
                let cq = self.c(values, n, q);
                for (p, sm, h) in ds.iter().copied() {
                    *lin.hol_mut(p, q, sm) += cq * h;
                    *lin.anti_mut(p, q, sm) += cq * h.conj();
                }
            }
        }
        lin
    }

    /// `∂S(n)/∂C_s(p)` as `(p, s, value)`; `∂S/∂C*` is its conjugate.
    fn reaction_linearization(
        &self,
        values: &[Complex64],
        forcing: &[Complex64],
        fl: &RowLinearization,
        n: usize,
    ) -> Vec<(usize, usize, Complex64)> {
        let (lo, hi) = fl.range();
        let m = self.m;
        let width = hi - lo + 1;
        let mut hol = vec![ZERO; width * m];
        let at = |p: usize, s: usize| (p - lo) * m + s;
        let half_inv = 0.5 / (self.dt * self.dt);
        for s in 0..m {
            let dp = self.c(values, n + 1, s) - self.c(values, n, s);
            let dm = self.c(values, n, s) - self.c(values, n - 1, s);
            hol[at(n + 1, s)] += dp.conj() * half_inv;
            hol[at(n, s)] += (dm.conj() - dp.conj()) * half_inv;
            hol[at(n - 1, s)] -= dm.conj() * half_inv;
        }
        // Re{C*_s F_s}: holomorphic coefficient ½(h + conj(a)).
        for s in 0..m {
            let cs = self.c(values, n, s).conj();
            // From dC*_s(n) F_s: anti coefficient F_s.
            hol[at(n, s)] += 0.5 * forcing[s].conj();
            for p in lo..=hi {
                for r in 0..m {
                    let (h, a) = fl.get(p, s, r);
                    if h == ZERO && a == ZERO {
                        continue;
                    }
                    hol[at(p, r)] += 0.5 * (cs * h + (cs * a).conj());
                }
            }
        }
        hol.iter()
            .enumerate()
            .filter(|(_, v)| **v != ZERO)
            .map(|(i, v)| (lo + i / m, i % m, *v))
            .collect()
    }

    fn endpoint_linearization(&self, values: &[Complex64]) -> RowLinearization {
        let last = self.n_nodes - 1;
        let (lo, hi) = self.row_range(last);
        let mut lin = RowLinearization::zeros(self.m, lo, hi);
        let w = 0.5 * self.dt;
        for q in 0..self.m {
            *lin.hol_mut(last, q, q) += self.b / self.dt + w * self.mu * self.d2[q];
            *lin.hol_mut(last - 1, q, q) += -self.b / self.dt - I * (self.b * self.energies[q] / self.hbar);
        }
        if self.has_nonlocal() {
            let ct = self.ctx.c_tilde_linearization(values, last);
            lin.add_scaled(&ct, Complex64::new(w * 2.0 * self.nu, 0.0));
        }
        lin
    }
}

/// The square real system solved for the boundary-value problem.
///
/// Unknowns are `((node * M + mode) * 2 + {re, im})`, followed by the
/// endpoint multiplier in the constrained variant.
pub(crate) struct BoundarySystem<'a> {
    pub asm: &'a Assembler,
    pub initial: &'a [Complex64],
    pub variant: Variant,
}

impl BoundarySystem<'_> {
    pub fn dim(&self) -> usize {
        2 * self.asm.n_nodes * self.asm.m + usize::from(self.variant == Variant::Constrained)
    }

    pub fn bandwidth(&self) -> usize {
        2 * self.asm.m * (self.asm.node_halfwidth() + 1) - 1
    }

    pub fn split(&self, x: &[f64]) -> (Vec<Complex64>, f64) {
        let nm = self.asm.n_nodes * self.asm.m;
        let values = (0..nm).map(|i| Complex64::new(x[2 * i], x[2 * i + 1])).collect();
        let lambda = if self.variant == Variant::Constrained { x[2 * nm] } else { 0.0 };
        (values, lambda)
    }

    pub fn pack(&self, values: &[Complex64], lambda: f64) -> Vec<f64> {
        let mut x: Vec<f64> = values.iter().flat_map(|c| [c.re, c.im]).collect();
        if self.variant == Variant::Constrained {
            x.push(lambda);
        }
        x
    }

    /// Complex residual rows per node plus the normalisation row, if any.
    pub fn residual_parts(&self, values: &[Complex64], lambda: f64) -> SystemResidual {
        let asm = self.asm;
        let m = asm.m;
        let last = asm.n_nodes - 1;
        let c_tilde = asm.c_tilde(values);
        let mut rows = vec![ZERO; values.len()];
        for q in 0..m {
            rows[q] = values[q] - self.initial[q];
            rows[m + q] = (values[m + q] - values[q]) / asm.dt;
        }
        for n in 2..last {
            let r = match self.variant {
                Variant::Unconstrained => asm.interior_unconstrained(values, &c_tilde, n),
                Variant::Constrained => asm.interior_constrained(values, &c_tilde, n),
            };
            rows[n * m..(n + 1) * m].copy_from_slice(&r);
        }
        let g = asm.endpoint_gradient(values, &c_tilde);
        for q in 0..m {
            let mut v = g[q];
            if self.variant == Variant::Constrained {
                v += values[last * m + q] * lambda;
            }
            rows[last * m + q] = v;
        }
        let normalization = (self.variant == Variant::Constrained)
            .then(|| values[last * m..].iter().map(|c| c.norm_sqr()).sum::<f64>() - 1.0);
        SystemResidual { rows, normalization, m }
    }

    /// Imposes the initial condition exactly on the node-0 components.
    pub fn pin(&self, x: &mut [f64]) {
        for (q, c) in self.initial.iter().enumerate() {
            x[2 * q] = c.re;
            x[2 * q + 1] = c.im;
        }
    }

    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let (values, lambda) = self.split(x);
        self.residual_parts(&values, lambda).to_real()
    }

    /// Writes the Jacobian of [`Self::residual`] at `x` into `sink`.
    pub fn jacobian(&self, x: &[f64], sink: &mut JacobianSink<'_>) {
        let asm = self.asm;
        let m = asm.m;
        let last = asm.n_nodes - 1;
        let (values, lambda) = self.split(x);
        let c_tilde = if self.variant == Variant::Constrained { asm.c_tilde(&values) } else { Vec::new() };
        for i in 0..2 * m {
            sink.add(i, i, 1.0);
            sink.add(2 * m + i, 2 * m + i, 1.0 / asm.dt);
            sink.add(2 * m + i, i, -1.0 / asm.dt);
        }
        for n in 2..last {
            asm.interior_linearization(&values, &c_tilde, n, self.variant)
                .scatter(n, 1.0, sink);
        }
        let mut end = asm.endpoint_linearization(&values);
        if self.variant == Variant::Constrained {
            let col = 2 * asm.n_nodes * m;
            for q in 0..m {
                *end.hol_mut(last, q, q) += lambda;
                let c = values[last * m + q];
                let row = 2 * (last * m + q);
                sink.add(row, col, c.re);
                sink.add(row + 1, col, c.im);
                sink.add(col, row, 2.0 * c.re);
                sink.add(col, row + 1, 2.0 * c.im);
            }
        }
        end.scatter(last, 1.0, sink);
    }
}

pub(crate) struct SystemResidual {
    pub rows: Vec<Complex64>,
    pub normalization: Option<f64>,
    m: usize,
}

impl SystemResidual {
    pub fn to_real(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.rows.iter().flat_map(|c| [c.re, c.im]).collect();
        if let Some(v) = self.normalization {
            out.push(v);
        }
        out
    }

    /// Largest complex row magnitude (and the normalisation row).
    pub fn norm(&self) -> f64 {
        let rows = self.rows.iter().map(|c| c.norm()).fold(0.0, f64::max);
        rows.max(self.normalization.map_or(0.0, f64::abs))
    }

    pub fn node(&self, n: usize) -> &[Complex64] {
        &self.rows[n * self.m..(n + 1) * self.m]
    }

    pub fn interior_norm(&self) -> f64 {
        let n_nodes = self.rows.len() / self.m;
        (2..n_nodes - 1)
            .flat_map(|n| self.node(n).iter())
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn has_nan(&self) -> bool {
        self.rows.iter().any(|c| !c.is_finite()) || self.normalization.is_some_and(|v| !v.is_finite())
    }
}

fn interior_residual(
    traj: &CoefficientTrajectory,
    spectrum: &ModeSpectrum,
    couplings: &Couplings,
    variant: Variant,
) -> Result<Vec<Complex64>> {
    traj.check_spectrum(spectrum)?;
    let asm = Assembler::new(spectrum, couplings, traj.grid());
    let values = traj.values();
    let c_tilde = asm.c_tilde(values);
    let m = asm.m;
    let mut out = vec![ZERO; values.len()];
    for n in 1..asm.n_nodes - 1 {
        let r = match variant {
            Variant::Unconstrained => asm.interior_unconstrained(values, &c_tilde, n),
            Variant::Constrained => asm.interior_constrained(values, &c_tilde, n),
        };
        out[n * m..(n + 1) * m].copy_from_slice(&r);
    }
    Ok(out)
}

/// `C̈ − (2i/ħ) E Ċ − (μ/B) Δ² C − (2ν/B) C̃` at interior nodes, node-major;
/// the first and last node rows are zero.
pub fn ide_residual_unconstrained(
    traj: &CoefficientTrajectory,
    spectrum: &ModeSpectrum,
    couplings: &Couplings,
) -> Result<Vec<Complex64>> {
    interior_residual(traj, spectrum, couplings, Variant::Unconstrained)
}

/// Interior residual with the Lagrange multiplier eliminated.
pub fn ide_residual_constrained(
    traj: &CoefficientTrajectory,
    spectrum: &ModeSpectrum,
    couplings: &Couplings,
) -> Result<Vec<Complex64>> {
    interior_residual(traj, spectrum, couplings, Variant::Constrained)
}

/// `λ(t_n)` from `2Tλ/B = −Σ(|Ċ|² + Re{C* F})`.
///
/// Interior nodes use the same discrete kinetic density as the constrained
/// residual; the endpoints use the one-sided difference and the second-order
/// one-sided derivative.
pub fn lambda_of_t(traj: &CoefficientTrajectory, spectrum: &ModeSpectrum, couplings: &Couplings, node: usize) -> Result<f64> {
    traj.check_spectrum(spectrum)?;
    check_node(traj, node)?;
    let asm = Assembler::new(spectrum, couplings, traj.grid());
    let values = traj.values();
    let s = reaction_at(&asm, traj, values, node);
    Ok(-s * couplings.b() / (2.0 * traj.grid().duration()))
}

/// `λ(t)` at every node.
pub fn lambda_trace(traj: &CoefficientTrajectory, spectrum: &ModeSpectrum, couplings: &Couplings) -> Result<Vec<f64>> {
    traj.check_spectrum(spectrum)?;
    let asm = Assembler::new(spectrum, couplings, traj.grid());
    let scale = -couplings.b() / (2.0 * traj.grid().duration());
    Ok((0..traj.n_nodes())
        .map(|n| scale * reaction_at(&asm, traj, traj.values(), n))
        .collect())
}

fn reaction_at(asm: &Assembler, traj: &CoefficientTrajectory, values: &[Complex64], node: usize) -> f64 {
    let last = asm.n_nodes - 1;
    let m = asm.m;
    let c_tilde_node = if asm.has_nonlocal() {
        asm.ctx.c_tilde_at(values, node)
    } else {
        vec![ZERO; m]
    };
    if node > 0 && node < last {
        let mut c_tilde = vec![ZERO; values.len()];
        c_tilde[node * m..(node + 1) * m].copy_from_slice(&c_tilde_node);
        let f = asm.forcing(values, &c_tilde, node);
        return asm.reaction(values, &f, node);
    }
    let other = if node == 0 { 1 } else { last - 1 };
    let deriv = traj.time_derivative();
    let mut s = 0.0;
    for q in 0..m {
        let c = values[node * m + q];
        let diff = (values[other * m + q] - c) / asm.dt;
        let f = I * (2.0 / asm.hbar * asm.energies[q]) * deriv[node * m + q]
            + c * (asm.mu / asm.b * asm.d2[q])
            + c_tilde_node[q] * (2.0 * asm.nu / asm.b);
        s += diff.norm_sqr() + (c.conj() * f).re;
    }
    s
}

/// The multiplier assembled from the complex projection
/// `−Σ C*(δ²C/dt² − F) / Σ|C|²`, which equals `2Tλ/B` at a constrained
/// solution. Its imaginary part measures how far the assembly is from real.
pub fn lambda_assembly(traj: &CoefficientTrajectory, spectrum: &ModeSpectrum, couplings: &Couplings, node: usize) -> Result<Complex64> {
    traj.check_spectrum(spectrum)?;
    check_node(traj, node)?;
    if node == 0 || node + 1 == traj.n_nodes() {
        return Err(crate::Error::InvalidArgument(format!("node {node} is not interior")));
    }
    let asm = Assembler::new(spectrum, couplings, traj.grid());
    let values = traj.values();
    let m = asm.m;
    let mut c_tilde = vec![ZERO; values.len()];
    if asm.has_nonlocal() {
        c_tilde[node * m..(node + 1) * m].copy_from_slice(&asm.ctx.c_tilde_at(values, node));
    }
    let f = asm.forcing(values, &c_tilde, node);
    let mut acc = ZERO;
    for q in 0..m {
        acc += values[node * m + q].conj() * (asm.second_difference(values, node, q) - f[q]);
    }
    Ok(-acc / traj.total_weight(node))
}

/// Derivative of the discrete total action with respect to `C*(t_f)`.
pub fn nbc_residual(traj: &CoefficientTrajectory, spectrum: &ModeSpectrum, couplings: &Couplings) -> Result<Vec<Complex64>> {
    traj.check_spectrum(spectrum)?;
    let asm = Assembler::new(spectrum, couplings, traj.grid());
    let c_tilde = asm.c_tilde(traj.values());
    Ok(asm.endpoint_gradient(traj.values(), &c_tilde))
}
