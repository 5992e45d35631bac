//! Sampled coefficient trajectories `C_jk(t_n)` and the diagnostics read off
//! them: weights, derivatives and collapse metrics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{ModeSpectrum, TimeGrid};
use crate::{Error, Result};

/// Total weight below which a final state cannot be classified.
pub const DEGENERATE_WEIGHT_FLOOR: f64 = 1e-12;

/// Complex coefficients on a uniform grid, stored node-major with the flat
/// mode index `m = j * K + k` inside each node.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTrajectory {
    grid: TimeGrid,
    j_count: usize,
    k_count: usize,
    values: Vec<Complex64>,
}

impl CoefficientTrajectory {
    pub fn new(
        grid: TimeGrid,
        j_count: usize,
        k_count: usize,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        if j_count == 0 || k_count == 0 {
            return Err(Error::Shape("J and K must both be at least 1".into()));
        }
        let expected = grid.n_nodes() * j_count * k_count;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "expected {} coefficients ({} nodes x {} modes), got {}",
                expected,
                grid.n_nodes(),
                j_count * k_count,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "non-finite coefficient at node {}, mode {}",
                i / (j_count * k_count),
                i % (j_count * k_count)
            )));
        }
        Ok(Self {
            grid,
            j_count,
            k_count,
            values,
        })
    }

    /// Trajectory shaped for `spectrum`, filled from `f(node, mode)`.
    pub fn from_fn(
        grid: TimeGrid,
        spectrum: &ModeSpectrum,
        mut f: impl FnMut(usize, usize) -> Complex64,
    ) -> Result<Self> {
        let m = spectrum.n_modes();
        let values = (0..grid.n_nodes() * m).map(|i| f(i / m, i % m)).collect();
        Self::new(grid, spectrum.j_count(), spectrum.k_count(), values)
    }

    /// Holds `c0` at every node.
    pub fn constant(grid: TimeGrid, spectrum: &ModeSpectrum, c0: &[Complex64]) -> Result<Self> {
        if c0.len() != spectrum.n_modes() {
            return Err(Error::Shape(format!(
                "{} initial coefficients for {} modes",
                c0.len(),
                spectrum.n_modes()
            )));
        }
        Self::from_fn(grid, spectrum, |_, m| c0[m])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn j_count(&self) -> usize {
        self.j_count
    }

    pub fn k_count(&self) -> usize {
        self.k_count
    }

    pub fn n_modes(&self) -> usize {
        self.j_count * self.k_count
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    #[inline]
    pub fn node(&self, n: usize) -> &[Complex64] {
        let m = self.n_modes();
        &self.values[n * m..(n + 1) * m]
    }

    #[inline]
    pub fn at(&self, n: usize, mode: usize) -> Complex64 {
        self.values[n * self.n_modes() + mode]
    }

    /// Checks that `spectrum` has this trajectory's mode layout.
    pub fn check_spectrum(&self, spectrum: &ModeSpectrum) -> Result<()> {
        if spectrum.j_count() != self.j_count || spectrum.k_count() != self.k_count {
            return Err(Error::Shape(format!(
                "trajectory is {}x{} but spectrum is {}x{}",
                self.j_count,
                self.k_count,
                spectrum.j_count(),
                spectrum.k_count()
            )));
        }
        Ok(())
    }

    /// `Σ_jk |C_jk|²` at node `n`.
    pub fn total_weight(&self, n: usize) -> f64 {
        self.node(n).iter().map(|c| c.norm_sqr()).sum()
    }

    /// `P_j = Σ_k |C_jk|²` at node `n`.
    pub fn outcome_weights(&self, n: usize) -> Vec<f64> {
        self.node(n)
            .chunks(self.k_count)
            .map(|row| row.iter().map(|c| c.norm_sqr()).sum())
            .collect()
    }

    /// Second-order finite-difference time derivative: central at interior
    /// nodes, three-point one-sided at the two ends.
    pub fn time_derivative(&self) -> Vec<Complex64> {
        let n_nodes = self.n_nodes();
        let m = self.n_modes();
        let inv2dt = 0.5 / self.grid.dt();
        let mut out = vec![Complex64::new(0.0, 0.0); self.values.len()];
        for q in 0..m {
            let c = |n: usize| self.values[n * m + q];
            out[q] = ((c(1) - c(0)) * 4.0 - (c(2) - c(0))) * inv2dt;
            for n in 1..n_nodes - 1 {
                out[n * m + q] = (c(n + 1) - c(n - 1)) * inv2dt;
            }
            let l = n_nodes - 1;
            out[l * m + q] = ((c(l) - c(l - 1)) * 4.0 - (c(l) - c(l - 2))) * inv2dt;
        }
        out
    }

    /// Collapse diagnostics at `t_f`.
    pub fn collapse_metrics(&self, spectrum: &ModeSpectrum) -> Result<CollapseMetrics> {
        self.check_spectrum(spectrum)?;
        let last = self.n_nodes() - 1;
        let total = self.total_weight(last);
        if !(total >= DEGENERATE_WEIGHT_FLOOR) {
            return Err(Error::DegenerateState {
                node: last,
                weight: total,
                floor: DEGENERATE_WEIGHT_FLOOR,
            });
        }
        let deltas = spectrum.deltas();
        let mismatched: f64 = self
            .node(last)
            .iter()
            .zip(&deltas)
            .filter(|(_, d)| **d != 0.0)
            .map(|(c, _)| c.norm_sqr())
            .sum();
        let weights = self.outcome_weights(last);
        let sum_p: f64 = weights.iter().sum();
        let mut dominant_j = 0;
        for (j, p) in weights.iter().enumerate() {
            if *p > weights[dominant_j] {
                dominant_j = j;
            }
        }
        Ok(CollapseMetrics {
            agreement_residual: mismatched / total,
            purity: weights[dominant_j] / sum_p,
            dominant_j,
            final_weight: total,
        })
    }

    /// Elementwise complex conjugate.
    pub fn conjugate(&self) -> Self {
        Self {
            values: self.values.iter().map(|c| c.conj()).collect(),
            ..self.clone()
        }
    }

    /// Every coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            values: self.values.iter().map(|c| c * factor).collect(),
            ..self.clone()
        }
    }

    /// Node order reversed (the grid is kept).
    pub fn time_reversed(&self) -> Self {
        let m = self.n_modes();
        let values = (0..self.n_nodes())
            .rev()
            .flat_map(|n| self.values[n * m..(n + 1) * m].iter().copied())
            .collect();
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Outcome classification of a final state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseMetrics {
    /// Fraction of the final weight on modes with `Δ_jk ≠ 0`.
    pub agreement_residual: f64,
    /// `max_j P_j / Σ_j P_j` at `t_f`.
    pub purity: f64,
    /// `argmax_j P_j(t_f)`, ties resolved to the lowest index.
    pub dominant_j: usize,
    /// `Σ |C_jk(t_f)|²`.
    pub final_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseThresholds {
    #[serde(default = "default_min_purity")]
    pub min_purity: f64,
    #[serde(default = "default_max_agreement")]
    pub max_agreement_residual: f64,
}

fn default_min_purity() -> f64 {
    0.99
}

fn default_max_agreement() -> f64 {
    0.01
}

impl Default for CollapseThresholds {
    fn default() -> Self {
        Self {
            min_purity: default_min_purity(),
            max_agreement_residual: default_max_agreement(),
        }
    }
}

impl CollapseMetrics {
    pub fn is_collapsed(&self, thresholds: &CollapseThresholds) -> bool {
        self.purity >= thresholds.min_purity
            && self.agreement_residual <= thresholds.max_agreement_residual
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn spec(j: usize, k: usize) -> ModeSpectrum {
        ModeSpectrum::new(
            (0..j).map(|x| x as f64).collect(),
            (0..k).map(|x| x as f64).collect(),
            vec![0.0; j],
            vec![0.0; k],
        )
        .unwrap()
    }

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn total_weight_examples() {
        let s = spec(2, 2);
        let t = CoefficientTrajectory::constant(grid(3), &s, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(t.total_weight(1), 1.0);

        let s = spec(1, 2);
        let t = CoefficientTrajectory::constant(grid(3), &s, &[c(FRAC_1_SQRT_2, 0.0), c(0.0, FRAC_1_SQRT_2)]).unwrap();
        assert_abs_diff_eq!(t.total_weight(0), 1.0, epsilon = 1e-15);

        let t = CoefficientTrajectory::constant(grid(3), &s, &[c(0.6, 0.0), c(0.3, 0.0)]).unwrap();
        assert_abs_diff_eq!(t.total_weight(2), 0.45, epsilon = 1e-15);
    }

    #[test]
    fn outcome_weights_examples() {
        let s = spec(2, 2);
        let h = FRAC_1_SQRT_2;
        let t = CoefficientTrajectory::constant(grid(3), &s, &[c(h, 0.0), c(0.0, 0.0), c(h, 0.0), c(0.0, 0.0)]).unwrap();
        let p = t.outcome_weights(0);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-15);

        let t = CoefficientTrajectory::constant(grid(3), &s, &[c(0.3, 0.1), c(0.0, 0.2), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        let p = t.outcome_weights(0);
        assert_abs_diff_eq!(p[0], 0.14, epsilon = 1e-15);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn outcome_weights_match_double_loop() {
        let s = spec(3, 2);
        let t = CoefficientTrajectory::from_fn(grid(7), &s, |n, m| {
            c((n as f64 * 0.37 + m as f64).sin(), (n as f64 * 1.3 - m as f64 * 0.4).cos())
        })
        .unwrap();
        for n in 0..7 {
            let p = t.outcome_weights(n);
            for j in 0..3 {
                let mut brute = 0.0;
                for k in 0..2 {
                    let z = t.at(n, j * 2 + k);
                    brute += z.re * z.re + z.im * z.im;
                }
                assert_abs_diff_eq!(p[j], brute, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let s = spec(2, 1);
        let t = CoefficientTrajectory::constant(grid(9), &s, &[c(0.6, 0.2), c(-0.1, 0.7)]).unwrap();
        assert!(t.time_derivative().iter().all(|d| *d == c(0.0, 0.0)));
    }

    #[test]
    fn derivative_is_exact_on_quadratics() {
        let s = spec(1, 1);
        let g = TimeGrid::new(0.5, 2.5, 11).unwrap();
        let t = CoefficientTrajectory::from_fn(g, &s, |n, _| {
            let x = g.time(n);
            c(3.0 * x - 1.0, 0.5 * x * x)
        })
        .unwrap();
        let d = t.time_derivative();
        for n in 0..11 {
            assert_abs_diff_eq!(d[n].re, 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(d[n].im, g.time(n), epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_of_phase_rotation_is_second_order() {
        let s = spec(1, 1);
        let omega = 3.0;
        let err = |n_nodes: usize| {
            let g = TimeGrid::new(0.0, 2.0, n_nodes).unwrap();
            let t = CoefficientTrajectory::from_fn(g, &s, |n, _| {
                Complex64::from_polar(1.0, omega * g.time(n))
            })
            .unwrap();
            t.time_derivative()
                .iter()
                .enumerate()
                .map(|(n, d)| (d - c(0.0, omega) * t.at(n, 0)).norm())
                .fold(0.0, f64::max)
        };
        let ratio = err(101) / err(201);
        assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn collapse_metrics_examples() {
        // Matched spectra: Δ = 0 on the diagonal.
        let s = ModeSpectrum::new(vec![1.0, -1.0], vec![1.0, -1.0], vec![0.0; 2], vec![0.0; 2]).unwrap();
        let z = c(0.0, 0.0);
        let t = CoefficientTrajectory::constant(grid(3), &s, &[z, z, z, c(0.0, 1.0)]).unwrap();
        let m = t.collapse_metrics(&s).unwrap();
        assert_eq!((m.agreement_residual, m.purity, m.dominant_j), (0.0, 1.0, 1));

        let h = FRAC_1_SQRT_2;
        let t = CoefficientTrajectory::constant(grid(3), &s, &[c(h, 0.0), z, z, c(h, 0.0)]).unwrap();
        let m = t.collapse_metrics(&s).unwrap();
        assert_eq!(m.agreement_residual, 0.0);
        assert_abs_diff_eq!(m.purity, 0.5, epsilon = 1e-15);
        assert_eq!(m.dominant_j, 0);

        let t = CoefficientTrajectory::constant(grid(3), &s, &[z, c(0.5, 0.0), z, z]).unwrap();
        assert_eq!(t.collapse_metrics(&s).unwrap().agreement_residual, 1.0);

        let t = CoefficientTrajectory::constant(grid(3), &s, &[z, z, z, z]).unwrap();
        assert!(matches!(t.collapse_metrics(&s), Err(Error::DegenerateState { .. })));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(CoefficientTrajectory::new(grid(3), 2, 2, vec![c(0.0, 0.0); 11]).is_err());
        let mut v = vec![c(0.0, 0.0); 12];
        v[5] = c(f64::NAN, 0.0);
        assert!(CoefficientTrajectory::new(grid(3), 2, 2, v).is_err());
    }

    fn random_traj() -> impl Strategy<Value = CoefficientTrajectory> {
        (1usize..4, 1usize..4, 3usize..12).prop_flat_map(|(j, k, n)| {
            proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * j * k).prop_map(move |v| {
                CoefficientTrajectory::new(
                    grid(n),
                    j,
                    k,
                    v.into_iter().map(|(a, b)| c(a, b)).collect(),
                )
                .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn weights_sum_to_total(t in random_traj()) {
            for n in 0..t.n_nodes() {
                let total = t.total_weight(n);
                let sum: f64 = t.outcome_weights(n).iter().sum();
                prop_assert!((sum - total).abs() <= 1e-14 * total.max(1e-300));
            }
        }

        #[test]
        fn derivative_is_linear(t in random_traj(), re in -2.0f64..2.0, im in -2.0f64..2.0) {
            let a = c(re, im);
            let lhs = t.scaled(a).time_derivative();
            let rhs = t.time_derivative();
            for (x, y) in lhs.iter().zip(&rhs) {
                prop_assert!((x - y * a).norm() <= 1e-12 * (1.0 + y.norm() * a.norm()));
            }
        }

        #[test]
        fn purity_in_range(t in random_traj()) {
            let s = ModeSpectrum::new(
                vec![0.0; t.j_count()], vec![0.0; t.k_count()],
                vec![0.0; t.j_count()], vec![0.0; t.k_count()],
            ).unwrap();
            if let Ok(m) = t.collapse_metrics(&s) {
                let lo = 1.0 / t.j_count() as f64;
                prop_assert!(m.purity >= lo - 1e-12 && m.purity <= 1.0 + 1e-12);
            }
        }
    }
}
