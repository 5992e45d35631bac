//! Physical problem definition: mode spectra, coupling constants and the time
//! grid, together with the shorthand quantities `Δ_jk` and `E_jk`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::kernel::KernelSpec;
use crate::{Error, Result};

/// Eigenvalues and energies of the measured system (index `j`, length `J`)
/// and of the apparatus pointer (index `k`, length `K`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpectrum", into = "RawSpectrum")]
pub struct ModeSpectrum {
    sigma1: Vec<f64>,
    sigma2: Vec<f64>,
    e1: Vec<f64>,
    e2: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpectrum {
    sigma1: Vec<f64>,
    sigma2: Vec<f64>,
    e1: Vec<f64>,
    e2: Vec<f64>,
}

impl TryFrom<RawSpectrum> for ModeSpectrum {
    type Error = Error;

    fn try_from(raw: RawSpectrum) -> Result<Self> {
        ModeSpectrum::new(raw.sigma1, raw.sigma2, raw.e1, raw.e2)
    }
}

impl From<ModeSpectrum> for RawSpectrum {
    fn from(s: ModeSpectrum) -> Self {
        RawSpectrum {
            sigma1: s.sigma1,
            sigma2: s.sigma2,
            e1: s.e1,
            e2: s.e2,
        }
    }
}

/// Two distinct modes whose combined energies collide within tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyCollision {
    pub first: (usize, usize),
    pub second: (usize, usize),
}

impl ModeSpectrum {
    pub fn new(sigma1: Vec<f64>, sigma2: Vec<f64>, e1: Vec<f64>, e2: Vec<f64>) -> Result<Self> {
        if sigma1.is_empty() || sigma2.is_empty() {
            return Err(Error::InvalidArgument(
                "both subsystems need at least one mode".into(),
            ));
        }
        if sigma1.len() != e1.len() {
            return Err(Error::InvalidArgument(format!(
                "sigma1 has {} entries but e1 has {}",
                sigma1.len(),
                e1.len()
            )));
        }
        if sigma2.len() != e2.len() {
            return Err(Error::InvalidArgument(format!(
                "sigma2 has {} entries but e2 has {}",
                sigma2.len(),
                e2.len()
            )));
        }
        if sigma1
            .iter()
            .chain(&sigma2)
            .chain(&e1)
            .chain(&e2)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "spectrum entries must be finite".into(),
            ));
        }
        Ok(Self {
            sigma1,
            sigma2,
            e1,
            e2,
        })
    }

    pub fn j_count(&self) -> usize {
        self.sigma1.len()
    }

    pub fn k_count(&self) -> usize {
        self.sigma2.len()
    }

    pub fn n_modes(&self) -> usize {
        self.j_count() * self.k_count()
    }

    pub fn sigma1(&self) -> &[f64] {
        &self.sigma1
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn e1(&self) -> &[f64] {
        &self.e1
    }

    pub fn e2(&self) -> &[f64] {
        &self.e2
    }

    /// Flat row-major index of mode `(j, k)`.
    #[inline]
    pub fn mode_index(&self, j: usize, k: usize) -> usize {
        j * self.k_count() + k
    }

    #[inline]
    pub fn mode_pair(&self, m: usize) -> (usize, usize) {
        (m / self.k_count(), m % self.k_count())
    }

    fn check(&self, j: usize, k: usize) -> Result<()> {
        if j >= self.j_count() || k >= self.k_count() {
            return Err(Error::IndexOutOfRange {
                j,
                k,
                j_count: self.j_count(),
                k_count: self.k_count(),
            });
        }
        Ok(())
    }

    /// `Δ_jk = σ¹_j − σ²_k`, the eigenvalue mismatch between system and pointer.
    pub fn delta(&self, j: usize, k: usize) -> Result<f64> {
        self.check(j, k)?;
        Ok(self.sigma1[j] - self.sigma2[k])
    }

    /// `E_jk = E¹_j + E²_k`.
    pub fn combined_energy(&self, j: usize, k: usize) -> Result<f64> {
        self.check(j, k)?;
        Ok(self.e1[j] + self.e2[k])
    }

    /// `Δ` for every flat mode index.
    pub fn deltas(&self) -> Vec<f64> {
        (0..self.n_modes())
            .map(|m| {
                let (j, k) = self.mode_pair(m);
                self.sigma1[j] - self.sigma2[k]
            })
            .collect()
    }

    /// `E` for every flat mode index.
    pub fn energies(&self) -> Vec<f64> {
        (0..self.n_modes())
            .map(|m| {
                let (j, k) = self.mode_pair(m);
                self.e1[j] + self.e2[k]
            })
            .collect()
    }

    /// Every pair of distinct modes whose combined energies agree to within
    /// `tol_energy`. An empty list means the spectrum is non-degenerate.
    pub fn validate_nondegenerate(&self, tol_energy: f64) -> Vec<EnergyCollision> {
        let energies = self.energies();
        let mut out = Vec::new();
        for a in 0..energies.len() {
            for b in (a + 1)..energies.len() {
                if (energies[a] - energies[b]).abs() <= tol_energy {
                    out.push(EnergyCollision {
                        first: self.mode_pair(a),
                        second: self.mode_pair(b),
                    });
                }
            }
        }
        out
    }

    /// Smallest nonzero `|E_jk − E_lm|` over all mode pairs.
    pub fn min_energy_gap(&self) -> Option<f64> {
        let energies = self.energies();
        let mut best: Option<f64> = None;
        for a in 0..energies.len() {
            for b in (a + 1)..energies.len() {
                let gap = (energies[a] - energies[b]).abs();
                if gap > 0.0 {
                    best = Some(best.map_or(gap, |g| g.min(gap)));
                }
            }
        }
        best
    }
}

/// Coupling constants. `b` is the combined kinetic prefactor `B¹ + B²`,
/// `mu` the local interaction strength and `nu` the nonlocal one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCouplings", into = "RawCouplings")]
pub struct Couplings {
    b: f64,
    mu: f64,
    nu: f64,
    hbar: f64,
    kernel: KernelSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCouplings {
    b: f64,
    mu: f64,
    nu: f64,
    #[serde(default = "one")]
    hbar: f64,
    kernel: KernelSpec,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawCouplings> for Couplings {
    type Error = Error;

    fn try_from(raw: RawCouplings) -> Result<Self> {
        Couplings::new(raw.b, raw.mu, raw.nu, raw.hbar, raw.kernel)
    }
}

impl From<Couplings> for RawCouplings {
    fn from(c: Couplings) -> Self {
        RawCouplings {
            b: c.b,
            mu: c.mu,
            nu: c.nu,
            hbar: c.hbar,
            kernel: c.kernel,
        }
    }
}

/// Multiplier of `ν/B` in front of `C̃` in the evolution equations. The
/// nonlocal action term contributes through both of its time arguments, so
/// the exact Euler–Lagrange equation of the action carries `2ν/B`.
pub const NONLOCAL_VARIATION_FACTOR: f64 = 2.0;

impl Couplings {
    pub fn new(b: f64, mu: f64, nu: f64, hbar: f64, kernel: KernelSpec) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::Config(format!("B must be finite and > 0, got {b}")));
        }
        if !(hbar.is_finite() && hbar > 0.0) {
            return Err(Error::Config(format!(
                "hbar must be finite and > 0, got {hbar}"
            )));
        }
        if !mu.is_finite() || !nu.is_finite() {
            return Err(Error::Config("mu and nu must be finite".into()));
        }
        Ok(Self {
            b,
            mu,
            nu,
            hbar,
            kernel,
        })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn tau(&self) -> f64 {
        self.kernel.tau()
    }

    /// Coefficient of `C̃_jk` in the evolution equation.
    pub fn nonlocal_coefficient(&self) -> f64 {
        NONLOCAL_VARIATION_FACTOR * self.nu / self.b
    }

    /// Copy with both interaction strengths multiplied by `scale`, used by
    /// continuation.
    pub fn with_interaction_scale(&self, scale: f64) -> Self {
        Self {
            mu: self.mu * scale,
            nu: self.nu * scale,
            ..self.clone()
        }
    }

    pub fn with_mu_nu(&self, mu: f64, nu: f64) -> Self {
        Self {
            mu,
            nu,
            ..self.clone()
        }
    }

    pub fn with_kernel(&self, kernel: KernelSpec) -> Self {
        Self {
            kernel,
            ..self.clone()
        }
    }
}

/// Uniform time grid from `t_i` to `t_f` with `n_nodes` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct TimeGrid {
    t_i: f64,
    t_f: f64,
    n_nodes: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    t_i: f64,
    t_f: f64,
    n_nodes: usize,
}

impl TryFrom<RawGrid> for TimeGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        TimeGrid::new(raw.t_i, raw.t_f, raw.n_nodes)
    }
}

impl From<TimeGrid> for RawGrid {
    fn from(g: TimeGrid) -> Self {
        RawGrid {
            t_i: g.t_i,
            t_f: g.t_f,
            n_nodes: g.n_nodes,
        }
    }
}

impl TimeGrid {
    pub fn new(t_i: f64, t_f: f64, n_nodes: usize) -> Result<Self> {
        if !(t_i.is_finite() && t_f.is_finite()) || t_f <= t_i {
            return Err(Error::Config(format!(
                "grid needs finite t_f > t_i, got [{t_i}, {t_f}]"
            )));
        }
        if n_nodes < 3 {
            return Err(Error::Config(format!(
                "grid needs at least 3 nodes, got {n_nodes}"
            )));
        }
        Ok(Self { t_i, t_f, n_nodes })
    }

    pub fn t_i(&self) -> f64 {
        self.t_i
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn duration(&self) -> f64 {
        self.t_f - self.t_i
    }

    pub fn dt(&self) -> f64 {
        (self.t_f - self.t_i) / (self.n_nodes - 1) as f64
    }

    /// Time of node `n`; the last node is `t_f` exactly.
    pub fn time(&self, n: usize) -> f64 {
        if n + 1 == self.n_nodes {
            self.t_f
        } else {
            self.t_i + n as f64 * self.dt()
        }
    }

    /// Trapezoid weight of node `n`.
    pub fn weight(&self, n: usize) -> f64 {
        let dt = self.dt();
        if n == 0 || n + 1 == self.n_nodes {
            0.5 * dt
        } else {
            dt
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|n| self.weight(n)).collect()
    }

    /// Same node count on `[t_i, t_i + duration]`.
    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        Self::new(self.t_i, self.t_i + duration, self.n_nodes)
    }
}

/// A complete physical instance: spectra, couplings, grid and the prepared
/// initial coefficients `C_jk(t_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub spectrum: ModeSpectrum,
    pub couplings: Couplings,
    pub grid: TimeGrid,
    pub initial: Vec<Complex64>,
}

impl Problem {
    pub fn new(
        spectrum: ModeSpectrum,
        couplings: Couplings,
        grid: TimeGrid,
        initial: Vec<Complex64>,
    ) -> Result<Self> {
        if initial.len() != spectrum.n_modes() {
            return Err(Error::Shape(format!(
                "initial state has {} coefficients, spectrum has {} modes",
                initial.len(),
                spectrum.n_modes()
            )));
        }
        Ok(Self {
            spectrum,
            couplings,
            grid,
            initial,
        })
    }

    /// `P_j(t_i)` for the prepared state.
    pub fn initial_outcome_weights(&self) -> Vec<f64> {
        let k_count = self.spectrum.k_count();
        self.initial
            .chunks(k_count)
            .map(|row| row.iter().map(|c| c.norm_sqr()).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(s1: &[f64], s2: &[f64], e1: &[f64], e2: &[f64]) -> ModeSpectrum {
        ModeSpectrum::new(s1.to_vec(), s2.to_vec(), e1.to_vec(), e2.to_vec()).unwrap()
    }

    #[test]
    fn delta_examples() {
        let s = spec(&[1.0, -1.0], &[1.0, -1.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(s.delta(0, 0).unwrap(), 0.0);
        assert_eq!(s.delta(0, 1).unwrap(), 2.0);
        let s = spec(&[0.5], &[0.25], &[0.0], &[0.0]);
        assert_eq!(s.delta(0, 0).unwrap(), 0.25);
    }

    #[test]
    fn delta_out_of_range() {
        let s = spec(&[1.0, -1.0], &[1.0, -1.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert!(matches!(
            s.delta(2, 0),
            Err(Error::IndexOutOfRange { j: 2, .. })
        ));
        assert!(s.combined_energy(0, 5).is_err());
    }

    #[test]
    fn combined_energy_examples() {
        let s = spec(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 2.0], &[0.0, 3.0]);
        assert_eq!(s.combined_energy(0, 0).unwrap(), 1.0);
        assert_eq!(s.combined_energy(1, 1).unwrap(), 5.0);
        let s = spec(&[0.0], &[0.0], &[0.0], &[0.0]);
        assert_eq!(s.combined_energy(0, 0).unwrap(), 0.0);
    }

    #[test]
    fn nondegenerate_examples() {
        let s = spec(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 2.0], &[0.0, 1.0]);
        let hits = s.validate_nondegenerate(1e-9);
        assert_eq!(
            hits,
            vec![EnergyCollision {
                first: (0, 1),
                second: (1, 0)
            }]
        );

        let s = spec(&[0.0], &[0.0], &[1.0], &[0.0]);
        assert!(s.validate_nondegenerate(10.0).is_empty());

        // Exhaustive pair check: E = {0, 10, 1, 11}.
        let s = spec(&[0.0, 0.0], &[0.0, 0.0], &[0.0, 1.0], &[0.0, 10.0]);
        let e = s.energies();
        let mut brute = 0;
        for a in 0..e.len() {
            for b in 0..e.len() {
                if a < b && (e[a] - e[b]).abs() <= 1e-9 {
                    brute += 1;
                }
            }
        }
        assert_eq!(brute, 0);
        assert!(s.validate_nondegenerate(1e-9).is_empty());
    }

    #[test]
    fn zero_tolerance_means_exact_equality() {
        let s = spec(&[0.0, 0.0], &[0.0, 0.0], &[0.1, 0.2], &[0.2, 0.1]);
        // 0.1 + 0.2 and 0.2 + 0.1 are bit-identical in IEEE arithmetic.
        assert_eq!(s.validate_nondegenerate(0.0).len(), 1);
        let s = spec(&[0.0, 0.0], &[0.0, 0.0], &[0.0, 1.0], &[0.0, 1.0 + 1e-15]);
        assert!(s.validate_nondegenerate(0.0).is_empty());
    }

    #[test]
    fn spectrum_validation() {
        assert!(ModeSpectrum::new(vec![], vec![1.0], vec![], vec![0.0]).is_err());
        assert!(ModeSpectrum::new(vec![1.0], vec![1.0], vec![0.0, 1.0], vec![0.0]).is_err());
        assert!(ModeSpectrum::new(vec![f64::NAN], vec![1.0], vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn couplings_reject_nonpositive_b() {
        let k = KernelSpec::constant();
        assert!(Couplings::new(0.0, -1.0, -1.0, 1.0, k.clone()).is_err());
        assert!(Couplings::new(1.0, -1.0, -1.0, 0.0, k.clone()).is_err());
        assert!(Couplings::new(1.0, -1.0, -1.0, 1.0, k).is_ok());
    }

    #[test]
    fn grid_geometry() {
        let g = TimeGrid::new(0.0, 1.0, 5).unwrap();
        assert_eq!(g.dt(), 0.25);
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(4), 1.0);
        assert_eq!(g.weights(), vec![0.125, 0.25, 0.25, 0.25, 0.125]);
        assert!(TimeGrid::new(1.0, 1.0, 5).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 2).is_err());
    }

    #[test]
    fn spectrum_json_is_strict() {
        let ok = r#"{"sigma1":[1],"sigma2":[1],"e1":[0],"e2":[0]}"#;
        assert!(serde_json::from_str::<ModeSpectrum>(ok).is_ok());
        let extra = r#"{"sigma1":[1],"sigma2":[1],"e1":[0],"e2":[0],"x":1}"#;
        assert!(serde_json::from_str::<ModeSpectrum>(extra).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn delta_is_pure_and_antisymmetric(
                s1 in proptest::collection::vec(-10.0f64..10.0, 1..4),
                s2 in proptest::collection::vec(-10.0f64..10.0, 1..4),
            ) {
                let e1 = vec![0.0; s1.len()];
                let e2 = vec![0.0; s2.len()];
                let s = ModeSpectrum::new(s1.clone(), s2.clone(), e1, e2).unwrap();
                for j in 0..s1.len() {
                    for k in 0..s2.len() {
                        let a = s.delta(j, k).unwrap();
                        prop_assert_eq!(a.to_bits(), s.delta(j, k).unwrap().to_bits());
                        prop_assert_eq!(a, -(s2[k] - s1[j]));
                        prop_assert_eq!(s.deltas()[s.mode_index(j, k)], a);
                    }
                }
            }
        }
    }
}
