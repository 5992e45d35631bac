//! Temporal interaction kernel `f(t1 − t2)`.
//!
//! Every family is even, non-negative and bounded by one. The compact families
//! vanish for `|t| ≥ τ`, so on a uniform grid only node pairs within
//! [`KernelSpec::support_halfwidth`] contribute to double integrals.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::model::TimeGrid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `1` for `|t| < τ`, else `0`.
    Tophat,
    /// `cos²(πt / 2τ)` for `|t| < τ`, else `0`.
    CosineTaper,
    /// `1` everywhere (infinite range).
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernel", into = "RawKernel")]
pub struct KernelSpec {
    family: KernelFamily,
    tau: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    family: KernelFamily,
    #[serde(default)]
    tau: Option<f64>,
}

impl TryFrom<RawKernel> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawKernel) -> Result<Self> {
        match (raw.family, raw.tau) {
            (KernelFamily::Constant, _) => Ok(KernelSpec::constant()),
            (family, Some(tau)) => KernelSpec::new(family, tau),
            (family, None) => Err(Error::Config(format!(
                "kernel family {family:?} needs a finite tau"
            ))),
        }
    }
}

impl From<KernelSpec> for RawKernel {
    fn from(k: KernelSpec) -> Self {
        RawKernel {
            family: k.family,
            tau: k.tau.is_finite().then_some(k.tau),
        }
    }
}

impl KernelSpec {
    /// Compact kernel of range `tau`. A zero range would switch the nonlocal
    /// term off entirely; set `ν = 0` for that instead.
    pub fn new(family: KernelFamily, tau: f64) -> Result<Self> {
        if family == KernelFamily::Constant {
            return Ok(Self::constant());
        }
        if tau == 0.0 {
            return Err(Error::DegenerateKernel(format!(
                "{family:?} with tau = 0 vanishes identically; use nu = 0 instead"
            )));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::DegenerateKernel(format!(
                "{family:?} needs a finite tau > 0, got {tau}"
            )));
        }
        Ok(Self { family, tau })
    }

    pub fn constant() -> Self {
        Self {
            family: KernelFamily::Constant,
            tau: f64::INFINITY,
        }
    }

    pub fn tophat(tau: f64) -> Result<Self> {
        Self::new(KernelFamily::Tophat, tau)
    }

    pub fn cosine_taper(tau: f64) -> Result<Self> {
        Self::new(KernelFamily::CosineTaper, tau)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// Range `τ`; infinite for the constant family.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn eval(&self, t: f64) -> f64 {
        let a = t.abs();
        match self.family {
            KernelFamily::Constant => 1.0,
            KernelFamily::Tophat => {
                if a < self.tau {
                    1.0
                } else {
                    0.0
                }
            }
            KernelFamily::CosineTaper => {
                if a < self.tau {
                    let c = (FRAC_PI_2 * a / self.tau).cos();
                    c * c
                } else {
                    0.0
                }
            }
        }
    }

    /// Kernel value at a separation of `d` grid nodes.
    #[inline]
    pub fn eval_offset(&self, d: usize, dt: f64) -> f64 {
        self.eval(d as f64 * dt)
    }

    /// Largest node separation with a possibly nonzero kernel value.
    pub fn support_halfwidth(&self, grid: &TimeGrid) -> usize {
        let full = grid.n_nodes() - 1;
        match self.family {
            KernelFamily::Constant => full,
            _ => {
                let b = (self.tau / grid.dt()).ceil();
                if b >= full as f64 {
                    full
                } else {
                    b as usize
                }
            }
        }
    }

    /// Kernel values for node separations `0..=halfwidth`.
    pub fn offsets(&self, grid: &TimeGrid, halfwidth: usize) -> Vec<f64> {
        let dt = grid.dt();
        (0..=halfwidth).map(|d| self.eval_offset(d, dt)).collect()
    }

    pub fn max_value(&self) -> f64 {
        1.0
    }

    /// `sup |f'(t)|`; infinite for the tophat jump.
    pub fn max_abs_slope(&self) -> f64 {
        match self.family {
            KernelFamily::Constant => 0.0,
            KernelFamily::Tophat => f64::INFINITY,
            KernelFamily::CosineTaper => FRAC_PI_2 / self.tau,
        }
    }

    /// Slow-variation ratio `ħ sup|f'| / (ΔE_min f_max)`.
    pub fn slow_variation_epsilon(&self, hbar: f64, min_energy_gap: f64) -> f64 {
        let slope = self.max_abs_slope();
        if slope == 0.0 {
            0.0
        } else {
            hbar * slope / (min_energy_gap * self.max_value())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn cosine_taper_examples() {
        let k = KernelSpec::cosine_taper(2.0).unwrap();
        assert_eq!(k.eval(0.0), 1.0);
        assert_eq!(k.eval(2.0), 0.0);
        assert_eq!(k.eval(-2.0), 0.0);
        assert_abs_diff_eq!(k.eval(1.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn constant_is_one_everywhere() {
        let k = KernelSpec::constant();
        assert_eq!(k.eval(1e6), 1.0);
        assert_eq!(k.eval(-1e6), 1.0);
        assert!(k.tau().is_infinite());
    }

    #[test]
    fn tophat_edges() {
        let k = KernelSpec::tophat(1.0).unwrap();
        assert_eq!(k.eval(0.999), 1.0);
        assert_eq!(k.eval(1.0), 0.0);
        assert_eq!(k.eval(-1.0), 0.0);
    }

    #[test]
    fn zero_range_is_rejected() {
        assert!(matches!(
            KernelSpec::tophat(0.0),
            Err(Error::DegenerateKernel(_))
        ));
        assert!(matches!(
            KernelSpec::cosine_taper(0.0),
            Err(Error::DegenerateKernel(_))
        ));
        assert!(KernelSpec::cosine_taper(-1.0).is_err());
        assert!(KernelSpec::tophat(f64::INFINITY).is_err());
    }

    #[test]
    fn support_halfwidth_examples() {
        let g = TimeGrid::new(0.0, 24.75, 100).unwrap();
        assert_eq!(g.dt(), 0.25);
        assert_eq!(KernelSpec::tophat(1.0).unwrap().support_halfwidth(&g), 4);
        assert_eq!(KernelSpec::constant().support_halfwidth(&g), 99);
        let g = TimeGrid::new(0.0, 0.5, 3).unwrap();
        assert_eq!(
            KernelSpec::cosine_taper(0.3).unwrap().support_halfwidth(&g),
            2
        );
    }

    #[test]
    fn zero_beyond_halfwidth() {
        let g = TimeGrid::new(0.0, 10.0, 401).unwrap();
        for k in [
            KernelSpec::tophat(0.37).unwrap(),
            KernelSpec::cosine_taper(1.3).unwrap(),
        ] {
            let b = k.support_halfwidth(&g);
            for d in (b + 1)..g.n_nodes() {
                assert_eq!(k.eval_offset(d, g.dt()), 0.0);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let k = KernelSpec::cosine_taper(0.5).unwrap();
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(s, r#"{"family":"cosine_taper","tau":0.5}"#);
        assert_eq!(serde_json::from_str::<KernelSpec>(&s).unwrap(), k);
        let c: KernelSpec = serde_json::from_str(r#"{"family":"constant"}"#).unwrap();
        assert_eq!(c, KernelSpec::constant());
        assert!(serde_json::from_str::<KernelSpec>(r#"{"family":"tophat"}"#).is_err());
        assert!(serde_json::from_str::<KernelSpec>(r#"{"family":"tophat","tau":0}"#).is_err());
    }

    fn families() -> impl Strategy<Value = KernelSpec> {
        (0usize..3, 0.01f64..10.0).prop_map(|(f, tau)| match f {
            0 => KernelSpec::tophat(tau).unwrap(),
            1 => KernelSpec::cosine_taper(tau).unwrap(),
            _ => KernelSpec::constant(),
        })
    }

    proptest! {
        #[test]
        fn even_and_nonnegative(k in families(), t in -100.0f64..100.0) {
            prop_assert_eq!(k.eval(t).to_bits(), k.eval(-t).to_bits());
            prop_assert!(k.eval(t) >= 0.0 && k.eval(t) <= 1.0);
        }

        #[test]
        fn compact_support(k in families(), s in 1.0f64..50.0) {
            if k.family() != KernelFamily::Constant {
                prop_assert_eq!(k.eval(k.tau() * s), 0.0);
                prop_assert_eq!(k.eval(-k.tau() * s), 0.0);
            }
        }

        #[test]
        fn monotone_on_half_line(k in families(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let scale = if k.tau().is_finite() { k.tau() * 1.5 } else { 10.0 };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(k.eval(lo * scale) >= k.eval(hi * scale));
        }
    }
}
