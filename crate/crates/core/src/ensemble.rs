//! Seeded ensembles over the measurement duration and outcome statistics.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::io::fmt_f64;
use crate::model::{Couplings, ModeSpectrum, TimeGrid};
use crate::solver::{solve_bvp, SolveConfig};
use crate::trajectory::{CoefficientTrajectory, CollapseThresholds};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HiddenLaw {
    #[default]
    Uniform,
}

/// Law of the hidden variable: the duration `T = t_f − t_i`, optionally with
/// a per-mode initial phase jitter drawn uniformly from `[−a, a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenVariableDistribution {
    pub t_center: f64,
    pub t_halfwidth: f64,
    #[serde(default)]
    pub law: HiddenLaw,
    #[serde(default)]
    pub initial_phase_jitter: f64,
}

impl HiddenVariableDistribution {
    pub fn uniform(t_center: f64, t_halfwidth: f64) -> Result<Self> {
        let d = Self {
            t_center,
            t_halfwidth,
            law: HiddenLaw::Uniform,
            initial_phase_jitter: 0.0,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_center.is_finite() && self.t_halfwidth.is_finite() && self.t_halfwidth >= 0.0) {
            return Err(Error::Config("duration window must be finite with t_halfwidth >= 0".into()));
        }
        if self.t_center - self.t_halfwidth <= 0.0 {
            return Err(Error::Config(format!(
                "t_center - t_halfwidth must be > 0, got {}",
                self.t_center - self.t_halfwidth
            )));
        }
        if !(self.initial_phase_jitter >= 0.0 && self.initial_phase_jitter.is_finite()) {
            return Err(Error::Config("initial_phase_jitter must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// `2 T_halfwidth ΔE_min / ħ`.
    pub fn window_ratio(&self, spectrum: &ModeSpectrum, hbar: f64) -> Option<f64> {
        spectrum.min_energy_gap().map(|gap| 2.0 * self.t_halfwidth * gap / hbar)
    }

    fn draw(&self, rng: &mut ChaCha8Rng, n_modes: usize) -> (f64, Vec<f64>) {
        let t = if self.t_halfwidth > 0.0 {
            rng.random_range(self.t_center - self.t_halfwidth..=self.t_center + self.t_halfwidth)
        } else {
            self.t_center
        };
        let phases = if self.initial_phase_jitter > 0.0 {
            let a = self.initial_phase_jitter;
            (0..n_modes).map(|_| rng.random_range(-a..=a)).collect()
        } else {
            vec![0.0; n_modes]
        };
        (t, phases)
    }
}

/// Everything shared by the realizations of one ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleSetup {
    pub spectrum: ModeSpectrum,
    pub couplings: Couplings,
    pub t_i: f64,
    pub n_nodes: usize,
    pub initial: Vec<Complex64>,
    pub solve: SolveConfig,
    pub thresholds: CollapseThresholds,
    /// Worker threads for the realization pool; results do not depend on it.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationOutcome {
    pub index: usize,
    pub duration: f64,
    pub converged: bool,
    pub collapsed: bool,
    pub dominant_j: Option<usize>,
    pub purity: Option<f64>,
    pub agreement_residual: Option<f64>,
    pub final_weight: Option<f64>,
    pub iterations: usize,
    pub final_residual_norm: Option<f64>,
    pub nbc_residual: Option<f64>,
    /// `2T ∫ |p_j|` for each outcome class, converged realizations only.
    pub drift_bounds: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    /// Realization-averaged `p_j` per outcome class, on the shared node index.
    pub mean_p: Vec<Vec<f64>>,
    /// `2 T̄ ∫ |p̄_j| dt` with the mean duration `T̄`.
    pub bounds: Vec<f64>,
    pub mean_duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub n_realizations: usize,
    pub seed: u64,
    pub per_realization: Vec<RealizationOutcome>,
    pub counts: Vec<usize>,
    /// Outcome frequencies over collapsed, converged realizations; empty when
    /// none collapsed.
    pub frequencies: Vec<f64>,
    pub initial_weights: Vec<f64>,
    pub max_abs_deviation: Option<f64>,
    pub chi_square: Option<f64>,
    pub chi_square_p_value: Option<f64>,
    pub n_collapsed: usize,
    pub n_uncollapsed: usize,
    pub n_diverged: usize,
    pub window_ratio: Option<f64>,
    pub slow_variation_epsilon: Option<f64>,
    pub drift: Option<DriftSummary>,
    pub phase_term_average: Option<f64>,
}

impl EnsembleReport {
    pub fn converged_fraction(&self) -> f64 {
        (self.n_realizations - self.n_diverged) as f64 / self.n_realizations as f64
    }

    /// `j, count, frequency, initial_weight` per outcome class.
    pub fn write_frequency_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["j", "count", "frequency", "initial_weight"])?;
        for (j, w_j) in self.initial_weights.iter().enumerate() {
            let freq = self.frequencies.get(j).map_or(String::new(), |f| fmt_f64(*f));
            w.write_record([j.to_string(), self.counts[j].to_string(), freq, fmt_f64(*w_j)])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct EnsembleOutput {
    pub report: EnsembleReport,
    /// Converged trajectories by realization index, when retained.
    pub trajectories: Vec<(usize, CoefficientTrajectory)>,
}

pub fn run_ensemble(
    setup: &EnsembleSetup,
    distribution: &HiddenVariableDistribution,
    n: usize,
    seed: u64,
) -> Result<EnsembleReport> {
    Ok(run_ensemble_detailed(setup, distribution, n, seed, false)?.report)
}

struct Realization {
    outcome: RealizationOutcome,
    trajectory: Option<CoefficientTrajectory>,
    p: Option<Vec<Vec<f64>>>,
}

fn realize(setup: &EnsembleSetup, index: usize, duration: f64, phases: &[f64]) -> Result<Realization> {
    let grid = TimeGrid::new(setup.t_i, setup.t_i + duration, setup.n_nodes)?;
    let initial: Vec<Complex64> = setup
        .initial
        .iter()
        .zip(phases)
        .map(|(c, p)| c * Complex64::from_polar(1.0, *p))
        .collect();
    let mut outcome = RealizationOutcome {
        index,
        duration,
        converged: false,
        collapsed: false,
        dominant_j: None,
        purity: None,
        agreement_residual: None,
        final_weight: None,
        iterations: 0,
        final_residual_norm: None,
        nbc_residual: None,
        drift_bounds: Vec::new(),
        error: None,
    };
    let result = match solve_bvp(&initial, &setup.spectrum, &setup.couplings, &grid, &setup.solve) {
        Ok(r) => r,
        Err(e @ (Error::NumericalBlowup { .. } | Error::Singular(_))) => {
            outcome.error = Some(e.to_string());
            return Ok(Realization { outcome, trajectory: None, p: None });
        }
        Err(e) => return Err(e),
    };
    outcome.converged = result.converged;
    outcome.iterations = result.iterations;
    outcome.final_residual_norm = Some(result.final_residual_norm);
    outcome.nbc_residual = Some(result.nbc_residual);
    if !result.converged {
        return Ok(Realization { outcome, trajectory: None, p: None });
    }
    match result.trajectory.collapse_metrics(&setup.spectrum) {
        Ok(m) => {
            outcome.collapsed = m.is_collapsed(&setup.thresholds);
            outcome.dominant_j = Some(m.dominant_j);
            outcome.purity = Some(m.purity);
            outcome.agreement_residual = Some(m.agreement_residual);
            outcome.final_weight = Some(m.final_weight);
        }
        Err(Error::DegenerateState { weight, .. }) => outcome.final_weight = Some(weight),
        Err(e) => return Err(e),
    }
    let probe = drift_probe(&result.trajectory, &setup.spectrum, &setup.couplings)?;
    outcome.drift_bounds = probe.bounds;
    Ok(Realization { outcome, trajectory: Some(result.trajectory), p: Some(probe.p) })
}

pub fn run_ensemble_detailed(
    setup: &EnsembleSetup,
    distribution: &HiddenVariableDistribution,
    n: usize,
    seed: u64,
    retain_trajectories: bool,
) -> Result<EnsembleOutput> {
    if n == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one realization".into()));
    }
    distribution.validate()?;
    setup.solve.validate()?;
    let m = setup.spectrum.n_modes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(f64, Vec<f64>)> = (0..n).map(|_| distribution.draw(&mut rng, m)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(setup.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let realizations: Vec<Realization> = pool.install(|| {
        draws
            .par_iter()
            .enumerate()
            .map(|(i, (t, phases))| realize(setup, i, *t, phases))
            .collect::<Result<Vec<_>>>()
    })?;

    let j_count = setup.spectrum.j_count();
    let mut counts = vec![0usize; j_count];
    let (mut n_collapsed, mut n_uncollapsed, mut n_diverged) = (0, 0, 0);
    for r in &realizations {
        let o = &r.outcome;
        if !o.converged {
            n_diverged += 1;
        } else if o.collapsed {
            n_collapsed += 1;
            counts[o.dominant_j.expect("collapsed realizations have an outcome")] += 1;
        } else {
            n_uncollapsed += 1;
        }
    }
    if n_diverged == n {
        let detail = realizations
            .iter()
            .map(|r| r.outcome.error.clone().unwrap_or_else(|| "not converged".into()))
            .next()
            .unwrap_or_default();
        return Err(Error::EnsembleFailed { n, detail });
    }

    let traj0 = CoefficientTrajectory::constant(TimeGrid::new(0.0, 1.0, 3)?, &setup.spectrum, &setup.initial)?;
    let initial_weights = traj0.outcome_weights(0);
    let frequencies: Vec<f64> = if n_collapsed > 0 {
        counts.iter().map(|c| *c as f64 / n_collapsed as f64).collect()
    } else {
        Vec::new()
    };
    let (max_abs_deviation, chi_square, chi_square_p_value) = if n_collapsed > 0 {
        let dev = frequencies
            .iter()
            .zip(&initial_weights)
            .map(|(f, w)| (f - w).abs())
            .fold(0.0, f64::max);
        let chi = chi_square(&counts, &initial_weights);
        let p = (j_count >= 2).then(|| chi_square_p_value(chi, j_count - 1)).flatten();
        (Some(dev), Some(chi), p)
    } else {
        (None, None, None)
    };

    let converged: Vec<&Realization> = realizations.iter().filter(|r| r.p.is_some()).collect();
    let drift = (!converged.is_empty()).then(|| {
        let k = converged.len() as f64;
        let n_nodes = setup.n_nodes;
        let mut mean_p = vec![vec![0.0; n_nodes]; j_count];
        for r in &converged {
            for (acc, p) in mean_p.iter_mut().zip(r.p.as_ref().expect("filtered")) {
                for (a, v) in acc.iter_mut().zip(p) {
                    *a += v / k;
                }
            }
        }
        let mean_duration = converged.iter().map(|r| r.outcome.duration).sum::<f64>() / k;
        let grid = TimeGrid::new(0.0, mean_duration, n_nodes).expect("positive mean duration");
        let bounds = mean_p.iter().map(|p| drift_bound(p, &grid)).collect();
        DriftSummary { mean_p, bounds, mean_duration }
    });
    let trajs: Vec<&CoefficientTrajectory> = converged.iter().filter_map(|r| r.trajectory.as_ref()).collect();
    let phase_term_average = (!trajs.is_empty())
        .then(|| phase_term_average(&trajs, &setup.spectrum, &setup.couplings))
        .transpose()?;

    let slow_variation_epsilon = setup
        .spectrum
        .min_energy_gap()
        .map(|gap| setup.couplings.kernel().slow_variation_epsilon(setup.couplings.hbar(), gap));
    let report = EnsembleReport {
        n_realizations: n,
        seed,
        counts,
        frequencies,
        initial_weights,
        max_abs_deviation,
        chi_square,
        chi_square_p_value,
        n_collapsed,
        n_uncollapsed,
        n_diverged,
        window_ratio: distribution.window_ratio(&setup.spectrum, setup.couplings.hbar()),
        slow_variation_epsilon,
        drift,
        phase_term_average,
        per_realization: Vec::new(),
    };
    let mut report = report;
    let mut trajectories = Vec::new();
    for r in realizations {
        if retain_trajectories {
            if let Some(t) = r.trajectory {
                trajectories.push((r.outcome.index, t));
            }
        }
        report.per_realization.push(r.outcome);
    }
    Ok(EnsembleOutput { report, trajectories })
}

/// Pearson statistic `Σ_j (n_j − n w_j)² / (n w_j)`. Classes with zero
/// expected weight contribute nothing when empty and make the statistic
/// infinite otherwise.
pub fn chi_square(counts: &[usize], weights: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    let n = n as f64;
    counts
        .iter()
        .zip(weights)
        .map(|(c, w)| {
            let expected = n * w;
            let diff = *c as f64 - expected;
            if expected > 0.0 {
                diff * diff / expected
            } else if *c == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// Upper-tail probability of the chi-square distribution.
pub fn chi_square_p_value(statistic: f64, dof: usize) -> Option<f64> {
    if statistic.is_infinite() {
        return Some(0.0);
    }
    let dist = ChiSquared::new(dof as f64).ok()?;
    Some(dist.sf(statistic))
}

/// `⟨⟨|C_q|²⟩⟩(t_n) = ∫ f(t_n − t') |C_q(t')|² dt'`, trapezoid over the kernel band.
pub fn moving_average(traj: &CoefficientTrajectory, couplings: &Couplings, node: usize, mode: usize) -> Result<f64> {
    crate::solver::nonlocal::check_node(traj, node)?;
    if mode >= traj.n_modes() {
        return Err(Error::InvalidArgument(format!("mode {mode} out of range for {} modes", traj.n_modes())));
    }
    Ok(moving_average_unchecked(traj, couplings, node, mode))
}

fn moving_average_unchecked(traj: &CoefficientTrajectory, couplings: &Couplings, node: usize, mode: usize) -> f64 {
    let grid = traj.grid();
    let kernel = couplings.kernel();
    let hw = kernel.support_halfwidth(grid);
    let lo = node.saturating_sub(hw);
    let hi = (node + hw).min(grid.n_nodes() - 1);
    (lo..=hi)
        .map(|p| grid.weight(p) * kernel.eval_offset(node.abs_diff(p), grid.dt()) * traj.at(p, mode).norm_sqr())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftProbe {
    /// `p_j(t_n)` per outcome class `j`.
    pub p: Vec<Vec<f64>>,
    /// `2T ∫ |p_j| dt` per outcome class.
    pub bounds: Vec<f64>,
}

fn drift_bound(p: &[f64], grid: &TimeGrid) -> f64 {
    let integral: f64 = p.iter().enumerate().map(|(n, v)| grid.weight(n) * v.abs()).sum();
    2.0 * grid.duration() * integral
}

/// Drift integrand per outcome class,
/// `p_j = Σ_k |Ċ_jk|² + (μ/B) Δ²_jk |C_jk|² + (2ν/B) Δ²_jk ⟨⟨|C_jk|²⟩⟩ |C_jk|²`,
/// and its bound `2T ∫ |p_j|`.
pub fn drift_probe(traj: &CoefficientTrajectory, spectrum: &ModeSpectrum, couplings: &Couplings) -> Result<DriftProbe> {
    traj.check_spectrum(spectrum)?;
    let deriv = traj.time_derivative();
    let d2: Vec<f64> = spectrum.deltas().iter().map(|d| d * d).collect();
    let m = traj.n_modes();
    let (jc, kc) = (spectrum.j_count(), spectrum.k_count());
    let local = couplings.mu() / couplings.b();
    let nonlocal = couplings.nonlocal_coefficient();
    let mut p = vec![vec![0.0; traj.n_nodes()]; jc];
    for n in 0..traj.n_nodes() {
        for j in 0..jc {
            let mut acc = 0.0;
            for k in 0..kc {
                let q = j * kc + k;
                let w = traj.at(n, q).norm_sqr();
                acc += deriv[n * m + q].norm_sqr() + local * d2[q] * w;
                if nonlocal != 0.0 && d2[q] != 0.0 {
                    acc += nonlocal * d2[q] * moving_average_unchecked(traj, couplings, n, q) * w;
                }
            }
            p[j][n] = acc;
        }
    }
    let bounds = p.iter().map(|pj| drift_bound(pj, traj.grid())).collect();
    Ok(DriftProbe { p, bounds })
}

/// Ensemble-and-time average of `Σ Re{(2i/ħ) E C* Ċ}`, each realization
/// averaged over its own duration.
pub fn phase_term_average(trajectories: &[&CoefficientTrajectory], spectrum: &ModeSpectrum, couplings: &Couplings) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("phase-term average needs at least one trajectory".into()));
    }
    let energies = spectrum.energies();
    let mut total = 0.0;
    for traj in trajectories {
        traj.check_spectrum(spectrum)?;
        let deriv = traj.time_derivative();
        let m = traj.n_modes();
        let grid = traj.grid();
        let mut integral = 0.0;
        for n in 0..traj.n_nodes() {
            let mut s = 0.0;
            for q in 0..m {
                s += energies[q] * (traj.at(n, q).conj() * deriv[n * m + q]).im;
            }
            integral += grid.weight(n) * s;
        }
        total += -2.0 / couplings.hbar() * integral / grid.duration();
    }
    Ok(total / trajectories.len() as f64)
}

/// [`phase_term_average`] over owned trajectories.
pub fn phase_term_average_check(trajectories: &[CoefficientTrajectory], spectrum: &ModeSpectrum, couplings: &Couplings) -> Result<f64> {
    let refs: Vec<&CoefficientTrajectory> = trajectories.iter().collect();
    phase_term_average(&refs, spectrum, couplings)
}
