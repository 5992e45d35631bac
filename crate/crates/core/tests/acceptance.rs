//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any failed.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retrocausal::action::{action_gradient_fd, conjugate_pairing, default_fd_step};
use retrocausal::ensemble::{phase_term_average_check, run_ensemble, run_ensemble_detailed, EnsembleSetup};
use retrocausal::solver::{
    c_tilde_all, ide_residual_constrained, ide_residual_unconstrained, lambda_assembly, solve_bvp, NonlocalContext,
    Variant,
};
use retrocausal::varcalc2t::{run_battery, BatteryOptions};
use retrocausal::{
    Complex64, CoefficientTrajectory, CollapseThresholds, Couplings, HiddenVariableDistribution, KernelSpec,
    ModeSpectrum, SolveConfig, TimeGrid,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_state(rng: &mut ChaCha8Rng, m: usize) -> Vec<Complex64> {
    let v: Vec<Complex64> = (0..m).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / norm).collect()
}

fn random_spectrum(rng: &mut ChaCha8Rng, j: usize, k: usize) -> ModeSpectrum {
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.5..1.5)).collect() };
    let (s1, s2, e1, e2) = (draw(j), draw(k), draw(j), draw(k));
    ModeSpectrum::new(s1, s2, e1, e2).unwrap()
}

fn random_kernel(rng: &mut ChaCha8Rng, duration: f64) -> KernelSpec {
    let tau = rng.random_range(0.05..0.5) * duration;
    if rng.random_bool(0.5) {
        KernelSpec::tophat(tau).unwrap()
    } else {
        KernelSpec::cosine_taper(tau).unwrap()
    }
}

fn max_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn no_interaction_stability() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spectrum = ModeSpectrum::new(vec![1.0, -1.0], vec![1.0, -1.0], vec![0.0; 2], vec![0.0; 2]).unwrap();
    let couplings = Couplings::new(1.0, 0.0, 0.0, 1.0, KernelSpec::cosine_taper(0.5).unwrap()).unwrap();
    let grid = TimeGrid::new(0.0, 5.0, 201).unwrap();
    let initial = random_state(&mut rng, 4);
    let r = solve_bvp(&initial, &spectrum, &couplings, &grid, &SolveConfig::default()).unwrap();
    let deviation = (0..grid.n_nodes())
        .flat_map(|n| r.trajectory.node(n).iter().zip(&initial).map(|(a, b)| (a - b).norm()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    Outcome {
        passed: r.converged && deviation <= 1e-8 && r.interior_residual_norm <= 1e-10 && elapsed < Duration::from_secs(5),
        detail: format!(
            "max deviation {deviation:.2e}, interior residual {:.2e}, {:.2} s",
            r.interior_residual_norm,
            elapsed.as_secs_f64()
        ),
    }
}

fn variational_consistency() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let spectrum = random_spectrum(&mut rng, 2, 2);
        let grid = TimeGrid::new(0.0, rng.random_range(0.5..2.0), 101).unwrap();
        let kernel = random_kernel(&mut rng, grid.duration());
        let couplings = Couplings::new(
            rng.random_range(0.5..2.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            1.0,
            kernel,
        )
        .unwrap();
        let traj = CoefficientTrajectory::from_fn(grid, &spectrum, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
        .unwrap();
        let residual = ide_residual_unconstrained(&traj, &spectrum, &couplings).unwrap();
        let h = default_fd_step(&traj);
        let fd = conjugate_pairing(&action_gradient_fd(&traj, &spectrum, &couplings, h).unwrap());
        let scale = -couplings.b() * grid.dt();
        let m = spectrum.n_modes();
        let interior = m..(grid.n_nodes() - 1) * m;
        let reference = max_norm(&fd[interior.clone()]);
        let err = interior.map(|i| (residual[i] * scale - fd[i]).norm()).fold(0.0, f64::max) / reference;
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    Outcome {
        passed: worst <= 1e-5 && elapsed < Duration::from_secs(60),
        detail: format!("worst relative error {worst:.2e} over 20 trajectories, {:.2} s", elapsed.as_secs_f64()),
    }
}

/// Direct double loop over every node pair.
fn c_tilde_brute(traj: &CoefficientTrajectory, spectrum: &ModeSpectrum, couplings: &Couplings) -> Vec<Complex64> {
    let grid = traj.grid();
    let (jc, kc) = (spectrum.j_count(), spectrum.k_count());
    let m = jc * kc;
    let (s1, s2) = (spectrum.sigma1(), spectrum.sigma2());
    let energy = |j: usize, k: usize| spectrum.e1()[j] + spectrum.e2()[k];
    let mut out = vec![c(0.0, 0.0); grid.n_nodes() * m];
    for n in 0..grid.n_nodes() {
        let t = grid.time(n);
        for j in 0..jc {
            for k in 0..kc {
                let mut acc = c(0.0, 0.0);
                for l in 0..jc {
                    for mm in 0..kc {
                        let coupling = (s1[j] - s2[mm]) * (s1[l] - s2[k]);
                        let mut integral = c(0.0, 0.0);
                        for p in 0..grid.n_nodes() {
                            let tp = grid.time(p);
                            let phase = Complex64::from_polar(1.0, -(energy(j, k) - energy(l, mm)) * (tp - t) / couplings.hbar());
                            integral += traj.at(p, l * kc + mm).conj()
                                * traj.at(p, j * kc + k)
                                * couplings.kernel().eval(t - tp)
                                * grid.weight(p)
                                * phase;
                        }
                        acc += traj.at(n, l * kc + mm) * integral * coupling;
                    }
                }
                out[n * m + j * kc + k] = acc;
            }
        }
    }
    out
}

fn nonlocal_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (j, k) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let spectrum = random_spectrum(&mut rng, j, k);
        let grid = TimeGrid::new(0.0, rng.random_range(1.0..4.0), rng.random_range(16..=256)).unwrap();
        let couplings =
            Couplings::new(1.0, 0.3, 0.7, rng.random_range(0.5..1.5), random_kernel(&mut rng, grid.duration())).unwrap();
        let traj = CoefficientTrajectory::from_fn(grid, &spectrum, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
        .unwrap();
        let banded = c_tilde_all(&traj, &spectrum, &couplings).unwrap();
        let brute = c_tilde_brute(&traj, &spectrum, &couplings);
        let err = banded.iter().zip(&brute).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / max_norm(&brute);
        worst = worst.max(err);
    }

    let spectrum = random_spectrum(&mut rng, 2, 2);
    let grid = TimeGrid::new(0.0, 20.0, 2048).unwrap();
    let couplings = Couplings::new(1.0, 0.0, 1.0, 1.0, KernelSpec::cosine_taper(grid.duration() / 20.0).unwrap()).unwrap();
    let traj = CoefficientTrajectory::from_fn(grid, &spectrum, |_, _| {
        c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
    .unwrap();
    let banded_ctx = NonlocalContext::new(&spectrum, &couplings, &grid);
    let dense_ctx = NonlocalContext::with_halfwidth(&spectrum, &couplings, &grid, grid.n_nodes() - 1);
    let time = |ctx: &NonlocalContext| {
        let start = Instant::now();
        let v = ctx.c_tilde_all(traj.values());
        (start.elapsed(), v)
    };
    let (t_band, v_band) = time(&banded_ctx);
    let (t_dense, v_dense) = time(&dense_ctx);
    let same = v_band.iter().zip(&v_dense).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / max_norm(&v_dense);
    let speedup = t_dense.as_secs_f64() / t_band.as_secs_f64();
    Outcome {
        passed: worst <= 1e-12 && same <= 1e-12 && speedup >= 5.0,
        detail: format!("worst relative error {worst:.2e}, banded speedup {speedup:.1}x at N=2048"),
    }
}

fn steady_state_collapse() -> Outcome {
    let spectrum = ModeSpectrum::new(vec![1.0, -1.0], vec![1.0, -1.0], vec![0.2, 0.9], vec![0.0, 0.4]).unwrap();
    let grid = TimeGrid::new(0.0, 3.0, 61).unwrap();
    let kernels = [KernelSpec::constant(), KernelSpec::tophat(0.4).unwrap(), KernelSpec::cosine_taper(1.1).unwrap()];
    let mut exact = true;
    let mut min_detected = f64::INFINITY;
    for kernel in &kernels {
        for (mu, nu) in [(0.5, 0.5), (-2.0, 3.0), (10.0, -0.1)] {
            let couplings = Couplings::new(1.0, mu, nu, 1.0, kernel.clone()).unwrap();
            for matched in [0, 3] {
                let mut c0 = vec![c(0.0, 0.0); 4];
                c0[matched] = Complex64::from_polar(1.0, 0.7);
                let traj = CoefficientTrajectory::constant(grid, &spectrum, &c0).unwrap();
                let ru = ide_residual_unconstrained(&traj, &spectrum, &couplings).unwrap();
                let rc = ide_residual_constrained(&traj, &spectrum, &couplings).unwrap();
                exact &= ru.iter().chain(&rc).all(|z| *z == c(0.0, 0.0));
            }
            let c0 = [c(0.8, 0.0), c(0.0, 0.6), c(0.0, 0.0), c(0.0, 0.0)];
            let traj = CoefficientTrajectory::constant(grid, &spectrum, &c0).unwrap();
            min_detected = min_detected.min(max_norm(&c_tilde_all(&traj, &spectrum, &couplings).unwrap()));
        }
    }
    Outcome {
        passed: exact && min_detected > 1e-10,
        detail: format!("collapsed residual exactly zero: {exact}, smallest uncollapsed |C~| {min_detected:.2e}"),
    }
}

fn constrained_conservation() -> Outcome {
    let spectrum = ModeSpectrum::new(vec![1.0, -1.0], vec![1.0, -1.0], vec![0.0, 0.3], vec![0.0, 0.5]).unwrap();
    let couplings = Couplings::new(1.0, -1.0, -1.0, 1.0, KernelSpec::cosine_taper(0.3).unwrap()).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 41).unwrap();
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let initial = [c(a, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, a)];
    let config = SolveConfig { variant: Variant::Constrained, residual_tol: 1e-12, ..SolveConfig::default() };
    let r = solve_bvp(&initial, &spectrum, &couplings, &grid, &config).unwrap();
    let drift = (0..grid.n_nodes()).map(|n| (r.trajectory.total_weight(n) - 1.0).abs()).fold(0.0, f64::max);
    // The evolution equation is imposed from node 2 on; node 1 carries the
    // initial-derivative row instead.
    let imag = (2..grid.n_nodes() - 1)
        .map(|n| lambda_assembly(&r.trajectory, &spectrum, &couplings, n).unwrap().im.abs())
        .fold(0.0, f64::max);
    Outcome {
        passed: r.converged && drift <= 1e-6 && imag <= 1e-12,
        detail: format!(
            "converged {} (residual {:.2e}), max |weight - 1| {drift:.2e}, max imaginary multiplier residue {imag:.2e}",
            r.converged, r.final_residual_norm
        ),
    }
}

fn variational_battery() -> Outcome {
    let results = run_battery(BatteryOptions::default()).unwrap();
    let failed: Vec<&str> = results.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    let order = results.iter().find(|c| c.name == "convergence_order").map(|c| c.value).unwrap_or(f64::NAN);
    Outcome {
        passed: failed.is_empty(),
        detail: format!("{} checks, failed {failed:?}, observed order {order:.3}", results.len()),
    }
}

fn small_setup(spectrum: ModeSpectrum, initial: Vec<Complex64>, threads: usize) -> EnsembleSetup {
    EnsembleSetup {
        spectrum,
        couplings: Couplings::new(1.0, 10.0, 1e-3, 1.0, KernelSpec::cosine_taper(1.0).unwrap()).unwrap(),
        t_i: 0.0,
        n_nodes: 61,
        initial,
        solve: SolveConfig::default(),
        thresholds: CollapseThresholds::default(),
        threads,
    }
}

fn born_spectrum() -> ModeSpectrum {
    ModeSpectrum::new(vec![1.0, -1.0], vec![1.0, -1.0], vec![1.0, 2.0], vec![0.0, 0.5]).unwrap()
}

fn product_state(a: [f64; 2]) -> Vec<Complex64> {
    let b = std::f64::consts::FRAC_1_SQRT_2;
    (0..4).map(|q| c(a[q / 2].sqrt() * b, 0.0)).collect()
}

fn ensemble_integrity() -> Outcome {
    let dist = HiddenVariableDistribution::uniform(12.0, 8.0).unwrap();
    let setup = small_setup(born_spectrum(), product_state([0.7, 0.3]), 1);
    let a = run_ensemble(&setup, &dist, 40, 99).unwrap();
    let b = run_ensemble(&setup, &dist, 40, 99).unwrap();
    let threaded = run_ensemble(&EnsembleSetup { threads: 3, ..setup.clone() }, &dist, 40, 99).unwrap();
    let bytes = |r| serde_json::to_vec(r).unwrap();
    let identical = bytes(&a) == bytes(&b) && bytes(&a) == bytes(&threaded);
    let sum: f64 = a.frequencies.iter().sum();
    let sum_ok = a.n_collapsed > 0 && (sum - 1.0).abs() <= 1e-12;

    let single = ModeSpectrum::new(vec![0.5], vec![0.5], vec![0.3], vec![0.1]).unwrap();
    let s = run_ensemble(&small_setup(single, vec![Complex64::from_polar(1.0, 0.3)], 1), &dist, 10, 5).unwrap();
    let single_ok = s.frequencies == [1.0];
    Outcome {
        passed: identical && sum_ok && single_ok,
        detail: format!(
            "byte-identical {identical}, frequencies {:?} (sum {sum}), single-outcome frequencies {:?}",
            a.frequencies, s.frequencies
        ),
    }
}

struct BornRun {
    outcome: Outcome,
    nbc: Vec<f64>,
}

fn born_instrument() -> BornRun {
    let start = Instant::now();
    let mut setup = small_setup(born_spectrum(), product_state([0.7, 0.3]), 1);
    setup.n_nodes = 201;
    let dist = HiddenVariableDistribution::uniform(30.0, 25.0).unwrap();
    let r = run_ensemble(&setup, &dist, 200, 2024).unwrap();
    let elapsed = start.elapsed();
    let nbc = r
        .per_realization
        .iter()
        .filter(|o| o.converged)
        .filter_map(|o| o.nbc_residual)
        .collect();
    let complete = !r.frequencies.is_empty()
        && r.max_abs_deviation.is_some()
        && r.chi_square.is_some()
        && r.chi_square_p_value.is_some()
        && r.drift.as_ref().is_some_and(|d| !d.bounds.is_empty())
        && r.window_ratio.is_some();
    let outcome = Outcome {
        passed: complete && elapsed < Duration::from_secs(30 * 60),
        detail: format!(
            "{:.1} s; collapsed {} / uncollapsed {} / diverged {}; frequencies {:?} vs weights {:?}; max deviation {:?}; \
             chi-square {:?} (p = {:?}); drift bounds {:?}; window ratio {:?}",
            elapsed.as_secs_f64(),
            r.n_collapsed,
            r.n_uncollapsed,
            r.n_diverged,
            r.frequencies,
            r.initial_weights,
            r.max_abs_deviation,
            r.chi_square,
            r.chi_square_p_value,
            r.drift.as_ref().map(|d| &d.bounds),
            r.window_ratio
        ),
    };
    BornRun { outcome, nbc }
}

fn nbc_emergence(mut nbc: Vec<f64>) -> Outcome {
    let tol = SolveConfig::default().residual_tol;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spectrum = ModeSpectrum::new(vec![1.0, -1.0], vec![1.0, -1.0], vec![0.0, 0.3], vec![0.0, 0.5]).unwrap();
    let mut derivative_norms = Vec::new();
    for i in 0..6 {
        let couplings = Couplings::new(
            1.0,
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            1.0,
            KernelSpec::cosine_taper(0.3).unwrap(),
        )
        .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 41 + 10 * i).unwrap();
        let r = solve_bvp(&random_state(&mut rng, 4), &spectrum, &couplings, &grid, &SolveConfig::default()).unwrap();
        if r.converged {
            nbc.push(r.nbc_residual);
            let d = r.trajectory.time_derivative();
            let last = &d[(grid.n_nodes() - 1) * 4..];
            derivative_norms.push(last.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt());
        }
    }
    let worst = nbc.iter().copied().fold(0.0, f64::max);
    Outcome {
        passed: !nbc.is_empty() && worst <= tol,
        detail: format!(
            "{} converged solves, worst NBC residual {worst:.2e}; |dC/dt(t_f)| for the direct solves {:?}",
            nbc.len(),
            derivative_norms.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>()
        ),
    }
}

fn phase_term_symmetry() -> Outcome {
    let dist = HiddenVariableDistribution::uniform(12.0, 8.0).unwrap();
    let setup = small_setup(born_spectrum(), product_state([0.7, 0.3]), 1);
    let out = run_ensemble_detailed(&setup, &dist, 12, 7, true).unwrap();
    let paired: Vec<CoefficientTrajectory> =
        out.trajectories.iter().flat_map(|(_, t)| [t.clone(), t.conjugate()]).collect();
    let avg = phase_term_average_check(&paired, &setup.spectrum, &setup.couplings).unwrap();
    let unpaired = out.report.phase_term_average.unwrap_or(f64::NAN);
    Outcome {
        passed: paired.len() >= 2 && avg.abs() <= 1e-12,
        detail: format!("{} paired trajectories, average {avg:.2e} (unpaired ensemble {unpaired:.3e})", paired.len()),
    }
}

fn main() {
    let mut rows: Vec<(usize, &str, Outcome)> = vec![
        (1, "no-interaction stability", no_interaction_stability()),
        (2, "variational consistency", variational_consistency()),
        (3, "nonlocal term oracle and speedup", nonlocal_oracle()),
        (4, "steady-state collapse consistency", steady_state_collapse()),
        (5, "constrained conservation", constrained_conservation()),
    ];
    let born = born_instrument();
    rows.push((6, "natural boundary condition", nbc_emergence(born.nbc)));
    rows.push((7, "two-time variational battery", variational_battery()));
    rows.push((8, "ensemble determinism and integrity", ensemble_integrity()));
    rows.push((9, "Born-rule instrument", born.outcome));
    rows.push((10, "phase-term symmetry", phase_term_symmetry()));
    rows.sort_by_key(|r| r.0);

    let mut failures = 0;
    for (i, name, o) in &rows {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {i:>2} {tag} {name}: {}", o.detail);
        failures += usize::from(!o.passed);
    }
    println!("{} of {} criteria passed", rows.len() - failures, rows.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
