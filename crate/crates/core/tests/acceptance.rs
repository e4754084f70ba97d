//! Acceptance suite: one test per criterion, each printing a single PASS/FAIL line with
//! the measured quantity and its wall time.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use stefan_homog::cell::{cell_report, effective_tensor, psi0_value, solve_corrector, DissipationPotential};
use stefan_homog::config::ProblemSpec;
use stefan_homog::convex::ConvexPotential;
use stefan_homog::diagnostics::{contraction_test, convergence_study, two_scale_pairing, ConvergenceTable};
use stefan_homog::fields::{ergodicity_defect, Mode, MatrixField, OscillatoryField};
use stefan_homog::grid::{CellGrid, DomainGrid, GridField};
use stefan_homog::harness::{run, Command};
use stefan_homog::solver::{solve_evolution, EvolutionProblem, Stepper};

const TAU: f64 = 2.0 * std::f64::consts::PI;

fn config(name: &str) -> ProblemSpec {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    ProblemSpec::load(&path).unwrap()
}

fn report(id: u32, title: &str, passed: bool, detail: String, start: Instant) {
    println!(
        "criterion {id:>2} [{}] {title}: {detail} ({:.3} s)",
        if passed { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    assert!(passed, "criterion {id} failed: {detail}");
}

fn harmonic() -> MatrixField {
    MatrixField::isotropic(OscillatoryField::sinusoid(1, 2.0, 1.0, 0, 1.0))
}

#[test]
fn criterion_01_effective_coefficient_1d() {
    let start = Instant::now();
    let grid = CellGrid::new(1, 1024).unwrap();
    let k = harmonic();
    let set = solve_corrector(&grid, &k, 1e-12).unwrap();
    let k0 = effective_tensor(&grid, &k, &set).unwrap()[0];
    let err = (k0 - 3f64.sqrt()).abs();
    let secs = start.elapsed().as_secs_f64();
    report(1, "K0 of 2+sin(2πz) at M=1024", err <= 1e-6 && secs < 1.0, format!("K0 = {k0}, |K0 - √3| = {err:.2e}"), start);
}

#[test]
fn criterion_02_laminate_2d() {
    let start = Instant::now();
    let f = OscillatoryField::try_new(2, 2.0, vec![Mode::sine(1.0, vec![TAU, 0.0])]).unwrap();
    let k = MatrixField::isotropic(f);
    let r = cell_report(&k, 256, 1, 1 << 20, 1e-12).unwrap();
    let target = [3f64.sqrt(), 0.0, 0.0, 2.0];
    let err = r.k0.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    report(2, "laminate K0 = diag(√3, 2) at M=256²", err <= 1e-4 && secs < 30.0, format!("K0 = {:?}, max error {err:.2e}", r.k0), start);
}

#[test]
fn criterion_03_constant_coefficient_identity() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (n, k) in [(1usize, vec![3.7]), (2, vec![3.0, 0.5, 0.5, 7.0]), (2, vec![1.0, -0.9, -0.9, 1.0])] {
        let grid = CellGrid::new(n, 24).unwrap();
        let field = MatrixField::constant(n, &k);
        let set = solve_corrector(&grid, &field, 1e-12).unwrap();
        let k0 = effective_tensor(&grid, &field, &set).unwrap();
        let corr = set.correctors.iter().flat_map(|w| w.values.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        let kerr = k0.iter().zip(&k).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(corr).max(kerr);
    }
    report(3, "constant K gives K0 = K and zero correctors", worst <= 1e-10, format!("max deviation {worst:.2e}"), start);
}

#[test]
fn criterion_04_psi0_quadratic() {
    let start = Instant::now();
    let grid = CellGrid::new(1, 1024).unwrap();
    let k = harmonic();
    let set = solve_corrector(&grid, &k, 1e-12).unwrap();
    let k0 = effective_tensor(&grid, &k, &set).unwrap()[0];
    let psi = DissipationPotential::quadratic(k);
    let mut worst: f64 = 0.0;
    for eta in [0.5, 1.0, -1.0, 2.0, -0.3] {
        let v = psi0_value(&grid, &psi, 0.0, &[eta], 1e-10).unwrap();
        worst = worst.max((2.0 * v - k0 * eta * eta).abs());
    }
    report(4, "2ψ0(η) = K0η·η on 5 samples", worst <= 1e-6, format!("max defect {worst:.2e}"), start);
}

#[test]
fn criterion_05_convex_toolkit() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for p in [ConvexPotential::quadratic(1.0).unwrap(), ConvexPotential::quadratic(2.5).unwrap(), ConvexPotential::stefan(1.0).unwrap()] {
        let local = p.with_multiplier(1.0);
        for i in 0..100 {
            let u = -5.0 + 10.0 * i as f64 / 99.0;
            let sub = local.subdifferential(u);
            for w in [sub.lo, sub.mid(), sub.hi] {
                worst = worst.max((local.value(u) + local.conjugate(w) - u * w).abs());
            }
        }
    }
    let latent = 1.0;
    let stefan = ConvexPotential::stefan(latent).unwrap();
    let closed = |w: f64| {
        if w < 0.0 {
            0.5 * w * w
        } else if w <= latent {
            0.0
        } else {
            0.5 * (w - latent) * (w - latent)
        }
    };
    let mut conj: f64 = 0.0;
    for i in 0..100 {
        let w = -5.0 + 10.0 * i as f64 / 99.0;
        conj = conj.max((stefan.with_multiplier(1.0).conjugate(w) - closed(w)).abs());
    }
    report(
        5,
        "Fenchel identity and Stefan conjugate",
        worst <= 1e-8 && conj <= 1e-8,
        format!("Fenchel defect {worst:.2e}, conjugate error {conj:.2e}"),
        start,
    );
}

#[test]
fn criterion_06_heat_decay() {
    let start = Instant::now();
    let spec = config("heat_1d.json");
    let problem = EvolutionProblem::homogenized(&spec, &stefan_homog::cell::build_effective_model(&spec).unwrap(), 128).unwrap();
    let tr = solve_evolution(&problem).unwrap();
    let t = tr.last().time;
    let amp = (-std::f64::consts::PI.powi(2) * t).exp();
    let u = &tr.last().u;
    let err = u
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| (v - amp * (std::f64::consts::PI * u.lattice.coords(k)[0]).sin()).abs())
        .fold(0.0, f64::max);
    report(6, "heat decay e^{-π²T} at T=0.1, N=128", err <= 2e-2, format!("max nodal error {err:.2e}, amplitude {amp:.5}"), start);
}

/// The criterion-7 study, computed once and shared by criteria 7, 8 and 12.
fn stefan_study() -> &'static (ConvergenceTable, f64) {
    static STUDY: OnceLock<(ConvergenceTable, f64)> = OnceLock::new();
    STUDY.get_or_init(|| {
        let start = Instant::now();
        let spec = config("stefan_1d.json");
        let (table, _) = convergence_study(&spec, &spec.eps, None).unwrap();
        (table, start.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_07_homogenization_convergence() {
    let start = Instant::now();
    let (table, secs) = stefan_study();
    let errs: Vec<f64> = table.rows.iter().map(|r| r.err_l1).collect();
    let eps: Vec<f64> = table.rows.iter().map(|r| r.eps).collect();
    let monotone = errs.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    let ratio = errs[0] / errs[errs.len() - 1];
    let resolved = table.rows.iter().all(|r| (r.nodes as f64 - 16.0 / r.eps).abs() < 0.5);
    report(
        7,
        "L¹ error against the homogenized solution",
        eps == [0.125, 0.0625, 0.03125, 0.015625] && resolved && monotone && ratio >= 4.0 && *secs < 300.0,
        format!("errors {errs:?}, first/final = {ratio:.2}, study {secs:.2} s"),
        start,
    );
}

#[test]
fn criterion_08_uniform_energy_bounds() {
    let start = Instant::now();
    let (table, _) = stefan_study();
    let sup: Vec<f64> = table.rows.iter().map(|r| r.sup_l2_w).collect();
    let hi = sup.iter().copied().fold(0.0, f64::max);
    let lo = sup.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = table.rows.iter().filter_map(|r| r.apriori_min_slack).fold(f64::INFINITY, f64::min);
    let every_row = table.rows.iter().all(|r| r.apriori_min_slack.is_some());
    report(
        8,
        "sup‖w‖ within a 3× band and a-priori slack ≥ -1e-6",
        hi <= 3.0 * lo && every_row && slack >= -1e-6,
        format!("sup‖w‖ ∈ [{lo:.4}, {hi:.4}], min slack {slack:.4e}"),
        start,
    );
}

#[test]
fn criterion_09_contraction() {
    let start = Instant::now();
    let spec = config("stefan_1d.json");
    let model = stefan_homog::cell::build_effective_model(&spec).unwrap();
    let problem = EvolutionProblem::homogenized(&spec, &model, 256).unwrap();
    let w0 = Stepper::new(&problem).unwrap().initial_enthalpy().unwrap();
    let bump = problem.grid.sample(|x| (std::f64::consts::PI * x[0]).sin());
    let w1 = GridField { lattice: w0.lattice, values: w0.values.iter().zip(&bump.values).map(|(a, b)| a + 0.2 * b).collect() };
    let same = contraction_test(&problem, &w0, &w0, 1e-8).unwrap();
    let pert = contraction_test(&problem, &w0, &w1, 1e-8).unwrap();
    let zero = same.energies.iter().all(|e| *e == 0.0);
    report(
        9,
        "H⁻¹ energy nonincreasing, zero for identical data",
        zero && pert.nonincreasing,
        format!("E(0) = {:.4e}, E(T) = {:.4e}, largest step increase {:.2e}", pert.energies[0], pert.energies.last().unwrap(), pert.max_increase),
        start,
    );
}

#[test]
fn criterion_10_two_scale_pairing() {
    let start = Instant::now();
    let eps = 1.0 / 64.0;
    let grid = DomainGrid::new(1, 4096).unwrap();
    let v = grid.sample(|x| (TAU * x[0] / eps).sin());
    let sin = OscillatoryField::try_new(1, 0.0, vec![Mode::sine(1.0, vec![TAU])]).unwrap();
    let cos = OscillatoryField::try_new(1, 0.0, vec![Mode::cosine(1.0, vec![TAU])]).unwrap();
    let a = two_scale_pairing(&v, &sin, |_| 1.0, eps).unwrap();
    let b = two_scale_pairing(&v, &cos, |_| 1.0, eps).unwrap();
    report(10, "pairing of sin(2πx/ε) at ε=1/64", (a - 0.5).abs() <= 1e-2 && b.abs() <= 1e-2, format!("against sin: {a:.6}, against cos: {b:.2e}"), start);
}

#[test]
fn criterion_11_ergodicity_defect() {
    let start = Instant::now();
    let f = OscillatoryField::try_new(1, 0.0, vec![Mode::sine(1.0, vec![1.0])]).unwrap();
    let d = ergodicity_defect(&f, std::f64::consts::FRAC_PI_2, 1000.0).unwrap();
    let target = 2.0 / std::f64::consts::PI.powi(2);
    let spec = config("quasi_periodic_1d.json");
    let stefan_homog::config::FluxSpec::Linear { matrix, .. } = &spec.flux else { panic!("linear flux expected") };
    let q = &matrix.entries[0][0];
    let seq: Vec<f64> = [10.0, 100.0, 1000.0].iter().map(|&t| ergodicity_defect(q, t, 1000.0).unwrap()).collect();
    let decreasing = seq.windows(2).all(|w| w[1] < w[0]);
    report(
        11,
        "ergodicity defect closed form and decay",
        (d - target).abs() <= 1e-3 && decreasing,
        format!("defect(π/2) = {d:.6} vs 2/π² = {target:.6}; quasi-periodic {seq:?}"),
        start,
    );
}

#[test]
fn criterion_12_determinism() {
    let start = Instant::now();
    let spec = config("stefan_1d.json");
    let dir = tempfile::tempdir().unwrap();
    let cmd = Command::Converge { eps: None };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&cmd, &spec, &a, None).unwrap();
    // A different task schedule: the second run is confined to one worker thread.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| run(&cmd, &spec, &b, None)).unwrap();
    let same = |f: &str| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
    let csv = same("convergence.csv");
    let json = same("convergence.json") && same("report.json");
    report(12, "rerun of criterion 7 is byte-identical", csv && json, format!("csv identical: {csv}, json identical: {json}"), start);
}
