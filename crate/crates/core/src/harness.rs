//! Experiment driver behind the CLI: dispatches a subcommand on a parsed problem, writes its
//! outputs into a run directory and returns a report.
//!
//! Every JSON output carries the config hash. Reports contain no wall-clock data so that
//! identical inputs give byte-identical files; timings go to `timings.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::cell::{build_effective_model, cell_report, is_unit_periodic, psi0_solve, DissipationPotential, EffectiveFlux};
use crate::config::{FluxSpec, ProblemSpec};
use crate::diagnostics::{apriori_check, contraction_test, convergence_study, write_table_csv, AprioriConstants};
use crate::fields::{ergodicity_defect, ergodicity_defect_exact, mean_value, MeanMode, OscillatoryField};
use crate::grid::{io, CellGrid, GridField};
use crate::solver::{run_problem, uses_kirchhoff, EvolutionProblem, Run, Stepper};
use crate::validation::validate_hypotheses;
use crate::{Error, Result};

/// Which problem `solve` runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpsChoice {
    Homogenized,
    Value(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Validate,
    Mean,
    Cell,
    Psi0,
    Solve { eps: Option<EpsChoice> },
    Converge { eps: Option<Vec<f64>> },
    Unique,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Mean => "mean",
            Command::Cell => "cell",
            Command::Psi0 => "psi0",
            Command::Solve { .. } => "solve",
            Command::Converge { .. } => "converge",
            Command::Unique => "unique",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub config_hash: String,
    pub passed: bool,
    pub checks: BTreeMap<String, bool>,
    pub results: Value,
    /// Files written into the run directory, relative to it.
    pub files: Vec<String>,
}

/// Writes JSON with sorted keys and a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let value = serde_json::to_value(value)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Collects outputs of one run directory.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        self.files.push(name.to_string());
        write_json(&self.dir.join(name), value)
    }

    fn field(&mut self, stem: &str, field: &GridField) -> Result<()> {
        let mut b = self.create(&format!("{stem}.bin"))?;
        io::write_binary(field, &mut b)?;
        b.flush()?;
        let mut c = self.create(&format!("{stem}.csv"))?;
        io::write_csv(field, &mut c)?;
        c.flush()?;
        Ok(())
    }
}

/// Runs `command` and writes `report.json` and `timings.json` into `out`.
pub fn run(command: &Command, spec: &ProblemSpec, out: &Path, grid: Option<usize>) -> Result<RunReport> {
    fs::create_dir_all(out)?;
    let hash = spec.hash();
    let mut outputs = Outputs { dir: out.to_path_buf(), files: Vec::new() };
    let mut checks = BTreeMap::new();
    let start = Instant::now();
    let results = match command {
        Command::Validate => run_validate(spec, &hash, &mut outputs, &mut checks)?,
        Command::Mean => run_mean(spec, &hash, &mut outputs, &mut checks)?,
        Command::Cell => run_cell(spec, &hash, &mut outputs, &mut checks)?,
        Command::Psi0 => run_psi0(spec, &hash, &mut outputs, &mut checks)?,
        Command::Solve { eps } => run_solve(spec, *eps, grid, &mut outputs, &mut checks)?,
        Command::Converge { eps } => run_converge(spec, eps.as_deref(), grid, &hash, &mut outputs, &mut checks)?,
        Command::Unique => run_unique(spec, grid, &mut outputs, &mut checks)?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    write_json(&out.join("timings.json"), &json!({ "command": command.name(), "config_hash": hash, "seconds": elapsed }))?;
    outputs.files.push("timings.json".into());
    let mut files = outputs.files;
    files.push("report.json".into());
    let report = RunReport {
        command: command.name().into(),
        config_hash: hash,
        passed: checks.values().all(|v| *v),
        checks,
        results,
        files,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// Writes the machine-readable failure record of a run that raised an error.
pub fn write_failure(out: &Path, command: &str, config_hash: Option<&str>, error: &str) -> Result<()> {
    fs::create_dir_all(out)?;
    write_json(&out.join("failure.json"), &json!({ "command": command, "config_hash": config_hash, "error": error }))
}

fn run_validate(spec: &ProblemSpec, hash: &str, out: &mut Outputs, checks: &mut BTreeMap<String, bool>) -> Result<Value> {
    let report = validate_hypotheses(spec);
    for c in &report.checks {
        checks.insert(c.name.clone(), c.passed);
    }
    out.json("validation.json", &json!({ "config_hash": hash, "validation": report }))?;
    Ok(json!({ "validation": "validation.json" }))
}

/// Every oscillatory field of a problem with its location in the config.
pub fn named_fields(spec: &ProblemSpec) -> Vec<(String, &OscillatoryField)> {
    let mut out = Vec::new();
    if let Some(o) = spec.potential.oscillation() {
        out.push(("potential.oscillation.factor".to_string(), &o.factor));
    }
    match &spec.flux {
        FluxSpec::Linear { matrix, .. } => {
            for (i, row) in matrix.entries.iter().enumerate() {
                for (j, f) in row.iter().enumerate() {
                    out.push((format!("flux.matrix.entries[{i}][{j}]"), f));
                }
            }
        }
        FluxSpec::Potential { psi } => {
            if let crate::cell::DissipationKind::Quadratic { matrix } = &psi.kind {
                for (i, row) in matrix.entries.iter().enumerate() {
                    for (j, f) in row.iter().enumerate() {
                        out.push((format!("flux.psi.matrix.entries[{i}][{j}]"), f));
                    }
                }
            }
            if let Some(o) = &psi.oscillation {
                out.push(("flux.psi.oscillation".to_string(), o));
            }
        }
    }
    out.push(("source.factor".to_string(), &spec.source.factor));
    out.push(("initial.factor".to_string(), &spec.initial.factor));
    out
}

/// `Σ |a| / max_d |k_d|`: bound on `L·|numeric(L) − exact|` for a box average.
fn mean_envelope(field: &OscillatoryField) -> f64 {
    field
        .modes()
        .iter()
        .map(|m| m.amplitude.abs() / m.frequency.iter().fold(0.0f64, |a, k| a.max(k.abs())))
        .sum()
}

fn run_mean(spec: &ProblemSpec, hash: &str, out: &mut Outputs, checks: &mut BTreeMap<String, bool>) -> Result<Value> {
    let d = &spec.diagnostics;
    let mut entries = Vec::new();
    let mut csv = String::from("field,t,defect,defect_exact\n");
    for (name, field) in named_fields(spec) {
        let exact = mean_value(field, MeanMode::Exact)?;
        let c = mean_envelope(field);
        let mut numeric = Vec::new();
        let mut ok = true;
        for &l in &d.mean_half_widths {
            let v = mean_value(field, MeanMode::Numeric { half_width: l })?;
            let err = (v - exact).abs();
            ok &= err <= c / l + 1e-9;
            numeric.push(json!({ "half_width": l, "value": v, "error": err }));
        }
        checks.insert(format!("mean_envelope:{name}"), ok);
        let mut defects = Vec::new();
        for &t in &d.ergodicity_t {
            let v = ergodicity_defect(field, t, d.sample_l)?;
            let e = ergodicity_defect_exact(field, t)?;
            csv.push_str(&format!("{name},{t},{v},{e}\n"));
            defects.push(json!({ "t": t, "defect": v, "defect_exact": e }));
        }
        entries.push(json!({ "field": name, "exact": exact, "envelope": c, "numeric": numeric, "ergodicity": defects }));
    }
    let mut w = out.create("ergodicity.csv")?;
    w.write_all(csv.as_bytes())?;
    w.flush()?;
    out.json("means.json", &json!({ "config_hash": hash, "fields": entries }))?;
    Ok(json!({ "means": "means.json", "ergodicity": "ergodicity.csv" }))
}

fn run_cell(spec: &ProblemSpec, hash: &str, out: &mut Outputs, checks: &mut BTreeMap<String, bool>) -> Result<Value> {
    let FluxSpec::Linear { matrix, .. } = &spec.flux else {
        return Err(Error::Unsupported("`cell` needs a linear flux; use `psi0` for dissipation potentials".into()));
    };
    let tol = &spec.tolerances;
    let report = cell_report(matrix, spec.cell.nodes, spec.cell.rational_q, spec.cell.max_nodes, tol.cell_cg)?;
    checks.insert("voigt_reuss".into(), report.bounds_hold);
    checks.insert("symmetric".into(), report.symmetric);
    checks.insert("cell_residual".into(), report.primary.residuals.iter().all(|r| *r <= tol.cell_residual));
    checks.insert("corrector_mean".into(), report.primary.corrector_means.iter().all(|m| m.abs() <= tol.corrector_mean));
    checks.insert("positive_definite".into(), report.eigen_bounds.0 > 0.0);
    out.json("cell.json", &json!({ "config_hash": hash, "cell": report }))?;
    Ok(json!({ "k0": report.k0, "cell": "cell.json" }))
}

fn default_etas(n: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        vec![vec![0.5], vec![1.0], vec![-1.0], vec![2.0], vec![-0.3]]
    } else {
        vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![0.5, -2.0], vec![-1.0, 0.3]]
    }
}

fn run_psi0(spec: &ProblemSpec, hash: &str, out: &mut Outputs, checks: &mut BTreeMap<String, bool>) -> Result<Value> {
    let n = spec.dimension;
    let (psi, matrix) = match &spec.flux {
        FluxSpec::Linear { matrix, .. } => (DissipationPotential::quadratic(matrix.clone()), Some(matrix)),
        FluxSpec::Potential { psi } => (psi.clone(), None),
    };
    if !psi.fields().iter().all(|f| is_unit_periodic(f)) {
        return Err(Error::Unsupported("ψ₀ needs 1-periodic fields (frequencies multiples of 2π)".into()));
    }
    let grid = CellGrid::new(n, spec.cell.psi0_nodes)?;
    let etas = if spec.diagnostics.psi0_etas.is_empty() { default_etas(n) } else { spec.diagnostics.psi0_etas.clone() };
    let tol = spec.tolerances.psi0_gradient;
    // The quadratic cross-check uses K₀ on the same cell grid.
    let k0 = match matrix {
        Some(m) => Some(cell_report(m, spec.cell.psi0_nodes, 1, spec.cell.max_nodes, spec.tolerances.cell_cg)?.k0),
        None => None,
    };
    let mut rows = Vec::new();
    let mut csv = String::new();
    csv.push_str(if n == 1 { "eta1,value,sub1\n" } else { "eta1,eta2,value,sub1,sub2\n" });
    let mut quadratic_ok = true;
    let mut values = Vec::new();
    for eta in &etas {
        if eta.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: eta.len() });
        }
        let sol = psi0_solve(&grid, &psi, 0.0, eta, tol)?;
        let mut fields: Vec<String> = eta.iter().map(|v| v.to_string()).collect();
        fields.push(sol.value.to_string());
        fields.extend(sol.subgradient.iter().map(|v| v.to_string()));
        csv.push_str(&fields.join(","));
        csv.push('\n');
        let mut row = json!({ "eta": eta, "value": sol.value, "subgradient": sol.subgradient, "iterations": sol.iterations });
        if let Some(k0) = &k0 {
            let q: f64 = (0..n).map(|i| (0..n).map(|j| eta[i] * k0[i * n + j] * eta[j]).sum::<f64>()).sum();
            let diff = (2.0 * sol.value - q).abs();
            quadratic_ok &= diff <= 1e-6 * (1.0 + q.abs());
            row["k0_form"] = json!(q);
            row["quadratic_defect"] = json!(diff);
        }
        values.push(sol.value);
        rows.push(row);
    }
    // ψ₀ is convex and vanishes at η = 0: ψ₀(η) ≥ 0 and ψ₀(η/2) ≤ ψ₀(η)/2.
    let mut convex_ok = values.iter().all(|v| *v >= -1e-12);
    for (eta, v) in etas.iter().zip(&values) {
        let half: Vec<f64> = eta.iter().map(|e| 0.5 * e).collect();
        let h = psi0_solve(&grid, &psi, 0.0, &half, tol)?.value;
        convex_ok &= h <= 0.5 * v + 1e-9 * (1.0 + v.abs());
    }
    checks.insert("psi0_convexity".into(), convex_ok);
    if k0.is_some() {
        checks.insert("psi0_quadratic".into(), quadratic_ok);
    }
    let mut w = out.create("psi0.csv")?;
    w.write_all(csv.as_bytes())?;
    w.flush()?;
    out.json("psi0.json", &json!({ "config_hash": hash, "k0": k0, "samples": rows }))?;
    Ok(json!({ "psi0": "psi0.json", "table": "psi0.csv" }))
}

fn trajectory_checks(spec: &ProblemSpec, problem: &EvolutionProblem, run: &Run, checks: &mut BTreeMap<String, bool>) -> Value {
    let tol = &spec.tolerances;
    let d = &run.trajectory.diagnostics;
    let inclusion = d.iter().map(|s| s.inclusion_gap.max(s.fenchel_gap)).fold(0.0, f64::max);
    checks.insert("inclusion".into(), inclusion <= tol.fenchel_gap);
    checks.insert("mass_balance".into(), d.iter().all(|s| s.mass_defect <= tol.mass_balance * (1.0 + s.mass.abs())));
    if problem.source.is_zero() {
        let f0 = d[0].free_energy;
        let monotone = d.windows(2).all(|w| w[1].free_energy <= w[0].free_energy + 1e-10 * (1.0 + f0.abs()));
        checks.insert("free_energy_nonincreasing".into(), monotone);
    }
    let constants = AprioriConstants::for_potential(
        &problem.potential,
        spec.dimension,
        problem.options.c_alpha,
        problem.options.h_alpha,
        (spec.constants.c, spec.constants.h),
    );
    let apriori = apriori_check(&run.trajectory, constants, tol.apriori_slack);
    checks.insert("apriori".into(), apriori.passed);
    json!({
        "steps": d.len() - 1,
        "max_inclusion_gap": inclusion,
        "sup_l2_w": run.trajectory.sup_l2_w(),
        "apriori_constants": apriori.constants,
        "apriori_min_slack": apriori.min_slack,
        "max_halvings": d.iter().map(|s| s.halvings).max(),
    })
}

fn run_solve(spec: &ProblemSpec, eps: Option<EpsChoice>, grid: Option<usize>, out: &mut Outputs, checks: &mut BTreeMap<String, bool>) -> Result<Value> {
    let choice = eps.unwrap_or_else(|| spec.eps.first().map_or(EpsChoice::Homogenized, |e| EpsChoice::Value(*e)));
    let problem = match choice {
        EpsChoice::Value(e) => EvolutionProblem::oscillatory(spec, e, grid.unwrap_or_else(|| spec.domain.nodes_for(Some(e))))?,
        EpsChoice::Homogenized => {
            let model = build_effective_model(spec)?;
            EvolutionProblem::homogenized(spec, &model, grid.unwrap_or(spec.domain.nodes))?
        }
    };
    let run = run_problem(&problem, uses_kirchhoff(spec))?;
    let mut results = trajectory_checks(spec, &problem, &run, checks);
    let mut w = out.create("diagnostics.csv")?;
    writeln!(w, "t,l2_w,grad_sq,energy,free_energy,mass,mass_defect,inclusion_gap,nl_iters,residual,halvings")?;
    for d in &run.trajectory.diagnostics {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            d.t, d.l2_w, d.grad_sq, d.energy, d.free_energy, d.mass, d.mass_defect, d.inclusion_gap, d.nl_iters, d.residual, d.halvings
        )?;
    }
    w.flush()?;
    out.field("w_final", &run.trajectory.last().w)?;
    out.field("u_final", run.u.last().expect("nonempty trajectory"))?;
    results["eps"] = match choice {
        EpsChoice::Value(e) => json!(e),
        EpsChoice::Homogenized => json!("homogenized"),
    };
    results["nodes"] = json!(problem.grid.intervals);
    results["diagnostics"] = json!("diagnostics.csv");
    Ok(results)
}

fn run_converge(spec: &ProblemSpec, eps: Option<&[f64]>, grid: Option<usize>, hash: &str, out: &mut Outputs, checks: &mut BTreeMap<String, bool>) -> Result<Value> {
    let eps = eps.unwrap_or(&spec.eps);
    let (table, _) = convergence_study(spec, eps, grid)?;
    let c = &table.checks;
    checks.insert("finite".into(), c.finite);
    checks.insert("eps_decreasing".into(), c.eps_decreasing);
    checks.insert("monotone_l1".into(), c.monotone_l1);
    checks.insert("holder".into(), c.holder);
    checks.insert("energy_band".into(), c.energy_band);
    checks.insert("apriori".into(), c.apriori);
    checks.insert("inclusion".into(), c.inclusion);
    if let Some(d) = c.decay {
        checks.insert("decay".into(), d);
    }
    let mut w = out.create("convergence.csv")?;
    write_table_csv(&table, &mut w)?;
    w.flush()?;
    out.json("convergence.json", &json!({ "config_hash": hash, "table": table }))?;
    Ok(json!({ "table": "convergence.csv", "details": "convergence.json", "observed_rates": table.observed_rates }))
}

fn run_unique(spec: &ProblemSpec, grid: Option<usize>, out: &mut Outputs, checks: &mut BTreeMap<String, bool>) -> Result<Value> {
    let model = build_effective_model(spec)?;
    if !matches!(model.flux, EffectiveFlux::Tensor { .. }) {
        return Err(Error::Unsupported("`unique` needs a linear flux".into()));
    }
    let problem = EvolutionProblem::homogenized(spec, &model, grid.unwrap_or(spec.domain.nodes))?;
    let w0 = Stepper::new(&problem)?.initial_enthalpy()?;
    let delta = spec.diagnostics.perturbation;
    let bump = problem.grid.sample(|x| x.iter().map(|v| (std::f64::consts::PI * v).sin()).product());
    let perturbed = |scale: f64| GridField {
        lattice: w0.lattice,
        values: w0.values.iter().zip(&bump.values).map(|(a, b)| a + scale * delta * b).collect(),
    };
    let slack = spec.tolerances.contraction;
    let same = contraction_test(&problem, &w0, &w0, slack)?;
    let single = contraction_test(&problem, &w0, &perturbed(1.0), slack)?;
    let double = contraction_test(&problem, &w0, &perturbed(2.0), slack)?;
    let e0 = single.energies[0];
    checks.insert("identical_zero".into(), same.energies.iter().all(|e| *e == 0.0));
    checks.insert("nonincreasing".into(), single.nonincreasing);
    checks.insert("quadratic_scaling".into(), (double.energies[0] - 4.0 * e0).abs() <= 1e-8 * 4.0 * e0);
    let mut w = out.create("contraction.csv")?;
    writeln!(w, "t,energy")?;
    for (t, e) in single.times.iter().zip(&single.energies) {
        writeln!(w, "{t},{e}")?;
    }
    w.flush()?;
    Ok(json!({
        "e0": e0,
        "e_final": single.energies.last(),
        "max_increase": single.max_increase,
        "perturbation": delta,
        "energies": "contraction.csv",
    }))
}
