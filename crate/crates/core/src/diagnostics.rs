//! Convergence diagnostics: two-scale pairings, space-time error norms, the weak gap,
//! the ε-convergence table, the H⁻¹ contraction test and the a-priori energy check.

use rayon::prelude::*;
use serde::Serialize;

use crate::cell::{build_effective_model, EffectiveFlux, EffectiveModel};
use crate::config::ProblemSpec;
use crate::convex::ConvexPotential;
use crate::fields::OscillatoryField;
use crate::grid::{hminus1_norm, EllipticOperator, GridField, Lattice};
use crate::solver::{run_problem, solve_linear_kirchhoff, solve_evolution, uses_kirchhoff, EvolutionProblem, FluxModel, InitialData, Run, Trajectory};
use crate::{Error, Result};

/// `∫_Ω v(x) φ(x/ε) ψ(x) dx` by the lattice quadrature.
pub fn two_scale_pairing(v: &GridField, phi: &OscillatoryField, psi_x: impl Fn(&[f64]) -> f64, eps: f64) -> Result<f64> {
    let lat = v.lattice;
    let n = lat.dim;
    if phi.dimension() != n {
        return Err(Error::DimensionMismatch { expected: n, got: phi.dimension() });
    }
    let mut total = 0.0;
    for (k, &vk) in v.values.iter().enumerate() {
        let x = lat.coords(k);
        let z = [x[0] / eps, x[1] / eps];
        total += lat.weight(k) * vk * phi.value(&z[..n]) * psi_x(&x[..n]);
    }
    Ok(total)
}

/// Multilinear interpolation of a field on a Dirichlet lattice onto another Dirichlet
/// lattice of the unit box. Exact at shared nodes.
pub fn interpolate(field: &GridField, target: Lattice) -> Result<GridField> {
    let src = field.lattice;
    if src.dim != target.dim || src.periodic || target.periodic {
        return Err(Error::InvalidArgument("interpolation needs Dirichlet lattices of equal dimension".into()));
    }
    if src == target {
        return Ok(field.clone());
    }
    let n = src.dim;
    let intervals = src.nodes - 1;
    let values = (0..target.count())
        .map(|k| {
            let x = target.coords(k);
            let mut base = [0usize; 2];
            let mut frac = [0.0; 2];
            for d in 0..n {
                let s = x[d] * intervals as f64;
                let i = (s.floor() as usize).min(intervals - 1);
                // Snap to the node when the coordinate sits on it up to rounding.
                let f = s - i as f64;
                base[d] = i;
                frac[d] = if f.abs() < 1e-9 { 0.0 } else if (1.0 - f).abs() < 1e-9 { 1.0 } else { f };
            }
            let mut v = 0.0;
            for c in 0..(1usize << n) {
                let mut idx = [0usize; 2];
                let mut wgt = 1.0;
                for d in 0..n {
                    let bit = (c >> d) & 1;
                    idx[d] = base[d] + bit;
                    wgt *= if bit == 1 { frac[d] } else { 1.0 - frac[d] };
                }
                if wgt != 0.0 {
                    v += wgt * field.values[src.index(idx[0], idx[1])];
                }
            }
            v
        })
        .collect();
    GridField::new(target, values)
}

/// Trapezoid weights of a time partition.
fn time_weights(times: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; times.len()];
    for i in 1..times.len() {
        let h = times[i] - times[i - 1];
        w[i - 1] += 0.5 * h;
        w[i] += 0.5 * h;
    }
    w
}

/// `‖a − b‖_{Lᵖ(Ω×(0,T))}` with trapezoid weights in time and the lattice weights of `a`
/// in space; `b` is interpolated onto the lattice of `a`.
pub fn space_time_error(a: &[GridField], b: &[GridField], times: &[f64], p: f64) -> Result<f64> {
    if a.len() != b.len() || a.len() != times.len() {
        return Err(Error::InvalidArgument("trajectories have different time partitions".into()));
    }
    let tw = time_weights(times);
    let mut total = 0.0;
    for ((fa, fb), wt) in a.iter().zip(b).zip(&tw) {
        let fb = interpolate(fb, fa.lattice)?;
        total += wt * fa.values.iter().zip(&fb.values).enumerate().map(|(k, (x, y))| fa.lattice.weight(k) * (x - y).abs().powf(p)).sum::<f64>();
    }
    Ok(total.powf(1.0 / p))
}

/// The fixed family `φ(x, t) = Π_d sin(kπx_d) · (t/T)^l`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakTestFamily {
    pub modes: Vec<u32>,
    pub powers: Vec<u32>,
}

impl WeakTestFamily {
    pub fn len(&self) -> usize {
        self.modes.len() * self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `max_φ |∬ (a − b) φ dx dt|` over the test family; `b` is interpolated onto `a`'s lattice.
pub fn weak_gap(a: &[GridField], b: &[GridField], times: &[f64], family: &WeakTestFamily) -> Result<f64> {
    if a.len() != b.len() || a.len() != times.len() || times.is_empty() {
        return Err(Error::InvalidArgument("trajectories have different time partitions".into()));
    }
    let tw = time_weights(times);
    let t_final = *times.last().expect("nonempty");
    let diffs: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(fa, fb)| Ok(fa.values.iter().zip(&interpolate(fb, fa.lattice)?.values).map(|(x, y)| x - y).collect()))
        .collect::<Result<_>>()?;
    let lat = a[0].lattice;
    let n = lat.dim;
    let mut gap: f64 = 0.0;
    for &k in &family.modes {
        let spatial: Vec<f64> = (0..lat.count())
            .map(|idx| {
                let x = lat.coords(idx);
                lat.weight(idx) * (0..n).map(|d| (k as f64 * std::f64::consts::PI * x[d]).sin()).product::<f64>()
            })
            .collect();
        let slices: Vec<f64> = diffs.iter().map(|d| d.iter().zip(&spatial).map(|(a, b)| a * b).sum()).collect();
        for &l in &family.powers {
            let s: f64 = slices.iter().zip(times).zip(&tw).map(|((v, t), w)| w * v * (t / t_final).powi(l as i32)).sum();
            gap = gap.max(s.abs());
        }
    }
    Ok(gap)
}

/// Constants of the a-priori bound: `∫Ψ*(w) ≥ γ‖w‖² + γ̃|Ω|` and `a·η ≥ c_α|η|² + h_α`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AprioriConstants {
    pub gamma: f64,
    pub gamma_tilde: f64,
    pub c_alpha: f64,
    pub h_alpha: f64,
}

impl AprioriConstants {
    /// From the growth constants `c, h` of the base potential and the multiplier bound
    /// `g_max`: with `Ψ_g = gΨ`, `Ψ_g*(v) ≥ (|v| − gh)₊² / (4gc) − |Ψ(0)|`. For `h = 0` this is
    /// `v²/(4 g c)`; otherwise Young's inequality gives `v²/(8 g c) − g h²/(4c)`.
    pub fn from_growth(c: f64, h: f64, g_max: f64, psi_at_zero: f64, c_alpha: f64, h_alpha: f64) -> Self {
        let (gamma, gamma_tilde) = if h == 0.0 {
            (1.0 / (4.0 * c * g_max), -psi_at_zero.abs())
        } else {
            (1.0 / (8.0 * c * g_max), -g_max * h * h / (4.0 * c) - psi_at_zero.abs())
        };
        AprioriConstants { gamma, gamma_tilde, c_alpha, h_alpha }
    }

    pub fn for_potential(potential: &ConvexPotential, dimension: usize, c_alpha: f64, h_alpha: f64, overrides: (Option<f64>, Option<f64>)) -> Self {
        let growth = potential.growth_constants();
        let (_, g_max) = potential.multiplier_bounds(dimension);
        Self::from_growth(overrides.0.unwrap_or(growth.c), overrides.1.unwrap_or(growth.h), g_max, potential.value_at_zero(), c_alpha, h_alpha)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AprioriReport {
    pub constants: AprioriConstants,
    /// `bound(t) − E(t)` per recorded step; `None` when `c_α ≤ 0` (no bound).
    pub slack: Vec<Option<f64>>,
    pub min_slack: Option<f64>,
    pub passed: bool,
}

/// Evaluates the discrete energy inequality
/// `γ‖w(t)‖² + γ̃|Ω| + c_α Σ Δt ∫|∇u|² + t h_α |Ω| ≤ ∫Ψ*(w₀) + Σ Δt ∫|f||u|`
/// in the form `E(t) ≤ bound(t)` with `E = ‖w‖² + Σ Δt ∫|∇u|²`.
pub fn apriori_check(trajectory: &Trajectory, constants: AprioriConstants, tol: f64) -> AprioriReport {
    let measure = trajectory.grid.lattice().measure();
    let initial_free = trajectory.diagnostics.first().map_or(0.0, |d| d.free_energy);
    let factor = constants.gamma.min(constants.c_alpha);
    let slack: Vec<Option<f64>> = trajectory
        .diagnostics
        .iter()
        .map(|d| {
            (factor > 0.0).then(|| {
                let rhs = initial_free + d.source_work - constants.gamma_tilde * measure - d.t * constants.h_alpha * measure;
                rhs / factor - d.energy
            })
        })
        .collect();
    let min_slack = slack.iter().flatten().copied().reduce(f64::min);
    AprioriReport { constants, passed: min_slack.map_or(true, |s| s >= -tol), slack, min_slack }
}

/// One row of the convergence table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub nodes: usize,
    pub err_l1: f64,
    pub err_l15: f64,
    pub weak_gap: f64,
    pub sup_l2_w: f64,
    /// `E(T) = ‖w(T)‖² + Σ Δt ∫|∇u|²`.
    pub energy: f64,
    /// `‖u_ε‖_{L²H¹}`.
    pub l2h1_u: f64,
    pub apriori_min_slack: Option<f64>,
    pub max_fenchel_gap: f64,
    pub max_inclusion_gap: f64,
    pub max_mass_defect: f64,
    pub halvings: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceChecks {
    pub finite: bool,
    pub eps_decreasing: bool,
    pub monotone_l1: bool,
    pub holder: bool,
    pub energy_band: bool,
    pub apriori: bool,
    pub inclusion: bool,
    /// `final ≤ first / decay`, when a decay factor is configured.
    pub decay: Option<bool>,
}

impl ConvergenceChecks {
    pub fn all(&self) -> bool {
        self.finite
            && self.eps_decreasing
            && self.monotone_l1
            && self.holder
            && self.energy_band
            && self.apriori
            && self.inclusion
            && self.decay.unwrap_or(true)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub reference_nodes: usize,
    pub reference_sup_l2_w: f64,
    /// `log(e_i / e_{i+1}) / log(ε_i / ε_{i+1})` for consecutive rows (reported only).
    pub observed_rates: Vec<f64>,
    pub weak_tests: WeakTestFamily,
    pub checks: ConvergenceChecks,
}

pub const TABLE_HEADER: &str = "eps,err_l1,err_l15,weak_gap,sup_l2_w,energy";

/// Writes the table as CSV with the fixed header.
pub fn write_table_csv(table: &ConvergenceTable, mut out: impl std::io::Write) -> Result<()> {
    writeln!(out, "{TABLE_HEADER}")?;
    for r in &table.rows {
        writeln!(out, "{},{},{},{},{},{}", r.eps, r.err_l1, r.err_l15, r.weak_gap, r.sup_l2_w, r.energy)?;
    }
    Ok(())
}

/// Runs the ε-problems and the homogenized reference and assembles the table.
///
/// `nodes` overrides the `N(ε)` rule for the ε runs. The reference is the homogenized
/// problem on the finest grid used by any ε run. Runs are independent and execute in
/// parallel; rows are sorted by decreasing ε.
pub fn convergence_study(spec: &ProblemSpec, eps_list: &[f64], nodes: Option<usize>) -> Result<(ConvergenceTable, EffectiveModel)> {
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("the convergence study needs at least one ε".into()));
    }
    let mut eps: Vec<f64> = eps_list.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let model = build_effective_model(spec)?;
    let kirchhoff = uses_kirchhoff(spec);
    let grid_for = |e: f64| nodes.unwrap_or_else(|| spec.domain.nodes_for(Some(e)));
    let reference_nodes = eps.iter().map(|&e| grid_for(e)).max().expect("nonempty");
    let reference_problem = EvolutionProblem::homogenized(spec, &model, reference_nodes)?;
    let tol = &spec.tolerances;

    let jobs: Vec<Option<f64>> = std::iter::once(None).chain(eps.iter().map(|&e| Some(e))).collect();
    let runs: Vec<Result<Run>> = jobs
        .par_iter()
        .map(|job| match job {
            None => run_problem(&reference_problem, kirchhoff),
            Some(e) => {
                let problem = EvolutionProblem::oscillatory(spec, *e, grid_for(*e))?;
                run_problem(&problem, kirchhoff).map_err(|err| Error::InvalidArgument(format!("run at ε = {e} failed: {err}")))
            }
        })
        .collect();
    let mut runs = runs.into_iter();
    let reference = runs.next().expect("reference job")?;
    let reference_w: Vec<GridField> = reference.trajectory.states.iter().map(|s| s.w.clone()).collect();
    let family = WeakTestFamily { modes: spec.diagnostics.weak_modes.clone(), powers: spec.diagnostics.weak_powers.clone() };
    let constants = AprioriConstants::for_potential(
        &spec.potential,
        spec.dimension,
        reference_problem.options.c_alpha,
        reference_problem.options.h_alpha,
        (spec.constants.c, spec.constants.h),
    );
    let times = reference.trajectory.times();
    let mut rows = Vec::new();
    for (e, run) in eps.iter().zip(runs) {
        let run = run?;
        let tr = &run.trajectory;
        if tr.states.len() != times.len() {
            return Err(Error::InvalidArgument("ε run and reference have different time partitions".into()));
        }
        let w: Vec<GridField> = tr.states.iter().map(|s| s.w.clone()).collect();
        let apriori = apriori_check(tr, constants, tol.apriori_slack);
        let last = tr.diagnostics.last().expect("nonempty");
        rows.push(ConvergenceRow {
            eps: *e,
            nodes: tr.grid.intervals,
            err_l1: space_time_error(&run.u, &reference.u, &times, 1.0)?,
            err_l15: space_time_error(&run.u, &reference.u, &times, 1.5)?,
            weak_gap: weak_gap(&w, &reference_w, &times, &family)?,
            sup_l2_w: tr.sup_l2_w(),
            energy: last.energy,
            l2h1_u: last.cumulative_grad.sqrt(),
            apriori_min_slack: apriori.min_slack,
            max_fenchel_gap: tr.diagnostics.iter().map(|d| d.fenchel_gap).fold(0.0, f64::max),
            max_inclusion_gap: tr.diagnostics.iter().map(|d| d.inclusion_gap).fold(0.0, f64::max),
            max_mass_defect: tr.diagnostics.iter().map(|d| d.mass_defect).fold(0.0, f64::max),
            halvings: tr.diagnostics.iter().map(|d| d.halvings).max().unwrap_or(0),
        });
    }
    let space_time = spec.domain.t_final * reference.trajectory.grid.lattice().measure();
    let band = |values: Vec<f64>| {
        let hi = values.iter().copied().fold(0.0, f64::max);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        hi == 0.0 || hi <= tol.energy_band * lo
    };
    let checks = ConvergenceChecks {
        finite: rows.iter().all(|r| {
            [r.err_l1, r.err_l15, r.weak_gap, r.sup_l2_w, r.energy].iter().all(|v| v.is_finite() && *v >= 0.0)
        }),
        eps_decreasing: rows.windows(2).all(|w| w[1].eps < w[0].eps),
        monotone_l1: rows.windows(2).all(|w| w[1].err_l1 <= (1.0 + tol.monotone) * w[0].err_l1),
        holder: rows.iter().all(|r| r.err_l1 <= space_time.powf(1.0 / 3.0) * r.err_l15 * (1.0 + 1e-12) + 1e-300),
        energy_band: band(rows.iter().map(|r| r.sup_l2_w).collect()) && band(rows.iter().map(|r| r.l2h1_u).collect()),
        apriori: rows.iter().all(|r| r.apriori_min_slack.map_or(true, |s| s >= -tol.apriori_slack)),
        inclusion: rows.iter().all(|r| r.max_inclusion_gap <= tol.fenchel_gap && r.max_fenchel_gap <= tol.fenchel_gap),
        decay: spec.diagnostics.decay.map(|d| rows.last().expect("nonempty").err_l1 <= rows[0].err_l1 / d),
    };
    let observed_rates = rows.windows(2).map(|w| (w[0].err_l1 / w[1].err_l1).ln() / (w[0].eps / w[1].eps).ln()).collect();
    let table = ConvergenceTable {
        rows,
        reference_nodes,
        reference_sup_l2_w: reference.trajectory.sup_l2_w(),
        observed_rates,
        weak_tests: family,
        checks,
    };
    Ok((table, model))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    /// Largest `E(t_{k+1}) − E(t_k)`.
    pub max_increase: f64,
    pub nonincreasing: bool,
}

/// Evolves two initial enthalpies under a linear homogenized flux and records
/// `E(t) = ‖w_a − w_b‖²_{H⁻¹}` with the operator of the flux tensor. Fluxes with a
/// `u`-modulation `h` run in the Kirchhoff variable, where the flux is linear.
pub fn contraction_test(problem: &EvolutionProblem, w0_a: &GridField, w0_b: &GridField, slack: f64) -> Result<ContractionReport> {
    let FluxModel::Linear { matrix } = &problem.flux else {
        return Err(Error::Unsupported("the contraction test needs a linear flux".into()));
    };
    if !matrix.is_constant() || problem.eps.is_some() {
        return Err(Error::Unsupported("the contraction test needs a constant (homogenized) tensor".into()));
    }
    let tensor = matrix.mean_matrix();
    let op = EllipticOperator::constant(&problem.grid, &tensor)?;
    let run = |w0: &GridField| -> Result<Trajectory> {
        let p = EvolutionProblem { initial: InitialData::Values(w0.clone()), ..problem.clone() };
        if matrix.modulation.is_some() {
            Ok(solve_linear_kirchhoff(&p)?.transformed)
        } else {
            solve_evolution(&p)
        }
    };
    let (a, b) = rayon::join(|| run(w0_a), || run(w0_b));
    let (a, b) = (a?, b?);
    let mut energies = Vec::with_capacity(a.states.len());
    for (sa, sb) in a.states.iter().zip(&b.states) {
        let diff = GridField { lattice: sa.w.lattice, values: sa.w.values.iter().zip(&sb.w.values).map(|(x, y)| x - y).collect() };
        energies.push(if diff.values.iter().all(|v| *v == 0.0) { 0.0 } else { hminus1_norm(&diff, &op)? });
    }
    let e0 = energies[0];
    let max_increase = energies.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(ContractionReport {
        times: a.times(),
        nonincreasing: energies.windows(2).all(|w| w[1] <= w[0] + slack * e0),
        energies,
        max_increase,
    })
}

/// The homogenized tensor of a linear model, if any.
pub fn model_tensor(model: &EffectiveModel) -> Option<&[f64]> {
    match &model.flux {
        EffectiveFlux::Tensor { k0, .. } => Some(k0),
        EffectiveFlux::Psi0 { .. } => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainGrid;

    #[test]
    fn pairing_examples() {
        let eps = 1.0 / 64.0;
        let grid = DomainGrid::new(1, 4096).unwrap();
        let v = grid.sample(|x| (2.0 * std::f64::consts::PI * x[0] / eps).sin());
        let sin = OscillatoryField::sinusoid(1, 0.0, 1.0, 0, 1.0);
        let cos = OscillatoryField::try_new(1, 0.0, vec![crate::fields::Mode::cosine(1.0, vec![2.0 * std::f64::consts::PI])]).unwrap();
        assert!((two_scale_pairing(&v, &sin, |_| 1.0, eps).unwrap() - 0.5).abs() < 1e-2);
        assert!(two_scale_pairing(&v, &cos, |_| 1.0, eps).unwrap().abs() < 1e-2);
        let g = grid.sample(|x| x[0] * x[0]);
        let one = OscillatoryField::constant(1, 1.0);
        let direct: f64 = g.values.iter().enumerate().map(|(k, v)| g.lattice.weight(k) * v).sum();
        assert_eq!(two_scale_pairing(&g, &one, |_| 1.0, eps).unwrap(), direct);
    }

    #[test]
    fn interpolation_is_exact_on_shared_nodes_and_linears() {
        let fine = DomainGrid::new(2, 8).unwrap().sample(|x| 1.0 + 2.0 * x[0] - x[1]);
        let coarse = interpolate(&fine, Lattice::dirichlet(2, 4)).unwrap();
        let direct = DomainGrid::new(2, 4).unwrap().sample(|x| 1.0 + 2.0 * x[0] - x[1]);
        for (a, b) in coarse.values.iter().zip(&direct.values) {
            assert!((a - b).abs() < 1e-14);
        }
        let up = interpolate(&direct, Lattice::dirichlet(2, 12)).unwrap();
        let exact = DomainGrid::new(2, 12).unwrap().sample(|x| 1.0 + 2.0 * x[0] - x[1]);
        for (a, b) in up.values.iter().zip(&exact.values) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn weak_gap_examples() {
        let grid = DomainGrid::new(1, 64).unwrap();
        let times = [0.0, 0.5, 1.0];
        let a: Vec<GridField> = times.iter().map(|t| grid.sample(|x| x[0] + t)).collect();
        let family = WeakTestFamily { modes: vec![1, 2], powers: vec![0, 1] };
        assert_eq!(weak_gap(&a, &a, &times, &family).unwrap(), 0.0);
        // Constant-in-x test against a shift: with mode 1, power 0 the gap is the integral.
        let b: Vec<GridField> = times.iter().map(|t| grid.sample(|x| x[0] + t - 1.0)).collect();
        let gap = weak_gap(&a, &b, &times, &WeakTestFamily { modes: vec![1], powers: vec![0] }).unwrap();
        let direct: f64 = (0..65).map(|k| grid.lattice().weight(k) * (std::f64::consts::PI * k as f64 / 64.0).sin()).sum();
        assert!((gap - direct).abs() < 1e-14);
    }

    #[test]
    fn apriori_constants_are_sharp_for_the_heat_potential() {
        let c = AprioriConstants::for_potential(&ConvexPotential::quadratic(1.0).unwrap(), 1, 1.0, 0.0, (None, None));
        assert_eq!(c.gamma, 0.25);
        assert_eq!(c.gamma_tilde, 0.0);
        // Ψ*(v) = v²/2 ≥ v²/4.
        let s = AprioriConstants::for_potential(&ConvexPotential::stefan(1.0).unwrap(), 1, 1.0, 0.0, (None, None));
        let local = ConvexPotential::stefan(1.0).unwrap();
        for i in -200..=200 {
            let v = i as f64 * 0.05;
            assert!(local.with_multiplier(1.0).conjugate(v) >= s.gamma * v * v + s.gamma_tilde - 1e-12);
        }
    }
}
