//! Backward-Euler enthalpy scheme for `∂ₜw − ∇·a(x/ε, u, ∇u) = f`, `w ∈ ∂Ψ(x/ε, x, u)`,
//! with homogeneous Dirichlet data on `(0, 1)ⁿ`.
//!
//! Unknowns are the nodal enthalpies at interior nodes; temperatures follow nodewise from
//! `u = β(w)`. One step solves
//!
//! ```text
//! m_i (w_i − wⁿ_i) + Δt (Gᵀ W a(∇u))_i = Δt m_i f(uⁿ)_i
//! ```
//!
//! by a damped semismooth Newton iteration, where `Gᵀ W` is the weak divergence of the
//! quadrature mesh and `m_i` the lumped mass. Flux coefficients are sampled at cell centers;
//! the potential multiplier, source and initial data at nodes.

use std::sync::Arc;

use serde::Serialize;

use crate::cell::{DissipationPotential, EffectiveFlux, EffectiveModel, Psi0Cache};
use crate::config::{FluxSpec, InitialSpec, ProblemSpec, SourceSpec, Tolerances};
use crate::convex::{ConvexPotential, KirchhoffMap, LocalPotential, PotentialKind};
use crate::fields::{Constitutive, MatrixField};
use crate::grid::linalg::{solve_spd, CgOptions, Csr};
use crate::grid::mesh::QuadMesh;
use crate::grid::{DomainGrid, GridField};
use crate::{Error, Result};

/// The flux `a(z, u, η)`.
#[derive(Clone, Debug)]
pub enum FluxModel {
    /// `h(u) K(z) η` with `h` the matrix modulation (lagged in the Newton matrix).
    Linear { matrix: MatrixField },
    /// `∇_η ψ(z, u, η)`.
    Potential { psi: DissipationPotential },
    /// The homogenized flux `m(u) ∂ψ₀(η)` read from a ψ₀ table.
    Homogenized { cache: Arc<Psi0Cache>, modulation: Option<Constitutive> },
}

#[derive(Clone, Debug)]
pub enum InitialData {
    Spec(InitialSpec),
    Values(GridField),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub linear_tol: f64,
    /// Constants of the coercivity diagnostic `a·η ≥ c_α|η|² + h_α`.
    pub c_alpha: f64,
    pub h_alpha: f64,
}

impl SolverOptions {
    pub fn from_tolerances(t: &Tolerances, c_alpha: f64, h_alpha: f64) -> Self {
        SolverOptions {
            tol: t.nonlinear,
            max_iterations: t.max_nonlinear_iterations,
            max_halvings: t.max_halvings,
            linear_tol: t.linear,
            c_alpha,
            h_alpha,
        }
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions::from_tolerances(&Tolerances::default(), 0.0, 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct EvolutionProblem {
    pub grid: DomainGrid,
    pub flux: FluxModel,
    pub potential: ConvexPotential,
    pub source: SourceSpec,
    pub initial: InitialData,
    /// `None` for homogenized runs; all fast-variable data must then be constant.
    pub eps: Option<f64>,
    pub t_final: f64,
    pub dt: f64,
    pub options: SolverOptions,
}

impl EvolutionProblem {
    /// The ε-problem of a problem file on `nodes` intervals per axis. Fails when the grid does not
    /// resolve the fast scale (`N < 8/ε`).
    pub fn oscillatory(spec: &ProblemSpec, eps: f64, nodes: usize) -> Result<Self> {
        if (nodes as f64) < 8.0 / eps - 1e-9 {
            return Err(Error::InvalidArgument(format!("N = {nodes} does not resolve ε = {eps} (need N >= 8/ε)")));
        }
        let flux = match &spec.flux {
            FluxSpec::Linear { matrix, .. } => FluxModel::Linear { matrix: matrix.clone() },
            FluxSpec::Potential { psi } => FluxModel::Potential { psi: psi.clone() },
        };
        Ok(EvolutionProblem {
            grid: DomainGrid::new(spec.dimension, nodes)?,
            flux,
            potential: spec.potential.clone(),
            source: spec.source.clone(),
            initial: InitialData::Spec(spec.initial.clone()),
            eps: Some(eps),
            t_final: spec.domain.t_final,
            dt: spec.domain.dt,
            options: SolverOptions::from_tolerances(&spec.tolerances, run_c_alpha(spec), spec.h_alpha()),
        })
    }

    /// The homogenized problem on `nodes` intervals per axis.
    pub fn homogenized(spec: &ProblemSpec, model: &EffectiveModel, nodes: usize) -> Result<Self> {
        let n = spec.dimension;
        let flux = match &model.flux {
            EffectiveFlux::Tensor { k0, modulation, .. } => {
                FluxModel::Linear { matrix: MatrixField::constant(n, k0).with_modulation(*modulation) }
            }
            EffectiveFlux::Psi0 { cache, modulation } => FluxModel::Homogenized { cache: cache.clone(), modulation: *modulation },
        };
        Ok(EvolutionProblem {
            grid: DomainGrid::new(n, nodes)?,
            flux,
            potential: model.potential.clone(),
            source: model.source.clone(),
            initial: InitialData::Spec(model.initial.clone()),
            eps: None,
            t_final: spec.domain.t_final,
            dt: spec.domain.dt,
            options: SolverOptions::from_tolerances(&spec.tolerances, run_c_alpha(spec), spec.h_alpha()),
        })
    }
}

/// `c_α` for the coercivity diagnostic of a run. Kirchhoff runs see the flux `K ∇V`, whose
/// constant is the ellipticity bound alone.
fn run_c_alpha(spec: &ProblemSpec) -> f64 {
    match &spec.flux {
        FluxSpec::Linear { matrix, kirchhoff: true } if spec.constants.c_alpha.is_none() => {
            spec.constants.ellipticity.map_or_else(|| matrix.gershgorin_bounds().0, |b| b[0])
        }
        _ => spec.c_alpha(),
    }
}

/// Whether runs of this problem go through the Kirchhoff transformation.
pub fn uses_kirchhoff(spec: &ProblemSpec) -> bool {
    matches!(spec.flux, FluxSpec::Linear { kirchhoff: true, .. })
}

/// A finished run: the trajectory (in the transformed variable for Kirchhoff runs) and the
/// temperature `u` at every recorded time.
#[derive(Clone, Debug)]
pub struct Run {
    pub trajectory: Trajectory,
    pub u: Vec<GridField>,
}

pub fn run_problem(problem: &EvolutionProblem, kirchhoff: bool) -> Result<Run> {
    if kirchhoff {
        let k = solve_linear_kirchhoff(problem)?;
        Ok(Run { trajectory: k.transformed, u: k.u })
    } else {
        let trajectory = solve_evolution(problem)?;
        let u = trajectory.states.iter().map(|s| s.u.clone()).collect();
        Ok(Run { trajectory, u })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionState {
    pub step: usize,
    pub time: f64,
    pub w: GridField,
    pub u: GridField,
}

/// Per-step record. Sums use the lumped (trapezoid) node weights and the quadrature
/// weights of the flux mesh.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub t: f64,
    pub l2_w: f64,
    /// `∫|∇u|²` at this time.
    pub grad_sq: f64,
    /// `Σ Δt ∫|∇u|²` up to this time.
    pub cumulative_grad: f64,
    /// `‖w‖² + Σ Δt ∫|∇u|²`.
    pub energy: f64,
    pub nl_iters: usize,
    /// Final `‖F‖∞` of the nonlinear solve.
    pub residual: f64,
    /// Largest nodewise `(Ψ(u) + Ψ*(w) − uw) / (1 + u² + w²)`.
    pub fenchel_gap: f64,
    /// Largest nodewise `dist(w, ∂Ψ(u)) / (1 + |w|)`.
    pub inclusion_gap: f64,
    /// `∫Ψ*(w)`.
    pub free_energy: f64,
    /// `∫a·∇u − c_α∫|∇u|² − h_α|Ω|`.
    pub coercivity_slack: f64,
    /// Weak divergence of the flux collected on Dirichlet nodes.
    pub boundary_flux: f64,
    /// `∫w` over interior nodes.
    pub mass: f64,
    /// `|Δmass − Δt (boundary flux + ∫f)|` for this step.
    pub mass_defect: f64,
    /// `Σ Δt ∫|f(uⁿ)||uⁿ⁺¹|` up to this time.
    pub source_work: f64,
    /// Time-step halvings used for this step.
    pub halvings: usize,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: DomainGrid,
    /// States at `t = 0, Δt, 2Δt, …`.
    pub states: Vec<EvolutionState>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time).collect()
    }

    pub fn last(&self) -> &EvolutionState {
        self.states.last().expect("trajectories hold the initial state")
    }

    pub fn sup_l2_w(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.l2_w).fold(0.0, f64::max)
    }
}

/// Fixed data of one run: the mesh and every coefficient sample.
pub struct Stepper<'a> {
    problem: &'a EvolutionProblem,
    mesh: QuadMesh,
    node_z: Vec<[f64; 2]>,
    node_x: Vec<[f64; 2]>,
    node_g: Vec<f64>,
    weights: Vec<f64>,
    /// Symmetric `K(z_q)` per quadrature point (linear flux only).
    quad_tensor: Vec<[f64; 4]>,
    quad_z: Vec<[f64; 2]>,
    /// Enthalpy held on Dirichlet nodes.
    boundary_w: Vec<f64>,
}

struct FluxEval {
    flux: Vec<[f64; 2]>,
    tangent: Vec<[f64; 4]>,
    grads: Vec<[f64; 2]>,
}

struct Iterate {
    u: Vec<f64>,
    residual: Vec<f64>,
    eval: FluxEval,
}

/// Result of one accepted step.
pub struct StepOutcome {
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub halvings: usize,
    pub source_work: f64,
    pub source_integral: f64,
}

fn check_constant(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} oscillates but the run has no ε")))
    }
}

impl<'a> Stepper<'a> {
    pub fn new(problem: &'a EvolutionProblem) -> Result<Self> {
        let grid = problem.grid;
        let n = grid.dim;
        if !(problem.dt > 0.0 && problem.t_final > 0.0) {
            return Err(Error::InvalidArgument("dt and t_final must be positive".into()));
        }
        let eps = match problem.eps {
            Some(e) if e > 0.0 => Some(e),
            Some(e) => return Err(Error::InvalidArgument(format!("ε must be positive, got {e}"))),
            None => None,
        };
        if eps.is_none() {
            check_constant(problem.potential.oscillation().map_or(true, |m| m.factor.is_constant()), "the potential")?;
            check_constant(problem.source.factor.is_constant(), "the source")?;
            if let InitialData::Spec(s) = &problem.initial {
                check_constant(s.factor.is_constant(), "the initial enthalpy")?;
            }
            match &problem.flux {
                FluxModel::Linear { matrix } => check_constant(matrix.is_constant(), "the flux matrix")?,
                FluxModel::Potential { psi } => check_constant(psi.fields().iter().all(|f| f.is_constant()), "the flux potential")?,
                FluxModel::Homogenized { .. } => {}
            }
        }
        match &problem.flux {
            FluxModel::Linear { matrix } if matrix.dimension() != n => {
                return Err(Error::DimensionMismatch { expected: n, got: matrix.dimension() })
            }
            FluxModel::Homogenized { cache, .. } if cache.dimension() != n => {
                return Err(Error::DimensionMismatch { expected: n, got: cache.dimension() })
            }
            _ => {}
        }
        let fast = |x: &[f64; 2]| match eps {
            Some(e) => [x[0] / e, x[1] / e],
            None => [0.0; 2],
        };
        let lattice = grid.lattice();
        let mesh = QuadMesh::new(lattice);
        let node_x: Vec<[f64; 2]> = (0..lattice.count()).map(|k| lattice.coords(k)).collect();
        let node_z: Vec<[f64; 2]> = node_x.iter().map(fast).collect();
        let node_g: Vec<f64> = node_z.iter().zip(&node_x).map(|(z, x)| problem.potential.multiplier(&z[..n], &x[..n])).collect();
        if let Some(k) = node_g.iter().position(|g| !(*g > 0.0)) {
            return Err(Error::InvalidArgument(format!("potential multiplier is not positive at node {k}")));
        }
        let quad_z: Vec<[f64; 2]> = mesh.quads().iter().map(|q| fast(&q.center)).collect();
        let quad_tensor = match &problem.flux {
            FluxModel::Linear { matrix } => quad_z
                .iter()
                .map(|z| {
                    let mut m = [0.0; 4];
                    matrix.eval_into(&z[..n], &mut m[..n * n]);
                    if n == 2 {
                        let s = 0.5 * (m[1] + m[2]);
                        m[1] = s;
                        m[2] = s;
                    }
                    m
                })
                .collect(),
            _ => Vec::new(),
        };
        let boundary_w = (0..lattice.count())
            .map(|k| {
                let local = problem.potential.with_multiplier(node_g[k]);
                local.subdifferential(0.0).clamp(0.0)
            })
            .collect();
        Ok(Stepper { problem, weights: lattice.weights(), mesh, node_z, node_x, node_g, quad_tensor, quad_z, boundary_w })
    }

    pub fn mesh(&self) -> &QuadMesh {
        &self.mesh
    }

    #[inline]
    fn local(&self, k: usize) -> LocalPotential<'_> {
        self.problem.potential.with_multiplier(self.node_g[k])
    }

    /// The initial enthalpy on the lattice, with Dirichlet nodes set to the boundary value.
    pub fn initial_enthalpy(&self) -> Result<GridField> {
        let lattice = self.problem.grid.lattice();
        let n = lattice.dim;
        let mut values = match &self.problem.initial {
            InitialData::Spec(s) => (0..lattice.count()).map(|k| s.value(&self.node_z[k][..n], &self.node_x[k][..n])).collect(),
            InitialData::Values(f) => {
                if f.lattice != lattice {
                    return Err(Error::InvalidArgument("initial enthalpy is on a different lattice".into()));
                }
                f.values.clone()
            }
        };
        for (k, v) in values.iter_mut().enumerate() {
            if self.mesh.free_index(k).is_none() {
                *v = self.boundary_w[k];
            }
        }
        GridField::new(lattice, values)
    }

    /// `u = β(w)` nodewise, zero on Dirichlet nodes.
    pub fn temperature(&self, w: &[f64]) -> Vec<f64> {
        (0..w.len()).map(|k| if self.mesh.free_index(k).is_some() { self.local(k).beta(w[k]) } else { 0.0 }).collect()
    }

    fn flux(&self, u: &[f64]) -> Result<FluxEval> {
        let n = self.problem.grid.dim;
        let grads = self.mesh.gradient_at_quads(u);
        let nq = grads.len();
        let mut flux = Vec::with_capacity(nq);
        let mut tangent = Vec::with_capacity(nq);
        let needs_u = match &self.problem.flux {
            FluxModel::Linear { matrix } => matrix.modulation.is_some(),
            FluxModel::Potential { psi } => psi.modulation.is_some(),
            FluxModel::Homogenized { modulation, .. } => modulation.is_some(),
        };
        let ubar = if needs_u { self.mesh.cell_average_at_quads(u) } else { vec![0.0; nq] };
        for q in 0..nq {
            let g = grads[q];
            let (a, t) = match &self.problem.flux {
                FluxModel::Linear { matrix } => {
                    let h = matrix.modulation_value(ubar[q]);
                    let k = self.quad_tensor[q];
                    let mut a = [0.0; 2];
                    let mut t = [0.0; 4];
                    for i in 0..n {
                        for j in 0..n {
                            t[i * n + j] = h * k[i * n + j];
                            a[i] += t[i * n + j] * g[j];
                        }
                    }
                    (a, t)
                }
                FluxModel::Potential { psi } => {
                    let e = psi.eval(&self.quad_z[q][..n], ubar[q], &g[..n]);
                    (e.gradient, e.hessian)
                }
                FluxModel::Homogenized { cache, modulation } => {
                    let m = modulation.map_or(1.0, |c| c.eval(ubar[q]));
                    let (qbar, jac) = cache.flux(&g[..n])?;
                    let mut t = [0.0; 4];
                    for i in 0..n {
                        for j in 0..n {
                            t[i * n + j] = 0.5 * m * (jac[i * n + j] + jac[j * n + i]);
                        }
                    }
                    ([m * qbar[0], m * qbar[1]], t)
                }
            };
            flux.push(a);
            tangent.push(t);
        }
        Ok(FluxEval { flux, tangent, grads })
    }

    fn iterate(&self, w: &[f64], w_prev: &[f64], src: &[f64], dt: f64) -> Result<Iterate> {
        let u = self.temperature(w);
        let eval = self.flux(&u)?;
        let div = self.mesh.transpose(&eval.flux);
        let residual = (0..self.mesh.free_count())
            .map(|i| {
                let k = self.mesh.lattice_index(i);
                w[k] - w_prev[k] + dt * div[k] / self.weights[k] - dt * src[i]
            })
            .collect();
        Ok(Iterate { u, residual, eval })
    }

    /// One implicit step of size `dt` from `w_prev` (lattice values). Fails with
    /// [`Error::StepFailure`] when the iteration cap is hit or the line search stalls.
    pub fn step_once(&self, w_prev: &[f64], u_prev: &[f64], dt: f64, time: f64) -> Result<StepOutcome> {
        let p = self.problem;
        let n = p.grid.dim;
        let nf = self.mesh.free_count();
        let src: Vec<f64> = (0..nf)
            .map(|i| {
                let k = self.mesh.lattice_index(i);
                p.source.value(&self.node_z[k][..n], &self.node_x[k][..n], u_prev[k])
            })
            .collect();
        let w_scale = w_prev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = p.options.tol * (1.0 + w_scale);
        let mut w = w_prev.to_vec();
        let mut it = self.iterate(&w, w_prev, &src, dt)?;
        // A linear flux without modulation makes the step a convex minimization; its energy
        // is then the line-search merit.
        let stiffness = match &p.flux {
            FluxModel::Linear { matrix } if matrix.modulation.is_none() => Some(self.mesh.assemble(|q, _| it.eval.tangent[q])),
            _ => None,
        };
        let norm2 = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm_inf = |r: &[f64]| r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut iterations = 0;
        loop {
            let res_inf = norm_inf(&it.residual);
            if res_inf <= tol {
                break;
            }
            if iterations >= p.options.max_iterations {
                return Err(Error::StepFailure { time, residual: res_inf, iterations });
            }
            iterations += 1;
            let delta = self.newton_direction(&w, &it, dt)?;
            if let Some(a) = &stiffness {
                let Some(step) = self.energy_search(a, &w, &delta, w_prev, &src, dt)? else {
                    return Err(Error::StepFailure { time, residual: res_inf, iterations });
                };
                for (k, wk) in w.iter_mut().enumerate() {
                    if let Some(i) = self.mesh.free_index(k) {
                        *wk += step * delta[i];
                    }
                }
                it = self.iterate(&w, w_prev, &src, dt)?;
                continue;
            }
            let merit0 = norm2(&it.residual);
            let mut step = 1.0;
            let mut best: Option<(f64, Vec<f64>, Iterate)> = None;
            loop {
                let trial: Vec<f64> = w
                    .iter()
                    .enumerate()
                    .map(|(k, &wk)| match self.mesh.free_index(k) {
                        Some(i) => wk + step * delta[i],
                        None => wk,
                    })
                    .collect();
                let trial_it = self.iterate(&trial, w_prev, &src, dt)?;
                let merit = norm2(&trial_it.residual);
                if merit <= (1.0 - 1e-4 * step) * merit0 || norm_inf(&trial_it.residual) <= tol {
                    best = Some((merit, trial, trial_it));
                    break;
                }
                if best.as_ref().map_or(true, |b| merit < b.0) {
                    best = Some((merit, trial, trial_it));
                }
                step *= 0.5;
                if step < 1.0 / 1024.0 {
                    break;
                }
            }
            match best {
                Some((merit, trial, trial_it)) if merit < merit0 => {
                    w = trial;
                    it = trial_it;
                }
                _ => return Err(Error::StepFailure { time, residual: res_inf, iterations }),
            }
        }
        let residual = norm_inf(&it.residual);
        let mut source_work = 0.0;
        let mut source_integral = 0.0;
        for (i, s) in src.iter().enumerate() {
            let k = self.mesh.lattice_index(i);
            source_work += dt * self.weights[k] * s.abs() * it.u[k].abs();
            source_integral += self.weights[k] * s;
        }
        Ok(StepOutcome { w, u: it.u, iterations, residual, halvings: 0, source_work, source_integral })
    }

    /// Armijo backtracking on `K(w) = Σ m Ψ*(w) + ‖M(w − wⁿ − Δt f)‖²_{A⁻¹} / (2Δt)`, whose
    /// gradient is `M A⁻¹ R(w) / Δt` for the mass-weighted residual `R`; the Newton
    /// direction is a descent direction. Returns the accepted step length.
    fn energy_search(&self, a: &Csr, w: &[f64], delta: &[f64], w_prev: &[f64], src: &[f64], dt: f64) -> Result<Option<f64>> {
        let nf = self.mesh.free_count();
        let opts = CgOptions { rel_tol: self.problem.options.linear_tol, max_iter: 50 * nf + 1000, zero_mean: false };
        let mut r = vec![0.0; nf];
        let mut s = vec![0.0; nf];
        let mut slope = 0.0;
        for i in 0..nf {
            let k = self.mesh.lattice_index(i);
            let m = self.weights[k];
            r[i] = m * (w[k] - w_prev[k] - dt * src[i]);
            s[i] = m * delta[i];
            slope += m * self.local(k).beta(w[k]) * delta[i];
        }
        let ar = solve_spd(a, &r, None, opts)?.x;
        let as_ = solve_spd(a, &s, None, opts)?.x;
        let s_ar: f64 = s.iter().zip(&ar).map(|(x, y)| x * y).sum();
        let s_as: f64 = s.iter().zip(&as_).map(|(x, y)| x * y).sum();
        slope += s_ar / dt;
        let conj0: Vec<f64> = (0..nf)
            .map(|i| {
                let k = self.mesh.lattice_index(i);
                self.local(k).conjugate(w[k])
            })
            .collect();
        let scale: f64 = (0..nf).map(|i| self.weights[self.mesh.lattice_index(i)] * conj0[i].abs()).sum::<f64>() + r.iter().zip(&ar).map(|(x, y)| x * y).sum::<f64>().abs() / dt;
        // Below rounding the energy cannot certify decrease; the residual test decides.
        if slope.abs() <= 1e-13 * (1.0 + scale) {
            return Ok(Some(1.0));
        }
        if slope >= 0.0 {
            return Ok(None);
        }
        let mut t = 1.0;
        while t >= 1.0 / 1024.0 {
            let mut diff = (2.0 * t * s_ar + t * t * s_as) / (2.0 * dt);
            for i in 0..nf {
                let k = self.mesh.lattice_index(i);
                diff += self.weights[k] * (self.local(k).conjugate(w[k] + t * delta[i]) - conj0[i]);
            }
            if diff <= 1e-4 * t * slope {
                return Ok(Some(t));
            }
            t *= 0.5;
        }
        Ok(None)
    }

    /// Semismooth Newton direction on interior nodes.
    ///
    /// With `D = β′(w)` and `J` the tangent stiffness, the Newton system is
    /// `(M + Δt J D) δ = −M F`. Writing `y = D δ` and `P = {D > 0}` gives the symmetric
    /// system `(M D⁻¹ + Δt J)_PP y_P = −(M F)_P`; off `P`, `δ = −F − Δt (J y) / m`.
    fn newton_direction(&self, w: &[f64], it: &Iterate, dt: f64) -> Result<Vec<f64>> {
        let nf = self.mesh.free_count();
        let d: Vec<f64> = (0..nf)
            .map(|i| {
                let k = self.mesh.lattice_index(i);
                self.local(k).beta_slope(w[k])
            })
            .collect();
        let jac = self.mesh.assemble(|q, _| {
            let mut t = it.eval.tangent[q];
            t.iter_mut().for_each(|v| *v *= dt);
            t
        });
        let active: Vec<usize> = (0..nf).filter(|&i| d[i] > 0.0).collect();
        let mass = |i: usize| self.weights[self.mesh.lattice_index(i)];
        let mut y_full = vec![0.0; nf];
        if !active.is_empty() {
            let sub = jac.principal_submatrix(&active);
            let diag: Vec<f64> = active.iter().map(|&i| mass(i) / d[i]).collect();
            let system = sub.add_diagonal(&diag);
            let rhs: Vec<f64> = active.iter().map(|&i| -mass(i) * it.residual[i]).collect();
            let opts = CgOptions { rel_tol: self.problem.options.linear_tol, max_iter: 50 * nf + 1000, zero_mean: false };
            let y = solve_spd(&system, &rhs, None, opts)?.x;
            for (&i, v) in active.iter().zip(y) {
                y_full[i] = v;
            }
        }
        let jy = jac.mul(&y_full);
        Ok((0..nf)
            .map(|i| if d[i] > 0.0 { y_full[i] / d[i] } else { -it.residual[i] - jy[i] / mass(i) })
            .collect())
    }

    /// A step of size `dt`, retried as two half steps on failure (recursively, up to the
    /// configured number of halvings).
    pub fn step(&self, w_prev: &[f64], u_prev: &[f64], dt: f64, time: f64, halvings_left: usize) -> Result<StepOutcome> {
        match self.step_once(w_prev, u_prev, dt, time) {
            Ok(out) => Ok(out),
            Err(Error::StepFailure { .. }) if halvings_left > 0 => {
                let first = self.step(w_prev, u_prev, 0.5 * dt, time - 0.5 * dt, halvings_left - 1)?;
                let second = self.step(&first.w, &first.u, 0.5 * dt, time, halvings_left - 1)?;
                let halvings = 1 + first.halvings.max(second.halvings);
                Ok(StepOutcome {
                    w: second.w,
                    u: second.u,
                    iterations: first.iterations + second.iterations,
                    residual: second.residual.max(first.residual),
                    halvings,
                    source_work: first.source_work + second.source_work,
                    source_integral: 0.5 * (first.source_integral + second.source_integral),
                })
            }
            Err(e) => Err(e),
        }
    }

    /// Diagnostics of a state; `prev` carries the previous record for the cumulative sums.
    fn diagnose(&self, w: &[f64], u: &[f64], t: f64, step: Option<(&StepDiagnostics, &StepOutcome, f64)>) -> Result<StepDiagnostics> {
        let n = self.problem.grid.dim;
        let eval = self.flux(u)?;
        let opts = &self.problem.options;
        let mut grad_sq = 0.0;
        let mut work = 0.0;
        let mut measure = 0.0;
        for (q, quad) in self.mesh.quads().iter().enumerate() {
            let g = eval.grads[q];
            let a = eval.flux[q];
            grad_sq += quad.weight * (0..n).map(|d| g[d] * g[d]).sum::<f64>();
            work += quad.weight * (0..n).map(|d| a[d] * g[d]).sum::<f64>();
            measure += quad.weight;
        }
        let div = self.mesh.transpose(&eval.flux);
        let mut l2 = 0.0;
        let mut free_energy = 0.0;
        let mut fenchel: f64 = 0.0;
        let mut inclusion: f64 = 0.0;
        let mut mass = 0.0;
        let mut boundary_flux = 0.0;
        for k in 0..w.len() {
            let local = self.local(k);
            let ws = self.weights[k];
            l2 += ws * w[k] * w[k];
            let conj = local.conjugate(w[k]);
            free_energy += ws * conj;
            let gap = (local.value(u[k]) + conj - u[k] * w[k]) / (1.0 + u[k] * u[k] + w[k] * w[k]);
            fenchel = fenchel.max(gap);
            let sub = local.subdifferential(u[k]);
            inclusion = inclusion.max((w[k] - sub.clamp(w[k])).abs() / (1.0 + w[k].abs()));
            if self.mesh.free_index(k).is_some() {
                mass += ws * w[k];
            } else {
                boundary_flux += div[k];
            }
        }
        let (cumulative_grad, source_work, mass_defect, nl_iters, residual, halvings) = match step {
            None => (0.0, 0.0, 0.0, 0, 0.0, 0),
            Some((prev, out, dt)) => (
                prev.cumulative_grad + dt * grad_sq,
                prev.source_work + out.source_work,
                (mass - prev.mass - dt * (boundary_flux + out.source_integral)).abs(),
                out.iterations,
                out.residual,
                out.halvings,
            ),
        };
        Ok(StepDiagnostics {
            t,
            l2_w: l2.sqrt(),
            grad_sq,
            cumulative_grad,
            energy: l2 + cumulative_grad,
            nl_iters,
            residual,
            fenchel_gap: fenchel,
            inclusion_gap: inclusion,
            free_energy,
            coercivity_slack: work - opts.c_alpha * grad_sq - opts.h_alpha * measure,
            boundary_flux,
            mass,
            mass_defect,
            source_work,
            halvings,
        })
    }

    /// Runs the scheme from `w0` over `[0, T]`.
    pub fn run(&self, w0: GridField) -> Result<Trajectory> {
        let p = self.problem;
        let lattice = p.grid.lattice();
        let steps = (p.t_final / p.dt).round().max(1.0) as usize;
        let dt = p.t_final / steps as f64;
        let u0 = self.temperature(&w0.values);
        let mut diagnostics = vec![self.diagnose(&w0.values, &u0, 0.0, None)?];
        let mut states = vec![EvolutionState { step: 0, time: 0.0, w: w0, u: GridField { lattice, values: u0 } }];
        for s in 1..=steps {
            let t = s as f64 * dt;
            let prev = states.last().expect("nonempty");
            let out = self.step(&prev.w.values, &prev.u.values, dt, t, p.options.max_halvings)?;
            let record = self.diagnose(&out.w, &out.u, t, Some((diagnostics.last().expect("nonempty"), &out, dt)))?;
            diagnostics.push(record);
            states.push(EvolutionState { step: s, time: t, w: GridField { lattice, values: out.w }, u: GridField { lattice, values: out.u } });
        }
        Ok(Trajectory { grid: p.grid, states, diagnostics })
    }
}

/// One implicit step from `state`.
pub fn step_implicit(problem: &EvolutionProblem, state: &EvolutionState) -> Result<EvolutionState> {
    let stepper = Stepper::new(problem)?;
    let time = state.time + problem.dt;
    let out = stepper.step(&state.w.values, &state.u.values, problem.dt, time, problem.options.max_halvings)?;
    let lattice = problem.grid.lattice();
    Ok(EvolutionState { step: state.step + 1, time, w: GridField { lattice, values: out.w }, u: GridField { lattice, values: out.u } })
}

pub fn solve_evolution(problem: &EvolutionProblem) -> Result<Trajectory> {
    let stepper = Stepper::new(problem)?;
    let w0 = stepper.initial_enthalpy()?;
    stepper.run(w0)
}

/// A run in the Kirchhoff variable `V = H(u)`.
#[derive(Clone, Debug)]
pub struct KirchhoffTrajectory {
    /// The transformed run; its `u` fields hold `V`.
    pub transformed: Trajectory,
    /// `u = H⁻¹(V)` at every recorded time.
    pub u: Vec<GridField>,
}

/// Solves a linear-flux problem `a = h(u) K(z) η` through `V = H(u) = ∫₀ᵘ h`: the flux becomes
/// `K(z) ∇V` and the inclusion `w ∈ ∂Ψ̃(V)` with `Ψ̃ = Ψ ∘ H⁻¹`.
pub fn solve_linear_kirchhoff(problem: &EvolutionProblem) -> Result<KirchhoffTrajectory> {
    let FluxModel::Linear { matrix } = &problem.flux else {
        return Err(Error::Unsupported("the Kirchhoff transformation needs a linear flux".into()));
    };
    let density = matrix.modulation.unwrap_or(Constitutive::Constant { value: 1.0 });
    if let PotentialKind::Kirchhoff { .. } = problem.potential.kind() {
        return Err(Error::Unsupported("the potential is already in Kirchhoff form".into()));
    }
    let map = KirchhoffMap::new(density)?;
    let kind = PotentialKind::Kirchhoff { base: Box::new(problem.potential.kind().clone()), density };
    let potential = ConvexPotential::new(kind, problem.potential.oscillation().cloned())?;
    let transformed_problem = EvolutionProblem {
        flux: FluxModel::Linear { matrix: matrix.clone().with_modulation(None) },
        potential,
        ..problem.clone()
    };
    let transformed = solve_evolution(&transformed_problem)?;
    let u = transformed
        .states
        .iter()
        .map(|s| GridField { lattice: s.u.lattice, values: s.u.values.iter().map(|&v| map.inverse(v)).collect() })
        .collect();
    Ok(KirchhoffTrajectory { transformed, u })
}
