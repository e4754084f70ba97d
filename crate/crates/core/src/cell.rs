//! Periodic cell problems: correctors, the effective tensor, and the homogenized
//! dissipation potential `ψ₀(η) = min_φ mean ψ(z, η + ∇φ)`.
//!
//! All cell computations use the quadrature mesh of [`crate::grid::mesh`]: coefficients are
//! sampled at cell centers and gradients are cell-edge differences, so the discrete
//! corrector problem is the exact minimizer of the discrete energy.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FluxSpec, InitialSpec, ProblemSpec, SourceSpec};
use crate::convex::{averaged_potential, ConvexPotential};
use crate::fields::{symmetric_eigen_bounds, Constitutive, MatrixField, Mode, OscillatoryField};
use crate::grid::linalg::{pcg_csr, CgOptions};
use crate::grid::mesh::QuadMesh;
use crate::grid::{CellGrid, GridField};
use crate::{Error, Result};

/// Correctors `W_i` (one per axis) on a cell grid.
#[derive(Clone, Debug)]
pub struct CorrectorSet {
    pub grid: CellGrid,
    pub correctors: Vec<GridField>,
    /// Relative residual of each discrete cell equation.
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
}

fn tensor_at(k: &MatrixField, z: &[f64; 2]) -> [f64; 4] {
    let n = k.dimension();
    let mut out = [0.0; 4];
    k.eval_into(&z[..n], &mut out[..n * n]);
    out
}

/// Solves `∫ [K(e_i + ∇W_i)]·∇φ = 0` for every periodic `φ`, with zero-mean `W_i`.
///
/// The scalar `u`-modulation of `K` does not change the correctors (it scales the equation),
/// so it is not an argument here.
pub fn solve_corrector(grid: &CellGrid, k: &MatrixField, rel_tol: f64) -> Result<CorrectorSet> {
    let n = grid.dim;
    if k.dimension() != n {
        return Err(Error::DimensionMismatch { expected: n, got: k.dimension() });
    }
    let lattice = grid.lattice();
    let mesh = QuadMesh::new(lattice);
    let tensors: Vec<[f64; 4]> = mesh.quads().iter().map(|q| tensor_at(k, &q.center)).collect();
    let matrix = mesh.assemble(|i, _| tensors[i]);
    let solve_axis = |axis: usize| -> Result<(GridField, f64, usize)> {
        let flux: Vec<[f64; 2]> = tensors
            .iter()
            .map(|t| {
                let mut f = [0.0; 2];
                for (d, fd) in f.iter_mut().enumerate().take(n) {
                    *fd = -t[d * n + axis];
                }
                f
            })
            .collect();
        let b = mesh.transpose(&flux);
        let out = pcg_csr(&matrix, &b, None, CgOptions { rel_tol, max_iter: 100_000, zero_mean: true }).map_err(|e| match e {
            Error::CgNotConverged { iterations, residual } => Error::InvalidArgument(format!(
                "cell problem did not converge ({iterations} iterations, residual {residual:e}); \
                 the cell grid may not resolve the coefficient frequencies"
            )),
            other => other,
        })?;
        Ok((GridField { lattice, values: out.x }, out.residual, out.iterations))
    };
    let results: Vec<Result<(GridField, f64, usize)>> = (0..n).into_par_iter().map(solve_axis).collect();
    let mut set = CorrectorSet { grid: grid.clone(), correctors: Vec::new(), residuals: Vec::new(), iterations: Vec::new() };
    for r in results {
        let (w, res, it) = r?;
        set.correctors.push(w);
        set.residuals.push(res);
        set.iterations.push(it);
    }
    Ok(set)
}

/// `K₀_ij = mean[(e_i + ∇W_i)·K(e_j + ∇W_j)]`, row-major.
pub fn effective_tensor(grid: &CellGrid, k: &MatrixField, correctors: &CorrectorSet) -> Result<Vec<f64>> {
    let n = grid.dim;
    if correctors.correctors.len() != n || correctors.grid != *grid {
        return Err(Error::InvalidArgument("correctors were not solved on this grid".into()));
    }
    let mesh = QuadMesh::new(grid.lattice());
    let grads: Vec<Vec<[f64; 2]>> = correctors.correctors.iter().map(|w| mesh.gradient_at_quads(&w.values)).collect();
    let measure = grid.lattice().measure();
    let mut k0 = vec![0.0; n * n];
    for (qi, q) in mesh.quads().iter().enumerate() {
        let t = tensor_at(k, &q.center);
        let e = |i: usize| {
            let mut v = grads[i][qi];
            v[i] += 1.0;
            v
        };
        for i in 0..n {
            let ei = e(i);
            for j in 0..n {
                let ej = e(j);
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s += ei[a] * t[a * n + b] * ej[b];
                    }
                }
                k0[i * n + j] += q.weight * s;
            }
        }
    }
    k0.iter_mut().for_each(|v| *v /= measure);
    Ok(k0)
}

/// Arithmetic (Voigt) and harmonic (Reuss) means of `K` under the same cell quadrature.
pub fn voigt_reuss(grid: &CellGrid, k: &MatrixField) -> (Vec<f64>, Vec<f64>) {
    let n = grid.dim;
    let mesh = QuadMesh::new(grid.lattice());
    let measure = grid.lattice().measure();
    let mut mean = vec![0.0; n * n];
    let mut mean_inv = vec![0.0; n * n];
    for q in mesh.quads() {
        let t = tensor_at(k, &q.center);
        let inv = invert(&t[..n * n], n);
        for i in 0..n * n {
            mean[i] += q.weight * t[i] / measure;
            mean_inv[i] += q.weight * inv[i] / measure;
        }
    }
    (mean, invert(&mean_inv, n))
}

fn invert(m: &[f64], n: usize) -> Vec<f64> {
    if n == 1 {
        vec![1.0 / m[0]]
    } else {
        let det = m[0] * m[3] - m[1] * m[2];
        vec![m[3] / det, -m[1] / det, -m[2] / det, m[0] / det]
    }
}

/// Continued-fraction approximation `p/q` of `x` with `q ≤ max_q` (last convergent).
pub fn rationalize(x: f64, max_q: u64) -> (i64, u64) {
    let sign = if x < 0.0 { -1 } else { 1 };
    let mut r = x.abs();
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1u64, 1i64, 0u64);
    for _ in 0..64 {
        let a = r.floor();
        let (p2, q2) = (a as i64 * p1 + p0, a as u64 * q1 + q0);
        if q2 > max_q {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let frac = r - a;
        if frac < 1e-12 {
            break;
        }
        r = 1.0 / frac;
    }
    if q1 == 0 {
        return (0, 1);
    }
    (sign * p1, q1)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Commensurate surrogate of a matrix field: every frequency is replaced by `2π p/q` with
/// `q ≤ max_q`, and the period per axis is the lcm of the denominators.
#[derive(Clone, Debug, Serialize)]
pub struct Rationalization {
    #[serde(skip)]
    pub field: MatrixField,
    pub period: [f64; 2],
    /// Largest frequency change (radians per unit length).
    pub frequency_error: f64,
}

pub fn rationalize_field(k: &MatrixField, max_q: u64) -> Rationalization {
    let n = k.dimension();
    let tau = 2.0 * std::f64::consts::PI;
    let mut period = [1u64; 2];
    let mut error: f64 = 0.0;
    let mut entries = k.entries.clone();
    for f in entries.iter_mut().flatten() {
        let modes: Vec<Mode> = f
            .modes()
            .iter()
            .map(|m| {
                let mut m = m.clone();
                for (d, kd) in m.frequency.iter_mut().enumerate() {
                    let (p, q) = rationalize(*kd / tau, max_q);
                    let new = tau * p as f64 / q as f64;
                    error = error.max((new - *kd).abs());
                    *kd = new;
                    period[d] = period[d] / gcd(period[d], q) * q;
                }
                m
            })
            .collect();
        // Rationalization can send a small frequency to zero; fold such modes into the constant.
        let (zero, nonzero): (Vec<Mode>, Vec<Mode>) = modes.into_iter().partition(|m| m.frequency.iter().all(|&v| v == 0.0));
        let constant = f.constant_term() + zero.iter().map(|m| m.amplitude * m.waveform.apply(m.phase)).sum::<f64>();
        *f = OscillatoryField::try_new(n, constant, nonzero).expect("rationalized modes are valid");
    }
    Rationalization {
        field: MatrixField { entries, modulation: k.modulation },
        period: [period[0] as f64, if n == 2 { period[1] as f64 } else { 1.0 }],
        frequency_error: error,
    }
}

/// Cell-problem summary for one rationalization bound.
#[derive(Clone, Debug, Serialize)]
pub struct CellSolution {
    pub q_bound: u64,
    pub period: [f64; 2],
    pub nodes_per_axis: usize,
    pub frequency_error: f64,
    pub k0: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    pub corrector_means: Vec<f64>,
}

/// Full effective-tensor report.
#[derive(Clone, Debug, Serialize)]
pub struct CellReport {
    pub dimension: usize,
    pub nodes_per_unit: usize,
    pub k0: Vec<f64>,
    pub symmetric: bool,
    pub eigen_bounds: (f64, f64),
    pub voigt: Vec<f64>,
    pub reuss: Vec<f64>,
    pub bounds_hold: bool,
    pub primary: CellSolution,
    /// The same computation at half the rationalization bound (quasi-periodic fields only).
    pub coarse: Option<CellSolution>,
    pub q_sensitivity: Option<f64>,
}

fn solve_rationalized(k: &MatrixField, dim: usize, nodes_per_unit: usize, q: u64, max_nodes: usize, rel_tol: f64) -> Result<(CellSolution, CellGrid, MatrixField)> {
    let rat = rationalize_field(k, q);
    let per_axis: Vec<usize> = (0..dim).map(|d| (nodes_per_unit as f64 * rat.period[d]).round() as usize).collect();
    if per_axis.iter().any(|&m| m != per_axis[0]) {
        return Err(Error::Unsupported(format!("supercell periods {:?} differ between axes", &rat.period[..dim])));
    }
    let m = per_axis[0];
    if m.pow(dim as u32) > max_nodes {
        return Err(Error::GridTooLarge(format!(
            "supercell of period {:?} needs {} nodes (limit {max_nodes}); lower the rationalization bound",
            &rat.period[..dim],
            m.pow(dim as u32)
        )));
    }
    let grid = CellGrid::with_period(dim, m, rat.period)?;
    let set = solve_corrector(&grid, &rat.field, rel_tol)?;
    let k0 = effective_tensor(&grid, &rat.field, &set)?;
    let sol = CellSolution {
        q_bound: q,
        period: rat.period,
        nodes_per_axis: m,
        frequency_error: rat.frequency_error,
        k0,
        residuals: set.residuals.clone(),
        iterations: set.iterations.clone(),
        corrector_means: set.correctors.iter().map(|w| w.values.iter().sum::<f64>() / w.values.len() as f64).collect(),
    };
    Ok((sol, grid, rat.field))
}

/// Computes `K₀` for a matrix field, rationalizing quasi-periodic frequencies.
pub fn cell_report(k: &MatrixField, nodes_per_unit: usize, q: u64, max_nodes: usize, rel_tol: f64) -> Result<CellReport> {
    let dim = k.dimension();
    let (primary, grid, field) = solve_rationalized(k, dim, nodes_per_unit, q, max_nodes, rel_tol)?;
    let quasi = primary.frequency_error > 0.0;
    let coarse = if quasi && q >= 2 { Some(solve_rationalized(k, dim, nodes_per_unit, q / 2, max_nodes, rel_tol)?.0) } else { None };
    let q_sensitivity = coarse
        .as_ref()
        .map(|c| c.k0.iter().zip(&primary.k0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    let (voigt, reuss) = voigt_reuss(&grid, &field);
    let k0 = primary.k0.clone();
    let n = dim;
    let symmetric = (0..n).all(|i| (0..n).all(|j| (k0[i * n + j] - k0[j * n + i]).abs() <= 1e-10 * (1.0 + k0[i * n + j].abs())));
    let dif = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
    let slack = 1e-8;
    let upper = symmetric_eigen_bounds(&dif(&voigt, &k0), n).0 >= -slack;
    let lower = symmetric_eigen_bounds(&dif(&k0, &reuss), n).0 >= -slack;
    Ok(CellReport {
        dimension: dim,
        nodes_per_unit,
        eigen_bounds: symmetric_eigen_bounds(&k0, n),
        k0,
        symmetric,
        voigt,
        reuss,
        bounds_hold: upper && lower,
        primary,
        coarse,
        q_sensitivity,
    })
}

/// Dissipation potentials `ψ(z, v, η) = g(z) m(v) φ(z, η)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DissipationKind {
    /// `φ = ½ [K(z) η]·η`.
    Quadratic { matrix: MatrixField },
    /// `φ = ½|η|² + μ(√(1 + |η|²) − 1)`.
    Regularized { mu: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationPotential {
    pub kind: DissipationKind,
    /// Fast-variable multiplier `g(z) > 0`; absent means 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oscillation: Option<OscillatoryField>,
    /// `m(v)`; absent means 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<Constitutive>,
}

/// Value, gradient and Hessian of `ψ` in `η` at one point.
#[derive(Clone, Copy, Debug)]
pub struct PsiEval {
    pub value: f64,
    pub gradient: [f64; 2],
    pub hessian: [f64; 4],
}

impl DissipationPotential {
    pub fn quadratic(matrix: MatrixField) -> Self {
        DissipationPotential { kind: DissipationKind::Quadratic { matrix }, oscillation: None, modulation: None }
    }

    pub fn dimension(&self) -> Option<usize> {
        match &self.kind {
            DissipationKind::Quadratic { matrix } => Some(matrix.dimension()),
            DissipationKind::Regularized { .. } => self.oscillation.as_ref().map(OscillatoryField::dimension),
        }
    }

    pub fn modulation_value(&self, v: f64) -> f64 {
        self.modulation.map_or(1.0, |m| m.eval(v))
    }

    /// The fast-variable part at `z` without the modulation `m(v)`.
    pub fn eval_unmodulated(&self, z: &[f64], eta: &[f64]) -> PsiEval {
        let n = eta.len();
        let g = self.oscillation.as_ref().map_or(1.0, |o| o.value(z));
        let mut out = PsiEval { value: 0.0, gradient: [0.0; 2], hessian: [0.0; 4] };
        match &self.kind {
            DissipationKind::Quadratic { matrix } => {
                let mut k = [0.0; 4];
                matrix.eval_into(z, &mut k[..n * n]);
                for i in 0..n {
                    for j in 0..n {
                        // Symmetric part: ψ only sees it.
                        let s = 0.5 * (k[i * n + j] + k[j * n + i]) * g;
                        out.hessian[i * n + j] = s;
                        out.gradient[i] += s * eta[j];
                        out.value += 0.5 * eta[i] * s * eta[j];
                    }
                }
            }
            DissipationKind::Regularized { mu } => {
                let r2: f64 = eta.iter().map(|e| e * e).sum();
                let root = (1.0 + r2).sqrt();
                out.value = g * (0.5 * r2 + mu * (root - 1.0));
                for i in 0..n {
                    out.gradient[i] = g * eta[i] * (1.0 + mu / root);
                    for j in 0..n {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        out.hessian[i * n + j] = g * (delta * (1.0 + mu / root) - mu * eta[i] * eta[j] / (root * root * root));
                    }
                }
            }
        }
        out
    }

    pub fn eval(&self, z: &[f64], v: f64, eta: &[f64]) -> PsiEval {
        let m = self.modulation_value(v);
        let mut e = self.eval_unmodulated(z, eta);
        e.value *= m;
        e.gradient.iter_mut().for_each(|x| *x *= m);
        e.hessian.iter_mut().for_each(|x| *x *= m);
        e
    }

    pub(crate) fn check(&self, dim: usize) -> std::result::Result<(), String> {
        if let DissipationKind::Regularized { mu } = self.kind {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(format!("regularization weight must be nonnegative, got {mu}"));
            }
        }
        if let DissipationKind::Quadratic { matrix } = &self.kind {
            if matrix.dimension() != dim {
                return Err(format!("matrix dimension {} differs from problem dimension {dim}", matrix.dimension()));
            }
            matrix.check().map_err(|e| e.to_string())?;
        }
        if let Some(o) = &self.oscillation {
            o.check().map_err(|e| e.to_string())?;
            if o.lower_bound() <= 0.0 {
                return Err("dissipation multiplier must be bounded below by a positive constant".into());
            }
        }
        if let Some(m) = &self.modulation {
            m.check()?;
        }
        Ok(())
    }

    pub(crate) fn infer_dimension(&mut self, dim: usize) {
        if let DissipationKind::Quadratic { matrix } = &mut self.kind {
            matrix.infer_dimension();
        }
        if let Some(o) = &mut self.oscillation {
            o.infer_dimension(dim);
        }
    }

    /// All fast-variable fields (for rationalization and resolution checks).
    pub fn fields(&self) -> Vec<&OscillatoryField> {
        let mut out: Vec<&OscillatoryField> = match &self.kind {
            DissipationKind::Quadratic { matrix } => matrix.all_fields().collect(),
            DissipationKind::Regularized { .. } => Vec::new(),
        };
        out.extend(self.oscillation.iter());
        out
    }
}

/// The minimizer of the cell energy at one `(v, η)`.
#[derive(Clone, Debug)]
pub struct Psi0Solution {
    pub value: f64,
    pub subgradient: Vec<f64>,
    pub phi: GridField,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Newton–CG minimization of `J(φ) = mean ψ(z, v, η + ∇φ)` over zero-mean periodic `φ`.
///
/// Each Newton system is solved by Jacobi-preconditioned CG with the zero-mean projection;
/// Armijo backtracking keeps the iteration monotone. Stops when the mass-normalized RMS
/// gradient is at most `tol·(1 + |J|)`.
pub fn psi0_solve(grid: &CellGrid, psi: &DissipationPotential, v: f64, eta: &[f64], tol: f64) -> Result<Psi0Solution> {
    let n = grid.dim;
    if eta.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: eta.len() });
    }
    let lattice = grid.lattice();
    let mesh = QuadMesh::new(lattice);
    let measure = lattice.measure();
    let node_mass = lattice.weight(0) / measure;
    let quads = mesh.quads();
    let zs: Vec<[f64; 2]> = quads.iter().map(|q| q.center).collect();
    let m = psi.modulation_value(v);
    let eval_all = |phi: &[f64]| -> Vec<PsiEval> {
        let g = mesh.gradient_at_quads(phi);
        zs.iter()
            .zip(&g)
            .map(|(z, gq)| {
                let mut e = [0.0; 2];
                for d in 0..n {
                    e[d] = eta[d] + gq[d];
                }
                psi.eval_unmodulated(&z[..n], &e[..n])
            })
            .collect()
    };
    let objective = |ev: &[PsiEval]| quads.iter().zip(ev).map(|(q, e)| q.weight * e.value).sum::<f64>() / measure;
    let gradient = |ev: &[PsiEval]| {
        let flux: Vec<[f64; 2]> = ev.iter().map(|e| e.gradient).collect();
        let mut g = mesh.transpose(&flux);
        g.iter_mut().for_each(|x| *x /= measure);
        g
    };
    let rms = |g: &[f64]| (g.iter().map(|x| (x / node_mass).powi(2)).sum::<f64>() / g.len() as f64).sqrt();

    let mut phi = vec![0.0; lattice.count()];
    let mut ev = eval_all(&phi);
    let mut j = objective(&ev);
    let mut g = gradient(&ev);
    let mut gnorm = rms(&g);
    let mut iterations = 0;
    while gnorm > tol * (1.0 + j.abs()) {
        if iterations >= 200 {
            return Err(Error::LineSearch { iterations, gradient_norm: gnorm });
        }
        iterations += 1;
        let hess = mesh.assemble(|k, _| {
            let mut h = ev[k].hessian;
            h.iter_mut().for_each(|x| *x /= measure);
            h
        });
        let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        let dir = pcg_csr(&hess, &rhs, None, CgOptions { rel_tol: 1e-12, max_iter: 100_000, zero_mean: true })?.x;
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            return Err(Error::LineSearch { iterations, gradient_norm: gnorm });
        }
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = phi.iter().zip(&dir).map(|(p, d)| p + step * d).collect();
            let trial_ev = eval_all(&trial);
            let tj = objective(&trial_ev);
            if tj <= j + 1e-4 * step * slope || (tj - j).abs() <= 1e-15 * (1.0 + j.abs()) {
                phi = trial;
                ev = trial_ev;
                j = tj;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return Err(Error::LineSearch { iterations, gradient_norm: gnorm });
            }
        }
        g = gradient(&ev);
        gnorm = rms(&g);
    }
    let mut subgradient = vec![0.0; n];
    for (q, e) in quads.iter().zip(&ev) {
        for d in 0..n {
            subgradient[d] += q.weight * e.gradient[d] / measure;
        }
    }
    subgradient.iter_mut().for_each(|x| *x *= m);
    Ok(Psi0Solution { value: m * j, subgradient, phi: GridField { lattice, values: phi }, iterations, gradient_norm: gnorm })
}

pub fn psi0_value(grid: &CellGrid, psi: &DissipationPotential, v: f64, eta: &[f64], tol: f64) -> Result<f64> {
    Ok(psi0_solve(grid, psi, v, eta, tol)?.value)
}

pub fn psi0_subgradient(grid: &CellGrid, psi: &DissipationPotential, v: f64, eta: &[f64], tol: f64) -> Result<Vec<f64>> {
    Ok(psi0_solve(grid, psi, v, eta, tol)?.subgradient)
}

/// On-demand table of the homogenized flux `q̄(η) = ∂ψ₀(η)` (without the `m(v)` factor,
/// which factors out of the cell problem), on a lattice of step `step` in `η` with
/// multilinear interpolation.
///
/// Each entry is computed independently from scratch, so table values never depend on the
/// order in which entries are requested.
#[derive(Debug)]
pub struct Psi0Cache {
    grid: CellGrid,
    psi: DissipationPotential,
    step: f64,
    tol: f64,
    table: Mutex<HashMap<[i64; 2], [f64; 2]>>,
}

impl Psi0Cache {
    pub fn new(grid: CellGrid, psi: DissipationPotential, step: f64, tol: f64) -> Self {
        let mut psi = psi;
        psi.modulation = None;
        Psi0Cache { grid, psi, step, tol, table: Mutex::new(HashMap::new()) }
    }

    pub fn dimension(&self) -> usize {
        self.grid.dim
    }

    fn entry(&self, key: [i64; 2]) -> Result<[f64; 2]> {
        if let Some(v) = self.table.lock().expect("cache lock").get(&key) {
            return Ok(*v);
        }
        let n = self.grid.dim;
        let eta: Vec<f64> = (0..n).map(|d| key[d] as f64 * self.step).collect();
        let sol = psi0_solve(&self.grid, &self.psi, 0.0, &eta, self.tol)?;
        let mut v = [0.0; 2];
        v[..n].copy_from_slice(&sol.subgradient);
        self.table.lock().expect("cache lock").insert(key, v);
        Ok(v)
    }

    /// Interpolated `q̄(η)` and its Jacobian (slopes of the interpolant), row-major.
    pub fn flux(&self, eta: &[f64]) -> Result<([f64; 2], [f64; 4])> {
        let n = self.grid.dim;
        let s = self.step;
        let base: Vec<i64> = eta.iter().map(|e| (e / s).floor() as i64).collect();
        let frac: Vec<f64> = eta.iter().zip(&base).map(|(e, b)| e / s - *b as f64).collect();
        let mut q = [0.0; 2];
        let mut jac = [0.0; 4];
        let corners = 1usize << n;
        for c in 0..corners {
            let mut key = [0i64; 2];
            let mut w = 1.0;
            let mut dw = [0.0; 2];
            for d in 0..n {
                let bit = (c >> d) & 1;
                key[d] = base[d] + bit as i64;
                w *= if bit == 1 { frac[d] } else { 1.0 - frac[d] };
            }
            for (d, dwd) in dw.iter_mut().enumerate().take(n) {
                let mut prod = 1.0;
                for e in 0..n {
                    let bit = (c >> e) & 1;
                    prod *= if e == d {
                        if bit == 1 {
                            1.0 / s
                        } else {
                            -1.0 / s
                        }
                    } else if bit == 1 {
                        frac[e]
                    } else {
                        1.0 - frac[e]
                    };
                }
                *dwd = prod;
            }
            let v = self.entry(key)?;
            for i in 0..n {
                q[i] += w * v[i];
                for d in 0..n {
                    jac[i * n + d] += dw[d] * v[i];
                }
            }
        }
        Ok((q, jac))
    }

    pub fn len(&self) -> usize {
        self.table.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The homogenized flux.
#[derive(Clone, Debug)]
pub enum EffectiveFlux {
    /// `h(u) K₀ η` from the cell problem.
    Tensor { k0: Vec<f64>, modulation: Option<Constitutive>, report: Box<CellReport>, kirchhoff: bool },
    /// `m(u) ∂ψ₀(η)` from the ψ₀ table.
    Psi0 { cache: Arc<Psi0Cache>, modulation: Option<Constitutive> },
}

/// Averaged data of a problem: the effective flux, `Ψ̄`, `f̄` and `w̄₀`.
#[derive(Clone, Debug)]
pub struct EffectiveModel {
    pub flux: EffectiveFlux,
    pub potential: ConvexPotential,
    pub source: SourceSpec,
    pub initial: InitialSpec,
}

pub fn is_unit_periodic(f: &OscillatoryField) -> bool {
    let tau = 2.0 * std::f64::consts::PI;
    f.modes().iter().all(|m| m.frequency.iter().all(|k| {
        let c = k / tau;
        (c - c.round()).abs() < 1e-12
    }))
}

/// Builds the homogenized model. Linear fluxes go through the corrector problem (with
/// rationalization of quasi-periodic coefficients); general fluxes get a ψ₀ table on a
/// unit cell of `cell.psi0_nodes` nodes per axis.
pub fn build_effective_model(spec: &ProblemSpec) -> Result<EffectiveModel> {
    let n = spec.dimension;
    let flux = match &spec.flux {
        FluxSpec::Linear { matrix, kirchhoff } => {
            let report = cell_report(matrix, spec.cell.nodes, spec.cell.rational_q, spec.cell.max_nodes, spec.tolerances.cell_cg)?;
            EffectiveFlux::Tensor { k0: report.k0.clone(), modulation: matrix.modulation, report: Box::new(report), kirchhoff: *kirchhoff }
        }
        FluxSpec::Potential { psi } => {
            if !psi.fields().iter().all(|f| is_unit_periodic(f)) {
                return Err(Error::Unsupported(
                    "ψ₀ tables need 1-periodic dissipation fields (frequencies multiples of 2π)".into(),
                ));
            }
            let grid = CellGrid::new(n, spec.cell.psi0_nodes)?;
            let cache = Psi0Cache::new(grid, psi.clone(), spec.tolerances.psi0_step, spec.tolerances.psi0_gradient);
            EffectiveFlux::Psi0 { cache: Arc::new(cache), modulation: psi.modulation }
        }
    };
    Ok(EffectiveModel {
        flux,
        potential: averaged_potential(&spec.potential),
        source: spec.source.averaged(),
        initial: spec.initial.averaged(),
    })
}
