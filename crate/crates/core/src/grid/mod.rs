//! Uniform tensor grids on the unit box (homogeneous Dirichlet) and on the periodic cell.
//!
//! Nodes are stored row-major with the last axis fastest. Node-centered `gradient` and
//! `divergence` use central differences, are exactly (negative) adjoint in the
//! trapezoid-weighted inner product, and back the Helmholtz decomposition. Elliptic
//! solves go through the quadrature mesh in [`mesh`].

pub mod io;
pub mod linalg;
pub mod mesh;

use serde::Serialize;

use crate::{Error, Result};
use linalg::{pcg, solve_spd, CgOptions, Csr};
use mesh::QuadMesh;

/// Shape of a node lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Lattice {
    pub dim: usize,
    /// Nodes per axis.
    pub nodes: usize,
    pub spacing: [f64; 2],
    pub periodic: bool,
}

impl Lattice {
    /// `intervals + 1` nodes per axis on `[0, 1]ⁿ`, boundary nodes included.
    pub fn dirichlet(dim: usize, intervals: usize) -> Self {
        let h = 1.0 / intervals as f64;
        Lattice { dim, nodes: intervals + 1, spacing: [h, if dim == 2 { h } else { 1.0 }], periodic: false }
    }

    /// `nodes` per axis on the box `Π [0, period_d)` with wraparound.
    pub fn periodic(dim: usize, nodes: usize, period: [f64; 2]) -> Self {
        let h = [period[0] / nodes as f64, if dim == 2 { period[1] / nodes as f64 } else { 1.0 }];
        Lattice { dim, nodes, spacing: h, periodic: true }
    }

    pub fn count(&self) -> usize {
        self.nodes.pow(self.dim as u32)
    }

    #[inline]
    pub fn multi_index(&self, k: usize) -> [usize; 2] {
        if self.dim == 1 {
            [k, 0]
        } else {
            [k / self.nodes, k % self.nodes]
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        if self.dim == 1 {
            i
        } else {
            i * self.nodes + j
        }
    }

    /// Coordinates of node `k` (exactly `i·Δx` per axis).
    #[inline]
    pub fn coords(&self, k: usize) -> [f64; 2] {
        let [i, j] = self.multi_index(k);
        [i as f64 * self.spacing[0], if self.dim == 2 { j as f64 * self.spacing[1] } else { 0.0 }]
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        if self.periodic {
            return false;
        }
        let last = self.nodes - 1;
        let m = self.multi_index(k);
        m[..self.dim].iter().any(|&i| i == 0 || i == last)
    }

    /// Trapezoid weight of node `k` (uniform on periodic lattices).
    pub fn weight(&self, k: usize) -> f64 {
        let m = self.multi_index(k);
        (0..self.dim)
            .map(|d| {
                let end = !self.periodic && (m[d] == 0 || m[d] == self.nodes - 1);
                if end {
                    0.5 * self.spacing[d]
                } else {
                    self.spacing[d]
                }
            })
            .product()
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.count()).map(|k| self.weight(k)).collect()
    }

    pub fn measure(&self) -> f64 {
        (0..self.dim).map(|d| self.spacing[d] * if self.periodic { self.nodes } else { self.nodes - 1 } as f64).product()
    }

    /// Neighbor index along axis `d` at offset ±1, wrapping on periodic lattices.
    #[inline]
    fn neighbor(&self, k: usize, d: usize, forward: bool) -> Option<usize> {
        let mut m = self.multi_index(k);
        let n = self.nodes;
        if forward {
            if m[d] + 1 == n {
                if !self.periodic {
                    return None;
                }
                m[d] = 0;
            } else {
                m[d] += 1;
            }
        } else if m[d] == 0 {
            if !self.periodic {
                return None;
            }
            m[d] = n - 1;
        } else {
            m[d] -= 1;
        }
        Some(self.index(m[0], m[1]))
    }
}

/// The physical domain `(0, 1)ⁿ` with homogeneous Dirichlet data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DomainGrid {
    pub dim: usize,
    /// Intervals per axis; `Δx = 1/N`.
    pub intervals: usize,
}

impl DomainGrid {
    pub fn new(dim: usize, intervals: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidArgument(format!("dimension must be 1 or 2, got {dim}")));
        }
        if intervals < 4 {
            return Err(Error::InvalidArgument(format!("domain grid needs N >= 4, got {intervals}")));
        }
        Ok(DomainGrid { dim, intervals })
    }

    pub fn lattice(&self) -> Lattice {
        Lattice::dirichlet(self.dim, self.intervals)
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.intervals as f64
    }

    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> GridField {
        GridField::sample(self.lattice(), f)
    }
}

/// The periodic cell `Π [0, period_d)` with `M` nodes per axis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellGrid {
    pub dim: usize,
    pub nodes: usize,
    pub period: [f64; 2],
}

impl CellGrid {
    pub fn new(dim: usize, nodes: usize) -> Result<Self> {
        Self::with_period(dim, nodes, [1.0, 1.0])
    }

    pub fn with_period(dim: usize, nodes: usize, period: [f64; 2]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidArgument(format!("dimension must be 1 or 2, got {dim}")));
        }
        if nodes < 8 {
            return Err(Error::InvalidArgument(format!("cell grid needs M >= 8, got {nodes}")));
        }
        if period[..dim].iter().any(|p| !(*p > 0.0)) {
            return Err(Error::InvalidArgument("cell period must be positive".into()));
        }
        Ok(CellGrid { dim, nodes, period })
    }

    pub fn lattice(&self) -> Lattice {
        Lattice::periodic(self.dim, self.nodes, self.period)
    }

    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> GridField {
        GridField::sample(self.lattice(), f)
    }
}

/// Scalar values at every lattice node.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.count() {
            return Err(Error::DimensionMismatch { expected: lattice.count(), got: values.len() });
        }
        Ok(GridField { lattice, values })
    }

    pub fn zeros(lattice: Lattice) -> Self {
        GridField { lattice, values: vec![0.0; lattice.count()] }
    }

    pub fn sample(lattice: Lattice, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..lattice.count()).map(|k| f(&lattice.coords(k)[..lattice.dim])).collect();
        GridField { lattice, values }
    }

    /// Discrete mean with trapezoid weights.
    pub fn mean(&self) -> f64 {
        inner_weighted(&self.lattice, &self.values, &vec![1.0; self.values.len()]) / self.lattice.measure()
    }
}

/// One scalar component per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub lattice: Lattice,
    pub components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(lattice: Lattice) -> Self {
        VectorField { lattice, components: vec![vec![0.0; lattice.count()]; lattice.dim] }
    }

    pub fn sample(lattice: Lattice, f: impl Fn(&[f64]) -> [f64; 2]) -> Self {
        let mut out = Self::zeros(lattice);
        for k in 0..lattice.count() {
            let v = f(&lattice.coords(k)[..lattice.dim]);
            for d in 0..lattice.dim {
                out.components[d][k] = v[d];
            }
        }
        out
    }

    pub fn mean(&self) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| inner_weighted(&self.lattice, c, &vec![1.0; c.len()]) / self.lattice.measure())
            .collect()
    }
}

fn inner_weighted(lattice: &Lattice, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).enumerate().map(|(k, (x, y))| lattice.weight(k) * x * y).sum()
}

/// Trapezoid-weighted inner product of scalar fields.
pub fn inner(a: &GridField, b: &GridField) -> Result<f64> {
    check_same(&a.lattice, &b.lattice)?;
    Ok(inner_weighted(&a.lattice, &a.values, &b.values))
}

/// Trapezoid-weighted inner product of vector fields.
pub fn inner_vector(a: &VectorField, b: &VectorField) -> Result<f64> {
    check_same(&a.lattice, &b.lattice)?;
    Ok(a.components.iter().zip(&b.components).map(|(x, y)| inner_weighted(&a.lattice, x, y)).sum())
}

fn check_same(a: &Lattice, b: &Lattice) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a.count(), got: b.count() });
    }
    Ok(())
}

/// Node-centered gradient: central differences in the interior, one-sided at Dirichlet
/// boundaries, wraparound on periodic lattices.
pub fn gradient(f: &GridField) -> VectorField {
    let lat = f.lattice;
    let mut out = VectorField::zeros(lat);
    for d in 0..lat.dim {
        let h = lat.spacing[d];
        for k in 0..lat.count() {
            out.components[d][k] = match (lat.neighbor(k, d, false), lat.neighbor(k, d, true)) {
                (Some(m), Some(p)) => (f.values[p] - f.values[m]) / (2.0 * h),
                (None, Some(p)) => (f.values[p] - f.values[k]) / h,
                (Some(m), None) => (f.values[k] - f.values[m]) / h,
                (None, None) => 0.0,
            };
        }
    }
    out
}

/// Node-centered divergence, the negative adjoint of [`gradient`] on fields vanishing at
/// Dirichlet boundaries: central differences at interior nodes; one-sided at boundary nodes.
pub fn divergence(field: &VectorField) -> GridField {
    let lat = field.lattice;
    let mut out = GridField::zeros(lat);
    for d in 0..lat.dim {
        let h = lat.spacing[d];
        let c = &field.components[d];
        for k in 0..lat.count() {
            out.values[k] += match (lat.neighbor(k, d, false), lat.neighbor(k, d, true)) {
                (Some(m), Some(p)) => (c[p] - c[m]) / (2.0 * h),
                (None, Some(p)) => (c[p] - c[k]) / h,
                (Some(m), None) => (c[k] - c[m]) / h,
                (None, None) => 0.0,
            };
        }
    }
    out
}

/// `(∫ |f|ᵖ)^{1/p}` by the trapezoidal rule.
pub fn lp_norm(f: &GridField, p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("p must lie in [1, ∞), got {p}")));
    }
    let s: f64 = f.values.iter().enumerate().map(|(k, v)| f.lattice.weight(k) * v.abs().powf(p)).sum();
    Ok(s.powf(1.0 / p))
}

/// `‖∇f‖_{L²}` with cell-edge differences (the quadrature-mesh gradient).
pub fn h1_seminorm(f: &GridField) -> f64 {
    let mesh = QuadMesh::new(f.lattice);
    let g = mesh.gradient_at_quads(&f.values);
    mesh.quads().iter().zip(&g).map(|(q, g)| q.weight * (g[0] * g[0] + g[1] * g[1])).sum::<f64>().sqrt()
}

/// An assembled symmetric elliptic operator on a Dirichlet grid:
/// `φ ↦ −∇·(G₀ ∇φ)` in weak form.
#[derive(Clone, Debug)]
pub struct EllipticOperator {
    pub mesh: QuadMesh,
    pub matrix: Csr,
}

impl EllipticOperator {
    /// From a constant symmetric tensor (row-major `dim × dim`).
    pub fn constant(grid: &DomainGrid, tensor: &[f64]) -> Result<Self> {
        let dim = grid.dim;
        if tensor.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: tensor.len() });
        }
        let mut h = [0.0; 4];
        h[..dim * dim].copy_from_slice(tensor);
        Self::from_coefficient(grid, |_| h)
    }

    /// From a tensor evaluated at each cell center.
    pub fn from_coefficient(grid: &DomainGrid, tensor_at: impl Fn(&[f64; 2]) -> [f64; 4]) -> Result<Self> {
        let mesh = QuadMesh::new(grid.lattice());
        let matrix = mesh.assemble(|_, q| tensor_at(&q.center));
        if !matrix.is_symmetric(1e-12) {
            return Err(Error::InvalidArgument("elliptic operator is not symmetric".into()));
        }
        Ok(EllipticOperator { mesh, matrix })
    }
}

/// `∫ [G₀ ∇φ]·∇φ` with `φ = A⁻¹ f`, i.e. `bᵀ A⁻¹ b` for the lumped load `b = M f`.
pub fn hminus1_norm(f: &GridField, op: &EllipticOperator) -> Result<f64> {
    let lat = op.mesh.lattice();
    check_same(lat, &f.lattice)?;
    let b: Vec<f64> = (0..op.mesh.free_count())
        .map(|i| {
            let l = op.mesh.lattice_index(i);
            lat.weight(l) * f.values[l]
        })
        .collect();
    let out = solve_spd(&op.matrix, &b, None, CgOptions { rel_tol: 1e-12, ..Default::default() })?;
    Ok(b.iter().zip(&out.x).map(|(p, q)| p * q).sum::<f64>().max(0.0))
}

/// `F = ∇φ + S + m` on the periodic cell.
#[derive(Clone, Debug)]
pub struct HelmholtzParts {
    pub potential: VectorField,
    pub solenoidal: VectorField,
    pub mean: Vec<f64>,
    pub phi: GridField,
}

/// Discrete Helmholtz decomposition: solves `div ∇φ = div F` with zero mean, then
/// `S = F − m − ∇φ` is discretely divergence-free with zero mean.
pub fn helmholtz_decompose(grid: &CellGrid, field: &VectorField) -> Result<HelmholtzParts> {
    let lat = grid.lattice();
    check_same(&lat, &field.lattice)?;
    let mean = field.mean();
    let rhs = divergence(field);
    // −div∇ is symmetric positive semidefinite. With central differences and an even node
    // count its null space holds every function constant on each parity sublattice, so
    // the right-hand side and every operator output are projected off that space.
    let project = |v: &mut [f64]| project_parity_classes(&lat, v);
    let apply = |x: &[f64], y: &mut [f64]| {
        let g = gradient(&GridField { lattice: lat, values: x.to_vec() });
        let d = divergence(&g);
        for (yi, di) in y.iter_mut().zip(&d.values) {
            *yi = -di;
        }
        project(y);
    };
    let mut b: Vec<f64> = rhs.values.iter().map(|v| -v).collect();
    project(&mut b);
    let out = pcg(apply, &b, None, None, CgOptions { rel_tol: 1e-12, max_iter: 50_000, zero_mean: true })
        .map_err(|e| match e {
            Error::CgNotConverged { .. } => Error::InvalidArgument(format!("Helmholtz solve failed ({e}); grid may not resolve the field")),
            other => other,
        })?;
    let mut phi = GridField { lattice: lat, values: out.x };
    project(&mut phi.values);
    let potential = gradient(&phi);
    let mut solenoidal = field.clone();
    for d in 0..lat.dim {
        for k in 0..lat.count() {
            solenoidal.components[d][k] -= mean[d] + potential.components[d][k];
        }
    }
    Ok(HelmholtzParts { potential, solenoidal, mean, phi })
}

/// Removes the mean of each parity class of nodes (a single class for odd node counts).
fn project_parity_classes(lat: &Lattice, v: &mut [f64]) {
    let classes = if lat.nodes % 2 == 0 { 1usize << lat.dim } else { 1 };
    let class_of = |k: usize| {
        if classes == 1 {
            return 0;
        }
        let m = lat.multi_index(k);
        (0..lat.dim).map(|d| (m[d] % 2) << d).sum::<usize>()
    };
    let mut sum = vec![0.0; classes];
    let mut count = vec![0usize; classes];
    for (k, x) in v.iter().enumerate() {
        sum[class_of(k)] += x;
        count[class_of(k)] += 1;
    }
    for (k, x) in v.iter_mut().enumerate() {
        let c = class_of(k);
        *x -= sum[c] / count[c] as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gradient_examples() {
        let d = DomainGrid::new(1, 32).unwrap();
        let c = d.sample(|_| 3.0);
        assert!(gradient(&c).components[0].iter().all(|v| v.abs() < 1e-14));
        let parabola = d.sample(|x| x[0] * (1.0 - x[0]));
        assert!(gradient(&parabola).components[0][16].abs() < 1e-12);
        let cell = CellGrid::new(1, 256).unwrap();
        let s = cell.sample(|z| (2.0 * PI * z[0]).sin());
        let g = gradient(&s);
        let lat = cell.lattice();
        let err = (0..lat.count()).map(|k| (g.components[0][k] - 2.0 * PI * (2.0 * PI * lat.coords(k)[0]).cos()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn divergence_examples() {
        let d = DomainGrid::new(1, 16).unwrap();
        let lat = d.lattice();
        let f = VectorField::sample(lat, |x| [x[0], 0.0]);
        let div = divergence(&f);
        for k in 1..16 {
            assert!((div.values[k] - 1.0).abs() < 1e-12);
        }
        let cst = VectorField::sample(CellGrid::new(2, 8).unwrap().lattice(), |_| [2.0, -1.0]);
        assert!(divergence(&cst).values.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn divergence_is_negative_adjoint() {
        for (dim, n) in [(1, 32), (2, 32), (2, 5)] {
            let lat = DomainGrid::new(dim, n).unwrap().lattice();
            let phi = GridField::sample(lat, |x| {
                let v = (3.1 * x[0]).sin() + x[0] * x[0];
                if dim == 2 {
                    v * (1.0 + x[1]).ln()
                } else {
                    v
                }
            });
            let mut phi = phi;
            for k in 0..lat.count() {
                if lat.is_boundary(k) {
                    phi.values[k] = 0.0;
                }
            }
            let f = VectorField::sample(lat, |x| [(x[0] * 7.0).cos(), x[0] - x.get(1).copied().unwrap_or(0.0)]);
            let lhs = inner(&divergence(&f), &phi).unwrap();
            let rhs = -inner_vector(&f, &gradient(&phi)).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn norms() {
        let d = DomainGrid::new(1, 128).unwrap();
        assert!((lp_norm(&d.sample(|_| 1.0), 3.0).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(lp_norm(&d.sample(|_| 0.0), 2.0).unwrap(), 0.0);
        let s = d.sample(|x| (PI * x[0]).sin());
        assert!((lp_norm(&s, 2.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-4);
        assert!(lp_norm(&s, 0.5).is_err());
        let h1 = h1_seminorm(&s);
        assert!((h1 - PI / 2f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn hminus1_examples() {
        let d = DomainGrid::new(1, 256).unwrap();
        let op = EllipticOperator::constant(&d, &[1.0]).unwrap();
        assert_eq!(hminus1_norm(&d.sample(|_| 0.0), &op).unwrap(), 0.0);
        let f = d.sample(|x| (PI * x[0]).sin());
        let e = hminus1_norm(&f, &op).unwrap();
        assert!((e - 1.0 / (2.0 * PI * PI)).abs() < 1e-4, "{e}");
        let f2 = d.sample(|x| 2.0 * (PI * x[0]).sin());
        let e2 = hminus1_norm(&f2, &op).unwrap();
        assert!((e2 - 4.0 * e).abs() <= 1e-10 * e2);
    }

    #[test]
    fn helmholtz_examples() {
        let cell = CellGrid::new(2, 32).unwrap();
        let lat = cell.lattice();
        let tau = 2.0 * PI;
        let grad = VectorField::sample(lat, |z| [tau * (tau * z[0]).cos(), 0.0]);
        let parts = helmholtz_decompose(&cell, &grad).unwrap();
        let err = parts.potential.components[0].iter().zip(&grad.components[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 0.1, "{err}");
        let cst = VectorField::sample(lat, |_| [3.0, -1.0]);
        let parts = helmholtz_decompose(&cell, &cst).unwrap();
        assert!((parts.mean[0] - 3.0).abs() < 1e-14 && (parts.mean[1] + 1.0).abs() < 1e-14);
        assert!(parts.potential.components.iter().flatten().all(|v| v.abs() < 1e-12));
        let curl = VectorField::sample(lat, |z| {
            [-tau * (tau * z[0]).sin() * (tau * z[1]).cos(), tau * (tau * z[0]).cos() * (tau * z[1]).sin()]
        });
        let parts = helmholtz_decompose(&cell, &curl).unwrap();
        let err = parts.solenoidal.components.iter().flatten().zip(curl.components.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        let cross = inner_vector(&parts.potential, &parts.solenoidal).unwrap();
        assert!(cross.abs() < 1e-10);
    }
}
