//! Energy-consistent discretization of `∫ [K ∇u]·∇v`.
//!
//! Each lattice cell carries quadrature points: one (the cell midpoint) in 1D, the four
//! corners in 2D. At a corner, each partial derivative is the difference along the cell
//! edge through that corner. The stiffness matrix `Gᵀ W K G` is then a sum of squares,
//! reduces to the standard 3- and 5-point Laplacians for `K = I`, and its transpose gives
//! the discrete divergence of any quadrature-point flux.

use super::linalg::Csr;
use super::Lattice;

/// One quadrature point: weight, cell center, and the two-point difference stencil per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadPoint {
    pub weight: f64,
    pub center: [f64; 2],
    /// `nodes[d] = [minus, plus]` lattice indices of the difference along axis `d`.
    pub nodes: [[usize; 2]; 2],
    pub inv_h: [f64; 2],
    /// Lattice indices of the cell's corners (the first two only in 1D).
    pub corners: [usize; 4],
}

impl QuadPoint {
    #[inline]
    fn derivative(&self, u: &[f64], d: usize) -> f64 {
        (u[self.nodes[d][1]] - u[self.nodes[d][0]]) * self.inv_h[d]
    }
}

#[derive(Clone, Debug)]
pub struct QuadMesh {
    lattice: Lattice,
    quads: Vec<QuadPoint>,
    /// Lattice index → free unknown index (`None` for Dirichlet nodes).
    free_of: Vec<Option<usize>>,
    /// Free unknown index → lattice index.
    lattice_of: Vec<usize>,
    /// Quadrature points per cell.
    per_cell: usize,
}

impl QuadMesh {
    pub fn new(lattice: Lattice) -> Self {
        let dim = lattice.dim;
        let n = lattice.nodes;
        let cells = if lattice.periodic { n } else { n - 1 };
        let wrap = |i: usize| if i == n { 0 } else { i };
        let h = lattice.spacing;
        let inv_h = [1.0 / h[0], 1.0 / h[1]];
        let mut quads = Vec::new();
        if dim == 1 {
            for i in 0..cells {
                quads.push(QuadPoint {
                    weight: h[0],
                    center: [(i as f64 + 0.5) * h[0], 0.0],
                    nodes: [[i, wrap(i + 1)], [0, 0]],
                    inv_h,
                    corners: [i, wrap(i + 1), 0, 0],
                });
            }
        } else {
            let idx = |i: usize, j: usize| wrap(i) * n + wrap(j);
            for i in 0..cells {
                for j in 0..cells {
                    let center = [(i as f64 + 0.5) * h[0], (j as f64 + 0.5) * h[1]];
                    for a in 0..2 {
                        for b in 0..2 {
                            quads.push(QuadPoint {
                                weight: 0.25 * h[0] * h[1],
                                center,
                                nodes: [[idx(i, j + b), idx(i + 1, j + b)], [idx(i + a, j), idx(i + a, j + 1)]],
                                inv_h,
                                corners: [idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1)],
                            });
                        }
                    }
                }
            }
        }
        let mut free_of = vec![None; lattice.count()];
        let mut lattice_of = Vec::new();
        for (k, slot) in free_of.iter_mut().enumerate() {
            if lattice.periodic || !lattice.is_boundary(k) {
                *slot = Some(lattice_of.len());
                lattice_of.push(k);
            }
        }
        QuadMesh { lattice, quads, free_of, lattice_of, per_cell: if dim == 1 { 1 } else { 4 } }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn quads(&self) -> &[QuadPoint] {
        &self.quads
    }

    pub fn quads_per_cell(&self) -> usize {
        self.per_cell
    }

    pub fn free_count(&self) -> usize {
        self.lattice_of.len()
    }

    pub fn free_index(&self, lattice_index: usize) -> Option<usize> {
        self.free_of[lattice_index]
    }

    pub fn lattice_index(&self, free: usize) -> usize {
        self.lattice_of[free]
    }

    /// Scatters free values into a lattice vector with zeros at Dirichlet nodes.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.lattice.count()];
        for (k, &l) in self.lattice_of.iter().enumerate() {
            out[l] = free[k];
        }
        out
    }

    pub fn restrict(&self, lattice_values: &[f64]) -> Vec<f64> {
        self.lattice_of.iter().map(|&l| lattice_values[l]).collect()
    }

    /// Gradients of a lattice field at every quadrature point.
    pub fn gradient_at_quads(&self, u: &[f64]) -> Vec<[f64; 2]> {
        let dim = self.lattice.dim;
        self.quads
            .iter()
            .map(|q| {
                let mut g = [0.0; 2];
                for (d, gd) in g.iter_mut().enumerate().take(dim) {
                    *gd = q.derivative(u, d);
                }
                g
            })
            .collect()
    }

    /// `Gᵀ W flux` on the whole lattice: the weak divergence of a quadrature-point flux,
    /// with the sign convention `⟨Gᵀ W F, v⟩ = Σ_q w_q F_q·(Gv)_q`.
    pub fn transpose(&self, flux: &[[f64; 2]]) -> Vec<f64> {
        let mut out = vec![0.0; self.lattice.count()];
        for (q, f) in self.quads.iter().zip(flux) {
            for d in 0..self.lattice.dim {
                let c = q.weight * f[d] * q.inv_h[d];
                out[q.nodes[d][1]] += c;
                out[q.nodes[d][0]] -= c;
            }
        }
        out
    }

    /// Assembles `Σ_q w_q (G_q v)ᵀ H_q (G_q u)` over free unknowns. `coefficient(k, q)`
    /// returns the row-major `dim × dim` matrix `H_q` for quadrature point `k`.
    pub fn assemble(&self, coefficient: impl Fn(usize, &QuadPoint) -> [f64; 4]) -> Csr {
        let dim = self.lattice.dim;
        let mut triplets = Vec::with_capacity(self.quads.len() * 4 * dim * dim);
        for (k, q) in self.quads.iter().enumerate() {
            let h = coefficient(k, q);
            for d in 0..dim {
                for (sd, &node_d) in [-1.0, 1.0].iter().zip(&q.nodes[d]) {
                    let Some(row) = self.free_of[node_d] else { continue };
                    for e in 0..dim {
                        let hde = h[d * dim + e];
                        if hde == 0.0 {
                            continue;
                        }
                        for (se, &node_e) in [-1.0, 1.0].iter().zip(&q.nodes[e]) {
                            let Some(col) = self.free_of[node_e] else { continue };
                            triplets.push((row, col, q.weight * hde * sd * se * q.inv_h[d] * q.inv_h[e]));
                        }
                    }
                }
            }
        }
        Csr::from_triplets(self.free_count(), triplets)
    }

    /// Cell-average of lattice values for each quadrature point (the value of `u` used for
    /// `u`-dependent coefficients).
    pub fn cell_average_at_quads(&self, u: &[f64]) -> Vec<f64> {
        let dim = self.lattice.dim;
        self.quads
            .iter()
            .map(|q| {
                if dim == 1 {
                    0.5 * (u[q.corners[0]] + u[q.corners[1]])
                } else {
                    0.25 * q.corners.iter().map(|&c| u[c]).sum::<f64>()
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_coefficient_gives_standard_laplacian() {
        let lat = Lattice::dirichlet(2, 4);
        let mesh = QuadMesh::new(lat);
        let a = mesh.assemble(|_, _| [1.0, 0.0, 0.0, 1.0]);
        assert_eq!(mesh.free_count(), 9);
        // Center unknown: 4 on the diagonal, −1 to four neighbors.
        let center = mesh.free_index(2 * 5 + 2).unwrap();
        let row: Vec<(usize, f64)> = a.row(center).collect();
        assert_eq!(row.len(), 5);
        for (c, v) in row {
            assert!((v - if c == center { 4.0 } else { -1.0 }).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_is_adjoint_of_gradient() {
        let lat = Lattice::periodic(2, 6, [1.0, 2.0]);
        let mesh = QuadMesh::new(lat);
        let u: Vec<f64> = (0..lat.count()).map(|k| ((k * 7 % 11) as f64).sin()).collect();
        let flux: Vec<[f64; 2]> = (0..mesh.quads().len()).map(|k| [(k as f64).cos(), (0.3 * k as f64).sin()]).collect();
        let gu = mesh.gradient_at_quads(&u);
        let lhs: f64 = mesh.quads().iter().zip(&gu).zip(&flux).map(|((q, g), f)| q.weight * (g[0] * f[0] + g[1] * f[1])).sum();
        let gt = mesh.transpose(&flux);
        let rhs: f64 = gt.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }
}
