//! Sparse matrices and the linear solvers used by every elliptic solve.

use crate::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    /// Builds an `n × n` matrix from triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut col = Vec::with_capacity(triplets.len());
        let mut val: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(c);
                val.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr { n, row_ptr, col, val }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[span.clone()].iter().copied().zip(self.val[span].iter().copied())
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[k] * x[self.col[k]];
            }
            *yi = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).find(|&(c, _)| c == i).map_or(0.0, |(_, v)| v)).collect()
    }

    /// `self + diag(d)`.
    pub fn add_diagonal(&self, d: &[f64]) -> Csr {
        let mut triplets: Vec<(usize, usize, f64)> = (0..self.n).flat_map(|i| self.row(i).map(move |(c, v)| (i, c, v))).collect();
        triplets.extend(d.iter().enumerate().map(|(i, &v)| (i, i, v)));
        Csr::from_triplets(self.n, triplets)
    }

    /// The principal submatrix on the rows/columns listed in `keep` (in that order).
    pub fn principal_submatrix(&self, keep: &[usize]) -> Csr {
        let mut position = vec![usize::MAX; self.n];
        for (k, &i) in keep.iter().enumerate() {
            position[i] = k;
        }
        let mut triplets = Vec::new();
        for (k, &i) in keep.iter().enumerate() {
            for (c, v) in self.row(i) {
                if position[c] != usize::MAX {
                    triplets.push((k, position[c], v));
                }
            }
        }
        Csr::from_triplets(keep.len(), triplets)
    }

    pub fn is_tridiagonal(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(c, _)| c.abs_diff(i) <= 1))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| {
            self.row(i).all(|(c, v)| {
                let t = self.row(c).find(|&(cc, _)| cc == i).map_or(0.0, |(_, w)| w);
                (v - t).abs() <= tol * (1.0 + v.abs())
            })
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Project iterates and residuals onto zero-mean vectors (periodic null space).
    pub zero_mean: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions { rel_tol: 1e-10, max_iter: 20_000, zero_mean: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual `‖b − Ax‖ / ‖b‖`.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project_zero_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Preconditioned conjugate gradients for a symmetric positive (semi)definite operator.
///
/// `inv_diag` is an optional Jacobi preconditioner. With `zero_mean`, the right-hand side,
/// the iterates and the preconditioned residuals are projected onto zero-mean vectors.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    inv_diag: Option<&[f64]>,
    x0: Option<&[f64]>,
    opts: CgOptions,
) -> Result<CgOutcome> {
    let n = b.len();
    let mut rhs = b.to_vec();
    if opts.zero_mean {
        project_zero_mean(&mut rhs);
    }
    let b_norm = dot(&rhs, &rhs).sqrt();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if opts.zero_mean {
        project_zero_mean(&mut x);
    }
    if b_norm == 0.0 {
        return Ok(CgOutcome { x: vec![0.0; n], iterations: 0, residual: 0.0 });
    }
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    if opts.zero_mean {
        project_zero_mean(&mut r);
    }
    let precondition = |r: &[f64], z: &mut Vec<f64>| {
        z.clear();
        match inv_diag {
            Some(d) => z.extend(r.iter().zip(d).map(|(a, b)| a * b)),
            None => z.extend_from_slice(r),
        }
        if opts.zero_mean {
            project_zero_mean(z);
        }
    };
    let mut z = Vec::with_capacity(n);
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut residual = dot(&r, &r).sqrt() / b_norm;
    let mut ap = vec![0.0; n];
    for it in 0..opts.max_iter {
        if residual <= opts.rel_tol {
            return Ok(CgOutcome { x, iterations: it, residual });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::CgNotConverged { iterations: it, residual });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if opts.zero_mean {
            project_zero_mean(&mut r);
        }
        residual = dot(&r, &r).sqrt() / b_norm;
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if residual <= opts.rel_tol {
        if opts.zero_mean {
            project_zero_mean(&mut x);
        }
        return Ok(CgOutcome { x, iterations: opts.max_iter, residual });
    }
    Err(Error::CgNotConverged { iterations: opts.max_iter, residual })
}

/// Jacobi-preconditioned CG on an assembled matrix.
pub fn pcg_csr(a: &Csr, b: &[f64], x0: Option<&[f64]>, opts: CgOptions) -> Result<CgOutcome> {
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut out = pcg(|x, y| a.mul_into(x, y), b, Some(&inv_diag), x0, opts)?;
    if opts.zero_mean {
        project_zero_mean(&mut out.x);
    }
    Ok(out)
}

/// Direct solve of a tridiagonal system by the Thomas algorithm.
pub fn thomas(a: &Csr, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 0..n {
        for (c, v) in a.row(i) {
            match c as isize - i as isize {
                -1 => lower[i] = v,
                0 => diag[i] = v,
                1 => upper[i] = v,
                _ => return Err(Error::InvalidArgument("matrix is not tridiagonal".into())),
            }
        }
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let denom = diag[i] - if i > 0 { lower[i] * c[i - 1] } else { 0.0 };
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::InvalidArgument("singular tridiagonal system".into()));
        }
        c[i] = upper[i] / denom;
        d[i] = (b[i] - if i > 0 { lower[i] * d[i - 1] } else { 0.0 }) / denom;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Solves `A x = b` for symmetric positive definite `A`: Thomas when tridiagonal and no
/// null space is involved, PCG otherwise.
pub fn solve_spd(a: &Csr, b: &[f64], x0: Option<&[f64]>, opts: CgOptions) -> Result<CgOutcome> {
    if !opts.zero_mean && a.is_tridiagonal() {
        let x = thomas(a, b)?;
        let ax = a.mul(&x);
        let b_norm = dot(b, b).sqrt();
        let r: f64 = ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let residual = if b_norm > 0.0 { r / b_norm } else { r };
        return Ok(CgOutcome { x, iterations: 1, residual });
    }
    pcg_csr(a, b, x0, opts)
}
