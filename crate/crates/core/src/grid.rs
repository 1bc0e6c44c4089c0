//! Uniform node-centered grid on the unit square with scalar, vector, matrix
//! and frame fields, finite-difference calculus and discrete norms.
//!
//! Derivatives are second-order everywhere. Boundary nodes use four-point
//! one-sided stencils whose leading truncation constant equals the interior
//! central one (+h^2 f'''/6), so the truncation error of a first derivative
//! is a smooth field and cascaded derivatives of derived quantities stay
//! second order up to the boundary. Three-component fields live on the same
//! planar grid and are treated as invariant in the third coordinate.

use crate::error::{Error, Result};
use crate::linalg::{SmallMat, Vec3};

/// Uniform grid on [0,1]^2 with nodes (i*h, j*h), row-major storage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::Grid(format!(
                "need at least 3 nodes per axis, got {nx} x {ny}"
            )));
        }
        if nx != ny {
            return Err(Error::Grid(format!(
                "unit-square grid requires equal node counts, got {nx} x {ny}"
            )));
        }
        Ok(Grid {
            nx,
            ny,
            h: 1.0 / (nx - 1) as f64,
        })
    }

    pub fn square(n: usize) -> Self {
        Self::new(n, n).expect("node count must be >= 3")
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.h, j as f64 * self.h)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Center node indices (used as the default seed point).
    pub fn center(&self) -> (usize, usize) {
        ((self.nx - 1) / 2, (self.ny - 1) / 2)
    }

    /// Boundary nodes in counter-clockwise order starting at (0,0).
    pub fn boundary_ccw(&self) -> Vec<(usize, usize)> {
        let (nx, ny) = (self.nx, self.ny);
        let mut nodes = Vec::with_capacity(2 * (nx + ny) - 4);
        for i in 0..nx {
            nodes.push((i, 0));
        }
        for j in 1..ny {
            nodes.push((nx - 1, j));
        }
        for i in (0..nx - 1).rev() {
            nodes.push((i, ny - 1));
        }
        for j in (1..ny - 1).rev() {
            nodes.push((0, j));
        }
        nodes
    }
}

// ---------------------------------------------------------------------------
// One-dimensional derivative kernels
// ---------------------------------------------------------------------------

/// Derivative along a line of `n` samples with spacing `h`, writing into `out`
/// with stride `stride` starting at `base`; reads the same layout from `vals`.
fn deriv_line(vals: &[f64], out: &mut [f64], base: usize, stride: usize, n: usize, h: f64) {
    let v = |k: usize| vals[base + k * stride];
    if n == 3 {
        out[base] = (-1.5 * v(0) + 2.0 * v(1) - 0.5 * v(2)) / h;
        out[base + stride] = (v(2) - v(0)) / (2.0 * h);
        out[base + 2 * stride] = (1.5 * v(2) - 2.0 * v(1) + 0.5 * v(0)) / h;
        return;
    }
    // Four-point edge stencil, second order, with truncation constant
    // +h^2 f'''/6 matching the interior central stencil.
    out[base] = (-2.0 * v(0) + 3.5 * v(1) - 2.0 * v(2) + 0.5 * v(3)) / h;
    for k in 1..n - 1 {
        out[base + k * stride] = (v(k + 1) - v(k - 1)) / (2.0 * h);
    }
    out[base + (n - 1) * stride] =
        (2.0 * v(n - 1) - 3.5 * v(n - 2) + 2.0 * v(n - 3) - 0.5 * v(n - 4)) / h;
}

fn dx_plane(grid: &Grid, vals: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; vals.len()];
    for j in 0..grid.ny {
        deriv_line(vals, &mut out, j * grid.nx, 1, grid.nx, grid.h);
    }
    out
}

fn dy_plane(grid: &Grid, vals: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; vals.len()];
    for i in 0..grid.nx {
        deriv_line(vals, &mut out, i, grid.nx, grid.ny, grid.h);
    }
    out
}

/// Trapezoidal quadrature weight of node index `k` on an axis with `n` nodes.
fn trapz_weight(k: usize, n: usize, h: f64) -> f64 {
    if k == 0 || k == n - 1 {
        0.5 * h
    } else {
        h
    }
}

fn bilinear(grid: &Grid, vals: &[f64], x: f64, y: f64) -> f64 {
    let h = grid.h;
    let fx = (x / h).clamp(0.0, (grid.nx - 1) as f64);
    let fy = (y / h).clamp(0.0, (grid.ny - 1) as f64);
    let i0 = (fx.floor() as usize).min(grid.nx - 2);
    let j0 = (fy.floor() as usize).min(grid.ny - 2);
    let tx = fx - i0 as f64;
    let ty = fy - j0 as f64;
    let v00 = vals[grid.idx(i0, j0)];
    let v10 = vals[grid.idx(i0 + 1, j0)];
    let v01 = vals[grid.idx(i0, j0 + 1)];
    let v11 = vals[grid.idx(i0 + 1, j0 + 1)];
    v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty
}

// ---------------------------------------------------------------------------
// Scalar fields
// ---------------------------------------------------------------------------

/// Norm selector for `ScalarField::norm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Linf,
    L2,
    W1inf,
    H1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        ScalarField {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.coords(i, j);
                values.push(f(x, y));
            }
        }
        ScalarField { grid, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.grid, &self.values, x, y)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn gradient(&self) -> VectorField {
        VectorField {
            grid: self.grid,
            ncomp: 2,
            comps: vec![
                dx_plane(&self.grid, &self.values),
                dy_plane(&self.grid, &self.values),
            ],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        match kind {
            NormKind::Linf => self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            NormKind::L2 => {
                let g = &self.grid;
                let mut s = 0.0;
                for j in 0..g.ny {
                    let wy = trapz_weight(j, g.ny, g.h);
                    for i in 0..g.nx {
                        let wx = trapz_weight(i, g.nx, g.h);
                        let v = self.at(i, j);
                        s += wx * wy * v * v;
                    }
                }
                s.sqrt()
            }
            NormKind::W1inf => self.norm(NormKind::Linf).max(self.gradient().linf()),
            NormKind::H1 => {
                let grad = self.gradient();
                let s = self.norm(NormKind::L2).powi(2) + grad.l2().powi(2);
                s.sqrt()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Vector fields
// ---------------------------------------------------------------------------

/// Grid-sampled field of 2- or 3-vectors, stored as per-component planes.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub ncomp: usize,
    pub comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: Grid, ncomp: usize) -> Self {
        assert!((2..=3).contains(&ncomp), "component count must be 2 or 3");
        VectorField {
            grid,
            ncomp,
            comps: vec![vec![0.0; grid.len()]; ncomp],
        }
    }

    pub fn from_fn(grid: Grid, ncomp: usize, f: impl Fn(f64, f64) -> Vec3) -> Self {
        let mut out = Self::zeros(grid, ncomp);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.coords(i, j);
                let v = f(x, y);
                let k = grid.idx(i, j);
                for c in 0..ncomp {
                    out.comps[c][k] = v[c];
                }
            }
        }
        out
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Vec3 {
        let k = self.grid.idx(i, j);
        let mut v = [0.0; 3];
        for c in 0..self.ncomp {
            v[c] = self.comps[c][k];
        }
        v
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: &Vec3) {
        let k = self.grid.idx(i, j);
        for c in 0..self.ncomp {
            self.comps[c][k] = v[c];
        }
    }

    pub fn sample(&self, x: f64, y: f64) -> Vec3 {
        let mut v = [0.0; 3];
        for c in 0..self.ncomp {
            v[c] = bilinear(&self.grid, &self.comps[c], x, y);
        }
        v
    }

    pub fn component(&self, c: usize) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.comps[c].clone(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(&Vec3, &Vec3) -> Vec3) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        assert_eq!(self.ncomp, other.ncomp, "component mismatch");
        let mut out = Self::zeros(self.grid, self.ncomp);
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let v = f(&self.at(i, j), &other.at(i, j));
                out.set(i, j, &v);
            }
        }
        out
    }

    /// Divergence; three-component fields are x3-invariant so the third
    /// component contributes nothing.
    pub fn divergence(&self) -> ScalarField {
        let dx0 = dx_plane(&self.grid, &self.comps[0]);
        let dy1 = dy_plane(&self.grid, &self.comps[1]);
        ScalarField {
            grid: self.grid,
            values: dx0.iter().zip(&dy1).map(|(a, b)| a + b).collect(),
        }
    }

    /// Planar curl d1 V2 - d2 V1. Rejects three-component fields.
    pub fn curl2(&self) -> Result<ScalarField> {
        if self.ncomp != 2 {
            return Err(Error::DimensionMismatch(format!(
                "curl2 requires a 2-vector field, got {} components",
                self.ncomp
            )));
        }
        let dx1 = dx_plane(&self.grid, &self.comps[1]);
        let dy0 = dy_plane(&self.grid, &self.comps[0]);
        Ok(ScalarField {
            grid: self.grid,
            values: dx1.iter().zip(&dy0).map(|(a, b)| a - b).collect(),
        })
    }

    /// Full curl of an x3-invariant 3-vector field.
    pub fn curl3(&self) -> Result<VectorField> {
        if self.ncomp != 3 {
            return Err(Error::DimensionMismatch(format!(
                "curl3 requires a 3-vector field, got {} components",
                self.ncomp
            )));
        }
        let dx1 = dx_plane(&self.grid, &self.comps[1]);
        let dx2 = dx_plane(&self.grid, &self.comps[2]);
        let dy0 = dy_plane(&self.grid, &self.comps[0]);
        let dy2 = dy_plane(&self.grid, &self.comps[2]);
        let mut out = Self::zeros(self.grid, 3);
        for k in 0..self.grid.len() {
            out.comps[0][k] = dy2[k];
            out.comps[1][k] = -dx2[k];
            out.comps[2][k] = dx1[k] - dy0[k];
        }
        Ok(out)
    }

    /// Jacobian rows: the gradient of each component as a vector field pair
    /// (d1 of all components, d2 of all components).
    pub fn partials(&self) -> (VectorField, VectorField) {
        let mut d1 = Self::zeros(self.grid, self.ncomp);
        let mut d2 = Self::zeros(self.grid, self.ncomp);
        for c in 0..self.ncomp {
            d1.comps[c] = dx_plane(&self.grid, &self.comps[c]);
            d2.comps[c] = dy_plane(&self.grid, &self.comps[c]);
        }
        (d1, d2)
    }

    /// Max Euclidean magnitude over nodes.
    pub fn linf(&self) -> f64 {
        let mut m = 0.0f64;
        for k in 0..self.grid.len() {
            let mut s = 0.0;
            for c in 0..self.ncomp {
                s += self.comps[c][k] * self.comps[c][k];
            }
            m = m.max(s.sqrt());
        }
        m
    }

    /// L2 norm of the Euclidean magnitude.
    pub fn l2(&self) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for j in 0..g.ny {
            let wy = trapz_weight(j, g.ny, g.h);
            for i in 0..g.nx {
                let wx = trapz_weight(i, g.nx, g.h);
                let k = g.idx(i, j);
                let mut q = 0.0;
                for c in 0..self.ncomp {
                    q += self.comps[c][k] * self.comps[c][k];
                }
                s += wx * wy * q;
            }
        }
        s.sqrt()
    }

    /// Max over components of the scalar W^{1,inf} norm.
    pub fn w1inf(&self) -> f64 {
        (0..self.ncomp)
            .map(|c| self.component(c).norm(NormKind::W1inf))
            .fold(0.0f64, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.comps.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

// ---------------------------------------------------------------------------
// Matrix fields
// ---------------------------------------------------------------------------

/// Grid-sampled field of k x k matrices, stored as k^2 planes (row-major
/// entry order).
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    pub grid: Grid,
    pub dim: usize,
    pub planes: Vec<Vec<f64>>,
}

impl MatrixField {
    pub fn zeros(grid: Grid, dim: usize) -> Self {
        MatrixField {
            grid,
            dim,
            planes: vec![vec![0.0; grid.len()]; dim * dim],
        }
    }

    pub fn identity(grid: Grid, dim: usize) -> Self {
        let mut m = Self::zeros(grid, dim);
        for r in 0..dim {
            m.planes[r * dim + r] = vec![1.0; grid.len()];
        }
        m
    }

    pub fn from_fn(grid: Grid, dim: usize, f: impl Fn(f64, f64) -> SmallMat) -> Self {
        let mut out = Self::zeros(grid, dim);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.coords(i, j);
                out.set_mat(i, j, &f(x, y));
            }
        }
        out
    }

    #[inline]
    pub fn plane(&self, r: usize, c: usize) -> &Vec<f64> {
        &self.planes[r * self.dim + c]
    }

    #[inline]
    pub fn entry(&self, r: usize, c: usize, i: usize, j: usize) -> f64 {
        self.planes[r * self.dim + c][self.grid.idx(i, j)]
    }

    pub fn entry_field(&self, r: usize, c: usize) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.plane(r, c).clone(),
        }
    }

    pub fn mat(&self, i: usize, j: usize) -> SmallMat {
        let k = self.grid.idx(i, j);
        let mut m = SmallMat::zero(self.dim.min(3));
        m.n = self.dim;
        for r in 0..self.dim {
            for c in 0..self.dim {
                m.a[r][c] = self.planes[r * self.dim + c][k];
            }
        }
        m
    }

    pub fn set_mat(&mut self, i: usize, j: usize, m: &SmallMat) {
        let k = self.grid.idx(i, j);
        for r in 0..self.dim {
            for c in 0..self.dim {
                self.planes[r * self.dim + c][k] = m.a[r][c];
            }
        }
    }

    pub fn symmetrize(&mut self) {
        for r in 0..self.dim {
            for c in r + 1..self.dim {
                let upper = self.planes[r * self.dim + c].clone();
                let lower = &self.planes[c * self.dim + r];
                let avg: Vec<f64> = upper
                    .iter()
                    .zip(lower)
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                self.planes[r * self.dim + c] = avg.clone();
                self.planes[c * self.dim + r] = avg;
            }
        }
    }

    /// Max over entries of the scalar W^{1,inf} norm; the distance used by
    /// the stability harnesses.
    pub fn w1inf(&self) -> f64 {
        let mut m = 0.0f64;
        for r in 0..self.dim {
            for c in 0..self.dim {
                m = m.max(self.entry_field(r, c).norm(NormKind::W1inf));
            }
        }
        m
    }

    pub fn linf(&self) -> f64 {
        self.planes
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        assert_eq!(self.grid, other.grid);
        let planes = self
            .planes
            .iter()
            .zip(&other.planes)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        MatrixField {
            grid: self.grid,
            dim: self.dim,
            planes,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.planes.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

// ---------------------------------------------------------------------------
// Frame fields
// ---------------------------------------------------------------------------

/// Per-node family of m n-vectors (the columns of a pointwise matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameField {
    pub grid: Grid,
    pub m: usize,
    pub n: usize,
    pub columns: Vec<VectorField>,
}

impl FrameField {
    pub fn zeros(grid: Grid, m: usize, n: usize) -> Self {
        assert!(m >= n, "frame needs at least n vectors");
        FrameField {
            grid,
            m,
            n,
            columns: (0..m).map(|_| VectorField::zeros(grid, n)).collect(),
        }
    }

    pub fn identity(grid: Grid, n: usize) -> Self {
        let mut f = Self::zeros(grid, n, n);
        for (c, col) in f.columns.iter_mut().enumerate() {
            let mut e = [0.0; 3];
            e[c] = 1.0;
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    col.set(i, j, &e);
                }
            }
        }
        f
    }

    pub fn from_columns(columns: Vec<VectorField>) -> Self {
        assert!(!columns.is_empty());
        let grid = columns[0].grid;
        let n = columns[0].ncomp;
        assert!(columns.iter().all(|c| c.grid == grid && c.ncomp == n));
        FrameField {
            grid,
            m: columns.len(),
            n,
            columns,
        }
    }

    /// The pointwise n x n matrix with the first n columns; requires m == n.
    pub fn mat(&self, i: usize, j: usize) -> SmallMat {
        assert_eq!(self.m, self.n, "square frame required");
        let mut s = SmallMat::zero(self.n);
        for (c, col) in self.columns.iter().enumerate() {
            s.set_col(c, &col.at(i, j));
        }
        s
    }

    pub fn set_mat(&mut self, i: usize, j: usize, m: &SmallMat) {
        for (c, col) in self.columns.iter_mut().enumerate().take(self.n) {
            col.set(i, j, &m.col(c));
        }
    }

    /// Gram matrix field S^T S.
    pub fn gram(&self) -> MatrixField {
        let mut out = MatrixField::zeros(self.grid, self.m);
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let k = self.grid.idx(i, j);
                for r in 0..self.m {
                    let a = self.columns[r].at(i, j);
                    for c in 0..self.m {
                        let b = self.columns[c].at(i, j);
                        out.planes[r * self.m + c][k] = crate::linalg::dot(&a, &b);
                    }
                }
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.columns.iter().all(|c| c.all_finite())
    }
}

/// Observed convergence order between errors at h and h/2.
pub fn observed_order(err_h: f64, err_half: f64) -> f64 {
    (err_h / err_half).log2()
}
