//! Matrix-free Krylov solvers and small direct probes shared by the forward
//! and reconstruction stages.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

/// Matrix-free linear operator.
pub trait LinearOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradients for symmetric positive-definite
/// operators. `diag_inv`, when given, is the inverse diagonal (Jacobi).
/// Converges to a relative residual `|r| <= tol |b|`.
pub fn pcg(
    op: &dyn LinearOp,
    b: &[f64],
    diag_inv: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    context: &str,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0, 0.0));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let precond = |r: &[f64], z: &mut Vec<f64>| {
        match diag_inv {
            Some(d) => {
                z.clear();
                z.extend(r.iter().zip(d).map(|(ri, di)| ri * di));
            }
            None => {
                z.clear();
                z.extend_from_slice(r);
            }
        };
    };
    let mut z = Vec::with_capacity(n);
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::SolverDiverged {
                context: format!("{context}: operator not positive definite"),
                iters: it,
                residual: norm2(&r) / bnorm,
                min_det: f64::NAN,
            });
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rel = norm2(&r) / bnorm;
        if rel <= tol {
            return Ok((x, it + 1, rel));
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::SolverDiverged {
        context: context.to_string(),
        iters: max_iter,
        residual: norm2(&r) / bnorm,
        min_det: f64::NAN,
    })
}

/// BiCGStab for general (non-symmetric) operators.
pub fn bicgstab(
    op: &dyn LinearOp,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    context: &str,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = op.dim();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0, 0.0));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        op.apply(&p, &mut v);
        let r0v = dot(&r0, &v);
        if r0v.abs() < 1e-300 {
            break;
        }
        alpha = rho / r0v;
        for k in 0..n {
            s[k] = r[k] - alpha * v[k];
        }
        if norm2(&s) / bnorm <= tol {
            for k in 0..n {
                x[k] += alpha * p[k];
            }
            return Ok((x, it + 1, norm2(&s) / bnorm));
        }
        op.apply(&s, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            break;
        }
        omega = dot(&t, &s) / tt;
        for k in 0..n {
            x[k] += alpha * p[k] + omega * s[k];
            r[k] = s[k] - omega * t[k];
        }
        if norm2(&r) / bnorm <= tol {
            return Ok((x, it + 1, norm2(&r) / bnorm));
        }
        if omega.abs() < 1e-300 {
            break;
        }
    }
    let rel = norm2(&r) / bnorm;
    if rel <= tol {
        Ok((x, max_iter, rel))
    } else {
        Err(Error::SolverDiverged {
            context: context.to_string(),
            iters: max_iter,
            residual: rel,
            min_det: f64::NAN,
        })
    }
}

// ---------------------------------------------------------------------------
// Interior-node indexing for Dirichlet problems
// ---------------------------------------------------------------------------

/// Maps interior nodes of a grid to contiguous unknown indices.
#[derive(Debug, Clone, Copy)]
pub struct InteriorMap {
    pub grid: Grid,
    pub nxi: usize,
    pub nyi: usize,
}

impl InteriorMap {
    pub fn new(grid: Grid) -> Self {
        InteriorMap {
            grid,
            nxi: grid.nx - 2,
            nyi: grid.ny - 2,
        }
    }

    pub fn len(&self) -> usize {
        self.nxi * self.nyi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unknown index of interior node (i, j); i in 1..nx-1, j in 1..ny-1.
    #[inline]
    pub fn unknown(&self, i: usize, j: usize) -> usize {
        (j - 1) * self.nxi + (i - 1)
    }

    #[inline]
    pub fn node(&self, k: usize) -> (usize, usize) {
        (k % self.nxi + 1, k / self.nxi + 1)
    }

    /// Scatter an interior vector into a full field with given boundary values.
    pub fn expand(&self, interior: &[f64], boundary: &ScalarField) -> ScalarField {
        let mut out = boundary.clone();
        for k in 0..self.len() {
            let (i, j) = self.node(k);
            out.set(i, j, interior[k]);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Dirichlet Poisson solver (5-point Laplacian)
// ---------------------------------------------------------------------------

struct NegLaplacian {
    map: InteriorMap,
}

impl LinearOp for NegLaplacian {
    fn dim(&self) -> usize {
        self.map.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.map.grid;
        let h2 = g.h * g.h;
        for k in 0..self.map.len() {
            let (i, j) = self.map.node(k);
            let mut s = 4.0 * x[k];
            if i > 1 {
                s -= x[self.map.unknown(i - 1, j)];
            }
            if i < g.nx - 2 {
                s -= x[self.map.unknown(i + 1, j)];
            }
            if j > 1 {
                s -= x[self.map.unknown(i, j - 1)];
            }
            if j < g.ny - 2 {
                s -= x[self.map.unknown(i, j + 1)];
            }
            y[k] = s / h2;
        }
    }
}

/// Solve `laplace(u) = f` with Dirichlet values taken from `boundary` on the
/// boundary nodes. Interior values of `boundary` are ignored.
pub fn poisson_dirichlet(
    f: &ScalarField,
    boundary: &ScalarField,
    tol: f64,
    max_iter: usize,
) -> Result<ScalarField> {
    let grid = f.grid;
    let map = InteriorMap::new(grid);
    let h2 = grid.h * grid.h;
    let mut b = vec![0.0; map.len()];
    for k in 0..map.len() {
        let (i, j) = map.node(k);
        // -laplace(u) = -f, boundary contributions move to the rhs
        let mut rhs = -f.at(i, j);
        if i == 1 {
            rhs += boundary.at(0, j) / h2;
        }
        if i == grid.nx - 2 {
            rhs += boundary.at(grid.nx - 1, j) / h2;
        }
        if j == 1 {
            rhs += boundary.at(i, 0) / h2;
        }
        if j == grid.ny - 2 {
            rhs += boundary.at(i, grid.ny - 1) / h2;
        }
        b[k] = rhs;
    }
    let op = NegLaplacian { map };
    let (x, _, _) = pcg(&op, &b, None, tol, max_iter, "poisson")?;
    Ok(map.expand(&x, boundary))
}

/// Apply the negative 5-point Laplacian to an interior vector (homogeneous
/// Dirichlet). Used by the drift-operator norm estimate.
pub fn neg_laplacian_apply(grid: Grid, x: &[f64], y: &mut [f64]) {
    let op = NegLaplacian {
        map: InteriorMap::new(grid),
    };
    op.apply(x, y);
}

/// Solve the homogeneous-Dirichlet Poisson problem `-laplace(u) = rhs` on
/// interior unknowns.
pub fn dirichlet_solve(grid: Grid, rhs: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let op = NegLaplacian {
        map: InteriorMap::new(grid),
    };
    let (x, _, _) = pcg(&op, rhs, None, tol, max_iter, "dirichlet laplacian")?;
    Ok(x)
}

/// Smallest eigenvalue of the 5-point Dirichlet Laplacian on the unit square,
/// in closed form: (8/h^2) sin^2(pi h / 2).
pub fn laplacian_min_eigenvalue(grid: Grid) -> f64 {
    let h = grid.h;
    8.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2)
}

// ---------------------------------------------------------------------------
// Banded Cholesky probe
// ---------------------------------------------------------------------------

/// Symmetric banded matrix stored by lower band; used as a factorization
/// probe for definiteness on small grids.
pub struct BandedSym {
    pub n: usize,
    pub half_bw: usize,
    /// data[r][d] = A[r][r - half_bw + d], d in 0..=half_bw
    data: Vec<Vec<f64>>,
}

impl BandedSym {
    pub fn new(n: usize, half_bw: usize) -> Self {
        BandedSym {
            n,
            half_bw,
            data: vec![vec![0.0; half_bw + 1]; n],
        }
    }

    /// Set A[r][c] for c <= r within the band.
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(c <= r && r - c <= self.half_bw, "entry outside band");
        self.data[r][self.half_bw - (r - c)] = v;
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        assert!(c <= r && r - c <= self.half_bw, "entry outside band");
        self.data[r][self.half_bw - (r - c)] += v;
    }

    /// In-place banded Cholesky. Returns the smallest pivot encountered, or
    /// the offending (row, pivot) as an error when a pivot is non-positive.
    pub fn cholesky(&mut self) -> std::result::Result<f64, (usize, f64)> {
        let hb = self.half_bw;
        let mut min_pivot = f64::INFINITY;
        for r in 0..self.n {
            let start = r.saturating_sub(hb);
            for c in start..=r {
                let mut s = self.data[r][hb - (r - c)];
                let kstart = start.max(c.saturating_sub(hb));
                for k in kstart..c {
                    s -= self.data[r][hb - (r - k)] * self.data[c][hb - (c - k)];
                }
                if c == r {
                    if s <= 0.0 {
                        return Err((r, s));
                    }
                    min_pivot = min_pivot.min(s);
                    self.data[r][hb] = s.sqrt();
                } else {
                    self.data[r][hb - (r - c)] = s / self.data[c][hb];
                }
            }
        }
        Ok(min_pivot)
    }
}
