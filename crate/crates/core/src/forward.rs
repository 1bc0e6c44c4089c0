//! Forward problem: conductivity solves, synthesis of the power-density
//! matrix H, positivity checks and controlled data perturbations.

use crate::error::{Error, Result};
use crate::grid::{Grid, MatrixField, ScalarField, VectorField};
use crate::io;
use crate::linalg::dot;
use crate::phantom::{IlluminationSet, Phantom};
use crate::solver::{pcg, InteriorMap, LinearOp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Default relative residual for the forward solve.
pub const FORWARD_TOL: f64 = 1e-10;

fn forward_max_iter(grid: Grid) -> usize {
    40 * grid.nx.max(64)
}

// ---------------------------------------------------------------------------
// Conservative five-point operator with harmonic-mean edge conductivities
// ---------------------------------------------------------------------------

struct ConductivityOp<'a> {
    map: InteriorMap,
    sigma: &'a ScalarField,
}

#[inline]
fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

impl ConductivityOp<'_> {
    fn edge_sigmas(&self, i: usize, j: usize) -> [f64; 4] {
        let s = self.sigma;
        let c = s.at(i, j);
        [
            harmonic(c, s.at(i - 1, j)),
            harmonic(c, s.at(i + 1, j)),
            harmonic(c, s.at(i, j - 1)),
            harmonic(c, s.at(i, j + 1)),
        ]
    }
}

impl LinearOp for ConductivityOp<'_> {
    fn dim(&self) -> usize {
        self.map.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.map.grid;
        let h2 = g.h * g.h;
        for k in 0..self.map.len() {
            let (i, j) = self.map.node(k);
            let e = self.edge_sigmas(i, j);
            let mut s = (e[0] + e[1] + e[2] + e[3]) * x[k];
            if i > 1 {
                s -= e[0] * x[self.map.unknown(i - 1, j)];
            }
            if i < g.nx - 2 {
                s -= e[1] * x[self.map.unknown(i + 1, j)];
            }
            if j > 1 {
                s -= e[2] * x[self.map.unknown(i, j - 1)];
            }
            if j < g.ny - 2 {
                s -= e[3] * x[self.map.unknown(i, j + 1)];
            }
            y[k] = s / h2;
        }
    }
}

/// Solve `div(sigma grad u) = source` with Dirichlet data `g` (boundary nodes
/// of the field). The conservative scheme uses harmonic-mean edge
/// conductivities; the eliminated system is solved by Jacobi-preconditioned
/// conjugate gradients to a relative residual of `tol`.
pub fn solve_conductivity_with_source(
    sigma: &ScalarField,
    g: &ScalarField,
    source: Option<&ScalarField>,
    tol: f64,
) -> Result<ScalarField> {
    let grid = sigma.grid;
    let map = InteriorMap::new(grid);
    let op = ConductivityOp { map, sigma };
    let h2 = grid.h * grid.h;

    let mut b = vec![0.0; map.len()];
    let mut diag_inv = vec![0.0; map.len()];
    for k in 0..map.len() {
        let (i, j) = map.node(k);
        let e = op.edge_sigmas(i, j);
        diag_inv[k] = h2 / (e[0] + e[1] + e[2] + e[3]);
        let mut rhs = source.map_or(0.0, |f| -f.at(i, j));
        if i == 1 {
            rhs += e[0] * g.at(0, j) / h2;
        }
        if i == grid.nx - 2 {
            rhs += e[1] * g.at(grid.nx - 1, j) / h2;
        }
        if j == 1 {
            rhs += e[2] * g.at(i, 0) / h2;
        }
        if j == grid.ny - 2 {
            rhs += e[3] * g.at(i, grid.ny - 1) / h2;
        }
        b[k] = rhs;
    }

    let (x, _, _) = pcg(
        &op,
        &b,
        Some(&diag_inv),
        tol,
        forward_max_iter(grid),
        "conductivity solve",
    )?;
    Ok(map.expand(&x, g))
}

/// Solve the homogeneous conductivity equation for one illumination.
pub fn solve_conductivity(phantom: &Phantom, g: &ScalarField, tol: f64) -> Result<ScalarField> {
    if phantom.sigma0 <= 0.0 {
        return Err(Error::Config("phantom lower bound must be positive".into()));
    }
    solve_conductivity_with_source(&phantom.sigma, g, None, tol)
}

// ---------------------------------------------------------------------------
// Data bundle
// ---------------------------------------------------------------------------

/// Measurement bundle: the exponent and the symmetric matrix field H.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub alpha: f64,
    pub m: usize,
    pub n: usize,
    pub grid: Grid,
    pub h_field: MatrixField,
    pub c0_measured: f64,
    pub phantom_name: String,
    pub analytic_data: bool,
}

/// Ground-truth companion of a synthesized bundle, available in synthetic
/// mode for seeds, boundary values and error metrics.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    pub sigma: ScalarField,
    pub log_sigma: ScalarField,
    pub grad_log_sigma: VectorField,
    pub u: Vec<ScalarField>,
    pub grad_u: Vec<VectorField>,
}

/// Report of the determinant lower-bound check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositivityReport {
    pub min_det: f64,
    pub argmin: (usize, usize),
    pub pass: bool,
}

fn excluded_alpha(n: usize, alpha: f64) -> bool {
    ((n as f64 - 2.0) * alpha + 1.0).abs() < 1e-14
}

/// Build the measurement bundle `H_ij = sigma^{2 alpha} grad(u_i).grad(u_j)`
/// for a phantom. Closed-form solution gradients are used when the phantom
/// provides them and `use_analytic` is set, otherwise the forward solver
/// supplies the `u_i` and their gradients are formed by finite differences.
pub fn synthesize(
    phantom: &Phantom,
    alpha: f64,
    illums: &IlluminationSet,
    use_analytic: bool,
) -> Result<(DataBundle, SyntheticTruth)> {
    let n = 2usize;
    if excluded_alpha(n, alpha) {
        return Err(Error::ExcludedAlpha { n, alpha });
    }
    let grid = phantom.grid;
    let m = illums.m();
    if m < n {
        return Err(Error::Config(format!(
            "need at least {n} illuminations, got {m}"
        )));
    }

    let analytic = use_analytic && phantom.kind.has_analytic_solutions();
    let mut u = Vec::with_capacity(m);
    let mut grad_u = Vec::with_capacity(m);
    for (idx, g) in illums.fields.iter().enumerate() {
        if analytic {
            let kind = phantom.kind;
            u.push(ScalarField::from_fn(grid, |x, y| {
                kind.analytic_solution(idx, x, y).unwrap()
            }));
            grad_u.push(VectorField::from_fn(grid, 2, |x, y| {
                kind.analytic_solution_grad(idx, x, y).unwrap()
            }));
        } else {
            let ui = solve_conductivity(phantom, g, FORWARD_TOL)?;
            grad_u.push(ui.gradient());
            u.push(ui);
        }
    }

    let mut h_field = MatrixField::zeros(grid, m);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x, y) = grid.coords(i, j);
            let w = phantom.kind.sigma(x, y).powf(2.0 * alpha);
            let k = grid.idx(i, j);
            for r in 0..m {
                let a = grad_u[r].at(i, j);
                for c in r..m {
                    let b = grad_u[c].at(i, j);
                    let v = w * dot(&a, &b);
                    h_field.planes[r * m + c][k] = v;
                    h_field.planes[c * m + r][k] = v;
                }
            }
        }
    }

    let report = positivity_scan(&h_field, n);
    let bundle = DataBundle {
        alpha,
        m,
        n,
        grid,
        h_field,
        c0_measured: report.min_det.max(0.0).sqrt(),
        phantom_name: phantom.kind.name().to_string(),
        analytic_data: analytic,
    };
    let truth = SyntheticTruth {
        sigma: phantom.sigma.clone(),
        log_sigma: phantom.log_sigma(),
        grad_log_sigma: phantom.grad_log_sigma(),
        u,
        grad_u,
    };
    Ok((bundle, truth))
}

fn positivity_scan(h: &MatrixField, n: usize) -> PositivityReport {
    let grid = h.grid;
    let mut min_det = f64::INFINITY;
    let mut argmin = (0, 0);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let full = h.mat(i, j);
            let mut lead = crate::linalg::SmallMat::zero(n);
            for r in 0..n {
                for c in 0..n {
                    lead.a[r][c] = full.a[r][c];
                }
            }
            let d = lead.det();
            if d < min_det {
                min_det = d;
                argmin = (i, j);
            }
        }
    }
    PositivityReport {
        min_det,
        argmin,
        pass: false,
    }
}

/// Minimum over nodes of det of the leading n x n block; passes when it
/// stays above c0^2.
pub fn check_positivity(data: &DataBundle, c0: f64) -> PositivityReport {
    let mut report = positivity_scan(&data.h_field, data.n);
    report.pass = report.min_det >= c0 * c0;
    report
}

// ---------------------------------------------------------------------------
// Perturbation and corruption
// ---------------------------------------------------------------------------

fn gaussian_smooth(grid: Grid, plane: &mut Vec<f64>, radius: f64) {
    if radius <= 0.0 {
        return;
    }
    let half = ((3.0 * radius / grid.h).ceil() as usize).max(1);
    let weights: Vec<f64> = (0..=half)
        .map(|d| (-((d as f64 * grid.h).powi(2)) / (2.0 * radius * radius)).exp())
        .collect();
    // separable passes with per-node renormalization near the boundary
    let pass = |src: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (pos, len) = if along_x { (i, grid.nx) } else { (j, grid.ny) };
                let mut acc = 0.0;
                let mut wsum = 0.0;
                let lo = pos.saturating_sub(half);
                let hi = (pos + half).min(len - 1);
                for q in lo..=hi {
                    let w = weights[q.abs_diff(pos)];
                    let k = if along_x {
                        grid.idx(q, j)
                    } else {
                        grid.idx(i, q)
                    };
                    acc += w * src[k];
                    wsum += w;
                }
                out[grid.idx(i, j)] = acc / wsum;
            }
        }
        out
    };
    let sx = pass(plane, true);
    *plane = pass(&sx, false);
}

/// Add a smoothed random field to each entry of H, rescaled so the
/// perturbation has the requested W^{1,inf} size, then re-check positivity.
/// The same seed reproduces the same bundle bit for bit.
pub fn perturb(
    data: &DataBundle,
    level: f64,
    smooth_radius: f64,
    rng_seed: u64,
) -> Result<DataBundle> {
    if level < 0.0 {
        return Err(Error::Config("perturbation level must be >= 0".into()));
    }
    if level == 0.0 {
        return Ok(data.clone());
    }
    let grid = data.grid;
    let m = data.m;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut noise = MatrixField::zeros(grid, m);
    for r in 0..m {
        for c in r..m {
            let mut plane: Vec<f64> = (0..grid.len())
                .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            gaussian_smooth(grid, &mut plane, smooth_radius);
            noise.planes[r * m + c] = plane.clone();
            noise.planes[c * m + r] = plane;
        }
    }
    let current = noise.w1inf();
    if current == 0.0 {
        return Err(Error::Config("noise field degenerated to zero".into()));
    }
    let scale = level / current;
    let mut out = data.clone();
    for (dst, src) in out.h_field.planes.iter_mut().zip(&noise.planes) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += scale * s;
        }
    }
    out.h_field.symmetrize();

    let before = positivity_scan(&data.h_field, data.n).min_det;
    let after = positivity_scan(&out.h_field, data.n).min_det;
    if after < 0.5 * before {
        return Err(Error::NoiseBreaksPositivity { before, after });
    }
    out.c0_measured = after.max(0.0).sqrt();
    out.analytic_data = false;
    Ok(out)
}

/// Multiply one entry of H by a smooth factor field; produces data outside
/// the range of the measurement map for diagnostics sensitivity tests.
pub fn corrupt_entry(
    data: &DataBundle,
    r: usize,
    c: usize,
    factor: impl Fn(f64, f64) -> f64,
) -> DataBundle {
    let mut out = data.clone();
    let grid = data.grid;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x, y) = grid.coords(i, j);
            let k = grid.idx(i, j);
            let f = factor(x, y);
            out.h_field.planes[r * data.m + c][k] *= f;
            if r != c {
                out.h_field.planes[c * data.m + r][k] *= f;
            }
        }
    }
    out.c0_measured = positivity_scan(&out.h_field, data.n)
        .min_det
        .max(0.0)
        .sqrt();
    out.analytic_data = false;
    out
}

/// The default 10% corruption used by the range test: H_11 scaled by
/// 1 + a sin(2 pi x1) sin(2 pi x2).
pub fn corrupt_default(data: &DataBundle, amplitude: f64) -> DataBundle {
    use std::f64::consts::PI;
    corrupt_entry(data, 0, 0, |x, y| {
        1.0 + amplitude * (2.0 * PI * x).sin() * (2.0 * PI * y).sin()
    })
}

/// W^{1,inf} distance between two bundles' measurements.
pub fn bundle_distance_w1inf(a: &DataBundle, b: &DataBundle) -> f64 {
    a.h_field.sub(&b.h_field).w1inf()
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct BundleManifest {
    alpha: f64,
    m: usize,
    n: usize,
    nx: usize,
    ny: usize,
    c0_measured: f64,
    phantom: String,
    analytic_data: bool,
}

impl DataBundle {
    /// Write the bundle as a directory: JSON manifest plus the H field files.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = BundleManifest {
            alpha: self.alpha,
            m: self.m,
            n: self.n,
            nx: self.grid.nx,
            ny: self.grid.ny,
            c0_measured: self.c0_measured,
            phantom: self.phantom_name.clone(),
            analytic_data: self.analytic_data,
        };
        std::fs::write(
            dir.join("bundle.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        io::write_matrix(dir, "H", &self.h_field)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: BundleManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("bundle.json"))?)?;
        let h_field = io::read_matrix(dir, "H")?;
        if h_field.dim != manifest.m {
            return Err(Error::DimensionMismatch(
                "H dimension disagrees with manifest".into(),
            ));
        }
        Ok(DataBundle {
            alpha: manifest.alpha,
            m: manifest.m,
            n: manifest.n,
            grid: h_field.grid,
            h_field,
            c0_measured: manifest.c0_measured,
            phantom_name: manifest.phantom,
            analytic_data: manifest.analytic_data,
        })
    }

    /// Build a bundle directly from a synthetic frame field (S^T S data);
    /// used by the pointwise algebra and diagnostics tests.
    pub fn from_frame_field(s: &crate::grid::FrameField, alpha: f64) -> Result<Self> {
        if excluded_alpha(s.n, alpha) {
            return Err(Error::ExcludedAlpha { n: s.n, alpha });
        }
        let h_field = s.gram();
        let report = positivity_scan(&h_field, s.n);
        Ok(DataBundle {
            alpha,
            m: s.m,
            n: s.n,
            grid: s.grid,
            h_field,
            c0_measured: report.min_det.max(0.0).sqrt(),
            phantom_name: "synthetic_frame".to_string(),
            analytic_data: true,
        })
    }
}
