//! Coupled elliptic reconstruction: drift fields W built from the data, a
//! block system for the solutions u_i, and recovery of sigma from the
//! potential relation for sigma^{-2 alpha} (or log sigma when alpha = 0).

use crate::error::{Error, Result};
use crate::frame::DerivedFields;
use crate::grid::{Grid, ScalarField, VectorField};
use crate::linalg::{axpy, dot, scale, SmallMat, Vec3};
use crate::ode::integrate_gradient;
use crate::phantom::IlluminationSet;
use crate::solver::{
    bicgstab, dirichlet_solve, laplacian_min_eigenvalue, neg_laplacian_apply, pcg, BandedSym,
    InteriorMap, LinearOp,
};

/// Solver settings; `max_iter` of `None` means 20 * nx.
#[derive(Debug, Clone, Copy)]
pub struct EllipticSettings {
    pub tol: f64,
    pub max_iter: Option<usize>,
    /// Solve the nondivergence form as well and record the deviation.
    pub cross_check: bool,
}

impl Default for EllipticSettings {
    fn default() -> Self {
        EllipticSettings {
            tol: 1e-10,
            max_iter: None,
            cross_check: true,
        }
    }
}

impl EllipticSettings {
    fn iter_cap(&self, grid: Grid) -> usize {
        self.max_iter.unwrap_or(20 * grid.nx)
    }
}

// ---------------------------------------------------------------------------
// Drift fields
// ---------------------------------------------------------------------------

/// The drift family W_ik, assembled from the product-rule form
/// grad(log D) delta_ik + H_il grad(H^{kl}); the quotient form
/// (H_il / D) grad(D H^{lk}) is evaluated as a cross-check.
#[derive(Debug, Clone)]
pub struct DriftFields {
    pub n: usize,
    pub w: Vec<VectorField>,
    /// Max nodal deviation between the two assembly forms.
    pub form_deviation: f64,
}

impl DriftFields {
    pub fn at(&self, i: usize, k: usize, ii: usize, jj: usize) -> Vec3 {
        self.w[i * self.n + k].at(ii, jj)
    }

    /// max_ik sup_x |W_ik(x)|.
    pub fn sup_norm(&self) -> f64 {
        self.w.iter().map(|f| f.linf()).fold(0.0, f64::max)
    }
}

pub fn build_w(derived: &DerivedFields) -> Result<DriftFields> {
    let n = derived.n;
    let grid = derived.grid;
    let mut w = vec![VectorField::zeros(grid, 2); n * n];

    // quotient form needs gradients of the product fields D H^{lk}
    let grad_dhinv: Vec<VectorField> = (0..n * n)
        .map(|e| {
            ScalarField {
                grid,
                values: derived
                    .d
                    .values
                    .iter()
                    .zip(&derived.hinv.planes[e])
                    .map(|(d, hv)| d * hv)
                    .collect(),
            }
            .gradient()
        })
        .collect();

    let mut deviation = 0.0f64;
    for jj in 0..grid.ny {
        for ii in 0..grid.nx {
            let hm = derived.h.mat(ii, jj);
            let gld = derived.grad_log_d.at(ii, jj);
            let dval = derived.d.at(ii, jj);
            for i in 0..n {
                for k in 0..n {
                    let mut acc = if i == k { gld } else { [0.0; 3] };
                    let mut quot = [0.0; 3];
                    for l in 0..n {
                        acc = axpy(hm.a[i][l], &derived.grad_hinv[k * n + l].at(ii, jj), &acc);
                        quot = axpy(hm.a[i][l] / dval, &grad_dhinv[l * n + k].at(ii, jj), &quot);
                    }
                    w[i * n + k].set(ii, jj, &acc);
                    for c in 0..2 {
                        deviation = deviation.max((acc[c] - quot[c]).abs());
                    }
                }
            }
        }
    }

    // loose O(h^2)-scaled guard against transcription errors; the sharp
    // convergence check lives in the tests
    let h = grid.h;
    let tol = 50.0 * h * h * (1.0 + derived.h.w1inf());
    if deviation > tol {
        return Err(Error::CrossCheck(format!(
            "drift-field assembly forms deviate by {deviation:.3e} (guard {tol:.3e})"
        )));
    }
    Ok(DriftFields {
        n,
        w,
        form_deviation: deviation,
    })
}

// ---------------------------------------------------------------------------
// Coupled solve
// ---------------------------------------------------------------------------

/// Pointwise coefficient matrix A = D H^{-1} of the divergence form.
fn coefficient_matrix(derived: &DerivedFields, i: usize, j: usize) -> SmallMat {
    derived.hinv.mat(i, j).scaled(derived.d.at(i, j))
}

/// Divergence-form operator on stacked interior unknowns (node-major,
/// component-minor): -div(D H^{-1} grad u) with arithmetic-mean edge
/// coefficients. Symmetric positive definite.
struct DivergenceFormOp<'a> {
    map: InteriorMap,
    derived: &'a DerivedFields,
}

impl DivergenceFormOp<'_> {
    fn edge_coeff(&self, a: (usize, usize), b: (usize, usize)) -> SmallMat {
        let ma = coefficient_matrix(self.derived, a.0, a.1);
        let mb = coefficient_matrix(self.derived, b.0, b.1);
        ma.add(&mb).scaled(0.5)
    }

    fn neighbors(i: usize, j: usize) -> [(usize, usize); 4] {
        [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
    }
}

impl LinearOp for DivergenceFormOp<'_> {
    fn dim(&self) -> usize {
        2 * self.map.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.map.grid;
        let n = 2usize;
        let h2 = g.h * g.h;
        for k in 0..self.map.len() {
            let (i, j) = self.map.node(k);
            let mut acc = [0.0f64; 2];
            for nb in Self::neighbors(i, j) {
                let e = self.edge_coeff((i, j), nb);
                let interior = !g.is_boundary(nb.0, nb.1);
                for p in 0..n {
                    for q in 0..n {
                        let xq_here = x[n * k + q];
                        let xq_nb = if interior {
                            x[n * self.map.unknown(nb.0, nb.1) + q]
                        } else {
                            0.0
                        };
                        acc[p] += e.a[p][q] * (xq_here - xq_nb) / h2;
                    }
                }
            }
            y[n * k] = acc[0];
            y[n * k + 1] = acc[1];
        }
    }
}

/// Nondivergence operator -laplace(u_p) - c_F W_pk . grad(u_k) on the same
/// stacked unknowns (general, solved by BiCGStab as a cross-check).
struct NonDivergenceOp<'a> {
    map: InteriorMap,
    w: &'a DriftFields,
    c_f: f64,
}

impl LinearOp for NonDivergenceOp<'_> {
    fn dim(&self) -> usize {
        2 * self.map.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.map.grid;
        let n = 2usize;
        let h2 = g.h * g.h;
        let two_h = 2.0 * g.h;
        let read = |x: &[f64], i: usize, j: usize, q: usize| -> f64 {
            if g.is_boundary(i, j) {
                0.0
            } else {
                x[n * self.map.unknown(i, j) + q]
            }
        };
        for k in 0..self.map.len() {
            let (i, j) = self.map.node(k);
            for p in 0..n {
                let mut lap = 4.0 * x[n * k + p];
                lap -= read(x, i - 1, j, p) + read(x, i + 1, j, p);
                lap -= read(x, i, j - 1, p) + read(x, i, j + 1, p);
                let mut drift = 0.0;
                for q in 0..n {
                    let gx = (read(x, i + 1, j, q) - read(x, i - 1, j, q)) / two_h;
                    let gy = (read(x, i, j + 1, q) - read(x, i, j - 1, q)) / two_h;
                    let w = self.w.at(p, q, i, j);
                    drift += w[0] * gx + w[1] * gy;
                }
                y[n * k + p] = lap / h2 - self.c_f * drift;
            }
        }
    }
}

/// Result of the coupled solve.
#[derive(Debug, Clone)]
pub struct CoupledSolution {
    pub u: Vec<ScalarField>,
    /// Max nodal deviation of the nondivergence cross-check, when run.
    pub cross_check_deviation: Option<f64>,
}

/// Solve the coupled system for the first n illuminations. The divergence
/// form (symmetric positive definite for n = 2, where c_F = 1) is the
/// primary discretization; the nondivergence form is solved as an optional
/// cross-check and the max deviation recorded.
pub fn solve_coupled(
    derived: &DerivedFields,
    illums: &IlluminationSet,
    settings: &EllipticSettings,
) -> Result<CoupledSolution> {
    let grid = derived.grid;
    let n = derived.n;
    if n != 2 {
        return Err(Error::Config(
            "the coupled solver is two-dimensional".into(),
        ));
    }
    if illums.m() < n {
        return Err(Error::Config("not enough illuminations".into()));
    }
    let map = InteriorMap::new(grid);
    let op = DivergenceFormOp { map, derived };
    let h2 = grid.h * grid.h;
    let g1 = &illums.fields[0];
    let g2 = &illums.fields[1];
    let gval = |q: usize, i: usize, j: usize| if q == 0 { g1.at(i, j) } else { g2.at(i, j) };

    // rhs from Dirichlet elimination, Jacobi diagonal for preconditioning
    let mut b = vec![0.0; 2 * map.len()];
    let mut diag_inv = vec![0.0; 2 * map.len()];
    for k in 0..map.len() {
        let (i, j) = map.node(k);
        let mut diag = [0.0f64; 2];
        for nb in DivergenceFormOp::neighbors(i, j) {
            let e = op.edge_coeff((i, j), nb);
            for p in 0..2 {
                diag[p] += e.a[p][p] / h2;
                if grid.is_boundary(nb.0, nb.1) {
                    for q in 0..2 {
                        b[2 * k + p] += e.a[p][q] * gval(q, nb.0, nb.1) / h2;
                    }
                }
            }
        }
        diag_inv[2 * k] = 1.0 / diag[0];
        diag_inv[2 * k + 1] = 1.0 / diag[1];
    }

    let cap = settings.iter_cap(grid);
    let (x, _, _) = pcg(
        &op,
        &b,
        Some(&diag_inv),
        settings.tol,
        cap,
        "coupled elliptic (divergence form)",
    )
    .map_err(|e| attach_min_det(e, derived))?;

    let unpack = |x: &[f64]| -> Vec<ScalarField> {
        (0..2)
            .map(|q| {
                let boundary = if q == 0 { g1.clone() } else { g2.clone() };
                let interior: Vec<f64> = (0..map.len()).map(|k| x[2 * k + q]).collect();
                map.expand(&interior, &boundary)
            })
            .collect()
    };
    let u = unpack(&x);

    let cross_check_deviation = if settings.cross_check {
        let w = build_w(derived)?;
        let ndop = NonDivergenceOp {
            map,
            w: &w,
            c_f: derived.c_f,
        };
        // rhs: boundary values enter both the Laplacian stencil and the
        // centered drift gradients
        let mut bn = vec![0.0; 2 * map.len()];
        let two_h = 2.0 * grid.h;
        for k in 0..map.len() {
            let (i, j) = map.node(k);
            for p in 0..2 {
                let mut rhs = 0.0;
                for nb in DivergenceFormOp::neighbors(i, j) {
                    if grid.is_boundary(nb.0, nb.1) {
                        rhs += gval(p, nb.0, nb.1) / h2;
                    }
                }
                for q in 0..2 {
                    let wpq = w.at(p, q, i, j);
                    let mut gx = 0.0;
                    let mut gy = 0.0;
                    if grid.is_boundary(i + 1, j) {
                        gx += gval(q, i + 1, j) / two_h;
                    }
                    if grid.is_boundary(i - 1, j) {
                        gx -= gval(q, i - 1, j) / two_h;
                    }
                    if grid.is_boundary(i, j + 1) {
                        gy += gval(q, i, j + 1) / two_h;
                    }
                    if grid.is_boundary(i, j - 1) {
                        gy -= gval(q, i, j - 1) / two_h;
                    }
                    rhs += derived.c_f * (wpq[0] * gx + wpq[1] * gy);
                }
                bn[2 * k + p] = rhs;
            }
        }
        let (xn, _, _) = bicgstab(
            &ndop,
            &bn,
            settings.tol,
            2 * cap,
            "coupled elliptic (nondivergence form)",
        )
        .map_err(|e| attach_min_det(e, derived))?;
        let un = unpack(&xn);
        let mut dev = 0.0f64;
        for q in 0..2 {
            for kk in 0..grid.len() {
                dev = dev.max((u[q].values[kk] - un[q].values[kk]).abs());
            }
        }
        Some(dev)
    } else {
        None
    };

    Ok(CoupledSolution {
        u,
        cross_check_deviation,
    })
}

fn attach_min_det(e: Error, derived: &DerivedFields) -> Error {
    if let Error::SolverDiverged {
        context,
        iters,
        residual,
        ..
    } = e
    {
        let mut min_det = f64::INFINITY;
        for j in 0..derived.grid.ny {
            for i in 0..derived.grid.nx {
                min_det = min_det.min(derived.h.mat(i, j).det());
            }
        }
        Error::SolverDiverged {
            context,
            iters,
            residual,
            min_det,
        }
    } else {
        e
    }
}

// ---------------------------------------------------------------------------
// Sigma recovery
// ---------------------------------------------------------------------------

/// Output of the potential-based sigma recovery.
#[derive(Debug, Clone)]
pub struct SigmaRecovery {
    /// The assembled gradient of the potential (sigma^{-2a}, or log sigma
    /// when alpha = 0).
    pub rhs: VectorField,
    /// Potential from the Poisson solve with true boundary values.
    pub potential: ScalarField,
    /// Potential from path integration (comparison route).
    pub potential_path: ScalarField,
    pub sigma: ScalarField,
    pub curl_residual: ScalarField,
    pub route_deviation: f64,
    pub clamped_fraction: f64,
    pub path_dependence: f64,
}

/// Assemble grad(sigma^{-2a}) (or grad(log sigma) for alpha = 0) from the
/// solutions, then recover the potential both by a Poisson solve with exact
/// boundary values and by path integration, and extract sigma.
pub fn sigma_from_solutions(
    derived: &DerivedFields,
    u: &[ScalarField],
    alpha: f64,
    truth_potential: &ScalarField,
    settings: &EllipticSettings,
) -> Result<SigmaRecovery> {
    let grid = derived.grid;
    let n = derived.n;
    let grad_u: Vec<VectorField> = u.iter().take(n).map(|f| f.gradient()).collect();
    let grad_dhinv: Vec<VectorField> = (0..n * n)
        .map(|e| {
            ScalarField {
                grid,
                values: derived
                    .d
                    .values
                    .iter()
                    .zip(&derived.hinv.planes[e])
                    .map(|(d, hv)| d * hv)
                    .collect(),
            }
            .gradient()
        })
        .collect();

    let mut rhs = VectorField::zeros(grid, 2);
    for jj in 0..grid.ny {
        for ii in 0..grid.nx {
            let dval = derived.d.at(ii, jj);
            let coeff = if alpha == 0.0 {
                1.0 / dval
            } else {
                -2.0 * alpha * derived.c_f / dval
            };
            let mut acc = [0.0; 3];
            for i in 0..n {
                let gi = grad_u[i].at(ii, jj);
                for j in 0..n {
                    let gj = grad_u[j].at(ii, jj);
                    let gd = grad_dhinv[i * n + j].at(ii, jj);
                    acc = axpy(dot(&gd, &gi), &gj, &acc);
                }
            }
            rhs.set(ii, jj, &scale(coeff, &acc));
        }
    }

    let curl_residual = rhs.curl2()?;
    let div_rhs = rhs.divergence();
    let cap = settings.iter_cap(grid);
    let potential = crate::solver::poisson_dirichlet(&div_rhs, truth_potential, settings.tol, cap)?;
    let x0 = grid.center();
    let (potential_path, path_dependence) =
        integrate_gradient(&rhs, x0, truth_potential.at(x0.0, x0.1));
    let mut route_deviation = 0.0f64;
    for k in 0..grid.len() {
        route_deviation =
            route_deviation.max((potential.values[k] - potential_path.values[k]).abs());
    }

    // extract sigma; non-positive powers are clamped and counted
    let mut clamped = 0usize;
    let sigma = if alpha == 0.0 {
        potential.map(f64::exp)
    } else {
        let floor = 1e-12;
        let vals: Vec<f64> = potential
            .values
            .iter()
            .map(|&p| {
                let p = if p <= 0.0 {
                    clamped += 1;
                    floor
                } else {
                    p
                };
                p.powf(-1.0 / (2.0 * alpha))
            })
            .collect();
        ScalarField { grid, values: vals }
    };
    let clamped_fraction = clamped as f64 / grid.len() as f64;
    if clamped_fraction > 0.001 {
        return Err(Error::NonPositivePower {
            name: format!("sigma^(-2*{alpha})"),
            fraction: 100.0 * clamped_fraction,
        });
    }

    Ok(SigmaRecovery {
        rhs,
        potential,
        potential_path,
        sigma,
        curl_residual,
        route_deviation,
        clamped_fraction,
        path_dependence,
    })
}

// ---------------------------------------------------------------------------
// Drift-operator norm estimate
// ---------------------------------------------------------------------------

/// Norm estimate of the drift operator v -> laplace^{-1}(W . grad v) on the
/// product of zero-trace gradient spaces, with the analytic upper bound
/// sqrt(m) |laplace^{-1}| |W|_inf and a solvability margin.
#[derive(Debug, Clone)]
pub struct PwEstimate {
    pub estimate: f64,
    pub bound: f64,
    pub w_sup: f64,
    pub inv_laplacian_norm: f64,
    /// Signed dominant Rayleigh quotient of the drift operator itself.
    pub dominant_rayleigh: f64,
    /// |1 + c_F * dominant_rayleigh|: distance of the coupled system from
    /// the singular configuration, as seen by the estimator.
    pub fredholm_margin: f64,
}

struct PwWorkspace<'a> {
    grid: Grid,
    map: InteriorMap,
    w: &'a DriftFields,
    tol: f64,
    cap: usize,
}

impl PwWorkspace<'_> {
    fn len(&self) -> usize {
        self.map.len()
    }

    /// centered gradient of an interior-vector component with zero boundary
    fn grad_component(&self, v: &[f64], out_x: &mut [f64], out_y: &mut [f64]) {
        let g = self.grid;
        let two_h = 2.0 * g.h;
        let read = |i: usize, j: usize| -> f64 {
            if g.is_boundary(i, j) {
                0.0
            } else {
                v[self.map.unknown(i, j)]
            }
        };
        for k in 0..self.len() {
            let (i, j) = self.map.node(k);
            out_x[k] = (read(i + 1, j) - read(i - 1, j)) / two_h;
            out_y[k] = (read(i, j + 1) - read(i, j - 1)) / two_h;
        }
    }

    /// transpose of the centered-gradient contraction with W_pq
    fn grad_transpose(&self, p: usize, q: usize, v: &[f64], out: &mut [f64]) {
        let g = self.grid;
        let two_h = 2.0 * g.h;
        let wf = &self.w.w[p * self.w.n + q];
        for o in out.iter_mut() {
            *o = 0.0;
        }
        for k in 0..self.len() {
            let (i, j) = self.map.node(k);
            let w = wf.at(i, j);
            let mut scatter = |ii: usize, jj: usize, coeff: f64| {
                if !g.is_boundary(ii, jj) {
                    out[self.map.unknown(ii, jj)] += coeff * v[k];
                }
            };
            scatter(i + 1, j, w[0] / two_h);
            scatter(i - 1, j, -w[0] / two_h);
            scatter(i, j + 1, w[1] / two_h);
            scatter(i, j - 1, -w[1] / two_h);
        }
    }

    /// P v: components laplace^{-1}(W_pq . grad v_q)
    fn apply_p(&self, v: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let nl = self.len();
        let mut gx = vec![0.0; nl];
        let mut gy = vec![0.0; nl];
        let mut out = Vec::with_capacity(2);
        for p in 0..2 {
            let mut rhs = vec![0.0; nl];
            for q in 0..2 {
                self.grad_component(&v[q], &mut gx, &mut gy);
                let wf = &self.w.w[p * self.w.n + q];
                for k in 0..nl {
                    let (i, j) = self.map.node(k);
                    let w = wf.at(i, j);
                    rhs[k] += w[0] * gx[k] + w[1] * gy[k];
                }
            }
            out.push(dirichlet_solve(self.grid, &rhs, self.tol, self.cap)?);
        }
        Ok(out)
    }

    /// adjoint of P in the gradient inner product
    fn apply_p_adjoint(&self, v: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let nl = self.len();
        let mut out = Vec::with_capacity(2);
        for q in 0..2 {
            let mut rhs = vec![0.0; nl];
            let mut tmp = vec![0.0; nl];
            for p in 0..2 {
                self.grad_transpose(p, q, &v[p], &mut tmp);
                for k in 0..nl {
                    rhs[k] += tmp[k];
                }
            }
            out.push(dirichlet_solve(self.grid, &rhs, self.tol, self.cap)?);
        }
        Ok(out)
    }

    /// gradient-space inner product sum_i h^2 v_i^T A w_i
    fn inner(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        let mut acc = 0.0;
        let mut tmp = vec![0.0; self.len()];
        for c in 0..2 {
            neg_laplacian_apply(self.grid, &b[c], &mut tmp);
            acc += h2 * crate::solver::dot(&a[c], &tmp);
        }
        acc
    }
}

/// Power iteration for the operator norm (through the self-adjoint P*P) and
/// a signed Rayleigh estimate of P itself; 50 iterations or relative change
/// below 1e-6.
pub fn estimate_pw_norm(
    derived: &DerivedFields,
    w: &DriftFields,
    seed: u64,
    settings: &EllipticSettings,
) -> Result<PwEstimate> {
    use rand::{Rng, SeedableRng};
    let grid = derived.grid;
    let ws = PwWorkspace {
        grid,
        map: InteriorMap::new(grid),
        w,
        tol: settings.tol.max(1e-12),
        cap: settings.iter_cap(grid).max(4000),
    };
    let w_sup = w.sup_norm();
    let inv_laplacian_norm = 1.0 / laplacian_min_eigenvalue(grid).sqrt();
    let m = 2.0f64;
    let bound = m.sqrt() * inv_laplacian_norm * w_sup;

    if w_sup == 0.0 {
        return Ok(PwEstimate {
            estimate: 0.0,
            bound,
            w_sup,
            inv_laplacian_norm,
            dominant_rayleigh: 0.0,
            fredholm_margin: 1.0,
        });
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..ws.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let nrm = ws.inner(&v, &v).sqrt();
    for c in &mut v {
        for x in c.iter_mut() {
            *x /= nrm;
        }
    }

    let mut lambda = 0.0f64;
    let mut rayleigh_p = 0.0f64;
    for _ in 0..50 {
        let pv = ws.apply_p(&v)?;
        let z = ws.apply_p_adjoint(&pv)?;
        let new_lambda = ws.inner(&v, &z);
        rayleigh_p = ws.inner(&v, &pv);
        let nz = ws.inner(&z, &z).sqrt();
        if nz == 0.0 {
            lambda = 0.0;
            break;
        }
        v = z;
        for c in &mut v {
            for x in c.iter_mut() {
                *x /= nz;
            }
        }
        let rel = (new_lambda - lambda).abs() / new_lambda.abs().max(1e-300);
        lambda = new_lambda;
        if rel < 1e-6 {
            break;
        }
    }
    let estimate = lambda.max(0.0).sqrt();
    let c_f = derived.c_f;
    Ok(PwEstimate {
        estimate,
        bound,
        w_sup,
        inv_laplacian_norm,
        dominant_rayleigh: rayleigh_p,
        fredholm_margin: (1.0 + c_f * rayleigh_p).abs(),
    })
}

// ---------------------------------------------------------------------------
// Definiteness and coercivity probes
// ---------------------------------------------------------------------------

/// Assemble the divergence-form matrix in banded storage and run a Cholesky
/// probe; returns the smallest pivot. Intended for small grids.
pub fn spd_probe(derived: &DerivedFields) -> Result<f64> {
    let grid = derived.grid;
    let map = InteriorMap::new(grid);
    let op = DivergenceFormOp { map, derived };
    let nxi = grid.nx - 2;
    let nu = 2 * map.len();
    let half_bw = 2 * nxi + 1;
    let h2 = grid.h * grid.h;
    let mut banded = BandedSym::new(nu, half_bw);
    for k in 0..map.len() {
        let (i, j) = map.node(k);
        let mut diag = SmallMat::zero(2);
        for nb in DivergenceFormOp::neighbors(i, j) {
            let e = op.edge_coeff((i, j), nb);
            diag = diag.add(&e);
            if !grid.is_boundary(nb.0, nb.1) {
                let knb = map.unknown(nb.0, nb.1);
                for p in 0..2 {
                    for q in 0..2 {
                        let (r, c) = (2 * k + p, 2 * knb + q);
                        if c <= r {
                            banded.set(r, c, -e.a[p][q] / h2);
                        }
                    }
                }
            }
        }
        for p in 0..2 {
            for q in 0..=p {
                banded.set(2 * k + p, 2 * k + q, diag.a[p][q] / h2);
            }
        }
    }
    banded.cholesky().map_err(|(row, pivot)| {
        Error::CrossCheck(format!(
            "divergence-form factorization probe found non-positive pivot {pivot:.3e} at row {row}"
        ))
    })
}

/// Smallest eigenvalue of the assembled divergence form by inverse power
/// iteration (each step is a PCG solve). Small grids only.
pub fn divergence_form_min_eigenvalue(derived: &DerivedFields, iters: usize) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let grid = derived.grid;
    let map = InteriorMap::new(grid);
    let op = DivergenceFormOp { map, derived };
    let nu = 2 * map.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12345);
    let mut v: Vec<f64> = (0..nu).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nrm = crate::solver::norm2(&v);
    for x in v.iter_mut() {
        *x /= nrm;
    }
    let mut lambda = 0.0;
    for _ in 0..iters {
        let (y, _, _) = pcg(&op, &v, None, 1e-10, 40 * grid.nx, "inverse power step")?;
        let ny = crate::solver::norm2(&y);
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = yi / ny;
        }
        let mut av = vec![0.0; nu];
        op.apply(&v, &mut av);
        lambda = crate::solver::dot(&v, &av);
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::synthesize;
    use crate::frame::{derived_fields, TransitionMethod};
    use crate::grid::observed_order;
    use crate::phantom::{Phantom, PhantomKind};
    use crate::testutil::{layered_half_exact, layered_one_exact};

    fn max_vec_err(f: &VectorField, truth: impl Fn(f64, f64) -> Vec3) -> f64 {
        let g = f.grid;
        let mut worst = 0.0f64;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (x, y) = g.coords(i, j);
                let t = truth(x, y);
                let v = f.at(i, j);
                for c in 0..2 {
                    worst = worst.max((v[c] - t[c]).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn drift_fields_match_hand_values() {
        let g = Grid::square(17);
        // alpha = 1: W11 = (2,0), W22 = (-2,0), off-diagonals zero
        let der = layered_one_exact(g);
        let w = build_w(&der).unwrap();
        assert!(max_vec_err(&w.w[0], |_, _| [2.0, 0.0, 0.0]) < 1e-11);
        assert!(max_vec_err(&w.w[3], |_, _| [-2.0, 0.0, 0.0]) < 1e-11);
        assert!(w.w[1].linf() < 1e-11 && w.w[2].linf() < 1e-11);

        // alpha = 1/2: same values, D = 1
        let der = layered_half_exact(g);
        let w = build_w(&der).unwrap();
        assert!(max_vec_err(&w.w[0], |_, _| [2.0, 0.0, 0.0]) < 1e-11);
        assert!(max_vec_err(&w.w[3], |_, _| [-2.0, 0.0, 0.0]) < 1e-11);
    }

    #[test]
    fn identity_data_gives_zero_drift() {
        let g = Grid::square(9);
        let s = crate::grid::FrameField::identity(g, 2);
        let bundle = crate::forward::DataBundle::from_frame_field(&s, 0.5).unwrap();
        let der = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
        let w = build_w(&der).unwrap();
        for f in &w.w {
            assert!(f.linf() < 1e-12);
        }
    }

    #[test]
    fn drift_form_deviation_shrinks_second_order() {
        let dev = |n: usize| -> f64 {
            let g = Grid::square(n);
            let p = Phantom::new(PhantomKind::Bump, g);
            let il = IlluminationSet::axes(g);
            let (bundle, _) = synthesize(&p, 0.5, &il, false).unwrap();
            let der = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
            build_w(&der).unwrap().form_deviation
        };
        let d33 = dev(33);
        let d65 = dev(65);
        assert!(
            observed_order(d33, d65) >= 1.5,
            "drift-form deviation {d33} -> {d65}"
        );
    }

    #[test]
    fn coupled_solve_is_exact_on_constant_data() {
        let g = Grid::square(33);
        let p = Phantom::new(PhantomKind::Constant, g);
        let il = IlluminationSet::default_for(&p);
        let (bundle, _) = synthesize(&p, 0.5, &il, true).unwrap();
        let der = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
        let sol = solve_coupled(&der, &il, &EllipticSettings::default()).unwrap();
        let mut err = 0.0f64;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (x, y) = g.coords(i, j);
                err = err.max((sol.u[0].at(i, j) - x).abs());
                err = err.max((sol.u[1].at(i, j) - y).abs());
            }
        }
        assert!(err < 1e-9, "coupled solve error {err}");
        assert!(sol.cross_check_deviation.unwrap() < 1e-8);
    }

    fn layered_coupled_err(n: usize, alpha: f64) -> f64 {
        let g = Grid::square(n);
        let p = Phantom::new(PhantomKind::LayeredExp, g);
        let il = IlluminationSet::default_for(&p);
        let (bundle, truth) = synthesize(&p, alpha, &il, true).unwrap();
        let der = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
        let sol = solve_coupled(&der, &il, &EllipticSettings::default()).unwrap();
        let mut err = 0.0f64;
        for q in 0..2 {
            for k in 0..g.len() {
                err = err.max((sol.u[q].values[k] - truth.u[q].values[k]).abs());
            }
        }
        err
    }

    #[test]
    fn coupled_solve_decouples_and_is_exact_on_layered_data() {
        // D H^{-1} = diag(e^{2x}, e^{-2x}) decouples the system, and the
        // exponential coefficient makes the edge fluxes constant along x, so
        // the discrete solution hits the closed form at the nodes.
        let e65 = layered_coupled_err(65, 1.0);
        assert!(e65 < 1e-8, "coupled solve error at 65^2: {e65}");
    }

    #[test]
    fn coupled_solve_converges_against_forward_oracle() {
        // On the bump phantom the coupled system and the conductivity solves
        // discretize the same solutions differently; their gap is O(h^2).
        let gap = |n: usize| -> f64 {
            let g = Grid::square(n);
            let p = Phantom::new(PhantomKind::Bump, g);
            let il = IlluminationSet::axes(g);
            let (bundle, truth) = synthesize(&p, 0.5, &il, false).unwrap();
            let der = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
            let sol = solve_coupled(&der, &il, &EllipticSettings::default()).unwrap();
            let mut dev = 0.0f64;
            for q in 0..2 {
                for k in 0..g.len() {
                    dev = dev.max((sol.u[q].values[k] - truth.u[q].values[k]).abs());
                }
            }
            dev
        };
        let d33 = gap(33);
        let d65 = gap(65);
        assert!(
            observed_order(d33, d65) >= 1.5,
            "coupled-vs-forward gap: {d33} -> {d65}"
        );
    }

    #[test]
    fn sigma_recovery_layered_alpha_one() {
        let g = Grid::square(65);
        let p = Phantom::new(PhantomKind::LayeredExp, g);
        let il = IlluminationSet::default_for(&p);
        let (bundle, truth) = synthesize(&p, 1.0, &il, true).unwrap();
        let der = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
        // exact solutions: the assembled rhs must match grad(e^{-4x})
        let rec = sigma_from_solutions(
            &der,
            &truth.u,
            1.0,
            &truth.sigma.map(|s| s.powf(-2.0)),
            &EllipticSettings::default(),
        )
        .unwrap();
        let h = g.h;
        let err_rhs = max_vec_err(&rec.rhs, |x, _| [-4.0 * (-4.0 * x).exp(), 0.0, 0.0]);
        assert!(err_rhs < 30.0 * h * h, "rhs error {err_rhs}");
        let mut err_sigma = 0.0f64;
        for k in 0..g.len() {
            err_sigma = err_sigma.max((rec.sigma.values[k] - truth.sigma.values[k]).abs());
        }
        assert!(err_sigma < 60.0 * h * h, "sigma error {err_sigma}");
        assert_eq!(rec.clamped_fraction, 0.0);
    }

    #[test]
    fn sigma_recovery_alpha_zero_uses_log_branch() {
        let g = Grid::square(65);
        let p = Phantom::new(PhantomKind::LayeredExp, g);
        let il = IlluminationSet::default_for(&p);
        let (bundle, truth) = synthesize(&p, 0.0, &il, true).unwrap();
        let der = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
        let rec = sigma_from_solutions(
            &der,
            &truth.u,
            0.0,
            &truth.log_sigma,
            &EllipticSettings::default(),
        )
        .unwrap();
        let err_rhs = max_vec_err(&rec.rhs, |_, _| [2.0, 0.0, 0.0]);
        let h = g.h;
        assert!(err_rhs < 16.0 * h * h, "log-branch rhs error {err_rhs}");
        let mut err_sigma = 0.0f64;
        for k in 0..g.len() {
            err_sigma = err_sigma.max((rec.sigma.values[k] - truth.sigma.values[k]).abs());
        }
        assert!(err_sigma < 60.0 * h * h, "sigma error {err_sigma}");
    }

    #[test]
    fn zero_drift_estimates_zero_norm() {
        let g = Grid::square(17);
        let s = crate::grid::FrameField::identity(g, 2);
        let bundle = crate::forward::DataBundle::from_frame_field(&s, 0.5).unwrap();
        let der = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
        let w = build_w(&der).unwrap();
        let est = estimate_pw_norm(&der, &w, 9, &EllipticSettings::default()).unwrap();
        assert_eq!(est.estimate, 0.0);
        assert_eq!(est.fredholm_margin, 1.0);
    }

    #[test]
    fn drift_norm_estimate_respects_bound() {
        let g = Grid::square(33);
        let p = Phantom::new(PhantomKind::LayeredExp, g);
        let il = IlluminationSet::default_for(&p);
        let (bundle, _) = synthesize(&p, 1.0, &il, true).unwrap();
        let der = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
        let w = build_w(&der).unwrap();
        let est = estimate_pw_norm(&der, &w, 17, &EllipticSettings::default()).unwrap();
        assert!(
            est.estimate <= est.bound * (1.0 + 1e-9),
            "estimate {} exceeds bound {}",
            est.estimate,
            est.bound
        );
        assert!(est.estimate > 0.0);
        assert!(est.fredholm_margin > 0.1, "margin {}", est.fredholm_margin);
    }

    #[test]
    fn coupled_solutions_respond_linearly_to_data_noise() {
        let g = Grid::square(33);
        let p = Phantom::new(PhantomKind::LayeredExp, g);
        let il = IlluminationSet::default_for(&p);
        let (bundle, _) = synthesize(&p, 1.0, &il, true).unwrap();
        let settings = EllipticSettings {
            cross_check: false,
            ..EllipticSettings::default()
        };
        let base = solve_coupled(
            &derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap(),
            &il,
            &settings,
        )
        .unwrap();
        let mut ratios = Vec::new();
        for (k, level) in [1e-3, 1e-2].iter().enumerate() {
            let noisy = crate::forward::perturb(&bundle, *level, 0.08, 200 + k as u64).unwrap();
            let der = derived_fields(&noisy, TransitionMethod::GramSchmidt).unwrap();
            let sol = solve_coupled(&der, &il, &settings).unwrap();
            let mut dist = 0.0f64;
            for q in 0..2 {
                let d = base.u[q]
                    .zip(&sol.u[q], |a, b| a - b)
                    .norm(crate::grid::NormKind::H1);
                dist = dist.max(d);
            }
            ratios.push(dist / level);
        }
        let hi = ratios.iter().cloned().fold(0.0f64, f64::max);
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            hi / lo <= 3.0,
            "solution response should scale linearly: {ratios:?}"
        );
    }

    #[test]
    fn nondivergence_cross_check_agrees_at_second_order() {
        let gap = |n: usize| -> f64 {
            let g = Grid::square(n);
            let p = Phantom::new(PhantomKind::Bump, g);
            let il = IlluminationSet::axes(g);
            let (bundle, _) = synthesize(&p, 0.5, &il, false).unwrap();
            let der = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
            solve_coupled(&der, &il, &EllipticSettings::default())
                .unwrap()
                .cross_check_deviation
                .unwrap()
        };
        let d33 = gap(33);
        let d65 = gap(65);
        assert!(
            observed_order(d33, d65) >= 1.5,
            "form agreement: {d33} -> {d65}"
        );
    }

    #[test]
    fn potential_curl_residual_converges_on_bump_data() {
        let curl = |n: usize| -> f64 {
            let g = Grid::square(n);
            let p = Phantom::new(PhantomKind::Bump, g);
            let il = IlluminationSet::axes(g);
            let (bundle, truth) = synthesize(&p, 0.5, &il, false).unwrap();
            let der = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
            let sol = solve_coupled(&der, &il, &EllipticSettings::default()).unwrap();
            let rec = sigma_from_solutions(
                &der,
                &sol.u,
                0.5,
                &truth.sigma.map(|s| 1.0 / s),
                &EllipticSettings::default(),
            )
            .unwrap();
            rec.curl_residual.norm(crate::grid::NormKind::Linf)
        };
        let c33 = curl(33);
        let c65 = curl(65);
        assert!(
            observed_order(c33, c65) >= 1.0,
            "curl residual: {c33} -> {c65}"
        );
    }

    #[test]
    fn spd_probe_passes_and_coercivity_bound_holds() {
        let g = Grid::square(25);
        let p = Phantom::new(PhantomKind::LayeredExp, g);
        let il = IlluminationSet::default_for(&p);
        let (bundle, _) = synthesize(&p, 1.0, &il, true).unwrap();
        let der = derived_fields(&bundle, TransitionMethod::GramSchmidt).unwrap();
        let pivot = spd_probe(&der).unwrap();
        assert!(pivot > 0.0);

        // lambda_min(M) >= c0 / (n |H|_inf) * lambda_min(L)
        let lam = divergence_form_min_eigenvalue(&der, 25).unwrap();
        let mut min_d = f64::INFINITY;
        for j in 0..g.ny {
            for i in 0..g.nx {
                min_d = min_d.min(der.d.at(i, j));
            }
        }
        let c0 = min_d;
        let bound = c0 / (2.0 * der.h.linf()) * laplacian_min_eigenvalue(g);
        assert!(
            lam >= 0.99 * bound,
            "min eigenvalue {lam} below coercivity bound {bound}"
        );
    }
}
