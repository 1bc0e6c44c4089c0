//! Frame-transport reconstruction: the gradient systems for the S and R
//! frames are integrated along an axis-aligned family of grid paths from a
//! seed point, the source term F is evaluated from the transported frame,
//! and log sigma is recovered by path integration of F.

use crate::error::{Error, Result};
use crate::frame::{f_from_r, f_from_s, frame_consistency, orthonormality_defect, DerivedFields};
use crate::grid::{FrameField, Grid, ScalarField, VectorField};
use crate::linalg::{axpy, dot, scale, SmallMat, Vec3};

/// Which frame the transport works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameConvention {
    S,
    R,
}

/// Seed for the transport: node, log sigma there, and the frame there.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub x0: (usize, usize),
    pub log_sigma0: f64,
    pub frame0: SmallMat,
    pub convention: FrameConvention,
}

impl SeedData {
    /// Consistency of the seed frame with the data at the seed node:
    /// S0^T S0 vs H(x0) for the S convention, orthonormality for R.
    pub fn consistency_defect(&self, derived: &DerivedFields) -> f64 {
        match self.convention {
            FrameConvention::S => {
                let gram = self.frame0.transpose().mul(&self.frame0);
                gram.sub(&derived.h.mat(self.x0.0, self.x0.1)).max_abs()
            }
            FrameConvention::R => self.frame0.orthonormality_defect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Path family
// ---------------------------------------------------------------------------

/// One grid-edge step between adjacent nodes.
#[derive(Debug, Clone, Copy)]
pub struct PathStep {
    pub from: (usize, usize),
    pub to: (usize, usize),
}

impl PathStep {
    /// (axis, sign) of the displacement from -> to.
    pub fn direction(&self) -> (usize, f64) {
        if self.from.1 == self.to.1 {
            (0, if self.to.0 > self.from.0 { 1.0 } else { -1.0 })
        } else {
            (1, if self.to.1 > self.from.1 { 1.0 } else { -1.0 })
        }
    }
}

/// Ordered axis-aligned sweep reaching every node exactly once.
#[derive(Debug, Clone)]
pub struct PathFamily {
    pub x0: (usize, usize),
    pub steps: Vec<PathStep>,
}

impl PathFamily {
    /// Sweep the seed row first, then every column.
    pub fn row_first(grid: Grid, x0: (usize, usize)) -> Self {
        let (i0, j0) = x0;
        let mut steps = Vec::with_capacity(grid.len() - 1);
        for i in i0 + 1..grid.nx {
            steps.push(PathStep {
                from: (i - 1, j0),
                to: (i, j0),
            });
        }
        for i in (0..i0).rev() {
            steps.push(PathStep {
                from: (i + 1, j0),
                to: (i, j0),
            });
        }
        for i in 0..grid.nx {
            for j in j0 + 1..grid.ny {
                steps.push(PathStep {
                    from: (i, j - 1),
                    to: (i, j),
                });
            }
            for j in (0..j0).rev() {
                steps.push(PathStep {
                    from: (i, j + 1),
                    to: (i, j),
                });
            }
        }
        PathFamily { x0, steps }
    }

    /// Sweep the seed column first, then every row (used to measure
    /// path dependence).
    pub fn column_first(grid: Grid, x0: (usize, usize)) -> Self {
        let (i0, j0) = x0;
        let mut steps = Vec::with_capacity(grid.len() - 1);
        for j in j0 + 1..grid.ny {
            steps.push(PathStep {
                from: (i0, j - 1),
                to: (i0, j),
            });
        }
        for j in (0..j0).rev() {
            steps.push(PathStep {
                from: (i0, j + 1),
                to: (i0, j),
            });
        }
        for j in 0..grid.ny {
            for i in i0 + 1..grid.nx {
                steps.push(PathStep {
                    from: (i - 1, j),
                    to: (i, j),
                });
            }
            for i in (0..i0).rev() {
                steps.push(PathStep {
                    from: (i + 1, j),
                    to: (i, j),
                });
            }
        }
        PathFamily { x0, steps }
    }
}

// ---------------------------------------------------------------------------
// Right-hand sides of the closed gradient systems
// ---------------------------------------------------------------------------

/// Data ingredients of the gradient systems at one spatial point.
#[derive(Debug, Clone, Copy)]
pub struct RhsPoint {
    pub n: usize,
    pub grad_log_d: Vec3,
    pub grad_hinv: [[Vec3; 3]; 3],
    pub u: [[Vec3; 3]; 3],
    pub vs: [[Vec3; 3]; 3],
    pub va: [[Vec3; 3]; 3],
}

impl DerivedFields {
    /// Sample the rhs ingredients at an arbitrary point by bilinear
    /// interpolation of the derived fields.
    pub fn rhs_point(&self, x: f64, y: f64) -> RhsPoint {
        let n = self.n;
        let mut p = RhsPoint {
            n,
            grad_log_d: self.grad_log_d.sample(x, y),
            grad_hinv: [[[0.0; 3]; 3]; 3],
            u: [[[0.0; 3]; 3]; 3],
            vs: [[[0.0; 3]; 3]; 3],
            va: [[[0.0; 3]; 3]; 3],
        };
        for i in 0..n {
            for k in 0..n {
                p.grad_hinv[i][k] = self.grad_hinv[i * n + k].sample(x, y);
                p.u[i][k] = self.u[i * n + k].sample(x, y);
                p.vs[i][k] = self.vs[i * n + k].sample(x, y);
                p.va[i][k] = self.va[i * n + k].sample(x, y);
            }
        }
        p
    }

    /// Same ingredients read exactly at a node.
    pub fn rhs_point_at(&self, i: usize, j: usize) -> RhsPoint {
        let (x, y) = self.grid.coords(i, j);
        self.rhs_point(x, y)
    }
}

fn f_point_from_s(p: &RhsPoint, s: &SmallMat, c_f: f64) -> Vec3 {
    let mut acc = p.grad_log_d;
    for j in 0..p.n {
        let sj = s.col(j);
        for k in 0..p.n {
            acc = axpy(dot(&p.grad_hinv[j][k], &sj), &s.col(k), &acc);
        }
    }
    scale(c_f, &acc)
}

fn f_point_from_r(p: &RhsPoint, r: &SmallMat, c_f: f64) -> Vec3 {
    let mut acc = p.grad_log_d;
    for j in 0..p.n {
        let rj = r.col(j);
        for k in 0..p.n {
            acc = axpy(2.0 * dot(&p.vs[j][k], &rj), &r.col(k), &acc);
        }
    }
    scale(c_f, &acc)
}

/// Partial derivatives of the S frame predicted by the closed gradient
/// system, as matrices whose column i is the derivative of S_i. The source
/// term is eliminated through the frame itself; with alpha = 0 the F-terms
/// drop out identically.
pub fn grad_s_rhs(p: &RhsPoint, s: &SmallMat, alpha: f64, c_f: f64) -> [SmallMat; 2] {
    let n = s.n;
    let f = if alpha != 0.0 {
        f_point_from_s(p, s, c_f)
    } else {
        [0.0; 3]
    };
    let mut out = [SmallMat::zero(n), SmallMat::zero(n)];
    for i in 0..n {
        let si = s.col(i);
        let mut a = SmallMat::zero(n);
        for k in 0..n {
            let sk = s.col(k);
            let uik = p.u[i][k];
            a = a.add(&SmallMat::outer(n, &uik, &sk).scaled(0.5));
            a = a.add(&SmallMat::outer(n, &sk, &uik).scaled(0.5));
        }
        for j in 0..n {
            let sj = s.col(j);
            for k in 0..n {
                let w = 0.5 * dot(&p.grad_hinv[j][k], &si);
                a = a.add(&SmallMat::outer(n, &sj, &s.col(k)).scaled(w));
            }
        }
        if alpha != 0.0 {
            a = a.add(&SmallMat::identity(n).scaled(alpha * dot(&f, &si)));
            a = a.sub(&SmallMat::outer(n, &f, &si).scaled(alpha));
        }
        for d in 0..2 {
            for row in 0..n {
                out[d].a[row][i] = a.a[row][d];
            }
        }
    }
    out
}

/// Partial derivatives of the orthonormal R frame predicted by its gradient
/// system; also returns the skewness defect of R^T dR (distance of the
/// predicted motion from the rotation tangent space).
pub fn grad_r_rhs(p: &RhsPoint, r: &SmallMat, alpha: f64, c_f: f64) -> ([SmallMat; 2], f64) {
    let n = r.n;
    let f = if alpha != 0.0 {
        f_point_from_r(p, r, c_f)
    } else {
        [0.0; 3]
    };
    let mut out = [SmallMat::zero(n), SmallMat::zero(n)];
    for i in 0..n {
        let ri = r.col(i);
        let mut a = SmallMat::zero(n);
        for k in 0..n {
            let rk = r.col(k);
            a = a.add(&SmallMat::outer(n, &rk, &p.va[i][k]));
            a = a.sub(&SmallMat::outer(n, &p.vs[i][k], &rk));
        }
        for j in 0..n {
            let rj = r.col(j);
            for k in 0..n {
                let w = dot(&p.vs[j][k], &ri);
                a = a.add(&SmallMat::outer(n, &rj, &r.col(k)).scaled(w));
            }
        }
        if alpha != 0.0 {
            a = a.add(&SmallMat::identity(n).scaled(alpha * dot(&f, &ri)));
            a = a.sub(&SmallMat::outer(n, &f, &ri).scaled(alpha));
        }
        for d in 0..2 {
            for row in 0..n {
                out[d].a[row][i] = a.a[row][d];
            }
        }
    }
    let mut defect = 0.0f64;
    for m in &out {
        let rtm = r.transpose().mul(m);
        let sym = rtm.add(&rtm.transpose()).scaled(0.5);
        defect = defect.max(sym.max_abs());
    }
    (out, defect)
}

// ---------------------------------------------------------------------------
// Frame transport
// ---------------------------------------------------------------------------

/// Diagnostics accumulated by the transport.
#[derive(Debug, Clone, Default)]
pub struct TransportStats {
    /// Total Frobenius magnitude of the polar re-projections (R only).
    pub reortho_correction: f64,
    /// Largest skewness defect of the predicted motion (R only).
    pub max_skew_defect: f64,
}

/// Integrate the chosen frame system along the path family with classical
/// RK4 steps of size h; data at half-steps is interpolated bilinearly. In
/// the R convention every step is followed by a polar projection back onto
/// rotations and the correction magnitude is accumulated. Transport aborts
/// when the frame norm exceeds twice the a-priori bound sqrt(m |H|_inf).
pub fn integrate_frame(
    derived: &DerivedFields,
    seed: &SeedData,
    paths: &PathFamily,
) -> Result<(FrameField, TransportStats)> {
    let defect = seed.consistency_defect(derived);
    if defect > 1e-6 {
        return Err(Error::SeedInconsistent { defect });
    }
    let grid = derived.grid;
    let n = derived.n;
    let h = grid.h;
    let alpha = derived.alpha;
    let c_f = derived.c_f;
    let norm_bound = 2.0 * ((n as f64) * derived.h.linf()).sqrt();

    let mut frame = FrameField::zeros(grid, n, n);
    frame.set_mat(paths.x0.0, paths.x0.1, &seed.frame0);
    let mut stats = TransportStats::default();

    for step in &paths.steps {
        let (axis, sign) = step.direction();
        let (xf, yf) = grid.coords(step.from.0, step.from.1);
        let (xt, yt) = grid.coords(step.to.0, step.to.1);
        let (xm, ym) = (0.5 * (xf + xt), 0.5 * (yf + yt));
        let s0 = frame.mat(step.from.0, step.from.1);

        let mut rhs = |x: f64, y: f64, m: &SmallMat| -> SmallMat {
            let p = derived.rhs_point(x, y);
            match seed.convention {
                FrameConvention::S => grad_s_rhs(&p, m, alpha, c_f)[axis].scaled(sign),
                FrameConvention::R => {
                    let (d, skew) = grad_r_rhs(&p, m, alpha, c_f);
                    stats.max_skew_defect = stats.max_skew_defect.max(skew);
                    d[axis].scaled(sign)
                }
            }
        };

        let k1 = rhs(xf, yf, &s0);
        let k2 = rhs(xm, ym, &s0.add(&k1.scaled(0.5 * h)));
        let k3 = rhs(xm, ym, &s0.add(&k2.scaled(0.5 * h)));
        let k4 = rhs(xt, yt, &s0.add(&k3.scaled(h)));

        let mut snew = s0.add(
            &k1.add(&k2.scaled(2.0))
                .add(&k3.scaled(2.0))
                .add(&k4)
                .scaled(h / 6.0),
        );

        if seed.convention == FrameConvention::R {
            let projected = snew
                .polar_rotation2()
                .ok_or_else(|| Error::CrossCheck("polar projection degenerated".into()))?;
            stats.reortho_correction += projected.sub(&snew).frobenius();
            snew = projected;
        }

        let norm = snew.frobenius();
        if norm > norm_bound {
            return Err(Error::FrameBlowup {
                norm,
                bound: norm_bound,
                i: step.to.0,
                j: step.to.1,
            });
        }
        frame.set_mat(step.to.0, step.to.1, &snew);
    }
    Ok((frame, stats))
}

// ---------------------------------------------------------------------------
// Path integration of a gradient field
// ---------------------------------------------------------------------------

/// Trapezoidal line integration of F along a path family; the result takes
/// `value0` at the seed node.
pub fn integrate_gradient_along(f: &VectorField, paths: &PathFamily, value0: f64) -> ScalarField {
    let grid = f.grid;
    let h = grid.h;
    let mut out = ScalarField::zeros(grid);
    out.set(paths.x0.0, paths.x0.1, value0);
    for step in &paths.steps {
        let (axis, sign) = step.direction();
        let ff = f.at(step.from.0, step.from.1)[axis];
        let ft = f.at(step.to.0, step.to.1)[axis];
        let inc = sign * 0.5 * h * (ff + ft);
        let base = out.at(step.from.0, step.from.1);
        out.set(step.to.0, step.to.1, base + inc);
    }
    out
}

/// Row-first integration plus the path-dependence metric: the max deviation
/// from the column-first sweep. Non-zero curl shows up here.
pub fn integrate_gradient(f: &VectorField, x0: (usize, usize), value0: f64) -> (ScalarField, f64) {
    let grid = f.grid;
    let row = integrate_gradient_along(f, &PathFamily::row_first(grid, x0), value0);
    let col = integrate_gradient_along(f, &PathFamily::column_first(grid, x0), value0);
    let mut dep = 0.0f64;
    for k in 0..grid.len() {
        dep = dep.max((row.values[k] - col.values[k]).abs());
    }
    (row, dep)
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// Result of the transport reconstruction.
#[derive(Debug, Clone)]
pub struct OdeReconstruction {
    pub log_sigma: ScalarField,
    pub sigma: ScalarField,
    pub f: VectorField,
    pub frame: FrameField,
    pub path_dependence: f64,
    pub frame_defect: f64,
    pub stats: TransportStats,
}

/// Chain transport -> F -> path integration -> sigma = exp(log sigma).
pub fn reconstruct_sigma_ode(
    derived: &DerivedFields,
    seed: &SeedData,
) -> Result<OdeReconstruction> {
    let grid = derived.grid;
    let paths = PathFamily::row_first(grid, seed.x0);
    let (frame, stats) = integrate_frame(derived, seed, &paths)?;
    let (f, frame_defect) = match seed.convention {
        FrameConvention::S => {
            let f = f_from_s(derived, &frame);
            (f, frame_consistency(derived, &frame))
        }
        FrameConvention::R => {
            let f = f_from_r(derived, &frame)?;
            (f, orthonormality_defect(&frame))
        }
    };
    let (log_sigma, path_dependence) = integrate_gradient(&f, seed.x0, seed.log_sigma0);
    let sigma = log_sigma.map(f64::exp);
    Ok(OdeReconstruction {
        log_sigma,
        sigma,
        f,
        frame,
        path_dependence,
        frame_defect,
        stats,
    })
}

/// Seed whose frame carries the truth's orientation but the Gram factor of
/// the supplied data, so it stays consistent with H(x0) even when the data
/// were perturbed: Q is the polar rotation of S_truth T^T and the frame is
/// Q (T^{-1})^T (so frame^T frame = H exactly).
pub fn seed_reconciled(
    derived: &DerivedFields,
    truth: &crate::forward::SyntheticTruth,
    alpha: f64,
    x0: (usize, usize),
    convention: FrameConvention,
) -> Result<SeedData> {
    let (i, j) = x0;
    let n = derived.n;
    let mut s_truth = SmallMat::zero(n);
    let w = truth.sigma.at(i, j).powf(alpha);
    for c in 0..n {
        s_truth.set_col(c, &scale(w, &truth.grad_u[c].at(i, j)));
    }
    let q = s_truth
        .mul(&derived.t.mat(i, j).transpose())
        .polar_rotation2()
        .ok_or_else(|| Error::CrossCheck("degenerate truth frame at the seed".into()))?;
    let frame0 = match convention {
        FrameConvention::S => q.mul(&derived.tinv.mat(i, j).transpose()),
        FrameConvention::R => q,
    };
    Ok(SeedData {
        x0,
        log_sigma0: truth.log_sigma.at(i, j),
        frame0,
        convention,
    })
}

/// Build a seed from ground truth at a node (synthetic mode): the frame is
/// sigma^a grad(u) there, orthonormalized through T for the R convention.
pub fn seed_from_truth(
    derived: &DerivedFields,
    truth: &crate::forward::SyntheticTruth,
    alpha: f64,
    x0: (usize, usize),
    convention: FrameConvention,
) -> SeedData {
    let (i, j) = x0;
    let n = derived.n;
    let mut s0 = SmallMat::zero(n);
    let w = truth.sigma.at(i, j).powf(alpha);
    for c in 0..n {
        let g = truth.grad_u[c].at(i, j);
        s0.set_col(c, &scale(w, &g));
    }
    let frame0 = match convention {
        FrameConvention::S => s0,
        FrameConvention::R => s0.mul(&derived.t.mat(i, j).transpose()),
    };
    SeedData {
        x0,
        log_sigma0: truth.log_sigma.at(i, j),
        frame0,
        convention,
    }
}
