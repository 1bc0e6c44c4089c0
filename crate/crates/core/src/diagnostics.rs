//! Compatibility conditions evaluated as residual fields: curl-freeness of
//! the source term, connection coefficients of the orthonormal frame, the
//! flatness identities they must satisfy, and the angle-gradient relations.
//! On data in the range of the measurement map every residual vanishes at
//! the discretization order; off-range data leaves a finite footprint, which
//! makes this module a usable range test.

use crate::error::{Error, Result};
use crate::frame::{orthonormality_defect, DerivedFields};
use crate::grid::{FrameField, Grid, ScalarField, VectorField};
use crate::linalg::{axpy, dot, rot90, scale, Vec3};

/// Connection coefficients Gamma_ij^k of an orthonormal frame, stored as
/// n^3 scalar fields indexed (i * n + j) * n + k.
#[derive(Debug, Clone)]
pub struct ChristoffelField {
    pub n: usize,
    pub gamma: Vec<ScalarField>,
}

impl ChristoffelField {
    pub fn field(&self, i: usize, j: usize, k: usize) -> &ScalarField {
        &self.gamma[(i * self.n + j) * self.n + k]
    }

    pub fn value(&self, i: usize, j: usize, k: usize, ii: usize, jj: usize) -> f64 {
        self.field(i, j, k).at(ii, jj)
    }
}

/// Curl residual of the source-term field: the planar curl for 2-vector
/// fields, the pointwise max-magnitude curl component for x3-invariant
/// 3-vector fields.
pub fn curl_f_residual(f: &VectorField) -> Result<ScalarField> {
    match f.ncomp {
        2 => f.curl2(),
        3 => {
            let c = f.curl3()?;
            let mut out = ScalarField::zeros(f.grid);
            for k in 0..f.grid.len() {
                let m = c.comps[0][k]
                    .abs()
                    .max(c.comps[1][k].abs())
                    .max(c.comps[2][k].abs());
                out.values[k] = m;
            }
            Ok(out)
        }
        other => Err(Error::DimensionMismatch(format!(
            "curl residual needs 2 or 3 components, got {other}"
        ))),
    }
}

/// Gamma_ij^k = V^a_jk . R_i + V^s_ik . R_j - V^s_ij . R_k
///            + a (F . R_j) d_ik - a (F . R_k) d_ij
pub fn christoffel(
    derived: &DerivedFields,
    r: &FrameField,
    f: &VectorField,
) -> Result<ChristoffelField> {
    let defect = orthonormality_defect(r);
    if defect > 1e-6 {
        return Err(Error::NotOrthonormal { defect, tol: 1e-6 });
    }
    let n = derived.n;
    let grid = derived.grid;
    let alpha = derived.alpha;
    let mut gamma = vec![ScalarField::zeros(grid); n * n * n];
    for jj in 0..grid.ny {
        for ii in 0..grid.nx {
            let fv = f.at(ii, jj);
            let r_cols: Vec<Vec3> = (0..n).map(|c| r.columns[c].at(ii, jj)).collect();
            for i in 0..n {
                for j in 0..n {
                    let f_rj = dot(&fv, &r_cols[j]);
                    for k in 0..n {
                        let mut v = dot(&derived.va[j * n + k].at(ii, jj), &r_cols[i]);
                        v += dot(&derived.vs[i * n + k].at(ii, jj), &r_cols[j]);
                        v -= dot(&derived.vs[i * n + j].at(ii, jj), &r_cols[k]);
                        if i == k {
                            v += alpha * f_rj;
                        }
                        if i == j {
                            v -= alpha * dot(&fv, &r_cols[k]);
                        }
                        gamma[(i * n + j) * n + k].set(ii, jj, v);
                    }
                }
            }
        }
    }
    Ok(ChristoffelField { n, gamma })
}

/// Direct finite-difference evaluation (grad_{R_i} R_j) . R_k used to
/// cross-check the algebraic formula.
pub fn christoffel_fd(r: &FrameField) -> ChristoffelField {
    let n = r.n;
    let grid = r.grid;
    let partials: Vec<(VectorField, VectorField)> =
        r.columns.iter().map(|c| c.partials()).collect();
    let mut gamma = vec![ScalarField::zeros(grid); n * n * n];
    for jj in 0..grid.ny {
        for ii in 0..grid.nx {
            let r_cols: Vec<Vec3> = (0..n).map(|c| r.columns[c].at(ii, jj)).collect();
            for j in 0..n {
                let (d1, d2) = (&partials[j].0.at(ii, jj), &partials[j].1.at(ii, jj));
                for i in 0..n {
                    // directional derivative along R_i; fields are
                    // x3-invariant so only planar components contribute
                    let dir = axpy(r_cols[i][0], d1, &scale(r_cols[i][1], d2));
                    for k in 0..n {
                        gamma[(i * n + j) * n + k].set(ii, jj, dot(&dir, &r_cols[k]));
                    }
                }
            }
        }
    }
    ChristoffelField { n, gamma }
}

/// Flatness residuals, one field per pair i < j:
/// grad_{R_i} Gamma_jj^i + grad_{R_j} Gamma_ii^j + Gamma_ji^l Gamma_ij^l
/// minus Gamma_ii^l Gamma_jj^l plus (Gamma_ij^l - Gamma_ji^l) Gamma_li^j.
pub fn curvature_residual(chris: &ChristoffelField, r: &FrameField) -> Vec<ScalarField> {
    let n = chris.n;
    let grid = r.grid;
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let gji = chris.field(j, j, i).gradient();
            let gij = chris.field(i, i, j).gradient();
            let mut res = ScalarField::zeros(grid);
            for jj in 0..grid.ny {
                for ii in 0..grid.nx {
                    let ri = r.columns[i].at(ii, jj);
                    let rj = r.columns[j].at(ii, jj);
                    let lhs = dot(&ri, &gji.at(ii, jj)) + dot(&rj, &gij.at(ii, jj));
                    let mut rhs = 0.0;
                    for l in 0..n {
                        let g_ji_l = chris.value(j, i, l, ii, jj);
                        let g_ij_l = chris.value(i, j, l, ii, jj);
                        rhs += -g_ji_l * g_ij_l;
                        rhs += chris.value(i, i, l, ii, jj) * chris.value(j, j, l, ii, jj);
                        rhs -= (g_ij_l - g_ji_l) * chris.value(l, i, j, ii, jj);
                    }
                    res.set(ii, jj, lhs - rhs);
                }
            }
            out.push(res);
        }
    }
    out
}

/// Residuals of the planar angle-gradient relation: the pointwise magnitude
/// of grad(theta) minus (V12^a - J grad(log D)/2 + (a - 1/2) J F), plus the
/// two scalar compatibility fields div(J G) - (a - 1/2) div(F) and div(J F).
#[derive(Debug, Clone)]
pub struct ThetaResiduals {
    pub grad_theta: ScalarField,
    pub compat_g: ScalarField,
    pub compat_f: ScalarField,
}

pub fn gradtheta_residual(
    theta: &ScalarField,
    derived: &DerivedFields,
    f: &VectorField,
) -> Result<ThetaResiduals> {
    if derived.n != 2 {
        return Err(Error::DimensionMismatch(
            "angle residuals are two-dimensional".into(),
        ));
    }
    let grid = derived.grid;
    let am = derived.alpha - 0.5;
    let grad_theta_field = theta.gradient();
    let g_vec = crate::algebraic2d::g_field(derived);

    let mut grad_res = ScalarField::zeros(grid);
    let mut jf = VectorField::zeros(grid, 2);
    let mut jg = VectorField::zeros(grid, 2);
    for jj in 0..grid.ny {
        for ii in 0..grid.nx {
            let fv = f.at(ii, jj);
            let rhs = axpy(am, &rot90(&fv), &g_vec.at(ii, jj));
            let gt = grad_theta_field.at(ii, jj);
            let d = crate::linalg::sub(&gt, &rhs);
            grad_res.set(ii, jj, dot(&d, &d).sqrt());
            jf.set(ii, jj, &rot90(&fv));
            jg.set(ii, jj, &rot90(&g_vec.at(ii, jj)));
        }
    }
    let div_f = f.divergence();
    let compat_g = jg.divergence().zip(&div_f, |a, b| a - am * b);
    let compat_f = jf.divergence();
    Ok(ThetaResiduals {
        grad_theta: grad_res,
        compat_g,
        compat_f,
    })
}

/// Orthonormal frame parameterized by an angle field.
pub fn frame_from_theta(theta: &ScalarField) -> FrameField {
    let grid = theta.grid;
    let mut r = FrameField::zeros(grid, 2, 2);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let th = theta.at(i, j);
            r.columns[0].set(i, j, &[th.cos(), th.sin(), 0.0]);
            r.columns[1].set(i, j, &[-th.sin(), th.cos(), 0.0]);
        }
    }
    r
}

/// Sup norms of all residuals evaluated through the data-driven angle route.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RangeTestReport {
    pub curl_f_sup: f64,
    pub curvature_sup: f64,
    pub grad_theta_sup: f64,
    pub compat_g_sup: f64,
    pub compat_f_sup: f64,
    /// The data-only constraint, meaningful at exponent 1/2.
    pub alpha_half_sup: Option<f64>,
}

/// The residual fields behind a range-test report, exportable for plotting.
#[derive(Debug, Clone)]
pub struct RangeTestFields {
    pub curl_f: ScalarField,
    pub curvature: Vec<ScalarField>,
    pub grad_theta: ScalarField,
    pub compat_g: ScalarField,
    pub compat_f: ScalarField,
    pub alpha_half: Option<ScalarField>,
}

impl RangeTestFields {
    pub fn report(&self) -> RangeTestReport {
        let sup = |s: &ScalarField| s.norm(crate::grid::NormKind::Linf);
        RangeTestReport {
            curl_f_sup: sup(&self.curl_f),
            curvature_sup: self.curvature.iter().map(sup).fold(0.0, f64::max),
            grad_theta_sup: sup(&self.grad_theta),
            compat_g_sup: sup(&self.compat_g),
            compat_f_sup: sup(&self.compat_f),
            alpha_half_sup: self.alpha_half.as_ref().map(sup),
        }
    }

    /// (name, sup norm, L2 norm) triples for manifests.
    pub fn norms(&self) -> Vec<(String, f64, f64)> {
        use crate::grid::NormKind;
        let mut out = Vec::new();
        let mut push = |name: &str, s: &ScalarField| {
            out.push((
                name.to_string(),
                s.norm(NormKind::Linf),
                s.norm(NormKind::L2),
            ));
        };
        push("curl_f", &self.curl_f);
        for (k, c) in self.curvature.iter().enumerate() {
            push(&format!("curvature_{k}"), c);
        }
        push("grad_theta", &self.grad_theta);
        push("compat_g", &self.compat_g);
        push("compat_f", &self.compat_f);
        if let Some(a) = &self.alpha_half {
            push("alpha_half", a);
        }
        out
    }

    pub fn export(&self, dir: &std::path::Path) -> Result<()> {
        use crate::io;
        io::write_scalar(dir, "residual_curl_f", &self.curl_f)?;
        for (k, c) in self.curvature.iter().enumerate() {
            io::write_scalar(dir, &format!("residual_curvature_{k}"), c)?;
        }
        io::write_scalar(dir, "residual_grad_theta", &self.grad_theta)?;
        io::write_scalar(dir, "residual_compat_g", &self.compat_g)?;
        io::write_scalar(dir, "residual_compat_f", &self.compat_f)?;
        if let Some(a) = &self.alpha_half {
            io::write_scalar(dir, "residual_alpha_half", a)?;
        }
        Ok(())
    }
}

/// Run every diagnostic on a bundle: solve for the angle with truth-derived
/// boundary values, evaluate F, build the frame and its connection, and
/// collect the residual fields.
pub fn range_test_fields(
    derived: &DerivedFields,
    truth: &crate::forward::SyntheticTruth,
    tol: f64,
    max_iter: usize,
) -> Result<RangeTestFields> {
    let boundary = crate::algebraic2d::boundary_theta_from_truth(derived, truth)?;
    let theta = crate::algebraic2d::solve_theta(derived, &boundary, tol, max_iter)?;
    let (f, _) = crate::algebraic2d::f_from_theta(derived, &theta)?;
    let r = frame_from_theta(&theta);
    let chris = christoffel(derived, &r, &f)?;
    let curvature = curvature_residual(&chris, &r);
    let theta_res = gradtheta_residual(&theta, derived, &f)?;
    let curl_f = curl_f_residual(&f)?;
    let alpha_half = if (derived.alpha - 0.5).abs() < 1e-12 {
        Some(
            crate::algebraic2d::alpha_half_constraints(
                derived,
                crate::algebraic2d::DEFAULT_DEGENERACY_FLOOR,
            )?
            .constraint_residual,
        )
    } else {
        None
    };
    Ok(RangeTestFields {
        curl_f,
        curvature,
        grad_theta: theta_res.grad_theta,
        compat_g: theta_res.compat_g,
        compat_f: theta_res.compat_f,
        alpha_half,
    })
}

/// Residual sup norms of the range test.
pub fn range_test(
    derived: &DerivedFields,
    truth: &crate::forward::SyntheticTruth,
    tol: f64,
    max_iter: usize,
) -> Result<RangeTestReport> {
    Ok(range_test_fields(derived, truth, tol, max_iter)?.report())
}

/// Manufactured planar rotation frame and its consistent derived fields:
/// T(x) = rotation by phi(x) with H = I, so R_i = t_ij e_j.
pub fn manufactured_rotation_frame(
    grid: Grid,
    phi: impl Fn(f64, f64) -> f64,
) -> Result<(DerivedFields, FrameField)> {
    let t = crate::grid::MatrixField::from_fn(grid, 2, |x, y| {
        let p = phi(x, y);
        crate::linalg::SmallMat::from_rows(2, &[[p.cos(), -p.sin(), 0.0], [p.sin(), p.cos(), 0.0]])
    });
    let derived = crate::frame::derived_from_transition(&t, 0.5)?;
    let mut r = FrameField::zeros(grid, 2, 2);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let tm = t.mat(i, j);
            // R_i = t_ij S_j with S the canonical basis: columns of T^T
            r.set_mat(i, j, &tm.transpose());
        }
    }
    Ok((derived, r))
}

/// Three-dimensional variant: T(x) = Rz(phi1) Rx(phi2), planar-grid fields.
pub fn manufactured_rotation_frame_3d(
    grid: Grid,
    phi1: impl Fn(f64, f64) -> f64,
    phi2: impl Fn(f64, f64) -> f64,
) -> Result<(DerivedFields, FrameField)> {
    let t = crate::grid::MatrixField::from_fn(grid, 3, |x, y| {
        let (a, b) = (phi1(x, y), phi2(x, y));
        let rz = crate::linalg::SmallMat::from_rows(
            3,
            &[
                [a.cos(), -a.sin(), 0.0],
                [a.sin(), a.cos(), 0.0],
                [0.0, 0.0, 1.0],
            ],
        );
        let rx = crate::linalg::SmallMat::from_rows(
            3,
            &[
                [1.0, 0.0, 0.0],
                [0.0, b.cos(), -b.sin()],
                [0.0, b.sin(), b.cos()],
            ],
        );
        rz.mul(&rx)
    });
    let derived = crate::frame::derived_from_transition(&t, 0.5)?;
    let mut r = FrameField::zeros(grid, 3, 3);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            r.set_mat(i, j, &t.mat(i, j).transpose());
        }
    }
    Ok((derived, r))
}
