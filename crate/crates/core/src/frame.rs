//! Pointwise and fieldwise algebra linking the measurements H to frames:
//! the normalization D = sqrt(det H), the inverse matrix field, the drift
//! ingredients U and V, the transition matrix T with T^T T = H^{-1}, the
//! cofactor vectors, and the two reconstruction formulas for the source
//! term F = grad(log sigma).

use crate::error::{Error, Result};
use crate::forward::DataBundle;
use crate::grid::{FrameField, Grid, MatrixField, ScalarField, VectorField};
use crate::linalg::{axpy, dot, scale, SmallMat, Vec3};

/// Determinants below this floor abort the derived-field assembly.
pub const DET_FLOOR: f64 = 1e-12;

/// How the transition matrix T is built from H.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionMethod {
    /// Inverse of the pointwise Cholesky factor, i.e. Gram-Schmidt applied to
    /// the frame columns in the fixed order 1..n.
    GramSchmidt,
    /// Principal inverse square root H^{-1/2} (closed form, n = 2 only).
    InvSqrt,
}

/// The coefficient c_F = ((n-2) alpha + 1)^{-1} of the F-formulas.
pub fn f_coefficient(n: usize, alpha: f64) -> Result<f64> {
    let denom = (n as f64 - 2.0) * alpha + 1.0;
    if denom.abs() < 1e-14 {
        return Err(Error::ExcludedAlpha { n, alpha });
    }
    Ok(1.0 / denom)
}

/// Everything derivable from the data bundle alone.
#[derive(Debug, Clone)]
pub struct DerivedFields {
    pub grid: Grid,
    pub n: usize,
    pub alpha: f64,
    pub c_f: f64,
    /// Leading n x n block of the measurements.
    pub h: MatrixField,
    /// D = sqrt(det H).
    pub d: ScalarField,
    pub hinv: MatrixField,
    pub grad_log_d: VectorField,
    /// grad of each entry of H^{-1}, indexed [r * n + c].
    pub grad_hinv: Vec<VectorField>,
    /// U_jk = (grad H_jp) H^{pk}, indexed [j * n + k].
    pub u: Vec<VectorField>,
    pub t: MatrixField,
    pub tinv: MatrixField,
    /// V_ik = (grad t_ij) t^{jk}, indexed [i * n + k].
    pub v: Vec<VectorField>,
    pub vs: Vec<VectorField>,
    pub va: Vec<VectorField>,
}

fn leading_block(h: &MatrixField, n: usize) -> MatrixField {
    if h.dim == n {
        return h.clone();
    }
    let mut out = MatrixField::zeros(h.grid, n);
    for r in 0..n {
        for c in 0..n {
            out.planes[r * n + c] = h.plane(r, c).clone();
        }
    }
    out
}

fn assemble(n: usize, alpha: f64, h: MatrixField, t: MatrixField) -> Result<DerivedFields> {
    let grid = h.grid;
    let c_f = f_coefficient(n, alpha)?;

    let mut d = ScalarField::zeros(grid);
    let mut hinv = MatrixField::zeros(grid, n);
    let mut tinv = MatrixField::zeros(grid, n);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let hm = h.mat(i, j);
            let det = hm.det();
            if det < DET_FLOOR {
                return Err(Error::Positivity { i, j, det });
            }
            d.set(i, j, det.sqrt());
            hinv.set_mat(i, j, &hm.inverse().expect("determinant checked"));
            let tm = t.mat(i, j);
            let ti = tm.inverse().ok_or(Error::Positivity {
                i,
                j,
                det: tm.det(),
            })?;
            tinv.set_mat(i, j, &ti);
        }
    }

    let grad_log_d = d.map(f64::ln).gradient();

    // gradients of H entries, then U_jk = (grad H_jp) H^{pk}
    let grad_h: Vec<VectorField> = (0..n * n)
        .map(|e| h.entry_field(e / n, e % n).gradient())
        .collect();
    let mut u = vec![VectorField::zeros(grid, 2); n * n];
    for jj in 0..grid.ny {
        for ii in 0..grid.nx {
            let hinv_m = hinv.mat(ii, jj);
            for j in 0..n {
                for k in 0..n {
                    let mut acc = [0.0; 3];
                    for p in 0..n {
                        acc = axpy(hinv_m.a[p][k], &grad_h[j * n + p].at(ii, jj), &acc);
                    }
                    u[j * n + k].set(ii, jj, &acc);
                }
            }
        }
    }

    // the inverted field is differentiated directly
    let grad_hinv: Vec<VectorField> = (0..n * n)
        .map(|e| hinv.entry_field(e / n, e % n).gradient())
        .collect();

    let grad_t: Vec<VectorField> = (0..n * n)
        .map(|e| t.entry_field(e / n, e % n).gradient())
        .collect();
    let mut v = vec![VectorField::zeros(grid, 2); n * n];
    for jj in 0..grid.ny {
        for ii in 0..grid.nx {
            let tinv_m = tinv.mat(ii, jj);
            for i in 0..n {
                for k in 0..n {
                    let mut acc = [0.0; 3];
                    for j in 0..n {
                        acc = axpy(tinv_m.a[j][k], &grad_t[i * n + j].at(ii, jj), &acc);
                    }
                    v[i * n + k].set(ii, jj, &acc);
                }
            }
        }
    }
    let mut vs = vec![VectorField::zeros(grid, 2); n * n];
    let mut va = vec![VectorField::zeros(grid, 2); n * n];
    for i in 0..n {
        for k in 0..n {
            vs[i * n + k] = v[i * n + k].zip(&v[k * n + i], |a, b| {
                [
                    0.5 * (a[0] + b[0]),
                    0.5 * (a[1] + b[1]),
                    0.5 * (a[2] + b[2]),
                ]
            });
            va[i * n + k] = v[i * n + k].zip(&v[k * n + i], |a, b| {
                [
                    0.5 * (a[0] - b[0]),
                    0.5 * (a[1] - b[1]),
                    0.5 * (a[2] - b[2]),
                ]
            });
        }
    }

    Ok(DerivedFields {
        grid,
        n,
        alpha,
        c_f,
        h,
        d,
        hinv,
        grad_log_d,
        grad_hinv,
        u,
        t,
        tinv,
        v,
        vs,
        va,
    })
}

/// Compute all derived fields from a data bundle.
pub fn derived_fields(data: &DataBundle, method: TransitionMethod) -> Result<DerivedFields> {
    let n = data.n;
    let grid = data.grid;
    let h = leading_block(&data.h_field, n);

    let mut t = MatrixField::zeros(grid, n);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let hm = h.mat(i, j);
            let det = hm.det();
            if det < DET_FLOOR {
                return Err(Error::Positivity { i, j, det });
            }
            let tm = match method {
                TransitionMethod::GramSchmidt => {
                    let l = hm.cholesky().ok_or(Error::Positivity { i, j, det })?;
                    l.inverse_lower().ok_or(Error::Positivity { i, j, det })?
                }
                TransitionMethod::InvSqrt => {
                    if n != 2 {
                        return Err(Error::Config(
                            "inverse square-root transition is implemented for n = 2 only".into(),
                        ));
                    }
                    let hinv = hm.inverse().ok_or(Error::Positivity { i, j, det })?;
                    hinv.sqrt_spd2().ok_or(Error::Positivity { i, j, det })?
                }
            };
            t.set_mat(i, j, &tm);
        }
    }
    assemble(n, data.alpha, h, t)
}

/// Build derived fields from a manufactured transition field; H is recovered
/// from T^T T = H^{-1}. Supports synthetic-frame tests where T is prescribed
/// rather than constructed from data.
pub fn derived_from_transition(t: &MatrixField, alpha: f64) -> Result<DerivedFields> {
    let n = t.dim;
    let grid = t.grid;
    let mut h = MatrixField::zeros(grid, n);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let tm = t.mat(i, j);
            let gram = tm.transpose().mul(&tm);
            let hm = gram.inverse().ok_or(Error::Positivity {
                i,
                j,
                det: gram.det(),
            })?;
            h.set_mat(i, j, &hm);
        }
    }
    assemble(n, alpha, h, t.clone())
}

impl DerivedFields {
    /// Write every derived field to a directory in the field file format,
    /// for inspection and plotting.
    pub fn export(&self, dir: &std::path::Path) -> Result<()> {
        use crate::io;
        let n = self.n;
        io::write_scalar(dir, "D", &self.d)?;
        io::write_matrix(dir, "H", &self.h)?;
        io::write_matrix(dir, "Hinv", &self.hinv)?;
        io::write_matrix(dir, "T", &self.t)?;
        io::write_vector(dir, "grad_log_D", &self.grad_log_d)?;
        for i in 0..n {
            for k in 0..n {
                io::write_vector(dir, &format!("U_{}{}", i + 1, k + 1), &self.u[i * n + k])?;
                io::write_vector(dir, &format!("V_{}{}", i + 1, k + 1), &self.v[i * n + k])?;
            }
        }
        Ok(())
    }
}

/// Max nodal mismatch between S^T S and the data Gram matrix.
pub fn frame_consistency(derived: &DerivedFields, s: &FrameField) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..derived.grid.ny {
        for i in 0..derived.grid.nx {
            let sm = s.mat(i, j);
            let gram = sm.transpose().mul(&sm);
            worst = worst.max(gram.sub(&derived.h.mat(i, j)).max_abs());
        }
    }
    worst
}

/// Max nodal orthonormality defect of a frame.
pub fn orthonormality_defect(r: &FrameField) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..r.grid.ny {
        for i in 0..r.grid.nx {
            worst = worst.max(r.mat(i, j).orthonormality_defect());
        }
    }
    worst
}

/// F = c_F ( grad log D + sum_ij (grad H^{ij} . S_i) S_j ).
pub fn f_from_s(derived: &DerivedFields, s: &FrameField) -> VectorField {
    let n = derived.n;
    let grid = derived.grid;
    let mut out = VectorField::zeros(grid, 2);
    for jj in 0..grid.ny {
        for ii in 0..grid.nx {
            let mut acc = derived.grad_log_d.at(ii, jj);
            for i in 0..n {
                let si = s.columns[i].at(ii, jj);
                for j in 0..n {
                    let sj = s.columns[j].at(ii, jj);
                    let g = derived.grad_hinv[i * n + j].at(ii, jj);
                    acc = axpy(dot(&g, &si), &sj, &acc);
                }
            }
            out.set(ii, jj, &scale(derived.c_f, &acc));
        }
    }
    out
}

/// F = c_F ( grad log D + ((V_ij + V_ji) . R_i) R_j ), requiring R
/// orthonormal to 1e-8.
pub fn f_from_r(derived: &DerivedFields, r: &FrameField) -> Result<VectorField> {
    let defect = orthonormality_defect(r);
    if defect > 1e-8 {
        return Err(Error::NotOrthonormal { defect, tol: 1e-8 });
    }
    let n = derived.n;
    let grid = derived.grid;
    let mut out = VectorField::zeros(grid, 2);
    for jj in 0..grid.ny {
        for ii in 0..grid.nx {
            let mut acc = derived.grad_log_d.at(ii, jj);
            for i in 0..n {
                let ri = r.columns[i].at(ii, jj);
                for j in 0..n {
                    let rj = r.columns[j].at(ii, jj);
                    let vsum = axpy(
                        1.0,
                        &derived.v[i * n + j].at(ii, jj),
                        &derived.v[j * n + i].at(ii, jj),
                    );
                    acc = axpy(dot(&vsum, &ri), &rj, &acc);
                }
            }
            out.set(ii, jj, &scale(derived.c_f, &acc));
        }
    }
    Ok(out)
}

/// Orthonormal frame R = S T^T built from the data's transition matrix.
pub fn orthonormalize(derived: &DerivedFields, s: &FrameField) -> FrameField {
    let grid = derived.grid;
    let n = derived.n;
    let mut r = FrameField::zeros(grid, n, n);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let sm = s.mat(i, j);
            let tm = derived.t.mat(i, j);
            r.set_mat(i, j, &sm.mul(&tm.transpose()));
        }
    }
    r
}

/// Cofactor vectors of a pointwise frame: X_j . V = det(S with column j
/// replaced by V), so X_j . S_k = det(S) delta_jk by construction.
pub fn cofactor_frame(s: &SmallMat) -> Vec<Vec3> {
    match s.n {
        2 => {
            let s1 = s.col(0);
            let s2 = s.col(1);
            vec![[s2[1], -s2[0], 0.0], [-s1[1], s1[0], 0.0]]
        }
        3 => {
            let s1 = s.col(0);
            let s2 = s.col(1);
            let s3 = s.col(2);
            vec![
                crate::linalg::cross(&s2, &s3),
                crate::linalg::cross(&s3, &s1),
                crate::linalg::cross(&s1, &s2),
            ]
        }
        _ => panic!("cofactor frame needs n in {{2, 3}}"),
    }
}
