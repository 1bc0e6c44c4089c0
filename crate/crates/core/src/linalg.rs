//! Small dense matrix/vector kernels for the pointwise frame algebra.
//!
//! Everything here operates on stack-allocated `n x n` matrices with
//! `n <= 3`. Vectors are `[f64; 3]` padded with zeros when `n = 2`, which
//! keeps dot products and matrix-vector products valid without branching.

pub type Vec3 = [f64; 3];

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn axpy(alpha: f64, x: &Vec3, y: &Vec3) -> Vec3 {
    [
        alpha * x[0] + y[0],
        alpha * x[1] + y[1],
        alpha * x[2] + y[2],
    ]
}

pub fn scale(alpha: f64, x: &Vec3) -> Vec3 {
    [alpha * x[0], alpha * x[1], alpha * x[2]]
}

pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Rotation by pi/2: J v = (-v2, v1). Only meaningful for planar vectors.
pub fn rot90(v: &Vec3) -> Vec3 {
    [-v[1], v[0], 0.0]
}

/// Square matrix of order `n <= 3`, row-major, unused entries zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallMat {
    pub n: usize,
    pub a: [[f64; 3]; 3],
}

impl SmallMat {
    pub fn zero(n: usize) -> Self {
        debug_assert!((2..=3).contains(&n));
        SmallMat {
            n,
            a: [[0.0; 3]; 3],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zero(n);
        for i in 0..n {
            m.a[i][i] = 1.0;
        }
        m
    }

    pub fn from_rows(n: usize, rows: &[Vec3]) -> Self {
        let mut m = Self::zero(n);
        m.a[..n].copy_from_slice(&rows[..n]);
        m
    }

    pub fn col(&self, j: usize) -> Vec3 {
        [self.a[0][j], self.a[1][j], self.a[2][j]]
    }

    pub fn set_col(&mut self, j: usize, v: &Vec3) {
        for i in 0..self.n {
            self.a[i][j] = v[i];
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zero(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.a[i][j] = self.a[j][i];
            }
        }
        t
    }

    pub fn mul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        let mut c = Self::zero(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let mut s = 0.0;
                for k in 0..self.n {
                    s += self.a[i][k] * other.a[k][j];
                }
                c.a[i][j] = s;
            }
        }
        c
    }

    pub fn matvec(&self, v: &Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for i in 0..self.n {
            out[i] = dot(&self.a[i], v);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut c = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                c.a[i][j] += other.a[i][j];
            }
        }
        c
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut c = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                c.a[i][j] -= other.a[i][j];
            }
        }
        c
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut c = *self;
        for i in 0..self.n {
            for j in 0..self.n {
                c.a[i][j] *= alpha;
            }
        }
        c
    }

    /// Outer product u v^T embedded as an n x n matrix.
    pub fn outer(n: usize, u: &Vec3, v: &Vec3) -> Self {
        let mut m = Self::zero(n);
        for i in 0..n {
            for j in 0..n {
                m.a[i][j] = u[i] * v[j];
            }
        }
        m
    }

    pub fn det(&self) -> f64 {
        match self.n {
            2 => self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0],
            3 => {
                self.a[0][0] * (self.a[1][1] * self.a[2][2] - self.a[1][2] * self.a[2][1])
                    - self.a[0][1] * (self.a[1][0] * self.a[2][2] - self.a[1][2] * self.a[2][0])
                    + self.a[0][2] * (self.a[1][0] * self.a[2][1] - self.a[1][1] * self.a[2][0])
            }
            _ => unreachable!("order must be 2 or 3"),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.a[i][i]).sum()
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let mut inv = Self::zero(self.n);
        match self.n {
            2 => {
                inv.a[0][0] = self.a[1][1] / d;
                inv.a[0][1] = -self.a[0][1] / d;
                inv.a[1][0] = -self.a[1][0] / d;
                inv.a[1][1] = self.a[0][0] / d;
            }
            3 => {
                for i in 0..3 {
                    for j in 0..3 {
                        let (r0, r1) = match i {
                            0 => (1, 2),
                            1 => (0, 2),
                            _ => (0, 1),
                        };
                        let (c0, c1) = match j {
                            0 => (1, 2),
                            1 => (0, 2),
                            _ => (0, 1),
                        };
                        let minor =
                            self.a[r0][c0] * self.a[r1][c1] - self.a[r0][c1] * self.a[r1][c0];
                        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                        // adjugate transposes the cofactor matrix
                        inv.a[j][i] = sign * minor / d;
                    }
                }
            }
            _ => unreachable!(),
        }
        Some(inv)
    }

    /// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
    pub fn cholesky(&self) -> Option<Self> {
        let mut l = Self::zero(self.n);
        for i in 0..self.n {
            for j in 0..=i {
                let mut s = self.a[i][j];
                for k in 0..j {
                    s -= l.a[i][k] * l.a[j][k];
                }
                if i == j {
                    if s <= 0.0 {
                        return None;
                    }
                    l.a[i][j] = s.sqrt();
                } else {
                    l.a[i][j] = s / l.a[j][j];
                }
            }
        }
        Some(l)
    }

    /// Inverse of a lower-triangular matrix (forward substitution on columns).
    pub fn inverse_lower(&self) -> Option<Self> {
        let mut inv = Self::zero(self.n);
        for j in 0..self.n {
            let mut e = [0.0; 3];
            e[j] = 1.0;
            for i in 0..self.n {
                let mut s = e[i];
                for k in 0..i {
                    s -= self.a[i][k] * inv.a[k][j];
                }
                if self.a[i][i] == 0.0 {
                    return None;
                }
                inv.a[i][j] = s / self.a[i][i];
            }
        }
        Some(inv)
    }

    /// Principal square root of a symmetric positive-definite 2x2 matrix.
    ///
    /// Closed form: sqrt(A) = (A + sqrt(det A) I) / sqrt(tr A + 2 sqrt(det A)).
    pub fn sqrt_spd2(&self) -> Option<Self> {
        debug_assert_eq!(self.n, 2);
        let d = self.det();
        if d <= 0.0 {
            return None;
        }
        let s = d.sqrt();
        let t = self.trace() + 2.0 * s;
        if t <= 0.0 {
            return None;
        }
        let denom = t.sqrt();
        let mut r = Self::zero(2);
        r.a[0][0] = (self.a[0][0] + s) / denom;
        r.a[0][1] = self.a[0][1] / denom;
        r.a[1][0] = self.a[1][0] / denom;
        r.a[1][1] = (self.a[1][1] + s) / denom;
        Some(r)
    }

    pub fn frobenius(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += self.a[i][j] * self.a[i][j];
            }
        }
        s.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        let mut s: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s = s.max(self.a[i][j].abs());
            }
        }
        s
    }

    /// Distance from orthonormality, max |M^T M - I|.
    pub fn orthonormality_defect(&self) -> f64 {
        self.transpose()
            .mul(self)
            .sub(&Self::identity(self.n))
            .max_abs()
    }

    /// Nearest rotation via the polar factor, for 2x2 matrices.
    pub fn polar_rotation2(&self) -> Option<Self> {
        debug_assert_eq!(self.n, 2);
        // R = M (M^T M)^{-1/2}
        let gram = self.transpose().mul(self);
        let s = gram.sqrt_spd2()?;
        let sinv = s.inverse()?;
        Some(self.mul(&sinv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a}");
    }

    #[test]
    fn inverse_2x2_and_3x3() {
        let m = SmallMat::from_rows(2, &[[3.0, 1.0, 0.0], [1.0, 2.0, 0.0]]);
        let inv = m.inverse().unwrap();
        let id = m.mul(&inv);
        approx(id.a[0][0], 1.0, 1e-14);
        approx(id.a[0][1], 0.0, 1e-14);

        let m3 = SmallMat::from_rows(3, &[[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 5.0]]);
        let inv3 = m3.inverse().unwrap();
        let id3 = m3.mul(&inv3);
        for i in 0..3 {
            for j in 0..3 {
                approx(id3.a[i][j], if i == j { 1.0 } else { 0.0 }, 1e-13);
            }
        }
    }

    #[test]
    fn cholesky_inverse_gives_gram_inverse() {
        let h = SmallMat::from_rows(2, &[[2.0, 0.3, 0.0], [0.3, 1.5, 0.0]]);
        let l = h.cholesky().unwrap();
        let t = l.inverse_lower().unwrap();
        // T^T T should equal H^{-1}
        let tt = t.transpose().mul(&t);
        let hinv = h.inverse().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                approx(tt.a[i][j], hinv.a[i][j], 1e-13);
            }
        }
        assert!(t.det() > 0.0);
    }

    #[test]
    fn sqrt_spd2_squares_back() {
        let h = SmallMat::from_rows(2, &[[2.0, 0.7, 0.0], [0.7, 1.2, 0.0]]);
        let s = h.sqrt_spd2().unwrap();
        let ss = s.mul(&s);
        for i in 0..2 {
            for j in 0..2 {
                approx(ss.a[i][j], h.a[i][j], 1e-13);
            }
        }
    }

    #[test]
    fn polar_projection_recovers_rotation() {
        let c = 0.3f64.cos();
        let s = 0.3f64.sin();
        let r = SmallMat::from_rows(2, &[[c, -s, 0.0], [s, c, 0.0]]);
        // nudge off the manifold
        let mut m = r;
        m.a[0][0] += 1e-3;
        let p = m.polar_rotation2().unwrap();
        assert!(p.orthonormality_defect() < 1e-12);
        approx(p.det(), 1.0, 1e-12);
    }

    #[test]
    fn cross_products_match_determinant() {
        let a = [1.0, 2.0, -0.5];
        let b = [0.3, -1.0, 2.0];
        let c = [0.5, 0.4, 1.0];
        let m = SmallMat::from_rows(3, &[a, b, c]).transpose();
        approx(dot(&cross(&b, &c), &a), m.det(), 1e-13);
    }
}
