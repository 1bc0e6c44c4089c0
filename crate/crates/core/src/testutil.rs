//! Exact derived-field constructions for the layered phantom, shared by the
//! unit tests of several modules. Everything here is closed form; no finite
//! differences are involved, so formula transcriptions can be checked to
//! round-off.

use crate::frame::DerivedFields;
use crate::grid::{Grid, MatrixField, ScalarField, VectorField};
use crate::linalg::SmallMat;

/// Derived fields of sigma = e^{2x} at alpha = 1:
/// H = diag(1, e^{4x}), D = e^{2x}, T = diag(1, e^{-2x}),
/// U22 = (4, 0), V22 = (-2, 0), everything else zero.
pub fn layered_one_exact(g: Grid) -> DerivedFields {
    let zero2 = || VectorField::zeros(g, 2);
    let e = |x: f64| (4.0 * x).exp();
    DerivedFields {
        grid: g,
        n: 2,
        alpha: 1.0,
        c_f: 1.0,
        h: MatrixField::from_fn(g, 2, |x, _| {
            SmallMat::from_rows(2, &[[1.0, 0.0, 0.0], [0.0, e(x), 0.0]])
        }),
        d: ScalarField::from_fn(g, |x, _| (2.0 * x).exp()),
        hinv: MatrixField::from_fn(g, 2, |x, _| {
            SmallMat::from_rows(2, &[[1.0, 0.0, 0.0], [0.0, 1.0 / e(x), 0.0]])
        }),
        grad_log_d: VectorField::from_fn(g, 2, |_, _| [2.0, 0.0, 0.0]),
        grad_hinv: vec![
            zero2(),
            zero2(),
            zero2(),
            VectorField::from_fn(g, 2, |x, _| [-4.0 / e(x), 0.0, 0.0]),
        ],
        u: vec![
            zero2(),
            zero2(),
            zero2(),
            VectorField::from_fn(g, 2, |_, _| [4.0, 0.0, 0.0]),
        ],
        t: MatrixField::from_fn(g, 2, |x, _| {
            SmallMat::from_rows(2, &[[1.0, 0.0, 0.0], [0.0, (-2.0 * x).exp(), 0.0]])
        }),
        tinv: MatrixField::from_fn(g, 2, |x, _| {
            SmallMat::from_rows(2, &[[1.0, 0.0, 0.0], [0.0, (2.0 * x).exp(), 0.0]])
        }),
        v: vec![
            zero2(),
            zero2(),
            zero2(),
            VectorField::from_fn(g, 2, |_, _| [-2.0, 0.0, 0.0]),
        ],
        vs: vec![
            zero2(),
            zero2(),
            zero2(),
            VectorField::from_fn(g, 2, |_, _| [-2.0, 0.0, 0.0]),
        ],
        va: vec![zero2(), zero2(), zero2(), zero2()],
    }
}

/// Derived fields of sigma = e^{2x} at alpha = 1/2:
/// H = diag(e^{-2x}, e^{2x}), D = 1, T = diag(e^{x}, e^{-x}),
/// U11 = (-2, 0), U22 = (2, 0), V11 = (1, 0), V22 = (-1, 0).
pub fn layered_half_exact(g: Grid) -> DerivedFields {
    let zero2 = || VectorField::zeros(g, 2);
    DerivedFields {
        grid: g,
        n: 2,
        alpha: 0.5,
        c_f: 1.0,
        h: MatrixField::from_fn(g, 2, |x, _| {
            SmallMat::from_rows(
                2,
                &[[(-2.0 * x).exp(), 0.0, 0.0], [0.0, (2.0 * x).exp(), 0.0]],
            )
        }),
        d: ScalarField::constant(g, 1.0),
        hinv: MatrixField::from_fn(g, 2, |x, _| {
            SmallMat::from_rows(
                2,
                &[[(2.0 * x).exp(), 0.0, 0.0], [0.0, (-2.0 * x).exp(), 0.0]],
            )
        }),
        grad_log_d: zero2(),
        grad_hinv: vec![
            VectorField::from_fn(g, 2, |x, _| [2.0 * (2.0 * x).exp(), 0.0, 0.0]),
            zero2(),
            zero2(),
            VectorField::from_fn(g, 2, |x, _| [-2.0 * (-2.0 * x).exp(), 0.0, 0.0]),
        ],
        u: vec![
            VectorField::from_fn(g, 2, |_, _| [-2.0, 0.0, 0.0]),
            zero2(),
            zero2(),
            VectorField::from_fn(g, 2, |_, _| [2.0, 0.0, 0.0]),
        ],
        t: MatrixField::from_fn(g, 2, |x, _| {
            SmallMat::from_rows(2, &[[x.exp(), 0.0, 0.0], [0.0, (-x).exp(), 0.0]])
        }),
        tinv: MatrixField::from_fn(g, 2, |x, _| {
            SmallMat::from_rows(2, &[[(-x).exp(), 0.0, 0.0], [0.0, x.exp(), 0.0]])
        }),
        v: vec![
            VectorField::from_fn(g, 2, |_, _| [1.0, 0.0, 0.0]),
            zero2(),
            zero2(),
            VectorField::from_fn(g, 2, |_, _| [-1.0, 0.0, 0.0]),
        ],
        vs: vec![
            VectorField::from_fn(g, 2, |_, _| [1.0, 0.0, 0.0]),
            zero2(),
            zero2(),
            VectorField::from_fn(g, 2, |_, _| [-1.0, 0.0, 0.0]),
        ],
        va: vec![zero2(), zero2(), zero2(), zero2()],
    }
}
