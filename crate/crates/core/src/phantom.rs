//! Ground-truth conductivity phantoms and Dirichlet illumination sets.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};
use crate::linalg::Vec3;

/// Built-in conductivity models on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    /// sigma = 1
    Constant,
    /// sigma = exp(2 x1), with closed-form solutions for the adapted
    /// illuminations ((1 - exp(-2 x1))/2, x2)
    LayeredExp,
    /// sigma = 1 + 0.5 exp(-|x - (0.5, 0.5)|^2 / 0.02)
    Bump,
    /// two Gaussian inclusions of amplitude 0.4
    TwoBumps,
}

impl PhantomKind {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "constant" => Ok(PhantomKind::Constant),
            "layered_exp" => Ok(PhantomKind::LayeredExp),
            "bump" => Ok(PhantomKind::Bump),
            "two_bumps" => Ok(PhantomKind::TwoBumps),
            other => Err(Error::UnknownPhantom(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PhantomKind::Constant => "constant",
            PhantomKind::LayeredExp => "layered_exp",
            PhantomKind::Bump => "bump",
            PhantomKind::TwoBumps => "two_bumps",
        }
    }

    pub fn sigma(&self, x: f64, y: f64) -> f64 {
        match self {
            PhantomKind::Constant => 1.0,
            PhantomKind::LayeredExp => (2.0 * x).exp(),
            PhantomKind::Bump => {
                let dx = x - 0.5;
                let dy = y - 0.5;
                1.0 + 0.5 * (-(dx * dx + dy * dy) / 0.02).exp()
            }
            PhantomKind::TwoBumps => {
                let b = |cx: f64, cy: f64| {
                    let dx = x - cx;
                    let dy = y - cy;
                    0.4 * (-(dx * dx + dy * dy) / 0.015).exp()
                };
                1.0 + b(0.35, 0.35) + b(0.65, 0.65)
            }
        }
    }

    /// Uniform lower bound sigma0 on the unit square.
    pub fn sigma0(&self) -> f64 {
        1.0
    }

    pub fn grad_log_sigma(&self, x: f64, y: f64) -> Vec3 {
        match self {
            PhantomKind::Constant => [0.0, 0.0, 0.0],
            PhantomKind::LayeredExp => [2.0, 0.0, 0.0],
            PhantomKind::Bump | PhantomKind::TwoBumps => {
                let s = self.sigma(x, y);
                let (gx, gy) = match self {
                    PhantomKind::Bump => {
                        let dx = x - 0.5;
                        let dy = y - 0.5;
                        let e = 0.5 * (-(dx * dx + dy * dy) / 0.02).exp();
                        (-2.0 * dx / 0.02 * e, -2.0 * dy / 0.02 * e)
                    }
                    PhantomKind::TwoBumps => {
                        let term = |cx: f64, cy: f64| {
                            let dx = x - cx;
                            let dy = y - cy;
                            let e = 0.4 * (-(dx * dx + dy * dy) / 0.015).exp();
                            (-2.0 * dx / 0.015 * e, -2.0 * dy / 0.015 * e)
                        };
                        let a = term(0.35, 0.35);
                        let b = term(0.65, 0.65);
                        (a.0 + b.0, a.1 + b.1)
                    }
                    _ => unreachable!(),
                };
                [gx / s, gy / s, 0.0]
            }
        }
    }

    /// Closed-form solutions of the conductivity equation for the default
    /// illumination pair, when they exist.
    pub fn analytic_solution(&self, idx: usize, x: f64, y: f64) -> Option<f64> {
        match (self, idx) {
            (PhantomKind::Constant, 0) => Some(x),
            (PhantomKind::Constant, 1) => Some(y),
            (PhantomKind::LayeredExp, 0) => Some(0.5 * (1.0 - (-2.0 * x).exp())),
            (PhantomKind::LayeredExp, 1) => Some(y),
            _ => None,
        }
    }

    pub fn analytic_solution_grad(&self, idx: usize, x: f64, _y: f64) -> Option<Vec3> {
        match (self, idx) {
            (PhantomKind::Constant, 0) => Some([1.0, 0.0, 0.0]),
            (PhantomKind::Constant, 1) => Some([0.0, 1.0, 0.0]),
            (PhantomKind::LayeredExp, 0) => Some([(-2.0 * x).exp(), 0.0, 0.0]),
            (PhantomKind::LayeredExp, 1) => Some([0.0, 1.0, 0.0]),
            _ => None,
        }
    }

    pub fn has_analytic_solutions(&self) -> bool {
        self.analytic_solution(0, 0.0, 0.0).is_some()
    }
}

/// A phantom sampled on a grid.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub kind: PhantomKind,
    pub grid: Grid,
    pub sigma: ScalarField,
    pub sigma0: f64,
}

impl Phantom {
    pub fn new(kind: PhantomKind, grid: Grid) -> Self {
        let sigma = ScalarField::from_fn(grid, |x, y| kind.sigma(x, y));
        Phantom {
            kind,
            grid,
            sigma,
            sigma0: kind.sigma0(),
        }
    }

    pub fn by_name(name: &str, grid: Grid) -> Result<Self> {
        Ok(Self::new(PhantomKind::by_name(name)?, grid))
    }

    pub fn log_sigma(&self) -> ScalarField {
        self.sigma.map(f64::ln)
    }

    /// Analytic gradient of log sigma, sampled on the grid.
    pub fn grad_log_sigma(&self) -> VectorField {
        VectorField::from_fn(self.grid, 2, |x, y| self.kind.grad_log_sigma(x, y))
    }
}

/// Dirichlet boundary data driving the conductivity solutions. Stored as
/// full-grid fields; only boundary values are read by the solver.
#[derive(Debug, Clone)]
pub struct IlluminationSet {
    pub name: String,
    pub fields: Vec<ScalarField>,
}

impl IlluminationSet {
    pub fn m(&self) -> usize {
        self.fields.len()
    }

    /// Coordinate illuminations (x1, x2).
    pub fn axes(grid: Grid) -> Self {
        IlluminationSet {
            name: "axes".to_string(),
            fields: vec![
                ScalarField::from_fn(grid, |x, _| x),
                ScalarField::from_fn(grid, |_, y| y),
            ],
        }
    }

    /// Default pair for a phantom: traces of the closed-form solutions when
    /// they exist, coordinate illuminations otherwise.
    pub fn default_for(phantom: &Phantom) -> Self {
        let kind = phantom.kind;
        if kind.has_analytic_solutions() {
            IlluminationSet {
                name: "adapted".to_string(),
                fields: (0..2)
                    .map(|idx| {
                        ScalarField::from_fn(phantom.grid, |x, y| {
                            kind.analytic_solution(idx, x, y).unwrap()
                        })
                    })
                    .collect(),
            }
        } else {
            Self::axes(phantom.grid)
        }
    }
}
