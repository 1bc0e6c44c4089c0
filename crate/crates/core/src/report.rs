//! Per-run reconstruction reports: error metrics against ground truth,
//! residual norms, and provenance (configuration hash, runtime).

use crate::grid::{NormKind, ScalarField};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Metrics of one reconstruction run. Relative errors are normalized by
/// max(1, |truth|) in the corresponding norm so constant phantoms stay
/// meaningful.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconReport {
    pub method: String,
    pub phantom: String,
    pub alpha: f64,
    pub grid: usize,
    pub err_logsigma_linf: f64,
    pub err_logsigma_w1inf: f64,
    /// H1 distance of sigma^{-2 alpha} (log sigma when alpha = 0).
    pub err_sigma_pow_h1: f64,
    pub path_dependence: f64,
    pub frame_consistency: f64,
    pub min_det: f64,
    pub degenerate_fraction: f64,
    pub residual_norms: BTreeMap<String, f64>,
    pub runtime_s: f64,
    pub config_hash: String,
}

impl ReconReport {
    /// CSV header matching `csv_row`.
    pub fn csv_header() -> String {
        "method,phantom,alpha,grid,err_logsigma_linf,err_logsigma_w1inf,err_sigma_pow_h1,\
         path_dependence,frame_consistency,min_det,degenerate_fraction,runtime_s,config_hash"
            .to_string()
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:.3},{}",
            self.method,
            self.phantom,
            self.alpha,
            self.grid,
            self.err_logsigma_linf,
            self.err_logsigma_w1inf,
            self.err_sigma_pow_h1,
            self.path_dependence,
            self.frame_consistency,
            self.min_det,
            self.degenerate_fraction,
            self.runtime_s,
            self.config_hash
        )
    }

    /// Equality of everything except runtime (used by determinism checks).
    pub fn same_metrics(&self, other: &Self) -> bool {
        self.method == other.method
            && self.phantom == other.phantom
            && self.alpha == other.alpha
            && self.grid == other.grid
            && self.err_logsigma_linf == other.err_logsigma_linf
            && self.err_logsigma_w1inf == other.err_logsigma_w1inf
            && self.err_sigma_pow_h1 == other.err_sigma_pow_h1
            && self.path_dependence == other.path_dependence
            && self.frame_consistency == other.frame_consistency
            && self.min_det == other.min_det
            && self.degenerate_fraction == other.degenerate_fraction
            && self.residual_norms == other.residual_norms
            && self.config_hash == other.config_hash
    }
}

/// Sup distance restricted to a mask (all nodes when `mask` is `None`).
pub fn masked_linf_diff(a: &ScalarField, b: &ScalarField, mask: Option<&[bool]>) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..a.values.len() {
        if mask.is_none_or(|m| m[k]) {
            worst = worst.max((a.values[k] - b.values[k]).abs());
        }
    }
    worst
}

/// W^{1,inf} distance with the gradient evaluated on the full difference
/// field but maximized over the mask.
pub fn masked_w1inf_diff(a: &ScalarField, b: &ScalarField, mask: Option<&[bool]>) -> f64 {
    let diff = a.zip(b, |x, y| x - y);
    let grad = diff.gradient();
    let mut worst = 0.0f64;
    let g = a.grid;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            if mask.is_none_or(|m| m[k]) {
                let v = grad.at(i, j);
                worst = worst
                    .max(diff.values[k].abs())
                    .max((v[0] * v[0] + v[1] * v[1]).sqrt());
            }
        }
    }
    worst
}

/// Relative error: distance / max(1, |truth|).
pub fn relative(err: f64, truth_norm: f64) -> f64 {
    err / truth_norm.max(1.0)
}

pub fn h1_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.zip(b, |x, y| x - y).norm(NormKind::H1)
}
