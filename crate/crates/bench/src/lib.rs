//! Shared fixtures for the pipeline benchmarks.

use pdt_core::forward::{synthesize, DataBundle, SyntheticTruth};
use pdt_core::phantom::{IlluminationSet, Phantom, PhantomKind};
use pdt_core::Grid;

/// Layered-phantom bundle with closed-form data.
pub fn layered_bundle(n: usize, alpha: f64) -> (DataBundle, SyntheticTruth, IlluminationSet) {
    let grid = Grid::square(n);
    let phantom = Phantom::new(PhantomKind::LayeredExp, grid);
    let illums = IlluminationSet::default_for(&phantom);
    let (bundle, truth) = synthesize(&phantom, alpha, &illums, true).expect("synthesize");
    (bundle, truth, illums)
}

/// Bump-phantom bundle driven through the forward solver.
pub fn bump_bundle(n: usize, alpha: f64) -> (DataBundle, SyntheticTruth, IlluminationSet) {
    let grid = Grid::square(n);
    let phantom = Phantom::new(PhantomKind::Bump, grid);
    let illums = IlluminationSet::axes(grid);
    let (bundle, truth) = synthesize(&phantom, alpha, &illums, false).expect("synthesize");
    (bundle, truth, illums)
}
