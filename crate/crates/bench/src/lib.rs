//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use disgan_core::classifier::{freeze, ClassifierConfig, ClassifierNet};
use disgan_core::diff::Rng;
use disgan_core::gan::{GanBundle, GanConfig, QuadBatch};

/// A randomly initialised bundle on `dim`-dimensional inputs.
pub fn bundle(dim: usize, seed: u64) -> GanBundle {
    let mut rng = Rng::new(seed);
    let aux = Arc::new(freeze(&ClassifierNet::new(dim, &ClassifierConfig::default(), &mut rng)));
    GanBundle::new(aux, &GanConfig::default(), &mut rng).unwrap()
}

/// `n` uniformly drawn rows per slot.
pub fn batch(dim: usize, n: usize, seed: u64) -> QuadBatch {
    let mut rng = Rng::new(seed);
    let mut rows = || -> Vec<Vec<f64>> { (0..n).map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect() };
    let (a, b, c, d) = (rows(), rows(), rows(), rows());
    QuadBatch::from_rows(&a, &b, &c, &d).unwrap()
}

/// Scores and balanced labels for AUC timing.
pub fn scored(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = Rng::new(seed);
    let labels: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let scores = labels.iter().map(|c| c * 0.5 + rng.normal()).collect();
    (scores, labels)
}
