//! Distances in the space of a frozen classifier.
//!
//! * vertical: `|w · f(z) + b|`, optionally divided by `|w|`
//! * coordinate: Euclidean distance between penultimate features
//! * horizontal: `sqrt(d_coor² - (d_v(z1) - d_v(z2))²)`
//!
//! With raw (unnormalised) margins the horizontal radicand can go
//! negative whenever `|w| > 1`; it is then clamped to zero and reported.

use std::sync::atomic::{AtomicU64, Ordering};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::classifier::AuxiliaryClassifier;
use crate::diff::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceKind {
    Vertical,
    Horizontal,
    Coordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Inter-domain translation into Y (positive vertical distance).
    TowardY,
    /// Inter-domain translation into X (negative vertical distance).
    TowardX,
    /// Intra-domain move toward the sampled target.
    TowardTarget,
    /// Intra-domain inverse pass back to the source.
    Reconstruct,
}

/// A nonnegative distance together with its kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceTag {
    pub kind: DistanceKind,
    pub magnitude: f64,
}

impl DistanceTag {
    pub fn new(kind: DistanceKind, magnitude: f64) -> Result<Self> {
        if !(magnitude >= 0.0) {
            return Err(Error::NegativeMagnitude(magnitude));
        }
        Ok(Self { kind, magnitude })
    }

    pub fn signed(&self, direction: Direction) -> Result<f64> {
        conditioning_scalar(self.kind, direction, self.magnitude)
    }
}

/// The signed scalar appended to a generator input.
pub fn conditioning_scalar(kind: DistanceKind, direction: Direction, magnitude: f64) -> Result<f64> {
    if !(magnitude >= 0.0) {
        return Err(Error::NegativeMagnitude(magnitude));
    }
    match (kind, direction) {
        (DistanceKind::Vertical, Direction::TowardY) => Ok(magnitude),
        (DistanceKind::Vertical, Direction::TowardX) => Ok(-magnitude),
        (DistanceKind::Horizontal, Direction::TowardTarget) => Ok(-magnitude),
        (DistanceKind::Horizontal, Direction::Reconstruct) => Ok(magnitude),
        (kind, direction) => Err(Error::InvalidDirection { kind, direction }),
    }
}

/// Vertical distance from a known score.
pub fn vertical_from_score(aux: &AuxiliaryClassifier, score: f64, normalize: bool) -> f64 {
    if normalize {
        score.abs() / aux.weight_norm()
    } else {
        score.abs()
    }
}

pub fn vertical_distance(aux: &AuxiliaryClassifier, z: &[f64], normalize: bool) -> Result<f64> {
    Ok(vertical_from_score(aux, aux.score(z)?, normalize))
}

pub fn coordinate_distance(aux: &AuxiliaryClassifier, z1: &[f64], z2: &[f64]) -> Result<f64> {
    let f1 = aux.features(z1)?;
    let f2 = aux.features(z2)?;
    Ok(euclidean(&f1, &f2))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizontal {
    pub distance: f64,
    /// The radicand was negative and the distance was forced to zero.
    pub clamped: bool,
}

/// Horizontal distance from already-computed features and scores.
pub fn horizontal_from_parts(
    aux: &AuxiliaryClassifier,
    (f1, s1): (&[f64], f64),
    (f2, s2): (&[f64], f64),
    normalize: bool,
) -> Horizontal {
    let d_coor = euclidean(f1, f2);
    let dv = vertical_from_score(aux, s1, normalize) - vertical_from_score(aux, s2, normalize);
    let radicand = d_coor * d_coor - dv * dv;
    if radicand < 0.0 {
        Horizontal {
            distance: 0.0,
            clamped: true,
        }
    } else {
        Horizontal {
            distance: radicand.sqrt(),
            clamped: false,
        }
    }
}

pub fn horizontal_distance(aux: &AuxiliaryClassifier, z1: &[f64], z2: &[f64], normalize: bool) -> Result<Horizontal> {
    let f1 = aux.features(z1)?;
    let f2 = aux.features(z2)?;
    let s1 = aux.score_from_features(&f1);
    let s2 = aux.score_from_features(&f2);
    Ok(horizontal_from_parts(aux, (&f1, s1), (&f2, s2), normalize))
}

/// Running count of clamped horizontal distances.
#[derive(Debug, Default)]
pub struct ClampCounter(AtomicU64);

impl ClampCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, h: Horizontal) -> Horizontal {
        if h.clamped {
            let n = self.0.fetch_add(1, Ordering::Relaxed) + 1;
            if n.is_power_of_two() {
                warn!("negative horizontal radicand clamped to 0 ({n} so far)");
            }
        }
        h
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// [`horizontal_distance`] that also updates `counter`.
pub fn horizontal_distance_counted(
    aux: &AuxiliaryClassifier,
    z1: &[f64],
    z2: &[f64],
    normalize: bool,
    counter: &ClampCounter,
) -> Result<Horizontal> {
    horizontal_distance(aux, z1, z2, normalize).map(|h| counter.record(h))
}

/// Features, scores and vertical distances of a batch, on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeDistances {
    pub features: Var,
    pub score: Var,
    pub vertical: Var,
}

/// Runs the frozen classifier on `x` (`[n, D]`) and derives `[n, 1]`
/// vertical distances. Gradients flow to `x` only.
pub fn distances_on_tape(tape: &mut Tape, aux: &AuxiliaryClassifier, x: Var, normalize: bool) -> Result<TapeDistances> {
    let (features, score) = aux.forward(tape, x)?;
    let mut vertical = tape.abs_elem(score);
    if normalize {
        vertical = tape.scale(vertical, 1.0 / aux.weight_norm());
    }
    Ok(TapeDistances {
        features,
        score,
        vertical,
    })
}

/// `[n, 1]` horizontal distances between matching rows of `a` and `b`.
/// A negative radicand is clamped through a ReLU, so its gradient is 0.
pub fn horizontal_on_tape(tape: &mut Tape, a: &TapeDistances, b: &TapeDistances) -> Result<Var> {
    let diff = tape.sub(a.features, b.features)?;
    let sq = tape.square(diff);
    let coor2 = tape.sum_last_axis(sq)?;
    let dv = tape.sub(a.vertical, b.vertical)?;
    let dv2 = tape.square(dv);
    let radicand = tape.sub(coor2, dv2)?;
    let radicand = tape.relu(radicand);
    Ok(tape.sqrt_elem(radicand))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{freeze, ClassifierNet};

    fn linear(w: &[f64], b: f64) -> AuxiliaryClassifier {
        freeze(&ClassifierNet::linear(w, b).unwrap())
    }

    #[test]
    fn vertical_examples() {
        let aux = linear(&[3.0, 4.0], 0.0);
        assert_eq!(vertical_distance(&aux, &[1.0, 1.0], false).unwrap(), 7.0);
        assert!((vertical_distance(&aux, &[1.0, 1.0], true).unwrap() - 1.4).abs() < 1e-15);
        assert_eq!(vertical_distance(&aux, &[4.0, -3.0], false).unwrap(), 0.0);
    }

    #[test]
    fn coordinate_examples() {
        let aux = linear(&[3.0, 4.0], 0.0);
        assert_eq!(coordinate_distance(&aux, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(coordinate_distance(&aux, &[1.5, 2.0], &[1.5, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn horizontal_examples() {
        let aux = linear(&[1.0, 0.0], 0.0);
        let h = horizontal_distance(&aux, &[0.0, 0.0], &[3.0, 4.0], false).unwrap();
        assert_eq!(h, Horizontal { distance: 4.0, clamped: false });
        let h = horizontal_distance(&aux, &[2.0, 1.0], &[2.0, 1.0], false).unwrap();
        assert_eq!(h, Horizontal { distance: 0.0, clamped: false });
    }

    #[test]
    fn clamp_pathology() {
        let aux = linear(&[2.0, 0.0], 0.0);
        let counter = ClampCounter::new();
        let h = horizontal_distance_counted(&aux, &[0.0, 0.0], &[1.0, 0.0], false, &counter).unwrap();
        assert_eq!(h, Horizontal { distance: 0.0, clamped: true });
        assert_eq!(counter.get(), 1);
        let h = horizontal_distance_counted(&aux, &[0.0, 0.0], &[1.0, 0.0], true, &counter).unwrap();
        assert!(!h.clamped);
        assert_eq!(counter.get(), 1);
    }

    #[test]
    fn conditioning_signs() {
        use DistanceKind::*;
        assert_eq!(conditioning_scalar(Vertical, Direction::TowardY, 2.2).unwrap(), 2.2);
        assert_eq!(conditioning_scalar(Vertical, Direction::TowardX, 2.2).unwrap(), -2.2);
        assert_eq!(conditioning_scalar(Horizontal, Direction::TowardTarget, 4.0).unwrap(), -4.0);
        assert_eq!(conditioning_scalar(Horizontal, Direction::Reconstruct, 4.0).unwrap(), 4.0);
        assert!(matches!(
            conditioning_scalar(Vertical, Direction::TowardY, -1.0),
            Err(Error::NegativeMagnitude(_))
        ));
        assert!(conditioning_scalar(Coordinate, Direction::TowardY, 1.0).is_err());
        assert!(conditioning_scalar(Vertical, Direction::Reconstruct, 1.0).is_err());
        assert!(DistanceTag::new(Vertical, -0.5).is_err());
    }

    #[test]
    fn tape_matches_plain() {
        let aux = linear(&[2.0, -1.0], 0.5);
        let a = [0.3, 1.2];
        let b = [-0.7, 2.5];
        let mut tape = Tape::new();
        let xa = tape.constant(crate::diff::Tensor::matrix(1, 2, a.to_vec()).unwrap());
        let xb = tape.constant(crate::diff::Tensor::matrix(1, 2, b.to_vec()).unwrap());
        let da = distances_on_tape(&mut tape, &aux, xa, true).unwrap();
        let db = distances_on_tape(&mut tape, &aux, xb, true).unwrap();
        let h = horizontal_on_tape(&mut tape, &da, &db).unwrap();
        let plain = horizontal_distance(&aux, &a, &b, true).unwrap();
        assert!((tape.value(h).item() - plain.distance).abs() < 1e-14);
        assert!((tape.value(da.vertical).item() - vertical_distance(&aux, &a, true).unwrap()).abs() < 1e-15);
    }
}
