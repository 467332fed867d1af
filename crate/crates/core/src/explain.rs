//! Classification metrics, class-difference maps and the agreement
//! between requested and reconstructed distances.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::gan::{GanBundle, Mapping};
use crate::geometry;

fn check_pair(op: &'static str, scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyBatch(op));
    }
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            op,
            left: scores.len(),
            right: labels.len(),
        });
    }
    for &c in labels {
        Label::from_value(c)?;
    }
    Ok(())
}

/// Fraction of samples with `sign(score) == label`; a score of exactly 0
/// counts as domain X.
pub fn accuracy(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair("accuracy", scores, labels)?;
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, c)| if **s > 0.0 { **c > 0.0 } else { **c < 0.0 })
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Area under the ROC curve from the rank-sum statistic, with tied
/// scores sharing their average rank.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_pair("auc", scores, labels)?;
    let n_pos = labels.iter().filter(|&&c| c > 0.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleDomain);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidTensor("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start + 1 ..= end share their mean
        let avg = (start + 1 + end) as f64 / 2.0;
        rank_sum += avg * order[start..end].iter().filter(|&&i| labels[i] > 0.0).count() as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub accuracy: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_seed: Vec<SeedMetrics>,
    pub accuracy: MeanStd,
    pub auc: MeanStd,
}

impl MetricReport {
    pub fn from_runs(per_seed: Vec<SeedMetrics>) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::EmptyBatch("MetricReport"));
        }
        let acc: Vec<f64> = per_seed.iter().map(|m| m.accuracy).collect();
        let auc: Vec<f64> = per_seed.iter().map(|m| m.auc).collect();
        Ok(Self {
            accuracy: MeanStd::of(&acc),
            auc: MeanStd::of(&auc),
            per_seed,
        })
    }
}

/// Accuracy and AUC of `scores` against the labels of `data`.
pub fn evaluate_scores(seed: u64, scores: &[f64], data: &Dataset) -> Result<SeedMetrics> {
    let labels = data.labels();
    Ok(SeedMetrics {
        seed,
        accuracy: accuracy(scores, &labels)?,
        auc: auc(scores, &labels)?,
    })
}

/// `|z - G(z, 0)|` per dimension, where `G` translates out of the
/// sample's domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDifferenceMap {
    pub sample: Vec<f64>,
    pub domain: Label,
    pub values: Vec<f64>,
}

pub fn cdm(bundle: &GanBundle, sample: &[f64], domain: Label) -> Result<ClassDifferenceMap> {
    if sample.len() != bundle.dim() {
        return Err(Error::DimensionMismatch {
            expected: bundle.dim(),
            got: sample.len(),
        });
    }
    let mapping = match domain {
        Label::X => Mapping::X2Y,
        Label::Y => Mapping::Y2X,
    };
    let projected = bundle.generator(mapping).generate(sample, 0.0)?;
    let values = sample.iter().zip(&projected).map(|(a, b)| (a - b).abs()).collect();
    Ok(ClassDifferenceMap {
        sample: sample.to_vec(),
        domain,
        values,
    })
}

/// Pearson correlation; `None` below three points or with zero variance
/// on either side.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 3 {
        return None;
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(a) || constant(b) {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub kind: Mapping,
    /// Distance magnitude fed to the generator.
    pub target: f64,
    /// Same distance measured on the generated sample.
    pub reconstructed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCurveReport {
    pub vertical: Vec<CurvePoint>,
    pub horizontal: Vec<CurvePoint>,
    pub vertical_r: Option<f64>,
    pub horizontal_r: Option<f64>,
}

impl DistanceCurveReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,target,reconstructed\n");
        for p in self.vertical.iter().chain(&self.horizontal) {
            out.push_str(&format!("{},{},{}\n", p.kind, p.target, p.reconstructed));
        }
        out
    }
}

fn correlation(points: &[CurvePoint]) -> Option<f64> {
    let t: Vec<f64> = points.iter().map(|p| p.target).collect();
    let r: Vec<f64> = points.iter().map(|p| p.reconstructed).collect();
    pearson(&t, &r)
}

/// Pairs every sample of `eval` with a target and compares the requested
/// distance with the one the frozen classifier measures on the output.
///
/// The `i`-th sample of X is paired with the `i`-th sample of Y (cyclic)
/// for the vertical curves and with the next sample of X for the
/// horizontal ones; Y is handled symmetrically. Both directions are
/// pooled into one correlation per distance kind.
pub fn distance_curve_report(bundle: &GanBundle, eval: &Dataset) -> Result<DistanceCurveReport> {
    let aux = bundle.aux();
    let norm = bundle.normalize;
    let xs = eval.domain(Label::X);
    let ys = eval.domain(Label::Y);
    if xs.is_empty() {
        return Err(Error::EmptyDomain("X"));
    }
    if ys.is_empty() {
        return Err(Error::EmptyDomain("Y"));
    }
    let mut vertical = Vec::new();
    let mut horizontal = Vec::new();
    let mut rng = crate::diff::Rng::new(0);
    for (own, other, inter, intra) in [(&xs, &ys, Mapping::X2Y, Mapping::X2X), (&ys, &xs, Mapping::Y2X, Mapping::Y2Y)] {
        let pv = rng.permutation(other.len());
        let ph = rng.permutation(own.len());
        for (i, z) in own.iter().enumerate() {
            let partner = &other[pv[i % other.len()]];
            let target = geometry::vertical_distance(aux, partner, norm)?;
            let sign = if inter.target() == Label::Y { 1.0 } else { -1.0 };
            let out = bundle.generator(inter).generate(z, sign * target)?;
            vertical.push(CurvePoint {
                kind: inter,
                target,
                reconstructed: geometry::vertical_distance(aux, &out, norm)?,
            });

            if own.len() > 1 {
                let mate = &own[ph[i]];
                let target = geometry::horizontal_distance(aux, z, mate, norm)?.distance;
                let out = bundle.generator(intra).generate(z, -target)?;
                horizontal.push(CurvePoint {
                    kind: intra,
                    target,
                    reconstructed: geometry::horizontal_distance(aux, z, &out, norm)?.distance,
                });
            }
        }
    }
    Ok(DistanceCurveReport {
        vertical_r: correlation(&vertical),
        horizontal_r: correlation(&horizontal),
        vertical,
        horizontal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{freeze, ClassifierNet};
    use crate::gan::{GanConfig, Generator};
    use crate::diff::Rng;
    use std::sync::Arc;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[-1.0, -1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[-1.0, 1.0, -1.0, 1.0]).unwrap(), 0.5);
        // every positive outscores both negatives
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[-1.0, 1.0, -1.0, 1.0]).unwrap(), 1.0);
        // 0.4 loses to 0.5, the other three pairs are ordered
        assert_eq!(auc(&[0.1, 0.4, 0.5, 0.8], &[-1.0, 1.0, -1.0, 1.0]).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.4, 0.4, 0.8], &[-1.0, 1.0, -1.0, 1.0]).unwrap(), 0.875);
        assert!(matches!(auc(&[0.1, 0.2], &[1.0, 1.0]), Err(Error::SingleDomain)));
        assert!(auc(&[0.1, 0.2], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1.0, -1.0, 0.0, 2.0], &[1.0, -1.0, -1.0, -1.0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, 1.0);
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn pearson_cases() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), None);
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0]), None);
    }

    fn bundle(g: Generator, dim: usize) -> GanBundle {
        let w = vec![1.0; dim];
        let aux = Arc::new(freeze(&ClassifierNet::linear(&w, 0.0).unwrap()));
        GanBundle::new(aux, &GanConfig::default(), &mut Rng::new(3))
            .unwrap()
            .with_generators(g)
    }

    #[test]
    fn cdm_stubs() {
        let b = bundle(Generator::Identity { dim: 2 }, 2);
        assert_eq!(cdm(&b, &[0.4, -1.0], Label::X).unwrap().values, vec![0.0, 0.0]);
        let b = bundle(Generator::Shift { dim: 1 }, 1);
        assert_eq!(cdm(&b, &[2.5], Label::Y).unwrap().values, vec![0.0]);
    }

    #[test]
    fn constant_generator_has_no_correlation() {
        let b = bundle(Generator::Constant { point: vec![0.3, 0.1] }, 2);
        let data = Dataset::from_domains(
            vec![vec![-1.0, 0.0], vec![-2.0, 0.5], vec![-3.0, 1.0]],
            vec![vec![1.0, 0.0], vec![2.0, 0.2], vec![3.5, 1.0]],
        )
        .unwrap();
        let report = distance_curve_report(&b, &data).unwrap();
        assert_eq!(report.vertical_r, None);
        assert_eq!(report.vertical.len(), 6);
        assert_eq!(report.horizontal.len(), 6);
    }
}
