//! Labelled vector datasets, synthetic generators and the CSV schema
//! `f1,...,fD,label` with labels in {-1, +1}.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diff::{Rng, Tensor};
use crate::error::{Error, Result};

/// Domain X carries label -1, domain Y carries +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    X,
    Y,
}

impl Label {
    pub fn value(self) -> f64 {
        match self {
            Label::X => -1.0,
            Label::Y => 1.0,
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        if v == -1.0 {
            Ok(Label::X)
        } else if v == 1.0 {
            Ok(Label::Y)
        } else {
            Err(Error::InvalidLabel(v))
        }
    }

    pub fn other(self) -> Self {
        match self {
            Label::X => Label::Y,
            Label::Y => Label::X,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Label,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: Label) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(dim: usize, samples: Vec<Sample>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        for s in &samples {
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.features.len(),
                });
            }
        }
        Ok(Self { dim, samples })
    }

    /// Builds a dataset from the two domains, X first.
    pub fn from_domains(xs: Vec<Vec<f64>>, ys: Vec<Vec<f64>>) -> Result<Self> {
        let dim = xs
            .first()
            .or(ys.first())
            .map(Vec::len)
            .ok_or(Error::EmptyDomain("X and Y"))?;
        let samples = xs
            .into_iter()
            .map(|f| Sample::new(f, Label::X))
            .chain(ys.into_iter().map(|f| Sample::new(f, Label::Y)))
            .collect();
        Self::new(dim, samples)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if sample.features.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: sample.features.len(),
            });
        }
        self.samples.push(sample);
        Ok(())
    }

    /// Feature vectors of one domain, in file order.
    pub fn domain(&self, label: Label) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .filter(|s| s.label == label)
            .map(|s| s.features.clone())
            .collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    pub fn has_both_labels(&self) -> bool {
        self.count(Label::X) > 0 && self.count(Label::Y) > 0
    }

    pub fn features(&self) -> Result<Tensor> {
        let rows: Vec<&[f64]> = self.samples.iter().map(|s| s.features.as_slice()).collect();
        Tensor::from_rows(&rows)
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.label.value()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for d in 1..=self.dim {
            write!(out, "f{d},").unwrap();
        }
        out.push_str("label\n");
        for s in &self.samples {
            for v in &s.features {
                write!(out, "{v},").unwrap();
            }
            writeln!(out, "{}", s.label.value() as i32).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let dim = cols.len().saturating_sub(1);
        let expected: Vec<String> = (1..=dim).map(|d| format!("f{d}")).collect();
        if dim == 0 || cols[dim] != "label" || cols[..dim] != expected[..] {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header must be f1..fD,label, got `{header}`"),
            });
        }
        let mut samples = Vec::new();
        for (i, line) in lines {
            let fields = parse_row(line, i + 1)?;
            if fields.len() != dim + 1 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {} fields, got {}", dim + 1, fields.len()),
                });
            }
            let label = Label::from_value(fields[dim]).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            samples.push(Sample::new(fields[..dim].to_vec(), label));
        }
        Self::new(dim, samples)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub(crate) fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            f.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("`{f}`: {e}"),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    /// One isotropic blob per domain.
    Gaussians,
    /// Two interleaving half circles in the first two dimensions.
    Moons,
    /// Several blobs per domain, stacked along the second dimension.
    Subclusters,
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussians" => Ok(Generator::Gaussians),
            "moons" => Ok(Generator::Moons),
            "subclusters" => Ok(Generator::Subclusters),
            other => Err(Error::InvalidConfig(format!("unknown generator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub n_x: usize,
    pub n_y: usize,
    pub noise: f64,
    pub seed: u64,
    pub dim: usize,
    /// Distance between the domain centres along the first axis.
    pub separation: f64,
    /// Blobs per domain (subclusters only).
    pub clusters: usize,
    /// Distance between neighbouring blobs along the second axis.
    pub cluster_spacing: f64,
    /// Train, validation and test shares.
    pub split: [f64; 3],
    /// Divide every axis by its extent (centre offset plus three noise
    /// scales) so samples fall roughly in `[-1, 1]`. The divisor depends
    /// on these settings only, so draws with different seeds share it.
    pub normalize: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            generator: Generator::Subclusters,
            n_x: 200,
            n_y: 200,
            noise: 0.3,
            seed: 0,
            dim: 2,
            separation: 4.0,
            clusters: 2,
            cluster_spacing: 3.0,
            split: [0.6, 0.2, 0.2],
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_x == 0 {
            problems.push("n_x must be >= 1".to_string());
        }
        if self.n_y == 0 {
            problems.push("n_y must be >= 1".to_string());
        }
        if self.dim == 0 {
            problems.push("dim must be >= 1".to_string());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            problems.push(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        if self.generator == Generator::Subclusters && self.clusters < 2 {
            problems.push(format!("subclusters needs clusters >= 2, got {}", self.clusters));
        }
        if self.generator != Generator::Gaussians && self.dim < 2 {
            problems.push(format!("{:?} needs dim >= 2", self.generator));
        }
        let total: f64 = self.split.iter().sum();
        if self.split.iter().any(|s| !(*s >= 0.0)) || (total - 1.0).abs() > 1e-9 || self.split[0] <= 0.0 {
            problems.push(format!("split {:?} must be nonnegative, sum to 1 with a positive train share", self.split));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    /// Draws both domains (X first) without splitting.
    pub fn sample(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = Rng::new(self.seed);
        let mut xs: Vec<Vec<f64>> = (0..self.n_x).map(|i| self.draw(Label::X, i, &mut rng)).collect();
        let mut ys: Vec<Vec<f64>> = (0..self.n_y).map(|i| self.draw(Label::Y, i, &mut rng)).collect();
        if self.normalize {
            let extent = self.extent();
            for v in xs.iter_mut().chain(ys.iter_mut()) {
                for (x, e) in v.iter_mut().zip(&extent) {
                    *x /= e;
                }
            }
        }
        Dataset::from_domains(xs, ys)
    }

    /// Per-axis divisor used when `normalize` is set.
    pub fn extent(&self) -> Vec<f64> {
        let spread = 3.0 * self.noise;
        (0..self.dim)
            .map(|d| {
                let centre = match (self.generator, d) {
                    (Generator::Gaussians, 0) | (Generator::Subclusters, 0) => self.separation / 2.0,
                    (Generator::Subclusters, 1) => (self.clusters.saturating_sub(1)) as f64 / 2.0 * self.cluster_spacing,
                    (Generator::Moons, 0) => 2.0,
                    (Generator::Moons, 1) => 1.0,
                    _ => 0.0,
                };
                let e = centre.abs() + spread;
                if e > 0.0 {
                    e
                } else {
                    1.0
                }
            })
            .collect()
    }

    fn draw(&self, label: Label, i: usize, rng: &mut Rng) -> Vec<f64> {
        let sign = label.value();
        let mut v: Vec<f64> = (0..self.dim).map(|_| self.noise * rng.normal()).collect();
        match self.generator {
            Generator::Gaussians => v[0] += sign * self.separation / 2.0,
            Generator::Subclusters => {
                let k = self.clusters;
                let c = i % k;
                v[0] += sign * self.separation / 2.0;
                v[1] += (c as f64 - (k - 1) as f64 / 2.0) * self.cluster_spacing;
            }
            Generator::Moons => {
                let t = rng.uniform(0.0, std::f64::consts::PI);
                let (cx, cy) = match label {
                    Label::X => (t.cos(), t.sin()),
                    Label::Y => (1.0 - t.cos(), 0.5 - t.sin()),
                };
                v[0] += cx;
                v[1] += cy;
            }
        }
        v
    }

    /// Draws the data and splits each domain by the configured shares.
    pub fn generate(&self) -> Result<Splits> {
        let all = self.sample()?;
        let mut rng = Rng::new(self.seed ^ 0x5eed_5eed_5eed_5eed);
        let mut parts: [Vec<Sample>; 3] = Default::default();
        for label in [Label::X, Label::Y] {
            let mut rows: Vec<Sample> = all
                .samples()
                .iter()
                .filter(|s| s.label == label)
                .cloned()
                .collect();
            rng.shuffle(&mut rows);
            let n = rows.len();
            let n_train = (((n as f64) * self.split[0]).round() as usize).min(n);
            let n_val = (((n as f64) * self.split[1]).round() as usize).min(n - n_train);
            let rest = rows.split_off(n_train);
            let (val, test) = rest.split_at(n_val);
            parts[0].extend(rows);
            parts[1].extend_from_slice(val);
            parts[2].extend_from_slice(test);
        }
        let [train, validation, test] = parts;
        Ok(Splits {
            train: Dataset::new(self.dim, train)?,
            validation: Dataset::new(self.dim, validation)?,
            test: Dataset::new(self.dim, test)?,
        })
    }
}
