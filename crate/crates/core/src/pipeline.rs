//! The augmentation loop: train and freeze a classifier, then train the
//! four generators jointly while a fresh classifier `C'` learns from the
//! real samples and everything the generators produce.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};

use crate::classifier::{fit, freeze, train_classifier, ClassifierConfig, ClassifierNet};
use crate::data::{parse_row, Dataset, Label, Sample};
use crate::diff::{LrSchedule, Rng, Tensor};
use crate::error::{Error, Result};
use crate::gan::{self, Conditioning, GanBundle, GanConfig, GanOptimizer, LossReport, Mapping, QuadBatch};
use crate::geometry::ClampCounter;

/// Note carried in every report: co-sample indices wrap by their own
/// domain's size.
pub const WRAP_NOTE: &str = "x indices wrap modulo |X| and y indices modulo |Y|";

/// `((i - 1) mod size) + 1`, a 1-based cyclic index.
pub fn wrap_index(i: usize, size: usize) -> usize {
    assert!(i >= 1 && size >= 1, "wrap_index needs i >= 1 and size >= 1");
    (i - 1) % size + 1
}

/// When `C'` is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CPrimeMode {
    /// One hinge step per loop iteration on real plus generated samples.
    #[default]
    PerIteration,
    /// Train after the loop on the training set plus the final archive.
    PostHoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warm_epochs: usize,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub warm_start_cprime: bool,
    pub cprime_mode: CPrimeMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            warm_epochs: 25,
            base_lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 16,
            warm_start_cprime: false,
            cprime_mode: CPrimeMode::PerIteration,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.base_lr,
            total_epochs: self.epochs,
            warm_epochs: self.warm_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("train.epochs must be >= 1".to_string());
        }
        if self.warm_epochs > self.epochs {
            problems.push(format!(
                "train.warm_epochs {} exceeds train.epochs {}",
                self.warm_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            problems.push("train.batch_size must be >= 1".to_string());
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            problems.push(format!("train.base_lr must be finite and >= 0, got {}", self.base_lr));
        }
        for (name, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// One generated sample and where it came from. Indices are 1-based
/// positions in the owning domain of the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub kind: Mapping,
    pub source_idx: usize,
    pub target_idx: usize,
    pub conditioning: f64,
    pub features: Vec<f64>,
}

impl ArchiveEntry {
    pub fn label(&self) -> Label {
        self.kind.target()
    }
}

/// Samples generated during the final epoch, four per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationArchive {
    dim: usize,
    entries: Vec<ArchiveEntry>,
}

impl AugmentationArchive {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn push(&mut self, entry: ArchiveEntry) -> Result<()> {
        if entry.features.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: entry.features.len(),
            });
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn to_dataset(&self) -> Result<Dataset> {
        let samples = self
            .entries
            .iter()
            .map(|e| Sample::new(e.features.clone(), e.label()))
            .collect();
        Dataset::new(self.dim, samples)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,source_idx,target_idx,conditioning");
        for d in 1..=self.dim {
            let _ = write!(out, ",f{d}");
        }
        out.push_str(",label\n");
        for e in &self.entries {
            let _ = write!(out, "{},{},{},{}", e.kind, e.source_idx, e.target_idx, e.conditioning);
            for v in &e.features {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", e.label().value());
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 6 || cols[..4] != ["kind", "source_idx", "target_idx", "conditioning"] || cols[cols.len() - 1] != "label" {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected archive header `{header}`"),
            });
        }
        let dim = cols.len() - 5;
        let mut archive = Self::new(dim);
        for (n, line) in lines.enumerate() {
            let lineno = n + 2;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {} fields, got {}", cols.len(), fields.len()),
                });
            }
            let bad = |what: &str| Error::Parse {
                line: lineno,
                msg: format!("invalid {what}"),
            };
            let kind: Mapping = fields[0].parse().map_err(|_| bad("kind"))?;
            let source_idx = fields[1].parse().map_err(|_| bad("source_idx"))?;
            let target_idx = fields[2].parse().map_err(|_| bad("target_idx"))?;
            let conditioning = fields[3].parse().map_err(|_| bad("conditioning"))?;
            let mut features = parse_row(&fields[4..].join(","), lineno)?;
            let label = features.pop().map(Label::from_value).transpose().map_err(|_| bad("label"))?;
            if label != Some(kind.target()) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("{kind} entry carries the wrong label"),
                });
            }
            archive.push(ArchiveEntry {
                kind,
                source_idx,
                target_idx,
                conditioning,
                features,
            })?;
        }
        Ok(archive)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Everything a run produces besides `C'` and the archive.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub iterations_per_epoch: usize,
    pub total_iterations: usize,
    /// Horizontal distances whose radicand had to be clamped.
    pub clamp_events: u64,
    /// Generated samples that did not depend on their source: the same
    /// generator fed a different sample with the same conditioning gave
    /// an identical output.
    pub degenerate_samples: u64,
    pub classifier_trace: Vec<f64>,
    pub loss_trace: Vec<LossReport>,
    /// Mean hinge loss of `C'` per epoch.
    pub cprime_trace: Vec<f64>,
    pub wrap_note: &'static str,
}

impl RunReport {
    pub fn loss_trace_csv(&self) -> String {
        let mut out = String::from(LossReport::CSV_HEADER);
        out.push('\n');
        for r in &self.loss_trace {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    /// Mean of `inter_cyc + intra_cyc` over each epoch.
    pub fn cycle_means(&self) -> Vec<f64> {
        self.loss_trace
            .chunks(self.iterations_per_epoch.max(1))
            .map(|c| c.iter().map(|r| r.inter_cyc + r.intra_cyc).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

/// Outcome of [`run_algorithm1`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// The classifier trained in the first step, before freezing.
    pub classifier: ClassifierNet,
    pub bundle: GanBundle,
    pub c_prime: ClassifierNet,
    pub archive: AugmentationArchive,
    pub report: RunReport,
}

/// Scales the classifier learning rate by the loop's schedule.
fn cprime_lr(classifier: &ClassifierConfig, schedule: &LrSchedule, epoch: usize) -> Result<f64> {
    if schedule.base_lr == 0.0 {
        return Ok(0.0);
    }
    Ok(classifier.lr * schedule.lr(epoch)? / schedule.base_lr)
}

/// A single Adam step on the hinge loss of the concatenation of both
/// batches, every sample weighted alike.
pub fn equal_weight_hinge_update(
    c_prime: &mut ClassifierNet,
    opt: &mut crate::classifier::ClassifierOptimizer,
    real: &[Sample],
    generated: &[Sample],
    lr: f64,
    l2: f64,
) -> Result<f64> {
    let all: Vec<&Sample> = real.iter().chain(generated).collect();
    if all.is_empty() {
        return Err(Error::EmptyBatch("equal_weight_hinge_update"));
    }
    let rows: Vec<&[f64]> = all.iter().map(|s| s.features.as_slice()).collect();
    let labels: Vec<f64> = all.iter().map(|s| s.label.value()).collect();
    c_prime.hinge_step(opt, &Tensor::from_rows(&rows)?, &labels, lr, l2)
}

/// Per-iteration index draw: the primary `x` and `y` walk a fresh
/// permutation of their domain, the co-samples are uniform.
struct Quad {
    i: usize,
    l: usize,
    j: usize,
    k: usize,
}

fn draw_random(rng: &mut Rng, n: usize, m: usize) -> Quad {
    Quad {
        i: rng.below(n),
        l: rng.below(n),
        j: rng.below(m),
        k: rng.below(m),
    }
}

fn make_batch(xs: &[Vec<f64>], ys: &[Vec<f64>], quads: &[Quad]) -> Result<QuadBatch> {
    let pick = |dom: &[Vec<f64>], f: &dyn Fn(&Quad) -> usize| -> Vec<Vec<f64>> { quads.iter().map(|q| dom[f(q)].clone()).collect() };
    QuadBatch::from_rows(
        &pick(xs, &|q| q.i),
        &pick(xs, &|q| q.l),
        &pick(ys, &|q| q.j),
        &pick(ys, &|q| q.k),
    )
}

/// Runs the whole augmentation loop on `train`.
pub fn run_algorithm1(
    train: &Dataset,
    classifier_cfg: &ClassifierConfig,
    gan_cfg: &GanConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RunOutput> {
    cfg.validate()?;
    let xs = train.domain(Label::X);
    let ys = train.domain(Label::Y);
    if xs.is_empty() {
        return Err(Error::EmptyDomain("X"));
    }
    if ys.is_empty() {
        return Err(Error::EmptyDomain("Y"));
    }
    let mut rng = Rng::new(seed);

    let trained = train_classifier(train, classifier_cfg, &mut rng.split())?;
    let aux = Arc::new(freeze(&trained.net));
    let bundle = GanBundle::new(aux, gan_cfg, &mut rng.split())?;
    run_loop(train, trained.net, trained.loss_trace, bundle, classifier_cfg, cfg, &mut rng)
}

/// The loop after the classifier has been frozen into `bundle`.
pub fn run_loop(
    train: &Dataset,
    classifier: ClassifierNet,
    classifier_trace: Vec<f64>,
    mut bundle: GanBundle,
    classifier_cfg: &ClassifierConfig,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<RunOutput> {
    cfg.validate()?;
    let xs = train.domain(Label::X);
    let ys = train.domain(Label::Y);
    if xs.is_empty() {
        return Err(Error::EmptyDomain("X"));
    }
    if ys.is_empty() {
        return Err(Error::EmptyDomain("Y"));
    }
    let (n, m) = (xs.len(), ys.len());
    let iterations = n.max(m);
    let schedule = cfg.schedule();

    let mut c_prime = if cfg.warm_start_cprime {
        classifier.clone()
    } else {
        ClassifierNet::new(train.dim(), classifier_cfg, &mut rng.split())
    };
    let mut c_opt = classifier_cfg.adam();
    let mut opt = GanOptimizer::new(cfg.beta1, cfg.beta2, cfg.base_lr);
    let clamps = ClampCounter::new();
    let mut degenerate = 0u64;
    let mut archive = AugmentationArchive::new(train.dim());
    let mut loss_trace = Vec::with_capacity(iterations * cfg.epochs);
    let mut cprime_trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch)?;
        let c_lr = cprime_lr(classifier_cfg, &schedule, epoch)?;
        let perm_x = rng.permutation(n);
        let perm_y = rng.permutation(m);
        archive.clear();
        let mut c_loss = 0.0;
        for it in 1..=iterations {
            let primary = Quad {
                i: perm_x[wrap_index(it, n) - 1],
                l: rng.below(n),
                j: perm_y[wrap_index(it, m) - 1],
                k: rng.below(m),
            };
            let mut quads = vec![primary];
            for _ in 1..cfg.batch_size {
                quads.push(draw_random(rng, n, m));
            }
            let batch = make_batch(&xs, &ys, &quads)?;
            let cond = Conditioning::measure(bundle.aux(), &batch, bundle.normalize, &clamps)?;

            let generated = generate_all(&bundle, &batch, &cond)?;
            degenerate += count_degenerate(&bundle, &batch, &cond, &generated)?;
            let p = &quads[0];
            for mapping in Mapping::ALL {
                let (source_idx, target_idx) = match mapping {
                    Mapping::X2Y => (p.i, p.j),
                    Mapping::Y2X => (p.j, p.i),
                    Mapping::X2X => (p.i, p.l),
                    Mapping::Y2Y => (p.j, p.k),
                };
                archive.push(ArchiveEntry {
                    kind: mapping,
                    source_idx: source_idx + 1,
                    target_idx: target_idx + 1,
                    conditioning: cond.forward(mapping)[0],
                    features: generated[mapping.index()].row(0).to_vec(),
                })?;
            }

            let report = gan::train_step(&mut bundle, &mut opt, &batch, &cond, lr, step)?;
            loss_trace.push(report);
            step += 1;

            if cfg.cprime_mode == CPrimeMode::PerIteration {
                let mut real = Vec::with_capacity(2 * quads.len());
                let mut fake = Vec::with_capacity(4 * quads.len());
                for r in 0..quads.len() {
                    real.push(Sample::new(batch.x_src.row(r).to_vec(), Label::X));
                    real.push(Sample::new(batch.y_src.row(r).to_vec(), Label::Y));
                    for mapping in Mapping::ALL {
                        fake.push(Sample::new(generated[mapping.index()].row(r).to_vec(), mapping.target()));
                    }
                }
                c_loss += equal_weight_hinge_update(&mut c_prime, &mut c_opt, &real, &fake, c_lr, classifier_cfg.l2)?;
            }
        }
        cprime_trace.push(c_loss / iterations as f64);
        if let Some(last) = loss_trace.last() {
            info!(
                "epoch {}/{}: obj_ver {:.4} obj_hor {:.4} inter_cyc {:.4} intra_cyc {:.4}",
                epoch + 1,
                cfg.epochs,
                last.obj_ver,
                last.obj_hor,
                last.inter_cyc,
                last.intra_cyc
            );
        }
    }

    if cfg.cprime_mode == CPrimeMode::PostHoc {
        let mut union = train.clone();
        for s in archive.to_dataset()?.samples() {
            union.push(s.clone())?;
        }
        cprime_trace = fit(&mut c_prime, &union, classifier_cfg, &mut rng.split())?;
    }

    Ok(RunOutput {
        classifier,
        bundle,
        c_prime,
        archive,
        report: RunReport {
            iterations_per_epoch: iterations,
            total_iterations: iterations * cfg.epochs,
            clamp_events: clamps.get(),
            degenerate_samples: degenerate,
            classifier_trace,
            loss_trace,
            cprime_trace,
            wrap_note: WRAP_NOTE,
        },
    })
}

/// Forward outputs of all four generators on the batch, by mapping.
fn generate_all(bundle: &GanBundle, batch: &QuadBatch, cond: &Conditioning) -> Result<Vec<Tensor>> {
    Mapping::ALL
        .iter()
        .map(|&m| bundle.generator(m).generate_batch(batch.source(m), &cond.forward(m)))
        .collect()
}

/// Counts primary samples whose generator ignores its input: feeding
/// the co-sample with the same conditioning yields the same output.
fn count_degenerate(bundle: &GanBundle, batch: &QuadBatch, cond: &Conditioning, generated: &[Tensor]) -> Result<u64> {
    let mut count = 0;
    for m in Mapping::ALL {
        let (src, other) = match m.source() {
            Label::X => (batch.x_src.row(0), batch.x_co.row(0)),
            Label::Y => (batch.y_src.row(0), batch.y_co.row(0)),
        };
        if src == other {
            continue;
        }
        let alt = bundle.generator(m).generate(other, cond.forward(m)[0])?;
        let out = generated[m.index()].row(0);
        let spread = out.iter().zip(&alt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if spread < 1e-12 {
            count += 1;
        }
    }
    Ok(count)
}

/// Label-preserving Gaussian jitter: `copies` noisy duplicates of every
/// sample, appended after the originals.
pub fn traditional_augmentation(data: &Dataset, copies: usize, sigma: f64, rng: &mut Rng) -> Result<Dataset> {
    let mut out = data.clone();
    for _ in 0..copies {
        for s in data.samples() {
            let features = s.features.iter().map(|v| v + sigma * rng.normal()).collect();
            out.push(Sample::new(features, s.label))?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_index(4, 3), 1);
        assert_eq!(wrap_index(3, 3), 3);
        assert_eq!(wrap_index(7, 5), 2);
        assert_eq!(wrap_index(1, 1), 1);
    }

    #[test]
    fn archive_csv_round_trip() {
        let mut a = AugmentationArchive::new(2);
        a.push(ArchiveEntry {
            kind: Mapping::Y2X,
            source_idx: 3,
            target_idx: 1,
            conditioning: -0.25,
            features: vec![0.1, -1.0 / 3.0],
        })
        .unwrap();
        let text = a.to_csv();
        assert!(text.starts_with("kind,source_idx,target_idx,conditioning,f1,f2,label\n"));
        assert_eq!(AugmentationArchive::from_csv(&text).unwrap(), a);
        let bad = text.replace(",-1\n", ",1\n");
        assert!(AugmentationArchive::from_csv(&bad).is_err());
    }

    fn sample(v: f64, l: Label) -> Sample {
        Sample::new(vec![v], l)
    }

    #[test]
    fn equal_weighting() {
        let cfg = ClassifierConfig::default();
        let net = ClassifierNet::linear(&[0.5], 0.0).unwrap();
        let real = [sample(1.0, Label::Y), sample(-4.0, Label::X)];
        // scores 0.5 and -2: hinge 0.5 and 0
        let mut a = net.clone();
        let la = equal_weight_hinge_update(&mut a, &mut cfg.adam(), &real, &[], 0.1, 0.0).unwrap();
        let mut b = net.clone();
        let mut opt = cfg.adam();
        let x = Tensor::from_rows(&[[1.0], [-4.0]]).unwrap();
        let lb = b.hinge_step(&mut opt, &x, &[1.0, -1.0], 0.1, 0.0).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
        assert_eq!(la, 0.25);

        let mut c = net.clone();
        let dup = [sample(1.0, Label::Y)];
        let lc = equal_weight_hinge_update(&mut c, &mut cfg.adam(), &real, &dup, 0.1, 0.0).unwrap();
        assert!((lc - 1.0 / 3.0).abs() < 1e-15);

        let mut d = net;
        let gen = [sample(3.0, Label::X), sample(-1.0, Label::Y)];
        // scores 1.5 (c = -1) -> 2.5, -0.5 (c = +1) -> 1.5
        let ld = equal_weight_hinge_update(&mut d, &mut cfg.adam(), &real, &gen, 0.1, 0.0).unwrap();
        assert!((ld - (0.5 + 0.0 + 2.5 + 1.5) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn traditional_augmentation_keeps_labels() {
        let data = Dataset::from_domains(vec![vec![0.0, 0.0]], vec![vec![1.0, 1.0]]).unwrap();
        let aug = traditional_augmentation(&data, 3, 0.1, &mut Rng::new(1)).unwrap();
        assert_eq!(aug.len(), 8);
        assert_eq!(aug.count(Label::X), 4);
        assert_eq!(&aug.samples()[..2], data.samples());
    }
}
