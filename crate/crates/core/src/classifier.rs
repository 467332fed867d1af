//! Hinge-loss binary classifier and its frozen auxiliary copy.
//!
//! The classifier is a feature extractor followed by one linear output
//! unit. The frozen copy defines the decision hyperplane
//! `w · features(z) + b = 0` and the penultimate feature space that all
//! hyperplane distances are measured in.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diff::{AdamState, Bound, LrSchedule, Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierArch {
    /// Features are the raw input; the score is `w · z + b`.
    Linear,
    /// `D -> hidden (tanh) -> penultimate (tanh) -> 1`.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub arch: ClassifierArch,
    pub hidden: usize,
    pub penultimate: usize,
    pub epochs: usize,
    pub warm_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// L2 penalty on the output weights; zero leaves the hinge loss as is.
    pub l2: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            arch: ClassifierArch::Mlp,
            hidden: 16,
            penultimate: 8,
            epochs: 50,
            warm_epochs: 25,
            lr: 1e-2,
            batch_size: 16,
            beta1: 0.5,
            beta2: 0.999,
            l2: 0.0,
        }
    }
}

impl ClassifierConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base_lr: self.lr,
            total_epochs: self.epochs,
            warm_epochs: self.warm_epochs,
        }
    }

    pub fn adam(&self) -> ClassifierOptimizer {
        ClassifierOptimizer {
            extractor: AdamState::new(self.beta1, self.beta2, 1e-8, self.lr),
            head: AdamState::new(self.beta1, self.beta2, 1e-8, self.lr),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierNet {
    pub extractor: Mlp,
    /// `[m] -> 1` linear layer holding `w` (`l0.w`, shape `[m, 1]`) and `b`.
    pub head: Mlp,
}

/// Tape handles of a bound [`ClassifierNet`].
#[derive(Debug, Clone)]
pub struct ClassifierVars {
    pub extractor: Bound,
    pub head: Bound,
}

#[derive(Debug, Clone)]
pub struct ClassifierOptimizer {
    pub extractor: AdamState,
    pub head: AdamState,
}

impl ClassifierNet {
    pub fn new(dim: usize, cfg: &ClassifierConfig, rng: &mut Rng) -> Self {
        let extractor = match cfg.arch {
            ClassifierArch::Linear => Mlp::new(&[dim], Activation::Tanh, Activation::Identity, rng),
            ClassifierArch::Mlp => Mlp::new(
                &[dim, cfg.hidden, cfg.penultimate],
                Activation::Tanh,
                Activation::Tanh,
                rng,
            ),
        };
        let m = extractor.out_dim();
        let head = Mlp::new(&[m, 1], Activation::Identity, Activation::Identity, rng);
        Self { extractor, head }
    }

    /// A linear classifier with the given weights, for exact-geometry work.
    pub fn linear(w: &[f64], b: f64) -> Result<Self> {
        let mut rng = Rng::new(0);
        let mut net = Self::new(
            w.len(),
            &ClassifierConfig {
                arch: ClassifierArch::Linear,
                ..Default::default()
            },
            &mut rng,
        );
        net.head.params.get_mut("l0.w")?.tensor = Tensor::column(w.to_vec())?;
        net.head.params.get_mut("l0.b")?.tensor = Tensor::scalar(b);
        Ok(net)
    }

    pub fn dim(&self) -> usize {
        self.extractor.in_dim()
    }

    pub fn penultimate_dim(&self) -> usize {
        self.extractor.out_dim()
    }

    pub fn bind(&self, tape: &mut Tape) -> ClassifierVars {
        ClassifierVars {
            extractor: self.extractor.params.bind(tape),
            head: self.head.params.bind(tape),
        }
    }

    pub fn bind_const(&self, tape: &mut Tape) -> ClassifierVars {
        ClassifierVars {
            extractor: self.extractor.params.bind_const(tape),
            head: self.head.params.bind_const(tape),
        }
    }

    /// Returns `(features [n, m], scores [n, 1])`.
    pub fn forward(&self, tape: &mut Tape, vars: &ClassifierVars, x: Var) -> Result<(Var, Var)> {
        let cols = tape.shape(x).get(1).copied().unwrap_or(0);
        if cols != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: cols,
            });
        }
        let feats = self.extractor.forward(tape, &vars.extractor, x)?;
        let score = self.head.forward(tape, &vars.head, feats)?;
        Ok((feats, score))
    }

    pub fn scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind_const(&mut tape);
        let xv = tape.constant(x.clone());
        let (_, s) = self.forward(&mut tape, &vars, xv)?;
        Ok(tape.value(s).values().to_vec())
    }

    pub fn weights(&self) -> &[f64] {
        self.head.params.tensor("l0.w").expect("head weight").values()
    }

    pub fn bias(&self) -> f64 {
        self.head.params.tensor("l0.b").expect("head bias").item()
    }

    fn optimise(&mut self, opt: &mut ClassifierOptimizer, vars: &ClassifierVars, tape: &Tape, loss: Var, lr: f64) -> Result<()> {
        let grads = tape.backward(loss)?;
        self.extractor.params.absorb_grads(&vars.extractor, &grads)?;
        self.head.params.absorb_grads(&vars.head, &grads)?;
        opt.extractor.step(&mut self.extractor.params, lr)?;
        opt.head.step(&mut self.head.params, lr)?;
        Ok(())
    }

    /// One Adam step on the hinge loss of `(x, labels)`; returns the
    /// loss before the update.
    pub fn hinge_step(
        &mut self,
        opt: &mut ClassifierOptimizer,
        x: &Tensor,
        labels: &[f64],
        lr: f64,
        l2: f64,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let (_, s) = self.forward(&mut tape, &vars, xv)?;
        let mut loss = hinge_loss_on_tape(&mut tape, s, labels)?;
        if l2 > 0.0 {
            let w = vars.head.get("l0.w")?;
            let w2 = tape.square(w);
            let w2 = tape.sum_last_axis(w2)?;
            let w2 = tape.mean_all(w2);
            let m = tape.value(w).len() as f64;
            let pen = tape.scale(w2, l2 * m);
            loss = tape.add(loss, pen)?;
        }
        let value = tape.value(loss).item();
        self.optimise(opt, &vars, &tape, loss, lr)?;
        Ok(value)
    }
}

/// `(1/N) Σ max(0, 1 - c_i s_i)`.
pub fn hinge_loss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyBatch("hinge_loss"));
    }
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            op: "hinge_loss",
            left: scores.len(),
            right: labels.len(),
        });
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(s, c)| (1.0 - c * s).max(0.0))
        .sum();
    Ok(total / scores.len() as f64)
}

/// Differentiable hinge loss over a `[n, 1]` score column.
pub fn hinge_loss_on_tape(tape: &mut Tape, scores: Var, labels: &[f64]) -> Result<Var> {
    let n = tape.value(scores).len();
    if n == 0 || labels.is_empty() {
        return Err(Error::EmptyBatch("hinge_loss"));
    }
    if n != labels.len() {
        return Err(Error::LengthMismatch {
            op: "hinge_loss",
            left: n,
            right: labels.len(),
        });
    }
    let c = tape.constant(Tensor::new(tape.shape(scores).to_vec(), labels.to_vec())?);
    let ones = tape.constant(Tensor::new(tape.shape(scores).to_vec(), vec![1.0; n])?);
    let margin = tape.mul(c, scores)?;
    let slack = tape.sub(ones, margin)?;
    let slack = tape.relu(slack);
    Ok(tape.mean_all(slack))
}

/// A trained classifier plus its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub net: ClassifierNet,
    pub loss_trace: Vec<f64>,
}

/// Minibatch Adam on the hinge loss under the warm-then-decay schedule.
pub fn train_classifier(data: &Dataset, cfg: &ClassifierConfig, rng: &mut Rng) -> Result<TrainedClassifier> {
    if !data.has_both_labels() {
        return Err(Error::SingleDomain);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let mut net = ClassifierNet::new(data.dim(), cfg, rng);
    let loss_trace = fit(&mut net, data, cfg, rng)?;
    Ok(TrainedClassifier { net, loss_trace })
}

/// Continues training an existing network; used for warm starts.
pub fn fit(net: &mut ClassifierNet, data: &Dataset, cfg: &ClassifierConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    if !data.has_both_labels() {
        return Err(Error::SingleDomain);
    }
    let schedule = cfg.schedule();
    let mut opt = cfg.adam();
    let samples = data.samples();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr(epoch)?;
        let order = rng.permutation(samples.len());
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| samples[i].features.as_slice()).collect();
            let labels: Vec<f64> = chunk.iter().map(|&i| samples[i].label.value()).collect();
            let x = Tensor::from_rows(&rows)?;
            sum += net.hinge_step(&mut opt, &x, &labels, lr, cfg.l2)?;
            batches += 1;
        }
        trace.push(sum / batches as f64);
    }
    Ok(trace)
}

/// Frozen copy of a trained classifier. Nothing can mutate it: the
/// network is private and every parameter is marked frozen, so binding
/// it on a tape only ever produces constants.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryClassifier {
    net: ClassifierNet,
    w_norm: f64,
}

pub fn freeze(net: &ClassifierNet) -> AuxiliaryClassifier {
    let mut net = net.clone();
    net.extractor.params.freeze_all();
    net.head.params.freeze_all();
    let w_norm = net.weights().iter().map(|w| w * w).sum::<f64>().sqrt();
    AuxiliaryClassifier { net, w_norm }
}

impl AuxiliaryClassifier {
    pub fn net(&self) -> &ClassifierNet {
        &self.net
    }

    pub fn dim(&self) -> usize {
        self.net.dim()
    }

    pub fn penultimate_dim(&self) -> usize {
        self.net.penultimate_dim()
    }

    pub fn weights(&self) -> &[f64] {
        self.net.weights()
    }

    pub fn bias(&self) -> f64 {
        self.net.bias()
    }

    /// Euclidean norm of the output weights.
    pub fn weight_norm(&self) -> f64 {
        self.w_norm
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(())
    }

    /// Penultimate features of one sample.
    pub fn features(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z)?;
        let x = Tensor::matrix(1, z.len(), z.to_vec())?;
        Ok(self.net.extractor.eval(&x)?.into_values())
    }

    /// `w · features(z) + b`.
    pub fn score(&self, z: &[f64]) -> Result<f64> {
        let f = self.features(z)?;
        Ok(self.score_from_features(&f))
    }

    pub fn score_from_features(&self, features: &[f64]) -> f64 {
        let w = self.weights();
        features.iter().zip(w).map(|(f, w)| f * w).sum::<f64>() + self.bias()
    }

    pub fn scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.net.scores(x)
    }

    /// Features and scores of `x` on `tape`. Gradients pass through to
    /// `x` but never into the classifier.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let vars = self.net.bind_const(tape);
        self.net.forward(tape, &vars, x)
    }
}
