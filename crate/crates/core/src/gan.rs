//! Distance-conditioned generators, least-squares discriminators and
//! the inter-domain (vertical) and intra-domain (horizontal) objectives.
//!
//! One minibatch is a set of quadruples `(x_i, x_l, y_j, y_k)`. From
//! them the four generators produce
//!
//! | mapping | input               | conditioning        | label |
//! |---------|---------------------|---------------------|-------|
//! | X2Y     | `x_i`               | `+d_v(y_j)`         | +1    |
//! | Y2X     | `y_j`               | `-d_v(x_i)`         | -1    |
//! | X2X     | `x_i`               | `-d_h(x_i, x_l)`    | -1    |
//! | Y2Y     | `y_j`               | `-d_h(y_j, y_k)`    | +1    |
//!
//! and the inverse passes reuse the source's own distance with the
//! opposite sign. Conditioning targets are constants; distances measured
//! on generated samples are differentiated through the generators only.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::AuxiliaryClassifier;
use crate::data::Label;
use crate::diff::{AdamState, Bound, ParamSet, Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{self, ClampCounter, TapeDistances};
use crate::nn::{Activation, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mapping {
    X2Y,
    Y2X,
    X2X,
    Y2Y,
}

impl Mapping {
    pub const ALL: [Mapping; 4] = [Mapping::X2Y, Mapping::Y2X, Mapping::X2X, Mapping::Y2Y];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn source(self) -> Label {
        match self {
            Mapping::X2Y | Mapping::X2X => Label::X,
            Mapping::Y2X | Mapping::Y2Y => Label::Y,
        }
    }

    /// Domain of the generated sample, which is also its label.
    pub fn target(self) -> Label {
        match self {
            Mapping::X2Y | Mapping::Y2Y => Label::Y,
            Mapping::Y2X | Mapping::X2X => Label::X,
        }
    }

    pub fn is_inter(self) -> bool {
        matches!(self, Mapping::X2Y | Mapping::Y2X)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mapping::X2Y => "X2Y",
            Mapping::Y2X => "Y2X",
            Mapping::X2X => "X2X",
            Mapping::Y2Y => "Y2Y",
        }
    }
}

impl fmt::Display for Mapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mapping::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("unknown mapping `{s}`"),
            })
    }
}

/// Maps a sample and a signed distance to a new sample of the same
/// dimension. Besides the trainable network, a few fixed maps exist as
/// baselines: they have no parameters and ignore the optimiser.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// `(D + 1) -> hidden... -> D` with tanh hidden units.
    Network(Mlp),
    /// `G(z, s) = z`.
    Identity { dim: usize },
    /// `G(z, s) = z + s` on every coordinate.
    Shift { dim: usize },
    /// Always returns `point`.
    Constant { point: Vec<f64> },
}

impl Generator {
    pub fn network(dim: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut dims = vec![dim + 1];
        dims.extend_from_slice(hidden);
        dims.push(dim);
        Generator::Network(Mlp::new(&dims, Activation::Tanh, Activation::Identity, rng))
    }

    pub fn dim(&self) -> usize {
        match self {
            Generator::Network(m) => m.out_dim(),
            Generator::Identity { dim } | Generator::Shift { dim } => *dim,
            Generator::Constant { point } => point.len(),
        }
    }

    pub fn params(&self) -> Option<&ParamSet> {
        match self {
            Generator::Network(m) => Some(&m.params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut ParamSet> {
        match self {
            Generator::Network(m) => Some(&mut m.params),
            _ => None,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        match (self, trainable) {
            (Generator::Network(m), true) => m.params.bind(tape),
            (Generator::Network(m), false) => m.params.bind_const(tape),
            _ => Bound::default(),
        }
    }

    /// `z` is `[n, D]`, `cond` is `[n, 1]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, z: Var, cond: Var) -> Result<Var> {
        let d = tape.shape(z)[1];
        if d != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: d,
            });
        }
        match self {
            Generator::Network(m) => {
                let input = tape.concat_last_axis(z, cond)?;
                m.forward(tape, bound, input)
            }
            Generator::Identity { .. } => Ok(z),
            Generator::Shift { dim } => {
                let ones = tape.constant(Tensor::matrix(1, *dim, vec![1.0; *dim])?);
                let spread = tape.matmul(cond, ones)?;
                tape.add(z, spread)
            }
            Generator::Constant { point } => {
                let n = tape.shape(z)[0];
                let values = point.iter().copied().cycle().take(n * point.len()).collect();
                Ok(tape.constant(Tensor::matrix(n, point.len(), values)?))
            }
        }
    }

    /// Generates one sample outside any training graph.
    pub fn generate(&self, z: &[f64], cond: f64) -> Result<Vec<f64>> {
        let out = self.generate_batch(&Tensor::matrix(1, z.len(), z.to_vec())?, &[cond])?;
        Ok(out.into_values())
    }

    pub fn generate_batch(&self, z: &Tensor, cond: &[f64]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let cv = tape.constant(Tensor::column(cond.to_vec())?);
        let out = self.forward(&mut tape, &bound, zv, cv)?;
        Ok(tape.value(out).clone())
    }
}

/// `D -> hidden... -> 1` with an unsquashed output.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator(pub Mlp);

impl Discriminator {
    pub fn new(dim: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut dims = vec![dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Discriminator(Mlp::new(&dims, Activation::Tanh, Activation::Identity, rng))
    }

    pub fn score(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.0.eval(x)?.into_values())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub ver_dis: f64,
    pub hor_dis: f64,
    pub inter_cyc: f64,
    pub intra_cyc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ver_dis: 0.1,
            hor_dis: 0.001,
            inter_cyc: 10.0,
            intra_cyc: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.01..=0.1).contains(&self.ver_dis) {
            problems.push(format!("lambda_ver_dis {} outside [0.01, 0.1]", self.ver_dis));
        }
        if !(0.001..=0.01).contains(&self.hor_dis) {
            problems.push(format!("lambda_hor_dis {} outside [0.001, 0.01]", self.hor_dis));
        }
        if self.hor_dis > self.ver_dis {
            problems.push(format!(
                "lambda_hor_dis {} exceeds lambda_ver_dis {}",
                self.hor_dis, self.ver_dis
            ));
        }
        for (name, v) in [("lambda_inter_cyc", self.inter_cyc), ("lambda_intra_cyc", self.intra_cyc)] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be positive, got {v}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub lambda_ver_dis: f64,
    pub lambda_hor_dis: f64,
    pub lambda_inter_cyc: f64,
    pub lambda_intra_cyc: f64,
    pub normalize_vertical: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            generator_hidden: vec![32, 32],
            discriminator_hidden: vec![32],
            lambda_ver_dis: w.ver_dis,
            lambda_hor_dis: w.hor_dis,
            lambda_inter_cyc: w.inter_cyc,
            lambda_intra_cyc: w.intra_cyc,
            normalize_vertical: false,
        }
    }
}

impl GanConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            ver_dis: self.lambda_ver_dis,
            hor_dis: self.lambda_hor_dis,
            inter_cyc: self.lambda_inter_cyc,
            intra_cyc: self.lambda_intra_cyc,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GanBundle {
    /// Indexed by [`Mapping::index`].
    pub generators: [Generator; 4],
    pub discriminators: [Discriminator; 4],
    pub weights: LossWeights,
    pub normalize: bool,
    aux: Arc<AuxiliaryClassifier>,
}

impl GanBundle {
    pub fn new(aux: Arc<AuxiliaryClassifier>, cfg: &GanConfig, rng: &mut Rng) -> Result<Self> {
        let weights = cfg.weights();
        weights.validate()?;
        let d = aux.dim();
        let generators = std::array::from_fn(|_| Generator::network(d, &cfg.generator_hidden, rng));
        let discriminators = std::array::from_fn(|_| Discriminator::new(d, &cfg.discriminator_hidden, rng));
        Ok(Self {
            generators,
            discriminators,
            weights,
            normalize: cfg.normalize_vertical,
            aux,
        })
    }

    /// Assembles a bundle from parts without checking the weight ranges.
    pub fn from_parts(
        aux: Arc<AuxiliaryClassifier>,
        generators: [Generator; 4],
        discriminators: [Discriminator; 4],
        weights: LossWeights,
        normalize: bool,
    ) -> Result<Self> {
        let d = aux.dim();
        for g in &generators {
            if g.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: g.dim() });
            }
        }
        for disc in &discriminators {
            if disc.0.in_dim() != d || disc.0.out_dim() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: disc.0.in_dim(),
                });
            }
        }
        Ok(Self {
            generators,
            discriminators,
            weights,
            normalize,
            aux,
        })
    }

    pub fn aux(&self) -> &AuxiliaryClassifier {
        &self.aux
    }

    pub fn aux_arc(&self) -> Arc<AuxiliaryClassifier> {
        Arc::clone(&self.aux)
    }

    pub fn dim(&self) -> usize {
        self.aux.dim()
    }

    pub fn generator(&self, m: Mapping) -> &Generator {
        &self.generators[m.index()]
    }

    pub fn discriminator(&self, m: Mapping) -> &Discriminator {
        &self.discriminators[m.index()]
    }

    /// Replaces all four generators with the same fixed map.
    pub fn with_generators(mut self, g: Generator) -> Self {
        self.generators = std::array::from_fn(|_| g.clone());
        self
    }
}

/// A minibatch of quadruples `(x_i, x_l, y_j, y_k)`, each `[n, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadBatch {
    pub x_src: Tensor,
    pub x_co: Tensor,
    pub y_src: Tensor,
    pub y_co: Tensor,
}

impl QuadBatch {
    pub fn new(x_src: Tensor, x_co: Tensor, y_src: Tensor, y_co: Tensor) -> Result<Self> {
        let shape = x_src.shape().to_vec();
        for t in [&x_co, &y_src, &y_co] {
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "QuadBatch",
                    left: shape,
                    right: t.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            x_src,
            x_co,
            y_src,
            y_co,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(x_src: &[R], x_co: &[R], y_src: &[R], y_co: &[R]) -> Result<Self> {
        Self::new(
            Tensor::from_rows(x_src)?,
            Tensor::from_rows(x_co)?,
            Tensor::from_rows(y_src)?,
            Tensor::from_rows(y_co)?,
        )
    }

    pub fn len(&self) -> usize {
        self.x_src.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Generator input for `m`.
    pub fn source(&self, m: Mapping) -> &Tensor {
        match m.source() {
            Label::X => &self.x_src,
            Label::Y => &self.y_src,
        }
    }

    /// Real samples the discriminator of `m` compares against.
    pub fn real(&self, m: Mapping) -> &Tensor {
        match m {
            Mapping::X2Y => &self.y_src,
            Mapping::Y2X => &self.x_src,
            Mapping::X2X => &self.x_co,
            Mapping::Y2Y => &self.y_co,
        }
    }
}

/// Distance magnitudes measured by the frozen classifier, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    /// `d_v(x_i)`
    pub dv_x: Vec<f64>,
    /// `d_v(y_j)`
    pub dv_y: Vec<f64>,
    /// `d_h(x_i, x_l)`
    pub dh_x: Vec<f64>,
    /// `d_h(y_j, y_k)`
    pub dh_y: Vec<f64>,
}

impl Conditioning {
    pub fn measure(aux: &AuxiliaryClassifier, batch: &QuadBatch, normalize: bool, clamps: &ClampCounter) -> Result<Self> {
        let n = batch.len();
        let mut c = Conditioning {
            dv_x: Vec::with_capacity(n),
            dv_y: Vec::with_capacity(n),
            dh_x: Vec::with_capacity(n),
            dh_y: Vec::with_capacity(n),
        };
        let xf = aux.net().extractor.eval(&batch.x_src)?;
        let lf = aux.net().extractor.eval(&batch.x_co)?;
        let yf = aux.net().extractor.eval(&batch.y_src)?;
        let kf = aux.net().extractor.eval(&batch.y_co)?;
        for i in 0..n {
            let parts = |f: &Tensor| {
                let row = f.row(i).to_vec();
                let s = aux.score_from_features(&row);
                (row, s)
            };
            let (x, sx) = parts(&xf);
            let (l, sl) = parts(&lf);
            let (y, sy) = parts(&yf);
            let (k, sk) = parts(&kf);
            c.dv_x.push(geometry::vertical_from_score(aux, sx, normalize));
            c.dv_y.push(geometry::vertical_from_score(aux, sy, normalize));
            let hx = geometry::horizontal_from_parts(aux, (&x, sx), (&l, sl), normalize);
            let hy = geometry::horizontal_from_parts(aux, (&y, sy), (&k, sk), normalize);
            c.dh_x.push(clamps.record(hx).distance);
            c.dh_y.push(clamps.record(hy).distance);
        }
        Ok(c)
    }

    /// Forward-pass conditioning scalar for `m`.
    pub fn forward(&self, m: Mapping) -> Vec<f64> {
        match m {
            Mapping::X2Y => self.dv_y.clone(),
            Mapping::Y2X => self.dv_x.iter().map(|d| -d).collect(),
            Mapping::X2X => self.dh_x.iter().map(|d| -d).collect(),
            Mapping::Y2Y => self.dh_y.iter().map(|d| -d).collect(),
        }
    }

    /// Inverse-pass conditioning that maps the output of `m` back to its
    /// source: the source's own vertical distance for inter-domain
    /// mappings, the positive horizontal distance for intra-domain ones.
    pub fn inverse(&self, m: Mapping) -> Vec<f64> {
        match m {
            Mapping::X2Y => self.dv_x.iter().map(|d| -d).collect(),
            Mapping::Y2X => self.dv_y.clone(),
            Mapping::X2X => self.dh_x.clone(),
            Mapping::Y2Y => self.dh_y.clone(),
        }
    }

    /// Target distance magnitude that the output of `m` should show.
    pub fn target(&self, m: Mapping) -> &[f64] {
        match m {
            Mapping::X2Y => &self.dv_y,
            Mapping::Y2X => &self.dv_x,
            Mapping::X2X => &self.dh_x,
            Mapping::Y2Y => &self.dh_y,
        }
    }
}

/// Generator whose output is fed back for the cycle of `m`.
fn inverse_generator(m: Mapping) -> Mapping {
    match m {
        Mapping::X2Y => Mapping::Y2X,
        Mapping::Y2X => Mapping::X2Y,
        other => other,
    }
}

/// A loss summed over its X-source and Y-source branches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Branches {
    pub x: f64,
    pub y: f64,
}

impl Branches {
    pub fn total(&self) -> f64 {
        self.x + self.y
    }
}

/// Every loss term at one set of parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    /// Discriminator LSGAN losses, by mapping.
    pub disc: [f64; 4],
    /// Generator LSGAN losses, by mapping.
    pub gen: [f64; 4],
    pub ver_dis: f64,
    pub hor_dis: f64,
    pub inter_cyc: f64,
    pub intra_cyc: f64,
    pub obj_ver: f64,
    pub obj_hor: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,disc_x2y,disc_y2x,disc_x2x,disc_y2y,gen_x2y,gen_y2x,gen_x2x,gen_y2y,ver_dis,hor_dis,inter_cyc,intra_cyc,obj_ver,obj_hor";

    pub fn csv_row(&self) -> String {
        let mut fields = vec![self.step.to_string()];
        fields.extend(self.disc.iter().chain(&self.gen).map(|v| v.to_string()));
        fields.extend(
            [
                self.ver_dis,
                self.hor_dis,
                self.inter_cyc,
                self.intra_cyc,
                self.obj_ver,
                self.obj_hor,
            ]
            .iter()
            .map(|v| v.to_string()),
        );
        fields.join(",")
    }

    pub fn is_finite(&self) -> bool {
        self.disc
            .iter()
            .chain(&self.gen)
            .chain(&[
                self.ver_dis,
                self.hor_dis,
                self.inter_cyc,
                self.intra_cyc,
                self.obj_ver,
                self.obj_hor,
            ])
            .all(|v| v.is_finite())
    }
}

/// `gan_a + gan_b + λ_dist · dist + λ_cyc · cyc`.
pub fn combine_objective(gan_a: f64, gan_b: f64, dist: f64, cyc: f64, lambda_dist: f64, lambda_cyc: f64) -> f64 {
    gan_a + gan_b + lambda_dist * dist + lambda_cyc * cyc
}

/// Tape handles of the generator phase.
struct GenTerms {
    gen: [Var; 4],
    ver_dis: [Var; 2],
    hor_dis: [Var; 2],
    inter_cyc: [Var; 2],
    intra_cyc: [Var; 2],
}

struct Graph {
    fakes: [Var; 4],
    sources: [Var; 4],
}

fn column(tape: &mut Tape, values: Vec<f64>) -> Result<Var> {
    Ok(tape.constant(Tensor::column(values)?))
}

fn build_fakes(tape: &mut Tape, bundle: &GanBundle, gbind: &[Bound; 4], batch: &QuadBatch, cond: &Conditioning) -> Result<Graph> {
    if batch.is_empty() || cond.dv_x.len() != batch.len() {
        return Err(Error::LengthMismatch {
            op: "conditioning",
            left: batch.len(),
            right: cond.dv_x.len(),
        });
    }
    let mut fakes = Vec::with_capacity(4);
    let mut sources = Vec::with_capacity(4);
    for m in Mapping::ALL {
        let src = tape.constant(batch.source(m).clone());
        let c = column(tape, cond.forward(m))?;
        fakes.push(bundle.generator(m).forward(tape, &gbind[m.index()], src, c)?);
        sources.push(src);
    }
    Ok(Graph {
        fakes: fakes.try_into().expect("four"),
        sources: sources.try_into().expect("four"),
    })
}

/// `mean((D(x) - target)²)`
fn ls_term(tape: &mut Tape, disc: &Discriminator, dbind: &Bound, x: Var, target: f64) -> Result<Var> {
    let out = disc.0.forward(tape, dbind, x)?;
    let n = tape.value(out).len();
    let t = tape.constant(Tensor::new(tape.shape(out).to_vec(), vec![target; n])?);
    let diff = tape.sub(out, t)?;
    let sq = tape.square(diff);
    Ok(tape.mean_all(sq))
}

/// `mean(sum_d |a - b|)`, the batch mean of per-sample L1 norms.
fn l1_term(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let abs = tape.abs_elem(diff);
    let rows = tape.sum_last_axis(abs)?;
    Ok(tape.mean_all(rows))
}

/// `mean((target - achieved)²)`
fn sq_error(tape: &mut Tape, target: &[f64], achieved: Var) -> Result<Var> {
    let t = column(tape, target.to_vec())?;
    let diff = tape.sub(t, achieved)?;
    let sq = tape.square(diff);
    Ok(tape.mean_all(sq))
}

fn build_disc_terms(
    tape: &mut Tape,
    bundle: &GanBundle,
    dbind: &[Bound; 4],
    graph: &Graph,
    batch: &QuadBatch,
) -> Result<[Var; 4]> {
    let mut out = Vec::with_capacity(4);
    for m in Mapping::ALL {
        let d = bundle.discriminator(m);
        let real = tape.constant(batch.real(m).clone());
        let real_term = ls_term(tape, d, &dbind[m.index()], real, 1.0)?;
        let fake_term = ls_term(tape, d, &dbind[m.index()], graph.fakes[m.index()], 0.0)?;
        out.push(tape.add(real_term, fake_term)?);
    }
    Ok(out.try_into().expect("four"))
}

fn build_gen_terms(
    tape: &mut Tape,
    bundle: &GanBundle,
    gbind: &[Bound; 4],
    dbind: &[Bound; 4],
    graph: &Graph,
    cond: &Conditioning,
) -> Result<GenTerms> {
    let aux = bundle.aux();
    let norm = bundle.normalize;

    let mut gen = Vec::with_capacity(4);
    for m in Mapping::ALL {
        gen.push(ls_term(tape, bundle.discriminator(m), &dbind[m.index()], graph.fakes[m.index()], 1.0)?);
    }

    let mut ver = Vec::with_capacity(2);
    for m in [Mapping::X2Y, Mapping::Y2X] {
        let dist = geometry::distances_on_tape(tape, aux, graph.fakes[m.index()], norm)?;
        let achieved = tape.abs_elem(dist.vertical);
        ver.push(sq_error(tape, cond.target(m), achieved)?);
    }

    let mut hor = Vec::with_capacity(2);
    for m in [Mapping::X2X, Mapping::Y2Y] {
        let src: TapeDistances = geometry::distances_on_tape(tape, aux, graph.sources[m.index()], norm)?;
        let out = geometry::distances_on_tape(tape, aux, graph.fakes[m.index()], norm)?;
        let achieved = geometry::horizontal_on_tape(tape, &src, &out)?;
        hor.push(sq_error(tape, cond.target(m), achieved)?);
    }

    let mut cycles = Vec::with_capacity(4);
    for m in Mapping::ALL {
        let inv = inverse_generator(m);
        let c = column(tape, cond.inverse(m))?;
        let back = bundle.generator(inv).forward(tape, &gbind[inv.index()], graph.fakes[m.index()], c)?;
        cycles.push(l1_term(tape, graph.sources[m.index()], back)?);
    }

    Ok(GenTerms {
        gen: gen.try_into().expect("four"),
        ver_dis: ver.try_into().expect("two"),
        hor_dis: hor.try_into().expect("two"),
        inter_cyc: [cycles[0], cycles[1]],
        intra_cyc: [cycles[2], cycles[3]],
    })
}

fn val(tape: &Tape, v: Var) -> f64 {
    tape.value(v).item()
}

fn branches(tape: &Tape, v: [Var; 2]) -> Branches {
    Branches {
        x: val(tape, v[0]),
        y: val(tape, v[1]),
    }
}

/// Builds the objectives on the tape and returns `(obj_ver, obj_hor)`.
fn objectives(tape: &mut Tape, w: &LossWeights, t: &GenTerms) -> Result<(Var, Var)> {
    let mut weighted = |gan: [Var; 2], dist: [Var; 2], cyc: [Var; 2], ld: f64, lc: f64| -> Result<Var> {
        let g = tape.add(gan[0], gan[1])?;
        let d = tape.add(dist[0], dist[1])?;
        let c = tape.add(cyc[0], cyc[1])?;
        let d = tape.scale(d, ld);
        let c = tape.scale(c, lc);
        let s = tape.add(g, d)?;
        tape.add(s, c)
    };
    let ver = weighted([t.gen[0], t.gen[1]], t.ver_dis, t.inter_cyc, w.ver_dis, w.inter_cyc)?;
    let hor = weighted([t.gen[2], t.gen[3]], t.hor_dis, t.intra_cyc, w.hor_dis, w.intra_cyc)?;
    Ok((ver, hor))
}

fn bind_all(tape: &mut Tape, bundle: &GanBundle, gens_trainable: bool, discs_trainable: bool) -> ([Bound; 4], [Bound; 4]) {
    let g = std::array::from_fn(|i| bundle.generators[i].bind(tape, gens_trainable));
    let d = std::array::from_fn(|i| {
        let p = &bundle.discriminators[i].0.params;
        if discs_trainable {
            p.bind(tape)
        } else {
            p.bind_const(tape)
        }
    });
    (g, d)
}

/// All generator-side terms at the current parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLosses {
    pub gen: [f64; 4],
    pub ver_dis: Branches,
    pub hor_dis: Branches,
    pub inter_cyc: Branches,
    pub intra_cyc: Branches,
}

impl GeneratorLosses {
    pub fn verdisgan(&self, w: &LossWeights) -> f64 {
        combine_objective(self.gen[0], self.gen[1], self.ver_dis.total(), self.inter_cyc.total(), w.ver_dis, w.inter_cyc)
    }

    pub fn hordisgan(&self, w: &LossWeights) -> f64 {
        combine_objective(self.gen[2], self.gen[3], self.hor_dis.total(), self.intra_cyc.total(), w.hor_dis, w.intra_cyc)
    }
}

/// Evaluates every generator-side term without touching parameters.
pub fn generator_losses(bundle: &GanBundle, batch: &QuadBatch, cond: &Conditioning) -> Result<GeneratorLosses> {
    let mut tape = Tape::new();
    let (g, d) = bind_all(&mut tape, bundle, false, false);
    let graph = build_fakes(&mut tape, bundle, &g, batch, cond)?;
    let t = build_gen_terms(&mut tape, bundle, &g, &d, &graph, cond)?;
    Ok(GeneratorLosses {
        gen: t.gen.map(|v| val(&tape, v)),
        ver_dis: branches(&tape, t.ver_dis),
        hor_dis: branches(&tape, t.hor_dis),
        inter_cyc: branches(&tape, t.inter_cyc),
        intra_cyc: branches(&tape, t.intra_cyc),
    })
}

/// Discriminator LSGAN losses, by mapping.
pub fn discriminator_losses(bundle: &GanBundle, batch: &QuadBatch, cond: &Conditioning) -> Result<[f64; 4]> {
    let mut tape = Tape::new();
    let (g, d) = bind_all(&mut tape, bundle, false, false);
    let graph = build_fakes(&mut tape, bundle, &g, batch, cond)?;
    let terms = build_disc_terms(&mut tape, bundle, &d, &graph, batch)?;
    Ok(terms.map(|v| val(&tape, v)))
}

/// `(E[(D(real) - 1)²] + E[D(fake)²], E[(D(fake) - 1)²])`.
pub fn lsgan_loss(disc: &Discriminator, real: &Tensor, fake: &Tensor) -> Result<(f64, f64)> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::EmptyBatch("lsgan_loss"));
    }
    let dr = disc.score(real)?;
    let df = disc.score(fake)?;
    Ok(lsgan_from_scores(&dr, &df)?)
}

/// LSGAN losses from raw discriminator outputs.
pub fn lsgan_from_scores(real_scores: &[f64], fake_scores: &[f64]) -> Result<(f64, f64)> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::EmptyBatch("lsgan_loss"));
    }
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
    let disc = mean(real_scores, &|d| (d - 1.0).powi(2)) + mean(fake_scores, &|d| d * d);
    let gen = mean(fake_scores, &|d| (d - 1.0).powi(2));
    Ok((disc, gen))
}

pub fn ver_dis_loss(bundle: &GanBundle, batch: &QuadBatch, cond: &Conditioning) -> Result<Branches> {
    Ok(generator_losses(bundle, batch, cond)?.ver_dis)
}

pub fn hor_dis_loss(bundle: &GanBundle, batch: &QuadBatch, cond: &Conditioning) -> Result<Branches> {
    Ok(generator_losses(bundle, batch, cond)?.hor_dis)
}

/// `(inter, intra)` cycle-consistency losses.
pub fn cycle_losses(bundle: &GanBundle, batch: &QuadBatch, cond: &Conditioning) -> Result<(Branches, Branches)> {
    let l = generator_losses(bundle, batch, cond)?;
    Ok((l.inter_cyc, l.intra_cyc))
}

pub fn verdisgan_objective(bundle: &GanBundle, batch: &QuadBatch, cond: &Conditioning) -> Result<f64> {
    Ok(generator_losses(bundle, batch, cond)?.verdisgan(&bundle.weights))
}

pub fn hordisgan_objective(bundle: &GanBundle, batch: &QuadBatch, cond: &Conditioning) -> Result<f64> {
    Ok(generator_losses(bundle, batch, cond)?.hordisgan(&bundle.weights))
}

/// One Adam state per network.
#[derive(Debug, Clone)]
pub struct GanOptimizer {
    pub generators: [AdamState; 4],
    pub discriminators: [AdamState; 4],
}

impl GanOptimizer {
    pub fn new(beta1: f64, beta2: f64, base_lr: f64) -> Self {
        let st = || AdamState::new(beta1, beta2, 1e-8, base_lr);
        Self {
            generators: std::array::from_fn(|_| st()),
            discriminators: std::array::from_fn(|_| st()),
        }
    }
}

/// A single scalar loss whose parameter gradients can be inspected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    /// Discriminator LSGAN loss of one mapping; gradients reach that
    /// discriminator only.
    Disc(Mapping),
    /// Generator LSGAN loss of one mapping.
    Gen(Mapping),
    VerDis,
    HorDis,
    InterCyc,
    IntraCyc,
    VerObjective,
    HorObjective,
}

pub type NetGrads = BTreeMap<String, Vec<f64>>;

/// Value of a loss term and its gradient with respect to every
/// parameter of the networks it trains.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGradients {
    pub value: f64,
    pub generators: [NetGrads; 4],
    pub discriminators: [NetGrads; 4],
}

fn collect_grads(params: Option<&ParamSet>, bound: &Bound, grads: &crate::diff::Gradients) -> Result<NetGrads> {
    let mut out = NetGrads::new();
    if let Some(params) = params {
        for (name, p) in params.iter() {
            let g = grads
                .get(bound.get(name)?)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.tensor.len()]);
            out.insert(name.to_string(), g);
        }
    }
    Ok(out)
}

/// Backpropagates one term at the current parameters without updating
/// anything. Networks a term does not train get empty gradient maps.
pub fn term_gradients(bundle: &GanBundle, batch: &QuadBatch, cond: &Conditioning, term: LossTerm) -> Result<TermGradients> {
    let mut tape = Tape::new();
    let disc_phase = matches!(term, LossTerm::Disc(_));
    let (g, d) = bind_all(&mut tape, bundle, !disc_phase, disc_phase);
    let graph = build_fakes(&mut tape, bundle, &g, batch, cond)?;
    let loss = if let LossTerm::Disc(m) = term {
        build_disc_terms(&mut tape, bundle, &d, &graph, batch)?[m.index()]
    } else {
        let t = build_gen_terms(&mut tape, bundle, &g, &d, &graph, cond)?;
        let pair = |tape: &mut Tape, v: [Var; 2]| tape.add(v[0], v[1]);
        match term {
            LossTerm::Gen(m) => t.gen[m.index()],
            LossTerm::VerDis => pair(&mut tape, t.ver_dis)?,
            LossTerm::HorDis => pair(&mut tape, t.hor_dis)?,
            LossTerm::InterCyc => pair(&mut tape, t.inter_cyc)?,
            LossTerm::IntraCyc => pair(&mut tape, t.intra_cyc)?,
            LossTerm::VerObjective => objectives(&mut tape, &bundle.weights, &t)?.0,
            LossTerm::HorObjective => objectives(&mut tape, &bundle.weights, &t)?.1,
            LossTerm::Disc(_) => unreachable!(),
        }
    };
    let value = val(&tape, loss);
    let grads = tape.backward(loss)?;
    let mut generators: [NetGrads; 4] = Default::default();
    let mut discriminators: [NetGrads; 4] = Default::default();
    for i in 0..4 {
        if disc_phase {
            discriminators[i] = collect_grads(Some(&bundle.discriminators[i].0.params), &d[i], &grads)?;
        } else {
            generators[i] = collect_grads(bundle.generators[i].params(), &g[i], &grads)?;
        }
    }
    Ok(TermGradients {
        value,
        generators,
        discriminators,
    })
}

/// Updates the four discriminators once on their LSGAN losses with the
/// generators held fixed. Returns the losses before the update.
pub fn discriminator_step(
    bundle: &mut GanBundle,
    opt: &mut GanOptimizer,
    batch: &QuadBatch,
    cond: &Conditioning,
    lr: f64,
) -> Result<[f64; 4]> {
    let mut tape = Tape::new();
    let (g, d) = bind_all(&mut tape, bundle, false, true);
    let graph = build_fakes(&mut tape, bundle, &g, batch, cond)?;
    let terms = build_disc_terms(&mut tape, bundle, &d, &graph, batch)?;
    let losses = terms.map(|v| val(&tape, v));
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step: 0,
            snapshot: Box::new(LossReport {
                disc: losses,
                ..Default::default()
            }),
        });
    }
    let a = tape.add(terms[0], terms[1])?;
    let b = tape.add(terms[2], terms[3])?;
    let total = tape.add(a, b)?;
    let grads = tape.backward(total)?;
    for i in 0..4 {
        let params = &mut bundle.discriminators[i].0.params;
        params.absorb_grads(&d[i], &grads)?;
        opt.discriminators[i].step(params, lr)?;
    }
    Ok(losses)
}

/// Updates the four generators once on the sum of both objectives with
/// the discriminators held fixed. Returns the losses before the update.
pub fn generator_step(
    bundle: &mut GanBundle,
    opt: &mut GanOptimizer,
    batch: &QuadBatch,
    cond: &Conditioning,
    lr: f64,
) -> Result<GeneratorLosses> {
    let mut tape = Tape::new();
    let (g, d) = bind_all(&mut tape, bundle, true, false);
    let graph = build_fakes(&mut tape, bundle, &g, batch, cond)?;
    let t = build_gen_terms(&mut tape, bundle, &g, &d, &graph, cond)?;
    let (ver, hor) = objectives(&mut tape, &bundle.weights, &t)?;
    let losses = GeneratorLosses {
        gen: t.gen.map(|v| val(&tape, v)),
        ver_dis: branches(&tape, t.ver_dis),
        hor_dis: branches(&tape, t.hor_dis),
        inter_cyc: branches(&tape, t.inter_cyc),
        intra_cyc: branches(&tape, t.intra_cyc),
    };
    let total = tape.add(ver, hor)?;
    if !val(&tape, total).is_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            snapshot: Box::new(report_from(0, [f64::NAN; 4], &losses, &bundle.weights)),
        });
    }
    let grads = tape.backward(total)?;
    for i in 0..4 {
        if let Some(params) = bundle.generators[i].params_mut() {
            params.absorb_grads(&g[i], &grads)?;
            opt.generators[i].step(params, lr)?;
        }
    }
    Ok(losses)
}

fn report_from(step: usize, disc: [f64; 4], g: &GeneratorLosses, w: &LossWeights) -> LossReport {
    LossReport {
        step,
        disc,
        gen: g.gen,
        ver_dis: g.ver_dis.total(),
        hor_dis: g.hor_dis.total(),
        inter_cyc: g.inter_cyc.total(),
        intra_cyc: g.intra_cyc.total(),
        obj_ver: g.verdisgan(w),
        obj_hor: g.hordisgan(w),
    }
}

/// Discriminator update followed by generator update. Discriminator
/// losses are reported at the incoming parameters; generator losses at
/// the incoming generators and the freshly updated discriminators.
pub fn train_step(
    bundle: &mut GanBundle,
    opt: &mut GanOptimizer,
    batch: &QuadBatch,
    cond: &Conditioning,
    lr: f64,
    step: usize,
) -> Result<LossReport> {
    let stamp = |e: Error| match e {
        Error::NonFiniteLoss { snapshot, .. } => Error::NonFiniteLoss {
            step,
            snapshot: Box::new(LossReport { step, ..*snapshot }),
        },
        other => other,
    };
    let disc = discriminator_step(bundle, opt, batch, cond, lr).map_err(stamp)?;
    let gen = generator_step(bundle, opt, batch, cond, lr).map_err(|e| match e {
        Error::NonFiniteLoss { snapshot, .. } => Error::NonFiniteLoss {
            step,
            snapshot: Box::new(LossReport { step, disc, ..*snapshot }),
        },
        other => other,
    })?;
    Ok(report_from(step, disc, &gen, &bundle.weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{freeze, ClassifierNet};

    fn one_d_bundle(g: Generator) -> GanBundle {
        let aux = Arc::new(freeze(&ClassifierNet::linear(&[1.0], 0.0).unwrap()));
        let mut rng = Rng::new(0);
        GanBundle::new(aux, &GanConfig::default(), &mut rng)
            .unwrap()
            .with_generators(g)
    }

    fn scalar_batch(x: f64, y: f64) -> QuadBatch {
        QuadBatch::from_rows(&[[x]], &[[x]], &[[y]], &[[y]]).unwrap()
    }

    #[test]
    fn lsgan_examples() {
        assert_eq!(lsgan_from_scores(&[1.0, 1.0], &[0.0]).unwrap().0, 0.0);
        assert_eq!(lsgan_from_scores(&[0.5], &[0.5]).unwrap().0, 0.5);
        assert_eq!(lsgan_from_scores(&[0.3], &[1.0, 1.0]).unwrap().1, 0.0);
        assert!(lsgan_from_scores(&[], &[1.0]).is_err());
    }

    #[test]
    fn shift_stub_inter_cycle() {
        let bundle = one_d_bundle(Generator::Shift { dim: 1 });
        let batch = scalar_batch(0.0, 5.0);
        let cond = Conditioning {
            dv_x: vec![1.0],
            dv_y: vec![2.0],
            dh_x: vec![3.0],
            dh_y: vec![0.0],
        };
        let (inter, intra) = cycle_losses(&bundle, &batch, &cond).unwrap();
        // x: 0 -> 0 + 2 = 2 -> 2 - 1 = 1
        assert_eq!(inter.x, 1.0);
        // x: 0 -> 0 - 3 = -3 -> -3 + 3 = 0
        assert_eq!(intra.x, 0.0);
    }

    #[test]
    fn identity_stub_has_zero_cycles() {
        let bundle = one_d_bundle(Generator::Identity { dim: 1 });
        let batch = scalar_batch(-0.4, 1.3);
        let cond = Conditioning {
            dv_x: vec![0.4],
            dv_y: vec![1.3],
            dh_x: vec![0.0],
            dh_y: vec![0.0],
        };
        let (inter, intra) = cycle_losses(&bundle, &batch, &cond).unwrap();
        assert_eq!(inter.total() + intra.total(), 0.0);
        // identity with src == tgt gives zero horizontal error
        assert_eq!(hor_dis_loss(&bundle, &batch, &cond).unwrap().total(), 0.0);
    }

    #[test]
    fn vertical_distance_error() {
        // Constant generator at 1.5 in front of w = 1, b = 0: achieved d_v = 1.5.
        let bundle = one_d_bundle(Generator::Constant { point: vec![1.5] });
        let batch = scalar_batch(-1.0, 2.0);
        let cond = Conditioning {
            dv_x: vec![1.5],
            dv_y: vec![2.0],
            dh_x: vec![0.0],
            dh_y: vec![0.0],
        };
        let v = ver_dis_loss(&bundle, &batch, &cond).unwrap();
        assert_eq!(v.x, 0.25);
        assert_eq!(v.y, 0.0);
    }

    #[test]
    fn objective_combination() {
        assert_eq!(combine_objective(0.0, 0.0, 0.0, 0.0, 0.1, 10.0), 0.0);
        assert!((combine_objective(1.0, 1.0, 1.0, 1.0, 0.1, 10.0) - 12.1).abs() < 1e-12);
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            ver_dis: 0.01,
            hor_dis: 0.01,
            ..Default::default()
        };
        assert!(bad.validate().is_ok());
        let bad = LossWeights {
            ver_dis: 0.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossWeights {
            ver_dis: 0.01,
            hor_dis: 0.001,
            inter_cyc: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mapping_labels() {
        assert_eq!(Mapping::X2Y.target(), Label::Y);
        assert_eq!(Mapping::Y2Y.target(), Label::Y);
        assert_eq!(Mapping::Y2X.target(), Label::X);
        assert_eq!(Mapping::X2X.target(), Label::X);
        assert_eq!("Y2Y".parse::<Mapping>().unwrap(), Mapping::Y2Y);
    }
}
