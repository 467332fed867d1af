//! Fully connected networks built on the tape.

use std::fmt;
use std::str::FromStr;

use crate::diff::{Bound, ParamSet, Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Parse {
                line: 0,
                msg: format!("unknown activation `{other}`"),
            }),
        }
    }
}

/// Stack of dense layers. `dims = [in, h1, ..., out]`; a single entry
/// is the identity map on `in` features.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub params: ParamSet,
    dims: Vec<usize>,
    activations: Vec<Activation>,
}

pub fn weight_name(layer: usize) -> String {
    format!("l{layer}.w")
}

pub fn bias_name(layer: usize) -> String {
    format!("l{layer}.b")
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        assert!(!dims.is_empty() && dims.iter().all(|&d| d > 0));
        let layers = dims.len() - 1;
        let mut params = ParamSet::new();
        let mut activations = Vec::with_capacity(layers);
        for l in 0..layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.uniform(-s, s)).collect();
            params.insert(
                weight_name(l),
                Tensor::matrix(fan_in, fan_out, w).expect("positive dims"),
            );
            params.insert(bias_name(l), Tensor::zeros(vec![1, fan_out]).expect("positive dims"));
            activations.push(if l + 1 == layers { output } else { hidden });
        }
        Self {
            params,
            dims: dims.to_vec(),
            activations,
        }
    }

    /// Reassembles a network from stored parameters, checking every shape.
    pub fn from_parts(dims: Vec<usize>, activations: Vec<Activation>, params: ParamSet) -> Result<Self> {
        if dims.is_empty() || activations.len() + 1 != dims.len() {
            return Err(Error::InvalidConfig(format!(
                "{} activations for dims {dims:?}",
                activations.len()
            )));
        }
        for l in 0..activations.len() {
            let w = params.tensor(&weight_name(l))?;
            let b = params.tensor(&bias_name(l))?;
            if w.shape() != [dims[l], dims[l + 1]] || b.shape() != [1, dims[l + 1]] {
                return Err(Error::ShapeMismatch {
                    op: "mlp layer",
                    left: w.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
        }
        if params.len() != 2 * activations.len() {
            return Err(Error::InvalidConfig("unexpected extra parameters".into()));
        }
        Ok(Self {
            params,
            dims,
            activations,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().expect("nonempty")
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (l, act) in self.activations.iter().enumerate() {
            let w = bound.get(&weight_name(l))?;
            let b = bound.get(&bias_name(l))?;
            let z = tape.matmul(h, w)?;
            let z = tape.add(z, b)?;
            h = act.apply(tape, z);
        }
        Ok(h)
    }

    /// Forward pass with every parameter held constant.
    pub fn forward_const(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let bound = self.params.bind_const(tape);
        self.forward(tape, &bound, x)
    }

    /// Plain evaluation on a `[n, in]` batch.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward_const(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }

    /// `"3,32,32,2 tanh,tanh,identity"`; the form used in model files.
    pub fn arch_string(&self) -> String {
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        let acts: Vec<String> = self.activations.iter().map(|a| a.to_string()).collect();
        format!("{} {}", dims.join(","), if acts.is_empty() { "-".into() } else { acts.join(",") })
    }

    pub fn parse_arch(s: &str) -> Result<(Vec<usize>, Vec<Activation>)> {
        let bad = |msg: String| Error::Parse { line: 0, msg };
        let mut parts = s.split_whitespace();
        let dims = parts
            .next()
            .ok_or_else(|| bad("missing dims".into()))?
            .split(',')
            .map(|d| d.parse::<usize>().map_err(|e| bad(format!("dim `{d}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let acts = match parts.next().ok_or_else(|| bad("missing activations".into()))? {
            "-" => Vec::new(),
            a => a.split(',').map(str::parse).collect::<Result<Vec<_>>>()?,
        };
        Ok((dims, acts))
    }
}
