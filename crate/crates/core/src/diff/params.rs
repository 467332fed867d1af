use std::collections::BTreeMap;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub tensor: Tensor,
    pub frozen: bool,
}

/// Named parameters of one network. Iteration order is the name order,
/// which keeps optimiser updates and serialisation deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Param>,
}

/// Tape handles for a [`ParamSet`] bound onto one [`Tape`].
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.params.insert(
            name.into(),
            Param {
                tensor,
                frozen: false,
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(|p| &p.tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.get_mut(name)?.frozen = frozen;
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        self.params.values_mut().for_each(|p| p.frozen = true);
    }

    pub fn all_frozen(&self) -> bool {
        self.params.values().all(|p| p.frozen)
    }

    /// Puts every parameter on the tape. Frozen parameters become
    /// constants so no gradient is ever computed for them.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| {
                let v = if p.frozen {
                    tape.constant(p.tensor.clone())
                } else {
                    tape.param(p.tensor.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Like [`bind`](Self::bind) but every parameter is a constant.
    pub fn bind_const(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| (name.clone(), tape.constant(p.tensor.clone())))
            .collect();
        Bound { vars }
    }

    /// Copies gradients from a reverse pass into the non-frozen
    /// parameters. Parameters the loss did not reach get a zero gradient.
    pub fn absorb_grads(&mut self, bound: &Bound, grads: &Gradients) -> Result<()> {
        for (name, p) in self.params.iter_mut() {
            if p.frozen {
                continue;
            }
            let var = bound
                .vars
                .get(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            match grads.get(*var) {
                Some(g) => p.tensor.accumulate_grad(g)?,
                None => p.tensor.accumulate_grad(&vec![0.0; p.tensor.len()])?,
            }
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.params.values_mut().for_each(|p| p.tensor.clear_grad());
    }
}
