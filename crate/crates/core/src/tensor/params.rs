use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameter initialization schemes.
#[derive(Clone, Debug)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform in `[-a, a]`.
    Uniform(f64),
    /// Glorot-uniform over a `fan_in → fan_out` map.
    Xavier { fan_in: usize, fan_out: usize },
    Value(Tensor),
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Register a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(a) => (0..n).map(|_| self.rng.random_range(-a..=a)).collect(),
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-a..=a)).collect()
            }
            Init::Value(t) => {
                assert_eq!(t.shape(), shape, "init value shape for {name}");
                t.into_data()
            }
        };
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(Tensor {
            shape: shape.to_vec(),
            data,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Place every parameter on `tape`, as gradient leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .values
            .iter()
            .map(|v| {
                if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Replace values from `(name, tensor)` pairs. Every parameter must be
    /// present with a matching shape.
    pub fn load_named(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        let given: HashMap<&str, &Tensor> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let t = given
                .get(name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    value.shape()
                )));
            }
            *value = (*t).clone();
        }
        if entries.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                entries.len(),
                self.values.len()
            )));
        }
        Ok(())
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }
}

/// Parameters placed on one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Gradients after `tape.backward`, indexed like the store.
    pub fn grads(&self, tape: &Tape) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|v| tape.grad(*v)).collect()
    }
}
