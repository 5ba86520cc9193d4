//! Named parameter storage and initialisers.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    /// Dot-separated hierarchical name, unique within a store.
    pub name: String,
    pub tensor: Tensor,
    pub grad: Tensor,
    /// Non-trainable entries (batch-norm running statistics) never enter the
    /// gradient tape and are skipped by the optimiser.
    pub trainable: bool,
}

/// How a new parameter tensor is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Const(f64),
    /// He-normal with the given fan-in.
    Kaiming { fan_in: usize },
    Normal { std: f64 },
    /// 1×1 kernel `(C_out, C_in, 1, 1)` with ones at `[o, offset + o]`.
    Identity { offset: usize },
}

/// All parameters of one model. Initial values depend only on the store seed
/// and each parameter's name, so two models that share names and a seed
/// start out identical no matter which other parameters they own.
#[derive(Clone, Debug)]
pub struct ParamStore {
    seed: u64,
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            seed,
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn rng_for(&self, name: &str) -> ChaCha8Rng {
        seed::stream(self.seed, &format!("param:{name}"))
    }

    pub fn add(&mut self, name: &str, shape: impl Into<Shape>, init: Init, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let shape = shape.into();
        let tensor = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Const(v) => Tensor::full(shape, v),
            Init::Kaiming { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                self.sample_normal(name, shape, std)
            }
            Init::Normal { std } => self.sample_normal(name, shape, std),
            Init::Identity { offset } => {
                if shape.h() != 1 || shape.w() != 1 || offset + shape.n() > shape.c() {
                    return Err(Error::Config(format!(
                        "identity init of `{name}` needs a 1x1 kernel with room for offset {offset}, got {shape:?}"
                    )));
                }
                Tensor::from_fn(shape, |o, i, _, _| if i == offset + o { 1.0 } else { 0.0 })
            }
        };
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            grad: Tensor::zeros(shape),
            tensor,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    fn sample_normal(&self, name: &str, shape: Shape, std: f64) -> Tensor {
        let mut rng = self.rng_for(name);
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..shape.numel()).map(|_| dist.sample(&mut rng)).collect();
        Tensor::from_vec(shape, data).expect("shape")
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of trainable scalars, optionally restricted to a name prefix.
    pub fn count_trainable(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable && p.name.starts_with(prefix))
            .map(|p| p.tensor.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Overwrites every trainable tensor with uniform noise in `[-a, a]`.
    /// Used by gradient checks so zero-initialised branches are exercised.
    pub fn randomize(&mut self, rng: &mut impl Rng, a: f64) {
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            for v in p.tensor.data_mut() {
                *v = rng.random_range(-a..a);
            }
        }
    }
}
