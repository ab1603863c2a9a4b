//! Named parameter storage.
//!
//! Every trainable tensor and every normalization buffer of a model lives in
//! one [`ParamStore`], addressed by a [`ParamId`] and a dotted name. A store
//! can be built in meta mode, where tensors carry shapes only; this is how
//! parameter and FLOP counts of full-size models are taken without
//! allocating weights.

use std::collections::HashMap;

use mstnet_tensor::{Float, Shape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
}

#[derive(Clone, Debug)]
pub struct Entry<T: Float> {
    pub name: String,
    pub value: Tensor<T>,
    /// `false` for normalization running statistics.
    pub trainable: bool,
}

#[derive(Clone, Debug)]
pub struct ParamStore<T: Float> {
    entries: Vec<Entry<T>>,
    index: HashMap<String, usize>,
    meta: bool,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new(false)
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new(meta: bool) -> Self {
        ParamStore { entries: Vec::new(), index: HashMap::new(), meta }
    }

    pub fn is_meta(&self) -> bool {
        self.meta
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, name: String, value: Tensor<T>, trainable: bool) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter name '{name}'");
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id.0);
        self.entries.push(Entry { name, value, trainable });
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &Entry<T> {
        &self.entries[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    /// Replaces a tensor, checking that its shape is unchanged.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::Contract(format!(
                "parameter '{}' has shape {:?}, got {:?}",
                e.name,
                e.value.shape().dims(),
                value.shape().dims()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &Entry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.entries().filter(|(_, e)| e.trainable).map(|(id, _)| id).collect()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.shape().numel()).sum()
    }

    /// Element-wise conversion to another precision; names and ids are kept.
    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: if e.value.is_meta() { Tensor::meta(e.value.shape()) } else { e.value.cast() },
                    trainable: e.trainable,
                })
                .collect(),
            index: self.index.clone(),
            meta: self.meta,
        }
    }
}

/// Registers parameters under a dotted scope.
pub struct ParamBuilder<'a, T: Float> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Float> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder { store, rng, prefix: String::new() }
    }

    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = self.path(name);
        ParamBuilder { store: self.store, rng: self.rng, prefix }
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn is_meta(&self) -> bool {
        self.store.meta
    }

    fn make(&mut self, shape: Shape, init: Init) -> Tensor<T> {
        if self.store.meta {
            return Tensor::meta(shape);
        }
        match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                let rng = &mut *self.rng;
                Tensor::from_fn(shape, |_| T::lit(dist.sample(rng)))
            }
        }
    }

    pub fn param(&mut self, name: &str, shape: Shape, init: Init) -> ParamId {
        let t = self.make(shape, init);
        let path = self.path(name);
        self.store.push(path, t, true)
    }

    pub fn buffer(&mut self, name: &str, shape: Shape, init: Init) -> ParamId {
        let t = self.make(shape, init);
        let path = self.path(name);
        self.store.push(path, t, false)
    }

    /// Draws a value from the builder's generator, for tests that need
    /// extra randomness tied to the same seed.
    pub fn random_unit(&mut self) -> f64 {
        self.rng.gen()
    }
}
