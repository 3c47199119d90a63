//! Named parameter storage and seeded initialisation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::real::Real;

use super::tensor::{numel, Tensor};

/// Whether stochastic and batch-statistic layers run in training mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<F: Real> {
    pub name: String,
    pub tensor: Tensor<F>,
    /// `false` for running statistics and other non-learned state.
    pub trainable: bool,
}

/// Ordered collection of every tensor a model owns.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F: Real> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    fn push(&mut self, name: String, tensor: Tensor<F>, trainable: bool) -> Tensor<F> {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry {
            name,
            tensor: tensor.clone(),
            trainable,
        });
        tensor
    }

    pub fn entries(&self) -> &[ParamEntry<F>] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.entries.iter().filter(|e| e.trainable).map(|e| &e.tensor)
    }

    /// Number of learned scalars.
    pub fn num_parameters(&self) -> usize {
        self.trainable().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&self) {
        self.trainable().for_each(Tensor::zero_grad);
    }

    /// `(name, shape)` of every entry in storage order.
    pub fn inventory(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.tensor.shape().to_vec()))
            .collect()
    }

    /// Deep copy of all values.
    pub fn snapshot(&self) -> Vec<Vec<F>> {
        self.entries.iter().map(|e| e.tensor.to_vec()).collect()
    }

    /// Restores values taken by [`snapshot`](Self::snapshot).
    pub fn restore(&self, values: &[Vec<F>]) {
        assert_eq!(values.len(), self.entries.len(), "snapshot size mismatch");
        for (e, v) in self.entries.iter().zip(values) {
            let mut d = e.tensor.data_mut();
            assert_eq!(d.len(), v.len(), "snapshot shape mismatch for {}", e.name);
            d.copy_from_slice(v);
        }
    }
}

/// Hands out freshly initialised parameters under a name prefix.
pub struct Init<'a, F: Real> {
    store: &'a mut ParamStore<F>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, F: Real> Init<'a, F> {
    pub fn new(store: &'a mut ParamStore<F>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// A child scope whose names are prefixed by `name.`.
    pub fn sub(&mut self, name: impl AsRef<str>) -> Init<'_, F> {
        Init {
            prefix: self.qualify(name.as_ref()),
            store: self.store,
            rng: self.rng,
        }
    }

    fn qualify(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// `U(-1/√fan_in, 1/√fan_in)`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Tensor<F> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..numel(shape))
            .map(|_| F::lit(self.rng.random_range(-bound..bound)))
            .collect();
        let name = self.qualify(name);
        self.store.push(name, Tensor::param(data, shape), true)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Tensor<F> {
        let name = self.qualify(name);
        let t = Tensor::param(vec![F::lit(value); numel(shape)], shape);
        self.store.push(name, t, true)
    }

    /// Non-trainable state saved with the model.
    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Tensor<F> {
        let name = self.qualify(name);
        let t = Tensor::filled(F::lit(value), shape);
        self.store.push(name, t, false)
    }
}
