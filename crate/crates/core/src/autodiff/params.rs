use rand::Rng;

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{BasenError, Result};

/// Index of a [`Parameter`] inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A learnable tensor with its gradient accumulator and Adam state.
#[derive(Debug, Clone)]
pub struct Parameter<S> {
    name: String,
    value: Tensor<S>,
    grad: Tensor<S>,
    m: Tensor<S>,
    v: Tensor<S>,
    steps: u64,
}

impl<S: Real> Parameter<S> {
    fn new(name: String, value: Tensor<S>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            name,
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
            steps: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<S> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<S> {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor<S> {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut Tensor<S> {
        &mut self.grad
    }

    pub fn moments(&self) -> (&Tensor<S>, &Tensor<S>) {
        (&self.m, &self.v)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Named parameters of one model.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: Vec<Parameter<S>>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Registers a tensor under a unique name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(BasenError::invalid(format!("duplicate parameter name {name}")));
        }
        self.params.push(Parameter::new(name, value));
        Ok(ParamId(self.params.len() - 1))
    }

    /// Uniform in +-1/sqrt(fan_in).
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| S::of(rng.random_range(-bound..bound))).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<S>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill(S::zero()));
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.sq_norm()).sum::<f64>().sqrt()
    }

    /// Empty accumulator shaped like this store.
    pub fn grad_buffer(&self) -> GradBuffer<S> {
        GradBuffer {
            grads: self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    /// Adds `buffer` into the stored gradients.
    pub fn add_grads(&mut self, buffer: &GradBuffer<S>) {
        for (p, g) in self.params.iter_mut().zip(&buffer.grads) {
            p.grad.add_assign(g);
        }
    }

    /// Multiplies every stored gradient by `c`.
    pub fn scale_grads(&mut self, c: f64) {
        let c = S::of(c);
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= c);
        }
    }

    /// Copy of the values in another precision, without optimizer state.
    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.cast()))
                .collect(),
        }
    }

    /// One bias-corrected Adam update of every parameter from its stored
    /// gradient.
    pub fn adam_step(&mut self, lr: f64, cfg: &AdamConfig) {
        for p in &mut self.params {
            p.steps += 1;
            let t = p.steps as i32;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
            let (one_b1, one_b2) = (S::of(1.0 - cfg.beta1), S::of(1.0 - cfg.beta2));
            let vals = p.value.data_mut();
            let (m, v, g) = (p.m.data_mut(), p.v.data_mut(), p.grad.data());
            for i in 0..vals.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i].f64() / c1;
                let v_hat = v[i].f64() / c2;
                vals[i] -= S::of(lr * m_hat / (v_hat.sqrt() + cfg.eps));
            }
        }
    }
}

/// Gradient accumulator detached from a store, for per-example work.
#[derive(Debug, Clone)]
pub struct GradBuffer<S> {
    grads: Vec<Tensor<S>>,
}

impl<S: Real> GradBuffer<S> {
    pub fn add(&mut self, id: ParamId, g: &Tensor<S>) {
        self.grads[id.0].add_assign(g);
    }

    pub fn merge(&mut self, other: &GradBuffer<S>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.grads[id.0]
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}
