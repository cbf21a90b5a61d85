use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Handle to one named array in a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A dense row-major array. Vectors have a one-element shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

impl Param {
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.value[r * c..(r + 1) * c]
    }
}

/// Gradient buffers shaped like the arrays of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    bufs: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self {
            bufs: store.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }

    pub fn zero(&mut self) {
        for b in &mut self.bufs {
            b.fill(0.0);
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.bufs.iter().flatten().copied()
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.bufs
    }
}

/// Named dense arrays with a same-shaped gradient accumulator each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Param>,
    grads: Vec<Vec<f64>>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Result<ParamId> {
        let name = name.into();
        let len: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > 2 || len != value.len() || len == 0 {
            return Err(Error::Shape(format!(
                "{name}: shape {shape:?} does not hold {} values",
                value.len()
            )));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("{name}: non-finite initial value")));
        }
        if self.id(&name).is_some() {
            return Err(Error::Shape(format!("{name}: defined twice")));
        }
        self.params.push(Param { name, shape, value });
        self.grads.push(vec![0.0; len]);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Adds a privately accumulated gradient buffer into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(grads.buffers()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// The accumulators as a standalone buffer.
    pub fn gradients(&self) -> Gradients {
        Gradients {
            bufs: self.grads.clone(),
        }
    }

    /// Total number of scalars across all arrays.
    pub fn len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (k, p) in self.params.iter().enumerate() {
            if flat < p.value.len() {
                return (k, flat);
            }
            flat -= p.value.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn get_flat(&self, flat: usize) -> f64 {
        let (k, i) = self.locate(flat);
        self.params[k].value[i]
    }

    pub fn set_flat(&mut self, flat: usize, v: f64) {
        let (k, i) = self.locate(flat);
        self.params[k].value[i] = v;
    }

    pub(crate) fn split_mut(&mut self) -> (&mut [Param], &mut [Vec<f64>]) {
        (&mut self.params, &mut self.grads)
    }
}

/// Uniform values in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_fan_in<R: Rng + ?Sized>(rng: &mut R, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..len).map(|_| dist.sample(rng)).collect()
}

/// Normal values with mean zero and the given standard deviation.
pub fn normal<R: Rng + ?Sized>(rng: &mut R, len: usize, std_dev: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std_dev).expect("positive standard deviation");
    (0..len).map(|_| dist.sample(rng)).collect()
}
