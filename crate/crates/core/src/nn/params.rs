use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named parameters in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter `{name}`"
        );
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    /// Gaussian init whose values depend only on `(seed, name)`.
    pub fn add_normal(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f64,
        seed: u64,
    ) -> ParamId {
        let mut r = rng::stream(seed, rng::streams::INIT, rng::name_hash(name));
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows * cols {
            // Each window holds 128 draws; hop to a fresh window when exhausted.
            if i > 0 && i % 96 == 0 {
                r = rng::stream(
                    seed,
                    rng::streams::INIT,
                    rng::mix(rng::name_hash(name), (i / 96) as u64),
                );
            }
            data.push(std * rng::normal(&mut r));
        }
        self.add(name, Tensor::from_vec(rows, cols, data))
    }

    pub fn add_full(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.add(name, Tensor::full(rows, cols, value))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale_grads(&mut self, s: f64) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
