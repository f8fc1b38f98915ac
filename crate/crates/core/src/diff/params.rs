use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::tensor::Tensor;
use super::DiffError;
use crate::seed::{mix, str_hash};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitScheme {
    /// uniform(±1/√fan_in)
    FanIn {
        fan_in: usize,
    },
    Constant(f64),
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitRecord {
    pub scheme: InitScheme,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
    pub init: InitRecord,
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, ParamId>,
    seed: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Register a parameter. The draw depends only on `(store seed, name)`,
    /// so registration order never changes values.
    pub fn add(
        &mut self,
        name: &str,
        shape: &[usize],
        scheme: InitScheme,
    ) -> Result<ParamId, DiffError> {
        if self.index.contains_key(name) {
            return Err(DiffError::Graph(format!("duplicate parameter name {name}")));
        }
        let seed = mix(self.seed, str_hash(name));
        let value = match scheme {
            InitScheme::FanIn { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Tensor::from_fn(shape, |_| T::from_f64c(rng.random_range(-bound..bound)))
            }
            InitScheme::Constant(c) => Tensor::full(shape, T::from_f64c(c)),
            InitScheme::Zeros => Tensor::zeros(shape),
        };
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value: Arc::new(value),
            init: InitRecord { scheme, seed },
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub(crate) fn value_arc(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.params[id.0].value)
    }

    /// Mutable access; clones the tensor if a live graph still shares it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, t: Tensor<T>) -> Result<(), DiffError> {
        let cur = self.value(id);
        if cur.shape() != t.shape() {
            return Err(DiffError::Shape(format!(
                "parameter {}: {:?} vs {:?}",
                self.name(id),
                cur.shape(),
                t.shape()
            )));
        }
        self.params[id.0].value = Arc::new(t);
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Same names and shapes, values cast to another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: Arc::new(p.value.cast()),
                    init: p.init.clone(),
                })
                .collect(),
            index: self.index.clone(),
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f32>::new(1);
        s.add("w", &[2], InitScheme::Zeros).unwrap();
        assert!(s.add("w", &[2], InitScheme::Zeros).is_err());
    }

    #[test]
    fn fan_in_bound_and_order_independence() {
        let mut a = ParamStore::<f64>::new(9);
        let wa = a
            .add("w", &[64, 16], InitScheme::FanIn { fan_in: 16 })
            .unwrap();
        a.add("z", &[3], InitScheme::Zeros).unwrap();
        let mut b = ParamStore::<f64>::new(9);
        b.add("z", &[3], InitScheme::Zeros).unwrap();
        let wb = b
            .add("w", &[64, 16], InitScheme::FanIn { fan_in: 16 })
            .unwrap();
        assert_eq!(a.value(wa), b.value(wb));
        assert!(a.value(wa).data().iter().all(|v| v.abs() <= 0.25));
    }
}
