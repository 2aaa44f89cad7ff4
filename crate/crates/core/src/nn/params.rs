//! Named parameter tensors with optimizer metadata.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;

/// A set of named 2-D tensors. Trainable entries receive optimizer updates;
/// non-trainable entries are buffers (batch-norm running statistics).
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>, trainable: bool) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let idx = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.trainable.push(trainable);
        self.index.insert(name.to_string(), idx);
        idx
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn idx(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn try_idx(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn value(&self, idx: usize) -> &Array2<f64> {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Array2<f64> {
        &mut self.values[idx]
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.value(self.idx(name))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        let idx = self.idx(name);
        self.value_mut(idx)
    }

    pub fn is_trainable(&self, idx: usize) -> bool {
        self.trainable[idx]
    }

    /// Mutable references to two distinct tensors at once (batch-norm
    /// running mean and variance).
    pub fn pair_mut(&mut self, i: usize, j: usize) -> (&mut Array2<f64>, &mut Array2<f64>) {
        assert_ne!(i, j, "pair_mut needs distinct indices");
        if i < j {
            let (a, b) = self.values.split_at_mut(j);
            (&mut a[i], &mut b[0])
        } else {
            let (a, b) = self.values.split_at_mut(i);
            (&mut b[0], &mut a[j])
        }
    }

    /// Total number of scalar entries across all tensors.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Bit-level equality of every tensor, buffers included.
    pub fn bits_equal(&self, other: &ParamSet) -> bool {
        if self.names != other.names {
            return false;
        }
        self.values.iter().zip(&other.values).all(|(a, b)| {
            a.shape() == b.shape()
                && a.iter()
                    .zip(b.iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }
}

/// Uniform fan-in initialization: weights and biases drawn from
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn linear_init(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> (Array2<f64>, Array2<f64>) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
    let b = Array2::from_shape_fn((1, fan_out), |_| rng.random_range(-bound..bound));
    (w, b)
}
