//! Dense row-major tensors, seeded initializers and named parameter storage.
//!
//! Every tensor in the model is at most two-dimensional. Tensors of higher
//! rank are still accepted and viewed as `rows × cols` where `cols` is the
//! last dimension.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Initialization scheme for a freshly created tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    XavierUniform,
    Constant(f64),
    Normal {
        mean: f64,
        std: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "shape must have at least one dimension".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every dimension must be at least 1".into(),
        });
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("expected {expected} elements, got {}", data.len()),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![T::zero(); n])
    }

    pub fn vector(data: Vec<T>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn scalar(value: T) -> Self {
        Self::new(vec![1], vec![value]).expect("scalar shape is valid")
    }

    /// Builds a 2-D tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape {
                shape: vec![rows.len(), cols],
                reason: "ragged rows".into(),
            });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    /// Deterministic in `(shape, scheme, seed)`.
    pub fn init(shape: Vec<usize>, scheme: InitScheme, seed: u64) -> Result<Self> {
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = match scheme {
            InitScheme::Constant(c) => vec![T::from_f64_lossy(c); n],
            InitScheme::XavierUniform => {
                let (fan_in, fan_out) = match shape.len() {
                    1 => (shape[0], shape[0]),
                    r => (shape[r - 1], shape[r - 2]),
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| T::from_f64_lossy(rng.random_range(-a..a))).collect()
            }
            InitScheme::Normal { mean, std } => {
                let dist = Normal::new(mean, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| T::from_f64_lossy(dist.sample(&mut rng))).collect()
            }
        };
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of columns in the 2-D view (the last dimension).
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    /// Number of rows in the 2-D view.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("gradient of length {} for {:?}", delta.len(), self.shape),
            ));
        }
        let g = self.grad.get_or_insert_with(|| vec![T::zero(); delta.len()]);
        for (a, &b) in g.iter_mut().zip(delta) {
            *a += b;
        }
        Ok(())
    }

    /// Converts element type, dropping any gradient.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64_lossy(x.to_f64_lossy())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }
}

/// Seed for an individual named parameter, independent of insertion order.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Named parameters with lexicographic iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
    seed: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Conflict(format!("parameter `{name}` already exists")));
        }
        tensor.set_requires_grad(true);
        self.params.insert(name, tensor);
        Ok(())
    }

    /// Creates and inserts a parameter seeded from the store seed and its name.
    pub fn init(&mut self, name: &str, shape: Vec<usize>, scheme: InitScheme) -> Result<()> {
        let t = Tensor::init(shape, scheme, derive_seed(self.seed, name))?;
        self.insert(name, t)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).ok_or_else(|| Error::MissingKey(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingKey(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count over all parameters whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_init() {
        let t = Tensor::<f32>::init(vec![2, 2], InitScheme::Constant(0.0), 3).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::<f64>::init(vec![3], InitScheme::Constant(1.0), 99).unwrap();
        assert_eq!(t.data(), &[1.0; 3]);
    }

    #[test]
    fn xavier_is_deterministic_and_bounded() {
        let a = Tensor::<f32>::init(vec![4, 4], InitScheme::XavierUniform, 7).unwrap();
        let b = Tensor::<f32>::init(vec![4, 4], InitScheme::XavierUniform, 7).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let bound = (6.0f32 / 8.0).sqrt();
        assert!(a.data().iter().all(|x| x.abs() < bound));
        let c = Tensor::<f32>::init(vec![4, 4], InitScheme::XavierUniform, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn xavier_vector_uses_length_for_both_fans() {
        let t = Tensor::<f64>::init(vec![6], InitScheme::XavierUniform, 1).unwrap();
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(t.data().iter().all(|x| x.abs() < bound));
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(
            Tensor::<f32>::init(vec![2, 0], InitScheme::XavierUniform, 1),
            Err(Error::InvalidShape { .. })
        ));
        assert!(matches!(Tensor::<f32>::zeros(vec![]), Err(Error::InvalidShape { .. })));
        assert!(Tensor::<f32>::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn store_rejects_duplicates_and_iterates_sorted() {
        let mut s = ParamStore::<f32>::new(1);
        s.init("b", vec![2], InitScheme::Constant(1.0)).unwrap();
        s.init("a", vec![3], InitScheme::Constant(1.0)).unwrap();
        assert!(matches!(
            s.init("a", vec![1], InitScheme::Constant(0.0)),
            Err(Error::Conflict(_))
        ));
        assert_eq!(s.names().collect::<Vec<_>>(), ["a", "b"]);
        assert!(s.get("a").unwrap().requires_grad());
    }

    #[test]
    fn grads_accumulate() {
        let mut t = Tensor::<f64>::zeros(vec![2]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
    }
}
