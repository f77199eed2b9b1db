use rand::distributions::{Distribution, Uniform};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::signal::stream_rng;
use crate::tensor::{Element, Tensor};

/// Stream reserved for weight initialization.
const INIT_STREAM: u64 = 0x1417_0000_0000_0000;

/// Named trainable tensors in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Element> ModelParams<T> {
    /// Fan-in uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, INIT_STREAM);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in cfg.param_shapes() {
            let len: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![T::zero(); len]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                (0..len).map(|_| T::of(dist.sample(&mut rng))).collect()
            };
            names.push(name);
            tensors.push(Tensor::new(&shape, data)?);
        }
        Ok(Self { names, tensors })
    }

    /// Builds from named tensors, which must match `cfg` exactly.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let expected = cfg.param_shapes();
        if expected.len() != named.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                expected.len(),
                named.len()
            )));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&named) {
            if en != n || es.as_slice() != t.shape() {
                return Err(Error::Format(format!(
                    "tensor {n} {:?} where {en} {es:?} was expected",
                    t.shape()
                )));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_follows_config() {
        let cfg = ModelConfig::new(128, 1, 11);
        let p: ModelParams<f32> = ModelParams::init(&cfg, 1).unwrap();
        assert_eq!(p.scalar_count(), cfg.param_count());
        for ((name, t), (en, es)) in p.iter().zip(cfg.param_shapes()) {
            assert_eq!(name, en);
            assert_eq!(t.shape(), es.as_slice());
        }
        let w = p.get("stem.pw1.weight").unwrap();
        let bound = (6.0f32 / 64.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(w.data().iter().any(|v| v.abs() > bound / 2.0));
        assert!(p.get("stem.pw1.bias").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::new(128, 1, 4);
        let a: ModelParams<f32> = ModelParams::init(&cfg, 3).unwrap();
        assert_eq!(a, ModelParams::init(&cfg, 3).unwrap());
        assert_ne!(a, ModelParams::init(&cfg, 4).unwrap());
    }

    #[test]
    fn from_named_checks_shapes() {
        let cfg = ModelConfig::new(128, 1, 4);
        let p: ModelParams<f32> = ModelParams::init(&cfg, 3).unwrap();
        let named: Vec<_> = p.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        assert_eq!(ModelParams::from_named(&cfg, named.clone()).unwrap(), p);
        let other = ModelConfig::new(128, 1, 5);
        assert!(ModelParams::from_named(&other, named).is_err());
    }
}
