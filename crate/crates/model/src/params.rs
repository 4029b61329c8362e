//! Named trainable tensors with deterministic initialization.

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ModelError, Result};

/// How a parameter is filled at construction.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Uniform { fan_in: usize },
    Normal { std: f64 },
    Const(f64),
}

/// Ordered collection of parameters. Order is creation order, which is
/// fixed by the network topology, so the RNG stream is reproducible.
#[derive(Debug)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, rng: ChaCha8Rng) -> Self {
        ParamStore {
            entries: Vec::new(),
            dtype,
            device: Device::Cpu,
            rng,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Result<Var> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(ModelError::Config(format!("duplicate parameter name {name}")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
            Init::Const(c) => vec![c; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.entries.push((name, var.clone()));
        Ok(var)
    }

    pub fn entries(&self) -> &[(String, Var)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }
}
