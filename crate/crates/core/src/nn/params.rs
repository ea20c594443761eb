use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::ModelSpec;
use crate::error::{Error, Result};

/// Flat trainable parameter vector laid out per [`ModelSpec::layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters(Vec<f64>);

impl Parameters {
    pub fn new(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, model needs {}",
                values.len(),
                spec.param_count()
            )));
        }
        Ok(Parameters(values))
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        Parameters(vec![0.0; spec.param_count()])
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = vec![0.0; spec.param_count()];
        for (layer, lay) in spec.layers.iter().zip(spec.layout()) {
            let limit = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for w in &mut v[lay.weights] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Parameters(v)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn layer_weights<'a>(&'a self, spec: &ModelSpec, l: usize) -> &'a [f64] {
        &self.0[spec.layout()[l].weights.clone()]
    }

    pub fn layer_biases<'a>(&'a self, spec: &ModelSpec, l: usize) -> &'a [f64] {
        &self.0[spec.layout()[l].biases.clone()]
    }

    /// Round every parameter to its layer's weight or bias format.
    pub fn quantized(&self, spec: &ModelSpec) -> Result<Parameters> {
        let mut q = self.0.clone();
        for (layer, lay) in spec.layers.iter().zip(spec.layout()) {
            for w in &mut q[lay.weights] {
                *w = layer.weight_format.quantize(*w)?;
            }
            for b in &mut q[lay.biases] {
                *b = layer.bias_format.quantize(*b)?;
            }
        }
        Ok(Parameters(q))
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl Deref for Parameters {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Parameters {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}
