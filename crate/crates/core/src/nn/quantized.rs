//! Integer-only inference on stored parameter codes, and the JSON model file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::spec::{sigmoid_index_code, Activation, ModelSpec};
use crate::error::{Error, Result};
use crate::fixedpoint::FixedPointFormat;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCodes {
    pub weights: Vec<i64>,
    pub biases: Vec<i64>,
}

/// A model whose parameters are stored as fixed-point codes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct QuantizedModel {
    spec: ModelSpec,
    codes: Vec<LayerCodes>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u32,
    spec: ModelSpec,
    codes: Vec<LayerCodes>,
}

impl TryFrom<ModelFile> for QuantizedModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported model schema version {}",
                f.schema_version
            )));
        }
        QuantizedModel::from_codes(f.spec, f.codes)
    }
}

impl From<QuantizedModel> for ModelFile {
    fn from(m: QuantizedModel) -> Self {
        ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            spec: m.spec,
            codes: m.codes,
        }
    }
}

fn check_codes(codes: &[i64], fmt: &FixedPointFormat, what: &str) -> Result<()> {
    if let Some(c) = codes
        .iter()
        .find(|&&c| c < fmt.min_code() || c > fmt.max_code())
    {
        return Err(Error::InvalidModel(format!(
            "{what} code {c} outside {fmt}"
        )));
    }
    Ok(())
}

impl QuantizedModel {
    pub fn from_codes(spec: ModelSpec, codes: Vec<LayerCodes>) -> Result<Self> {
        spec.validate()?;
        if codes.len() != spec.layers.len() {
            return Err(Error::InvalidModel(format!(
                "{} code blocks for {} layers",
                codes.len(),
                spec.layers.len()
            )));
        }
        for (l, (layer, c)) in spec.layers.iter().zip(&codes).enumerate() {
            if c.weights.len() != layer.in_dim * layer.out_dim || c.biases.len() != layer.out_dim {
                return Err(Error::InvalidModel(format!(
                    "layer {l}: code block sizes do not match {}x{}",
                    layer.out_dim, layer.in_dim
                )));
            }
            check_codes(
                &c.weights,
                &layer.weight_format,
                &format!("layer {l} weight"),
            )?;
            check_codes(&c.biases, &layer.bias_format, &format!("layer {l} bias"))?;
        }
        Ok(QuantizedModel { spec, codes })
    }

    /// Encode real parameters; each value is rounded to its format.
    pub fn from_params(spec: &ModelSpec, theta: &[f64]) -> Result<Self> {
        let theta = Parameters::new(spec, theta.to_vec())?;
        let codes = spec
            .layers
            .iter()
            .zip(spec.layout())
            .map(|(layer, lay)| {
                Ok(LayerCodes {
                    weights: theta[lay.weights]
                        .iter()
                        .map(|&w| layer.weight_format.code_of(w))
                        .collect::<Result<_>>()?,
                    biases: theta[lay.biases]
                        .iter()
                        .map(|&b| layer.bias_format.code_of(b))
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuantizedModel {
            spec: spec.clone(),
            codes,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layer_codes(&self, l: usize) -> &LayerCodes {
        &self.codes[l]
    }

    pub fn layer_codes_mut(&mut self, l: usize) -> &mut LayerCodes {
        &mut self.codes[l]
    }

    /// Decoded parameter values in the flat layout.
    pub fn to_params(&self) -> Parameters {
        let mut v = Vec::with_capacity(self.spec.param_count());
        for (layer, c) in self.spec.layers.iter().zip(&self.codes) {
            v.extend(
                c.weights
                    .iter()
                    .map(|&w| layer.weight_format.decode_code(w)),
            );
            v.extend(c.biases.iter().map(|&b| layer.bias_format.decode_code(b)));
        }
        Parameters::new(&self.spec, v).expect("layout matches spec")
    }

    pub fn encode_input(&self, x: &[f64]) -> Result<Vec<i64>> {
        if x.len() != self.spec.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} values, model expects {}",
                x.len(),
                self.spec.input_dim()
            )));
        }
        x.iter()
            .map(|&v| self.spec.input_format.code_of(v))
            .collect()
    }

    /// Codes produced by every layer.
    pub fn forward_codes(&self, input: &[i64]) -> Result<Vec<Vec<i64>>> {
        self.forward_codes_layers(input, self.spec.layers.len())
    }

    pub fn forward_codes_layers(&self, input: &[i64], n_layers: usize) -> Result<Vec<Vec<i64>>> {
        if input.len() != self.spec.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} codes, model expects {}",
                input.len(),
                self.spec.input_dim()
            )));
        }
        let mut outs: Vec<Vec<i64>> = Vec::with_capacity(n_layers);
        for l in 0..n_layers.min(self.spec.layers.len()) {
            let x = if l == 0 { input } else { &outs[l - 1] };
            let y = self.layer_forward(l, x);
            outs.push(y);
        }
        Ok(outs)
    }

    /// Run layers `start..end` on codes entering layer `start`; returns the
    /// codes out of layer `end - 1`.
    pub fn forward_range(&self, start: usize, end: usize, input: &[i64]) -> Vec<i64> {
        let mut x = input.to_vec();
        for l in start..end {
            x = self.layer_forward(l, &x);
        }
        x
    }

    /// One dense layer on integer codes: 64-bit products and accumulation,
    /// bias aligned by left shift, activation on the accumulator, then a
    /// single requantization to the activation format.
    pub fn layer_forward(&self, l: usize, x: &[i64]) -> Vec<i64> {
        (0..self.spec.layers[l].out_dim)
            .map(|o| self.neuron_forward(l, o, x, None))
            .collect()
    }

    /// Output code of neuron `o` in layer `l`. `patch = Some((p, code))`
    /// substitutes the layer parameter at index `p` (weights row-major, then
    /// biases) without touching the stored codes.
    pub fn neuron_forward(
        &self,
        l: usize,
        o: usize,
        x: &[i64],
        patch: Option<(usize, i64)>,
    ) -> i64 {
        let layer = &self.spec.layers[l];
        let c = &self.codes[l];
        let acc_frac =
            layer.weight_format.frac_bits() + self.spec.layer_input_format(l).frac_bits();
        let bias_shift = acc_frac - layer.bias_format.frac_bits();
        let fmt = &layer.activation_format;
        let start = o * layer.in_dim;
        let row = &c.weights[start..start + layer.in_dim];
        let mut acc: i64 = row.iter().zip(x).map(|(&w, &a)| w * a).sum();
        let mut bias = c.biases[o];
        match patch {
            Some((p, code)) if (start..start + layer.in_dim).contains(&p) => {
                acc += (code - row[p - start]) * x[p - start];
            }
            Some((p, code)) if p == layer.in_dim * layer.out_dim + o => bias = code,
            _ => {}
        }
        acc += bias << bias_shift;
        match layer.activation {
            Activation::Relu => fmt.requantize(acc.max(0), acc_frac),
            Activation::Linear => fmt.requantize(acc, acc_frac),
            Activation::Sigmoid => {
                let table = layer
                    .sigmoid_table
                    .as_ref()
                    .expect("validated sigmoid layer has a table");
                table[sigmoid_index_code(acc, acc_frac)]
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::forward::{forward, Mode, Net};
    use crate::nn::spec::DenseLayerSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_returns_quantized_input() {
        let wf = FixedPointFormat::signed(8, 2).unwrap();
        let af = FixedPointFormat::signed(12, 4).unwrap();
        let inf = FixedPointFormat::signed(8, 3).unwrap();
        let spec = ModelSpec::chain(&[3, 3], &[Activation::Linear], inf, wf, af).unwrap();
        let mut theta = vec![0.0; spec.param_count()];
        for i in 0..3 {
            theta[i * 3 + i] = 1.0;
        }
        let x = [0.3, -1.7, 2.05];
        let out = forward(&spec, &theta, &x, Mode::FakeQuant).unwrap();
        for (o, &xi) in out[0].iter().zip(&x) {
            assert_eq!(*o, inf.quantize(xi).unwrap());
        }
        let exact = forward(&spec, &theta, &x, Mode::BitExact).unwrap();
        assert_eq!(exact, out);
    }

    #[test]
    fn relu_of_negative_preactivations_is_zero() {
        let f = FixedPointFormat::signed(8, 2).unwrap();
        let spec = ModelSpec::chain(&[2, 2], &[Activation::Relu], f, f, f).unwrap();
        let theta = vec![-1.0, 0.0, 0.0, -1.0, -0.5, -0.5];
        for mode in [Mode::Float, Mode::FakeQuant, Mode::BitExact] {
            let out = forward(&spec, &theta, &[0.5, 1.0], mode).unwrap();
            assert_eq!(out[0], vec![0.0, 0.0]);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let spec = ModelSpec::benchmark(6, 31).unwrap();
        let theta = Parameters::init(&spec, 0);
        for mode in [Mode::Float, Mode::FakeQuant, Mode::BitExact] {
            assert!(matches!(
                forward(&spec, &theta, &[0.0; 47], mode),
                Err(Error::Shape(_))
            ));
        }
        assert!(Net::new(&spec, &theta[..10], Mode::Float).is_err());
    }

    #[test]
    fn fake_quant_equals_bit_exact_on_benchmark() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for width in [2, 4, 6, 8] {
            let spec = ModelSpec::benchmark(width, 31).unwrap();
            // Wider-than-init parameters so saturation paths are exercised too.
            let theta: Vec<f64> = (0..spec.param_count())
                .map(|_| rng.gen_range(-1.2..1.2))
                .collect();
            let qm = QuantizedModel::from_params(&spec, &theta).unwrap();
            let net = Net::new(&spec, &theta, Mode::FakeQuant).unwrap();
            for _ in 0..200 {
                let x: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..0.2)).collect();
                let fake = net.forward(&x).unwrap();
                let codes = qm.forward_codes(&qm.encode_input(&x).unwrap()).unwrap();
                for (l, layer) in spec.layers.iter().enumerate() {
                    for (c, v) in codes[l].iter().zip(&fake.act[l]) {
                        assert_eq!(layer.activation_format.decode_code(*c), *v);
                    }
                }
            }
        }
    }

    #[test]
    fn model_file_roundtrip_and_validation() {
        let spec = ModelSpec::benchmark(6, 31).unwrap();
        let theta = Parameters::init(&spec, 5);
        let qm = QuantizedModel::from_params(&spec, &theta).unwrap();
        let json = qm.to_json().unwrap();
        let back = QuantizedModel::from_json(&json).unwrap();
        assert_eq!(back, qm);
        assert_eq!(back.to_params(), theta.quantized(&spec).unwrap());

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["codes"][0]["weights"][0] = serde_json::json!(99);
        assert!(QuantizedModel::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["codes"][1]["biases"].as_array_mut().unwrap().pop();
        assert!(QuantizedModel::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["schema_version"] = serde_json::json!(7);
        assert!(QuantizedModel::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn sigmoid_layer_uses_table_in_both_paths() {
        let f = FixedPointFormat::signed(8, 3).unwrap();
        let out = FixedPointFormat::unsigned(10, 1).unwrap();
        let spec = ModelSpec {
            input_format: f,
            layers: vec![DenseLayerSpec::new(1, 1, Activation::Sigmoid, f, f, out)],
            encoder_len: 1,
        };
        for x in [-9.0, -3.3, -0.01, 0.0, 0.7, 7.99] {
            let fake = forward(&spec, &[1.0, 0.0], &[x], Mode::FakeQuant).unwrap();
            let exact = forward(&spec, &[1.0, 0.0], &[x], Mode::BitExact).unwrap();
            assert_eq!(fake, exact);
            let float = forward(&spec, &[1.0, 0.0], &[x], Mode::Float).unwrap();
            assert!((fake[0][0] - float[0][0]).abs() < 0.03);
        }
    }
}
