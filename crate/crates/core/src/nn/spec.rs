use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::FixedPointFormat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = self.apply(x);
                s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Number of entries in a sigmoid lookup table.
pub const SIGMOID_TABLE_SIZE: usize = 256;
/// Sigmoid tables cover pre-activations in `[-SIGMOID_DOMAIN, SIGMOID_DOMAIN)`.
pub const SIGMOID_DOMAIN: f64 = 8.0;
// log2 of entries per unit of pre-activation: 256 / 16 = 16 = 2^4.
const SIGMOID_INDEX_SHIFT: u32 = 4;

/// Build the sigmoid table for an activation format: entry `i` holds the code of
/// `sigmoid` evaluated at the midpoint of bin `i`.
pub fn sigmoid_table(fmt: &FixedPointFormat) -> Vec<i64> {
    let bin = 2.0 * SIGMOID_DOMAIN / SIGMOID_TABLE_SIZE as f64;
    (0..SIGMOID_TABLE_SIZE)
        .map(|i| {
            let x = -SIGMOID_DOMAIN + (i as f64 + 0.5) * bin;
            fmt.code_of(Activation::Sigmoid.apply(x))
                .expect("sigmoid is finite")
        })
        .collect()
}

/// Table index for a real pre-activation (exact for dyadic inputs).
pub fn sigmoid_index_real(pre: f64) -> usize {
    let idx = ((pre + SIGMOID_DOMAIN) * (1u32 << SIGMOID_INDEX_SHIFT) as f64).floor();
    idx.clamp(0.0, (SIGMOID_TABLE_SIZE - 1) as f64) as usize
}

/// Table index for an accumulator with `frac` fractional bits, integer-only.
pub fn sigmoid_index_code(acc: i64, frac: u32) -> usize {
    let v = acc as i128 + ((SIGMOID_DOMAIN as i128) << frac);
    let idx = if frac >= SIGMOID_INDEX_SHIFT {
        v >> (frac - SIGMOID_INDEX_SHIFT)
    } else {
        v << (SIGMOID_INDEX_SHIFT - frac)
    };
    idx.clamp(0, SIGMOID_TABLE_SIZE as i128 - 1) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weight_format: FixedPointFormat,
    pub bias_format: FixedPointFormat,
    pub activation_format: FixedPointFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmoid_table: Option<Vec<i64>>,
}

impl DenseLayerSpec {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weight_format: FixedPointFormat,
        bias_format: FixedPointFormat,
        activation_format: FixedPointFormat,
    ) -> Self {
        let sigmoid_table =
            (activation == Activation::Sigmoid).then(|| sigmoid_table(&activation_format));
        DenseLayerSpec {
            in_dim,
            out_dim,
            activation,
            weight_format,
            bias_format,
            activation_format,
            sigmoid_table,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Offsets of one layer's weights and biases in the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub weights: Range<usize>,
    pub biases: Range<usize>,
}

impl LayerLayout {
    pub fn all(&self) -> Range<usize> {
        self.weights.start..self.biases.end
    }
}

/// Dense network description. Layers `0..encoder_len` form the encoder (the
/// deployed part); the rest form the decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_format: FixedPointFormat,
    pub layers: Vec<DenseLayerSpec>,
    pub encoder_len: usize,
}

/// Activation formats used by the benchmark autoencoder.
pub mod benchmark_formats {
    use crate::fixedpoint::FixedPointFormat;

    pub fn input() -> FixedPointFormat {
        FixedPointFormat::unsigned(16, 1).unwrap()
    }
    pub fn hidden() -> FixedPointFormat {
        FixedPointFormat::unsigned(16, 4).unwrap()
    }
    pub fn latent() -> FixedPointFormat {
        FixedPointFormat::signed(16, 5).unwrap()
    }
    pub fn decoder_hidden() -> FixedPointFormat {
        FixedPointFormat::unsigned(16, 6).unwrap()
    }
    pub fn output() -> FixedPointFormat {
        FixedPointFormat::unsigned(16, 1).unwrap()
    }
}

impl ModelSpec {
    /// Default hidden width: 48*31 + 31 + 31*16 + 16 = 2031 encoder parameters.
    pub const BENCHMARK_HIDDEN: usize = 31;
    pub const BENCHMARK_CELLS: usize = 48;
    pub const BENCHMARK_LATENT: usize = 16;

    /// The benchmark autoencoder: encoder `48 -> hidden -> 16`, decoder
    /// `16 -> hidden -> 48`, with `weight_bits`-bit signed weights and biases
    /// (one integer bit).
    pub fn benchmark(weight_bits: u32, hidden: usize) -> Result<Self> {
        Self::autoencoder(
            Self::BENCHMARK_CELLS,
            hidden,
            Self::BENCHMARK_LATENT,
            FixedPointFormat::signed(weight_bits, 1)?,
        )
    }

    pub fn autoencoder(
        cells: usize,
        hidden: usize,
        latent: usize,
        weight_format: FixedPointFormat,
    ) -> Result<Self> {
        use benchmark_formats as bf;
        let wf = weight_format;
        let spec = ModelSpec {
            input_format: bf::input(),
            layers: vec![
                DenseLayerSpec::new(cells, hidden, Activation::Relu, wf, wf, bf::hidden()),
                DenseLayerSpec::new(hidden, latent, Activation::Linear, wf, wf, bf::latent()),
                DenseLayerSpec::new(
                    latent,
                    hidden,
                    Activation::Relu,
                    wf,
                    wf,
                    bf::decoder_hidden(),
                ),
                DenseLayerSpec::new(hidden, cells, Activation::Sigmoid, wf, wf, bf::output()),
            ],
            encoder_len: 2,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A plain chain of layers sharing one weight format; every layer counts
    /// as encoder.
    pub fn chain(
        dims: &[usize],
        activations: &[Activation],
        input_format: FixedPointFormat,
        weight_format: FixedPointFormat,
        activation_format: FixedPointFormat,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::InvalidModel(
                "chain needs n+1 dims for n activations".into(),
            ));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &a)| {
                DenseLayerSpec::new(
                    d[0],
                    d[1],
                    a,
                    weight_format,
                    weight_format,
                    activation_format,
                )
            })
            .collect::<Vec<_>>();
        let spec = ModelSpec {
            input_format,
            encoder_len: layers.len(),
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if self.layers.is_empty() {
            return bad("model has no layers".into());
        }
        if self.encoder_len == 0 || self.encoder_len > self.layers.len() {
            return bad(format!(
                "encoder_len {} not in [1, {}]",
                self.encoder_len,
                self.layers.len()
            ));
        }
        let mut in_fmt = self.input_format;
        let mut in_dim = self.layers[0].in_dim;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.in_dim == 0 || layer.out_dim == 0 {
                return bad(format!("layer {l} has a zero dimension"));
            }
            if layer.in_dim != in_dim {
                return bad(format!(
                    "layer {l} in_dim {} does not match previous out_dim {in_dim}",
                    layer.in_dim
                ));
            }
            let acc_frac = layer.weight_format.frac_bits() + in_fmt.frac_bits();
            if layer.bias_format.frac_bits() > acc_frac {
                return bad(format!(
                    "layer {l}: bias has {} fractional bits, accumulator only {acc_frac}",
                    layer.bias_format.frac_bits()
                ));
            }
            // Accumulators must stay exact in f64 so fake-quant and bit-exact agree.
            let sum_bits = usize::BITS - layer.in_dim.leading_zeros();
            let acc_bits = layer.weight_format.total_bits()
                + in_fmt.total_bits()
                + sum_bits
                + layer.bias_format.int_bits()
                + 1;
            if acc_bits > 52 {
                return bad(format!(
                    "layer {l}: accumulator needs {acc_bits} bits, more than f64 represents exactly"
                ));
            }
            match (&layer.sigmoid_table, layer.activation) {
                (Some(t), Activation::Sigmoid) => {
                    if t.len() != SIGMOID_TABLE_SIZE {
                        return bad(format!(
                            "layer {l}: sigmoid table has {} entries, expected {SIGMOID_TABLE_SIZE}",
                            t.len()
                        ));
                    }
                    let f = &layer.activation_format;
                    if t.iter().any(|&c| c < f.min_code() || c > f.max_code()) {
                        return bad(format!(
                            "layer {l}: sigmoid table code outside activation format"
                        ));
                    }
                }
                (None, Activation::Sigmoid) => {
                    return bad(format!("layer {l}: sigmoid layer without lookup table"))
                }
                (Some(_), _) => return bad(format!("layer {l}: table on a non-sigmoid layer")),
                (None, _) => {}
            }
            in_fmt = layer.activation_format;
            in_dim = layer.out_dim;
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn latent_dim(&self) -> usize {
        self.layers[self.encoder_len - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayerSpec::param_count).sum()
    }

    /// Parameters of layers `0..encoder_len`.
    pub fn encoder_param_count(&self) -> usize {
        self.layers[..self.encoder_len]
            .iter()
            .map(DenseLayerSpec::param_count)
            .sum()
    }

    /// Flat layout: layer order, each layer's row-major `out x in` weights then biases.
    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let w = off..off + l.in_dim * l.out_dim;
                let b = w.end..w.end + l.out_dim;
                off = b.end;
                LayerLayout {
                    weights: w,
                    biases: b,
                }
            })
            .collect()
    }

    /// Format of the values fed into layer `l`.
    pub fn layer_input_format(&self, l: usize) -> FixedPointFormat {
        if l == 0 {
            self.input_format
        } else {
            self.layers[l - 1].activation_format
        }
    }

    /// Same model with every weight and bias format replaced.
    pub fn with_weight_format(&self, fmt: FixedPointFormat) -> Result<Self> {
        let mut s = self.clone();
        for l in &mut s.layers {
            l.weight_format = fmt;
            l.bias_format = fmt;
        }
        s.validate()?;
        Ok(s)
    }

    /// Spec restricted to the encoder layers.
    pub fn encoder(&self) -> ModelSpec {
        ModelSpec {
            input_format: self.input_format,
            layers: self.layers[..self.encoder_len].to_vec(),
            encoder_len: self.encoder_len,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_shape() {
        let s = ModelSpec::benchmark(6, ModelSpec::BENCHMARK_HIDDEN).unwrap();
        assert_eq!(s.encoder_param_count(), 48 * 31 + 31 + 31 * 16 + 16);
        assert_eq!(s.encoder_param_count(), 2031);
        assert_eq!(s.latent_dim(), 16);
        assert_eq!(s.output_dim(), 48);
        let layout = s.layout();
        assert_eq!(layout.last().unwrap().biases.end, s.param_count());
        for w in [2, 4, 6, 8] {
            ModelSpec::benchmark(w, 31).unwrap();
        }
    }

    #[test]
    fn validation_rejects_broken_chains() {
        let mut s = ModelSpec::benchmark(6, 31).unwrap();
        s.layers[1].in_dim = 30;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::benchmark(6, 31).unwrap();
        s.encoder_len = 0;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::benchmark(6, 31).unwrap();
        s.layers[3].sigmoid_table.as_mut().unwrap().pop();
        assert!(s.validate().is_err());
        let mut s = ModelSpec::benchmark(6, 31).unwrap();
        s.layers[0].sigmoid_table = Some(vec![0; 256]);
        assert!(s.validate().is_err());
        let wide = FixedPointFormat::signed(32, 1).unwrap();
        assert!(ModelSpec::benchmark(6, 31)
            .unwrap()
            .with_weight_format(wide)
            .is_err());
    }

    #[test]
    fn sigmoid_index_paths_agree() {
        for frac in [0u32, 2, 4, 7, 20] {
            let step = 2f64.powi(-(frac as i32));
            for acc in (-300i64 << frac.min(6))..(300i64 << frac.min(6)) {
                let pre = acc as f64 * step;
                assert_eq!(sigmoid_index_code(acc, frac), sigmoid_index_real(pre));
            }
        }
    }

    #[test]
    fn sigmoid_table_is_monotone_and_in_format() {
        let f = benchmark_formats::output();
        let t = sigmoid_table(&f);
        assert_eq!(t.len(), SIGMOID_TABLE_SIZE);
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
        assert!(t.iter().all(|&c| c >= 0 && c <= f.max_code()));
    }
}
