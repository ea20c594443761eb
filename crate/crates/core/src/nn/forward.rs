use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::quantized::QuantizedModel;
use super::spec::{sigmoid_index_real, Activation, ModelSpec};
use crate::error::{Error, Result};

/// Arithmetic used by a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Plain f64 arithmetic, no quantization.
    Float,
    /// Real arithmetic with weights, biases, inputs and activations rounded to
    /// their formats; gradients use the straight-through estimator.
    FakeQuant,
    /// Integer-only arithmetic on codes.
    BitExact,
}

/// Per-sample record of a real-valued forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// Network input after input quantization (fake-quant) or as given (float).
    pub input: Vec<f64>,
    /// Straight-through mask per input: false where input quantization saturated.
    pub input_pass: Vec<bool>,
    pub pre: Vec<Vec<f64>>,
    pub act: Vec<Vec<f64>>,
    /// Straight-through mask per activation: false where the activation saturated.
    pub act_pass: Vec<Vec<bool>>,
    /// Derivative of each activation as used by the backward pass; zero
    /// where saturated.
    pub slope: Vec<Vec<f64>>,
}

impl Trace {
    /// Which pre-activations are positive, per layer.
    pub fn relu_gates(&self) -> Vec<Vec<bool>> {
        self.pre
            .iter()
            .map(|p| p.iter().map(|&z| z > 0.0).collect())
            .collect()
    }

    pub fn output(&self) -> &[f64] {
        self.act.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Values entering layer `l`.
    pub fn layer_input(&self, l: usize) -> &[f64] {
        if l == 0 {
            &self.input
        } else {
            &self.act[l - 1]
        }
    }
}

/// A network with its effective (possibly fake-quantized) parameters resolved,
/// ready for repeated forward and backward passes.
#[derive(Clone, Debug)]
pub struct Net<'a> {
    pub spec: &'a ModelSpec,
    pub quant: bool,
    /// Effective parameters used in arithmetic.
    pub params: Vec<f64>,
    /// Straight-through mask per parameter (all true in float mode).
    pub param_pass: Vec<bool>,
}

impl<'a> Net<'a> {
    pub fn new(spec: &'a ModelSpec, theta: &[f64], mode: Mode) -> Result<Self> {
        if theta.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, model needs {}",
                theta.len(),
                spec.param_count()
            )));
        }
        let quant = match mode {
            Mode::Float => false,
            Mode::FakeQuant => true,
            Mode::BitExact => {
                return Err(Error::InvalidArgument(
                    "bit-exact mode has no real-valued network; use QuantizedModel".into(),
                ))
            }
        };
        let mut params = theta.to_vec();
        let mut param_pass = vec![true; theta.len()];
        if quant {
            for (layer, lay) in spec.layers.iter().zip(spec.layout()) {
                for (range, fmt) in [
                    (lay.weights, layer.weight_format),
                    (lay.biases, layer.bias_format),
                ] {
                    for i in range {
                        param_pass[i] = fmt.in_range(theta[i]);
                        params[i] = fmt.quantize(theta[i])?;
                    }
                }
            }
        }
        Ok(Net {
            spec,
            quant,
            params,
            param_pass,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Trace> {
        self.forward_layers(x, self.spec.layers.len())
    }

    /// Forward pass through layers `0..n_layers` only.
    pub fn forward_layers(&self, x: &[f64], n_layers: usize) -> Result<Trace> {
        self.forward_gated(x, n_layers, None)
    }

    /// Forward pass with every ReLU replaced by the fixed gate `gates[l][o]`
    /// (pass `z` or output 0), so the network is smooth in the parameters
    /// around a given activation pattern. Non-ReLU layers ignore their gates.
    pub fn forward_gated(
        &self,
        x: &[f64],
        n_layers: usize,
        gates: Option<&[Vec<bool>]>,
    ) -> Result<Trace> {
        let spec = self.spec;
        if x.len() != spec.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} values, model expects {}",
                x.len(),
                spec.input_dim()
            )));
        }
        let input_pass: Vec<bool> = if self.quant {
            x.iter().map(|&v| spec.input_format.in_range(v)).collect()
        } else {
            vec![true; x.len()]
        };
        let input = if self.quant {
            x.iter()
                .map(|&v| spec.input_format.quantize(v))
                .collect::<Result<Vec<_>>>()?
        } else {
            x.to_vec()
        };
        let layout = spec.layout();
        let mut pre = Vec::with_capacity(n_layers);
        let mut act: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut act_pass = Vec::with_capacity(n_layers);
        let mut slope = Vec::with_capacity(n_layers);
        for (l, layer) in spec.layers.iter().enumerate().take(n_layers) {
            let a_in = if l == 0 { &input } else { &act[l - 1] };
            let w = &self.params[layout[l].weights.clone()];
            let b = &self.params[layout[l].biases.clone()];
            let mut z = Vec::with_capacity(layer.out_dim);
            for o in 0..layer.out_dim {
                let row = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let s: f64 = row.iter().zip(a_in).map(|(w, a)| w * a).sum();
                z.push(s + b[o]);
            }
            let gate = gates
                .map(|g| &g[l])
                .filter(|_| layer.activation == Activation::Relu);
            let mut a = Vec::with_capacity(layer.out_dim);
            let mut pass = Vec::with_capacity(layer.out_dim);
            let mut d = Vec::with_capacity(layer.out_dim);
            for (o, &zo) in z.iter().enumerate() {
                let (v, dv) = match gate {
                    Some(g) if g[o] => (zo, 1.0),
                    Some(_) => (0.0, 0.0),
                    None => (layer.activation.apply(zo), layer.activation.derivative(zo)),
                };
                if !self.quant {
                    a.push(v);
                    pass.push(true);
                    d.push(dv);
                    continue;
                }
                match (layer.activation, &layer.sigmoid_table) {
                    (Activation::Sigmoid, Some(table)) => {
                        let code = table[sigmoid_index_real(zo)];
                        a.push(layer.activation_format.decode_code(code));
                        pass.push(true);
                        d.push(dv);
                    }
                    _ => {
                        let fmt = &layer.activation_format;
                        let ok = fmt.in_range(v);
                        pass.push(ok);
                        d.push(if ok { dv } else { 0.0 });
                        a.push(fmt.quantize(v)?);
                    }
                }
            }
            pre.push(z);
            act.push(a);
            act_pass.push(pass);
            slope.push(d);
        }
        Ok(Trace {
            input,
            input_pass,
            pre,
            act,
            act_pass,
            slope,
        })
    }

    /// Backpropagate `d_out` (gradient w.r.t. the output of layer `n_layers-1`)
    /// through layers `0..n_layers`, adding parameter gradients into `grad`
    /// (gradients w.r.t. the effective parameters) and returning the gradient
    /// w.r.t. the network input.
    pub fn backward(
        &self,
        trace: &Trace,
        d_out: &[f64],
        n_layers: usize,
        grad: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let spec = self.spec;
        let layout = spec.layout();
        let mut grad = grad;
        let mut d_act = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let layer = &spec.layers[l];
            let d_pre: Vec<f64> = (0..layer.out_dim)
                .map(|o| d_act[o] * trace.slope[l][o])
                .collect();
            let a_in = trace.layer_input(l);
            let w = &self.params[layout[l].weights.clone()];
            if let Some(g) = grad.as_deref_mut() {
                let wr = layout[l].weights.clone();
                let br = layout[l].biases.clone();
                let (gw, gb) = g[wr.start..br.end].split_at_mut(wr.len());
                for (o, &dp) in d_pre.iter().enumerate() {
                    if dp == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gi, &ai) in row.iter_mut().zip(a_in) {
                        *gi += dp * ai;
                    }
                    gb[o] += dp;
                }
            }
            let mut d_in = vec![0.0; layer.in_dim];
            for (o, &dp) in d_pre.iter().enumerate() {
                if dp == 0.0 {
                    continue;
                }
                let row = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (di, &wi) in d_in.iter_mut().zip(row) {
                    *di += dp * wi;
                }
            }
            d_act = d_in;
        }
        // Straight-through across input quantization.
        for (d, &pass) in d_act.iter_mut().zip(&trace.input_pass) {
            if !pass {
                *d = 0.0;
            }
        }
        d_act
    }
}

/// Forward one sample; returns each layer's activations (the last is the output).
pub fn forward(spec: &ModelSpec, theta: &[f64], x: &[f64], mode: Mode) -> Result<Vec<Vec<f64>>> {
    match mode {
        Mode::BitExact => {
            let qm = QuantizedModel::from_params(spec, theta)?;
            let codes = qm.forward_codes(&qm.encode_input(x)?)?;
            Ok(codes
                .iter()
                .zip(&spec.layers)
                .map(|(c, layer)| {
                    c.iter()
                        .map(|&v| layer.activation_format.decode_code(v))
                        .collect()
                })
                .collect())
        }
        _ => Ok(Net::new(spec, theta, mode)?.forward(x)?.act),
    }
}

/// Activations of layer `layer` for every row of `x` (`layer = n_layers-1` gives the output).
pub fn layer_outputs(
    spec: &ModelSpec,
    theta: &[f64],
    x: &Array2<f64>,
    mode: Mode,
    layer: usize,
) -> Result<Array2<f64>> {
    if layer >= spec.layers.len() {
        return Err(Error::InvalidArgument(format!("no layer {layer}")));
    }
    let width = spec.layers[layer].out_dim;
    let mut out = Array2::zeros((x.nrows(), width));
    match mode {
        Mode::BitExact => {
            let qm = QuantizedModel::from_params(spec, theta)?;
            let fmt = spec.layers[layer].activation_format;
            for (i, row) in x.rows().into_iter().enumerate() {
                let codes = qm.forward_codes_layers(&qm.encode_input(&row_vec(row))?, layer + 1)?;
                for (o, &c) in codes[layer].iter().enumerate() {
                    out[[i, o]] = fmt.decode_code(c);
                }
            }
        }
        _ => {
            let net = Net::new(spec, theta, mode)?;
            for (i, row) in x.rows().into_iter().enumerate() {
                let t = net.forward_layers(&row_vec(row), layer + 1)?;
                for (o, &v) in t.act[layer].iter().enumerate() {
                    out[[i, o]] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Network outputs for every row of `x`.
pub fn predict(
    spec: &ModelSpec,
    theta: &[f64],
    x: &Array2<f64>,
    mode: Mode,
) -> Result<Array2<f64>> {
    layer_outputs(spec, theta, x, mode, spec.layers.len() - 1)
}

pub(crate) fn row_vec(row: ArrayView1<f64>) -> Vec<f64> {
    row.iter().copied().collect()
}
