use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{row_vec, Activation, Mode, ModelSpec, Net, QuantizedModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEfficiency {
    pub layer: usize,
    pub neurons: usize,
    pub entropy_bits: f64,
    pub efficiency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub layers: Vec<LayerEfficiency>,
    /// Geometric mean of the per-layer efficiencies.
    pub aggregate: f64,
}

/// Binary on/off pattern of each neuron for each sample.
///
/// ReLU units are on when positive. Sigmoid and linear units are on above
/// their median over the batch; a fixed one-half cut would leave the
/// reconstruction layer, whose cells are small fractions, permanently off.
pub fn binarize(acts: &Array2<f64>, activation: Activation) -> Vec<Vec<bool>> {
    let thresholds: Vec<f64> = match activation {
        Activation::Relu => vec![0.0; acts.ncols()],
        Activation::Sigmoid | Activation::Linear => acts
            .columns()
            .into_iter()
            .map(|c| {
                let mut v = c.to_vec();
                v.sort_by(f64::total_cmp);
                let n = v.len();
                if n == 0 {
                    0.0
                } else if n % 2 == 1 {
                    v[n / 2]
                } else {
                    0.5 * (v[n / 2 - 1] + v[n / 2])
                }
            })
            .collect(),
    };
    acts.rows()
        .into_iter()
        .map(|r| r.iter().zip(&thresholds).map(|(a, t)| a > t).collect())
        .collect()
}

/// Entropy (bits) of the empirical pattern distribution divided by the neuron count.
pub fn pattern_efficiency(patterns: &[Vec<bool>]) -> Result<(f64, f64)> {
    let n = patterns.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let neurons = patterns[0].len();
    if patterns.iter().any(|p| p.len() != neurons) {
        return Err(Error::Shape("ragged activation patterns".into()));
    }
    let mut counts: HashMap<&[bool], usize> = HashMap::new();
    for p in patterns {
        *counts.entry(p.as_slice()).or_default() += 1;
    }
    let mut freqs: Vec<usize> = counts.into_values().collect();
    // Sum in a fixed order so the result does not depend on hash iteration.
    freqs.sort_unstable();
    let h: f64 = freqs
        .iter()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum();
    let h = h.max(0.0);
    let eta = if neurons == 0 {
        0.0
    } else {
        (h / neurons as f64).min(1.0)
    };
    Ok((h, eta))
}

fn geometric_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    if values.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

/// Activations of every layer for every row of `x`.
pub fn all_layer_outputs(
    spec: &ModelSpec,
    theta: &[f64],
    x: &Array2<f64>,
    mode: Mode,
) -> Result<Vec<Array2<f64>>> {
    let mut out: Vec<Array2<f64>> = spec
        .layers
        .iter()
        .map(|l| Array2::zeros((x.nrows(), l.out_dim)))
        .collect();
    let mut store = |i: usize, acts: Vec<Vec<f64>>| {
        for (l, a) in acts.into_iter().enumerate() {
            for (o, v) in a.into_iter().enumerate() {
                out[l][[i, o]] = v;
            }
        }
    };
    if mode == Mode::BitExact {
        let qm = QuantizedModel::from_params(spec, theta)?;
        for (i, row) in x.rows().into_iter().enumerate() {
            let codes = qm.forward_codes(&qm.encode_input(&row_vec(row))?)?;
            let acts = codes
                .iter()
                .zip(&spec.layers)
                .map(|(c, l)| {
                    c.iter()
                        .map(|&v| l.activation_format.decode_code(v))
                        .collect()
                })
                .collect();
            store(i, acts);
        }
    } else {
        let net = Net::new(spec, theta, mode)?;
        for (i, row) in x.rows().into_iter().enumerate() {
            store(i, net.forward(&row_vec(row))?.act);
        }
    }
    Ok(out)
}

pub fn neural_efficiency(
    spec: &ModelSpec,
    theta: &[f64],
    x: &Array2<f64>,
    mode: Mode,
) -> Result<EfficiencyReport> {
    if x.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let outputs = all_layer_outputs(spec, theta, x, mode)?;
    let mut layers = Vec::with_capacity(outputs.len());
    for (l, acts) in outputs.iter().enumerate() {
        let (h, eta) = pattern_efficiency(&binarize(acts, spec.layers[l].activation))?;
        layers.push(LayerEfficiency {
            layer: l,
            neurons: acts.ncols(),
            entropy_bits: h,
            efficiency: eta,
        });
    }
    let etas: Vec<f64> = layers.iter().map(|l| l.efficiency).collect();
    Ok(EfficiencyReport {
        aggregate: geometric_mean(&etas),
        layers,
    })
}
