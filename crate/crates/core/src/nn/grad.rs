use ndarray::Array2;

use super::forward::{row_vec, Mode, Net};
use super::spec::ModelSpec;
use crate::error::{Error, Result};

/// Inputs paired with regression targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        Ok(Batch { inputs, targets })
    }

    /// Reconstruction batch: targets are the inputs.
    pub fn autoencoder(x: Array2<f64>) -> Self {
        Batch {
            targets: x.clone(),
            inputs: x,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select(ndarray::Axis(0), rows),
            targets: self.targets.select(ndarray::Axis(0), rows),
        }
    }
}

fn check_batch(spec: &ModelSpec, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.inputs.ncols() != spec.input_dim() || batch.targets.ncols() != spec.output_dim() {
        return Err(Error::Shape(format!(
            "batch is {}->{}, model is {}->{}",
            batch.inputs.ncols(),
            batch.targets.ncols(),
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    Ok(())
}

/// Mean squared error over samples and output cells.
pub fn loss(spec: &ModelSpec, theta: &[f64], batch: &Batch, mode: Mode) -> Result<f64> {
    loss_gated(spec, theta, batch, mode, None)
}

/// Per-sample ReLU gates, indexed `[sample][layer][neuron]`.
pub(crate) type Gates = [Vec<Vec<bool>>];

pub(crate) fn loss_gated(
    spec: &ModelSpec,
    theta: &[f64],
    batch: &Batch,
    mode: Mode,
    gates: Option<&Gates>,
) -> Result<f64> {
    check_batch(spec, batch)?;
    let net = Net::new(spec, theta, mode)?;
    let n_layers = spec.layers.len();
    let mut total = 0.0;
    for (i, (x, t)) in batch
        .inputs
        .rows()
        .into_iter()
        .zip(batch.targets.rows())
        .enumerate()
    {
        let trace = net.forward_gated(&row_vec(x), n_layers, gates.map(|g| g[i].as_slice()))?;
        total += trace
            .output()
            .iter()
            .zip(t)
            .map(|(y, t)| (y - t) * (y - t))
            .sum::<f64>();
    }
    Ok(total / (batch.len() * spec.output_dim()) as f64)
}

/// MSE and its gradient with respect to `theta`.
///
/// In fake-quant mode the gradient uses the straight-through estimator: it is
/// the gradient at the quantized parameters, zeroed for parameters outside
/// their format's range and through saturated activations.
pub fn loss_and_grad(
    spec: &ModelSpec,
    theta: &[f64],
    batch: &Batch,
    mode: Mode,
) -> Result<(f64, Vec<f64>)> {
    loss_and_grad_gated(spec, theta, batch, mode, None)
}

pub(crate) fn loss_and_grad_gated(
    spec: &ModelSpec,
    theta: &[f64],
    batch: &Batch,
    mode: Mode,
    gates: Option<&Gates>,
) -> Result<(f64, Vec<f64>)> {
    check_batch(spec, batch)?;
    let net = Net::new(spec, theta, mode)?;
    let scale = 1.0 / (batch.len() * spec.output_dim()) as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut total = 0.0;
    let n_layers = spec.layers.len();
    for (i, (x, t)) in batch
        .inputs
        .rows()
        .into_iter()
        .zip(batch.targets.rows())
        .enumerate()
    {
        let trace = net.forward_gated(&row_vec(x), n_layers, gates.map(|g| g[i].as_slice()))?;
        let d_out: Vec<f64> = trace
            .output()
            .iter()
            .zip(t)
            .map(|(y, t)| {
                total += (y - t) * (y - t);
                2.0 * (y - t) * scale
            })
            .collect();
        net.backward(&trace, &d_out, n_layers, Some(&mut grad));
    }
    for (g, &pass) in grad.iter_mut().zip(&net.param_pass) {
        if !pass {
            *g = 0.0;
        }
    }
    Ok((total * scale, grad))
}
