use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::Mode;
use super::grad::{loss, loss_and_grad, Batch};
use super::params::Parameters;
use super::spec::ModelSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Fake-quantized forward with straight-through gradients.
    pub qat: bool,
    /// Fraction of samples held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            loss: LossKind::Mse,
            qat: true,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lr {} must be >= 0",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument(format!(
                "val_fraction {} not in [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        if self.qat {
            Mode::FakeQuant
        } else {
            Mode::Float
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub history: Vec<EpochRecord>,
}

// Keeps the split stream independent of the shuffling stream for the same seed.
const SPLIT_SALT: u64 = 0x5eed_5b11_7000_0001;

/// Deterministic train/validation split of `n` rows.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    idx.shuffle(&mut rng);
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Per-minibatch objective: returns the objective value and its gradient.
pub(crate) trait StepObjective {
    fn step(
        &mut self,
        spec: &ModelSpec,
        theta: &[f64],
        batch: &Batch,
        mode: Mode,
        epoch: usize,
    ) -> Result<(f64, Vec<f64>)>;
}

pub(crate) struct MseStep;

impl StepObjective for MseStep {
    fn step(
        &mut self,
        spec: &ModelSpec,
        theta: &[f64],
        batch: &Batch,
        mode: Mode,
        _epoch: usize,
    ) -> Result<(f64, Vec<f64>)> {
        loss_and_grad(spec, theta, batch, mode)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn update(&mut self, theta: &mut [f64], g: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

pub(crate) fn train_with<S: StepObjective>(
    spec: &ModelSpec,
    data: &Batch,
    cfg: &TrainConfig,
    init: Parameters,
    objective: &mut S,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mode = cfg.mode();
    let (mut train_idx, val_idx) = split_indices(data.len(), cfg.val_fraction, cfg.seed);
    let val = (!val_idx.is_empty()).then(|| data.select(&val_idx));
    let mut theta = init;
    let mut adam = Adam::new(theta.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let (l, g) = objective.step(spec, &theta, &batch, mode, epoch)?;
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch, loss: l });
            }
            adam.update(&mut theta, &g, cfg);
            sum += l * chunk.len() as f64;
            count += chunk.len();
        }
        let train_loss = sum / count as f64;
        let val_loss = match &val {
            Some(v) => Some(loss(spec, &theta, v, mode)?),
            None => None,
        };
        if let Some(v) = val_loss.filter(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch, loss: v });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
    }
    Ok(TrainOutcome {
        params: theta,
        history,
    })
}

/// Train from a seeded Glorot initialization.
pub fn train(spec: &ModelSpec, data: &Batch, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(spec, data, cfg, Parameters::init(spec, cfg.seed))
}

pub fn train_from(
    spec: &ModelSpec,
    data: &Batch,
    cfg: &TrainConfig,
    init: Parameters,
) -> Result<TrainOutcome> {
    train_with(spec, data, cfg, init, &mut MseStep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::FixedPointFormat;
    use crate::nn::spec::Activation;
    use ndarray::Array2;
    use rand::Rng;

    fn line_data() -> (ModelSpec, Batch) {
        let f = FixedPointFormat::signed(16, 4).unwrap();
        let spec = ModelSpec::chain(&[1, 1], &[Activation::Linear], f, f, f).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((64, 1), |_| rng.gen_range(-1.0..1.0));
        let y = x.mapv(|v| 2.0 * v);
        (spec, Batch::new(x, y).unwrap())
    }

    #[test]
    fn zero_lr_keeps_initialization() {
        let (spec, data) = line_data();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 3,
            qat: false,
            ..Default::default()
        };
        let out = train(&spec, &data, &cfg).unwrap();
        assert_eq!(out.params, Parameters::init(&spec, cfg.seed));
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn linear_regression_converges() {
        let (spec, data) = line_data();
        let cfg = TrainConfig {
            lr: 0.05,
            epochs: 300,
            batch_size: 16,
            qat: false,
            ..Default::default()
        };
        let out = train(&spec, &data, &cfg).unwrap();
        assert!((out.params[0] - 2.0).abs() <= 1e-3, "w = {}", out.params[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let (spec, data) = line_data();
        let cfg = TrainConfig {
            epochs: 5,
            qat: true,
            ..Default::default()
        };
        let a = train(&spec, &data, &cfg).unwrap();
        let b = train(&spec, &data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_reports_epoch() {
        let (spec, data) = line_data();
        let bad = Batch::new(data.inputs.clone(), data.targets.mapv(|_| f64::NAN)).unwrap();
        let cfg = TrainConfig {
            qat: false,
            ..Default::default()
        };
        assert!(matches!(
            train(&spec, &bad, &cfg),
            Err(Error::Divergence { epoch: 0, .. })
        ));
    }

    #[test]
    fn config_validation() {
        let (spec, data) = line_data();
        let cfg = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(train(&spec, &data, &cfg).is_err());
        let cfg = TrainConfig {
            lr: -1.0,
            ..Default::default()
        };
        assert!(train(&spec, &data, &cfg).is_err());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (a, b) = split_indices(50, 0.2, 9);
        assert_eq!((a.len(), b.len()), (40, 10));
        let (a2, b2) = split_indices(50, 0.2, 9);
        assert_eq!((a.clone(), b.clone()), (a2, b2));
        let mut all: Vec<_> = a.into_iter().chain(b).collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }
}
