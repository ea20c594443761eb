//! Jacobian-norm regularized training and noise-robustness evaluation.
//!
//! The regularizer is `R = mean_x ‖J(x)‖²_F` where `J` is the Jacobian of the
//! encoder (or the full network) with respect to its input. For a chain of
//! ReLU/linear layers `J = D_L W_L ⋯ D_1 W_1 M`, where the `D_l` are the
//! activation masks and `M` the input pass mask. With the masks held fixed,
//! `∂R/∂W_l = 2 A_lᵀ J B_lᵀ`, `A_l` and `B_l` being the products after and
//! before layer `l`; biases do not enter `J`.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{add_noise, GridGeometry, NoiseSpec};
use crate::error::{Error, Result};
use crate::metrics::emd_rows;
use crate::nn::{
    loss_and_grad, predict, row_vec, train_with, Activation, Batch, EpochRecord, Mode, ModelSpec,
    Net, Parameters, StepObjective, TrainConfig,
};

/// Largest output dimension for the exact estimator.
pub const EXACT_MAX_OUTPUTS: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacMode {
    #[default]
    ExactJacobian,
    /// Unbiased estimate from random output projections.
    Projection,
}

/// Which map the Jacobian is taken of.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacTarget {
    /// Inputs to latent code.
    #[default]
    Encoder,
    Full,
}

impl JacTarget {
    pub fn layers(self, spec: &ModelSpec) -> usize {
        match self {
            JacTarget::Encoder => spec.encoder_len,
            JacTarget::Full => spec.layers.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JacRegConfig {
    pub lambda: f64,
    pub mode: JacMode,
    pub n_proj: usize,
    pub target: JacTarget,
    /// Seed for projection directions.
    pub seed: u64,
}

impl Default for JacRegConfig {
    fn default() -> Self {
        JacRegConfig {
            lambda: 0.0,
            mode: JacMode::ExactJacobian,
            n_proj: 1,
            target: JacTarget::Encoder,
            seed: 0,
        }
    }
}

impl JacRegConfig {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda {} must be >= 0",
                self.lambda
            )));
        }
        if self.mode == JacMode::Projection && self.n_proj == 0 {
            return Err(Error::InvalidArgument("n_proj must be >= 1".into()));
        }
        let n = self.target.layers(spec);
        let out = spec.layers[n - 1].out_dim;
        if self.mode == JacMode::ExactJacobian && out > EXACT_MAX_OUTPUTS {
            return Err(Error::InvalidArgument(format!(
                "exact Jacobian needs at most {EXACT_MAX_OUTPUTS} outputs, map has {out}"
            )));
        }
        if let Some(l) = spec.layers[..n]
            .iter()
            .position(|l| l.activation == Activation::Sigmoid)
        {
            return Err(Error::Unsupported(format!(
                "Jacobian regularization through sigmoid layer {l}"
            )));
        }
        Ok(())
    }
}

/// Input Jacobian of layers `0..n_layers` at `x`, one reverse pass per output.
pub fn jacobian_exact(
    spec: &ModelSpec,
    theta: &[f64],
    x: &[f64],
    mode: Mode,
    n_layers: usize,
) -> Result<Array2<f64>> {
    if n_layers == 0 || n_layers > spec.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot take {n_layers} layers"
        )));
    }
    let net = Net::new(spec, theta, mode)?;
    let trace = net.forward_layers(x, n_layers)?;
    let out = spec.layers[n_layers - 1].out_dim;
    let mut j = Array2::zeros((out, spec.input_dim()));
    let mut e = vec![0.0; out];
    for i in 0..out {
        e[i] = 1.0;
        let row = net.backward(&trace, &e, n_layers, None);
        e[i] = 0.0;
        j.row_mut(i).assign(&Array1::from(row));
    }
    Ok(j)
}

fn layer_matrix(net: &Net, l: usize) -> Array2<f64> {
    let layer = &net.spec.layers[l];
    let lay = &net.spec.layout()[l];
    Array2::from_shape_vec(
        (layer.out_dim, layer.in_dim),
        net.params[lay.weights.clone()].to_vec(),
    )
    .expect("layout matches dims")
}

fn scale_rows(m: &Array2<f64>, d: &Array1<f64>) -> Array2<f64> {
    let mut m = m.clone();
    for (mut r, &s) in m.rows_mut().into_iter().zip(d) {
        r *= s;
    }
    m
}

fn scale_cols(m: &Array2<f64>, d: &Array1<f64>) -> Array2<f64> {
    let mut m = m.clone();
    for (mut c, &s) in m.columns_mut().into_iter().zip(d) {
        c *= s;
    }
    m
}

/// `R(x) = tr(Jᵀ P J)` and its gradient (accumulated into `grad` scaled by
/// `weight`) for one input, with `P = proj` (identity if `None`).
fn sample_reg(
    net: &Net,
    weights: &[Array2<f64>],
    x: &[f64],
    n_layers: usize,
    proj: Option<&Array2<f64>>,
    grad: &mut [f64],
    weight: f64,
) -> Result<f64> {
    let spec = net.spec;
    let trace = net.forward_layers(x, n_layers)?;
    let masks: Vec<Array1<f64>> = trace
        .slope
        .iter()
        .take(n_layers)
        .map(|d| Array1::from_vec(d.clone()))
        .collect();
    let input_mask = Array1::from_iter(trace.input_pass.iter().map(|&p| if p { 1.0 } else { 0.0 }));
    // before[l] = D_{l-1} W_{l-1} ⋯ M, the map into layer l's input.
    let mut before: Vec<Array2<f64>> = Vec::with_capacity(n_layers + 1);
    before.push(Array2::from_diag(&input_mask));
    for l in 0..n_layers {
        let next = scale_rows(&weights[l].dot(&before[l]), &masks[l]);
        before.push(next);
    }
    let j = &before[n_layers];
    let pj = match proj {
        Some(p) => p.dot(j),
        None => j.clone(),
    };
    let r: f64 = j.iter().zip(pj.iter()).map(|(a, b)| a * b).sum();
    // after = A_l = D_{L} W_{L} ⋯ W_{l+1} D_l, built from the top down.
    let layout = spec.layout();
    let mut after = Array2::from_diag(&masks[n_layers - 1]);
    for l in (0..n_layers).rev() {
        let g = after.t().dot(&pj).dot(&before[l].t());
        let wr = layout[l].weights.clone();
        for (gi, v) in grad[wr].iter_mut().zip(g.iter()) {
            *gi += 2.0 * weight * v;
        }
        if l > 0 {
            after = scale_cols(&after.dot(&weights[l]), &masks[l - 1]);
        }
    }
    Ok(r)
}

fn random_projection(rng: &mut ChaCha8Rng, c: usize, n_proj: usize) -> Array2<f64> {
    let mut p = Array2::zeros((c, c));
    for _ in 0..n_proj {
        let v: Vec<f64> = (0..c).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for i in 0..c {
            for k in 0..c {
                p[[i, k]] += v[i] * v[k] / (n * n);
            }
        }
    }
    p * (c as f64 / n_proj as f64)
}

fn jacfrob_grad_rng(
    spec: &ModelSpec,
    theta: &[f64],
    x: &Array2<f64>,
    mode: Mode,
    cfg: &JacRegConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate(spec)?;
    if x.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let n_layers = cfg.target.layers(spec);
    let net = Net::new(spec, theta, mode)?;
    let weights: Vec<Array2<f64>> = (0..n_layers).map(|l| layer_matrix(&net, l)).collect();
    let c = spec.layers[n_layers - 1].out_dim;
    let weight = 1.0 / x.nrows() as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut total = 0.0;
    for row in x.rows() {
        let proj = match cfg.mode {
            JacMode::ExactJacobian => None,
            JacMode::Projection => Some(random_projection(rng, c, cfg.n_proj)),
        };
        total += sample_reg(
            &net,
            &weights,
            &row_vec(row),
            n_layers,
            proj.as_ref(),
            &mut grad,
            weight,
        )?;
    }
    for (g, &pass) in grad.iter_mut().zip(&net.param_pass) {
        if !pass {
            *g = 0.0;
        }
    }
    Ok((total * weight, grad))
}

/// `R = mean_x ‖J(x)‖²_F` over the rows of `x` and its gradient in `theta`,
/// holding activation masks fixed. Projection mode replaces `‖J‖²_F` with
/// `C ‖vᵀJ‖²` averaged over `n_proj` directions uniform on the unit sphere.
pub fn jacfrob_grad(
    spec: &ModelSpec,
    theta: &[f64],
    x: &Array2<f64>,
    mode: Mode,
    cfg: &JacRegConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    jacfrob_grad_rng(spec, theta, x, mode, cfg, &mut rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub mse: f64,
    /// NaN when lambda is zero; the penalty is then not evaluated.
    pub reg: f64,
    /// `mse + (lambda / 2) * reg`, or `mse` when lambda is zero.
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustOutcome {
    pub params: Parameters,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepLog>,
}

struct JacStep<'a> {
    cfg: &'a JacRegConfig,
    rng: ChaCha8Rng,
    steps: Vec<StepLog>,
}

impl StepObjective for JacStep<'_> {
    fn step(
        &mut self,
        spec: &ModelSpec,
        theta: &[f64],
        batch: &Batch,
        mode: Mode,
        epoch: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let (mse, mut g) = loss_and_grad(spec, theta, batch, mode)?;
        // λ = 0 leaves the gradient untouched so training matches the plain trainer bit for bit.
        let (reg, total) = if self.cfg.lambda == 0.0 {
            (f64::NAN, mse)
        } else {
            let (reg, rg) =
                jacfrob_grad_rng(spec, theta, &batch.inputs, mode, self.cfg, &mut self.rng)?;
            let half = self.cfg.lambda / 2.0;
            for (a, b) in g.iter_mut().zip(&rg) {
                *a += half * b;
            }
            (reg, mse + half * reg)
        };
        self.steps.push(StepLog {
            epoch,
            step: self.steps.len(),
            mse,
            reg,
            total,
        });
        Ok((total, g))
    }
}

/// Minimize `MSE + (λ/2) R` with the same schedule, split and optimizer as
/// plain training, starting from the seeded initialization.
pub fn train_robust(
    spec: &ModelSpec,
    data: &Batch,
    train_cfg: &TrainConfig,
    cfg: &JacRegConfig,
) -> Result<RobustOutcome> {
    train_robust_from(
        spec,
        data,
        train_cfg,
        cfg,
        Parameters::init(spec, train_cfg.seed),
    )
}

pub fn train_robust_from(
    spec: &ModelSpec,
    data: &Batch,
    train_cfg: &TrainConfig,
    cfg: &JacRegConfig,
    init: Parameters,
) -> Result<RobustOutcome> {
    cfg.validate(spec)?;
    let mut obj = JacStep {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        steps: Vec::new(),
    };
    let out = train_with(spec, data, train_cfg, init, &mut obj)?;
    Ok(RobustOutcome {
        params: out.params,
        history: out.history,
        steps: obj.steps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessEntry {
    pub lambda: f64,
    pub n_seeds: usize,
    /// Mean over seeds of the mean clean EMD.
    pub clean: f64,
    pub noisy_mean: f64,
    /// Sample standard deviation over seeds (0 for one seed).
    pub noisy_std: f64,
    pub noisy_median: f64,
    pub noisy_per_seed: Vec<f64>,
    pub clean_per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCurve {
    pub noise: NoiseSpec,
    pub mode: Mode,
    pub entries: Vec<RobustnessEntry>,
}

impl RobustnessCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,clean,noisy_mean,noisy_std\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.lambda, e.clean, e.noisy_mean, e.noisy_std
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_csv().as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Mean EMD between each clean row of `x` and the model's reconstruction of
/// `input` (the same rows, possibly corrupted).
pub fn reconstruction_emd(
    spec: &ModelSpec,
    theta: &[f64],
    x: &Array2<f64>,
    input: &Array2<f64>,
    geometry: &GridGeometry,
    mode: Mode,
) -> Result<f64> {
    let y = predict(spec, theta, input, mode)?;
    let e = emd_rows(x, &y, geometry)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Clean and noisy reconstruction EMD per λ, aggregated over the trained
/// parameter sets given for that λ (one per seed). Seed index `s` uses noise
/// seed `noise.seed + s`, so every λ sees the same corruptions. The
/// reference distribution is always the clean input.
pub fn noise_robustness_curve(
    spec: &ModelSpec,
    models: &[(f64, Vec<Parameters>)],
    x: &Array2<f64>,
    geometry: &GridGeometry,
    noise: &NoiseSpec,
    mode: Mode,
) -> Result<RobustnessCurve> {
    let max_seeds = models.iter().map(|(_, t)| t.len()).max().unwrap_or(0);
    let noisy_inputs = (0..max_seeds)
        .map(|s| {
            add_noise(
                x,
                &NoiseSpec {
                    seed: noise.seed.wrapping_add(s as u64),
                    ..*noise
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::with_capacity(models.len());
    for (lambda, thetas) in models {
        let mut clean = Vec::with_capacity(thetas.len());
        let mut noisy = Vec::with_capacity(thetas.len());
        for (s, theta) in thetas.iter().enumerate() {
            clean.push(reconstruction_emd(spec, theta, x, x, geometry, mode)?);
            noisy.push(reconstruction_emd(
                spec,
                theta,
                x,
                &noisy_inputs[s],
                geometry,
                mode,
            )?);
        }
        let n = noisy.len() as f64;
        let mean = noisy.iter().sum::<f64>() / n;
        let std = if noisy.len() > 1 {
            (noisy.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        entries.push(RobustnessEntry {
            lambda: *lambda,
            n_seeds: thetas.len(),
            clean: clean.iter().sum::<f64>() / n,
            noisy_mean: mean,
            noisy_std: std,
            noisy_median: median(&noisy),
            noisy_per_seed: noisy,
            clean_per_seed: clean,
        });
    }
    Ok(RobustnessCurve {
        noise: *noise,
        mode,
        entries,
    })
}
