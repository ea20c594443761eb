use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, RunConfig};
use crate::dataio::{add_noise, gen_synthetic, Dataset, GridGeometry, NoiseSpec};
use crate::error::Result;
use crate::fault::{hessian_bit_rank, CampaignReport, EvalSet, SensitivityRanking};
use crate::jacreg::{reconstruction_emd, train_robust, JacRegConfig, StepLog};
use crate::landscape::{hessian_summary, HessianSummary, PowerConfig};
use crate::metrics::{emd_rows, summarize, EmdSummary};
use crate::nn::{loss, Batch, EpochRecord, Mode, ModelSpec, Parameters, QuantizedModel};

/// Training and evaluation data for a run, regenerated from the run seed.
#[derive(Clone, Debug)]
pub struct RunData {
    pub geometry: GridGeometry,
    pub train: Dataset,
    pub eval: Dataset,
}

pub fn run_data(cfg: &RunConfig) -> Result<RunData> {
    let geometry = cfg.data.geometry()?;
    let train = gen_synthetic(
        cfg.data.train_samples,
        derive_seed(cfg.seed, "train-data"),
        &cfg.data.blobs,
        &geometry,
    )?;
    let eval = gen_synthetic(
        cfg.data.eval_samples,
        derive_seed(cfg.seed, "eval-data"),
        &cfg.data.blobs,
        &geometry,
    )?;
    Ok(RunData {
        geometry,
        train,
        eval,
    })
}

fn head(x: &Array2<f64>, n: usize) -> Array2<f64> {
    x.slice(s![..n.min(x.nrows()), ..]).to_owned()
}

impl RunData {
    pub fn train_batch(&self) -> Batch {
        Batch::autoencoder(self.train.samples.clone())
    }

    pub fn train_head(&self, n: usize) -> Batch {
        Batch::autoencoder(head(&self.train.samples, n))
    }

    pub fn eval_head(&self, n: usize) -> Array2<f64> {
        head(&self.eval.samples, n)
    }

    pub fn fault_eval(&self, n: usize) -> Result<EvalSet> {
        EvalSet::autoencoder(self.eval_head(n), Some(self.geometry.clone()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub params: Parameters,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepLog>,
    pub weight_bits: u32,
    pub seed: u64,
    pub lambda: f64,
}

impl TrainedModel {
    pub fn quantized(&self) -> Result<QuantizedModel> {
        QuantizedModel::from_params(&self.spec, self.params.as_slice())
    }
}

/// Train the benchmark autoencoder at `weight_bits` with training seed
/// `cfg.train.seed + seed_index` and Jacobian penalty `lambda`.
pub fn train_model(
    cfg: &RunConfig,
    data: &RunData,
    weight_bits: u32,
    seed_index: u64,
    lambda: f64,
) -> Result<TrainedModel> {
    let spec = cfg.model.spec(weight_bits)?;
    let seed = cfg.train.seed.wrapping_add(seed_index);
    let tc = crate::nn::TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let jc = JacRegConfig {
        lambda,
        ..cfg.jacreg.clone()
    };
    let out = train_robust(&spec, &data.train_batch(), &tc, &jc)?;
    Ok(TrainedModel {
        spec,
        params: out.params,
        history: out.history,
        steps: out.steps,
        weight_bits,
        seed,
        lambda,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mse_float: f64,
    pub mse_fake_quant: f64,
    pub mse_bit_exact: f64,
    pub emd_clean: EmdSummary,
    pub emd_noisy: EmdSummary,
    pub noise: NoiseSpec,
    /// Rows where fake-quant and bit-exact outputs differ.
    pub dual_path_mismatches: usize,
}

/// Reconstruction quality on the evaluation set. EMD compares each clean
/// input with the bit-exact reconstruction of the clean or noisy input.
pub fn evaluate_model(
    spec: &ModelSpec,
    theta: &[f64],
    data: &RunData,
    noise: &NoiseSpec,
) -> Result<EvalMetrics> {
    let x = &data.eval.samples;
    let batch = Batch::autoencoder(x.clone());
    let exact = crate::nn::predict(spec, theta, x, Mode::BitExact)?;
    let fake = crate::nn::predict(spec, theta, x, Mode::FakeQuant)?;
    let mismatches = exact
        .rows()
        .into_iter()
        .zip(fake.rows())
        .filter(|(a, b)| a != b)
        .count();
    let mse_bit_exact = (&exact - x).mapv(|v| v * v).mean().unwrap_or(f64::NAN);
    let clean = emd_rows(x, &exact, &data.geometry)?;
    let noisy_x = add_noise(x, noise)?;
    let noisy_out = crate::nn::predict(spec, theta, &noisy_x, Mode::BitExact)?;
    let noisy = emd_rows(x, &noisy_out, &data.geometry)?;
    Ok(EvalMetrics {
        mse_float: loss(spec, theta, &batch, Mode::Float)?,
        mse_fake_quant: loss(spec, theta, &batch, Mode::FakeQuant)?,
        mse_bit_exact,
        emd_clean: summarize(&clean),
        emd_noisy: summarize(&noisy),
        noise: *noise,
        dual_path_mismatches: mismatches,
    })
}

/// Mean noisy-input EMD of a trained model (bit-exact), with the noise seed
/// offset by the model's seed index.
pub fn noisy_emd(
    model: &TrainedModel,
    data: &RunData,
    noise: &NoiseSpec,
    seed_index: u64,
) -> Result<f64> {
    let x = &data.eval.samples;
    let spec = NoiseSpec {
        seed: noise.seed.wrapping_add(seed_index),
        ..*noise
    };
    let noisy = add_noise(x, &spec)?;
    reconstruction_emd(
        &model.spec,
        model.params.as_slice(),
        x,
        &noisy,
        &data.geometry,
        Mode::BitExact,
    )
}

/// Curvature summary on the first `batch_samples` training rows.
pub fn curvature(cfg: &RunConfig, data: &RunData, model: &TrainedModel) -> Result<HessianSummary> {
    let l = &cfg.landscape;
    hessian_summary(
        &model.spec,
        model.params.as_slice(),
        &data.train_head(l.batch_samples),
        l.mode,
        &l.power,
        l.n_probes,
    )
}

pub fn rank(cfg: &RunConfig, data: &RunData, model: &QuantizedModel) -> Result<SensitivityRanking> {
    let pc = PowerConfig {
        k: cfg.fault.rank_k,
        ..cfg.landscape.power.clone()
    };
    hessian_bit_rank(
        model,
        &data.train_head(cfg.fault.rank_samples),
        &pc,
        cfg.fault.scope,
    )
}

pub fn scan(cfg: &RunConfig, data: &RunData, model: &QuantizedModel) -> Result<CampaignReport> {
    let f = &cfg.fault;
    let eval = data.fault_eval(f.eval_samples)?;
    match f.sample {
        Some(n) => crate::fault::sampled_scan(
            model,
            &eval,
            f.metric,
            f.scope,
            f.tau,
            n,
            derive_seed(cfg.seed, "fault-sample"),
        ),
        None => crate::fault::exhaustive_scan(model, &eval, f.metric, f.scope, f.tau),
    }
}
