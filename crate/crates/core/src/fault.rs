//! Single-bit upsets in stored parameter codes: exhaustive campaigns,
//! curvature-guided bit ranking, ranking quality and selective triplication.

use std::fmt;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::GridGeometry;
use crate::error::{Error, Result};
use crate::fixedpoint::{bit_value_delta, FixedPointFormat};
use crate::landscape::{hessian_top_eigs, EigenPair, PowerConfig};
use crate::metrics::{emd_exact, to_distribution};
use crate::nn::{row_vec, Batch, Mode, ModelSpec, QuantizedModel};

/// Largest address space an exhaustive scan accepts.
pub const SCAN_LIMIT: usize = 1_000_000;
/// Floor on the baseline metric when computing relative degradation.
pub const DEGRADATION_EPS: f64 = 1e-12;
pub const DEFAULT_TAU: f64 = 0.01;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BitAddress {
    pub layer: usize,
    /// Index within the layer: row-major weights, then biases.
    pub param: usize,
    pub bit: u32,
}

impl fmt::Display for BitAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}/p{}/b{}", self.layer, self.param, self.bit)
    }
}

/// Which layers hold fault targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultScope {
    /// Layers `0..encoder_len`, the part that runs on the device.
    #[default]
    Encoder,
    Model,
}

impl FaultScope {
    pub fn layers(self, spec: &ModelSpec) -> usize {
        match self {
            FaultScope::Encoder => spec.encoder_len,
            FaultScope::Model => spec.layers.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultMetric {
    #[default]
    Emd,
    Mse,
}

fn param_format(spec: &ModelSpec, layer: usize, param: usize) -> FixedPointFormat {
    let l = &spec.layers[layer];
    if param < l.in_dim * l.out_dim {
        l.weight_format
    } else {
        l.bias_format
    }
}

fn stored_code(model: &QuantizedModel, layer: usize, param: usize) -> i64 {
    let c = model.layer_codes(layer);
    if param < c.weights.len() {
        c.weights[param]
    } else {
        c.biases[param - c.weights.len()]
    }
}

fn stored_code_mut(model: &mut QuantizedModel, layer: usize, param: usize) -> &mut i64 {
    let c = model.layer_codes_mut(layer);
    let nw = c.weights.len();
    if param < nw {
        &mut c.weights[param]
    } else {
        &mut c.biases[param - nw]
    }
}

/// Every bit of every parameter in scope, ordered by layer, parameter, bit.
pub fn addresses(spec: &ModelSpec, scope: FaultScope) -> Vec<BitAddress> {
    let mut out = Vec::new();
    for layer in 0..scope.layers(spec) {
        let l = &spec.layers[layer];
        for param in 0..l.param_count() {
            for bit in 0..param_format(spec, layer, param).total_bits() {
                out.push(BitAddress { layer, param, bit });
            }
        }
    }
    out
}

pub fn address_space(spec: &ModelSpec, scope: FaultScope) -> usize {
    (0..scope.layers(spec))
        .map(|layer| {
            let l = &spec.layers[layer];
            l.in_dim * l.out_dim * l.weight_format.total_bits() as usize
                + l.out_dim * l.bias_format.total_bits() as usize
        })
        .sum()
}

fn check_address(spec: &ModelSpec, addr: BitAddress) -> Result<FixedPointFormat> {
    let l = spec
        .layers
        .get(addr.layer)
        .ok_or_else(|| Error::InvalidArgument(format!("{addr}: no layer {}", addr.layer)))?;
    if addr.param >= l.param_count() {
        return Err(Error::InvalidArgument(format!(
            "{addr}: layer has {} parameters",
            l.param_count()
        )));
    }
    let f = param_format(spec, addr.layer, addr.param);
    if addr.bit >= f.total_bits() {
        return Err(Error::BitOutOfRange {
            bit: addr.bit,
            width: f.total_bits(),
        });
    }
    Ok(f)
}

/// Code stored at `addr` after flipping its bit.
pub fn flipped_code(model: &QuantizedModel, addr: BitAddress) -> Result<i64> {
    let f = check_address(model.spec(), addr)?;
    Ok(f.code(stored_code(model, addr.layer, addr.param))?
        .flip(addr.bit)?
        .code())
}

/// Evaluation data for fault campaigns. For the EMD metric each target row
/// must be a normalized distribution over the geometry's cells, and model
/// outputs are clamped and renormalized before comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub geometry: Option<GridGeometry>,
}

impl EvalSet {
    pub fn new(
        inputs: Array2<f64>,
        targets: Array2<f64>,
        geometry: Option<GridGeometry>,
    ) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::Shape(format!(
                "{} inputs for {} targets",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        if inputs.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(EvalSet {
            inputs,
            targets,
            geometry,
        })
    }

    pub fn autoencoder(x: Array2<f64>, geometry: Option<GridGeometry>) -> Result<Self> {
        Self::new(x.clone(), x, geometry)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

fn sample_metric(
    metric: FaultMetric,
    out_fmt: &FixedPointFormat,
    out_codes: &[i64],
    target: &[f64],
    geometry: Option<&GridGeometry>,
) -> Result<f64> {
    let y: Vec<f64> = out_codes.iter().map(|&c| out_fmt.decode_code(c)).collect();
    match metric {
        FaultMetric::Mse => Ok(y
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / y.len() as f64),
        FaultMetric::Emd => {
            let g = geometry
                .ok_or_else(|| Error::InvalidArgument("EMD metric needs a cell geometry".into()))?;
            Ok(emd_exact(target, &to_distribution(&y), g)?.0)
        }
    }
}

/// Metric of a model on an evaluation set: mean over samples of EMD or MSE.
pub fn evaluate(model: &QuantizedModel, eval: &EvalSet, metric: FaultMetric) -> Result<f64> {
    let spec = model.spec();
    if eval.targets.ncols() != spec.output_dim() {
        return Err(Error::Shape(format!(
            "targets have {} columns, model outputs {}",
            eval.targets.ncols(),
            spec.output_dim()
        )));
    }
    let out_fmt = spec.layers.last().expect("validated").activation_format;
    let mut total = 0.0;
    for (x, t) in eval.inputs.rows().into_iter().zip(eval.targets.rows()) {
        let codes = model.forward_codes(&model.encode_input(&row_vec(x))?)?;
        let out = codes.last().expect("at least one layer");
        total += sample_metric(metric, &out_fmt, out, &row_vec(t), eval.geometry.as_ref())?;
    }
    Ok(total / eval.len() as f64)
}

pub fn degradation(m0: f64, m1: f64) -> f64 {
    (m1 - m0) / m0.max(DEGRADATION_EPS)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultTrial {
    pub addr: BitAddress,
    pub m0: f64,
    pub m1: f64,
    pub delta: f64,
}

/// Flip one bit, evaluate the model bit-exactly, and restore the code. The
/// model is left unchanged whether or not evaluation succeeds.
pub fn flip_and_eval(
    model: &mut QuantizedModel,
    addr: BitAddress,
    eval: &EvalSet,
    metric: FaultMetric,
    m0: f64,
) -> Result<FaultTrial> {
    let new = flipped_code(model, addr)?;
    let slot = stored_code_mut(model, addr.layer, addr.param);
    let old = std::mem::replace(slot, new);
    let result = evaluate(model, eval, metric);
    *stored_code_mut(model, addr.layer, addr.param) = old;
    let m1 = result?;
    Ok(FaultTrial {
        addr,
        m0,
        m1,
        delta: degradation(m0, m1),
    })
}

/// Read-only baseline shared by parallel trials: per-sample layer codes and
/// metrics, so a flip only recomputes what it can change.
pub struct FaultEvaluator<'a> {
    model: &'a QuantizedModel,
    eval: &'a EvalSet,
    metric: FaultMetric,
    inputs: Vec<Vec<i64>>,
    layer_codes: Vec<Vec<Vec<i64>>>,
    per_sample: Vec<f64>,
    m0: f64,
}

impl<'a> FaultEvaluator<'a> {
    pub fn new(model: &'a QuantizedModel, eval: &'a EvalSet, metric: FaultMetric) -> Result<Self> {
        let spec = model.spec();
        if eval.targets.ncols() != spec.output_dim() {
            return Err(Error::Shape(format!(
                "targets have {} columns, model outputs {}",
                eval.targets.ncols(),
                spec.output_dim()
            )));
        }
        if metric == FaultMetric::Emd && eval.geometry.is_none() {
            return Err(Error::InvalidArgument(
                "EMD metric needs a cell geometry".into(),
            ));
        }
        let inputs = eval
            .inputs
            .rows()
            .into_iter()
            .map(|x| model.encode_input(&row_vec(x)))
            .collect::<Result<Vec<_>>>()?;
        let layer_codes = inputs
            .iter()
            .map(|x| model.forward_codes(x))
            .collect::<Result<Vec<_>>>()?;
        let out_fmt = spec.layers.last().expect("validated").activation_format;
        let per_sample = layer_codes
            .par_iter()
            .enumerate()
            .map(|(s, codes)| {
                sample_metric(
                    metric,
                    &out_fmt,
                    codes.last().expect("layers"),
                    &row_vec(eval.targets.row(s)),
                    eval.geometry.as_ref(),
                )
            })
            .collect::<Result<Vec<f64>>>()?;
        let m0 = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
        Ok(FaultEvaluator {
            model,
            eval,
            metric,
            inputs,
            layer_codes,
            per_sample,
            m0,
        })
    }

    pub fn baseline(&self) -> f64 {
        self.m0
    }

    /// Metric with the bit at `addr` flipped; the stored model is never mutated.
    pub fn trial(&self, addr: BitAddress) -> Result<FaultTrial> {
        let new = flipped_code(self.model, addr)?;
        let spec = self.model.spec();
        let l = addr.layer;
        let layer = &spec.layers[l];
        let out_fmt = spec.layers.last().expect("validated").activation_format;
        // A parameter feeds exactly one neuron of its layer.
        let o = if addr.param < layer.in_dim * layer.out_dim {
            addr.param / layer.in_dim
        } else {
            addr.param - layer.in_dim * layer.out_dim
        };
        let n_layers = spec.layers.len();
        let mut total = 0.0;
        for (s, codes) in self.layer_codes.iter().enumerate() {
            let x = if l == 0 {
                &self.inputs[s]
            } else {
                &codes[l - 1]
            };
            let y = self.model.neuron_forward(l, o, x, Some((addr.param, new)));
            if y == codes[l][o] {
                total += self.per_sample[s];
                continue;
            }
            let mut out = codes[l].clone();
            out[o] = y;
            let out = self.model.forward_range(l + 1, n_layers, &out);
            if out == codes[n_layers - 1] {
                total += self.per_sample[s];
                continue;
            }
            total += sample_metric(
                self.metric,
                &out_fmt,
                &out,
                &row_vec(self.eval.targets.row(s)),
                self.eval.geometry.as_ref(),
            )?;
        }
        let m1 = total / self.per_sample.len() as f64;
        Ok(FaultTrial {
            addr,
            m0: self.m0,
            m1,
            delta: degradation(self.m0, m1),
        })
    }

    pub fn trials(&self, addrs: &[BitAddress]) -> Result<Vec<FaultTrial>> {
        addrs.par_iter().map(|&a| self.trial(a)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitPositionStats {
    pub bit: u32,
    pub trials: usize,
    pub sensitive: usize,
    pub mean_delta: f64,
    pub max_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema_version: u32,
    pub metric: FaultMetric,
    pub scope: FaultScope,
    pub tau: f64,
    pub n_samples: usize,
    pub baseline: f64,
    /// Size of the full address space in scope.
    pub address_space: usize,
    pub sensitive_fraction: f64,
    pub by_bit: Vec<BitPositionStats>,
    /// Sorted by address.
    pub trials: Vec<FaultTrial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Serialize)]
struct CampaignSummary<'a> {
    schema_version: u32,
    metric: FaultMetric,
    scope: FaultScope,
    tau: f64,
    n_samples: usize,
    baseline: f64,
    address_space: usize,
    n_trials: usize,
    sensitive_fraction: f64,
    by_bit: &'a [BitPositionStats],
    #[serde(skip_serializing_if = "Option::is_none")]
    config_hash: Option<&'a str>,
}

impl CampaignReport {
    pub fn from_trials(
        mut trials: Vec<FaultTrial>,
        metric: FaultMetric,
        scope: FaultScope,
        tau: f64,
        n_samples: usize,
        baseline: f64,
        address_space: usize,
    ) -> Self {
        trials.sort_by_key(|t| t.addr);
        let mut report = CampaignReport {
            schema_version: REPORT_SCHEMA_VERSION,
            metric,
            scope,
            tau,
            n_samples,
            baseline,
            address_space,
            sensitive_fraction: 0.0,
            by_bit: Vec::new(),
            trials,
            config_hash: None,
        };
        report.set_tau(tau);
        report
    }

    /// Recompute the sensitivity summary for a new threshold.
    pub fn set_tau(&mut self, tau: f64) {
        self.tau = tau;
        let n = self.trials.len();
        let sensitive = self.trials.iter().filter(|t| t.delta > tau).count();
        self.sensitive_fraction = if n == 0 {
            0.0
        } else {
            sensitive as f64 / n as f64
        };
        let max_bit = self
            .trials
            .iter()
            .map(|t| t.addr.bit + 1)
            .max()
            .unwrap_or(0);
        self.by_bit = (0..max_bit)
            .map(|bit| {
                let ds: Vec<f64> = self
                    .trials
                    .iter()
                    .filter(|t| t.addr.bit == bit)
                    .map(|t| t.delta)
                    .collect();
                BitPositionStats {
                    bit,
                    trials: ds.len(),
                    sensitive: ds.iter().filter(|&&d| d > tau).count(),
                    mean_delta: if ds.is_empty() {
                        0.0
                    } else {
                        ds.iter().sum::<f64>() / ds.len() as f64
                    },
                    max_delta: ds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect();
    }

    pub fn is_sensitive(&self, t: &FaultTrial) -> bool {
        t.delta > self.tau
    }

    pub fn summary_json(&self) -> Result<String> {
        let s = CampaignSummary {
            schema_version: self.schema_version,
            metric: self.metric,
            scope: self.scope,
            tau: self.tau,
            n_samples: self.n_samples,
            baseline: self.baseline,
            address_space: self.address_space,
            n_trials: self.trials.len(),
            sensitive_fraction: self.sensitive_fraction,
            by_bit: &self.by_bit,
            config_hash: self.config_hash.as_deref(),
        };
        Ok(serde_json::to_string_pretty(&s)? + "\n")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    /// One row per trial: `layer,param,bit,m1,delta`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("layer,param,bit,m1,delta\n");
        for t in &self.trials {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                t.addr.layer, t.addr.param, t.addr.bit, t.m1, t.delta
            ));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Flip every bit in scope, one at a time.
pub fn exhaustive_scan(
    model: &QuantizedModel,
    eval: &EvalSet,
    metric: FaultMetric,
    scope: FaultScope,
    tau: f64,
) -> Result<CampaignReport> {
    let size = address_space(model.spec(), scope);
    if size > SCAN_LIMIT {
        return Err(Error::ScanGuard {
            size,
            limit: SCAN_LIMIT,
        });
    }
    let addrs = addresses(model.spec(), scope);
    let ev = FaultEvaluator::new(model, eval, metric)?;
    let trials = ev.trials(&addrs)?;
    Ok(CampaignReport::from_trials(
        trials,
        metric,
        scope,
        tau,
        eval.len(),
        ev.baseline(),
        size,
    ))
}

/// Flip `n` addresses drawn without replacement; for address spaces beyond the scan limit.
pub fn sampled_scan(
    model: &QuantizedModel,
    eval: &EvalSet,
    metric: FaultMetric,
    scope: FaultScope,
    tau: f64,
    n: usize,
    seed: u64,
) -> Result<CampaignReport> {
    let mut addrs = addresses(model.spec(), scope);
    let size = addrs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    addrs.shuffle(&mut rng);
    addrs.truncate(n.min(size));
    let ev = FaultEvaluator::new(model, eval, metric)?;
    let trials = ev.trials(&addrs)?;
    Ok(CampaignReport::from_trials(
        trials,
        metric,
        scope,
        tau,
        eval.len(),
        ev.baseline(),
        size,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedBit {
    pub addr: BitAddress,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRanking {
    /// Descending score; ties broken by address.
    pub bits: Vec<RankedBit>,
    pub eigenvalues: Vec<f64>,
    pub k: usize,
}

impl SensitivityRanking {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("rank,layer,param,bit,score\n");
        for (i, b) in self.bits.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i, b.addr.layer, b.addr.param, b.addr.bit, b.score
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Top-k eigen approximation of the Hessian diagonal: `s_i = Σ max(λ_k, 0) v_ki²`.
pub fn parameter_scores(pairs: &[EigenPair], dim: usize) -> Vec<f64> {
    let mut s = vec![0.0; dim];
    for p in pairs {
        let lam = p.value.max(0.0);
        for (si, v) in s.iter_mut().zip(&p.vector) {
            *si += lam * v * v;
        }
    }
    s
}

/// Score every bit in scope by `s_i · Δ²`, where `Δ` is the value change the
/// flip causes at the stored code. `scores` is indexed by the flat layout.
pub fn rank_bits(
    model: &QuantizedModel,
    scores: &[f64],
    scope: FaultScope,
) -> Result<Vec<RankedBit>> {
    let spec = model.spec();
    if scores.len() != spec.param_count() {
        return Err(Error::Shape(format!(
            "{} scores for {} parameters",
            scores.len(),
            spec.param_count()
        )));
    }
    let layout = spec.layout();
    let mut bits = Vec::new();
    for addr in addresses(spec, scope) {
        let f = param_format(spec, addr.layer, addr.param);
        let code = f.code(stored_code(model, addr.layer, addr.param))?;
        let d = bit_value_delta(&code, addr.bit)?;
        let s = scores[layout[addr.layer].weights.start + addr.param];
        bits.push(RankedBit {
            addr,
            score: s * d * d,
        });
    }
    bits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.addr.cmp(&b.addr)));
    Ok(bits)
}

/// Rank the bits in scope with `k` Hessian eigenpairs of the reconstruction
/// loss, measured at the stored (quantized) parameters.
pub fn hessian_bit_rank(
    model: &QuantizedModel,
    batch: &Batch,
    cfg: &PowerConfig,
    scope: FaultScope,
) -> Result<SensitivityRanking> {
    let spec = model.spec();
    let theta = model.to_params();
    let pairs = hessian_top_eigs(spec, &theta, batch, Mode::Float, cfg)?;
    let scores = parameter_scores(&pairs, spec.param_count());
    Ok(SensitivityRanking {
        bits: rank_bits(model, &scores, scope)?,
        eigenvalues: pairs.iter().map(|p| p.value).collect(),
        k: cfg.k,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingQuality {
    pub k: usize,
    pub n_truth: usize,
    /// `None` when no address is sensitive.
    pub recall_at_k: Option<f64>,
    /// `None` when either class is empty.
    pub auc: Option<f64>,
}

fn truth_set(campaign: &CampaignReport) -> std::collections::HashSet<BitAddress> {
    campaign
        .trials
        .iter()
        .filter(|t| campaign.is_sensitive(t))
        .map(|t| t.addr)
        .collect()
}

/// Area under the ROC curve of `scores` separating positives from negatives
/// (Mann-Whitney statistic, ties counted one half via midranks).
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if positive[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Recall of the campaign's sensitive set among the top `k` ranked bits, and
/// AUC of the ranking scores over the campaign's addresses.
pub fn ranking_quality(
    ranking: &SensitivityRanking,
    campaign: &CampaignReport,
    k: usize,
) -> RankingQuality {
    let truth = truth_set(campaign);
    let hits = ranking
        .bits
        .iter()
        .take(k)
        .filter(|b| truth.contains(&b.addr))
        .count();
    let recall_at_k = (!truth.is_empty()).then(|| hits as f64 / truth.len() as f64);
    let score: std::collections::HashMap<BitAddress, f64> =
        ranking.bits.iter().map(|b| (b.addr, b.score)).collect();
    let (scores, positive): (Vec<f64>, Vec<bool>) = campaign
        .trials
        .iter()
        .filter_map(|t| score.get(&t.addr).map(|&s| (s, campaign.is_sensitive(t))))
        .unzip();
    RankingQuality {
        k,
        n_truth: truth.len(),
        recall_at_k,
        auc: auc(&scores, &positive),
    }
}

/// `(k, recall@k)` at each requested `k`.
pub fn recall_curve(
    ranking: &SensitivityRanking,
    campaign: &CampaignReport,
    ks: &[usize],
) -> Vec<(usize, Option<f64>)> {
    let truth = truth_set(campaign);
    let mut hits = Vec::with_capacity(ranking.bits.len() + 1);
    hits.push(0usize);
    for b in &ranking.bits {
        let last = *hits.last().expect("nonempty");
        hits.push(last + truth.contains(&b.addr) as usize);
    }
    ks.iter()
        .map(|&k| {
            let h = hits[k.min(ranking.bits.len())];
            (
                k,
                (!truth.is_empty()).then(|| h as f64 / truth.len() as f64),
            )
        })
        .collect()
}

/// Triplicated bits: each protected bit costs two extra registers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtectionPlan {
    pub budget: f64,
    pub address_space: usize,
    pub protected: Vec<BitAddress>,
    pub overhead_bits: usize,
    /// `2 |protected| / B`; full triplication gives 2.0.
    pub overhead_fraction: f64,
    pub full_tmr_overhead_fraction: f64,
    /// Sum of degradation over sensitive bits left unprotected, when a campaign is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_risk: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unprotected_sensitive: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Protect the top `⌊budget · B⌋` ranked bits.
pub fn select_protection(
    ranking: &SensitivityRanking,
    budget: f64,
    campaign: Option<&CampaignReport>,
) -> Result<ProtectionPlan> {
    if !(0.0..=1.0).contains(&budget) {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} not in [0, 1]"
        )));
    }
    let b = ranking.bits.len();
    // The small slack keeps products such as 0.06 * 50 from flooring to 2.
    let n = ((budget * b as f64 + 1e-9).floor() as usize).min(b);
    let protected: Vec<BitAddress> = ranking.bits[..n].iter().map(|r| r.addr).collect();
    let (residual_risk, unprotected_sensitive) = match campaign {
        Some(c) => {
            let set: std::collections::HashSet<BitAddress> = protected.iter().copied().collect();
            let left: Vec<&FaultTrial> = c
                .trials
                .iter()
                .filter(|t| c.is_sensitive(t) && !set.contains(&t.addr))
                .collect();
            (Some(left.iter().map(|t| t.delta).sum()), Some(left.len()))
        }
        None => (None, None),
    };
    Ok(ProtectionPlan {
        budget,
        address_space: b,
        overhead_bits: 2 * n,
        overhead_fraction: if b == 0 {
            0.0
        } else {
            2.0 * n as f64 / b as f64
        },
        full_tmr_overhead_fraction: 2.0,
        protected,
        residual_risk,
        unprotected_sensitive,
        config_hash: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::top_eigenpairs;
    use crate::nn::{Activation, LayerCodes, Quadratic};
    use ndarray::array;
    use rand::Rng;

    fn w6() -> FixedPointFormat {
        FixedPointFormat::signed(6, 1).unwrap()
    }

    fn one_weight(w: f64) -> QuantizedModel {
        let spec = ModelSpec::chain(
            &[1, 1],
            &[Activation::Linear],
            FixedPointFormat::signed(8, 2).unwrap(),
            w6(),
            FixedPointFormat::signed(16, 4).unwrap(),
        )
        .unwrap();
        QuantizedModel::from_params(&spec, &[w, 0.0]).unwrap()
    }

    #[test]
    fn sign_flip_on_one_weight_model() {
        let mut m = one_weight(0.5);
        let eval = EvalSet::new(array![[1.0]], array![[0.5]], None).unwrap();
        let m0 = evaluate(&m, &eval, FaultMetric::Mse).unwrap();
        assert_eq!(m0, 0.0);
        let addr = BitAddress {
            layer: 0,
            param: 0,
            bit: 5,
        };
        let before = m.clone();
        let t = flip_and_eval(&mut m, addr, &eval, FaultMetric::Mse, m0).unwrap();
        assert_eq!(t.m1, 1.0);
        assert_eq!(m, before);
        assert_eq!(evaluate(&m, &eval, FaultMetric::Mse).unwrap(), m0);
        let ev = FaultEvaluator::new(&m, &eval, FaultMetric::Mse).unwrap();
        assert_eq!(ev.trial(addr).unwrap(), t);
    }

    #[test]
    fn invalid_addresses() {
        let m = one_weight(0.5);
        let eval = EvalSet::new(array![[1.0]], array![[0.5]], None).unwrap();
        let ev = FaultEvaluator::new(&m, &eval, FaultMetric::Mse).unwrap();
        for addr in [
            BitAddress {
                layer: 1,
                param: 0,
                bit: 0,
            },
            BitAddress {
                layer: 0,
                param: 2,
                bit: 0,
            },
            BitAddress {
                layer: 0,
                param: 0,
                bit: 6,
            },
        ] {
            assert!(ev.trial(addr).is_err());
        }
    }

    fn small_model(seed: u64) -> (QuantizedModel, EvalSet, Batch) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ModelSpec::autoencoder(6, 3, 2, w6()).unwrap();
        let theta: Vec<f64> = (0..spec.param_count())
            .map(|_| rng.gen_range(-0.9..0.9))
            .collect();
        let m = QuantizedModel::from_params(&spec, &theta).unwrap();
        let g = GridGeometry::rectangular(3, 2).unwrap();
        let ds = crate::dataio::gen_synthetic(24, seed, &Default::default(), &g).unwrap();
        let eval = EvalSet::autoencoder(ds.samples.clone(), Some(g)).unwrap();
        (m, eval, Batch::autoencoder(ds.samples))
    }

    #[test]
    fn fast_trials_match_rebuilt_models() {
        let (model, eval, _) = small_model(1);
        let ev = FaultEvaluator::new(&model, &eval, FaultMetric::Emd).unwrap();
        let all = addresses(model.spec(), FaultScope::Model);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let addr = all[rng.gen_range(0..all.len())];
            // Oracle: rebuild the model from scratch with the flipped code.
            let spec = model.spec().clone();
            let mut codes: Vec<LayerCodes> = (0..spec.layers.len())
                .map(|l| model.layer_codes(l).clone())
                .collect();
            let f = param_format(&spec, addr.layer, addr.param);
            let nw = codes[addr.layer].weights.len();
            let slot = if addr.param < nw {
                &mut codes[addr.layer].weights[addr.param]
            } else {
                &mut codes[addr.layer].biases[addr.param - nw]
            };
            let bits = (*slot as u64) & ((1u64 << f.total_bits()) - 1);
            let flipped = bits ^ (1 << addr.bit);
            *slot = if f.is_signed() && flipped >> (f.total_bits() - 1) == 1 {
                flipped as i64 - (1i64 << f.total_bits())
            } else {
                flipped as i64
            };
            let rebuilt = QuantizedModel::from_codes(spec, codes).unwrap();
            let m1 = evaluate(&rebuilt, &eval, FaultMetric::Emd).unwrap();
            let t = ev.trial(addr).unwrap();
            assert_eq!(t.m1, m1, "{addr}");
            assert_eq!(t.delta, degradation(ev.baseline(), m1));
        }
    }

    #[test]
    fn zero_linear_model_direct_recomputation() {
        // y = w0*x0 + w1*x1 + b (one output, a 3rd parameter is the bias) on zero targets.
        let f = w6();
        let spec = ModelSpec::chain(
            &[2, 1],
            &[Activation::Linear],
            FixedPointFormat::signed(8, 2).unwrap(),
            f,
            FixedPointFormat::signed(16, 4).unwrap(),
        )
        .unwrap();
        let model = QuantizedModel::from_params(&spec, &[0.0, 0.0, 0.0]).unwrap();
        let x = array![[0.5, -0.25], [1.0, 1.0]];
        let eval = EvalSet::new(x.clone(), Array2::zeros((2, 1)), None).unwrap();
        let report =
            exhaustive_scan(&model, &eval, FaultMetric::Mse, FaultScope::Model, 0.0).unwrap();
        assert_eq!(report.trials.len(), 18);
        assert_eq!(report.baseline, 0.0);
        for t in &report.trials {
            // Flipping bit j of code 0 gives code 2^j, or -32 for the sign bit.
            let v = if t.addr.bit == 5 {
                -1.0
            } else {
                (1 << t.addr.bit) as f64 / 32.0
            };
            let ys: Vec<f64> = x
                .rows()
                .into_iter()
                .map(|r| {
                    if t.addr.param < 2 {
                        v * r[t.addr.param]
                    } else {
                        v
                    }
                })
                .collect();
            let mse = ys.iter().map(|y| y * y).sum::<f64>() / 2.0;
            assert_eq!(t.m1, mse, "{}", t.addr);
            assert_eq!(t.delta, mse / DEGRADATION_EPS);
        }
    }

    #[test]
    fn scan_coverage_restore_and_thresholds() {
        let (model, eval, _) = small_model(3);
        let before = model.clone();
        let mut r =
            exhaustive_scan(&model, &eval, FaultMetric::Emd, FaultScope::Encoder, 0.01).unwrap();
        assert_eq!(model, before);
        let expected = addresses(model.spec(), FaultScope::Encoder);
        assert_eq!(
            r.trials.iter().map(|t| t.addr).collect::<Vec<_>>(),
            expected
        );
        assert_eq!(r.address_space, expected.len());
        assert_eq!(r.address_space, model.spec().encoder_param_count() * 6);
        r.set_tau(f64::INFINITY);
        assert_eq!(r.sensitive_fraction, 0.0);
        let again = exhaustive_scan(
            &model,
            &eval,
            FaultMetric::Emd,
            FaultScope::Encoder,
            f64::INFINITY,
        )
        .unwrap();
        assert_eq!(r, again);
        assert_eq!(
            evaluate(&model, &eval, FaultMetric::Emd).unwrap(),
            r.baseline
        );
    }

    #[test]
    fn scan_guard() {
        let f = FixedPointFormat::signed(16, 2).unwrap();
        // 300*250 + 250 params at 16 bits is over a million addresses.
        let af = FixedPointFormat::signed(20, 8).unwrap();
        let spec = ModelSpec::chain(&[300, 250], &[Activation::Linear], f, f, af).unwrap();
        let model = QuantizedModel::from_params(&spec, &vec![0.0; spec.param_count()]).unwrap();
        let eval = EvalSet::new(Array2::zeros((1, 300)), Array2::zeros((1, 250)), None).unwrap();
        assert!(matches!(
            exhaustive_scan(&model, &eval, FaultMetric::Mse, FaultScope::Model, 0.01),
            Err(Error::ScanGuard { .. })
        ));
        let s = sampled_scan(
            &model,
            &eval,
            FaultMetric::Mse,
            FaultScope::Model,
            0.01,
            50,
            1,
        )
        .unwrap();
        assert_eq!(s.trials.len(), 50);
    }

    #[test]
    fn diagonal_quadratic_orders_parameters() {
        let f = w6();
        let spec = ModelSpec::chain(&[1, 1], &[Activation::Linear], f, f, f).unwrap();
        let model = QuantizedModel::from_params(&spec, &[0.0, 0.0]).unwrap();
        let cfg = PowerConfig {
            k: 2,
            tol: 1e-6,
            max_iters: 500,
            seed: 0,
        };
        let pairs = top_eigenpairs(&Quadratic::diagonal(&[3.0, 1.0]), &[0.0, 0.0], &cfg).unwrap();
        let scores = parameter_scores(&pairs, 2);
        let bits = rank_bits(&model, &scores, FaultScope::Model).unwrap();
        let score = |p: usize, b: u32| {
            bits.iter()
                .find(|r| r.addr.param == p && r.addr.bit == b)
                .unwrap()
                .score
        };
        for b in 0..6 {
            assert!(score(0, b) > score(1, b));
        }
        // Within a parameter, more significant bits rank higher.
        for b in 1..6 {
            assert!(score(0, b) > score(0, b - 1));
        }
        assert!(bits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
        let (mut c, mut d, mut ta, mut tb) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..a.len() {
            for j in 0..i {
                let x = (a[i] - a[j]).signum() * (a[i] != a[j]) as i32 as f64;
                let y = (b[i] - b[j]).signum() * (b[i] != b[j]) as i32 as f64;
                if x == 0.0 && y == 0.0 {
                    continue;
                }
                if x == 0.0 {
                    ta += 1.0;
                } else if y == 0.0 {
                    tb += 1.0;
                } else if x == y {
                    c += 1.0;
                } else {
                    d += 1.0;
                }
            }
        }
        (c - d) / ((c + d + ta) * (c + d + tb)).sqrt()
    }

    #[test]
    fn curvature_ranking_correlates_with_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ModelSpec::chain(
            &[4, 4, 3],
            &[Activation::Sigmoid, Activation::Linear],
            FixedPointFormat::signed(10, 3).unwrap(),
            w6(),
            FixedPointFormat::signed(16, 4).unwrap(),
        )
        .unwrap();
        assert!(spec.param_count() <= 50);
        let theta: Vec<f64> = (0..spec.param_count())
            .map(|_| rng.gen_range(-0.9..0.9))
            .collect();
        let model = QuantizedModel::from_params(&spec, &theta).unwrap();
        let x = Array2::from_shape_fn((64, 4), |_| rng.gen_range(-1.0..1.0));
        let t = Array2::from_shape_fn((64, 3), |_| rng.gen_range(-1.0..1.0));
        let batch = Batch::new(x.clone(), t.clone()).unwrap();
        let eval = EvalSet::new(x, t, None).unwrap();
        let scan =
            exhaustive_scan(&model, &eval, FaultMetric::Mse, FaultScope::Model, 0.01).unwrap();
        let cfg = PowerConfig {
            k: 8,
            tol: 1e-3,
            max_iters: 300,
            seed: 1,
        };
        let ranking = hessian_bit_rank(&model, &batch, &cfg, FaultScope::Model).unwrap();
        assert_eq!(ranking.len(), scan.trials.len());
        let by_addr: std::collections::HashMap<_, _> =
            ranking.bits.iter().map(|b| (b.addr, b.score)).collect();
        let scores: Vec<f64> = scan.trials.iter().map(|t| by_addr[&t.addr]).collect();
        let deltas: Vec<f64> = scan.trials.iter().map(|t| t.delta).collect();
        let tau = kendall_tau(&scores, &deltas);
        assert!(tau > 0.0, "kendall tau {tau}");
    }

    fn synthetic_campaign(deltas: &[f64], tau: f64) -> CampaignReport {
        let trials = deltas
            .iter()
            .enumerate()
            .map(|(i, &d)| FaultTrial {
                addr: BitAddress {
                    layer: 0,
                    param: i,
                    bit: 0,
                },
                m0: 1.0,
                m1: 1.0 + d,
                delta: d,
            })
            .collect();
        CampaignReport::from_trials(
            trials,
            FaultMetric::Mse,
            FaultScope::Model,
            tau,
            1,
            1.0,
            deltas.len(),
        )
    }

    fn ranking_from(scores: &[f64]) -> SensitivityRanking {
        let mut bits: Vec<RankedBit> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| RankedBit {
                addr: BitAddress {
                    layer: 0,
                    param: i,
                    bit: 0,
                },
                score: s,
            })
            .collect();
        bits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.addr.cmp(&b.addr)));
        SensitivityRanking {
            bits,
            eigenvalues: vec![],
            k: 0,
        }
    }

    #[test]
    fn perfect_ranking_quality() {
        let deltas: Vec<f64> = (0..50).map(|i| i as f64 * 0.001).collect();
        let c = synthetic_campaign(&deltas, 0.02);
        let r = ranking_from(&deltas);
        let n_truth = deltas.iter().filter(|&&d| d > 0.02).count();
        let q = ranking_quality(&r, &c, n_truth);
        assert_eq!(q.recall_at_k, Some(1.0));
        assert_eq!(q.auc, Some(1.0));
        assert_eq!(ranking_quality(&r, &c, 0).recall_at_k, Some(0.0));
        let curve = recall_curve(&r, &c, &[0, 5, 10, 29, 50]);
        assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
        let none = synthetic_campaign(&deltas, 1.0);
        let q = ranking_quality(&r, &none, 10);
        assert_eq!((q.recall_at_k, q.auc), (None, None));
    }

    #[test]
    fn random_ranking_auc_is_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let deltas: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..1.0)).collect();
        let c = synthetic_campaign(&deltas, 0.7);
        let mean = (0..100)
            .map(|_| {
                let s: Vec<f64> = (0..400).map(|_| rng.gen()).collect();
                ranking_quality(&ranking_from(&s), &c, 10).auc.unwrap()
            })
            .sum::<f64>()
            / 100.0;
        assert!((mean - 0.5).abs() <= 0.05, "mean AUC {mean}");
    }

    #[test]
    fn auc_counts_ties_as_half() {
        assert_eq!(auc(&[1.0, 1.0], &[true, false]), Some(0.5));
        assert_eq!(auc(&[0.0, 1.0, 1.0], &[false, true, false]), Some(0.75));
        assert_eq!(auc(&[1.0], &[true]), None);
    }

    #[test]
    fn protection_budgets() {
        let scores: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let r = ranking_from(&scores);
        let full = select_protection(&r, 1.0, None).unwrap();
        assert_eq!(full.overhead_fraction, 2.0);
        assert_eq!(full.protected.len(), 50);
        let none = select_protection(&r, 0.0, None).unwrap();
        assert!(none.protected.is_empty());
        assert_eq!(none.overhead_fraction, 0.0);
        let six = select_protection(&r, 0.06, None).unwrap();
        assert_eq!(six.protected.len(), 3);
        assert_eq!(six.overhead_bits, 6);
        assert!(select_protection(&r, 1.5, None).is_err());
        let c = synthetic_campaign(&scores.iter().map(|s| s / 100.0).collect::<Vec<_>>(), 0.3);
        let plan = select_protection(&r, 0.1, Some(&c)).unwrap();
        assert_eq!(plan.unprotected_sensitive, Some(19 - 5));
        let counts: Vec<usize> = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
            .iter()
            .map(|&b| select_protection(&r, b, None).unwrap().overhead_bits)
            .collect();
        assert_eq!(counts, vec![0, 20, 40, 60, 80, 100]);
    }

    #[test]
    fn report_files() {
        let (model, eval, _) = small_model(9);
        let mut r =
            exhaustive_scan(&model, &eval, FaultMetric::Emd, FaultScope::Encoder, 0.01).unwrap();
        r.config_hash = Some("abc".into());
        let dir = tempfile::tempdir().unwrap();
        r.write_json(&dir.path().join("c.json")).unwrap();
        r.write_csv(&dir.path().join("c.csv")).unwrap();
        assert_eq!(
            CampaignReport::read_json(&dir.path().join("c.json")).unwrap(),
            r
        );
        let csv = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
        assert_eq!(csv.lines().count(), r.trials.len() + 1);
        assert!(r
            .summary_json()
            .unwrap()
            .contains("\"config_hash\": \"abc\""));
    }
}
