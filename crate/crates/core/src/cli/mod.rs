//! Command-line orchestration. Every command resolves a [`RunConfig`] from
//! the optional config file plus flag overrides, writes
//! `resolved_config.json` and its artifacts under `--out`, and records the
//! artifact hashes in `<command>.artifacts.json`.

mod config;
pub mod pipeline;
mod study;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use config::{
    derive_seed, CodegenConfig, DataConfig, FaultConfig, LandscapeConfig, ModelConfig,
    RobustnessConfig, RunConfig, StudyConfig,
};
pub use study::{read_report, run_study, write_report, Heatmap, StudyCell, StudyReport, HEATMAPS};

use crate::codegen;
use crate::dataio::write_matrix_csv;
use crate::error::{Error, Result};
use crate::fault::{self, CampaignReport};
use crate::jacreg::{noise_robustness_curve, JacRegConfig};
use crate::landscape::loss_slice_2d;
use crate::metrics::{all_layer_outputs, linear_cka, neural_efficiency};
use crate::nn::{Mode, Parameters, QuantizedModel};
use pipeline::{run_data, train_model, RunData};

#[derive(Debug, Parser)]
#[command(
    name = "edgerel",
    version,
    about = "Reliability analysis for fixed-point edge autoencoders"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Default, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; missing keys take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Run seed; also used for training, noise, power iteration and projections.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Fraction of bits to protect.
    #[arg(long, global = true)]
    pub budget: Option<f64>,
    /// Relative degradation above which a bit counts as sensitive.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Input noise level relative to per-cell RMS (config default 0.05).
    #[arg(long, global = true)]
    pub noise_level: Option<f64>,
    /// Weight bit widths for the study, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub widths: Option<Vec<u32>>,
}

#[derive(Clone, Debug, Args)]
pub struct ModelArg {
    /// Model file (default: <out>/model.json).
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Clone, Debug, Subcommand)]
pub enum Command {
    /// Write synthetic training and evaluation sets and the grid geometry.
    GenData,
    /// Quantization-aware training of the benchmark autoencoder.
    Train,
    /// Reconstruction MSE and EMD (clean and noisy) plus neural efficiency.
    Eval(ModelArg),
    /// 2-D loss slice along filter-normalized random directions.
    Landscape(ModelArg),
    /// Top Hessian eigenvalues and Hutchinson trace.
    Hessian(ModelArg),
    /// Linear CKA between all layer pairs of two models.
    Cka {
        #[command(flatten)]
        model: ModelArg,
        /// Second model (default: the first).
        #[arg(long)]
        other: Option<PathBuf>,
    },
    /// Single-bit-flip campaign over the configured scope.
    FaultScan(ModelArg),
    /// Hessian-guided bit ranking, scored against `fault_scan.json` when present.
    RankBits(ModelArg),
    /// Select bits to triplicate within the budget.
    Protect(ModelArg),
    /// Train with the Jacobian penalty.
    JacregTrain {
        /// Overrides `jacreg.lambda`.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Noisy-input EMD across the configured lambdas and seeds.
    RobustnessCurve,
    /// Emit C sources and a golden-vector harness.
    Codegen(ModelArg),
    /// Emit, compile with $EDGEREL_CC (default cc) and run the harness.
    VerifyCodegen(ModelArg),
    /// Sweep weight widths x lambdas x seeds into heatmaps.
    Study,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval(_) => "eval",
            Command::Landscape(_) => "landscape",
            Command::Hessian(_) => "hessian",
            Command::Cka { .. } => "cka",
            Command::FaultScan(_) => "fault-scan",
            Command::RankBits(_) => "rank-bits",
            Command::Protect(_) => "protect",
            Command::JacregTrain { .. } => "jacreg-train",
            Command::RobustnessCurve => "robustness-curve",
            Command::Codegen(_) => "codegen",
            Command::VerifyCodegen(_) => "verify-codegen",
            Command::Study => "study",
        }
    }
}

/// Config file (or defaults) with flag overrides applied, validated.
pub fn resolve_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
        cfg.train.seed = s;
        cfg.noise.seed = s;
        cfg.landscape.power.seed = s;
        cfg.jacreg.seed = s;
    }
    if let Some(b) = g.budget {
        cfg.fault.budget = b;
    }
    if let Some(t) = g.tau {
        cfg.fault.tau = t;
    }
    if let Some(n) = g.noise_level {
        cfg.noise.level = n;
    }
    if let Some(w) = &g.widths {
        cfg.study.widths = w.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Ctx {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
    written: Vec<PathBuf>,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn mkdir(&self, sub: &str) -> Result<PathBuf> {
        let d = self.out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        self.written.push(p);
        Ok(())
    }

    /// JSON with the config hash added at the top level.
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let Value::Object(m) = &mut v {
            m.insert("config_hash".into(), Value::String(self.hash.clone()));
        }
        let text = serde_json::to_string_pretty(&v)? + "\n";
        self.text(name, &text)
    }

    fn record(&mut self, p: PathBuf) {
        self.written.push(p);
    }

    fn model(&self, arg: &ModelArg) -> Result<QuantizedModel> {
        let p = arg.model.clone().unwrap_or_else(|| self.path("model.json"));
        QuantizedModel::load(&p)
    }
}

fn sha256_file(p: &Path) -> Result<String> {
    let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct ArtifactIndex {
    command: String,
    config_hash: String,
    artifacts: Vec<Artifact>,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    weight_bits: u32,
    seed: u64,
    lambda: f64,
    params: usize,
    final_train_loss: Option<f64>,
    final_val_loss: Option<f64>,
    history: &'a [crate::nn::EpochRecord],
}

fn history_csv(h: &[crate::nn::EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for r in h {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, val));
    }
    s
}

fn save_trained(ctx: &mut Ctx, m: &pipeline::TrainedModel, prefix: &str) -> Result<()> {
    let model_path = ctx.path(&format!("{prefix}model.json"));
    m.quantized()?.save(&model_path)?;
    ctx.record(model_path);
    ctx.text(
        &format!("{prefix}train_history.csv"),
        &history_csv(&m.history),
    )?;
    let last = m.history.last();
    ctx.json(
        &format!("{prefix}train.json"),
        &TrainSummary {
            weight_bits: m.weight_bits,
            seed: m.seed,
            lambda: m.lambda,
            params: m.spec.param_count(),
            final_train_loss: last.map(|r| r.train_loss),
            final_val_loss: last.and_then(|r| r.val_loss),
            history: &m.history,
        },
    )
}

/// Result of running one command: the files written and whether the command
/// considers its check passed (only `verify-codegen` can fail a check).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOutcome {
    pub artifacts: Vec<PathBuf>,
    pub passed: bool,
}

/// Run one command with an already resolved config.
pub fn run_with(command: &Command, cfg: &RunConfig, out: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut ctx = Ctx {
        cfg: cfg.clone(),
        hash: cfg.hash()?,
        out: out.to_path_buf(),
        written: Vec::new(),
    };
    ctx.text("resolved_config.json", &cfg.to_json()?)?;
    let data = run_data(cfg)?;
    let passed = dispatch(command, &mut ctx, &data)?;
    let mut artifacts = Vec::with_capacity(ctx.written.len());
    for p in &ctx.written {
        artifacts.push(Artifact {
            path: p.strip_prefix(out).unwrap_or(p).display().to_string(),
            sha256: sha256_file(p)?,
        });
    }
    let index = ArtifactIndex {
        command: command.name().to_string(),
        config_hash: ctx.hash.clone(),
        artifacts,
    };
    let index_name = format!("{}.artifacts.json", command.name());
    let index_path = out.join(&index_name);
    std::fs::write(&index_path, serde_json::to_string_pretty(&index)? + "\n")
        .map_err(|e| Error::io(&index_path, e))?;
    ctx.written.push(index_path);
    Ok(RunOutcome {
        artifacts: ctx.written,
        passed,
    })
}

#[derive(Serialize)]
struct EvalReport {
    metrics: pipeline::EvalMetrics,
    efficiency: crate::metrics::EfficiencyReport,
}

#[derive(Serialize)]
struct CkaEntry {
    layer_a: usize,
    layer_b: usize,
    cka: f64,
}

#[derive(Serialize)]
struct RankingFile<'a> {
    k: usize,
    eigenvalues: &'a [f64],
    bits: usize,
}

#[derive(Serialize)]
struct QualityFile {
    quality: fault::RankingQuality,
    recall_curve: Vec<(usize, Option<f64>)>,
}

fn dispatch(command: &Command, ctx: &mut Ctx, data: &RunData) -> Result<bool> {
    let cfg = ctx.cfg.clone();
    match command {
        Command::GenData => {
            let d = ctx.mkdir("data")?;
            for (name, x) in [
                ("train.csv", &data.train.samples),
                ("eval.csv", &data.eval.samples),
            ] {
                let p = d.join(name);
                write_matrix_csv(x, &p)?;
                ctx.record(p);
            }
            let p = d.join("geometry.csv");
            data.geometry.write_csv(&p)?;
            ctx.record(p);
        }
        Command::Train => {
            let m = train_model(&cfg, data, cfg.model.weight_bits, 0, 0.0)?;
            save_trained(ctx, &m, "")?;
        }
        Command::Eval(arg) => {
            let qm = ctx.model(arg)?;
            let theta = qm.to_params();
            let metrics = pipeline::evaluate_model(qm.spec(), theta.as_slice(), data, &cfg.noise)?;
            let efficiency = neural_efficiency(
                qm.spec(),
                theta.as_slice(),
                &data.eval.samples,
                Mode::BitExact,
            )?;
            ctx.json(
                "eval.json",
                &EvalReport {
                    metrics,
                    efficiency,
                },
            )?;
        }
        Command::Landscape(arg) => {
            let qm = ctx.model(arg)?;
            let l = &cfg.landscape;
            let grid = loss_slice_2d(
                qm.spec(),
                qm.to_params().as_slice(),
                &data.train_head(l.batch_samples),
                l.mode,
                l.extent,
                l.resolution,
                derive_seed(cfg.seed, "landscape"),
            )?;
            let csv = ctx.path("landscape.csv");
            grid.write_csv(&csv)?;
            ctx.record(csv);
            let side = ctx.path("landscape.json");
            grid.write_sidecar(&side)?;
            ctx.record(side);
        }
        Command::Hessian(arg) => {
            let qm = ctx.model(arg)?;
            let m = pipeline::TrainedModel {
                spec: qm.spec().clone(),
                params: qm.to_params(),
                history: vec![],
                steps: vec![],
                weight_bits: qm.spec().layers[0].weight_format.total_bits(),
                seed: cfg.train.seed,
                lambda: 0.0,
            };
            let h = pipeline::curvature(&cfg, data, &m)?;
            ctx.json("hessian.json", &h)?;
        }
        Command::Cka { model, other } => {
            let a = ctx.model(model)?;
            let b = match other {
                Some(p) => QuantizedModel::load(p)?,
                None => a.clone(),
            };
            let x = &data.eval.samples;
            let la = all_layer_outputs(a.spec(), a.to_params().as_slice(), x, Mode::BitExact)?;
            let lb = all_layer_outputs(b.spec(), b.to_params().as_slice(), x, Mode::BitExact)?;
            let mut entries = Vec::new();
            let mut csv = String::from("layer_a,layer_b,cka\n");
            for (i, xa) in la.iter().enumerate() {
                for (j, xb) in lb.iter().enumerate() {
                    let v = linear_cka(xa, xb).map(|r| r.value).unwrap_or(f64::NAN);
                    csv.push_str(&format!("{i},{j},{v}\n"));
                    entries.push(CkaEntry {
                        layer_a: i,
                        layer_b: j,
                        cka: v,
                    });
                }
            }
            ctx.text("cka.csv", &csv)?;
            ctx.json("cka.json", &serde_json::json!({ "entries": entries }))?;
        }
        Command::FaultScan(arg) => {
            let qm = ctx.model(arg)?;
            let mut rep = pipeline::scan(&cfg, data, &qm)?;
            rep.config_hash = Some(ctx.hash.clone());
            let p = ctx.path("fault_scan.json");
            rep.write_json(&p)?;
            ctx.record(p);
            let p = ctx.path("fault_scan.csv");
            rep.write_csv(&p)?;
            ctx.record(p);
            ctx.text("fault_summary.json", &(rep.summary_json()? + "\n"))?;
        }
        Command::RankBits(arg) => {
            let qm = ctx.model(arg)?;
            let r = pipeline::rank(&cfg, data, &qm)?;
            let p = ctx.path("ranking.csv");
            r.write_csv(&p)?;
            ctx.record(p);
            ctx.json(
                "ranking.json",
                &RankingFile {
                    k: r.k,
                    eigenvalues: &r.eigenvalues,
                    bits: r.len(),
                },
            )?;
            let scan = ctx.path("fault_scan.json");
            if scan.exists() {
                let campaign = CampaignReport::read_json(&scan)?;
                let n = r.len();
                let k = campaign
                    .trials
                    .iter()
                    .filter(|t| campaign.is_sensitive(t))
                    .count();
                let ks: Vec<usize> = (1..=20).map(|i| i * n / 20).collect();
                ctx.json(
                    "ranking_quality.json",
                    &QualityFile {
                        quality: fault::ranking_quality(&r, &campaign, k),
                        recall_curve: fault::recall_curve(&r, &campaign, &ks),
                    },
                )?;
            }
        }
        Command::Protect(arg) => {
            let qm = ctx.model(arg)?;
            let r = pipeline::rank(&cfg, data, &qm)?;
            let scan = ctx.path("fault_scan.json");
            let campaign = if scan.exists() {
                Some(CampaignReport::read_json(&scan)?)
            } else {
                None
            };
            let mut plan = fault::select_protection(&r, cfg.fault.budget, campaign.as_ref())?;
            plan.config_hash = Some(ctx.hash.clone());
            ctx.text(
                "protection.json",
                &(serde_json::to_string_pretty(&plan)? + "\n"),
            )?;
        }
        Command::JacregTrain { lambda } => {
            let lambda = lambda.unwrap_or(cfg.jacreg.lambda);
            JacRegConfig {
                lambda,
                ..cfg.jacreg.clone()
            }
            .validate(&cfg.model.spec(cfg.model.weight_bits)?)?;
            let m = train_model(&cfg, data, cfg.model.weight_bits, 0, lambda)?;
            ctx.mkdir("jacreg")?;
            save_trained(ctx, &m, "jacreg/")?;
            let mut csv = String::from("epoch,step,mse,reg,total\n");
            for s in &m.steps {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.epoch, s.step, s.mse, s.reg, s.total
                ));
            }
            ctx.text("jacreg/steps.csv", &csv)?;
        }
        Command::RobustnessCurve => {
            let rc = &cfg.robustness;
            let jobs: Vec<(f64, u64)> = rc
                .lambdas
                .iter()
                .flat_map(|&l| (0..rc.seeds as u64).map(move |s| (l, s)))
                .collect();
            use rayon::prelude::*;
            let trained = jobs
                .par_iter()
                .map(|&(l, s)| {
                    train_model(&cfg, data, cfg.model.weight_bits, s, l).map(|m| m.params)
                })
                .collect::<Result<Vec<Parameters>>>()?;
            let models: Vec<(f64, Vec<Parameters>)> = rc
                .lambdas
                .iter()
                .enumerate()
                .map(|(i, &l)| (l, trained[i * rc.seeds..(i + 1) * rc.seeds].to_vec()))
                .collect();
            let spec = cfg.model.spec(cfg.model.weight_bits)?;
            let curve = noise_robustness_curve(
                &spec,
                &models,
                &data.eval.samples,
                &data.geometry,
                &cfg.noise,
                Mode::BitExact,
            )?;
            ctx.text("robustness.csv", &curve.to_csv())?;
            ctx.json("robustness.json", &curve)?;
        }
        Command::Codegen(arg) | Command::VerifyCodegen(arg) => {
            let qm = ctx.model(arg)?;
            let c = &cfg.codegen;
            let e = codegen::emit(&qm, c.scope, c.vectors, derive_seed(cfg.seed, "codegen"))?;
            let d = ctx.mkdir("codegen")?;
            for p in e.write_to(&d)? {
                ctx.record(p);
            }
            if matches!(command, Command::VerifyCodegen(_)) {
                let report = codegen::verify(&e, &codegen::compiler_from_env())?;
                ctx.json("codegen/verify.json", &report)?;
                return Ok(report.passed);
            }
        }
        Command::Study => {
            let d = ctx.mkdir("study")?;
            let report = run_study(&cfg, data, Some(&d.join("models")))?;
            for p in write_report(&report, &d)? {
                ctx.record(p);
            }
            let mut models: Vec<PathBuf> = std::fs::read_dir(d.join("models"))
                .map_err(|e| Error::io(d.join("models"), e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .collect();
            models.sort();
            for p in models {
                ctx.record(p);
            }
        }
    }
    Ok(true)
}

/// Parse-free entry point: resolve the config, set the thread count and run.
pub fn run(cli: &Cli) -> Result<RunOutcome> {
    let cfg = resolve_config(&cli.global)?;
    match cli.global.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(|| run_with(&cli.command, &cfg, &cli.global.out)),
        None => run_with(&cli.command, &cfg, &cli.global.out),
    }
}
