use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dataio::{BlobConfig, GridGeometry, NoiseSpec};
use crate::error::{Error, Result};
use crate::fault::{FaultMetric, FaultScope, DEFAULT_TAU};
use crate::jacreg::JacRegConfig;
use crate::landscape::PowerConfig;
use crate::nn::{Mode, ModelSpec, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub weight_bits: u32,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            weight_bits: 6,
            hidden: ModelSpec::BENCHMARK_HIDDEN,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, weight_bits: u32) -> Result<ModelSpec> {
        ModelSpec::benchmark(weight_bits, self.hidden)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_samples: usize,
    pub eval_samples: usize,
    /// Rectangular grid shape.
    pub nx: usize,
    pub ny: usize,
    pub blobs: BlobConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_samples: 4096,
            eval_samples: 512,
            nx: 8,
            ny: 6,
            blobs: BlobConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::rectangular(self.nx, self.ny)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultConfig {
    pub scope: FaultScope,
    pub metric: FaultMetric,
    pub tau: f64,
    /// Rows of the evaluation set used as the fault-injection batch.
    pub eval_samples: usize,
    /// Flip this many random addresses instead of scanning exhaustively.
    pub sample: Option<usize>,
    /// Eigenpairs used for bit ranking.
    pub rank_k: usize,
    /// Training rows in the batch whose loss Hessian ranks bits.
    pub rank_samples: usize,
    /// Fraction of bits to triplicate.
    pub budget: f64,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig {
            scope: FaultScope::Encoder,
            metric: FaultMetric::Emd,
            tau: DEFAULT_TAU,
            eval_samples: 256,
            sample: None,
            rank_k: 4,
            rank_samples: 512,
            budget: 0.06,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeConfig {
    pub mode: Mode,
    pub power: PowerConfig,
    pub n_probes: usize,
    /// Training rows in the curvature batch.
    pub batch_samples: usize,
    pub extent: f64,
    pub resolution: usize,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig {
            mode: Mode::FakeQuant,
            power: PowerConfig::default(),
            n_probes: 100,
            batch_samples: 512,
            extent: 1.0,
            resolution: 21,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub lambdas: Vec<f64>,
    pub seeds: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            lambdas: vec![0.0, 1e-3, 1e-2, 1e-1],
            seeds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Weight bit widths (rows of every heatmap).
    pub widths: Vec<u32>,
    /// Jacobian regularization strengths (columns).
    pub lambdas: Vec<f64>,
    pub seeds: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            widths: vec![2, 4, 6, 8],
            lambdas: vec![0.0, 1e-2, 1e-1],
            seeds: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodegenConfig {
    pub scope: FaultScope,
    pub vectors: usize,
}

impl Default for CodegenConfig {
    fn default() -> Self {
        CodegenConfig {
            scope: FaultScope::Encoder,
            vectors: 10_000,
        }
    }
}

/// Every setting a command can read. Missing keys take their defaults;
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub noise: NoiseSpec,
    pub fault: FaultConfig,
    pub landscape: LandscapeConfig,
    pub jacreg: JacRegConfig,
    pub robustness: RobustnessConfig,
    pub study: StudyConfig,
    pub codegen: CodegenConfig,
}

/// Epochs for the benchmark; shorter runs leave the reconstruction far from converged.
pub const DEFAULT_EPOCHS: usize = 60;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig {
                epochs: DEFAULT_EPOCHS,
                ..TrainConfig::default()
            },
            noise: NoiseSpec::default(),
            fault: FaultConfig::default(),
            landscape: LandscapeConfig::default(),
            jacreg: JacRegConfig::default(),
            robustness: RobustnessConfig::default(),
            study: StudyConfig::default(),
            codegen: CodegenConfig::default(),
        }
    }
}

fn collect_unknown(user: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(u), Value::Object(k)) = (user, known) {
        for (key, v) in u {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            match k.get(key) {
                Some(kv) => collect_unknown(v, kv, &path, out),
                None => out.push(path),
            }
        }
    }
}

// Overlay `user` onto `base` key by key, so partial sections keep the run defaults.
fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parse JSON over the defaults, listing every unknown key (dotted paths)
    /// in the error.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text)?;
        let mut merged = serde_json::to_value(RunConfig::default())?;
        let mut unknown = Vec::new();
        collect_unknown(&user, &merged, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::UnknownKeys(unknown));
        }
        merge(&mut merged, user);
        serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(format!("{:x}", Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.spec(self.model.weight_bits)?;
        for &w in &self.study.widths {
            self.model.spec(w)?;
        }
        if self.data.train_samples == 0 || self.data.eval_samples == 0 {
            return Err(Error::Config("sample counts must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fault.budget) {
            return Err(Error::Config(format!(
                "budget {} not in [0, 1]",
                self.fault.budget
            )));
        }
        if !(self.noise.level >= 0.0) {
            return Err(Error::Config(format!(
                "noise level {} must be >= 0",
                self.noise.level
            )));
        }
        if self.robustness.seeds == 0 || self.study.seeds == 0 {
            return Err(Error::Config("seed counts must be >= 1".into()));
        }
        if self.codegen.vectors == 0 {
            return Err(Error::Config("codegen.vectors must be >= 1".into()));
        }
        Ok(())
    }
}

/// A stable 64-bit seed for a named stream derived from the run seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update(seed.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let e = RunConfig::from_json(
            r#"{"sed": 1, "train": {"lr": 0.1, "epoch": 3}, "fault": {"tau": 0.1}}"#,
        )
        .unwrap_err();
        match e {
            Error::UnknownKeys(k) => {
                assert_eq!(k, vec!["sed".to_string(), "train.epoch".to_string()])
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c =
            RunConfig::from_json(r#"{"seed": 9, "noise": {"level": 0.1}, "train": {"lr": 0.01}}"#)
                .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.noise.level, 0.1);
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.train.epochs, DEFAULT_EPOCHS);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(0, "train-data"), derive_seed(0, "eval-data"));
        assert_eq!(derive_seed(3, "x"), derive_seed(3, "x"));
    }
}
