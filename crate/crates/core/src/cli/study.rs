use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::pipeline::{curvature, noisy_emd, train_model, RunData};
use crate::error::{Error, Result};
use crate::jacreg::reconstruction_emd;
use crate::nn::Mode;

pub const STUDY_SCHEMA_VERSION: u32 = 1;
pub const HEATMAPS: [&str; 3] = ["noisy_emd", "top_eigenvalue", "trace"];

/// One trained model of the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub weight_bits: u32,
    pub lambda: f64,
    pub seed: u64,
    pub clean_emd: f64,
    pub noisy_emd: f64,
    pub top_eigenvalue: f64,
    pub trace: f64,
    pub trace_stderr: f64,
}

/// Median over seeds, rows by weight bit width and columns by lambda.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub name: String,
    pub widths: Vec<u32>,
    pub lambdas: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("weight_bits");
        for l in &self.lambdas {
            out.push_str(&format!(",lambda={l}"));
        }
        out.push('\n');
        for (w, row) in self.widths.iter().zip(&self.values) {
            out.push_str(&w.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn get(&self, width: u32, lambda: f64) -> Option<f64> {
        let i = self.widths.iter().position(|&w| w == width)?;
        let j = self.lambdas.iter().position(|&l| l == lambda)?;
        Some(self.values[i][j])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub widths: Vec<u32>,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cells: Vec<StudyCell>,
    pub heatmaps: Vec<Heatmap>,
    /// Files written next to the report, relative to its directory.
    pub artifacts: Vec<String>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl StudyReport {
    pub fn from_cells(
        config_hash: String,
        widths: Vec<u32>,
        lambdas: Vec<f64>,
        seeds: Vec<u64>,
        cells: Vec<StudyCell>,
    ) -> Self {
        let heatmaps = HEATMAPS
            .iter()
            .map(|&name| {
                let values = widths
                    .iter()
                    .map(|&w| {
                        lambdas
                            .iter()
                            .map(|&l| {
                                let mut v: Vec<f64> = cells
                                    .iter()
                                    .filter(|c| c.weight_bits == w && c.lambda == l)
                                    .map(|c| match name {
                                        "noisy_emd" => c.noisy_emd,
                                        "top_eigenvalue" => c.top_eigenvalue,
                                        _ => c.trace,
                                    })
                                    .collect();
                                median(&mut v)
                            })
                            .collect()
                    })
                    .collect();
                Heatmap {
                    name: name.to_string(),
                    widths: widths.clone(),
                    lambdas: lambdas.clone(),
                    values,
                }
            })
            .collect();
        let mut artifacts: Vec<String> = HEATMAPS.iter().map(|n| format!("{n}.csv")).collect();
        artifacts.push("cells.csv".into());
        StudyReport {
            schema_version: STUDY_SCHEMA_VERSION,
            config_hash,
            widths,
            lambdas,
            seeds,
            cells,
            heatmaps,
            artifacts,
        }
    }

    pub fn heatmap(&self, name: &str) -> Option<&Heatmap> {
        self.heatmaps.iter().find(|h| h.name == name)
    }

    fn cells_csv(&self) -> String {
        let mut out = String::from(
            "weight_bits,lambda,seed,clean_emd,noisy_emd,top_eigenvalue,trace,trace_stderr\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.weight_bits,
                c.lambda,
                c.seed,
                c.clean_emd,
                c.noisy_emd,
                c.top_eigenvalue,
                c.trace,
                c.trace_stderr
            ));
        }
        out
    }
}

/// Write one CSV per heatmap, `cells.csv` and `study.json` into `dir`.
pub fn write_report(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(String, String)> = report
        .heatmaps
        .iter()
        .map(|h| (format!("{}.csv", h.name), h.to_csv()))
        .collect();
    files.push(("cells.csv".into(), report.cells_csv()));
    files.push((
        "study.json".into(),
        serde_json::to_string_pretty(report)? + "\n",
    ));
    let mut out = Vec::with_capacity(files.len());
    for (name, text) in files {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        out.push(p);
    }
    Ok(out)
}

pub fn read_report(dir: &Path) -> Result<StudyReport> {
    let p = dir.join("study.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let r: StudyReport = serde_json::from_str(&text)?;
    if r.schema_version != STUDY_SCHEMA_VERSION {
        return Err(Error::InvalidFormat(format!(
            "study schema version {}",
            r.schema_version
        )));
    }
    Ok(r)
}

/// Train every (width, lambda, seed) combination in parallel and measure
/// noisy EMD and curvature. When `model_dir` is given each model is saved
/// under its own file name.
pub fn run_study(cfg: &RunConfig, data: &RunData, model_dir: Option<&Path>) -> Result<StudyReport> {
    let st = &cfg.study;
    let seeds: Vec<u64> = (0..st.seeds as u64).collect();
    let jobs: Vec<(u32, f64, u64)> = st
        .widths
        .iter()
        .flat_map(|&w| {
            st.lambdas
                .iter()
                .flat_map(move |&l| (0..st.seeds as u64).map(move |s| (w, l, s)))
        })
        .collect();
    if let Some(d) = model_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let cells = jobs
        .par_iter()
        .map(|&(w, l, s)| {
            let m = train_model(cfg, data, w, s, l)?;
            if let Some(d) = model_dir {
                m.quantized()?
                    .save(&d.join(format!("w{w}_lambda{l}_seed{s}.json")))?;
            }
            let x = &data.eval.samples;
            let clean = reconstruction_emd(
                &m.spec,
                m.params.as_slice(),
                x,
                x,
                &data.geometry,
                Mode::BitExact,
            )?;
            let noisy = noisy_emd(&m, data, &cfg.noise, s)?;
            let h = curvature(cfg, data, &m)?;
            Ok(StudyCell {
                weight_bits: w,
                lambda: l,
                seed: m.seed,
                clean_emd: clean,
                noisy_emd: noisy,
                top_eigenvalue: h.top_eigenvalues.first().copied().unwrap_or(f64::NAN),
                trace: h.trace_estimate.unwrap_or(f64::NAN),
                trace_stderr: h.trace_stderr.unwrap_or(f64::NAN),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyReport::from_cells(
        cfg.hash()?,
        st.widths.clone(),
        st.lambdas.clone(),
        seeds
            .iter()
            .map(|&s| cfg.train.seed.wrapping_add(s))
            .collect(),
        cells,
    ))
}
