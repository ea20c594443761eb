//! A small width x lambda sweep written as heatmap CSVs.
use edgerel::cli::pipeline::run_data;
use edgerel::cli::{run_study, write_report, RunConfig};

fn main() -> edgerel::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.data.train_samples = 1024;
    cfg.data.eval_samples = 64;
    cfg.train.epochs = 30;
    cfg.landscape.n_probes = 30;
    cfg.landscape.batch_samples = 128;
    cfg.study.lambdas = vec![0.0, 1e-5];
    cfg.study.seeds = 1;
    let data = run_data(&cfg)?;
    let report = run_study(&cfg, &data, None)?;
    for h in &report.heatmaps {
        println!("{}:\n{}", h.name, h.to_csv());
    }
    let dir = std::env::temp_dir().join("edgerel-study");
    write_report(&report, &dir)?;
    println!("written to {}", dir.display());
    Ok(())
}
