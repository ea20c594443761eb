//! Top Hessian eigenvalues and the Hutchinson trace at two weight widths.
use edgerel::dataio::{gen_synthetic, GridGeometry};
use edgerel::landscape::{hessian_summary, PowerConfig};
use edgerel::nn::{Batch, Mode, ModelSpec, TrainConfig};

fn main() -> edgerel::Result<()> {
    let geometry = GridGeometry::rectangular(8, 6)?;
    let batch = Batch::autoencoder(gen_synthetic(1024, 1, &Default::default(), &geometry)?.samples);
    let cfg = TrainConfig {
        lr: 3e-3,
        epochs: 20,
        ..Default::default()
    };
    let power = PowerConfig {
        k: 3,
        ..Default::default()
    };
    for bits in [4, 8] {
        let spec = ModelSpec::benchmark(bits, ModelSpec::BENCHMARK_HIDDEN)?;
        let theta = edgerel::nn::train(&spec, &batch, &cfg)?.params;
        let h = hessian_summary(&spec, theta.as_slice(), &batch, Mode::FakeQuant, &power, 50)?;
        println!(
            "{bits}-bit: top eigenvalues {:.4?}, trace {:.4} +- {:.4}",
            h.top_eigenvalues,
            h.trace_estimate.unwrap_or(f64::NAN),
            h.trace_stderr.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
