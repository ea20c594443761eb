//! Train with the encoder Jacobian penalty at a few strengths and compare
//! clean and noisy reconstruction EMD.
use edgerel::dataio::{gen_synthetic, GridGeometry, NoiseSpec};
use edgerel::jacreg::{noise_robustness_curve, train_robust, JacRegConfig};
use edgerel::nn::{Batch, Mode, ModelSpec, TrainConfig};

fn main() -> edgerel::Result<()> {
    let geometry = GridGeometry::rectangular(8, 6)?;
    let batch = Batch::autoencoder(gen_synthetic(1024, 1, &Default::default(), &geometry)?.samples);
    let eval = gen_synthetic(128, 2, &Default::default(), &geometry)?.samples;
    let spec = ModelSpec::benchmark(6, ModelSpec::BENCHMARK_HIDDEN)?;
    let tc = TrainConfig {
        lr: 3e-3,
        epochs: 40,
        ..Default::default()
    };
    let mut models = Vec::new();
    for lambda in [0.0, 1e-6, 1e-4] {
        let out = train_robust(
            &spec,
            &batch,
            &tc,
            &JacRegConfig {
                lambda,
                ..Default::default()
            },
        )?;
        let last = out.steps.last().expect("at least one step");
        println!(
            "lambda {lambda:e}: final mse {:.3e}, penalty {:.3e}",
            last.mse, last.reg
        );
        models.push((lambda, vec![out.params]));
    }
    let noise = NoiseSpec {
        level: 0.05,
        ..Default::default()
    };
    let curve = noise_robustness_curve(&spec, &models, &eval, &geometry, &noise, Mode::BitExact)?;
    print!("{}", curve.to_csv());
    Ok(())
}
