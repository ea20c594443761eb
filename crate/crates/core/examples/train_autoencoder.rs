//! Quantization-aware training of the 6-bit benchmark on synthetic blobs.
use edgerel::dataio::{gen_synthetic, GridGeometry};
use edgerel::nn::{loss, Batch, Mode, ModelSpec, TrainConfig};

fn main() -> edgerel::Result<()> {
    let geometry = GridGeometry::rectangular(8, 6)?;
    let train_x = gen_synthetic(1024, 1, &Default::default(), &geometry)?.samples;
    let test_x = gen_synthetic(256, 2, &Default::default(), &geometry)?.samples;
    let spec = ModelSpec::benchmark(6, ModelSpec::BENCHMARK_HIDDEN)?;
    let cfg = TrainConfig {
        lr: 3e-3,
        epochs: 15,
        ..Default::default()
    };
    let out = edgerel::nn::train(&spec, &Batch::autoencoder(train_x), &cfg)?;
    for r in out.history.iter().step_by(5) {
        println!(
            "epoch {:>2}  train {:.3e}  val {:.3e}",
            r.epoch,
            r.train_loss,
            r.val_loss.unwrap_or(f64::NAN)
        );
    }
    let test = Batch::autoencoder(test_x);
    for mode in [Mode::Float, Mode::FakeQuant, Mode::BitExact] {
        if mode == Mode::BitExact {
            let y = edgerel::nn::predict(&spec, out.params.as_slice(), &test.inputs, mode)?;
            let mse = (&y - &test.targets)
                .mapv(|v| v * v)
                .mean()
                .unwrap_or(f64::NAN);
            println!("{mode:?} test mse {mse:.3e}");
        } else {
            println!(
                "{mode:?} test mse {:.3e}",
                loss(&spec, out.params.as_slice(), &test, mode)?
            );
        }
    }
    Ok(())
}
