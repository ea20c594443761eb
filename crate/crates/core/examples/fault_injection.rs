//! Flip single stored bits of a trained encoder and measure the EMD damage.
use edgerel::dataio::{gen_synthetic, GridGeometry};
use edgerel::fault::{
    evaluate, flip_and_eval, sampled_scan, BitAddress, EvalSet, FaultMetric, FaultScope,
};
use edgerel::nn::{Batch, ModelSpec, QuantizedModel, TrainConfig};

fn main() -> edgerel::Result<()> {
    let geometry = GridGeometry::rectangular(8, 6)?;
    let x = gen_synthetic(1024, 1, &Default::default(), &geometry)?.samples;
    let spec = ModelSpec::benchmark(6, ModelSpec::BENCHMARK_HIDDEN)?;
    let cfg = TrainConfig {
        lr: 3e-3,
        epochs: 10,
        ..Default::default()
    };
    let theta = edgerel::nn::train(&spec, &Batch::autoencoder(x), &cfg)?.params;
    let mut model = QuantizedModel::from_params(&spec, theta.as_slice())?;
    let eval = EvalSet::autoencoder(
        gen_synthetic(64, 2, &Default::default(), &geometry)?.samples,
        Some(geometry),
    )?;

    // The sign bit of the first encoder weight, then a low bit.
    let m0 = evaluate(&model, &eval, FaultMetric::Emd)?;
    for bit in [5, 0] {
        let addr = BitAddress {
            layer: 0,
            param: 0,
            bit,
        };
        let t = flip_and_eval(&mut model, addr, &eval, FaultMetric::Emd, m0)?;
        println!(
            "flip {addr}: EMD {:.4} -> {:.4} (relative change {:+.4})",
            t.m0, t.m1, t.delta
        );
    }

    let report = sampled_scan(
        &model,
        &eval,
        FaultMetric::Emd,
        FaultScope::Encoder,
        0.01,
        1500,
        4,
    )?;
    println!(
        "{} of {} addresses sampled, sensitive fraction {:.3}",
        report.trials.len(),
        report.address_space,
        report.sensitive_fraction
    );
    for b in &report.by_bit {
        println!("  bit {}: {}/{} sensitive", b.bit, b.sensitive, b.trials);
    }
    Ok(())
}
