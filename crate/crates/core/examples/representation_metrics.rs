//! Linear CKA between the layers of two differently quantized models, and
//! neural efficiency of each layer.
use edgerel::dataio::{gen_synthetic, GridGeometry};
use edgerel::metrics::{all_layer_outputs, linear_cka, neural_efficiency};
use edgerel::nn::{Batch, Mode, ModelSpec, TrainConfig};

fn main() -> edgerel::Result<()> {
    let geometry = GridGeometry::rectangular(8, 6)?;
    let x = gen_synthetic(1024, 1, &Default::default(), &geometry)?.samples;
    let probe = gen_synthetic(300, 9, &Default::default(), &geometry)?.samples;
    let cfg = TrainConfig {
        lr: 3e-3,
        epochs: 40,
        ..Default::default()
    };
    let mut acts = Vec::new();
    for bits in [4, 8] {
        let spec = ModelSpec::benchmark(bits, ModelSpec::BENCHMARK_HIDDEN)?;
        let out = edgerel::nn::train(&spec, &Batch::autoencoder(x.clone()), &cfg)?;
        let eff = neural_efficiency(&spec, out.params.as_slice(), &probe, Mode::FakeQuant)?;
        let per_layer: Vec<String> = eff
            .layers
            .iter()
            .map(|l| format!("{:.3}", l.efficiency))
            .collect();
        println!(
            "{bits}-bit efficiency per layer [{}], aggregate {:.3}",
            per_layer.join(", "),
            eff.aggregate
        );
        acts.push(all_layer_outputs(
            &spec,
            out.params.as_slice(),
            &probe,
            Mode::FakeQuant,
        )?);
    }
    for (l, (a, b)) in acts[0].iter().zip(&acts[1]).enumerate() {
        match linear_cka(a, b) {
            Ok(c) => println!("layer {l}: CKA(4-bit, 8-bit) = {:.4}", c.value),
            Err(e) => println!("layer {l}: {e}"),
        }
    }
    Ok(())
}
