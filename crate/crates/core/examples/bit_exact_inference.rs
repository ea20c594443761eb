//! Run the benchmark autoencoder through the fake-quantized and the integer
//! interpreters and confirm they agree value for value.
use edgerel::dataio::{gen_synthetic, GridGeometry};
use edgerel::nn::{predict, Mode, ModelSpec, Parameters, QuantizedModel};

fn main() -> edgerel::Result<()> {
    let geometry = GridGeometry::rectangular(8, 6)?;
    let x = gen_synthetic(500, 1, &Default::default(), &geometry)?.samples;
    for bits in [2, 4, 6, 8] {
        let spec = ModelSpec::benchmark(bits, ModelSpec::BENCHMARK_HIDDEN)?;
        let theta = Parameters::init(&spec, 3);
        let fq = predict(&spec, theta.as_slice(), &x, Mode::FakeQuant)?;
        let be = predict(&spec, theta.as_slice(), &x, Mode::BitExact)?;
        let diff = fq.iter().zip(&be).filter(|(a, b)| a != b).count();
        println!(
            "{bits}-bit: {} parameters, {diff} differing outputs",
            spec.param_count()
        );
    }

    let spec = ModelSpec::benchmark(6, ModelSpec::BENCHMARK_HIDDEN)?;
    let model = QuantizedModel::from_params(&spec, Parameters::init(&spec, 3).as_slice())?;
    let codes = model.forward_codes(&model.encode_input(&x.row(0).to_vec())?)?;
    println!(
        "latent codes of sample 0: {:?}",
        codes[spec.encoder_len - 1]
    );
    Ok(())
}
