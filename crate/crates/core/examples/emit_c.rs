//! Emit a self-contained C encoder plus golden-vector harness, then compile
//! and run it with $EDGEREL_CC (default `cc`).
use edgerel::codegen::{compiler_from_env, emit, verify};
use edgerel::fault::FaultScope;
use edgerel::nn::{ModelSpec, Parameters, QuantizedModel};

fn main() -> edgerel::Result<()> {
    let spec = ModelSpec::benchmark(6, ModelSpec::BENCHMARK_HIDDEN)?;
    let model = QuantizedModel::from_params(&spec, Parameters::init(&spec, 1).as_slice())?;
    let emitted = emit(&model, FaultScope::Encoder, 1000, 7)?;
    println!(
        "{} lines of C, {} golden vectors",
        emitted.model.source.lines().count(),
        emitted.harness.len()
    );

    let dir = std::env::temp_dir().join("edgerel-emit-c");
    emitted.write_to(&dir)?;
    println!("sources in {}", dir.display());

    match verify(&emitted, &compiler_from_env()) {
        Ok(r) => println!("{} -> {}", r.compile_command.join(" "), r.stdout.trim()),
        Err(e) => println!("no usable C compiler: {e}"),
    }
    Ok(())
}
