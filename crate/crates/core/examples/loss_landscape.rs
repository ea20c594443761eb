//! A 2-D slice of the training loss around a trained model along two
//! filter-normalized random directions, printed as a coarse contour.
use edgerel::dataio::{gen_synthetic, GridGeometry};
use edgerel::landscape::loss_slice_2d;
use edgerel::nn::{Batch, Mode, ModelSpec, TrainConfig};

fn main() -> edgerel::Result<()> {
    let geometry = GridGeometry::rectangular(8, 6)?;
    let batch = Batch::autoencoder(gen_synthetic(512, 1, &Default::default(), &geometry)?.samples);
    let spec = ModelSpec::benchmark(4, ModelSpec::BENCHMARK_HIDDEN)?;
    let cfg = TrainConfig {
        lr: 3e-3,
        epochs: 10,
        ..Default::default()
    };
    let theta = edgerel::nn::train(&spec, &batch, &cfg)?.params;
    let grid = loss_slice_2d(&spec, theta.as_slice(), &batch, Mode::FakeQuant, 1.0, 11, 0)?;
    let lo = grid.center();
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for row in &grid.losses {
        let line: String = row
            .iter()
            .map(|&l| shades[(((l / lo).ln() * 2.0).max(0.0) as usize).min(shades.len() - 1)])
            .collect();
        println!("|{line}|");
    }
    println!("centre loss {lo:.3e}");
    Ok(())
}
