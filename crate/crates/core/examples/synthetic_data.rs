//! Generate blob events on the sensor grid, corrupt them with 5% noise and
//! save both as CSV.
use edgerel::dataio::{add_noise, gen_synthetic, write_matrix_csv, GridGeometry, NoiseSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let geometry = GridGeometry::rectangular(8, 6)?;
    let data = gen_synthetic(4, 42, &Default::default(), &geometry)?;
    for row in data.samples.rows() {
        let hot = row.iter().filter(|&&v| v > 0.0).count();
        println!(
            "sum {:.6}, {hot} non-empty cells, max {:.3}",
            row.sum(),
            row.fold(0.0f64, |m, &v| m.max(v))
        );
    }
    let noisy = add_noise(
        &data.samples,
        &NoiseSpec {
            level: 0.05,
            ..Default::default()
        },
    )?;
    let dir = std::env::temp_dir().join("edgerel-data");
    std::fs::create_dir_all(&dir)?;
    data.write_csv(&dir.join("clean.csv"))?;
    write_matrix_csv(&noisy, &dir.join("noisy.csv"))?;
    geometry.write_csv(&dir.join("geometry.csv"))?;
    println!("written to {}", dir.display());
    Ok(())
}
