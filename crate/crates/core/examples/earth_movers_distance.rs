//! Exact EMD on a sensor grid, checked against the 1-D closed form.
use edgerel::dataio::GridGeometry;
use edgerel::metrics::{emd_1d, emd_exact};

fn main() -> edgerel::Result<()> {
    let line = [0.0, 1.0, 2.0, 3.0];
    let p = [0.5, 0.5, 0.0, 0.0];
    let q = [0.0, 0.0, 0.25, 0.75];
    let (d, plan) = emd_exact(&p, &q, &GridGeometry::collinear(&line)?)?;
    println!(
        "collinear: simplex {d:.6}, closed form {:.6}",
        emd_1d(&p, &q, &line)?
    );
    for f in &plan.flows {
        println!("  move {:.2} from cell {} to cell {}", f.mass, f.from, f.to);
    }

    let grid = GridGeometry::rectangular(3, 3)?;
    let mut a = [0.0; 9];
    let mut b = [0.0; 9];
    a[0] = 1.0;
    b[4] = 0.5;
    b[8] = 0.5;
    println!(
        "corner to centre+corner on 3x3: {:.6}",
        emd_exact(&a, &b, &grid)?.0
    );
    Ok(())
}
