use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaResult {
    pub value: f64,
    /// Layers whose activations were compared, when known.
    pub layers: Option<(usize, usize)>,
    pub n: usize,
}

fn centered(x: &Array2<f64>) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).expect("n >= 2 checked by caller");
    x - &mean
}

fn frobenius_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Linear CKA: `‖YᵀX‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F)` on column-centered inputs.
pub fn linear_cka(x: &Array2<f64>, y: &Array2<f64>) -> Result<CkaResult> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "cka: {} vs {} samples",
            x.nrows(),
            y.nrows()
        )));
    }
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "cka needs at least 2 samples".into(),
        ));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("cka input is not finite".into()));
    }
    let xc = centered(x);
    let yc = centered(y);
    let xx = frobenius_sq(&xc.t().dot(&xc)).sqrt();
    let yy = frobenius_sq(&yc.t().dot(&yc)).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::Degenerate("cka input has zero variance".into()));
    }
    let yx = frobenius_sq(&yc.t().dot(&xc));
    Ok(CkaResult {
        value: yx / (xx * yy),
        layers: None,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, p), |_| StandardNormal.sample(rng))
    }

    fn orthogonal(rng: &mut ChaCha8Rng, p: usize) -> Array2<f64> {
        let m = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
        let q = m.qr().q();
        Array2::from_shape_fn((p, p), |(i, j)| q[(i, j)])
    }

    #[test]
    fn self_similarity_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = normal(&mut rng, 50, 6);
        assert!((linear_cka(&x, &x).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invariant_to_rotation_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = normal(&mut rng, 40, 5);
        let y = normal(&mut rng, 40, 3);
        let q = orthogonal(&mut rng, 5);
        let xt = x.dot(&q) * 3.7;
        let a = linear_cka(&x, &y).unwrap().value;
        let b = linear_cka(&xt, &y).unwrap().value;
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        assert!((linear_cka(&x, &xt).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = normal(&mut rng, 30, 4);
            let y = normal(&mut rng, 30, 7);
            let a = linear_cka(&x, &y).unwrap().value;
            let b = linear_cka(&y, &x).unwrap().value;
            assert!((a - b).abs() < 1e-14);
            assert!((0.0..=1.0 + 1e-9).contains(&a));
        }
    }

    #[test]
    fn independent_gaussians_are_dissimilar() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = normal(&mut rng, 1000, 8);
        let y = normal(&mut rng, 1000, 8);
        assert!(linear_cka(&x, &y).unwrap().value < 0.1);
    }

    #[test]
    fn degenerate_inputs() {
        let x = Array2::from_elem((5, 2), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = normal(&mut rng, 5, 2);
        assert!(matches!(linear_cka(&x, &y), Err(Error::Degenerate(_))));
        assert!(linear_cka(&y, &normal(&mut rng, 4, 2)).is_err());
        assert!(linear_cka(
            &y.slice(ndarray::s![..1, ..]).to_owned(),
            &y.slice(ndarray::s![..1, ..]).to_owned()
        )
        .is_err());
    }
}
