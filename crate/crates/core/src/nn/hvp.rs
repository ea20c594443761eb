use std::ops::Range;

use super::forward::Mode;
use super::forward::Net;
use super::grad::{loss_and_grad_gated, loss_gated, Batch};
use super::spec::ModelSpec;
use crate::error::{Error, Result};

/// A differentiable scalar function of a flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn loss(&self, theta: &[f64]) -> Result<f64>;

    fn loss_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Parameter blocks (one per layer) used for per-layer direction scaling.
    fn blocks(&self) -> Vec<Range<usize>> {
        vec![0..self.dim()]
    }
}

/// MSE of a model over a fixed batch.
#[derive(Clone, Debug)]
pub struct ModelObjective<'a> {
    pub spec: &'a ModelSpec,
    pub batch: &'a Batch,
    pub mode: Mode,
    /// Per-sample ReLU patterns held fixed, if any.
    pub gates: Option<Vec<Vec<Vec<bool>>>>,
}

impl<'a> ModelObjective<'a> {
    pub fn new(spec: &'a ModelSpec, batch: &'a Batch, mode: Mode) -> Self {
        ModelObjective {
            spec,
            batch,
            mode,
            gates: None,
        }
    }

    /// The loss with every sample's ReLU pattern frozen at `theta`. It agrees
    /// with the plain loss near `theta` except across kinks, where it stays
    /// smooth, so finite differences of its gradient give the Hessian of the
    /// local linear region (ReLU'(0) = 0) instead of jumps.
    pub fn frozen(
        spec: &'a ModelSpec,
        batch: &'a Batch,
        mode: Mode,
        theta: &[f64],
    ) -> Result<Self> {
        let net = Net::new(spec, theta, mode)?;
        let gates = batch
            .inputs
            .rows()
            .into_iter()
            .map(|x| Ok(net.forward(&x.to_vec())?.relu_gates()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelObjective {
            spec,
            batch,
            mode,
            gates: Some(gates),
        })
    }
}

impl Objective for ModelObjective<'_> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        loss_gated(
            self.spec,
            theta,
            self.batch,
            self.mode,
            self.gates.as_deref(),
        )
    }

    fn loss_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        loss_and_grad_gated(
            self.spec,
            theta,
            self.batch,
            self.mode,
            self.gates.as_deref(),
        )
    }

    fn blocks(&self) -> Vec<Range<usize>> {
        self.spec.layout().iter().map(|l| l.all()).collect()
    }
}

/// `L(θ) = ½ θᵀ A θ` for a symmetric `A`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub matrix: Vec<Vec<f64>>,
    pub blocks: Vec<Range<usize>>,
}

impl Quadratic {
    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let matrix = (0..n)
            .map(|i| (0..n).map(|j| if i == j { d[i] } else { 0.0 }).collect())
            .collect();
        Quadratic {
            matrix,
            blocks: vec![0..n],
        }
    }

    fn apply(&self, theta: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .map(|row| row.iter().zip(theta).map(|(a, t)| a * t).sum())
            .collect()
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.matrix.len()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        Ok(0.5 * dot(theta, &self.apply(theta)))
    }

    fn loss_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let g = self.apply(theta);
        Ok((0.5 * dot(theta, &g), g))
    }

    fn blocks(&self) -> Vec<Range<usize>> {
        self.blocks.clone()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Hessian-vector product by central differences of the gradient:
/// `(∇L(θ+εv) − ∇L(θ−εv)) / 2ε` with `ε = √eps · (1 + ‖θ‖) / ‖v‖`.
pub fn hvp_objective<O: Objective + ?Sized>(obj: &O, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != theta.len() || theta.len() != obj.dim() {
        return Err(Error::Shape(format!(
            "hvp: θ has {}, v has {}, objective has {} entries",
            theta.len(),
            v.len(),
            obj.dim()
        )));
    }
    let vn = norm(v);
    if vn == 0.0 || !vn.is_finite() {
        return Err(Error::ZeroDirection);
    }
    let eps = f64::EPSILON.sqrt() * (1.0 + norm(theta)) / vn;
    let plus: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t + eps * d).collect();
    let minus: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t - eps * d).collect();
    let (_, gp) = obj.loss_grad(&plus)?;
    let (_, gm) = obj.loss_grad(&minus)?;
    Ok(gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * eps))
        .collect())
}

pub fn hvp(
    spec: &ModelSpec,
    theta: &[f64],
    batch: &Batch,
    v: &[f64],
    mode: Mode,
) -> Result<Vec<f64>> {
    hvp_objective(&ModelObjective::new(spec, batch, mode), theta, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::FixedPointFormat;
    use crate::nn::grad::loss;
    use crate::nn::spec::Activation;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_hvp_is_exact_hessian() {
        let q = Quadratic::diagonal(&[3.0, 1.0]);
        let h = hvp_objective(&q, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((h[0] - 3.0).abs() < 1e-6 && h[1].abs() < 1e-6);
    }

    #[test]
    fn zero_direction_is_rejected() {
        let q = Quadratic::diagonal(&[3.0, 1.0]);
        assert!(matches!(
            hvp_objective(&q, &[0.0, 0.0], &[0.0, 0.0]),
            Err(Error::ZeroDirection)
        ));
    }

    fn tiny() -> (ModelSpec, Vec<f64>, Batch) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = FixedPointFormat::signed(16, 4).unwrap();
        let spec = ModelSpec::chain(
            &[4, 3, 2],
            &[Activation::Sigmoid, Activation::Linear],
            f,
            f,
            f,
        )
        .unwrap();
        let theta: Vec<f64> = (0..spec.param_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let x = Array2::from_shape_fn((10, 4), |_| rng.gen_range(-1.0..1.0));
        let t = Array2::from_shape_fn((10, 2), |_| rng.gen_range(-1.0..1.0));
        (spec, theta, Batch::new(x, t).unwrap())
    }

    #[test]
    fn hvp_is_odd_in_v() {
        let (spec, theta, batch) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..theta.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let a = hvp(&spec, &theta, &batch, &v, Mode::Float).unwrap();
        let b = hvp(&spec, &theta, &batch, &neg, Mode::Float).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert!(norm(&sum) <= 1e-6 * norm(&a));
    }

    #[test]
    fn hvp_columns_match_loss_only_hessian() {
        let (spec, theta, batch) = tiny();
        let p = theta.len();
        assert!(p <= 50);
        let obj = ModelObjective::new(&spec, &batch, Mode::Float);
        // Oracle: second differences of the loss, no gradient code involved.
        let h = 1e-4;
        let l = |t: &[f64]| obj.loss(t).unwrap();
        let mut fd = vec![vec![0.0; p]; p];
        let mut t = theta.clone();
        for i in 0..p {
            for j in 0..p {
                let mut at = |di: f64, dj: f64| {
                    t.copy_from_slice(&theta);
                    t[i] += di;
                    t[j] += dj;
                    l(&t)
                };
                fd[i][j] = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
            }
        }
        let mut err = 0.0;
        let mut tot = 0.0;
        for j in 0..p {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            let col = hvp(&spec, &theta, &batch, &e, Mode::Float).unwrap();
            for i in 0..p {
                err += (col[i] - fd[i][j]).powi(2);
                tot += fd[i][j].powi(2);
            }
        }
        assert!(
            (err / tot).sqrt() <= 1e-3,
            "rel frobenius {}",
            (err / tot).sqrt()
        );
    }

    #[test]
    fn frozen_gates_smooth_a_kink() {
        // One hidden ReLU sits exactly at zero on every sample.
        let f = FixedPointFormat::signed(16, 4).unwrap();
        let spec =
            ModelSpec::chain(&[2, 2, 1], &[Activation::Relu, Activation::Linear], f, f, f).unwrap();
        let theta = vec![0.5, -0.25, 0.0, 0.0, 0.1, 0.0, 1.0, 1.0, 0.0];
        let x = Array2::from_shape_fn((6, 2), |(i, j)| (i + j) as f64 / 4.0);
        let t = Array2::from_shape_fn((6, 1), |(i, _)| i as f64 / 10.0);
        let batch = Batch::new(x, t).unwrap();
        let frozen = ModelObjective::frozen(&spec, &batch, Mode::Float, &theta).unwrap();
        assert_eq!(
            frozen.loss(&theta).unwrap(),
            loss(&spec, &theta, &batch, Mode::Float).unwrap()
        );
        let e: Vec<f64> = (0..theta.len())
            .map(|i| if i == 2 { 1.0 } else { 0.0 })
            .collect();
        // Moving the dead unit's weight switches it on for +ε only.
        let raw = hvp(&spec, &theta, &batch, &e, Mode::Float).unwrap();
        let smooth = hvp_objective(&frozen, &theta, &e).unwrap();
        // Gated off, the unit's incoming weights do not touch the loss.
        assert!(smooth.iter().all(|v| v.abs() < 1e-6), "{smooth:?}");
        assert!(raw.iter().any(|v| v.abs() > 1e3), "{raw:?}");
    }
}
