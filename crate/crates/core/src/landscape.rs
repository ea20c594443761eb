//! Loss-landscape characterization: leading Hessian eigenvalues by power
//! iteration, Hutchinson trace estimates and filter-normalized 2-D slices.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    dot, hvp_objective, norm, Batch, Mode, ModelObjective, ModelSpec, Objective, Parameters,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub k: usize,
    /// Relative residual `‖Hv − λv‖ / |λ|` required to accept a pair.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            k: 1,
            tol: 1e-3,
            max_iters: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HessianSummary {
    /// Ordered by decreasing magnitude.
    pub top_eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub converged: Vec<bool>,
    pub trace_estimate: Option<f64>,
    pub trace_stderr: Option<f64>,
    pub n_probes: usize,
}

fn orthogonalize(v: &mut [f64], found: &[EigenPair]) {
    for p in found {
        let c = dot(&p.vector, v);
        for (x, u) in v.iter_mut().zip(&p.vector) {
            *x -= c * u;
        }
    }
}

/// Leading `k` eigenpairs of the Hessian of `obj` at `theta`, by power
/// iteration on Hessian-vector products. Later pairs iterate on the operator
/// projected onto the orthogonal complement of the pairs already found, and
/// residuals are measured on that projected operator.
pub fn top_eigenpairs<O: Objective + ?Sized>(
    obj: &O,
    theta: &[f64],
    cfg: &PowerConfig,
) -> Result<Vec<EigenPair>> {
    if cfg.k == 0 || !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument("need k >= 1 and tol > 0".into()));
    }
    let n = obj.dim();
    if cfg.k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {} exceeds dimension {n}",
            cfg.k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut found: Vec<EigenPair> = Vec::with_capacity(cfg.k);
    for _ in 0..cfg.k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        orthogonalize(&mut v, &found);
        let vn = norm(&v);
        v.iter_mut().for_each(|x| *x /= vn);
        let mut pair = EigenPair {
            value: 0.0,
            vector: v.clone(),
            residual: f64::INFINITY,
            iterations: 0,
            converged: false,
        };
        for it in 1..=cfg.max_iters.max(1) {
            let mut hv = hvp_objective(obj, theta, &v)?;
            orthogonalize(&mut hv, &found);
            let lambda = dot(&v, &hv);
            let r: f64 = hv
                .iter()
                .zip(&v)
                .map(|(h, x)| (h - lambda * x).powi(2))
                .sum::<f64>()
                .sqrt();
            let residual = if lambda != 0.0 {
                r / lambda.abs()
            } else {
                f64::INFINITY
            };
            pair = EigenPair {
                value: lambda,
                vector: v.clone(),
                residual,
                iterations: it,
                converged: residual <= cfg.tol,
            };
            if pair.converged {
                break;
            }
            let hn = norm(&hv);
            if hn == 0.0 || !hn.is_finite() {
                break;
            }
            v = hv.into_iter().map(|x| x / hn).collect();
        }
        found.push(pair);
    }
    found.sort_by(|a, b| b.value.abs().total_cmp(&a.value.abs()));
    Ok(found)
}

/// Hutchinson estimate of `tr H` with Rademacher probes; returns `(mean, stderr)`.
pub fn trace_hutchinson<O: Objective + ?Sized>(
    obj: &O,
    theta: &[f64],
    n_probes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_probes < 2 {
        return Err(Error::InvalidArgument("need at least 2 probes".into()));
    }
    let n = obj.dim();
    let samples = (0..n_probes)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let z: Vec<f64> = (0..n)
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            Ok(dot(&z, &hvp_objective(obj, theta, &z)?))
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = n_probes as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok((mean, (var / m).sqrt()))
}

/// The point at which curvature is measured. Fake-quant and bit-exact losses
/// are piecewise constant in the parameters, so their curvature is taken as
/// the float-mode Hessian at the quantized (deployed) parameters. The ReLU
/// pattern is frozen there: quantized weights and inputs put many
/// pre-activations exactly on a kink.
fn curvature_point(spec: &ModelSpec, theta: &[f64], mode: Mode) -> Result<Vec<f64>> {
    let p = Parameters::new(spec, theta.to_vec())?;
    Ok(match mode {
        Mode::Float => p.into_inner(),
        Mode::FakeQuant | Mode::BitExact => p.quantized(spec)?.into_inner(),
    })
}

pub fn hessian_top_eigs(
    spec: &ModelSpec,
    theta: &[f64],
    batch: &Batch,
    mode: Mode,
    cfg: &PowerConfig,
) -> Result<Vec<EigenPair>> {
    let point = curvature_point(spec, theta, mode)?;
    top_eigenpairs(
        &ModelObjective::frozen(spec, batch, Mode::Float, &point)?,
        &point,
        cfg,
    )
}

pub fn hessian_trace(
    spec: &ModelSpec,
    theta: &[f64],
    batch: &Batch,
    mode: Mode,
    n_probes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let point = curvature_point(spec, theta, mode)?;
    trace_hutchinson(
        &ModelObjective::frozen(spec, batch, Mode::Float, &point)?,
        &point,
        n_probes,
        seed,
    )
}

/// Eigenvalues and (if `n_probes >= 2`) the trace estimate in one summary.
pub fn hessian_summary(
    spec: &ModelSpec,
    theta: &[f64],
    batch: &Batch,
    mode: Mode,
    cfg: &PowerConfig,
    n_probes: usize,
) -> Result<HessianSummary> {
    let pairs = hessian_top_eigs(spec, theta, batch, mode, cfg)?;
    let trace = if n_probes >= 2 {
        Some(hessian_trace(spec, theta, batch, mode, n_probes, cfg.seed)?)
    } else {
        None
    };
    Ok(summarize(&pairs, trace, n_probes))
}

pub fn summarize(
    pairs: &[EigenPair],
    trace: Option<(f64, f64)>,
    n_probes: usize,
) -> HessianSummary {
    HessianSummary {
        top_eigenvalues: pairs.iter().map(|p| p.value).collect(),
        residuals: pairs.iter().map(|p| p.residual).collect(),
        converged: pairs.iter().map(|p| p.converged).collect(),
        trace_estimate: trace.map(|t| t.0),
        trace_stderr: trace.map(|t| t.1),
        n_probes: if trace.is_some() { n_probes } else { 0 },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceGrid {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    /// Half-width `s` of the grid along both directions.
    pub extent: f64,
    pub resolution: usize,
    /// Step multipliers shared by both axes, from `-s` to `s`.
    pub coords: Vec<f64>,
    /// `losses[i][j] = L(θ + coords[i]·d1 + coords[j]·d2)`.
    pub losses: Vec<Vec<f64>>,
    pub seed: u64,
}

#[derive(Serialize)]
struct SliceSidecar<'a> {
    d1: &'a [f64],
    d2: &'a [f64],
    extent: f64,
    resolution: usize,
    coords: &'a [f64],
    seed: u64,
    center_loss: f64,
}

impl SliceGrid {
    pub fn center(&self) -> f64 {
        let c = self.resolution / 2;
        self.losses[c][c]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for row in &self.losses {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    /// JSON with the directions and grid axes, for plotting next to the CSV.
    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let side = SliceSidecar {
            d1: &self.d1,
            d2: &self.d2,
            extent: self.extent,
            resolution: self.resolution,
            coords: &self.coords,
            seed: self.seed,
            center_loss: self.center(),
        };
        let text = serde_json::to_string_pretty(&side)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Random direction rescaled block by block to the norm of `theta`'s block.
fn filter_normalized(
    rng: &mut ChaCha8Rng,
    theta: &[f64],
    blocks: &[std::ops::Range<usize>],
) -> Result<Vec<f64>> {
    let mut d: Vec<f64> = (0..theta.len())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    for (b, r) in blocks.iter().enumerate() {
        let target = norm(&theta[r.clone()]);
        if target == 0.0 {
            return Err(Error::Degenerate(format!(
                "parameter block {b} has zero norm; filter normalization is undefined"
            )));
        }
        let have = norm(&d[r.clone()]);
        d[r.clone()].iter_mut().for_each(|x| *x *= target / have);
    }
    Ok(d)
}

/// Loss on an `r x r` grid spanned by two filter-normalized, orthogonalized
/// random directions around `theta`.
pub fn loss_slice<O: Objective + ?Sized>(
    obj: &O,
    theta: &[f64],
    extent: f64,
    resolution: usize,
    seed: u64,
) -> Result<SliceGrid> {
    if resolution.is_multiple_of(2) {
        return Err(Error::InvalidArgument("resolution must be odd".into()));
    }
    if !(extent > 0.0 && extent.is_finite()) {
        return Err(Error::InvalidArgument("extent must be > 0".into()));
    }
    if theta.len() != obj.dim() {
        return Err(Error::Shape(format!(
            "θ has {} entries, objective {}",
            theta.len(),
            obj.dim()
        )));
    }
    let blocks = obj.blocks();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d1 = filter_normalized(&mut rng, theta, &blocks)?;
    let mut d2 = filter_normalized(&mut rng, theta, &blocks)?;
    let c = dot(&d1, &d2) / dot(&d1, &d1);
    for (x, y) in d2.iter_mut().zip(&d1) {
        *x -= c * y;
    }
    if norm(&d2) == 0.0 {
        return Err(Error::Degenerate("slice directions are parallel".into()));
    }
    let half = (resolution / 2) as f64;
    let coords: Vec<f64> = (0..resolution)
        .map(|i| {
            if half == 0.0 {
                0.0
            } else {
                extent * (i as f64 - half) / half
            }
        })
        .collect();
    let flat = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let (a, b) = (coords[k / resolution], coords[k % resolution]);
            let point: Vec<f64> = theta
                .iter()
                .zip(d1.iter().zip(&d2))
                .map(|(t, (u, v))| t + a * u + b * v)
                .collect();
            obj.loss(&point)
        })
        .collect::<Result<Vec<f64>>>()?;
    let losses = flat.chunks(resolution).map(|r| r.to_vec()).collect();
    Ok(SliceGrid {
        d1,
        d2,
        extent,
        resolution,
        coords,
        losses,
        seed,
    })
}

/// 2-D loss slice of a model around `theta`, evaluated in `mode`.
pub fn loss_slice_2d(
    spec: &ModelSpec,
    theta: &[f64],
    batch: &Batch,
    mode: Mode,
    extent: f64,
    resolution: usize,
    seed: u64,
) -> Result<SliceGrid> {
    loss_slice(
        &ModelObjective::new(spec, batch, mode),
        theta,
        extent,
        resolution,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::FixedPointFormat;
    use crate::nn::{Activation, Quadratic};
    use nalgebra::{DMatrix, DVector};
    use ndarray::Array2;

    fn tight(k: usize) -> PowerConfig {
        PowerConfig {
            k,
            tol: 1e-6,
            max_iters: 2000,
            seed: 3,
        }
    }

    #[test]
    fn diagonal_quadratic_spectrum() {
        let q = Quadratic::diagonal(&[3.0, 1.0]);
        let cfg = PowerConfig {
            tol: 1e-5,
            ..tight(2)
        };
        let pairs = top_eigenpairs(&q, &[0.0, 0.0], &cfg).unwrap();
        assert!((pairs[0].value - 3.0).abs() < 1e-6);
        assert!((pairs[1].value - 1.0).abs() < 1e-6);
        assert!(pairs.iter().all(|p| p.converged && p.residual <= 1e-5));
    }

    #[test]
    fn diagonal_trace_is_exact_per_probe() {
        let q = Quadratic::diagonal(&[3.0, 1.0]);
        let (t, se) = trace_hutchinson(&q, &[0.0, 0.0], 16, 0).unwrap();
        assert!((t - 4.0).abs() < 1e-6);
        assert!(se < 1e-6);
        assert!(trace_hutchinson(&q, &[0.0, 0.0], 1, 0).is_err());
    }

    fn random_quadratic(n: usize, seed: u64) -> (Quadratic, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = &m * m.transpose() / n as f64;
        let matrix = (0..n)
            .map(|i| (0..n).map(|j| a[(i, j)]).collect())
            .collect();
        (
            Quadratic {
                matrix,
                blocks: vec![0..n / 2, n / 2..n],
            },
            a,
        )
    }

    #[test]
    fn deflated_vectors_are_orthogonal_and_match_dense_solver() {
        let (q, a) = random_quadratic(12, 1);
        let pairs = top_eigenpairs(&q, &[0.1; 12], &tight(3)).unwrap();
        let mut dense: Vec<f64> = a.symmetric_eigen().eigenvalues.iter().copied().collect();
        dense.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
        for (p, d) in pairs.iter().zip(&dense) {
            assert!((p.value - d).abs() <= 1e-4 * d.abs(), "{} vs {d}", p.value);
        }
        for i in 0..3 {
            for j in 0..i {
                assert!(dot(&pairs[i].vector, &pairs[j].vector).abs() <= 1e-6);
            }
        }
    }

    fn tiny_net() -> (ModelSpec, Vec<f64>, Batch) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = FixedPointFormat::signed(16, 4).unwrap();
        let spec = ModelSpec::chain(
            &[5, 4, 3],
            &[Activation::Sigmoid, Activation::Linear],
            f,
            f,
            f,
        )
        .unwrap();
        let theta: Vec<f64> = (0..spec.param_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let x = Array2::from_shape_fn((20, 5), |_| rng.gen_range(-1.0..1.0));
        let t = Array2::from_shape_fn((20, 3), |_| rng.gen_range(-1.0..1.0));
        (spec, theta, Batch::new(x, t).unwrap())
    }

    fn explicit_hessian(obj: &dyn Objective, theta: &[f64]) -> DMatrix<f64> {
        let p = theta.len();
        let h = 1e-4;
        let mut t = theta.to_vec();
        let mut at = |i: usize, j: usize, di: f64, dj: f64| {
            t.copy_from_slice(theta);
            t[i] += di;
            t[j] += dj;
            obj.loss(&t).unwrap()
        };
        let mut m = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..=i {
                let v = (at(i, j, h, h) - at(i, j, h, -h) - at(i, j, -h, h) + at(i, j, -h, -h))
                    / (4.0 * h * h);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn tiny_net_matches_dense_oracle() {
        let (spec, theta, batch) = tiny_net();
        assert!(theta.len() <= 50);
        let obj = ModelObjective::new(&spec, &batch, Mode::Float);
        let hm = explicit_hessian(&obj, &theta);
        let mut dense: Vec<f64> = hm
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        dense.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
        let pairs = hessian_top_eigs(&spec, &theta, &batch, Mode::Float, &tight(3)).unwrap();
        for (p, d) in pairs.iter().zip(&dense) {
            assert!((p.value - d).abs() <= 0.01 * d.abs(), "{} vs {d}", p.value);
        }
        let exact = hm.trace();
        let (est, se) = hessian_trace(&spec, &theta, &batch, Mode::Float, 1000, 11).unwrap();
        assert!((est - exact).abs() <= 3.0 * se, "{est} ± {se} vs {exact}");
    }

    #[test]
    fn stderr_scales_with_probe_count() {
        let (q, _) = random_quadratic(20, 2);
        let theta = vec![0.0; 20];
        let mean_se = |n: usize| {
            (0..30)
                .map(|s| trace_hutchinson(&q, &theta, n, 100 + s).unwrap().1)
                .sum::<f64>()
                / 30.0
        };
        let ratio = mean_se(50) / mean_se(100);
        assert!((ratio - 2f64.sqrt()).abs() < 0.15, "ratio {ratio}");
    }

    #[test]
    fn quantized_modes_measure_at_quantized_point() {
        let (spec, theta, batch) = tiny_net();
        let cfg = PowerConfig { k: 1, ..tight(1) };
        let a = hessian_top_eigs(&spec, &theta, &batch, Mode::FakeQuant, &cfg).unwrap();
        let q = Parameters::new(&spec, theta.clone())
            .unwrap()
            .quantized(&spec)
            .unwrap();
        let b = hessian_top_eigs(&spec, &q, &batch, Mode::Float, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn slice_center_and_orthogonality() {
        let (spec, theta, batch) = tiny_net();
        let g = loss_slice_2d(&spec, &theta, &batch, Mode::FakeQuant, 1.0, 7, 5).unwrap();
        let l0 = crate::nn::loss(&spec, &theta, &batch, Mode::FakeQuant).unwrap();
        assert!((g.center() - l0).abs() <= 1e-12);
        assert!(dot(&g.d1, &g.d2).abs() <= 1e-9);
        assert_eq!(g.losses.len(), 7);
        assert_eq!(g.coords[0], -1.0);
        assert_eq!(g.coords[3], 0.0);
        let again = loss_slice_2d(&spec, &theta, &batch, Mode::FakeQuant, 1.0, 7, 5).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn filter_normalization_matches_block_norms() {
        let (spec, theta, batch) = tiny_net();
        let obj = ModelObjective::new(&spec, &batch, Mode::Float);
        let g = loss_slice(&obj, &theta, 1.0, 3, 1).unwrap();
        for r in obj.blocks() {
            assert!((norm(&g.d1[r.clone()]) - norm(&theta[r])).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_slice_fits_a_quadratic() {
        let (q, _) = random_quadratic(10, 7);
        let theta: Vec<f64> = (0..10).map(|i| 0.1 * i as f64 + 0.05).collect();
        let g = loss_slice(&q, &theta, 0.5, 9, 2).unwrap();
        let r = g.resolution;
        let mut design = DMatrix::zeros(r * r, 6);
        let mut y = DVector::zeros(r * r);
        for i in 0..r {
            for j in 0..r {
                let (a, b) = (g.coords[i], g.coords[j]);
                let row = i * r + j;
                for (c, v) in [1.0, a, b, a * a, a * b, b * b].into_iter().enumerate() {
                    design[(row, c)] = v;
                }
                y[row] = g.losses[i][j];
            }
        }
        let coef = design.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        let resid = &y - &design * coef;
        let mean = y.mean();
        let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let r2 = 1.0 - resid.norm_squared() / ss_tot;
        assert!(r2 >= 1.0 - 1e-9, "R² = {r2}");
    }

    #[test]
    fn even_loss_gives_point_symmetric_grid() {
        let (q, _) = random_quadratic(8, 3);
        // Nonzero blocks are needed for filter normalization; evaluate around
        // a shifted quadratic centered at theta so the loss is even there.
        let theta: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) * 0.2).collect();
        let shifted = Shifted {
            inner: q,
            center: theta.clone(),
        };
        let g = loss_slice(&shifted, &theta, 1.0, 5, 9).unwrap();
        let r = g.resolution;
        for i in 0..r {
            for j in 0..r {
                assert!((g.losses[i][j] - g.losses[r - 1 - i][r - 1 - j]).abs() <= 1e-9);
            }
        }
    }

    struct Shifted {
        inner: Quadratic,
        center: Vec<f64>,
    }

    impl Objective for Shifted {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn loss(&self, theta: &[f64]) -> Result<f64> {
            let d: Vec<f64> = theta.iter().zip(&self.center).map(|(a, b)| a - b).collect();
            self.inner.loss(&d)
        }
        fn loss_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
            let d: Vec<f64> = theta.iter().zip(&self.center).map(|(a, b)| a - b).collect();
            self.inner.loss_grad(&d)
        }
        fn blocks(&self) -> Vec<std::ops::Range<usize>> {
            self.inner.blocks()
        }
    }

    #[test]
    fn slice_argument_checks() {
        let q = Quadratic::diagonal(&[1.0, 2.0]);
        assert!(loss_slice(&q, &[1.0, 1.0], 1.0, 4, 0).is_err());
        assert!(loss_slice(&q, &[1.0, 1.0], 0.0, 5, 0).is_err());
        assert!(matches!(
            loss_slice(&q, &[0.0, 0.0], 1.0, 5, 0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn csv_and_sidecar_export() {
        let q = Quadratic::diagonal(&[1.0, 2.0, 3.0]);
        let g = loss_slice(&q, &[1.0, 1.0, 1.0], 1.0, 3, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        g.write_csv(&dir.path().join("s.csv")).unwrap();
        g.write_sidecar(&dir.path().join("s.json")).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().all(|l| l.split(',').count() == 3));
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap())
                .unwrap();
        assert_eq!(side["resolution"], 3);
    }
}
