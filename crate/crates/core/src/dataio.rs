//! Sensor-grid datasets: synthetic generation, CSV ingestion, row
//! normalization and input noise.
//!
//! A sample is a row of nonnegative cell energies normalized to sum to one.
//! The grid geometry gives each cell a 2-D position, which is also the ground
//! metric for the earth mover's distance.

use std::io::Read;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cell positions of a sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    coords: Vec<(f64, f64)>,
}

impl GridGeometry {
    pub fn new(coords: Vec<(f64, f64)>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument(
                "geometry needs at least one cell".into(),
            ));
        }
        if let Some(i) = coords
            .iter()
            .position(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(Error::Data {
                row: i + 1,
                msg: "non-finite coordinate".into(),
            });
        }
        Ok(GridGeometry { coords })
    }

    /// `nx` by `ny` rectangular grid with unit spacing, row-major.
    pub fn rectangular(nx: usize, ny: usize) -> Result<Self> {
        Self::new(
            (0..ny)
                .flat_map(|y| (0..nx).map(move |x| (x as f64, y as f64)))
                .collect(),
        )
    }

    /// Cells on a line at the given positions.
    pub fn collinear(positions: &[f64]) -> Result<Self> {
        Self::new(positions.iter().map(|&x| (x, 0.0)).collect())
    }

    pub fn cells(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (xa, ya) = self.coords[a];
        let (xb, yb) = self.coords[b];
        (xa - xb).hypot(ya - yb)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }

    /// One `x,y` row per cell, no header.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let rows = read_rows(r, Some(2))?;
        Self::new(rows.into_iter().map(|r| (r[0], r[1])).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for (x, y) in &self.coords {
            s.push_str(&format!("{x},{y}\n"));
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

impl Default for GridGeometry {
    /// 8 x 6 grid, 48 cells.
    fn default() -> Self {
        Self::rectangular(8, 6).expect("non-empty grid")
    }
}

/// Samples (rows) of normalized cell energies on a geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Array2<f64>,
    pub geometry: GridGeometry,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(samples: Array2<f64>, geometry: GridGeometry) -> Result<Self> {
        if samples.ncols() != geometry.cells() {
            return Err(Error::Shape(format!(
                "{} columns for {} cells",
                samples.ncols(),
                geometry.cells()
            )));
        }
        Ok(Dataset {
            samples,
            geometry,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    /// First `n` rows (or all if fewer).
    pub fn head(&self, n: usize) -> Array2<f64> {
        let n = n.min(self.len());
        self.samples.slice(ndarray::s![..n, ..]).to_owned()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(&self.samples, path)
    }
}

/// Synthetic shower generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobConfig {
    pub min_blobs: usize,
    pub max_blobs: usize,
    /// Gaussian width range in cell units.
    pub width: (f64, f64),
    pub amplitude: (f64, f64),
    /// Blob centers are a random cell position plus a uniform offset in
    /// `±center_jitter/2` on each axis.
    pub center_jitter: f64,
    /// Expected counts per unit intensity for Poisson fluctuation; `None` disables it.
    pub counts_per_unit: Option<f64>,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            min_blobs: 1,
            max_blobs: 3,
            width: (0.5, 2.0),
            amplitude: (1.0, 5.0),
            center_jitter: 1.0,
            counts_per_unit: Some(20.0),
        }
    }
}

impl BlobConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.min_blobs == 0 || self.min_blobs > self.max_blobs {
            return bad("need 1 <= min_blobs <= max_blobs");
        }
        if !(self.width.0 > 0.0 && self.width.0 <= self.width.1) {
            return bad("width range must be positive and ordered");
        }
        if !(self.amplitude.0 > 0.0 && self.amplitude.0 <= self.amplitude.1) {
            return bad("amplitude range must be positive and ordered");
        }
        if self.center_jitter < 0.0 || self.counts_per_unit.is_some_and(|c| c <= 0.0) {
            return bad("jitter must be >= 0 and counts_per_unit > 0");
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Generate `n` samples of 1-3 Poisson-fluctuated Gaussian blobs, row-normalized.
pub fn gen_synthetic(
    n: usize,
    seed: u64,
    cfg: &BlobConfig,
    geometry: &GridGeometry,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    cfg.validate()?;
    let c = geometry.cells();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Array2::zeros((n, c));
    let mut intensity = vec![0.0; c];
    for mut row in samples.rows_mut() {
        intensity.iter_mut().for_each(|v| *v = 0.0);
        let blobs = rng.gen_range(cfg.min_blobs..=cfg.max_blobs);
        for _ in 0..blobs {
            let (cx, cy) = geometry.coords()[rng.gen_range(0..c)];
            let jx = cfg.center_jitter * (rng.gen::<f64>() - 0.5);
            let jy = cfg.center_jitter * (rng.gen::<f64>() - 0.5);
            let (cx, cy) = (cx + jx, cy + jy);
            let width = uniform(&mut rng, cfg.width);
            let amp = uniform(&mut rng, cfg.amplitude);
            for (v, &(x, y)) in intensity.iter_mut().zip(geometry.coords()) {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                *v += amp * (-d2 / (2.0 * width * width)).exp();
            }
        }
        let mut values = intensity.clone();
        if let Some(scale) = cfg.counts_per_unit {
            let counts: Vec<f64> = intensity
                .iter()
                .map(|&lam| {
                    let mean = lam * scale;
                    // The sampler misbehaves for vanishing means (returns -1);
                    // a nonzero count there has probability below 1e-12 anyway.
                    if mean > 1e-12 {
                        Poisson::new(mean)
                            .map(|p| p.sample(&mut rng).max(0.0))
                            .unwrap_or(0.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            if counts.iter().sum::<f64>() > 0.0 {
                values = counts;
            }
        }
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate(
                "blob underflowed on every cell; widen blobs or enable jitter".into(),
            ));
        }
        for (dst, v) in row.iter_mut().zip(&values) {
            *dst = v.max(0.0) / total;
        }
    }
    Ok(Dataset {
        samples,
        geometry: geometry.clone(),
        seed: Some(seed),
    })
}

fn read_rows<R: Read>(r: R, arity: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Data {
            row,
            msg: e.to_string(),
        })?;
        if let Some(a) = arity {
            if rec.len() != a {
                return Err(Error::Data {
                    row,
                    msg: format!("expected {a} fields, found {}", rec.len()),
                });
            }
        }
        let vals = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Data {
                    row,
                    msg: format!("not a number: {f:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    Ok(rows)
}

/// Read a headerless CSV of cell energies and row-normalize it.
pub fn read_csv<R: Read>(r: R, geometry: &GridGeometry) -> Result<Dataset> {
    let c = geometry.cells();
    let rows = read_rows(r, Some(c))?;
    let mut samples = Array2::zeros((rows.len(), c));
    for (i, vals) in rows.iter().enumerate() {
        let row = i + 1;
        if let Some(v) = vals.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Data {
                row,
                msg: format!("value {v} is negative or non-finite"),
            });
        }
        let total: f64 = vals.iter().sum();
        if total <= 0.0 {
            return Err(Error::Data {
                row,
                msg: "row sums to zero".into(),
            });
        }
        for (j, v) in vals.iter().enumerate() {
            samples[[i, j]] = v / total;
        }
    }
    Dataset::new(samples, geometry.clone())
}

pub fn load_csv(path: &Path, geometry: &GridGeometry) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(f, geometry)
}

pub fn write_matrix_csv(x: &Array2<f64>, path: &Path) -> Result<()> {
    let mut s = String::new();
    for row in x.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Scale each row to sum to one. Rows with a zero sum are an error.
pub fn normalize_rows(x: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = x.clone();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Data {
                row: i + 1,
                msg: "negative or non-finite entry".into(),
            });
        }
        let total: f64 = row.sum();
        if total <= 0.0 {
            return Err(Error::Data {
                row: i + 1,
                msg: "row sums to zero".into(),
            });
        }
        row.mapv_inplace(|v| v / total);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    GaussianAdditive,
}

/// Input corruption: `x' = max(0, x + level * rms_cell * g)`, `g ~ N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub level: f64,
    pub kind: NoiseKind,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            level: 0.05,
            kind: NoiseKind::GaussianAdditive,
            seed: 0,
        }
    }
}

/// Root-mean-square of each column.
pub fn cell_rms(x: &Array2<f64>) -> Vec<f64> {
    let n = x.nrows().max(1) as f64;
    x.columns()
        .into_iter()
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / n).sqrt())
        .collect()
}

/// Corrupt `x` with noise scaled per cell by `rms`. Rows are not renormalized.
pub fn add_noise_with_scale(x: &Array2<f64>, rms: &[f64], spec: &NoiseSpec) -> Result<Array2<f64>> {
    if !(spec.level >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise level {} must be >= 0",
            spec.level
        )));
    }
    if rms.len() != x.ncols() {
        return Err(Error::Shape(format!(
            "{} scales for {} cells",
            rms.len(),
            x.ncols()
        )));
    }
    if spec.level == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        for (v, &r) in row.iter_mut().zip(rms) {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v = (*v + spec.level * r * g).max(0.0);
        }
    }
    Ok(out)
}

/// Corrupt `x` using its own per-cell RMS as the noise scale.
pub fn add_noise(x: &Array2<f64>, spec: &NoiseSpec) -> Result<Array2<f64>> {
    add_noise_with_scale(x, &cell_rms(x), spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let g = GridGeometry::default();
        assert_eq!(g.cells(), 48);
        assert_eq!(g.coords()[9], (1.0, 1.0));
        assert_eq!(g.distance(0, 9), 2f64.sqrt());
        assert!(GridGeometry::new(vec![]).is_err());
        assert!(GridGeometry::new(vec![(f64::NAN, 0.0)]).is_err());
    }

    #[test]
    fn narrow_centered_blob_is_one_hot() {
        let g = GridGeometry::default();
        let cfg = BlobConfig {
            min_blobs: 1,
            max_blobs: 1,
            width: (1e-6, 1e-6),
            center_jitter: 0.0,
            counts_per_unit: None,
            ..Default::default()
        };
        let d = gen_synthetic(1, 3, &cfg, &g).unwrap();
        let row = d.samples.row(0);
        assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 47);
    }

    #[test]
    fn synthetic_rows_are_normalized_and_deterministic() {
        let g = GridGeometry::default();
        let cfg = BlobConfig::default();
        let a = gen_synthetic(200, 42, &cfg, &g).unwrap();
        for row in a.samples.rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        let b = gen_synthetic(200, 42, &cfg, &g).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(200, 43, &cfg, &g).unwrap();
        assert_ne!(a.samples, c.samples);
        assert!(gen_synthetic(0, 1, &cfg, &g).is_err());
    }

    #[test]
    fn csv_examples() {
        let g = GridGeometry::rectangular(3, 1).unwrap();
        let d = read_csv("1,0,0\n".as_bytes(), &g).unwrap();
        assert_eq!(d.samples.row(0).to_vec(), vec![1.0, 0.0, 0.0]);

        let g2 = GridGeometry::rectangular(2, 1).unwrap();
        let d = read_csv("2,2\n".as_bytes(), &g2).unwrap();
        assert_eq!(d.samples.row(0).to_vec(), vec![0.5, 0.5]);

        let err = read_csv("1,-1\n".as_bytes(), &g2).unwrap_err();
        assert!(matches!(err, Error::Data { row: 1, .. }));
        let err = read_csv("1,1\n0,0\n".as_bytes(), &g2).unwrap_err();
        assert!(matches!(err, Error::Data { row: 2, .. }));
        let err = read_csv("1,1\n1,1,1\n".as_bytes(), &g2).unwrap_err();
        assert!(matches!(err, Error::Data { row: 2, .. }));
        let err = read_csv("1,x\n".as_bytes(), &g2).unwrap_err();
        assert!(matches!(err, Error::Data { row: 1, .. }));
    }

    #[test]
    fn geometry_csv() {
        let g = GridGeometry::read_csv("0,0\n1,0.5\n".as_bytes()).unwrap();
        assert_eq!(g.coords(), &[(0.0, 0.0), (1.0, 0.5)]);
        assert!(GridGeometry::read_csv("0,0,0\n".as_bytes()).is_err());
    }

    #[test]
    fn normalize_is_idempotent() {
        let g = GridGeometry::default();
        let d = gen_synthetic(20, 1, &BlobConfig::default(), &g).unwrap();
        let once = normalize_rows(&d.samples).unwrap();
        let twice = normalize_rows(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert!(normalize_rows(&Array2::zeros((1, 3))).is_err());
    }

    #[test]
    fn zero_noise_is_identity_and_noise_is_clamped() {
        let g = GridGeometry::default();
        let d = gen_synthetic(50, 1, &BlobConfig::default(), &g).unwrap();
        let same = add_noise(
            &d.samples,
            &NoiseSpec {
                level: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(same, d.samples);
        let noisy = add_noise(
            &d.samples,
            &NoiseSpec {
                level: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(noisy.iter().all(|&v| v >= 0.0));
        assert_ne!(noisy, d.samples);
        assert!(add_noise(
            &d.samples,
            &NoiseSpec {
                level: -0.1,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn noise_std_matches_level_times_rms() {
        // Uniform rows keep every cell far from the clamp at zero.
        let c = 4;
        let n = 100_000;
        let x = Array2::from_elem((n, c), 1.0 / c as f64);
        let rms = cell_rms(&x);
        let spec = NoiseSpec {
            level: 0.05,
            seed: 17,
            ..Default::default()
        };
        let noisy = add_noise_with_scale(&x, &rms, &spec).unwrap();
        for j in 0..c {
            let d: Vec<f64> = (0..n).map(|i| noisy[[i, j]] - x[[i, j]]).collect();
            let mean = d.iter().sum::<f64>() / n as f64;
            let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let want = spec.level * rms[j];
            let mc_err = want / (2.0 * n as f64).sqrt();
            assert!((var.sqrt() - want).abs() <= 3.0 * mc_err);
        }
    }
}
