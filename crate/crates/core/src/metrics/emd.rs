//! Earth mover's distance between normalized cell-energy distributions.
//!
//! `emd_exact` solves the transportation problem with a primal transportation
//! simplex (north-west-corner start, u-v potentials on the basis tree). Mass
//! that can stay in its own cell is removed first, which is optimal for any
//! metric ground distance and shrinks the problem to the cells with excess
//! (sources) and deficit (sinks).

use std::collections::VecDeque;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::GridGeometry;
use crate::error::{Error, Result};

/// Allowed deviation of a distribution's total mass from one.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Largest cell count accepted by [`emd_exact`].
pub const MAX_CELLS: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub from: usize,
    pub to: usize,
    pub mass: f64,
}

/// Optimal transport plan. `flows` lists mass moved between distinct cells;
/// `stay[i]` is the mass left in cell `i`, so `Σ_to flows + stay = p` and
/// `Σ_from flows + stay = q`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub flows: Vec<Flow>,
    pub stay: Vec<f64>,
    pub cost: f64,
}

impl TransportPlan {
    pub fn source_marginal(&self) -> Vec<f64> {
        let mut m = self.stay.clone();
        for f in &self.flows {
            m[f.from] += f.mass;
        }
        m
    }

    pub fn target_marginal(&self) -> Vec<f64> {
        let mut m = self.stay.clone();
        for f in &self.flows {
            m[f.to] += f.mass;
        }
        m
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(
            "distribution has a negative or non-finite entry".into(),
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Unnormalized { sum });
    }
    Ok(())
}

/// Closed-form 1-D Wasserstein-1: `Σ |P(i) − Q(i)| (pos(i+1) − pos(i))` over CDFs.
pub fn emd_1d(p: &[f64], q: &[f64], positions: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.len() != positions.len() {
        return Err(Error::Shape(format!(
            "emd_1d: {} / {} masses for {} positions",
            p.len(),
            q.len(),
            positions.len()
        )));
    }
    if positions.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidArgument("positions must be sorted".into()));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for i in 0..p.len().saturating_sub(1) {
        cp += p[i];
        cq += q[i];
        total += (cp - cq).abs() * (positions[i + 1] - positions[i]);
    }
    Ok(total)
}

/// Exact EMD with Euclidean ground distance between cell coordinates.
pub fn emd_exact(p: &[f64], q: &[f64], geometry: &GridGeometry) -> Result<(f64, TransportPlan)> {
    let c = geometry.cells();
    if p.len() != c || q.len() != c {
        return Err(Error::Shape(format!(
            "emd: {} / {} masses for {c} cells",
            p.len(),
            q.len()
        )));
    }
    if c > MAX_CELLS {
        return Err(Error::InvalidArgument(format!(
            "{c} cells exceed the solver limit of {MAX_CELLS}"
        )));
    }
    check_distribution(p)?;
    check_distribution(q)?;

    let stay: Vec<f64> = p.iter().zip(q).map(|(a, b)| a.min(*b)).collect();
    let sources: Vec<usize> = (0..c).filter(|&i| p[i] > q[i]).collect();
    let sinks: Vec<usize> = (0..c).filter(|&i| q[i] > p[i]).collect();
    if sources.is_empty() || sinks.is_empty() {
        return Ok((
            0.0,
            TransportPlan {
                flows: vec![],
                stay,
                cost: 0.0,
            },
        ));
    }
    let supply: Vec<f64> = sources.iter().map(|&i| p[i] - q[i]).collect();
    let demand_raw: Vec<f64> = sinks.iter().map(|&j| q[j] - p[j]).collect();
    // Totals agree to within the normalization tolerance; rebalance exactly.
    let scale = supply.iter().sum::<f64>() / demand_raw.iter().sum::<f64>();
    let demand: Vec<f64> = demand_raw.iter().map(|d| d * scale).collect();
    let cost: Vec<f64> = sources
        .iter()
        .flat_map(|&i| sinks.iter().map(move |&j| (i, j)))
        .map(|(i, j)| geometry.distance(i, j))
        .collect();

    let flows = transport_simplex(&supply, &demand, &cost)?;
    let n = sinks.len();
    let mut plan = TransportPlan {
        flows: Vec::new(),
        stay,
        cost: 0.0,
    };
    for (k, &x) in flows.iter().enumerate() {
        if x > 0.0 {
            let (a, b) = (k / n, k % n);
            plan.cost += x * cost[k];
            plan.flows.push(Flow {
                from: sources[a],
                to: sinks[b],
                mass: x,
            });
        }
    }
    Ok((plan.cost, plan))
}

/// Solve `min Σ c_ij x_ij` s.t. row sums = supply, column sums = demand,
/// `x ≥ 0`, for a balanced problem. Returns the dense `m x n` flow matrix.
pub fn transport_simplex(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 || cost.len() != m * n {
        return Err(Error::Shape("transport problem dimensions".into()));
    }
    let mut x = vec![0.0; m * n];
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(m + n - 1);
    let mut is_basic = vec![false; m * n];

    // North-west corner: a staircase of m + n - 1 cells, hence a spanning tree.
    let mut rem_s = supply.to_vec();
    let mut rem_d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let f = rem_s[i].min(rem_d[j]).max(0.0);
        x[i * n + j] = f;
        rem_s[i] -= f;
        rem_d[j] -= f;
        basis.push((i, j));
        is_basic[i * n + j] = true;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if j == n - 1 || (i < m - 1 && rem_s[i] <= rem_d[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
    // Leftover rounding mass goes to the last cell.
    x[(m - 1) * n + (n - 1)] += rem_s[m - 1].max(0.0).min(rem_d[n - 1].max(0.0));

    let cmax = cost.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-12 * cmax.max(1.0);
    let nodes = m + n;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    // Basis tree in compressed adjacency form: node a's edges are
    // adj[start[a]..start[a + 1]], each (neighbor, basis index).
    let mut start = vec![0usize; nodes + 1];
    let mut fill = vec![0usize; nodes];
    let mut adj = vec![(0usize, 0usize); 2 * (nodes - 1)];
    // Rooted at row node 0: parent node, edge to parent, depth.
    let mut parent = vec![(usize::MAX, usize::MAX); nodes];
    let mut depth = vec![0usize; nodes];
    let mut queue = VecDeque::with_capacity(nodes);
    let mut up_e = Vec::with_capacity(nodes);
    let mut up_i = Vec::with_capacity(nodes);
    let max_pivots = 100 * (m + n) * (m + n) + 1000;
    let mut degenerate_run = 0usize;

    for _ in 0..max_pivots {
        start.iter_mut().for_each(|s| *s = 0);
        for &(bi, bj) in &basis {
            start[bi + 1] += 1;
            start[m + bj + 1] += 1;
        }
        for a in 0..nodes {
            start[a + 1] += start[a];
        }
        fill.copy_from_slice(&start[..nodes]);
        for (k, &(bi, bj)) in basis.iter().enumerate() {
            adj[fill[bi]] = (m + bj, k);
            fill[bi] += 1;
            adj[fill[m + bj]] = (bi, k);
            fill[m + bj] += 1;
        }
        // Potentials u_i + v_j = c_ij on basic cells with u_0 = 0, and the
        // rooted tree, in one traversal.
        parent
            .iter_mut()
            .for_each(|p| *p = (usize::MAX, usize::MAX));
        queue.clear();
        queue.push_back(0);
        parent[0] = (0, usize::MAX);
        u[0] = 0.0;
        while let Some(a) = queue.pop_front() {
            for &(b, k) in &adj[start[a]..start[a + 1]] {
                if parent[b].0 != usize::MAX {
                    continue;
                }
                parent[b] = (a, k);
                depth[b] = depth[a] + 1;
                let (bi, bj) = basis[k];
                if b >= m {
                    v[b - m] = cost[bi * n + bj] - u[bi];
                } else {
                    u[b] = cost[bi * n + bj] - v[bj];
                }
                queue.push_back(b);
            }
        }

        let bland = degenerate_run > m + n;
        let mut entering = None;
        let mut best = -tol;
        'price: for i in 0..m {
            let row = &cost[i * n..(i + 1) * n];
            let basic = &is_basic[i * n..(i + 1) * n];
            for j in 0..n {
                if basic[j] {
                    continue;
                }
                let r = row[j] - u[i] - v[j];
                if r < best {
                    entering = Some((i, j));
                    if bland {
                        break 'price;
                    }
                    best = r;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            return Ok(x);
        };

        // Tree path from column node ej to row node ei through their common
        // ancestor; its edges alternate -, +, -, ... starting at ej.
        up_e.clear();
        up_i.clear();
        let (mut a, mut b) = (m + ej, ei);
        while depth[a] > depth[b] {
            up_e.push(parent[a].1);
            a = parent[a].0;
        }
        while depth[b] > depth[a] {
            up_i.push(parent[b].1);
            b = parent[b].0;
        }
        while a != b {
            up_e.push(parent[a].1);
            a = parent[a].0;
            up_i.push(parent[b].1);
            b = parent[b].0;
        }
        let path = up_e.iter().chain(up_i.iter().rev());
        let mut theta = f64::INFINITY;
        let mut leave: Option<usize> = None;
        for (step, &k) in path.clone().enumerate() {
            if step % 2 == 0 {
                let (bi, bj) = basis[k];
                let val = x[bi * n + bj];
                let better = match leave {
                    None => true,
                    Some(l) => {
                        let (li, lj) = basis[l];
                        val < theta || (val == theta && bi * n + bj < li * n + lj)
                    }
                };
                if better {
                    theta = val;
                    leave = Some(k);
                }
            }
        }
        let leave = leave.expect("cycle has a decreasing cell");
        for (step, &k) in path.enumerate() {
            let (bi, bj) = basis[k];
            let cell = &mut x[bi * n + bj];
            if step % 2 == 0 {
                *cell = (*cell - theta).max(0.0);
            } else {
                *cell += theta;
            }
        }
        x[ei * n + ej] = theta;
        let (li, lj) = basis[leave];
        x[li * n + lj] = 0.0;
        is_basic[li * n + lj] = false;
        is_basic[ei * n + ej] = true;
        basis[leave] = (ei, ej);
        degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
    }
    Err(Error::SolverStalled(max_pivots))
}

/// Turn a nonnegative-ish vector into a distribution: clamp at zero and
/// divide by the sum; an all-zero vector becomes uniform.
pub fn to_distribution(v: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    let s: f64 = clamped.iter().sum();
    if s > 0.0 {
        clamped.iter().map(|x| x / s).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    }
}

/// Per-row EMD between `reference` rows (already normalized) and `predicted`
/// rows (normalized with [`to_distribution`]). Rows are solved in parallel.
pub fn emd_rows(
    reference: &Array2<f64>,
    predicted: &Array2<f64>,
    geometry: &GridGeometry,
) -> Result<Vec<f64>> {
    if reference.dim() != predicted.dim() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            reference.dim(),
            predicted.dim()
        )));
    }
    (0..reference.nrows())
        .into_par_iter()
        .map(|i| {
            let p: Vec<f64> = reference.row(i).to_vec();
            let q = to_distribution(&predicted.row(i).to_vec());
            emd_exact(&p, &q, geometry).map(|(c, _)| c)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmdSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

pub fn summarize(values: &[f64]) -> EmdSummary {
    let n = values.len();
    if n == 0 {
        return EmdSummary {
            n,
            mean: f64::NAN,
            median: f64::NAN,
        };
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    EmdSummary {
        n,
        mean: values.iter().sum::<f64>() / n as f64,
        median,
    }
}
