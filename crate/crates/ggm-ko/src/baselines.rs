//! Reference methods the knockoff estimator is benchmarked against:
//! correlation thresholding (ct), partial-correlation thresholding (pt),
//! and neighborhood selection by node-wise lasso (mb) with and/or edge
//! combination. None of them control the FDR; they trace out whole
//! tuning paths instead.

use std::collections::BTreeSet;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::estimator::{Edge, PairwiseScores};
use crate::linalg::SymmetricMatrix;

/// Plain sample correlations from raw cross products, unit diagonal.
/// Callers wanting the centered version center the data first.
#[derive(Clone, Debug)]
pub struct CorrelationMatrix {
    entries: SymmetricMatrix,
}

impl CorrelationMatrix {
    pub fn p(&self) -> usize {
        self.entries.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }
}

impl PairwiseScores for CorrelationMatrix {
    fn p(&self) -> usize {
        self.entries.dim()
    }

    fn score(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }
}

pub fn sample_correlations(x: &DataMatrix) -> Result<CorrelationMatrix> {
    let (n, p) = (x.n(), x.p());
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut norms = vec![0.0; p];
    for j in 0..p {
        for i in 0..n {
            norms[j] += x.get(i, j) * x.get(i, j);
        }
        if norms[j] <= 0.0 {
            return Err(Error::DegenerateColumn { column: j });
        }
    }
    let entries = SymmetricMatrix::from_fn(p, |a, b| {
        if a == b {
            return 1.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            s += x.get(i, a) * x.get(i, b);
        }
        s / (norms[a] * norms[b]).sqrt()
    });
    Ok(CorrelationMatrix { entries })
}

/// Edge sets along a descending threshold grid: an edge is kept at level t
/// when its score magnitude is at least t, so the sets are nested.
#[derive(Clone, Debug)]
pub struct PathResult {
    pub grid: Vec<f64>,
    pub edge_sets: Vec<BTreeSet<Edge>>,
}

pub fn threshold_graph<M: PairwiseScores>(m: &M, grid: &[f64]) -> Result<PathResult> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    for (k, &t) in grid.iter().enumerate() {
        if !(t > 0.0) || (k > 0 && t >= grid[k - 1]) {
            return Err(Error::InvalidGrid);
        }
    }
    let p = m.p();
    let mut edge_sets = Vec::with_capacity(grid.len());
    for &t in grid {
        let mut set = BTreeSet::new();
        for i in 0..p {
            for j in (i + 1)..p {
                if m.score(i, j).abs() >= t {
                    set.insert(Edge::new(i, j));
                }
            }
        }
        edge_sets.push(set);
    }
    Ok(PathResult {
        grid: grid.to_vec(),
        edge_sets,
    })
}

/// Descending linear grid of `len` thresholds covering (0, max_abs].
pub fn linear_threshold_grid(max_abs: f64, len: usize) -> Vec<f64> {
    assert!(max_abs > 0.0 && len > 0);
    (0..len)
        .map(|k| max_abs * (len - k) as f64 / len as f64)
        .collect()
}

/// Descending log-spaced grid from `top` down to `top * floor_ratio`.
pub fn log_lambda_grid(top: f64, floor_ratio: f64, len: usize) -> Vec<f64> {
    assert!(top > 0.0 && (0.0..1.0).contains(&floor_ratio) && len > 1);
    (0..len)
        .map(|k| top * floor_ratio.powf(k as f64 / (len - 1) as f64))
        .collect()
}

pub mod lasso_tolerances {
    /// Sweep stops once no coefficient moved more than this.
    pub const COEF_TOL: f64 = 1e-8;
    pub const MAX_SWEEPS: usize = 10_000;
    /// Allowed stationarity violation at the reported solution.
    pub const KKT_TOL: f64 = 1e-6;
}

/// One node-wise lasso solution. Coefficients are indexed by column of the
/// original matrix (the response slot is fixed at zero) and live on the
/// standardized scale, where every column is rescaled to mean square one;
/// `lambda` is on that same scale.
#[derive(Clone, Debug)]
pub struct LassoFit {
    pub response: usize,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub sweeps: usize,
    pub converged: bool,
}

impl LassoFit {
    pub fn support(&self) -> BTreeSet<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Column scales sqrt(mean square); errors on an exactly zero column.
fn column_scales(x: &DataMatrix) -> Result<Vec<f64>> {
    let (n, p) = (x.n(), x.p());
    let mut scales = vec![0.0; p];
    for j in 0..p {
        let mut s = 0.0;
        for i in 0..n {
            s += x.get(i, j) * x.get(i, j);
        }
        if s <= 0.0 {
            return Err(Error::DegenerateColumn { column: j });
        }
        scales[j] = (s / n as f64).sqrt();
    }
    Ok(scales)
}

/// Gram matrix (1/n) X~^T X~ of the standardized columns.
fn standardized_gram(x: &DataMatrix, scales: &[f64]) -> SymmetricMatrix {
    let (n, p) = (x.n(), x.p());
    SymmetricMatrix::from_fn(p, |a, b| {
        let mut s = 0.0;
        for i in 0..n {
            s += x.get(i, a) * x.get(i, b);
        }
        s / (n as f64 * scales[a] * scales[b])
    })
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

fn descend(
    gram: &SymmetricMatrix,
    response: usize,
    lambda: f64,
    beta: &mut [f64],
) -> (usize, bool) {
    let p = gram.dim();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < lasso_tolerances::MAX_SWEEPS {
        sweeps += 1;
        let mut max_delta = 0.0f64;
        for k in 0..p {
            if k == response {
                continue;
            }
            let mut partial = gram.get(k, response);
            for l in 0..p {
                if l != k && l != response && beta[l] != 0.0 {
                    partial -= gram.get(k, l) * beta[l];
                }
            }
            let new = soft_threshold(partial, lambda) / gram.get(k, k);
            max_delta = max_delta.max((new - beta[k]).abs());
            beta[k] = new;
        }
        if max_delta <= lasso_tolerances::COEF_TOL {
            converged = true;
            break;
        }
    }
    (sweeps, converged)
}

/// Minimizes (1/2n) ||x_j - X_{-j} b||^2 + lambda ||b||_1 on standardized
/// columns by cyclic coordinate descent with soft-threshold updates.
/// Non-convergence within the sweep budget is reported in the fit, not an
/// error.
pub fn lasso_coordinate_descent(x: &DataMatrix, response: usize, lambda: f64) -> Result<LassoFit> {
    let p = x.p();
    assert!(response < p, "response column out of range");
    if x.n() == 0 {
        return Err(Error::EmptySample);
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let scales = column_scales(x)?;
    let gram = standardized_gram(x, &scales);
    let mut beta = vec![0.0; p];
    let (sweeps, converged) = descend(&gram, response, lambda, &mut beta);
    Ok(LassoFit {
        response,
        coefficients: beta,
        lambda,
        sweeps,
        converged,
    })
}

/// Smallest lambda at which the lasso for this response is exactly zero:
/// max_k |x_k^T x_j| / n on the standardized scale.
pub fn lambda_max(x: &DataMatrix, response: usize) -> Result<f64> {
    let scales = column_scales(x)?;
    let gram = standardized_gram(x, &scales);
    let mut m = 0.0f64;
    for k in 0..x.p() {
        if k != response {
            m = m.max(gram.get(k, response).abs());
        }
    }
    Ok(m)
}

/// Largest `lambda_max` across all node-wise regressions; ratios of a
/// shared lambda grid to this value are comparable across columns.
pub fn lambda_max_global(x: &DataMatrix) -> Result<f64> {
    let scales = column_scales(x)?;
    let gram = standardized_gram(x, &scales);
    let mut m = 0.0f64;
    for j in 0..x.p() {
        for k in 0..j {
            m = m.max(gram.get(k, j).abs());
        }
    }
    Ok(m)
}

/// Penalized objective on the standardized scale, for holding a fit
/// against an independent minimizer.
pub fn lasso_objective(x: &DataMatrix, response: usize, beta: &[f64], lambda: f64) -> Result<f64> {
    let (n, p) = (x.n(), x.p());
    assert_eq!(beta.len(), p);
    let scales = column_scales(x)?;
    let mut rss = 0.0;
    for i in 0..n {
        let mut r = x.get(i, response) / scales[response];
        for k in 0..p {
            if k != response && beta[k] != 0.0 {
                r -= beta[k] * x.get(i, k) / scales[k];
            }
        }
        rss += r * r;
    }
    let l1: f64 = beta
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != response)
        .map(|(_, b)| b.abs())
        .sum();
    Ok(rss / (2.0 * n as f64) + lambda * l1)
}

/// Largest stationarity violation of a fit: active coordinates must match
/// the penalty gradient exactly, inactive ones must stay inside it.
pub fn lasso_kkt_violation(x: &DataMatrix, fit: &LassoFit) -> Result<f64> {
    let p = x.p();
    let scales = column_scales(x)?;
    let gram = standardized_gram(x, &scales);
    let mut worst = 0.0f64;
    for k in 0..p {
        if k == fit.response {
            continue;
        }
        let mut grad = gram.get(k, fit.response);
        for l in 0..p {
            if l != fit.response && fit.coefficients[l] != 0.0 {
                grad -= gram.get(k, l) * fit.coefficients[l];
            }
        }
        let b = fit.coefficients[k];
        let violation = if b != 0.0 {
            (grad - fit.lambda * b.signum()).abs()
        } else {
            (grad.abs() - fit.lambda).max(0.0)
        };
        worst = worst.max(violation);
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MbRule {
    /// Edge kept when both node regressions select each other.
    And,
    /// Edge kept when either node regression selects the other.
    Or,
}

/// Neighborhood-selection graph: one lasso per node at a shared lambda,
/// neighborhoods combined under the given rule.
pub fn mb_graph(x: &DataMatrix, lambda: f64, rule: MbRule) -> Result<BTreeSet<Edge>> {
    let supports = mb_supports(x, lambda)?;
    Ok(combine_supports(&supports, rule))
}

fn mb_supports(x: &DataMatrix, lambda: f64) -> Result<Vec<BTreeSet<usize>>> {
    (0..x.p())
        .map(|j| Ok(lasso_coordinate_descent(x, j, lambda)?.support()))
        .collect()
}

fn combine_supports(supports: &[BTreeSet<usize>], rule: MbRule) -> BTreeSet<Edge> {
    let p = supports.len();
    let mut edges = BTreeSet::new();
    for i in 0..p {
        for j in (i + 1)..p {
            let ij = supports[j].contains(&i);
            let ji = supports[i].contains(&j);
            let keep = match rule {
                MbRule::And => ij && ji,
                MbRule::Or => ij || ji,
            };
            if keep {
                edges.insert(Edge::new(i, j));
            }
        }
    }
    edges
}

/// Neighborhood-selection graphs along a descending lambda path, with
/// warm starts per response. Returns (and-rule, or-rule) edge sets per
/// lambda.
pub fn mb_path(x: &DataMatrix, lambdas: &[f64]) -> Result<Vec<(BTreeSet<Edge>, BTreeSet<Edge>)>> {
    if lambdas.is_empty() {
        return Err(Error::EmptyGrid);
    }
    for (k, &l) in lambdas.iter().enumerate() {
        if !(l > 0.0) || (k > 0 && l >= lambdas[k - 1]) {
            return Err(Error::InvalidGrid);
        }
    }
    let p = x.p();
    let scales = column_scales(x)?;
    let gram = standardized_gram(x, &scales);
    // supports_per_lambda[k][j] = support of response j at lambdas[k]
    let mut supports_per_lambda = vec![Vec::with_capacity(p); lambdas.len()];
    for j in 0..p {
        let mut beta = vec![0.0; p];
        for (k, &lambda) in lambdas.iter().enumerate() {
            descend(&gram, j, lambda, &mut beta);
            supports_per_lambda[k].push(
                beta.iter()
                    .enumerate()
                    .filter(|(_, &b)| b != 0.0)
                    .map(|(idx, _)| idx)
                    .collect::<BTreeSet<usize>>(),
            );
        }
    }
    Ok(supports_per_lambda
        .iter()
        .map(|s| (combine_supports(s, MbRule::And), combine_supports(s, MbRule::Or)))
        .collect())
}
