//! Edge selection for Gaussian graphical models with finite-sample FDR
//! control.
//!
//! The estimator tests all p(p-1)/2 partial correlations at once. For each
//! variable pair it holds a data statistic (the magnitude of the sample
//! partial correlation) against a synthetic "knockoff" statistic drawn
//! from the exact null law of that partial correlation. Pairs where the
//! data beats the knockoff score positively, pairs where the knockoff wins
//! score negatively, and the negative scores calibrate a data-driven
//! selection threshold: the knockoff ratio compares, at every candidate
//! cutoff, how many pairs lost to their knockoff against how many won.
//!
//! Two thresholding schemes are offered. `Scheme::Ko` bounds a modified
//! false discovery rate; `Scheme::KoPlus` adds one to the numerator of the
//! ratio and bounds the FDR itself whenever conditional and marginal
//! independence coincide (block-structured covariance, for example).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::linalg::{invert_spd, SymmetricMatrix};
use crate::rng::RngStream;

/// Thresholding scheme: the plain knockoff ratio or the +1-corrected one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Scheme {
    #[serde(rename = "ko")]
    Ko,
    #[serde(rename = "ko+")]
    KoPlus,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Ko => write!(f, "ko"),
            Scheme::KoPlus => write!(f, "ko+"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ko" => Ok(Scheme::Ko),
            "ko+" | "koplus" | "ko-plus" => Ok(Scheme::KoPlus),
            other => Err(Error::InvalidArgument(format!(
                "unknown scheme {other:?}, expected one of: ko, ko+"
            ))),
        }
    }
}

/// Unordered variable pair, stored with `i < j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    i: usize,
    j: usize,
}

impl Edge {
    /// Normalizes the order of the endpoints. Panics on a self-loop, which
    /// no caller in this crate can produce.
    pub fn new(a: usize, b: usize) -> Edge {
        assert!(a != b, "an edge needs two distinct endpoints");
        if a < b {
            Edge { i: a, j: b }
        } else {
            Edge { i: b, j: a }
        }
    }

    pub fn i(&self) -> usize {
        self.i
    }

    pub fn j(&self) -> usize {
        self.j
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

/// Read access shared by every symmetric score matrix (partial
/// correlations, knockoffs, plain correlations).
pub trait PairwiseScores {
    fn p(&self) -> usize;
    fn score(&self, i: usize, j: usize) -> f64;
}

/// Sample partial correlations with unit diagonal; off-diagonals lie
/// strictly inside (-1, 1).
#[derive(Clone, Debug)]
pub struct PartialCorrelationMatrix {
    entries: SymmetricMatrix,
}

impl PartialCorrelationMatrix {
    pub fn p(&self) -> usize {
        self.entries.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }
}

impl PairwiseScores for PartialCorrelationMatrix {
    fn p(&self) -> usize {
        self.entries.dim()
    }

    fn score(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }
}

/// Knockoff score matrix: unit diagonal, one independent draw per
/// unordered pair mirrored across the diagonal, built for a given sample
/// size so its entries follow the null law of a sample partial
/// correlation.
#[derive(Clone, Debug)]
pub struct KnockoffMatrix {
    entries: SymmetricMatrix,
    dof: usize,
}

impl KnockoffMatrix {
    pub fn p(&self) -> usize {
        self.entries.dim()
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }
}

impl PairwiseScores for KnockoffMatrix {
    fn p(&self) -> usize {
        self.entries.dim()
    }

    fn score(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }
}

/// Converts the inverse of a cross-product (or covariance, or precision)
/// matrix into partial correlations.
fn inverse_to_partial(inv: &SymmetricMatrix) -> Result<PartialCorrelationMatrix> {
    let p = inv.dim();
    let mut entries = SymmetricMatrix::identity(p);
    for i in 0..p {
        for j in (i + 1)..p {
            let denom = (inv.get(i, i) * inv.get(j, j)).sqrt();
            let r = -inv.get(i, j) / denom;
            if !r.is_finite() || r.abs() >= 1.0 {
                return Err(Error::DegenerateColumn { column: j });
            }
            entries.set(i, j, r);
        }
    }
    Ok(PartialCorrelationMatrix { entries })
}

/// Sample partial correlations from the raw cross-product matrix X^T X.
/// Columns are used exactly as given; callers wanting mean adjustment
/// center beforehand.
pub fn partial_correlations(x: &DataMatrix) -> Result<PartialCorrelationMatrix> {
    let (n, p) = (x.n(), x.p());
    if n <= p {
        return Err(Error::SampleSizeTooSmall { n, p });
    }
    let gram = SymmetricMatrix::from_fn(p, |a, b| {
        let mut s = 0.0;
        for i in 0..n {
            s += x.get(i, a) * x.get(i, b);
        }
        s
    });
    let inv = invert_spd(&gram).map_err(|e| match e {
        Error::NotPositiveDefinite { column, .. } => Error::DegenerateColumn { column },
        other => other,
    })?;
    inverse_to_partial(&inv)
}

/// Population partial correlations implied by a precision matrix.
pub fn precision_to_partial(omega: &SymmetricMatrix) -> Result<PartialCorrelationMatrix> {
    for i in 0..omega.dim() {
        if omega.get(i, i) <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                column: i,
                pivot: omega.get(i, i),
            });
        }
    }
    inverse_to_partial(omega)
}

/// Exact null pivot for one sample partial correlation: with p - 2
/// variables conditioned away, r / sqrt((1 - r^2) / (n - p)) follows a
/// Student-t law with n - p degrees of freedom.
pub fn null_t_statistic(r: f64, n: usize, p: usize) -> f64 {
    assert!(n > p, "pivot needs n > p");
    assert!(r.abs() < 1.0, "partial correlation magnitude must be below 1");
    let dof = (n - p) as f64;
    r / ((1.0 - r * r) / dof).sqrt()
}

/// Inverse of the pivot map: the partial-correlation value whose
/// t-statistic equals `z` at `dof` degrees of freedom.
pub fn knockoff_entry(z: f64, dof: usize) -> f64 {
    z / (dof as f64 + z * z).sqrt()
}

/// Draws a knockoff matrix for a data set of `n` observations on `p`
/// variables: one Student-t(n - p) variable per unordered pair, pushed
/// through the inverse pivot map, mirrored across the diagonal. Pairs are
/// visited in row-major upper-triangle order, so the draw sequence is
/// reproducible for a given stream.
pub fn make_knockoffs(rng: &mut RngStream, n: usize, p: usize) -> Result<KnockoffMatrix> {
    if n <= p {
        return Err(Error::InvalidDof {
            dof: n.saturating_sub(p),
        });
    }
    let dof = n - p;
    let mut entries = SymmetricMatrix::identity(p);
    for i in 0..p {
        for j in (i + 1)..p {
            let z = rng.student_t(dof)?;
            entries.set(i, j, knockoff_entry(z, dof));
        }
    }
    Ok(KnockoffMatrix { entries, dof })
}

/// Entrywise magnitudes with a zero diagonal: the per-pair evidence
/// scores compared between data and knockoff.
#[derive(Clone, Debug)]
pub struct EntryStats {
    values: SymmetricMatrix,
}

impl EntryStats {
    pub fn p(&self) -> usize {
        self.values.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }
}

pub fn entry_statistics<M: PairwiseScores>(m: &M) -> EntryStats {
    let p = m.p();
    let values = SymmetricMatrix::from_fn(p, |i, j| if i == j { 0.0 } else { m.score(i, j).abs() });
    EntryStats { values }
}

/// Signed comparison of data against knockoff, one score per pair:
/// magnitude is the larger of the two evidence scores, the sign says which
/// side won, and an exact tie scores zero.
#[derive(Clone, Debug)]
pub struct TestMatrix {
    w: SymmetricMatrix,
    t_obs: EntryStats,
    t_ko: EntryStats,
    source: Option<PartialCorrelationMatrix>,
}

impl TestMatrix {
    pub fn p(&self) -> usize {
        self.w.dim()
    }

    pub fn w(&self, i: usize, j: usize) -> f64 {
        self.w.get(i, j)
    }

    pub fn t_obs(&self) -> &EntryStats {
        &self.t_obs
    }

    pub fn t_ko(&self) -> &EntryStats {
        &self.t_ko
    }

    /// Partial correlations the matrix was built from, when it came from
    /// data rather than from raw scores.
    pub fn source(&self) -> Option<&PartialCorrelationMatrix> {
        self.source.as_ref()
    }

    pub fn with_source(mut self, r: PartialCorrelationMatrix) -> Self {
        self.source = Some(r);
        self
    }

    /// Builds a matrix directly from upper-triangle scores in row-major
    /// pair order, padding the rest with zeros. Test scaffolding for the
    /// thresholding routines.
    pub fn from_upper_scores(p: usize, scores: &[f64]) -> TestMatrix {
        assert!(scores.len() <= p * (p - 1) / 2);
        let mut w = SymmetricMatrix::zeros(p);
        let mut it = scores.iter();
        'outer: for i in 0..p {
            for j in (i + 1)..p {
                match it.next() {
                    Some(&v) => w.set(i, j, v),
                    None => break 'outer,
                }
            }
        }
        let zero = EntryStats {
            values: SymmetricMatrix::zeros(p),
        };
        TestMatrix {
            w,
            t_obs: zero.clone(),
            t_ko: zero,
            source: None,
        }
    }
}

/// Combines the two evidence score matrices into the signed test matrix.
pub fn test_matrix(t_obs: &EntryStats, t_ko: &EntryStats) -> Result<TestMatrix> {
    let p = t_obs.p();
    if t_ko.p() != p {
        return Err(Error::DimensionMismatch {
            left: p,
            right: t_ko.p(),
        });
    }
    let w = SymmetricMatrix::from_fn(p, |i, j| {
        if i == j {
            return 0.0;
        }
        let a = t_obs.get(i, j);
        let b = t_ko.get(i, j);
        if a == b {
            0.0
        } else if a > b {
            a.max(b)
        } else {
            -a.max(b)
        }
    });
    Ok(TestMatrix {
        w,
        t_obs: t_obs.clone(),
        t_ko: t_ko.clone(),
        source: None,
    })
}

/// Outcome of thresholding a test matrix: the data-driven cutoff (infinite
/// when no cutoff qualifies, selecting nothing), the selected edges, and
/// the partial-correlation values retained on them.
#[derive(Clone, Debug)]
pub struct SelectionResult {
    pub scheme: Scheme,
    pub target_q: f64,
    /// Selection cutoff; `f64::INFINITY` encodes "no qualifying cutoff"
    /// and is serialized as the string "inf" in reports.
    pub threshold: f64,
    pub edges: BTreeSet<Edge>,
    /// Partial correlation on each selected edge when the test matrix was
    /// built from data; the raw positive score otherwise.
    pub retained_values: BTreeMap<Edge, f64>,
}

impl SelectionResult {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

fn validate_q(q: f64) -> Result<()> {
    if q.is_nan() || !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidQ { q });
    }
    Ok(())
}

fn collect_nonzero(w: &TestMatrix) -> Vec<(Edge, f64)> {
    let p = w.p();
    let mut out = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = w.w(i, j);
            if v != 0.0 {
                out.push((Edge::new(i, j), v));
            }
        }
    }
    out
}

fn build_selection(w: &TestMatrix, scheme: Scheme, q: f64, threshold: f64) -> SelectionResult {
    let mut edges = BTreeSet::new();
    let mut retained = BTreeMap::new();
    if threshold.is_finite() {
        for (edge, v) in collect_nonzero(w) {
            if v >= threshold {
                edges.insert(edge);
                let kept = match w.source() {
                    Some(r) => r.get(edge.i(), edge.j()),
                    None => v,
                };
                retained.insert(edge, kept);
            }
        }
    }
    SelectionResult {
        scheme,
        target_q: q,
        threshold,
        edges,
        retained_values: retained,
    }
}

/// Knockoff ratio at cutoff `t`, counting over unordered pairs: losses at
/// or beyond -t in the numerator (plus one under the + scheme), wins at or
/// beyond t in the denominator, floored at one.
fn knockoff_ratio(pos: &[f64], neg: &[f64], t: f64, scheme: Scheme) -> f64 {
    let n_neg = neg.len() - neg.partition_point(|&m| m < t);
    let n_pos = pos.len() - pos.partition_point(|&m| m < t);
    let num = match scheme {
        Scheme::Ko => n_neg as f64,
        Scheme::KoPlus => (n_neg + 1) as f64,
    };
    num / n_pos.max(1) as f64
}

fn threshold_select(w: &TestMatrix, q: f64, scheme: Scheme) -> Result<SelectionResult> {
    validate_q(q)?;
    let entries = collect_nonzero(w);
    let mut pos: Vec<f64> = entries
        .iter()
        .filter(|(_, v)| *v > 0.0)
        .map(|(_, v)| *v)
        .collect();
    let mut neg: Vec<f64> = entries
        .iter()
        .filter(|(_, v)| *v < 0.0)
        .map(|(_, v)| -*v)
        .collect();
    pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    neg.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut candidates: Vec<f64> = entries.iter().map(|(_, v)| v.abs()).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();

    let threshold = candidates
        .into_iter()
        .find(|&t| knockoff_ratio(&pos, &neg, t, scheme) <= q)
        .unwrap_or(f64::INFINITY);
    Ok(build_selection(w, scheme, q, threshold))
}

/// Selection at the smallest cutoff whose knockoff ratio stays at or below
/// `q`. Controls a modified FDR in which the selected-set size is inflated
/// by 1/q.
pub fn ko_threshold(w: &TestMatrix, q: f64) -> Result<SelectionResult> {
    threshold_select(w, q, Scheme::Ko)
}

/// Same search with the +1-corrected ratio. Controls the FDR itself when
/// conditional and marginal edge sets coincide; never selects more than
/// [`ko_threshold`] at the same level.
pub fn ko_plus_threshold(w: &TestMatrix, q: f64) -> Result<SelectionResult> {
    threshold_select(w, q, Scheme::KoPlus)
}

pub fn select_edges(w: &TestMatrix, q: f64, scheme: Scheme) -> Result<SelectionResult> {
    threshold_select(w, q, scheme)
}

/// Builds the signed test matrix for a data set: sample partial
/// correlations vs. one knockoff draw, with the partial correlations
/// attached for reporting.
pub fn build_test_matrix(x: &DataMatrix, rng: &mut RngStream) -> Result<TestMatrix> {
    let r = partial_correlations(x)?;
    let r0 = make_knockoffs(rng, x.n(), x.p())?;
    let w = test_matrix(&entry_statistics(&r), &entry_statistics(&r0))?;
    Ok(w.with_source(r))
}

/// One-call pipeline: data in, selected edge set out.
pub fn estimate_graph(
    x: &DataMatrix,
    q: f64,
    rng: &mut RngStream,
    scheme: Scheme,
) -> Result<SelectionResult> {
    validate_q(q)?;
    let w = build_test_matrix(x, rng)?;
    threshold_select(&w, q, scheme)
}

/// Exchanges data and knockoff scores on the given pairs, the substitution
/// the calibration argument rests on. Duplicated pairs count once.
pub fn swap_entries(
    r: &PartialCorrelationMatrix,
    r0: &KnockoffMatrix,
    swap_set: &[(usize, usize)],
) -> Result<(PartialCorrelationMatrix, KnockoffMatrix)> {
    let p = r.p();
    if r0.p() != p {
        return Err(Error::DimensionMismatch {
            left: p,
            right: r0.p(),
        });
    }
    let mut pairs = BTreeSet::new();
    for &(a, b) in swap_set {
        if a == b {
            return Err(Error::DiagonalInSwapSet { index: a });
        }
        if a >= p || b >= p {
            return Err(Error::InvalidArgument(format!(
                "swap index ({a}, {b}) out of range for p = {p}"
            )));
        }
        pairs.insert((a.min(b), a.max(b)));
    }
    let mut r_new = r.entries.clone();
    let mut r0_new = r0.entries.clone();
    for (i, j) in pairs {
        let a = r_new.get(i, j);
        let b = r0_new.get(i, j);
        r_new.set(i, j, b);
        r0_new.set(i, j, a);
    }
    Ok((
        PartialCorrelationMatrix { entries: r_new },
        KnockoffMatrix {
            entries: r0_new,
            dof: r0.dof,
        },
    ))
}

/// Sequential-testing route to the same selection: order the pairs by
/// score magnitude, assign the one-bit p-value 1/2 (data won) or 1
/// (knockoff won) to each, and walk down the order looking for the last
/// stopping index whose running ratio of losses to wins stays within `q`.
/// Stopping indices sit at the end of each tie run, so the walk cannot cut
/// a group of equal magnitudes in half.
///
/// Kept deliberately separate from the direct cutoff search in
/// [`ko_threshold`]: the two routes must agree edge for edge, and tests
/// hold them against each other.
pub fn sequential_threshold_oracle(w: &TestMatrix, q: f64, scheme: Scheme) -> Result<SelectionResult> {
    validate_q(q)?;
    let mut entries = collect_nonzero(w);
    entries.sort_by(|(ea, va), (eb, vb)| {
        vb.abs()
            .partial_cmp(&va.abs())
            .unwrap()
            .then_with(|| ea.cmp(eb))
    });
    let m = entries.len();

    let mut losses = 0usize;
    let mut wins = 0usize;
    let mut best_k = 0usize;
    for (idx, (_, v)) in entries.iter().enumerate() {
        if *v > 0.0 {
            wins += 1;
        } else {
            losses += 1;
        }
        let last_of_tie =
            idx + 1 == m || entries[idx + 1].1.abs() < v.abs();
        if !last_of_tie {
            continue;
        }
        let num = match scheme {
            Scheme::Ko => losses as f64,
            Scheme::KoPlus => (losses + 1) as f64,
        };
        if num / wins.max(1) as f64 <= q {
            best_k = idx + 1;
        }
    }

    if best_k == 0 {
        return Ok(build_selection(w, scheme, q, f64::INFINITY));
    }
    let threshold = entries[best_k - 1].1.abs();
    Ok(build_selection(w, scheme, q, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::tolerances;

    fn random_data(n: usize, p: usize, seed: u64) -> DataMatrix {
        let mut rng = RngStream::new(seed, 0);
        let mut values = Vec::with_capacity(n * p);
        for _ in 0..n * p {
            values.push(rng.standard_normal());
        }
        DataMatrix::new(n, p, values).unwrap()
    }

    /// Independent route to a partial correlation: regress both columns of
    /// the pair on all remaining columns (no intercept, matching the raw
    /// cross-product convention) and correlate the residuals.
    fn residual_regression_partial(x: &DataMatrix, i: usize, j: usize) -> f64 {
        let n = x.n();
        let others: Vec<usize> = (0..x.p()).filter(|&k| k != i && k != j).collect();
        let k = others.len();
        let residual = |target: usize| -> Vec<f64> {
            if k == 0 {
                return x.column(target);
            }
            // Normal equations solved by Gaussian elimination, no shared
            // code with the production path.
            let mut a = vec![vec![0.0; k + 1]; k];
            for (r, &cr) in others.iter().enumerate() {
                for (c, &cc) in others.iter().enumerate() {
                    a[r][c] = (0..n).map(|t| x.get(t, cr) * x.get(t, cc)).sum();
                }
                a[r][k] = (0..n).map(|t| x.get(t, cr) * x.get(t, target)).sum();
            }
            for col in 0..k {
                let pivot_row = (col..k)
                    .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())
                    .unwrap();
                a.swap(col, pivot_row);
                let pivot = a[col][col];
                for r in (col + 1)..k {
                    let f = a[r][col] / pivot;
                    for c in col..=k {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
            let mut beta = vec![0.0; k];
            for r in (0..k).rev() {
                let mut s = a[r][k];
                for c in (r + 1)..k {
                    s -= a[r][c] * beta[c];
                }
                beta[r] = s / a[r][r];
            }
            (0..n)
                .map(|t| {
                    x.get(t, target)
                        - others
                            .iter()
                            .enumerate()
                            .map(|(c, &cc)| beta[c] * x.get(t, cc))
                            .sum::<f64>()
                })
                .collect()
        };
        let ri = residual(i);
        let rj = residual(j);
        let dot: f64 = ri.iter().zip(&rj).map(|(a, b)| a * b).sum();
        let ni: f64 = ri.iter().map(|v| v * v).sum();
        let nj: f64 = rj.iter().map(|v| v * v).sum();
        dot / (ni * nj).sqrt()
    }

    #[test]
    fn partial_correlations_match_residual_regression() {
        for seed in [1u64, 2, 3] {
            let x = random_data(50, 3, seed);
            let r = partial_correlations(&x).unwrap();
            for i in 0..3 {
                for j in (i + 1)..3 {
                    let oracle = residual_regression_partial(&x, i, j);
                    assert!(
                        (r.get(i, j) - oracle).abs() < 1e-8,
                        "seed {seed} pair ({i},{j}): {} vs oracle {oracle}",
                        r.get(i, j)
                    );
                }
            }
        }
        // Wider instance, same oracle.
        let x = random_data(60, 6, 9);
        let r = partial_correlations(&x).unwrap();
        for i in 0..6 {
            for j in (i + 1)..6 {
                let oracle = residual_regression_partial(&x, i, j);
                assert!((r.get(i, j) - oracle).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn partial_correlation_of_two_columns_is_their_correlation() {
        let x = random_data(40, 2, 5);
        let r = partial_correlations(&x).unwrap();
        let (mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0);
        for t in 0..x.n() {
            s00 += x.get(t, 0).powi(2);
            s11 += x.get(t, 1).powi(2);
            s01 += x.get(t, 0) * x.get(t, 1);
        }
        assert!((r.get(0, 1) - s01 / (s00 * s11).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn partial_correlations_are_column_scale_invariant() {
        let x = random_data(50, 4, 7);
        let r = partial_correlations(&x).unwrap();
        let mut scaled_rows = Vec::new();
        for t in 0..x.n() {
            let mut row = x.row(t).to_vec();
            row[2] *= 37.5;
            row[0] *= 1e-3;
            scaled_rows.push(row);
        }
        let scaled = DataMatrix::from_rows(&scaled_rows).unwrap();
        let r2 = partial_correlations(&scaled).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (r.get(i, j) - r2.get(i, j)).abs() < 1e-10,
                    "({i},{j}) moved under column scaling"
                );
            }
        }
    }

    #[test]
    fn partial_correlations_input_checks() {
        let x = random_data(3, 3, 1);
        assert!(matches!(
            partial_correlations(&x),
            Err(Error::SampleSizeTooSmall { n: 3, p: 3 })
        ));

        // Duplicated column makes the cross-product singular.
        let base = random_data(20, 2, 2);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|t| vec![base.get(t, 0), base.get(t, 1), base.get(t, 0)])
            .collect();
        let x = DataMatrix::from_rows(&rows).unwrap();
        assert!(matches!(
            partial_correlations(&x),
            Err(Error::DegenerateColumn { .. })
        ));
    }

    #[test]
    fn precision_to_partial_closed_forms() {
        let omega =
            SymmetricMatrix::try_from_rows(&[vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        let r = precision_to_partial(&omega).unwrap();
        assert!((r.get(0, 1) - 0.5).abs() < 1e-12);

        let tri = SymmetricMatrix::try_from_rows(&[
            vec![2.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 2.0],
        ])
        .unwrap();
        let r = precision_to_partial(&tri).unwrap();
        assert!((r.get(0, 1) - 0.5).abs() < 1e-12);
        assert!((r.get(1, 2) - 0.5).abs() < 1e-12);
        assert!(r.get(0, 2).abs() < 1e-12);
        assert_eq!(r.get(0, 0), 1.0);
    }

    #[test]
    fn null_pivot_closed_form() {
        assert!((null_t_statistic(0.5, 15, 3) - 2.0).abs() < 1e-12);
        assert_eq!(null_t_statistic(0.0, 15, 3), 0.0);
        let a = null_t_statistic(0.5, 100, 10);
        let b = null_t_statistic(0.8, 100, 10);
        assert!(b > a && a > 0.0);
    }

    #[test]
    fn knockoff_entry_closed_form() {
        let v = knockoff_entry(10.0, 100);
        assert!((v - 10.0 / 200f64.sqrt()).abs() < 1e-12);
        // The two maps invert each other.
        let r = 0.37;
        let z = null_t_statistic(r, 60, 10);
        assert!((knockoff_entry(z, 50) - r).abs() < 1e-12);
    }

    #[test]
    fn knockoffs_shape_and_range() {
        let mut rng = RngStream::new(10, 0);
        let k = make_knockoffs(&mut rng, 30, 6).unwrap();
        assert_eq!(k.p(), 6);
        assert_eq!(k.dof(), 24);
        for i in 0..6 {
            assert_eq!(k.get(i, i), 1.0);
            for j in 0..6 {
                assert_eq!(k.get(i, j), k.get(j, i));
                if i != j {
                    assert!(k.get(i, j).abs() < 1.0);
                }
            }
        }
        assert!(matches!(
            make_knockoffs(&mut rng, 5, 6),
            Err(Error::InvalidDof { .. })
        ));
    }

    // Distributional identity behind the construction: knockoff entries
    // follow the same law as null sample partial correlations at matching
    // n and p.
    #[test]
    fn knockoff_entries_match_null_partial_correlations() {
        let (n, p) = (50usize, 5usize);
        let reps = 10_000usize;
        let mut data_rng = RngStream::new(77, 0);
        let sigma = SymmetricMatrix::identity(p);
        let mut null_partials = Vec::with_capacity(reps);
        for _ in 0..reps {
            let x = data_rng.sample_mvn(&sigma, n).unwrap();
            let r = partial_correlations(&x).unwrap();
            null_partials.push(r.get(0, 1));
        }
        let mut ko_rng = RngStream::new(78, 0);
        let mut ko_entries = Vec::with_capacity(reps);
        for _ in 0..reps {
            let z = ko_rng.student_t(n - p).unwrap();
            ko_entries.push(knockoff_entry(z, n - p));
        }
        let d = crate::sim::ks_two_sample(&ko_entries, &null_partials).unwrap();
        let crit = crate::sim::ks_two_sample_critical_value(0.001, reps, reps);
        assert!(d < crit, "two-sample KS {d:.5} vs critical {crit:.5}");
    }

    #[test]
    fn test_matrix_sign_convention() {
        let p = 3usize;
        let mk = |vals: [[f64; 3]; 3]| EntryStats {
            values: SymmetricMatrix::from_fn(p, |i, j| vals[i][j]),
        };
        let t = mk([[0.0, 0.8, 0.5], [0.8, 0.0, 0.5], [0.5, 0.5, 0.0]]);
        let t0 = mk([[0.0, 0.3, 0.5], [0.3, 0.0, 0.9], [0.5, 0.9, 0.0]]);
        let w = test_matrix(&t, &t0).unwrap();
        assert_eq!(w.w(0, 1), 0.8);
        assert_eq!(w.w(1, 2), -0.9);
        assert_eq!(w.w(0, 2), 0.0);
        for i in 0..p {
            assert_eq!(w.w(i, i), 0.0);
        }
    }

    #[test]
    fn threshold_worked_example() {
        let w = TestMatrix::from_upper_scores(4, &[3.0, 2.0, -1.0, 0.5]);

        let sel = ko_threshold(&w, 0.5).unwrap();
        assert_eq!(sel.threshold, 0.5);
        assert_eq!(sel.edges.len(), 3);

        let sel = ko_threshold(&w, 0.2).unwrap();
        assert_eq!(sel.threshold, 2.0);
        assert_eq!(sel.edges.len(), 2);

        let sel = ko_plus_threshold(&w, 0.5).unwrap();
        assert_eq!(sel.threshold, 2.0);
        assert_eq!(sel.edges.len(), 2);

        let sel = ko_plus_threshold(&w, 0.2).unwrap();
        assert!(sel.threshold.is_infinite());
        assert!(sel.edges.is_empty());
    }

    #[test]
    fn threshold_rejects_bad_q() {
        let w = TestMatrix::from_upper_scores(3, &[1.0, -1.0, 0.5]);
        assert!(matches!(
            ko_threshold(&w, -0.1),
            Err(Error::InvalidQ { .. })
        ));
        assert!(matches!(
            ko_threshold(&w, 1.5),
            Err(Error::InvalidQ { .. })
        ));
        assert!(matches!(
            ko_threshold(&w, f64::NAN),
            Err(Error::InvalidQ { .. })
        ));
    }

    #[test]
    fn all_nonpositive_scores_select_nothing() {
        let w = TestMatrix::from_upper_scores(4, &[-0.5, -1.0, 0.0, -0.1, 0.0, -2.0]);
        for q in [0.1, 0.5] {
            let sel = ko_threshold(&w, q).unwrap();
            assert!(sel.threshold.is_infinite());
            assert!(sel.edges.is_empty());
        }
        // At q = 1 the largest magnitude qualifies (one false estimate over
        // a floor of one), yet nothing clears it from the positive side: a
        // finite cutoff with an empty selection.
        let sel = ko_threshold(&w, 1.0).unwrap();
        assert_eq!(sel.threshold, 2.0);
        assert!(sel.edges.is_empty());
        // The +1 correction never lets a pure-noise cutoff qualify here.
        for q in [0.1, 0.5, 1.0] {
            let sel = ko_plus_threshold(&w, q).unwrap();
            assert!(sel.threshold.is_infinite());
            assert!(sel.edges.is_empty());
        }
    }

    #[test]
    fn selected_edges_sit_at_or_above_threshold() {
        let w = TestMatrix::from_upper_scores(5, &[0.3, -0.2, 0.9, 0.1, -0.4, 0.5, 0.2, -0.1, 0.6, 0.05]);
        for q in [0.1, 0.25, 0.5, 0.9] {
            for scheme in [Scheme::Ko, Scheme::KoPlus] {
                let sel = select_edges(&w, q, scheme).unwrap();
                for e in &sel.edges {
                    assert!(w.w(e.i(), e.j()) >= sel.threshold);
                }
                if sel.threshold.is_infinite() {
                    assert!(sel.edges.is_empty());
                }
            }
        }
    }

    #[test]
    fn swap_is_an_involution_and_rejects_diagonal() {
        let x = random_data(40, 5, 3);
        let r = partial_correlations(&x).unwrap();
        let mut rng = RngStream::new(4, 0);
        let r0 = make_knockoffs(&mut rng, 40, 5).unwrap();
        let s = [(0usize, 1usize), (2, 4), (1, 0)];
        let (r1, r01) = swap_entries(&r, &r0, &s).unwrap();
        assert_eq!(r1.get(0, 1), r0.get(0, 1));
        assert_eq!(r01.get(2, 4), r.get(2, 4));
        assert_eq!(r1.get(2, 3), r.get(2, 3));
        let (r2, r02) = swap_entries(&r1, &r01, &s).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(r2.get(i, j), r.get(i, j));
                assert_eq!(r02.get(i, j), r0.get(i, j));
            }
        }
        assert!(matches!(
            swap_entries(&r, &r0, &[(2, 2)]),
            Err(Error::DiagonalInSwapSet { index: 2 })
        ));
    }

    // Swapping data and knockoff scores on a set S flips the sign of the
    // test score exactly on S and nowhere else.
    #[test]
    fn swap_flips_test_scores_exactly() {
        let mut seed_rng = RngStream::new(99, 0);
        for case in 0..100u64 {
            let x = random_data(30, 6, 1000 + case);
            let r = partial_correlations(&x).unwrap();
            let mut rng = RngStream::new(case, 1);
            let r0 = make_knockoffs(&mut rng, 30, 6).unwrap();
            let w = test_matrix(&entry_statistics(&r), &entry_statistics(&r0)).unwrap();

            let mut swap_set = Vec::new();
            for i in 0..6 {
                for j in (i + 1)..6 {
                    if seed_rng.uniform() < 0.4 {
                        swap_set.push((i, j));
                    }
                }
            }
            let (rs, r0s) = swap_entries(&r, &r0, &swap_set).unwrap();
            let ws = test_matrix(&entry_statistics(&rs), &entry_statistics(&r0s)).unwrap();
            for i in 0..6 {
                for j in (i + 1)..6 {
                    let flipped = swap_set.contains(&(i, j));
                    let expected = if flipped { -w.w(i, j) } else { w.w(i, j) };
                    assert_eq!(
                        ws.w(i, j),
                        expected,
                        "case {case} pair ({i},{j}) not an exact sign flip"
                    );
                }
            }
        }
    }

    #[test]
    fn estimate_graph_is_deterministic() {
        let x = random_data(60, 8, 21);
        let sel1 = estimate_graph(&x, 0.2, &mut RngStream::new(5, 3), Scheme::Ko).unwrap();
        let sel2 = estimate_graph(&x, 0.2, &mut RngStream::new(5, 3), Scheme::Ko).unwrap();
        assert_eq!(sel1.edges, sel2.edges);
        assert_eq!(sel1.threshold, sel2.threshold);
    }

    // Under a global null the +1-corrected scheme almost never selects.
    #[test]
    fn estimate_graph_rarely_selects_under_global_null() {
        let sigma = SymmetricMatrix::identity(20);
        let mut selecting = 0usize;
        let mut total_edges = 0usize;
        for rep in 0..100u64 {
            let mut rng = RngStream::new(31, rep);
            let x = rng.sample_mvn(&sigma, 200).unwrap();
            let sel = estimate_graph(&x, 0.1, &mut rng, Scheme::KoPlus).unwrap();
            if !sel.edges.is_empty() {
                selecting += 1;
            }
            total_edges += sel.edges.len();
        }
        assert!(selecting <= 5, "{selecting} of 100 null replicates selected");
        assert!(total_edges <= 190 * 5, "null selections not rare");
    }

    // Strong planted structure is found with decent power.
    #[test]
    fn estimate_graph_finds_strong_blocks() {
        let model = crate::sim::block_graph(40, 2, 0.6).unwrap();
        let mut rng = RngStream::new(12, 0);
        let x = rng.sample_mvn(&model.covariance, 400).unwrap();
        let sel = estimate_graph(&x, 0.2, &mut rng, Scheme::Ko).unwrap();
        let pw = crate::sim::power(&sel.edges, &model.conditional_edges);
        assert!(pw >= 0.5, "power {pw:.3}");
    }

    #[test]
    fn scale_invariance_of_selection() {
        let x = random_data(50, 6, 40);
        let w1 = build_test_matrix(&x, &mut RngStream::new(2, 2)).unwrap();
        let mut rows = Vec::new();
        for t in 0..x.n() {
            let mut row = x.row(t).to_vec();
            for (j, v) in row.iter_mut().enumerate() {
                *v *= [2.0, 0.5, 30.0, 1.0, 0.1, 5.0][j];
            }
            rows.push(row);
        }
        let scaled = DataMatrix::from_rows(&rows).unwrap();
        let w2 = build_test_matrix(&scaled, &mut RngStream::new(2, 2)).unwrap();
        for i in 0..6 {
            for j in (i + 1)..6 {
                assert!(
                    (w1.w(i, j) - w2.w(i, j)).abs() <= tolerances::SPD_ROUNDTRIP_REL,
                    "test score moved under column scaling"
                );
            }
        }
    }
}

#[cfg(test)]
mod property_tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_scores() -> impl Strategy<Value = (usize, Vec<f64>)> {
        (4usize..9).prop_flat_map(|p| {
            let pairs = p * (p - 1) / 2;
            (
                Just(p),
                prop::collection::vec(
                    prop_oneof![3 => -1.0..1.0f64, 1 => Just(0.0f64)],
                    pairs,
                ),
            )
        })
    }

    proptest! {
        // Raising q never removes edges.
        #[test]
        fn selections_grow_with_q((p, scores) in arb_scores(), q1 in 0.0..1.0f64, q2 in 0.0..1.0f64) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let w = TestMatrix::from_upper_scores(p, &scores);
            for scheme in [Scheme::Ko, Scheme::KoPlus] {
                let a = select_edges(&w, lo, scheme).unwrap();
                let b = select_edges(&w, hi, scheme).unwrap();
                prop_assert!(a.edges.is_subset(&b.edges));
                prop_assert!(a.threshold >= b.threshold);
            }
        }

        // The +1 correction can only shrink the selection.
        #[test]
        fn plus_scheme_is_conservative((p, scores) in arb_scores(), q in 0.0..1.0f64) {
            let w = TestMatrix::from_upper_scores(p, &scores);
            let plain = ko_threshold(&w, q).unwrap();
            let plus = ko_plus_threshold(&w, q).unwrap();
            prop_assert!(plus.edges.is_subset(&plain.edges));
            prop_assert!(plus.threshold >= plain.threshold);
        }

        // The sequential route and the direct cutoff search agree exactly.
        #[test]
        fn sequential_route_matches_direct((p, scores) in arb_scores(), q in 0.0..1.0f64) {
            let w = TestMatrix::from_upper_scores(p, &scores);
            for scheme in [Scheme::Ko, Scheme::KoPlus] {
                let direct = select_edges(&w, q, scheme).unwrap();
                let seq = sequential_threshold_oracle(&w, q, scheme).unwrap();
                prop_assert_eq!(&direct.edges, &seq.edges);
                prop_assert!(
                    direct.threshold == seq.threshold
                        || (direct.threshold.is_infinite() && seq.threshold.is_infinite())
                );
            }
        }
    }
}
