//! Compositional-data workflow for comparing estimated networks between
//! sample groups: CSV ingestion, centered log-ratio transform, prevalence
//! filtering, uniform subsampling, selection aggregation across a ladder
//! of halving FDR targets, and a Wilcoxon signed-rank comparison of the
//! aggregated signal strengths.

use std::collections::BTreeMap;
use std::io::Read as IoRead;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::estimator::{estimate_graph, Edge, Scheme, SelectionResult};
use crate::linalg::SymmetricMatrix;
use crate::rng::RngStream;

/// Samples-by-features table of nonnegative abundances, with optional
/// per-sample group labels.
#[derive(Clone, Debug)]
pub struct AbundanceTable {
    n: usize,
    p: usize,
    values: Vec<f64>,
    feature_names: Vec<String>,
    group_labels: Option<Vec<String>>,
}

/// Column name that marks per-sample group labels in input CSVs.
pub const GROUP_COLUMN: &str = "__group__";

impl AbundanceTable {
    pub fn new(
        rows: Vec<Vec<f64>>,
        feature_names: Vec<String>,
        group_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = rows.len();
        let p = feature_names.len();
        {
            let mut seen = std::collections::BTreeSet::new();
            for name in &feature_names {
                if !seen.insert(name) {
                    return Err(Error::MalformedInput(format!(
                        "duplicate feature name {name:?}"
                    )));
                }
            }
        }
        if let Some(labels) = &group_labels {
            if labels.len() != n {
                return Err(Error::DimensionMismatch {
                    left: labels.len(),
                    right: n,
                });
            }
        }
        let mut values = Vec::with_capacity(n * p);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != p {
                return Err(Error::DimensionMismatch {
                    left: row.len(),
                    right: p,
                });
            }
            for (j, v) in row.into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, column: j });
                }
                if v < 0.0 {
                    return Err(Error::NegativeAbundance { row: i, column: j });
                }
                values.push(v);
            }
        }
        Ok(AbundanceTable {
            n,
            p,
            values,
            feature_names,
            group_labels,
        })
    }

    /// Parses a CSV with a header of feature names. A first column named
    /// `__group__` supplies group labels instead of abundances.
    pub fn read_csv<R: IoRead>(reader: R) -> Result<Self> {
        Self::read_csv_named(reader, GROUP_COLUMN)
    }

    /// As `read_csv`, with a custom name for the label column.
    pub fn read_csv_named<R: IoRead>(reader: R, group_column: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(Error::from)?.clone();
        let has_groups = headers.get(0) == Some(group_column);
        let skip = usize::from(has_groups);
        let feature_names: Vec<String> = headers.iter().skip(skip).map(String::from).collect();
        if feature_names.is_empty() {
            return Err(Error::MalformedInput(
                "abundance CSV has no feature columns".into(),
            ));
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(Error::from)?;
            if record.len() != headers.len() {
                return Err(Error::MalformedInput(format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    record.len(),
                    headers.len()
                )));
            }
            if has_groups {
                labels.push(record[0].to_string());
            }
            let mut row = Vec::with_capacity(feature_names.len());
            for (j, field) in record.iter().skip(skip).enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::MalformedInput(format!(
                        "row {}, column {:?}: cannot parse {field:?} as a number",
                        i + 1,
                        feature_names[j]
                    ))
                })?;
                row.push(v);
            }
            rows.push(row);
        }
        AbundanceTable::new(rows, feature_names, has_groups.then_some(labels))
    }

    pub fn read_csv_path(path: &std::path::Path, group_column: &str) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv_named(file, group_column)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.n && j < self.p);
        self.values[i * self.p + j]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn group_labels(&self) -> Option<&[String]> {
        self.group_labels.as_deref()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    fn take_rows(&self, indices: &[usize]) -> AbundanceTable {
        let rows: Vec<Vec<f64>> = indices.iter().map(|&i| self.row(i).to_vec()).collect();
        let labels = self
            .group_labels
            .as_ref()
            .map(|ls| indices.iter().map(|&i| ls[i].clone()).collect());
        AbundanceTable::new(rows, self.feature_names.clone(), labels)
            .expect("row subset of a valid table is valid")
    }

    /// Splits into per-group tables, ordered by first appearance of each
    /// label.
    pub fn split_by_group(&self) -> Result<Vec<(String, AbundanceTable)>> {
        let labels = self.group_labels.as_ref().ok_or_else(|| {
            Error::MalformedInput(format!(
                "no {GROUP_COLUMN} column; group analysis needs labeled samples"
            ))
        })?;
        let mut order: Vec<&String> = Vec::new();
        let mut members: BTreeMap<&String, Vec<usize>> = BTreeMap::new();
        for (i, label) in labels.iter().enumerate() {
            if !members.contains_key(label) {
                order.push(label);
            }
            members.entry(label).or_default().push(i);
        }
        Ok(order
            .into_iter()
            .map(|label| (label.clone(), self.take_rows(&members[label])))
            .collect())
    }
}

/// Centered log-ratio transform: y_ij = ln(x_ij + pseudocount) minus the
/// row mean of the same logs, so every output row sums to zero.
pub fn clr_transform(t: &AbundanceTable, pseudocount: f64) -> Result<DataMatrix> {
    let (n, p) = (t.n(), t.p());
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut logs = Vec::with_capacity(p);
        for j in 0..p {
            let shifted = t.get(i, j) + pseudocount;
            if shifted <= 0.0 {
                return Err(Error::NonPositiveAfterPseudocount { row: i, column: j });
            }
            logs.push(shifted.ln());
        }
        let mean = logs.iter().sum::<f64>() / p as f64;
        for v in &mut logs {
            *v -= mean;
        }
        rows.push(logs);
    }
    DataMatrix::from_rows(&rows)?.with_column_names(t.feature_names().to_vec())
}

fn nonzero_count(t: &AbundanceTable, j: usize) -> usize {
    (0..t.n()).filter(|&i| t.get(i, j) != 0.0).count()
}

/// Indices of features with nonzero abundance in at least
/// ceil(min_fraction * n) samples.
pub fn prevalence_mask(t: &AbundanceTable, min_fraction: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&min_fraction) {
        return Err(Error::InvalidArgument(format!(
            "prevalence fraction must lie in [0, 1], got {min_fraction}"
        )));
    }
    let needed = (min_fraction * t.n() as f64).ceil() as usize;
    let kept: Vec<usize> = (0..t.p())
        .filter(|&j| nonzero_count(t, j) >= needed)
        .collect();
    if kept.is_empty() {
        return Err(Error::AllFeaturesFiltered);
    }
    Ok(kept)
}

/// Keeps features with nonzero abundance in at least
/// ceil(min_fraction * n) samples.
pub fn prevalence_filter(t: &AbundanceTable, min_fraction: f64) -> Result<AbundanceTable> {
    let kept = prevalence_mask(t, min_fraction)?;
    let rows: Vec<Vec<f64>> = (0..t.n())
        .map(|i| kept.iter().map(|&j| t.get(i, j)).collect())
        .collect();
    let names: Vec<String> = kept
        .iter()
        .map(|&j| t.feature_names()[j].clone())
        .collect();
    let labels = t.group_labels.as_ref().map(|ls| ls.to_vec());
    AbundanceTable::new(rows, names, labels)
}

/// Among `candidates`, the feature nonzero in the fewest samples, ties
/// broken toward the highest index. Used to pick the column excluded from
/// estimation when the log-ratio transform leaves the Gram matrix
/// singular (transformed rows sum to zero, so all p columns together are
/// linearly dependent).
pub fn least_prevalent_feature(t: &AbundanceTable, candidates: &[usize]) -> usize {
    assert!(!candidates.is_empty());
    let mut best = candidates[0];
    let mut best_count = nonzero_count(t, best);
    for &j in &candidates[1..] {
        let c = nonzero_count(t, j);
        if c < best_count || (c == best_count && j > best) {
            best = j;
            best_count = c;
        }
    }
    best
}

/// Draws `m` distinct rows uniformly without replacement, in draw order.
pub fn subsample_rows(rng: &mut RngStream, t: &AbundanceTable, m: usize) -> Result<AbundanceTable> {
    let indices = rng.sample_indices_without_replacement(t.n(), m)?;
    Ok(t.take_rows(&indices))
}

/// Edge-level evidence aggregated over several estimator runs, scaled so
/// the strongest edge is exactly 1.
#[derive(Clone, Debug)]
pub struct SignalStrengthMatrix {
    pub entries: SymmetricMatrix,
    /// Data-driven cutoff of each run; infinite when a run kept nothing.
    pub run_thresholds: Vec<f64>,
    /// FDR target each run was given.
    pub run_targets: Vec<f64>,
    /// True when no run selected any edge.
    pub all_empty: bool,
}

impl SignalStrengthMatrix {
    pub fn p(&self) -> usize {
        self.entries.dim()
    }

    /// Upper-triangle entries in row-major (i < j) order, the pairing
    /// order used for group comparisons.
    pub fn upper_entries(&self) -> Vec<f64> {
        let p = self.p();
        let mut out = Vec::with_capacity(p * (p - 1) / 2);
        for i in 0..p {
            for j in (i + 1)..p {
                out.push(self.entries.get(i, j));
            }
        }
        out
    }
}

/// Sums retained magnitudes per edge across runs and rescales by the
/// largest sum. Returns the scaled matrix and whether every run was
/// empty.
pub fn aggregate_signal_strengths(
    runs: &[BTreeMap<Edge, f64>],
    p: usize,
) -> (SymmetricMatrix, bool) {
    let mut sums = SymmetricMatrix::zeros(p);
    for run in runs {
        for (edge, value) in run {
            assert!(edge.j() < p, "edge out of range for dimension {p}");
            let cur = sums.get(edge.i(), edge.j());
            sums.set(edge.i(), edge.j(), cur + value.abs());
        }
    }
    let max = sums.max_abs_offdiag();
    if max == 0.0 {
        return (sums, true);
    }
    let scaled = SymmetricMatrix::from_fn(p, |i, j| {
        if i == j {
            0.0
        } else {
            sums.get(i, j) / max
        }
    });
    (scaled, false)
}

/// Runs the estimator once per data set with halving FDR targets
/// base_q * 0.5^k (k starting at 1) and aggregates the retained partial
/// correlations into signal strengths. Run k draws its knockoffs from the
/// stream `rng.derive(k)`, so the result does not depend on run order.
pub fn multi_fdr_aggregate(
    runs: &[DataMatrix],
    base_q: f64,
    rng: &RngStream,
    scheme: Scheme,
) -> Result<SignalStrengthMatrix> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no runs to aggregate".into()));
    }
    if !(base_q > 0.0 && base_q <= 1.0) {
        return Err(Error::InvalidQ { q: base_q });
    }
    let p = runs[0].p();
    for run in runs {
        if run.p() != p {
            return Err(Error::DimensionMismatch {
                left: run.p(),
                right: p,
            });
        }
    }
    let mut selections = Vec::with_capacity(runs.len());
    let mut targets = Vec::with_capacity(runs.len());
    let mut thresholds = Vec::with_capacity(runs.len());
    for (idx, run) in runs.iter().enumerate() {
        let k = idx + 1;
        let q = base_q * 0.5f64.powi(k as i32);
        let mut run_rng = rng.derive(k as u64);
        let result: SelectionResult = estimate_graph(run, q, &mut run_rng, scheme)?;
        targets.push(q);
        thresholds.push(result.threshold);
        selections.push(result.retained_values);
    }
    let (entries, all_empty) = aggregate_signal_strengths(&selections, p);
    Ok(SignalStrengthMatrix {
        entries,
        run_thresholds: thresholds,
        run_targets: targets,
        all_empty,
    })
}

/// Single estimator run at the base FDR target, wrapped in the same
/// signal-strength form as the multi-run aggregate so the two group
/// treatments stay comparable.
pub fn estimate_vanilla_signal(
    x: &DataMatrix,
    q: f64,
    rng: &RngStream,
    scheme: Scheme,
) -> Result<SignalStrengthMatrix> {
    let mut run_rng = rng.derive(0);
    let result = estimate_graph(x, q, &mut run_rng, scheme)?;
    let (entries, all_empty) =
        aggregate_signal_strengths(std::slice::from_ref(&result.retained_values), x.p());
    Ok(SignalStrengthMatrix {
        entries,
        run_thresholds: vec![result.threshold],
        run_targets: vec![q],
        all_empty,
    })
}

/// Nonzero count and coarse histogram of one group's signal strengths.
#[derive(Clone, Debug, Serialize)]
pub struct ConnectivitySummary {
    pub nonzero: usize,
    /// Counts of nonzero entries in ten equal bins over [0, 1]; 1.0 falls
    /// in the last bin.
    pub histogram: [usize; 10],
}

impl ConnectivitySummary {
    pub fn from_values(values: &[f64]) -> Self {
        let mut histogram = [0usize; 10];
        let mut nonzero = 0;
        for &v in values {
            if v == 0.0 {
                continue;
            }
            nonzero += 1;
            let bin = ((v.clamp(0.0, 1.0) * 10.0).floor() as usize).min(9);
            histogram[bin] += 1;
        }
        ConnectivitySummary { nonzero, histogram }
    }
}

/// Result of a two-sided Wilcoxon signed-rank test on paired values.
#[derive(Clone, Debug, Serialize)]
pub struct GroupComparison {
    /// Smaller of the positive- and negative-rank sums.
    pub statistic: f64,
    /// Continuity-corrected normal approximation score.
    pub z: f64,
    pub p_value: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_pairs: usize,
    /// Whether the p-value came from exact sign enumeration.
    pub exact: bool,
    pub group_summaries: [ConnectivitySummary; 2],
}

const WILCOXON_MIN_PAIRS: usize = 6;
const WILCOXON_EXACT_MAX: usize = 12;

/// Two-sided Wilcoxon signed-rank test of paired samples. Zero
/// differences are dropped; ties get midranks. Small samples are handled
/// by exact enumeration over sign assignments, larger ones by a normal
/// approximation with tie-corrected variance and continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<GroupComparison> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite { row: i, column: 0 });
        }
    }
    let mut diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let m = diffs.len();
    if m < WILCOXON_MIN_PAIRS {
        return Err(Error::TooFewPairs {
            needed: WILCOXON_MIN_PAIRS,
            got: m,
        });
    }
    diffs.sort_by(|x, y| x.abs().partial_cmp(&y.abs()).unwrap());

    // Midranks over runs of tied magnitudes, and the tie correction term.
    let mut ranks = vec![0.0f64; m];
    let mut tie_term = 0.0f64;
    let mut start = 0;
    while start < m {
        let mut end = start + 1;
        while end < m && diffs[end].abs() == diffs[start].abs() {
            end += 1;
        }
        let run = (end - start) as f64;
        let mid = (start + 1 + end) as f64 / 2.0;
        for r in ranks.iter_mut().take(end).skip(start) {
            *r = mid;
        }
        tie_term += run * run * run - run;
        start = end;
    }

    let s_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let total = (m * (m + 1)) as f64 / 2.0;
    let s_minus = total - s_plus;
    let statistic = s_plus.min(s_minus);

    let mean = total / 2.0;
    let mf = m as f64;
    let var = mf * (mf + 1.0) * (2.0 * mf + 1.0) / 24.0 - tie_term / 48.0;
    assert!(var > 0.0, "degenerate rank variance");
    let z = (statistic - mean + 0.5) / var.sqrt();

    let exact = m <= WILCOXON_EXACT_MAX;
    let p_value = if exact {
        // P(positive-rank sum <= statistic) over all 2^m sign choices;
        // the null is symmetric, so doubling gives the two-sided value.
        let mut at_or_below = 0u64;
        for mask in 0u64..(1u64 << m) {
            let mut sum = 0.0;
            for (l, r) in ranks.iter().enumerate() {
                if mask >> l & 1 == 1 {
                    sum += r;
                }
            }
            if sum <= statistic + 1e-9 {
                at_or_below += 1;
            }
        }
        (2.0 * at_or_below as f64 / (1u64 << m) as f64).min(1.0)
    } else {
        let normal = Normal::new(0.0, 1.0).unwrap();
        (2.0 * normal.cdf(z)).min(1.0)
    };

    Ok(GroupComparison {
        statistic,
        z,
        p_value,
        n_pairs: m,
        exact,
        group_summaries: [
            ConnectivitySummary::from_values(a),
            ConnectivitySummary::from_values(b),
        ],
    })
}
