//! Synthetic ground truth and the Monte Carlo harness used to measure
//! FDR and power of the estimator and the baselines.
//!
//! Two covariance families are provided. The band family has a banded
//! precision matrix shifted to a requested condition number; its
//! covariance is dense, so the conditional edge set E (precision
//! nonzeros) is a strict subset of the marginal edge set E' (covariance
//! nonzeros). The block family is block-diagonal equicorrelated, where
//! E and E' coincide, the regime in which the +1-corrected scheme
//! controls the FDR exactly.
//!
//! Replicates draw from indexed RNG streams, so results do not depend on
//! execution order or worker count.

use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::baselines::{
    lambda_max_global, linear_threshold_grid, log_lambda_grid, mb_path, sample_correlations,
    threshold_graph,
};
use crate::error::{Error, Result};
use crate::estimator::{
    entry_statistics, make_knockoffs, partial_correlations, select_edges, test_matrix, Edge,
    Scheme,
};
use crate::linalg::{invert_spd, symmetric_eigenvalues, SymmetricMatrix};
use crate::rng::RngStream;

/// Covariance entries at or below this magnitude count as marginal
/// independence when reading off E'.
pub const MARGINAL_EDGE_TOL: f64 = 1e-12;

/// Zero tolerance for the build-time check that E equals E' in the block
/// family.
const BLOCK_PATTERN_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct GroundTruthModel {
    pub p: usize,
    /// Precision matrix the data generator inverts.
    pub precision: SymmetricMatrix,
    /// Covariance, rescaled to exact unit diagonal.
    pub covariance: SymmetricMatrix,
    /// E: pairs with a nonzero precision entry.
    pub conditional_edges: BTreeSet<Edge>,
    /// E': pairs with covariance magnitude above `MARGINAL_EDGE_TOL`.
    pub marginal_edges: BTreeSet<Edge>,
    pub requested_condition: Option<f64>,
    /// Measured condition number of the precision matrix.
    pub condition_precision: f64,
    /// Measured condition number of the rescaled covariance. Rescaling to
    /// unit diagonal changes conditioning slightly, so both numbers are
    /// reported.
    pub condition_covariance: f64,
}

/// Bandwidth whose band-graph edge density is closest to `target`
/// (density = fraction of the p(p-1)/2 pairs inside the band).
pub fn bandwidth_for_sparsity(p: usize, target: f64) -> usize {
    assert!(p >= 2 && target > 0.0);
    let density = |bw: usize| {
        let bw = bw as f64;
        let pf = p as f64;
        bw * (2.0 * pf - bw - 1.0) / (pf * (pf - 1.0))
    };
    let mut best = 1usize;
    for bw in 1..p {
        if (density(bw) - target).abs() < (density(best) - target).abs() {
            best = bw;
        }
        if density(bw) >= target {
            break;
        }
    }
    best
}

/// Banded precision model. The base matrix B has unit diagonal and
/// `strength` on the first `bandwidth` off-diagonals; a spectral shift
/// delta = (l_max - kappa * l_min) / (kappa - 1) makes B + delta I attain
/// condition number `kappa` exactly while keeping it positive definite.
pub fn band_graph(
    p: usize,
    bandwidth: usize,
    strength: f64,
    kappa: f64,
) -> Result<GroundTruthModel> {
    if p < 2 || bandwidth == 0 || bandwidth >= p {
        return Err(Error::InvalidConfig(format!(
            "band model needs p >= 2 and 1 <= bandwidth < p, got p = {p}, bandwidth = {bandwidth}"
        )));
    }
    if !(kappa > 1.0) {
        return Err(Error::InvalidConfig(format!(
            "condition number must exceed 1, got {kappa}"
        )));
    }
    if strength == 0.0 || !strength.is_finite() {
        return Err(Error::InvalidConfig(
            "band strength must be nonzero and finite".into(),
        ));
    }
    let base = SymmetricMatrix::from_fn(p, |i, j| {
        if i == j {
            1.0
        } else if j - i <= bandwidth {
            strength
        } else {
            0.0
        }
    });
    let eigs = symmetric_eigenvalues(&base)?;
    let (l_min, l_max) = (eigs[0], eigs[p - 1]);
    if l_max - l_min <= 1e-12 {
        return Err(Error::InvalidConfig(
            "band matrix has equal extreme eigenvalues; no shift can set its condition number"
                .into(),
        ));
    }
    let delta = (l_max - kappa * l_min) / (kappa - 1.0);
    let precision = SymmetricMatrix::from_fn(p, |i, j| {
        base.get(i, j) + if i == j { delta } else { 0.0 }
    });
    let condition_precision = (l_max + delta) / (l_min + delta);

    let raw_cov = invert_spd(&precision)?;
    let covariance = SymmetricMatrix::from_fn(p, |i, j| {
        if i == j {
            1.0
        } else {
            raw_cov.get(i, j) / (raw_cov.get(i, i) * raw_cov.get(j, j)).sqrt()
        }
    });
    let cov_eigs = symmetric_eigenvalues(&covariance)?;
    let condition_covariance = cov_eigs[p - 1] / cov_eigs[0];

    let mut conditional = BTreeSet::new();
    for i in 0..p {
        for j in (i + 1)..p {
            if j - i <= bandwidth {
                conditional.insert(Edge::new(i, j));
            }
        }
    }
    let marginal = edges_above(&covariance, MARGINAL_EDGE_TOL);
    Ok(GroundTruthModel {
        p,
        precision,
        covariance,
        conditional_edges: conditional,
        marginal_edges: marginal,
        requested_condition: Some(kappa),
        condition_precision,
        condition_covariance,
    })
}

/// Block-diagonal equicorrelated covariance: unit diagonal and `strength`
/// inside consecutive blocks of `block_size`. Its precision is
/// block-diagonal with fully dense blocks, so conditional and marginal
/// edge sets coincide; the constructor verifies that.
pub fn block_graph(p: usize, block_size: usize, strength: f64) -> Result<GroundTruthModel> {
    if p < 2 || block_size == 0 || p % block_size != 0 {
        return Err(Error::InvalidConfig(format!(
            "block model needs block_size dividing p, got p = {p}, block_size = {block_size}"
        )));
    }
    if block_size >= 2 && strength.abs() >= 1.0 / (block_size - 1) as f64 {
        return Err(Error::InvalidConfig(format!(
            "block strength must satisfy |s| < 1/(block_size - 1), got {strength}"
        )));
    }
    if strength != 0.0 && strength.abs() <= 1e-6 {
        return Err(Error::InvalidConfig(
            "block strength this small cannot be told apart from zero; use 0 or something larger"
                .into(),
        ));
    }
    let same_block = |i: usize, j: usize| i / block_size == j / block_size;
    let covariance = SymmetricMatrix::from_fn(p, |i, j| {
        if i == j {
            1.0
        } else if same_block(i, j) {
            strength
        } else {
            0.0
        }
    });
    // Closed-form inverse of (1-s) I + s 1 1^T per block.
    let m = block_size as f64;
    let (diag, off) = if block_size == 1 || strength == 0.0 {
        (1.0, 0.0)
    } else {
        let denom = (1.0 - strength) * (1.0 + (m - 1.0) * strength);
        ((1.0 + (m - 2.0) * strength) / denom, -strength / denom)
    };
    let precision = SymmetricMatrix::from_fn(p, |i, j| {
        if i == j {
            diag
        } else if same_block(i, j) {
            off
        } else {
            0.0
        }
    });

    let conditional = edges_above(&precision, BLOCK_PATTERN_TOL);
    let marginal_check = edges_above(&covariance, BLOCK_PATTERN_TOL);
    assert_eq!(
        conditional, marginal_check,
        "block model must have identical conditional and marginal edge sets"
    );
    let marginal = edges_above(&covariance, MARGINAL_EDGE_TOL);

    let eigs = symmetric_eigenvalues(&precision)?;
    let condition_precision = eigs[p - 1] / eigs[0];
    let cov_eigs = symmetric_eigenvalues(&covariance)?;
    let condition_covariance = cov_eigs[p - 1] / cov_eigs[0];

    Ok(GroundTruthModel {
        p,
        precision,
        covariance,
        conditional_edges: conditional,
        marginal_edges: marginal,
        requested_condition: None,
        condition_precision,
        condition_covariance,
    })
}

fn edges_above(m: &SymmetricMatrix, tol: f64) -> BTreeSet<Edge> {
    let p = m.dim();
    let mut set = BTreeSet::new();
    for i in 0..p {
        for j in (i + 1)..p {
            if m.get(i, j).abs() > tol {
                set.insert(Edge::new(i, j));
            }
        }
    }
    set
}

/// False discovery proportion of a selection against a truth set, with
/// the empty-selection guard.
pub fn fdp(selected: &BTreeSet<Edge>, truth: &BTreeSet<Edge>) -> f64 {
    let false_count = selected.iter().filter(|e| !truth.contains(e)).count();
    false_count as f64 / selected.len().max(1) as f64
}

/// Fraction of true edges recovered, zero when the truth set is empty.
pub fn power(selected: &BTreeSet<Edge>, truth: &BTreeSet<Edge>) -> f64 {
    let hits = truth.iter().filter(|e| selected.contains(e)).count();
    hits as f64 / truth.len().max(1) as f64
}

/// One-sample Kolmogorov-Smirnov statistic against a reference CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n);
        d = d.max((i + 1) as f64 / n - f);
    }
    Ok(d)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < sa.len() && j < sb.len() {
        let v = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= v {
            i += 1;
        }
        while j < sb.len() && sb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic one-sample KS critical value at level `alpha`.
pub fn ks_critical_value(alpha: f64, n: usize) -> f64 {
    assert!(n > 0 && (0.0..1.0).contains(&alpha) && alpha > 0.0);
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Asymptotic two-sample KS critical value at level `alpha`.
pub fn ks_two_sample_critical_value(alpha: f64, n: usize, m: usize) -> f64 {
    assert!(n > 0 && m > 0 && (0.0..1.0).contains(&alpha) && alpha > 0.0);
    let scale = ((n + m) as f64 / (n as f64 * m as f64)).sqrt();
    (-(alpha / 2.0).ln() / 2.0).sqrt() * scale
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphKind {
    #[serde(rename = "band")]
    Band,
    #[serde(rename = "block")]
    Block,
}

impl FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "band" => Ok(GraphKind::Band),
            "block" => Ok(GraphKind::Block),
            other => Err(Error::InvalidArgument(format!(
                "unknown graph kind {other:?}, expected one of: band, block"
            ))),
        }
    }
}

/// Methods the harness can run. `Ko`/`KoPlus` are tuned by target FDR
/// level; the others trace tuning paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ko")]
    Ko,
    #[serde(rename = "ko+")]
    KoPlus,
    #[serde(rename = "ct")]
    Ct,
    #[serde(rename = "pt")]
    Pt,
    #[serde(rename = "mb-and")]
    MbAnd,
    #[serde(rename = "mb-or")]
    MbOr,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ko,
        Method::KoPlus,
        Method::Ct,
        Method::Pt,
        Method::MbAnd,
        Method::MbOr,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ko => "ko",
            Method::KoPlus => "ko+",
            Method::Ct => "ct",
            Method::Pt => "pt",
            Method::MbAnd => "mb-and",
            Method::MbOr => "mb-or",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown method {s:?}, expected one of: {}",
                    names.join(", ")
                ))
            })
    }
}

fn default_replicates() -> usize {
    100
}

fn default_q_grid() -> Vec<f64> {
    vec![0.1, 0.2]
}

/// Monte Carlo study description. Unset model parameters fall back to the
/// family defaults: bandwidth targeting edge density 1/25, band strength
/// -0.4 with condition number 200, block size 4 with strength 0.3.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub kind: GraphKind,
    pub p: usize,
    pub n: usize,
    #[serde(default)]
    pub bandwidth: Option<usize>,
    #[serde(default)]
    pub block_size: Option<usize>,
    #[serde(default)]
    pub strength: Option<f64>,
    #[serde(default)]
    pub condition: Option<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_q_grid")]
    pub q_grid: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::InvalidConfig(format!("p must be at least 2, got {}", self.p)));
        }
        if self.n <= self.p {
            return Err(Error::SampleSizeTooSmall {
                n: self.n,
                p: self.p,
            });
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be positive".into()));
        }
        if self.q_grid.is_empty() {
            return Err(Error::InvalidConfig("q_grid must be nonempty".into()));
        }
        for &q in &self.q_grid {
            if q.is_nan() || !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidQ { q });
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<GroundTruthModel> {
        match self.kind {
            GraphKind::Band => band_graph(
                self.p,
                self.bandwidth
                    .unwrap_or_else(|| bandwidth_for_sparsity(self.p, 1.0 / 25.0)),
                self.strength.unwrap_or(-0.4),
                self.condition.unwrap_or(200.0),
            ),
            GraphKind::Block => block_graph(
                self.p,
                self.block_size.unwrap_or(4),
                self.strength.unwrap_or(0.3),
            ),
        }
    }
}

fn serialize_threshold<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

/// One method evaluation on one replicate. For `ko`/`ko+` the tuning is
/// the target q and the threshold is the data-driven cutoff; for `ct`/`pt`
/// both are the threshold; for the mb methods the tuning is
/// lambda / lambda_max and the threshold column carries the absolute
/// lambda.
#[derive(Clone, Debug, Serialize)]
pub struct ReplicateRow {
    pub method: Method,
    pub tuning: f64,
    pub replicate: usize,
    pub fdp: f64,
    pub power: f64,
    pub n_selected: usize,
    #[serde(serialize_with = "serialize_threshold")]
    pub threshold: f64,
    /// Selected edges outside the marginal edge set E'.
    pub false_marginal: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AggregateRow {
    pub method: Method,
    pub tuning: f64,
    pub fdr: f64,
    pub fdr_se: f64,
    pub power_mean: f64,
    pub power_se: f64,
    pub mean_selected: f64,
    pub replicates: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsRecord {
    pub config: SimulationConfig,
    pub methods: Vec<Method>,
    pub rows: Vec<ReplicateRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl MetricsRecord {
    /// Long-format CSV with one row per (method, tuning, replicate).
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("method,q_or_lambda,replicate,fdp,power,n_selected,threshold\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.method, r.tuning, r.replicate, r.fdp, r.power, r.n_selected, r.threshold
            ));
        }
        out
    }
}

/// Fixed threshold grid shared by ct and pt: correlation magnitudes never
/// exceed one, and a grid common to all replicates keeps the path
/// comparable across them.
pub fn score_threshold_grid() -> Vec<f64> {
    // 0.01 steps keep the realized-FDR jumps between adjacent cuts small
    // enough for fair matched-FDR comparisons against the ko methods.
    linear_threshold_grid(1.0, 100)
}

/// Fixed lambda / lambda_max ratio grid for the mb methods.
pub fn mb_ratio_grid() -> Vec<f64> {
    log_lambda_grid(1.0, 0.01, 50)
}

fn selection_row(
    method: Method,
    tuning: f64,
    replicate: usize,
    threshold: f64,
    selected: &BTreeSet<Edge>,
    model: &GroundTruthModel,
) -> ReplicateRow {
    ReplicateRow {
        method,
        tuning,
        replicate,
        fdp: fdp(selected, &model.conditional_edges),
        power: power(selected, &model.conditional_edges),
        n_selected: selected.len(),
        threshold,
        false_marginal: selected
            .iter()
            .filter(|e| !model.marginal_edges.contains(e))
            .count(),
    }
}

fn replicate_rows(
    cfg: &SimulationConfig,
    model: &GroundTruthModel,
    methods: &[Method],
    replicate: usize,
) -> Result<Vec<ReplicateRow>> {
    let mut rng = RngStream::new(cfg.seed, replicate as u64);
    let x = rng.sample_mvn(&model.covariance, cfg.n)?;
    let mut rows = Vec::new();

    let wants = |m: Method| methods.contains(&m);
    let needs_partial = wants(Method::Ko) || wants(Method::KoPlus) || wants(Method::Pt);
    let r = if needs_partial {
        Some(partial_correlations(&x)?)
    } else {
        None
    };

    if wants(Method::Ko) || wants(Method::KoPlus) {
        let r = r.as_ref().unwrap();
        let r0 = make_knockoffs(&mut rng, cfg.n, cfg.p)?;
        let w = test_matrix(&entry_statistics(r), &entry_statistics(&r0))?
            .with_source(r.clone());
        for &q in &cfg.q_grid {
            for (method, scheme) in [(Method::Ko, Scheme::Ko), (Method::KoPlus, Scheme::KoPlus)] {
                if wants(method) {
                    let sel = select_edges(&w, q, scheme)?;
                    rows.push(selection_row(
                        method,
                        q,
                        replicate,
                        sel.threshold,
                        &sel.edges,
                        model,
                    ));
                }
            }
        }
    }

    if wants(Method::Ct) {
        let c = sample_correlations(&x)?;
        let path = threshold_graph(&c, &score_threshold_grid())?;
        for (t, set) in path.grid.iter().zip(&path.edge_sets) {
            rows.push(selection_row(Method::Ct, *t, replicate, *t, set, model));
        }
    }

    if wants(Method::Pt) {
        let r = r.as_ref().unwrap();
        let path = threshold_graph(r, &score_threshold_grid())?;
        for (t, set) in path.grid.iter().zip(&path.edge_sets) {
            rows.push(selection_row(Method::Pt, *t, replicate, *t, set, model));
        }
    }

    if wants(Method::MbAnd) || wants(Method::MbOr) {
        let top = lambda_max_global(&x)?;
        let ratios = mb_ratio_grid();
        let lambdas: Vec<f64> = ratios.iter().map(|r| r * top).collect();
        let path = mb_path(&x, &lambdas)?;
        for (k, (and_set, or_set)) in path.iter().enumerate() {
            if wants(Method::MbAnd) {
                rows.push(selection_row(
                    Method::MbAnd,
                    ratios[k],
                    replicate,
                    lambdas[k],
                    and_set,
                    model,
                ));
            }
            if wants(Method::MbOr) {
                rows.push(selection_row(
                    Method::MbOr,
                    ratios[k],
                    replicate,
                    lambdas[k],
                    or_set,
                    model,
                ));
            }
        }
    }

    Ok(rows)
}

fn aggregates_from_rows(rows: &[ReplicateRow]) -> Vec<AggregateRow> {
    // Group by (method, tuning), preserving first-appearance order.
    let mut order: Vec<(Method, u64)> = Vec::new();
    let mut groups: std::collections::HashMap<(Method, u64), Vec<&ReplicateRow>> =
        std::collections::HashMap::new();
    for row in rows {
        let key = (row.method, row.tuning.to_bits());
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(row);
    }
    let mean_and_se = |vals: &[f64]| -> (f64, f64) {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        if vals.len() < 2 {
            return (mean, 0.0);
        }
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    };
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let (fdr, fdr_se) = mean_and_se(&g.iter().map(|r| r.fdp).collect::<Vec<_>>());
            let (pw, pw_se) = mean_and_se(&g.iter().map(|r| r.power).collect::<Vec<_>>());
            let mean_selected =
                g.iter().map(|r| r.n_selected as f64).sum::<f64>() / g.len() as f64;
            AggregateRow {
                method: key.0,
                tuning: f64::from_bits(key.1),
                fdr,
                fdr_se,
                power_mean: pw,
                power_se: pw_se,
                mean_selected,
                replicates: g.len(),
            }
        })
        .collect()
}

/// Runs the full study: `replicates` data sets from the configured model,
/// every requested method on each. Replicate r draws from stream r of the
/// configured seed, so the output is identical for any worker count and
/// any execution order.
pub fn run_monte_carlo(
    cfg: &SimulationConfig,
    methods: &[Method],
    threads: usize,
) -> Result<MetricsRecord> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    let mut uniq: Vec<Method> = Vec::new();
    for &m in methods {
        if !uniq.contains(&m) {
            uniq.push(m);
        }
    }
    let model = cfg.build_model()?;

    let threads = threads.max(1).min(cfg.replicates);
    let chunk = cfg.replicates.div_ceil(threads);
    let mut per_replicate: Vec<Vec<ReplicateRow>> = Vec::with_capacity(cfg.replicates);
    let chunk_results: Vec<Result<Vec<Vec<ReplicateRow>>>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..threads {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(cfg.replicates);
            let model_ref = &model;
            let uniq_ref = &uniq;
            handles.push(scope.spawn(move || {
                (lo..hi)
                    .map(|rep| {
                        replicate_rows(cfg, model_ref, uniq_ref, rep).map_err(|e| {
                            Error::ReplicateFailed {
                                replicate: rep,
                                source: Box::new(e),
                            }
                        })
                    })
                    .collect()
            }));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation worker panicked"))
            .collect()
    });
    for chunk_result in chunk_results {
        per_replicate.extend(chunk_result?);
    }

    let rows: Vec<ReplicateRow> = per_replicate.into_iter().flatten().collect();
    let aggregates = aggregates_from_rows(&rows);
    Ok(MetricsRecord {
        config: cfg.clone(),
        methods: uniq,
        rows,
        aggregates,
    })
}

/// Monte Carlo estimate of the marginal-FDR functional the plain scheme
/// controls: mean over replicates of
/// (selections outside E') / (selection count + 1/q), for the `ko` rows
/// at level `q`. Returns None when the record has no such rows.
pub fn modified_fdr_estimate(record: &MetricsRecord, q: f64) -> Option<f64> {
    let vals: Vec<f64> = record
        .rows
        .iter()
        .filter(|r| r.method == Method::Ko && r.tuning == q)
        .map(|r| r.false_marginal as f64 / (r.n_selected as f64 + 1.0 / q))
        .collect();
    if vals.is_empty() {
        return None;
    }
    Some(vals.iter().sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_rule_hits_target_density() {
        assert_eq!(bandwidth_for_sparsity(50, 1.0 / 25.0), 1);
        assert_eq!(bandwidth_for_sparsity(400, 1.0 / 25.0), 8);
    }

    #[test]
    fn band_shift_matches_closed_form_spectrum() {
        // Tridiagonal Toeplitz eigenvalues: 1 + 2 s cos(k pi / (p + 1)).
        let (p, s, kappa) = (4usize, 0.5f64, 10.0f64);
        let model = band_graph(p, 1, s, kappa).unwrap();
        let eigs: Vec<f64> = (1..=p)
            .map(|k| 1.0 + 2.0 * s * (k as f64 * std::f64::consts::PI / (p as f64 + 1.0)).cos())
            .collect();
        let l_max = eigs[0];
        let l_min = eigs[p - 1];
        let delta = (l_max - kappa * l_min) / (kappa - 1.0);
        assert!((model.precision.get(0, 0) - (1.0 + delta)).abs() < 1e-9);
        assert!((model.precision.get(0, 1) - s).abs() < 1e-12);
        assert!(
            (model.condition_precision - kappa).abs() / kappa < 1e-6,
            "measured condition {}",
            model.condition_precision
        );
    }

    #[test]
    fn band_marginal_edges_strictly_denser() {
        let model = band_graph(10, 1, -0.4, 50.0).unwrap();
        assert!(model.conditional_edges.is_subset(&model.marginal_edges));
        assert!(model.marginal_edges.len() > model.conditional_edges.len());
        for i in 0..10 {
            assert_eq!(model.covariance.get(i, i), 1.0);
        }
    }

    #[test]
    fn band_rejects_degenerate_requests() {
        assert!(band_graph(4, 0, 0.5, 10.0).is_err());
        assert!(band_graph(4, 1, 0.5, 1.0).is_err());
        assert!(band_graph(4, 1, 0.0, 10.0).is_err());
    }

    #[test]
    fn block_inverse_closed_form() {
        let model = block_graph(4, 2, 0.6).unwrap();
        let denom = 1.0 - 0.36;
        assert!((model.precision.get(0, 0) - 1.0 / denom).abs() < 1e-12);
        assert!((model.precision.get(0, 1) + 0.6 / denom).abs() < 1e-12);
        assert_eq!(model.precision.get(0, 2), 0.0);
        // Cross-check against the generic inverter.
        let inv = invert_spd(&model.covariance).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (inv.get(i, j) - model.precision.get(i, j)).abs() < 1e-10,
                    "closed form disagrees with solver at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn block_edge_sets_coincide() {
        let model = block_graph(12, 4, 0.3).unwrap();
        assert_eq!(model.conditional_edges, model.marginal_edges);
        assert_eq!(model.conditional_edges.len(), 3 * 6);
    }

    #[test]
    fn block_rejects_infeasible_strength() {
        assert!(block_graph(6, 3, 0.5).is_err());
        assert!(block_graph(6, 3, -0.5).is_err());
        assert!(block_graph(6, 4, 0.3).is_err());
        assert!(block_graph(6, 3, 0.49).is_ok());
    }

    #[test]
    fn fdp_and_power_arithmetic() {
        let truth: BTreeSet<Edge> = [Edge::new(0, 1), Edge::new(1, 2)].into_iter().collect();
        let selected: BTreeSet<Edge> = [Edge::new(0, 1), Edge::new(0, 2)].into_iter().collect();
        assert_eq!(fdp(&selected, &truth), 0.5);
        assert_eq!(power(&selected, &truth), 0.5);
        let empty = BTreeSet::new();
        assert_eq!(fdp(&empty, &truth), 0.0);
        assert_eq!(power(&empty, &truth), 0.0);
        assert_eq!(power(&selected, &empty), 0.0);
    }

    #[test]
    fn ks_statistic_hand_case() {
        let d = ks_statistic(&[0.1, 0.5, 0.9], |x| x).unwrap();
        assert!((d - (1.0 / 3.0 - 0.1)).abs() < 1e-12);
        assert!(matches!(
            ks_statistic(&[], |x| x),
            Err(Error::EmptySample)
        ));
    }

    #[test]
    fn ks_two_sample_extremes() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
        let b = [10.0, 11.0];
        assert_eq!(ks_two_sample(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn ks_critical_values() {
        let c = ks_critical_value(0.001, 2000);
        assert!((c - 0.0436).abs() < 2e-4, "critical {c:.5}");
        let c2 = ks_two_sample_critical_value(0.001, 2000, 2000);
        assert!((c2 - 0.0436 * 2f64.sqrt()).abs() < 3e-4, "critical {c2:.5}");
    }

    fn small_config() -> SimulationConfig {
        SimulationConfig {
            kind: GraphKind::Block,
            p: 8,
            n: 40,
            bandwidth: None,
            block_size: Some(2),
            strength: Some(0.5),
            condition: None,
            replicates: 4,
            q_grid: vec![0.2],
            seed: 5,
        }
    }

    #[test]
    fn monte_carlo_is_deterministic_and_thread_count_invariant() {
        let cfg = small_config();
        let methods = [Method::Ko, Method::KoPlus, Method::Ct, Method::Pt, Method::MbAnd];
        let a = run_monte_carlo(&cfg, &methods, 1).unwrap();
        let b = run_monte_carlo(&cfg, &methods, 3).unwrap();
        let c = run_monte_carlo(&cfg, &methods, 1).unwrap();
        assert_eq!(a.to_long_csv(), b.to_long_csv());
        assert_eq!(a.to_long_csv(), c.to_long_csv());
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn monte_carlo_rejects_bad_configs() {
        let mut cfg = small_config();
        cfg.n = 8;
        assert!(matches!(
            run_monte_carlo(&cfg, &[Method::Ko], 1),
            Err(Error::SampleSizeTooSmall { .. })
        ));
        let cfg = small_config();
        assert!(matches!(
            run_monte_carlo(&cfg, &[], 1),
            Err(Error::InvalidConfig(_))
        ));
        let mut cfg = small_config();
        cfg.q_grid = vec![1.4];
        assert!(matches!(
            run_monte_carlo(&cfg, &[Method::Ko], 1),
            Err(Error::InvalidQ { .. })
        ));
    }

    #[test]
    fn csv_has_expected_shape() {
        let cfg = small_config();
        let record = run_monte_carlo(&cfg, &[Method::Ko, Method::Pt], 1).unwrap();
        let csv = record.to_long_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "method,q_or_lambda,replicate,fdp,power,n_selected,threshold"
        );
        // 4 replicates x (1 ko row + 100 pt rows)
        assert_eq!(lines.count(), 4 * 101);
        assert_eq!(record.aggregates.len(), 1 + 100);
    }

    #[test]
    fn modified_fdr_uses_marginal_truth() {
        let cfg = small_config();
        let record = run_monte_carlo(&cfg, &[Method::Ko], 1).unwrap();
        let est = modified_fdr_estimate(&record, 0.2).unwrap();
        assert!((0.0..=1.0).contains(&est));
        assert!(modified_fdr_estimate(&record, 0.31).is_none());

        // Hand-built rows pin the arithmetic.
        let mut manual = record.clone();
        manual.rows = vec![
            ReplicateRow {
                method: Method::Ko,
                tuning: 0.2,
                replicate: 0,
                fdp: 0.0,
                power: 1.0,
                n_selected: 3,
                threshold: 0.5,
                false_marginal: 1,
            },
            ReplicateRow {
                method: Method::Ko,
                tuning: 0.2,
                replicate: 1,
                fdp: 0.0,
                power: 1.0,
                n_selected: 0,
                threshold: f64::INFINITY,
                false_marginal: 0,
            },
        ];
        let est = modified_fdr_estimate(&manual, 0.2).unwrap();
        // (1 / (3 + 5) + 0 / (0 + 5)) / 2
        assert!((est - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn threshold_serializes_as_inf_string() {
        let row = ReplicateRow {
            method: Method::Ko,
            tuning: 0.1,
            replicate: 0,
            fdp: 0.0,
            power: 0.0,
            n_selected: 0,
            threshold: f64::INFINITY,
            false_marginal: 0,
        };
        let json = serde_json::to_string(&row).unwrap();
        assert!(json.contains("\"threshold\":\"inf\""), "{json}");
    }
}
