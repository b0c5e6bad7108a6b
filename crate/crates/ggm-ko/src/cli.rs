//! Command-line drivers: `estimate`, `simulate`, `benchmark`, `groups`.
//!
//! Every command resolves its configuration (a TOML file merged with
//! flags, flags winning), computes everything up front, and only then
//! writes into a fresh output directory together with a run manifest.
//! Errors before the write phase leave no partial outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::estimator::{build_test_matrix, select_edges, Scheme};
use crate::groups::{
    clr_transform, estimate_vanilla_signal, least_prevalent_feature, multi_fdr_aggregate,
    prevalence_mask, subsample_rows, wilcoxon_signed_rank, AbundanceTable, ConnectivitySummary,
    SignalStrengthMatrix, GROUP_COLUMN,
};
use crate::rng::RngStream;
use crate::sim::{run_monte_carlo, Method, MetricsRecord, SimulationConfig};

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "GGM_KO_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "ggm-ko",
    version,
    about = "Edge selection for Gaussian graphical models with finite-sample FDR control"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate an edge set from a samples-by-variables CSV.
    Estimate(EstimateArgs),
    /// Monte Carlo study of the selector on synthetic graphs.
    Simulate(SimulateArgs),
    /// Selector and baselines on shared replicates for paired comparison.
    Benchmark(BenchmarkArgs),
    /// Compare estimated networks between two labeled sample groups.
    Groups(GroupsArgs),
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// CSV with a header of variable names, one row per sample.
    #[arg(long)]
    pub input: PathBuf,
    /// Target false discovery rate in [0, 1].
    #[arg(long, default_value_t = 0.2)]
    pub q: f64,
    /// Selection scheme: ko or ko+.
    #[arg(long, default_value = "ko")]
    pub scheme: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Subtract column means before estimation.
    #[arg(long)]
    pub center: bool,
    /// Fresh directory for outputs.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// TOML simulation config.
    #[arg(long)]
    pub config: PathBuf,
    /// Replace the config's q grid with this single level.
    #[arg(long)]
    pub q: Option<f64>,
    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; falls back to GGM_KO_THREADS, then 1.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub sim: SimulateArgs,
    /// Comma-separated methods: ko, ko+, ct, pt, mb-and, mb-or.
    #[arg(long, default_value = "ko,ko+,ct,pt,mb-and,mb-or")]
    pub methods: String,
}

#[derive(Args, Debug)]
pub struct GroupsArgs {
    /// CSV whose first column holds group labels.
    #[arg(long)]
    pub input: PathBuf,
    /// Header name of the label column.
    #[arg(long, default_value = GROUP_COLUMN)]
    pub group_column: String,
    /// Base FDR level; subsample run k uses q * 0.5^k.
    #[arg(long, default_value_t = 0.2)]
    pub q: f64,
    /// Subsample count for the larger group.
    #[arg(long, default_value_t = 10)]
    pub subsamples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Added to abundances before the log transform.
    #[arg(long, default_value_t = 0.5)]
    pub pseudocount: f64,
    /// Drop features with nonzero abundance in fewer than this fraction
    /// of samples (0 keeps everything).
    #[arg(long, default_value_t = 0.0)]
    pub min_prevalence: f64,
    /// Selection scheme: ko or ko+.
    #[arg(long, default_value = "ko")]
    pub scheme: String,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate(args) => cmd_estimate(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Benchmark(args) => cmd_benchmark(&args),
        Command::Groups(args) => cmd_groups(&args),
    }
}

/// Provenance record written into every output directory. Two runs whose
/// manifests agree on everything but `created_unix_ms` produce identical
/// outputs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    /// sha256 hex digest per input file.
    pub inputs: BTreeMap<String, String>,
    pub created_unix_ms: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: BTreeMap::new(),
            created_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        }
    }

    pub fn with_input(mut self, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.insert(path.display().to_string(), hex);
        Ok(self)
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    if let Some(t) = flag {
        if t == 0 {
            return Err(Error::InvalidArgument("--threads must be positive".into()));
        }
        return Ok(t);
    }
    match std::env::var(THREADS_ENV) {
        Ok(raw) => raw.trim().parse::<usize>().ok().filter(|t| *t > 0).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{THREADS_ENV} must be a positive integer, got {raw:?}"
            ))
        }),
        Err(_) => Ok(1),
    }
}

/// Fails unless the output path is absent or an empty directory.
fn check_out_dir(path: &Path) -> Result<()> {
    match std::fs::read_dir(path) {
        Ok(mut entries) => {
            if entries.next().is_some() {
                Err(Error::OutputDirNotEmpty(path.display().to_string()))
            } else {
                Ok(())
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(_) => Err(Error::OutputDirNotEmpty(path.display().to_string())),
    }
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON serialization cannot fail");
    text.push('\n');
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

/// Finite numbers stay numbers; infinities become the string "inf", which
/// JSON cannot express natively.
fn json_f64(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(if v > 0.0 { "inf" } else { "-inf" })
    }
}

fn parse_scheme(raw: &str) -> Result<Scheme> {
    raw.parse()
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let scheme = parse_scheme(&args.scheme)?;
    check_out_dir(&args.out_dir)?;
    let mut x = DataMatrix::read_csv_path(&args.input)?;
    if args.center {
        x = x.centered();
    }
    let mut rng = RngStream::new(args.seed, 0);
    let w = build_test_matrix(&x, &mut rng)?;
    let selection = select_edges(&w, args.q, scheme)?;

    let mut edges_tsv = String::from("i\tj\tname_i\tname_j\tW\tR\n");
    for edge in &selection.edges {
        let r = selection.retained_values[edge];
        edges_tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            edge.i(),
            edge.j(),
            x.column_label(edge.i()),
            x.column_label(edge.j()),
            w.w(edge.i(), edge.j()),
            r
        ));
    }

    let config = json!({
        "input": args.input.display().to_string(),
        "q": args.q,
        "scheme": scheme.to_string(),
        "seed": args.seed,
        "center": args.center,
    });
    let manifest = RunManifest::new("estimate", config, args.seed).with_input(&args.input)?;
    let summary = json!({
        "n": x.n(),
        "p": x.p(),
        "q": args.q,
        "scheme": scheme.to_string(),
        "threshold": json_f64(selection.threshold),
        "n_selected": selection.edges.len(),
    });

    std::fs::create_dir_all(&args.out_dir)?;
    std::fs::write(args.out_dir.join("edges.tsv"), edges_tsv)?;
    write_json(&args.out_dir, "summary.json", &summary)?;
    write_json(
        &args.out_dir,
        "manifest.json",
        &serde_json::to_value(&manifest).unwrap(),
    )?;
    println!(
        "selected {} edges at q = {} ({}), threshold {}",
        selection.edges.len(),
        args.q,
        scheme,
        selection.threshold
    );
    Ok(())
}

fn load_simulation_config(args: &SimulateArgs) -> Result<SimulationConfig> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg: SimulationConfig = toml::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", args.config.display())))?;
    if let Some(q) = args.q {
        cfg.q_grid = vec![q];
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn aggregates_json(record: &MetricsRecord) -> serde_json::Value {
    let aggregates: Vec<serde_json::Value> = record
        .aggregates
        .iter()
        .map(|a| {
            json!({
                "method": a.method.to_string(),
                "tuning": a.tuning,
                "fdr": a.fdr,
                "fdr_se": a.fdr_se,
                "power_mean": a.power_mean,
                "power_se": a.power_se,
                "mean_selected": a.mean_selected,
                "replicates": a.replicates,
            })
        })
        .collect();
    let target_vs_actual: Vec<serde_json::Value> = record
        .aggregates
        .iter()
        .filter(|a| matches!(a.method, Method::Ko | Method::KoPlus))
        .map(|a| {
            json!({
                "method": a.method.to_string(),
                "target_fdr": a.tuning,
                "actual_fdr": a.fdr,
                "fdr_se": a.fdr_se,
                "power": a.power_mean,
            })
        })
        .collect();
    json!({
        "config": serde_json::to_value(&record.config).unwrap(),
        "methods": record.methods.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
        "aggregates": aggregates,
        "target_vs_actual": target_vs_actual,
    })
}

fn run_study(args: &SimulateArgs, command: &str, methods: &[Method]) -> Result<()> {
    check_out_dir(&args.out_dir)?;
    let cfg = load_simulation_config(args)?;
    let threads = resolve_threads(args.threads)?;
    let record = run_monte_carlo(&cfg, methods, threads)?;

    let mut config_value = serde_json::to_value(&cfg).unwrap();
    config_value["methods"] = json!(methods.iter().map(|m| m.to_string()).collect::<Vec<_>>());
    let manifest =
        RunManifest::new(command, config_value, cfg.seed).with_input(&args.config)?;

    std::fs::create_dir_all(&args.out_dir)?;
    std::fs::write(args.out_dir.join("metrics.csv"), record.to_long_csv())?;
    write_json(&args.out_dir, "aggregates.json", &aggregates_json(&record))?;
    write_json(
        &args.out_dir,
        "manifest.json",
        &serde_json::to_value(&manifest).unwrap(),
    )?;
    println!(
        "{command}: {} replicates, {} methods, {} rows",
        cfg.replicates,
        methods.len(),
        record.rows.len()
    );
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    run_study(args, "simulate", &[Method::Ko, Method::KoPlus])
}

fn parse_methods(raw: &str) -> Result<Vec<Method>> {
    let mut methods = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let m: Method = part.parse()?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(Error::InvalidArgument(
            "no methods given; expected a comma-separated list".into(),
        ));
    }
    Ok(methods)
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let methods = parse_methods(&args.methods)?;
    run_study(&args.sim, "benchmark", &methods)
}

fn sanitize_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn signal_csv(signal: &SignalStrengthMatrix, names: &[String]) -> String {
    let p = signal.p();
    let mut out = names.join(",");
    out.push('\n');
    for i in 0..p {
        let row: Vec<String> = (0..p)
            .map(|j| format!("{}", signal.entries.get(i, j)))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn group_report(
    label: &str,
    n_samples: usize,
    vanilla: bool,
    signal: &SignalStrengthMatrix,
) -> serde_json::Value {
    json!({
        "label": label,
        "n_samples": n_samples,
        "vanilla": vanilla,
        "run_targets": signal.run_targets,
        "run_thresholds": signal.run_thresholds.iter().map(|t| json_f64(*t)).collect::<Vec<_>>(),
        "all_empty": signal.all_empty,
        "connectivity": serde_json::to_value(ConnectivitySummary::from_values(
            &signal.upper_entries()
        ))
        .unwrap(),
    })
}

fn cmd_groups(args: &GroupsArgs) -> Result<()> {
    let scheme = parse_scheme(&args.scheme)?;
    check_out_dir(&args.out_dir)?;
    let table = AbundanceTable::read_csv_path(&args.input, &args.group_column)?;
    let kept = prevalence_mask(&table, args.min_prevalence)?;
    // The log-ratio transform runs over the full composition, but its rows
    // sum to zero, so estimating on every transformed column would hand the
    // solver a singular Gram matrix. Estimation always uses a strict subset.
    let mut excluded: Option<usize> = None;
    let estimation: Vec<usize> = if kept.len() == table.p() {
        let drop = least_prevalent_feature(&table, &kept);
        excluded = Some(drop);
        kept.into_iter().filter(|j| *j != drop).collect()
    } else {
        kept
    };
    if let Some(j) = excluded {
        eprintln!(
            "prevalence filter kept every feature; excluding {:?} (least prevalent) so the log-ratio columns are linearly independent",
            table.feature_names()[j]
        );
    }
    if estimation.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "only {} feature(s) left for estimation; need at least 2",
            estimation.len()
        )));
    }
    let feature_names: Vec<String> = estimation
        .iter()
        .map(|&j| table.feature_names()[j].clone())
        .collect();
    let groups = table.split_by_group()?;
    if groups.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "group comparison needs exactly two groups, found {}: {}",
            groups.len(),
            groups
                .iter()
                .map(|(label, _)| format!("{label:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }

    let rng = RngStream::new(args.seed, 0);
    let equal_sizes = groups[0].1.n() == groups[1].1.n();
    let smaller_n = groups[0].1.n().min(groups[1].1.n());
    if equal_sizes {
        eprintln!("group sizes equal; analyzing both groups without subsampling");
    }

    let mut signals = Vec::new();
    let mut reports = Vec::new();
    for (idx, (label, group)) in groups.iter().enumerate() {
        // Per-group streams keep the two analyses independent.
        let group_rng = rng.derive(idx as u64 + 1);
        let vanilla = equal_sizes || group.n() == smaller_n;
        let signal = if vanilla {
            let y = clr_transform(group, args.pseudocount)?.select_columns(&estimation);
            estimate_vanilla_signal(&y, args.q, &group_rng, scheme)?
        } else {
            let mut runs = Vec::with_capacity(args.subsamples);
            for s in 0..args.subsamples {
                let mut sub_rng = group_rng.derive(1000 + s as u64);
                let sub = subsample_rows(&mut sub_rng, group, smaller_n)?;
                runs.push(clr_transform(&sub, args.pseudocount)?.select_columns(&estimation));
            }
            multi_fdr_aggregate(&runs, args.q, &group_rng, scheme)?
        };
        reports.push(group_report(label, group.n(), vanilla, &signal));
        signals.push(signal);
    }

    let a = signals[0].upper_entries();
    let b = signals[1].upper_entries();
    let (test_value, degenerate_reason) = match wilcoxon_signed_rank(&a, &b) {
        Ok(c) => {
            let v = json!({
                "statistic": c.statistic,
                "z": c.z,
                "p_value": c.p_value,
                "n_pairs": c.n_pairs,
                "exact": c.exact,
            });
            (Some(v), None)
        }
        Err(Error::TooFewPairs { needed, got }) => (
            None,
            Some(format!(
                "signal matrices differ on {got} edge pairs, fewer than the {needed} the test needs; treating the groups as not significantly different"
            )),
        ),
        Err(e) => return Err(e),
    };

    let comparison = json!({
        "groups": reports,
        "equal_sizes": equal_sizes,
        "subsamples": if equal_sizes { 0 } else { args.subsamples },
        "estimation_features": feature_names,
        "excluded_feature": excluded.map(|j| table.feature_names()[j].clone()),
        "test": test_value,
        "degenerate": degenerate_reason.is_some(),
        "degenerate_reason": degenerate_reason,
    });

    let config = json!({
        "input": args.input.display().to_string(),
        "group_column": args.group_column,
        "q": args.q,
        "subsamples": args.subsamples,
        "seed": args.seed,
        "pseudocount": args.pseudocount,
        "min_prevalence": args.min_prevalence,
        "scheme": scheme.to_string(),
    });
    let manifest = RunManifest::new("groups", config, args.seed).with_input(&args.input)?;

    std::fs::create_dir_all(&args.out_dir)?;
    for (idx, ((label, _), signal)) in groups.iter().zip(&signals).enumerate() {
        let name = format!("signal_{}_{}.csv", idx + 1, sanitize_label(label));
        std::fs::write(args.out_dir.join(name), signal_csv(signal, &feature_names))?;
    }
    write_json(&args.out_dir, "comparison.json", &comparison)?;
    write_json(
        &args.out_dir,
        "manifest.json",
        &serde_json::to_value(&manifest).unwrap(),
    )?;
    match &comparison["test"] {
        serde_json::Value::Null => println!("groups compared; test degenerate (see comparison.json)"),
        test => println!(
            "groups compared; Wilcoxon p = {}",
            test["p_value"]
        ),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_dir_check() {
        let tmp = tempfile::tempdir().unwrap();
        let missing = tmp.path().join("new");
        assert!(check_out_dir(&missing).is_ok());
        std::fs::create_dir(&missing).unwrap();
        assert!(check_out_dir(&missing).is_ok());
        std::fs::write(missing.join("x"), "1").unwrap();
        assert!(matches!(
            check_out_dir(&missing),
            Err(Error::OutputDirNotEmpty(_))
        ));
    }

    #[test]
    fn method_list_parsing() {
        let ms = parse_methods("ko, pt,ko").unwrap();
        assert_eq!(ms, vec![Method::Ko, Method::Pt]);
        let err = parse_methods("ko,bogus").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mb-and"), "should list valid names: {msg}");
        assert!(parse_methods(" , ").is_err());
    }

    #[test]
    fn manifest_digests_inputs() {
        let tmp = tempfile::tempdir().unwrap();
        let file = tmp.path().join("in.csv");
        std::fs::write(&file, "a,b\n1,2\n").unwrap();
        let m = RunManifest::new("estimate", json!({}), 7)
            .with_input(&file)
            .unwrap();
        let hex = m.inputs.values().next().unwrap();
        assert_eq!(hex.len(), 64);
        let again = RunManifest::new("estimate", json!({}), 7)
            .with_input(&file)
            .unwrap();
        assert_eq!(m.inputs, again.inputs);
    }

    #[test]
    fn infinity_becomes_string() {
        assert_eq!(json_f64(f64::INFINITY), json!("inf"));
        assert_eq!(json_f64(0.25), json!(0.25));
    }

    #[test]
    fn thread_flag_validation() {
        assert!(resolve_threads(Some(0)).is_err());
        assert_eq!(resolve_threads(Some(4)).unwrap(), 4);
    }
}
