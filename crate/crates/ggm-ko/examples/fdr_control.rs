//! Target-vs-actual FDR table for both selection schemes on a block
//! graph, where the exact-control guarantee of the +1 scheme applies.
//!
//! Run with: cargo run --release --example fdr_control

use ggm_ko::sim::{run_monte_carlo, GraphKind, Method, SimulationConfig};

fn main() -> ggm_ko::Result<()> {
    let cfg = SimulationConfig {
        kind: GraphKind::Block,
        p: 30,
        n: 150,
        bandwidth: None,
        block_size: Some(3),
        strength: Some(0.4),
        condition: None,
        replicates: 100,
        q_grid: vec![0.05, 0.1, 0.2, 0.3, 0.4],
        seed: 11,
    };
    let record = run_monte_carlo(&cfg, &[Method::Ko, Method::KoPlus], 2)?;

    println!("{} replicates, p = {}, n = {}", cfg.replicates, cfg.p, cfg.n);
    println!("method  target   actual fdr (2 se)    mean power");
    for a in &record.aggregates {
        println!(
            "{:6}  {:6.2}   {:.3} ({:.3})        {:.3}",
            a.method.to_string(),
            a.tuning,
            a.fdr,
            2.0 * a.fdr_se,
            a.power_mean,
        );
    }
    println!("\nko+ rows sit at or below their target: that is the exact");
    println!("finite-sample guarantee. plain ko controls a modified rate and");
    println!("tracks the diagonal approximately, buying back power.");
    Ok(())
}
