//! Estimate the edge set of a known block-structured network from one
//! synthetic data set and compare against the truth. A single test
//! matrix is reused across targets so the selections nest the way the
//! thresholding rule promises: stricter targets and the +1 correction
//! can only shrink the edge set.
//!
//! Run with: cargo run --example estimate_network

use ggm_ko::estimator::{build_test_matrix, select_edges, Scheme};
use ggm_ko::rng::RngStream;
use ggm_ko::sim::{block_graph, fdp, power};

fn main() -> ggm_ko::Result<()> {
    let model = block_graph(20, 4, 0.3)?;
    let mut rng = RngStream::new(2024, 0);
    let x = rng.sample_mvn(&model.covariance, 400)?;

    println!(
        "truth: {} edges in 5 blocks of 4 nodes",
        model.conditional_edges.len()
    );
    let w = build_test_matrix(&x, &mut rng)?;
    for (q, scheme) in [
        (0.05, Scheme::KoPlus),
        (0.05, Scheme::Ko),
        (0.1, Scheme::Ko),
        (0.25, Scheme::Ko),
    ] {
        let sel = select_edges(&w, q, scheme)?;
        println!(
            "q = {q:4}, scheme = {scheme:3}: {:2} edges selected, threshold {:.4}, fdp {:.3}, power {:.3}",
            sel.edges.len(),
            sel.threshold,
            fdp(&sel.edges, &model.conditional_edges),
            power(&sel.edges, &model.conditional_edges),
        );
    }

    let sel = select_edges(&w, 0.2, Scheme::Ko)?;
    println!("\nselected edges at q = 0.2 with their partial correlations:");
    for edge in &sel.edges {
        let mark = if model.conditional_edges.contains(edge) {
            "true"
        } else {
            "FALSE"
        };
        println!(
            "  ({:2}, {:2})  R = {:+.3}  [{mark} edge]",
            edge.i(),
            edge.j(),
            sel.retained_values[edge]
        );
    }
    Ok(())
}
