//! Empirical checks of the three facts the selector rests on: the null
//! pivot law of partial correlations, knockoff/null exchangeability, and
//! the sign symmetry of the test scores on null edges.
//!
//! Run with: cargo run --release --example knockoff_diagnostics

use ggm_ko::estimator::{make_knockoffs, null_t_statistic, partial_correlations};
use ggm_ko::linalg::SymmetricMatrix;
use ggm_ko::rng::RngStream;
use ggm_ko::sim::{ks_critical_value, ks_statistic, ks_two_sample, ks_two_sample_critical_value};
use statrs::distribution::{ContinuousCDF, StudentsT};

fn main() -> ggm_ko::Result<()> {
    let (n, p, reps) = (80usize, 10usize, 1500usize);
    let identity = SymmetricMatrix::identity(p);
    let dof = n - p;

    let mut pivots = Vec::with_capacity(reps);
    let mut knockoff_entries = Vec::with_capacity(reps);
    let mut null_partials = Vec::with_capacity(reps);
    let mut positive_signs = 0usize;
    for r in 0..reps {
        let mut rng = RngStream::new(77, r as u64);
        let x = rng.sample_mvn(&identity, n)?;
        let partial = partial_correlations(&x)?;
        let r01 = partial.get(0, 1);
        pivots.push(null_t_statistic(r01, n, p));
        null_partials.push(r01);
        let knock = make_knockoffs(&mut rng, n, p)?;
        knockoff_entries.push(knock.get(0, 1));
        if r01.abs() > knock.get(0, 1).abs() {
            positive_signs += 1;
        }
    }

    let t_ref = StudentsT::new(0.0, 1.0, dof as f64).unwrap();
    let d1 = ks_statistic(&pivots, |x| t_ref.cdf(x))?;
    println!(
        "pivot law      : KS vs t_{dof} = {:.4} (critical at 0.1% level: {:.4})",
        d1,
        ks_critical_value(0.001, reps)
    );

    let d2 = ks_two_sample(&knockoff_entries, &null_partials)?;
    println!(
        "exchangeability: two-sample KS = {:.4} (critical: {:.4})",
        d2,
        ks_two_sample_critical_value(0.001, reps, reps)
    );

    let frac = positive_signs as f64 / reps as f64;
    let band = 4.0 * (0.25 / reps as f64).sqrt();
    println!(
        "sign symmetry  : positive-score fraction {:.3} (expect 0.5 +/- {:.3})",
        frac, band
    );
    Ok(())
}
