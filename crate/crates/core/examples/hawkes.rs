//! Simulate a bivariate Hawkes process, refit it and check the rescaled
//! inter-arrival times against the unit exponential.

use coxratio::hawkes::{fit_hawkes_mle, simulate_hawkes, time_rescaled_intervals, HawkesParams};
use coxratio::stats::ks_test_exponential;

fn main() -> coxratio::Result<()> {
    let p = HawkesParams::new(
        vec![0.3, 0.2],
        vec![vec![0.5, 0.2], vec![0.3, 0.4]],
        vec![vec![1.5, 2.0], vec![1.0, 1.2]],
    )?;
    println!("spectral radius {:.3}, mean intensity {:?}", p.spectral_radius(), p.mean_intensity()?);
    let horizon = 5000.0;
    let events = simulate_hawkes(&p, horizon, 11)?;
    println!("counts {:?}", events.iter().map(Vec::len).collect::<Vec<_>>());
    let fit = fit_hawkes_mle(&events, horizon, true)?;
    println!("fitted mu {:.3?}", fit.params.mu);
    println!("fitted alpha {:.3?}", fit.params.alpha);
    for (m, iv) in time_rescaled_intervals(&fit.params, &events)?.iter().enumerate() {
        let (d, pval) = ks_test_exponential(iv);
        println!("dimension {m}: KS D {d:.4}, p {pval:.3}");
    }
    Ok(())
}
