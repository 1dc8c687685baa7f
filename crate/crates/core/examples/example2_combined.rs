//! Two-kernel Hawkes with a chain-driven factor: ratio step first, then the
//! constrained and unconstrained likelihood stages.

use coxratio::hawkes::{fit_combined_example2, CombinedOptions, Example2Params};
use coxratio::simulator::simulate_example2;

fn main() -> coxratio::Result<()> {
    let truth = Example2Params::table1();
    let data = simulate_example2(&truth, 1e4, 1)?;
    let fit = fit_combined_example2(&data, &CombinedOptions::default())?;
    for s in &fit.stages {
        println!("stage {} converged {} after {} iterations, loglik {:.2}", s.stage, s.converged, s.iterations, s.loglik);
    }
    println!("true      {:?}", truth.vartheta.as_slice());
    println!("estimated {:?}", fit.params.vartheta.as_slice().iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>());
    println!("alpha {:?} beta {:?}", fit.params.alpha, fit.params.beta);
    Ok(())
}
