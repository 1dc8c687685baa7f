//! Posterior mean under the quasi-likelihood next to the QMLE.

use coxratio::estimators::{fit_qbe, fit_qmle, FitOptions, QbeOptions};
use coxratio::simulator::{simulate_cox_ratio, ScenarioConfig};

fn main() -> coxratio::Result<()> {
    let ds = simulate_cox_ratio(&ScenarioConfig::example1(1000.0, 3))?.ratio_dataset()?;
    let qmle = fit_qmle(&ds, &FitOptions::default())?;
    let qbe = fit_qbe(&ds, &QbeOptions { seed: 3, ..Default::default() })?;
    let d = qbe.qbe.as_ref().expect("diagnostics");
    println!("QMLE {:.4} (se {:.4})", qmle.theta_hat.as_slice()[0], qmle.stderr[0]);
    println!("QBE  {:.4} (posterior sd {:.4})", qbe.theta_hat.as_slice()[0], d.posterior_sd[0]);
    println!("acceptance {:.2}, ESS {:.0} of {} draws", d.acceptance_rate, d.ess[0], d.kept_draws);
    Ok(())
}
