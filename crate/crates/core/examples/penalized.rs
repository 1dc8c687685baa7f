//! Lasso path over all ten imbalance covariates; only the first is active.

use coxratio::lob::build_dataset;
use coxratio::selection::{fit_penalized, support, PenalizedOptions, PenaltySpec};
use coxratio::simulator::{synth_lob_stream, SynthLobConfig};

fn main() -> coxratio::Result<()> {
    let mut theta = vec![0.0; 11];
    theta[1] = 2.0;
    let out = synth_lob_stream(&SynthLobConfig::new("all_imbalances", vec![theta], 1, 140_000, 2))?;
    let built = build_dataset(&out.sessions, &out.truth, &out.calibration)?;
    let spec = built.dataset.spec().clone();
    let root_t = built.dataset.horizon().sqrt();
    for scale in [1.0, 5.0, 20.0, 50.0, 200.0] {
        let pen = PenaltySpec::lasso(scale / root_t).without_penalty_on(&spec, "intercept");
        let fit = fit_penalized(&built.dataset, &pen, &PenalizedOptions::default())?;
        let names: Vec<&str> = support(&fit.theta_hat).iter().map(|&k| spec.covariate_names[k].as_str()).collect();
        println!("lambda*sqrt(T) = {scale:>5}: support {names:?}");
    }
    Ok(())
}
