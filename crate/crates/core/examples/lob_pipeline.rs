//! Book events to covariates to fit to probability curve.

use coxratio::estimators::{fit_qmle, FitOptions};
use coxratio::lob::{build_dataset, probability_curve};
use coxratio::simulator::{synth_lob_stream, SynthLobConfig};

fn main() -> coxratio::Result<()> {
    let cfg = SynthLobConfig::new("imbalance_last_spread", vec![vec![0.0, 2.0, 0.8, -0.4]], 1, 100_000, 4);
    let out = synth_lob_stream(&cfg)?;
    let built = build_dataset(&out.sessions, &out.truth, &out.calibration)?;
    let fit = fit_qmle(&built.dataset, &FitOptions::default())?;
    let names = &built.dataset.spec().covariate_names;
    for (k, name) in names.iter().enumerate() {
        println!("{name:<8} true {:+.2}  fit {:+.3} ({:.3})", out.theta_true[0][k], fit.theta_hat.as_slice()[k], fit.stderr[k]);
    }
    let grid: Vec<f64> = (-10..=10).map(|k| k as f64 / 10.0).collect();
    let curve = probability_curve(&fit.theta_hat, &out.truth, &built, &grid, 1)?;
    println!("mean L2 gap model vs empirical: {:.4}", curve.mean_l2);
    for r in curve.rows.iter().filter(|r| r.cell == curve.rows[0].cell).step_by(5) {
        println!("  i={:+.1} model {:.3} empirical {:?}", r.x, r.model, r.empirical.map(|e| (e * 1e3).round() / 1e3));
    }
    Ok(())
}
