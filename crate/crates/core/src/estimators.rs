//! Quasi-maximum-likelihood and quasi-Bayesian estimation of the ratio model.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::ratio::{
    evaluate, observed_information, EstimationDataset, InformationTensor, Order, RatioModelSpec,
    ThetaVector,
};
use crate::stats::effective_sample_size;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Newton,
    NelderMead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint {
    Zeros,
    RandomNormal { scale: f64, seed: u64 },
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub method: FitMethod,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_halving_max: usize,
    pub start: StartPoint,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: FitMethod::Newton,
            max_iter: 100,
            grad_tol: 1e-8,
            step_halving_max: 50,
            start: StartPoint::Zeros,
        }
    }
}

impl FitOptions {
    pub fn nelder_mead() -> Self {
        Self {
            method: FitMethod::NelderMead,
            max_iter: 0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidArgument("grad_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Diagnostics of a quasi-Bayesian run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QbeDiagnostics {
    pub acceptance_rate: f64,
    /// Per-coordinate effective sample size of the kept draws.
    pub ess: Vec<f64>,
    pub posterior_sd: Vec<f64>,
    pub kept_draws: usize,
    pub proposal_multiplier: f64,
}

/// Outcome of an estimation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: ThetaVector,
    pub loglik: f64,
    pub gamma_t: InformationTensor,
    /// `sqrt([Γ_T⁻¹]_kk / T)`; infinite along null directions of `Γ_T`,
    /// zero for coordinates pinned by a sub-model mask.
    pub stderr: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub method: String,
    pub horizon: f64,
    pub n_events: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qbe: Option<QbeDiagnostics>,
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Standard errors `sqrt(diag(Γ_T⁻¹) / T)`.
///
/// Coordinates loading on a null direction of `Γ_T` get `f64::INFINITY`.
pub fn asymptotic_stderr(gamma: &InformationTensor, horizon: f64) -> Vec<f64> {
    let p = gamma.dim();
    if p == 0 {
        return Vec::new();
    }
    let m = gamma.matrix();
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-12 * max_ev.max(1e-300);
    (0..p)
        .map(|k| {
            let mut var = 0.0;
            for (e, &ev) in eig.eigenvalues.iter().enumerate() {
                let q = eig.eigenvectors[(k, e)];
                if ev <= tol {
                    if q * q > 1e-12 {
                        return f64::INFINITY;
                    }
                    continue;
                }
                var += q * q / ev;
            }
            if horizon > 0.0 {
                (var / horizon).sqrt()
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

fn start_values(spec: &RatioModelSpec, start: &StartPoint) -> Result<Vec<f64>> {
    let p = spec.dim();
    let v = match start {
        StartPoint::Zeros => vec![0.0; p],
        StartPoint::RandomNormal { scale, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (0..p)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
        StartPoint::Explicit(v) => {
            if v.len() != p {
                return Err(Error::Dimension {
                    expected: p,
                    got: v.len(),
                });
            }
            v.clone()
        }
    };
    Ok(v)
}

fn project(spec: &RatioModelSpec, v: &mut [f64], mask: &[bool]) {
    for (k, x) in v.iter_mut().enumerate() {
        if !mask[k] {
            *x = 0.0;
        } else {
            let (lo, hi) = spec.theta_box[k];
            *x = x.clamp(lo, hi);
        }
    }
}

/// Gradient with components removed where the box (or the mask) blocks ascent.
fn projected_gradient(spec: &RatioModelSpec, theta: &[f64], g: &[f64], mask: &[bool]) -> Vec<f64> {
    theta
        .iter()
        .zip(g)
        .enumerate()
        .map(|(k, (&t, &gk))| {
            let (lo, hi) = spec.theta_box[k];
            if !mask[k] || (t <= lo && gk < 0.0) || (t >= hi && gk > 0.0) {
                0.0
            } else {
                gk
            }
        })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Summarizes a fitted `θ̂` into a [`FitResult`].
pub(crate) fn finish_fit(
    dataset: &EstimationDataset,
    theta: ThetaVector,
    mask: &[bool],
    converged: bool,
    iterations: usize,
    method: &str,
    mut warnings: Vec<String>,
) -> Result<FitResult> {
    let spec = dataset.spec();
    let loglik = evaluate(dataset, &theta, Order::Value).loglik;
    let gamma_t = observed_information(dataset, &theta)?;
    let free: Vec<usize> = (0..spec.dim()).filter(|&k| mask[k]).collect();
    let sub = gamma_t.matrix().select_rows(&free).select_columns(&free);
    let sub_se = asymptotic_stderr(&InformationTensor::new(sub), dataset.horizon());
    let mut stderr = vec![0.0; spec.dim()];
    for (s, &k) in sub_se.iter().zip(&free) {
        stderr[k] = *s;
    }
    if stderr.iter().any(|s| s.is_infinite()) {
        warnings.push("observed information is singular along some coordinates".into());
    }
    if dataset.len() < spec.dim() {
        warnings.push(format!(
            "only {} events for {} parameters",
            dataset.len(),
            spec.dim()
        ));
    }
    Ok(FitResult {
        theta_hat: theta,
        loglik,
        gamma_t,
        stderr,
        converged,
        iterations,
        method: method.to_string(),
        horizon: dataset.horizon(),
        n_events: dataset.len(),
        warnings,
        qbe: None,
    })
}

/// Quasi-maximum-likelihood estimate of `θ` over the closed parameter box.
pub fn fit_qmle(dataset: &EstimationDataset, opts: &FitOptions) -> Result<FitResult> {
    let mask = vec![true; dataset.spec().dim()];
    fit_qmle_masked(dataset, &mask, opts)
}

/// QMLE restricted to the sub-model where coordinates with `mask[k] == false`
/// are pinned to zero.
pub fn fit_qmle_masked(
    dataset: &EstimationDataset,
    mask: &[bool],
    opts: &FitOptions,
) -> Result<FitResult> {
    opts.validate()?;
    let spec = dataset.spec();
    if mask.len() != spec.dim() {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: mask.len(),
        });
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut start = start_values(spec, &opts.start)?;
    project(spec, &mut start, mask);
    match opts.method {
        FitMethod::Newton => newton(dataset, mask, start, opts),
        FitMethod::NelderMead => nelder_mead_fit(dataset, mask, start, opts),
    }
}

fn newton(
    dataset: &EstimationDataset,
    mask: &[bool],
    start: Vec<f64>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let spec = dataset.spec();
    let p = spec.dim();
    let template = ThetaVector::zeros(spec);
    let mut theta = start;
    let mut warnings = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut gradient_fallbacks = 0;
    let mut pure_steps = 0;

    let value_at = |v: &[f64]| evaluate(dataset, &template.with_values(v.to_vec()), Order::Value).loglik;

    loop {
        let eval = evaluate(dataset, &template.with_values(theta.clone()), Order::Hessian);
        let pg = projected_gradient(spec, &theta, &eval.score, mask);
        if inf_norm(&pg) <= opts.grad_tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        // Newton system on free coordinates not blocked by the box
        let free: Vec<usize> = (0..p).filter(|&k| pg[k] != 0.0).collect();
        let neg_h = DMatrix::from_fn(free.len(), free.len(), |a, b| {
            -eval.hessian[free[a] * p + free[b]]
        });
        let g_free = DVector::from_iterator(free.len(), free.iter().map(|&k| eval.score[k]));
        let newton_dir = neg_h.clone().cholesky().map(|c| c.solve(&g_free));

        let mut directions: Vec<Vec<f64>> = Vec::with_capacity(2);
        if let Some(d) = newton_dir {
            let mut full = vec![0.0; p];
            for (a, &k) in free.iter().enumerate() {
                full[k] = d[a];
            }
            // predicted gain below the rounding of the summed quasi-likelihood:
            // the line search can no longer discriminate, so take the full step
            let decrement = d.dot(&g_free);
            if decrement <= 1e-12 * eval.loglik.abs().max(1.0) && pure_steps < 20 {
                pure_steps += 1;
                theta = theta.iter().zip(&full).map(|(t, d)| t + d).collect();
                project(spec, &mut theta, mask);
                continue;
            }
            directions.push(full);
        }
        // gradient step scaled by the diagonal curvature
        let diag_scale = (0..free.len())
            .map(|a| neg_h[(a, a)])
            .fold(0.0, f64::max)
            .max(1e-12);
        directions.push(pg.iter().map(|g| g / diag_scale).collect());

        let mut accepted = false;
        for (which, dir) in directions.iter().enumerate() {
            let mut step = 1.0;
            for _ in 0..=opts.step_halving_max {
                let mut cand: Vec<f64> = theta.iter().zip(dir).map(|(t, d)| t + step * d).collect();
                project(spec, &mut cand, mask);
                let ascent: f64 = cand
                    .iter()
                    .zip(&theta)
                    .zip(&eval.score)
                    .map(|((c, t), g)| (c - t) * g)
                    .sum();
                let value = value_at(&cand);
                if value >= eval.loglik + 1e-4 * ascent && value >= eval.loglik {
                    theta = cand;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if accepted {
                if which > 0 {
                    gradient_fallbacks += 1;
                }
                break;
            }
        }
        if !accepted {
            warnings.push("line search failed to improve the quasi-likelihood".into());
            break;
        }
    }
    if gradient_fallbacks > 0 {
        warnings.push(format!(
            "{gradient_fallbacks} iterations fell back to a gradient step"
        ));
    }
    if !converged && iterations >= opts.max_iter {
        warnings.push(format!("no convergence within {} iterations", opts.max_iter));
    }
    finish_fit(
        dataset,
        template.with_values(theta),
        mask,
        converged,
        iterations,
        "newton",
        warnings,
    )
}

fn nelder_mead_fit(
    dataset: &EstimationDataset,
    mask: &[bool],
    start: Vec<f64>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let spec = dataset.spec();
    let template = ThetaVector::zeros(spec);
    let free: Vec<usize> = (0..spec.dim()).filter(|&k| mask[k]).collect();
    let scale = 1.0 / dataset.len() as f64;
    let embed = |z: &[f64]| {
        let mut v = vec![0.0; spec.dim()];
        for (a, &k) in free.iter().enumerate() {
            v[k] = z[a];
        }
        project(spec, &mut v, mask);
        v
    };
    let objective = |z: &[f64]| {
        -scale * evaluate(dataset, &template.with_values(embed(z)), Order::Value).loglik
    };
    let mut nm = NelderMeadOptions::for_dim(free.len());
    if opts.max_iter > 0 {
        nm.max_iter = opts.max_iter;
    }
    let z0: Vec<f64> = free.iter().map(|&k| start[k]).collect();
    let r = nelder_mead(objective, &z0, &nm);
    let mut warnings = Vec::new();
    if !r.converged {
        warnings.push(format!("simplex did not collapse within {} iterations", nm.max_iter));
    }
    finish_fit(
        dataset,
        template.with_values(embed(&r.x)),
        mask,
        r.converged,
        r.iterations,
        "nelder_mead",
        warnings,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalScale {
    /// `(T Γ_T)⁻¹ · 2.4² / p`, multiplier adapted during burn-in.
    Auto,
    /// Isotropic Gaussian steps with this standard deviation.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    /// Uniform density on the parameter box.
    UniformBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QbeOptions {
    /// Total chain length, burn-in included.
    pub n_samples: usize,
    pub burn_in: usize,
    pub proposal_scale: ProposalScale,
    pub prior: Prior,
    pub seed: u64,
}

impl Default for QbeOptions {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            burn_in: 5_000,
            proposal_scale: ProposalScale::Auto,
            prior: Prior::UniformBox,
            seed: 0,
        }
    }
}

/// Quasi-Bayesian estimate: posterior mean under `exp(H_T(θ)) ϖ(θ)` on the
/// box, by random-walk Metropolis started at the QMLE.
pub fn fit_qbe(dataset: &EstimationDataset, opts: &QbeOptions) -> Result<FitResult> {
    if opts.n_samples <= opts.burn_in {
        return Err(Error::InvalidArgument(format!(
            "n_samples ({}) must exceed burn_in ({})",
            opts.n_samples, opts.burn_in
        )));
    }
    let spec = dataset.spec();
    let p = spec.dim();
    let template = ThetaVector::zeros(spec);
    let mut warnings = Vec::new();

    let (start, curvature) = if dataset.is_empty() {
        (spec.box_center(), None)
    } else {
        let qmle = fit_qmle(dataset, &FitOptions::default())?;
        let h = crate::ratio::hessian(dataset, &qmle.theta_hat)?;
        (qmle.theta_hat.as_slice().to_vec(), Some(-h))
    };

    // proposal factor L with L Lᵀ = proposal covariance
    let fallback = || {
        DMatrix::from_fn(p, p, |a, b| {
            if a == b {
                let (lo, hi) = spec.theta_box[a];
                (hi - lo) / 6.0
            } else {
                0.0
            }
        })
    };
    let (chol, mut multiplier) = match &opts.proposal_scale {
        ProposalScale::Fixed(sd) => (DMatrix::identity(p, p) * *sd, 1.0),
        ProposalScale::Auto => {
            let base = curvature
                .and_then(|c| c.cholesky())
                .and_then(|c| c.l().try_inverse())
                .map(|linv| linv.transpose())
                .unwrap_or_else(|| {
                    warnings.push("proposal covariance from the box; information is singular".into());
                    fallback()
                });
            (base, 2.4 / (p as f64).sqrt())
        }
    };
    let adapt = matches!(opts.proposal_scale, ProposalScale::Auto);
    let target = if p == 1 { 0.44 } else { 0.234 };

    let in_box = |v: &[f64]| {
        v.iter()
            .zip(&spec.theta_box)
            .all(|(x, &(lo, hi))| *x >= lo && *x <= hi)
    };
    let log_post = |v: &[f64]| evaluate(dataset, &template.with_values(v.to_vec()), Order::Value).loglik;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut current = start;
    let mut current_lp = log_post(&current);
    let kept = opts.n_samples - opts.burn_in;
    let mut traces: Vec<Vec<f64>> = vec![Vec::with_capacity(kept); p];
    let mut accepted_kept = 0usize;
    let mut window_accepts = 0usize;

    for it in 0..opts.n_samples {
        let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = &chol * z * multiplier;
        let proposal: Vec<f64> = current.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let u: f64 = rng.random();
        let mut accepted = false;
        if in_box(&proposal) {
            let lp = log_post(&proposal);
            if u.ln() < lp - current_lp {
                current = proposal;
                current_lp = lp;
                accepted = true;
            }
        }
        if it < opts.burn_in {
            if accepted {
                window_accepts += 1;
            }
            if adapt && (it + 1) % 100 == 0 {
                let rate = window_accepts as f64 / 100.0;
                multiplier *= ((rate - target) * 2.0).exp();
                window_accepts = 0;
            }
        } else {
            if accepted {
                accepted_kept += 1;
            }
            for (k, trace) in traces.iter_mut().enumerate() {
                trace.push(current[k]);
            }
        }
    }

    let acceptance_rate = accepted_kept as f64 / kept as f64;
    if !(0.1..=0.6).contains(&acceptance_rate) {
        warnings.push(format!("acceptance rate {acceptance_rate:.3} outside [0.1, 0.6]"));
    }
    let posterior_mean: Vec<f64> = traces.iter().map(|t| crate::stats::mean(t)).collect();
    let posterior_sd: Vec<f64> = traces
        .iter()
        .map(|t| crate::stats::variance(t).sqrt())
        .collect();
    let ess: Vec<f64> = traces.iter().map(|t| effective_sample_size(t)).collect();
    let min_ess = ess.iter().cloned().fold(f64::INFINITY, f64::min);
    let converged = min_ess >= 100.0;
    if !converged {
        warnings.push(format!("effective sample size {min_ess:.1} below 100"));
    }

    let theta = template.with_values(posterior_mean);
    let mask = vec![true; p];
    let mut fit = if dataset.is_empty() {
        FitResult {
            theta_hat: theta,
            loglik: 0.0,
            gamma_t: InformationTensor::new(DMatrix::zeros(p, p)),
            stderr: vec![f64::INFINITY; p],
            converged,
            iterations: opts.n_samples,
            method: "qbe".into(),
            horizon: dataset.horizon(),
            n_events: 0,
            warnings,
            qbe: None,
        }
    } else {
        finish_fit(dataset, theta, &mask, converged, opts.n_samples, "qbe", warnings)?
    };
    fit.qbe = Some(QbeDiagnostics {
        acceptance_rate,
        ess,
        posterior_sd,
        kept_draws: kept,
        proposal_multiplier: multiplier,
    });
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratio::{EventObservation, RatioModelSpec};

    fn obs(process: usize, x: Vec<f64>) -> EventObservation {
        EventObservation {
            session_id: 0,
            time: 0.0,
            process_index: process,
            covariates: x,
        }
    }

    fn logistic_dataset(n: usize, theta: f64, seed: u64) -> EstimationDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = RatioModelSpec::new(2, vec!["x".into()]).unwrap();
        let observations = (0..n)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                let p1 = 1.0 / (1.0 + (-theta * x).exp());
                let i = usize::from(rng.random::<f64>() < p1);
                obs(i, vec![x])
            })
            .collect();
        EstimationDataset::continuous(spec, observations, n as f64).unwrap()
    }

    #[test]
    fn stderr_of_identity_information() {
        let se = asymptotic_stderr(&InformationTensor::identity(3), 4.0);
        assert_eq!(se, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn stderr_flags_null_directions() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let se = asymptotic_stderr(&InformationTensor::new(m), 1.0);
        assert_eq!(se[0], 1.0);
        assert!(se[1].is_infinite());
    }

    #[test]
    fn separation_hits_box() {
        let spec = RatioModelSpec::new(2, vec!["intercept".into()]).unwrap();
        let observations = (0..20).map(|_| obs(0, vec![1.0])).collect();
        let ds = EstimationDataset::continuous(spec, observations, 20.0).unwrap();
        let fit = fit_qmle(&ds, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.theta_hat.as_slice()[0], -20.0);
    }

    #[test]
    fn newton_converges_with_small_score() {
        let ds = logistic_dataset(2000, 1.2, 4);
        let fit = fit_qmle(&ds, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let g = crate::ratio::score(&ds, &fit.theta_hat).unwrap();
        assert!(g[0].abs() <= 1e-8);
        assert!((fit.theta_hat.as_slice()[0] - 1.2).abs() < 4.0 * fit.stderr[0]);
    }

    #[test]
    fn nelder_mead_agrees_with_newton() {
        let ds = logistic_dataset(1000, -0.7, 5);
        let a = fit_qmle(&ds, &FitOptions::default()).unwrap();
        let b = fit_qmle(&ds, &FitOptions::nelder_mead()).unwrap();
        assert!(b.converged);
        assert!(a.theta_hat.max_abs_diff(&b.theta_hat) < 1e-4);
    }

    #[test]
    fn empty_dataset_refused() {
        let spec = RatioModelSpec::unnamed(2, 1).unwrap();
        let ds = EstimationDataset::continuous(spec, vec![], 0.0).unwrap();
        assert!(matches!(
            fit_qmle(&ds, &FitOptions::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn qbe_is_reproducible_and_flat_posterior_is_centered() {
        let spec = RatioModelSpec::unnamed(2, 1).unwrap();
        let ds = EstimationDataset::continuous(spec, vec![], 0.0).unwrap();
        let opts = QbeOptions {
            seed: 11,
            ..QbeOptions::default()
        };
        let a = fit_qbe(&ds, &opts).unwrap();
        let b = fit_qbe(&ds, &opts).unwrap();
        assert_eq!(a, b);
        let diag = a.qbe.as_ref().unwrap();
        let mc_err = diag.posterior_sd[0] / diag.ess[0].sqrt();
        assert!(a.theta_hat.as_slice()[0].abs() < 4.0 * mc_err, "{a:?}");
    }

    #[test]
    fn qbe_rejects_bad_options() {
        let ds = logistic_dataset(10, 0.0, 1);
        let opts = QbeOptions {
            n_samples: 10,
            burn_in: 10,
            ..QbeOptions::default()
        };
        assert!(fit_qbe(&ds, &opts).is_err());
    }
}
