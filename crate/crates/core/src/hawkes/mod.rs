//! Exponential-kernel Hawkes processes.
//!
//! Intensities use the per-pair recursion `R_mn(t) = Σ_{t_j^n < t} e^{-β_mn (t - t_j^n)}`,
//! so evaluating along a history costs `O(d²)` per event.

mod combined;

pub use combined::{
    fit_combined_example2, fit_full_nelder_mead, full_loglik, full_loglik_grad, ratio_dataset,
    ratio_differences, CombinedFit, CombinedOptions, Example2Params, StageReport,
};

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{lbfgs, LbfgsOptions};

/// Baseline `μ` and exponential kernels `α_mn e^{-β_mn t}` of a `d`-variate
/// Hawkes process; `alpha[m][n]` is the excitation of `m` by events of `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    pub mu: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl HawkesParams {
    pub fn new(mu: Vec<f64>, alpha: Vec<Vec<f64>>, beta: Vec<Vec<f64>>) -> Result<Self> {
        let p = Self { mu, alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn univariate(mu: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(vec![mu], vec![vec![alpha]], vec![vec![beta]])
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mu.len();
        if d == 0 {
            return Err(Error::InvalidArgument("Hawkes process needs d >= 1".into()));
        }
        for rows in [&self.alpha, &self.beta] {
            if rows.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: rows.len(),
                });
            }
            for r in rows {
                if r.len() != d {
                    return Err(Error::Dimension {
                        expected: d,
                        got: r.len(),
                    });
                }
            }
        }
        if self.mu.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument("mu must be positive".into()));
        }
        if self.alpha.iter().flatten().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidArgument("alpha must be non-negative".into()));
        }
        if self.beta.iter().flatten().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(Error::InvalidArgument("beta must be positive".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.mu.len()
    }

    /// Matrix of branching ratios `α_mn / β_mn`.
    pub fn branching_matrix(&self) -> DMatrix<f64> {
        let d = self.dims();
        DMatrix::from_fn(d, d, |m, n| self.alpha[m][n] / self.beta[m][n])
    }

    pub fn spectral_radius(&self) -> f64 {
        let m = self.branching_matrix();
        if m.iter().any(|x| !x.is_finite()) {
            return f64::INFINITY;
        }
        m
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_stationary(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// Stationary mean intensity `(I − A)^{-1} μ`.
    pub fn mean_intensity(&self) -> Result<Vec<f64>> {
        if !self.is_stationary() {
            return Err(Error::Stationarity(format!(
                "spectral radius {} >= 1",
                self.spectral_radius()
            )));
        }
        let d = self.dims();
        let m = DMatrix::identity(d, d) - self.branching_matrix();
        let mu = nalgebra::DVector::from_vec(self.mu.clone());
        m.lu()
            .solve(&mu)
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::Stationarity("singular I - A".into()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Running kernel sums for evaluating intensities along a history.
#[derive(Clone, Debug)]
pub struct IntensityState<'a> {
    params: &'a HawkesParams,
    r: Vec<f64>,
    t: f64,
}

impl<'a> IntensityState<'a> {
    pub fn new(params: &'a HawkesParams) -> Self {
        let d = params.dims();
        Self {
            params,
            r: vec![0.0; d * d],
            t: 0.0,
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Decays the kernel sums forward to time `t`.
    pub fn advance(&mut self, t: f64) -> Result<()> {
        if t < self.t {
            return Err(Error::InvalidArgument(format!(
                "time {t} precedes current time {}",
                self.t
            )));
        }
        let dt = t - self.t;
        if dt > 0.0 {
            let d = self.params.dims();
            for m in 0..d {
                for n in 0..d {
                    self.r[m * d + n] *= (-self.params.beta[m][n] * dt).exp();
                }
            }
        }
        self.t = t;
        Ok(())
    }

    /// Records an event of dimension `n` at the current time.
    pub fn excite(&mut self, n: usize) {
        let d = self.params.dims();
        for m in 0..d {
            self.r[m * d + n] += 1.0;
        }
    }

    pub fn intensity_of(&self, m: usize) -> f64 {
        let d = self.params.dims();
        self.params.mu[m]
            + (0..d)
                .map(|n| self.params.alpha[m][n] * self.r[m * d + n])
                .sum::<f64>()
    }

    pub fn intensity(&self) -> Vec<f64> {
        (0..self.params.dims()).map(|m| self.intensity_of(m)).collect()
    }

    pub fn total(&self) -> f64 {
        (0..self.params.dims()).map(|m| self.intensity_of(m)).sum()
    }
}

/// Merges per-dimension event times into one `(time, dim)` sequence,
/// ordered by time and then dimension.
pub fn merge_events(events: &[Vec<f64>]) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = events
        .iter()
        .enumerate()
        .flat_map(|(n, ts)| ts.iter().map(move |&t| (t, n)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all
}

fn check_sorted(history: &[(f64, usize)], d: usize) -> Result<()> {
    for (k, w) in history.iter().enumerate() {
        if !w.0.is_finite() {
            return Err(Error::NonFinite(format!("event time at position {k}")));
        }
        if w.1 >= d {
            return Err(Error::Dimension {
                expected: d,
                got: w.1 + 1,
            });
        }
        if k > 0 && history[k - 1].0 > w.0 {
            return Err(Error::InvalidArgument(format!(
                "history not sorted at position {k}"
            )));
        }
    }
    Ok(())
}

/// Intensity vector at `t` given the events strictly before `t`.
pub fn hawkes_intensity(params: &HawkesParams, history: &[(f64, usize)], t: f64) -> Result<Vec<f64>> {
    check_sorted(history, params.dims())?;
    let mut state = IntensityState::new(params);
    for &(s, n) in history.iter().take_while(|e| e.0 < t) {
        state.advance(s)?;
        state.excite(n);
    }
    state.advance(t.max(state.time()))?;
    Ok(state.intensity())
}

/// Ogata thinning on `[0, horizon]`; the bound is the current total intensity,
/// refreshed at every candidate.
pub fn simulate_hawkes(params: &HawkesParams, horizon: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_hawkes_with(params, horizon, &mut rng)
}

pub fn simulate_hawkes_with<R: Rng>(
    params: &HawkesParams,
    horizon: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    if !params.is_stationary() {
        return Err(Error::Stationarity(format!(
            "spectral radius {} >= 1",
            params.spectral_radius()
        )));
    }
    let d = params.dims();
    let mut out = vec![Vec::new(); d];
    let mut state = IntensityState::new(params);
    let mut t = 0.0;
    loop {
        let bound = state.total();
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / bound;
        if t > horizon {
            break;
        }
        state.advance(t)?;
        let lambda = state.intensity();
        let total: f64 = lambda.iter().sum();
        debug_assert!(total <= bound * (1.0 + 1e-12));
        let v: f64 = rng.random::<f64>() * bound;
        if v < total {
            let mut acc = 0.0;
            let mut dim = d - 1;
            for (m, l) in lambda.iter().enumerate() {
                acc += l;
                if v < acc {
                    dim = m;
                    break;
                }
            }
            out[dim].push(t);
            state.excite(dim);
        }
    }
    Ok(out)
}

/// Compensator `Λ_m(T) = μ_m T + Σ_n α_mn/β_mn Σ_j (1 − e^{-β_mn (T − t_j^n)})`.
pub fn compensator(params: &HawkesParams, events: &[Vec<f64>], horizon: f64) -> Vec<f64> {
    let d = params.dims();
    (0..d)
        .map(|m| {
            params.mu[m] * horizon
                + (0..d)
                    .map(|n| {
                        let (a, b) = (params.alpha[m][n], params.beta[m][n]);
                        events[n]
                            .iter()
                            .filter(|&&s| s < horizon)
                            .map(|&s| -a / b * (-b * (horizon - s)).exp_m1())
                            .sum::<f64>()
                    })
                    .sum::<f64>()
        })
        .collect()
}

/// Time-rescaled inter-arrival times `Λ_m(t_k) − Λ_m(t_{k−1})` per dimension;
/// Exp(1) under a correctly specified model.
pub fn time_rescaled_intervals(params: &HawkesParams, events: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = params.dims();
    let merged = merge_events(events);
    check_sorted(&merged, d)?;
    let mut out = vec![Vec::new(); d];
    let mut state = IntensityState::new(params);
    let mut counts = vec![0usize; d];
    let mut last = vec![0.0; d];
    let comp_at = |state: &IntensityState, counts: &[usize], m: usize, t: f64| {
        params.mu[m] * t
            + (0..d)
                .map(|n| {
                    params.alpha[m][n] / params.beta[m][n]
                        * (counts[n] as f64 - state.r[m * d + n])
                })
                .sum::<f64>()
    };
    for &(t, n) in &merged {
        state.advance(t)?;
        let c = comp_at(&state, &counts, n, t);
        out[n].push(c - last[n]);
        last[n] = c;
        state.excite(n);
        counts[n] += 1;
    }
    Ok(out)
}

/// Which kernel entries are free in a fit.
fn pair_free(allow_cross: bool, m: usize, n: usize) -> bool {
    allow_cross || m == n
}

fn pack(params: &HawkesParams, allow_cross: bool) -> Vec<f64> {
    let d = params.dims();
    let mut x = params.mu.iter().map(|v| v.ln()).collect::<Vec<_>>();
    for m in 0..d {
        for n in 0..d {
            if pair_free(allow_cross, m, n) {
                x.push(params.alpha[m][n].max(1e-300).ln());
                x.push(params.beta[m][n].ln());
            }
        }
    }
    x
}

fn unpack(x: &[f64], d: usize, allow_cross: bool) -> HawkesParams {
    let mu = x[..d].iter().map(|v| v.exp()).collect();
    let mut alpha = vec![vec![0.0; d]; d];
    let mut beta = vec![vec![1.0; d]; d];
    let mut k = d;
    for m in 0..d {
        for n in 0..d {
            if pair_free(allow_cross, m, n) {
                alpha[m][n] = x[k].exp();
                beta[m][n] = x[k + 1].exp();
                k += 2;
            }
        }
    }
    HawkesParams { mu, alpha, beta }
}

/// Exact log-likelihood and its gradient with respect to `μ`, `α`, `β`.
/// Gradient layout: `μ` (d), then `∂α` and `∂β` as d×d row-major blocks.
pub fn hawkes_loglik_grad(
    params: &HawkesParams,
    events: &[Vec<f64>],
    horizon: f64,
) -> (f64, Vec<f64>) {
    let d = params.dims();
    let merged = merge_events(events);
    let mut r = vec![0.0; d * d];
    let mut s = vec![0.0; d * d];
    let mut g_mu = vec![0.0; d];
    let mut g_a = vec![0.0; d * d];
    let mut g_b = vec![0.0; d * d];
    let mut ll = 0.0;
    let mut last = 0.0;
    for &(t, n) in &merged {
        let dt = t - last;
        if dt > 0.0 {
            for m in 0..d {
                for k in 0..d {
                    let i = m * d + k;
                    let e = (-params.beta[m][k] * dt).exp();
                    s[i] = e * (s[i] + dt * r[i]);
                    r[i] *= e;
                }
            }
        }
        last = t;
        let m = n;
        let lambda = params.mu[m]
            + (0..d)
                .map(|k| params.alpha[m][k] * r[m * d + k])
                .sum::<f64>();
        ll += lambda.ln();
        g_mu[m] += 1.0 / lambda;
        for k in 0..d {
            let i = m * d + k;
            g_a[i] += r[i] / lambda;
            g_b[i] -= params.alpha[m][k] * s[i] / lambda;
        }
        for mm in 0..d {
            r[mm * d + n] += 1.0;
        }
    }
    for m in 0..d {
        ll -= params.mu[m] * horizon;
        g_mu[m] -= horizon;
        for n in 0..d {
            let (a, b) = (params.alpha[m][n], params.beta[m][n]);
            let i = m * d + n;
            for &tj in &events[n] {
                let u = horizon - tj;
                let e = (-b * u).exp();
                // 1 − e without cancellation when b·u is tiny
                let one_minus_e = -(-b * u).exp_m1();
                ll -= a / b * one_minus_e;
                g_a[i] -= one_minus_e / b;
                g_b[i] -= -a / (b * b) * one_minus_e + a / b * u * e;
            }
        }
    }
    let mut grad = g_mu;
    grad.extend(g_a);
    grad.extend(g_b);
    (ll, grad)
}

pub fn hawkes_loglik(params: &HawkesParams, events: &[Vec<f64>], horizon: f64) -> f64 {
    hawkes_loglik_grad(params, events, horizon).0
}

/// Outcome of [`fit_hawkes_mle`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HawkesFit {
    pub params: HawkesParams,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// `1/sqrt(−∂²ℓ/∂α²)` per kernel entry with the other parameters held
    /// fixed; zero for entries pinned by the no-cross restriction.
    pub alpha_stderr: Vec<Vec<f64>>,
    pub stationary: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Maximum-likelihood fit of an exponential Hawkes process by L-BFGS on
/// log-parameters. With `allow_cross == false` the off-diagonal kernels are
/// pinned to zero.
pub fn fit_hawkes_mle(events: &[Vec<f64>], horizon: f64, allow_cross: bool) -> Result<HawkesFit> {
    let d = events.len();
    if d == 0 {
        return Err(Error::InvalidArgument("no dimensions".into()));
    }
    for (m, ts) in events.iter().enumerate() {
        if ts.len() < 10 {
            return Err(Error::Estimation(format!(
                "dimension {m} has {} events, need at least 10",
                ts.len()
            )));
        }
        if ts.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(format!("dimension {m} not sorted")));
        }
        if ts.iter().any(|t| !t.is_finite() || *t < 0.0 || *t > horizon) {
            return Err(Error::InvalidArgument(format!(
                "dimension {m} has times outside [0, {horizon}]"
            )));
        }
    }
    let merged = merge_events(events);
    if merged.first().map(|e| e.0) == merged.last().map(|e| e.0) {
        return Err(Error::Estimation("all events share one timestamp".into()));
    }
    let n_total = merged.len() as f64;
    let objective = |x: &[f64]| {
        let p = unpack(x, d, allow_cross);
        let (ll, g) = hawkes_loglik_grad(&p, events, horizon);
        // chain rule to log-parameters, restricted to free entries
        let mut gx: Vec<f64> = (0..d).map(|m| -g[m] * p.mu[m] / n_total).collect();
        for m in 0..d {
            for n in 0..d {
                if pair_free(allow_cross, m, n) {
                    gx.push(-g[d + m * d + n] * p.alpha[m][n] / n_total);
                    gx.push(-g[d + d * d + m * d + n] * p.beta[m][n] / n_total);
                }
            }
        }
        let f = -ll / n_total;
        if f.is_finite() {
            (f, gx)
        } else {
            (f64::INFINITY, gx)
        }
    };

    let opts = LbfgsOptions {
        max_iter: 1000,
        grad_tol: 1e-8,
        ..LbfgsOptions::default()
    };
    let mut best: Option<(crate::optim::MinimizeResult, Vec<f64>)> = None;
    for beta_scale in [0.5, 2.0, 8.0] {
        let mut mu = Vec::with_capacity(d);
        let mut alpha = vec![vec![0.0; d]; d];
        let mut beta = vec![vec![1.0; d]; d];
        for m in 0..d {
            let rate = events[m].len() as f64 / horizon;
            mu.push(0.5 * rate);
            for n in 0..d {
                let b = beta_scale * rate.max(1e-3);
                beta[m][n] = b;
                alpha[m][n] = if m == n { 0.4 * b } else { 0.05 * b };
            }
        }
        let x0 = pack(&HawkesParams { mu, alpha, beta }, allow_cross);
        let r = lbfgs(objective, &x0, &opts);
        let better = match &best {
            None => true,
            Some((b, _)) => r.fx < b.fx,
        };
        if better {
            best = Some((r, x0));
        }
    }
    let (r, _) = best.expect("at least one start");
    let params = unpack(&r.x, d, allow_cross);
    let loglik = hawkes_loglik(&params, events, horizon);

    let mut alpha_stderr = vec![vec![0.0; d]; d];
    for m in 0..d {
        for n in 0..d {
            if !pair_free(allow_cross, m, n) {
                continue;
            }
            let a = params.alpha[m][n];
            let h = 1e-4 * a.max(1e-3);
            let at = |v: f64| {
                let mut p = params.clone();
                p.alpha[m][n] = v;
                hawkes_loglik_grad(&p, events, horizon).1[d + m * d + n]
            };
            let curvature = (at(a + h) - at((a - h).max(0.0))) / (a + h - (a - h).max(0.0));
            alpha_stderr[m][n] = if curvature < 0.0 {
                1.0 / (-curvature).sqrt()
            } else {
                f64::INFINITY
            };
        }
    }
    let stationary = params.is_stationary();
    let mut warnings = Vec::new();
    if !stationary {
        warnings.push(format!(
            "fitted spectral radius {} >= 1",
            params.spectral_radius()
        ));
    }
    if !r.converged {
        warnings.push("L-BFGS did not reach the gradient tolerance".into());
    }
    Ok(HawkesFit {
        params,
        loglik,
        converged: r.converged,
        iterations: r.iterations,
        alpha_stderr,
        stationary,
        warnings,
    })
}

/// `(H_B, H_A)`: logs of the univariate self-exciting intensities at the
/// left limit `t−`, from bid and ask event times.
pub fn hawkes_covariates(
    params_bid: &HawkesParams,
    params_ask: &HawkesParams,
    bid_times: &[f64],
    ask_times: &[f64],
    t: f64,
) -> Result<(f64, f64)> {
    let one = |p: &HawkesParams, times: &[f64]| -> Result<f64> {
        if p.dims() != 1 {
            return Err(Error::Dimension {
                expected: 1,
                got: p.dims(),
            });
        }
        let hist: Vec<(f64, usize)> = times.iter().map(|&s| (s, 0)).collect();
        Ok(hawkes_intensity(p, &hist, t)?[0].ln())
    };
    Ok((one(params_bid, bid_times)?, one(params_ask, ask_times)?))
}

/// Streaming version of [`hawkes_covariates`] for one univariate process.
#[derive(Clone, Debug)]
pub struct SelfExcitingLog {
    mu: f64,
    alpha: f64,
    beta: f64,
    r: f64,
    t: f64,
}

impl SelfExcitingLog {
    pub fn new(params: &HawkesParams) -> Result<Self> {
        if params.dims() != 1 {
            return Err(Error::Dimension {
                expected: 1,
                got: params.dims(),
            });
        }
        Ok(Self {
            mu: params.mu[0],
            alpha: params.alpha[0][0],
            beta: params.beta[0][0],
            r: 0.0,
            t: 0.0,
        })
    }

    /// `log λ(t−)`; `t` must not precede earlier queries or events.
    pub fn log_intensity(&mut self, t: f64) -> f64 {
        self.decay_to(t);
        (self.mu + self.alpha * self.r).ln()
    }

    pub fn add_event(&mut self, t: f64) {
        self.decay_to(t);
        self.r += 1.0;
    }

    fn decay_to(&mut self, t: f64) {
        if t > self.t {
            self.r *= (-self.beta * (t - self.t)).exp();
            self.t = t;
        }
    }
}

/// Writes event times as CSV rows `time,dim` in time order.
pub fn write_events_csv<W: Write>(events: &[Vec<f64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "dim"])?;
    for (t, n) in merge_events(events) {
        w.write_record([format!("{t}"), n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `time,dim` rows into per-dimension lists (`dims` at least).
pub fn read_events_csv<R: Read>(input: R, dims: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = vec![Vec::new(); dims];
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let parse_err = |message: String| Error::Parse { line, message };
        if rec.len() != 2 {
            return Err(parse_err(format!("expected 2 fields, got {}", rec.len())));
        }
        let t: f64 = rec[0]
            .parse()
            .map_err(|_| parse_err(format!("bad time {:?}", &rec[0])))?;
        let n: usize = rec[1]
            .parse()
            .map_err(|_| parse_err(format!("bad dim {:?}", &rec[1])))?;
        if n >= out.len() {
            out.resize(n + 1, Vec::new());
        }
        out[n].push(t);
    }
    Ok(out)
}
