//! Full likelihood of a Cox model whose baseline is driven by an observed
//! multi-kernel Hawkes process, and the ratio-first "Combined" estimator.
//!
//! The model is `λ^i(t) = [1 + Σ_k α_k ∫ e^{-β_k (t-s)} dH(s)] exp(ϑ^i · X(t))`
//! with `X` a vector of two-state chains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_qmle, FitOptions, FitResult};
use crate::optim::{lbfgs, nelder_mead, LbfgsOptions, NelderMeadOptions};
use crate::ratio::{
    EstimationDataset, EventObservation, RatioModelSpec, ThetaVector, VarthetaVector,
};
use crate::simulator::Example2Data;

/// Baseline kernels and absolute responses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example2Params {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub vartheta: VarthetaVector,
}

impl Example2Params {
    /// Table values: `α = (1, 2)`, `β = (2, 10)`,
    /// `ϑ = ((0.5, 1), (0.5, −1), (−0.5, 1))`.
    pub fn table1() -> Self {
        Self {
            alpha: vec![1.0, 2.0],
            beta: vec![2.0, 10.0],
            vartheta: VarthetaVector::from_rows(&[
                vec![0.5, 1.0],
                vec![0.5, -1.0],
                vec![-0.5, 1.0],
            ])
            .expect("valid rows"),
        }
    }

    /// Flat layout `[α.., β.., ϑ rows..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.alpha.clone();
        v.extend(&self.beta);
        v.extend(self.vartheta.as_slice());
        v
    }

    fn from_vec(v: &[f64], kernels: usize, n_processes: usize) -> Self {
        let j = (v.len() - 2 * kernels) / n_processes;
        let rows: Vec<Vec<f64>> = (0..n_processes)
            .map(|i| v[2 * kernels + i * j..2 * kernels + (i + 1) * j].to_vec())
            .collect();
        Self {
            alpha: v[..kernels].to_vec(),
            beta: v[kernels..2 * kernels].to_vec(),
            vartheta: VarthetaVector::from_rows(&rows).expect("consistent rows"),
        }
    }

    /// Orders kernels by increasing `β` (the likelihood is invariant under
    /// relabelling kernels).
    pub fn canonical(mut self) -> Self {
        let mut idx: Vec<usize> = (0..self.beta.len()).collect();
        idx.sort_by(|&a, &b| self.beta[a].total_cmp(&self.beta[b]));
        self.alpha = idx.iter().map(|&k| self.alpha[k]).collect();
        self.beta = idx.iter().map(|&k| self.beta[k]).collect();
        self
    }
}

/// Segment table for fast likelihood evaluation.
struct Layout {
    kernels: usize,
    n_processes: usize,
    n_cov: usize,
    /// Covariate vector of each chain state.
    states: Vec<Vec<f64>>,
    seg_len: Vec<f64>,
    seg_state: Vec<usize>,
    seg_jump: Vec<bool>,
    /// Offsets of events inside their segment, grouped by segment.
    seg_events: Vec<(usize, usize)>,
    event_offset: Vec<f64>,
    /// Events per (process, state).
    counts: Vec<Vec<f64>>,
    n_events: usize,
}

impl Layout {
    fn new(data: &Example2Data, kernels: usize) -> Result<Self> {
        if kernels == 0 || kernels > 8 {
            return Err(Error::InvalidArgument(format!("{kernels} kernels, need 1 to 8")));
        }
        let n_cov = data.chains.len();
        if n_cov == 0 || n_cov > 16 {
            return Err(Error::InvalidArgument(format!("{n_cov} chains")));
        }
        let n_states = 1usize << n_cov;
        let states: Vec<Vec<f64>> = (0..n_states)
            .map(|c| (0..n_cov).map(|j| if c >> j & 1 == 1 { 1.0 } else { -1.0 }).collect())
            .collect();
        let state_of = |t: f64| -> usize {
            data.chains
                .iter()
                .enumerate()
                .map(|(j, ch)| usize::from(ch.value_before(t) > 0.0) << j)
                .sum()
        };

        // breakpoints: H events (jump) and chain switches
        let mut breaks: Vec<(f64, bool)> = data.h_times.iter().map(|&t| (t, true)).collect();
        for ch in &data.chains {
            breaks.extend(ch.switch_times().iter().map(|&t| (t, false)));
        }
        breaks.retain(|b| b.0 > 0.0 && b.0 < data.horizon);
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut seg_start = vec![0.0];
        let mut seg_jump = vec![false];
        for (t, jump) in breaks {
            if *seg_start.last().expect("non-empty") == t {
                let last = seg_jump.len() - 1;
                seg_jump[last] |= jump;
            } else {
                seg_start.push(t);
                seg_jump.push(jump);
            }
        }
        let n_seg = seg_start.len();
        let seg_len: Vec<f64> = (0..n_seg)
            .map(|s| {
                let end = if s + 1 < n_seg { seg_start[s + 1] } else { data.horizon };
                end - seg_start[s]
            })
            .collect();
        // state on (start, end): value just after the segment start
        let seg_state: Vec<usize> = (0..n_seg)
            .map(|s| state_of(seg_start[s] + 0.5 * seg_len[s]))
            .collect();

        let mut events = data.events.clone();
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n_processes = data.n_processes;
        let mut counts = vec![vec![0.0; n_states]; n_processes];
        let mut seg_events = vec![(0, 0); n_seg];
        let mut event_offset = Vec::with_capacity(events.len());
        let mut s = 0;
        for (k, &(t, i)) in events.iter().enumerate() {
            if i >= n_processes {
                return Err(Error::Dimension {
                    expected: n_processes,
                    got: i + 1,
                });
            }
            // an event at an H time sees the baseline strictly before it
            while s + 1 < n_seg && seg_start[s + 1] < t {
                s += 1;
                seg_events[s].0 = k;
            }
            if seg_events[s].1 == 0 {
                seg_events[s].0 = k;
            }
            seg_events[s].1 += 1;
            event_offset.push(t - seg_start[s]);
            counts[i][state_of(t)] += 1.0;
        }
        Ok(Self {
            kernels,
            n_processes,
            n_cov,
            states,
            seg_len,
            seg_state,
            seg_jump,
            seg_events,
            event_offset,
            counts,
            n_events: events.len(),
        })
    }

    fn dim(&self) -> usize {
        2 * self.kernels + self.n_processes * self.n_cov
    }

    /// Log-likelihood alone; same recursion as [`Layout::loglik_grad`].
    fn loglik(&self, v: &[f64]) -> f64 {
        let kn = self.kernels;
        let alpha = &v[..kn];
        let beta = &v[kn..2 * kn];
        let vt = &v[2 * kn..];
        let mut r = [0.0f64; 8];
        let mut ll = 0.0;
        let mut area = vec![0.0; self.states.len()];
        for seg in 0..self.seg_len.len() {
            if self.seg_jump[seg] {
                r[..kn].iter_mut().for_each(|x| *x += 1.0);
            }
            let (first, count) = self.seg_events[seg];
            for &tau in &self.event_offset[first..first + count] {
                let mut lambda0 = 1.0;
                for k in 0..kn {
                    lambda0 += alpha[k] * r[k] * (-beta[k] * tau).exp();
                }
                ll += lambda0.ln();
            }
            let len = self.seg_len[seg];
            let c = self.seg_state[seg];
            area[c] += len;
            for k in 0..kn {
                let e = (-beta[k] * len).exp();
                area[c] += alpha[k] * r[k] * -(-beta[k] * len).exp_m1() / beta[k];
                r[k] *= e;
            }
        }
        let j = self.n_cov;
        for (c, x) in self.states.iter().enumerate() {
            for i in 0..self.n_processes {
                let score: f64 = vt[i * j..(i + 1) * j].iter().zip(x).map(|(a, b)| a * b).sum();
                ll += self.counts[i][c] * score - area[c] * score.exp();
            }
        }
        ll
    }

    /// Log-likelihood and gradient in natural parameters.
    fn loglik_grad(&self, v: &[f64]) -> (f64, Vec<f64>) {
        let kn = self.kernels;
        let alpha = &v[..kn];
        let beta = &v[kn..2 * kn];
        let vt = &v[2 * kn..];
        let n_states = self.states.len();
        let mut r = vec![0.0; kn];
        let mut s = vec![0.0; kn];
        let mut ll = 0.0;
        let mut g = vec![0.0; self.dim()];
        let mut area = vec![0.0; n_states];
        let mut d_area_a = vec![vec![0.0; kn]; n_states];
        let mut d_area_b = vec![vec![0.0; kn]; n_states];

        for seg in 0..self.seg_len.len() {
            if self.seg_jump[seg] {
                for rk in r.iter_mut() {
                    *rk += 1.0;
                }
            }
            let (first, count) = self.seg_events[seg];
            for &tau in &self.event_offset[first..first + count] {
                let mut lambda0 = 1.0;
                let mut buf_r = [0.0; 8];
                let mut buf_s = [0.0; 8];
                for k in 0..kn {
                    let e = (-beta[k] * tau).exp();
                    buf_r[k] = r[k] * e;
                    buf_s[k] = e * (s[k] + tau * r[k]);
                    lambda0 += alpha[k] * buf_r[k];
                }
                ll += lambda0.ln();
                let inv = 1.0 / lambda0;
                for k in 0..kn {
                    g[k] += buf_r[k] * inv;
                    g[kn + k] -= alpha[k] * buf_s[k] * inv;
                }
            }
            let len = self.seg_len[seg];
            let c = self.seg_state[seg];
            area[c] += len;
            for k in 0..kn {
                let b = beta[k];
                let e = (-b * len).exp();
                let x = b * len;
                let one_minus_e = -(-x).exp_m1();
                // 1 − e^{−x}(1 + x), by its series for small x
                let second = if x < 1e-4 {
                    x * x * (0.5 - x / 3.0 + x * x / 8.0)
                } else {
                    one_minus_e - x * e
                };
                let int_r = r[k] * one_minus_e / b;
                let int_s = s[k] * one_minus_e / b + r[k] * second / (b * b);
                area[c] += alpha[k] * int_r;
                d_area_a[c][k] += int_r;
                d_area_b[c][k] -= alpha[k] * int_s;
                s[k] = e * (s[k] + len * r[k]);
                r[k] *= e;
            }
        }

        let j = self.n_cov;
        for (c, x) in self.states.iter().enumerate() {
            let mut total = 0.0;
            for i in 0..self.n_processes {
                let row = &vt[i * j..(i + 1) * j];
                let score: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                let w = score.exp();
                total += w;
                ll += self.counts[i][c] * score;
                for jj in 0..j {
                    g[2 * kn + i * j + jj] += (self.counts[i][c] - area[c] * w) * x[jj];
                }
            }
            ll -= area[c] * total;
            for k in 0..kn {
                g[k] -= total * d_area_a[c][k];
                g[kn + k] -= total * d_area_b[c][k];
            }
        }
        (ll, g)
    }
}

/// Full log-likelihood of the event streams given `H` and `X`.
pub fn full_loglik(data: &Example2Data, params: &Example2Params) -> Result<f64> {
    let layout = Layout::new(data, params.alpha.len())?;
    if params.vartheta.n_processes() != layout.n_processes
        || params.vartheta.n_covariates() != layout.n_cov
    {
        return Err(Error::Dimension {
            expected: layout.n_processes * layout.n_cov,
            got: params.vartheta.as_slice().len(),
        });
    }
    Ok(layout.loglik(&params.to_vec()))
}

/// Gradient of [`full_loglik`] in the flat layout of [`Example2Params::to_vec`].
pub fn full_loglik_grad(data: &Example2Data, params: &Example2Params) -> Result<(f64, Vec<f64>)> {
    let layout = Layout::new(data, params.alpha.len())?;
    Ok(layout.loglik_grad(&params.to_vec()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedOptions {
    pub kernels: usize,
    /// Seed of the standard-normal starting point (log-scale for `α`, `β`).
    pub start_seed: u64,
    /// Gradient tolerance on the per-event objective.
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for CombinedOptions {
    fn default() -> Self {
        Self {
            kernels: 2,
            start_seed: 0,
            grad_tol: 1e-6,
            max_iter: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedFit {
    pub params: Example2Params,
    pub loglik: f64,
    pub converged: bool,
    /// First stage that failed to converge, if any.
    pub failed_stage: Option<usize>,
    pub stages: Vec<StageReport>,
    pub ratio_fit: FitResult,
    /// `ϑ` at the end of the constrained stage.
    pub constrained: Example2Params,
}

fn random_start(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Ratio dataset of the event streams: covariates are the chain values at `t−`.
pub fn ratio_dataset(data: &Example2Data) -> Result<EstimationDataset> {
    let names = (1..=data.chains.len()).map(|j| format!("x{j}")).collect();
    let spec = RatioModelSpec::new(data.n_processes, names)?;
    let mut events = data.events.clone();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let observations = events
        .iter()
        .map(|&(t, i)| EventObservation {
            session_id: 0,
            time: t,
            process_index: i,
            covariates: data.chains.iter().map(|c| c.value_before(t)).collect(),
        })
        .collect();
    EstimationDataset::continuous(spec, observations, data.horizon)
}

/// Three-stage estimator: ratio QMLE, full likelihood constrained to the
/// ratio differences, then an unconstrained polish. Stages 2 and 3 use
/// L-BFGS with analytic gradients on log `α`, log `β`.
pub fn fit_combined_example2(data: &Example2Data, opts: &CombinedOptions) -> Result<CombinedFit> {
    let layout = Layout::new(data, opts.kernels)?;
    if layout.n_events == 0 {
        return Err(Error::EmptyDataset);
    }
    let kn = opts.kernels;
    let (ni, nj) = (layout.n_processes, layout.n_cov);
    let scale = 1.0 / layout.n_events as f64;

    // stage 1
    let ds = ratio_dataset(data)?;
    let ratio_fit = fit_qmle(&ds, &FitOptions::default())?;
    let theta = ratio_fit.theta_hat.clone();

    let lbfgs_opts = LbfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
        ..LbfgsOptions::default()
    };
    let mut stages = Vec::new();

    // stage 2: z = [log α, log β, ϑ⁰], ϑ^i = ϑ⁰ + θ̂^i
    let expand = |z: &[f64]| -> Vec<f64> {
        let mut v: Vec<f64> = z[..2 * kn].iter().map(|x| x.exp()).collect();
        let base = &z[2 * kn..];
        for i in 0..ni {
            for j in 0..nj {
                v.push(base[j] + theta.get(i, j));
            }
        }
        v
    };
    let stage2 = |z: &[f64]| {
        let v = expand(z);
        let (ll, g) = layout.loglik_grad(&v);
        let mut gz: Vec<f64> = (0..2 * kn).map(|k| -g[k] * v[k] * scale).collect();
        for j in 0..nj {
            gz.push(-(0..ni).map(|i| g[2 * kn + i * nj + j]).sum::<f64>() * scale);
        }
        (-ll * scale, gz)
    };
    let z0 = random_start(2 * kn + nj, opts.start_seed);
    let r2 = lbfgs(stage2, &z0, &lbfgs_opts);
    let v2 = expand(&r2.x);
    stages.push(StageReport {
        stage: 2,
        converged: r2.converged,
        iterations: r2.iterations,
        loglik: -r2.fx / scale,
    });
    let constrained = Example2Params::from_vec(&v2, kn, ni);

    // stage 3: z = [log α, log β, ϑ]
    let stage3 = |z: &[f64]| {
        let mut v = z.to_vec();
        for x in v[..2 * kn].iter_mut() {
            *x = x.exp();
        }
        let (ll, g) = layout.loglik_grad(&v);
        let gz: Vec<f64> = (0..v.len())
            .map(|k| if k < 2 * kn { -g[k] * v[k] * scale } else { -g[k] * scale })
            .collect();
        (-ll * scale, gz)
    };
    let mut z3: Vec<f64> = v2.clone();
    for x in z3[..2 * kn].iter_mut() {
        *x = x.ln();
    }
    let r3 = lbfgs(stage3, &z3, &lbfgs_opts);
    let mut v3 = r3.x.clone();
    for x in v3[..2 * kn].iter_mut() {
        *x = x.exp();
    }
    stages.push(StageReport {
        stage: 3,
        converged: r3.converged,
        iterations: r3.iterations,
        loglik: -r3.fx / scale,
    });

    let failed_stage = if !ratio_fit.converged {
        Some(1)
    } else if !r2.converged {
        Some(2)
    } else if !r3.converged {
        Some(3)
    } else {
        None
    };
    let params = Example2Params::from_vec(&v3, kn, ni).canonical();
    Ok(CombinedFit {
        loglik: layout.loglik_grad(&params.to_vec()).0,
        params,
        converged: failed_stage.is_none(),
        failed_stage,
        stages,
        ratio_fit,
        constrained,
    })
}

/// Direct maximum likelihood over all parameters by Nelder–Mead from a
/// standard-normal start (log-scale for `α`, `β`).
pub fn fit_full_nelder_mead(
    data: &Example2Data,
    kernels: usize,
    start_seed: u64,
) -> Result<(Example2Params, bool, usize)> {
    let layout = Layout::new(data, kernels)?;
    if layout.n_events == 0 {
        return Err(Error::EmptyDataset);
    }
    let scale = 1.0 / layout.n_events as f64;
    let dim = layout.dim();
    let f = |z: &[f64]| {
        let mut v = z.to_vec();
        for x in v[..2 * kernels].iter_mut() {
            *x = x.exp();
        }
        -layout.loglik(&v) * scale
    };
    let z0 = random_start(dim, start_seed);
    let r = nelder_mead(f, &z0, &NelderMeadOptions::for_dim(dim));
    let mut v = r.x;
    for x in v[..2 * kernels].iter_mut() {
        *x = x.exp();
    }
    Ok((
        Example2Params::from_vec(&v, kernels, layout.n_processes).canonical(),
        r.converged,
        r.iterations,
    ))
}

/// `θ^i = ϑ^i − ϑ^0` implied by absolute responses.
pub fn ratio_differences(params: &Example2Params) -> ThetaVector {
    params.vartheta.to_theta()
}
