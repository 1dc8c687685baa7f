//! Ratio model of competing Cox-type intensities sharing a common baseline.
//!
//! Each process `i` in `{0, ..., n_processes - 1}` has intensity
//! `λ0(t) · exp(ϑ^i · X(t))`. Only differences `θ^i = ϑ^i − ϑ^0` are
//! identifiable once the baseline `λ0` is left unspecified, and the ratio
//!
//! ```text
//! r^i(x, θ) = exp(θ^i · x) / Σ_{i'} exp(θ^{i'} · x),     θ^0 ≡ 0
//! ```
//!
//! is the probability that the next event is of type `i`. The quasi-log
//! likelihood `H_T(θ)` sums `log r^{i_k}(X(t_k−), θ)` over observed events,
//! which is a multinomial-logit log-likelihood in `θ`.
//!
//! Everything here is a pure function of immutable inputs.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default per-coordinate parameter box.
pub const DEFAULT_BOX: (f64, f64) = (-20.0, 20.0);

/// Probabilities are floored at this value before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

/// Process set, covariate set and parameter box of a ratio model.
///
/// Process 0 is the reference; the parameter has `(n_processes − 1) · n_covariates`
/// free coordinates laid out row-major by process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioModelSpec {
    pub n_processes: usize,
    pub n_covariates: usize,
    pub covariate_names: Vec<String>,
    pub theta_box: Vec<(f64, f64)>,
}

impl RatioModelSpec {
    pub fn new(n_processes: usize, covariate_names: Vec<String>) -> Result<Self> {
        let n_covariates = covariate_names.len();
        let p = n_processes.saturating_sub(1) * n_covariates;
        let spec = Self {
            n_processes,
            n_covariates,
            covariate_names,
            theta_box: vec![DEFAULT_BOX; p],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec with generic covariate labels `x1, x2, ...`.
    pub fn unnamed(n_processes: usize, n_covariates: usize) -> Result<Self> {
        Self::new(
            n_processes,
            (1..=n_covariates).map(|j| format!("x{j}")).collect(),
        )
    }

    pub fn with_box(mut self, theta_box: Vec<(f64, f64)>) -> Result<Self> {
        self.theta_box = theta_box;
        self.validate()?;
        Ok(self)
    }

    pub fn with_uniform_box(self, lower: f64, upper: f64) -> Result<Self> {
        let p = self.dim();
        self.with_box(vec![(lower, upper); p])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_processes < 2 {
            return Err(Error::InvalidSpec(format!(
                "at least two processes required, got {}",
                self.n_processes
            )));
        }
        if self.n_covariates == 0 {
            return Err(Error::InvalidSpec("at least one covariate required".into()));
        }
        if self.covariate_names.len() != self.n_covariates {
            return Err(Error::InvalidSpec(format!(
                "{} covariate names for {} covariates",
                self.covariate_names.len(),
                self.n_covariates
            )));
        }
        if self.theta_box.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: self.theta_box.len(),
            });
        }
        for (k, &(lo, hi)) in self.theta_box.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidSpec(format!(
                    "box bound {k} is not a finite interval with lower < upper: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// Number of free parameters `p = (n_processes − 1) · n_covariates`.
    pub fn dim(&self) -> usize {
        (self.n_processes - 1) * self.n_covariates
    }

    /// Flat index of `θ^process_covariate`; `process` must be ≥ 1.
    pub fn index(&self, process: usize, covariate: usize) -> usize {
        debug_assert!(process >= 1 && process < self.n_processes);
        (process - 1) * self.n_covariates + covariate
    }

    /// Inverse of [`RatioModelSpec::index`].
    pub fn coordinate(&self, k: usize) -> (usize, usize) {
        (k / self.n_covariates + 1, k % self.n_covariates)
    }

    pub fn coordinate_label(&self, k: usize) -> String {
        let (i, j) = self.coordinate(k);
        format!("theta[{i}][{}]", self.covariate_names[j])
    }

    /// Center of the parameter box.
    pub fn box_center(&self) -> Vec<f64> {
        self.theta_box.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect()
    }
}

/// Relative responses `θ^i_j`, `i ≥ 1`. The reference row `θ^0 ≡ 0` is never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    n_covariates: usize,
    values: Vec<f64>,
}

impl ThetaVector {
    pub fn zeros(spec: &RatioModelSpec) -> Self {
        Self {
            n_covariates: spec.n_covariates,
            values: vec![0.0; spec.dim()],
        }
    }

    pub fn from_values(spec: &RatioModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.dim() {
            return Err(Error::Dimension {
                expected: spec.dim(),
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("theta entry {v}")));
        }
        Ok(Self {
            n_covariates: spec.n_covariates,
            values,
        })
    }

    /// Builds `θ` from rows `θ^1, ..., θ^{ī}`.
    pub fn from_rows(spec: &RatioModelSpec, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != spec.n_processes - 1 {
            return Err(Error::Dimension {
                expected: spec.n_processes - 1,
                got: rows.len(),
            });
        }
        Self::from_values(spec, rows.concat())
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    /// Number of non-reference processes.
    pub fn n_rows(&self) -> usize {
        if self.n_covariates == 0 {
            0
        } else {
            self.values.len() / self.n_covariates
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `θ^process_covariate`, returning zero for the reference process.
    pub fn get(&self, process: usize, covariate: usize) -> f64 {
        if process == 0 {
            0.0
        } else {
            self.values[(process - 1) * self.n_covariates + covariate]
        }
    }

    /// Row `θ^process`, `process ≥ 1`.
    pub fn row(&self, process: usize) -> &[f64] {
        let start = (process - 1) * self.n_covariates;
        &self.values[start..start + self.n_covariates]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            n_covariates: self.n_covariates,
            values,
        }
    }

    /// Clamps every coordinate into the spec's box.
    pub fn project(&self, spec: &RatioModelSpec) -> Self {
        let values = self
            .values
            .iter()
            .zip(&spec.theta_box)
            .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
            .collect();
        self.with_values(values)
    }

    pub fn max_abs_diff(&self, other: &ThetaVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Linear scores `η^i = θ^i · x` for every process, `η^0 = 0`.
    pub(crate) fn scores_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        for (i, row) in self.values.chunks_exact(self.n_covariates).enumerate() {
            out[i + 1] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

/// Absolute responses `ϑ^i_j` for every process including the reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarthetaVector {
    n_covariates: usize,
    values: Vec<f64>,
}

impl VarthetaVector {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_covariates = rows.first().map(Vec::len).unwrap_or(0);
        if rows.len() < 2 || n_covariates == 0 {
            return Err(Error::InvalidSpec(
                "vartheta needs at least two processes and one covariate".into(),
            ));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != n_covariates) {
            return Err(Error::Dimension {
                expected: n_covariates,
                got: r.len(),
            });
        }
        let values: Vec<f64> = rows.concat();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vartheta entry".into()));
        }
        Ok(Self {
            n_covariates,
            values,
        })
    }

    /// Recovers absolute responses from `θ` and a chosen reference row `ϑ^0`.
    pub fn from_theta(theta: &ThetaVector, reference_row: &[f64]) -> Result<Self> {
        if reference_row.len() != theta.n_covariates() {
            return Err(Error::Dimension {
                expected: theta.n_covariates(),
                got: reference_row.len(),
            });
        }
        let mut rows = vec![reference_row.to_vec()];
        for i in 1..=theta.n_rows() {
            rows.push(
                theta
                    .row(i)
                    .iter()
                    .zip(reference_row)
                    .map(|(t, r)| t + r)
                    .collect(),
            );
        }
        Self::from_rows(&rows)
    }

    pub fn n_processes(&self) -> usize {
        self.values.len() / self.n_covariates
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn row(&self, process: usize) -> &[f64] {
        let start = process * self.n_covariates;
        &self.values[start..start + self.n_covariates]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values
            .chunks_exact(self.n_covariates)
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Spec with the matching process and covariate counts.
    pub fn spec(&self) -> Result<RatioModelSpec> {
        RatioModelSpec::unnamed(self.n_processes(), self.n_covariates)
    }

    /// `θ^i_j = ϑ^i_j − ϑ^0_j` for `i ≥ 1`.
    pub fn to_theta(&self) -> ThetaVector {
        let reference = self.row(0);
        let values = (1..self.n_processes())
            .flat_map(|i| {
                self.row(i)
                    .iter()
                    .zip(reference)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>()
            })
            .collect();
        ThetaVector {
            n_covariates: self.n_covariates,
            values,
        }
    }

    /// Adds `shift[j]` to every process's coefficient of covariate `j`.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        let values = self
            .values
            .chunks_exact(self.n_covariates)
            .flat_map(|row| row.iter().zip(shift).map(|(a, b)| a + b).collect::<Vec<_>>())
            .collect();
        Self {
            n_covariates: self.n_covariates,
            values,
        }
    }

    /// `ϑ^i · x` for process `i`.
    pub fn score(&self, process: usize, x: &[f64]) -> f64 {
        self.row(process).iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

/// One event: its process and the covariate left limit `X(t−)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventObservation {
    pub session_id: u64,
    pub time: f64,
    pub process_index: usize,
    pub covariates: Vec<f64>,
}

/// Which asymptotic regime the horizon `T` refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// One long stationary sample; `T` is the observation length in seconds.
    Continuous,
    /// Repeated i.i.d. sessions; `T` is the number of sessions.
    Repeated,
}

/// Observed events with their covariate snapshots, grouped by session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationDataset {
    spec: RatioModelSpec,
    observations: Vec<EventObservation>,
    horizon: f64,
    mode: SampleMode,
    tied_same_process: usize,
}

impl EstimationDataset {
    /// Validates observations against `spec`.
    ///
    /// Within a session, times must be non-decreasing. Equal timestamps are
    /// kept in input order; ties between events of the same process are
    /// counted in [`EstimationDataset::tied_same_process`].
    pub fn new(
        spec: RatioModelSpec,
        observations: Vec<EventObservation>,
        horizon: f64,
        mode: SampleMode,
    ) -> Result<Self> {
        spec.validate()?;
        if !(horizon.is_finite() && horizon >= 0.0) {
            return Err(Error::InvalidArgument(format!("horizon {horizon}")));
        }
        if !observations.is_empty() && horizon <= 0.0 {
            return Err(Error::InvalidArgument(
                "non-empty dataset needs a positive horizon".into(),
            ));
        }
        let mut last: HashMap<u64, (f64, usize)> = HashMap::new();
        let mut tied_same_process = 0;
        for (k, obs) in observations.iter().enumerate() {
            if obs.process_index >= spec.n_processes {
                return Err(Error::InvalidArgument(format!(
                    "observation {k}: process {} outside 0..{}",
                    obs.process_index, spec.n_processes
                )));
            }
            if obs.covariates.len() != spec.n_covariates {
                return Err(Error::Dimension {
                    expected: spec.n_covariates,
                    got: obs.covariates.len(),
                });
            }
            if obs.covariates.iter().any(|v| !v.is_finite()) || !obs.time.is_finite() {
                return Err(Error::NonFinite(format!("observation {k}")));
            }
            if let Some(&(t, i)) = last.get(&obs.session_id) {
                if obs.time < t {
                    return Err(Error::InvalidArgument(format!(
                        "observation {k}: time {} precedes {t} in session {}",
                        obs.time, obs.session_id
                    )));
                }
                if obs.time == t && i == obs.process_index {
                    tied_same_process += 1;
                }
            }
            last.insert(obs.session_id, (obs.time, obs.process_index));
        }
        Ok(Self {
            spec,
            observations,
            horizon,
            mode,
            tied_same_process,
        })
    }

    /// Continuous-mode dataset over `[0, horizon]`.
    pub fn continuous(
        spec: RatioModelSpec,
        observations: Vec<EventObservation>,
        horizon: f64,
    ) -> Result<Self> {
        Self::new(spec, observations, horizon, SampleMode::Continuous)
    }

    /// Repeated-mode dataset; the horizon is the number of distinct sessions.
    pub fn repeated(spec: RatioModelSpec, observations: Vec<EventObservation>) -> Result<Self> {
        let mut ids: Vec<u64> = observations.iter().map(|o| o.session_id).collect();
        ids.sort_unstable();
        ids.dedup();
        let sessions = ids.len() as f64;
        Self::new(spec, observations, sessions, SampleMode::Repeated)
    }

    pub fn spec(&self) -> &RatioModelSpec {
        &self.spec
    }

    pub fn observations(&self) -> &[EventObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// `T`: seconds in continuous mode, session count in repeated mode.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn mode(&self) -> SampleMode {
        self.mode
    }

    pub fn tied_same_process(&self) -> usize {
        self.tied_same_process
    }

    pub fn event_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.spec.n_processes];
        for obs in &self.observations {
            counts[obs.process_index] += 1;
        }
        counts
    }

    /// Same observations under a different spec (e.g. a tighter box).
    pub fn with_spec(&self, spec: RatioModelSpec) -> Result<Self> {
        Self::new(spec, self.observations.clone(), self.horizon, self.mode)
    }

    /// Same observations with process labels relabelled by `perm[old] = new`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.spec.n_processes {
            return Err(Error::Dimension {
                expected: self.spec.n_processes,
                got: perm.len(),
            });
        }
        let observations = self
            .observations
            .iter()
            .map(|o| EventObservation {
                process_index: perm[o.process_index],
                ..o.clone()
            })
            .collect();
        Self::new(self.spec.clone(), observations, self.horizon, self.mode)
    }
}

/// Evaluation of `H_T` and optionally its first two derivatives.
#[derive(Clone, Debug)]
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub score: Vec<f64>,
    /// Row-major `∂²H_T`, empty unless requested.
    pub hessian: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Softmax of `scores` in place, returning `log Σ exp(scores)`.
pub(crate) fn softmax_in_place(scores: &mut [f64]) -> f64 {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
    max + total.ln()
}

pub(crate) fn evaluate(dataset: &EstimationDataset, theta: &ThetaVector, order: Order) -> Evaluation {
    let spec = &dataset.spec;
    let n_proc = spec.n_processes;
    let jbar = spec.n_covariates;
    let p = spec.dim();
    let mut loglik = 0.0;
    let mut score = if order >= Order::Gradient {
        vec![0.0; p]
    } else {
        Vec::new()
    };
    let mut hessian = if order >= Order::Hessian {
        vec![0.0; p * p]
    } else {
        Vec::new()
    };
    let mut prob = vec![0.0; n_proc];
    let mut outer = vec![0.0; jbar * jbar];
    let log_floor = PROB_FLOOR.ln();

    for obs in &dataset.observations {
        let x = &obs.covariates;
        theta.scores_into(x, &mut prob);
        let k = obs.process_index;
        let eta_k = prob[k];
        let lse = softmax_in_place(&mut prob);
        loglik += (eta_k - lse).max(log_floor);

        if order >= Order::Gradient {
            for a in 1..n_proc {
                let coef = if a == k { 1.0 - prob[a] } else { -prob[a] };
                let base = (a - 1) * jbar;
                for (j, xj) in x.iter().enumerate() {
                    score[base + j] += coef * xj;
                }
            }
        }
        if order >= Order::Hessian {
            for j in 0..jbar {
                for jp in j..jbar {
                    outer[j * jbar + jp] = x[j] * x[jp];
                }
            }
            for a in 1..n_proc {
                for b in a..n_proc {
                    let v = if a == b {
                        prob[a] * (1.0 - prob[a])
                    } else {
                        -prob[a] * prob[b]
                    };
                    if v == 0.0 {
                        continue;
                    }
                    let (ra, rb) = ((a - 1) * jbar, (b - 1) * jbar);
                    for j in 0..jbar {
                        let row = (ra + j) * p;
                        let start = if a == b { j } else { 0 };
                        for jp in start..jbar {
                            let xx = if j <= jp {
                                outer[j * jbar + jp]
                            } else {
                                outer[jp * jbar + j]
                            };
                            hessian[row + rb + jp] -= v * xx;
                        }
                    }
                }
            }
        }
    }
    if order >= Order::Hessian {
        // mirror the upper triangle
        for r in 0..p {
            for c in 0..r {
                hessian[r * p + c] = hessian[c * p + r];
            }
        }
    }
    Evaluation {
        loglik,
        score,
        hessian,
    }
}

fn check_theta(spec: &RatioModelSpec, theta: &ThetaVector) -> Result<()> {
    if theta.len() != spec.dim() || theta.n_covariates() != spec.n_covariates {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: theta.len(),
        });
    }
    Ok(())
}

/// Probabilities `r^i(x, θ)` over all processes, computed with max-subtraction.
pub fn ratio_probabilities(
    spec: &RatioModelSpec,
    theta: &ThetaVector,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_theta(spec, theta)?;
    if x.len() != spec.n_covariates {
        return Err(Error::Dimension {
            expected: spec.n_covariates,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariate vector".into()));
    }
    let mut out = vec![0.0; spec.n_processes];
    theta.scores_into(x, &mut out);
    softmax_in_place(&mut out);
    Ok(out)
}

/// Probabilities from absolute responses; equal to
/// `ratio_probabilities(ϑ.to_theta(), x)`.
pub fn vartheta_probabilities(vartheta: &VarthetaVector, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != vartheta.n_covariates() {
        return Err(Error::Dimension {
            expected: vartheta.n_covariates(),
            got: x.len(),
        });
    }
    let mut out: Vec<f64> = (0..vartheta.n_processes())
        .map(|i| vartheta.score(i, x))
        .collect();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Quasi-log-likelihood `H_T(θ) = Σ_events log r^{i}(X(t−), θ)`.
pub fn quasi_log_lik(dataset: &EstimationDataset, theta: &ThetaVector) -> Result<f64> {
    check_theta(&dataset.spec, theta)?;
    Ok(evaluate(dataset, theta, Order::Value).loglik)
}

/// Analytic gradient `∂_θ H_T`.
pub fn score(dataset: &EstimationDataset, theta: &ThetaVector) -> Result<Vec<f64>> {
    check_theta(&dataset.spec, theta)?;
    Ok(evaluate(dataset, theta, Order::Gradient).score)
}

/// Analytic Hessian `∂²_θ H_T = −Σ_events V₀(X, θ) ⊗ X X^T`.
pub fn hessian(dataset: &EstimationDataset, theta: &ThetaVector) -> Result<DMatrix<f64>> {
    check_theta(&dataset.spec, theta)?;
    let p = dataset.spec.dim();
    let eval = evaluate(dataset, theta, Order::Hessian);
    Ok(DMatrix::from_row_slice(p, p, &eval.hessian))
}

/// Observed information `Γ_T(θ) = −T⁻¹ ∂²_θ H_T(θ)`; zero for an empty dataset.
pub fn observed_information(
    dataset: &EstimationDataset,
    theta: &ThetaVector,
) -> Result<InformationTensor> {
    let h = hessian(dataset, theta)?;
    if dataset.is_empty() {
        return Ok(InformationTensor::new(DMatrix::zeros(h.nrows(), h.ncols())));
    }
    Ok(InformationTensor::new(h * (-1.0 / dataset.horizon())))
}

/// Variance matrix `V₀` of the one-draw multinomial restricted to the
/// non-reference processes: `V₀[a, b] = δ_ab π_a − π_a π_b`.
pub fn multinomial_variance(
    x: &[f64],
    theta: &ThetaVector,
    spec: &RatioModelSpec,
) -> Result<DMatrix<f64>> {
    let pi = ratio_probabilities(spec, theta, x)?;
    let n = spec.n_processes - 1;
    Ok(DMatrix::from_fn(n, n, |a, b| {
        let (pa, pb) = (pi[a + 1], pi[b + 1]);
        if a == b {
            pa - pa * pb
        } else {
            -pa * pb
        }
    }))
}

/// Closed-form asymptotic information for the two-process, one-covariate
/// model driven by a stationary exponential Hawkes baseline
/// `(mu, alpha, beta)` and a symmetric two-state `±1` covariate chain.
///
/// `vartheta0` and `vartheta1` are the absolute responses of processes 0 and 1,
/// so `θ* = vartheta1 − vartheta0`, and
///
/// ```text
/// Γ = μ / (1 − α/β) · e^{θ*} / (1 + e^{θ*})² · [cosh(ϑ⁰) + cosh(ϑ¹)]
/// ```
///
/// The bracket is `E_x[Σ_i exp(ϑ^i x)]` over the uniform law on `x = ±1`.
pub fn gamma_example1(
    mu: f64,
    alpha: f64,
    beta: f64,
    vartheta0: f64,
    vartheta1: f64,
) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    if !(alpha >= 0.0 && beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be ≥ 0 and beta > 0, got alpha={alpha}, beta={beta}"
        )));
    }
    if alpha >= beta {
        return Err(Error::Stationarity(format!(
            "alpha/beta = {} must be < 1",
            alpha / beta
        )));
    }
    let theta = vartheta1 - vartheta0;
    // e^θ/(1+e^θ)² written symmetrically to avoid overflow
    let logistic_var = 1.0 / (2.0 + 2.0 * theta.abs().min(700.0).cosh());
    let mean_baseline = mu / (1.0 - alpha / beta);
    Ok(mean_baseline * logistic_var * (vartheta0.cosh() + vartheta1.cosh()))
}

/// Symmetric positive semidefinite `p × p` information matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct InformationTensor {
    matrix: DMatrix<f64>,
}

impl InformationTensor {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn identity(p: usize) -> Self {
        Self::new(DMatrix::identity(p, p))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = &self.matrix;
        (0..m.nrows()).all(|r| (0..r).all(|c| (m[(r, c)] - m[(c, r)]).abs() <= tol))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.dim() == 0 {
            return Vec::new();
        }
        let sym = (&self.matrix + self.matrix.transpose()) * 0.5;
        let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().cloned().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().cloned().unwrap_or(0.0)
    }

    /// PSD up to `−1e-8 · ‖Γ‖` on the smallest eigenvalue.
    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue() >= -1e-8 * self.matrix.norm().max(1e-300)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.matrix
            .row_iter()
            .map(|r| r.iter().cloned().collect())
            .collect()
    }
}

impl Serialize for InformationTensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for InformationTensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(deserializer)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("information matrix must be square"));
        }
        Ok(Self::new(DMatrix::from_row_slice(n, n, &rows.concat())))
    }
}
