//! Synthetic data: two-state chains, Cox ratio event streams over a shared
//! baseline, the packaged numerical examples and synthetic order books.

mod lob;

pub use lob::{
    synth_lob_stream, BookDynamics, Category, MarkModel, SynthLobConfig, SynthLobOutput,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hawkes::Example2Params;
use crate::ratio::{
    vartheta_probabilities, EstimationDataset, EventObservation, RatioModelSpec, ThetaVector,
    VarthetaVector,
};

/// Independent random stream derived from a run seed and a stream name.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    // FNV-1a of the name selects the ChaCha stream
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng
}

/// Symmetric Markov chain on `{−1, +1}` switching at rate `rate`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStateChain {
    pub rate: f64,
}

/// Right-continuous piecewise-constant path; piece `k` holds `values[k]` on
/// `[times[k], times[k+1])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewisePath {
    pub fn constant(value: f64) -> Self {
        Self {
            times: vec![0.0],
            values: vec![value],
        }
    }

    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::InvalidArgument(
                "path needs matching non-empty times and values".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("path times must increase".into()));
        }
        Ok(Self { times, values })
    }

    /// `X(t)`.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        self.values[k.saturating_sub(1)]
    }

    /// Left limit `X(t−)`.
    pub fn value_before(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        self.values[k.saturating_sub(1)]
    }

    pub fn switch_times(&self) -> &[f64] {
        &self.times[1..]
    }

    pub fn n_switches(&self) -> usize {
        self.times.len() - 1
    }

    /// Time spent at `value` on `[0, horizon]`.
    pub fn occupation(&self, value: f64, horizon: f64) -> f64 {
        (0..self.times.len())
            .filter(|&k| self.values[k] == value)
            .map(|k| {
                let end = self.times.get(k + 1).copied().unwrap_or(horizon).min(horizon);
                (end - self.times[k]).max(0.0)
            })
            .sum()
    }
}

/// Chain path on `[0, horizon]` started from the uniform law.
pub fn simulate_chain<R: Rng>(chain: &TwoStateChain, horizon: f64, rng: &mut R) -> Result<PiecewisePath> {
    if !(chain.rate > 0.0) {
        return Err(Error::InvalidArgument("chain rate must be positive".into()));
    }
    let mut value = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut times = vec![0.0];
    let mut values = vec![value];
    let mut t = 0.0;
    loop {
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / chain.rate;
        if t >= horizon {
            break;
        }
        value = -value;
        times.push(t);
        values.push(value);
    }
    Ok(PiecewisePath { times, values })
}

/// Common baseline intensity `λ₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Intensity of an observed self-exciting process
    /// `μ + Σ_k α_k Σ_{s<t} e^{-β_k (t-s)}`.
    Hawkes {
        mu: f64,
        alpha: Vec<f64>,
        beta: Vec<f64>,
    },
    Constant {
        rate: f64,
    },
    Piecewise(PiecewisePath),
}

impl Baseline {
    fn validate(&self) -> Result<()> {
        match self {
            Baseline::Hawkes { mu, alpha, beta } => {
                if alpha.len() != beta.len() {
                    return Err(Error::Dimension {
                        expected: alpha.len(),
                        got: beta.len(),
                    });
                }
                if !(*mu > 0.0) || alpha.iter().any(|a| !(*a >= 0.0)) || beta.iter().any(|b| !(*b > 0.0)) {
                    return Err(Error::InvalidArgument("invalid Hawkes baseline".into()));
                }
                let ratio: f64 = alpha.iter().zip(beta).map(|(a, b)| a / b).sum();
                if ratio >= 1.0 {
                    return Err(Error::Stationarity(format!("branching ratio {ratio} >= 1")));
                }
                Ok(())
            }
            Baseline::Constant { rate } => {
                if *rate > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("constant baseline must be positive".into()))
                }
            }
            Baseline::Piecewise(p) => {
                if p.values.iter().all(|v| *v >= 0.0) {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("baseline path must be non-negative".into()))
                }
            }
        }
    }
}

/// Scenario for [`simulate_cox_ratio`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub baseline: Baseline,
    pub vartheta: VarthetaVector,
    pub chains: Vec<TwoStateChain>,
    pub horizon: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Single chain, two processes with responses `(−0.75, 0.75)`, Hawkes
    /// baseline `μ = 0.5, α = 1, β = 2`, chain rate 0.5.
    pub fn example1(horizon: f64, seed: u64) -> Self {
        Self {
            baseline: Baseline::Hawkes {
                mu: 0.5,
                alpha: vec![1.0],
                beta: vec![2.0],
            },
            vartheta: VarthetaVector::from_rows(&[vec![-0.75], vec![0.75]]).expect("valid"),
            chains: vec![TwoStateChain { rate: 0.5 }],
            horizon,
            seed,
        }
    }

    /// Two chains, three processes, two-kernel baseline with unit base rate.
    pub fn example2(params: &Example2Params, horizon: f64, seed: u64) -> Self {
        Self {
            baseline: Baseline::Hawkes {
                mu: 1.0,
                alpha: params.alpha.clone(),
                beta: params.beta.clone(),
            },
            vartheta: params.vartheta.clone(),
            chains: vec![TwoStateChain { rate: 0.5 }; 2],
            horizon,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.baseline.validate()?;
        if self.vartheta.n_covariates() != self.chains.len() {
            return Err(Error::Dimension {
                expected: self.chains.len(),
                got: self.vartheta.n_covariates(),
            });
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidArgument("horizon must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Simulated marked stream with its covariate paths and ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxSimulation {
    /// `(time, process)` in time order.
    pub events: Vec<(f64, usize)>,
    pub chains: Vec<PiecewisePath>,
    /// Events of the baseline-driving process (Hawkes baselines only).
    pub baseline_events: Vec<f64>,
    pub vartheta: VarthetaVector,
    pub theta_true: ThetaVector,
    pub horizon: f64,
}

impl CoxSimulation {
    /// Ratio dataset with covariates `X(t−)`, process 0 as reference.
    pub fn ratio_dataset(&self) -> Result<EstimationDataset> {
        let names = (1..=self.chains.len()).map(|j| format!("x{j}")).collect();
        let spec = RatioModelSpec::new(self.vartheta.n_processes(), names)?;
        let observations = self
            .events
            .iter()
            .map(|&(t, i)| EventObservation {
                session_id: 0,
                time: t,
                process_index: i,
                covariates: self.chains.iter().map(|c| c.value_before(t)).collect(),
            })
            .collect();
        EstimationDataset::continuous(spec, observations, self.horizon)
    }

    pub fn event_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.vartheta.n_processes()];
        for &(_, i) in &self.events {
            c[i] += 1;
        }
        c
    }
}

/// Simulates `λ^i(t) = λ₀(t) exp(ϑ^i · X(t))` by thinning the total process
/// `λ₀(t) Σ_i exp(ϑ^i · X(t))` and drawing marks from the ratio probabilities
/// at `X(t−)`. For a Hawkes baseline the driving process is simulated jointly.
pub fn simulate_cox_ratio(config: &ScenarioConfig) -> Result<CoxSimulation> {
    config.validate()?;
    let horizon = config.horizon;
    let chains = config
        .chains
        .iter()
        .enumerate()
        .map(|(j, c)| simulate_chain(c, horizon, &mut substream(config.seed, "chain", j as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = substream(config.seed, "events", 0);
    let vt = &config.vartheta;
    let weight_of = |x: &[f64]| -> f64 { (0..vt.n_processes()).map(|i| vt.score(i, x).exp()).sum() };
    // bound on Σ_i exp(ϑ^i·x) over all chain states
    let j = chains.len();
    let max_weight = (0..1usize << j)
        .map(|c| {
            let x: Vec<f64> = (0..j).map(|k| if c >> k & 1 == 1 { 1.0 } else { -1.0 }).collect();
            weight_of(&x)
        })
        .fold(0.0, f64::max)
        .max(if j == 0 { weight_of(&[]) } else { 0.0 });

    let mut events = Vec::new();
    let mut baseline_events = Vec::new();
    let covariates_at = |t: f64| -> Vec<f64> { chains.iter().map(|c| c.value_at(t)).collect() };

    let mut t = 0.0;
    match &config.baseline {
        Baseline::Hawkes { mu, alpha, beta } => {
            let mut r = vec![0.0; alpha.len()];
            let lambda0 = |r: &[f64]| mu + alpha.iter().zip(r).map(|(a, x)| a * x).sum::<f64>();
            loop {
                let bound = lambda0(&r) * (1.0 + max_weight);
                let u: f64 = rng.random();
                let dt = -(1.0 - u).ln() / bound;
                t += dt;
                if t > horizon {
                    break;
                }
                for (rk, b) in r.iter_mut().zip(beta) {
                    *rk *= (-b * dt).exp();
                }
                let l0 = lambda0(&r);
                let x = covariates_at(t);
                let w = weight_of(&x);
                let v: f64 = rng.random::<f64>() * bound;
                debug_assert!(l0 * (1.0 + w) <= bound * (1.0 + 1e-12));
                if v < l0 {
                    baseline_events.push(t);
                    for rk in r.iter_mut() {
                        *rk += 1.0;
                    }
                } else if v < l0 * (1.0 + w) {
                    events.push((t, draw_mark(vt, &x, &mut rng)?));
                }
            }
        }
        Baseline::Constant { rate } => loop {
            let bound = rate * max_weight;
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / bound;
            if t > horizon {
                break;
            }
            let x = covariates_at(t);
            if rng.random::<f64>() * bound < rate * weight_of(&x) {
                events.push((t, draw_mark(vt, &x, &mut rng)?));
            }
        },
        Baseline::Piecewise(path) => {
            let peak = path.values.iter().cloned().fold(0.0, f64::max);
            if peak > 0.0 {
                loop {
                    let bound = peak * max_weight;
                    let u: f64 = rng.random();
                    t += -(1.0 - u).ln() / bound;
                    if t > horizon {
                        break;
                    }
                    let x = covariates_at(t);
                    if rng.random::<f64>() * bound < path.value_at(t) * weight_of(&x) {
                        events.push((t, draw_mark(vt, &x, &mut rng)?));
                    }
                }
            }
        }
    }
    Ok(CoxSimulation {
        events,
        chains,
        baseline_events,
        vartheta: vt.clone(),
        theta_true: vt.to_theta(),
        horizon,
    })
}

fn draw_mark<R: Rng>(vt: &VarthetaVector, x: &[f64], rng: &mut R) -> Result<usize> {
    let probs = vartheta_probabilities(vt, x)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(probs.len() - 1)
}

/// Observed data of the two-kernel example: driving-process times, marked
/// events and chain paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example2Data {
    pub h_times: Vec<f64>,
    pub events: Vec<(f64, usize)>,
    pub chains: Vec<PiecewisePath>,
    pub horizon: f64,
    pub n_processes: usize,
}

pub fn simulate_example2(params: &Example2Params, horizon: f64, seed: u64) -> Result<Example2Data> {
    let sim = simulate_cox_ratio(&ScenarioConfig::example2(params, horizon, seed))?;
    Ok(Example2Data {
        h_times: sim.baseline_events,
        events: sim.events,
        chains: sim.chains,
        horizon,
        n_processes: params.vartheta.n_processes(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_lookup() {
        let p = PiecewisePath::new(vec![0.0, 1.0, 2.5], vec![1.0, -1.0, 1.0]).unwrap();
        assert_eq!(p.value_at(1.0), -1.0);
        assert_eq!(p.value_before(1.0), 1.0);
        assert_eq!(p.value_before(0.0), 1.0);
        assert_eq!(p.value_at(3.0), 1.0);
        assert!((p.occupation(1.0, 4.0) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn chain_is_seeded_and_alternates() {
        let c = TwoStateChain { rate: 0.5 };
        let a = simulate_chain(&c, 100.0, &mut substream(1, "chain", 0)).unwrap();
        let b = simulate_chain(&c, 100.0, &mut substream(1, "chain", 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.values.windows(2).all(|w| w[0] == -w[1]));
        assert!(simulate_chain(&TwoStateChain { rate: 0.0 }, 1.0, &mut substream(1, "c", 0)).is_err());
    }

    #[test]
    fn uniform_marks_under_zero_responses() {
        let cfg = ScenarioConfig {
            baseline: Baseline::Constant { rate: 1.0 },
            vartheta: VarthetaVector::from_rows(&[vec![0.0], vec![0.0]]).unwrap(),
            chains: vec![TwoStateChain { rate: 0.5 }],
            horizon: 10_000.0,
            seed: 4,
        };
        let sim = simulate_cox_ratio(&cfg).unwrap();
        let c = sim.event_counts();
        // each process has rate 1
        for n in c {
            assert!((n as f64 - 10_000.0).abs() < 3.0 * 100.0, "{n}");
        }
    }

    #[test]
    fn zero_horizon_is_empty() {
        let sim = simulate_cox_ratio(&ScenarioConfig::example1(0.0, 1)).unwrap();
        assert!(sim.events.is_empty());
        assert_eq!(sim.ratio_dataset().unwrap().len(), 0);
    }

    #[test]
    fn explosive_baseline_refused() {
        let mut cfg = ScenarioConfig::example1(10.0, 1);
        cfg.baseline = Baseline::Hawkes {
            mu: 0.5,
            alpha: vec![3.0],
            beta: vec![2.0],
        };
        assert!(matches!(simulate_cox_ratio(&cfg), Err(Error::Stationarity(_))));
    }

    #[test]
    fn example1_event_count_matches_mean_rate() {
        // E[λ₀] = 1 and E[e^{0.75X} + e^{-0.75X}] = 2 cosh 0.75
        let expected = 1000.0 * 2.0 * 0.75f64.cosh();
        let mean: f64 = (0..20)
            .map(|s| simulate_cox_ratio(&ScenarioConfig::example1(1000.0, s)).unwrap().events.len() as f64)
            .sum::<f64>()
            / 20.0;
        assert!((mean / expected - 1.0).abs() < 0.08, "{mean} vs {expected}");
    }
}
