//! Synthetic order books whose event marks follow a known ratio model.
//!
//! A toy book of ten levels per side evolves under market, limit and cancel
//! orders. Each event's category is drawn from base weights, and the
//! categories of process `p` of the truth recipe are tilted by
//! `exp(θ^p · x)` with `x` read from the pre-event snapshot. Because base
//! weights are constant, the conditional law of the recipe's processes is
//! exactly the ratio model with intercepts shifted by `log(W_p / W_0)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::substream;
use crate::error::{Error, Result};
use crate::hawkes::HawkesParams;
use crate::lob::{
    BookEvent, BookState, Calibration, Covariate, EventKind, ModelRecipe, Primitives,
    SessionStream, LEVELS,
};

/// Event kind at a level; market orders always sit at level 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub kind: EventKind,
    pub level: u8,
}

/// Every category the generator can emit: two market and forty limit or
/// cancel categories.
pub fn categories() -> Vec<Category> {
    let mut v = vec![
        Category { kind: EventKind::MA, level: 1 },
        Category { kind: EventKind::MB, level: 1 },
    ];
    for kind in [EventKind::LA, EventKind::LB, EventKind::CA, EventKind::CB] {
        v.extend((1..=LEVELS as u8).map(|level| Category { kind, level }));
    }
    v
}

/// Base category weights: level `l` limit orders weigh
/// `limit · level_decay^(l−1)`, cancels likewise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkModel {
    pub market: f64,
    pub limit: f64,
    pub cancel: f64,
    pub level_decay: f64,
}

impl Default for MarkModel {
    fn default() -> Self {
        Self {
            market: 3.0,
            limit: 2.0,
            cancel: 2.0,
            level_decay: 0.8,
        }
    }
}

impl MarkModel {
    pub fn weight(&self, c: &Category) -> f64 {
        let decay = self.level_decay.powi(i32::from(c.level) - 1);
        match c.kind {
            EventKind::MA | EventKind::MB => self.market,
            EventKind::LA | EventKind::LB => self.limit * decay,
            EventKind::CA | EventKind::CB => self.cancel * decay,
        }
    }

    fn validate(&self) -> Result<()> {
        for v in [self.market, self.limit, self.cancel, self.level_decay] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("mark weight {v}")));
            }
        }
        Ok(())
    }
}

/// Event timing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BookDynamics {
    /// Homogeneous Poisson arrivals; every mark comes from the tilted weights.
    Poisson { rate: f64 },
    /// Limit and cancel orders arrive at `background_rate`; ask and bid market
    /// orders have intensities `λ_A(t)·2σ(f)` and `λ_B(t)·2σ(−f)` where
    /// `λ_A`, `λ_B` are self-exciting and `f = θ·x` is the state signal.
    TradeFlow {
        background_rate: f64,
        hawkes_bid: HawkesParams,
        hawkes_ask: HawkesParams,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthLobConfig {
    pub n_sessions: usize,
    pub events_per_session: usize,
    /// Recipe whose processes get tilted. For trade flow it must be the
    /// `{MB, MA}` pair and supplies the state signal.
    pub recipe: String,
    /// Rows for processes `1..` of the recipe.
    pub theta: Vec<Vec<f64>>,
    pub marks: MarkModel,
    pub dynamics: BookDynamics,
    pub trade_size: u64,
    /// Chance a level-1 limit order improves the quote, per tick of spread
    /// beyond one.
    pub inside_spread_prob: f64,
    /// Spread mean used for the spread category.
    pub spread_reference: f64,
    pub seed: u64,
}

impl SynthLobConfig {
    pub fn new(recipe: &str, theta: Vec<Vec<f64>>, n_sessions: usize, events_per_session: usize, seed: u64) -> Self {
        Self {
            n_sessions,
            events_per_session,
            recipe: recipe.into(),
            theta,
            marks: MarkModel::default(),
            dynamics: BookDynamics::Poisson { rate: 10.0 },
            trade_size: 100,
            inside_spread_prob: 0.5,
            spread_reference: 2.5,
            seed,
        }
    }

    pub fn calibration(&self) -> Calibration {
        let (hawkes_bid, hawkes_ask) = match &self.dynamics {
            BookDynamics::TradeFlow { hawkes_bid, hawkes_ask, .. } => {
                (Some(hawkes_bid.clone()), Some(hawkes_ask.clone()))
            }
            BookDynamics::Poisson { .. } => (None, None),
        };
        Calibration {
            spread_mean_ticks: Some(self.spread_reference),
            median_trade_size: Some(self.trade_size as f64),
            hawkes_bid,
            hawkes_ask,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthLobOutput {
    pub sessions: Vec<SessionStream>,
    /// Recipe under which the marks follow a ratio model exactly.
    pub truth: ModelRecipe,
    /// Effective parameters for `truth`, rows for processes `1..`.
    pub theta_true: Vec<Vec<f64>>,
    /// Calibration the generator used; pass it to dataset construction.
    pub calibration: Calibration,
}

struct Book {
    state: BookState,
    trade_size: u64,
    inside: f64,
}

impl Book {
    fn initial_state(rng: &mut ChaCha8Rng, trade_size: u64) -> BookState {
        let mut q = || trade_size * rng.random_range(3..=10u64);
        let q_bid = std::array::from_fn(|_| q());
        let q_ask = std::array::from_fn(|_| q());
        BookState {
            q_bid,
            q_ask,
            spread_ticks: 1 + rng.random_range(0..2u32),
            last_trade_sign: if rng.random_bool(0.5) { 1 } else { -1 },
            last_price_move: 0,
        }
    }

    fn refill(&self, rng: &mut ChaCha8Rng) -> u64 {
        self.trade_size * rng.random_range(1..=8u64)
    }

    /// Drops emptied best levels; each one widens the spread by a tick.
    fn shift_out(&mut self, ask: bool, rng: &mut ChaCha8Rng) {
        loop {
            let q = if ask { &self.state.q_ask } else { &self.state.q_bid };
            if q[0] > 0 {
                break;
            }
            let fresh = self.refill(rng);
            let q = if ask { &mut self.state.q_ask } else { &mut self.state.q_bid };
            q.rotate_left(1);
            q[LEVELS - 1] = fresh;
            self.state.spread_ticks += 1;
            self.state.last_price_move = if ask { 1 } else { -1 };
        }
    }

    fn apply(&mut self, c: Category, rng: &mut ChaCha8Rng) -> u64 {
        let ask = c.kind.side() == crate::lob::Side::Ask;
        let l = usize::from(c.level) - 1;
        let ts = self.trade_size;
        match c.kind {
            EventKind::MA | EventKind::MB => {
                let q = if ask { &mut self.state.q_ask[0] } else { &mut self.state.q_bid[0] };
                *q = q.saturating_sub(ts);
                self.state.last_trade_sign = if ask { 1 } else { -1 };
                self.shift_out(ask, rng);
                ts
            }
            EventKind::LA | EventKind::LB => {
                let size = ts * rng.random_range(1..=4u64);
                // each extra tick of spread is another chance to improve the quote
                let gap = self.state.spread_ticks.saturating_sub(1) as i32;
                let improve = 1.0 - (1.0 - self.inside).powi(gap);
                if l == 0 && gap > 0 && rng.random_bool(improve) {
                    let q = if ask { &mut self.state.q_ask } else { &mut self.state.q_bid };
                    q.rotate_right(1);
                    q[0] = size;
                    self.state.spread_ticks -= 1;
                    self.state.last_price_move = if ask { -1 } else { 1 };
                } else {
                    let q = if ask { &mut self.state.q_ask[l] } else { &mut self.state.q_bid[l] };
                    *q += size;
                }
                size
            }
            EventKind::CA | EventKind::CB => {
                let frac: f64 = rng.random_range(0.1..0.5);
                let q = if ask { &mut self.state.q_ask[l] } else { &mut self.state.q_bid[l] };
                let size = ((*q as f64 * frac).round() as u64).max(ts).min(*q);
                *q -= size;
                if l == 0 {
                    self.shift_out(ask, rng);
                }
                size
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Generates sessions; identical configs give identical output.
pub fn synth_lob_stream(config: &SynthLobConfig) -> Result<SynthLobOutput> {
    config.marks.validate()?;
    if config.trade_size == 0 {
        return Err(Error::InvalidArgument("trade_size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&config.inside_spread_prob) {
        return Err(Error::InvalidArgument("inside_spread_prob outside [0, 1]".into()));
    }
    if !(config.spread_reference.is_finite() && config.spread_reference > 0.0) {
        return Err(Error::InvalidArgument("spread_reference must be positive".into()));
    }
    let recipe = ModelRecipe::named(&config.recipe)?;
    let k = recipe.covariates.len();
    if config.theta.len() + 1 != recipe.processes.len() || config.theta.iter().any(|r| r.len() != k) {
        return Err(Error::Dimension {
            expected: (recipe.processes.len() - 1) * k,
            got: config.theta.iter().map(Vec::len).sum(),
        });
    }
    if config.theta.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("theta".into()));
    }
    if recipe.covariates[0] != Covariate::Intercept {
        return Err(Error::InvalidSpec("truth recipe must start with an intercept".into()));
    }
    if recipe.uses_hawkes() {
        return Err(Error::InvalidSpec(
            "history covariates come from trade-flow dynamics, not from the tilt".into(),
        ));
    }
    let calib = config.calibration();
    calib.validate()?;
    let cats = categories();
    let base: Vec<f64> = cats.iter().map(|c| config.marks.weight(c)).collect();
    let proc_of: Vec<Option<usize>> = cats
        .iter()
        .map(|c| recipe.processes.iter().position(|p| p.contains(c.kind, c.level)))
        .collect();

    let (truth, theta_true) = match &config.dynamics {
        BookDynamics::Poisson { rate } => {
            if !(rate.is_finite() && *rate > 0.0) {
                return Err(Error::InvalidArgument(format!("rate {rate}")));
            }
            let mass = |p: usize| -> f64 {
                (0..cats.len()).filter(|&c| proc_of[c] == Some(p)).map(|c| base[c]).sum()
            };
            let w0 = mass(0);
            let mut rows = config.theta.clone();
            for (p, row) in rows.iter_mut().enumerate() {
                row[0] += (mass(p + 1) / w0).ln();
            }
            (recipe.clone(), rows)
        }
        BookDynamics::TradeFlow { background_rate, hawkes_bid, hawkes_ask } => {
            if !(background_rate.is_finite() && *background_rate > 0.0) {
                return Err(Error::InvalidArgument(format!("background_rate {background_rate}")));
            }
            if recipe.processes.len() != 2
                || recipe.processes[0].kinds != [EventKind::MB]
                || recipe.processes[1].kinds != [EventKind::MA]
            {
                return Err(Error::InvalidSpec("trade flow needs the {MB, MA} pair".into()));
            }
            for p in [hawkes_bid, hawkes_ask] {
                if p.dims() != 1 {
                    return Err(Error::Dimension { expected: 1, got: p.dims() });
                }
            }
            let mut covs = vec![Covariate::Intercept, Covariate::HawkesBid, Covariate::HawkesAsk];
            covs.extend(recipe.covariates[1..].iter().cloned());
            let name = if recipe.name == "imbalance_last_spread" {
                "hawkes_history_state".to_string()
            } else {
                format!("hawkes_{}", recipe.name)
            };
            let truth = ModelRecipe::new(&name, recipe.processes.clone(), covs)?;
            let s = &config.theta[0];
            let mut row = vec![s[0], -1.0, 1.0];
            row.extend_from_slice(&s[1..]);
            (truth, vec![row])
        }
    };

    let mut sessions = Vec::with_capacity(config.n_sessions);
    for sid in 0..config.n_sessions {
        let mut rng = substream(config.seed, "synth_lob", sid as u64);
        let mut book = Book {
            state: Book::initial_state(&mut rng, config.trade_size),
            trade_size: config.trade_size,
            inside: config.inside_spread_prob,
        };
        let events = match &config.dynamics {
            BookDynamics::Poisson { rate } => poisson_session(
                config, &recipe, &calib, &base, &proc_of, &cats, *rate, &mut book, &mut rng, sid,
            )?,
            BookDynamics::TradeFlow { background_rate, hawkes_bid, hawkes_ask } => trade_flow_session(
                config, &recipe, &calib, &base, &cats, *background_rate, hawkes_bid, hawkes_ask,
                &mut book, &mut rng, sid,
            )?,
        };
        sessions.push(SessionStream {
            session_id: sid as u64,
            events,
        });
    }
    Ok(SynthLobOutput {
        sessions,
        truth,
        theta_true,
        calibration: calib,
    })
}

fn pick(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

fn push_event(events: &mut Vec<BookEvent>, sid: usize, time: f64, c: Category, size: u64, state: BookState) {
    events.push(BookEvent {
        session_id: sid as u64,
        time,
        kind: c.kind,
        level: c.level,
        size,
        state,
    });
}

#[allow(clippy::too_many_arguments)]
fn poisson_session(
    config: &SynthLobConfig,
    recipe: &ModelRecipe,
    calib: &Calibration,
    base: &[f64],
    proc_of: &[Option<usize>],
    cats: &[Category],
    rate: f64,
    book: &mut Book,
    rng: &mut ChaCha8Rng,
    sid: usize,
) -> Result<Vec<BookEvent>> {
    let exp = Exp::new(rate).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut events = Vec::with_capacity(config.events_per_session);
    let mut t = 0.0;
    let mut w = vec![0.0; cats.len()];
    let mut tilt = vec![1.0; recipe.processes.len()];
    for _ in 0..config.events_per_session {
        t += exp.sample(rng);
        let p = Primitives::compute(&book.state, calib, None);
        let x = recipe.covariate_row(&p);
        for (j, row) in config.theta.iter().enumerate() {
            let s: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
            tilt[j + 1] = s.exp();
        }
        for c in 0..cats.len() {
            w[c] = base[c] * proc_of[c].map_or(1.0, |p| tilt[p]);
        }
        let c = cats[pick(&w, rng)];
        let size = book.apply(c, rng);
        push_event(&mut events, sid, t, c, size, book.state);
    }
    Ok(events)
}

#[allow(clippy::too_many_arguments)]
fn trade_flow_session(
    config: &SynthLobConfig,
    recipe: &ModelRecipe,
    calib: &Calibration,
    base: &[f64],
    cats: &[Category],
    background_rate: f64,
    hawkes_bid: &HawkesParams,
    hawkes_ask: &HawkesParams,
    book: &mut Book,
    rng: &mut ChaCha8Rng,
    sid: usize,
) -> Result<Vec<BookEvent>> {
    // background categories exclude the two market orders at indices 0 and 1
    let bg: Vec<f64> = base[2..].to_vec();
    let (mu_b, a_b, b_b) = (hawkes_bid.mu[0], hawkes_bid.alpha[0][0], hawkes_bid.beta[0][0]);
    let (mu_a, a_a, b_a) = (hawkes_ask.mu[0], hawkes_ask.alpha[0][0], hawkes_ask.beta[0][0]);
    let (mut r_b, mut r_a) = (0.0f64, 0.0f64);
    let mut events = Vec::with_capacity(config.events_per_session);
    let mut t = 0.0;
    let signal = &config.theta[0];
    while events.len() < config.events_per_session {
        let p = Primitives::compute(&book.state, calib, None);
        let x = recipe.covariate_row(&p);
        let f: f64 = signal.iter().zip(&x).map(|(a, b)| a * b).sum();
        let (ga, gb) = (2.0 * sigmoid(f), 2.0 * sigmoid(-f));
        // intensities only decay until the next accepted event
        let bound = background_rate + (mu_a + a_a * r_a) * ga + (mu_b + a_b * r_b) * gb;
        loop {
            let w = Exp::new(bound).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(rng);
            t += w;
            r_a *= (-b_a * w).exp();
            r_b *= (-b_b * w).exp();
            let l_a = (mu_a + a_a * r_a) * ga;
            let l_b = (mu_b + a_b * r_b) * gb;
            let total = background_rate + l_a + l_b;
            assert!(total <= bound * (1.0 + 1e-12), "thinning ratio above one");
            let u = rng.random::<f64>() * bound;
            if u >= total {
                continue;
            }
            let c = if u < l_a {
                r_a += 1.0;
                cats[0]
            } else if u < l_a + l_b {
                r_b += 1.0;
                cats[1]
            } else {
                cats[2 + pick(&bg, rng)]
            };
            let size = book.apply(c, rng);
            push_event(&mut events, sid, t, c, size, book.state);
            break;
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::{parse_sessions, write_sessions};

    #[test]
    fn zero_events_give_header_only() {
        let cfg = SynthLobConfig::new("imbalance", vec![vec![0.0, 1.0]], 2, 0, 1);
        let out = synth_lob_stream(&cfg).unwrap();
        let mut buf = Vec::new();
        write_sessions(&out.sessions, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("session_id,time,kind"));
    }

    #[test]
    fn seed_stable_and_round_trips() {
        let cfg = SynthLobConfig::new("imbalance_last_spread", vec![vec![0.1, 1.5, 0.5, -0.3]], 2, 500, 9);
        let a = synth_lob_stream(&cfg).unwrap();
        let b = synth_lob_stream(&cfg).unwrap();
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        write_sessions(&a.sessions, &mut fa).unwrap();
        write_sessions(&b.sessions, &mut fb).unwrap();
        assert_eq!(fa, fb);
        let parsed = parse_sessions(fa.as_slice()).unwrap();
        assert_eq!(parsed, a.sessions);
    }

    #[test]
    fn book_invariants_hold() {
        let cfg = SynthLobConfig::new("spread", vec![vec![-1.0, 1.0, 0.0], vec![0.0, 0.5, 0.0]], 1, 5000, 3);
        let out = synth_lob_stream(&cfg).unwrap();
        let ev = &out.sessions[0].events;
        assert!(ev.windows(2).all(|w| w[0].time <= w[1].time));
        for e in ev {
            assert!(e.state.q_bid[0] > 0 && e.state.q_ask[0] > 0);
            assert!(e.state.spread_ticks >= 1);
        }
        let spreads: std::collections::BTreeSet<u32> = ev.iter().map(|e| e.state.spread_ticks).collect();
        assert!(spreads.len() >= 3, "{spreads:?}");
    }

    #[test]
    fn intercept_shift_matches_mass() {
        let cfg = SynthLobConfig::new("imbalance", vec![vec![0.0, 1.0]], 1, 1, 3);
        let out = synth_lob_stream(&cfg).unwrap();
        assert_eq!(out.theta_true, vec![vec![0.0, 1.0]]);
        let q = SynthLobConfig::new("queue_ask_2", vec![vec![0.0, 0.0, 0.0]], 1, 1, 3);
        let out = synth_lob_stream(&q).unwrap();
        assert!((out.theta_true[0][0] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn trade_flow_truth_layout() {
        let mut cfg = SynthLobConfig::new("imbalance_last_spread", vec![vec![0.0, 1.0, 0.5, 0.2]], 1, 300, 5);
        cfg.dynamics = BookDynamics::TradeFlow {
            background_rate: 2.0,
            hawkes_bid: HawkesParams::univariate(0.3, 1.0, 2.0).unwrap(),
            hawkes_ask: HawkesParams::univariate(0.3, 1.0, 2.0).unwrap(),
        };
        let out = synth_lob_stream(&cfg).unwrap();
        assert_eq!(out.truth.name, "hawkes_history_state");
        assert_eq!(out.theta_true, vec![vec![0.0, -1.0, 1.0, 1.0, 0.5, 0.2]]);
        assert_eq!(out.sessions[0].events.len(), 300);
        assert!(out.sessions[0].events.iter().any(|e| e.kind.is_market()));
    }
}
