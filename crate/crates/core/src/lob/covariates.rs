//! Per-event covariate primitives and the calibration pass that feeds them.

use serde::{Deserialize, Serialize};

use super::{BookState, EventKind, SessionStream, Side, LEVELS};
use crate::error::{Error, Result};
use crate::hawkes::{fit_hawkes_mle, HawkesParams};
use crate::stats::median;

/// Cumulative imbalance over the top `k` levels, `None` when that depth is empty.
pub fn imbalance(state: &BookState, k: usize) -> Option<f64> {
    assert!((1..=LEVELS).contains(&k), "depth {k} outside 1..={LEVELS}");
    let b: u64 = state.q_bid[..k].iter().sum();
    let a: u64 = state.q_ask[..k].iter().sum();
    if a + b == 0 {
        return None;
    }
    Some((b as f64 - a as f64) / (b + a) as f64)
}

/// `i_k − i_{k−1}` for `k ≥ 2`.
pub fn delta_imbalance(state: &BookState, k: usize) -> Option<f64> {
    assert!(k >= 2, "corrective terms start at level 2");
    Some(imbalance(state, k)? - imbalance(state, k - 1)?)
}

/// `(s_cat, log s, (log s)²)`; `s_cat = −1` when the spread does not exceed
/// the reference mean.
pub fn spread_covariates(state: &BookState, reference_mean: f64) -> (f64, f64, f64) {
    let s_cat = if f64::from(state.spread_ticks) > reference_mean { 1.0 } else { -1.0 };
    let l = f64::from(state.spread_ticks.max(1)).ln();
    (s_cat, l, l * l)
}

/// `(log q̃, (log q̃)², floored)` with `q̃ = max(1, round(q / median))`;
/// `floored` flags an empty level.
pub fn queue_covariate(
    state: &BookState,
    side: Side,
    level: usize,
    median_trade_size: f64,
) -> (f64, f64, bool) {
    let q = state.queue(side, level);
    let qt = (q as f64 / median_trade_size).round().max(1.0);
    let l = qt.ln();
    (l, l * l, q == 0)
}

/// Everything a recipe may read at one event, evaluated on the pre-event
/// snapshot. Entries that need missing calibration are NaN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitives {
    /// `[i_1, Δi_2, …, Δi_10]`.
    pub imbalance: [f64; LEVELS],
    pub eps: f64,
    pub s_cat: f64,
    pub delta: f64,
    pub spread: f64,
    pub log_q_bid: [f64; LEVELS],
    pub log_q_ask: [f64; LEVELS],
    /// Bit `k` set when level `k + 1` is empty.
    pub empty_bid: u16,
    pub empty_ask: u16,
    pub h_b: f64,
    pub h_a: f64,
}

impl Primitives {
    pub fn compute(state: &BookState, calib: &Calibration, hawkes: Option<(f64, f64)>) -> Self {
        let mut imb = [f64::NAN; LEVELS];
        let mut prev = None;
        for k in 1..=LEVELS {
            let cur = imbalance(state, k);
            imb[k - 1] = match (k, cur, prev) {
                (1, Some(c), _) => c,
                (_, Some(c), Some(p)) => c - p,
                _ => f64::NAN,
            };
            prev = cur;
        }
        let s_cat = match calib.spread_mean_ticks {
            Some(m) => spread_covariates(state, m).0,
            None => f64::NAN,
        };
        let mut log_q_bid = [f64::NAN; LEVELS];
        let mut log_q_ask = [f64::NAN; LEVELS];
        let mut empty_bid = 0u16;
        let mut empty_ask = 0u16;
        for k in 0..LEVELS {
            if state.q_bid[k] == 0 {
                empty_bid |= 1 << k;
            }
            if state.q_ask[k] == 0 {
                empty_ask |= 1 << k;
            }
            if let Some(m) = calib.median_trade_size {
                log_q_bid[k] = queue_covariate(state, Side::Bid, k + 1, m).0;
                log_q_ask[k] = queue_covariate(state, Side::Ask, k + 1, m).0;
            }
        }
        let (h_b, h_a) = hawkes.unwrap_or((f64::NAN, f64::NAN));
        Self {
            imbalance: imb,
            eps: f64::from(state.last_trade_sign),
            s_cat,
            delta: f64::from(state.last_price_move),
            spread: f64::from(state.spread_ticks),
            log_q_bid,
            log_q_ask,
            empty_bid,
            empty_ask,
            h_b,
            h_a,
        }
    }

    pub fn log_queue(&self, side: Side, level: usize) -> f64 {
        match side {
            Side::Bid => self.log_q_bid[level - 1],
            Side::Ask => self.log_q_ask[level - 1],
        }
    }

    pub fn is_empty_level(&self, side: Side, level: usize) -> bool {
        let bits = match side {
            Side::Bid => self.empty_bid,
            Side::Ask => self.empty_ask,
        };
        bits & (1 << (level - 1)) != 0
    }
}

/// Prior-sample quantities some covariates depend on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub spread_mean_ticks: Option<f64>,
    pub median_trade_size: Option<f64>,
    pub hawkes_bid: Option<HawkesParams>,
    pub hawkes_ask: Option<HawkesParams>,
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = self.spread_mean_ticks {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidArgument(format!("spread_mean_ticks {m}")));
            }
        }
        if let Some(m) = self.median_trade_size {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidArgument(format!("median_trade_size {m}")));
            }
        }
        for p in [&self.hawkes_bid, &self.hawkes_ask].into_iter().flatten() {
            p.validate()?;
            if p.dims() != 1 {
                return Err(Error::Dimension {
                    expected: 1,
                    got: p.dims(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadWeighting {
    /// Each snapshot weighted by how long it was in force.
    #[default]
    TimeWeighted,
    EventWeighted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub spread_weighting: SpreadWeighting,
    /// Fit univariate Hawkes processes to bid and ask market orders.
    pub fit_hawkes: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            spread_weighting: SpreadWeighting::TimeWeighted,
            fit_hawkes: true,
        }
    }
}

/// Bid and ask market-order times with sessions laid end to end, plus the
/// total span. Each session starts where the previous one ended.
pub fn market_order_times(sessions: &[SessionStream]) -> (Vec<f64>, Vec<f64>, f64) {
    let mut bid = Vec::new();
    let mut ask = Vec::new();
    let mut offset = 0.0;
    for s in sessions {
        let Some(first) = s.events.first() else { continue };
        let t0 = first.time;
        for e in &s.events {
            match e.kind {
                EventKind::MB => bid.push(offset + e.time - t0),
                EventKind::MA => ask.push(offset + e.time - t0),
                _ => {}
            }
        }
        offset += s.span();
    }
    (bid, ask, offset)
}

/// Spread mean, median market-order size and, optionally, univariate Hawkes
/// fits to bid and ask market orders.
pub fn calibrate(sessions: &[SessionStream], opts: &CalibrationOptions) -> Result<Calibration> {
    let n: usize = sessions.iter().map(|s| s.events.len()).sum();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut weighted = 0.0;
    let mut duration = 0.0;
    let mut plain = 0.0;
    for s in sessions {
        for (k, e) in s.events.iter().enumerate() {
            plain += f64::from(e.state.spread_ticks);
            if let Some(next) = s.events.get(k + 1) {
                let dt = next.time - e.time;
                weighted += dt * f64::from(e.state.spread_ticks);
                duration += dt;
            }
        }
    }
    let spread_mean = match opts.spread_weighting {
        SpreadWeighting::TimeWeighted if duration > 0.0 => weighted / duration,
        _ => plain / n as f64,
    };
    let sizes: Vec<f64> = sessions
        .iter()
        .flat_map(|s| s.events.iter())
        .filter(|e| e.kind.is_market() && e.size > 0)
        .map(|e| e.size as f64)
        .collect();
    let median_trade_size = if sizes.is_empty() { None } else { Some(median(&sizes)) };
    let (hawkes_bid, hawkes_ask) = if opts.fit_hawkes {
        let (bid, ask, horizon) = market_order_times(sessions);
        let fb = fit_hawkes_mle(&[bid], horizon, false)?;
        let fa = fit_hawkes_mle(&[ask], horizon, false)?;
        (Some(fb.params), Some(fa.params))
    } else {
        (None, None)
    };
    Ok(Calibration {
        spread_mean_ticks: Some(spread_mean),
        median_trade_size,
        hawkes_bid,
        hawkes_ask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn book(bid1: u64, ask1: u64) -> BookState {
        let mut s = BookState {
            q_bid: [200; LEVELS],
            q_ask: [200; LEVELS],
            spread_ticks: 1,
            last_trade_sign: 1,
            last_price_move: 0,
        };
        s.q_bid[0] = bid1;
        s.q_ask[0] = ask1;
        s
    }

    #[test]
    fn imbalance_examples() {
        assert_eq!(imbalance(&book(100, 100), 1), Some(0.0));
        assert_relative_eq!(imbalance(&book(300, 100), 1).unwrap(), 0.5);
        let flat = book(200, 200);
        for k in 2..=LEVELS {
            assert_eq!(delta_imbalance(&flat, k), Some(0.0));
        }
        let mut empty = book(0, 0);
        empty.q_bid[1] = 0;
        empty.q_ask[1] = 0;
        assert_eq!(imbalance(&empty, 1), None);
        assert_eq!(delta_imbalance(&empty, 2), None);
        assert!(imbalance(&empty, 3).is_some());
    }

    #[test]
    fn spread_examples() {
        let mut s = book(1, 1);
        assert_eq!(spread_covariates(&s, 2.0), (-1.0, 0.0, 0.0));
        s.spread_ticks = 3;
        assert_eq!(spread_covariates(&s, 2.4).0, 1.0);
        s.spread_ticks = 2;
        assert_eq!(spread_covariates(&s, 2.0).0, -1.0);
    }

    #[test]
    fn queue_examples() {
        let s = book(100, 500);
        assert_eq!(queue_covariate(&s, Side::Bid, 1, 100.0).0, 0.0);
        assert_relative_eq!(queue_covariate(&s, Side::Ask, 1, 100.0).0, 5f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(5f64.ln(), 1.6094, epsilon = 1e-4);
        let e = book(0, 10);
        let (l, l2, floored) = queue_covariate(&e, Side::Bid, 1, 100.0);
        assert_eq!((l, l2, floored), (0.0, 0.0, true));
        assert!(!queue_covariate(&e, Side::Ask, 1, 100.0).2);
    }

    fn arb_state() -> impl Strategy<Value = BookState> {
        (
            proptest::array::uniform10(0u64..1000),
            proptest::array::uniform10(0u64..1000),
        )
            .prop_map(|(q_bid, q_ask)| BookState {
                q_bid,
                q_ask,
                spread_ticks: 1,
                last_trade_sign: -1,
                last_price_move: 0,
            })
    }

    proptest! {
        #[test]
        fn imbalance_bounded_and_antisymmetric(s in arb_state(), k in 1usize..=LEVELS) {
            let swapped = BookState { q_bid: s.q_ask, q_ask: s.q_bid, ..s };
            match (imbalance(&s, k), imbalance(&swapped, k)) {
                (Some(a), Some(b)) => {
                    prop_assert!((-1.0..=1.0).contains(&a));
                    prop_assert_eq!(a, -b);
                }
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
