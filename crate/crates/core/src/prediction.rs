//! Trade-sign prediction and walk-forward evaluation.
//!
//! Every eligible trade is a market order that is not the first event of its
//! session. Its predecessor sign is the `last_trade_sign` of the pre-trade
//! snapshot, so the sign-change subsample is the set of trades that flip it.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_qmle, FitOptions};
use crate::fmt12;
use crate::hawkes::{fit_hawkes_mle, HawkesParams, IntensityState, SelfExcitingLog};
use crate::lob::{
    build_dataset, calibrate, imbalance, market_order_times, BookState, Calibration,
    CalibrationOptions, Covariate, ModelRecipe, Primitives, SessionStream,
};
use crate::ratio::{ratio_probabilities, ThetaVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Last,
    Imbalance,
    HawkesFull,
    HawkesNoCross,
    /// Ratio model on `(i, ε, εs)`.
    RatioState,
    /// Ratio model on `(H_B, H_A)`.
    RatioHawkes,
    /// Ratio model on `(H_B, H_A, i, ε, εs)`.
    RatioHawkesState,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 7] = [
        PredictorKind::Last,
        PredictorKind::Imbalance,
        PredictorKind::HawkesFull,
        PredictorKind::HawkesNoCross,
        PredictorKind::RatioState,
        PredictorKind::RatioHawkes,
        PredictorKind::RatioHawkesState,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PredictorKind::Last => "last",
            PredictorKind::Imbalance => "imbalance",
            PredictorKind::HawkesFull => "hawkes_full",
            PredictorKind::HawkesNoCross => "hawkes_nocross",
            PredictorKind::RatioState => "ratio_state",
            PredictorKind::RatioHawkes => "ratio_hawkes",
            PredictorKind::RatioHawkesState => "ratio_hawkes_state",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        PredictorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown predictor {s:?}")))
    }

    fn recipe(&self) -> Option<&'static str> {
        match self {
            PredictorKind::RatioState => Some("imbalance_last_spread"),
            PredictorKind::RatioHawkes => Some("hawkes_history"),
            PredictorKind::RatioHawkesState => Some("hawkes_history_state"),
            _ => None,
        }
    }
}

/// A predictor with its calibrated payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Predictor {
    Last,
    Imbalance,
    /// Bivariate Hawkes model; dimension 0 is bid (MB), 1 is ask (MA).
    Hawkes { kind: PredictorKind, params: HawkesParams },
    Ratio {
        kind: PredictorKind,
        recipe: ModelRecipe,
        theta: ThetaVector,
        calibration: Calibration,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionOptions {
    /// Include an intercept in the history-only ratio model.
    pub ratio_hawkes_intercept: bool,
    pub calibration: CalibrationOptions,
    pub fit: FitOptions,
}

impl Default for PredictionOptions {
    fn default() -> Self {
        Self {
            ratio_hawkes_intercept: true,
            calibration: CalibrationOptions::default(),
            fit: FitOptions::default(),
        }
    }
}

/// `+1` unless `p < 0.5`.
pub fn sign_from_probability(p_ask: f64) -> i8 {
    if p_ask < 0.5 {
        -1
    } else {
        1
    }
}

/// `+1` unless the imbalance is negative; an empty book counts as zero.
pub fn sign_from_imbalance(state: &BookState) -> i8 {
    match imbalance(state, 1) {
        Some(i) if i < 0.0 => -1,
        _ => 1,
    }
}

/// `−1` when the bid intensity is strictly larger.
pub fn sign_from_intensities(lambda_bid: f64, lambda_ask: f64) -> i8 {
    if lambda_bid > lambda_ask {
        -1
    } else {
        1
    }
}

impl Predictor {
    pub fn kind(&self) -> PredictorKind {
        match self {
            Predictor::Last => PredictorKind::Last,
            Predictor::Imbalance => PredictorKind::Imbalance,
            Predictor::Hawkes { kind, .. } | Predictor::Ratio { kind, .. } => *kind,
        }
    }

    /// Fits the payload on `sessions`.
    pub fn calibrate(kind: PredictorKind, sessions: &[SessionStream], opts: &PredictionOptions) -> Result<Self> {
        match kind {
            PredictorKind::Last => Ok(Predictor::Last),
            PredictorKind::Imbalance => Ok(Predictor::Imbalance),
            PredictorKind::HawkesFull | PredictorKind::HawkesNoCross => {
                let (bid, ask, horizon) = market_order_times(sessions);
                let fit = fit_hawkes_mle(&[bid, ask], horizon, kind == PredictorKind::HawkesFull)?;
                Ok(Predictor::Hawkes { kind, params: fit.params })
            }
            _ => {
                let mut recipe = ModelRecipe::named(kind.recipe().expect("ratio kind"))?;
                if kind == PredictorKind::RatioHawkes && !opts.ratio_hawkes_intercept {
                    recipe.covariates.retain(|c| *c != Covariate::Intercept);
                }
                let mut copts = opts.calibration.clone();
                copts.fit_hawkes = recipe.uses_hawkes();
                let calibration = calibrate(sessions, &copts)?;
                let built = build_dataset(sessions, &recipe, &calibration)?;
                let fit = fit_qmle(&built.dataset, &opts.fit)?;
                if !fit.converged {
                    return Err(Error::Estimation(format!("{} fit did not converge", kind.name())));
                }
                Ok(Predictor::Ratio {
                    kind,
                    recipe,
                    theta: fit.theta_hat,
                    calibration,
                })
            }
        }
    }

    /// Predictions for every eligible trade of `session`, in order.
    pub fn predict_session(&self, session: &SessionStream) -> Result<Vec<TradePrediction>> {
        let events = &session.events;
        let Some(first) = events.first() else { return Ok(Vec::new()) };
        let t0 = first.time;
        let mut out = Vec::new();
        let mut hawkes = match self {
            Predictor::Hawkes { params, .. } => Some(IntensityState::new(params)),
            _ => None,
        };
        let mut logs = match self {
            Predictor::Ratio { recipe, calibration, .. } if recipe.uses_hawkes() => Some((
                SelfExcitingLog::new(calibration.hawkes_bid.as_ref().expect("calibrated"))?,
                SelfExcitingLog::new(calibration.hawkes_ask.as_ref().expect("calibrated"))?,
            )),
            _ => None,
        };
        for (k, ev) in events.iter().enumerate() {
            let t = ev.time - t0;
            if let Some(h) = hawkes.as_mut() {
                h.advance(t)?;
            }
            let h_logs = logs.as_mut().map(|(b, a)| (b.log_intensity(t), a.log_intensity(t)));
            if let (Some(actual), true) = (ev.kind.trade_sign(), k > 0) {
                let prev = &events[k - 1].state;
                let predicted = match self {
                    Predictor::Last => prev.last_trade_sign,
                    Predictor::Imbalance => sign_from_imbalance(prev),
                    Predictor::Hawkes { .. } => {
                        let h = hawkes.as_ref().expect("hawkes state");
                        sign_from_intensities(h.intensity_of(0), h.intensity_of(1))
                    }
                    Predictor::Ratio { recipe, theta, calibration, .. } => {
                        let p = Primitives::compute(prev, calibration, h_logs);
                        let x = recipe.covariate_row(&p);
                        if x.iter().all(|v| v.is_finite()) {
                            let probs = ratio_probabilities(&recipe.spec()?, theta, &x)?;
                            sign_from_probability(probs[1])
                        } else {
                            1
                        }
                    }
                };
                out.push(TradePrediction {
                    index: k,
                    time: ev.time,
                    actual,
                    predicted,
                    previous: prev.last_trade_sign,
                });
            }
            match ev.kind.trade_sign() {
                Some(s) => {
                    let dim = usize::from(s > 0);
                    if let Some(h) = hawkes.as_mut() {
                        h.excite(dim);
                    }
                    if let Some((b, a)) = logs.as_mut() {
                        if s > 0 { a.add_event(t) } else { b.add_event(t) }
                    }
                }
                None => {}
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradePrediction {
    /// Row index within the session.
    pub index: usize,
    pub time: f64,
    pub actual: i8,
    pub predicted: i8,
    /// Sign of the preceding trade, from the pre-trade snapshot.
    pub previous: i8,
}

/// Counts for one method over one or more sessions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub trades: usize,
    pub correct: usize,
    pub sign_changes: usize,
    pub sign_change_correct: usize,
}

impl Score {
    pub fn from_predictions(preds: &[TradePrediction]) -> Self {
        let mut s = Score::default();
        for p in preds {
            s.trades += 1;
            let ok = p.actual == p.predicted;
            s.correct += usize::from(ok);
            if p.actual != p.previous {
                s.sign_changes += 1;
                s.sign_change_correct += usize::from(ok);
            }
        }
        s
    }

    pub fn add(&mut self, o: &Score) {
        self.trades += o.trades;
        self.correct += o.correct;
        self.sign_changes += o.sign_changes;
        self.sign_change_correct += o.sign_change_correct;
    }

    /// `None` without eligible trades.
    pub fn accuracy(&self) -> Option<f64> {
        (self.trades > 0).then(|| self.correct as f64 / self.trades as f64)
    }

    pub fn sign_change_accuracy(&self) -> Option<f64> {
        (self.sign_changes > 0).then(|| self.sign_change_correct as f64 / self.sign_changes as f64)
    }
}

/// Outcome of one (session, method) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub kind: PredictorKind,
    pub score: Option<Score>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: u64,
    pub calibration_session_id: u64,
    pub cells: Vec<Cell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub kind: PredictorKind,
    pub score: Score,
    pub accuracy: Option<f64>,
    pub sign_change_accuracy: Option<f64>,
    /// Accuracy minus that of `Last`, when both are defined.
    pub delta_vs_last: Option<f64>,
    pub failed_sessions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sessions: Vec<SessionReport>,
    pub methods: Vec<MethodSummary>,
}

impl EvalReport {
    pub fn method(&self, kind: PredictorKind) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.kind == kind)
    }

    /// Method with the highest aggregate accuracy; ties go to the earlier kind.
    pub fn best(&self) -> Option<PredictorKind> {
        let mut best: Option<(&MethodSummary, f64)> = None;
        for m in &self.methods {
            if let Some(a) = m.accuracy {
                if best.is_none_or(|(_, b)| a > b) {
                    best = Some((m, a));
                }
            }
        }
        best.map(|(m, _)| m.kind)
    }

    /// Per-session CSV rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "session_id",
            "method",
            "trades",
            "correct",
            "accuracy",
            "sign_changes",
            "sign_change_correct",
            "sign_change_accuracy",
            "status",
        ])?;
        let opt = |x: Option<f64>| x.map(fmt12).unwrap_or_default();
        for s in &self.sessions {
            for c in &s.cells {
                let sc = c.score.unwrap_or_default();
                w.write_record([
                    s.session_id.to_string(),
                    c.kind.name().to_string(),
                    sc.trades.to_string(),
                    sc.correct.to_string(),
                    opt(c.score.and_then(|x| x.accuracy())),
                    sc.sign_changes.to_string(),
                    sc.sign_change_correct.to_string(),
                    opt(c.score.and_then(|x| x.sign_change_accuracy())),
                    c.error.clone().map_or("ok".into(), |e| format!("failed: {e}")),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Calibrates on session `k − 1` and evaluates on session `k`, for every
/// `k ≥ 1`. Calibration failures mark the cell failed and leave it out of the
/// aggregates.
pub fn walk_forward(
    sessions: &[SessionStream],
    kinds: &[PredictorKind],
    opts: &PredictionOptions,
) -> Result<EvalReport> {
    if sessions.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "walk-forward needs at least 2 sessions, got {}",
            sessions.len()
        )));
    }
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no predictors requested".into()));
    }
    let jobs: Vec<(usize, PredictorKind)> = (1..sessions.len())
        .flat_map(|k| kinds.iter().map(move |&kind| (k, kind)))
        .collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(k, kind)| {
            let run = || -> Result<Score> {
                let pred = Predictor::calibrate(kind, &sessions[k - 1..k], opts)?;
                Ok(Score::from_predictions(&pred.predict_session(&sessions[k])?))
            };
            match run() {
                Ok(s) => Cell { kind, score: Some(s), error: None },
                Err(e) => Cell { kind, score: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let mut reports = Vec::with_capacity(sessions.len() - 1);
    for (k, chunk) in (1..sessions.len()).zip(cells.chunks(kinds.len())) {
        reports.push(SessionReport {
            session_id: sessions[k].session_id,
            calibration_session_id: sessions[k - 1].session_id,
            cells: chunk.to_vec(),
        });
    }
    let mut methods: Vec<MethodSummary> = kinds
        .iter()
        .map(|&kind| {
            let mut score = Score::default();
            let mut failed = 0;
            for r in &reports {
                let c = r.cells.iter().find(|c| c.kind == kind).expect("cell");
                match &c.score {
                    Some(s) => score.add(s),
                    None => failed += 1,
                }
            }
            MethodSummary {
                kind,
                score,
                accuracy: score.accuracy(),
                sign_change_accuracy: score.sign_change_accuracy(),
                delta_vs_last: None,
                failed_sessions: failed,
            }
        })
        .collect();
    let last = methods.iter().find(|m| m.kind == PredictorKind::Last).and_then(|m| m.accuracy);
    for m in &mut methods {
        m.delta_vs_last = match (m.accuracy, last) {
            (Some(a), Some(l)) => Some(a - l),
            _ => None,
        };
    }
    Ok(EvalReport { sessions: reports, methods })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::{BookEvent, EventKind, LEVELS};

    fn st(bid: u64, ask: u64, sign: i8) -> BookState {
        let mut s = BookState {
            q_bid: [100; LEVELS],
            q_ask: [100; LEVELS],
            spread_ticks: 1,
            last_trade_sign: sign,
            last_price_move: 0,
        };
        s.q_bid[0] = bid;
        s.q_ask[0] = ask;
        s
    }

    fn session(id: u64, kinds: &[EventKind]) -> SessionStream {
        let mut sign = 1;
        let events = kinds
            .iter()
            .enumerate()
            .map(|(k, &kind)| {
                if let Some(s) = kind.trade_sign() {
                    sign = s;
                }
                BookEvent {
                    session_id: id,
                    time: k as f64 * 0.5,
                    kind,
                    level: 1,
                    size: 100,
                    state: st(100 + 10 * (k as u64 % 3), 100, sign),
                }
            })
            .collect();
        SessionStream { session_id: id, events }
    }

    #[test]
    fn rules() {
        let s = session(1, &[EventKind::LA, EventKind::MB, EventKind::MA]);
        let p = Predictor::Last.predict_session(&s).unwrap();
        assert_eq!(p.len(), 2);
        // the MA trade follows an MB trade
        assert_eq!(p[1].predicted, -1);
        assert_eq!(sign_from_imbalance(&st(130, 70, 1)), 1);
        assert_eq!(sign_from_imbalance(&st(100, 100, -1)), 1);
        assert_eq!(sign_from_imbalance(&st(10, 100, 1)), -1);
        assert_eq!(sign_from_probability(0.5), 1);
        assert_eq!(sign_from_probability(0.62), 1);
        assert_eq!(sign_from_probability(0.49), -1);
        assert_eq!(sign_from_intensities(1.0, 1.0), 1);
        assert_eq!(sign_from_intensities(2.0, 1.0), -1);
    }

    #[test]
    fn one_sided_sessions() {
        let kinds = vec![EventKind::MA; 30];
        let sessions = vec![session(0, &kinds), session(1, &kinds)];
        let r = walk_forward(&sessions, &[PredictorKind::Last, PredictorKind::HawkesFull], &Default::default())
            .unwrap();
        let last = r.method(PredictorKind::Last).unwrap();
        assert_eq!(last.accuracy, Some(1.0));
        assert_eq!(last.sign_change_accuracy, None);
        // bid side has no events, so the Hawkes cell fails and is excluded
        let h = r.method(PredictorKind::HawkesFull).unwrap();
        assert_eq!(h.failed_sessions, 1);
        assert_eq!(h.accuracy, None);
        assert!(walk_forward(&sessions[..1], &[PredictorKind::Last], &Default::default()).is_err());
    }

    #[test]
    fn last_identity_and_partition() {
        use EventKind::*;
        let kinds = [LA, MA, MB, MB, LB, MA, MA, CB, MB, MA];
        let s = session(4, &kinds);
        let p = Predictor::Last.predict_session(&s).unwrap();
        let sc = Score::from_predictions(&p);
        assert_eq!(sc.correct, sc.trades - sc.sign_changes);
        for kind in [Predictor::Imbalance, Predictor::Last] {
            let sc = Score::from_predictions(&kind.predict_session(&s).unwrap());
            let no_change_correct = kind
                .predict_session(&s)
                .unwrap()
                .iter()
                .filter(|p| p.actual == p.previous && p.actual == p.predicted)
                .count();
            assert_eq!(sc.correct, sc.sign_change_correct + no_change_correct);
        }
    }

    #[test]
    fn names_round_trip() {
        for k in PredictorKind::ALL {
            assert_eq!(PredictorKind::parse(k.name()).unwrap(), k);
        }
        assert!(PredictorKind::parse("oracle").is_err());
    }
}
