//! Named model recipes and dataset construction from book sessions.

use serde::{Deserialize, Serialize};

use super::covariates::{Calibration, Primitives};
use super::{BookEvent, EventKind, SessionStream, Side, LEVELS};
use crate::error::{Error, Result};
use crate::hawkes::SelfExcitingLog;
use crate::ratio::{EstimationDataset, EventObservation, RatioModelSpec};

/// One covariate column built from [`Primitives`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Covariate {
    Intercept,
    /// `i_1`.
    Imbalance,
    /// `Δi_k`, `2 ≤ k ≤ 10`.
    DeltaImbalance(usize),
    LastSign,
    SpreadCat,
    LastMove,
    LogSpread,
    LogSpreadSq,
    LogQueue(Side, usize),
    LogQueueSq(Side, usize),
    HawkesBid,
    HawkesAsk,
    Product(Box<Covariate>, Box<Covariate>),
}

impl Covariate {
    pub fn product(a: Covariate, b: Covariate) -> Self {
        Covariate::Product(Box::new(a), Box::new(b))
    }

    pub fn eval(&self, p: &Primitives) -> f64 {
        match self {
            Covariate::Intercept => 1.0,
            Covariate::Imbalance => p.imbalance[0],
            Covariate::DeltaImbalance(k) => p.imbalance[k - 1],
            Covariate::LastSign => p.eps,
            Covariate::SpreadCat => p.s_cat,
            Covariate::LastMove => p.delta,
            Covariate::LogSpread => p.spread.ln(),
            Covariate::LogSpreadSq => p.spread.ln().powi(2),
            Covariate::LogQueue(s, l) => p.log_queue(*s, *l),
            Covariate::LogQueueSq(s, l) => p.log_queue(*s, *l).powi(2),
            Covariate::HawkesBid => p.h_b,
            Covariate::HawkesAsk => p.h_a,
            Covariate::Product(a, b) => a.eval(p) * b.eval(p),
        }
    }

    pub fn name(&self) -> String {
        let side = |s: &Side| if *s == Side::Bid { "bid" } else { "ask" };
        match self {
            Covariate::Intercept => "intercept".into(),
            Covariate::Imbalance => "i".into(),
            Covariate::DeltaImbalance(k) => format!("di{k}"),
            Covariate::LastSign => "eps".into(),
            Covariate::SpreadCat => "s".into(),
            Covariate::LastMove => "delta".into(),
            Covariate::LogSpread => "log_s".into(),
            Covariate::LogSpreadSq => "log_s2".into(),
            Covariate::LogQueue(s, l) => format!("log_q_{}_{l}", side(s)),
            Covariate::LogQueueSq(s, l) => format!("log_q_{}_{l}_sq", side(s)),
            Covariate::HawkesBid => "h_b".into(),
            Covariate::HawkesAsk => "h_a".into(),
            Covariate::Product(a, b) => format!("{}.{}", a.name(), b.name()),
        }
    }

    /// Leaf covariates, products flattened.
    pub fn leaves(&self) -> Vec<&Covariate> {
        match self {
            Covariate::Product(a, b) => {
                let mut v = a.leaves();
                v.extend(b.leaves());
                v
            }
            c => vec![c],
        }
    }

    fn validate(&self) -> Result<()> {
        for leaf in self.leaves() {
            match leaf {
                Covariate::DeltaImbalance(k) if !(2..=LEVELS).contains(k) => {
                    return Err(Error::InvalidSpec(format!("delta imbalance level {k}")))
                }
                Covariate::LogQueue(_, l) | Covariate::LogQueueSq(_, l)
                    if !(1..=LEVELS).contains(l) =>
                {
                    return Err(Error::InvalidSpec(format!("queue level {l}")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// A process of the recipe: a set of event kinds, optionally restricted to
/// some levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessDef {
    pub name: String,
    pub kinds: Vec<EventKind>,
    pub levels: Option<Vec<u8>>,
}

impl ProcessDef {
    pub fn new(name: &str, kinds: &[EventKind], levels: Option<Vec<u8>>) -> Self {
        Self {
            name: name.into(),
            kinds: kinds.to_vec(),
            levels,
        }
    }

    pub fn contains(&self, kind: EventKind, level: u8) -> bool {
        self.kinds.contains(&kind) && self.levels.as_ref().is_none_or(|ls| ls.contains(&level))
    }
}

/// Process set plus covariate list; the first process is the reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecipe {
    pub name: String,
    pub processes: Vec<ProcessDef>,
    pub covariates: Vec<Covariate>,
}

fn market_pair() -> Vec<ProcessDef> {
    vec![
        ProcessDef::new("MB", &[EventKind::MB], None),
        ProcessDef::new("MA", &[EventKind::MA], None),
    ]
}

impl ModelRecipe {
    pub fn new(name: &str, processes: Vec<ProcessDef>, covariates: Vec<Covariate>) -> Result<Self> {
        let r = Self {
            name: name.into(),
            processes,
            covariates,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.processes.len() < 2 {
            return Err(Error::InvalidSpec("a recipe needs at least two processes".into()));
        }
        if self.covariates.is_empty() {
            return Err(Error::InvalidSpec("a recipe needs covariates".into()));
        }
        for c in &self.covariates {
            c.validate()?;
        }
        for kind in EventKind::ALL {
            for level in 1..=LEVELS as u8 {
                let n = self.processes.iter().filter(|p| p.contains(kind, level)).count();
                if n > 1 {
                    return Err(Error::InvalidSpec(format!(
                        "{} at level {level} belongs to {n} processes",
                        kind.as_str()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Names accepted by [`ModelRecipe::named`]; queue recipes take the form
    /// `queue_{bid,ask}_{level}`.
    pub fn names() -> Vec<String> {
        let mut v: Vec<String> = [
            "imbalance",
            "imbalance_last",
            "imbalance_last_spread",
            "table2_left",
            "table2_right",
            "all_imbalances",
            "spread",
            "hawkes_history",
            "hawkes_history_state",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for side in ["bid", "ask"] {
            v.extend((1..=LEVELS).map(|l| format!("queue_{side}_{l}")));
        }
        v
    }

    pub fn named(name: &str) -> Result<Self> {
        use Covariate::*;
        let p = Covariate::product;
        let (processes, covariates) = match name {
            "imbalance" => (market_pair(), vec![Intercept, Imbalance]),
            "imbalance_last" => (market_pair(), vec![Intercept, Imbalance, LastSign]),
            "imbalance_last_spread" => (
                market_pair(),
                vec![Intercept, Imbalance, LastSign, p(LastSign, SpreadCat)],
            ),
            "table2_left" => (
                market_pair(),
                vec![
                    Intercept,
                    Imbalance,
                    LastSign,
                    SpreadCat,
                    p(Imbalance, LastSign),
                    p(Imbalance, SpreadCat),
                    p(LastSign, SpreadCat),
                ],
            ),
            "table2_right" => (
                market_pair(),
                vec![
                    Intercept,
                    Imbalance,
                    LastSign,
                    SpreadCat,
                    LastMove,
                    p(Imbalance, LastSign),
                    p(Imbalance, SpreadCat),
                    p(Imbalance, LastMove),
                    p(LastSign, SpreadCat),
                    p(LastSign, LastMove),
                    p(SpreadCat, LastMove),
                ],
            ),
            "all_imbalances" => {
                let mut c = vec![Intercept, Imbalance];
                c.extend((2..=LEVELS).map(DeltaImbalance));
                (market_pair(), c)
            }
            "spread" => (
                vec![
                    ProcessDef::new("M", &[EventKind::MB, EventKind::MA], None),
                    ProcessDef::new("L", &[EventKind::LB, EventKind::LA], Some(vec![1])),
                    ProcessDef::new("C", &[EventKind::CB, EventKind::CA], Some(vec![1])),
                ],
                vec![Intercept, LogSpread, LogSpreadSq],
            ),
            "hawkes_history" => (market_pair(), vec![Intercept, HawkesBid, HawkesAsk]),
            "hawkes_history_state" => (
                market_pair(),
                vec![
                    Intercept,
                    HawkesBid,
                    HawkesAsk,
                    Imbalance,
                    LastSign,
                    p(LastSign, SpreadCat),
                ],
            ),
            other => return Self::queue(other).ok_or_else(|| {
                Error::Config(format!(
                    "unknown recipe {other:?}; known: {}",
                    Self::names().join(", ")
                ))
            }),
        };
        Self::new(name, processes, covariates)
    }

    fn queue(name: &str) -> Option<Self> {
        let rest = name.strip_prefix("queue_")?;
        let (side_s, level_s) = rest.split_once('_')?;
        let side = match side_s {
            "bid" => Side::Bid,
            "ask" => Side::Ask,
            _ => return None,
        };
        let level: usize = level_s.parse().ok()?;
        if !(1..=LEVELS).contains(&level) {
            return None;
        }
        let (c, l) = match side {
            Side::Bid => (EventKind::CB, EventKind::LB),
            Side::Ask => (EventKind::CA, EventKind::LA),
        };
        let lv = Some(vec![level as u8]);
        Self::new(
            name,
            vec![
                ProcessDef::new(&format!("C{level}"), &[c], lv.clone()),
                ProcessDef::new(&format!("L{level}"), &[l], lv),
            ],
            vec![
                Covariate::Intercept,
                Covariate::LogQueue(side, level),
                Covariate::LogQueueSq(side, level),
            ],
        )
        .ok()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(Covariate::name).collect()
    }

    pub fn spec(&self) -> Result<RatioModelSpec> {
        RatioModelSpec::new(self.processes.len(), self.covariate_names())
    }

    pub fn process_of(&self, event: &BookEvent) -> Option<usize> {
        self.processes.iter().position(|p| p.contains(event.kind, event.level))
    }

    fn uses(&self, f: impl Fn(&Covariate) -> bool) -> bool {
        self.covariates.iter().any(|c| c.leaves().into_iter().any(&f))
    }

    pub fn uses_hawkes(&self) -> bool {
        self.uses(|c| matches!(c, Covariate::HawkesBid | Covariate::HawkesAsk))
    }

    pub fn uses_spread_mean(&self) -> bool {
        self.uses(|c| matches!(c, Covariate::SpreadCat))
    }

    pub fn uses_queue(&self) -> bool {
        self.uses(|c| matches!(c, Covariate::LogQueue(..) | Covariate::LogQueueSq(..)))
    }

    /// Queue levels read by the recipe, for empty-level accounting.
    pub fn queue_levels(&self) -> Vec<(Side, usize)> {
        let mut v = Vec::new();
        for c in &self.covariates {
            for leaf in c.leaves() {
                if let Covariate::LogQueue(s, l) | Covariate::LogQueueSq(s, l) = leaf {
                    if !v.contains(&(*s, *l)) {
                        v.push((*s, *l));
                    }
                }
            }
        }
        v
    }

    pub fn check_calibration(&self, calib: &Calibration) -> Result<()> {
        calib.validate()?;
        if self.uses_spread_mean() && calib.spread_mean_ticks.is_none() {
            return Err(Error::MissingCalibration(format!(
                "recipe {} needs spread_mean_ticks; run calibrate first",
                self.name
            )));
        }
        if self.uses_queue() && calib.median_trade_size.is_none() {
            return Err(Error::MissingCalibration(format!(
                "recipe {} needs median_trade_size; run calibrate first",
                self.name
            )));
        }
        if self.uses_hawkes() && (calib.hawkes_bid.is_none() || calib.hawkes_ask.is_none()) {
            return Err(Error::MissingCalibration(format!(
                "recipe {} needs hawkes_bid and hawkes_ask; run calibrate first",
                self.name
            )));
        }
        Ok(())
    }

    pub fn covariate_row(&self, p: &Primitives) -> Vec<f64> {
        self.covariates.iter().map(|c| c.eval(p)).collect()
    }
}

/// Why events did not become observations.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    /// Event kind or level outside every process of the recipe.
    pub other_kind: usize,
    /// First event of a session, which has no pre-event snapshot.
    pub first_event: usize,
    /// Some covariate was undefined (for instance an empty book).
    pub undefined: usize,
}

impl DropCounts {
    pub fn total(&self) -> usize {
        self.other_kind + self.first_event + self.undefined
    }
}

/// Output of [`build_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuiltDataset {
    pub dataset: EstimationDataset,
    /// Primitives behind each observation, in the same order.
    pub primitives: Vec<Primitives>,
    pub drops: DropCounts,
    /// Observations whose queue covariate was floored at an empty level.
    pub empty_queue_floors: usize,
    pub parsed_events: usize,
}

/// Turns sessions into a continuous-mode dataset whose horizon is the summed
/// session span. Covariates are read from the previous row's snapshot and,
/// for history recipes, from market orders strictly before the event.
pub fn build_dataset(
    sessions: &[SessionStream],
    recipe: &ModelRecipe,
    calib: &Calibration,
) -> Result<BuiltDataset> {
    recipe.validate()?;
    recipe.check_calibration(calib)?;
    let spec = recipe.spec()?;
    let queue_levels = recipe.queue_levels();
    let hawkes = recipe.uses_hawkes();
    let mut observations = Vec::new();
    let mut primitives = Vec::new();
    let mut drops = DropCounts::default();
    let mut empty_queue_floors = 0;
    let mut parsed_events = 0;
    let mut horizon = 0.0;
    for s in sessions {
        parsed_events += s.events.len();
        horizon += s.span();
        let mut trackers = if hawkes {
            Some((
                SelfExcitingLog::new(calib.hawkes_bid.as_ref().expect("checked"))?,
                SelfExcitingLog::new(calib.hawkes_ask.as_ref().expect("checked"))?,
            ))
        } else {
            None
        };
        let t0 = s.events.first().map_or(0.0, |e| e.time);
        for (k, ev) in s.events.iter().enumerate() {
            let t = ev.time - t0;
            let h = trackers
                .as_mut()
                .map(|(b, a)| (b.log_intensity(t), a.log_intensity(t)));
            match (recipe.process_of(ev), k) {
                (None, _) => drops.other_kind += 1,
                (Some(_), 0) => drops.first_event += 1,
                (Some(process_index), _) => {
                    let p = Primitives::compute(&s.events[k - 1].state, calib, h);
                    let x = recipe.covariate_row(&p);
                    if x.iter().all(|v| v.is_finite()) {
                        if queue_levels.iter().any(|&(sd, l)| p.is_empty_level(sd, l)) {
                            empty_queue_floors += 1;
                        }
                        observations.push(EventObservation {
                            session_id: s.session_id,
                            time: ev.time,
                            process_index,
                            covariates: x,
                        });
                        primitives.push(p);
                    } else {
                        drops.undefined += 1;
                    }
                }
            }
            if let Some((b, a)) = trackers.as_mut() {
                match ev.kind {
                    EventKind::MB => b.add_event(t),
                    EventKind::MA => a.add_event(t),
                    _ => {}
                }
            }
        }
    }
    let horizon = if observations.is_empty() { horizon.max(0.0) } else { horizon.max(f64::MIN_POSITIVE) };
    let dataset = EstimationDataset::continuous(spec, observations, horizon)?;
    debug_assert_eq!(parsed_events, dataset.len() + drops.total());
    Ok(BuiltDataset {
        dataset,
        primitives,
        drops,
        empty_queue_floors,
        parsed_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::{parse_sessions, BookState};

    fn state(bid1: u64, ask1: u64, sign: i8) -> BookState {
        let mut s = BookState {
            q_bid: [100; LEVELS],
            q_ask: [100; LEVELS],
            spread_ticks: 1,
            last_trade_sign: sign,
            last_price_move: 0,
        };
        s.q_bid[0] = bid1;
        s.q_ask[0] = ask1;
        s
    }

    fn ev(time: f64, kind: EventKind, st: BookState) -> BookEvent {
        BookEvent {
            session_id: 1,
            time,
            kind,
            level: 1,
            size: 100,
            state: st,
        }
    }

    #[test]
    fn every_named_recipe_builds() {
        for n in ModelRecipe::names() {
            let r = ModelRecipe::named(&n).unwrap();
            assert_eq!(r.spec().unwrap().n_covariates, r.covariates.len());
        }
        assert!(matches!(ModelRecipe::named("nope"), Err(Error::Config(_))));
        assert!(ModelRecipe::named("queue_ask_11").is_err());
    }

    #[test]
    fn two_event_fixture_by_hand() {
        // a leading limit order supplies the snapshot for the first market order
        let s = SessionStream {
            session_id: 1,
            events: vec![
                ev(0.0, EventKind::LB, state(300, 100, 1)),
                ev(1.0, EventKind::MB, state(200, 100, -1)),
                ev(2.0, EventKind::MA, state(200, 50, 1)),
            ],
        };
        let r = ModelRecipe::named("imbalance").unwrap();
        let b = build_dataset(&[s], &r, &Calibration::default()).unwrap();
        let obs = b.dataset.observations();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[0].process_index, 0);
        assert_eq!(obs[0].covariates, vec![1.0, 0.5]);
        assert_eq!(obs[1].process_index, 1);
        assert!((obs[1].covariates[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.drops.other_kind, 1);
        assert_eq!(b.dataset.horizon(), 2.0);
    }

    #[test]
    fn empty_intersection_gives_empty_dataset() {
        let s = SessionStream {
            session_id: 1,
            events: vec![ev(0.0, EventKind::LB, state(1, 1, 1)), ev(1.0, EventKind::CA, state(1, 1, 1))],
        };
        let b = build_dataset(&[s], &ModelRecipe::named("imbalance").unwrap(), &Calibration::default())
            .unwrap();
        assert!(b.dataset.is_empty());
        assert_eq!(b.drops.other_kind, 2);
        let fit = crate::estimators::fit_qmle(&b.dataset, &Default::default());
        assert!(matches!(fit, Err(Error::EmptyDataset)));
    }

    #[test]
    fn missing_calibration_is_reported() {
        let r = ModelRecipe::named("imbalance_last_spread").unwrap();
        assert!(matches!(
            build_dataset(&[], &r, &Calibration::default()),
            Err(Error::MissingCalibration(_))
        ));
        let r = ModelRecipe::named("queue_ask_1").unwrap();
        assert!(matches!(
            build_dataset(&[], &r, &Calibration::default()),
            Err(Error::MissingCalibration(_))
        ));
    }

    #[test]
    fn undefined_and_floored_are_counted() {
        let mut empty = state(0, 0, 1);
        empty.q_bid = [0; LEVELS];
        empty.q_ask = [0; LEVELS];
        let s = SessionStream {
            session_id: 3,
            events: vec![
                ev(0.0, EventKind::MA, state(5, 5, 1)),
                ev(0.5, EventKind::MB, empty),
                ev(0.7, EventKind::MA, state(5, 5, 1)),
            ],
        };
        let b = build_dataset(&[s.clone()], &ModelRecipe::named("imbalance").unwrap(), &Calibration::default())
            .unwrap();
        assert_eq!(b.drops.first_event, 1);
        assert_eq!(b.drops.undefined, 1);
        assert_eq!(b.dataset.len(), 1);
        assert_eq!(b.parsed_events, b.dataset.len() + b.drops.total());

        let mut s2 = s;
        for e in &mut s2.events {
            e.kind = EventKind::LA;
        }
        let calib = Calibration {
            median_trade_size: Some(100.0),
            ..Default::default()
        };
        let b = build_dataset(&[s2], &ModelRecipe::named("queue_ask_1").unwrap(), &calib).unwrap();
        assert_eq!(b.dataset.len(), 2);
        assert_eq!(b.empty_queue_floors, 1);
    }

    #[test]
    fn fixture_csv_builds() {
        let text = crate::lob::tests::fixture();
        let sessions = parse_sessions(text.as_bytes()).unwrap();
        let b = build_dataset(&sessions, &ModelRecipe::named("imbalance_last").unwrap(), &Calibration::default())
            .unwrap();
        assert_eq!(b.dataset.len(), 2);
        // the MB row reads the MA row's snapshot
        assert_eq!(b.dataset.observations()[1].covariates, vec![1.0, 0.5, 1.0]);
    }
}
