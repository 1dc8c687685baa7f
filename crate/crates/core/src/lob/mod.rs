//! Order-book event ingestion, covariates and dataset construction.
//!
//! Each CSV row carries the event and the book snapshot *after* it:
//!
//! ```text
//! session_id,time,kind,level,size,q_bid_1..q_bid_10,q_ask_1..q_ask_10,spread_ticks,last_trade_sign,last_price_move
//! ```

mod covariates;
mod curve;
mod recipe;

pub use covariates::{
    calibrate, delta_imbalance, imbalance, market_order_times, queue_covariate,
    spread_covariates, Calibration, CalibrationOptions, Primitives, SpreadWeighting,
};
pub use curve::{probability_curve, write_curve_csv, CurveAxis, CurveRow, ProbabilityCurve};
pub use recipe::{build_dataset, BuiltDataset, Covariate, DropCounts, ModelRecipe, ProcessDef};

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Book depth carried by every snapshot.
pub const LEVELS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

/// Market, limit or cancel order on the ask or bid side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    MA,
    MB,
    LA,
    LB,
    CA,
    CB,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::MA,
        EventKind::MB,
        EventKind::LA,
        EventKind::LB,
        EventKind::CA,
        EventKind::CB,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::MA => "MA",
            EventKind::MB => "MB",
            EventKind::LA => "LA",
            EventKind::LB => "LB",
            EventKind::CA => "CA",
            EventKind::CB => "CB",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn is_market(&self) -> bool {
        matches!(self, EventKind::MA | EventKind::MB)
    }

    pub fn side(&self) -> Side {
        match self {
            EventKind::MA | EventKind::LA | EventKind::CA => Side::Ask,
            EventKind::MB | EventKind::LB | EventKind::CB => Side::Bid,
        }
    }

    /// `+1` for ask market orders (buyer-initiated), `−1` for bid.
    pub fn trade_sign(&self) -> Option<i8> {
        match self {
            EventKind::MA => Some(1),
            EventKind::MB => Some(-1),
            _ => None,
        }
    }
}

/// Book snapshot: queue sizes per level, spread, last trade sign and last
/// mid-price move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookState {
    pub q_bid: [u64; LEVELS],
    pub q_ask: [u64; LEVELS],
    pub spread_ticks: u32,
    pub last_trade_sign: i8,
    pub last_price_move: i8,
}

impl BookState {
    pub fn queue(&self, side: Side, level: usize) -> u64 {
        match side {
            Side::Bid => self.q_bid[level - 1],
            Side::Ask => self.q_ask[level - 1],
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.spread_ticks < 1 {
            return Err("spread_ticks must be >= 1".into());
        }
        if self.last_trade_sign != 1 && self.last_trade_sign != -1 {
            return Err(format!("last_trade_sign {} not in {{-1, 1}}", self.last_trade_sign));
        }
        if !(-1..=1).contains(&self.last_price_move) {
            return Err(format!("last_price_move {} not in {{-1, 0, 1}}", self.last_price_move));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BookEvent {
    pub session_id: u64,
    pub time: f64,
    pub kind: EventKind,
    pub level: u8,
    pub size: u64,
    /// Snapshot after the event.
    pub state: BookState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionStream {
    pub session_id: u64,
    pub events: Vec<BookEvent>,
}

impl SessionStream {
    /// Time between the first and last event.
    pub fn span(&self) -> f64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }
}

pub fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = ["session_id", "time", "kind", "level", "size"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=LEVELS).map(|k| format!("q_bid_{k}")));
    h.extend((1..=LEVELS).map(|k| format!("q_ask_{k}")));
    h.extend(["spread_ticks", "last_trade_sign", "last_price_move"].map(String::from));
    h
}

/// Parses sessions from CSV text. Rows are grouped by `session_id` in order of
/// first appearance; time must not decrease within a session.
pub fn parse_sessions<R: Read>(input: R) -> Result<Vec<SessionStream>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let expected = csv_header();
    {
        let header = rdr.headers()?;
        let got: Vec<&str> = header.iter().collect();
        if got != expected {
            return Err(Error::Parse {
                line: 1,
                message: "header does not match the ingestion schema".into(),
            });
        }
    }
    let mut sessions: Vec<SessionStream> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut record = csv::StringRecord::new();
    let mut line = 1;
    while rdr.read_record(&mut record)? {
        line += 1;
        let ev = parse_row(&record).map_err(|message| Error::Parse { line, message })?;
        let k = *index.entry(ev.session_id).or_insert_with(|| {
            sessions.push(SessionStream {
                session_id: ev.session_id,
                events: Vec::new(),
            });
            sessions.len() - 1
        });
        let events = &mut sessions[k].events;
        if let Some(prev) = events.last() {
            if ev.time < prev.time {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "time {} precedes {} in session {}",
                        ev.time, prev.time, ev.session_id
                    ),
                });
            }
        }
        events.push(ev);
    }
    Ok(sessions)
}

pub fn parse_sessions_path(path: &Path) -> Result<Vec<SessionStream>> {
    parse_sessions(std::fs::File::open(path)?)
}

fn parse_row(rec: &csv::StringRecord) -> std::result::Result<BookEvent, String> {
    let n = 5 + 2 * LEVELS + 3;
    if rec.len() != n {
        return Err(format!("expected {n} fields, got {}", rec.len()));
    }
    fn num<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
        s.trim().parse().map_err(|_| format!("bad {name} {s:?}"))
    }
    let session_id = num(&rec[0], "session_id")?;
    let time: f64 = num(&rec[1], "time")?;
    if !time.is_finite() || time < 0.0 {
        return Err(format!("bad time {:?}", &rec[1]));
    }
    let kind = EventKind::parse(rec[2].trim()).ok_or_else(|| format!("bad kind {:?}", &rec[2]))?;
    let level: u8 = num(&rec[3], "level")?;
    if level < 1 || level as usize > LEVELS {
        return Err(format!("level {level} outside 1..={LEVELS}"));
    }
    let size = num(&rec[4], "size")?;
    let mut q_bid = [0u64; LEVELS];
    let mut q_ask = [0u64; LEVELS];
    for k in 0..LEVELS {
        q_bid[k] = num(&rec[5 + k], "q_bid")?;
        q_ask[k] = num(&rec[5 + LEVELS + k], "q_ask")?;
    }
    let state = BookState {
        q_bid,
        q_ask,
        spread_ticks: num(&rec[5 + 2 * LEVELS], "spread_ticks")?,
        last_trade_sign: num(&rec[6 + 2 * LEVELS], "last_trade_sign")?,
        last_price_move: num(&rec[7 + 2 * LEVELS], "last_price_move")?,
    };
    state.validate()?;
    Ok(BookEvent {
        session_id,
        time,
        kind,
        level,
        size,
        state,
    })
}

/// Writes sessions in the ingestion schema; times use the shortest
/// representation that parses back to the same value.
pub fn write_sessions<W: Write>(sessions: &[SessionStream], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header())?;
    let mut row: Vec<String> = Vec::with_capacity(5 + 2 * LEVELS + 3);
    for s in sessions {
        for e in &s.events {
            row.clear();
            row.push(e.session_id.to_string());
            row.push(format!("{}", e.time));
            row.push(e.kind.as_str().to_string());
            row.push(e.level.to_string());
            row.push(e.size.to_string());
            row.extend(e.state.q_bid.iter().map(|q| q.to_string()));
            row.extend(e.state.q_ask.iter().map(|q| q.to_string()));
            row.push(e.state.spread_ticks.to_string());
            row.push(e.state.last_trade_sign.to_string());
            row.push(e.state.last_price_move.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Keeps events with `start <= time <= end` (trading-hours filter).
pub fn trim_sessions(sessions: &[SessionStream], start: f64, end: f64) -> Vec<SessionStream> {
    sessions
        .iter()
        .map(|s| SessionStream {
            session_id: s.session_id,
            events: s
                .events
                .iter()
                .filter(|e| e.time >= start && e.time <= end)
                .cloned()
                .collect(),
        })
        .collect()
}
