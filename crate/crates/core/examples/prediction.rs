//! Next trade sign, walk-forward over sessions with self-exciting order flow.

use coxratio::hawkes::HawkesParams;
use coxratio::prediction::{walk_forward, PredictorKind};
use coxratio::simulator::{synth_lob_stream, BookDynamics, SynthLobConfig};

fn main() -> coxratio::Result<()> {
    let mut cfg = SynthLobConfig::new("imbalance_last_spread", vec![vec![0.0, 3.0, 0.3, 0.3]], 3, 20_000, 8);
    let h = HawkesParams::univariate(0.3, 1.5, 3.0)?;
    cfg.dynamics = BookDynamics::TradeFlow { background_rate: 4.0, hawkes_bid: h.clone(), hawkes_ask: h };
    let out = synth_lob_stream(&cfg)?;
    let report = walk_forward(&out.sessions, &PredictorKind::ALL, &Default::default())?;
    for m in &report.methods {
        println!("{:<20} accuracy {:?}  on sign changes {:?}", m.kind.name(), m.accuracy.map(|a| (a * 1e3).round() / 1e3), m.sign_change_accuracy.map(|a| (a * 1e3).round() / 1e3));
    }
    println!("best: {}", report.best().map(|k| k.name()).unwrap_or("none"));
    Ok(())
}
