//! Ranks candidate covariate sets on a synthetic book stream by QAIC and QBIC.

use coxratio::lob::build_dataset;
use coxratio::selection::{candidates, search_submodels, CriterionKind, SearchStrategy, SubModel};
use coxratio::simulator::{synth_lob_stream, SynthLobConfig};

fn main() -> coxratio::Result<()> {
    let cfg = SynthLobConfig::new("table2_left", vec![vec![0.0, 2.0, 0.8, 0.0, 0.0, 0.0, 0.15]], 1, 100_000, 5);
    let out = synth_lob_stream(&cfg)?;
    let built = build_dataset(&out.sessions, &out.truth, &out.calibration)?;
    println!("{} observations", built.dataset.len());
    let named = candidates::table2_left();
    let masks: Vec<SubModel> = named.iter().map(|c| c.1.clone()).collect();
    for crit in [CriterionKind::Qaic, CriterionKind::Qbic] {
        println!("{}:", crit.name());
        for m in search_submodels(&built.dataset, crit, SearchStrategy::Exhaustive, Some(&masks))? {
            let label = &named.iter().find(|c| c.1 == m.submodel).unwrap().0;
            println!("  {} {:<16} d={} loglik {:.1}", m.rank, label, m.d, m.loglik);
        }
    }
    Ok(())
}
