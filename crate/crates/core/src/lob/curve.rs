//! Model versus empirical probability curves along one covariate axis.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::covariates::Primitives;
use super::recipe::{BuiltDataset, Covariate, ModelRecipe};
use super::Side;
use crate::error::{Error, Result};
use crate::fmt12;
use crate::ratio::{ratio_probabilities, ThetaVector};

/// Continuous primitive varied along the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CurveAxis {
    /// `i_1`.
    Imbalance,
    /// Spread in ticks.
    Spread,
    /// Queue in multiples of the median trade size.
    Queue(Side, usize),
}

impl CurveAxis {
    /// Imbalance if the recipe reads it, else spread, else the first queue.
    pub fn for_recipe(recipe: &ModelRecipe) -> Result<Self> {
        let leaves: Vec<&Covariate> = recipe.covariates.iter().flat_map(|c| c.leaves()).collect();
        if leaves.iter().any(|c| matches!(c, Covariate::Imbalance)) {
            return Ok(CurveAxis::Imbalance);
        }
        if leaves.iter().any(|c| matches!(c, Covariate::LogSpread | Covariate::LogSpreadSq)) {
            return Ok(CurveAxis::Spread);
        }
        if let Some(&(s, l)) = recipe.queue_levels().first() {
            return Ok(CurveAxis::Queue(s, l));
        }
        Err(Error::InvalidSpec(format!("recipe {} has no curve axis", recipe.name)))
    }

    fn observed(&self, p: &Primitives) -> f64 {
        match self {
            CurveAxis::Imbalance => p.imbalance[0],
            CurveAxis::Spread => p.spread,
            CurveAxis::Queue(s, l) => p.log_queue(*s, *l).exp(),
        }
    }

    fn set(&self, p: &mut Primitives, x: f64) {
        match self {
            CurveAxis::Imbalance => p.imbalance[0] = x,
            CurveAxis::Spread => p.spread = x,
            CurveAxis::Queue(Side::Bid, l) => p.log_q_bid[l - 1] = x.ln(),
            CurveAxis::Queue(Side::Ask, l) => p.log_q_ask[l - 1] = x.ln(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub x: f64,
    pub cell: String,
    pub model: f64,
    /// `None` when no event fell in the bin.
    pub empirical: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityCurve {
    pub axis: CurveAxis,
    pub process: usize,
    pub rows: Vec<CurveRow>,
    /// Average over cells of the count-weighted RMS gap between model and
    /// empirical frequency; NaN when no bin has data.
    pub mean_l2: f64,
}

/// Probability of `process` along `grid`, one curve per conditioning cell.
///
/// Cells are the observed combinations of the categorical primitives the
/// recipe reads (last sign, spread category, last move). Within a cell the
/// other continuous primitives are held at their cell means. Events are
/// binned to the nearest grid point.
pub fn probability_curve(
    theta: &ThetaVector,
    recipe: &ModelRecipe,
    built: &BuiltDataset,
    grid: &[f64],
    process: usize,
) -> Result<ProbabilityCurve> {
    let axis = CurveAxis::for_recipe(recipe)?;
    let spec = built.dataset.spec();
    if theta.n_covariates() != spec.n_covariates || theta.n_rows() + 1 != spec.n_processes {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: theta.len(),
        });
    }
    if process >= spec.n_processes {
        return Err(Error::InvalidArgument(format!("process {process} out of range")));
    }
    if grid.is_empty() || grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("grid must be finite and strictly increasing".into()));
    }
    if matches!(axis, CurveAxis::Spread | CurveAxis::Queue(..)) && grid[0] <= 0.0 {
        return Err(Error::InvalidArgument("grid must be positive on this axis".into()));
    }
    let leaves: Vec<&Covariate> = recipe.covariates.iter().flat_map(|c| c.leaves()).collect();
    let uses = |f: fn(&Covariate) -> bool| leaves.iter().any(|c| f(c));
    let cats = [
        ("eps", uses(|c| matches!(c, Covariate::LastSign))),
        ("s", uses(|c| matches!(c, Covariate::SpreadCat))),
        ("delta", uses(|c| matches!(c, Covariate::LastMove))),
    ];
    let cell_of = |p: &Primitives| -> (Vec<i8>, String) {
        let vals = [p.eps, p.s_cat, p.delta];
        let mut key = Vec::new();
        let mut label = Vec::new();
        for (k, (name, on)) in cats.iter().enumerate() {
            if *on {
                key.push(vals[k] as i8);
                label.push(format!("{name}={:+}", vals[k] as i8));
            }
        }
        let label = if label.is_empty() { "all".to_string() } else { label.join(";") };
        (key, label)
    };

    struct Cell {
        label: String,
        sum: Primitives,
        n: usize,
        hits: Vec<usize>,
        counts: Vec<usize>,
    }
    let mut cells: BTreeMap<Vec<i8>, Cell> = BTreeMap::new();
    let bin = |x: f64| -> usize {
        // nearest grid point; ties go to the lower point
        let k = grid.partition_point(|&g| g < x);
        if k == 0 {
            0
        } else if k == grid.len() || x - grid[k - 1] <= grid[k] - x {
            k - 1
        } else {
            k
        }
    };
    for (obs, p) in built.dataset.observations().iter().zip(&built.primitives) {
        let (key, label) = cell_of(p);
        let c = cells.entry(key).or_insert_with(|| Cell {
            label,
            sum: zeroed(p),
            n: 0,
            hits: vec![0; grid.len()],
            counts: vec![0; grid.len()],
        });
        accumulate(&mut c.sum, p);
        c.n += 1;
        let b = bin(axis.observed(p));
        c.counts[b] += 1;
        if obs.process_index == process {
            c.hits[b] += 1;
        }
    }

    let mut rows = Vec::new();
    let mut l2s = Vec::new();
    for c in cells.values() {
        let mut base = c.sum.clone();
        scale(&mut base, 1.0 / c.n as f64);
        // categorical values are constant within a cell
        let mut sse = 0.0;
        let mut w = 0usize;
        for (g, &x) in grid.iter().enumerate() {
            let mut p = base.clone();
            axis.set(&mut p, x);
            let row = recipe.covariate_row(&p);
            let probs = ratio_probabilities(spec, theta, &row)?;
            let model = probs[process];
            let count = c.counts[g];
            let empirical = (count > 0).then(|| c.hits[g] as f64 / count as f64);
            if let Some(e) = empirical {
                sse += count as f64 * (model - e).powi(2);
                w += count;
            }
            rows.push(CurveRow {
                x,
                cell: c.label.clone(),
                model,
                empirical,
                count,
            });
        }
        if w > 0 {
            l2s.push((sse / w as f64).sqrt());
        }
    }
    let mean_l2 = if l2s.is_empty() { f64::NAN } else { l2s.iter().sum::<f64>() / l2s.len() as f64 };
    Ok(ProbabilityCurve {
        axis,
        process,
        rows,
        mean_l2,
    })
}

fn map_fields(p: &mut Primitives, f: &mut dyn FnMut(&mut f64)) {
    p.imbalance.iter_mut().for_each(&mut *f);
    p.log_q_bid.iter_mut().for_each(&mut *f);
    p.log_q_ask.iter_mut().for_each(&mut *f);
    for v in [&mut p.eps, &mut p.s_cat, &mut p.delta, &mut p.spread, &mut p.h_b, &mut p.h_a] {
        f(v);
    }
}

fn zeroed(p: &Primitives) -> Primitives {
    let mut z = p.clone();
    map_fields(&mut z, &mut |v| *v = 0.0);
    z.empty_bid = 0;
    z.empty_ask = 0;
    z
}

fn accumulate(sum: &mut Primitives, p: &Primitives) {
    let mut vals = Vec::with_capacity(40);
    let mut q = p.clone();
    map_fields(&mut q, &mut |v| vals.push(*v));
    let mut k = 0;
    map_fields(sum, &mut |v| {
        *v += vals[k];
        k += 1;
    });
}

fn scale(p: &mut Primitives, c: f64) {
    map_fields(p, &mut |v| *v *= c);
}

/// CSV with columns `x,cell,model,empirical,count`; missing empirical
/// frequencies are left blank.
pub fn write_curve_csv<W: Write>(curve: &ProbabilityCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "cell", "model", "empirical", "count"])?;
    for r in &curve.rows {
        w.write_record([
            fmt12(r.x),
            r.cell.clone(),
            fmt12(r.model),
            r.empirical.map(fmt12).unwrap_or_default(),
            r.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::{build_dataset, BookEvent, BookState, Calibration, EventKind, SessionStream, LEVELS};

    fn built(recipe: &ModelRecipe) -> BuiltDataset {
        let mut events = Vec::new();
        for k in 0..40u64 {
            let mut st = BookState {
                q_bid: [100; LEVELS],
                q_ask: [100; LEVELS],
                spread_ticks: 1 + (k % 3) as u32,
                last_trade_sign: if k % 2 == 0 { 1 } else { -1 },
                last_price_move: 0,
            };
            st.q_bid[0] = 10 + 10 * (k % 7);
            events.push(BookEvent {
                session_id: 0,
                time: k as f64,
                kind: if k % 5 < 2 { EventKind::MB } else { EventKind::MA },
                level: 1,
                size: 100,
                state: st,
            });
        }
        let calib = Calibration {
            spread_mean_ticks: Some(2.0),
            ..Default::default()
        };
        build_dataset(&[SessionStream { session_id: 0, events }], recipe, &calib).unwrap()
    }

    #[test]
    fn logistic_at_zero_is_half() {
        let r = ModelRecipe::named("imbalance").unwrap();
        let b = built(&r);
        let theta = ThetaVector::from_values(b.dataset.spec(), vec![0.0, 2.0]).unwrap();
        let c = probability_curve(&theta, &r, &b, &[0.0], 1).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert!((c.rows[0].model - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cells_follow_categoricals() {
        let r = ModelRecipe::named("imbalance_last_spread").unwrap();
        let b = built(&r);
        let theta = ThetaVector::from_values(b.dataset.spec(), vec![0.1, 1.0, 0.5, -0.2]).unwrap();
        let grid: Vec<f64> = (-10..=10).map(|k| k as f64 / 10.0).collect();
        let c = probability_curve(&theta, &r, &b, &grid, 1).unwrap();
        let cells: std::collections::BTreeSet<_> = c.rows.iter().map(|r| r.cell.clone()).collect();
        assert_eq!(cells.len(), 4);
        assert_eq!(c.rows.len(), 4 * grid.len());
        let total: usize = c.rows.iter().map(|r| r.count).sum();
        assert_eq!(total, b.dataset.len());
        assert!(c.rows.iter().any(|r| r.empirical.is_none()));
        let mut out = Vec::new();
        write_curve_csv(&c, &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("x,cell,model,empirical,count\n"));
    }

    #[test]
    fn bad_grid_rejected() {
        let r = ModelRecipe::named("imbalance").unwrap();
        let b = built(&r);
        let theta = ThetaVector::zeros(b.dataset.spec());
        assert!(probability_curve(&theta, &r, &b, &[], 1).is_err());
        assert!(probability_curve(&theta, &r, &b, &[0.5, 0.1], 1).is_err());
    }
}
