//! Property tests on the ratio model, the Hawkes machinery and helpers.

use coxratio::estimators::{fit_qmle, FitOptions};
use coxratio::fmt12;
use coxratio::hawkes::{compensator, hawkes_intensity, merge_events, simulate_hawkes, HawkesParams};
use coxratio::ratio::{
    gamma_example1, hessian, quasi_log_lik, ratio_probabilities, score, vartheta_probabilities, EstimationDataset,
    EventObservation, RatioModelSpec, ThetaVector, VarthetaVector,
};
use coxratio::simulator::substream;
use proptest::prelude::*;
use rand::RngCore;

fn dataset(k: usize, rows: &[(usize, Vec<f64>)]) -> EstimationDataset {
    let spec = RatioModelSpec::unnamed(k, rows[0].1.len()).unwrap();
    let obs = rows
        .iter()
        .enumerate()
        .map(|(t, (y, x))| EventObservation { session_id: 0, time: t as f64 + 0.5, process_index: *y, covariates: x.clone() })
        .collect();
    EstimationDataset::continuous(spec, obs, rows.len() as f64).unwrap()
}

fn instance() -> impl Strategy<Value = (usize, Vec<(usize, Vec<f64>)>, Vec<f64>)> {
    (2usize..=4, 1usize..=3).prop_flat_map(|(k, p)| {
        (
            Just(k),
            prop::collection::vec((0..k, prop::collection::vec(-2.0f64..2.0, p)), 5..60),
            prop::collection::vec(-3.0f64..3.0, (k - 1) * p),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probabilities_form_a_simplex((k, rows, theta) in instance()) {
        let ds = dataset(k, &rows);
        let th = ThetaVector::from_values(ds.spec(), theta).unwrap();
        for (_, x) in &rows {
            let p = ratio_probabilities(ds.spec(), &th, x).unwrap();
            prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn common_shift_of_absolute_responses_is_invisible(
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 3),
        shift in prop::collection::vec(-5.0f64..5.0, 2),
        x in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        let v = VarthetaVector::from_rows(&rows).unwrap();
        let a = vartheta_probabilities(&v, &x).unwrap();
        let b = vartheta_probabilities(&v.shifted(&shift), &x).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-12);
        }
        let via_theta = ratio_probabilities(&v.spec().unwrap(), &v.to_theta(), &x).unwrap();
        for (p, q) in a.iter().zip(&via_theta) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn loglik_is_sum_of_log_probabilities((k, rows, theta) in instance()) {
        let ds = dataset(k, &rows);
        let th = ThetaVector::from_values(ds.spec(), theta).unwrap();
        let direct: f64 = rows.iter().map(|(y, x)| ratio_probabilities(ds.spec(), &th, x).unwrap()[*y].ln()).sum();
        let ll = quasi_log_lik(&ds, &th).unwrap();
        prop_assert!(ll <= 0.0);
        prop_assert!((ll - direct).abs() <= 1e-10 * direct.abs().max(1.0));
    }

    #[test]
    fn hessian_is_negative_semidefinite((k, rows, theta) in instance()) {
        let ds = dataset(k, &rows);
        let th = ThetaVector::from_values(ds.spec(), theta).unwrap();
        let h = hessian(&ds, &th).unwrap();
        let top = h.clone().symmetric_eigen().eigenvalues.max();
        prop_assert!(top <= 1e-10 * h.amax().max(1.0));
        prop_assert!((&h - h.transpose()).amax() <= 1e-12 * h.amax().max(1.0));
    }

    #[test]
    fn relabelling_processes_keeps_the_maximum(seed in 0u64..1000) {
        let mut rng = substream(seed, "relabel", 0);
        let rows: Vec<(usize, Vec<f64>)> = (0..200)
            .map(|_| {
                let x = (rng.next_u32() as f64 / u32::MAX as f64) * 2.0 - 1.0;
                let y = if x + (rng.next_u32() as f64 / u32::MAX as f64) > 0.8 { 2 } else { (rng.next_u32() % 2) as usize };
                (y, vec![1.0, x])
            })
            .collect();
        let ds = dataset(3, &rows);
        let a = fit_qmle(&ds, &FitOptions::default()).unwrap();
        let b = fit_qmle(&ds.relabel(&[2, 0, 1]).unwrap(), &FitOptions::default()).unwrap();
        prop_assume!(a.converged && b.converged);
        prop_assert!((a.loglik - b.loglik).abs() < 1e-8);
        let s = score(&ds, &a.theta_hat).unwrap();
        prop_assert!(s.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn hawkes_intensity_bounded_below_and_compensator_grows(seed in 0u64..500, t in 1.0f64..50.0) {
        let p = HawkesParams::new(vec![0.4, 0.2], vec![vec![0.6, 0.1], vec![0.2, 0.5]], vec![vec![2.0, 1.0], vec![1.5, 1.0]]).unwrap();
        let ev = simulate_hawkes(&p, 60.0, seed).unwrap();
        prop_assert_eq!(&ev, &simulate_hawkes(&p, 60.0, seed).unwrap());
        let merged = merge_events(&ev);
        let lam = hawkes_intensity(&p, &merged, t).unwrap();
        prop_assert!(lam[0] >= 0.4 && lam[1] >= 0.2);
        let c1 = compensator(&p, &ev, t);
        let c2 = compensator(&p, &ev, t + 1.0);
        prop_assert!(c1.iter().zip(&c2).all(|(a, b)| b >= a));
    }

    #[test]
    fn twelve_digit_formatting_round_trips(x in prop::num::f64::NORMAL) {
        let y: f64 = fmt12(x).parse().unwrap();
        prop_assert!((y - x).abs() <= 1e-11 * x.abs());
    }
}

#[test]
fn substreams_are_independent_and_reproducible() {
    let draw = |name: &str, k| substream(7, name, k).next_u64();
    assert_eq!(draw("start", 0), draw("start", 0));
    assert_ne!(draw("start", 0), draw("start", 1));
    assert_ne!(draw("start", 0), draw("mcmc", 0));
    assert_ne!(substream(7, "start", 0).next_u64(), substream(8, "start", 0).next_u64());
}

/// Two-process information summed directly over the covariate states.
fn gamma_by_states(mu: f64, alpha: f64, beta: f64, v0: f64, v1: f64) -> f64 {
    let base = mu * beta / (beta - alpha);
    [-1.0f64, 1.0]
        .iter()
        .map(|&x| {
            let (w0, w1) = ((v0 * x).exp(), (v1 * x).exp());
            let p = w1 / (w0 + w1);
            0.5 * base * (w0 + w1) * p * (1.0 - p) * x * x
        })
        .sum()
}

#[test]
fn example_information_matches_state_sum() {
    let g = gamma_example1(0.5, 1.0, 2.0, -0.75, 0.75).unwrap();
    assert!((g - 0.3861948).abs() < 5e-8, "{g}");
    for &(m, a, b, v0, v1) in &[(0.5, 1.0, 2.0, -0.75, 0.75), (1.0, 0.0, 1.0, 0.2, -1.3), (0.3, 0.9, 1.0, 2.0, 0.5)] {
        let g = gamma_example1(m, a, b, v0, v1).unwrap();
        assert!((g - gamma_by_states(m, a, b, v0, v1)).abs() < 1e-13 * g.max(1.0));
    }
    assert!(gamma_example1(0.5, 2.0, 2.0, 0.0, 1.0).is_err());
}
