//! Goodness-of-fit tests and Monte-Carlo summaries.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Kolmogorov–Smirnov statistic of `sample` against the continuous `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            let lo = f - k as f64 / n;
            let hi = (k + 1) as f64 / n - f;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the KS statistic `d` for sample size `n`, using the
/// Kolmogorov distribution with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// KS test of `sample` against Exp(1); returns `(statistic, p_value)`.
pub fn ks_test_exponential(sample: &[f64]) -> (f64, f64) {
    let d = ks_statistic(sample, |x| if x <= 0.0 { 0.0 } else { 1.0 - (-x).exp() });
    (d, ks_p_value(d, sample.len()))
}

/// Anderson–Darling normality test with mean and variance estimated from the
/// sample. Returns the modified statistic `A*² = A²(1 + 0.75/n + 2.25/n²)`.
pub fn anderson_darling_normal(sample: &[f64]) -> f64 {
    let n = sample.len();
    let m = mean(sample);
    let sd = variance(sample).sqrt();
    let mut z: Vec<f64> = sample.iter().map(|x| (x - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut s = 0.0;
    for k in 0..n {
        let f_lo = standard_normal_cdf(z[k]).clamp(1e-300, 1.0 - 1e-16);
        let f_hi = standard_normal_cdf(z[n - 1 - k]).clamp(1e-300, 1.0 - 1e-16);
        s += (2.0 * k as f64 + 1.0) * (f_lo.ln() + (1.0 - f_hi).ln());
    }
    let a2 = -nf - s / nf;
    a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf))
}

/// Critical value of the modified Anderson–Darling statistic at the 1% level
/// (normal law, both parameters estimated).
pub const AD_CRITICAL_1PCT: f64 = 1.035;

/// Upper tail `P(χ²_dof > x)`.
pub fn chi_square_sf(x: f64, dof: f64) -> f64 {
    match ChiSquared::new(dof) {
        Ok(d) => 1.0 - d.cdf(x),
        Err(_) => f64::NAN,
    }
}

/// Effective sample size of a Markov chain trace (Geyer's initial positive
/// sequence estimator).
pub fn effective_sample_size(trace: &[f64]) -> f64 {
    let n = trace.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(trace);
    let centered: Vec<f64> = trace.iter().map(|x| x - m).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let autocov = |lag: usize| {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let mut tau = -1.0;
    let mut lag = 0;
    let mut prev_pair = f64::INFINITY;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        // enforce the monotone sequence
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Exp, StandardNormal};

    #[test]
    fn summaries() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(variance(&[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }

    #[test]
    fn ks_accepts_exponential_and_rejects_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let exp = Exp::new(1.0).unwrap();
        let good: Vec<f64> = (0..2000).map(|_| rng.sample(exp)).collect();
        assert!(ks_test_exponential(&good).1 > 0.01);
        let bad: Vec<f64> = good.iter().map(|x| 1.5 * x).collect();
        assert!(ks_test_exponential(&bad).1 < 0.01);
    }

    #[test]
    fn ks_p_value_reference_points() {
        // Kolmogorov distribution: P(K > 1.36) ≈ 0.049, P(K > 1.63) ≈ 0.010
        assert!((ks_p_value(1.36 / 1e3, 1_000_000) - 0.0494).abs() < 2e-3);
        assert!((ks_p_value(1.628 / 1e3, 1_000_000) - 0.0099).abs() < 1e-3);
    }

    #[test]
    fn anderson_darling_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        assert!(anderson_darling_normal(&normal) < AD_CRITICAL_1PCT);
        let skewed: Vec<f64> = normal.iter().map(|x| x.exp()).collect();
        assert!(anderson_darling_normal(&skewed) > AD_CRITICAL_1PCT);
    }

    #[test]
    fn ess_of_iid_and_correlated_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let iid: Vec<f64> = (0..5000).map(|_| rng.sample(StandardNormal)).collect();
        let ess = effective_sample_size(&iid);
        assert!(ess > 3500.0, "{ess}");
        // AR(1) with ρ = 0.9 has τ = (1+ρ)/(1−ρ) = 19
        let mut ar = vec![0.0; 20000];
        for k in 1..ar.len() {
            let e: f64 = rng.sample(StandardNormal);
            ar[k] = 0.9 * ar[k - 1] + e;
        }
        let ess = effective_sample_size(&ar);
        assert!(ess > 20000.0 / 19.0 * 0.6 && ess < 20000.0 / 19.0 * 1.6, "{ess}");
    }

    #[test]
    fn chi_square_tail() {
        assert!((chi_square_sf(3.841, 1.0) - 0.05).abs() < 1e-3);
    }
}
