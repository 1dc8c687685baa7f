//! Cox-type ratio models for competing event intensities in limit order books.
//!
//! The crate estimates the relative intensities `r^i = λ^i / Σ_j λ^j` of
//! competing point processes as a multinomial logit in observable covariates,
//! without modelling the baseline intensity.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod hawkes;
pub mod lob;
pub mod optim;
pub mod prediction;
pub mod selection;
pub mod ratio;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};

/// Formats a number with 12 significant digits, like C's `%.12g`.
pub fn fmt12(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').unwrap_or((&sci, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{}", trim(mantissa), exp)
    }
}

#[cfg(test)]
mod tests {
    use super::fmt12;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt12(1.5), "1.5");
        assert_eq!(fmt12(-0.1234567890123456), "-0.123456789012");
        assert_eq!(fmt12(123456789012345.0), "1.23456789012e14");
        assert_eq!(fmt12(1e-7), "1e-7");
        assert_eq!(fmt12(0.0), "0");
        assert_eq!(fmt12(2.0 / 3.0), "0.666666666667");
    }
}
