//! Shared numerical helpers.

/// Overflow-free inverse logit, split on the sign of the argument. Returns 0
/// for `-inf` and 1 for `+inf`, matching the sentinel convention for
/// degenerate intercepts.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `logit(p) = ln(p / (1 - p))`.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Format with six significant digits for human-readable tables.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exponent) {
        let decimals = (5 - exponent).max(0) as usize;
        let s = format!("{x:.decimals$}");
        trim_zeros(&s)
    } else {
        let s = format!("{x:.5e}");
        s.to_string()
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    } else {
        s.to_string()
    }
}

/// Median and interquartile range of a sample (linear interpolation).
pub fn median_iqr(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        if lo == hi {
            sorted[lo]
        } else {
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    };
    (q(0.5), q(0.75) - q(0.25))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_is_stable_at_extremes() {
        assert_eq!(expit(f64::NEG_INFINITY), 0.0);
        assert_eq!(expit(f64::INFINITY), 1.0);
        assert_eq!(expit(-800.0), 0.0);
        assert_eq!(expit(800.0), 1.0);
        assert!((expit(0.0) - 0.5).abs() < 1e-15);
        assert!((expit(-1.4) - 0.19781611144141825).abs() < 1e-15);
    }

    #[test]
    fn logit_inverts_expit() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.2] {
            assert!((logit(expit(x)) - x).abs() < 1e-9);
        }
    }

    #[test]
    fn sig6_examples() {
        assert_eq!(sig6(0.137), "0.137");
        assert_eq!(sig6(-1.0986122), "-1.09861");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(0.0), "0");
    }

    #[test]
    fn median_iqr_simple() {
        let (med, iqr) = median_iqr(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(med, 3.0);
        assert_eq!(iqr, 2.0);
    }
}
