//! Log-domain helpers. All scores in this crate are natural logs; `-inf` is
//! the log of zero mass.

pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln p`, mapping zero mass to `-inf`.
#[inline]
pub fn ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        LOG_ZERO
    }
}

/// Difference of log masses where `-inf - -inf` means "no mass to lose".
#[inline]
pub fn log_ratio(num: f64, den: f64) -> f64 {
    if den == LOG_ZERO {
        LOG_ZERO
    } else {
        num - den
    }
}

/// Index of the maximum; ties resolve to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Log-softmax of arbitrary scores.
pub fn log_softmax(values: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(values);
    values.iter().map(|v| v - z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_exp_handles_zero_mass() {
        assert_eq!(log_add_exp(LOG_ZERO, LOG_ZERO), LOG_ZERO);
        assert_eq!(log_add_exp(LOG_ZERO, -1.0), -1.0);
        let v = log_add_exp(0.3f64.ln(), 0.2f64.ln());
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn sum_exp_matches_direct_sum() {
        let xs = [0.1f64, 0.2, 0.3].map(f64::ln);
        assert!((log_sum_exp(&xs) - 0.6f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[]), LOG_ZERO);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax([1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(Vec::<f64>::new()), None);
    }
}
