//! Summation and small statistics helpers shared by the estimators.

/// Neumaier-compensated sum in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut carry = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Compensated sum over the values sorted by `total_cmp`, so the result does
/// not depend on the order in which the terms were produced.
pub fn canonical_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    compensated_sum(values.iter().copied())
}

/// `log((1/n) Σ exp(zᵢ))` computed with a max shift. Order independent.
///
/// Returns `-inf` when every term is `-inf`, and NaN if any term is NaN.
pub fn log_mean_exp(z: &[f64]) -> f64 {
    if z.is_empty() {
        return f64::NAN;
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if z.iter().any(|v| v.is_nan()) {
        return f64::NAN;
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    // expm1 keeps full precision when every shifted term is close to zero,
    // which is the γ → 0 regime.
    let mut shifted: Vec<f64> = z.iter().map(|v| (v - max).exp_m1()).collect();
    let mean_m1 = canonical_sum(&mut shifted) / z.len() as f64;
    max + mean_m1.ln_1p()
}

/// Median of a slice (mean of the two middle values for even length).
/// The slice is reordered.
pub fn median_in_place(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let n = values.len();
    values.sort_unstable_by(f64::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    median_in_place(&mut v)
}

/// Median absolute deviation around the median (unscaled).
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let mut dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median_in_place(&mut dev)
}

/// Normal-consistency constant for the MAD.
pub const MAD_SCALE: f64 = 1.4826;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut v = vec![1.0e16, 1.0, -1.0e16];
        v.extend(std::iter::repeat_n(1.0, 10));
        assert_eq!(compensated_sum(v.iter().copied()), 11.0);
    }

    #[test]
    fn canonical_sum_is_order_independent() {
        let a = [0.1, 0.2, 0.3, 1e-17, -0.6, 3.0e5];
        let mut b = a;
        b.reverse();
        let mut a2 = a;
        assert_eq!(canonical_sum(&mut a2).to_bits(), canonical_sum(&mut b).to_bits());
    }

    #[test]
    fn log_mean_exp_matches_naive_and_survives_underflow() {
        let z = [-1.0, -2.0, -0.5];
        let naive = (z.iter().map(|v: &f64| v.exp()).sum::<f64>() / 3.0).ln();
        assert!((log_mean_exp(&z) - naive).abs() < 1e-15);
        let far = [-2000.0, -2001.0];
        let expected = -2000.0 + ((1.0 + (-1.0f64).exp()) / 2.0).ln();
        assert!((log_mean_exp(&far) - expected).abs() < 1e-12);
        assert_eq!(log_mean_exp(&[f64::NEG_INFINITY; 2]), f64::NEG_INFINITY);
    }

    #[test]
    fn median_and_mad() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mad(&[1.0, 2.0, 3.0, 4.0, 100.0]), 1.0);
    }
}
