//! Prediction and support-recovery measures.

use nalgebra::DVector;

use crate::data::{Dataset, ModelParams};
use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

fn squared_errors(test: &Dataset, params: &ModelParams) -> Vec<f64> {
    params.residuals(test).iter().map(|r| r * r).collect()
}

/// Root mean squared prediction error, intercept included in the prediction.
pub fn rmspe(test: &Dataset, params: &ModelParams) -> f64 {
    let mut sq = squared_errors(test, params);
    sq.sort_by(f64::total_cmp);
    (compensated_sum(sq) / test.n() as f64).sqrt()
}

/// `(1/(p+1)) Σⱼ (βⱼ* − β̂ⱼ)²` over the intercept and all coefficients.
pub fn mse_coefficients(true_beta: &DVector<f64>, est_beta: &DVector<f64>) -> Result<f64> {
    if true_beta.len() != est_beta.len() {
        return Err(Error::InvalidInput(format!(
            "coefficient vectors differ in length: {} vs {}",
            true_beta.len(),
            est_beta.len()
        )));
    }
    let m = true_beta.len() as f64;
    Ok(compensated_sum(true_beta.iter().zip(est_beta.iter()).map(|(a, b)| (a - b) * (a - b))) / m)
}

/// True positive and true negative rates of the estimated support over the
/// p slope coefficients. A rate with an empty reference set is NaN.
pub fn tpr_tnr(true_beta: &DVector<f64>, est_beta: &DVector<f64>) -> Result<(f64, f64)> {
    if true_beta.len() != est_beta.len() {
        return Err(Error::InvalidInput(format!(
            "coefficient vectors differ in length: {} vs {}",
            true_beta.len(),
            est_beta.len()
        )));
    }
    let (mut pos, mut tp, mut neg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (t, e) in true_beta.iter().zip(est_beta.iter()) {
        if *t != 0.0 {
            pos += 1;
            tp += usize::from(*e != 0.0);
        } else {
            neg += 1;
            tn += usize::from(*e == 0.0);
        }
    }
    Ok((tp as f64 / pos as f64, tn as f64 / neg as f64))
}

/// Root trimmed mean squared prediction error: the mean of the
/// `h = ⌊(n+1)(1−trim)⌋` smallest squared errors (h capped at n).
pub fn rtmspe(test: &Dataset, params: &ModelParams, trim: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&trim) {
        return Err(Error::InvalidInput(format!("trim must lie in [0, 1), got {trim}")));
    }
    let n = test.n();
    let h = trimmed_count(n, trim);
    let mut sq = squared_errors(test, params);
    sq.sort_by(f64::total_cmp);
    Ok((compensated_sum(sq[..h].iter().copied()) / h as f64).sqrt())
}

/// `⌊(n+1)(1−trim)⌋`, clamped to `[1, n]`.
pub fn trimmed_count(n: usize, trim: f64) -> usize {
    let h = ((n as f64 + 1.0) * (1.0 - trim)).floor() as usize;
    h.clamp(1, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn line_data(y: Vec<f64>) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..y.len()).map(|i| vec![i as f64]).collect();
        Dataset::from_rows(&rows, y).unwrap()
    }

    #[test]
    fn rmspe_values() {
        let data = line_data(vec![1.0, 3.0, 5.0, 7.0]);
        let exact = ModelParams::new(1.0, DVector::from_vec(vec![2.0]), 1.0).unwrap();
        assert_eq!(rmspe(&data, &exact), 0.0);
        let off = ModelParams::new(1.0 - 0.7, DVector::from_vec(vec![2.0]), 1.0).unwrap();
        assert_abs_diff_eq!(rmspe(&data, &off), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn mse_values() {
        let t = DVector::from_vec(vec![0.0, 1.0, 2.0, 0.0]);
        assert_eq!(mse_coefficients(&t, &t).unwrap(), 0.0);
        let mut e = t.clone();
        e[2] += 0.3;
        assert_abs_diff_eq!(mse_coefficients(&t, &e).unwrap(), 0.09 / 4.0, epsilon = 1e-16);
        assert!(mse_coefficients(&t, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn support_rates() {
        let mut truth = DVector::zeros(100);
        for j in [0, 1, 3, 6, 10] {
            truth[j] = 1.0;
        }
        assert_eq!(tpr_tnr(&truth, &truth).unwrap(), (1.0, 1.0));
        assert_eq!(tpr_tnr(&truth, &DVector::zeros(100)).unwrap(), (0.0, 1.0));
        let mut extra = truth.clone();
        extra[50] = -0.2;
        let (tpr, tnr) = tpr_tnr(&truth, &extra).unwrap();
        assert_eq!(tpr, 1.0);
        assert_abs_diff_eq!(tnr, 94.0 / 95.0, epsilon = 1e-15);
    }

    #[test]
    fn trimmed_counts() {
        assert_eq!(trimmed_count(2069, 0.01), 2049);
        assert_eq!(trimmed_count(10, 0.0), 10);
        assert_eq!(trimmed_count(59, 0.25), 45);
    }

    #[test]
    fn trimming_drops_gross_outlier() {
        let mut y: Vec<f64> = (0..10).map(|i| i as f64 + if i % 2 == 0 { 0.1 } else { -0.1 }).collect();
        y[7] += 100.0;
        let data = line_data(y);
        let params = ModelParams::new(0.0, DVector::from_vec(vec![1.0]), 1.0).unwrap();
        assert_abs_diff_eq!(rtmspe(&data, &params, 0.0).unwrap(), rmspe(&data, &params), epsilon = 1e-15);
        // h = ⌊11·0.85⌋ = 9 keeps the nine clean points
        assert_abs_diff_eq!(rtmspe(&data, &params, 0.15).unwrap(), 0.1, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn rtmspe_non_increasing_in_trim(
            y in proptest::collection::vec(-50.0f64..50.0, 3..40),
            a in 0.0f64..0.95, b in 0.0f64..0.95,
        ) {
            let data = line_data(y);
            let params = ModelParams::new(0.5, DVector::from_vec(vec![0.3]), 1.0).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(rtmspe(&data, &params, hi).unwrap() <= rtmspe(&data, &params, lo).unwrap() + 1e-12);
        }

        #[test]
        fn metrics_ignore_row_order(
            y in proptest::collection::vec(-50.0f64..50.0, 3..30),
            seed in 0u64..1000,
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let data = line_data(y);
            let mut perm: Vec<usize> = (0..data.n()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled = data.select_rows(&perm).unwrap();
            let params = ModelParams::new(0.5, DVector::from_vec(vec![0.3]), 1.0).unwrap();
            prop_assert_eq!(rmspe(&data, &params), rmspe(&shuffled, &params));
            prop_assert_eq!(rtmspe(&data, &params, 0.2).unwrap(), rtmspe(&shuffled, &params, 0.2).unwrap());
        }
    }
}
