//! Gaussian linear model, empirical γ-cross entropy, penalized loss, MM
//! weights and the MM majorizer.
//!
//! Every density power is handled in the log domain: for gross outliers
//! `f(yᵢ|xᵢ;θ)^γ` underflows long before the loss itself stops being
//! meaningful.

use std::f64::consts::PI;

use crate::data::{Dataset, ModelParams};
use crate::error::{Error, Result};
use crate::numeric::{canonical_sum, compensated_sum, log_mean_exp};

/// Smallest σ² accepted before taking a logarithm. Anything below is reported
/// as a degenerate fit instead of being clamped.
pub const SIGMA2_VALID_FLOOR: f64 = 1e-12;

/// Divergence exponent γ and L1 weight λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaConfig {
    pub gamma: f64,
    pub lambda: f64,
}

impl GammaConfig {
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        let cfg = GammaConfig { gamma, lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 2.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 2], got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Normalized MM weights αᵢ ∝ f(yᵢ|xᵢ;θ)^γ.
#[derive(Debug, Clone, PartialEq)]
pub struct MmWeights(Vec<f64>);

impl MmWeights {
    /// Wraps already-normalized weights. Checks nonnegativity and Σα = 1.
    pub fn from_normalized(alpha: Vec<f64>) -> Result<Self> {
        if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Domain("weights must lie in [0, 1]".into()));
        }
        let total = compensated_sum(alpha.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("weights sum to {total}, expected 1")));
        }
        Ok(MmWeights(alpha))
    }

    pub fn uniform(n: usize) -> Self {
        MmWeights(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !sigma2.is_finite() {
        return Err(Error::Domain(format!("sigma2 must be finite, got {sigma2}")));
    }
    if sigma2 < SIGMA2_VALID_FLOOR {
        return Err(Error::degenerate(format!(
            "sigma2 = {sigma2:e} is below the validity floor {SIGMA2_VALID_FLOOR:e}"
        )));
    }
    Ok(())
}

/// `log φ(y; μ, σ²)`.
pub fn gaussian_log_density(y: f64, mu: f64, sigma2: f64) -> Result<f64> {
    if !(y.is_finite() && mu.is_finite() && sigma2.is_finite()) {
        return Err(Error::Domain("non-finite argument to the normal density".into()));
    }
    if sigma2 <= 0.0 {
        return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
    }
    let r = y - mu;
    Ok(-0.5 * (2.0 * PI * sigma2).ln() - r * r / (2.0 * sigma2))
}

/// `log ∫ φ(y; μ, σ²)^{1+γ} dy = −(γ/2) log(2πσ²) − ½ log(1+γ)`.
pub fn log_power_integral(sigma2: f64, gamma: f64) -> Result<f64> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Domain(format!("sigma2 must be positive and finite, got {sigma2}")));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be >= 0, got {gamma}")));
    }
    Ok(-0.5 * gamma * (2.0 * PI * sigma2).ln() - 0.5 * gamma.ln_1p())
}

/// `∫ φ(y; μ, σ²)^{1+γ} dy`; independent of μ.
pub fn power_integral(sigma2: f64, gamma: f64) -> Result<f64> {
    log_power_integral(sigma2, gamma).map(f64::exp)
}

/// Scaled squared residuals `qᵢ = rᵢ² / (2σ²)`.
fn half_scaled_sq_residuals(data: &Dataset, params: &ModelParams) -> Vec<f64> {
    let r = params.residuals(data);
    r.iter().map(|ri| ri * ri / (2.0 * params.sigma2)).collect()
}

/// `−(1/γ) log{(1/n) Σ f(yᵢ|xᵢ;θ)^γ}`, the data-dependent part of the loss.
fn log_density_power_term(q: &[f64], sigma2: f64, gamma: f64) -> Result<f64> {
    let z: Vec<f64> = q.iter().map(|qi| -gamma * qi).collect();
    let lme = log_mean_exp(&z);
    if !lme.is_finite() {
        return Err(Error::degenerate("every density weight f^γ underflowed"));
    }
    // −(1/γ)[γ·(−½ log 2πσ²) + lme]
    Ok(0.5 * (2.0 * PI * sigma2).ln() - lme / gamma)
}

/// Empirical γ-cross entropy `d̄_γ(f(y|x;θ))`.
///
/// The second term averages `∫ f(y|xᵢ;θ)^{1+γ} dy` over the rows, which for
/// the Gaussian model is the same number for every row.
pub fn empirical_gamma_cross_entropy(data: &Dataset, params: &ModelParams, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    params.validate()?;
    check_sigma2(params.sigma2)?;
    let q = half_scaled_sq_residuals(data, params);
    let first = log_density_power_term(&q, params.sigma2, gamma)?;
    let second = log_power_integral(params.sigma2, gamma)? / (1.0 + gamma);
    Ok(first + second)
}

/// `L_γ(θ; λ) = d̄_γ + λ‖β‖₁`; the intercept and σ² are not penalized.
pub fn penalized_loss(data: &Dataset, params: &ModelParams, cfg: &GammaConfig) -> Result<f64> {
    let ce = empirical_gamma_cross_entropy(data, params, cfg.gamma)?;
    if cfg.lambda == 0.0 {
        return Ok(ce);
    }
    Ok(ce + cfg.lambda * params.l1_norm())
}

/// MM weights `αᵢ = f(yᵢ|xᵢ;θ)^γ / Σₗ f(yₗ|xₗ;θ)^γ`.
///
/// The `(2πσ²)^{−γ/2}` factor cancels, leaving `αᵢ ∝ exp(−γ rᵢ²/(2σ²))`.
pub fn mm_weights(data: &Dataset, params: &ModelParams, gamma: f64) -> Result<MmWeights> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    check_sigma2(params.sigma2)?;
    let q = half_scaled_sq_residuals(data, params);
    weights_from_scaled_residuals(&q, gamma)
}

pub(crate) fn weights_from_scaled_residuals(q: &[f64], gamma: f64) -> Result<MmWeights> {
    let z: Vec<f64> = q.iter().map(|qi| -gamma * qi).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || z.iter().any(|v| v.is_nan()) {
        return Err(Error::degenerate("every MM weight underflowed"));
    }
    let mut alpha: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total = canonical_sum(&mut alpha.clone());
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::degenerate("MM weights could not be normalized"));
    }
    for a in &mut alpha {
        *a /= total;
    }
    Ok(MmWeights(alpha))
}

/// Weighted residual sum of squares `Σ αᵢ rᵢ²` for the given residuals.
pub(crate) fn weighted_sq_sum(weights: &MmWeights, residuals: &[f64]) -> f64 {
    compensated_sum(weights.as_slice().iter().zip(residuals).map(|(a, r)| a * r * r))
}

/// The MM surrogate
/// `h(θ|θ̃) = log σ² / (2(1+γ)) + ½ Σ αᵢ(θ̃) (yᵢ − β0 − xᵢᵀβ)²/σ² + λ‖β‖₁`,
/// with weights taken at `anchor`. Equal to `L_γ(θ; λ)` up to an additive
/// constant depending only on the anchor, and above it elsewhere.
pub fn majorizer_value(params: &ModelParams, anchor: &ModelParams, data: &Dataset, cfg: &GammaConfig) -> Result<f64> {
    check_sigma2(anchor.sigma2)?;
    check_sigma2(params.sigma2)?;
    let weights = mm_weights(data, anchor, cfg.gamma)?;
    majorizer_with_weights(params, &weights, data, cfg)
}

pub(crate) fn majorizer_with_weights(
    params: &ModelParams,
    weights: &MmWeights,
    data: &Dataset,
    cfg: &GammaConfig,
) -> Result<f64> {
    check_sigma2(params.sigma2)?;
    let r = params.residuals(data);
    let wrss = weighted_sq_sum(weights, r.as_slice());
    Ok(params.sigma2.ln() / (2.0 * (1.0 + cfg.gamma)) + 0.5 * wrss / params.sigma2 + cfg.lambda * params.l1_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_real_line;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Dataset {
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0);
        Dataset::new(x, y).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, p: usize) -> ModelParams {
        ModelParams::new(
            rng.random_range(-1.0..1.0),
            DVector::from_fn(p, |_, _| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(-1.5..1.5) }),
            rng.random_range(0.2..5.0),
        )
        .unwrap()
    }

    #[test]
    fn log_density_values() {
        let c = -0.5 * (2.0 * PI).ln();
        assert_abs_diff_eq!(gaussian_log_density(0.0, 0.0, 1.0).unwrap(), c, epsilon = 1e-15);
        assert_abs_diff_eq!(gaussian_log_density(0.0, 0.0, 1.0).unwrap(), -0.9189385, epsilon = 1e-7);
        assert_abs_diff_eq!(gaussian_log_density(2.0, 0.0, 1.0).unwrap(), -2.9189385, epsilon = 1e-7);
        let at_mean = gaussian_log_density(3.0, 3.0, 4.0).unwrap();
        assert_abs_diff_eq!(at_mean, -0.5 * (8.0 * PI).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(at_mean, -1.612, epsilon = 1e-3);
        // normalization by quadrature
        let mass = integrate_real_line(|y| gaussian_log_density(y, 3.0, 4.0).unwrap().exp(), &[(3.0, 2.0)], 1e-13);
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-10);
        assert!(gaussian_log_density(0.0, 0.0, 0.0).is_err());
        assert!(gaussian_log_density(f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn power_integral_closed_form_values() {
        assert_eq!(power_integral(3.7, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(power_integral(1.0, 0.5).unwrap(), 0.5157, epsilon = 1e-4);
        assert_abs_diff_eq!(power_integral(4.0, 1.0).unwrap(), 0.1410, epsilon = 1e-4);
        assert!(power_integral(0.0, 0.5).is_err());
        assert!(power_integral(1.0, -0.1).is_err());
    }

    #[test]
    fn power_integral_agrees_with_quadrature() {
        for &gamma in &[0.1, 0.5, 1.0] {
            for &sigma2 in &[0.25, 1.0, 4.0] {
                let mu = 1.3;
                let quad = integrate_real_line(
                    |y| ((1.0 + gamma) * gaussian_log_density(y, mu, sigma2).unwrap()).exp(),
                    &[(mu, sigma2_sqrt(sigma2))],
                    1e-13,
                );
                let closed = power_integral(sigma2, gamma).unwrap();
                assert!((quad - closed).abs() < 1e-8, "γ={gamma} σ²={sigma2}: {quad} vs {closed}");
            }
        }
    }

    fn sigma2_sqrt(s: f64) -> f64 {
        s.sqrt()
    }

    #[test]
    fn cross_entropy_perfect_fit_value() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0, 8.0]);
        let data = Dataset::new(x, y).unwrap();
        let params = ModelParams::new(0.0, DVector::from_vec(vec![2.0]), 1.0).unwrap();
        let gamma = 0.5;
        let value = empirical_gamma_cross_entropy(&data, &params, gamma).unwrap();
        // hand evaluation: residuals are zero, so f^γ = φ(0)^γ for each row
        let expected = 0.5 * (2.0 * PI).ln() + power_integral(1.0, gamma).unwrap().ln() / (1.0 + gamma);
        assert_abs_diff_eq!(value, expected, epsilon = 1e-14);
        assert_abs_diff_eq!(value, 0.4775, epsilon = 1e-4);
    }

    #[test]
    fn cross_entropy_matches_naive_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let data = random_dataset(&mut rng, 20, 3);
            let params = random_params(&mut rng, 3);
            let gamma = rng.random_range(0.05..1.5);
            let r = params.residuals(&data);
            let mean_f_gamma: f64 = r
                .iter()
                .map(|ri| gaussian_log_density(*ri, 0.0, params.sigma2).unwrap().exp().powf(gamma))
                .sum::<f64>()
                / 20.0;
            let naive = -mean_f_gamma.ln() / gamma + power_integral(params.sigma2, gamma).unwrap().ln() / (1.0 + gamma);
            let value = empirical_gamma_cross_entropy(&data, &params, gamma).unwrap();
            assert!((value - naive).abs() < 1e-10 * (1.0 + naive.abs()), "{value} vs {naive}");
        }
    }

    #[test]
    fn cross_entropy_small_gamma_is_mean_nll() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let data = random_dataset(&mut rng, 30, 4);
            let params = random_params(&mut rng, 4);
            let r = params.residuals(&data);
            let nll: f64 =
                r.iter().map(|ri| -gaussian_log_density(*ri, 0.0, params.sigma2).unwrap()).sum::<f64>() / 30.0;
            let value = empirical_gamma_cross_entropy(&data, &params, 1e-6).unwrap();
            assert!((value - nll).abs() <= 1e-4, "{value} vs {nll}");
        }
    }

    #[test]
    fn cross_entropy_survives_gross_outliers() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![0.0, 1.0, 1e8]);
        let data = Dataset::new(x, y).unwrap();
        let params = ModelParams::new(0.0, DVector::from_vec(vec![1.0]), 0.5).unwrap();
        let v = empirical_gamma_cross_entropy(&data, &params, 0.5).unwrap();
        assert!(v.is_finite());
        let w = mm_weights(&data, &params, 0.5).unwrap();
        assert_eq!(w.as_slice()[2], 0.0);
        assert_abs_diff_eq!(w.as_slice()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_sigma2_is_reported() {
        let data = Dataset::from_rows(&[vec![0.0], vec![1.0]], vec![0.0, 1.0]).unwrap();
        let params = ModelParams { beta0: 0.0, beta: DVector::from_vec(vec![1.0]), sigma2: 1e-13 };
        let err = empirical_gamma_cross_entropy(&data, &params, 0.1).unwrap_err();
        assert!(err.is_degenerate());
    }

    #[test]
    fn penalized_loss_adds_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let data = random_dataset(&mut rng, 10, 3);
        let mut params = random_params(&mut rng, 3);
        let ce = empirical_gamma_cross_entropy(&data, &params, 0.3).unwrap();
        let l0 = penalized_loss(&data, &params, &GammaConfig::new(0.3, 0.0).unwrap()).unwrap();
        assert_eq!(l0, ce);
        params.beta = DVector::from_vec(vec![1.0, -2.0, 0.0]);
        let ce = empirical_gamma_cross_entropy(&data, &params, 0.3).unwrap();
        let l = penalized_loss(&data, &params, &GammaConfig::new(0.3, 0.1).unwrap()).unwrap();
        assert_abs_diff_eq!(l, ce + 0.3, epsilon = 1e-14);
        params.beta = DVector::zeros(3);
        let ce = empirical_gamma_cross_entropy(&data, &params, 0.3).unwrap();
        let l = penalized_loss(&data, &params, &GammaConfig::new(0.3, 7.0).unwrap()).unwrap();
        assert_eq!(l, ce);
    }

    #[test]
    fn gamma_config_bounds() {
        assert!(GammaConfig::new(0.0, 0.1).is_err());
        assert!(GammaConfig::new(2.0, 0.1).is_ok());
        assert!(GammaConfig::new(2.5, 0.1).is_err());
        assert!(GammaConfig::new(0.5, -1.0).is_err());
    }

    #[test]
    fn weights_equal_residuals_are_uniform() {
        let data = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], vec![1.0, 3.0, 5.0]).unwrap();
        // residual 1 on every row
        let params = ModelParams::new(0.0, DVector::from_vec(vec![2.0]), 1.0).unwrap();
        let w = mm_weights(&data, &params, 0.7).unwrap();
        for a in w.as_slice() {
            assert_abs_diff_eq!(*a, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn weights_two_point_closed_form() {
        // γc²/(2σ²) = log 3 → α = (3/4, 1/4)
        let gamma = 0.5;
        let sigma2 = 2.0;
        let c = (3.0f64.ln() * 2.0 * sigma2 / gamma).sqrt();
        let data = Dataset::from_rows(&[vec![0.0], vec![0.0]], vec![0.0, c]).unwrap();
        let params = ModelParams::new(0.0, DVector::from_vec(vec![0.0]), sigma2).unwrap();
        let w = mm_weights(&data, &params, gamma).unwrap();
        assert_abs_diff_eq!(w.as_slice()[0], 0.75, epsilon = 1e-14);
        assert_abs_diff_eq!(w.as_slice()[1], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn loss_is_row_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let data = random_dataset(&mut rng, 40, 5);
        let params = random_params(&mut rng, 5);
        let mut perm: Vec<usize> = (0..40).collect();
        perm.reverse();
        perm.swap(3, 17);
        let shuffled = data.select_rows(&perm).unwrap();
        let cfg = GammaConfig::new(0.4, 0.2).unwrap();
        let a = penalized_loss(&data, &params, &cfg).unwrap();
        let b = penalized_loss(&shuffled, &params, &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn majorizer_small_gamma_gradient_is_uniform_wls() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let data = random_dataset(&mut rng, 25, 3);
        let anchor = random_params(&mut rng, 3);
        let cfg = GammaConfig { gamma: 1e-9, lambda: 0.0 };
        let r = anchor.residuals(&data);
        let h = 1e-6;
        for j in 0..3 {
            let mut plus = anchor.clone();
            plus.beta[j] += h;
            let mut minus = anchor.clone();
            minus.beta[j] -= h;
            let fd = (majorizer_value(&plus, &anchor, &data, &cfg).unwrap()
                - majorizer_value(&minus, &anchor, &data, &cfg).unwrap())
                / (2.0 * h);
            let wls: f64 = -(0..25).map(|i| r[i] * data.x()[(i, j)]).sum::<f64>() / 25.0 / anchor.sigma2;
            assert!((fd - wls).abs() < 1e-6, "j={j}: {fd} vs {wls}");
        }
    }

    #[test]
    fn majorization_holds_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut worst = f64::INFINITY;
        for _ in 0..1000 {
            let n = rng.random_range(3..30);
            let p = rng.random_range(1..6);
            let data = random_dataset(&mut rng, n, p);
            let theta = random_params(&mut rng, p);
            let anchor = random_params(&mut rng, p);
            let cfg = GammaConfig::new(rng.random_range(0.01..2.0), rng.random_range(0.0..1.0)).unwrap();
            let dh = majorizer_value(&theta, &anchor, &data, &cfg).unwrap()
                - majorizer_value(&anchor, &anchor, &data, &cfg).unwrap();
            let dl = penalized_loss(&data, &theta, &cfg).unwrap() - penalized_loss(&data, &anchor, &cfg).unwrap();
            worst = worst.min(dh - dl);
        }
        assert!(worst >= -1e-10, "worst slack {worst}");
    }

    proptest! {
        #[test]
        fn weights_are_normalized(
            resid in proptest::collection::vec(-1e3f64..1e3, 2..40),
            sigma2 in 1e-3f64..1e3,
            gamma in 1e-3f64..2.0,
        ) {
            let q: Vec<f64> = resid.iter().map(|r| r * r / (2.0 * sigma2)).collect();
            let w = weights_from_scaled_residuals(&q, gamma).unwrap();
            let total = compensated_sum(w.as_slice().iter().copied());
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(w.as_slice().iter().all(|a| (0.0..=1.0).contains(a)));
        }
    }
}
