//! γ-divergence for regression on one-dimensional Gaussian conditional
//! models, evaluated by quadrature over `y` and exact summation over a finite
//! set of `x` atoms.
//!
//! A contaminated conditional density is
//! `g(y|x) = (1 − ε(x))·f(y|x;θ*) + ε(x)·δ(y|x)` with `δ` a narrow Gaussian
//! centred at an outlier location `y†(x)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, ModelParams};
use crate::error::{Error, Result};
use crate::model::{penalized_loss, GammaConfig};
use crate::quadrature::integrate_real_line;
use crate::solver::{fit, FitConfig};

/// Absolute tolerance of every `y` integral.
pub const QUAD_TOL: f64 = 1e-10;

/// Default width of the contamination density as a multiple of σ*.
pub const DEFAULT_DELTA_SD: f64 = 0.01;

/// One support point of the covariate distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct XAtom {
    pub x: Vec<f64>,
    pub prob: f64,
}

impl XAtom {
    pub fn new(x: Vec<f64>, prob: f64) -> Self {
        XAtom { x, prob }
    }
}

pub type XFunction = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Contamination ratio, constant or varying with `x`.
#[derive(Clone)]
pub enum Epsilon {
    Constant(f64),
    ByX(XFunction),
}

impl Epsilon {
    pub fn at(&self, x: &[f64]) -> f64 {
        match self {
            Epsilon::Constant(e) => *e,
            Epsilon::ByX(f) => f(x),
        }
    }
}

impl fmt::Debug for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epsilon::Constant(e) => write!(f, "Constant({e})"),
            Epsilon::ByX(_) => write!(f, "ByX(..)"),
        }
    }
}

/// Target model plus outliers concentrated around `delta_location(x)`.
#[derive(Clone)]
pub struct ContaminationModel {
    pub target: ModelParams,
    pub delta_location: XFunction,
    /// Standard deviation of the contamination density, in units of σ*.
    pub delta_sd: f64,
    pub epsilon: Epsilon,
    pub atoms: Vec<XAtom>,
}

impl fmt::Debug for ContaminationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContaminationModel")
            .field("target", &self.target)
            .field("delta_sd", &self.delta_sd)
            .field("epsilon", &self.epsilon)
            .field("atoms", &self.atoms)
            .finish_non_exhaustive()
    }
}

impl ContaminationModel {
    pub fn new(target: ModelParams, atoms: Vec<XAtom>, delta_location: XFunction, epsilon: Epsilon) -> Result<Self> {
        let model = ContaminationModel { target, delta_location, delta_sd: DEFAULT_DELTA_SD, epsilon, atoms };
        model.validate()?;
        Ok(model)
    }

    /// The uncontaminated model `g = f_θ*`.
    pub fn clean(target: ModelParams, atoms: Vec<XAtom>) -> Result<Self> {
        Self::new(target, atoms, Arc::new(|_| 0.0), Epsilon::Constant(0.0))
    }

    pub fn with_delta_sd(mut self, delta_sd: f64) -> Result<Self> {
        self.delta_sd = delta_sd;
        self.validate()?;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: Epsilon) -> Result<Self> {
        self.epsilon = epsilon;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        if self.atoms.is_empty() {
            return Err(Error::InvalidInput("the covariate distribution needs at least one atom".into()));
        }
        let p = self.target.p();
        let mut total = 0.0;
        for (k, atom) in self.atoms.iter().enumerate() {
            if atom.x.len() != p {
                return Err(Error::InvalidInput(format!(
                    "atom {k} has {} covariates, the model has {p}",
                    atom.x.len()
                )));
            }
            if !(atom.prob > 0.0 && atom.prob.is_finite()) {
                return Err(Error::InvalidInput(format!("atom {k} has probability {}", atom.prob)));
            }
            let eps = self.epsilon.at(&atom.x);
            if !(0.0..0.5).contains(&eps) {
                return Err(Error::Domain(format!("ε = {eps} at atom {k} is outside [0, 0.5)")));
            }
            if !(self.delta_location)(&atom.x).is_finite() {
                return Err(Error::InvalidInput(format!("outlier location at atom {k} is not finite")));
            }
            total += atom.prob;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("atom probabilities sum to {total}, not 1")));
        }
        if !(self.delta_sd > 0.0 && self.delta_sd.is_finite()) {
            return Err(Error::InvalidInput(format!("contamination width {} must be positive", self.delta_sd)));
        }
        Ok(())
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self.epsilon, Epsilon::Constant(_))
    }

    fn resolve(&self, atom: &XAtom) -> MixtureAtom {
        let sigma = self.target.sigma2.sqrt();
        let width = self.delta_sd * sigma;
        MixtureAtom {
            mu: mean(&self.target, &atom.x),
            sigma2: self.target.sigma2,
            sigma,
            center: (self.delta_location)(&atom.x),
            width2: width * width,
            width,
            eps: self.epsilon.at(&atom.x),
        }
    }

    fn probs(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.prob).collect()
    }

    /// Draws `(x, y)` pairs from `g(x)·g(y|x)`.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Dataset> {
        let p = self.target.p();
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = self.atoms.len() - 1;
            for (j, a) in self.atoms.iter().enumerate() {
                acc += a.prob;
                if u < acc {
                    k = j;
                    break;
                }
            }
            let m = self.resolve(&self.atoms[k]);
            let z: f64 = rng.sample(StandardNormal);
            let outlier = rng.random::<f64>() < m.eps;
            y.push(if outlier { m.center + m.width * z } else { m.mu + m.sigma * z });
            rows.push(self.atoms[k].x.clone());
        }
        if p == 0 {
            return Err(Error::InvalidInput("sampling needs at least one covariate".into()));
        }
        Dataset::from_rows(&rows, y)
    }
}

#[derive(Debug, Clone, Copy)]
struct MixtureAtom {
    mu: f64,
    sigma2: f64,
    sigma: f64,
    center: f64,
    width2: f64,
    width: f64,
    eps: f64,
}

fn mean(params: &ModelParams, x: &[f64]) -> f64 {
    params.beta0 + x.iter().zip(params.beta.iter()).map(|(a, b)| a * b).sum::<f64>()
}

fn ln_normal(y: f64, mu: f64, sigma2: f64) -> f64 {
    let r = y - mu;
    -0.5 * (2.0 * PI * sigma2).ln() - r * r / (2.0 * sigma2)
}

/// A conditional density evaluated at one atom.
#[derive(Debug, Clone, Copy)]
enum Conditional {
    Normal { mu: f64, sigma2: f64 },
    Mixture(MixtureAtom),
}

impl Conditional {
    fn model(params: &ModelParams, x: &[f64]) -> Self {
        Conditional::Normal { mu: mean(params, x), sigma2: params.sigma2 }
    }

    fn ln_density(&self, y: f64) -> f64 {
        match *self {
            Conditional::Normal { mu, sigma2 } => ln_normal(y, mu, sigma2),
            Conditional::Mixture(m) => {
                let clean = ln_normal(y, m.mu, m.sigma2);
                if m.eps == 0.0 {
                    return clean;
                }
                let a = (1.0 - m.eps).ln() + clean;
                let b = m.eps.ln() + ln_normal(y, m.center, m.width2);
                let hi = a.max(b);
                if hi == f64::NEG_INFINITY {
                    return hi;
                }
                hi + ((a - hi).exp() + (b - hi).exp()).ln()
            }
        }
    }

    fn push_bumps(&self, out: &mut Vec<(f64, f64)>) {
        match *self {
            Conditional::Normal { mu, sigma2 } => out.push((mu, sigma2.sqrt())),
            Conditional::Mixture(m) => {
                out.push((m.mu, m.sigma));
                if m.eps > 0.0 {
                    out.push((m.center, m.width));
                }
            }
        }
    }
}

fn bumps(a: &Conditional, b: &Conditional) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(4);
    a.push_bumps(&mut out);
    b.push_bumps(&mut out);
    out
}

/// `∫ g(y) f(y)^γ dy` and `∫ f(y)^{1+γ} dy` at one atom.
fn atom_integrals(g: &Conditional, f: &Conditional, gamma: f64) -> (f64, f64) {
    let cross = integrate_real_line(|y| (g.ln_density(y) + gamma * f.ln_density(y)).exp(), &bumps(g, f), QUAD_TOL);
    let power = integrate_real_line(|y| ((1.0 + gamma) * f.ln_density(y)).exp(), &bumps(f, f), QUAD_TOL);
    (cross, power)
}

/// `d_γ(g, f; w)` from per-atom conditionals and base weights `w`.
fn cross_entropy(pairs: &[(Conditional, Conditional)], weights: &[f64], gamma: f64) -> Result<f64> {
    let mut cross = 0.0;
    let mut power = 0.0;
    for ((g, f), w) in pairs.iter().zip(weights) {
        let (c, p) = atom_integrals(g, f, gamma);
        cross += w * c;
        power += w * p;
    }
    if !(cross > 0.0 && power > 0.0) {
        return Err(Error::degenerate("a γ-cross entropy integral underflowed to zero"));
    }
    Ok(-cross.ln() / gamma + power.ln() / (1.0 + gamma))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("γ = {gamma} must be positive")));
    }
    Ok(())
}

fn check_params(model: &ContaminationModel, f: &ModelParams) -> Result<()> {
    f.validate()?;
    if f.p() != model.target.p() {
        return Err(Error::InvalidInput(format!(
            "model has {} covariates, the target has {}",
            f.p(),
            model.target.p()
        )));
    }
    Ok(())
}

/// `d_γ(g, f; g(x))` with `g` the contaminated conditional.
pub fn gamma_cross_entropy_quadrature(g_model: &ContaminationModel, f_params: &ModelParams, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_params(g_model, f_params)?;
    let pairs: Vec<_> = g_model
        .atoms
        .iter()
        .map(|a| (Conditional::Mixture(g_model.resolve(a)), Conditional::model(f_params, &a.x)))
        .collect();
    cross_entropy(&pairs, &g_model.probs(), gamma)
}

/// `d_γ(g, g; g(x))`.
pub fn gamma_self_entropy(g_model: &ContaminationModel, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let pairs: Vec<_> = g_model
        .atoms
        .iter()
        .map(|a| {
            let m = Conditional::Mixture(g_model.resolve(a));
            (m, m)
        })
        .collect();
    cross_entropy(&pairs, &g_model.probs(), gamma)
}

/// `D_γ(g, f; g(x)) = −d_γ(g, g) + d_γ(g, f)`.
pub fn gamma_divergence(g_model: &ContaminationModel, f_params: &ModelParams, gamma: f64) -> Result<f64> {
    Ok(gamma_cross_entropy_quadrature(g_model, f_params, gamma)? - gamma_self_entropy(g_model, gamma)?)
}

/// `D_γ(g, f; w)` between two Gaussian conditionals; the atom weights act as
/// the (not necessarily normalized) base measure.
pub fn model_gamma_divergence(g: &ModelParams, f: &ModelParams, atoms: &[XAtom], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    g.validate()?;
    f.validate()?;
    let weights: Vec<f64> = atoms.iter().map(|a| a.prob).collect();
    let cross: Vec<_> = atoms.iter().map(|a| (Conditional::model(g, &a.x), Conditional::model(f, &a.x))).collect();
    let own: Vec<_> = atoms.iter().map(|a| (Conditional::model(g, &a.x), Conditional::model(g, &a.x))).collect();
    Ok(cross_entropy(&cross, &weights, gamma)? - cross_entropy(&own, &weights, gamma)?)
}

/// `∫ D_KL(g(·|x), f(·|x)) g(x) dx`.
pub fn average_kl_divergence(g_model: &ContaminationModel, f_params: &ModelParams) -> Result<f64> {
    check_params(g_model, f_params)?;
    let mut total = 0.0;
    for atom in &g_model.atoms {
        let g = Conditional::Mixture(g_model.resolve(atom));
        let f = Conditional::model(f_params, &atom.x);
        let kl = integrate_real_line(
            |y| {
                let lg = g.ln_density(y);
                if lg == f64::NEG_INFINITY {
                    return 0.0;
                }
                let v = lg.exp() * (lg - f.ln_density(y));
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            },
            &bumps(&g, &f),
            QUAD_TOL,
        );
        total += atom.prob * kl;
    }
    Ok(total)
}

/// `ln ν_f(x)^γ = ln ∫ δ(y|x) f(y|x)^γ dy` at one atom. The integrand is
/// scaled by its value at the outlier centre so that overlaps far below the
/// quadrature tolerance keep their relative accuracy.
fn ln_atom_overlap(m: &MixtureAtom, f: &Conditional, gamma: f64) -> f64 {
    let at_center = f.ln_density(m.center);
    let scaled = integrate_real_line(
        |y| (ln_normal(y, m.center, m.width2) + gamma * (f.ln_density(y) - at_center)).exp(),
        &[(m.center, m.width)],
        QUAD_TOL,
    );
    gamma * at_center + scaled.ln()
}

/// `ln ν^γ` with `ν = {∫ ν_f(x)^γ g(x) dx}^{1/γ}`.
pub fn ln_nu_power(model: &ContaminationModel, f: &ModelParams, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_params(model, f)?;
    let terms: Vec<f64> = model
        .atoms
        .iter()
        .map(|a| a.prob.ln() + ln_atom_overlap(&model.resolve(a), &Conditional::model(f, &a.x), gamma))
        .collect();
    Ok(ln_sum_exp(&terms))
}

/// `ν_{f,γ}`.
pub fn nu(model: &ContaminationModel, f: &ModelParams, gamma: f64) -> Result<f64> {
    Ok((ln_nu_power(model, f, gamma)? / gamma).exp())
}

fn ln_sum_exp(v: &[f64]) -> f64 {
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + v.iter().map(|t| (t - hi).exp()).sum::<f64>().ln()
}

/// `−(1/γ)·ln(1 + E/B)` where `B = ∫∫ f* f^γ (1 − ε) g(x)` and
/// `E = ∫ ν_f(x)^γ ε(x) g(x) dx`: the part of `d_γ(g, f; g)` that the clean
/// cross entropy on the `(1 − ε)g` base measure does not capture.
fn contamination_excess(model: &ContaminationModel, f: &ModelParams, gamma: f64) -> f64 {
    let mut clean = 0.0;
    let mut ln_excess = Vec::with_capacity(model.atoms.len());
    for atom in &model.atoms {
        let m = model.resolve(atom);
        let fc = Conditional::model(f, &atom.x);
        let target = Conditional::Normal { mu: m.mu, sigma2: m.sigma2 };
        let overlap = integrate_real_line(
            |y| (target.ln_density(y) + gamma * fc.ln_density(y)).exp(),
            &bumps(&target, &fc),
            QUAD_TOL,
        );
        clean += atom.prob * (1.0 - m.eps) * overlap;
        if m.eps > 0.0 {
            ln_excess.push(atom.prob.ln() + m.eps.ln() + ln_atom_overlap(&m, &fc, gamma));
        }
    }
    let ratio = (ln_sum_exp(&ln_excess) - clean.ln()).exp();
    -ratio.ln_1p() / gamma
}

/// `D_γ(g, f_θ; g) − D_γ(g, f_θ*; g) − D_γ(f_θ*, f_θ; g)` for constant ε.
///
/// The four cross entropies are combined analytically before evaluation so
/// that the result is accurate far below the size of the individual terms.
pub fn pythagorean_residual_homogeneous(model: &ContaminationModel, theta: &ModelParams, gamma: f64) -> Result<f64> {
    if !model.is_homogeneous() {
        return Err(Error::Config("the homogeneous relation needs a constant ε".into()));
    }
    pythagorean_residual(model, theta, gamma)
}

/// `D_γ(g, f_θ; g) − D_γ(g, f_θ*; g) − D_γ(f_θ*, f_θ; (1 − ε(x))g)`.
pub fn pythagorean_residual_heterogeneous(model: &ContaminationModel, theta: &ModelParams, gamma: f64) -> Result<f64> {
    pythagorean_residual(model, theta, gamma)
}

// With constant ε the base measures g and (1 − ε)g differ by a constant
// factor, which cancels inside D_γ, so both relations share this form. The
// normalizing term ∫ f^{1+γ} dy does not depend on x for a homoscedastic
// Gaussian, so its base-measure shift is the same for θ and θ* and drops out.
fn pythagorean_residual(model: &ContaminationModel, theta: &ModelParams, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    check_params(model, theta)?;
    if model.atoms.iter().all(|a| model.epsilon.at(&a.x) == 0.0) {
        return Ok(0.0);
    }
    Ok(contamination_excess(model, theta, gamma) - contamination_excess(model, &model.target, gamma))
}

/// Base measure of the third divergence in a Pythagorean check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseMeasure {
    /// `g(x)`.
    Covariate,
    /// `(1 − ε(x))·g(x)`.
    CleanShare,
}

/// The same residuals evaluated term by term, each divergence by its own
/// quadrature calls. Accurate only while the residual is well above the
/// rounding level of the individual divergences.
pub fn pythagorean_residual_by_terms(
    model: &ContaminationModel,
    theta: &ModelParams,
    gamma: f64,
    base: BaseMeasure,
) -> Result<f64> {
    let atoms: Vec<XAtom> = match base {
        BaseMeasure::Covariate => model.atoms.clone(),
        BaseMeasure::CleanShare => {
            model.atoms.iter().map(|a| XAtom::new(a.x.clone(), a.prob * (1.0 - model.epsilon.at(&a.x)))).collect()
        }
    };
    let to_theta = gamma_divergence(model, theta, gamma)?;
    let to_target = gamma_divergence(model, &model.target, gamma)?;
    let between = model_gamma_divergence(&model.target, theta, &atoms, gamma)?;
    Ok(to_theta - to_target - between)
}

/// `ψ(y|x;θ) = φ^γ·(s − ∂b_γ/∂θ)` over `(β0, β1, …, βp, σ²)`, with `φ` the
/// Gaussian density, `s` its score and
/// `b_γ = (1/(1+γ))·log[(2πσ²)^{−γ/2}(1+γ)^{−1/2}] + λ‖β‖₁`.
pub fn psi_function(y: f64, x: &[f64], params: &ModelParams, cfg: &GammaConfig) -> Result<DVector<f64>> {
    cfg.validate()?;
    params.validate()?;
    let p = params.p();
    if x.len() != p {
        return Err(Error::InvalidInput(format!("x has {} entries, the model has {p}", x.len())));
    }
    let gamma = cfg.gamma;
    let s2 = params.sigma2;
    let r = y - mean(params, x);
    let phi_gamma = (gamma * ln_normal(y, mean(params, x), s2)).exp();
    let mut psi = DVector::zeros(p + 2);
    if phi_gamma == 0.0 {
        return Ok(psi);
    }
    psi[0] = phi_gamma * r / s2;
    for j in 0..p {
        let b = params.beta[j];
        let penalty = if b > 0.0 {
            cfg.lambda
        } else if b < 0.0 {
            -cfg.lambda
        } else {
            0.0
        };
        psi[j + 1] = phi_gamma * (r * x[j] / s2 - penalty);
    }
    let score = -0.5 / s2 + r * r / (2.0 * s2 * s2);
    let db = -gamma / (2.0 * (1.0 + gamma) * s2);
    psi[p + 1] = phi_gamma * (score - db);
    Ok(psi)
}

/// `Σᵢ ψ(yᵢ|xᵢ;θ)`.
pub fn psi_sum(data: &Dataset, params: &ModelParams, cfg: &GammaConfig) -> Result<DVector<f64>> {
    let mut total = DVector::zeros(data.p() + 2);
    for i in 0..data.n() {
        let x: Vec<f64> = data.x().row(i).iter().copied().collect();
        total += psi_function(data.y()[i], &x, params, cfg)?;
    }
    Ok(total)
}

/// Gradient of the penalized loss over `(β0, β, σ²)` recovered from ψ:
/// `−Σψ / Σφ^γ`. Valid wherever every `βⱼ ≠ 0`.
pub fn loss_gradient_from_psi(data: &Dataset, params: &ModelParams, cfg: &GammaConfig) -> Result<DVector<f64>> {
    let mut weight = 0.0;
    for i in 0..data.n() {
        weight += (cfg.gamma * ln_normal(data.y()[i], params.predict_row(data, i), params.sigma2)).exp();
    }
    if !(weight > 0.0) {
        return Err(Error::degenerate("every density power underflowed"));
    }
    Ok(-psi_sum(data, params, cfg)? / weight)
}

// ---------------------------------------------------------------------------
// Verification suites

/// One invariant evaluated at one point of a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(suite: &'static str, name: String, value: f64, bound: f64) -> Self {
        Check { suite, name, value, bound, passed: value <= bound }
    }

    fn at_least(suite: &'static str, name: String, value: f64, bound: f64) -> Self {
        Check { suite, name, value, bound, passed: value >= bound }
    }

    /// Distance to the bound on the passing side; negative when failed.
    pub fn margin(&self) -> f64 {
        if self.passed {
            (self.bound - self.value).abs()
        } else {
            -(self.bound - self.value).abs()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub gammas: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Random (g, f) pairs in the divergence-axiom suite.
    pub cases: usize,
    pub seed: u64,
    /// Multiplies every tolerance; must be positive.
    pub tolerance_scale: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { gammas: vec![0.1, 0.5], epsilons: vec![0.1, 0.3], cases: 20, seed: 0, tolerance_scale: 1.0 }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_scale > 0.0 && self.tolerance_scale.is_finite()) {
            return Err(Error::Config(format!("tolerance scale {} must be positive", self.tolerance_scale)));
        }
        if self.gammas.is_empty() || self.gammas.iter().any(|g| !(*g > 0.0 && *g <= 2.0)) {
            return Err(Error::Config("every γ must lie in (0, 2]".into()));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(0.0..0.5).contains(e)) {
            return Err(Error::Config("every ε must lie in [0, 0.5)".into()));
        }
        if self.cases == 0 {
            return Err(Error::Config("the divergence suite needs at least one case".into()));
        }
        Ok(())
    }
}

/// Outlier offsets, in units of σ*, for the decay checks.
pub const DECAY_GRID: [f64; 13] = [10.0, 12.5, 15.0, 17.5, 20.0, 22.5, 25.0, 27.5, 30.0, 32.5, 35.0, 37.5, 40.0];

fn random_model(rng: &mut ChaCha8Rng) -> (ModelParams, Vec<XAtom>) {
    let k = rng.random_range(3..=5);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut atoms: Vec<XAtom> =
        raw.iter().map(|w| XAtom::new(vec![rng.sample::<f64, _>(StandardNormal)], w / total)).collect();
    let sum: f64 = atoms.iter().map(|a| a.prob).sum();
    atoms[0].prob += 1.0 - sum;
    let target = ModelParams {
        beta0: rng.random_range(-1.0..1.0),
        beta: DVector::from_element(1, rng.sample::<f64, _>(StandardNormal)),
        sigma2: rng.random_range(0.5..2.0),
    };
    (target, atoms)
}

fn perturbed(rng: &mut ChaCha8Rng, base: &ModelParams) -> ModelParams {
    ModelParams {
        beta0: base.beta0 + rng.random_range(-0.5..0.5),
        beta: base.beta.map(|b| b + rng.random_range(-0.5..0.5)),
        sigma2: base.sigma2 * rng.random_range(0.7..1.4),
    }
}

/// Non-negativity, identity and the γ → 0 limit on random models.
pub fn divergence_axioms_suite(cfg: &SuiteConfig) -> Result<Vec<Check>> {
    cfg.validate()?;
    const SUITE: &str = "divergence";
    let tol = cfg.tolerance_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for case in 0..cfg.cases {
        let (target, atoms) = random_model(&mut rng);
        let f = perturbed(&mut rng, &target);
        let eps = if case % 4 == 0 { 0.0 } else { rng.random_range(0.0..0.45) };
        let shift = rng.random_range(2.0..6.0) * target.sigma2.sqrt() * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let t = target.clone();
        let g = ContaminationModel::new(
            target.clone(),
            atoms.clone(),
            Arc::new(move |x: &[f64]| mean(&t, x) + shift),
            Epsilon::Constant(eps),
        )?;
        let gamma = cfg.gammas[case % cfg.gammas.len()];
        let d = gamma_divergence(&g, &f, gamma)?;
        out.push(Check::at_least(
            SUITE,
            format!("case {case}: D_γ(g, f) ≥ 0 at γ = {gamma}, ε = {eps:.3}"),
            d,
            -1e-10 * tol,
        ));
        let clean = ContaminationModel::clean(target.clone(), atoms.clone())?;
        let same = gamma_divergence(&clean, &target, gamma)?;
        out.push(Check::at_most(SUITE, format!("case {case}: |D_γ(f, f)| at γ = {gamma}"), same.abs(), 1e-8 * tol));
        let small = gamma_divergence(&g, &f, 1e-4)?;
        let kl = average_kl_divergence(&g, &f)?;
        out.push(Check::at_most(
            SUITE,
            format!("case {case}: |D_γ − KL| at γ = 1e-4, ε = {eps:.3}"),
            (small - kl).abs(),
            1e-3 * tol,
        ));
    }
    Ok(out)
}

/// The fixed model family used by the Pythagorean suite.
pub fn pythagorean_fixture(
    epsilon: f64,
    heterogeneous: bool,
    offset: f64,
) -> Result<(ContaminationModel, ModelParams)> {
    let target = ModelParams { beta0: 0.5, beta: DVector::from_element(1, 1.0), sigma2: 1.0 };
    let atoms = vec![
        XAtom::new(vec![-1.0], 0.2),
        XAtom::new(vec![0.0], 0.3),
        XAtom::new(vec![1.0], 0.3),
        XAtom::new(vec![2.0], 0.2),
    ];
    let eps = if heterogeneous {
        Epsilon::ByX(Arc::new(move |x: &[f64]| epsilon * (0.5 + 0.5 * (x[0] + 1.0) / 3.0)))
    } else {
        Epsilon::Constant(epsilon)
    };
    let t = target.clone();
    let sigma = target.sigma2.sqrt();
    let model = ContaminationModel::new(target, atoms, Arc::new(move |x: &[f64]| mean(&t, x) + offset * sigma), eps)?;
    let theta = ModelParams { beta0: 0.8, beta: DVector::from_element(1, 0.7), sigma2: 1.44 };
    Ok((model, theta))
}

/// Decay of the Pythagorean residuals as the outliers move into the tail.
pub fn pythagorean_suite(cfg: &SuiteConfig) -> Result<Vec<Check>> {
    cfg.validate()?;
    const SUITE: &str = "pythagorean";
    let tol = cfg.tolerance_scale;
    let mut out = Vec::new();
    for &gamma in &cfg.gammas {
        for &eps in &cfg.epsilons {
            for heterogeneous in [false, true] {
                let kind = if heterogeneous { "ε(x)" } else { "constant ε" };
                let mut residuals = Vec::with_capacity(DECAY_GRID.len());
                let mut normalized = Vec::with_capacity(DECAY_GRID.len());
                for &offset in &DECAY_GRID {
                    let (model, theta) = pythagorean_fixture(eps, heterogeneous, offset)?;
                    let r = if heterogeneous {
                        pythagorean_residual_heterogeneous(&model, &theta, gamma)?
                    } else {
                        pythagorean_residual_homogeneous(&model, &theta, gamma)?
                    };
                    let ln_nu = ln_nu_power(&model, &theta, gamma)?.max(ln_nu_power(&model, &model.target, gamma)?);
                    residuals.push(r.abs());
                    normalized.push((r.abs().ln() - ln_nu).exp());
                }
                let tag = format!("γ = {gamma}, ε = {eps}, {kind}");
                let worst_step = residuals.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
                out.push(Check::at_most(
                    SUITE,
                    format!("{tag}: largest ratio of successive |residuals|"),
                    worst_step,
                    1.0,
                ));
                out.push(Check::at_most(
                    SUITE,
                    format!("{tag}: |residual| at 40σ"),
                    *residuals.last().expect("grid is not empty"),
                    1e-6 * tol,
                ));
                let half = normalized.len() / 2;
                let early = normalized[..half].iter().copied().fold(0.0, f64::max);
                let late = normalized[half..].iter().copied().fold(0.0, f64::max);
                out.push(Check::at_most(SUITE, format!("{tag}: residual / ν^γ stays bounded"), late, 2.0 * early));
            }
        }
    }
    Ok(out)
}

fn psi_fixture(seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 200;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let y: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let clean = 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[2] + 0.5 * rng.sample::<f64, _>(StandardNormal);
            if i % 10 == 0 {
                clean + 15.0
            } else {
                clean
            }
        })
        .collect();
    Dataset::from_rows(&rows, y)
}

/// Redescending ψ, the estimating equation at a fixed point, and ψ against
/// finite differences of the loss.
pub fn redescending_suite(cfg: &SuiteConfig) -> Result<Vec<Check>> {
    cfg.validate()?;
    const SUITE: &str = "redescending";
    let tol = cfg.tolerance_scale;
    let data = psi_fixture(cfg.seed)?;
    let n = data.n() as f64;
    let mut out = Vec::new();
    for &gamma in &cfg.gammas {
        let params = ModelParams { beta0: 1.0, beta: DVector::from_vec(vec![2.0, -1.0, 0.5]), sigma2: 0.25 };
        let gcfg = GammaConfig::new(gamma, 0.05)?;
        let x = [0.3, -0.2, 1.1];
        let mu = mean(&params, &x);
        let sigma = params.sigma2.sqrt();
        let at = |r: f64| -> Result<f64> { Ok(psi_function(mu + r, &x, &params, &gcfg)?.norm()) };
        let far = at(100.0 * sigma)?.max(at(-100.0 * sigma)?);
        out.push(Check::at_most(SUITE, format!("γ = {gamma}: ‖ψ‖ at |y − μ| = 100σ"), far, 1e-50 * tol));
        let mut sups = Vec::new();
        for radius in [10.0, 30.0, 100.0] {
            let mut sup = 0.0f64;
            for k in 0..=400 {
                let r = radius * sigma * (1.0 + 9.0 * k as f64 / 400.0);
                sup = sup.max(at(r)?).max(at(-r)?);
            }
            sups.push(sup);
        }
        out.push(Check::at_most(
            SUITE,
            format!("γ = {gamma}: sup ‖ψ‖ beyond 30σ relative to beyond 10σ"),
            sups[1] / sups[0],
            1.0,
        ));
        out.push(Check::at_most(
            SUITE,
            format!("γ = {gamma}: sup ‖ψ‖ beyond 100σ relative to beyond 30σ"),
            if sups[1] == 0.0 { 0.0 } else { sups[2] / sups[1] },
            1.0,
        ));

        let mut fcfg = FitConfig::new(gamma, 0.0);
        fcfg.tol_loss = 1e-15;
        fcfg.tol_param = 1e-12;
        fcfg.max_mm_iters = 5000;
        let start = ModelParams { beta0: 1.0, beta: DVector::from_vec(vec![1.8, -0.8, 0.4]), sigma2: 0.5 };
        let fitted = fit(&data, &fcfg, &start)?.params;
        let sum = psi_sum(&data, &fitted, &GammaConfig::new(gamma, 0.0)?)?;
        out.push(Check::at_most(
            SUITE,
            format!("γ = {gamma}: ‖Σψ‖ / n at the λ = 0 fixed point"),
            sum.norm() / n,
            1e-5 * tol,
        ));

        let grad = loss_gradient_from_psi(&data, &params, &gcfg)?;
        let fd = finite_difference_gradient(&data, &params, &gcfg)?;
        out.push(Check::at_most(
            SUITE,
            format!("γ = {gamma}: ψ gradient against finite differences"),
            (grad - fd).amax(),
            1e-6 * tol,
        ));
    }
    Ok(out)
}

/// Central differences of the penalized loss over `(β0, β, σ²)`.
pub fn finite_difference_gradient(data: &Dataset, params: &ModelParams, cfg: &GammaConfig) -> Result<DVector<f64>> {
    let p = params.p();
    let mut grad = DVector::zeros(p + 2);
    for k in 0..p + 2 {
        let h = 1e-5;
        let shifted = |delta: f64| -> ModelParams {
            let mut q = params.clone();
            match k {
                0 => q.beta0 += delta,
                k if k <= p => q.beta[k - 1] += delta,
                _ => q.sigma2 += delta,
            }
            q
        };
        grad[k] = (penalized_loss(data, &shifted(h), cfg)? - penalized_loss(data, &shifted(-h), cfg)?) / (2.0 * h);
    }
    Ok(grad)
}

/// Every suite, in a fixed order.
pub fn run_all_suites(cfg: &SuiteConfig) -> Result<Vec<Check>> {
    let mut out = divergence_axioms_suite(cfg)?;
    out.extend(pythagorean_suite(cfg)?);
    out.extend(redescending_suite(cfg)?);
    Ok(out)
}
