//! Flat run configuration: defaults, then a TOML file, then flags.
//!
//! A manifest written by any command is itself a valid config file: its
//! top-level keys are the resolved settings and its `[run]` table is
//! ignored on input.

use std::path::Path;

use gammareg_core::divergence::SuiteConfig;
use gammareg_core::init::{RansacConfig, SubsetSolver};
use gammareg_core::selection::{CvConfig, Folds, GridAnchor};
use gammareg_core::simulation::{ExperimentSettings, InitMethod, Method, OutlierPattern, SimulationSpec};
use gammareg_core::FitConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

macro_rules! settings {
    ($($(#[doc = $doc:expr])* $name:ident: $ty:ty = $default:expr,)*) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct Settings {
            $($(#[doc = $doc])* pub $name: $ty,)*
        }

        impl Default for Settings {
            fn default() -> Self {
                Settings { $($name: $default,)* }
            }
        }

        /// Partial settings from a file or from flags.
        #[derive(Debug, Clone, Default, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct Overrides {
            $(pub $name: Option<$ty>,)*
            /// The `[run]` table of a manifest; ignored.
            #[serde(default, rename = "run")]
            _run: Option<toml::Value>,
        }

        impl Settings {
            pub fn apply(&mut self, o: Overrides) {
                $(if let Some(v) = o.$name {
                    self.$name = v;
                })*
            }
        }
    };
}

settings! {
    /// Name of the response column in input CSVs.
    response: String = "y".into(),
    gamma: f64 = 0.1,
    /// γ of the RoCV score.
    gamma0: f64 = 0.5,
    lambda: f64 = 0.0,
    /// `fixed` or `rocv`.
    select: String = "fixed".into(),
    /// Fold count, or `loo`.
    folds: String = "10".into(),
    grid_size: usize = 50,
    grid_floor_ratio: f64 = 0.05,
    /// `collapse` or `kkt`.
    grid_anchor: String = "collapse".into(),
    warm_start: bool = false,
    /// `ransac` or `zero`.
    init: String = "ransac".into(),
    /// 0 picks p + 2 when that fits in n, else min(n, max(p/2, 10)).
    ransac_subset_size: usize = 0,
    ransac_trials: usize = 200,
    /// `auto`, `least-squares` or `lasso`.
    ransac_solver: String = "auto".into(),
    ransac_lasso_ratio: f64 = 0.05,
    ransac_relaxed: bool = true,
    ransac_refine_steps: usize = 5,
    ransac_coverage: f64 = 0.75,
    ransac_refine_starts: usize = 10,
    /// 0 keeps median-score concentration steps.
    ransac_trimmed_ratio: f64 = 0.0,
    standardize: bool = false,
    max_mm_iters: usize = 500,
    max_cd_sweeps: usize = 100,
    tol_loss: f64 = 1e-7,
    tol_param: f64 = 1e-8,
    sigma2_floor: f64 = 1e-10,
    kkt_tol: f64 = 1e-5,
    seed: u64 = 0,
    n: usize = 100,
    p: usize = 100,
    rho: f64 = 0.2,
    eps: f64 = 0.1,
    /// `a`, `b` or `none`.
    pattern: String = "a".into(),
    noise_sd: f64 = 0.5,
    /// Which replication of the design `simulate` writes.
    replication: u64 = 0,
    replications: u64 = 20,
    /// Any of `gamma`, `lasso`.
    methods: Vec<String> = vec!["gamma".into(), "lasso".into()],
    div_gammas: Vec<f64> = vec![0.1, 0.5],
    div_epsilons: Vec<f64> = vec![0.1, 0.3],
    div_cases: usize = 20,
    div_tolerance_scale: f64 = 1.0,
}

impl Overrides {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }
}

fn config_err(msg: String) -> CliError {
    CliError::Config(msg)
}

impl Settings {
    pub fn resolve(file: Option<&Path>, flags: Overrides) -> CliResult<Self> {
        let mut s = Settings::default();
        if let Some(path) = file {
            s.apply(Overrides::from_file(path)?);
        }
        s.apply(flags);
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings are plain values")
    }

    pub fn rocv(&self) -> CliResult<bool> {
        match self.select.as_str() {
            "fixed" => Ok(false),
            "rocv" => Ok(true),
            other => Err(config_err(format!("select must be fixed or rocv, got {other:?}"))),
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            max_mm_iters: self.max_mm_iters,
            max_cd_sweeps: self.max_cd_sweeps,
            tol_loss: self.tol_loss,
            tol_param: self.tol_param,
            sigma2_floor: self.sigma2_floor,
            kkt_tol: self.kkt_tol,
            standardize: self.standardize,
            ..FitConfig::new(self.gamma, self.lambda)
        }
    }

    pub fn folds(&self) -> CliResult<Folds> {
        if self.folds == "loo" {
            return Ok(Folds::LeaveOneOut);
        }
        self.folds
            .parse()
            .map(Folds::KFold)
            .map_err(|_| config_err(format!("folds must be a count or loo, got {:?}", self.folds)))
    }

    pub fn cv_config(&self) -> CliResult<CvConfig> {
        let anchor = match self.grid_anchor.as_str() {
            "collapse" => GridAnchor::Collapse,
            "kkt" => GridAnchor::Kkt,
            other => return Err(config_err(format!("grid_anchor must be collapse or kkt, got {other:?}"))),
        };
        Ok(CvConfig {
            gamma0: self.gamma0,
            folds: self.folds()?,
            grid_size: self.grid_size,
            grid_floor_ratio: self.grid_floor_ratio,
            seed: self.seed,
            anchor,
            warm_start: self.warm_start,
        })
    }

    pub fn ransac_config(&self) -> CliResult<RansacConfig> {
        let solver = match self.ransac_solver.as_str() {
            "auto" => None,
            "least-squares" => Some(SubsetSolver::LeastSquares),
            "lasso" => {
                Some(SubsetSolver::Lasso { lambda_ratio: self.ransac_lasso_ratio, relaxed: self.ransac_relaxed })
            }
            other => {
                return Err(config_err(format!("ransac_solver must be auto, least-squares or lasso, got {other:?}")))
            }
        };
        if !(self.ransac_coverage > 0.0 && self.ransac_coverage <= 1.0) {
            return Err(config_err(format!("ransac_coverage must lie in (0, 1], got {}", self.ransac_coverage)));
        }
        if !(self.ransac_trimmed_ratio >= 0.0 && self.ransac_trimmed_ratio.is_finite()) {
            return Err(config_err(format!(
                "ransac_trimmed_ratio must be nonnegative, got {}",
                self.ransac_trimmed_ratio
            )));
        }
        if self.ransac_trials == 0 {
            return Err(config_err("ransac_trials must be at least 1".into()));
        }
        Ok(RansacConfig {
            subset_size: (self.ransac_subset_size > 0).then_some(self.ransac_subset_size),
            trials: self.ransac_trials,
            seed: self.seed,
            solver,
            refine_steps: self.ransac_refine_steps,
            coverage: self.ransac_coverage,
            refine_starts: self.ransac_refine_starts.max(1),
            trimmed_lasso_ratio: (self.ransac_trimmed_ratio > 0.0).then_some(self.ransac_trimmed_ratio),
        })
    }

    pub fn init_method(&self) -> CliResult<InitMethod> {
        match self.init.as_str() {
            "ransac" => Ok(InitMethod::Ransac(self.ransac_config()?)),
            "zero" => Ok(InitMethod::Zero),
            other => Err(config_err(format!("init must be ransac or zero, got {other:?}"))),
        }
    }

    pub fn simulation_spec(&self) -> CliResult<SimulationSpec> {
        let pattern = match self.pattern.as_str() {
            "a" => OutlierPattern::A,
            "b" => OutlierPattern::B,
            "none" => OutlierPattern::None,
            other => return Err(config_err(format!("pattern must be a, b or none, got {other:?}"))),
        };
        let spec = SimulationSpec {
            n: self.n,
            p: self.p,
            rho: self.rho,
            epsilon: self.eps,
            pattern,
            noise_sd: self.noise_sd,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn methods(&self) -> CliResult<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(config_err("methods must not be empty".into()));
        }
        self.methods
            .iter()
            .map(|m| match m.as_str() {
                "gamma" => Ok(Method::Gamma { gamma: self.gamma }),
                "lasso" => Ok(Method::Lasso),
                other => Err(config_err(format!("unknown method {other:?} (expected gamma or lasso)"))),
            })
            .collect()
    }

    pub fn experiment_settings(&self) -> CliResult<ExperimentSettings> {
        Ok(ExperimentSettings { fit: self.fit_config(), cv: self.cv_config()?, init: self.init_method()? })
    }

    pub fn suite_config(&self) -> CliResult<SuiteConfig> {
        let cfg = SuiteConfig {
            gammas: self.div_gammas.clone(),
            epsilons: self.div_epsilons.clone(),
            cases: self.div_cases,
            seed: self.seed,
            tolerance_scale: self.div_tolerance_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
