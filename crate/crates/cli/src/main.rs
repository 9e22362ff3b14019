//! `gammareg`: fit, cross-validate, simulate, benchmark and check the
//! γ-divergence theory from the command line.
//!
//! Exit status: 0 success, 1 failed divergence checks, 2 input error,
//! 3 numerical failure, 4 configuration error.

mod commands;
mod error;
mod settings;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::FitRequest;
use crate::error::{CliError, CliResult};
use crate::settings::{Overrides, Settings};

#[derive(Parser)]
#[command(name = "gammareg", version, about = "Robust sparse regression with the γ-divergence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit at a fixed λ, or with RoCV-selected λ under `--select rocv`.
    Fit(FitArgs),
    /// Robust cross-validation over a λ grid; writes the grid table.
    Cv(CvArgs),
    /// Write one replication of a simulation design to CSV.
    Simulate(SimulateArgs),
    /// Monte-Carlo comparison of methods on a simulation design.
    Bench(BenchArgs),
    /// Run the divergence, Pythagorean and redescending checks.
    Divcheck(DivcheckArgs),
}

#[derive(Args)]
struct Common {
    /// Flat TOML config; flags override its values. Manifests are accepted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long)]
    gamma: Option<f64>,
    /// γ of the RoCV score.
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_parser = ["fixed", "rocv"])]
    select: Option<String>,
    /// Fold count, or `loo`.
    #[arg(long)]
    folds: Option<String>,
    #[arg(long, value_parser = ["ransac", "zero"])]
    init: Option<String>,
    /// Fit on standardized columns; coefficients are reported on the
    /// original scale.
    #[arg(long)]
    standardize: bool,
}

impl ModelFlags {
    fn apply(&self, o: &mut Overrides) {
        o.gamma = self.gamma;
        o.gamma0 = self.gamma0;
        o.lambda = self.lambda;
        o.select.clone_from(&self.select);
        o.folds.clone_from(&self.folds);
        o.init.clone_from(&self.init);
        o.standardize = self.standardize.then_some(true);
    }
}

#[derive(Args)]
struct DesignFlags {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_parser = ["a", "b", "none"])]
    pattern: Option<String>,
    #[arg(long)]
    noise_sd: Option<f64>,
}

impl DesignFlags {
    fn apply(&self, o: &mut Overrides) {
        o.n = self.n;
        o.p = self.p;
        o.rho = self.rho;
        o.eps = self.eps;
        o.pattern.clone_from(&self.pattern);
        o.noise_sd = self.noise_sd;
    }
}

#[derive(Args)]
struct FitArgs {
    /// Headed CSV with the response and predictor columns.
    #[arg(long, short)]
    input: PathBuf,
    /// Coefficient CSV (name, value, nonzero).
    #[arg(long, short)]
    output: PathBuf,
    /// Defaults to the output path with extension `.manifest.toml`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// CV table (λ, score, nonzero count, selected flag, exclusion reason).
    #[arg(long, short)]
    output: PathBuf,
    /// Coefficients at the selected λ; defaults to `<output>.coef.csv`.
    #[arg(long)]
    coefficients: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct SimulateArgs {
    /// Directory for train.csv, test.csv, truth.toml and manifest.toml.
    #[arg(long, short)]
    out_dir: PathBuf,
    #[arg(long)]
    replication: Option<u64>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    design: DesignFlags,
}

#[derive(Args)]
struct BenchArgs {
    /// Summary CSV, one row per method.
    #[arg(long, short)]
    output: PathBuf,
    /// Per-replication CSV.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    replications: Option<u64>,
    /// Comma-separated subset of `gamma,lasso`.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    design: DesignFlags,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct DivcheckArgs {
    /// Comma-separated γ values.
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    /// Comma-separated contamination ratios.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Random (g, f) pairs in the divergence-axiom suite.
    #[arg(long)]
    cases: Option<usize>,
    /// Multiplies every tolerance.
    #[arg(long, allow_negative_numbers = true)]
    tolerance_scale: Option<f64>,
    /// Per-check CSV.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn resolve(common: &Common, fill: impl FnOnce(&mut Overrides)) -> CliResult<Settings> {
    let mut o = Overrides::default();
    o.seed = common.seed;
    fill(&mut o);
    Settings::resolve(common.config.as_deref(), o)
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("GAMMAREG_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::Config(format!("GAMMAREG_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Fit(a) => {
            let s = resolve(&a.common, |o| {
                a.model.apply(o);
                o.response.clone_from(&a.response);
            })?;
            let req = FitRequest {
                input: &a.input,
                output: &a.output,
                manifest: a.manifest.as_deref(),
                cv_table: None,
                force_rocv: false,
            };
            commands::run_fit(&s, req)
        }
        Command::Cv(a) => {
            let s = resolve(&a.common, |o| {
                a.model.apply(o);
                o.response.clone_from(&a.response);
                o.select = Some("rocv".into());
            })?;
            let coefficients = a.coefficients.clone().unwrap_or_else(|| a.output.with_extension("coef.csv"));
            let req = FitRequest {
                input: &a.input,
                output: &coefficients,
                manifest: Some(&a.output.with_extension("manifest.toml")),
                cv_table: Some(&a.output),
                force_rocv: true,
            };
            commands::run_fit(&s, req)
        }
        Command::Simulate(a) => {
            let s = resolve(&a.common, |o| {
                a.design.apply(o);
                o.replication = a.replication;
            })?;
            commands::run_simulate(&s, &a.out_dir)
        }
        Command::Bench(a) => {
            let s = resolve(&a.common, |o| {
                a.design.apply(o);
                a.model.apply(o);
                o.replications = a.replications;
                o.methods.clone_from(&a.methods);
            })?;
            commands::run_bench(&s, &a.output, a.records.as_deref())
        }
        Command::Divcheck(a) => {
            let s = resolve(&a.common, |o| {
                o.div_gammas.clone_from(&a.gamma);
                o.div_epsilons.clone_from(&a.eps);
                o.div_cases = a.cases;
                o.div_tolerance_scale = a.tolerance_scale;
            })?;
            commands::run_divcheck(&s, a.output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gammareg: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
