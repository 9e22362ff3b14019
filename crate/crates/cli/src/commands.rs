use std::path::{Path, PathBuf};
use std::time::Instant;

use gammareg_core::divergence::run_all_suites;
use gammareg_core::init::{ransac_with, zero_init};
use gammareg_core::selection::{cross_validate, CvReport};
use gammareg_core::simulation::{generate_replication, run_experiment, InitMethod};
use gammareg_core::solver::fit;
use gammareg_core::{Dataset, FitResult, ModelParams};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};
use crate::settings::Settings;
use crate::table::{fmt_f64, read_dataset, write_dataset, write_rows};

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| Value::Float(*x)).collect())
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

/// Resolved settings followed by a `[run]` table.
fn write_manifest(path: &Path, settings: &Settings, command: &str, mut run: Table, started: Instant) -> CliResult<()> {
    run.insert("command".into(), Value::String(command.into()));
    run.insert("version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
    run.insert("threads".into(), Value::Integer(rayon::current_num_threads() as i64));
    run.insert("wall_time_s".into(), Value::Float(started.elapsed().as_secs_f64()));
    let mut doc = Table::new();
    doc.insert("run".into(), Value::Table(run));
    let text = format!("{}\n{}", settings.to_toml(), toml::to_string(&doc).expect("plain values"));
    std::fs::write(path, text)?;
    Ok(())
}

fn manifest_path(output: &Path) -> PathBuf {
    output.with_extension("manifest.toml")
}

fn log_settings(settings: &Settings) {
    eprintln!("gammareg: resolved configuration\n{}", settings.to_toml());
}

fn initial_estimate(data: &Dataset, settings: &Settings) -> CliResult<ModelParams> {
    match settings.init_method()? {
        InitMethod::Ransac(cfg) => Ok(ransac_with(data, &cfg)?),
        InitMethod::Zero => Ok(zero_init(data).params),
    }
}

fn fit_table(run: &mut Table, res: &FitResult, init: &ModelParams, lambda: f64) {
    run.insert("lambda".into(), Value::Float(lambda));
    run.insert("converged".into(), Value::Boolean(res.converged));
    run.insert("degenerate".into(), Value::Boolean(res.degenerate));
    run.insert("mm_iterations".into(), Value::Integer(res.mm_iterations as i64));
    run.insert("kkt_violation".into(), Value::Float(res.kkt_violation));
    run.insert("beta0".into(), Value::Float(res.params.beta0));
    run.insert("sigma2".into(), Value::Float(res.params.sigma2));
    run.insert("nonzero".into(), Value::Integer(res.active_set.len() as i64));
    run.insert("loss_trajectory".into(), floats(&res.loss_trajectory));
    run.insert("init_beta0".into(), Value::Float(init.beta0));
    run.insert("init_sigma2".into(), Value::Float(init.sigma2));
}

fn write_coefficients(path: &Path, names: &[String], params: &ModelParams) -> CliResult<()> {
    let flag = |v: f64| if v != 0.0 { "1" } else { "0" }.to_string();
    let mut rows = vec![vec!["(intercept)".to_string(), fmt_f64(params.beta0), flag(params.beta0)]];
    for (name, b) in names.iter().zip(params.beta.iter()) {
        rows.push(vec![name.clone(), fmt_f64(*b), flag(*b)]);
    }
    write_rows(path, &["name", "value", "nonzero"], &rows)
}

fn write_cv_table(path: &Path, report: &CvReport) -> CliResult<()> {
    let rows: Vec<Vec<String>> = (0..report.lambda_grid.len())
        .map(|k| {
            vec![
                fmt_f64(report.lambda_grid[k]),
                fmt_f64(report.scores[k]),
                report.path[k].as_ref().map_or(String::new(), |p| p.active_set().len().to_string()),
                if k == report.best_index { "1" } else { "0" }.to_string(),
                report.excluded[k].clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_rows(path, &["lambda", "score", "nonzero", "selected", "excluded"], &rows)
}

pub struct FitRequest<'a> {
    pub input: &'a Path,
    pub output: &'a Path,
    pub manifest: Option<&'a Path>,
    /// Also write the CV table here (RoCV only).
    pub cv_table: Option<&'a Path>,
    pub force_rocv: bool,
}

/// `fit` and `cv`: initializer, then a fixed-λ fit or RoCV, then the
/// coefficient file and manifest. A degenerate final fit is still written
/// out and then reported as a numerical failure.
pub fn run_fit(settings: &Settings, req: FitRequest) -> CliResult<()> {
    let started = Instant::now();
    log_settings(settings);
    let rocv = req.force_rocv || settings.rocv()?;
    let cfg = settings.fit_config();
    let cv = settings.cv_config()?;
    let named = read_dataset(req.input, &settings.response)?;
    let data = &named.data;
    let init = initial_estimate(data, settings)?;

    let (res, lambda, report) = if rocv {
        let report = cross_validate(data, &cfg, &cv, &init)?;
        (report.final_fit.clone(), report.best_lambda, Some(report))
    } else {
        (fit(data, &cfg, &init)?, settings.lambda, None)
    };

    write_coefficients(req.output, &named.predictors, &res.params)?;
    if let (Some(path), Some(report)) = (req.cv_table, &report) {
        write_cv_table(path, report)?;
    }
    let mut run = Table::new();
    run.insert("input".into(), path_value(req.input));
    run.insert("output".into(), path_value(req.output));
    run.insert("n".into(), Value::Integer(data.n() as i64));
    run.insert("p".into(), Value::Integer(data.p() as i64));
    run.insert("selection".into(), Value::String(if rocv { "rocv" } else { "fixed" }.into()));
    if let Some(report) = &report {
        run.insert("lambda_grid".into(), floats(&report.lambda_grid));
        run.insert("cv_scores".into(), floats(&report.scores));
    }
    fit_table(&mut run, &res, &init, lambda);
    let manifest = req.manifest.map_or_else(|| manifest_path(req.output), Path::to_path_buf);
    write_manifest(&manifest, settings, if req.force_rocv { "cv" } else { "fit" }, run, started)?;

    eprintln!(
        "gammareg: λ = {lambda:.6e}, {} nonzero of {}, σ² = {:.6e}, {} MM iterations, KKT {:.2e}",
        res.active_set.len(),
        data.p(),
        res.params.sigma2,
        res.mm_iterations,
        res.kkt_violation
    );
    if res.degenerate {
        return Err(CliError::Numerical("degenerate fit: σ² reached its floor".into()));
    }
    Ok(())
}

/// Writes `train.csv`, `test.csv`, `truth.toml` and `manifest.toml`.
pub fn run_simulate(settings: &Settings, out_dir: &Path) -> CliResult<()> {
    let started = Instant::now();
    log_settings(settings);
    let spec = settings.simulation_spec()?;
    let sim = generate_replication(&spec, settings.replication)?;
    std::fs::create_dir_all(out_dir)?;
    write_dataset(&out_dir.join("train.csv"), &sim.train, &settings.response)?;
    write_dataset(&out_dir.join("test.csv"), &sim.test, &settings.response)?;

    let truth = sim.train.true_beta().expect("simulated data carry the truth");
    let mut t = Table::new();
    t.insert("beta".into(), floats(truth.as_slice()));
    t.insert(
        "contaminated_rows".into(),
        Value::Array(sim.contaminated_rows.iter().map(|&i| Value::Integer(i as i64)).collect()),
    );
    std::fs::write(out_dir.join("truth.toml"), toml::to_string(&t).expect("plain values"))?;

    let mut run = Table::new();
    run.insert("output_dir".into(), path_value(out_dir));
    run.insert("contaminated".into(), Value::Integer(sim.contaminated_rows.len() as i64));
    write_manifest(&out_dir.join("manifest.toml"), settings, "simulate", run, started)
}

/// One row per method with the mean RMSPE, MSE, TPR and TNR.
pub fn run_bench(settings: &Settings, output: &Path, records: Option<&Path>) -> CliResult<()> {
    let started = Instant::now();
    log_settings(settings);
    let spec = settings.simulation_spec()?;
    let methods = settings.methods()?;
    let report = run_experiment(&spec, &methods, settings.replications, &settings.experiment_settings()?)?;

    let rows: Vec<Vec<String>> = report
        .summaries
        .iter()
        .map(|s| {
            vec![
                s.method.label(),
                fmt_f64(s.rmspe),
                fmt_f64(s.mse),
                fmt_f64(s.tpr),
                fmt_f64(s.tnr),
                s.successes.to_string(),
                s.failures.to_string(),
            ]
        })
        .collect();
    write_rows(output, &["method", "rmspe", "mse", "tpr", "tnr", "successes", "failures"], &rows)?;
    if let Some(path) = records {
        let rows: Vec<Vec<String>> = report
            .records
            .iter()
            .map(|r| {
                vec![
                    r.replication.to_string(),
                    r.method.label(),
                    fmt_f64(r.rmspe),
                    fmt_f64(r.mse),
                    fmt_f64(r.tpr),
                    fmt_f64(r.tnr),
                    fmt_f64(r.lambda),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        write_rows(path, &["replication", "method", "rmspe", "mse", "tpr", "tnr", "lambda", "error"], &rows)?;
    }
    for s in &report.summaries {
        println!(
            "{:<12} RMSPE {:.4}  MSE {:.4e}  TPR {:.3}  TNR {:.3}  ({} ok, {} failed)",
            s.method.label(),
            s.rmspe,
            s.mse,
            s.tpr,
            s.tnr,
            s.successes,
            s.failures
        );
    }
    let mut run = Table::new();
    run.insert("output".into(), path_value(output));
    write_manifest(&manifest_path(output), settings, "bench", run, started)
}

/// Runs every divergence suite and prints one line per check.
pub fn run_divcheck(settings: &Settings, output: Option<&Path>) -> CliResult<()> {
    let cfg = settings.suite_config()?;
    let checks = run_all_suites(&cfg)?;
    for c in &checks {
        println!(
            "{} {:<12} {}: value {:.3e}, bound {:.1e}, margin {:.3e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.suite,
            c.name,
            c.value,
            c.bound,
            c.margin()
        );
    }
    if let Some(path) = output {
        let rows: Vec<Vec<String>> = checks
            .iter()
            .map(|c| {
                vec![
                    c.suite.to_string(),
                    c.name.clone(),
                    fmt_f64(c.value),
                    fmt_f64(c.bound),
                    fmt_f64(c.margin()),
                    if c.passed { "1" } else { "0" }.to_string(),
                ]
            })
            .collect();
        write_rows(path, &["suite", "check", "value", "bound", "margin", "passed"], &rows)?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        return Err(CliError::Check(format!("{failed} divergence checks failed")));
    }
    Ok(())
}
