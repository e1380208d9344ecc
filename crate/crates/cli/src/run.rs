//! Subcommand execution. Each run owns its output directory.

use std::fs;
use std::path::{Path, PathBuf};

use rarpinn::inverse::{split_samples, train_inverse, InverseExperiment};
use rarpinn::metrics::{predict, relative_l2};
use rarpinn::net::{NetworkShape, ParameterVector};
use rarpinn::oracle::{sample_grid, FieldSample, GridSpec};
use rarpinn::physics::ResidualMode;
use rarpinn::training::{export_residual_field, train_forward, ForwardConfig, Seeds};
use toml::{Table, Value};

use crate::config::{ExperimentConfig, Preset};
use crate::io;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Generate,
    TrainForward,
    TrainInverse,
    Evaluate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Generate => "generate",
            Mode::TrainForward => "train-forward",
            Mode::TrainInverse => "train-inverse",
            Mode::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub config_path: Option<PathBuf>,
    pub out: PathBuf,
    /// Recorded in the manifest. Runs are single-threaded regardless.
    pub single_thread: bool,
}

/// Preset (default one-soliton), then the config file, then `--seed`.
pub fn load_config(
    preset: Option<&str>,
    config_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<ExperimentConfig, CliError> {
    let fallback = preset.map(Preset::from_name).transpose()?.unwrap_or(Preset::OneSoliton);
    let mut cfg = match config_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let mut cfg = ExperimentConfig::from_toml(&text, fallback)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            if let Some(name) = preset {
                if cfg.preset.is_some_and(|p| p.name() != name) {
                    return Err(CliError::Usage(format!("--preset {name} conflicts with `preset` in {}", p.display())));
                }
            }
            cfg.preset.get_or_insert(fallback);
            // Relative paths in a config file are relative to that file.
            let base = p.parent().unwrap_or(Path::new("."));
            for slot in [&mut cfg.paths.dataset, &mut cfg.paths.prediction, &mut cfg.paths.reference] {
                if let Some(path) = slot.as_mut().filter(|q| q.is_relative()) {
                    *path = base.join(&*path);
                }
            }
            cfg
        }
        None => ExperimentConfig::preset(fallback),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Runs one subcommand and returns the summary printed on stdout.
pub fn run(opts: &RunOptions) -> Result<String, CliError> {
    fs::create_dir_all(&opts.out).map_err(|e| CliError::io(&opts.out, e))?;
    match opts.mode {
        Mode::Generate => generate(opts),
        Mode::TrainForward => forward(opts),
        Mode::TrainInverse => inverse(opts),
        Mode::Evaluate => evaluate(opts),
    }
}

fn out_file(opts: &RunOptions, name: &str) -> PathBuf {
    opts.out.join(name)
}

/// Refuses to write over any input.
fn ensure_distinct(opts: &RunOptions, inputs: &[&Path], outputs: &[&str]) -> Result<(), CliError> {
    let out_dir = fs::canonicalize(&opts.out).map_err(|e| CliError::io(&opts.out, e))?;
    let mut all_inputs: Vec<&Path> = inputs.to_vec();
    if let Some(c) = &opts.config_path {
        all_inputs.push(c);
    }
    for input in all_inputs {
        let canon = fs::canonicalize(input).map_err(|e| CliError::io(input, e))?;
        if let Some(name) = outputs.iter().find(|n| out_dir.join(n) == canon) {
            return Err(CliError::Usage(format!(
                "input {} would be overwritten by output `{name}`; choose another --out",
                input.display()
            )));
        }
    }
    Ok(())
}

fn seeds_table(seeds: &Seeds) -> Table {
    // TOML integers are signed 64-bit, so seeds are written as strings.
    let mut t = Table::new();
    for (k, v) in [
        ("init", seeds.init),
        ("data", seeds.data),
        ("collocation", seeds.collocation),
        ("pool", seeds.pool),
        ("noise", seeds.noise),
    ] {
        t.insert(k.into(), Value::String(v.to_string()));
    }
    t
}

fn write_manifest(opts: &RunOptions, extra: Table) -> Result<(), CliError> {
    let cfg = &opts.config;
    let mut run = Table::new();
    run.insert("mode".into(), opts.mode.name().into());
    run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    run.insert("core_version".into(), rarpinn::VERSION.into());
    run.insert("single_thread".into(), opts.single_thread.into());
    run.insert("seed".into(), Value::String(cfg.seed.to_string()));
    if let Some(note) = cfg.grid_note() {
        run.insert("grid_note".into(), note.into());
    }
    for (k, v) in extra {
        run.insert(k, v);
    }
    let mut root = Table::new();
    root.insert("run".into(), Value::Table(run));
    root.insert("seeds".into(), Value::Table(seeds_table(&Seeds::from_master(cfg.seed))));
    let echo = Table::try_from(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    root.insert("config".into(), Value::Table(echo));
    io::write_text(&out_file(opts, "manifest.toml"), &toml::to_string(&root).expect("manifest serializes"))
}

/// Closed-form fields on the grid, or the ingested dataset checked against it.
fn reference(cfg: &ExperimentConfig, grid: &GridSpec) -> Result<Vec<FieldSample>, CliError> {
    match cfg.oracle()? {
        Some(o) => Ok(sample_grid(&o, grid)?),
        None => {
            let path = cfg.paths.dataset.as_deref().ok_or_else(|| {
                CliError::Config("config: paths.dataset is required when oracle.kind = \"dataset\"".into())
            })?;
            let rows = io::read_dataset(path)?;
            io::check_on_grid(path, &rows, grid)?;
            Ok(rows)
        }
    }
}

fn dataset_input(cfg: &ExperimentConfig) -> Vec<&Path> {
    cfg.paths.dataset.as_deref().filter(|_| cfg.oracle.kind == crate::config::OracleKind::Dataset).into_iter().collect()
}

fn summary_text(t: &Table) -> String {
    toml::to_string(t).expect("summary serializes")
}

fn write_params(path: &Path, p: &ParameterVector) -> Result<(), CliError> {
    let mut text = String::with_capacity(p.values.len() * 24);
    for v in &p.values {
        text.push_str(&io::num(*v));
        text.push('\n');
    }
    io::write_text(path, &text)
}

fn generate(opts: &RunOptions) -> Result<String, CliError> {
    let cfg = &opts.config;
    let oracle = cfg
        .oracle()?
        .ok_or_else(|| CliError::Usage("generate needs a closed-form oracle; this config ingests a dataset".into()))?;
    ensure_distinct(opts, &[], &["dataset.csv", "manifest.toml"])?;
    let grid = cfg.grid_spec()?;
    let rows = sample_grid(&oracle, &grid)?;
    io::write_dataset(&out_file(opts, "dataset.csv"), &rows)?;
    write_manifest(opts, Table::new())?;
    let mut s = Table::new();
    s.insert("mode".into(), "generate".into());
    s.insert("rows".into(), (rows.len() as i64).into());
    s.insert("nx".into(), (grid.nx as i64).into());
    s.insert("nt".into(), (grid.nt as i64).into());
    Ok(summary_text(&s))
}

/// Prediction, reference, |h| errors and residual scores on the grid.
fn write_field_bundle(
    opts: &RunOptions,
    params: &ParameterVector,
    shape: &NetworkShape,
    mode: &ResidualMode,
    grid: &GridSpec,
    exact: &[FieldSample],
) -> Result<[f64; 2], CliError> {
    let pred = predict(params, shape, &grid.points())?;
    io::write_dataset(&out_file(opts, "prediction.csv"), &pred)?;
    io::write_dataset(&out_file(opts, "exact.csv"), exact)?;
    io::write_magnitudes(&out_file(opts, "error.csv"), &pred, exact)?;
    let scores = export_residual_field(params, shape, mode, grid)?;
    io::write_scores(&out_file(opts, "residual.csv"), &scores)?;
    write_params(&out_file(opts, "params.txt"), params)?;
    Ok(relative_l2(&pred, exact)?)
}

const BUNDLE: [&str; 9] = [
    "manifest.toml",
    "losses.csv",
    "points.csv",
    "prediction.csv",
    "exact.csv",
    "error.csv",
    "residual.csv",
    "params.txt",
    "summary.toml",
];

fn forward(opts: &RunOptions) -> Result<String, CliError> {
    let cfg = &opts.config;
    ensure_distinct(opts, &dataset_input(cfg), &BUNDLE)?;
    let grid = cfg.grid_spec()?;
    let exact = reference(cfg, &grid)?;
    let seeds = Seeds::from_master(cfg.seed);
    let fc = ForwardConfig {
        shape: cfg.shape()?,
        coeffs: cfg.coefficients(),
        counts: cfg.counts(),
        boundary: cfg.boundary()?,
        rar: cfg.rar(),
        tpinn: cfg.rar.tpinn,
        adam: cfg.adam(),
        refit_iterations: cfg.rar.refit_iterations,
        lbfgs: cfg.lbfgs(),
        seeds,
    };
    let outcome = train_forward(&fc, &grid, &exact)?;
    write_manifest(opts, Table::new())?;
    io::write_losses(&out_file(opts, "losses.csv"), &outcome.history.records)?;
    let added: Vec<_> = outcome.history.rar_events.iter().flat_map(|e| e.added.iter().copied()).collect();
    io::write_points(&out_file(opts, "points.csv"), &outcome.data, &added)?;
    let mode = ResidualMode::Forward(fc.coeffs);
    let err = write_field_bundle(opts, &outcome.params, &fc.shape, &mode, &grid, &exact)?;

    let mut s = Table::new();
    s.insert("mode".into(), "train-forward".into());
    s.insert("variant".into(), (if fc.tpinn { "tpinn" } else { "rar" }).into());
    s.insert("rel_l2_h1".into(), err[0].into());
    s.insert("rel_l2_h2".into(), err[1].into());
    if let Some(last) = outcome.history.records.last() {
        s.insert("final_loss".into(), last.loss.total.into());
    }
    s.insert("collocation_points".into(), (outcome.data.nf() as i64).into());
    s.insert("points_added".into(), (outcome.history.points_added() as i64).into());
    s.insert("rar_rounds".into(), (outcome.history.rar_events.len() as i64).into());
    let rm = outcome.residual_max;
    s.insert("residual_max_before_refinement".into(), rm.before_refinement.into());
    s.insert("residual_max_after_refinement".into(), rm.after_refinement.into());
    s.insert("residual_max_final".into(), rm.final_.into());
    if let Some(st) = outcome.lbfgs_status {
        s.insert("lbfgs_status".into(), st.name().into());
    }
    if !outcome.history.warnings.is_empty() {
        s.insert("warnings".into(), outcome.history.warnings.clone().into());
    }
    if let Some(f) = &outcome.failure {
        s.insert("failure".into(), f.to_string().into());
    }
    let text = summary_text(&s);
    io::write_text(&out_file(opts, "summary.toml"), &text)?;
    match outcome.failure {
        Some(e) => Err(CliError::Failed(e, opts.out.display().to_string())),
        None => Ok(text),
    }
}

fn inverse(opts: &RunOptions) -> Result<String, CliError> {
    let cfg = &opts.config;
    ensure_distinct(opts, &dataset_input(cfg), &BUNDLE)?;
    let grid = cfg.grid_spec()?;
    let exact = reference(cfg, &grid)?;
    let seeds = Seeds::from_master(cfg.seed);
    let (dataset, pool) = split_samples(&exact, cfg.inverse.n_u, seeds.data)?;
    let exp = InverseExperiment {
        dataset,
        pool,
        noise_level: cfg.inverse.noise_level,
        lambda_init: cfg.lambda_init(),
        shape: cfg.shape()?,
        adam: cfg.adam(),
        refit_iterations: cfg.rar.refit_iterations,
        lbfgs: cfg.lbfgs(),
        rar: cfg.inverse_rar(),
        seeds,
    };
    let report = train_inverse(&exp, &cfg.truth())?;
    write_manifest(opts, Table::new())?;
    io::write_losses(&out_file(opts, "losses.csv"), &report.history.records)?;
    let mode = ResidualMode::Inverse(report.lambda_hat);
    let err = write_field_bundle(opts, &report.params, &exp.shape, &mode, &grid, &exact)?;

    let mut s = Table::new();
    s.insert("mode".into(), "train-inverse".into());
    s.insert("lambda_hat".into(), report.lambda_hat.as_array().to_vec().into());
    s.insert("lambda_truth".into(), cfg.inverse.truth.to_vec().into());
    s.insert("abs_error".into(), report.errors.to_vec().into());
    s.insert("noise_level".into(), report.noise_level.into());
    s.insert("n_u".into(), (report.n_u as i64).into());
    s.insert("mse_p".into(), report.loss.mse_p.into());
    s.insert("mse_f".into(), report.loss.mse_f.into());
    s.insert("rel_l2_h1".into(), err[0].into());
    s.insert("rel_l2_h2".into(), err[1].into());
    s.insert("equation".into(), report.equation.clone().into());
    if let Some(st) = report.lbfgs_status {
        s.insert("lbfgs_status".into(), st.name().into());
    }
    if !report.history.warnings.is_empty() {
        s.insert("warnings".into(), report.history.warnings.clone().into());
    }
    if let Some(f) = &report.failure {
        s.insert("failure".into(), f.to_string().into());
    }
    let text = summary_text(&s);
    io::write_text(&out_file(opts, "summary.toml"), &text)?;
    match report.failure {
        Some(e) => Err(CliError::Failed(e, opts.out.display().to_string())),
        None => Ok(text),
    }
}

fn evaluate(opts: &RunOptions) -> Result<String, CliError> {
    let cfg = &opts.config;
    let need = |p: &Option<PathBuf>, key: &str| {
        p.clone().ok_or_else(|| CliError::Config(format!("config: paths.{key} is required for evaluate")))
    };
    let pred_path = need(&cfg.paths.prediction, "prediction")?;
    let ref_path = need(&cfg.paths.reference, "reference")?;
    ensure_distinct(opts, &[&pred_path, &ref_path], &["manifest.toml", "error.csv", "summary.toml"])?;
    let pred = io::read_dataset(&pred_path)?;
    let exact = io::read_dataset(&ref_path)?;
    if pred.len() != exact.len() {
        return Err(CliError::Usage(format!(
            "{} has {} rows but {} has {}",
            pred_path.display(),
            pred.len(),
            ref_path.display(),
            exact.len()
        )));
    }
    if let Some(i) = pred.iter().zip(&exact).position(|(a, b)| a.point != b.point) {
        return Err(CliError::Usage(format!(
            "{} line {}: point differs from {}",
            pred_path.display(),
            i + 2,
            ref_path.display()
        )));
    }
    let err = relative_l2(&pred, &exact)?;
    write_manifest(opts, Table::new())?;
    io::write_magnitudes(&out_file(opts, "error.csv"), &pred, &exact)?;
    let mut s = Table::new();
    s.insert("mode".into(), "evaluate".into());
    s.insert("rows".into(), (pred.len() as i64).into());
    s.insert("rel_l2_h1".into(), err[0].into());
    s.insert("rel_l2_h2".into(), err[1].into());
    let text = summary_text(&s);
    io::write_text(&out_file(opts, "summary.toml"), &text)?;
    Ok(text)
}
