//! Command-line surface.
//!
//! Subcommands: `build` (age series -> model directory), `synthesize`
//! (model + age -> volume, optional slice image), `simulate` (cohort
//! generator), `validate` (topology / trend / curve CSVs), `dice` (label
//! overlap) and `info` (manifest summary). Options can come from a TOML
//! config file, with command-line flags taking precedence. Exit codes:
//! 0 success, 1 usage, 2 data error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::grid::{FieldError, GridSpec, ScalarVolume};
use crate::io::{self, IoError};
use crate::model::{build_model_seeded, synthesize, AgeSeries, ModelError};
use crate::registration::{RegistrationError, RegistrationParams};
use crate::template::TemplateError;
use crate::validation::{
    dice, mse_trend, simulate_longitudinal, topology_sweep, SimulationSpec, ValidationError,
};

#[derive(Parser)]
#[command(
    name = "agemorph",
    version,
    about = "Build, inspect and sample diffeomorphic aging models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build an aging model from an age-ordered template series.
    Build(BuildArgs),
    /// Synthesize the age-specific template at one age.
    Synthesize(SynthesizeArgs),
    /// Generate a simulated longitudinal cohort with known ground truth.
    Simulate(SimulateArgs),
    /// Run topology, intensity-trend and curve sweeps over a model.
    Validate(ValidateArgs),
    /// Dice overlap between two label volumes.
    Dice(DiceArgs),
    /// Print a model manifest summary.
    Info(InfoArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Directory of template volumes (*.mhd, sorted by file name).
    #[arg(long)]
    series: PathBuf,
    /// Text file with one age (years) per line, matching the sorted volumes.
    #[arg(long)]
    ages: PathBuf,
    /// Output model directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    reg: RegOverrides,
    #[command(flatten)]
    model: ModelOverrides,
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Model directory.
    #[arg(long)]
    model: PathBuf,
    /// Age in years (extrapolation allowed).
    #[arg(long)]
    age: f64,
    /// Output volume header path (.mhd).
    #[arg(long)]
    out: PathBuf,
    /// Optional middle-slice grayscale export (.pgm).
    #[arg(long)]
    slice: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory for subjects, templates and ground truth.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    reg: RegOverrides,
    #[command(flatten)]
    model: ModelOverrides,
    #[command(flatten)]
    sim: SimOverrides,
}

#[derive(Args)]
struct ValidateArgs {
    /// Model directory (read-only).
    #[arg(long)]
    model: PathBuf,
    /// Output directory for the CSV reports.
    #[arg(long)]
    out: PathBuf,
    /// Samples per sweep.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    /// Fractional age-range extension on each side for the sweeps.
    #[arg(long, default_value_t = 0.2)]
    extend: f64,
}

#[derive(Args)]
struct DiceArgs {
    /// First label volume (.mhd).
    #[arg(long)]
    first: PathBuf,
    /// Second label volume (.mhd).
    #[arg(long)]
    second: PathBuf,
    /// Comma-separated label values to score.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<i32>,
}

#[derive(Args)]
struct InfoArgs {
    /// Model directory.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args, Default, Clone)]
struct RegOverrides {
    /// Pyramid levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Iterations per level, coarsest first (comma separated).
    #[arg(long, value_delimiter = ',')]
    iterations: Option<Vec<usize>>,
    /// Fluid smoothing sigma in mm.
    #[arg(long)]
    update_sigma: Option<f64>,
    /// Diffusion smoothing sigma in mm.
    #[arg(long)]
    field_sigma: Option<f64>,
    /// Force step scale in (0, 1].
    #[arg(long)]
    step_scale: Option<f64>,
    /// Relative SSD change treated as converged.
    #[arg(long)]
    convergence_tol: Option<f64>,
}

#[derive(Args, Default, Clone)]
struct ModelOverrides {
    /// Outer iterations of the groupwise template build.
    #[arg(long)]
    groupwise_iters: Option<usize>,
    /// Temporal-curve smoothing weight in (0, 1].
    #[arg(long)]
    smoothing_weight: Option<f64>,
}

#[derive(Args, Default, Clone)]
struct SimOverrides {
    #[arg(long)]
    cohort_size: Option<usize>,
    #[arg(long)]
    timepoints: Option<usize>,
    /// Subject deformation amplitude in voxels.
    #[arg(long)]
    subject_amplitude: Option<f64>,
    /// Subject deformation smoothness in mm.
    #[arg(long)]
    subject_sigma: Option<f64>,
    /// Aging amplitudes per timepoint in voxels (comma separated).
    #[arg(long, value_delimiter = ',')]
    schedule: Option<Vec<f64>>,
    /// Aging deformation smoothness in mm.
    #[arg(long)]
    aging_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid dimensions, e.g. 64,64,1.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Voxel spacing in mm, e.g. 1,1,1.
    #[arg(long, value_delimiter = ',')]
    spacing: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
struct ConfigFile {
    registration: Option<RegistrationSection>,
    model: Option<ModelSection>,
    simulation: Option<SimulationSection>,
}

#[derive(Debug, Default, Deserialize)]
struct RegistrationSection {
    levels: Option<usize>,
    iterations: Option<Vec<usize>>,
    update_sigma_mm: Option<f64>,
    field_sigma_mm: Option<f64>,
    step_scale: Option<f64>,
    convergence_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct ModelSection {
    groupwise_iters: Option<usize>,
    smoothing_weight: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct SimulationSection {
    cohort_size: Option<usize>,
    timepoints: Option<usize>,
    subject_variation_amplitude: Option<f64>,
    subject_variation_sigma_mm: Option<f64>,
    aging_amplitude_schedule: Option<Vec<f64>>,
    aging_sigma_mm: Option<f64>,
    seed: Option<u64>,
    dims: Option<Vec<usize>>,
    spacing: Option<Vec<f64>>,
}

/// Full resolved settings, echoed into simulation output directories.
#[derive(Serialize)]
struct ResolvedConfig<'a> {
    registration: &'a RegistrationParams,
    groupwise_iters: usize,
    smoothing_weight: f64,
    simulation: &'a SimulationSpec,
    grid: &'a GridSpec,
}

enum AppError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl AppError {
    fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Numeric(m) => m,
        }
    }
}

impl From<IoError> for AppError {
    fn from(e: IoError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<FieldError> for AppError {
    fn from(e: FieldError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<RegistrationError> for AppError {
    fn from(e: RegistrationError) -> Self {
        match e {
            RegistrationError::Field(f) => AppError::Data(f.to_string()),
            RegistrationError::InvalidParams { .. } => AppError::Usage(e.to_string()),
            _ => AppError::Numeric(e.to_string()),
        }
    }
}

impl From<ModelError> for AppError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidSeries { .. } => AppError::Data(e.to_string()),
            _ => AppError::Numeric(e.to_string()),
        }
    }
}

impl From<TemplateError> for AppError {
    fn from(e: TemplateError) -> Self {
        match e {
            TemplateError::TooFewImages { .. } | TemplateError::GridMismatch => {
                AppError::Data(e.to_string())
            }
            _ => AppError::Numeric(e.to_string()),
        }
    }
}

impl From<ValidationError> for AppError {
    fn from(e: ValidationError) -> Self {
        match e {
            ValidationError::GridTooSmall { .. } | ValidationError::InvalidSpec { .. } => {
                AppError::Data(e.to_string())
            }
            ValidationError::Field(f) => AppError::Data(f.to_string()),
            ValidationError::Template(t) => t.into(),
            ValidationError::Model(m) => m.into(),
        }
    }
}

fn fs_err(path: &Path, e: std::io::Error) -> AppError {
    AppError::Data(format!("{}: {e}", path.display()))
}

/// Parse arguments, run, and return the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    match cli.cmd {
        Cmd::Build(args) => cmd_build(args),
        Cmd::Synthesize(args) => cmd_synthesize(args),
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Validate(args) => cmd_validate(args),
        Cmd::Dice(args) => cmd_dice(args),
        Cmd::Info(args) => cmd_info(args),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile, AppError> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| fs_err(p, e))?;
            toml::from_str(&text)
                .map_err(|e| AppError::Data(format!("{}: bad config: {e}", p.display())))
        }
    }
}

fn resolve_registration(cfg: &ConfigFile, flags: &RegOverrides) -> RegistrationParams {
    let mut p = RegistrationParams::default();
    if let Some(section) = &cfg.registration {
        if let Some(v) = section.levels {
            p.levels = v;
        }
        if let Some(v) = &section.iterations {
            p.iterations_per_level = v.clone();
        }
        if let Some(v) = section.update_sigma_mm {
            p.update_sigma_mm = v;
        }
        if let Some(v) = section.field_sigma_mm {
            p.field_sigma_mm = v;
        }
        if let Some(v) = section.step_scale {
            p.step_scale = v;
        }
        if let Some(v) = section.convergence_tol {
            p.convergence_tol = v;
        }
    }
    if let Some(v) = flags.levels {
        p.levels = v;
    }
    if let Some(v) = &flags.iterations {
        p.iterations_per_level = v.clone();
    }
    if let Some(v) = flags.update_sigma {
        p.update_sigma_mm = v;
    }
    if let Some(v) = flags.field_sigma {
        p.field_sigma_mm = v;
    }
    if let Some(v) = flags.step_scale {
        p.step_scale = v;
    }
    if let Some(v) = flags.convergence_tol {
        p.convergence_tol = v;
    }
    p
}

fn resolve_model(cfg: &ConfigFile, flags: &ModelOverrides) -> (usize, f64) {
    let mut iters = 5usize;
    let mut weight = 0.5f64;
    if let Some(section) = &cfg.model {
        if let Some(v) = section.groupwise_iters {
            iters = v;
        }
        if let Some(v) = section.smoothing_weight {
            weight = v;
        }
    }
    if let Some(v) = flags.groupwise_iters {
        iters = v;
    }
    if let Some(v) = flags.smoothing_weight {
        weight = v;
    }
    (iters, weight)
}

fn resolve_simulation(
    cfg: &ConfigFile,
    flags: &SimOverrides,
) -> Result<(SimulationSpec, GridSpec), AppError> {
    let mut spec = SimulationSpec::default();
    let mut dims = [64usize, 64, 1];
    let mut spacing = [1.0f64, 1.0, 1.0];
    if let Some(section) = &cfg.simulation {
        if let Some(v) = section.cohort_size {
            spec.cohort_size = v;
        }
        if let Some(v) = section.timepoints {
            spec.timepoints = v;
        }
        if let Some(v) = section.subject_variation_amplitude {
            spec.subject_variation_amplitude = v;
        }
        if let Some(v) = section.subject_variation_sigma_mm {
            spec.subject_variation_sigma_mm = v;
        }
        if let Some(v) = &section.aging_amplitude_schedule {
            spec.aging_amplitude_schedule = v.clone();
        }
        if let Some(v) = section.aging_sigma_mm {
            spec.aging_sigma_mm = v;
        }
        if let Some(v) = section.seed {
            spec.seed = v;
        }
        if let Some(v) = &section.dims {
            dims = parse_triplet_usize(v)?;
        }
        if let Some(v) = &section.spacing {
            spacing = parse_triplet_f64(v)?;
        }
    }
    if let Some(v) = flags.cohort_size {
        spec.cohort_size = v;
    }
    if let Some(v) = flags.timepoints {
        spec.timepoints = v;
    }
    if let Some(v) = flags.subject_amplitude {
        spec.subject_variation_amplitude = v;
    }
    if let Some(v) = flags.subject_sigma {
        spec.subject_variation_sigma_mm = v;
    }
    if let Some(v) = &flags.schedule {
        spec.aging_amplitude_schedule = v.clone();
    }
    if let Some(v) = flags.aging_sigma {
        spec.aging_sigma_mm = v;
    }
    if let Some(v) = flags.seed {
        spec.seed = v;
    }
    if let Some(v) = &flags.dims {
        dims = parse_triplet_usize(v)?;
    }
    if let Some(v) = &flags.spacing {
        spacing = parse_triplet_f64(v)?;
    }
    let grid = GridSpec::new(dims, spacing, [0.0; 3]).map_err(|e| AppError::Usage(e.to_string()))?;
    Ok((spec, grid))
}

fn parse_triplet_usize(v: &[usize]) -> Result<[usize; 3], AppError> {
    if v.len() != 3 {
        return Err(AppError::Usage(format!(
            "expected three comma-separated values, got {v:?}"
        )));
    }
    Ok([v[0], v[1], v[2]])
}

fn parse_triplet_f64(v: &[f64]) -> Result<[f64; 3], AppError> {
    if v.len() != 3 {
        return Err(AppError::Usage(format!(
            "expected three comma-separated values, got {v:?}"
        )));
    }
    Ok([v[0], v[1], v[2]])
}

fn read_ages_file(path: &Path) -> Result<Vec<f64>, AppError> {
    let text = fs::read_to_string(path).map_err(|e| fs_err(path, e))?;
    let mut ages = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        ages.push(line.parse::<f64>().map_err(|_| {
            AppError::Data(format!(
                "{}:{}: cannot parse age {line:?}",
                path.display(),
                i + 1
            ))
        })?);
    }
    Ok(ages)
}

fn list_series_volumes(dir: &Path) -> Result<Vec<PathBuf>, AppError> {
    let mut headers: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| fs_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "mhd"))
        .collect();
    headers.sort();
    if headers.is_empty() {
        return Err(AppError::Data(format!(
            "{}: no .mhd volumes found",
            dir.display()
        )));
    }
    Ok(headers)
}

fn cmd_build(args: BuildArgs) -> Result<(), AppError> {
    let cfg = load_config(&args.config)?;
    let reg = resolve_registration(&cfg, &args.reg);
    let (gw_iters, weight) = resolve_model(&cfg, &args.model);
    let ages = read_ages_file(&args.ages)?;
    let headers = list_series_volumes(&args.series)?;
    if headers.len() != ages.len() {
        return Err(AppError::Data(format!(
            "{} volumes but {} ages",
            headers.len(),
            ages.len()
        )));
    }
    let mut templates: Vec<ScalarVolume> = Vec::with_capacity(headers.len());
    for h in &headers {
        templates.push(io::read_scalar_volume(h)?);
    }
    let series = AgeSeries::new(templates, ages)?;
    let model = build_model_seeded(&series, &reg, gw_iters, weight, None)?;
    io::save_model(&model, &args.out)?;
    println!(
        "model written to {} (reference age {}, {} ages)",
        args.out.display(),
        model.reference_age,
        model.ages.len()
    );
    Ok(())
}

fn cmd_synthesize(args: SynthesizeArgs) -> Result<(), AppError> {
    if !args.age.is_finite() {
        return Err(AppError::Usage("age must be finite".into()));
    }
    let model = io::load_model(&args.model)?;
    let out = synthesize(&model, args.age)?;
    io::write_scalar_volume(&out, &args.out)?;
    if let Some(slice) = &args.slice {
        io::write_middle_slice_pgm(&out, slice)?;
    }
    println!(
        "synthesized age {} (curve value {})",
        args.age,
        model.gamma.eval(args.age)
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), AppError> {
    let cfg = load_config(&args.config)?;
    let reg = resolve_registration(&cfg, &args.reg);
    let (gw_iters, weight) = resolve_model(&cfg, &args.model);
    let (spec, grid) = resolve_simulation(&cfg, &args.sim)?;
    let out = simulate_longitudinal(&spec, &grid, &reg, gw_iters)?;

    let root = &args.out;
    for sub in ["subjects", "templates", "truth"] {
        fs::create_dir_all(root.join(sub)).map_err(|e| fs_err(root, e))?;
    }
    for (t, cohort) in out.subject_images.iter().enumerate() {
        for (k, img) in cohort.iter().enumerate() {
            let p = root.join(format!("subjects/t{t:02}_s{k:03}.mhd"));
            io::write_scalar_volume(img, &p)?;
        }
    }
    for (t, tpl) in out.series.templates().iter().enumerate() {
        io::write_scalar_volume(tpl, &root.join(format!("templates/template_{t:02}.mhd")))?;
    }
    for (t, gt) in out.ground_truth.iter().enumerate() {
        io::write_scalar_volume(gt, &root.join(format!("truth/truth_{t:02}.mhd")))?;
    }
    let ages_text: String = out
        .series
        .ages()
        .iter()
        .map(|a| format!("{a}\n"))
        .collect();
    fs::write(root.join("ages.txt"), ages_text).map_err(|e| fs_err(root, e))?;
    let resolved = ResolvedConfig {
        registration: &reg,
        groupwise_iters: gw_iters,
        smoothing_weight: weight,
        simulation: &spec,
        grid: &grid,
    };
    let toml_text = toml::to_string_pretty(&resolved)
        .map_err(|e| AppError::Data(format!("config echo: {e}")))?;
    fs::write(root.join("config_used.toml"), toml_text).map_err(|e| fs_err(root, e))?;
    println!(
        "simulated {} subjects x {} timepoints into {}",
        spec.cohort_size,
        spec.timepoints,
        root.display()
    );
    Ok(())
}

fn write_csv(path: &Path, header: &str, rows: &[(f64, f64)]) -> Result<(), AppError> {
    let mut text = String::with_capacity(rows.len() * 24 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for (t, v) in rows {
        text.push_str(&format!("{t},{v}\n"));
    }
    fs::write(path, text).map_err(|e| fs_err(path, e))
}

fn cmd_validate(args: ValidateArgs) -> Result<(), AppError> {
    if args.samples < 2 {
        return Err(AppError::Usage("need at least 2 samples".into()));
    }
    let model = io::load_model(&args.model)?;
    fs::create_dir_all(&args.out).map_err(|e| fs_err(&args.out, e))?;
    let first = model.ages[0];
    let last = model.ages[model.ages.len() - 1];
    let span = last - first;
    let lo = first - args.extend * span;
    let hi = last + args.extend * span;

    let sweep = topology_sweep(&model, lo, hi, args.samples)?;
    write_csv(&args.out.join("topology.csv"), "t,min_jacobian", &sweep)?;

    let ts: Vec<f64> = (0..args.samples)
        .map(|k| first + span * k as f64 / (args.samples - 1) as f64)
        .collect();
    let trend = mse_trend(&model, &ts)?;
    let trend_rows: Vec<(f64, f64)> = ts.iter().copied().zip(trend).collect();
    write_csv(&args.out.join("mse_trend.csv"), "t,value", &trend_rows)?;

    let n_gamma = 101;
    let gamma_rows: Vec<(f64, f64)> = (0..n_gamma)
        .map(|k| {
            let t = lo + (hi - lo) * k as f64 / (n_gamma - 1) as f64;
            (t, model.gamma.eval(t))
        })
        .collect();
    write_csv(&args.out.join("gamma.csv"), "t,value", &gamma_rows)?;

    let worst = sweep
        .iter()
        .map(|(_, d)| *d)
        .fold(f64::INFINITY, f64::min);
    println!(
        "reports written to {} (min jacobian over sweep: {worst})",
        args.out.display()
    );
    Ok(())
}

fn cmd_dice(args: DiceArgs) -> Result<(), AppError> {
    if args.labels.is_empty() {
        return Err(AppError::Usage("provide at least one label".into()));
    }
    let a = io::read_label_volume(&args.first)?;
    let b = io::read_label_volume(&args.second)?;
    for label in &args.labels {
        let d = dice(&a, &b, *label)?;
        println!("{label}\t{d:.6}");
    }
    Ok(())
}

fn cmd_info(args: InfoArgs) -> Result<(), AppError> {
    let model = io::load_model(&args.model)?;
    let g = model.template.grid;
    println!("model: {}", args.model.display());
    println!("tool version: {}", model.provenance.tool_version);
    println!(
        "grid: {}x{}x{} voxels, spacing {} {} {} mm",
        g.dims[0], g.dims[1], g.dims[2], g.spacing[0], g.spacing[1], g.spacing[2]
    );
    let ages: Vec<String> = model.ages.iter().map(|a| a.to_string()).collect();
    println!("ages: {}", ages.join(", "));
    println!(
        "reference: index {} (age {})",
        model.reference_index, model.reference_age
    );
    println!(
        "curve at range ends: {} / {}",
        model.provenance.gamma_at_first_age, model.provenance.gamma_at_last_age
    );
    println!(
        "degenerate directions: forward={} backward={}",
        model.provenance.degenerate_forward, model.provenance.degenerate_backward
    );
    println!("gamma knots:");
    for (age, value) in model.gamma.knots() {
        println!("  {age}\t{value}");
    }
    Ok(())
}

