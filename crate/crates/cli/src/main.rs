mod config;
mod units;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use etalon_walkoff::analytic::{
    generic_loss, minimum_tilt_angle, normalized_walkoff, optimal_offset, optimized_loss,
    simple_insertion_loss, validity_warning, BeamGeometry, EtalonDesign, WalkoffMode,
};
use etalon_walkoff::coating::{generate_design_table, recommend_coating, MaterialDatabase};
use etalon_walkoff::laser::{
    fit_fixed_loss, fit_unconstrained, read_tuning_csv, tuning_curve, LaserCavityParams, LossModel,
    TiltCalibration, WalkoffLoss,
};
use etalon_walkoff::optimizer::{
    log_grid, minimize_over_eta, sweep_delta_parallel, sweep_delta_with, EtaSearch,
};
use etalon_walkoff::series::{
    overlap_series, SeriesParams, DEFAULT_MAX_TERMS, DEFAULT_TRUNCATION_TOLERANCE,
};
use etalon_walkoff::Error;

use units::{ghz_to_hz, mm_to_m, mrad_to_rad, nm_to_m, rad_to_mrad, um_to_m};

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "etalon",
    version,
    about = "Walk-off loss of tilted etalons in ring lasers"
)]
struct Cli {
    /// `key = value` file of default flag values; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Output file (stdout when omitted).
    #[arg(long, short, global = true, value_name = "FILE")]
    output: Option<PathBuf>,

    /// Leave the timestamp out of output headers.
    #[arg(long, global = true)]
    no_timestamp: bool,

    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Walk-off loss at one tilt angle.
    Loss(LossArgs),
    /// Realigned series loss over a log grid of normalized walk-off.
    Sweep(SweepArgs),
    /// Quarter-wave reflectivities and loss ratios for every substrate/coating pair.
    DesignTable(DesignTableArgs),
    /// Coatings ranked by how close they bring a substrate to self-alignment.
    Recommend(RecommendArgs),
    /// Output power versus tilt angle.
    Tune(TuneArgs),
    /// Fit the fixed round-trip loss to measured output powers.
    Fit(FitArgs),
}

#[derive(Args, Debug, Clone)]
struct EtalonArgs {
    /// Surface power reflectivity.
    #[arg(long = "R", default_value_t = 0.27)]
    reflectivity: f64,
    #[arg(long = "n", default_value_t = 1.447)]
    index: f64,
    #[arg(long = "d-mm", default_value_t = 4.0)]
    thickness_mm: f64,
    #[arg(long = "w0-um", default_value_t = 370.0)]
    waist_um: f64,
    #[arg(long = "wavelength-nm", default_value_t = 1342.0)]
    wavelength_nm: f64,
}

impl EtalonArgs {
    fn etalon(&self) -> etalon_walkoff::Result<EtalonDesign<f64>> {
        EtalonDesign::new(self.reflectivity, self.index, mm_to_m(self.thickness_mm))
    }

    fn beam(&self) -> etalon_walkoff::Result<BeamGeometry<f64>> {
        BeamGeometry::new(nm_to_m(self.wavelength_nm), um_to_m(self.waist_um))
    }
}

#[derive(Args, Debug, Clone)]
struct CavityArgs {
    #[arg(long = "p-sat-w", default_value_t = 44.0)]
    saturation_power_w: f64,
    #[arg(long = "g0", default_value_t = 0.11)]
    small_signal_gain: f64,
    #[arg(long = "t-out", default_value_t = 0.035)]
    output_coupling: f64,
    #[arg(long = "fsr-laser-ghz", default_value_t = 1.0)]
    fsr_laser_ghz: f64,
}

impl CavityArgs {
    fn cavity(&self, fixed_loss: f64) -> etalon_walkoff::Result<LaserCavityParams<f64>> {
        LaserCavityParams::new(
            self.saturation_power_w,
            self.small_signal_gain,
            self.output_coupling,
            fixed_loss,
            ghz_to_hz(self.fsr_laser_ghz),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossKind {
    /// Quadratic form at an explicit offset (`--eta`, default: no realignment).
    Generic,
    /// Quadratic form without realignment.
    Simple,
    /// Quadratic form after realignment.
    Optimized,
    /// Overlap series, realigned unless `--eta` is given.
    Series,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WalkoffKind {
    SmallAngle,
    Exact,
}

#[derive(Args, Debug)]
struct LossArgs {
    #[command(flatten)]
    etalon: EtalonArgs,
    #[arg(long = "theta-mrad", allow_hyphen_values = true)]
    theta_mrad: f64,
    #[arg(long, value_enum, default_value_t = LossKind::Simple)]
    model: LossKind,
    /// Normalized mode offset for the generic and series models.
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<f64>,
    #[arg(long, value_enum, default_value_t = WalkoffKind::SmallAngle)]
    walkoff: WalkoffKind,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated reflectivities.
    #[arg(long = "R", value_delimiter = ',', default_values_t = [0.05, 0.27, 0.5, 0.9])]
    reflectivities: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    points: usize,
    #[arg(long, default_value_t = 1e-3)]
    delta_min: f64,
    #[arg(long, default_value_t = 10.0)]
    delta_max: f64,
    /// Adds the simple-insertion offset column for this refractive index.
    #[arg(long = "n")]
    index: Option<f64>,
    /// Single-pass amplitude transmission of the etalon bulk.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Round-trip phase in radians.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    phase: f64,
    #[arg(long, default_value_t = DEFAULT_TRUNCATION_TOLERANCE)]
    truncation_tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_TERMS)]
    max_terms: usize,
    #[arg(long, default_value_t = EtaSearch::default().eta_tolerance)]
    eta_tol: f64,
    /// Spread rows over all cores; output is identical.
    #[arg(long)]
    parallel: bool,
    /// Write one file per reflectivity into this directory instead of `--output`.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DesignTableArgs {
    /// Material table (default: the bundled one).
    #[arg(long, value_name = "FILE")]
    materials: Option<PathBuf>,
    #[arg(long = "wavelength-um", default_value_t = 1.55)]
    wavelength_um: f64,
}

#[derive(Args, Debug)]
struct RecommendArgs {
    /// Substrate name from the material table.
    #[arg(long)]
    substrate: String,
    #[arg(long, value_name = "FILE")]
    materials: Option<PathBuf>,
    #[arg(long = "wavelength-um", default_value_t = 1.55)]
    wavelength_um: f64,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[command(flatten)]
    etalon: EtalonArgs,
    #[command(flatten)]
    cavity: CavityArgs,
    #[arg(long = "l0", default_value_t = 0.0213)]
    fixed_loss: f64,
    #[arg(long = "from-mrad", default_value_t = -12.0, allow_hyphen_values = true)]
    from_mrad: f64,
    #[arg(long = "to-mrad", default_value_t = 12.0, allow_hyphen_values = true)]
    to_mrad: f64,
    #[arg(long, default_value_t = 241)]
    points: usize,
    /// Skip the realigned-cavity column.
    #[arg(long)]
    simple_only: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV with `angle_mrad` or `turns`, `power_W` and optional `sigma_W`.
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    #[command(flatten)]
    etalon: EtalonArgs,
    #[command(flatten)]
    cavity: CavityArgs,
    #[arg(long, value_enum, default_value_t = FitModel::Simple)]
    model: FitModel,
    /// Calibration for `turns` data.
    #[arg(long = "mrad-per-turn")]
    mrad_per_turn: Option<f64>,
    /// Tilt at zero turns.
    #[arg(
        long = "offset-mrad",
        default_value_t = 0.0,
        allow_hyphen_values = true
    )]
    offset_mrad: f64,
    /// Also free the saturation power and small-signal gain.
    #[arg(long)]
    unconstrained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitModel {
    Simple,
    Optimized,
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Usage(String),
    NotConverged(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_convergence() => EXIT_NOT_CONVERGED,
            CliError::Core(Error::Io(_)) => EXIT_FAILURE,
            CliError::Core(_) | CliError::Usage(_) => EXIT_VALIDATION,
            CliError::NotConverged(_) => EXIT_NOT_CONVERGED,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(s) | CliError::NotConverged(s) => f.write_str(s),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

struct Context {
    format: Format,
    output: Option<PathBuf>,
    timestamp: Option<u64>,
    verbose: u8,
}

impl Context {
    fn sink(&self) -> CliResult<Box<dyn Write>> {
        Ok(match &self.output {
            Some(path) => Box::new(BufWriter::new(File::create(path)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn warn(msg: impl AsRef<str>) {
    eprintln!("warning: {}", msg.as_ref());
}

fn command() -> clap::Command {
    Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true))
}

fn run(args: Vec<OsString>) -> CliResult {
    let cmd = command();
    let args = config::merge(&cmd, args).map_err(|e| CliError::Usage(e.to_string()))?;
    let matches = match cmd.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    Ok(())
                }
                _ => Err(CliError::Usage(String::new())),
            };
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    let ctx = Context {
        format: cli.format,
        output: cli.output,
        timestamp: if cli.no_timestamp {
            None
        } else {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .ok()
                .map(|d| d.as_secs())
        },
        verbose: cli.verbose,
    };
    match cli.command {
        Command::Loss(a) => cmd_loss(&ctx, &a),
        Command::Sweep(a) => cmd_sweep(&ctx, &a),
        Command::DesignTable(a) => cmd_design_table(&ctx, &a),
        Command::Recommend(a) => cmd_recommend(&ctx, &a),
        Command::Tune(a) => cmd_tune(&ctx, &a),
        Command::Fit(a) => cmd_fit(&ctx, &a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let text = e.to_string();
            if !text.is_empty() {
                eprintln!("error: {text}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}

#[derive(serde::Serialize)]
struct LossReport {
    model: &'static str,
    theta_mrad: f64,
    delta: f64,
    eta: f64,
    loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    series_terms: Option<usize>,
    warnings: Vec<String>,
}

fn cmd_loss(ctx: &Context, a: &LossArgs) -> CliResult {
    let etalon = a.etalon.etalon()?;
    let beam = a.etalon.beam()?;
    let theta = mrad_to_rad(a.theta_mrad);
    let mode = match a.walkoff {
        WalkoffKind::SmallAngle => WalkoffMode::SmallAngle,
        WalkoffKind::Exact => WalkoffMode::Exact,
    };
    let state = normalized_walkoff(&etalon, &beam, theta, mode)?;
    let r = etalon.reflectivity();
    let n = etalon.refractive_index();
    let delta = state.normalized_walkoff;
    if a.eta.is_some() && matches!(a.model, LossKind::Simple | LossKind::Optimized) {
        return Err(CliError::Usage(
            "--eta applies only to the generic and series models".into(),
        ));
    }

    let mut series_terms = None;
    let (name, eta, loss) = match a.model {
        LossKind::Generic => {
            let eta = a.eta.unwrap_or(state.normalized_offset);
            ("generic", eta, generic_loss(r, delta, eta))
        }
        LossKind::Simple => (
            "simple",
            state.normalized_offset,
            simple_insertion_loss(r, n, delta),
        ),
        LossKind::Optimized => (
            "optimized",
            optimal_offset(r, delta),
            optimized_loss(r, delta),
        ),
        LossKind::Series => {
            let params = SeriesParams::from_etalon(&etalon)?;
            match a.eta {
                Some(eta) => {
                    let res = overlap_series(&params, delta, eta)?;
                    series_terms = Some(res.terms_used);
                    ("series", eta, res.loss)
                }
                None => {
                    // Mirror image for negative tilt.
                    let res = minimize_over_eta(&params, delta.abs())?;
                    if !res.converged {
                        return Err(CliError::NotConverged(format!(
                            "offset search did not converge (best loss {})",
                            res.loss_opt
                        )));
                    }
                    ("series", res.eta_opt * delta.signum(), res.loss_opt)
                }
            }
        }
    };

    let mut warnings = Vec::new();
    if matches!(
        a.model,
        LossKind::Generic | LossKind::Simple | LossKind::Optimized
    ) {
        warnings.extend(validity_warning(delta, eta));
    }
    if theta.abs() <= minimum_tilt_angle(&beam) {
        warnings.push(format!(
            "|theta| is at or below the minimum insertion angle {:.4} mrad",
            rad_to_mrad(minimum_tilt_angle(&beam))
        ));
    }
    for w in &warnings {
        warn(w);
    }

    // Normalize -0 for printing.
    let eta = eta + 0.0;
    let report = LossReport {
        model: name,
        theta_mrad: a.theta_mrad,
        delta,
        eta,
        loss,
        series_terms,
        warnings,
    };
    let mut out = ctx.sink()?;
    match ctx.format {
        Format::Json => writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&report).map_err(Error::from)?
        )?,
        Format::Csv => {
            writeln!(out, "model,theta_mrad,delta,eta,loss")?;
            writeln!(
                out,
                "{},{},{},{},{}",
                report.model, report.theta_mrad, delta, eta, loss
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_sweep(ctx: &Context, a: &SweepArgs) -> CliResult {
    if a.reflectivities.is_empty() {
        return Err(CliError::Usage(
            "--R needs at least one reflectivity".into(),
        ));
    }
    let grid = log_grid(a.delta_min, a.delta_max, a.points)?;
    let search = EtaSearch {
        eta_tolerance: a.eta_tol,
        ..EtaSearch::default()
    };
    let mut tables = Vec::with_capacity(a.reflectivities.len());
    for &r in &a.reflectivities {
        let params = SeriesParams::new(r)?
            .with_bulk_transmission(a.tau)?
            .with_roundtrip_phase(a.phase)?
            .with_truncation(a.truncation_tol, a.max_terms)?;
        ctx.note(format!("sweeping R = {r} over {} points", grid.len()));
        let table = if a.parallel {
            sweep_delta_parallel(&params, &grid, &search, a.index)?
        } else {
            sweep_delta_with(&params, &grid, &search, a.index)?
        };
        tables.push(table.with_timestamp(ctx.timestamp));
    }

    let unconverged: usize = tables
        .iter()
        .map(|t| t.rows.iter().filter(|r| !r.converged).count())
        .sum();

    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir)?;
        for table in &tables {
            let ext = if ctx.format == Format::Json {
                "json"
            } else {
                "csv"
            };
            let path = dir.join(format!("sweep_R{}.{ext}", table.reflectivity));
            write_sweep(
                ctx.format,
                &mut BufWriter::new(File::create(&path)?),
                &[table],
            )?;
            ctx.note(format!("wrote {}", path.display()));
        }
    } else {
        let mut out = ctx.sink()?;
        write_sweep(ctx.format, &mut out, &tables.iter().collect::<Vec<_>>())?;
        out.flush()?;
    }

    if unconverged > 0 {
        return Err(CliError::NotConverged(format!(
            "{unconverged} sweep rows did not converge (flagged in the output)"
        )));
    }
    Ok(())
}

fn write_sweep(
    format: Format,
    out: &mut dyn Write,
    tables: &[&etalon_walkoff::SweepTableF64],
) -> CliResult {
    match format {
        Format::Csv => {
            for table in tables {
                table.write_csv(&mut *out)?;
            }
        }
        Format::Json => {
            let docs = tables
                .iter()
                .map(|t| {
                    t.to_json()
                        .map(|s| serde_json::from_str::<serde_json::Value>(&s).expect("valid json"))
                })
                .collect::<etalon_walkoff::Result<Vec<_>>>()?;
            let doc = if docs.len() == 1 {
                docs.into_iter().next().unwrap()
            } else {
                serde_json::Value::Array(docs)
            };
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&doc).map_err(Error::from)?
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn load_materials(path: Option<&Path>) -> CliResult<MaterialDatabase> {
    Ok(match path {
        Some(p) => MaterialDatabase::load(p)?,
        None => MaterialDatabase::builtin(),
    })
}

fn cmd_design_table(ctx: &Context, a: &DesignTableArgs) -> CliResult {
    let db = load_materials(a.materials.as_deref())?;
    let wavelength = um_to_m(a.wavelength_um);
    let table = generate_design_table(&db.substrates_at(wavelength), &db.coatings_at(wavelength))?;
    let mut out = ctx.sink()?;
    match ctx.format {
        Format::Csv => table.write_csv(&mut out, ctx.timestamp)?,
        Format::Json => writeln!(out, "{}", table.to_json(ctx.timestamp)?)?,
    }
    out.flush()?;
    Ok(())
}

#[derive(serde::Serialize)]
struct RecommendRow {
    coating: String,
    n_coating: f64,
    quarter_wave_reflectivity: f64,
    loss_ratio: f64,
    range_min: f64,
    range_max: f64,
    target_reflectivity: f64,
    reachable: bool,
}

fn cmd_recommend(ctx: &Context, a: &RecommendArgs) -> CliResult {
    let db = load_materials(a.materials.as_deref())?;
    let substrate = db
        .find(&a.substrate)
        .ok_or_else(|| CliError::Usage(format!("unknown substrate `{}`", a.substrate)))?;
    let designs = recommend_coating(substrate, &db.coatings_at(um_to_m(a.wavelength_um)))?;
    if designs.iter().all(|d| !d.reachable) {
        warn(format!(
            "no single-layer coating reaches the self-alignment reflectivity {:.4} on {}",
            designs[0].target_reflectivity, substrate.name
        ));
    }
    let rows: Vec<RecommendRow> = designs
        .iter()
        .map(|d| {
            let c = d.coating.as_ref().expect("coated design");
            RecommendRow {
                coating: c.name.clone(),
                n_coating: c.refractive_index,
                quarter_wave_reflectivity: d.layer_reflectivity,
                loss_ratio: d.loss_ratio,
                range_min: d.accessible_range.0,
                range_max: d.accessible_range.1,
                target_reflectivity: d.target_reflectivity,
                reachable: d.reachable,
            }
        })
        .collect();
    let mut out = ctx.sink()?;
    match ctx.format {
        Format::Csv => {
            etalon_walkoff::output::write_header(
                &mut out,
                "recommendation",
                ctx.timestamp,
                &[format!("substrate={}", substrate.name)],
            )?;
            etalon_walkoff::output::write_csv_rows(&mut out, &rows)?;
        }
        Format::Json => writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&rows).map_err(Error::from)?
        )?,
    }
    out.flush()?;
    Ok(())
}

fn cmd_tune(ctx: &Context, a: &TuneArgs) -> CliResult {
    if a.points < 2 {
        return Err(CliError::Usage("--points must be at least 2".into()));
    }
    if a.to_mrad.partial_cmp(&a.from_mrad) != Some(std::cmp::Ordering::Greater) {
        return Err(CliError::Usage("--to-mrad must exceed --from-mrad".into()));
    }
    let cavity = a.cavity.cavity(a.fixed_loss)?;
    if !cavity.lases() {
        warn("the untilted laser is below threshold");
    }
    let step = (a.to_mrad - a.from_mrad) / (a.points - 1) as f64;
    let thetas: Vec<f64> = (0..a.points)
        .map(|k| {
            mrad_to_rad(if k + 1 == a.points {
                a.to_mrad
            } else {
                a.from_mrad + step * k as f64
            })
        })
        .collect();
    let curve = tuning_curve(
        &cavity,
        &a.etalon.etalon()?,
        &a.etalon.beam()?,
        &thetas,
        !a.simple_only,
    )?;
    let mut out = ctx.sink()?;
    match ctx.format {
        Format::Csv => curve.write_csv(
            &mut out,
            ctx.timestamp,
            &[format!("fixed_loss={}", a.fixed_loss)],
        )?,
        Format::Json => writeln!(out, "{}", curve.to_json(ctx.timestamp)?)?,
    }
    out.flush()?;
    Ok(())
}

#[derive(serde::Serialize)]
struct FitReport {
    model: &'static str,
    points: usize,
    weighted: bool,
    fixed_loss: f64,
    fixed_loss_stderr: f64,
    residual_sum: f64,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    saturation_power_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    saturation_power_stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    small_signal_gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    small_signal_gain_stderr: Option<f64>,
}

fn cmd_fit(ctx: &Context, a: &FitArgs) -> CliResult {
    let calibration = a.mrad_per_turn.map(|m| TiltCalibration {
        rad_per_turn: mrad_to_rad(m),
        offset: mrad_to_rad(a.offset_mrad),
    });
    let data = read_tuning_csv(File::open(&a.data)?, calibration)?;
    let model = match a.model {
        FitModel::Simple => LossModel::Simple,
        FitModel::Optimized => LossModel::Optimized,
    };
    let walkoff = WalkoffLoss::new(a.etalon.etalon()?, a.etalon.beam()?, model);
    let cavity = a.cavity.cavity(0.0)?;
    let name = match a.model {
        FitModel::Simple => "simple",
        FitModel::Optimized => "optimized",
    };

    let report = if a.unconstrained {
        let full = fit_unconstrained(&cavity, &walkoff, &data)?;
        FitReport {
            model: name,
            points: data.len(),
            weighted: data.iter().all(|p| p.power_uncertainty.is_some()),
            fixed_loss: full.fixed_loss,
            fixed_loss_stderr: full.standard_errors[0],
            residual_sum: full.residual_sum,
            converged: full.converged,
            saturation_power_w: Some(full.saturation_power),
            saturation_power_stderr: Some(full.standard_errors[1]),
            small_signal_gain: Some(full.small_signal_gain),
            small_signal_gain_stderr: Some(full.standard_errors[2]),
        }
    } else {
        let fit = fit_fixed_loss(&cavity, &walkoff, &data)?;
        FitReport {
            model: name,
            points: fit.points,
            weighted: fit.weighted,
            fixed_loss: fit.fixed_loss,
            fixed_loss_stderr: fit.standard_error,
            residual_sum: fit.residual_sum,
            converged: fit.converged,
            saturation_power_w: None,
            saturation_power_stderr: None,
            small_signal_gain: None,
            small_signal_gain_stderr: None,
        }
    };

    let mut out = ctx.sink()?;
    match ctx.format {
        Format::Json => writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&report).map_err(Error::from)?
        )?,
        Format::Csv => {
            etalon_walkoff::output::write_header(
                &mut out,
                "fit",
                ctx.timestamp,
                &[format!("data={}", a.data.display())],
            )?;
            etalon_walkoff::output::write_csv_rows(&mut out, std::slice::from_ref(&report))?;
        }
    }
    out.flush()?;
    if !report.converged {
        return Err(CliError::NotConverged("fit did not converge".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<OsString> {
        list.iter().map(OsString::from).collect()
    }

    #[test]
    fn definition_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn config_values_lose_to_flags() {
        let entries = config::parse("R = 0.5\nformat = json\ntheta-mrad = 3\nl0 = 0.02\n").unwrap();
        let merged = config::merge_entries(
            &command(),
            args(&["etalon", "--format", "csv", "loss", "--R", "0.27"]),
            &entries,
        )
        .unwrap();
        let cli = Cli::from_arg_matches(&command().try_get_matches_from(merged).unwrap()).unwrap();
        assert_eq!(cli.format, Format::Csv);
        let Command::Loss(loss) = cli.command else {
            panic!()
        };
        assert_eq!(loss.etalon.reflectivity, 0.27);
        assert_eq!(loss.theta_mrad, 3.0);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let entries = config::parse("colour = blue\n").unwrap();
        assert!(config::merge_entries(&command(), args(&["etalon", "loss"]), &entries).is_err());
        let entries = config::parse("simple-only = maybe\n").unwrap();
        assert!(config::merge_entries(&command(), args(&["etalon", "tune"]), &entries).is_err());
    }

    #[test]
    fn config_switches() {
        let entries = config::parse("no-timestamp = true\nsimple-only = false\n").unwrap();
        let merged =
            config::merge_entries(&command(), args(&["etalon", "tune"]), &entries).unwrap();
        let cli = Cli::from_arg_matches(&command().try_get_matches_from(merged).unwrap()).unwrap();
        assert!(cli.no_timestamp);
        let Command::Tune(tune) = cli.command else {
            panic!()
        };
        assert!(!tune.simple_only);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(
            CliError::Core(Error::EmptyInput("x")).exit_code(),
            EXIT_VALIDATION
        );
        let nc = Error::NotConverged {
            what: "series",
            iterations: 1,
            best: 0.0,
        };
        assert_eq!(CliError::Core(nc).exit_code(), EXIT_NOT_CONVERGED);
    }
}
