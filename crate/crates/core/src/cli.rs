//! Command-line front end: `fit`, `compare`, `permtest` and `biplot`.
//!
//! Exit status is 0 on success, 1 for data or configuration errors and 2
//! for numerical failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::agls::{fit, fit_all, AdjustmentModel, AglsConfig, FitResult, Init};
use crate::biplot::{add_points, build_scene, render, scene_to_json, Format, SceneOptions};
use crate::cca::{biplot_coordinates, canonical_correlations, BiplotCoordinates};
use crate::correlation::{correlations, standardize};
use crate::diagnostics::{adjusted_variates, permutation_test, PermutationTestResult};
use crate::error::{Error, Result};
use crate::io::{load_csv, BlockSpec, Dataset};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Parser)]
#[command(name = "adjcca", version, about = "Classic and adjusted canonical correlation analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model and write fit.json (and optionally biplot.svg).
    Fit(FitArgs),
    /// Fit all five models and print a loss / RMSE table.
    Compare(CompareArgs),
    /// Permutation test of the canonical correlations.
    Permtest(PermArgs),
    /// Fit one model and write a calibrated biplot.
    Biplot(BiplotArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Block specification (.json or .toml).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-10)]
    epsilon: f64,
    #[arg(long = "max-iter", default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Zero)]
    init: InitArg,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelArg::Cca)]
    model: ModelArg,
    #[arg(long, default_value_t = 2)]
    rank: usize,
    /// Biplot scaling: 1 gives standard X markers, 0 principal.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    io: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    io: DataArgs,
    /// Repeat to compare several ranks.
    #[arg(long = "rank", default_values_t = [2usize])]
    ranks: Vec<usize>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct PermArgs {
    #[command(flatten)]
    io: DataArgs,
    #[arg(long, default_value_t = 999)]
    permutations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BiplotArgs {
    #[command(flatten)]
    io: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = FormatArg::Both)]
    format: FormatArg,
    /// Overlay the adjusted X canonical variates of the individuals.
    #[arg(long)]
    points: bool,
    /// Supplementary column used to colour the points.
    #[arg(long = "group-by")]
    group_by: Option<String>,
    /// Multiplier for the point cloud; default fits it in the unit box.
    #[arg(long = "point-scale")]
    point_scale: Option<f64>,
    /// Calibrate only these vectors (comma separated).
    #[arg(long, value_delimiter = ',')]
    calibrate: Option<Vec<String>>,
    /// `from:to` pair of vector labels for a perpendicular overlay; repeatable.
    #[arg(long = "project")]
    projections: Vec<String>,
    /// Clip radius for calibration dots, in plot units.
    #[arg(long)]
    clip: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Cca,
    Delta,
    Row,
    Col,
    Rowcol,
}

impl From<ModelArg> for AdjustmentModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Cca => AdjustmentModel::None,
            ModelArg::Delta => AdjustmentModel::Scalar,
            ModelArg::Row => AdjustmentModel::Row,
            ModelArg::Col => AdjustmentModel::Column,
            ModelArg::Rowcol => AdjustmentModel::RowColumn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Zero,
    Cca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Svg,
    Both,
}

impl FormatArg {
    fn json(self) -> bool {
        self != FormatArg::Svg
    }

    fn svg(self) -> bool {
        self != FormatArg::Json
    }
}

impl SolverArgs {
    fn config(&self, rank: usize) -> AglsConfig {
        AglsConfig {
            rank,
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            init: match self.init {
                InitArg::Zero => Init::Zero,
                InitArg::Cca => Init::ClassicCca,
            },
        }
    }
}

/// Captured stdout / stderr of one invocation.
#[derive(Debug, Default)]
pub struct Output {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

fn exit_code(e: &Error) -> i32 {
    if e.is_data_error() {
        1
    } else {
        2
    }
}

/// Runs the CLI on `args` (including the program name) without touching the
/// process streams.
pub fn run<I, T>(args: I) -> Output
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut out = Output::default();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                out.stderr = text;
                out.code = 1;
            } else {
                out.stdout = text;
            }
            return out;
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a, &mut out),
        Command::Compare(a) => cmd_compare(a, &mut out),
        Command::Permtest(a) => cmd_permtest(a, &mut out),
        Command::Biplot(a) => cmd_biplot(a, &mut out),
    };
    if let Err(e) = result {
        let _ = writeln!(out.stderr, "error: {e}");
        out.code = exit_code(&e);
    }
    out
}

/// Process entry point: forwards captured streams and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let out = run(args);
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    out.code
}

fn load(io: &DataArgs) -> Result<Dataset> {
    let spec = BlockSpec::from_path(&io.spec)?;
    load_csv(&io.data, &spec)
}

fn out_dir(io: &DataArgs) -> Result<&Path> {
    std::fs::create_dir_all(&io.out).map_err(|e| Error::io(&io.out, e))?;
    Ok(&io.out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("--alpha must lie in [0, 1], got {alpha}")))
    }
}

pub fn summary_line(fit: &FitResult) -> String {
    let mut s = format!(
        "model={} k={} loss={:.4} rmse_gls={:.4} rmse_ols={:.4} iterations={} converged={}",
        fit.model.short_name(),
        fit.rank,
        fit.loss,
        fit.rmse_gls,
        fit.rmse_ols,
        fit.iterations,
        fit.converged
    );
    if let Some(delta) = fit.delta {
        let _ = write!(s, " delta={delta:.2}");
    }
    s
}

#[derive(Serialize)]
struct FitReport<'a> {
    schema_version: &'static str,
    n: usize,
    x_names: &'a [String],
    y_names: &'a [String],
    canonical_correlations: Vec<f64>,
    fit: &'a FitResult,
    coordinates: BiplotCoordinates,
}

fn fitted(ds: &Dataset, m: &ModelArgs, solver: &SolverArgs) -> Result<FitResult> {
    check_alpha(m.alpha)?;
    let cs = correlations(&ds.data)?;
    fit(&cs, m.model.into(), &solver.config(m.rank))
}

fn cmd_fit(a: &FitArgs, out: &mut Output) -> Result<()> {
    let ds = load(&a.io)?;
    let result = fitted(&ds, &a.model, &a.solver)?;
    let dir = out_dir(&a.io)?;
    for w in &result.warnings {
        let _ = writeln!(out.stderr, "warning: {w}");
    }
    if a.format.json() {
        let cs = correlations(&ds.data)?;
        let report = FitReport {
            schema_version: SCHEMA_VERSION,
            n: ds.data.n(),
            x_names: ds.data.x_names(),
            y_names: ds.data.y_names(),
            canonical_correlations: canonical_correlations(&cs)?.0.iter().copied().collect(),
            fit: &result,
            coordinates: biplot_coordinates(&result, a.model.alpha, result.rank)?,
        };
        write_json(&dir.join("fit.json"), &report)?;
    }
    if a.format.svg() {
        let opts = SceneOptions {
            alpha: a.model.alpha,
            ..Default::default()
        };
        let scene = build_scene(&result, ds.data.x_names(), ds.data.y_names(), &opts)?;
        render(&scene, Format::Svg, &dir.join("biplot.svg"))?;
    }
    let _ = writeln!(out.stdout, "{}", summary_line(&result));
    Ok(())
}

#[derive(Serialize)]
struct CompareRow {
    model: AdjustmentModel,
    method: &'static str,
    loss: Option<f64>,
    rmse_gls: Option<f64>,
    rmse_ols: Option<f64>,
    iterations: Option<usize>,
    converged: Option<bool>,
    error: Option<String>,
}

#[derive(Serialize)]
struct CompareBlock {
    rank: usize,
    rows: Vec<CompareRow>,
}

#[derive(Serialize)]
struct CompareReport {
    schema_version: &'static str,
    blocks: Vec<CompareBlock>,
}

fn cmd_compare(a: &CompareArgs, out: &mut Output) -> Result<()> {
    let ds = load(&a.io)?;
    let cs = correlations(&ds.data)?;
    let dir = out_dir(&a.io)?;
    let mut blocks = Vec::new();
    for &rank in &a.ranks {
        let outcomes = fit_all(&cs, &a.solver.config(rank))?;
        let _ = writeln!(out.stdout, "k={rank}");
        let _ = writeln!(out.stdout, "{:<10} {:>10} {:>10} {:>10}", "Method", "sigma", "RMSE-GLS", "RMSE-OLS");
        let mut rows = Vec::new();
        for o in outcomes {
            let label = o.model.label();
            match o.result {
                Ok(f) => {
                    let _ = writeln!(
                        out.stdout,
                        "{label:<10} {:>10.4} {:>10.4} {:>10.4}",
                        f.loss, f.rmse_gls, f.rmse_ols
                    );
                    for w in &f.warnings {
                        let _ = writeln!(out.stderr, "warning: {label}: {w}");
                    }
                    rows.push(CompareRow {
                        model: o.model,
                        method: label,
                        loss: Some(f.loss),
                        rmse_gls: Some(f.rmse_gls),
                        rmse_ols: Some(f.rmse_ols),
                        iterations: Some(f.iterations),
                        converged: Some(f.converged),
                        error: None,
                    });
                }
                Err(e) => {
                    let _ = writeln!(out.stdout, "{label:<10} failed: {e}");
                    rows.push(CompareRow {
                        model: o.model,
                        method: label,
                        loss: None,
                        rmse_gls: None,
                        rmse_ols: None,
                        iterations: None,
                        converged: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        blocks.push(CompareBlock { rank, rows });
    }
    write_json(
        &dir.join("compare.json"),
        &CompareReport {
            schema_version: SCHEMA_VERSION,
            blocks,
        },
    )
}

#[derive(Serialize)]
struct PermReport<'a> {
    schema_version: &'static str,
    #[serde(flatten)]
    result: &'a PermutationTestResult,
}

fn cmd_permtest(a: &PermArgs, out: &mut Output) -> Result<()> {
    let ds = load(&a.io)?;
    let result = permutation_test(&ds.data, a.permutations, a.seed)?;
    let dir = out_dir(&a.io)?;
    for (i, (rho, p)) in result.observed.iter().zip(&result.p_values).enumerate() {
        let note = if result.structural_zero[i] { " (structural zero)" } else { "" };
        let _ = writeln!(out.stdout, "axis={} rho={rho:.4} p={p:.6}{note}", i + 1);
    }
    write_json(
        &dir.join("permtest.json"),
        &PermReport {
            schema_version: SCHEMA_VERSION,
            result: &result,
        },
    )
}

fn parse_projection(s: &str) -> Result<(String, String)> {
    match s.split_once(':') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
        _ => Err(Error::InvalidArgument(format!("--project expects `from:to`, got `{s}`"))),
    }
}

fn cmd_biplot(a: &BiplotArgs, out: &mut Output) -> Result<()> {
    let ds = load(&a.io)?;
    let result = fitted(&ds, &a.model, &a.solver)?;
    let opts = SceneOptions {
        alpha: a.model.alpha,
        clip_radius: a.clip,
        calibrate: a.calibrate.clone(),
        projections: a.projections.iter().map(|s| parse_projection(s)).collect::<Result<_>>()?,
        ..Default::default()
    };
    let mut scene = build_scene(&result, ds.data.x_names(), ds.data.y_names(), &opts)?;
    if a.points {
        let (xs, ys) = standardize(&ds.data)?;
        let cs = correlations(&ds.data)?;
        let std = biplot_coordinates(&result, 1.0, result.rank)?;
        let av = adjusted_variates(&xs, &ys, &cs, &std.f, &result.b)?;
        if av.pseudo_inverse_used {
            scene.warnings.push("adjusted variates used a pseudoinverse of a rank-deficient Gram matrix".into());
        }
        let labels: Vec<String> = (1..=ds.data.n()).map(|i| i.to_string()).collect();
        let groups = match &a.group_by {
            Some(name) => Some(
                ds.supplementary(name)
                    .ok_or_else(|| Error::BlockSpec(format!("`{name}` is not a supplementary column")))?
                    .values
                    .clone(),
            ),
            None => None,
        };
        add_points(&mut scene, &av.u_adj, &labels, groups.as_deref(), a.point_scale)?;
    } else if a.group_by.is_some() {
        return Err(Error::InvalidArgument("--group-by needs --points".into()));
    }
    for w in &scene.warnings {
        let _ = writeln!(out.stderr, "warning: {w}");
    }
    let dir = out_dir(&a.io)?;
    if a.format.json() {
        std::fs::write(dir.join("scene.json"), scene_to_json(&scene)?).map_err(|e| Error::io(dir.join("scene.json"), e))?;
    }
    if a.format.svg() {
        render(&scene, Format::Svg, &dir.join("biplot.svg"))?;
    }
    let _ = writeln!(out.stdout, "{}", summary_line(&result));
    Ok(())
}
