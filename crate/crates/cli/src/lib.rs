//! Command-line driver: configuration, subcommands and report writing.
//!
//! Configuration is a flat JSON object. Every key can be overridden by a
//! flag of the same name (`--t_end 5`); unknown keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use efgeo::geometry::{convergence_study, ConvergenceReport, FamilyRecipe, ParamGrid, Stencil};
use efgeo::identity::{evaluate_identity, t_geo_series, IdentityConfig, IdentityReport, Mutation};
use efgeo::propagator::{propagate, HUpdate, PropagationReport, PropagatorConfig};
use efgeo::{DecomposeOptions, DerivativeMethod, Grid1D, ModelParams, ModelSystem, TimeDerivativeMethod};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] efgeo::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use efgeo::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } => EXIT_USAGE,
            CliError::Core(E::Config(_) | E::Grid(_) | E::InvalidField(_) | E::Domain { .. } | E::Recipe(_)) => EXIT_USAGE,
            CliError::Core(_) => EXIT_FAIL,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// All configuration keys. Keys left unset take per-subcommand defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub eta: f64,
    pub mass: f64,
    pub gamma: f64,
    /// Defaults to `1 / mass`.
    pub inertia: Option<f64>,
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub t_start: f64,
    /// Default 10, or 2 for `propagate`.
    pub t_end: Option<f64>,
    /// Default 101 (identity), 201 (figure), 20 (propagate).
    pub samples: Option<usize>,
    /// Time-difference step of the identity, or propagation step.
    pub dt: f64,
    pub tolerance: f64,
    pub floor: f64,
    pub support_floor: f64,
    pub method: DerivativeMethod,
    pub mutation: String,
    /// `finite-difference` or `analytic` time derivatives in the Hamiltonian.
    pub time_derivatives: String,
    pub h_dt: f64,
    pub h_update: HUpdate,
    pub max_dt: f64,
    pub l2_tolerance: f64,
    pub snapshots: bool,
    pub recipes: String,
    pub dim: usize,
    pub points: usize,
    pub refinements: usize,
    pub stencil: Stencil,
    pub tensor_tolerance: f64,
    pub min_order: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            mass: 10.0,
            gamma: 40.0,
            inertia: None,
            x_min: -4.0,
            x_max: 6.0,
            n: 4096,
            t_start: 0.0,
            t_end: None,
            samples: None,
            dt: 1e-4,
            tolerance: 1e-3,
            floor: 1e-13,
            support_floor: 1e-60,
            method: DerivativeMethod::Spectral,
            mutation: "none".into(),
            time_derivatives: "finite-difference".into(),
            h_dt: 1e-5,
            h_update: HUpdate::PerStep,
            max_dt: 1e-3,
            l2_tolerance: 1e-3,
            snapshots: false,
            recipes: FamilyRecipe::PRESETS.join(","),
            dim: 2,
            points: 64,
            refinements: 3,
            stencil: Stencil::Richardson,
            tensor_tolerance: 1e-6,
            min_order: 3.5,
        }
    }
}

impl RunConfig {
    pub fn params(&self) -> Result<ModelParams> {
        let p = ModelParams::new(self.eta, self.mass, self.gamma)?;
        Ok(match self.inertia {
            Some(i) => p.with_inertia(i)?,
            None => p,
        })
    }

    pub fn system(&self) -> Result<ModelSystem> {
        let grid = Grid1D::new(self.x_min, self.x_max, self.n)?;
        let method = match self.time_derivatives.as_str() {
            "finite-difference" => TimeDerivativeMethod::FiniteDifference { dt: self.h_dt },
            "analytic" => TimeDerivativeMethod::Analytic,
            other => return Err(CliError::Config(format!("unknown time_derivatives '{other}'"))),
        };
        Ok(ModelSystem::new(self.params()?, grid)?.with_time_derivatives(method))
    }

    pub fn decompose_options(&self) -> Result<DecomposeOptions> {
        let o = DecomposeOptions {
            floor: self.floor,
            support_floor: self.support_floor,
            method: self.method,
        };
        o.validate()?;
        Ok(o)
    }

    pub fn identity_config(&self) -> Result<IdentityConfig> {
        let c = IdentityConfig {
            t_start: self.t_start,
            t_end: self.t_end.unwrap_or(10.0),
            samples: self.samples.unwrap_or(101),
            dt: self.dt,
            tolerance: self.tolerance,
            decompose: self.decompose_options()?,
            mutation: self.mutation.parse::<Mutation>()?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn propagator_config(&self) -> Result<PropagatorConfig> {
        Ok(PropagatorConfig {
            dt: self.dt,
            t_end: self.t_end.unwrap_or(2.0),
            h_update: self.h_update,
            samples: self.samples.unwrap_or(20),
            max_dt: self.max_dt,
            snapshots: self.snapshots,
        })
    }

    pub fn figure_times(&self) -> Result<Vec<f64>> {
        let t_end = self.t_end.unwrap_or(10.0);
        let samples = self.samples.unwrap_or(201);
        if samples < 2 || !(t_end > self.t_start) {
            return Err(CliError::Config(format!(
                "figure range [{}, {t_end}] with {samples} samples needs two distinct times",
                self.t_start
            )));
        }
        Ok((0..samples)
            .map(|k| self.t_start + (t_end - self.t_start) * k as f64 / (samples - 1) as f64)
            .collect())
    }

    pub fn recipe_list(&self) -> Result<Vec<FamilyRecipe>> {
        let names: Vec<&str> = self.recipes.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if names.is_empty() {
            return Err(CliError::Config("no recipes selected".into()));
        }
        Ok(names.iter().map(|n| FamilyRecipe::preset(n, self.dim)).collect::<efgeo::Result<_>>()?)
    }

    /// Points per axis at each refinement level.
    pub fn tensor_levels(&self) -> Vec<usize> {
        (0..=self.refinements).map(|k| self.points << k).collect()
    }
}

/// Per-key overrides; each flag has the name of its JSON key.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Overrides {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
    #[arg(long = "x_min", allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    #[arg(long = "x_max", allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long = "t_start", allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_start: Option<f64>,
    #[arg(long = "t_end", allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    #[arg(long = "support_floor")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support_floor: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutation: Option<String>,
    #[arg(long = "time_derivatives")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_derivatives: Option<String>,
    #[arg(long = "h_dt")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_dt: Option<f64>,
    #[arg(long = "h_update")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_update: Option<String>,
    #[arg(long = "max_dt")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_dt: Option<f64>,
    #[arg(long = "l2_tolerance")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2_tolerance: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recipes: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinements: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stencil: Option<String>,
    #[arg(long = "tensor_tolerance")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tensor_tolerance: Option<f64>,
    #[arg(long = "min_order")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_order: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Flat JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "efgeo-out")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Parser)]
#[command(name = "efgeo", version, about = "Exact-factorization geometry checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the energy-transfer identity for the geometric kinetic energy.
    VerifyIdentity(CommonArgs),
    /// Check the rank-3 tensor identities on synthetic families.
    VerifyTensors(CommonArgs),
    /// Write mean position, width and geometric kinetic energy over time.
    EmitFigure(CommonArgs),
    /// Propagate the model state and compare with its closed form.
    Propagate(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::VerifyIdentity(_) => "verify-identity",
            Command::VerifyTensors(_) => "verify-tensors",
            Command::EmitFigure(_) => "emit-figure",
            Command::Propagate(_) => "propagate",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::VerifyIdentity(a) | Command::VerifyTensors(a) | Command::EmitFigure(a) | Command::Propagate(a) => a,
        }
    }
}

/// Reads the config file (if any) and applies the flag overrides.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut map = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(CliError::Config(format!("{} must hold a JSON object", p.display()))),
                Err(e) => return Err(CliError::Config(format!("{}: {e}", p.display()))),
            }
        }
        None => Map::new(),
    };
    let Value::Object(extra) = serde_json::to_value(overrides).expect("overrides serialize") else {
        unreachable!("overrides serialize to an object")
    };
    map.extend(extra);
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Config(e.to_string()))
}

/// Full-precision float formatting for CSV and regression diffs.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv(header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_f64).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<String> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Io { path, source })?;
    Ok(name.to_string())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    write(dir, name, &text)
}

#[derive(Debug, Serialize)]
struct Manifest<'a, R: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    resolved: R,
    outputs: Vec<String>,
    passed: bool,
}

fn manifest<R: Serialize>(dir: &Path, command: &str, cfg: &RunConfig, resolved: R, mut outputs: Vec<String>, passed: bool) -> Result<()> {
    outputs.push("manifest.json".into());
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        resolved,
        outputs,
        passed,
    };
    write_json(dir, "manifest.json", &m).map(|_| ())
}

/// Outcome of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub passed: bool,
    pub summary: Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Summary {
    Identity,
    Tensors,
    Figure,
    Propagation,
}

pub fn cmd_verify_identity(cfg: &RunConfig, out: &Path) -> Result<(Outcome, IdentityReport)> {
    let sys = cfg.system()?;
    let icfg = cfg.identity_config()?;
    let report = evaluate_identity(&sys, &icfg)?;
    let rows = (0..report.times.len()).map(|k| {
        let t = &report.rhs_terms[k];
        vec![
            report.times[k],
            report.t_geo[k],
            report.lhs[k],
            t.t1,
            t.t2_a,
            t.t2_b,
            t.t3,
            t.t4_a,
            t.t4_b,
            report.rhs_a[k],
            report.rhs_b[k],
            report.residual_a[k],
            report.residual_b[k],
        ]
    });
    let header = [
        "t", "t_geo", "lhs", "t1", "t2_a", "t2_b", "t3", "t4_a", "t4_b", "rhs_a", "rhs_b", "residual_a", "residual_b",
    ];
    let outputs = vec![write_json(out, "report.json", &report)?, write(out, "series.csv", &csv(&header, rows))?];
    manifest(out, "verify-identity", cfg, (&sys.params, &icfg), outputs, report.passed)?;
    Ok((Outcome { passed: report.passed, summary: Summary::Identity }, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorSuiteReport {
    pub tolerance: f64,
    pub min_order: f64,
    pub passed: bool,
    pub recipes: Vec<RecipeVerdict>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecipeVerdict {
    pub passed: bool,
    pub coarse_max_residual: f64,
    pub min_order: Option<f64>,
    pub study: ConvergenceReport,
}

pub fn cmd_verify_tensors(cfg: &RunConfig, out: &Path) -> Result<(Outcome, TensorSuiteReport)> {
    let recipes = cfg.recipe_list()?;
    let levels = cfg.tensor_levels();
    let grid = ParamGrid::periodic(cfg.dim, cfg.points)?;
    let mut verdicts = Vec::new();
    for recipe in &recipes {
        let study = convergence_study(recipe, &grid, &levels, cfg.stencil)?;
        let coarse = study.coarse_max_residual();
        let min_order = study.min_order();
        let level_ok = study
            .levels
            .iter()
            .all(|l| l.metric_symmetry.max <= 1e-10 && l.min_metric_eigenvalue >= -1e-12);
        let order_ok = levels.len() < 2 || min_order.is_none_or(|o| o >= cfg.min_order);
        verdicts.push(RecipeVerdict {
            passed: coarse <= cfg.tensor_tolerance && order_ok && level_ok,
            coarse_max_residual: coarse,
            min_order,
            study,
        });
    }
    let report = TensorSuiteReport {
        tolerance: cfg.tensor_tolerance,
        min_order: cfg.min_order,
        passed: verdicts.iter().all(|v| v.passed),
        recipes: verdicts,
    };
    let outputs = vec![write_json(out, "report.json", &report)?];
    manifest(out, "verify-tensors", cfg, &levels, outputs, report.passed)?;
    Ok((Outcome { passed: report.passed, summary: Summary::Tensors }, report))
}

/// One row of the figure data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FigureRow {
    pub t: f64,
    pub xbar: f64,
    pub sigma: f64,
    pub t_geo: f64,
}

pub fn cmd_emit_figure(cfg: &RunConfig, out: &Path) -> Result<(Outcome, Vec<FigureRow>)> {
    let sys = cfg.system()?;
    let times = cfg.figure_times()?;
    let t_geo = t_geo_series(&sys, &times, cfg.decompose_options()?)?;
    let rows: Vec<FigureRow> = times
        .iter()
        .zip(&t_geo)
        .map(|(&t, &g)| FigureRow {
            t,
            xbar: sys.params.mean_position(t),
            sigma: sys.params.width(t),
            t_geo: g,
        })
        .collect();
    let body = csv(&["t", "xbar", "sigma", "T_geo"], rows.iter().map(|r| vec![r.t, r.xbar, r.sigma, r.t_geo]));
    let outputs = vec![write(out, "figure.csv", &body)?];
    manifest(out, "emit-figure", cfg, (&sys.params, &times.len()), outputs, true)?;
    Ok((Outcome { passed: true, summary: Summary::Figure }, rows))
}

#[derive(Debug, Clone, Serialize)]
pub struct PropagationSummary {
    pub l2_tolerance: f64,
    pub passed: bool,
    #[serde(flatten)]
    pub report: PropagationReport,
}

pub fn cmd_propagate(cfg: &RunConfig, out: &Path) -> Result<(Outcome, PropagationSummary)> {
    let sys = cfg.system()?;
    let pcfg = cfg.propagator_config()?;
    let outcome = propagate(&sys, &pcfg)?;
    let report = outcome.report;
    let header = [
        "t",
        "l2_error",
        "density_error",
        "w_error",
        "t_geo",
        "t_geo_error",
        "norm_drift",
        "mean_position",
        "mean_position_error",
        "width",
        "width_error",
    ];
    let rows = report.records.iter().map(|r| {
        vec![
            r.t,
            r.l2_error,
            r.density_error,
            r.w_error,
            r.t_geo,
            r.t_geo_error,
            r.norm_drift,
            r.mean_position,
            r.mean_position_error,
            r.width,
            r.width_error,
        ]
    });
    let series = csv(&header, rows);
    let summary = PropagationSummary {
        l2_tolerance: cfg.l2_tolerance,
        passed: report.final_l2_error <= cfg.l2_tolerance,
        report,
    };
    let mut outputs = vec![write_json(out, "report.json", &summary)?, write(out, "series.csv", &series)?];
    if !outcome.snapshots.is_empty() {
        let x = sys.grid.points();
        let mut s = String::from("t,x,re_psi1,im_psi1,re_psi2,im_psi2\n");
        for (t, psi) in &outcome.snapshots {
            for (i, x) in x.iter().enumerate() {
                let (a, b) = (psi.psi1()[i], psi.psi2()[i]);
                let cells = [*t, *x, a.re, a.im, b.re, b.im].map(fmt_f64);
                writeln!(s, "{}", cells.join(",")).expect("string write");
            }
        }
        outputs.push(write(out, "snapshots.csv", &s)?);
    }
    manifest(out, "propagate", cfg, (&sys.params, &pcfg), outputs, summary.passed)?;
    Ok((Outcome { passed: summary.passed, summary: Summary::Propagation }, summary))
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(outcome) => {
            if outcome.passed {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("efgeo {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let args = cli.command.args();
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    fs::create_dir_all(&args.out).map_err(|source| CliError::Io { path: args.out.clone(), source })?;
    let out = args.out.as_path();
    let outcome = match &cli.command {
        Command::VerifyIdentity(_) => {
            let (o, r) = cmd_verify_identity(&cfg, out)?;
            println!(
                "verify-identity: reading {} relative residual {:.3e} (A {:.3e}, B {:.3e}), tolerance {:.1e}: {}",
                r.winner,
                r.best_residual(),
                r.relative_residual_a,
                r.relative_residual_b,
                r.tolerance,
                verdict(o.passed)
            );
            o
        }
        Command::VerifyTensors(_) => {
            let (o, r) = cmd_verify_tensors(&cfg, out)?;
            for v in &r.recipes {
                println!(
                    "verify-tensors: {} max residual {:.3e} at {} points, min order {}: {}",
                    v.study.recipe,
                    v.coarse_max_residual,
                    v.study.points[0],
                    v.min_order.map_or("n/a".to_string(), |o| format!("{o:.2}")),
                    verdict(v.passed)
                );
            }
            o
        }
        Command::EmitFigure(_) => {
            let (o, rows) = cmd_emit_figure(&cfg, out)?;
            println!("emit-figure: {} rows written to {}", rows.len(), out.join("figure.csv").display());
            o
        }
        Command::Propagate(_) => {
            let (o, s) = cmd_propagate(&cfg, out)?;
            println!(
                "propagate: final L2 error {:.3e}, max norm drift {:.3e}, max moment error {:.3e}: {}",
                s.report.final_l2_error,
                s.report.max_norm_drift,
                s.report.max_moment_error,
                verdict(o.passed)
            );
            o
        }
    };
    Ok(outcome)
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}
