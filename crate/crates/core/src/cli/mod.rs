//! Batch front end: single runs, ε sweeps and diagnostic reports.
//!
//! A TOML config file supplies defaults; command-line flags override it.

pub mod io;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::diagnostics;
use crate::dynamics::{self, IntegrationOptions};
use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::scenarios::{self, CustomConfig, Scenario, ShapeParams};
use io::Report;

pub const OUT_DIR_ENV: &str = "STIFFLAB_OUT_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Stiff,
    Effective,
    Sweep,
    Diagnose,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Stiff => "stiff",
            Mode::Effective => "effective",
            Mode::Sweep => "sweep",
            Mode::Diagnose => "diagnose",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub scenario: String,
    /// Overrides `scenario` when present.
    pub custom: Option<CustomConfig>,
    pub m: Option<i32>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub launch_p: Option<Vec<f64>>,
    pub launch_v: Option<Vec<f64>>,
    pub eps: f64,
    pub eps_list: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
    pub tol: f64,
    pub energy_tol: f64,
    pub window: f64,
    pub samples: usize,
    pub out_dir: Option<PathBuf>,
    pub timestamp: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opts = IntegrationOptions::default();
        Self {
            mode: Mode::Stiff,
            scenario: "sphere_harmonic".into(),
            custom: None,
            m: None,
            a: None,
            b: None,
            launch_p: None,
            launch_v: None,
            eps: 1e-2,
            eps_list: vec![1e-1, 3e-2, 1e-2, 3e-3],
            t0: 0.0,
            t1: 3.0,
            tol: opts.tol,
            energy_tol: opts.energy_tol,
            window: diagnostics::DEFAULT_WINDOW,
            samples: opts.samples,
            out_dir: None,
            timestamp: true,
        }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{name} must be positive and finite, got {x}"
        )))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        positive("tol", self.tol)?;
        positive("energy_tol", self.energy_tol)?;
        positive("window", self.window)?;
        positive("eps", self.eps)?;
        for &e in &self.eps_list {
            positive("eps_list entry", e)?;
        }
        if self.mode == Mode::Sweep && self.eps_list.len() < 2 {
            return Err(Error::Validation(
                "eps_list needs at least two entries".into(),
            ));
        }
        if !(self.t0.is_finite() && self.t1.is_finite() && self.t1 > self.t0) {
            return Err(Error::Validation(format!(
                "empty time span [{}, {}]",
                self.t0, self.t1
            )));
        }
        if self.samples < 2 {
            return Err(Error::Validation("samples must be at least 2".into()));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario> {
        match &self.custom {
            Some(c) => scenarios::custom(c),
            None => scenarios::builtin_with(
                &self.scenario,
                ShapeParams {
                    m: self.m,
                    a: self.a,
                    b: self.b,
                },
            ),
        }
    }

    pub fn options(&self) -> IntegrationOptions {
        IntegrationOptions::default()
            .with_tol(self.tol)
            .with_energy_tol(self.energy_tol)
            .with_samples(self.samples)
    }

    /// Output directory: explicit setting, else the environment, else the working directory.
    pub fn resolved_out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| {
                std::env::var_os(OUT_DIR_ENV)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
            })
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

/// Files written by a run and any conditions that flag it as failed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub flags: Vec<String>,
}

fn to_point(v: &Option<Vec<f64>>) -> Option<Point> {
    v.as_ref().map(|v| Point::from_vec(v.clone()))
}

fn flag_trajectory(outcome: &mut Outcome, label: &str, traj: &dynamics::Trajectory) {
    if traj.energy_failed() {
        outcome.flags.push(format!(
            "{label}: energy drift {:e} exceeds {:e}",
            traj.energy_drift, traj.energy_tol
        ));
    }
    if traj.critical_masked {
        outcome
            .flags
            .push(format!("{label}: trajectory reached a critical point of f"));
    }
}

fn eps_tag(eps: f64) -> String {
    format!("{eps:e}")
}

/// Execute one configured run, writing its files into the output directory.
pub fn run(config: &RunConfig) -> Result<Outcome> {
    config.validate()?;
    let sc = config.scenario()?;
    sc.validate()?;
    let launch = sc.launch(
        to_point(&config.launch_p).as_ref(),
        to_point(&config.launch_v).as_ref(),
    )?;
    let out_dir = config.resolved_out_dir();
    fs::create_dir_all(&out_dir)?;
    let t_span = (config.t0, config.t1);
    let opts = config.options();
    let ts = config.timestamp;
    let mut outcome = Outcome::default();
    let mut report = Report::new();
    report
        .set("mode", config.mode.as_str())
        .set("scenario", &sc.name)
        .num("alpha", sc.alpha())
        .list("launch_p", launch.p.as_slice())
        .list("launch_v", launch.v.as_slice())
        .num("t0", config.t0)
        .num("t1", config.t1)
        .num("tol", config.tol);

    let report_name = match config.mode {
        Mode::Stiff => {
            let traj = dynamics::integrate_stiff(
                &sc.metric,
                &sc.potential,
                config.eps,
                &launch.p,
                &launch.v,
                t_span,
                opts,
            )?;
            let path = out_dir.join("stiff.csv");
            io::write_trajectory_file(&path, &traj, &sc.name, ts)?;
            outcome.files.push(path);
            flag_trajectory(&mut outcome, "stiff", &traj);
            report
                .num("eps", config.eps)
                .num("energy_drift", traj.energy_drift)
                .set("energy_failed", traj.energy_failed())
                .num(
                    "confinement_ratio",
                    traj.confinement_ratio().unwrap_or(f64::NAN),
                )
                .num("projection_distance", traj.projection_distance)
                .set("steps", traj.steps);
            "run_report.txt"
        }
        Mode::Effective => {
            let params =
                dynamics::adiabatic_invariant(&sc.metric, &sc.potential, &launch.p, &launch.v)?;
            let grad = geometry::grad_rho(&sc.potential.f, &sc.metric, &launch.p)?;
            let (v_par, _) =
                geometry::split_velocity(&sc.metric.eval(&launch.p), &grad, &launch.v)?;
            let traj = dynamics::integrate_effective(
                &sc.metric,
                &sc.potential,
                &params,
                &v_par,
                t_span,
                opts,
            )?;
            let path = out_dir.join("effective.csv");
            io::write_trajectory_file(&path, &traj, &sc.name, ts)?;
            outcome.files.push(path);
            flag_trajectory(&mut outcome, "effective", &traj);
            let max_f = traj
                .diagnostics
                .iter()
                .map(|d| d.r.abs())
                .fold(0.0, f64::max);
            report
                .num("theta", params.theta)
                .num("energy_drift", traj.energy_drift)
                .set("energy_failed", traj.energy_failed())
                .num("max_abs_f", max_f)
                .num("projection_distance", traj.projection_distance)
                .set("steps", traj.steps);
            "run_report.txt"
        }
        Mode::Sweep => {
            let study = diagnostics::convergence_study(
                &sc,
                &launch.p,
                &launch.v,
                &config.eps_list,
                t_span,
                opts,
            )?;
            for traj in &study.stiff {
                let eps = traj.epsilon.unwrap_or(f64::NAN);
                let path = out_dir.join(format!("stiff_eps_{}.csv", eps_tag(eps)));
                io::write_trajectory_file(&path, traj, &sc.name, ts)?;
                outcome.files.push(path);
                flag_trajectory(&mut outcome, &format!("eps {}", eps_tag(eps)), traj);
            }
            let path = out_dir.join("effective.csv");
            io::write_trajectory_file(&path, &study.effective, &sc.name, ts)?;
            outcome.files.push(path);
            flag_trajectory(&mut outcome, "effective", &study.effective);
            let r = &study.report;
            for (eps, msg) in &r.failures {
                outcome.flags.push(format!("eps {}: {msg}", eps_tag(*eps)));
            }
            report
                .num("theta", r.theta)
                .list("eps_list", &r.eps_list)
                .list("sup_errors", &r.sup_errors)
                .list("energy_drifts", &r.energy_drifts)
                .set("monotone", r.monotone)
                .num("fitted_rate", r.fitted_rate)
                .set("partial", r.partial())
                .list(
                    "failed_eps",
                    &r.failures.iter().map(|(e, _)| *e).collect::<Vec<_>>(),
                );
            "convergence_report.txt"
        }
        Mode::Diagnose => {
            let traj = dynamics::integrate_stiff(
                &sc.metric,
                &sc.potential,
                config.eps,
                &launch.p,
                &launch.v,
                t_span,
                opts,
            )?;
            let path = out_dir.join("stiff.csv");
            io::write_trajectory_file(&path, &traj, &sc.name, ts)?;
            outcome.files.push(path);
            flag_trajectory(&mut outcome, "stiff", &traj);
            let est = diagnostics::weak_limits(&traj, config.window)?;
            let path = out_dir.join("weak_limits.csv");
            io::write_weak_limits_file(&path, &est, &traj, &sc.name, ts)?;
            outcome.files.push(path);

            let alpha = sc.alpha();
            let theta_launch =
                dynamics::adiabatic_invariant(&sc.metric, &sc.potential, &launch.p, &launch.v)?
                    .theta;
            let series = diagnostics::adiabatic_series(&est, &traj, alpha)?;
            let theta_measured = diagnostics::mean(&series);
            let avg = diagnostics::transverse_averages(&est, &traj)?;
            report
                .num("eps", config.eps)
                .num("window", est.window)
                .num("energy_drift", traj.energy_drift)
                .set("energy_failed", traj.energy_failed())
                .num("pi_hat_mean", diagnostics::mean(&est.pi_hat))
                .num(
                    "pi_hat_variation",
                    diagnostics::relative_variation(&est.pi_hat),
                )
                .num("sigma_hat_mean", diagnostics::mean(&est.sigma_hat))
                .num("tperp_mean", diagnostics::mean(&avg.t_perp))
                .num("uperp_mean", diagnostics::mean(&avg.u_perp))
                .num(
                    "virial_residual",
                    diagnostics::virial_residual(&est, &traj, alpha)?,
                )
                .num(
                    "sigma_relation_error",
                    diagnostics::sigma_relation_error(&est, &traj, alpha)?,
                )
                .num(
                    "adiabatic_residual",
                    diagnostics::relative_variation(&series),
                )
                .num("theta_launch", theta_launch)
                .num("theta_measured", theta_measured)
                .num(
                    "theta_relative_error",
                    (theta_measured - theta_launch).abs()
                        / theta_launch.max(diagnostics::ENERGY_FLOOR),
                );
            "diagnose_report.txt"
        }
    };
    report.set("flagged", !outcome.flags.is_empty());
    let path = out_dir.join(report_name);
    report.write_file(&path, "stifflab report", ts)?;
    outcome.files.push(path);
    Ok(outcome)
}

#[derive(Debug, Parser)]
#[command(
    name = "stifflab",
    version,
    about = "Stiff constrained dynamics: stiff and effective runs, sweeps, diagnostics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one trajectory.
    Run {
        #[arg(long, value_enum, default_value_t = RunMode::Stiff)]
        mode: RunMode,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Stiff runs over an eps list against the effective solution.
    Sweep {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Weak-limit series, virial and adiabatic residuals for one stiff run.
    Diagnose {
        #[command(flatten)]
        args: RunArgs,
    },
    /// List the built-in scenarios.
    Scenarios,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RunMode {
    Stiff,
    Effective,
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub eps: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub eps_list: Option<Vec<f64>>,
    #[arg(long, allow_negative_numbers = true)]
    pub t0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub t1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub tol: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub energy_tol: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub window: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Defaults to $STIFFLAB_OUT_DIR, then the working directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_timestamp: bool,
    /// Shape exponent parameter for flat_axis_m and exp_degenerate.
    #[arg(long, allow_negative_numbers = true)]
    pub m: Option<i32>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub launch_p: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub launch_v: Option<Vec<f64>>,
}

impl RunArgs {
    /// Config file values with flag overrides applied.
    pub fn into_config(self, mode: Mode) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        c.mode = mode;
        if let Some(s) = self.scenario {
            c.scenario = s;
            c.custom = None;
        }
        macro_rules! over {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        over!(eps, eps_list, t0, t1, tol, energy_tol, window, samples);
        if self.out_dir.is_some() {
            c.out_dir = self.out_dir;
        }
        if self.m.is_some() {
            c.m = self.m;
        }
        if self.launch_p.is_some() {
            c.launch_p = self.launch_p;
        }
        if self.launch_v.is_some() {
            c.launch_v = self.launch_v;
        }
        if self.no_timestamp {
            c.timestamp = false;
        }
        Ok(c)
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        1
    } else {
        2
    }
}

fn error_record(kind: &str, message: &str, code: i32) -> String {
    serde_json::json!({ "status": "error", "kind": kind, "message": message, "exit_code": code })
        .to_string()
}

fn list_scenarios() -> Result<String> {
    let mut out = String::new();
    for name in scenarios::BUILTIN_NAMES {
        let sc = scenarios::builtin(name)?;
        out.push_str(&format!(
            "{name}: dim = {}, alpha = {}, {}\n",
            sc.dim(),
            sc.alpha(),
            sc.notes
        ));
    }
    Ok(out)
}

/// Parse arguments, run, and report. Returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_record("usage", e.to_string().trim(), 1));
            return 1;
        }
    };
    let (mode, args) = match cli.command {
        Command::Scenarios => {
            return match list_scenarios() {
                Ok(text) => {
                    print!("{text}");
                    0
                }
                Err(e) => {
                    eprintln!("{}", error_record(e.kind(), &e.to_string(), 2));
                    2
                }
            };
        }
        Command::Run { mode, args } => (
            if mode == RunMode::Stiff {
                Mode::Stiff
            } else {
                Mode::Effective
            },
            args,
        ),
        Command::Sweep { args } => (Mode::Sweep, args),
        Command::Diagnose { args } => (Mode::Diagnose, args),
    };
    match args.into_config(mode).and_then(|c| run(&c)) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.flags.is_empty() {
                0
            } else {
                let rec = serde_json::json!({ "status": "flagged", "flags": outcome.flags, "exit_code": 2 });
                eprintln!("{rec}");
                2
            }
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_record(e.kind(), &e.to_string(), code));
            code
        }
    }
}
