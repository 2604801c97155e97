//! `gluelab`: batch runs over Grim Reaper configurations, Lawlor necks and
//! glued approximate translators.
//!
//! Exit status: 0 when every tolerance gate passed, 1 on a computation or
//! I/O failure, 2 on an invalid configuration, 3 when the run finished but
//! a gate failed.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commands::CmdError;
use config::{ConfigError, Motion, RunConfig};
use output::Sink;

#[derive(Parser, Debug)]
#[command(name = "gluelab", version, about = "Glued Lagrangian translator computations")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Lawlor parameters from angles and area, or angles from parameters.
    LawlorSolve,
    /// Tabulate the neck profile and check it is special Lagrangian.
    LawlorProfile,
    /// Intersections and tangent-cone angles of the configured charts.
    GrimIntersect,
    /// Sample the glued surface at one scale.
    GlueBuild,
    /// Weighted residual norms over scales and the fitted decay slope.
    ErrorScan,
    /// Smallest singular value of the weighted linearized operator.
    SigmaScan,
    /// Fixed-point iteration and linearization remainder at one scale.
    Perturb,
    /// Boundedness of the quadratic remainder over random pairs.
    QuadCheck,
    /// Reduced mesh as an OBJ point cloud.
    ExportMesh,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::LawlorSolve => "lawlor-solve",
            Command::LawlorProfile => "lawlor-profile",
            Command::GrimIntersect => "grim-intersect",
            Command::GlueBuild => "glue-build",
            Command::ErrorScan => "error-scan",
            Command::SigmaScan => "sigma-scan",
            Command::Perturb => "perturb",
            Command::QuadCheck => "quad-check",
            Command::ExportMesh => "export-mesh",
        }
    }
}

/// Flags override the corresponding config keys.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (relative paths resolve against GLUELAB_OUTPUT_ROOT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace the motions by a single one with these angles.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    phi: Option<Vec<f64>>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Lawlor target angles (use with --area).
    #[arg(long, global = true, value_delimiter = ',')]
    angles: Option<Vec<f64>>,
    #[arg(long, global = true)]
    area: Option<f64>,
    /// Lawlor parameters a.
    #[arg(long, global = true, value_delimiter = ',')]
    params: Option<Vec<f64>>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Scale for single-surface commands.
    #[arg(long, global = true)]
    t: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    scan_t: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    operator_t: Option<Vec<f64>>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    r_out: Option<f64>,
    /// Skip SVG plots.
    #[arg(long, global = true)]
    no_plots: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.out {
            c.output = v.clone();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        match (&self.phi, self.lambda) {
            (Some(phi), l) => {
                c.m = phi.len();
                c.motions = vec![Motion { phi: phi.clone(), lambda: l.unwrap_or(0.0) }];
            }
            (None, Some(l)) => c.motions.iter_mut().for_each(|m| m.lambda = l),
            (None, None) => {}
        }
        if self.angles.is_some() || self.area.is_some() {
            c.lawlor.params = None;
            c.lawlor.angles = self.angles.clone().or(c.lawlor.angles.take());
            c.lawlor.area = self.area.or(c.lawlor.area);
        }
        if let Some(v) = &self.params {
            c.lawlor.params = Some(v.clone());
            c.lawlor.angles = None;
            c.lawlor.area = None;
        }
        if let Some(v) = self.tau {
            c.glue.tau = v;
        }
        if let Some(v) = self.t {
            c.glue.t = v;
        }
        if let Some(v) = &self.scan_t {
            c.glue.scan_t = v.clone();
        }
        if let Some(v) = &self.operator_t {
            c.glue.operator_t = v.clone();
        }
        if let Some(v) = self.beta {
            c.weights.beta = v;
        }
        if let Some(v) = self.gamma {
            c.weights.gamma = v;
        }
        if let Some(v) = self.r_out {
            c.resolution.r_out = v;
        }
        if self.no_plots {
            c.plots = false;
        }
        Ok(c)
    }
}

fn run(cmd: Command, cfg: &RunConfig, sink: &mut Sink) -> commands::CmdResult {
    match cmd {
        Command::LawlorSolve => commands::lawlor_solve(cfg, sink),
        Command::LawlorProfile => commands::lawlor_profile(cfg, sink),
        Command::GrimIntersect => commands::grim_intersect(cfg, sink),
        Command::GlueBuild => commands::glue_build(cfg, sink),
        Command::ErrorScan => commands::error_scan_cmd(cfg, sink),
        Command::SigmaScan => commands::sigma_scan_cmd(cfg, sink),
        Command::Perturb => commands::perturb(cfg, sink),
        Command::QuadCheck => commands::quad_check(cfg, sink),
        Command::ExportMesh => commands::export_mesh(cfg, sink),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = cli.command;
    let cfg = match cli.overrides.resolve().and_then(|c| c.validate().map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("gluelab {}: invalid configuration: {e}", cmd.name());
            return ExitCode::from(2);
        }
    };
    let mut sink = Sink::new(&cfg, cmd.name());
    match run(cmd, &cfg, &mut sink) {
        Ok(passed) => {
            for p in sink.written() {
                println!("{}", p.display());
            }
            if passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("gluelab {}: a tolerance gate failed; see the JSON summary", cmd.name());
                ExitCode::from(3)
            }
        }
        Err(e) => {
            let error = match &e {
                CmdError::Glue(g) => json!({ "kind": "computation", "error": g, "message": g.to_string() }),
                CmdError::Io(io) => json!({ "kind": "io", "message": io.to_string() }),
            };
            let body = sink.envelope(&cfg, false, &error);
            eprintln!("{}", serde_json::to_string(&body["result"]).expect("error serializes"));
            if let CmdError::Glue(_) = e {
                let name = format!("{}.error.json", cmd.name());
                if let Err(w) = sink.json(&name, &body) {
                    eprintln!("gluelab: could not write {name}: {w}");
                }
            }
            ExitCode::from(1)
        }
    }
}
