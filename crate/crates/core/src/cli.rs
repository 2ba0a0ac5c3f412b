//! Command-line runs: configuration, dispatch and output files.
//!
//! Every run subcommand resolves a [`RunConfig`] from defaults, an optional
//! `key = value` file (`--config`) and flags, in that order. Results are
//! printed as JSON and, with `--out-dir`, written atomically next to a
//! config echo that replays the run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::gagliardo::{AssembleOptions, RegionalForm};
use crate::geometry::{direction_set, make_mask, DomainMask, GridSpec, Shape};
use crate::hardy::{equivalence_check, equivalence_constant, hardy_check, hardy_corpus, random_nonnegative};
use crate::io::{atomic_write, csv_string, num, partial_path, pgm_string};
use crate::rearrangement::{best_trial, bump_trial, bump_values, symmetric_decreasing_rearrangement, trial_reports, ALMGREN_LIEB_TOL};
use crate::shape_opt::{
    component_reduction, growth_diagnostics, optimize_fixed_measure, optimize_penalized, resize_mask, OptimizeOptions,
    ShapeState,
};
use crate::special::{hardy_constant, m_alpha_prefactor, sphere_area, tail_integral};
use crate::spectral::{eigen_residual_report, smallest_eigenpair_with, EigenOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "fracrfk", version, about = "Regional fractional eigenvalues, Hardy checks and shape optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Hardy constant, m_{2σ} prefactor and related constants.
    Constants(RunArgs),
    /// First Dirichlet eigenpair of a shape.
    Eigen(RunArgs),
    /// Hardy inequality and norm equivalence on a test corpus.
    Hardy(RunArgs),
    /// Symmetric decreasing rearrangement experiments on a ball.
    Rearrange(RunArgs),
    /// Rayleigh–Faber–Krahn shape optimization.
    Optimize(RunArgs),
    /// Merge result files of finished runs into CSV and markdown tables.
    Report(ReportArgs),
}

/// Run options. Values are kept as text and parsed together with config
/// files so both produce the same messages.
#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// `key = value` file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub sigma: Option<String>,
    /// Cells per axis.
    #[arg(long)]
    pub grid: Option<String>,
    /// The grid covers [-extent, extent]^n.
    #[arg(long)]
    pub extent: Option<String>,
    /// ball, square, annulus or file.
    #[arg(long, alias = "init")]
    pub shape: Option<String>,
    #[arg(long)]
    pub radius: Option<String>,
    #[arg(long = "inner-radius")]
    pub inner_radius: Option<String>,
    /// PBM file for shape = file.
    #[arg(long)]
    pub bitmap: Option<String>,
    #[arg(long)]
    pub tol: Option<String>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub depth: Option<String>,
    #[arg(long = "out-dir")]
    pub out_dir: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub csv: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pgm: Option<String>,
    /// Write the assembled matrix (RFRM binary).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dump: Option<String>,
    #[arg(long)]
    pub directions: Option<String>,
    #[arg(long)]
    pub trials: Option<String>,
    /// fixed, penalized or convex.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub volume: Option<String>,
    #[arg(long)]
    pub penalty: Option<String>,
    /// Optimizer iterations.
    #[arg(long)]
    pub iterations: Option<String>,
    /// Apply component reduction to disconnected optimizer output.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub reduce: Option<String>,
    /// Replace existing output files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    pub dir: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Ball,
    Square,
    Annulus,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Fixed,
    Penalized,
    Convex,
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub subcommand: String,
    pub n: usize,
    pub sigma: f64,
    pub grid: usize,
    pub extent: f64,
    pub shape: ShapeKind,
    pub radius: f64,
    pub inner_radius: f64,
    pub bitmap: Option<PathBuf>,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub depth: usize,
    pub out_dir: Option<PathBuf>,
    pub csv: bool,
    pub pgm: bool,
    pub dump: bool,
    pub directions: usize,
    pub trials: usize,
    pub mode: Mode,
    pub volume: Option<f64>,
    pub penalty: f64,
    pub iterations: usize,
    pub reduce: bool,
    pub force: bool,
}

const KEYS: &[&str] = &[
    "subcommand",
    "n",
    "sigma",
    "grid",
    "extent",
    "shape",
    "radius",
    "inner_radius",
    "bitmap",
    "tol",
    "max_iter",
    "seed",
    "depth",
    "out_dir",
    "csv",
    "pgm",
    "dump",
    "directions",
    "trials",
    "mode",
    "volume",
    "penalty",
    "iterations",
    "reduce",
];

impl RunConfig {
    pub fn defaults(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            n: 2,
            sigma: 0.75,
            grid: 32,
            extent: 1.5,
            shape: ShapeKind::Ball,
            radius: 1.0,
            inner_radius: 0.5,
            bitmap: None,
            tol: 1e-9,
            max_iter: 5000,
            seed: 0,
            depth: crate::gagliardo::DEFAULT_DEPTH,
            out_dir: None,
            csv: false,
            pgm: false,
            dump: false,
            directions: 360,
            trials: 100,
            mode: Mode::Fixed,
            volume: None,
            penalty: 1.0,
            iterations: 30,
            reduce: false,
            force: false,
        }
    }

    /// Set one key from text; `origin` prefixes error messages.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::Parse { what: origin.to_string(), msg: format!("{key}: expected {what}, got '{value}'") };
        let num = || value.parse::<f64>().map_err(|_| bad("a number"));
        let int = || value.parse::<usize>().map_err(|_| bad("a nonnegative integer"));
        let flag = || match value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(bad("true or false")),
        };
        match key {
            "subcommand" => {
                if value != self.subcommand {
                    return Err(Error::Parse {
                        what: origin.to_string(),
                        msg: format!("subcommand: config is for '{value}', running '{}'", self.subcommand),
                    });
                }
            }
            "n" => self.n = int()?,
            "sigma" => self.sigma = num()?,
            "grid" => self.grid = int()?,
            "extent" => self.extent = num()?,
            "shape" | "init" => {
                self.shape = match value {
                    "ball" => ShapeKind::Ball,
                    "square" => ShapeKind::Square,
                    "annulus" => ShapeKind::Annulus,
                    "file" => ShapeKind::File,
                    _ => return Err(bad("ball, square, annulus or file")),
                }
            }
            "radius" => self.radius = num()?,
            "inner_radius" => self.inner_radius = num()?,
            "bitmap" => self.bitmap = (!value.is_empty()).then(|| PathBuf::from(value)),
            "tol" => self.tol = num()?,
            "max_iter" => self.max_iter = int()?,
            "seed" => self.seed = value.parse::<u64>().map_err(|_| bad("a nonnegative integer"))?,
            "depth" => self.depth = int()?,
            "out_dir" => self.out_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "csv" => self.csv = flag()?,
            "pgm" => self.pgm = flag()?,
            "dump" => self.dump = flag()?,
            "directions" => self.directions = int()?,
            "trials" => self.trials = int()?,
            "mode" => {
                self.mode = match value {
                    "fixed" => Mode::Fixed,
                    "penalized" => Mode::Penalized,
                    "convex" => Mode::Convex,
                    _ => return Err(bad("fixed, penalized or convex")),
                }
            }
            "volume" => self.volume = if value.is_empty() { None } else { Some(num()?) },
            "penalty" => self.penalty = num()?,
            "iterations" => self.iterations = int()?,
            "reduce" => self.reduce = flag()?,
            _ => return Err(Error::Parse { what: origin.to_string(), msg: format!("unknown key '{key}'") }),
        }
        Ok(())
    }

    /// Apply a `key = value` text; `#` starts a comment.
    pub fn apply_config_text(&mut self, text: &str, name: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let origin = format!("{name} line {}", i + 1);
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse { what: origin, msg: "expected key = value".into() });
            };
            self.set(k.trim(), v, &origin)?;
        }
        Ok(())
    }

    pub fn from_args(subcommand: &str, args: &RunArgs) -> Result<Self> {
        let mut cfg = Self::defaults(subcommand);
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            cfg.apply_config_text(&text, &path.display().to_string())?;
        }
        let flags: [(&str, &Option<String>); 23] = [
            ("n", &args.n),
            ("sigma", &args.sigma),
            ("grid", &args.grid),
            ("extent", &args.extent),
            ("shape", &args.shape),
            ("radius", &args.radius),
            ("inner_radius", &args.inner_radius),
            ("bitmap", &args.bitmap),
            ("tol", &args.tol),
            ("max_iter", &args.max_iter),
            ("seed", &args.seed),
            ("depth", &args.depth),
            ("out_dir", &args.out_dir),
            ("csv", &args.csv),
            ("pgm", &args.pgm),
            ("dump", &args.dump),
            ("directions", &args.directions),
            ("trials", &args.trials),
            ("mode", &args.mode),
            ("volume", &args.volume),
            ("penalty", &args.penalty),
            ("iterations", &args.iterations),
            ("reduce", &args.reduce),
        ];
        for (key, v) in flags {
            if let Some(v) = v {
                cfg.set(key, v, &format!("--{}", key.replace('_', "-")))?;
            }
        }
        cfg.force = args.force;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidArgument(format!("{field}: {msg}")));
        if !(1..=3).contains(&self.n) {
            return bad("n", format!("dimension must be 1, 2 or 3, got {}", self.n));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad("sigma", format!("must lie in (0, 1), got {}", self.sigma));
        }
        if self.grid < 8 {
            return bad("grid", format!("need at least 8 cells per axis, got {}", self.grid));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return bad("extent", format!("must be positive, got {}", self.extent));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("radius", format!("must be positive, got {}", self.radius));
        }
        if self.shape == ShapeKind::Annulus && !(self.inner_radius >= 0.0 && self.inner_radius < self.radius) {
            return bad("inner_radius", format!("need 0 <= inner_radius < radius, got {}", self.inner_radius));
        }
        if self.shape == ShapeKind::File && self.bitmap.is_none() {
            return bad("bitmap", "required when shape = file".into());
        }
        if !(self.tol > 0.0) {
            return bad("tol", format!("must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return bad("max_iter", "must be positive".into());
        }
        if self.depth < 4 {
            return bad("depth", format!("must be at least 4, got {}", self.depth));
        }
        if self.directions < 4 {
            return bad("directions", format!("need at least 4, got {}", self.directions));
        }
        if self.trials == 0 {
            return bad("trials", "must be positive".into());
        }
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return bad("penalty", format!("must be positive, got {}", self.penalty));
        }
        if let Some(v) = self.volume {
            if !(v > 0.0 && v.is_finite()) {
                return bad("volume", format!("must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// The replayable `key = value` echo (everything but `force`).
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let v = match *key {
                "subcommand" => self.subcommand.clone(),
                "n" => self.n.to_string(),
                "sigma" => self.sigma.to_string(),
                "grid" => self.grid.to_string(),
                "extent" => self.extent.to_string(),
                "shape" => match self.shape {
                    ShapeKind::Ball => "ball",
                    ShapeKind::Square => "square",
                    ShapeKind::Annulus => "annulus",
                    ShapeKind::File => "file",
                }
                .into(),
                "radius" => self.radius.to_string(),
                "inner_radius" => self.inner_radius.to_string(),
                "bitmap" => self.bitmap.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                "tol" => self.tol.to_string(),
                "max_iter" => self.max_iter.to_string(),
                "seed" => self.seed.to_string(),
                "depth" => self.depth.to_string(),
                "out_dir" => self.out_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                "csv" => self.csv.to_string(),
                "pgm" => self.pgm.to_string(),
                "dump" => self.dump.to_string(),
                "directions" => self.directions.to_string(),
                "trials" => self.trials.to_string(),
                "mode" => match self.mode {
                    Mode::Fixed => "fixed",
                    Mode::Penalized => "penalized",
                    Mode::Convex => "convex",
                }
                .into(),
                "volume" => self.volume.map(|v| v.to_string()).unwrap_or_default(),
                "penalty" => self.penalty.to_string(),
                "iterations" => self.iterations.to_string(),
                "reduce" => self.reduce.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(s, "{key} = {v}");
        }
        s
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::cube(self.n, self.grid, -self.extent, self.extent)
    }

    pub fn mask(&self) -> Result<DomainMask> {
        let g = self.grid_spec()?;
        let center = vec![0.0; self.n];
        let shape = match self.shape {
            ShapeKind::Ball => Shape::Ball { center, radius: self.radius },
            ShapeKind::Square => Shape::Box { lo: vec![-self.radius; self.n], hi: vec![self.radius; self.n] },
            ShapeKind::Annulus => Shape::Annulus { center, r_in: self.inner_radius, r_out: self.radius },
            ShapeKind::File => Shape::Bitmap(self.bitmap.clone().expect("validated")),
        };
        make_mask(&g, &shape)
    }

    fn assemble(&self, mask: &DomainMask) -> Result<RegionalForm> {
        let opts = AssembleOptions { depth: self.depth, ..AssembleOptions::default() };
        RegionalForm::with_options(mask, self.sigma, &opts)
    }

    fn eigen_options(&self) -> EigenOptions {
        EigenOptions { tol: self.tol, max_iter: self.max_iter, seed: self.seed, ..EigenOptions::default() }
    }
}

/// Common row of every result file, merged by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub subcommand: String,
    pub n: usize,
    pub sigma: f64,
    pub grid: Option<usize>,
    pub lambda: Option<f64>,
    pub volume: Option<f64>,
    pub energy_penalized: Option<f64>,
    pub headline_name: String,
    pub headline_value: Option<f64>,
}

impl RunSummary {
    fn new(cfg: &RunConfig, headline_name: &str, headline_value: Option<f64>) -> Self {
        Self {
            subcommand: cfg.subcommand.clone(),
            n: cfg.n,
            sigma: cfg.sigma,
            grid: (cfg.subcommand != "constants").then_some(cfg.grid),
            lambda: None,
            volume: None,
            energy_penalized: None,
            headline_name: headline_name.to_string(),
            headline_value,
        }
    }
}

/// Output files of one run; names get `.partial` when the run failed to converge.
struct Outputs {
    dir: Option<PathBuf>,
    force: bool,
    partial: bool,
}

impl Outputs {
    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(name);
        let path = if self.partial { partial_path(&path) } else { path };
        atomic_write(&path, bytes, self.force)
    }
}

/// Result of a run: the JSON document, extra files, and whether it is partial.
struct RunOutput {
    json: Value,
    files: Vec<(String, Vec<u8>)>,
    partial: bool,
}

fn result_json(summary: RunSummary, body: Value) -> Value {
    let mut v = body;
    v["summary"] = serde_json::to_value(summary).expect("summary serializes");
    v
}

fn mask_pgm(mask: &DomainMask) -> Option<Vec<u8>> {
    let g = mask.grid();
    (g.dim() == 2).then(|| {
        let vals: Vec<f64> = mask.flags().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        pgm_string(g.cells_per_axis()[0], g.cells_per_axis()[1], &vals).into_bytes()
    })
}

fn nodal_pgm(form: &RegionalForm, u: &[f64]) -> Option<Vec<u8>> {
    let g = form.mask().grid();
    (g.dim() == 2).then(|| pgm_string(g.nodes_per_axis(0), g.nodes_per_axis(1), &form.extend_to_grid(u)).into_bytes())
}

fn nodal_csv(form: &RegionalForm, u: &[f64]) -> Vec<u8> {
    let axes = ["x", "y", "z"];
    let mut header: Vec<&str> = axes[..form.dim()].to_vec();
    header.push("u");
    let rows: Vec<Vec<String>> = form
        .dof_positions()
        .iter()
        .zip(u)
        .map(|(p, v)| {
            let mut r: Vec<String> = p[..form.dim()].iter().map(|&x| num(x)).collect();
            r.push(num(*v));
            r
        })
        .collect();
    csv_string(&header, &rows).into_bytes()
}

fn warn_pgm(cfg: &RunConfig) {
    if cfg.pgm && cfg.n != 2 {
        log::warn!("pgm images are only written for n = 2");
    }
}

fn run_constants(cfg: &RunConfig) -> Result<RunOutput> {
    let n = cfg.n;
    let s = cfg.sigma;
    let (c_hardy, c_star) = if s > 0.5 {
        (Some(hardy_constant(n, 2.0, s)?), Some(equivalence_constant(n, s)?))
    } else {
        (None, None)
    };
    let summary = RunSummary::new(cfg, "c_hardy", c_hardy.map(|c| c.value));
    let body = json!({
        "c_hardy": c_hardy.map(|c| c.value),
        "c_hardy_error_estimate": c_hardy.map(|c| c.quadrature_error_estimate),
        "m_prefactor": m_alpha_prefactor(n, 2.0 * s)?,
        "equivalence_constant": c_star,
        "tail_integral_unit_radius": tail_integral(n, s, 1.0)?,
        "sphere_area": sphere_area(n),
    });
    Ok(RunOutput { json: result_json(summary, body), files: Vec::new(), partial: false })
}

fn run_eigen(cfg: &RunConfig) -> Result<RunOutput> {
    let mask = cfg.mask()?;
    let form = cfg.assemble(&mask)?;
    let r = smallest_eigenpair_with(&form, &cfg.eigen_options(), None)?;
    let report = eigen_residual_report(&form, &r).ok();
    let mut summary = RunSummary::new(cfg, "residual", Some(r.residual));
    summary.lambda = Some(r.lambda);
    summary.volume = Some(mask.volume());
    let body = json!({
        "eigen": r,
        "dofs": form.num_dofs(),
        "cells": mask.active_count(),
        "spacing": form.spacing(),
        "residual_report": report,
    });
    let mut files = Vec::new();
    if cfg.pgm {
        warn_pgm(cfg);
        if let (Some(m), Some(u)) = (mask_pgm(&mask), nodal_pgm(&form, &r.u)) {
            files.push(("mask.pgm".into(), m));
            files.push(("u.pgm".into(), u));
        }
    }
    if cfg.csv {
        files.push(("u.csv".into(), nodal_csv(&form, &r.u)));
    }
    if cfg.dump {
        files.push(("matrix.rfrm".into(), form.dump_bytes()));
    }
    Ok(RunOutput { json: result_json(summary, body), files, partial: !r.converged })
}

fn run_hardy(cfg: &RunConfig) -> Result<RunOutput> {
    let mask = cfg.mask()?;
    let form = cfg.assemble(&mask)?;
    let dirs = direction_set(cfg.n, cfg.directions)?;
    let corpus = hardy_corpus(&form, cfg.seed)?;
    let reports = corpus.iter().map(|(name, u)| hardy_check(&form, u, &dirs, name)).collect::<Result<Vec<_>>>()?;
    let min_ratio = reports.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let eq = random_nonnegative(&form, cfg.trials, cfg.seed)
        .iter()
        .map(|u| equivalence_check(&form, u))
        .collect::<Result<Vec<_>>>()?;
    let max_eq = eq.iter().map(|e| e.ratio).fold(0.0, f64::max);
    let summary = RunSummary::new(cfg, "min_hardy_ratio", Some(min_ratio));
    let body = json!({
        "hardy": reports,
        "min_ratio": min_ratio,
        "equivalence": {
            "count": eq.len(),
            "max_ratio": max_eq,
            "c_star": eq.first().map(|e| e.c_star),
            "bound": eq.first().map(|e| e.bound),
            "all_hold": eq.iter().all(|e| e.holds),
        },
    });
    let mut files = Vec::new();
    if cfg.csv {
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| vec![r.test_function.clone(), num(r.lhs), num(r.rhs), num(r.ratio)])
            .collect();
        files.push(("hardy.csv".into(), csv_string(&["test_function", "lhs", "rhs", "ratio"], &rows).into_bytes()));
    }
    Ok(RunOutput { json: result_json(summary, body), files, partial: false })
}

fn run_rearrange(cfg: &RunConfig) -> Result<RunOutput> {
    if cfg.shape != ShapeKind::Ball {
        return Err(Error::InvalidArgument("shape: rearrange needs a ball".into()));
    }
    let mask = cfg.mask()?;
    let form = cfg.assemble(&mask)?;
    let center = vec![0.0; cfg.n];
    let reports = trial_reports(&form, &center, cfg.radius, cfg.trials, cfg.seed)?;
    let (best, any) = best_trial(&reports).expect("trials > 0");
    let failures: Vec<usize> = reports
        .iter()
        .filter(|r| r.full_u < r.full_star - ALMGREN_LIEB_TOL * r.full_u)
        .filter_map(|r| r.trial)
        .collect();
    let min_margin = reports.iter().map(|r| r.full_margin).fold(f64::INFINITY, f64::min);
    let summary = RunSummary::new(cfg, "best_regional_ratio", Some(best.regional_ratio));
    let body = json!({
        "trials": reports.len(),
        "best": best,
        "any_regional_violation": any,
        "almgren_lieb": {
            "tolerance": ALMGREN_LIEB_TOL,
            "min_full_margin": min_margin,
            "failures": failures,
        },
    });
    let mut files = Vec::new();
    if cfg.csv {
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| {
                vec![
                    r.trial.unwrap_or(0).to_string(),
                    num(r.regional_u),
                    num(r.regional_star),
                    num(r.full_u),
                    num(r.full_star),
                    num(r.regional_ratio),
                ]
            })
            .collect();
        let header = ["trial", "regional_u", "regional_star", "full_u", "full_star", "regional_ratio"];
        files.push(("trials.csv".into(), csv_string(&header, &rows).into_bytes()));
    }
    if cfg.pgm {
        warn_pgm(cfg);
        let params = bump_trial(cfg.n, cfg.seed, best.trial.unwrap_or(0));
        let u = bump_values(&form, &params, &center, cfg.radius);
        let star = symmetric_decreasing_rearrangement(&form, &u)?;
        if let (Some(a), Some(b)) = (nodal_pgm(&form, &u), nodal_pgm(&form, &star)) {
            files.push(("u.pgm".into(), a));
            files.push(("ustar.pgm".into(), b));
        }
    }
    Ok(RunOutput { json: result_json(summary, body), files, partial: false })
}

fn run_optimize(cfg: &RunConfig) -> Result<RunOutput> {
    let mut init = cfg.mask()?;
    let opts = OptimizeOptions {
        max_iter: cfg.iterations,
        eigen: cfg.eigen_options(),
        convex: cfg.mode == Mode::Convex,
        depth: cfg.depth,
        ..OptimizeOptions::default()
    };
    let mut ladder = Value::Null;
    let mut state: ShapeState = match cfg.mode {
        Mode::Fixed | Mode::Convex => {
            if let Some(v) = cfg.volume {
                let k = (v / init.grid().cell_volume()).round().max(1.0) as usize;
                if k != init.active_count() {
                    init = resize_mask(&init, k)?;
                }
            }
            optimize_fixed_measure(cfg.sigma, init.volume(), &init, &opts)?
        }
        Mode::Penalized => {
            let r = optimize_penalized(cfg.sigma, cfg.penalty, &init, &opts)?;
            ladder = json!({ "best_index": r.best_index, "rungs": r.ladder });
            r.state
        }
    };
    let mut reduction = Value::Null;
    if cfg.reduce && state.mask.components().len() > 1 {
        let (s, rep) = component_reduction(&state.mask, &state.eigen.u, cfg.sigma, state.penalty.max(1.0), &opts)?;
        reduction = serde_json::to_value(&rep).expect("report serializes");
        let history = std::mem::take(&mut state.history);
        state = ShapeState { history, ..s };
    }
    let growth = growth_diagnostics(&state, cfg.sigma)?;
    let mut summary = RunSummary::new(cfg, "iterations", Some(state.iteration as f64));
    summary.lambda = Some(state.eigen.lambda);
    summary.volume = Some(state.volume);
    summary.energy_penalized = Some(state.energy_penalized);
    let body = json!({
        "state": state.summary(),
        "initial": state.history.first(),
        "ladder": ladder,
        "component_reduction": reduction,
        "growth": growth,
    });
    let rows: Vec<Vec<String>> = state
        .history
        .iter()
        .map(|h| {
            vec![h.iter.to_string(), num(h.lambda), num(h.volume), num(h.energy), h.accepted.to_string()]
        })
        .collect();
    let mut files =
        vec![("history.csv".to_string(), csv_string(&["iter", "lambda", "volume", "energy", "accepted"], &rows).into_bytes())];
    if cfg.pgm {
        warn_pgm(cfg);
        let form = cfg.assemble(&state.mask)?;
        if let (Some(m), Some(u)) = (mask_pgm(&state.mask), nodal_pgm(&form, &state.eigen.u)) {
            files.push(("mask.pgm".into(), m));
            files.push(("u.pgm".into(), u));
        }
    }
    Ok(RunOutput { json: result_json(summary, body), files, partial: state.aborted.is_some() })
}

/// Execute one run subcommand; returns the exit code.
pub fn run(cfg: &RunConfig) -> Result<i32> {
    let out = match cfg.subcommand.as_str() {
        "constants" => run_constants(cfg),
        "eigen" => run_eigen(cfg),
        "hardy" => run_hardy(cfg),
        "rearrange" => run_rearrange(cfg),
        "optimize" => run_optimize(cfg),
        other => return Err(Error::InvalidArgument(format!("unknown subcommand '{other}'"))),
    }?;
    let text = serde_json::to_string_pretty(&out.json).expect("json serializes") + "\n";
    let outputs = Outputs { dir: cfg.out_dir.clone(), force: cfg.force, partial: out.partial };
    if let Some(dir) = &cfg.out_dir {
        atomic_write(&dir.join("config.txt"), cfg.echo().as_bytes(), cfg.force)?;
    }
    outputs.write("result.json", text.as_bytes())?;
    for (name, bytes) in &out.files {
        outputs.write(name, bytes)?;
    }
    print!("{text}");
    if out.partial {
        log::error!("run did not converge; outputs are marked .partial");
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(EXIT_OK)
}

/// One merged row of `report`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub run: String,
    pub status: String,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Directories without a result file, or with unreadable ones.
    pub missing: Vec<String>,
}

fn read_summary(path: &Path) -> std::result::Result<RunSummary, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let v: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    serde_json::from_value(v.get("summary").cloned().unwrap_or(Value::Null)).map_err(|e| e.to_string())
}

/// Collect `result.json` (or `.partial`) files from `dir` and its subdirectories.
pub fn collect_report(dir: &Path) -> Result<Report> {
    let io = |e| Error::Io { path: dir.to_path_buf(), source: e };
    let mut dirs = vec![dir.to_path_buf()];
    let mut subs: Vec<PathBuf> =
        fs::read_dir(dir).map_err(io)?.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
    subs.sort();
    dirs.extend(subs);
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for (i, d) in dirs.iter().enumerate() {
        let name = if i == 0 { ".".to_string() } else { d.file_name().unwrap_or_default().to_string_lossy().into_owned() };
        let full = d.join("result.json");
        let partial = partial_path(&full);
        let (path, status) = if full.exists() {
            (full, "ok")
        } else if partial.exists() {
            (partial, "partial")
        } else {
            if i > 0 {
                missing.push(name);
            }
            continue;
        };
        match read_summary(&path) {
            Ok(summary) => rows.push(ReportRow { run: name, status: status.into(), summary }),
            Err(e) => missing.push(format!("{name} ({e})")),
        }
    }
    Ok(Report { rows, missing })
}

pub const REPORT_HEADER: [&str; 11] = [
    "run",
    "subcommand",
    "status",
    "n",
    "sigma",
    "grid",
    "lambda",
    "volume",
    "energy_penalized",
    "headline_name",
    "headline_value",
];

fn opt(v: &Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl Report {
    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let s = &r.summary;
                vec![
                    r.run.clone(),
                    s.subcommand.clone(),
                    r.status.clone(),
                    s.n.to_string(),
                    num(s.sigma),
                    s.grid.map(|g| g.to_string()).unwrap_or_default(),
                    opt(&s.lambda),
                    opt(&s.volume),
                    opt(&s.energy_penalized),
                    s.headline_name.clone(),
                    opt(&s.headline_value),
                ]
            })
            .collect()
    }

    pub fn csv(&self) -> String {
        csv_string(&REPORT_HEADER, &self.cells())
    }

    pub fn markdown(&self) -> String {
        let mut s = format!("| {} |\n|{}\n", REPORT_HEADER.join(" | "), "---|".repeat(REPORT_HEADER.len()));
        for row in self.cells() {
            let _ = writeln!(s, "| {} |", row.join(" | "));
        }
        if !self.missing.is_empty() {
            s.push_str("\nMissing results:\n\n");
            for m in &self.missing {
                let _ = writeln!(s, "- {m}");
            }
        }
        s
    }
}

pub fn run_report(args: &ReportArgs) -> Result<i32> {
    let report = collect_report(&args.dir)?;
    for m in &report.missing {
        log::warn!("no result in {m}");
    }
    if report.rows.is_empty() {
        return Err(Error::InvalidArgument(format!("no runs found in {}", args.dir.display())));
    }
    atomic_write(&args.dir.join("summary.csv"), report.csv().as_bytes(), args.force)?;
    let md = report.markdown();
    atomic_write(&args.dir.join("summary.md"), md.as_bytes(), args.force)?;
    print!("{md}");
    Ok(EXIT_OK)
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotConverged { .. } | Error::NearFieldQuadrature { .. } | Error::Quadrature(_) => EXIT_NOT_CONVERGED,
        _ => EXIT_INVALID,
    }
}

/// Parse `argv`, run, and map the outcome to an exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let (name, args) = match &cli.command {
        Command::Report(r) => {
            return run_report(r).unwrap_or_else(|e| {
                eprintln!("error: {e}");
                exit_code(&e)
            })
        }
        Command::Constants(a) => ("constants", a),
        Command::Eigen(a) => ("eigen", a),
        Command::Hardy(a) => ("hardy", a),
        Command::Rearrange(a) => ("rearrange", a),
        Command::Optimize(a) => ("optimize", a),
    };
    let result = RunConfig::from_args(name, args).and_then(|cfg| run(&cfg));
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_and_flags() {
        let mut cfg = RunConfig::defaults("eigen");
        cfg.apply_config_text("# comment\nsigma = 0.6\ngrid=40\nshape = square # inline\n", "c.txt").unwrap();
        assert_eq!((cfg.sigma, cfg.grid, cfg.shape), (0.6, 40, ShapeKind::Square));
        let err = cfg.apply_config_text("n = 2\nsigma = abc\n", "c.txt").unwrap_err().to_string();
        assert!(err.contains("c.txt line 2") && err.contains("sigma"), "{err}");
        let err = cfg.apply_config_text("colour = red\n", "c.txt").unwrap_err().to_string();
        assert!(err.contains("unknown key"), "{err}");
    }

    #[test]
    fn echo_replays() {
        let mut cfg = RunConfig::defaults("optimize");
        cfg.sigma = 0.6;
        cfg.mode = Mode::Penalized;
        cfg.volume = Some(2.5);
        let mut back = RunConfig::defaults("optimize");
        back.apply_config_text(&cfg.echo(), "echo").unwrap();
        assert_eq!(back, cfg);
        let mut other = RunConfig::defaults("eigen");
        assert!(other.apply_config_text(&cfg.echo(), "echo").is_err());
    }

    #[test]
    fn validation_names_field() {
        let args = RunArgs { sigma: Some("1.5".into()), ..RunArgs::default() };
        let err = RunConfig::from_args("eigen", &args).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_INVALID);
        assert!(err.to_string().contains("sigma"));
        let args = RunArgs { grid: Some("4".into()), ..RunArgs::default() };
        assert!(RunConfig::from_args("eigen", &args).unwrap_err().to_string().contains("grid"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::NotConverged { iterations: 1, residual: 1.0 }), EXIT_NOT_CONVERGED);
        assert_eq!(exit_code(&Error::EmptyDomain), EXIT_INVALID);
        assert_eq!(main_with(["fracrfk", "constants", "--sigma", "1.5"]), EXIT_INVALID);
        assert_eq!(main_with(["fracrfk", "bogus"]), EXIT_INVALID);
    }
}
