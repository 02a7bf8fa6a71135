//! Command-line and config-file front end of the `pide` binary.
//!
//! Options come from an optional TOML file (`--config`) and from flags; flags
//! win. Unknown keys in the file are rejected.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Parser;
use serde::Deserialize;
use thiserror::Error;

use crate::manufactured::{section5_problem, ForcingMode};
use crate::mesh::{Point, Rect};
use crate::problem::{Diffusion, LinearMemory, ProblemSpec, Tensor, TrigMemory};
use crate::schemes::{check_stepsize, Meshes, RunOptions, Scheme, SchemeRunner, StabilityConstants, TimeGrid};
use crate::solvers::SolverConfig;
use crate::verification::{error_norms, run_convergence_study, ConvergenceReport, Preset, StudyRow};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("T/dt = {ratio} is not an integer (dt = {dt}, T = {t_final})")]
    NonIntegralSteps { dt: f64, t_final: f64, ratio: f64 },
    #[error("invalid {what} `{value}`: expected 1/n or a number whose reciprocal is an integer")]
    InvalidSize { what: &'static str, value: String },
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("unknown problem `{0}` (expected paper_section5, heat_no_memory, zero or a .toml file)")]
    UnknownProblem(String),
    #[error("{0}")]
    Invalid(String),
}

/// Command-line flags.
#[derive(Debug, Clone, Default, Parser)]
#[command(name = "pide", version, about = "Standard and two-grid solvers for integro-differential equations with nonlinear memory")]
pub struct Flags {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// standard, twogrid_41, twogrid_42 or twogrid_43.
    #[arg(long)]
    pub scheme: Option<Scheme>,
    /// Fine mesh size, e.g. 1/64. With --preset, the finest row to run.
    #[arg(long = "h")]
    pub h: Option<String>,
    /// Coarse mesh size, e.g. 1/16.
    #[arg(long = "H")]
    pub coarse_h: Option<String>,
    /// Time step, e.g. 1/32.
    #[arg(long)]
    pub dt: Option<String>,
    /// Final time.
    #[arg(long = "T")]
    pub t_final: Option<f64>,
    /// paper_section5, heat_no_memory, zero, or a path to a problem TOML file.
    #[arg(long)]
    pub problem: Option<String>,
    /// Run a convergence study over a named row set.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Forcing evaluation for paper_section5.
    #[arg(long, value_enum)]
    pub forcing: Option<ForcingFlag>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    pub out_md: Option<PathBuf>,
    /// Report timings and history memory.
    #[arg(long)]
    pub benchmark: bool,
    /// Include the h = 1/256 and 1/512 rows of a preset.
    #[arg(long)]
    pub large_rows: bool,
    /// Evaluate the stability inequality along the trajectory.
    #[arg(long)]
    pub stability: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub linear_tol: Option<f64>,
    #[arg(long)]
    pub newton_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ForcingFlag {
    Paper,
    Operator,
}

impl From<ForcingFlag> for ForcingMode {
    fn from(f: ForcingFlag) -> Self {
        match f {
            ForcingFlag::Paper => ForcingMode::PaperFormula,
            ForcingFlag::Operator => ForcingMode::OperatorDerived,
        }
    }
}

/// A mesh size or time step written as `1/n`, `n` reciprocal or a float.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SizeValue {
    Number(f64),
    Text(String),
}

impl SizeValue {
    fn text(&self) -> String {
        match self {
            SizeValue::Number(x) => x.to_string(),
            SizeValue::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRow {
    #[serde(rename = "H")]
    coarse: Option<SizeValue>,
    h: SizeValue,
    dt: SizeValue,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    scheme: Option<Scheme>,
    h: Option<SizeValue>,
    #[serde(rename = "H")]
    coarse_h: Option<SizeValue>,
    dt: Option<SizeValue>,
    #[serde(rename = "T")]
    t_final: Option<f64>,
    problem: Option<String>,
    preset: Option<Preset>,
    rows: Option<Vec<FileRow>>,
    forcing: Option<ForcingFlag>,
    out_csv: Option<PathBuf>,
    out_md: Option<PathBuf>,
    benchmark: Option<bool>,
    large_rows: Option<bool>,
    stability: Option<bool>,
    threads: Option<usize>,
    solver: Option<SolverConfig>,
    constants: Option<StabilityConstants>,
}

/// Which problem to solve.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemChoice {
    Section5,
    HeatNoMemory,
    Zero,
    Custom(PathBuf),
}

impl ProblemChoice {
    fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "paper_section5" | "section5" => Ok(Self::Section5),
            "heat_no_memory" => Ok(Self::HeatNoMemory),
            "zero" => Ok(Self::Zero),
            p if p.ends_with(".toml") => Ok(Self::Custom(PathBuf::from(p))),
            other => Err(ConfigError::UnknownProblem(other.to_string())),
        }
    }

    pub fn build(&self, forcing: ForcingMode) -> Result<ProblemSpec, ConfigError> {
        Ok(match self {
            Self::Section5 => section5_problem(forcing),
            Self::HeatNoMemory => ProblemSpec::heat_no_memory(),
            Self::Zero => ProblemSpec::zero_problem(),
            Self::Custom(path) => load_custom_problem(path)?,
        })
    }
}

/// Custom problem file: constant data on the unit square (or `domain`),
/// kernel `e^{-rate t}`, constant forcing and a bubble or zero initial state.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomProblemFile {
    name: Option<String>,
    domain: Option<[f64; 4]>,
    diffusion: Option<Tensor>,
    kernel_rate: Option<f64>,
    /// `"trig"` for the trigonometric memory, `"linear"` for the fields below.
    memory: Option<String>,
    alpha: Option<Tensor>,
    beta: Option<[f64; 2]>,
    gamma: Option<[f64; 2]>,
    g: Option<f64>,
    forcing: Option<f64>,
    /// Amplitude of a `x1(1-x1) x2(1-x2)`-type bubble on the domain.
    initial_bubble: Option<f64>,
}

fn load_custom_problem(path: &Path) -> Result<ProblemSpec, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    let file: CustomProblemFile =
        toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
    let domain = file.domain.map_or(Rect::unit_square(), |d| Rect::new(d[0], d[1], d[2], d[3]));
    let memory: Arc<dyn crate::problem::MemoryCoefficients> = match file.memory.as_deref().unwrap_or("trig") {
        "trig" => Arc::new(TrigMemory),
        "linear" => Arc::new(LinearMemory {
            alpha: file.alpha,
            beta: file.beta.unwrap_or([0.0; 2]),
            gamma: file.gamma.unwrap_or([0.0; 2]),
            g: file.g.unwrap_or(0.0),
        }),
        other => return Err(ConfigError::Invalid(format!("unknown memory `{other}` (expected trig or linear)"))),
    };
    let rate = file.kernel_rate.unwrap_or(1.0);
    let f0 = file.forcing.unwrap_or(0.0);
    let amp = file.initial_bubble.unwrap_or(0.0);
    let d = domain;
    Ok(ProblemSpec {
        name: file.name.unwrap_or_else(|| "custom".into()),
        domain,
        diffusion: file.diffusion.map_or(Diffusion::Identity, Diffusion::Constant),
        memory,
        kernel: Arc::new(move |t: f64| (-rate * t).exp()),
        forcing: Arc::new(move |_, _| f0),
        initial: Arc::new(move |x: Point| {
            let s = (x[0] - d.ax) * (d.bx - x[0]) / (d.bx - d.ax).powi(2);
            let r = (x[1] - d.ay) * (d.by - x[1]) / (d.by - d.ay).powi(2);
            16.0 * amp * s * r
        }),
        exact: None,
    })
}

/// Parses `1/n`, `n` given as a float reciprocal (`0.125`), into `n`.
pub fn parse_reciprocal(what: &'static str, s: &str) -> Result<usize, ConfigError> {
    let err = || ConfigError::InvalidSize { what, value: s.to_string() };
    let s = s.trim();
    let value = if let Some((num, den)) = s.split_once('/') {
        let num: f64 = num.trim().parse().map_err(|_| err())?;
        let den: f64 = den.trim().parse().map_err(|_| err())?;
        num / den
    } else {
        s.parse::<f64>().map_err(|_| err())?
    };
    if !(value > 0.0 && value.is_finite()) {
        return Err(err());
    }
    let inv = 1.0 / value;
    let n = inv.round();
    if n < 1.0 || (inv - n).abs() > 1e-9 * inv {
        return Err(err());
    }
    Ok(n as usize)
}

/// What a run does.
#[derive(Debug, Clone, PartialEq)]
pub enum RunMode {
    Single { coarse_n: Option<usize>, fine_n: usize, dt: f64 },
    Study { rows: Vec<StudyRow>, preset: Option<Preset> },
}

/// Validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub mode: RunMode,
    pub t_final: f64,
    pub problem: ProblemChoice,
    pub forcing: ForcingMode,
    pub solver: SolverConfig,
    pub constants: Option<StabilityConstants>,
    pub out_csv: Option<PathBuf>,
    pub out_md: Option<PathBuf>,
    pub benchmark: bool,
    pub large_rows: bool,
    pub stability: bool,
    pub threads: Option<usize>,
}

fn read_file_config(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })
}

fn check_steps(dt: f64, t_final: f64) -> Result<(), ConfigError> {
    if !(t_final > 0.0) {
        return Err(ConfigError::Invalid(format!("T must be positive, got {t_final}")));
    }
    let ratio = t_final / dt;
    if (ratio - ratio.round()).abs() > 1e-12 * ratio.max(1.0) || ratio.round() < 1.0 {
        return Err(ConfigError::NonIntegralSteps { dt, t_final, ratio });
    }
    Ok(())
}

fn parse_dt(s: &str) -> Result<f64, ConfigError> {
    let err = || ConfigError::InvalidSize { what: "dt", value: s.to_string() };
    let v = match s.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().map_err(|_| err())? / b.trim().parse::<f64>().map_err(|_| err())?,
        None => s.trim().parse::<f64>().map_err(|_| err())?,
    };
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(err())
    }
}

impl RunConfig {
    /// Merges the config file named by `flags.config` (if any) with the flags.
    pub fn from_flags(flags: &Flags) -> Result<Self, ConfigError> {
        let file = match &flags.config {
            Some(p) => read_file_config(p)?,
            None => FileConfig::default(),
        };
        let preset = flags.preset.or(file.preset);
        let scheme = flags
            .scheme
            .or(file.scheme)
            .unwrap_or_else(|| preset.map_or(Scheme::Standard, Preset::default_scheme));
        let t_final = flags.t_final.or(file.t_final).unwrap_or(1.0);
        let large_rows = flags.large_rows || file.large_rows.unwrap_or(false);
        let h = flags.h.clone().or_else(|| file.h.as_ref().map(SizeValue::text));
        let coarse = flags.coarse_h.clone().or_else(|| file.coarse_h.as_ref().map(SizeValue::text));
        let dt = flags.dt.clone().or_else(|| file.dt.as_ref().map(SizeValue::text));

        let mode = if let Some(p) = preset {
            // with a preset, --h caps the finest row
            let mut rows = p.rows(large_rows);
            if let Some(h) = &h {
                let n = parse_reciprocal("h", h)?;
                rows.retain(|r| r.fine_n <= n);
            }
            RunMode::Study { rows, preset: Some(p) }
        } else if let (Some(rows), None) = (&file.rows, &flags.h) {
            let rows = rows
                .iter()
                .map(|r| {
                    let dt_inv = parse_reciprocal("dt", &r.dt.text())?;
                    Ok(StudyRow {
                        coarse_n: r.coarse.as_ref().map(|c| parse_reciprocal("H", &c.text())).transpose()?,
                        fine_n: parse_reciprocal("h", &r.h.text())?,
                        dt_inv,
                        nominal_coarse: None,
                    })
                })
                .collect::<Result<Vec<_>, ConfigError>>()?;
            RunMode::Study { rows, preset: None }
        } else {
            let fine_n = parse_reciprocal("h", &h.ok_or(ConfigError::Missing("--h (or a preset)"))?)?;
            let dt = parse_dt(&dt.ok_or(ConfigError::Missing("--dt"))?)?;
            let coarse_n = coarse.map(|c| parse_reciprocal("H", &c)).transpose()?;
            RunMode::Single { coarse_n, fine_n, dt }
        };
        match &mode {
            RunMode::Single { coarse_n, dt, .. } => {
                check_steps(*dt, t_final)?;
                if scheme.is_two_grid() && coarse_n.is_none() {
                    return Err(ConfigError::Missing("--H for a two-grid scheme"));
                }
            }
            RunMode::Study { rows, .. } => {
                if rows.is_empty() {
                    return Err(ConfigError::Invalid("study has no rows".into()));
                }
                for r in rows {
                    check_steps(r.dt(), t_final)?;
                    if scheme.is_two_grid() && r.coarse_n.is_none() {
                        return Err(ConfigError::Missing("H in every study row for a two-grid scheme"));
                    }
                }
            }
        }

        let problem = ProblemChoice::parse(flags.problem.as_deref().or(file.problem.as_deref()).unwrap_or("paper_section5"))?;
        let forcing = flags.forcing.or(file.forcing).map_or(ForcingMode::default(), Into::into);
        let mut solver = file.solver.unwrap_or_default();
        if let Some(t) = flags.linear_tol {
            solver.linear_tol = t;
        }
        if let Some(t) = flags.newton_tol {
            solver.newton_tol = t;
        }
        let stability = flags.stability || file.stability.unwrap_or(false);
        let constants = file.constants.or_else(|| {
            (stability && problem == ProblemChoice::Section5).then(StabilityConstants::section5)
        });
        if stability && constants.is_none() {
            return Err(ConfigError::Missing("[constants] nu0/mu0/k1 for the stability check"));
        }
        Ok(Self {
            scheme,
            mode,
            t_final,
            problem,
            forcing,
            solver,
            constants,
            out_csv: flags.out_csv.clone().or(file.out_csv),
            out_md: flags.out_md.clone().or(file.out_md),
            benchmark: flags.benchmark || file.benchmark.unwrap_or(false),
            large_rows,
            stability,
            threads: flags.threads.or(file.threads),
        })
    }

    /// Parses flags (including the program name) and the config file they name.
    pub fn parse_from<I, T>(args: I) -> Result<Self, crate::Error>
    where
        I: IntoIterator<Item = T>,
        T: Into<OsString> + Clone,
    {
        let flags = Flags::try_parse_from(args).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Self::from_flags(&flags)?)
    }

    fn options(&self) -> RunOptions {
        RunOptions { solver: self.solver, constants: if self.stability { self.constants } else { None } }
    }
}

fn write_outputs(cfg: &RunConfig, report: &ConvergenceReport) -> crate::Result<()> {
    if let Some(p) = &cfg.out_csv {
        report.write_csv(fs::File::create(p)?, cfg.benchmark)?;
    }
    if let Some(p) = &cfg.out_md {
        fs::write(p, report.to_markdown())?;
    }
    Ok(())
}

fn run_study(cfg: &RunConfig, spec: &ProblemSpec, rows: &[StudyRow], preset: Option<Preset>) -> crate::Result<bool> {
    let report = run_convergence_study(cfg.scheme, rows, spec, &cfg.options(), cfg.t_final);
    print!("{}", report.to_markdown());
    if let Some(p) = preset {
        for r in &report.rows {
            if let (Ok(m), Some(reference)) = (&r.outcome, p.reference_error(&r.row)) {
                println!(
                    "h = 1/{:<4} H1 error {:.5e}  published {:.5e}  rel. diff {:+.2}%",
                    r.row.fine_n,
                    m.errors.h1,
                    reference,
                    100.0 * (m.errors.h1 - reference) / reference
                );
            }
        }
    }
    if cfg.benchmark {
        println!("| h | H | coarse nodes | fine nodes | peak history bytes | fine history bytes | wall s | coarse s | fine s |");
        println!("|---|---|---|---|---|---|---|---|---|");
        for r in &report.rows {
            if let Ok(m) = &r.outcome {
                println!(
                    "| 1/{} | {} | {} | {} | {} | {} | {:.3} | {:.3} | {:.3} |",
                    r.row.fine_n,
                    r.row.coarse_n.map_or_else(|| "-".into(), |n| format!("1/{n}")),
                    m.coarse_nodes,
                    m.fine_nodes,
                    m.peak_history_bytes,
                    m.peak_fine_history_bytes,
                    m.wall_seconds,
                    m.coarse_seconds,
                    m.fine_seconds
                );
            }
        }
    }
    for (row, e) in report.failures() {
        eprintln!("row h = 1/{} dt = 1/{} failed: {e}", row.fine_n, row.dt_inv);
    }
    write_outputs(cfg, &report)?;
    Ok(report.is_success())
}

fn run_single(cfg: &RunConfig, spec: &ProblemSpec, coarse_n: Option<usize>, fine_n: usize, dt: f64) -> crate::Result<bool> {
    let meshes = Meshes::unit_square(if cfg.scheme.is_two_grid() { coarse_n } else { None }, fine_n)?;
    let meshes = if spec.domain == Rect::unit_square() {
        meshes
    } else {
        Meshes {
            fine: Arc::new(crate::Mesh::build(fine_n, fine_n, spec.domain)?),
            coarse: match coarse_n.filter(|_| cfg.scheme.is_two_grid()) {
                Some(n) => Some(Arc::new(crate::Mesh::build(n, n, spec.domain)?)),
                None => None,
            },
        }
    };
    let time = TimeGrid::new(dt, cfg.t_final)?;
    if let Some(c) = cfg.constants.filter(|_| cfg.stability) {
        let check = check_stepsize(dt, cfg.t_final, &c);
        println!(
            "step size dt = {dt}: L2 threshold {:.4e} ({}), H1 threshold {:.4e} ({})",
            check.l2_threshold,
            if check.admissible_l2 { "admissible" } else { "exceeded" },
            check.h1_threshold,
            if check.admissible_h1 { "admissible" } else { "exceeded" },
        );
    }
    let outcome = SchemeRunner::new(cfg.scheme, spec, meshes, time, &cfg.options())?.finish()?;
    println!("scheme {} on `{}`: {} steps of dt = {dt}", cfg.scheme, spec.name, time.steps);
    if let Some(exact) = &spec.exact {
        let e = error_norms(&outcome.fine, exact, cfg.t_final);
        println!("final L2 error {:.5e}  H1 error {:.5e}", e.l2, e.h1);
    }
    let s = &outcome.stats;
    println!(
        "peak history {} bytes (fine {} bytes, coarse {} bytes), wall {:.3} s",
        s.peak_history_bytes, s.peak_fine_history_bytes, s.peak_coarse_history_bytes, s.wall_seconds
    );
    if cfg.benchmark {
        println!(
            "coarse phase {:.3} s, fine phase {:.3} s, Newton iterations {}, nodes coarse/fine {}/{}",
            s.coarse_seconds,
            s.fine_seconds,
            s.steps.iter().map(|r| r.newton_iterations).sum::<usize>(),
            s.coarse_nodes,
            s.fine_nodes
        );
    }
    if let Some(d) = &outcome.stability {
        let worst = d
            .lhs
            .iter()
            .zip(&d.ln_rhs)
            .map(|(l, r)| l.ln() - r)
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "stability inequality {} at all {} steps (max ln(lhs/rhs) = {worst:.3})",
            if d.holds() { "holds" } else { "VIOLATED" },
            d.lhs.len()
        );
    }
    Ok(true)
}

fn execute(cfg: &RunConfig) -> crate::Result<bool> {
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    let spec = cfg.problem.build(cfg.forcing)?;
    match &cfg.mode {
        RunMode::Single { coarse_n, fine_n, dt } => run_single(cfg, &spec, *coarse_n, *fine_n, *dt),
        RunMode::Study { rows, preset } => run_study(cfg, &spec, rows, *preset),
    }
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 when any
/// solve or study row failed, 2 on configuration errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let flags = match Flags::try_parse_from(args) {
        Ok(f) => f,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match RunConfig::from_flags(&flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match execute(&cfg) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
