//! The `qtraj` command-line tool.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analytic::{mandel_q3, spectrum_elastic_weight, spectrum_inelastic, BlochSystem, Horizon};
use crate::config::{RunConfig, UNITS_NOTE};
use crate::engine::{integrate_linear_sme, integrate_nonlinear, ChannelModel, NonlinearVariant, TrajectoryRecord};
use crate::ensemble::{simulate, Unravelling, THREADS_ENV};
use crate::error::{Error, Result};
use crate::noise::{sample_path, split_seed};
use crate::ops::bloch_vector;
use crate::search::minimize;
use crate::stats::{
    build_outputs, estimate_mandel_q, estimate_spectrum, CountObserver, CountSample, FourierObserver, OutputSpec,
    SpectrumSample,
};

pub const VERSION: &str = concat!("qtraj ", env!("CARGO_PKG_VERSION"));

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Closed-form inelastic spectrum on the configured frequency grid.
    SpectrumAnalytic(Common),
    /// Monte Carlo spectrum of a diffusive output.
    SpectrumMc(Common),
    /// Closed-form Mandel Q of channel 3.
    QparamAnalytic(Common),
    /// Monte Carlo Mandel Q of a counting channel.
    QparamMc(Common),
    /// One stored trajectory.
    Trajectory(Common),
    /// Nelder–Mead search against a closed-form objective.
    Optimize(Common),
    /// Parse and check a configuration.
    Validate(Common),
}

#[derive(clap::Args, Debug, Clone, Copy, PartialEq, Eq)]
pub struct Common {
    /// Overrides the ensemble (and search) seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SpectrumAnalytic(_) => "spectrum-analytic",
            Command::SpectrumMc(_) => "spectrum-mc",
            Command::QparamAnalytic(_) => "qparam-analytic",
            Command::QparamMc(_) => "qparam-mc",
            Command::Trajectory(_) => "trajectory",
            Command::Optimize(_) => "optimize",
            Command::Validate(_) => "validate",
        }
    }

    fn common(&self) -> Common {
        match *self {
            Command::SpectrumAnalytic(c)
            | Command::SpectrumMc(c)
            | Command::QparamAnalytic(c)
            | Command::QparamMc(c)
            | Command::Trajectory(c)
            | Command::Optimize(c)
            | Command::Validate(c) => c,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "qtraj", version, about = "Quantum trajectories of a monitored two-level atom with feedback")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration, or a manifest.json written by an earlier run.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Directory for the CSV artifacts and the manifest.
    #[arg(long, short, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for ensembles and restarts.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: RunConfig,
    pub artifacts: Vec<String>,
}

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => EXIT_IO,
            CliError::Run(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Run(_) => EXIT_CONFIG,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Parses a TOML configuration strictly; errors name the offending field.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<toml>", e.to_string()))?;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut de = serde_json::Deserializer::from_str(text);
    let m: Manifest = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    m.config.validate()?;
    Ok(m)
}

/// Loads a TOML file or a manifest; a manifest also supplies the seed it was run with.
pub fn load(path: &Path) -> std::result::Result<(RunConfig, Option<u64>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let m = parse_manifest(&text)?;
        Ok((m.config, m.seed))
    } else {
        Ok((parse_config(&text)?, None))
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV text: `#` header lines, a column row, then one row per record.
pub struct Csv {
    text: String,
}

impl Csv {
    fn new(command: &str, cfg: &RunConfig, seed: Option<u64>) -> Self {
        let mut text = String::new();
        let _ = writeln!(text, "# {VERSION} {command}");
        let _ = writeln!(text, "# {UNITS_NOTE}");
        let m = &cfg.model;
        let _ = writeln!(
            text,
            "# model: nu={} delta_nu={} omega_r={} k0={} gamma={} n_bar={} |alpha1|^2={} |alpha2|^2={} |beta3|^2={} |beta4|^2={}",
            m.nu,
            m.delta_nu,
            m.omega_r,
            m.k0,
            m.gamma,
            m.n_bar,
            m.alpha1.abs2(),
            m.alpha2.abs2(),
            m.beta3.abs2(),
            m.beta4.abs2()
        );
        let f = &cfg.feedback;
        let _ = writeln!(
            text,
            "# feedback: mode={:?} k1={} epsilon1={} epsilon2={}",
            f.mode, f.k1, cfg.oscillators.lo1.epsilon, cfg.oscillators.lo2.epsilon
        );
        if let Some(s) = seed {
            let _ = writeln!(text, "# seed: {s}");
        }
        Csv { text }
    }

    fn note(&mut self, line: impl AsRef<str>) {
        let _ = writeln!(self.text, "# {}", line.as_ref());
    }

    fn columns(&mut self, names: &[&str]) {
        let _ = writeln!(self.text, "{}", names.join(","));
    }

    fn row(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|v| num(*v)).collect();
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Result of one subcommand: files to write and a report for stdout.
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub report: String,
}

fn spectrum_analytic(cfg: &RunConfig, command: &str) -> Result<Outcome> {
    let block = cfg
        .spectrum
        .as_ref()
        .ok_or_else(|| Error::config("spectrum", "missing [spectrum] section"))?;
    if block.channel != 2 {
        return Err(Error::Unsupported("the closed-form spectrum is for channel 2".into()));
    }
    let bs = BlochSystem::from_frame(&cfg.atom()?.frame_params()?)?;
    let s_el = spectrum_elastic_weight(&bs);
    let mut csv = Csv::new(command, cfg, None);
    csv.note(format!("s_el (coefficient of 2 pi delta(mu)) = {}", num(s_el)));
    csv.note(format!("n_inf = {}", num(bs.n_inf())));
    csv.columns(&["mu", "s_inel"]);
    let mut best = (f64::NAN, f64::INFINITY);
    for mu in block.mu_grid.values() {
        let s = spectrum_inelastic(&bs, mu)?;
        if s < best.1 {
            best = (mu, s);
        }
        csv.row(&[mu, s]);
    }
    Ok(Outcome {
        files: vec![(format!("{command}.csv"), csv.into_string())],
        report: format!("minimum S_inel = {:.6} at mu = {:.6}; s_el = {:.6}\n", best.1, best.0, s_el),
    })
}

fn spectrum_mc(cfg: &RunConfig, command: &str) -> Result<Outcome> {
    let block = cfg
        .spectrum
        .as_ref()
        .ok_or_else(|| Error::config("spectrum", "missing [spectrum] section"))?;
    let model = cfg.atom()?;
    let spec = cfg.run_spec()?;
    let rho0 = cfg.run.initial_state.state(&model)?;
    let mus = block.mu_grid.values();
    let start = spec.grid.index_of(block.t_start);
    let t_window = spec.grid.t_end() - spec.grid.time(start);
    let samples = simulate(
        &model,
        &rho0,
        &spec,
        || FourierObserver::new(block.channel - 1, &mus, start),
        |f| SpectrumSample {
            transforms: f.observer.sums,
            total: f.observer.total,
            weight: f.weight,
        },
    )?;
    let est = estimate_spectrum(&samples, &mus, t_window)?;
    let mut csv = Csv::new(command, cfg, Some(spec.ensemble.master_seed));
    csv.note(format!(
        "n_traj = {}, window = {}, unravelling = {:?}, channel = {}",
        est.n_traj, t_window, spec.unravelling, block.channel
    ));
    csv.note(format!(
        "s_el (coefficient of 2 pi delta(mu)) = {} +- {}",
        num(est.s_el_coefficient),
        num(est.s_el_stderr)
    ));
    csv.columns(&["mu", "s_inel", "stderr"]);
    let mut report = String::new();
    for (k, mu) in est.mu_grid.iter().enumerate() {
        csv.row(&[*mu, est.s_inel[k], est.stderr[k]]);
        let _ = writeln!(report, "mu = {mu:8.4}  S_inel = {:.5} +- {:.5}", est.s_inel[k], est.stderr[k]);
    }
    let _ = writeln!(report, "s_el = {:.5} +- {:.5}", est.s_el_coefficient, est.s_el_stderr);
    Ok(Outcome {
        files: vec![(format!("{command}.csv"), csv.into_string())],
        report,
    })
}

fn qparam_analytic(cfg: &RunConfig, command: &str) -> Result<Outcome> {
    let block = cfg
        .qparam
        .as_ref()
        .ok_or_else(|| Error::config("qparam", "missing [qparam] section"))?;
    if block.channel != 3 {
        return Err(Error::Unsupported("the closed-form Q-parameter is for channel 3".into()));
    }
    let bs = BlochSystem::from_frame(&cfg.atom()?.frame_params()?)?;
    let beta3_sq = cfg.model.beta3.abs2();
    let limit = mandel_q3(&bs, beta3_sq, Horizon::Infinite)?;
    let mut csv = Csv::new(command, cfg, None);
    csv.note(format!("Q3 (t -> infinity) = {}", num(limit.q)));
    csv.note(format!("M3 / t = {}", num(limit.rate)));
    csv.columns(&["t", "q3", "m3_rate"]);
    for &t in &block.t_grid {
        let q = mandel_q3(&bs, beta3_sq, Horizon::Finite(t))?;
        csv.row(&[t, q.q, q.rate]);
    }
    Ok(Outcome {
        files: vec![(format!("{command}.csv"), csv.into_string())],
        report: format!("Q3 = {:.6} (long time), counting rate {:.6}\n", limit.q, limit.rate),
    })
}

fn qparam_mc(cfg: &RunConfig, command: &str) -> Result<Outcome> {
    let block = cfg
        .qparam
        .as_ref()
        .ok_or_else(|| Error::config("qparam", "missing [qparam] section"))?;
    let model = cfg.atom()?;
    let spec = cfg.run_spec()?;
    let rho0 = cfg.run.initial_state.state(&model)?;
    let mut marks = vec![spec.grid.index_of(block.t0)];
    marks.extend(block.t_grid.iter().map(|t| spec.grid.index_of(block.t0 + t)));
    let mut order: Vec<usize> = (1..marks.len()).collect();
    order.sort_by_key(|&i| marks[i]);
    let mut sorted: Vec<usize> = marks.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let channel = block.channel - 3;
    let samples = simulate(
        &model,
        &rho0,
        &spec,
        || CountObserver::new(channel, &sorted),
        |f| {
            let at = |mark: usize| {
                let i = sorted.binary_search(&mark).expect("mark registered");
                f.observer.at_marks[i] as f64
            };
            CountSample {
                increments: marks[1..].iter().map(|&m| at(m) - at(marks[0])).collect(),
                weight: f.weight,
            }
        },
    )?;
    let est = estimate_mandel_q(&samples, &block.t_grid)?;
    let mut csv = Csv::new(command, cfg, Some(spec.ensemble.master_seed));
    csv.note(format!(
        "n_traj = {}, t0 = {}, unravelling = {:?}, channel = {}",
        est.n_traj, block.t0, spec.unravelling, block.channel
    ));
    csv.columns(&["t", "q", "stderr", "m_rate", "m_rate_stderr"]);
    let mut report = String::new();
    for (j, t) in est.t_grid.iter().enumerate() {
        csv.row(&[*t, est.q_values[j], est.stderr[j], est.m_rate[j], est.m_rate_stderr[j]]);
        let _ = writeln!(report, "t = {t:8.3}  Q = {:.5} +- {:.5}", est.q_values[j], est.stderr[j]);
    }
    Ok(Outcome {
        files: vec![(format!("{command}.csv"), csv.into_string())],
        report,
    })
}

/// Integrates the first trajectory of the configured ensemble.
pub fn single_trajectory(cfg: &RunConfig) -> Result<TrajectoryRecord> {
    let model = cfg.atom()?;
    let spec = cfg.run_spec()?;
    let rho0 = cfg.run.initial_state.state(&model)?;
    let path = sample_path(
        spec.grid,
        model.layout(),
        &spec.path_intensities(&model),
        split_seed(spec.ensemble.master_seed, 0),
    )?;
    match spec.unravelling {
        Unravelling::WeightedLinear => integrate_linear_sme(&model, &path, &rho0, &spec.engine),
        Unravelling::NonlinearSme => integrate_nonlinear(&model, &path, &rho0, &spec.engine, NonlinearVariant::Sme),
        Unravelling::NonlinearSse => integrate_nonlinear(&model, &path, &rho0, &spec.engine, NonlinearVariant::Sse),
    }
}

fn trajectory(cfg: &RunConfig, command: &str) -> Result<Outcome> {
    let rec = single_trajectory(cfg)?;
    let d = rec.output_increments.len();
    let kc = rec.jump_counts.len();
    let outputs = build_outputs(&rec, cfg.outputs.as_ref().unwrap_or(&OutputSpec::identity(d, kc)))?;
    let mut csv = Csv::new(command, cfg, cfg.ensemble.map(|e| e.master_seed));
    csv.note(format!("unravelling = {:?}, store_every = {}", cfg.run.unravelling, rec.store_every));
    csv.note("J_l: diffusive outputs (increments for dirac response), I_h: cumulative counting outputs");
    let mut cols: Vec<String> = ["t", "weight", "x", "y", "z"].iter().map(|s| s.to_string()).collect();
    cols.extend((1..=rec.m.len()).map(|j| format!("m{j}")));
    cols.extend((0..rec.intensity.len()).map(|k| format!("i{}", k + 3)));
    cols.extend((1..=outputs.diffusive.len()).map(|l| format!("J{l}")));
    cols.extend((1..=outputs.counting.len()).map(|h| format!("I{h}")));
    let refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
    csv.columns(&refs);
    for (s, &t) in rec.times.iter().enumerate() {
        let r = bloch_vector(&rec.rho[s]);
        let mut row = vec![t, rec.weight[s], r[0], r[1], r[2]];
        row.extend(rec.m.iter().map(|m| m[s]));
        row.extend(rec.intensity.iter().map(|i| i[s]));
        // outputs live on steps: sample the one ending at this time
        let n = (s * rec.store_every).checked_sub(1);
        row.extend(outputs.diffusive.iter().map(|j| n.map_or(0.0, |n| j[n])));
        row.extend(outputs.counting.iter().map(|i| n.map_or(0.0, |n| i[n])));
        csv.row(&row);
    }
    let last = rec.weight.last().copied().unwrap_or(f64::NAN);
    Ok(Outcome {
        files: vec![(format!("{command}.csv"), csv.into_string())],
        report: format!("{} samples, final weight {last:.6}\n", rec.times.len()),
    })
}

fn optimize(cfg: &RunConfig, command: &str) -> Result<Outcome> {
    let block = cfg
        .search
        .as_ref()
        .ok_or_else(|| Error::config("search", "missing [search] section"))?;
    let problem = cfg.search_problem()?;
    let starts = problem.latin_hypercube(block.restarts, block.seed);
    let result = minimize(&problem, &starts, block.budget)?;
    let mut csv = Csv::new(command, cfg, Some(block.seed));
    csv.note(format!(
        "objective = {:?}, restarts = {}, budget per restart = {}",
        block.objective, block.restarts, block.budget
    ));
    let mut cols = vec!["best_value", "evaluations"];
    cols.extend(problem.free.iter().map(|f| f.param.name()));
    csv.columns(&cols);
    let mut row = vec![result.best_value, result.trace.len() as f64];
    row.extend(&result.best_params);
    csv.row(&row);
    let mut report = format!("best value {:.6} after {} evaluations\n", result.best_value, result.trace.len());
    for (f, x) in problem.free.iter().zip(&result.best_params) {
        let _ = writeln!(report, "  {:<9} = {x:.6}", f.param.name());
    }
    let converged = result.restarts.iter().filter(|r| r.converged).count();
    let _ = writeln!(report, "  {converged} of {} restarts converged", result.restarts.len());
    Ok(Outcome {
        files: vec![(format!("{command}.csv"), csv.into_string())],
        report,
    })
}

/// Runs one subcommand on a loaded configuration without touching the filesystem.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<Outcome> {
    let name = command.name();
    match command {
        Command::SpectrumAnalytic(_) => spectrum_analytic(cfg, name),
        Command::SpectrumMc(_) => spectrum_mc(cfg, name),
        Command::QparamAnalytic(_) => qparam_analytic(cfg, name),
        Command::QparamMc(_) => qparam_mc(cfg, name),
        Command::Trajectory(_) => trajectory(cfg, name),
        Command::Optimize(_) => optimize(cfg, name),
        Command::Validate(_) => Ok(Outcome {
            files: vec![],
            report: "configuration ok\n".into(),
        }),
    }
}

fn run_args(args: Args) -> std::result::Result<String, CliError> {
    if let Some(n) = args.threads {
        // SAFETY: set before any worker pool exists, on the main thread
        unsafe { std::env::set_var(THREADS_ENV, n.to_string()) };
    }
    let path = args
        .config
        .ok_or_else(|| CliError::Run(Error::config("--config", "a configuration file is required")))?;
    let (mut cfg, manifest_seed) = load(&path)?;
    let seed = args.command.common().seed.or(manifest_seed);
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
        cfg.validate()?;
    }
    let outcome = execute(args.command, &cfg)?;
    if matches!(args.command, Command::Validate(_)) {
        return Ok(outcome.report);
    }
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let mut artifacts = Vec::new();
    for (name, body) in &outcome.files {
        let p = args.out.join(name);
        fs::write(&p, body).map_err(|e| io_err(&p, e))?;
        artifacts.push(name.clone());
    }
    let manifest = Manifest {
        version: VERSION.to_string(),
        command: args.command.name().to_string(),
        seed,
        config: cfg,
        artifacts,
    };
    let p = args.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&p, text + "\n").map_err(|e| io_err(&p, e))?;
    Ok(outcome.report)
}

/// Entry point: returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run_args(args) {
        Ok(report) => {
            print!("{report}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
