//! Command-line front end: single-channel loading, sweeps and self-tests.
//!
//! Exit codes: 0 when a command ran to completion (non-converged trials are
//! data, not failures), 1 for usage and validation errors, 2 for numerical or
//! I/O faults and failing self-test audits.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::channel::{self, ChannelParams, ChannelRealization};
use crate::experiments::{self, ExperimentError, SweepConfig, SweepKind};
use crate::linkmodel::LinkParams;
use crate::lmsolver::{self, LmConfig};
use crate::loader::{self, LoaderConfig, LoaderError};
use crate::selftest::{self, SelftestConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAULT: i32 = 2;

/// Environment variable holding the default output directory of `sweep`.
pub const OUT_DIR_ENV: &str = "OFDM_LOADING_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Fault(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Fault(_) | Self::Io { .. } => EXIT_FAULT,
        }
    }

    fn io(path: &Path) -> impl FnOnce(io::Error) -> Self + '_ {
        move |source| Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_)
            | ExperimentError::Channel(_)
            | ExperimentError::Link(_)
            | ExperimentError::Solver(_) => Self::Usage(e.to_string()),
            ExperimentError::Io { path, source } => Self::Io { path, source },
            _ => Self::Fault(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ofdm-loading", version, about = "Joint bit and power loading for OFDM links")]
#[command(args_override_self = true)]
pub struct Cli {
    /// File of `key = value` lines setting any flag of the subcommand;
    /// flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load one channel and print its result row and KKT audit.
    Load(LoadArgs),
    /// Monte-Carlo sweep over SNR, alpha or the power threshold.
    Sweep(SweepArgs),
    /// Jacobian, BER round-trip and two-subcarrier grid audits.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Args)]
pub struct LinkArgs {
    /// Weight of total power against throughput, in (0, 1).
    #[arg(long, default_value_t = 0.5, value_parser = parse_alpha)]
    pub alpha: f64,

    /// Average-BER target.
    #[arg(long = "ber-th", default_value_t = 1e-4)]
    pub ber_th: f64,

    /// Total-power cap in watts; accepts `mW`, `uW` and `inf`.
    #[arg(long, default_value = "inf", value_parser = parse_power)]
    pub pth: f64,
}

impl LinkArgs {
    pub fn params(&self) -> LinkParams {
        LinkParams {
            ber_threshold: self.ber_th,
            power_threshold: self.pth,
            alpha: self.alpha,
            ..LinkParams::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ChannelArgs {
    /// Number of subcarriers.
    #[arg(long, default_value_t = 128)]
    pub subcarriers: usize,

    /// Channel taps.
    #[arg(long, default_value_t = 5)]
    pub taps: usize,

    /// Exponential decay per tap of the power delay profile.
    #[arg(long, default_value_t = 0.2)]
    pub decay: f64,

    /// Noise variance in watts; accepts `mW` and `uW`.
    #[arg(long = "noise-var", default_value = "1e-9", value_parser = parse_power)]
    pub noise_var: f64,

    /// Nominal SNR in dB at 1 uW transmit power; overrides --noise-var.
    #[arg(long = "snr-db")]
    pub snr_db: Option<f64>,

    /// Seed of the channel generator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ChannelArgs {
    pub fn params(&self) -> ChannelParams {
        ChannelParams {
            n_subcarriers: self.subcarriers,
            n_taps: self.taps,
            decay: self.decay,
            noise_variance: self.snr_db.map_or(self.noise_var, experiments::noise_variance_for_snr),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Initial damping.
    #[arg(long, default_value_t = 1e5)]
    pub mu0: f64,

    /// Damping factor after an accepted step.
    #[arg(long, default_value_t = 0.5)]
    pub nu1: f64,

    /// Damping factor after a rejected step.
    #[arg(long, default_value_t = 2.0)]
    pub nu2: f64,

    /// Damping below which steps are accepted on residual decrease alone.
    #[arg(long = "mu-th", default_value_t = 1.0)]
    pub mu_th: f64,

    /// Residual tolerance (infinity norm).
    #[arg(long = "tol-residual", default_value_t = 1e-6)]
    pub tol_residual: f64,

    /// Step tolerance (infinity norm).
    #[arg(long = "tol-step", default_value_t = 1e-6)]
    pub tol_step: f64,

    /// Iteration limit per solve.
    #[arg(long = "k-max", default_value_t = 10_000)]
    pub k_max: usize,

    /// Never accept a step while the damping is at or below --mu-th.
    #[arg(long = "strict-schedule")]
    pub strict_schedule: bool,

    /// Divide the average-BER row by the BER target.
    #[arg(long = "scale-ber-row")]
    pub scale_ber_row: bool,
}

impl SolverArgs {
    pub fn loader(&self) -> LoaderConfig {
        LoaderConfig {
            lm: LmConfig {
                mu0: self.mu0,
                nu1: self.nu1,
                nu2: self.nu2,
                mu_th: self.mu_th,
                tol_residual: self.tol_residual,
                tol_step: self.tol_step,
                k_max: self.k_max,
                strict_schedule: self.strict_schedule,
                ..LmConfig::default()
            },
            scale_ber_row: self.scale_ber_row,
            ..LoaderConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct LoadArgs {
    #[command(flatten)]
    pub link: LinkArgs,
    #[command(flatten)]
    pub channel: ChannelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,

    /// Realization index under --seed.
    #[arg(long, default_value_t = 0)]
    pub trial: u64,

    /// Read gains from a channel dump instead of drawing them.
    #[arg(long = "channel-file", value_name = "FILE")]
    pub channel_file: Option<PathBuf>,

    /// Write the channel used to this file.
    #[arg(long = "dump-channel", value_name = "FILE")]
    pub dump_channel: Option<PathBuf>,

    /// Write the per-iteration solver trace to this file.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Snr,
    Alpha,
    Pth,
    Baseline,
}

impl From<KindArg> for SweepKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Snr => SweepKind::Snr,
            KindArg::Alpha => SweepKind::Alpha,
            KindArg::Pth => SweepKind::PowerThreshold,
            KindArg::Baseline => SweepKind::BaselineCompare,
        }
    }
}

#[derive(Debug, Clone, Args)]
#[command(group = clap::ArgGroup::new("what").required(true).args(["figure", "kind"]))]
pub struct SweepArgs {
    #[command(flatten)]
    pub link: LinkArgs,
    #[command(flatten)]
    pub channel: ChannelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,

    /// Preset figure configuration, 1 to 4.
    #[arg(long, conflicts_with_all = ["alpha", "pth", "noise_var", "snr_db", "grid", "label"])]
    pub figure: Option<u32>,

    /// Custom sweep axis.
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,

    /// Comma-separated grid for --kind; defaults to the preset grid of the axis.
    #[arg(long, value_delimiter = ',', value_parser = parse_power)]
    pub grid: Option<Vec<f64>>,

    /// File prefix for --kind sweeps.
    #[arg(long)]
    pub label: Option<String>,

    /// Channel realizations per grid point.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,

    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub jobs: Option<usize>,

    /// Parent of the timestamped run directory.
    #[arg(long = "out-dir", env = OUT_DIR_ENV, default_value = "runs")]
    pub out_dir: PathBuf,

    /// Write into exactly this directory instead of a timestamped one.
    #[arg(long = "run-dir")]
    pub run_dir: Option<PathBuf>,

    /// Also emit the mean SNR of the unloaded channel at the cap.
    #[arg(long = "pre-snr")]
    pub pre_snr: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    /// Reduced sample counts.
    #[arg(long)]
    pub quick: bool,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Scale one analytic Jacobian entry to check that the audit notices.
    #[arg(long = "corrupt-jacobian", hide = true, num_args = 0..=1, default_missing_value = "1e-3")]
    pub corrupt_jacobian: Option<f64>,
}

/// Parses a weight strictly between zero and one.
pub fn parse_alpha(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("alpha must lie strictly between 0 and 1, got {v}"))
    }
}

/// Parses a power in watts with an optional `W`, `mW`, `uW` or `µW` suffix.
/// `inf` is accepted for an absent cap.
pub fn parse_power(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let (num, scale) = if let Some(n) = t.strip_suffix("mW") {
        (n, 1e-3)
    } else if let Some(n) = t.strip_suffix("uW").or_else(|| t.strip_suffix("µW")) {
        (n, 1e-6)
    } else if let Some(n) = t.strip_suffix('W') {
        (n, 1.0)
    } else {
        (t, 1.0)
    };
    let v: f64 = num.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
    if v.is_nan() || v <= 0.0 {
        return Err(format!("power must be positive, got {s:?}"));
    }
    Ok(v * scale)
}

/// Turns `key = value` lines into long flags. `true` gives a bare flag and
/// `false` drops the key.
pub fn config_args(text: &str) -> Result<Vec<OsString>, CliError> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("config line {}: expected key = value", ln + 1)));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("config line {}: invalid key", ln + 1)));
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => out.push(format!("--{key}={value}").into()),
        }
    }
    Ok(out)
}

const SUBCOMMANDS: [&str; 3] = ["load", "sweep", "selftest"];

fn parse(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let matches = Cli::command().try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

/// Parses the command line, splicing config-file entries in right after the
/// subcommand so that later command-line flags override them.
pub fn parse_with_config(args: Vec<OsString>) -> Result<Result<Cli, clap::Error>, CliError> {
    // located by hand: required subcommand arguments may live in the file
    let mut path = None;
    let mut it = args.iter().skip(1).map(|a| a.to_string_lossy());
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        } else if a == "--config" {
            path = it.next().map(|v| PathBuf::from(v.as_ref()));
        } else if let Some(v) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(v));
        }
    }
    let Some(path) = path else {
        return Ok(parse(args));
    };
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let extra = config_args(&text)?;
    let at = args
        .iter()
        .position(|a| a.to_str().is_some_and(|s| SUBCOMMANDS.contains(&s)))
        .map_or(args.len(), |i| i + 1);
    let mut spliced = args[..at].to_vec();
    spliced.extend(extra);
    spliced.extend_from_slice(&args[at..]);
    Ok(parse(spliced))
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse_with_config(args) {
        Ok(Ok(cli)) => cli,
        Ok(Err(e)) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion
                | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    init_logging(cli.verbose);
    let out = match &cli.command {
        Command::Load(a) => cmd_load(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Selftest(a) => cmd_selftest(a),
    };
    match out {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn loader_error(e: LoaderError) -> CliError {
    match e {
        LoaderError::Link(_) | LoaderError::Solver(_) => CliError::Usage(e.to_string()),
        _ => CliError::Fault(e.to_string()),
    }
}

pub fn cmd_load(a: &LoadArgs) -> Result<i32, CliError> {
    let link = a.link.params();
    link.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ch_params = a.channel.params();
    ch_params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut cfg = a.solver.loader();
    cfg.lm.keep_trace = a.trace.is_some();
    cfg.lm.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let ch = match &a.channel_file {
        Some(path) => {
            let f = File::open(path).map_err(CliError::io(path))?;
            channel::read_dump(BufReader::new(f), ch_params.noise_variance)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => ChannelRealization::generate(&ch_params, a.trial)
            .map_err(|e| CliError::Usage(e.to_string()))?,
    };
    if let Some(path) = &a.dump_channel {
        let f = File::create(path).map_err(CliError::io(path))?;
        let mut w = BufWriter::new(f);
        channel::write_dump(&mut w, &[(a.trial, &ch)])
            .and_then(|_| w.flush())
            .map_err(CliError::io(path))?;
    }

    let res = loader::optimize(&ch, &link, &cfg).map_err(loader_error)?;
    if let Some(path) = &a.trace {
        let f = File::create(path).map_err(CliError::io(path))?;
        let mut w = BufWriter::new(f);
        let trace = res.solver.as_ref().map_or(&[][..], |s| &s.trace[..]);
        lmsolver::write_trace(&mut w, trace)
            .and_then(|_| w.flush())
            .map_err(CliError::io(path))?;
    }
    let report = loader::verify_kkt(&res, &ch.cnr, &link).map_err(loader_error)?;
    if !res.converged {
        log::warn!(
            "solver did not converge ({})",
            res.termination().map_or("no solve", |t| t.as_str())
        );
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let text = format!("{}\n{}\n\n{report}\n", loader::TRIAL_CSV_HEADER, res.csv_row(a.trial));
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Fault(format!("stdout: {e}")))?;
    Ok(EXIT_OK)
}

/// Sweep configurations requested by `a`.
pub fn sweep_configs(a: &SweepArgs) -> Result<Vec<SweepConfig>, CliError> {
    let loader = a.solver.loader();
    if let Some(fig) = a.figure {
        let mut cfgs = experiments::figure_preset(fig, a.trials, a.channel.seed, &loader)
            .ok_or_else(|| CliError::Usage(format!("unknown figure {fig}, expected 1 to 4")))?;
        for c in &mut cfgs {
            c.channel.n_subcarriers = a.channel.subcarriers;
            c.channel.n_taps = a.channel.taps;
            c.channel.decay = a.channel.decay;
            c.link.ber_threshold = a.link.ber_th;
        }
        return Ok(cfgs);
    }
    let kind: SweepKind = a.kind.expect("figure or kind is required").into();
    let grid = a.grid.clone().unwrap_or_else(|| match kind {
        SweepKind::Snr | SweepKind::BaselineCompare => experiments::snr_grid(),
        SweepKind::Alpha => experiments::alpha_grid(),
        SweepKind::PowerThreshold => experiments::power_threshold_grid(),
    });
    let label = a.label.clone().unwrap_or_else(|| kind.axis_name().to_string());
    Ok(vec![SweepConfig {
        label,
        kind,
        grid,
        n_trials: a.trials,
        link: a.link.params(),
        channel: a.channel.params(),
        loader,
    }])
}

/// Fresh `run-YYYYmmdd-HHMMSS` directory under `parent`, suffixed if taken.
pub fn create_run_dir(parent: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    let stamp = chrono::Local::now().format("run-%Y%m%d-%H%M%S").to_string();
    for k in 0.. {
        let name = if k == 0 { stamp.clone() } else { format!("{stamp}-{k}") };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&dir)(e)),
        }
    }
    unreachable!("run directory suffixes exhausted")
}

fn fmt_grid(grid: &[f64]) -> String {
    grid.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

/// The resolved configuration as a loadable config file.
pub fn render_run_config(a: &SweepArgs, cfgs: &[SweepConfig]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# ofdm-loading {} sweep", env!("CARGO_PKG_VERSION"));
    match a.figure {
        Some(f) => {
            let _ = writeln!(s, "figure = {f}");
        }
        None => {
            let c = &cfgs[0];
            let kind = a.kind.and_then(|k| k.to_possible_value()).expect("kind is set");
            let _ = writeln!(s, "kind = {}", kind.get_name());
            let _ = writeln!(s, "grid = {}", fmt_grid(&c.grid));
            let _ = writeln!(s, "label = {}", c.label);
            let _ = writeln!(s, "alpha = {:e}", c.link.alpha);
            let _ = writeln!(s, "pth = {}", c.link.power_threshold);
            let _ = writeln!(s, "noise-var = {:e}", c.channel.noise_variance);
        }
    }
    let c = &cfgs[0];
    let lm = &c.loader.lm;
    let _ = writeln!(s, "trials = {}", a.trials);
    let _ = writeln!(s, "seed = {}", a.channel.seed);
    let _ = writeln!(s, "ber-th = {:e}", c.link.ber_threshold);
    let _ = writeln!(s, "subcarriers = {}", c.channel.n_subcarriers);
    let _ = writeln!(s, "taps = {}", c.channel.n_taps);
    let _ = writeln!(s, "decay = {:e}", c.channel.decay);
    let _ = writeln!(s, "mu0 = {:e}", lm.mu0);
    let _ = writeln!(s, "nu1 = {:e}", lm.nu1);
    let _ = writeln!(s, "nu2 = {:e}", lm.nu2);
    let _ = writeln!(s, "mu-th = {:e}", lm.mu_th);
    let _ = writeln!(s, "tol-residual = {:e}", lm.tol_residual);
    let _ = writeln!(s, "tol-step = {:e}", lm.tol_step);
    let _ = writeln!(s, "k-max = {}", lm.k_max);
    let _ = writeln!(s, "strict-schedule = {}", lm.strict_schedule);
    let _ = writeln!(s, "scale-ber-row = {}", c.loader.scale_ber_row);
    let _ = writeln!(s, "pre-snr = {}", a.pre_snr);
    for c in cfgs {
        let _ = writeln!(
            s,
            "# curve {}: {} over {}, alpha {:e}, pth {} W, noise {:e} W",
            c.label,
            c.kind.axis_name(),
            fmt_grid(&c.grid),
            c.link.alpha,
            c.link.power_threshold,
            c.channel.noise_variance
        );
    }
    s
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<i32, CliError> {
    let cfgs = sweep_configs(a)?;
    for c in &cfgs {
        c.validate()?;
    }
    let pool = match a.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be positive".into())),
        Some(j) => rayon::ThreadPoolBuilder::new().num_threads(j).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    }
    .map_err(|e| CliError::Fault(format!("thread pool: {e}")))?;

    let results = pool.install(|| cfgs.iter().map(experiments::run_sweep).collect::<Result<Vec<_>, _>>())?;

    let dir = match &a.run_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(CliError::io(d))?;
            d.clone()
        }
        None => create_run_dir(&a.out_dir)?,
    };
    let cfg_path = dir.join("run-config.txt");
    fs::write(&cfg_path, render_run_config(a, &cfgs)).map_err(CliError::io(&cfg_path))?;

    let mut summary = String::new();
    for r in &results {
        let written = experiments::emit(r, &dir, a.pre_snr)?;
        let _ = writeln!(summary, "{} ({})", r.config.label, r.config.kind.axis_name());
        let _ = writeln!(summary, "  {:>12} {:>12} {:>12} {:>9}", "value", "throughput", "power_W", "converged");
        for g in &r.aggregates {
            let _ = writeln!(
                summary,
                "  {:>12.4e} {:>12.3} {:>12.4e} {:>5}/{}",
                g.swept_value, g.mean_throughput, g.mean_power, g.n_converged, g.n_trials
            );
        }
        for p in written {
            let _ = writeln!(summary, "  wrote {}", p.display());
        }
    }
    let _ = writeln!(summary, "run directory {}", dir.display());
    io::stdout()
        .write_all(summary.as_bytes())
        .map_err(|e| CliError::Fault(format!("stdout: {e}")))?;
    Ok(EXIT_OK)
}

pub fn cmd_selftest(a: &SelftestArgs) -> Result<i32, CliError> {
    let mut cfg = if a.quick {
        SelftestConfig::quick(a.seed)
    } else {
        SelftestConfig::full(a.seed)
    };
    cfg.corrupt_jacobian = a.corrupt_jacobian;
    let audits = selftest::run(&cfg);
    let mut s = format!("{:<22} {:>12} {:>12}  result\n", "audit", "value", "limit");
    for audit in &audits {
        let _ = writeln!(s, "{audit}");
    }
    io::stdout()
        .write_all(s.as_bytes())
        .map_err(|e| CliError::Fault(format!("stdout: {e}")))?;
    Ok(if audits.iter().all(|x| x.passed) { EXIT_OK } else { EXIT_FAULT })
}
