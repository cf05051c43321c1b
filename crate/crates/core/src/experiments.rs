//! Monte-Carlo sweeps over SNR, weighting factor, power threshold, and the
//! comparison against the uniform-power baseline.
//!
//! Trial `t` draws the same channel taps at every grid point of a sweep, so
//! curves are compared on common random numbers. Trials run in parallel and
//! are collected in `(grid point, trial)` order, which makes every output
//! file independent of the thread count.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::baseline::{self, BaselineError};
use crate::channel::{generate_taps, ChannelError, ChannelParams, ChannelRealization};
use crate::kkt::ConstraintCase;
use crate::linkmodel::{self, LinkError, LinkParams};
use crate::loader::{self, LoaderConfig, LoaderError, LoadingResult};
use crate::lmsolver::LmError;

/// Transmit power, in watts, at which a unit-energy channel reaches the
/// nominal SNR of a grid point.
pub const SNR_REFERENCE_POWER: f64 = 1e-6;

/// Noise variance giving mean SNR `snr_db` at [`SNR_REFERENCE_POWER`].
pub fn noise_variance_for_snr(snr_db: f64) -> f64 {
    SNR_REFERENCE_POWER * 10f64.powf(-snr_db / 10.0)
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid sweep: {0}")]
    Config(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Solver(#[from] LmError),
    #[error(transparent)]
    Loader(#[from] LoaderError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// Grid of nominal SNR values in dB.
    Snr,
    Alpha,
    /// Grid of power thresholds in watts.
    PowerThreshold,
    /// SNR grid, with the baseline run on every converged trial.
    BaselineCompare,
}

impl SweepKind {
    pub fn axis_name(self) -> &'static str {
        match self {
            Self::Snr | Self::BaselineCompare => "snr_db",
            Self::Alpha => "alpha",
            Self::PowerThreshold => "power_threshold_W",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Used as the file prefix for this curve.
    pub label: String,
    pub kind: SweepKind,
    pub grid: Vec<f64>,
    pub n_trials: usize,
    pub link: LinkParams,
    pub channel: ChannelParams,
    pub loader: LoaderConfig,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(format!("{}: {m}", self.label)));
        if self.grid.is_empty() {
            return bad("empty grid");
        }
        if !self.grid.windows(2).all(|w| w[0] < w[1]) || !self.grid.iter().all(|v| v.is_finite()) {
            return bad("grid must be finite and strictly increasing");
        }
        if self.n_trials == 0 {
            return bad("at least one trial is required");
        }
        if self.label.is_empty() || self.label.contains(['/', '\\']) {
            return bad("label must be a plain file name");
        }
        for &v in &self.grid {
            let (link, channel) = self.point(v);
            link.validate()?;
            channel.validate()?;
        }
        self.loader.lm.validate()?;
        Ok(())
    }

    /// Link and channel parameters at grid value `v`.
    pub fn point(&self, v: f64) -> (LinkParams, ChannelParams) {
        let (mut link, mut channel) = (self.link, self.channel);
        match self.kind {
            SweepKind::Snr | SweepKind::BaselineCompare => channel.noise_variance = noise_variance_for_snr(v),
            SweepKind::Alpha => link.alpha = v,
            SweepKind::PowerThreshold => link.power_threshold = v,
        }
        (link, channel)
    }
}

/// Summary of one trial at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: u64,
    pub swept_value: f64,
    pub case: Option<ConstraintCase>,
    pub converged: bool,
    pub iterations: usize,
    pub throughput: f64,
    /// Watts.
    pub total_power: f64,
    pub avg_ber: Option<f64>,
    pub residual_norm: f64,
    /// Mean of `P_i C_i` over subcarriers for the final allocation.
    pub mean_snr: f64,
    /// Mean of `(P_th / N) C_i`; infinite without a power cap.
    pub mean_snr_pre: f64,
    pub baseline_throughput: Option<f64>,
}

impl TrialRecord {
    fn from_result(
        trial: u64,
        swept_value: f64,
        res: &LoadingResult,
        cnr: &[f64],
        link: &LinkParams,
    ) -> Self {
        Self {
            trial,
            swept_value,
            case: res.case_used,
            converged: res.converged,
            iterations: res.total_iterations,
            throughput: res.throughput,
            total_power: res.total_power,
            avg_ber: res.achieved_avg_ber,
            residual_norm: res.solver.as_ref().map_or(f64::NAN, |s| s.residual_norm),
            mean_snr: linkmodel::mean_snr(&res.final_alloc, cnr),
            mean_snr_pre: pre_allocation_snr(cnr, link.power_threshold),
            baseline_throughput: None,
        }
    }

    fn failed(trial: u64, swept_value: f64) -> Self {
        Self {
            trial,
            swept_value,
            case: None,
            converged: false,
            iterations: 0,
            throughput: 0.0,
            total_power: 0.0,
            avg_ber: None,
            residual_norm: f64::NAN,
            mean_snr: 0.0,
            mean_snr_pre: f64::NAN,
            baseline_throughput: None,
        }
    }
}

fn pre_allocation_snr(cnr: &[f64], power_threshold: f64) -> f64 {
    let n = cnr.len() as f64;
    cnr.iter().map(|c| power_threshold / n * c).sum::<f64>() / n
}

/// Aggregate over the trials of one grid point; means cover converged trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub swept_value: f64,
    pub mean_throughput: f64,
    pub mean_power: f64,
    /// Over converged trials that load at least one subcarrier.
    pub mean_avg_ber: f64,
    pub n_converged: usize,
    pub n_trials: usize,
    /// `None` when no converged trial puts power anywhere.
    pub avg_snr_db: Option<f64>,
    pub avg_snr_pre_db: Option<f64>,
    pub mean_baseline_throughput: Option<f64>,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SnrError {
    #[error("no converged trials")]
    NoConvergedTrials,
    #[error("every subcarrier is nulled")]
    AllNulled,
}

/// Average post-allocation SNR in dB over the converged trials.
pub fn average_snr(records: &[TrialRecord]) -> Result<f64, SnrError> {
    let snr: Vec<f64> = records.iter().filter(|r| r.converged).map(|r| r.mean_snr).collect();
    if snr.is_empty() {
        return Err(SnrError::NoConvergedTrials);
    }
    let mean = snr.iter().sum::<f64>() / snr.len() as f64;
    if mean > 0.0 {
        Ok(10.0 * mean.log10())
    } else {
        Err(SnrError::AllNulled)
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl Aggregate {
    /// `records` must all belong to one grid point.
    pub fn from_records(swept_value: f64, records: &[TrialRecord]) -> Self {
        let conv = || records.iter().filter(|r| r.converged);
        let pre = mean(conv().map(|r| r.mean_snr_pre));
        let base: Vec<f64> = conv().filter_map(|r| r.baseline_throughput).collect();
        Self {
            swept_value,
            mean_throughput: mean(conv().map(|r| r.throughput)),
            mean_power: mean(conv().map(|r| r.total_power)),
            mean_avg_ber: mean(conv().filter_map(|r| r.avg_ber)),
            n_converged: conv().count(),
            n_trials: records.len(),
            avg_snr_db: average_snr(records).ok(),
            avg_snr_pre_db: (pre > 0.0 && pre.is_finite()).then(|| 10.0 * pre.log10()),
            mean_baseline_throughput: (!base.is_empty()).then(|| mean(base.into_iter())),
        }
    }

    pub fn convergence_rate(&self) -> f64 {
        self.n_converged as f64 / self.n_trials as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub config: SweepConfig,
    /// Ordered by grid point, then trial.
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl SweepResult {
    /// Records of grid point `k`.
    pub fn point_records(&self, k: usize) -> &[TrialRecord] {
        let n = self.config.n_trials;
        &self.records[k * n..(k + 1) * n]
    }
}

fn run_trial(config: &SweepConfig, v: f64, trial: u64, taps: &[num_complex::Complex64]) -> TrialRecord {
    let (link, channel) = config.point(v);
    let ch = ChannelRealization::from_taps(taps.to_vec(), channel.n_subcarriers, channel.noise_variance);
    let res = match loader::optimize(&ch, &link, &config.loader) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("{} trial {trial} at {v}: {e}", config.label);
            return TrialRecord::failed(trial, v);
        }
    };
    let mut rec = TrialRecord::from_result(trial, v, &res, &ch.cnr, &link);
    if config.kind == SweepKind::BaselineCompare {
        match baseline::compare(&ch.cnr, &res, link.ber_threshold) {
            Ok(c) => rec.baseline_throughput = c.map(|c| c.thr_baseline),
            Err(e) => log::warn!("{} trial {trial} baseline: {e}", config.label),
        }
    }
    if !res.converged {
        log::info!(
            "{} trial {trial} at {v}: not converged ({})",
            config.label,
            res.termination().map_or("no solve", |t| t.as_str())
        );
    }
    rec
}

/// Runs every `(grid point, trial)` pair on the current rayon pool.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult, ExperimentError> {
    config.validate()?;
    let n = config.n_trials;
    let taps: Vec<_> = (0..n as u64)
        .into_par_iter()
        .map(|t| generate_taps(&config.channel, t))
        .collect();
    let records: Vec<TrialRecord> = (0..config.grid.len() * n)
        .into_par_iter()
        .map(|job| {
            let (k, t) = (job / n, job % n);
            run_trial(config, config.grid[k], t as u64, &taps[t])
        })
        .collect();
    let aggregates = config
        .grid
        .iter()
        .enumerate()
        .map(|(k, &v)| Aggregate::from_records(v, &records[k * n..(k + 1) * n]))
        .collect();
    Ok(SweepResult {
        config: config.clone(),
        records,
        aggregates,
    })
}

pub const AGGREGATE_CSV_HEADER: &str =
    "swept_value,mean_throughput_bits,mean_power_W,mean_avg_ber,n_converged,n_trials,avg_snr_db";
pub const RECORD_CSV_HEADER: &str = "swept_value,trial,case,converged,iters,throughput_bits,total_power_W,avg_ber_final,res_norm,mean_snr,mean_snr_pre,thr_baseline";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

pub fn aggregate_csv(aggregates: &[Aggregate]) -> String {
    let mut s = format!("{AGGREGATE_CSV_HEADER}\n");
    for a in aggregates {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            num(a.swept_value),
            num(a.mean_throughput),
            num(a.mean_power),
            num(a.mean_avg_ber),
            a.n_converged,
            a.n_trials,
            opt(a.avg_snr_db)
        );
    }
    s
}

pub fn records_csv(records: &[TrialRecord]) -> String {
    let mut s = format!("{RECORD_CSV_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            num(r.swept_value),
            r.trial,
            r.case.map_or("none", ConstraintCase::as_str),
            r.converged as u8,
            r.iterations,
            num(r.throughput),
            num(r.total_power),
            opt(r.avg_ber),
            num(r.residual_norm),
            num(r.mean_snr),
            num(r.mean_snr_pre),
            opt(r.baseline_throughput)
        );
    }
    s
}

/// Per-trial comparison rows, grouped by grid point with the grid value first.
pub fn comparison_csv(records: &[TrialRecord]) -> String {
    let mut s = format!("swept_value,{}\n", baseline::COMPARISON_CSV_HEADER);
    for r in records {
        let Some(thr_baseline) = r.baseline_throughput else {
            continue;
        };
        let row = baseline::Comparison {
            snr_avg_db: 10.0 * r.mean_snr.log10(),
            thr_proposed: r.throughput,
            thr_baseline,
            power: r.total_power,
        };
        let _ = writeln!(s, "{},{}", num(r.swept_value), row.csv_row(r.trial));
    }
    s
}

fn dat(points: impl Iterator<Item = (f64, Option<f64>)>) -> String {
    let mut s = String::new();
    for (x, y) in points {
        if let Some(y) = y.filter(|y| y.is_finite()) {
            let _ = writeln!(s, "{} {}", num(x), num(y));
        }
    }
    s
}

/// Writes the aggregate and per-trial CSVs plus two-column plot files into
/// `dir`, returning the paths written.
pub fn emit(result: &SweepResult, dir: &Path, with_pre_snr: bool) -> Result<Vec<PathBuf>, ExperimentError> {
    let label = &result.config.label;
    let aggs = &result.aggregates;
    let mut files = vec![
        (format!("{label}_aggregate.csv"), aggregate_csv(aggs)),
        (format!("{label}_trials.csv"), records_csv(&result.records)),
        (
            format!("{label}_throughput.dat"),
            dat(aggs.iter().map(|a| (a.swept_value, Some(a.mean_throughput)))),
        ),
        (
            format!("{label}_power.dat"),
            dat(aggs.iter().map(|a| (a.swept_value, Some(a.mean_power)))),
        ),
        (
            format!("{label}_snr.dat"),
            dat(aggs.iter().map(|a| (a.swept_value, a.avg_snr_db))),
        ),
    ];
    if with_pre_snr {
        files.push((
            format!("{label}_snr_pre.dat"),
            dat(aggs.iter().map(|a| (a.swept_value, a.avg_snr_pre_db))),
        ));
    }
    if result.config.kind == SweepKind::BaselineCompare {
        files.push((format!("{label}_comparison.csv"), comparison_csv(&result.records)));
        files.push((
            format!("{label}_baseline_throughput.dat"),
            dat(aggs.iter().map(|a| (a.swept_value, a.mean_baseline_throughput))),
        ));
    }
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|source| ExperimentError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

/// Nominal SNR grid shared by the SNR-axis presets.
pub fn snr_grid() -> Vec<f64> {
    (0..=10).map(|k| 10.0 + 2.0 * k as f64).collect()
}

pub fn alpha_grid() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

/// Power thresholds in watts, 50 to 400 uW, from binding to slack.
pub fn power_threshold_grid() -> Vec<f64> {
    (1..=8).map(|k| 5e-5 * k as f64).collect()
}

/// The curves behind figure presets 1 to 4; `None` for an unknown figure.
pub fn figure_preset(
    figure: u32,
    n_trials: usize,
    seed: u64,
    loader: &LoaderConfig,
) -> Option<Vec<SweepConfig>> {
    let base = |label: &str, kind, grid: Vec<f64>, pth: f64| SweepConfig {
        label: label.to_string(),
        kind,
        grid,
        n_trials,
        link: LinkParams {
            power_threshold: pth,
            alpha: 0.5,
            ..LinkParams::default()
        },
        channel: ChannelParams {
            seed,
            noise_variance: 1e-9,
            ..ChannelParams::default()
        },
        loader: loader.clone(),
    };
    let inf = f64::INFINITY;
    Some(match figure {
        1 => vec![
            base("fig1_uncapped", SweepKind::Snr, snr_grid(), inf),
            base("fig1_capped", SweepKind::Snr, snr_grid(), 1e-4),
        ],
        2 => vec![
            base("fig2_uncapped", SweepKind::Alpha, alpha_grid(), inf),
            base("fig2_capped", SweepKind::Alpha, alpha_grid(), 1e-4),
        ],
        3 => vec![base("fig3", SweepKind::PowerThreshold, power_threshold_grid(), inf)],
        4 => vec![base("fig4", SweepKind::BaselineCompare, snr_grid(), inf)],
        _ => return None,
    })
}
