//! End-to-end loading: activity screen, constraint-case dispatch, damped
//! solve of the stationarity system, and integer finalization.

use std::fmt;

use thiserror::Error;

use crate::channel::ChannelRealization;
use crate::kkt::{ConstraintCase, KktError, KktState, KktSystem};
use crate::linalg::norm_inf;
use crate::linkmodel::{self, Allocation, LinkError, LinkParams, BER_EXPONENT, BER_SCALE};
use crate::lmsolver::{self, LmConfig, LmError, LmResult, Termination};
use crate::screen;

/// Bits assigned to every subcarrier in the starting point.
pub const INITIAL_BITS: f64 = 4.0;
/// Weak subcarriers are floored at this fraction of the best CNR when
/// computing starting powers.
pub const CNR_FLOOR_FRACTION: f64 = 1e-6;
/// Minimum bits for a subcarrier to survive finalization.
pub const MIN_FINAL_BITS: f64 = 2.0;
/// Solves attempted per channel; each retry drops the weakest subcarrier.
pub const MAX_ATTEMPTS: usize = 4;
/// `lambda1` of the start is scaled by this when the first step is below
/// tolerance.
const RESTART_MULTIPLIER_FACTOR: f64 = 2.0;
const POLISH_DAMPING: f64 = 1e-12;
const POLISH_TOLERANCE: f64 = 1e-13;
const POLISH_ITERATIONS: usize = 10;

#[derive(Debug, Error)]
pub enum LoaderError {
    #[error("dead channel: every channel-to-noise ratio is zero")]
    DeadChannel,
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Kkt(#[from] KktError),
    #[error(transparent)]
    Solver(#[from] LmError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoaderConfig {
    pub lm: LmConfig,
    /// Divide the average-BER row by `BER_th`.
    pub scale_ber_row: bool,
    /// Refine converged solutions with a few undamped steps.
    pub polish: bool,
    /// In the power-inactive case, solve for powers, bits and `lambda1`
    /// without the slack and recover the slack from the power row afterwards.
    pub decouple_slack: bool,
}

impl Default for LoaderConfig {
    fn default() -> Self {
        Self {
            lm: LmConfig::default(),
            scale_ber_row: false,
            polish: true,
            decouple_slack: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadingResult {
    pub converged: bool,
    /// Case of the adopted (or last attempted) solve; `None` if nothing ran.
    pub case_used: Option<ConstraintCase>,
    /// Subcarriers carried by the stationarity system.
    pub active: Vec<usize>,
    /// Solver state over `active`, in solver power units.
    pub state: KktState,
    /// Continuous solution over all subcarriers in watts; subcarriers outside
    /// `active` hold zero bits and zero power.
    pub continuous: Allocation,
    /// Finalized integer allocation (empty when not converged).
    pub final_alloc: Allocation,
    pub throughput: f64,
    /// Watts.
    pub total_power: f64,
    /// Average BER of the final allocation; `None` when nothing is loaded.
    pub achieved_avg_ber: Option<f64>,
    /// Solver run behind the reported state; `None` when nothing was solved.
    pub solver: Option<LmResult>,
    /// Solver iterations summed over every attempt.
    pub total_iterations: usize,
    pub attempts: usize,
}

impl LoadingResult {
    pub fn lambda1(&self) -> f64 {
        self.state.lambda1
    }

    /// Power multiplier; zero unless the power-active case was used.
    pub fn lambda2(&self) -> f64 {
        match self.case_used {
            Some(ConstraintCase::PowerActive) => self.state.aux,
            _ => 0.0,
        }
    }
}

/// Starting point in solver units: four bits everywhere, powers meeting the
/// BER target exactly, and `lambda1` zeroing the power-stationarity row of
/// the median-CNR subcarrier.
pub fn initial_point(
    cnr: &[f64],
    params: &LinkParams,
    _case: ConstraintCase,
) -> Result<KktState, LoaderError> {
    params.validate()?;
    let c_max = cnr.iter().cloned().fold(0.0, f64::max);
    if !(c_max > 0.0) {
        return Err(LoaderError::DeadChannel);
    }
    let unit = params.power_unit;
    let floor = CNR_FLOOR_FRACTION * c_max;
    let powers = cnr
        .iter()
        .map(|&c| Ok(linkmodel::power_for_target_ber(INITIAL_BITS, c.max(floor), params.ber_threshold)? / unit))
        .collect::<Result<Vec<f64>, LinkError>>()?;

    let mut order: Vec<usize> = (0..cnr.len()).collect();
    order.sort_by(|&a, &b| cnr[a].total_cmp(&cnr[b]));
    let k = order[cnr.len() / 2];
    let c = cnr[k].max(floor) * unit;
    let m = INITIAL_BITS.exp2() - 1.0;
    let e = (-BER_EXPONENT * c * powers[k] / m).exp();
    let lambda1 = params.alpha * m / (BER_SCALE * BER_EXPONENT * INITIAL_BITS * c * e);

    Ok(KktState {
        bits: vec![INITIAL_BITS; cnr.len()],
        powers,
        lambda1,
        aux: 0.0,
    })
}

struct Attempt {
    case: ConstraintCase,
    result: LmResult,
    adopted: bool,
}

fn run_case(
    cnr: &[f64],
    params: &LinkParams,
    cfg: &LoaderConfig,
    case: ConstraintCase,
    x0: &KktState,
) -> Result<LmResult, LoaderError> {
    let n = cnr.len();
    let decouple =
        cfg.decouple_slack && case == ConstraintCase::PowerInactive && params.power_capped();
    let solve_params = if decouple {
        LinkParams {
            power_threshold: f64::INFINITY,
            ..*params
        }
    } else {
        *params
    };
    let sys = KktSystem::new(cnr, &solve_params, case)?.with_scaled_ber_row(cfg.scale_ber_row);
    let mut x_start = x0.to_vec();
    if decouple {
        x_start[2 * n + 1] = 0.0;
    }
    let mut res = lmsolver::solve(&sys, &x_start, &cfg.lm)?;
    if cfg.polish && (res.converged || res.termination == Termination::Stalled) {
        polish(&sys, &mut res, &cfg.lm)?;
    }
    if decouple {
        // with lambda2 = 0 the slack enters only the power row
        let pth = params.power_threshold / params.power_unit;
        let slack = pth - res.x_final[..n].iter().sum::<f64>();
        res.x_final[2 * n + 1] = slack.max(0.0).sqrt();
    }
    if decouple || cfg.scale_ber_row {
        // report the residual of the system as stated
        let full = KktSystem::new(cnr, params, case)?;
        res.residual_norm = lmsolver::residual_norm_inf(&full, &res.x_final);
    }
    log::debug!(
        "{case} n={n}: {} after {} iterations, |S|={:.3e}, |d|={:.3e}, sum P={:.6e}, lambda1={:.6e}, aux={:.6e}",
        res.termination.as_str(),
        res.iterations,
        res.residual_norm,
        res.step_norm,
        res.x_final[..n].iter().sum::<f64>(),
        res.x_final[2 * n],
        res.x_final[2 * n + 1]
    );
    Ok(res)
}

/// Undamped refinement of a converged or stalled solution.
///
/// The convergence test bounds every residual row by the same absolute
/// tolerance, which leaves the rows with large natural scale (total power)
/// or small scale (average BER) less accurate in relative terms than the
/// audits require. A few extra steps with negligible damping, each accepted
/// only if it lowers the residual, drive the residual to roundoff level.
/// They run on the system with the average-BER row divided by `BER_th`,
/// whose normal equations are far better conditioned; the roots coincide.
///
/// A run stops as stalled when its step falls below tolerance one iteration
/// before its residual does. Such a run is marked converged if the
/// refinement brings both below tolerance.
fn polish(sys: &KktSystem, res: &mut LmResult, lm: &LmConfig) -> Result<(), LoaderError> {
    let cfg = LmConfig {
        mu0: POLISH_DAMPING,
        tol_residual: POLISH_TOLERANCE,
        tol_step: POLISH_TOLERANCE,
        k_max: POLISH_ITERATIONS,
        strict_schedule: false,
        keep_trace: false,
        ..*lm
    };
    let scaled = sys.clone().with_scaled_ber_row(true);
    let refined = lmsolver::solve(&scaled, &res.x_final, &cfg)?;
    let residual = lmsolver::residual_norm_inf(sys, &refined.x_final);
    if residual < res.residual_norm
        && refined.step_norm < lm.tol_step
        && refined.termination != Termination::NonFinite
    {
        res.x_final = refined.x_final;
        res.residual_norm = residual;
        res.step_norm = refined.step_norm;
        res.iterations += refined.iterations;
        res.clamp_events += refined.clamp_events;
        if res.residual_norm < lm.tol_residual && res.termination == Termination::Stalled {
            res.converged = true;
            res.termination = Termination::Converged;
        }
    }
    Ok(())
}

/// Starting point for one case on the active set `idx`.
fn start_for(
    case: ConstraintCase,
    cnr: &[f64],
    idx: &[usize],
    params: &LinkParams,
    scr: &screen::ScreenResult,
) -> Result<KktState, LoaderError> {
    let sub: Vec<f64> = idx.iter().map(|&i| cnr[i]).collect();
    let pth = params.power_threshold / params.power_unit;
    let mut x0 = initial_point(&sub, params, case)?;
    x0.lambda1 = scr.lambda1;
    match case {
        ConstraintCase::PowerInactive => {
            if pth.is_finite() {
                x0.aux = (pth - scr.total_power).max(1e-3 * pth).sqrt();
            }
        }
        ConstraintCase::PowerActive => {
            // uniform bits whose BER-target powers exactly exhaust the cap
            let total: f64 = x0.powers.iter().sum();
            let per_level = total / (INITIAL_BITS.exp2() - 1.0);
            let bits = (1.0 + pth / per_level).log2().clamp(MIN_FINAL_BITS, crate::kkt::B_CAP);
            let scale = (bits.exp2() - 1.0) / (INITIAL_BITS.exp2() - 1.0);
            x0.bits.fill(bits);
            for p in &mut x0.powers {
                *p *= scale;
            }
            let total: f64 = x0.powers.iter().sum();
            for p in &mut x0.powers {
                *p *= pth / total;
            }
            x0.aux = scr.lambda2.max(0.0);
        }
    }
    Ok(x0)
}

/// One case from `x0`, restarted once with a larger `lambda1` if the first
/// step vanishes under the initial damping.
fn solve_case(
    cnr: &[f64],
    params: &LinkParams,
    cfg: &LoaderConfig,
    case: ConstraintCase,
    x0: &KktState,
) -> Result<LmResult, LoaderError> {
    let mut res = run_case(cnr, params, cfg, case, x0)?;
    if res.termination == Termination::InitialBelowTolerance && res.residual_norm >= cfg.lm.tol_residual {
        let restart = KktState {
            lambda1: x0.lambda1 * RESTART_MULTIPLIER_FACTOR,
            ..x0.clone()
        };
        let iterations = res.iterations;
        res = run_case(cnr, params, cfg, case, &restart)?;
        res.iterations += iterations;
    }
    Ok(res)
}

/// Tries the constraint cases on one active set, the one suggested by the
/// screen first, until one is adopted.
fn solve_active_set(
    cnr: &[f64],
    idx: &[usize],
    params: &LinkParams,
    cfg: &LoaderConfig,
    scr: &screen::ScreenResult,
) -> Result<Vec<Attempt>, LoaderError> {
    let sub: Vec<f64> = idx.iter().map(|&i| cnr[i]).collect();
    let n = sub.len();
    let pth = params.power_threshold / params.power_unit;
    let order: &[ConstraintCase] = if !pth.is_finite() {
        &[ConstraintCase::PowerInactive]
    } else if scr.capped {
        &[ConstraintCase::PowerActive, ConstraintCase::PowerInactive]
    } else {
        &[ConstraintCase::PowerInactive, ConstraintCase::PowerActive]
    };
    let mut attempts = Vec::new();
    for &case in order {
        let x0 = start_for(case, cnr, idx, params, scr)?;
        let mut res = solve_case(&sub, params, cfg, case, &x0)?;
        if !res.converged && !cfg.scale_ber_row {
            let scaled = LoaderConfig {
                scale_ber_row: true,
                ..cfg.clone()
            };
            let retry = solve_case(&sub, params, &scaled, case, &x0)?;
            if retry.converged {
                let iterations = res.iterations;
                res = retry;
                res.iterations += iterations;
            } else {
                res.iterations += retry.iterations;
            }
        }
        let adopted = res.converged
            && match case {
                ConstraintCase::PowerInactive => res.x_final[..n].iter().sum::<f64>() <= pth,
                ConstraintCase::PowerActive => res.x_final[2 * n + 1] >= 0.0,
            };
        attempts.push(Attempt {
            case,
            result: res,
            adopted,
        });
        if adopted {
            break;
        }
    }
    Ok(attempts)
}

/// Floors bits of at least [`MIN_FINAL_BITS`] and nulls the rest.
pub fn finalize(continuous: &Allocation) -> Allocation {
    let (bits, powers) = continuous
        .bits
        .iter()
        .zip(&continuous.powers)
        .map(|(&b, &p)| if b >= MIN_FINAL_BITS { (b.floor(), p) } else { (0.0, 0.0) })
        .unzip();
    Allocation { bits, powers }
}

/// Runs the full loading algorithm on one channel.
///
/// Non-convergence is reported through [`LoadingResult::converged`]; errors
/// are reserved for invalid parameters and dead channels.
pub fn optimize(
    channel: &ChannelRealization,
    params: &LinkParams,
    cfg: &LoaderConfig,
) -> Result<LoadingResult, LoaderError> {
    optimize_cnr(&channel.cnr, params, cfg)
}

pub fn optimize_cnr(
    cnr: &[f64],
    params: &LinkParams,
    cfg: &LoaderConfig,
) -> Result<LoadingResult, LoaderError> {
    params.validate()?;
    cfg.lm.validate()?;
    let n_all = cnr.len();
    if !cnr.iter().any(|&c| c > 0.0) {
        return Err(LoaderError::DeadChannel);
    }
    let unit = params.power_unit;
    let scaled: Vec<f64> = cnr.iter().map(|c| c * unit).collect();
    let scr = screen::screen(&scaled, params.alpha, params.ber_threshold, params.power_threshold / unit);

    let mut active = scr.active_indices();
    let mut total_iterations = 0;
    let mut attempts = 0;
    let mut outcome: Option<(Vec<usize>, Attempt)> = None;
    while !active.is_empty() && attempts < MAX_ATTEMPTS {
        attempts += 1;
        let mut runs = solve_active_set(cnr, &active, params, cfg, &scr)?;
        total_iterations += runs.iter().map(|a| a.result.iterations).sum::<usize>();
        let chosen = match runs.iter().position(|a| a.adopted) {
            Some(k) => runs.swap_remove(k),
            None => runs.pop().expect("at least one case is solved"),
        };
        let adopted = chosen.adopted;
        outcome = Some((active.clone(), chosen));
        if adopted {
            break;
        }
        let weakest = (0..active.len())
            .min_by(|&a, &b| cnr[active[a]].total_cmp(&cnr[active[b]]))
            .expect("active set is nonempty");
        active.remove(weakest);
    }

    let Some((active, attempt)) = outcome else {
        return Ok(LoadingResult {
            converged: false,
            case_used: None,
            active: Vec::new(),
            state: KktState {
                powers: Vec::new(),
                bits: Vec::new(),
                lambda1: scr.lambda1,
                aux: 0.0,
            },
            continuous: Allocation::empty(n_all),
            final_alloc: Allocation::empty(n_all),
            throughput: 0.0,
            total_power: 0.0,
            achieved_avg_ber: None,
            solver: None,
            total_iterations,
            attempts,
        });
    };

    let state = KktState::from_slice(&attempt.result.x_final)?;
    let mut continuous = Allocation::empty(n_all);
    for (k, &i) in active.iter().enumerate() {
        continuous.bits[i] = state.bits[k];
        continuous.powers[i] = state.powers[k] * unit;
    }
    let final_alloc = if attempt.adopted {
        finalize(&continuous)
    } else {
        Allocation::empty(n_all)
    };
    let throughput = final_alloc.throughput();
    let achieved_avg_ber = if throughput > 0.0 {
        Some(linkmodel::average_ber(&final_alloc, cnr)?)
    } else {
        None
    };
    Ok(LoadingResult {
        converged: attempt.adopted,
        case_used: Some(attempt.case),
        active,
        state,
        continuous,
        total_power: final_alloc.total_power(),
        final_alloc,
        throughput,
        achieved_avg_ber,
        solver: Some(attempt.result),
        total_iterations,
        attempts,
    })
}

/// Header of [`LoadingResult::csv_row`].
pub const TRIAL_CSV_HEADER: &str =
    "trial,case,converged,iters,throughput_bits,total_power_W,avg_ber_final,res_norm";

impl LoadingResult {
    /// One per-trial CSV row; missing numbers are written as `nan`.
    pub fn csv_row(&self, trial: u64) -> String {
        let res = self.solver.as_ref().map_or(f64::NAN, |s| s.residual_norm);
        format!(
            "{trial},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.case_used.map_or("none", ConstraintCase::as_str),
            self.converged as u8,
            self.total_iterations,
            self.throughput,
            self.total_power,
            self.achieved_avg_ber.unwrap_or(f64::NAN),
            res
        )
    }

    pub fn termination(&self) -> Option<Termination> {
        self.solver.as_ref().map(|s| s.termination)
    }
}

/// Post-hoc audit of a loading result.
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// `||S(x_op)||_inf` of the unscaled system in solver units.
    pub residual_inf: f64,
    /// `P_th - sum P` of the continuous solution in watts (infinite if uncapped).
    pub power_slack: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub continuous_avg_ber: Option<f64>,
    pub final_avg_ber: Option<f64>,
    /// Final average BER is at most `BER_th (1 + 1e-9)`.
    pub final_ber_ok: bool,
    /// In the power-active case, the cap holds with equality to `1e-9` relative.
    pub power_ok: bool,
    pub dual_feasible: bool,
}

/// Recomputes residuals and constraint metrics of `result` from scratch.
pub fn verify_kkt(
    result: &LoadingResult,
    cnr: &[f64],
    params: &LinkParams,
) -> Result<KktReport, LoaderError> {
    let residual_inf = match result.case_used {
        Some(case) if !result.active.is_empty() => {
            let sub: Vec<f64> = result.active.iter().map(|&i| cnr[i]).collect();
            let sys = KktSystem::new(&sub, params, case)?;
            norm_inf(&sys.residuals_checked(&result.state)?)
        }
        _ => f64::NAN,
    };
    let cont_power = result.continuous.total_power();
    let power_slack = params.power_threshold - cont_power;
    let continuous_avg_ber = if result.continuous.throughput() > 0.0 {
        Some(linkmodel::average_ber(&result.continuous, cnr)?)
    } else {
        None
    };
    let final_avg_ber = result.achieved_avg_ber;
    let final_ber_ok = final_avg_ber.is_none_or(|b| b <= params.ber_threshold * (1.0 + 1e-9));
    let power_ok = match result.case_used {
        Some(ConstraintCase::PowerActive) => {
            (cont_power - params.power_threshold).abs() < 1e-9 * params.power_threshold
        }
        _ => !params.power_capped() || cont_power <= params.power_threshold,
    };
    let lambda2 = result.lambda2();
    Ok(KktReport {
        residual_inf,
        power_slack,
        lambda1: result.lambda1(),
        lambda2,
        continuous_avg_ber,
        final_avg_ber,
        final_ber_ok,
        power_ok,
        dual_feasible: result.lambda1() >= 0.0 && lambda2 >= 0.0,
    })
}

impl fmt::Display for KktReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6e}"));
        writeln!(f, "residual_inf        {:.3e}", self.residual_inf)?;
        writeln!(f, "power_slack_W       {:.6e}", self.power_slack)?;
        writeln!(f, "lambda1             {:.6e}", self.lambda1)?;
        writeln!(f, "lambda2             {:.6e}", self.lambda2)?;
        writeln!(f, "avg_ber_continuous  {}", opt(self.continuous_avg_ber))?;
        writeln!(f, "avg_ber_final       {}", opt(self.final_avg_ber))?;
        writeln!(f, "final_ber_ok        {}", self.final_ber_ok)?;
        writeln!(f, "power_ok            {}", self.power_ok)?;
        write!(f, "dual_feasible       {}", self.dual_feasible)
    }
}
