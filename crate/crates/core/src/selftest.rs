//! Numerical audits behind the `selftest` command.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kkt::{finite_diff_jacobian, ConstraintCase, KktState, KktSystem};
use crate::linalg::Matrix;
use crate::linkmodel::{self, Allocation, LinkParams};
use crate::lmsolver::NonlinearSystem;
use crate::loader::{self, LoaderConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Audit {
    pub name: &'static str,
    /// Observed figure of merit.
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Audit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<22} {:>12.4e} {:>12.4e}  {}  {}",
            self.name,
            self.value,
            self.limit,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelftestConfig {
    pub seed: u64,
    pub jacobian_states: usize,
    pub round_trips: usize,
    pub oracle_channels: usize,
    /// Relative error injected into one analytic Jacobian entry.
    pub corrupt_jacobian: Option<f64>,
}

impl SelftestConfig {
    pub fn full(seed: u64) -> Self {
        Self {
            seed,
            jacobian_states: 100,
            round_trips: 10_000,
            oracle_channels: 200,
            corrupt_jacobian: None,
        }
    }

    pub fn quick(seed: u64) -> Self {
        Self {
            jacobian_states: 20,
            round_trips: 1_000,
            oracle_channels: 20,
            ..Self::full(seed)
        }
    }
}

/// KKT system whose analytic Jacobian has one entry scaled by `1 + eps`.
struct Corrupted<'a> {
    inner: &'a KktSystem,
    eps: f64,
}

impl NonlinearSystem for Corrupted<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        self.inner.residuals(x, out)
    }

    fn jacobian(&self, x: &[f64], jac: &mut Matrix) {
        self.inner.jacobian(x, jac);
        jac[(0, 0)] *= 1.0 + self.eps;
    }
}

fn max_rel_err(analytic: &Matrix, fd: &Matrix) -> f64 {
    let scale = analytic.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .as_slice()
        .iter()
        .zip(fd.as_slice())
        .map(|(a, d)| (a - d).abs() / a.abs().max(1e-3 * scale).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Random state near the BER surface of an 8-subcarrier system.
pub fn random_feasible_state(rng: &mut ChaCha8Rng, cnr: &[f64], ber_threshold: f64) -> KktState {
    let bits: Vec<f64> = cnr.iter().map(|_| rng.random_range(1.0..8.0)).collect();
    let powers = bits
        .iter()
        .zip(cnr)
        .map(|(&b, &c)| {
            let p = linkmodel::power_for_target_ber(b, c, ber_threshold).expect("valid inputs");
            p * rng.random_range(0.8..1.25)
        })
        .collect();
    KktState {
        powers,
        bits,
        lambda1: rng.random_range(1.0..1e3),
        aux: rng.random_range(0.1..3.0),
    }
}

/// Analytic Jacobian against central differences, both constraint cases.
pub fn jacobian_audit(cfg: &SelftestConfig) -> Audit {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = LinkParams {
        power_threshold: 1e3,
        power_unit: 1.0,
        ..LinkParams::default()
    };
    let mut worst = 0.0f64;
    let mut analytic = Matrix::zeros(18, 18);
    for k in 0..cfg.jacobian_states {
        let case = if k % 2 == 0 {
            ConstraintCase::PowerInactive
        } else {
            ConstraintCase::PowerActive
        };
        let cnr: Vec<f64> = (0..8).map(|_| 10f64.powf(rng.random_range(-1.0..2.0))).collect();
        let state = random_feasible_state(&mut rng, &cnr, params.ber_threshold);
        let sys = KktSystem::new(&cnr, &params, case).expect("valid system");
        let x = state.to_vec();
        let fd = finite_diff_jacobian(&sys, &x, 1e-6);
        match cfg.corrupt_jacobian {
            Some(eps) => Corrupted { inner: &sys, eps }.jacobian(&x, &mut analytic),
            None => sys.jacobian(&x, &mut analytic),
        }
        worst = worst.max(max_rel_err(&analytic, &fd));
    }
    let limit = 1e-5;
    Audit {
        name: "jacobian_fd",
        value: worst,
        limit,
        passed: worst < limit,
        detail: format!("{} states, N=8", cfg.jacobian_states),
    }
}

/// Power for a target BER fed back through the BER model.
pub fn ber_round_trip_audit(cfg: &SelftestConfig) -> Audit {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..cfg.round_trips {
        let b = rng.random_range(1.0..10.0);
        let c = 10f64.powf(rng.random_range(-2.0..4.0));
        let t = 10f64.powf(rng.random_range(-6.0..-3.0));
        let p = linkmodel::power_for_target_ber(b, c, t).expect("valid inputs");
        let back = linkmodel::ber_subcarrier(p, b, c).expect("valid inputs");
        worst = worst.max((back - t).abs() / t);
    }
    let limit = 1e-10;
    Audit {
        name: "ber_round_trip",
        value: worst,
        limit,
        passed: worst < limit,
        detail: format!("{} samples", cfg.round_trips),
    }
}

/// Objective `alpha sum P - (1 - alpha) sum b` with powers in `unit`s.
fn scaled_objective(alloc: &Allocation, params: &LinkParams) -> f64 {
    let scaled = Allocation {
        bits: alloc.bits.clone(),
        powers: alloc.powers.iter().map(|p| p / params.power_unit).collect(),
    };
    linkmodel::objective(&scaled, params.alpha)
}

/// Best objective over `b in {0.5, 1, ..., 10}^2` and a 400-point log power
/// grid, subject to the average-BER and total-power constraints.
pub fn grid_best_objective(cnr: [f64; 2], params: &LinkParams) -> Option<f64> {
    let powers: Vec<f64> = (0..400).map(|k| 10f64.powf(-10.0 + 8.0 * k as f64 / 399.0)).collect();
    let bits: Vec<f64> = (1..=20).map(|k| 0.5 * k as f64).collect();
    let ber = |p: f64, b: f64, c: f64| 0.2 * (-1.6 * p * c / (b.exp2() - 1.0)).exp();
    let alpha = params.alpha;
    let mut best: Option<f64> = None;
    for &b1 in &bits {
        for &b2 in &bits {
            let budget = params.ber_threshold * (b1 + b2);
            for &p1 in &powers {
                let room = budget - b1 * ber(p1, b1, cnr[0]);
                if room <= 0.0 {
                    continue;
                }
                // the cheapest second power that keeps the average BER feasible
                let k = powers.partition_point(|&p2| b2 * ber(p2, b2, cnr[1]) > room);
                let Some(&p2) = powers.get(k) else {
                    continue;
                };
                if p1 + p2 > params.power_threshold {
                    continue;
                }
                let f = alpha * (p1 + p2) / params.power_unit - (1.0 - alpha) * (b1 + b2);
                if best.is_none_or(|v| f < v) {
                    best = Some(f);
                }
            }
        }
    }
    best
}

/// Outcome of the two-subcarrier grid comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub agreeing: usize,
    pub total: usize,
    /// `(instance, solver objective, grid objective)` where the solver lost.
    pub exceptions: Vec<(usize, f64, f64)>,
}

/// Compares converged continuous solutions on random two-subcarrier channels
/// with the grid optimum.
pub fn grid_oracle(channels: usize, seed: u64, params: &LinkParams) -> OracleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = LoaderConfig::default();
    let mut out = OracleOutcome {
        agreeing: 0,
        total: channels,
        exceptions: Vec::new(),
    };
    for k in 0..channels {
        let snr_db = rng.random_range(10.0..30.0);
        let noise = 1e-6 * 10f64.powf(-snr_db / 10.0);
        let cnr = [0, 1].map(|_| -rng.random_range(f64::EPSILON..1.0f64).ln() / noise);
        // an empty screen leaves nothing to solve; transmitting nothing scores zero
        let f_op = match loader::optimize_cnr(&cnr, params, &cfg) {
            Ok(r) if r.converged => scaled_objective(&r.continuous, params),
            Ok(r) if r.case_used.is_none() => 0.0,
            _ => f64::INFINITY,
        };
        let f_grid = grid_best_objective(cnr, params).unwrap_or(f64::INFINITY);
        if f_op <= f_grid + 1e-6 {
            out.agreeing += 1;
        } else {
            log::info!("grid oracle instance {k}: solver {f_op:.9e} vs grid {f_grid:.9e}, cnr {cnr:?}");
            out.exceptions.push((k, f_op, f_grid));
        }
    }
    out
}

pub fn grid_oracle_audit(cfg: &SelftestConfig) -> Audit {
    let o = grid_oracle(cfg.oracle_channels, cfg.seed, &LinkParams::default());
    let rate = o.agreeing as f64 / o.total as f64;
    Audit {
        name: "grid_oracle_n2",
        value: rate,
        limit: 0.9,
        passed: rate >= 0.9,
        detail: format!("{}/{} at or below the grid optimum", o.agreeing, o.total),
    }
}

pub fn run(cfg: &SelftestConfig) -> Vec<Audit> {
    vec![jacobian_audit(cfg), ber_round_trip_audit(cfg), grid_oracle_audit(cfg)]
}
