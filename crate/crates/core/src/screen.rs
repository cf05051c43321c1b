//! Lagrangian activity screen.
//!
//! For fixed multipliers the Lagrangian separates across subcarriers. Each
//! subcarrier's term is minimized over a grid of bit values with the power
//! eliminated in closed form; a subcarrier is worth loading when its minimum
//! is negative. Bisection on `lambda1` then balances the average-BER
//! constraint, and an outer bisection on `lambda2` enforces the power cap.
//!
//! The screen yields the active set handed to the stationarity solver and
//! multiplier estimates used to start it. All powers are in solver units
//! (see [`crate::kkt`]).

use std::cell::Cell;

use crate::kkt::{B_CAP, B_FLOOR};
use crate::linkmodel::{BER_EXPONENT, BER_SCALE};

const GRID_POINTS: usize = 400;
/// Minimizers below this bit value never count toward the constraint sums.
const MIN_ARGMIN_BITS: f64 = 0.1;
/// Minimizers below this bit value are left out of the final active set.
pub const ACTIVE_ARGMIN_BITS: f64 = 0.3;
const LAMBDA1_RANGE: (f64, f64) = (1e-3, 1e9);
const LAMBDA2_RANGE: (f64, f64) = (1e-8, 1e6);
/// Bracket width, in log units, at which multiplier searches stop.
const ROOT_TOLERANCE: f64 = 1e-9;
/// Coarser width used by both searches while locating `lambda2`.
const CAP_SEARCH_TOLERANCE: f64 = 1e-4;
const MAX_ROOT_EVALS: usize = 100;
/// Half-width, as a factor, of the warm-started `lambda1` bracket.
const HINT_SPAN: f64 = 4.0;
const DERIV_SCALE: f64 = BER_SCALE * BER_EXPONENT;

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenResult {
    /// Final active set.
    pub active: Vec<bool>,
    pub lambda1: f64,
    pub lambda2: f64,
    /// The uncapped screen would exceed the power threshold.
    pub capped: bool,
    /// Per-subcarrier minimizers (zero where inactive).
    pub bits: Vec<f64>,
    pub powers: Vec<f64>,
    /// Sum of minimizer powers over the final active set.
    pub total_power: f64,
}

impl ScreenResult {
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&i| self.active[i]).collect()
    }
}

struct Grid {
    bits: Vec<f64>,
    m: Vec<f64>,
    /// `ln((2^b - 1) / b)`.
    log_m_over_b: Vec<f64>,
}

impl Grid {
    fn new() -> Self {
        let step = (B_CAP - B_FLOOR) / (GRID_POINTS - 1) as f64;
        let bits: Vec<f64> = (0..GRID_POINTS).map(|k| B_FLOOR + step * k as f64).collect();
        let m: Vec<f64> = bits.iter().map(|b| b.exp2() - 1.0).collect();
        let log_m_over_b = bits.iter().zip(&m).map(|(b, m)| (m / b).ln()).collect();
        Self {
            bits,
            m,
            log_m_over_b,
        }
    }
}

#[derive(Clone, Copy)]
struct Minimizer {
    value: f64,
    bits: f64,
    power: f64,
    ber: f64,
}

pub struct Screen<'a> {
    cnr: &'a [f64],
    log_cnr: Vec<f64>,
    alpha: f64,
    ber_threshold: f64,
    power_threshold: f64,
    grid: Grid,
}

impl<'a> Screen<'a> {
    /// `cnr` and `power_threshold` in solver units.
    pub fn new(cnr: &'a [f64], alpha: f64, ber_threshold: f64, power_threshold: f64) -> Self {
        Self {
            cnr,
            log_cnr: cnr.iter().map(|c| c.ln()).collect(),
            alpha,
            ber_threshold,
            power_threshold,
            grid: Grid::new(),
        }
    }
    /// Minimizes one subcarrier's Lagrangian term over the bit grid.
    fn minimize(&self, i: usize, lambda1: f64, lambda2: f64) -> Minimizer {
        let c = self.cnr[i];
        let a2 = self.alpha + lambda2;
        let w = 1.0 - self.alpha;
        let bt = self.ber_threshold;
        // ln e* = k + ln(m / b) - ln C whenever that is negative
        let k = (a2 / (DERIV_SCALE * lambda1)).ln() - self.log_cnr[i];
        // with e* < 1: a2 P* + lambda1 b 0.2 e* = (a2 / C) m (0.2 / 0.32 - ln e* / 1.6)
        let a2c = a2 / c;
        let ber_coef = BER_SCALE / DERIV_SCALE;
        let linear = w + lambda1 * bt;
        let flat = -w + lambda1 * (BER_SCALE - bt);
        let mut best = (f64::INFINITY, 0);
        for j in 0..GRID_POINTS {
            let b = self.grid.bits[j];
            let ln_e = k + self.grid.log_m_over_b[j];
            let value = if ln_e < 0.0 {
                a2c * self.grid.m[j] * (ber_coef - ln_e / BER_EXPONENT) - b * linear
            } else {
                b * flat
            };
            if value < best.0 {
                best = (value, j);
            }
        }
        let j = best.1;
        let ln_e = (k + self.grid.log_m_over_b[j]).min(0.0);
        Minimizer {
            value: best.0,
            bits: self.grid.bits[j],
            power: -self.grid.m[j] * ln_e / (BER_EXPONENT * c),
            ber: BER_SCALE * ln_e.exp(),
        }
    }

    /// Constraint sums over subcarriers whose minimum is negative.
    fn sums(&self, lambda1: f64, lambda2: f64) -> (f64, f64) {
        let mut ber_sum = 0.0;
        let mut power_sum = 0.0;
        for i in 0..self.cnr.len() {
            if !(self.cnr[i] > 0.0) {
                continue;
            }
            let mz = self.minimize(i, lambda1, lambda2);
            if mz.value < 0.0 && mz.bits >= MIN_ARGMIN_BITS {
                ber_sum += mz.bits * (mz.ber - self.ber_threshold);
                power_sum += mz.power;
            }
        }
        (ber_sum, power_sum)
    }

    /// `lambda1` balancing the average-BER constraint for a given `lambda2`.
    pub fn lambda1_for(&self, lambda2: f64) -> f64 {
        self.lambda1_within(lambda2, ROOT_TOLERANCE)
    }

    fn lambda1_within(&self, lambda2: f64, tol: f64) -> f64 {
        let f = |ln_l1: f64| self.sums(ln_l1.exp(), lambda2).0;
        root_log(f, LAMBDA1_RANGE, tol).exp()
    }

    /// As [`Self::lambda1_within`], searching first within a factor
    /// [`HINT_SPAN`] of `hint`.
    fn lambda1_near(&self, lambda2: f64, tol: f64, hint: f64) -> f64 {
        let lo = (hint / HINT_SPAN).max(LAMBDA1_RANGE.0);
        let hi = (hint * HINT_SPAN).min(LAMBDA1_RANGE.1);
        let f = |ln_l1: f64| self.sums(ln_l1.exp(), lambda2).0;
        if lo < hi && f(lo.ln()) > 0.0 && f(hi.ln()) <= 0.0 {
            root_log(f, (lo, hi), tol).exp()
        } else {
            self.lambda1_within(lambda2, tol)
        }
    }

    fn finish(&self, lambda1: f64, lambda2: f64, capped: bool) -> ScreenResult {
        let n = self.cnr.len();
        let mut out = ScreenResult {
            active: vec![false; n],
            lambda1,
            lambda2,
            capped,
            bits: vec![0.0; n],
            powers: vec![0.0; n],
            total_power: 0.0,
        };
        for i in 0..n {
            if !(self.cnr[i] > 0.0) {
                continue;
            }
            let mz = self.minimize(i, lambda1, lambda2);
            if mz.value < 0.0 && mz.bits >= ACTIVE_ARGMIN_BITS {
                out.active[i] = true;
                out.bits[i] = mz.bits;
                out.powers[i] = mz.power;
                out.total_power += mz.power;
            }
        }
        out
    }

    pub fn run(&self) -> ScreenResult {
        let lambda1 = self.lambda1_for(0.0);
        let (_, power) = self.sums(lambda1, 0.0);
        if power <= self.power_threshold {
            return self.finish(lambda1, 0.0, false);
        }
        let hint = Cell::new(lambda1);
        let excess = |ln_l2: f64| {
            let l2 = ln_l2.exp();
            let l1 = self.lambda1_near(l2, CAP_SEARCH_TOLERANCE, hint.get());
            hint.set(l1);
            self.sums(l1, l2).1 - self.power_threshold
        };
        let lambda2 = root_log(excess, LAMBDA2_RANGE, CAP_SEARCH_TOLERANCE).exp();
        let lambda1 = self.lambda1_for(lambda2);
        self.finish(lambda1, lambda2, true)
    }
}

/// Sign change of a nonincreasing, possibly discontinuous `f` over
/// `ln(range)`, by the Illinois variant of regula falsi with a bisection
/// step whenever the bracket fails to halve. Returns the upper end of the
/// final bracket (where `f <= 0`), clamped to the range.
fn root_log(f: impl Fn(f64) -> f64, range: (f64, f64), tol: f64) -> f64 {
    let (mut lo, mut hi) = (range.0.ln(), range.1.ln());
    let (mut flo, mut fhi) = (f(lo), f(hi));
    if flo <= 0.0 {
        return lo;
    }
    if fhi > 0.0 {
        return hi;
    }
    let mut side = 0i8;
    let mut width = hi - lo;
    for it in 0..MAX_ROOT_EVALS {
        if hi - lo < tol {
            break;
        }
        let regula = (lo * fhi - hi * flo) / (fhi - flo);
        let halve = it % 3 == 2 && hi - lo > 0.5 * width;
        let mid = if halve || !(regula > lo && regula < hi) {
            0.5 * (lo + hi)
        } else {
            regula
        };
        if it % 3 == 2 {
            width = hi - lo;
        }
        let fm = f(mid);
        if fm > 0.0 {
            lo = mid;
            flo = fm;
            if side == 1 {
                fhi *= 0.5;
            }
            side = 1;
        } else {
            hi = mid;
            fhi = fm;
            if side == -1 {
                flo *= 0.5;
            }
            side = -1;
        }
    }
    hi
}

/// Runs the screen on solver-unit inputs.
pub fn screen(cnr: &[f64], alpha: f64, ber_threshold: f64, power_threshold: f64) -> ScreenResult {
    Screen::new(cnr, alpha, ber_threshold, power_threshold).run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_min(c: f64, l1: f64, l2: f64, a: f64, bt: f64) -> (f64, f64) {
        // independent evaluation with explicit exp/log on the same grid
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..GRID_POINTS {
            let b = B_FLOOR + (B_CAP - B_FLOOR) * k as f64 / (GRID_POINTS - 1) as f64;
            let m = b.exp2() - 1.0;
            let e = ((a + l2) * m / (0.32 * l1 * b * c)).min(1.0);
            let p = -m * e.ln() / (1.6 * c);
            let v = (a + l2) * p - (1.0 - a) * b + l1 * b * (0.2 * e - bt);
            if v < best.0 {
                best = (v, b);
            }
        }
        best
    }

    #[test]
    fn closed_form_minimizer_matches_direct_evaluation() {
        let cnr = [0.05, 1.0, 30.0, 900.0];
        let s = Screen::new(&cnr, 0.5, 1e-4, f64::INFINITY);
        for (i, &c) in cnr.iter().enumerate() {
            for &(l1, l2) in &[(10.0, 0.0), (3e3, 0.0), (1e5, 0.7)] {
                let mz = s.minimize(i, l1, l2);
                let (v, b) = brute_min(c, l1, l2, 0.5, 1e-4);
                assert!((mz.value - v).abs() <= 1e-9 * v.abs().max(1.0));
                assert!((mz.bits - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stronger_subcarriers_are_kept() {
        let cnr: Vec<f64> = (0..32).map(|i| 10f64.powf(-1.0 + 0.12 * i as f64)).collect();
        let r = screen(&cnr, 0.5, 1e-4, f64::INFINITY);
        assert!(!r.capped);
        let first = r.active.iter().position(|&a| a).expect("something active");
        assert!(r.active[first..].iter().all(|&a| a));
        // bits grow with channel quality
        for w in r.bits[first..].windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn power_cap_is_met_by_the_multiplier() {
        let cnr: Vec<f64> = (0..32).map(|i| 50.0 + 20.0 * i as f64).collect();
        let free = screen(&cnr, 0.5, 1e-4, f64::INFINITY);
        let cap = 0.5 * free.total_power;
        let r = screen(&cnr, 0.5, 1e-4, cap);
        assert!(r.capped && r.lambda2 > 0.0);
        assert!((r.total_power - cap).abs() < 0.05 * cap, "{} vs {cap}", r.total_power);
    }
}
