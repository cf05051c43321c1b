//! Stationarity system of the slack-variable Lagrangian.
//!
//! Unknowns are stacked as `x = [P_1..P_N, b_1..b_N, lambda1, aux]`, where
//! `aux` is the power slack `Y2` in [`ConstraintCase::PowerInactive`] and the
//! power multiplier `lambda2` in [`ConstraintCase::PowerActive`].
//!
//! Powers inside the system are measured in `LinkParams::power_unit`: the
//! system stores `cnr * unit` and `P_th / unit`, so a state's powers are
//! multiples of the unit and the objective weighs power in that unit.

use thiserror::Error;

use crate::linalg::Matrix;
use crate::linkmodel::{LinkParams, BER_EXPONENT, BER_SCALE};
use crate::lmsolver::NonlinearSystem;

/// Lower clamp on bits while iterating; keeps `2^b - 1` away from zero.
pub const B_FLOOR: f64 = 0.05;
/// Upper clamp on bits while iterating.
pub const B_CAP: f64 = 15.0;
/// Powers are clamped to `[0, POWER_CAP_FACTOR * P_th]` while iterating.
pub const POWER_CAP_FACTOR: f64 = 10.0;

const LN2: f64 = std::f64::consts::LN_2;
/// `BER_SCALE * BER_EXPONENT`.
const DERIV_SCALE: f64 = BER_SCALE * BER_EXPONENT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KktError {
    #[error("non-finite value in state component {0}")]
    NonFinite(usize),
    #[error("bits[{index}] = {value} is below the floor {B_FLOOR}")]
    BitsBelowFloor { index: usize, value: f64 },
    #[error("state has {got} unknowns, system expects {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintCase {
    /// Power cap slack: `lambda2 = 0`, `aux = Y2`.
    PowerInactive,
    /// Power cap binding: `Y2 = 0`, `aux = lambda2`.
    PowerActive,
}

impl ConstraintCase {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintCase::PowerInactive => "PowerInactive",
            ConstraintCase::PowerActive => "PowerActive",
        }
    }
}

impl std::fmt::Display for ConstraintCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Unpacked view of the unknown vector (powers in the system's unit).
#[derive(Debug, Clone, PartialEq)]
pub struct KktState {
    pub powers: Vec<f64>,
    pub bits: Vec<f64>,
    pub lambda1: f64,
    pub aux: f64,
}

impl KktState {
    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.len() + 2);
        x.extend_from_slice(&self.powers);
        x.extend_from_slice(&self.bits);
        x.push(self.lambda1);
        x.push(self.aux);
        x
    }

    /// Splits a stacked vector of length `2N + 2`.
    pub fn from_slice(x: &[f64]) -> Result<Self, KktError> {
        if x.len() < 2 || !x.len().is_multiple_of(2) {
            return Err(KktError::Invalid(format!(
                "stacked vector length {} is not 2N+2",
                x.len()
            )));
        }
        let n = (x.len() - 2) / 2;
        Ok(Self {
            powers: x[..n].to_vec(),
            bits: x[n..2 * n].to_vec(),
            lambda1: x[2 * n],
            aux: x[2 * n + 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktSystem {
    /// Channel-to-noise ratios per power unit.
    cnr: Vec<f64>,
    alpha: f64,
    ber_threshold: f64,
    /// Power cap in power units; infinite when uncapped.
    power_threshold: f64,
    case: ConstraintCase,
    ber_row_scale: f64,
}

impl KktSystem {
    /// `cnr` is per watt; it is rescaled to `params.power_unit` internally.
    pub fn new(cnr: &[f64], params: &LinkParams, case: ConstraintCase) -> Result<Self, KktError> {
        params
            .validate()
            .map_err(|e| KktError::Invalid(e.to_string()))?;
        if let Some(i) = cnr.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(KktError::Invalid(format!("cnr[{i}] = {} is not a finite nonnegative value", cnr[i])));
        }
        if case == ConstraintCase::PowerActive && !params.power_capped() {
            return Err(KktError::Invalid(
                "the power-active case needs a finite power threshold".into(),
            ));
        }
        let unit = params.power_unit;
        Ok(Self {
            cnr: cnr.iter().map(|c| c * unit).collect(),
            alpha: params.alpha,
            ber_threshold: params.ber_threshold,
            power_threshold: params.power_threshold / unit,
            case,
            ber_row_scale: 1.0,
        })
    }

    /// Divides the average-BER row by `BER_th` when enabled.
    pub fn with_scaled_ber_row(mut self, enabled: bool) -> Self {
        self.ber_row_scale = if enabled { 1.0 / self.ber_threshold } else { 1.0 };
        self
    }

    pub fn n(&self) -> usize {
        self.cnr.len()
    }

    pub fn case(&self) -> ConstraintCase {
        self.case
    }

    /// Channel-to-noise ratios per power unit.
    pub fn scaled_cnr(&self) -> &[f64] {
        &self.cnr
    }

    /// Power threshold in power units.
    pub fn scaled_power_threshold(&self) -> f64 {
        self.power_threshold
    }

    fn lambda2(&self, aux: f64) -> f64 {
        match self.case {
            ConstraintCase::PowerInactive => 0.0,
            ConstraintCase::PowerActive => aux,
        }
    }

    fn check(&self, x: &[f64]) -> Result<(), KktError> {
        let n = self.n();
        if x.len() != 2 * n + 2 {
            return Err(KktError::LengthMismatch {
                got: x.len(),
                expected: 2 * n + 2,
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(KktError::NonFinite(i));
        }
        if let Some(i) = x[n..2 * n].iter().position(|&b| b < B_FLOOR) {
            return Err(KktError::BitsBelowFloor {
                index: i,
                value: x[n + i],
            });
        }
        Ok(())
    }

    /// Residual vector with input validation.
    pub fn residuals_checked(&self, state: &KktState) -> Result<Vec<f64>, KktError> {
        let x = state.to_vec();
        self.check(&x)?;
        let mut out = vec![0.0; x.len()];
        self.residuals(&x, &mut out);
        Ok(out)
    }

    /// Analytic Jacobian with input validation.
    pub fn jacobian_checked(&self, state: &KktState) -> Result<Matrix, KktError> {
        let x = state.to_vec();
        self.check(&x)?;
        let mut jac = Matrix::zeros(x.len(), x.len());
        self.jacobian(&x, &mut jac);
        Ok(jac)
    }
}

impl NonlinearSystem for KktSystem {
    fn dim(&self) -> usize {
        2 * self.n() + 2
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        let (p, rest) = x.split_at(n);
        let (b, tail) = rest.split_at(n);
        let (lambda1, aux) = (tail[0], tail[1]);
        let lambda2 = self.lambda2(aux);
        let (a, bt) = (self.alpha, self.ber_threshold);

        let mut ber_sum = 0.0;
        let mut bit_sum = 0.0;
        let mut power_sum = 0.0;
        for i in 0..n {
            let c = self.cnr[i];
            let pow2 = b[i].exp2();
            let m = pow2 - 1.0;
            let xx = BER_EXPONENT * c * p[i] / m;
            let e = (-xx).exp();
            out[i] = a - DERIV_SCALE * lambda1 * b[i] * c / m * e + lambda2;
            let bracket = 1.0 + LN2 * xx * b[i] * pow2 / m;
            out[n + i] = -(1.0 - a) + lambda1 * (BER_SCALE * e * bracket - bt);
            ber_sum += b[i] * e;
            bit_sum += b[i];
            power_sum += p[i];
        }
        out[2 * n] = (BER_SCALE * ber_sum - bt * bit_sum) * self.ber_row_scale;
        out[2 * n + 1] = if self.power_threshold.is_finite() {
            match self.case {
                ConstraintCase::PowerInactive => power_sum - self.power_threshold + aux * aux,
                ConstraintCase::PowerActive => power_sum - self.power_threshold,
            }
        } else {
            // no cap: the slack is free, pin it at zero
            aux
        };
    }

    fn jacobian(&self, x: &[f64], jac: &mut Matrix) {
        let n = self.n();
        let (p, rest) = x.split_at(n);
        let (b, tail) = rest.split_at(n);
        let (lambda1, aux) = (tail[0], tail[1]);
        let bt = self.ber_threshold;
        let (rl1, raux) = (2 * n, 2 * n + 1);
        jac.fill(0.0);

        for i in 0..n {
            let c = self.cnr[i];
            let pow2 = b[i].exp2();
            let m = pow2 - 1.0;
            let dm = LN2 * pow2;
            let xx = BER_EXPONENT * c * p[i] / m;
            let e = (-xx).exp();
            let dxx_dp = BER_EXPONENT * c / m;
            let dxx_db = -xx * dm / m;

            // stationarity in P_i
            let g = b[i] * c / m * e;
            let dg_dp = -g * dxx_dp;
            let dg_db = c / m * e - b[i] * c * dm / (m * m) * e - g * dxx_db;
            jac[(i, i)] = -DERIV_SCALE * lambda1 * dg_dp;
            jac[(i, n + i)] = -DERIV_SCALE * lambda1 * dg_db;
            jac[(i, rl1)] = -DERIV_SCALE * g;
            if self.case == ConstraintCase::PowerActive {
                jac[(i, raux)] = 1.0;
            }

            // stationarity in b_i
            let t = b[i] * pow2;
            let dt = pow2 + b[i] * dm;
            let bracket = 1.0 + LN2 * xx * t / m;
            let dbr_dp = LN2 * dxx_dp * t / m;
            let dbr_db = LN2 * (dxx_db * t / m + xx * dt / m - xx * t * dm / (m * m));
            jac[(n + i, i)] = lambda1 * BER_SCALE * (-dxx_dp * e * bracket + e * dbr_dp);
            jac[(n + i, n + i)] = lambda1 * BER_SCALE * (-dxx_db * e * bracket + e * dbr_db);
            jac[(n + i, rl1)] = BER_SCALE * e * bracket - bt;

            // average-BER equality
            jac[(rl1, i)] = -BER_SCALE * b[i] * e * dxx_dp * self.ber_row_scale;
            jac[(rl1, n + i)] =
                (BER_SCALE * (e - b[i] * e * dxx_db) - bt) * self.ber_row_scale;
        }

        if self.power_threshold.is_finite() {
            for i in 0..n {
                jac[(raux, i)] = 1.0;
            }
            if self.case == ConstraintCase::PowerInactive {
                jac[(raux, raux)] = 2.0 * aux;
            }
        } else {
            jac[(raux, raux)] = 1.0;
        }
    }

    /// Block elimination of the normal equations.
    ///
    /// The two dense rows (average BER and total power) are split off as
    /// auxiliary unknowns `z = J_d d + S_d`, leaving a bordered block-diagonal
    /// system: one 2x2 block per subcarrier plus a 4x4 coupling block for the
    /// multipliers and `z`. Cost is linear in the number of subcarriers.
    fn structured_step(&self, jac: &Matrix, residual: &[f64], mu: f64) -> Option<Vec<f64>> {
        let n = self.n();
        let (g0, g1) = (2 * n, 2 * n + 1);
        let mut schur = [[0.0f64; 4]; 4];
        let mut rhs = [0.0f64; 4];
        // per subcarrier: B^{-1} H (2x4) and B^{-1} r (2)
        let mut bh = vec![[[0.0f64; 4]; 2]; n];
        let mut br = vec![[0.0f64; 2]; n];

        for i in 0..n {
            let (r0, r1) = (i, n + i);
            let l = [[jac[(r0, r0)], jac[(r0, r1)]], [jac[(r1, r0)], jac[(r1, r1)]]];
            let k = [[jac[(r0, g0)], jac[(r0, g1)]], [jac[(r1, g0)], jac[(r1, g1)]]];
            let s = [residual[r0], residual[r1]];

            let b00 = l[0][0] * l[0][0] + l[1][0] * l[1][0] + mu;
            let b01 = l[0][0] * l[0][1] + l[1][0] * l[1][1];
            let b11 = l[0][1] * l[0][1] + l[1][1] * l[1][1] + mu;
            let c00 = b00.sqrt();
            let c10 = b01 / c00;
            let t = b11 - c10 * c10;
            if !(t > 0.0) {
                return None;
            }
            let c11 = t.sqrt();
            let solve2 = |v: [f64; 2]| {
                let y0 = v[0] / c00;
                let y1 = (v[1] - c10 * y0) / c11;
                let x1 = y1 / c11;
                [(y0 - c10 * x1) / c00, x1]
            };

            // H = [L^T K | e_0 e_1], columns: lambda1, aux, z0, z1
            let mut h = [[0.0f64; 4]; 2];
            for a in 0..2 {
                for c in 0..2 {
                    h[a][c] = l[0][a] * k[0][c] + l[1][a] * k[1][c];
                }
            }
            for z in 0..2 {
                h[0][2 + z] = jac[(g0 + z, r0)];
                h[1][2 + z] = jac[(g0 + z, r1)];
            }
            let r = [-(l[0][0] * s[0] + l[1][0] * s[1]), -(l[0][1] * s[0] + l[1][1] * s[1])];

            for c in 0..4 {
                let col = solve2([h[0][c], h[1][c]]);
                bh[i][0][c] = col[0];
                bh[i][1][c] = col[1];
            }
            br[i] = solve2(r);

            for a in 0..4 {
                for c in 0..4 {
                    schur[a][c] -= h[0][a] * bh[i][0][c] + h[1][a] * bh[i][1][c];
                }
                rhs[a] -= h[0][a] * br[i][0] + h[1][a] * br[i][1];
            }
            // multiplier block of the sparse rows
            for a in 0..2 {
                for c in 0..2 {
                    schur[a][c] += k[0][a] * k[0][c] + k[1][a] * k[1][c];
                }
                rhs[a] -= k[0][a] * s[0] + k[1][a] * s[1];
            }
        }
        for a in 0..2 {
            schur[a][a] += mu;
            for z in 0..2 {
                let f = jac[(g0 + z, g0 + a)];
                schur[a][2 + z] += f;
                schur[2 + z][a] += f;
            }
        }
        schur[2][2] -= 1.0;
        schur[3][3] -= 1.0;
        rhs[2] -= residual[g0];
        rhs[3] -= residual[g1];

        let y = solve4(schur, rhs)?;
        let mut d = vec![0.0; 2 * n + 2];
        for i in 0..n {
            for a in 0..2 {
                let mut v = br[i][a];
                for c in 0..4 {
                    v -= bh[i][a][c] * y[c];
                }
                d[a * n + i] = v;
            }
        }
        d[g0] = y[0];
        d[g1] = y[1];
        Some(d)
    }

    fn project(&self, x: &mut [f64]) -> usize {
        let n = self.n();
        let p_max = if self.power_threshold.is_finite() {
            POWER_CAP_FACTOR * self.power_threshold
        } else {
            f64::INFINITY
        };
        let mut moved = 0;
        for p in &mut x[..n] {
            let c = p.clamp(0.0, p_max);
            moved += (c != *p) as usize;
            *p = c;
        }
        for b in &mut x[n..2 * n] {
            let c = b.clamp(B_FLOOR, B_CAP);
            moved += (c != *b) as usize;
            *b = c;
        }
        moved
    }
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let p = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if !(a[p][col].abs() > 0.0) || !a[p][col].is_finite() {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        let s: f64 = (i + 1..4).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Central-difference Jacobian with per-component step
/// `rel_step * max(1, |x_j|)`.
pub fn finite_diff_jacobian<S: NonlinearSystem + ?Sized>(
    system: &S,
    x: &[f64],
    rel_step: f64,
) -> Matrix {
    let n = system.dim();
    let mut jac = Matrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = rel_step * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        system.residuals(&xp, &mut fp);
        xp[j] = x[j] - h;
        system.residuals(&xp, &mut fm);
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm2;
    use crate::linkmodel::{power_for_target_ber, Allocation};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(pth: f64) -> LinkParams {
        LinkParams {
            ber_threshold: 1e-4,
            power_threshold: pth,
            alpha: 0.5,
            power_unit: 1.0,
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, cnr: &[f64]) -> KktState {
        let n = cnr.len();
        let bits: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..8.0)).collect();
        let powers = bits
            .iter()
            .zip(cnr)
            .map(|(&b, &c)| power_for_target_ber(b, c, 1e-4).unwrap() * rng.random_range(0.7..1.3))
            .collect();
        KktState {
            powers,
            bits,
            lambda1: rng.random_range(0.5..500.0),
            aux: rng.random_range(0.1..2.0),
        }
    }

    fn max_rel_err(a: &Matrix, b: &Matrix) -> f64 {
        let scale = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs() / x.abs().max(1e-3 * scale))
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_multiplier_leaves_alpha() {
        let sys = KktSystem::new(&[1.0, 3.0, 7.0], &params(100.0), ConstraintCase::PowerInactive).unwrap();
        let st = KktState {
            powers: vec![1.0, 2.0, 3.0],
            bits: vec![2.0, 3.0, 4.0],
            lambda1: 0.0,
            aux: 0.5,
        };
        let r = sys.residuals_checked(&st).unwrap();
        assert_eq!(&r[..3], &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn ber_row_vanishes_at_threshold() {
        let cnr = [0.5, 2.0, 40.0, 9.0];
        let bits = vec![2.0, 3.5, 6.0, 4.25];
        let powers: Vec<f64> = bits
            .iter()
            .zip(&cnr)
            .map(|(&b, &c)| power_for_target_ber(b, c, 1e-4).unwrap())
            .collect();
        let sys = KktSystem::new(&cnr, &params(1e6), ConstraintCase::PowerInactive).unwrap();
        let st = KktState {
            powers,
            bits,
            lambda1: 3.0,
            aux: 1.0,
        };
        let r = sys.residuals_checked(&st).unwrap();
        assert!(r[8].abs() < 1e-16, "{}", r[8]);
    }

    #[test]
    fn power_row_vanishes_on_cap_with_zero_slack() {
        let sys = KktSystem::new(&[1.0, 1.0], &params(5.0), ConstraintCase::PowerInactive).unwrap();
        let st = KktState {
            powers: vec![2.0, 3.0],
            bits: vec![2.0, 2.0],
            lambda1: 1.0,
            aux: 0.0,
        };
        assert_eq!(sys.residuals_checked(&st).unwrap()[5], 0.0);
    }

    #[test]
    fn multiplier_column_matches_hand_derivative() {
        let cnr = [3.0, 0.4];
        let sys = KktSystem::new(&cnr, &params(50.0), ConstraintCase::PowerInactive).unwrap();
        let st = KktState {
            powers: vec![2.0, 5.0],
            bits: vec![3.0, 2.5],
            lambda1: 0.0,
            aux: 0.7,
        };
        let j = sys.jacobian_checked(&st).unwrap();
        for i in 0..2 {
            let (b, c, p) = (st.bits[i], cnr[i], st.powers[i]);
            let m = b.exp2() - 1.0;
            let want = -0.32 * b * c * (-1.6 * c * p / m).exp() / m;
            assert_relative_eq!(j[(i, 4)], want, max_relative = 1e-14);
        }
        assert_eq!(j[(5, 5)], 2.0 * 0.7);
        let fd = finite_diff_jacobian(&sys, &st.to_vec(), 1e-6);
        assert_relative_eq!(fd[(0, 4)], j[(0, 4)], max_relative = 1e-7);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in [ConstraintCase::PowerInactive, ConstraintCase::PowerActive] {
            for _ in 0..50 {
                let cnr: Vec<f64> = (0..8).map(|_| 10f64.powf(rng.random_range(-1.0..2.0))).collect();
                let st = random_state(&mut rng, &cnr);
                let sys = KktSystem::new(&cnr, &params(1e3), case).unwrap();
                let j = sys.jacobian_checked(&st).unwrap();
                let fd = finite_diff_jacobian(&sys, &st.to_vec(), 1e-6);
                let err = max_rel_err(&j, &fd);
                assert!(err < 1e-5, "{case}: {err}");
            }
        }
    }

    #[test]
    fn uncapped_system_pins_slack() {
        let sys = KktSystem::new(&[2.0], &params(f64::INFINITY), ConstraintCase::PowerInactive).unwrap();
        let st = KktState {
            powers: vec![1.0],
            bits: vec![2.0],
            lambda1: 1.0,
            aux: 0.25,
        };
        assert_eq!(sys.residuals_checked(&st).unwrap()[3], 0.25);
        assert_eq!(sys.jacobian_checked(&st).unwrap()[(3, 3)], 1.0);
        assert!(KktSystem::new(&[2.0], &params(f64::INFINITY), ConstraintCase::PowerActive).is_err());
    }

    #[test]
    fn sparsity_of_power_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cnr: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..20.0)).collect();
        let st = random_state(&mut rng, &cnr);
        for case in [ConstraintCase::PowerInactive, ConstraintCase::PowerActive] {
            let sys = KktSystem::new(&cnr, &params(100.0), case).unwrap();
            let j = sys.jacobian_checked(&st).unwrap();
            for i in 0..6 {
                for col in 0..14 {
                    let allowed = col == i || col == 6 + i || col == 12 || col == 13;
                    if !allowed {
                        assert_eq!(j[(i, col)], 0.0);
                        assert_eq!(j[(6 + i, col)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn cases_agree_when_multiplier_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cnr: Vec<f64> = (0..5).map(|_| rng.random_range(0.5..20.0)).collect();
        let mut st = random_state(&mut rng, &cnr);
        st.aux = 0.0;
        let a = KktSystem::new(&cnr, &params(100.0), ConstraintCase::PowerInactive)
            .unwrap()
            .residuals_checked(&st)
            .unwrap();
        let b = KktSystem::new(&cnr, &params(100.0), ConstraintCase::PowerActive)
            .unwrap()
            .residuals_checked(&st)
            .unwrap();
        assert_eq!(&a[..11], &b[..11]);
    }

    #[test]
    fn zero_residual_in_active_case_pins_totals() {
        // construct a state that zeroes the last two rows and recheck through linkmodel
        let cnr = [4.0, 1.5];
        let bits = vec![3.0, 2.0];
        let powers: Vec<f64> = bits
            .iter()
            .zip(&cnr)
            .map(|(&b, &c)| power_for_target_ber(b, c, 1e-4).unwrap())
            .collect();
        let pth: f64 = powers.iter().sum();
        let sys = KktSystem::new(&cnr, &params(pth), ConstraintCase::PowerActive).unwrap();
        let st = KktState {
            powers: powers.clone(),
            bits: bits.clone(),
            lambda1: 1.0,
            aux: 0.2,
        };
        let r = sys.residuals_checked(&st).unwrap();
        assert!(r[4].abs() < 1e-16 && r[5].abs() < 1e-12);
        let alloc = Allocation::new(bits, powers).unwrap();
        assert_relative_eq!(alloc.total_power(), pth, max_relative = 1e-15);
        let ber = crate::linkmodel::average_ber(&alloc, &cnr).unwrap();
        assert_relative_eq!(ber, 1e-4, max_relative = 1e-12);
    }

    #[test]
    fn scaled_ber_row() {
        let cnr = [2.0, 3.0];
        let st = KktState {
            powers: vec![20.0, 30.0],
            bits: vec![3.0, 4.0],
            lambda1: 2.0,
            aux: 0.1,
        };
        let plain = KktSystem::new(&cnr, &params(100.0), ConstraintCase::PowerInactive).unwrap();
        let scaled = plain.clone().with_scaled_ber_row(true);
        let rp = plain.residuals_checked(&st).unwrap();
        let rs = scaled.residuals_checked(&st).unwrap();
        assert_relative_eq!(rs[4], rp[4] * 1e4, max_relative = 1e-14);
        let j = scaled.jacobian_checked(&st).unwrap();
        let fd = finite_diff_jacobian(&scaled, &st.to_vec(), 1e-6);
        assert!(max_rel_err(&j, &fd) < 1e-5);
    }

    #[test]
    fn input_validation() {
        let sys = KktSystem::new(&[1.0], &params(10.0), ConstraintCase::PowerInactive).unwrap();
        let mut st = KktState {
            powers: vec![1.0],
            bits: vec![0.01],
            lambda1: 0.0,
            aux: 0.0,
        };
        assert!(matches!(sys.residuals_checked(&st), Err(KktError::BitsBelowFloor { .. })));
        st.bits[0] = 2.0;
        st.powers[0] = f64::NAN;
        assert!(matches!(sys.residuals_checked(&st), Err(KktError::NonFinite(0))));
    }

    #[test]
    fn projection_clamps_into_box() {
        let sys = KktSystem::new(&[1.0, 1.0], &params(2.0), ConstraintCase::PowerInactive).unwrap();
        let mut x = vec![-1.0, 50.0, 0.0, 20.0, 1.0, 1.0];
        assert_eq!(sys.project(&mut x), 4);
        assert_eq!(x, vec![0.0, 20.0, B_FLOOR, B_CAP, 1.0, 1.0]);
    }

    #[test]
    fn structured_step_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in [ConstraintCase::PowerInactive, ConstraintCase::PowerActive] {
            for pth in [50.0, f64::INFINITY] {
                if case == ConstraintCase::PowerActive && pth.is_infinite() {
                    continue;
                }
                for &mu in &[1e5, 1.0, 1e-6, 1e-30] {
                    let cnr: Vec<f64> = (0..12).map(|_| 10f64.powf(rng.random_range(-1.0..2.0))).collect();
                    let st = random_state(&mut rng, &cnr);
                    let sys = KktSystem::new(&cnr, &params(pth), case).unwrap();
                    let x = st.to_vec();
                    let j = sys.jacobian_checked(&st).unwrap();
                    let s = sys.residuals_checked(&st).unwrap();
                    let dense = crate::lmsolver::lm_step(&j, &s, mu).unwrap();
                    let fast = sys.structured_step(&j, &s, mu).expect("structured step");
                    assert_eq!(x.len(), fast.len());
                    // backward error of the normal equations
                    let mut r = j.tr_mul_vec(&j.mul_vec(&fast));
                    let g = j.tr_mul_vec(&s);
                    for k in 0..r.len() {
                        r[k] += mu * fast[k] + g[k];
                    }
                    let mut a = j.gram();
                    for k in 0..a.rows() {
                        a[(k, k)] += mu;
                    }
                    let bound = 1e-10 * (a.norm() * norm2(&fast) + norm2(&g));
                    assert!(norm2(&r) <= bound, "{case} mu={mu}: {} > {bound}", norm2(&r));
                    if mu >= 1e-6 {
                        let scale = crate::linalg::norm_inf(&dense);
                        for (a, b) in dense.iter().zip(&fast) {
                            assert!((a - b).abs() <= 1e-8 * scale, "{case} mu={mu}: {a} vs {b}");
                        }
                    }
                }
            }
        }
    }

    struct Affine;

    impl NonlinearSystem for Affine {
        fn dim(&self) -> usize {
            3
        }
        fn residuals(&self, x: &[f64], out: &mut [f64]) {
            out[0] = 2.0 * x[0] - x[1] + 0.5;
            out[1] = 3.0 * x[2];
            out[2] = -x[0] + 4.0 * x[1] + x[2];
        }
        fn jacobian(&self, _x: &[f64], jac: &mut Matrix) {
            *jac = Matrix::from_rows(&[
                vec![2.0, -1.0, 0.0],
                vec![0.0, 0.0, 3.0],
                vec![-1.0, 4.0, 1.0],
            ]);
        }
    }

    #[test]
    fn finite_differences_exact_on_affine_map() {
        let x = [0.3, -1.2, 7.0];
        let fd = finite_diff_jacobian(&Affine, &x, 1e-4);
        let mut j = Matrix::zeros(3, 3);
        Affine.jacobian(&x, &mut j);
        for (a, b) in fd.as_slice().iter().zip(j.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn finite_differences_are_second_order() {
        let cnr = [2.0, 0.7, 5.0];
        let st = KktState {
            powers: vec![10.0, 40.0, 6.0],
            bits: vec![3.0, 2.5, 4.0],
            lambda1: 20.0,
            aux: 0.4,
        };
        let sys = KktSystem::new(&cnr, &params(200.0), ConstraintCase::PowerInactive).unwrap();
        let x = st.to_vec();
        let j = sys.jacobian_checked(&st).unwrap();
        let err = |h: f64| {
            let fd = finite_diff_jacobian(&sys, &x, h);
            (fd[(3, 3)] - j[(3, 3)]).abs()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn stacking_round_trips(v in proptest::collection::vec(-1e3f64..1e3, 1..10)) {
            let n = v.len();
            let mut x = v.clone();
            x.extend_from_slice(&v);
            x.push(1.0);
            x.push(2.0);
            let st = KktState::from_slice(&x).unwrap();
            prop_assert_eq!(st.len(), n);
            prop_assert_eq!(st.to_vec(), x);
        }
    }
}
