//! Levenberg–Marquardt iteration for square nonlinear systems `S(x) = 0`.
//!
//! Each iteration solves `(J^T J + mu I) d = -J^T S` with a dense Cholesky
//! factorization and forms the candidate `x + d`. The damping follows a
//! threshold schedule: while `mu > mu_th` the candidate is accepted and `mu`
//! shrinks by `nu1`; otherwise `mu` grows by `nu2`. With the default
//! (non-strict) schedule a candidate proposed while `mu <= mu_th` is still
//! accepted, and `mu` shrinks, whenever it strictly lowers `||S||_2`.
//!
//! Termination uses infinity norms of the residual and of the step:
//! convergence needs both below their tolerances; a step below tolerance with
//! a residual above it stops the loop as [`Termination::Stalled`].

use std::io::{self, Write};

use thiserror::Error;

use crate::linalg::{dot, norm2, norm_inf, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(
        "matrix is not positive definite: pivot {pivot:e} at index {index} \
         (diagonal ratio {diag_ratio:e})"
    )]
    NotPositiveDefinite {
        index: usize,
        pivot: f64,
        diag_ratio: f64,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

/// A square system of residual equations with an analytic Jacobian.
pub trait NonlinearSystem {
    /// Number of unknowns (and of residual rows).
    fn dim(&self) -> usize;

    fn residuals(&self, x: &[f64], out: &mut [f64]);

    fn jacobian(&self, x: &[f64], jac: &mut Matrix);

    /// Clamps `x` into the admissible iteration box and returns how many
    /// components were moved.
    fn project(&self, _x: &mut [f64]) -> usize {
        0
    }

    /// The damped step computed by a structure-aware method, or `None` to
    /// use the dense solve. Results are checked against the normal equations
    /// before use.
    fn structured_step(&self, _jac: &Matrix, _residual: &[f64], _mu: f64) -> Option<Vec<f64>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub mu0: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub mu_th: f64,
    /// Residual tolerance (infinity norm).
    pub tol_residual: f64,
    /// Step tolerance (infinity norm).
    pub tol_step: f64,
    pub k_max: usize,
    /// Never accept a candidate while `mu <= mu_th`.
    pub strict_schedule: bool,
    /// Record one [`TraceEntry`] per iteration.
    pub keep_trace: bool,
    /// Try [`NonlinearSystem::structured_step`] before the dense solve.
    pub structured: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            mu0: 1e5,
            nu1: 0.5,
            nu2: 2.0,
            mu_th: 1.0,
            tol_residual: 1e-6,
            tol_step: 1e-6,
            k_max: 10_000,
            strict_schedule: false,
            keep_trace: false,
            structured: true,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |msg: String| Err(LmError::InvalidConfig(msg));
        if !(self.mu0 > 0.0 && self.mu0.is_finite()) {
            return bad(format!("mu0 must be positive, got {}", self.mu0));
        }
        if !(self.nu1 > 0.0 && self.nu1 < 1.0) {
            return bad(format!("nu1 must lie in (0, 1), got {}", self.nu1));
        }
        if !(self.nu2 > 1.0 && self.nu2.is_finite()) {
            return bad(format!("nu2 must exceed 1, got {}", self.nu2));
        }
        if !(self.mu_th > 0.0) {
            return bad(format!("mu_th must be positive, got {}", self.mu_th));
        }
        if !(self.tol_residual > 0.0 && self.tol_step > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.k_max == 0 {
            return bad("k_max must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// `||S(x0)||` or `||d0||` already below tolerance: stop without converging.
    InitialBelowTolerance,
    /// Step fell below tolerance while the residual did not.
    Stalled,
    /// An accepted candidate produced a non-finite residual.
    NonFinite,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::InitialBelowTolerance => "initial_below_tolerance",
            Termination::Stalled => "stalled",
            Termination::NonFinite => "non_finite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub k: usize,
    pub mu: f64,
    pub res_norm: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    /// Last accepted iterate (always finite).
    pub x_final: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// `||S(x_final)||_inf`.
    pub residual_norm: f64,
    /// `||d||_inf` of the last step computed at `x_final`.
    pub step_norm: f64,
    pub termination: Termination,
    /// Components moved by [`NonlinearSystem::project`] over the whole run.
    pub clamp_events: usize,
    pub trace: Vec<TraceEntry>,
}

/// Solves `a x = rhs` for symmetric positive definite `a` by Cholesky
/// factorization.
pub fn solve_linear_spd(a: &Matrix, rhs: &[f64]) -> Result<Vec<f64>, LmError> {
    let n = a.rows();
    if a.cols() != n || rhs.len() != n {
        return Err(LmError::Dimension(format!(
            "{}x{} matrix with rhs of length {}",
            a.rows(),
            a.cols(),
            rhs.len()
        )));
    }
    let l = cholesky(a)?;
    // forward: L y = rhs
    let mut y = vec![0.0; n];
    for i in 0..n {
        let row = l.row(i);
        y[i] = (rhs[i] - dot(&row[..i], &y[..i])) / row[i];
    }
    // backward: L^T x = y
    let mut x = y;
    for i in (0..n).rev() {
        x[i] /= l[(i, i)];
        let xi = x[i];
        let row = l.row(i);
        for (xk, &lik) in x[..i].iter_mut().zip(&row[..i]) {
            *xk -= lik * xi;
        }
    }
    Ok(x)
}

/// Lower-triangular Cholesky factor, row by row so that every inner product
/// runs over contiguous memory.
fn cholesky(a: &Matrix) -> Result<Matrix, LmError> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    let mut max_diag: f64 = 0.0;
    let mut min_diag = f64::INFINITY;
    for i in 0..n {
        for j in 0..=i {
            let s = {
                let (li, lj) = (l.row(i), l.row(j));
                a[(i, j)] - dot(&li[..j], &lj[..j])
            };
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(LmError::NotPositiveDefinite {
                        index: i,
                        pivot: s,
                        diag_ratio: if min_diag.is_finite() {
                            max_diag / min_diag
                        } else {
                            f64::NAN
                        },
                    });
                }
                let d = s.sqrt();
                max_diag = max_diag.max(d);
                min_diag = min_diag.min(d);
                l[(i, i)] = d;
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// One damped Gauss–Newton step `d = -(J^T J + mu I)^{-1} J^T S`.
pub fn lm_step(jac: &Matrix, residual: &[f64], mu: f64) -> Result<Vec<f64>, LmError> {
    if jac.rows() != residual.len() {
        return Err(LmError::Dimension(format!(
            "jacobian has {} rows but residual has {}",
            jac.rows(),
            residual.len()
        )));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(LmError::InvalidConfig(format!("damping must be positive, got {mu}")));
    }
    if !jac.is_finite() {
        return Err(LmError::NonFinite("jacobian"));
    }
    if !residual.iter().all(|v| v.is_finite()) {
        return Err(LmError::NonFinite("residual"));
    }
    let mut a = jac.gram();
    for i in 0..a.rows() {
        a[(i, i)] += mu;
    }
    let g = jac.tr_mul_vec(residual);
    let mut d = solve_linear_spd(&a, &g)?;
    for v in &mut d {
        *v = -*v;
    }
    Ok(d)
}

/// Relative backward-error bound a structured step must meet.
const STRUCTURED_TOLERANCE: f64 = 1e-10;

/// Checks `(J^T J + mu I) d = -J^T S` to [`STRUCTURED_TOLERANCE`], using
/// `||J||_F^2 + mu` as the bound on the matrix norm.
fn step_is_accurate(jac: &Matrix, residual: &[f64], mu: f64, d: &[f64]) -> bool {
    if !d.iter().all(|v| v.is_finite()) {
        return false;
    }
    let jd = jac.mul_vec(d);
    let mut r = jac.tr_mul_vec(&jd);
    let g = jac.tr_mul_vec(residual);
    for ((ri, &di), &gi) in r.iter_mut().zip(d).zip(&g) {
        *ri += mu * di + gi;
    }
    let a_norm = jac.norm().powi(2) + mu;
    norm2(&r) <= STRUCTURED_TOLERANCE * (a_norm * norm2(d) + norm2(&g))
}

fn damped_step<S: NonlinearSystem + ?Sized>(
    system: &S,
    jac: &Matrix,
    residual: &[f64],
    mu: f64,
    config: &LmConfig,
) -> Result<Vec<f64>, LmError> {
    if config.structured {
        if let Some(d) = system.structured_step(jac, residual, mu) {
            if step_is_accurate(jac, residual, mu, &d) {
                return Ok(d);
            }
        }
    }
    lm_step(jac, residual, mu)
}

/// Runs the damped iteration from `x0`.
///
/// Errors are reserved for invalid input and internal linear-algebra faults;
/// every numerical outcome of the iteration itself is reported through
/// [`LmResult::termination`].
pub fn solve<S: NonlinearSystem + ?Sized>(
    system: &S,
    x0: &[f64],
    config: &LmConfig,
) -> Result<LmResult, LmError> {
    config.validate()?;
    let n = system.dim();
    if x0.len() != n {
        return Err(LmError::Dimension(format!(
            "initial point has {} entries, system has {n}",
            x0.len()
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(LmError::NonFinite("initial point"));
    }

    let mut x = x0.to_vec();
    let mut s = vec![0.0; n];
    let mut jac = Matrix::zeros(n, n);
    system.residuals(&x, &mut s);
    let finish = |x: Vec<f64>, k, rn, dn, termination, clamps, trace| LmResult {
        x_final: x,
        converged: termination == Termination::Converged,
        iterations: k,
        residual_norm: rn,
        step_norm: dn,
        termination,
        clamp_events: clamps,
        trace,
    };
    if !s.iter().all(|v| v.is_finite()) {
        return Ok(finish(x, 0, f64::INFINITY, f64::NAN, Termination::NonFinite, 0, Vec::new()));
    }
    system.jacobian(&x, &mut jac);

    let mut mu = config.mu0;
    let mut d = damped_step(system, &jac, &s, mu, config)?;
    let mut rn = norm_inf(&s);
    let mut dn = norm_inf(&d);
    let mut trace = Vec::new();
    if rn < config.tol_residual || dn < config.tol_step {
        return Ok(finish(x, 0, rn, dn, Termination::InitialBelowTolerance, 0, trace));
    }

    let mut k = 0;
    let mut clamps = 0;
    let mut cand = vec![0.0; n];
    let mut s_cand = vec![0.0; n];
    loop {
        if rn < config.tol_residual && dn < config.tol_step {
            return Ok(finish(x, k, rn, dn, Termination::Converged, clamps, trace));
        }
        if dn < config.tol_step {
            return Ok(finish(x, k, rn, dn, Termination::Stalled, clamps, trace));
        }
        if k >= config.k_max {
            return Ok(finish(x, k, rn, dn, Termination::MaxIterations, clamps, trace));
        }
        k += 1;

        for ((c, &xi), &di) in cand.iter_mut().zip(&x).zip(&d) {
            *c = xi + di;
        }
        clamps += system.project(&mut cand);

        let mu_used = mu;
        let accepted = if mu > config.mu_th {
            system.residuals(&cand, &mut s_cand);
            true
        } else if config.strict_schedule {
            false
        } else {
            system.residuals(&cand, &mut s_cand);
            let finite = s_cand.iter().all(|v| v.is_finite());
            finite && dot(&s_cand, &s_cand) < dot(&s, &s)
        };

        if config.keep_trace {
            trace.push(TraceEntry {
                k,
                mu: mu_used,
                res_norm: rn,
                step_norm: dn,
                accepted,
            });
        }

        if accepted {
            if !s_cand.iter().all(|v| v.is_finite()) {
                return Ok(finish(x, k, rn, dn, Termination::NonFinite, clamps, trace));
            }
            std::mem::swap(&mut x, &mut cand);
            std::mem::swap(&mut s, &mut s_cand);
            system.jacobian(&x, &mut jac);
            mu *= config.nu1;
        } else {
            mu *= config.nu2;
        }
        // keep mu representable; a huge mu only means "tiny step"
        mu = mu.clamp(f64::MIN_POSITIVE, 1e300);

        d = damped_step(system, &jac, &s, mu, config)?;
        rn = norm_inf(&s);
        dn = norm_inf(&d);
    }
}

/// Writes an iteration trace as CSV `k,mu,res_norm,step_norm,accepted`.
pub fn write_trace<W: Write>(mut w: W, trace: &[TraceEntry]) -> io::Result<()> {
    writeln!(w, "k,mu,res_norm,step_norm,accepted")?;
    for t in trace {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{}",
            t.k, t.mu, t.res_norm, t.step_norm, t.accepted as u8
        )?;
    }
    Ok(())
}

/// Infinity norm of the residual at `x`.
pub fn residual_norm_inf<S: NonlinearSystem + ?Sized>(system: &S, x: &[f64]) -> f64 {
    let mut s = vec![0.0; system.dim()];
    system.residuals(x, &mut s);
    norm_inf(&s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Linear {
        a: Matrix,
        c: Vec<f64>,
    }

    impl NonlinearSystem for Linear {
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn residuals(&self, x: &[f64], out: &mut [f64]) {
            let ax = self.a.mul_vec(x);
            for i in 0..out.len() {
                out[i] = ax[i] - self.c[i];
            }
        }
        fn jacobian(&self, _x: &[f64], jac: &mut Matrix) {
            *jac = self.a.clone();
        }
    }

    /// Rosenbrock-style residuals `(10 (y - x^2), 1 - x)`.
    struct Banana;

    impl NonlinearSystem for Banana {
        fn dim(&self) -> usize {
            2
        }
        fn residuals(&self, x: &[f64], out: &mut [f64]) {
            out[0] = 10.0 * (x[1] - x[0] * x[0]);
            out[1] = 1.0 - x[0];
        }
        fn jacobian(&self, x: &[f64], jac: &mut Matrix) {
            jac[(0, 0)] = -20.0 * x[0];
            jac[(0, 1)] = 10.0;
            jac[(1, 0)] = -1.0;
            jac[(1, 1)] = 0.0;
        }
    }

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    }

    fn well_conditioned(n: usize, seed: u64) -> Matrix {
        let mut st = seed;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = 0.3 * lcg(&mut st);
            }
            a[(i, i)] += 3.0;
        }
        a
    }

    /// Gaussian elimination with partial pivoting, independent of Cholesky.
    fn gauss_solve(a: &Matrix, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = a.row(i).to_vec();
                r.push(b[i]);
                r
            })
            .collect();
        for col in 0..n {
            let p = (col..n)
                .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
                .unwrap();
            m.swap(col, p);
            for r in col + 1..n {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
            x[i] = (m[i][n] - s) / m[i][i];
        }
        x
    }

    #[test]
    fn spd_identity_returns_rhs() {
        let rhs = vec![1.5, -2.0, 0.25];
        assert_eq!(solve_linear_spd(&Matrix::identity(3), &rhs).unwrap(), rhs);
    }

    #[test]
    fn spd_diagonal() {
        let a = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 4.0],
        ]);
        for x in solve_linear_spd(&a, &[1.0, 2.0, 4.0]).unwrap() {
            assert_relative_eq!(x, 1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn spd_random_construct_and_verify() {
        let n = 50;
        let m = well_conditioned(n, 7);
        let mut a = m.gram();
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        let mut st = 99;
        let rhs: Vec<f64> = (0..n).map(|_| lcg(&mut st)).collect();
        let x = solve_linear_spd(&a, &rhs).unwrap();
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(&rhs).map(|(u, v)| u - v).collect();
        assert!(norm2(&r) / norm2(&rhs) < 1e-12);
    }

    #[test]
    fn spd_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        match solve_linear_spd(&a, &[1.0, 1.0]) {
            Err(LmError::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scalar_steps() {
        let j = Matrix::from_rows(&[vec![2.0]]);
        let d = lm_step(&j, &[4.0], 1e-12).unwrap();
        assert_relative_eq!(d[0], -2.0, max_relative = 1e-10);
        let d = lm_step(&j, &[4.0], 12.0).unwrap();
        assert_relative_eq!(d[0], -0.5, max_relative = 1e-15);
    }

    #[test]
    fn large_damping_gives_scaled_gradient_step() {
        let j = well_conditioned(6, 3);
        let s: Vec<f64> = (0..6).map(|i| 0.5 - 0.2 * i as f64).collect();
        let jtj_norm = j.gram().norm();
        let mu = 100.0 * jtj_norm;
        let d = lm_step(&j, &s, mu).unwrap();
        let sd: Vec<f64> = j.tr_mul_vec(&s).iter().map(|g| -g / mu).collect();
        let diff: Vec<f64> = d.iter().zip(&sd).map(|(a, b)| a - b).collect();
        assert!(norm2(&diff) <= 0.01 * norm2(&sd));
    }

    #[test]
    fn step_backward_error() {
        let j = well_conditioned(8, 11);
        let s: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let mu = 0.37;
        let d = lm_step(&j, &s, mu).unwrap();
        let mut a = j.gram();
        for i in 0..8 {
            a[(i, i)] += mu;
        }
        let g = j.tr_mul_vec(&s);
        let ad = a.mul_vec(&d);
        let r: Vec<f64> = ad.iter().zip(&g).map(|(u, v)| u + v).collect();
        assert!(norm2(&r) <= 1e-10 * (a.norm() * norm2(&d) + norm2(&g)));
    }

    #[test]
    fn step_norm_shrinks_with_damping() {
        let j = well_conditioned(5, 21);
        let s = vec![1.0, -2.0, 0.5, 0.0, 3.0];
        let mut prev = f64::INFINITY;
        let mut mu = 1e-8;
        while mu <= 1e8 {
            let dn = norm2(&lm_step(&j, &s, mu).unwrap());
            assert!(dn <= prev * (1.0 + 1e-12));
            prev = dn;
            mu *= 10.0;
        }
    }

    #[test]
    fn step_rejects_bad_input() {
        let j = Matrix::from_rows(&[vec![f64::NAN]]);
        assert!(matches!(lm_step(&j, &[1.0], 1.0), Err(LmError::NonFinite(_))));
        let j = Matrix::from_rows(&[vec![1.0]]);
        assert!(lm_step(&j, &[1.0], 0.0).is_err());
    }

    #[test]
    fn linear_system_converges_to_direct_solution() {
        let a = well_conditioned(6, 5);
        let c = vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.5];
        let want = gauss_solve(&a, &c);
        let sys = Linear { a, c };
        let cfg = LmConfig {
            tol_residual: 1e-10,
            tol_step: 1e-10,
            ..LmConfig::default()
        };
        let res = solve(&sys, &[0.0; 6], &cfg).unwrap();
        assert_eq!(res.termination, Termination::Converged);
        assert!(res.iterations < 200, "{} iterations", res.iterations);
        for (x, w) in res.x_final.iter().zip(&want) {
            assert!((x - w).abs() < 1e-8, "{x} vs {w}: {res:?}");
        }
    }

    #[test]
    fn exact_root_stops_without_converging() {
        let a = well_conditioned(4, 9);
        let x = vec![1.0, -1.0, 2.0, 0.5];
        let c = a.mul_vec(&x);
        let sys = Linear { a, c };
        let res = solve(&sys, &x, &LmConfig::default()).unwrap();
        assert_eq!(res.termination, Termination::InitialBelowTolerance);
        assert_eq!(res.iterations, 0);
        assert!(!res.converged);
    }

    #[test]
    fn iteration_cap() {
        let cfg = LmConfig {
            k_max: 3,
            ..LmConfig::default()
        };
        let res = solve(&Banana, &[-1.2, 1.0], &cfg).unwrap();
        assert_eq!(res.termination, Termination::MaxIterations);
        assert_eq!(res.iterations, 3);
    }

    #[test]
    fn nonlinear_system_converges() {
        let res = solve(&Banana, &[-1.2, 1.0], &LmConfig::default()).unwrap();
        assert!(res.converged, "{:?}", res.termination);
        assert!((res.x_final[0] - 1.0).abs() < 1e-6);
        assert!((res.x_final[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn trace_obeys_damping_rules() {
        let cfg = LmConfig {
            keep_trace: true,
            ..LmConfig::default()
        };
        let res = solve(&Banana, &[-1.2, 1.0], &cfg).unwrap();
        assert_eq!(res.trace.len(), res.iterations);
        for w in res.trace.windows(2) {
            let (a, b) = (w[0], w[1]);
            assert!(a.mu > 0.0);
            let factor = if a.accepted { 0.5 } else { 2.0 };
            assert_relative_eq!(b.mu, a.mu * factor, max_relative = 1e-15);
        }
        // above the threshold every candidate is taken
        assert!(res.trace.iter().filter(|t| t.mu > cfg.mu_th).all(|t| t.accepted));

        let strict = LmConfig {
            strict_schedule: true,
            ..cfg
        };
        let res = solve(&Banana, &[-1.2, 1.0], &strict).unwrap();
        for t in &res.trace {
            assert_eq!(t.accepted, t.mu > strict.mu_th);
        }
    }

    #[test]
    fn trace_is_reproducible() {
        let cfg = LmConfig {
            keep_trace: true,
            ..LmConfig::default()
        };
        let a = solve(&Banana, &[-1.2, 1.0], &cfg).unwrap();
        let b = solve(&Banana, &[-1.2, 1.0], &cfg).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        write_trace(&mut buf, &a.trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,mu,res_norm,step_norm,accepted\n"));
        assert_eq!(text.lines().count(), a.trace.len() + 1);
    }

    #[test]
    fn config_validation() {
        assert!(LmConfig::default().validate().is_ok());
        let bad = LmConfig {
            nu1: 1.5,
            ..LmConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LmConfig {
            nu2: 0.9,
            ..LmConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
