//! Frequency-selective Rayleigh channels with an exponential power delay
//! profile.
//!
//! Each realization is drawn from a ChaCha8 stream keyed by `(seed, trial)`:
//! the generator is seeded with `seed` and switched to stream `trial`, so any
//! trial can be regenerated on its own.

use std::f64::consts::PI;
use std::io::{self, BufRead, Write};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid channel parameter: {0}")]
    InvalidParameter(String),
    #[error("channel dump line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub n_subcarriers: usize,
    pub n_taps: usize,
    /// Decay per tap of the power delay profile.
    pub decay: f64,
    /// Noise variance in watts.
    pub noise_variance: f64,
    pub seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            n_subcarriers: 128,
            n_taps: 5,
            decay: 0.2,
            noise_variance: 1e-9,
            seed: 0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: String| Err(ChannelError::InvalidParameter(m));
        if self.n_subcarriers == 0 || self.n_taps == 0 {
            return bad("subcarrier and tap counts must be positive".into());
        }
        if self.n_taps > self.n_subcarriers {
            return bad(format!(
                "{} taps exceed {} subcarriers",
                self.n_taps, self.n_subcarriers
            ));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return bad(format!("decay must be finite and nonnegative, got {}", self.decay));
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return bad(format!("noise variance must be positive, got {}", self.noise_variance));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub taps: Vec<Complex64>,
    pub gains: Vec<Complex64>,
    /// `|H_i|^2 / noise_variance`, per watt.
    pub cnr: Vec<f64>,
}

impl ChannelRealization {
    /// Draws realization number `trial` for `params`.
    pub fn generate(params: &ChannelParams, trial: u64) -> Result<Self, ChannelError> {
        params.validate()?;
        let taps = generate_taps(params, trial);
        Ok(Self::from_taps(taps, params.n_subcarriers, params.noise_variance))
    }

    pub fn from_taps(taps: Vec<Complex64>, n_subcarriers: usize, noise_variance: f64) -> Self {
        let gains = frequency_response(&taps, n_subcarriers);
        let cnr = cnr(&gains, noise_variance);
        Self { taps, gains, cnr }
    }

    /// A realization known only through its gains (taps left empty).
    pub fn from_gains(gains: Vec<Complex64>, noise_variance: f64) -> Self {
        let cnr = cnr(&gains, noise_variance);
        Self {
            taps: Vec::new(),
            gains,
            cnr,
        }
    }

    pub fn n_subcarriers(&self) -> usize {
        self.gains.len()
    }
}

/// Tap variance scale making the profile sum to one.
pub fn normalization_constant(n_taps: usize, decay: f64) -> f64 {
    if decay == 0.0 {
        1.0 / n_taps as f64
    } else {
        -(-decay).exp_m1() / -(-decay * n_taps as f64).exp_m1()
    }
}

pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Circularly symmetric complex Gaussian taps with `E|h(n)|^2 = s e^{-n decay}`.
pub fn generate_taps(params: &ChannelParams, trial: u64) -> Vec<Complex64> {
    let mut rng = trial_rng(params.seed, trial);
    let s = normalization_constant(params.n_taps, params.decay);
    (0..params.n_taps)
        .map(|n| {
            let sd = (0.5 * s * (-(n as f64) * params.decay).exp()).sqrt();
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(sd * re, sd * im)
        })
        .collect()
}

/// `H_i = sum_n taps[n] e^{-j 2 pi n i / N}` by direct summation.
pub fn frequency_response(taps: &[Complex64], n_subcarriers: usize) -> Vec<Complex64> {
    let n = n_subcarriers as f64;
    (0..n_subcarriers)
        .map(|i| {
            taps.iter()
                .enumerate()
                .map(|(k, &h)| {
                    // reduce the phase index modulo N before scaling
                    let idx = (k * i) % n_subcarriers;
                    h * Complex64::from_polar(1.0, -2.0 * PI * idx as f64 / n)
                })
                .sum()
        })
        .collect()
}

pub fn cnr(gains: &[Complex64], noise_variance: f64) -> Vec<f64> {
    gains.iter().map(|g| g.norm_sqr() / noise_variance).collect()
}

/// Writes `trial,i,re,im,cnr` rows for each realization.
pub fn write_dump<W: Write>(
    mut w: W,
    realizations: &[(u64, &ChannelRealization)],
) -> io::Result<()> {
    writeln!(w, "trial,i,re,im,cnr")?;
    for (trial, r) in realizations {
        for (i, (g, c)) in r.gains.iter().zip(&r.cnr).enumerate() {
            writeln!(w, "{trial},{i},{:.17e},{:.17e},{:.17e}", g.re, g.im, c)?;
        }
    }
    Ok(())
}

/// Reads the first realization of a dump written by [`write_dump`],
/// recomputing CNRs from the gains and `noise_variance`.
pub fn read_dump<R: BufRead>(r: R, noise_variance: f64) -> Result<ChannelRealization, ChannelError> {
    let mut gains = Vec::new();
    let mut first_trial = None;
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("trial") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(ChannelError::Parse {
                line: ln + 1,
                msg: "expected at least 4 columns".into(),
            });
        }
        let num = |s: &str| {
            s.parse::<f64>().map_err(|e| ChannelError::Parse {
                line: ln + 1,
                msg: format!("{s:?}: {e}"),
            })
        };
        let trial = fields[0].to_string();
        match &first_trial {
            None => first_trial = Some(trial),
            Some(t) if *t != trial => break,
            _ => {}
        }
        gains.push(Complex64::new(num(fields[2])?, num(fields[3])?));
    }
    if gains.is_empty() {
        return Err(ChannelError::Parse {
            line: 0,
            msg: "no channel rows".into(),
        });
    }
    Ok(ChannelRealization::from_gains(gains, noise_variance))
}
