//! M-QAM bit error rate model and allocation-level metrics.
//!
//! Per-subcarrier BER uses the exponential approximation
//! `BER = 0.2 * exp(-1.6 * P * C / (2^b - 1))`, where `C = |H|^2 / sigma_n^2`
//! is the channel-to-noise ratio. The approximation is tight for BER values
//! at or below `1e-3`; above that a warning is logged but the value is still
//! returned.

use thiserror::Error;

/// Leading constant of the BER approximation.
pub const BER_SCALE: f64 = 0.2;
/// Exponent constant of the BER approximation.
pub const BER_EXPONENT: f64 = 1.6;
/// Largest BER for which the approximation is considered valid.
pub const BER_VALIDITY_LIMIT: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("bits must be positive, got {0} (inactive subcarrier queried)")]
    NonPositiveBits(f64),
    #[error("channel-to-noise ratio is zero; no finite power reaches the target")]
    NulledSubcarrier,
    #[error("target BER {0} outside (0, 0.2)")]
    TargetOutOfRange(f64),
    #[error("allocation has no active subcarrier; average BER is undefined")]
    EmptyAllocation,
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("invalid link parameter: {0}")]
    InvalidParameter(String),
}

/// Per-subcarrier bits and powers.
///
/// Bits are real-valued while the optimizer iterates and integer-valued after
/// finalization. Powers are in watts unless stated otherwise by the caller.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Allocation {
    pub bits: Vec<f64>,
    pub powers: Vec<f64>,
}

impl Allocation {
    pub fn new(bits: Vec<f64>, powers: Vec<f64>) -> Result<Self, LinkError> {
        if bits.len() != powers.len() {
            return Err(LinkError::LengthMismatch {
                what: "powers",
                got: powers.len(),
                expected: bits.len(),
            });
        }
        Ok(Self { bits, powers })
    }

    /// All-zero allocation over `n` subcarriers.
    pub fn empty(n: usize) -> Self {
        Self {
            bits: vec![0.0; n],
            powers: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Total bits per OFDM symbol.
    pub fn throughput(&self) -> f64 {
        self.bits.iter().sum()
    }

    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b > 0.0).count()
    }
}

/// Link-level constraint and weighting parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    /// Average BER threshold.
    pub ber_threshold: f64,
    /// Total transmit power cap in watts; `f64::INFINITY` disables the cap.
    pub power_threshold: f64,
    /// Weight of the power term in the objective, in (0, 1).
    pub alpha: f64,
    /// Power unit (watts) in which the objective's power term is measured.
    pub power_unit: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            ber_threshold: 1e-4,
            power_threshold: f64::INFINITY,
            alpha: 0.5,
            power_unit: 1e-6,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), LinkError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(LinkError::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.ber_threshold > 0.0 && self.ber_threshold <= BER_VALIDITY_LIMIT) {
            return Err(LinkError::InvalidParameter(format!(
                "ber_threshold must lie in (0, {BER_VALIDITY_LIMIT}], got {}",
                self.ber_threshold
            )));
        }
        if !(self.power_threshold > 0.0) {
            return Err(LinkError::InvalidParameter(format!(
                "power_threshold must be positive, got {}",
                self.power_threshold
            )));
        }
        if !(self.power_unit > 0.0 && self.power_unit.is_finite()) {
            return Err(LinkError::InvalidParameter(format!(
                "power_unit must be positive and finite, got {}",
                self.power_unit
            )));
        }
        Ok(())
    }

    pub fn power_capped(&self) -> bool {
        self.power_threshold.is_finite()
    }
}

/// BER of one subcarrier carrying `bits` bits at `power` with channel-to-noise
/// ratio `cnr`.
pub fn ber_subcarrier(power: f64, bits: f64, cnr: f64) -> Result<f64, LinkError> {
    if !(bits > 0.0) {
        return Err(LinkError::NonPositiveBits(bits));
    }
    Ok(BER_SCALE * (-BER_EXPONENT * power * cnr / (bits.exp2() - 1.0)).exp())
}

/// Power at which a subcarrier with `bits` bits and ratio `cnr` reaches
/// exactly `target` BER. Closed-form inverse of [`ber_subcarrier`].
pub fn power_for_target_ber(bits: f64, cnr: f64, target: f64) -> Result<f64, LinkError> {
    if !(bits > 0.0) {
        return Err(LinkError::NonPositiveBits(bits));
    }
    if !(target > 0.0 && target < BER_SCALE) {
        return Err(LinkError::TargetOutOfRange(target));
    }
    if cnr <= 0.0 {
        return Err(LinkError::NulledSubcarrier);
    }
    Ok((bits.exp2() - 1.0) * (BER_SCALE / target).ln() / (BER_EXPONENT * cnr))
}

/// Bit-weighted mean BER over the active (`bits > 0`) subcarriers.
pub fn average_ber(alloc: &Allocation, cnr: &[f64]) -> Result<f64, LinkError> {
    if cnr.len() != alloc.len() {
        return Err(LinkError::LengthMismatch {
            what: "cnr",
            got: cnr.len(),
            expected: alloc.len(),
        });
    }
    let mut weighted = 0.0;
    let mut total_bits = 0.0;
    let mut worst: f64 = 0.0;
    for ((&b, &p), &c) in alloc.bits.iter().zip(&alloc.powers).zip(cnr) {
        if b > 0.0 {
            let ber = ber_subcarrier(p, b, c)?;
            worst = worst.max(ber);
            weighted += b * ber;
            total_bits += b;
        }
    }
    if total_bits == 0.0 {
        return Err(LinkError::EmptyAllocation);
    }
    if worst > BER_VALIDITY_LIMIT {
        log::warn!(
            "subcarrier BER {worst:.3e} exceeds {BER_VALIDITY_LIMIT:e}; the exponential model is loose there"
        );
    }
    Ok(weighted / total_bits)
}

/// Mean of `P_i * C_i` over all subcarriers, nulled ones included.
pub fn mean_snr(alloc: &Allocation, cnr: &[f64]) -> f64 {
    let sum: f64 = alloc.powers.iter().zip(cnr).map(|(p, c)| p * c).sum();
    sum / cnr.len() as f64
}

/// Weighted objective `alpha * sum(P) - (1 - alpha) * sum(b)`, with powers in
/// whatever unit the allocation carries.
pub fn objective(alloc: &Allocation, alpha: f64) -> f64 {
    alpha * alloc.total_power() - (1.0 - alpha) * alloc.throughput()
}
