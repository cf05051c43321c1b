//! Uniform-power greedy bit loader used as the comparison scheme.
//!
//! Power is spread evenly over every subcarrier; bits are then added one
//! constellation step at a time, always on the subcarrier whose promotion
//! keeps the bit-weighted average BER lowest, until no promotion keeps the
//! average within the threshold.

use thiserror::Error;

use crate::linkmodel::{self, Allocation, LinkError};
use crate::loader::LoadingResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("total power must be positive and finite, got {0}")]
    Power(f64),
    #[error("BER threshold must lie in (0, 1), got {0}")]
    BerThreshold(f64),
    #[error("bit set must be strictly ascending, start at 0, and have no level below 2 other than 0")]
    BitSet,
    #[error(transparent)]
    Link(#[from] LinkError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    /// Watts, spread uniformly over all subcarriers.
    pub total_power: f64,
    pub ber_threshold: f64,
    pub bit_set: Vec<u32>,
}

impl BaselineConfig {
    pub const DEFAULT_BIT_SET: [u32; 8] = [0, 2, 3, 4, 5, 6, 7, 8];

    pub fn new(total_power: f64, ber_threshold: f64) -> Self {
        Self {
            total_power,
            ber_threshold,
            bit_set: Self::DEFAULT_BIT_SET.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.total_power > 0.0 && self.total_power.is_finite()) {
            return Err(BaselineError::Power(self.total_power));
        }
        if !(self.ber_threshold > 0.0 && self.ber_threshold < 1.0) {
            return Err(BaselineError::BerThreshold(self.ber_threshold));
        }
        let ascending = self.bit_set.windows(2).all(|w| w[0] < w[1]);
        if self.bit_set.first() != Some(&0) || !ascending || self.bit_set.get(1).is_some_and(|&b| b < 2) {
            return Err(BaselineError::BitSet);
        }
        Ok(())
    }
}

/// Greedy incremental loading at uniform power. Ties go to the lowest index.
pub fn greedy_load(cnr: &[f64], config: &BaselineConfig) -> Result<Allocation, BaselineError> {
    config.validate()?;
    let n = cnr.len();
    if n == 0 {
        return Ok(Allocation::empty(0));
    }
    let power = config.total_power / n as f64;
    let levels = &config.bit_set;
    let mut level = vec![0usize; n];
    let mut ber = vec![0.0; n];
    // bit-weighted BER sum and bit count over loaded subcarriers
    let (mut weighted, mut bits) = (0.0, 0.0);
    loop {
        let mut best: Option<(f64, usize, f64)> = None;
        for i in 0..n {
            let Some(&next) = levels.get(level[i] + 1) else {
                continue;
            };
            let (b_old, b_new) = (levels[level[i]] as f64, next as f64);
            let e_new = linkmodel::ber_subcarrier(power, b_new, cnr[i])?;
            let avg = (weighted - b_old * ber[i] + b_new * e_new) / (bits - b_old + b_new);
            if best.is_none_or(|(a, _, _)| avg < a) {
                best = Some((avg, i, e_new));
            }
        }
        match best {
            Some((avg, i, e_new)) if avg <= config.ber_threshold => {
                let (b_old, b_new) = (levels[level[i]] as f64, levels[level[i] + 1] as f64);
                weighted += b_new * e_new - b_old * ber[i];
                bits += b_new - b_old;
                ber[i] = e_new;
                level[i] += 1;
            }
            _ => break,
        }
    }
    Ok(Allocation {
        bits: level.iter().map(|&l| levels[l] as f64).collect(),
        powers: vec![power; n],
    })
}

/// Per-trial comparison against the proposed allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    /// Mean post-allocation SNR of the proposed allocation, in dB.
    pub snr_avg_db: f64,
    pub thr_proposed: f64,
    pub thr_baseline: f64,
    /// Total power given to both schemes, in watts.
    pub power: f64,
}

pub const COMPARISON_CSV_HEADER: &str = "trial,snr_avg_db,thr_proposed,thr_baseline,power_W";

impl Comparison {
    pub fn csv_row(&self, trial: u64) -> String {
        format!(
            "{trial},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.snr_avg_db, self.thr_proposed, self.thr_baseline, self.power
        )
    }
}

/// Runs the baseline with the proposed scheme's total power. Returns `None`
/// when the proposed run did not converge or spent no power.
pub fn compare(
    cnr: &[f64],
    proposed: &LoadingResult,
    ber_threshold: f64,
) -> Result<Option<Comparison>, BaselineError> {
    if !proposed.converged || !(proposed.total_power > 0.0) {
        return Ok(None);
    }
    let config = BaselineConfig::new(proposed.total_power, ber_threshold);
    let base = greedy_load(cnr, &config)?;
    Ok(Some(Comparison {
        snr_avg_db: 10.0 * linkmodel::mean_snr(&proposed.final_alloc, cnr).log10(),
        thr_proposed: proposed.throughput,
        thr_baseline: base.throughput(),
        power: base.total_power(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn avg_ber(alloc: &Allocation, cnr: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..cnr.len() {
            let b = alloc.bits[i];
            if b > 0.0 {
                let e = 0.2 * (-1.6 * alloc.powers[i] * cnr[i] / (b.exp2() - 1.0)).exp();
                num += b * e;
                den += b;
            }
        }
        if den > 0.0 { num / den } else { 0.0 }
    }

    #[test]
    fn single_strong_subcarrier_reaches_top_level() {
        let a = greedy_load(&[1e12], &BaselineConfig::new(1e-3, 1e-4)).unwrap();
        assert_eq!(a.bits, vec![8.0]);
        assert_eq!(a.powers, vec![1e-3]);
    }

    #[test]
    fn weak_subcarrier_stays_empty() {
        // per-subcarrier SNR 50 on the strong one; the weak one sits at BER 0.2
        // for any loading and would break the average
        let cnr = [1e6, 1e-6];
        let a = greedy_load(&cnr, &BaselineConfig::new(1e-4, 1e-4)).unwrap();
        assert_eq!(a.bits[1], 0.0);
        assert!(a.bits[0] >= 2.0);
        // hand evaluation of the strong subcarrier alone: promote while 0.2 exp(-1.6 * 50 / m) <= 1e-4
        let top = [2u32, 3, 4, 5, 6, 7, 8]
            .iter()
            .rev()
            .find(|&&b| 0.2 * (-80.0 / ((b as f64).exp2() - 1.0)).exp() <= 1e-4);
        assert_eq!(a.bits[0], top.map_or(0.0, |&b| b as f64));
    }

    #[test]
    fn dead_channel_loads_nothing() {
        let a = greedy_load(&[0.0, 0.0, 0.0], &BaselineConfig::new(1e-3, 1e-4)).unwrap();
        assert_eq!(a.throughput(), 0.0);
        assert_eq!(a.powers, vec![1e-3 / 3.0; 3]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let a = greedy_load(&[2e6, 2e6], &BaselineConfig::new(2e-5, 1e-4)).unwrap();
        assert!(a.bits[0] >= a.bits[1]);
        assert!(a.bits[0] - a.bits[1] <= 1.0);
    }

    #[test]
    fn config_is_validated() {
        let mut c = BaselineConfig::new(1e-3, 1e-4);
        c.bit_set = vec![0, 1, 2];
        assert_eq!(greedy_load(&[1.0], &c), Err(BaselineError::BitSet));
        c.bit_set = vec![2, 3];
        assert_eq!(c.validate(), Err(BaselineError::BitSet));
        assert_eq!(BaselineConfig::new(0.0, 1e-4).validate(), Err(BaselineError::Power(0.0)));
        assert_eq!(BaselineConfig::new(1.0, 1.0).validate(), Err(BaselineError::BerThreshold(1.0)));
    }

    proptest! {
        #[test]
        fn output_respects_threshold_and_uniformity(
            log_cnr in proptest::collection::vec(3.0f64..9.0, 1..24),
            log_power in -7.0f64..-3.0,
        ) {
            let cnr: Vec<f64> = log_cnr.iter().map(|v| 10f64.powf(*v)).collect();
            let total = 10f64.powf(log_power);
            let a = greedy_load(&cnr, &BaselineConfig::new(total, 1e-4)).unwrap();
            prop_assert!(avg_ber(&a, &cnr) <= 1e-4);
            prop_assert!(a.powers.iter().all(|&p| p == total / cnr.len() as f64));
            prop_assert!((a.total_power() - total).abs() <= 1e-12 * total);
            prop_assert!(a.bits.iter().all(|&b| BaselineConfig::DEFAULT_BIT_SET.contains(&(b as u32))));
        }

        #[test]
        fn throughput_is_permutation_invariant(
            log_cnr in proptest::collection::vec(3.0f64..9.0, 2..16),
            rot in 0usize..16,
        ) {
            let cnr: Vec<f64> = log_cnr.iter().map(|v| 10f64.powf(*v)).collect();
            let mut perm = cnr.clone();
            perm.rotate_left(rot % cnr.len());
            perm.reverse();
            let cfg = BaselineConfig::new(1e-5, 1e-4);
            prop_assert_eq!(
                greedy_load(&cnr, &cfg).unwrap().throughput(),
                greedy_load(&perm, &cfg).unwrap().throughput()
            );
        }
    }
}
