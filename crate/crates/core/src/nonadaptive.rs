//! Fixed splitting ratios for every block.
//!
//! With both ratios constant the capacity depends on them only through the
//! effective SNR, and the harvesting equality pins `rho_d` to `rho_p`. What is
//! left is a one-dimensional maximization over the feasible pilot range,
//! solved by clamping the single nonnegative stationary point.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{effective_snr, rho_d_from_rho_p, SplitPair, SystemConfig};
use crate::specfun::rayleigh_capacity;

/// Pilot ratios for which the data ratio implied by the harvesting equality lies in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibleRhoPRange {
    pub lower: f64,
    pub upper: f64,
}

impl FeasibleRhoPRange {
    pub fn contains(&self, rho_p: f64) -> bool {
        (self.lower..=self.upper).contains(&rho_p)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonAdaptiveSolution {
    pub split: SplitPair,
    /// Unconstrained stationary point of the SNR in `rho_p`.
    pub root: f64,
    pub kappa: f64,
    pub snr: f64,
    /// Nats per channel use.
    pub capacity: f64,
}

pub fn feasible_range(cfg: &SystemConfig) -> FeasibleRhoPRange {
    let lp = cfg.lp_f();
    let total = cfg.block_len_f();
    let lower = (1.0 - cfg.q0() * total / (cfg.power() * lp)).max(0.0);
    // 1 - q0 (lp + ld) / (P lp) + ld / lp, factored so that q0 = P gives exactly 0
    let upper = (total / lp * (1.0 - cfg.q0_frac())).min(1.0);
    FeasibleRhoPRange { lower, upper }
}

/// `kappa = (P - q0)(lp + ld) / sigma_n^2`.
pub fn kappa(cfg: &SystemConfig) -> f64 {
    (cfg.power() - cfg.q0()) * cfg.block_len_f() / cfg.noise_var()
}

/// The nonnegative root of `d SNR / d rho_p` along the harvesting equality.
pub fn stationary_root(cfg: &SystemConfig) -> f64 {
    let lp = cfg.lp_f();
    let ld = cfg.ld_f();
    if cfg.ld() == 1 {
        return (lp + 1.0) / (2.0 * lp) * (1.0 - cfg.q0_frac());
    }
    let k = kappa(cfg);
    let numerator = ld + k - (ld * (k + ld) * (k + 1.0)).sqrt();
    numerator / (lp * (1.0 - ld) * cfg.snr_scale())
}

/// Limit of [`stationary_root`] as `P / sigma_n^2` grows with `q0 = c P`.
pub fn high_snr_root(lp: u32, ld: u32, c: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::domain("c", c, "(0, 1)"));
    }
    if lp < 1 || ld < 1 {
        return Err(Error::InvalidConfig(format!(
            "pilot and data lengths must both be at least 1 (lp = {lp}, ld = {ld})"
        )));
    }
    let (lp, ld) = (f64::from(lp), f64::from(ld));
    Ok((lp + ld) / (lp * (1.0 + ld.sqrt())) * (1.0 - c))
}

/// Optimal fixed ratios under the harvesting equality.
pub fn solve_p1(cfg: &SystemConfig) -> NonAdaptiveSolution {
    let range = feasible_range(cfg);
    let root = stationary_root(cfg);
    let rho_p = if root < range.lower {
        range.lower
    } else if root > range.upper {
        range.upper
    } else {
        root
    };
    let rho_d = rho_d_from_rho_p(cfg, rho_p).clamp(0.0, 1.0);
    let split = SplitPair { rho_p, rho_d };
    let snr = effective_snr(cfg, split);
    NonAdaptiveSolution {
        split,
        root,
        kappa: kappa(cfg),
        snr,
        capacity: rayleigh_capacity(snr),
    }
}

/// Baseline that uses the same ratio `1 - q0/P` in both phases.
pub fn fixed_split(cfg: &SystemConfig) -> SplitPair {
    let rho = 1.0 - cfg.q0_frac();
    SplitPair {
        rho_p: rho,
        rho_d: rho,
    }
}

pub fn fixed_split_capacity(cfg: &SystemConfig) -> f64 {
    rayleigh_capacity(effective_snr(cfg, fixed_split(cfg)))
}

/// Brute-force check of [`solve_p1`]: scans the feasible pilot range at `step`
/// and returns the `(rho_p, snr)` with the largest effective SNR.
///
/// The upper end of the range is always evaluated; ties go to the smaller `rho_p`.
pub fn grid_oracle_p1(cfg: &SystemConfig, step: f64) -> Result<(f64, f64)> {
    if !(step > 0.0 && step <= 0.01) {
        return Err(Error::domain("step", step, "(0, 0.01]"));
    }
    let range = feasible_range(cfg);
    let snr_at = |rho_p: f64| {
        let rho_d = rho_d_from_rho_p(cfg, rho_p).clamp(0.0, 1.0);
        effective_snr(cfg, SplitPair { rho_p, rho_d })
    };
    let steps = (range.width() / step).floor() as usize;
    let mut best = (range.lower, snr_at(range.lower));
    let candidates = (1..=steps)
        .map(|k| range.lower + k as f64 * step)
        .filter(|&r| r < range.upper)
        .chain(std::iter::once(range.upper));
    for rho_p in candidates {
        let snr = snr_at(rho_p);
        if snr > best.1 {
            best = (rho_p, snr);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::model::harvested_power_nonadaptive;

    fn cfg(lp: u32, ld: u32, q0: f64) -> SystemConfig {
        SystemConfig::new(100.0, 1.0, lp, ld, q0).unwrap()
    }

    #[test]
    fn feasible_range_examples() {
        assert_eq!(
            feasible_range(&cfg(4, 96, 0.0)),
            FeasibleRhoPRange {
                lower: 1.0,
                upper: 1.0
            }
        );
        assert_eq!(
            feasible_range(&cfg(4, 96, 100.0)),
            FeasibleRhoPRange {
                lower: 0.0,
                upper: 0.0
            }
        );
        assert_eq!(
            feasible_range(&cfg(40, 60, 50.0)),
            FeasibleRhoPRange {
                lower: 0.0,
                upper: 1.0
            }
        );
    }

    #[test]
    fn stationary_root_examples() {
        let one = SystemConfig::new(100.0, 1.0, 99, 1, 50.0).unwrap();
        assert_relative_eq!(
            stationary_root(&one),
            100.0 / 198.0 * 0.5,
            max_relative = 1e-15
        );
        assert_relative_eq!(stationary_root(&one), 0.25253, epsilon = 1e-5);

        let c = cfg(4, 96, 55.0);
        assert_relative_eq!(kappa(&c), 4500.0, max_relative = 1e-15);
        assert_relative_eq!(stationary_root(&c), 1.0518, epsilon = 1e-4);

        let c = cfg(40, 60, 50.0);
        assert_relative_eq!(kappa(&c), 5000.0, max_relative = 1e-15);
        assert_relative_eq!(stationary_root(&c), 0.14367, epsilon = 1e-5);
    }

    #[test]
    fn solve_p1_examples() {
        let s = solve_p1(&cfg(4, 96, 0.0));
        assert_eq!((s.split.rho_p, s.split.rho_d), (1.0, 1.0));

        let s = solve_p1(&cfg(4, 96, 55.0));
        assert_eq!(s.split.rho_p, 1.0);
        assert!(s.root > 1.0);
        assert_relative_eq!(
            s.split.rho_d,
            1.0 - 55.0 * 100.0 / 9600.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(s.split.rho_d, 0.4271, epsilon = 1e-4);

        let s = solve_p1(&cfg(40, 60, 50.0));
        assert_relative_eq!(s.split.rho_p, 0.1437, epsilon = 1e-4);
        assert_relative_eq!(s.split.rho_d, 0.7375, epsilon = 1e-4);
        assert!(s.split.rho_p < s.split.rho_d);
        assert_relative_eq!(s.capacity, rayleigh_capacity(s.snr), max_relative = 1e-15);

        let s = solve_p1(&cfg(4, 96, 100.0));
        assert_eq!((s.split.rho_p, s.split.rho_d), (0.0, 0.0));
        assert_eq!(s.capacity, 0.0);
    }

    #[test]
    fn high_snr_root_examples() {
        assert_relative_eq!(high_snr_root(4, 96, 0.55).unwrap(), 1.0419, epsilon = 1e-4);
        assert_relative_eq!(
            high_snr_root(40, 60, 0.5).unwrap(),
            0.142_923,
            epsilon = 1e-6
        );
        for lp in [1, 7, 99] {
            let c = 0.3;
            assert_relative_eq!(
                high_snr_root(lp, 1, c).unwrap(),
                (f64::from(lp) + 1.0) / (2.0 * f64::from(lp)) * (1.0 - c),
                max_relative = 1e-15
            );
        }
        assert!(high_snr_root(4, 96, 0.0).is_err());
        assert!(high_snr_root(4, 96, 1.0).is_err());
    }

    #[test]
    fn high_snr_convergence() {
        for k in 6..=9 {
            let p = 10f64.powi(k);
            let c = SystemConfig::with_q0_frac(p, 1.0, 4, 96, 0.55).unwrap();
            let limit = high_snr_root(4, 96, 0.55).unwrap();
            assert!((stationary_root(&c) - limit).abs() / limit <= 1e-2);
        }
    }

    #[test]
    fn grid_oracle_examples() {
        assert_eq!(grid_oracle_p1(&cfg(4, 96, 0.0), 1e-4).unwrap().0, 1.0);
        let (r, _) = grid_oracle_p1(&cfg(40, 60, 50.0), 1e-4).unwrap();
        assert!((r - 0.1437).abs() <= 2e-4);
        let (r, _) = grid_oracle_p1(&cfg(4, 96, 55.0), 1e-4).unwrap();
        assert_eq!(r, 1.0);
        assert!(grid_oracle_p1(&cfg(4, 96, 55.0), 0.5).is_err());
    }

    #[test]
    fn optimum_meets_harvesting_target() {
        for lp in [1, 4, 40, 99] {
            for i in 0..=20 {
                let c =
                    SystemConfig::with_q0_frac(100.0, 1.0, lp, 100 - lp, i as f64 / 20.0).unwrap();
                let s = solve_p1(&c);
                assert!(
                    (harvested_power_nonadaptive(&c, s.split) - c.q0()).abs() <= 1e-9 * c.power()
                );
                assert!(s.capacity >= fixed_split_capacity(&c) - 1e-12);
            }
        }
    }
}
