//! Link budget and the deterministic per-block formulas shared by the solvers.
//!
//! Conventions: the channel gain `h` has unit variance, so `power` already
//! includes path loss. Energy conversion efficiency is fixed to one, which
//! makes `q0` the power that must reach the harvester before conversion loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonadaptive::feasible_range;

/// Slack allowed when a ratio computed from other floats is checked against a bound.
pub(crate) const RATIO_SLACK: f64 = 1e-12;

/// Transmit power, receiver noise, block structure and harvesting target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    power: f64,
    noise_var: f64,
    lp: u32,
    ld: u32,
    q0: f64,
}

impl SystemConfig {
    pub fn new(power: f64, noise_var: f64, lp: u32, ld: u32, q0: f64) -> Result<Self> {
        if !(power.is_finite() && power > 0.0) {
            return Err(Error::domain("power", power, "finite and > 0"));
        }
        if !(noise_var.is_finite() && noise_var > 0.0) {
            return Err(Error::domain("noise_var", noise_var, "finite and > 0"));
        }
        if lp < 1 || ld < 1 {
            return Err(Error::InvalidConfig(format!(
                "pilot and data lengths must both be at least 1 (lp = {lp}, ld = {ld})"
            )));
        }
        if !(0.0..=power).contains(&q0) {
            return Err(Error::InvalidConfig(format!(
                "harvesting target q0 = {q0} must lie in [0, P = {power}]"
            )));
        }
        Ok(Self {
            power,
            noise_var,
            lp,
            ld,
            q0,
        })
    }

    /// Builds a configuration whose harvesting target is `q0_frac * power`.
    pub fn with_q0_frac(
        power: f64,
        noise_var: f64,
        lp: u32,
        ld: u32,
        q0_frac: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&q0_frac) {
            return Err(Error::InvalidConfig(format!(
                "q0 fraction {q0_frac} must lie in [0, 1]"
            )));
        }
        // Keep q0 == power exactly at the upper endpoint.
        let q0 = if q0_frac == 1.0 {
            power
        } else {
            q0_frac * power
        };
        Self::new(power, noise_var, lp, ld, q0)
    }

    /// Same link with a different harvesting target.
    pub fn with_q0(&self, q0: f64) -> Result<Self> {
        Self::new(self.power, self.noise_var, self.lp, self.ld, q0)
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn lp(&self) -> u32 {
        self.lp
    }

    pub fn ld(&self) -> u32 {
        self.ld
    }

    pub fn q0(&self) -> f64 {
        self.q0
    }

    pub fn q0_frac(&self) -> f64 {
        self.q0 / self.power
    }

    /// `P / sigma_n^2`.
    pub fn snr_scale(&self) -> f64 {
        self.power / self.noise_var
    }

    pub(crate) fn lp_f(&self) -> f64 {
        f64::from(self.lp)
    }

    pub(crate) fn ld_f(&self) -> f64 {
        f64::from(self.ld)
    }

    pub(crate) fn block_len_f(&self) -> f64 {
        f64::from(self.lp) + f64::from(self.ld)
    }
}

/// Statistics of the MMSE channel estimate for a given pilot splitting ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimationModel {
    pub rho_p: f64,
    /// Variance of the estimation error `h - h_hat`.
    pub sigma_e2: f64,
    /// Variance of the estimate `h_hat`; always `1 - sigma_e2`.
    pub est_var: f64,
}

/// Splitting ratios for the training and data phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPair {
    pub rho_p: f64,
    pub rho_d: f64,
}

impl SplitPair {
    pub fn new(rho_p: f64, rho_d: f64) -> Result<Self> {
        check_ratio("rho_p", rho_p)?;
        check_ratio("rho_d", rho_d)?;
        Ok(Self { rho_p, rho_d })
    }
}

pub(crate) fn check_ratio(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::domain(name, value, "[0, 1]"))
    }
}

/// MMSE error variance after `lp` pilots received with splitting ratio `rho_p`.
pub fn estimation_error_variance(cfg: &SystemConfig, rho_p: f64) -> Result<EstimationModel> {
    check_ratio("rho_p", rho_p)?;
    let sigma_e2 = error_variance(cfg, rho_p);
    Ok(EstimationModel {
        rho_p,
        sigma_e2,
        est_var: 1.0 - sigma_e2,
    })
}

pub(crate) fn error_variance(cfg: &SystemConfig, rho_p: f64) -> f64 {
    cfg.noise_var / (cfg.noise_var + rho_p * cfg.power * cfg.lp_f())
}

/// SNR seen by the detector once estimation error is treated as extra noise.
///
/// The capacity lower bound for fixed ratios is `rayleigh_capacity` of this value.
pub fn effective_snr(cfg: &SystemConfig, split: SplitPair) -> f64 {
    let sigma_e2 = error_variance(cfg, split.rho_p);
    let signal = split.rho_d * cfg.power * (1.0 - sigma_e2);
    signal / (cfg.noise_var + split.rho_d * cfg.power * sigma_e2)
}

/// Average harvested power per symbol when both ratios are held fixed.
pub fn harvested_power_nonadaptive(cfg: &SystemConfig, split: SplitPair) -> f64 {
    let training = (1.0 - split.rho_p) * cfg.power * cfg.lp_f();
    let data = (1.0 - split.rho_d) * cfg.power * cfg.ld_f();
    (training + data) / cfg.block_len_f()
}

/// Data-phase ratio that meets the harvesting target with equality.
///
/// Not clamped: values outside `[0, 1]` mean `rho_p` is infeasible.
pub fn rho_d_from_rho_p(cfg: &SystemConfig, rho_p: f64) -> f64 {
    1.0 - cfg.q0 * cfg.block_len_f() / (cfg.power * cfg.ld_f())
        + (1.0 - rho_p) * cfg.lp_f() / cfg.ld_f()
}

/// Share of the data-phase energy that must be harvested, normalized to `[0, 1]`.
///
/// Zero means the training phase alone meets `q0`; one means every data
/// symbol must go entirely to the harvester.
pub fn xi_from_rho_p(cfg: &SystemConfig, rho_p: f64) -> Result<f64> {
    let range = feasible_range(cfg);
    if rho_p < range.lower - RATIO_SLACK || rho_p > range.upper + RATIO_SLACK {
        return Err(Error::domain(
            "rho_p",
            rho_p,
            "feasible pilot range [rho_p_lb, rho_p_ub]",
        ));
    }
    Ok(xi_unchecked(cfg, rho_p).clamp(0.0, 1.0))
}

pub(crate) fn xi_unchecked(cfg: &SystemConfig, rho_p: f64) -> f64 {
    (cfg.q0 * cfg.block_len_f() - (1.0 - rho_p) * cfg.power * cfg.lp_f()) / (cfg.power * cfg.ld_f())
}
