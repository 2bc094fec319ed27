//! Data-phase splitting that follows the channel estimate of each block.
//!
//! The pilot ratio stays fixed (the channel is unknown before training), so
//! the design is nested. For a given `rho_p` the inner problem maximizes the
//! capacity over functions `rho_d(g)` of the estimated gain `g = |h_hat|^2`
//! subject to
//!
//! ```text
//! E{(1 - rho_d(g)) (g + sigma_e^2)} = xi
//! ```
//!
//! Dualizing the constraint decouples the problem per channel state. Each
//! state's stationarity condition is a quadratic in `rho_d` whose larger root,
//! clamped to `[0, 1]`, is optimal. The multiplier is found by bisection since
//! the constraint is nondecreasing in it. The outer problem over `rho_p` is a
//! coarse scan followed by golden-section refinement.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{estimation_error_variance, xi_from_rho_p, SystemConfig};
use crate::nonadaptive::feasible_range;
use crate::specfun::{rayleigh_capacity, PiecewiseQuadrature, QuadratureRule};

/// Distance from an endpoint below which `xi` is routed to a trivial policy.
const XI_EDGE: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    /// `xi = 0`: nothing to harvest in the data phase, `rho_d = 1` everywhere.
    AllDetect,
    /// `xi = 1`: the data phase goes entirely to the harvester.
    AllHarvest,
    /// `rho_p = 0`: the estimate is identically zero, so only the constant
    /// `rho_d = 1 - xi` meets the constraint and the capacity is zero.
    Uninformed { rho_d: f64 },
    /// Interior case, parameterized by the Lagrange multiplier.
    Multiplier { lambda: f64 },
}

/// Optimal data-phase policy for one pilot ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdaptivePolicy {
    pub cfg: SystemConfig,
    pub rho_p: f64,
    pub sigma_e2: f64,
    pub xi: f64,
    pub kind: PolicyKind,
}

impl AdaptivePolicy {
    pub fn lambda(&self) -> Option<f64> {
        match self.kind {
            PolicyKind::Multiplier { lambda } => Some(lambda),
            _ => None,
        }
    }

    /// True for the `xi = 0` and `xi = 1` endpoint policies.
    pub fn is_trivial(&self) -> bool {
        matches!(self.kind, PolicyKind::AllDetect | PolicyKind::AllHarvest)
    }

    pub fn rho_d(&self, g: f64) -> f64 {
        match self.kind {
            PolicyKind::AllDetect => 1.0,
            PolicyKind::AllHarvest => 0.0,
            PolicyKind::Uninformed { rho_d } => rho_d,
            PolicyKind::Multiplier { lambda } => {
                rho_d_star_unchecked(g, self.sigma_e2, &self.cfg, lambda)
            }
        }
    }

    /// Variance of the channel estimate; the mean of `g`.
    pub fn est_var(&self) -> f64 {
        1.0 - self.sigma_e2
    }

    /// Points where `rho_d(g)` has a kink.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.kind {
            PolicyKind::Multiplier { lambda } => {
                policy_breakpoints(self.sigma_e2, &self.cfg, lambda)
            }
            _ => Vec::new(),
        }
    }

    /// Ergodic capacity lower bound in nats. Constant policies use the closed
    /// form; the multiplier policy is integrated over the law of `g`.
    pub fn capacity(&self, quad: &PiecewiseQuadrature) -> Result<f64> {
        let cfg = &self.cfg;
        let constant = |rho: f64| {
            let snr = rho * cfg.power() * self.est_var()
                / (cfg.noise_var() + rho * cfg.power() * self.sigma_e2);
            rayleigh_capacity(snr)
        };
        match self.kind {
            PolicyKind::AllDetect => Ok(constant(1.0)),
            PolicyKind::AllHarvest | PolicyKind::Uninformed { .. } => Ok(0.0),
            PolicyKind::Multiplier { lambda } => {
                let q = quad.rule(self.est_var(), &self.breakpoints())?;
                Ok(q.expect(|g| {
                    let rho = rho_d_star_unchecked(g, self.sigma_e2, cfg, lambda);
                    capacity_integrand(g, self.sigma_e2, cfg, rho)
                }))
            }
        }
    }

    /// Quadrature value of `E{(1 - rho_d(g)) (g + sigma_e^2)}`.
    pub fn constraint(&self, quad: &PiecewiseQuadrature) -> Result<f64> {
        match self.kind {
            PolicyKind::AllDetect => Ok(0.0),
            PolicyKind::AllHarvest => Ok(1.0),
            PolicyKind::Uninformed { rho_d } => Ok(1.0 - rho_d),
            PolicyKind::Multiplier { lambda } => {
                let q = quad.rule(self.est_var(), &self.breakpoints())?;
                Ok(constraint_value(self.sigma_e2, &self.cfg, lambda, &q))
            }
        }
    }

    /// `(g, rho_d(g))` pairs for export.
    pub fn tabulate(&self, grid: &[f64]) -> Vec<(f64, f64)> {
        grid.iter().map(|&g| (g, self.rho_d(g))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveSolution {
    pub policy: AdaptivePolicy,
    pub capacity: f64,
    /// Every `(rho_p, capacity)` evaluated by the outer search, in evaluation order.
    pub rho_p_search_trace: Vec<(f64, f64)>,
}

/// Outer-search and bisection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchSettings {
    /// Evenly spaced pilot ratios scanned before refinement.
    pub coarse_points: usize,
    /// Width at which golden-section refinement stops.
    pub refine_tol: f64,
    /// Absolute residual accepted on the harvesting constraint.
    pub bisection_tol: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            coarse_points: 101,
            refine_tol: 1e-7,
            bisection_tol: 1e-8,
        }
    }
}

pub(crate) fn capacity_integrand(g: f64, sigma_e2: f64, cfg: &SystemConfig, rho: f64) -> f64 {
    let p = cfg.power();
    (rho * p * g / (cfg.noise_var() + rho * p * sigma_e2)).ln_1p()
}

/// Coefficients `(a, b, c)` of the per-state stationarity quadratic
/// `a rho^2 + b rho + c = 0`.
fn quadratic(g: f64, sigma_e2: f64, cfg: &SystemConfig, lambda: f64) -> (f64, f64, f64) {
    let nu = g + sigma_e2;
    let a = cfg.power() * sigma_e2 * nu / cfg.noise_var();
    let b = nu + sigma_e2;
    let c = cfg.noise_var() / cfg.power() - g / (nu * lambda);
    (a, b, c)
}

/// The `+` root of the stationarity quadratic, before clamping.
pub fn rho_d_root(g: f64, sigma_e2: f64, cfg: &SystemConfig, lambda: f64) -> f64 {
    let (a, b, c) = quadratic(g, sigma_e2, cfg, lambda);
    // Analytically nonnegative for lambda > 0; rounding can push it below.
    let disc = (b * b - 4.0 * a * c).max(0.0);
    // (-b + sqrt(disc)) / 2a rewritten to avoid cancellation when |ac| << b^2
    -2.0 * c / (b + disc.sqrt())
}

fn rho_d_star_unchecked(g: f64, sigma_e2: f64, cfg: &SystemConfig, lambda: f64) -> f64 {
    rho_d_root(g, sigma_e2, cfg, lambda).clamp(0.0, 1.0)
}

/// Gains at which the unclamped root crosses 0 or 1.
///
/// The root is zero where the constant term of the quadratic vanishes and
/// reaches one where `a + b + c = 0`, which after multiplying by
/// `nu = g + sigma_e^2` is a quadratic in `g`.
pub fn policy_breakpoints(sigma_e2: f64, cfg: &SystemConfig, lambda: f64) -> Vec<f64> {
    let (p, nv) = (cfg.power(), cfg.noise_var());
    let mut out = Vec::with_capacity(3);
    if nv * lambda < p {
        out.push(nv * lambda * sigma_e2 / (p - nv * lambda));
    }
    let a2 = p * sigma_e2 / nv + 1.0;
    let b1 = sigma_e2 + nv / p;
    let qa = a2;
    let qb = 2.0 * a2 * sigma_e2 + b1 - 1.0 / lambda;
    let qc = a2 * sigma_e2 * sigma_e2 + b1 * sigma_e2;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc > 0.0 {
        let s = disc.sqrt();
        let q = -0.5 * (qb + qb.signum() * s);
        for r in [q / qa, qc / q] {
            if r.is_finite() && r > 0.0 {
                out.push(r);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Optimal data ratio for estimated gain `g` under imperfect estimation.
pub fn rho_d_star(g: f64, sigma_e2: f64, cfg: &SystemConfig, lambda: f64) -> Result<f64> {
    if !(g >= 0.0) {
        return Err(Error::domain("g", g, ">= 0"));
    }
    if !(sigma_e2 > 0.0 && sigma_e2 < 1.0) {
        return Err(Error::domain(
            "sigma_e2",
            sigma_e2,
            "(0, 1); use rho_d_star_perfect for sigma_e2 = 0",
        ));
    }
    check_lambda(cfg, lambda)?;
    Ok(rho_d_star_unchecked(g, sigma_e2, cfg, lambda))
}

fn check_lambda(cfg: &SystemConfig, lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < cfg.snr_scale() {
        Ok(())
    } else {
        Err(Error::domain("lambda", lambda, "(0, P / sigma_n^2)"))
    }
}

/// Residual of the stationarity quadratic at `rho`.
pub fn kkt_quadratic_residual(
    g: f64,
    sigma_e2: f64,
    cfg: &SystemConfig,
    lambda: f64,
    rho: f64,
) -> f64 {
    let (a, b, c) = quadratic(g, sigma_e2, cfg, lambda);
    (a * rho + b) * rho + c
}

/// Per-state Lagrangian `ln(1 + SNR(rho)) + lambda (1 - rho)(g + sigma_e^2)`.
pub fn per_state_lagrangian(
    g: f64,
    sigma_e2: f64,
    cfg: &SystemConfig,
    lambda: f64,
    rho: f64,
) -> f64 {
    capacity_integrand(g, sigma_e2, cfg, rho) + lambda * (1.0 - rho) * (g + sigma_e2)
}

/// `sum_i w_i (1 - rho_d*(x_i)) (x_i + sigma_e^2)`.
///
/// `quad` must describe the distribution of `g`, i.e. have mean `1 - sigma_e2`.
pub fn constraint_value(
    sigma_e2: f64,
    cfg: &SystemConfig,
    lambda: f64,
    quad: &QuadratureRule,
) -> f64 {
    quad.expect(|g| (1.0 - rho_d_star_unchecked(g, sigma_e2, cfg, lambda)) * (g + sigma_e2))
}

/// Bisection on an increasing function over `(lo, hi)` until `|f - target| <= tol`.
fn bisect_increasing<F>(f: F, mut lo: f64, mut hi: f64, target: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let (value_lo, value_hi) = (f(lo)?, f(hi)?);
    if !(value_lo <= target + tol && value_hi >= target - tol) {
        return Err(Error::Bracket {
            lo,
            hi,
            target,
            value_lo,
            value_hi,
        });
    }
    if (value_lo - target).abs() <= tol {
        return Ok(lo);
    }
    if (value_hi - target).abs() <= tol {
        return Ok(hi);
    }
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let value = f(mid)?;
        residual = value - target;
        if residual.abs() <= tol {
            return Ok(mid);
        }
        if residual < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_BISECTIONS,
        residual: residual.abs(),
        tol,
    })
}

fn multiplier_bracket(cfg: &SystemConfig) -> (f64, f64) {
    let upper = cfg.snr_scale();
    let eps = 1e-12 * upper;
    (eps, upper - eps)
}

fn check_xi_tol(xi: f64, tol: f64) -> Result<()> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::domain("xi", xi, "(0, 1)"));
    }
    if !(tol > 0.0) {
        return Err(Error::domain("tol", tol, "> 0"));
    }
    Ok(())
}

/// Multiplier whose policy harvests exactly `xi` of the data-phase energy.
pub fn bisect_lambda(
    cfg: &SystemConfig,
    sigma_e2: f64,
    xi: f64,
    quad: &PiecewiseQuadrature,
    tol: f64,
) -> Result<f64> {
    check_xi_tol(xi, tol)?;
    if !(sigma_e2 > 0.0 && sigma_e2 < 1.0) {
        return Err(Error::domain("sigma_e2", sigma_e2, "(0, 1)"));
    }
    let mean = 1.0 - sigma_e2;
    let (lo, hi) = multiplier_bracket(cfg);
    bisect_increasing(
        |lambda| {
            let q = quad.rule(mean, &policy_breakpoints(sigma_e2, cfg, lambda))?;
            Ok(constraint_value(sigma_e2, cfg, lambda, &q))
        },
        lo,
        hi,
        xi,
        tol,
    )
}

/// Solves the inner problem for a fixed pilot ratio.
pub fn solve_p21(
    cfg: &SystemConfig,
    rho_p: f64,
    quad: &PiecewiseQuadrature,
    tol: f64,
) -> Result<AdaptivePolicy> {
    let xi = xi_from_rho_p(cfg, rho_p)?;
    let sigma_e2 = estimation_error_variance(cfg, rho_p)?.sigma_e2;
    let kind = if xi <= XI_EDGE {
        PolicyKind::AllDetect
    } else if xi >= 1.0 - XI_EDGE {
        PolicyKind::AllHarvest
    } else if sigma_e2 >= 1.0 {
        PolicyKind::Uninformed { rho_d: 1.0 - xi }
    } else {
        PolicyKind::Multiplier {
            lambda: bisect_lambda(cfg, sigma_e2, xi, quad, tol)?,
        }
    };
    Ok(AdaptivePolicy {
        cfg: *cfg,
        rho_p,
        sigma_e2,
        xi,
        kind,
    })
}

fn evaluate(
    cfg: &SystemConfig,
    rho_p: f64,
    quad: &PiecewiseQuadrature,
    tol: f64,
) -> Result<(AdaptivePolicy, f64)> {
    let policy = solve_p21(cfg, rho_p, quad, tol)?;
    let capacity = policy.capacity(quad)?;
    Ok((policy, capacity))
}

/// Golden-section maximization of `f` on `[a, b]`; returns the best point seen.
fn golden_section_max<F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc >= fd { (c, fc) } else { (d, fd) })
}

/// Solves the outer problem over the feasible pilot range.
///
/// The coarse scan runs in parallel; refinement then narrows the bracket
/// around the best scanned point. Global optimality holds up to the coarse
/// grid resolution.
pub fn solve_p22(
    cfg: &SystemConfig,
    quad: &PiecewiseQuadrature,
    search: SearchSettings,
) -> Result<AdaptiveSolution> {
    let range = feasible_range(cfg);
    let tol = search.bisection_tol;
    if range.width() <= 0.0 || search.coarse_points < 2 {
        let (policy, capacity) = evaluate(cfg, range.lower, quad, tol)?;
        return Ok(AdaptiveSolution {
            policy,
            capacity,
            rho_p_search_trace: vec![(range.lower, capacity)],
        });
    }

    let n = search.coarse_points;
    let grid: Vec<f64> = (0..n)
        .map(|k| {
            if k + 1 == n {
                range.upper
            } else {
                range.lower + range.width() * k as f64 / (n - 1) as f64
            }
        })
        .collect();
    let coarse: Vec<(AdaptivePolicy, f64)> = grid
        .par_iter()
        .map(|&rho_p| evaluate(cfg, rho_p, quad, tol))
        .collect::<Result<_>>()?;

    let mut best_k = 0;
    for (k, (_, cap)) in coarse.iter().enumerate() {
        if *cap > coarse[best_k].1 {
            best_k = k;
        }
    }
    let mut trace: Vec<(f64, f64)> = grid
        .iter()
        .zip(&coarse)
        .map(|(&r, (_, c))| (r, *c))
        .collect();
    let (mut best_policy, mut best_cap) = coarse[best_k];

    let a = grid[best_k.saturating_sub(1)];
    let b = grid[(best_k + 1).min(n - 1)];
    let mut refined: Option<(AdaptivePolicy, f64)> = None;
    let (_, _) = golden_section_max(
        |rho_p| {
            let (policy, cap) = evaluate(cfg, rho_p, quad, tol)?;
            trace.push((rho_p, cap));
            if refined.is_none_or(|(_, c)| cap > c) {
                refined = Some((policy, cap));
            }
            Ok(cap)
        },
        a,
        b,
        search.refine_tol,
    )?;
    if let Some((policy, cap)) = refined {
        if cap > best_cap {
            best_policy = policy;
            best_cap = cap;
        }
    }
    Ok(AdaptiveSolution {
        policy: best_policy,
        capacity: best_cap,
        rho_p_search_trace: trace,
    })
}

/// Optimal data ratio with a perfect channel estimate of gain `g`.
pub fn rho_d_star_perfect(g: f64, cfg: &SystemConfig, lambda: f64) -> f64 {
    let knee = 1.0 / lambda - cfg.noise_var() / cfg.power();
    if g < knee {
        1.0
    } else {
        (knee / g).clamp(0.0, 1.0)
    }
}

/// Multiplier for the perfect-estimation policy that harvests `xi` of the
/// data-phase energy, with `g` unit-mean exponential.
pub fn bisect_lambda_perfect(
    cfg: &SystemConfig,
    xi: f64,
    quad: &PiecewiseQuadrature,
    tol: f64,
) -> Result<f64> {
    check_xi_tol(xi, tol)?;
    let (lo, hi) = multiplier_bracket(cfg);
    bisect_increasing(
        |lambda| {
            let knee = 1.0 / lambda - cfg.noise_var() / cfg.power();
            let q = quad.rule(1.0, &[knee])?;
            Ok(q.expect(|g| (1.0 - rho_d_star_perfect(g, cfg, lambda)) * g))
        },
        lo,
        hi,
        xi,
        tol,
    )
}

/// Per-state optimality measurements for a multiplier policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    /// Gains at which the clamped root was strictly inside `(0, 1)`.
    pub interior_points: usize,
    /// Largest `|a rho^2 + b rho + c|` over interior points.
    pub max_quadratic_residual: f64,
    /// Largest amount by which a `rho_d` grid search beat the closed form
    /// on the per-state Lagrangian (negative when it never did).
    pub max_grid_excess: f64,
}

/// Checks the closed-form policy against its stationarity quadratic and a
/// brute-force search over `rho_d` at every gain in `gains`.
pub fn kkt_check(
    sigma_e2: f64,
    cfg: &SystemConfig,
    lambda: f64,
    gains: &[f64],
    rho_step: f64,
) -> KktReport {
    let steps = (1.0 / rho_step).round() as usize;
    gains
        .par_iter()
        .map(|&g| {
            let root = rho_d_root(g, sigma_e2, cfg, lambda);
            let rho = root.clamp(0.0, 1.0);
            let interior = root > 0.0 && root < 1.0;
            let residual = if interior {
                kkt_quadratic_residual(g, sigma_e2, cfg, lambda, rho).abs()
            } else {
                0.0
            };
            let closed = per_state_lagrangian(g, sigma_e2, cfg, lambda, rho);
            let best = (0..=steps)
                .map(|k| {
                    per_state_lagrangian(g, sigma_e2, cfg, lambda, (k as f64 * rho_step).min(1.0))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            KktReport {
                interior_points: usize::from(interior),
                max_quadratic_residual: residual,
                max_grid_excess: best - closed,
            }
        })
        .reduce(
            || KktReport {
                interior_points: 0,
                max_quadratic_residual: 0.0,
                max_grid_excess: f64::NEG_INFINITY,
            },
            |a, b| KktReport {
                interior_points: a.interior_points + b.interior_points,
                max_quadratic_residual: a.max_quadratic_residual.max(b.max_quadratic_residual),
                max_grid_excess: a.max_grid_excess.max(b.max_grid_excess),
            },
        )
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::model::{effective_snr, rho_d_from_rho_p, SplitPair};
    use crate::nonadaptive::solve_p1;
    use crate::specfun::exponential_quadrature;

    fn cfg(lp: u32, ld: u32, q0: f64) -> SystemConfig {
        SystemConfig::new(100.0, 1.0, lp, ld, q0).unwrap()
    }

    fn quad() -> PiecewiseQuadrature {
        PiecewiseQuadrature::new(64).unwrap()
    }

    #[test]
    fn rho_d_star_limits() {
        let c = cfg(4, 96, 50.0);
        let se = 1.0 / 401.0;
        assert_eq!(rho_d_star(0.0, se, &c, 10.0).unwrap(), 0.0);
        assert!(rho_d_star(1e9, se, &c, 10.0).unwrap() < 1e-3);
        assert!(rho_d_star(1.0, 0.0, &c, 10.0).is_err());
        assert!(rho_d_star(1.0, 1.0, &c, 10.0).is_err());
        assert!(rho_d_star(1.0, se, &c, 100.0).is_err());
        assert!(rho_d_star(-1.0, se, &c, 10.0).is_err());
    }

    #[test]
    fn interior_root_solves_quadratic() {
        let c = cfg(4, 96, 50.0);
        let mut interior = 0;
        for &se in &[1e-4, 1.0 / 401.0, 0.05, 0.3, 0.9] {
            for &lambda in &[0.01, 0.5, 3.0, 40.0, 99.0] {
                for i in 0..400 {
                    let g = i as f64 * 0.05;
                    let r = rho_d_root(g, se, &c, lambda);
                    if r > 0.0 && r < 1.0 {
                        interior += 1;
                        assert!(kkt_quadratic_residual(g, se, &c, lambda, r).abs() <= 1e-9);
                    }
                }
            }
        }
        assert!(interior > 100);
    }

    #[test]
    fn constraint_endpoints_and_monotonicity() {
        let c = cfg(4, 96, 50.0);
        let se = 1.0 / 401.0;
        let q = exponential_quadrature(64, 1.0 - se).unwrap();
        let top = c.snr_scale();
        assert_relative_eq!(
            constraint_value(se, &c, top * (1.0 - 1e-12), &q),
            1.0,
            epsilon = 1e-9
        );
        assert!(constraint_value(se, &c, top * 1e-12, &q) < 1e-9);
        let mut prev = -1.0;
        for k in 1..2000 {
            let v = constraint_value(se, &c, top * k as f64 / 2000.0, &q);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn bisection_hits_target() {
        let c = cfg(4, 96, 50.0);
        let se = 1.0 / 401.0;
        let lambda = bisect_lambda(&c, se, 0.5, &quad(), 1e-8).unwrap();
        let q = quad()
            .rule(1.0 - se, &policy_breakpoints(se, &c, lambda))
            .unwrap();
        assert!((constraint_value(se, &c, lambda, &q) - 0.5).abs() <= 1e-8);
        assert!(lambda > 0.0 && lambda < c.snr_scale());

        let small = bisect_lambda(&c, se, 1e-6, &quad(), 1e-10).unwrap();
        let large = bisect_lambda(&c, se, 1.0 - 1e-6, &quad(), 1e-10).unwrap();
        assert!(small < 0.05 * lambda);
        assert!(large > 0.9 * c.snr_scale());
        assert!(bisect_lambda(&c, se, 0.0, &quad(), 1e-8).is_err());
        assert!(bisect_lambda(&c, se, 1.0, &quad(), 1e-8).is_err());
    }

    #[test]
    fn trivial_policies() {
        // q0 = 2: rho_p_lb = 0.5, so xi = 0 there
        let c = cfg(4, 96, 2.0);
        let lb = feasible_range(&c).lower;
        let p = solve_p21(&c, lb, &quad(), 1e-8).unwrap();
        assert_eq!(p.kind, PolicyKind::AllDetect);
        assert!(p.is_trivial());
        assert!((0..100).all(|i| p.rho_d(i as f64 * 0.3) == 1.0));

        let c = cfg(4, 96, 99.0);
        let ub = feasible_range(&c).upper;
        let p = solve_p21(&c, ub, &quad(), 1e-8).unwrap();
        assert_eq!(p.kind, PolicyKind::AllHarvest);
        assert!((0..100).all(|i| p.rho_d(i as f64 * 0.3) == 0.0));
    }

    #[test]
    fn adaptive_beats_fixed_data_ratio() {
        let c = cfg(4, 96, 50.0);
        let p = solve_p21(&c, 1.0, &quad(), 1e-8).unwrap();
        assert_relative_eq!(p.xi, 5000.0 / 9600.0, max_relative = 1e-14);
        let adaptive = p.capacity(&quad()).unwrap();
        let rho_d = rho_d_from_rho_p(&c, 1.0);
        let fixed = rayleigh_capacity(effective_snr(&c, SplitPair { rho_p: 1.0, rho_d }));
        assert!(adaptive > fixed, "adaptive {adaptive} fixed {fixed}");
    }

    #[test]
    fn p22_endpoints() {
        let c = cfg(4, 96, 0.0);
        let s = solve_p22(&c, &quad(), SearchSettings::default()).unwrap();
        assert_eq!(s.policy.rho_p, 1.0);
        assert_eq!(s.policy.kind, PolicyKind::AllDetect);
        assert_eq!(s.capacity, solve_p1(&c).capacity);

        let c = cfg(4, 96, 100.0);
        let s = solve_p22(&c, &quad(), SearchSettings::default()).unwrap();
        assert_eq!(s.policy.rho_p, 0.0);
        assert_eq!(s.capacity, 0.0);
    }

    #[test]
    fn p22_dominates_p1() {
        let c = cfg(4, 96, 50.0);
        let s = solve_p22(&c, &quad(), SearchSettings::default()).unwrap();
        assert!(s.capacity >= solve_p1(&c).capacity);
        assert!(feasible_range(&c).contains(s.policy.rho_p));
        assert!(s.rho_p_search_trace.len() > 101);
    }

    #[test]
    fn perfect_policy_shape() {
        let c = cfg(4, 96, 50.0);
        let lambda = 0.5;
        let knee = 1.0 / lambda - 0.01;
        assert_eq!(rho_d_star_perfect(0.5 * knee, &c, lambda), 1.0);
        assert_eq!(rho_d_star_perfect(knee, &c, lambda), 1.0);
        let mut prev = 1.0;
        for i in 0..500 {
            let r = rho_d_star_perfect(knee + i as f64 * 0.1, &c, lambda);
            assert!(r <= prev && r > 0.0);
            prev = r;
        }
        let l = bisect_lambda_perfect(&c, 0.5, &quad(), 1e-8).unwrap();
        let q = quad().rule(1.0, &[1.0 / l - 0.01]).unwrap();
        let v = q.expect(|g| (1.0 - rho_d_star_perfect(g, &c, l)) * g);
        assert!((v - 0.5).abs() <= 1e-8);
    }

    #[test]
    fn breakpoints_bracket_clamped_regions() {
        let c = cfg(4, 96, 50.0);
        for &se in &[1e-3, 1.0 / 401.0, 0.05, 0.4] {
            for &lambda in &[0.05, 0.3, 1.3, 12.0, 60.0, 99.0] {
                let bps = policy_breakpoints(se, &c, lambda);
                assert!(!bps.is_empty());
                for &b in &bps {
                    let r = rho_d_root(b, se, &c, lambda);
                    let near_zero = r.abs() < 1e-9;
                    let near_one = (r - 1.0).abs() < 1e-9;
                    assert!(
                        near_zero || near_one,
                        "se {se} lambda {lambda} b {b} root {r}"
                    );
                }
            }
        }
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, fx) = golden_section_max(|x| Ok(-(x - 0.3) * (x - 0.3)), 0.0, 1.0, 1e-9).unwrap();
        assert!((x - 0.3).abs() < 1e-8);
        assert!(fx <= 0.0);
    }
}
