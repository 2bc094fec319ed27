//! Exponential integral, Rayleigh ergodic capacity and Gauss-Laguerre rules.
//!
//! For `G` exponential with unit mean, `E{ln(1 + s G)} = e^{1/s} E1(1/s)`,
//! which gives the fixed-ratio capacity in closed form. Expectations under an
//! adaptive policy have no closed form and go through [`QuadratureRule`].

use serde::Serialize;

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const EPS: f64 = 1e-16;
const MAX_TERMS: usize = 10_000;

/// Exponential integral `E1(x) = int_x^inf e^{-t}/t dt`.
///
/// Returns 0 once the result underflows.
pub fn exp_integral_e1(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain("x", x, "> 0"));
    }
    if x <= 1.0 {
        Ok(e1_series(x))
    } else {
        Ok(e1_continued_fraction(x) * (-x).exp())
    }
}

/// `e^x E1(x)`, computed without forming either factor separately for large `x`.
pub fn scaled_exp_integral_e1(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain("x", x, "> 0"));
    }
    if x <= 1.0 {
        Ok(e1_series(x) * x.exp())
    } else {
        Ok(e1_continued_fraction(x))
    }
}

fn e1_series(x: f64) -> f64 {
    // E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
    let mut sum = 0.0;
    let mut term = 1.0;
    for k in 1..MAX_TERMS {
        let kf = k as f64;
        term *= -x / kf;
        let contrib = term / kf;
        sum += contrib;
        if contrib.abs() < sum.abs() * EPS {
            break;
        }
    }
    -EULER_GAMMA - x.ln() - sum
}

/// Continued fraction for `e^x E1(x)`, evaluated with the modified Lentz method.
fn e1_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_TERMS {
        let an = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (an * d + b);
        c = b + an / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Ergodic capacity `E{ln(1 + snr |h0|^2)}` in nats for a unit-variance Rayleigh `h0`.
pub fn rayleigh_capacity(snr: f64) -> f64 {
    if snr <= 0.0 {
        return 0.0;
    }
    // 1/snr > 0 here, so the scaled integral cannot fail.
    scaled_exp_integral_e1(1.0 / snr).unwrap_or(0.0)
}

/// Gauss-Laguerre nodes and weights rescaled to an exponential distribution.
///
/// `expect(f)` approximates `E{f(G)}` for `G` exponential with mean `mean`,
/// exactly for polynomials of degree up to `2 * order - 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    order: usize,
    mean: f64,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Same rule for an exponential with a different mean.
    pub fn with_mean(&self, mean: f64) -> Result<Self> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::domain("mean", mean, "finite and > 0"));
        }
        let scale = mean / self.mean;
        Ok(Self {
            nodes: self.nodes.iter().map(|x| x * scale).collect(),
            weights: self.weights.clone(),
            order: self.order,
            mean,
        })
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Builds an `order`-point rule for an exponential distribution with the given mean.
pub fn exponential_quadrature(order: usize, mean: f64) -> Result<QuadratureRule> {
    if order < 2 {
        return Err(Error::domain("order", order as f64, ">= 2"));
    }
    if !(mean.is_finite() && mean > 0.0) {
        return Err(Error::domain("mean", mean, "finite and > 0"));
    }
    let (nodes, mut weights) = gauss_laguerre(order);
    // The weight function e^{-x} has unit mass; normalize away rounding.
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(QuadratureRule {
        nodes: nodes.into_iter().map(|x| x * mean).collect(),
        weights,
        order,
        mean,
    })
}

/// Expectations over an exponential law of integrands that are smooth except
/// at known points, such as a clamped policy `rho_d(g)`.
///
/// A single Gauss-Laguerre rule converges slowly across a kink. Here the
/// support is cut at the breakpoints; every finite piece, plus a stretch of
/// `TAIL_SPAN` means past the last breakpoint, is covered by Gauss-Legendre
/// panels graded geometrically toward the piece's left end, and the remainder
/// by a shifted Gauss-Laguerre rule.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseQuadrature {
    order: usize,
    legendre_nodes: Vec<f64>,
    legendre_weights: Vec<f64>,
    tail: QuadratureRule,
}

const GRADING_LEVELS: i32 = 8;
const GRADING_RATIO: f64 = 4.0;
const TAIL_SPAN: f64 = 40.0;

impl PiecewiseQuadrature {
    /// `order / 4` Legendre points per panel and an `order / 2` point tail rule.
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::domain("order", order as f64, ">= 2"));
        }
        let (legendre_nodes, legendre_weights) = gauss_legendre((order / 4).max(1));
        Ok(Self {
            order,
            legendre_nodes,
            legendre_weights,
            tail: exponential_quadrature((order / 2).max(2), 1.0)?,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Composite rule for an exponential with the given mean, split at `breakpoints`.
    ///
    /// Breakpoints that are not positive, or lie so far out that the mass beyond
    /// them is below `e^{-TAIL_SPAN}`, are ignored.
    pub fn rule(&self, mean: f64, breakpoints: &[f64]) -> Result<QuadratureRule> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::domain("mean", mean, "finite and > 0"));
        }
        let mut edges: Vec<f64> = std::iter::once(0.0)
            .chain(
                breakpoints
                    .iter()
                    .copied()
                    .filter(|b| b.is_finite() && *b > 0.0 && *b < TAIL_SPAN * mean),
            )
            .collect();
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        let last = *edges.last().unwrap_or(&0.0);
        let tail_start = last + TAIL_SPAN * mean;
        edges.push(tail_start);

        let panels = (GRADING_LEVELS as usize + 1) * (edges.len() - 1);
        let mut nodes = Vec::with_capacity(panels * self.legendre_nodes.len() + self.tail.order);
        let mut weights = Vec::with_capacity(nodes.capacity());
        for piece in edges.windows(2) {
            let (a, b) = (piece[0], piece[1]);
            let mut lo = a;
            for level in (0..=GRADING_LEVELS).rev() {
                let hi = if level == 0 {
                    b
                } else {
                    a + (b - a) * GRADING_RATIO.powi(-level)
                };
                let (half, mid) = (0.5 * (hi - lo), 0.5 * (hi + lo));
                for (&x, &w) in self.legendre_nodes.iter().zip(&self.legendre_weights) {
                    let g = mid + half * x;
                    nodes.push(g);
                    weights.push(half * w * (-g / mean).exp() / mean);
                }
                lo = hi;
            }
        }
        let tail_mass = (-tail_start / mean).exp();
        for (x, w) in self.tail.iter() {
            nodes.push(tail_start + mean * x);
            weights.push(tail_mass * w);
        }
        Ok(QuadratureRule {
            nodes,
            weights,
            order: self.order,
            mean,
        })
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes increasing.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut deriv = 1.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            deriv = nf * (z * p1 - p2) / (z * z - 1.0);
            let step = p1 / deriv;
            z -= step;
            if step.abs() <= 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * deriv * deriv);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Roots of the Laguerre polynomial `L_n` by Newton iteration, with weights.
fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut z = 0.0_f64;
    for i in 0..n {
        // Asymptotic initial guesses, each extrapolated from the previous roots.
        z = match i {
            0 => 3.0 / (1.0 + 2.4 * nf),
            1 => z + 15.0 / (1.0 + 2.5 * nf),
            _ => {
                let ai = (i - 1) as f64;
                z + (1.0 + 2.55 * ai) / (1.9 * ai) * (z - nodes[i - 2])
            }
        };
        let mut p_prev = 0.0;
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (p_n, p_nm1) = laguerre_pair(n, z);
            deriv = nf * (p_n - p_nm1) / z;
            p_prev = p_nm1;
            let step = p_n / deriv;
            z -= step;
            if step.abs() <= 1e-15 * z.abs() {
                break;
            }
        }
        let (p_n, p_nm1) = laguerre_pair(n, z);
        if p_n != 0.0 {
            deriv = nf * (p_n - p_nm1) / z;
            p_prev = p_nm1;
        }
        nodes.push(z);
        weights.push(-1.0 / (deriv * nf * p_prev));
    }
    (nodes, weights)
}

/// `(L_n(z), L_{n-1}(z))` by the three-term recurrence.
fn laguerre_pair(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = 1.0;
    let mut p2 = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = ((2.0 * jf - 1.0 - z) * p2 - (jf - 1.0) * p3) / jf;
    }
    (p1, p2)
}
