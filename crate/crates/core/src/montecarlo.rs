//! Block-fading link simulation.
//!
//! Each block draws an independent channel, forms the receiver's estimate and
//! records the capacity integrand and the harvested power. Block `b` always
//! uses ChaCha stream `b` under the run seed, and blocks are reduced in fixed
//! chunks merged in index order, so a report is bit-identical for any number
//! of worker threads.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::capacity_integrand;
use crate::error::{Error, Result};
use crate::model::{check_ratio, error_variance, SystemConfig};

/// Blocks per reduction chunk. Part of the reproducibility contract.
const CHUNK: u64 = 4096;

pub type BlockRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Draw `h_hat` and the error directly from their Gaussian laws.
    #[default]
    #[serde(alias = "direct")]
    DirectEstimate,
    /// Simulate the received pilots and run the MMSE estimator.
    #[serde(alias = "pilot")]
    PilotSimulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub seed: u64,
    pub blocks: u64,
    pub mode: SimMode,
}

impl SimSettings {
    pub fn new(seed: u64, blocks: u64, mode: SimMode) -> Result<Self> {
        if blocks < 1 {
            return Err(Error::InvalidConfig(
                "at least one block must be simulated".into(),
            ));
        }
        Ok(Self { seed, blocks, mode })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimReport {
    pub capacity_mean: f64,
    pub capacity_stderr: f64,
    pub harvested_mean: f64,
    pub harvested_stderr: f64,
    pub blocks_used: u64,
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// `|mean - target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.mean - target).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.stderr
        }
    }
}

/// Streaming mean and sum of squared deviations (Welford, Chan merge).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.count as f64, other.count as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.count = n;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean,
            stderr: self.stderr(),
        }
    }
}

/// Generator for block `block` of a run seeded with `seed`.
pub fn block_rng(seed: u64, block: u64) -> BlockRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// Runs `per_block` for every block and reduces each output coordinate.
fn accumulate<const N: usize, F>(seed: u64, blocks: u64, per_block: F) -> [RunningStats; N]
where
    F: Fn(&mut BlockRng) -> [f64; N] + Sync,
{
    let chunks = blocks.div_ceil(CHUNK);
    let partials: Vec<[RunningStats; N]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut stats = [RunningStats::default(); N];
            for b in c * CHUNK..((c + 1) * CHUNK).min(blocks) {
                let mut rng = block_rng(seed, b);
                for (s, x) in stats.iter_mut().zip(per_block(&mut rng)) {
                    s.push(x);
                }
            }
            stats
        })
        .collect();
    partials
        .iter()
        .fold([RunningStats::default(); N], |mut acc, part| {
            for (a, p) in acc.iter_mut().zip(part) {
                a.merge(p);
            }
            acc
        })
}

/// Monte Carlo mean of `f` over `blocks` independent block generators.
pub fn estimate_mean<F>(seed: u64, blocks: u64, f: F) -> Estimate
where
    F: Fn(&mut BlockRng) -> f64 + Sync,
{
    let [stats] = accumulate(seed, blocks, |rng| [f(rng)]);
    stats.estimate()
}

/// Zero-mean circularly-symmetric complex Gaussian with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Draws the estimate and the error independently; returns `(|h_hat|^2, |h|^2)`.
pub fn sample_channel_pair<R: Rng + ?Sized>(sigma_e2: f64, rng: &mut R) -> (f64, f64) {
    let h_hat = complex_gaussian(1.0 - sigma_e2, rng);
    let h_err = complex_gaussian(sigma_e2, rng);
    (h_hat.norm_sqr(), (h_hat + h_err).norm_sqr())
}

/// True channel and its MMSE estimate from one simulated training phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotDraw {
    pub h: Complex64,
    pub h_hat: Complex64,
}

/// Simulates `lp` equal-power pilots of energy `P` each and the linear MMSE estimate.
pub fn pilot_draw<R: Rng + ?Sized>(cfg: &SystemConfig, rho_p: f64, rng: &mut R) -> PilotDraw {
    let h = complex_gaussian(1.0, rng);
    // Received pilot amplitude after splitting: sqrt(rho_p) * sqrt(P).
    let amp = (rho_p * cfg.power()).sqrt();
    let mut sum = Complex64::new(0.0, 0.0);
    for _ in 0..cfg.lp() {
        sum += h * amp + complex_gaussian(cfg.noise_var(), rng);
    }
    let h_hat = sum * (amp / (cfg.noise_var() + rho_p * cfg.power() * cfg.lp_f()));
    PilotDraw { h, h_hat }
}

/// Returns `(|h_hat|^2, |h|^2)` from a simulated training phase.
pub fn simulate_pilot_estimation<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    rho_p: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    check_ratio("rho_p", rho_p)?;
    let d = pilot_draw(cfg, rho_p, rng);
    Ok((d.h_hat.norm_sqr(), d.h.norm_sqr()))
}

/// Empirical MMSE statistics from simulated training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimationCheck {
    /// `E{|h - h_hat|^2}`.
    pub error_var: Estimate,
    /// Real and imaginary parts of `E{h_hat conj(h - h_hat)}`.
    pub cross_re: Estimate,
    pub cross_im: Estimate,
}

pub fn estimation_check(
    cfg: &SystemConfig,
    rho_p: f64,
    seed: u64,
    blocks: u64,
) -> Result<EstimationCheck> {
    check_ratio("rho_p", rho_p)?;
    let [err, re, im] = accumulate(seed, blocks, |rng| {
        let d = pilot_draw(cfg, rho_p, rng);
        let e = d.h - d.h_hat;
        let cross = d.h_hat * e.conj();
        [e.norm_sqr(), cross.re, cross.im]
    });
    Ok(EstimationCheck {
        error_var: err.estimate(),
        cross_re: re.estimate(),
        cross_im: im.estimate(),
    })
}

/// Simulates `settings.blocks` blocks under the data-phase policy `policy`.
///
/// The capacity integrand uses the nominal error variance for `rho_p`; the
/// harvested power uses the true channel gain of each block.
pub fn simulate_capacity<P>(
    cfg: &SystemConfig,
    policy: P,
    rho_p: f64,
    settings: &SimSettings,
) -> Result<SimReport>
where
    P: Fn(f64) -> f64 + Sync,
{
    check_ratio("rho_p", rho_p)?;
    if settings.blocks < 1 {
        return Err(Error::InvalidConfig(
            "at least one block must be simulated".into(),
        ));
    }
    let sigma_e2 = error_variance(cfg, rho_p);
    let (p, lp, ld) = (cfg.power(), cfg.lp_f(), cfg.ld_f());
    let [cap, harvest] = accumulate(settings.seed, settings.blocks, |rng| {
        let (g, h_sq) = match settings.mode {
            SimMode::DirectEstimate => sample_channel_pair(sigma_e2, rng),
            SimMode::PilotSimulation => {
                let d = pilot_draw(cfg, rho_p, rng);
                (d.h_hat.norm_sqr(), d.h.norm_sqr())
            }
        };
        let rho_d = policy(g);
        let harvested = ((1.0 - rho_p) * p * lp * h_sq + (1.0 - rho_d) * p * ld * h_sq) / (lp + ld);
        [capacity_integrand(g, sigma_e2, cfg, rho_d), harvested]
    });
    Ok(SimReport {
        capacity_mean: cap.mean(),
        capacity_stderr: cap.stderr(),
        harvested_mean: harvest.mean(),
        harvested_stderr: harvest.stderr(),
        blocks_used: settings.blocks,
    })
}

/// Monte Carlo estimate of `E{ln(1 + snr G)}`, `G` unit-mean exponential.
pub fn simulate_rayleigh_capacity(snr: f64, seed: u64, blocks: u64) -> Estimate {
    estimate_mean(seed, blocks, |rng| {
        let g = complex_gaussian(1.0, rng).norm_sqr();
        (snr * g).ln_1p()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SystemConfig {
        SystemConfig::new(100.0, 1.0, 4, 96, 0.0).unwrap()
    }

    #[test]
    fn channel_pair_degenerate_cases() {
        let mut rng = block_rng(1, 0);
        for _ in 0..100 {
            let (g, h) = sample_channel_pair(0.0, &mut rng);
            assert_eq!(g, h);
            let (g, _) = sample_channel_pair(1.0, &mut rng);
            assert_eq!(g, 0.0);
        }
    }

    #[test]
    fn channel_pair_mean() {
        let se = 0.2;
        let est = estimate_mean(3, 1_000_000, |rng| sample_channel_pair(se, rng).0);
        assert!(est.z_score(1.0 - se) < 4.0, "{est:?}");
    }

    #[test]
    fn zero_pilot_power_gives_zero_estimate() {
        let mut rng = block_rng(5, 9);
        for _ in 0..50 {
            let (g, h) = simulate_pilot_estimation(&cfg(), 0.0, &mut rng).unwrap();
            assert_eq!(g, 0.0);
            assert!(h > 0.0);
        }
        assert!(simulate_pilot_estimation(&cfg(), 1.1, &mut rng).is_err());
    }

    #[test]
    fn running_stats_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.25).collect();
        let mut all = RunningStats::default();
        xs.iter().for_each(|&x| all.push(x));
        let mut a = RunningStats::default();
        let mut b = RunningStats::default();
        xs[..333].iter().for_each(|&x| a.push(x));
        xs[333..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert_eq!(a.count(), all.count());
        assert!((a.mean() - all.mean()).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-9);
    }

    #[test]
    fn full_processing_harvests_nothing() {
        let s = SimSettings::new(0, 10_000, SimMode::DirectEstimate).unwrap();
        let r = simulate_capacity(&cfg(), |_| 1.0, 1.0, &s).unwrap();
        assert_eq!(r.harvested_mean, 0.0);
        assert!(r.capacity_mean > 0.0);
        assert!(SimSettings::new(0, 0, SimMode::DirectEstimate).is_err());
    }

    #[test]
    fn report_independent_of_thread_count() {
        let s = SimSettings::new(11, 20_000, SimMode::PilotSimulation).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_capacity(&cfg(), |g| (g / 3.0).min(1.0), 0.7, &s).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, run(8));
    }
}
