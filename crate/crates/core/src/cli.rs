//! Experiment runner behind the `swipt` binary.
//!
//! Every command is a function of a [`RunConfig`] that returns plain data;
//! rendering to CSV or JSON is separate so tests can inspect results
//! directly. Sweep rows are computed in parallel and always emitted in grid
//! order, and Monte Carlo runs are reproducible for a given seed, so the
//! rendered output of a command is a pure function of its configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::adaptive::{
    bisect_lambda_perfect, kkt_check, rho_d_star_perfect, solve_p21, solve_p22, AdaptivePolicy,
    PolicyKind, SearchSettings,
};
use crate::error::{Error, Result};
use crate::model::{harvested_power_nonadaptive, SystemConfig};
use crate::montecarlo::{simulate_capacity, simulate_rayleigh_capacity, SimMode, SimSettings};
use crate::nonadaptive::{
    fixed_split_capacity, grid_oracle_p1, high_snr_root, solve_p1, stationary_root,
    NonAdaptiveSolution,
};
use crate::specfun::{rayleigh_capacity, PiecewiseQuadrature};

/// Decimal places kept when generating grid points, so that `0.05 * 7`
/// prints as `0.35`.
const GRID_DECIMALS: i32 = 12;

fn round_grid(x: f64) -> f64 {
    let scale = 10f64.powi(GRID_DECIMALS);
    (x * scale).round() / scale
}

/// Inclusive arithmetic grid `start, start + step, ..., <= stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        let grid = Self { start, stop, step };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { start, stop, step } = *self;
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grid {self} has non-finite entries"
            )));
        }
        if !(step > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grid step must be positive, got {step}"
            )));
        }
        if start > stop {
            return Err(Error::InvalidConfig(format!(
                "grid start {start} exceeds stop {stop}"
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        // Slack so that a stop value that is a multiple of step is not lost to rounding.
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| round_grid(self.start + k as f64 * self.step))
            .collect()
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, step] = parts.as_slice() else {
            return Err(Error::InvalidConfig(format!(
                "grid '{s}' is not of the form start:stop:step"
            )));
        };
        let parse = |v: &str| {
            v.trim().parse::<f64>().map_err(|e| {
                Error::InvalidConfig(format!("grid '{s}': '{v}' is not a number ({e})"))
            })
        };
        Self::new(parse(start)?, parse(stop)?, parse(step)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Data sets produced by [`cmd_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Figure {
    /// Optimal fixed ratios against the harvesting requirement, one series per pilot length.
    Policies,
    /// Optimal versus naive fixed-ratio capacity.
    CapacityNonadaptive,
    /// Fixed versus channel-adaptive capacity.
    CapacityComparison,
    /// Adaptive data ratio as a function of the estimated gain.
    PolicyCurve,
}

fn one_or_many<'de, D: Deserializer<'de>>(
    deserializer: D,
) -> std::result::Result<Vec<u32>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(u32),
        Many(Vec<u32>),
    }
    Ok(match OneOrMany::deserialize(deserializer)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

/// Everything a command needs. Defaults reproduce the reference setup:
/// `P = 100`, `sigma_n^2 = 1`, blocks of 100 symbols, 4 pilots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub power: f64,
    pub noise_var: f64,
    /// Pilot lengths; sweeps produce one series per entry.
    #[serde(deserialize_with = "one_or_many")]
    pub lp: Vec<u32>,
    /// Data length. When absent, `ld = block_len - lp` for every pilot length.
    pub ld: Option<u32>,
    pub block_len: u32,
    /// Operating point for `solve`, `verify` and `policy-curve`.
    pub q0_frac: f64,
    /// Sweep grid over `q0 / P`.
    pub q0_grid: GridSpec,
    pub quad_order: usize,
    pub bisection_tol: f64,
    pub coarse_points: usize,
    pub refine_tol: f64,
    /// Step of the brute-force pilot-ratio oracle used by `verify`.
    pub oracle_step: f64,
    pub seed: u64,
    pub blocks: u64,
    pub mode: SimMode,
    /// Report Monte Carlo adaptive capacities (with standard errors) instead of quadrature.
    pub monte_carlo: bool,
    /// Include the adaptive solution in `solve`.
    pub adaptive: bool,
    /// Pilot ratio for `policy-curve`; the adaptive optimum when absent.
    pub rho_p: Option<f64>,
    pub g_max: f64,
    pub g_points: usize,
    pub format: OutputFormat,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let search = SearchSettings::default();
        Self {
            power: 100.0,
            noise_var: 1.0,
            lp: vec![4],
            ld: None,
            block_len: 100,
            q0_frac: 0.5,
            q0_grid: GridSpec {
                start: 0.05,
                stop: 0.95,
                step: 0.05,
            },
            quad_order: 64,
            bisection_tol: search.bisection_tol,
            coarse_points: search.coarse_points,
            refine_tol: search.refine_tol,
            oracle_step: 1e-4,
            seed: 0,
            blocks: 50_000,
            mode: SimMode::DirectEstimate,
            monte_carlo: false,
            adaptive: false,
            rho_p: None,
            g_max: 50.0,
            g_points: 501,
            format: OutputFormat::Csv,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Checks every field, including that each pilot length yields a valid system.
    pub fn validate(&self) -> Result<()> {
        if self.lp.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one pilot length is required".into(),
            ));
        }
        self.q0_grid.validate()?;
        if !(0.0..=1.0).contains(&self.q0_grid.start) || !(0.0..=1.0).contains(&self.q0_grid.stop) {
            return Err(Error::InvalidConfig(format!(
                "q0_frac grid {} must lie within [0, 1]",
                self.q0_grid
            )));
        }
        if !(0.0..=1.0).contains(&self.q0_frac) {
            return Err(Error::InvalidConfig(format!(
                "q0_frac = {} must lie within [0, 1]",
                self.q0_frac
            )));
        }
        if self.quad_order < 2 {
            return Err(Error::InvalidConfig(format!(
                "quad_order = {} must be at least 2",
                self.quad_order
            )));
        }
        for (name, v) in [
            ("bisection_tol", self.bisection_tol),
            ("refine_tol", self.refine_tol),
            ("oracle_step", self.oracle_step),
            ("g_max", self.g_max),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {v} must be positive"
                )));
            }
        }
        if !(self.oracle_step <= 0.01) {
            return Err(Error::InvalidConfig(format!(
                "oracle_step = {} must not exceed 0.01",
                self.oracle_step
            )));
        }
        if self.coarse_points < 2 {
            return Err(Error::InvalidConfig(
                "coarse_points must be at least 2".into(),
            ));
        }
        if self.g_points < 2 {
            return Err(Error::InvalidConfig("g_points must be at least 2".into()));
        }
        if self.blocks < 1 {
            return Err(Error::InvalidConfig("blocks must be at least 1".into()));
        }
        if let Some(r) = self.rho_p {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!(
                    "rho_p = {r} must lie within [0, 1]"
                )));
            }
        }
        for &lp in &self.lp {
            self.system(lp, self.q0_frac)?;
        }
        Ok(())
    }

    pub fn ld_for(&self, lp: u32) -> Result<u32> {
        match self.ld {
            Some(ld) => Ok(ld),
            None if lp < self.block_len => Ok(self.block_len - lp),
            None => Err(Error::InvalidConfig(format!(
                "pilot length {lp} leaves no data symbols in a block of {}",
                self.block_len
            ))),
        }
    }

    pub fn system(&self, lp: u32, q0_frac: f64) -> Result<SystemConfig> {
        SystemConfig::with_q0_frac(self.power, self.noise_var, lp, self.ld_for(lp)?, q0_frac)
    }

    pub fn quadrature(&self) -> Result<PiecewiseQuadrature> {
        PiecewiseQuadrature::new(self.quad_order)
    }

    pub fn search(&self) -> SearchSettings {
        SearchSettings {
            coarse_points: self.coarse_points,
            refine_tol: self.refine_tol,
            bisection_tol: self.bisection_tol,
        }
    }

    pub fn sim(&self) -> Result<SimSettings> {
        SimSettings::new(self.seed, self.blocks, self.mode)
    }

    /// Evenly spaced gains `0, ..., g_max` for policy tables.
    pub fn gain_grid(&self) -> Vec<f64> {
        let n = self.g_points;
        (0..n)
            .map(|k| round_grid(self.g_max * k as f64 / (n - 1) as f64))
            .collect()
    }

    fn single_lp(&self, what: &str) -> Result<u32> {
        match self.lp.as_slice() {
            [lp] => Ok(*lp),
            _ => Err(Error::InvalidConfig(format!(
                "{what} needs exactly one pilot length, got {:?}",
                self.lp
            ))),
        }
    }
}

/// One table cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Bool(bool),
    Text(String),
    Empty,
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            // `Display` for f64 is the shortest string that parses back to the same value.
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Bool(v) => write!(f, "{v}"),
            Cell::Text(v) => write!(f, "{v}"),
            Cell::Empty => Ok(()),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(u64::from(v))
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

/// Rectangular data with named columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Results that can be rendered as a CSV table or as JSON.
pub trait Render: Serialize {
    fn table(&self) -> Table;

    fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.table().to_csv(),
            OutputFormat::Json => {
                let mut s = serde_json::to_string_pretty(self)
                    .expect("reports contain only finite numbers");
                s.push('\n');
                s
            }
        }
    }
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn write_output(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(path) => fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|source| Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

/// Summary of an adaptive solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveSummary {
    pub rho_p: f64,
    pub xi: f64,
    pub sigma_e2: f64,
    pub lambda: Option<f64>,
    pub kind: PolicyKind,
    pub capacity: f64,
    /// `E{rho_d(g)}` over the law of the estimate.
    pub mean_rho_d: f64,
    /// `(g, rho_d(g))` on the configured gain grid.
    pub curve: Vec<(f64, f64)>,
}

fn mean_rho_d(policy: &AdaptivePolicy, quad: &PiecewiseQuadrature) -> Result<f64> {
    if policy.lambda().is_none() {
        return Ok(policy.rho_d(0.0));
    }
    let rule = quad.rule(policy.est_var(), &policy.breakpoints())?;
    Ok(rule.expect(|g| policy.rho_d(g)))
}

fn summarize(
    policy: &AdaptivePolicy,
    capacity: f64,
    quad: &PiecewiseQuadrature,
    gains: &[f64],
) -> Result<AdaptiveSummary> {
    Ok(AdaptiveSummary {
        rho_p: policy.rho_p,
        xi: policy.xi,
        sigma_e2: policy.sigma_e2,
        lambda: policy.lambda(),
        kind: policy.kind,
        capacity,
        mean_rho_d: mean_rho_d(policy, quad)?,
        curve: policy.tabulate(gains),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveEntry {
    pub config: SystemConfig,
    pub nonadaptive: NonAdaptiveSolution,
    pub capacity_fixed: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<AdaptiveSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub entries: Vec<SolveEntry>,
}

impl Render for SolveReport {
    fn table(&self) -> Table {
        let rows = self
            .entries
            .iter()
            .map(|e| {
                let ad = e.adaptive.as_ref();
                vec![
                    e.config.lp().into(),
                    e.config.ld().into(),
                    e.config.q0_frac().into(),
                    e.nonadaptive.split.rho_p.into(),
                    e.nonadaptive.split.rho_d.into(),
                    e.nonadaptive.snr.into(),
                    e.nonadaptive.capacity.into(),
                    e.capacity_fixed.into(),
                    ad.map(|a| a.rho_p).into(),
                    ad.map(|a| a.xi).into(),
                    ad.and_then(|a| a.lambda).into(),
                    ad.map(|a| a.mean_rho_d).into(),
                    ad.map(|a| a.capacity).into(),
                ]
            })
            .collect();
        Table {
            columns: vec![
                "lp",
                "ld",
                "q0_frac",
                "rho_p",
                "rho_d",
                "snr",
                "cap_na",
                "cap_fixed",
                "rho_p_ad",
                "xi",
                "lambda",
                "mean_rho_d_ad",
                "cap_ad",
            ],
            rows,
        }
    }
}

/// Solves the configured operating point for every pilot length.
pub fn cmd_solve(run: &RunConfig) -> Result<SolveReport> {
    run.validate()?;
    let quad = run.quadrature()?;
    let gains = run.gain_grid();
    let entries = run
        .lp
        .iter()
        .map(|&lp| {
            let cfg = run.system(lp, run.q0_frac)?;
            let adaptive = if run.adaptive {
                let sol = solve_p22(&cfg, &quad, run.search())?;
                Some(summarize(&sol.policy, sol.capacity, &quad, &gains)?)
            } else {
                None
            };
            Ok(SolveEntry {
                config: cfg,
                nonadaptive: solve_p1(&cfg),
                capacity_fixed: fixed_split_capacity(&cfg),
                adaptive,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SolveReport { entries })
}

/// One operating point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub lp: u32,
    pub ld: u32,
    pub q0_frac: f64,
    pub rho_p_star: f64,
    pub rho_d_star: f64,
    pub capacity_nonadaptive: f64,
    pub capacity_fixed: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_p_adaptive: Option<f64>,
    /// `E{rho_d(g)}` under the adaptive policy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_rho_d_adaptive: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity_adaptive: Option<f64>,
    /// Standard error of `capacity_adaptive`; zero when it comes from quadrature.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity_mc_stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub figure: Figure,
    pub records: Vec<SweepRecord>,
}

impl Render for Sweep {
    fn table(&self) -> Table {
        type Projection = fn(&SweepRecord) -> Vec<Cell>;
        let (columns, pick): (Vec<&'static str>, Projection) = match self.figure {
            Figure::Policies => (
                vec!["lp", "ld", "q0_frac", "rho_p", "rho_d", "rho_fixed"],
                |r| {
                    vec![
                        r.lp.into(),
                        r.ld.into(),
                        r.q0_frac.into(),
                        r.rho_p_star.into(),
                        r.rho_d_star.into(),
                        (1.0 - r.q0_frac).into(),
                    ]
                },
            ),
            Figure::CapacityNonadaptive => (
                vec![
                    "lp",
                    "ld",
                    "q0_frac",
                    "rho_p",
                    "rho_d",
                    "cap_opt",
                    "cap_fixed",
                ],
                |r| {
                    vec![
                        r.lp.into(),
                        r.ld.into(),
                        r.q0_frac.into(),
                        r.rho_p_star.into(),
                        r.rho_d_star.into(),
                        r.capacity_nonadaptive.into(),
                        r.capacity_fixed.into(),
                    ]
                },
            ),
            Figure::CapacityComparison | Figure::PolicyCurve => (
                vec![
                    "q0_frac",
                    "rho_p_na",
                    "rho_d_na",
                    "cap_na",
                    "rho_p_ad",
                    "cap_ad",
                    "cap_ad_stderr",
                ],
                |r| {
                    vec![
                        r.q0_frac.into(),
                        r.rho_p_star.into(),
                        r.rho_d_star.into(),
                        r.capacity_nonadaptive.into(),
                        r.rho_p_adaptive.into(),
                        r.capacity_adaptive.into(),
                        r.capacity_mc_stderr.into(),
                    ]
                },
            ),
        };
        Table {
            columns,
            rows: self.records.iter().map(pick).collect(),
        }
    }
}

fn sweep_record(
    run: &RunConfig,
    lp: u32,
    q0_frac: f64,
    adaptive: bool,
    quad: &PiecewiseQuadrature,
) -> Result<SweepRecord> {
    let cfg = run.system(lp, q0_frac)?;
    let na = solve_p1(&cfg);
    let mut record = SweepRecord {
        lp,
        ld: cfg.ld(),
        q0_frac,
        rho_p_star: na.split.rho_p,
        rho_d_star: na.split.rho_d,
        capacity_nonadaptive: na.capacity,
        capacity_fixed: fixed_split_capacity(&cfg),
        rho_p_adaptive: None,
        mean_rho_d_adaptive: None,
        capacity_adaptive: None,
        capacity_mc_stderr: None,
    };
    if adaptive {
        let sol = solve_p22(&cfg, quad, run.search())?;
        let (capacity, stderr) = if run.monte_carlo {
            let policy = sol.policy;
            let report = simulate_capacity(&cfg, |g| policy.rho_d(g), policy.rho_p, &run.sim()?)?;
            (report.capacity_mean, report.capacity_stderr)
        } else {
            (sol.capacity, 0.0)
        };
        record.rho_p_adaptive = Some(sol.policy.rho_p);
        record.mean_rho_d_adaptive = Some(mean_rho_d(&sol.policy, quad)?);
        record.capacity_adaptive = Some(capacity);
        record.capacity_mc_stderr = Some(stderr);
    }
    Ok(record)
}

/// Sweeps `q0 / P` over the configured grid.
///
/// `capacity-comparison` requires a single pilot length; the other sweeps
/// produce one series per pilot length, ordered by pilot length then grid.
/// `policy-curve` is not a `q0` sweep; use [`cmd_policy_curve`].
pub fn cmd_sweep(run: &RunConfig, figure: Figure) -> Result<Sweep> {
    run.validate()?;
    let adaptive = match figure {
        Figure::Policies | Figure::CapacityNonadaptive => false,
        Figure::CapacityComparison => {
            run.single_lp("the capacity-comparison sweep")?;
            true
        }
        Figure::PolicyCurve => {
            return Err(Error::InvalidConfig(
                "policy-curve tabulates over the gain, not q0; use the policy-curve command".into(),
            ))
        }
    };
    let quad = run.quadrature()?;
    let points: Vec<(u32, f64)> = run
        .lp
        .iter()
        .flat_map(|&lp| run.q0_grid.points().into_iter().map(move |q| (lp, q)))
        .collect();
    let records = points
        .par_iter()
        .map(|&(lp, q0_frac)| sweep_record(run, lp, q0_frac, adaptive, &quad))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sweep { figure, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub g: f64,
    pub rho_d_imperfect: f64,
    pub rho_d_perfect: f64,
}

/// The adaptive policy at one `(rho_p, q0)` next to the policy a receiver
/// with a perfect channel estimate would use for the same data-phase target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyCurve {
    pub config: SystemConfig,
    pub rho_p: f64,
    pub xi: f64,
    pub sigma_e2: f64,
    pub lambda: Option<f64>,
    pub lambda_perfect: Option<f64>,
    pub points: Vec<CurvePoint>,
}

impl Render for PolicyCurve {
    fn table(&self) -> Table {
        Table {
            columns: vec!["g", "rho_d_imperfect", "rho_d_perfect"],
            rows: self
                .points
                .iter()
                .map(|p| vec![p.g.into(), p.rho_d_imperfect.into(), p.rho_d_perfect.into()])
                .collect(),
        }
    }
}

pub fn cmd_policy_curve(run: &RunConfig) -> Result<PolicyCurve> {
    run.validate()?;
    let cfg = run.system(run.single_lp("policy-curve")?, run.q0_frac)?;
    let quad = run.quadrature()?;
    let policy = match run.rho_p {
        Some(rho_p) => solve_p21(&cfg, rho_p, &quad, run.bisection_tol)?,
        None => solve_p22(&cfg, &quad, run.search())?.policy,
    };
    let xi = policy.xi;
    let lambda_perfect = if xi > 0.0 && xi < 1.0 {
        Some(bisect_lambda_perfect(&cfg, xi, &quad, run.bisection_tol)?)
    } else {
        None
    };
    let perfect = |g: f64| match lambda_perfect {
        Some(lambda) => rho_d_star_perfect(g, &cfg, lambda),
        None => 1.0 - xi,
    };
    let points = run
        .gain_grid()
        .into_iter()
        .map(|g| CurvePoint {
            g,
            rho_d_imperfect: policy.rho_d(g),
            rho_d_perfect: perfect(g),
        })
        .collect();
    Ok(PolicyCurve {
        config: cfg,
        rho_p: policy.rho_p,
        xi,
        sigma_e2: policy.sigma_e2,
        lambda: policy.lambda(),
        lambda_perfect,
        points,
    })
}

/// One verified invariant. Every check is phrased as a nonnegative
/// discrepancy that passes when it does not exceed the tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(
        name: impl Into<String>,
        measured: f64,
        tolerance: f64,
        detail: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            // NaN discrepancies fail.
            passed: measured <= tolerance,
            detail: detail.into(),
        }
    }

    /// A check that could not be evaluated because a solver failed.
    fn failed(name: impl Into<String>, err: &Error) -> Self {
        Self {
            name: name.into(),
            measured: f64::INFINITY,
            tolerance: 0.0,
            passed: false,
            detail: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl Render for VerifyReport {
    fn table(&self) -> Table {
        Table {
            columns: vec!["check", "measured", "tolerance", "passed", "detail"],
            rows: self
                .checks
                .iter()
                .map(|c| {
                    vec![
                        Cell::Text(c.name.clone()),
                        // Infinity prints as "inf", which is unambiguous in the table.
                        c.measured.into(),
                        c.tolerance.into(),
                        Cell::Bool(c.passed),
                        Cell::Text(c.detail.replace(',', ";")),
                    ]
                })
                .collect(),
        }
    }
}

/// Tolerances used by [`cmd_verify`].
const SNR_REL_TOL: f64 = 1e-9;
const ENERGY_TOL: f64 = 1e-9;
const HIGH_SNR_SCALE: f64 = 1e6;
const HIGH_SNR_REL_TOL: f64 = 1e-2;
const KKT_TOL: f64 = 1e-9;
const LAGRANGIAN_TOL: f64 = 1e-8;
const LAGRANGIAN_STEP: f64 = 1e-4;
const KKT_GAIN_POINTS: usize = 401;
const KKT_GAIN_SPAN: f64 = 20.0;
const Z_TOL: f64 = 4.0;
const REFERENCE_ORDER: usize = 256;
const QUADRATURE_TOL: f64 = 1e-6;
const DOMINANCE_TOL: f64 = 1e-9;
const ENDPOINT_TOL: f64 = 1e-9;

fn verify_lp(run: &RunConfig, lp: u32, quad: &PiecewiseQuadrature) -> Result<Vec<Check>> {
    let tag = |name: &str| format!("{name}[lp={lp}]");
    let grid = run.q0_grid.points();
    let mut checks = Vec::new();

    // Fixed ratios against the brute-force oracle, the energy equality, and the naive baseline.
    let mut worst_rho = 0.0_f64;
    let mut worst_snr = 0.0_f64;
    let mut worst_energy = 0.0_f64;
    let mut worst_fixed = 0.0_f64;
    for &q in &grid {
        let cfg = run.system(lp, q)?;
        let sol = solve_p1(&cfg);
        let (oracle_rho, oracle_snr) = grid_oracle_p1(&cfg, run.oracle_step)?;
        worst_rho = worst_rho.max((sol.split.rho_p - oracle_rho).abs());
        if oracle_snr > 0.0 {
            worst_snr = worst_snr.max((oracle_snr - sol.snr) / oracle_snr);
        }
        worst_energy = worst_energy
            .max((harvested_power_nonadaptive(&cfg, sol.split) - cfg.q0()).abs() / cfg.power());
        worst_fixed = worst_fixed.max(fixed_split_capacity(&cfg) - sol.capacity);
    }
    checks.push(Check::new(
        tag("fixed_rho_p_vs_oracle"),
        worst_rho,
        2.0 * run.oracle_step,
        format!("max |rho_p - oracle| over {} grid points", grid.len()),
    ));
    checks.push(Check::new(
        tag("fixed_snr_vs_oracle"),
        worst_snr,
        SNR_REL_TOL,
        "max relative SNR shortfall against the oracle",
    ));
    checks.push(Check::new(
        tag("fixed_energy_equality"),
        worst_energy,
        ENERGY_TOL,
        "max |harvested - q0| / P",
    ));
    checks.push(Check::new(
        tag("fixed_beats_naive"),
        worst_fixed,
        DOMINANCE_TOL,
        "max (naive - optimal) fixed-ratio capacity",
    ));

    // High-SNR limit of the stationary point.
    let c = run.q0_frac;
    if c > 0.0 && c < 1.0 {
        let ld = run.ld_for(lp)?;
        let big =
            SystemConfig::with_q0_frac(HIGH_SNR_SCALE * run.noise_var, run.noise_var, lp, ld, c)?;
        let limit = high_snr_root(lp, ld, c)?;
        checks.push(Check::new(
            tag("high_snr_limit"),
            (stationary_root(&big) - limit).abs() / limit,
            HIGH_SNR_REL_TOL,
            format!("P/sigma_n^2 = {HIGH_SNR_SCALE}, limit {limit}"),
        ));
    }

    // Closed-form capacity against simulation at the fixed-ratio optimum.
    let cfg = run.system(lp, run.q0_frac)?;
    let na = solve_p1(&cfg);
    let est = simulate_rayleigh_capacity(na.snr, run.seed, run.blocks);
    checks.push(Check::new(
        tag("capacity_closed_form_vs_mc"),
        est.z_score(rayleigh_capacity(na.snr)),
        Z_TOL,
        format!(
            "standard errors at snr = {} over {} blocks",
            na.snr, run.blocks
        ),
    ));

    // Adaptive policy at the operating point.
    match verify_adaptive(run, &cfg, quad) {
        Ok(adaptive) => checks.extend(adaptive.into_iter().map(|mut c| {
            c.name = tag(&c.name);
            c
        })),
        Err(e) => checks.push(Check::failed(tag("adaptive_solve"), &e)),
    }

    // Dominance and endpoints across the grid.
    let mut worst_gap = 0.0_f64;
    let mut failure = None;
    for &q in &grid {
        let cfg = run.system(lp, q)?;
        match solve_p22(&cfg, quad, run.search()) {
            Ok(sol) => worst_gap = worst_gap.max(solve_p1(&cfg).capacity - sol.capacity),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    checks.push(match failure {
        None => Check::new(
            tag("adaptive_beats_fixed"),
            worst_gap,
            DOMINANCE_TOL,
            "max (fixed - adaptive) capacity over the grid",
        ),
        Some(e) => Check::failed(tag("adaptive_beats_fixed"), &e),
    });

    let zero = run.system(lp, 0.0)?;
    let full = run.system(lp, 1.0)?;
    let (na0, na1) = (solve_p1(&zero), solve_p1(&full));
    match (
        solve_p22(&zero, quad, run.search()),
        solve_p22(&full, quad, run.search()),
    ) {
        (Ok(ad0), Ok(ad1)) => {
            checks.push(Check::new(
                tag("endpoint_no_harvesting"),
                [
                    (na0.split.rho_p - 1.0).abs(),
                    (na0.split.rho_d - 1.0).abs(),
                    (ad0.capacity - na0.capacity).abs(),
                ]
                .into_iter()
                .fold(0.0, f64::max),
                ENDPOINT_TOL,
                "q0 = 0: ratios (1, 1) and adaptive == fixed",
            ));
            checks.push(Check::new(
                tag("endpoint_full_harvesting"),
                [na1.split.rho_p, na1.split.rho_d, na1.capacity, ad1.capacity]
                    .into_iter()
                    .fold(0.0, f64::max),
                0.0,
                "q0 = P: ratios (0, 0) and zero capacity",
            ));
        }
        (Err(e), _) | (_, Err(e)) => checks.push(Check::failed(tag("endpoints"), &e)),
    }
    Ok(checks)
}

fn verify_adaptive(
    run: &RunConfig,
    cfg: &SystemConfig,
    quad: &PiecewiseQuadrature,
) -> Result<Vec<Check>> {
    let sol = solve_p22(cfg, quad, run.search())?;
    let policy = sol.policy;
    let mut checks = Vec::new();

    if let Some(lambda) = policy.lambda() {
        let mean = policy.est_var();
        let gains: Vec<f64> = (0..KKT_GAIN_POINTS)
            .map(|k| KKT_GAIN_SPAN * mean * k as f64 / (KKT_GAIN_POINTS - 1) as f64)
            .collect();
        let kkt = kkt_check(policy.sigma_e2, cfg, lambda, &gains, LAGRANGIAN_STEP);
        checks.push(Check::new(
            "kkt_quadratic_residual",
            kkt.max_quadratic_residual,
            KKT_TOL,
            format!("{} interior states", kkt.interior_points),
        ));
        checks.push(Check::new(
            "kkt_lagrangian_grid",
            kkt.max_grid_excess.max(0.0),
            LAGRANGIAN_TOL,
            format!("rho_d grid step {LAGRANGIAN_STEP}"),
        ));

        let reference = PiecewiseQuadrature::new(REFERENCE_ORDER.max(4 * run.quad_order))?;
        let drift = (policy.constraint(&reference)? - policy.xi)
            .abs()
            .max((policy.capacity(&reference)? - sol.capacity).abs());
        checks.push(Check::new(
            "quadrature_convergence",
            drift,
            QUADRATURE_TOL,
            format!(
                "constraint and capacity, order {} vs {}",
                run.quad_order,
                reference.order()
            ),
        ));
    }
    checks.push(Check::new(
        "constraint_residual",
        (policy.constraint(quad)? - policy.xi).abs(),
        run.bisection_tol,
        format!("xi = {}", policy.xi),
    ));

    let report = simulate_capacity(cfg, |g| policy.rho_d(g), policy.rho_p, &run.sim()?)?;
    let harvested = crate::montecarlo::Estimate {
        mean: report.harvested_mean,
        stderr: report.harvested_stderr,
    };
    checks.push(Check::new(
        "harvested_vs_mc",
        harvested.z_score(cfg.q0()),
        Z_TOL,
        format!(
            "standard errors from q0 = {} over {} blocks",
            cfg.q0(),
            run.blocks
        ),
    ));
    let capacity = crate::montecarlo::Estimate {
        mean: report.capacity_mean,
        stderr: report.capacity_stderr,
    };
    checks.push(Check::new(
        "adaptive_capacity_vs_mc",
        capacity.z_score(sol.capacity),
        Z_TOL,
        format!("standard errors from {} nats", sol.capacity),
    ));
    Ok(checks)
}

/// Runs the oracle, optimality and simulation cross-checks for every pilot length.
///
/// Solver failures are reported as failed checks rather than errors, so the
/// report is always complete; only configuration problems return `Err`.
pub fn cmd_verify(run: &RunConfig) -> Result<VerifyReport> {
    run.validate()?;
    let quad = run.quadrature()?;
    let per_lp = run
        .lp
        .par_iter()
        .map(|&lp| verify_lp(run, lp, &quad))
        .collect::<Result<Vec<_>>>()?;
    let checks: Vec<Check> = per_lp.into_iter().flatten().collect();
    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
