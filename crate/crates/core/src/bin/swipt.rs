use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use swipt::cli::{
    cmd_policy_curve, cmd_solve, cmd_sweep, cmd_verify, write_output, Figure, GridSpec,
    OutputFormat, Render, RunConfig,
};
use swipt::montecarlo::SimMode;
use swipt::{Error, Result};

/// Optimal receiver power splitting for training-based SWIPT links.
#[derive(Debug, Parser)]
#[command(name = "swipt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one operating point (fixed ratios, optionally adaptive).
    Solve(Common),
    /// Sweep q0/P and emit plot data.
    Sweep {
        #[arg(long, value_enum)]
        figure: Figure,
        #[command(flatten)]
        common: Common,
    },
    /// Run the oracle and simulation cross-checks; exits 2 if any fails.
    Verify(Common),
    /// Tabulate the adaptive data ratio against the estimated channel gain.
    PolicyCurve(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Direct,
    Pilot,
}

impl From<ModeArg> for SimMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Direct => SimMode::DirectEstimate,
            ModeArg::Pilot => SimMode::PilotSimulation,
        }
    }
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Transmit power P (linear unless --db).
    #[arg(long, allow_negative_numbers = true)]
    power: Option<f64>,
    /// Noise variance (linear unless --db).
    #[arg(long, allow_negative_numbers = true)]
    noise_var: Option<f64>,
    /// Interpret --power and --noise-var in dB.
    #[arg(long)]
    db: bool,
    /// Pilot length(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    lp: Option<Vec<u32>>,
    /// Data length; defaults to 100 - lp.
    #[arg(long)]
    ld: Option<u32>,
    /// Harvesting requirement q0/P for single-point commands.
    #[arg(long)]
    q0_frac: Option<f64>,
    /// Sweep grid start:stop:step over q0/P.
    #[arg(long)]
    q0_grid: Option<GridSpec>,
    #[arg(long)]
    quad_order: Option<usize>,
    /// Monte Carlo blocks.
    #[arg(long)]
    blocks: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Use Monte Carlo for adaptive capacities in sweeps.
    #[arg(long)]
    mc: bool,
    /// Also solve the adaptive problem in `solve`.
    #[arg(long)]
    adaptive: bool,
    /// Pilot ratio for policy-curve (default: adaptive optimum).
    #[arg(long)]
    rho_p: Option<f64>,
    /// Largest gain tabulated by policy-curve.
    #[arg(long)]
    g_max: Option<f64>,
    #[arg(long)]
    g_points: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn from_db(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut run = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        let level = |x: f64| if self.db { from_db(x) } else { x };
        if let Some(v) = self.power {
            run.power = level(v);
        }
        if let Some(v) = self.noise_var {
            run.noise_var = level(v);
        }
        if let Some(v) = &self.lp {
            run.lp = v.clone();
        }
        if self.ld.is_some() {
            run.ld = self.ld;
        }
        if let Some(v) = self.q0_frac {
            run.q0_frac = v;
        }
        if let Some(v) = self.q0_grid {
            run.q0_grid = v;
        }
        if let Some(v) = self.quad_order {
            run.quad_order = v;
        }
        if let Some(v) = self.blocks {
            run.blocks = v;
        }
        if let Some(v) = self.seed {
            run.seed = v;
        }
        if let Some(v) = self.mode {
            run.mode = v.into();
        }
        run.monte_carlo |= self.mc;
        run.adaptive |= self.adaptive;
        if self.rho_p.is_some() {
            run.rho_p = self.rho_p;
        }
        if let Some(v) = self.g_max {
            run.g_max = v;
        }
        if let Some(v) = self.g_points {
            run.g_points = v;
        }
        if let Some(v) = self.format {
            run.format = v;
        }
        if self.output.is_some() {
            run.output = self.output.clone();
        }
        Ok(run)
    }
}

fn emit<R: Render>(result: &R, run: &RunConfig) -> Result<()> {
    write_output(&result.render(run.format), run.output.as_deref())
}

type Action = Box<dyn FnOnce(&RunConfig) -> Result<ExitCode>>;

fn execute(command: Command) -> Result<ExitCode> {
    let (common, action): (Common, Action) = match command {
        Command::Solve(c) => (
            c,
            Box::new(|run| emit(&cmd_solve(run)?, run).map(|()| ExitCode::SUCCESS)),
        ),
        Command::Sweep {
            figure: Figure::PolicyCurve,
            common,
        }
        | Command::PolicyCurve(common) => (
            common,
            Box::new(|run| emit(&cmd_policy_curve(run)?, run).map(|()| ExitCode::SUCCESS)),
        ),
        Command::Sweep { figure, common } => (
            common,
            Box::new(move |run| emit(&cmd_sweep(run, figure)?, run).map(|()| ExitCode::SUCCESS)),
        ),
        Command::Verify(c) => (
            c,
            Box::new(|run| {
                let report = cmd_verify(run)?;
                emit(&report, run)?;
                for check in report.failures() {
                    eprintln!(
                        "FAILED {}: {} > {} ({})",
                        check.name, check.measured, check.tolerance, check.detail
                    );
                }
                Ok(if report.passed {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(2)
                })
            }),
        ),
    };
    let run = common.run_config()?;
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| {
                Error::InvalidConfig(format!("cannot start {threads} worker threads: {e}"))
            })?;
    }
    action(&run)
}

fn main() -> ExitCode {
    // clap's own usage errors exit with 2, which is reserved for solver failures here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
