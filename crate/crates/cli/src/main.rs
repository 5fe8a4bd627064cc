//! Batch front-end for the algebroid mechanics engine.
//!
//! Subcommands: `check` (structure equations and morphism residuals),
//! `simulate` (trajectory + conserved-quantity CSVs), `certify`
//! (stationarity + homotopy + reduction report), `reduce` (the rigid-body
//! reduction demo), `multipliers` (heavy-top multiplier diagnostics).
//!
//! Exit codes: 0 = all requested checks passed, 1 = numerical failure,
//! 2 = usage/config error. Verbosity via the `ALGEBROID_MECH_LOG`
//! environment variable (`info`, `debug`, ...).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{exit_code, Ctx};
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "algebroid-mech",
    about = "Lagrangian mechanics on Lie algebroids: checks, simulation, variational certification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the structure equations of an algebroid (and optionally a
    /// morphism) at random sample points.
    Check(CommonArgs),
    /// Integrate a Lagrangian system and write trajectory/conserved CSVs.
    Simulate(CommonArgs),
    /// Run the variational certification suites and write a JSON verdict.
    Certify(CommonArgs),
    /// Run the rigid-body reduction demo (Euler chart onto so(3)).
    Reduce(CommonArgs),
    /// Heavy-top Lagrange-multiplier diagnostics.
    Multipliers(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration (see docs/io-formats.md).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin algebroid name: tangent(N), so3, so3_r3, euler_chart_so3.
    #[arg(long)]
    builtin: Option<String>,
    /// Model preset: heavy_top, rigid_body, free_particle.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (default "out", or the config's out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed for all sampled data (default 42, or the config's seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate independent sample points / sections on a thread pool.
    #[arg(long)]
    parallel: bool,
    #[arg(long = "tol-structure")]
    tol_structure: Option<f64>,
    #[arg(long = "tol-morphism")]
    tol_morphism: Option<f64>,
    #[arg(long = "tol-stationarity")]
    tol_stationarity: Option<f64>,
    #[arg(long = "tol-route-gap")]
    tol_route_gap: Option<f64>,
    #[arg(long = "tol-homotopy")]
    tol_homotopy: Option<f64>,
    #[arg(long = "tol-reduction")]
    tol_reduction: Option<f64>,
    #[arg(long = "tol-multipliers")]
    tol_multipliers: Option<f64>,
}

impl CommonArgs {
    fn into_ctx(self) -> Result<Ctx, commands::CmdError> {
        let config = match &self.config {
            Some(path) => RunConfig::load(path).map_err(commands::CmdError::Config)?,
            None => RunConfig::default(),
        };
        let out_dir = self
            .out
            .clone()
            .or_else(|| config.out_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        let seed = self.seed.or(config.seed).unwrap_or(42);
        let mut tol = config.tolerances;
        if let Some(v) = self.tol_structure {
            tol.structure = v;
        }
        if let Some(v) = self.tol_morphism {
            tol.morphism = v;
        }
        if let Some(v) = self.tol_stationarity {
            tol.stationarity = v;
        }
        if let Some(v) = self.tol_route_gap {
            tol.route_gap = v;
        }
        if let Some(v) = self.tol_homotopy {
            tol.homotopy = v;
        }
        if let Some(v) = self.tol_reduction {
            tol.reduction = v;
        }
        if let Some(v) = self.tol_multipliers {
            tol.multipliers = v;
        }
        Ok(Ctx {
            config,
            builtin: self.builtin,
            preset: self.preset,
            out_dir,
            seed,
            parallel: self.parallel,
            tol,
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter("ALGEBROID_MECH_LOG")
            .default_filter_or("warn"),
    )
    .format_timestamp(None)
    .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Check(args) => args.into_ctx().and_then(|ctx| commands::cmd_check(&ctx)),
        Command::Simulate(args) => args.into_ctx().and_then(|ctx| commands::cmd_simulate(&ctx)),
        Command::Certify(args) => args.into_ctx().and_then(|ctx| commands::cmd_certify(&ctx)),
        Command::Reduce(args) => args.into_ctx().and_then(|ctx| commands::cmd_reduce(&ctx)),
        Command::Multipliers(args) => args
            .into_ctx()
            .and_then(|ctx| commands::cmd_multipliers(&ctx)),
    };
    ExitCode::from(u8::try_from(exit_code(result)).unwrap_or(1))
}
