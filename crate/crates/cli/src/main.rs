//! `stresslab` — macro stress scenarios to portfolio tail risk, one stage per
//! subcommand. Every stage is idempotent: rerunning it on the same inputs
//! rewrites the same artifacts and manifest entries.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stresslab_cli::stages;
use stresslab_cli::{ChannelFilter, CliError, PortfolioFilter, StageCtx};

#[derive(Parser)]
#[command(
    name = "stresslab",
    about = "Structured macro stress scenarios -> factor shocks -> portfolio tail risk",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (JSON).
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,
    /// Output directory for run artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the configured run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Forbid network access (default). Pass --offline=false to allow a live provider.
    #[arg(long, global = true, default_value_t = true, action = clap::ArgAction::Set)]
    offline: bool,
    /// Generation provider: fixture | fixture:<path> | http(s)://<endpoint>.
    #[arg(long, global = true)]
    provider: Option<String>,
    /// Portfolio filter: A | B | both.
    #[arg(long, global = true, default_value = "both")]
    portfolio: String,
    /// Channel filter: vol | linear | nonlinear | all.
    #[arg(long, global = true, default_value = "all")]
    channel: String,
}

#[derive(Subcommand)]
enum Command {
    /// Freeze inputs: macro baselines, price panel summary, headline snapshots.
    Ingest(Common),
    /// Build the exact-scoring retrieval index over country profiles.
    Index(Common),
    /// Run the generation grid against the configured provider.
    Generate(Common),
    /// Apply the plausibility gate and rubric; append fixed benchmarks.
    Audit(Common),
    /// Fit the factor model, asset loadings, and calm/crisis covariance.
    FitFactors(Common),
    /// Price every accepted scenario through the three stress channels.
    Simulate(Common),
    /// Compute historical and econometric baseline tail risk.
    Baselines(Common),
    /// Compare crisis-window tail metrics against quiet baselines.
    Envelopes(Common),
    /// Dispersion, stability, ANOVA, fairness, and bootstrap CI tables.
    Diagnostics(Common),
    /// Render figures and the summary page from emitted tables.
    Report(Common),
    /// Re-hash artifacts on disk, or compare against another run's manifest.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Manifest of another run to compare against (replay check).
        #[arg(long)]
        against: Option<PathBuf>,
    },
}

fn init_workers() {
    if let Ok(value) = std::env::var("STRESSLAB_WORKERS") {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                // Ignore the error: a second init in the same process keeps the
                // first pool, which is fine for a CLI.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn ctx_from(common: &Common) -> Result<StageCtx, CliError> {
    StageCtx::load(
        &common.config,
        &common.out,
        common.seed,
        common.offline,
        common.provider.clone(),
        PortfolioFilter::parse(&common.portfolio)?,
        ChannelFilter::parse(&common.channel)?,
    )
}

fn run() -> Result<(), CliError> {
    init_workers();
    let cli = Cli::parse();
    match &cli.command {
        Command::Ingest(c) => stages::cmd_ingest(&ctx_from(c)?),
        Command::Index(c) => stages::cmd_index(&ctx_from(c)?),
        Command::Generate(c) => stages::cmd_generate(&ctx_from(c)?),
        Command::Audit(c) => stages::cmd_audit(&ctx_from(c)?),
        Command::FitFactors(c) => stages::cmd_fit_factors(&ctx_from(c)?),
        Command::Simulate(c) => stages::cmd_simulate(&ctx_from(c)?),
        Command::Baselines(c) => stages::cmd_baselines(&ctx_from(c)?),
        Command::Envelopes(c) => stages::cmd_envelopes(&ctx_from(c)?),
        Command::Diagnostics(c) => stages::cmd_diagnostics(&ctx_from(c)?),
        Command::Report(c) => stages::cmd_report(&ctx_from(c)?),
        Command::Verify { common, against } => {
            stages::cmd_verify(&ctx_from(common)?, against.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stresslab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
