mod commands;
mod svg;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fgd_core::experiment::AParam;

/// Forward-gradient regression experiments: simulate, evaluate theory,
/// verify, reproduce the rate study, plot.
#[derive(Debug, Parser)]
#[command(name = "fgd-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured replications; writes trajectories.csv and summary.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Exact risk curve and risk bound; writes theory.csv and summary.json.
    Theory {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare simulation with theory and print a z-score table.
    Verify {
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        #[arg(long, default_value_t = commands::DEFAULT_SEED)]
        seed: u64,
        /// Run the suites against deliberately wrong constants.
        #[arg(long, hide = true)]
        ablate: bool,
    },
    /// Ten forward-gradient runs and one SGD run at d = 10 or 100; writes CSV,
    /// summary and SVG.
    #[command(name = "reproduce-fig2")]
    ReproduceFig2 {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "10", value_parser = ["10", "100"])]
        d: String,
        #[arg(long, default_value_t = commands::DEFAULT_SEED)]
        seed: u64,
        /// Number of steps (default 10⁶).
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Render a trajectory CSV as a log-log SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dimension for the reference lines and the k⋆ marker.
        #[arg(long)]
        d: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    All,
    Thm1,
    Thm2,
    Thm3,
    Lemma1,
}

/// Command-line values that replace the configuration file's.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Switch to Σ = I_d with θ⋆ drawn from the seed.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Runs per configured method.
    #[arg(long)]
    pub runs: Option<u64>,
    /// Schedule parameter: a number or `log_d`.
    #[arg(long, value_parser = parse_a)]
    pub a: Option<AParam>,
    #[arg(long)]
    pub shared_data: bool,
    #[arg(long)]
    pub checkpoints: Option<usize>,
    /// Multiply the schedule by this factor.
    #[arg(long)]
    pub step_scale: Option<f64>,
}

fn parse_a(s: &str) -> Result<AParam, String> {
    if s == "log_d" {
        return Ok(AParam::LogD);
    }
    s.parse::<f64>()
        .map(AParam::Value)
        .map_err(|_| format!("expected a number or \"log_d\", got {s:?}"))
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            writeln!(
                buf,
                "[fgd-lab] {}: {}",
                record.level().as_str().to_lowercase(),
                record.args()
            )
        })
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let code = match cli.command {
        Command::Simulate { config, out, overrides } => commands::simulate(&config, &out, &overrides),
        Command::Theory { config, out, overrides } => commands::theory(&config, &out, &overrides),
        Command::Verify { suite, seed, ablate } => {
            let suites = match suite {
                SuiteArg::All => fgd_core::experiment::verify::Suite::ALL.to_vec(),
                SuiteArg::Thm1 => vec![fgd_core::experiment::verify::Suite::Thm1],
                SuiteArg::Thm2 => vec![fgd_core::experiment::verify::Suite::Thm2],
                SuiteArg::Thm3 => vec![fgd_core::experiment::verify::Suite::Thm3],
                SuiteArg::Lemma1 => vec![fgd_core::experiment::verify::Suite::Lemma1],
            };
            commands::verify(&suites, seed, ablate)
        }
        Command::ReproduceFig2 { out, d, seed, steps } => {
            let d = d.parse().expect("restricted by the parser");
            commands::reproduce_fig2(&out, d, seed, steps)
        }
        Command::Plot { input, out, d } => commands::plot(&input, &out, d),
    };
    ExitCode::from(code)
}
