use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use portfolio_vcg::Property;
use portfolio_vcg_cli::format::ResultFile;
use portfolio_vcg_cli::{cmd_allocate, cmd_price, cmd_qmap, cmd_verify, CliError, Tolerances};

#[derive(Parser)]
#[command(name = "portfolio-vcg", version, about = "Portfolio allocation of ad calls with VCG pricing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Allocate the ad-call pool across the offers in a market file.
    Allocate(FileArgs),
    /// Allocate and compute VCG prices.
    Price(FileArgs),
    /// Allocate and price a call-count (QMAP) instance.
    Qmap(FileArgs),
    /// Run randomized property checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    /// Where to write the result; stdout if omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Stationarity residual at which the solver stops.
    #[arg(long)]
    kkt_tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Slack allowed in property checks.
    #[arg(long)]
    eps_price: Option<f64>,
}

#[derive(Args)]
struct FileArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = PropertyArg::All)]
    property: PropertyArg,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum PropertyArg {
    Truthfulness,
    Ir,
    SecondPrice,
    Oracle,
    Qmap,
    All,
}

impl PropertyArg {
    fn properties(self) -> Vec<Property> {
        match self {
            PropertyArg::Truthfulness => vec![Property::Truthfulness],
            PropertyArg::Ir => vec![Property::IndividualRationality],
            PropertyArg::SecondPrice => vec![Property::SecondPrice],
            PropertyArg::Oracle => vec![Property::Oracle],
            PropertyArg::Qmap => vec![Property::QmapConsistency],
            PropertyArg::All => vec![
                Property::Truthfulness,
                Property::IndividualRationality,
                Property::SecondPrice,
                Property::Oracle,
            ],
        }
    }
}

impl Common {
    fn tolerances(&self) -> Tolerances {
        Tolerances { kkt_tol: self.kkt_tol, max_iter: self.max_iter, eps_price: self.eps_price }
    }
}

fn emit(result: &ResultFile, common: &Common) -> Result<(), CliError> {
    let body = match common.format {
        Format::Json => result.to_json(),
        Format::Text => result.to_text(),
    };
    match &common.output {
        Some(path) => std::fs::write(path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (outcome, common) = match &cli.command {
        Command::Allocate(a) => (cmd_allocate(&a.input, &a.common.tolerances()), &a.common),
        Command::Price(a) => (cmd_price(&a.input, &a.common.tolerances()), &a.common),
        Command::Qmap(a) => (cmd_qmap(&a.input, &a.common.tolerances()), &a.common),
        Command::Verify(v) => (
            cmd_verify(&v.property.properties(), v.seed, v.trials, &v.common.tolerances()),
            &v.common,
        ),
    };
    let result = match outcome {
        Ok(result) => emit(&result, common),
        Err(CliError::Violations(result)) => {
            emit(&result, common).and(Err(CliError::Violations(result)))
        }
        Err(e) => Err(e),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("portfolio-vcg: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
