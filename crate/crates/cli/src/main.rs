use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use perturbmc_cli::config::{load_input, load_model, parse_lags, RawInput};
use perturbmc_cli::figures::{cmd_figure, FigureArgs, FigureId};
use perturbmc_cli::validate::cmd_validate;
use perturbmc_cli::verify::{cmd_verify, Suite, VerifyArgs};
use perturbmc_cli::{finish_report, CliError};

/// Second-order statistics of Markov chains driven by a small input.
#[derive(Debug, Parser)]
#[command(name = "perturbmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check irreducibility, aperiodicity, zero row sums and the zero-mean input.
    Validate(Common),
    /// Write the CSV data behind one figure.
    Figure {
        #[arg(long, value_enum)]
        figure: FigureId,
        #[command(flatten)]
        common: Common,
    },
    /// Run a verification suite.
    Verify {
        #[arg(long, value_enum, default_value = "unit")]
        suite: Suite,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// `queue` or a JSON model file.
    #[arg(long, default_value = "queue")]
    model: String,
    /// `three-state` or a JSON input file.
    #[arg(long, default_value = "three-state")]
    input: String,
    /// Memory parameter of the three-state input.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Comma-separated ε values for sweeps.
    #[arg(long, value_delimiter = ',')]
    epsilon_grid: Option<Vec<f64>>,
    /// Lag window lo:hi.
    #[arg(long, default_value = "-5:5", allow_hyphen_values = true)]
    lags: String,
    /// Number of frequency points on [−π, π).
    #[arg(long, default_value_t = 1024)]
    grid: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Simulation length after burn-in.
    #[arg(long, default_value_t = 1_000_000)]
    steps: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

const DEFAULT_GAMMA: f64 = 0.4;
const DEFAULT_EPSILON: f64 = 0.3;

impl Common {
    fn input(&self) -> Result<RawInput, CliError> {
        load_input(&self.input, self.gamma.unwrap_or(DEFAULT_GAMMA))
    }

    fn epsilon(&self, input: &RawInput) -> f64 {
        self.epsilon.or(input.epsilon).unwrap_or(DEFAULT_EPSILON)
    }
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("PERTURBMC_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Validation(format!("PERTURBMC_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Validate(c) => {
            let input = c.input()?;
            let checks = cmd_validate(&c.model, &input, c.epsilon(&input))?;
            finish_report(&checks)
        }
        Command::Figure { figure, common: c } => {
            let input = c.input()?;
            let lags = parse_lags(&c.lags).map_err(CliError::Validation)?;
            let epsilons = c.epsilon_grid.clone().or(c.epsilon.map(|e| vec![e]));
            let args = FigureArgs {
                model: load_model(&c.model)?,
                input,
                gamma: c.gamma,
                epsilons,
                lags,
                grid: c.grid,
                seed: c.seed,
                steps: c.steps,
            };
            for p in cmd_figure(figure, &args, &c.out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Verify { suite, common: c } => {
            let input = c.input()?;
            let args = VerifyArgs {
                model: load_model(&c.model)?,
                epsilon: c.epsilon(&input),
                input,
                grid: c.grid,
                seed: c.seed,
                steps: c.steps,
            };
            finish_report(&cmd_verify(suite, &args)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("perturbmc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
