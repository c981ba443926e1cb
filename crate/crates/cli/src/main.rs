use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use modelswitch::backends::UreqTransport;
use modelswitch::config::RunMode;
use modelswitch::theory::TieConvention;
use modelswitch_cli::{cmd_analyze, cmd_run, cmd_theory, parse_tie, write_analysis, CliError, RunArgs, TheoryCmd};

#[derive(Parser)]
#[command(name = "modelswitch", version, about = "Multi-model repeated sampling with consistency-based switching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a strategy over a dataset and write report files.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// switch, bon or self-consistency:<model>
        #[arg(long, default_value = "switch")]
        mode: RunMode,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Serve every generation from recorded fixtures in this directory.
        #[arg(long, conflicts_with = "record")]
        replay: Option<PathBuf>,
        /// Record every generation into this directory.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Exact evaluations over a distribution fixture.
    Theory {
        #[command(subcommand)]
        sub: TheorySub,
    },
    /// Entropy buckets and entropy/correctness correlation over run reports.
    Analyze {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Also write the table as CSV into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TheorySub {
    /// Mixture conditions for the first two fixture models.
    Prop1 {
        #[command(flatten)]
        common: Common,
    },
    /// Exact voting and switching accuracies per query.
    Expect {
        #[command(flatten)]
        common: Common,
        /// Samples per model; comma-separated for several.
        #[arg(long = "K", value_delimiter = ',', required = true)]
        k: Vec<usize>,
        #[arg(long, default_value = "ties-correct", value_parser = parse_tie)]
        tie: TieConvention,
    },
    /// Expected sample count under early exit.
    Calls {
        #[command(flatten)]
        common: Common,
        /// Total budget.
        #[arg(long = "K")]
        k: usize,
        /// Consistency probabilities per model, comma-separated; replaces --fixture.
        #[arg(long, value_delimiter = ',')]
        profile: Option<Vec<f64>>,
    },
    /// Event labels and the aggregate switching condition.
    Condition {
        #[command(flatten)]
        common: Common,
        /// Samples per model.
        #[arg(long = "K")]
        k: usize,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value = "ties-correct", value_parser = parse_tie)]
        tie: TieConvention,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            dataset,
            mode,
            out,
            seed,
            replay,
            record,
        } => {
            let args = RunArgs {
                config,
                dataset,
                mode,
                out,
                seed,
                replay,
                record,
            };
            let result = cmd_run(&args, Arc::new(UreqTransport))?;
            println!("{}", serde_json::to_string_pretty(&result.summary).expect("summary serializes"));
            eprintln!("wrote {}", result.dir.display());
        }
        Command::Theory { sub } => {
            let (cmd, common) = match sub {
                TheorySub::Prop1 { common } => (TheoryCmd::Prop1, common),
                TheorySub::Expect { common, k, tie } => (TheoryCmd::Expect { budgets: k, tie }, common),
                TheorySub::Calls { common, k, profile } => (TheoryCmd::Calls { budget: k, profile }, common),
                TheorySub::Condition { common, k, eps, tie } => (TheoryCmd::Condition { budget: k, eps, tie }, common),
            };
            let output = cmd_theory(&cmd, common.fixture.as_deref())?;
            if let modelswitch_cli::TheoryOutput::Condition { report, .. } = &output {
                println!("{}", serde_json::to_string_pretty(report).expect("report serializes"));
            }
            print!("{}", output.to_csv()?);
            if let Some(dir) = common.out {
                output.write(&dir)?;
            }
        }
        Command::Analyze { reports, out } => {
            let a = cmd_analyze(&reports)?;
            write_analysis(&a, &out)?;
            println!("{}", serde_json::to_string_pretty(&a).expect("analysis serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
