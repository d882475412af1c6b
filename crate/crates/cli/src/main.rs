use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use toner::ingest::SplitName;
use toner::pipeline::{run, Command, CommandArgs, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CommandName {
    Ingest,
    TrainMatcher,
    Calibrate,
    BuildDataset,
    Train,
    Predict,
    Eval,
    Sweep,
}

impl From<CommandName> for Command {
    fn from(c: CommandName) -> Self {
        match c {
            CommandName::Ingest => Command::Ingest,
            CommandName::TrainMatcher => Command::TrainMatcher,
            CommandName::Calibrate => Command::Calibrate,
            CommandName::BuildDataset => Command::BuildDataset,
            CommandName::Train => Command::Train,
            CommandName::Predict => Command::Predict,
            CommandName::Eval => Command::Eval,
            CommandName::Sweep => Command::Sweep,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Dev,
    Test,
}

impl From<Split> for SplitName {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => SplitName::Train,
            Split::Dev => SplitName::Dev,
            Split::Test => SplitName::Test,
        }
    }
}

/// Type-oriented generative NER workflow.
#[derive(Debug, Parser)]
#[command(name = "toner", version)]
struct Cli {
    command: CommandName,

    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Split for predict, eval and sweep.
    #[arg(long, value_enum)]
    split: Option<Split>,

    /// Comma-separated thresholds for sweep.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    grid: Option<Vec<f64>>,

    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Predictions file for eval.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let mut config = match RunConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    if let Some(out) = cli.out {
        config.set_out_dir(out);
    }
    let command = Command::from(cli.command);
    let args = CommandArgs {
        split: cli.split.map(Into::into),
        grid: cli.grid,
        predictions: cli.predictions,
    };
    match run(command, &config, &args) {
        Ok(summary) => {
            println!("{command}: {summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {command}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
