//! `reltag`: train, run and score a cascade triple tagger from the shell.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reltag::encoder::EncoderKind;
use reltag::evaluation::MatchMode;

#[derive(Parser, Debug)]
#[command(
    name = "reltag",
    version,
    about = "Relational triple extraction by cascade binary tagging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write its directory, checkpointing each new best epoch
    Train(TrainArgs),
    /// Extract triples from a corpus with a trained model
    Extract(ExtractArgs),
    /// Score predictions against gold triples
    Eval(EvalArgs),
    /// Overlap-pattern and triple-count statistics of corpus files
    Stats(StatsArgs),
    /// Generate a synthetic corpus
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training corpus [config: paths.train]
    #[arg(long, alias = "train", value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Validation corpus used for early stopping [config: paths.val]
    #[arg(long, value_name = "PATH")]
    pub val: Option<PathBuf>,
    /// Model directory to write [config: paths.model]
    #[arg(long, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Encoder architecture [config: encoder.kind]
    #[arg(long, value_name = "KIND")]
    pub encoder: Option<EncoderKind>,
    /// Validation metric [config: mode]
    #[arg(long, value_name = "MODE")]
    pub mode: Option<MatchMode>,
    /// Tag threshold used during validation [config: threshold]
    #[arg(long, value_name = "F")]
    pub threshold: Option<f64>,
    /// Maximum number of epochs [config: train.max_epochs]
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Adam learning rate [config: train.learning_rate]
    #[arg(long, value_name = "F")]
    pub lr: Option<f64>,
    /// Epochs without improvement before stopping [config: train.patience]
    #[arg(long, value_name = "N")]
    pub patience: Option<usize>,
    /// Sentences per batch [config: train.batch_size]
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trained model directory [config: paths.model]
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,
    /// Corpus to read; only the text field is used [config: paths.test]
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Prediction file to write, one JSON record per line [config: paths.output]
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Tag threshold [config: threshold]
    #[arg(long, value_name = "F")]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Prediction file
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    /// Gold corpus [config: paths.test]
    #[arg(long, alias = "input", value_name = "PATH")]
    pub gold: Option<PathBuf>,
    /// Match criterion: partial (entity heads) or exact [config: mode]
    #[arg(long, value_name = "MODE")]
    pub mode: Option<MatchMode>,
    /// JSON report to write; the table goes beside it with a .txt extension [config: paths.output]
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Corpus files, one table each
    #[arg(long, required = true, num_args = 1.., value_name = "PATH")]
    pub input: Vec<PathBuf>,
    /// JSON file for the statistics
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of sentences [config: synth.sentences]
    #[arg(long, value_name = "N")]
    pub n: Option<usize>,
    /// Number of relations [config: synth.relations]
    #[arg(long, value_name = "N")]
    pub relations: Option<usize>,
    /// Upper bound on distinct words [config: synth.vocab_size]
    #[arg(long, value_name = "N")]
    pub vocab_size: Option<usize>,
    /// Normal, EPO and SEO proportions, e.g. 0.4,0.3,0.3 [config: synth.mix]
    #[arg(long, value_name = "N,E,S", value_delimiter = ',')]
    pub mix: Option<Vec<f64>>,
    /// Corpus file to write [config: paths.output]
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Extract(a) => commands::extract(a),
        Command::Eval(a) => commands::eval(a),
        Command::Stats(a) => commands::stats(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            failure.exit_code()
        }
    }
}
