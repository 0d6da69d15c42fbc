//! Command-line interface: data generation, teacher corpora, training,
//! tree generation and the evaluation studies.

/// `print!` that tolerates a closed stdout (e.g. piping into `head`).
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

/// `println!` that tolerates a closed stdout.
macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

mod data;
mod settings;
mod study;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "metatree", version, about = "Decision trees from classical builders and a learned split model")]
struct Cli {
    /// `key = value` file supplying defaults for any flag of the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write synthetic XOR datasets and their ground-truth specs.
    GenXor(data::GenXorArgs),
    /// Fit both teachers on sampled blocks of every dataset.
    BuildCorpus(data::BuildCorpusArgs),
    /// Train the split model on a corpus with the curriculum.
    Train(train::TrainArgs),
    /// Grow one tree with a trained model on a sampled block.
    GenTree(study::GenTreeArgs),
    /// Ensemble accuracy of several algorithms on shared blocks.
    Eval(study::EvalArgs),
    /// Average ranks and champion counts from an eval report.
    Rank(study::RankArgs),
    /// Empirical bias and variance of one algorithm.
    BiasVariance(study::BiasVarianceArgs),
    /// Which teacher the model's root splits resemble.
    Prefer(study::PreferArgs),
    /// Per-layer agreement of probed splits with the final split.
    Probe(study::ProbeArgs),
    /// Finite-difference check of the training loss gradient.
    GradCheck(train::GradCheckArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(metatree::Error),
}

impl From<metatree::Error> for CliError {
    fn from(e: metatree::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(metatree::Error::Io(e))
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.kind(),
        }
    }

    /// 2 usage, 3 data, 4 numeric abort.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(metatree::Error::Unsupported(_)) => 2,
            CliError::Core(metatree::Error::Numeric(_)) => 4,
            CliError::Core(_) => 3,
        }
    }

    fn message(&self) -> String {
        let m = match self {
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => {
                let text = e.to_string();
                // The bracketed kind already names the category.
                const PREFIXES: [&str; 6] =
                    ["contract violation: ", "validation error: ", "format error: ", "unsupported: ", "numeric abort: ", "csv error: "];
                PREFIXES.iter().find_map(|p| text.strip_prefix(p)).map_or(text.clone(), str::to_string)
            }
        };
        m.replace('\n', " ")
    }
}

/// Invocation details every output file records.
pub struct Ctx {
    pub command: String,
}

impl Ctx {
    pub fn header(&self, format: &str) -> String {
        metatree::analysis::preamble(format, &self.command, &[])
    }
}

fn command_line() -> String {
    std::env::args()
        .map(|a| if a.is_empty() || a.contains(char::is_whitespace) { format!("'{a}'") } else { a })
        .collect::<Vec<_>>()
        .join(" ")
}

fn run(cli: Cli) -> Result<(), CliError> {
    let s = Settings::load(cli.config.as_deref())?;
    let workers: Option<usize> = s.get("workers", cli.workers)?;
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure workers: {e}")))?;
    }
    let ctx = Ctx { command: command_line() };
    match cli.cmd {
        Cmd::GenXor(a) => data::gen_xor(a, &s, &ctx),
        Cmd::BuildCorpus(a) => data::build_corpus(a, &s, &ctx),
        Cmd::Train(a) => train::train(a, &s, &ctx),
        Cmd::GenTree(a) => study::gen_tree(a, &s, &ctx),
        Cmd::Eval(a) => study::eval(a, &s, &ctx),
        Cmd::Rank(a) => study::rank(a, &s, &ctx),
        Cmd::BiasVariance(a) => study::bias_variance_cmd(a, &s, &ctx),
        Cmd::Prefer(a) => study::prefer(a, &s, &ctx),
        Cmd::Probe(a) => study::probe(a, &s, &ctx),
        Cmd::GradCheck(a) => train::grad_check(a, &s, &ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", line.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
