//! `benchforge`: trigger benchmark runs, follow them, and work with the
//! archived results.
//!
//! Exit codes: 0 success, 1 user error (bad config, template, request or
//! arguments), 2 execution failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// `println!` that ends the process quietly once stdout is closed, as when
/// piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        if writeln!(std::io::stdout(), $($arg)*).is_err() {
            std::process::exit(0);
        }
    }};
}

mod records;
mod run;
mod workload;

#[derive(Parser)]
#[command(name = "benchforge", version, about = "Continuous benchmarking from the command line")]
struct Cli {
    /// Directory holding configs/, templates/, machines/ and schema.toml.
    #[arg(long, global = true, env = "BENCHFORGE_CONFIG_ROOT", default_value = ".")]
    config_root: PathBuf,
    #[arg(long, global = true, env = "BENCHFORGE_ARCHIVE", default_value = "archive")]
    archive: PathBuf,
    /// Where run directories and their event logs live.
    #[arg(long, global = true, env = "BENCHFORGE_WORKDIR", default_value = "work")]
    workdir: PathBuf,
    /// Tab-separated output, one typed record per line.
    #[arg(long, global = true)]
    porcelain: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and execute a run on each target machine; blocks until done.
    Run(run::RunArgs),
    /// Resolve, split and expand a request without running it.
    Plan(run::PlanArgs),
    /// Stage states of a run, from its event log.
    Status { run_id: String },
    /// Runs in the working directory with their progress.
    List,
    /// Archived records matching every filter.
    Query {
        /// `key OP value`, OP one of = != < <= > >= ~
        #[arg(long = "filter", short = 'f')]
        filters: Vec<String>,
    },
    /// Aggregate records over seeds into a scaling table.
    Analyze(records::AnalyzeArgs),
    /// Like analyze, and draw the scaling plot.
    Plot(records::PlotArgs),
    /// Relative change of every metric from one analysis to another.
    Diff { baseline: PathBuf, candidate: PathBuf },
    /// Attach annotations to a record.
    Annotate {
        record_id: String,
        /// `key=value`; values are typed like config values.
        pairs: Vec<String>,
        /// Annotate the record's exchange statistics under `exchange.*`.
        #[arg(long)]
        derive: bool,
    },
    /// The built-in spike-exchange benchmark.
    Workload(workload::WorkloadArgs),
}

#[derive(Args, Clone)]
pub struct Selection {
    pub record_ids: Vec<String>,
    #[arg(long = "filter", short = 'f')]
    pub filters: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Local,
    Mock,
}

pub struct Ctx {
    pub config_root: PathBuf,
    pub archive: PathBuf,
    pub workdir: PathBuf,
    pub porcelain: bool,
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    User(String),
    Exec(String),
}

impl Failure {
    pub fn user(e: impl ToString) -> Self {
        Failure::User(e.to_string())
    }

    pub fn exec(e: impl ToString) -> Self {
        Failure::Exec(e.to_string())
    }
}

impl From<benchforge::controller::ControllerError> for Failure {
    fn from(e: benchforge::controller::ControllerError) -> Self {
        if e.is_user_error() {
            Failure::user(e)
        } else {
            Failure::exec(e)
        }
    }
}

impl From<benchforge::provenance::ArchiveError> for Failure {
    fn from(e: benchforge::provenance::ArchiveError) -> Self {
        use benchforge::provenance::ArchiveError::*;
        match e {
            UnknownRecord(_) | InvalidName(_) | ReservedKey(_) | InvalidFilter(_) => Failure::user(e),
            Io { .. } | Corrupted { .. } => Failure::exec(e),
        }
    }
}

pub type CmdResult = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let ctx =
        Ctx { config_root: cli.config_root, archive: cli.archive, workdir: cli.workdir, porcelain: cli.porcelain };
    let result = match cli.command {
        Command::Run(args) => run::cmd_run(&ctx, &args),
        Command::Plan(args) => run::cmd_plan(&ctx, &args),
        Command::Status { run_id } => run::cmd_status(&ctx, &run_id),
        Command::List => run::cmd_list(&ctx),
        Command::Query { filters } => records::cmd_query(&ctx, &filters),
        Command::Analyze(args) => records::cmd_analyze(&ctx, &args),
        Command::Plot(args) => records::cmd_plot(&ctx, &args),
        Command::Diff { baseline, candidate } => records::cmd_diff(&ctx, &baseline, &candidate),
        Command::Annotate { record_id, pairs, derive } => records::cmd_annotate(&ctx, &record_id, &pairs, derive),
        Command::Workload(args) => workload::cmd_workload(&ctx, &args),
    };
    match result {
        Ok(code) => code,
        Err(Failure::User(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Exec(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
