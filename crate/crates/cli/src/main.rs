//! `tvt`: sample, score, search and rank-evaluate candidate ViTs with the
//! teacher-aware zero-cost proxy.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Run;
use config::{FileConfig, Overrides, Resolved};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "tvt", version, about = "Teacher-guided training-free ViT search")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed; every sampled genome and initialization derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Upper bound on scoring threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for result files and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Validate inputs and print the resolved configuration without scoring.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample genomes within the space's parameter budget (JSON Lines).
    Sample {
        /// Bundled space name or path to a space JSON file.
        #[arg(long)]
        space: Option<String>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Output file (default: <out-dir>/population.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an existing genome file; scores are normalized over the file.
    Score {
        /// Genome JSON Lines file, e.g. from `sample`.
        #[arg(long)]
        genomes: PathBuf,
        #[command(flatten)]
        proxy: ProxyFlags,
        /// Output file (default: <out-dir>/scored.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a population, score it and report the best and top-k.
    Search {
        #[arg(long)]
        space: Option<String>,
        /// Population size N.
        #[arg(long, alias = "n")]
        population_size: Option<usize>,
        #[arg(long)]
        topk: Option<usize>,
        #[command(flatten)]
        proxy: ProxyFlags,
    },
    /// Kendall rank correlation between proxy scores and oracle accuracies.
    EvalRank {
        #[arg(long)]
        space: Option<String>,
        /// Candidates per run.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        /// Reuse one genome sample for every run.
        #[arg(long)]
        fix_genomes: bool,
        /// CSV accuracy table (`genome_hash,accuracy`).
        #[arg(long)]
        oracle_table: Option<PathBuf>,
        #[command(flatten)]
        proxy: ProxyFlags,
    },
}

#[derive(Args, Default)]
struct ProxyFlags {
    /// Teacher checkpoint directory (default: seeded random teacher).
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Scoring minibatch as a binary tensor file (B×C×H×W).
    #[arg(long)]
    batch: Option<PathBuf>,
}

fn resolve(common: &Common, mut flags: Overrides) -> anyhow::Result<Resolved> {
    let file = match &common.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    flags.seed = common.seed;
    flags.workers = common.workers;
    Ok(Resolved::new(file, flags))
}

type Action = Box<dyn FnOnce(&Run) -> anyhow::Result<()>>;

fn execute(cli: Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    let proxy_flags = |p: ProxyFlags| Overrides {
        teacher_checkpoint: p.teacher,
        batch_file: p.batch,
        ..Overrides::default()
    };
    let (flags, action): (Overrides, Action) = match cli.command {
        Command::Sample { space, n, out } => (
            Overrides { space, ..Overrides::default() },
            Box::new(move |r| commands::sample(r, n, out)),
        ),
        Command::Score { genomes, proxy, out } => (
            proxy_flags(proxy),
            Box::new(move |r| commands::score(r, &genomes, out)),
        ),
        Command::Search { space, population_size, topk, proxy } => (
            Overrides { space, population_size, topk, ..proxy_flags(proxy) },
            Box::new(commands::search),
        ),
        Command::EvalRank { space, n, runs, fix_genomes, oracle_table, proxy } => (
            Overrides {
                space,
                eval_n: n,
                eval_runs: runs,
                fix_genomes,
                oracle_table,
                ..proxy_flags(proxy)
            },
            Box::new(commands::eval_rank),
        ),
    };
    let cfg = resolve(c, flags)?;
    action(&Run {
        cfg: &cfg,
        out_dir: &c.out_dir,
        dry_run: c.dry_run,
    })
}

/// Error chain joined with `: `, skipping causes already spelled out by
/// the message above them.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let s = cause.to_string();
        if !msg.contains(&s) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&s);
        }
    }
    msg
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err
        .chain()
        .filter_map(|c| c.downcast_ref::<tvt_core::Error>())
        .any(|e| match e {
            // a missing input file is a configuration mistake, not a crash
            tvt_core::Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            e => e.is_config(),
        });
    if config {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TVT_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            let kind = if code == EXIT_CONFIG { "config" } else { "runtime" };
            let body = serde_json::json!({
                "error": { "kind": kind, "code": code, "message": describe(&err) }
            });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
