use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use unfold_por_core::explorer::{explore, ExploreOptions, SelectionStrategy};
use unfold_por_core::model::parse_program;
use unfold_por_core::report::{stats, JsonReport};

const EXIT_OK: u8 = 0;
const EXIT_FOUND: u8 = 1;
const EXIT_LIMIT: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Emit {
    Json,
    DotUnfolding,
    DotTree,
    Stats,
}

/// Explore every partial-order run of a small concurrent program and report
/// deadlocks and data races.
#[derive(Debug, Parser)]
#[command(
    name = "unfold-por",
    version,
    after_help = "Exit status:\n  0  explored completely, no deadlock or race\n  1  a deadlock or data race was found\n  2  a resource limit was hit (the report is partial)\n  3  usage, parse or I/O error"
)]
struct Cli {
    /// Program in the .cp language.
    input: PathBuf,

    /// Order in which pending tree nodes are explored: fifo, lifo or random:SEED.
    #[arg(long, default_value = "fifo")]
    strategy: SelectionStrategy,

    /// Prune events whose state was already reached by a smaller history.
    #[arg(long, value_enum, default_value = "on")]
    cutoffs: Switch,

    #[arg(long, default_value_t = 1_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    max_events: u64,

    #[arg(long, default_value_t = 1_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    max_nodes: u64,

    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,

    /// Artifacts to produce, comma-separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "stats")]
    emit: Vec<Emit>,

    /// Directory for report.json, unfolding.dot and tree.dot.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(cli: Cli) -> Result<u8, String> {
    let text = std::fs::read_to_string(&cli.input).map_err(|e| format!("{}: {e}", cli.input.display()))?;
    let program = parse_program(&text).map_err(|e| format!("{}: {e}", cli.input.display()))?;
    let time_limit = match cli.time_limit {
        Some(t) if t.is_finite() && t > 0.0 => Some(Duration::from_secs_f64(t)),
        Some(t) => return Err(format!("invalid time limit {t}")),
        None => None,
    };
    let opts = ExploreOptions {
        strategy: cli.strategy,
        cutoffs: cli.cutoffs == Switch::On,
        max_events: cli.max_events as usize,
        max_nodes: cli.max_nodes as usize,
        time_limit,
        ..Default::default()
    };
    let x = explore(Arc::new(program), &opts).map_err(|e| e.to_string())?;
    let name = cli.input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    for emit in &cli.emit {
        match emit {
            Emit::Json => write(&cli.out_dir, "report.json", &JsonReport::new(&name, &opts, &x.report).to_json())?,
            Emit::DotUnfolding => write(&cli.out_dir, "unfolding.dot", &x.store.to_dot())?,
            Emit::DotTree => write(&cli.out_dir, "tree.dot", &x.tree_dot())?,
            Emit::Stats => print!("{}", stats(&x.report)),
        }
    }
    for d in &x.report.deadlocks {
        let threads: Vec<String> = d.threads.iter().map(|t| format!("{} ({})", t.thread, t.reason)).collect();
        eprintln!("deadlock: {}", threads.join(", "));
    }
    for r in &x.report.races {
        eprintln!("data race on {}: events {} and {}", r.variable, r.event_a.0, r.event_b.0);
    }
    Ok(if let Some(limit) = x.report.incomplete {
        eprintln!("resource limit hit: {limit:?}");
        EXIT_LIMIT
    } else if x.report.err() > 0 {
        EXIT_FOUND
    } else {
        EXIT_OK
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
