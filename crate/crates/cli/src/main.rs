use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use zetrace::attacks::{render_table, run_attacks, Attack, AttackOptions};
use zetrace::{replay, scenarios, summarize, ScenarioLog, World, WorldConfig};

#[derive(Parser)]
#[command(name = "zetrace", version, about = "Proximity tracing simulator and attack harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario, write log.ndjson and summary.json.
    Run {
        /// Config file, or the name of a bundled scenario.
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// `all` or a comma-separated list of attacks to run against the scenario.
        #[arg(long)]
        attacks: Option<String>,
        /// Fail unless the oracle agrees and every attack matches its expected outcome.
        #[arg(long)]
        check: bool,
        /// 512-bit signer keys and unencrypted envelopes, for quick runs only.
        #[arg(long)]
        insecure_fast_crypto: bool,
        /// Salt guesses for the battleship experiment.
        #[arg(long, default_value_t = 100_000)]
        battleship_budget: u64,
    },
    /// Independently recompute bursts and alerts from a log.
    OracleReplay {
        #[arg(long)]
        log: PathBuf,
    },
    /// List the bundled scenarios.
    Scenarios,
}

fn load_config(spec: &str) -> Result<WorldConfig> {
    let path = Path::new(spec);
    if path.exists() {
        return WorldConfig::load(path).with_context(|| format!("loading {}", path.display()));
    }
    match scenarios::load(spec) {
        Some(cfg) => cfg.with_context(|| format!("bundled scenario {spec}")),
        None => bail!(
            "no config file or bundled scenario named {spec:?} (bundled: {})",
            scenarios::names().collect::<Vec<_>>().join(", ")
        ),
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

struct RunArgs {
    config: String,
    out: PathBuf,
    seed: Option<u64>,
    attacks: Option<String>,
    insecure_fast_crypto: bool,
    battleship_budget: u64,
}

/// Returns whether every check passed.
fn run(args: RunArgs) -> Result<bool> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.insecure_fast_crypto {
        cfg = cfg.insecure_fast_crypto();
    }
    let attacks = match &args.attacks {
        Some(list) => Attack::parse_list(list).map_err(anyhow::Error::msg)?,
        None => Vec::new(),
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let t = Instant::now();
    let world = World::run(cfg.clone())?;
    let simulate = ms(t);

    let t = Instant::now();
    let log_path = args.out.join("log.ndjson");
    world
        .log
        .write_ndjson(BufWriter::new(File::create(&log_path)?))
        .with_context(|| format!("writing {}", log_path.display()))?;
    let write_log = ms(t);

    let t = Instant::now();
    let oracle = replay(&world.log);
    let oracle_ms = ms(t);

    let t = Instant::now();
    let opts = AttackOptions {
        battleship_budget: args.battleship_budget,
        ..AttackOptions::default()
    };
    let reports = run_attacks(&attacks, &cfg, &opts)?;
    let attacks_ms = ms(t);

    let mut summary = summarize(&world.log);
    summary.timings_ms.insert("simulate".into(), simulate);
    summary.timings_ms.insert("write_log".into(), write_log);
    summary.timings_ms.insert("oracle".into(), oracle_ms);
    summary.timings_ms.insert("attacks".into(), attacks_ms);
    summary.oracle_diffs = Some(oracle.diffs.len());
    summary.attacks = reports;
    let summary_path = args.out.join("summary.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&summary_path)?), &summary)?;

    println!(
        "{} agents, {} slots: {} reports, {} bursts (max n = {}), {} alerted",
        summary.agents,
        summary.slots,
        summary.reports.ingested,
        summary.bursts,
        summary.max_burst_n,
        summary.alerts.alerted_agents
    );
    if let (Some(r), Some(p)) = (summary.detection.recall, summary.detection.precision) {
        println!("recall {r:.3}, precision {p:.3}");
    }
    println!("oracle: {} differences", oracle.diffs.len());
    for d in oracle.diffs.iter().take(20) {
        eprintln!("  {d}");
    }
    if !summary.attacks.is_empty() {
        print!("{}", render_table(&summary.attacks));
    }
    println!("wrote {} and {}", log_path.display(), summary_path.display());

    let attacks_ok = summary
        .attacks
        .iter()
        .all(|r| r.matches_expected() && r.control.passed());
    Ok(oracle.is_clean() && attacks_ok)
}

fn oracle_replay(path: &Path) -> Result<bool> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let log = ScenarioLog::read_ndjson(BufReader::new(file))?;
    let t = Instant::now();
    let report = replay(&log);
    let mut summary = summarize(&log);
    summary.timings_ms.insert("oracle".into(), ms(t));
    summary.oracle_diffs = Some(report.diffs.len());
    println!("{}", serde_json::to_string_pretty(&summary)?);
    for d in &report.diffs {
        eprintln!("diff: {d}");
    }
    Ok(report.is_clean())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            attacks,
            check,
            insecure_fast_crypto,
            battleship_budget,
        } => run(RunArgs {
            config,
            out,
            seed,
            attacks,
            insecure_fast_crypto,
            battleship_budget,
        })
        .map(|ok| ok || !check),
        Command::OracleReplay { log } => oracle_replay(&log),
        Command::Scenarios => {
            for name in scenarios::names() {
                println!("{name}");
            }
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
