use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dri_manet::fixtures::fig6_topology;
use dri_manet::runner::{cmd_run, cmd_sweep, CellResult, RunOptions};
use dri_manet::{Mode, Scenario};

#[derive(Parser)]
#[command(name = "dri-manet", version, about = "MANET black-hole attack and DRI cross-check simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario over several seeds.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep one scenario field across values and modes.
    Sweep {
        scenario: PathBuf,
        /// Scenario key to vary, e.g. `speed_max_mps`.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Modes to run.
        #[arg(long, value_delimiter = ',', default_value = "baseline,attack,defense")]
        modes: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the built-in scenarios to a directory.
    Fixtures {
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Seeds as a list (`1,2,3`) or an inclusive range (`1-5`).
    #[arg(long, default_value = "1-5")]
    seeds: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write a frame-level event log per run next to the CSV.
    #[arg(long)]
    verbose_events: bool,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty seed range `{part}`");
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().with_context(|| format!("bad seed `{part}`"))?),
        }
    }
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

fn load(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scenario::parse(&text).with_context(|| format!("in {}", path.display()))
}

fn options(common: &Common) -> RunOptions {
    let mut dir = common.out.clone().into_os_string();
    dir.push(".events");
    RunOptions { jobs: common.jobs, event_dir: common.verbose_events.then(|| dir.into()) }
}

fn print_summary(r: &CellResult) {
    let label = match &r.cell.sweep_value {
        Some(v) => format!("{} {v}", r.cell.scenario.mode),
        None => r.cell.scenario.mode.to_string(),
    };
    println!("{label} ({} runs)", r.summary.runs);
    for (k, s) in &r.summary.stats {
        println!("  {k:<32} mean {:>12.4}  sd {:>10.4}  min {:>12.4}  max {:>12.4}", s.mean, s.stddev, s.min, s.max);
    }
    let flagged: Vec<String> = r.summary.flagged_in_all.iter().map(|&n| r.cell.scenario.label(n)).collect();
    println!("  flagged in every run: {}", if flagged.is_empty() { "-".into() } else { flagged.join(";") });
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { scenario, common } => {
            let sc = load(&scenario)?;
            let result = cmd_run(&sc, &parse_seeds(&common.seeds)?, &common.out, &options(&common))?;
            print_summary(&result);
        }
        Command::Sweep { scenario, key, values, modes, common } => {
            let sc = load(&scenario)?;
            let modes =
                modes.iter().map(|m| m.parse::<Mode>()).collect::<Result<Vec<_>, _>>().map_err(anyhow::Error::msg)?;
            let results =
                cmd_sweep(&sc, &key, &values, &modes, &parse_seeds(&common.seeds)?, &common.out, &options(&common))?;
            for r in &results {
                print_summary(r);
            }
        }
        Command::Fixtures { out_dir } => {
            fs::create_dir_all(&out_dir)?;
            let fig6 = out_dir.join("fig6.scenario");
            fs::write(&fig6, fig6_topology().scenario.to_text())?;
            let table2 = out_dir.join("table2.scenario");
            fs::write(&table2, Scenario::default().to_text())?;
            println!("{}\n{}", fig6.display(), table2.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
