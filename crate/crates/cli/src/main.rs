use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pipesched_cli::commands::{
    compare_artifacts, outcome_lines, simulate_artifacts, verify_outcomes, write_artifacts, Artifacts,
};
use pipesched_cli::manifest::{load, CliError, Format, Resolved};
use pipesched_core::export::to_json;

/// Simulate, verify and compare pipeline-parallel training schedules.
#[derive(Parser)]
#[command(name = "pipesched", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every (policy, depth, threshold) cell and write timelines, reports and Gantt charts.
    Simulate(Common),
    /// Run the verification suite; exit 1 if any check fails.
    Verify(Common),
    /// Write a per-policy comparison table for each (depth, n).
    Compare(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; defaults to the manifest's output_dir, then "out".
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact formats; repeatable or comma-separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    format: Vec<Format>,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn prepare(c: &Common) -> Result<(Resolved, PathBuf, Vec<Format>), CliError> {
    let mut r = load(&c.manifest)?;
    if let Some(s) = c.seed {
        r.seed = s;
    }
    if c.jobs == 0 {
        return Err(CliError::config("jobs", "positive", "--jobs must be ≥ 1"));
    }
    let out = c
        .out
        .clone()
        .or_else(|| r.manifest.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let formats = r.formats(&c.format);
    Ok((r, out, formats))
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.cmd {
        Cmd::Simulate(c) => {
            let (r, out, formats) = prepare(&c)?;
            let (a, table) = simulate_artifacts(&r, &formats, c.jobs)?;
            write_artifacts(&out, &a)?;
            print!("{table}");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Compare(c) => {
            let (r, out, formats) = prepare(&c)?;
            let (a, table) = compare_artifacts(&r, &formats, c.jobs)?;
            write_artifacts(&out, &a)?;
            print!("{table}");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Verify(c) => {
            let (r, out, _) = prepare(&c)?;
            let outcomes = verify_outcomes(&r, c.jobs)?;
            let mut a = Artifacts::new();
            a.insert("verify.json".into(), to_json(&outcomes).into_bytes());
            write_artifacts(&out, &a)?;
            print!("{}", outcome_lines(&outcomes));
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            println!("{} of {} checks passed", outcomes.len() - failed, outcomes.len());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("PIPESCHED_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::from(2)
        }
    }
}
