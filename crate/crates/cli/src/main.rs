use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use netmr::scenario::{run_scenario, RunOptions, Scenario};
use netmr::SimTime;

#[derive(Parser)]
#[command(name = "netmr", version, about = "Run network MapReduce scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and print results as JSON lines.
    Run {
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the run horizon, in microseconds.
        #[arg(long)]
        until: Option<u64>,
        /// Recompute every answer from the trace and compare.
        #[arg(long)]
        verify: bool,
        /// Output file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the packet event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

const EXIT_MISMATCH: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&std::env::var("NMR_LOG_LEVEL").unwrap_or_else(|_| "warn".into()))
        .init();
    match cli.command {
        Command::Run {
            scenario,
            seed,
            until,
            verify,
            out,
            trace,
        } => {
            let opts = RunOptions {
                seed,
                until: until.map(SimTime),
                verify,
                record_trace: trace.is_some(),
            };
            match run(&scenario, &opts, out.as_deref(), trace.as_deref()) {
                Ok(Some(false)) => {
                    eprintln!("verification failed");
                    ExitCode::from(EXIT_MISMATCH)
                }
                Ok(_) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(EXIT_CONFIG)
                }
            }
        }
    }
}

fn run(
    path: &Path,
    opts: &RunOptions,
    out: Option<&Path>,
    trace_path: Option<&Path>,
) -> anyhow::Result<Option<bool>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let scn = Scenario::from_json(&text).with_context(|| format!("in {}", path.display()))?;
    let outcome = run_scenario(&scn, opts)?;

    if let Some(tp) = trace_path {
        let f = File::create(tp).with_context(|| format!("creating {}", tp.display()))?;
        let mut w = BufWriter::new(f);
        outcome.trace.write_to(&mut w)?;
        w.flush()?;
    }

    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for rec in outcome.records() {
        serde_json::to_writer(&mut sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(outcome.verified())
}
