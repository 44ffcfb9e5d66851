use std::io;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use semap_cli::{cmd_report, cmd_run, cmd_validate, RunOptions, Transport};
use semap_core::orchestration::Enforcement;

#[derive(Parser)]
#[command(name = "semap", version, about = "Validate, run and compare multi-agent workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnforcementArg {
    Strict,
    Permissive,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    #[value(name = "in_process")]
    InProcess,
    #[value(name = "http_loopback")]
    HttpLoopback,
}

#[derive(Subcommand)]
enum Command {
    /// Check a workflow file and print every error with its JSON path.
    Validate { workflow: PathBuf },
    /// Run a scenario and write trace.jsonl, failures.csv and summary.json.
    Run {
        #[arg(long)]
        workflow: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        enforcement: Option<EnforcementArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "in_process")]
        transport: TransportArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the failures.csv of a strict and a permissive run.
    Report {
        strict_dir: PathBuf,
        permissive_dir: PathBuf,
    },
}

fn main() {
    let filter = EnvFilter::try_from_env("SEMAP_LOG").unwrap_or_else(|_| EnvFilter::new("error"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .init();

    let cli = Cli::parse();
    let (mut out, mut err) = (io::stdout(), io::stderr());
    let code = match cli.command {
        Command::Validate { workflow } => cmd_validate(&workflow, &mut out, &mut err),
        Command::Run {
            workflow,
            scenario,
            enforcement,
            seed,
            transport,
            out: out_dir,
        } => {
            let opts = RunOptions {
                workflow_path: workflow,
                scenario_path: scenario,
                enforcement: enforcement.map(|e| match e {
                    EnforcementArg::Strict => Enforcement::Strict,
                    EnforcementArg::Permissive => Enforcement::Permissive,
                }),
                seed,
                out_dir,
                transport: match transport {
                    TransportArg::InProcess => Transport::InProcess,
                    TransportArg::HttpLoopback => Transport::HttpLoopback,
                },
            };
            cmd_run(&opts, &mut out, &mut err)
        }
        Command::Report {
            strict_dir,
            permissive_dir,
        } => cmd_report(&strict_dir, &permissive_dir, &mut out, &mut err),
    };
    std::process::exit(code);
}
