use std::fs;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use cpforce_cli::log::Log;
use cpforce_cli::table::{Metadata, Tolerances};
use cpforce_cli::{run, Command, RunError, Scenario};
use cpforce_core::thermalenv::PSD_TOLERANCE;
use serde_json::json;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_IO: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Nonequilibrium thermal Casimir-Polder rates, shifts and forces.
#[derive(Debug, Parser)]
#[command(name = "cpforce", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Warning log file (JSON lines); stderr when absent.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn report(kind: &str, key: Option<&str>, message: &str) {
    let mut v = json!({ "error": kind, "message": message });
    if let Some(k) = key {
        v["key"] = json!(k);
    }
    eprintln!("{v}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            report("validation", Some("--threads"), "thread count must be positive");
            return ExitCode::from(EXIT_VALIDATION);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            report("io", None, &e.to_string());
            return ExitCode::from(EXIT_IO);
        }
    }
    let mut log = match &cli.log {
        Some(p) => match Log::file(p) {
            Ok(l) => l,
            Err(e) => {
                report("io", Some("--log"), &format!("{}: {e}", p.display()));
                return ExitCode::from(EXIT_IO);
            }
        },
        None => Log::stderr(),
    };
    let text = match fs::read_to_string(&cli.scenario) {
        Ok(t) => t,
        Err(e) => {
            report("io", Some("--scenario"), &format!("{}: {e}", cli.scenario.display()));
            return ExitCode::from(EXIT_IO);
        }
    };
    let built = Scenario::from_toml(&text).and_then(|s| s.build().map(|m| (s, m)));
    let (scenario, model) = match built {
        Ok(v) => v,
        Err(e) => {
            report("validation", Some(&e.key), &e.message);
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    let table = match run(cli.command, &scenario, &model, &mut log) {
        Ok(t) => t,
        Err(RunError::Validation(e)) => {
            report("validation", Some(&e.key), &e.message);
            return ExitCode::from(EXIT_VALIDATION);
        }
        Err(RunError::Numerical(m)) => {
            report("non_convergence", None, &m);
            return ExitCode::from(EXIT_NUMERICAL);
        }
    };
    let metadata = Metadata {
        command: cli.command.name().to_string(),
        scenario_hash: scenario.hash(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        tolerances: Tolerances {
            rel_tol: scenario.numerics.rel_tol,
            matsubara_rel_tol: scenario.numerics.matsubara_rel_tol,
            psd_tolerance: PSD_TOLERANCE,
        },
    };
    let written = fs::File::create(&cli.out).and_then(|f| {
        let w = BufWriter::new(f);
        match cli.format {
            Format::Csv => table.write_csv(w),
            Format::Json => table.write_json(w, &metadata),
        }
    });
    if let Err(e) = written {
        report("io", Some("--out"), &format!("{}: {e}", cli.out.display()));
        return ExitCode::from(EXIT_IO);
    }
    let _ = io::Write::flush(&mut io::stdout());
    ExitCode::SUCCESS
}
