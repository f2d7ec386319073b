//! `symquant` runs the index, capacity, non-squeezing, quantization and
//! evolution experiments from a JSON config and emits a result envelope.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure. Errors
//! print one line on stderr: `error code=<n> kind=<kind> message=<quoted>`.

mod commands;
mod config;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use commands::{Failure, Outcome, Table};
use config::ConfigFile;

const DEFAULT_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "symquant", version, about = "Lagrangian index, capacity and semiclassical quantization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Leray, loop and argument indices plus the identity report.
    Index(Common),
    /// Closed-form capacities and volumes of ellipsoids and balls.
    Capacity(Common),
    /// Shadow areas of randomly mapped balls on conjugate planes.
    Nonsqueeze(Common),
    /// Keller–Maslov checks, oscillator levels and the waveform spectrum.
    Quantize(Common),
    /// Flows, Van Vleck propagation, Morse counts and shadows.
    Evolve(Common),
}

#[derive(Args)]
struct Common {
    /// JSON document `{"seed": .., "tol": .., "params": {..}}`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Json,
    Csv,
}

struct Resolved<P> {
    params: P,
    seed: u64,
    tol: f64,
}

fn load<P: DeserializeOwned + Default>(c: &Common) -> Result<Resolved<P>, Failure> {
    let file: ConfigFile<P> = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("invalid config: {e}")))?
        }
        None => ConfigFile {
            seed: None,
            tol: None,
            params: None,
        },
    };
    let tol = c.tol.or(file.tol).unwrap_or(DEFAULT_TOL);
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Failure::config("tol must be positive"));
    }
    Ok(Resolved {
        params: file.params.unwrap_or_default(),
        seed: c.seed.or(file.seed).unwrap_or(0),
        tol,
    })
}

fn write_output(c: &Common, name: &str, cfg: Value, results: Value, table: Table, started: Instant) -> Result<(), Failure> {
    let bytes = match c.format {
        Format::Json => {
            let envelope = json!({
                "tool": "symquant",
                "version": env!("CARGO_PKG_VERSION"),
                "command": name,
                "config": cfg,
                "results": results,
                "duration_seconds": started.elapsed().as_secs_f64(),
            });
            let mut v = serde_json::to_vec_pretty(&envelope).map_err(|e| Failure::config(e.to_string()))?;
            v.push(b'\n');
            v
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| Failure::config(format!("csv: {e}"));
            w.write_record(&table.headers).map_err(io)?;
            for row in &table.rows {
                w.write_record(row).map_err(io)?;
            }
            w.into_inner().map_err(|e| Failure::config(format!("csv: {e}")))?
        }
    };
    match &c.out {
        Some(path) => fs::write(path, bytes).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| Failure::config(format!("stdout: {e}"))),
    }
}

fn execute<P, F>(c: &Common, name: &str, run: F) -> Result<(), Failure>
where
    P: DeserializeOwned + Default + Serialize,
    F: FnOnce(&P, u64, f64) -> Outcome,
{
    let started = Instant::now();
    let r: Resolved<P> = load(c)?;
    let (results, table) = run(&r.params, r.seed, r.tol)?;
    let cfg = json!({
        "command": name,
        "seed": r.seed,
        "tol": r.tol,
        "format": c.format,
        "params": r.params,
    });
    write_output(c, name, cfg, results, table, started)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Index(c) => execute(c, "index", |p, seed, _| commands::run_index(p, seed)),
        Command::Capacity(c) => execute(c, "capacity", |p, _, tol| commands::run_capacity(p, tol)),
        Command::Nonsqueeze(c) => execute(c, "nonsqueeze", |p, seed, _| commands::run_nonsqueeze(p, seed)),
        Command::Quantize(c) => execute(c, "quantize", |p, _, tol| commands::run_quantize(p, tol)),
        Command::Evolve(c) => execute(c, "evolve", |p, _, _| commands::run_evolve(p)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error code={} kind={} message={:?}", f.code, f.kind, f.message);
            ExitCode::from(f.code as u8)
        }
    }
}
