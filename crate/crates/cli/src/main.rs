//! `ipwreserve`: config-driven reserving runs.
//!
//! Every subcommand reads one flat JSON config (`--config`) and applies
//! trailing `--key value` overrides. Exit codes: 0 success, 2 data or
//! configuration error, 3 model fit did not converge.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use ipwreserve::pipeline::{self, RunConfig};
use ipwreserve::report;
use ipwreserve::ReserveError;
use serde_json::{Map, Value};

const THREADS_VAR: &str = "IPWRESERVE_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "ipwreserve",
    version,
    about = "Inverse-probability-weighted claims reserving"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a population and write it with its per-date truth.
    Simulate(Args),
    /// Fit the reporting and payment models at each valuation date.
    Fit(Args),
    /// Estimate IBNS, RBNS, IBNR and outstanding counts.
    Reserve(Args),
    /// Build run-off triangles and chain-ladder projections.
    Triangle(Args),
    /// Compare IPW and chain ladder against known truth.
    Compare(Args),
    /// Pseudo-residual goodness-of-fit checks.
    Residuals(Args),
}

#[derive(clap::Args, Debug)]
struct Args {
    /// Flat JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides in `--key value` form, e.g. `--valuation_times 36,48 --trim true`.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY VALUE"
    )]
    overrides: Vec<String>,
}

/// Parses an override value as JSON, reading `a,b,c` as an array and
/// anything unparseable as a string.
fn override_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(|p| override_value(p.trim())).collect());
    }
    Value::String(raw.to_string())
}

fn apply_overrides(map: &mut Map<String, Value>, overrides: &[String]) -> anyhow::Result<()> {
    let mut it = overrides.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            bail!("expected --key, found {flag:?}");
        };
        let (key, raw) = match key.split_once('=') {
            Some((k, v)) => (k, v.to_string()),
            None => {
                let v = it
                    .next()
                    .with_context(|| format!("missing value for --{key}"))?;
                (key, v.clone())
            }
        };
        map.insert(key.replace('-', "_"), override_value(&raw));
    }
    Ok(())
}

fn load_config(args: &Args) -> anyhow::Result<RunConfig> {
    let mut map = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            match serde_json::from_str::<Value>(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
            {
                Value::Object(m) => m,
                _ => bail!("config {} is not a JSON object", path.display()),
            }
        }
        None => Map::new(),
    };
    apply_overrides(&mut map, &args.overrides)?;
    serde_json::from_value(Value::Object(map)).context("invalid config")
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_VAR}={raw:?} is not a count"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(command: &Command, config: &RunConfig) -> ipwreserve::Result<()> {
    let out = config.output_dir.as_path();
    match command {
        Command::Simulate(_) => {
            let sim = config
                .simulation()?
                .ok_or_else(|| ReserveError::InvalidInput("simulate needs sim_config".into()))?;
            let (_, truth) = ipwreserve::simulator::simulate_portfolio(&sim)?;
            let times = if config.valuation_times.is_empty() {
                Vec::new()
            } else {
                config.checked_times(&truth.population)?
            };
            report::write_simulation(out, &truth, &times)
        }
        Command::Fit(_) => report::write_fit_reports(out, &pipeline::run_fit(config)?),
        Command::Reserve(_) => {
            let (pf, _) = config.portfolio()?;
            let reports = pipeline::reserve_portfolio(&pf, config)?;
            report::write_reserve_reports(out, &pf, &reports, config.explain)
        }
        Command::Triangle(_) => {
            report::write_triangle_reports(out, &pipeline::run_triangle(config)?)
        }
        Command::Compare(_) => report::write_compare_report(out, &pipeline::run_compare(config)?),
        Command::Residuals(_) => {
            report::write_residual_reports(out, &pipeline::run_residuals(config)?)
        }
    }
}

fn write_diagnostics(out: &Path, err: &ReserveError) {
    if let ReserveError::NonConvergence(diag) = err {
        if std::fs::create_dir_all(out).is_ok() {
            let _ = report::write_json(out.join("diagnostics.json"), diag.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = match &cli.command {
        Command::Simulate(a)
        | Command::Fit(a)
        | Command::Reserve(a)
        | Command::Triangle(a)
        | Command::Compare(a)
        | Command::Residuals(a) => a,
    };
    let config = match configure_threads().and_then(|()| load_config(args)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(&cli.command, &config) {
        Ok(()) => {
            println!("wrote {}", config.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                ExitCode::from(2)
            } else {
                write_diagnostics(&config.output_dir, &e);
                ExitCode::from(3)
            }
        }
    }
}
