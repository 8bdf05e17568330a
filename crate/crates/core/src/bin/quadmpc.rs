//! Command-line front end: run one closed-loop scenario, sweep the
//! time-optimal parameter, or validate a configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quadmpc::config::{apply_override, Config};
use quadmpc::export::{errors_svg, inputs_svg, metrics_csv, sweep_csv, trace_csv, write_atomic};
use quadmpc::sim::{run_closed_loop, sweep_time_optimal, RunMetrics, SweepRow};
use quadmpc::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_SIMULATION: u8 = 3;

#[derive(Parser)]
#[command(name = "quadmpc", about = "Quadrotor MPC simulation toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Path to a JSON config; the embedded defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override a config key, e.g. --set controller.mode=LQR (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Assert that no random number generator is consulted. Always true;
    /// the flag documents that runs are deterministic.
    #[arg(long)]
    seedless: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario and write trace/metrics/plot artifacts.
    Run(CommonOpts),
    /// Sweep the time-optimal parameter against the LQR and MPC baselines.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated list of optimal times, e.g. --t-o 1,2,2.4,5,10
        #[arg(long = "t-o", value_name = "LIST")]
        t_o: String,
        /// Parallel sweep jobs (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Validate a config and print the fully resolved effective document.
    Validate(CommonOpts),
}

fn load_config(common: &CommonOpts) -> Result<Config, Error> {
    let mut value = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text).map_err(|e| {
                Error::InvalidConfig(format!("cannot parse config {}: {e}", path.display()))
            })?
        }
        None => Config::default().to_value(),
    };
    for spec in &common.set {
        apply_override(&mut value, spec)?;
    }
    let mut cfg = Config::from_value(value)?;
    if let Some(dir) = &common.out {
        cfg.output.dir = dir.display().to_string();
    }
    if common.seedless {
        eprintln!("seedless: no RNG is consulted anywhere in the simulation loop");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_metrics(label: &str, m: &RunMetrics) {
    println!("method: {label}");
    println!(
        "  total error [m*steps]  x: {:<12.4} y: {:<12.4} z: {:.4}",
        m.total_err[0], m.total_err[1], m.total_err[2]
    );
    println!(
        "  min error [m]          x: {:<12.3e} y: {:<12.3e} z: {:.3e}",
        m.min_err[0], m.min_err[1], m.min_err[2]
    );
    match m.flight_time {
        Some(t) => println!("  flight time [s]        {t}"),
        None => println!("  flight time [s]        - (threshold never met)"),
    }
}

fn cmd_run(common: &CommonOpts) -> Result<(), (u8, Error)> {
    let cfg = load_config(common).map_err(|e| (EXIT_CONFIG, e))?;
    let out_dir = Path::new(&cfg.output.dir);
    std::fs::create_dir_all(out_dir).map_err(|e| (EXIT_CONFIG, Error::Io(e)))?;

    let metrics =
        run_closed_loop(&cfg.scenario, &cfg.run_config()).map_err(|e| (EXIT_SIMULATION, e))?;

    let label = cfg.controller.mode.to_string();
    write_atomic(
        &out_dir.join("trace.csv"),
        trace_csv(&metrics.trace).as_bytes(),
    )
    .map_err(|e| (EXIT_SIMULATION, e))?;
    write_atomic(
        &out_dir.join("metrics.csv"),
        metrics_csv(&label, &metrics).as_bytes(),
    )
    .map_err(|e| (EXIT_SIMULATION, e))?;
    write_atomic(
        &out_dir.join("errors.svg"),
        errors_svg(&metrics.trace).as_bytes(),
    )
    .map_err(|e| (EXIT_SIMULATION, e))?;
    write_atomic(
        &out_dir.join("inputs.svg"),
        inputs_svg(&metrics.trace).as_bytes(),
    )
    .map_err(|e| (EXIT_SIMULATION, e))?;

    print_metrics(&label, &metrics);
    println!("artifacts written to {}", out_dir.display());
    Ok(())
}

fn print_sweep_table(rows: &[SweepRow]) {
    println!(
        "{:<14} {:>12} {:>12} {:>12} {:>12}",
        "method", "flight time", "total x", "total y", "total z"
    );
    for row in rows {
        match &row.outcome {
            Ok(m) => {
                let ft = m
                    .flight_time
                    .map(|v| format!("{v:.2}"))
                    .unwrap_or_else(|| "-".to_string());
                println!(
                    "{:<14} {:>12} {:>12.2} {:>12.2} {:>12.2}",
                    row.label, ft, m.total_err[0], m.total_err[1], m.total_err[2]
                );
            }
            Err(e) => println!("{:<14} failed: {e}", row.label),
        }
    }
}

fn cmd_sweep(common: &CommonOpts, t_o_spec: &str, jobs: Option<usize>) -> Result<(), (u8, Error)> {
    let cfg = load_config(common).map_err(|e| (EXIT_CONFIG, e))?;
    let t_o_list: Vec<f64> = t_o_spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim().parse::<f64>().map_err(|e| {
                (
                    EXIT_CONFIG,
                    Error::InvalidConfig(format!("bad --t-o entry '{s}': {e}")),
                )
            })
        })
        .collect::<Result<_, _>>()?;
    if t_o_list.is_empty() {
        return Err((
            EXIT_CONFIG,
            Error::InvalidConfig("--t-o list is empty".into()),
        ));
    }
    if let Some(n) = jobs {
        // One pool for the whole process; ignore failure if already set.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }

    let out_dir = Path::new(&cfg.output.dir);
    std::fs::create_dir_all(out_dir).map_err(|e| (EXIT_CONFIG, Error::Io(e)))?;

    let rows = sweep_time_optimal(&cfg.scenario, &cfg.run_config(), &t_o_list);

    write_atomic(&out_dir.join("sweep.csv"), sweep_csv(&rows).as_bytes())
        .map_err(|e| (EXIT_SIMULATION, e))?;
    for row in &rows {
        if let Ok(m) = &row.outcome {
            let name = format!(
                "trace_{}.csv",
                row.label.replace([' ', '='], "_").replace('.', "p")
            );
            write_atomic(&out_dir.join(name), trace_csv(&m.trace).as_bytes())
                .map_err(|e| (EXIT_SIMULATION, e))?;
        }
    }

    print_sweep_table(&rows);
    println!("artifacts written to {}", out_dir.display());

    if rows.iter().all(|r| r.outcome.is_err()) {
        return Err((
            EXIT_SIMULATION,
            Error::SimulationAborted("every sweep row failed".into()),
        ));
    }
    Ok(())
}

fn cmd_validate(common: &CommonOpts) -> Result<(), (u8, Error)> {
    let cfg = load_config(common).map_err(|e| (EXIT_CONFIG, e))?;
    println!("{}", cfg.to_pretty_json());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(common) => cmd_run(common),
        Command::Sweep { common, t_o, jobs } => cmd_sweep(common, t_o, *jobs),
        Command::Validate(common) => cmd_validate(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, err)) => {
            eprintln!("error: {err}");
            ExitCode::from(code)
        }
    }
}
