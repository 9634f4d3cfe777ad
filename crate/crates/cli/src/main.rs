use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use packsim::experiment::{
    append_csv, compare, parse_vary, read_csv, replay, run_batch, run_one, sweep, write_csv,
    ExperimentError, Filter, RunSpec, DEFAULT_SPEEDS,
};
use packsim::{RunOptions, Scenario, TraceMode};

/// Directory for CSV and trace output; defaults to the working directory.
const OUT_ENV: &str = "PACKSIM_OUT";

#[derive(Parser)]
#[command(name = "packsim", version, about = "Simulate TCP variants over ad hoc routing")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and append its metrics row to results.csv.
    Run {
        /// Bundled scenario name or path to a TOML file.
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Scenario override `key=value`; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Skip writing the trace file.
        #[arg(long)]
        no_trace: bool,
        /// Print the full run summary as JSON to stdout instead of the CSV row.
        #[arg(long)]
        json: bool,
    },
    /// Run the cartesian product of varied keys; defaults to a speed sweep.
    Sweep {
        scenario: String,
        /// `key=v1,v2,...`; repeatable.
        #[arg(long, value_name = "KEY=V1,V2")]
        vary: Vec<String>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output CSV file name inside the output directory.
        #[arg(long, default_value = "sweep.csv")]
        csv: String,
    },
    /// Percent differences between two groups of CSV rows.
    Compare {
        csv: PathBuf,
        /// Filter such as `routing=aodv,pack=false`.
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        treatment: String,
    },
    /// Re-run the scenario recorded in a trace and check the digest.
    Replay { trace: PathBuf },
    /// List bundled scenarios.
    Scenarios,
}

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.into())
        } else {
            Failure::Run(e.into())
        }
    }
}

fn config<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

fn out_dir() -> Result<PathBuf, Failure> {
    let dir = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from);
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .map_err(config)?;
    Ok(dir)
}

fn resolve(scenario: &str, seed: Option<u64>, overrides: &[String]) -> Result<RunSpec, Failure> {
    let base = Scenario::load(scenario).map_err(config)?;
    let mut all = overrides.to_vec();
    if let Some(s) = seed {
        all.push(format!("seed={s}"));
    }
    RunSpec::new(&base, &all).map_err(config)
}

fn cmd_run(
    scenario: &str,
    seed: Option<u64>,
    overrides: &[String],
    no_trace: bool,
    json: bool,
) -> Result<(), Failure> {
    let spec = resolve(scenario, seed, overrides)?;
    let dir = out_dir()?;
    let trace_path = (!no_trace).then(|| {
        dir.join(format!(
            "{}-s{}-{}.trace",
            spec.scenario.name,
            spec.scenario.seed,
            spec.run_id()
        ))
    });
    let opts = RunOptions {
        trace: trace_path.clone().map_or(TraceMode::Off, TraceMode::File),
        probe: false,
    };
    let (row, out) = run_one(&spec, &opts)?;
    let csv_path = dir.join("results.csv");
    append_csv(&csv_path, std::slice::from_ref(&row))?;
    if json {
        let text = serde_json::to_string_pretty(&out.summary).map_err(|e| Failure::Run(e.into()))?;
        println!("{text}");
    } else {
        write_csv(std::io::stdout().lock(), &[row], true).map_err(|e| Failure::Run(e.into()))?;
    }
    eprintln!("appended {}", csv_path.display());
    if let Some(p) = trace_path {
        eprintln!("trace {}", p.display());
    }
    Ok(())
}

fn cmd_sweep(scenario: &str, vary: &[String], overrides: &[String], csv: &str) -> Result<(), Failure> {
    let base = Scenario::load(scenario).map_err(config)?;
    let mut axes = vary
        .iter()
        .map(|v| parse_vary(v))
        .collect::<Result<Vec<_>, _>>()
        .map_err(config)?;
    if axes.is_empty() {
        axes.push(("speed".into(), DEFAULT_SPEEDS.iter().map(|s| s.to_string()).collect()));
    }
    let specs = sweep(&base, overrides, &axes).map_err(config)?;
    let path = out_dir()?.join(csv);
    eprintln!("{} runs -> {}", specs.len(), path.display());
    let mut rows = Vec::new();
    let mut failed = 0;
    for (spec, r) in specs.iter().zip(run_batch(&specs)) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                failed += 1;
                eprintln!("error: {e} (overrides: {})", spec.overrides.join(";"));
            }
        }
    }
    append_csv(&path, &rows)?;
    if failed > 0 {
        return Err(Failure::Run(anyhow::anyhow!("{failed} of {} runs failed", specs.len())));
    }
    Ok(())
}

fn cmd_compare(csv: &Path, baseline: &str, treatment: &str) -> Result<(), Failure> {
    let file = std::fs::File::open(csv)
        .with_context(|| format!("opening {}", csv.display()))
        .map_err(config)?;
    let rows = read_csv(file).map_err(config)?;
    let b = Filter::parse(baseline).map_err(config)?;
    let t = Filter::parse(treatment).map_err(config)?;
    let deltas = compare(&rows, &b, &t).map_err(config)?;
    let fmt = |s: Option<packsim::experiment::GroupStats>| {
        s.map_or("-".to_string(), |s| {
            format!("{:.4} [{:.4}, {:.4}] n={}", s.mean, s.min, s.max, s.n)
        })
    };
    println!("baseline:  {b}\ntreatment: {t}");
    println!("{:<16} {:>12} {:<40} {}", "metric", "change", "baseline", "treatment");
    for d in deltas {
        let pct = d.pct.map_or("n/a".to_string(), |p| format!("{p:+.1}%"));
        println!(
            "{:<16} {:>12} {:<40} {}",
            d.metric,
            pct,
            fmt(d.baseline),
            fmt(d.treatment)
        );
    }
    Ok(())
}

fn cmd_replay(trace: &Path) -> Result<(), Failure> {
    let r = replay(trace)?;
    println!("scenario {} seed {}", r.scenario, r.seed);
    println!("recorded {}\nrerun    {}", r.recorded, r.rerun);
    if r.matches() {
        println!("identical");
        Ok(())
    } else {
        Err(Failure::Run(anyhow::anyhow!("trace differs from re-run")))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.cmd {
        Command::Run {
            scenario,
            seed,
            overrides,
            no_trace,
            json,
        } => cmd_run(scenario, *seed, overrides, *no_trace, *json),
        Command::Sweep {
            scenario,
            vary,
            overrides,
            csv,
        } => cmd_sweep(scenario, vary, overrides, csv),
        Command::Compare {
            csv,
            baseline,
            treatment,
        } => cmd_compare(csv, baseline, treatment),
        Command::Replay { trace } => cmd_replay(trace),
        Command::Scenarios => {
            for name in Scenario::bundled_names() {
                println!("{name}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("run failure: {e:#}");
            ExitCode::from(2)
        }
    }
}
