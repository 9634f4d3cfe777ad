//! Experiment orchestration: single runs, batches, sweeps, CSV rows,
//! group comparison and trace replay.

use std::fmt;
use std::io;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scenario::{Scenario, ScenarioError};
use crate::trace::{hash_file, read_header, HeaderError, TraceMode};
use crate::world::{simulate, RunOptions, RunOutput, SimError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("run {scenario} seed {seed}: {source}")]
    Sim {
        scenario: String,
        seed: u64,
        source: SimError,
    },
    #[error("run {scenario} seed {seed} panicked: {message}")]
    Panic {
        scenario: String,
        seed: u64,
        message: String,
    },
    #[error("run {scenario} seed {seed} failed its delivery audit: {message}")]
    Audit {
        scenario: String,
        seed: u64,
        message: String,
    },
    #[error(transparent)]
    Header(#[from] HeaderError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Compare(#[from] CompareError),
}

impl ExperimentError {
    /// True when the failure lies in the inputs rather than in a run.
    pub fn is_config_error(&self) -> bool {
        match self {
            ExperimentError::Scenario(_)
            | ExperimentError::Header(_)
            | ExperimentError::Csv(_)
            | ExperimentError::Compare(_) => true,
            ExperimentError::Sim { source, .. } => {
                matches!(source, SimError::Scenario(_) | SimError::Placement(_))
            }
            _ => false,
        }
    }
}

/// A fully resolved scenario plus the overrides that produced it.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub scenario: Scenario,
    pub overrides: Vec<String>,
}

impl RunSpec {
    pub fn new(base: &Scenario, overrides: &[String]) -> Result<RunSpec, ScenarioError> {
        let mut scenario = base.clone();
        for o in overrides {
            scenario.apply_override(o)?;
        }
        scenario.validate()?;
        Ok(RunSpec {
            scenario,
            overrides: overrides.to_vec(),
        })
    }

    /// Content hash of the resolved scenario; equal ids mean identical runs.
    pub fn run_id(&self) -> String {
        let digest = Sha256::digest(self.scenario.to_toml().as_bytes());
        hex::encode(&digest[..6])
    }
}

/// One CSV row. Column order is the output schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub run_id: String,
    pub variant: String,
    pub routing: String,
    pub scenario: String,
    pub seed: u64,
    pub speed_mps: f64,
    pub throughput_bps: f64,
    pub loss_pct: f64,
    pub avg_delay_s: Option<f64>,
    pub overhead_pkts: u64,
    pub pack: bool,
    pub overhead_ratio: f64,
    /// Overrides applied to the named scenario, `;`-separated.
    pub overrides: String,
}

impl Row {
    pub fn from_output(spec: &RunSpec, out: &RunOutput) -> Row {
        let sc = &spec.scenario;
        let s = &out.summary;
        Row {
            run_id: spec.run_id(),
            variant: sc.variant.name().to_string(),
            routing: sc.routing.name().to_string(),
            scenario: sc.name.clone(),
            seed: sc.seed,
            speed_mps: sc.speed_mps(),
            throughput_bps: s.throughput_bps,
            loss_pct: s.loss_pct,
            avg_delay_s: s.avg_delay_s,
            overhead_pkts: s.overhead_pkts,
            pack: sc.pack_enabled,
            overhead_ratio: s.overhead_ratio,
            overrides: spec.overrides.join(";"),
        }
    }

    /// Textual value of a column, for filtering.
    pub fn field(&self, name: &str) -> Option<String> {
        Some(match name {
            "run_id" => self.run_id.clone(),
            "variant" => self.variant.clone(),
            "routing" => self.routing.clone(),
            "scenario" => self.scenario.clone(),
            "seed" => self.seed.to_string(),
            "speed_mps" => self.speed_mps.to_string(),
            "pack" => self.pack.to_string(),
            "overrides" => self.overrides.clone(),
            _ => return None,
        })
    }

    /// Rebuilds the run this row came from.
    pub fn spec(&self) -> Result<RunSpec, ScenarioError> {
        let base = Scenario::load(&self.scenario)?;
        let overrides: Vec<String> = self
            .overrides
            .split(';')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        RunSpec::new(&base, &overrides)
    }
}

/// Runs one simulation; panics and failed audits become errors naming the
/// scenario and seed.
pub fn run_one(spec: &RunSpec, opts: &RunOptions) -> Result<(Row, RunOutput), ExperimentError> {
    let sc = &spec.scenario;
    let fail = |message: String| (sc.name.clone(), sc.seed, message);
    let out = match catch_unwind(AssertUnwindSafe(|| simulate(sc, opts))) {
        Ok(Ok(out)) => out,
        Ok(Err(source)) => {
            return Err(ExperimentError::Sim {
                scenario: sc.name.clone(),
                seed: sc.seed,
                source,
            })
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            let (scenario, seed, message) = fail(message);
            return Err(ExperimentError::Panic {
                scenario,
                seed,
                message,
            });
        }
    };
    if let Err(message) = &out.audit {
        let (scenario, seed, message) = fail(message.clone());
        return Err(ExperimentError::Audit {
            scenario,
            seed,
            message,
        });
    }
    Ok((Row::from_output(spec, &out), out))
}

/// Applies `f` to every spec, in parallel when the `parallel` feature is on.
/// Results keep the order of `specs`.
pub fn batch_map<T, F>(specs: &[RunSpec], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&RunSpec) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        specs.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        specs.iter().map(f).collect()
    }
}

/// Same as [`batch_map`] but always on the calling thread.
pub fn batch_map_sequential<T, F>(specs: &[RunSpec], f: F) -> Vec<T>
where
    F: Fn(&RunSpec) -> T,
{
    specs.iter().map(f).collect()
}

fn row_only(spec: &RunSpec) -> Result<Row, ExperimentError> {
    run_one(spec, &RunOptions::default()).map(|(row, _)| row)
}

pub fn run_batch(specs: &[RunSpec]) -> Vec<Result<Row, ExperimentError>> {
    batch_map(specs, row_only)
}

pub fn run_batch_sequential(specs: &[RunSpec]) -> Vec<Result<Row, ExperimentError>> {
    batch_map_sequential(specs, row_only)
}

/// Parses `key=v1,v2,...`.
pub fn parse_vary(spec: &str) -> Result<(String, Vec<String>), ScenarioError> {
    let bad = |why: &str| ScenarioError::Override(spec.to_string(), why.to_string());
    let (k, vs) = spec.split_once('=').ok_or_else(|| bad("expected key=v1,v2,..."))?;
    let values: Vec<String> = vs
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(str::to_string)
        .collect();
    if k.trim().is_empty() || values.is_empty() {
        return Err(bad("expected key=v1,v2,..."));
    }
    Ok((k.trim().to_string(), values))
}

/// Cartesian product of the varied keys on top of `fixed` overrides. The
/// first varied key changes slowest.
pub fn sweep(
    base: &Scenario,
    fixed: &[String],
    vary: &[(String, Vec<String>)],
) -> Result<Vec<RunSpec>, ScenarioError> {
    let mut combos: Vec<Vec<String>> = vec![fixed.to_vec()];
    for (key, values) in vary {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push(format!("{key}={v}"));
                    c
                })
            })
            .collect();
    }
    combos.iter().map(|c| RunSpec::new(base, c)).collect()
}

/// The default mobility sweep, in m/s.
pub const DEFAULT_SPEEDS: [&str; 5] = ["1", "5", "10", "15", "20"];

pub fn write_csv<W: io::Write>(out: W, rows: &[Row], header: bool) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends rows to a CSV file, writing the header only to a new or empty file.
pub fn append_csv(path: &Path, rows: &[Row]) -> Result<(), ExperimentError> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    write_csv(f, rows, fresh)?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<Row>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("bad filter `{0}`: expected column=value[,column=value...]")]
    BadFilter(String),
    #[error("filter `{0}` names unknown column `{1}`")]
    UnknownColumn(String, String),
    #[error("no rows match filter `{0}`")]
    EmptyGroup(String),
}

/// Conjunction of `column=value` tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    text: String,
    terms: Vec<(String, String)>,
}

impl Filter {
    pub fn parse(text: &str) -> Result<Filter, CompareError> {
        let mut terms = Vec::new();
        for t in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| CompareError::BadFilter(text.to_string()))?;
            terms.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Filter {
            text: text.to_string(),
            terms,
        })
    }

    pub fn matches(&self, row: &Row) -> Result<bool, CompareError> {
        for (k, v) in &self.terms {
            let got = row
                .field(k)
                .ok_or_else(|| CompareError::UnknownColumn(self.text.clone(), k.clone()))?;
            let equal = match (got.parse::<f64>(), v.parse::<f64>()) {
                (Ok(a), Ok(b)) => a == b,
                _ => got.eq_ignore_ascii_case(v),
            };
            if !equal {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl GroupStats {
    pub fn of(values: &[f64]) -> Option<GroupStats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        Some(GroupStats {
            n,
            mean: values.iter().sum::<f64>() / n as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Percent change of `treatment` relative to `baseline`.
pub fn pct_change(baseline: f64, treatment: f64) -> Option<f64> {
    if baseline == 0.0 {
        (treatment == 0.0).then_some(0.0)
    } else {
        Some(100.0 * (treatment - baseline) / baseline)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delta {
    pub metric: &'static str,
    pub baseline: Option<GroupStats>,
    pub treatment: Option<GroupStats>,
    /// (treatment - baseline) / baseline of the means, in percent.
    pub pct: Option<f64>,
}

pub const METRICS: [&str; 5] = [
    "throughput_bps",
    "loss_pct",
    "avg_delay_s",
    "overhead_pkts",
    "overhead_ratio",
];

fn metric(row: &Row, name: &str) -> Option<f64> {
    match name {
        "throughput_bps" => Some(row.throughput_bps),
        "loss_pct" => Some(row.loss_pct),
        "avg_delay_s" => row.avg_delay_s,
        "overhead_pkts" => Some(row.overhead_pkts as f64),
        "overhead_ratio" => Some(row.overhead_ratio),
        _ => None,
    }
}

pub fn compare(rows: &[Row], baseline: &Filter, treatment: &Filter) -> Result<Vec<Delta>, CompareError> {
    let pick = |f: &Filter| -> Result<Vec<&Row>, CompareError> {
        let mut out = Vec::new();
        for r in rows {
            if f.matches(r)? {
                out.push(r);
            }
        }
        if out.is_empty() {
            return Err(CompareError::EmptyGroup(f.text.clone()));
        }
        Ok(out)
    };
    let (b, t) = (pick(baseline)?, pick(treatment)?);
    let stats = |group: &[&Row], m: &str| {
        let v: Vec<f64> = group.iter().filter_map(|r| metric(r, m)).collect();
        GroupStats::of(&v)
    };
    Ok(METRICS
        .iter()
        .map(|&m| {
            let (bs, ts) = (stats(&b, m), stats(&t, m));
            let pct = match (bs, ts) {
                (Some(x), Some(y)) => pct_change(x.mean, y.mean),
                _ => None,
            };
            Delta {
                metric: m,
                baseline: bs,
                treatment: ts,
                pct,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub scenario: String,
    pub seed: u64,
    pub recorded: String,
    pub rerun: String,
}

impl ReplayOutcome {
    pub fn matches(&self) -> bool {
        self.recorded == self.rerun
    }
}

/// Re-runs the scenario embedded in a trace file and compares digests.
pub fn replay(path: &Path) -> Result<ReplayOutcome, ExperimentError> {
    let sc = read_header(path)?;
    let recorded = hash_file(path)?;
    let spec = RunSpec {
        scenario: sc,
        overrides: Vec::new(),
    };
    let opts = RunOptions {
        trace: TraceMode::Hash,
        probe: false,
    };
    let (_, out) = run_one(&spec, &opts)?;
    Ok(ReplayOutcome {
        scenario: spec.scenario.name.clone(),
        seed: spec.scenario.seed,
        recorded,
        rerun: out.trace_hash.expect("hash mode yields a digest"),
    })
}
