//! Event trace: a versioned text log, hashed as it is written.

use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::scenario::Scenario;
use crate::sim::{NodeId, SimTime};

pub const TRACE_VERSION: &str = "# packsim-trace v1";
const SCENARIO_PREFIX: &str = "# scenario ";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum TraceMode {
    #[default]
    Off,
    /// Hash every line without writing it anywhere.
    Hash,
    /// Write to a file and hash.
    File(PathBuf),
}

/// Line format: `<time> <node> <layer> <kind> <fields>`.
pub struct Trace {
    hasher: Option<Sha256>,
    out: Option<BufWriter<File>>,
    buf: String,
    lines: u64,
}

impl Trace {
    pub fn new(mode: &TraceMode, scenario: &Scenario) -> io::Result<Trace> {
        let mut t = Trace {
            hasher: None,
            out: None,
            buf: String::new(),
            lines: 0,
        };
        match mode {
            TraceMode::Off => return Ok(t),
            TraceMode::Hash => {}
            TraceMode::File(p) => t.out = Some(BufWriter::new(File::create(p)?)),
        }
        t.hasher = Some(Sha256::new());
        let json = serde_json::to_string(scenario).expect("scenario serializes");
        t.raw_line(format_args!("{TRACE_VERSION}"));
        t.raw_line(format_args!("{SCENARIO_PREFIX}{json}"));
        Ok(t)
    }

    pub fn enabled(&self) -> bool {
        self.hasher.is_some()
    }

    fn raw_line(&mut self, args: fmt::Arguments<'_>) {
        self.buf.clear();
        self.buf.write_fmt(args).expect("string write");
        self.buf.push('\n');
        if let Some(h) = &mut self.hasher {
            h.update(self.buf.as_bytes());
        }
        if let Some(o) = &mut self.out {
            // A failed write surfaces on finish().
            let _ = o.write_all(self.buf.as_bytes());
        }
        self.lines += 1;
    }

    pub fn record(
        &mut self,
        now: SimTime,
        node: NodeId,
        layer: &str,
        kind: &str,
        fields: fmt::Arguments<'_>,
    ) {
        if self.enabled() {
            self.raw_line(format_args!("{now} {node} {layer} {kind} {fields}"));
        }
    }

    pub fn lines(&self) -> u64 {
        self.lines
    }

    /// Flushes the file and returns the hex digest of everything written.
    pub fn finish(self) -> io::Result<Option<String>> {
        if let Some(mut o) = self.out {
            o.flush()?;
        }
        Ok(self.hasher.map(|h| hex::encode(h.finalize())))
    }
}

/// Hex SHA-256 of a trace file's bytes.
pub fn hash_file(path: &Path) -> io::Result<String> {
    let mut h = Sha256::new();
    let mut f = File::open(path)?;
    io::copy(&mut f, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, thiserror::Error)]
pub enum HeaderError {
    #[error("trace io: {0}")]
    Io(#[from] io::Error),
    #[error("not a trace file: missing `{TRACE_VERSION}` header")]
    Version,
    #[error("trace header has no scenario line")]
    MissingScenario,
    #[error("trace scenario is unreadable: {0}")]
    Scenario(String),
}

/// Reads the scenario embedded in a trace header.
pub fn read_header(path: &Path) -> Result<Scenario, HeaderError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    match lines.next() {
        Some(Ok(l)) if l == TRACE_VERSION => {}
        Some(Err(e)) => return Err(e.into()),
        _ => return Err(HeaderError::Version),
    }
    let line = lines.next().ok_or(HeaderError::MissingScenario)??;
    let json = line
        .strip_prefix(SCENARIO_PREFIX)
        .ok_or(HeaderError::MissingScenario)?;
    serde_json::from_str(json).map_err(|e| HeaderError::Scenario(e.to_string()))
}
