//! CSV tables with a `#` metadata preamble, and JSON error records.

use std::fs;
use std::path::{Path, PathBuf};

use ldp_core::simulator::RNG_NAME;
use ldp_core::Error;
use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance written at the top of every artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metadata {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl Metadata {
    pub fn preamble(&self) -> String {
        let mut s = format!(
            "# jumpldp {VERSION}\n# command {}\n# config_sha256 {}\n",
            self.command, self.config_hash
        );
        if let Some(seed) = self.seed {
            s.push_str(&format!("# seed {seed}\n# rng {RNG_NAME}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Column by header name.
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn to_csv(&self) -> Result<String, Error> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(vec![]);
        let io = |e: csv::Error| Error::InvalidConfig(format!("csv: {e}"));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parses a file written by [`Artifact::write`], skipping the preamble.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let body: String = text
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| format!("{l}\n"))
            .collect();
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let io = |e: csv::Error| Error::InvalidConfig(format!("csv: {e}"));
        let header = r.headers().map_err(io)?.iter().map(String::from).collect();
        let mut rows = vec![];
        for rec in r.records() {
            rows.push(rec.map_err(io)?.iter().map(String::from).collect());
        }
        Ok(Self { header, rows })
    }
}

/// Formats a float with the shortest representation that round-trips.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn nums(v: &[f64]) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|&x| num(x))
}

/// Column names `prefix_1 … prefix_d`.
pub fn indexed(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

#[derive(Debug, Clone)]
pub enum Content {
    Csv(Table),
    /// Preformatted text in a format that treats `#` lines as comments
    /// (path and trajectory files).
    Text(String),
    Json(serde_json::Value),
}

#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub content: Content,
}

impl Artifact {
    pub fn csv(name: impl Into<String>, table: Table) -> Self {
        Self {
            name: name.into(),
            content: Content::Csv(table),
        }
    }

    pub fn text(name: impl Into<String>, text: String) -> Self {
        Self {
            name: name.into(),
            content: Content::Text(text),
        }
    }

    pub fn json(name: impl Into<String>, value: &impl Serialize) -> Result<Self, Error> {
        Ok(Self {
            name: name.into(),
            content: Content::Json(serde_json::to_value(value)?),
        })
    }

    pub fn render(&self, meta: &Metadata) -> Result<String, Error> {
        Ok(match &self.content {
            Content::Csv(t) => format!("{}{}", meta.preamble(), t.to_csv()?),
            Content::Text(s) => format!("{}{}", meta.preamble(), s),
            Content::Json(v) => {
                let wrapped = serde_json::json!({
                    "version": VERSION,
                    "command": meta.command,
                    "config_sha256": meta.config_hash,
                    "seed": meta.seed,
                    "data": v,
                });
                let mut s = serde_json::to_string_pretty(&wrapped)?;
                s.push('\n');
                s
            }
        })
    }

    pub fn write(&self, dir: &Path, meta: &Metadata) -> Result<PathBuf, Error> {
        fs::create_dir_all(dir)?;
        let p = dir.join(&self.name);
        fs::write(&p, self.render(meta)?)?;
        Ok(p)
    }
}

/// Machine-readable failure description.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub status: &'static str,
    pub command: String,
    pub kind: String,
    pub message: String,
}

impl ErrorRecord {
    pub fn new(command: &str, err: &Error) -> Self {
        Self {
            status: "error",
            command: command.to_string(),
            kind: error_kind(err).to_string(),
            message: err.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{{\"status\":\"error\",\"message\":{:?}}}", self.message))
    }
}

pub fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::InvalidKernel(_) => "invalid_kernel",
        Error::InvalidField(_) => "invalid_field",
        Error::BoundViolation { .. } => "bound_violation",
        Error::NonFinite(_) => "non_finite",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::SamplerExhausted { .. } => "sampler_exhausted",
        Error::CutoffOverflow { .. } => "cutoff_overflow",
        Error::NonConvergence { .. } => "non_convergence",
        Error::OutsideGamma => "outside_gamma",
        Error::IllConditioned { .. } => "ill_conditioned",
        Error::SearchRadiusOverflow { .. } => "search_radius_overflow",
        Error::InvalidPath(_) => "invalid_path",
        Error::InvalidConfig(_) => "invalid_config",
        Error::Io(_) => "io",
        Error::Serde(_) => "serialization",
    }
}
