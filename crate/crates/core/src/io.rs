//! Run tables (delimited text) and law artifacts (JSON).
//!
//! Run-table columns: `run_id, model_size, step, batch_tokens`, one
//! `r_<domain>` column per training domain, one `loss_<domain>` column per
//! validation domain, and an optional `loss_overall`. Empty loss cells mean
//! the loss was not measured.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::law::PowerLaw;
use crate::mixture::Mixture;
use crate::model::{LossSurface, Predictor};
use crate::pipeline::PipelinePrediction;
use crate::record::RunRecord;

pub const SCHEMA_VERSION: u32 = 1;

const FIXED_COLUMNS: [&str; 4] = ["run_id", "model_size", "step", "batch_tokens"];

fn delimiter_for(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") | Some("tab") => b'\t',
        _ => b',',
    }
}

enum Column {
    Fixed(usize),
    Proportion(usize),
    DomainLoss(String),
    Overall,
}

fn classify(header: &csv::StringRecord) -> Result<(Vec<Column>, Vec<String>)> {
    let mut columns = Vec::new();
    let mut domains = Vec::new();
    let mut seen = BTreeSet::new();
    for name in header.iter() {
        if !seen.insert(name) {
            return Err(Error::Schema(format!("duplicate column {name}")));
        }
        let column = if let Some(i) = FIXED_COLUMNS.iter().position(|c| *c == name) {
            Column::Fixed(i)
        } else if let Some(d) = name.strip_prefix("r_").filter(|d| !d.is_empty()) {
            domains.push(d.to_string());
            Column::Proportion(domains.len() - 1)
        } else if name == "loss_overall" {
            Column::Overall
        } else if let Some(d) = name.strip_prefix("loss_").filter(|d| !d.is_empty()) {
            Column::DomainLoss(d.to_string())
        } else {
            return Err(Error::Schema(format!("unknown column {name}")));
        };
        columns.push(column);
    }
    for required in FIXED_COLUMNS {
        if !seen.contains(required) {
            return Err(Error::Schema(format!("missing column {required}")));
        }
    }
    if domains.is_empty() {
        return Err(Error::Schema("no r_<domain> proportion columns".into()));
    }
    Ok((columns, domains))
}

fn parse_number<T: std::str::FromStr>(line: u64, column: &str, cell: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    cell.trim().parse().map_err(|e| Error::Parse { line, detail: format!("{column} = {cell:?}: {e}") })
}

/// Reads and validates a run table.
pub fn read_runs<R: Read>(reader: R, delimiter: u8) -> Result<Vec<RunRecord>> {
    let mut csv = csv::ReaderBuilder::new().delimiter(delimiter).has_headers(true).from_reader(reader);
    let header = csv.headers().map_err(|e| Error::Parse { line: 1, detail: e.to_string() })?.clone();
    let (columns, domains) = classify(&header)?;
    let mut records = Vec::new();
    let mut seen: BTreeMap<(String, u64), u64> = BTreeMap::new();
    for row in csv.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let mut fixed: [&str; 4] = [""; 4];
        let mut proportions = vec![0.0; domains.len()];
        let mut domain_losses = BTreeMap::new();
        let mut overall_loss = None;
        for ((column, cell), name) in columns.iter().zip(row.iter()).zip(header.iter()) {
            match column {
                Column::Fixed(i) => fixed[*i] = cell,
                Column::Proportion(i) => proportions[*i] = parse_number(line, name, cell)?,
                Column::DomainLoss(d) if !cell.trim().is_empty() => {
                    domain_losses.insert(d.clone(), parse_number(line, name, cell)?);
                }
                Column::Overall if !cell.trim().is_empty() => overall_loss = Some(parse_number(line, name, cell)?),
                _ => {}
            }
        }
        let run_id = fixed[0].trim().to_string();
        if run_id.is_empty() {
            return Err(Error::Parse { line, detail: "empty run_id".into() });
        }
        let row_name = format!("line {line} ({run_id})");
        let mixture = Mixture::new(proportions, domains.clone()).map_err(|e| match e {
            Error::InvalidMixture { rule, detail } => Error::InvalidRecord { row: row_name.clone(), rule, detail },
            other => other,
        })?;
        let record = RunRecord {
            run_id,
            model_size: parse_number(line, "model_size", fixed[1])?,
            step: parse_number(line, "step", fixed[2])?,
            batch_tokens: parse_number(line, "batch_tokens", fixed[3])?,
            mixture,
            domain_losses,
            overall_loss,
        };
        record.validate().map_err(|e| match e {
            Error::InvalidRecord { rule, detail, .. } => Error::InvalidRecord { row: row_name.clone(), rule, detail },
            other => other,
        })?;
        if let Some(first) = seen.insert((record.run_id.clone(), record.step), line) {
            return Err(Error::InvalidRecord {
                row: row_name,
                rule: "duplicate-run-step",
                detail: format!("run {} step {} already appears on line {first}", record.run_id, record.step),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_runs(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    read_runs(File::open(path)?, delimiter_for(path))
}

/// Writes records as a run table. Floats use the shortest representation
/// that parses back to the same value.
pub fn write_runs<W: Write>(writer: W, records: &[RunRecord], delimiter: u8) -> Result<()> {
    let domains: Vec<String> = records.first().map(|r| r.mixture.domain_names().to_vec()).unwrap_or_default();
    if let Some(r) = records.iter().find(|r| r.mixture.domain_names() != domains.as_slice()) {
        return Err(Error::Schema(format!("run {} uses a different training-domain order", r.run_id)));
    }
    let loss_domains: BTreeSet<&String> = records.iter().flat_map(|r| r.domain_losses.keys()).collect();
    let with_overall = records.iter().any(|r| r.overall_loss.is_some());

    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|c| c.to_string()).collect();
    header.extend(domains.iter().map(|d| format!("r_{d}")));
    header.extend(loss_domains.iter().map(|d| format!("loss_{d}")));
    if with_overall {
        header.push("loss_overall".into());
    }
    let mut csv = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    csv.write_record(&header).map_err(to_io)?;
    for r in records {
        let mut row = vec![r.run_id.clone(), r.model_size.to_string(), r.step.to_string(), r.batch_tokens.to_string()];
        row.extend(r.mixture.proportions().iter().map(|p| p.to_string()));
        row.extend(loss_domains.iter().map(|d| r.domain_losses.get(*d).map_or(String::new(), |l| l.to_string())));
        if with_overall {
            row.push(r.overall_loss.map_or(String::new(), |l| l.to_string()));
        }
        csv.write_record(&row).map_err(to_io)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_runs(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<()> {
    let path = path.as_ref();
    write_runs(File::create(path)?, records, delimiter_for(path))
}

/// SHA-256 (hex) of the canonical comma-separated table of `records`.
pub fn data_digest(records: &[RunRecord]) -> Result<String> {
    let mut bytes = Vec::new();
    write_runs(&mut bytes, records, b',')?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// SHA-256 (hex) of `(x, loss)` points, one `x,loss` line each.
pub fn points_digest(points: &[(f64, f64)]) -> String {
    let mut hasher = Sha256::new();
    for (x, y) in points {
        hasher.update(format!("{x},{y}\n").as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// The fitted object stored in an artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "kebab-case")]
pub enum ArtifactModel {
    PowerLaw(PowerLaw),
    Predictor(Predictor),
    Pipeline(Box<PipelinePrediction>),
}

/// How an artifact was produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    /// Full configuration the fit ran with.
    pub config: serde_json::Value,
    pub seed: u64,
    /// See [`data_digest`] and [`points_digest`].
    pub data_digest: String,
    pub stage_maes: BTreeMap<String, f64>,
    pub tool_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawArtifact {
    pub schema_version: u32,
    pub model: ArtifactModel,
    pub provenance: Provenance,
}

/// Summary of what an artifact can predict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub kind: String,
    pub schema_version: u32,
    pub domain_names: Vec<String>,
    pub m: usize,
    pub k: usize,
    pub output_labels: Vec<String>,
    pub data_digest: String,
}

impl LawArtifact {
    pub fn new(model: ArtifactModel, provenance: Provenance) -> Self {
        LawArtifact { schema_version: SCHEMA_VERSION, model, provenance }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line() as u64,
            detail: e.to_string(),
        })?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(Error::Schema(format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})"))),
            None => return Err(Error::Schema("missing schema_version".into())),
        }
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn kind(&self) -> &'static str {
        match &self.model {
            ArtifactModel::PowerLaw(_) => "power-law",
            ArtifactModel::Predictor(Predictor::Mixing(_)) => "mixing",
            ArtifactModel::Predictor(Predictor::Ensemble(_)) => "ensemble",
            ArtifactModel::Pipeline(_) => "pipeline",
        }
    }

    /// The mixture-to-loss surface, if the artifact has one.
    pub fn surface(&self) -> Option<&(dyn LossSurface<f64> + Send)> {
        match &self.model {
            ArtifactModel::PowerLaw(_) => None,
            ArtifactModel::Predictor(p) => Some(p),
            ArtifactModel::Pipeline(p) => Some(p.as_ref()),
        }
    }

    pub fn metadata(&self) -> ArtifactMetadata {
        let (domain_names, output_labels) = match self.surface() {
            Some(s) => (s.domain_names(), s.output_labels()),
            None => (Vec::new(), Vec::new()),
        };
        ArtifactMetadata {
            kind: self.kind().to_string(),
            schema_version: self.schema_version,
            m: domain_names.len(),
            k: output_labels.len(),
            domain_names,
            output_labels,
            data_digest: self.provenance.data_digest.clone(),
        }
    }
}
