//! Annotation JSONL ingestion and export.
//!
//! One object per line:
//!
//! ```json
//! {"schema_version":1,"id":"dive-00001","sport":"diving","action_label":"5253B",
//!  "sub_actions":[{"label":"Back","start":0.5,"end":1.25}],
//!  "difficulty":3.2,"quality":24.5,"final_score":78.4,"prompt":"..."}
//! ```
//!
//! `schema_version` and `reference_answer` are optional. Blank lines are
//! skipped. Line numbers in errors are 1-based.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use super::{ActionInstance, Sport, SubActionAnnotation, TimeInterval};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: field `{field}`: {detail}")]
    SchemaViolation {
        line: usize,
        field: String,
        detail: String,
    },
    #[error("line {line}: {reason}")]
    InvariantViolation { line: usize, reason: String },
}

impl IngestError {
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::Io { .. } => None,
            IngestError::SchemaViolation { line, .. } | IngestError::InvariantViolation { line, .. } => {
                Some(*line)
            }
        }
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<ActionInstance>, IngestError> {
    let path = path.as_ref();
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    parse_annotations(BufReader::new(file)).map_err(|e| match e {
        IngestError::Io { source, .. } => io_err(source),
        other => other,
    })
}

/// Parses annotation JSONL from any reader, failing on the first bad line.
pub fn parse_annotations(reader: impl BufRead) -> Result<Vec<ActionInstance>, IngestError> {
    let report = check_annotations(reader)?;
    match report.errors.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(report.instances),
    }
}

/// Every valid instance plus one diagnostic per rejected line.
#[derive(Debug, Default)]
pub struct CheckReport {
    pub instances: Vec<ActionInstance>,
    pub errors: Vec<IngestError>,
}

/// Checks every line instead of stopping at the first failure. Only read
/// errors abort.
pub fn check_annotations(reader: impl BufRead) -> Result<CheckReport, IngestError> {
    let mut report = CheckReport::default();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let checked = parse_line(line_no, &line).and_then(|inst| {
            inst.validate()
                .map_err(|reason| IngestError::InvariantViolation { line: line_no, reason })?;
            if !seen.insert(inst.instance_id.clone()) {
                return Err(IngestError::InvariantViolation {
                    line: line_no,
                    reason: format!("duplicate id `{}`", inst.instance_id),
                });
            }
            Ok(inst)
        });
        match checked {
            Ok(inst) => report.instances.push(inst),
            Err(e) => report.errors.push(e),
        }
    }
    Ok(report)
}

pub fn check_annotations_file(path: impl AsRef<Path>) -> Result<CheckReport, IngestError> {
    let path = path.as_ref();
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    check_annotations(BufReader::new(file)).map_err(|e| match e {
        IngestError::Io { source, .. } => io_err(source),
        other => other,
    })
}

/// Reads prediction JSONL into `(id, text)` pairs in file order.
///
/// Each line is `{"id": ..., "prediction": ...}`. QA records
/// (`{"source": ..., "answer": ...}`) are accepted too, so generated QA
/// files can serve as oracle predictions.
pub fn parse_predictions(reader: impl BufRead) -> Result<Vec<(String, String)>, IngestError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| IngestError::SchemaViolation {
            line: line_no,
            field: "<line>".into(),
            detail: format!("invalid JSON: {e}"),
        })?;
        let Value::Object(map) = &value else {
            return Err(IngestError::SchemaViolation {
                line: line_no,
                field: "<line>".into(),
                detail: "expected a JSON object".into(),
            });
        };
        let f = Fields {
            line: line_no,
            map,
            prefix: String::new(),
        };
        let (id, text) = if map.contains_key("id") {
            (f.string("id")?, f.string("prediction")?)
        } else {
            (f.string("source")?, f.string("answer")?)
        };
        if !seen.insert(id.clone()) {
            return Err(IngestError::InvariantViolation {
                line: line_no,
                reason: format!("duplicate prediction id `{id}`"),
            });
        }
        out.push((id, text));
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<(String, String)>, IngestError> {
    let path = path.as_ref();
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    parse_predictions(BufReader::new(file)).map_err(|e| match e {
        IngestError::Io { source, .. } => io_err(source),
        other => other,
    })
}

struct Fields<'a> {
    line: usize,
    map: &'a Map<String, Value>,
    prefix: String,
}

impl<'a> Fields<'a> {
    fn violation(&self, key: &str, detail: impl Into<String>) -> IngestError {
        IngestError::SchemaViolation {
            line: self.line,
            field: format!("{}{key}", self.prefix),
            detail: detail.into(),
        }
    }

    fn get(&self, key: &str) -> Result<&'a Value, IngestError> {
        self.map
            .get(key)
            .ok_or_else(|| self.violation(key, "missing"))
    }

    fn string(&self, key: &str) -> Result<String, IngestError> {
        self.get(key)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| self.violation(key, "expected a string"))
    }

    fn number(&self, key: &str) -> Result<f64, IngestError> {
        self.get(key)?
            .as_f64()
            .ok_or_else(|| self.violation(key, "expected a number"))
    }
}

fn parse_line(line: usize, text: &str) -> Result<ActionInstance, IngestError> {
    let value: Value = serde_json::from_str(text).map_err(|e| IngestError::SchemaViolation {
        line,
        field: "<line>".into(),
        detail: format!("invalid JSON: {e}"),
    })?;
    let Value::Object(map) = &value else {
        return Err(IngestError::SchemaViolation {
            line,
            field: "<line>".into(),
            detail: "expected a JSON object".into(),
        });
    };
    let f = Fields {
        line,
        map,
        prefix: String::new(),
    };

    if let Some(v) = map.get("schema_version") {
        if v.as_u64() != Some(SCHEMA_VERSION) {
            return Err(f.violation(
                "schema_version",
                format!("unsupported version {v}, expected {SCHEMA_VERSION}"),
            ));
        }
    }

    let sport_name = f.string("sport")?;
    let sport = Sport::parse(&sport_name)
        .ok_or_else(|| f.violation("sport", format!("unknown sport `{sport_name}`")))?;

    let subs = f
        .get("sub_actions")?
        .as_array()
        .ok_or_else(|| f.violation("sub_actions", "expected an array"))?;
    let mut sub_actions = Vec::with_capacity(subs.len());
    for (i, sub) in subs.iter().enumerate() {
        let prefix = format!("sub_actions[{i}].");
        let Value::Object(sub_map) = sub else {
            return Err(f.violation(&format!("sub_actions[{i}]"), "expected an object"));
        };
        let sf = Fields {
            line,
            map: sub_map,
            prefix,
        };
        let label = sf.string("label")?;
        let (start, end) = (sf.number("start")?, sf.number("end")?);
        let interval = TimeInterval::new(start, end).map_err(|e| IngestError::InvariantViolation {
            line,
            reason: format!("sub_actions[{i}]: {e}"),
        })?;
        sub_actions.push(SubActionAnnotation { label, interval });
    }

    let reference_answer = match map.get("reference_answer") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(f.violation("reference_answer", "expected a string")),
    };

    Ok(ActionInstance {
        instance_id: f.string("id")?,
        sport,
        action_label: f.string("action_label")?,
        sub_actions,
        difficulty: f.number("difficulty")?,
        quality: f.number("quality")?,
        final_score: f.number("final_score")?,
        prompt: f.string("prompt")?,
        reference_answer,
    })
}

#[derive(Serialize)]
struct SubActionRecord<'a> {
    label: &'a str,
    start: f64,
    end: f64,
}

#[derive(Serialize)]
struct AnnotationRecord<'a> {
    schema_version: u64,
    id: &'a str,
    sport: Sport,
    action_label: &'a str,
    sub_actions: Vec<SubActionRecord<'a>>,
    difficulty: f64,
    quality: f64,
    final_score: f64,
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_answer: Option<&'a str>,
}

impl<'a> From<&'a ActionInstance> for AnnotationRecord<'a> {
    fn from(inst: &'a ActionInstance) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            id: &inst.instance_id,
            sport: inst.sport,
            action_label: &inst.action_label,
            sub_actions: inst
                .sub_actions
                .iter()
                .map(|s| SubActionRecord {
                    label: &s.label,
                    start: s.interval.start(),
                    end: s.interval.end(),
                })
                .collect(),
            difficulty: inst.difficulty,
            quality: inst.quality,
            final_score: inst.final_score,
            prompt: &inst.prompt,
            reference_answer: inst.reference_answer.as_deref(),
        }
    }
}

pub fn write_annotations(mut writer: impl Write, instances: &[ActionInstance]) -> io::Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut writer, &AnnotationRecord::from(inst))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(instances: &[ActionInstance]) -> String {
    let mut buf = Vec::new();
    write_annotations(&mut buf, instances).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn save_annotations(path: impl AsRef<Path>, instances: &[ActionInstance]) -> io::Result<()> {
    let mut file = io::BufWriter::new(File::create(path)?);
    write_annotations(&mut file, instances)?;
    file.flush()
}
