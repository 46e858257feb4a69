//! Event-log data model, CSV ingestion, validation and summary statistics.
//!
//! Extra attributes are stored positionally: `Event::categorical[i]` belongs
//! to `Schema::categorical[i]`, likewise for continuous values. Missing
//! categorical cells become [`NAN_LABEL`]; missing continuous cells are `None`.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Reserved label for a missing categorical value.
pub const NAN_LABEL: &str = "⟨NaN⟩";

const WRITE_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3fZ";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub categorical: Vec<String>,
    pub continuous: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub activity: String,
    pub timestamp: DateTime<Utc>,
    pub categorical: Vec<String>,
    pub continuous: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub events: Vec<Event>,
}

impl Case {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => (b.timestamp - a.timestamp).num_milliseconds() as f64 / 1000.0,
            _ => 0.0,
        }
    }

    pub fn activities(&self) -> Vec<&str> {
        self.events.iter().map(|e| e.activity.as_str()).collect()
    }
}

/// Something the parser noticed and fixed while building the log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseNote {
    /// The case's rows were not in timestamp order in the file.
    NonMonotoneTimestamps { case_id: String },
    /// The case's rows appeared in several non-adjacent chunks and were merged.
    SplitCase { case_id: String, chunks: usize },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EventLog {
    pub schema: Schema,
    pub cases: Vec<Case>,
    pub notes: Vec<ParseNote>,
}

impl PartialEq for EventLog {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema && self.cases == other.cases
    }
}

impl EventLog {
    pub fn new(schema: Schema, cases: Vec<Case>) -> Self {
        Self {
            schema,
            cases,
            notes: Vec::new(),
        }
    }

    pub fn n_events(&self) -> usize {
        self.cases.iter().map(Case::len).sum()
    }

    pub fn case(&self, id: &str) -> Option<&Case> {
        self.cases.iter().find(|c| c.case_id == id)
    }
}

/// Which CSV columns carry what.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub case_id: String,
    pub activity: String,
    pub timestamp: String,
    /// strftime-style pattern; RFC 3339 when absent.
    #[serde(default)]
    pub timestamp_format: Option<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub continuous: Vec<String>,
}

impl ColumnMapping {
    /// The mapping that reads back what [`write_csv`] produces.
    pub fn canonical(schema: &Schema) -> Self {
        Self {
            case_id: "case_id".into(),
            activity: "activity".into(),
            timestamp: "timestamp".into(),
            timestamp_format: Some(WRITE_FORMAT.into()),
            categorical: schema.categorical.clone(),
            continuous: schema.continuous.clone(),
        }
    }
}

fn parse_timestamp(text: &str, format: Option<&str>) -> Option<DateTime<Utc>> {
    let text = text.trim();
    let parsed = match format {
        None => DateTime::parse_from_rfc3339(text).ok().map(|d| d.with_timezone(&Utc)),
        Some(f) => DateTime::parse_from_str(text, f)
            .map(|d| d.with_timezone(&Utc))
            .ok()
            .or_else(|| NaiveDateTime::parse_from_str(text, f).ok().map(|n| Utc.from_utc_datetime(&n)))
            .or_else(|| {
                NaiveDate::parse_from_str(text, f)
                    .ok()
                    .and_then(|d| d.and_hms_opt(0, 0, 0))
                    .map(|n| Utc.from_utc_datetime(&n))
            }),
    }?;
    // Millisecond resolution.
    let ms = parsed.nanosecond() / 1_000_000 * 1_000_000;
    parsed.with_nanosecond(ms)
}

fn column_index(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CoreError::MissingColumn(name.to_string()))
}

/// Reads a CSV event log. Rows are grouped by case id (cases ordered by first
/// appearance) and each case is stably sorted by timestamp.
pub fn parse_csv<R: Read>(stream: R, mapping: &ColumnMapping) -> Result<EventLog> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(stream);
    let header = reader.headers()?.clone();
    let width = header.len();
    let case_col = column_index(&header, &mapping.case_id)?;
    let act_col = column_index(&header, &mapping.activity)?;
    let ts_col = column_index(&header, &mapping.timestamp)?;
    let cat_cols = mapping
        .categorical
        .iter()
        .map(|c| column_index(&header, c))
        .collect::<Result<Vec<_>>>()?;
    let con_cols = mapping
        .continuous
        .iter()
        .map(|c| column_index(&header, c))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Event>> = HashMap::new();
    let mut chunks: HashMap<String, usize> = HashMap::new();
    let mut last_case: Option<String> = None;

    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // Header is line 1.
        let row = record.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
        if record.len() != width {
            return Err(CoreError::ColumnCount {
                row,
                expected: width,
                found: record.len(),
            });
        }
        let case_id = record[case_col].trim().to_string();
        let ts_text = &record[ts_col];
        let timestamp = parse_timestamp(ts_text, mapping.timestamp_format.as_deref()).ok_or_else(|| {
            CoreError::Timestamp {
                row,
                text: ts_text.to_string(),
            }
        })?;
        let categorical = cat_cols
            .iter()
            .map(|&c| {
                let v = record[c].trim();
                if v.is_empty() {
                    NAN_LABEL.to_string()
                } else {
                    v.to_string()
                }
            })
            .collect();
        let continuous = con_cols
            .iter()
            .zip(&mapping.continuous)
            .map(|(&c, name)| {
                let v = record[c].trim();
                if v.is_empty() {
                    Ok(None)
                } else {
                    v.parse::<f64>().map(Some).map_err(|_| CoreError::NotANumber {
                        row,
                        column: name.clone(),
                        text: v.to_string(),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let event = Event {
            activity: record[act_col].trim().to_string(),
            timestamp,
            categorical,
            continuous,
        };

        if last_case.as_deref() != Some(case_id.as_str()) {
            *chunks.entry(case_id.clone()).or_insert(0) += 1;
            last_case = Some(case_id.clone());
        }
        let entry = rows.entry(case_id.clone()).or_insert_with(|| {
            order.push(case_id.clone());
            Vec::new()
        });
        entry.push(event);
    }

    let mut notes = Vec::new();
    let mut cases = Vec::with_capacity(order.len());
    for id in order {
        let mut events = rows.remove(&id).expect("grouped above");
        if events.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            notes.push(ParseNote::NonMonotoneTimestamps { case_id: id.clone() });
        }
        let n_chunks = chunks[&id];
        if n_chunks > 1 {
            notes.push(ParseNote::SplitCase {
                case_id: id.clone(),
                chunks: n_chunks,
            });
        }
        events.sort_by_key(|e| e.timestamp);
        cases.push(Case { case_id: id, events });
    }

    Ok(EventLog {
        schema: Schema {
            categorical: mapping.categorical.clone(),
            continuous: mapping.continuous.clone(),
        },
        cases,
        notes,
    })
}

/// Writes the log in the layout [`ColumnMapping::canonical`] reads.
pub fn write_csv<W: Write>(log: &EventLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["case_id".to_string(), "activity".into(), "timestamp".into()];
    header.extend(log.schema.categorical.iter().cloned());
    header.extend(log.schema.continuous.iter().cloned());
    w.write_record(&header)?;
    for case in &log.cases {
        for e in &case.events {
            let mut rec = vec![
                case.case_id.clone(),
                e.activity.clone(),
                e.timestamp.format(WRITE_FORMAT).to_string(),
            ];
            rec.extend(e.categorical.iter().map(|c| if c == NAN_LABEL { String::new() } else { c.clone() }));
            rec.extend(e.continuous.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Seconds,
    Minutes,
    Hours,
    #[default]
    Days,
}

impl TimeUnit {
    pub fn seconds(self) -> f64 {
        match self {
            TimeUnit::Seconds => 1.0,
            TimeUnit::Minutes => 60.0,
            TimeUnit::Hours => 3600.0,
            TimeUnit::Days => 86400.0,
        }
    }

    pub fn from_seconds(self, s: f64) -> f64 {
        s / self.seconds()
    }

    pub fn label(self) -> &'static str {
        match self {
            TimeUnit::Seconds => "sec.",
            TimeUnit::Minutes => "min.",
            TimeUnit::Hours => "hours",
            TimeUnit::Days => "days",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_cases: usize,
    pub n_events: usize,
    pub n_variants: usize,
    pub n_activities: usize,
    pub mean_case_length: f64,
    pub sd_case_length: f64,
    /// Seconds.
    pub mean_case_duration: f64,
    /// Seconds.
    pub sd_case_duration: f64,
}

impl DatasetStats {
    pub fn duration_in(&self, unit: TimeUnit) -> (f64, f64) {
        (unit.from_seconds(self.mean_case_duration), unit.from_seconds(self.sd_case_duration))
    }
}

/// Sample mean and standard deviation (n - 1 denominator, 0 for n < 2).
fn mean_sd(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn compute_stats(log: &EventLog) -> Result<DatasetStats> {
    if log.cases.is_empty() {
        return Err(CoreError::Data("cannot summarize an empty log".into()));
    }
    let variants: HashSet<Vec<&str>> = log.cases.iter().map(Case::activities).collect();
    let activities: HashSet<&str> = log
        .cases
        .iter()
        .flat_map(|c| c.events.iter().map(|e| e.activity.as_str()))
        .collect();
    let (mean_len, sd_len) = mean_sd(log.cases.iter().map(|c| c.len() as f64));
    let (mean_dur, sd_dur) = mean_sd(log.cases.iter().map(Case::duration_seconds));
    Ok(DatasetStats {
        n_cases: log.cases.len(),
        n_events: log.n_events(),
        n_variants: variants.len(),
        n_activities: activities.len(),
        mean_case_length: mean_len,
        sd_case_length: sd_len,
        mean_case_duration: mean_dur,
        sd_case_duration: sd_dur,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ValidationIssue {
    NonMonotoneTimestamps {
        case_id: String,
    },
    DuplicateCaseId {
        case_id: String,
        chunks: usize,
    },
    EmptyCase {
        case_id: String,
    },
    EmptyActivity {
        case_id: String,
        event: usize,
    },
    /// The event carries a different number of attributes than declared.
    SchemaArity {
        case_id: String,
        event: usize,
    },
    MissingValue {
        case_id: String,
        event: usize,
        attribute: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Reports problems without touching the log.
pub fn validate_log(log: &EventLog) -> ValidationReport {
    let mut issues = Vec::new();
    for note in &log.notes {
        issues.push(match note {
            ParseNote::NonMonotoneTimestamps { case_id } => ValidationIssue::NonMonotoneTimestamps {
                case_id: case_id.clone(),
            },
            ParseNote::SplitCase { case_id, chunks } => ValidationIssue::DuplicateCaseId {
                case_id: case_id.clone(),
                chunks: *chunks,
            },
        });
    }
    let mut seen = HashMap::new();
    for case in &log.cases {
        *seen.entry(case.case_id.as_str()).or_insert(0usize) += 1;
        if case.events.is_empty() {
            issues.push(ValidationIssue::EmptyCase {
                case_id: case.case_id.clone(),
            });
        }
        if case.events.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            issues.push(ValidationIssue::NonMonotoneTimestamps {
                case_id: case.case_id.clone(),
            });
        }
        for (i, e) in case.events.iter().enumerate() {
            if e.activity.is_empty() {
                issues.push(ValidationIssue::EmptyActivity {
                    case_id: case.case_id.clone(),
                    event: i,
                });
            }
            if e.categorical.len() != log.schema.categorical.len()
                || e.continuous.len() != log.schema.continuous.len()
            {
                issues.push(ValidationIssue::SchemaArity {
                    case_id: case.case_id.clone(),
                    event: i,
                });
                continue;
            }
            for (v, name) in e.continuous.iter().zip(&log.schema.continuous) {
                if v.is_none() {
                    issues.push(ValidationIssue::MissingValue {
                        case_id: case.case_id.clone(),
                        event: i,
                        attribute: name.clone(),
                    });
                }
            }
        }
    }
    let mut dups: Vec<_> = seen.into_iter().filter(|&(_, n)| n > 1).collect();
    dups.sort();
    for (id, n) in dups {
        issues.push(ValidationIssue::DuplicateCaseId {
            case_id: id.to_string(),
            chunks: n,
        });
    }
    ValidationReport { issues }
}
