//! Result tables: deltas against a baseline row, average finals, and
//! markdown / CSV / JSON rendering.
//!
//! Cells are percentages. Everything is computed at full precision and
//! rounded half away from zero only when rendered.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::channel::Setting;
use crate::corpus::{Severity, Speaker};
use crate::error::{Error, Result};
use crate::pipeline::{SpeakerTrajectory, Summary};

pub const AVG: &str = "AVG";
pub const ABSENT: &str = "---";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}` (expected markdown|csv|json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub cells: Vec<Option<f64>>,
    /// Baseline AVG minus this row's AVG.
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
    /// Decimals for rendered cells.
    pub precision: usize,
    /// Per-row precision overrides, keyed by row label.
    #[serde(default)]
    pub row_precision: BTreeMap<String, usize>,
}

impl ResultsTable {
    pub fn new(columns: Vec<String>, precision: usize) -> Self {
        Self {
            columns,
            rows: Vec::new(),
            precision,
            row_precision: BTreeMap::new(),
        }
    }

    pub fn push_row(&mut self, label: impl Into<String>, cells: Vec<Option<f64>>) -> Result<()> {
        let label = label.into();
        if cells.len() != self.columns.len() {
            return Err(Error::InvalidTable(format!(
                "row `{label}` has {} cells for {} columns",
                cells.len(),
                self.columns.len()
            )));
        }
        self.rows.push(TableRow {
            label,
            cells,
            delta: None,
        });
        Ok(())
    }

    pub fn row(&self, label: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.column_index(column)?;
        self.row(row)?.cells[c]
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if r.cells.len() != self.columns.len() {
                return Err(Error::InvalidTable(format!("row `{}` has the wrong width", r.label)));
            }
        }
        Ok(())
    }

    fn precision_of(&self, row: &str) -> usize {
        self.row_precision.get(row).copied().unwrap_or(self.precision)
    }

    /// Parse a table from its JSON rendering or any document of the same shape.
    pub fn from_json(text: &str) -> Result<Self> {
        let table: Self = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }
}

/// Attach `baseline AVG - row AVG` to every other row.
pub fn compute_deltas(table: &ResultsTable, baseline_row: &str) -> Result<ResultsTable> {
    let avg_col = table
        .column_index(AVG)
        .ok_or_else(|| Error::IncompleteRow(format!("table has no {AVG} column")))?;
    let base = table
        .row(baseline_row)
        .ok_or_else(|| Error::IncompleteRow(format!("baseline row `{baseline_row}` missing")))?
        .cells[avg_col]
        .ok_or_else(|| Error::IncompleteRow(format!("baseline row `{baseline_row}` has no {AVG}")))?;
    let mut out = table.clone();
    for row in &mut out.rows {
        if row.label == baseline_row {
            row.delta = None;
            continue;
        }
        let avg = row.cells[avg_col]
            .ok_or_else(|| Error::IncompleteRow(format!("row `{}` has no {AVG}", row.label)))?;
        row.delta = Some(base - avg);
    }
    Ok(out)
}

/// Unweighted mean of per-speaker final percentages.
pub fn average_final(finals: &[f64]) -> Result<f64> {
    if finals.is_empty() {
        return Err(Error::EmptyGroup("final rates".into()));
    }
    Ok(finals.iter().sum::<f64>() / finals.len() as f64)
}

/// Round half away from zero at `digits` decimals.
///
/// Values are first snapped to 9 decimals beyond the target so
/// that binary noise such as `19.524999999999995` rounds like `19.525`.
pub fn round_half_up(value: f64, digits: usize) -> f64 {
    let scale = 10f64.powi(digits as i32);
    let scaled = value * scale;
    let snapped = if scaled.abs() < 1e6 { (scaled * 1e9).round() / 1e9 } else { scaled };
    snapped.round() / scale
}

pub fn format_fixed(value: f64, digits: usize) -> String {
    let r = round_half_up(value, digits);
    let s = format!("{r:.digits$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_owned()
    } else {
        s
    }
}

fn fmt_cell(cell: Option<f64>, digits: usize) -> String {
    cell.map_or_else(|| ABSENT.to_owned(), |v| format_fixed(v, digits))
}

pub fn render(table: &ResultsTable, format: Format) -> Result<String> {
    table.validate()?;
    match format {
        Format::Markdown => Ok(render_markdown(table)),
        Format::Csv => render_csv(table),
        Format::Json => Ok(render_json(table)),
    }
}

fn render_markdown(table: &ResultsTable) -> String {
    let mut out = String::new();
    let header: Vec<&str> = std::iter::once("").chain(table.columns.iter().map(String::as_str)).collect();
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let rule: Vec<&str> = std::iter::once("---").chain(table.columns.iter().map(|_| "---:")).collect();
    let _ = writeln!(out, "|{}|", rule.join("|"));
    let avg_col = table.column_index(AVG);
    for row in &table.rows {
        let digits = table.precision_of(&row.label);
        let mut cells: Vec<String> = row.cells.iter().map(|c| fmt_cell(*c, digits)).collect();
        if let (Some(delta), Some(i)) = (row.delta, avg_col) {
            cells[i] = format!("{} (Δ {}%)", cells[i], format_fixed(delta, 2));
        }
        let _ = writeln!(out, "| {} | {} |", escape_md(&row.label), cells.join(" | "));
    }
    out
}

fn escape_md(s: &str) -> String {
    s.replace('|', "\\|")
}

fn render_csv(table: &ResultsTable) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let mut header = vec!["row".to_owned()];
    header.extend(table.columns.iter().cloned());
    header.push("delta".to_owned());
    w.write_record(&header)?;
    for row in &table.rows {
        let digits = table.precision_of(&row.label);
        let mut rec = vec![row.label.clone()];
        rec.extend(row.cells.iter().map(|c| fmt_cell(*c, digits)));
        rec.push(row.delta.map_or_else(String::new, |d| format_fixed(d, 2)));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields is utf-8"))
}

fn render_json(table: &ResultsTable) -> String {
    let value = serde_json::to_value(table).expect("table serializes");
    let mut s = serde_json::to_string_pretty(&value).expect("json value serializes");
    s.push('\n');
    s
}

/// One row per stage with a column per speaker, followed by a `Final` row.
///
/// Stage cells hold the speaker's rate where the stage ran. A stage row's
/// AVG is filled only when every speaker ran it; the final row's AVG is
/// the average final.
pub fn trajectory_table(
    trajectories: &[SpeakerTrajectory],
    stages: &[Setting],
    summary: &Summary,
    precision: usize,
) -> Result<ResultsTable> {
    let mut columns: Vec<String> = trajectories.iter().map(|t| t.speaker_id.clone()).collect();
    columns.push(AVG.to_owned());
    let mut table = ResultsTable::new(columns, precision);
    for &setting in stages {
        let mut cells: Vec<Option<f64>> = trajectories
            .iter()
            .map(|t| t.stage(setting).map(|s| s.rate * 100.0))
            .collect();
        let avg = if cells.iter().all(Option::is_some) && !cells.is_empty() {
            Some(average_final(&cells.iter().flatten().copied().collect::<Vec<_>>())?)
        } else {
            None
        };
        cells.push(avg);
        table.push_row(setting.label(), cells)?;
    }
    let finals: BTreeMap<&str, f64> = summary.finals.iter().map(|(s, r)| (s.as_str(), *r)).collect();
    let mut cells: Vec<Option<f64>> = trajectories
        .iter()
        .map(|t| finals.get(t.speaker_id.as_str()).map(|r| r * 100.0))
        .collect();
    cells.push(Some(summary.average * 100.0));
    table.push_row("Final", cells)?;
    table.row_precision.insert("Final".into(), precision);
    Ok(table)
}

/// Rows per stage, columns per severity group plus AVG.
///
/// Each cell averages the speakers (not utterances) that ran the stage;
/// control speakers are left out and unknown-severity speakers count
/// only towards AVG.
pub fn severity_table(
    trajectories: &[SpeakerTrajectory],
    stages: &[Setting],
    speakers: &BTreeMap<String, Speaker>,
    precision: usize,
) -> Result<ResultsTable> {
    let present: Vec<Severity> = Severity::GROUPED
        .into_iter()
        .filter(|sev| trajectories.iter().any(|t| t.severity == *sev))
        .collect();
    let mut columns: Vec<String> = present.iter().map(|s| s.short_label().to_owned()).collect();
    columns.push(AVG.to_owned());
    let mut table = ResultsTable::new(columns, precision);
    for &setting in stages {
        let rates: Vec<(Severity, f64)> = trajectories
            .iter()
            .filter(|t| speakers.get(&t.speaker_id).map_or(true, |s| !s.is_control()))
            .filter_map(|t| t.stage(setting).map(|s| (t.severity, s.rate * 100.0)))
            .collect();
        if rates.is_empty() {
            continue;
        }
        let mut cells: Vec<Option<f64>> = present
            .iter()
            .map(|sev| {
                let v: Vec<f64> = rates.iter().filter(|(s, _)| s == sev).map(|(_, r)| *r).collect();
                average_final(&v).ok()
            })
            .collect();
        cells.push(average_final(&rates.iter().map(|(_, r)| *r).collect::<Vec<_>>()).ok());
        table.push_row(setting.label(), cells)?;
    }
    Ok(table)
}
