use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, Normalization, Severity, Speaker, SplitTag, Unit, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestFormat {
    Jsonl,
    Csv,
}

impl ManifestFormat {
    /// Guess from the file extension; JSONL unless the file ends in `.csv`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => ManifestFormat::Csv,
            _ => ManifestFormat::Jsonl,
        }
    }
}

impl std::str::FromStr for ManifestFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(ManifestFormat::Jsonl),
            "csv" => Ok(ManifestFormat::Csv),
            other => Err(format!("unknown manifest format `{other}`")),
        }
    }
}

/// One manifest row. Field names are part of the on-disk format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub speaker_id: String,
    pub text: String,
    #[serde(default = "unknown_severity")]
    pub severity: Severity,
    #[serde(default)]
    pub split: SplitTag,
}

fn unknown_severity() -> Severity {
    Severity::Unknown
}

pub fn load_manifest(
    path: &Path,
    format: ManifestFormat,
    unit: Unit,
    normalization: Normalization,
) -> Result<Corpus> {
    let file = File::open(path)?;
    parse_manifest(BufReader::new(file), path, format, unit, normalization)
}

/// Parse a manifest from any reader; `origin` is only used in error messages.
pub fn parse_manifest<R: Read>(
    reader: R,
    origin: &Path,
    format: ManifestFormat,
    unit: Unit,
    normalization: Normalization,
) -> Result<Corpus> {
    let records = match format {
        ManifestFormat::Jsonl => read_jsonl(BufReader::new(reader), origin)?,
        ManifestFormat::Csv => read_csv(reader, origin)?,
    };
    build_corpus(records, unit, normalization)
}

fn manifest_error(origin: &Path, line: usize, message: impl ToString) -> Error {
    Error::Manifest {
        path: PathBuf::from(origin),
        line,
        message: message.to_string(),
    }
}

fn read_jsonl<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<(usize, ManifestRecord)>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| manifest_error(origin, idx + 1, e))?;
        records.push((idx + 1, record));
    }
    Ok(records)
}

fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<Vec<(usize, ManifestRecord)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut records = Vec::new();
    for (idx, row) in rdr.deserialize::<ManifestRecord>().enumerate() {
        // +2: header line plus 1-based numbering.
        let record = row.map_err(|e| manifest_error(origin, idx + 2, e))?;
        records.push((idx + 2, record));
    }
    Ok(records)
}

fn build_corpus(
    records: Vec<(usize, ManifestRecord)>,
    unit: Unit,
    normalization: Normalization,
) -> Result<Corpus> {
    let mut speakers: BTreeMap<String, Speaker> = BTreeMap::new();
    let mut utterances = Vec::with_capacity(records.len());
    for (_, rec) in records {
        if rec.speaker_id.trim().is_empty() {
            return Err(Error::UnknownSpeaker {
                utterance: rec.id,
                speaker: rec.speaker_id,
            });
        }
        match speakers.get(&rec.speaker_id) {
            Some(existing) if existing.severity != rec.severity => {
                return Err(Error::InconsistentSeverity {
                    speaker: rec.speaker_id,
                    first: existing.severity.to_string(),
                    second: rec.severity.to_string(),
                });
            }
            Some(_) => {}
            None => {
                speakers.insert(
                    rec.speaker_id.clone(),
                    Speaker::new(rec.speaker_id.clone(), rec.severity, unit),
                );
            }
        }
        let utt = Utterance::new(rec.id, rec.speaker_id, rec.text, unit, normalization)?
            .with_split(rec.split);
        utterances.push(utt);
    }
    Corpus::new(utterances, speakers.into_values())
}

/// Write a corpus back out as canonical JSONL (raw text, not tokens).
pub fn write_manifest_jsonl<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    for utt in corpus.utterances() {
        let speaker = &corpus.speakers()[&utt.speaker_id];
        let record = ManifestRecord {
            id: utt.id.clone(),
            speaker_id: utt.speaker_id.clone(),
            text: utt.text.clone(),
            severity: speaker.severity,
            split: utt.split_tag,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
