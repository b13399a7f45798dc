//! Append-only annotation journal and the consensus export.
//!
//! The journal is a schema-headed JSONL file. Each line is one event:
//! an annotation, a task reopen, or a full replacement of the machine hints.
//! A final line without its newline is a torn write and is ignored on replay.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::coding::{AnnotationRecord, Consensus};
use crate::classifier::Label;
use crate::records::{self, Header, RecordError};

pub const JOURNAL_SCHEMA: &str = "facegate.journal";
pub const CONSENSUS_SCHEMA: &str = "facegate.consensus";
pub const JOURNAL_VERSION: u32 = 1;

/// Review tasks are one per manipulation region.
pub fn task_id(image_id: &str, region_id: &str) -> String {
    format!("{image_id}:{region_id}")
}

/// A classifier suggestion shown to annotators. Never resolves a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHint {
    pub task_id: String,
    pub face_id: String,
    pub label: Label,
    pub bystander_probability: f64,
    #[serde(default = "machine")]
    pub source: String,
}

fn machine() -> String {
    "machine".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JournalEntry {
    Annotation { task_id: String, record: AnnotationRecord },
    Reopen { task_id: String },
    Hints { hints: Vec<TaskHint> },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Replay {
    pub entries: Vec<JournalEntry>,
    /// Set when a torn final line was skipped.
    pub truncated_tail: bool,
    /// Byte length of the intact prefix.
    pub valid_len: u64,
}

/// Reads a journal. Missing or empty files are an empty journal.
pub fn read_journal(path: &Path) -> Result<Replay, RecordError> {
    let io = |source| RecordError::Io { path: path.to_path_buf(), source };
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(f) => BufReader::new(f).read_to_end(&mut bytes).map_err(io)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Replay::default()),
        Err(e) => return Err(io(e)),
    };
    parse_journal(&bytes, path)
}

pub fn parse_journal(bytes: &[u8], path: &Path) -> Result<Replay, RecordError> {
    let format = |line: usize, message: String| RecordError::Format { path: path.to_path_buf(), line, message };
    let mut replay = Replay::default();
    let mut offset = 0u64;
    let mut saw_header = false;
    for (i, raw) in bytes.split_inclusive(|&b| b == b'\n').enumerate() {
        let lineno = i + 1;
        let complete = raw.ends_with(b"\n");
        let text = match std::str::from_utf8(raw) {
            Ok(t) => t.trim(),
            Err(_) if !complete => {
                replay.truncated_tail = true;
                break;
            }
            Err(e) => return Err(format(lineno, e.to_string())),
        };
        if !text.is_empty() {
            if saw_header {
                match serde_json::from_str::<JournalEntry>(text) {
                    Ok(entry) => replay.entries.push(entry),
                    Err(_) if !complete => {
                        replay.truncated_tail = true;
                        break;
                    }
                    Err(e) => return Err(format(lineno, e.to_string())),
                }
            } else {
                let header = match serde_json::from_str::<Header>(text) {
                    Ok(h) => h,
                    Err(_) if !complete => {
                        replay.truncated_tail = true;
                        break;
                    }
                    Err(e) => return Err(format(lineno, format!("expected {JOURNAL_SCHEMA} header line: {e}"))),
                };
                if header.schema != JOURNAL_SCHEMA {
                    return Err(format(lineno, format!("expected schema {JOURNAL_SCHEMA}, found {}", header.schema)));
                }
                if header.version > JOURNAL_VERSION {
                    return Err(RecordError::UnsupportedVersion {
                        path: path.to_path_buf(),
                        schema: header.schema,
                        found: header.version,
                        supported: JOURNAL_VERSION,
                    });
                }
                saw_header = true;
            }
        }
        offset += raw.len() as u64;
        replay.valid_len = offset;
    }
    Ok(replay)
}

/// Current-round records per task, one per annotator (the latest wins).
/// A reopen clears the task's records.
pub fn current_records(entries: &[JournalEntry]) -> BTreeMap<String, BTreeMap<String, AnnotationRecord>> {
    let mut out: BTreeMap<String, BTreeMap<String, AnnotationRecord>> = BTreeMap::new();
    for e in entries {
        match e {
            JournalEntry::Annotation { task_id, record } => {
                out.entry(task_id.clone()).or_default().insert(record.annotator_id.clone(), record.clone());
            }
            JournalEntry::Reopen { task_id } => {
                out.remove(task_id);
            }
            JournalEntry::Hints { .. } => {}
        }
    }
    out
}

/// One exported task with its current records and consensus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRecord {
    pub task_id: String,
    pub image_id: String,
    pub region_id: String,
    pub round: u32,
    pub status: String,
    pub consensus: Option<Consensus>,
    pub records: Vec<AnnotationRecord>,
}

pub fn load_consensus(path: &Path) -> Result<Vec<ConsensusRecord>, RecordError> {
    Ok(records::read_records(path, CONSENSUS_SCHEMA, JOURNAL_VERSION)?.into_iter().map(|l| l.value).collect())
}

pub fn parse_consensus<R: BufRead>(reader: R, path: &Path) -> Result<Vec<ConsensusRecord>, RecordError> {
    Ok(records::parse_records(reader, path, CONSENSUS_SCHEMA, JOURNAL_VERSION)?.into_iter().map(|l| l.value).collect())
}

/// Resolved codings keyed by `(image_id, region_id)`. Tasks whose consensus
/// left a coding field other than intention unresolved are skipped.
pub fn resolved_codings(
    records: &[ConsensusRecord],
) -> HashMap<(String, String), super::coding::ManipulationCoding> {
    records
        .iter()
        .filter_map(|r| {
            let c = r.consensus.as_ref()?.coding.clone()?;
            Some(((r.image_id.clone(), r.region_id.clone()), c))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::coding::tests::coding;
    use crate::audit::coding::Intention;

    fn entry(annotator: &str, intention: Intention) -> JournalEntry {
        JournalEntry::Annotation {
            task_id: task_id("img1", "r1"),
            record: AnnotationRecord {
                image_id: "img1".into(),
                region_id: "r1".into(),
                annotator_id: annotator.into(),
                coding: coding(&[intention], &[], &[]),
                person_label: None,
                timestamp_ms: None,
            },
        }
    }

    fn journal(entries: &[JournalEntry]) -> Vec<u8> {
        let mut out = records::header_line(JOURNAL_SCHEMA, JOURNAL_VERSION).into_bytes();
        out.push(b'\n');
        for e in entries {
            out.extend(serde_json::to_vec(e).unwrap());
            out.push(b'\n');
        }
        out
    }

    #[test]
    fn torn_tail_is_ignored() {
        let entries = [entry("a", Intention::Privacy), entry("b", Intention::Humor)];
        let bytes = journal(&entries);
        let full = parse_journal(&bytes, Path::new("j")).unwrap();
        assert_eq!(full.entries, entries);
        assert_eq!(full.valid_len, bytes.len() as u64);
        for cut in 1..bytes.len() {
            let r = parse_journal(&bytes[..cut], Path::new("j")).unwrap();
            assert!(r.entries.len() <= 2);
            assert_eq!(r.entries[..], entries[..r.entries.len()]);
            assert!(r.valid_len <= cut as u64);
        }
        let mut bad = bytes.clone();
        bad.extend(b"{not json}\n");
        assert!(matches!(parse_journal(&bad, Path::new("j")), Err(RecordError::Format { line: 4, .. })));
    }

    #[test]
    fn future_version_rejected() {
        let bytes = format!("{}\n", records::header_line(JOURNAL_SCHEMA, 9));
        assert!(matches!(parse_journal(bytes.as_bytes(), Path::new("j")), Err(RecordError::UnsupportedVersion { .. })));
    }

    #[test]
    fn last_write_wins_and_reopen_clears() {
        let t = task_id("img1", "r1");
        let entries = vec![
            entry("a", Intention::Privacy),
            entry("b", Intention::Humor),
            entry("a", Intention::Beauty),
        ];
        let cur = current_records(&entries);
        assert_eq!(cur[&t].len(), 2);
        assert_eq!(cur[&t]["a"].coding.intentions, [Intention::Beauty].into());
        let mut reopened = entries;
        reopened.push(JournalEntry::Reopen { task_id: t.clone() });
        assert!(current_records(&reopened).is_empty());
    }
}
