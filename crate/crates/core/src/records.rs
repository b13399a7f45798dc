//! Line-delimited JSON files with a schema header.
//!
//! Every non-empty file starts with a header line
//! `{"schema": "<name>", "version": <n>}` followed by one JSON object per
//! line. Blank lines are ignored. A file with no non-blank lines holds no
//! records and needs no header.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: schema {schema} version {found} is newer than supported version {supported}")]
    UnsupportedVersion {
        path: PathBuf,
        schema: String,
        found: u32,
        supported: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub version: u32,
}

/// One decoded record with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct Line<T> {
    pub line: usize,
    pub value: T,
}

pub fn read_records<T: DeserializeOwned>(
    path: &Path,
    schema: &str,
    supported: u32,
) -> Result<Vec<Line<T>>, RecordError> {
    let file = File::open(path).map_err(|source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_records(BufReader::new(file), path, schema, supported)
}

pub fn parse_records<T: DeserializeOwned, R: BufRead>(
    reader: R,
    path: &Path,
    schema: &str,
    supported: u32,
) -> Result<Vec<Line<T>>, RecordError> {
    let format = |line: usize, message: String| RecordError::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    let mut saw_header = false;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            let header: Header = serde_json::from_str(&line)
                .map_err(|e| format(lineno, format!("expected {schema} header line: {e}")))?;
            if header.schema != schema {
                return Err(format(
                    lineno,
                    format!("expected schema {schema}, found {}", header.schema),
                ));
            }
            if header.version > supported {
                return Err(RecordError::UnsupportedVersion {
                    path: path.to_path_buf(),
                    schema: header.schema,
                    found: header.version,
                    supported,
                });
            }
            saw_header = true;
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| format(lineno, e.to_string()))?;
        out.push(Line {
            line: lineno,
            value,
        });
    }
    Ok(out)
}

pub fn header_line(schema: &str, version: u32) -> String {
    serde_json::to_string(&Header {
        schema: schema.to_string(),
        version,
    })
    .expect("header serializes")
}

pub fn write_to<'a, T, W, I>(mut w: W, schema: &str, version: u32, records: I) -> io::Result<()>
where
    T: Serialize + 'a,
    W: Write,
    I: IntoIterator<Item = &'a T>,
{
    writeln!(w, "{}", header_line(schema, version))?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_records<'a, T, I>(
    path: &Path,
    schema: &str,
    version: u32,
    records: I,
) -> Result<(), RecordError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let io_err = |source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_to(BufWriter::new(file), schema, version, records).map_err(io_err)
}
