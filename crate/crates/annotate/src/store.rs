//! Durable, append-only journal file.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use facegate::audit::journal::{read_journal, JournalEntry, Replay, JOURNAL_SCHEMA, JOURNAL_VERSION};
use facegate::records::{header_line, RecordError};

pub struct Store {
    path: PathBuf,
    len: u64,
}

impl Store {
    /// Opens or creates the journal and returns its intact entries. A torn
    /// final line is cut off so later appends start on a clean line.
    pub fn open(path: &Path) -> Result<(Self, Replay), RecordError> {
        let io_err = |source| RecordError::Io { path: path.to_path_buf(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
        let replay = read_journal(path)?;
        let mut store = Self { path: path.to_path_buf(), len: replay.valid_len };
        let on_disk = fs::metadata(path).map(|m| m.len()).unwrap_or(0);
        if replay.truncated_tail || on_disk != replay.valid_len {
            OpenOptions::new().write(true).open(path).and_then(|f| f.set_len(replay.valid_len)).map_err(io_err)?;
        }
        if store.len == 0 {
            store.write_line(header_line(JOURNAL_SCHEMA, JOURNAL_VERSION).as_bytes()).map_err(io_err)?;
        }
        Ok((store, replay))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one entry and syncs it to disk before returning.
    pub fn append(&mut self, entry: &JournalEntry) -> io::Result<()> {
        let line = serde_json::to_vec(entry).map_err(io::Error::other)?;
        self.write_line(&line)
    }

    fn write_line(&mut self, bytes: &[u8]) -> io::Result<()> {
        let mut buf = Vec::with_capacity(bytes.len() + 1);
        buf.extend_from_slice(bytes);
        buf.push(b'\n');
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let written = file.write_all(&buf).and_then(|_| file.sync_data());
        match written {
            Ok(()) => {
                self.len += buf.len() as u64;
                Ok(())
            }
            Err(e) => {
                // Drop whatever part of the line made it out.
                let _ = file.set_len(self.len);
                Err(e)
            }
        }
    }
}
