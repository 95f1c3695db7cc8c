//! Append-only `responses.jsonl` journal.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use vbfi_core::ResponseSheet;

use crate::ServiceError;

#[derive(Debug)]
pub struct Journal {
    file: File,
    path: PathBuf,
}

impl Journal {
    /// Opens (creating if needed) the journal and returns its rows. A torn
    /// final line left by a crash mid-append is cut off.
    pub fn open(path: &Path) -> Result<(Self, Vec<ResponseSheet>), ServiceError> {
        let io_err = |source| ServiceError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io_err)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io_err)?;
        let complete = match text.rfind('\n') {
            Some(i) => i + 1,
            None => 0,
        };
        if complete < text.len() {
            log::warn!(
                "{}: dropping {} bytes of incomplete trailing line",
                path.display(),
                text.len() - complete
            );
            file.set_len(complete as u64).map_err(io_err)?;
            file.sync_data().map_err(io_err)?;
        }
        let mut rows = Vec::new();
        for (i, line) in text[..complete].lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = serde_json::from_str(line).map_err(|e| ServiceError::Journal {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            rows.push(row);
        }
        Ok((
            Self {
                file,
                path: path.to_path_buf(),
            },
            rows,
        ))
    }

    /// Appends one row and flushes it to disk before returning.
    pub fn append(&mut self, row: &ResponseSheet) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(row).expect("response serializes");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.sync_data())
            .map_err(|source| ServiceError::Io {
                path: self.path.display().to_string(),
                source,
            })
    }
}
