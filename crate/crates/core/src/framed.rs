//! Line-framed, digest-checked append-only log.
//!
//! Every record occupies one line: `<byte-length> <sha256-hex> <document>`.
//! The document is a compact JSON text and therefore never contains a raw
//! newline. A record whose length or digest does not match is treated as a
//! torn write; only a torn *trailing* record is tolerated and it is cut off
//! the next time the log is opened for appending.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("malformed frame header")]
    MalformedHeader,
    #[error("frame length mismatch: header says {expected}, body has {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("frame digest mismatch")]
    DigestMismatch,
    #[error("document contains a newline")]
    EmbeddedNewline,
    #[error("corrupt record at line {line}: {source}")]
    Corrupt {
        line: usize,
        #[source]
        source: Box<FrameError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_line(doc: &str) -> Result<String, FrameError> {
    if doc.contains('\n') {
        return Err(FrameError::EmbeddedNewline);
    }
    Ok(format!("{} {} {}\n", doc.len(), sha256_hex(doc.as_bytes()), doc))
}

/// Decodes one line (without its trailing newline) and returns the document.
pub fn decode_line(line: &str) -> Result<&str, FrameError> {
    let mut parts = line.splitn(3, ' ');
    let len: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(FrameError::MalformedHeader)?;
    let digest = parts.next().ok_or(FrameError::MalformedHeader)?;
    let doc = parts.next().ok_or(FrameError::MalformedHeader)?;
    if doc.len() != len {
        return Err(FrameError::LengthMismatch {
            expected: len,
            actual: doc.len(),
        });
    }
    if sha256_hex(doc.as_bytes()) != digest {
        return Err(FrameError::DigestMismatch);
    }
    Ok(doc)
}

/// Result of scanning a log file.
#[derive(Debug, Default)]
pub struct Scan {
    pub records: Vec<String>,
    /// Byte offset just past the last valid record.
    pub valid_len: u64,
    /// A partial or corrupt trailing record was found and skipped.
    pub torn_tail: bool,
}

/// Reads every complete record. A bad record followed by further data is an
/// error; a bad final record is reported as a torn tail.
pub fn scan_bytes(bytes: &[u8]) -> Result<Scan, FrameError> {
    let mut scan = Scan::default();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|b| *b == b'\n') else {
            scan.torn_tail = true;
            break;
        };
        let decoded = std::str::from_utf8(&rest[..nl])
            .map_err(|_| FrameError::MalformedHeader)
            .and_then(decode_line);
        match decoded {
            Ok(doc) => {
                scan.records.push(doc.to_string());
                offset += nl + 1;
                scan.valid_len = offset as u64;
            }
            Err(e) => {
                if offset + nl + 1 >= bytes.len() {
                    scan.torn_tail = true;
                    break;
                }
                return Err(FrameError::Corrupt {
                    line: line_no,
                    source: Box::new(e),
                });
            }
        }
    }
    Ok(scan)
}

/// An append-only framed log file. Appends are serialized through one writer.
#[derive(Debug)]
pub struct FramedLog {
    path: PathBuf,
    file: Mutex<File>,
    sync: bool,
}

impl FramedLog {
    /// Opens (creating if needed) the log, truncating a torn trailing record.
    pub fn open(path: impl AsRef<Path>, sync: bool) -> Result<(Self, Vec<String>), FrameError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let scan = scan_bytes(&bytes)?;
        if scan.torn_tail {
            tracing::warn!(path = %path.display(), "discarding torn trailing record");
            file.set_len(scan.valid_len)?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok((
            Self {
                path,
                file: Mutex::new(file),
                sync,
            },
            scan.records,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one document; returns once the bytes are written (and synced
    /// to disk when the log was opened with `sync`).
    pub fn append(&self, doc: &str) -> Result<(), FrameError> {
        let line = encode_line(doc)?;
        let mut file = self.file.lock();
        file.write_all(line.as_bytes())?;
        if self.sync {
            file.sync_data()?;
        }
        Ok(())
    }

    /// Re-reads the file from disk.
    pub fn read_all(&self) -> Result<Vec<String>, FrameError> {
        let bytes = fs::read(&self.path)?;
        Ok(scan_bytes(&bytes)?.records)
    }

    /// True when the backing file can currently be opened for appending.
    pub fn writable(&self) -> bool {
        OpenOptions::new().append(true).open(&self.path).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_line() {
        let line = encode_line(r#"{"a":1}"#).unwrap();
        assert!(line.starts_with("7 "));
        assert_eq!(decode_line(line.trim_end()).unwrap(), r#"{"a":1}"#);
    }

    #[test]
    fn rejects_newline_and_tampering() {
        assert!(matches!(encode_line("a\nb"), Err(FrameError::EmbeddedNewline)));
        let line = encode_line("hello").unwrap().replace("hello", "hellp");
        assert!(matches!(decode_line(line.trim_end()), Err(FrameError::DigestMismatch)));
    }

    #[test]
    fn torn_tail_is_dropped_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log");
        {
            let (log, _) = FramedLog::open(&path, false).unwrap();
            log.append("one").unwrap();
            log.append("two").unwrap();
        }
        // simulate a crash halfway through the third write
        let third = encode_line("three").unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&third.as_bytes()[..6]).unwrap();
        drop(f);

        let (log, records) = FramedLog::open(&path, false).unwrap();
        assert_eq!(records, vec!["one", "two"]);
        log.append("four").unwrap();
        assert_eq!(log.read_all().unwrap(), vec!["one", "two", "four"]);
    }

    #[test]
    fn corruption_in_the_middle_is_an_error() {
        let mut bytes = encode_line("one").unwrap().into_bytes();
        bytes.extend_from_slice(b"3 deadbeef two\n");
        bytes.extend_from_slice(encode_line("six").unwrap().as_bytes());
        assert!(matches!(scan_bytes(&bytes), Err(FrameError::Corrupt { line: 2, .. })));
    }
}
