//! Line-oriented readers, order-preserving parallel batch processing and
//! content digests.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_BATCH: usize = 16 * 1024;

/// Accepts a JSON string or number and yields its text.
pub fn string_or_number<'de, D: Deserializer<'de>>(deserializer: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Text(String),
        Int(i64),
        Uint(u64),
        Float(f64),
    }
    Ok(match Repr::deserialize(deserializer)? {
        Repr::Text(s) => s,
        Repr::Int(n) => n.to_string(),
        Repr::Uint(n) => n.to_string(),
        Repr::Float(n) => n.to_string(),
    })
}

pub fn open(path: impl AsRef<Path>) -> Result<BufReader<File>> {
    let path = path.as_ref();
    File::open(path)
        .map(|f| BufReader::with_capacity(1 << 20, f))
        .map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Record {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

/// Reads `reader` in batches of `batch` lines, maps every non-blank line with
/// `map(line_number, line)` on the rayon pool, and feeds the results to
/// `sink` in input order. Line numbers start at 1.
pub fn process_lines_ordered<R, T, M, S>(reader: R, batch: usize, map: M, mut sink: S) -> Result<()>
where
    R: BufRead,
    T: Send,
    M: Fn(usize, &str) -> T + Sync,
    S: FnMut(T) -> Result<()>,
{
    let batch = batch.max(1);
    let mut lines = reader.lines();
    let mut line_no = 0usize;
    let mut buf: Vec<(usize, String)> = Vec::with_capacity(batch);
    loop {
        buf.clear();
        for line in lines.by_ref() {
            line_no += 1;
            let line = line.map_err(|e| Error::Record {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            buf.push((line_no, line));
            if buf.len() == batch {
                break;
            }
        }
        if buf.is_empty() {
            return Ok(());
        }
        let mapped: Vec<T> = buf.par_iter().map(|(n, line)| map(*n, line)).collect();
        for item in mapped {
            sink(item)?;
        }
    }
}

/// Parses every line of a JSONL stream, collecting record-level failures
/// instead of aborting.
pub fn read_jsonl<T, R>(reader: R) -> Result<(Vec<T>, Vec<Error>)>
where
    T: DeserializeOwned + Send,
    R: BufRead,
{
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    process_lines_ordered(
        reader,
        DEFAULT_BATCH,
        |line, text| {
            serde_json::from_str::<T>(text).map_err(|e| Error::Record {
                line,
                message: e.to_string(),
            })
        },
        |item| {
            match item {
                Ok(v) => ok.push(v),
                Err(e) => bad.push(e),
            }
            Ok(())
        },
    )?;
    Ok((ok, bad))
}

pub fn read_jsonl_path<T: DeserializeOwned + Send>(path: impl AsRef<Path>) -> Result<(Vec<T>, Vec<Error>)> {
    read_jsonl(open(path)?)
}

/// Hex SHA-256 of a file's contents.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut chunk = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut chunk).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&chunk[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
