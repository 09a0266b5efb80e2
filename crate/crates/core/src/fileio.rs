//! Versioned text-header + little-endian binary container shared by the
//! dataset, collocation and checkpoint files.
//!
//! ```text
//! <magic line>
//! key value value ...
//! ...
//! end
//! <f64 little-endian payload>
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn push_floats(&mut self, key: &str, values: &[f64]) {
        let joined = values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ");
        self.push(key, joined);
    }
}

pub fn write_file(path: &Path, magic: &str, header: &Header, payload: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{magic}")?;
    for (k, v) in &header.entries {
        writeln!(out, "{k} {v}")?;
    }
    writeln!(out, "end")?;
    for v in payload {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Parsed header fields.
#[derive(Debug)]
pub struct Fields(BTreeMap<String, String>);

impl Fields {
    pub fn raw(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Malformed(format!("missing header field `{key}`")))
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| Error::Malformed(format!("bad value for `{key}`: {raw}")))
    }

    pub fn floats(&self, key: &str) -> Result<Vec<f64>> {
        self.raw(key)?
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Malformed(format!("bad float in `{key}`: {s}")))
            })
            .collect()
    }

    pub fn float_array<const N: usize>(&self, key: &str) -> Result<[f64; N]> {
        let v = self.floats(key)?;
        v.try_into()
            .map_err(|v: Vec<f64>| Error::Malformed(format!("`{key}` expects {N} values, got {}", v.len())))
    }
}

/// Reads a container whose first line must equal `magic`. The magic's first
/// word identifies the file kind; a matching kind with a different version
/// yields [`Error::Version`].
pub fn read_file(path: &Path, magic: &str) -> Result<(Fields, Vec<f64>)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = String::new();
    read_line(&mut reader, &mut line)?;
    let first = line.trim_end();
    if first != magic {
        let kind = magic.split_whitespace().next().unwrap_or_default();
        if first.split_whitespace().next() == Some(kind) {
            return Err(Error::Version {
                expected: magic.to_string(),
                found: first.to_string(),
            });
        }
        return Err(Error::Malformed(format!("bad magic line `{}`", first.escape_debug())));
    }
    let mut fields = BTreeMap::new();
    loop {
        line.clear();
        read_line(&mut reader, &mut line)?;
        let l = line.trim_end();
        if l == "end" {
            break;
        }
        let (k, v) = l.split_once(' ').unwrap_or((l, ""));
        if k.is_empty() {
            return Err(Error::Malformed("empty header line".into()));
        }
        fields.insert(k.to_string(), v.to_string());
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Malformed(format!("payload length {} is not a multiple of 8", bytes.len())));
    }
    let payload = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((Fields(fields), payload))
}

fn read_line<R: BufRead>(reader: &mut R, buf: &mut String) -> Result<()> {
    // Header lines are short; cap the read so a binary file does not get
    // slurped whole while looking for a newline.
    let n = reader.by_ref().take(4096).read_line(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => Error::Malformed("header is not valid UTF-8".into()),
        _ => Error::Io(e),
    })?;
    if n == 0 {
        return Err(Error::Malformed("unexpected end of header".into()));
    }
    Ok(())
}

/// SHA-256 of a file's bytes as lowercase hex.
pub fn file_checksum(path: &Path) -> Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(to_hex(&hasher.finalize()))
}

/// SHA-256 of a byte string as lowercase hex.
pub fn digest(bytes: &[u8]) -> String {
    to_hex(&Sha256::digest(bytes))
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
