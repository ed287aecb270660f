//! On-disk artifact helpers: atomic writes and self-describing text
//! artifacts whose first line is a magic tag followed by a JSON body.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = tmp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Serialises `value` as `MAGIC\n{json}\n` and writes it atomically.
pub fn save_tagged<T: Serialize>(path: &Path, magic: &str, value: &T) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(magic.as_bytes());
    out.push(b'\n');
    serde_json::to_writer(&mut out, value)?;
    out.push(b'\n');
    write_atomic(path, &out)
}

/// Reads an artifact written by [`save_tagged`], checking the magic line.
pub fn load_tagged<T: DeserializeOwned>(path: &Path, magic: &str) -> Result<T> {
    let file = fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != magic {
        return Err(Error::Artifact {
            path: path.to_path_buf(),
            msg: format!("expected magic `{magic}`, found `{}`", first.trim_end()),
        });
    }
    let mut body = String::new();
    reader.read_to_string(&mut body)?;
    serde_json::from_str(&body).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Returns the magic line of a tagged artifact without parsing the body.
pub fn peek_magic(path: &Path) -> Result<String> {
    let file = fs::File::open(path)?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first)?;
    Ok(first.trim_end().to_string())
}
