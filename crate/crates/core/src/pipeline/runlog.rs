//! Append-only JSON-lines record of pipeline runs.
//!
//! Each line names the command, the config hash and the sha256 of every
//! declared input and output. Directories hash as the sorted list of their
//! `*.bin` payloads; cache metadata carries fetch timestamps and is left out.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::util::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// sha256 of a file, or of a directory's `*.bin` payloads.
pub fn hash_path(path: &Path) -> io::Result<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_bins(path, path, &mut files)?;
        files.sort();
        let mut listing = String::new();
        for (rel, digest) in files {
            listing.push_str(&format!("{rel} {digest}\n"));
        }
        Ok(sha256_hex(listing.as_bytes()))
    } else {
        Ok(sha256_hex(&fs::read(path)?))
    }
}

fn collect_bins(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_bins(root, &path, out)?;
        } else if path.extension().is_some_and(|e| e == "bin") {
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            out.push((rel, sha256_hex(&fs::read(&path)?)));
        }
    }
    Ok(())
}

/// Hashes every path, keyed by its display form.
pub fn hash_paths<'a>(paths: impl IntoIterator<Item = &'a Path>) -> io::Result<BTreeMap<String, String>> {
    paths.into_iter().map(|p| Ok((p.display().to_string(), hash_path(p)?))).collect()
}

pub fn append(log: &Path, record: &RunRecord) -> io::Result<()> {
    if let Some(parent) = log.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::OpenOptions::new().create(true).append(true).open(log)?;
    let line = serde_json::to_string(record).expect("record serializes");
    writeln!(f, "{line}")
}

pub fn read(log: &Path) -> io::Result<Vec<RunRecord>> {
    fs::read_to_string(log)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
        .collect()
}
