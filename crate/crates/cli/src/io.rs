use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bayes_ltv::signal::{read_signal, signal_to_csv};
use bayes_ltv::Signal;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::{Kind, RunConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory.
    pub path: String,
    pub seed: u64,
    pub role: String,
}

/// Index of a fixture directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: Kind,
    pub seed: u64,
    pub config: RunConfig,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> CliResult<Self> {
        read_json(&dir.join(MANIFEST))
    }

    pub fn file(&self, role: &str) -> CliResult<&FileEntry> {
        self.files
            .iter()
            .find(|f| f.role == role)
            .ok_or_else(|| CliError::config(format!("manifest has no {role:?} entry")))
    }

    pub fn files_with(&self, role: &str) -> Vec<&FileEntry> {
        self.files.iter().filter(|f| f.role == role).collect()
    }
}

/// Writes files under one directory and records what it wrote.
pub struct OutDir {
    pub root: PathBuf,
    pub written: Vec<FileEntry>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: &str, contents: &[u8], seed: u64, role: &str) -> CliResult<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.written.push(FileEntry {
            path: rel.to_string(),
            seed,
            role: role.to_string(),
        });
        Ok(())
    }

    pub fn text(&mut self, rel: &str, contents: &str, seed: u64, role: &str) -> CliResult<()> {
        self.write(rel, contents.as_bytes(), seed, role)
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T, seed: u64, role: &str) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::numerical(e.to_string()))?;
        s.push('\n');
        self.text(rel, &s, seed, role)
    }

    pub fn signal(&mut self, rel: &str, x: &Signal, seed: u64, role: &str) -> CliResult<()> {
        self.text(rel, &signal_to_csv(x), seed, role)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, format!("malformed JSON: {e}")))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn load_signal(dir: &Path, entry: &FileEntry) -> CliResult<Signal> {
    let path = dir.join(&entry.path);
    if !path.exists() {
        return Err(CliError::io(&path, format!("missing fixture ({})", entry.role)));
    }
    read_signal(&path).map_err(|e| CliError::io(&path, e))
}

/// Columns of equal length as CSV with a header row.
pub fn columns_csv(header: &[&str], cols: &[&[f64]]) -> String {
    debug_assert_eq!(header.len(), cols.len());
    let n = cols.first().map(|c| c.len()).unwrap_or(0);
    let mut s = header.join(",");
    s.push('\n');
    for i in 0..n {
        let row: Vec<String> = cols.iter().map(|c| format!("{}", c[i])).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

/// Parses a CSV written by [`columns_csv`] into named columns.
pub fn parse_columns(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::io(path, "empty file"))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut cols = vec![Vec::new(); header.len()];
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != header.len() {
            return Err(CliError::io(path, format!("line {}: expected {} fields", i + 2, header.len())));
        }
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(
                v.trim()
                    .parse()
                    .map_err(|e| CliError::io(path, format!("line {}: {e}", i + 2)))?,
            );
        }
    }
    Ok((header, cols))
}

/// Column by name from [`parse_columns`] output.
pub fn column<'a>(path: &Path, parsed: &'a (Vec<String>, Vec<Vec<f64>>), name: &str) -> CliResult<&'a [f64]> {
    parsed
        .0
        .iter()
        .position(|h| h == name)
        .map(|i| parsed.1[i].as_slice())
        .ok_or_else(|| CliError::io(path, format!("missing column {name:?}")))
}
