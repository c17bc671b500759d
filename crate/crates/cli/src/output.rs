//! Staged artifact writing with a content-hash manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config_sha256: Option<String>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(data: &[u8]) -> String {
    let digest = Sha256::digest(data);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Files collected in memory and written together on [`Outputs::commit`].
pub struct Outputs {
    command: String,
    seed: Option<u64>,
    config_sha256: Option<String>,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(command: &str, seed: Option<u64>, config: Option<&str>) -> Outputs {
        Outputs {
            command: command.to_string(),
            seed,
            config_sha256: config.map(|c| sha256_hex(c.as_bytes())),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, data: impl Into<Vec<u8>>) {
        assert!(name != MANIFEST && !name.contains('/'), "bad artifact name {name}");
        self.files.push((name.to_string(), data.into()));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.add(name, text);
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        let mut files: Vec<FileEntry> = self
            .files
            .iter()
            .map(|(name, data)| FileEntry {
                path: name.clone(),
                bytes: data.len(),
                sha256: sha256_hex(data),
            })
            .collect();
        files.sort_by(|a, b| a.path.cmp(&b.path));
        Manifest {
            tool: format!("jaclab {}", env!("CARGO_PKG_VERSION")),
            command: self.command.clone(),
            seed: self.seed,
            config_sha256: self.config_sha256.clone(),
            files,
        }
    }

    /// Writes everything into a sibling staging directory, then renames it
    /// onto `dir`. A previous run's directory is replaced only if it holds a
    /// manifest. Nothing is left behind on failure.
    pub fn commit(self, dir: &Path) -> Result<PathBuf> {
        let parent = match dir.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let name = dir
            .file_name()
            .with_context(|| format!("output path {} has no final component", dir.display()))?;
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        if dir.exists() && !dir.join(MANIFEST).exists() {
            let empty = dir.is_dir() && fs::read_dir(dir)?.next().is_none();
            if !empty {
                bail!(
                    "output directory {} exists and was not written by jaclab",
                    dir.display()
                );
            }
        }
        let staging = parent.join(format!(".{}.staging-{}", name.to_string_lossy(), std::process::id()));
        let result = self.write_into(&staging).and_then(|_| {
            if dir.exists() {
                fs::remove_dir_all(dir).with_context(|| format!("removing old {}", dir.display()))?;
            }
            fs::rename(&staging, dir).with_context(|| format!("moving outputs into {}", dir.display()))
        });
        if result.is_err() {
            let _ = fs::remove_dir_all(&staging);
        }
        result.map(|_| dir.to_path_buf())
    }

    fn write_into(&self, staging: &Path) -> Result<()> {
        if staging.exists() {
            fs::remove_dir_all(staging)?;
        }
        fs::create_dir_all(staging)?;
        for (name, data) in &self.files {
            fs::write(staging.join(name), data).with_context(|| format!("writing {name}"))?;
        }
        let mut text = serde_json::to_string_pretty(&self.manifest())?;
        text.push('\n');
        fs::write(staging.join(MANIFEST), text)?;
        Ok(())
    }
}

/// Plain-text (P2) grayscale image, row 0 at the top. Non-finite values are
/// black; finite values map linearly onto `1..=255` over `range` (default:
/// their own min and max).
pub fn pgm(width: usize, height: usize, values: &[f64], range: Option<(f64, f64)>, note: &str) -> String {
    assert_eq!(values.len(), width * height);
    let (lo, hi) = range.unwrap_or_else(|| finite_range(values));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = format!("P2\n# {note}\n# range {lo:.6e} {hi:.6e}\n{width} {height}\n255\n");
    for row in values.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                if v.is_finite() {
                    let t = ((v - lo) / span).clamp(0.0, 1.0);
                    (1.0 + 254.0 * t).round() as u32
                } else {
                    0
                }
                .to_string()
            })
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn finite_range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Comma-separated table with a header row; floats in shortest round-trip
/// form, non-finite values as `nan`.
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Csv {
        Csv {
            text: format!("{}\n", header.join(",")),
        }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        let parts: Vec<String> = cells.iter().map(Cell::render).collect();
        self.text.push_str(&parts.join(","));
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}

pub enum Cell {
    F(f64),
    I(i64),
    U(usize),
    B(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) if v.is_finite() => format!("{v}"),
            Cell::F(_) => "nan".into(),
            Cell::I(v) => v.to_string(),
            Cell::U(v) => v.to_string(),
            Cell::B(v) => v.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_maps_range_and_masks_nan() {
        let img = pgm(2, 2, &[0.0, 1.0, f64::NAN, 0.5], None, "t");
        let body: Vec<&str> = img.lines().skip(5).collect();
        assert_eq!(body, vec!["1 255", "0 128"]);
        assert!(img.starts_with("P2\n"));
    }

    #[test]
    fn commit_is_atomic_and_listed() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let mut o = Outputs::new("test", Some(3), Some("{}"));
        o.add("a.csv", "x\n1\n");
        o.add_json("b.json", &vec![1, 2]).unwrap();
        o.commit(&dir).unwrap();
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST)).unwrap()).unwrap();
        let files = m["files"].as_array().unwrap();
        assert_eq!(files.len(), 2);
        for f in files {
            let data = fs::read(dir.join(f["path"].as_str().unwrap())).unwrap();
            assert_eq!(f["sha256"].as_str().unwrap(), sha256_hex(&data));
        }
        // no staging directory left behind
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
        // a rerun replaces the previous outputs
        let mut o = Outputs::new("test", Some(3), None);
        o.add("c.txt", "c");
        o.commit(&dir).unwrap();
        assert!(!dir.join("a.csv").exists() && dir.join("c.txt").exists());
    }

    #[test]
    fn foreign_directories_are_not_replaced() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("keep.txt"), "mine").unwrap();
        let mut o = Outputs::new("test", None, None);
        o.add("a", "a");
        assert!(o.commit(tmp.path()).is_err());
        assert!(tmp.path().join("keep.txt").exists());
    }

    #[test]
    fn sha_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
