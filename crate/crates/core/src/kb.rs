//! Append-only hybrid audio/text knowledge base.
//!
//! A knowledge base is a directory holding `entries.jsonl` (one accepted
//! [`KnowledgeEntry`] per line) and, once embedded, `embeddings.wvrg` plus
//! `store_meta.json`. Writers hold `.lock` for the duration of an ingest.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENTRIES_FILE: &str = "entries.jsonl";
pub const STORE_FILE: &str = "embeddings.wvrg";
pub const STORE_META_FILE: &str = "store_meta.json";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Audio,
    AudioText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: String,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl KnowledgeEntry {
    pub fn text(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            modality: Modality::Text,
            text: Some(text.into()),
            audio_path: None,
            meta: BTreeMap::new(),
        }
    }

    /// Checks the modality/field invariants. Returns the rejection reason.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        match self.modality {
            Modality::Text => {
                if self.text.is_none() {
                    return Err("missing text".into());
                }
                if self.audio_path.is_some() {
                    return Err("unexpected audio_path for text entry".into());
                }
            }
            Modality::Audio => {
                if self.audio_path.is_none() {
                    return Err("missing audio_path".into());
                }
            }
            Modality::AudioText => {
                if self.audio_path.is_none() {
                    return Err("missing audio_path".into());
                }
                if self.text.is_none() {
                    return Err("missing text".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    /// (1-based line number, reason)
    pub rejected: Vec<(usize, String)>,
}

/// Read-only snapshot of a knowledge base directory.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    dir: PathBuf,
    entries: Vec<KnowledgeEntry>,
    index: HashMap<String, usize>,
}

impl KnowledgeBase {
    /// Loads the snapshot. Fails with [`Error::Locked`] while an ingest is running.
    pub fn open(dir: &Path) -> Result<Self> {
        if dir.join(LOCK_FILE).exists() {
            return Err(Error::Locked(dir.to_path_buf()));
        }
        Self::load_unlocked(dir)
    }

    fn load_unlocked(dir: &Path) -> Result<Self> {
        let path = dir.join(ENTRIES_FILE);
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        if path.exists() {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: KnowledgeEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    detail: e.to_string(),
                })?;
                index.insert(entry.id.clone(), entries.len());
                entries.push(entry);
            }
        } else if !dir.is_dir() {
            return Err(Error::NotFound(format!("knowledge base {}", dir.display())));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            entries,
            index,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ids are case-sensitive opaque strings.
    pub fn get_entry(&self, id: &str) -> Result<&KnowledgeEntry> {
        self.index
            .get(id)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::NotFound(format!("entry {id:?}")))
    }

    pub fn store_path(&self) -> PathBuf {
        self.dir.join(STORE_FILE)
    }
}

/// Exclusive writer lock on a knowledge base directory, released on drop.
pub struct KbLock {
    path: PathBuf,
}

impl KbLock {
    pub fn acquire(kb_dir: &Path) -> Result<Self> {
        let path = kb_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(kb_dir.to_path_buf()))
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for KbLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Appends the valid lines of a JSONL manifest to the knowledge base at
/// `kb_dir`, creating it if needed. Relative `audio_path`s resolve against
/// the manifest's directory. Each accepted line is written with one append,
/// so a rejected or failed line never leaves a partial record behind.
pub fn ingest_manifest(manifest_path: &Path, kb_dir: &Path) -> Result<IngestReport> {
    let manifest = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    fs::create_dir_all(kb_dir).map_err(|e| Error::io(kb_dir, e))?;
    let _lock = KbLock::acquire(kb_dir)?;

    let existing = KnowledgeBase::load_unlocked(kb_dir)?;
    let mut seen: std::collections::HashSet<String> =
        existing.entries.into_iter().map(|e| e.id).collect();
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let out_path = kb_dir.join(ENTRIES_FILE);
    let mut out = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&out_path)
        .map_err(|e| Error::io(&out_path, e))?;

    let mut report = IngestReport::default();
    for (i, line) in manifest.lines().enumerate() {
        let line_no = i + 1;
        let entry = match parse_manifest_line(line, base) {
            Ok(e) => e,
            Err(reason) => {
                report.rejected.push((line_no, reason));
                continue;
            }
        };
        if seen.contains(&entry.id) {
            report.rejected.push((line_no, "duplicate id".into()));
            continue;
        }
        let mut record = serde_json::to_string(&entry).expect("entry serializes");
        record.push('\n');
        out.write_all(record.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&out_path, e))?;
        seen.insert(entry.id);
        report.accepted += 1;
    }
    out.sync_all().map_err(|e| Error::io(&out_path, e))?;
    Ok(report)
}

fn parse_manifest_line(line: &str, base: &Path) -> std::result::Result<KnowledgeEntry, String> {
    if line.trim().is_empty() {
        return Err("empty line".into());
    }
    let mut entry: KnowledgeEntry =
        serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    entry.validate()?;
    if let Some(p) = &entry.audio_path {
        let resolved = if p.is_absolute() { p.clone() } else { base.join(p) };
        if !resolved.is_file() {
            return Err(format!("missing audio file: {}", resolved.display()));
        }
        entry.audio_path = Some(resolved);
    }
    Ok(entry)
}
