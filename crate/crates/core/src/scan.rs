//! Volume traversal, corpus persistence and IOPS series loading.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};

/// Metadata of one file on a volume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMeta {
    pub volume_id: String,
    pub file_name: String,
    /// Lowercased, with the leading dot; empty when the name has no dot.
    pub extension: String,
    /// Directory part relative to the volume root, `/`-separated, empty at root.
    pub path: String,
    pub last_accessed: DateTime<Utc>,
    pub created: DateTime<Utc>,
    pub changed: DateTime<Utc>,
    pub last_modified: DateTime<Utc>,
    pub file_size: u64,
    pub bytes_used: u64,
    pub user_folder: String,
    /// Set when the filesystem did not report some timestamp and
    /// `last_modified` was substituted for it.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub timestamps_substituted: bool,
}

impl FileMeta {
    /// `path/file_name`, relative to the volume root.
    pub fn relative_path(&self) -> String {
        if self.path.is_empty() {
            self.file_name.clone()
        } else {
            format!("{}/{}", self.path, self.file_name)
        }
    }

    /// Stable identifier across volumes.
    pub fn key(&self) -> FileKey {
        FileKey {
            volume_id: self.volume_id.clone(),
            path: self.path.clone(),
            file_name: self.file_name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FileKey {
    pub volume_id: String,
    pub path: String,
    pub file_name: String,
}

/// Lowercased suffix from the last `.`, including the dot.
pub fn extension_of(file_name: &str) -> String {
    match file_name.rfind('.') {
        Some(pos) => file_name[pos..].to_lowercase(),
        None => String::new(),
    }
}

pub fn user_folder_of(path: &str) -> String {
    path.split('/').next().unwrap_or("").to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ScanOutput {
    pub records: Vec<FileMeta>,
    pub skipped: Vec<SkippedFile>,
}

/// Walk `root` recursively and emit one record per regular file.
///
/// Symlinks are not followed. Entries whose metadata cannot be read are
/// reported in `skipped`; an unreadable root is an error.
pub fn scan_volume(root: &Path, volume_id: &str) -> Result<ScanOutput> {
    let root_meta = fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if !root_meta.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", root.display())));
    }
    fs::read_dir(root).map_err(|e| Error::io(root, e))?;

    let mut out = ScanOutput::default();
    for entry in WalkDir::new(root).follow_links(false) {
        let entry = match entry {
            Ok(e) => e,
            Err(err) => {
                let path = err.path().map(Path::to_path_buf).unwrap_or_default();
                if path == root {
                    return Err(Error::invalid(format!("cannot read root {}: {err}", root.display())));
                }
                out.skipped.push(SkippedFile {
                    path,
                    reason: err.to_string(),
                });
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        match entry.metadata() {
            Ok(meta) => out.records.push(record_for(root, entry.path(), volume_id, &meta)),
            Err(err) => out.skipped.push(SkippedFile {
                path: entry.path().to_path_buf(),
                reason: err.to_string(),
            }),
        }
    }
    out.records
        .sort_by(|a, b| (&a.path, &a.file_name).cmp(&(&b.path, &b.file_name)));
    Ok(out)
}

fn record_for(root: &Path, file: &Path, volume_id: &str, meta: &fs::Metadata) -> FileMeta {
    let rel = file.strip_prefix(root).unwrap_or(file);
    let file_name = rel
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let path = rel
        .parent()
        .map(|p| {
            p.components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/")
        })
        .unwrap_or_default();

    let modified = meta.modified().ok().map(to_utc);
    let accessed = meta.accessed().ok().map(to_utc);
    let created = meta.created().ok().map(to_utc);
    let changed = changed_time(meta);
    let last_modified = modified.or(changed).unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
    let substituted = modified.is_none() || accessed.is_none() || created.is_none() || changed.is_none();

    FileMeta {
        volume_id: volume_id.to_string(),
        extension: extension_of(&file_name),
        user_folder: user_folder_of(&path),
        file_name,
        path,
        last_accessed: accessed.unwrap_or(last_modified),
        created: created.unwrap_or(last_modified),
        changed: changed.unwrap_or(last_modified),
        last_modified,
        file_size: meta.len(),
        bytes_used: bytes_used(meta),
        timestamps_substituted: substituted,
    }
}

fn to_utc(t: SystemTime) -> DateTime<Utc> {
    DateTime::<Utc>::from(t)
}

#[cfg(unix)]
fn changed_time(meta: &fs::Metadata) -> Option<DateTime<Utc>> {
    use std::os::unix::fs::MetadataExt;
    DateTime::<Utc>::from_timestamp(meta.ctime(), meta.ctime_nsec() as u32)
}

#[cfg(not(unix))]
fn changed_time(_meta: &fs::Metadata) -> Option<DateTime<Utc>> {
    None
}

// Allocated blocks when the platform reports them, else the logical size.
#[cfg(unix)]
fn bytes_used(meta: &fs::Metadata) -> u64 {
    use std::os::unix::fs::MetadataExt;
    meta.blocks() * 512
}

#[cfg(not(unix))]
fn bytes_used(meta: &fs::Metadata) -> u64 {
    meta.len()
}

/// Read a file's bytes without bumping its access time where the OS allows it.
pub fn read_content(path: &Path) -> std::io::Result<Vec<u8>> {
    let mut file = open_noatime(path)?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    Ok(buf)
}

#[cfg(target_os = "linux")]
fn open_noatime(path: &Path) -> std::io::Result<File> {
    use std::os::unix::fs::OpenOptionsExt;
    match fs::OpenOptions::new()
        .read(true)
        .custom_flags(libc::O_NOATIME)
        .open(path)
    {
        Ok(f) => Ok(f),
        // O_NOATIME needs file ownership
        Err(e) if e.raw_os_error() == Some(libc::EPERM) => File::open(path),
        Err(e) => Err(e),
    }
}

#[cfg(not(target_os = "linux"))]
fn open_noatime(path: &Path) -> std::io::Result<File> {
    File::open(path)
}

pub fn write_corpus_to<W: Write>(records: &[FileMeta], mut w: W) -> Result<usize> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(records.len())
}

pub fn write_corpus(records: &[FileMeta], dest: &Path) -> Result<usize> {
    let file = File::create(dest).map_err(|e| Error::io(dest, e))?;
    write_corpus_to(records, BufWriter::new(file))
}

pub fn read_corpus_from<R: BufRead>(r: R, origin: &Path) -> Result<Vec<FileMeta>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FileMeta = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_corpus(src: &Path) -> Result<Vec<FileMeta>> {
    let file = File::open(src).map_err(|e| Error::io(src, e))?;
    read_corpus_from(BufReader::new(file), src)
}

/// IO operation count of one volume during one hour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IopsSample {
    pub volume_id: String,
    pub hour_start: DateTime<Utc>,
    pub io_ops: u64,
}

pub const IOPS_HEADER: [&str; 3] = ["volume_id", "hour_start", "io_ops"];

pub fn load_iops_from<R: Read>(r: R, origin: &Path) -> Result<Vec<IopsSample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).ne(IOPS_HEADER) {
        return Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`", IOPS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", rec.len())));
        }
        let volume_id = rec[0].trim().to_string();
        let hour_start = DateTime::parse_from_rfc3339(rec[1].trim())
            .map_err(|e| bad(format!("bad hour_start `{}`: {e}", &rec[1])))?
            .with_timezone(&Utc);
        let raw: i64 = rec[2]
            .trim()
            .parse()
            .map_err(|e| bad(format!("bad io_ops `{}`: {e}", &rec[2])))?;
        if raw < 0 {
            return Err(bad(format!("negative io_ops {raw}")));
        }
        if !seen.insert((volume_id.clone(), hour_start)) {
            return Err(bad(format!("duplicate sample for {volume_id} at {hour_start}")));
        }
        out.push(IopsSample {
            volume_id,
            hour_start,
            io_ops: raw as u64,
        });
    }
    out.sort_by(|a, b| (&a.volume_id, a.hour_start).cmp(&(&b.volume_id, b.hour_start)));
    Ok(out)
}

pub fn load_iops(src: &Path) -> Result<Vec<IopsSample>> {
    let file = File::open(src).map_err(|e| Error::io(src, e))?;
    load_iops_from(BufReader::new(file), src)
}

pub fn write_iops(samples: &[IopsSample], dest: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dest)?;
    w.write_record(IOPS_HEADER)?;
    for s in samples {
        w.write_record([
            s.volume_id.clone(),
            s.hour_start.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            s.io_ops.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dest, e))?;
    Ok(())
}
