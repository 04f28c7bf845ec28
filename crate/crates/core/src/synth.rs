//! Synthetic multi-volume corpus with planted sensitive content, skewed
//! timestamps, hourly IOPS and a ground-truth manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, FileTimes};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration as StdDuration, SystemTime};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::SensitivityLabel;
use crate::error::{Error, Result};
use crate::scan::{write_iops, IopsSample};

pub const VOLUMES_DIR: &str = "volumes";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const IOPS_FILE: &str = "iops.csv";
pub const CAPACITIES_FILE: &str = "volumes.csv";
pub const HOURS: usize = 4 * 7 * 24;

/// Shape of one synthetic volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeShape {
    pub id: String,
    /// Relative share of the corpus' files.
    pub weight: f64,
    /// Probability a file is of the sensitive kind.
    pub sensitive_share: f64,
    /// Provisioned capacity in bytes.
    pub capacity: u64,
    /// Target mean IO density (IO/s/GB).
    pub io_density: f64,
    /// Mean age of last modification, in days.
    pub mean_age_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub total_files: usize,
    pub seed: u64,
    /// Probability that a sensitive-kind file actually contains dictionary
    /// hits; the manifest label follows the content.
    pub planting_rate: f64,
    /// Probability that extension, name tokens and folder follow the file's
    /// kind.
    pub signal: f64,
    /// Share of opaque binary files whose content cannot be labeled.
    pub opaque_share: f64,
    pub users_per_volume: usize,
    /// Timestamps are laid out relative to this instant.
    pub reference_time: DateTime<Utc>,
    pub volumes: Vec<VolumeShape>,
}

fn tb(v: f64) -> u64 {
    (v * 1e12).round() as u64
}

impl Default for SynthConfig {
    fn default() -> Self {
        let shape = |id: &str, weight, share, cap, density, age| VolumeShape {
            id: id.into(),
            weight,
            sensitive_share: share,
            capacity: tb(cap),
            io_density: density,
            mean_age_days: age,
        };
        SynthConfig {
            total_files: 21000,
            seed: 42,
            planting_rate: 1.0,
            signal: 0.95,
            opaque_share: 0.02,
            users_per_volume: 24,
            reference_time: Utc.with_ymd_and_hms(2024, 6, 30, 0, 0, 0).unwrap(),
            volumes: vec![
                shape("V1", 0.22, 0.95, 13.66, 0.0021, 900.0),
                shape("V2", 0.22, 0.70, 12.32, 0.0034, 700.0),
                shape("V3", 0.20, 0.46, 6.06, 0.0012, 1200.0),
                shape("V4", 0.10, 0.97, 1.14, 0.0063, 500.0),
                shape("V5", 0.14, 0.61, 0.66, 0.0500, 200.0),
                shape("V6", 0.07, 0.58, 0.01, 0.0078, 400.0),
                shape("V7", 0.05, 0.17, 0.01, 0.0045, 1500.0),
            ],
        }
    }
}

const SENSITIVE_EXTS: [&str; 4] = [".csv", ".eml", ".sql", ".txt"];
const PLAIN_EXTS: [&str; 5] = [".log", ".md", ".json", ".html", ".yaml"];
const SENSITIVE_WORDS: [&str; 8] = ["payroll", "invoice", "customer", "employee", "tax", "contract", "benefits", "billing"];
const PLAIN_WORDS: [&str; 8] = ["readme", "build", "roadmap", "notes", "draft", "meeting", "release", "design"];
const NEUTRAL_WORDS: [&str; 6] = ["final", "copy", "new", "old", "team", "q"];
const SENSITIVE_DIRS: [&str; 3] = ["finance", "hr", "legal"];
const PLAIN_DIRS: [&str; 3] = ["projects", "archive", "scratch"];
const FILLER: [&str; 40] = [
    "alpha", "beta", "gamma", "delta", "system", "service", "update", "review", "plan", "status", "network", "storage",
    "cluster", "volume", "backup", "schedule", "team", "project", "milestone", "feature", "deploy", "release", "module",
    "latency", "throughput", "capacity", "metric", "report", "summary", "agenda", "action", "item", "follow", "weekly",
    "monthly", "draft", "version", "pending", "complete", "owner",
];
const KEYWORDS: [&str; 5] = ["confidential", "proprietary", "ssn", "salary", "password"];

/// Truth for one generated file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub volume_id: String,
    pub path: String,
    pub file_name: String,
    pub label: SensitivityLabel,
    /// Metadata kind the name/extension/folder were drawn for.
    pub kind: SensitivityLabel,
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub root: PathBuf,
    pub files: usize,
    pub per_volume: BTreeMap<String, usize>,
    pub sensitive: usize,
    pub unknown: usize,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.volumes.is_empty() || self.total_files < self.volumes.len() {
            return Err(Error::Config("need at least one volume and one file per volume".into()));
        }
        if !unit(self.planting_rate) || !unit(self.signal) || !unit(self.opaque_share) {
            return Err(Error::Config("planting_rate, signal and opaque_share must lie in [0, 1]".into()));
        }
        if self.users_per_volume == 0 {
            return Err(Error::Config("users_per_volume must be at least 1".into()));
        }
        for v in &self.volumes {
            if !(v.weight > 0.0) || !unit(v.sensitive_share) || v.capacity == 0 || v.io_density < 0.0 {
                return Err(Error::Config(format!("invalid shape for volume {}", v.id)));
            }
        }
        Ok(())
    }

    /// Files per volume; weights are normalized and the remainder goes to
    /// the first volumes.
    pub fn file_counts(&self) -> Vec<usize> {
        let total_w: f64 = self.volumes.iter().map(|v| v.weight).sum();
        let mut counts: Vec<usize> = self
            .volumes
            .iter()
            .map(|v| ((v.weight / total_w) * self.total_files as f64).floor().max(1.0) as usize)
            .collect();
        let (n, mut i) = (counts.len(), 0);
        while counts.iter().sum::<usize>() < self.total_files {
            counts[i % n] += 1;
            i += 1;
        }
        counts
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, own: &'a [&'a str], other: &'a [&'a str], follow: bool) -> &'a str {
    if follow {
        own.choose(rng).unwrap()
    } else {
        other.choose(rng).unwrap()
    }
}

fn luhn_number(rng: &mut ChaCha8Rng) -> String {
    let mut digits: Vec<u32> = vec![4];
    digits.extend((0..14).map(|_| rng.gen_range(0..10)));
    let sum: u32 = digits
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &d)| {
            if i % 2 == 0 {
                let x = d * 2;
                if x > 9 {
                    x - 9
                } else {
                    x
                }
            } else {
                d
            }
        })
        .sum();
    digits.push((10 - sum % 10) % 10);
    let s: String = digits.iter().map(|d| char::from_digit(*d, 10).unwrap()).collect();
    format!("{} {} {} {}", &s[0..4], &s[4..8], &s[8..12], &s[12..16])
}

fn sensitive_snippet(rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..5) {
        0 => format!(
            "contact {}.{}@example.com",
            FILLER.choose(rng).unwrap(),
            FILLER.choose(rng).unwrap()
        ),
        1 => format!(
            "call {}-{}-{}",
            rng.gen_range(200..999),
            rng.gen_range(200..999),
            rng.gen_range(1000..9999)
        ),
        2 => format!(
            "id {:03}-{:02}-{:04}",
            rng.gen_range(100..899),
            rng.gen_range(10..99),
            rng.gen_range(1000..9999)
        ),
        3 => format!("card {}", luhn_number(rng)),
        _ => KEYWORDS.choose(rng).unwrap().to_string(),
    }
}

fn filler_line(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(4..12);
    (0..n).map(|_| *FILLER.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn render(ext: &str, lines: &[String]) -> String {
    match ext {
        ".html" => format!("<html><body>\n{}\n</body></html>\n", lines.iter().map(|l| format!("<p>{l}</p>")).collect::<Vec<_>>().join("\n")),
        ".json" => {
            let items: Vec<String> = lines.iter().map(|l| format!("  \"{l}\"")).collect();
            format!("[\n{}\n]\n", items.join(",\n"))
        }
        ".csv" => {
            let rows: Vec<String> = lines.iter().enumerate().map(|(i, l)| format!("{i},{l}")).collect();
            format!("row,text\n{}\n", rows.join("\n"))
        }
        _ => lines.join("\n") + "\n",
    }
}

fn system_time(t: DateTime<Utc>) -> SystemTime {
    SystemTime::UNIX_EPOCH + StdDuration::from_secs(t.timestamp().max(0) as u64)
}

/// Generate the corpus under `dest`, which must be empty or absent.
///
/// Layout: `volumes/<id>/<user>/<folder>/<file>`, plus `manifest.csv`,
/// `iops.csv` (one row per volume-hour over four weeks) and `volumes.csv`
/// (capacities).
pub fn gen_corpus(cfg: &SynthConfig, dest: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    if dest.exists() {
        let mut entries = fs::read_dir(dest).map_err(|e| Error::io(dest, e))?;
        if entries.next().is_some() {
            return Err(Error::invalid(format!("destination {} is not empty", dest.display())));
        }
    }
    fs::create_dir_all(dest.join(VOLUMES_DIR)).map_err(|e| Error::io(dest, e))?;

    let mut manifest = Vec::new();
    let mut per_volume = BTreeMap::new();
    let now = cfg.reference_time;
    for (vi, (shape, count)) in cfg.volumes.iter().zip(cfg.file_counts()).enumerate() {
        let mut rng = crate::seed::rng(crate::seed::derive(cfg.seed, &format!("synth-volume-{vi}")));
        let vol_root = dest.join(VOLUMES_DIR).join(&shape.id);
        let mut used_names = std::collections::HashSet::new();
        for i in 0..count {
            let opaque = rng.gen_bool(cfg.opaque_share);
            let sensitive_kind = rng.gen_bool(shape.sensitive_share);
            let follow = |rng: &mut ChaCha8Rng| rng.gen_bool(cfg.signal);
            let user = format!("user{:03}", rng.gen_range(0..cfg.users_per_volume));
            let f1 = follow(&mut rng);
            let sub = if sensitive_kind {
                pick(&mut rng, &SENSITIVE_DIRS, &PLAIN_DIRS, f1)
            } else {
                pick(&mut rng, &PLAIN_DIRS, &SENSITIVE_DIRS, f1)
            };
            let f2 = follow(&mut rng);
            let word = if sensitive_kind {
                pick(&mut rng, &SENSITIVE_WORDS, &PLAIN_WORDS, f2)
            } else {
                pick(&mut rng, &PLAIN_WORDS, &SENSITIVE_WORDS, f2)
            };
            let f3 = follow(&mut rng);
            let ext = if opaque {
                ".bin"
            } else if sensitive_kind {
                pick(&mut rng, &SENSITIVE_EXTS, &PLAIN_EXTS, f3)
            } else {
                pick(&mut rng, &PLAIN_EXTS, &SENSITIVE_EXTS, f3)
            };
            let neutral = NEUTRAL_WORDS.choose(&mut rng).unwrap();
            let mut name = format!("{word}_{neutral}_{}{ext}", rng.gen_range(0..10000));
            let rel_dir = format!("{user}/{sub}");
            while !used_names.insert(format!("{rel_dir}/{name}")) {
                name = format!("{word}_{neutral}_{}_{i}{ext}", rng.gen_range(0..10000));
            }

            let n_lines = rng.gen_range(3..40);
            let mut lines: Vec<String> = (0..n_lines).map(|_| filler_line(&mut rng)).collect();
            let planted = sensitive_kind && !opaque && rng.gen_bool(cfg.planting_rate);
            if planted {
                for _ in 0..rng.gen_range(1..4) {
                    let at = rng.gen_range(0..lines.len());
                    let snippet = sensitive_snippet(&mut rng);
                    lines[at] = format!("{} {snippet}", lines[at]);
                }
            }
            let bytes: Vec<u8> = if opaque {
                (0..rng.gen_range(64..4096)).map(|_| rng.gen::<u8>()).chain([0u8]).collect()
            } else {
                render(ext, &lines).into_bytes()
            };

            // skewed ages: exponential around the volume's mean
            let age_days = (-shape.mean_age_days * (1.0 - rng.gen::<f64>()).ln()).min(3650.0);
            let modified = now - Duration::seconds((age_days * 86400.0) as i64);
            let accessed = if rng.gen_bool(0.3) {
                modified + Duration::seconds(rng.gen_range(0..14 * 86400))
            } else {
                modified + Duration::seconds(((now - modified).num_seconds() as f64 * rng.gen::<f64>()) as i64)
            }
            .min(now);

            let dir = vol_root.join(&rel_dir);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(&name);
            let mut file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            file.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
            file.set_times(FileTimes::new().set_accessed(system_time(accessed)).set_modified(system_time(modified)))
                .map_err(|e| Error::io(&path, e))?;

            let label = if opaque {
                SensitivityLabel::Unknown
            } else {
                SensitivityLabel::from_bool(planted)
            };
            manifest.push(ManifestEntry {
                volume_id: shape.id.clone(),
                path: rel_dir,
                file_name: name,
                label,
                kind: SensitivityLabel::from_bool(sensitive_kind),
            });
        }
        per_volume.insert(shape.id.clone(), count);
    }

    manifest.sort_by(|a, b| (&a.volume_id, &a.path, &a.file_name).cmp(&(&b.volume_id, &b.path, &b.file_name)));
    write_manifest(&manifest, &dest.join(MANIFEST_FILE))?;
    write_iops(&synth_iops(cfg), &dest.join(IOPS_FILE))?;
    let capacities: BTreeMap<String, u64> = cfg.volumes.iter().map(|v| (v.id.clone(), v.capacity)).collect();
    crate::hotness::write_capacities(&capacities, &dest.join(CAPACITIES_FILE))?;

    Ok(SynthSummary {
        root: dest.to_path_buf(),
        files: manifest.len(),
        per_volume,
        sensitive: manifest.iter().filter(|m| m.label == SensitivityLabel::Sensitive).count(),
        unknown: manifest.iter().filter(|m| m.label == SensitivityLabel::Unknown).count(),
    })
}

/// Hourly IO counts for the four weeks before the reference time, with a
/// daily cycle around each volume's target density.
pub fn synth_iops(cfg: &SynthConfig) -> Vec<IopsSample> {
    let start = cfg.reference_time - Duration::hours(HOURS as i64);
    let mut out = Vec::with_capacity(HOURS * cfg.volumes.len());
    for (vi, v) in cfg.volumes.iter().enumerate() {
        let mut rng = crate::seed::rng(crate::seed::derive(cfg.seed, &format!("synth-iops-{vi}")));
        let gb = v.capacity as f64 / crate::hotness::BYTES_PER_GB;
        for h in 0..HOURS {
            let phase = (h % 24) as f64 / 24.0 * std::f64::consts::TAU;
            let factor = 1.0 + 0.5 * phase.sin() + rng.gen_range(-0.2..0.2);
            let ops = (v.io_density * factor * gb * 3600.0).round().max(0.0) as u64;
            out.push(IopsSample {
                volume_id: v.id.clone(),
                hour_start: start + Duration::hours(h as i64),
                io_ops: ops,
            });
        }
    }
    out.sort_by(|a, b| (&a.volume_id, a.hour_start).cmp(&(&b.volume_id, b.hour_start)));
    out
}

pub fn write_manifest(entries: &[ManifestEntry], dest: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dest)?;
    w.write_record(["volume_id", "path", "file_name", "label", "kind"])?;
    for e in entries {
        w.write_record([&e.volume_id, &e.path, &e.file_name, e.label.as_str(), e.kind.as_str()])?;
    }
    w.flush().map_err(|e| Error::io(dest, e))
}

pub fn read_manifest(src: &Path) -> Result<Vec<ManifestEntry>> {
    let mut r = csv::Reader::from_path(src)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| {
            s.parse::<SensitivityLabel>().map_err(|_| Error::Parse {
                path: src.to_path_buf(),
                line: i + 2,
                message: format!("unknown label '{s}'"),
            })
        };
        out.push(ManifestEntry {
            volume_id: rec[0].to_string(),
            path: rec[1].to_string(),
            file_name: rec[2].to_string(),
            label: parse(&rec[3])?,
            kind: parse(&rec[4])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{compile_dictionary, label_file, scan_file, Extractors, LabelRule};

    fn small(total: usize) -> SynthConfig {
        SynthConfig {
            total_files: total,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn nonempty_destination_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "x").unwrap();
        assert!(gen_corpus(&small(20), dir.path()).is_err());
    }

    #[test]
    fn zero_planting_is_all_non_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            planting_rate: 0.0,
            opaque_share: 0.0,
            ..small(200)
        };
        let s = gen_corpus(&cfg, &dir.path().join("c")).unwrap();
        assert_eq!(s.sensitive, 0);
        let m = read_manifest(&dir.path().join("c").join(MANIFEST_FILE)).unwrap();
        assert!(m.iter().all(|e| e.label == SensitivityLabel::NonSensitive));
    }

    #[test]
    fn full_planting_matches_content_scan() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SynthConfig {
            planting_rate: 1.0,
            opaque_share: 0.0,
            ..small(150)
        };
        for v in cfg.volumes.iter_mut() {
            v.sensitive_share = 1.0;
        }
        let root = dir.path().join("c");
        gen_corpus(&cfg, &root).unwrap();
        let m = read_manifest(&root.join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.len(), 150);
        assert!(m.iter().all(|e| e.label == SensitivityLabel::Sensitive));
        let dict = compile_dictionary(None).unwrap();
        let ex = Extractors::new();
        for e in &m {
            let p = root.join(VOLUMES_DIR).join(&e.volume_id).join(&e.path).join(&e.file_name);
            let ext = crate::scan::extension_of(&e.file_name);
            let r = scan_file(&p, "f", &ext, &dict, &ex);
            assert_eq!(label_file(&r, &LabelRule::any_match()), SensitivityLabel::Sensitive, "{}", p.display());
        }
    }

    #[test]
    fn manifest_agrees_with_scanner_on_mixed_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("c");
        gen_corpus(&small(300), &root).unwrap();
        let dict = compile_dictionary(None).unwrap();
        let ex = Extractors::new();
        for e in read_manifest(&root.join(MANIFEST_FILE)).unwrap() {
            let p = root.join(VOLUMES_DIR).join(&e.volume_id).join(&e.path).join(&e.file_name);
            let r = scan_file(&p, "f", &crate::scan::extension_of(&e.file_name), &dict, &ex);
            assert_eq!(label_file(&r, &LabelRule::any_match()), e.label, "{}", p.display());
        }
    }

    #[test]
    fn iops_densities_follow_targets() {
        let cfg = SynthConfig::default();
        let samples = synth_iops(&cfg);
        assert_eq!(samples.len(), HOURS * 7);
        for v in &cfg.volumes {
            let mine: Vec<IopsSample> = samples.iter().filter(|s| s.volume_id == v.id).cloned().collect();
            // hand formula: mean over hours of ops / 3600 / (bytes / 1e9)
            let gb = v.capacity as f64 / 1e9;
            let hand = mine.iter().map(|s| s.io_ops as f64 / 3600.0 / gb).sum::<f64>() / mine.len() as f64;
            let d = crate::hotness::io_density(&mine, v.capacity).unwrap();
            assert!((d.mean - hand).abs() <= 1e-12 * hand.max(1.0));
            assert!((hand - v.io_density).abs() / v.io_density < 0.1, "{}: {hand}", v.id);
        }
    }

    #[test]
    fn luhn_numbers_validate() {
        let mut rng = crate::seed::rng(3);
        for _ in 0..50 {
            assert!(crate::dictionary::luhn_valid(&luhn_number(&mut rng)));
        }
    }
}
