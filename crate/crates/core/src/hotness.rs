//! IO density and per-volume metadata aggregation.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::{FileMeta, IopsSample};

pub const BYTES_PER_GB: f64 = 1e9;
const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoDensity {
    /// Mean over hours of IO/s per GB.
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Hourly-average IO density (IO per second per GB of `volume_size` bytes).
pub fn io_density(samples: &[IopsSample], volume_size: u64) -> Result<IoDensity> {
    if volume_size == 0 {
        return Err(Error::invalid("volume size must be positive"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("io density needs at least one IOPS sample"));
    }
    let gb = volume_size as f64 / BYTES_PER_GB;
    let hourly: Vec<f64> = samples
        .iter()
        .map(|s| s.io_ops as f64 / SECONDS_PER_HOUR / gb)
        .collect();
    let mean = hourly.iter().sum::<f64>() / hourly.len() as f64;
    let (min, max) = hourly
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(IoDensity { mean, min, max })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HotnessThresholds {
    /// Densities below this are cold.
    pub warm_from: f64,
    /// Densities at or above this are hot.
    pub hot_from: f64,
}

impl Default for HotnessThresholds {
    fn default() -> Self {
        HotnessThresholds {
            warm_from: 0.01,
            hot_from: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HotnessBand {
    Cold,
    Warm,
    Hot,
}

impl HotnessThresholds {
    pub fn band(&self, density: f64) -> HotnessBand {
        if density < self.warm_from {
            HotnessBand::Cold
        } else if density < self.hot_from {
            HotnessBand::Warm
        } else {
            HotnessBand::Hot
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeProfile {
    pub volume_id: String,
    /// Provisioned capacity in bytes; the IO density denominator.
    pub total_size: u64,
    pub total_file_count: u64,
    /// Sum of file sizes in bytes.
    pub total_file_size: u64,
    pub top3_extensions_by_size: Vec<String>,
    pub top3_extensions_by_count: Vec<String>,
    pub pct_not_modified_1y_count: f64,
    pub pct_not_modified_1y_size: f64,
    pub pct_not_modified_3y_count: f64,
    pub pct_not_modified_3y_size: f64,
    pub pct_not_accessed_1y_count: f64,
    pub pct_not_accessed_1y_size: f64,
    pub pct_not_accessed_3y_count: f64,
    pub pct_not_accessed_3y_size: f64,
    pub pct_not_accessed_after_2w_count: f64,
    pub pct_not_accessed_after_2w_size: f64,
    pub io_density: f64,
    pub io_density_min: f64,
    pub io_density_max: f64,
}

impl VolumeProfile {
    pub fn age_percentages(&self) -> [f64; 10] {
        [
            self.pct_not_modified_1y_count,
            self.pct_not_modified_1y_size,
            self.pct_not_modified_3y_count,
            self.pct_not_modified_3y_size,
            self.pct_not_accessed_1y_count,
            self.pct_not_accessed_1y_size,
            self.pct_not_accessed_3y_count,
            self.pct_not_accessed_3y_size,
            self.pct_not_accessed_after_2w_count,
            self.pct_not_accessed_after_2w_size,
        ]
    }
}

pub fn one_year() -> Duration {
    Duration::days(365)
}

pub fn three_years() -> Duration {
    Duration::days(3 * 365)
}

pub fn not_modified_within(f: &FileMeta, now: DateTime<Utc>, window: Duration) -> bool {
    now - f.last_modified > window
}

pub fn not_accessed_within(f: &FileMeta, now: DateTime<Utc>, window: Duration) -> bool {
    now - f.last_accessed > window
}

/// "Not accessed after two weeks": the last access happened no later than
/// two weeks after creation.
pub fn not_accessed_after_two_weeks(f: &FileMeta) -> bool {
    f.last_accessed <= f.created + Duration::days(14)
}

struct Tally {
    count: u64,
    size: u64,
}

impl Tally {
    fn pct(&self, total_count: u64, total_size: u64) -> (f64, f64) {
        let p = |a: u64, b: u64| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        (p(self.count, total_count), p(self.size, total_size))
    }
}

fn tally(files: &[FileMeta], pred: impl Fn(&FileMeta) -> bool) -> Tally {
    let mut t = Tally { count: 0, size: 0 };
    for f in files.iter().filter(|f| pred(f)) {
        t.count += 1;
        t.size += f.file_size;
    }
    t
}

/// Per-extension `(count, total size)`.
pub fn extension_groups(files: &[FileMeta]) -> BTreeMap<String, (u64, u64)> {
    let mut g: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for f in files {
        let e = g.entry(f.extension.clone()).or_default();
        e.0 += 1;
        e.1 += f.file_size;
    }
    g
}

fn top3(groups: &BTreeMap<String, (u64, u64)>, key: impl Fn(&(u64, u64)) -> u64) -> Vec<String> {
    let mut v: Vec<(&String, u64)> = groups.iter().map(|(e, s)| (e, key(s))).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter().take(3).map(|(e, _)| e.clone()).collect()
}

/// Aggregate the files of one volume against an explicit `now`.
///
/// `total_size` defaults to the allocated bytes of the files when the
/// provisioned capacity is unknown. Without IOPS samples the density is 0.
pub fn aggregate_volume(
    files: &[FileMeta],
    now: DateTime<Utc>,
    samples: &[IopsSample],
    total_size: Option<u64>,
) -> Result<VolumeProfile> {
    let first = files
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate an empty volume"))?;
    if let Some(other) = files.iter().find(|f| f.volume_id != first.volume_id) {
        return Err(Error::invalid(format!(
            "mixed volume ids: {} and {}",
            first.volume_id, other.volume_id
        )));
    }
    if let Some(s) = samples.iter().find(|s| s.volume_id != first.volume_id) {
        return Err(Error::invalid(format!(
            "IOPS sample for {} passed to volume {}",
            s.volume_id, first.volume_id
        )));
    }
    let total_file_count = files.len() as u64;
    let total_file_size: u64 = files.iter().map(|f| f.file_size).sum();
    let allocated: u64 = files.iter().map(|f| f.bytes_used).sum();
    let total_size = total_size.unwrap_or(allocated.max(total_file_size));

    let groups = extension_groups(files);
    let pct = |t: Tally| t.pct(total_file_count, total_file_size);
    let (nm1c, nm1s) = pct(tally(files, |f| not_modified_within(f, now, one_year())));
    let (nm3c, nm3s) = pct(tally(files, |f| not_modified_within(f, now, three_years())));
    let (na1c, na1s) = pct(tally(files, |f| not_accessed_within(f, now, one_year())));
    let (na3c, na3s) = pct(tally(files, |f| not_accessed_within(f, now, three_years())));
    let (n2wc, n2ws) = pct(tally(files, not_accessed_after_two_weeks));

    let density = if samples.is_empty() || total_size == 0 {
        IoDensity { mean: 0.0, min: 0.0, max: 0.0 }
    } else {
        io_density(samples, total_size)?
    };

    Ok(VolumeProfile {
        volume_id: first.volume_id.clone(),
        total_size,
        total_file_count,
        total_file_size,
        top3_extensions_by_size: top3(&groups, |g| g.1),
        top3_extensions_by_count: top3(&groups, |g| g.0),
        pct_not_modified_1y_count: nm1c,
        pct_not_modified_1y_size: nm1s,
        pct_not_modified_3y_count: nm3c,
        pct_not_modified_3y_size: nm3s,
        pct_not_accessed_1y_count: na1c,
        pct_not_accessed_1y_size: na1s,
        pct_not_accessed_3y_count: na3c,
        pct_not_accessed_3y_size: na3s,
        pct_not_accessed_after_2w_count: n2wc,
        pct_not_accessed_after_2w_size: n2ws,
        io_density: density.mean,
        io_density_min: density.min,
        io_density_max: density.max,
    })
}

/// Profiles for every volume in `corpus`, ordered by volume id.
pub fn aggregate_all(
    corpus: &[FileMeta],
    now: DateTime<Utc>,
    iops: &[IopsSample],
    capacities: &BTreeMap<String, u64>,
) -> Result<Vec<VolumeProfile>> {
    let mut by_volume: BTreeMap<&str, Vec<FileMeta>> = BTreeMap::new();
    for f in corpus {
        by_volume.entry(f.volume_id.as_str()).or_default().push(f.clone());
    }
    let mut samples: HashMap<&str, Vec<IopsSample>> = HashMap::new();
    for s in iops {
        samples.entry(s.volume_id.as_str()).or_default().push(s.clone());
    }
    by_volume
        .into_iter()
        .map(|(v, files)| {
            let s = samples.get(v).map(Vec::as_slice).unwrap_or(&[]);
            aggregate_volume(&files, now, s, capacities.get(v).copied())
        })
        .collect()
}

/// `volume_id,total_size` CSV of provisioned capacities in bytes.
pub fn load_capacities(src: &Path) -> Result<BTreeMap<String, u64>> {
    let mut rdr = csv::Reader::from_path(src)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let size = rec.get(1).and_then(|s| s.trim().parse::<u64>().ok()).ok_or_else(|| Error::Parse {
            path: src.to_path_buf(),
            line,
            message: "expected volume_id,total_size".into(),
        })?;
        out.insert(rec[0].trim().to_string(), size);
    }
    Ok(out)
}

pub fn write_capacities(capacities: &BTreeMap<String, u64>, dest: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dest)?;
    w.write_record(["volume_id", "total_size"])?;
    for (v, s) in capacities {
        w.write_record([v.clone(), s.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(dest, e))?;
    Ok(())
}

const PROFILE_HEADER: [&str; 20] = [
    "volume_id",
    "total_size",
    "total_file_count",
    "total_file_size",
    "top3_extensions_by_size",
    "top3_extensions_by_count",
    "pct_not_modified_1y_count",
    "pct_not_modified_1y_size",
    "pct_not_modified_3y_count",
    "pct_not_modified_3y_size",
    "pct_not_accessed_1y_count",
    "pct_not_accessed_1y_size",
    "pct_not_accessed_3y_count",
    "pct_not_accessed_3y_size",
    "pct_not_accessed_after_2w_count",
    "pct_not_accessed_after_2w_size",
    "io_density",
    "io_density_min",
    "io_density_max",
    "hotness",
];

pub fn write_profiles_csv<W: std::io::Write>(profiles: &[VolumeProfile], thresholds: &HotnessThresholds, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(PROFILE_HEADER)?;
    for p in profiles {
        let mut row = vec![
            p.volume_id.clone(),
            p.total_size.to_string(),
            p.total_file_count.to_string(),
            p.total_file_size.to_string(),
            p.top3_extensions_by_size.join(";"),
            p.top3_extensions_by_count.join(";"),
        ];
        row.extend(p.age_percentages().iter().map(|v| format!("{v:.2}")));
        row.push(format!("{:.3e}", p.io_density));
        row.push(format!("{:.3e}", p.io_density_min));
        row.push(format!("{:.3e}", p.io_density_max));
        row.push(format!("{:?}", thresholds.band(p.io_density)).to_lowercase());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

pub fn write_profiles_json(profiles: &[VolumeProfile], dest: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(profiles)?;
    fs::write(dest, text).map_err(|e| Error::io(dest, e))
}

pub fn read_profiles_json(src: &Path) -> Result<Vec<VolumeProfile>> {
    let text = fs::read_to_string(src).map_err(|e| Error::io(src, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap()
    }

    fn file(ext: &str, size: u64, modified_days_ago: i64, accessed_days_ago: i64) -> FileMeta {
        let created = now() - Duration::days(modified_days_ago.max(accessed_days_ago) + 30);
        FileMeta {
            volume_id: "V1".into(),
            file_name: format!("f{ext}"),
            extension: ext.into(),
            path: String::new(),
            last_accessed: now() - Duration::days(accessed_days_ago),
            created,
            changed: now() - Duration::days(modified_days_ago),
            last_modified: now() - Duration::days(modified_days_ago),
            file_size: size,
            bytes_used: size,
            user_folder: String::new(),
            timestamps_substituted: false,
        }
    }

    fn hourly(volume: &str, ops: &[u64]) -> Vec<IopsSample> {
        ops.iter()
            .enumerate()
            .map(|(h, &io_ops)| IopsSample {
                volume_id: volume.into(),
                hour_start: now() + Duration::hours(h as i64),
                io_ops,
            })
            .collect()
    }

    #[test]
    fn density_arithmetic() {
        let d = io_density(&hourly("V1", &[36_000; 24]), 5_000_000_000).unwrap();
        assert!((d.mean - 2.0).abs() < 1e-12);
        assert_eq!(io_density(&hourly("V1", &[0; 5]), 10).unwrap().mean, 0.0);
        assert!(io_density(&hourly("V1", &[1]), 0).is_err());
        assert!(io_density(&[], 10).is_err());
        let d = io_density(&hourly("V1", &[0, 3600, 7200]), 1_000_000_000).unwrap();
        assert_eq!((d.min, d.mean, d.max), (0.0, 1.0, 2.0));
    }

    #[test]
    fn density_halves_when_size_doubles() {
        let s = hourly("V1", &[120, 7, 3600, 0, 99]);
        let a = io_density(&s, 3_000_000_000).unwrap().mean;
        let b = io_density(&s, 6_000_000_000).unwrap().mean;
        assert_eq!(a, 2.0 * b);
    }

    #[test]
    fn recently_modified_volume() {
        let files: Vec<_> = (0..5).map(|_| file(".txt", 10, 1, 1)).collect();
        let p = aggregate_volume(&files, now(), &[], None).unwrap();
        assert_eq!(p.pct_not_modified_1y_count, 0.0);
        assert_eq!(p.pct_not_modified_3y_size, 0.0);
    }

    #[test]
    fn nine_of_ten_stale_for_two_years() {
        let mut files: Vec<_> = (0..9).map(|_| file(".doc", 10, 730, 730)).collect();
        files.push(file(".doc", 10, 3, 3));
        let p = aggregate_volume(&files, now(), &[], None).unwrap();
        assert_eq!(p.pct_not_modified_1y_count, 90.0);
        assert_eq!(p.pct_not_modified_3y_count, 0.0);
    }

    #[test]
    fn top_extensions_break_ties_lexicographically() {
        let files = vec![
            file(".xls", 100, 1, 1),
            file(".zip", 100, 1, 1),
            file(".nsf", 500, 1, 1),
            file(".doc", 1, 1, 1),
            file(".doc", 1, 1, 1),
            file(".pdf", 1, 1, 1),
        ];
        let p = aggregate_volume(&files, now(), &[], None).unwrap();
        assert_eq!(p.top3_extensions_by_size, vec![".nsf", ".xls", ".zip"]);
        assert_eq!(p.top3_extensions_by_count, vec![".doc", ".nsf", ".pdf"]);
        let total: u64 = extension_groups(&files).values().map(|g| g.0).sum();
        assert_eq!(total, p.total_file_count);
    }

    #[test]
    fn mixed_volumes_rejected() {
        let mut b = file(".a", 1, 1, 1);
        b.volume_id = "V2".into();
        assert!(aggregate_volume(&[file(".a", 1, 1, 1), b], now(), &[], None).is_err());
        assert!(aggregate_volume(&[], now(), &[], None).is_err());
    }

    #[test]
    fn two_week_predicate() {
        let mut f = file(".a", 1, 1, 1);
        f.created = now() - Duration::days(100);
        f.last_accessed = f.created + Duration::days(14);
        assert!(not_accessed_after_two_weeks(&f));
        f.last_accessed = f.created + Duration::days(15);
        assert!(!not_accessed_after_two_weeks(&f));
    }

    fn table_iv_profile() -> VolumeProfile {
        VolumeProfile {
            volume_id: "V3".into(),
            total_size: 6_060_000_000_000,
            total_file_count: 3_627_061,
            total_file_size: 2_640_000_000_000,
            top3_extensions_by_size: vec!["nsf".into(), "zip".into(), "xls".into()],
            top3_extensions_by_count: vec!["doc".into(), "xls".into(), "pdf".into()],
            pct_not_modified_1y_count: 94.18,
            pct_not_modified_1y_size: 89.44,
            pct_not_modified_3y_count: 0.0,
            pct_not_modified_3y_size: 0.0,
            pct_not_accessed_1y_count: 81.03,
            pct_not_accessed_1y_size: 76.28,
            pct_not_accessed_3y_count: 0.0,
            pct_not_accessed_3y_size: 0.0,
            pct_not_accessed_after_2w_count: 49.10,
            pct_not_accessed_after_2w_size: 53.13,
            io_density: 7.89e-3,
            io_density_min: 0.0,
            io_density_max: 0.01,
        }
    }

    #[test]
    fn table_iv_profile_round_trips_and_reports() {
        let p = table_iv_profile();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.json");
        write_profiles_json(&[p.clone()], &path).unwrap();
        assert_eq!(read_profiles_json(&path).unwrap(), vec![p.clone()]);

        let mut buf = Vec::new();
        write_profiles_csv(&[p], &HotnessThresholds::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert!(row.starts_with("V3,6060000000000,3627061,2640000000000,nsf;zip;xls,doc;xls;pdf,94.18,89.44,0.00,0.00,81.03,76.28"));
        assert!(row.contains("49.10,53.13,7.890e-3,0.000e0,1.000e-2,cold"), "{row}");
    }

    #[test]
    fn bands() {
        let t = HotnessThresholds::default();
        assert_eq!(t.band(0.0), HotnessBand::Cold);
        assert_eq!(t.band(7.89e-3), HotnessBand::Cold);
        assert_eq!(t.band(0.01), HotnessBand::Warm);
        assert_eq!(t.band(0.05), HotnessBand::Warm);
        assert_eq!(t.band(0.1), HotnessBand::Hot);
    }

    #[test]
    fn capacities_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("volumes.csv");
        let caps: BTreeMap<String, u64> = [("V1".to_string(), 5u64), ("V2".to_string(), 9)].into();
        write_capacities(&caps, &p).unwrap();
        assert_eq!(load_capacities(&p).unwrap(), caps);
    }

    proptest! {
        #[test]
        fn nested_windows_are_monotone(
            ages in proptest::collection::vec((0i64..2000, 0i64..2000, 0u64..10_000), 1..40),
        ) {
            let files: Vec<_> = ages.iter().map(|&(m, a, s)| file(".x", s, m, a)).collect();
            let p = aggregate_volume(&files, now(), &[], None).unwrap();
            prop_assert!(p.pct_not_modified_3y_count <= p.pct_not_modified_1y_count);
            prop_assert!(p.pct_not_modified_3y_size <= p.pct_not_modified_1y_size);
            prop_assert!(p.pct_not_accessed_3y_count <= p.pct_not_accessed_1y_count);
            prop_assert!(p.pct_not_accessed_3y_size <= p.pct_not_accessed_1y_size);
            prop_assert!(p.age_percentages().iter().all(|v| (0.0..=100.0).contains(v)));
        }
    }
}
