//! Sensitivity scores, hotness/sensitivity quadrants, migration maps and the
//! scan-reduction report.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::dictionary::SensitivityLabel;
use crate::error::{Error, Result};
use crate::hotness::{not_accessed_within, one_year, VolumeProfile};
use crate::scan::{FileKey, FileMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    ContentScan,
    Model,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::ContentScan => "content-scan",
            LabelSource::Model => "model",
        }
    }
}

/// Final label of one file, either from a content scan or from the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedFile {
    pub key: FileKey,
    pub label: SensitivityLabel,
    /// Model score; absent for content-scanned files.
    pub score: Option<f64>,
    pub source: LabelSource,
}

pub const PREDICTIONS_HEADER: [&str; 6] = ["volume_id", "path", "file_name", "label", "score", "source"];

pub fn write_predictions(predictions: &[PredictedFile], dest: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dest)?;
    w.write_record(PREDICTIONS_HEADER)?;
    for p in predictions {
        w.write_record([
            p.key.volume_id.as_str(),
            p.key.path.as_str(),
            p.key.file_name.as_str(),
            p.label.as_str(),
            &p.score.map(|s| format!("{s:.6}")).unwrap_or_default(),
            p.source.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dest, e))
}

pub fn read_predictions(src: &Path) -> Result<Vec<PredictedFile>> {
    let mut r = csv::Reader::from_path(src)?;
    if r.headers()?.iter().ne(PREDICTIONS_HEADER) {
        return Err(Error::Parse {
            path: src.to_path_buf(),
            line: 1,
            message: format!("expected header {}", PREDICTIONS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| Error::Parse {
            path: src.to_path_buf(),
            line: i + 2,
            message,
        };
        let label: SensitivityLabel = rec[3].parse().map_err(|_| bad(format!("unknown label '{}'", &rec[3])))?;
        let score = match &rec[4] {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|e| bad(format!("score: {e}")))?),
        };
        let source = match &rec[5] {
            "content-scan" => LabelSource::ContentScan,
            "model" => LabelSource::Model,
            other => return Err(bad(format!("unknown source '{other}'"))),
        };
        out.push(PredictedFile {
            key: FileKey {
                volume_id: rec[0].to_string(),
                path: rec[1].to_string(),
                file_name: rec[2].to_string(),
            },
            label,
            score,
            source,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubjectKind {
    Volume,
    UserFolder,
}

impl SubjectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SubjectKind::Volume => "volume",
            SubjectKind::UserFolder => "user-folder",
        }
    }

    /// Unit of the hotness axis at this level.
    pub fn hotness_unit(self) -> &'static str {
        match self {
            SubjectKind::Volume => "io/s/GB",
            SubjectKind::UserFolder => "fraction accessed within 1y",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityScore {
    pub kind: SubjectKind,
    pub id: String,
    pub sensitive_count: u64,
    pub unknown_count: u64,
    pub total_count: u64,
    pub score: f64,
}

impl SensitivityScore {
    fn tally(kind: SubjectKind, id: String, labels: impl Iterator<Item = SensitivityLabel>) -> Self {
        let (mut s, mut u, mut t) = (0, 0, 0);
        for l in labels {
            t += 1;
            match l {
                SensitivityLabel::Sensitive => s += 1,
                SensitivityLabel::Unknown => u += 1,
                SensitivityLabel::NonSensitive => {}
            }
        }
        SensitivityScore {
            kind,
            id,
            sensitive_count: s,
            unknown_count: u,
            total_count: t,
            score: if t == 0 { 0.0 } else { s as f64 / t as f64 },
        }
    }

    pub fn from_counts(kind: SubjectKind, id: &str, sensitive: u64, total: u64) -> Self {
        SensitivityScore {
            kind,
            id: id.to_string(),
            sensitive_count: sensitive,
            unknown_count: 0,
            total_count: total,
            score: if total == 0 { 0.0 } else { sensitive as f64 / total as f64 },
        }
    }

    /// More than half the files could not be labeled from content.
    pub fn majority_unknown(&self) -> bool {
        2 * self.unknown_count > self.total_count
    }
}

/// Sensitivity score per volume, ordered by volume id.
pub fn volume_scores(predictions: &[PredictedFile]) -> Vec<SensitivityScore> {
    let mut groups: BTreeMap<&str, Vec<SensitivityLabel>> = BTreeMap::new();
    for p in predictions {
        groups.entry(p.key.volume_id.as_str()).or_default().push(p.label);
    }
    groups
        .into_iter()
        .map(|(id, labels)| SensitivityScore::tally(SubjectKind::Volume, id.to_string(), labels.into_iter()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Hotness at or above this is not cold.
    pub x: f64,
    /// Sensitivity at or above this is not low.
    pub y: f64,
}

impl Thresholds {
    pub const VOLUME_DEFAULT: Thresholds = Thresholds { x: 0.01, y: 0.5 };
    pub const USER_DEFAULT: Thresholds = Thresholds { x: 0.5, y: 0.5 };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.y) || !(self.x >= 0.0 && self.x.is_finite()) {
            return Err(Error::Config(format!(
                "thresholds need y in [0, 1] and x >= 0 (got x={}, y={})",
                self.x, self.y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrant {
    PublicCloudCandidate,
    PrivateOrOnPremise,
    /// Mostly unclassifiable content (databases, binaries); needs a human.
    NeedsDomainReview,
}

impl Quadrant {
    pub fn as_str(self) -> &'static str {
        match self {
            Quadrant::PublicCloudCandidate => "public-cloud-candidate",
            Quadrant::PrivateOrOnPremise => "private-or-on-premise",
            Quadrant::NeedsDomainReview => "needs-domain-review",
        }
    }

    fn color(self) -> &'static str {
        match self {
            Quadrant::PublicCloudCandidate => "#2a9d8f",
            Quadrant::PrivateOrOnPremise => "#e76f51",
            Quadrant::NeedsDomainReview => "#8d99ae",
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cold and low-sensitivity subjects are public-cloud candidates. A value
/// equal to its threshold does not count as below it.
pub fn classify(sensitivity: f64, hotness: f64, thresholds: &Thresholds) -> Quadrant {
    if sensitivity < thresholds.y && hotness < thresholds.x {
        Quadrant::PublicCloudCandidate
    } else {
        Quadrant::PrivateOrOnPremise
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub kind: SubjectKind,
    pub id: String,
    pub sensitive_count: u64,
    pub total_count: u64,
    pub sensitivity: f64,
    pub hotness: f64,
    pub hotness_unit: String,
    pub quadrant: Quadrant,
    pub thresholds: Thresholds,
}

fn recommend(score: &SensitivityScore, hotness: f64, thresholds: &Thresholds) -> Recommendation {
    let quadrant = if score.majority_unknown() {
        Quadrant::NeedsDomainReview
    } else {
        classify(score.score, hotness, thresholds)
    };
    Recommendation {
        kind: score.kind,
        id: score.id.clone(),
        sensitive_count: score.sensitive_count,
        total_count: score.total_count,
        sensitivity: score.score,
        hotness,
        hotness_unit: score.kind.hotness_unit().to_string(),
        quadrant,
        thresholds: *thresholds,
    }
}

/// Volume-level map: sensitivity against mean IO density.
pub fn volume_map(scores: &[SensitivityScore], profiles: &[VolumeProfile], thresholds: &Thresholds) -> Result<Vec<Recommendation>> {
    thresholds.validate()?;
    let density: BTreeMap<&str, f64> = profiles.iter().map(|p| (p.volume_id.as_str(), p.io_density)).collect();
    scores
        .iter()
        .map(|s| {
            let d = density
                .get(s.id.as_str())
                .ok_or_else(|| Error::invalid(format!("no hotness profile for volume '{}'", s.id)))?;
            Ok(recommend(s, *d, thresholds))
        })
        .collect()
}

/// User-folder map. Hotness is the fraction of a folder's files accessed
/// within the last year; folder ids are `volume/folder`. Files directly at a
/// volume root belong to no folder and are skipped.
pub fn user_map(
    corpus: &[FileMeta],
    labels: &BTreeMap<FileKey, SensitivityLabel>,
    now: DateTime<Utc>,
    thresholds: &Thresholds,
) -> Result<Vec<Recommendation>> {
    thresholds.validate()?;
    let mut groups: BTreeMap<(String, String), (Vec<SensitivityLabel>, u64)> = BTreeMap::new();
    for f in corpus {
        if f.user_folder.is_empty() {
            continue;
        }
        let label = *labels
            .get(&f.key())
            .ok_or_else(|| Error::invalid(format!("no label for {}:{}", f.volume_id, f.relative_path())))?;
        let g = groups.entry((f.volume_id.clone(), f.user_folder.clone())).or_default();
        g.0.push(label);
        if not_accessed_within(f, now, one_year()) {
            g.1 += 1;
        }
    }
    Ok(groups
        .into_iter()
        .map(|((vol, folder), (labels, stale))| {
            let total = labels.len() as f64;
            let score = SensitivityScore::tally(SubjectKind::UserFolder, format!("{vol}/{folder}"), labels.into_iter());
            let pct_not_accessed = 100.0 * stale as f64 / total;
            recommend(&score, 1.0 - pct_not_accessed / 100.0, thresholds)
        })
        .collect())
}

/// Percentage truncated (not rounded) to two decimals, e.g. `44.38%`.
pub fn format_percent(fraction: f64) -> String {
    let hundredths = (fraction * 10000.0 + 1e-6).floor();
    format!("{:.2}%", hundredths / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReductionReport {
    pub total: u64,
    pub predicted_sensitive: u64,
    pub predicted_non_sensitive: u64,
    /// Share of files that still need a content scan (predicted non-sensitive).
    pub rescan_fraction: f64,
    pub predicted_sensitive_fraction: f64,
    /// Present when ground truth is available for the evaluated files.
    pub false_positives: Option<u64>,
    pub over_protected_fraction: Option<f64>,
    /// Sensitive share used for the random-labeling baseline.
    pub sensitive_share: f64,
    /// `truth` when measured on labeled files, `predicted` otherwise.
    pub sensitive_share_basis: String,
    /// Over-protection of random labeling at the same share, `p·(1−p)`.
    pub baseline_over_protection: f64,
    pub display: BTreeMap<String, String>,
}

pub fn scan_reduction_report(predicted: &[bool], truth: Option<&[bool]>) -> Result<ScanReductionReport> {
    if predicted.is_empty() {
        return Err(Error::invalid("scan-reduction report needs at least one prediction"));
    }
    let total = predicted.len() as u64;
    let sens = predicted.iter().filter(|&&p| p).count() as u64;
    let (fp, share, basis) = match truth {
        Some(t) => {
            if t.len() != predicted.len() {
                return Err(Error::DimensionMismatch {
                    expected: predicted.len(),
                    actual: t.len(),
                });
            }
            let fp = predicted.iter().zip(t).filter(|(&p, &t)| p && !t).count() as u64;
            let p = t.iter().filter(|&&v| v).count() as f64 / total as f64;
            (Some(fp), p, "truth")
        }
        None => (None, sens as f64 / total as f64, "predicted"),
    };
    Ok(build_report(total, sens, fp, share, basis))
}

/// Report from confusion counts (sensitive = positive).
pub fn scan_reduction_from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ScanReductionReport {
    let total = tp + fp + fn_ + tn;
    let share = (tp + fn_) as f64 / total as f64;
    build_report(total, tp + fp, Some(fp), share, "truth")
}

fn build_report(total: u64, sens: u64, fp: Option<u64>, share: f64, basis: &str) -> ScanReductionReport {
    let non = total - sens;
    let rescan = non as f64 / total as f64;
    let over = fp.map(|f| f as f64 / total as f64);
    let baseline = share * (1.0 - share);
    let mut display = BTreeMap::new();
    display.insert("rescan".to_string(), format_percent(rescan));
    display.insert("predicted_sensitive".to_string(), format_percent(sens as f64 / total as f64));
    display.insert("sensitive_share".to_string(), format_percent(share));
    display.insert("baseline_over_protection".to_string(), format_percent(baseline));
    if let Some(o) = over {
        display.insert("over_protected".to_string(), format_percent(o));
    }
    ScanReductionReport {
        total,
        predicted_sensitive: sens,
        predicted_non_sensitive: non,
        rescan_fraction: rescan,
        // complement, so the two fractions sum to exactly 1
        predicted_sensitive_fraction: 1.0 - rescan,
        false_positives: fp,
        over_protected_fraction: over,
        sensitive_share: share,
        sensitive_share_basis: basis.to_string(),
        baseline_over_protection: baseline,
        display,
    }
}

pub const MAP_CSV_HEADER: [&str; 11] = [
    "subject",
    "id",
    "sensitive_count",
    "total_count",
    "sensitivity",
    "hotness",
    "hotness_unit",
    "quadrant",
    "x_threshold",
    "y_threshold",
    "label_shown",
];

/// Points are labeled in the SVG only up to this many subjects.
const MAX_LABELED_POINTS: usize = 60;

pub fn write_map_csv<W: std::io::Write>(recs: &[Recommendation], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(MAP_CSV_HEADER)?;
    let labeled = recs.len() <= MAX_LABELED_POINTS;
    for r in recs {
        out.write_record([
            r.kind.as_str().to_string(),
            r.id.clone(),
            r.sensitive_count.to_string(),
            r.total_count.to_string(),
            format!("{:.4}", r.sensitivity),
            format!("{:.6}", r.hotness),
            r.hotness_unit.clone(),
            r.quadrant.to_string(),
            r.thresholds.x.to_string(),
            r.thresholds.y.to_string(),
            labeled.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io(Path::new("map.csv"), e))?;
    Ok(())
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter plot of sensitivity (y) against hotness (x) with both threshold
/// lines. Output depends only on the inputs.
pub fn render_map_svg(title: &str, x_label: &str, recs: &[Recommendation], thresholds: &Thresholds) -> String {
    const W: f64 = 720.0;
    const H: f64 = 520.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 40.0;
    const TOP: f64 = 50.0;
    const BOTTOM: f64 = 70.0;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let x_max = recs
        .iter()
        .map(|r| r.hotness)
        .fold(thresholds.x, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.1;
    let sx = |v: f64| LEFT + pw * (v / x_max).clamp(0.0, 1.0);
    let sy = |v: f64| TOP + ph * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="28" text-anchor="middle" font-size="16">{}</text>"#, W / 2.0, escape_xml(title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=5 {
        let fy = i as f64 / 5.0;
        let fx = x_max * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.1}</text>"#,
            LEFT - 6.0,
            sy(fy) + 4.0,
            fy
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(fx),
            TOP + ph + 18.0,
            tick_label(fx)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 20.0,
        escape_xml(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">sensitivity</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    let _ = writeln!(
        s,
        r##"<line class="threshold-x" x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.1}" stroke="#555" stroke-dasharray="6,4"/>"##,
        TOP + ph,
        x = sx(thresholds.x)
    );
    let _ = writeln!(
        s,
        r##"<line class="threshold-y" x1="{LEFT}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="#555" stroke-dasharray="6,4"/>"##,
        LEFT + pw,
        y = sy(thresholds.y)
    );
    let labeled = recs.len() <= MAX_LABELED_POINTS;
    for r in recs {
        let (cx, cy) = (sx(r.hotness), sy(r.sensitivity));
        let id = escape_xml(&r.id);
        let _ = writeln!(
            s,
            r#"<circle data-id="{id}" data-quadrant="{}" cx="{cx:.2}" cy="{cy:.2}" r="5" fill="{}"><title>{id}: sensitivity {:.4}, hotness {:.6}</title></circle>"#,
            r.quadrant,
            r.quadrant.color(),
            r.sensitivity,
            r.hotness
        );
        if labeled {
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{id}</text>"#, cx + 7.0, cy - 7.0);
        }
    }
    s.push_str("</svg>\n");
    s
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v < 0.1 {
        format!("{v:.3}")
    } else {
        format!("{v:.2}")
    }
}

/// Writes `volume_map.{svg,csv}`, `user_map.{svg,csv}` and
/// `scan_reduction.json` into `dest`.
pub fn emit_maps(
    volumes: &[Recommendation],
    volume_thresholds: &Thresholds,
    users: &[Recommendation],
    user_thresholds: &Thresholds,
    report: &ScanReductionReport,
    dest: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dest).map_err(|e| Error::io(dest, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dest.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    let mut buf = Vec::new();
    write_map_csv(volumes, &mut buf)?;
    write("volume_map.csv", &buf)?;
    write(
        "volume_map.svg",
        render_map_svg("Volume sensitivity and IO density", "IO density (io/s/GB)", volumes, volume_thresholds).as_bytes(),
    )?;
    buf.clear();
    write_map_csv(users, &mut buf)?;
    write("user_map.csv", &buf)?;
    write(
        "user_map.svg",
        render_map_svg("User folder sensitivity and hotness", "fraction of files accessed within 1 year", users, user_thresholds).as_bytes(),
    )?;
    write("scan_reduction.json", (serde_json::to_string_pretty(report)? + "\n").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use proptest::prelude::*;

    #[test]
    fn volume_level_scores() {
        for (s, t, want) in [(385369, 400415, 0.9624), (14, 81, 0.1728), (170808, 170808, 1.0), (0, 10, 0.0)] {
            let v = SensitivityScore::from_counts(SubjectKind::Volume, "v", s, t);
            assert!((v.score - want).abs() <= 1e-4, "{s}/{t}");
        }
    }

    fn key(vol: &str, name: &str) -> FileKey {
        FileKey {
            volume_id: vol.into(),
            path: "u".into(),
            file_name: name.into(),
        }
    }

    #[test]
    fn volume_scores_group_by_volume() {
        let label = |s: bool| SensitivityLabel::from_bool(s);
        let preds: Vec<PredictedFile> = [("b", true), ("a", false), ("a", true), ("a", true)]
            .iter()
            .enumerate()
            .map(|(i, (v, s))| PredictedFile {
                key: key(v, &i.to_string()),
                label: label(*s),
                score: Some(0.5),
                source: LabelSource::Model,
            })
            .collect();
        let scores = volume_scores(&preds);
        assert_eq!(scores.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert!((scores[0].score - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn classify_rules() {
        let t = Thresholds::VOLUME_DEFAULT;
        assert_eq!(classify(0.0, 0.0, &t), Quadrant::PublicCloudCandidate);
        assert_eq!(classify(0.5, 0.0, &t), Quadrant::PrivateOrOnPremise);
        assert_eq!(classify(0.1, 0.01, &t), Quadrant::PrivateOrOnPremise);
    }

    #[test]
    fn reference_volume_quadrants() {
        // sensitivity per volume; densities placed inside each volume's band
        let table = [
            ("V1", 0.9624, 0.005),
            ("V2", 0.7055, 0.005),
            ("V3", 0.4633, 0.005),
            ("V4", 1.0, 0.005),
            ("V5", 0.6095, 0.05),
            ("V6", 0.5758, 0.005),
            ("V7", 0.1728, 0.005),
        ];
        let t = Thresholds::VOLUME_DEFAULT;
        let public: Vec<&str> = table
            .iter()
            .filter(|(_, s, d)| classify(*s, *d, &t) == Quadrant::PublicCloudCandidate)
            .map(|r| r.0)
            .collect();
        assert_eq!(public, ["V3", "V7"]);
    }

    #[test]
    fn majority_unknown_needs_review() {
        let mut s = SensitivityScore::from_counts(SubjectKind::Volume, "v", 0, 10);
        s.unknown_count = 6;
        let r = recommend(&s, 0.0, &Thresholds::VOLUME_DEFAULT);
        assert_eq!(r.quadrant, Quadrant::NeedsDomainReview);
    }

    fn file(vol: &str, folder: &str, name: &str, accessed_days_ago: i64, now: DateTime<Utc>) -> FileMeta {
        let t = now - Duration::days(accessed_days_ago);
        FileMeta {
            volume_id: vol.into(),
            file_name: name.into(),
            extension: crate::scan::extension_of(name),
            path: folder.into(),
            last_accessed: t,
            created: t - Duration::days(10),
            changed: t,
            last_modified: t,
            file_size: 10,
            bytes_used: 4096,
            user_folder: crate::scan::user_folder_of(folder),
            timestamps_substituted: false,
        }
    }

    #[test]
    fn user_points_recount() {
        let now = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let corpus = vec![
            file("V3", "alice", "a.txt", 730, now),
            file("V3", "alice", "b.txt", 800, now),
            file("V3", "bob/docs", "c.txt", 10, now),
            file("V3", "bob", "d.txt", 400, now),
            file("V3", "bob", "e.txt", 5, now),
            file("V3", "bob", "f.txt", 5, now),
            file("V3", "", "root.txt", 5, now),
        ];
        let mut labels = BTreeMap::new();
        for (f, s) in corpus.iter().zip([true, true, true, false, false, false, true]) {
            labels.insert(f.key(), SensitivityLabel::from_bool(s));
        }
        let pts = user_map(&corpus, &labels, now, &Thresholds::USER_DEFAULT).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].id, "V3/alice");
        assert_eq!(pts[0].hotness, 0.0);
        assert_eq!(pts[0].sensitivity, 1.0);
        assert_eq!(pts[1].id, "V3/bob");
        assert_eq!(pts[1].sensitivity, 0.25);
        assert_eq!(pts[1].hotness, 0.75);
    }

    #[test]
    fn reference_scan_reduction_numbers() {
        let r = scan_reduction_from_counts(29112, 2824, 3999, 21493);
        assert_eq!(r.total, 57428);
        assert_eq!(r.predicted_non_sensitive, 25492);
        assert_eq!(r.display["rescan"], "44.38%");
        assert_eq!(r.display["over_protected"], "4.91%");
        assert_eq!(r.display["sensitive_share"], "57.65%");
        assert_eq!(r.display["baseline_over_protection"], "24.41%");
        assert!((0.5765f64 * 0.4235 - 0.2441).abs() < 1e-4);
        assert_eq!(r.rescan_fraction + r.predicted_sensitive_fraction, 1.0);
    }

    #[test]
    fn report_from_vectors() {
        let r = scan_reduction_report(&[true, false, true, false], Some(&[true, false, false, false])).unwrap();
        assert_eq!(r.false_positives, Some(1));
        assert_eq!(r.sensitive_share, 0.25);
        let r = scan_reduction_report(&[true, false], None).unwrap();
        assert_eq!(r.over_protected_fraction, None);
        assert_eq!(r.sensitive_share_basis, "predicted");
        assert!(scan_reduction_report(&[], None).is_err());
    }

    #[test]
    fn percent_truncates() {
        assert_eq!(format_percent(25492.0 / 57428.0), "44.38%");
        assert_eq!(format_percent(2824.0 / 57428.0), "4.91%");
        assert_eq!(format_percent(1.0), "100.00%");
        assert_eq!(format_percent(0.0), "0.00%");
    }

    fn profile(id: &str, density: f64) -> VolumeProfile {
        VolumeProfile {
            volume_id: id.into(),
            total_size: 1_000_000_000,
            total_file_count: 10,
            total_file_size: 1000,
            top3_extensions_by_size: vec![],
            top3_extensions_by_count: vec![],
            pct_not_modified_1y_count: 0.0,
            pct_not_modified_1y_size: 0.0,
            pct_not_modified_3y_count: 0.0,
            pct_not_modified_3y_size: 0.0,
            pct_not_accessed_1y_count: 0.0,
            pct_not_accessed_1y_size: 0.0,
            pct_not_accessed_3y_count: 0.0,
            pct_not_accessed_3y_size: 0.0,
            pct_not_accessed_after_2w_count: 0.0,
            pct_not_accessed_after_2w_size: 0.0,
            io_density: density,
            io_density_min: density,
            io_density_max: density,
        }
    }

    #[test]
    fn maps_are_deterministic_and_agree() {
        let profiles: Vec<VolumeProfile> = (1..=7).map(|i| profile(&format!("V{i}"), 0.001 * i as f64)).collect();
        let scores: Vec<SensitivityScore> = (1..=7)
            .map(|i| SensitivityScore::from_counts(SubjectKind::Volume, &format!("V{i}"), i, 10))
            .collect();
        let recs = volume_map(&scores, &profiles, &Thresholds::VOLUME_DEFAULT).unwrap();
        let report = scan_reduction_from_counts(1, 1, 1, 1);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            emit_maps(&recs, &Thresholds::VOLUME_DEFAULT, &[], &Thresholds::USER_DEFAULT, &report, d.path()).unwrap();
        }
        for name in ["volume_map.csv", "volume_map.svg", "user_map.csv", "user_map.svg", "scan_reduction.json"] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
        let svg = std::fs::read_to_string(a.path().join("volume_map.svg")).unwrap();
        let csv = std::fs::read_to_string(a.path().join("volume_map.csv")).unwrap();
        assert_eq!(svg.matches("<circle").count(), 7);
        assert_eq!(csv.lines().count(), 8);
        for r in &recs {
            assert!(svg.contains(&format!(r#"data-id="{}" data-quadrant="{}""#, r.id, r.quadrant)));
        }
        let empty_svg = std::fs::read_to_string(a.path().join("user_map.svg")).unwrap();
        assert_eq!(empty_svg.matches("<circle").count(), 0);
        assert!(empty_svg.contains("threshold-x"));
        assert_eq!(std::fs::read_to_string(a.path().join("user_map.csv")).unwrap().lines().count(), 1);
    }

    #[test]
    fn missing_profile_is_an_error() {
        let scores = vec![SensitivityScore::from_counts(SubjectKind::Volume, "V9", 1, 2)];
        assert!(volume_map(&scores, &[], &Thresholds::VOLUME_DEFAULT).is_err());
    }

    #[test]
    fn predictions_round_trip() {
        let preds = vec![
            PredictedFile {
                key: key("V1", "a,b.txt"),
                label: SensitivityLabel::Sensitive,
                score: Some(0.875),
                source: LabelSource::Model,
            },
            PredictedFile {
                key: key("V1", "c.txt"),
                label: SensitivityLabel::Unknown,
                score: None,
                source: LabelSource::ContentScan,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("predictions.csv");
        write_predictions(&preds, &p).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), preds);
    }

    proptest! {
        #[test]
        fn classify_is_monotone(s in 0.0f64..=1.0, h in 0.0f64..1.0, ds in 0.0f64..=1.0, dh in 0.0f64..1.0, x in 0.0f64..1.0, y in 0.0f64..=1.0) {
            let t = Thresholds { x, y };
            if classify(s, h, &t) == Quadrant::PublicCloudCandidate {
                prop_assert_eq!(classify(s * ds, h * dh, &t), Quadrant::PublicCloudCandidate);
            }
            prop_assert_eq!(classify(s, h, &t) == Quadrant::PublicCloudCandidate, s < y && h < x);
        }

        #[test]
        fn rescan_complements_sensitive(pred in proptest::collection::vec(any::<bool>(), 1..200)) {
            let r = scan_reduction_report(&pred, None).unwrap();
            prop_assert_eq!(r.rescan_fraction + r.predicted_sensitive_fraction, 1.0);
        }
    }
}
