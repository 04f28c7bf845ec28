//! Metadata feature engineering: bag-of-words over cleaned file names,
//! folder membership up to a fixed depth, one-hot extensions, size and
//! time-difference features, all scaled into `[0, 1]`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::{CsrMatrix, SparseVec};
use crate::scan::{FileKey, FileMeta};
use crate::stopwords::is_stop_word;

pub const SPEC_VERSION: u32 = 1;
pub const DEFAULT_DEPTH: usize = 2;
pub const NUMERIC_FEATURES: [&str; 5] = [
    "file_size",
    "bytes_used",
    "accessed_minus_created_days",
    "changed_minus_created_days",
    "modified_minus_created_days",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureCategory {
    Text,
    Path,
    Extension,
    SizeRelated,
    TimeRelated,
}

impl FeatureCategory {
    pub const ALL: [FeatureCategory; 5] = [
        FeatureCategory::Text,
        FeatureCategory::Path,
        FeatureCategory::Extension,
        FeatureCategory::SizeRelated,
        FeatureCategory::TimeRelated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureCategory::Text => "text",
            FeatureCategory::Path => "path",
            FeatureCategory::Extension => "extension",
            FeatureCategory::SizeRelated => "size",
            FeatureCategory::TimeRelated => "time",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    fn observe(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    /// Clip into `[min, max]` then scale to `[0, 1]`; a degenerate range maps to 0.
    pub fn scale(&self, v: f64) -> f64 {
        let range = self.max - self.min;
        if !(range > 0.0) {
            return 0.0;
        }
        ((v.clamp(self.min, self.max) - self.min) / range).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub depth: usize,
    /// Drop name tokens seen fewer than this many times in total.
    pub min_count: usize,
    /// Keep only this many tokens, by document frequency.
    pub max_vocab: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            depth: DEFAULT_DEPTH,
            min_count: 1,
            max_vocab: None,
        }
    }
}

/// Frozen encoder state fitted on training metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub version: u32,
    pub depth: usize,
    pub vocabulary: Vec<String>,
    /// Largest per-file count of each vocabulary token in the training set.
    pub token_scale: Vec<f64>,
    pub folder_list: Vec<String>,
    pub extension_list: Vec<String>,
    pub numeric_stats: [MinMax; 5],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub name: usize,
    pub path: usize,
    pub extension: usize,
    pub size: usize,
    pub time: usize,
}

impl Layout {
    pub fn total(&self) -> usize {
        self.name + self.path + self.extension + self.size + self.time
    }
}

/// Lowercase alphabetic tokens of a file name with its extension removed.
/// Digits and punctuation act as separators; stop words are dropped.
pub fn name_tokens(file_name: &str) -> Vec<String> {
    let stem = match file_name.rfind('.') {
        Some(pos) => &file_name[..pos],
        None => file_name,
    };
    stem.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !is_stop_word(t))
        .collect()
}

/// Ancestor folders of `path` at depth 1..=depth, shallowest first.
pub fn folder_prefixes(path: &str, depth: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut prefix = String::new();
    for seg in path.split('/').filter(|s| !s.is_empty()).take(depth) {
        if !prefix.is_empty() {
            prefix.push('/');
        }
        prefix.push_str(seg);
        out.push(prefix.clone());
    }
    out
}

const SECONDS_PER_DAY: f64 = 86_400.0;

/// Raw numeric features and whether any time difference was clamped at 0.
pub fn raw_numeric(file: &FileMeta) -> ([f64; 5], bool) {
    let days = |later: chrono::DateTime<chrono::Utc>| {
        (later - file.created).num_milliseconds() as f64 / 1000.0 / SECONDS_PER_DAY
    };
    let diffs = [days(file.last_accessed), days(file.changed), days(file.last_modified)];
    let clamped = diffs.iter().any(|d| *d < 0.0);
    (
        [
            file.file_size as f64,
            file.bytes_used as f64,
            diffs[0].max(0.0),
            diffs[1].max(0.0),
            diffs[2].max(0.0),
        ],
        clamped,
    )
}

pub fn fit_spec(files: &[FileMeta], options: FitOptions) -> Result<FeatureSpec> {
    if files.is_empty() {
        return Err(Error::invalid("cannot fit a feature spec on zero files"));
    }
    if options.depth < 1 {
        return Err(Error::invalid("folder depth must be at least 1"));
    }
    let mut total_count: HashMap<String, usize> = HashMap::new();
    let mut doc_freq: HashMap<String, usize> = HashMap::new();
    let mut max_count: HashMap<String, usize> = HashMap::new();
    let mut folders = BTreeSet::new();
    let mut extensions = BTreeSet::new();
    let mut stats = [MinMax { min: f64::INFINITY, max: f64::NEG_INFINITY }; 5];

    for f in files {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in name_tokens(&f.file_name) {
            *counts.entry(t).or_default() += 1;
        }
        for (t, c) in counts {
            *total_count.entry(t.clone()).or_default() += c;
            *doc_freq.entry(t.clone()).or_default() += 1;
            let m = max_count.entry(t).or_default();
            *m = (*m).max(c);
        }
        folders.extend(folder_prefixes(&f.path, options.depth));
        if !f.extension.is_empty() {
            extensions.insert(f.extension.clone());
        }
        let (raw, _) = raw_numeric(f);
        for (s, v) in stats.iter_mut().zip(raw) {
            s.observe(v);
        }
    }

    let mut tokens: Vec<String> = total_count
        .iter()
        .filter(|(_, &c)| c >= options.min_count)
        .map(|(t, _)| t.clone())
        .collect();
    if let Some(cap) = options.max_vocab {
        tokens.sort_by(|a, b| doc_freq[b].cmp(&doc_freq[a]).then_with(|| a.cmp(b)));
        tokens.truncate(cap);
    }
    tokens.sort();
    let token_scale = tokens.iter().map(|t| max_count[t] as f64).collect();

    Ok(FeatureSpec {
        version: SPEC_VERSION,
        depth: options.depth,
        vocabulary: tokens,
        token_scale,
        folder_list: folders.into_iter().collect(),
        extension_list: extensions.into_iter().collect(),
        numeric_stats: stats,
    })
}

/// An encoded file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub file: FileKey,
    pub values: SparseVec,
    pub time_clamped: bool,
}

impl FeatureSpec {
    pub fn layout(&self) -> Layout {
        Layout {
            name: self.vocabulary.len(),
            path: self.folder_list.len(),
            extension: self.extension_list.len(),
            size: 2,
            time: 3,
        }
    }

    pub fn len(&self) -> usize {
        self.layout().total()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Short hex digest identifying this exact spec.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&bytes);
        digest[..12].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn feature_name(&self, index: usize) -> Option<(String, FeatureCategory)> {
        let l = self.layout();
        let mut i = index;
        if i < l.name {
            return Some((self.vocabulary[i].clone(), FeatureCategory::Text));
        }
        i -= l.name;
        if i < l.path {
            return Some((self.folder_list[i].clone(), FeatureCategory::Path));
        }
        i -= l.path;
        if i < l.extension {
            return Some((self.extension_list[i].clone(), FeatureCategory::Extension));
        }
        i -= l.extension;
        match i {
            0 | 1 => Some((NUMERIC_FEATURES[i].to_string(), FeatureCategory::SizeRelated)),
            2..=4 => Some((NUMERIC_FEATURES[i].to_string(), FeatureCategory::TimeRelated)),
            _ => None,
        }
    }

    pub fn encoder(&self) -> Encoder<'_> {
        Encoder {
            spec: self,
            vocab: self.vocabulary.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect(),
            folders: self.folder_list.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect(),
            extensions: self.extension_list.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect(),
        }
    }

    pub fn save(&self, dest: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dest, text).map_err(|e| Error::io(dest, e))
    }

    pub fn load(src: &Path) -> Result<Self> {
        let text = fs::read_to_string(src).map_err(|e| Error::io(src, e))?;
        let spec: FeatureSpec = serde_json::from_str(&text)?;
        if spec.version != SPEC_VERSION {
            return Err(Error::invalid(format!(
                "feature spec version {} unsupported (expected {SPEC_VERSION})",
                spec.version
            )));
        }
        Ok(spec)
    }
}

/// Lookup tables over a [`FeatureSpec`] for repeated encoding.
pub struct Encoder<'a> {
    spec: &'a FeatureSpec,
    vocab: HashMap<&'a str, usize>,
    folders: HashMap<&'a str, usize>,
    extensions: HashMap<&'a str, usize>,
}

impl Encoder<'_> {
    pub fn encode(&self, file: &FileMeta) -> FeatureVector {
        let l = self.spec.layout();
        let mut pairs: Vec<(u32, f64)> = Vec::new();

        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for t in name_tokens(&file.file_name) {
            if let Some(&i) = self.vocab.get(t.as_str()) {
                *counts.entry(i).or_default() += 1;
            }
        }
        for (i, c) in counts {
            let scale = self.spec.token_scale[i].max(1.0);
            pairs.push((i as u32, (c as f64 / scale).min(1.0)));
        }

        let base = l.name;
        for prefix in folder_prefixes(&file.path, self.spec.depth) {
            if let Some(&i) = self.folders.get(prefix.as_str()) {
                pairs.push(((base + i) as u32, 1.0));
            }
        }

        let base = l.name + l.path;
        if let Some(&i) = self.extensions.get(file.extension.as_str()) {
            pairs.push(((base + i) as u32, 1.0));
        }

        let base = l.name + l.path + l.extension;
        let (raw, clamped) = raw_numeric(file);
        for (k, (v, stats)) in raw.iter().zip(&self.spec.numeric_stats).enumerate() {
            pairs.push(((base + k) as u32, stats.scale(*v)));
        }

        FeatureVector {
            file: file.key(),
            values: SparseVec::from_pairs(pairs),
            time_clamped: clamped,
        }
    }

    pub fn encode_batch(&self, files: &[FileMeta]) -> Vec<FeatureVector> {
        files.iter().map(|f| self.encode(f)).collect()
    }

    pub fn matrix(&self, files: &[FileMeta]) -> CsrMatrix {
        let mut m = CsrMatrix::empty(self.spec.len());
        for f in files {
            m.push_row(&self.encode(f).values).expect("encoder respects layout");
        }
        m
    }
}

pub fn encode(file: &FileMeta, spec: &FeatureSpec) -> FeatureVector {
    spec.encoder().encode(file)
}

pub fn encode_batch(files: &[FileMeta], spec: &FeatureSpec) -> Vec<FeatureVector> {
    spec.encoder().encode_batch(files)
}

/// A labeled, encoded sample ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: FeatureSpec,
    pub matrix: CsrMatrix,
    /// `true` = sensitive.
    pub labels: Vec<bool>,
    pub keys: Vec<FileKey>,
}

pub const SPEC_FILE: &str = "feature_spec.json";
pub const MATRIX_FILE: &str = "matrix.csv";
pub const LABELS_FILE: &str = "labels.csv";

impl Dataset {
    /// Write `feature_spec.json`, `matrix.csv` (`row,col,value` triplets) and
    /// `labels.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.spec.save(&dir.join(SPEC_FILE))?;
        let p = dir.join(MATRIX_FILE);
        let mut w = std::io::BufWriter::new(fs::File::create(&p).map_err(|e| Error::io(&p, e))?);
        write_triplets(&self.matrix, &mut w).map_err(|e| Error::io(&p, e))?;
        w.flush().map_err(|e| Error::io(&p, e))?;

        let p = dir.join(LABELS_FILE);
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["row", "label", "volume_id", "path", "file_name"])?;
        for (i, (label, key)) in self.labels.iter().zip(&self.keys).enumerate() {
            w.write_record([
                i.to_string().as_str(),
                if *label { "sensitive" } else { "non-sensitive" },
                &key.volume_id,
                &key.path,
                &key.file_name,
            ])?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let spec = FeatureSpec::load(&dir.join(SPEC_FILE))?;
        let p = dir.join(LABELS_FILE);
        let mut rdr = csv::Reader::from_path(&p)?;
        let mut labels = Vec::new();
        let mut keys = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let bad = |m: &str| Error::Parse { path: p.clone(), line, message: m.to_string() };
            if rec.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            if rec[0].parse::<usize>().ok() != Some(labels.len()) {
                return Err(bad("rows must be numbered consecutively from 0"));
            }
            labels.push(match &rec[1] {
                "sensitive" => true,
                "non-sensitive" => false,
                _ => return Err(bad("label must be sensitive or non-sensitive")),
            });
            keys.push(FileKey {
                volume_id: rec[2].to_string(),
                path: rec[3].to_string(),
                file_name: rec[4].to_string(),
            });
        }
        let matrix = read_triplets(&dir.join(MATRIX_FILE), labels.len(), spec.len())?;
        Ok(Dataset { spec, matrix, labels, keys })
    }
}

pub fn write_triplets<W: Write>(m: &CsrMatrix, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "row,col,value")?;
    for (r, row) in m.rows().enumerate() {
        for (c, v) in row.iter() {
            writeln!(w, "{r},{c},{v}")?;
        }
    }
    Ok(())
}

pub fn read_triplets(src: &Path, n_rows: usize, n_cols: usize) -> Result<CsrMatrix> {
    let text = fs::read_to_string(src).map_err(|e| Error::io(src, e))?;
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_rows];
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Parse { path: src.to_path_buf(), line: i + 1, message: m };
        let mut parts = line.split(',');
        let mut next = || parts.next().ok_or_else(|| bad("expected row,col,value".into()));
        let r: usize = next()?.trim().parse().map_err(|e| bad(format!("row: {e}")))?;
        let c: u32 = next()?.trim().parse().map_err(|e| bad(format!("col: {e}")))?;
        let v: f64 = next()?.trim().parse().map_err(|e| bad(format!("value: {e}")))?;
        if r >= n_rows || c as usize >= n_cols {
            return Err(bad(format!("entry ({r},{c}) outside {n_rows}x{n_cols}")));
        }
        rows[r].push((c, v));
    }
    let rows: Vec<SparseVec> = rows.into_iter().map(SparseVec::from_pairs).collect();
    CsrMatrix::from_rows(n_cols, &rows)
}
