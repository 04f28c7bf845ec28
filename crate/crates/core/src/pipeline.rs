//! End-to-end run: scan, profile, cluster volumes, sample and label, train,
//! predict, plan. Every stage writes its artifacts under the output
//! directory so later stages can be rerun from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans_dense, representative, volume_points, KMeansConfig};
use crate::dictionary::{compile_dictionary, write_scan_results, DictionaryConfig, Extractors, LabelRule, SensitivityLabel};
use crate::error::{Error, Result};
use crate::features::{fit_spec, Dataset, FeatureSpec, FitOptions, DEFAULT_DEPTH, SPEC_FILE};
use crate::hotness::{
    aggregate_all, load_capacities, read_profiles_json, write_profiles_csv, write_profiles_json, HotnessThresholds,
    VolumeProfile,
};
use crate::learn::{cross_validate, evaluate, predict, train, Metrics, TrainConfig, TrainedModel};
use crate::plan::{
    emit_maps, read_predictions, scan_reduction_report, user_map, volume_map, volume_scores, write_predictions, LabelSource,
    PredictedFile, Recommendation, ScanReductionReport, Thresholds,
};
use crate::sample::{
    cluster_files, evaluate_sample, progressive_sample, write_rounds_csv, ContentLabeler, Labeler, SamplingConfig,
    SamplingRound,
};
use crate::scan::{load_iops, read_corpus, scan_volume, write_corpus, FileKey, FileMeta};
use crate::select::{top_k, write_ranking, DEFAULT_BINS};
use crate::seed;
use crate::synth::{
    gen_corpus, read_manifest, SynthConfig, SynthSummary, CAPACITIES_FILE, IOPS_FILE, MANIFEST_FILE, VOLUMES_DIR,
};

pub const CONFIG_FILE: &str = "stackinsights.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeRoot {
    pub id: String,
    pub root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub depth: usize,
    pub min_count: usize,
    pub max_vocab: Option<usize>,
    pub mi_bins: usize,
    /// Features listed in the mutual-information ranking.
    pub rank_top: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            depth: DEFAULT_DEPTH,
            min_count: 1,
            max_vocab: None,
            mi_bins: DEFAULT_BINS,
            rank_top: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleScope {
    /// Sample only the representative volume of each volume cluster.
    #[default]
    Representatives,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeClusterConfig {
    pub k: usize,
    pub restarts: usize,
    pub scope: SampleScope,
    /// Explicit sampling pool; overrides `scope` when non-empty.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sample_volumes: Vec<String>,
}

impl Default for VolumeClusterConfig {
    fn default() -> Self {
        VolumeClusterConfig {
            k: 3,
            restarts: 20,
            scope: SampleScope::Representatives,
            sample_volumes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub volume: Thresholds,
    pub user: Thresholds,
    pub hotness: HotnessThresholds,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            volume: Thresholds::VOLUME_DEFAULT,
            user: Thresholds::USER_DEFAULT,
            hotness: HotnessThresholds::default(),
        }
    }
}

fn default_seed() -> u64 {
    42
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Single-file run configuration. Relative paths resolve against the
/// directory holding the config file. The master `seed` overrides the seeds
/// of the sampling and training tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Reference instant for age windows; defaults to the newest timestamp
    /// in the corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_of: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iops: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacities: Option<PathBuf>,
    /// Ground-truth labels (`volume_id,path,file_name,label,...`) used only
    /// to report held-out quality.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(rename = "volume", default)]
    pub volumes: Vec<VolumeRoot>,
    #[serde(default)]
    pub label_rule: LabelRule,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub volume_clusters: VolumeClusterConfig,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
}

impl PipelineConfig {
    /// Parse and resolve relative paths; does not validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [&mut self.dictionary, &mut self.iops, &mut self.capacities, &mut self.truth]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for v in &mut self.volumes {
            fix(&mut v.root);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that can be checked before doing any work.
    pub fn validate(&self) -> Result<()> {
        self.validate_volumes()?;
        self.validate_settings()
    }

    /// Volume roots exist and ids are unique.
    pub fn validate_volumes(&self) -> Result<()> {
        if self.volumes.is_empty() {
            return Err(Error::Config("at least one [[volume]] is required".into()));
        }
        let mut ids = BTreeSet::new();
        for v in &self.volumes {
            if !ids.insert(v.id.as_str()) {
                return Err(Error::Config(format!("duplicate volume id '{}'", v.id)));
            }
            if !v.root.is_dir() {
                return Err(Error::Config(format!("volume {} root {} is not a directory", v.id, v.root.display())));
            }
        }
        for id in &self.volume_clusters.sample_volumes {
            if !ids.contains(id.as_str()) {
                return Err(Error::Config(format!("sample volume '{id}' is not a configured [[volume]]")));
            }
        }
        Ok(())
    }

    /// Everything except volume roots.
    pub fn validate_settings(&self) -> Result<()> {
        for (what, p) in [
            ("dictionary", &self.dictionary),
            ("iops", &self.iops),
            ("capacities", &self.capacities),
            ("truth", &self.truth),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config(format!("{what} file {} does not exist", p.display())));
                }
            }
        }
        if self.features.depth == 0 {
            return Err(Error::Config("features.depth must be at least 1".into()));
        }
        if self.features.mi_bins < 2 {
            return Err(Error::Config("features.mi_bins must be at least 2".into()));
        }
        if self.volume_clusters.k == 0 || self.volume_clusters.restarts == 0 {
            return Err(Error::Config("volume_clusters.k and restarts must be at least 1".into()));
        }
        self.sampling.validate().map_err(as_config)?;
        self.thresholds.volume.validate().map_err(as_config)?;
        self.thresholds.user.validate().map_err(as_config)?;
        let c = self.train.effective_c();
        if !(c.is_finite() && c > 0.0) || self.train.forest.n_trees == 0 || self.train.folds < 2 {
            return Err(Error::Config("train needs C > 0, forest.n_trees >= 1 and folds >= 2".into()));
        }
        Ok(())
    }

    /// Sampling settings with the master seed applied.
    pub fn sampling_config(&self) -> SamplingConfig {
        SamplingConfig {
            seed: seed::derive(self.seed, "sample"),
            ..self.sampling.clone()
        }
    }

    /// Training settings with the master seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: seed::derive(self.seed, "train"),
            ..self.train.clone()
        }
    }

    /// Config for a corpus produced by `gen_corpus` rooted at `dir`; paths are
    /// kept relative so the config can sit next to the corpus.
    pub fn for_synthetic(synth: &SynthConfig) -> Self {
        PipelineConfig {
            seed: synth.seed,
            output_dir: default_output(),
            as_of: Some(synth.reference_time),
            dictionary: None,
            iops: Some(PathBuf::from(IOPS_FILE)),
            capacities: Some(PathBuf::from(CAPACITIES_FILE)),
            truth: Some(PathBuf::from(MANIFEST_FILE)),
            volumes: synth
                .volumes
                .iter()
                .map(|v| VolumeRoot {
                    id: v.id.clone(),
                    root: Path::new(VOLUMES_DIR).join(&v.id),
                })
                .collect(),
            label_rule: LabelRule::any_match(),
            features: FeatureConfig::default(),
            sampling: SamplingConfig::default(),
            train: TrainConfig::default(),
            volume_clusters: VolumeClusterConfig::default(),
            thresholds: ThresholdConfig::default(),
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: default_seed(),
            output_dir: default_output(),
            as_of: None,
            dictionary: None,
            iops: None,
            capacities: None,
            truth: None,
            volumes: Vec::new(),
            label_rule: LabelRule::any_match(),
            features: FeatureConfig::default(),
            sampling: SamplingConfig::default(),
            train: TrainConfig::default(),
            volume_clusters: VolumeClusterConfig::default(),
            thresholds: ThresholdConfig::default(),
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}


pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SKIPPED_FILE: &str = "scan_skipped.csv";
pub const PROFILES_JSON: &str = "profiles.json";
pub const PROFILES_CSV: &str = "profiles.csv";
pub const VOLUME_CLUSTERS_FILE: &str = "volume_clusters.csv";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const CONTENT_SCAN_FILE: &str = "content_scan.csv";
pub const SAMPLED_FILE: &str = "sampled.csv";
pub const TRAINING_DIR: &str = "training_set";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_CV_FILE: &str = "train_cv.json";
pub const RANKING_FILE: &str = "feature_ranking.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const REPORTS_DIR: &str = "reports";
pub const HELDOUT_FILE: &str = "heldout_metrics.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Scan,
    Hotness,
    ClusterVolumes,
    Features,
    Sample,
    Train,
    Predict,
    Plan,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Scan,
        Stage::Hotness,
        Stage::ClusterVolumes,
        Stage::Features,
        Stage::Sample,
        Stage::Train,
        Stage::Predict,
        Stage::Plan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Scan => "scan",
            Stage::Hotness => "hotness",
            Stage::ClusterVolumes => "cluster-volumes",
            Stage::Features => "features",
            Stage::Sample => "sample",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Plan => "plan",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Stage inputs that may be read from somewhere other than the output
/// directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Artifact {
    Corpus,
    Profiles,
    VolumeClusters,
    Spec,
    TrainingSet,
    Sampled,
    Model,
    Predictions,
}

impl Artifact {
    pub fn default_name(self) -> &'static str {
        match self {
            Artifact::Corpus => CORPUS_FILE,
            Artifact::Profiles => PROFILES_JSON,
            Artifact::VolumeClusters => VOLUME_CLUSTERS_FILE,
            Artifact::Spec => SPEC_FILE,
            Artifact::TrainingSet => TRAINING_DIR,
            Artifact::Sampled => SAMPLED_FILE,
            Artifact::Model => MODEL_FILE,
            Artifact::Predictions => PREDICTIONS_FILE,
        }
    }

    pub fn producer(self) -> Stage {
        match self {
            Artifact::Corpus => Stage::Scan,
            Artifact::Profiles => Stage::Hotness,
            Artifact::VolumeClusters => Stage::ClusterVolumes,
            Artifact::Spec => Stage::Features,
            Artifact::TrainingSet | Artifact::Sampled => Stage::Sample,
            Artifact::Model => Stage::Train,
            Artifact::Predictions => Stage::Predict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// The scan-reduction timing claim: content-scanning the sample plus
/// predicting the rest, against content-scanning everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadlineTiming {
    pub sampled_files: usize,
    pub sample_scan_seconds: f64,
    pub predicted_files: usize,
    pub predict_seconds: f64,
    pub per_file_scan_seconds: f64,
    pub extrapolated_full_scan_seconds: f64,
    /// `(sample_scan + predict) / extrapolated_full_scan`.
    pub ratio: f64,
}

impl HeadlineTiming {
    pub fn new(sampled: usize, scan_seconds: f64, predicted: usize, predict_seconds: f64, corpus: usize) -> Self {
        let per_file = if sampled == 0 { 0.0 } else { scan_seconds / sampled as f64 };
        let full = per_file * corpus as f64;
        HeadlineTiming {
            sampled_files: sampled,
            sample_scan_seconds: scan_seconds,
            predicted_files: predicted,
            predict_seconds,
            per_file_scan_seconds: per_file,
            extrapolated_full_scan_seconds: full,
            ratio: if full > 0.0 { (scan_seconds + predict_seconds) / full } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub stages: Vec<StageTiming>,
    pub headline: HeadlineTiming,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub rounds: Vec<SamplingRound>,
    pub pool_files: usize,
    /// Wall-clock time spent content-scanning the sample.
    pub scan_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub volumes: Vec<Recommendation>,
    pub users: Vec<Recommendation>,
    pub scan_reduction: ScanReductionReport,
    /// Quality of model predictions on files that were not content-scanned,
    /// when ground truth is configured.
    pub heldout: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub files: usize,
    pub volumes: usize,
    pub representatives: Vec<String>,
    pub pool_files: usize,
    pub sampled_files: usize,
    pub rounds: usize,
    pub stop_reason: String,
    pub training_samples: usize,
    pub heldout: Option<Metrics>,
    pub scan_reduction: ScanReductionReport,
    pub timing: TimingReport,
}

fn write_json<T: Serialize>(value: &T, dest: &Path) -> Result<()> {
    fs::write(dest, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(dest, e))
}

fn create(dest: &Path) -> Result<fs::File> {
    fs::File::create(dest).map_err(|e| Error::io(dest, e))
}

/// Latest timestamp anywhere in the corpus.
pub fn corpus_as_of(corpus: &[FileMeta]) -> DateTime<Utc> {
    corpus
        .iter()
        .flat_map(|f| [f.last_accessed, f.created, f.changed, f.last_modified])
        .max()
        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH)
}

/// Labeler that also accumulates wall-clock content-scan time.
struct TimedLabeler<'a> {
    inner: ContentLabeler<'a>,
    seconds: f64,
}

impl Labeler for TimedLabeler<'_> {
    fn label(&mut self, index: usize) -> SensitivityLabel {
        let start = Instant::now();
        let l = self.inner.label(index);
        self.seconds += start.elapsed().as_secs_f64();
        l
    }
}

pub fn write_sampled(labels: &BTreeMap<FileKey, SensitivityLabel>, dest: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dest)?;
    w.write_record(["volume_id", "path", "file_name", "label"])?;
    for (k, l) in labels {
        w.write_record([k.volume_id.as_str(), k.path.as_str(), k.file_name.as_str(), l.as_str()])?;
    }
    w.flush().map_err(|e| Error::io(dest, e))
}

pub fn read_sampled(src: &Path) -> Result<BTreeMap<FileKey, SensitivityLabel>> {
    let mut r = csv::Reader::from_path(src)?;
    let mut out = BTreeMap::new();
    for row in r.records() {
        let row = row?;
        if row.len() != 4 {
            return Err(Error::invalid(format!("{}: expected 4 columns", src.display())));
        }
        let key = FileKey {
            volume_id: row[0].to_string(),
            path: row[1].to_string(),
            file_name: row[2].to_string(),
        };
        out.insert(key, row[3].parse()?);
    }
    Ok(out)
}

pub fn read_representatives(src: &Path) -> Result<Vec<String>> {
    let mut r = csv::Reader::from_path(src)?;
    let mut reps = Vec::new();
    for row in r.records() {
        let row = row?;
        if row.get(2) == Some("true") {
            reps.push(row[0].to_string());
        }
    }
    Ok(reps)
}

/// Runs stages in any order. Inputs a stage needs that were not produced in
/// this session are read back from their artifact files, so each stage can
/// be rerun standalone with the same result.
pub struct Pipeline<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    reports: PathBuf,
    inputs: BTreeMap<Artifact, PathBuf>,
    timings: Vec<StageTiming>,
    corpus: Option<Vec<FileMeta>>,
    profiles: Option<Vec<VolumeProfile>>,
    representatives: Option<Vec<String>>,
    spec: Option<FeatureSpec>,
    dataset: Option<Dataset>,
    scanned: Option<BTreeMap<FileKey, SensitivityLabel>>,
    sample: Option<SampleResult>,
    model: Option<TrainedModel>,
    predictions: Option<Vec<PredictedFile>>,
    predict_seconds: f64,
    predicted_files: usize,
    plan: Option<PlanResult>,
}

impl<'a> Pipeline<'a> {
    /// Validates settings; volume roots are checked by the stages that read
    /// them.
    pub fn new(cfg: &'a PipelineConfig) -> Result<Self> {
        cfg.validate_settings()?;
        Ok(Pipeline {
            cfg,
            out: cfg.output_dir.clone(),
            reports: cfg.output_dir.join(REPORTS_DIR),
            inputs: BTreeMap::new(),
            timings: Vec::new(),
            corpus: None,
            profiles: None,
            representatives: None,
            spec: None,
            dataset: None,
            scanned: None,
            sample: None,
            model: None,
            predictions: None,
            predict_seconds: 0.0,
            predicted_files: 0,
            plan: None,
        })
    }

    /// Read `artifact` from `path` instead of the output directory.
    pub fn with_input(mut self, artifact: Artifact, path: PathBuf) -> Self {
        self.inputs.insert(artifact, path);
        self
    }

    /// Where the plan stage writes maps and the scan-reduction report.
    pub fn with_reports_dir(mut self, dir: PathBuf) -> Self {
        self.reports = dir;
        self
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    pub fn timings(&self) -> &[StageTiming] {
        &self.timings
    }

    pub fn artifact_path(&self, artifact: Artifact) -> PathBuf {
        self.inputs
            .get(&artifact)
            .cloned()
            .unwrap_or_else(|| self.out.join(artifact.default_name()))
    }

    fn input_path(&self, artifact: Artifact) -> Result<PathBuf> {
        let p = self.artifact_path(artifact);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::invalid(format!(
                "missing {}; run the `{}` stage first",
                p.display(),
                artifact.producer()
            )))
        }
    }

    /// Run one stage, wrapping any failure with the stage name.
    pub fn run(&mut self, stage: Stage) -> Result<()> {
        let start = Instant::now();
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let res = match stage {
            Stage::Scan => self.scan(),
            Stage::Hotness => self.hotness(),
            Stage::ClusterVolumes => self.cluster_volumes(),
            Stage::Features => self.features(),
            Stage::Sample => self.sample(),
            Stage::Train => self.train(),
            Stage::Predict => self.predict(),
            Stage::Plan => self.plan(),
        };
        res.map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(other),
            },
        })?;
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    fn ensure_corpus(&mut self) -> Result<()> {
        if self.corpus.is_none() {
            self.corpus = Some(read_corpus(&self.input_path(Artifact::Corpus)?)?);
        }
        Ok(())
    }

    fn ensure_profiles(&mut self) -> Result<()> {
        if self.profiles.is_none() {
            self.profiles = Some(read_profiles_json(&self.input_path(Artifact::Profiles)?)?);
        }
        Ok(())
    }

    fn ensure_spec(&mut self) -> Result<()> {
        if self.spec.is_none() {
            self.spec = Some(FeatureSpec::load(&self.input_path(Artifact::Spec)?)?);
        }
        Ok(())
    }

    fn ensure_dataset(&mut self) -> Result<()> {
        if self.dataset.is_none() {
            self.dataset = Some(Dataset::load(&self.input_path(Artifact::TrainingSet)?)?);
        }
        Ok(())
    }

    fn ensure_scanned(&mut self) -> Result<()> {
        if self.scanned.is_none() {
            self.scanned = Some(read_sampled(&self.input_path(Artifact::Sampled)?)?);
        }
        Ok(())
    }

    fn ensure_model(&mut self) -> Result<()> {
        if self.model.is_none() {
            self.model = Some(TrainedModel::load(&self.input_path(Artifact::Model)?)?);
        }
        Ok(())
    }

    fn ensure_predictions(&mut self) -> Result<()> {
        if self.predictions.is_none() {
            self.predictions = Some(read_predictions(&self.input_path(Artifact::Predictions)?)?);
        }
        Ok(())
    }

    /// The sampling pool as volume ids, ascending.
    fn pool_volumes(&mut self) -> Result<Vec<String>> {
        let vc = &self.cfg.volume_clusters;
        if !vc.sample_volumes.is_empty() {
            let set: BTreeSet<String> = vc.sample_volumes.iter().cloned().collect();
            return Ok(set.into_iter().collect());
        }
        match vc.scope {
            SampleScope::All => {
                let set: BTreeSet<String> = self.cfg.volumes.iter().map(|v| v.id.clone()).collect();
                Ok(set.into_iter().collect())
            }
            SampleScope::Representatives => {
                if self.representatives.is_none() {
                    self.representatives = Some(read_representatives(&self.input_path(Artifact::VolumeClusters)?)?);
                }
                let mut reps = self.representatives.clone().unwrap_or_default();
                reps.sort();
                Ok(reps)
            }
        }
    }

    fn as_of(&self) -> DateTime<Utc> {
        self.cfg
            .as_of
            .unwrap_or_else(|| corpus_as_of(self.corpus.as_deref().unwrap_or(&[])))
    }

    fn scan(&mut self) -> Result<()> {
        self.cfg.validate_volumes()?;
        let mut corpus = Vec::new();
        let mut skipped = Vec::new();
        for v in &self.cfg.volumes {
            let s = scan_volume(&v.root, &v.id)?;
            corpus.extend(s.records);
            skipped.extend(s.skipped);
        }
        corpus.sort_by_key(|f| f.key());
        if corpus.is_empty() {
            return Err(Error::invalid("no files found on any volume"));
        }
        write_corpus(&corpus, &self.out.join(CORPUS_FILE))?;
        let dest = self.out.join(SKIPPED_FILE);
        let mut w = csv::Writer::from_path(&dest)?;
        w.write_record(["path", "reason"])?;
        for s in &skipped {
            w.write_record([s.path.display().to_string(), s.reason.clone()])?;
        }
        w.flush().map_err(|e| Error::io(&dest, e))?;
        self.corpus = Some(corpus);
        Ok(())
    }

    fn hotness(&mut self) -> Result<()> {
        self.ensure_corpus()?;
        let iops = match &self.cfg.iops {
            Some(p) => load_iops(p)?,
            None => Vec::new(),
        };
        let caps = match &self.cfg.capacities {
            Some(p) => load_capacities(p)?,
            None => BTreeMap::new(),
        };
        let as_of = self.as_of();
        let corpus = self.corpus.as_deref().unwrap_or(&[]);
        let profiles = aggregate_all(corpus, as_of, &iops, &caps)?;
        write_profiles_json(&profiles, &self.out.join(PROFILES_JSON))?;
        write_profiles_csv(&profiles, &self.cfg.thresholds.hotness, create(&self.out.join(PROFILES_CSV))?)?;
        self.profiles = Some(profiles);
        Ok(())
    }

    fn cluster_volumes(&mut self) -> Result<()> {
        self.ensure_profiles()?;
        let profiles = self.profiles.as_deref().unwrap_or(&[]);
        let points = volume_points(profiles);
        let k = self.cfg.volume_clusters.k.min(points.len());
        let km = KMeansConfig {
            seed: seed::derive(self.cfg.seed, "volume-clusters"),
            restarts: self.cfg.volume_clusters.restarts,
            ..KMeansConfig::new(k)
        };
        let assignment = kmeans_dense(&points, &km)?;
        let mut reps = BTreeSet::new();
        for c in 0..k {
            reps.insert(representative(&points, &assignment, c)?);
        }
        let dest = self.out.join(VOLUME_CLUSTERS_FILE);
        let mut w = csv::Writer::from_path(&dest)?;
        w.write_record(["volume_id", "cluster", "is_representative"])?;
        for (i, p) in profiles.iter().enumerate() {
            w.write_record([p.volume_id.clone(), assignment.assignments[i].to_string(), reps.contains(&i).to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&dest, e))?;
        self.representatives = Some(reps.into_iter().map(|i| profiles[i].volume_id.clone()).collect());
        Ok(())
    }

    fn features(&mut self) -> Result<()> {
        self.ensure_corpus()?;
        let f = &self.cfg.features;
        let spec = fit_spec(
            self.corpus.as_deref().unwrap_or(&[]),
            FitOptions {
                depth: f.depth,
                min_count: f.min_count,
                max_vocab: f.max_vocab,
            },
        )?;
        spec.save(&self.out.join(SPEC_FILE))?;
        self.spec = Some(spec);
        Ok(())
    }

    fn sample(&mut self) -> Result<()> {
        self.cfg.validate_volumes()?;
        self.ensure_corpus()?;
        self.ensure_spec()?;
        let pool_volumes = self.pool_volumes()?;
        let cfg = self.cfg;
        let corpus = self.corpus.as_deref().unwrap_or(&[]);
        let spec = self.spec.as_ref().ok_or_else(|| Error::invalid("no feature spec"))?;
        let pool_files: Vec<FileMeta> = corpus
            .iter()
            .filter(|f| pool_volumes.binary_search(&f.volume_id).is_ok())
            .cloned()
            .collect();
        if pool_files.is_empty() {
            return Err(Error::invalid(format!("no files on sampling volumes {pool_volumes:?}")));
        }
        let sampling = cfg.sampling_config();
        let train_cfg = cfg.train_config();
        let dictionary = match &cfg.dictionary {
            Some(p) => compile_dictionary(Some(&DictionaryConfig::load(p)?))?,
            None => compile_dictionary(None)?,
        };
        let extractors = Extractors::new();
        let roots: BTreeMap<String, PathBuf> = cfg.volumes.iter().map(|v| (v.id.clone(), v.root.clone())).collect();

        let (assignment, k) = cluster_files(&pool_files, &sampling)?;
        let pool_matrix = spec.encoder().matrix(&pool_files);
        let mut labeler = TimedLabeler {
            inner: ContentLabeler {
                files: &pool_files,
                roots: &roots,
                dictionary: &dictionary,
                rule: cfg.label_rule,
                extractors: &extractors,
                results: Vec::new(),
            },
            seconds: 0.0,
        };
        let outcome = progressive_sample(&assignment, k, &sampling, &mut labeler, |ids, y| {
            evaluate_sample(&pool_matrix.select_rows(ids), y, &train_cfg, sampling.eval)
        })?;
        write_rounds_csv(&outcome.rounds, create(&self.out.join(ROUNDS_FILE))?)?;
        let mut results = labeler.inner.results.clone();
        results.sort_by(|a, b| a.file.cmp(&b.file));
        write_scan_results(&results, create(&self.out.join(CONTENT_SCAN_FILE))?)?;

        let scanned: BTreeMap<FileKey, SensitivityLabel> =
            outcome.labels.iter().map(|(&i, &l)| (pool_files[i].key(), l)).collect();
        write_sampled(&scanned, &self.out.join(SAMPLED_FILE))?;
        let (ids, labels) = outcome.training_set();
        let dataset = Dataset {
            spec: spec.clone(),
            matrix: pool_matrix.select_rows(&ids),
            labels,
            keys: ids.iter().map(|&i| pool_files[i].key()).collect(),
        };
        dataset.save(&self.out.join(TRAINING_DIR))?;
        self.sample = Some(SampleResult {
            rounds: outcome.rounds,
            pool_files: pool_files.len(),
            scan_seconds: labeler.seconds,
        });
        self.scanned = Some(scanned);
        self.dataset = Some(dataset);
        Ok(())
    }

    fn train(&mut self) -> Result<()> {
        self.ensure_dataset()?;
        let ds = self.dataset.as_ref().ok_or_else(|| Error::invalid("no training set"))?;
        let train_cfg = self.cfg.train_config();
        let model = train(&ds.matrix, &ds.labels, &train_cfg, &ds.spec.fingerprint())?;
        model.save(&self.out.join(MODEL_FILE))?;
        let pos = ds.labels.iter().filter(|&&v| v).count();
        let k = train_cfg.folds.min(pos).min(ds.labels.len() - pos);
        if k >= 2 {
            let cv = cross_validate(
                &ds.matrix,
                &ds.labels,
                &TrainConfig {
                    folds: k,
                    ..train_cfg.clone()
                },
            )?;
            write_json(&cv, &self.out.join(TRAIN_CV_FILE))?;
        }
        let top = self.cfg.features.rank_top.min(ds.spec.len());
        let ranking = top_k(&ds.matrix, &ds.labels, top, &ds.spec, self.cfg.features.mi_bins)?;
        write_ranking(&ranking, create(&self.out.join(RANKING_FILE))?)?;
        self.model = Some(model);
        Ok(())
    }

    fn predict(&mut self) -> Result<()> {
        self.ensure_corpus()?;
        self.ensure_spec()?;
        self.ensure_model()?;
        self.ensure_scanned()?;
        let corpus = self.corpus.as_deref().unwrap_or(&[]);
        let spec = self.spec.as_ref().ok_or_else(|| Error::invalid("no feature spec"))?;
        let model = self.model.as_ref().ok_or_else(|| Error::invalid("no model"))?;
        let scanned = self.scanned.as_ref().ok_or_else(|| Error::invalid("no sample"))?;

        let start = Instant::now();
        let rest: Vec<&FileMeta> = corpus.iter().filter(|f| !scanned.contains_key(&f.key())).collect();
        let rest_files: Vec<FileMeta> = rest.iter().map(|&f| f.clone()).collect();
        let pred = predict(model, &spec.encoder().matrix(&rest_files), &spec.fingerprint())?;
        self.predict_seconds = start.elapsed().as_secs_f64();
        self.predicted_files = rest.len();

        let mut model_made = pred.labels.iter().zip(&pred.scores);
        let predictions: Vec<PredictedFile> = corpus
            .iter()
            .map(|f| {
                let key = f.key();
                match scanned.get(&key) {
                    Some(&label) => PredictedFile {
                        key,
                        label,
                        score: None,
                        source: LabelSource::ContentScan,
                    },
                    None => {
                        let (&l, &s) = model_made.next().expect("one prediction per remaining file");
                        PredictedFile {
                            key,
                            label: SensitivityLabel::from_bool(l),
                            score: Some(s),
                            source: LabelSource::Model,
                        }
                    }
                }
            })
            .collect();
        write_predictions(&predictions, &self.out.join(PREDICTIONS_FILE))?;
        self.predictions = Some(predictions);
        Ok(())
    }

    fn plan(&mut self) -> Result<()> {
        self.ensure_corpus()?;
        self.ensure_profiles()?;
        self.ensure_predictions()?;
        let as_of = self.as_of();
        let cfg = self.cfg;
        let corpus = self.corpus.as_deref().unwrap_or(&[]);
        let profiles = self.profiles.as_deref().unwrap_or(&[]);
        let predictions = self.predictions.as_deref().unwrap_or(&[]);

        let volumes = volume_map(&volume_scores(predictions), profiles, &cfg.thresholds.volume)?;
        let labels: BTreeMap<FileKey, SensitivityLabel> = predictions.iter().map(|p| (p.key.clone(), p.label)).collect();
        let users = user_map(corpus, &labels, as_of, &cfg.thresholds.user)?;

        let model_made: Vec<&PredictedFile> = predictions.iter().filter(|p| p.source == LabelSource::Model).collect();
        let is_sensitive = |p: &&PredictedFile| p.label == SensitivityLabel::Sensitive;
        let mut heldout = None;
        let mut report = None;
        if let Some(t) = &cfg.truth {
            let truth: BTreeMap<FileKey, SensitivityLabel> = read_manifest(t)?
                .into_iter()
                .map(|m| {
                    let key = FileKey {
                        volume_id: m.volume_id,
                        path: m.path,
                        file_name: m.file_name,
                    };
                    (key, m.label)
                })
                .collect();
            let (p, y): (Vec<bool>, Vec<bool>) = model_made
                .iter()
                .filter_map(|p| Some((is_sensitive(p), truth.get(&p.key)?.as_bool()?)))
                .unzip();
            if !p.is_empty() {
                report = Some(scan_reduction_report(&p, Some(&y))?);
                heldout = Some(evaluate(&p, &y)?);
            }
        }
        let scan_reduction = match report {
            Some(r) => r,
            None if model_made.is_empty() => {
                let all: Vec<bool> = predictions.iter().map(|p| is_sensitive(&p)).collect();
                scan_reduction_report(&all, None)?
            }
            None => {
                let p: Vec<bool> = model_made.iter().map(is_sensitive).collect();
                scan_reduction_report(&p, None)?
            }
        };
        emit_maps(&volumes, &cfg.thresholds.volume, &users, &cfg.thresholds.user, &scan_reduction, &self.reports)?;
        match &heldout {
            Some(m) => write_json(m, &self.out.join(HELDOUT_FILE))?,
            None => {
                let stale = self.out.join(HELDOUT_FILE);
                if stale.exists() {
                    fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
                }
            }
        }
        self.plan = Some(PlanResult {
            volumes,
            users,
            scan_reduction,
            heldout,
        });
        Ok(())
    }

    pub fn plan_result(&self) -> Option<&PlanResult> {
        self.plan.as_ref()
    }

    pub fn sample_result(&self) -> Option<&SampleResult> {
        self.sample.as_ref()
    }

    pub fn representatives(&self) -> Option<&[String]> {
        self.representatives.as_deref()
    }
}

/// Run every stage in order and write `timing.json`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut p = Pipeline::new(cfg)?;
    for stage in Stage::ALL {
        p.run(stage)?;
    }
    let files = p.corpus.as_ref().map_or(0, Vec::len);
    let sample = p.sample.clone().ok_or_else(|| Error::invalid("sample stage produced no result"))?;
    let plan = p.plan.clone().ok_or_else(|| Error::invalid("plan stage produced no result"))?;
    let sampled = p.scanned.as_ref().map_or(0, BTreeMap::len);
    let timing = TimingReport {
        stages: p.timings.clone(),
        headline: HeadlineTiming::new(sampled, sample.scan_seconds, p.predicted_files, p.predict_seconds, files),
        total_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&timing, &p.out.join(TIMING_FILE))?;
    let last = sample.rounds.last();
    Ok(PipelineReport {
        files,
        volumes: p.profiles.as_ref().map_or(0, Vec::len),
        representatives: p.representatives.clone().unwrap_or_default(),
        pool_files: sample.pool_files,
        sampled_files: sampled,
        rounds: sample.rounds.len(),
        stop_reason: last.and_then(|r| r.stop).map(|s| s.to_string()).unwrap_or_default(),
        training_samples: p.dataset.as_ref().map_or(0, |d| d.labels.len()),
        heldout: plan.heldout,
        scan_reduction: plan.scan_reduction,
        timing,
    })
}

/// Generate a synthetic corpus and write a ready-to-run config beside it.
pub fn gen_corpus_with_config(synth: &SynthConfig, dest: &Path) -> Result<(SynthSummary, PathBuf)> {
    let summary = gen_corpus(synth, dest)?;
    let cfg = PipelineConfig::for_synthetic(synth);
    let path = dest.join(CONFIG_FILE);
    fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok((summary, path))
}
