//! `stackinsights` command-line front end.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};

use stackinsights_core::dictionary::{LabelMode, LabelRule};
use stackinsights_core::features::Dataset;
use stackinsights_core::learn::{cross_validate, grid_search, ClassWeight, CvResult, ModelFamily, TrainConfig};
use stackinsights_core::pipeline::{
    gen_corpus_with_config, run_pipeline, Artifact, Pipeline, PipelineConfig, SampleScope, Stage, CONFIG_FILE,
    RANKING_FILE, TRAINING_DIR, VOLUME_CLUSTERS_FILE,
};
use stackinsights_core::scan::{scan_volume, write_corpus};
use stackinsights_core::select::{top_k, write_ranking};
use stackinsights_core::synth::SynthConfig;
use stackinsights_core::{Error, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "stackinsights", version, about = "Predict file sensitivity from metadata and plan hybrid-cloud placement")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config; defaults to ./stackinsights.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with ground truth and a ready config.
    GenCorpus(GenCorpusArgs),
    /// Walk volumes and record file metadata.
    Scan(ScanArgs),
    /// Per-volume IO density and age profiles.
    Hotness(HotnessArgs),
    /// Cluster volumes and pick one representative per cluster.
    ClusterVolumes(ClusterArgs),
    /// Feature spec fitting and mutual-information ranking.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Progressive cluster-proportional sampling with content labeling.
    Sample(SampleArgs),
    /// Train a classifier on the labeled sample.
    Train(TrainArgs),
    /// Cross-validate model families on the labeled sample; prints CSV.
    Eval(EvalArgs),
    /// Predict the sensitivity of every file that was not content-scanned.
    Predict(PredictArgs),
    /// Build the sensitivity/hotness maps and the scan-reduction report.
    Plan(PlanArgs),
    /// Run the whole pipeline, or the listed stages.
    Run(RunArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Destination directory; must be empty or absent.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 21000)]
    files: usize,
    #[arg(long)]
    planting_rate: Option<f64>,
    #[arg(long)]
    signal: Option<f64>,
}

#[derive(Args)]
struct ScanArgs {
    /// Scan a single directory instead of the configured volumes.
    #[arg(long, requires_all = ["volume_id", "out"])]
    root: Option<PathBuf>,
    #[arg(long)]
    volume_id: Option<String>,
    /// Corpus file written in single-directory mode.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HotnessArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    iops: Option<PathBuf>,
    #[arg(long)]
    capacities: Option<PathBuf>,
    /// Reference instant (RFC 3339) for age windows.
    #[arg(long, value_parser = parse_time)]
    now: Option<DateTime<Utc>>,
    /// Directory for profiles.json and profiles.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Subcommand)]
enum FeaturesCommand {
    /// Fit the feature spec on the scanned corpus.
    Fit {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Rank features by mutual information with the labels; prints CSV.
    Rank {
        /// Training-set directory.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
    },
}

#[derive(Args)]
struct SampleArgs {
    /// Sample only these volumes (repeatable).
    #[arg(long = "volume")]
    volumes: Vec<String>,
    /// Sample every volume rather than cluster representatives.
    #[arg(long, conflicts_with = "volumes")]
    all_volumes: bool,
    #[arg(long)]
    max_fraction: Option<f64>,
    #[arg(long)]
    initial_fraction: Option<f64>,
    #[arg(long)]
    increment_fraction: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Label files whose match density reaches this value instead of any match.
    #[arg(long)]
    label_threshold: Option<f64>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// nb, lr, svm or rf.
    #[arg(long, value_parser = parse_family)]
    family: Option<ModelFamily>,
    /// Inverse regularization strength for lr and svm.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    balanced: bool,
    #[arg(long)]
    trees: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Evaluate every family with its default settings.
    #[arg(long, conflicts_with = "family")]
    all: bool,
    #[arg(long)]
    folds: Option<usize>,
    /// Comma-separated C values to grid-search.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<f64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Content-scanned files whose labels are kept.
    #[arg(long)]
    sampled: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Volume hotness threshold in IO/s/GB.
    #[arg(long)]
    x_threshold: Option<f64>,
    /// Volume sensitivity threshold.
    #[arg(long)]
    y_threshold: Option<f64>,
    /// User-folder hotness threshold (share of files accessed within a year).
    #[arg(long)]
    user_x_threshold: Option<f64>,
    #[arg(long)]
    user_y_threshold: Option<f64>,
    /// Ground-truth manifest for held-out quality.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Directory for maps and scan_reduction.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Run only these stages, in pipeline order (repeatable).
    #[arg(long = "stage", value_parser = parse_stage)]
    stages: Vec<Stage>,
}

fn parse_time(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("expected RFC 3339 time: {e}"))
}

fn parse_family(s: &str) -> std::result::Result<ModelFamily, String> {
    s.parse::<ModelFamily>().map_err(|e| e.to_string())
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    Stage::ALL
        .into_iter()
        .find(|st| st.as_str() == s)
        .ok_or_else(|| format!("unknown stage `{s}`"))
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None if Path::new(CONFIG_FILE).is_file() => PipelineConfig::load(Path::new(CONFIG_FILE))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out_dir {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn apply_model(cfg: &mut TrainConfig, m: &ModelArgs) {
    if let Some(f) = m.family {
        *cfg = TrainConfig {
            family: f,
            c: None,
            ..cfg.clone()
        };
    }
    if m.c.is_some() {
        cfg.c = m.c;
    }
    if m.balanced {
        cfg.class_weight = ClassWeight::Balanced;
    }
    if let Some(t) = m.trees {
        cfg.forest.n_trees = t;
    }
}

fn stage_error(stage: &str, e: Error) -> Error {
    match e {
        Error::Config(_) | Error::Stage { .. } => e,
        other => Error::Stage {
            stage: stage.to_string(),
            source: Box::new(other),
        },
    }
}

fn cv_header() -> &'static str {
    "family,c,folds,accuracy,precision,recall,f1"
}

fn cv_row(r: &CvResult) -> String {
    format!(
        "{},{},{},{:.4},{:.4},{:.4},{:.4}",
        r.family,
        r.c.map(|c| c.to_string()).unwrap_or_default(),
        r.folds.len(),
        r.mean.accuracy,
        r.mean.precision,
        r.mean.recall,
        r.mean.f1
    )
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::GenCorpus(a) => {
            let mut synth = SynthConfig {
                total_files: a.files,
                ..SynthConfig::default()
            };
            if let Some(s) = g.seed {
                synth.seed = s;
            }
            if let Some(r) = a.planting_rate {
                synth.planting_rate = r;
            }
            if let Some(s) = a.signal {
                synth.signal = s;
            }
            let (summary, cfg_path) = gen_corpus_with_config(&synth, &a.out).map_err(|e| stage_error("gen-corpus", e))?;
            writeln!(
                stdout,
                "generated {} files ({} sensitive, {} unknown) under {}; config at {}",
                summary.files,
                summary.sensitive,
                summary.unknown,
                summary.root.display(),
                cfg_path.display()
            )
            .ok();
        }
        Command::Scan(a) => {
            if let (Some(root), Some(id), Some(out)) = (&a.root, &a.volume_id, &a.out) {
                if !root.is_dir() {
                    return Err(Error::Config(format!("{} is not a directory", root.display())));
                }
                let s = scan_volume(root, id).map_err(|e| stage_error("scan", e))?;
                let mut records = s.records;
                records.sort_by_key(|f| f.key());
                write_corpus(&records, out).map_err(|e| stage_error("scan", e))?;
                writeln!(stdout, "{} files scanned, {} skipped", records.len(), s.skipped.len()).ok();
            } else {
                let cfg = load_config(g)?;
                Pipeline::new(&cfg)?.run(Stage::Scan)?;
                writeln!(stdout, "corpus written to {}", cfg.output_dir.display()).ok();
            }
        }
        Command::Hotness(a) => {
            let mut cfg = load_config(g)?;
            if a.iops.is_some() {
                cfg.iops = a.iops;
            }
            if a.capacities.is_some() {
                cfg.capacities = a.capacities;
            }
            if a.now.is_some() {
                cfg.as_of = a.now;
            }
            if let Some(o) = a.out {
                cfg.output_dir = o;
            }
            let mut p = Pipeline::new(&cfg)?;
            if let Some(c) = a.corpus {
                p = p.with_input(Artifact::Corpus, c);
            }
            p.run(Stage::Hotness)?;
            let csv = std::fs::read_to_string(cfg.output_dir.join("profiles.csv")).map_err(|e| Error::Io {
                path: cfg.output_dir.join("profiles.csv"),
                source: e,
            })?;
            write!(stdout, "{csv}").ok();
        }
        Command::ClusterVolumes(a) => {
            let mut cfg = load_config(g)?;
            if let Some(k) = a.k {
                cfg.volume_clusters.k = k;
            }
            let mut p = Pipeline::new(&cfg)?;
            if let Some(pr) = a.profiles {
                p = p.with_input(Artifact::Profiles, pr);
            }
            p.run(Stage::ClusterVolumes)?;
            print_file(&mut stdout, &cfg.output_dir.join(VOLUME_CLUSTERS_FILE))?;
        }
        Command::Features(FeaturesCommand::Fit { corpus, depth }) => {
            let mut cfg = load_config(g)?;
            if let Some(d) = depth {
                cfg.features.depth = d;
            }
            let mut p = Pipeline::new(&cfg)?;
            if let Some(c) = corpus {
                p = p.with_input(Artifact::Corpus, c);
            }
            p.run(Stage::Features)?;
            writeln!(stdout, "feature spec written to {}", cfg.output_dir.display()).ok();
        }
        Command::Features(FeaturesCommand::Rank { dataset, top, bins }) => {
            let cfg = load_config(g)?;
            let dir = dataset.unwrap_or_else(|| cfg.output_dir.join(TRAINING_DIR));
            let ds = Dataset::load(&dir).map_err(|e| stage_error("features", e))?;
            let top = top.unwrap_or(cfg.features.rank_top).min(ds.spec.len());
            let bins = bins.unwrap_or(cfg.features.mi_bins);
            if bins < 2 {
                return Err(Error::Config("--bins must be at least 2".into()));
            }
            let ranking = top_k(&ds.matrix, &ds.labels, top, &ds.spec, bins).map_err(|e| stage_error("features", e))?;
            write_ranking(&ranking, &mut stdout)?;
        }
        Command::Sample(a) => {
            let mut cfg = load_config(g)?;
            if !a.volumes.is_empty() {
                cfg.volume_clusters.sample_volumes = a.volumes;
            }
            if a.all_volumes {
                cfg.volume_clusters.scope = SampleScope::All;
            }
            let s = &mut cfg.sampling;
            if let Some(v) = a.max_fraction {
                s.max_fraction = v;
            }
            if let Some(v) = a.initial_fraction {
                s.initial_fraction = v;
            }
            if let Some(v) = a.increment_fraction {
                s.increment_fraction = v;
            }
            if let Some(v) = a.threshold {
                s.accuracy_delta_threshold = v;
            }
            if let Some(t) = a.label_threshold {
                cfg.label_rule = LabelRule {
                    mode: LabelMode::Threshold,
                    threshold: t,
                };
            }
            let mut p = Pipeline::new(&cfg)?;
            p.run(Stage::Sample)?;
            print_file(&mut stdout, &cfg.output_dir.join("rounds.csv"))?;
        }
        Command::Train(a) => {
            let mut cfg = load_config(g)?;
            apply_model(&mut cfg.train, &a.model);
            let mut p = Pipeline::new(&cfg)?;
            if let Some(d) = a.dataset {
                p = p.with_input(Artifact::TrainingSet, d);
            }
            p.run(Stage::Train)?;
            writeln!(stdout, "model written to {}", cfg.output_dir.join("model.json").display()).ok();
            let ranking = cfg.output_dir.join(RANKING_FILE);
            if ranking.exists() {
                writeln!(stdout, "feature ranking written to {}", ranking.display()).ok();
            }
        }
        Command::Eval(a) => {
            let mut cfg = load_config(g)?;
            apply_model(&mut cfg.train, &a.model);
            if let Some(k) = a.folds {
                cfg.train.folds = k;
            }
            cfg.validate_settings()?;
            let dir = a.dataset.unwrap_or_else(|| cfg.output_dir.join(TRAINING_DIR));
            let ds = Dataset::load(&dir).map_err(|e| stage_error("eval", e))?;
            let base = cfg.train_config();
            let families: Vec<ModelFamily> = if a.all {
                ModelFamily::ALL.to_vec()
            } else {
                vec![base.family]
            };
            writeln!(stdout, "{}", cv_header()).ok();
            for f in families {
                let tc = if a.all { TrainConfig { family: f, c: None, ..base.clone() } } else { base.clone() };
                if !a.grid.is_empty() && f.uses_c() {
                    let gr = grid_search(&ds.matrix, &ds.labels, &tc, &a.grid).map_err(|e| stage_error("eval", e))?;
                    for r in &gr.table {
                        writeln!(stdout, "{}", cv_row(r)).ok();
                    }
                    eprintln!("{f}: best C = {}", gr.best_c);
                } else {
                    let r = cross_validate(&ds.matrix, &ds.labels, &tc).map_err(|e| stage_error("eval", e))?;
                    writeln!(stdout, "{}", cv_row(&r)).ok();
                }
            }
        }
        Command::Predict(a) => {
            let cfg = load_config(g)?;
            let mut p = Pipeline::new(&cfg)?;
            for (art, path) in [
                (Artifact::Model, a.model),
                (Artifact::Corpus, a.corpus),
                (Artifact::Spec, a.spec),
                (Artifact::Sampled, a.sampled),
            ] {
                if let Some(path) = path {
                    p = p.with_input(art, path);
                }
            }
            p.run(Stage::Predict)?;
            writeln!(stdout, "predictions written to {}", cfg.output_dir.join("predictions.csv").display()).ok();
        }
        Command::Plan(a) => {
            let mut cfg = load_config(g)?;
            let t = &mut cfg.thresholds;
            if let Some(v) = a.x_threshold {
                t.volume.x = v;
            }
            if let Some(v) = a.y_threshold {
                t.volume.y = v;
            }
            if let Some(v) = a.user_x_threshold {
                t.user.x = v;
            }
            if let Some(v) = a.user_y_threshold {
                t.user.y = v;
            }
            if a.truth.is_some() {
                cfg.truth = a.truth;
            }
            let mut p = Pipeline::new(&cfg)?;
            for (art, path) in [
                (Artifact::Corpus, a.corpus),
                (Artifact::Predictions, a.predictions),
                (Artifact::Profiles, a.profiles),
            ] {
                if let Some(path) = path {
                    p = p.with_input(art, path);
                }
            }
            if let Some(o) = a.out {
                p = p.with_reports_dir(o);
            }
            p.run(Stage::Plan)?;
            if let Some(r) = p.plan_result() {
                writeln!(stdout, "{}", serde_json::to_string_pretty(&r.scan_reduction)?).ok();
            }
        }
        Command::Run(a) => {
            let cfg = load_config(g)?;
            if a.stages.is_empty() {
                let report = run_pipeline(&cfg)?;
                writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?).ok();
            } else {
                let mut stages = a.stages;
                stages.sort();
                stages.dedup();
                let mut p = Pipeline::new(&cfg)?;
                for s in stages {
                    p.run(s)?;
                }
                for t in p.timings() {
                    writeln!(stdout, "{}: {:.3}s", t.stage, t.seconds).ok();
                }
            }
        }
    }
    Ok(())
}

fn print_file(w: &mut impl Write, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    write!(w, "{text}").ok();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_STAGE })
        }
    }
}
