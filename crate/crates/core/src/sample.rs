//! Cluster-proportional progressive sampling: scan a small random sample of
//! each file cluster, train, and keep growing the sample until accuracy
//! stops improving or the budget runs out.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, KMeansConfig};
use crate::dictionary::{label_file, scan_file, ContentScanResult, Dictionary, Extractors, LabelRule, SensitivityLabel};
use crate::error::{Error, Result};
use crate::features::{fit_spec, FitOptions};
use crate::learn::{cross_validate, evaluate, predict, stratified_folds, train, TrainConfig};
use crate::matrix::CsrMatrix;
use crate::scan::FileMeta;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Stratified k-fold cross-validation on the cumulative sample.
    KFold(usize),
    /// Stratified hold-out of this fraction of the cumulative sample.
    Holdout(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub initial_fraction: f64,
    pub increment_fraction: f64,
    pub accuracy_delta_threshold: f64,
    pub max_fraction: f64,
    pub file_cluster_k: usize,
    /// Vocabulary cap for the features used to cluster files.
    pub cluster_vocab: usize,
    pub seed: u64,
    pub eval: EvalMode,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            initial_fraction: 0.01,
            increment_fraction: 0.01,
            accuracy_delta_threshold: 0.005,
            max_fraction: 0.10,
            file_cluster_k: 8,
            cluster_vocab: 500,
            seed: 42,
            eval: EvalMode::KFold(5),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_fraction > 0.0
            && self.initial_fraction <= self.max_fraction
            && self.max_fraction <= 1.0
            && self.increment_fraction > 0.0
            && self.accuracy_delta_threshold >= 0.0
            && self.file_cluster_k >= 1;
        if !ok {
            return Err(Error::Config(format!(
                "sampling config needs 0 < initial ({}) <= max ({}) <= 1, increment ({}) > 0, threshold ({}) >= 0, file_cluster_k >= 1",
                self.initial_fraction, self.max_fraction, self.increment_fraction, self.accuracy_delta_threshold
            )));
        }
        match self.eval {
            EvalMode::KFold(k) if k < 2 => Err(Error::Config("k-fold evaluation needs k >= 2".into())),
            EvalMode::Holdout(f) if !(f > 0.0 && f < 1.0) => Err(Error::Config("hold-out fraction must be in (0, 1)".into())),
            _ => Ok(()),
        }
    }

    /// Cumulative fraction targeted in round `r` (0-based).
    pub fn fraction_at(&self, round: usize) -> f64 {
        (self.initial_fraction + round as f64 * self.increment_fraction).min(self.max_fraction)
    }

    /// Upper bound on the number of rounds.
    pub fn max_rounds(&self) -> usize {
        ((self.max_fraction - self.initial_fraction) / self.increment_fraction - 1e-9).ceil().max(0.0) as usize + 1
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Per-cluster sample counts for a cumulative `fraction` of the corpus.
///
/// Each cluster gets `round(size × fraction)` (half rounds up); the largest
/// cluster absorbs the residual so the total is `round(n × fraction)`. Counts
/// never exceed cluster sizes.
pub fn proportional_counts(sizes: &[usize], fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("sampling fraction {fraction} is outside (0, 1]")));
    }
    let total: usize = sizes.iter().sum();
    let mut counts: Vec<usize> = sizes.iter().map(|&s| round_half_up(s as f64 * fraction).min(s)).collect();
    if total == 0 {
        return Ok(counts);
    }
    let target = round_half_up(total as f64 * fraction).min(total);
    let largest = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let assigned: usize = counts.iter().sum();
    if assigned < target {
        counts[largest] = (counts[largest] + (target - assigned)).min(sizes[largest]);
    } else if assigned > target {
        counts[largest] = counts[largest].saturating_sub(assigned - target);
    }
    Ok(counts)
}

/// Per-cluster random orders; every cumulative sample is a prefix of each
/// cluster's order, so later rounds only add files.
#[derive(Debug, Clone)]
pub struct ClusterOrders {
    orders: Vec<Vec<usize>>,
}

impl ClusterOrders {
    /// `assignment[i]` is the cluster of item `i`.
    pub fn new(assignment: &[usize], k: usize, seed: u64) -> Self {
        let mut orders = vec![Vec::new(); k];
        for (i, &c) in assignment.iter().enumerate() {
            orders[c].push(i);
        }
        for (c, order) in orders.iter_mut().enumerate() {
            order.shuffle(&mut crate::seed::rng(crate::seed::derive(seed, &format!("cluster-{c}"))));
        }
        ClusterOrders { orders }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.orders.iter().map(Vec::len).collect()
    }

    /// Item ids making up the first `counts[c]` of every cluster.
    pub fn take(&self, counts: &[usize]) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .orders
            .iter()
            .zip(counts)
            .flat_map(|(o, &n)| o[..n.min(o.len())].iter().copied())
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// One-shot proportional sample: counts per cluster plus the drawn ids.
pub fn proportional_sample(assignment: &[usize], k: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let orders = ClusterOrders::new(assignment, k, seed);
    let counts = proportional_counts(&orders.sizes(), fraction)?;
    let ids = orders.take(&counts);
    Ok((counts, ids))
}

/// Cluster files on their metadata features (name vocabulary capped).
pub fn cluster_files(files: &[FileMeta], cfg: &SamplingConfig) -> Result<(Vec<usize>, usize)> {
    if files.is_empty() {
        return Err(Error::invalid("cannot sample an empty corpus"));
    }
    let spec = fit_spec(
        files,
        FitOptions {
            max_vocab: Some(cfg.cluster_vocab),
            ..FitOptions::default()
        },
    )?;
    let matrix = spec.encoder().matrix(files);
    let k = cfg.file_cluster_k.min(files.len());
    let km = KMeansConfig {
        seed: crate::seed::derive(cfg.seed, "file-clusters"),
        restarts: 3,
        ..KMeansConfig::new(k)
    };
    Ok((kmeans(&matrix, &km)?.assignments, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    Budget,
    Exhausted,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::Budget => "budget",
            StopReason::Exhausted => "exhausted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRound {
    pub round: usize,
    pub fraction: f64,
    /// Cumulative sample, ascending file indices.
    pub ids: Vec<usize>,
    pub newly_scanned: usize,
    pub sensitive: usize,
    pub non_sensitive: usize,
    pub unknown: usize,
    pub accuracy: f64,
    pub stop: Option<StopReason>,
}

/// Supplies a content-derived label for a corpus file.
pub trait Labeler {
    fn label(&mut self, index: usize) -> SensitivityLabel;
}

impl<F: FnMut(usize) -> SensitivityLabel> Labeler for F {
    fn label(&mut self, index: usize) -> SensitivityLabel {
        self(index)
    }
}

/// Labels files by scanning their content on disk.
pub struct ContentLabeler<'a> {
    pub files: &'a [FileMeta],
    /// Mount point per volume id.
    pub roots: &'a BTreeMap<String, PathBuf>,
    pub dictionary: &'a Dictionary,
    pub rule: LabelRule,
    pub extractors: &'a Extractors,
    /// Every scan performed, in order.
    pub results: Vec<ContentScanResult>,
}

impl<'a> ContentLabeler<'a> {
    pub fn scan(&self, index: usize) -> ContentScanResult {
        let f = &self.files[index];
        let rel = f.relative_path();
        let file_ref = format!("{}:{}", f.volume_id, rel);
        match self.roots.get(&f.volume_id) {
            Some(root) => scan_file(&root.join(&rel), &file_ref, &f.extension, self.dictionary, self.extractors),
            None => ContentScanResult::not_crawled(file_ref, self.dictionary),
        }
    }
}

impl Labeler for ContentLabeler<'_> {
    fn label(&mut self, index: usize) -> SensitivityLabel {
        let result = self.scan(index);
        let label = label_file(&result, &self.rule);
        self.results.push(result);
        label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingOutcome {
    pub rounds: Vec<SamplingRound>,
    /// Label of every scanned file, keyed by corpus index.
    pub labels: BTreeMap<usize, SensitivityLabel>,
}

impl SamplingOutcome {
    /// Scanned files with a definite label, ascending by index.
    pub fn training_set(&self) -> (Vec<usize>, Vec<bool>) {
        self.labels
            .iter()
            .filter_map(|(&i, l)| l.as_bool().map(|b| (i, b)))
            .unzip()
    }
}

/// Grow a cluster-proportional sample round by round. The trainer receives
/// the labeled subset (corpus indices, labels) and returns an accuracy in
/// [0, 1]. Round 0 compares against an accuracy of 0.
pub fn progressive_sample<L, T>(
    assignment: &[usize],
    k: usize,
    cfg: &SamplingConfig,
    labeler: &mut L,
    mut trainer: T,
) -> Result<SamplingOutcome>
where
    L: Labeler + ?Sized,
    T: FnMut(&[usize], &[bool]) -> Result<f64>,
{
    cfg.validate()?;
    if assignment.is_empty() {
        return Err(Error::invalid("cannot sample an empty corpus"));
    }
    let orders = ClusterOrders::new(assignment, k, crate::seed::derive(cfg.seed, "draw"));
    let sizes = orders.sizes();
    let n = assignment.len();
    let mut counts = vec![0usize; k];
    let mut labels: BTreeMap<usize, SensitivityLabel> = BTreeMap::new();
    let mut rounds: Vec<SamplingRound> = Vec::new();
    let mut previous = 0.0;

    for r in 0..cfg.max_rounds() {
        let fraction = cfg.fraction_at(r);
        let target = proportional_counts(&sizes, fraction)?;
        let before: usize = counts.iter().sum();
        for (c, t) in counts.iter_mut().zip(&target) {
            *c = (*c).max(*t);
        }
        if counts.iter().sum::<usize>() == before && before < n {
            // rounding stalled; take one more file from the cluster with the
            // most left
            let c = (0..k).max_by_key(|&c| (sizes[c] - counts[c], std::cmp::Reverse(c))).unwrap_or(0);
            counts[c] += 1;
        }
        let ids = orders.take(&counts);
        let mut newly = 0;
        for &i in &ids {
            if let std::collections::btree_map::Entry::Vacant(e) = labels.entry(i) {
                e.insert(labeler.label(i));
                newly += 1;
            }
        }
        let tally = |want: SensitivityLabel| ids.iter().filter(|i| labels[i] == want).count();
        let (sensitive, non_sensitive, unknown) = (
            tally(SensitivityLabel::Sensitive),
            tally(SensitivityLabel::NonSensitive),
            tally(SensitivityLabel::Unknown),
        );
        if sensitive + non_sensitive == 0 {
            return Err(Error::NoTrainableLabels);
        }
        let (train_ids, train_labels): (Vec<usize>, Vec<bool>) =
            ids.iter().filter_map(|&i| labels[&i].as_bool().map(|b| (i, b))).unzip();
        let accuracy = trainer(&train_ids, &train_labels)?;
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::invalid(format!("trainer returned accuracy {accuracy} outside [0, 1]")));
        }
        let stop = if (accuracy - previous).abs() <= cfg.accuracy_delta_threshold {
            Some(StopReason::Converged)
        } else if fraction >= cfg.max_fraction - 1e-9 {
            Some(StopReason::Budget)
        } else if ids.len() == n {
            Some(StopReason::Exhausted)
        } else {
            None
        };
        rounds.push(SamplingRound {
            round: r,
            fraction,
            ids,
            newly_scanned: newly,
            sensitive,
            non_sensitive,
            unknown,
            accuracy,
            stop,
        });
        previous = accuracy;
        if stop.is_some() {
            break;
        }
    }
    if let Some(last) = rounds.last_mut() {
        last.stop.get_or_insert(StopReason::Budget);
    }
    Ok(SamplingOutcome { rounds, labels })
}

/// Accuracy of `cfg` on a labeled sample under the chosen evaluation mode.
/// When a class is too small to split, the majority-class share is returned.
pub fn evaluate_sample(x: &CsrMatrix, y: &[bool], train_cfg: &TrainConfig, mode: EvalMode) -> Result<f64> {
    let pos = y.iter().filter(|&&v| v).count();
    let minority = pos.min(y.len() - pos);
    let majority_share = pos.max(y.len() - pos) as f64 / y.len().max(1) as f64;
    match mode {
        EvalMode::KFold(k) => {
            let k = k.min(minority);
            if k < 2 {
                return Ok(majority_share);
            }
            let cfg = TrainConfig {
                folds: k,
                ..train_cfg.clone()
            };
            Ok(cross_validate(x, y, &cfg)?.mean.accuracy)
        }
        EvalMode::Holdout(frac) => {
            let k = (1.0 / frac).round().max(2.0) as usize;
            if minority < k {
                return Ok(majority_share);
            }
            let folds = stratified_folds(y, k, crate::seed::derive(train_cfg.seed, "holdout"))?;
            let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == 0).collect();
            let rest: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != 0).collect();
            let y_rest: Vec<bool> = rest.iter().map(|&i| y[i]).collect();
            let y_test: Vec<bool> = test.iter().map(|&i| y[i]).collect();
            let model = train(&x.select_rows(&rest), &y_rest, train_cfg, "holdout")?;
            let pred = predict(&model, &x.select_rows(&test), "holdout")?;
            Ok(evaluate(&pred.labels, &y_test)?.accuracy)
        }
    }
}

pub fn write_rounds_csv<W: Write>(rounds: &[SamplingRound], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "round",
        "fraction",
        "sample_size",
        "newly_scanned",
        "sensitive",
        "non_sensitive",
        "unknown",
        "accuracy",
        "stop_reason",
    ])?;
    for r in rounds {
        out.write_record([
            r.round.to_string(),
            format!("{:.4}", r.fraction),
            r.ids.len().to_string(),
            r.newly_scanned.to_string(),
            r.sensitive.to_string(),
            r.non_sensitive.to_string(),
            r.unknown.to_string(),
            format!("{:.6}", r.accuracy),
            r.stop.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush().map_err(|e| Error::io(Path::new("rounds.csv"), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example_960() {
        // 160000 files, one cluster holding 20%, 3% sampled
        let sizes = [32000, 64000, 64000];
        let counts = proportional_counts(&sizes, 0.03).unwrap();
        assert_eq!(counts[0], 960);
        assert_eq!(counts.iter().sum::<usize>(), 4800);
    }

    #[test]
    fn full_fraction_and_caps() {
        assert_eq!(proportional_counts(&[3, 7, 1], 1.0).unwrap(), vec![3, 7, 1]);
        assert_eq!(proportional_counts(&[5], 1.0).unwrap(), vec![5]);
        assert!(proportional_counts(&[5], 0.0).is_err());
        assert!(proportional_counts(&[5], 1.5).is_err());
        // each 0.5 rounds up to 1; the largest (first on ties) gives back the
        // surplus so the total stays round(10 × 0.1) = 1
        assert_eq!(proportional_counts(&[5, 5], 0.1).unwrap(), vec![0, 1]);
        assert_eq!(proportional_counts(&[5, 8], 0.1).unwrap(), vec![1, 0]);
    }

    #[test]
    fn sample_draws_are_seeded() {
        let assignment: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let a = proportional_sample(&assignment, 3, 0.2, 7).unwrap();
        let b = proportional_sample(&assignment, 3, 0.2, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.len(), 20);
        for (c, &n) in a.0.iter().enumerate() {
            assert_eq!(a.1.iter().filter(|&&i| assignment[i] == c).count(), n);
        }
    }

    fn strong_signal(i: usize) -> SensitivityLabel {
        SensitivityLabel::from_bool(i % 4 == 0)
    }

    #[test]
    fn threshold_one_stops_after_first_round() {
        let assignment = vec![0; 1000];
        let cfg = SamplingConfig {
            accuracy_delta_threshold: 1.0,
            ..SamplingConfig::default()
        };
        let out = progressive_sample(&assignment, 1, &cfg, &mut strong_signal, |_, _| Ok(0.7)).unwrap();
        assert_eq!(out.rounds.len(), 1);
        assert_eq!(out.rounds[0].stop, Some(StopReason::Converged));
    }

    #[test]
    fn budget_equal_to_initial_runs_once() {
        let assignment = vec![0; 1000];
        let cfg = SamplingConfig {
            max_fraction: 0.01,
            ..SamplingConfig::default()
        };
        let out = progressive_sample(&assignment, 1, &cfg, &mut strong_signal, |_, _| Ok(0.7)).unwrap();
        assert_eq!(out.rounds.len(), 1);
        assert_eq!(out.rounds[0].stop, Some(StopReason::Budget));
    }

    #[test]
    fn all_unknown_is_an_error() {
        let assignment = vec![0; 200];
        let mut unknown = |_: usize| SensitivityLabel::Unknown;
        let err = progressive_sample(&assignment, 1, &SamplingConfig::default(), &mut unknown, |_, _| Ok(0.5));
        assert!(matches!(err, Err(Error::NoTrainableLabels)));
    }

    #[test]
    fn plateau_converges_before_budget() {
        let assignment = vec![0; 2000];
        let accs = [0.6, 0.8, 0.9, 0.902, 0.95];
        let mut r = 0;
        let out = progressive_sample(&assignment, 1, &SamplingConfig::default(), &mut strong_signal, |_, _| {
            r += 1;
            Ok(accs[r - 1])
        })
        .unwrap();
        let seq: Vec<f64> = out.rounds.iter().map(|r| r.accuracy).collect();
        assert_eq!(seq, vec![0.6, 0.8, 0.9, 0.902]);
        assert_eq!(out.rounds.last().unwrap().stop, Some(StopReason::Converged));
        assert!(out.rounds.last().unwrap().fraction < 0.10);
    }

    #[test]
    fn tiny_corpus_is_exhausted() {
        let assignment = vec![0, 0, 1];
        let cfg = SamplingConfig {
            initial_fraction: 0.4,
            increment_fraction: 0.4,
            max_fraction: 1.0,
            ..SamplingConfig::default()
        };
        let mut acc = 0.0;
        let out = progressive_sample(&assignment, 2, &cfg, &mut strong_signal, |_, _| {
            acc += 0.3;
            Ok(acc)
        })
        .unwrap();
        let last = out.rounds.last().unwrap();
        assert_eq!(last.ids.len(), 3);
        assert!(matches!(last.stop, Some(StopReason::Budget) | Some(StopReason::Exhausted)));
    }

    #[test]
    fn rounds_csv_has_a_row_per_round() {
        let assignment = vec![0; 500];
        let out = progressive_sample(&assignment, 1, &SamplingConfig::default(), &mut strong_signal, |_, y| {
            Ok(y.len() as f64 / 500.0)
        })
        .unwrap();
        let mut buf = Vec::new();
        write_rounds_csv(&out.rounds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), out.rounds.len() + 1);
    }

    proptest! {
        #[test]
        fn shares_track_cluster_sizes(sizes in proptest::collection::vec(1usize..400, 1..8), fraction in 0.01f64..=1.0) {
            let counts = proportional_counts(&sizes, fraction).unwrap();
            let n: usize = sizes.iter().sum();
            let drawn: usize = counts.iter().sum();
            prop_assert_eq!(drawn, ((n as f64 * fraction) + 0.5 + 1e-9).floor() as usize);
            let slack = 1.0 + sizes.len() as f64 / 2.0;
            for (c, &s) in sizes.iter().enumerate() {
                prop_assert!(counts[c] <= s);
                let expected = drawn as f64 * s as f64 / n as f64;
                prop_assert!((counts[c] as f64 - expected).abs() <= slack, "{} vs {}", counts[c], expected);
            }
        }

        #[test]
        fn rounds_are_cumulative_and_bounded(
            n in 20usize..400,
            k in 1usize..5,
            initial in 0.01f64..0.3,
            increment in 0.01f64..0.3,
            extra in 0.0f64..0.5,
            seed in any::<u64>(),
        ) {
            let assignment: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % k).collect();
            let cfg = SamplingConfig {
                initial_fraction: initial,
                increment_fraction: increment,
                max_fraction: (initial + extra).min(1.0),
                accuracy_delta_threshold: 0.0,
                seed,
                ..SamplingConfig::default()
            };
            let mut calls = Vec::new();
            let mut labeler = |i: usize| { calls.push(i); SensitivityLabel::from_bool(i % 3 == 0) };
            let mut tick = 0.0;
            let out = progressive_sample(&assignment, k, &cfg, &mut labeler, |_, _| { tick += 1e-3; Ok(tick) }).unwrap();
            prop_assert!(out.rounds.len() <= cfg.max_rounds());
            for w in out.rounds.windows(2) {
                prop_assert!(w[1].ids.len() > w[0].ids.len());
                prop_assert!(w[0].ids.iter().all(|i| w[1].ids.binary_search(i).is_ok()));
            }
            let mut seen = calls.clone();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), calls.len());
            prop_assert!(out.rounds.last().unwrap().stop.is_some());
        }
    }
}
