//! K-means (Lloyd iterations from k-means++ seeds), representative
//! selection and the elbow heuristic.

use std::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hotness::VolumeProfile;
use crate::matrix::{CsrMatrix, RowView};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub restarts: usize,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        KMeansConfig {
            k,
            seed: 42,
            max_iter: 300,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances of points to their centroid.
    pub objective: f64,
    /// Objective after every update step of the winning run.
    pub history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

struct Centroids {
    rows: Vec<Vec<f64>>,
    sq_norms: Vec<f64>,
}

impl Centroids {
    fn new(rows: Vec<Vec<f64>>) -> Self {
        let sq_norms = rows.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        Centroids { rows, sq_norms }
    }

    fn sq_dist(&self, j: usize, x: &RowView<'_>) -> f64 {
        let c = &self.rows[j];
        if c.len() <= 64 {
            let mut d = 0.0;
            let mut it = x.iter().peekable();
            for (col, &cv) in c.iter().enumerate() {
                let xv = match it.peek() {
                    Some(&(i, v)) if i == col => {
                        it.next();
                        v
                    }
                    _ => 0.0,
                };
                d += (xv - cv) * (xv - cv);
            }
            d
        } else {
            let mut d = self.sq_norms[j];
            for (i, v) in x.iter() {
                d += (v - c[i]) * (v - c[i]) - c[i] * c[i];
            }
            d.max(0.0)
        }
    }

    fn nearest(&self, x: &RowView<'_>) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for j in 0..self.rows.len() {
            let d = self.sq_dist(j, x);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }
}

fn validate(points: &CsrMatrix, k: usize, max_iter: usize) -> Result<()> {
    let n = points.n_rows();
    if n == 0 {
        return Err(Error::invalid("k-means needs at least one point"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must be in 1..={n}")));
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    if points.rows().any(|r| r.values.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("non-finite coordinate"));
    }
    Ok(())
}

pub fn kmeans(points: &CsrMatrix, cfg: &KMeansConfig) -> Result<ClusterAssignment> {
    validate(points, cfg.k, cfg.max_iter)?;
    let mut stream = seed::rng(cfg.seed);
    let mut best: Option<ClusterAssignment> = None;
    for _ in 0..cfg.restarts.max(1) {
        let run_seed: u64 = stream.gen();
        let run = lloyd(points, cfg.k, run_seed, cfg.max_iter);
        if best.as_ref().map_or(true, |b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn kmeans_dense(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<ClusterAssignment> {
    kmeans(&CsrMatrix::from_dense(points)?, cfg)
}

fn plus_plus_seeds(points: &CsrMatrix, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.n_rows();
    let dim = points.n_cols();
    let first = rng.gen_range(0..n);
    let mut centroids = vec![points.row(first).to_dense(dim)];
    let mut d2: Vec<f64> = {
        let c = Centroids::new(centroids.clone());
        points.rows().map(|r| c.sq_dist(0, &r)).collect()
    };
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let row = points.row(pick).to_dense(dim);
        let c = Centroids::new(vec![row.clone()]);
        for (i, r) in points.rows().enumerate() {
            d2[i] = d2[i].min(c.sq_dist(0, &r));
        }
        centroids.push(row);
    }
    centroids
}

fn lloyd(points: &CsrMatrix, k: usize, run_seed: u64, max_iter: usize) -> ClusterAssignment {
    let n = points.n_rows();
    let dim = points.n_cols();
    let mut rng = seed::rng(run_seed);
    let mut centroids = Centroids::new(plus_plus_seeds(points, k, &mut rng));
    let mut assign = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut history = Vec::new();

    for _ in 0..max_iter {
        let mut changed = false;
        for (i, row) in points.rows().enumerate() {
            let (j, d) = centroids.nearest(&row);
            if assign[i] != j {
                changed = true;
                assign[i] = j;
            }
            dist[i] = d;
        }
        if !changed {
            break;
        }
        repair_empty(&mut assign, &mut dist, k);
        centroids = Centroids::new(means(points, &assign, k, dim));
        history.push(objective_of(points, &assign, &centroids));
    }
    if assign.iter().all(|&a| a < k) && hartigan(points, &mut assign, k, max_iter) {
        centroids = Centroids::new(means(points, &assign, k, dim));
        history.push(objective_of(points, &assign, &centroids));
    }

    let objective = objective_of(points, &assign, &centroids);
    ClusterAssignment {
        k,
        assignments: assign,
        centroids: centroids.rows,
        objective,
        history,
    }
}

// Single-point transfers (Hartigan): move a point when doing so lowers the
// objective, accounting for both centroids shifting. Escapes Lloyd fixed
// points that are one move away from a better partition. Returns whether
// anything moved.
fn hartigan(points: &CsrMatrix, assign: &mut [usize], k: usize, max_passes: usize) -> bool {
    let dim = points.n_cols();
    let mut cents = means(points, assign, k, dim);
    let mut norms: Vec<f64> = cents.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut sizes = vec![0usize; k];
    for &a in assign.iter() {
        sizes[a] += 1;
    }
    let sq = |row: &RowView<'_>, c: &[f64], norm: f64| -> f64 {
        let mut d = norm;
        for (i, v) in row.iter() {
            d += v * v - 2.0 * v * c[i];
        }
        d.max(0.0)
    };
    let mut any = false;
    for _ in 0..max_passes {
        let mut moved = false;
        for (i, row) in points.rows().enumerate() {
            let a = assign[i];
            if sizes[a] <= 1 {
                continue;
            }
            let na = sizes[a] as f64;
            let removal = na / (na - 1.0) * sq(&row, &cents[a], norms[a]);
            let mut best = (a, removal);
            for b in (0..k).filter(|&b| b != a) {
                let nb = sizes[b] as f64;
                let add = nb / (nb + 1.0) * sq(&row, &cents[b], norms[b]);
                if add < best.1 {
                    best = (b, add);
                }
            }
            let (b, add) = best;
            if b == a || removal - add <= 1e-12 * removal.max(1.0) {
                continue;
            }
            let nb = sizes[b] as f64;
            for c in cents[a].iter_mut() {
                *c *= na / (na - 1.0);
            }
            for c in cents[b].iter_mut() {
                *c *= nb / (nb + 1.0);
            }
            for (j, v) in row.iter() {
                cents[a][j] -= v / (na - 1.0);
                cents[b][j] += v / (nb + 1.0);
            }
            norms[a] = cents[a].iter().map(|v| v * v).sum();
            norms[b] = cents[b].iter().map(|v| v * v).sum();
            sizes[a] -= 1;
            sizes[b] += 1;
            assign[i] = b;
            moved = true;
            any = true;
        }
        if !moved {
            break;
        }
    }
    any
}

// Give every empty cluster the point farthest from its centroid, taken from
// a cluster that still keeps at least one member.
fn repair_empty(assign: &mut [usize], dist: &mut [f64], k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in assign.iter() {
        sizes[a] += 1;
    }
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let donor = (0..assign.len())
            .filter(|&i| sizes[assign[i]] > 1)
            .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
        if let Some(i) = donor {
            sizes[assign[i]] -= 1;
            assign[i] = j;
            sizes[j] = 1;
            dist[i] = 0.0;
        }
    }
}

fn means(points: &CsrMatrix, assign: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (row, &a) in points.rows().zip(assign) {
        counts[a] += 1;
        for (i, v) in row.iter() {
            sums[a][i] += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            for v in s.iter_mut() {
                *v /= c as f64;
            }
        }
    }
    sums
}

fn objective_of(points: &CsrMatrix, assign: &[usize], centroids: &Centroids) -> f64 {
    points
        .rows()
        .zip(assign)
        .map(|(r, &a)| centroids.sq_dist(a, &r))
        .sum()
}

/// Sum of squared distances of each point to the mean of its group.
pub fn partition_objective(points: &[Vec<f64>], assign: &[usize], k: usize) -> f64 {
    let dim = points.first().map_or(0, Vec::len);
    let m = CsrMatrix::from_dense(points).expect("rectangular points");
    let c = Centroids::new(means(&m, assign, k, dim));
    objective_of(&m, assign, &c)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Member of `cluster` with the smallest total Euclidean distance to the
/// other members; ties go to the lowest index.
pub fn representative(points: &[Vec<f64>], assignment: &ClusterAssignment, cluster: usize) -> Result<usize> {
    let members = assignment.members(cluster);
    if members.is_empty() {
        return Err(Error::invalid(format!("cluster {cluster} is empty")));
    }
    let mut best = (members[0], f64::INFINITY);
    for &i in &members {
        let total: f64 = members.iter().map(|&j| euclid(&points[i], &points[j])).sum();
        if total < best.1 {
            best = (i, total);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowCurve {
    pub ks: Vec<usize>,
    pub objectives: Vec<f64>,
    /// `1 - objective(k) / objective(1)`.
    pub explained: Vec<f64>,
    pub suggested_k: usize,
    /// Values of `k` where explained variance dropped below that of `k - 1`.
    pub monotonicity_violations: Vec<usize>,
}

pub fn elbow(points: &[Vec<f64>], k_range: RangeInclusive<usize>, seed: u64, restarts: usize) -> Result<ElbowCurve> {
    let m = CsrMatrix::from_dense(points)?;
    let n = m.n_rows();
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 1 || hi > n || lo > hi {
        return Err(Error::invalid(format!("k range {lo}..={hi} outside 1..={n}")));
    }
    let run = |k: usize| {
        kmeans(
            &m,
            &KMeansConfig {
                k,
                seed,
                max_iter: 300,
                restarts,
            },
        )
        .map(|a| a.objective)
    };
    let base = run(1)?;
    let mut ks = Vec::new();
    let mut objectives = Vec::new();
    for k in lo..=hi {
        ks.push(k);
        objectives.push(if k == 1 { base } else { run(k)? });
    }
    let explained: Vec<f64> = objectives
        .iter()
        .map(|&o| if base > 0.0 { 1.0 - o / base } else { 0.0 })
        .collect();
    let mut suggested_k = lo;
    let mut best_drop = f64::NEG_INFINITY;
    for i in 1..ks.len().saturating_sub(1) {
        let drop = (explained[i] - explained[i - 1]) - (explained[i + 1] - explained[i]);
        if drop > best_drop + 1e-12 {
            best_drop = drop;
            suggested_k = ks[i];
        }
    }
    let monotonicity_violations = (1..ks.len())
        .filter(|&i| explained[i] < explained[i - 1])
        .map(|i| ks[i])
        .collect();
    Ok(ElbowCurve {
        ks,
        objectives,
        explained,
        suggested_k,
        monotonicity_violations,
    })
}

/// Numeric clustering coordinates of a volume: the ten age percentages,
/// log10 file count and log10 total file size, min-max normalized per column
/// across `profiles`.
pub fn volume_points(profiles: &[VolumeProfile]) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = profiles
        .iter()
        .map(|p| {
            let mut v = p.age_percentages().to_vec();
            v.push((p.total_file_count.max(1) as f64).log10());
            v.push((p.total_file_size.max(1) as f64).log10());
            v
        })
        .collect();
    let dim = raw.first().map_or(0, Vec::len);
    let mut out = raw.clone();
    for j in 0..dim {
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j])));
        for row in out.iter_mut() {
            row[j] = if hi > lo { (row[j] - lo) / (hi - lo) } else { 0.0 };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn k_equals_n_is_zero_objective() {
        let p = pts(&[3.0, -1.0, 7.5, 2.0]);
        let a = kmeans_dense(&p, &KMeansConfig::new(4)).unwrap();
        assert_eq!(a.objective, 0.0);
        let mut s = a.assignments.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn two_pairs_on_a_line() {
        let p = pts(&[0.0, 1.0, 10.0, 11.0]);
        let a = kmeans_dense(&p, &KMeansConfig::new(2)).unwrap();
        assert_eq!(a.assignments[0], a.assignments[1]);
        assert_eq!(a.assignments[2], a.assignments[3]);
        assert_ne!(a.assignments[0], a.assignments[2]);
        let mut c: Vec<f64> = a.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.5, 10.5]);
        assert!((a.objective - 1.0).abs() < 1e-12);

        // brute force over all 2-partitions
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << 4) - 1 {
            let assign: Vec<usize> = (0..4).map(|i| ((mask >> i) & 1) as usize).collect();
            best = best.min(partition_objective(&p, &assign, 2));
        }
        assert!((best - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let p = pts(&[1.0, 2.0]);
        assert!(kmeans_dense(&p, &KMeansConfig::new(3)).is_err());
        assert!(kmeans_dense(&[vec![f64::NAN]], &KMeansConfig::new(1)).is_err());
        assert!(kmeans_dense(&[], &KMeansConfig::new(1)).is_err());
    }

    #[test]
    fn restarts_never_worse_than_first_run() {
        let p: Vec<Vec<f64>> = (0..40).map(|i| vec![((i * 37) % 17) as f64, ((i * 11) % 7) as f64]).collect();
        let one = kmeans_dense(&p, &KMeansConfig { restarts: 1, ..KMeansConfig::new(4) }).unwrap();
        let five = kmeans_dense(&p, &KMeansConfig { restarts: 5, ..KMeansConfig::new(4) }).unwrap();
        assert!(five.objective <= one.objective);
    }

    #[test]
    fn representative_examples() {
        let p = pts(&[0.0, 1.0, 5.0]);
        let a = ClusterAssignment { k: 1, assignments: vec![0, 0, 0], centroids: vec![vec![2.0]], objective: 0.0, history: vec![] };
        assert_eq!(representative(&p, &a, 0).unwrap(), 1);

        let p = pts(&[2.0, 2.0, 7.0]);
        assert_eq!(representative(&p, &a, 0).unwrap(), 0);

        let single = ClusterAssignment { k: 2, assignments: vec![0, 1, 0], centroids: vec![], objective: 0.0, history: vec![] };
        assert_eq!(representative(&p, &single, 1).unwrap(), 1);
        let empty = ClusterAssignment { k: 3, ..single };
        assert!(representative(&p, &empty, 2).is_err());
    }

    #[test]
    fn elbow_finds_three_blobs() {
        // 5 / 20 / 5 points; with equal sizes and equal spacing the
        // curvature rule prefers k = 2 (explained(2) = 0.75)
        let mut p = Vec::new();
        let mut truth = Vec::new();
        for (c, (centre, size)) in [(0.0, 5), (50.0, 20), (100.0, 5)].into_iter().enumerate() {
            for i in 0..size {
                p.push(vec![centre + (i as f64 - (size as f64 - 1.0) / 2.0) * 0.1]);
                truth.push(c);
            }
        }
        let curve = elbow(&p, 1..=6, 7, 10).unwrap();
        assert_eq!(curve.explained[0], 0.0);
        assert_eq!(curve.suggested_k, 3);
        let direct = partition_objective(&p, &truth, 3);
        assert!((curve.objectives[2] - direct).abs() < 1e-9);
        assert!(curve.explained.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn sparse_and_dense_distance_agree() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| (0..80).map(|j| if (i + j) % 9 == 0 { (i * j % 5) as f64 } else { 0.0 }).collect()).collect();
        let a = kmeans_dense(&rows, &KMeansConfig::new(3)).unwrap();
        let direct = partition_objective(&rows, &a.assignments, 3);
        assert!((a.objective - direct).abs() < 1e-9 * direct.max(1.0));
    }

    proptest! {
        #[test]
        fn lloyd_objective_never_increases(
            p in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 2), 3..30),
            k in 1usize..5,
            seed in any::<u64>(),
        ) {
            let k = k.min(p.len());
            let a = kmeans_dense(&p, &KMeansConfig { k, seed, max_iter: 300, restarts: 1 }).unwrap();
            for w in a.history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{:?}", a.history);
            }
            prop_assert_eq!(a.assignments.len(), p.len());
            prop_assert!(a.objective >= 0.0);
            let sizes = a.sizes();
            prop_assert!(sizes.iter().all(|&s| s > 0));
        }

        #[test]
        fn representative_translation_invariant(
            p in proptest::collection::vec(-20i32..20, 1..10),
            shift in -100i32..100,
        ) {
            let a = ClusterAssignment { k: 1, assignments: vec![0; p.len()], centroids: vec![], objective: 0.0, history: vec![] };
            let base: Vec<Vec<f64>> = p.iter().map(|&x| vec![x as f64]).collect();
            let moved: Vec<Vec<f64>> = p.iter().map(|&x| vec![(x + shift) as f64]).collect();
            prop_assert_eq!(representative(&base, &a, 0).unwrap(), representative(&moved, &a, 0).unwrap());
        }
    }
}
