//! Random forest of Gini-split CART trees over sparse features.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::{CsrMatrix, RowView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MaxFeatures {
    #[default]
    Sqrt,
    All,
}

impl MaxFeatures {
    pub fn count(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::All => n_features.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 10,
            max_depth: None,
            bootstrap: true,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Node {
    Leaf {
        /// Weighted fraction of sensitive training samples in the leaf.
        p_sensitive: f64,
    },
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_probability(&self, row: &RowView<'_>) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { p_sensitive } => return *p_sensitive,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row.get(*feature as usize) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    /// Majority vote of the reached leaf; an even split votes sensitive.
    pub fn vote(&self, row: &RowView<'_>) -> bool {
        self.leaf_probability(row) >= 0.5
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub params: ForestParams,
    pub trees: Vec<Tree>,
}

impl RandomForest {
    /// Fraction of trees voting sensitive.
    pub fn score(&self, row: &RowView<'_>) -> f64 {
        let votes = self.trees.iter().filter(|t| t.vote(row)).count();
        votes as f64 / self.trees.len() as f64
    }

    /// Sensitive wins a tied vote.
    pub fn predict_row(&self, row: &RowView<'_>) -> (bool, f64) {
        let votes = self.trees.iter().filter(|t| t.vote(row)).count();
        (2 * votes >= self.trees.len(), votes as f64 / self.trees.len() as f64)
    }
}

/// Column-major copy of the training matrix for split search.
struct Columns {
    cols: Vec<Vec<(u32, f64)>>,
}

struct Builder<'a> {
    x: &'a CsrMatrix,
    columns: &'a Columns,
    y: &'a [bool],
    params: &'a ForestParams,
    max_features: usize,
    /// Per-row marker used to test node membership while walking a column.
    marker: Vec<u32>,
    perm: Vec<u32>,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct Pending {
    node: usize,
    rows: Vec<u32>,
    depth: usize,
}

#[derive(Clone, Copy)]
struct BestSplit {
    feature: u32,
    threshold: f64,
    score: f64,
}

impl<'a> Builder<'a> {
    fn weights_of(&self, rows: &[u32], w: &[f64]) -> (f64, f64) {
        let (mut pos, mut neg) = (0.0, 0.0);
        for &r in rows {
            if self.y[r as usize] {
                pos += w[r as usize];
            } else {
                neg += w[r as usize];
            }
        }
        (pos, neg)
    }

    fn build(mut self, w: &[f64], rows: Vec<u32>) -> Tree {
        self.nodes.push(Node::Leaf { p_sensitive: 0.0 });
        let mut stack = vec![Pending { node: 0, rows, depth: 0 }];
        let mut tag = 0u32;
        while let Some(p) = stack.pop() {
            tag += 1;
            let (pos, neg) = self.weights_of(&p.rows, w);
            let leaf = Node::Leaf {
                p_sensitive: pos / (pos + neg),
            };
            let depth_capped = self.params.max_depth.is_some_and(|m| p.depth >= m);
            if pos == 0.0 || neg == 0.0 || p.rows.len() < self.params.min_samples_split || depth_capped {
                self.nodes[p.node] = leaf;
                continue;
            }
            for &r in &p.rows {
                self.marker[r as usize] = tag;
            }
            let Some(best) = self.find_split(&p.rows, w, tag, pos, neg) else {
                self.nodes[p.node] = leaf;
                continue;
            };
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for &r in &p.rows {
                if self.x.row(r as usize).get(best.feature as usize) <= best.threshold {
                    left.push(r);
                } else {
                    right.push(r);
                }
            }
            let li = self.nodes.len();
            self.nodes.push(Node::Leaf { p_sensitive: 0.0 });
            self.nodes.push(Node::Leaf { p_sensitive: 0.0 });
            self.nodes[p.node] = Node::Split {
                feature: best.feature,
                threshold: best.threshold,
                left: li as u32,
                right: li as u32 + 1,
            };
            stack.push(Pending {
                node: li + 1,
                rows: right,
                depth: p.depth + 1,
            });
            stack.push(Pending {
                node: li,
                rows: left,
                depth: p.depth + 1,
            });
        }
        Tree { nodes: self.nodes }
    }

    /// Draw features in random order until `max_features` non-constant ones
    /// have been evaluated (or all features are exhausted).
    fn find_split(&mut self, rows: &[u32], w: &[f64], tag: u32, pos: f64, neg: f64) -> Option<BestSplit> {
        let n_features = self.perm.len();
        let mut best: Option<BestSplit> = None;
        let mut usable = 0;
        let mut entries: Vec<(f64, f64, f64)> = Vec::new();
        for i in 0..n_features {
            if usable == self.max_features {
                break;
            }
            let j = self.rng.gen_range(i..n_features);
            self.perm.swap(i, j);
            let f = self.perm[i];
            entries.clear();
            self.gather(f as usize, rows, w, tag, &mut entries);
            let n_zero = rows.len() - entries.len();
            if n_zero > 0 {
                let (mut zp, mut zn) = (pos, neg);
                for &(_, p, n) in entries.iter() {
                    zp -= p;
                    zn -= n;
                }
                entries.push((0.0, zp.max(0.0), zn.max(0.0)));
            }
            entries.sort_by(|a, b| a.0.total_cmp(&b.0));
            // merge equal values
            let mut merged: Vec<(f64, f64, f64)> = Vec::with_capacity(entries.len());
            for &(v, p, n) in entries.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == v => {
                        last.1 += p;
                        last.2 += n;
                    }
                    _ => merged.push((v, p, n)),
                }
            }
            if merged.len() < 2 {
                continue;
            }
            usable += 1;
            let (mut lp, mut ln) = (0.0, 0.0);
            for k in 0..merged.len() - 1 {
                lp += merged[k].1;
                ln += merged[k].2;
                let (rp, rn) = (pos - lp, neg - ln);
                let (lw, rw) = (lp + ln, rp + rn);
                if lw <= 0.0 || rw <= 0.0 {
                    continue;
                }
                // maximizing this minimizes weighted Gini impurity
                let score = (lp * lp + ln * ln) / lw + (rp * rp + rn * rn) / rw;
                if best.map_or(true, |b| score > b.score + 1e-12) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: 0.5 * (merged[k].0 + merged[k + 1].0),
                        score,
                    });
                }
            }
        }
        best
    }

    /// Nonzero `(value, pos weight, neg weight)` entries of column `f` for
    /// the rows in the current node.
    fn gather(&self, f: usize, rows: &[u32], w: &[f64], tag: u32, out: &mut Vec<(f64, f64, f64)>) {
        let col = &self.columns.cols[f];
        let push = |out: &mut Vec<(f64, f64, f64)>, r: usize, v: f64| {
            if self.y[r] {
                out.push((v, w[r], 0.0));
            } else {
                out.push((v, 0.0, w[r]));
            }
        };
        if col.len() <= rows.len() * 4 {
            for &(r, v) in col {
                if self.marker[r as usize] == tag {
                    push(out, r as usize, v);
                }
            }
        } else {
            for &r in rows {
                let v = self.x.row(r as usize).get(f);
                if v != 0.0 {
                    push(out, r as usize, v);
                }
            }
        }
    }
}

pub fn fit_forest(x: &CsrMatrix, y: &[bool], sample_weight: &[f64], params: &ForestParams, seed: u64) -> RandomForest {
    let columns = Columns { cols: x.to_columns() };
    let n = x.n_rows();
    let seeds: Vec<u64> = (0..params.n_trees).map(|t| crate::seed::derive(seed, &format!("tree-{t}"))).collect();
    let trees = seeds
        .iter()
        .map(|&tree_seed| {
            let mut rng = crate::seed::rng(tree_seed);
            let mut w = vec![0.0; n];
            if params.bootstrap {
                for _ in 0..n {
                    w[rng.gen_range(0..n)] += 1.0;
                }
            } else {
                w.iter_mut().for_each(|v| *v = 1.0);
            }
            let rows: Vec<u32> = (0..n as u32).filter(|&r| w[r as usize] > 0.0).collect();
            for (wi, s) in w.iter_mut().zip(sample_weight) {
                *wi *= s;
            }
            let builder = Builder {
                x,
                columns: &columns,
                y,
                params,
                max_features: params.max_features.count(x.n_cols()),
                marker: vec![0; n],
                perm: (0..x.n_cols() as u32).collect(),
                rng,
                nodes: Vec::new(),
            };
            builder.build(&w, rows)
        })
        .collect();
    RandomForest {
        params: *params,
        trees,
    }
}
