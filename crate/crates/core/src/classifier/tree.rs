//! CART-style decision trees with Gini splits.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    /// Per-label counts of the training samples that reached the leaf.
    Leaf { counts: Vec<u64> },
}

impl Node {
    pub fn leaf_for(&self, row: &[f64]) -> &[u64] {
        let mut node = self;
        loop {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if row[*feature] <= *threshold { left } else { right },
                Node::Leaf { counts } => return counts,
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
            Node::Leaf { .. } => 0,
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        if let Node::Split { left, right, .. } = self {
            left.visit(f);
            right.visit(f);
        }
    }
}

/// Stopping rules and the number of features examined per node.
#[derive(Debug, Clone, Copy)]
pub struct GrowParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub features_per_node: usize,
}

/// Training matrix with labels mapped to `0..n_labels`.
pub struct TrainingSet<'a> {
    pub rows: &'a [Vec<f64>],
    pub labels: &'a [usize],
    pub n_labels: usize,
}

impl TrainingSet<'_> {
    fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// A candidate split. `left_sq` / `right_sq` are the sums of squared class
/// counts, so `left_sq / n_left + right_sq / n_right` grows exactly as the
/// weighted child Gini impurity shrinks.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    left_sq: u64,
    n_left: u64,
    right_sq: u64,
    n_right: u64,
}

impl Candidate {
    /// Exact comparison of `ls/nl + rs/nr` between two candidates.
    fn score_cmp(&self, other: &Candidate) -> Ordering {
        let num = |c: &Candidate| c.left_sq as u128 * c.n_right as u128 + c.right_sq as u128 * c.n_left as u128;
        let den = |c: &Candidate| c.n_left as u128 * c.n_right as u128;
        (num(self) * den(other)).cmp(&(num(other) * den(self)))
    }

    /// Higher score wins, then lower feature index, then lower threshold.
    fn beats(&self, other: &Candidate) -> bool {
        match self.score_cmp(other) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => (self.feature, self.threshold)
                .partial_cmp(&(other.feature, other.threshold))
                .is_some_and(|o| o == Ordering::Less),
        }
    }
}

/// Midpoint of two adjacent distinct values, kept strictly below `b`.
pub fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) * 0.5;
    if m >= b || m < a {
        a
    } else {
        m
    }
}

pub(crate) fn histogram(data: &TrainingSet, samples: &[usize]) -> Vec<u64> {
    let mut counts = vec![0u64; data.n_labels];
    for &i in samples {
        counts[data.labels[i]] += 1;
    }
    counts
}

/// Grows one tree on `samples` (row indices, repeats allowed).
pub fn grow<R: Rng>(data: &TrainingSet, samples: Vec<usize>, params: &GrowParams, rng: &mut R) -> Node {
    let mut features: Vec<usize> = (0..data.dim()).collect();
    build(data, samples, 0, params, &mut features, rng)
}

fn build<R: Rng>(
    data: &TrainingSet,
    samples: Vec<usize>,
    depth: usize,
    params: &GrowParams,
    features: &mut [usize],
    rng: &mut R,
) -> Node {
    let counts = histogram(data, &samples);
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if pure || depth >= params.max_depth || samples.len() < params.min_samples_split {
        return Node::Leaf { counts };
    }
    let Some(best) = best_split(data, &samples, params.features_per_node, features, rng) else {
        return Node::Leaf { counts };
    };
    let (left, right): (Vec<usize>, Vec<usize>) = samples
        .into_iter()
        .partition(|&i| data.rows[i][best.feature] <= best.threshold);
    Node::Split {
        feature: best.feature,
        threshold: best.threshold,
        left: Box::new(build(data, left, depth + 1, params, features, rng)),
        right: Box::new(build(data, right, depth + 1, params, features, rng)),
    }
}

/// Visits features in random order until `k` non-constant ones have been
/// scanned, and returns the best split among them.
fn best_split<R: Rng>(
    data: &TrainingSet,
    samples: &[usize],
    k: usize,
    features: &mut [usize],
    rng: &mut R,
) -> Option<Candidate> {
    features.shuffle(rng);
    let mut best: Option<Candidate> = None;
    let mut scanned = 0;
    let mut column: Vec<(f64, usize)> = Vec::with_capacity(samples.len());
    for &feature in features.iter() {
        if scanned == k {
            break;
        }
        column.clear();
        column.extend(samples.iter().map(|&i| (data.rows[i][feature], data.labels[i])));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        if column[0].0 == column[column.len() - 1].0 {
            continue;
        }
        scanned += 1;
        if let Some(c) = scan_feature(feature, &column, data.n_labels) {
            if best.as_ref().is_none_or(|b| c.beats(b)) {
                best = Some(c);
            }
        }
    }
    best
}

/// Best threshold on one feature; `column` is sorted by value.
fn scan_feature(feature: usize, column: &[(f64, usize)], n_labels: usize) -> Option<Candidate> {
    let mut left = vec![0u64; n_labels];
    let mut right = vec![0u64; n_labels];
    for &(_, y) in column {
        right[y] += 1;
    }
    let mut left_sq = 0u64;
    let mut right_sq: u64 = right.iter().map(|c| c * c).sum();
    let n = column.len() as u64;
    let mut best: Option<Candidate> = None;
    for i in 0..column.len() - 1 {
        let y = column[i].1;
        // moving one sample of class y: c^2 -> (c+1)^2 on the left, c^2 -> (c-1)^2 on the right
        left_sq += 2 * left[y] + 1;
        left[y] += 1;
        right_sq -= 2 * right[y] - 1;
        right[y] -= 1;
        let (a, b) = (column[i].0, column[i + 1].0);
        if a == b {
            continue;
        }
        let n_left = i as u64 + 1;
        let c = Candidate {
            feature,
            threshold: midpoint(a, b),
            left_sq,
            n_left,
            right_sq,
            n_right: n - n_left,
        };
        if best.as_ref().is_none_or(|b| c.beats(b)) {
            best = Some(c);
        }
    }
    best
}
