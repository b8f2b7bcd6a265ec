//! CART-style regression trees: binary splits minimizing within-node
//! squared error, with optional per-split feature subsampling and the
//! random-threshold split mode used by extremely randomized trees.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{check_xy, ModelError};

/// How many features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxFeatures {
    All,
    Sqrt,
    Log2,
}

/// How candidate thresholds are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Scan every boundary between distinct sorted values.
    Exhaustive,
    /// Draw one uniform threshold per candidate feature.
    RandomThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Maximum number of splits on any root-to-leaf path; None = unlimited.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub split_mode: SplitMode,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
            split_mode: SplitMode::Exhaustive,
        }
    }
}

impl TreeParams {
    /// Coerces out-of-range values into the valid region: a leaf holds at
    /// least 1 row, and a split needs two children, so
    /// `min_samples_split >= max(2, min_samples_leaf)`. Some published
    /// configurations list `min_samples_split = 1`; the coercion keeps them
    /// usable and logs what changed.
    pub fn validated(&self) -> TreeParams {
        let mut p = self.clone();
        p.min_samples_leaf = p.min_samples_leaf.max(1);
        let floor = p.min_samples_leaf.max(2);
        if p.min_samples_split < floor {
            log::warn!(
                "min_samples_split {} raised to {} (a split needs two children of min_samples_leaf {})",
                p.min_samples_split,
                floor,
                p.min_samples_leaf
            );
            p.min_samples_split = floor;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
}

/// A fitted regression tree. Rows with `feature <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    n_features: usize,
    /// Total squared-error reduction contributed by each feature, unnormalized.
    importance: Vec<f64>,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: TreeParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

impl RegressionTree {
    /// Fits a tree on the full data (deterministic given `seed`, which
    /// drives feature subsampling and random thresholds).
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: &TreeParams, seed: u64) -> Result<Self, ModelError> {
        let width = check_xy(x, y)?;
        let mut b = Builder {
            x,
            y,
            params: params.validated(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
            importance: vec![0.0; width],
        };
        let idx: Vec<usize> = (0..x.len()).collect();
        b.grow(idx, 0);
        Ok(RegressionTree {
            nodes: b.nodes,
            n_features: width,
            importance: b.importance,
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        assert_eq!(row.len(), self.n_features, "prediction row width mismatch");
        let mut id = 0usize;
        loop {
            match self.nodes[id] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    id = if row[feature] <= threshold { left as usize } else { right as usize };
                }
            }
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_single_leaf(&self) -> bool {
        self.nodes.len() == 1
    }

    /// Per-feature total squared-error reduction, unnormalized. Forests
    /// aggregate and normalize these.
    pub fn raw_importance(&self) -> &[f64] {
        &self.importance
    }

    /// Leaf index a row falls into (for leaf-occupancy checks in tests).
    pub fn leaf_id(&self, row: &[f64]) -> usize {
        let mut id = 0usize;
        loop {
            match self.nodes[id] {
                Node::Leaf { .. } => return id,
                Node::Split { feature, threshold, left, right } => {
                    id = if row[feature] <= threshold { left as usize } else { right as usize };
                }
            }
        }
    }
}

impl Builder<'_> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> u32 {
        let n = idx.len();
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let sumsq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let mean = sum / n as f64;
        let sse = (sumsq - sum * sum / n as f64).max(0.0);
        // Pure nodes: tolerance absorbs accumulation noise on constant targets.
        let pure = sse <= 1e-12 * sumsq.abs().max(1.0);
        let p = &self.params;
        let splittable = !pure
            && n >= p.min_samples_split
            && n >= 2 * p.min_samples_leaf
            && p.max_depth.is_none_or(|d| depth < d);
        if splittable {
            if let Some((gain, feature, threshold)) = self.best_split(&idx, sse) {
                let node_id = self.nodes.len();
                self.nodes.push(Node::Leaf { value: mean });
                self.importance[feature] += gain.max(0.0);
                let (mut li, mut ri) = (Vec::new(), Vec::new());
                for i in idx {
                    if self.x[i][feature] <= threshold {
                        li.push(i);
                    } else {
                        ri.push(i);
                    }
                }
                let left = self.grow(li, depth + 1);
                let right = self.grow(ri, depth + 1);
                self.nodes[node_id] = Node::Split { feature, threshold, left, right };
                return node_id as u32;
            }
        }
        self.nodes.push(Node::Leaf { value: mean });
        (self.nodes.len() - 1) as u32
    }

    /// Best (gain, feature, threshold) among the sampled candidate
    /// features; None when no feature admits a valid split. Ties keep the
    /// lowest-numbered feature (candidates are scanned in sorted order).
    fn best_split(&mut self, idx: &[usize], parent_sse: f64) -> Option<(f64, usize, f64)> {
        let feats = self.pick_features();
        let mut best: Option<(f64, usize, f64)> = None;
        for f in feats {
            let cand = match self.params.split_mode {
                SplitMode::Exhaustive => self.exhaustive_split(idx, f, parent_sse),
                SplitMode::RandomThreshold => self.random_split(idx, f, parent_sse),
            };
            if let Some((g, t)) = cand {
                if best.is_none_or(|(bg, _, _)| g > bg) {
                    best = Some((g, f, t));
                }
            }
        }
        best
    }

    fn pick_features(&mut self) -> Vec<usize> {
        let nf = self.importance.len();
        let k = match self.params.max_features {
            MaxFeatures::All => return (0..nf).collect(),
            MaxFeatures::Sqrt => ((nf as f64).sqrt() as usize).clamp(1, nf),
            MaxFeatures::Log2 => ((nf as f64).log2() as usize).clamp(1, nf),
        };
        let mut arr: Vec<usize> = (0..nf).collect();
        for j in 0..k {
            let r = self.rng.gen_range(j..nf);
            arr.swap(j, r);
        }
        arr.truncate(k);
        arr.sort_unstable();
        arr
    }

    fn exhaustive_split(&self, idx: &[usize], f: usize, parent_sse: f64) -> Option<(f64, f64)> {
        let msl = self.params.min_samples_leaf;
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_unstable_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
        let n = order.len();
        let total_sum: f64 = order.iter().map(|&i| self.y[i]).sum();
        let total_sq: f64 = order.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for p in 1..n {
            let yi = self.y[order[p - 1]];
            left_sum += yi;
            left_sq += yi * yi;
            let (vl, vr) = (self.x[order[p - 1]][f], self.x[order[p]][f]);
            if vl == vr || p < msl || n - p < msl {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            let sse_l = (left_sq - left_sum * left_sum / p as f64).max(0.0);
            let sse_r = (right_sq - right_sum * right_sum / (n - p) as f64).max(0.0);
            let gain = parent_sse - sse_l - sse_r;
            // Midpoint threshold; rows with value <= threshold go left. The
            // guard keeps the right child nonempty when the midpoint rounds
            // up onto vr.
            let mut t = (vl + vr) / 2.0;
            if t >= vr {
                t = vl;
            }
            if best.is_none_or(|(bg, _)| gain > bg) {
                best = Some((gain, t));
            }
        }
        best
    }

    fn random_split(&mut self, idx: &[usize], f: usize, parent_sse: f64) -> Option<(f64, f64)> {
        let msl = self.params.min_samples_leaf;
        let mut vmin = f64::INFINITY;
        let mut vmax = f64::NEG_INFINITY;
        for &i in idx {
            let v = self.x[i][f];
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        if !(vmin < vmax) {
            return None;
        }
        let t = self.rng.gen_range(vmin..vmax);
        let (mut ls, mut lq, mut ln) = (0.0, 0.0, 0usize);
        let (mut rs, mut rq, mut rn) = (0.0, 0.0, 0usize);
        for &i in idx {
            let yi = self.y[i];
            if self.x[i][f] <= t {
                ls += yi;
                lq += yi * yi;
                ln += 1;
            } else {
                rs += yi;
                rq += yi * yi;
                rn += 1;
            }
        }
        if ln < msl || rn < msl {
            return None;
        }
        let sse_l = (lq - ls * ls / ln as f64).max(0.0);
        let sse_r = (rq - rs * rs / rn as f64).max(0.0);
        Some((parent_sse - sse_l - sse_r, t))
    }
}
