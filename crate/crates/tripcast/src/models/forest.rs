//! Forests of regression trees: bootstrap aggregation (random forest mode)
//! and full-sample random-threshold trees (extremely randomized mode), with
//! optional out-of-bag error and normalized feature importances.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, SplitMode, TreeParams};
use super::{check_xy, splitmix64, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForestMode {
    /// Bootstrap rows per tree, exhaustive splits.
    Rf,
    /// Full sample per tree, one random threshold per candidate feature.
    Ert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub mode: ForestMode,
    /// Row resampling toggle for `Rf` mode (ignored in `Ert` mode, which
    /// always trains on the full sample).
    pub bootstrap: bool,
    /// Report out-of-bag error. Requires bootstrapping; otherwise the
    /// error is None and a warning is logged.
    pub use_oob: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 200,
            tree: TreeParams::default(),
            mode: ForestMode::Rf,
            bootstrap: true,
            use_oob: false,
        }
    }
}

/// A fitted forest. Prediction is the mean of tree predictions, so outputs
/// always lie within the training target range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<RegressionTree>,
    n_features: usize,
    /// Per-feature share of total squared-error reduction; sums to 1 when
    /// any split happened.
    importance: Vec<f64>,
    /// Mean squared error over out-of-bag predictions, when computed.
    oob_error: Option<f64>,
}

/// Salt separating the bootstrap stream from the tree's own seed.
const BOOTSTRAP_SALT: u64 = 0xB007;

/// Seed for tree `index` of a forest fit with `master_seed`. Exposed so a
/// single-tree forest without bootstrapping can be reproduced by fitting
/// one tree directly.
pub fn tree_seed(master_seed: u64, index: usize) -> u64 {
    splitmix64(master_seed, index as u64)
}

impl Forest {
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: &ForestParams, master_seed: u64) -> Result<Self, ModelError> {
        let width = check_xy(x, y)?;
        if params.n_trees == 0 {
            return Err(ModelError::NoTrees);
        }
        let mut tree_params = params.tree.validated();
        tree_params.split_mode = match params.mode {
            ForestMode::Rf => SplitMode::Exhaustive,
            ForestMode::Ert => SplitMode::RandomThreshold,
        };
        let resample = params.mode == ForestMode::Rf && params.bootstrap;
        let n = x.len();

        // (tree, rows drawn) fit in parallel; per-tree seeds keep results
        // independent of scheduling.
        let fits: Vec<(RegressionTree, Option<Vec<usize>>)> = (0..params.n_trees)
            .into_par_iter()
            .map(|i| {
                let seed = tree_seed(master_seed, i);
                if resample {
                    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed, BOOTSTRAP_SALT));
                    let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                    let bx: Vec<Vec<f64>> = rows.iter().map(|&r| x[r].clone()).collect();
                    let by: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
                    let tree = RegressionTree::fit(&bx, &by, &tree_params, seed)
                        .expect("bootstrap sample is nonempty and validated");
                    (tree, Some(rows))
                } else {
                    let tree = RegressionTree::fit(x, y, &tree_params, seed)
                        .expect("data validated above");
                    (tree, None)
                }
            })
            .collect();

        let mut importance = vec![0.0; width];
        for (tree, _) in &fits {
            for (acc, &g) in importance.iter_mut().zip(tree.raw_importance()) {
                *acc += g;
            }
        }
        let total: f64 = importance.iter().sum();
        if total > 0.0 {
            for v in &mut importance {
                *v /= total;
            }
        }

        let oob_error = if params.use_oob {
            if resample {
                Some(oob_mse(x, y, &fits))
            } else {
                log::warn!("out-of-bag error unavailable without bootstrapping; reporting none");
                None
            }
        } else {
            None
        };

        Ok(Forest {
            trees: fits.into_iter().map(|(t, _)| t).collect(),
            n_features: width,
            importance,
            oob_error,
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.par_iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Normalized per-feature importance (sums to 1 when any split happened).
    pub fn importance(&self) -> &[f64] {
        &self.importance
    }

    pub fn oob_error(&self) -> Option<f64> {
        self.oob_error
    }
}

/// Mean squared error of each row predicted only by trees whose bootstrap
/// sample missed it. Rows seen by every tree are skipped.
fn oob_mse(x: &[Vec<f64>], y: &[f64], fits: &[(RegressionTree, Option<Vec<usize>>)]) -> f64 {
    let n = x.len();
    let mut in_bag = vec![vec![false; n]; fits.len()];
    for (t, (_, rows)) in fits.iter().enumerate() {
        if let Some(rows) = rows {
            for &r in rows {
                in_bag[t][r] = true;
            }
        }
    }
    let mut sq_sum = 0.0;
    let mut counted = 0usize;
    for i in 0..n {
        let mut pred = 0.0;
        let mut k = 0usize;
        for (t, (tree, _)) in fits.iter().enumerate() {
            if !in_bag[t][i] {
                pred += tree.predict_row(&x[i]);
                k += 1;
            }
        }
        if k > 0 {
            let e = pred / k as f64 - y[i];
            sq_sum += e * e;
            counted += 1;
        }
    }
    if counted == 0 {
        f64::NAN
    } else {
        sq_sum / counted as f64
    }
}
