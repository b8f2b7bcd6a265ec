//! From-scratch regression trees and ensembles (random forests, extremely
//! randomized trees, gradient boosting), the stacked-generalization
//! procedure, and the two task-level training recipes.
//!
//! Determinism contract: identical seeds and data produce identical models
//! and predictions, independent of thread scheduling. Every tree derives
//! its own seed from the master seed and its position, so parallel fitting
//! cannot reorder random draws.

pub mod forest;
pub mod gbrt;
pub mod recipes;
pub mod stacking;
pub mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{Forest, ForestMode, ForestParams};
pub use gbrt::{Gbrt, GbrtParams, Loss};
pub use recipes::{fit_destination_predictor, fit_time_ensemble, DestinationModel, TimeModel};
pub use stacking::{fit_stacking, EnsembleModel, MetaLearner, MetaModel, StackingReport};
pub use tree::{MaxFeatures, RegressionTree, SplitMode, TreeParams};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training data is empty")]
    EmptyData,
    #[error("rows and targets differ in length: {rows} vs {targets}")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("row {row} has width {got}, expected {want}")]
    RaggedRow { row: usize, want: usize, got: usize },
    #[error("non-finite value in training data at row {0}")]
    NonFinite(usize),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("subsample must lie in (0, 1], got {0}")]
    InvalidSubsample(f64),
    #[error("n_trees must be at least 1")]
    NoTrees,
    #[error("validation/test fractions too large for {n} rows")]
    SplitTooSmall { n: usize },
    #[error("stacking needs at least one base model")]
    NoBaseModels,
    #[error("meta weight count {got} does not match base model count {want}")]
    MetaWidthMismatch { want: usize, got: usize },
}

/// Derives a per-component seed from a master seed and an index, so that
/// components can be fit in any order (or in parallel) without changing
/// their random streams.
pub fn splitmix64(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Linear-interpolation quantile (the common "type 7" convention) of an
/// unsorted sample. `q` is clamped to [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty sample");
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let q = q.clamp(0.0, 1.0);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }
}

/// Element-wise mean of several equally long prediction vectors. Used to
/// combine sub-ensembles into averaged composite predictions.
pub fn average_prediction_sets(sets: &[Vec<f64>]) -> Vec<f64> {
    assert!(!sets.is_empty(), "no prediction sets to average");
    let n = sets[0].len();
    assert!(sets.iter().all(|s| s.len() == n), "prediction sets differ in length");
    (0..n)
        .map(|i| sets.iter().map(|s| s[i]).sum::<f64>() / sets.len() as f64)
        .collect()
}

/// Validates a feature matrix against its targets; returns the width.
pub(crate) fn check_xy(x: &[Vec<f64>], y: &[f64]) -> Result<usize, ModelError> {
    if x.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if x.len() != y.len() {
        return Err(ModelError::LengthMismatch { rows: x.len(), targets: y.len() });
    }
    let width = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != width {
            return Err(ModelError::RaggedRow { row: i, want: width, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) || !y[i].is_finite() {
            return Err(ModelError::NonFinite(i));
        }
    }
    Ok(width)
}

/// A trained base regressor of any supported family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum BaseModel {
    Forest(Forest),
    Gbrt(Gbrt),
}

impl BaseModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            BaseModel::Forest(m) => m.predict_row(row),
            BaseModel::Gbrt(m) => m.predict_row(row),
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|r| self.predict_row(r)).collect()
    }
}

/// Hyperparameters for one base regressor, fit on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaseConfig {
    Forest(ForestParams),
    Gbrt(GbrtParams),
}

impl BaseConfig {
    pub fn fit(&self, x: &[Vec<f64>], y: &[f64], seed: u64) -> Result<BaseModel, ModelError> {
        match self {
            BaseConfig::Forest(p) => Forest::fit(x, y, p, seed).map(BaseModel::Forest),
            BaseConfig::Gbrt(p) => Gbrt::fit(x, y, p, seed).map(BaseModel::Gbrt),
        }
    }
}

/// The 21-model zoo used for travel-time prediction: ten boosting configs
/// over four losses, seven random forests, four extremely randomized trees.
/// `desk_scale` caps forest sizes at 200 trees for tractable runtimes; the
/// full-scale counts (2500/1000/3000) remain selectable.
pub fn default_time_zoo(desk_scale: bool) -> Vec<(String, BaseConfig)> {
    let forest_n = |full: usize| if desk_scale { full.min(200) } else { full };
    let gbrt_tree = TreeParams {
        max_depth: Some(3),
        min_samples_split: 3,
        min_samples_leaf: 3,
        max_features: MaxFeatures::All,
        split_mode: SplitMode::Exhaustive,
    };
    let gbrt = |loss: Loss, subsample: f64| {
        BaseConfig::Gbrt(GbrtParams {
            loss,
            learning_rate: 0.1,
            n_estimators: 128,
            subsample,
            tree: gbrt_tree.clone(),
        })
    };
    let rf = |mf: MaxFeatures, msl: usize, mss: usize, oob: bool| {
        BaseConfig::Forest(ForestParams {
            n_trees: forest_n(2500),
            tree: TreeParams {
                max_depth: None,
                min_samples_split: mss,
                min_samples_leaf: msl,
                max_features: mf,
                split_mode: SplitMode::Exhaustive,
            },
            mode: ForestMode::Rf,
            bootstrap: true,
            use_oob: oob,
        })
    };
    let ert = |mss: usize, oob: bool, n: usize| {
        BaseConfig::Forest(ForestParams {
            n_trees: forest_n(n),
            tree: TreeParams {
                max_depth: None,
                min_samples_split: mss,
                min_samples_leaf: 1,
                max_features: MaxFeatures::All,
                split_mode: SplitMode::RandomThreshold,
            },
            mode: ForestMode::Ert,
            bootstrap: false,
            use_oob: oob,
        })
    };
    vec![
        ("gbrt-01".into(), gbrt(Loss::Squared, 1.0)),
        ("gbrt-02".into(), gbrt(Loss::Squared, 0.8)),
        ("gbrt-03".into(), gbrt(Loss::Lad, 1.0)),
        ("gbrt-04".into(), gbrt(Loss::Lad, 0.8)),
        ("gbrt-05".into(), gbrt(Loss::Huber { alpha: 0.9 }, 1.0)),
        ("gbrt-06".into(), gbrt(Loss::Huber { alpha: 0.9 }, 0.8)),
        ("gbrt-07".into(), gbrt(Loss::Huber { alpha: 0.5 }, 1.0)),
        ("gbrt-08".into(), gbrt(Loss::Huber { alpha: 0.5 }, 0.8)),
        ("gbrt-09".into(), gbrt(Loss::Quantile { alpha: 0.5 }, 1.0)),
        ("gbrt-10".into(), gbrt(Loss::Quantile { alpha: 0.5 }, 0.8)),
        ("rf-01".into(), rf(MaxFeatures::All, 4, 2, false)),
        ("rf-02".into(), rf(MaxFeatures::All, 1, 1, false)),
        ("rf-03".into(), rf(MaxFeatures::Sqrt, 4, 2, false)),
        ("rf-04".into(), rf(MaxFeatures::Log2, 4, 2, false)),
        ("rf-05".into(), rf(MaxFeatures::All, 1, 1, true)),
        ("rf-06".into(), rf(MaxFeatures::Sqrt, 4, 2, true)),
        ("rf-07".into(), rf(MaxFeatures::Log2, 4, 2, true)),
        ("ert-01".into(), ert(1, false, 1000)),
        ("ert-02".into(), ert(2, false, 1000)),
        ("ert-03".into(), ert(2, true, 1000)),
        ("ert-04".into(), ert(1, true, 3000)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_is_stable_and_spread() {
        // Frozen values: the whole pipeline's reproducibility hangs on this
        // function never changing.
        assert_eq!(splitmix64(0, 0), splitmix64(0, 0));
        assert_ne!(splitmix64(0, 0), splitmix64(0, 1));
        assert_ne!(splitmix64(0, 0), splitmix64(1, 0));
        let vals: Vec<u64> = (0..100).map(|i| splitmix64(42, i)).collect();
        let mut dedup = vals.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 100);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn averaged_sub_ensembles_compose_by_mean() {
        // A composite built as the mean of four sub-ensemble prediction
        // sets, and one from the first three only.
        let me1 = vec![1.0, 2.0];
        let me2 = vec![3.0, 4.0];
        let me3 = vec![5.0, 6.0];
        let me4 = vec![7.0, 8.0];
        let me5 = average_prediction_sets(&[me1.clone(), me2.clone(), me3.clone(), me4]);
        assert_eq!(me5, vec![4.0, 5.0]);
        let me6 = average_prediction_sets(&[me1, me2, me3]);
        assert_eq!(me6, vec![3.0, 4.0]);
    }

    #[test]
    fn zoo_has_21_configs() {
        let zoo = default_time_zoo(true);
        assert_eq!(zoo.len(), 21);
        assert_eq!(zoo.iter().filter(|(n, _)| n.starts_with("gbrt")).count(), 10);
        assert_eq!(zoo.iter().filter(|(n, _)| n.starts_with("rf")).count(), 7);
        assert_eq!(zoo.iter().filter(|(n, _)| n.starts_with("ert")).count(), 4);
        for (_, cfg) in &zoo {
            if let BaseConfig::Forest(p) = cfg {
                assert!(p.n_trees <= 200);
            }
        }
        let full = default_time_zoo(false);
        let counts: Vec<usize> = full
            .iter()
            .filter_map(|(_, c)| match c {
                BaseConfig::Forest(p) => Some(p.n_trees),
                BaseConfig::Gbrt(_) => None,
            })
            .collect();
        assert_eq!(counts[..7], [2500; 7]);
        assert_eq!(counts[7..], [1000, 1000, 1000, 3000]);
    }
}
