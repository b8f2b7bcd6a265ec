//! Gradient-boosted regression trees: stagewise additive modeling with
//! squared, absolute, Huber, and quantile losses on shallow CART trees.
//!
//! Each stage fits a tree to the loss's negative gradients at the current
//! predictions (optionally on a row subsample) and adds it scaled by the
//! learning rate. Leaf values are plain gradient means; there is no
//! per-leaf line search.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, TreeParams};
use super::{check_xy, quantile, splitmix64, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Loss {
    /// Squared error; constant fit is the mean.
    Squared,
    /// Least absolute deviation; constant fit is the median.
    Lad,
    /// Huber loss with per-stage transition point set to the alpha-quantile
    /// of absolute residuals; constant fit is the Huber M-estimate.
    Huber { alpha: f64 },
    /// Pinball loss; constant fit is the alpha-quantile.
    Quantile { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbrtParams {
    pub loss: Loss,
    pub learning_rate: f64,
    pub n_estimators: usize,
    /// Fraction of rows drawn (without replacement) per stage.
    pub subsample: f64,
    pub tree: TreeParams,
}

impl Default for GbrtParams {
    fn default() -> Self {
        GbrtParams {
            loss: Loss::Squared,
            learning_rate: 0.1,
            n_estimators: 128,
            subsample: 1.0,
            tree: TreeParams {
                max_depth: Some(3),
                min_samples_split: 3,
                min_samples_leaf: 3,
                ..TreeParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gbrt {
    f0: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
    n_features: usize,
}

const SUBSAMPLE_SALT: u64 = 0x5AB5;

/// Fixed point of the Huber psi function: mu with
/// `sum(clamp(y - mu, -delta, delta)) = 0`, where delta tracks the
/// alpha-quantile of absolute residuals. Seeded at the median.
fn huber_m_estimate(y: &[f64], alpha: f64) -> f64 {
    let mut mu = quantile(y, 0.5);
    for _ in 0..100 {
        let abs: Vec<f64> = y.iter().map(|v| (v - mu).abs()).collect();
        let delta = quantile(&abs, alpha);
        if delta == 0.0 {
            break;
        }
        let step: f64 =
            y.iter().map(|v| (v - mu).clamp(-delta, delta)).sum::<f64>() / y.len() as f64;
        mu += step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    mu
}

impl Loss {
    fn validate(&self) -> Result<(), ModelError> {
        match *self {
            Loss::Huber { alpha } | Loss::Quantile { alpha } => {
                if alpha <= 0.0 || alpha >= 1.0 {
                    return Err(ModelError::InvalidAlpha(alpha));
                }
            }
            Loss::Squared | Loss::Lad => {}
        }
        Ok(())
    }

    /// Loss-optimal constant prediction.
    fn constant_fit(&self, y: &[f64]) -> f64 {
        match *self {
            Loss::Squared => y.iter().sum::<f64>() / y.len() as f64,
            Loss::Lad => quantile(y, 0.5),
            Loss::Huber { alpha } => huber_m_estimate(y, alpha),
            Loss::Quantile { alpha } => quantile(y, alpha),
        }
    }

    /// Negative gradients at the current predictions. Huber recomputes its
    /// transition point from this stage's residuals.
    fn negative_gradients(&self, y: &[f64], f: &[f64]) -> Vec<f64> {
        match *self {
            Loss::Squared => y.iter().zip(f).map(|(&yi, &fi)| yi - fi).collect(),
            Loss::Lad => y
                .iter()
                .zip(f)
                .map(|(&yi, &fi)| {
                    let r = yi - fi;
                    if r > 0.0 {
                        1.0
                    } else if r < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            Loss::Huber { alpha } => {
                let abs: Vec<f64> = y.iter().zip(f).map(|(&yi, &fi)| (yi - fi).abs()).collect();
                let delta = quantile(&abs, alpha);
                y.iter()
                    .zip(f)
                    .map(|(&yi, &fi)| (yi - fi).clamp(-delta, delta))
                    .collect()
            }
            Loss::Quantile { alpha } => y
                .iter()
                .zip(f)
                .map(|(&yi, &fi)| if yi > fi { alpha } else { alpha - 1.0 })
                .collect(),
        }
    }
}

impl Gbrt {
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: &GbrtParams, master_seed: u64) -> Result<Self, ModelError> {
        let width = check_xy(x, y)?;
        params.loss.validate()?;
        if !(params.subsample > 0.0 && params.subsample <= 1.0) {
            return Err(ModelError::InvalidSubsample(params.subsample));
        }
        let tree_params = params.tree.validated();
        let n = x.len();
        let f0 = params.loss.constant_fit(y);
        let mut f = vec![f0; n];
        let mut trees = Vec::with_capacity(params.n_estimators);
        for stage in 0..params.n_estimators {
            let g = params.loss.negative_gradients(y, &f);
            let stage_seed = splitmix64(master_seed, stage as u64);
            let tree = if params.subsample < 1.0 {
                let k = ((params.subsample * n as f64) as usize).max(1);
                let mut rows: Vec<usize> = (0..n).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(stage_seed, SUBSAMPLE_SALT));
                for j in 0..k {
                    let r = rng.gen_range(j..n);
                    rows.swap(j, r);
                }
                rows.truncate(k);
                rows.sort_unstable();
                let sx: Vec<Vec<f64>> = rows.iter().map(|&r| x[r].clone()).collect();
                let sg: Vec<f64> = rows.iter().map(|&r| g[r]).collect();
                RegressionTree::fit(&sx, &sg, &tree_params, stage_seed)
                    .expect("subsample is nonempty and validated")
            } else {
                RegressionTree::fit(x, &g, &tree_params, stage_seed).expect("data validated above")
            };
            for (fi, row) in f.iter_mut().zip(x) {
                *fi += params.learning_rate * tree.predict_row(row);
            }
            trees.push(tree);
        }
        Ok(Gbrt {
            f0,
            learning_rate: params.learning_rate,
            trees,
            n_features: width,
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let boost: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        self.f0 + self.learning_rate * boost
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn n_stages(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    /// Training mean squared error after the constant fit and after each
    /// stage: `n_stages + 1` values. With squared loss and no subsampling
    /// each stage projects the residuals onto a piecewise-constant fit, so
    /// the sequence is non-increasing for learning rates in (0, 2).
    pub fn staged_mse(&self, x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let mut f: Vec<f64> = vec![self.f0; x.len()];
        let mse = |f: &[f64]| -> f64 {
            f.iter().zip(y).map(|(&fi, &yi)| (fi - yi) * (fi - yi)).sum::<f64>() / y.len() as f64
        };
        let mut out = Vec::with_capacity(self.trees.len() + 1);
        out.push(mse(&f));
        for tree in &self.trees {
            for (fi, row) in f.iter_mut().zip(x) {
                *fi += self.learning_rate * tree.predict_row(row);
            }
            out.push(mse(&f));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn signal_data(rng: &mut StdRng, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| 2.0 * r[0] - r[1] + 0.5 * r[2] * r[3] + rng.gen_range(-0.3..0.3))
            .collect();
        (x, y)
    }

    #[test]
    fn zero_stages_yield_loss_optimal_constants() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let y = vec![1.0, 2.0, 3.0, 4.0, 5.0, 100.0];
        let base = GbrtParams { n_estimators: 0, ..Default::default() };
        let mean = Gbrt::fit(&x, &y, &base, 1).unwrap();
        assert!((mean.predict_row(&[9.0]) - y.iter().sum::<f64>() / 6.0).abs() < 1e-12);
        let lad = GbrtParams { loss: Loss::Lad, n_estimators: 0, ..Default::default() };
        let med = Gbrt::fit(&x, &y, &lad, 1).unwrap();
        assert_eq!(med.predict_row(&[9.0]), 3.5);
        let q90 = GbrtParams { loss: Loss::Quantile { alpha: 0.9 }, n_estimators: 0, ..Default::default() };
        let q = Gbrt::fit(&x, &y, &q90, 1).unwrap();
        assert_eq!(q.predict_row(&[9.0]), quantile(&y, 0.9));
    }

    #[test]
    fn huber_constant_between_median_and_mean() {
        let y = vec![1.0, 2.0, 3.0, 4.0, 5.0, 1000.0];
        let med = quantile(&y, 0.5);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let mu = huber_m_estimate(&y, 0.9);
        assert!(mu >= med && mu <= mean, "m-estimate {mu} outside [{med}, {mean}]");
        // Symmetric data: coincides with the mean and median.
        let sym = vec![-2.0, -1.0, 0.0, 1.0, 2.0];
        assert!((huber_m_estimate(&sym, 0.5) - 0.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        let y = vec![1.0, 2.0];
        for alpha in [0.0, 1.0, -0.5, 2.0] {
            let p = GbrtParams { loss: Loss::Huber { alpha }, ..Default::default() };
            assert!(matches!(Gbrt::fit(&x, &y, &p, 1), Err(ModelError::InvalidAlpha(_))));
            let p = GbrtParams { loss: Loss::Quantile { alpha }, ..Default::default() };
            assert!(matches!(Gbrt::fit(&x, &y, &p, 1), Err(ModelError::InvalidAlpha(_))));
        }
        let p = GbrtParams { subsample: 0.0, ..Default::default() };
        assert!(matches!(Gbrt::fit(&x, &y, &p, 1), Err(ModelError::InvalidSubsample(_))));
    }

    #[test]
    fn squared_loss_training_error_non_increasing() {
        let mut rng = StdRng::seed_from_u64(173);
        let (x, y) = signal_data(&mut rng, 300);
        let params = GbrtParams { n_estimators: 60, ..Default::default() };
        let m = Gbrt::fit(&x, &y, &params, 9).unwrap();
        let trace = m.staged_mse(&x, &y);
        assert_eq!(trace.len(), 61);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "stage increased training MSE: {} -> {}", w[0], w[1]);
        }
        // And it actually learned something.
        assert!(trace[60] < 0.5 * trace[0]);
    }

    #[test]
    fn quantile_loss_shifts_predictions_upward() {
        let mut rng = StdRng::seed_from_u64(179);
        let x: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = (0..400).map(|_| rng.gen_range(0.0..10.0)).collect();
        let params = GbrtParams {
            loss: Loss::Quantile { alpha: 0.9 },
            n_estimators: 100,
            ..Default::default()
        };
        let m = Gbrt::fit(&x, &y, &params, 31).unwrap();
        let mean_pred: f64 = m.predict(&x).iter().sum::<f64>() / 400.0;
        let mean_y: f64 = y.iter().sum::<f64>() / 400.0;
        assert!(mean_pred > mean_y + 1.0, "alpha=0.9 should sit well above the mean");
    }

    #[test]
    fn huber_and_lad_resist_outliers() {
        let mut rng = StdRng::seed_from_u64(181);
        let x: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(-3.0..3.0)]).collect();
        let mut y: Vec<f64> = x.iter().map(|r| 2.0 * r[0]).collect();
        for i in (0..200).step_by(20) {
            y[i] += 500.0; // gross outliers
        }
        for loss in [Loss::Lad, Loss::Huber { alpha: 0.5 }] {
            let params = GbrtParams { loss, n_estimators: 80, ..Default::default() };
            let m = Gbrt::fit(&x, &y, &params, 41).unwrap();
            // Clean rows should still be fit well despite the outliers.
            let clean_mae: f64 = x
                .iter()
                .zip(&y)
                .filter(|(_, &yi)| yi < 100.0)
                .map(|(r, &yi)| (m.predict_row(r) - yi).abs())
                .sum::<f64>()
                / 190.0;
            assert!(clean_mae < 1.0, "robust loss {loss:?} left MAE {clean_mae}");
        }
    }

    #[test]
    fn subsampled_fit_is_deterministic() {
        let mut rng = StdRng::seed_from_u64(191);
        let (x, y) = signal_data(&mut rng, 150);
        let params = GbrtParams { subsample: 0.8, n_estimators: 20, ..Default::default() };
        let a = Gbrt::fit(&x, &y, &params, 55).unwrap();
        let b = Gbrt::fit(&x, &y, &params, 55).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = Gbrt::fit(&x, &y, &params, 56).unwrap();
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }
}
