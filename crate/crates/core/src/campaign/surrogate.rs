//! Bootstrap ensemble of ridge regressors.
//!
//! Each member is fit in closed form on a resample (with replacement) of the
//! training set. The spread of member predictions serves as the uncertainty
//! estimate for UCB ranking.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::solve;
use crate::stats::sample_std;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SurrogateError {
    #[error("insufficient_data: {have} usable samples, need at least {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("ensemble needs at least 2 members, got {0}")]
    TooFewMembers(usize),
    #[error("ridge alpha must be positive")]
    BadAlpha,
    #[error("ridge system is singular")]
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub bootstrap_seed: u64,
}

impl RidgeModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Ridge regression with an unpenalized intercept.
///
/// Centers features and targets, then solves
/// `(Xcᵀ Xc + alpha I) w = Xcᵀ yc` and sets `b = ȳ - x̄ · w`.
pub fn fit_ridge(xs: &[&[f64]], ys: &[f64], alpha: f64) -> Result<RidgeModel, SurrogateError> {
    if !(alpha > 0.0) {
        return Err(SurrogateError::BadAlpha);
    }
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(SurrogateError::InsufficientData {
            have: xs.len().min(ys.len()),
            need: 1,
        });
    }
    let dim = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(SurrogateError::DimMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let n = xs.len() as f64;
    let mut x_mean = vec![0.0; dim];
    for x in xs {
        for (m, v) in x_mean.iter_mut().zip(x.iter()) {
            *m += v / n;
        }
    }
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut gram = vec![vec![0.0; dim]; dim];
    let mut rhs = vec![0.0; dim];
    for (x, y) in xs.iter().zip(ys) {
        let yc = y - y_mean;
        for i in 0..dim {
            let xi = x[i] - x_mean[i];
            rhs[i] += xi * yc;
            for j in i..dim {
                gram[i][j] += xi * (x[j] - x_mean[j]);
            }
        }
    }
    for i in 0..dim {
        gram[i][i] += alpha;
        for j in 0..i {
            gram[i][j] = gram[j][i];
        }
    }
    let weights = solve(&gram, &rhs).ok_or(SurrogateError::Singular)?;
    let intercept = y_mean - x_mean.iter().zip(&weights).map(|(m, w)| m * w).sum::<f64>();
    Ok(RidgeModel {
        weights,
        intercept,
        bootstrap_seed: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Sample standard deviation across members.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEnsemble {
    pub members: Vec<RidgeModel>,
    pub ridge_alpha: f64,
    pub trained_on_count: usize,
}

impl SurrogateEnsemble {
    /// Trains `members` ridge models on bootstrap resamples of `(xs, ys)`.
    ///
    /// Needs at least `dim + 1` samples. Deterministic in the inputs and `seed`.
    pub fn train(
        xs: &[&[f64]],
        ys: &[f64],
        members: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self, SurrogateError> {
        if members < 2 {
            return Err(SurrogateError::TooFewMembers(members));
        }
        let dim = xs.first().map_or(0, |x| x.len());
        let need = dim + 1;
        if xs.len() < need || xs.is_empty() || xs.len() != ys.len() {
            return Err(SurrogateError::InsufficientData {
                have: xs.len().min(ys.len()),
                need: need.max(2),
            });
        }
        let n = xs.len();
        let mut fitted = Vec::with_capacity(members);
        for k in 0..members {
            let member_seed = seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(k as u64 + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(member_seed);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let bx: Vec<&[f64]> = idx.iter().map(|&i| xs[i]).collect();
            let by: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
            let mut model = fit_ridge(&bx, &by, alpha)?;
            model.bootstrap_seed = member_seed;
            fitted.push(model);
        }
        Ok(SurrogateEnsemble {
            members: fitted,
            ridge_alpha: alpha,
            trained_on_count: n,
        })
    }

    pub fn dim(&self) -> usize {
        self.members.first().map_or(0, |m| m.weights.len())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, SurrogateError> {
        if x.len() != self.dim() {
            return Err(SurrogateError::DimMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let preds: Vec<f64> = self.members.iter().map(|m| m.predict(x)).collect();
        let mean = preds.iter().sum::<f64>() / preds.len() as f64;
        Ok(Prediction {
            mean,
            spread: sample_std(&preds),
        })
    }

    pub fn predict_batch<'a, I>(&self, rows: I) -> Result<Vec<Prediction>, SurrogateError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        rows.into_iter().map(|x| self.predict(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ensemble_of(models: Vec<RidgeModel>) -> SurrogateEnsemble {
        SurrogateEnsemble {
            members: models,
            ridge_alpha: 1.0,
            trained_on_count: 0,
        }
    }

    fn constant(c: f64) -> RidgeModel {
        RidgeModel {
            weights: vec![0.0],
            intercept: c,
            bootstrap_seed: 0,
        }
    }

    #[test]
    fn identical_members_have_zero_spread() {
        let e = ensemble_of(vec![constant(2.0); 4]);
        let p = e.predict(&[0.3]).unwrap();
        assert_eq!(p.mean, 2.0);
        assert_eq!(p.spread, 0.0);
    }

    #[test]
    fn two_member_spread_is_sample_std() {
        let e = ensemble_of(vec![constant(1.0), constant(3.0)]);
        let p = e.predict(&[0.0]).unwrap();
        assert_eq!(p.mean, 2.0);
        assert!((p.spread - libm::sqrt(2.0)).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let e = ensemble_of(vec![constant(1.0), constant(3.0)]);
        assert_eq!(
            e.predict(&[0.0, 1.0]),
            Err(SurrogateError::DimMismatch {
                expected: 1,
                got: 2
            })
        );
    }

    #[test]
    fn insufficient_data() {
        let xs: Vec<&[f64]> = vec![&[1.0, 2.0], &[0.0, 1.0]];
        let err = SurrogateEnsemble::train(&xs, &[1.0, 2.0], 4, 0.1, 0).unwrap_err();
        assert!(matches!(err, SurrogateError::InsufficientData { have: 2, need: 3 }));
        assert_eq!(
            SurrogateEnsemble::train(&xs, &[1.0, 2.0], 1, 0.1, 0).unwrap_err(),
            SurrogateError::TooFewMembers(1)
        );
    }

    #[test]
    fn bad_alpha() {
        let xs: Vec<&[f64]> = vec![&[1.0]];
        assert_eq!(fit_ridge(&xs, &[1.0], 0.0), Err(SurrogateError::BadAlpha));
    }
}
