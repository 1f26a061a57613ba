//! Active-learning campaign math.
//!
//! A campaign searches a fixed space of entities for high-valued ones. An
//! expensive simulated assay reveals an entity's value at a cost; a bootstrap
//! ridge ensemble learns from the record of assays and ranks the unexplored
//! entities by upper confidence bound.

pub mod assay;
pub mod generator;
mod linalg;
pub mod queue;
pub mod record;
pub mod space;
pub mod surrogate;

pub use assay::{run_assay, AssayParams, AssayResultEntry};
pub use generator::{Generator, IdentityGenerator};
pub use linalg::solve;
pub use queue::{ucb_score, MoleculeQueue};
pub use record::{record_score, CampaignRecord, RecordScore};
pub use space::{hidden_value, Entity, EntityId, FeatureTable, Space, SpaceKind, SpaceParams};
pub use surrogate::{fit_ridge, Prediction, RidgeModel, SurrogateEnsemble, SurrogateError};

use core::fmt;
use core::str::FromStr;

use alloc::string::String;

/// How the next entity to assay is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Uniform random selection; never trains.
    Random,
    /// Trains once on the initial batch and keeps that ranking.
    NoRetrain,
    /// Retrains every time the record gains `n_retrain` successful results.
    UpdateK,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::NoRetrain => "no_retrain",
            Policy::UpdateK => "update_k",
        }
    }

    pub fn uses_model(self) -> bool {
        !matches!(self, Policy::Random)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Policy::Random),
            "no_retrain" | "no-retrain" => Ok(Policy::NoRetrain),
            "update_k" | "update-k" => Ok(Policy::UpdateK),
            other => Err(alloc::format!(
                "unknown policy `{other}` (expected random, no_retrain or update_k)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    /// Number of expensive assays `B`.
    pub budget: usize,
    pub n_retrain: usize,
    pub ucb_kappa: f64,
    pub ensemble_size: usize,
    pub ridge_alpha: f64,
    pub assay_duration_s: f64,
    pub assay_failure_prob: f64,
    /// Assay noise standard deviation relative to the space's value scale.
    pub assay_noise: f64,
    pub nodes_per_assay: u32,
    pub sim_slots: u64,
    pub ml_slots: u64,
    /// Entities per inference task.
    pub predict_batch: usize,
    pub seed: u64,
    /// Before each selection, waits for outstanding assays and all pending
    /// model work, which makes the campaign reproducible from `seed`.
    pub synchronous: bool,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            budget: 200,
            n_retrain: 8,
            ucb_kappa: 2.0,
            ensemble_size: 8,
            ridge_alpha: 1e-2,
            assay_duration_s: 0.05,
            assay_failure_prob: 0.0,
            assay_noise: 0.01,
            nodes_per_assay: 1,
            sim_slots: 6,
            ml_slots: 2,
            predict_batch: 2000,
            seed: 0,
            synchronous: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CampaignConfigError {
    #[error("budget must be at least 1")]
    NoBudget,
    #[error("n_retrain must be at least 1")]
    BadRetrain,
    #[error("ucb kappa must be finite and non-negative")]
    BadKappa,
    #[error("ensemble size must be at least 2")]
    SmallEnsemble,
    #[error("ridge alpha must be positive")]
    BadAlpha,
    #[error("failure probability must lie in [0, 1]")]
    BadFailureProb,
    #[error("assay duration must be finite and non-negative")]
    BadDuration,
    #[error("simulation pool needs at least one slot and ML pool at least one slot")]
    BadPools,
    #[error("prediction batch must be at least 1")]
    BadBatch,
    #[error("an assay needs between 1 and sim_slots nodes")]
    BadNodes,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), CampaignConfigError> {
        use CampaignConfigError::*;
        if self.budget == 0 {
            return Err(NoBudget);
        }
        if self.n_retrain == 0 {
            return Err(BadRetrain);
        }
        if !(self.ucb_kappa.is_finite() && self.ucb_kappa >= 0.0) {
            return Err(BadKappa);
        }
        if self.ensemble_size < 2 {
            return Err(SmallEnsemble);
        }
        if !(self.ridge_alpha > 0.0) {
            return Err(BadAlpha);
        }
        if !(0.0..=1.0).contains(&self.assay_failure_prob) {
            return Err(BadFailureProb);
        }
        if !(self.assay_duration_s.is_finite() && self.assay_duration_s >= 0.0) {
            return Err(BadDuration);
        }
        if self.sim_slots == 0 || self.ml_slots == 0 {
            return Err(BadPools);
        }
        if self.predict_batch == 0 {
            return Err(BadBatch);
        }
        if self.nodes_per_assay == 0 || self.nodes_per_assay as u64 > self.sim_slots {
            return Err(BadNodes);
        }
        Ok(())
    }

    pub fn assay_params(&self, value_scale: f64) -> AssayParams {
        AssayParams {
            duration_s: self.assay_duration_s,
            failure_prob: self.assay_failure_prob,
            noise_sigma: self.assay_noise * value_scale,
            nodes: self.nodes_per_assay,
        }
    }
}

/// When the surrogate is (re)trained, in terms of successful assay results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrainSchedule {
    /// Successful results needed before the first training.
    pub initial: usize,
    pub n_retrain: usize,
    pub policy: Policy,
}

impl RetrainSchedule {
    /// The first `max(n_retrain, dim + 2)` assays are random under every policy.
    pub fn new(policy: Policy, n_retrain: usize, dim: usize) -> Self {
        RetrainSchedule {
            initial: n_retrain.max(dim + 2),
            n_retrain,
            policy,
        }
    }

    /// Successful-result count at which training number `k` (0-based) fires.
    pub fn threshold(&self, k: usize) -> Option<usize> {
        match (self.policy, k) {
            (Policy::Random, _) => None,
            (Policy::NoRetrain, 0) => Some(self.initial),
            (Policy::NoRetrain, _) => None,
            (Policy::UpdateK, k) => Some(self.initial + k * self.n_retrain),
        }
    }

    /// Number of trainings that should have fired once `successes` results
    /// are in.
    pub fn trainings_due(&self, successes: usize) -> usize {
        if successes < self.initial {
            return 0;
        }
        match self.policy {
            Policy::Random => 0,
            Policy::NoRetrain => 1,
            Policy::UpdateK => (successes - self.initial) / self.n_retrain + 1,
        }
    }
}
