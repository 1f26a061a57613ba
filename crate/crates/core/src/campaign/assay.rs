//! Simulated expensive assay.

use alloc::string::String;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::space::{standard_normal, Entity, EntityId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssayParams {
    pub duration_s: f64,
    pub failure_prob: f64,
    /// Absolute noise standard deviation.
    pub noise_sigma: f64,
    pub nodes: u32,
}

/// One entry `(entity, assay, property, value)` of the campaign record.
///
/// `value` is present exactly when the assay succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct AssayResultEntry {
    pub entity_id: EntityId,
    pub assay: String,
    pub property: String,
    pub value: Option<f64>,
    /// Node-seconds consumed.
    pub cost: f64,
}

impl AssayResultEntry {
    pub fn success(&self) -> bool {
        self.value.is_some()
    }
}

pub const ASSAY_NAME: &str = "simulation";
pub const PROPERTY_NAME: &str = "score";

/// Evaluates `entity` without waiting; callers add the `duration_s` delay.
///
/// Failure and noise draws come from a ChaCha stream keyed by `draw_seed`,
/// so results do not depend on which thread runs the assay.
pub fn run_assay(entity: &Entity, params: &AssayParams, draw_seed: u64) -> AssayResultEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
    let failed = rng.random::<f64>() < params.failure_prob;
    let value = if failed {
        None
    } else if params.noise_sigma > 0.0 {
        Some(entity.hidden_value() + params.noise_sigma * standard_normal(&mut rng))
    } else {
        Some(entity.hidden_value())
    };
    AssayResultEntry {
        entity_id: entity.id,
        assay: ASSAY_NAME.into(),
        property: PROPERTY_NAME.into(),
        value,
        cost: params.duration_s * params.nodes as f64,
    }
}
