//! Synthetic search spaces.
//!
//! Entity features are uniform in `[-1, 1]^dim`. The hidden property is
//! `w · x + a · Σ_j sin(π x_j)`, a linear trend plus a bounded nonlinear
//! ripple that a linear surrogate cannot capture exactly.

use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl core::str::FromStr for EntityId {
    type Err = core::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('e').unwrap_or(s).parse().map(EntityId)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: EntityId,
    pub features: Vec<f64>,
    hidden: f64,
}

impl Entity {
    pub fn new(id: EntityId, features: Vec<f64>, hidden: f64) -> Self {
        Entity {
            id,
            features,
            hidden,
        }
    }

    /// Ground truth; only the assay and reporting layers may read this.
    pub fn hidden_value(&self) -> f64 {
        self.hidden
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    /// Linear trend plus sine ripple with amplitude drawn from `[0, 0.5)`.
    Rippled,
    /// Purely linear (`a = 0`).
    Linear,
}

/// Coefficients of the hidden-value function.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceParams {
    pub weights: Vec<f64>,
    pub ripple: f64,
}

pub fn hidden_value(params: &SpaceParams, x: &[f64]) -> f64 {
    let linear: f64 = params.weights.iter().zip(x).map(|(w, v)| w * v).sum();
    if params.ripple == 0.0 {
        return linear;
    }
    let ripple: f64 = x
        .iter()
        .map(|v| libm::sin(core::f64::consts::PI * v))
        .sum();
    linear + params.ripple * ripple
}

/// Standard normal draw by the Box-Muller transform.
pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// Policy-visible view of a space: features only.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        FeatureTable { rows }
    }

    pub fn get(&self, id: EntityId) -> Option<&[f64]> {
        self.rows.get(id.index()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn ids(&self) -> impl Iterator<Item = EntityId> {
        (0..self.rows.len() as u32).map(EntityId)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Space {
    pub entities: Vec<Entity>,
    pub params: Option<SpaceParams>,
}

impl Space {
    /// Deterministic in `(n, dim, seed, kind)`.
    pub fn generate(n: usize, dim: usize, seed: u64, kind: SpaceKind) -> Space {
        assert!(n >= 1 && dim >= 1, "space needs at least one entity and one feature");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
        let ripple = match kind {
            SpaceKind::Rippled => rng.random_range(0.0..0.5),
            SpaceKind::Linear => 0.0,
        };
        let params = SpaceParams { weights, ripple };
        let entities = (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let h = hidden_value(&params, &x);
                Entity::new(EntityId(i as u32), x, h)
            })
            .collect();
        Space {
            entities,
            params: Some(params),
        }
    }

    /// Builds a space from explicit entities (e.g. loaded from a file).
    pub fn from_entities(entities: Vec<Entity>) -> Space {
        Space {
            entities,
            params: None,
        }
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entities.first().map_or(0, |e| e.features.len())
    }

    pub fn get(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(id.index())
    }

    pub fn feature_table(&self) -> FeatureTable {
        FeatureTable::new(self.entities.iter().map(|e| e.features.clone()).collect())
    }

    fn sorted_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.entities.iter().map(Entity::hidden_value).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Threshold with exactly `floor(n / 100)` entities strictly above it
    /// when hidden values are distinct.
    pub fn top_percent_threshold(&self) -> f64 {
        let v = self.sorted_values();
        let above = v.len() / 100;
        v[v.len() - above - 1]
    }

    /// Standard deviation of the hidden values.
    pub fn value_scale(&self) -> f64 {
        let v: Vec<f64> = self.entities.iter().map(Entity::hidden_value).collect();
        crate::stats::sample_std(&v)
    }
}
