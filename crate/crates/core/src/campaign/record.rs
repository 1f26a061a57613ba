use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::assay::AssayResultEntry;
use super::space::{EntityId, FeatureTable};

/// Append-only log of assay results, indexed by entity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CampaignRecord {
    entries: Vec<AssayResultEntry>,
    by_entity: BTreeMap<EntityId, Vec<usize>>,
}

impl CampaignRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: AssayResultEntry) {
        self.by_entity
            .entry(entry.entity_id)
            .or_default()
            .push(self.entries.len());
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[AssayResultEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn for_entity(&self, id: EntityId) -> impl Iterator<Item = &AssayResultEntry> {
        self.by_entity
            .get(&id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.entries[i])
    }

    pub fn has_success(&self, id: EntityId) -> bool {
        self.for_entity(id).any(AssayResultEntry::success)
    }

    pub fn successes(&self) -> impl Iterator<Item = (EntityId, f64)> + '_ {
        self.entries
            .iter()
            .filter_map(|e| e.value.map(|v| (e.entity_id, v)))
    }

    pub fn success_count(&self) -> usize {
        self.successes().count()
    }

    /// `(features, value)` pairs of every successful entry.
    pub fn training_set<'a>(&self, features: &'a FeatureTable) -> (Vec<&'a [f64]>, Vec<f64>) {
        self.successes()
            .filter_map(|(id, v)| features.get(id).map(|x| (x, v)))
            .unzip()
    }
}

/// Score `V(D)` and cost `C(D)` of a record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordScore {
    /// Best successful value; `None` when the record holds no successes.
    pub best: Option<f64>,
    /// Successful values strictly above the threshold.
    pub count_above: usize,
    /// Total cost, failures included.
    pub cost: f64,
}

pub fn record_score(record: &CampaignRecord, threshold: f64) -> RecordScore {
    let mut best: Option<f64> = None;
    let mut count_above = 0;
    for (_, v) in record.successes() {
        best = Some(best.map_or(v, |b| b.max(v)));
        if v > threshold {
            count_above += 1;
        }
    }
    RecordScore {
        best,
        count_above,
        cost: record.entries.iter().map(|e| e.cost).sum(),
    }
}
