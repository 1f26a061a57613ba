use alloc::vec::Vec;

use super::record::CampaignRecord;
use super::space::Entity;

/// Source of new candidate entities.
///
/// Campaigns over a fixed space need no generator; the hook exists so a
/// learned generator can add entities between selections.
pub trait Generator {
    fn propose(&mut self, record: &CampaignRecord) -> Vec<Entity>;
}

/// Proposes nothing; the space stays fixed.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityGenerator;

impl Generator for IdentityGenerator {
    fn propose(&mut self, _record: &CampaignRecord) -> Vec<Entity> {
        Vec::new()
    }
}
