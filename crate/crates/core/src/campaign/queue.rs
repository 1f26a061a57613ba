use alloc::vec::Vec;

use super::space::EntityId;

/// Upper confidence bound `mean + kappa * spread`.
pub fn ucb_score(mean: f64, spread: f64, kappa: f64) -> f64 {
    mean + kappa * spread
}

/// Candidates ordered by descending score; ties go to the lower id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MoleculeQueue {
    entries: Vec<(EntityId, f64)>,
    version: u64,
}

impl MoleculeQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces the whole ordering and bumps the version.
    pub fn replace(&mut self, mut entries: Vec<(EntityId, f64)>) {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        self.entries = entries;
        self.version += 1;
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn head(&self) -> Option<(EntityId, f64)> {
        self.entries.first().copied()
    }

    pub fn pop_head(&mut self) -> Option<(EntityId, f64)> {
        if self.entries.is_empty() {
            None
        } else {
            Some(self.entries.remove(0))
        }
    }

    /// Pops the best entry accepted by `keep`, discarding rejected ones ahead of it.
    pub fn pop_first_where(&mut self, mut keep: impl FnMut(EntityId) -> bool) -> Option<(EntityId, f64)> {
        let pos = self.entries.iter().position(|(id, _)| keep(*id))?;
        self.entries.drain(..pos);
        self.pop_head()
    }

    pub fn remove(&mut self, id: EntityId) -> bool {
        let before = self.entries.len();
        self.entries.retain(|(e, _)| *e != id);
        before != self.entries.len()
    }

    pub fn contains(&self, id: EntityId) -> bool {
        self.entries.iter().any(|(e, _)| *e == id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(EntityId, f64)] {
        &self.entries
    }

    pub fn is_sorted(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].1 >= w[1].1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ucb_arithmetic() {
        assert_eq!(ucb_score(10.0, 2.0, 2.0), 14.0);
        assert_eq!(ucb_score(3.5, 9.0, 0.0), 3.5);
    }

    #[test]
    fn replace_sorts_and_versions() {
        let mut q = MoleculeQueue::new();
        q.replace(vec![(EntityId(1), 0.5), (EntityId(2), 3.0), (EntityId(0), 0.5)]);
        assert_eq!(q.version(), 1);
        assert!(q.is_sorted());
        assert_eq!(
            q.entries(),
            &[(EntityId(2), 3.0), (EntityId(0), 0.5), (EntityId(1), 0.5)]
        );
        assert_eq!(q.pop_head(), Some((EntityId(2), 3.0)));
        assert_eq!(q.pop_first_where(|id| id != EntityId(0)), Some((EntityId(1), 0.5)));
        assert!(q.is_empty());
    }
}
