use serde::{Deserialize, Serialize};

/// A location known to hold a pointer into object `idx` of span `span`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EscapeRecord {
    pub location: u64,
    pub span: u32,
    pub idx: u32,
}

/// Bounded buffer of pending records. Duplicates are dropped on insert by a
/// linear scan, which stays cheap at the small capacities used.
#[derive(Clone, Debug)]
pub struct EscapeCache {
    entries: Vec<EscapeRecord>,
    cap: usize,
}

impl EscapeCache {
    pub fn new(cap: usize) -> Self {
        let cap = cap.max(1);
        EscapeCache {
            entries: Vec::with_capacity(cap),
            cap,
        }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[EscapeRecord] {
        &self.entries
    }

    /// Adds `rec` unless already present. Returns whether it was added.
    pub fn insert(&mut self, rec: EscapeRecord) -> bool {
        if self.entries.contains(&rec) {
            return false;
        }
        self.entries.push(rec);
        true
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.cap
    }

    pub fn drain(&mut self) -> std::vec::Drain<'_, EscapeRecord> {
        self.entries.drain(..)
    }
}
