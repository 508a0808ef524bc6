//! Per-tick completion tracking.

use std::collections::BTreeSet;

use super::SimError;

#[derive(Debug, Default, Clone)]
pub struct TickBarrier {
    registered: BTreeSet<String>,
    done: BTreeSet<String>,
    tick: u64,
}

impl TickBarrier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_component(&mut self, id: &str) -> Result<(), SimError> {
        if !self.registered.insert(id.to_string()) {
            return Err(SimError::DuplicateComponent(id.to_string()));
        }
        Ok(())
    }

    pub fn registered(&self) -> impl Iterator<Item = &str> {
        self.registered.iter().map(String::as_str)
    }

    pub fn begin(&mut self, tick: u64) {
        self.tick = tick;
        self.done.clear();
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Record `sync/done`; reports for other ticks or unknown ids are ignored.
    pub fn mark_done(&mut self, id: &str, tick: u64) -> bool {
        if tick == self.tick && self.registered.contains(id) {
            self.done.insert(id.to_string())
        } else {
            false
        }
    }

    pub fn is_complete(&self) -> bool {
        self.done.len() == self.registered.len()
    }

    pub fn missing(&self) -> Vec<String> {
        self.registered.difference(&self.done).cloned().collect()
    }
}
