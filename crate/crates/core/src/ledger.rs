//! Pass-count cost accounting.
//!
//! One unit is one example through one forward pass; a forward+backward
//! training pass costs [`TRAIN_PASS_COST`] units.

use serde::{Deserialize, Serialize};

pub const FORWARD_PASS_COST: u64 = 1;
pub const TRAIN_PASS_COST: u64 = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub selecting_passes: u64,
    pub training_passes: u64,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total(&self) -> u64 {
        self.selecting_passes + self.training_passes
    }

    /// Forward passes spent choosing replay data.
    pub fn charge_selecting(&mut self, examples: u64) {
        self.selecting_passes += FORWARD_PASS_COST * examples;
    }

    /// Forward+backward passes spent on the gradient step.
    pub fn charge_training(&mut self, examples: u64) {
        self.training_passes += TRAIN_PASS_COST * examples;
    }

    /// Counter growth since `earlier`.
    pub fn since(&self, earlier: &CostLedger) -> CostLedger {
        CostLedger {
            selecting_passes: self.selecting_passes - earlier.selecting_passes,
            training_passes: self.training_passes - earlier.training_passes,
        }
    }

    pub fn add(&mut self, other: &CostLedger) {
        self.selecting_passes += other.selecting_passes;
        self.training_passes += other.training_passes;
    }
}
