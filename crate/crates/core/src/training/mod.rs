//! Joint objective, optimiser and the two-phase training loop with optional
//! masked-residue pretraining.

mod adam;
mod loss;
mod trainer;

pub use adam::Adam;
pub use loss::{example_terms, joint_loss, total_loss, LossBreakdown, LossTerms, Phase};
pub use trainer::{
    epoch_batches, evaluate, example_input, mlm_mask, mlm_pretrain, step_seed, train, Evaluation, LogEntry,
    TrainState, TrainingSet,
};

use serde::{Deserialize, Serialize};

use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("schedule key `{key}`: {why}")]
    Schedule { key: &'static str, why: String },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss diverged at step {step}")]
    Diverged { step: u64 },
    #[error("{0}")]
    Log(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Step counts and optimiser settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    /// Steps trained on sequence and coordinate terms only.
    pub phase1_steps: u64,
    /// Steps trained on all three terms.
    pub phase2_steps: u64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Residue budget per batch; a longer record forms a batch of its own.
    pub batch_residues: usize,
    pub seed: u64,
    pub mlm_pretrain_steps: u64,
    pub mlm_mask_fraction: f64,
    /// Draw masked positions from non-motif residues only.
    pub mlm_respect_motif: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self::with_total(500)
    }
}

impl TrainSchedule {
    /// `total` steps with the first 20% in phase one.
    pub fn with_total(total: u64) -> Self {
        let phase1 = (total as f64 * 0.2).round() as u64;
        Self {
            phase1_steps: phase1,
            phase2_steps: total - phase1,
            learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            batch_residues: 8192,
            seed: 0,
            mlm_pretrain_steps: 0,
            mlm_mask_fraction: 0.2,
            mlm_respect_motif: false,
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.phase1_steps + self.phase2_steps
    }

    pub fn phase(&self, step: u64) -> Phase {
        if step < self.phase1_steps {
            Phase::One
        } else {
            Phase::Two
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let fail = |key: &'static str, why: &str| {
            Err(TrainingError::Schedule {
                key,
                why: why.to_string(),
            })
        };
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate", "must be positive and finite");
        }
        for (key, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(key, "must be in [0, 1)");
            }
        }
        if self.batch_residues == 0 {
            return fail("batch_residues", "must be positive");
        }
        if !(self.mlm_mask_fraction > 0.0 && self.mlm_mask_fraction < 1.0) {
            return fail("mlm_mask_fraction", "must be in (0, 1)");
        }
        Ok(())
    }
}
