//! The enzyme stack: embeddings, global attention and neighborhood
//! equivariant sub-layers, output head, plus the substrate module and binding
//! head that share its message-passing block.

mod config;
mod decode;
pub mod layers;
mod params;
mod stack;
mod substrate;

pub use config::{KnnMode, ModelConfig, SubLayer};
pub use decode::greedy_decode;
pub use params::{Bindings, ParameterStore, SUBSTRATE_FEATURES};
pub use stack::{forward_nael_stack, forward_with_seed, EnzymeInput, StackOutput};
pub use substrate::{binding_logits, binding_probs, substrate_forward, substrate_graph, SubstrateRecord};

use crate::ec::EcError;
use crate::geometry::GeometryError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("config key `{key}`: {why}")]
    Config { key: &'static str, why: String },
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("sequence is empty")]
    EmptySequence,
    #[error("sequence length {len} exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("residue {residue} at position {index} is outside the 20-letter alphabet")]
    InvalidResidue { index: usize, residue: usize },
    #[error("{what}: expected {expected}, found {found}")]
    Mismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("substrate has no atoms")]
    EmptySubstrate,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("vocabulary: {0}")]
    Vocabulary(#[from] EcError),
}
