use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::ec::EC_LEVELS;

/// How the residue neighbor graph is maintained through the stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KnnMode {
    /// Recompute from the current coordinates before every neighborhood sub-layer.
    #[default]
    Dynamic,
    /// Compute once from the initial coordinates.
    Frozen,
}

/// Architecture hyperparameters. Defaults are the desk-scale instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature width.
    pub d: usize,
    pub heads: usize,
    /// Number of global attention sub-layers in the enzyme stack.
    pub attention_layers: usize,
    /// A neighborhood equivariant sub-layer follows every `interleave_period`
    /// attention sub-layers.
    pub interleave_period: usize,
    /// Neighbor count for residue graphs (clamped to N - 1).
    pub k_neighbors: usize,
    /// Message-passing layers in the substrate module.
    pub substrate_layers: usize,
    /// Hidden width multiplier of the attention feed-forward block.
    pub ffn_mult: usize,
    /// Longest sequence the positional table covers.
    pub max_len: usize,
    /// Weight of the squared coordinate error, i.e. λ/2.
    pub coord_weight: f64,
    pub knn_mode: KnnMode,
    /// Keep motif coordinates fixed through every neighborhood sub-layer.
    pub freeze_motif_coords: bool,
    /// Vocabulary size of each EC level.
    pub tag_vocab: [usize; EC_LEVELS],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// One step of the enzyme stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubLayer {
    Attention(usize),
    Neighborhood(usize),
}

impl ModelConfig {
    /// 6 attention sub-layers with a neighborhood sub-layer after every 2, d = 64.
    pub fn desk() -> Self {
        Self {
            d: 64,
            heads: 4,
            attention_layers: 6,
            interleave_period: 2,
            k_neighbors: 30,
            substrate_layers: 3,
            ffn_mult: 4,
            max_len: 512,
            coord_weight: 1.0,
            knn_mode: KnnMode::Dynamic,
            freeze_motif_coords: false,
            tag_vocab: [1; EC_LEVELS],
        }
    }

    /// 33 attention sub-layers, one neighborhood sub-layer after every 11,
    /// d = 1280 with 64-wide heads, K = 30, three substrate layers.
    pub fn full_scale() -> Self {
        Self {
            d: 1280,
            heads: 20,
            attention_layers: 33,
            interleave_period: 11,
            k_neighbors: 30,
            substrate_layers: 3,
            ffn_mult: 4,
            max_len: 1024,
            coord_weight: 1.0,
            knn_mode: KnnMode::Dynamic,
            freeze_motif_coords: false,
            tag_vocab: [1; EC_LEVELS],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |key: &'static str, why: String| Err(ModelError::Config { key, why });
        if self.d == 0 {
            return fail("d", "must be positive".into());
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return fail("heads", format!("d = {} is not divisible by {} heads", self.d, self.heads));
        }
        if self.attention_layers == 0 {
            return fail("attention_layers", "must be positive".into());
        }
        if self.interleave_period == 0 || self.interleave_period > self.attention_layers {
            return fail(
                "interleave_period",
                format!(
                    "must be in 1..={} (attention_layers), got {}",
                    self.attention_layers, self.interleave_period
                ),
            );
        }
        if self.k_neighbors == 0 {
            return fail("k_neighbors", "must be positive".into());
        }
        if self.ffn_mult == 0 {
            return fail("ffn_mult", "must be positive".into());
        }
        if self.max_len == 0 {
            return fail("max_len", "must be positive".into());
        }
        if !(self.coord_weight.is_finite() && self.coord_weight >= 0.0) {
            return fail("coord_weight", "must be finite and non-negative".into());
        }
        if self.tag_vocab.contains(&0) {
            return fail("tag_vocab", "every level needs at least one entry".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn neighborhood_layers(&self) -> usize {
        self.attention_layers / self.interleave_period
    }

    /// Order of sub-layers through the enzyme stack.
    pub fn schedule(&self) -> Vec<SubLayer> {
        let mut out = Vec::with_capacity(self.attention_layers + self.neighborhood_layers());
        let mut nbr = 0;
        for a in 0..self.attention_layers {
            out.push(SubLayer::Attention(a));
            if (a + 1) % self.interleave_period == 0 {
                out.push(SubLayer::Neighborhood(nbr));
                nbr += 1;
            }
        }
        out
    }
}
