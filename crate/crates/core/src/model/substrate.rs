use super::layers::{aggregate, gated_update, neighbor_messages};
use super::params::{Bindings, SUBSTRATE_FEATURES};
use super::{ModelConfig, ModelError};
use crate::geometry::{knn, Coordinates, NeighborGraph};
use crate::numerics::{Tape, Tensor, Var};

/// A small molecule: per-atom chemical features and fixed 3D positions.
#[derive(Clone, Debug, PartialEq)]
pub struct SubstrateRecord {
    pub id: String,
    pub atoms: Vec<[f64; SUBSTRATE_FEATURES]>,
    pub coords: Coordinates,
}

impl SubstrateRecord {
    pub fn new(
        id: impl Into<String>,
        atoms: Vec<[f64; SUBSTRATE_FEATURES]>,
        coords: Coordinates,
    ) -> Result<Self, ModelError> {
        if atoms.is_empty() {
            return Err(ModelError::EmptySubstrate);
        }
        if atoms.len() != coords.len() {
            return Err(ModelError::Mismatch {
                what: "substrate coordinate rows",
                expected: atoms.len(),
                found: coords.len(),
            });
        }
        if atoms.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ModelError::Mismatch {
                what: "finite substrate features",
                expected: atoms.len(),
                found: 0,
            });
        }
        Ok(Self {
            id: id.into(),
            atoms,
            coords,
        })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    fn feature_tensor(&self) -> Tensor {
        Tensor::from_parts(
            vec![self.atoms.len(), SUBSTRATE_FEATURES],
            self.atoms.iter().flatten().copied().collect(),
        )
    }
}

/// All other atoms when there are at most `k` of them, else the `k` nearest.
pub fn substrate_graph(coords: &Coordinates, k: usize) -> Result<NeighborGraph, ModelError> {
    let m = coords.len();
    if m <= k + 1 {
        return Ok(NeighborGraph::fully_connected(m));
    }
    Ok(knn(coords, k)?)
}

/// Atom features after `substrate_layers` rounds of message passing.
/// Coordinates only enter through distances and are never updated.
pub fn substrate_forward(
    tape: &mut Tape,
    params: &Bindings,
    cfg: &ModelConfig,
    sub: &SubstrateRecord,
) -> Result<Var, ModelError> {
    if sub.is_empty() {
        return Err(ModelError::EmptySubstrate);
    }
    let m = sub.len();
    let feats = tape.constant(sub.feature_tensor());
    let mut h = tape.matmul_t(feats, params.get("sub.ws")?)?;
    let x = tape.constant(sub.coords.to_tensor());
    let graph = substrate_graph(&sub.coords, cfg.k_neighbors)?;
    for l in 0..cfg.substrate_layers {
        let prefix = format!("sub.{l}");
        let msg = neighbor_messages(tape, params, &prefix, cfg.d, h, x, &graph)?;
        let g = aggregate(tape, msg.as_ref(), m, cfg.d)?;
        h = gated_update(tape, params, &prefix, h, g)?;
    }
    Ok(h)
}

/// `W_b [Σ H_e ; Σ H_s]` as a 1×2 row: column 0 is "binds", column 1
/// "does not bind".
pub fn binding_logits(
    tape: &mut Tape,
    params: &Bindings,
    enzyme_features: Var,
    substrate_features: Var,
) -> Result<Var, ModelError> {
    let pe = tape.sum_pool(enzyme_features)?;
    let ps = tape.sum_pool(substrate_features)?;
    let pooled = tape.concat(&[pe, ps])?;
    Ok(tape.matmul_t(pooled, params.get("bind.wb")?)?)
}

/// Softmax of [`binding_logits`].
pub fn binding_probs(
    tape: &mut Tape,
    params: &Bindings,
    enzyme_features: Var,
    substrate_features: Var,
) -> Result<Var, ModelError> {
    let logits = binding_logits(tape, params, enzyme_features, substrate_features)?;
    Ok(tape.softmax(logits)?)
}
