use super::layers::{embed_inputs, global_attention_sublayer, neighborhood_sublayer};
use super::params::Bindings;
use super::{KnnMode, ModelConfig, ModelError, SubLayer};
use crate::ec::EcTag;
use crate::geometry::{init_coordinates, knn, Coordinates, NeighborGraph, Point};
use crate::numerics::{Tape, Var};

/// Conditioning for one enzyme: motif residues, motif coordinates and tag.
#[derive(Clone, Debug, PartialEq)]
pub struct EnzymeInput {
    /// `Some(amino_acid)` at motif positions, `None` at positions to design.
    pub residues: Vec<Option<usize>>,
    /// Known Cα positions; every other residue is initialised on a sphere.
    pub given_coords: Vec<(usize, Point)>,
    pub tag: EcTag,
}

impl EnzymeInput {
    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn motif_mask(&self) -> Vec<bool> {
        self.residues.iter().map(Option::is_some).collect()
    }

    /// Initial coordinates for this input drawn with `seed`.
    pub fn initial_coords(&self, seed: u64) -> Result<Coordinates, ModelError> {
        Ok(init_coordinates(&self.given_coords, self.len(), seed)?)
    }
}

pub struct StackOutput {
    /// N×20 amino-acid logits, `W_A · h`.
    pub logits: Var,
    /// N×3 final coordinates.
    pub coords: Var,
    /// N×d final features.
    pub features: Var,
    /// Edge weights of each neighborhood sub-layer, if it had edges.
    pub edge_weights: Vec<Option<Var>>,
    /// Neighbor graph used by each neighborhood sub-layer.
    pub graphs: Vec<NeighborGraph>,
}

fn residue_graph(coords: &Coordinates, k: usize) -> Result<NeighborGraph, ModelError> {
    if coords.len() < 2 {
        return Ok(NeighborGraph::from_lists(vec![Vec::new(); coords.len()]));
    }
    Ok(knn(coords, k)?)
}

/// Run the full stack from explicit initial coordinates.
pub fn forward_nael_stack(
    tape: &mut Tape,
    params: &Bindings,
    cfg: &ModelConfig,
    input: &EnzymeInput,
    initial: &Coordinates,
) -> Result<StackOutput, ModelError> {
    cfg.validate()?;
    let n = input.len();
    if initial.len() != n {
        return Err(ModelError::Mismatch {
            what: "initial coordinate rows",
            expected: n,
            found: initial.len(),
        });
    }
    let mut h = embed_inputs(tape, params, cfg, &input.residues, input.tag)?;
    let mut x = tape.constant(initial.to_tensor());
    let frozen = cfg.freeze_motif_coords.then(|| input.motif_mask());
    let frozen_graph = match cfg.knn_mode {
        KnnMode::Frozen => Some(residue_graph(initial, cfg.k_neighbors)?),
        KnnMode::Dynamic => None,
    };

    let mut edge_weights = Vec::new();
    let mut graphs = Vec::new();
    for step in cfg.schedule() {
        match step {
            SubLayer::Attention(a) => {
                h = global_attention_sublayer(tape, params, cfg, a, h)?.features;
            }
            SubLayer::Neighborhood(j) => {
                let graph = match &frozen_graph {
                    Some(g) => g.clone(),
                    None => {
                        let current = Coordinates::from_tensor(tape.value(x))?;
                        residue_graph(&current, cfg.k_neighbors)?
                    }
                };
                let out = neighborhood_sublayer(tape, params, cfg, j, h, x, &graph, frozen.as_deref())?;
                h = out.features;
                x = out.coords;
                edge_weights.push(out.edge_weights);
                graphs.push(graph);
            }
        }
    }
    let table = params.get("embed.aa")?;
    let logits = tape.matmul_t(h, table)?;
    Ok(StackOutput {
        logits,
        coords: x,
        features: h,
        edge_weights,
        graphs,
    })
}

/// Draw initial coordinates with `seed`, then run the stack.
pub fn forward_with_seed(
    tape: &mut Tape,
    params: &Bindings,
    cfg: &ModelConfig,
    input: &EnzymeInput,
    seed: u64,
) -> Result<(StackOutput, Coordinates), ModelError> {
    let initial = input.initial_coords(seed)?;
    let out = forward_nael_stack(tape, params, cfg, input, &initial)?;
    Ok((out, initial))
}
