//! Sub-layers of the enzyme stack and the shared message-passing block.

use super::params::Bindings;
use super::{ModelConfig, ModelError};
use crate::ec::{EcTag, EC_LEVELS};
use crate::geometry::NeighborGraph;
use crate::numerics::{Tape, Tensor, Var};
use crate::alphabet::ALPHABET_SIZE;

/// `x · Wᵀ + b`
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, ModelError> {
    let y = tape.matmul_t(x, w)?;
    Ok(tape.add_row(y, b)?)
}

/// Initial residue features: amino-acid embedding for motif residues and the
/// mask embedding elsewhere, plus the four EC-level embeddings and a learned
/// absolute position embedding.
///
/// `residues[i]` is `Some(amino_acid)` exactly for motif positions.
pub fn embed_inputs(
    tape: &mut Tape,
    params: &Bindings,
    cfg: &ModelConfig,
    residues: &[Option<usize>],
    tag: EcTag,
) -> Result<Var, ModelError> {
    let n = residues.len();
    if n == 0 {
        return Err(ModelError::EmptySequence);
    }
    if n > cfg.max_len {
        return Err(ModelError::SequenceTooLong {
            len: n,
            max: cfg.max_len,
        });
    }
    for (level, &index) in tag.0.iter().enumerate() {
        if index >= cfg.tag_vocab[level] {
            return Err(crate::ec::EcError::IndexOutOfRange {
                level,
                index,
                size: cfg.tag_vocab[level],
            }
            .into());
        }
    }
    let mut rows = Vec::with_capacity(n);
    for (i, r) in residues.iter().enumerate() {
        match *r {
            Some(a) if a >= ALPHABET_SIZE => {
                return Err(ModelError::InvalidResidue { index: i, residue: a })
            }
            Some(a) => rows.push(a),
            None => rows.push(ALPHABET_SIZE),
        }
    }
    let aa = params.get("embed.aa")?;
    let mask = params.get("embed.mask")?;
    let table = tape.concat_rows(&[aa, mask])?;
    let mut h = tape.gather_rows(table, &rows)?;

    let mut tag_sum: Option<Var> = None;
    for lvl in 0..EC_LEVELS {
        let t = params.get(&format!("embed.tag.{lvl}"))?;
        let row = tape.gather_rows(t, &[tag.0[lvl]])?;
        tag_sum = Some(match tag_sum {
            None => row,
            Some(s) => tape.add(s, row)?,
        });
    }
    h = tape.add_row(h, tag_sum.expect("four levels"))?;

    let pos = params.get("embed.pos")?;
    let positions: Vec<usize> = (0..n).collect();
    let p = tape.gather_rows(pos, &positions)?;
    Ok(tape.add(h, p)?)
}

pub struct AttentionOutput {
    pub features: Var,
    /// Attention probabilities (N×N) per head.
    pub probs: Vec<Var>,
}

/// Post-norm Transformer block: `LN(FFN(h̃) + h̃)` with `h̃ = LN(MHA(h) + h)`.
/// Attention is over every residue; distances play no role here.
pub fn global_attention_sublayer(
    tape: &mut Tape,
    params: &Bindings,
    cfg: &ModelConfig,
    layer: usize,
    h: Var,
) -> Result<AttentionOutput, ModelError> {
    if cfg.heads == 0 || cfg.d % cfg.heads != 0 {
        return Err(ModelError::Config {
            key: "heads",
            why: format!("d = {} is not divisible by {} heads", cfg.d, cfg.heads),
        });
    }
    let p = |s: &str| params.get(&format!("attn.{layer}.{s}"));
    let q = linear(tape, h, p("wq")?, p("bq")?)?;
    let k = linear(tape, h, p("wk")?, p("bk")?)?;
    let v = linear(tape, h, p("wv")?, p("bv")?)?;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut probs = Vec::with_capacity(cfg.heads);
    for head in 0..cfg.heads {
        let (s, e) = (head * dh, (head + 1) * dh);
        let qh = tape.slice_cols(q, s, e)?;
        let kh = tape.slice_cols(k, s, e)?;
        let vh = tape.slice_cols(v, s, e)?;
        let scores = tape.matmul_t(qh, kh)?;
        let scores = tape.scale(scores, scale)?;
        let attn = tape.softmax(scores)?;
        heads.push(tape.matmul(attn, vh)?);
        probs.push(attn);
    }
    let joined = tape.concat(&heads)?;
    let mha = linear(tape, joined, p("wo")?, p("bo")?)?;
    let res = tape.add(mha, h)?;
    let h_tilde = tape.layer_norm(res, p("ln1.g")?, p("ln1.b")?)?;

    let hidden = linear(tape, h_tilde, p("ffn.w1")?, p("ffn.b1")?)?;
    let hidden = tape.silu(hidden)?;
    let ffn = linear(tape, hidden, p("ffn.w2")?, p("ffn.b2")?)?;
    let res = tape.add(ffn, h_tilde)?;
    let features = tape.layer_norm(res, p("ln2.g")?, p("ln2.b")?)?;
    Ok(AttentionOutput { features, probs })
}

/// Edge softmax of an `E×1` logit column grouped by source node.
pub fn segment_softmax(
    tape: &mut Tape,
    logits: Var,
    src: &[usize],
    nodes: usize,
) -> Result<Var, ModelError> {
    // Per-segment max is a constant shift; softmax is invariant to it, so
    // treating it as a constant leaves the gradient exact.
    let mut max = vec![f64::NEG_INFINITY; nodes];
    for (&s, &v) in src.iter().zip(tape.value(logits).data()) {
        max[s] = max[s].max(v);
    }
    let shift: Vec<f64> = src.iter().map(|&s| max[s]).collect();
    let shift = tape.constant(Tensor::from_parts(vec![src.len(), 1], shift));
    let z = tape.sub(logits, shift)?;
    let e = tape.exp(z)?;
    let denom = tape.segment_sum(e, src, nodes)?;
    let denom = tape.gather_rows(denom, src)?;
    Ok(tape.div(e, denom)?)
}

/// Weighted neighbor messages of one block.
pub struct Messages {
    /// `w_ik · m_ik` per edge, E×d.
    pub weighted: Var,
    /// Edge weights, E×1, summing to one per source node.
    pub weights: Var,
    /// `x_i - x_k` per edge, E×3.
    pub diff: Var,
    pub src: Vec<usize>,
}

/// Messages `m_ik = SiLU(FFN([h_i; h_k; ‖x_i − x_k‖]))` over the graph edges,
/// normalised by a softmax of `W_a m_ik + b_a` over each node's neighbors.
///
/// The first FFN layer acting on the concatenation is split into the
/// `h_i`, `h_k` and distance column blocks of its weight, so the `d`-wide
/// products are taken per node rather than per edge. The result is the same
/// affine map.
pub fn neighbor_messages(
    tape: &mut Tape,
    params: &Bindings,
    prefix: &str,
    d: usize,
    h: Var,
    x: Var,
    graph: &NeighborGraph,
) -> Result<Option<Messages>, ModelError> {
    let (src, dst) = graph.edges();
    if src.is_empty() {
        return Ok(None);
    }
    let n = tape.value(h).rows();
    let p = |s: &str| params.get(&format!("{prefix}.{s}"));
    let w1 = p("msg.w1")?;
    let w_self = tape.slice_cols(w1, 0, d)?;
    let w_other = tape.slice_cols(w1, d, 2 * d)?;
    let w_dist = tape.slice_cols(w1, 2 * d, 2 * d + 1)?;
    let w_dist = tape.reshape(w_dist, vec![1, d])?;

    let a = tape.matmul_t(h, w_self)?;
    let b = tape.matmul_t(h, w_other)?;
    let a_e = tape.gather_rows(a, &src)?;
    let b_e = tape.gather_rows(b, &dst)?;

    let xi = tape.gather_rows(x, &src)?;
    let xk = tape.gather_rows(x, &dst)?;
    let diff = tape.sub(xi, xk)?;
    let dist = tape.l2_norm(diff)?;
    let dist_term = tape.matmul(dist, w_dist)?;

    let pre = tape.add(a_e, b_e)?;
    let pre = tape.add(pre, dist_term)?;
    let pre = tape.add_row(pre, p("msg.b1")?)?;
    let hidden = tape.silu(pre)?;
    let out = linear(tape, hidden, p("msg.w2")?, p("msg.b2")?)?;
    let m = tape.silu(out)?;

    let logits = linear(tape, m, p("att.w")?, p("att.b")?)?;
    let weights = segment_softmax(tape, logits, &src, n)?;
    let weighted = tape.mul_col(m, weights)?;
    Ok(Some(Messages {
        weighted,
        weights,
        diff,
        src,
    }))
}

/// `h + σ(FFN(g)) ⊙ g`, with a ReLU two-layer FFN.
pub fn gated_update(
    tape: &mut Tape,
    params: &Bindings,
    prefix: &str,
    h: Var,
    g: Var,
) -> Result<Var, ModelError> {
    let p = |s: &str| params.get(&format!("{prefix}.{s}"));
    let hidden = linear(tape, g, p("gate.w1")?, p("gate.b1")?)?;
    let hidden = tape.relu(hidden)?;
    let gate = linear(tape, hidden, p("gate.w2")?, p("gate.b2")?)?;
    let gate = tape.sigmoid(gate)?;
    let delta = tape.mul(gate, g)?;
    Ok(tape.add(h, delta)?)
}

/// Sum of weighted messages per node, or zeros for a graph without edges.
pub fn aggregate(
    tape: &mut Tape,
    messages: Option<&Messages>,
    nodes: usize,
    d: usize,
) -> Result<Var, ModelError> {
    match messages {
        Some(m) => Ok(tape.segment_sum(m.weighted, &m.src, nodes)?),
        None => Ok(tape.constant(Tensor::zeros(&[nodes, d]))),
    }
}

pub struct NeighborhoodOutput {
    pub features: Var,
    pub coords: Var,
    pub edge_weights: Option<Var>,
}

/// Neighborhood equivariant sub-layer: messages, radial coordinate update
/// `x_i + Σ_k (x_i − x_k) · FFN(m_ik)`, and gated feature update.
///
/// `frozen` rows (when given) keep their input coordinates.
#[allow(clippy::too_many_arguments)]
pub fn neighborhood_sublayer(
    tape: &mut Tape,
    params: &Bindings,
    cfg: &ModelConfig,
    layer: usize,
    h: Var,
    x: Var,
    graph: &NeighborGraph,
    frozen: Option<&[bool]>,
) -> Result<NeighborhoodOutput, ModelError> {
    let prefix = format!("nbr.{layer}");
    let n = tape.value(h).rows();
    let messages = neighbor_messages(tape, params, &prefix, cfg.d, h, x, graph)?;

    let coords = match &messages {
        None => x,
        Some(msg) => {
            let p = |s: &str| params.get(&format!("{prefix}.{s}"));
            let hidden = linear(tape, msg.weighted, p("coord.w1")?, p("coord.b1")?)?;
            let hidden = tape.silu(hidden)?;
            let scalar = linear(tape, hidden, p("coord.w2")?, p("coord.b2")?)?;
            let push = tape.mul_col(msg.diff, scalar)?;
            let mut delta = tape.segment_sum(push, &msg.src, n)?;
            if let Some(frozen) = frozen {
                let keep: Vec<f64> = frozen.iter().map(|&f| if f { 0.0 } else { 1.0 }).collect();
                let keep = tape.constant(Tensor::from_parts(vec![n, 1], keep));
                delta = tape.mul_col(delta, keep)?;
            }
            tape.add(x, delta)?
        }
    };

    let g = aggregate(tape, messages.as_ref(), n, cfg.d)?;
    let mut features = gated_update(tape, params, &prefix, h, g)?;

    // Mutation-test hook: a checkpoint carrying this tensor feeds absolute
    // coordinates into the features and must fail the equivariance suite.
    let probe = format!("{prefix}.abs_coord_probe");
    if params.has(&probe) {
        let leak = tape.matmul_t(x, params.get(&probe)?)?;
        features = tape.add(features, leak)?;
    }

    Ok(NeighborhoodOutput {
        features,
        coords,
        edge_weights: messages.map(|m| m.weights),
    })
}
