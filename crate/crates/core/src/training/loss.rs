use crate::geometry::Coordinates;
use crate::numerics::{Tape, Tensor, Var};

use super::TrainingError;

/// Training phase: the binding term only exists in phase two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    One,
    Two,
}

/// Logged values of the three terms and their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub seq_nll: f64,
    pub coord_l2: f64,
    pub binding_ce: f64,
    pub total: f64,
}

/// Tape handles of one example's loss terms, each of shape `[1]`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub seq: Var,
    pub coord: Var,
    pub binding: Option<Var>,
}

fn zero(tape: &mut Tape) -> Var {
    tape.constant(Tensor::zeros(&[1]))
}

/// Per-example terms:
/// `-Σ log P(s_i)` and `w Σ ‖x_i − x̂_i‖²` over free positions, and
/// `-log P(y)` from 1×2 binding logits when given.
#[allow(clippy::too_many_arguments)]
pub fn example_terms(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    coords_out: Var,
    target_coords: &Coordinates,
    free: &[bool],
    binding: Option<(Var, bool)>,
    coord_weight: f64,
) -> Result<LossTerms, TrainingError> {
    let free_rows: Vec<usize> = (0..free.len()).filter(|&i| free[i]).collect();
    let (seq, coord) = if free_rows.is_empty() {
        (zero(tape), zero(tape))
    } else {
        let logp = tape.log_softmax(logits)?;
        let picked: Vec<(usize, usize)> = free_rows.iter().map(|&i| (i, targets[i])).collect();
        let picked = tape.pick(logp, &picked)?;
        let nll = tape.sum(picked)?;
        let seq = tape.scale(nll, -1.0)?;

        let pred = tape.gather_rows(coords_out, &free_rows)?;
        let tgt: Vec<f64> = free_rows
            .iter()
            .flat_map(|&i| target_coords.points()[i])
            .collect();
        let tgt = tape.constant(Tensor::new(vec![free_rows.len(), 3], tgt)?);
        let diff = tape.sub(pred, tgt)?;
        let sq = tape.mul(diff, diff)?;
        let sq = tape.sum(sq)?;
        (seq, tape.scale(sq, coord_weight)?)
    };
    let binding = match binding {
        None => None,
        Some((logits, label)) => {
            let logp = tape.log_softmax(logits)?;
            let p = tape.pick(logp, &[(0, if label { 0 } else { 1 })])?;
            let p = tape.sum(p)?;
            Some(tape.scale(p, -1.0)?)
        }
    };
    Ok(LossTerms { seq, coord, binding })
}

fn sum_all(tape: &mut Tape, vars: &[Var]) -> Result<Var, TrainingError> {
    let mut acc = match vars.first() {
        Some(&v) => v,
        None => return Ok(zero(tape)),
    };
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// Sum each term over the batch, then `total = (seq + coord) + binding`.
/// Binding terms are ignored in phase one, so they contribute no gradient.
pub fn total_loss(tape: &mut Tape, terms: &[LossTerms], phase: Phase) -> Result<(Var, LossBreakdown), TrainingError> {
    let seq = sum_all(tape, &terms.iter().map(|t| t.seq).collect::<Vec<_>>())?;
    let coord = sum_all(tape, &terms.iter().map(|t| t.coord).collect::<Vec<_>>())?;
    let mut total = tape.add(seq, coord)?;
    let mut binding_ce = 0.0;
    if phase == Phase::Two {
        let bind: Vec<Var> = terms.iter().filter_map(|t| t.binding).collect();
        let bind = sum_all(tape, &bind)?;
        binding_ce = tape.value(bind).item();
        total = tape.add(total, bind)?;
    }
    let breakdown = LossBreakdown {
        seq_nll: tape.value(seq).item(),
        coord_l2: tape.value(coord).item(),
        binding_ce,
        total: tape.value(total).item(),
    };
    Ok((total, breakdown))
}

/// Single-example form of [`example_terms`] followed by [`total_loss`].
#[allow(clippy::too_many_arguments)]
pub fn joint_loss(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    coords_out: Var,
    target_coords: &Coordinates,
    free: &[bool],
    binding: Option<(Var, bool)>,
    coord_weight: f64,
    phase: Phase,
) -> Result<(Var, LossBreakdown), TrainingError> {
    let terms = example_terms(tape, logits, targets, coords_out, target_coords, free, binding, coord_weight)?;
    total_loss(tape, &[terms], phase)
}
