use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{example_terms, total_loss, LossBreakdown, LossTerms, Phase};
use super::{Adam, TrainSchedule, TrainingError};
use crate::data::{sample_negative, Example, Pairing};
use crate::model::{
    binding_logits, forward_with_seed, greedy_decode, substrate_forward, Bindings, EnzymeInput,
    ModelConfig, ParameterStore, SubstrateRecord,
};
use crate::numerics::{NumericsError, Tape};

const STREAM_COORDS: u64 = 1;
const STREAM_NEGATIVES: u64 = 2;
const STREAM_MLM: u64 = 3;
const STREAM_BATCHES: u64 = 4;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for one `(stream, a, b)` draw under `seed`.
pub fn step_seed(seed: u64, stream: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(seed ^ stream.wrapping_mul(0x2545_f491_4f6c_dd1d)) ^ a) ^ b)
}

/// Training examples and the substrate pool their pairings index into.
#[derive(Clone, Copy)]
pub struct TrainingSet<'a> {
    pub examples: &'a [Example],
    pub substrates: &'a [SubstrateRecord],
}

/// Everything needed to continue training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParameterStore,
    pub adam: Adam,
    /// Completed two-phase steps.
    pub step: u64,
    /// Completed pretraining steps.
    pub mlm_step: u64,
}

impl TrainState {
    pub fn fresh(cfg: &ModelConfig, schedule: &TrainSchedule) -> Result<Self, TrainingError> {
        let params = ParameterStore::init(cfg, schedule.seed)?;
        let mut adam = Adam::new(&params, schedule.learning_rate);
        adam.beta1 = schedule.adam_beta1;
        adam.beta2 = schedule.adam_beta2;
        Ok(Self {
            params,
            adam,
            step: 0,
            mlm_step: 0,
        })
    }
}

/// One loss-log row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub step: u64,
    pub loss: LossBreakdown,
}

impl LogEntry {
    /// `step <tab> seq_nll <tab> coord_l2 <tab> binding_ce <tab> total`, with
    /// round-trip float formatting.
    pub fn to_line(&self) -> String {
        let l = &self.loss;
        format!("{}\t{}\t{}\t{}\t{}", self.step, l.seq_nll, l.coord_l2, l.binding_ce, l.total)
    }

    pub fn parse(line: &str) -> Result<Self, TrainingError> {
        let f: Vec<&str> = line.trim_end().split('\t').collect();
        let bad = || TrainingError::Log(format!("malformed loss-log line {line:?}"));
        if f.len() != 5 {
            return Err(bad());
        }
        let v = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        Ok(Self {
            step: f[0].parse().map_err(|_| bad())?,
            loss: LossBreakdown {
                seq_nll: v(1)?,
                coord_l2: v(2)?,
                binding_ce: v(3)?,
                total: v(4)?,
            },
        })
    }
}

/// Seeded shuffle of `lengths`, then greedy packing in that order into
/// batches of at most `budget` residues.
pub fn epoch_batches(lengths: &[usize], budget: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(step_seed(seed, STREAM_BATCHES, epoch, 0)));
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut used = 0;
    for i in order {
        if !current.is_empty() && used + lengths[i] > budget {
            out.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += lengths[i];
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Model input for an example: motif residues and coordinates given,
/// everything else masked.
pub fn example_input(ex: &Example) -> EnzymeInput {
    masked_input(ex, &ex.record.motif_mask())
}

fn masked_input(ex: &Example, known: &[bool]) -> EnzymeInput {
    let r = &ex.record;
    EnzymeInput {
        residues: (0..r.len()).map(|i| known[i].then_some(r.sequence[i])).collect(),
        given_coords: (0..r.len())
            .filter(|&i| known[i])
            .map(|i| (i, r.coords.points()[i]))
            .collect(),
        tag: ex.tag,
    }
}

#[allow(clippy::too_many_arguments)]
fn forward_terms(
    tape: &mut Tape,
    p: &Bindings,
    cfg: &ModelConfig,
    ex: &Example,
    known: &[bool],
    pairing: Option<Pairing>,
    substrates: &[SubstrateRecord],
    init_seed: u64,
    phase: Phase,
) -> Result<LossTerms, TrainingError> {
    let input = masked_input(ex, known);
    let (out, _) = forward_with_seed(tape, p, cfg, &input, init_seed)?;
    let binding = match (phase, pairing) {
        (Phase::Two, Some(pair)) => {
            let hs = substrate_forward(tape, p, cfg, &substrates[pair.substrate])?;
            Some((binding_logits(tape, p, out.features, hs)?, pair.label))
        }
        _ => None,
    };
    let free: Vec<bool> = known.iter().map(|k| !k).collect();
    example_terms(
        tape,
        out.logits,
        &ex.record.sequence,
        out.coords,
        &ex.record.coords,
        &free,
        binding,
        cfg.coord_weight,
    )
}

fn is_divergence(e: &TrainingError) -> bool {
    matches!(
        e,
        TrainingError::Numerics(NumericsError::NonFinite { .. })
            | TrainingError::Model(crate::model::ModelError::Numerics(NumericsError::NonFinite { .. }))
    )
}

/// Forward, backward and one Adam update. Parameters are left untouched
/// when the loss or any gradient is not finite.
fn update<F>(state: &mut TrainState, step: u64, build: F) -> Result<LossBreakdown, TrainingError>
where
    F: FnOnce(&mut Tape, &Bindings) -> Result<(crate::numerics::Var, LossBreakdown), TrainingError>,
{
    let mut tape = Tape::new();
    let p = state.params.bind(&mut tape, true);
    let (loss, breakdown) = match build(&mut tape, &p) {
        Ok(v) => v,
        Err(e) if is_divergence(&e) => return Err(TrainingError::Diverged { step }),
        Err(e) => return Err(e),
    };
    if !breakdown.total.is_finite() {
        return Err(TrainingError::Diverged { step });
    }
    tape.backward(loss)?;
    let grads = p.gradients(&tape, &state.params);
    if grads.iter().any(|(_, g)| !g.all_finite()) {
        return Err(TrainingError::Diverged { step });
    }
    state.adam.step(&mut state.params, &grads);
    Ok(breakdown)
}

/// Two-phase training from `state.step` to the end of the schedule. After
/// every update `on_step` receives the log row and the new state. On
/// divergence, returns [`TrainingError::Diverged`] with `state` holding the
/// last finite parameters.
///
/// Batches, negatives and coordinate initialisations are pure functions of
/// `(seed, step)`, so resuming from a saved state reproduces an
/// uninterrupted run.
pub fn train(
    data: TrainingSet<'_>,
    cfg: &ModelConfig,
    schedule: &TrainSchedule,
    state: &mut TrainState,
    on_step: &mut dyn FnMut(&LogEntry, &TrainState) -> Result<(), TrainingError>,
) -> Result<(), TrainingError> {
    if data.examples.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    cfg.validate()?;
    schedule.validate()?;
    let lengths: Vec<usize> = data.examples.iter().map(|e| e.record.len()).collect();

    // Walk epochs up to the resume point.
    let (mut epoch, mut plan, mut offset) = (0u64, epoch_batches(&lengths, schedule.batch_residues, schedule.seed, 0), 0u64);
    while offset + plan.len() as u64 <= state.step {
        offset += plan.len() as u64;
        epoch += 1;
        plan = epoch_batches(&lengths, schedule.batch_residues, schedule.seed, epoch);
    }

    while state.step < schedule.total_steps() {
        let step = state.step;
        if step - offset >= plan.len() as u64 {
            offset += plan.len() as u64;
            epoch += 1;
            plan = epoch_batches(&lengths, schedule.batch_residues, schedule.seed, epoch);
        }
        let batch = &plan[(step - offset) as usize];
        let phase = schedule.phase(step);
        let breakdown = update(state, step, |tape, p| {
            let mut terms = Vec::with_capacity(batch.len());
            for &j in batch {
                let ex = &data.examples[j];
                let pairing = epoch_pairing(ex, j, data.substrates.len(), schedule.seed, epoch);
                let known = ex.record.motif_mask();
                let seed = step_seed(schedule.seed, STREAM_COORDS, step, j as u64);
                terms.push(forward_terms(tape, p, cfg, ex, &known, pairing, data.substrates, seed, phase)?);
            }
            total_loss(tape, &terms, phase)
        })?;
        state.step += 1;
        on_step(&LogEntry { step, loss: breakdown }, state)?;
    }
    Ok(())
}

/// Known binders are kept; otherwise a fresh negative is drawn per epoch.
fn epoch_pairing(ex: &Example, j: usize, pool: usize, seed: u64, epoch: u64) -> Option<Pairing> {
    if let Some(&substrate) = ex.positives.first() {
        return Some(Pairing { substrate, label: true });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed(seed, STREAM_NEGATIVES, epoch, j as u64));
    sample_negative(pool, &ex.positives, &mut rng).map(|substrate| Pairing {
        substrate,
        label: false,
    })
}

/// Positions to mask: `round(fraction · n)` of them drawn uniformly without
/// replacement from `eligible`, capped at the number eligible.
pub fn mlm_mask(eligible: &[bool], fraction: f64, seed: u64) -> Vec<bool> {
    let pool: Vec<usize> = (0..eligible.len()).filter(|&i| eligible[i]).collect();
    let want = ((fraction * eligible.len() as f64).round() as usize).min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; eligible.len()];
    for k in index::sample(&mut rng, pool.len(), want) {
        mask[pool[k]] = true;
    }
    mask
}

/// Masked-residue pretraining from `state.mlm_step` to
/// `schedule.mlm_pretrain_steps`. Each step masks a fresh random subset of
/// every batch member (residue to the mask embedding, coordinate to the
/// spherical initialisation) and trains on sequence and coordinate terms
/// over the masked positions only.
pub fn mlm_pretrain(
    data: TrainingSet<'_>,
    cfg: &ModelConfig,
    schedule: &TrainSchedule,
    state: &mut TrainState,
    on_step: &mut dyn FnMut(&LogEntry, &TrainState) -> Result<(), TrainingError>,
) -> Result<(), TrainingError> {
    if schedule.mlm_pretrain_steps == 0 {
        return Ok(());
    }
    if data.examples.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    cfg.validate()?;
    schedule.validate()?;
    let lengths: Vec<usize> = data.examples.iter().map(|e| e.record.len()).collect();
    let mlm_seed = step_seed(schedule.seed, STREAM_MLM, 0, 0);
    let mut epoch = 0;
    let mut plan = epoch_batches(&lengths, schedule.batch_residues, mlm_seed, 0);
    let mut offset = 0u64;
    while offset + plan.len() as u64 <= state.mlm_step {
        offset += plan.len() as u64;
        epoch += 1;
        plan = epoch_batches(&lengths, schedule.batch_residues, mlm_seed, epoch);
    }
    while state.mlm_step < schedule.mlm_pretrain_steps {
        let step = state.mlm_step;
        if step - offset >= plan.len() as u64 {
            offset += plan.len() as u64;
            epoch += 1;
            plan = epoch_batches(&lengths, schedule.batch_residues, mlm_seed, epoch);
        }
        let batch = &plan[(step - offset) as usize];
        let breakdown = update(state, step, |tape, p| {
            let mut terms = Vec::with_capacity(batch.len());
            for &j in batch {
                let ex = &data.examples[j];
                let eligible: Vec<bool> = if schedule.mlm_respect_motif {
                    ex.record.motif_mask().iter().map(|m| !m).collect()
                } else {
                    vec![true; ex.record.len()]
                };
                let masked = mlm_mask(&eligible, schedule.mlm_mask_fraction, step_seed(mlm_seed, STREAM_MLM, step, j as u64));
                let known: Vec<bool> = masked.iter().map(|m| !m).collect();
                let seed = step_seed(mlm_seed, STREAM_COORDS, step, j as u64);
                terms.push(forward_terms(tape, p, cfg, ex, &known, None, data.substrates, seed, Phase::One)?);
            }
            total_loss(tape, &terms, Phase::One)
        })?;
        state.mlm_step += 1;
        on_step(&LogEntry { step, loss: breakdown }, state)?;
    }
    Ok(())
}

/// Per-residue sequence loss and greedy recovery over free positions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub free_residues: usize,
    pub seq_nll: f64,
    pub recovered: usize,
}

impl Evaluation {
    pub fn nll_per_residue(&self) -> f64 {
        if self.free_residues == 0 {
            0.0
        } else {
            self.seq_nll / self.free_residues as f64
        }
    }

    pub fn recovery(&self) -> f64 {
        if self.free_residues == 0 {
            1.0
        } else {
            self.recovered as f64 / self.free_residues as f64
        }
    }
}

/// Evaluate with one coordinate initialisation per example drawn from `seed`.
pub fn evaluate(
    examples: &[Example],
    params: &ParameterStore,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<Evaluation, TrainingError> {
    let mut eval = Evaluation::default();
    for (j, ex) in examples.iter().enumerate() {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let input = example_input(ex);
        let (out, _) = forward_with_seed(&mut tape, &p, cfg, &input, step_seed(seed, STREAM_COORDS, u64::MAX, j as u64))?;
        let logp = tape.log_softmax(out.logits)?;
        let logp = tape.value(logp);
        let decoded = greedy_decode(tape.value(out.logits), &input.residues);
        for (i, r) in input.residues.iter().enumerate() {
            if r.is_none() {
                let target = ex.record.sequence[i];
                eval.free_residues += 1;
                eval.seq_nll -= logp.get(i, target);
                eval.recovered += usize::from(decoded[i] == target);
            }
        }
    }
    Ok(eval)
}
