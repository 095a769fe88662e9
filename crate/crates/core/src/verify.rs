//! Property suites run against a set of weights: rigid-motion equivariance
//! of the enzyme stack and binding head, and a finite-difference audit of
//! the joint loss gradient.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alphabet::ALPHABET_SIZE;
use crate::ec::{EcTag, EcTree};
use crate::geometry::{init_coordinates, random_rigid_with, Coordinates, Point, RigidTransform};
use crate::gradcheck::{central_difference, FD_STEP};
use crate::model::{
    binding_logits, binding_probs, forward_nael_stack, substrate_forward, EnzymeInput, ModelConfig, ModelError,
    ParameterStore, SubstrateRecord,
};
use crate::numerics::{Tape, Tensor};
use crate::synth::random_substrate;
use crate::training::{example_terms, total_loss, Phase, TrainingError};

pub const EQUIVARIANCE_TOLERANCE: f64 = 1e-9;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;
/// Gradient entries smaller than this are compared in absolute terms
/// (relative error denominator never drops below it).
pub const GRADIENT_FLOOR: f64 = 1e-3;

/// Worst deviation seen for one property.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyCheck {
    pub property: &'static str,
    pub max_deviation: f64,
    pub tolerance: f64,
    /// Where the worst deviation occurred.
    pub worst: String,
}

impl PropertyCheck {
    fn new(property: &'static str, tolerance: f64) -> Self {
        Self {
            property,
            max_deviation: 0.0,
            tolerance,
            worst: String::new(),
        }
    }

    fn observe(&mut self, deviation: f64, at: impl FnOnce() -> String) {
        // NaN must count as a breach.
        if !(deviation <= self.max_deviation) {
            self.max_deviation = deviation;
            self.worst = at();
        }
    }

    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub cases: usize,
    pub checks: Vec<PropertyCheck>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(PropertyCheck::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyCheck> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_point<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Point {
    [(); 3].map(|_| rng.random_range(-scale..scale))
}

fn random_tag<R: Rng + ?Sized>(tags: &EcTree, rng: &mut R) -> Result<EcTag, ModelError> {
    let labels = tags.labels();
    if labels.is_empty() {
        return Err(ModelError::Config {
            key: "tag_vocab",
            why: "tag tree has no labels".into(),
        });
    }
    Ok(tags.tag(&labels[rng.random_range(0..labels.len())])?)
}

/// Random conditioning of length `n` with a random motif (possibly empty).
fn random_input<R: Rng + ?Sized>(n: usize, tags: &EcTree, rng: &mut R) -> Result<EnzymeInput, ModelError> {
    let motif = rng.random_range(0..=n.min(6));
    let mut sites = index::sample(rng, n, motif).into_vec();
    sites.sort_unstable();
    let mut residues = vec![None; n];
    let mut given_coords = Vec::with_capacity(motif);
    for &i in &sites {
        residues[i] = Some(rng.random_range(0..ALPHABET_SIZE));
        given_coords.push((i, random_point(rng, 10.0)));
    }
    Ok(EnzymeInput {
        residues,
        given_coords,
        tag: random_tag(tags, rng)?,
    })
}

struct Snapshot {
    logits: Tensor,
    coords: Tensor,
    features: Tensor,
    binding: Tensor,
}

fn run(
    params: &ParameterStore,
    cfg: &ModelConfig,
    input: &EnzymeInput,
    initial: &Coordinates,
    substrate: &SubstrateRecord,
) -> Result<Snapshot, ModelError> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let out = forward_nael_stack(&mut tape, &p, cfg, input, initial)?;
    let hs = substrate_forward(&mut tape, &p, cfg, substrate)?;
    let probs = binding_probs(&mut tape, &p, out.features, hs)?;
    Ok(Snapshot {
        logits: tape.value(out.logits).clone(),
        coords: tape.value(out.coords).clone(),
        features: tape.value(out.features).clone(),
        binding: tape.value(probs).clone(),
    })
}

fn moved(sub: &SubstrateRecord, g: &RigidTransform) -> Result<SubstrateRecord, ModelError> {
    SubstrateRecord::new(sub.id.clone(), sub.atoms.clone(), sub.coords.transformed(g))
}

/// Apply independent random rigid motions to the initial coordinates and
/// to a random substrate, and compare against the untransformed run:
/// features, logits and binding probabilities must not move; output
/// coordinates must move with the enzyme's transform. Sequence lengths
/// alternate between 5 and 50 (capped at `max_len`).
pub fn equivariance_suite(
    params: &ParameterStore,
    cfg: &ModelConfig,
    tags: &EcTree,
    cases: usize,
    seed: u64,
) -> Result<SuiteReport, ModelError> {
    params.check_against(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = PropertyCheck::new("feature invariance", EQUIVARIANCE_TOLERANCE);
    let mut logits = PropertyCheck::new("logit invariance", EQUIVARIANCE_TOLERANCE);
    let mut coords = PropertyCheck::new("coordinate equivariance", EQUIVARIANCE_TOLERANCE);
    let mut binding = PropertyCheck::new("binding invariance", EQUIVARIANCE_TOLERANCE);
    for case in 0..cases {
        let n = [5, 50][case % 2].min(cfg.max_len);
        let input = random_input(n, tags, &mut rng)?;
        let initial = init_coordinates(&input.given_coords, n, rng.random())?;
        let atoms = rng.random_range(1..=8);
        let substrate = random_substrate("probe", atoms, &mut rng);
        let g = random_rigid_with(&mut rng);
        let gs = random_rigid_with(&mut rng);

        let base = run(params, cfg, &input, &initial, &substrate)?;
        let mut input_g = input.clone();
        for (_, p) in input_g.given_coords.iter_mut() {
            *p = g.apply(p);
        }
        let turned = run(params, cfg, &input_g, &initial.transformed(&g), &moved(&substrate, &gs)?)?;

        let at = || format!("case {case} (N = {n})");
        features.observe(max_abs_diff(base.features.data(), turned.features.data()), at);
        logits.observe(max_abs_diff(base.logits.data(), turned.logits.data()), at);
        binding.observe(max_abs_diff(base.binding.data(), turned.binding.data()), at);

        let expected = Coordinates::from_tensor(&base.coords)?.transformed(&g).to_tensor();
        let scale = base.coords.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        coords.observe(max_abs_diff(expected.data(), turned.coords.data()) / scale, at);
    }
    Ok(SuiteReport {
        suite: "equivariance",
        cases,
        checks: vec![features, coords, logits, binding],
    })
}

/// A small fixed phase-two example: sequence of length 6 with a two-residue
/// motif, random targets and a random substrate.
struct AuditExample {
    input: EnzymeInput,
    initial: Coordinates,
    targets: Vec<usize>,
    target_coords: Coordinates,
    substrate: SubstrateRecord,
    label: bool,
}

fn audit_example<R: Rng + ?Sized>(cfg: &ModelConfig, tags: &EcTree, rng: &mut R) -> Result<AuditExample, ModelError> {
    let n = 6.min(cfg.max_len);
    let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..ALPHABET_SIZE)).collect();
    let motif: Vec<usize> = (0..n).filter(|i| i % 3 == 1).collect();
    let input = EnzymeInput {
        residues: (0..n).map(|i| motif.contains(&i).then_some(targets[i])).collect(),
        given_coords: motif.iter().map(|&i| (i, random_point(rng, 4.0))).collect(),
        tag: random_tag(tags, rng)?,
    };
    let initial = init_coordinates(&input.given_coords, n, rng.random())?;
    // Targets near the start keep the loss, and so finite-difference
    // round-off, small.
    let target_coords = Coordinates::new(
        initial
            .points()
            .iter()
            .map(|p| {
                let e = random_point(rng, 1.0);
                [p[0] + e[0], p[1] + e[1], p[2] + e[2]]
            })
            .collect(),
    )?;
    Ok(AuditExample {
        input,
        initial,
        targets,
        target_coords,
        substrate: random_substrate("probe", 4, rng),
        label: rng.random_bool(0.5),
    })
}

fn audit_loss(
    tape: &mut Tape,
    params: &ParameterStore,
    cfg: &ModelConfig,
    ex: &AuditExample,
) -> Result<(crate::numerics::Var, crate::model::Bindings), TrainingError> {
    let p = params.bind(tape, true);
    let out = forward_nael_stack(tape, &p, cfg, &ex.input, &ex.initial)?;
    let hs = substrate_forward(tape, &p, cfg, &ex.substrate)?;
    let logits = binding_logits(tape, &p, out.features, hs)?;
    let free: Vec<bool> = ex.input.residues.iter().map(Option::is_none).collect();
    let terms = example_terms(
        tape,
        out.logits,
        &ex.targets,
        out.coords,
        &ex.target_coords,
        &free,
        Some((logits, ex.label)),
        cfg.coord_weight,
    )?;
    let (loss, _) = total_loss(tape, &[terms], Phase::Two)?;
    Ok((loss, p))
}

fn loss_value(params: &ParameterStore, cfg: &ModelConfig, ex: &AuditExample) -> Result<f64, TrainingError> {
    let mut tape = Tape::new();
    let (loss, _) = audit_loss(&mut tape, params, cfg, ex)?;
    Ok(tape.value(loss).data()[0])
}

/// Compare the analytic gradient of the phase-two joint loss with central
/// differences at `per_tensor` random coordinates of every parameter tensor
/// (all coordinates of tensors smaller than that). Relative error is
/// `|a − n| / max(|a|, |n|, GRADIENT_FLOOR)`.
pub fn gradient_suite(
    params: &ParameterStore,
    cfg: &ModelConfig,
    tags: &EcTree,
    per_tensor: usize,
    seed: u64,
) -> Result<SuiteReport, TrainingError> {
    params.check_against(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ex = audit_example(cfg, tags, &mut rng)?;

    let mut tape = Tape::new();
    let (loss, bound) = audit_loss(&mut tape, params, cfg, &ex)?;
    tape.backward(loss)?;
    let grads = bound.gradients(&tape, params);

    let mut check = PropertyCheck::new("loss gradient", GRADIENT_TOLERANCE);
    let mut sampled = 0;
    let mut probe = params.clone();
    for (name, tensor) in params.iter() {
        let len = tensor.data().len();
        let picks = index::sample(&mut rng, len, per_tensor.min(len)).into_vec();
        let analytic = grads.get(name)?;
        for i in picks {
            let mut failure = None;
            let mut f = |x: &[f64]| {
                probe.get_mut(name).expect("same names").data_mut()[i] = x[0];
                match loss_value(&probe, cfg, &ex) {
                    Ok(v) => v,
                    Err(e) => {
                        failure = Some(e);
                        f64::NAN
                    }
                }
            };
            let numeric = central_difference(&mut f, &[tensor.data()[i]], 0, FD_STEP);
            if let Some(e) = failure {
                return Err(e);
            }
            probe.get_mut(name)?.data_mut()[i] = tensor.data()[i];
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
            check.observe(err, || format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}"));
            sampled += 1;
        }
    }
    Ok(SuiteReport {
        suite: "gradients",
        cases: sampled,
        checks: vec![check],
    })
}
