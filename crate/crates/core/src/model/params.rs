//! Named learnable tensors. Every weight in the enzyme stack, substrate
//! module and binding head lives here under a stable dotted name.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};
use crate::alphabet::ALPHABET_SIZE;
use crate::ec::EC_LEVELS;
use crate::numerics::{Tape, Tensor, Var};

/// Width of the per-atom chemical feature vector of a substrate.
pub const SUBSTRATE_FEATURES: usize = 5;

#[derive(Clone, Copy, Debug)]
enum Init {
    Normal(f64),
    Uniform(f64),
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn spec(name: impl Into<String>, shape: &[usize], init: Init) -> Spec {
    Spec {
        name: name.into(),
        shape: shape.to_vec(),
        init,
    }
}

fn fan_in(n: usize) -> Init {
    Init::Uniform(1.0 / (n as f64).sqrt())
}

/// Parameters of one message-passing block (message FFN, attention row,
/// optional coordinate FFN, gated node update).
fn block_specs(prefix: &str, d: usize, with_coords: bool) -> Vec<Spec> {
    let mut out = vec![
        spec(format!("{prefix}.msg.w1"), &[d, 2 * d + 1], fan_in(2 * d + 1)),
        spec(format!("{prefix}.msg.b1"), &[1, d], Init::Zeros),
        spec(format!("{prefix}.msg.w2"), &[d, d], fan_in(d)),
        spec(format!("{prefix}.msg.b2"), &[1, d], Init::Zeros),
        spec(format!("{prefix}.att.w"), &[1, d], fan_in(d)),
        spec(format!("{prefix}.att.b"), &[1, 1], Init::Zeros),
    ];
    if with_coords {
        // Small output scale keeps early coordinate updates near the input frame.
        let xavier = (6.0 / (d as f64 + 1.0)).sqrt();
        out.extend([
            spec(format!("{prefix}.coord.w1"), &[d, d], fan_in(d)),
            spec(format!("{prefix}.coord.b1"), &[1, d], Init::Zeros),
            spec(format!("{prefix}.coord.w2"), &[1, d], Init::Uniform(1e-3 * xavier)),
            spec(format!("{prefix}.coord.b2"), &[1, 1], Init::Zeros),
        ]);
    }
    out.extend([
        spec(format!("{prefix}.gate.w1"), &[d, d], fan_in(d)),
        spec(format!("{prefix}.gate.b1"), &[1, d], Init::Zeros),
        spec(format!("{prefix}.gate.w2"), &[d, d], fan_in(d)),
        spec(format!("{prefix}.gate.b2"), &[1, d], Init::Zeros),
    ]);
    out
}

fn all_specs(cfg: &ModelConfig) -> Vec<Spec> {
    let d = cfg.d;
    let f = cfg.ffn_mult * d;
    let emb = Init::Normal(1.0 / (d as f64).sqrt());
    let mut out = vec![
        spec("embed.aa", &[ALPHABET_SIZE, d], emb),
        spec("embed.mask", &[1, d], emb),
        spec("embed.pos", &[cfg.max_len, d], emb),
    ];
    for lvl in 0..EC_LEVELS {
        out.push(spec(format!("embed.tag.{lvl}"), &[cfg.tag_vocab[lvl], d], emb));
    }
    for a in 0..cfg.attention_layers {
        let p = format!("attn.{a}");
        for w in ["wq", "wk", "wv", "wo"] {
            out.push(spec(format!("{p}.{w}"), &[d, d], fan_in(d)));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            out.push(spec(format!("{p}.{b}"), &[1, d], Init::Zeros));
        }
        out.extend([
            spec(format!("{p}.ln1.g"), &[1, d], Init::Ones),
            spec(format!("{p}.ln1.b"), &[1, d], Init::Zeros),
            spec(format!("{p}.ffn.w1"), &[f, d], fan_in(d)),
            spec(format!("{p}.ffn.b1"), &[1, f], Init::Zeros),
            spec(format!("{p}.ffn.w2"), &[d, f], fan_in(f)),
            spec(format!("{p}.ffn.b2"), &[1, d], Init::Zeros),
            spec(format!("{p}.ln2.g"), &[1, d], Init::Ones),
            spec(format!("{p}.ln2.b"), &[1, d], Init::Zeros),
        ]);
    }
    for j in 0..cfg.neighborhood_layers() {
        out.extend(block_specs(&format!("nbr.{j}"), d, true));
    }
    out.push(spec("sub.ws", &[d, SUBSTRATE_FEATURES], fan_in(SUBSTRATE_FEATURES)));
    for l in 0..cfg.substrate_layers {
        out.extend(block_specs(&format!("sub.{l}"), d, false));
    }
    out.push(spec("bind.wb", &[2, 2 * d], fan_in(2 * d)));
    out
}

/// Named parameter tensors, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    /// Fresh random parameters for `cfg`; identical seeds give identical stores.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for s in all_specs(cfg) {
            let n: usize = s.shape.iter().product();
            let data: Vec<f64> = match s.init {
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
                Init::Uniform(bound) => (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            tensors.insert(s.name, Tensor::from_parts(s.shape, data));
        }
        Ok(Self { tensors })
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Names and shapes `cfg` requires, in definition order.
    pub fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        all_specs(cfg).into_iter().map(|s| (s.name, s.shape)).collect()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ModelError> {
        self.tensors
            .get(name)
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, ModelError> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Check that every tensor `cfg` needs is present with the right shape.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        for (name, shape) in Self::expected_shapes(cfg) {
            let t = self.get(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ParameterShape {
                    name,
                    expected: shape,
                    found: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Place every tensor on `tape`, tracked for gradients when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bindings {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bindings { vars }
    }
}

/// Tape handles for every parameter of a store.
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Copy gradients off the tape into a store shaped like `like`.
    /// Parameters that received no gradient get zeros.
    pub fn gradients(&self, tape: &Tape, like: &ParameterStore) -> ParameterStore {
        let mut out = like.zeros_like();
        for (name, t) in out.iter_mut() {
            if let Some(g) = self.vars.get(name).and_then(|&v| tape.grad(v)) {
                t.data_mut().copy_from_slice(g);
            }
        }
        out
    }
}
