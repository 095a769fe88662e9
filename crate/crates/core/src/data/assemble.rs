use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, EnzymeRecord, PairingRow, Split, SplitManifest};
use crate::alphabet;
use crate::ec::{EcTag, EcTree};
use crate::model::SubstrateRecord;
use crate::sites::SiteAnnotation;

/// A substrate index into the dataset pool and its binding label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pairing {
    pub substrate: usize,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub record: EnzymeRecord,
    pub tag: EcTag,
    /// Pool indices of every known binder of this enzyme.
    pub positives: Vec<usize>,
    pub pairing: Option<Pairing>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssembledDataset {
    pub tree: EcTree,
    pub substrates: Vec<SubstrateRecord>,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

/// Uniform draw from the pool minus `exclude`; `None` if nothing is left.
pub fn sample_negative<R: Rng + ?Sized>(pool: usize, exclude: &[usize], rng: &mut R) -> Option<usize> {
    let candidates: Vec<usize> = (0..pool).filter(|i| !exclude.contains(i)).collect();
    if candidates.is_empty() {
        return None;
    }
    Some(candidates[rng.random_range(0..candidates.len())])
}

/// Attach site annotations, substrates and splits to parsed records.
///
/// A record with a known binder is paired with it (label 1). A training
/// record without one gets a uniformly drawn negative (label 0) from the
/// pool minus its binders. Validation and test records must have a
/// pairing from the manifest.
pub fn assemble_dataset(
    records: Vec<EnzymeRecord>,
    sites: &[SiteAnnotation],
    substrates: Vec<SubstrateRecord>,
    pairings: &[PairingRow],
    splits: &SplitManifest,
    seed: u64,
) -> Result<AssembledDataset, DataError> {
    let site_map: HashMap<&str, &SiteAnnotation> = sites.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut pool_index: HashMap<&str, usize> = HashMap::new();
    for (i, s) in substrates.iter().enumerate() {
        if pool_index.insert(s.id.as_str(), i).is_some() {
            return Err(DataError::Duplicate(s.id.clone()));
        }
    }
    let mut pairs_of: BTreeMap<&str, Vec<Pairing>> = BTreeMap::new();
    for p in pairings {
        let substrate = *pool_index
            .get(p.substrate_id.as_str())
            .ok_or_else(|| DataError::UnknownSubstrate(p.substrate_id.clone()))?;
        pairs_of.entry(p.enzyme_id.as_str()).or_default().push(Pairing {
            substrate,
            label: p.label,
        });
    }

    let mut records = records;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(DataError::Duplicate(w[0].id.clone()));
    }
    let tree = EcTree::from_labels(records.iter().map(|r| r.ec.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = AssembledDataset {
        tree,
        substrates: Vec::new(),
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };

    for mut record in records {
        let ann = site_map
            .get(record.id.as_str())
            .ok_or_else(|| DataError::MissingSites(record.id.clone()))?;
        for (&i, &letter) in ann.indices.iter().zip(&ann.letters) {
            let actual = record.sequence.get(i).map(|&a| alphabet::letter(a));
            if actual != Some(letter) {
                return Err(DataError::Invalid {
                    id: record.id.clone(),
                    why: format!("site {i} annotated {letter} but sequence has {actual:?}"),
                });
            }
        }
        record.sites = ann.indices.clone();
        record.validate()?;

        let split = splits
            .get(&record.id)
            .ok_or_else(|| DataError::MissingSplit(record.id.clone()))?
            .split;
        let known = pairs_of.get(record.id.as_str()).cloned().unwrap_or_default();
        let mut positives: Vec<usize> = known.iter().filter(|p| p.label).map(|p| p.substrate).collect();
        positives.sort_unstable();
        positives.dedup();
        let pairing = match (positives.first(), split) {
            (Some(&substrate), _) => Some(Pairing { substrate, label: true }),
            (None, Split::Train) => {
                sample_negative(substrates.len(), &positives, &mut rng).map(|substrate| Pairing {
                    substrate,
                    label: false,
                })
            }
            (None, _) => known.first().copied(),
        };
        if split == Split::Test && pairing.is_none() {
            return Err(DataError::TestWithoutSubstrate(record.id));
        }
        record.substrate_id = pairing.map(|p| substrates[p.substrate].id.clone());
        record.binding_label = pairing.map(|p| p.label);
        let tag = out.tree.tag(&record.ec)?;
        let example = Example {
            record,
            tag,
            positives,
            pairing,
        };
        match split {
            Split::Train => out.train.push(example),
            Split::Valid => out.valid.push(example),
            Split::Test => out.test.push(example),
        }
    }
    out.substrates = substrates;
    Ok(out)
}
