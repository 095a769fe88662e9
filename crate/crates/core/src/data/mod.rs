//! Corpus ingestion: structures, substrates, pairings, identity clustering,
//! leak-free splits and dataset assembly.

mod assemble;
mod corpus;
mod identity;
mod motif;
mod structure;
mod substrates;

pub use assemble::{assemble_dataset, sample_negative, AssembledDataset, Example, Pairing};
pub use corpus::{
    list_files, load_corpus, load_family, CorpusSpec, LoadedCorpus, LoadedFamily, ALIGNMENT_EXTENSIONS,
    STRUCTURE_EXTENSIONS,
};
pub use identity::{
    align_identity, cluster_by_identity, split_clusters, Split, SplitEntry, SplitManifest,
    IDENTITY_THRESHOLD,
};
pub use motif::{parse_motif, write_motif, MotifSpec};
pub use structure::{parse_ca_coordinates, parse_pdb, parse_tsv, write_tsv, Structure};
pub use substrates::{parse_pairings, parse_substrates, write_pairings, write_substrates, PairingRow};

use crate::alphabet;
use crate::ec::{EcError, EcLabel};
use crate::geometry::{Coordinates, GeometryError};
use crate::model::ModelError;
use crate::sites::SiteError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context} line {line}: {why}")]
    Parse {
        context: String,
        line: usize,
        why: String,
    },
    #[error("{0}: no Cα atoms found")]
    EmptyStructure(String),
    #[error("record `{id}`: {why}")]
    Invalid { id: String, why: String },
    #[error("test record `{0}` has no substrate")]
    TestWithoutSubstrate(String),
    #[error("record `{0}` has no site annotation")]
    MissingSites(String),
    #[error("record `{0}` is not in the split manifest")]
    MissingSplit(String),
    #[error("unknown substrate `{0}`")]
    UnknownSubstrate(String),
    #[error("duplicate id `{0}`")]
    Duplicate(String),
    #[error(transparent)]
    Ec(#[from] EcError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sites(#[from] SiteError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl DataError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// One enzyme with its conditioning and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct EnzymeRecord {
    pub id: String,
    /// Residue indices into the 20-letter alphabet.
    pub sequence: Vec<usize>,
    pub coords: Coordinates,
    /// Functionally important positions, strictly increasing.
    pub sites: Vec<usize>,
    pub ec: EcLabel,
    pub substrate_id: Option<String>,
    pub binding_label: Option<bool>,
}

impl EnzymeRecord {
    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |why: String| {
            Err(DataError::Invalid {
                id: self.id.clone(),
                why,
            })
        };
        if self.sequence.is_empty() {
            return bad("empty sequence".into());
        }
        if self.sequence.len() != self.coords.len() {
            return bad(format!(
                "{} residues but {} coordinates",
                self.sequence.len(),
                self.coords.len()
            ));
        }
        if let Some(&a) = self.sequence.iter().find(|&&a| a >= alphabet::ALPHABET_SIZE) {
            return bad(format!("residue index {a} outside the alphabet"));
        }
        if self.sites.windows(2).any(|w| w[0] >= w[1]) {
            return bad("site indices must be strictly increasing".into());
        }
        if let Some(&i) = self.sites.iter().find(|&&i| i >= self.sequence.len()) {
            return bad(format!("site index {i} outside length {}", self.sequence.len()));
        }
        Ok(())
    }

    /// `true` at every site position.
    pub fn motif_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for &i in &self.sites {
            mask[i] = true;
        }
        mask
    }

    pub fn sequence_string(&self) -> String {
        alphabet::decode(&self.sequence)
    }
}
