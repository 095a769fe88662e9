use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::{
    assemble_dataset, cluster_by_identity, parse_ca_coordinates, parse_pairings, parse_substrates,
    split_clusters, AssembledDataset, DataError, EnzymeRecord, SplitManifest, IDENTITY_THRESHOLD,
};
use crate::alphabet;
use crate::ec::EcLabel;
use crate::sites::{mine_sites, parse_manifest, AlignedFamily, SiteAnnotation};

/// Sorted files in `dir` whose extension is one of `exts`.
pub fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>, DataError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let path = entry.map_err(|e| DataError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if path.is_file() && exts.iter().any(|x| x.eq_ignore_ascii_case(ext)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub const ALIGNMENT_EXTENSIONS: [&str; 4] = ["fasta", "fa", "aln", "afa"];
pub const STRUCTURE_EXTENSIONS: [&str; 3] = ["pdb", "tsv", "ent"];

/// One family alignment file: the file stem is the family's EC label.
pub struct LoadedFamily {
    pub path: PathBuf,
    pub label: EcLabel,
    pub family: AlignedFamily,
}

pub fn load_family(path: &Path) -> Result<LoadedFamily, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(LoadedFamily {
        path: path.to_path_buf(),
        label: stem.parse()?,
        family: AlignedFamily::from_fasta(&text)?,
    })
}

/// Inputs of dataset assembly.
#[derive(Clone, Debug)]
pub struct CorpusSpec {
    pub structures: PathBuf,
    pub alignments: PathBuf,
    pub substrates: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    /// Precomputed site manifest; mined from the alignments at `tau` if absent.
    pub sites: Option<PathBuf>,
    /// Precomputed split manifest; clustered and split if absent.
    pub splits: Option<PathBuf>,
    pub tau: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

pub struct LoadedCorpus {
    pub dataset: AssembledDataset,
    pub sites: Vec<SiteAnnotation>,
    pub splits: SplitManifest,
}

fn read(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

/// Read structures, alignments, substrates and pairings, then cluster,
/// split and assemble. Every structure must appear as a row of exactly one
/// family alignment, with its ungapped row equal to its sequence.
pub fn load_corpus(spec: &CorpusSpec) -> Result<LoadedCorpus, DataError> {
    let mut family_of: HashMap<String, (EcLabel, String)> = HashMap::new();
    let mut mined: Vec<SiteAnnotation> = Vec::new();
    for path in list_files(&spec.alignments, &ALIGNMENT_EXTENSIONS)? {
        let fam = load_family(&path)?;
        for (r, (id, _)) in fam.family.rows().iter().enumerate() {
            if family_of
                .insert(id.clone(), (fam.label.clone(), fam.family.ungapped(r)))
                .is_some()
            {
                return Err(DataError::Duplicate(id.clone()));
            }
        }
        if spec.sites.is_none() {
            mined.extend(mine_sites(&fam.family, spec.tau)?);
        }
    }
    let sites = match &spec.sites {
        Some(p) => parse_manifest(&read(p)?)?,
        None => mined,
    };

    let mut records = Vec::new();
    for path in list_files(&spec.structures, &STRUCTURE_EXTENSIONS)? {
        let s = parse_ca_coordinates(&path)?;
        let (label, row) = family_of.get(&s.id).ok_or_else(|| DataError::Invalid {
            id: s.id.clone(),
            why: "not present in any family alignment".into(),
        })?;
        if *row != alphabet::decode(&s.sequence) {
            return Err(DataError::Invalid {
                id: s.id.clone(),
                why: "structure sequence differs from its alignment row".into(),
            });
        }
        records.push(EnzymeRecord {
            id: s.id,
            sequence: s.sequence,
            coords: s.coords,
            sites: Vec::new(),
            ec: label.clone(),
            substrate_id: None,
            binding_label: None,
        });
    }

    let substrates = match &spec.substrates {
        Some(p) => parse_substrates(&p.display().to_string(), &read(p)?)?,
        None => Vec::new(),
    };
    let pairings = match &spec.pairs {
        Some(p) => parse_pairings(&read(p)?)?,
        None => Vec::new(),
    };

    let splits = match &spec.splits {
        Some(p) => SplitManifest::parse(&read(p)?)?,
        None => {
            let seqs: Vec<(String, Vec<usize>)> = records.iter().map(|r| (r.id.clone(), r.sequence.clone())).collect();
            let clusters = cluster_by_identity(&seqs, IDENTITY_THRESHOLD);
            let paired = |id: &str| pairings.iter().any(|p| p.enzyme_id == id);
            split_clusters(&clusters, &paired, spec.valid_fraction, spec.test_fraction, spec.seed)
        }
    };
    let dataset = assemble_dataset(records, &sites, substrates, &pairings, &splits, spec.seed)?;
    Ok(LoadedCorpus {
        dataset,
        sites,
        splits,
    })
}
