//! Small synthetic corpora: helical Cα traces, family alignments with
//! planted conserved columns, substrates and pairings.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alphabet::{self, ALPHABET_SIZE};
use crate::data::{write_pairings, write_substrates, write_tsv, DataError, PairingRow, Structure};
use crate::ec::EcLabel;
use crate::geometry::{random_rigid_with, Coordinates, Point};
use crate::model::{SubstrateRecord, SUBSTRATE_FEATURES};

pub struct ToyFamily {
    pub label: EcLabel,
    /// Aligned FASTA text; the first row is the structured member.
    pub alignment: String,
}

pub struct ToyCorpus {
    pub structures: Vec<Structure>,
    pub families: Vec<ToyFamily>,
    pub substrates: Vec<SubstrateRecord>,
    pub pairings: Vec<PairingRow>,
}

const TOY_LABELS: [&str; 8] = [
    "1.1.1.1", "1.1.1.2", "1.2.1.1", "2.1.1.1", "2.7.1.1", "3.1.1.1", "3.1.4.1", "4.2.1.1",
];

/// Ideal α-helix Cα positions (radius 2.3 Å, 100° per residue, 1.5 Å rise)
/// placed in a random frame with small noise.
pub fn helix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Coordinates {
    let frame = random_rigid_with(rng);
    let points: Vec<Point> = (0..n)
        .map(|i| {
            let t = (i as f64) * 100f64.to_radians();
            let p = [
                2.3 * t.cos() + rng.random_range(-0.2..0.2),
                2.3 * t.sin() + rng.random_range(-0.2..0.2),
                1.5 * i as f64 + rng.random_range(-0.2..0.2),
            ];
            frame.apply(&p)
        })
        .collect();
    Coordinates::new(points).expect("finite")
}

fn other_letter<R: Rng + ?Sized>(not: usize, rng: &mut R) -> usize {
    let k = rng.random_range(0..ALPHABET_SIZE - 1);
    if k >= not {
        k + 1
    } else {
        k
    }
}

/// Family alignment of `rows` sequences around `seq`. Columns in `planted`
/// keep the same residue in every row; other columns are substituted in
/// every homolog (occasionally deleted). A few insert columns, gapped in
/// the first row, are spliced in.
fn family_alignment<R: Rng + ?Sized>(id: &str, seq: &[usize], planted: &[usize], rows: usize, rng: &mut R) -> String {
    let n = seq.len();
    let inserts: Vec<usize> = index::sample(rng, n + 1, 3).into_vec();
    let mut table: Vec<Vec<char>> = vec![Vec::new(); rows];
    for pos in 0..=n {
        if inserts.contains(&pos) {
            table[0].push('-');
            for row in table.iter_mut().skip(1) {
                row.push(if rng.random_bool(0.5) {
                    alphabet::letter(rng.random_range(0..ALPHABET_SIZE))
                } else {
                    '-'
                });
            }
        }
        if pos == n {
            break;
        }
        table[0].push(alphabet::letter(seq[pos]));
        for row in table.iter_mut().skip(1) {
            let c = if planted.contains(&pos) {
                alphabet::letter(seq[pos])
            } else if rng.random_bool(0.1) {
                '-'
            } else {
                alphabet::letter(other_letter(seq[pos], rng))
            };
            row.push(c);
        }
    }
    let mut out = String::new();
    for (r, row) in table.iter().enumerate() {
        let name = if r == 0 { id.to_string() } else { format!("{id}_h{r}") };
        let _ = writeln!(out, ">{name}\n{}", row.iter().collect::<String>());
    }
    out
}

pub fn random_substrate<R: Rng + ?Sized>(id: &str, atoms: usize, rng: &mut R) -> SubstrateRecord {
    let feats = (0..atoms)
        .map(|_| {
            let mut f = [0.0; SUBSTRATE_FEATURES];
            f[0] = [6.0, 7.0, 8.0, 16.0][rng.random_range(0..4)];
            f[1] = [-1.0, 0.0, 0.0, 1.0][rng.random_range(0..4)];
            f[2] = f64::from(u8::from(rng.random_bool(0.3)));
            f[3] = rng.random_range(1..4) as f64;
            f[4] = rng.random_range(1..4) as f64;
            f
        })
        .collect();
    let coords = Coordinates::new(
        (0..atoms)
            .map(|_| [(); 3].map(|_| rng.random_range(-3.0..3.0)))
            .collect(),
    )
    .expect("finite");
    SubstrateRecord::new(id, feats, coords).expect("consistent substrate")
}

/// Eight single-member families of length 24..=40, each with its own
/// fourth-level tag and a ten-row alignment carrying six planted conserved
/// columns; four substrates; six enzymes with a known binder.
pub fn toy_corpus(seed: u64) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut structures = Vec::new();
    let mut families = Vec::new();
    for (k, label) in TOY_LABELS.iter().enumerate() {
        let id = format!("enz{:02}", k + 1);
        let n = rng.random_range(24..=40);
        let seq: Vec<usize> = (0..n).map(|_| rng.random_range(0..ALPHABET_SIZE)).collect();
        let mut planted = index::sample(&mut rng, n, 6).into_vec();
        planted.sort_unstable();
        let alignment = family_alignment(&id, &seq, &planted, 10, &mut rng);
        structures.push(Structure {
            id,
            sequence: seq,
            coords: helix(n, &mut rng),
        });
        families.push(ToyFamily {
            label: label.parse().expect("static label"),
            alignment,
        });
    }
    let substrates: Vec<SubstrateRecord> = (0..4)
        .map(|s| {
            let atoms = rng.random_range(3..=8);
            random_substrate(&format!("sub{}", s + 1), atoms, &mut rng)
        })
        .collect();
    let pairings = (0..6)
        .map(|k| PairingRow {
            enzyme_id: format!("enz{:02}", k + 1),
            substrate_id: format!("sub{}", k % 4 + 1),
            label: true,
        })
        .collect();
    ToyCorpus {
        structures,
        families,
        substrates,
        pairings,
    }
}

impl ToyCorpus {
    /// Lay the corpus out as `structures/<id>.tsv`, `alignments/<tag>.fasta`,
    /// `substrates.tsv` and `pairs.tsv` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), DataError> {
        let write = |path: &Path, text: &str| std::fs::write(path, text).map_err(|e| DataError::io(path, e));
        let mkdir = |path: &Path| std::fs::create_dir_all(path).map_err(|e| DataError::io(path, e));
        mkdir(&dir.join("structures"))?;
        mkdir(&dir.join("alignments"))?;
        for s in &self.structures {
            write(&dir.join("structures").join(format!("{}.tsv", s.id)), &write_tsv(std::slice::from_ref(s)))?;
        }
        for f in &self.families {
            write(&dir.join("alignments").join(format!("{}.fasta", f.label)), &f.alignment)?;
        }
        write(&dir.join("substrates.tsv"), &write_substrates(&self.substrates))?;
        write(&dir.join("pairs.tsv"), &write_pairings(&self.pairings))?;
        Ok(())
    }
}
