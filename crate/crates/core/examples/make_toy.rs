//! Regenerate the bundled toy corpus: `cargo run --example make_toy -- data/toy`.

use std::path::PathBuf;

use enzyme_core::data::{write_motif, MotifSpec};
use enzyme_core::sites::{mine_sites, AlignedFamily};
use enzyme_core::synth::toy_corpus;

/// Seed the committed corpus was generated with.
const TOY_SEED: u64 = 7;

fn main() {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "data/toy".into());
    let corpus = toy_corpus(TOY_SEED);
    if let Err(e) = corpus.write_to(&dir) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }

    // A generation request built from the first enzyme's mined sites.
    let (s, fam) = (&corpus.structures[0], &corpus.families[0]);
    let family = AlignedFamily::from_fasta(&fam.alignment).expect("toy alignment parses");
    let sites = mine_sites(&family, 0.30).expect("valid tau");
    let own = sites.iter().find(|a| a.id == s.id).expect("structured row is mined");
    let motif = MotifSpec {
        length: s.sequence.len(),
        tag: fam.label.clone(),
        sites: own
            .indices
            .iter()
            .map(|&i| (i, s.sequence[i], s.coords.points()[i]))
            .collect(),
    };
    std::fs::write(dir.join("motif.txt"), write_motif(&motif)).expect("write motif");
    println!("wrote {}", dir.display());
}
