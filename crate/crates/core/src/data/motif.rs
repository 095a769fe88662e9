use std::fmt::Write as _;

use super::DataError;
use crate::alphabet;
use crate::ec::{EcLabel, EcTag};
use crate::geometry::Point;
use crate::model::EnzymeInput;

/// Generation request: target length, family tag and the fixed motif.
#[derive(Clone, Debug, PartialEq)]
pub struct MotifSpec {
    pub length: usize,
    pub tag: EcLabel,
    /// `(index, residue, position)`, strictly increasing by index.
    pub sites: Vec<(usize, usize, Point)>,
}

impl MotifSpec {
    pub fn to_input(&self, tag: EcTag) -> EnzymeInput {
        let mut residues = vec![None; self.length];
        for &(i, aa, _) in &self.sites {
            residues[i] = Some(aa);
        }
        EnzymeInput {
            residues,
            given_coords: self.sites.iter().map(|&(i, _, p)| (i, p)).collect(),
            tag,
        }
    }
}

/// Header `length N, tag c1.c2.c3.c4`, then `index <tab> residue <tab> x <tab> y <tab> z`.
pub fn parse_motif(context: &str, text: &str) -> Result<MotifSpec, DataError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let bad = |line: usize, why: String| DataError::Parse {
        context: context.to_string(),
        line: line + 1,
        why,
    };
    let (n, header) = lines.next().ok_or_else(|| bad(0, "empty motif file".into()))?;
    let header_err = || bad(n, "expected header `length N, tag c1.c2.c3.c4`".into());
    let (len_part, tag_part) = header.split_once(',').ok_or_else(header_err)?;
    let length: usize = len_part
        .trim()
        .strip_prefix("length")
        .ok_or_else(header_err)?
        .trim()
        .parse()
        .map_err(|e| bad(n, format!("length: {e}")))?;
    let tag: EcLabel = tag_part.trim().strip_prefix("tag").ok_or_else(header_err)?.trim().parse()?;
    if length == 0 {
        return Err(bad(n, "length must be positive".into()));
    }

    let mut sites: Vec<(usize, usize, Point)> = Vec::new();
    for (m, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(m, format!("expected 5 fields, got {}", f.len())));
        }
        let index: usize = f[0].trim().parse().map_err(|e| bad(m, format!("index: {e}")))?;
        if index >= length {
            return Err(bad(m, format!("index {index} outside length {length}")));
        }
        if sites.last().is_some_and(|s| s.0 >= index) {
            return Err(bad(m, "indices must be strictly increasing".into()));
        }
        let mut chars = f[1].trim().chars();
        let aa = match (chars.next(), chars.next()) {
            (Some(c), None) => alphabet::index_of(c),
            _ => alphabet::from_three_letter(f[1]),
        }
        .ok_or_else(|| bad(m, format!("unknown residue {:?}", f[1])))?;
        let mut p: Point = [0.0; 3];
        for (slot, s) in p.iter_mut().zip(&f[2..]) {
            *slot = s.trim().parse().map_err(|e| bad(m, format!("coordinate {s:?}: {e}")))?;
            if !slot.is_finite() {
                return Err(bad(m, format!("non-finite coordinate {s:?}")));
            }
        }
        sites.push((index, aa, p));
    }
    Ok(MotifSpec { length, tag, sites })
}

pub fn write_motif(spec: &MotifSpec) -> String {
    let mut out = format!("length {}, tag {}\n", spec.length, spec.tag);
    for &(i, aa, p) in &spec.sites {
        let _ = writeln!(out, "{i}\t{}\t{}\t{}\t{}", alphabet::letter(aa), p[0], p[1], p[2]);
    }
    out
}
