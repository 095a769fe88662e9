use std::fmt::Write as _;

use super::DataError;
use crate::geometry::{Coordinates, Point};
use crate::model::{SubstrateRecord, SUBSTRATE_FEATURES};

/// Parse substrate blocks. Each block is a header `atom_count <tab> name`
/// followed by that many lines of five chemical features (atomic-number
/// category, formal charge, aromatic flag, hybridisation code, heavy-atom
/// degree) and `x y z`, all tab-separated.
pub fn parse_substrates(context: &str, text: &str) -> Result<Vec<SubstrateRecord>, DataError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .collect();
    let bad = |line: usize, why: String| DataError::Parse {
        context: context.to_string(),
        line: line + 1,
        why,
    };
    let mut out = Vec::new();
    let mut at = 0;
    while at < lines.len() {
        let (n, header) = lines[at];
        let h: Vec<&str> = header.split('\t').collect();
        if h.len() != 2 {
            return Err(bad(n, "expected header `count <tab> name`".into()));
        }
        let count: usize = h[0].trim().parse().map_err(|e| bad(n, format!("atom count: {e}")))?;
        if count == 0 {
            return Err(bad(n, "substrate needs at least one atom".into()));
        }
        let name = h[1].trim().to_string();
        if at + count >= lines.len() {
            return Err(bad(n, format!("header promises {count} atoms, file ends early")));
        }
        let mut atoms = Vec::with_capacity(count);
        let mut points: Vec<Point> = Vec::with_capacity(count);
        for &(m, line) in &lines[at + 1..at + 1 + count] {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != SUBSTRATE_FEATURES + 3 {
                return Err(bad(m, format!("expected {} fields, got {}", SUBSTRATE_FEATURES + 3, f.len())));
            }
            let mut v = [0.0f64; SUBSTRATE_FEATURES + 3];
            for (slot, s) in v.iter_mut().zip(&f) {
                *slot = s.trim().parse().map_err(|e| bad(m, format!("value {s:?}: {e}")))?;
                if !slot.is_finite() {
                    return Err(bad(m, format!("non-finite value {s:?}")));
                }
            }
            atoms.push([v[0], v[1], v[2], v[3], v[4]]);
            points.push([v[5], v[6], v[7]]);
        }
        out.push(SubstrateRecord::new(name, atoms, Coordinates::new(points)?)?);
        at += 1 + count;
    }
    Ok(out)
}

pub fn write_substrates(subs: &[SubstrateRecord]) -> String {
    let mut out = String::new();
    for s in subs {
        let _ = writeln!(out, "{}\t{}", s.len(), s.id);
        for (a, p) in s.atoms.iter().zip(s.coords.points()) {
            let cols: Vec<String> = a.iter().chain(p.iter()).map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", cols.join("\t"));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairingRow {
    pub enzyme_id: String,
    pub substrate_id: String,
    pub label: bool,
}

/// `enzyme_id <tab> substrate_id <tab> label`, label 0 or 1.
pub fn parse_pairings(text: &str) -> Result<Vec<PairingRow>, DataError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: String| DataError::Parse {
            context: "pairing manifest".into(),
            line: n + 1,
            why,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", f.len())));
        }
        let label = match f[2].trim() {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("label must be 0 or 1, got {other:?}"))),
        };
        out.push(PairingRow {
            enzyme_id: f[0].to_string(),
            substrate_id: f[1].to_string(),
            label,
        });
    }
    Ok(out)
}

pub fn write_pairings(rows: &[PairingRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}", r.enzyme_id, r.substrate_id, u8::from(r.label));
    }
    out
}
