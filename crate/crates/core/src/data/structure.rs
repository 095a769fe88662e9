use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use super::DataError;
use crate::alphabet;
use crate::geometry::{Coordinates, Point};

/// A single-chain Cα trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Structure {
    pub id: String,
    pub sequence: Vec<usize>,
    pub coords: Coordinates,
}

fn field(line: &str, start: usize, end: usize) -> &str {
    line.get(start..end.min(line.len())).unwrap_or("").trim()
}

fn float(line: &str, start: usize, end: usize, context: &str, n: usize) -> Result<f64, DataError> {
    let s = field(line, start, end);
    s.parse::<f64>().map_err(|e| DataError::Parse {
        context: context.to_string(),
        line: n,
        why: format!("coordinate {s:?}: {e}"),
    })
}

/// Cα trace of the first chain of the first model in PDB text. Alternate
/// locations other than blank or `A` are ignored; residues without a Cα
/// and residues with non-standard codes are skipped with a warning.
pub fn parse_pdb(id: &str, text: &str) -> Result<Structure, DataError> {
    let mut chain: Option<char> = None;
    let mut sequence = Vec::new();
    let mut points: Vec<Point> = Vec::new();
    let mut seen: Vec<(String, String)> = Vec::new();
    let mut with_ca: HashSet<String> = HashSet::new();
    let mut skipped: HashSet<String> = HashSet::new();

    for (n, line) in text.lines().enumerate() {
        if line.starts_with("ENDMDL") {
            break;
        }
        if !line.starts_with("ATOM  ") {
            continue;
        }
        let this_chain = line.chars().nth(21).unwrap_or(' ');
        match chain {
            None => chain = Some(this_chain),
            Some(c) if c != this_chain => continue,
            _ => {}
        }
        let res_name = field(line, 17, 20).to_string();
        let key = format!("{}{}", field(line, 22, 26), line.chars().nth(26).unwrap_or(' '));
        if seen.last().map(|s| &s.0) != Some(&key) {
            seen.push((key.clone(), res_name.clone()));
        }
        if field(line, 12, 16) != "CA" {
            continue;
        }
        let alt = line.chars().nth(16).unwrap_or(' ');
        if alt != ' ' && alt != 'A' {
            continue;
        }
        if with_ca.contains(&key) || skipped.contains(&key) {
            continue;
        }
        let Some(aa) = alphabet::from_three_letter(&res_name) else {
            warn!("{id}: skipping residue {key} with unknown code {res_name:?}");
            skipped.insert(key);
            continue;
        };
        let p = [
            float(line, 30, 38, id, n + 1)?,
            float(line, 38, 46, id, n + 1)?,
            float(line, 46, 54, id, n + 1)?,
        ];
        with_ca.insert(key);
        sequence.push(aa);
        points.push(p);
    }
    for (key, name) in &seen {
        if !with_ca.contains(key) && !skipped.contains(key) {
            warn!("{id}: residue {name} {key} has no Cα; dropped");
        }
    }
    if sequence.is_empty() {
        return Err(DataError::EmptyStructure(id.to_string()));
    }
    Ok(Structure {
        id: id.to_string(),
        sequence,
        coords: Coordinates::new(points)?,
    })
}

/// Records in the tab-separated form `id <tab> residue <tab> x <tab> y <tab> z`,
/// one residue per line, consecutive lines with the same id forming a record.
pub fn parse_tsv(context: &str, text: &str) -> Result<Vec<Structure>, DataError> {
    let mut out: Vec<(String, Vec<usize>, Vec<Point>)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: String| DataError::Parse {
            context: context.to_string(),
            line: n + 1,
            why,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 tab-separated fields, got {}", f.len())));
        }
        let mut chars = f[1].chars();
        let aa = match (chars.next(), chars.next()) {
            (Some(c), None) => alphabet::index_of(c),
            _ => alphabet::from_three_letter(f[1]),
        }
        .ok_or_else(|| bad(format!("unknown residue {:?}", f[1])))?;
        let mut p = [0.0; 3];
        for (slot, s) in p.iter_mut().zip(&f[2..]) {
            *slot = s.trim().parse().map_err(|e| bad(format!("coordinate {s:?}: {e}")))?;
        }
        match out.last_mut() {
            Some(rec) if rec.0 == f[0] => {
                rec.1.push(aa);
                rec.2.push(p);
            }
            _ => out.push((f[0].to_string(), vec![aa], vec![p])),
        }
    }
    out.into_iter()
        .map(|(id, sequence, points)| {
            Ok(Structure {
                id,
                sequence,
                coords: Coordinates::new(points)?,
            })
        })
        .collect()
}

/// Inverse of [`parse_tsv`]. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_tsv(records: &[Structure]) -> String {
    let mut out = String::new();
    for r in records {
        for (aa, p) in r.sequence.iter().zip(r.coords.points()) {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", r.id, alphabet::letter(*aa), p[0], p[1], p[2]);
        }
    }
    out
}

fn looks_like_tsv(text: &str) -> bool {
    text.lines()
        .find(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .is_some_and(|l| l.split('\t').count() == 5)
}

/// Read a structure file, PDB or TSV. The record id for PDB input is the
/// file stem; a TSV file must hold exactly one record.
pub fn parse_ca_coordinates(path: &Path) -> Result<Structure, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if looks_like_tsv(&text) {
        let mut recs = parse_tsv(&path.display().to_string(), &text)?;
        if recs.len() != 1 {
            return Err(DataError::Parse {
                context: path.display().to_string(),
                line: 0,
                why: format!("expected one record, found {}", recs.len()),
            });
        }
        return Ok(recs.remove(0));
    }
    parse_pdb(&stem, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(serial: usize, name: &str, alt: char, res: &str, chain: char, seq: i32, p: Point) -> String {
        format!(
            "ATOM  {serial:>5} {name:<4}{alt}{res:>3} {chain}{seq:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00           C",
            p[0], p[1], p[2]
        )
    }

    #[test]
    fn single_alanine() {
        let text = atom(1, " CA", ' ', "ALA", 'A', 1, [1.0, 2.0, 3.0]);
        let s = parse_pdb("x", &text).unwrap();
        assert_eq!(s.sequence, vec![0]);
        assert_eq!(s.coords.points(), &[[1.0, 2.0, 3.0]]);
    }

    #[test]
    fn alt_locations_and_unknown_codes() {
        let text = [
            atom(1, " N", ' ', "GLY", 'A', 1, [0.0; 3]),
            atom(2, " CA", 'A', "GLY", 'A', 1, [1.0, 0.0, 0.0]),
            atom(3, " CA", 'B', "GLY", 'A', 1, [9.0, 0.0, 0.0]),
            atom(4, " CA", ' ', "UNK", 'A', 2, [2.0, 0.0, 0.0]),
            atom(5, " N", ' ', "SER", 'A', 3, [3.0, 0.0, 0.0]),
            atom(6, " CA", ' ', "TRP", 'A', 4, [4.0, 0.0, 0.0]),
        ]
        .join("\n");
        let s = parse_pdb("x", &text).unwrap();
        assert_eq!(alphabet::decode(&s.sequence), "GW");
        assert_eq!(s.coords.points()[0], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn no_ca_is_an_error() {
        let text = atom(1, " N", ' ', "GLY", 'A', 1, [0.0; 3]);
        assert!(matches!(parse_pdb("x", &text), Err(DataError::EmptyStructure(_))));
    }

    #[test]
    fn second_model_is_ignored() {
        let text = [
            "MODEL        1".to_string(),
            atom(1, " CA", ' ', "ALA", 'A', 1, [0.0; 3]),
            "ENDMDL".into(),
            "MODEL        2".into(),
            atom(1, " CA", ' ', "CYS", 'A', 1, [0.0; 3]),
        ]
        .join("\n");
        assert_eq!(parse_pdb("x", &text).unwrap().sequence, vec![0]);
    }

    #[test]
    fn tsv_round_trip() {
        let recs = vec![
            Structure {
                id: "a".into(),
                sequence: vec![0, 5, 19],
                coords: Coordinates::new(vec![[0.1, -2.5, 3.0], [1e-7, 2.0 / 3.0, 4.0], [5.0, 6.0, -7.25]]).unwrap(),
            },
            Structure {
                id: "b".into(),
                sequence: vec![3],
                coords: Coordinates::new(vec![[1.0, 1.0, 1.0]]).unwrap(),
            },
        ];
        assert_eq!(parse_tsv("t", &write_tsv(&recs)).unwrap(), recs);
    }
}
