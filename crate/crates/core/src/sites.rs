//! Conserved-site discovery from a family's multiple sequence alignment.

use std::fmt::Write as _;

use crate::alphabet;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SiteError {
    #[error("tau must be in (0, 1], got {0}")]
    Tau(f64),
    #[error("alignment needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("row `{id}` has {found} columns, expected {expected}")]
    RaggedRow {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("row `{id}`: character {ch:?} is neither a residue nor a gap")]
    BadCharacter { id: String, ch: char },
    #[error("line {line}: sequence data before any `>` header")]
    MissingHeader { line: usize },
    #[error("line {line}: {why}")]
    Manifest { line: usize, why: String },
}

pub fn is_gap(c: char) -> bool {
    c == '-' || c == '.'
}

/// Rows of one family's alignment, upper-cased, over a shared column axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedFamily {
    rows: Vec<(String, Vec<char>)>,
    columns: usize,
}

impl AlignedFamily {
    pub fn new(rows: Vec<(String, String)>) -> Result<Self, SiteError> {
        if rows.len() < 2 {
            return Err(SiteError::TooFewRows(rows.len()));
        }
        let columns = rows[0].1.chars().count();
        let mut out = Vec::with_capacity(rows.len());
        for (id, seq) in rows {
            let chars: Vec<char> = seq.chars().map(|c| c.to_ascii_uppercase()).collect();
            if chars.len() != columns {
                return Err(SiteError::RaggedRow {
                    id,
                    expected: columns,
                    found: chars.len(),
                });
            }
            if let Some(&ch) = chars.iter().find(|&&c| !is_gap(c) && alphabet::index_of(c).is_none()) {
                return Err(SiteError::BadCharacter { id, ch });
            }
            out.push((id, chars));
        }
        Ok(Self { rows: out, columns })
    }

    /// Parse aligned FASTA. Sequence lines under one header are concatenated.
    pub fn from_fasta(text: &str) -> Result<Self, SiteError> {
        let mut rows: Vec<(String, String)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('>') {
                let id = header.split_whitespace().next().unwrap_or("").to_string();
                rows.push((id, String::new()));
            } else {
                match rows.last_mut() {
                    Some(row) => row.1.push_str(line),
                    None => return Err(SiteError::MissingHeader { line: n + 1 }),
                }
            }
        }
        Self::new(rows)
    }

    pub fn rows(&self) -> &[(String, Vec<char>)] {
        &self.rows
    }

    pub fn column_count(&self) -> usize {
        self.columns
    }

    /// Gap-stripped sequence of a row.
    pub fn ungapped(&self, row: usize) -> String {
        self.rows[row].1.iter().filter(|&&c| !is_gap(c)).collect()
    }
}

/// Conserved positions of one member sequence, as indices into its ungapped
/// sequence together with the conserved letter at each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteAnnotation {
    pub id: String,
    pub indices: Vec<usize>,
    pub letters: Vec<char>,
}

/// Index into the ungapped sequence of the residue at `column`, or `None`
/// when the row has a gap there.
pub fn map_column_to_residue_index(row: &[char], column: usize) -> Option<usize> {
    if is_gap(row[column]) {
        return None;
    }
    Some(row[..column].iter().filter(|&&c| !is_gap(c)).count())
}

/// The conserved letter of each column, if any: the unique most frequent
/// residue letter, provided it appears in strictly more than `tau * rows`
/// rows. Gaps count toward the row total but never as a letter. A column
/// whose top count is shared by two letters has no conserved identity at
/// any `tau`, so raising `tau` only ever removes columns.
pub fn conserved_columns(family: &AlignedFamily, tau: f64) -> Result<Vec<Option<char>>, SiteError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(SiteError::Tau(tau));
    }
    let threshold = tau * family.rows.len() as f64;
    let mut out = Vec::with_capacity(family.columns);
    for col in 0..family.columns {
        let mut counts = [0usize; alphabet::ALPHABET_SIZE];
        for (_, row) in &family.rows {
            if let Some(a) = alphabet::index_of(row[col]).filter(|_| !is_gap(row[col])) {
                counts[a] += 1;
            }
        }
        let top = counts.iter().copied().max().unwrap_or(0);
        let leaders: Vec<usize> = (0..counts.len()).filter(|&a| counts[a] == top).collect();
        out.push(match leaders.as_slice() {
            [a] if top as f64 > threshold => Some(alphabet::letter(*a)),
            _ => None,
        });
    }
    Ok(out)
}

/// Conserved sites of every member, in row order.
pub fn mine_sites(family: &AlignedFamily, tau: f64) -> Result<Vec<SiteAnnotation>, SiteError> {
    let conserved = conserved_columns(family, tau)?;
    Ok(family
        .rows
        .iter()
        .map(|(id, row)| {
            let mut indices = Vec::new();
            let mut letters = Vec::new();
            let mut residue = 0;
            for (col, &c) in row.iter().enumerate() {
                if is_gap(c) {
                    continue;
                }
                if conserved[col] == Some(c) {
                    indices.push(residue);
                    letters.push(c);
                }
                residue += 1;
            }
            SiteAnnotation {
                id: id.clone(),
                indices,
                letters,
            }
        })
        .collect())
}

/// One line per member: `id <tab> i,j,k <tab> LETTERS`.
pub fn write_manifest(annotations: &[SiteAnnotation]) -> String {
    let mut out = String::new();
    for a in annotations {
        let idx: Vec<String> = a.indices.iter().map(usize::to_string).collect();
        let letters: String = a.letters.iter().collect();
        let _ = writeln!(out, "{}\t{}\t{}", a.id, idx.join(","), letters);
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<SiteAnnotation>, SiteError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |why: String| SiteError::Manifest { line: n + 1, why };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let indices = if fields[1].is_empty() {
            Vec::new()
        } else {
            fields[1]
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|e| bad(format!("index {s:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?
        };
        let letters: Vec<char> = fields[2].trim().chars().map(|c| c.to_ascii_uppercase()).collect();
        if letters.len() != indices.len() {
            return Err(bad(format!("{} indices but {} letters", indices.len(), letters.len())));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("indices must be strictly increasing".into()));
        }
        out.push(SiteAnnotation {
            id: fields[0].to_string(),
            indices,
            letters,
        });
    }
    Ok(out)
}
