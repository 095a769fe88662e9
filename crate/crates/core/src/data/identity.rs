use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;

pub const IDENTITY_THRESHOLD: f64 = 0.5;

/// Global alignment identity: matches over alignment length (gaps included),
/// scoring match 1, mismatch 0, gap -1. Traceback prefers diagonal, then a
/// gap in the second sequence, then a gap in the first.
pub fn align_identity<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == 0 && m == 0 {
        return 1.0;
    }
    let w = m + 1;
    let mut score = vec![0i64; (n + 1) * w];
    for i in 0..=n {
        score[i * w] = -(i as i64);
    }
    for j in 0..=m {
        score[j] = -(j as i64);
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = score[(i - 1) * w + j - 1] + i64::from(a[i - 1] == b[j - 1]);
            let up = score[(i - 1) * w + j] - 1;
            let left = score[i * w + j - 1] - 1;
            score[i * w + j] = diag.max(up).max(left);
        }
    }
    let (mut i, mut j) = (n, m);
    let (mut matches, mut length) = (0usize, 0usize);
    while i > 0 || j > 0 {
        let here = score[i * w + j];
        length += 1;
        if i > 0 && j > 0 && here == score[(i - 1) * w + j - 1] + i64::from(a[i - 1] == b[j - 1]) {
            matches += usize::from(a[i - 1] == b[j - 1]);
            i -= 1;
            j -= 1;
        } else if i > 0 && here == score[(i - 1) * w + j] - 1 {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    matches as f64 / length as f64
}

/// Single-linkage clusters at `threshold`: two records share a cluster iff a
/// chain of pairwise identities `>= threshold` connects them. Records are
/// taken in id order and cluster ids are numbered by first appearance.
///
/// Returns `(record_id, cluster_id)` sorted by record id.
pub fn cluster_by_identity<T: PartialEq>(records: &[(String, Vec<T>)], threshold: f64) -> Vec<(String, usize)> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&x, &y| records[x].0.cmp(&records[y].0));
    let n = order.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for a in 0..n {
        for b in 0..a {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                continue;
            }
            if align_identity(&records[order[a]].1, &records[order[b]].1) >= threshold {
                // Keep the earlier record as root so ids follow first appearance.
                let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                parent[hi] = lo;
            }
        }
    }
    let mut ids: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(n);
    for (pos, &rec) in order.iter().enumerate() {
        let root = find(&mut parent, pos);
        let next = ids.len();
        let id = *ids.entry(root).or_insert(next);
        out.push((records[rec].0.clone(), id));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitEntry {
    pub record_id: String,
    pub cluster: usize,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitManifest {
    pub entries: Vec<SplitEntry>,
}

impl SplitManifest {
    pub fn get(&self, record_id: &str) -> Option<&SplitEntry> {
        self.entries.iter().find(|e| e.record_id == record_id)
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.record_id.as_str())
            .collect()
    }

    /// `record_id <tab> cluster_id <tab> split`, one line per record.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.record_id, e.cluster, e.split);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |why: String| DataError::Parse {
                context: "split manifest".into(),
                line: n + 1,
                why,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", f.len())));
            }
            entries.push(SplitEntry {
                record_id: f[0].to_string(),
                cluster: f[1].trim().parse().map_err(|e| bad(format!("cluster id: {e}")))?,
                split: f[2].parse().map_err(bad)?,
            });
        }
        Ok(Self { entries })
    }
}

/// Assign whole clusters to splits. Clusters are visited in a seeded random
/// order; eligible clusters (every member `eligible_for_eval`) fill test,
/// then valid, up to the requested record fractions; everything else trains.
pub fn split_clusters(
    clusters: &[(String, usize)],
    eligible_for_eval: &dyn Fn(&str) -> bool,
    valid_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> SplitManifest {
    let total = clusters.len() as f64;
    let mut members: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (id, c) in clusters {
        members.entry(*c).or_default().push(id);
    }
    let mut order: Vec<usize> = members.keys().copied().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let test_target = (test_fraction * total).round() as usize;
    let valid_target = (valid_fraction * total).round() as usize;
    let (mut n_test, mut n_valid) = (0, 0);
    let mut assign: BTreeMap<usize, Split> = BTreeMap::new();
    for c in order {
        let m = &members[&c];
        let eligible = m.iter().all(|id| eligible_for_eval(id));
        let split = if eligible && n_test + m.len() <= test_target {
            n_test += m.len();
            Split::Test
        } else if eligible && n_valid + m.len() <= valid_target {
            n_valid += m.len();
            Split::Valid
        } else {
            Split::Train
        };
        assign.insert(c, split);
    }
    SplitManifest {
        entries: clusters
            .iter()
            .map(|(id, c)| SplitEntry {
                record_id: id.clone(),
                cluster: *c,
                split: assign[c],
            })
            .collect(),
    }
}
