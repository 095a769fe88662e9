//! Four-level enzyme classification tags and the vocabulary tree built from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const EC_LEVELS: usize = 4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EcError {
    #[error("EC label {0:?} must have exactly four dot-separated levels")]
    Malformed(String),
    #[error("EC label {0:?} is not in the tag vocabulary")]
    UnknownLabel(String),
    #[error("level {level} index {index} outside vocabulary of size {size}")]
    IndexOutOfRange {
        level: usize,
        index: usize,
        size: usize,
    },
}

/// A four-level EC label such as `1.1.1.1`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EcLabel {
    parts: [String; EC_LEVELS],
}

impl EcLabel {
    /// Prefix path of a level, 0-based: level 2 of `1.2.3.4` is `1.2.3`.
    pub fn path(&self, level: usize) -> String {
        self.parts[..=level].join(".")
    }
}

impl FromStr for EcLabel {
    type Err = EcError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split('.').collect();
        if parts.len() != EC_LEVELS || parts.iter().any(|p| p.is_empty() || p.contains(char::is_whitespace)) {
            return Err(EcError::Malformed(s.to_string()));
        }
        Ok(Self {
            parts: [0, 1, 2, 3].map(|i| parts[i].to_string()),
        })
    }
}

impl TryFrom<String> for EcLabel {
    type Error = EcError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<EcLabel> for String {
    fn from(l: EcLabel) -> String {
        l.to_string()
    }
}

impl fmt::Display for EcLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.parts.join("."))
    }
}

/// Vocabulary indices of a tag, one per level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EcTag(pub [usize; EC_LEVELS]);

/// Per-level vocabularies. A node at level `k` is identified by its prefix
/// path, so `1.1.1` and `2.1.1` are different level-2 entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<EcLabel>", into = "Vec<EcLabel>")]
pub struct EcTree {
    labels: Vec<EcLabel>,
    levels: [Vec<String>; EC_LEVELS],
    index: [BTreeMap<String, usize>; EC_LEVELS],
    children: [Vec<Vec<usize>>; EC_LEVELS - 1],
}

impl EcTree {
    /// Build from any collection of labels; duplicates are ignored and
    /// vocabulary order is lexicographic by path so the tree is independent
    /// of input order.
    pub fn from_labels<I: IntoIterator<Item = EcLabel>>(labels: I) -> Self {
        let labels: Vec<EcLabel> = labels.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut levels: [Vec<String>; EC_LEVELS] = Default::default();
        for (lvl, vocab) in levels.iter_mut().enumerate() {
            let paths: BTreeSet<String> = labels.iter().map(|l| l.path(lvl)).collect();
            *vocab = paths.into_iter().collect();
        }
        let index: [BTreeMap<String, usize>; EC_LEVELS] = [0, 1, 2, 3].map(|lvl| {
            levels[lvl]
                .iter()
                .enumerate()
                .map(|(i, p)| (p.clone(), i))
                .collect()
        });
        let mut children: [Vec<Vec<usize>>; EC_LEVELS - 1] = [0, 1, 2].map(|lvl| vec![Vec::new(); levels[lvl].len()]);
        for lvl in 0..EC_LEVELS - 1 {
            for (child_idx, child) in levels[lvl + 1].iter().enumerate() {
                let parent = &child[..child.rfind('.').expect("child path has a parent")];
                children[lvl][index[lvl][parent]].push(child_idx);
            }
        }
        Self {
            labels,
            levels,
            index,
            children,
        }
    }

    pub fn vocab_sizes(&self) -> [usize; EC_LEVELS] {
        [0, 1, 2, 3].map(|l| self.levels[l].len())
    }

    /// Full four-level labels, sorted.
    pub fn labels(&self) -> &[EcLabel] {
        &self.labels
    }

    pub fn level_paths(&self, level: usize) -> &[String] {
        &self.levels[level]
    }

    pub fn children(&self, level: usize, node: usize) -> &[usize] {
        &self.children[level][node]
    }

    pub fn tag(&self, label: &EcLabel) -> Result<EcTag, EcError> {
        let mut out = [0; EC_LEVELS];
        for (lvl, slot) in out.iter_mut().enumerate() {
            *slot = *self.index[lvl]
                .get(&label.path(lvl))
                .ok_or_else(|| EcError::UnknownLabel(label.to_string()))?;
        }
        Ok(EcTag(out))
    }

    pub fn label(&self, tag: EcTag) -> Result<EcLabel, EcError> {
        self.validate(tag)?;
        self.levels[EC_LEVELS - 1][tag.0[EC_LEVELS - 1]].parse()
    }

    pub fn validate(&self, tag: EcTag) -> Result<(), EcError> {
        for (level, &index) in tag.0.iter().enumerate() {
            let size = self.levels[level].len();
            if index >= size {
                return Err(EcError::IndexOutOfRange { level, index, size });
            }
        }
        Ok(())
    }
}

impl From<Vec<EcLabel>> for EcTree {
    fn from(labels: Vec<EcLabel>) -> Self {
        Self::from_labels(labels)
    }
}

impl From<EcTree> for Vec<EcLabel> {
    fn from(t: EcTree) -> Self {
        t.labels
    }
}
