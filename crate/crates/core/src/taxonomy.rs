//! Leveled label taxonomy.
//!
//! Labels live at levels `1..=depth`. Every label below level 1 has exactly
//! one parent one level up, so the structure is a rooted forest. Ids are
//! assigned level-major in order of first appearance, which makes them stable
//! for a fixed input row order.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub u32);

impl LabelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: LabelId,
    pub name: String,
    pub level: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy input has no rows")]
    EmptyInput,
    #[error("row {row} has {found} columns, expected {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("row {row}, level {level}: label is empty after normalization")]
    EmptyLabel { row: usize, level: usize },
    #[error("label {name:?} at level {level} appears under parents {first:?} and {second:?}")]
    ConflictingParent {
        level: usize,
        name: String,
        first: String,
        second: String,
    },
    #[error("unknown label {0}")]
    UnknownLabel(LabelId),
    #[error("level {level} out of range 1..={depth}")]
    LevelOutOfRange { level: usize, depth: usize },
    #[error("taxonomy structure violated: {0}")]
    Invariant(String),
    #[error("reading taxonomy file: {0}")]
    Io(String),
}

/// Immutable leveled forest of labels with O(1) parent and children lookup.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    labels: Vec<Label>,
    levels: Vec<Vec<LabelId>>,
    parent_of: Vec<Option<LabelId>>,
    children_of: Vec<Vec<LabelId>>,
    by_name: Vec<HashMap<String, LabelId>>,
}

impl Taxonomy {
    /// Build a taxonomy from full root-to-leaf rows (`rows[i][l-1]` is the
    /// level-`l` label name). Duplicate rows and shared prefixes are merged.
    pub fn from_rows<R, S>(rows: R) -> Result<Self, TaxonomyError>
    where
        R: IntoIterator,
        R::Item: AsRef<[S]>,
        S: AsRef<str>,
    {
        let mut normalized: Vec<Vec<String>> = Vec::new();
        let mut depth = None;
        for (row_idx, row) in rows.into_iter().enumerate() {
            let row = row.as_ref();
            let expected = *depth.get_or_insert(row.len());
            if row.len() != expected || expected == 0 {
                return Err(TaxonomyError::RaggedRow {
                    row: row_idx,
                    expected,
                    found: row.len(),
                });
            }
            let names = row
                .iter()
                .enumerate()
                .map(|(col, raw)| {
                    let name = normalize_label(raw.as_ref());
                    if name.is_empty() {
                        Err(TaxonomyError::EmptyLabel { row: row_idx, level: col + 1 })
                    } else {
                        Ok(name)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            normalized.push(names);
        }
        let depth = depth.ok_or(TaxonomyError::EmptyInput)?;

        let mut labels = Vec::new();
        let mut levels = vec![Vec::new(); depth];
        let mut by_name: Vec<HashMap<String, LabelId>> = vec![HashMap::new(); depth];
        for level_idx in 0..depth {
            for row in &normalized {
                let name = &row[level_idx];
                if !by_name[level_idx].contains_key(name) {
                    let id = LabelId(labels.len() as u32);
                    labels.push(Label { id, name: name.clone(), level: level_idx + 1 });
                    levels[level_idx].push(id);
                    by_name[level_idx].insert(name.clone(), id);
                }
            }
        }

        let mut parent_of = vec![None; labels.len()];
        let mut children_of = vec![Vec::new(); labels.len()];
        for row in &normalized {
            for level_idx in 1..depth {
                let parent = by_name[level_idx - 1][&row[level_idx - 1]];
                let child = by_name[level_idx][&row[level_idx]];
                match parent_of[child.index()] {
                    None => {
                        parent_of[child.index()] = Some(parent);
                        children_of[parent.index()].push(child);
                    }
                    Some(existing) if existing == parent => {}
                    Some(existing) => {
                        return Err(TaxonomyError::ConflictingParent {
                            level: level_idx + 1,
                            name: row[level_idx].clone(),
                            first: labels[existing.index()].name.clone(),
                            second: labels[parent.index()].name.clone(),
                        })
                    }
                }
            }
        }
        for kids in &mut children_of {
            kids.sort_unstable();
        }

        let taxonomy = Self { labels, levels, parent_of, children_of, by_name };
        taxonomy.check_invariants()?;
        Ok(taxonomy)
    }

    /// Read a delimited taxonomy file: one full path per row, columns are
    /// levels 1..L.
    pub fn from_delimited_file(
        path: &Path,
        delimiter: u8,
        has_header: bool,
    ) -> Result<Self, TaxonomyError> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(has_header)
            .flexible(true)
            .from_path(path)
            .map_err(|e| TaxonomyError::Io(e.to_string()))?;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| TaxonomyError::Io(e.to_string()))?;
            rows.push(record.iter().map(str::to_owned).collect::<Vec<_>>());
        }
        Self::from_rows(rows)
    }

    fn check_invariants(&self) -> Result<(), TaxonomyError> {
        let bad = |msg: String| Err(TaxonomyError::Invariant(msg));
        if self.levels.iter().any(Vec::is_empty) {
            return bad("empty level".into());
        }
        let mut edges = 0;
        for label in &self.labels {
            match (label.level, self.parent_of[label.id.index()]) {
                (1, None) => {}
                (1, Some(_)) => return bad(format!("root {} has a parent", label.id)),
                (_, None) => return bad(format!("{} has no parent", label.id)),
                (level, Some(p)) => {
                    edges += 1;
                    if self.labels[p.index()].level + 1 != level {
                        return bad(format!("{} parent is not one level up", label.id));
                    }
                    if self.children_of[p.index()].binary_search(&label.id).is_err() {
                        return bad(format!("{} missing from its parent's children", label.id));
                    }
                }
            }
        }
        let child_links: usize = self.children_of.iter().map(Vec::len).sum();
        if child_links != edges || edges != self.labels.len() - self.levels[0].len() {
            return bad("children_of is not the inverse of parent_of".into());
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, id: LabelId) -> Result<&Label, TaxonomyError> {
        self.labels.get(id.index()).ok_or(TaxonomyError::UnknownLabel(id))
    }

    pub fn name(&self, id: LabelId) -> &str {
        &self.labels[id.index()].name
    }

    pub fn level_of(&self, id: LabelId) -> usize {
        self.labels[id.index()].level
    }

    pub fn parent(&self, id: LabelId) -> Result<Option<LabelId>, TaxonomyError> {
        self.parent_of
            .get(id.index())
            .copied()
            .ok_or(TaxonomyError::UnknownLabel(id))
    }

    /// Children sorted by ascending id.
    pub fn children(&self, id: LabelId) -> Result<&[LabelId], TaxonomyError> {
        self.children_of
            .get(id.index())
            .map(Vec::as_slice)
            .ok_or(TaxonomyError::UnknownLabel(id))
    }

    /// Labels at `level` (1-based) in ascending id order.
    pub fn labels_at_level(&self, level: usize) -> Result<&[LabelId], TaxonomyError> {
        if level == 0 || level > self.depth() {
            return Err(TaxonomyError::LevelOutOfRange { level, depth: self.depth() });
        }
        Ok(&self.levels[level - 1])
    }

    /// Look up a label by (already normalized) name.
    pub fn find(&self, level: usize, name: &str) -> Option<LabelId> {
        self.by_name.get(level.checked_sub(1)?)?.get(name).copied()
    }

    /// Look up a label by raw name, normalizing first.
    pub fn find_raw(&self, level: usize, raw: &str) -> Option<LabelId> {
        self.find(level, &normalize_label(raw))
    }

    /// All parent-child edges, ordered by child id.
    pub fn edges(&self) -> impl Iterator<Item = (LabelId, LabelId)> + '_ {
        self.parent_of
            .iter()
            .enumerate()
            .filter_map(|(child, p)| p.map(|p| (p, LabelId(child as u32))))
    }

    /// Root-to-leaf label chain ending at `leaf`.
    pub fn path_to(&self, leaf: LabelId) -> Vec<LabelId> {
        let mut path = vec![leaf];
        let mut cur = leaf;
        while let Some(p) = self.parent_of[cur.index()] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// One root-to-leaf name row per level-`depth` label; the inverse of
    /// [`Taxonomy::from_rows`] up to row order and duplicates.
    pub fn export_rows(&self) -> Vec<Vec<String>> {
        self.levels[self.depth() - 1]
            .iter()
            .map(|&leaf| {
                self.path_to(leaf)
                    .into_iter()
                    .map(|id| self.name(id).to_owned())
                    .collect()
            })
            .collect()
    }

    /// Edge set, convenient for set comparisons in callers.
    pub fn edge_set(&self) -> BTreeSet<(LabelId, LabelId)> {
        self.edges().collect()
    }
}
