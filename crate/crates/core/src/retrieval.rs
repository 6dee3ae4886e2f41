//! Per-document subgraph retrieval.
//!
//! Candidates are retrieved at every level, then a taxonomy edge
//! `(parent, child)` is kept when both endpoints were retrieved at their
//! respective levels. Nodes are exactly the endpoints of kept edges.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::embedding::{CandidateSet, EmbeddingVector, IndexError, LevelIndex, RetrievalConfig};
use crate::taxonomy::{LabelId, Taxonomy};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Subgraph {
    pub nodes: BTreeSet<LabelId>,
    pub edges: BTreeSet<(LabelId, LabelId)>,
}

impl Subgraph {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Insert an edge and both endpoints.
    pub fn add_edge(&mut self, parent: LabelId, child: LabelId) {
        self.nodes.insert(parent);
        self.nodes.insert(child);
        self.edges.insert((parent, child));
    }

    /// "parent -> child" per line, sorted by (parent name, child name).
    pub fn dump(&self, taxonomy: &Taxonomy) -> String {
        let mut lines: Vec<String> = self
            .edges
            .iter()
            .map(|&(p, c)| format!("{} -> {}", taxonomy.name(p), taxonomy.name(c)))
            .collect();
        lines.sort();
        lines.join("\n")
    }
}

/// Candidate sets for levels `1..=L` together with the subgraph they induce.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieval {
    pub candidates: Vec<CandidateSet>,
    pub subgraph: Subgraph,
}

impl Retrieval {
    /// Candidates at `level` (1-based).
    pub fn at(&self, level: usize) -> &CandidateSet {
        &self.candidates[level - 1]
    }
}

/// Keep every taxonomy edge whose child is in `Q^l` and whose parent is in
/// `Q^{l-1}`. `candidates[i]` holds level `i + 1`.
pub fn subgraph_from_candidates(taxonomy: &Taxonomy, candidates: &[CandidateSet]) -> Subgraph {
    let mut g = Subgraph::default();
    for level in 2..=candidates.len().min(taxonomy.depth()) {
        let upper: BTreeSet<LabelId> = candidates[level - 2].ids().collect();
        for child in candidates[level - 1].ids() {
            let parent = match taxonomy.parent(child) {
                Ok(Some(p)) => p,
                _ => continue,
            };
            if upper.contains(&parent) {
                g.add_edge(parent, child);
            }
        }
    }
    g
}

/// Retrieve candidates at every level for `x`, then build the subgraph.
pub fn retrieve_subgraph(
    taxonomy: &Taxonomy,
    index: &LevelIndex,
    x: &EmbeddingVector,
    config: &RetrievalConfig,
) -> Result<Retrieval, IndexError> {
    let candidates = (1..=taxonomy.depth())
        .map(|level| index.query_candidates(x, level, config))
        .collect::<Result<Vec<_>, _>>()?;
    let subgraph = subgraph_from_candidates(taxonomy, &candidates);
    Ok(Retrieval { candidates, subgraph })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Candidate;

    fn q(level: usize, ids: &[LabelId]) -> CandidateSet {
        CandidateSet {
            level,
            members: ids.iter().map(|&label| Candidate { label, distance: 0.5 }).collect(),
        }
    }

    #[test]
    fn keeps_only_edges_with_retrieved_parent() {
        let t = Taxonomy::from_rows([["a", "b"], ["w", "z"]]).unwrap();
        let id = |l, n| t.find(l, n).unwrap();
        let g = subgraph_from_candidates(&t, &[q(1, &[id(1, "a")]), q(2, &[id(2, "b"), id(2, "z")])]);
        assert_eq!(g.edges, BTreeSet::from([(id(1, "a"), id(2, "b"))]));
        assert_eq!(g.nodes, BTreeSet::from([id(1, "a"), id(2, "b")]));
        assert_eq!(g.dump(&t), "a -> b");
    }

    #[test]
    fn empty_first_level_gives_empty_graph() {
        let t = Taxonomy::from_rows([["a", "b", "c"]]).unwrap();
        let all2: Vec<_> = t.labels_at_level(2).unwrap().to_vec();
        let all3: Vec<_> = t.labels_at_level(3).unwrap().to_vec();
        let g = subgraph_from_candidates(&t, &[q(1, &[]), q(2, &all2), q(3, &all3)]);
        // level 2 -> 3 edges survive; nothing touches level 1
        assert!(g.nodes.iter().all(|&n| t.level_of(n) > 1));
        let g = subgraph_from_candidates(&t, &[q(1, &[]), q(2, &all2)]);
        assert!(g.is_empty() && g.nodes.is_empty());
    }
}
