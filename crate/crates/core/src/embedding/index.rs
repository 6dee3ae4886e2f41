use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{cosine_distance, EmbedError, EmbeddingProvider, EmbeddingVector, VectorError};
use crate::taxonomy::{LabelId, Taxonomy};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index has no entries for level {0}")]
    IndexNotBuilt(usize),
    #[error("level {level} out of range 1..={depth}")]
    LevelOutOfRange { level: usize, depth: usize },
    #[error("retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    #[default]
    TopK,
    Threshold,
}

/// How candidates are selected per level: the `k` nearest labels, or every
/// label within cosine distance `tau`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub mode: RetrievalMode,
    pub k_per_level: BTreeMap<usize, usize>,
    pub tau_per_level: BTreeMap<usize, f64>,
}

impl RetrievalConfig {
    pub fn top_k(k_per_level: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self {
            mode: RetrievalMode::TopK,
            k_per_level: k_per_level.into_iter().collect(),
            tau_per_level: BTreeMap::new(),
        }
    }

    pub fn threshold(tau_per_level: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Self {
            mode: RetrievalMode::Threshold,
            k_per_level: BTreeMap::new(),
            tau_per_level: tau_per_level.into_iter().collect(),
        }
    }

    /// Top-k defaults: level 1 retrieves all of C^1; two-level taxonomies use
    /// k2 = 20; deeper ones use k2 = 10 and k = 40 from level 3 on.
    pub fn defaults_for(taxonomy: &Taxonomy) -> Self {
        let depth = taxonomy.depth();
        let mut k = BTreeMap::new();
        k.insert(1, taxonomy.labels_at_level(1).map_or(1, <[_]>::len));
        for level in 2..=depth {
            let v = match (depth, level) {
                (2, _) => 20,
                (_, 2) => 10,
                _ => 40,
            };
            k.insert(level, v);
        }
        Self::top_k(k)
    }

    /// Fill any level missing from the active map with its default.
    pub fn with_defaults_from(mut self, taxonomy: &Taxonomy) -> Self {
        if self.mode == RetrievalMode::TopK {
            for (level, k) in Self::defaults_for(taxonomy).k_per_level {
                self.k_per_level.entry(level).or_insert(k);
            }
        }
        self
    }

    pub fn validate(&self, depth: usize) -> Result<(), IndexError> {
        let bad = |m: String| Err(IndexError::InvalidConfig(m));
        for level in 1..=depth {
            match self.mode {
                RetrievalMode::TopK => match self.k_per_level.get(&level) {
                    None => return bad(format!("no k for level {level}")),
                    Some(0) => return bad(format!("k for level {level} must be positive")),
                    Some(_) => {}
                },
                RetrievalMode::Threshold => match self.tau_per_level.get(&level) {
                    None => return bad(format!("no tau for level {level}")),
                    Some(t) if !(0.0..=2.0).contains(t) => {
                        return bad(format!("tau {t} for level {level} outside [0, 2]"))
                    }
                    Some(_) => {}
                },
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: LabelId,
    pub distance: f64,
}

/// Labels retrieved at one level, nearest first; ties by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub level: usize,
    pub members: Vec<Candidate>,
}

impl CandidateSet {
    pub fn empty(level: usize) -> Self {
        Self { level, members: Vec::new() }
    }

    pub fn contains(&self, id: LabelId) -> bool {
        self.members.iter().any(|c| c.label == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = LabelId> + '_ {
        self.members.iter().map(|c| c.label)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    /// Labels per provider request.
    pub batch_size: usize,
    /// Concurrent provider requests during a build.
    pub max_in_flight: usize,
    /// Embed "root > ... > label" instead of the bare label name.
    pub path_context: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { batch_size: 64, max_in_flight: 4, path_context: false }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    id: LabelId,
    vector: EmbeddingVector,
}

/// Exact linear-scan index of label embeddings, one table per level.
#[derive(Debug, Clone)]
pub struct LevelIndex {
    levels: Vec<Option<Vec<Entry>>>,
}

impl LevelIndex {
    /// Text embedded for `id`.
    pub fn label_text(taxonomy: &Taxonomy, id: LabelId, path_context: bool) -> String {
        if path_context {
            taxonomy
                .path_to(id)
                .into_iter()
                .map(|p| taxonomy.name(p))
                .collect::<Vec<_>>()
                .join(" > ")
        } else {
            taxonomy.name(id).to_owned()
        }
    }

    pub fn build(
        taxonomy: &Taxonomy,
        provider: &dyn EmbeddingProvider,
        options: &BuildOptions,
    ) -> Result<Self, IndexError> {
        let ids: Vec<LabelId> = taxonomy.labels().iter().map(|l| l.id).collect();
        let texts: Vec<String> = ids
            .iter()
            .map(|&id| Self::label_text(taxonomy, id, options.path_context))
            .collect();
        let chunks: Vec<&[String]> = texts.chunks(options.batch_size.max(1)).collect();
        let results: Mutex<Vec<Option<Vec<EmbeddingVector>>>> = Mutex::new(vec![None; chunks.len()]);
        let first_error: Mutex<Option<EmbedError>> = Mutex::new(None);
        let next = AtomicUsize::new(0);
        let workers = options.max_in_flight.clamp(1, chunks.len().max(1));

        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if first_error.lock().unwrap().is_some() {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(chunk) = chunks.get(i) else { break };
                    match provider.embed_batch(chunk) {
                        Ok(v) if v.len() == chunk.len() => results.lock().unwrap()[i] = Some(v),
                        Ok(v) => {
                            let err = EmbedError::CountMismatch { expected: chunk.len(), got: v.len() };
                            first_error.lock().unwrap().get_or_insert(err);
                        }
                        Err(e) => {
                            first_error.lock().unwrap().get_or_insert(e);
                        }
                    }
                });
            }
        });
        if let Some(e) = first_error.into_inner().unwrap() {
            return Err(e.into());
        }

        let vectors = results.into_inner().unwrap().into_iter().flatten().flatten();
        let mut levels: Vec<Option<Vec<Entry>>> = vec![Some(Vec::new()); taxonomy.depth()];
        let mut dim = None;
        for (id, vector) in ids.into_iter().zip(vectors) {
            let d = *dim.get_or_insert(vector.dim());
            if vector.dim() != d {
                return Err(VectorError::DimMismatch { left: d, right: vector.dim() }.into());
            }
            let level = taxonomy.level_of(id);
            levels[level - 1].as_mut().unwrap().push(Entry { id, vector });
        }
        Ok(Self { levels })
    }

    /// Assemble an index from precomputed vectors. Levels without entries
    /// stay unbuilt.
    pub fn from_vectors(
        depth: usize,
        entries: impl IntoIterator<Item = (usize, LabelId, EmbeddingVector)>,
    ) -> Self {
        let mut levels: Vec<Option<Vec<Entry>>> = vec![None; depth];
        for (level, id, vector) in entries {
            levels[level - 1].get_or_insert_with(Vec::new).push(Entry { id, vector });
        }
        for entries in levels.iter_mut().flatten() {
            entries.sort_by_key(|e| e.id);
        }
        Self { levels }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Total stored embeddings.
    pub fn len(&self) -> usize {
        self.levels.iter().flatten().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn level_len(&self, level: usize) -> usize {
        self.levels.get(level.wrapping_sub(1)).and_then(|l| l.as_ref()).map_or(0, Vec::len)
    }

    pub fn vector(&self, level: usize, id: LabelId) -> Option<&EmbeddingVector> {
        self.levels
            .get(level.wrapping_sub(1))?
            .as_ref()?
            .iter()
            .find(|e| e.id == id)
            .map(|e| &e.vector)
    }

    /// Every label at `level` with its distance to `x`, nearest first.
    pub fn ranked(&self, x: &EmbeddingVector, level: usize) -> Result<Vec<Candidate>, IndexError> {
        if level == 0 || level > self.depth() {
            return Err(IndexError::LevelOutOfRange { level, depth: self.depth() });
        }
        let entries = self.levels[level - 1].as_ref().ok_or(IndexError::IndexNotBuilt(level))?;
        let mut ranked = entries
            .iter()
            .map(|e| Ok(Candidate { label: e.id, distance: cosine_distance(x, &e.vector)? }))
            .collect::<Result<Vec<_>, VectorError>>()?;
        ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.label.cmp(&b.label)));
        Ok(ranked)
    }

    /// Candidate query at one level.
    pub fn query_candidates(
        &self,
        x: &EmbeddingVector,
        level: usize,
        config: &RetrievalConfig,
    ) -> Result<CandidateSet, IndexError> {
        let mut members = self.ranked(x, level)?;
        match config.mode {
            RetrievalMode::TopK => {
                let k = *config
                    .k_per_level
                    .get(&level)
                    .ok_or_else(|| IndexError::InvalidConfig(format!("no k for level {level}")))?;
                if k == 0 {
                    return Err(IndexError::InvalidConfig(format!("k for level {level} must be positive")));
                }
                members.truncate(k);
            }
            RetrievalMode::Threshold => {
                let tau = *config
                    .tau_per_level
                    .get(&level)
                    .ok_or_else(|| IndexError::InvalidConfig(format!("no tau for level {level}")))?;
                members.retain(|c| c.distance <= tau);
            }
        }
        Ok(CandidateSet { level, members })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{CachedEmbedder, EmbeddingCache, HashEmbedder};

    fn unit(angle: f64) -> EmbeddingVector {
        EmbeddingVector::new(vec![angle.cos(), angle.sin()]).unwrap()
    }

    #[test]
    fn toy_index_has_one_entry_per_label() {
        let t = Taxonomy::from_rows([["a", "b"], ["a", "c"]]).unwrap();
        let idx = LevelIndex::build(&t, &HashEmbedder::default(), &BuildOptions::default()).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.level_len(1), 1);
        assert_eq!(idx.level_len(2), 2);
    }

    #[test]
    fn warm_cache_rebuild_makes_no_provider_calls() {
        let t = Taxonomy::from_rows([["a x", "b"], ["a x", "c"], ["d", "e"]]).unwrap();
        let e = HashEmbedder::default();
        let cache = EmbeddingCache::in_memory();
        let opts = BuildOptions { batch_size: 2, ..Default::default() };
        let cold = CachedEmbedder::new(&e, &cache).with_batch_size(2);
        LevelIndex::build(&t, &cold, &opts).unwrap();
        assert!(cold.provider_calls() > 0);
        let warm = CachedEmbedder::new(&e, &cache);
        LevelIndex::build(&t, &warm, &opts).unwrap();
        assert_eq!(warm.provider_calls(), 0);
    }

    #[test]
    fn threshold_keeps_labels_within_tau() {
        // distances 1 - cos(theta) chosen as 0.1, 0.3, 0.5, 0.9
        let entries = [0.1f64, 0.3, 0.5, 0.9]
            .iter()
            .enumerate()
            .map(|(i, d)| (1, LabelId(i as u32), unit((1.0 - d).acos())));
        let idx = LevelIndex::from_vectors(1, entries);
        let x = unit(0.0);
        let q = idx.query_candidates(&x, 1, &RetrievalConfig::threshold([(1, 0.4)])).unwrap();
        assert_eq!(q.ids().collect::<Vec<_>>(), [LabelId(0), LabelId(1)]);
        for (c, want) in q.members.iter().zip([0.1, 0.3]) {
            assert!((c.distance - want).abs() < 1e-12);
        }
    }

    #[test]
    fn k_boundaries() {
        let idx = LevelIndex::from_vectors(1, (0..3).map(|i| (1, LabelId(i), unit(i as f64 * 0.3))));
        let x = unit(0.0);
        assert!(idx.query_candidates(&x, 1, &RetrievalConfig::top_k([(1, 0)])).is_err());
        assert!(RetrievalConfig::top_k([(1, 0)]).validate(1).is_err());
        let all = idx.query_candidates(&x, 1, &RetrievalConfig::top_k([(1, 99)])).unwrap();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let v = unit(0.5);
        let idx = LevelIndex::from_vectors(1, [(1, LabelId(7), v.clone()), (1, LabelId(2), v.clone()), (1, LabelId(4), v)]);
        let q = idx.query_candidates(&unit(0.0), 1, &RetrievalConfig::top_k([(1, 2)])).unwrap();
        assert_eq!(q.ids().collect::<Vec<_>>(), [LabelId(2), LabelId(4)]);
    }

    #[test]
    fn missing_levels_and_ranges() {
        let idx = LevelIndex::from_vectors(2, [(1, LabelId(0), unit(0.0))]);
        let cfg = RetrievalConfig::top_k([(1, 1), (2, 1)]);
        assert!(matches!(idx.query_candidates(&unit(0.0), 2, &cfg), Err(IndexError::IndexNotBuilt(2))));
        assert!(matches!(
            idx.query_candidates(&unit(0.0), 3, &cfg),
            Err(IndexError::LevelOutOfRange { level: 3, depth: 2 })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig::threshold([(1, 2.5)]).validate(1).is_err());
        assert!(RetrievalConfig::threshold([(1, 0.0)]).validate(1).is_ok());
        assert!(RetrievalConfig::top_k([(1, 3)]).validate(2).is_err());
        let t = Taxonomy::from_rows([["a", "b", "c"], ["d", "e", "f"]]).unwrap();
        let d = RetrievalConfig::defaults_for(&t);
        assert_eq!(d.k_per_level, BTreeMap::from([(1, 2), (2, 10), (3, 40)]));
        let t2 = Taxonomy::from_rows([["a", "b"]]).unwrap();
        assert_eq!(RetrievalConfig::defaults_for(&t2).k_per_level[&2], 20);
    }

    #[test]
    fn path_context_text() {
        let t = Taxonomy::from_rows([["a", "b"]]).unwrap();
        let b = t.find(2, "b").unwrap();
        assert_eq!(LevelIndex::label_text(&t, b, false), "b");
        assert_eq!(LevelIndex::label_text(&t, b, true), "a > b");
    }
}
