//! Level-wise zero-shot classification.
//!
//! For each document: embed, retrieve candidates and the subgraph once, then
//! for levels 1..L build the candidate list, prompt the chat model, and map
//! its answer back to a label of that level. Answers that match nothing are
//! replaced by a uniform draw from the whole level, using one generator per
//! run that is consumed in (document index, level) order even when documents
//! run in parallel.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{embed, CandidateSet, EmbedError, EmbeddingProvider, IndexError, LevelIndex, RetrievalConfig};
use crate::llm::{complete, AuditLog, AuditRecord, ChatProvider, ChatRequest, GenerationConfig, LlmError};
use crate::prompt::{all_taxonomy_paths, build_prompt, enumerate_paths, serialize_paths, PromptError, PromptTemplate};
use crate::retrieval::{retrieve_subgraph, Retrieval};
use crate::taxonomy::{LabelId, Taxonomy, TaxonomyError};
use crate::text::normalize_label;

pub const FALLBACK_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierMode {
    /// Knowledge block from the per-document retrieved subgraph.
    #[default]
    KgHtc,
    /// Knowledge block lists every root-to-leaf path of the taxonomy.
    FullKg,
    /// No knowledge block; every label of the level is offered.
    WeakBaseline,
}

impl ClassifierMode {
    pub const ALL: [ClassifierMode; 3] = [Self::KgHtc, Self::FullKg, Self::WeakBaseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::KgHtc => "kg-htc",
            Self::FullKg => "full-kg",
            Self::WeakBaseline => "weak-baseline",
        }
    }
}

impl std::str::FromStr for ClassifierMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected kg-htc, full-kg or weak-baseline)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchKind {
    Exact,
    Containment,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub mode: ClassifierMode,
    /// Fills `{task_description}` in the template, e.g. "the review of a product".
    pub task_description: String,
    pub retrieval: RetrievalConfig,
    pub generation: GenerationConfig,
    pub template: PromptTemplate,
    /// Accept an answer that contains exactly one candidate name (or is
    /// contained in one). Off means exact match or random fallback only.
    pub containment_matching: bool,
    pub fallback_seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            mode: ClassifierMode::KgHtc,
            task_description: "the text".into(),
            retrieval: RetrievalConfig::default(),
            generation: GenerationConfig::default(),
            template: PromptTemplate::default(),
            containment_matching: true,
            fallback_seed: FALLBACK_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    /// Normalized gold label names, level 1 first.
    #[serde(default)]
    pub gold: Option<Vec<String>>,
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("document {0} has empty text")]
    EmptyText(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

impl ClassifyError {
    /// Failures caused by a remote provider rather than by the input.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            Self::Llm(LlmError::ProviderExhausted { .. } | LlmError::Auth(_) | LlmError::MalformedResponse(_))
                | Self::Embed(EmbedError::Provider { .. })
                | Self::Index(IndexError::Embed(EmbedError::Provider { .. }))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelPrediction {
    pub level: usize,
    pub raw_output: String,
    pub label: LabelId,
    pub match_kind: MatchKind,
    /// Labels offered in the prompt, in prompt order.
    pub candidates: Vec<LabelId>,
    pub prompt_hash: String,
    pub had_knowledge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub document_id: String,
    pub levels: Vec<LevelPrediction>,
    pub retrieval: Retrieval,
    pub path_count: usize,
}

impl Prediction {
    pub fn labels(&self) -> Vec<LabelId> {
        self.levels.iter().map(|l| l.label).collect()
    }
}

/// Labels offered at `level`. Level 1 and weak-baseline offer the whole
/// level; otherwise the children of the previous prediction come first (by
/// id), then retrieved labels not already present (nearest first). An empty
/// result falls back to the whole level.
pub fn candidate_set_for_level(
    taxonomy: &Taxonomy,
    level: usize,
    previous: Option<LabelId>,
    retrieved: &CandidateSet,
    mode: ClassifierMode,
) -> Vec<LabelId> {
    let whole_level = || taxonomy.labels_at_level(level).map(<[_]>::to_vec).unwrap_or_default();
    if level == 1 || mode == ClassifierMode::WeakBaseline {
        return whole_level();
    }
    let mut out: Vec<LabelId> = previous
        .and_then(|p| taxonomy.children(p).ok())
        .map(<[_]>::to_vec)
        .unwrap_or_default();
    let mut seen: BTreeSet<LabelId> = out.iter().copied().collect();
    for id in retrieved.ids() {
        if taxonomy.level_of(id) == level && seen.insert(id) {
            out.push(id);
        }
    }
    if out.is_empty() {
        whole_level()
    } else {
        out
    }
}

fn padded(s: &str) -> String {
    format!(" {s} ")
}

/// Exact or containment match of a model answer against the offered
/// candidates, or `None` when the answer needs a fallback draw.
pub fn match_output(
    raw_output: &str,
    candidates: &[LabelId],
    taxonomy: &Taxonomy,
    containment: bool,
) -> Option<(LabelId, MatchKind)> {
    let out = normalize_label(raw_output);
    if out.is_empty() {
        return None;
    }
    if let Some(&id) = candidates.iter().find(|&&c| taxonomy.name(c) == out) {
        return Some((id, MatchKind::Exact));
    }
    if !containment {
        return None;
    }
    let (out_p, mut hits) = (padded(&out), Vec::new());
    for &c in candidates {
        let name_p = padded(taxonomy.name(c));
        if out_p.contains(&name_p) || name_p.contains(&out_p) {
            hits.push(c);
        }
    }
    match hits.as_slice() {
        [only] => Some((*only, MatchKind::Containment)),
        _ => None,
    }
}

/// Map a model answer to a label: exact, then containment, then a uniform
/// draw from `level_labels`.
pub fn map_output_to_label<R: Rng>(
    raw_output: &str,
    candidates: &[LabelId],
    level_labels: &[LabelId],
    taxonomy: &Taxonomy,
    containment: bool,
    rng: &mut R,
) -> (LabelId, MatchKind) {
    match_output(raw_output, candidates, taxonomy, containment)
        .unwrap_or_else(|| (level_labels[rng.gen_range(0..level_labels.len())], MatchKind::Fallback))
}

/// Run-wide fallback generator. A document may draw only after every
/// lower-indexed document has finished, so the draw order is
/// (document index, level) regardless of scheduling.
pub struct FallbackSequencer {
    state: Mutex<SequencerState>,
    turn: Condvar,
}

struct SequencerState {
    rng: ChaCha8Rng,
    watermark: usize,
    finished: BTreeSet<usize>,
}

impl FallbackSequencer {
    pub fn new(seed: u64) -> Self {
        Self {
            state: Mutex::new(SequencerState {
                rng: ChaCha8Rng::seed_from_u64(seed),
                watermark: 0,
                finished: BTreeSet::new(),
            }),
            turn: Condvar::new(),
        }
    }

    pub fn draw(&self, doc_index: usize, labels: &[LabelId]) -> LabelId {
        let mut st = self.state.lock().unwrap();
        while st.watermark < doc_index {
            st = self.turn.wait(st).unwrap();
        }
        let i = st.rng.gen_range(0..labels.len());
        labels[i]
    }

    pub fn finish(&self, doc_index: usize) {
        let mut st = self.state.lock().unwrap();
        st.finished.insert(doc_index);
        loop {
            let w = st.watermark;
            if !st.finished.remove(&w) {
                break;
            }
            st.watermark += 1;
        }
        self.turn.notify_all();
    }
}

struct FinishGuard<'a> {
    seq: &'a FallbackSequencer,
    doc_index: usize,
}

impl Drop for FinishGuard<'_> {
    fn drop(&mut self) {
        self.seq.finish(self.doc_index);
    }
}

pub fn prompt_hash(system: &str, user: &str) -> String {
    let mut h = Sha256::new();
    h.update(system.as_bytes());
    h.update([0u8]);
    h.update(user.as_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Outcome of one document inside a batch.
#[derive(Debug)]
pub struct DocumentOutcome {
    pub index: usize,
    pub document_id: String,
    pub result: Result<Prediction, ClassifyError>,
}

pub struct Classifier<'a> {
    taxonomy: &'a Taxonomy,
    index: &'a LevelIndex,
    embedder: &'a dyn EmbeddingProvider,
    llm: &'a dyn ChatProvider,
    config: &'a ClassifierConfig,
    audit: Option<&'a AuditLog>,
    full_knowledge: String,
}

impl<'a> Classifier<'a> {
    pub fn new(
        taxonomy: &'a Taxonomy,
        index: &'a LevelIndex,
        embedder: &'a dyn EmbeddingProvider,
        llm: &'a dyn ChatProvider,
        config: &'a ClassifierConfig,
    ) -> Self {
        let full_knowledge = match config.mode {
            ClassifierMode::FullKg => serialize_paths(taxonomy, &all_taxonomy_paths(taxonomy)),
            _ => String::new(),
        };
        Self { taxonomy, index, embedder, llm, config, audit: None, full_knowledge }
    }

    pub fn with_audit(mut self, audit: &'a AuditLog) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn config(&self) -> &ClassifierConfig {
        self.config
    }

    /// Classify one document. `doc_index` is its position in the run and
    /// fixes its place in the fallback draw order.
    pub fn classify_document(
        &self,
        doc: &Document,
        doc_index: usize,
        fallback: &FallbackSequencer,
    ) -> Result<Prediction, ClassifyError> {
        let _done = FinishGuard { seq: fallback, doc_index };
        if doc.text.trim().is_empty() {
            return Err(ClassifyError::EmptyText(doc.id.clone()));
        }
        let t = self.taxonomy;
        let x = embed(self.embedder, &doc.text)?;
        let retrieval = retrieve_subgraph(t, self.index, &x, &self.config.retrieval)?;
        let (knowledge, path_count) = match self.config.mode {
            ClassifierMode::KgHtc => {
                let paths = enumerate_paths(t, &retrieval.subgraph);
                (serialize_paths(t, &paths), paths.len())
            }
            ClassifierMode::FullKg => (self.full_knowledge.clone(), t.labels_at_level(t.depth())?.len()),
            ClassifierMode::WeakBaseline => (String::new(), 0),
        };

        let mut levels: Vec<LevelPrediction> = Vec::with_capacity(t.depth());
        for level in 1..=t.depth() {
            let previous = levels.last().map(|p| p.label);
            let candidates =
                candidate_set_for_level(t, level, previous, retrieval.at(level), self.config.mode);
            let names: Vec<String> = candidates.iter().map(|&c| t.name(c).to_owned()).collect();
            let bundle = build_prompt(&self.config.template, &self.config.task_description, &names, &knowledge)?;
            let request = ChatRequest {
                system_text: bundle.text,
                user_text: doc.text.clone(),
                candidates: names,
                level: Some(level),
                document_id: Some(doc.id.clone()),
            };
            let exchange = complete(self.llm, &request, &self.config.generation)?;
            if let Some(audit) = self.audit {
                if let Err(e) = audit.append(&AuditRecord::new(&doc.id, level, &exchange)) {
                    log::warn!("audit log write failed: {e}");
                }
            }
            let (label, match_kind) =
                match match_output(&exchange.response_text, &candidates, t, self.config.containment_matching) {
                    Some(hit) => hit,
                    None => (fallback.draw(doc_index, t.labels_at_level(level)?), MatchKind::Fallback),
                };
            levels.push(LevelPrediction {
                level,
                raw_output: exchange.response_text,
                label,
                match_kind,
                candidates,
                prompt_hash: prompt_hash(&request.system_text, &request.user_text),
                had_knowledge: !knowledge.is_empty(),
            });
        }
        Ok(Prediction { document_id: doc.id.clone(), levels, retrieval, path_count })
    }

    /// Classify `docs` with up to `workers` threads. Documents are claimed in
    /// order; once `cancel` is set no new document is started. Outcomes come
    /// back sorted by index and cover only started documents.
    pub fn classify_all(
        &self,
        docs: &[Document],
        workers: usize,
        cancel: Option<&AtomicBool>,
    ) -> Vec<DocumentOutcome> {
        self.classify_all_observed(docs, workers, cancel, &|_| {})
    }

    /// Like [`Classifier::classify_all`], calling `observe` as each document
    /// finishes (in completion order).
    pub fn classify_all_observed(
        &self,
        docs: &[Document],
        workers: usize,
        cancel: Option<&AtomicBool>,
        observe: &(dyn Fn(&DocumentOutcome) + Sync),
    ) -> Vec<DocumentOutcome> {
        let fallback = FallbackSequencer::new(self.config.fallback_seed);
        let next = AtomicUsize::new(0);
        let outcomes = Mutex::new(Vec::with_capacity(docs.len()));
        std::thread::scope(|s| {
            for _ in 0..workers.clamp(1, docs.len().max(1)) {
                s.spawn(|| loop {
                    if cancel.is_some_and(|c| c.load(Ordering::SeqCst)) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(doc) = docs.get(i) else { break };
                    let result = self.classify_document(doc, i, &fallback);
                    let outcome = DocumentOutcome { index: i, document_id: doc.id.clone(), result };
                    observe(&outcome);
                    outcomes.lock().unwrap().push(outcome);
                });
            }
        });
        let mut outcomes = outcomes.into_inner().unwrap();
        outcomes.sort_by_key(|o| o.index);
        outcomes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{BuildOptions, Candidate, HashEmbedder};
    use crate::llm::{FnMock, RecordingProvider, ScriptedMock};

    fn cset(level: usize, ids: &[(LabelId, f64)]) -> CandidateSet {
        CandidateSet {
            level,
            members: ids.iter().map(|&(label, distance)| Candidate { label, distance }).collect(),
        }
    }

    #[test]
    fn level_one_offers_everything_in_id_order() {
        let t = Taxonomy::from_rows([["health", "h"], ["toys", "t"], ["pets", "p"]]).unwrap();
        let got = candidate_set_for_level(&t, 1, None, &cset(1, &[]), ClassifierMode::KgHtc);
        let names: Vec<_> = got.iter().map(|&i| t.name(i)).collect();
        assert_eq!(names, ["health", "toys", "pets"]);
    }

    #[test]
    fn union_children_first_then_retrieved() {
        let t = Taxonomy::from_rows([["a", "b"], ["a", "c"], ["x", "e"]]).unwrap();
        let id = |l, n| t.find(l, n).unwrap();
        let q = cset(2, &[(id(2, "c"), 0.2), (id(2, "e"), 0.3)]);
        let got = candidate_set_for_level(&t, 2, Some(id(1, "a")), &q, ClassifierMode::KgHtc);
        assert_eq!(got, [id(2, "b"), id(2, "c"), id(2, "e")]);
        let weak = candidate_set_for_level(&t, 2, Some(id(1, "a")), &q, ClassifierMode::WeakBaseline);
        assert_eq!(weak.len(), 3);
    }

    #[test]
    fn empty_union_falls_back_to_whole_level() {
        let t = Taxonomy::from_rows([["a", "b", "c"], ["d", "e", "f"]]).unwrap();
        let got = candidate_set_for_level(&t, 2, None, &cset(2, &[]), ClassifierMode::KgHtc);
        assert_eq!(got, t.labels_at_level(2).unwrap());
    }

    #[test]
    fn output_matching_tiers() {
        let t = Taxonomy::from_rows([["pets", "dogs"], ["pets", "cat flaps"], ["pets", "cats"]]).unwrap();
        let c: Vec<_> = t.labels_at_level(2).unwrap().to_vec();
        let dogs = t.find(2, "dogs").unwrap();
        let flaps = t.find(2, "cat flaps").unwrap();
        assert_eq!(match_output("Dogs*", &c, &t, true), Some((dogs, MatchKind::Exact)));
        assert_eq!(
            match_output("the category is cat flaps", &c, &t, true),
            Some((flaps, MatchKind::Containment))
        );
        assert_eq!(match_output("the category is cat flaps", &c, &t, false), None);
        // "cat" is inside "cat flaps" only
        assert_eq!(match_output("cat", &c, &t, true), Some((flaps, MatchKind::Containment)));
        // two candidates contained: ambiguous
        assert_eq!(match_output("dogs or cats", &c, &t, true), None);
        assert_eq!(match_output("xyzzy", &c, &t, true), None);
        assert_eq!(match_output("***", &c, &t, true), None);
    }

    #[test]
    fn fallback_draw_is_seeded() {
        let t = Taxonomy::from_rows((0..20).map(|i| vec!["r".to_string(), format!("l{i}")])).unwrap();
        let level = t.labels_at_level(2).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(FALLBACK_SEED);
            (0..10).map(|_| map_output_to_label("xyzzy", level, level, &t, true, &mut rng)).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().all(|(_, k)| *k == MatchKind::Fallback));
        assert!(a.iter().map(|(l, _)| l).collect::<BTreeSet<_>>().len() > 1);
    }

    fn toy_setup() -> (Taxonomy, LevelIndex) {
        let t = Taxonomy::from_rows([
            ["pet supplies", "cats", "cat flaps"],
            ["pet supplies", "dogs", "doors"],
            ["baby products", "safety", "gates doorways"],
        ])
        .unwrap();
        let idx = LevelIndex::build(&t, &HashEmbedder::default(), &BuildOptions::default()).unwrap();
        (t, idx)
    }

    #[test]
    fn closed_loop_with_scripted_gold() {
        let (t, idx) = toy_setup();
        let e = HashEmbedder::default();
        let llm = ScriptedMock::new(["Pet Supplies", "\"cats\"", "cat flaps"]);
        let cfg = ClassifierConfig {
            retrieval: RetrievalConfig::defaults_for(&t),
            ..Default::default()
        };
        let c = Classifier::new(&t, &idx, &e, &llm, &cfg);
        let doc = Document { id: "d1".into(), text: "a flap door for cats".into(), gold: None };
        let p = c.classify_document(&doc, 0, &FallbackSequencer::new(42)).unwrap();
        let names: Vec<_> = p.labels().iter().map(|&l| t.name(l)).collect();
        assert_eq!(names, ["pet supplies", "cats", "cat flaps"]);
        assert!(p.levels.iter().all(|l| l.match_kind == MatchKind::Exact));
    }

    #[test]
    fn weak_baseline_prompts_have_no_knowledge() {
        let (t, idx) = toy_setup();
        let e = HashEmbedder::default();
        let inner = FnMock::new(|_: &ChatRequest| Ok("nonsense".to_string()));
        let llm = RecordingProvider::new(&inner);
        let cfg = ClassifierConfig {
            mode: ClassifierMode::WeakBaseline,
            retrieval: RetrievalConfig::defaults_for(&t),
            ..Default::default()
        };
        let c = Classifier::new(&t, &idx, &e, &llm, &cfg);
        let doc = Document { id: "d".into(), text: "cats".into(), gold: None };
        let p = c.classify_document(&doc, 0, &FallbackSequencer::new(42)).unwrap();
        for (req, lp) in llm.requests().iter().zip(&p.levels) {
            assert!(!req.system_text.contains("knowledge graph"));
            assert_eq!(req.candidates.len(), t.labels_at_level(lp.level).unwrap().len());
            assert_eq!(lp.match_kind, MatchKind::Fallback);
        }
    }

    #[test]
    fn provider_failure_is_per_document() {
        let (t, idx) = toy_setup();
        let e = HashEmbedder::default();
        let llm = FnMock::new(|r: &ChatRequest| {
            if r.document_id.as_deref() == Some("bad") {
                Err(LlmError::ProviderExhausted { attempts: 3, last: "503".into() })
            } else {
                Ok("pet supplies".into())
            }
        });
        let cfg = ClassifierConfig { retrieval: RetrievalConfig::defaults_for(&t), ..Default::default() };
        let c = Classifier::new(&t, &idx, &e, &llm, &cfg);
        let docs = ["ok1", "bad", "ok2"].map(|id| Document { id: id.into(), text: "cats".into(), gold: None });
        let out = c.classify_all(&docs, 2, None);
        assert_eq!(out.len(), 3);
        assert!(out[0].result.is_ok() && out[2].result.is_ok());
        let err = out[1].result.as_ref().unwrap_err();
        assert!(err.is_provider_failure());
    }

    #[test]
    fn sequencer_orders_draws_by_document() {
        let seq = FallbackSequencer::new(42);
        let labels: Vec<LabelId> = (0..1000).map(LabelId).collect();
        let order = Mutex::new(Vec::new());
        std::thread::scope(|s| {
            for doc in (0..4).rev() {
                let (seq, labels, order) = (&seq, &labels, &order);
                s.spawn(move || {
                    let l = seq.draw(doc, labels);
                    order.lock().unwrap().push((doc, l));
                    seq.finish(doc);
                });
            }
        });
        let order = order.into_inner().unwrap();
        assert_eq!(order.iter().map(|(d, _)| *d).collect::<Vec<_>>(), [0, 1, 2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let expect: Vec<LabelId> = (0..4).map(|_| labels[rng.gen_range(0..labels.len())]).collect();
        assert_eq!(order.iter().map(|(_, l)| *l).collect::<Vec<_>>(), expect);
    }
}
