//! F1-macro, decay rates, and Hit@K.
//!
//! Macro averages run over the full label space of a level. A class that is
//! never predicted and never gold still counts, with F1 = 0.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Debug;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::RunRecord;
use crate::taxonomy::{LabelId, Taxonomy};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{golds} gold labels but {predictions} predictions")]
    LengthMismatch { golds: usize, predictions: usize },
    #[error("label {0} is not in the label space")]
    UnknownLabel(String),
    #[error("level {level} has F1-macro 0, decay of level {} is undefined", level + 1)]
    DivisionByZero { level: usize },
    #[error("decay needs at least two levels, got {0}")]
    InsufficientLevels(usize),
    #[error("no retrieval log for document #{0}")]
    MissingLog(usize),
    #[error("hit rate over an empty document subset")]
    EmptySubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

/// Per-class scores over `label_space`, in label-space order.
pub fn per_class_scores<T>(golds: &[T], predictions: &[T], label_space: &[T]) -> Result<Vec<ClassScore>, EvalError>
where
    T: Eq + Hash + Debug,
{
    if golds.len() != predictions.len() {
        return Err(EvalError::LengthMismatch { golds: golds.len(), predictions: predictions.len() });
    }
    let slot: HashMap<&T, usize> = label_space.iter().enumerate().map(|(i, l)| (l, i)).collect();
    let lookup = |t: &T| slot.get(t).copied().ok_or_else(|| EvalError::UnknownLabel(format!("{t:?}")));
    let (mut tp, mut support, mut predicted) =
        (vec![0usize; label_space.len()], vec![0usize; label_space.len()], vec![0usize; label_space.len()]);
    for (g, p) in golds.iter().zip(predictions) {
        let (gi, pi) = (lookup(g)?, lookup(p)?);
        support[gi] += 1;
        predicted[pi] += 1;
        if gi == pi {
            tp[gi] += 1;
        }
    }
    Ok((0..label_space.len())
        .map(|i| {
            let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
            let (precision, recall) = (ratio(tp[i], predicted[i]), ratio(tp[i], support[i]));
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassScore { precision, recall, f1, support: support[i], predicted: predicted[i] }
        })
        .collect())
}

/// Unweighted mean of per-class F1 over every class in `label_space`.
pub fn f1_macro<T>(golds: &[T], predictions: &[T], label_space: &[T]) -> Result<f64, EvalError>
where
    T: Eq + Hash + Debug,
{
    let scores = per_class_scores(golds, predictions, label_space)?;
    if scores.is_empty() {
        return Ok(0.0);
    }
    Ok(scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRates {
    /// decay for levels 2..=L, in order.
    pub per_level: Vec<f64>,
    pub average: f64,
}

/// Relative F1 drop from each level to the next, and its mean.
pub fn decay_rates(per_level_f1: &[f64]) -> Result<DecayRates, EvalError> {
    if per_level_f1.len() < 2 {
        return Err(EvalError::InsufficientLevels(per_level_f1.len()));
    }
    let per_level = per_level_f1
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            if w[0] == 0.0 {
                Err(EvalError::DivisionByZero { level: i + 1 })
            } else {
                Ok((w[0] - w[1]) / w[0])
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let average = per_level.iter().sum::<f64>() / per_level.len() as f64;
    Ok(DecayRates { per_level, average })
}

/// Which documents a hit rate is computed over.
#[derive(Debug, Clone, Copy)]
pub enum HitSubset<'a, T> {
    All,
    /// Only documents whose prediction differs from gold.
    Misclassified(&'a [T]),
}

/// Fraction of documents in `subset` whose gold label is among the
/// retrieved candidates. `retrieved[i]` is `None` when document `i` has no
/// retrieval log.
pub fn hit_at_k<T: PartialEq>(
    retrieved: &[Option<Vec<T>>],
    golds: &[T],
    subset: HitSubset<'_, T>,
) -> Result<f64, EvalError> {
    if retrieved.len() < golds.len() {
        return Err(EvalError::MissingLog(retrieved.len()));
    }
    if let HitSubset::Misclassified(preds) = subset {
        if preds.len() != golds.len() {
            return Err(EvalError::LengthMismatch { golds: golds.len(), predictions: preds.len() });
        }
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for (i, gold) in golds.iter().enumerate() {
        if let HitSubset::Misclassified(preds) = subset {
            if preds[i] == *gold {
                continue;
            }
        }
        let log = retrieved[i].as_ref().ok_or(EvalError::MissingLog(i))?;
        total += 1;
        if log.contains(gold) {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(EvalError::EmptySubset);
    }
    Ok(hits as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    #[serde(flatten)]
    pub score: ClassScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub mode: String,
    pub taxonomy_fingerprint: String,
    pub level_sizes: Vec<usize>,
    pub documents_total: usize,
    pub documents_evaluated: usize,
    pub documents_failed: usize,
    pub per_level_f1_macro: Vec<f64>,
    pub per_level_accuracy: Vec<f64>,
    /// Per level, one entry per label of that level in id order.
    pub per_class_f1: Vec<Vec<ClassReport>>,
    pub decay_per_level: Vec<f64>,
    pub decay_avg: Option<f64>,
    pub hit_at_k: BTreeMap<usize, f64>,
    pub hit_at_k_misclassified: BTreeMap<usize, f64>,
    pub fallback_rate: Vec<f64>,
    pub conventions: BTreeMap<String, String>,
}

/// Order-independent hash of the taxonomy's paths.
pub fn taxonomy_fingerprint(taxonomy: &Taxonomy) -> String {
    let mut rows: Vec<String> = taxonomy.export_rows().into_iter().map(|r| r.join("\u{1f}")).collect();
    rows.sort();
    format!("{:016x}", crate::text::fnv1a64(rows.join("\n").as_bytes()))
}

/// Score a run report. Failed documents and documents without gold labels
/// are counted but not scored.
pub fn evaluate_run(
    taxonomy: &Taxonomy,
    records: &[RunRecord],
    dataset: &str,
    mode: &str,
) -> Result<MetricsReport, EvalError> {
    let depth = taxonomy.depth();
    let scored: Vec<&RunRecord> = records
        .iter()
        .filter(|r| !r.failed && r.gold.as_ref().is_some_and(|g| g.len() == depth))
        .collect();
    let resolve = |level: usize, name: &str| {
        taxonomy
            .find(level, name)
            .ok_or_else(|| EvalError::UnknownLabel(format!("{name:?} at level {level}")))
    };

    let mut report = MetricsReport {
        dataset: dataset.to_owned(),
        mode: mode.to_owned(),
        taxonomy_fingerprint: taxonomy_fingerprint(taxonomy),
        level_sizes: (1..=depth).map(|l| taxonomy.labels_at_level(l).map_or(0, <[_]>::len)).collect(),
        documents_total: records.len(),
        documents_evaluated: scored.len(),
        documents_failed: records.iter().filter(|r| r.failed).count(),
        per_level_f1_macro: Vec::new(),
        per_level_accuracy: Vec::new(),
        per_class_f1: Vec::new(),
        decay_per_level: Vec::new(),
        decay_avg: None,
        hit_at_k: BTreeMap::new(),
        hit_at_k_misclassified: BTreeMap::new(),
        fallback_rate: Vec::new(),
        conventions: BTreeMap::from([
            ("macro_average_over".into(), "full label space of each level".into()),
            ("zero_support_class_f1".into(), "0, included in the macro average".into()),
            ("decay".into(), "(F1[l-1] - F1[l]) / F1[l-1], averaged over levels 2..L".into()),
            ("hit_at_k".into(), "gold label among retrieved candidates at that level".into()),
        ]),
    };
    if scored.is_empty() {
        return Ok(report);
    }

    for level in 1..=depth {
        let space: &[LabelId] = taxonomy.labels_at_level(level).map_err(|e| EvalError::UnknownLabel(e.to_string()))?;
        let golds = scored
            .iter()
            .map(|r| resolve(level, &r.gold.as_ref().unwrap()[level - 1]))
            .collect::<Result<Vec<_>, _>>()?;
        let preds = scored
            .iter()
            .map(|r| {
                let rec = r.levels.get(level - 1).ok_or(EvalError::MissingLog(level))?;
                resolve(level, &rec.label)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let scores = per_class_scores(&golds, &preds, space)?;
        let macro_f1 = scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64;
        report.per_level_f1_macro.push(macro_f1);
        let correct = golds.iter().zip(&preds).filter(|(g, p)| g == p).count();
        report.per_level_accuracy.push(correct as f64 / golds.len() as f64);
        let fallbacks = scored
            .iter()
            .filter(|r| r.levels[level - 1].match_kind == crate::classifier::MatchKind::Fallback)
            .count();
        report.fallback_rate.push(fallbacks as f64 / scored.len() as f64);
        report.per_class_f1.push(
            space
                .iter()
                .zip(scores)
                .map(|(&id, score)| ClassReport { name: taxonomy.name(id).to_owned(), score })
                .collect(),
        );

        let logs: Vec<Option<Vec<LabelId>>> = scored
            .iter()
            .map(|r| {
                r.retrieved
                    .get(level - 1)
                    .map(|names| names.iter().filter_map(|n| taxonomy.find(level, n)).collect())
            })
            .collect();
        if let Ok(h) = hit_at_k(&logs, &golds, HitSubset::All) {
            report.hit_at_k.insert(level, h);
        }
        if let Ok(h) = hit_at_k(&logs, &golds, HitSubset::Misclassified(&preds)) {
            report.hit_at_k_misclassified.insert(level, h);
        }
    }
    if let Ok(d) = decay_rates(&report.per_level_f1_macro) {
        report.decay_per_level = d.per_level;
        report.decay_avg = Some(d.average);
    }
    Ok(report)
}
