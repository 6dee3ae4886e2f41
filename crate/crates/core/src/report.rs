//! Run report: one JSON line per document.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{DocumentOutcome, MatchKind};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: usize,
    pub raw_output: String,
    pub label: String,
    pub match_kind: MatchKind,
    pub candidate_count: usize,
    pub candidates: Vec<String>,
    pub prompt_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub gold: Option<Vec<String>>,
    pub levels: Vec<LevelRecord>,
    /// Retrieved candidate names per level, nearest first.
    pub retrieved: Vec<Vec<String>>,
    pub subgraph_edges: usize,
    pub path_count: usize,
}

impl RunRecord {
    pub fn from_outcome(taxonomy: &Taxonomy, outcome: &DocumentOutcome, gold: Option<Vec<String>>) -> Self {
        let names = |ids: &mut dyn Iterator<Item = crate::taxonomy::LabelId>| {
            ids.map(|i| taxonomy.name(i).to_owned()).collect::<Vec<_>>()
        };
        match &outcome.result {
            Ok(p) => RunRecord {
                id: outcome.document_id.clone(),
                failed: false,
                error: None,
                gold,
                levels: p
                    .levels
                    .iter()
                    .map(|l| LevelRecord {
                        level: l.level,
                        raw_output: l.raw_output.clone(),
                        label: taxonomy.name(l.label).to_owned(),
                        match_kind: l.match_kind,
                        candidate_count: l.candidates.len(),
                        candidates: names(&mut l.candidates.iter().copied()),
                        prompt_hash: l.prompt_hash.clone(),
                    })
                    .collect(),
                retrieved: p.retrieval.candidates.iter().map(|c| names(&mut c.ids())).collect(),
                subgraph_edges: p.retrieval.subgraph.edges.len(),
                path_count: p.path_count,
            },
            Err(e) => RunRecord {
                id: outcome.document_id.clone(),
                failed: true,
                error: Some(e.to_string()),
                gold,
                levels: Vec::new(),
                retrieved: Vec::new(),
                subgraph_edges: 0,
                path_count: 0,
            },
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_run_report(path: &Path) -> io::Result<Vec<RunRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}
