//! Dataset ingestion: documents plus (optionally) the taxonomy induced from
//! their gold columns.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::config::{delimiter_byte, DatasetConfig, DatasetFormat, TaxonomySource};
use super::HarnessError;
use crate::classifier::Document;
use crate::taxonomy::Taxonomy;
use crate::text::{collapse_whitespace, normalize_label};

#[derive(Debug, Clone)]
pub struct Ingested {
    pub documents: Vec<Document>,
    pub taxonomy: Taxonomy,
}

fn parse_err(line: u64, message: impl Into<String>) -> HarnessError {
    HarnessError::Parse { line, message: message.into() }
}

/// Turn one raw row (field lookup + line number) into a document.
fn make_document(
    cfg: &DatasetConfig,
    line: u64,
    row_index: usize,
    field: &dyn Fn(&str) -> Option<String>,
) -> Result<Document, HarnessError> {
    let parts: Vec<String> = cfg
        .text_fields
        .iter()
        .filter_map(|f| field(f))
        .map(|s| collapse_whitespace(&s))
        .filter(|s| !s.is_empty())
        .collect();
    if parts.is_empty() {
        return Err(parse_err(line, format!("row {row_index} has empty text")));
    }
    let text = parts.join(&cfg.text_join);
    let id = match &cfg.id_field {
        Some(f) => field(f)
            .map(|s| s.trim().to_owned())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| parse_err(line, format!("row {row_index} has no id in field {f:?}")))?,
        None => format!("row-{row_index}"),
    };
    let gold = if cfg.gold_fields.is_empty() {
        None
    } else {
        let labels = cfg
            .gold_fields
            .iter()
            .map(|f| {
                let raw = field(f).ok_or_else(|| parse_err(line, format!("row {row_index} lacks gold field {f:?}")))?;
                let name = normalize_label(&raw);
                if name.is_empty() {
                    Err(parse_err(line, format!("row {row_index} has an empty gold label in {f:?}")))
                } else {
                    Ok(name)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Some(labels)
    };
    Ok(Document { id, text, gold })
}

fn read_delimited(cfg: &DatasetConfig, delimiter: char, has_header: bool) -> Result<Vec<Document>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter_byte(delimiter)?)
        .has_headers(has_header)
        .flexible(true)
        .from_path(&cfg.path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", cfg.path.display())))?;
    let columns: HashMap<String, usize> = if has_header {
        let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
        headers.iter().enumerate().map(|(i, h)| (h.trim().to_owned(), i)).collect()
    } else {
        HashMap::new()
    };
    let resolve = |name: &str| -> Result<usize, HarnessError> {
        if has_header {
            columns.get(name).copied().ok_or_else(|| HarnessError::Config(format!("no column named {name:?}")))
        } else {
            name.parse().map_err(|_| HarnessError::Config(format!("column {name:?} must be an index without a header")))
        }
    };
    let mut wanted: Vec<&String> = cfg.text_fields.iter().chain(&cfg.gold_fields).collect();
    wanted.extend(cfg.id_field.as_ref());
    let index: HashMap<String, usize> =
        wanted.into_iter().map(|f| resolve(f).map(|i| (f.clone(), i))).collect::<Result<_, _>>()?;

    let mut docs = Vec::new();
    for (row_index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |f: &str| index.get(f).and_then(|&i| record.get(i)).map(str::to_owned);
        docs.push(make_document(cfg, line, row_index, &field)?);
    }
    Ok(docs)
}

fn value_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

fn read_jsonl(cfg: &DatasetConfig) -> Result<Vec<Document>, HarnessError> {
    let file = File::open(&cfg.path).map_err(|e| HarnessError::Io(format!("{}: {e}", cfg.path.display())))?;
    let mut docs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n as u64 + 1;
        let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        if !obj.is_object() {
            return Err(parse_err(line_no, "expected a JSON object"));
        }
        let field = |f: &str| obj.get(f).and_then(value_text);
        docs.push(make_document(cfg, line_no, docs.len(), &field)?);
    }
    Ok(docs)
}

/// Read documents, then load or induce the taxonomy. With an explicit
/// taxonomy every gold path must exist in it.
pub fn ingest(cfg: &DatasetConfig, source: &TaxonomySource) -> Result<Ingested, HarnessError> {
    let documents = match &cfg.format {
        DatasetFormat::Delimited { delimiter, has_header } => read_delimited(cfg, *delimiter, *has_header)?,
        DatasetFormat::Jsonl => read_jsonl(cfg)?,
    };
    let taxonomy = match source {
        TaxonomySource::Induced => {
            let rows: Vec<Vec<String>> = documents.iter().filter_map(|d| d.gold.clone()).collect();
            Taxonomy::from_rows(rows)?
        }
        TaxonomySource::File { path, delimiter, has_header } => {
            let t = Taxonomy::from_delimited_file(path, delimiter_byte(*delimiter)?, *has_header)?;
            for d in &documents {
                let Some(gold) = &d.gold else { continue };
                if gold.len() != t.depth() {
                    return Err(HarnessError::Config(format!(
                        "document {} has {} gold levels, taxonomy has {}",
                        d.id,
                        gold.len(),
                        t.depth()
                    )));
                }
                for (i, name) in gold.iter().enumerate() {
                    if t.find(i + 1, name).is_none() {
                        return Err(HarnessError::Config(format!(
                            "document {}: gold label {name:?} is not in the taxonomy at level {}",
                            d.id,
                            i + 1
                        )));
                    }
                }
            }
            t
        }
    };
    Ok(Ingested { documents, taxonomy })
}

/// Indices of a seeded random sample of `size` documents, in file order.
pub fn sample_indices(total: usize, size: Option<usize>, seed: u64) -> Vec<usize> {
    match size {
        Some(n) if n < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, total, n).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..total).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn csv_cfg(path: std::path::PathBuf) -> DatasetConfig {
        DatasetConfig {
            path,
            text_fields: vec!["title".into(), "body".into()],
            gold_fields: vec!["c1".into(), "c2".into()],
            ..Default::default()
        }
    }

    #[test]
    fn five_row_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "d.csv",
            "title,body,c1,c2\nA cat flap,for cats,Pets,Cats\nBone,,pets,dogs\nRattle,baby toy,Baby,Toys\n\
             Gate,stairs,baby,safety\nLeash,walks,pets,dogs\n",
        );
        let ing = ingest(&csv_cfg(p), &TaxonomySource::Induced).unwrap();
        assert_eq!(ing.documents.len(), 5);
        assert_eq!(ing.documents[0].text, "A cat flap for cats");
        assert_eq!(ing.documents[1].text, "Bone");
        assert_eq!(ing.documents[0].gold.as_deref().unwrap(), ["pets", "cats"]);
        assert_eq!(ing.taxonomy.labels_at_level(1).unwrap().len(), 2);
        assert_eq!(ing.taxonomy.labels_at_level(2).unwrap().len(), 4);
        for d in &ing.documents {
            let g = d.gold.as_ref().unwrap();
            let child = ing.taxonomy.find(2, &g[1]).unwrap();
            assert_eq!(ing.taxonomy.parent(child).unwrap(), ing.taxonomy.find(1, &g[0]));
        }
    }

    #[test]
    fn empty_text_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "title,body,c1,c2\nok,,a,b\n ,  ,a,b\n");
        match ingest(&csv_cfg(p), &TaxonomySource::Induced).unwrap_err() {
            HarnessError::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("row 1"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conflicting_parent_propagates() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "title,body,c1,c2\nx,,a,b\ny,,z,b\n");
        assert!(matches!(
            ingest(&csv_cfg(p), &TaxonomySource::Induced),
            Err(HarnessError::Taxonomy(crate::taxonomy::TaxonomyError::ConflictingParent { .. }))
        ));
    }

    #[test]
    fn jsonl_with_explicit_taxonomy() {
        let dir = tempfile::tempdir().unwrap();
        let data = write(
            &dir,
            "d.jsonl",
            "{\"id\": 7, \"text\": \"hello\", \"l1\": \"A\", \"l2\": \"B\"}\n\n{\"id\": \"x\", \"text\": \"bye\", \"l1\": \"a\", \"l2\": \"b\"}\n",
        );
        let tax = write(&dir, "t.tsv", "a\tb\na\tc\n");
        let cfg = DatasetConfig {
            path: data,
            format: DatasetFormat::Jsonl,
            gold_fields: vec!["l1".into(), "l2".into()],
            id_field: Some("id".into()),
            ..Default::default()
        };
        let src = TaxonomySource::File { path: tax, delimiter: '\t', has_header: false };
        let ing = ingest(&cfg, &src).unwrap();
        assert_eq!(ing.documents[0].id, "7");
        assert_eq!(ing.taxonomy.len(), 3);

        let bad = write(&dir, "bad.jsonl", "{\"text\": \"t\", \"l1\": \"a\", \"l2\": \"zzz\"}\n");
        let cfg = DatasetConfig { path: bad, id_field: None, ..cfg };
        assert!(matches!(ingest(&cfg, &src), Err(HarnessError::Config(_))));
    }

    #[test]
    fn malformed_jsonl_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.jsonl", "{\"text\": \"a\"}\n{oops\n");
        let cfg = DatasetConfig { path: p, format: DatasetFormat::Jsonl, ..Default::default() };
        assert!(matches!(ingest(&cfg, &TaxonomySource::Induced), Err(HarnessError::Parse { line: 2, .. })));
    }

    #[test]
    fn sampling_is_seeded_and_ordered() {
        let a = sample_indices(100, Some(10), 42);
        assert_eq!(a, sample_indices(100, Some(10), 42));
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, sample_indices(100, Some(10), 43));
        assert_eq!(sample_indices(5, Some(10), 42), [0, 1, 2, 3, 4]);
        assert_eq!(sample_indices(3, None, 42), [0, 1, 2]);
    }
}
