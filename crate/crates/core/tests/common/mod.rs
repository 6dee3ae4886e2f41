//! Generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use taxorag_core::harness::{DatasetConfig, RunConfig};
use taxorag_core::taxonomy::{LabelId, Taxonomy};

const WORDS: &[&str] = &[
    "red", "blue", "green", "stone", "river", "paper", "glass", "metal", "cloud", "seed", "bread", "lamp", "chair",
    "music", "garden", "engine", "winter", "salt", "honey", "wire", "brush", "tower", "field", "crystal", "shadow",
    "silver", "harbor", "forest", "candle", "mirror",
];

/// A generated taxonomy together with the generator's own record of it.
pub struct GenTaxonomy {
    pub taxonomy: Taxonomy,
    /// Names per level, level 1 first, in generation order.
    pub levels: Vec<Vec<String>>,
    /// (parent name, child name), names unique across the whole taxonomy.
    pub edges: BTreeSet<(String, String)>,
    pub rows: Vec<Vec<String>>,
}

impl GenTaxonomy {
    pub fn id(&self, level: usize, name: &str) -> LabelId {
        self.taxonomy.find(level, name).unwrap_or_else(|| panic!("{name} not at level {level}"))
    }

    pub fn children_of(&self, parent: &str) -> BTreeSet<String> {
        self.edges.iter().filter(|(p, _)| p == parent).map(|(_, c)| c.clone()).collect()
    }

    pub fn parent_of(&self, child: &str) -> Option<String> {
        self.edges.iter().find(|(_, c)| c == child).map(|(p, _)| p.clone())
    }
}

fn fresh_name(rng: &mut impl Rng, used: &mut BTreeSet<String>) -> String {
    let n = rng.gen_range(1..=3);
    let mut name: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    name.dedup();
    let mut s = name.join(" ");
    let mut i = 2;
    while used.contains(&s) {
        s = format!("{} {}", name.join(" "), i);
        i += 1;
    }
    used.insert(s.clone());
    s
}

/// Random leveled forest with at most `max_labels` labels.
pub fn random_taxonomy(rng: &mut impl Rng, depth: usize, max_labels: usize) -> GenTaxonomy {
    assert!(depth >= 1);
    let mut used = BTreeSet::new();
    let fanout = rng.gen_range(3..=14);
    let roots = rng.gen_range(1..=fanout.min(max_labels / depth).max(1));
    let mut levels: Vec<Vec<String>> = vec![(0..roots).map(|_| fresh_name(rng, &mut used)).collect()];
    let mut edges = BTreeSet::new();
    let mut total = roots;
    for level in 2..=depth {
        let mut next = Vec::new();
        let parents = levels[level - 2].clone();
        // every parent needs at least one child so all rows reach full depth
        let remaining_levels = depth - level + 1;
        for (i, p) in parents.iter().enumerate() {
            let later_parents = parents.len() - i - 1;
            let budget = max_labels.saturating_sub(total + later_parents * remaining_levels);
            let cap = (budget / remaining_levels).clamp(1, fanout);
            for _ in 0..rng.gen_range(1..=cap) {
                let c = fresh_name(rng, &mut used);
                edges.insert((p.clone(), c.clone()));
                next.push(c);
                total += 1;
            }
        }
        levels.push(next);
    }
    // rows: one per leaf, shuffled so id order differs from generation order
    let parent: BTreeMap<&String, &String> = edges.iter().map(|(p, c)| (c, p)).collect();
    let mut rows: Vec<Vec<String>> = levels[depth - 1]
        .iter()
        .map(|leaf| {
            let mut row = vec![leaf.clone()];
            let mut cur = leaf;
            while let Some(p) = parent.get(cur) {
                row.push((*p).clone());
                cur = p;
            }
            row.reverse();
            row
        })
        .collect();
    rows.shuffle(rng);
    let taxonomy = Taxonomy::from_rows(&rows).expect("generated taxonomy is valid");
    GenTaxonomy { taxonomy, levels, edges, rows }
}

/// Short random pseudo-word that never collides with `WORDS`.
pub fn pseudo_word(rng: &mut impl Rng, used: &mut BTreeSet<String>) -> String {
    const LETTERS: &[u8] = b"bcdfghjklmnpqrstvwxz";
    const VOWELS: &[u8] = b"aeiou";
    loop {
        let w: String = (0..3)
            .flat_map(|_| [*LETTERS.choose(rng).unwrap() as char, *VOWELS.choose(rng).unwrap() as char])
            .collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

/// How a synthetic document relates to its gold path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocKind {
    /// Both tokens of every gold label.
    Clean,
    /// Level 1 is steered to a wrong label: all of its tokens, one gold one.
    WrongRoot,
    /// Like `WrongRoot`, plus one token of an unrelated level-2 label
    /// repeated to pull retrieval away from the gold level-2 label.
    WrongRootAndRetrieval,
}

pub struct SyntheticCorpus {
    pub gen: GenTaxonomy,
    /// (id, text, gold path names)
    pub docs: Vec<(String, String, Vec<String>)>,
    pub kinds: Vec<DocKind>,
}

/// Three-level corpus whose label names are two unique pseudo-words each,
/// so token overlap singles out the gold label whenever it is offered.
pub fn synthetic_corpus(rng: &mut impl Rng, n_docs: usize) -> SyntheticCorpus {
    let mut used = BTreeSet::new();
    let mut name = |rng: &mut _| format!("{} {}", pseudo_word(rng, &mut used), pseudo_word(rng, &mut used));
    let l1: Vec<String> = (0..6).map(|_| name(rng)).collect();
    let mut l2 = Vec::new();
    let mut rows = Vec::new();
    for a in &l1 {
        for _ in 0..4 {
            let b = name(rng);
            for _ in 0..3 {
                let c = name(rng);
                rows.push(vec![a.clone(), b.clone(), c.clone()]);
            }
            l2.push(b);
        }
    }
    let filler = ["the", "item", "works", "well", "and", "arrived", "quickly"];
    let mut docs = Vec::new();
    let mut kinds = Vec::new();
    for i in 0..n_docs {
        let row = rows.choose(rng).unwrap().clone();
        let kind = match rng.gen_range(0..10) {
            0..=5 => DocKind::Clean,
            6..=7 => DocKind::WrongRoot,
            _ => DocKind::WrongRootAndRetrieval,
        };
        let mut words: Vec<String> = Vec::new();
        let toks = |s: &str| s.split(' ').map(str::to_owned).collect::<Vec<_>>();
        match kind {
            DocKind::Clean => words.extend(toks(&row[0])),
            _ => {
                let wrong = loop {
                    let w = l1.choose(rng).unwrap();
                    if *w != row[0] {
                        break w.clone();
                    }
                };
                words.extend(toks(&wrong));
                words.push(toks(&row[0])[0].clone());
            }
        }
        words.extend(toks(&row[1]));
        words.extend(toks(&row[2]));
        if kind == DocKind::WrongRootAndRetrieval {
            let decoy = loop {
                let d = l2.choose(rng).unwrap();
                if *d != row[1] {
                    break d.clone();
                }
            };
            for _ in 0..6 {
                words.push(toks(&decoy)[0].clone());
            }
        }
        words.extend(filler.choose_multiple(rng, 3).map(|s| s.to_string()));
        words.shuffle(rng);
        docs.push((format!("doc-{i:04}"), words.join(" "), row));
        kinds.push(kind);
    }
    // describe exactly the taxonomy ingestion will induce: labels that occur
    // in documents, ids in order of first appearance
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (_, _, gold) in &docs {
        if !rows.contains(gold) {
            rows.push(gold.clone());
        }
    }
    let mut levels: Vec<Vec<String>> = vec![Vec::new(); 3];
    for row in &rows {
        for (l, name) in row.iter().enumerate() {
            if !levels[l].contains(name) {
                levels[l].push(name.clone());
            }
        }
    }
    let edges = rows.iter().flat_map(|r| [(r[0].clone(), r[1].clone()), (r[1].clone(), r[2].clone())]).collect();
    let taxonomy = Taxonomy::from_rows(&rows).unwrap();
    SyntheticCorpus { gen: GenTaxonomy { taxonomy, levels, edges, rows }, docs, kinds }
}

/// Write `id,text,c1..cL` with a header.
pub fn write_dataset(dir: &Path, docs: &[(String, String, Vec<String>)]) -> PathBuf {
    let path = dir.join("dataset.csv");
    let depth = docs.first().map_or(0, |d| d.2.len());
    let mut w = csv::Writer::from_path(&path).unwrap();
    let mut header = vec!["id".to_string(), "text".to_string()];
    header.extend((1..=depth).map(|l| format!("c{l}")));
    w.write_record(&header).unwrap();
    for (id, text, gold) in docs {
        let mut rec = vec![id.clone(), text.clone()];
        rec.extend(gold.iter().cloned());
        w.write_record(&rec).unwrap();
    }
    w.flush().unwrap();
    path
}

pub fn config_for(dataset: &Path, depth: usize, output_dir: &Path) -> RunConfig {
    RunConfig {
        dataset: DatasetConfig {
            path: dataset.to_path_buf(),
            text_fields: vec!["text".into()],
            gold_fields: (1..=depth).map(|l| format!("c{l}")).collect(),
            id_field: Some("id".into()),
            ..Default::default()
        },
        output_dir: output_dir.to_path_buf(),
        ..Default::default()
    }
}
