//! Label-path enumeration and classification prompt assembly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::Subgraph;
use crate::taxonomy::{LabelId, Taxonomy};

/// Root-to-leaf chain with one label per level, level 1 first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LabelPath {
    pub nodes: Vec<LabelId>,
}

impl LabelPath {
    pub fn render(&self, taxonomy: &Taxonomy) -> String {
        self.nodes
            .iter()
            .map(|&id| taxonomy.name(id))
            .collect::<Vec<_>>()
            .join(PATH_SEPARATOR)
    }
}

pub const PATH_SEPARATOR: &str = " -> ";

/// Every chain in `g` that starts at a level-1 node and ends at a level-L
/// node, where L is the taxonomy depth. Found by walking parent edges
/// upward from each level-L node with backtracking, then reversing.
pub fn enumerate_paths(taxonomy: &Taxonomy, g: &Subgraph) -> BTreeSet<LabelPath> {
    let depth = taxonomy.depth();
    let mut parents: BTreeMap<LabelId, Vec<LabelId>> = BTreeMap::new();
    for &(p, c) in &g.edges {
        if taxonomy.level_of(p) + 1 == taxonomy.level_of(c) {
            parents.entry(c).or_default().push(p);
        }
    }

    let mut paths = BTreeSet::new();
    for &leaf in g.nodes.iter().filter(|&&n| taxonomy.level_of(n) == depth) {
        let mut stack = vec![vec![leaf]];
        while let Some(chain) = stack.pop() {
            let top = *chain.last().unwrap();
            if taxonomy.level_of(top) == 1 {
                let mut nodes = chain;
                nodes.reverse();
                paths.insert(LabelPath { nodes });
                continue;
            }
            for &p in parents.get(&top).map(Vec::as_slice).unwrap_or_default() {
                let mut next = chain.clone();
                next.push(p);
                stack.push(next);
            }
        }
    }
    paths
}

/// Every root-to-leaf path of the whole taxonomy.
pub fn all_taxonomy_paths(taxonomy: &Taxonomy) -> BTreeSet<LabelPath> {
    taxonomy
        .labels_at_level(taxonomy.depth())
        .unwrap_or_default()
        .iter()
        .map(|&leaf| LabelPath { nodes: taxonomy.path_to(leaf) })
        .collect()
}

/// One path per line joined by " -> ", lines sorted lexicographically, no
/// trailing newline.
pub fn serialize_paths<'a>(
    taxonomy: &Taxonomy,
    paths: impl IntoIterator<Item = &'a LabelPath>,
) -> String {
    let mut lines: Vec<String> = paths.into_iter().map(|p| p.render(taxonomy)).collect();
    lines.sort();
    lines.join("\n")
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no candidate labels to offer")]
    NoCandidates,
}

/// Classification template. `instruction` takes `{task_description}` and
/// `{category_text}`; `knowledge_section` takes `{knowledge}` and is appended
/// after a blank line only when there is knowledge to show.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub instruction: String,
    pub knowledge_section: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            instruction: "Classify {task_description} into one of the following categories: \
                          {category_text}. You must directly output one of the categories and \
                          do not add \", ', and *."
                .into(),
            knowledge_section: "Here is the partial knowledge graph: \n\"\"\"\n{knowledge}\n\"\"\"".into(),
        }
    }
}

/// Substitute `{name}` placeholders in one left-to-right pass, so inserted
/// values are never re-scanned. Unknown placeholders are left as written.
fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (*v, close))
        });
        match hit {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub text: String,
    pub candidate_labels: Vec<String>,
    pub knowledge_block: String,
}

pub fn build_prompt(
    template: &PromptTemplate,
    task_description: &str,
    candidates: &[String],
    knowledge_block: &str,
) -> Result<PromptBundle, PromptError> {
    if candidates.is_empty() {
        return Err(PromptError::NoCandidates);
    }
    let category_text = candidates.join(", ");
    let mut text = render(
        &template.instruction,
        &[("task_description", task_description), ("category_text", &category_text)],
    );
    if !knowledge_block.is_empty() {
        text.push_str("\n\n");
        text.push_str(&render(&template.knowledge_section, &[("knowledge", knowledge_block)]));
    }
    Ok(PromptBundle {
        text,
        candidate_labels: candidates.to_vec(),
        knowledge_block: knowledge_block.to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn full_paths_only() {
        let t = Taxonomy::from_rows([["a", "b", "d"], ["a", "c", "e"]]).unwrap();
        let id = |l, n| t.find(l, n).unwrap();
        let mut g = Subgraph::default();
        g.add_edge(id(1, "a"), id(2, "b"));
        g.add_edge(id(2, "b"), id(3, "d"));
        g.add_edge(id(1, "a"), id(2, "c"));
        let paths = enumerate_paths(&t, &g);
        assert_eq!(paths.len(), 1);
        assert_eq!(serialize_paths(&t, &paths), "a -> b -> d");
        assert!(enumerate_paths(&t, &Subgraph::default()).is_empty());
        assert_eq!(serialize_paths(&t, &BTreeSet::new()), "");
    }

    #[test]
    fn prompt_with_knowledge() {
        let p = build_prompt(
            &PromptTemplate::default(),
            "the text",
            &strings(&["x", "y", "z"]),
            "a -> b\nc -> d",
        )
        .unwrap();
        assert_eq!(
            p.text,
            "Classify the text into one of the following categories: x, y, z. You must directly \
             output one of the categories and do not add \", ', and *.\n\nHere is the partial \
             knowledge graph: \n\"\"\"\na -> b\nc -> d\n\"\"\""
        );
        assert_eq!(p.knowledge_block.lines().count(), 2);
    }

    #[test]
    fn prompt_without_knowledge_and_singleton() {
        let p = build_prompt(&PromptTemplate::default(), "the text", &strings(&["dishwashing"]), "").unwrap();
        assert!(p.text.ends_with("do not add \", ', and *."));
        assert!(!p.text.contains("knowledge graph"));
        assert!(p.text.contains("categories: dishwashing. You"));
        assert_eq!(
            build_prompt(&PromptTemplate::default(), "t", &[], "k").unwrap_err(),
            PromptError::NoCandidates
        );
    }

    #[test]
    fn placeholders_are_not_rescanned() {
        let tpl = PromptTemplate { instruction: "{category_text}|{task_description}|{other}".into(), ..Default::default() };
        let p = build_prompt(&tpl, "{category_text}", &strings(&["{knowledge}"]), "").unwrap();
        assert_eq!(p.text, "{knowledge}|{category_text}|{other}");
    }
}
