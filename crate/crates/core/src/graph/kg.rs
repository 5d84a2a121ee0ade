use std::collections::BTreeMap;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AdjMatrix;
use crate::corpus::{AnnotatedSentence, CausalTag};

/// Lowercasing only; no stemming.
pub fn normalize_token(t: &str) -> String {
    t.to_lowercase()
}

/// Directed token-level cause→effect graph with occurrence counts.
///
/// Node ids follow first appearance, so building from shards and merging
/// them in order reproduces the sequential build exactly.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "KgFile", try_from = "KgFile")]
pub struct CausalKg {
    nodes: IndexMap<String, usize>,
    edges: BTreeMap<(usize, usize), u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgEdge {
    pub cause: String,
    pub effect: String,
    pub count: u32,
}

#[derive(Serialize, Deserialize)]
struct KgFile {
    nodes: Vec<String>,
    edges: Vec<KgEdge>,
}

impl From<CausalKg> for KgFile {
    fn from(kg: CausalKg) -> Self {
        KgFile {
            edges: kg.edges().collect(),
            nodes: kg.nodes.into_keys().collect(),
        }
    }
}

impl TryFrom<KgFile> for CausalKg {
    type Error = String;

    fn try_from(f: KgFile) -> Result<Self, String> {
        let mut kg = CausalKg::default();
        for n in f.nodes {
            kg.node(&n);
        }
        for e in f.edges {
            if e.count == 0 {
                return Err(format!("edge {} -> {} has zero count", e.cause, e.effect));
            }
            if e.cause == e.effect {
                return Err(format!("self edge on {}", e.cause));
            }
            let key = (kg.node(&e.cause), kg.node(&e.effect));
            *kg.edges.entry(key).or_default() += e.count;
        }
        Ok(kg)
    }
}

impl CausalKg {
    fn node(&mut self, token: &str) -> usize {
        let next = self.nodes.len();
        *self.nodes.entry(token.to_owned()).or_insert(next)
    }

    fn add_sentence(&mut self, s: &AnnotatedSentence) {
        let of = |tag| {
            s.tokens
                .iter()
                .zip(&s.causal_tags)
                .filter(move |(_, &t)| t == tag)
                .map(|(tok, _)| normalize_token(tok))
        };
        for cause in of(CausalTag::C) {
            for effect in of(CausalTag::E) {
                if cause == effect {
                    continue;
                }
                let key = (self.node(&cause), self.node(&effect));
                *self.edges.entry(key).or_default() += 1;
            }
        }
    }

    /// Appends `other`'s nodes in their id order and sums edge counts.
    pub fn merge(&mut self, other: &CausalKg) {
        let remap: Vec<usize> = other.nodes.keys().map(|n| self.node(n)).collect();
        for (&(c, e), &count) in &other.edges {
            *self.edges.entry((remap[c], remap[e])).or_default() += count;
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_id(&self, token: &str) -> Option<usize> {
        self.nodes.get(&normalize_token(token)).copied()
    }

    /// Occurrence count of the directed edge `cause → effect`.
    pub fn edge(&self, cause: &str, effect: &str) -> u32 {
        match (self.node_id(cause), self.node_id(effect)) {
            (Some(c), Some(e)) => self.edges.get(&(c, e)).copied().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn linked(&self, a: &str, b: &str) -> bool {
        self.edge(a, b) > 0 || self.edge(b, a) > 0
    }

    pub fn edges(&self) -> impl Iterator<Item = KgEdge> + '_ {
        let names: Vec<&String> = self.nodes.keys().collect();
        self.edges.iter().map(move |(&(c, e), &count)| KgEdge {
            cause: names[c].clone(),
            effect: names[e].clone(),
            count,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("kg serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Projection onto one sentence: self-loops plus every token pair linked
    /// by an edge in either direction.
    pub fn sentence_adj(&self, s: &AnnotatedSentence) -> SentenceCausalAdj {
        let ids: Vec<Option<usize>> = s.tokens.iter().map(|t| self.node_id(t)).collect();
        let mut adj = AdjMatrix::identity(s.len());
        for (i, a) in ids.iter().enumerate() {
            for (j, b) in ids.iter().enumerate() {
                if let (Some(a), Some(b)) = (a, b) {
                    if self.edges.contains_key(&(*a, *b)) || self.edges.contains_key(&(*b, *a)) {
                        adj.set(i, j);
                    }
                }
            }
        }
        SentenceCausalAdj { adj_kg: adj }
    }
}

/// Knowledge-graph adjacency of one sentence. Symmetric with a full diagonal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SentenceCausalAdj {
    pub adj_kg: AdjMatrix,
}

/// Builds the graph from training sentences only: every (C, E) token pair in
/// a sentence adds one directed edge.
pub fn build_causal_kg(train: &[AnnotatedSentence]) -> CausalKg {
    let mut kg = CausalKg::default();
    for s in train {
        kg.add_sentence(s);
    }
    kg
}

/// Same result as [`build_causal_kg`], built over `shards` contiguous chunks
/// in parallel and merged in chunk order.
pub fn build_causal_kg_sharded(train: &[AnnotatedSentence], shards: usize) -> CausalKg {
    let chunk = train.len().div_ceil(shards.max(1)).max(1);
    let parts: Vec<CausalKg> = train.par_chunks(chunk).map(build_causal_kg).collect();
    let mut kg = CausalKg::default();
    for p in &parts {
        kg.merge(p);
    }
    kg
}

#[cfg(test)]
mod tests {
    use super::*;
    use CausalTag::*;

    fn sent(tokens: &[&str], tags: &[CausalTag]) -> AnnotatedSentence {
        AnnotatedSentence::new(
            "k",
            tokens.iter().map(|t| (*t).to_owned()).collect(),
            tags.to_vec(),
            &[],
        )
        .unwrap()
    }

    #[test]
    fn two_pairs_two_edges() {
        let kg = build_causal_kg(&[
            sent(&["Rain", "caused", "floods"], &[C, O, E]),
            sent(&["smoking", "causes", "cancer"], &[C, O, E]),
        ]);
        assert_eq!(kg.node_count(), 4);
        assert_eq!(kg.edge_count(), 2);
        assert_eq!(kg.edge("rain", "floods"), 1);
        assert_eq!(kg.edge("floods", "rain"), 0);
    }

    #[test]
    fn empty_training_set() {
        let kg = build_causal_kg(&[]);
        assert_eq!((kg.node_count(), kg.edge_count()), (0, 0));
    }

    #[test]
    fn cross_product_of_causes_and_effects() {
        let kg = build_causal_kg(&[sent(&["wind", "and", "rain", "caused", "floods"], &[C, O, C, O, E])]);
        assert_eq!(kg.edge_count(), 2);
    }

    #[test]
    fn repeated_pairs_accumulate_counts() {
        let s = sent(&["rain", "floods"], &[C, E]);
        let kg = build_causal_kg(&[s.clone(), s]);
        assert_eq!(kg.edge("rain", "floods"), 2);
        assert_eq!(kg.edges().next().unwrap().count, 2);
    }

    #[test]
    fn projection_is_symmetric_with_self_loops() {
        let kg = build_causal_kg(&[sent(&["rain", "floods"], &[C, E])]);
        let s = sent(&["the", "rain", "caused", "the", "floods"], &[O; 5]);
        let adj = kg.sentence_adj(&s).adj_kg;
        assert!(adj.get(1, 4) && adj.get(4, 1));
        assert_eq!(adj.count_ones(), 5 + 2);
        assert!(adj.is_symmetric());

        let unknown = sent(&["x", "y"], &[O, O]);
        assert_eq!(kg.sentence_adj(&unknown).adj_kg, AdjMatrix::identity(2));
    }

    #[test]
    fn json_round_trip() {
        let kg = build_causal_kg(&[
            sent(&["rain", "floods"], &[C, E]),
            sent(&["fire", "smoke", "damage"], &[C, E, E]),
        ]);
        let back = CausalKg::from_json(&kg.to_json()).unwrap();
        assert_eq!(back, kg);
        assert!(CausalKg::from_json(r#"{"nodes":[],"edges":[{"cause":"a","effect":"a","count":1}]}"#).is_err());
    }
}
