//! Temporal-causal annotated corpora.
//!
//! One sentence per JSONL line:
//!
//! ```text
//! {"id": "s1", "tokens": ["The","rain","caused","the","floods"],
//!  "causal_tags": ["O","C","O","O","E"], "temporal": [[1, 4, "B"]]}
//! ```
//!
//! Parsing validates every record and completes converse relations, so a
//! parsed sentence holding `(i, j, B)` also holds `(j, i, A)`.

mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::ops::Add;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synth::{generate_synthetic, split_corpus, TemplateConfig};

pub const DEFAULT_MAX_LEN: usize = 50;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("line {line} ({id}): index {index} out of range for {len} tokens")]
    IndexOutOfRange {
        line: usize,
        id: String,
        index: usize,
        len: usize,
    },
    #[error("line {line} ({id}): contradictory relations for pair ({i}, {j}): {first} vs {second}")]
    Contradictory {
        line: usize,
        id: String,
        i: usize,
        j: usize,
        first: TemporalRelation,
        second: TemporalRelation,
    },
    #[error("sentences longer than {max_len} tokens: {}", ids.join(", "))]
    OverLength { max_len: usize, ids: Vec<String> },
    #[error("invalid template config: {0}")]
    Template(String),
}

/// Token-level causal role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CausalTag {
    O,
    C,
    E,
}

impl CausalTag {
    pub const ALL: [CausalTag; 3] = [CausalTag::O, CausalTag::C, CausalTag::E];

    /// Class index used by the classifier: O = 0, C = 1, E = 2.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for CausalTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for CausalTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "O" => Ok(Self::O),
            "C" => Ok(Self::C),
            "E" => Ok(Self::E),
            other => Err(format!("unknown causal tag {other:?}")),
        }
    }
}

/// Pairwise temporal relation between two tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemporalRelation {
    /// Before
    B,
    /// After
    A,
    /// Simultaneous
    S,
    /// Include
    I,
    /// Be-included
    N,
}

impl TemporalRelation {
    pub const ALL: [TemporalRelation; 5] = [Self::B, Self::A, Self::S, Self::I, Self::N];

    /// The relation seen from the other token.
    pub fn converse(self) -> Self {
        match self {
            Self::B => Self::A,
            Self::A => Self::B,
            Self::S => Self::S,
            Self::I => Self::N,
            Self::N => Self::I,
        }
    }
}

impl fmt::Display for TemporalRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for TemporalRelation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "B" => Ok(Self::B),
            "A" => Ok(Self::A),
            "S" => Ok(Self::S),
            "I" => Ok(Self::I),
            "N" => Ok(Self::N),
            other => Err(format!("unknown temporal relation {other:?}")),
        }
    }
}

/// A validated sentence with causal tags and converse-closed temporal
/// relations, at most one relation per ordered token pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub causal_tags: Vec<CausalTag>,
    relations: BTreeMap<(usize, usize), TemporalRelation>,
}

impl AnnotatedSentence {
    /// Builds and validates a sentence, completing converse relations.
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        causal_tags: Vec<CausalTag>,
        temporal: &[(usize, usize, TemporalRelation)],
    ) -> Result<Self, CorpusError> {
        Self::build(0, id.into(), tokens, causal_tags, temporal)
    }

    fn build(
        line: usize,
        id: String,
        tokens: Vec<String>,
        causal_tags: Vec<CausalTag>,
        temporal: &[(usize, usize, TemporalRelation)],
    ) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                detail: format!("{id}: sentence has no tokens"),
            });
        }
        if causal_tags.len() != tokens.len() {
            return Err(CorpusError::Malformed {
                line,
                detail: format!(
                    "{id}: {} tags for {} tokens",
                    causal_tags.len(),
                    tokens.len()
                ),
            });
        }
        let len = tokens.len();
        let mut relations = BTreeMap::new();
        for &(i, j, rel) in temporal {
            for index in [i, j] {
                if index >= len {
                    return Err(CorpusError::IndexOutOfRange {
                        line,
                        id,
                        index,
                        len,
                    });
                }
            }
            if i == j {
                return Err(CorpusError::Malformed {
                    line,
                    detail: format!("{id}: relation from token {i} to itself"),
                });
            }
            for (a, b, r) in [(i, j, rel), (j, i, rel.converse())] {
                match relations.insert((a, b), r) {
                    Some(prev) if prev != r => {
                        return Err(CorpusError::Contradictory {
                            line,
                            id,
                            i: a,
                            j: b,
                            first: prev,
                            second: r,
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            id,
            tokens,
            causal_tags,
            relations,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// All relations, converses included, ordered by (i, j).
    pub fn relations(&self) -> impl Iterator<Item = (usize, usize, TemporalRelation)> + '_ {
        self.relations.iter().map(|(&(i, j), &r)| (i, j, r))
    }

    pub fn relation(&self, i: usize, j: usize) -> Option<TemporalRelation> {
        self.relations.get(&(i, j)).copied()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    fn to_record(&self) -> Record {
        Record {
            id: self.id.clone(),
            tokens: self.tokens.clone(),
            causal_tags: self.causal_tags.iter().map(ToString::to_string).collect(),
            temporal: self
                .relations()
                .map(|(i, j, r)| (i, j, r.to_string()))
                .collect(),
        }
    }
}

/// On-disk JSONL record.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    tokens: Vec<String>,
    causal_tags: Vec<String>,
    #[serde(default)]
    temporal: Vec<(usize, usize, String)>,
}

fn parse_record(line: usize, text: &str) -> Result<AnnotatedSentence, CorpusError> {
    let malformed = |detail: String| CorpusError::Malformed { line, detail };
    let rec: Record = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let tags = rec
        .causal_tags
        .iter()
        .map(|t| t.parse())
        .collect::<Result<Vec<CausalTag>, _>>()
        .map_err(malformed)?;
    let temporal = rec
        .temporal
        .iter()
        .map(|(i, j, r)| r.parse().map(|r| (*i, *j, r)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(malformed)?;
    AnnotatedSentence::build(line, rec.id, rec.tokens, tags, &temporal)
}

/// Parses JSONL text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus_str(text: &str, max_len: usize) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    parse_lines(text.lines().map(|l| Ok(l.to_owned())), max_len)
}

pub fn parse_corpus(path: &Path, max_len: usize) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let file = std::fs::File::open(path)?;
    parse_lines(BufReader::new(file).lines(), max_len)
}

fn parse_lines(
    lines: impl Iterator<Item = std::io::Result<String>>,
    max_len: usize,
) -> Result<Vec<AnnotatedSentence>, CorpusError> {
    let mut out = Vec::new();
    let mut too_long = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = parse_record(n + 1, &line)?;
        if s.len() > max_len {
            too_long.push(s.id.clone());
        }
        out.push(s);
    }
    if !too_long.is_empty() {
        return Err(CorpusError::OverLength {
            max_len,
            ids: too_long,
        });
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(mut w: W, sentences: &[AnnotatedSentence]) -> Result<(), CorpusError> {
    for s in sentences {
        let line = serde_json::to_string(&s.to_record()).expect("record serializes");
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: &Path, sentences: &[AnnotatedSentence]) -> Result<(), CorpusError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_corpus(&mut w, sentences)?;
    w.flush()?;
    Ok(())
}

pub fn corpus_to_string(sentences: &[AnnotatedSentence]) -> String {
    let mut buf = Vec::new();
    write_corpus(&mut buf, sentences).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Test,
}

/// Record, tag, and relation counts. Relation counts include converses.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentence_count: usize,
    pub tag_counts: BTreeMap<CausalTag, usize>,
    pub relation_counts: BTreeMap<TemporalRelation, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitKind>,
}

impl CorpusStats {
    pub fn tag(&self, t: CausalTag) -> usize {
        self.tag_counts.get(&t).copied().unwrap_or(0)
    }

    pub fn relation(&self, r: TemporalRelation) -> usize {
        self.relation_counts.get(&r).copied().unwrap_or(0)
    }
}

impl Add for CorpusStats {
    type Output = CorpusStats;

    fn add(mut self, rhs: Self) -> Self {
        self.sentence_count += rhs.sentence_count;
        for (k, v) in rhs.tag_counts {
            *self.tag_counts.entry(k).or_default() += v;
        }
        for (k, v) in rhs.relation_counts {
            *self.relation_counts.entry(k).or_default() += v;
        }
        if self.split != rhs.split {
            self.split = None;
        }
        self
    }
}

pub fn corpus_stats(sentences: &[AnnotatedSentence]) -> CorpusStats {
    let mut stats = CorpusStats {
        sentence_count: sentences.len(),
        tag_counts: CausalTag::ALL.iter().map(|&t| (t, 0)).collect(),
        relation_counts: TemporalRelation::ALL.iter().map(|&r| (r, 0)).collect(),
        split: None,
    };
    for s in sentences {
        for &t in &s.causal_tags {
            *stats.tag_counts.entry(t).or_default() += 1;
        }
        for (_, _, r) in s.relations() {
            *stats.relation_counts.entry(r).or_default() += 1;
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    const RAIN: &str = r#"{"id":"s1","tokens":["The","rain","caused","the","floods"],"causal_tags":["O","C","O","O","E"],"temporal":[[1,4,"B"]]}"#;

    #[test]
    fn converse_closure_on_parse() {
        let c = parse_corpus_str(RAIN, DEFAULT_MAX_LEN).unwrap();
        let rels: Vec<_> = c[0].relations().collect();
        assert_eq!(
            rels,
            vec![(1, 4, TemporalRelation::B), (4, 1, TemporalRelation::A)]
        );
        assert_eq!(
            c[0].causal_tags,
            vec![CausalTag::O, CausalTag::C, CausalTag::O, CausalTag::O, CausalTag::E]
        );
    }

    #[test]
    fn negative_sample_without_relations() {
        let text = r#"{"id":"n","tokens":["a","b"],"causal_tags":["O","O"],"temporal":[]}"#;
        let c = parse_corpus_str(text, DEFAULT_MAX_LEN).unwrap();
        assert_eq!(c[0].relation_count(), 0);
    }

    #[test]
    fn contradictory_pair_rejected() {
        let text = r#"{"id":"x","tokens":["The","rain","caused","the","floods"],"causal_tags":["O","C","O","O","E"],"temporal":[[1,4,"B"],[4,1,"B"]]}"#;
        let err = parse_corpus_str(text, DEFAULT_MAX_LEN).unwrap_err();
        assert!(matches!(err, CorpusError::Contradictory { line: 1, .. }), "{err}");
        assert!(err.to_string().contains("contradictory relations"));
    }

    #[test]
    fn explicit_converse_is_accepted() {
        let text = r#"{"id":"x","tokens":["a","b"],"causal_tags":["C","E"],"temporal":[[0,1,"I"],[1,0,"N"]]}"#;
        let c = parse_corpus_str(text, DEFAULT_MAX_LEN).unwrap();
        assert_eq!(c[0].relation_count(), 2);
    }

    #[test]
    fn index_out_of_range_reports_line() {
        let text = format!("{RAIN}\n{}", r#"{"id":"bad","tokens":["a"],"causal_tags":["O"],"temporal":[[0,3,"S"]]}"#);
        let err = parse_corpus_str(&text, DEFAULT_MAX_LEN).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::IndexOutOfRange { line: 2, index: 3, .. }
        ));
    }

    #[test]
    fn malformed_records() {
        for bad in [
            "not json",
            r#"{"id":"a","tokens":["x"],"causal_tags":["Q"]}"#,
            r#"{"id":"a","tokens":["x"],"causal_tags":["O","O"]}"#,
            r#"{"id":"a","tokens":[],"causal_tags":[]}"#,
            r#"{"id":"a","tokens":["x","y"],"causal_tags":["O","O"],"temporal":[[0,0,"S"]]}"#,
            r#"{"id":"a","tokens":["x","y"],"causal_tags":["O","O"],"temporal":[[0,1,"Z"]]}"#,
        ] {
            let err = parse_corpus_str(bad, DEFAULT_MAX_LEN).unwrap_err();
            assert!(matches!(err, CorpusError::Malformed { line: 1, .. }), "{bad}: {err}");
        }
    }

    #[test]
    fn over_length_lists_all_ids() {
        let long = |id: &str| {
            format!(
                r#"{{"id":"{id}","tokens":["a","b","c"],"causal_tags":["O","O","O"]}}"#
            )
        };
        let text = [long("p"), long("q")].join("\n");
        match parse_corpus_str(&text, 2).unwrap_err() {
            CorpusError::OverLength { max_len, ids } => {
                assert_eq!(max_len, 2);
                assert_eq!(ids, vec!["p", "q"]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn stats_counts() {
        assert_eq!(corpus_stats(&[]).sentence_count, 0);
        assert!(corpus_stats(&[]).tag_counts.values().all(|&v| v == 0));

        let s = AnnotatedSentence::new(
            "a",
            vec!["x".into(), "y".into()],
            vec![CausalTag::C, CausalTag::E],
            &[],
        )
        .unwrap();
        let stats = corpus_stats(&[s.clone(), s]);
        assert_eq!(stats.tag(CausalTag::C), 2);
        assert_eq!(stats.tag(CausalTag::E), 2);
        assert_eq!(stats.tag(CausalTag::O), 0);
    }

    #[test]
    fn table_ii_totals_are_additive() {
        let one = AnnotatedSentence::new("x", vec!["a".into()], vec![CausalTag::O], &[]).unwrap();
        let train = corpus_stats(&vec![one.clone(); 2094]);
        let test = corpus_stats(&vec![one; 1031]);
        assert_eq!((train + test).sentence_count, 3125);
    }

    #[test]
    fn writer_round_trips() {
        let c = parse_corpus_str(RAIN, DEFAULT_MAX_LEN).unwrap();
        let text = corpus_to_string(&c);
        assert_eq!(parse_corpus_str(&text, DEFAULT_MAX_LEN).unwrap(), c);
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }
}
