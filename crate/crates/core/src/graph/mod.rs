//! Per-sentence temporal adjacency masks and the causal knowledge graph.

mod kg;

use std::fmt;

use serde::{Serialize, Serializer};

use crate::corpus::{AnnotatedSentence, TemporalRelation};
use crate::tensor::{Scalar, Tensor};

pub use kg::{build_causal_kg, build_causal_kg_sharded, normalize_token, CausalKg, KgEdge, SentenceCausalAdj};

/// Square 0/1 matrix.
#[derive(Clone, PartialEq, Eq)]
pub struct AdjMatrix {
    n: usize,
    cells: Vec<u8>,
}

impl AdjMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            cells: vec![0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i);
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j] != 0
    }

    pub fn set(&mut self, i: usize, j: usize) {
        self.cells[i * self.n + j] = 1;
    }

    pub fn row_is_empty(&self, i: usize) -> bool {
        self.cells[i * self.n..(i + 1) * self.n].iter().all(|&c| c == 0)
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    t.set(j, i);
                }
            }
        }
        t
    }

    pub fn is_symmetric(&self) -> bool {
        *self == self.transpose()
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.cells.chunks(self.n.max(1))
    }

    /// Symmetric permutation: `out[p(i)][p(j)] = self[i][j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    out.set(perm[i], perm[j]);
                }
            }
        }
        out
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .cells
            .iter()
            .map(|&c| if c != 0 { T::one() } else { T::zero() })
            .collect();
        Tensor::new(&[self.n, self.n], data).expect("square")
    }
}

impl fmt::Debug for AdjMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows()).finish()
    }
}

impl Serialize for AdjMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.rows())
    }
}

/// Attention branch of the temporal layer: the five stored relations plus
/// the self state `M`. The order here is the fixed summation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum TimeState {
    B,
    A,
    S,
    I,
    M,
    N,
}

impl TimeState {
    pub const ALL: [TimeState; 6] = [Self::B, Self::A, Self::S, Self::I, Self::M, Self::N];

    pub fn name(self) -> &'static str {
        match self {
            Self::B => "B",
            Self::A => "A",
            Self::S => "S",
            Self::I => "I",
            Self::M => "M",
            Self::N => "N",
        }
    }
}

impl From<TemporalRelation> for TimeState {
    fn from(r: TemporalRelation) -> Self {
        match r {
            TemporalRelation::B => Self::B,
            TemporalRelation::A => Self::A,
            TemporalRelation::S => Self::S,
            TemporalRelation::I => Self::I,
            TemporalRelation::N => Self::N,
        }
    }
}

/// The six temporal masks of one sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TimeMatrices {
    pub adj_b: AdjMatrix,
    pub adj_a: AdjMatrix,
    pub adj_s: AdjMatrix,
    pub adj_i: AdjMatrix,
    pub adj_n: AdjMatrix,
    /// Diagonal. Set for tokens in at least one relation, and as a fallback
    /// self-loop for every other token so no combined row is empty.
    pub adj_m: AdjMatrix,
}

impl TimeMatrices {
    pub fn len(&self) -> usize {
        self.adj_m.size()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, state: TimeState) -> &AdjMatrix {
        match state {
            TimeState::B => &self.adj_b,
            TimeState::A => &self.adj_a,
            TimeState::S => &self.adj_s,
            TimeState::I => &self.adj_i,
            TimeState::M => &self.adj_m,
            TimeState::N => &self.adj_n,
        }
    }

    fn get_mut(&mut self, state: TimeState) -> &mut AdjMatrix {
        match state {
            TimeState::B => &mut self.adj_b,
            TimeState::A => &mut self.adj_a,
            TimeState::S => &mut self.adj_s,
            TimeState::I => &mut self.adj_i,
            TimeState::M => &mut self.adj_m,
            TimeState::N => &mut self.adj_n,
        }
    }

    /// Replaces every mask with its symmetric permutation.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            adj_b: self.adj_b.permuted(perm),
            adj_a: self.adj_a.permuted(perm),
            adj_s: self.adj_s.permuted(perm),
            adj_i: self.adj_i.permuted(perm),
            adj_n: self.adj_n.permuted(perm),
            adj_m: self.adj_m.permuted(perm),
        }
    }

    /// Row `i` of the elementwise sum of all six masks is nonzero.
    pub fn row_covered(&self, i: usize) -> bool {
        TimeState::ALL.iter().any(|&s| !self.get(s).row_is_empty(i))
    }
}

pub fn build_time_matrices(s: &AnnotatedSentence) -> TimeMatrices {
    let n = s.len();
    let mut tm = TimeMatrices {
        adj_b: AdjMatrix::zeros(n),
        adj_a: AdjMatrix::zeros(n),
        adj_s: AdjMatrix::zeros(n),
        adj_i: AdjMatrix::zeros(n),
        adj_n: AdjMatrix::zeros(n),
        adj_m: AdjMatrix::zeros(n),
    };
    let mut involved = vec![false; n];
    for (i, j, rel) in s.relations() {
        tm.get_mut(rel.into()).set(i, j);
        involved[i] = true;
        involved[j] = true;
    }
    for (i, &inv) in involved.iter().enumerate() {
        if inv || !tm.row_covered(i) {
            tm.adj_m.set(i, i);
        }
    }
    tm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CausalTag;

    fn sentence(tokens: &[&str], rels: &[(usize, usize, TemporalRelation)]) -> AnnotatedSentence {
        AnnotatedSentence::new(
            "t",
            tokens.iter().map(|t| (*t).to_owned()).collect(),
            vec![CausalTag::O; tokens.len()],
            rels,
        )
        .unwrap()
    }

    #[test]
    fn rain_floods_matrices() {
        let s = sentence(
            &["The", "rain", "caused", "the", "floods"],
            &[(1, 4, TemporalRelation::B)],
        );
        let tm = build_time_matrices(&s);
        assert!(tm.adj_b.get(1, 4));
        assert!(tm.adj_a.get(4, 1));
        assert_eq!(tm.adj_b.count_ones(), 1);
        assert_eq!(tm.adj_a.count_ones(), 1);
        for m in [&tm.adj_s, &tm.adj_i, &tm.adj_n] {
            assert_eq!(m.count_ones(), 0);
        }
        assert_eq!(tm.adj_m, AdjMatrix::identity(5));
    }

    #[test]
    fn no_relations_gives_identity_m() {
        let s = sentence(&["a", "b", "c"], &[]);
        let tm = build_time_matrices(&s);
        assert_eq!(tm.adj_m, AdjMatrix::identity(3));
        for st in [TimeState::B, TimeState::A, TimeState::S, TimeState::I, TimeState::N] {
            assert_eq!(tm.get(st).count_ones(), 0);
        }
    }

    #[test]
    fn event_chain_matches_pairwise_enumeration() {
        use TemporalRelation::*;
        // rain -> floods -> {damaged, died}; damaged and died simultaneous.
        let toks = ["rain", "brought", "floods", "that", "damaged", "homes", "and", "died"];
        let (rain, floods, damaged, died) = (0, 2, 4, 7);
        let given = [
            (rain, floods, B),
            (floods, damaged, B),
            (floods, died, B),
            (rain, damaged, B),
            (rain, died, B),
            (damaged, died, S),
        ];
        let s = sentence(&toks, &given);
        let tm = build_time_matrices(&s);

        let oracle = |i: usize, j: usize| -> Option<TemporalRelation> {
            given.iter().find_map(|&(a, b, r)| {
                if (a, b) == (i, j) {
                    Some(r)
                } else if (b, a) == (i, j) {
                    Some(r.converse())
                } else {
                    None
                }
            })
        };
        for i in 0..toks.len() {
            for j in 0..toks.len() {
                let expect = oracle(i, j);
                for rel in TemporalRelation::ALL {
                    assert_eq!(
                        tm.get(rel.into()).get(i, j),
                        expect == Some(rel),
                        "({i},{j}) {rel}"
                    );
                }
            }
            assert!(tm.adj_m.get(i, i));
        }
        assert_eq!(tm.adj_b.transpose(), tm.adj_a);
        assert!(tm.adj_s.is_symmetric());
    }
}
