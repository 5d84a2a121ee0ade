//! Shared fixtures for integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcgat::corpus::{AnnotatedSentence, CausalTag, TemporalRelation};
use tcgat::Tensor;

const WORDS: [&str; 12] = [
    "rain", "flood", "storm", "fire", "smoke", "quake", "the", "and", "caused", "after", "panic", "outage",
];

/// Random annotated sentence of 1..=`max_len` tokens drawn from a small
/// vocabulary, with each unordered token pair related with probability 0.3.
pub fn random_sentence(seed: u64, max_len: usize) -> AnnotatedSentence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(1..=max_len);
    let tokens = (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_owned()).collect();
    let tags = (0..len).map(|_| CausalTag::ALL[rng.random_range(0..3)]).collect();
    let mut relations = Vec::new();
    for i in 0..len {
        for j in i + 1..len {
            if rng.random_bool(0.3) {
                let r = TemporalRelation::ALL[rng.random_range(0..5)];
                if rng.random_bool(0.5) {
                    relations.push((i, j, r));
                } else {
                    relations.push((j, i, r.converse()));
                }
            }
        }
    }
    AnnotatedSentence::new(format!("r{seed}"), tokens, tags, &relations).expect("consistent by construction")
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Token `i` of `s` moves to position `perm[i]`; relations follow.
pub fn permute_sentence(s: &AnnotatedSentence, perm: &[usize]) -> AnnotatedSentence {
    let n = s.len();
    let mut tokens = vec![String::new(); n];
    let mut tags = vec![CausalTag::O; n];
    for i in 0..n {
        tokens[perm[i]] = s.tokens[i].clone();
        tags[perm[i]] = s.causal_tags[i];
    }
    let relations: Vec<_> = s.relations().map(|(i, j, r)| (perm[i], perm[j], r)).collect();
    AnnotatedSentence::new(s.id.clone(), tokens, tags, &relations).unwrap()
}

/// Rows of `t` moved so row `i` lands at `perm[i]`.
pub fn permute_rows(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let (rows, cols) = t.dims2().unwrap();
    let mut out = Tensor::zeros(&[rows, cols]);
    for i in 0..rows {
        for c in 0..cols {
            out.set(perm[i], c, t.at(i, c));
        }
    }
    out
}

/// Ten generated sentences and the default model trained for 200 epochs
/// without early stopping.
pub fn overfit_fixture() -> (tcgat::TrainConfig, Vec<AnnotatedSentence>) {
    let data = tcgat::corpus::generate_synthetic(10, 7, &tcgat::corpus::TemplateConfig::default()).unwrap();
    let cfg = tcgat::TrainConfig {
        epochs: 200,
        patience: 0,
        seed: 7,
        ..tcgat::TrainConfig::default()
    };
    (cfg, data)
}
