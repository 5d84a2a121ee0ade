mod common;

use common::{permute_rows, permute_sentence, random_sentence, random_tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tcgat::checkpoint::{decode_checkpoint, encode_checkpoint};
use tcgat::corpus::{corpus_stats, corpus_to_string, parse_corpus_str, DEFAULT_MAX_LEN};
use tcgat::encoder::{BiLstm, ExternalEmbeddings};
use tcgat::gat::{time_masks, CausalGat, GatConfig, MaskModeName, TemporalGat};
use tcgat::graph::{build_causal_kg, build_causal_kg_sharded, build_time_matrices, TimeState};
use tcgat::head::equilibrium_fuse;
use tcgat::params::{Binder, ParamStore};
use tcgat::train::{macro_f1, Confusion, EvalReport};
use tcgat::{CausalTag, Graph, Tensor};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain-loop LSTM over rows of `x`, gates ordered i, f, g, o.
fn lstm_oracle(x: &Tensor<f64>, wx: &Tensor<f64>, wh: &Tensor<f64>, b: &Tensor<f64>, reverse: bool) -> Vec<Vec<f64>> {
    let (len, d) = x.dims2().unwrap();
    let h_dim = wh.shape()[0];
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    let mut out = vec![vec![0.0; h_dim]; len];
    let steps: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
    for t in steps {
        let z: Vec<f64> = (0..4 * h_dim)
            .map(|col| {
                let mut acc = b.at(0, col);
                for k in 0..d {
                    acc += x.at(t, k) * wx.at(k, col);
                }
                for k in 0..h_dim {
                    acc += h[k] * wh.at(k, col);
                }
                acc
            })
            .collect();
        for u in 0..h_dim {
            let i = sigmoid(z[u]);
            let f = sigmoid(z[h_dim + u]);
            let g = z[2 * h_dim + u].tanh();
            let o = sigmoid(z[3 * h_dim + u]);
            c[u] = f * c[u] + i * g;
            h[u] = o * c[u].tanh();
        }
        out[t] = h.clone();
    }
    out
}

fn run_bilstm(layer: &BiLstm, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let mut p = Binder::new(store);
    let xv = g.constant(x.clone());
    let out = layer.forward(&mut g, &mut p, xv).unwrap();
    g.value(out).clone()
}

fn matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (n, k) = a.dims2().unwrap();
    let m = b.shape()[1];
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|t| a.at(i, t) * b.at(t, j)).sum()).collect())
        .collect()
}

/// Direct evaluation of the relation-typed attention layer with scalar loops.
fn tgat_oracle(layer: &TemporalGat, store: &ParamStore<f64>, h: &Tensor<f64>, masks: &[Tensor<f64>; 6]) -> Vec<Vec<f64>> {
    let n = h.shape()[0];
    let m = layer.config.dim;
    let slope = layer.config.leaky_slope;
    let literal = layer.config.mask_mode == MaskModeName::Literal;
    let mut out = vec![Vec::new(); n];
    for k in 0..layer.config.heads {
        let a = store.get(&layer.attention_name(k)).unwrap();
        let q = matmul(h, store.get(&layer.weight_name(k, TimeState::M)).unwrap());
        let mut acc = vec![vec![0.0; m]; n];
        for (si, state) in TimeState::ALL.into_iter().enumerate() {
            let p = matmul(h, store.get(&layer.weight_name(k, state)).unwrap());
            let mask = &masks[si];
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        let e: f64 = (0..m).map(|c| a.data()[c] * q[i][c] + a.data()[m + c] * p[j][c]).sum();
                        if e > 0.0 { e } else { slope * e }
                    })
                    .collect();
                let allowed = |j: usize| literal || mask.at(i, j) == 1.0;
                let max = (0..n).filter(|&j| allowed(j)).map(|j| scores[j]).fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let total: f64 = (0..n).filter(|&j| allowed(j)).map(|j| (scores[j] - max).exp()).sum();
                for j in (0..n).filter(|&j| allowed(j)) {
                    let alpha = (scores[j] - max).exp() / total * mask.at(i, j);
                    for c in 0..m {
                        acc[i][c] += alpha * p[j][c];
                    }
                }
            }
        }
        for i in 0..n {
            out[i].extend(acc[i].iter().map(|&v| if v > 0.0 { v } else { v.exp_m1() }));
        }
    }
    out
}

fn small_tgat(mode: MaskModeName) -> TemporalGat {
    TemporalGat::new(
        "tgat",
        5,
        GatConfig {
            dim: 3,
            heads: 2,
            mask_mode: mode,
            ..GatConfig::default()
        },
    )
}

fn run_tgat(layer: &TemporalGat, store: &ParamStore<f64>, h: &Tensor<f64>, masks: &[Tensor<f64>; 6]) -> Tensor<f64> {
    let mut g = Graph::new();
    let mut p = Binder::new(store);
    let hv = g.constant(h.clone());
    let out = layer.forward(&mut g, &mut p, hv, masks).unwrap();
    g.value(out).clone()
}

fn mode_strategy() -> impl Strategy<Value = MaskModeName> {
    prop_oneof![Just(MaskModeName::Renormalize), Just(MaskModeName::Literal)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn time_matrices_pair_up(seed in any::<u64>()) {
        let s = random_sentence(seed, 15);
        let tm = build_time_matrices(&s);
        prop_assert_eq!(tm.adj_b.transpose(), tm.adj_a.clone());
        prop_assert_eq!(tm.adj_i.transpose(), tm.adj_n.clone());
        prop_assert!(tm.adj_s.is_symmetric());
        for i in 0..s.len() {
            prop_assert!(tm.row_covered(i));
        }
    }

    #[test]
    fn time_matrices_follow_token_permutation(seed in any::<u64>(), shuffle in any::<u64>()) {
        let s = random_sentence(seed, 10);
        let mut perm: Vec<usize> = (0..s.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut ChaCha8Rng::seed_from_u64(shuffle));
        let moved = permute_sentence(&s, &perm);
        prop_assert_eq!(build_time_matrices(&moved), build_time_matrices(&s).permuted(&perm));
    }

    #[test]
    fn tgat_is_permutation_equivariant(seed in any::<u64>(), shuffle in any::<u64>(), mode in mode_strategy()) {
        let s = random_sentence(seed, 8);
        let mut perm: Vec<usize> = (0..s.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut ChaCha8Rng::seed_from_u64(shuffle));
        let layer = small_tgat(mode);
        let mut store = ParamStore::new();
        layer.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
        let h = random_tensor(&[s.len(), 5], seed ^ 1);

        let base = run_tgat(&layer, &store, &h, &time_masks(&build_time_matrices(&s)));
        let moved_masks = time_masks(&build_time_matrices(&permute_sentence(&s, &perm)));
        let moved = run_tgat(&layer, &store, &permute_rows(&h, &perm), &moved_masks);
        let expected = permute_rows(&base, &perm);
        for (a, b) in moved.data().iter().zip(expected.data()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn tgat_matches_scalar_oracle(seed in any::<u64>(), mode in mode_strategy()) {
        let s = random_sentence(seed, 9);
        let layer = small_tgat(mode);
        let mut store = ParamStore::new();
        layer.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
        let h = random_tensor(&[s.len(), 5], seed ^ 2);
        let masks = time_masks(&build_time_matrices(&s));
        let got = run_tgat(&layer, &store, &h, &masks);
        let want = tgat_oracle(&layer, &store, &h, &masks);
        for i in 0..s.len() {
            for (c, w) in want[i].iter().enumerate() {
                prop_assert!((got.at(i, c) - w).abs() < 1e-5, "row {} col {}", i, c);
            }
        }
    }

    #[test]
    fn attention_scores_match_double_loop(seed in any::<u64>()) {
        let n = 1 + (seed % 7) as usize;
        let q = random_tensor(&[n, 4], seed);
        let k = random_tensor(&[n, 4], seed ^ 3);
        let a = random_tensor(&[8, 1], seed ^ 4);
        let mut g = Graph::new();
        let (qv, kv, av) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(a.clone()));
        let e = tcgat::gat::pair_scores(&mut g, qv, kv, av).unwrap();
        let e = g.value(e);
        for i in 0..n {
            for j in 0..n {
                let mut want = 0.0;
                for c in 0..4 {
                    want += a.data()[c] * q.at(i, c) + a.data()[4 + c] * k.at(j, c);
                }
                prop_assert!((e.at(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cgat_attention_respects_adjacency(seed in any::<u64>(), mode in mode_strategy()) {
        let train: Vec<_> = (0..5).map(|k| random_sentence(seed.wrapping_add(k), 8)).collect();
        let kg = build_causal_kg(&train);
        let s = random_sentence(seed ^ 9, 8);
        let adj = kg.sentence_adj(&s).adj_kg;
        prop_assert!(adj.is_symmetric());
        for i in 0..s.len() {
            prop_assert!(adj.get(i, i));
        }
        let layer = CausalGat::new("cgat", 5, GatConfig { dim: 3, heads: 2, mask_mode: mode, ..GatConfig::default() });
        let mut store = ParamStore::new();
        layer.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut g = Graph::new();
        let mut p = Binder::new(&store);
        let h = g.constant(random_tensor(&[s.len(), 5], seed));
        let (alphas, _) = layer.forward_traced(&mut g, &mut p, h, &adj.to_tensor()).unwrap();
        for alpha in alphas {
            let alpha = g.value(alpha);
            for i in 0..s.len() {
                for j in 0..s.len() {
                    if !adj.get(i, j) {
                        prop_assert_eq!(alpha.at(i, j), 0.0);
                    }
                }
                if mode == MaskModeName::Renormalize {
                    let total: f64 = alpha.row(i).iter().sum();
                    prop_assert!((total - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn bilstm_matches_scalar_oracle(seed in any::<u64>(), len in 1usize..7) {
        let layer = BiLstm::new("lstm", 4, 3);
        let mut store = ParamStore::new();
        layer.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
        let x = random_tensor(&[len, 4], seed ^ 5);
        let got = run_bilstm(&layer, &store, &x);
        let p = |n: &str| store.get(n).unwrap();
        let fwd = lstm_oracle(&x, p("lstm.fwd.w_x"), p("lstm.fwd.w_h"), p("lstm.fwd.b"), false);
        let bwd = lstm_oracle(&x, p("lstm.bwd.w_x"), p("lstm.bwd.w_h"), p("lstm.bwd.b"), true);
        for t in 0..len {
            for u in 0..3 {
                prop_assert!((got.at(t, u) - fwd[t][u]).abs() < 1e-5);
                prop_assert!((got.at(t, 3 + u) - bwd[t][u]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn bilstm_reversal_symmetry(seed in any::<u64>(), len in 1usize..7) {
        let layer = BiLstm::new("lstm", 3, 2);
        let mut store = ParamStore::new();
        layer.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut swapped = store.clone();
        for suffix in ["w_x", "w_h", "b"] {
            let f = store.get(&format!("lstm.fwd.{suffix}")).unwrap().clone();
            let b = store.get(&format!("lstm.bwd.{suffix}")).unwrap().clone();
            *swapped.get_mut(&format!("lstm.fwd.{suffix}")).unwrap() = b;
            *swapped.get_mut(&format!("lstm.bwd.{suffix}")).unwrap() = f;
        }
        let x = random_tensor(&[len, 3], seed ^ 6);
        let reversed: Vec<usize> = (0..len).rev().collect();
        let xr = permute_rows(&x, &reversed);
        let out = run_bilstm(&layer, &store, &x);
        let out_r = run_bilstm(&layer, &swapped, &xr);
        for t in 0..len {
            let r = len - 1 - t;
            for u in 0..2 {
                prop_assert!((out.at(t, u) - out_r.at(r, 2 + u)).abs() < 1e-12);
                prop_assert!((out.at(t, 2 + u) - out_r.at(r, u)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equilibrium_output_between_branches(seed in any::<u64>(), rows in 1usize..6) {
        let d = 5;
        let mut store = ParamStore::new();
        store.insert("fuse.w", random_tensor(&[d, d], seed).map(|v| 3.0 * v));
        store.insert("fuse.b", random_tensor(&[1, d], seed ^ 7));
        let tc = random_tensor(&[rows, d], seed ^ 8).map(|v| 4.0 * v);
        let ctx = random_tensor(&[rows, d], seed ^ 9).map(|v| 4.0 * v);
        let mut g = Graph::new();
        let mut p = Binder::new(&store);
        let (a, b) = (g.constant(tc.clone()), g.constant(ctx.clone()));
        let (gate, out) = equilibrium_fuse(&mut g, &mut p, a, b).unwrap();
        for &v in g.value(gate).data() {
            prop_assert!(v > 0.0 && v < 1.0);
        }
        for (k, &o) in g.value(out).data().iter().enumerate() {
            let (lo, hi) = (tc.data()[k].min(ctx.data()[k]), tc.data()[k].max(ctx.data()[k]));
            prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
        }
    }

    #[test]
    fn corpus_text_round_trips(seeds in proptest::collection::vec(any::<u64>(), 0..12)) {
        let corpus: Vec<_> = seeds.iter().map(|&s| random_sentence(s, 20)).collect();
        let text = corpus_to_string(&corpus);
        prop_assert_eq!(parse_corpus_str(&text, DEFAULT_MAX_LEN).unwrap(), corpus);
    }

    #[test]
    fn stats_are_additive(a in proptest::collection::vec(any::<u64>(), 0..8), b in proptest::collection::vec(any::<u64>(), 0..8)) {
        let left: Vec<_> = a.iter().map(|&s| random_sentence(s, 12)).collect();
        let right: Vec<_> = b.iter().map(|&s| random_sentence(s, 12)).collect();
        let both: Vec<_> = left.iter().chain(&right).cloned().collect();
        prop_assert_eq!(corpus_stats(&both), corpus_stats(&left) + corpus_stats(&right));
    }

    #[test]
    fn sharded_kg_equals_sequential(seeds in proptest::collection::vec(any::<u64>(), 0..30), shards in 1usize..9) {
        let corpus: Vec<_> = seeds.iter().map(|&s| random_sentence(s, 10)).collect();
        prop_assert_eq!(build_causal_kg_sharded(&corpus, shards), build_causal_kg(&corpus));
    }

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), count in 0usize..6) {
        let mut store = ParamStore::<f32>::new();
        for k in 0..count {
            let rank = (seed as usize + k) % 3;
            let shape: Vec<usize> = (0..rank).map(|r| 1 + (seed as usize >> (4 * (k + r))) % 4).collect();
            store.insert(format!("p{k}.{seed}"), random_tensor(&shape, seed ^ k as u64).cast());
        }
        let bytes = encode_checkpoint(&store).unwrap();
        prop_assert_eq!(decode_checkpoint(&bytes).unwrap(), store);
    }

    #[test]
    fn embedding_file_round_trips(seed in any::<u64>(), lens in proptest::collection::vec(1usize..6, 0..5)) {
        let mut e = ExternalEmbeddings::new(7);
        for (k, &len) in lens.iter().enumerate() {
            e.insert(format!("s{k}"), random_tensor(&[len, 7], seed ^ k as u64).cast()).unwrap();
        }
        prop_assert_eq!(ExternalEmbeddings::decode(&e.encode().unwrap()).unwrap(), e);
    }

    #[test]
    fn report_identities(pairs in proptest::collection::vec((0usize..3, 0usize..3), 0..80)) {
        let mut c = Confusion::default();
        for &(g, p) in &pairs {
            c.record(CausalTag::ALL[g], CausalTag::ALL[p]);
        }
        let r = EvalReport::from_confusion(c, 1);
        prop_assert_eq!(r.macro_f1, macro_f1(r.cause.f1, r.effect.f1));
        for m in [r.cause, r.effect] {
            let want = if m.precision + m.recall > 0.0 {
                2.0 * m.precision * m.recall / (m.precision + m.recall)
            } else {
                0.0
            };
            prop_assert_eq!(m.f1, want);
            prop_assert!((0.0..=1.0).contains(&m.f1));
        }
    }
}
