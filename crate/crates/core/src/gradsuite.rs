//! Finite-difference checks of every differentiable primitive and layer.
//!
//! Everything runs in `f64` on small random inputs; each case reduces its
//! output to a scalar through a fixed random weighting so that no gradient
//! coordinate cancels by symmetry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedSentence, CausalTag, TemporalRelation};
use crate::encoder::{BiLstm, EmbeddingProvider, Vocab};
use crate::error::ModelError;
use crate::gat::{time_masks, CausalGat, GatConfig, MaskModeName, TemporalGat};
use crate::graph::{build_causal_kg, build_time_matrices, AdjMatrix};
use crate::head::{self, classify, equilibrium_fuse, one_hot};
use crate::model::{ModelConfig, TcGat, Variant};
use crate::params::{Binder, ParamStore};
use crate::tensor::{grad_check, grad_check_with, EmptySlice, Graph, MaskMode, Tensor, TensorError, Var};

/// Largest accepted relative error between analytic and numeric gradients.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Central-difference step.
pub const GRAD_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub name: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub error: Option<String>,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_rel_error < GRAD_TOLERANCE
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn positive(shape: &[usize], seed: u64) -> Tensor<f64> {
    random(shape, seed).map(|v| 0.2 + v.abs())
}

/// `sum(v * R)` for a fixed random `R` of `v`'s shape.
fn weighted_sum<E: From<TensorError>>(g: &mut Graph<'_, f64>, v: Var) -> Result<Var, E> {
    let w = g.constant(random(g.shape(v), 0xC0FFEE));
    let prod = g.mul(v, w)?;
    Ok(g.sum(prod)?)
}

fn record<E: std::fmt::Display>(name: &str, result: Result<crate::tensor::GradCheckReport, E>) -> GradCase {
    match result {
        Ok(r) => GradCase {
            name: name.to_owned(),
            max_rel_error: r.max_rel_error,
            coordinates: r.coordinates,
            error: None,
        },
        Err(e) => GradCase {
            name: name.to_owned(),
            max_rel_error: f64::INFINITY,
            coordinates: 0,
            error: Some(e.to_string()),
        },
    }
}

fn unary(name: &str, shape: &[usize], op: impl Fn(&mut Graph<'_, f64>, Var) -> Result<Var, TensorError>) -> GradCase {
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| -> Result<Var, TensorError> {
        let y = op(g, v[0])?;
        weighted_sum(g, y)
    };
    record(name, grad_check(f, &[random(shape, 1)], GRAD_EPS))
}

fn binary(
    name: &str,
    a: Tensor<f64>,
    b: Tensor<f64>,
    op: impl Fn(&mut Graph<'_, f64>, Var, Var) -> Result<Var, TensorError>,
) -> GradCase {
    let f = |g: &mut Graph<'_, f64>, v: &[Var]| -> Result<Var, TensorError> {
        let y = op(g, v[0], v[1])?;
        weighted_sum(g, y)
    };
    record(name, grad_check(f, &[a, b], GRAD_EPS))
}

fn primitive_cases() -> Vec<GradCase> {
    let mask = Tensor::from_rows(&[
        vec![1.0, 0.0, 1.0, 1.0],
        vec![0.0, 1.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0],
    ])
    .expect("mask");
    let masked = |mode: MaskMode| {
        let mask = mask.clone();
        move |g: &mut Graph<'_, f64>, x: Var| g.masked_softmax(x, &mask, 1, mode, EmptySlice::Zero)
    };
    let mut cases = vec![
        binary("matmul", random(&[3, 4], 2), random(&[4, 2], 3), |g, a, b| g.matmul(a, b)),
        binary("add", random(&[2, 3], 4), random(&[2, 3], 5), |g, a, b| g.add(a, b)),
        binary("sub", random(&[2, 3], 6), random(&[2, 3], 7), |g, a, b| g.sub(a, b)),
        binary("mul", random(&[2, 3], 8), random(&[2, 3], 9), |g, a, b| g.mul(a, b)),
        binary("add_row", random(&[3, 4], 10), random(&[1, 4], 11), |g, a, b| g.add_row(a, b)),
        binary("concat axis 0", random(&[2, 3], 12), random(&[1, 3], 13), |g, a, b| g.concat(&[a, b], 0)),
        binary("concat axis 1", random(&[2, 3], 14), random(&[2, 2], 15), |g, a, b| g.concat(&[a, b], 1)),
        binary("outer_sum", random(&[3, 1], 16), random(&[1, 4], 17), |g, a, b| g.outer_sum(a, b)),
        unary("scale", &[2, 3], |g, x| g.scale(x, -1.7)),
        unary("transpose", &[2, 3], |g, x| g.transpose(x)),
        unary("narrow", &[4, 3], |g, x| g.narrow(x, 0, 1, 2)),
        unary("gather_rows", &[4, 3], |g, x| g.gather_rows(x, &[2, 0, 2])),
        unary("leaky_relu", &[3, 4], |g, x| g.leaky_relu(x, 0.008)),
        unary("sigmoid", &[3, 4], |g, x| g.sigmoid(x)),
        unary("tanh", &[3, 4], |g, x| g.tanh(x)),
        unary("elu", &[3, 4], |g, x| g.elu(x)),
        unary("softmax axis 1", &[3, 4], |g, x| g.softmax(x, 1)),
        unary("softmax axis 0", &[3, 4], |g, x| g.softmax(x, 0)),
        unary("masked softmax renormalize", &[3, 4], masked(MaskMode::Renormalize)),
        unary("masked softmax literal", &[3, 4], masked(MaskMode::Literal)),
        unary("sum", &[2, 3], |g, x| g.sum(x)),
        unary("mean", &[2, 3], |g, x| g.mean(x)),
    ];

    let targets = one_hot::<f64>(&[CausalTag::O, CausalTag::E, CausalTag::C]);
    let ce = |g: &mut Graph<'_, f64>, v: &[Var]| -> Result<Var, TensorError> {
        let p = g.softmax(v[0], 1)?;
        g.cross_entropy(p, &targets)
    };
    cases.push(record("cross_entropy", grad_check(ce, &[random(&[3, 3], 18)], GRAD_EPS)));

    let direct_ce = |g: &mut Graph<'_, f64>, v: &[Var]| -> Result<Var, TensorError> {
        g.cross_entropy(v[0], &targets)
    };
    cases.push(record(
        "cross_entropy on probabilities",
        grad_check(direct_ce, &[positive(&[3, 3], 19)], GRAD_EPS),
    ));

    let drop = |g: &mut Graph<'_, f64>, v: &[Var]| -> Result<Var, TensorError> {
        let y = g.dropout(v[0], 0.3)?;
        weighted_sum(g, y)
    };
    cases.push(record(
        "dropout",
        grad_check_with(|| Graph::training(11), drop, &[random(&[4, 5], 20)], GRAD_EPS),
    ));
    cases
}

/// Checks gradients with respect to `x` and every parameter in `store`,
/// where `body` builds the layer on a binder preset with those leaves.
fn layer_case<'s, F>(name: &str, store: &'s ParamStore<f64>, x: Tensor<f64>, body: F) -> GradCase
where
    F: Fn(&mut Graph<'s, f64>, &mut Binder<'s, f64>, Var) -> Result<Var, ModelError>,
{
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    let mut inputs = vec![x];
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    let result = grad_check(
        |g, v| -> Result<Var, ModelError> {
            let mut p = Binder::new(store);
            for (name, &var) in names.iter().zip(&v[1..]) {
                p.preset(name, var)?;
            }
            let y = body(g, &mut p, v[0])?;
            weighted_sum(g, y)
        },
        &inputs,
        GRAD_EPS,
    );
    record(name, result)
}

fn fixture_sentence() -> AnnotatedSentence {
    AnnotatedSentence::new(
        "grad",
        ["heavy", "rain", "caused", "severe", "floods"].map(String::from).to_vec(),
        vec![CausalTag::O, CausalTag::C, CausalTag::O, CausalTag::O, CausalTag::E],
        &[
            (1, 4, TemporalRelation::B),
            (1, 2, TemporalRelation::S),
            (0, 3, TemporalRelation::I),
        ],
    )
    .expect("fixture")
}

fn small_gat(mode: MaskModeName) -> GatConfig {
    GatConfig {
        dim: 3,
        heads: 2,
        mask_mode: mode,
        ..GatConfig::default()
    }
}

fn layer_cases() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut cases = Vec::new();

    let lstm = BiLstm::new("lstm", 4, 3);
    let mut store = ParamStore::new();
    lstm.init(&mut store, &mut rng);
    cases.push(layer_case("bilstm 3-step", &store, random(&[3, 4], 22), |g, p, x| {
        lstm.forward(g, p, x)
    }));

    let s = fixture_sentence();
    let masks = time_masks::<f64>(&build_time_matrices(&s));
    for mode in [MaskModeName::Renormalize, MaskModeName::Literal] {
        let layer = TemporalGat::new("tgat", 4, small_gat(mode));
        let mut store = ParamStore::new();
        layer.init(&mut store, &mut rng);
        let name = format!("t-gat ({mode:?})").to_lowercase();
        cases.push(layer_case(&name, &store, random(&[5, 4], 23), |g, p, x| {
            layer.forward(g, p, x, &masks)
        }));
    }

    let mut adj = AdjMatrix::identity(5);
    for (i, j) in [(1, 4), (4, 1), (0, 2), (2, 0)] {
        adj.set(i, j);
    }
    let adj = adj.to_tensor::<f64>();
    let layer = CausalGat::new("cgat", 4, small_gat(MaskModeName::Renormalize));
    let mut store = ParamStore::new();
    layer.init(&mut store, &mut rng);
    cases.push(layer_case("c-gat", &store, random(&[5, 4], 24), |g, p, x| {
        layer.forward(g, p, x, &adj)
    }));

    let mut store = ParamStore::new();
    head::Classifier { dim: 4 }.init(&mut store, &mut rng);
    store.insert(head::FUSE_W, random(&[4, 4], 25));
    store.insert(head::FUSE_B, random(&[1, 4], 26));
    let targets = one_hot::<f64>(&s.causal_tags);
    let ctx = random(&[5, 4], 27);
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    let mut inputs = vec![random(&[5, 4], 28), ctx];
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    let result = grad_check(
        |g, v| -> Result<Var, ModelError> {
            let mut p = Binder::new(&store);
            for (name, &var) in names.iter().zip(&v[2..]) {
                p.preset(name, var)?;
            }
            let (_, fused) = equilibrium_fuse(g, &mut p, v[0], v[1])?;
            let probs = classify(g, &mut p, fused)?;
            head::loss(g, probs, &targets)
        },
        &inputs,
        GRAD_EPS,
    );
    cases.push(record("equilibrium + classifier + loss", result));

    cases.push(model_case());
    cases
}

/// The assembled model end to end, differentiated with respect to every
/// parameter.
fn model_case() -> GradCase {
    let s = fixture_sentence();
    let config = ModelConfig {
        embed_dim: 4,
        bilstm_hidden: 2,
        tgat: small_gat(MaskModeName::Renormalize),
        cgat: small_gat(MaskModeName::Renormalize),
        fuse_dim: 3,
        variant: Variant::Full,
    };
    let provider = EmbeddingProvider::Learned {
        vocab: Vocab::build([&s]),
        dim: 4,
    };
    let model = match TcGat::new(config, provider, build_causal_kg(std::slice::from_ref(&s))) {
        Ok(m) => m,
        Err(e) => return record::<ModelError>("model end to end", Err(e)),
    };
    let store = model.init_params::<f64>(31);
    let features = model.features::<f64>(&s);
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    let inputs: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    let result = grad_check(
        |g, v| -> Result<Var, ModelError> {
            let mut p = Binder::new(&store);
            for (name, &var) in names.iter().zip(v) {
                p.preset(name, var)?;
            }
            let trace = model.forward(g, &mut p, &s, &features)?;
            head::loss(g, trace.probs, &features.targets)
        },
        &inputs,
        GRAD_EPS,
    );
    record("model end to end", result)
}

/// Runs every case in a fixed order.
pub fn gradient_suite() -> Vec<GradCase> {
    let mut cases = primitive_cases();
    cases.extend(layer_cases());
    cases
}
