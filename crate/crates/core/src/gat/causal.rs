//! Single-relation attention over the knowledge-graph adjacency.

use rand::Rng;

use super::{masked_attention, pair_scores, GatConfig};
use crate::error::ModelError;
use crate::params::{xavier, Binder, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct CausalGat {
    pub name: String,
    pub input_dim: usize,
    pub config: GatConfig,
}

impl CausalGat {
    pub fn new(name: impl Into<String>, input_dim: usize, config: GatConfig) -> Self {
        Self {
            name: name.into(),
            input_dim,
            config,
        }
    }

    pub fn weight_name(&self, head: usize) -> String {
        format!("{}.h{head}.w", self.name)
    }

    pub fn attention_name(&self, head: usize) -> String {
        format!("{}.h{head}.a", self.name)
    }

    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        for k in 0..self.config.heads {
            store.insert(self.weight_name(k), xavier(rng, self.input_dim, self.config.dim));
            store.insert(self.attention_name(k), xavier(rng, 2 * self.config.dim, 1));
        }
    }

    /// Attention weights per head plus the `[L, K m]` output.
    pub fn forward_traced<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        p: &mut Binder<'a, T>,
        h: Var,
        adj: &Tensor<T>,
    ) -> Result<(Vec<Var>, Var), ModelError> {
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut alphas = Vec::with_capacity(self.config.heads);
        for k in 0..self.config.heads {
            let w = p.bind(g, &self.weight_name(k))?;
            let a = p.bind(g, &self.attention_name(k))?;
            let proj = g.matmul(h, w)?;
            let scores = pair_scores(g, proj, proj, a)?;
            let alpha = masked_attention(
                g,
                scores,
                adj,
                self.config.leaky_slope,
                self.config.mask_mode.into(),
            )?;
            alphas.push(alpha);
            let alpha = g.dropout(alpha, self.config.dropout)?;
            let agg = g.matmul(alpha, proj)?;
            heads.push(g.elu(agg)?);
        }
        let out = g.concat(&heads, 1)?;
        Ok((alphas, out))
    }

    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        p: &mut Binder<'a, T>,
        h: Var,
        adj: &Tensor<T>,
    ) -> Result<Var, ModelError> {
        Ok(self.forward_traced(g, p, h, adj)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_adjacency_is_tokenwise_projection() {
        let layer = CausalGat::new("cgat", 6, GatConfig::default());
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        layer.init(&mut store, &mut rng);
        let x = Tensor::new(&[4, 6], (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

        let mut g = Graph::new();
        let mut p = Binder::new(&store);
        let h = g.constant(x.clone());
        let out = layer.forward(&mut g, &mut p, h, &Tensor::identity(4)).unwrap();
        let out = g.value(out).clone();
        assert_eq!(out.shape(), &[4, 300]);
        for k in 0..3 {
            let w = store.get(&layer.weight_name(k)).unwrap();
            for i in 0..4 {
                for c in 0..100 {
                    let z: f64 = (0..6).map(|d| x.at(i, d) * w.at(d, c)).sum();
                    let expect = if z > 0.0 { z } else { z.exp_m1() };
                    assert!((out.at(i, k * 100 + c) - expect).abs() < 1e-12);
                }
            }
        }
    }
}
