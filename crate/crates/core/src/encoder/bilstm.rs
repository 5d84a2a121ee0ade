//! Bidirectional LSTM over token rows.
//!
//! Each direction keeps `w_x: [input, 4H]`, `w_h: [H, 4H]` and `b: [1, 4H]`
//! with gate columns ordered input, forget, candidate, output:
//!
//! ```text
//! z = x_t w_x + h_{t-1} w_h + b
//! c_t = sigmoid(z_f) * c_{t-1} + sigmoid(z_i) * tanh(z_g)
//! h_t = sigmoid(z_o) * tanh(c_t)
//! ```

use rand::Rng;

use crate::error::ModelError;
use crate::params::{xavier, Binder, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn prefix(self, base: &str) -> String {
        match self {
            Self::Forward => format!("{base}.fwd"),
            Self::Backward => format!("{base}.bwd"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BiLstm {
    pub name: String,
    pub input_dim: usize,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new(name: impl Into<String>, input_dim: usize, hidden: usize) -> Self {
        Self {
            name: name.into(),
            input_dim,
            hidden,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    fn names(&self, dir: Direction) -> [String; 3] {
        let p = dir.prefix(&self.name);
        [format!("{p}.w_x"), format!("{p}.w_h"), format!("{p}.b")]
    }

    /// Registers both directions. Forget-gate biases start at one.
    pub fn init<T: Scalar, R: Rng>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let h = self.hidden;
        for dir in [Direction::Forward, Direction::Backward] {
            let [wx, wh, b] = self.names(dir);
            store.insert(wx, xavier(rng, self.input_dim, 4 * h));
            store.insert(wh, xavier(rng, h, 4 * h));
            let mut bias = Tensor::zeros(&[1, 4 * h]);
            bias.data_mut()[h..2 * h].fill(T::one());
            store.insert(b, bias);
        }
    }

    pub fn check<T: Scalar>(&self, store: &ParamStore<T>) -> Result<(), ModelError> {
        let h = self.hidden;
        for dir in [Direction::Forward, Direction::Backward] {
            let [wx, wh, b] = self.names(dir);
            store.expect_shape(&wx, &[self.input_dim, 4 * h])?;
            store.expect_shape(&wh, &[h, 4 * h])?;
            store.expect_shape(&b, &[1, 4 * h])?;
        }
        Ok(())
    }

    /// One direction over `x: [L, input]`, returning `[L, H]` in token order.
    pub fn run_direction<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        p: &mut Binder<'a, T>,
        x: Var,
        dir: Direction,
    ) -> Result<Var, ModelError> {
        let [wx, wh, b] = self.names(dir);
        let (wx, wh, b) = (p.bind(g, &wx)?, p.bind(g, &wh)?, p.bind(g, &b)?);
        let len = g.shape(x)[0];
        let h_dim = self.hidden;
        let projected = g.matmul(x, wx)?;
        let projected = g.add_row(projected, b)?;

        let mut h = g.constant(Tensor::zeros(&[1, h_dim]));
        let mut c = g.constant(Tensor::zeros(&[1, h_dim]));
        let mut outputs = vec![h; len];
        let steps: Vec<usize> = match dir {
            Direction::Forward => (0..len).collect(),
            Direction::Backward => (0..len).rev().collect(),
        };
        for t in steps {
            let xt = g.narrow(projected, 0, t, 1)?;
            let rec = g.matmul(h, wh)?;
            let z = g.add(xt, rec)?;
            let zi = g.narrow(z, 1, 0, h_dim)?;
            let zf = g.narrow(z, 1, h_dim, h_dim)?;
            let zg = g.narrow(z, 1, 2 * h_dim, h_dim)?;
            let zo = g.narrow(z, 1, 3 * h_dim, h_dim)?;
            let i = g.sigmoid(zi)?;
            let f = g.sigmoid(zf)?;
            let cand = g.tanh(zg)?;
            let o = g.sigmoid(zo)?;
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            c = g.add(keep, write)?;
            let squashed = g.tanh(c)?;
            h = g.mul(o, squashed)?;
            outputs[t] = h;
        }
        Ok(g.concat(&outputs, 0)?)
    }

    /// `[L, input] -> [L, 2H]`: forward states then backward states per row.
    pub fn forward<'a, T: Scalar>(
        &self,
        g: &mut Graph<'a, T>,
        p: &mut Binder<'a, T>,
        x: Var,
    ) -> Result<Var, ModelError> {
        let fwd = self.run_direction(g, p, x, Direction::Forward)?;
        let bwd = self.run_direction(g, p, x, Direction::Backward)?;
        Ok(g.concat(&[fwd, bwd], 1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_store(layer: &BiLstm, seed: u64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        layer.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed));
        store
    }

    fn random_input(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(&[rows, cols], data).unwrap()
    }

    fn run(layer: &BiLstm, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let mut g = Graph::new();
        let mut p = Binder::new(store);
        let xv = g.constant(x.clone());
        let out = layer.forward(&mut g, &mut p, xv).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let layer = BiLstm::new("lstm", 4, 3);
        let mut store = random_store(&layer, 1);
        store.set_all(0.0);
        let out = run(&layer, &store, &random_input(5, 4, 2));
        assert_eq!(out.shape(), &[5, 6]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_token_directions_coincide_with_shared_weights() {
        let layer = BiLstm::new("lstm", 3, 2);
        let mut store = random_store(&layer, 3);
        for suffix in ["w_x", "w_h", "b"] {
            let fwd = store.get(&format!("lstm.fwd.{suffix}")).unwrap().clone();
            *store.get_mut(&format!("lstm.bwd.{suffix}")).unwrap() = fwd;
        }
        let out = run(&layer, &store, &random_input(1, 3, 4));
        assert_eq!(out.shape(), &[1, 4]);
        assert_eq!(&out.data()[..2], &out.data()[2..]);
    }

    #[test]
    fn output_width_with_default_hidden() {
        let layer = BiLstm::new("lstm", 8, 150);
        let store = random_store(&layer, 5);
        let out = run(&layer, &store, &random_input(3, 8, 6));
        assert_eq!(out.shape(), &[3, 300]);
    }
}
