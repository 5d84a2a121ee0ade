use ndarray::linalg::general_mat_mul;

use super::tape::{mat_view, mat_view_mut, Gradients, Graph, Op, Var, PROB_FLOOR};
use super::{axis_extents, Result, Scalar, Tensor, TensorError};

impl<T: Scalar> Graph<'_, T> {
    /// Reverse pass from a scalar `loss`. Gradients are returned for every
    /// node that depends on a gradient-requiring leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients::new(grads))
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &self.nodes[id].value;
        let mut acc = |v: Var, delta: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let zip = |a: &Tensor<T>, f: &dyn Fn(T, T) -> T| -> Tensor<T> {
            let data = g.data().iter().zip(a.data()).map(|(&gi, &ai)| f(gi, ai)).collect();
            Tensor::new(g.shape(), data).expect("same shape")
        };

        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let mut ga = Tensor::zeros(ta.shape());
                    general_mat_mul(
                        T::one(),
                        &mat_view(g),
                        &mat_view(tb).t(),
                        T::zero(),
                        &mut mat_view_mut(&mut ga),
                    );
                    acc(*a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = Tensor::zeros(tb.shape());
                    general_mat_mul(
                        T::one(),
                        &mat_view(ta).t(),
                        &mat_view(g),
                        T::zero(),
                        &mut mat_view_mut(&mut gb),
                    );
                    acc(*b, gb);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let ga = zip(self.value(*b), &|gi, bi| gi * bi);
                let gb = zip(self.value(*a), &|gi, ai| gi * ai);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                let n = self.value(*row).len();
                let mut gr = vec![T::zero(); n];
                for r in g.data().chunks(n) {
                    for (s, &v) in gr.iter_mut().zip(r) {
                        *s = *s + v;
                    }
                }
                acc(*row, Tensor::new(self.shape(*row), gr).expect("row shape"));
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * *c)),
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = axis_extents(out.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p);
                    let block = ps[*axis] * inner;
                    let full_block = out.shape()[*axis] * inner;
                    let mut data = Vec::with_capacity(outer * block);
                    for o in 0..outer {
                        let start = o * full_block + offset;
                        data.extend_from_slice(&g.data()[start..start + block]);
                    }
                    offset += block;
                    acc(p, Tensor::new(ps, data).expect("part shape"));
                }
            }
            Op::Transpose(x) => acc(*x, g.transpose().expect("rank 2")),
            Op::Narrow { x, axis, start } => {
                let xs = self.shape(*x);
                let (outer, n, inner) = axis_extents(xs, *axis);
                let len = out.shape()[*axis];
                let mut gx = Tensor::zeros(xs);
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    gx.data_mut()[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[src..src + len * inner]);
                }
                acc(*x, gx);
            }
            Op::GatherRows { table, rows } => {
                let ts = self.shape(*table);
                let d = ts[1];
                let mut gt = Tensor::zeros(ts);
                for (k, &r) in rows.iter().enumerate() {
                    let dst = &mut gt.data_mut()[r * d..(r + 1) * d];
                    for (t, &v) in dst.iter_mut().zip(&g.data()[k * d..(k + 1) * d]) {
                        *t = *t + v;
                    }
                }
                acc(*table, gt);
            }
            Op::OuterSum(col, row) => {
                let (m, n) = g.dims2().expect("rank 2");
                let mut gc = vec![T::zero(); m];
                let mut gr = vec![T::zero(); n];
                for i in 0..m {
                    for j in 0..n {
                        let v = g.data()[i * n + j];
                        gc[i] = gc[i] + v;
                        gr[j] = gr[j] + v;
                    }
                }
                acc(*col, Tensor::new(&[m, 1], gc).expect("col"));
                acc(*row, Tensor::new(&[1, n], gr).expect("row"));
            }
            Op::LeakyRelu { x, slope } => {
                let s = *slope;
                acc(
                    *x,
                    zip(self.value(*x), &|gi, xi| if xi > T::zero() { gi } else { gi * s }),
                );
            }
            Op::Sigmoid(x) => acc(*x, zip(out, &|gi, y| gi * y * (T::one() - y))),
            Op::Tanh(x) => acc(*x, zip(out, &|gi, y| gi * (T::one() - y * y))),
            Op::Elu(x) => {
                let gx = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .zip(out.data())
                    .map(|((&gi, &xi), &yi)| if xi > T::zero() { gi } else { gi * (yi + T::one()) })
                    .collect();
                acc(*x, Tensor::new(g.shape(), gx).expect("same shape"));
            }
            Op::Softmax {
                x,
                axis,
                mask,
                full,
            } => {
                // Literal mode: y = s * m, so the upstream gradient is masked and
                // pushed through the unmasked softmax s.
                let (s, upstream): (&[T], Vec<T>) = match (full, mask) {
                    (Some(s), Some(m)) => (
                        s.as_slice(),
                        g.data().iter().zip(m).map(|(&gi, &mi)| gi * mi).collect(),
                    ),
                    _ => (out.data(), g.data().to_vec()),
                };
                let (outer, n, inner) = axis_extents(out.shape(), *axis);
                let mut gx = vec![T::zero(); s.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dot: T = (0..n).map(|j| upstream[idx(j)] * s[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] = s[idx(j)] * (upstream[idx(j)] - dot);
                        }
                    }
                }
                acc(*x, Tensor::new(out.shape(), gx).expect("same shape"));
            }
            Op::Dropout { x, scale } => {
                let gx = g.data().iter().zip(scale).map(|(&gi, &s)| gi * s).collect();
                acc(*x, Tensor::new(g.shape(), gx).expect("same shape"));
            }
            Op::CrossEntropy { probs, targets } => {
                let p = self.value(*probs);
                let classes = *p.shape().last().unwrap_or(&1);
                let rows = T::lit((p.len() / classes.max(1)).max(1) as f64);
                let floor = T::lit(PROB_FLOOR);
                let up = g.item();
                let gp = p
                    .data()
                    .iter()
                    .zip(targets.data())
                    .map(|(&pi, &ti)| {
                        if ti == T::zero() || pi < floor {
                            T::zero()
                        } else {
                            -up * ti / (pi * rows)
                        }
                    })
                    .collect();
                acc(*probs, Tensor::new(p.shape(), gp).expect("same shape"));
            }
            Op::Sum(x) => acc(*x, Tensor::full(self.shape(*x), g.item())),
            Op::Mean(x) => {
                let n = T::lit(self.value(*x).len().max(1) as f64);
                acc(*x, Tensor::full(self.shape(*x), g.item() / n));
            }
        }
    }
}
