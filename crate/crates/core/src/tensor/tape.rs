use std::borrow::Cow;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{axis_extents, Result, Scalar, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// How a mask interacts with softmax normalization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum MaskMode {
    /// Masked entries are excluded before normalizing; each slice sums to one.
    #[default]
    Renormalize,
    /// Softmax over the whole slice, then multiplied by the mask.
    Literal,
}

/// What a renormalizing softmax does with a slice whose mask is all zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EmptySlice {
    #[default]
    Error,
    /// The slice comes out as all zeros and passes no gradient.
    Zero,
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Concat { parts: Vec<Var>, axis: usize },
    Transpose(Var),
    Narrow { x: Var, axis: usize, start: usize },
    GatherRows { table: Var, rows: Vec<usize> },
    OuterSum(Var, Var),
    LeakyRelu { x: Var, slope: T },
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    Softmax {
        x: Var,
        axis: usize,
        mask: Option<Vec<T>>,
        /// Unmasked softmax, kept only in literal mode.
        full: Option<Vec<T>>,
    },
    Dropout { x: Var, scale: Vec<T> },
    CrossEntropy { probs: Var, targets: Tensor<T> },
    Sum(Var),
    Mean(Var),
}

pub(crate) struct Node<'a, T: Scalar> {
    pub(crate) value: Cow<'a, Tensor<T>>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Probability floor applied inside cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// A recording tape. Parameters can be borrowed for the lifetime `'a`
/// so that binding them costs no copy.
pub struct Graph<'a, T: Scalar> {
    pub(crate) nodes: Vec<Node<'a, T>>,
    train: bool,
    seed: u64,
    dropout_calls: u64,
    clamp_count: usize,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub(crate) fn new(grads: Vec<Option<Tensor<T>>>) -> Self {
        Self { grads }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

pub(crate) fn mat_view<T: Scalar>(t: &Tensor<T>) -> ArrayView2<'_, T> {
    let (r, c) = t.dims2().expect("rank-2");
    ArrayView2::from_shape((r, c), t.data()).expect("contiguous")
}

pub(crate) fn mat_view_mut<T: Scalar>(t: &mut Tensor<T>) -> ArrayViewMut2<'_, T> {
    let (r, c) = t.dims2().expect("rank-2");
    ArrayViewMut2::from_shape((r, c), t.data_mut()).expect("contiguous")
}

impl<'a, T: Scalar> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    /// Inference-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            train: false,
            seed: 0,
            dropout_calls: 0,
            clamp_count: 0,
        }
    }

    /// Training-mode graph; dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            train: true,
            seed,
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of cross-entropy terms that hit the probability floor.
    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Cow::Owned(value), op, rg))
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// Owned leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// Borrowed leaf that receives a gradient.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let mut out = Tensor::zeros(&[m, n]);
        general_mat_mul(
            T::one(),
            &mat_view(self.value(a)),
            &mat_view(self.value(b)),
            T::zero(),
            &mut mat_view_mut(&mut out),
        );
        self.push_op("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    fn zip_same(&self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push_op("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push_op("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push_op("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `[1, n]` (or `[n]`) row to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(row).len() != n {
            return Err(shape_err("add_row", format!("[{m}, {n}] + {:?}", self.shape(row))));
        }
        let bias = self.value(row).data();
        let mut out = self.value(x).clone();
        for r in out.data_mut().chunks_mut(n) {
            for (o, &b) in r.iter_mut().zip(bias) {
                *o = *o + b;
            }
        }
        self.push_op("add_row", out, Op::AddRow(x, row), &[x, row])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push_op("scale", out, Op::Scale(x, c), &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", format!("{:?} vs {:?} on axis {axis}", s, base)));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(&shape, data)?;
        self.push_op(
            "concat",
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        self.push_op("transpose", out, Op::Transpose(x), &[x])
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, n, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = (o * n + start) * inner;
            data.extend_from_slice(&src[off..off + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        self.push_op("narrow", out, Op::Narrow { x, axis, start }, &[x])
    }

    /// Row lookup into a `[V, d]` table.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).dims2()?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= v) {
            return Err(shape_err("gather_rows", format!("row {bad} of {v}")));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let out = Tensor::new(&[rows.len(), d], data)?;
        self.push_op(
            "gather_rows",
            out,
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
            &[table],
        )
    }

    /// `out[i][j] = col[i] + row[j]` for a `[m, 1]` column and `[1, n]` row.
    pub fn outer_sum(&mut self, col: Var, row: Var) -> Result<Var> {
        let (m, one_a) = self.value(col).dims2()?;
        let (one_b, n) = self.value(row).dims2()?;
        if one_a != 1 || one_b != 1 {
            return Err(shape_err(
                "outer_sum",
                format!("{:?} and {:?}", self.shape(col), self.shape(row)),
            ));
        }
        let (c, r) = (self.value(col).data(), self.value(row).data());
        let mut data = Vec::with_capacity(m * n);
        for &ci in c {
            data.extend(r.iter().map(|&rj| ci + rj));
        }
        let out = Tensor::new(&[m, n], data)?;
        self.push_op("outer_sum", out, Op::OuterSum(col, row), &[col, row])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * slope });
        self.push_op("leaky_relu", out, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push_op("sigmoid", out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(T::tanh);
        self.push_op("tanh", out, Op::Tanh(x), &[x])
    }

    /// ELU with unit alpha.
    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v.exp_m1() });
        self.push_op("elu", out, Op::Elu(x), &[x])
    }

    /// Plain softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, None, axis, MaskMode::Renormalize, EmptySlice::Error)
    }

    /// Softmax along `axis` restricted by a 0/1 `mask` of the same shape.
    pub fn masked_softmax(
        &mut self,
        x: Var,
        mask: &Tensor<T>,
        axis: usize,
        mode: MaskMode,
        empty: EmptySlice,
    ) -> Result<Var> {
        if mask.shape() != self.shape(x) {
            return Err(shape_err(
                "masked_softmax",
                format!("mask {:?} vs scores {:?}", mask.shape(), self.shape(x)),
            ));
        }
        if mask.data().iter().any(|&m| m != T::zero() && m != T::one()) {
            return Err(TensorError::Invalid {
                op: "masked_softmax",
                detail: "mask entries must be 0 or 1".into(),
            });
        }
        self.softmax_impl(x, Some(mask.data().to_vec()), axis, mode, empty)
    }

    fn softmax_impl(
        &mut self,
        x: Var,
        mask: Option<Vec<T>>,
        axis: usize,
        mode: MaskMode,
        empty: EmptySlice,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("masked_softmax", format!("axis {axis} of {shape:?}")));
        }
        let (outer, n, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        let renorm_mask = match mode {
            MaskMode::Renormalize => mask.as_deref(),
            MaskMode::Literal => None,
        };
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let keep = |j: usize| renorm_mask.is_none_or(|m| m[idx(j)] != T::zero());
                let mut max = T::neg_infinity();
                for j in (0..n).filter(|&j| keep(j)) {
                    max = max.max(src[idx(j)]);
                }
                if max == T::neg_infinity() {
                    match empty {
                        EmptySlice::Error => {
                            return Err(TensorError::EmptySlice {
                                op: "masked_softmax",
                                slice: o * inner + i,
                            })
                        }
                        EmptySlice::Zero => continue,
                    }
                }
                let mut total = T::zero();
                for j in (0..n).filter(|&j| keep(j)) {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total = total + e;
                }
                for j in (0..n).filter(|&j| keep(j)) {
                    out[idx(j)] = out[idx(j)] / total;
                }
            }
        }
        let (value, full) = match (mode, &mask) {
            (MaskMode::Literal, Some(m)) => {
                let masked = out.iter().zip(m).map(|(&s, &k)| s * k).collect();
                (masked, Some(out))
            }
            _ => (out, None),
        };
        let value = Tensor::new(&shape, value)?;
        self.push_op(
            "masked_softmax",
            value,
            Op::Softmax {
                x,
                axis,
                mask,
                full,
            },
            &[x],
        )
    }

    /// Inverted dropout. Identity outside training mode or when `p == 0`.
    ///
    /// Each call draws from its own stream of a ChaCha generator keyed by the
    /// graph seed, so masks depend only on the seed and call order.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid {
                op: "dropout",
                detail: format!("p = {p}"),
            });
        }
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.dropout_calls);
        self.dropout_calls += 1;
        let keep_scale = T::lit(1.0 / (1.0 - p));
        let scale: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        let out = Tensor::new(src.shape(), data)?;
        self.push_op("dropout", out, Op::Dropout { x, scale }, &[x])
    }

    /// Mean over rows of `-sum_c target_c * ln(prob_c)`; the last axis is the
    /// class axis. Probabilities below the floor are clamped and counted.
    pub fn cross_entropy(&mut self, probs: Var, targets: &Tensor<T>) -> Result<Var> {
        let p = self.value(probs);
        if p.shape() != targets.shape() || p.rank() == 0 {
            return Err(shape_err(
                "cross_entropy",
                format!("probs {:?} vs targets {:?}", p.shape(), targets.shape()),
            ));
        }
        let classes = *p.shape().last().unwrap_or(&1);
        let rows = p.len() / classes.max(1);
        let floor = T::lit(PROB_FLOOR);
        let mut total = T::zero();
        let mut clamped = 0;
        for (&pi, &ti) in p.data().iter().zip(targets.data()) {
            if ti == T::zero() {
                continue;
            }
            if pi < floor {
                clamped += 1;
            }
            total = total - ti * pi.max(floor).ln();
        }
        if clamped > 0 {
            log::warn!("cross_entropy clamped {clamped} probabilities at {PROB_FLOOR:e}");
            self.clamp_count += clamped;
        }
        let out = Tensor::scalar(total / T::lit(rows.max(1) as f64));
        self.push_op(
            "cross_entropy",
            out,
            Op::CrossEntropy {
                probs,
                targets: targets.clone(),
            },
            &[probs],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push_op("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s: T = t.data().iter().copied().sum();
        let m = s / T::lit(t.len().max(1) as f64);
        self.push_op("mean", Tensor::scalar(m), Op::Mean(x), &[x])
    }
}

/// Logistic function kept strictly inside (0, 1): saturated results are
/// replaced by the nearest representable values inside the interval.
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    let s = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    let below_one = T::one() - T::epsilon() / T::lit(2.0);
    s.max(T::min_positive_value()).min(below_one)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn leaky_relu_uses_slope_on_negatives() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(&[2], vec![-2.0, 3.0]).unwrap());
        let y = g.leaky_relu(x, 0.008).unwrap();
        let v = g.value(y).data();
        assert!(close(v[0] as f64, -0.016, 1e-7));
        assert_eq!(v[1], 3.0);
    }

    #[test]
    fn masked_softmax_renormalizes_over_unmasked() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let mask = Tensor::new(&[1, 3], vec![1.0, 0.0, 1.0]).unwrap();
        let y = g
            .masked_softmax(x, &mask, 1, MaskMode::Renormalize, EmptySlice::Error)
            .unwrap();
        let e = std::f64::consts::E;
        let v = g.value(y).data();
        assert!(close(v[0], 1.0 / (1.0 + e * e), 1e-12));
        assert_eq!(v[1], 0.0);
        assert!(close(v[2], e * e / (1.0 + e * e), 1e-12));
        assert!(close(v[0], 0.1192, 1e-4) && close(v[2], 0.8808, 1e-4));
    }

    #[test]
    fn literal_mode_zeroes_after_normalizing() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[1, 3], vec![0.0, 0.0, 0.0]).unwrap());
        let mask = Tensor::new(&[1, 3], vec![1.0, 0.0, 1.0]).unwrap();
        let y = g
            .masked_softmax(x, &mask, 1, MaskMode::Literal, EmptySlice::Error)
            .unwrap();
        let v = g.value(y).data();
        assert!(close(v[0], 1.0 / 3.0, 1e-12));
        assert_eq!(v[1], 0.0);
        assert!(close(v[0] + v[2], 2.0 / 3.0, 1e-12));
    }

    #[test]
    fn empty_slice_policy() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let mask = Tensor::new(&[2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let err = g
            .masked_softmax(x, &mask, 1, MaskMode::Renormalize, EmptySlice::Error)
            .unwrap_err();
        assert_eq!(
            err,
            TensorError::EmptySlice {
                op: "masked_softmax",
                slice: 0
            }
        );
        let y = g
            .masked_softmax(x, &mask, 1, MaskMode::Renormalize, EmptySlice::Zero)
            .unwrap();
        assert_eq!(&g.value(y).data()[..2], &[0.0, 0.0]);
    }

    #[test]
    fn softmax_along_axis_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[2, 2], vec![0.0, 1.0, 0.0, 3.0]).unwrap());
        let y = g.softmax(x, 0).unwrap();
        let v = g.value(y).data();
        assert!(close(v[0] + v[2], 1.0, 1e-12));
        assert!(close(v[0], 0.5, 1e-12));
        assert!(close(v[1] + v[3], 1.0, 1e-12));
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::new(&[2], vec![0.25, 0.75]).unwrap());
        let t = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        let l = g.cross_entropy(p, &t).unwrap();
        assert!(close(g.value(l).item(), -(0.75f64).ln(), 1e-12));
        assert!(close(g.value(l).item(), 0.2877, 1e-4));

        let p = g.constant(Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
        let l = g.cross_entropy(p, &t).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        assert_eq!(g.clamp_count(), 0);
    }

    #[test]
    fn cross_entropy_clamps_zero_gold_probability() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::new(&[2], vec![1.0, 0.0]).unwrap());
        let t = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        let l = g.cross_entropy(p, &t).unwrap();
        assert!(close(g.value(l).item(), -(1e-12f64).ln(), 1e-9));
        assert_eq!(g.clamp_count(), 1);
    }

    #[test]
    fn dropout_is_identity_in_inference_and_seeded_in_training() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::ones(&[4, 4]));
        assert_eq!(g.dropout(x, 0.5).unwrap(), x);

        let run = |seed| {
            let mut g = Graph::<f32>::training(seed);
            let x = g.constant(Tensor::ones(&[8, 8]));
            let y = g.dropout(x, 0.5).unwrap();
            g.value(y).data().to_vec()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
        assert!(run(3).iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn non_finite_is_reported_with_op_name() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(&[1], vec![f32::MAX]).unwrap());
        let err = g.add(x, x).unwrap_err();
        assert_eq!(err, TensorError::NonFinite { op: "add" });
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(TensorError::Shape { .. })));
        let c = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(g.add(a, c), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap());
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = g.narrow(c, 1, 2, 1).unwrap();
        assert_eq!(g.value(back), g.value(b));
        let rows = g.concat(&[a, a], 0).unwrap();
        assert_eq!(g.shape(rows), &[4, 2]);
    }

    #[test]
    fn sigmoid_stays_inside_open_interval() {
        for v in [-1e4, -800.0, -40.0, 40.0, 800.0, 1e4] {
            let s64 = sigmoid(v);
            assert!(s64 > 0.0 && s64 < 1.0, "{v} -> {s64}");
            let s32 = sigmoid(v as f32);
            assert!(s32 > 0.0 && s32 < 1.0, "{v} -> {s32}");
        }
        assert_eq!(sigmoid(0.0f64), 0.5);
    }
}