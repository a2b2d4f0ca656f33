//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every builder call evaluates its node eagerly and appends it to the
//! node list, so node order is a topological order by construction.
//! [`forward_backward`] walks that list in reverse, accumulating input
//! gradients in a fixed order, which makes results bitwise reproducible.
//!
//! Tensors are viewed as matrices `[rows, cols]` where `cols` is the last
//! axis; a vector is one row. Binary elementwise ops accept a right-hand
//! side that is either the same shape, a single row broadcast over rows,
//! or a single element broadcast everywhere.

use std::collections::{BTreeMap, HashMap};

use crate::numkit::tensor::{matmul_raw, matmul_tn_raw};
use crate::numkit::{NumkitError, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub enum Op<T> {
    Constant,
    Param(String),
    MatMul {
        transpose_rhs: bool,
    },
    Add,
    Sub,
    Mul,
    Scale(T),
    LayerNorm {
        eps: T,
    },
    Softmax,
    Gelu,
    Relu,
    Sigmoid,
    Embedding {
        ids: Vec<usize>,
    },
    Sum,
    Mean,
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    BceWithLogits {
        targets: Vec<T>,
    },
}

impl<T> Op<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax => "softmax",
            Op::Gelu => "gelu",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Embedding { .. } => "embedding",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Scalar,
}

/// Gradients keyed by parameter name.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, NodeId>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_COEFF: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let inner = c * (x + T::lit(GELU_COEFF) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let k = T::lit(GELU_COEFF);
    let t = (c * (x + k * x * x * x)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x)
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op<T> {
        &self.nodes[id.0].op
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>, value: Tensor<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value });
        id
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Constant, Vec::new(), value)
    }

    /// Registers a trainable leaf. Repeated calls with the same name
    /// return the node created first.
    pub fn param(&mut self, name: &str, value: &Tensor<T>) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let id = self.push(Op::Param(name.to_string()), Vec::new(), value.clone());
        self.params.insert(name.to_string(), id);
        id
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    /// Trainable leaves in creation order.
    pub fn param_names(&self) -> Vec<&str> {
        let mut v: Vec<(&str, NodeId)> = self
            .params
            .iter()
            .map(|(k, &id)| (k.as_str(), id))
            .collect();
        v.sort_by_key(|&(_, id)| id);
        v.into_iter().map(|(k, _)| k).collect()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumkitError> {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumkitError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(
        &mut self,
        a: NodeId,
        b: NodeId,
        transpose_rhs: bool,
    ) -> Result<NodeId, NumkitError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 {
            return Err(mismatch("matmul", va, vb));
        }
        let (m, k) = (va.rows(), va.cols());
        let (k2, n) = if transpose_rhs {
            (vb.cols(), vb.rows())
        } else {
            (vb.rows(), vb.cols())
        };
        if k != k2 {
            return Err(mismatch("matmul", va, vb));
        }
        let out = matmul_raw(va.data(), vb.data(), m, k, n, transpose_rhs);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(Op::MatMul { transpose_rhs }, vec![a, b], value))
    }

    fn broadcast_kind(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<Broadcast, NumkitError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() == vb.shape() {
            Ok(Broadcast::Same)
        } else if vb.len() == 1 {
            Ok(Broadcast::Scalar)
        } else if vb.rows() == 1 && vb.cols() == va.cols() {
            Ok(Broadcast::Row)
        } else {
            Err(mismatch(op, va, vb))
        }
    }

    fn binary(
        &mut self,
        op: Op<T>,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
    ) -> Result<NodeId, NumkitError> {
        let kind = self.broadcast_kind(op.kind(), a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let cols = va.cols();
        let data: Vec<T> = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match kind {
                    Broadcast::Same => vb.data()[i],
                    Broadcast::Row => vb.data()[i % cols],
                    Broadcast::Scalar => vb.data()[0],
                };
                f(x, y)
            })
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(op, vec![a, b], value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumkitError> {
        self.binary(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumkitError> {
        self.binary(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumkitError> {
        self.binary(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let value = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(factor), vec![a], value)
    }

    fn unary(&mut self, op: Op<T>, a: NodeId, f: impl Fn(T) -> T) -> NodeId {
        let value = self.value(a).map(f);
        self.push(op, vec![a], value)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Gelu, a, gelu)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Relu, a, |x| x.max(T::zero()))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sigmoid, a, sigmoid)
    }

    /// Row-wise normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: NodeId, eps: T) -> NodeId {
        let va = self.value(a);
        let cols = va.cols();
        let n = T::from_usize(cols).unwrap();
        let mut data = Vec::with_capacity(va.len());
        for row in va.data().chunks(cols) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            data.extend(row.iter().map(|&x| (x - mean) * inv));
        }
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        self.push(Op::LayerNorm { eps }, vec![a], value)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let cols = va.cols();
        let mut data = Vec::with_capacity(va.len());
        for row in va.data().chunks(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&x| (x - max).exp()).collect();
            let total: T = exps.iter().copied().sum();
            data.extend(exps.into_iter().map(|e| e / total));
        }
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        self.push(Op::Softmax, vec![a], value)
    }

    /// Gathers rows of `table` (`[vocab, dim]`) into a `[ids.len(), dim]` matrix.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, NumkitError> {
        let vt = self.value(table);
        if vt.shape().len() != 2 || ids.is_empty() {
            return Err(NumkitError::InvalidShape(vt.shape().to_vec()));
        }
        let (vocab, dim) = (vt.rows(), vt.cols());
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(NumkitError::IndexOutOfRange {
                    index: id,
                    bound: vocab,
                });
            }
            data.extend_from_slice(&vt.data()[id * dim..(id + 1) * dim]);
        }
        let value = Tensor::matrix(ids.len(), dim, data)?;
        Ok(self.push(Op::Embedding { ids: ids.to_vec() }, vec![table], value))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum, vec![a], value)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let value = Tensor::scalar(va.sum() / T::from_usize(va.len()).unwrap());
        self.push(Op::Mean, vec![a], value)
    }

    /// Concatenates matrices along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId, NumkitError> {
        let first = parts
            .first()
            .map(|&p| self.value(p))
            .ok_or(NumkitError::InvalidShape(vec![]))?;
        let (rows0, cols0) = (first.rows(), first.cols());
        let value = match axis {
            0 => {
                let mut rows = 0;
                let mut data = Vec::new();
                for &p in parts {
                    let v = self.value(p);
                    if v.cols() != cols0 {
                        return Err(mismatch("concat", first, v));
                    }
                    rows += v.rows();
                    data.extend_from_slice(v.data());
                }
                Tensor::matrix(rows, cols0, data)?
            }
            1 => {
                let mut cols = 0;
                for &p in parts {
                    let v = self.value(p);
                    if v.rows() != rows0 {
                        return Err(mismatch("concat", first, v));
                    }
                    cols += v.cols();
                }
                let mut data = Vec::with_capacity(rows0 * cols);
                for r in 0..rows0 {
                    for &p in parts {
                        let v = self.value(p);
                        let c = v.cols();
                        data.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
                    }
                }
                Tensor::matrix(rows0, cols, data)?
            }
            _ => return Err(NumkitError::InvalidAxis(axis)),
        };
        Ok(self.push(Op::Concat { axis }, parts.to_vec(), value))
    }

    /// Takes `len` rows (`axis = 0`) or columns (`axis = 1`) starting at `start`.
    pub fn slice(
        &mut self,
        a: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<NodeId, NumkitError> {
        let va = self.value(a);
        let (rows, cols) = (va.rows(), va.cols());
        let value = match axis {
            0 if len > 0 && start + len <= rows => Tensor::matrix(
                len,
                cols,
                va.data()[start * cols..(start + len) * cols].to_vec(),
            )?,
            1 if len > 0 && start + len <= cols => {
                let mut data = Vec::with_capacity(rows * len);
                for r in 0..rows {
                    data.extend_from_slice(&va.data()[r * cols + start..r * cols + start + len]);
                }
                Tensor::matrix(rows, len, data)?
            }
            0 | 1 => {
                return Err(NumkitError::IndexOutOfRange {
                    index: start + len,
                    bound: if axis == 0 { rows } else { cols },
                })
            }
            _ => return Err(NumkitError::InvalidAxis(axis)),
        };
        Ok(self.push(Op::Slice { axis, start, len }, vec![a], value))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// computed in the numerically stable logit form.
    pub fn bce_with_logits(
        &mut self,
        logits: NodeId,
        targets: &[T],
    ) -> Result<NodeId, NumkitError> {
        let vl = self.value(logits);
        if vl.len() != targets.len() {
            return Err(NumkitError::ShapeMismatch {
                op: "bce_with_logits",
                left: vl.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let n = T::from_usize(targets.len()).unwrap();
        let total: T = vl
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let value = Tensor::scalar(total / n);
        Ok(self.push(
            Op::BceWithLogits {
                targets: targets.to_vec(),
            },
            vec![logits],
            value,
        ))
    }

    /// Gradients of every input of `id` given the upstream gradient `g`.
    fn local_grads(&self, id: NodeId, g: &Tensor<T>) -> Vec<Tensor<T>> {
        let node = &self.nodes[id.0];
        let out = &node.value;
        let input = |i: usize| &self.nodes[node.inputs[i].0].value;
        match &node.op {
            Op::Constant | Op::Param(_) => Vec::new(),
            Op::MatMul { transpose_rhs } => {
                let (a, b) = (input(0), input(1));
                let (m, k, n) = (a.rows(), a.cols(), out.cols());
                let ga = matmul_raw(g.data(), b.data(), m, n, k, !transpose_rhs);
                let gb = if *transpose_rhs {
                    // out = a b^T, b: [n,k] -> gb = g^T a
                    matmul_tn_raw(g.data(), a.data(), m, n, k)
                } else {
                    matmul_tn_raw(a.data(), g.data(), m, k, n)
                };
                vec![
                    Tensor::new(a.shape().to_vec(), ga).unwrap(),
                    Tensor::new(b.shape().to_vec(), gb).unwrap(),
                ]
            }
            Op::Add | Op::Sub | Op::Mul => {
                let (a, b) = (input(0), input(1));
                let kind = if a.shape() == b.shape() {
                    Broadcast::Same
                } else if b.len() == 1 {
                    Broadcast::Scalar
                } else {
                    Broadcast::Row
                };
                let cols = a.cols();
                let bi = |i: usize| match kind {
                    Broadcast::Same => i,
                    Broadcast::Row => i % cols,
                    Broadcast::Scalar => 0,
                };
                let mut ga = Tensor::zeros(a.shape());
                let mut gb = Tensor::zeros(b.shape());
                for (i, &gi) in g.data().iter().enumerate() {
                    let j = bi(i);
                    let (da, db) = match node.op {
                        Op::Add => (gi, gi),
                        Op::Sub => (gi, -gi),
                        _ => (gi * b.data()[j], gi * a.data()[i]),
                    };
                    ga.data_mut()[i] = da;
                    let slot = &mut gb.data_mut()[j];
                    *slot = *slot + db;
                }
                vec![ga, gb]
            }
            Op::Scale(f) => vec![g.map(|x| x * *f)],
            Op::Gelu => vec![g.zip_map(input(0), |gi, x| gi * gelu_grad(x))],
            Op::Relu => {
                vec![g.zip_map(input(0), |gi, x| if x > T::zero() { gi } else { T::zero() })]
            }
            Op::Sigmoid => vec![g.zip_map(out, |gi, y| gi * y * (T::one() - y))],
            Op::LayerNorm { eps } => {
                let x = input(0);
                let cols = x.cols();
                let n = T::from_usize(cols).unwrap();
                let mut gx = Vec::with_capacity(x.len());
                for ((xr, yr), gr) in x
                    .data()
                    .chunks(cols)
                    .zip(out.data().chunks(cols))
                    .zip(g.data().chunks(cols))
                {
                    let mean = xr.iter().copied().sum::<T>() / n;
                    let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                    let inv = T::one() / (var + *eps).sqrt();
                    let g_mean = gr.iter().copied().sum::<T>() / n;
                    let gy_mean = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / n;
                    gx.extend(
                        gr.iter()
                            .zip(yr)
                            .map(|(&gi, &yi)| inv * (gi - g_mean - yi * gy_mean)),
                    );
                }
                vec![Tensor::new(x.shape().to_vec(), gx).unwrap()]
            }
            Op::Softmax => {
                let cols = out.cols();
                let mut gx = Vec::with_capacity(out.len());
                for (yr, gr) in out.data().chunks(cols).zip(g.data().chunks(cols)) {
                    let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                    gx.extend(yr.iter().zip(gr).map(|(&y, &gi)| y * (gi - dot)));
                }
                vec![Tensor::new(out.shape().to_vec(), gx).unwrap()]
            }
            Op::Embedding { ids } => {
                let table = input(0);
                let dim = table.cols();
                let mut gt = Tensor::zeros(table.shape());
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut gt.data_mut()[id * dim..(id + 1) * dim];
                    for (d, &s) in dst.iter_mut().zip(&g.data()[r * dim..(r + 1) * dim]) {
                        *d = *d + s;
                    }
                }
                vec![gt]
            }
            Op::Sum => vec![Tensor::full(input(0).shape(), g.item())],
            Op::Mean => {
                let a = input(0);
                vec![Tensor::full(
                    a.shape(),
                    g.item() / T::from_usize(a.len()).unwrap(),
                )]
            }
            Op::Concat { axis } => {
                let mut grads = Vec::with_capacity(node.inputs.len());
                let total_cols = out.cols();
                let mut offset = 0;
                for &p in &node.inputs {
                    let v = &self.nodes[p.0].value;
                    let data = if *axis == 0 {
                        let start = offset * total_cols;
                        offset += v.rows();
                        g.data()[start..start + v.len()].to_vec()
                    } else {
                        let c = v.cols();
                        let mut d = Vec::with_capacity(v.len());
                        for r in 0..v.rows() {
                            d.extend_from_slice(
                                &g.data()[r * total_cols + offset..r * total_cols + offset + c],
                            );
                        }
                        offset += c;
                        d
                    };
                    grads.push(Tensor::new(v.shape().to_vec(), data).unwrap());
                }
                grads
            }
            Op::Slice { axis, start, len } => {
                let a = input(0);
                let cols = a.cols();
                let mut ga = Tensor::zeros(a.shape());
                if *axis == 0 {
                    ga.data_mut()[start * cols..(start + len) * cols].copy_from_slice(g.data());
                } else {
                    for r in 0..a.rows() {
                        ga.data_mut()[r * cols + start..r * cols + start + len]
                            .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                    }
                }
                vec![ga]
            }
            Op::BceWithLogits { targets } => {
                let z = input(0);
                let n = T::from_usize(targets.len()).unwrap();
                let scale = g.item() / n;
                let data = z
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&zi, &y)| (sigmoid(zi) - y) * scale)
                    .collect();
                vec![Tensor::new(z.shape().to_vec(), data).unwrap()]
            }
        }
    }
}

fn mismatch<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> NumkitError {
    NumkitError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Runs the backward pass from a scalar `loss` node.
///
/// Returns the loss value and a gradient for every registered parameter
/// (zero-filled when the parameter does not influence the loss).
pub fn forward_backward<T: Scalar>(
    graph: &Graph<T>,
    loss: NodeId,
) -> Result<(T, Gradients<T>), NumkitError> {
    let loss_value = graph.value(loss);
    if !loss_value.is_scalar() {
        return Err(NumkitError::NonScalarLoss(loss_value.shape().to_vec()));
    }
    for (i, node) in graph.nodes.iter().enumerate().take(loss.0 + 1) {
        if !node.value.all_finite() {
            return Err(NumkitError::NonFinite {
                node: i,
                op: node.op.kind(),
            });
        }
    }

    let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
    grads[loss.0] = Some(Tensor::new(loss_value.shape().to_vec(), vec![T::one()]).unwrap());
    for idx in (0..=loss.0).rev() {
        let Some(g) = grads[idx].take() else { continue };
        let node = &graph.nodes[idx];
        if matches!(node.op, Op::Param(_) | Op::Constant) {
            grads[idx] = Some(g);
            continue;
        }
        let locals = graph.local_grads(NodeId(idx), &g);
        for (&input, local) in node.inputs.iter().zip(locals) {
            match &mut grads[input.0] {
                Some(acc) => acc.add_assign(&local),
                slot @ None => *slot = Some(local),
            }
        }
    }

    let mut out = Gradients::new();
    for (name, &id) in &graph.params {
        let g = if id.0 <= loss.0 {
            grads[id.0].take()
        } else {
            None
        }
        .unwrap_or_else(|| Tensor::zeros(graph.value(id).shape()));
        if !g.all_finite() {
            return Err(NumkitError::NonFinite {
                node: id.0,
                op: "param_grad",
            });
        }
        out.insert(name.clone(), g);
    }
    Ok((loss_value.item(), out))
}
