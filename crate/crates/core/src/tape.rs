//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! replays the record once in reverse and returns gradients for every node.
//! Tapes are single-use: one forward/backward cycle each. An inference tape
//! (created with [`Tape::inference`]) runs the same operation code without
//! recording anything.
//!
//! The primitive set is exactly what the row-attention backbone needs:
//! matmul (plain and transposed-RHS), elementwise add, bias add, scalar
//! scale, last-dim softmax, last-dim layernorm with affine, GELU, embedding
//! lookup, row/column concat and slice, sum/mean reductions, cross-entropy,
//! and squared error. There is no broadcasting beyond the bias rules; any
//! other shape mismatch is an error.

use crate::error::CoreError;
use crate::tensor::{NodeId, Scalar, Tensor};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Additive mask value that zeroes a softmax slot without producing NaN.
pub fn mask_value<T: Scalar>() -> T {
    T::from_f64(-1e30)
}

enum Op<T> {
    Leaf,
    Matmul {
        a: NodeId,
        b: NodeId,
        a_data: Arc<Vec<T>>,
        b_data: Arc<Vec<T>>,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    AddBias {
        a: NodeId,
        bias: NodeId,
        rows: usize,
        cols: usize,
    },
    Scale {
        a: NodeId,
        c: T,
    },
    Softmax {
        a: NodeId,
        probs: Arc<Vec<T>>,
        cols: usize,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Arc<Vec<T>>,
        rstd: Vec<T>,
        gamma_data: Arc<Vec<T>>,
        cols: usize,
    },
    Gelu {
        a: NodeId,
        a_data: Arc<Vec<T>>,
    },
    EmbedLookup {
        table: NodeId,
        ids: Vec<usize>,
        dim: usize,
    },
    ConcatRows {
        parts: Vec<(NodeId, usize)>,
        cols: usize,
    },
    ConcatCols {
        parts: Vec<(NodeId, usize)>,
        rows: usize,
    },
    SliceRows {
        a: NodeId,
        start: usize,
        rows_out: usize,
        a_rows: usize,
        cols: usize,
    },
    SliceCols {
        a: NodeId,
        start: usize,
        cols_out: usize,
        a_cols: usize,
        rows: usize,
    },
    Sum {
        a: NodeId,
        n: usize,
    },
    Mean {
        a: NodeId,
        n: usize,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Arc<Vec<T>>,
        cols: usize,
    },
    SquaredError {
        pred: NodeId,
        diff: Vec<T>,
    },
    Reshape {
        a: NodeId,
    },
}

struct Node<T> {
    op: Op<T>,
    shape: Vec<usize>,
}

/// Records one forward pass for a single backward sweep.
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    recording: bool,
    consumed: bool,
}

/// Gradients keyed by tape node, as returned by [`Tape::backward`].
pub struct Gradients<T> {
    tape_id: u64,
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `t`, or `None` if `t` is not on
    /// the tape or did not influence the loss.
    pub fn get(&self, t: &Tensor<T>) -> Option<Tensor<T>> {
        let id = t.node?;
        if t.tape_id != self.tape_id {
            return None;
        }
        self.grads.get(id)?.as_ref().map(|g| {
            Tensor::with_node(self.shapes[id].clone(), Arc::new(g.clone()), None, 0)
        })
    }
}

fn check_finite<T: Scalar>(op: &'static str, data: &[T]) -> Result<(), CoreError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::NonFinite { op })
    }
}

fn shape_err<T>(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<T, CoreError> {
    Err(CoreError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

// C[m,n] = A[m,k] * B[k,n]
fn matmul_kernel<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_ip * b_v;
            }
        }
    }
    c
}

// C[m,n] = A[m,k] * B[n,k]^T  (rows of B are contiguous, so this is a dot product)
fn matmul_nt_kernel<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

// C[k,n] = A[m,k]^T * B[m,n]
fn matmul_tn_kernel<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); k * n];
    for p in 0..m {
        let a_row = &a[p * k..(p + 1) * k];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            let c_row = &mut c[i * n..(i + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_pi * b_v;
            }
        }
    }
    c
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Scalar> Tape<T> {
    /// New recording tape.
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            recording: true,
            consumed: false,
        }
    }

    /// Tape that evaluates operations without recording; backward is not
    /// available.
    pub fn inference() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            recording: false,
            consumed: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        self.nodes.len() - 1
    }

    /// Registers a tensor as a differentiable leaf and returns a copy bound
    /// to this tape. Gradients are looked up through the returned tensor.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Tensor<T> {
        if !self.recording {
            return t.detached();
        }
        let id = self.push(Op::Leaf, t.shape().to_vec());
        Tensor::with_node(t.shape().to_vec(), t.data_arc(), Some(id), self.id)
    }

    /// Node id of `t` on this tape, registering it as a constant leaf if it
    /// has none. Only called when recording.
    fn ensure_node(&mut self, t: &Tensor<T>) -> NodeId {
        match t.node {
            Some(id) if t.tape_id == self.id => id,
            _ => self.push(Op::Leaf, t.shape().to_vec()),
        }
    }

    fn out(
        &mut self,
        data: Vec<T>,
        shape: Vec<usize>,
        op: &'static str,
        make: impl FnOnce(&mut Self) -> Op<T>,
    ) -> Result<Tensor<T>, CoreError> {
        check_finite(op, &data)?;
        let node = if self.recording {
            let payload = make(self);
            Some(self.push(payload, shape.clone()))
        } else {
            None
        };
        Ok(Tensor::with_node(shape, Arc::new(data), node, self.id))
    }

    /// Matrix product `a @ b` for 2-D tensors.
    pub fn matmul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, CoreError> {
        self.matmul_impl(a, b, false)
    }

    /// Matrix product with transposed right-hand side: `a @ b^T`.
    pub fn matmul_nt(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, CoreError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(
        &mut self,
        a: &Tensor<T>,
        b: &Tensor<T>,
        trans_b: bool,
    ) -> Result<Tensor<T>, CoreError> {
        let op = if trans_b { "matmul_nt" } else { "matmul" };
        if a.shape().len() != 2 || b.shape().len() != 2 {
            return shape_err(op, a.shape(), b.shape());
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (n, bk) = if trans_b {
            (b.shape()[0], b.shape()[1])
        } else {
            (b.shape()[1], b.shape()[0])
        };
        if bk != k {
            return shape_err(op, a.shape(), b.shape());
        }
        let data = if trans_b {
            matmul_nt_kernel(a.values(), b.values(), m, k, n)
        } else {
            matmul_kernel(a.values(), b.values(), m, k, n)
        };
        let (a_arc, b_arc) = (a.data_arc(), b.data_arc());
        self.out(data, vec![m, n], op, |tape| {
            let a_id = tape.ensure_node(a);
            let b_id = tape.ensure_node(b);
            Op::Matmul {
                a: a_id,
                b: b_id,
                a_data: a_arc,
                b_data: b_arc,
                m,
                k,
                n,
                trans_b,
            }
        })
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, CoreError> {
        if a.shape() != b.shape() {
            return shape_err("add", a.shape(), b.shape());
        }
        let data = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(&x, &y)| x + y)
            .collect();
        self.out(data, a.shape().to_vec(), "add", |tape| {
            let a_id = tape.ensure_node(a);
            let b_id = tape.ensure_node(b);
            Op::Add { a: a_id, b: b_id }
        })
    }

    /// Adds a length-`c` bias vector to every row of an `[r, c]` matrix.
    pub fn add_bias(&mut self, a: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, CoreError> {
        if a.shape().len() != 2 || bias.shape().len() != 1 || a.shape()[1] != bias.shape()[0] {
            return shape_err("add_bias", a.shape(), bias.shape());
        }
        let (rows, cols) = (a.shape()[0], a.shape()[1]);
        let bv = bias.values();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(a.values()[r * cols + c] + bv[c]);
            }
        }
        self.out(data, a.shape().to_vec(), "add_bias", |tape| {
            let a_id = tape.ensure_node(a);
            let b_id = tape.ensure_node(bias);
            Op::AddBias {
                a: a_id,
                bias: b_id,
                rows,
                cols,
            }
        })
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: &Tensor<T>, c: T) -> Result<Tensor<T>, CoreError> {
        let data = a.values().iter().map(|&x| x * c).collect();
        self.out(data, a.shape().to_vec(), "scale", |tape| {
            let a_id = tape.ensure_node(a);
            Op::Scale { a: a_id, c }
        })
    }

    /// Softmax along the last dimension.
    pub fn softmax_lastdim(&mut self, a: &Tensor<T>) -> Result<Tensor<T>, CoreError> {
        let cols = match a.shape().last() {
            Some(&c) if c > 0 => c,
            _ => return shape_err("softmax_lastdim", a.shape(), &[]),
        };
        let mut data = Vec::with_capacity(a.len());
        for row in a.values().chunks(cols) {
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
            let denom: T = exps.iter().cloned().sum();
            data.extend(exps.into_iter().map(|e| e / denom));
        }
        let probs = Arc::new(data.clone());
        self.out(data, a.shape().to_vec(), "softmax_lastdim", |tape| {
            let a_id = tape.ensure_node(a);
            Op::Softmax {
                a: a_id,
                probs,
                cols,
            }
        })
    }

    /// Layer normalization over the last dimension with affine parameters:
    /// `y = gamma * (x - mean) / sqrt(var + eps) + beta`.
    pub fn layernorm_lastdim(
        &mut self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: T,
    ) -> Result<Tensor<T>, CoreError> {
        let cols = match x.shape().last() {
            Some(&c) if c > 0 => c,
            _ => return shape_err("layernorm_lastdim", x.shape(), &[]),
        };
        if gamma.shape() != [cols] || beta.shape() != [cols] {
            return shape_err("layernorm_lastdim", x.shape(), gamma.shape());
        }
        let rows = x.len() / cols;
        let inv_n = T::from_f64(1.0 / cols as f64);
        let mut data = Vec::with_capacity(x.len());
        let mut xhat = Vec::with_capacity(x.len());
        let mut rstd = Vec::with_capacity(rows);
        let (gv, bv) = (gamma.values(), beta.values());
        for row in x.values().chunks(cols) {
            let mean: T = row.iter().cloned().sum::<T>() * inv_n;
            let var: T = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                * inv_n;
            let r = (var + eps).sqrt().recip();
            rstd.push(r);
            for (c, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                data.push(gv[c] * h + bv[c]);
            }
        }
        let xhat = Arc::new(xhat);
        let g_arc = gamma.data_arc();
        self.out(data, x.shape().to_vec(), "layernorm_lastdim", |tape| {
            let x_id = tape.ensure_node(x);
            let g_id = tape.ensure_node(gamma);
            let b_id = tape.ensure_node(beta);
            Op::LayerNorm {
                x: x_id,
                gamma: g_id,
                beta: b_id,
                xhat,
                rstd,
                gamma_data: g_arc,
                cols,
            }
        })
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&mut self, a: &Tensor<T>) -> Result<Tensor<T>, CoreError> {
        let c = T::from_f64(GELU_C);
        let coef = T::from_f64(GELU_A);
        let half = T::from_f64(0.5);
        let data = a
            .values()
            .iter()
            .map(|&x| {
                let u = c * (x + coef * x * x * x);
                half * x * (T::one() + u.tanh())
            })
            .collect();
        let a_arc = a.data_arc();
        self.out(data, a.shape().to_vec(), "gelu", |tape| {
            let a_id = tape.ensure_node(a);
            Op::Gelu {
                a: a_id,
                a_data: a_arc,
            }
        })
    }

    /// Gathers rows of an embedding table: `table[v, d]` indexed by `ids`.
    pub fn embed_lookup(
        &mut self,
        table: &Tensor<T>,
        ids: &[usize],
    ) -> Result<Tensor<T>, CoreError> {
        if table.shape().len() != 2 {
            return shape_err("embed_lookup", table.shape(), &[ids.len()]);
        }
        let (vocab, dim) = (table.shape()[0], table.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(CoreError::InvalidInput(format!(
                "embed_lookup: index {bad} out of range for table with {vocab} rows"
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            data.extend_from_slice(&table.values()[i * dim..(i + 1) * dim]);
        }
        let ids = ids.to_vec();
        self.out(data, vec![ids.len(), dim], "embed_lookup", |tape| {
            let t_id = tape.ensure_node(table);
            Op::EmbedLookup {
                table: t_id,
                ids,
                dim,
            }
        })
    }

    /// Stacks 2-D tensors with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[&Tensor<T>]) -> Result<Tensor<T>, CoreError> {
        if parts.is_empty() {
            return Err(CoreError::InvalidInput("concat_rows of nothing".into()));
        }
        let cols = parts[0].shape().get(1).copied().unwrap_or(0);
        let mut rows = 0;
        for p in parts {
            if p.shape().len() != 2 || p.shape()[1] != cols {
                return shape_err("concat_rows", parts[0].shape(), p.shape());
            }
            rows += p.shape()[0];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(p.values());
        }
        self.out(data, vec![rows, cols], "concat_rows", |tape| {
            let ids = parts
                .iter()
                .map(|p| (tape.ensure_node(p), p.shape()[0]))
                .collect();
            Op::ConcatRows { parts: ids, cols }
        })
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[&Tensor<T>]) -> Result<Tensor<T>, CoreError> {
        if parts.is_empty() {
            return Err(CoreError::InvalidInput("concat_cols of nothing".into()));
        }
        let rows = parts[0].shape().first().copied().unwrap_or(0);
        let mut cols = 0;
        for p in parts {
            if p.shape().len() != 2 || p.shape()[0] != rows {
                return shape_err("concat_cols", parts[0].shape(), p.shape());
            }
            cols += p.shape()[1];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let pc = p.shape()[1];
                data.extend_from_slice(&p.values()[r * pc..(r + 1) * pc]);
            }
        }
        self.out(data, vec![rows, cols], "concat_cols", |tape| {
            let ids = parts
                .iter()
                .map(|p| (tape.ensure_node(p), p.shape()[1]))
                .collect();
            Op::ConcatCols { parts: ids, rows }
        })
    }

    /// Copies rows `start..end` of a 2-D tensor.
    pub fn slice_rows(
        &mut self,
        a: &Tensor<T>,
        start: usize,
        end: usize,
    ) -> Result<Tensor<T>, CoreError> {
        if a.shape().len() != 2 || end > a.shape()[0] || start >= end {
            return shape_err("slice_rows", a.shape(), &[start, end]);
        }
        let (a_rows, cols) = (a.shape()[0], a.shape()[1]);
        let data = a.values()[start * cols..end * cols].to_vec();
        self.out(data, vec![end - start, cols], "slice_rows", |tape| {
            let a_id = tape.ensure_node(a);
            Op::SliceRows {
                a: a_id,
                start,
                rows_out: end - start,
                a_rows,
                cols,
            }
        })
    }

    /// Copies columns `start..end` of a 2-D tensor.
    pub fn slice_cols(
        &mut self,
        a: &Tensor<T>,
        start: usize,
        end: usize,
    ) -> Result<Tensor<T>, CoreError> {
        if a.shape().len() != 2 || end > a.shape()[1] || start >= end {
            return shape_err("slice_cols", a.shape(), &[start, end]);
        }
        let (rows, a_cols) = (a.shape()[0], a.shape()[1]);
        let cols_out = end - start;
        let mut data = Vec::with_capacity(rows * cols_out);
        for r in 0..rows {
            data.extend_from_slice(&a.values()[r * a_cols + start..r * a_cols + end]);
        }
        self.out(data, vec![rows, cols_out], "slice_cols", |tape| {
            let a_id = tape.ensure_node(a);
            Op::SliceCols {
                a: a_id,
                start,
                cols_out,
                a_cols,
                rows,
            }
        })
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, a: &Tensor<T>) -> Result<Tensor<T>, CoreError> {
        let s: T = a.values().iter().cloned().sum();
        let n = a.len();
        self.out(vec![s], vec![], "sum", |tape| {
            let a_id = tape.ensure_node(a);
            Op::Sum { a: a_id, n }
        })
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean(&mut self, a: &Tensor<T>) -> Result<Tensor<T>, CoreError> {
        if a.is_empty() {
            return Err(CoreError::InvalidInput("mean of empty tensor".into()));
        }
        let s: T = a.values().iter().cloned().sum();
        let n = a.len();
        let m = s / T::from_f64(n as f64);
        self.out(vec![m], vec![], "mean", |tape| {
            let a_id = tape.ensure_node(a);
            Op::Mean { a: a_id, n }
        })
    }

    /// Per-row cross-entropy of `[n, c]` logits against class indices.
    pub fn cross_entropy(
        &mut self,
        logits: &Tensor<T>,
        targets: &[usize],
    ) -> Result<Tensor<T>, CoreError> {
        if logits.shape().len() != 2 || logits.shape()[0] != targets.len() {
            return shape_err("cross_entropy", logits.shape(), &[targets.len()]);
        }
        let cols = logits.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(CoreError::InvalidInput(format!(
                "cross_entropy: class {bad} out of range for {cols} logits"
            )));
        }
        let mut data = Vec::with_capacity(targets.len());
        let mut probs = Vec::with_capacity(logits.len());
        for (row, &t) in logits.values().chunks(cols).zip(targets) {
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            data.push(lse - row[t]);
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        let probs = Arc::new(probs);
        let targets = targets.to_vec();
        self.out(data, vec![targets.len()], "cross_entropy", |tape| {
            let l_id = tape.ensure_node(logits);
            Op::CrossEntropy {
                logits: l_id,
                targets,
                probs,
                cols,
            }
        })
    }

    /// Elementwise squared error against a constant target.
    pub fn squared_error(
        &mut self,
        pred: &Tensor<T>,
        target: &Tensor<T>,
    ) -> Result<Tensor<T>, CoreError> {
        if pred.shape() != target.shape() {
            return shape_err("squared_error", pred.shape(), target.shape());
        }
        let diff: Vec<T> = pred
            .values()
            .iter()
            .zip(target.values())
            .map(|(&p, &t)| p - t)
            .collect();
        let data = diff.iter().map(|&d| d * d).collect();
        self.out(data, pred.shape().to_vec(), "squared_error", |tape| {
            let p_id = tape.ensure_node(pred);
            Op::SquaredError { pred: p_id, diff }
        })
    }

    /// Reinterprets the value buffer under a new shape of equal size.
    pub fn reshape(
        &mut self,
        a: &Tensor<T>,
        new_shape: Vec<usize>,
    ) -> Result<Tensor<T>, CoreError> {
        if new_shape.iter().product::<usize>() != a.len() {
            return shape_err("reshape", a.shape(), &new_shape);
        }
        let data = a.values().to_vec();
        self.out(data, new_shape, "reshape", |tape| {
            let a_id = tape.ensure_node(a);
            Op::Reshape { a: a_id }
        })
    }

    /// Reverse sweep from a scalar loss. Consumes the tape; every recorded
    /// node is visited exactly once.
    pub fn backward(&mut self, loss: &Tensor<T>) -> Result<Gradients<T>, CoreError> {
        if self.consumed {
            return Err(CoreError::TapeConsumed);
        }
        if !loss.is_scalar() {
            return Err(CoreError::NotScalar {
                op: "backward",
                shape: loss.shape().to_vec(),
            });
        }
        let loss_id = match loss.node {
            Some(id) if loss.tape_id == self.id && id < self.nodes.len() => id,
            _ => return Err(CoreError::NotOnTape),
        };
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss_id] = Some(vec![T::one()]);

        for id in (0..=loss_id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            tape_id: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.shape.clone()).collect(),
        })
    }

    fn accumulate(&self, id: NodeId, g: &[T], grads: &mut [Option<Vec<T>>]) {
        fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize, f: impl FnOnce(&mut [T])) {
            let buf = slot.get_or_insert_with(|| vec![T::zero(); len]);
            f(buf);
        }

        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul {
                a,
                b,
                a_data,
                b_data,
                m,
                k,
                n,
                trans_b,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (da, db) = if *trans_b {
                    // C = A B^T: dA = dC B, dB = dC^T A
                    (
                        matmul_kernel(g, b_data, m, n, k),
                        matmul_tn_kernel(g, a_data, m, n, k),
                    )
                } else {
                    // C = A B: dA = dC B^T, dB = A^T dC
                    (
                        matmul_nt_kernel(g, b_data, m, n, k),
                        matmul_tn_kernel(a_data, g, m, k, n),
                    )
                };
                add_into(&mut grads[*a], m * k, |buf| {
                    for (o, v) in buf.iter_mut().zip(&da) {
                        *o += *v;
                    }
                });
                let db_len = db.len();
                add_into(&mut grads[*b], db_len, |buf| {
                    for (o, v) in buf.iter_mut().zip(&db) {
                        *o += *v;
                    }
                });
            }
            Op::Add { a, b } => {
                add_into(&mut grads[*a], g.len(), |buf| {
                    for (o, v) in buf.iter_mut().zip(g) {
                        *o += *v;
                    }
                });
                add_into(&mut grads[*b], g.len(), |buf| {
                    for (o, v) in buf.iter_mut().zip(g) {
                        *o += *v;
                    }
                });
            }
            Op::AddBias { a, bias, rows, cols } => {
                add_into(&mut grads[*a], rows * cols, |buf| {
                    for (o, v) in buf.iter_mut().zip(g) {
                        *o += *v;
                    }
                });
                add_into(&mut grads[*bias], *cols, |buf| {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            buf[c] += g[r * cols + c];
                        }
                    }
                });
            }
            Op::Scale { a, c } => {
                add_into(&mut grads[*a], g.len(), |buf| {
                    for (o, v) in buf.iter_mut().zip(g) {
                        *o += *c * *v;
                    }
                });
            }
            Op::Softmax { a, probs, cols } => {
                add_into(&mut grads[*a], probs.len(), |buf| {
                    for (row, (p_row, g_row)) in
                        probs.chunks(*cols).zip(g.chunks(*cols)).enumerate()
                    {
                        let dot: T = p_row
                            .iter()
                            .zip(g_row)
                            .map(|(&p, &gy)| p * gy)
                            .sum();
                        let out_row = &mut buf[row * cols..(row + 1) * cols];
                        for ((o, &p), &gy) in out_row.iter_mut().zip(p_row).zip(g_row) {
                            *o += p * (gy - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                gamma_data,
                cols,
            } => {
                let cols = *cols;
                let rows = xhat.len() / cols;
                let inv_n = T::from_f64(1.0 / cols as f64);
                add_into(&mut grads[*beta], cols, |buf| {
                    for r in 0..rows {
                        for c in 0..cols {
                            buf[c] += g[r * cols + c];
                        }
                    }
                });
                add_into(&mut grads[*gamma], cols, |buf| {
                    for r in 0..rows {
                        for c in 0..cols {
                            buf[c] += g[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                });
                add_into(&mut grads[*x], xhat.len(), |buf| {
                    for r in 0..rows {
                        let h = &xhat[r * cols..(r + 1) * cols];
                        let gy = &g[r * cols..(r + 1) * cols];
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for c in 0..cols {
                            let dh = gy[c] * gamma_data[c];
                            mean_dh += dh;
                            mean_dh_h += dh * h[c];
                        }
                        mean_dh = mean_dh * inv_n;
                        mean_dh_h = mean_dh_h * inv_n;
                        let out_row = &mut buf[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            let dh = gy[c] * gamma_data[c];
                            out_row[c] += rstd[r] * (dh - mean_dh - h[c] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Gelu { a, a_data } => {
                let c = T::from_f64(GELU_C);
                let coef = T::from_f64(GELU_A);
                let half = T::from_f64(0.5);
                let three = T::from_f64(3.0);
                add_into(&mut grads[*a], a_data.len(), |buf| {
                    for ((o, &x), &gy) in buf.iter_mut().zip(a_data.iter()).zip(g) {
                        let u = c * (x + coef * x * x * x);
                        let t = u.tanh();
                        let sech2 = T::one() - t * t;
                        let du = c * (T::one() + three * coef * x * x);
                        let d = half * (T::one() + t) + half * x * sech2 * du;
                        *o += d * gy;
                    }
                });
            }
            Op::EmbedLookup { table, ids, dim } => {
                let vocab_len = self.nodes[*table].shape.iter().product();
                add_into(&mut grads[*table], vocab_len, |buf| {
                    for (row, &i) in ids.iter().enumerate() {
                        for d in 0..*dim {
                            buf[i * dim + d] += g[row * dim + d];
                        }
                    }
                });
            }
            Op::ConcatRows { parts, cols } => {
                let mut offset = 0;
                for (part, rows) in parts {
                    let len = rows * cols;
                    add_into(&mut grads[*part], len, |buf| {
                        for (o, v) in buf.iter_mut().zip(&g[offset..offset + len]) {
                            *o += *v;
                        }
                    });
                    offset += len;
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total_cols: usize = parts.iter().map(|(_, c)| c).sum();
                let mut col_offset = 0;
                for (part, pc) in parts {
                    add_into(&mut grads[*part], rows * pc, |buf| {
                        for r in 0..*rows {
                            for c in 0..*pc {
                                buf[r * pc + c] += g[r * total_cols + col_offset + c];
                            }
                        }
                    });
                    col_offset += pc;
                }
            }
            Op::SliceRows {
                a,
                start,
                rows_out,
                a_rows,
                cols,
            } => {
                add_into(&mut grads[*a], a_rows * cols, |buf| {
                    for r in 0..*rows_out {
                        for c in 0..*cols {
                            buf[(start + r) * cols + c] += g[r * cols + c];
                        }
                    }
                });
            }
            Op::SliceCols {
                a,
                start,
                cols_out,
                a_cols,
                rows,
            } => {
                add_into(&mut grads[*a], rows * a_cols, |buf| {
                    for r in 0..*rows {
                        for c in 0..*cols_out {
                            buf[r * a_cols + start + c] += g[r * cols_out + c];
                        }
                    }
                });
            }
            Op::Sum { a, n } => {
                let gy = g[0];
                add_into(&mut grads[*a], *n, |buf| {
                    for o in buf.iter_mut() {
                        *o += gy;
                    }
                });
            }
            Op::Mean { a, n } => {
                let gy = g[0] / T::from_f64(*n as f64);
                add_into(&mut grads[*a], *n, |buf| {
                    for o in buf.iter_mut() {
                        *o += gy;
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                cols,
            } => {
                add_into(&mut grads[*logits], probs.len(), |buf| {
                    for (row, &t) in targets.iter().enumerate() {
                        let gy = g[row];
                        let p_row = &probs[row * cols..(row + 1) * cols];
                        let out_row = &mut buf[row * cols..(row + 1) * cols];
                        for (c, (o, &p)) in out_row.iter_mut().zip(p_row).enumerate() {
                            let indicator = if c == t { T::one() } else { T::zero() };
                            *o += (p - indicator) * gy;
                        }
                    }
                });
            }
            Op::SquaredError { pred, diff } => {
                let two = T::from_f64(2.0);
                add_into(&mut grads[*pred], diff.len(), |buf| {
                    for ((o, &d), &gy) in buf.iter_mut().zip(diff).zip(g) {
                        *o += two * d * gy;
                    }
                });
            }
            Op::Reshape { a } => {
                add_into(&mut grads[*a], g.len(), |buf| {
                    for (o, v) in buf.iter_mut().zip(g) {
                        *o += *v;
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, vals: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(vec![rows, cols], vals.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_returns_input() {
        let mut tape = Tape::inference();
        let eye = t2(3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let a = t2(3, 3, &[2., -1., 0.5, 3., 4., -2., 0., 7., 1.]);
        let out = tape.matmul(&eye, &a).unwrap();
        assert!(out.bitwise_eq(&a.detached()));
    }

    #[test]
    fn matmul_nt_matches_explicit_transpose() {
        let mut tape = Tape::inference();
        let a = t2(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let b = t2(2, 3, &[7., 8., 9., 10., 11., 12.]);
        // b^T is [[7,10],[8,11],[9,12]]; a @ b^T computed by hand:
        let expected = t2(2, 2, &[50., 68., 122., 167.]);
        let out = tape.matmul_nt(&a, &b).unwrap();
        assert!(out.bitwise_eq(&expected));
    }

    #[test]
    fn softmax_of_constant_row_is_uniform() {
        let mut tape = Tape::inference();
        let x = Tensor::from_vec(vec![4], vec![0.0; 4]).unwrap();
        let out = tape.softmax_lastdim(&x).unwrap();
        for &v in out.values() {
            assert_eq!(v, 0.25);
        }
    }

    #[test]
    fn softmax_rows_are_simplex_points() {
        let mut tape = Tape::inference();
        let x = t2(3, 4, &[1., -2., 0.5, 3., -10., 0., 10., 2., 0.1, 0.2, 0.3, 0.4]);
        let out = tape.softmax_lastdim(&x).unwrap();
        for row in out.values().chunks(4) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "row sum {s}");
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    // Oracle: recompute mean/variance by hand for [1,2,3] with eps=1e-5.
    #[test]
    fn layernorm_matches_direct_formula() {
        let mut tape = Tape::inference();
        let x = Tensor::from_vec(vec![3], vec![1., 2., 3.]).unwrap();
        let gamma = Tensor::from_vec(vec![3], vec![1.; 3]).unwrap();
        let beta = Tensor::from_vec(vec![3], vec![0.; 3]).unwrap();
        let eps = 1e-5;
        let out = tape.layernorm_lastdim(&x, &gamma, &beta, eps).unwrap();

        let mean = (1.0 + 2.0 + 3.0) / 3.0;
        let var = ((1.0f64 - mean).powi(2) + (2.0 - mean).powi(2) + (3.0 - mean).powi(2)) / 3.0;
        let rstd = 1.0 / (var + eps).sqrt();
        for (i, &xv) in [1.0, 2.0, 3.0].iter().enumerate() {
            let expected = (xv - mean) * rstd;
            assert!((out.values()[i] - expected).abs() < 1e-15);
        }
        let m: f64 = out.values().iter().sum::<f64>() / 3.0;
        let v: f64 = out.values().iter().map(|&y| (y - m) * (y - m)).sum::<f64>() / 3.0;
        assert!(m.abs() < 1e-9);
        assert!((v - 1.0).abs() < 1e-4); // eps shrinks variance slightly
    }

    #[test]
    fn sum_backward_is_all_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(&t2(2, 3, &[5., -1., 2., 0., 9., 4.]));
        let loss = tape.sum(&w).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let gw = grads.get(&w).unwrap();
        assert_eq!(gw.shape(), &[2, 3]);
        assert!(gw.values().iter().all(|&v| v == 1.0));
        // dL/dL itself is seeded to 1
        assert_eq!(grads.get(&loss).unwrap().item(), 1.0);
    }

    // Hand differentiation oracle: L = (W*x - y)^2 with W=3, x=2, y=0
    // => dL/dW = 2*(Wx - y)*x = 2*6*2 = 24.
    #[test]
    fn squared_error_backward_matches_hand_derivative() {
        let mut tape = Tape::new();
        let w = tape.leaf(&t2(1, 1, &[3.0]));
        let x = t2(1, 1, &[2.0]);
        let y = t2(1, 1, &[0.0]);
        let pred = tape.matmul(&w, &x).unwrap();
        let per = tape.squared_error(&pred, &y).unwrap();
        let loss = tape.sum(&per).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&w).unwrap().item(), 24.0);
    }

    // Closed-form softmax cross-entropy: logits (0, ln 3), true class 1:
    // p1 = 3/4, CE = -ln(3/4) = ln(4/3).
    #[test]
    fn cross_entropy_matches_closed_form() {
        let mut tape = Tape::inference();
        let logits = t2(1, 2, &[0.0, 3.0f64.ln()]);
        let ce = tape.cross_entropy(&logits, &[1]).unwrap();
        assert!((ce.values()[0] - (4.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_c() {
        let mut tape = Tape::inference();
        for c in [2usize, 5, 10] {
            let logits = Tensor::from_vec(vec![1, c], vec![0.7; c]).unwrap();
            let ce = tape.cross_entropy(&logits, &[c - 1]).unwrap();
            assert!((ce.values()[0] - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_lookup_gathers_and_scatters() {
        let mut tape = Tape::new();
        let table = tape.leaf(&t2(3, 2, &[1., 2., 3., 4., 5., 6.]));
        let out = tape.embed_lookup(&table, &[2, 0, 2]).unwrap();
        assert_eq!(out.values(), &[5., 6., 1., 2., 5., 6.]);
        let s = tape.sum(&out).unwrap();
        let grads = tape.backward(&s).unwrap();
        // row 2 used twice, row 0 once, row 1 never
        assert_eq!(grads.get(&table).unwrap().values(), &[1., 1., 0., 0., 2., 2.]);
    }

    #[test]
    fn concat_slice_round_trip() {
        let mut tape = Tape::inference();
        let a = t2(2, 2, &[1., 2., 3., 4.]);
        let b = t2(1, 2, &[5., 6.]);
        let cat = tape.concat_rows(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[3, 2]);
        let back = tape.slice_rows(&cat, 0, 2).unwrap();
        assert!(back.bitwise_eq(&a.detached()));

        let c = t2(2, 1, &[9., 10.]);
        let side = tape.concat_cols(&[&a, &c]).unwrap();
        assert_eq!(side.values(), &[1., 2., 9., 3., 4., 10.]);
        let col = tape.slice_cols(&side, 2, 3).unwrap();
        assert!(col.bitwise_eq(&c.detached()));
    }

    #[test]
    fn shape_mismatch_is_reported_with_both_shapes() {
        let mut tape = Tape::inference();
        let a = t2(2, 3, &[0.; 6]);
        let b = t2(2, 3, &[0.; 6]);
        match tape.matmul(&a, &b) {
            Err(CoreError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_output_names_the_op() {
        let mut tape = Tape::inference();
        let a = t2(1, 1, &[1e308]);
        let b = t2(1, 1, &[1e308]);
        match tape.add(&a, &b) {
            Err(CoreError::NonFinite { op }) => assert_eq!(op, "add"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_tensors() {
        let mut tape = Tape::new();
        let w = tape.leaf(&t2(1, 2, &[1., 2.]));
        let doubled = tape.scale(&w, 2.0).unwrap();
        assert!(matches!(
            tape.backward(&doubled),
            Err(CoreError::NotScalar { .. })
        ));
        let stranger = Tensor::<f64>::scalar(1.0);
        assert!(matches!(tape.backward(&stranger), Err(CoreError::NotOnTape)));
    }

    #[test]
    fn tape_is_single_use() {
        let mut tape = Tape::new();
        let w = tape.leaf(&Tensor::scalar(2.0));
        let loss = tape.scale(&w, 3.0).unwrap();
        tape.backward(&loss).unwrap();
        assert!(matches!(tape.backward(&loss), Err(CoreError::TapeConsumed)));
    }

    #[test]
    fn same_graph_twice_is_bitwise_identical() {
        let run = || {
            let mut tape = Tape::inference();
            let a = t2(4, 4, &(0..16).map(|i| (i as f64) * 0.37 - 2.0).collect::<Vec<_>>());
            let b = t2(4, 4, &(0..16).map(|i| ((i * 7 % 5) as f64) * 0.21).collect::<Vec<_>>());
            let m = tape.matmul(&a, &b).unwrap();
            let s = tape.softmax_lastdim(&m).unwrap();
            let g = tape.gelu(&s).unwrap();
            tape.mean(&g).unwrap().item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn masked_softmax_zeroes_masked_slots() {
        let mut tape = Tape::inference();
        let scores = t2(1, 3, &[1.0, 2.0, 0.0]);
        let mask = t2(1, 3, &[0.0, mask_value::<f64>(), 0.0]);
        let masked = tape.add(&scores, &mask).unwrap();
        let p = tape.softmax_lastdim(&masked).unwrap();
        assert_eq!(p.values()[1], 0.0);
        assert!((p.values()[0] + p.values()[2] - 1.0).abs() < 1e-12);
    }
}
