//! Reverse-mode gradient tape over matrix-valued operations.
//!
//! The forward pass records one node per primitive op; `backward` replays the
//! record in reverse, accumulating vector-Jacobian products. Because nodes are
//! appended in topological order, a single reverse sweep visits every node
//! after all of its consumers.

use std::collections::BTreeMap;
use std::rc::Rc;

use super::matrix::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Matrix};
use super::scalar::{sigmoid, Real};
use super::{KernelError, ParamSet};

/// Handle to a value recorded on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Active column indices per output row, shared by the context-projection op.
/// Each inner slice lists the one-hot positions of one row's context vector.
pub type ActiveCols = Rc<Vec<Vec<u32>>>;

enum Op<S: Real> {
    /// Constant input; no gradient tracked.
    Input,
    /// Leaf registered from a named parameter; gradient collected by name.
    Param,
    /// a @ b
    Matmul { a: NodeId, b: NodeId },
    /// a @ b^T
    MatmulNt { a: NodeId, b: NodeId },
    /// Elementwise a + b (scalar operand broadcasts).
    Add { a: NodeId, b: NodeId },
    /// Elementwise a - b (scalar operand broadcasts).
    Sub { a: NodeId, b: NodeId },
    /// Elementwise a * b (scalar operand broadcasts).
    Mul { a: NodeId, b: NodeId },
    /// 1 - a
    OneMinus { a: NodeId },
    /// a + bias with bias a single row repeated over a's rows.
    AddRowBroadcast { a: NodeId, bias: NodeId },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    /// Row gather: out[i, :] = table[ids[i], :].
    GatherRows { table: NodeId, ids: Rc<Vec<u32>> },
    /// Sparse column sum: out[i, :] = sum_{j in cols[i]} table[:, j].
    ColsSum { table: NodeId, cols: ActiveCols },
    /// Horizontal concatenation [a | b].
    ConcatCols { a: NodeId, b: NodeId },
    /// Constant scaling.
    Scale { a: NodeId, factor: S },
    /// Sum of all entries, yielding 1x1.
    SumAll { a: NodeId },
    /// Masked negative log-likelihood of per-row softmax over logits:
    /// out = sum_i mask[i] * (logsumexp(logits[i,:]) - logits[i, target[i]]).
    NllLoss {
        logits: NodeId,
        targets: Rc<Vec<u32>>,
        mask: Rc<Vec<bool>>,
    },
}

struct Node<S: Real> {
    value: Matrix<S>,
    op: Op<S>,
}

/// Gradients keyed by parameter name. Parameters registered on the tape but
/// unreachable from the loss hold exact zeros.
pub struct Gradients<S: Real> {
    grads: BTreeMap<&'static str, Matrix<S>>,
}

impl<S: Real> Gradients<S> {
    pub fn get(&self, name: &str) -> Option<&Matrix<S>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Matrix<S>)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&'static str, &mut Matrix<S>)> {
        self.grads.iter_mut().map(|(k, v)| (*k, v))
    }

    /// First non-finite gradient entry, as (param, row, col).
    pub fn find_non_finite(&self) -> Option<(&'static str, usize, usize)> {
        self.grads
            .iter()
            .find_map(|(name, g)| g.find_non_finite().map(|(r, c)| (*name, r, c)))
    }
}

/// Reverse-mode tape. Single-threaded by contract; concurrent evaluation
/// requires one tape per thread over a frozen parameter snapshot.
pub struct Tape<S: Real> {
    nodes: Vec<Node<S>>,
    /// name -> node id of the registered parameter leaf.
    params: BTreeMap<&'static str, NodeId>,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    fn push(&mut self, value: Matrix<S>, op: Op<S>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    /// Value of a recorded node.
    pub fn value(&self, id: NodeId) -> &Matrix<S> {
        &self.nodes[id.0].value
    }

    /// Record a constant input (no gradient).
    pub fn input(&mut self, value: Matrix<S>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Register a named parameter leaf. The tape snapshots the current value;
    /// repeated registration under one name returns the existing node.
    pub fn param(&mut self, name: &'static str, value: &Matrix<S>) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let id = self.push(value.clone(), Op::Param);
        self.params.insert(name, id);
        id
    }

    /// Register every parameter of a set, so unused ones still get zero grads.
    pub fn params(&mut self, set: &ParamSet<S>) {
        for (name, value) in set.iter() {
            self.param(name, value);
        }
    }

    fn shape_err(&self, op: &'static str, a: NodeId, b: NodeId) -> KernelError {
        KernelError::ShapeMismatch {
            op,
            lhs: self.value(a).shape(),
            rhs: self.value(b).shape(),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = Matrix::zeros(av.rows(), bv.cols());
        matmul_acc(av, bv, &mut out);
        Ok(self.push(out, Op::Matmul { a, b }))
    }

    /// a @ b^T; the natural layout for logits against a row-major embedding.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(self.shape_err("matmul_nt", a, b));
        }
        let mut out = Matrix::zeros(av.rows(), bv.rows());
        matmul_nt_acc(av, bv, &mut out);
        Ok(self.push(out, Op::MatmulNt { a, b }))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(S, S) -> S,
        wrap: impl FnOnce(NodeId, NodeId) -> Op<S>,
    ) -> Result<NodeId, KernelError> {
        let (av, bv) = (self.value(a), self.value(b));
        // Only scalar-vs-matrix broadcast is allowed, never implicit axis
        // broadcast.
        let out = if av.shape() == bv.shape() {
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Matrix::from_vec(av.rows(), av.cols(), data).unwrap()
        } else if bv.is_scalar() {
            let s = bv.get(0, 0);
            av.map(|x| f(x, s))
        } else if av.is_scalar() {
            let s = av.get(0, 0);
            bv.map(|y| f(s, y))
        } else {
            return Err(self.shape_err(name, a, b));
        };
        Ok(self.push(out, wrap(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        self.elementwise("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        self.elementwise("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        self.elementwise("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| S::one() - x);
        self.push(out, Op::OneMinus { a })
    }

    /// a + bias where bias is 1 x a.cols(), applied to every row.
    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, KernelError> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(self.shape_err("add_row_broadcast", a, bias));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRowBroadcast { a, bias }))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid { a })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(Real::tanh);
        self.push(out, Op::Tanh { a })
    }

    /// Row gather from an embedding table.
    pub fn gather_rows(&mut self, table: NodeId, ids: Rc<Vec<u32>>) -> Result<NodeId, KernelError> {
        let tv = self.value(table);
        let mut out = Matrix::zeros(ids.len(), tv.cols());
        for (i, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= tv.rows() {
                return Err(KernelError::IndexOutOfRange {
                    index: id,
                    len: tv.rows(),
                });
            }
            out.row_mut(i).copy_from_slice(tv.row(id));
        }
        Ok(self.push(out, Op::GatherRows { table, ids }))
    }

    /// Sparse projection of one-hot context blocks: out[i] = sum of the
    /// table columns listed in cols[i]. Equivalent to table @ c_i for the
    /// concatenated one-hot vector c_i.
    pub fn cols_sum(&mut self, table: NodeId, cols: ActiveCols) -> Result<NodeId, KernelError> {
        let tv = self.value(table);
        let (d, v_c) = (tv.rows(), tv.cols());
        let mut out = Matrix::zeros(cols.len(), d);
        for (i, active) in cols.iter().enumerate() {
            let out_row = out.row_mut(i);
            for &j in active {
                let j = j as usize;
                if j >= v_c {
                    return Err(KernelError::IndexOutOfRange { index: j, len: v_c });
                }
                for (r, o) in out_row.iter_mut().enumerate() {
                    *o += tv.get(r, j);
                }
            }
        }
        Ok(self.push(out, Op::ColsSum { table, cols }))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, KernelError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(self.shape_err("concat_cols", a, b));
        }
        let mut out = Matrix::zeros(av.rows(), av.cols() + bv.cols());
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            row[..av.cols()].copy_from_slice(av.row(r));
            row[av.cols()..].copy_from_slice(bv.row(r));
        }
        Ok(self.push(out, Op::ConcatCols { a, b }))
    }

    pub fn scale(&mut self, a: NodeId, factor: S) -> NodeId {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale { a, factor })
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Matrix::scalar(total), Op::SumAll { a })
    }

    /// Masked softmax cross-entropy, summed over rows where mask holds.
    /// Fusing log-softmax with the pick keeps the loss stable for large
    /// logits. Returns a 1x1 node.
    pub fn nll_loss(
        &mut self,
        logits: NodeId,
        targets: Rc<Vec<u32>>,
        mask: Rc<Vec<bool>>,
    ) -> Result<NodeId, KernelError> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() || mask.len() != lv.rows() {
            return Err(KernelError::BadBuffer {
                expected: lv.rows(),
                got: targets.len().min(mask.len()),
            });
        }
        let mut total = S::zero();
        for (i, (&t, &m)) in targets.iter().zip(mask.iter()).enumerate() {
            if !m {
                continue;
            }
            let row = lv.row(i);
            let t = t as usize;
            if t >= row.len() {
                return Err(KernelError::IndexOutOfRange {
                    index: t,
                    len: row.len(),
                });
            }
            total += log_sum_exp(row)? - row[t];
        }
        Ok(self.push(
            Matrix::scalar(total),
            Op::NllLoss {
                logits,
                targets,
                mask,
            },
        ))
    }

    /// Reverse sweep from a scalar loss node. Returns gradients for every
    /// registered parameter; parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<S>, KernelError> {
        if !self.value(loss).is_scalar() {
            return Err(KernelError::NonScalarLoss {
                shape: self.value(loss).shape(),
            });
        }
        let mut adjoints: Vec<Option<Matrix<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoints[loss.0] = Some(Matrix::scalar(S::one()));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = adjoints[idx].take() else {
                continue;
            };
            self.backward_node(idx, &upstream, &mut adjoints);
            // Leaf adjoints must survive for collection below.
            if matches!(self.nodes[idx].op, Op::Param) {
                adjoints[idx] = Some(upstream);
            }
        }

        let mut grads = BTreeMap::new();
        for (&name, &id) in &self.params {
            let g = adjoints[id.0]
                .take()
                .unwrap_or_else(|| Matrix::zeros(self.value(id).rows(), self.value(id).cols()));
            grads.insert(name, g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(adjoints: &mut [Option<Matrix<S>>], target: NodeId, delta: Matrix<S>) {
        match &mut adjoints[target.0] {
            Some(acc) => {
                debug_assert_eq!(acc.shape(), delta.shape());
                for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                    *a += *d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Adjoint for one operand of an elementwise op, undoing scalar broadcast
    /// by total-summing when the operand was 1x1.
    fn elementwise_adjoint(
        adjoints: &mut [Option<Matrix<S>>],
        operand_shape: (usize, usize),
        target: NodeId,
        delta: Matrix<S>,
    ) {
        if (delta.rows(), delta.cols()) == operand_shape {
            Self::accumulate(adjoints, target, delta);
        } else {
            debug_assert_eq!(operand_shape, (1, 1));
            let total = delta.data().iter().copied().sum();
            Self::accumulate(adjoints, target, Matrix::scalar(total));
        }
    }

    fn backward_node(&self, idx: usize, upstream: &Matrix<S>, adjoints: &mut [Option<Matrix<S>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Matmul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                // dA = dC @ B^T
                let mut da = Matrix::zeros(av.rows(), av.cols());
                matmul_nt_acc(upstream, bv, &mut da);
                Self::accumulate(adjoints, *a, da);
                // dB = A^T @ dC
                let mut db = Matrix::zeros(bv.rows(), bv.cols());
                matmul_tn_acc(av, upstream, &mut db);
                Self::accumulate(adjoints, *b, db);
            }
            Op::MatmulNt { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                // C = A @ B^T: dA = dC @ B, dB = dC^T @ A
                let mut da = Matrix::zeros(av.rows(), av.cols());
                matmul_acc(upstream, bv, &mut da);
                Self::accumulate(adjoints, *a, da);
                let mut db = Matrix::zeros(bv.rows(), bv.cols());
                matmul_tn_acc(upstream, av, &mut db);
                Self::accumulate(adjoints, *b, db);
            }
            Op::Add { a, b } => {
                let (ash, bsh) = (self.value(*a).shape(), self.value(*b).shape());
                Self::elementwise_adjoint(adjoints, (ash.rows, ash.cols), *a, upstream.clone());
                Self::elementwise_adjoint(adjoints, (bsh.rows, bsh.cols), *b, upstream.clone());
            }
            Op::Sub { a, b } => {
                let (ash, bsh) = (self.value(*a).shape(), self.value(*b).shape());
                Self::elementwise_adjoint(adjoints, (ash.rows, ash.cols), *a, upstream.clone());
                Self::elementwise_adjoint(
                    adjoints,
                    (bsh.rows, bsh.cols),
                    *b,
                    upstream.map(|x| -x),
                );
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = broadcast_mul(upstream, bv);
                let db = broadcast_mul(upstream, av);
                Self::elementwise_adjoint(adjoints, (av.rows(), av.cols()), *a, da);
                Self::elementwise_adjoint(adjoints, (bv.rows(), bv.cols()), *b, db);
            }
            Op::OneMinus { a } => {
                Self::accumulate(adjoints, *a, upstream.map(|x| -x));
            }
            Op::AddRowBroadcast { a, bias } => {
                Self::accumulate(adjoints, *a, upstream.clone());
                let mut db = Matrix::zeros(1, upstream.cols());
                for r in 0..upstream.rows() {
                    for (o, &u) in db.row_mut(0).iter_mut().zip(upstream.row(r)) {
                        *o += u;
                    }
                }
                Self::accumulate(adjoints, *bias, db);
            }
            Op::Sigmoid { a } => {
                let y = &node.value;
                let data = upstream
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&u, &y)| u * y * (S::one() - y))
                    .collect();
                let da = Matrix::from_vec(y.rows(), y.cols(), data).unwrap();
                Self::accumulate(adjoints, *a, da);
            }
            Op::Tanh { a } => {
                let y = &node.value;
                let data = upstream
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&u, &y)| u * (S::one() - y * y))
                    .collect();
                let da = Matrix::from_vec(y.rows(), y.cols(), data).unwrap();
                Self::accumulate(adjoints, *a, da);
            }
            Op::GatherRows { table, ids } => {
                let tv = self.value(*table);
                let mut dt = Matrix::zeros(tv.rows(), tv.cols());
                for (i, &id) in ids.iter().enumerate() {
                    for (o, &u) in dt.row_mut(id as usize).iter_mut().zip(upstream.row(i)) {
                        *o += u;
                    }
                }
                Self::accumulate(adjoints, *table, dt);
            }
            Op::ColsSum { table, cols } => {
                let tv = self.value(*table);
                let mut dt = Matrix::zeros(tv.rows(), tv.cols());
                for (i, active) in cols.iter().enumerate() {
                    let u_row = upstream.row(i);
                    for &j in active {
                        for (r, &u) in u_row.iter().enumerate() {
                            let cur = dt.get(r, j as usize);
                            dt.set(r, j as usize, cur + u);
                        }
                    }
                }
                Self::accumulate(adjoints, *table, dt);
            }
            Op::ConcatCols { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = Matrix::zeros(av.rows(), av.cols());
                let mut db = Matrix::zeros(bv.rows(), bv.cols());
                for r in 0..upstream.rows() {
                    let u = upstream.row(r);
                    da.row_mut(r).copy_from_slice(&u[..av.cols()]);
                    db.row_mut(r).copy_from_slice(&u[av.cols()..]);
                }
                Self::accumulate(adjoints, *a, da);
                Self::accumulate(adjoints, *b, db);
            }
            Op::Scale { a, factor } => {
                let f = *factor;
                Self::accumulate(adjoints, *a, upstream.map(|x| x * f));
            }
            Op::SumAll { a } => {
                let av = self.value(*a);
                let u = upstream.get(0, 0);
                Self::accumulate(adjoints, *a, Matrix::full(av.rows(), av.cols(), u));
            }
            Op::NllLoss {
                logits,
                targets,
                mask,
            } => {
                let lv = self.value(*logits);
                let u = upstream.get(0, 0);
                let mut dl = Matrix::zeros(lv.rows(), lv.cols());
                for i in 0..lv.rows() {
                    if !mask[i] {
                        continue;
                    }
                    let probs = softmax_unchecked(lv.row(i));
                    let d_row = dl.row_mut(i);
                    for (d, p) in d_row.iter_mut().zip(probs) {
                        *d = u * p;
                    }
                    d_row[targets[i] as usize] -= u;
                }
                Self::accumulate(adjoints, *logits, dl);
            }
        }
    }
}

fn broadcast_mul<S: Real>(upstream: &Matrix<S>, other: &Matrix<S>) -> Matrix<S> {
    if other.is_scalar() && !upstream.is_scalar() {
        let s = other.get(0, 0);
        upstream.map(|u| u * s)
    } else if upstream.shape() == other.shape() {
        let data = upstream
            .data()
            .iter()
            .zip(other.data())
            .map(|(&u, &o)| u * o)
            .collect();
        Matrix::from_vec(upstream.rows(), upstream.cols(), data).unwrap()
    } else {
        // upstream scalar against matrix operand
        let u = upstream.get(0, 0);
        other.map(|o| o * u)
    }
}

fn log_sum_exp<S: Real>(row: &[S]) -> Result<S, KernelError> {
    let mut max = row[0];
    for &v in row {
        if !v.is_finite() {
            return Err(KernelError::NonFiniteInput { op: "nll_loss" });
        }
        max = max.maximum(v);
    }
    let sum: S = row.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Softmax with max subtraction. Errors on non-finite input.
pub fn softmax<S: Real>(logits: &[S]) -> Result<Vec<S>, KernelError> {
    if logits.is_empty() {
        return Err(KernelError::EmptyInput { op: "softmax" });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::NonFiniteInput { op: "softmax" });
    }
    Ok(softmax_unchecked(logits))
}

fn softmax_unchecked<S: Real>(logits: &[S]) -> Vec<S> {
    let mut max = logits[0];
    for &v in logits {
        max = max.maximum(v);
    }
    let mut out: Vec<S> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: S = out.iter().copied().sum();
    for v in &mut out {
        *v = *v / total;
    }
    out
}
