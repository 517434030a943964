//! Dense-tensor reverse-mode automatic differentiation on a per-step tape.
//!
//! A [`Tape`] records every primitive applied during a forward pass as a
//! topologically ordered node list; [`Tape::backward`] replays it in reverse
//! and accumulates gradients. Tapes are cheap and live for exactly one
//! training step. Parameters persist across steps in a [`ParamSet`] and are
//! bound onto a tape through a [`Session`], which is also how the optimizer
//! finds their gradients afterwards.
//!
//! Everything is double precision. Every forward primitive verifies that its
//! output is finite and fails with a descriptive error otherwise; shapes are
//! checked up front the same way.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::mat::{gemm, Matrix};

pub type NodeId = usize;

/// Input clamp for `log`, keeping `ln` finite for softmax outputs that
/// underflow to zero.
pub const LOG_CLAMP: f64 = 1e-12;

const GELU_C: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Detach {
        /// Provenance only; backward never crosses a detach.
        #[allow(dead_code)]
        x: NodeId,
    },
    Matmul { a: NodeId, b: NodeId },
    /// Fused affine map `x @ w + bias`; one output buffer instead of three.
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Broadcast { x: NodeId },
    Concat { xs: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize, len: usize },
    Relu { x: NodeId },
    Gelu { x: NodeId },
    Tanh { x: NodeId },
    Exp { x: NodeId },
    Log { x: NodeId },
    Softmax { x: NodeId, axis: usize },
    Sum { x: NodeId, axis: Option<usize> },
    Mean { x: NodeId, axis: Option<usize> },
}

struct Node {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Recording tape; clone handles share the same graph.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to one node of a tape.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: NodeId,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn shape_str(shape: &[usize]) -> String {
    format!("[{}]", shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x"))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            shape,
            data: Rc::new(data),
            requires_grad,
            op,
        });
        Tensor {
            tape: self.clone(),
            id,
        }
    }

    fn push_checked(
        &self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        op: Op,
    ) -> Result<Tensor> {
        if !crate::mat::all_finite(&data) {
            return Err(Error::non_finite(op_name));
        }
        Ok(self.push(shape, data, requires_grad, op))
    }

    /// Non-differentiable leaf holding the given values.
    pub fn constant(&self, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "constant",
                format!("shape {} does not hold {} values", shape_str(shape), data.len()),
            ));
        }
        self.push_checked("constant", shape.to_vec(), data, false, Op::Leaf)
    }

    pub fn scalar(&self, v: f64) -> Result<Tensor> {
        self.constant(&[1], vec![v])
    }

    pub fn matrix(&self, m: &Matrix) -> Result<Tensor> {
        self.constant(&[m.rows, m.cols], m.data.clone())
    }

    /// Differentiable leaf; used by [`Session`] to bind parameters.
    fn leaf_grad(&self, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        self.push(shape, data, true, Op::Leaf)
    }

    fn node_data(&self, id: NodeId) -> Rc<Vec<f64>> {
        Rc::clone(&self.inner.borrow().nodes[id].data)
    }

    fn node_shape(&self, id: NodeId) -> Vec<usize> {
        self.inner.borrow().nodes[id].shape.clone()
    }

    fn node_requires_grad(&self, id: NodeId) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Reverse pass from `loss`, which must be a scalar recorded on this tape.
    /// Returns per-node gradient buffers; nodes the loss does not reach keep
    /// `None`.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if !self.same_tape(&loss.tape) {
            return Err(Error::Grad(
                "loss was recorded on a different tape (detached graph)".into(),
            ));
        }
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let lnode = &nodes[loss.id];
        if numel(&lnode.shape) != 1 {
            return Err(Error::Grad(format!(
                "backward needs a scalar loss, got shape {}",
                shape_str(&lnode.shape)
            )));
        }
        if !lnode.requires_grad {
            return Err(Error::Grad(
                "loss does not depend on any differentiable parameter".into(),
            ));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            if grads[id].is_none() || !nodes[id].requires_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            backward_op(nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradient buffers produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(t.id).and_then(|g| g.as_deref())
    }

    fn get_node(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId, add: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let buf = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].data.len()]);
    add(buf);
}

fn backward_op(nodes: &[Node], id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &nodes[id].op {
        Op::Leaf | Op::Detach { .. } => {}
        Op::Matmul { a, b } => {
            let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
            let n = nodes[*b].shape[1];
            let a_data = Rc::clone(&nodes[*a].data);
            let b_data = Rc::clone(&nodes[*b].data);
            // beta = 0 on first touch skips reading the zeroed buffer
            let fresh_a = grads[*a].is_none();
            // dA += dC @ B^T
            acc(grads, nodes, *a, |buf| {
                gemm(false, true, m, n, k, 1.0, g, &b_data, if fresh_a { 0.0 } else { 1.0 }, buf);
            });
            let fresh_b = grads[*b].is_none();
            // dB += A^T @ dC
            acc(grads, nodes, *b, |buf| {
                gemm(true, false, k, m, n, 1.0, &a_data, g, if fresh_b { 0.0 } else { 1.0 }, buf);
            });
        }
        Op::Linear { x, w, b } => {
            let (m, k) = (nodes[*x].shape[0], nodes[*x].shape[1]);
            let n = nodes[*w].shape[1];
            let x_data = Rc::clone(&nodes[*x].data);
            let w_data = Rc::clone(&nodes[*w].data);
            let fresh_x = grads[*x].is_none();
            acc(grads, nodes, *x, |buf| {
                gemm(false, true, m, n, k, 1.0, g, &w_data, if fresh_x { 0.0 } else { 1.0 }, buf);
            });
            let fresh_w = grads[*w].is_none();
            acc(grads, nodes, *w, |buf| {
                gemm(true, false, k, m, n, 1.0, &x_data, g, if fresh_w { 0.0 } else { 1.0 }, buf);
            });
            acc(grads, nodes, *b, |buf| {
                for row in g.chunks_exact(n) {
                    for (o, gi) in buf.iter_mut().zip(row) {
                        *o += gi;
                    }
                }
            });
        }
        Op::Add { a, b } => {
            acc(grads, nodes, *a, |buf| {
                for (o, gi) in buf.iter_mut().zip(g) {
                    *o += gi;
                }
            });
            acc(grads, nodes, *b, |buf| {
                for (o, gi) in buf.iter_mut().zip(g) {
                    *o += gi;
                }
            });
        }
        Op::Sub { a, b } => {
            acc(grads, nodes, *a, |buf| {
                for (o, gi) in buf.iter_mut().zip(g) {
                    *o += gi;
                }
            });
            acc(grads, nodes, *b, |buf| {
                for (o, gi) in buf.iter_mut().zip(g) {
                    *o -= gi;
                }
            });
        }
        Op::Mul { a, b } => {
            let a_data = Rc::clone(&nodes[*a].data);
            let b_data = Rc::clone(&nodes[*b].data);
            acc(grads, nodes, *a, |buf| {
                crate::mat::accumulate_slice(buf, &b_data, g, |b, gi| gi * b);
            });
            acc(grads, nodes, *b, |buf| {
                crate::mat::accumulate_slice(buf, &a_data, g, |a, gi| gi * a);
            });
        }
        Op::Scale { x, c } => {
            let c = *c;
            acc(grads, nodes, *x, |buf| {
                for (o, gi) in buf.iter_mut().zip(g) {
                    *o += c * gi;
                }
            });
        }
        Op::Broadcast { x } => {
            let from = nodes[*x].shape.clone();
            let to = nodes[id].shape.clone();
            acc(grads, nodes, *x, |buf| reduce_broadcast(&from, &to, g, buf));
        }
        Op::Concat { xs, axis } => {
            let out_shape = nodes[id].shape.clone();
            let mut offset = 0usize;
            for &xid in xs {
                let xs_shape = nodes[xid].shape.clone();
                let block = xs_shape[*axis];
                let x_off = offset;
                acc(grads, nodes, xid, |buf| {
                    gather_block(&out_shape, *axis, x_off, block, g, buf);
                });
                offset += block;
            }
        }
        Op::Slice { x, axis, start, len } => {
            let in_shape = nodes[*x].shape.clone();
            acc(grads, nodes, *x, |buf| {
                scatter_block(&in_shape, *axis, *start, *len, g, buf);
            });
        }
        Op::Relu { x } => {
            let x_data = Rc::clone(&nodes[*x].data);
            acc(grads, nodes, *x, |buf| {
                for i in 0..buf.len() {
                    if x_data[i] > 0.0 {
                        buf[i] += g[i];
                    }
                }
            });
        }
        Op::Gelu { x } => {
            let x_data = Rc::clone(&nodes[*x].data);
            acc(grads, nodes, *x, |buf| {
                crate::mat::accumulate_slice(buf, &x_data, g, |xv, gi| {
                    let u = SQRT_2_OVER_PI * (xv + GELU_C * xv * xv * xv);
                    let t = u.tanh();
                    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * xv * xv);
                    gi * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du)
                });
            });
        }
        Op::Tanh { x } => {
            let y = Rc::clone(&nodes[id].data);
            acc(grads, nodes, *x, |buf| {
                crate::mat::accumulate_slice(buf, &y, g, |yv, gi| gi * (1.0 - yv * yv));
            });
        }
        Op::Exp { x } => {
            let y = Rc::clone(&nodes[id].data);
            acc(grads, nodes, *x, |buf| {
                crate::mat::accumulate_slice(buf, &y, g, |yv, gi| gi * yv);
            });
        }
        Op::Log { x } => {
            let x_data = Rc::clone(&nodes[*x].data);
            acc(grads, nodes, *x, |buf| {
                for i in 0..buf.len() {
                    if x_data[i] > LOG_CLAMP {
                        buf[i] += g[i] / x_data[i];
                    }
                }
            });
        }
        Op::Softmax { x, axis } => {
            let y = Rc::clone(&nodes[id].data);
            let shape = nodes[id].shape.clone();
            let axis = *axis;
            acc(grads, nodes, *x, |buf| {
                for_each_lane(&shape, axis, |lane| {
                    let mut dot = 0.0;
                    for &i in lane {
                        dot += g[i] * y[i];
                    }
                    for &i in lane {
                        buf[i] += y[i] * (g[i] - dot);
                    }
                });
            });
        }
        Op::Sum { x, axis } | Op::Mean { x, axis } => {
            let in_shape = nodes[*x].shape.clone();
            let scale = match &nodes[id].op {
                Op::Mean { .. } => {
                    let total = numel(&in_shape) as f64 / nodes[id].data.len() as f64;
                    1.0 / total
                }
                _ => 1.0,
            };
            let axis = *axis;
            acc(grads, nodes, *x, |buf| match axis {
                None => {
                    let gv = g[0] * scale;
                    for o in buf.iter_mut() {
                        *o += gv;
                    }
                }
                Some(ax) => add_reduced_grad(&in_shape, ax, g, scale, buf),
            });
        }
    }
}

/// Invoke `f` with index lists for each lane along `axis`.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(&[usize])) {
    match shape.len() {
        1 => {
            assert_eq!(axis, 0);
            let lane: Vec<usize> = (0..shape[0]).collect();
            f(&lane);
        }
        2 => {
            let (rows, cols) = (shape[0], shape[1]);
            if axis == 1 {
                let mut lane = vec![0usize; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        lane[c] = r * cols + c;
                    }
                    f(&lane);
                }
            } else {
                let mut lane = vec![0usize; rows];
                for c in 0..cols {
                    for r in 0..rows {
                        lane[r] = r * cols + c;
                    }
                    f(&lane);
                }
            }
        }
        _ => panic!("lanes only defined for 1-D/2-D shapes"),
    }
}

fn add_reduced_grad(in_shape: &[usize], axis: usize, g: &[f64], scale: f64, buf: &mut [f64]) {
    match in_shape.len() {
        1 => {
            for o in buf.iter_mut() {
                *o += g[0] * scale;
            }
        }
        2 => {
            let (rows, cols) = (in_shape[0], in_shape[1]);
            if axis == 1 {
                // out shape [rows, 1]
                for r in 0..rows {
                    let gv = g[r] * scale;
                    for c in 0..cols {
                        buf[r * cols + c] += gv;
                    }
                }
            } else {
                // out shape [1, cols]
                for r in 0..rows {
                    for c in 0..cols {
                        buf[r * cols + c] += g[c] * scale;
                    }
                }
            }
        }
        _ => panic!("reduce only defined for 1-D/2-D shapes"),
    }
}

/// Sum `g` (of shape `to`) back down to shape `from` for broadcast backward.
fn reduce_broadcast(from: &[usize], to: &[usize], g: &[f64], buf: &mut [f64]) {
    if numel(from) == 1 {
        buf[0] += g.iter().sum::<f64>();
        return;
    }
    let (rows, cols) = (to[0], to[1]);
    if from == [1, cols] || from == [cols] {
        for r in 0..rows {
            for c in 0..cols {
                buf[c] += g[r * cols + c];
            }
        }
    } else if from == [rows, 1] {
        for r in 0..rows {
            for c in 0..cols {
                buf[r] += g[r * cols + c];
            }
        }
    } else {
        panic!("unsupported broadcast reduction {from:?} -> {to:?}");
    }
}

/// Extract the block gradient at `offset` along `axis` from the full-shape
/// gradient, accumulating into `block_buf` (concat backward).
fn gather_block(
    full_shape: &[usize],
    axis: usize,
    offset: usize,
    block: usize,
    full: &[f64],
    block_buf: &mut [f64],
) {
    match full_shape.len() {
        1 => {
            for i in 0..block {
                block_buf[i] += full[offset + i];
            }
        }
        2 => {
            let (rows, cols) = (full_shape[0], full_shape[1]);
            if axis == 1 {
                for r in 0..rows {
                    for c in 0..block {
                        block_buf[r * block + c] += full[r * cols + offset + c];
                    }
                }
            } else {
                let _ = rows;
                for r in 0..block {
                    for c in 0..cols {
                        block_buf[r * cols + c] += full[(offset + r) * cols + c];
                    }
                }
            }
        }
        _ => panic!("concat/slice only defined for 1-D/2-D shapes"),
    }
}

fn scatter_block(
    in_shape: &[usize],
    axis: usize,
    start: usize,
    len: usize,
    g: &[f64],
    buf: &mut [f64],
) {
    match in_shape.len() {
        1 => {
            for i in 0..len {
                buf[start + i] += g[i];
            }
        }
        2 => {
            let (rows, cols) = (in_shape[0], in_shape[1]);
            if axis == 1 {
                for r in 0..rows {
                    for c in 0..len {
                        buf[r * cols + start + c] += g[r * len + c];
                    }
                }
            } else {
                let _ = rows;
                for r in 0..len {
                    for c in 0..cols {
                        buf[(start + r) * cols + c] += g[r * cols + c];
                    }
                }
            }
        }
        _ => panic!("slice only defined for 1-D/2-D shapes"),
    }
}

impl Tensor {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.node_shape(self.id)
    }

    pub fn data(&self) -> Rc<Vec<f64>> {
        self.tape.node_data(self.id)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.node_requires_grad(self.id)
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape())
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self) -> f64 {
        let d = self.data();
        debug_assert_eq!(d.len(), 1, "scalar_value on non-scalar tensor");
        d[0]
    }

    pub fn to_matrix(&self) -> Matrix {
        let shape = self.shape();
        let (rows, cols) = match shape.len() {
            1 => (1, shape[0]),
            2 => (shape[0], shape[1]),
            _ => panic!("to_matrix only for 1-D/2-D"),
        };
        Matrix::new(rows, cols, self.data().as_ref().clone())
    }

    fn binary_same_shape(
        &self,
        other: &Tensor,
        op_name: &'static str,
        op: impl Fn(NodeId, NodeId) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if !self.tape.same_tape(&other.tape) {
            return Err(Error::Grad(format!("{op_name}: operands from different tapes")));
        }
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(Error::shape(
                op_name,
                format!("{} vs {}", shape_str(&sa), shape_str(&sb)),
            ));
        }
        let (da, db) = (self.data(), other.data());
        let out: Vec<f64> = da.iter().zip(db.iter()).map(|(a, b)| f(*a, *b)).collect();
        let rg = self.requires_grad() || other.requires_grad();
        self.tape
            .push_checked(op_name, sa, out, rg, op(self.id, other.id))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(other, "add", |a, b| Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(other, "sub", |a, b| Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_same_shape(other, "mul", |a, b| Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if !self.tape.same_tape(&other.tape) {
            return Err(Error::Grad("matmul: operands from different tapes".into()));
        }
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                format!("{} @ {}", shape_str(&sa), shape_str(&sb)),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.data(), other.data());
        let mut out = vec![0.0; m * n];
        gemm(false, false, m, k, n, 1.0, &da, &db, 0.0, &mut out);
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push_checked(
            "matmul",
            vec![m, n],
            out,
            rg,
            Op::Matmul {
                a: self.id,
                b: other.id,
            },
        )
    }

    /// Fused affine map: `self @ w + bias`, with `bias` of shape `[1, n]`
    /// added to every row. Equivalent to matmul + broadcast + add.
    pub fn linear(&self, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
        if !self.tape.same_tape(&w.tape) || !self.tape.same_tape(&bias.tape) {
            return Err(Error::Grad("linear: operands from different tapes".into()));
        }
        let (sx, sw, sb) = (self.shape(), w.shape(), bias.shape());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] || sb != [1, sw[1]] {
            return Err(Error::shape(
                "linear",
                format!(
                    "{} @ {} + {}",
                    shape_str(&sx),
                    shape_str(&sw),
                    shape_str(&sb)
                ),
            ));
        }
        let (m, k, n) = (sx[0], sx[1], sw[1]);
        let (dx, dw, db) = (self.data(), w.data(), bias.data());
        let mut out = vec![0.0; m * n];
        gemm(false, false, m, k, n, 1.0, &dx, &dw, 0.0, &mut out);
        for row in out.chunks_exact_mut(n) {
            for (o, b) in row.iter_mut().zip(db.iter()) {
                *o += b;
            }
        }
        let rg = self.requires_grad() || w.requires_grad() || bias.requires_grad();
        self.tape.push_checked(
            "linear",
            vec![m, n],
            out,
            rg,
            Op::Linear {
                x: self.id,
                w: w.id,
                b: bias.id,
            },
        )
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let out: Vec<f64> = self.data().iter().map(|v| v * c).collect();
        self.tape.push_checked(
            "scale",
            self.shape(),
            out,
            self.requires_grad(),
            Op::Scale { x: self.id, c },
        )
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    /// Broadcast to `target`: scalars go anywhere; `[n]`/`[1,n]` tile over
    /// rows; `[m,1]` tiles over columns.
    pub fn broadcast_to(&self, target: &[usize]) -> Result<Tensor> {
        let from = self.shape();
        if from == target {
            return Ok(self.clone());
        }
        let data = self.data();
        let out: Vec<f64> = if numel(&from) == 1 {
            vec![data[0]; numel(target)]
        } else if target.len() == 2 {
            let (rows, cols) = (target[0], target[1]);
            if from == [cols] || from == [1, cols] {
                let mut v = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    v.extend_from_slice(&data);
                }
                v
            } else if from == [rows, 1] {
                let mut v = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for _ in 0..cols {
                        v.push(data[r]);
                    }
                }
                v
            } else {
                return Err(Error::shape(
                    "broadcast",
                    format!("{} -> {}", shape_str(&from), shape_str(target)),
                ));
            }
        } else {
            return Err(Error::shape(
                "broadcast",
                format!("{} -> {}", shape_str(&from), shape_str(target)),
            ));
        };
        self.tape.push_checked(
            "broadcast",
            target.to_vec(),
            out,
            self.requires_grad(),
            Op::Broadcast { x: self.id },
        )
    }

    pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
        if tensors.len() < 2 {
            return Err(Error::shape("concat", "needs at least two inputs".to_string()));
        }
        let tape = tensors[0].tape.clone();
        if !tensors.iter().all(|t| tape.same_tape(&t.tape)) {
            return Err(Error::Grad("concat: operands from different tapes".into()));
        }
        let shapes: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape()).collect();
        let nd = shapes[0].len();
        if axis >= nd || shapes.iter().any(|s| s.len() != nd) {
            return Err(Error::shape("concat", format!("axis {axis} out of range")));
        }
        for d in 0..nd {
            if d != axis && shapes.iter().any(|s| s[d] != shapes[0][d]) {
                return Err(Error::shape(
                    "concat",
                    format!(
                        "inputs disagree on non-concat dim {d}: {}",
                        shapes.iter().map(|s| shape_str(s)).collect::<Vec<_>>().join(", ")
                    ),
                ));
            }
        }
        let mut out_shape = shapes[0].clone();
        out_shape[axis] = shapes.iter().map(|s| s[axis]).sum();

        let datas: Vec<Rc<Vec<f64>>> = tensors.iter().map(|t| t.data()).collect();
        let mut out = vec![0.0; numel(&out_shape)];
        if nd == 1 || axis == 0 {
            let mut off = 0;
            for d in &datas {
                out[off..off + d.len()].copy_from_slice(d);
                off += d.len();
            }
        } else {
            let rows = out_shape[0];
            let out_cols = out_shape[1];
            for r in 0..rows {
                let mut off = 0;
                for (d, s) in datas.iter().zip(&shapes) {
                    let c = s[1];
                    out[r * out_cols + off..r * out_cols + off + c]
                        .copy_from_slice(&d[r * c..(r + 1) * c]);
                    off += c;
                }
            }
        }
        let rg = tensors.iter().any(|t| t.requires_grad());
        tape.push_checked(
            "concat",
            out_shape,
            out,
            rg,
            Op::Concat {
                xs: tensors.iter().map(|t| t.id).collect(),
                axis,
            },
        )
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!(
                    "range {start}..{} on axis {axis} of {}",
                    start + len,
                    shape_str(&shape)
                ),
            ));
        }
        let data = self.data();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut out = vec![0.0; numel(&out_shape)];
        match shape.len() {
            1 => out.copy_from_slice(&data[start..start + len]),
            2 => {
                let (rows, cols) = (shape[0], shape[1]);
                if axis == 1 {
                    for r in 0..rows {
                        out[r * len..(r + 1) * len]
                            .copy_from_slice(&data[r * cols + start..r * cols + start + len]);
                    }
                } else {
                    out.copy_from_slice(&data[start * cols..(start + len) * cols]);
                }
            }
            _ => return Err(Error::shape("slice", "only 1-D/2-D supported".to_string())),
        }
        self.tape.push_checked(
            "slice",
            out_shape,
            out,
            self.requires_grad(),
            Op::Slice {
                x: self.id,
                axis,
                start,
                len,
            },
        )
    }

    fn unary(
        &self,
        op_name: &'static str,
        op: impl Fn(NodeId) -> Op,
        f: impl Fn(f64) -> f64 + Sync,
    ) -> Result<Tensor> {
        let out = crate::mat::map_slice(&self.data(), f);
        self.tape
            .push_checked(op_name, self.shape(), out, self.requires_grad(), op(self.id))
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary("relu", |x| Op::Relu { x }, |v| v.max(0.0))
    }

    /// tanh-approximation GELU.
    pub fn gelu(&self) -> Result<Tensor> {
        self.unary(
            "gelu",
            |x| Op::Gelu { x },
            |v| 0.5 * v * (1.0 + (SQRT_2_OVER_PI * (v + GELU_C * v * v * v)).tanh()),
        )
    }

    pub fn tanh(&self) -> Result<Tensor> {
        self.unary("tanh", |x| Op::Tanh { x }, f64::tanh)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary("exp", |x| Op::Exp { x }, f64::exp)
    }

    /// Natural log of the input clamped at `LOG_CLAMP`; never produces -inf.
    pub fn log(&self) -> Result<Tensor> {
        self.unary("log", |x| Op::Log { x }, |v| v.max(LOG_CLAMP).ln())
    }

    /// Softmax along `axis` with max-subtraction per lane.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} out of range for {}", shape_str(&shape)),
            ));
        }
        let data = self.data();
        let mut out = vec![0.0; data.len()];
        for_each_lane(&shape, axis, |lane| {
            let mut mx = f64::NEG_INFINITY;
            for &i in lane {
                mx = mx.max(data[i]);
            }
            let mut sum = 0.0;
            for &i in lane {
                let e = (data[i] - mx).exp();
                out[i] = e;
                sum += e;
            }
            for &i in lane {
                out[i] /= sum;
            }
        });
        self.tape.push_checked(
            "softmax",
            shape,
            out,
            self.requires_grad(),
            Op::Softmax { x: self.id, axis },
        )
    }

    pub fn sum(&self, axis: Option<usize>) -> Result<Tensor> {
        self.reduce("sum", axis, false)
    }

    pub fn mean(&self, axis: Option<usize>) -> Result<Tensor> {
        self.reduce("mean", axis, true)
    }

    fn reduce(&self, op_name: &'static str, axis: Option<usize>, is_mean: bool) -> Result<Tensor> {
        let shape = self.shape();
        let data = self.data();
        let (out_shape, out): (Vec<usize>, Vec<f64>) = match axis {
            None => {
                let s: f64 = data.iter().sum();
                let v = if is_mean { s / data.len() as f64 } else { s };
                (vec![1], vec![v])
            }
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(Error::shape(
                        op_name,
                        format!("axis {ax} out of range for {}", shape_str(&shape)),
                    ));
                }
                if shape.len() == 1 {
                    let s: f64 = data.iter().sum();
                    let v = if is_mean { s / data.len() as f64 } else { s };
                    (vec![1], vec![v])
                } else {
                    let (rows, cols) = (shape[0], shape[1]);
                    if ax == 1 {
                        let mut out = vec![0.0; rows];
                        for r in 0..rows {
                            let s: f64 = data[r * cols..(r + 1) * cols].iter().sum();
                            out[r] = if is_mean { s / cols as f64 } else { s };
                        }
                        (vec![rows, 1], out)
                    } else {
                        let mut out = vec![0.0; cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                out[c] += data[r * cols + c];
                            }
                        }
                        if is_mean {
                            for o in out.iter_mut() {
                                *o /= rows as f64;
                            }
                        }
                        (vec![1, cols], out)
                    }
                }
            }
        };
        let op = if is_mean {
            Op::Mean { x: self.id, axis }
        } else {
            Op::Sum { x: self.id, axis }
        };
        self.tape
            .push_checked(op_name, out_shape, out, self.requires_grad(), op)
    }

    /// Copy of the value with gradient flow cut.
    pub fn detach(&self) -> Result<Tensor> {
        let data = self.data().as_ref().clone();
        Ok(self
            .tape
            .push(self.shape(), data, false, Op::Detach { x: self.id }))
    }

    /// Elementwise `x + c`, composed from a constant leaf and broadcast.
    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let k = self.tape.scalar(c)?.broadcast_to(&self.shape())?;
        self.add(&k)
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }
}

/// One named parameter buffer that outlives tapes.
#[derive(Debug, Clone)]
struct ParamEntry {
    data: Vec<f64>,
    shape: Vec<usize>,
}

/// Identifier of a parameter within its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Persistent storage for all trainable parameters of a model.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, shape: &[usize], data: Vec<f64>) -> ParamId {
        assert_eq!(numel(shape), data.len());
        self.params.push(ParamEntry {
            data,
            shape: shape.to_vec(),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> ParamId {
        self.add(shape, vec![0.0; numel(shape)])
    }

    /// Linear weight `[fan_in, fan_out]`, uniform in +-1/sqrt(fan_in).
    pub fn linear_weight(
        &mut self,
        fan_in: usize,
        fan_out: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> ParamId {
        use rand::Rng;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        self.add(&[fan_in, fan_out], data)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].data
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.params[id.0].shape
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Buffer length of each parameter in order; used to size optimizer state.
    pub fn buffer_sizes(&self) -> Vec<usize> {
        self.params.iter().map(|p| p.data.len()).collect()
    }

    /// The id of the i-th parameter in insertion order.
    pub fn id_at(&self, index: usize) -> ParamId {
        assert!(index < self.params.len());
        ParamId(index)
    }

    /// Parallel mutable view of the raw buffers in insertion order; the
    /// optimizer updates disjoint parameters concurrently.
    pub fn par_data_mut(
        &mut self,
    ) -> impl rayon::iter::IndexedParallelIterator<Item = &mut Vec<f64>> {
        use rayon::prelude::*;
        self.params.par_iter_mut().map(|e| &mut e.data)
    }

    /// Bind this set onto a tape. Parameters become differentiable leaves on
    /// first use; untouched parameters never enter the graph.
    pub fn bind(&self, tape: &Tape) -> Session {
        Session {
            tape: tape.clone(),
            bindings: RefCell::new(vec![None; self.params.len()]),
        }
    }
}

/// Per-step lazy binding of parameters onto one tape.
pub struct Session {
    tape: Tape,
    bindings: RefCell<Vec<Option<NodeId>>>,
}

impl Session {
    /// Tensor view of a parameter, binding it on first access.
    pub fn tensor(&self, ps: &ParamSet, id: ParamId) -> Tensor {
        let mut b = self.bindings.borrow_mut();
        if let Some(node) = b[id.0] {
            return Tensor {
                tape: self.tape.clone(),
                id: node,
            };
        }
        let entry = &ps.params[id.0];
        let t = self.tape.leaf_grad(entry.shape.clone(), entry.data.clone());
        b[id.0] = Some(t.id);
        t
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn node_of(&self, id: ParamId) -> Option<NodeId> {
        self.bindings.borrow()[id.0]
    }

    /// Gradient buffer of a bound parameter, if any flowed to it.
    pub fn grad<'g>(&self, grads: &'g Gradients, id: ParamId) -> Option<&'g [f64]> {
        self.node_of(id).and_then(|n| grads.get_node(n))
    }

    /// Parameters that were bound during this step.
    pub fn bound_params(&self) -> Vec<ParamId> {
        self.bindings
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.map(|_| ParamId(i)))
            .collect()
    }
}
