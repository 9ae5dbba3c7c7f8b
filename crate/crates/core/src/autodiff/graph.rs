//! Tape of tensor operations with reverse-mode gradients.
//!
//! Every op records its inputs when it is created, so the tape is always in
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! All values are `f64`, shapes are explicit and nothing broadcasts.

use std::collections::HashMap;

use super::params::{ParamGrads, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::geometry::order_free_sum;
use crate::geometry::quat::quat_to_matrix;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate gradient corruption, used to prove the verification suite
/// catches broken backward passes.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    FlipNormGrad,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    SumSq(NodeId),
    Norm(NodeId),
    Concat(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Row(NodeId, usize),
    Reshape(NodeId),
    MaxRows { x: NodeId, argmax: Vec<usize> },
    MeanRows(NodeId),
    SoftmaxCols(NodeId),
    GatherRows { x: NodeId, index: Vec<usize> },
    ScatterMean { src: NodeId, dst: Vec<usize>, fallback: NodeId },
    TileRows(NodeId),
    NormalizeRows { x: NodeId, degenerate: Vec<bool> },
    Rotate { q: NodeId, points: NodeId },
    Translate { points: NodeId, t: NodeId },
    ChamferSq { a: NodeId, b: NodeId, nn_ab: Vec<usize>, nn_ba: Vec<usize> },
    SoftIou { pred: NodeId, target: Vec<f64>, eps: f64 },
}

#[derive(Debug, Clone)]
enum Storage {
    Owned(Vec<f64>),
    Param(ParamId),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    storage: Storage,
    op: Op,
    requires_grad: bool,
}

/// A recording of tensor operations.
///
/// Parameters are read in place from the borrowed [`ParamStore`]; they are
/// never mutated while a graph is alive.
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    fault: Option<Fault>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            fault: None,
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            ..Self::new()
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        match &self.nodes[id.0].storage {
            Storage::Owned(v) => v,
            Storage::Param(pid) => self
                .params
                .expect("parameter node on a graph without a store")
                .values(*pid),
        }
    }

    /// Value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> NodeId {
        debug_assert_eq!(numel(&shape), value.len());
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            storage: Storage::Owned(value),
            op,
            requires_grad,
        });
        id
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    /// A leaf that receives gradients (used by gradient checks).
    pub fn variable(&mut self, shape: &[usize], values: Vec<f64>) -> Result<NodeId> {
        self.leaf(shape, values, true)
    }

    /// A leaf that never receives gradients (data).
    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<NodeId> {
        self.leaf(shape, values, false)
    }

    fn leaf(&mut self, shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<NodeId> {
        if numel(shape) != values.len() {
            return Err(Error::shape(
                "leaf",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), values.len()),
            ));
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf, requires_grad))
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, pid: ParamId) -> NodeId {
        if let Some(&id) = self.param_nodes.get(&pid) {
            return id;
        }
        let store = self.params.expect("Graph::param needs Graph::with_params");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            shape: store.shape(pid).to_vec(),
            storage: Storage::Param(pid),
            op: Op::Param,
            requires_grad: true,
        });
        self.param_nodes.insert(pid, id);
        id
    }

    /// `y = W x + b` for a vector `x[in]`, or row-wise for a matrix `x[r, in]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (out_dim, in_dim) = as_matrix(self.shape(w))
            .ok_or_else(|| Error::shape("linear", format!("weight must be 2-D, got {:?}", self.shape(w))))?;
        if self.shape(b) != [out_dim] {
            return Err(Error::shape(
                "linear",
                format!("bias {:?} does not match {out_dim} outputs", self.shape(b)),
            ));
        }
        let (rows, out_shape) = match self.shape(x) {
            [n] if *n == in_dim => (1, vec![out_dim]),
            [r, n] if *n == in_dim => (*r, vec![*r, out_dim]),
            s => {
                return Err(Error::shape(
                    "linear",
                    format!("input {s:?} does not match weight [{out_dim}, {in_dim}]"),
                ))
            }
        };
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = vec![0.0; rows * out_dim];
        for r in 0..rows {
            let xr = &xv[r * in_dim..(r + 1) * in_dim];
            let yr = &mut out[r * out_dim..(r + 1) * out_dim];
            for (o, y) in yr.iter_mut().enumerate() {
                let wr = &wv[o * in_dim..(o + 1) * in_dim];
                *y = bv[o] + dot(wr, xr);
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(out_shape, out, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Relu(x), rg)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let out = self.value(x).iter().map(|v| v * factor).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, factor), rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    /// Sum of a list of same-shaped nodes.
    pub fn add_all(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::invalid("add_all of an empty list"))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    pub fn sum_sq(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).iter().map(|v| v * v).sum();
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], Op::SumSq(x), rg)
    }

    /// Euclidean norm; the gradient at the origin is defined as zero.
    pub fn norm(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], Op::Norm(x), rg)
    }

    /// Concatenation of 1-D tensors in list order.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::invalid("concat of an empty list"));
        }
        let mut out = Vec::new();
        for &x in xs {
            if self.shape(x).len() != 1 {
                return Err(Error::shape("concat", format!("expects 1-D inputs, got {:?}", self.shape(x))));
            }
            out.extend_from_slice(self.value(x));
        }
        let rg = self.rg(xs);
        let n = out.len();
        Ok(self.push(vec![n], out, Op::Concat(xs.to_vec()), rg))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let dims: Vec<(usize, usize)> = xs
            .iter()
            .map(|&x| as_matrix(self.shape(x)).ok_or_else(|| Error::shape("concat_cols", format!("{:?}", self.shape(x)))))
            .collect::<Result<_>>()?;
        let rows = dims.first().map(|d| d.0).ok_or_else(|| Error::invalid("concat_cols of an empty list"))?;
        if dims.iter().any(|d| d.0 != rows) {
            return Err(Error::shape("concat_cols", format!("row counts differ: {dims:?}")));
        }
        let cols: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (&x, &(_, c)) in xs.iter().zip(&dims) {
                out.extend_from_slice(&self.value(x)[r * c..(r + 1) * c]);
            }
        }
        let rg = self.rg(xs);
        Ok(self.push(vec![rows, cols], out, Op::ConcatCols(xs.to_vec()), rg))
    }

    /// Row-wise concatenation; a 1-D input of length `c` counts as one row.
    pub fn concat_rows(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let mut cols = None;
        let mut rows = 0;
        let mut out = Vec::new();
        for &x in xs {
            let (r, c) = match self.shape(x) {
                [c] => (1, *c),
                [r, c] => (*r, *c),
                s => return Err(Error::shape("concat_rows", format!("{s:?}"))),
            };
            if *cols.get_or_insert(c) != c {
                return Err(Error::shape("concat_rows", format!("column counts differ ({c} vs {})", cols.unwrap())));
            }
            rows += r;
            out.extend_from_slice(self.value(x));
        }
        let cols = cols.ok_or_else(|| Error::invalid("concat_rows of an empty list"))?;
        let rg = self.rg(xs);
        Ok(self.push(vec![rows, cols], out, Op::ConcatRows(xs.to_vec()), rg))
    }

    pub fn row(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        let (r, c) = as_matrix(self.shape(x)).ok_or_else(|| Error::shape("row", format!("{:?}", self.shape(x))))?;
        if i >= r {
            return Err(Error::shape("row", format!("row {i} out of {r}")));
        }
        let out = self.value(x)[i * c..(i + 1) * c].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![c], out, Op::Row(x, i), rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if numel(shape) != numel(self.shape(x)) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x), rg))
    }

    /// Channel-wise maximum over rows; ties route to the lowest row.
    pub fn max_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = as_matrix(self.shape(x)).ok_or_else(|| Error::shape("max_rows", format!("{:?}", self.shape(x))))?;
        if r == 0 {
            return Err(Error::invalid("max over an empty set"));
        }
        let v = self.value(x);
        let mut out = v[..c].to_vec();
        let mut argmax = vec![0; c];
        for i in 1..r {
            for j in 0..c {
                let cand = v[i * c + j];
                if cand > out[j] {
                    out[j] = cand;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![c], out, Op::MaxRows { x, argmax }, rg))
    }

    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = as_matrix(self.shape(x)).ok_or_else(|| Error::shape("mean_rows", format!("{:?}", self.shape(x))))?;
        if r == 0 {
            return Err(Error::invalid("mean over an empty set"));
        }
        let v = self.value(x);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += v[i * c + j];
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let rg = self.rg(&[x]);
        Ok(self.push(vec![c], out, Op::MeanRows(x), rg))
    }

    /// Elementwise maximum over a set of equal-length vectors.
    pub fn set_max_pool(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::invalid("set_max_pool of an empty set"));
        }
        self.uniform_vectors("set_max_pool", xs)?;
        let stacked = self.concat_rows(xs)?;
        self.max_rows(stacked)
    }

    /// Elementwise arithmetic mean over a set of equal-length vectors.
    pub fn set_mean_pool(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::invalid("set_mean_pool of an empty set"));
        }
        self.uniform_vectors("set_mean_pool", xs)?;
        let stacked = self.concat_rows(xs)?;
        self.mean_rows(stacked)
    }

    fn uniform_vectors(&self, op: &'static str, xs: &[NodeId]) -> Result<()> {
        let first = self.shape(xs[0]).to_vec();
        if first.len() != 1 || xs.iter().any(|&x| self.shape(x) != first.as_slice()) {
            return Err(Error::shape(op, "inputs must be 1-D with a common length"));
        }
        Ok(())
    }

    /// Softmax down each column of a `[k, p]` matrix, max-subtracted.
    pub fn softmax_cols(&mut self, x: NodeId) -> Result<NodeId> {
        let (k, p) = as_matrix(self.shape(x)).ok_or_else(|| Error::shape("softmax_cols", format!("{:?}", self.shape(x))))?;
        let v = self.value(x);
        let mut out = vec![0.0; k * p];
        for j in 0..p {
            let m = (0..k).map(|i| v[i * p + j]).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..k {
                out[i * p + j] = (v[i * p + j] - m).exp();
            }
            let z = order_free_sum((0..k).map(|i| out[i * p + j]));
            for i in 0..k {
                out[i * p + j] /= z;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![k, p], out, Op::SoftmaxCols(x), rg))
    }

    /// Per-position softmax across a list of equally shaped maps.
    pub fn softmax_over_set(&mut self, xs: &[NodeId]) -> Result<Vec<NodeId>> {
        if xs.is_empty() {
            return Err(Error::invalid("softmax over an empty set"));
        }
        let shape = self.shape(xs[0]).to_vec();
        if xs.iter().any(|&x| self.shape(x) != shape.as_slice()) {
            return Err(Error::shape("softmax_over_set", "maps must share one shape"));
        }
        let p = numel(&shape);
        let flat: Vec<NodeId> = xs
            .iter()
            .map(|&x| self.reshape(x, &[p]))
            .collect::<Result<_>>()?;
        let stacked = self.concat_rows(&flat)?;
        let soft = self.softmax_cols(stacked)?;
        (0..xs.len())
            .map(|i| {
                let r = self.row(soft, i)?;
                self.reshape(r, &shape)
            })
            .collect()
    }

    pub fn gather_rows(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId> {
        let (r, c) = as_matrix(self.shape(x)).ok_or_else(|| Error::shape("gather_rows", format!("{:?}", self.shape(x))))?;
        if let Some(bad) = index.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} out of {r}")));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(&v[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![index.len(), c], out, Op::GatherRows { x, index: index.to_vec() }, rg))
    }

    /// Mean of `src` rows grouped by destination row; destinations with no
    /// incoming row copy the matching row of `fallback`.
    pub fn scatter_mean(&mut self, src: NodeId, dst: &[usize], fallback: NodeId) -> Result<NodeId> {
        let (n, c) = as_matrix(self.shape(fallback)).ok_or_else(|| Error::shape("scatter_mean", "fallback must be 2-D"))?;
        let (e, ec) = match self.shape(src) {
            [e, ec] => (*e, *ec),
            [0] => (0, c),
            s => return Err(Error::shape("scatter_mean", format!("src {s:?}"))),
        };
        if ec != c || e != dst.len() || dst.iter().any(|&d| d >= n) {
            return Err(Error::shape("scatter_mean", format!("src [{e}, {ec}], {} targets, fallback [{n}, {c}]", dst.len())));
        }
        let sv = self.value(src);
        let fv = self.value(fallback);
        let mut out = vec![0.0; n * c];
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, &d) in dst.iter().enumerate() {
            incoming[d].push(k);
        }
        for (v, edges) in incoming.iter().enumerate() {
            if edges.is_empty() {
                out[v * c..(v + 1) * c].copy_from_slice(&fv[v * c..(v + 1) * c]);
                continue;
            }
            for j in 0..c {
                out[v * c + j] = order_free_sum(edges.iter().map(|&k| sv[k * c + j])) / edges.len() as f64;
            }
        }
        let rg = self.rg(&[src, fallback]);
        Ok(self.push(vec![n, c], out, Op::ScatterMean { src, dst: dst.to_vec(), fallback }, rg))
    }

    /// Repeats a vector `[c]` as `n` rows of a `[n, c]` matrix.
    pub fn tile_rows(&mut self, x: NodeId, n: usize) -> Result<NodeId> {
        let c = match self.shape(x) {
            [c] => *c,
            s => return Err(Error::shape("tile_rows", format!("{s:?}"))),
        };
        let v = self.value(x);
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(v);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![n, c], out, Op::TileRows(x), rg))
    }

    /// Scales every row to unit L2 norm. A zero row is replaced by
    /// `(1, 0, …, 0)` with a warning and passes no gradient.
    pub fn normalize_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = match self.shape(x) {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            s => return Err(Error::shape("normalize_rows", format!("{s:?}"))),
        };
        let v = self.value(x);
        let mut out = vec![0.0; r * c];
        let mut degenerate = vec![false; r];
        for i in 0..r {
            let row = &v[i * c..(i + 1) * c];
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 1e-12 && n.is_finite() {
                for j in 0..c {
                    out[i * c + j] = row[j] / n;
                }
            } else {
                log::warn!("zero-norm row {i} in normalize_rows; substituting fallback (1, 0, ...)");
                out[i * c] = 1.0;
                degenerate[i] = true;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::NormalizeRows { x, degenerate }, rg))
    }

    /// Rotates `points[n, 3]` by the quaternion `q = (w, x, y, z)`.
    ///
    /// The rotation matrix is the usual polynomial in `q`; callers normalize
    /// `q` first.
    pub fn rotate(&mut self, q: NodeId, points: NodeId) -> Result<NodeId> {
        if self.shape(q) != [4] {
            return Err(Error::shape("rotate", format!("quaternion shape {:?}", self.shape(q))));
        }
        let n = match self.shape(points) {
            [n, 3] => *n,
            s => return Err(Error::shape("rotate", format!("points shape {s:?}"))),
        };
        let qv = self.value(q);
        let r = quat_to_matrix([qv[0], qv[1], qv[2], qv[3]]);
        let pv = self.value(points);
        let mut out = vec![0.0; n * 3];
        for k in 0..n {
            let p = &pv[k * 3..k * 3 + 3];
            for i in 0..3 {
                out[k * 3 + i] = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
            }
        }
        let rg = self.rg(&[q, points]);
        Ok(self.push(vec![n, 3], out, Op::Rotate { q, points }, rg))
    }

    /// Adds `t[3]` to every row of `points[n, 3]`.
    pub fn translate(&mut self, points: NodeId, t: NodeId) -> Result<NodeId> {
        if self.shape(t) != [3] {
            return Err(Error::shape("translate", format!("translation shape {:?}", self.shape(t))));
        }
        let n = match self.shape(points) {
            [n, 3] => *n,
            s => return Err(Error::shape("translate", format!("points shape {s:?}"))),
        };
        let tv = self.value(t).to_vec();
        let out = self
            .value(points)
            .iter()
            .enumerate()
            .map(|(k, v)| v + tv[k % 3])
            .collect();
        let rg = self.rg(&[points, t]);
        Ok(self.push(vec![n, 3], out, Op::Translate { points, t }, rg))
    }

    /// Symmetric mean squared nearest-neighbor distance between two clouds.
    pub fn chamfer_sq(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (na, nb) = match (self.shape(a), self.shape(b)) {
            ([na, 3], [nb, 3]) if *na > 0 && *nb > 0 => (*na, *nb),
            (sa, sb) => return Err(Error::shape("chamfer_sq", format!("{sa:?} vs {sb:?}"))),
        };
        let (av, bv) = (self.value(a), self.value(b));
        let (d_ab, nn_ab) = nearest(av, bv);
        let (d_ba, nn_ba) = nearest(bv, av);
        let value = order_free_sum(d_ab.iter().copied()) / na as f64 + order_free_sum(d_ba.iter().copied()) / nb as f64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![1], vec![value], Op::ChamferSq { a, b, nn_ab, nn_ba }, rg))
    }

    /// Negative soft intersection-over-union against a fixed binary target:
    /// `-(Σ p·g + ε) / (Σ (p + g − p·g) + ε)`.
    pub fn soft_iou(&mut self, pred: NodeId, target: &[f64], eps: f64) -> Result<NodeId> {
        if numel(self.shape(pred)) != target.len() {
            return Err(Error::shape(
                "soft_iou",
                format!("prediction {:?} vs target of {} cells", self.shape(pred), target.len()),
            ));
        }
        let (inter, union) = iou_terms(self.value(pred), target, eps);
        let rg = self.rg(&[pred]);
        Ok(self.push(
            vec![1],
            vec![-inter / union],
            Op::SoftIou { pred, target: target.to_vec(), eps },
            rg,
        ))
    }

    /// Reverse sweep from a single-element node, seeded with 1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if numel(self.shape(loss)) != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.backward_node(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        for (idx, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of node {idx}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Linear { x, w, b } => {
                let (out_dim, in_dim) = as_matrix(self.shape(*w)).unwrap();
                let rows = g.len() / out_dim;
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs(*x) {
                    let gx = self.slot(grads, *x);
                    for r in 0..rows {
                        let gr = &g[r * out_dim..(r + 1) * out_dim];
                        let gxr = &mut gx[r * in_dim..(r + 1) * in_dim];
                        for (o, &go) in gr.iter().enumerate() {
                            if go != 0.0 {
                                axpy(go, &wv[o * in_dim..(o + 1) * in_dim], gxr);
                            }
                        }
                    }
                }
                if self.needs(*w) {
                    let gw = self.slot(grads, *w);
                    for r in 0..rows {
                        let xr = &xv[r * in_dim..(r + 1) * in_dim];
                        for o in 0..out_dim {
                            let go = g[r * out_dim + o];
                            if go != 0.0 {
                                axpy(go, xr, &mut gw[o * in_dim..(o + 1) * in_dim]);
                            }
                        }
                    }
                }
                if self.needs(*b) {
                    let gb = self.slot(grads, *b);
                    for r in 0..rows {
                        for o in 0..out_dim {
                            gb[o] += g[r * out_dim + o];
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = self.slot(grads, *x);
                for i in 0..g.len() {
                    if xv[i] > 0.0 {
                        gx[i] += g[i];
                    }
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    axpy(1.0, g, self.slot(grads, *a));
                }
                if self.needs(*b) {
                    axpy(1.0, g, self.slot(grads, *b));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    axpy(1.0, g, self.slot(grads, *a));
                }
                if self.needs(*b) {
                    axpy(-1.0, g, self.slot(grads, *b));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let ga = self.slot(grads, *a);
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let gb = self.slot(grads, *b);
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(x, c) => axpy(*c, g, self.slot(grads, *x)),
            Op::Sum(x) => {
                let gx = self.slot(grads, *x);
                gx.iter_mut().for_each(|v| *v += g[0]);
            }
            Op::SumSq(x) => {
                let xv = self.value(*x);
                axpy(2.0 * g[0], xv, self.slot(grads, *x));
            }
            Op::Norm(x) => {
                let n = self.value(NodeId(idx))[0];
                if n > 0.0 {
                    let sign = if self.fault == Some(Fault::FlipNormGrad) { -1.0 } else { 1.0 };
                    let xv = self.value(*x);
                    axpy(sign * g[0] / n, xv, self.slot(grads, *x));
                }
            }
            Op::Concat(xs) | Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let len = numel(self.shape(x));
                    if self.needs(x) {
                        axpy(1.0, &g[offset..offset + len], self.slot(grads, x));
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(xs) => {
                let (rows, cols) = as_matrix(&node.shape).unwrap();
                let mut col_offset = 0;
                for &x in xs {
                    let c = self.shape(x)[1];
                    if self.needs(x) {
                        let gx = self.slot(grads, x);
                        for r in 0..rows {
                            axpy(
                                1.0,
                                &g[r * cols + col_offset..r * cols + col_offset + c],
                                &mut gx[r * c..(r + 1) * c],
                            );
                        }
                    }
                    col_offset += c;
                }
            }
            Op::Row(x, i) => {
                let c = g.len();
                let gx = self.slot(grads, *x);
                axpy(1.0, g, &mut gx[i * c..(i + 1) * c]);
            }
            Op::Reshape(x) => axpy(1.0, g, self.slot(grads, *x)),
            Op::MaxRows { x, argmax } => {
                let c = g.len();
                let gx = self.slot(grads, *x);
                for j in 0..c {
                    gx[argmax[j] * c + j] += g[j];
                }
            }
            Op::MeanRows(x) => {
                let (r, c) = as_matrix(self.shape(*x)).unwrap();
                let inv = 1.0 / r as f64;
                let gx = self.slot(grads, *x);
                for i in 0..r {
                    axpy(inv, g, &mut gx[i * c..(i + 1) * c]);
                }
            }
            Op::SoftmaxCols(x) => {
                let (k, p) = as_matrix(&node.shape).unwrap();
                let s = self.value(NodeId(idx));
                let gx = self.slot(grads, *x);
                for j in 0..p {
                    let dot: f64 = (0..k).map(|i| s[i * p + j] * g[i * p + j]).sum();
                    for i in 0..k {
                        gx[i * p + j] += s[i * p + j] * (g[i * p + j] - dot);
                    }
                }
            }
            Op::GatherRows { x, index } => {
                let c = self.shape(*x)[1];
                let gx = self.slot(grads, *x);
                for (k, &i) in index.iter().enumerate() {
                    axpy(1.0, &g[k * c..(k + 1) * c], &mut gx[i * c..(i + 1) * c]);
                }
            }
            Op::ScatterMean { src, dst, fallback } => {
                let (n, c) = as_matrix(&node.shape).unwrap();
                let mut count = vec![0usize; n];
                dst.iter().for_each(|&d| count[d] += 1);
                if self.needs(*src) && !dst.is_empty() {
                    let gs = self.slot(grads, *src);
                    for (k, &d) in dst.iter().enumerate() {
                        let inv = 1.0 / count[d] as f64;
                        axpy(inv, &g[d * c..(d + 1) * c], &mut gs[k * c..(k + 1) * c]);
                    }
                }
                if self.needs(*fallback) {
                    let gf = self.slot(grads, *fallback);
                    for v in 0..n {
                        if count[v] == 0 {
                            axpy(1.0, &g[v * c..(v + 1) * c], &mut gf[v * c..(v + 1) * c]);
                        }
                    }
                }
            }
            Op::TileRows(x) => {
                let c = numel(self.shape(*x));
                let gx = self.slot(grads, *x);
                for chunk in g.chunks(c) {
                    axpy(1.0, chunk, gx);
                }
            }
            Op::NormalizeRows { x, degenerate } => {
                let c = *node.shape.last().unwrap();
                let xv = self.value(*x);
                let y = self.value(NodeId(idx));
                let gx = self.slot(grads, *x);
                for (i, &deg) in degenerate.iter().enumerate() {
                    if deg {
                        continue;
                    }
                    let row = &xv[i * c..(i + 1) * c];
                    let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let yg = dot(yr, gr);
                    for j in 0..c {
                        gx[i * c + j] += (gr[j] - yr[j] * yg) / n;
                    }
                }
            }
            Op::Rotate { q, points } => {
                let qv = self.value(*q);
                let pv = self.value(*points);
                let n = pv.len() / 3;
                if self.needs(*q) {
                    // dL/dR = Σ_k g_k p_kᵀ
                    let mut dr = [[0.0; 3]; 3];
                    for k in 0..n {
                        for i in 0..3 {
                            for j in 0..3 {
                                dr[i][j] += g[k * 3 + i] * pv[k * 3 + j];
                            }
                        }
                    }
                    let dq = rotation_vjp([qv[0], qv[1], qv[2], qv[3]], &dr);
                    let gq = self.slot(grads, *q);
                    for i in 0..4 {
                        gq[i] += dq[i];
                    }
                }
                if self.needs(*points) {
                    let r = quat_to_matrix([qv[0], qv[1], qv[2], qv[3]]);
                    let gp = self.slot(grads, *points);
                    for k in 0..n {
                        for j in 0..3 {
                            gp[k * 3 + j] += (0..3).map(|i| r[i][j] * g[k * 3 + i]).sum::<f64>();
                        }
                    }
                }
            }
            Op::Translate { points, t } => {
                if self.needs(*points) {
                    axpy(1.0, g, self.slot(grads, *points));
                }
                if self.needs(*t) {
                    let gt = self.slot(grads, *t);
                    for (k, v) in g.iter().enumerate() {
                        gt[k % 3] += v;
                    }
                }
            }
            Op::ChamferSq { a, b, nn_ab, nn_ba } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (na, nb) = (nn_ab.len(), nn_ba.len());
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                let sa = 2.0 * g[0] / na as f64;
                for (i, &j) in nn_ab.iter().enumerate() {
                    for d in 0..3 {
                        let diff = sa * (av[i * 3 + d] - bv[j * 3 + d]);
                        ga[i * 3 + d] += diff;
                        gb[j * 3 + d] -= diff;
                    }
                }
                let sb = 2.0 * g[0] / nb as f64;
                for (j, &i) in nn_ba.iter().enumerate() {
                    for d in 0..3 {
                        let diff = sb * (bv[j * 3 + d] - av[i * 3 + d]);
                        gb[j * 3 + d] += diff;
                        ga[i * 3 + d] -= diff;
                    }
                }
                if self.needs(*a) {
                    axpy(1.0, &ga, self.slot(grads, *a));
                }
                if self.needs(*b) {
                    axpy(1.0, &gb, self.slot(grads, *b));
                }
            }
            Op::SoftIou { pred, target, eps } => {
                let pv = self.value(*pred);
                let (inter, union) = iou_terms(pv, target, *eps);
                let gp = self.slot(grads, *pred);
                let u2 = union * union;
                for i in 0..pv.len() {
                    let t = target[i];
                    gp[i] += -g[0] * (t * union - inter * (1.0 - t)) / u2;
                }
            }
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> &'g mut [f64] {
        let len = numel(self.shape(id));
        grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`, if it was reached.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Collects gradients of every parameter node on `graph`.
    pub fn param_grads(&self, graph: &Graph<'_>, store: &ParamStore) -> ParamGrads {
        let mut out = vec![None; store.len()];
        for (&pid, &nid) in &graph.param_nodes {
            if let Some(g) = self.get(nid) {
                out[pid.index()] = Some(g.to_vec());
            }
        }
        ParamGrads::from_parts(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn iou_terms(pred: &[f64], target: &[f64], eps: f64) -> (f64, f64) {
    let mut inter = eps;
    let mut union = eps;
    for (&p, &t) in pred.iter().zip(target) {
        inter += p * t;
        union += p + t - p * t;
    }
    (inter, union)
}

/// Squared distance from each row of `from` to its nearest row of `to`,
/// with the lowest index winning ties.
pub(crate) fn nearest(from: &[f64], to: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = from.len() / 3;
    let m = to.len() / 3;
    let mut dist = vec![f64::INFINITY; n];
    let mut idx = vec![0; n];
    for i in 0..n {
        let (x, y, z) = (from[i * 3], from[i * 3 + 1], from[i * 3 + 2]);
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for j in 0..m {
            let dx = x - to[j * 3];
            let dy = y - to[j * 3 + 1];
            let dz = z - to[j * 3 + 2];
            let d = dx * dx + dy * dy + dz * dz;
            if d < best {
                best = d;
                arg = j;
            }
        }
        dist[i] = best;
        idx[i] = arg;
    }
    (dist, idx)
}

/// Vector-Jacobian product of the quaternion-to-matrix map: `Σ_ij dR_ij ∂R_ij/∂q`.
fn rotation_vjp(q: [f64; 4], dr: &[[f64; 3]; 3]) -> [f64; 4] {
    let [w, x, y, z] = q;
    let d_w = [[0.0, -2.0 * z, 2.0 * y], [2.0 * z, 0.0, -2.0 * x], [-2.0 * y, 2.0 * x, 0.0]];
    let d_x = [[0.0, 2.0 * y, 2.0 * z], [2.0 * y, -4.0 * x, -2.0 * w], [2.0 * z, 2.0 * w, -4.0 * x]];
    let d_y = [[-4.0 * y, 2.0 * x, 2.0 * w], [2.0 * x, 0.0, 2.0 * z], [-2.0 * w, 2.0 * z, -4.0 * y]];
    let d_z = [[-4.0 * z, -2.0 * w, 2.0 * x], [2.0 * w, -4.0 * z, 2.0 * y], [2.0 * x, 2.0 * y, 0.0]];
    let contract = |m: &[[f64; 3]; 3]| -> f64 {
        (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| m[i][j] * dr[i][j]).sum()
    };
    [contract(&d_w), contract(&d_x), contract(&d_y), contract(&d_z)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(g: &Graph<'_>, id: NodeId) -> Vec<f64> {
        g.value(id).to_vec()
    }

    #[test]
    fn linear_identity_and_hand_arithmetic() {
        let mut g = Graph::new();
        let x = g.variable(&[2], vec![1.0, 2.0]).unwrap();
        let w = g.variable(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = g.variable(&[2], vec![0.0, 0.0]).unwrap();
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(vals(&g, y), vec![1.0, 2.0]);

        let x = g.variable(&[2], vec![1.0, 1.0]).unwrap();
        let w = g.variable(&[1, 2], vec![2.0, 3.0]).unwrap();
        let b = g.variable(&[1], vec![1.0]).unwrap();
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(vals(&g, y), vec![6.0]);
    }

    #[test]
    fn linear_rejects_mismatched_shapes() {
        let mut g = Graph::new();
        let x = g.variable(&[3], vec![1.0; 3]).unwrap();
        let w = g.variable(&[2, 2], vec![1.0; 4]).unwrap();
        let b = g.variable(&[2], vec![0.0; 2]).unwrap();
        let err = g.linear(x, w, b).unwrap_err();
        assert!(err.to_string().contains("linear"), "{err}");
        let b3 = g.variable(&[3], vec![0.0; 3]).unwrap();
        let x2 = g.variable(&[2], vec![1.0; 2]).unwrap();
        assert!(g.linear(x2, w, b3).is_err());
    }

    #[test]
    fn relu_forward_and_mask_rule() {
        let mut g = Graph::new();
        let x = g.variable(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = g.relu(x);
        assert_eq!(vals(&g, y), vec![0.0, 0.0, 2.0]);

        let mut g = Graph::new();
        let x = g.variable(&[2], vec![-1.0, 2.0]).unwrap();
        let y = g.relu(x);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 1.0]);

        let mut g = Graph::new();
        let x = g.variable(&[1], vec![0.0]).unwrap();
        let y = g.relu(x);
        let s = g.sum(y);
        assert_eq!(g.backward(s).unwrap().get(x).unwrap(), &[0.0]);
    }

    #[test]
    fn set_max_pool_values_symmetry_and_ties() {
        let mut g = Graph::new();
        let a = g.variable(&[2], vec![1.0, 5.0]).unwrap();
        let b = g.variable(&[2], vec![3.0, 2.0]).unwrap();
        let m1 = g.set_max_pool(&[a, b]).unwrap();
        let m2 = g.set_max_pool(&[b, a]).unwrap();
        assert_eq!(vals(&g, m1), vec![3.0, 5.0]);
        assert_eq!(vals(&g, m1), vals(&g, m2));

        let mut g = Graph::new();
        let a = g.variable(&[1], vec![1.0]).unwrap();
        let b = g.variable(&[1], vec![1.0]).unwrap();
        let m = g.set_max_pool(&[a, b]).unwrap();
        let s = g.sum(m);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[1.0]);
        assert_eq!(grads.get(b).unwrap_or(&[0.0]), &[0.0]);

        assert!(Graph::new().set_max_pool(&[]).is_err());
    }

    #[test]
    fn set_mean_pool_values_and_gradient() {
        let mut g = Graph::new();
        let a = g.variable(&[1], vec![2.0]).unwrap();
        let b = g.variable(&[1], vec![4.0]).unwrap();
        let m = g.set_mean_pool(&[a, b]).unwrap();
        assert_eq!(vals(&g, m), vec![3.0]);
        let single = g.set_mean_pool(&[a]).unwrap();
        assert_eq!(vals(&g, single), vec![2.0]);

        let mut g = Graph::new();
        let xs: Vec<NodeId> = (0..4).map(|i| g.variable(&[2], vec![i as f64, 1.0]).unwrap()).collect();
        let m = g.set_mean_pool(&xs).unwrap();
        let s = g.sum(m);
        let grads = g.backward(s).unwrap();
        for x in xs {
            assert_eq!(grads.get(x).unwrap(), &[0.25, 0.25]);
        }
        assert!(Graph::new().set_mean_pool(&[]).is_err());
    }

    #[test]
    fn concat_forward_and_split_backward() {
        let mut g = Graph::new();
        let a = g.variable(&[2], vec![1.0, 2.0]).unwrap();
        let b = g.variable(&[1], vec![3.0]).unwrap();
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(vals(&g, c), vec![1.0, 2.0, 3.0]);
        let one = g.concat(&[a]).unwrap();
        assert_eq!(vals(&g, one), vec![1.0, 2.0]);
        let w = g.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let weighted = g.mul(c, w).unwrap();
        let s = g.sum(weighted);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap(), &[1.0, 2.0]);
        assert_eq!(grads.get(b).unwrap(), &[3.0]);
    }

    #[test]
    fn softmax_over_set_is_stable_and_normalized() {
        let mut g = Graph::new();
        let a = g.variable(&[2, 2], vec![0.3; 4]).unwrap();
        let b = g.variable(&[2, 2], vec![0.3; 4]).unwrap();
        let out = g.softmax_over_set(&[a, b]).unwrap();
        assert!(vals(&g, out[0]).iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert_eq!(g.shape(out[1]), &[2, 2]);

        let mut g = Graph::new();
        let a = g.variable(&[1], vec![0.0]).unwrap();
        let b = g.variable(&[1], vec![20.0]).unwrap();
        let big = g.variable(&[1], vec![1000.0]).unwrap();
        let out = g.softmax_over_set(&[a, b]).unwrap();
        assert!(g.scalar(out[0]) < 1e-8);
        assert!((g.scalar(out[1]) - 1.0).abs() < 1e-8);
        let out = g.softmax_over_set(&[a, big]).unwrap();
        assert!(g.scalar(out[1]).is_finite() && g.scalar(out[0]) == 0.0);
    }

    #[test]
    fn scatter_mean_isolated_nodes_copy_fallback() {
        let mut g = Graph::new();
        let fallback = g.variable(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let edges = g.variable(&[2, 2], vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let out = g.scatter_mean(edges, &[0, 0], fallback).unwrap();
        assert_eq!(vals(&g, out), vec![20.0, 30.0, 3.0, 4.0, 5.0, 6.0]);
        let empty = g.constant(&[0, 2], vec![]).unwrap();
        let out = g.scatter_mean(empty, &[], fallback).unwrap();
        assert_eq!(vals(&g, out), vals(&g, fallback));
    }

    #[test]
    fn normalize_rows_zero_falls_back() {
        let mut g = Graph::new();
        let x = g.variable(&[2, 4], vec![0.0, 3.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let y = g.normalize_rows(x).unwrap();
        assert_eq!(vals(&g, y), vec![0.0, 0.6, 0.0, 0.8, 1.0, 0.0, 0.0, 0.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(&grads.get(x).unwrap()[4..], &[0.0; 4]);
    }

    #[test]
    fn tape_linearity_of_two_losses() {
        let build = |which: u8| {
            let mut g = Graph::new();
            let x = g.variable(&[3], vec![0.5, -1.5, 2.0]).unwrap();
            let a = g.sum_sq(x);
            let b = g.norm(x);
            let loss = match which {
                0 => a,
                1 => b,
                _ => g.add(a, b).unwrap(),
            };
            g.backward(loss).unwrap().get(x).unwrap().to_vec()
        };
        let (ga, gb, gab) = (build(0), build(1), build(2));
        for i in 0..3 {
            assert!((ga[i] + gb[i] - gab[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.variable(&[2], vec![1.0, 2.0]).unwrap();
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn chamfer_hand_values() {
        let mut g = Graph::new();
        let a = g.variable(&[1, 3], vec![0.0, 0.0, 0.0]).unwrap();
        let b = g.variable(&[1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let c = g.chamfer_sq(a, b).unwrap();
        assert_eq!(g.scalar(c), 2.0);
        let same = g.chamfer_sq(a, a).unwrap();
        assert_eq!(g.scalar(same), 0.0);
    }
}
