//! Define-by-run reverse-mode autodiff over [`Tensor`] values.
//!
//! A [`Graph`] records every forward op as a node; [`Graph::backward`] walks
//! the nodes in reverse creation order (which is a topological order by
//! construction) and accumulates adjoints exactly once per node.
//!
//! Shape violations panic with a message naming the op and the shapes; they
//! are construction bugs, not runtime data errors.

#![allow(clippy::needless_range_loop)]

use super::params::{ParamId, ParamSet};
use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    /// Leaf holding a constant or a parameter value.
    Input,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Matmul(NodeId, NodeId),
    /// `[r,c] + [c]`, the vector added to every row.
    AddRowVec(NodeId, NodeId),
    /// `[r,c] + [r]`, the vector added to every column.
    AddColVec(NodeId, NodeId),
    /// Rank-1 concatenation.
    Concat(NodeId, NodeId),
    /// Vertical concatenation of two rank-2 tensors with equal column count.
    VCat(NodeId, NodeId),
    Embedding(NodeId, Vec<usize>),
    Softmax(NodeId, usize),
    LogSoftmax(NodeId, usize),
    LogSumExp(NodeId, usize),
    Softplus(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Ln(NodeId),
    Abs(NodeId),
    /// y = mean + scale .* noise (reparameterized Gaussian sample).
    GaussianSample {
        mean: NodeId,
        scale: NodeId,
        noise: Tensor,
    },
    Sum(NodeId),
    SumAxis(NodeId, usize),
    Row(NodeId, usize),
    Col(NodeId, usize),
    RowsSlice(NodeId, usize, usize),
    ColsSlice(NodeId, usize, usize),
    Slice1(NodeId, usize, usize),
    Gather(NodeId, Vec<usize>),
    SelectPerRow(NodeId, Vec<usize>),
    StackRows(Vec<NodeId>),
    Transpose(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Reverse-mode tape. Single-owner while being built and differentiated;
/// values are immutable once created.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    /// (node, param) bindings so gradients can be exported per parameter.
    param_nodes: Vec<(NodeId, ParamId)>,
    param_cache: Vec<Option<NodeId>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_nodes: Vec::new(),
            param_cache: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        debug_assert!(
            !value.has_non_finite(),
            "graph: non-finite forward value from {:?}",
            op_name(&op)
        );
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf node holding a constant; no gradient is reported for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Leaf node bound to `param`; one node per parameter per graph.
    pub fn param(&mut self, params: &ParamSet, pid: ParamId) -> NodeId {
        if self.param_cache.len() < params.len() {
            self.param_cache.resize(params.len(), None);
        }
        if let Some(id) = self.param_cache[pid.index()] {
            return id;
        }
        let id = self.push(Op::Input, params.get(pid).clone());
        self.param_nodes.push((id, pid));
        self.param_cache[pid.index()] = Some(id);
        id
    }

    // ---- forward ops ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb);
        let data = zip(va, vb, |x, y| x + y);
        let t = Tensor::new(va.shape().to_vec(), data);
        self.push(Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va, vb);
        let data = zip(va, vb, |x, y| x - y);
        let t = Tensor::new(va.shape().to_vec(), data);
        self.push(Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb);
        let data = zip(va, vb, |x, y| x * y);
        let t = Tensor::new(va.shape().to_vec(), data);
        self.push(Op::Mul(a, b), t)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let t = map(self.value(a), |x| -x);
        self.push(Op::Neg(a), t)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let t = map(self.value(a), |x| c * x);
        self.push(Op::Scale(a, c), t)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let t = map(self.value(a), |x| x + c);
        self.push(Op::AddConst(a), t)
    }

    /// Matrix product. Accepts `[m,k]x[k,n] -> [m,n]`, `[k]x[k,n] -> [n]`
    /// and `[m,k]x[k] -> [m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let t = match (va.rank(), vb.rank()) {
            (2, 2) => {
                let (m, k, k2, n) = (va.rows(), va.cols(), vb.rows(), vb.cols());
                assert_eq!(k, k2, "matmul: inner dims {:?} x {:?}", va.shape(), vb.shape());
                let mut out = vec![0.0; m * n];
                matmul_into(va.data(), vb.data(), m, k, n, &mut out);
                Tensor::new(vec![m, n], out)
            }
            (1, 2) => {
                let (k, k2, n) = (va.len(), vb.rows(), vb.cols());
                assert_eq!(k, k2, "matmul: inner dims {:?} x {:?}", va.shape(), vb.shape());
                let mut out = vec![0.0; n];
                matmul_into(va.data(), vb.data(), 1, k, n, &mut out);
                Tensor::from_vec(out)
            }
            (2, 1) => {
                let (m, k, k2) = (va.rows(), va.cols(), vb.len());
                assert_eq!(k, k2, "matmul: inner dims {:?} x {:?}", va.shape(), vb.shape());
                let mut out = vec![0.0; m];
                for r in 0..m {
                    out[r] = dot(va.row_slice(r), vb.data());
                }
                Tensor::from_vec(out)
            }
            _ => panic!(
                "matmul: unsupported ranks {:?} x {:?}",
                va.shape(),
                vb.shape()
            ),
        };
        self.push(Op::Matmul(a, b), t)
    }

    pub fn add_row_vec(&mut self, mat: NodeId, vec: NodeId) -> NodeId {
        let (vm, vv) = (self.value(mat), self.value(vec));
        assert!(
            vm.rank() == 2 && vv.rank() == 1 && vm.cols() == vv.len(),
            "add_row_vec: shapes {:?} + {:?}",
            vm.shape(),
            vv.shape()
        );
        let (r, c) = (vm.rows(), vm.cols());
        let mut data = vm.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += vv.data()[j];
            }
        }
        self.push(Op::AddRowVec(mat, vec), Tensor::new(vec![r, c], data))
    }

    pub fn add_col_vec(&mut self, mat: NodeId, vec: NodeId) -> NodeId {
        let (vm, vv) = (self.value(mat), self.value(vec));
        assert!(
            vm.rank() == 2 && vv.rank() == 1 && vm.rows() == vv.len(),
            "add_col_vec: shapes {:?} + {:?}",
            vm.shape(),
            vv.shape()
        );
        let (r, c) = (vm.rows(), vm.cols());
        let mut data = vm.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += vv.data()[i];
            }
        }
        self.push(Op::AddColVec(mat, vec), Tensor::new(vec![r, c], data))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(
            va.rank() == 1 && vb.rank() == 1,
            "concat: rank-1 only, got {:?} and {:?}",
            va.shape(),
            vb.shape()
        );
        let mut data = va.data().to_vec();
        data.extend_from_slice(vb.data());
        self.push(Op::Concat(a, b), Tensor::from_vec(data))
    }

    pub fn vcat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(
            va.rank() == 2 && vb.rank() == 2 && va.cols() == vb.cols(),
            "vcat: shapes {:?} and {:?}",
            va.shape(),
            vb.shape()
        );
        let c = va.cols();
        let mut data = va.data().to_vec();
        data.extend_from_slice(vb.data());
        let rows = va.rows() + vb.rows();
        self.push(Op::VCat(a, b), Tensor::new(vec![rows, c], data))
    }

    /// Looks up `ids` rows of an embedding table `[V,d] -> [len(ids), d]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let vt = self.value(table);
        assert_eq!(vt.rank(), 2, "embedding: table shape {:?}", vt.shape());
        let (v, d) = (vt.rows(), vt.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "embedding: id {} out of table rows {}", id, v);
            data.extend_from_slice(vt.row_slice(id));
        }
        let t = Tensor::new(vec![ids.len(), d], data);
        self.push(Op::Embedding(table, ids.to_vec()), t)
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> NodeId {
        let v = self.value(a);
        let t = apply_slices(v, axis, "softmax", |xs, out| {
            softmax_slice(xs, out);
        });
        self.push(Op::Softmax(a, axis), t)
    }

    pub fn log_softmax(&mut self, a: NodeId, axis: usize) -> NodeId {
        let v = self.value(a);
        let t = apply_slices(v, axis, "log_softmax", |xs, out| {
            let lse = logsumexp_slice(xs);
            for (o, &x) in out.iter_mut().zip(xs) {
                *o = x - lse;
            }
        });
        self.push(Op::LogSoftmax(a, axis), t)
    }

    /// Max-subtracted log-sum-exp along `axis`. Rank-1 input reduces to a
    /// scalar; rank-2 reduces the given axis and yields a vector.
    pub fn logsumexp(&mut self, a: NodeId, axis: usize) -> NodeId {
        let v = self.value(a);
        let t = reduce_slices(v, axis, "logsumexp", logsumexp_slice);
        self.push(Op::LogSumExp(a, axis), t)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let t = map(self.value(a), softplus_scalar);
        self.push(Op::Softplus(a), t)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let t = map(self.value(a), f64::tanh);
        self.push(Op::Tanh(a), t)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let t = map(self.value(a), sigmoid_scalar);
        self.push(Op::Sigmoid(a), t)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let t = map(self.value(a), f64::ln);
        self.push(Op::Ln(a), t)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let t = map(self.value(a), f64::abs);
        self.push(Op::Abs(a), t)
    }

    /// Reparameterized sample `mean + scale .* noise`; the noise tensor is a
    /// constant, so gradients flow only into mean and scale.
    pub fn gaussian_sample(&mut self, mean: NodeId, scale: NodeId, noise: Tensor) -> NodeId {
        let (vm, vs) = (self.value(mean), self.value(scale));
        same_shape("gaussian_sample", vm, vs);
        assert_eq!(
            vm.shape(),
            noise.shape(),
            "gaussian_sample: noise shape {:?} vs mean {:?}",
            noise.shape(),
            vm.shape()
        );
        assert!(
            vs.data().iter().all(|&s| s > 0.0),
            "gaussian_sample: scale must be positive everywhere"
        );
        let data: Vec<f64> = vm
            .data()
            .iter()
            .zip(vs.data())
            .zip(noise.data())
            .map(|((&u, &s), &e)| u + s * e)
            .collect();
        let t = Tensor::new(vm.shape().to_vec(), data);
        self.push(Op::GaussianSample { mean, scale, noise }, t)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Axis 0 sums down columns (`[r,c] -> [c]`), axis 1 across rows.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        let v = self.value(a);
        let t = reduce_slices(v, axis, "sum_axis", |xs| xs.iter().sum());
        self.push(Op::SumAxis(a, axis), t)
    }

    pub fn row(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = self.value(a);
        assert!(
            v.rank() == 2 && i < v.rows(),
            "row: index {} of shape {:?}",
            i,
            v.shape()
        );
        let t = Tensor::from_vec(v.row_slice(i).to_vec());
        self.push(Op::Row(a, i), t)
    }

    pub fn col(&mut self, a: NodeId, j: usize) -> NodeId {
        let v = self.value(a);
        assert!(
            v.rank() == 2 && j < v.cols(),
            "col: index {} of shape {:?}",
            j,
            v.shape()
        );
        let c = v.cols();
        let data: Vec<f64> = (0..v.rows()).map(|r| v.data()[r * c + j]).collect();
        self.push(Op::Col(a, j), Tensor::from_vec(data))
    }

    pub fn rows_slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a);
        assert!(
            v.rank() == 2 && start + len <= v.rows(),
            "rows_slice: [{}..{}) of shape {:?}",
            start,
            start + len,
            v.shape()
        );
        let c = v.cols();
        let data = v.data()[start * c..(start + len) * c].to_vec();
        self.push(Op::RowsSlice(a, start, len), Tensor::new(vec![len, c], data))
    }

    pub fn cols_slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a);
        assert!(
            v.rank() == 2 && start + len <= v.cols(),
            "cols_slice: [{}..{}) of shape {:?}",
            start,
            start + len,
            v.shape()
        );
        let c = v.cols();
        let mut data = Vec::with_capacity(v.rows() * len);
        for r in 0..v.rows() {
            data.extend_from_slice(&v.data()[r * c + start..r * c + start + len]);
        }
        self.push(
            Op::ColsSlice(a, start, len),
            Tensor::new(vec![v.rows(), len], data),
        )
    }

    pub fn slice1(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a);
        assert!(
            v.rank() == 1 && start + len <= v.len(),
            "slice1: [{}..{}) of shape {:?}",
            start,
            start + len,
            v.shape()
        );
        let data = v.data()[start..start + len].to_vec();
        self.push(Op::Slice1(a, start, len), Tensor::from_vec(data))
    }

    pub fn gather(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let v = self.value(a);
        assert_eq!(v.rank(), 1, "gather: rank-1 input, got {:?}", v.shape());
        let data: Vec<f64> = idx
            .iter()
            .map(|&i| {
                assert!(i < v.len(), "gather: index {} of len {}", i, v.len());
                v.data()[i]
            })
            .collect();
        self.push(Op::Gather(a, idx.to_vec()), Tensor::from_vec(data))
    }

    /// Picks one column per row: `out[r] = a[r, idx[r]]`.
    pub fn select_per_row(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let v = self.value(a);
        assert!(
            v.rank() == 2 && idx.len() == v.rows(),
            "select_per_row: {} indices for shape {:?}",
            idx.len(),
            v.shape()
        );
        let c = v.cols();
        let data: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(r, &j)| {
                assert!(j < c, "select_per_row: col {} of {}", j, c);
                v.data()[r * c + j]
            })
            .collect();
        self.push(Op::SelectPerRow(a, idx.to_vec()), Tensor::from_vec(data))
    }

    /// Stacks equal-length rank-1 nodes into a `[k, c]` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> NodeId {
        assert!(!rows.is_empty(), "stack_rows: no rows");
        let c = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            let v = self.value(r);
            assert!(
                v.rank() == 1 && v.len() == c,
                "stack_rows: row shape {:?}, expected [{}]",
                v.shape(),
                c
            );
            data.extend_from_slice(v.data());
        }
        let t = Tensor::new(vec![rows.len(), c], data);
        self.push(Op::StackRows(rows.to_vec()), t)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        assert_eq!(v.rank(), 2, "transpose: shape {:?}", v.shape());
        let (r, c) = (v.rows(), v.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = v.data()[i * c + j];
            }
        }
        self.push(Op::Transpose(a), Tensor::new(vec![c, r], data))
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar loss. May be called repeatedly; the
    /// result is identical each time.
    pub fn backward(&mut self, loss: NodeId) {
        assert!(
            self.value(loss).is_scalar(),
            "backward: loss must be scalar, got shape {:?}",
            self.value(loss).shape()
        );
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
    }

    /// Gradient of the last backward pass w.r.t. `id` (zeros if unused).
    pub fn grad(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.value(id).shape()),
        }
    }

    /// Exports per-parameter gradients aligned with `params` (zeros for
    /// parameters the graph never touched).
    pub fn param_grads(&self, params: &ParamSet) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        for &(node, pid) in &self.param_nodes {
            if let Some(g) = &self.grads[node.0] {
                accumulate(&mut out[pid.index()], g);
            }
        }
        out
    }

    fn accum(&mut self, id: NodeId, delta: &Tensor) {
        match &mut self.grads[id.0] {
            Some(g) => accumulate(g, delta),
            slot => *slot = Some(delta.clone()),
        }
    }

    fn accum_raw(&mut self, id: NodeId, build: impl FnOnce(&mut Tensor)) {
        if self.grads[id.0].is_none() {
            self.grads[id.0] = Some(Tensor::zeros(self.value(id).shape()));
        }
        let mut g = self.grads[id.0].take().unwrap();
        build(&mut g);
        self.grads[id.0] = Some(g);
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        // Clone op metadata up front; values are read through `self.value`.
        let op = self.nodes[i].op.clone();
        match op {
            Op::Input => {}
            Op::Add(a, b) => {
                self.accum(a, g);
                self.accum(b, g);
            }
            Op::Sub(a, b) => {
                self.accum(a, g);
                let neg = map(g, |x| -x);
                self.accum(b, &neg);
            }
            Op::Mul(a, b) => {
                let da = Tensor::new(g.shape().to_vec(), zip(g, self.value(b), |x, y| x * y));
                let db = Tensor::new(g.shape().to_vec(), zip(g, self.value(a), |x, y| x * y));
                self.accum(a, &da);
                self.accum(b, &db);
            }
            Op::Neg(a) => {
                let d = map(g, |x| -x);
                self.accum(a, &d);
            }
            Op::Scale(a, c) => {
                let d = map(g, |x| c * x);
                self.accum(a, &d);
            }
            Op::AddConst(a) => self.accum(a, g),
            Op::Matmul(a, b) => self.backward_matmul(a, b, g),
            Op::AddRowVec(mat, vec) => {
                self.accum(mat, g);
                let c = g.cols();
                let mut dv = vec![0.0; c];
                for r in 0..g.rows() {
                    for j in 0..c {
                        dv[j] += g.data()[r * c + j];
                    }
                }
                self.accum(vec, &Tensor::from_vec(dv));
            }
            Op::AddColVec(mat, vec) => {
                self.accum(mat, g);
                let c = g.cols();
                let mut dv = vec![0.0; g.rows()];
                for r in 0..g.rows() {
                    dv[r] = g.row_slice(r).iter().sum::<f64>();
                    let _ = c;
                }
                self.accum(vec, &Tensor::from_vec(dv));
            }
            Op::Concat(a, b) => {
                let na = self.value(a).len();
                let da = Tensor::from_vec(g.data()[..na].to_vec());
                let db = Tensor::from_vec(g.data()[na..].to_vec());
                self.accum(a, &da);
                self.accum(b, &db);
            }
            Op::VCat(a, b) => {
                let (ra, c) = (self.value(a).rows(), self.value(a).cols());
                let rb = self.value(b).rows();
                let da = Tensor::new(vec![ra, c], g.data()[..ra * c].to_vec());
                let db = Tensor::new(vec![rb, c], g.data()[ra * c..].to_vec());
                self.accum(a, &da);
                self.accum(b, &db);
            }
            Op::Embedding(table, ids) => {
                let d = self.value(table).cols();
                self.accum_raw(table, |dt| {
                    for (t, &id) in ids.iter().enumerate() {
                        let dst = &mut dt.data_mut()[id * d..(id + 1) * d];
                        for (x, &v) in dst.iter_mut().zip(&g.data()[t * d..(t + 1) * d]) {
                            *x += v;
                        }
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let y = self.nodes[i].value.clone();
                let d = backprop_slices(&y, g, axis, |ys, gs, out| {
                    let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                    for ((o, &yv), &gv) in out.iter_mut().zip(ys).zip(gs) {
                        *o = yv * (gv - dot);
                    }
                });
                self.accum(a, &d);
            }
            Op::LogSoftmax(a, axis) => {
                let y = self.nodes[i].value.clone();
                let d = backprop_slices(&y, g, axis, |ys, gs, out| {
                    let gsum: f64 = gs.iter().sum();
                    for ((o, &yv), &gv) in out.iter_mut().zip(ys).zip(gs) {
                        *o = gv - yv.exp() * gsum;
                    }
                });
                self.accum(a, &d);
            }
            Op::LogSumExp(a, axis) => {
                let x = self.value(a).clone();
                let y = self.nodes[i].value.clone();
                let d = backprop_reduce(&x, &y, g, axis, |xs, yv, gv, out| {
                    for (o, &xv) in out.iter_mut().zip(xs) {
                        *o = (xv - yv).exp() * gv;
                    }
                });
                self.accum(a, &d);
            }
            Op::Softplus(a) => {
                let x = self.value(a);
                let d = Tensor::new(
                    g.shape().to_vec(),
                    zip(g, x, |gv, xv| gv * sigmoid_scalar(xv)),
                );
                self.accum(a, &d);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let d = Tensor::new(g.shape().to_vec(), zip(g, y, |gv, yv| gv * (1.0 - yv * yv)));
                self.accum(a, &d);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let d = Tensor::new(
                    g.shape().to_vec(),
                    zip(g, y, |gv, yv| gv * yv * (1.0 - yv)),
                );
                self.accum(a, &d);
            }
            Op::Ln(a) => {
                let x = self.value(a);
                let d = Tensor::new(g.shape().to_vec(), zip(g, x, |gv, xv| gv / xv));
                self.accum(a, &d);
            }
            Op::Abs(a) => {
                let x = self.value(a);
                let d = Tensor::new(
                    g.shape().to_vec(),
                    zip(g, x, |gv, xv| gv * sign(xv)),
                );
                self.accum(a, &d);
            }
            Op::GaussianSample { mean, scale, noise } => {
                self.accum(mean, g);
                let ds = Tensor::new(g.shape().to_vec(), zip(g, &noise, |gv, ev| gv * ev));
                self.accum(scale, &ds);
            }
            Op::Sum(a) => {
                let gv = g.scalar_value();
                let shape = self.value(a).shape().to_vec();
                self.accum(a, &Tensor::full(&shape, gv));
            }
            Op::SumAxis(a, axis) => {
                let (r, c) = (self.value(a).rows(), self.value(a).cols());
                let mut d = vec![0.0; r * c];
                for i0 in 0..r {
                    for j0 in 0..c {
                        d[i0 * c + j0] = if axis == 0 { g.data()[j0] } else { g.data()[i0] };
                    }
                }
                self.accum(a, &Tensor::new(vec![r, c], d));
            }
            Op::Row(a, r) => {
                let c = self.value(a).cols();
                self.accum_raw(a, |da| {
                    for (x, &v) in da.data_mut()[r * c..(r + 1) * c].iter_mut().zip(g.data()) {
                        *x += v;
                    }
                });
            }
            Op::Col(a, j) => {
                let c = self.value(a).cols();
                self.accum_raw(a, |da| {
                    for (r, &v) in g.data().iter().enumerate() {
                        da.data_mut()[r * c + j] += v;
                    }
                });
            }
            Op::RowsSlice(a, start, len) => {
                let c = self.value(a).cols();
                self.accum_raw(a, |da| {
                    let dst = &mut da.data_mut()[start * c..(start + len) * c];
                    for (x, &v) in dst.iter_mut().zip(g.data()) {
                        *x += v;
                    }
                });
            }
            Op::ColsSlice(a, start, len) => {
                let c = self.value(a).cols();
                let rows = self.value(a).rows();
                self.accum_raw(a, |da| {
                    for r in 0..rows {
                        for j in 0..len {
                            da.data_mut()[r * c + start + j] += g.data()[r * len + j];
                        }
                    }
                });
            }
            Op::Slice1(a, start, len) => {
                self.accum_raw(a, |da| {
                    for (x, &v) in da.data_mut()[start..start + len].iter_mut().zip(g.data()) {
                        *x += v;
                    }
                    let _ = len;
                });
            }
            Op::Gather(a, idx) => {
                self.accum_raw(a, |da| {
                    for (t, &i0) in idx.iter().enumerate() {
                        da.data_mut()[i0] += g.data()[t];
                    }
                });
            }
            Op::SelectPerRow(a, idx) => {
                let c = self.value(a).cols();
                self.accum_raw(a, |da| {
                    for (r, &j) in idx.iter().enumerate() {
                        da.data_mut()[r * c + j] += g.data()[r];
                    }
                });
            }
            Op::StackRows(rows) => {
                let c = g.cols();
                for (r, &id) in rows.iter().enumerate() {
                    let d = Tensor::from_vec(g.data()[r * c..(r + 1) * c].to_vec());
                    self.accum(id, &d);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (g.rows(), g.cols());
                let mut d = vec![0.0; r * c];
                for i0 in 0..r {
                    for j0 in 0..c {
                        d[j0 * r + i0] = g.data()[i0 * c + j0];
                    }
                }
                self.accum(a, &Tensor::new(vec![c, r], d));
            }
        }
    }

    fn backward_matmul(&mut self, a: NodeId, b: NodeId, g: &Tensor) {
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        match (va.rank(), vb.rank()) {
            (2, 2) => {
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                // dA = g . B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gv = g.data()[i * n + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for l in 0..k {
                            da[i * k + l] += gv * vb.data()[l * n + j];
                        }
                    }
                }
                // dB = A^T . g
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for l in 0..k {
                        let av = va.data()[i * k + l];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[l * n + j] += av * g.data()[i * n + j];
                        }
                    }
                }
                self.accum(a, &Tensor::new(vec![m, k], da));
                self.accum(b, &Tensor::new(vec![k, n], db));
            }
            (1, 2) => {
                let (k, n) = (va.len(), vb.cols());
                let mut da = vec![0.0; k];
                let mut db = vec![0.0; k * n];
                for l in 0..k {
                    da[l] = dot(&vb.data()[l * n..(l + 1) * n], g.data());
                    for j in 0..n {
                        db[l * n + j] += va.data()[l] * g.data()[j];
                    }
                }
                self.accum(a, &Tensor::from_vec(da));
                self.accum(b, &Tensor::new(vec![k, n], db));
            }
            (2, 1) => {
                let (m, k) = (va.rows(), va.cols());
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k];
                for i in 0..m {
                    let gv = g.data()[i];
                    for l in 0..k {
                        da[i * k + l] += gv * vb.data()[l];
                        db[l] += gv * va.data()[i * k + l];
                    }
                }
                self.accum(a, &Tensor::new(vec![m, k], da));
                self.accum(b, &Tensor::from_vec(db));
            }
            _ => unreachable!(),
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Neg(..) => "neg",
        Op::Scale(..) => "scale",
        Op::AddConst(_) => "add_const",
        Op::Matmul(..) => "matmul",
        Op::AddRowVec(..) => "add_row_vec",
        Op::AddColVec(..) => "add_col_vec",
        Op::Concat(..) => "concat",
        Op::VCat(..) => "vcat",
        Op::Embedding(..) => "embedding",
        Op::Softmax(..) => "softmax",
        Op::LogSoftmax(..) => "log_softmax",
        Op::LogSumExp(..) => "logsumexp",
        Op::Softplus(..) => "softplus",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::Ln(..) => "ln",
        Op::Abs(..) => "abs",
        Op::GaussianSample { .. } => "gaussian_sample",
        Op::Sum(..) => "sum",
        Op::SumAxis(..) => "sum_axis",
        Op::Row(..) => "row",
        Op::Col(..) => "col",
        Op::RowsSlice(..) => "rows_slice",
        Op::ColsSlice(..) => "cols_slice",
        Op::Slice1(..) => "slice1",
        Op::Gather(..) => "gather",
        Op::SelectPerRow(..) => "select_per_row",
        Op::StackRows(..) => "stack_rows",
        Op::Transpose(..) => "transpose",
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{}: shape mismatch {:?} vs {:?}",
        op,
        a.shape(),
        b.shape()
    );
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect()
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus_scalar(x: f64) -> f64 {
    // log(1 + e^x) without overflow.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn logsumexp_slice(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_slice(xs: &[f64], out: &mut [f64]) {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Applies `f` slice-wise along `axis` (rank-1: the whole vector; rank-2 axis
/// 1: each row; axis 0: each column), producing a same-shaped tensor.
fn apply_slices(v: &Tensor, axis: usize, op: &str, f: impl Fn(&[f64], &mut [f64])) -> Tensor {
    match v.rank() {
        1 => {
            assert_eq!(axis, 0, "{}: axis {} on rank-1 input", op, axis);
            let mut out = vec![0.0; v.len()];
            f(v.data(), &mut out);
            Tensor::from_vec(out)
        }
        2 => {
            let (r, c) = (v.rows(), v.cols());
            let mut out = vec![0.0; r * c];
            match axis {
                1 => {
                    for i in 0..r {
                        f(v.row_slice(i), &mut out[i * c..(i + 1) * c]);
                    }
                }
                0 => {
                    let mut colbuf = vec![0.0; r];
                    let mut obuf = vec![0.0; r];
                    for j in 0..c {
                        for i in 0..r {
                            colbuf[i] = v.data()[i * c + j];
                        }
                        f(&colbuf, &mut obuf);
                        for i in 0..r {
                            out[i * c + j] = obuf[i];
                        }
                    }
                }
                _ => panic!("{}: axis {} on shape {:?}", op, axis, v.shape()),
            }
            Tensor::new(vec![r, c], out)
        }
        _ => panic!("{}: unsupported shape {:?}", op, v.shape()),
    }
}

/// Reduces slices along `axis` to one value each: rank-1 -> scalar, rank-2
/// axis 0 -> `[cols]`, axis 1 -> `[rows]`.
fn reduce_slices(v: &Tensor, axis: usize, op: &str, f: impl Fn(&[f64]) -> f64) -> Tensor {
    match v.rank() {
        1 => {
            assert_eq!(axis, 0, "{}: axis {} on rank-1 input", op, axis);
            Tensor::scalar(f(v.data()))
        }
        2 => {
            let (r, c) = (v.rows(), v.cols());
            match axis {
                1 => Tensor::from_vec((0..r).map(|i| f(v.row_slice(i))).collect()),
                0 => {
                    let mut colbuf = vec![0.0; r];
                    let mut out = Vec::with_capacity(c);
                    for j in 0..c {
                        for i in 0..r {
                            colbuf[i] = v.data()[i * c + j];
                        }
                        out.push(f(&colbuf));
                    }
                    Tensor::from_vec(out)
                }
                _ => panic!("{}: axis {} on shape {:?}", op, axis, v.shape()),
            }
        }
        _ => panic!("{}: unsupported shape {:?}", op, v.shape()),
    }
}

/// Slice-wise backward for same-shape slice ops (softmax, log_softmax).
fn backprop_slices(
    y: &Tensor,
    g: &Tensor,
    axis: usize,
    f: impl Fn(&[f64], &[f64], &mut [f64]),
) -> Tensor {
    match y.rank() {
        1 => {
            let mut out = vec![0.0; y.len()];
            f(y.data(), g.data(), &mut out);
            Tensor::from_vec(out)
        }
        2 => {
            let (r, c) = (y.rows(), y.cols());
            let mut out = vec![0.0; r * c];
            match axis {
                1 => {
                    for i in 0..r {
                        f(
                            y.row_slice(i),
                            g.row_slice(i),
                            &mut out[i * c..(i + 1) * c],
                        );
                    }
                }
                0 => {
                    let mut ybuf = vec![0.0; r];
                    let mut gbuf = vec![0.0; r];
                    let mut obuf = vec![0.0; r];
                    for j in 0..c {
                        for i in 0..r {
                            ybuf[i] = y.data()[i * c + j];
                            gbuf[i] = g.data()[i * c + j];
                        }
                        f(&ybuf, &gbuf, &mut obuf);
                        for i in 0..r {
                            out[i * c + j] = obuf[i];
                        }
                    }
                }
                _ => unreachable!(),
            }
            Tensor::new(vec![r, c], out)
        }
        _ => unreachable!(),
    }
}

/// Slice-wise backward for reduce ops (logsumexp): the reduced value and its
/// incoming gradient are scalars per slice.
fn backprop_reduce(
    x: &Tensor,
    y: &Tensor,
    g: &Tensor,
    axis: usize,
    f: impl Fn(&[f64], f64, f64, &mut [f64]),
) -> Tensor {
    match x.rank() {
        1 => {
            let mut out = vec![0.0; x.len()];
            f(x.data(), y.scalar_value(), g.scalar_value(), &mut out);
            Tensor::from_vec(out)
        }
        2 => {
            let (r, c) = (x.rows(), x.cols());
            let mut out = vec![0.0; r * c];
            match axis {
                1 => {
                    for i in 0..r {
                        f(
                            x.row_slice(i),
                            y.data()[i],
                            g.data()[i],
                            &mut out[i * c..(i + 1) * c],
                        );
                    }
                }
                0 => {
                    let mut xbuf = vec![0.0; r];
                    let mut obuf = vec![0.0; r];
                    for j in 0..c {
                        for i in 0..r {
                            xbuf[i] = x.data()[i * c + j];
                        }
                        f(&xbuf, y.data()[j], g.data()[j], &mut obuf);
                        for i in 0..r {
                            out[i * c + j] = obuf[i];
                        }
                    }
                }
                _ => unreachable!(),
            }
            Tensor::new(vec![r, c], out)
        }
        _ => unreachable!(),
    }
}

fn accumulate(g: &mut Tensor, delta: &Tensor) {
    debug_assert_eq!(g.shape(), delta.shape());
    for (x, &d) in g.data_mut().iter_mut().zip(delta.data()) {
        *x += d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![0.0]));
        let y = g.softplus(x);
        assert!((g.value(y).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn logsumexp_of_two_zeros_is_ln2() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let y = g.logsumexp(x, 0);
        assert!((g.value(y).scalar_value() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gaussian_sample_with_zero_noise_is_mean() {
        let mut g = Graph::new();
        let u = g.constant(Tensor::from_vec(vec![1.5, -2.0]));
        let s = g.constant(Tensor::from_vec(vec![0.3, 0.7]));
        let y = g.gaussian_sample(u, s, Tensor::from_vec(vec![0.0, 0.0]));
        assert_eq!(g.value(y).data(), &[1.5, -2.0]);
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 3.0]));
        let s = g.sum(x);
        g.backward(s);
        assert_eq!(g.grad(x).data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_twice_is_identical() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(Tensor::new(vec![2, 2], vec![0.5, 0.5, -1.0, 2.0]));
        let c = g.matmul(a, b);
        let s = g.sum(c);
        g.backward(s);
        let first = g.grad(a);
        g.backward(s);
        assert_eq!(first, g.grad(a));
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]));
        let y = g.softmax(x, 1);
        for r in 0..2 {
            let row = g.value(y).row_slice(r);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn logsumexp_bounds() {
        // max(x) <= logsumexp(x) <= max(x) + ln n.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(77);
        for _ in 0..100 {
            let n = rng.random_range(1..8usize);
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
            let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut g = Graph::new();
            let x = g.constant(Tensor::from_vec(xs));
            let l = g.logsumexp(x, 0);
            let v = g.value(l).scalar_value();
            assert!(v >= m - 1e-12);
            assert!(v <= m + (n as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn unused_parameter_grad_is_zero() {
        use crate::tensor::params::ParamSet;
        let mut ps = ParamSet::new();
        let used = ps.add("used", Tensor::from_vec(vec![1.0, 2.0]));
        let unused = ps.add("unused", Tensor::from_vec(vec![3.0]));
        let mut g = Graph::new();
        let x = g.param(&ps, used);
        let s = g.sum(x);
        g.backward(s);
        let grads = g.param_grads(&ps);
        assert_eq!(grads[used.index()].data(), &[1.0, 1.0]);
        assert_eq!(grads[unused.index()].data(), &[0.0]);
    }

    #[test]
    #[should_panic(expected = "add: shape mismatch")]
    fn shape_mismatch_names_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let b = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let _ = g.add(a, b);
    }

    #[test]
    #[should_panic(expected = "backward: loss must be scalar")]
    fn non_scalar_loss_panics() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(vec![1.0, 2.0]));
        g.backward(a);
    }
}
