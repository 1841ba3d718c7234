//! Reverse-mode autodiff over a flat operation tape.
//!
//! Every value is a dense row-major matrix; column vectors are `(n, 1)`.
//! Forward calls record one node per operation, so nodes are already in
//! topological order and `backward` is a single reverse sweep. A parameter
//! used several times gets several leaf nodes; their gradients sum when the
//! tape is drained into a [`GradBatch`](super::GradBatch) or a
//! [`ParameterStore`](super::ParameterStore).
//!
//! Shape violations are programming errors and panic with a message naming
//! both shapes, like the rest of the dense-linear-algebra ecosystem.

use rand::Rng;

use super::params::{ParamId, ParameterStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Where a leaf node's gradient belongs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafSource {
    /// Plain input; gradient is computed but not propagated anywhere.
    Constant,
    /// A whole parameter array.
    Param(ParamId),
    /// One row of a parameter array (embedding lookup).
    ParamRow { param: ParamId, row: usize },
}

enum Op {
    Leaf(LeafSource),
    MatVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Dot(NodeId, NodeId),
    WeightedSum { weights: NodeId, items: Vec<NodeId> },
    Dropout { input: NodeId, mask: Vec<f64> },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `(1, 1)` node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let node = &self.nodes[id.0];
        assert!(
            node.rows * node.cols == 1,
            "scalar_value on a {}x{} node",
            node.rows,
            node.cols
        );
        node.value[0]
    }

    /// Gradient of the last `backward` loss w.r.t. this node.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).map(|g| g.as_slice())
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// Column-vector constant.
    pub fn constant(&mut self, values: Vec<f64>) -> NodeId {
        let rows = values.len();
        self.push(rows, 1, values, Op::Leaf(LeafSource::Constant))
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(1, 1, vec![v], Op::Leaf(LeafSource::Constant))
    }

    /// Loads a full parameter array as a leaf.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> NodeId {
        let p = store.get(id);
        self.push(
            p.rows,
            p.cols,
            p.values.clone(),
            Op::Leaf(LeafSource::Param(id)),
        )
    }

    /// Loads one row of a parameter array as a column vector (embedding lookup).
    pub fn param_row(&mut self, store: &ParameterStore, id: ParamId, row: usize) -> NodeId {
        let p = store.get(id);
        assert!(
            row < p.rows,
            "row {} out of range for parameter `{}` ({}x{})",
            row,
            p.name,
            p.rows,
            p.cols
        );
        let values = p.values[row * p.cols..(row + 1) * p.cols].to_vec();
        self.push(
            p.cols,
            1,
            values,
            Op::Leaf(LeafSource::ParamRow { param: id, row }),
        )
    }

    /// Matrix-vector product: `(r, c) . (c, 1) -> (r, 1)`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let (wr, wc) = self.shape(w);
        let (xr, xc) = self.shape(x);
        assert!(
            xc == 1 && wc == xr,
            "matvec dimension mismatch: lhs {}x{}, rhs {}x{}",
            wr,
            wc,
            xr,
            xc
        );
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        let mut out = vec![0.0; wr];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wv[i * wc..(i + 1) * wc];
            *o = row.iter().zip(xv).map(|(a, b)| a * b).sum();
        }
        self.push(wr, 1, out, Op::MatVec(w, x))
    }

    /// Elementwise addition of same-shape nodes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert!(
            ar == br && ac == bc,
            "add dimension mismatch: lhs {}x{}, rhs {}x{}",
            ar,
            ac,
            br,
            bc
        );
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(ar, ac, out, Op::Add(a, b))
    }

    /// Concatenation of column vectors into one column vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of zero nodes");
        let mut out = Vec::new();
        for &p in parts {
            let (_, c) = self.shape(p);
            assert!(c == 1, "concat expects column vectors, got {}x{}", self.shape(p).0, c);
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let rows = out.len();
        self.push(rows, 1, out, Op::Concat(parts.to_vec()))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.max(0.0)).collect();
        self.push(r, c, out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.tanh()).collect();
        self.push(r, c, out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let out: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.push(r, c, out, Op::Sigmoid(x))
    }

    /// Max-shifted softmax over a column vector.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        assert!(c == 1, "softmax expects a column vector, got {}x{}", r, c);
        let xs = &self.nodes[x.0].value;
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xs.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let out: Vec<f64> = exps.iter().map(|e| e / total).collect();
        self.push(r, 1, out, Op::Softmax(x))
    }

    /// Elementwise product. One side may be a scalar, which broadcasts.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let a_scalar = ar * ac == 1;
        let b_scalar = br * bc == 1;
        assert!(
            (ar == br && ac == bc) || a_scalar || b_scalar,
            "mul dimension mismatch: lhs {}x{}, rhs {}x{}",
            ar,
            ac,
            br,
            bc
        );
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let (rows, cols, out) = if a_scalar && !b_scalar {
            (br, bc, bv.iter().map(|y| av[0] * y).collect())
        } else if b_scalar && !a_scalar {
            (ar, ac, av.iter().map(|x| x * bv[0]).collect())
        } else {
            (ar, ac, av.iter().zip(bv).map(|(x, y)| x * y).collect())
        };
        self.push(rows, cols, out, Op::Mul(a, b))
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let (r, cl) = self.shape(x);
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v * c).collect();
        self.push(r, cl, out, Op::Scale(x, c))
    }

    /// Sum-reduce to a scalar.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.nodes[x.0].value.iter().sum();
        self.push(1, 1, vec![total], Op::Sum(x))
    }

    /// Inner product of two same-length column vectors.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert!(
            ac == 1 && bc == 1 && ar == br,
            "dot dimension mismatch: lhs {}x{}, rhs {}x{}",
            ar,
            ac,
            br,
            bc
        );
        let total: f64 = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .sum();
        self.push(1, 1, vec![total], Op::Dot(a, b))
    }

    /// `sum_k weights[k] * items[k]` for same-shape vector items.
    pub fn weighted_sum(&mut self, weights: NodeId, items: &[NodeId]) -> NodeId {
        let (wr, wc) = self.shape(weights);
        assert!(
            wc == 1 && wr == items.len(),
            "weighted_sum dimension mismatch: {} weights ({}x{}) for {} items",
            wr,
            wr,
            wc,
            items.len()
        );
        let (ir, ic) = self.shape(items[0]);
        let mut out = vec![0.0; ir * ic];
        for (k, &item) in items.iter().enumerate() {
            let (r, c) = self.shape(item);
            assert!(
                r == ir && c == ic,
                "weighted_sum item dimension mismatch: {}x{} vs {}x{}",
                r,
                c,
                ir,
                ic
            );
            let w = self.nodes[weights.0].value[k];
            for (o, v) in out.iter_mut().zip(&self.nodes[item.0].value) {
                *o += w * v;
            }
        }
        self.push(
            ir,
            ic,
            out,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        )
    }

    /// Inverted dropout: during training kept units are scaled by
    /// `1 / (1 - rate)` so the expected value is unchanged; outside
    /// training this is the identity.
    pub fn dropout<R: Rng>(
        &mut self,
        x: NodeId,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> NodeId {
        assert!(
            (0.0..1.0).contains(&rate),
            "dropout rate {} outside [0, 1)",
            rate
        );
        let (r, c) = self.shape(x);
        if !training || rate == 0.0 {
            let value = self.nodes[x.0].value.clone();
            let mask = vec![1.0; r * c];
            return self.push(r, c, value, Op::Dropout { input: x, mask });
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let value: Vec<f64> = self.nodes[x.0]
            .value
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        self.push(r, c, value, Op::Dropout { input: x, mask })
    }

    /// Reverse sweep from a scalar loss node. Populates gradients for every
    /// node recorded so far; parameters used more than once accumulate.
    pub fn backward(&mut self, loss: NodeId) -> crate::Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(crate::Error::State(format!(
                "backward before forward: node {} was never recorded",
                loss.0
            )));
        }
        let loss_node = &self.nodes[loss.0];
        if loss_node.rows * loss_node.cols != 1 {
            return Err(crate::Error::State(format!(
                "backward expects a scalar loss, got a {}x{} node",
                loss_node.rows, loss_node.cols
            )));
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.rows * n.cols])
            .collect();
        self.grads[loss.0][0] = 1.0;

        // The tape is append-only, so node indices are already a topological
        // order; one reverse sweep visits every node after all its consumers.
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for idx in (0..=loss.0).rev() {
            let g = std::mem::take(&mut grads[idx]);
            if g.iter().all(|&v| v == 0.0) {
                grads[idx] = g;
                continue;
            }
            match &nodes[idx].op {
                Op::Leaf(_) => {}
                Op::MatVec(w, x) => {
                    let (wr, wc) = (nodes[w.0].rows, nodes[w.0].cols);
                    let xv = &nodes[x.0].value;
                    let wv = &nodes[w.0].value;
                    {
                        let gw = &mut grads[w.0];
                        for i in 0..wr {
                            let row = &mut gw[i * wc..(i + 1) * wc];
                            for (dst, xj) in row.iter_mut().zip(xv) {
                                *dst += g[i] * xj;
                            }
                        }
                    }
                    let gx = &mut grads[x.0];
                    for (i, gi) in g.iter().enumerate() {
                        let row = &wv[i * wc..(i + 1) * wc];
                        for (dst, wij) in gx.iter_mut().zip(row) {
                            *dst += wij * gi;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (ga, gi) in grads[a.0].iter_mut().zip(&g) {
                        *ga += gi;
                    }
                    for (gb, gi) in grads[b.0].iter_mut().zip(&g) {
                        *gb += gi;
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = grads[p.0].len();
                        for (gp, gi) in grads[p.0].iter_mut().zip(&g[offset..offset + len]) {
                            *gp += gi;
                        }
                        offset += len;
                    }
                }
                Op::Relu(x) => {
                    let xv = &nodes[x.0].value;
                    for ((gx, gi), v) in grads[x.0].iter_mut().zip(&g).zip(xv) {
                        if *v > 0.0 {
                            *gx += gi;
                        }
                    }
                }
                Op::Tanh(x) => {
                    let yv = &nodes[idx].value;
                    for ((gx, gi), y) in grads[x.0].iter_mut().zip(&g).zip(yv) {
                        *gx += gi * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(x) => {
                    let yv = &nodes[idx].value;
                    for ((gx, gi), y) in grads[x.0].iter_mut().zip(&g).zip(yv) {
                        *gx += gi * y * (1.0 - y);
                    }
                }
                Op::Softmax(x) => {
                    let yv = &nodes[idx].value;
                    let inner: f64 = g.iter().zip(yv).map(|(gi, yi)| gi * yi).sum();
                    for ((gx, gi), y) in grads[x.0].iter_mut().zip(&g).zip(yv) {
                        *gx += y * (gi - inner);
                    }
                }
                Op::Mul(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    let a_scalar = av.len() == 1 && bv.len() != 1;
                    let b_scalar = bv.len() == 1 && av.len() != 1;
                    if a_scalar {
                        let acc: f64 = g.iter().zip(bv).map(|(gi, y)| gi * y).sum();
                        grads[a.0][0] += acc;
                        for (gb, gi) in grads[b.0].iter_mut().zip(&g) {
                            *gb += gi * av[0];
                        }
                    } else if b_scalar {
                        let acc: f64 = g.iter().zip(av).map(|(gi, x)| gi * x).sum();
                        grads[b.0][0] += acc;
                        for (ga, gi) in grads[a.0].iter_mut().zip(&g) {
                            *ga += gi * bv[0];
                        }
                    } else {
                        for ((ga, gi), y) in grads[a.0].iter_mut().zip(&g).zip(bv) {
                            *ga += gi * y;
                        }
                        for ((gb, gi), x) in grads[b.0].iter_mut().zip(&g).zip(av) {
                            *gb += gi * x;
                        }
                    }
                }
                Op::Scale(x, c) => {
                    for (gx, gi) in grads[x.0].iter_mut().zip(&g) {
                        *gx += gi * c;
                    }
                }
                Op::Sum(x) => {
                    for gx in grads[x.0].iter_mut() {
                        *gx += g[0];
                    }
                }
                Op::Dot(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    for (ga, y) in grads[a.0].iter_mut().zip(bv) {
                        *ga += g[0] * y;
                    }
                    for (gb, x) in grads[b.0].iter_mut().zip(av) {
                        *gb += g[0] * x;
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let wv = &nodes[weights.0].value;
                    for (k, item) in items.iter().enumerate() {
                        let iv = &nodes[item.0].value;
                        let acc: f64 = g.iter().zip(iv).map(|(gi, v)| gi * v).sum();
                        grads[weights.0][k] += acc;
                        for (gitem, gi) in grads[item.0].iter_mut().zip(&g) {
                            *gitem += gi * wv[k];
                        }
                    }
                }
                Op::Dropout { input, mask } => {
                    for ((gx, gi), m) in grads[input.0].iter_mut().zip(&g).zip(mask) {
                        *gx += gi * m;
                    }
                }
            }
            grads[idx] = g;
        }
        Ok(())
    }

    /// Drains leaf gradients into a caller-held accumulator.
    pub fn for_each_leaf_grad(&self, mut f: impl FnMut(LeafSource, &[f64])) {
        assert!(
            !self.grads.is_empty(),
            "leaf gradients requested before backward"
        );
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let Op::Leaf(source) = node.op {
                if !matches!(source, LeafSource::Constant) {
                    f(source, grad);
                }
            }
        }
    }

    /// Adds this tape's parameter gradients straight into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParameterStore) {
        self.for_each_leaf_grad(|source, grad| match source {
            LeafSource::Param(id) => store.add_grad(id, grad),
            LeafSource::ParamRow { param, row } => store.add_row_grad(param, row, grad),
            LeafSource::Constant => {}
        });
    }
}
