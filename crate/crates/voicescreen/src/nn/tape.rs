//! Reverse-mode autodiff over an arena of 2-D nodes.
//!
//! A [`Tape`] owns every intermediate value of one forward build; calling
//! [`Tape::backward`] on a scalar root walks the arena in reverse and returns
//! dense gradients for every node that requires them. Ops are a closed enum,
//! so the backward pass is a plain match with no closures or aliasing issues.

use super::real::{rl, Real};
use super::tensor::{
    self, matmul, matmul_a_bt, matmul_at_b, sigmoid, softplus, Mat,
};

/// Handle to a node in one tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<F> {
    /// Constant or parameter input.
    Leaf,
    /// (t×k)·(k×n).
    MatMul(NodeId, NodeId),
    /// (t×n) + broadcast (1×n).
    AddRow(NodeId, NodeId),
    /// Elementwise sum, same shape.
    Add(NodeId, NodeId),
    /// Scalar multiple.
    Scale(NodeId, f64),
    /// Elementwise Mish.
    Mish(NodeId),
    /// t×n → 1×n column means.
    MeanRows(NodeId),
    /// Elementwise product with a constant (dropout mask).
    MulConst(NodeId, Mat<F>),
    /// Two row vectors side by side.
    Concat(NodeId, NodeId),
    /// Ordinal cross-entropy of a scalar score against per-threshold biases.
    Coral { score: NodeId, biases: NodeId, label: usize },
    /// Population variance of scalar nodes.
    Variance(Vec<NodeId>),
    /// Mean squared error to a constant target.
    MseConst(NodeId, Mat<F>),
    /// 1 − cosine similarity to a constant target.
    CosineConst(NodeId, Mat<F>),
    /// Σ wᵢ·xᵢ over scalar nodes.
    WeightedSum(Vec<(NodeId, f64)>),
}

struct Node<F> {
    value: Mat<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Arena of one forward computation.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

/// Gradients per node id after a backward pass.
pub struct Grads<F> {
    by_node: Vec<Option<Mat<F>>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, id: NodeId) -> Option<&Mat<F>> {
        self.by_node[id.0].as_ref()
    }

    /// Move a gradient out, leaving `None` behind.
    pub fn take(&mut self, id: NodeId) -> Option<Mat<F>> {
        self.by_node[id.0].take()
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat<F> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Mat<F>, op: Op<F>, needs_grad: bool) -> NodeId {
        debug_assert!(value.data.iter().all(|x| x.is_finite()), "non-finite forward value");
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Add an input node. `needs_grad = true` marks a trainable parameter.
    pub fn leaf(&mut self, value: Mat<F>, needs_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, needs_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(self.value(a), self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.rows, 1, "add_row expects a 1×n row");
        assert_eq!(va.cols, vr.cols, "add_row width mismatch");
        let mut out = va.clone();
        for i in 0..out.rows {
            let r0 = &vr.data;
            let orow = &mut out.data[i * out.cols..(i + 1) * out.cols];
            for (o, &b) in orow.iter_mut().zip(r0) {
                *o = *o + b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.same_shape(vb), "add shape mismatch");
        let mut out = va.clone();
        out.add_assign(vb);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let va = self.value(a);
        let cf = rl::<F>(c);
        let out = Mat::from_vec(va.rows, va.cols, va.data.iter().map(|&x| x * cf).collect());
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn mish(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let out = Mat::from_vec(va.rows, va.cols, va.data.iter().map(|&x| tensor::mish(x)).collect());
        let ng = self.needs(a);
        self.push(out, Op::Mish(a), ng)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        assert!(va.rows > 0);
        let scale = rl::<F>(1.0 / va.rows as f64);
        let mut out = vec![F::zero(); va.cols];
        for i in 0..va.rows {
            for (o, &x) in out.iter_mut().zip(va.row(i)) {
                *o = *o + x;
            }
        }
        for o in out.iter_mut() {
            *o = *o * scale;
        }
        let ng = self.needs(a);
        self.push(Mat::from_vec(1, va.cols, out), Op::MeanRows(a), ng)
    }

    pub fn mul_const(&mut self, a: NodeId, mask: Mat<F>) -> NodeId {
        let va = self.value(a);
        assert!(va.same_shape(&mask), "mul_const shape mismatch");
        let out = Mat::from_vec(
            va.rows,
            va.cols,
            va.data.iter().zip(&mask.data).map(|(&x, &m)| x * m).collect(),
        );
        let ng = self.needs(a);
        self.push(out, Op::MulConst(a, mask), ng)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rows, 1, "concat expects row vectors");
        assert_eq!(vb.rows, 1, "concat expects row vectors");
        let mut data = va.data.clone();
        data.extend_from_slice(&vb.data);
        let ng = self.needs(a) || self.needs(b);
        self.push(Mat::from_vec(1, va.cols + vb.cols, data), Op::Concat(a, b), ng)
    }

    /// CORAL ordinal loss: −Σ_{k=1..y} ln σ(s+bₖ) − Σ_{k=y+1..n} ln(1−σ(s+bₖ)),
    /// evaluated as a sum of stabilized softplus terms.
    pub fn coral(&mut self, score: NodeId, biases: NodeId, label: usize) -> NodeId {
        let s = self.value(score);
        let b = self.value(biases);
        assert_eq!(s.len(), 1, "coral score must be scalar");
        assert_eq!(b.rows, 1, "coral biases must be a row");
        assert!(label <= b.cols, "label {} out of range 0..={}", label, b.cols);
        let sv = s.item();
        let mut loss = F::zero();
        for (k, &bk) in b.data.iter().enumerate() {
            let z = sv + bk;
            // Thresholds k+1 ≤ y have target 1 (−ln σ(z) = softplus(−z));
            // the rest have target 0 (−ln(1−σ(z)) = softplus(z)).
            loss = loss + if k < label { softplus(-z) } else { softplus(z) };
        }
        let ng = self.needs(score) || self.needs(biases);
        self.push(Mat::scalar(loss), Op::Coral { score, biases, label }, ng)
    }

    /// Population variance of scalar nodes (÷ count, not count−1).
    pub fn variance(&mut self, scores: &[NodeId]) -> NodeId {
        assert!(scores.len() >= 2, "variance needs at least two scores");
        let vals: Vec<F> = scores
            .iter()
            .map(|&id| {
                let v = self.value(id);
                assert_eq!(v.len(), 1, "variance inputs must be scalars");
                v.item()
            })
            .collect();
        let n = rl::<F>(vals.len() as f64);
        let mean = vals.iter().fold(F::zero(), |a, &b| a + b) / n;
        let var = vals.iter().fold(F::zero(), |a, &b| a + (b - mean) * (b - mean)) / n;
        let ng = scores.iter().any(|&id| self.needs(id));
        self.push(Mat::scalar(var), Op::Variance(scores.to_vec()), ng)
    }

    /// Mean squared error of a row vector against a constant target.
    pub fn mse_const(&mut self, a: NodeId, target: Mat<F>) -> NodeId {
        let va = self.value(a);
        assert!(va.same_shape(&target), "mse_const shape mismatch");
        let n = rl::<F>(va.len() as f64);
        let sum = va
            .data
            .iter()
            .zip(&target.data)
            .fold(F::zero(), |acc, (&x, &t)| acc + (x - t) * (x - t));
        let ng = self.needs(a);
        self.push(Mat::scalar(sum / n), Op::MseConst(a, target), ng)
    }

    /// 1 − cosine similarity against a constant target.
    pub fn cosine_const(&mut self, a: NodeId, target: Mat<F>) -> NodeId {
        let va = self.value(a);
        assert!(va.same_shape(&target), "cosine_const shape mismatch");
        let nx = tensor::dot(&va.data, &va.data).sqrt();
        let nt = tensor::dot(&target.data, &target.data).sqrt();
        assert!(
            nx > F::zero() && nt > F::zero(),
            "cosine similarity undefined for zero vectors"
        );
        let cosv = tensor::dot(&va.data, &target.data) / (nx * nt);
        let ng = self.needs(a);
        self.push(Mat::scalar(F::one() - cosv), Op::CosineConst(a, target), ng)
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        assert!(!terms.is_empty());
        let mut total = F::zero();
        for &(id, w) in terms {
            let v = self.value(id);
            assert_eq!(v.len(), 1, "weighted_sum inputs must be scalars");
            total = total + v.item() * rl::<F>(w);
        }
        let ng = terms.iter().any(|&(id, _)| self.needs(id));
        self.push(Mat::scalar(total), Op::WeightedSum(terms.to_vec()), ng)
    }

    /// Reverse pass from a scalar root. Returns gradients for every node
    /// with `needs_grad` on the path.
    pub fn backward(&self, root: NodeId) -> Grads<F> {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut by_node: Vec<Option<Mat<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        by_node[root.0] = Some(Mat::scalar(F::one()));

        for idx in (0..=root.0).rev() {
            let Some(g) = by_node[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                by_node[idx] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let da = matmul_a_bt(&g, self.value(*b));
                        accumulate(&mut by_node, *a, da);
                    }
                    if self.needs(*b) {
                        let db = matmul_at_b(self.value(*a), &g);
                        accumulate(&mut by_node, *b, db);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let mut dr = Mat::zeros(1, g.cols);
                        for i in 0..g.rows {
                            for (d, &x) in dr.data.iter_mut().zip(g.row(i)) {
                                *d = *d + x;
                            }
                        }
                        accumulate(&mut by_node, *row, dr);
                    }
                    if self.needs(*a) {
                        accumulate(&mut by_node, *a, g.clone());
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut by_node, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut by_node, *b, g.clone());
                    }
                }
                Op::Scale(a, c) => {
                    if self.needs(*a) {
                        let cf = rl::<F>(*c);
                        let da =
                            Mat::from_vec(g.rows, g.cols, g.data.iter().map(|&x| x * cf).collect());
                        accumulate(&mut by_node, *a, da);
                    }
                }
                Op::Mish(a) => {
                    if self.needs(*a) {
                        let va = self.value(*a);
                        let da = Mat::from_vec(
                            g.rows,
                            g.cols,
                            g.data
                                .iter()
                                .zip(&va.data)
                                .map(|(&gx, &x)| gx * tensor::mish_grad(x))
                                .collect(),
                        );
                        accumulate(&mut by_node, *a, da);
                    }
                }
                Op::MeanRows(a) => {
                    if self.needs(*a) {
                        let va = self.value(*a);
                        let scale = rl::<F>(1.0 / va.rows as f64);
                        let mut da = Mat::zeros(va.rows, va.cols);
                        for i in 0..va.rows {
                            let drow = &mut da.data[i * va.cols..(i + 1) * va.cols];
                            for (d, &gx) in drow.iter_mut().zip(&g.data) {
                                *d = gx * scale;
                            }
                        }
                        accumulate(&mut by_node, *a, da);
                    }
                }
                Op::MulConst(a, mask) => {
                    if self.needs(*a) {
                        let da = Mat::from_vec(
                            g.rows,
                            g.cols,
                            g.data.iter().zip(&mask.data).map(|(&gx, &m)| gx * m).collect(),
                        );
                        accumulate(&mut by_node, *a, da);
                    }
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).cols;
                    if self.needs(*a) {
                        let da = Mat::from_vec(1, ca, g.data[..ca].to_vec());
                        accumulate(&mut by_node, *a, da);
                    }
                    if self.needs(*b) {
                        let db = Mat::from_vec(1, g.cols - ca, g.data[ca..].to_vec());
                        accumulate(&mut by_node, *b, db);
                    }
                }
                Op::Coral { score, biases, label } => {
                    let gs = g.item();
                    let s = self.value(*score).item();
                    let b = self.value(*biases);
                    let mut ds = F::zero();
                    let mut db = Mat::zeros(1, b.cols);
                    for (k, &bk) in b.data.iter().enumerate() {
                        let z = s + bk;
                        // d softplus(z)/dz = σ(z); d softplus(−z)/dz = σ(z) − 1.
                        let dz = if k < *label { sigmoid(z) - F::one() } else { sigmoid(z) };
                        ds = ds + dz;
                        db.data[k] = gs * dz;
                    }
                    if self.needs(*score) {
                        accumulate(&mut by_node, *score, Mat::scalar(gs * ds));
                    }
                    if self.needs(*biases) {
                        accumulate(&mut by_node, *biases, db);
                    }
                }
                Op::Variance(ids) => {
                    let gs = g.item();
                    let n = rl::<F>(ids.len() as f64);
                    let vals: Vec<F> = ids.iter().map(|&id| self.value(id).item()).collect();
                    let mean = vals.iter().fold(F::zero(), |a, &b| a + b) / n;
                    let two = rl::<F>(2.0);
                    for (&id, &v) in ids.iter().zip(&vals) {
                        if self.needs(id) {
                            let d = gs * two * (v - mean) / n;
                            accumulate(&mut by_node, id, Mat::scalar(d));
                        }
                    }
                }
                Op::MseConst(a, target) => {
                    if self.needs(*a) {
                        let gs = g.item();
                        let va = self.value(*a);
                        let scale = rl::<F>(2.0 / va.len() as f64);
                        let da = Mat::from_vec(
                            va.rows,
                            va.cols,
                            va.data
                                .iter()
                                .zip(&target.data)
                                .map(|(&x, &t)| gs * scale * (x - t))
                                .collect(),
                        );
                        accumulate(&mut by_node, *a, da);
                    }
                }
                Op::CosineConst(a, target) => {
                    if self.needs(*a) {
                        let gs = g.item();
                        let va = self.value(*a);
                        let nx = tensor::dot(&va.data, &va.data).sqrt();
                        let nt = tensor::dot(&target.data, &target.data).sqrt();
                        let cosv = tensor::dot(&va.data, &target.data) / (nx * nt);
                        // d(1 − cos)/dx = cos·x/|x|² − t/(|x||t|).
                        let da = Mat::from_vec(
                            va.rows,
                            va.cols,
                            va.data
                                .iter()
                                .zip(&target.data)
                                .map(|(&x, &t)| gs * (cosv * x / (nx * nx) - t / (nx * nt)))
                                .collect(),
                        );
                        accumulate(&mut by_node, *a, da);
                    }
                }
                Op::WeightedSum(terms) => {
                    let gs = g.item();
                    for &(id, w) in terms {
                        if self.needs(id) {
                            accumulate(&mut by_node, id, Mat::scalar(gs * rl::<F>(w)));
                        }
                    }
                }
            }
            by_node[idx] = Some(g);
        }

        // Drop gradients of nodes that never asked for them.
        for (i, slot) in by_node.iter_mut().enumerate() {
            if !self.nodes[i].needs_grad {
                *slot = None;
            }
        }
        Grads { by_node }
    }
}

fn accumulate<F: Real>(slots: &mut [Option<Mat<F>>], id: NodeId, delta: Mat<F>) {
    match &mut slots[id.0] {
        Some(existing) => existing.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}
