//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Tape`] is an append-only arena of tensors; every operation records the
//! producing op and its parents on the tensor it creates. [`Tape::backward`]
//! replays the arena in strict reverse append order exactly once,
//! accumulating gradients additively into every parent. Tapes are rebuilt per
//! training step (define-by-run) and never shared mutably across threads.

use thiserror::Error;

use crate::scalar::Scalar;

/// Handle to a tensor on a tape. Only valid for the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Rows below this Euclidean norm are normalized by the guard value itself,
/// and receive zero gradient through `row_l2_normalize`.
pub const NORM_EPS: f64 = 1e-12;

const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs_rows}x{lhs_cols} and {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("backward requires a 1x1 loss tensor, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("gather_rows: row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
}

#[derive(Debug, Clone)]
enum Node<S> {
    Matmul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    AddRow { m: TensorId, row: TensorId },
    Scale { x: TensorId, factor: S },
    Transpose { x: TensorId },
    RowL2Normalize { x: TensorId },
    LogSoftmaxRows { x: TensorId },
    Relu { x: TensorId },
    Gelu { x: TensorId },
    LayernormRows { x: TensorId },
    MeanAll { x: TensorId },
    SumAll { x: TensorId },
    FrobeniusSqDiff { a: TensorId, b: TensorId },
    GatherRows { x: TensorId, rows: Vec<usize> },
    KlRows { p_log: TensorId, q_log: TensorId },
}

struct Entry<S> {
    rows: usize,
    cols: usize,
    values: Vec<S>,
    node: Option<Node<S>>,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, addressed by [`TensorId`].
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss w.r.t. the given tensor, if any flowed to it.
    pub fn get(&self, id: TensorId) -> Option<&[S]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

/// Append-only computation tape over dense row-major 2-D tensors.
pub struct Tape<S> {
    entries: Vec<Entry<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<S>, node: Option<Node<S>>) -> TensorId {
        assert_eq!(values.len(), rows * cols, "value buffer does not match shape");
        // An op output needs gradient tracking as soon as any parent does.
        let requires_grad = match &node {
            None => false,
            Some(n) => self.parents(n).iter().any(|p| self.entries[p.0].requires_grad),
        };
        self.entries.push(Entry { rows, cols, values, node, requires_grad });
        TensorId(self.entries.len() - 1)
    }

    fn parents(&self, node: &Node<S>) -> Vec<TensorId> {
        match node {
            Node::Matmul { a, b }
            | Node::Add { a, b }
            | Node::Sub { a, b }
            | Node::Mul { a, b }
            | Node::FrobeniusSqDiff { a, b } => vec![*a, *b],
            Node::AddRow { m, row } => vec![*m, *row],
            Node::KlRows { p_log, q_log } => vec![*p_log, *q_log],
            Node::Scale { x, .. }
            | Node::Transpose { x }
            | Node::RowL2Normalize { x }
            | Node::LogSoftmaxRows { x }
            | Node::Relu { x }
            | Node::Gelu { x }
            | Node::LayernormRows { x }
            | Node::MeanAll { x }
            | Node::SumAll { x }
            | Node::GatherRows { x, .. } => vec![*x],
        }
    }

    /// Leaf tensor that does not receive a gradient.
    pub fn input(&mut self, rows: usize, cols: usize, values: Vec<S>) -> TensorId {
        self.push(rows, cols, values, None)
    }

    /// Leaf tensor that is guaranteed a gradient after `backward`.
    pub fn param(&mut self, rows: usize, cols: usize, values: Vec<S>) -> TensorId {
        let id = self.push(rows, cols, values, None);
        self.entries[id.0].requires_grad = true;
        id
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let e = &self.entries[id.0];
        (e.rows, e.cols)
    }

    pub fn values(&self, id: TensorId) -> &[S] {
        &self.entries[id.0].values
    }

    /// Value of a 1x1 tensor.
    pub fn scalar_value(&self, id: TensorId) -> S {
        let e = &self.entries[id.0];
        assert_eq!((e.rows, e.cols), (1, 1), "scalar_value on non-scalar tensor");
        e.values[0]
    }

    /// True for tensors with no producing op (inputs, params, stop_gradient outputs).
    pub fn is_leaf(&self, id: TensorId) -> bool {
        self.entries[id.0].node.is_none()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.entries[id.0].requires_grad
    }

    // ---- operations ----

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs_rows: m,
                lhs_cols: ka,
                rhs_rows: kb,
                rhs_cols: n,
            });
        }
        let mut out = vec![S::zero(); m * n];
        mm_nn(self.values(a), self.values(b), &mut out, m, ka, n);
        Ok(self.push(m, n, out, Some(Node::Matmul { a, b })))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_same_shape("add", a, b, |x, y| x + y, Node::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_same_shape("sub", a, b, |x, y| x - y, Node::Sub { a, b })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.zip_same_shape("mul", a, b, |x, y| x * y, Node::Mul { a, b })
    }

    fn zip_same_shape(
        &mut self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(S, S) -> S,
        node: Node<S>,
    ) -> Result<TensorId, TensorError> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if (ra, ca) != (rb, cb) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs_rows: ra,
                lhs_cols: ca,
                rhs_rows: rb,
                rhs_cols: cb,
            });
        }
        let out: Vec<S> = self
            .values(a)
            .iter()
            .zip(self.values(b).iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(ra, ca, out, Some(node)))
    }

    /// Adds a 1xN row vector to every row of an MxN matrix.
    pub fn add_row(&mut self, m: TensorId, row: TensorId) -> Result<TensorId, TensorError> {
        let (rm, cm) = self.shape(m);
        let (rr, cr) = self.shape(row);
        if rr != 1 || cr != cm {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs_rows: rm,
                lhs_cols: cm,
                rhs_rows: rr,
                rhs_cols: cr,
            });
        }
        let rowv = self.values(row).to_vec();
        let out: Vec<S> = self
            .values(m)
            .chunks(cm)
            .flat_map(|r| r.iter().zip(rowv.iter()).map(|(&x, &y)| x + y))
            .collect();
        Ok(self.push(rm, cm, out, Some(Node::AddRow { m, row })))
    }

    pub fn scale(&mut self, x: TensorId, factor: S) -> TensorId {
        let (r, c) = self.shape(x);
        let out: Vec<S> = self.values(x).iter().map(|&v| v * factor).collect();
        self.push(r, c, out, Some(Node::Scale { x, factor }))
    }

    pub fn transpose(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        let xv = self.values(x);
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        self.push(c, r, out, Some(Node::Transpose { x }))
    }

    /// Normalizes each row to unit Euclidean norm. Rows with norm below
    /// [`NORM_EPS`] are divided by the guard value and pass no gradient.
    pub fn row_l2_normalize(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        let eps = S::from_f64_c(NORM_EPS);
        let mut out = Vec::with_capacity(r * c);
        for row in self.values(x).chunks(c) {
            let norm = row.iter().map(|&v| v * v).sum::<S>().sqrt();
            let denom = if norm < eps { eps } else { norm };
            out.extend(row.iter().map(|&v| v / denom));
        }
        self.push(r, c, out, Some(Node::RowL2Normalize { x }))
    }

    /// Per-row log-softmax, stabilized by max subtraction.
    pub fn log_softmax_rows(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        let mut out = Vec::with_capacity(r * c);
        for row in self.values(x).chunks(c) {
            let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<S>().ln() + max;
            out.extend(row.iter().map(|&v| v - lse));
        }
        self.push(r, c, out, Some(Node::LogSoftmaxRows { x }))
    }

    /// Identity on values; blocks all gradient flow to ancestors.
    pub fn stop_gradient(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        let values = self.values(x).to_vec();
        self.push(r, c, values, None)
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        let out: Vec<S> = self.values(x).iter().map(|&v| v.max(S::zero())).collect();
        self.push(r, c, out, Some(Node::Relu { x }))
    }

    /// GELU via the tanh approximation.
    pub fn gelu(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        let out: Vec<S> = self.values(x).iter().map(|&v| gelu_value(v)).collect();
        self.push(r, c, out, Some(Node::Gelu { x }))
    }

    /// Per-row standardization: (x - mean) / sqrt(var + eps), no affine terms.
    pub fn layernorm_rows(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        let n = S::from_f64_c(c as f64);
        let eps = S::from_f64_c(LAYERNORM_EPS);
        let mut out = Vec::with_capacity(r * c);
        for row in self.values(x).chunks(c) {
            let mean = row.iter().cloned().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let sigma = (var + eps).sqrt();
            out.extend(row.iter().map(|&v| (v - mean) / sigma));
        }
        self.push(r, c, out, Some(Node::LayernormRows { x }))
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        let n = S::from_f64_c((r * c) as f64);
        let v = self.values(x).iter().cloned().sum::<S>() / n;
        self.push(1, 1, vec![v], Some(Node::MeanAll { x }))
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let v = self.values(x).iter().cloned().sum::<S>();
        self.push(1, 1, vec![v], Some(Node::SumAll { x }))
    }

    /// Sum of squared entrywise differences.
    pub fn frobenius_sq_diff(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if (ra, ca) != (rb, cb) {
            return Err(TensorError::ShapeMismatch {
                op: "frobenius_sq_diff",
                lhs_rows: ra,
                lhs_cols: ca,
                rhs_rows: rb,
                rhs_cols: cb,
            });
        }
        let v = self
            .values(a)
            .iter()
            .zip(self.values(b).iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<S>();
        Ok(self.push(1, 1, vec![v], Some(Node::FrobeniusSqDiff { a, b })))
    }

    /// Selects rows by index; repeated indices accumulate their gradients.
    pub fn gather_rows(&mut self, x: TensorId, rows: &[usize]) -> Result<TensorId, TensorError> {
        let (r, c) = self.shape(x);
        for &idx in rows {
            if idx >= r {
                return Err(TensorError::RowOutOfRange { index: idx, rows: r });
            }
        }
        let xv = self.values(x);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &idx in rows {
            out.extend_from_slice(&xv[idx * c..(idx + 1) * c]);
        }
        Ok(self.push(rows.len(), c, out, Some(Node::GatherRows { x, rows: rows.to_vec() })))
    }

    /// Mean over rows of KL(p || q), with both arguments given in log space.
    pub fn kl_rows(&mut self, p_log: TensorId, q_log: TensorId) -> Result<TensorId, TensorError> {
        let (rp, cp) = self.shape(p_log);
        let (rq, cq) = self.shape(q_log);
        if (rp, cp) != (rq, cq) {
            return Err(TensorError::ShapeMismatch {
                op: "kl_rows",
                lhs_rows: rp,
                lhs_cols: cp,
                rhs_rows: rq,
                rhs_cols: cq,
            });
        }
        let m = S::from_f64_c(rp as f64);
        let v = self
            .values(p_log)
            .iter()
            .zip(self.values(q_log).iter())
            .map(|(&p, &q)| p.exp() * (p - q))
            .sum::<S>()
            / m;
        Ok(self.push(1, 1, vec![v], Some(Node::KlRows { p_log, q_log })))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Every tensor created with
    /// [`Tape::param`] is guaranteed a gradient buffer (zeros if unreachable).
    pub fn backward(&self, loss: TensorId) -> Result<Gradients<S>, TensorError> {
        let (lr, lc) = self.shape(loss);
        if (lr, lc) != (1, 1) {
            return Err(TensorError::NonScalarLoss { rows: lr, cols: lc });
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.entries.len()];
        grads[loss.0] = Some(vec![S::one()]);

        for id in (0..=loss.0).rev() {
            let Some(node) = self.entries[id].node.clone() else { continue };
            let Some(g) = grads[id].clone() else { continue };
            self.backward_node(&node, &g, &mut grads);
        }

        for (id, e) in self.entries.iter().enumerate() {
            if e.requires_grad && grads[id].is_none() {
                grads[id] = Some(vec![S::zero(); e.rows * e.cols]);
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        match node {
            Node::Matmul { a, b } => {
                let (m, k) = self.shape(*a);
                let (_, n) = self.shape(*b);
                // dA = g . B^T, dB = A^T . g
                let mut da = vec![S::zero(); m * k];
                mm_nt(g, self.values(*b), &mut da, m, n, k);
                accumulate(grads, *a, &da);
                let mut db = vec![S::zero(); k * n];
                mm_tn(self.values(*a), g, &mut db, m, k, n);
                accumulate(grads, *b, &db);
            }
            Node::Add { a, b } => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Node::Sub { a, b } => {
                accumulate(grads, *a, g);
                let neg: Vec<S> = g.iter().map(|&v| -v).collect();
                accumulate(grads, *b, &neg);
            }
            Node::Mul { a, b } => {
                let da: Vec<S> = g.iter().zip(self.values(*b)).map(|(&gv, &bv)| gv * bv).collect();
                accumulate(grads, *a, &da);
                let db: Vec<S> = g.iter().zip(self.values(*a)).map(|(&gv, &av)| gv * av).collect();
                accumulate(grads, *b, &db);
            }
            Node::AddRow { m, row } => {
                accumulate(grads, *m, g);
                let (_, c) = self.shape(*row);
                let mut drow = vec![S::zero(); c];
                for chunk in g.chunks(c) {
                    for (d, &gv) in drow.iter_mut().zip(chunk) {
                        *d += gv;
                    }
                }
                accumulate(grads, *row, &drow);
            }
            Node::Scale { x, factor } => {
                let dx: Vec<S> = g.iter().map(|&gv| gv * *factor).collect();
                accumulate(grads, *x, &dx);
            }
            Node::Transpose { x } => {
                let (r, c) = self.shape(*x);
                // g has shape c x r
                let mut dx = vec![S::zero(); r * c];
                for i in 0..c {
                    for j in 0..r {
                        dx[j * c + i] = g[i * r + j];
                    }
                }
                accumulate(grads, *x, &dx);
            }
            Node::RowL2Normalize { x } => {
                let (r, c) = self.shape(*x);
                let eps = S::from_f64_c(NORM_EPS);
                let xv = self.values(*x);
                let mut dx = vec![S::zero(); r * c];
                for i in 0..r {
                    let row = &xv[i * c..(i + 1) * c];
                    let norm = row.iter().map(|&v| v * v).sum::<S>().sqrt();
                    if norm < eps {
                        continue; // guarded row: zero gradient by contract
                    }
                    let grow = &g[i * c..(i + 1) * c];
                    let y: Vec<S> = row.iter().map(|&v| v / norm).collect();
                    let dot = grow.iter().zip(y.iter()).map(|(&gv, &yv)| gv * yv).sum::<S>();
                    for j in 0..c {
                        dx[i * c + j] = (grow[j] - dot * y[j]) / norm;
                    }
                }
                accumulate(grads, *x, &dx);
            }
            Node::LogSoftmaxRows { x } => {
                let (r, c) = self.shape(*x);
                let xv = self.values(*x);
                let mut dx = vec![S::zero(); r * c];
                for i in 0..r {
                    let row = &xv[i * c..(i + 1) * c];
                    let grow = &g[i * c..(i + 1) * c];
                    let gsum = grow.iter().cloned().sum::<S>();
                    let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
                    let lse = row.iter().map(|&v| (v - max).exp()).sum::<S>().ln() + max;
                    for j in 0..c {
                        let p = (row[j] - lse).exp();
                        dx[i * c + j] = grow[j] - p * gsum;
                    }
                }
                accumulate(grads, *x, &dx);
            }
            Node::Relu { x } => {
                let dx: Vec<S> = g
                    .iter()
                    .zip(self.values(*x))
                    .map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() })
                    .collect();
                accumulate(grads, *x, &dx);
            }
            Node::Gelu { x } => {
                let dx: Vec<S> = g
                    .iter()
                    .zip(self.values(*x))
                    .map(|(&gv, &xv)| gv * gelu_derivative(xv))
                    .collect();
                accumulate(grads, *x, &dx);
            }
            Node::LayernormRows { x } => {
                let (r, c) = self.shape(*x);
                let n = S::from_f64_c(c as f64);
                let eps = S::from_f64_c(LAYERNORM_EPS);
                let xv = self.values(*x);
                let mut dx = vec![S::zero(); r * c];
                for i in 0..r {
                    let row = &xv[i * c..(i + 1) * c];
                    let grow = &g[i * c..(i + 1) * c];
                    let mean = row.iter().cloned().sum::<S>() / n;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
                    let sigma = (var + eps).sqrt();
                    let xhat: Vec<S> = row.iter().map(|&v| (v - mean) / sigma).collect();
                    let gmean = grow.iter().cloned().sum::<S>() / n;
                    let gx = grow.iter().zip(xhat.iter()).map(|(&gv, &xh)| gv * xh).sum::<S>() / n;
                    for j in 0..c {
                        dx[i * c + j] = (grow[j] - gmean - xhat[j] * gx) / sigma;
                    }
                }
                accumulate(grads, *x, &dx);
            }
            Node::MeanAll { x } => {
                let (r, c) = self.shape(*x);
                let v = g[0] / S::from_f64_c((r * c) as f64);
                let dx = vec![v; r * c];
                accumulate(grads, *x, &dx);
            }
            Node::SumAll { x } => {
                let (r, c) = self.shape(*x);
                let dx = vec![g[0]; r * c];
                accumulate(grads, *x, &dx);
            }
            Node::FrobeniusSqDiff { a, b } => {
                let two = S::from_f64_c(2.0);
                let av = self.values(*a);
                let bv = self.values(*b);
                let da: Vec<S> = av
                    .iter()
                    .zip(bv.iter())
                    .map(|(&x, &y)| two * g[0] * (x - y))
                    .collect();
                accumulate(grads, *a, &da);
                let db: Vec<S> = da.iter().map(|&v| -v).collect();
                accumulate(grads, *b, &db);
            }
            Node::GatherRows { x, rows } => {
                let (r, c) = self.shape(*x);
                let mut dx = vec![S::zero(); r * c];
                for (out_i, &src) in rows.iter().enumerate() {
                    for j in 0..c {
                        dx[src * c + j] += g[out_i * c + j];
                    }
                }
                accumulate(grads, *x, &dx);
            }
            Node::KlRows { p_log, q_log } => {
                let (r, c) = self.shape(*p_log);
                let m = S::from_f64_c(r as f64);
                let pv = self.values(*p_log);
                let qv = self.values(*q_log);
                let mut dp = vec![S::zero(); r * c];
                let mut dq = vec![S::zero(); r * c];
                for i in 0..r * c {
                    let p = pv[i].exp();
                    dp[i] = g[0] * p * (S::one() + pv[i] - qv[i]) / m;
                    dq[i] = -g[0] * p / m;
                }
                accumulate(grads, *p_log, &dp);
                accumulate(grads, *q_log, &dq);
            }
        }
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Vec<S>>], id: TensorId, contribution: &[S]) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, &c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => grads[id.0] = Some(contribution.to_vec()),
    }
}

fn gelu_value<S: Scalar>(x: S) -> S {
    let half = S::from_f64_c(0.5);
    let k = S::from_f64_c(0.7978845608028654); // sqrt(2/pi)
    let c3 = S::from_f64_c(0.044715);
    let u = k * (x + c3 * x * x * x);
    half * x * (S::one() + u.tanh())
}

fn gelu_derivative<S: Scalar>(x: S) -> S {
    let half = S::from_f64_c(0.5);
    let k = S::from_f64_c(0.7978845608028654);
    let c3 = S::from_f64_c(0.044715);
    let three = S::from_f64_c(3.0);
    let u = k * (x + c3 * x * x * x);
    let t = u.tanh();
    let sech2 = S::one() - t * t;
    half * (S::one() + t) + half * x * sech2 * k * (S::one() + three * c3 * x * x)
}

// out += a[m x k] . b[k x n]; the k-loop is unrolled by 4 so each pass over
// the output row does four fused accumulations.
fn mm_nn<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    let k4 = k / 4 * 4;
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        let mut kk = 0;
        while kk < k4 {
            let (a0, a1, a2, a3) = (arow[kk], arow[kk + 1], arow[kk + 2], arow[kk + 3]);
            let b0 = &b[kk * n..(kk + 1) * n];
            let b1 = &b[(kk + 1) * n..(kk + 2) * n];
            let b2 = &b[(kk + 2) * n..(kk + 3) * n];
            let b3 = &b[(kk + 3) * n..(kk + 4) * n];
            for j in 0..n {
                orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            kk += 4;
        }
        while kk < k {
            let av = arow[kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
            kk += 1;
        }
    }
}

// out += a[m x n] . b[k x n]^T  (row-dot-row, four dots per pass)
fn mm_nt<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, n: usize, k: usize) {
    let m4 = m / 4 * 4;
    for kk in 0..k {
        let brow = &b[kk * n..(kk + 1) * n];
        let mut i = 0;
        while i < m4 {
            let mut d0 = S::zero();
            let mut d1 = S::zero();
            let mut d2 = S::zero();
            let mut d3 = S::zero();
            let a0 = &a[i * n..(i + 1) * n];
            let a1 = &a[(i + 1) * n..(i + 2) * n];
            let a2 = &a[(i + 2) * n..(i + 3) * n];
            let a3 = &a[(i + 3) * n..(i + 4) * n];
            for j in 0..n {
                d0 += a0[j] * brow[j];
                d1 += a1[j] * brow[j];
                d2 += a2[j] * brow[j];
                d3 += a3[j] * brow[j];
            }
            out[i * k + kk] += d0;
            out[(i + 1) * k + kk] += d1;
            out[(i + 2) * k + kk] += d2;
            out[(i + 3) * k + kk] += d3;
            i += 4;
        }
        while i < m {
            let arow = &a[i * n..(i + 1) * n];
            let dot = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<S>();
            out[i * k + kk] += dot;
            i += 1;
        }
    }
}

// out += a[m x k]^T . b[m x n]; same four-step accumulation over rows of b.
fn mm_tn<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    let m4 = m / 4 * 4;
    for kk in 0..k {
        let orow = &mut out[kk * n..(kk + 1) * n];
        let mut i = 0;
        while i < m4 {
            let (a0, a1, a2, a3) = (a[i * k + kk], a[(i + 1) * k + kk], a[(i + 2) * k + kk], a[(i + 3) * k + kk]);
            let b0 = &b[i * n..(i + 1) * n];
            let b1 = &b[(i + 1) * n..(i + 2) * n];
            let b2 = &b[(i + 2) * n..(i + 3) * n];
            let b3 = &b[(i + 3) * n..(i + 4) * n];
            for j in 0..n {
                orow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            i += 4;
        }
        while i < m {
            let av = a[i * k + kk];
            let brow = &b[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
            i += 1;
        }
    }
}
