//! Define-by-run reverse-mode autodiff over 2-D f64 tensors.
//!
//! Every operation computes its value eagerly and records what it needs for
//! the backward pass. Point-cloud batches are laid out as `(batch * n_points,
//! channels)` matrices; the per-sample attention ops take `n_points` so they
//! can work sample by sample inside that layout.
//!
//! Gradients are checked against central finite differences in the tests at
//! the bottom of this file; the training-facing composite objectives get the
//! same treatment in the acceptance suite.

use ndarray::{s, Array2, Axis};
use rand::Rng;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Identifies which parameter a leaf binds: (parameter set tag, index within
/// the set). Set tags are chosen by the caller (generator/classifier1/...).
pub type ParamRef = (usize, usize);

/// Batch-norm behavior for one forward call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running buffers.
    Train,
    /// Normalize with batch statistics but leave the running buffers alone
    /// (used when the sub-network owning them is frozen this step).
    TrainFrozen,
    /// Normalize with the running statistics; deterministic.
    Eval,
}

enum Op {
    Leaf {
        param: Option<ParamRef>,
    },
    /// Value recorded while gradient recording was off; backward stops here.
    Stop,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    /// Broadcast-add a 1 x C row vector to every row.
    AddRow {
        x: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: f64,
    },
    Relu {
        x: NodeId,
    },
    /// Column-wise affine with constant coefficients (eval-mode batch norm).
    ColAffine {
        x: NodeId,
        scale: Vec<f64>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        x_hat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: NodeId,
        mask: Array2<f64>,
    },
    ConcatCols {
        parts: Vec<NodeId>,
        widths: Vec<usize>,
    },
    GatherRows {
        x: NodeId,
        idx: Vec<usize>,
    },
    /// Each input row repeated k times consecutively.
    RepeatRows {
        x: NodeId,
        k: usize,
    },
    /// Column-wise max over groups of `group` consecutive rows.
    MaxPoolRows {
        x: NodeId,
        group: usize,
        argmax: Vec<usize>,
    },
    /// Per sample of n rows: A_s (n x d) @ B_s^T (d x n) -> n x n.
    PerSampleMatMulNT {
        a: NodeId,
        b: NodeId,
        n: usize,
    },
    /// Per sample: A_s (n x n) @ B_s (n x c) -> n x c.
    PerSampleMatMul {
        a: NodeId,
        b: NodeId,
        n: usize,
    },
    /// Per sample: softmax over the query axis (down each column), then L1
    /// normalization along each row, so rows sum to one.
    DualNorm {
        s: NodeId,
        n: usize,
        a_soft: Array2<f64>,
        row_sum: Vec<f64>,
    },
    /// Per sample: scaled softmax along each row.
    RowSoftmax {
        s: NodeId,
        n: usize,
        scale: f64,
        softmax: Array2<f64>,
    },
    LogSoftmaxRows {
        x: NodeId,
        softmax: Array2<f64>,
    },
    /// Negative mean log-probability of the given class per row; 1 x 1.
    NllMean {
        logp: NodeId,
        labels: Vec<usize>,
    },
    SoftmaxRows {
        x: NodeId,
        softmax: Array2<f64>,
    },
    /// Mean absolute difference over all entries; 1 x 1.
    L1Mean {
        p: NodeId,
        q: NodeId,
    },
    /// Sum of x element-wise weighted by a constant matrix; 1 x 1.
    SumWeighted {
        x: NodeId,
        weights: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    op: Op,
}

/// A single forward/backward tape.
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// While off, new nodes keep their values but drop provenance, so the
    /// backward pass stops at them. Used to run a frozen sub-network without
    /// paying for its backward.
    pub fn set_recording(&mut self, recording: bool) {
        self.recording = recording;
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.nodes[id.0].grad.as_ref()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        let op = if self.recording || matches!(op, Op::Leaf { .. }) {
            op
        } else {
            Op::Stop
        };
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    // -- Node constructors --------------------------------------------------

    pub fn input(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    pub fn param(&mut self, value: Array2<f64>, param: ParamRef) -> NodeId {
        self.push(value, Op::Leaf { param: Some(param) })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul { a, b })
    }

    pub fn add_row(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let value = self.value(x) + self.value(b);
        self.push(value, Op::AddRow { x, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub { a, b })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x) * c;
        self.push(value, Op::Scale { x, c })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(|v| v.max(0.0));
        self.push(value, Op::Relu { x })
    }

    /// Column-wise `x * scale + shift` with constant coefficients.
    pub fn col_affine(&mut self, x: NodeId, scale: &[f64], shift: &[f64]) -> NodeId {
        let xv = self.value(x);
        let mut value = xv.clone();
        for mut row in value.axis_iter_mut(Axis(0)) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = *v * scale[c] + shift[c];
            }
        }
        self.push(
            value,
            Op::ColAffine {
                x,
                scale: scale.to_vec(),
            },
        )
    }

    /// Batch normalization over rows. In the train modes, batch statistics
    /// normalize and (for [`BnMode::Train`]) update the running buffers; in
    /// eval mode the running buffers normalize.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &mut Array2<f64>,
        running_var: &mut Array2<f64>,
        momentum: f64,
        eps: f64,
        mode: BnMode,
    ) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        match mode {
            BnMode::Train | BnMode::TrainFrozen => {
                assert!(rows > 1, "batch norm in train mode needs batch size > 1");
                let mean = xv.mean_axis(Axis(0)).unwrap();
                let mut var = vec![0.0; cols];
                for row in xv.axis_iter(Axis(0)) {
                    for (c, v) in row.iter().enumerate() {
                        let d = v - mean[c];
                        var[c] += d * d;
                    }
                }
                for v in &mut var {
                    *v /= rows as f64;
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

                if mode == BnMode::Train {
                    let unbias = rows as f64 / (rows as f64 - 1.0);
                    for c in 0..cols {
                        running_mean[[0, c]] =
                            (1.0 - momentum) * running_mean[[0, c]] + momentum * mean[c];
                        running_var[[0, c]] =
                            (1.0 - momentum) * running_var[[0, c]] + momentum * var[c] * unbias;
                    }
                }

                let mut x_hat = xv.clone();
                for mut row in x_hat.axis_iter_mut(Axis(0)) {
                    for (c, v) in row.iter_mut().enumerate() {
                        *v = (*v - mean[c]) * inv_std[c];
                    }
                }
                let gv = self.value(gamma).clone();
                let bv = self.value(beta).clone();
                let mut value = x_hat.clone();
                for mut row in value.axis_iter_mut(Axis(0)) {
                    for (c, v) in row.iter_mut().enumerate() {
                        *v = *v * gv[[0, c]] + bv[[0, c]];
                    }
                }
                self.push(
                    value,
                    Op::BatchNorm {
                        x,
                        gamma,
                        beta,
                        x_hat,
                        inv_std,
                    },
                )
            }
            BnMode::Eval => {
                let gv = self.value(gamma);
                let bv = self.value(beta);
                let mut scale = vec![0.0; cols];
                let mut shift = vec![0.0; cols];
                for c in 0..cols {
                    let inv = 1.0 / (running_var[[0, c]] + eps).sqrt();
                    scale[c] = gv[[0, c]] * inv;
                    shift[c] = bv[[0, c]] - running_mean[[0, c]] * scale[c];
                }
                self.col_affine(x, &scale, &shift)
            }
        }
    }

    /// Inverted dropout: kept entries scaled by 1/(1-rate). Identity when
    /// rate is zero.
    pub fn dropout(&mut self, x: NodeId, rate: f64, rng: &mut impl Rng) -> NodeId {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let xv = self.value(x);
        let mask = Array2::from_shape_fn(xv.dim(), |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let value = xv * &mask;
        self.push(value, Op::Dropout { x, mask })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).nrows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).ncols()).collect();
        let total: usize = widths.iter().sum();
        let mut value = Array2::zeros((rows, total));
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            value
                .slice_mut(s![.., offset..offset + w])
                .assign(self.value(p));
            offset += w;
        }
        self.push(
            value,
            Op::ConcatCols {
                parts: parts.to_vec(),
                widths,
            },
        )
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let xv = self.value(x);
        let mut value = Array2::zeros((idx.len(), xv.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).assign(&xv.row(i));
        }
        self.push(
            value,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn repeat_rows(&mut self, x: NodeId, k: usize) -> NodeId {
        let xv = self.value(x);
        let mut value = Array2::zeros((xv.nrows() * k, xv.ncols()));
        for (r, row) in xv.axis_iter(Axis(0)).enumerate() {
            for j in 0..k {
                value.row_mut(r * k + j).assign(&row);
            }
        }
        self.push(value, Op::RepeatRows { x, k })
    }

    /// Column-wise max over each group of `group` consecutive rows. Ties go
    /// to the earliest row.
    pub fn max_pool_rows(&mut self, x: NodeId, group: usize) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        assert_eq!(rows % group, 0, "row count not divisible by group size");
        let out_rows = rows / group;
        let mut value = Array2::zeros((out_rows, cols));
        let mut argmax = vec![0usize; out_rows * cols];
        for o in 0..out_rows {
            for c in 0..cols {
                let mut best = f64::NEG_INFINITY;
                let mut best_r = o * group;
                for r in o * group..(o + 1) * group {
                    if xv[[r, c]] > best {
                        best = xv[[r, c]];
                        best_r = r;
                    }
                }
                value[[o, c]] = best;
                argmax[o * cols + c] = best_r;
            }
        }
        self.push(value, Op::MaxPoolRows { x, group, argmax })
    }

    /// Per sample of `n` rows: scores S_s = A_s B_s^T.
    pub fn per_sample_matmul_nt(&mut self, a: NodeId, b: NodeId, n: usize) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        let rows = av.nrows();
        assert_eq!(rows % n, 0);
        assert_eq!(bv.nrows(), rows);
        let batches = rows / n;
        let mut value = Array2::zeros((rows, n));
        for s in 0..batches {
            let a_s = av.slice(s![s * n..(s + 1) * n, ..]);
            let b_s = bv.slice(s![s * n..(s + 1) * n, ..]);
            value
                .slice_mut(s![s * n..(s + 1) * n, ..])
                .assign(&a_s.dot(&b_s.t()));
        }
        self.push(value, Op::PerSampleMatMulNT { a, b, n })
    }

    /// Per sample: A_s (n x n) @ B_s (n x c).
    pub fn per_sample_matmul(&mut self, a: NodeId, b: NodeId, n: usize) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        let rows = av.nrows();
        assert_eq!(av.ncols(), n);
        assert_eq!(rows % n, 0);
        assert_eq!(bv.nrows(), rows);
        let batches = rows / n;
        let mut value = Array2::zeros((rows, bv.ncols()));
        for s in 0..batches {
            let a_s = av.slice(s![s * n..(s + 1) * n, ..]);
            let b_s = bv.slice(s![s * n..(s + 1) * n, ..]);
            value
                .slice_mut(s![s * n..(s + 1) * n, ..])
                .assign(&a_s.dot(&b_s));
        }
        self.push(value, Op::PerSampleMatMul { a, b, n })
    }

    /// Attention weights from raw scores: per sample, softmax down each
    /// column (over queries) then L1 normalization along each row (over
    /// keys), so every row sums to one.
    pub fn dual_norm(&mut self, scores: NodeId, n: usize) -> NodeId {
        const EPS: f64 = 1e-9;
        let sv = self.value(scores);
        let rows = sv.nrows();
        assert_eq!(sv.ncols(), n);
        assert_eq!(rows % n, 0);
        let batches = rows / n;
        let mut a_soft = Array2::zeros((rows, n));
        for b in 0..batches {
            let block = sv.slice(s![b * n..(b + 1) * n, ..]);
            for j in 0..n {
                let col = block.column(j);
                let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for i in 0..n {
                    denom += (col[i] - max).exp();
                }
                for i in 0..n {
                    a_soft[[b * n + i, j]] = (col[i] - max).exp() / denom;
                }
            }
        }
        let mut row_sum = vec![0.0; rows];
        let mut value = a_soft.clone();
        for r in 0..rows {
            let sum: f64 = a_soft.row(r).sum() + EPS;
            row_sum[r] = sum;
            for j in 0..n {
                value[[r, j]] /= sum;
            }
        }
        self.push(
            value,
            Op::DualNorm {
                s: scores,
                n,
                a_soft,
                row_sum,
            },
        )
    }

    /// Standard scaled softmax along each row of the per-sample score block.
    pub fn row_softmax(&mut self, scores: NodeId, n: usize, scale: f64) -> NodeId {
        let sv = self.value(scores);
        let rows = sv.nrows();
        let mut softmax = Array2::zeros(sv.dim());
        for r in 0..rows {
            let row = sv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * scale;
            let mut denom = 0.0;
            for j in 0..row.len() {
                denom += (row[j] * scale - max).exp();
            }
            for j in 0..row.len() {
                softmax[[r, j]] = (row[j] * scale - max).exp() / denom;
            }
        }
        self.push(
            softmax.clone(),
            Op::RowSoftmax {
                s: scores,
                n,
                scale,
                softmax,
            },
        )
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut value = xv.clone();
        let mut softmax = xv.clone();
        for r in 0..xv.nrows() {
            let row = xv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_denom = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for j in 0..row.len() {
                value[[r, j]] = row[j] - log_denom;
                softmax[[r, j]] = value[[r, j]].exp();
            }
        }
        self.push(value, Op::LogSoftmaxRows { x, softmax })
    }

    pub fn nll_mean(&mut self, logp: NodeId, labels: &[usize]) -> NodeId {
        let lv = self.value(logp);
        assert_eq!(lv.nrows(), labels.len());
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            total -= lv[[r, y]];
        }
        let value = Array2::from_elem((1, 1), total / labels.len() as f64);
        self.push(
            value,
            Op::NllMean {
                logp,
                labels: labels.to_vec(),
            },
        )
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut softmax = xv.clone();
        for r in 0..xv.nrows() {
            let row = xv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..row.len() {
                denom += (row[j] - max).exp();
            }
            for j in 0..row.len() {
                softmax[[r, j]] = (row[j] - max).exp() / denom;
            }
        }
        self.push(softmax.clone(), Op::SoftmaxRows { x, softmax })
    }

    /// Mean |p - q| over every entry (batch mean of the per-class mean).
    pub fn l1_mean(&mut self, p: NodeId, q: NodeId) -> NodeId {
        let pv = self.value(p);
        let qv = self.value(q);
        assert_eq!(pv.dim(), qv.dim());
        let total: f64 = pv.iter().zip(qv.iter()).map(|(a, b)| (a - b).abs()).sum();
        let value = Array2::from_elem((1, 1), total / pv.len() as f64);
        self.push(value, Op::L1Mean { p, q })
    }

    /// Scalar projection used by gradient checks: sum(x * weights).
    pub fn sum_weighted(&mut self, x: NodeId, weights: Array2<f64>) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.dim(), weights.dim());
        let total: f64 = xv.iter().zip(weights.iter()).map(|(a, w)| a * w).sum();
        let value = Array2::from_elem((1, 1), total);
        self.push(value, Op::SumWeighted { x, weights })
    }

    // -- Backward -----------------------------------------------------------

    /// Accumulates gradients of `loss` (a 1 x 1 node) into every reachable
    /// node.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(
            self.nodes[loss.0].value.dim(),
            (1, 1),
            "backward starts from a scalar node"
        );
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let Some(g) = node.grad.as_ref() else {
                continue;
            };
            match &node.op {
                Op::Leaf { .. } | Op::Stop => {}
                Op::MatMul { a, b } => {
                    let da = g.dot(&before[b.0].value.t());
                    let db = before[a.0].value.t().dot(g);
                    acc(before, *a, da);
                    acc(before, *b, db);
                }
                Op::AddRow { x, b } => {
                    let db = g
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    acc(before, *x, g.clone());
                    acc(before, *b, db);
                }
                Op::Add { a, b } => {
                    acc(before, *a, g.clone());
                    acc(before, *b, g.clone());
                }
                Op::Sub { a, b } => {
                    acc(before, *a, g.clone());
                    acc(before, *b, -g);
                }
                Op::Scale { x, c } => {
                    acc(before, *x, g * *c);
                }
                Op::Relu { x } => {
                    let mut dx = g.clone();
                    for (d, v) in dx.iter_mut().zip(node.value.iter()) {
                        if *v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    acc(before, *x, dx);
                }
                Op::ColAffine { x, scale } => {
                    let mut dx = g.clone();
                    for mut row in dx.axis_iter_mut(Axis(0)) {
                        for (c, v) in row.iter_mut().enumerate() {
                            *v *= scale[c];
                        }
                    }
                    acc(before, *x, dx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    x_hat,
                    inv_std,
                } => {
                    let rows = g.nrows() as f64;
                    let cols = g.ncols();
                    let gv = &before[gamma.0].value;

                    let mut dbeta = vec![0.0; cols];
                    let mut dgamma = vec![0.0; cols];
                    for r in 0..g.nrows() {
                        for c in 0..cols {
                            dbeta[c] += g[[r, c]];
                            dgamma[c] += g[[r, c]] * x_hat[[r, c]];
                        }
                    }
                    // dx = gamma * inv_std / R * (R*dy - sum(dy) - x_hat * sum(dy*x_hat))
                    let mut dx = Array2::zeros(g.dim());
                    for r in 0..g.nrows() {
                        for c in 0..cols {
                            let term =
                                rows * g[[r, c]] - dbeta[c] - x_hat[[r, c]] * dgamma[c];
                            dx[[r, c]] = gv[[0, c]] * inv_std[c] / rows * term;
                        }
                    }
                    acc(before, *x, dx);
                    acc(
                        before,
                        *gamma,
                        Array2::from_shape_vec((1, cols), dgamma).unwrap(),
                    );
                    acc(
                        before,
                        *beta,
                        Array2::from_shape_vec((1, cols), dbeta).unwrap(),
                    );
                }
                Op::Dropout { x, mask } => {
                    acc(before, *x, g * mask);
                }
                Op::ConcatCols { parts, widths } => {
                    let mut offset = 0;
                    for (&p, &w) in parts.iter().zip(widths) {
                        let dp = g.slice(s![.., offset..offset + w]).to_owned();
                        acc(before, p, dp);
                        offset += w;
                    }
                }
                Op::GatherRows { x, idx } => {
                    let mut dx = Array2::zeros(before[x.0].value.dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut target = dx.row_mut(i);
                        target += &g.row(r);
                    }
                    acc(before, *x, dx);
                }
                Op::RepeatRows { x, k } => {
                    let xv_rows = before[x.0].value.nrows();
                    let mut dx = Array2::zeros(before[x.0].value.dim());
                    for r in 0..xv_rows {
                        for j in 0..*k {
                            let mut target = dx.row_mut(r);
                            target += &g.row(r * k + j);
                        }
                    }
                    acc(before, *x, dx);
                }
                Op::MaxPoolRows { x, group: _, argmax } => {
                    let cols = g.ncols();
                    let mut dx = Array2::zeros(before[x.0].value.dim());
                    for o in 0..g.nrows() {
                        for c in 0..cols {
                            dx[[argmax[o * cols + c], c]] += g[[o, c]];
                        }
                    }
                    acc(before, *x, dx);
                }
                Op::PerSampleMatMulNT { a, b, n } => {
                    let av = &before[a.0].value;
                    let bv = &before[b.0].value;
                    let batches = av.nrows() / n;
                    let mut da = Array2::zeros(av.dim());
                    let mut db = Array2::zeros(bv.dim());
                    for sidx in 0..batches {
                        let r = s![sidx * n..(sidx + 1) * n, ..];
                        let g_s = g.slice(r);
                        let a_s = av.slice(r);
                        let b_s = bv.slice(r);
                        da.slice_mut(r).assign(&g_s.dot(&b_s));
                        db.slice_mut(r).assign(&g_s.t().dot(&a_s));
                    }
                    acc(before, *a, da);
                    acc(before, *b, db);
                }
                Op::PerSampleMatMul { a, b, n } => {
                    let av = &before[a.0].value;
                    let bv = &before[b.0].value;
                    let batches = av.nrows() / n;
                    let mut da = Array2::zeros(av.dim());
                    let mut db = Array2::zeros(bv.dim());
                    for sidx in 0..batches {
                        let r = s![sidx * n..(sidx + 1) * n, ..];
                        let g_s = g.slice(r);
                        let a_s = av.slice(r);
                        let b_s = bv.slice(r);
                        da.slice_mut(r).assign(&g_s.dot(&b_s.t()));
                        db.slice_mut(r).assign(&a_s.t().dot(&g_s));
                    }
                    acc(before, *a, da);
                    acc(before, *b, db);
                }
                Op::DualNorm {
                    s: scores,
                    n,
                    a_soft,
                    row_sum,
                } => {
                    let rows = g.nrows();
                    let w = &node.value;
                    // Through the row L1 normalization: dA = (G - rowdot(G, W)) / r.
                    let mut da = Array2::zeros(g.dim());
                    for r in 0..rows {
                        let mut t = 0.0;
                        for j in 0..*n {
                            t += g[[r, j]] * w[[r, j]];
                        }
                        for j in 0..*n {
                            da[[r, j]] = (g[[r, j]] - t) / row_sum[r];
                        }
                    }
                    // Through the column softmax: dS = A * (dA - coldot(dA, A)).
                    let batches = rows / n;
                    let mut ds = Array2::zeros(g.dim());
                    for bidx in 0..batches {
                        for j in 0..*n {
                            let mut u = 0.0;
                            for i in 0..*n {
                                let r = bidx * n + i;
                                u += da[[r, j]] * a_soft[[r, j]];
                            }
                            for i in 0..*n {
                                let r = bidx * n + i;
                                ds[[r, j]] = a_soft[[r, j]] * (da[[r, j]] - u);
                            }
                        }
                    }
                    acc(before, *scores, ds);
                }
                Op::RowSoftmax {
                    s: scores,
                    n: _,
                    scale,
                    softmax,
                } => {
                    let mut ds = Array2::zeros(g.dim());
                    for r in 0..g.nrows() {
                        let mut t = 0.0;
                        for j in 0..g.ncols() {
                            t += g[[r, j]] * softmax[[r, j]];
                        }
                        for j in 0..g.ncols() {
                            ds[[r, j]] = scale * softmax[[r, j]] * (g[[r, j]] - t);
                        }
                    }
                    acc(before, *scores, ds);
                }
                Op::LogSoftmaxRows { x, softmax } => {
                    let mut dx = g.clone();
                    for r in 0..g.nrows() {
                        let row_total: f64 = g.row(r).sum();
                        for j in 0..g.ncols() {
                            dx[[r, j]] -= softmax[[r, j]] * row_total;
                        }
                    }
                    acc(before, *x, dx);
                }
                Op::NllMean { logp, labels } => {
                    let scale = g[[0, 0]] / labels.len() as f64;
                    let mut dl = Array2::zeros(before[logp.0].value.dim());
                    for (r, &y) in labels.iter().enumerate() {
                        dl[[r, y]] = -scale;
                    }
                    acc(before, *logp, dl);
                }
                Op::SoftmaxRows { x, softmax } => {
                    let mut dx = Array2::zeros(g.dim());
                    for r in 0..g.nrows() {
                        let mut t = 0.0;
                        for j in 0..g.ncols() {
                            t += g[[r, j]] * softmax[[r, j]];
                        }
                        for j in 0..g.ncols() {
                            dx[[r, j]] = softmax[[r, j]] * (g[[r, j]] - t);
                        }
                    }
                    acc(before, *x, dx);
                }
                Op::L1Mean { p, q } => {
                    let pv = &before[p.0].value;
                    let qv = &before[q.0].value;
                    let scale = g[[0, 0]] / pv.len() as f64;
                    let mut dp = Array2::zeros(pv.dim());
                    for (d, (a, b)) in dp.iter_mut().zip(pv.iter().zip(qv.iter())) {
                        *d = scale * sign(a - b);
                    }
                    acc(before, *q, -&dp);
                    acc(before, *p, dp);
                }
                Op::SumWeighted { x, weights } => {
                    acc(before, *x, weights * g[[0, 0]]);
                }
            }
        }
    }

    /// Gradients of parameter leaves, keyed by their [`ParamRef`].
    pub fn param_grads(&self) -> Vec<(ParamRef, &Array2<f64>)> {
        self.nodes
            .iter()
            .filter_map(|n| match (&n.op, n.grad.as_ref()) {
                (Op::Leaf { param: Some(p) }, Some(g)) => Some((*p, g)),
                _ => None,
            })
            .collect()
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn acc(nodes: &mut [Node], id: NodeId, delta: Array2<f64>) {
    match &mut nodes[id.0].grad {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}
