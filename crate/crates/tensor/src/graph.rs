//! Tape-based reverse-mode differentiation. A [`Graph`] records every
//! operation of one forward pass; [`Graph::backward`] walks the tape in
//! reverse, accumulating gradients for every node that needs them.

use thiserror::Error;

use crate::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<NodeId>,
    backward: Option<BackwardFn>,
    needs_grad: bool,
}

/// Per-node gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert!(self.nodes[id].value.is_scalar());
        self.nodes[id].value.data[0]
    }

    /// Named parameters bound into this graph, for gradient scatter.
    pub fn bound_params(&self) -> &[(String, NodeId)] {
        &self.params
    }

    fn push(&mut self, value: Tensor, parents: Vec<NodeId>, backward: Option<BackwardFn>) -> NodeId {
        let needs_grad = backward.is_some() && parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node { value, parents, backward, needs_grad });
        self.nodes.len() - 1
    }

    /// A differentiable leaf.
    pub fn var(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { value, parents: vec![], backward: None, needs_grad: true });
        self.nodes.len() - 1
    }

    /// A named differentiable leaf registered for parameter-gradient scatter.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        let id = self.var(value);
        self.params.push((name.to_string(), id));
        id
    }

    /// A non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { value, parents: vec![], backward: None, needs_grad: false });
        self.nodes.len() - 1
    }

    // -- elementwise binary ------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.zip(&self.nodes[b].value, |x, y| x + y);
        self.push(v, vec![a, b], Some(Box::new(|g, _, _| vec![g.clone(), g.clone()])))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.zip(&self.nodes[b].value, |x, y| x - y);
        self.push(v, vec![a, b], Some(Box::new(|g, _, _| vec![g.clone(), g.map(|x| -x)])))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.zip(&self.nodes[b].value, |x, y| x * y);
        self.push(
            v,
            vec![a, b],
            Some(Box::new(|g, inputs, _| {
                vec![g.zip(inputs[1], |gi, y| gi * y), g.zip(inputs[0], |gi, x| gi * x)]
            })),
        )
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.zip(&self.nodes[b].value, |x, y| x / y);
        self.push(
            v,
            vec![a, b],
            Some(Box::new(|g, inputs, _| {
                let da = g.zip(inputs[1], |gi, y| gi / y);
                let mut db = g.zip(inputs[0], |gi, x| gi * x);
                db = db.zip(inputs[1], |gx, y| -gx / (y * y));
                vec![da, db]
            })),
        )
    }

    // -- elementwise unary -------------------------------------------------

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a].value.map(|x| c * x);
        self.push(v, vec![a], Some(Box::new(move |g, _, _| vec![g.map(|x| c * x)])))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a].value.map(|x| x + c);
        self.push(v, vec![a], Some(Box::new(|g, _, _| vec![g.clone()])))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(f64::exp);
        self.push(v, vec![a], Some(Box::new(|g, _, out| vec![g.zip(out, |gi, y| gi * y)])))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(f64::ln);
        self.push(v, vec![a], Some(Box::new(|g, inputs, _| vec![g.zip(inputs[0], |gi, x| gi / x)])))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(f64::tanh);
        self.push(v, vec![a], Some(Box::new(|g, _, out| vec![g.zip(out, |gi, y| gi * (1.0 - y * y))])))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x * x);
        self.push(v, vec![a], Some(Box::new(|g, inputs, _| vec![g.zip(inputs[0], |gi, x| gi * 2.0 * x)])))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(f64::abs);
        self.push(
            v,
            vec![a],
            Some(Box::new(|g, inputs, _| {
                vec![g.zip(inputs[0], |gi, x| {
                    if x > 0.0 {
                        gi
                    } else if x < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                })]
            })),
        )
    }

    /// Numerically stable ln(1 + e^x) with sigmoid backward.
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        self.push(
            v,
            vec![a],
            Some(Box::new(|g, inputs, _| {
                vec![g.zip(inputs[0], |gi, x| gi / (1.0 + (-x).exp()))]
            })),
        )
    }

    /// Tanh-form GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        const C: f64 = 0.7978845608028654; // sqrt(2/pi)
        const K: f64 = 0.044715;
        let v = self.nodes[a].value.map(|x| 0.5 * x * (1.0 + (C * (x + K * x * x * x)).tanh()));
        self.push(
            v,
            vec![a],
            Some(Box::new(|g, inputs, _| {
                vec![g.zip(inputs[0], |gi, x| {
                    let u = C * (x + K * x * x * x);
                    let t = u.tanh();
                    let sech2 = 1.0 - t * t;
                    gi * (0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * K * x * x))
                })]
            })),
        )
    }

    // -- matrix ops ----------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.cols() != vb.rows() {
            return Err(TensorError::Shape(format!(
                "matmul {:?} x {:?}",
                va.shape, vb.shape
            )));
        }
        let v = va.matmul(vb);
        Ok(self.push(
            v,
            vec![a, b],
            Some(Box::new(|g, inputs, _| {
                vec![g.matmul_nt(inputs[1]), inputs[0].matmul_tn(g)]
            })),
        ))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.transpose();
        self.push(v, vec![a], Some(Box::new(|g, _, _| vec![g.transpose()])))
    }

    /// Adds a [1, D] bias row to every row of a [N, D] tensor.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (vx, vb) = (&self.nodes[x].value, &self.nodes[bias].value);
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(TensorError::Shape(format!("bias {:?} on {:?}", vb.shape, vx.shape)));
        }
        let cols = vx.cols();
        let mut v = vx.clone();
        for r in 0..v.rows() {
            for c in 0..cols {
                v.data[r * cols + c] += vb.data[c];
            }
        }
        Ok(self.push(
            v,
            vec![x, bias],
            Some(Box::new(|g, _, _| {
                let cols = g.cols();
                let mut db = Tensor::zeros(&[1, cols]);
                for r in 0..g.rows() {
                    for c in 0..cols {
                        db.data[c] += g.data[r * cols + c];
                    }
                }
                vec![g.clone(), db]
            })),
        ))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        let v = &self.nodes[a].value;
        if shape.iter().product::<usize>() != v.len() {
            return Err(TensorError::Shape(format!("reshape {:?} -> {:?}", v.shape, shape)));
        }
        let old_shape = v.shape.clone();
        let v = Tensor { shape: shape.clone(), data: v.data.clone() };
        Ok(self.push(
            v,
            vec![a],
            Some(Box::new(move |g, _, _| {
                vec![Tensor { shape: old_shape.clone(), data: g.data.clone() }]
            })),
        ))
    }

    // -- structure ops -------------------------------------------------------

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.rows() != vb.rows() {
            return Err(TensorError::Shape(format!("concat_cols {:?} | {:?}", va.shape, vb.shape)));
        }
        let (n, ca, cb) = (va.rows(), va.cols(), vb.cols());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for r in 0..n {
            data.extend_from_slice(&va.data[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&vb.data[r * cb..(r + 1) * cb]);
        }
        Ok(self.push(
            Tensor { shape: vec![n, ca + cb], data },
            vec![a, b],
            Some(Box::new(move |g, _, _| {
                let mut da = Tensor::zeros(&[n, ca]);
                let mut db = Tensor::zeros(&[n, cb]);
                for r in 0..n {
                    da.data[r * ca..(r + 1) * ca]
                        .copy_from_slice(&g.data[r * (ca + cb)..r * (ca + cb) + ca]);
                    db.data[r * cb..(r + 1) * cb]
                        .copy_from_slice(&g.data[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                }
                vec![da, db]
            })),
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let cols = self.nodes[parts[0]].value.cols();
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = &self.nodes[p].value;
            if v.cols() != cols {
                return Err(TensorError::Shape("concat_rows column mismatch".into()));
            }
            row_counts.push(v.rows());
            data.extend_from_slice(&v.data);
        }
        let total: usize = row_counts.iter().sum();
        Ok(self.push(
            Tensor { shape: vec![total, cols], data },
            parts.to_vec(),
            Some(Box::new(move |g, _, _| {
                let mut out = Vec::with_capacity(row_counts.len());
                let mut offset = 0;
                for &n in &row_counts {
                    out.push(Tensor {
                        shape: vec![n, cols],
                        data: g.data[offset * cols..(offset + n) * cols].to_vec(),
                    });
                    offset += n;
                }
                out
            })),
        ))
    }

    pub fn slice_rows(&mut self, a: NodeId, r0: usize, r1: usize) -> Result<NodeId, TensorError> {
        let v = &self.nodes[a].value;
        let (n, cols) = (v.rows(), v.cols());
        if r1 > n || r0 > r1 {
            return Err(TensorError::Shape(format!("slice_rows {r0}..{r1} of {n}")));
        }
        let data = v.data[r0 * cols..r1 * cols].to_vec();
        Ok(self.push(
            Tensor { shape: vec![r1 - r0, cols], data },
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = Tensor::zeros(&[n, cols]);
                da.data[r0 * cols..r1 * cols].copy_from_slice(&g.data);
                vec![da]
            })),
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, c0: usize, c1: usize) -> Result<NodeId, TensorError> {
        let v = &self.nodes[a].value;
        let (n, cols) = (v.rows(), v.cols());
        if c1 > cols || c0 > c1 {
            return Err(TensorError::Shape(format!("slice_cols {c0}..{c1} of {cols}")));
        }
        let w = c1 - c0;
        let mut data = Vec::with_capacity(n * w);
        for r in 0..n {
            data.extend_from_slice(&v.data[r * cols + c0..r * cols + c1]);
        }
        Ok(self.push(
            Tensor { shape: vec![n, w], data },
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = Tensor::zeros(&[n, cols]);
                for r in 0..n {
                    da.data[r * cols + c0..r * cols + c1].copy_from_slice(&g.data[r * w..(r + 1) * w]);
                }
                vec![da]
            })),
        ))
    }

    /// Repeats each row `times` times consecutively: row (i*times + k) of the
    /// output copies row i.
    pub fn repeat_rows(&mut self, a: NodeId, times: usize) -> NodeId {
        let v = &self.nodes[a].value;
        let (n, cols) = (v.rows(), v.cols());
        let mut data = Vec::with_capacity(n * times * cols);
        for r in 0..n {
            for _ in 0..times {
                data.extend_from_slice(&v.data[r * cols..(r + 1) * cols]);
            }
        }
        self.push(
            Tensor { shape: vec![n * times, cols], data },
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = Tensor::zeros(&[n, cols]);
                for r in 0..n {
                    for k in 0..times {
                        let src = (r * times + k) * cols;
                        for c in 0..cols {
                            da.data[r * cols + c] += g.data[src + c];
                        }
                    }
                }
                vec![da]
            })),
        )
    }

    /// Stacks `times` copies of the whole tensor: row (k*n + i) copies row i.
    pub fn tile_rows(&mut self, a: NodeId, times: usize) -> NodeId {
        let v = &self.nodes[a].value;
        let (n, cols) = (v.rows(), v.cols());
        let mut data = Vec::with_capacity(n * times * cols);
        for _ in 0..times {
            data.extend_from_slice(&v.data);
        }
        self.push(
            Tensor { shape: vec![n * times, cols], data },
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = Tensor::zeros(&[n, cols]);
                for k in 0..times {
                    for i in 0..n * cols {
                        da.data[i] += g.data[k * n * cols + i];
                    }
                }
                vec![da]
            })),
        )
    }

    /// Mean over consecutive row blocks of size `chunk`: inverse of
    /// [`Graph::repeat_rows`].
    pub fn mean_rows_chunked(&mut self, a: NodeId, chunk: usize) -> Result<NodeId, TensorError> {
        let v = &self.nodes[a].value;
        let (n, cols) = (v.rows(), v.cols());
        if n % chunk != 0 {
            return Err(TensorError::Shape(format!("{n} rows not divisible by chunk {chunk}")));
        }
        let groups = n / chunk;
        let mut data = vec![0.0; groups * cols];
        for r in 0..n {
            let g_idx = r / chunk;
            for c in 0..cols {
                data[g_idx * cols + c] += v.data[r * cols + c] / chunk as f64;
            }
        }
        Ok(self.push(
            Tensor { shape: vec![groups, cols], data },
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = Tensor::zeros(&[n, cols]);
                for r in 0..n {
                    let g_idx = r / chunk;
                    for c in 0..cols {
                        da.data[r * cols + c] = g.data[g_idx * cols + c] / chunk as f64;
                    }
                }
                vec![da]
            })),
        ))
    }

    /// Mean over rows congruent modulo `period`: inverse of
    /// [`Graph::tile_rows`].
    pub fn mean_rows_strided(&mut self, a: NodeId, period: usize) -> Result<NodeId, TensorError> {
        let v = &self.nodes[a].value;
        let (n, cols) = (v.rows(), v.cols());
        if n % period != 0 {
            return Err(TensorError::Shape(format!("{n} rows not divisible by period {period}")));
        }
        let copies = n / period;
        let mut data = vec![0.0; period * cols];
        for r in 0..n {
            let g_idx = r % period;
            for c in 0..cols {
                data[g_idx * cols + c] += v.data[r * cols + c] / copies as f64;
            }
        }
        Ok(self.push(
            Tensor { shape: vec![period, cols], data },
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = Tensor::zeros(&[n, cols]);
                for r in 0..n {
                    let g_idx = r % period;
                    for c in 0..cols {
                        da.data[r * cols + c] = g.data[g_idx * cols + c] / copies as f64;
                    }
                }
                vec![da]
            })),
        ))
    }

    /// Column-wise max over rows, gradient routed to the first argmax row.
    pub fn max_rows(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a].value;
        let (n, cols) = (v.rows(), v.cols());
        let mut data = vec![f64::NEG_INFINITY; cols];
        let mut argmax = vec![0usize; cols];
        for r in 0..n {
            for c in 0..cols {
                let x = v.data[r * cols + c];
                if x > data[c] {
                    data[c] = x;
                    argmax[c] = r;
                }
            }
        }
        self.push(
            Tensor { shape: vec![1, cols], data },
            vec![a],
            Some(Box::new(move |g, _, _| {
                let mut da = Tensor::zeros(&[n, cols]);
                for c in 0..cols {
                    da.data[argmax[c] * cols + c] = g.data[c];
                }
                vec![da]
            })),
        )
    }

    // -- reductions ----------------------------------------------------------

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a].value;
        let shape = v.shape.clone();
        let total: f64 = v.data.iter().sum();
        self.push(
            Tensor::scalar(total),
            vec![a],
            Some(Box::new(move |g, _, _| vec![Tensor::full(&shape, g.data[0])])),
        )
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].value.len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    // -- softmax family --------------------------------------------------------

    /// Row-wise softmax. `valid`, when given, marks key columns that may
    /// receive weight; the rest get exactly zero.
    pub fn softmax_rows(&mut self, a: NodeId, valid: Option<&[bool]>) -> Result<NodeId, TensorError> {
        let v = &self.nodes[a].value;
        let (n, cols) = (v.rows(), v.cols());
        if let Some(m) = valid {
            if m.len() != cols {
                return Err(TensorError::Shape(format!("mask len {} vs {cols} cols", m.len())));
            }
            if !m.iter().any(|&ok| ok) {
                return Err(TensorError::Shape("softmax mask excludes every column".into()));
            }
        }
        let mask: Option<Vec<bool>> = valid.map(|m| m.to_vec());
        let mut out = vec![0.0; n * cols];
        for r in 0..n {
            let row = &v.data[r * cols..(r + 1) * cols];
            let mut m = f64::NEG_INFINITY;
            for (c, &x) in row.iter().enumerate() {
                if mask.as_ref().map_or(true, |mk| mk[c]) {
                    m = m.max(x);
                }
            }
            let mut sum = 0.0;
            for (c, &x) in row.iter().enumerate() {
                let e = if mask.as_ref().map_or(true, |mk| mk[c]) { (x - m).exp() } else { 0.0 };
                out[r * cols + c] = e;
                sum += e;
            }
            for c in 0..cols {
                out[r * cols + c] /= sum;
            }
        }
        Ok(self.push(
            Tensor { shape: vec![n, cols], data: out },
            vec![a],
            Some(Box::new(move |g, _, out| {
                let (n, cols) = (out.rows(), out.cols());
                let mut da = Tensor::zeros(&[n, cols]);
                for r in 0..n {
                    let dot: f64 = (0..cols)
                        .map(|c| g.data[r * cols + c] * out.data[r * cols + c])
                        .sum();
                    for c in 0..cols {
                        let y = out.data[r * cols + c];
                        da.data[r * cols + c] = y * (g.data[r * cols + c] - dot);
                    }
                }
                vec![da]
            })),
        ))
    }

    /// Cross-entropy of a logit vector against a target index.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId, TensorError> {
        let v = &self.nodes[logits].value;
        let n = v.len();
        if target >= n {
            return Err(TensorError::Shape(format!("target {target} out of {n} logits")));
        }
        let m = v.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + v.data.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        let ce = lse - v.data[target];
        let shape = v.shape.clone();
        Ok(self.push(
            Tensor::scalar(ce),
            vec![logits],
            Some(Box::new(move |g, inputs, _| {
                let x = inputs[0];
                let m = x.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = x.data.iter().map(|&v| (v - m).exp()).sum();
                let mut da = Tensor::zeros(&shape);
                for (i, &v) in x.data.iter().enumerate() {
                    let p = (v - m).exp() / sum;
                    da.data[i] = g.data[0] * (p - if i == target { 1.0 } else { 0.0 });
                }
                vec![da]
            })),
        ))
    }

    /// Elementwise smooth-L1 (Huber with beta = 1) of `pred` against a
    /// (usually constant) `target`.
    pub fn smooth_l1(&mut self, pred: NodeId, target: NodeId) -> NodeId {
        let v = self.nodes[pred].value.zip(&self.nodes[target].value, |p, t| {
            let d = p - t;
            if d.abs() < 1.0 {
                0.5 * d * d
            } else {
                d.abs() - 0.5
            }
        });
        self.push(
            v,
            vec![pred, target],
            Some(Box::new(|g, inputs, _| {
                let dpred = inputs[0].zip(inputs[1], |p, t| (p - t).clamp(-1.0, 1.0));
                let da = g.zip(&dpred, |gi, d| gi * d);
                let db = da.map(|x| -x);
                vec![da, db]
            })),
        )
    }

    /// Row-wise layer normalization with learnable gain and bias ([1, D]).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        const EPS: f64 = 1e-6;
        let v = &self.nodes[x].value;
        let (n, cols) = (v.rows(), v.cols());
        let vg = &self.nodes[gain].value;
        let vb = &self.nodes[bias].value;
        if vg.shape != vec![1, cols] || vb.shape != vec![1, cols] {
            return Err(TensorError::Shape(format!(
                "layer_norm gain {:?} bias {:?} for {:?}",
                vg.shape, vb.shape, v.shape
            )));
        }
        let mut out = vec![0.0; n * cols];
        for r in 0..n {
            let row = &v.data[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            for c in 0..cols {
                let xhat = (row[c] - mean) * inv;
                out[r * cols + c] = vg.data[c] * xhat + vb.data[c];
            }
        }
        Ok(self.push(
            Tensor { shape: vec![n, cols], data: out },
            vec![x, gain, bias],
            Some(Box::new(move |g, inputs, _| {
                let x = inputs[0];
                let gain = inputs[1];
                let (n, cols) = (x.rows(), x.cols());
                let mut dx = Tensor::zeros(&[n, cols]);
                let mut dgain = Tensor::zeros(&[1, cols]);
                let mut dbias = Tensor::zeros(&[1, cols]);
                for r in 0..n {
                    let row = &x.data[r * cols..(r + 1) * cols];
                    let mean = row.iter().sum::<f64>() / cols as f64;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                    let inv = 1.0 / (var + EPS).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                    let dy = &g.data[r * cols..(r + 1) * cols];
                    let dxhat: Vec<f64> = (0..cols).map(|c| dy[c] * gain.data[c]).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / cols as f64;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    for c in 0..cols {
                        dx.data[r * cols + c] =
                            inv * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                        dgain.data[c] += dy[c] * xhat[c];
                        dbias.data[c] += dy[c];
                    }
                }
                vec![dx, dgain, dbias]
            })),
        ))
    }

    // -- backward ------------------------------------------------------------

    /// Reverse-mode accumulation from a scalar loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let loss_value = &self.nodes[loss].value;
        if !loss_value.is_scalar() {
            return Err(TensorError::NotScalar(loss_value.shape.clone()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor { shape: loss_value.shape.clone(), data: vec![1.0] });
        for id in (0..=loss).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad && id != loss {
                continue;
            }
            let Some(grad) = grads[id].take() else { continue };
            if let Some(backward) = &node.backward {
                let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
                let parent_grads = backward(&grad, &inputs, &node.value);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    if !self.nodes[p].needs_grad {
                        continue;
                    }
                    match &mut grads[p] {
                        Some(acc) => acc.add_in_place(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(grad);
        }
        Ok(Gradients { grads })
    }
}
