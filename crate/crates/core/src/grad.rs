//! Minimal reverse-mode automatic differentiation over dense row-major
//! matrices. A [`Graph`] records every operation; [`Graph::backward`]
//! walks the tape once in reverse. Double precision throughout.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, GradError>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Matmul(usize, usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sum(usize),
    Mean(usize),
    SliceRows(usize, usize, usize),
    SliceCols(usize, usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    Transpose(usize),
    LogSoftmax(usize),
    Detach,
    /// Scalar output with a precomputed gradient w.r.t. its parent.
    CustomScalar(usize, Vec<f64>),
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// A define-by-run tape of tensor operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, op: Op, needs_grad: bool) -> TensorRef {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node { rows, cols, data, op, needs_grad });
        TensorRef(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Result<TensorRef> {
        if rows * cols != data.len() {
            return Err(GradError::Shape(format!("{rows}x{cols} leaf with {} values", data.len())));
        }
        Ok(self.push(rows, cols, data, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<TensorRef> {
        self.leaf(rows, cols, data, false)
    }

    pub fn scalar(&mut self, v: f64) -> TensorRef {
        self.push(1, 1, vec![v], Op::Leaf, false)
    }

    pub fn shape(&self, t: TensorRef) -> (usize, usize) {
        (self.nodes[t.0].rows, self.nodes[t.0].cols)
    }

    pub fn value(&self, t: TensorRef) -> &[f64] {
        &self.nodes[t.0].data
    }

    fn needs(&self, a: usize) -> bool {
        self.nodes[a].needs_grad
    }

    fn same_shape(&self, a: TensorRef, b: TensorRef, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(GradError::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.same_shape(a, b, "add")?;
        let data = self.nodes[a.0].data.iter().zip(&self.nodes[b.0].data).map(|(x, y)| x + y).collect();
        let (r, c) = self.shape(a);
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(r, c, data, Op::Add(a.0, b.0), ng))
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.same_shape(a, b, "sub")?;
        let data = self.nodes[a.0].data.iter().zip(&self.nodes[b.0].data).map(|(x, y)| x - y).collect();
        let (r, c) = self.shape(a);
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(r, c, data, Op::Sub(a.0, b.0), ng))
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.same_shape(a, b, "mul")?;
        let data = self.nodes[a.0].data.iter().zip(&self.nodes[b.0].data).map(|(x, y)| x * y).collect();
        let (r, c) = self.shape(a);
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(r, c, data, Op::Mul(a.0, b.0), ng))
    }

    pub fn add_scalar(&mut self, a: TensorRef, s: f64) -> TensorRef {
        let data = self.nodes[a.0].data.iter().map(|x| x + s).collect();
        let (r, c) = self.shape(a);
        let ng = self.needs(a.0);
        self.push(r, c, data, Op::AddScalar(a.0), ng)
    }

    pub fn mul_scalar(&mut self, a: TensorRef, s: f64) -> TensorRef {
        let data = self.nodes[a.0].data.iter().map(|x| x * s).collect();
        let (r, c) = self.shape(a);
        let ng = self.needs(a.0);
        self.push(r, c, data, Op::MulScalar(a.0, s), ng)
    }

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(GradError::Shape(format!("matmul: {m}x{k} times {k2}x{n}")));
        }
        let mut data = vec![0.0; m * n];
        let (av, bv) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut data[i * n..(i + 1) * n];
                for (o, bvv) in orow.iter_mut().zip(brow) {
                    *o += x * bvv;
                }
            }
        }
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(m, n, data, Op::Matmul(a.0, b.0), ng))
    }

    pub fn tanh(&mut self, a: TensorRef) -> TensorRef {
        let data = self.nodes[a.0].data.iter().map(|x| x.tanh()).collect();
        let (r, c) = self.shape(a);
        let ng = self.needs(a.0);
        self.push(r, c, data, Op::Tanh(a.0), ng)
    }

    pub fn relu(&mut self, a: TensorRef) -> TensorRef {
        let data = self.nodes[a.0].data.iter().map(|x| x.max(0.0)).collect();
        let (r, c) = self.shape(a);
        let ng = self.needs(a.0);
        self.push(r, c, data, Op::Relu(a.0), ng)
    }

    pub fn exp(&mut self, a: TensorRef) -> Result<TensorRef> {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x.exp()).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GradError::Numeric("exp overflow".into()));
        }
        let (r, c) = self.shape(a);
        let ng = self.needs(a.0);
        Ok(self.push(r, c, data, Op::Exp(a.0), ng))
    }

    pub fn log(&mut self, a: TensorRef) -> Result<TensorRef> {
        if self.nodes[a.0].data.iter().any(|&x| x <= 0.0) {
            return Err(GradError::Numeric("log of non-positive value".into()));
        }
        let data = self.nodes[a.0].data.iter().map(|x| x.ln()).collect();
        let (r, c) = self.shape(a);
        let ng = self.needs(a.0);
        Ok(self.push(r, c, data, Op::Log(a.0), ng))
    }

    pub fn sum(&mut self, a: TensorRef) -> TensorRef {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let ng = self.needs(a.0);
        self.push(1, 1, vec![s], Op::Sum(a.0), ng)
    }

    pub fn mean(&mut self, a: TensorRef) -> TensorRef {
        let n = self.nodes[a.0].data.len() as f64;
        let s: f64 = self.nodes[a.0].data.iter().sum::<f64>() / n;
        let ng = self.needs(a.0);
        self.push(1, 1, vec![s], Op::Mean(a.0), ng)
    }

    pub fn slice_rows(&mut self, a: TensorRef, start: usize, len: usize) -> Result<TensorRef> {
        let (r, c) = self.shape(a);
        if start + len > r {
            return Err(GradError::Shape(format!("slice_rows {start}..{} of {r} rows", start + len)));
        }
        let data = self.nodes[a.0].data[start * c..(start + len) * c].to_vec();
        let ng = self.needs(a.0);
        Ok(self.push(len, c, data, Op::SliceRows(a.0, start, len), ng))
    }

    pub fn slice_cols(&mut self, a: TensorRef, start: usize, len: usize) -> Result<TensorRef> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(GradError::Shape(format!("slice_cols {start}..{} of {c} cols", start + len)));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.nodes[a.0].data[i * c + start..i * c + start + len]);
        }
        let ng = self.needs(a.0);
        Ok(self.push(r, len, data, Op::SliceCols(a.0, start, len), ng))
    }

    pub fn concat_rows(&mut self, parts: &[TensorRef]) -> Result<TensorRef> {
        if parts.is_empty() {
            return Err(GradError::Shape("concat_rows of nothing".into()));
        }
        let c = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        let mut ng = false;
        for &p in parts {
            let (r, pc) = self.shape(p);
            if pc != c {
                return Err(GradError::Shape(format!("concat_rows: {pc} cols vs {c}")));
            }
            data.extend_from_slice(&self.nodes[p.0].data);
            rows += r;
            ng |= self.needs(p.0);
        }
        Ok(self.push(rows, c, data, Op::ConcatRows(parts.iter().map(|p| p.0).collect()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[TensorRef]) -> Result<TensorRef> {
        if parts.is_empty() {
            return Err(GradError::Shape("concat_cols of nothing".into()));
        }
        let r = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(r * total);
        let mut ng = false;
        for i in 0..r {
            for &p in parts {
                let (pr, pc) = self.shape(p);
                if pr != r {
                    return Err(GradError::Shape(format!("concat_cols: {pr} rows vs {r}")));
                }
                data.extend_from_slice(&self.nodes[p.0].data[i * pc..(i + 1) * pc]);
            }
        }
        for &p in parts {
            ng |= self.needs(p.0);
        }
        Ok(self.push(r, total, data, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), ng))
    }

    pub fn transpose(&mut self, a: TensorRef) -> TensorRef {
        let (r, c) = self.shape(a);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.nodes[a.0].data[i * c + j];
            }
        }
        let ng = self.needs(a.0);
        self.push(c, r, data, Op::Transpose(a.0), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: TensorRef) -> TensorRef {
        let (r, c) = self.shape(a);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &self.nodes[a.0].data[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for j in 0..c {
                data[i * c + j] = row[j] - lse;
            }
        }
        let ng = self.needs(a.0);
        self.push(r, c, data, Op::LogSoftmax(a.0), ng)
    }

    /// Value passthrough that blocks gradient flow.
    pub fn detach(&mut self, a: TensorRef) -> TensorRef {
        let (r, c) = self.shape(a);
        let data = self.nodes[a.0].data.clone();
        self.push(r, c, data, Op::Detach, false)
    }

    /// Scalar node whose gradient w.r.t. `parent` was computed externally.
    pub fn custom_scalar(&mut self, value: f64, parent: TensorRef, grad: Vec<f64>) -> Result<TensorRef> {
        if grad.len() != self.nodes[parent.0].data.len() {
            return Err(GradError::Shape("custom_scalar gradient size mismatch".into()));
        }
        let ng = self.needs(parent.0);
        Ok(self.push(1, 1, vec![value], Op::CustomScalar(parent.0, grad), ng))
    }

    /// Reverse pass from a scalar loss. Returns per-node gradients; index
    /// with [`Graph::grad`].
    pub fn backward(&mut self, loss: TensorRef) -> Result<Gradients> {
        let node = &self.nodes[loss.0];
        if node.rows * node.cols != 1 {
            return Err(GradError::Contract(format!(
                "backward from non-scalar {}x{}",
                node.rows, node.cols
            )));
        }
        if !node.data[0].is_finite() {
            return Err(GradError::Numeric("non-finite loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].needs_grad && !matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, &g);
                    accumulate(&mut grads, b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, b, &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g.iter().zip(&self.nodes[b].data).map(|(gv, bv)| gv * bv).collect();
                    let gb: Vec<f64> = g.iter().zip(&self.nodes[a].data).map(|(gv, av)| gv * av).collect();
                    accumulate(&mut grads, a, &ga);
                    accumulate(&mut grads, b, &gb);
                }
                Op::AddScalar(a) => accumulate(&mut grads, a, &g),
                Op::MulScalar(a, s) => {
                    let ga: Vec<f64> = g.iter().map(|v| v * s).collect();
                    accumulate(&mut grads, a, &ga);
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (self.nodes[a].rows, self.nodes[a].cols);
                    let n = self.nodes[b].cols;
                    // dA = dC * B^T
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                ga[i * k + p] += gv * self.nodes[b].data[p * n + j];
                            }
                        }
                    }
                    // dB = A^T * dC
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = self.nodes[a].data[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                    accumulate(&mut grads, a, &ga);
                    accumulate(&mut grads, b, &gb);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[id].data)
                        .map(|(gv, y)| gv * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, a, &ga);
                }
                Op::Relu(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, a, &ga);
                }
                Op::Exp(a) => {
                    let ga: Vec<f64> = g.iter().zip(&self.nodes[id].data).map(|(gv, y)| gv * y).collect();
                    accumulate(&mut grads, a, &ga);
                }
                Op::Log(a) => {
                    let ga: Vec<f64> = g.iter().zip(&self.nodes[a].data).map(|(gv, x)| gv / x).collect();
                    accumulate(&mut grads, a, &ga);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.nodes[a].data.len()];
                    accumulate(&mut grads, a, &ga);
                }
                Op::Mean(a) => {
                    let n = self.nodes[a].data.len() as f64;
                    let ga = vec![g[0] / n; self.nodes[a].data.len()];
                    accumulate(&mut grads, a, &ga);
                }
                Op::SliceRows(a, start, len) => {
                    let c = self.nodes[a].cols;
                    let mut ga = vec![0.0; self.nodes[a].data.len()];
                    ga[start * c..(start + len) * c].copy_from_slice(&g);
                    accumulate(&mut grads, a, &ga);
                }
                Op::SliceCols(a, start, len) => {
                    let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        ga[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    accumulate(&mut grads, a, &ga);
                }
                Op::ConcatRows(parts) => {
                    let c = self.nodes[id].cols;
                    let mut row = 0;
                    for p in parts {
                        let pr = self.nodes[p].rows;
                        let gp = g[row * c..(row + pr) * c].to_vec();
                        accumulate(&mut grads, p, &gp);
                        row += pr;
                    }
                }
                Op::ConcatCols(parts) => {
                    let r = self.nodes[id].rows;
                    let total = self.nodes[id].cols;
                    let mut col = 0;
                    for p in parts {
                        let pc = self.nodes[p].cols;
                        let mut gp = vec![0.0; r * pc];
                        for i in 0..r {
                            gp[i * pc..(i + 1) * pc].copy_from_slice(&g[i * total + col..i * total + col + pc]);
                        }
                        accumulate(&mut grads, p, &gp);
                        col += pc;
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = g[j * r + i];
                        }
                    }
                    accumulate(&mut grads, a, &ga);
                }
                Op::LogSoftmax(a) => {
                    let (r, c) = (self.nodes[id].rows, self.nodes[id].cols);
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        let gsum: f64 = grow.iter().sum();
                        for j in 0..c {
                            let sm = self.nodes[id].data[i * c + j].exp();
                            ga[i * c + j] = grow[j] - sm * gsum;
                        }
                    }
                    accumulate(&mut grads, a, &ga);
                }
                Op::Detach => {}
                Op::CustomScalar(a, ref cg) => {
                    let ga: Vec<f64> = cg.iter().map(|v| v * g[0]).collect();
                    accumulate(&mut grads, a, &ga);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(g) {
                *e += v;
            }
        }
        None => grads[id] = Some(g.to_vec()),
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, t: TensorRef) -> Option<&[f64]> {
        self.grads[t.0].as_deref()
    }

    /// Gradient of a leaf, or zeros if the loss does not depend on it.
    pub fn of(&self, t: TensorRef, len: usize) -> Vec<f64> {
        match self.grads[t.0].as_deref() {
            Some(g) => g.to_vec(),
            None => vec![0.0; len],
        }
    }
}

/// Adam optimizer state for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if cfg.lr <= 0.0 {
        return Err(GradError::Config("adam lr must be positive".into()));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(GradError::Shape("adam state size mismatch".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    Ok(())
}
