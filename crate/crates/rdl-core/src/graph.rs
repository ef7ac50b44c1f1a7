//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A `Graph` records each forward op as a node holding its output value and
//! enough saved context to run the backward pass. `backward` walks the tape
//! in reverse and accumulates gradients into the model's `Parameter`s;
//! repeated calls keep accumulating until the recording is released with
//! `consume`.

use crate::kernels;
use crate::tensor::{Parameter, Scalar, Tensor};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Handle to a node in one graph. Only valid for the graph that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-layer batch-norm running statistics, updated by train-mode forwards.
#[derive(Clone, Debug)]
pub struct BnState<E: Scalar> {
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
}

impl<E: Scalar> BnState<E> {
    pub fn new(channels: usize) -> BnState<E> {
        BnState {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], E::one()),
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: domain error ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("recording already released")]
    GraphConsumed,
    #[error("backward target must be a scalar, got shape {0}")]
    NotScalar(String),
}

fn shape_err(op: &'static str, detail: String) -> GraphError {
    GraphError::ShapeMismatch { op, detail }
}

enum Op<E: Scalar> {
    Input,
    Param { id: usize },
    Conv2d { x: Var, w: Var, stride: usize, padding: usize, groups: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, mode: Mode, mean: Tensor<E>, inv_std: Tensor<E> },
    Relu { x: Var },
    GlobalAvgPool { x: Var },
    Linear { x: Var, w: Var, b: Var },
    Dropout { x: Var, mask: Option<Tensor<E>> },
    SoftmaxT { x: Var, t: f64 },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor<E> },
    KlDiv { p: Tensor<E>, q: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, k: f64 },
}

struct Node<E: Scalar> {
    value: Tensor<E>,
    op: Op<E>,
}

pub struct Graph<E: Scalar> {
    nodes: Vec<Node<E>>,
    consumed: bool,
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Graph::new()
    }
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Graph<E> {
        Graph { nodes: Vec::new(), consumed: false }
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Releases the recording's buffers; later `backward` calls fail with
    /// `GraphConsumed`.
    pub fn consume(&mut self) {
        self.nodes.clear();
        self.consumed = true;
    }

    /// Constant leaf; gradients flowing into it are discarded.
    pub fn input(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Input)
    }

    /// Parameter leaf; `backward` accumulates into `params[id].grad`.
    pub fn param(&mut self, id: usize, value: &Tensor<E>) -> Var {
        self.push(value.clone(), Op::Param { id })
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var, GraphError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(shape_err("conv2d", format!("input {xs:?}, weight {ws:?} must be rank 4")));
        }
        let (m, n, k) = (xs[1], ws[0], ws[2]);
        if ws[3] != k {
            return Err(shape_err("conv2d", format!("kernel must be square, got {ws:?}")));
        }
        if groups == 0 || m % groups != 0 || n % groups != 0 {
            return Err(shape_err(
                "conv2d",
                format!("groups {groups} must divide in_channels {m} and out_channels {n}"),
            ));
        }
        if ws[1] != m / groups {
            return Err(shape_err(
                "conv2d",
                format!("weight expects {} input channels per group, input has {}", ws[1], m / groups),
            ));
        }
        if stride == 0 || xs[2] + 2 * padding < k || xs[3] + 2 * padding < k {
            return Err(shape_err(
                "conv2d",
                format!("kernel {k} exceeds padded input {}x{}", xs[2] + 2 * padding, xs[3] + 2 * padding),
            ));
        }
        let y = kernels::conv2d_forward(self.value(x), self.value(w), stride, padding, groups);
        Ok(self.push(y, Op::Conv2d { x, w, stride, padding, groups }))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BnState<E>,
        mode: Mode,
        momentum: f64,
        epsilon: f64,
    ) -> Result<Var, GraphError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err("batch_norm", format!("input must be rank 4, got {xs:?}")));
        }
        let c = xs[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                "batch_norm",
                format!(
                    "gamma {:?} / beta {:?} must both be [{}]",
                    self.shape(gamma),
                    self.shape(beta),
                    c
                ),
            ));
        }
        let (batch, h, w) = (xs[0], xs[2], xs[3]);
        let m = (batch * h * w) as f64;
        let xv = self.value(x);

        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for ch in 0..c {
                    let mut sum = 0.0;
                    for s in 0..batch {
                        for i in 0..h * w {
                            sum += xv.data()[(s * c + ch) * h * w + i].to_f64();
                        }
                    }
                    let mu = sum / m;
                    let mut sq = 0.0;
                    for s in 0..batch {
                        for i in 0..h * w {
                            let d = xv.data()[(s * c + ch) * h * w + i].to_f64() - mu;
                            sq += d * d;
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = sq / m;
                }
                for ch in 0..c {
                    let rm = state.running_mean.data()[ch].to_f64();
                    let rv = state.running_var.data()[ch].to_f64();
                    state.running_mean.data_mut()[ch] =
                        E::from_f64((1.0 - momentum) * rm + momentum * mean[ch]);
                    state.running_var.data_mut()[ch] =
                        E::from_f64((1.0 - momentum) * rv + momentum * var[ch]);
                }
                (mean, var)
            }
            Mode::Eval => (
                state.running_mean.data().iter().map(|v| v.to_f64()).collect(),
                state.running_var.data().iter().map(|v| v.to_f64()).collect(),
            ),
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let xv = self.value(x);
        let mut y = Tensor::zeros(&xs);
        {
            let yd = y.data_mut();
            for s in 0..batch {
                for ch in 0..c {
                    let g = gv[ch].to_f64();
                    let b = bv[ch].to_f64();
                    let (mu, is) = (mean[ch], inv_std[ch]);
                    let base = (s * c + ch) * h * w;
                    for i in 0..h * w {
                        let xh = (xv.data()[base + i].to_f64() - mu) * is;
                        yd[base + i] = E::from_f64(g * xh + b);
                    }
                }
            }
        }
        let mean_t = Tensor::new(&[c], mean.iter().map(|&v| E::from_f64(v)).collect());
        let inv_std_t = Tensor::new(&[c], inv_std.iter().map(|&v| E::from_f64(v)).collect());
        Ok(self.push(y, Op::BatchNorm { x, gamma, beta, mode, mean: mean_t, inv_std: inv_std_t }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.maximum(E::zero()));
        self.push(y, Op::Relu { x })
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, GraphError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err("global_avg_pool", format!("input must be rank 4, got {xs:?}")));
        }
        let (batch, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let xv = self.value(x);
        let mut y = Tensor::zeros(&[batch, c]);
        {
            let yd = y.data_mut();
            for s in 0..batch {
                for ch in 0..c {
                    let base = (s * c + ch) * h * w;
                    let mut sum = E::zero();
                    for i in 0..h * w {
                        sum += xv.data()[base + i];
                    }
                    yd[s * c + ch] = sum * E::from_f64(1.0 / (h * w) as f64);
                }
            }
        }
        Ok(self.push(y, Op::GlobalAvgPool { x }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, GraphError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(shape_err(
                "linear",
                format!("expected x [N,in], w [out,in], b [out]; got {xs:?}, {ws:?}, {bs:?}"),
            ));
        }
        if ws[1] != xs[1] || bs[0] != ws[0] {
            return Err(shape_err(
                "linear",
                format!("in_features {} vs input {}, bias {} vs out {}", ws[1], xs[1], bs[0], ws[0]),
            ));
        }
        let y = kernels::linear_forward(self.value(x), self.value(w), self.value(b));
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    /// Bernoulli dropout with 1/(1-p) scaling in train mode; identity in eval
    /// mode and at p = 0.
    pub fn dropout(
        &mut self,
        x: Var,
        p: f64,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var, GraphError> {
        if !(0.0..1.0).contains(&p) {
            return Err(GraphError::Domain { op: "dropout", detail: format!("p = {p} outside [0, 1)") });
        }
        if mode == Mode::Eval || p == 0.0 {
            let y = self.value(x).clone();
            return Ok(self.push(y, Op::Dropout { x, mask: None }));
        }
        use rand::Rng;
        let keep_scale = E::from_f64(1.0 / (1.0 - p));
        let xv = self.value(x);
        let mask = Tensor::from_fn(xv.shape(), |_| {
            if rng.gen_range(0.0..1.0) < p {
                E::zero()
            } else {
                keep_scale
            }
        });
        let mut y = xv.clone();
        for (yv, &mv) in y.data_mut().iter_mut().zip(mask.data()) {
            *yv *= mv;
        }
        Ok(self.push(y, Op::Dropout { x, mask: Some(mask) }))
    }

    /// Temperature-softened softmax over the last axis of a [N, C] tensor,
    /// computed in the max-subtraction stable form.
    pub fn softmax_t(&mut self, x: Var, t: f64) -> Result<Var, GraphError> {
        if t <= 0.0 {
            return Err(GraphError::Domain { op: "softmax_t", detail: format!("temperature {t} must be > 0") });
        }
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(shape_err("softmax_t", format!("input must be [N, C], got {xs:?}")));
        }
        if self.value(x).data().iter().any(|v| !v.is_finite()) {
            return Err(GraphError::Domain { op: "softmax_t", detail: "non-finite logits".into() });
        }
        let y = softmax_rows(self.value(x), t);
        Ok(self.push(y, Op::SoftmaxT { x, t }))
    }

    /// Mean over the batch of -log softmax(logits)[label].
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, GraphError> {
        let xs = self.shape(logits).to_vec();
        if xs.len() != 2 {
            return Err(shape_err("cross_entropy", format!("logits must be [N, C], got {xs:?}")));
        }
        if labels.len() != xs[0] {
            return Err(shape_err(
                "cross_entropy",
                format!("{} labels for batch of {}", labels.len(), xs[0]),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= xs[1]) {
            return Err(GraphError::Domain {
                op: "cross_entropy",
                detail: format!("label {bad} out of range for {} classes", xs[1]),
            });
        }
        let probs = softmax_rows(self.value(logits), 1.0);
        let (n, c) = (xs[0], xs[1]);
        let xv = self.value(logits);
        let mut total = 0.0f64;
        for r in 0..n {
            let row = &xv.data()[r * c..(r + 1) * c];
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.to_f64()));
            let lse = mx + row.iter().map(|v| (v.to_f64() - mx).exp()).sum::<f64>().ln();
            total += lse - row[labels[r]].to_f64();
        }
        let value = Tensor::scalar(E::from_f64(total / n as f64));
        Ok(self.push(value, Op::CrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    /// Row-wise KL(p || q) averaged over the batch, with p a constant and q a
    /// recorded probability tensor. 0 ln 0 is taken as 0.
    pub fn kl_div(&mut self, p: &Tensor<E>, q: Var) -> Result<Var, GraphError> {
        if p.shape() != self.shape(q) {
            return Err(shape_err(
                "kl_div",
                format!("p {:?} vs q {:?}", p.shape(), self.shape(q)),
            ));
        }
        if p.shape().len() != 2 {
            return Err(shape_err("kl_div", format!("expected [N, C], got {:?}", p.shape())));
        }
        let value = kl_rows_mean(p, self.value(q))?;
        let value = Tensor::scalar(E::from_f64(value));
        Ok(self.push(value, Op::KlDiv { p: p.clone(), q }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let kk = E::from_f64(k);
        let y = self.value(x).map(|v| v * kk);
        self.push(y, Op::Scale { x, k })
    }

    /// Accumulates d(loss)/d(param) into every reachable parameter's grad.
    pub fn backward(&mut self, loss: Var, params: &mut [Parameter<E>]) -> Result<(), GraphError> {
        if self.consumed {
            return Err(GraphError::GraphConsumed);
        }
        let loss_shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(GraphError::NotScalar(format!("{loss_shape:?}")));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_shape, E::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param { id } => params[*id].accumulate_grad(&g),
                Op::Conv2d { x, w, stride, padding, groups } => {
                    let (dx, dw) = kernels::conv2d_backward(
                        &self.nodes[x.0].value,
                        &self.nodes[w.0].value,
                        &g,
                        *stride,
                        *padding,
                        *groups,
                    );
                    acc(&mut grads[x.0], dx);
                    acc(&mut grads[w.0], dw);
                }
                Op::BatchNorm { x, gamma, beta, mode, mean, inv_std } => {
                    let (dx, dgamma, dbeta) = bn_backward(
                        &self.nodes[x.0].value,
                        &self.nodes[gamma.0].value,
                        mean,
                        inv_std,
                        &g,
                        *mode,
                    );
                    acc(&mut grads[x.0], dx);
                    acc(&mut grads[gamma.0], dgamma);
                    acc(&mut grads[beta.0], dbeta);
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[x.0].value;
                    let dx = Tensor::from_fn(xv.shape(), |j| {
                        if xv.data()[j] > E::zero() {
                            g.data()[j]
                        } else {
                            E::zero()
                        }
                    });
                    acc(&mut grads[x.0], dx);
                }
                Op::GlobalAvgPool { x } => {
                    let xs = self.nodes[x.0].value.shape();
                    let (batch, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let inv = E::from_f64(1.0 / (h * w) as f64);
                    let dx = Tensor::from_fn(xs, |j| {
                        let spatial = h * w;
                        let nc = j / spatial;
                        g.data()[nc] * inv
                    });
                    debug_assert_eq!(batch * c, g.numel());
                    acc(&mut grads[x.0], dx);
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) =
                        kernels::linear_backward(&self.nodes[x.0].value, &self.nodes[w.0].value, &g);
                    acc(&mut grads[x.0], dx);
                    acc(&mut grads[w.0], dw);
                    acc(&mut grads[b.0], db);
                }
                Op::Dropout { x, mask } => {
                    let dx = match mask {
                        Some(m) => {
                            let mut dx = g.clone();
                            for (dv, &mv) in dx.data_mut().iter_mut().zip(m.data()) {
                                *dv *= mv;
                            }
                            dx
                        }
                        None => g.clone(),
                    };
                    acc(&mut grads[x.0], dx);
                }
                Op::SoftmaxT { x, t } => {
                    let y = &self.nodes[i].value;
                    let (n, c) = (y.shape()[0], y.shape()[1]);
                    let mut dx = Tensor::zeros(y.shape());
                    {
                        let dxd = dx.data_mut();
                        for r in 0..n {
                            let yr = &y.data()[r * c..(r + 1) * c];
                            let gr = &g.data()[r * c..(r + 1) * c];
                            let dot: f64 =
                                yr.iter().zip(gr).map(|(&a, &b)| a.to_f64() * b.to_f64()).sum();
                            for j in 0..c {
                                dxd[r * c + j] = E::from_f64(
                                    yr[j].to_f64() * (gr[j].to_f64() - dot) / t,
                                );
                            }
                        }
                    }
                    acc(&mut grads[x.0], dx);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let g0 = g.item().to_f64();
                    let (n, c) = (probs.shape()[0], probs.shape()[1]);
                    let scale = g0 / n as f64;
                    let dlogits = Tensor::from_fn(probs.shape(), |j| {
                        let (r, col) = (j / c, j % c);
                        let onehot = if labels[r] == col { 1.0 } else { 0.0 };
                        E::from_f64((probs.data()[j].to_f64() - onehot) * scale)
                    });
                    acc(&mut grads[logits.0], dlogits);
                }
                Op::KlDiv { p, q } => {
                    let g0 = g.item().to_f64();
                    let qv = &self.nodes[q.0].value;
                    let n = p.shape()[0] as f64;
                    let dq = Tensor::from_fn(p.shape(), |j| {
                        let pj = p.data()[j].to_f64();
                        if pj == 0.0 {
                            E::zero()
                        } else {
                            E::from_f64(-pj / qv.data()[j].to_f64() * g0 / n)
                        }
                    });
                    acc(&mut grads[q.0], dq);
                }
                Op::Add { a, b } => {
                    acc(&mut grads[a.0], g.clone());
                    acc(&mut grads[b.0], g);
                }
                Op::Scale { x, k } => {
                    let kk = E::from_f64(*k);
                    acc(&mut grads[x.0], g.map(|v| v * kk));
                }
            }
        }
        Ok(())
    }
}

fn acc<E: Scalar>(slot: &mut Option<Tensor<E>>, g: Tensor<E>) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn bn_backward<E: Scalar>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    mean: &Tensor<E>,
    inv_std: &Tensor<E>,
    dy: &Tensor<E>,
    mode: Mode,
) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
    let xs = x.shape();
    let (batch, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let m = (batch * h * w) as f64;
    let mut dx = Tensor::zeros(xs);
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mu = mean.data()[ch].to_f64();
        let is = inv_std.data()[ch].to_f64();
        let gm = gamma.data()[ch].to_f64();
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xh = 0.0f64;
        for s in 0..batch {
            let base = (s * c + ch) * h * w;
            for i in 0..h * w {
                let d = dy.data()[base + i].to_f64();
                let xh = (x.data()[base + i].to_f64() - mu) * is;
                sum_dy += d;
                sum_dy_xh += d * xh;
            }
        }
        dgamma.data_mut()[ch] = E::from_f64(sum_dy_xh);
        dbeta.data_mut()[ch] = E::from_f64(sum_dy);
        for s in 0..batch {
            let base = (s * c + ch) * h * w;
            for i in 0..h * w {
                let d = dy.data()[base + i].to_f64();
                let v = match mode {
                    Mode::Train => {
                        let xh = (x.data()[base + i].to_f64() - mu) * is;
                        gm * is / m * (m * d - sum_dy - xh * sum_dy_xh)
                    }
                    Mode::Eval => gm * is * d,
                };
                dx.data_mut()[base + i] = E::from_f64(v);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Softmax with temperature over each row of a [N, C] tensor (stable form).
pub fn softmax_rows<E: Scalar>(x: &Tensor<E>, t: f64) -> Tensor<E> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let mut y = Tensor::zeros(x.shape());
    {
        let yd = y.data_mut();
        for r in 0..n {
            let row = &x.data()[r * c..(r + 1) * c];
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.to_f64()));
            let mut denom = 0.0f64;
            let mut exps = vec![0.0f64; c];
            for j in 0..c {
                let e = ((row[j].to_f64() - mx) / t).exp();
                exps[j] = e;
                denom += e;
            }
            for j in 0..c {
                yd[r * c + j] = E::from_f64(exps[j] / denom);
            }
        }
    }
    y
}

/// Row-wise sum of p ln(p/q), averaged over rows. 0 ln 0 = 0; a zero in q
/// where p > 0 is a domain error.
pub fn kl_rows_mean<E: Scalar>(p: &Tensor<E>, q: &Tensor<E>) -> Result<f64, GraphError> {
    assert_eq!(p.shape(), q.shape());
    let (n, c) = (p.shape()[0], p.shape()[1]);
    let mut total = 0.0f64;
    for j in 0..n * c {
        let pj = p.data()[j].to_f64();
        if pj == 0.0 {
            continue;
        }
        let qj = q.data()[j].to_f64();
        if qj <= 0.0 {
            return Err(GraphError::Domain {
                op: "kl_div",
                detail: format!("q = {qj} at flat index {j} where p = {pj} > 0"),
            });
        }
        total += pj * (pj / qj).ln();
    }
    Ok(total / n as f64)
}
