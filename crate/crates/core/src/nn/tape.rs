//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the tape once in reverse. Nodes record whether any trainable leaf
//! feeds them, so gradients are only propagated where they are needed.
//! Frozen parameters enter the tape as constants: gradients still flow
//! *through* the operations they take part in, but never into them.

use std::collections::BTreeMap;

use super::{NnError, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    AddRow {
        x: Var,
        row: Var,
        cols: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Silu(Var),
    Tanh(Var),
    Sigmoid(Var),
    MeanRows {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Reshape(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Upsample2x {
        x: Var,
        c: usize,
        h: usize,
        w: usize,
    },
    SoftmaxChannels {
        x: Var,
        c: usize,
        hw: usize,
    },
    CrossEntropy {
        logits: Var,
        c: usize,
        labels: Vec<u8>,
        probs: Vec<f64>,
    },
    SoftDice {
        probs: Var,
        c: usize,
        labels: Vec<u8>,
        smooth: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient with respect to a parameter, summed over all of its uses.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(id, t)| (*id, t))
    }

    /// Gradient with respect to any tape node; zeros when the loss does not
    /// depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.nodes[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

/// `c = beta * c + op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
/// A transposed flag means the operand is stored in its transposed layout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices hold exactly the extents described by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; no gradient is propagated into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is wanted (used for input-gradient checks).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Brings a stored parameter onto the tape. Frozen parameters and buffers
    /// enter as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let rg = p.updatable();
        self.push(p.value.clone(), Op::Param(id), rg)
    }

    fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NnError {
        NnError::ShapeMismatch {
            op,
            left: a.to_vec(),
            right: b.to_vec(),
        }
    }

    /// `a · b` with `a` of shape `[k]` or `[m, k]` and `b` of shape `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k, vector) = match sa.as_slice() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => return Err(Self::mismatch("matmul", &sa, &sb)),
        };
        let n = match sb.as_slice() {
            [kb, n] if *kb == k => *n,
            _ => return Err(Self::mismatch("matmul", &sa, &sb)),
        };
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        let shape = if vector { vec![n] } else { vec![m, n] };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(&shape, out).expect("matmul shape"),
            Op::MatMul { a, b, m, k, n },
            rg,
        ))
    }

    /// Adds a length-`n` row to every row of `x` (shape `[n]` or `[m, n]`).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NnError> {
        let sx = self.shape(x).to_vec();
        let sr = self.shape(row).to_vec();
        let cols = *sx.last().unwrap_or(&0);
        if self.value(row).len() != cols || sr.iter().filter(|&&e| e != 1).count() > 1 {
            return Err(Self::mismatch("add_row", &sx, &sr));
        }
        let r = self.value(row).data();
        let mut out = self.value(x).data().to_vec();
        for chunk in out.chunks_exact_mut(cols.max(1)) {
            for (o, b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(
            Tensor::new(&sx, out).expect("shape"),
            Op::AddRow { x, row, cols },
            rg,
        ))
    }

    /// Affine map `x · w + b`; `w` has shape `[in, out]`, `b` has `out` values.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::mismatch(name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a), data).expect("shape");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Column means of an `[m, n]` matrix, shape `[n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        let (rows, cols) = match s.as_slice() {
            [m, n] if *m > 0 => (*m, *n),
            _ => return Err(Self::mismatch("mean_rows", &s, &[])),
        };
        let mut out = vec![0.0; cols];
        for row in self.value(x).data().chunks_exact(cols.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / rows as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(x);
        Ok(self.push(Tensor::vector(out), Op::MeanRows { x, rows, cols }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.sum() / t.len().max(1) as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::mismatch("mse", self.shape(a), self.shape(b)));
        }
        let n = self.value(a).len().max(1) as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b), rg))
    }

    /// 2-D cross-correlation of a `[c, h, w]` input with a `[o, c, kh, kw]`
    /// kernel plus per-output-channel bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, NnError> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        let (c, h, w) = match si.as_slice() {
            [c, h, w] => (*c, *h, *w),
            _ => return Err(Self::mismatch("conv2d", &si, &sk)),
        };
        let (o, kc, kh, kw) = match sk.as_slice() {
            [o, kc, kh, kw] => (*o, *kc, *kh, *kw),
            _ => return Err(Self::mismatch("conv2d", &si, &sk)),
        };
        if kc != c || stride == 0 {
            return Err(Self::mismatch("conv2d", &si, &sk));
        }
        if self.value(bias).len() != o {
            return Err(Self::mismatch("conv2d bias", &sk, self.shape(bias)));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(NnError::KernelTooLarge {
                kernel: [kh, kw],
                padded: [h + 2 * padding, w + 2 * padding],
            });
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let geom = ConvGeom {
            c,
            h,
            w,
            o,
            kh,
            kw,
            stride,
            pad: padding,
            oh,
            ow,
        };
        let cols = im2col(self.value(input).data(), &geom);
        let hw = geom.out_pixels();
        let mut out = vec![0.0; o * hw];
        gemm(
            o,
            geom.patch(),
            hw,
            self.value(kernel).data(),
            false,
            &cols,
            false,
            &mut out,
            0.0,
        );
        for (plane, b) in out.chunks_exact_mut(hw).zip(self.value(bias).data()) {
            plane.iter_mut().for_each(|v| *v += b);
        }
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        // Keep the column buffer only when it is needed for the kernel gradient.
        let cols = if self.rg(kernel) { cols } else { Vec::new() };
        Ok(self.push(
            Tensor::new(&[o, oh, ow], out).expect("conv shape"),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Nearest-neighbour 2x upsampling of a `[c, h, w]` tensor.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        let (c, h, w) = match s.as_slice() {
            [c, h, w] => (*c, *h, *w),
            _ => return Err(Self::mismatch("upsample2x", &s, &[])),
        };
        let src = self.value(x).data();
        let mut out = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(ch * 2 * h + y) * 2 * w + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&[c, 2 * h, 2 * w], out).expect("shape"),
            Op::Upsample2x { x, c, h, w },
            rg,
        ))
    }

    /// Softmax across the leading (channel) axis at every pixel.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Self::mismatch("softmax_channels", &s, &[]));
        }
        let c = s[0];
        let hw = self.value(x).len() / c.max(1);
        let probs = softmax_planes(self.value(x).data(), c, hw);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&s, probs).expect("shape"),
            Op::SoftmaxChannels { x, c, hw },
            rg,
        ))
    }

    /// Mean per-pixel cross-entropy between channel logits `[c, ...]` and
    /// integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var, NnError> {
        let s = self.shape(logits).to_vec();
        let c = *s.first().unwrap_or(&0);
        let hw = self.value(logits).len() / c.max(1);
        if s.len() < 2 || labels.len() != hw || labels.iter().any(|&l| l as usize >= c) {
            return Err(Self::mismatch("cross_entropy", &s, &[labels.len()]));
        }
        let probs = softmax_planes(self.value(logits).data(), c, hw);
        let data = self.value(logits).data();
        let mut loss = 0.0;
        for (p, &l) in labels.iter().enumerate() {
            // log-sum-exp recomputed for the exact log-probability
            let mx = (0..c)
                .map(|k| data[k * hw + p])
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = mx
                + (0..c)
                    .map(|k| (data[k * hw + p] - mx).exp())
                    .sum::<f64>()
                    .ln();
            loss += lse - data[l as usize * hw + p];
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / hw as f64),
            Op::CrossEntropy {
                logits,
                c,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// `1 - mean_c (2 I_c + s) / (P_c + G_c + s)` over probability planes.
    pub fn soft_dice_loss(
        &mut self,
        probs: Var,
        labels: &[u8],
        smooth: f64,
    ) -> Result<Var, NnError> {
        let s = self.shape(probs).to_vec();
        let c = *s.first().unwrap_or(&0);
        let hw = self.value(probs).len() / c.max(1);
        if s.len() < 2 || labels.len() != hw || labels.iter().any(|&l| l as usize >= c) {
            return Err(Self::mismatch("soft_dice_loss", &s, &[labels.len()]));
        }
        let (inter, psum, gsum) = dice_sums(self.value(probs).data(), labels, c, hw);
        let mut dice = 0.0;
        for k in 0..c {
            dice += (2.0 * inter[k] + smooth) / (psum[k] + gsum[k] + smooth);
        }
        let rg = self.rg(probs);
        Ok(self.push(
            Tensor::scalar(1.0 - dice / c as f64),
            Op::SoftDice {
                probs,
                c,
                labels: labels.to_vec(),
                smooth,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if !self.value(loss).is_scalar() {
            return Err(NnError::NotScalar(self.shape(loss).to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut params = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            if let Op::Param(id) = node.op {
                let entry = params
                    .entry(id)
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
                for (a, b) in Tensor::data_mut(entry).iter_mut().zip(&g) {
                    *a += b;
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients {
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul { a, b, m, k, n } => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if let Some(ga) = acc(nodes, grads, a) {
                    gemm(m, n, k, g, false, bv, true, ga, 1.0);
                }
                if let Some(gb) = acc(nodes, grads, b) {
                    gemm(k, m, n, av, true, g, false, gb, 1.0);
                }
            }
            &Op::AddRow { x, row, cols } => {
                if let Some(gx) = acc(nodes, grads, x) {
                    add_into(gx, g);
                }
                if let Some(gr) = acc(nodes, grads, row) {
                    for chunk in g.chunks_exact(cols.max(1)) {
                        add_into(gr, chunk);
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = acc(nodes, grads, a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc(nodes, grads, b) {
                    add_into(gb, g);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = acc(nodes, grads, a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc(nodes, grads, b) {
                    gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v);
                }
            }
            &Op::Mul(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if let Some(ga) = acc(nodes, grads, a) {
                    for ((o, gv), y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gv * y;
                    }
                }
                if let Some(gb) = acc(nodes, grads, b) {
                    for ((o, gv), x) in gb.iter_mut().zip(g).zip(av) {
                        *o += gv * x;
                    }
                }
            }
            &Op::Scale(x, c) => {
                if let Some(gx) = acc(nodes, grads, x) {
                    gx.iter_mut().zip(g).for_each(|(o, v)| *o += c * v);
                }
            }
            &Op::Relu(x) => {
                let y = node.value.data();
                if let Some(gx) = acc(nodes, grads, x) {
                    for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                        if *yv > 0.0 {
                            *o += gv;
                        }
                    }
                }
            }
            &Op::Silu(x) => {
                let xv = nodes[x.0].value.data();
                if let Some(gx) = acc(nodes, grads, x) {
                    for ((o, gv), &v) in gx.iter_mut().zip(g).zip(xv) {
                        let s = sigmoid(v);
                        *o += gv * s * (1.0 + v * (1.0 - s));
                    }
                }
            }
            &Op::Tanh(x) => {
                let y = node.value.data();
                if let Some(gx) = acc(nodes, grads, x) {
                    for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
            }
            &Op::Sigmoid(x) => {
                let y = node.value.data();
                if let Some(gx) = acc(nodes, grads, x) {
                    for ((o, gv), yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * yv * (1.0 - yv);
                    }
                }
            }
            &Op::MeanRows { x, rows, cols } => {
                if let Some(gx) = acc(nodes, grads, x) {
                    let inv = 1.0 / rows as f64;
                    for chunk in gx.chunks_exact_mut(cols.max(1)) {
                        for (o, gv) in chunk.iter_mut().zip(g) {
                            *o += gv * inv;
                        }
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = acc(nodes, grads, x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            &Op::Mean(x) => {
                if let Some(gx) = acc(nodes, grads, x) {
                    let s = g[0] / gx.len().max(1) as f64;
                    gx.iter_mut().for_each(|o| *o += s);
                }
            }
            &Op::Mse(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                let s = 2.0 * g[0] / av.len().max(1) as f64;
                if let Some(ga) = acc(nodes, grads, a) {
                    for ((o, x), y) in ga.iter_mut().zip(av).zip(bv) {
                        *o += s * (x - y);
                    }
                }
                if let Some(gb) = acc(nodes, grads, b) {
                    for ((o, x), y) in gb.iter_mut().zip(av).zip(bv) {
                        *o -= s * (x - y);
                    }
                }
            }
            &Op::Reshape(x) => {
                if let Some(gx) = acc(nodes, grads, x) {
                    add_into(gx, g);
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let hw = geom.out_pixels();
                let patch = geom.patch();
                if let Some(gb) = acc(nodes, grads, *bias) {
                    for (o, plane) in gb.iter_mut().zip(g.chunks_exact(hw)) {
                        *o += plane.iter().sum::<f64>();
                    }
                }
                if let Some(gk) = acc(nodes, grads, *kernel) {
                    gemm(geom.o, hw, patch, g, false, cols, true, gk, 1.0);
                }
                if nodes[input.0].requires_grad {
                    let kv = nodes[kernel.0].value.data();
                    let mut dcols = vec![0.0; patch * hw];
                    gemm(patch, geom.o, hw, kv, true, g, false, &mut dcols, 0.0);
                    if let Some(gi) = acc(nodes, grads, *input) {
                        col2im(&dcols, geom, gi);
                    }
                }
            }
            &Op::Upsample2x { x, c, h, w } => {
                if let Some(gx) = acc(nodes, grads, x) {
                    for ch in 0..c {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                gx[(ch * h + y / 2) * w + xx / 2] +=
                                    g[(ch * 2 * h + y) * 2 * w + xx];
                            }
                        }
                    }
                }
            }
            &Op::SoftmaxChannels { x, c, hw } => {
                let y = node.value.data();
                if let Some(gx) = acc(nodes, grads, x) {
                    for p in 0..hw {
                        let dot: f64 = (0..c).map(|k| y[k * hw + p] * g[k * hw + p]).sum();
                        for k in 0..c {
                            let i = k * hw + p;
                            gx[i] += y[i] * (g[i] - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                c,
                labels,
                probs,
            } => {
                if let Some(gx) = acc(nodes, grads, *logits) {
                    let hw = labels.len();
                    let s = g[0] / hw as f64;
                    for k in 0..*c {
                        for (p, &l) in labels.iter().enumerate() {
                            let i = k * hw + p;
                            let target = if l as usize == k { 1.0 } else { 0.0 };
                            gx[i] += s * (probs[i] - target);
                        }
                    }
                }
            }
            Op::SoftDice {
                probs,
                c,
                labels,
                smooth,
            } => {
                let pv = nodes[probs.0].value.data();
                let hw = labels.len();
                let (inter, psum, gsum) = dice_sums(pv, labels, *c, hw);
                if let Some(gp) = acc(nodes, grads, *probs) {
                    for k in 0..*c {
                        let den = psum[k] + gsum[k] + smooth;
                        let num = 2.0 * inter[k] + smooth;
                        let scale = -g[0] / *c as f64;
                        for (p, &l) in labels.iter().enumerate() {
                            let y = if l as usize == k { 1.0 } else { 0.0 };
                            gp[k * hw + p] += scale * (2.0 * y * den - num) / (den * den);
                        }
                    }
                }
            }
        }
    }
}

fn acc<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(o, v)| *o += v);
}

fn softmax_planes(data: &[f64], c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * hw];
    for p in 0..hw {
        let mx = (0..c)
            .map(|k| data[k * hw + p])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in 0..c {
            let e = (data[k * hw + p] - mx).exp();
            out[k * hw + p] = e;
            z += e;
        }
        for k in 0..c {
            out[k * hw + p] /= z;
        }
    }
    out
}

fn dice_sums(p: &[f64], labels: &[u8], c: usize, hw: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut inter = vec![0.0; c];
    let mut psum = vec![0.0; c];
    let mut gsum = vec![0.0; c];
    for k in 0..c {
        let plane = &p[k * hw..(k + 1) * hw];
        psum[k] = plane.iter().sum();
        for (pv, &l) in plane.iter().zip(labels) {
            if l as usize == k {
                inter[k] += pv;
                gsum[k] += 1.0;
            }
        }
    }
    (inter, psum, gsum)
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let hw = g.out_pixels();
    let mut cols = vec![0.0; g.patch() * hw];
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &x[(ci * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let hw = g.out_pixels();
    for ci in 0..g.c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (ci * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}
