//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its output value and enough context to run the adjoint. Parameters are
//! borrowed from the caller's store for the lifetime of the graph, so building
//! a graph per training step copies no weights. [`Graph::backward`] walks the
//! tape once in reverse and returns the accumulated adjoints.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::physical::{self, StatisticsPlan};

/// Owned real array with a shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        Self { shape, data }
    }

    /// Row vector `[1, n]`.
    pub fn row(data: Vec<f64>) -> Self {
        Self::new(vec![1, data.len()], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a parameter tensor in a [`crate::params::ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Geometry of a 2-D transposed convolution on `[C, H, W]` tensors with a
/// `[C_in, C_out, K, K]` kernel. Output is `[C_out, H*stride, W*stride]`;
/// the full transposed output is cropped by `pad` at the leading edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub h_in: usize,
    pub w_in: usize,
}

impl ConvGeometry {
    pub fn pad(&self) -> usize {
        self.kernel.saturating_sub(self.stride) / 2
    }

    pub fn h_out(&self) -> usize {
        self.h_in * self.stride
    }

    pub fn w_out(&self) -> usize {
        self.w_in * self.stride
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.c_in, self.h_in, self.w_in]
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.c_out, self.h_out(), self.w_out()]
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.c_in, self.c_out, self.kernel, self.kernel]
    }

    /// Calls `f(kernel_index, out_start, in_start, count)` for every run of
    /// taps along one input row: input `in_start + t` feeds output
    /// `out_start + stride * t` for `t < count`. Fixed iteration order.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (ho, wo, pad) = (self.h_out(), self.w_out(), self.pad());
        let (k, s) = (self.kernel, self.stride);
        for c in 0..self.c_in {
            for o in 0..self.c_out {
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((c * self.c_out + o) * k + ky) * k + kx;
                        // valid j: 0 <= j*s + kx - pad < wo
                        let j_lo = pad.saturating_sub(kx).div_ceil(s);
                        let j_hi = (wo + pad).saturating_sub(kx).div_ceil(s).min(self.w_in);
                        if j_lo >= j_hi {
                            continue;
                        }
                        for i in 0..self.h_in {
                            let y = i * s + ky;
                            if y < pad || y - pad >= ho {
                                continue;
                            }
                            let in_start = (c * self.h_in + i) * self.w_in + j_lo;
                            let out_start = (o * ho + y - pad) * wo + j_lo * s + kx - pad;
                            f(widx, out_start, in_start, j_hi - j_lo);
                        }
                    }
                }
            }
        }
    }

    /// Dense `[in, out]` matrix equivalent to this convolution with kernel `w`.
    pub fn lower(&self, w: &[f64]) -> Vec<f64> {
        let n_in = self.c_in * self.h_in * self.w_in;
        let n_out = self.c_out * self.h_out() * self.w_out();
        let mut m = vec![0.0; n_in * n_out];
        let s = self.stride;
        self.for_each_run(|wi, out_start, in_start, count| {
            for t in 0..count {
                m[(in_start + t) * n_out + out_start + s * t] += w[wi];
            }
        });
        m
    }
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

enum Data<'p> {
    Owned(Vec<f64>),
    Borrowed(&'p [f64]),
}

impl Data<'_> {
    fn as_slice(&self) -> &[f64] {
        match self {
            Data::Owned(v) => v,
            Data::Borrowed(s) => s,
        }
    }
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    SliceRow(Var, usize),
    Concat(Vec<Var>),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Mean(Var),
    ConvTranspose2d {
        input: Var,
        weight: Var,
        geom: ConvGeometry,
    },
    InstanceNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    RnnCell {
        x: Var,
        h: Var,
        wx: Var,
        wh: Var,
        b: Var,
    },
    ChannelsLast(Var),
    DensityMatrix {
        raw: Var,
        trace: f64,
    },
    Statistics {
        rho: Var,
        plan: Arc<StatisticsPlan>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
}

struct Node<'p> {
    data: Data<'p>,
    shape: Vec<usize>,
    op: Op,
    needs_grad: bool,
}

/// One forward pass, recorded for differentiation.
#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

/// Adjoints of every node after [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradients of every parameter leaf; a parameter used twice in one
    /// graph is summed.
    pub fn params(mut self) -> Vec<(ParamId, Vec<f64>)> {
        let mut out: Vec<(ParamId, Vec<f64>)> = Vec::new();
        for &(id, node) in &self.params {
            let Some(g) = self.grads[node].take() else { continue };
            match out.iter_mut().find(|(pid, _)| *pid == id) {
                Some((_, acc)) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => out.push((id, g)),
            }
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += s * bv;
            }
        }
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

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            data: Data::Owned(data),
            shape,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].data.as_slice()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            data: Data::Owned(t.data),
            shape: t.shape,
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf borrowing its values.
    pub fn param(&mut self, id: ParamId, shape: &[usize], data: &'p [f64]) -> Var {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "parameter shape/data mismatch");
        self.nodes.push(Node {
            data: Data::Borrowed(data),
            shape: shape.to_vec(),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Parameter leaf that is read but not differentiated (frozen network).
    pub fn frozen(&mut self, shape: &[usize], data: &'p [f64]) -> Var {
        self.nodes.push(Node {
            data: Data::Borrowed(data),
            shape: shape.to_vec(),
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// `[m, k] x [k, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), m, k, n, &mut out);
        Ok(self.push(out, vec![m, n], Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a `[n]` bias to every row of `[m, n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(shape_err("add_bias", sx, sb));
        }
        let n = sb[0];
        let bias = self.value(b);
        let out: Vec<f64> = self.value(x).iter().enumerate().map(|(i, v)| v + bias[i % n]).collect();
        let shape = sx.to_vec();
        Ok(self.push(out, shape, Op::AddBias(x, b), &[x, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Scale(a, s), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(shape_err("reshape", self.shape(a), shape));
        }
        let out = self.value(a).to_vec();
        Ok(self.push(out, shape.to_vec(), Op::Reshape(a), &[a]))
    }

    /// Row `row` of a 2-D tensor as a `[1, n]` node.
    pub fn slice_row(&mut self, a: Var, row: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || row >= s[0] {
            return Err(shape_err("slice_row", s, &[row]));
        }
        let n = s[1];
        let out = self.value(a)[row * n..(row + 1) * n].to_vec();
        Ok(self.push(out, vec![1, n], Op::SliceRow(a, row), &[a]))
    }

    /// Flattens and concatenates into a `[1, sum]` row.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let out: Vec<f64> = parts.iter().flat_map(|v| self.value(*v).iter().copied()).collect();
        let n = out.len();
        self.push(out, vec![1, n], Op::Concat(parts.to_vec()), parts)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).iter().map(|&x| if x >= 0.0 { x } else { slope * x }).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Sigmoid(a), &[a])
    }

    /// `ln(1 + e^x)`; `softplus(-z) = -ln sigmoid(z)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| softplus(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Softplus(a), &[a])
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push(vec![m], vec![1], Op::Mean(a), &[a])
    }

    pub fn conv2d_transpose(&mut self, input: Var, weight: Var, geom: ConvGeometry) -> Result<Var> {
        if self.shape(input) != geom.input_shape() {
            return Err(shape_err("conv2d_transpose", self.shape(input), &geom.input_shape()));
        }
        if self.shape(weight) != geom.kernel_shape() {
            return Err(shape_err("conv2d_transpose", self.shape(weight), &geom.kernel_shape()));
        }
        let out_shape = geom.output_shape();
        let mut out = vec![0.0; out_shape.iter().product()];
        let (x, w) = (self.value(input), self.value(weight));
        geom.for_each_run(|wi, out_start, in_start, count| {
            let wv = w[wi];
            let xs = &x[in_start..in_start + count];
            if geom.stride == 1 {
                for (o, xv) in out[out_start..out_start + count].iter_mut().zip(xs) {
                    *o += wv * xv;
                }
            } else {
                for (o, xv) in out[out_start..].iter_mut().step_by(geom.stride).zip(xs) {
                    *o += wv * xv;
                }
            }
        });
        Ok(self.push(
            out,
            out_shape.to_vec(),
            Op::ConvTranspose2d { input, weight, geom },
            &[input, weight],
        ))
    }

    /// Per-channel normalization over the spatial axes of `[C, H, W]`,
    /// followed by a learned gain and offset per channel.
    pub fn instance_norm(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 3 {
            return Err(shape_err("instance_norm", &s, &[0, 0, 0]));
        }
        let (c, hw) = (s[0], s[1] * s[2]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("instance_norm", &s, self.shape(gamma)));
        }
        let x = self.value(input);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        let mut out = vec![0.0; x.len()];
        for ch in 0..c {
            let xs = &x[ch * hw..(ch + 1) * hw];
            let mean = xs.iter().sum::<f64>() / hw as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
            let is = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
            inv_std[ch] = is;
            for k in 0..hw {
                let xh = (xs[k] - mean) * is;
                xhat[ch * hw + k] = xh;
                out[ch * hw + k] = g[ch] * xh + b[ch];
            }
        }
        Ok(self.push(
            out,
            s,
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[input, gamma, beta],
        ))
    }

    /// `h_t = tanh(x_t W_x + h_{t-1} W_h + b)` for row vectors.
    pub fn rnn_cell(&mut self, x: Var, h: Var, wx: Var, wh: Var, b: Var) -> Result<Var> {
        let (sx, sh, swx, swh, sb) = (self.shape(x), self.shape(h), self.shape(wx), self.shape(wh), self.shape(b));
        let units = sb.first().copied().unwrap_or(0);
        let n_in = sx.iter().product::<usize>();
        if sh.iter().product::<usize>() != units || swx != [n_in, units] || swh != [units, units] || sb.len() != 1 {
            return Err(shape_err("simple_rnn_cell", swx, swh));
        }
        let mut z = self.value(b).to_vec();
        matmul_into(self.value(x), self.value(wx), 1, n_in, units, &mut z);
        matmul_into(self.value(h), self.value(wh), 1, units, units, &mut z);
        z.iter_mut().for_each(|v| *v = v.tanh());
        Ok(self.push(z, vec![1, units], Op::RnnCell { x, h, wx, wh, b }, &[x, h, wx, wh, b]))
    }

    /// `[C, H, W] -> [H, W, C]`
    pub fn channels_last(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 {
            return Err(shape_err("channels_last", &s, &[0, 0, 0]));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let x = self.value(a);
        let mut out = vec![0.0; x.len()];
        for ch in 0..c {
            for p in 0..h * w {
                out[p * c + ch] = x[ch * h * w + p];
            }
        }
        Ok(self.push(out, vec![h, w, c], Op::ChannelsLast(a), &[a]))
    }

    /// `rho = T T^dagger / Tr(T T^dagger)` on a packed `[d, d, 2]` input.
    pub fn density_matrix(&mut self, raw: Var) -> Result<Var> {
        let len = self.value(raw).len();
        let d = physical::packed_dim(len).ok_or_else(|| shape_err("density_matrix", self.shape(raw), &[0, 0, 2]))?;
        let (rho, trace) = physical::density_forward(self.value(raw), d)?;
        Ok(self.push(rho, vec![d, d, 2], Op::DensityMatrix { raw, trace }, &[raw]))
    }

    /// Measurement statistics of a packed density matrix, shape `[1, L]`.
    pub fn statistics(&mut self, rho: Var, plan: Arc<StatisticsPlan>) -> Result<Var> {
        plan.check_input(self.value(rho).len())?;
        let out = plan.forward(self.value(rho));
        let n = out.len();
        Ok(self.push(out, vec![1, n], Op::Statistics { rho, plan }, &[rho]))
    }

    /// `(1/n) sum (pred - target)^2`, shape `[1]`.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(shape_err("mse", self.shape(pred), &[target.len()]));
        }
        let loss = p.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            &[pred],
        ))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed_len = self.value(output).len();
        grads[output.0] = Some(vec![1.0; seed_len]);
        let mut params = Vec::new();

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Param(id) = node.op {
                params.push((id, idx));
            }
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads, params }
    }

    fn propagate(&self, node: &Node<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.data.as_slice();
        // adjoint buffer for input `v`, allocated on first use
        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (av, bv) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    let ga = acc(grads, *a, m * k);
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += gi.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if wants(*b) {
                    let gb = acc(grads, *b, k * n);
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let s = av[i * k + p];
                            if s == 0.0 {
                                continue;
                            }
                            for (o, &x) in gb[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                *o += s * x;
                            }
                        }
                    }
                }
            }
            Op::AddBias(x, b) => {
                let n = self.shape(*b)[0];
                if wants(*x) {
                    acc(grads, *x, g.len()).iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if wants(*b) {
                    let gb = acc(grads, *b, n);
                    for (i, v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        acc(grads, v, g.len()).iter_mut().zip(g).for_each(|(o, x)| *o += x);
                    }
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    acc(grads, *a, g.len()).iter_mut().zip(g).for_each(|(o, x)| *o += s * x);
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    acc(grads, *a, g.len()).iter_mut().zip(g).for_each(|(o, x)| *o += x);
                }
            }
            Op::SliceRow(a, row) => {
                if wants(*a) {
                    let len = self.value(*a).len();
                    let n = g.len();
                    acc(grads, *a, len)[row * n..(row + 1) * n]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(o, x)| *o += x);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &v in parts {
                    let len = self.value(v).len();
                    if wants(v) {
                        acc(grads, v, len)
                            .iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(o, x)| *o += x);
                    }
                    offset += len;
                }
            }
            Op::LeakyRelu(a, slope) => {
                if wants(*a) {
                    let x = self.value(*a);
                    let ga = acc(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += if x[i] >= 0.0 { g[i] } else { slope * g[i] };
                    }
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    let ga = acc(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    let ga = acc(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                }
            }
            Op::Softplus(a) => {
                if wants(*a) {
                    let x = self.value(*a);
                    let ga = acc(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * sigmoid(x[i]);
                    }
                }
            }
            Op::Mean(a) => {
                if wants(*a) {
                    let len = self.value(*a).len();
                    let s = g[0] / len as f64;
                    acc(grads, *a, len).iter_mut().for_each(|o| *o += s);
                }
            }
            Op::ConvTranspose2d { input, weight, geom } => {
                if wants(*input) {
                    let w = self.value(*weight);
                    let gi = acc(grads, *input, self.value(*input).len());
                    geom.for_each_run(|wi, out_start, in_start, count| {
                        let wv = w[wi];
                        let gs = &mut gi[in_start..in_start + count];
                        if geom.stride == 1 {
                            for (o, gv) in gs.iter_mut().zip(&g[out_start..out_start + count]) {
                                *o += wv * gv;
                            }
                        } else {
                            for (o, gv) in gs.iter_mut().zip(g[out_start..].iter().step_by(geom.stride)) {
                                *o += wv * gv;
                            }
                        }
                    });
                }
                if wants(*weight) {
                    let x = self.value(*input);
                    let gw = acc(grads, *weight, self.value(*weight).len());
                    geom.for_each_run(|wi, out_start, in_start, count| {
                        let xs = &x[in_start..in_start + count];
                        gw[wi] += if geom.stride == 1 {
                            xs.iter().zip(&g[out_start..out_start + count]).map(|(a, b)| a * b).sum::<f64>()
                        } else {
                            xs.iter().zip(g[out_start..].iter().step_by(geom.stride)).map(|(a, b)| a * b).sum::<f64>()
                        };
                    });
                }
            }
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let hw = xhat.len() / c;
                let gam = self.value(*gamma);
                if wants(*gamma) {
                    let gg = acc(grads, *gamma, c);
                    for ch in 0..c {
                        gg[ch] += (0..hw).map(|k| g[ch * hw + k] * xhat[ch * hw + k]).sum::<f64>();
                    }
                }
                if wants(*beta) {
                    let gb = acc(grads, *beta, c);
                    for ch in 0..c {
                        gb[ch] += g[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
                    }
                }
                if wants(*input) {
                    let gx = acc(grads, *input, xhat.len());
                    for ch in 0..c {
                        let r = ch * hw..(ch + 1) * hw;
                        let dxh: Vec<f64> = g[r.clone()].iter().map(|v| v * gam[ch]).collect();
                        let sum_d: f64 = dxh.iter().sum();
                        let sum_dx: f64 = dxh.iter().zip(&xhat[r.clone()]).map(|(a, b)| a * b).sum();
                        let scale = inv_std[ch] / hw as f64;
                        for k in 0..hw {
                            gx[ch * hw + k] +=
                                scale * (hw as f64 * dxh[k] - sum_d - xhat[ch * hw + k] * sum_dx);
                        }
                    }
                }
            }
            Op::RnnCell { x, h, wx, wh, b } => {
                let units = g.len();
                let dz: Vec<f64> = g.iter().zip(out).map(|(gv, hv)| gv * (1.0 - hv * hv)).collect();
                let n_in = self.value(*x).len();
                if wants(*b) {
                    acc(grads, *b, units).iter_mut().zip(&dz).for_each(|(o, v)| *o += v);
                }
                for (inp, w, width) in [(*x, *wx, n_in), (*h, *wh, units)] {
                    if wants(inp) {
                        let wv = self.value(w);
                        let gi = acc(grads, inp, width);
                        for p in 0..width {
                            gi[p] += wv[p * units..(p + 1) * units].iter().zip(&dz).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    if wants(w) {
                        let iv = self.value(inp);
                        let gw = acc(grads, w, width * units);
                        for p in 0..width {
                            let s = iv[p];
                            for (o, d) in gw[p * units..(p + 1) * units].iter_mut().zip(&dz) {
                                *o += s * d;
                            }
                        }
                    }
                }
            }
            Op::ChannelsLast(a) => {
                if wants(*a) {
                    let s = self.shape(*a);
                    let (c, hw) = (s[0], s[1] * s[2]);
                    let ga = acc(grads, *a, g.len());
                    for ch in 0..c {
                        for p in 0..hw {
                            ga[ch * hw + p] += g[p * c + ch];
                        }
                    }
                }
            }
            Op::DensityMatrix { raw, trace } => {
                if wants(*raw) {
                    let rv = self.value(*raw);
                    let gr = acc(grads, *raw, rv.len());
                    physical::density_backward(rv, out, *trace, g, gr);
                }
            }
            Op::Statistics { rho, plan } => {
                if wants(*rho) {
                    let len = self.value(*rho).len();
                    plan.backward(g, acc(grads, *rho, len));
                }
            }
            Op::Mse { pred, target } => {
                if wants(*pred) {
                    let p = self.value(*pred);
                    let n = p.len() as f64;
                    let gp = acc(grads, *pred, p.len());
                    for i in 0..p.len() {
                        gp[i] += g[0] * 2.0 * (p[i] - target[i]) / n;
                    }
                }
            }
        }
    }
}
