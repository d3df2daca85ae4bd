use crate::error::{FriError, Result};
use crate::kernels::{PiecewiseKernel, C64};
use crate::linalg::{svd_full_left, CMatrix};
use crate::spectral::diagonal_moments;

use super::linalg::{gemm, Trans};
use super::tensor::{cmatrix_to_tensor, tensor_to_cmatrix, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sampling geometry for the fused piecewise-linear synthesis op.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PiecewiseGeometry {
    pub samples: usize,
    pub sampling_period: f64,
    pub delta: f64,
    /// Local coordinate of t = 0, i.e. the kernel is `φ̂(x) = φ̂_local(x + anchor)`.
    pub anchor: f64,
    /// Wrap images modulo the sample count.
    pub periodic: bool,
}

struct SvdSaved {
    transposed: bool,
    a: CMatrix,
    u: CMatrix,
    sigma: Vec<f64>,
    z: CMatrix,
    c: f64,
    k: usize,
    mu: f64,
}

enum Op {
    Leaf,
    Dense { x: Var, w: Var, b: Var },
    Conv1d { x: Var, w: Var, b: Var, cols: Vec<f64>, width: usize },
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    CMatMul(Var, Var),
    FrobSq(Var),
    SqErr(Var, Var),
    SvdSoft { x: Var, mu: Var, saved: Box<SvdSaved> },
    ToeplitzProject(Var),
    ToeplitzReshape(Var),
    AffineExpand { x: Var, scale: f64, count: usize },
    Gate { x: Var, lo: f64, hi: f64 },
    ContractLast { x: Var, w: Var },
    WeightedSum { a: Var, x: Var },
    PiecewiseSynth { t: Var, a: Var, d: Var, geom: PiecewiseGeometry },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Linear record of primitive applications; replayed in reverse by [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` for values the loss does not depend on.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient as a tensor, zero-filled if the loss does not depend on `v`.
    pub fn tensor(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor { shape, data: g.clone() },
            None => Tensor::zeros(&shape),
        }
    }
}

fn shape_err(op: &str, detail: String) -> FriError {
    FriError::DimensionMismatch(format!("{op}: {detail}"))
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

fn herm(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
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

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, requires_grad: true, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, requires_grad: false, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `y = x·w + b` with x `[B, in]`, w `[in, out]`, b `[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(shape_err("dense", format!("x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (batch, fin, fout) = (xs[0], xs[1], ws[1]);
        let mut out = Vec::with_capacity(batch * fout);
        for _ in 0..batch {
            out.extend_from_slice(&self.value(b).data);
        }
        gemm(batch, fin, fout, &self.value(x).data, Trans::No, &self.value(w).data, Trans::No, 1.0, &mut out);
        Ok(self.push(Tensor { shape: vec![batch, fout], data: out }, &[x, w, b], Op::Dense { x, w, b }))
    }

    /// Same-padded, stride-1 cross-correlation. x `[B, L, Cin]`, w `[width, Cin, Cout]`, b `[Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        if xs.len() != 3 || ws.len() != 3 || bs.len() != 1 || xs[2] != ws[1] || ws[2] != bs[0] || ws[0] % 2 == 0 {
            return Err(shape_err("conv1d", format!("x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (batch, len, cin) = (xs[0], xs[1], xs[2]);
        let (width, cout) = (ws[0], ws[2]);
        let pad = width / 2;
        let row = width * cin;
        let mut cols = vec![0.0; batch * len * row];
        let xd = &self.value(x).data;
        for bi in 0..batch {
            for l in 0..len {
                let dst = &mut cols[(bi * len + l) * row..(bi * len + l + 1) * row];
                for t in 0..width {
                    let src = l as isize + t as isize - pad as isize;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let s = (bi * len + src as usize) * cin;
                    dst[t * cin..(t + 1) * cin].copy_from_slice(&xd[s..s + cin]);
                }
            }
        }
        let mut out = Vec::with_capacity(batch * len * cout);
        for _ in 0..batch * len {
            out.extend_from_slice(&self.value(b).data);
        }
        gemm(batch * len, row, cout, &cols, Trans::No, &self.value(w).data, Trans::No, 1.0, &mut out);
        Ok(self.push(Tensor { shape: vec![batch, len, cout], data: out }, &[x, w, b], Op::Conv1d { x, w, b, cols, width }))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let t = Tensor { shape: v.shape.clone(), data: v.data.iter().map(|&e| f(e)).collect() };
        self.push(t, &[x], op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |e| e.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, |e| 1.0 / (1.0 + (-e).exp()), Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |e| c * e, Op::Scale(x, c))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape != vb.shape {
            return Err(shape_err(name, format!("{:?} vs {:?}", va.shape, vb.shape)));
        }
        let t = Tensor { shape: va.shape.clone(), data: va.data.iter().zip(&vb.data).map(|(&p, &q)| f(p, q)).collect() };
        Ok(self.push(t, &[a, b], op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    /// Σ (a − b)², a scalar.
    pub fn sq_err(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape != vb.shape {
            return Err(shape_err("sq_err", format!("{:?} vs {:?}", va.shape, vb.shape)));
        }
        let s = va.data.iter().zip(&vb.data).map(|(p, q)| (p - q) * (p - q)).sum();
        Ok(self.push(Tensor::scalar(s), &[a, b], Op::SqErr(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), &[x], Op::Sum(x))
    }

    /// Sum of squares of every stored real, i.e. ‖X‖²_F for complex X.
    pub fn frob_sq(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().map(|e| e * e).sum();
        self.push(Tensor::scalar(s), &[x], Op::FrobSq(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.len() {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", v.shape)));
        }
        let t = Tensor { shape: shape.to_vec(), data: v.data.clone() };
        Ok(self.push(t, &[x], Op::Reshape(x)))
    }

    /// Complex matrix product of `[r, k, 2]` and `[k, c, 2]`.
    pub fn cmatmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ma = tensor_to_cmatrix(self.value(a))?;
        let mb = tensor_to_cmatrix(self.value(b))?;
        if ma.ncols() != mb.nrows() {
            return Err(shape_err("cmatmul", format!("{:?} x {:?}", ma.shape(), mb.shape())));
        }
        Ok(self.push(cmatrix_to_tensor(&(ma * mb)), &[a, b], Op::CMatMul(a, b)))
    }

    /// Soft-thresholds the singular values of X by `μ·σ_{K+1}`.
    pub fn svd_soft_threshold(&mut self, x: Var, mu: Var, k: usize) -> Result<Var> {
        let mx = tensor_to_cmatrix(self.value(x))?;
        if self.value(mu).len() != 1 {
            return Err(shape_err("svd_soft_threshold", "mu must hold one value".into()));
        }
        let muv = self.value(mu).item();
        let (r, c) = mx.shape();
        if k + 1 > r.min(c) {
            return Err(FriError::InvalidArgument(format!("K+1 = {} exceeds min dimension {}", k + 1, r.min(c))));
        }
        let transposed = r > c;
        let a = if transposed { mx.adjoint() } else { mx };
        let d = svd_full_left(&a)?;
        let thr = muv * d.sigma[k];
        let mut u_scaled = d.u.clone();
        for (i, &s) in d.sigma.iter().enumerate() {
            u_scaled.column_mut(i).scale_mut(h_factor(s, thr));
        }
        let z = &u_scaled * d.u.adjoint();
        let ya = &z * &a;
        let y = if transposed { ya.adjoint() } else { ya };
        let saved = SvdSaved { transposed, a, u: d.u, sigma: d.sigma, z, c: thr, k, mu: muv };
        Ok(self.push(cmatrix_to_tensor(&y), &[x, mu], Op::SvdSoft { x, mu, saved: Box::new(saved) }))
    }

    /// Orthogonal projection onto Toeplitz matrices (diagonal averaging).
    pub fn toeplitz_project(&mut self, x: Var) -> Result<Var> {
        let m = tensor_to_cmatrix(self.value(x))?;
        let s = diagonal_moments(&m);
        let (r, c) = m.shape();
        let y = CMatrix::from_fn(r, c, |i, j| s[c - 1 + i - j]);
        Ok(self.push(cmatrix_to_tensor(&y), &[x], Op::ToeplitzProject(x)))
    }

    /// Reads the diagonal-averaged sequence of X and lays it out as a
    /// `rows × cols` Toeplitz matrix; `rows + cols` must equal that of X.
    pub fn toeplitz_reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let m = tensor_to_cmatrix(self.value(x))?;
        let (r, c) = m.shape();
        if rows + cols != r + c || rows == 0 || cols == 0 {
            return Err(shape_err("toeplitz_reshape", format!("{r}x{c} -> {rows}x{cols}")));
        }
        let s = diagonal_moments(&m);
        let y = CMatrix::from_fn(rows, cols, |i, j| s[cols - 1 + i - j]);
        Ok(self.push(cmatrix_to_tensor(&y), &[x], Op::ToeplitzReshape(x)))
    }

    /// Appends a trailing axis: `y[.., j] = wrap(scale·x[..] + offsets[j])`.
    /// With `wrap = Some(p)` the result is reduced into `[0, p)`.
    pub fn affine_expand(&mut self, x: Var, scale: f64, offsets: &[f64], wrap: Option<f64>) -> Var {
        let v = self.value(x);
        let mut shape = v.shape.clone();
        shape.push(offsets.len());
        let mut data = Vec::with_capacity(v.len() * offsets.len());
        for &e in &v.data {
            for &o in offsets {
                let y = scale * e + o;
                data.push(match wrap {
                    Some(p) => y.rem_euclid(p),
                    None => y,
                });
            }
        }
        self.push(Tensor { shape, data }, &[x], Op::AffineExpand { x, scale, count: offsets.len() })
    }

    /// Passes values in `[lo, hi)` and zeroes the rest.
    pub fn gate(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |e| if e >= lo && e < hi { e } else { 0.0 }, Op::Gate { x, lo, hi })
    }

    /// `y[q] = Σ_j x[q, j] w[j]`.
    pub fn contract_last(&mut self, x: Var, w: Var) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let j = *vx.shape.last().unwrap_or(&0);
        if vw.shape != [j] || j == 0 {
            return Err(shape_err("contract_last", format!("{:?} . {:?}", vx.shape, vw.shape)));
        }
        let mut data = vec![0.0; vx.len() / j];
        gemm(data.len(), j, 1, &vx.data, Trans::No, &vw.data, Trans::No, 0.0, &mut data);
        let shape = vx.shape[..vx.rank() - 1].to_vec();
        Ok(self.push(Tensor { shape, data }, &[x, w], Op::ContractLast { x, w }))
    }

    /// `y[b, n] = Σ_k a[b, k] x[b, k, n]`.
    pub fn weighted_sum(&mut self, a: Var, x: Var) -> Result<Var> {
        let (va, vx) = (self.value(a), self.value(x));
        if va.rank() != 2 || vx.rank() != 3 || vx.shape[..2] != va.shape[..] {
            return Err(shape_err("weighted_sum", format!("{:?} . {:?}", va.shape, vx.shape)));
        }
        let (bn, kn, nn) = (vx.shape[0], vx.shape[1], vx.shape[2]);
        let mut data = vec![0.0; bn * nn];
        for b in 0..bn {
            for k in 0..kn {
                let w = va.data[b * kn + k];
                let row = &vx.data[(b * kn + k) * nn..(b * kn + k + 1) * nn];
                for (o, &e) in data[b * nn..(b + 1) * nn].iter_mut().zip(row) {
                    *o += w * e;
                }
            }
        }
        Ok(self.push(Tensor { shape: vec![bn, nn], data }, &[a, x], Op::WeightedSum { a, x }))
    }

    /// Fused form of the decoder: `y[b, n] = Σ_k a[b,k] Σ_l φ̂(t[b,k]/T − n + lN)`
    /// with φ̂ the piecewise-linear kernel of coefficients `d`.
    pub fn piecewise_synth(&mut self, t: Var, a: Var, d: Var, geom: PiecewiseGeometry) -> Result<Var> {
        let (vt, va, vd) = (self.value(t), self.value(a), self.value(d));
        if vt.rank() != 2 || vt.shape != va.shape || vd.rank() != 1 {
            return Err(shape_err("piecewise_synth", format!("t {:?}, a {:?}, d {:?}", vt.shape, va.shape, vd.shape)));
        }
        let kernel = PiecewiseKernel::new(vd.data.clone(), geom.delta, geom.anchor)?;
        let (bn, kn) = (vt.shape[0], vt.shape[1]);
        let mut data = vec![0.0; bn * geom.samples];
        for b in 0..bn {
            for n in 0..geom.samples {
                let mut s = 0.0;
                for k in 0..kn {
                    let x = vt.data[b * kn + k] / geom.sampling_period - n as f64;
                    let mut v = 0.0;
                    for_each_image(&kernel, x, &geom, |z| v += kernel.eval_local(z));
                    s += va.data[b * kn + k] * v;
                }
                data[b * geom.samples + n] = s;
            }
        }
        Ok(self.push(Tensor { shape: vec![bn, geom.samples], data }, &[t, a, d], Op::PiecewiseSynth { t, a, d, geom }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.backprop(node, &gy, &mut grads)?;
            }
            grads[idx] = Some(gy);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (batch, fin) = (val(*x).shape[0], val(*x).shape[1]);
                let fout = val(*w).shape[1];
                if self.needs(*x) {
                    acc(grads, *x, batch * fin, |g| gemm(batch, fout, fin, gy, Trans::No, &val(*w).data, Trans::Yes, 1.0, g));
                }
                if self.needs(*w) {
                    acc(grads, *w, fin * fout, |g| gemm(fin, batch, fout, &val(*x).data, Trans::Yes, gy, Trans::No, 1.0, g));
                }
                if self.needs(*b) {
                    acc(grads, *b, fout, |g| {
                        for r in gy.chunks(fout) {
                            for (gi, ri) in g.iter_mut().zip(r) {
                                *gi += ri;
                            }
                        }
                    });
                }
            }
            Op::Conv1d { x, w, b, cols, width } => {
                let (batch, len, cin) = (val(*x).shape[0], val(*x).shape[1], val(*x).shape[2]);
                let cout = val(*w).shape[2];
                let row = width * cin;
                if self.needs(*w) {
                    acc(grads, *w, row * cout, |g| gemm(row, batch * len, cout, cols, Trans::Yes, gy, Trans::No, 1.0, g));
                }
                if self.needs(*b) {
                    acc(grads, *b, cout, |g| {
                        for r in gy.chunks(cout) {
                            for (gi, ri) in g.iter_mut().zip(r) {
                                *gi += ri;
                            }
                        }
                    });
                }
                if self.needs(*x) {
                    let mut gcols = vec![0.0; batch * len * row];
                    gemm(batch * len, cout, row, gy, Trans::No, &val(*w).data, Trans::Yes, 0.0, &mut gcols);
                    let pad = width / 2;
                    acc(grads, *x, batch * len * cin, |g| {
                        for bi in 0..batch {
                            for l in 0..len {
                                let src = &gcols[(bi * len + l) * row..(bi * len + l + 1) * row];
                                for t in 0..*width {
                                    let p = l as isize + t as isize - pad as isize;
                                    if p < 0 || p >= len as isize {
                                        continue;
                                    }
                                    let d = (bi * len + p as usize) * cin;
                                    for c in 0..cin {
                                        g[d + c] += src[t * cin + c];
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let xv = &val(*x).data;
                acc(grads, *x, xv.len(), |g| {
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            g[i] += gy[i];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yv = &node.value.data;
                acc(grads, *x, yv.len(), |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * yv[i] * (1.0 - yv[i]);
                    }
                });
            }
            Op::Exp(x) => {
                let yv = &node.value.data;
                acc(grads, *x, yv.len(), |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * yv[i];
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(grads, *x, gy.len(), |g| {
                    for i in 0..g.len() {
                        g[i] += c * gy[i];
                    }
                });
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.needs(*a) {
                    acc(grads, *a, gy.len(), |g| g.iter_mut().zip(gy).for_each(|(gi, y)| *gi += y));
                }
                if self.needs(*b) {
                    acc(grads, *b, gy.len(), |g| g.iter_mut().zip(gy).for_each(|(gi, y)| *gi += sign * y));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                if self.needs(*a) {
                    acc(grads, *a, gy.len(), |g| (0..g.len()).for_each(|i| g[i] += gy[i] * vb[i]));
                }
                if self.needs(*b) {
                    acc(grads, *b, gy.len(), |g| (0..g.len()).for_each(|i| g[i] += gy[i] * va[i]));
                }
            }
            Op::Sum(x) => {
                acc(grads, *x, val(*x).len(), |g| g.iter_mut().for_each(|gi| *gi += gy[0]));
            }
            Op::FrobSq(x) => {
                let xv = &val(*x).data;
                acc(grads, *x, xv.len(), |g| (0..g.len()).for_each(|i| g[i] += 2.0 * gy[0] * xv[i]));
            }
            Op::SqErr(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                if self.needs(*a) {
                    acc(grads, *a, va.len(), |g| (0..g.len()).for_each(|i| g[i] += 2.0 * gy[0] * (va[i] - vb[i])));
                }
                if self.needs(*b) {
                    acc(grads, *b, va.len(), |g| (0..g.len()).for_each(|i| g[i] -= 2.0 * gy[0] * (va[i] - vb[i])));
                }
            }
            Op::Reshape(x) => {
                acc(grads, *x, gy.len(), |g| g.iter_mut().zip(gy).for_each(|(gi, y)| *gi += y));
            }
            Op::CMatMul(a, b) => {
                let gm = tensor_to_cmatrix(&Tensor { shape: node.value.shape.clone(), data: gy.to_vec() })?;
                if self.needs(*a) {
                    let mb = tensor_to_cmatrix(val(*b))?;
                    let ga = cmatrix_to_tensor(&(&gm * mb.adjoint()));
                    acc(grads, *a, ga.len(), |g| g.iter_mut().zip(&ga.data).for_each(|(gi, y)| *gi += y));
                }
                if self.needs(*b) {
                    let ma = tensor_to_cmatrix(val(*a))?;
                    let gb = cmatrix_to_tensor(&(ma.adjoint() * &gm));
                    acc(grads, *b, gb.len(), |g| g.iter_mut().zip(&gb.data).for_each(|(gi, y)| *gi += y));
                }
            }
            Op::SvdSoft { x, mu, saved } => {
                let gm = tensor_to_cmatrix(&Tensor { shape: node.value.shape.clone(), data: gy.to_vec() })?;
                let (gx, gmu) = svd_soft_backward(saved, &gm);
                if self.needs(*x) {
                    let t = cmatrix_to_tensor(&gx);
                    acc(grads, *x, t.len(), |g| g.iter_mut().zip(&t.data).for_each(|(gi, y)| *gi += y));
                }
                if self.needs(*mu) {
                    acc(grads, *mu, 1, |g| g[0] += gmu);
                }
            }
            Op::ToeplitzProject(x) => {
                let gm = tensor_to_cmatrix(&Tensor { shape: node.value.shape.clone(), data: gy.to_vec() })?;
                let s = diagonal_moments(&gm);
                let (r, c) = gm.shape();
                let t = cmatrix_to_tensor(&CMatrix::from_fn(r, c, |i, j| s[c - 1 + i - j]));
                acc(grads, *x, t.len(), |g| g.iter_mut().zip(&t.data).for_each(|(gi, y)| *gi += y));
            }
            Op::ToeplitzReshape(x) => {
                let gm = tensor_to_cmatrix(&Tensor { shape: node.value.shape.clone(), data: gy.to_vec() })?;
                let (ro, co) = gm.shape();
                let (r, c) = (val(*x).shape[0], val(*x).shape[1]);
                let mut gs = vec![C64::new(0.0, 0.0); r + c - 1];
                for i in 0..ro {
                    for j in 0..co {
                        gs[co - 1 + i - j] += gm[(i, j)];
                    }
                }
                let t = cmatrix_to_tensor(&CMatrix::from_fn(r, c, |i, j| {
                    let p = c - 1 + i - j;
                    let count = diagonal_len(r, c, p) as f64;
                    gs[p] / count
                }));
                acc(grads, *x, t.len(), |g| g.iter_mut().zip(&t.data).for_each(|(gi, y)| *gi += y));
            }
            Op::AffineExpand { x, scale, count } => {
                acc(grads, *x, val(*x).len(), |g| {
                    for (gi, row) in g.iter_mut().zip(gy.chunks(*count)) {
                        *gi += scale * row.iter().sum::<f64>();
                    }
                });
            }
            Op::Gate { x, lo, hi } => {
                let xv = &val(*x).data;
                acc(grads, *x, xv.len(), |g| {
                    for i in 0..g.len() {
                        if xv[i] >= *lo && xv[i] < *hi {
                            g[i] += gy[i];
                        }
                    }
                });
            }
            Op::ContractLast { x, w } => {
                let (vx, vw) = (&val(*x).data, &val(*w).data);
                let j = vw.len();
                let q = gy.len();
                if self.needs(*x) {
                    acc(grads, *x, vx.len(), |g| gemm(q, 1, j, gy, Trans::No, vw, Trans::No, 1.0, g));
                }
                if self.needs(*w) {
                    acc(grads, *w, j, |g| gemm(1, q, j, gy, Trans::No, vx, Trans::No, 1.0, g));
                }
            }
            Op::WeightedSum { a, x } => {
                let (va, vx) = (val(*a), val(*x));
                let (bn, kn, nn) = (vx.shape[0], vx.shape[1], vx.shape[2]);
                if self.needs(*a) {
                    acc(grads, *a, bn * kn, |g| {
                        for b in 0..bn {
                            for k in 0..kn {
                                let row = &vx.data[(b * kn + k) * nn..(b * kn + k + 1) * nn];
                                g[b * kn + k] += row.iter().zip(&gy[b * nn..(b + 1) * nn]).map(|(p, q)| p * q).sum::<f64>();
                            }
                        }
                    });
                }
                if self.needs(*x) {
                    acc(grads, *x, vx.len(), |g| {
                        for b in 0..bn {
                            for k in 0..kn {
                                let w = va.data[b * kn + k];
                                for n in 0..nn {
                                    g[(b * kn + k) * nn + n] += w * gy[b * nn + n];
                                }
                            }
                        }
                    });
                }
            }
            Op::PiecewiseSynth { t, a, d, geom } => {
                let (vt, va, vd) = (val(*t), val(*a), val(*d));
                let kernel = PiecewiseKernel::new(vd.data.clone(), geom.delta, geom.anchor)?;
                let (bn, kn) = (vt.shape[0], vt.shape[1]);
                let knots = vd.len();
                let mut gt = vec![0.0; bn * kn];
                let mut ga = vec![0.0; bn * kn];
                let mut w0 = vec![0.0; knots];
                let mut w1 = vec![0.0; knots];
                for b in 0..bn {
                    for k in 0..kn {
                        let amp = va.data[b * kn + k];
                        for n in 0..geom.samples {
                            let g = gy[b * geom.samples + n];
                            if g == 0.0 {
                                continue;
                            }
                            let x = vt.data[b * kn + k] / geom.sampling_period - n as f64;
                            let (mut v, mut s) = (0.0, 0.0);
                            for_each_image(&kernel, x, geom, |z| {
                                v += kernel.eval_local(z);
                                s += kernel.slope_local(z);
                                if let Some(j) = kernel.segment(z) {
                                    w0[j] += g * amp;
                                    w1[j] += g * amp * z;
                                }
                            });
                            ga[b * kn + k] += g * v;
                            gt[b * kn + k] += g * amp * s / geom.sampling_period;
                        }
                    }
                }
                if self.needs(*t) {
                    acc(grads, *t, gt.len(), |g| g.iter_mut().zip(&gt).for_each(|(gi, y)| *gi += y));
                }
                if self.needs(*a) {
                    acc(grads, *a, ga.len(), |g| g.iter_mut().zip(&ga).for_each(|(gi, y)| *gi += y));
                }
                if self.needs(*d) {
                    acc(grads, *d, knots, |g| {
                        let (mut s0, mut s1) = (0.0, 0.0);
                        for m in (0..knots).rev() {
                            s0 += w0[m];
                            s1 += w1[m];
                            g[m] += s1 - m as f64 * geom.delta * s0;
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

/// Local coordinates of every image of `x` that lands in the kernel support,
/// matching [`crate::signal_model::periodized`] term for term.
fn for_each_image(kernel: &PiecewiseKernel, x: f64, geom: &PiecewiseGeometry, mut f: impl FnMut(f64)) {
    if geom.periodic {
        let period = geom.samples as f64;
        let (lo, hi) = (-geom.anchor, kernel.support_len() - geom.anchor);
        let l_min = ((lo - x) / period).ceil() as i64;
        let l_max = ((hi - x) / period).floor() as i64;
        for l in l_min..=l_max {
            f(x + l as f64 * period + geom.anchor);
        }
    } else {
        f(x + geom.anchor);
    }
}

fn diagonal_len(r: usize, c: usize, p: usize) -> usize {
    // entries with i − j = p − (c − 1)
    let off = p as isize - (c as isize - 1);
    (0..r as isize).filter(|&i| i - off >= 0 && i - off < c as isize).count()
}

/// `h(σ) = max(0, 1 − c/σ)`, the factor that turns σ into its soft-thresholded value.
fn h_factor(sigma: f64, c: f64) -> f64 {
    if c == 0.0 {
        1.0
    } else if sigma > c {
        1.0 - c / sigma
    } else {
        0.0
    }
}

/// Derivative of h with respect to λ = σ².
fn h_prime(sigma: f64, c: f64) -> f64 {
    if c > 0.0 && sigma > c {
        c / (2.0 * sigma * sigma * sigma)
    } else {
        0.0
    }
}

// Y = Z A with Z = U h(Λ) Uᴴ a spectral function of A Aᴴ. The Daleckii–Krein
// formula gives dZ = U (Γ ∘ Uᴴ d(AAᴴ) U) Uᴴ, Γ the divided differences of h.
fn svd_soft_backward(s: &SvdSaved, gy: &CMatrix) -> (CMatrix, f64) {
    let gya = if s.transposed { gy.adjoint() } else { gy.clone() };
    let m = s.u.nrows();
    let gz = &gya * s.a.adjoint();
    let ghat = s.u.adjoint() * &gz * &s.u;
    let mut inner = CMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let (si, sj) = (s.sigma[i], s.sigma[j]);
            let gamma = if (si - sj).abs() < 1e-8 {
                h_prime(si.max(sj), s.c)
            } else {
                (h_factor(si, s.c) - h_factor(sj, s.c)) / (si * si - sj * sj)
            };
            inner[(i, j)] = ghat[(i, j)] * gamma;
        }
    }
    let mut g_c = 0.0;
    for i in 0..m {
        if s.c > 0.0 && s.sigma[i] > s.c {
            g_c -= ghat[(i, i)].re / s.sigma[i];
        }
    }
    let sk = s.sigma[s.k];
    let mut b = &s.u * inner * s.u.adjoint();
    if sk > 0.0 && g_c != 0.0 {
        let uk = s.u.column(s.k);
        b += (&uk * uk.adjoint()).scale(g_c * s.mu / (2.0 * sk));
    }
    let ga = &s.z * &gya + herm(&b).scale(2.0) * &s.a;
    let gx = if s.transposed { ga.adjoint() } else { ga };
    (gx, g_c * sk)
}
