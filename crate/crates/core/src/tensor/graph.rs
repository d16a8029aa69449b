use super::gemm::{gemm, Layout};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct ConvGeom {
    channels: usize,
    height: usize,
    width: usize,
    out_channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow { x: Var, row: Var },
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    RepeatRows(Var),
    Sum(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        // im2col buffer; empty for pointwise convolutions, which read the input directly
        cols: Vec<f64>,
    },
    Upsample2x(Var),
    MaxPoolPoints { x: Var, argmax: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    MseMasked {
        pred: Var,
        target: Var,
        mask: Vec<f64>,
        mask_sum: f64,
    },
    CustomScalar { x: Var, jacobian: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow { .. } => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::RepeatRows(..) => "repeat_rows",
            Op::Sum(..) => "sum",
            Op::Reshape(..) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::Upsample2x(..) => "upsample_nearest2x",
            Op::MaxPoolPoints { .. } => "maxpool_points",
            Op::Concat { .. } => "concat",
            Op::MseMasked { .. } => "mse_masked",
            Op::CustomScalar { .. } => "custom_scalar",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Tape of executed operations.
///
/// Records are appended in execution order, so the tape is always a valid
/// topological order and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn dim_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operation names in record order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient left by the last [`Graph::backward`], if `v` was reachable.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| Tensor {
            shape: self.nodes[v.0].value.shape.clone(),
            data: g.clone(),
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            Layout::Normal,
            self.value(b).data(),
            Layout::Normal,
            0.0,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err("add", sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = sa.to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b), rg))
    }

    /// Adds a length-`F` row to every row of an `N×F` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (sx, sr) = (self.shape(x), self.shape(row));
        let f = *sx.last().unwrap();
        if sx.len() != 2 || self.value(row).len() != f {
            return Err(dim_err("add_row", sx, sr));
        }
        let r = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_exact_mut(f) {
            for (d, b) in chunk.iter_mut().zip(r) {
                *d += b;
            }
        }
        let shape = sx.to_vec();
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(Tensor { shape, data }, Op::AddRow { x, row }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err("mul", sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = sa.to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x);
        let t = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|d| d * factor).collect(),
        };
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, factor), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&d| if d > 0.0 { d } else { 0.0 }).collect(),
        };
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    /// Stacks `n` copies of a length-`F` vector into an `n×F` matrix.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return Err(Error::EmptyInput("repeat_rows with zero rows"));
        }
        let v = self.value(x).data();
        let f = v.len();
        let data = v.repeat(n);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor {
                shape: vec![n, f],
                data,
            },
            Op::RepeatRows(x),
            rg,
        ))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// 2D cross-correlation of a `C×H×W` input with an `O×C×kh×kw` kernel.
    ///
    /// Output extents are `(H + 2·pad − kh) / stride + 1`; for a 3×3 kernel
    /// with pad 1 this is `ceil(H / stride)`.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(kernel));
        if sx.len() != 3 || sk.len() != 4 {
            return Err(dim_err("conv2d", sx, sk));
        }
        if sk[1] != sx[0] {
            return Err(Error::Dimension(format!(
                "conv2d: input has {} channels but kernel {sk:?} expects {}",
                sx[0], sk[1]
            )));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d: stride must be positive".into()));
        }
        let (c, h, w) = (sx[0], sx[1], sx[2]);
        let (o, kh, kw) = (sk[0], sk[2], sk[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Dimension(format!(
                "conv2d: input {sx:?} with pad {pad} smaller than kernel {sk:?}"
            )));
        }
        if let Some(b) = bias {
            if self.value(b).len() != o {
                return Err(dim_err("conv2d bias", self.shape(b), sk));
            }
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            out_channels: o,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        };
        let p = geom.out_len();
        let cols = if geom.is_pointwise() {
            Vec::new()
        } else {
            im2col(self.value(x).data(), &geom)
        };
        let patches = if geom.is_pointwise() {
            self.value(x).data()
        } else {
            &cols
        };
        let mut out = vec![0.0; o * p];
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_exact_mut(p).zip(self.value(b).data()) {
                row.fill(bv);
            }
        }
        gemm(
            o,
            geom.patch_len(),
            p,
            self.value(kernel).data(),
            Layout::Normal,
            patches,
            Layout::Normal,
            if bias.is_some() { 1.0 } else { 0.0 },
            &mut out,
        );
        let rg = self.rg(x) || self.rg(kernel) || bias.is_some_and(|b| self.rg(b));
        let shape = vec![o, geom.out_h, geom.out_w];
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Nearest-neighbour 2× upsampling of a `C×H×W` tensor.
    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::Dimension(format!(
                "upsample_nearest2x expects C×H×W, got {s:?}"
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                let srow = &src[(ch * h + y / 2) * w..][..w];
                let drow = &mut out[(ch * h2 + y) * w2..][..w2];
                for (xx, d) in drow.iter_mut().enumerate() {
                    *d = srow[xx / 2];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor {
                shape: vec![c, h2, w2],
                data: out,
            },
            Op::Upsample2x(x),
            rg,
        ))
    }

    /// Per-feature maximum over the rows of an `N×F` matrix.
    ///
    /// The gradient goes to the first row attaining the maximum.
    pub fn maxpool_points(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::Dimension(format!(
                "maxpool_points expects N×F, got {s:?}"
            )));
        }
        let (n, f) = (s[0], s[1]);
        if n == 0 {
            return Err(Error::EmptyInput("maxpool_points over zero points"));
        }
        let d = self.value(x).data();
        let mut best = d[..f].to_vec();
        let mut argmax = vec![0usize; f];
        for r in 1..n {
            for (j, &v) in d[r * f..(r + 1) * f].iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = r;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor {
                shape: vec![f],
                data: best,
            },
            Op::MaxPoolPoints { x, argmax },
            rg,
        ))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or(Error::EmptyInput("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Dimension(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(dim_err("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Concat {
                inputs: xs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `Σ mask·(pred − target)² / Σ mask`.
    pub fn mse_masked(&mut self, pred: Var, target: Var, mask: &Tensor) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st {
            return Err(dim_err("mse_masked", sp, st));
        }
        if mask.shape() != sp {
            return Err(dim_err("mse_masked mask", sp, mask.shape()));
        }
        let mask_sum: f64 = mask.data().iter().sum();
        if mask_sum == 0.0 {
            return Err(Error::DegenerateMask);
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let num: f64 = p
            .iter()
            .zip(t)
            .zip(mask.data())
            .map(|((a, b), m)| m * (a - b) * (a - b))
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(
            Tensor::scalar(num / mask_sum),
            Op::MseMasked {
                pred,
                target,
                mask: mask.data().to_vec(),
                mask_sum,
            },
            rg,
        ))
    }

    /// Scalar node with a caller-supplied value and Jacobian with respect to `x`.
    ///
    /// Lets losses whose forward pass lives outside the graph (nearest-neighbour
    /// matching, for instance) participate in backward.
    pub fn custom_scalar(&mut self, x: Var, value: f64, jacobian: Vec<f64>) -> Result<Var> {
        if jacobian.len() != self.value(x).len() {
            return Err(Error::Dimension(format!(
                "custom_scalar: jacobian has {} entries, input has {}",
                jacobian.len(),
                self.value(x).len()
            )));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(value), Op::CustomScalar { x, jacobian }, rg))
    }

    /// Reverse sweep from a scalar node. Clears gradients from earlier sweeps.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        let Graph { nodes, grads } = self;
        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            propagate(nodes, grads, i, &dy);
            grads[i] = Some(dy);
        }
        Ok(())
    }
}

/// Runs `f` on the gradient buffer of `v`, allocating it on first use.
fn acc(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
    f(buf);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, dy: &[f64]) {
    let node = &nodes[i];
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let bv = nodes[b.0].value.data();
            acc(nodes, grads, *a, |g| {
                gemm(m, n, k, dy, Layout::Normal, bv, Layout::Transposed, 1.0, g)
            });
            let av = nodes[a.0].value.data();
            acc(nodes, grads, *b, |g| {
                gemm(k, m, n, av, Layout::Transposed, dy, Layout::Normal, 1.0, g)
            });
        }
        Op::Add(a, b) => {
            acc(nodes, grads, *a, |g| add_into(g, dy));
            acc(nodes, grads, *b, |g| add_into(g, dy));
        }
        Op::AddRow { x, row } => {
            acc(nodes, grads, *x, |g| add_into(g, dy));
            acc(nodes, grads, *row, |g| {
                let f = g.len();
                for chunk in dy.chunks_exact(f) {
                    add_into(g, chunk);
                }
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            acc(nodes, grads, *a, |g| {
                for ((g, d), y) in g.iter_mut().zip(dy).zip(bv) {
                    *g += d * y;
                }
            });
            acc(nodes, grads, *b, |g| {
                for ((g, d), x) in g.iter_mut().zip(dy).zip(av) {
                    *g += d * x;
                }
            });
        }
        Op::Scale(x, factor) => acc(nodes, grads, *x, |g| {
            for (g, d) in g.iter_mut().zip(dy) {
                *g += factor * d;
            }
        }),
        Op::Relu(x) => {
            let out = node.value.data();
            acc(nodes, grads, *x, |g| {
                for ((g, d), y) in g.iter_mut().zip(dy).zip(out) {
                    if *y > 0.0 {
                        *g += d;
                    }
                }
            });
        }
        Op::RepeatRows(x) => acc(nodes, grads, *x, |g| {
            let f = g.len();
            for chunk in dy.chunks_exact(f) {
                add_into(g, chunk);
            }
        }),
        Op::Sum(x) => acc(nodes, grads, *x, |g| {
            for g in g.iter_mut() {
                *g += dy[0];
            }
        }),
        Op::Reshape(x) => acc(nodes, grads, *x, |g| add_into(g, dy)),
        Op::Conv2d {
            x,
            kernel,
            bias,
            geom,
            cols,
        } => {
            let (o, kk, p) = (geom.out_channels, geom.patch_len(), geom.out_len());
            let patches = if geom.is_pointwise() {
                nodes[x.0].value.data()
            } else {
                cols
            };
            acc(nodes, grads, *kernel, |g| {
                gemm(o, p, kk, dy, Layout::Normal, patches, Layout::Transposed, 1.0, g)
            });
            if let Some(b) = bias {
                acc(nodes, grads, *b, |g| {
                    for (g, row) in g.iter_mut().zip(dy.chunks_exact(p)) {
                        *g += row.iter().sum::<f64>();
                    }
                });
            }
            let kv = nodes[kernel.0].value.data();
            acc(nodes, grads, *x, |g| {
                if geom.is_pointwise() {
                    gemm(kk, o, p, kv, Layout::Transposed, dy, Layout::Normal, 1.0, g);
                } else {
                    let mut dcols = vec![0.0; kk * p];
                    gemm(kk, o, p, kv, Layout::Transposed, dy, Layout::Normal, 0.0, &mut dcols);
                    col2im_add(&dcols, geom, g);
                }
            });
        }
        Op::Upsample2x(x) => {
            let s = nodes[x.0].value.shape();
            let (c, h, w) = (s[0], s[1], s[2]);
            let w2 = 2 * w;
            acc(nodes, grads, *x, |g| {
                for ch in 0..c {
                    for y in 0..2 * h {
                        let drow = &dy[(ch * 2 * h + y) * w2..][..w2];
                        let grow = &mut g[(ch * h + y / 2) * w..][..w];
                        for (xx, d) in drow.iter().enumerate() {
                            grow[xx / 2] += d;
                        }
                    }
                }
            });
        }
        Op::MaxPoolPoints { x, argmax } => {
            let f = argmax.len();
            acc(nodes, grads, *x, |g| {
                for (j, &r) in argmax.iter().enumerate() {
                    g[r * f + j] += dy[j];
                }
            });
        }
        Op::Concat { inputs, axis } => {
            let base = node.value.shape();
            let outer: usize = base[..*axis].iter().product();
            let inner: usize = base[axis + 1..].iter().product();
            let row = base[*axis] * inner;
            let mut offset = 0;
            for v in inputs {
                let chunk = nodes[v.0].value.shape()[*axis] * inner;
                acc(nodes, grads, *v, |g| {
                    for o in 0..outer {
                        add_into(
                            &mut g[o * chunk..(o + 1) * chunk],
                            &dy[o * row + offset..o * row + offset + chunk],
                        );
                    }
                });
                offset += chunk;
            }
        }
        Op::MseMasked {
            pred,
            target,
            mask,
            mask_sum,
        } => {
            let (pv, tv) = (nodes[pred.0].value.data(), nodes[target.0].value.data());
            let scale = 2.0 * dy[0] / mask_sum;
            acc(nodes, grads, *pred, |g| {
                for (((g, p), t), m) in g.iter_mut().zip(pv).zip(tv).zip(mask) {
                    *g += scale * m * (p - t);
                }
            });
            acc(nodes, grads, *target, |g| {
                for (((g, p), t), m) in g.iter_mut().zip(pv).zip(tv).zip(mask) {
                    *g -= scale * m * (p - t);
                }
            });
        }
        Op::CustomScalar { x, jacobian } => acc(nodes, grads, *x, |g| {
            for (g, j) in g.iter_mut().zip(jacobian) {
                *g += dy[0] * j;
            }
        }),
    }
}

/// Unfolds input patches into a `(C·kh·kw) × (H'·W')` matrix.
fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.out_len();
    let mut cols = vec![0.0; g.patch_len() * p];
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..][..g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let r = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[r * p..(r + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..][..g.width];
                    let drow = &mut dst[oy * g.out_w..][..g.out_w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.out_len();
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..][..g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let r = (c * g.kh + i) * g.kw + j;
                let src = &cols[r * p..(r + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.width..][..g.width];
                    let srow = &src[oy * g.out_w..][..g.out_w];
                    for (ox, s) in srow.iter().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            drow[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let i = g.constant(Tensor::identity(2));
        let y = g.matmul(a, i).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let r = g.constant(Tensor::from_rows(&[&[1.0, 2.0]]));
        let c = g.constant(Tensor::from_rows(&[&[3.0], &[4.0]]));
        let y = g.matmul(r, c).unwrap();
        // triple loop: 1·3 + 2·4
        let mut want = 0.0;
        for k in 0..2 {
            want += [1.0, 2.0][k] * [3.0, 4.0][k];
        }
        assert_eq!(g.value(y).data(), &[want]);
        assert_eq!(want, 11.0);

        let z = g.constant(Tensor::from_rows(&[&[0.0, 0.0]]));
        let c2 = g.constant(Tensor::from_rows(&[&[5.0], &[7.0]]));
        let y = g.matmul(z, c2).unwrap();
        assert_eq!(g.value(y).data(), &[0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn conv_all_ones_center_is_nine() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full([1, 3, 3], 1.0));
        let k = g.constant(Tensor::full([1, 1, 3, 3], 1.0));
        let y = g.conv2d(x, k, None, 1, 1).unwrap();
        // direct summation over the 3×3 window centred at (1, 1)
        let (xs, ks) = ([1.0; 9], [1.0; 9]);
        let want: f64 = xs.iter().zip(&ks).map(|(a, b)| a * b).sum();
        assert_eq!(g.value(y).data()[4], want);
        // corner sees a 2×2 window
        assert_eq!(g.value(y).data()[0], 4.0);
    }

    #[test]
    fn conv_delta_kernel_is_identity_and_zero_maps_to_zero() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = g.constant(t(&[2, 5, 4], &data));
        let mut kd = vec![0.0; 2 * 2 * 9];
        kd[4] = 1.0; // out 0 <- in 0 centre
        kd[3 * 9 + 4] = 1.0; // out 1 <- in 1 centre
        let k = g.constant(t(&[2, 2, 3, 3], &kd));
        let y = g.conv2d(x, k, None, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);

        let z = g.constant(Tensor::zeros([2, 5, 4]));
        let y = g.conv2d(z, k, None, 1, 1).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_stride_two_output_is_ceil_half() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([1, 7, 6]));
        let k = g.constant(Tensor::zeros([3, 1, 3, 3]));
        let y = g.conv2d(x, k, None, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[3, 4, 3]);
        let p = g.constant(Tensor::zeros([3, 1, 1, 1]));
        let y = g.conv2d(x, p, None, 2, 0).unwrap();
        assert_eq!(g.shape(y), &[3, 4, 3]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([2, 4, 4]));
        let k = g.constant(Tensor::zeros([1, 3, 3, 3]));
        assert!(matches!(g.conv2d(x, k, None, 1, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn relu_values_and_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn upsample_replicates_and_sums_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[1, 1, 1], &[5.0]));
        let y = g.upsample_nearest2x(x).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[5.0; 4]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn maxpool_examples() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_rows(&[&[1.0, 5.0], &[3.0, 2.0]]));
        let y = g.maxpool_points(x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);

        // ties route to the first row
        let tie = g.param(Tensor::from_rows(&[&[4.0], &[4.0]]));
        let m = g.maxpool_points(tie).unwrap();
        g.backward(m).unwrap();
        assert_eq!(g.grad(tie).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn mse_masked_examples() {
        let mut g = Graph::new();
        let p = g.param(t(&[4], &[3.0, 4.0, 5.0, 100.0]));
        let tg = g.constant(t(&[4], &[1.0, 2.0, 3.0, -7.0]));
        let mask = t(&[4], &[1.0, 1.0, 1.0, 0.0]);
        let l = g.mse_masked(p, tg, &mask).unwrap();
        // (4 + 4 + 4) / 3
        assert_eq!(g.value(l).item(), Some(4.0));
        g.backward(l).unwrap();
        assert_eq!(g.grad(p).unwrap().data()[3], 0.0);

        let same = g.mse_masked(tg, tg, &mask).unwrap();
        assert_eq!(g.value(same).item(), Some(0.0));

        let zero = Tensor::zeros([4]);
        assert!(matches!(g.mse_masked(p, tg, &zero), Err(Error::DegenerateMask)));
    }

    #[test]
    fn add_zero_is_identity_and_concat_layout() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let z = g.constant(Tensor::zeros([2, 2]));
        let y = g.add(x, z).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let c = g.concat(&[x, z], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 0.0, 0.0, 3.0, 4.0, 0.0, 0.0]);
        let c0 = g.concat(&[x, z], 0).unwrap();
        assert_eq!(g.shape(c0), &[4, 2]);
        let bad = g.constant(Tensor::zeros([3, 3]));
        assert!(g.concat(&[x, bad], 0).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar_and_records_in_order() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros([2]));
        let y = g.relu(x);
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
        let s = g.sum(y);
        assert_eq!(g.op_names(), vec!["leaf", "relu", "sum"]);
        g.backward(s).unwrap();
        assert!(g.grad(x).is_some());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::full([2], 3.0));
        let p = g.param(Tensor::full([2], 2.0));
        let y = g.mul(c, p).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(p).unwrap().data(), &[3.0, 3.0]);
    }
}
