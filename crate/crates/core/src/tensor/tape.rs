use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, Bilinear};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Unary {
    Relu,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Sin,
    Cos,
    Abs,
    Square,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op {
    Leaf,
    Binary {
        kind: Binary,
        a: usize,
        b: usize,
        ia: Option<Vec<usize>>,
        ib: Option<Vec<usize>>,
    },
    Affine {
        a: usize,
        scale: f64,
    },
    Unary {
        kind: Unary,
        a: usize,
    },
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Reshape {
        a: usize,
    },
    Transpose {
        a: usize,
        rows: usize,
        cols: usize,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
        extents: Vec<usize>,
    },
    Slice {
        a: usize,
        axis: usize,
        start: usize,
    },
    IndexSelect {
        a: usize,
        indices: Vec<usize>,
    },
    Sum {
        a: usize,
    },
    SumAxis {
        a: usize,
        axis: usize,
    },
    Softmax {
        a: usize,
        axis: usize,
    },
    LogSoftmax {
        a: usize,
        axis: usize,
    },
    LayerNorm {
        a: usize,
        axis: usize,
        inv_std: Vec<f64>,
    },
    Atan2 {
        y: usize,
        x: usize,
    },
    GridSample {
        grid: usize,
        coords: usize,
    },
    DwConv3 {
        x: usize,
        w: usize,
    },
    AvgPool {
        x: usize,
        factor: usize,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Record-on-execute computation graph.
///
/// Nodes are appended in execution order, so reverse insertion order is a
/// valid topological order for the backward sweep.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn val(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Leaf that accumulates a gradient.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    /// Gradient of the last `backward` call w.r.t. a leaf.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        self.grads.borrow().get(v.id).cloned().flatten()
    }

    /// Reverse sweep from a scalar loss. Every leaf created with
    /// [`Tape::param`] that lies on a path from `loss` gets d(loss)/d(leaf).
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.id].value;
        if lv.numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        let n = nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut out: Vec<Option<Tensor>> = vec![None; n];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            propagate(&nodes, node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                out[id] = Some(Tensor {
                    shape: node.value.shape().to_vec(),
                    data: g,
                });
            }
        }
        drop(nodes);
        *self.grads.borrow_mut() = out;
        Ok(())
    }

    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?
            .value();
        let rank = first.ndim();
        if axis >= rank {
            return Err(Error::shape("concat", first.shape(), &[axis]));
        }
        let mut extents = Vec::with_capacity(parts.len());
        let mut vals = Vec::with_capacity(parts.len());
        for p in parts {
            let v = p.value();
            let ok = v.ndim() == rank
                && v.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", first.shape(), v.shape()));
            }
            extents.push(v.shape()[axis]);
            vals.push(v);
        }
        let (outer, _, inner) = kernels::axis_split(first.shape(), axis);
        let total: usize = extents.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &e) in vals.iter().zip(&extents) {
                data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let rg = parts.iter().any(|p| self.rg(p.id));
        Ok(self.push(
            Tensor { shape, data },
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
                axis,
                extents,
            },
            rg,
        ))
    }

    /// Elementwise `atan2(y, x)` for same-shaped inputs.
    pub fn atan2<'t>(&'t self, y: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let (yv, xv) = (y.value(), x.value());
        if yv.shape() != xv.shape() {
            return Err(Error::shape("atan2", yv.shape(), xv.shape()));
        }
        let data = yv.data().iter().zip(xv.data()).map(|(a, b)| a.atan2(*b)).collect();
        let rg = self.rg(y.id) || self.rg(x.id);
        Ok(self.push(
            Tensor {
                shape: yv.shape().to_vec(),
                data,
            },
            Op::Atan2 { y: y.id, x: x.id },
            rg,
        ))
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, g: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(g) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    let rg = |id: usize| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Binary { kind, a, b, ia, ib } => {
            let (av, bv) = (val(*a), val(*b));
            match kind {
                Binary::Add => {
                    if rg(*a) {
                        acc(grads, nodes, *a, kernels::reduce(g, ia, av.numel()));
                    }
                    if rg(*b) {
                        acc(grads, nodes, *b, kernels::reduce(g, ib, bv.numel()));
                    }
                }
                Binary::Sub => {
                    if rg(*a) {
                        acc(grads, nodes, *a, kernels::reduce(g, ia, av.numel()));
                    }
                    if rg(*b) {
                        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                        acc(grads, nodes, *b, kernels::reduce(&neg, ib, bv.numel()));
                    }
                }
                Binary::Mul => {
                    if rg(*a) {
                        let be = kernels::expand(bv.data(), ib);
                        let ga: Vec<f64> = g.iter().zip(&be).map(|(x, y)| x * y).collect();
                        acc(grads, nodes, *a, kernels::reduce(&ga, ia, av.numel()));
                    }
                    if rg(*b) {
                        let ae = kernels::expand(av.data(), ia);
                        let gb: Vec<f64> = g.iter().zip(&ae).map(|(x, y)| x * y).collect();
                        acc(grads, nodes, *b, kernels::reduce(&gb, ib, bv.numel()));
                    }
                }
                Binary::Div => {
                    let be = kernels::expand(bv.data(), ib);
                    if rg(*a) {
                        let ga: Vec<f64> = g.iter().zip(&be).map(|(x, y)| x / y).collect();
                        acc(grads, nodes, *a, kernels::reduce(&ga, ia, av.numel()));
                    }
                    if rg(*b) {
                        let ae = kernels::expand(av.data(), ia);
                        let gb: Vec<f64> = g
                            .iter()
                            .zip(ae.iter().zip(&be))
                            .map(|(gv, (x, y))| -gv * x / (y * y))
                            .collect();
                        acc(grads, nodes, *b, kernels::reduce(&gb, ib, bv.numel()));
                    }
                }
            }
        }
        Op::Affine { a, scale } => {
            acc(grads, nodes, *a, g.iter().map(|x| x * scale).collect());
        }
        Op::Unary { kind, a } => {
            let x = val(*a).data();
            let y = node.value.data();
            let ga: Vec<f64> = match kind {
                Unary::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
                Unary::Exp => g.iter().zip(y).map(|(g, y)| g * y).collect(),
                Unary::Log => g.iter().zip(x).map(|(g, x)| g / x).collect(),
                Unary::Sqrt => g.iter().zip(y).map(|(g, y)| 0.5 * g / y).collect(),
                Unary::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                Unary::Sin => g.iter().zip(x).map(|(g, x)| g * x.cos()).collect(),
                Unary::Cos => g.iter().zip(x).map(|(g, x)| -g * x.sin()).collect(),
                Unary::Abs => g
                    .iter()
                    .zip(x)
                    .map(|(g, x)| {
                        if *x > 0.0 {
                            *g
                        } else if *x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect(),
                Unary::Square => g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect(),
            };
            acc(grads, nodes, *a, ga);
        }
        Op::MatMul { a, b, m, k, n } => {
            if rg(*a) {
                let mut ga = vec![0.0; m * k];
                kernels::matmul_bt_acc(g, val(*b).data(), &mut ga, *m, *n, *k);
                acc(grads, nodes, *a, ga);
            }
            if rg(*b) {
                let mut gb = vec![0.0; k * n];
                kernels::matmul_at_acc(val(*a).data(), g, &mut gb, *m, *k, *n);
                acc(grads, nodes, *b, gb);
            }
        }
        Op::Reshape { a } => acc(grads, nodes, *a, g.to_vec()),
        Op::Transpose { a, rows, cols } => {
            // Output is cols×rows.
            let mut ga = vec![0.0; rows * cols];
            for i in 0..*rows {
                for j in 0..*cols {
                    ga[i * cols + j] = g[j * rows + i];
                }
            }
            acc(grads, nodes, *a, ga);
        }
        Op::Concat {
            parts,
            axis,
            extents,
        } => {
            let (outer, total, inner) = kernels::axis_split(node.value.shape(), *axis);
            let mut offset = 0;
            for (&p, &e) in parts.iter().zip(extents) {
                if rg(p) {
                    let mut gp = Vec::with_capacity(outer * e * inner);
                    for o in 0..outer {
                        let s = o * total * inner + offset * inner;
                        gp.extend_from_slice(&g[s..s + e * inner]);
                    }
                    acc(grads, nodes, p, gp);
                }
                offset += e;
            }
        }
        Op::Slice { a, axis, start } => {
            let av = val(*a);
            let (outer, n, inner) = kernels::axis_split(av.shape(), *axis);
            let len = node.value.shape()[*axis];
            let mut ga = vec![0.0; av.numel()];
            for o in 0..outer {
                let dst = o * n * inner + start * inner;
                let src = o * len * inner;
                ga[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            acc(grads, nodes, *a, ga);
        }
        Op::IndexSelect { a, indices } => {
            let av = val(*a);
            let row: usize = av.shape()[1..].iter().product();
            let mut ga = vec![0.0; av.numel()];
            for (r, &i) in indices.iter().enumerate() {
                for j in 0..row {
                    ga[i * row + j] += g[r * row + j];
                }
            }
            acc(grads, nodes, *a, ga);
        }
        Op::Sum { a } => {
            let n = val(*a).numel();
            acc(grads, nodes, *a, vec![g[0]; n]);
        }
        Op::SumAxis { a, axis } => {
            let av = val(*a);
            let (outer, n, inner) = kernels::axis_split(av.shape(), *axis);
            let mut ga = vec![0.0; av.numel()];
            for o in 0..outer {
                for k in 0..n {
                    for i in 0..inner {
                        ga[o * n * inner + k * inner + i] = g[o * inner + i];
                    }
                }
            }
            acc(grads, nodes, *a, ga);
        }
        Op::Softmax { a, axis } => {
            let y = node.value.data();
            let (outer, n, inner) = kernels::axis_split(node.value.shape(), *axis);
            let mut ga = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    let mut dot = 0.0;
                    for k in 0..n {
                        dot += g[base + k * inner] * y[base + k * inner];
                    }
                    for k in 0..n {
                        let j = base + k * inner;
                        ga[j] = y[j] * (g[j] - dot);
                    }
                }
            }
            acc(grads, nodes, *a, ga);
        }
        Op::LogSoftmax { a, axis } => {
            let y = node.value.data();
            let (outer, n, inner) = kernels::axis_split(node.value.shape(), *axis);
            let mut ga = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    let mut s = 0.0;
                    for k in 0..n {
                        s += g[base + k * inner];
                    }
                    for k in 0..n {
                        let j = base + k * inner;
                        ga[j] = g[j] - y[j].exp() * s;
                    }
                }
            }
            acc(grads, nodes, *a, ga);
        }
        Op::LayerNorm { a, axis, inv_std } => {
            let y = node.value.data();
            let (outer, n, inner) = kernels::axis_split(node.value.shape(), *axis);
            let mut ga = vec![0.0; y.len()];
            let nf = n as f64;
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * n * inner + i;
                    let (mut mg, mut mgy) = (0.0, 0.0);
                    for k in 0..n {
                        let j = base + k * inner;
                        mg += g[j];
                        mgy += g[j] * y[j];
                    }
                    mg /= nf;
                    mgy /= nf;
                    let r = inv_std[o * inner + i];
                    for k in 0..n {
                        let j = base + k * inner;
                        ga[j] = r * (g[j] - mg - y[j] * mgy);
                    }
                }
            }
            acc(grads, nodes, *a, ga);
        }
        Op::Atan2 { y, x } => {
            let (yv, xv) = (val(*y).data(), val(*x).data());
            let r2: Vec<f64> = yv.iter().zip(xv).map(|(a, b)| a * a + b * b).collect();
            if rg(*y) {
                acc(grads, nodes, *y, (0..g.len()).map(|i| g[i] * xv[i] / r2[i]).collect());
            }
            if rg(*x) {
                acc(grads, nodes, *x, (0..g.len()).map(|i| -g[i] * yv[i] / r2[i]).collect());
            }
        }
        Op::GridSample { grid, coords } => {
            let gv = val(*grid);
            let cv = val(*coords);
            let (c, h, w) = (gv.shape()[0], gv.shape()[1], gv.shape()[2]);
            let hw = h * w;
            let npts = cv.shape()[0];
            let mut ggrid = if rg(*grid) { vec![0.0; gv.numel()] } else { vec![] };
            let mut gcoord = vec![0.0; npts * 2];
            for p in 0..npts {
                let b = Bilinear::new(cv.data()[2 * p], cv.data()[2 * p + 1]);
                let grow = &g[p * c..(p + 1) * c];
                for (cell, wt, dwx, dwy) in b.corners(h, w) {
                    let mut dot = 0.0;
                    for (ch, gvv) in grow.iter().enumerate() {
                        dot += gvv * gv.data()[ch * hw + cell];
                    }
                    gcoord[2 * p] += dwx * dot;
                    gcoord[2 * p + 1] += dwy * dot;
                    if !ggrid.is_empty() {
                        for (ch, gvv) in grow.iter().enumerate() {
                            ggrid[ch * hw + cell] += wt * gvv;
                        }
                    }
                }
            }
            if rg(*grid) {
                acc(grads, nodes, *grid, ggrid);
            }
            if rg(*coords) {
                acc(grads, nodes, *coords, gcoord);
            }
        }
        Op::DwConv3 { x, w } => {
            let (xv, wv) = (val(*x), val(*w));
            let s = xv.shape();
            let (gx, gw) = kernels::dwconv3_backward(xv.data(), wv.data(), g, s[0], s[1], s[2]);
            if rg(*x) {
                acc(grads, nodes, *x, gx);
            }
            if rg(*w) {
                acc(grads, nodes, *w, gw);
            }
        }
        Op::AvgPool { x, factor } => {
            let xv = val(*x);
            let s = xv.shape();
            let (c, h, w) = (s[0], s[1], s[2]);
            let (ho, wo) = (h / factor, w / factor);
            let norm = 1.0 / (factor * factor) as f64;
            let mut gx = vec![0.0; xv.numel()];
            for ch in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        gx[ch * h * w + y * w + xx] =
                            g[ch * ho * wo + (y / factor) * wo + xx / factor] * norm;
                    }
                }
            }
            acc(grads, nodes, *x, gx);
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.val(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.rg(self.id)
    }

    fn binary(self, other: Var<'t>, kind: Binary, op: &'static str) -> Result<Var<'t>> {
        let (av, bv) = (self.value(), other.value());
        let shape = kernels::broadcast_shape(op, av.shape(), bv.shape())?;
        let ia = kernels::broadcast_offsets(&shape, av.shape());
        let ib = kernels::broadcast_offsets(&shape, bv.shape());
        let n: usize = shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data: Vec<f64> = match (&ia, &ib) {
            (None, None) => ad.iter().zip(bd).map(|(x, y)| f(*x, *y)).collect(),
            _ => (0..n)
                .map(|i| {
                    let x = match &ia {
                        Some(o) => ad[o[i]],
                        None => ad[i],
                    };
                    let y = match &ib {
                        Some(o) => bd[o[i]],
                        None => bd[i],
                    };
                    f(x, y)
                })
                .collect(),
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(
            Tensor { shape, data },
            Op::Binary {
                kind,
                a: self.id,
                b: other.id,
                ia,
                ib,
            },
            rg,
        ))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Add, "add")
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Sub, "sub")
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Mul, "mul")
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Div, "div")
    }

    /// `scale · x`.
    pub fn scale(self, scale: f64) -> Var<'t> {
        let v = self.value().map(|x| x * scale);
        self.tape.push(v, Op::Affine { a: self.id, scale }, self.requires_grad())
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.tape
            .push(v, Op::Affine { a: self.id, scale: 1.0 }, self.requires_grad())
    }

    fn unary(self, kind: Unary, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value().map(f);
        self.tape
            .push(v, Op::Unary { kind, a: self.id }, self.requires_grad())
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Unary::Relu, |x| x.max(0.0))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Unary::Exp, f64::exp)
    }

    pub fn log(self) -> Var<'t> {
        self.unary(Unary::Log, f64::ln)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Unary::Sqrt, f64::sqrt)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Unary::Tanh, f64::tanh)
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Unary::Sin, f64::sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Unary::Cos, f64::cos)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Unary::Abs, f64::abs)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Unary::Square, |x| x * x)
    }

    /// 2-D matrix product.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (av, bv) = (self.value(), other.value());
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        kernels::matmul_acc(av.data(), bv.data(), &mut data, m, k, n);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = (*self.value()).clone().reshape(shape)?;
        Ok(self
            .tape
            .push(v, Op::Reshape { a: self.id }, self.requires_grad()))
    }

    /// Swap the two axes of a matrix.
    pub fn transpose(self) -> Result<Var<'t>> {
        let av = self.value();
        if av.ndim() != 2 {
            return Err(Error::shape("transpose", av.shape(), &[2]));
        }
        let (rows, cols) = (av.shape()[0], av.shape()[1]);
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                data[j * rows + i] = av.data()[i * cols + j];
            }
        }
        Ok(self.tape.push(
            Tensor {
                shape: vec![cols, rows],
                data,
            },
            Op::Transpose {
                a: self.id,
                rows,
                cols,
            },
            self.requires_grad(),
        ))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let av = self.value();
        if axis >= av.ndim() || start > end || end > av.shape()[axis] {
            return Err(Error::shape("slice", av.shape(), &[axis, start, end]));
        }
        let (outer, n, inner) = kernels::axis_split(av.shape(), axis);
        let len = end - start;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = o * n * inner + start * inner;
            data.extend_from_slice(&av.data()[s..s + len * inner]);
        }
        let mut shape = av.shape().to_vec();
        shape[axis] = len;
        Ok(self.tape.push(
            Tensor { shape, data },
            Op::Slice {
                a: self.id,
                axis,
                start,
            },
            self.requires_grad(),
        ))
    }

    /// Gather rows (axis 0). Indices may repeat.
    pub fn index_select(self, indices: &[usize]) -> Result<Var<'t>> {
        let av = self.value();
        if av.ndim() == 0 {
            return Err(Error::shape("index_select", av.shape(), &[]));
        }
        let rows = av.shape()[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("index_select", av.shape(), &[bad]));
        }
        let row: usize = av.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&av.data()[i * row..(i + 1) * row]);
        }
        let mut shape = av.shape().to_vec();
        shape[0] = indices.len();
        Ok(self.tape.push(
            Tensor { shape, data },
            Op::IndexSelect {
                a: self.id,
                indices: indices.to_vec(),
            },
            self.requires_grad(),
        ))
    }

    pub fn sum(self) -> Var<'t> {
        let s: f64 = self.value().data().iter().sum();
        self.tape
            .push(Tensor::scalar(s), Op::Sum { a: self.id }, self.requires_grad())
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Reduce one axis away.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let av = self.value();
        if axis >= av.ndim() {
            return Err(Error::shape("sum_axis", av.shape(), &[axis]));
        }
        let (outer, n, inner) = kernels::axis_split(av.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    data[o * inner + i] += av.data()[o * n * inner + k * inner + i];
                }
            }
        }
        let mut shape = av.shape().to_vec();
        shape.remove(axis);
        Ok(self.tape.push(
            Tensor { shape, data },
            Op::SumAxis { a: self.id, axis },
            self.requires_grad(),
        ))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let n = self.value().shape().get(axis).copied().unwrap_or(1).max(1);
        Ok(self.sum_axis(axis)?.scale(1.0 / n as f64))
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<Rc<Tensor>> {
        let av = self.value();
        if axis >= av.ndim() || av.shape()[axis] == 0 {
            return Err(Error::shape(op, av.shape(), &[axis]));
        }
        Ok(av)
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let av = self.check_axis("softmax", axis)?;
        let data = kernels::softmax_forward(av.data(), av.shape(), axis);
        Ok(self.tape.push(
            Tensor {
                shape: av.shape().to_vec(),
                data,
            },
            Op::Softmax { a: self.id, axis },
            self.requires_grad(),
        ))
    }

    pub fn log_softmax(self, axis: usize) -> Result<Var<'t>> {
        let av = self.check_axis("log_softmax", axis)?;
        let data = kernels::log_softmax_forward(av.data(), av.shape(), axis);
        Ok(self.tape.push(
            Tensor {
                shape: av.shape().to_vec(),
                data,
            },
            Op::LogSoftmax { a: self.id, axis },
            self.requires_grad(),
        ))
    }

    /// Zero-mean, unit-variance normalization along `axis` (population
    /// variance, `eps` inside the square root). No affine part.
    pub fn layer_norm(self, axis: usize, eps: f64) -> Result<Var<'t>> {
        let av = self.check_axis("layer_norm", axis)?;
        let (data, inv_std) = kernels::layer_norm_forward(av.data(), av.shape(), axis, eps);
        Ok(self.tape.push(
            Tensor {
                shape: av.shape().to_vec(),
                data,
            },
            Op::LayerNorm {
                a: self.id,
                axis,
                inv_std,
            },
            self.requires_grad(),
        ))
    }

    /// Copy of the value with no parents; gradients stop here.
    pub fn detach(self) -> Var<'t> {
        let v = (*self.value()).clone();
        self.tape.constant(v)
    }

    /// Bilinear lookup of a `C×H×W` grid at `N×2` continuous
    /// (column, row) coordinates, zero outside the grid. Returns `N×C`.
    pub fn grid_sample(self, coords: Var<'t>) -> Result<Var<'t>> {
        let (gv, cv) = (self.value(), coords.value());
        if gv.ndim() != 3 || cv.ndim() != 2 || cv.shape()[1] != 2 {
            return Err(Error::shape("grid_sample", gv.shape(), cv.shape()));
        }
        let (c, h, w) = (gv.shape()[0], gv.shape()[1], gv.shape()[2]);
        let data = kernels::grid_sample_forward(gv.data(), c, h, w, cv.data());
        let rg = self.requires_grad() || coords.requires_grad();
        Ok(self.tape.push(
            Tensor {
                shape: vec![cv.shape()[0], c],
                data,
            },
            Op::GridSample {
                grid: self.id,
                coords: coords.id,
            },
            rg,
        ))
    }

    /// Depthwise 3×3 correlation of a `C×H×W` map with a `C×9` kernel.
    pub fn dwconv3(self, kernel: Var<'t>) -> Result<Var<'t>> {
        let (xv, wv) = (self.value(), kernel.value());
        if xv.ndim() != 3 || wv.shape() != [xv.shape()[0], 9] {
            return Err(Error::shape("dwconv3", xv.shape(), wv.shape()));
        }
        let s = xv.shape();
        let data = kernels::dwconv3_forward(xv.data(), wv.data(), s[0], s[1], s[2]);
        let rg = self.requires_grad() || kernel.requires_grad();
        Ok(self.tape.push(
            Tensor {
                shape: s.to_vec(),
                data,
            },
            Op::DwConv3 {
                x: self.id,
                w: kernel.id,
            },
            rg,
        ))
    }

    /// Non-overlapping `factor×factor` mean pooling of a `C×H×W` map.
    pub fn avg_pool(self, factor: usize) -> Result<Var<'t>> {
        let xv = self.value();
        let s = xv.shape();
        if s.len() != 3 || factor == 0 || s[1] % factor != 0 || s[2] % factor != 0 {
            return Err(Error::shape("avg_pool", s, &[factor]));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (ho, wo) = (h / factor, w / factor);
        let norm = 1.0 / (factor * factor) as f64;
        let mut data = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data[ch * ho * wo + (y / factor) * wo + x / factor] +=
                        xv.data()[ch * h * w + y * w + x] * norm;
                }
            }
        }
        Ok(self.tape.push(
            Tensor {
                shape: vec![c, ho, wo],
                data,
            },
            Op::AvgPool {
                x: self.id,
                factor,
            },
            self.requires_grad(),
        ))
    }
}
