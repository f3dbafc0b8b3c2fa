//! Raw loops shared by the tape's forward and backward passes.

use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(op, a, b)),
        };
    }
    Ok(out)
}

/// For every element of `out`, the flat offset of the element of `inp` that
/// broadcasts onto it. `None` when the shapes are identical.
pub(crate) fn broadcast_offsets(out: &[usize], inp: &[usize]) -> Option<Vec<usize>> {
    if out == inp {
        return None;
    }
    let rank = out.len();
    let pad = rank - inp.len();
    // Stride of each output axis inside `inp`, zero where broadcast.
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..rank).rev() {
        if i >= pad {
            let d = inp[i - pad];
            strides[i] = if d == 1 { 0 } else { s };
            s *= d;
        }
    }
    let n: usize = out.iter().product();
    let mut offsets = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..n {
        offsets.push(cur);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            cur += strides[ax];
            if idx[ax] < out[ax] {
                break;
            }
            cur -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Some(offsets)
}

/// Gather `src` through a broadcast map.
pub(crate) fn expand(src: &[f64], offsets: &Option<Vec<usize>>) -> Vec<f64> {
    match offsets {
        None => src.to_vec(),
        Some(o) => o.iter().map(|&i| src[i]).collect(),
    }
}

/// Sum a broadcast gradient back onto the source extent.
pub(crate) fn reduce(grad: &[f64], offsets: &Option<Vec<usize>>, src_len: usize) -> Vec<f64> {
    match offsets {
        None => grad.to_vec(),
        Some(o) => {
            let mut out = vec![0.0; src_len];
            for (g, &i) in grad.iter().zip(o) {
                out[i] += g;
            }
            out
        }
    }
}

/// `c += a · b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c += a · bᵀ` for `a: m×n`, `b: k×n`, `c: m×k`.
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            c[i * k + p] += s;
        }
    }
}

/// `c += aᵀ · b` for `a: m×k`, `b: m×n`, `c: k×n`.
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Split a shape around `axis` into (outer, extent, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut m = f64::NEG_INFINITY;
            for k in 0..n {
                m = m.max(x[base + k * inner]);
            }
            let mut s = 0.0;
            for k in 0..n {
                let e = (x[base + k * inner] - m).exp();
                y[base + k * inner] = e;
                s += e;
            }
            for k in 0..n {
                y[base + k * inner] /= s;
            }
        }
    }
    y
}

pub(crate) fn log_softmax_forward(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut m = f64::NEG_INFINITY;
            for k in 0..n {
                m = m.max(x[base + k * inner]);
            }
            let mut s = 0.0;
            for k in 0..n {
                s += (x[base + k * inner] - m).exp();
            }
            let lse = m + s.ln();
            for k in 0..n {
                y[base + k * inner] = x[base + k * inner] - lse;
            }
        }
    }
    y
}

/// Normalization along `axis` with population variance. Returns the output
/// and the per-slice inverse standard deviations.
pub(crate) fn layer_norm_forward(
    x: &[f64],
    shape: &[usize],
    axis: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut y = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut mean = 0.0;
            for k in 0..n {
                mean += x[base + k * inner];
            }
            mean /= n as f64;
            let mut var = 0.0;
            for k in 0..n {
                let d = x[base + k * inner] - mean;
                var += d * d;
            }
            var /= n as f64;
            let r = 1.0 / (var + eps).sqrt();
            inv_std[o * inner + i] = r;
            for k in 0..n {
                y[base + k * inner] = (x[base + k * inner] - mean) * r;
            }
        }
    }
    (y, inv_std)
}

/// Corner weights and indices of a bilinear lookup at `(x, y)` in a grid of
/// extent `h × w`. Out-of-range corners are reported as `None` (zero padding).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Bilinear {
    pub x0: i64,
    pub y0: i64,
    pub fx: f64,
    pub fy: f64,
}

impl Bilinear {
    pub fn new(x: f64, y: f64) -> Self {
        let x0 = x.floor();
        let y0 = y.floor();
        Bilinear {
            x0: x0 as i64,
            y0: y0 as i64,
            fx: x - x0,
            fy: y - y0,
        }
    }

    /// `(flat cell index, weight, dweight/dx, dweight/dy)` for the in-bounds corners.
    pub fn corners(&self, h: usize, w: usize) -> impl Iterator<Item = (usize, f64, f64, f64)> {
        let Bilinear { x0, y0, fx, fy } = *self;
        let cand = [
            (x0, y0, (1.0 - fx) * (1.0 - fy), -(1.0 - fy), -(1.0 - fx)),
            (x0 + 1, y0, fx * (1.0 - fy), 1.0 - fy, -fx),
            (x0, y0 + 1, (1.0 - fx) * fy, -fy, 1.0 - fx),
            (x0 + 1, y0 + 1, fx * fy, fy, fx),
        ];
        cand.into_iter().filter_map(move |(cx, cy, wt, dx, dy)| {
            if cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h {
                Some((cy as usize * w + cx as usize, wt, dx, dy))
            } else {
                None
            }
        })
    }
}

/// `grid: c×h×w`, `coords: n×2` as (x = column, y = row). Output `n×c`.
pub(crate) fn grid_sample_forward(
    grid: &[f64],
    c: usize,
    h: usize,
    w: usize,
    coords: &[f64],
) -> Vec<f64> {
    let n = coords.len() / 2;
    let hw = h * w;
    let mut out = vec![0.0; n * c];
    for p in 0..n {
        let b = Bilinear::new(coords[2 * p], coords[2 * p + 1]);
        let orow = &mut out[p * c..(p + 1) * c];
        for (cell, wt, _, _) in b.corners(h, w) {
            if wt == 0.0 {
                continue;
            }
            for (ch, o) in orow.iter_mut().enumerate() {
                *o += wt * grid[ch * hw + cell];
            }
        }
    }
    out
}

/// Depthwise 3×3 correlation with zero padding; `w: c×9` in row-major
/// kernel order (dy, dx) ∈ {-1,0,1}².
pub(crate) fn dwconv3_forward(x: &[f64], w: &[f64], c: usize, h: usize, wd: usize) -> Vec<f64> {
    let hw = h * wd;
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let xp = &x[ch * hw..(ch + 1) * hw];
        let op = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let wt = w[ch * 9 + ky * 3 + kx];
                if wt == 0.0 {
                    continue;
                }
                let dy = ky as i64 - 1;
                let dx = kx as i64 - 1;
                let ys = (0i64.max(-dy)) as usize..(h as i64).min(h as i64 - dy) as usize;
                let xs0 = 0i64.max(-dx) as usize;
                let xs1 = (wd as i64).min(wd as i64 - dx) as usize;
                for y in ys {
                    let sy = (y as i64 + dy) as usize;
                    let orow = &mut op[y * wd + xs0..y * wd + xs1];
                    let srow = &xp[sy * wd + (xs0 as i64 + dx) as usize..sy * wd + (xs1 as i64 + dx) as usize];
                    for (o, s) in orow.iter_mut().zip(srow) {
                        *o += wt * s;
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`dwconv3_forward`] w.r.t. input and kernel.
pub(crate) fn dwconv3_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    c: usize,
    h: usize,
    wd: usize,
) -> (Vec<f64>, Vec<f64>) {
    let hw = h * wd;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    for ch in 0..c {
        let xp = &x[ch * hw..(ch + 1) * hw];
        let gp = &g[ch * hw..(ch + 1) * hw];
        let gxp = &mut gx[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let wt = w[ch * 9 + ky * 3 + kx];
                let dy = ky as i64 - 1;
                let dx = kx as i64 - 1;
                let ys = (0i64.max(-dy)) as usize..(h as i64).min(h as i64 - dy) as usize;
                let xs0 = 0i64.max(-dx) as usize;
                let xs1 = (wd as i64).min(wd as i64 - dx) as usize;
                let mut acc = 0.0;
                for y in ys {
                    let sy = (y as i64 + dy) as usize;
                    let s0 = sy * wd + (xs0 as i64 + dx) as usize;
                    let len = xs1 - xs0;
                    let grow = &gp[y * wd + xs0..y * wd + xs0 + len];
                    let srow = &xp[s0..s0 + len];
                    for (gv, sv) in grow.iter().zip(srow) {
                        acc += gv * sv;
                    }
                    let gxrow = &mut gxp[s0..s0 + len];
                    for (gxv, gv) in gxrow.iter_mut().zip(grow) {
                        *gxv += wt * gv;
                    }
                }
                gw[ch * 9 + ky * 3 + kx] += acc;
            }
        }
    }
    (gx, gw)
}
