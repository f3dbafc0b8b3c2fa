use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Bound, Init, ParamId, ParamStore, Tensor, Var};

/// Shape of a path-attention operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathAttentionConfig {
    /// Heads, one per reference point.
    pub heads: usize,
    /// Samples per head.
    pub samples: usize,
    pub width: usize,
    pub head_width: usize,
    /// Offset bound in grid cells.
    pub max_offset: f64,
}

impl PathAttentionConfig {
    /// `head_width` is `width / heads` when that divides, else `width`.
    pub fn new(heads: usize, samples: usize, width: usize) -> Self {
        let head_width = if heads > 0 && width % heads == 0 {
            width / heads
        } else {
            width
        };
        PathAttentionConfig {
            heads,
            samples,
            width,
            head_width,
            max_offset: 4.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.samples == 0 || self.width == 0 || self.head_width == 0 {
            return Err(Error::Config(format!("degenerate path attention config {self:?}")));
        }
        if !(self.max_offset > 0.0) {
            return Err(Error::Config("max_offset must be positive".into()));
        }
        Ok(())
    }
}

/// Operator parameters as tape variables.
///
/// `value_proj[t]` is `C×C_T` and `out_proj[t]` is `C_T×C` (row-vector
/// convention). The offset head maps `C → T·K·2`, laid out head-major then
/// sample then `(dx, dy)`; the weight head maps `C → T·K`.
#[derive(Clone, Debug)]
pub struct PathAttentionVars<'t> {
    pub cfg: PathAttentionConfig,
    pub value_proj: Vec<Var<'t>>,
    pub out_proj: Vec<Var<'t>>,
    pub offset_w: Var<'t>,
    pub offset_b: Var<'t>,
    pub weight_w: Var<'t>,
    pub weight_b: Var<'t>,
}

/// Registered parameters of one path-attention operator.
#[derive(Clone, Debug)]
pub struct PathAttention {
    pub cfg: PathAttentionConfig,
    value_proj: Vec<ParamId>,
    out_proj: Vec<ParamId>,
    offset_w: ParamId,
    offset_b: ParamId,
    weight_w: ParamId,
    weight_b: ParamId,
}

impl PathAttention {
    /// Offset and weight heads start at zero weight. The weight bias is
    /// uniform; the offset bias puts sample 0 on the reference point and
    /// the others on a one-cell ring around it.
    pub fn new(store: &mut ParamStore, name: &str, cfg: PathAttentionConfig) -> Result<Self> {
        cfg.validate()?;
        let (t, k, c, ct) = (cfg.heads, cfg.samples, cfg.width, cfg.head_width);
        let value_proj = (0..t)
            .map(|h| {
                store.add(
                    format!("{name}.v{h}"),
                    &[c, ct],
                    Init::Xavier { fan_in: c, fan_out: ct },
                )
            })
            .collect();
        let out_proj = (0..t)
            .map(|h| {
                store.add(
                    format!("{name}.o{h}"),
                    &[ct, c],
                    Init::Xavier { fan_in: ct, fan_out: c },
                )
            })
            .collect();
        let mut bias = vec![0.0; t * k * 2];
        // Ring radius in cells, kept inside the tanh range.
        let radius = 1.0f64.min(0.5 * cfg.max_offset);
        for h in 0..t {
            for s in 1..k {
                let a = 2.0 * PI * (s - 1) as f64 / (k - 1) as f64;
                bias[(h * k + s) * 2] = (radius * a.cos() / cfg.max_offset).atanh();
                bias[(h * k + s) * 2 + 1] = (radius * a.sin() / cfg.max_offset).atanh();
            }
        }
        Ok(PathAttention {
            cfg,
            value_proj,
            out_proj,
            offset_w: store.add(format!("{name}.off.w"), &[c, t * k * 2], Init::Zeros),
            offset_b: store.add(
                format!("{name}.off.b"),
                &[t * k * 2],
                Init::Value(Tensor::vector(bias)),
            ),
            weight_w: store.add(format!("{name}.att.w"), &[c, t * k], Init::Zeros),
            weight_b: store.add(format!("{name}.att.b"), &[t * k], Init::Zeros),
        })
    }

    pub fn bind<'t>(&self, p: &Bound<'t>) -> PathAttentionVars<'t> {
        PathAttentionVars {
            cfg: self.cfg,
            value_proj: self.value_proj.iter().map(|&id| p.get(id)).collect(),
            out_proj: self.out_proj.iter().map(|&id| p.get(id)).collect(),
            offset_w: p.get(self.offset_w),
            offset_b: p.get(self.offset_b),
            weight_w: p.get(self.weight_w),
            weight_b: p.get(self.weight_b),
        }
    }
}

fn check_queries(queries: &Var<'_>, cfg: &PathAttentionConfig, op: &'static str) -> Result<usize> {
    let s = queries.shape();
    if s.len() != 2 || s[1] != cfg.width {
        return Err(Error::shape(op, &s, &[0, cfg.width]));
    }
    Ok(s[0])
}

/// Attention weights `a^{i,t,k}` as an `n×T×K` tensor; each `K` row sums to 1.
pub fn path_attention_weights<'t>(queries: Var<'t>, p: &PathAttentionVars<'t>) -> Result<Var<'t>> {
    let n = check_queries(&queries, &p.cfg, "path_attention")?;
    let (t, k) = (p.cfg.heads, p.cfg.samples);
    queries
        .matmul(p.weight_w)?
        .add(p.weight_b)?
        .reshape(&[n * t, k])?
        .softmax(1)?
        .reshape(&[n, t, k])
}

/// Shared body: one anchor per (query, head) given as `(n·T)×2` rows.
fn sample_heads<'t>(
    queries: Var<'t>,
    anchors: Var<'t>,
    grid: Var<'t>,
    p: &PathAttentionVars<'t>,
    op: &'static str,
) -> Result<Var<'t>> {
    let cfg = p.cfg;
    let n = check_queries(&queries, &cfg, op)?;
    let (t, k) = (cfg.heads, cfg.samples);
    if p.value_proj.len() != t || p.out_proj.len() != t {
        return Err(Error::invalid(op, "projection count differs from head count"));
    }
    let gs = grid.shape();
    if gs.len() != 3 || gs[0] != cfg.width {
        return Err(Error::shape(op, &gs, &[cfg.width, 0, 0]));
    }
    let offsets = queries
        .matmul(p.offset_w)?
        .add(p.offset_b)?
        .tanh()
        .scale(cfg.max_offset)
        .reshape(&[n * t * k, 2])?;
    let rows: Vec<usize> = (0..n * t).flat_map(|r| std::iter::repeat_n(r, k)).collect();
    let locs = anchors.index_select(&rows)?.add(offsets)?;
    let sampled = grid.grid_sample(locs)?; // (n·T·K)×C
    let weights = path_attention_weights(queries, p)?.reshape(&[n * t * k, 1])?;
    let pooled = sampled
        .mul(weights)?
        .reshape(&[n * t, k, cfg.width])?
        .sum_axis(1)?; // (n·T)×C
    let mut out: Option<Var<'t>> = None;
    for h in 0..t {
        let idx: Vec<usize> = (0..n).map(|i| i * t + h).collect();
        let head = pooled
            .index_select(&idx)?
            .matmul(p.value_proj[h])?
            .matmul(p.out_proj[h])?;
        out = Some(match out {
            None => head,
            Some(acc) => acc.add(head)?,
        });
    }
    Ok(out.expect("at least one head"))
}

/// Trajectory-guided sampling: head `t` of query `i` samples `K` points
/// around `refs[i, t]` (grid coordinates).
///
/// `queries: n×C`, `refs: n×T×2`, `grid: C×H×W`; returns `n×C`.
pub fn path_attention<'t>(
    queries: Var<'t>,
    refs: Var<'t>,
    grid: Var<'t>,
    p: &PathAttentionVars<'t>,
) -> Result<Var<'t>> {
    let n = check_queries(&queries, &p.cfg, "path_attention")?;
    let rs = refs.shape();
    if rs != [n, p.cfg.heads, 2] {
        return Err(Error::shape("path_attention", &rs, &[n, p.cfg.heads, 2]));
    }
    let anchors = refs.reshape(&[n * p.cfg.heads, 2])?;
    sample_heads(queries, anchors, grid, p, "path_attention")
}

/// Standard deformable attention: every head anchors at the query's single
/// reference point. `refs: n×2`.
pub fn deformable_attention_baseline<'t>(
    queries: Var<'t>,
    refs: Var<'t>,
    grid: Var<'t>,
    p: &PathAttentionVars<'t>,
) -> Result<Var<'t>> {
    let n = check_queries(&queries, &p.cfg, "deformable_attention")?;
    let rs = refs.shape();
    if rs != [n, 2] {
        return Err(Error::shape("deformable_attention", &rs, &[n, 2]));
    }
    let t = p.cfg.heads;
    let rows: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, t)).collect();
    let anchors = refs.index_select(&rows)?;
    sample_heads(queries, anchors, grid, p, "deformable_attention")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::bilinear_sample_value;
    use crate::tensor::gradcheck::{check_gradients, FD_STEP};
    use crate::tensor::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rt(rng: &mut ChaCha8Rng, shape: &[usize], a: f64) -> Tensor {
        let n = shape.iter().product();
        if a == 0.0 {
            return Tensor::zeros(shape);
        }
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-a..a)).collect()).unwrap()
    }

    /// Plain-tensor parameters for a config.
    #[derive(Clone)]
    struct Raw {
        cfg: PathAttentionConfig,
        vp: Vec<Tensor>,
        op: Vec<Tensor>,
        ow: Tensor,
        ob: Tensor,
        ww: Tensor,
        wb: Tensor,
    }

    impl Raw {
        fn random(rng: &mut ChaCha8Rng, cfg: PathAttentionConfig, offsets: bool) -> Self {
            let (t, k, c, ct) = (cfg.heads, cfg.samples, cfg.width, cfg.head_width);
            let s = if offsets { 0.3 } else { 0.0 };
            Raw {
                cfg,
                vp: (0..t).map(|_| rt(rng, &[c, ct], 1.0)).collect(),
                op: (0..t).map(|_| rt(rng, &[ct, c], 1.0)).collect(),
                ow: rt(rng, &[c, t * k * 2], s),
                ob: rt(rng, &[t * k * 2], s),
                ww: rt(rng, &[c, t * k], 1.0),
                wb: rt(rng, &[t * k], 1.0),
            }
        }

        fn tensors(&self) -> Vec<Tensor> {
            let mut v = self.vp.clone();
            v.extend(self.op.iter().cloned());
            v.extend([self.ow.clone(), self.ob.clone(), self.ww.clone(), self.wb.clone()]);
            v
        }

        fn vars<'t>(cfg: PathAttentionConfig, v: &[Var<'t>]) -> PathAttentionVars<'t> {
            let t = cfg.heads;
            PathAttentionVars {
                cfg,
                value_proj: v[..t].to_vec(),
                out_proj: v[t..2 * t].to_vec(),
                offset_w: v[2 * t],
                offset_b: v[2 * t + 1],
                weight_w: v[2 * t + 2],
                weight_b: v[2 * t + 3],
            }
        }
    }

    fn dot_row(x: &[f64], m: &Tensor, col: usize) -> f64 {
        x.iter().enumerate().map(|(r, v)| v * m.at(&[r, col])).sum()
    }

    /// Scalar loops over heads and samples, no tape.
    fn dense_reference(q: &[f64], anchors: &[[f64; 2]], grid: &Tensor, r: &Raw) -> Vec<f64> {
        let (t, k, c, ct) = (r.cfg.heads, r.cfg.samples, r.cfg.width, r.cfg.head_width);
        let mut out = vec![0.0; c];
        for h in 0..t {
            let logits: Vec<f64> = (0..k)
                .map(|s| dot_row(q, &r.ww, h * k + s) + r.wb.data()[h * k + s])
                .collect();
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            let mut pooled = vec![0.0; c];
            for s in 0..k {
                let a = (logits[s] - mx).exp() / z;
                let j = (h * k + s) * 2;
                let dx = r.cfg.max_offset * (dot_row(q, &r.ow, j) + r.ob.data()[j]).tanh();
                let dy = r.cfg.max_offset * (dot_row(q, &r.ow, j + 1) + r.ob.data()[j + 1]).tanh();
                let f = bilinear_sample_value(grid, [anchors[h][0] + dx, anchors[h][1] + dy]);
                for ch in 0..c {
                    pooled[ch] += a * f[ch];
                }
            }
            let v: Vec<f64> = (0..ct).map(|o| dot_row(&pooled, &r.vp[h], o)).collect();
            for ch in 0..c {
                out[ch] += dot_row(&v, &r.op[h], ch);
            }
        }
        out
    }

    fn run_path(q: &Tensor, refs: &Tensor, grid: &Tensor, r: &Raw) -> Tensor {
        let tape = Tape::new();
        let v: Vec<Var> = r.tensors().into_iter().map(|t| tape.constant(t)).collect();
        let p = Raw::vars(r.cfg, &v);
        let out = path_attention(
            tape.constant(q.clone()),
            tape.constant(refs.clone()),
            tape.constant(grid.clone()),
            &p,
        )
        .unwrap();
        (*out.value()).clone()
    }

    fn run_deform(q: &Tensor, refs: &Tensor, grid: &Tensor, r: &Raw) -> Tensor {
        let tape = Tape::new();
        let v: Vec<Var> = r.tensors().into_iter().map(|t| tape.constant(t)).collect();
        let p = Raw::vars(r.cfg, &v);
        let out = deformable_attention_baseline(
            tape.constant(q.clone()),
            tape.constant(refs.clone()),
            tape.constant(grid.clone()),
            &p,
        )
        .unwrap();
        (*out.value()).clone()
    }

    fn refs_tensor(rng: &mut ChaCha8Rng, n: usize, t: usize, h: usize, w: usize) -> Tensor {
        let mut d = Vec::new();
        for _ in 0..n * t {
            d.push(rng.random_range(0.0..(w - 1) as f64));
            d.push(rng.random_range(0.0..(h - 1) as f64));
        }
        Tensor::new(&[n, t, 2], d).unwrap()
    }

    #[test]
    fn single_sample_zero_offsets_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = PathAttentionConfig::new(3, 1, 6);
        let r = Raw::random(&mut rng, cfg, false);
        let grid = rt(&mut rng, &[6, 7, 9], 1.0);
        let q = rt(&mut rng, &[2, 6], 1.0);
        let refs = refs_tensor(&mut rng, 2, 3, 7, 9);
        let out = run_path(&q, &refs, &grid, &r);
        for i in 0..2 {
            // K = 1 and zero offsets: Σ_t W_t W'_t sample(B, P_t).
            let mut e = vec![0.0; 6];
            for h in 0..3 {
                let f = bilinear_sample_value(&grid, [refs.at(&[i, h, 0]), refs.at(&[i, h, 1])]);
                let v: Vec<f64> = (0..cfg.head_width).map(|o| dot_row(&f, &r.vp[h], o)).collect();
                for ch in 0..6 {
                    e[ch] += dot_row(&v, &r.op[h], ch);
                }
            }
            for ch in 0..6 {
                assert!((out.at(&[i, ch]) - e[ch]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn random_instance_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (t, k, c) in [(3, 4, 6), (6, 4, 8), (4, 3, 8)] {
            let cfg = PathAttentionConfig::new(t, k, c);
            let r = Raw::random(&mut rng, cfg, true);
            let grid = rt(&mut rng, &[c, 8, 10], 1.0);
            let q = rt(&mut rng, &[3, c], 1.0);
            let refs = refs_tensor(&mut rng, 3, t, 8, 10);
            let out = run_path(&q, &refs, &grid, &r);
            for i in 0..3 {
                let anchors: Vec<[f64; 2]> =
                    (0..t).map(|h| [refs.at(&[i, h, 0]), refs.at(&[i, h, 1])]).collect();
                let e = dense_reference(&q.data()[i * c..(i + 1) * c], &anchors, &grid, &r);
                for ch in 0..c {
                    assert!((out.at(&[i, ch]) - e[ch]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn identity_projections_return_sampled_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = PathAttentionConfig::new(1, 1, 5);
        cfg.head_width = 5;
        let mut r = Raw::random(&mut rng, cfg, false);
        r.vp = vec![Tensor::eye(5)];
        r.op = vec![Tensor::eye(5)];
        let grid = rt(&mut rng, &[5, 6, 6], 1.0);
        let q = rt(&mut rng, &[1, 5], 1.0);
        let refs = Tensor::new(&[1, 1, 2], vec![2.3, 3.6]).unwrap();
        let out = run_path(&q, &refs, &grid, &r);
        let f = bilinear_sample_value(&grid, [2.3, 3.6]);
        for ch in 0..5 {
            assert!((out.data()[ch] - f[ch]).abs() < 1e-12);
        }
    }

    #[test]
    fn head_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = PathAttentionConfig::new(6, 4, 8);
        let r = Raw::random(&mut rng, cfg, true);
        let tape = Tape::new();
        let v: Vec<Var> = r.tensors().into_iter().map(|t| tape.constant(t)).collect();
        let p = Raw::vars(cfg, &v);
        let w = path_attention_weights(tape.constant(rt(&mut rng, &[3, 8], 2.0)), &p)
            .unwrap()
            .value();
        for row in w.data().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_head_matches_deformable_baseline_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = PathAttentionConfig::new(1, 4, 6);
        let r = Raw::random(&mut rng, cfg, true);
        let grid = rt(&mut rng, &[6, 7, 9], 1.0);
        let q = rt(&mut rng, &[2, 6], 1.0);
        let refs = refs_tensor(&mut rng, 2, 1, 7, 9);
        let a = run_path(&q, &refs, &grid, &r);
        let b = run_deform(&q, &refs.clone().reshape(&[2, 2]).unwrap(), &grid, &r);
        assert_eq!(a, b);
    }

    #[test]
    fn deformable_baseline_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = PathAttentionConfig::new(4, 3, 8);
        let r = Raw::random(&mut rng, cfg, true);
        let grid = rt(&mut rng, &[8, 6, 8], 1.0);
        let q = rt(&mut rng, &[2, 8], 1.0);
        let refs = Tensor::new(&[2, 2], vec![3.3, 2.2, 5.1, 0.7]).unwrap();
        let out = run_deform(&q, &refs, &grid, &r);
        for i in 0..2 {
            let anchors = vec![[refs.at(&[i, 0]), refs.at(&[i, 1])]; 4];
            let e = dense_reference(&q.data()[i * 8..(i + 1) * 8], &anchors, &grid, &r);
            for ch in 0..8 {
                assert!((out.at(&[i, ch]) - e[ch]).abs() < 1e-10);
            }
        }
        // K = 1 and zero offsets: projection of the one sampled feature.
        let cfg1 = PathAttentionConfig::new(2, 1, 8);
        let r1 = Raw::random(&mut rng, cfg1, false);
        let out = run_deform(&q, &refs, &grid, &r1);
        let f = bilinear_sample_value(&grid, [3.3, 2.2]);
        for ch in 0..8 {
            let mut e = 0.0;
            for h in 0..2 {
                let v: Vec<f64> = (0..4).map(|o| dot_row(&f, &r1.vp[h], o)).collect();
                e += dot_row(&v, &r1.op[h], ch);
            }
            assert!((out.at(&[0, ch]) - e).abs() < 1e-10);
        }
    }

    #[test]
    fn invariant_to_sample_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = PathAttentionConfig::new(3, 4, 6);
        let r = Raw::random(&mut rng, cfg, true);
        let grid = rt(&mut rng, &[6, 7, 9], 1.0);
        let q = rt(&mut rng, &[2, 6], 1.0);
        let refs = refs_tensor(&mut rng, 2, 3, 7, 9);
        let perm = [2usize, 0, 3, 1];
        let (t, k, c) = (3, 4, 6);
        let mut p = r.clone();
        let mut ow = r.ow.clone();
        let mut ob = r.ob.clone();
        let mut ww = r.ww.clone();
        let mut wb = r.wb.clone();
        for h in 0..t {
            for s in 0..k {
                let (dst, src) = (h * k + s, h * k + perm[s]);
                for d in 0..2 {
                    ob.data_mut()[dst * 2 + d] = r.ob.data()[src * 2 + d];
                    for row in 0..c {
                        ow.set(&[row, dst * 2 + d], r.ow.at(&[row, src * 2 + d]));
                    }
                }
                wb.data_mut()[dst] = r.wb.data()[src];
                for row in 0..c {
                    ww.set(&[row, dst], r.ww.at(&[row, src]));
                }
            }
        }
        p.ow = ow;
        p.ob = ob;
        p.ww = ww;
        p.wb = wb;
        let a = run_path(&q, &refs, &grid, &r);
        let b = run_path(&q, &refs, &grid, &p);
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn reference_count_mismatch_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = PathAttentionConfig::new(3, 2, 6);
        let r = Raw::random(&mut rng, cfg, true);
        let tape = Tape::new();
        let v: Vec<Var> = r.tensors().into_iter().map(|t| tape.constant(t)).collect();
        let p = Raw::vars(cfg, &v);
        let err = path_attention(
            tape.constant(Tensor::zeros(&[1, 6])),
            tape.constant(Tensor::zeros(&[1, 2, 2])),
            tape.constant(Tensor::zeros(&[6, 4, 4])),
            &p,
        );
        assert!(err.is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = PathAttentionConfig::new(2, 3, 4);
        let r = Raw::random(&mut rng, cfg, true);
        let grid = rt(&mut rng, &[4, 6, 7], 1.0);
        let q = rt(&mut rng, &[2, 4], 1.0);
        // Off-lattice anchors: fractional parts stay away from 0.
        let refs = Tensor::new(
            &[2, 2, 2],
            vec![1.37, 2.41, 3.73, 1.29, 4.61, 3.53, 2.18, 4.33],
        )
        .unwrap();
        let mut inputs = vec![q, refs, grid];
        inputs.extend(r.tensors());
        let w = rt(&mut rng, &[2, 4], 1.0);
        let rep = check_gradients(
            &inputs,
            move |tape, v| {
                let p = Raw::vars(cfg, &v[3..]);
                let out = path_attention(v[0], v[1], v[2], &p)?;
                Ok(out.mul(tape.constant(w.clone()))?.sum())
            },
            FD_STEP,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-5, "{rep:?}");
    }

    #[test]
    fn registered_init_is_neutral() {
        let mut store = ParamStore::new(0);
        let cfg = PathAttentionConfig::new(6, 4, 32);
        assert_eq!(cfg.head_width, 32);
        let pa = PathAttention::new(&mut store, "pa", cfg).unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape, false);
        let p = pa.bind(&bound);
        let q = tape.constant(Tensor::full(&[1, 32], 0.7));
        let off = q
            .matmul(p.offset_w)
            .unwrap()
            .add(p.offset_b)
            .unwrap()
            .tanh()
            .scale(cfg.max_offset)
            .value();
        // Sample 0 exactly on the path, the rest one cell away.
        for h in 0..6 {
            let d = off.data();
            assert_eq!((d[h * 8], d[h * 8 + 1]), (0.0, 0.0));
            for s in 1..4 {
                let j = (h * 4 + s) * 2;
                assert!(((d[j].powi(2) + d[j + 1].powi(2)).sqrt() - 1.0).abs() < 1e-12);
            }
        }
        let w = path_attention_weights(q, &p).unwrap().value();
        assert!(w.data().iter().all(|&a| (a - 0.25).abs() < 1e-15));
    }
}
