use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::{Bound, ParamStore, Var};

/// Registered projections of a multi-head attention block.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

/// Projection weights and biases on a tape; weights are `C×C`.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttentionVars<'t> {
    pub heads: usize,
    pub wq: Var<'t>,
    pub bq: Var<'t>,
    pub wk: Var<'t>,
    pub bk: Var<'t>,
    pub wv: Var<'t>,
    pub bv: Var<'t>,
    pub wo: Var<'t>,
    pub bo: Var<'t>,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize) -> Result<Self> {
        check_heads(width, heads)?;
        Ok(MultiHeadAttention {
            heads,
            q: Linear::new(store, &format!("{name}.q"), width, width),
            k: Linear::new(store, &format!("{name}.k"), width, width),
            v: Linear::new(store, &format!("{name}.v"), width, width),
            o: Linear::new(store, &format!("{name}.o"), width, width),
        })
    }

    pub fn bind<'t>(&self, p: &Bound<'t>) -> MultiHeadAttentionVars<'t> {
        MultiHeadAttentionVars {
            heads: self.heads,
            wq: p.get(self.q.w),
            bq: p.get(self.q.b),
            wk: p.get(self.k.w),
            bk: p.get(self.k.b),
            wv: p.get(self.v.w),
            bv: p.get(self.v.b),
            wo: p.get(self.o.w),
            bo: p.get(self.o.b),
        }
    }
}

fn check_heads(width: usize, heads: usize) -> Result<()> {
    if heads == 0 || width % heads != 0 {
        return Err(Error::Config(format!(
            "attention width {width} is not divisible by {heads} heads"
        )));
    }
    Ok(())
}

/// Scaled dot-product attention of `queries: m×C` over `kv: n×C`.
pub fn cross_attention<'t>(
    queries: Var<'t>,
    kv: Var<'t>,
    p: &MultiHeadAttentionVars<'t>,
) -> Result<Var<'t>> {
    let (qs, ks) = (queries.shape(), kv.shape());
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(Error::shape("cross_attention", &qs, &ks));
    }
    let c = qs[1];
    check_heads(c, p.heads)?;
    let d = c / p.heads;
    let q = queries.matmul(p.wq)?.add(p.bq)?;
    let k = kv.matmul(p.wk)?.add(p.bk)?;
    let v = kv.matmul(p.wv)?.add(p.bv)?;
    let scale = 1.0 / (d as f64).sqrt();
    let mut heads = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (lo, hi) = (h * d, (h + 1) * d);
        let qh = q.slice(1, lo, hi)?;
        let kh = k.slice(1, lo, hi)?;
        let vh = v.slice(1, lo, hi)?;
        let att = qh.matmul(kh.transpose()?)?.scale(scale).softmax(1)?;
        heads.push(att.matmul(vh)?);
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        queries.tape().concat(&heads, 1)?
    };
    cat.matmul(p.wo)?.add(p.bo)
}

/// Self-attention over the rows of `x: n×C`.
pub fn mhsa<'t>(x: Var<'t>, p: &MultiHeadAttentionVars<'t>) -> Result<Var<'t>> {
    cross_attention(x, x, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, FD_STEP};
    use crate::tensor::{Tape, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rt(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn raw(rng: &mut ChaCha8Rng, c: usize) -> Vec<Tensor> {
        (0..4).flat_map(|_| [rt(rng, &[c, c]), rt(rng, &[c])]).collect()
    }

    fn vars<'t>(v: &[Var<'t>], heads: usize) -> MultiHeadAttentionVars<'t> {
        MultiHeadAttentionVars {
            heads,
            wq: v[0],
            bq: v[1],
            wk: v[2],
            bk: v[3],
            wv: v[4],
            bv: v[5],
            wo: v[6],
            bo: v[7],
        }
    }

    fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
        let c = b.numel();
        (0..c)
            .map(|j| b.data()[j] + x.iter().enumerate().map(|(i, v)| v * w.at(&[i, j])).sum::<f64>())
            .collect()
    }

    /// Per-head, per-query scalar loops.
    fn dense(q: &Tensor, kv: &Tensor, w: &[Tensor], heads: usize) -> Vec<Vec<f64>> {
        let (m, n, c) = (q.shape()[0], kv.shape()[0], q.shape()[1]);
        let d = c / heads;
        let row = |t: &Tensor, i: usize| t.data()[i * c..(i + 1) * c].to_vec();
        let qs: Vec<_> = (0..m).map(|i| affine(&row(q, i), &w[0], &w[1])).collect();
        let ks: Vec<_> = (0..n).map(|i| affine(&row(kv, i), &w[2], &w[3])).collect();
        let vs: Vec<_> = (0..n).map(|i| affine(&row(kv, i), &w[4], &w[5])).collect();
        (0..m)
            .map(|i| {
                let mut cat = vec![0.0; c];
                for h in 0..heads {
                    let r = h * d..(h + 1) * d;
                    let s: Vec<f64> = (0..n)
                        .map(|j| {
                            r.clone().map(|x| qs[i][x] * ks[j][x]).sum::<f64>() / (d as f64).sqrt()
                        })
                        .collect();
                    let mx = s.iter().cloned().fold(f64::MIN, f64::max);
                    let z: f64 = s.iter().map(|v| (v - mx).exp()).sum();
                    for j in 0..n {
                        let a = (s[j] - mx).exp() / z;
                        for x in r.clone() {
                            cat[x] += a * vs[j][x];
                        }
                    }
                }
                affine(&cat, &w[6], &w[7])
            })
            .collect()
    }

    fn run(q: &Tensor, kv: &Tensor, w: &[Tensor], heads: usize) -> Result<Tensor> {
        let tape = Tape::new();
        let v: Vec<Var> = w.iter().map(|t| tape.constant(t.clone())).collect();
        let out = cross_attention(tape.constant(q.clone()), tape.constant(kv.clone()), &vars(&v, heads))?;
        Ok((*out.value()).clone())
    }

    fn run_self(x: &Tensor, w: &[Tensor], heads: usize) -> Tensor {
        let tape = Tape::new();
        let v: Vec<Var> = w.iter().map(|t| tape.constant(t.clone())).collect();
        (*mhsa(tape.constant(x.clone()), &vars(&v, heads)).unwrap().value()).clone()
    }

    #[test]
    fn self_attention_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = raw(&mut rng, 8);
        let x = rt(&mut rng, &[4, 8]);
        let out = run_self(&x, &w, 2);
        let e = dense(&x, &x, &w, 2);
        for i in 0..4 {
            for j in 0..8 {
                assert!((out.at(&[i, j]) - e[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cross_attention_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = raw(&mut rng, 8);
        let q = rt(&mut rng, &[3, 8]);
        let kv = rt(&mut rng, &[5, 8]);
        let out = run(&q, &kv, &w, 4).unwrap();
        let e = dense(&q, &kv, &w, 4);
        for i in 0..3 {
            for j in 0..8 {
                assert!((out.at(&[i, j]) - e[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_token_passes_projected_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = raw(&mut rng, 6);
        let x = rt(&mut rng, &[1, 6]);
        let out = run_self(&x, &w, 3);
        let e = affine(&affine(x.data(), &w[4], &w[5]), &w[6], &w[7]);
        for j in 0..6 {
            assert!((out.data()[j] - e[j]).abs() < 1e-12);
        }
        // Cross-attention onto one key/value row.
        let q = rt(&mut rng, &[3, 6]);
        let out = run(&q, &x, &w, 2).unwrap();
        for i in 0..3 {
            for j in 0..6 {
                assert!((out.at(&[i, j]) - e[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_kv_rows_ignore_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = raw(&mut rng, 4);
        let row = rt(&mut rng, &[1, 4]);
        let kv = Tensor::new(&[3, 4], row.data().repeat(3)).unwrap();
        let q1 = rt(&mut rng, &[2, 4]);
        let q2 = rt(&mut rng, &[2, 4]);
        let a = run(&q1, &kv, &w, 2).unwrap();
        let b = run(&q2, &kv, &w, 2).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn self_attention_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = raw(&mut rng, 8);
        // Two rows: every reduction is a two-term sum, so swapping is bit-exact.
        let x = rt(&mut rng, &[2, 8]);
        let swapped = Tensor::new(&[2, 8], [&x.data()[8..], &x.data()[..8]].concat()).unwrap();
        let a = run_self(&x, &w, 2);
        let b = run_self(&swapped, &w, 2);
        assert_eq!(&a.data()[..8], &b.data()[8..]);
        assert_eq!(&a.data()[8..], &b.data()[..8]);
        // Longer sets reorder floating-point sums, so compare to rounding.
        let x = rt(&mut rng, &[5, 8]);
        let perm = [3usize, 0, 4, 1, 2];
        let px = Tensor::new(&[5, 8], perm.iter().flat_map(|&i| x.data()[i * 8..i * 8 + 8].to_vec()).collect()).unwrap();
        let a = run_self(&x, &w, 4);
        let b = run_self(&px, &w, 4);
        for (r, &i) in perm.iter().enumerate() {
            for j in 0..8 {
                assert!((b.at(&[r, j]) - a.at(&[i, j])).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn indivisible_width_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = raw(&mut rng, 6);
        let x = rt(&mut rng, &[2, 6]);
        assert!(run(&x, &x, &w, 4).is_err());
        let mut store = ParamStore::new(0);
        assert!(MultiHeadAttention::new(&mut store, "m", 6, 4).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut inputs = vec![rt(&mut rng, &[3, 4]), rt(&mut rng, &[4, 4])];
        inputs.extend(raw(&mut rng, 4));
        let rep = check_gradients(
            &inputs,
            |_, v| Ok(cross_attention(v[0], v[1], &vars(&v[2..], 2))?.square().sum()),
            FD_STEP,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-6, "{rep:?}");
    }
}
