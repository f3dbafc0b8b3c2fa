use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_gradients, FD_STEP};
use super::*;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn assert_grad<F>(inputs: &[Tensor], f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let rep = check_gradients(inputs, f, FD_STEP).unwrap();
    assert!(rep.max_rel_err < 1e-6, "{rep:?}");
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[3]));
    let y = x.softmax(0).unwrap().value();
    for v in y.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn matmul_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tape = Tape::new();
    let x = rand_tensor(&mut rng, &[3, 5], -2.0, 2.0);
    let out = tape
        .constant(Tensor::eye(3))
        .matmul(tape.constant(x.clone()))
        .unwrap();
    assert_eq!(*out.value(), x);
}

#[test]
fn layer_norm_hand_values() {
    let tape = Tape::new();
    let y = tape
        .constant(Tensor::vector(vec![1.0, 2.0, 3.0]))
        .layer_norm(0, 1e-5)
        .unwrap()
        .value();
    // Population variance 2/3; eps inside the root.
    let s = (2.0f64 / 3.0 + 1e-5).sqrt();
    let expected = [-1.0 / s, 0.0, 1.0 / s];
    for (a, b) in y.data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((y.data()[0] + 1.2247).abs() < 1e-4);
}

#[test]
fn sum_of_squares_gradient() {
    let tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    let loss = x.square().sum();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn detach_blocks_gradient() {
    let tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, -3.0]));
    let y = x.square().detach();
    let other = tape.param(Tensor::vector(vec![0.5, 0.5]));
    let loss = y.mul(other).unwrap().sum();
    tape.backward(loss).unwrap();
    // x is reachable only through the detached node.
    assert!(tape.grad(x).is_none());
    assert_eq!(tape.grad(other).unwrap().data(), &[1.0, 9.0]);
}

#[test]
fn backward_requires_scalar() {
    let tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    assert!(tape.backward(x).is_err());
}

#[test]
fn shape_errors_name_the_op() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = a.matmul(b).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    let c = tape.constant(Tensor::zeros(&[4]));
    assert!(a.add(c).unwrap_err().to_string().contains("add"));
}

#[test]
fn unreached_leaf_has_no_gradient() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0));
    let unused = tape.param(Tensor::scalar(5.0));
    let _side = unused.exp();
    tape.backward(x.square()).unwrap();
    assert!(tape.grad(unused).is_none());
}

#[test]
fn broadcasting_forward() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
    let b = tape.constant(Tensor::vector(vec![10., 20., 30.]));
    assert_eq!(a.add(b).unwrap().value().data(), &[11., 22., 33., 14., 25., 36.]);
    let c = tape.constant(Tensor::new(&[2, 1], vec![2., 3.]).unwrap());
    assert_eq!(a.mul(c).unwrap().value().data(), &[2., 4., 6., 12., 15., 18.]);
    let s = tape.scalar(1.0);
    assert_eq!(a.sub(s).unwrap().value().data(), &[0., 1., 2., 3., 4., 5.]);
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
    let b = rand_tensor(&mut rng, &[4], 0.5, 2.0);
    let c = rand_tensor(&mut rng, &[3, 1], -2.0, 2.0);
    assert_grad(&[a.clone(), b.clone(), c.clone()], |_, v| {
        let x = v[0].add(v[1])?.mul(v[2])?;
        let y = v[0].sub(v[2])?.div(v[1])?;
        Ok(x.add(y)?.scale(0.7).add_scalar(0.3).neg().sum())
    });
    let pos = rand_tensor(&mut rng, &[5], 0.5, 2.0);
    let any = rand_tensor(&mut rng, &[5], -2.0, 2.0);
    assert_grad(&[pos.clone(), any.clone()], |_, v| {
        let p = v[0];
        let q = v[1];
        let terms = [
            p.log(),
            p.sqrt(),
            q.exp(),
            q.tanh(),
            q.sin(),
            q.cos(),
            q.square(),
            q.abs(),
            q.relu(),
        ];
        let mut acc = terms[0].sum();
        for t in &terms[1..] {
            acc = acc.add(t.mul(q)?.sum())?;
        }
        Ok(acc)
    });
}

#[test]
fn structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, &[3, 4], -2.0, 2.0);
    let b = rand_tensor(&mut rng, &[4, 2], -2.0, 2.0);
    let w = rand_tensor(&mut rng, &[2, 3], -2.0, 2.0);
    assert_grad(&[a, b, w], |tape, v| {
        let m = v[0].matmul(v[1])?; // 3×2
        let t = m.transpose()?; // 2×3
        let cat = tape.concat(&[t, v[2]], 0)?; // 4×3
        let cat2 = tape.concat(&[cat, v[2].reshape(&[2, 3])?], 0)?;
        let sl = cat2.slice(0, 1, 5)?.slice(1, 1, 3)?; // 4×2
        let sel = sl.index_select(&[3, 0, 0, 2])?;
        let r = sel.reshape(&[8])?;
        let ax = m.sum_axis(1)?.mul(m.mean_axis(0)?.sum())?;
        Ok(r.square().sum().add(ax.sum())?.add(cat2.mean())?)
    });
}

#[test]
fn normalization_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[3, 5], -2.0, 2.0);
    let w = rand_tensor(&mut rng, &[3, 5], -2.0, 2.0);
    for axis in 0..2 {
        assert_grad(&[x.clone(), w.clone()], move |_, v| {
            let s = v[0].softmax(axis)?.mul(v[1])?.sum();
            let l = v[0].log_softmax(axis)?.mul(v[1])?.sum();
            let n = v[0].layer_norm(axis, 1e-5)?.mul(v[1])?.sum();
            s.add(l)?.add(n)
        });
    }
}

#[test]
fn atan2_gradient() {
    let y = Tensor::vector(vec![0.3, -1.2, 1.5]);
    let x = Tensor::vector(vec![1.1, 0.4, -0.7]);
    assert_grad(&[y, x], |tape, v| Ok(tape.atan2(v[0], v[1])?.square().sum()));
}

#[test]
fn grid_sample_gradient_off_lattice() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = rand_tensor(&mut rng, &[3, 5, 6], -2.0, 2.0);
    // Coordinates kept ≥ 1e-3 cells from lattice lines, including some
    // partially outside the grid.
    let coords = Tensor::new(
        &[4, 2],
        vec![0.37, 1.61, 4.52, 3.27, -0.45, 2.33, 5.41, 4.18],
    )
    .unwrap();
    let w = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    assert_grad(&[grid, coords, w], |_, v| {
        Ok(v[0].grid_sample(v[1])?.mul(v[2])?.sum())
    });
}

#[test]
fn conv_and_pool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[2, 4, 6], -2.0, 2.0);
    let k = rand_tensor(&mut rng, &[2, 9], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[2, 2, 3], -1.0, 1.0);
    assert_grad(&[x, k, w], |_, v| {
        let y = v[0].dwconv3(v[1])?;
        Ok(y.avg_pool(2)?.mul(v[2])?.sum().add(y.square().mean())?)
    });
}

#[test]
fn dwconv_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[2, 4, 5], -2.0, 2.0);
    let k = rand_tensor(&mut rng, &[2, 9], -1.0, 1.0);
    let tape = Tape::new();
    let y = tape.constant(x.clone()).dwconv3(tape.constant(k.clone())).unwrap().value();
    for c in 0..2 {
        for r in 0..4i64 {
            for col in 0..5i64 {
                let mut s = 0.0;
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (rr, cc) = (r + dy, col + dx);
                        if (0..4).contains(&rr) && (0..5).contains(&cc) {
                            s += k.at(&[c, ((dy + 1) * 3 + dx + 1) as usize])
                                * x.at(&[c, rr as usize, cc as usize]);
                        }
                    }
                }
                assert!((y.at(&[c, r as usize, col as usize]) - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn random_composite_graphs_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let a = rand_tensor(&mut rng, &[2, 3], -2.0, 2.0);
        let b = rand_tensor(&mut rng, &[3, 3], -2.0, 2.0);
        assert_grad(&[a, b], |_, v| {
            let h = v[0].matmul(v[1])?.tanh();
            let s = h.softmax(1)?;
            Ok(s.mul(h)?.sum())
        });
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tape = Tape::new();
    let x = tape.constant(rand_tensor(&mut rng, &[6, 7], -30.0, 30.0));
    let y = x.softmax(1).unwrap().value();
    for r in 0..6 {
        let s: f64 = y.data()[r * 7..(r + 1) * 7].iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn forward_is_bit_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tape = Tape::new();
        let a = tape.constant(rand_tensor(&mut rng, &[8, 8], -2.0, 2.0));
        let b = tape.constant(rand_tensor(&mut rng, &[8, 8], -2.0, 2.0));
        a.matmul(b).unwrap().softmax(1).unwrap().layer_norm(0, 1e-5).unwrap().value().data().to_vec()
    };
    assert_eq!(run(), run());
}
