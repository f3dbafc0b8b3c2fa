//! Small parameterized layers shared by the model.
//!
//! Row-vector convention throughout: inputs are `n×in`, weights `in×out`,
//! so a layer is `x·W + b`.

use crate::error::Result;
use crate::tensor::{Bound, Init, ParamId, ParamStore, Var};

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), &[fan_in, fan_out], Init::Xavier { fan_in, fan_out }),
            b: store.add(format!("{name}.b"), &[fan_out], Init::Zeros),
        }
    }

    pub fn zeroed(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), &[fan_in, fan_out], Init::Zeros),
            b: store.add(format!("{name}.b"), &[fan_out], Init::Zeros),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(p.get(self.w))?.add(p.get(self.b))
    }
}

/// Layer norm over the last axis of an `n×C` input with learned gain and bias.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.g"), &[width], Init::Const(1.0)),
            bias: store.add(format!("{name}.b"), &[width], Init::Zeros),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(1, LN_EPS)?
            .mul(p.get(self.gain))?
            .add(p.get(self.bias))
    }
}

/// Two-layer ReLU MLP.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, hidden: usize, fan_out: usize) -> Self {
        Mlp {
            l1: Linear::new(store, &format!("{name}.0"), fan_in, hidden),
            l2: Linear::new(store, &format!("{name}.1"), hidden, fan_out),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        self.l2.forward(p, self.l1.forward(p, x)?.relu())
    }
}

/// `LN(x + MLP(x))`.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub mlp: Mlp,
    pub norm: LayerNorm,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        FeedForward {
            mlp: Mlp::new(store, &format!("{name}.mlp"), width, 2 * width, width),
            norm: LayerNorm::new(store, &format!("{name}.ln"), width),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        self.norm.forward(p, x.add(self.mlp.forward(p, x)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    #[test]
    fn linear_is_affine_row_map() {
        let mut store = ParamStore::new(0);
        let l = Linear::new(&mut store, "l", 3, 2);
        *store.get_mut(l.b) = Tensor::vector(vec![0.5, -1.0]);
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = Tensor::new(&[1, 3], vec![1.0, 2.0, -1.0]).unwrap();
        let y = l.forward(&p, tape.constant(x)).unwrap().value();
        let w = store.get(l.w);
        for j in 0..2 {
            let e = w.at(&[0, j]) + 2.0 * w.at(&[1, j]) - w.at(&[2, j]) + [0.5, -1.0][j];
            assert!((y.at(&[0, j]) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut store = ParamStore::new(0);
        let ln = LayerNorm::new(&mut store, "ln", 4);
        let tape = Tape::new();
        let p = store.bind(&tape, false);
        let x = Tensor::new(&[2, 4], vec![1., 2., 3., 4., -5., 0., 5., 10.]).unwrap();
        let y = ln.forward(&p, tape.constant(x)).unwrap().value();
        for r in 0..2 {
            let row = &y.data()[r * 4..r * 4 + 4];
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            let v: f64 = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }
}
