//! Raster-to-feature encoder: a shared stem followed by one final stage per
//! branch. Layout is channel-major `C×H×W` throughout.

use crate::error::Result;
use crate::tensor::{Bound, Init, ParamId, ParamStore, Var};
use crate::types::EgoStatus;

/// `1×1` convolution: weight `out×in`, bias `out×1`.
#[derive(Clone, Copy, Debug)]
pub struct Pointwise {
    pub w: ParamId,
    pub b: ParamId,
}

impl Pointwise {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Pointwise {
            w: store.add(format!("{name}.w"), &[fan_out, fan_in], Init::Xavier { fan_in, fan_out }),
            b: store.add(format!("{name}.b"), &[fan_out, 1], Init::Zeros),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        let (h, w) = (s[1], s[2]);
        let y = p
            .get(self.w)
            .matmul(x.reshape(&[s[0], h * w])?)?
            .add(p.get(self.b))?;
        let out = y.shape()[0];
        y.reshape(&[out, h, w])
    }
}

fn depthwise(store: &mut ParamStore, name: &str, channels: usize) -> ParamId {
    store.add(format!("{name}.dw"), &[channels, 9], Init::Uniform(0.3))
}

#[derive(Clone, Copy, Debug)]
pub struct Stem {
    pub pw1: Pointwise,
    pub dw1: ParamId,
    pub pw2: Pointwise,
    pub dw2: ParamId,
    pub pw3: Pointwise,
    pub stride: usize,
}

impl Stem {
    pub fn new(store: &mut ParamStore, in_ch: usize, hidden: usize, width: usize, stride: usize) -> Self {
        Stem {
            pw1: Pointwise::new(store, "enc.stem.pw1", in_ch, hidden),
            dw1: depthwise(store, "enc.stem.1", hidden),
            pw2: Pointwise::new(store, "enc.stem.pw2", hidden, width),
            dw2: depthwise(store, "enc.stem.2", width),
            pw3: Pointwise::new(store, "enc.stem.pw3", width, width),
            stride,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, obs: Var<'t>) -> Result<Var<'t>> {
        let h = self.pw1.forward(p, obs)?.relu();
        let h = h.add(h.dwconv3(p.get(self.dw1))?)?.relu();
        let h = if self.stride > 1 { h.avg_pool(self.stride)? } else { h };
        let h = self.pw2.forward(p, h)?.relu();
        let h = h.add(h.dwconv3(p.get(self.dw2))?)?.relu();
        self.pw3.forward(p, h)
    }
}

/// Final per-branch stage: `z + PW(relu(z + DW(z)))` where `z` is the stem
/// output, optionally with the ego embedding added to every cell.
#[derive(Clone, Copy, Debug)]
pub struct Stage {
    pub dw: ParamId,
    pub pw: Pointwise,
}

impl Stage {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Stage {
            dw: depthwise(store, name, width),
            pw: Pointwise::new(store, &format!("{name}.pw"), width, width),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        let inner = z.add(z.dwconv3(p.get(self.dw))?)?.relu();
        z.add(self.pw.forward(p, inner)?)
    }
}

/// Learned projection of the ego kinematics, broadcast over the grid.
#[derive(Clone, Copy, Debug)]
pub struct EgoInjection {
    pub w: ParamId,
    pub b: ParamId,
}

impl EgoInjection {
    pub fn new(store: &mut ParamStore, width: usize) -> Self {
        EgoInjection {
            w: store.add("enc.ego.w", &[width, 4], Init::Xavier { fan_in: 4, fan_out: width }),
            b: store.add("enc.ego.b", &[width, 1], Init::Zeros),
        }
    }

    /// `C×1×1` embedding of `ego`.
    pub fn embed<'t>(&self, p: &Bound<'t>, ego: &EgoStatus) -> Result<Var<'t>> {
        let tape = p.get(self.w).tape();
        let f = tape.constant(crate::tensor::Tensor::new(&[4, 1], ego.features().to_vec())?);
        let e = p.get(self.w).matmul(f)?.add(p.get(self.b))?;
        let c = e.shape()[0];
        e.reshape(&[c, 1, 1])
    }
}

/// Stem, then `stage`, with the ego embedding added in between when given.
pub fn encode<'t>(
    p: &Bound<'t>,
    stem_out: Var<'t>,
    stage: &Stage,
    ego: Option<(&EgoInjection, &EgoStatus)>,
) -> Result<Var<'t>> {
    let z = match ego {
        Some((inj, status)) => stem_out.add(inj.embed(p, status)?)?,
        None => stem_out,
    };
    stage.forward(p, z)
}
