//! Squared 2-Wasserstein distance between the Gaussians of two oriented
//! boxes, `N(center, R·diag(hl², hw²)·Rᵀ)`.
//!
//! For 2×2 SPD matrices `Tr((Σa^½ Σb Σa^½)^½) = sqrt(tr(Σa Σb) + 2·sqrt(det Σa · det Σb))`,
//! so no explicit matrix square root is needed.

use super::OrientedRect;
use crate::error::Result;
use crate::tensor::{Tape, Var};

fn covariance(r: &OrientedRect) -> [f64; 3] {
    let (s, c) = r.heading.sin_cos();
    let l2 = r.half_extents[0].powi(2);
    let w2 = r.half_extents[1].powi(2);
    [l2 * c * c + w2 * s * s, (l2 - w2) * c * s, l2 * s * s + w2 * c * c]
}

/// Squared Wasserstein distance, clamped at zero against rounding.
pub fn gwd(a: &OrientedRect, b: &OrientedRect) -> f64 {
    let [a11, a12, a22] = covariance(a);
    let [b11, b12, b22] = covariance(b);
    let dx = a.center[0] - b.center[0];
    let dy = a.center[1] - b.center[1];
    let tr_ab = a11 * b11 + 2.0 * a12 * b12 + a22 * b22;
    let det_term = a.half_extents[0] * a.half_extents[1] * b.half_extents[0] * b.half_extents[1];
    let tr_a = a.half_extents[0].powi(2) + a.half_extents[1].powi(2);
    let tr_b = b.half_extents[0].powi(2) + b.half_extents[1].powi(2);
    let d2 = dx * dx + dy * dy + tr_a + tr_b - 2.0 * (tr_ab + 2.0 * det_term).sqrt();
    d2.max(0.0)
}

/// An oriented box whose five parameters are scalar tape variables.
#[derive(Clone, Copy, Debug)]
pub struct RectVar<'t> {
    pub cx: Var<'t>,
    pub cy: Var<'t>,
    pub half_len: Var<'t>,
    pub half_wid: Var<'t>,
    pub heading: Var<'t>,
}

impl<'t> RectVar<'t> {
    pub fn constant(tape: &'t Tape, r: &OrientedRect) -> Self {
        RectVar {
            cx: tape.scalar(r.center[0]),
            cy: tape.scalar(r.center[1]),
            half_len: tape.scalar(r.half_extents[0]),
            half_wid: tape.scalar(r.half_extents[1]),
            heading: tape.scalar(r.heading),
        }
    }

    /// From a length-5 vector `[cx, cy, half_len, half_wid, heading]`.
    pub fn from_vector(v: Var<'t>) -> Result<Self> {
        let v = v.reshape(&[5])?;
        let pick = |i: usize| -> Result<Var<'t>> { v.slice(0, i, i + 1)?.reshape(&[]) };
        Ok(RectVar {
            cx: pick(0)?,
            cy: pick(1)?,
            half_len: pick(2)?,
            half_wid: pick(3)?,
            heading: pick(4)?,
        })
    }

    fn covariance(&self) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        let c = self.heading.cos();
        let s = self.heading.sin();
        let (c2, s2, cs) = (c.square(), s.square(), c.mul(s)?);
        let l2 = self.half_len.square();
        let w2 = self.half_wid.square();
        let s11 = l2.mul(c2)?.add(w2.mul(s2)?)?;
        let s12 = l2.sub(w2)?.mul(cs)?;
        let s22 = l2.mul(s2)?.add(w2.mul(c2)?)?;
        Ok((s11, s12, s22))
    }
}

/// Differentiable [`gwd`].
pub fn gwd_var<'t>(a: &RectVar<'t>, b: &RectVar<'t>) -> Result<Var<'t>> {
    let (a11, a12, a22) = a.covariance()?;
    let (b11, b12, b22) = b.covariance()?;
    let dx = a.cx.sub(b.cx)?;
    let dy = a.cy.sub(b.cy)?;
    let center = dx.square().add(dy.square())?;
    let tr_ab = a11
        .mul(b11)?
        .add(a12.mul(b12)?.scale(2.0))?
        .add(a22.mul(b22)?)?;
    let det_term = a
        .half_len
        .mul(a.half_wid)?
        .mul(b.half_len)?
        .mul(b.half_wid)?;
    let tr_a = a.half_len.square().add(a.half_wid.square())?;
    let tr_b = b.half_len.square().add(b.half_wid.square())?;
    let root = tr_ab.add(det_term.scale(2.0))?.sqrt();
    let d2 = center.add(tr_a)?.add(tr_b)?.sub(root.scale(2.0))?;
    Ok(d2.relu())
}

/// Evaluate [`gwd_var`] on constants; handy for parity checks.
pub fn gwd_via_tape(a: &OrientedRect, b: &OrientedRect) -> Result<f64> {
    let tape = Tape::new();
    let d = gwd_var(&RectVar::constant(&tape, a), &RectVar::constant(&tape, b))?;
    Ok(d.item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::tensor::gradcheck::{check_gradients, FD_STEP};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn r(cx: f64, cy: f64, hl: f64, hw: f64, h: f64) -> OrientedRect {
        OrientedRect::new([cx, cy], [hl, hw], h).unwrap()
    }

    /// Independent route: explicit symmetric eigendecomposition square roots.
    fn sqrtm_sym(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
        let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
        let tr = a + d;
        let disc = (((a - d) / 2.0).powi(2) + b * b).sqrt();
        let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
        let theta = 0.5 * (2.0 * b).atan2(a - d);
        let (s, c) = theta.sin_cos();
        let (r1, r2) = (l1.max(0.0).sqrt(), l2.max(0.0).sqrt());
        [
            [r1 * c * c + r2 * s * s, (r1 - r2) * c * s],
            [(r1 - r2) * c * s, r1 * s * s + r2 * c * c],
        ]
    }

    fn mm(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
        let mut o = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                o[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        o
    }

    fn cov(r: &OrientedRect) -> [[f64; 2]; 2] {
        let (s, c) = r.heading.sin_cos();
        let rot = [[c, -s], [s, c]];
        let rt = [[c, s], [-s, c]];
        let d = [[r.half_extents[0].powi(2), 0.0], [0.0, r.half_extents[1].powi(2)]];
        mm(mm(rot, d), rt)
    }

    fn gwd_oracle(a: &OrientedRect, b: &OrientedRect) -> f64 {
        let (sa, sb) = (cov(a), cov(b));
        let ra = sqrtm_sym(sa);
        let inner = sqrtm_sym(mm(mm(ra, sb), ra));
        let tr = sa[0][0] + sa[1][1] + sb[0][0] + sb[1][1] - 2.0 * (inner[0][0] + inner[1][1]);
        (a.center[0] - b.center[0]).powi(2) + (a.center[1] - b.center[1]).powi(2) + tr
    }

    #[test]
    fn identity_and_translation() {
        let a = r(1.0, -2.0, 2.0, 0.8, 0.6);
        assert!(gwd(&a, &a).abs() < 1e-10);
        assert!(gwd_via_tape(&a, &a).unwrap().abs() < 1e-10);
        let b = r(4.0, 2.0, 2.0, 0.8, 0.6);
        assert!((gwd(&a, &b) - 25.0).abs() < 1e-10);
        assert!((gwd_via_tape(&a, &b).unwrap() - 25.0).abs() < 1e-10);
    }

    #[test]
    fn rotated_square_is_same_gaussian() {
        let a = r(0.0, 0.0, 1.5, 1.5, 0.0);
        let b = r(0.0, 0.0, 1.5, 1.5, PI / 2.0);
        assert!(gwd(&a, &b).abs() < 1e-10);
        assert!(gwd_oracle(&a, &b).abs() < 1e-10);
    }

    #[test]
    fn half_turn_is_same_gaussian() {
        let a = r(0.5, 0.5, 3.0, 1.0, 0.3);
        let b = r(0.5, 0.5, 3.0, 1.0, 0.3 + PI);
        assert!(gwd(&a, &b).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cases = [
            ([0.3, -0.2, 2.0, 0.7, 0.4], [1.1, 0.5, 1.4, 0.9, -0.8]),
            ([0.0, 0.0, 15.0, 7.5, 0.1], [2.0, 0.7, 15.0, 7.5, 0.35]),
            ([-1.0, 1.5, 0.6, 1.8, 1.9], [0.4, -0.3, 1.2, 0.5, 2.7]),
        ];
        for (a, b) in cases {
            let rep = check_gradients(
                &[Tensor::vector(a.to_vec()), Tensor::vector(b.to_vec())],
                |_, v| gwd_var(&RectVar::from_vector(v[0])?, &RectVar::from_vector(v[1])?),
                FD_STEP,
            )
            .unwrap();
            assert!(rep.max_rel_err < 1e-5, "{rep:?}");
        }
    }

    proptest! {
        #[test]
        fn matches_eigen_oracle_and_is_symmetric(
            ax in -5.0f64..5.0, ay in -5.0f64..5.0, al in 0.2f64..4.0, aw in 0.2f64..4.0, ah in -3.1f64..3.1,
            bx in -5.0f64..5.0, by in -5.0f64..5.0, bl in 0.2f64..4.0, bw in 0.2f64..4.0, bh in -3.1f64..3.1,
        ) {
            let a = r(ax, ay, al, aw, ah);
            let b = r(bx, by, bl, bw, bh);
            let d = gwd(&a, &b);
            prop_assert!(d >= 0.0);
            prop_assert!((d - gwd(&b, &a)).abs() < 1e-12 * (1.0 + d));
            prop_assert!((d - gwd_oracle(&a, &b)).abs() < 1e-8 * (1.0 + d));
            prop_assert!((d - gwd_via_tape(&a, &b).unwrap()).abs() < 1e-10 * (1.0 + d));
        }
    }
}
