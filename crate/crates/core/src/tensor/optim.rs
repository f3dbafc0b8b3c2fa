use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// First and second moments for one parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// One decoupled-weight-decay Adam update of a single tensor.
///
/// The parameter is first shrunk by `1 - lr * weight_decay`, then moved by
/// the bias-corrected adaptive step.
pub fn adamw_step(
    name: &str,
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if param.len() != grad.len() {
        return Err(Error::shape("adamw_step", &[param.len()], &[grad.len()]));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("gradient of {name} at element {i}"),
        });
    }
    if state.m.is_empty() {
        state.m = vec![0.0; param.len()];
        state.v = vec![0.0; param.len()];
    } else if state.m.len() != param.len() {
        return Err(Error::shape("adamw_step", &[param.len()], &[state.m.len()]));
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mh = state.m[i] / bc1;
        let vh = state.v[i] / bc2;
        param[i] = param[i] * decay - lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

/// AdamW over a whole [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    states: Vec<AdamState>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        AdamW {
            config,
            states: vec![AdamState::default(); store.len()],
        }
    }

    /// Apply one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        let names: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
        for (((p, g), st), name) in store
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.states)
            .zip(&names)
        {
            if let Some(g) = g {
                adamw_step(name, p.data_mut(), g.data(), st, lr, &self.config)?;
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr`, then cosine decay to 0 at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64, warmup_steps: usize) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::invalid("cosine_lr", "total_steps must be positive"));
    }
    if step > total_steps {
        return Err(Error::invalid(
            "cosine_lr",
            format!("step {step} beyond total {total_steps}"),
        ));
    }
    if warmup_steps > 0 && step <= warmup_steps {
        return Ok(base_lr * step as f64 / warmup_steps as f64);
    }
    if total_steps <= warmup_steps {
        return Ok(base_lr);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    let lr = 0.5 * base_lr * (1.0 + (std::f64::consts::PI * progress).cos());
    Ok(lr.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_closed_form() {
        // Step 1: m̂ = g, v̂ = g², so Δ = lr·g / (|g| + eps).
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = [1.5];
        let mut st = AdamState::default();
        adamw_step("w", &mut p, &[0.3], &mut st, 1e-2, &cfg).unwrap();
        let expected = 1.5 - 1e-2 * 0.3 / (0.3 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = [0.7, -2.0];
        let mut st = AdamState::default();
        for _ in 0..3 {
            adamw_step("w", &mut p, &[0.0, 0.0], &mut st, 1e-3, &cfg).unwrap();
        }
        assert_eq!(p, [0.7, -2.0]);
    }

    #[test]
    fn decoupled_decay_scales_parameter() {
        let cfg = AdamWConfig::default();
        let lr = 2e-4;
        let mut p = [3.0];
        adamw_step("w", &mut p, &[0.0], &mut AdamState::default(), lr, &cfg).unwrap();
        assert!((p[0] - 3.0 * (1.0 - lr * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let err = adamw_step(
            "encoder.w",
            &mut [0.0],
            &[f64::NAN],
            &mut AdamState::default(),
            1e-3,
            &AdamWConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("encoder.w"));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(500, 5000, 2e-4, 500).unwrap(), 2e-4);
        assert_eq!(cosine_lr(5000, 5000, 2e-4, 500).unwrap(), 0.0);
        assert_eq!(cosine_lr(0, 5000, 2e-4, 500).unwrap(), 0.0);
        assert!((cosine_lr(250, 5000, 2e-4, 500).unwrap() - 1e-4).abs() < 1e-18);
        let mid = cosine_lr(2750, 5000, 2e-4, 500).unwrap();
        assert!((mid - 1e-4).abs() < 1e-15);
        assert!(cosine_lr(1, 0, 1.0, 0).is_err());
        assert!(cosine_lr(6, 5, 1.0, 0).is_err());
    }
}
