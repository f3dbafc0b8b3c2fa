use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{evaluate, ModelPlanner};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{training_loss, LossBreakdown, Model, ModelConfig, Variant};
use crate::tensor::{cosine_lr, AdamW, Checkpoint, Tape, Tensor};
use crate::world::{PerturbMode, Scenario};

/// One line of `losses.csv`: epoch means of each loss component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub total: f64,
    pub det: f64,
    pub map: f64,
    pub mot: f64,
    pub plan: f64,
    pub distill: f64,
    pub autoreg: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub curve: Vec<LossRow>,
    /// `(epoch, val avg L2)` of each validation pass.
    pub val_l2: Vec<(usize, f64)>,
    pub best_epoch: usize,
    pub best_params: Vec<(String, Tensor)>,
}

/// Metadata stored in checkpoint headers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format: String,
    pub tag: String,
    pub epoch: usize,
    pub model: ModelConfig,
}

pub const CHECKPOINT_FORMAT: &str = "dbp-model-1";

pub fn model_checkpoint(cfg: &ModelConfig, params: Vec<(String, Tensor)>, tag: &str, epoch: usize) -> Result<Checkpoint> {
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.into(),
        tag: tag.into(),
        epoch,
        model: cfg.clone(),
    };
    let meta = serde_json::to_string(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(Checkpoint { meta, params })
}

/// Rebuild a model from a checkpoint written by [`model_checkpoint`].
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
    let meta: CheckpointMeta =
        serde_json::from_str(&ckpt.meta).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown checkpoint format {:?}", meta.format)));
    }
    let mut model = Model::new(meta.model)?;
    model.store.load_named(&ckpt.params)?;
    Ok(model)
}

/// Loss breakdown and parameter gradients for one scenario.
pub fn sample_gradients(model: &Model, s: &Scenario, w: &LossWeights) -> Result<(LossBreakdown, Vec<Option<Tensor>>)> {
    let tape = Tape::new();
    let p = model.store.bind(&tape, true);
    let fwd = model.forward(&p, s.obs.tensor(), &s.ego_status, s.command(), Variant::Full)?;
    let loss = training_loss(model, &fwd, s, w)?;
    let parts = loss.breakdown();
    tape.backward(loss.total)?;
    Ok((parts, p.grads(&tape)))
}

fn first_non_finite(b: &LossBreakdown) -> Option<(&'static str, f64)> {
    [
        ("total", b.total),
        ("det", b.det),
        ("map", b.map),
        ("mot", b.mot),
        ("plan", b.plan),
        ("distill", b.distill),
        ("autoreg", b.autoreg),
    ]
    .into_iter()
    .find(|(_, v)| !v.is_finite())
}

/// Average validation L2 of the full planner.
pub fn validation_l2(model: &Model, val: &[Scenario], cfg: &RunConfig, threads: usize) -> Result<f64> {
    let planner = ModelPlanner {
        model,
        variant: Variant::Full,
    };
    let rows = evaluate(&planner, val, PerturbMode::None, &cfg.experiment.ego_dims, false, threads)?;
    Ok(rows[0].1.l2_avg)
}

/// AdamW with a warmed-up cosine schedule over `epochs × ⌈n/batch⌉` steps.
/// Scenario order is reshuffled each epoch from `model.cfg.seed`.
/// `on_epoch` sees each row as it is produced.
pub fn train(
    model: &mut Model,
    train_set: &[Scenario],
    val_set: &[Scenario],
    cfg: &RunConfig,
    threads: usize,
    mut on_epoch: impl FnMut(&LossRow),
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let opt = &cfg.optimizer;
    let w = &cfg.losses;
    let steps_per_epoch = train_set.len().div_ceil(opt.batch);
    let total_steps = opt.epochs * steps_per_epoch;
    let mut adam = AdamW::new(opt.adamw(), &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(model.cfg.seed ^ 0x7261_696e);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;
    let mut report = TrainReport {
        curve: Vec::with_capacity(opt.epochs),
        val_l2: Vec::new(),
        best_epoch: 0,
        best_params: model.store.named(),
    };
    let mut best = f64::INFINITY;
    for epoch in 1..=opt.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        let mut lr = 0.0;
        for batch in order.chunks(opt.batch) {
            let mut acc: Vec<Tensor> = model.store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
            for &i in batch {
                let (parts, grads) = sample_gradients(model, &train_set[i], w).map_err(|e| match e {
                    Error::NonFinite { what } => Error::NonFinite {
                        what: format!("epoch {epoch}: {what}"),
                    },
                    other => other,
                })?;
                if let Some((name, v)) = first_non_finite(&parts) {
                    return Err(Error::NonFinite {
                        what: format!("epoch {epoch}: loss component {name} = {v}"),
                    });
                }
                sums.add_scaled(&parts, 1.0 / train_set.len() as f64);
                for (a, g) in acc.iter_mut().zip(grads) {
                    if let Some(g) = g {
                        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                            *x += y;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mut norm2 = 0.0;
            for a in &mut acc {
                for x in a.data_mut() {
                    *x *= scale;
                    norm2 += *x * *x;
                }
            }
            if !norm2.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("epoch {epoch}: gradient norm {norm2}"),
                });
            }
            let norm = norm2.sqrt();
            if opt.grad_clip > 0.0 && norm > opt.grad_clip {
                let k = opt.grad_clip / norm;
                for a in &mut acc {
                    a.data_mut().iter_mut().for_each(|x| *x *= k);
                }
            }
            lr = cosine_lr(step, total_steps, opt.lr, opt.warmup)?;
            let grads: Vec<Option<Tensor>> = acc.into_iter().map(Some).collect();
            adam.step(&mut model.store, &grads, lr)?;
            step += 1;
        }
        let row = LossRow {
            epoch,
            total: sums.total,
            det: sums.det,
            map: sums.map,
            mot: sums.mot,
            plan: sums.plan,
            distill: sums.distill,
            autoreg: sums.autoreg,
            lr,
        };
        on_epoch(&row);
        report.curve.push(row);
        if !val_set.is_empty() && (epoch % opt.val_every == 0 || epoch == opt.epochs) {
            let l2 = validation_l2(model, val_set, cfg, threads)?;
            report.val_l2.push((epoch, l2));
            if l2 < best {
                best = l2;
                report.best_epoch = epoch;
                report.best_params = model.store.named();
            }
        }
    }
    if val_set.is_empty() {
        report.best_epoch = opt.epochs;
        report.best_params = model.store.named();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AblationFlags;
    use crate::world::{generate_dataset, WorldConfig};

    fn small(epochs: usize) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.optimizer.epochs = epochs;
        cfg.optimizer.batch = 2;
        cfg.optimizer.warmup = 0;
        cfg
    }

    #[test]
    fn one_epoch_smoke() {
        let cfg = small(1);
        let data = generate_dataset(0, 5, &WorldConfig::default()).unwrap();
        let mut model = Model::new(cfg.model.clone()).unwrap();
        let rep = train(&mut model, &data, &data[..2], &cfg, 1, |_| {}).unwrap();
        assert_eq!(rep.curve.len(), 1);
        let r = rep.curve[0];
        for v in [r.total, r.det, r.map, r.mot, r.plan, r.distill, r.autoreg, r.lr] {
            assert!(v.is_finite());
        }
        assert!(r.distill > 0.0 && r.autoreg > 0.0);
        assert_eq!(rep.val_l2.len(), 1);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut cfg = small(1);
        cfg.optimizer.lr = 0.0;
        let data = generate_dataset(0, 3, &WorldConfig::default()).unwrap();
        let mut model = Model::new(cfg.model.clone()).unwrap();
        let before = model.store.named();
        train(&mut model, &data, &[], &cfg, 1, |_| {}).unwrap();
        assert_eq!(model.store.named(), before);
    }

    #[test]
    fn disabled_autoreg_logs_zero() {
        let mut cfg = small(1);
        cfg.model.flags = AblationFlags {
            autoregressive_map: false,
            ..AblationFlags::full()
        };
        let data = generate_dataset(0, 3, &WorldConfig::default()).unwrap();
        let mut model = Model::new(cfg.model.clone()).unwrap();
        let rep = train(&mut model, &data, &[], &cfg, 1, |_| {}).unwrap();
        assert_eq!(rep.curve[0].autoreg, 0.0);
    }

    #[test]
    fn non_finite_loss_names_epoch_and_component() {
        let mut cfg = small(1);
        cfg.losses.plan = f64::NAN;
        let data = generate_dataset(0, 2, &WorldConfig::default()).unwrap();
        let mut model = Model::new(cfg.model.clone()).unwrap();
        let err = train(&mut model, &data, &[], &cfg, 1, |_| {}).unwrap_err().to_string();
        assert!(err.contains("epoch 1") && err.contains("total"), "{err}");
    }

    #[test]
    fn checkpoint_round_trip_restores_the_model() {
        let model = Model::new(ModelConfig::default()).unwrap();
        let ckpt = model_checkpoint(&model.cfg, model.store.named(), "final", 3).unwrap();
        let back = model_from_checkpoint(&Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.store.named(), model.store.named());
        assert_eq!(back.cfg, model.cfg);
    }

    #[test]
    fn checkpoint_shape_mismatch_is_error() {
        let model = Model::new(ModelConfig::default()).unwrap();
        let cfg = ModelConfig {
            width: 16,
            ..ModelConfig::default()
        };
        let ckpt = model_checkpoint(&cfg, model.store.named(), "final", 0).unwrap();
        assert!(matches!(model_from_checkpoint(&ckpt), Err(Error::Checkpoint(_))));
    }
}
