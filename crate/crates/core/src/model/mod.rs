//! The dual-branch planner.
//!
//! A shared stem encodes the observation raster; two final stages produce
//! `B_woes` (scene branch, no ego status) and `B_wes` (ego branch, ego
//! embedding injected). The scene branch decodes agents and map elements,
//! then refines mode queries against them and the BEV with path attention.
//! The ego branch refines its own mode queries directly on `B_wes`. A
//! fusion stack lets a third query set attend over both contexts before the
//! final trajectories are decoded.

mod config;
pub mod encoder;
mod objective;

pub use config::{AblationFlags, ModelConfig};
pub use objective::{training_loss, LossBreakdown, TrainingLoss};

use crate::attention::{
    cross_attention, deformable_attention_baseline, mhsa, path_attention, MultiHeadAttention, PathAttention,
    PathAttentionConfig, PathAttentionVars,
};
use crate::error::{Error, Result};
use crate::geometry::BevSpec;
use crate::losses::{AgentOutputs, MapOutputs, PlanOutputs, AGENT_CLASSES, BOX_DIMS, MAP_CLASSES};
use crate::nn::{FeedForward, LayerNorm, Linear, Mlp};
use crate::tensor::{Bound, Init, ParamId, ParamStore, Tape, Tensor, Var};
use crate::types::{Command, EgoStatus, Trajectory};
use encoder::{EgoInjection, Stage, Stem};

/// Which inputs reach the fusion stack at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Ego branch severed; fusion sees zeros in place of its queries.
    SceneOnly,
}

/// Trajectory and score heads: per-step displacements, prefix-summed.
#[derive(Clone, Copy, Debug)]
pub struct PlanHead {
    pub disp: Linear,
    pub score: Linear,
}

impl PlanHead {
    fn new(store: &mut ParamStore, name: &str, width: usize, horizon: usize) -> Self {
        PlanHead {
            disp: Linear::new(store, &format!("{name}.disp"), width, 2 * horizon),
            score: Linear::new(store, &format!("{name}.score"), width, 1),
        }
    }
}

/// `(2T)×(2T)` matrix turning stacked displacements into waypoints.
fn prefix_sum_matrix(horizon: usize) -> Tensor {
    let n = 2 * horizon;
    let mut m = Tensor::zeros(&[n, n]);
    for j in 0..horizon {
        for k in j..horizon {
            for c in 0..2 {
                m.set(&[2 * j + c, 2 * k + c], 1.0);
            }
        }
    }
    m
}

/// Decode `queries: N×C` into trajectories `N×(2T)` and scores `N`.
pub fn decode_plan<'t>(p: &Bound<'t>, head: &PlanHead, queries: Var<'t>) -> Result<PlanOutputs<'t>> {
    let n = queries.shape()[0];
    let disp = head.disp.forward(p, queries)?;
    let horizon = disp.shape()[1] / 2;
    let tape = queries.tape();
    let trajectories = disp.matmul(tape.constant(prefix_sum_matrix(horizon)))?;
    let scores = head.score.forward(p, queries)?.reshape(&[n])?;
    Ok(PlanOutputs { trajectories, scores })
}

/// Highest score, ties to the lowest index.
pub fn select_mode(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
struct SceneLayer {
    to_agents: MultiHeadAttention,
    ln_a: LayerNorm,
    to_map: MultiHeadAttention,
    ln_m: LayerNorm,
    path: PathAttention,
    ln_p: LayerNorm,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
struct EgoLayer {
    path: PathAttention,
    ln_p: LayerNorm,
    ffn: FeedForward,
}

#[derive(Clone, Copy, Debug)]
struct DecoderLayer {
    attn: MultiHeadAttention,
    ln: LayerNorm,
    ffn: FeedForward,
}

#[derive(Clone, Copy, Debug)]
struct FusionLayer {
    proj_woes: Linear,
    proj_wes: Linear,
    self_attn: MultiHeadAttention,
    ln_multi: LayerNorm,
    cross: MultiHeadAttention,
    ln_fusion: LayerNorm,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
struct EgoBranch {
    stage: Stage,
    cmd: ParamId,
    query: ParamId,
    /// Zero-initialized correction of the constant-velocity anchors.
    ref_delta: Linear,
    layers: Vec<EgoLayer>,
    head: PlanHead,
}

#[derive(Clone, Debug)]
struct Fusion {
    pool_proj: Linear,
    modality: ParamId,
    cmd: ParamId,
    layers: Vec<FusionLayer>,
    head: PlanHead,
}

/// Network definition plus its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    stem: Stem,
    ego_inj: EgoInjection,
    scene_stage: Stage,
    pos: Mlp,
    agent_q: ParamId,
    map_q: ParamId,
    decoder: Vec<DecoderLayer>,
    agent_box: Linear,
    agent_cls: Linear,
    agent_mot: Linear,
    map_pts: Linear,
    map_cls: Linear,
    scene_cmd: ParamId,
    scene_query: ParamId,
    scene_layers: Vec<SceneLayer>,
    scene_head: PlanHead,
    ego: Option<EgoBranch>,
    fusion: Option<Fusion>,
}

/// Everything one forward pass produces.
#[derive(Clone, Debug)]
pub struct Forward<'t> {
    pub b_woes: Var<'t>,
    pub b_wes: Option<Var<'t>>,
    pub agent_queries: Var<'t>,
    pub map_queries: Var<'t>,
    pub agents: AgentOutputs<'t>,
    pub maps: MapOutputs<'t>,
    pub e_woes: Var<'t>,
    pub scene_plan: PlanOutputs<'t>,
    /// Reference points (grid coordinates, `N_mode×T×2`) used by each
    /// scene interaction layer.
    pub scene_refs: Vec<Tensor>,
    pub e_wes: Option<Var<'t>>,
    pub ego_plan: Option<PlanOutputs<'t>>,
    pub ego_refs: Vec<Tensor>,
    pub e_fusion: Option<Var<'t>>,
    /// Final multi-mode plan.
    pub plan: PlanOutputs<'t>,
}

impl<'t> Forward<'t> {
    pub fn selected_mode(&self) -> usize {
        select_mode(self.plan.scores.value().data())
    }

    pub fn selected_plan(&self, dt: f64) -> Trajectory {
        mode_trajectory(&self.plan.trajectories.value(), self.selected_mode(), dt)
    }
}

fn mode_trajectory(trajectories: &Tensor, mode: usize, dt: f64) -> Trajectory {
    let w = trajectories.shape()[1];
    let row = &trajectories.data()[mode * w..(mode + 1) * w];
    Trajectory::new(row.chunks(2).map(|c| [c[0], c[1]]).collect(), dt)
}

/// Plan read off a forward pass, detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub trajectories: Vec<Trajectory>,
    pub scores: Vec<f64>,
    pub selected: usize,
}

impl Prediction {
    pub fn plan(&self) -> &Trajectory {
        &self.trajectories[self.selected]
    }
}

fn learned(store: &mut ParamStore, name: &str, rows: usize, width: usize) -> ParamId {
    store.add(name, &[rows, width], Init::Uniform(0.5))
}

fn row_of<'t>(table: Var<'t>, index: usize, repeat: usize) -> Result<Var<'t>> {
    table.index_select(&vec![index; repeat])
}

/// World-frame `N×(2T)` points to grid coordinates on `spec`.
fn to_grid<'t>(world: Var<'t>, spec: &BevSpec) -> Result<Var<'t>> {
    let n = world.shape()[1] / 2;
    let shift: Vec<f64> = (0..n)
        .flat_map(|_| {
            [
                -spec.x_range[0] / spec.resolution - 0.5,
                -spec.y_range[0] / spec.resolution - 0.5,
            ]
        })
        .collect();
    world
        .scale(1.0 / spec.resolution)
        .add(world.tape().constant(Tensor::vector(shift)))
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(cfg.seed);
        let s = &mut store;
        let c = cfg.width;
        let t = cfg.horizon;
        let pa_cfg = PathAttentionConfig::new(t, cfg.samples, c);

        let stem = Stem::new(s, cfg.in_channels, cfg.stem_width, c, cfg.stride);
        let ego_inj = EgoInjection::new(s, c);
        let scene_stage = Stage::new(s, "enc.scene", c);
        let pos = Mlp::new(s, "dec.pos", 2, c, c);
        let agent_q = learned(s, "dec.agent_q", cfg.n_agent, c);
        let map_q = learned(s, "dec.map_q", cfg.n_map, c);
        let decoder = (0..cfg.decoder_layers)
            .map(|l| {
                Ok(DecoderLayer {
                    attn: MultiHeadAttention::new(s, &format!("dec.{l}.attn"), c, cfg.heads)?,
                    ln: LayerNorm::new(s, &format!("dec.{l}.ln"), c),
                    ffn: FeedForward::new(s, &format!("dec.{l}.ffn"), c),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let agent_box = Linear::new(s, "dec.agent.box", c, BOX_DIMS);
        let agent_cls = Linear::new(s, "dec.agent.cls", c, AGENT_CLASSES);
        let agent_mot = Linear::new(s, "dec.agent.mot", c, 2 * t);
        let map_pts = Linear::new(s, "dec.map.pts", c, 2 * cfg.n_point);
        let map_cls = Linear::new(s, "dec.map.cls", c, MAP_CLASSES);

        let scene_cmd = learned(s, "scene.cmd", 3, c);
        let scene_query = learned(s, "scene.query", cfg.n_mode, c);
        let scene_layers = (0..cfg.interaction_layers)
            .map(|l| {
                let n = format!("scene.{l}");
                Ok(SceneLayer {
                    to_agents: MultiHeadAttention::new(s, &format!("{n}.agents"), c, cfg.heads)?,
                    ln_a: LayerNorm::new(s, &format!("{n}.ln_a"), c),
                    to_map: MultiHeadAttention::new(s, &format!("{n}.map"), c, cfg.heads)?,
                    ln_m: LayerNorm::new(s, &format!("{n}.ln_m"), c),
                    path: PathAttention::new(s, &format!("{n}.path"), pa_cfg)?,
                    ln_p: LayerNorm::new(s, &format!("{n}.ln_p"), c),
                    ffn: FeedForward::new(s, &format!("{n}.ffn"), c),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scene_head = PlanHead::new(s, "scene.head", c, t);

        let (ego, fusion) = if cfg.flags.dual_branch {
            let layers = (0..cfg.interaction_layers)
                .map(|l| {
                    let n = format!("ego.{l}");
                    Ok(EgoLayer {
                        path: PathAttention::new(s, &format!("{n}.path"), pa_cfg)?,
                        ln_p: LayerNorm::new(s, &format!("{n}.ln_p"), c),
                        ffn: FeedForward::new(s, &format!("{n}.ffn"), c),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let ego = EgoBranch {
                stage: Stage::new(s, "enc.ego", c),
                cmd: learned(s, "ego.cmd", 3, c),
                query: learned(s, "ego.query", cfg.n_mode, c),
                ref_delta: Linear::zeroed(s, "ego.ref_delta", 4, 2 * t),
                layers,
                head: PlanHead::new(s, "ego.head", c, t),
            };
            let layers = (0..cfg.fusion_layers)
                .map(|l| {
                    let n = format!("fuse.{l}");
                    Ok(FusionLayer {
                        proj_woes: Linear::new(s, &format!("{n}.proj_woes"), c, c),
                        proj_wes: Linear::new(s, &format!("{n}.proj_wes"), c, c),
                        self_attn: MultiHeadAttention::new(s, &format!("{n}.mhsa"), c, cfg.heads)?,
                        ln_multi: LayerNorm::new(s, &format!("{n}.ln_multi"), c),
                        cross: MultiHeadAttention::new(s, &format!("{n}.cross"), c, cfg.heads)?,
                        ln_fusion: LayerNorm::new(s, &format!("{n}.ln_fusion"), c),
                        ffn: FeedForward::new(s, &format!("{n}.ffn"), c),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let fusion = Fusion {
                pool_proj: Linear::new(s, "fuse.pool_proj", c, c),
                modality: learned(s, "fuse.modality", cfg.n_mode, c),
                cmd: learned(s, "fuse.cmd", 3, c),
                layers,
                head: PlanHead::new(s, "fuse.head", c, t),
            };
            (Some(ego), Some(fusion))
        } else {
            (None, None)
        };

        Ok(Model {
            cfg,
            store,
            stem,
            ego_inj,
            scene_stage,
            pos,
            agent_q,
            map_q,
            decoder,
            agent_box,
            agent_cls,
            agent_mot,
            map_pts,
            map_cls,
            scene_cmd,
            scene_query,
            scene_layers,
            scene_head,
            ego,
            fusion,
        })
    }

    pub fn flags(&self) -> &AblationFlags {
        &self.cfg.flags
    }

    /// Names of parameters that exist only to build `B_wes` or consume it
    /// in the ego branch.
    pub fn is_ego_branch_param(name: &str) -> bool {
        name.starts_with("ego.") || name.starts_with("enc.ego.")
    }

    /// Shared stem output for `obs`.
    pub fn stem<'t>(&self, p: &Bound<'t>, obs: Var<'t>) -> Result<Var<'t>> {
        let s = obs.shape();
        let want = [self.cfg.in_channels, self.cfg.bev.height(), self.cfg.bev.width()];
        if s != want {
            return Err(Error::shape("encode_bev", &s, &want));
        }
        self.stem.forward(p, obs)
    }

    /// `B_woes`: ego status injected only under `ego_enhancement`.
    pub fn encode_scene<'t>(&self, p: &Bound<'t>, stem: Var<'t>, ego: &EgoStatus) -> Result<Var<'t>> {
        let inject = self.cfg.flags.ego_enhancement.then_some((&self.ego_inj, ego));
        encoder::encode(p, stem, &self.scene_stage, inject)
    }

    /// `B_wes`, always with the ego embedding.
    pub fn encode_ego<'t>(&self, p: &Bound<'t>, stem: Var<'t>, ego: &EgoStatus) -> Result<Option<Var<'t>>> {
        match &self.ego {
            Some(b) => Ok(Some(encoder::encode(p, stem, &b.stage, Some((&self.ego_inj, ego)))?)),
            None => Ok(None),
        }
    }

    /// Decode agent and map queries from `B_woes`.
    pub fn scene_decoder<'t>(
        &self,
        p: &Bound<'t>,
        bev: Var<'t>,
    ) -> Result<(AgentOutputs<'t>, MapOutputs<'t>, Var<'t>, Var<'t>)> {
        let tape = bev.tape();
        let k = self.cfg.token_pool;
        let bev = if k > 1 { bev.avg_pool(k)? } else { bev };
        let (h, w) = (bev.shape()[1], bev.shape()[2]);
        let c = self.cfg.width;
        let mut coords = Vec::with_capacity(2 * h * w);
        for r in 0..h {
            for col in 0..w {
                coords.push(2.0 * (col as f64 + 0.5) / w as f64 - 1.0);
                coords.push(2.0 * (r as f64 + 0.5) / h as f64 - 1.0);
            }
        }
        let pos = self.pos.forward(p, tape.constant(Tensor::new(&[h * w, 2], coords)?))?;
        let tokens = bev.reshape(&[c, h * w])?.transpose()?.add(pos)?;
        let (na, nm) = (self.cfg.n_agent, self.cfg.n_map);
        let mut q = tape.concat(&[p.get(self.agent_q), p.get(self.map_q)], 0)?;
        for layer in &self.decoder {
            let a = cross_attention(q, tokens, &layer.attn.bind(p))?;
            q = layer.ln.forward(p, q.add(a)?)?;
            q = layer.ffn.forward(p, q)?;
        }
        let aq = q.slice(0, 0, na)?;
        let mq = q.slice(0, na, na + nm)?;
        let agents = AgentOutputs {
            boxes: self.agent_box.forward(p, aq)?,
            logits: self.agent_cls.forward(p, aq)?,
            motion: self.agent_mot.forward(p, aq)?,
        };
        let maps = MapOutputs {
            points: self.map_pts.forward(p, mq)?,
            logits: self.map_cls.forward(p, mq)?,
        };
        Ok((agents, maps, aq, mq))
    }

    fn attend_path<'t>(
        &self,
        queries: Var<'t>,
        refs: Var<'t>,
        grid: Var<'t>,
        pa: &PathAttentionVars<'t>,
    ) -> Result<Var<'t>> {
        if self.cfg.flags.path_attention {
            path_attention(queries, refs, grid, pa)
        } else {
            // One anchor per query: the ego position.
            let n = queries.shape()[0];
            let origin = self.cfg.feature_spec().world_to_grid([0.0, 0.0]);
            let anchors = Tensor::new(&[n, 2], (0..n).flat_map(|_| origin).collect())?;
            deformable_attention_baseline(queries, queries.tape().constant(anchors), grid, pa)
        }
    }

    /// Detached reference points decoded from the current queries.
    fn preliminary_refs<'t>(&self, p: &Bound<'t>, head: &PlanHead, q: Var<'t>) -> Result<Var<'t>> {
        let n = q.shape()[0];
        let plan = decode_plan(p, head, q)?.trajectories.detach();
        to_grid(plan, &self.cfg.feature_spec())?.reshape(&[n, self.cfg.horizon, 2])
    }

    /// Scene-driven planning from `B_woes`, agent and map queries.
    pub fn scene_branch_plan<'t>(
        &self,
        p: &Bound<'t>,
        bev: Var<'t>,
        agent_queries: Var<'t>,
        map_queries: Var<'t>,
        command: Command,
    ) -> Result<(Var<'t>, PlanOutputs<'t>, Vec<Tensor>)> {
        let m = self.cfg.n_mode;
        let mut q = p
            .get(self.scene_query)
            .add(row_of(p.get(self.scene_cmd), command.index(), m)?)?;
        let mut refs_log = Vec::new();
        for layer in &self.scene_layers {
            let a = cross_attention(q, agent_queries, &layer.to_agents.bind(p))?;
            q = layer.ln_a.forward(p, q.add(a)?)?;
            let mm = cross_attention(q, map_queries, &layer.to_map.bind(p))?;
            q = layer.ln_m.forward(p, q.add(mm)?)?;
            let refs = self.preliminary_refs(p, &self.scene_head, q)?;
            refs_log.push((*refs.value()).clone());
            let s = self.attend_path(q, refs, bev, &layer.path.bind(p))?;
            q = layer.ln_p.forward(p, q.add(s)?)?;
            q = layer.ffn.forward(p, q)?;
        }
        let plan = decode_plan(p, &self.scene_head, q)?;
        Ok((q, plan, refs_log))
    }

    /// Constant-velocity anchors plus the learned correction, in grid
    /// coordinates, `N_mode×T×2`.
    pub fn ego_reference_points<'t>(&self, p: &Bound<'t>, ego: &EgoStatus) -> Result<Var<'t>> {
        let branch = self.ego.as_ref().ok_or_else(|| Error::Config("model has no ego branch".into()))?;
        let tape = p.get(branch.query).tape();
        let t = self.cfg.horizon;
        let cv: Vec<f64> = (1..=t)
            .flat_map(|k| {
                let s = k as f64 * self.cfg.dt;
                [ego.velocity[0] * s, ego.velocity[1] * s]
            })
            .collect();
        let feats = tape.constant(Tensor::new(&[1, 4], ego.features().to_vec())?);
        let world = branch
            .ref_delta
            .forward(p, feats)?
            .add(tape.constant(Tensor::new(&[1, 2 * t], cv)?))?;
        to_grid(world, &self.cfg.feature_spec())?
            .index_select(&vec![0; self.cfg.n_mode])?
            .reshape(&[self.cfg.n_mode, t, 2])
    }

    /// Ego-driven planning directly on `B_wes`.
    pub fn ego_branch_plan<'t>(
        &self,
        p: &Bound<'t>,
        bev: Var<'t>,
        ego: &EgoStatus,
        command: Command,
    ) -> Result<(Var<'t>, PlanOutputs<'t>, Vec<Tensor>)> {
        let branch = self.ego.as_ref().ok_or_else(|| Error::Config("model has no ego branch".into()))?;
        let m = self.cfg.n_mode;
        let mut q = p.get(branch.query).add(row_of(p.get(branch.cmd), command.index(), m)?)?;
        let mut refs_log = Vec::new();
        for (l, layer) in branch.layers.iter().enumerate() {
            let refs = if l == 0 {
                self.ego_reference_points(p, ego)?
            } else {
                self.preliminary_refs(p, &branch.head, q)?
            };
            refs_log.push((*refs.value()).clone());
            let s = self.attend_path(q, refs, bev, &layer.path.bind(p))?;
            q = layer.ln_p.forward(p, q.add(s)?)?;
            q = layer.ffn.forward(p, q)?;
        }
        let plan = decode_plan(p, &branch.head, q)?;
        Ok((q, plan, refs_log))
    }

    /// Initial fusion queries: pooled `B_woes` (or zeros) plus per-mode
    /// modality embeddings.
    pub fn scene_aware_init<'t>(&self, p: &Bound<'t>, bev: Var<'t>) -> Result<Var<'t>> {
        let f = self.fusion.as_ref().ok_or_else(|| Error::Config("model has no fusion stack".into()))?;
        let m = self.cfg.n_mode;
        let modality = p.get(f.modality);
        if !self.cfg.flags.scene_aware_init {
            return Ok(modality);
        }
        let c = self.cfg.width;
        let hw = bev.shape()[1] * bev.shape()[2];
        let pooled = bev.reshape(&[c, hw])?.mean_axis(1)?.reshape(&[1, c])?;
        let proj = f.pool_proj.forward(p, pooled)?;
        row_of(proj, 0, m)?.add(modality)
    }

    /// All fusion layers.
    pub fn fusion_layers<'t>(
        &self,
        p: &Bound<'t>,
        mut e_fusion: Var<'t>,
        e_woes: Var<'t>,
        e_wes: Var<'t>,
    ) -> Result<Var<'t>> {
        let f = self.fusion.as_ref().ok_or_else(|| Error::Config("model has no fusion stack".into()))?;
        for layer in &f.layers {
            e_fusion = fusion_layer(p, layer, e_fusion, e_woes, e_wes)?;
        }
        Ok(e_fusion)
    }

    /// Context rows `2·N_mode×C` seen by fusion layer `index`.
    pub fn fusion_context<'t>(
        &self,
        p: &Bound<'t>,
        index: usize,
        e_woes: Var<'t>,
        e_wes: Var<'t>,
    ) -> Result<Var<'t>> {
        let f = self.fusion.as_ref().ok_or_else(|| Error::Config("model has no fusion stack".into()))?;
        let layer = f
            .layers
            .get(index)
            .ok_or_else(|| Error::invalid("fusion_context", format!("no fusion layer {index}")))?;
        fusion_context(p, layer, e_woes, e_wes)
    }

    /// Full forward pass. `ego` feeds the ego branch and, under
    /// `ego_enhancement`, the scene BEV; nothing else reads it.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        obs: &Tensor,
        ego: &EgoStatus,
        command: Command,
        variant: Variant,
    ) -> Result<Forward<'t>> {
        if variant == Variant::SceneOnly && self.cfg.flags.ego_enhancement {
            return Err(Error::Config(
                "scene-only inference needs ego_enhancement off: the scene encoder would read ego status".into(),
            ));
        }
        let tape = p.get(self.scene_query).tape();
        let stem = self.stem(p, tape.constant(obs.clone()))?;
        let b_woes = self.encode_scene(p, stem, ego)?;
        let (agents, maps, agent_queries, map_queries) = self.scene_decoder(p, b_woes)?;
        let (e_woes, scene_plan, scene_refs) =
            self.scene_branch_plan(p, b_woes, agent_queries, map_queries, command)?;

        let mut out = Forward {
            b_woes,
            b_wes: None,
            agent_queries,
            map_queries,
            agents,
            maps,
            e_woes,
            scene_plan,
            scene_refs,
            e_wes: None,
            ego_plan: None,
            ego_refs: Vec::new(),
            e_fusion: None,
            plan: scene_plan,
        };
        let Some(fusion) = &self.fusion else {
            return Ok(out);
        };
        let e_wes = match variant {
            Variant::Full => {
                let b_wes = self.encode_ego(p, stem, ego)?.expect("dual branch has an ego stage");
                let (e_wes, ego_plan, ego_refs) = self.ego_branch_plan(p, b_wes, ego, command)?;
                out.b_wes = Some(b_wes);
                out.e_wes = Some(e_wes);
                out.ego_plan = Some(ego_plan);
                out.ego_refs = ego_refs;
                e_wes
            }
            Variant::SceneOnly => tape.constant(Tensor::zeros(&[self.cfg.n_mode, self.cfg.width])),
        };
        let init = self.scene_aware_init(p, b_woes)?;
        let e_fusion = self.fusion_layers(p, init, e_woes, e_wes)?;
        let conditioned = e_fusion.add(row_of(p.get(fusion.cmd), command.index(), self.cfg.n_mode)?)?;
        out.plan = decode_plan(p, &fusion.head, conditioned)?;
        out.e_fusion = Some(e_fusion);
        Ok(out)
    }

    /// Inference on a private tape.
    pub fn predict(&self, obs: &Tensor, ego: &EgoStatus, command: Command, variant: Variant) -> Result<Prediction> {
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let f = self.forward(&p, obs, ego, command, variant)?;
        let traj = f.plan.trajectories.value();
        let scores = f.plan.scores.value().data().to_vec();
        let n = scores.len();
        Ok(Prediction {
            trajectories: (0..n).map(|k| mode_trajectory(&traj, k, self.cfg.dt)).collect(),
            selected: select_mode(&scores),
            scores,
        })
    }
}

/// `LN(E_multi + MHSA(E_multi))` with scene rows first.
fn fusion_context<'t>(p: &Bound<'t>, layer: &FusionLayer, e_woes: Var<'t>, e_wes: Var<'t>) -> Result<Var<'t>> {
    let multi = e_woes.tape().concat(
        &[layer.proj_woes.forward(p, e_woes)?, layer.proj_wes.forward(p, e_wes)?],
        0,
    )?;
    layer
        .ln_multi
        .forward(p, multi.add(mhsa(multi, &layer.self_attn.bind(p))?)?)
}

fn fusion_layer<'t>(
    p: &Bound<'t>,
    layer: &FusionLayer,
    e_fusion: Var<'t>,
    e_woes: Var<'t>,
    e_wes: Var<'t>,
) -> Result<Var<'t>> {
    let multi = fusion_context(p, layer, e_woes, e_wes)?;
    let x = cross_attention(e_fusion, multi, &layer.cross.bind(p))?;
    let e = layer.ln_fusion.forward(p, e_fusion.add(x)?)?;
    layer.ffn.forward(p, e)
}
