use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BevSpec;
use crate::world::CHANNELS;

/// Component switches. The ablation ladder adds, in order, the dual
/// branch, distillation, scene-aware initialization and the autoregressive
/// map loss to a single scene branch that sees the ego status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub dual_branch: bool,
    pub distill: bool,
    pub scene_aware_init: bool,
    pub autoregressive_map: bool,
    /// Inject the ego status into the scene branch's BEV.
    pub ego_enhancement: bool,
    /// Path attention; the deformable baseline otherwise.
    pub path_attention: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::full()
    }
}

impl AblationFlags {
    pub fn full() -> Self {
        AblationFlags {
            dual_branch: true,
            distill: true,
            scene_aware_init: true,
            autoregressive_map: true,
            ego_enhancement: false,
            path_attention: true,
        }
    }

    pub fn baseline() -> Self {
        AblationFlags {
            dual_branch: false,
            distill: false,
            scene_aware_init: false,
            autoregressive_map: false,
            ego_enhancement: true,
            path_attention: true,
        }
    }

    /// The five rungs `{}`, `{D}`, `{D,B}`, `{D,B,S}`, `{D,B,S,A}`.
    pub fn ladder() -> [(&'static str, AblationFlags); 5] {
        let b = Self::baseline();
        let d = AblationFlags {
            dual_branch: true,
            ego_enhancement: false,
            ..b
        };
        let db = AblationFlags { distill: true, ..d };
        let dbs = AblationFlags {
            scene_aware_init: true,
            ..db
        };
        let dbsa = AblationFlags {
            autoregressive_map: true,
            ..dbs
        };
        [("ID-1", b), ("ID-2", d), ("ID-3", db), ("ID-4", dbs), ("ID-5", dbsa)]
    }

    /// Short label such as `D,B,S`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, tag) in [
            (self.dual_branch, "D"),
            (self.distill, "B"),
            (self.scene_aware_init, "S"),
            (self.autoregressive_map, "A"),
        ] {
            if on {
                parts.push(tag);
            }
        }
        parts.join(",")
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dual_branch && (self.distill || self.scene_aware_init) {
            return Err(Error::Config(
                "distill and scene_aware_init need dual_branch: both read the ego branch or the fusion stack"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature width `C`.
    pub width: usize,
    pub n_agent: usize,
    pub n_map: usize,
    pub n_point: usize,
    pub n_mode: usize,
    /// Planning steps `T`.
    pub horizon: usize,
    pub dt: f64,
    /// Samples per path-attention head `K`.
    pub samples: usize,
    pub heads: usize,
    pub interaction_layers: usize,
    pub fusion_layers: usize,
    pub decoder_layers: usize,
    /// Observation raster window.
    pub bev: BevSpec,
    pub in_channels: usize,
    /// Downsampling from the raster to the feature grid.
    pub stride: usize,
    /// Hidden width of the encoder stem.
    pub stem_width: usize,
    /// Pooling of the feature grid into decoder tokens.
    pub token_pool: usize,
    pub seed: u64,
    pub flags: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 32,
            n_agent: 8,
            n_map: 8,
            n_point: 20,
            n_mode: 3,
            horizon: 6,
            dt: 0.5,
            samples: 4,
            heads: 4,
            interaction_layers: 2,
            fusion_layers: 2,
            decoder_layers: 2,
            bev: BevSpec::desk(),
            in_channels: CHANNELS,
            stride: 2,
            stem_width: 16,
            token_pool: 3,
            seed: 0,
            flags: AblationFlags::full(),
        }
    }
}

impl ModelConfig {
    /// Window and cell size of the encoded feature grid.
    pub fn feature_spec(&self) -> BevSpec {
        BevSpec {
            resolution: self.bev.resolution * self.stride as f64,
            ..self.bev
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.flags.validate()?;
        self.bev.validate()?;
        let positive = [
            ("width", self.width),
            ("n_agent", self.n_agent),
            ("n_map", self.n_map),
            ("n_mode", self.n_mode),
            ("horizon", self.horizon),
            ("samples", self.samples),
            ("heads", self.heads),
            ("interaction_layers", self.interaction_layers),
            ("decoder_layers", self.decoder_layers),
            ("in_channels", self.in_channels),
            ("stride", self.stride),
            ("stem_width", self.stem_width),
            ("token_pool", self.token_pool),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.n_point < 2 {
            return Err(Error::Config("model.n_point must be at least 2".into()));
        }
        if self.flags.dual_branch && self.fusion_layers == 0 {
            return Err(Error::Config("dual_branch needs at least one fusion layer".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        let f = self.feature_spec();
        if f.height() % self.token_pool != 0 || f.width() % self.token_pool != 0 {
            return Err(Error::Config(format!(
                "feature grid {}×{} is not divisible by token_pool {}",
                f.height(),
                f.width(),
                self.token_pool
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("model.dt must be positive".into()));
        }
        if self.bev.height() % self.stride != 0 || self.bev.width() % self.stride != 0 {
            return Err(Error::Config(format!(
                "BEV grid {}×{} is not divisible by stride {}",
                self.bev.height(),
                self.bev.width(),
                self.stride
            )));
        }
        Ok(())
    }
}
