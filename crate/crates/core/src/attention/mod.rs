//! Attention operators over BEV grids and token sets.

mod mha;
mod path;

pub use mha::{cross_attention, mhsa, MultiHeadAttention, MultiHeadAttentionVars};
pub use path::{
    deformable_attention_baseline, path_attention, path_attention_weights, PathAttention,
    PathAttentionConfig, PathAttentionVars,
};
