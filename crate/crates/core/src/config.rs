use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::geometry::SPATIAL_DIM;
use crate::nn::{ParamId, ParameterStore};

/// How the union feature reads the knowledge bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KtnMode {
    /// `α = softmax(W_T v_u)`.
    #[default]
    Softmax,
    /// `α_i = 1/N`.
    Uniform,
    /// `α = σ(W_T v_u)`, unnormalized.
    Sigmoid,
    /// Union feature mapped through its own linear layer, bank unused.
    UnionOnly,
    /// No transfer at all: the pair heads read `v_p` directly.
    Off,
}

impl std::str::FromStr for KtnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(KtnMode::Softmax),
            "uniform" => Ok(KtnMode::Uniform),
            "sigmoid" => Ok(KtnMode::Sigmoid),
            "union_only" | "union-only" => Ok(KtnMode::UnionOnly),
            "off" | "none" => Ok(KtnMode::Off),
            other => Err(Error::invalid(format!("unknown KTN mode '{other}'"))),
        }
    }
}

/// Architecture and inference switches. Label-space sizes come from the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub patch: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub roi_grid: usize,
    pub ktn_mode: KtnMode,
    /// Stop gradients from the local branch into the knowledge bank.
    pub local_detached: bool,
    pub bank_trainable: bool,
    /// Global HOI recognition branch (`L_g` and the `σ(s_g)` fusion factor).
    pub use_global: bool,
    /// Relatedness factor `σ(s_b)` at inference.
    pub use_relatedness: bool,
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            patch: 8,
            image_width: 64,
            image_height: 64,
            roi_grid: 4,
            ktn_mode: KtnMode::Softmax,
            local_detached: true,
            bank_trainable: true,
            use_global: true,
            use_relatedness: true,
            gamma: 2.8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(self.dim >= 1, "dim must be positive");
        ensure_arg!(self.patch >= 1, "patch size must be positive");
        ensure_arg!(self.roi_grid >= 1, "roi grid must be positive");
        ensure_arg!(
            self.image_width.is_multiple_of(self.patch) && self.image_height.is_multiple_of(self.patch),
            "image {}×{} not divisible by patch {}",
            self.image_width,
            self.image_height,
            self.patch
        );
        ensure_arg!(self.image_width > 0 && self.image_height > 0, "empty image size");
        ensure_arg!(self.gamma > 0.0 && self.gamma.is_finite(), "gamma must be positive");
        Ok(())
    }

    pub fn grid_w(&self) -> usize {
        self.image_width / self.patch
    }

    pub fn grid_h(&self) -> usize {
        self.image_height / self.patch
    }

    pub fn patch_len(&self) -> usize {
        3 * self.patch * self.patch
    }

    /// Zero-filled store with every tensor shaped for `num_verbs` verbs and
    /// `num_combos` HOI classes.
    pub fn zero_params(&self, num_verbs: usize, num_combos: usize) -> ParameterStore {
        let d = self.dim;
        let cells = self.grid_h() * self.grid_w();
        let patch_len = self.patch_len();
        ParameterStore::from_shapes(|id| match id {
            ParamId::PatchW => vec![d, patch_len],
            ParamId::PatchB => vec![d],
            ParamId::Pos => vec![cells, d],
            ParamId::PoolQ | ParamId::PoolK | ParamId::PoolV | ParamId::PoolO => vec![d, d],
            ParamId::SpatialW1 => vec![d, 2 * SPATIAL_DIM],
            ParamId::EmbedW1 => vec![d, 3 * d],
            ParamId::SpatialW2 | ParamId::EmbedW2 | ParamId::KtnW1 | ParamId::KtnW2 => vec![d, d],
            ParamId::UnionW => vec![d, d],
            ParamId::SpatialB1
            | ParamId::SpatialB2
            | ParamId::EmbedB1
            | ParamId::EmbedB2
            | ParamId::KtnB1
            | ParamId::KtnB2
            | ParamId::UnionB => vec![d],
            ParamId::PairW => vec![num_verbs, d],
            ParamId::PairB => vec![num_verbs],
            ParamId::RelW => vec![1, d],
            ParamId::RelB => vec![1],
            ParamId::Bank => vec![num_combos, d],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ktn_mode_parsing() {
        assert_eq!("softmax".parse::<KtnMode>().unwrap(), KtnMode::Softmax);
        assert_eq!("union-only".parse::<KtnMode>().unwrap(), KtnMode::UnionOnly);
        assert!(matches!("cosine".parse::<KtnMode>(), Err(Error::InvalidArgument(_))));
        let json = serde_json::to_string(&KtnMode::UnionOnly).unwrap();
        assert_eq!(json, "\"union_only\"");
    }

    #[test]
    fn validate_rejects_bad_patch() {
        let cfg = ModelConfig { patch: 7, ..Default::default() };
        assert!(cfg.validate().is_err());
        ModelConfig::default().validate().unwrap();
    }
}
