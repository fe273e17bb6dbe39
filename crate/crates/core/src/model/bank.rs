use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::encoder::TextEncoder;
use crate::error::{ensure_arg, Result};
use crate::geometry::SPATIAL_DIM;
use crate::nn::{ParamId, ParameterStore};
use crate::vocab::Vocabulary;

/// HOI prototypes `W_T` (`N × D`), one row per combo, initialized from prompt embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBank {
    pub rows: Vec<f64>,
    pub num_combos: usize,
    pub dim: usize,
    pub trainable: bool,
    pub local_detached: bool,
}

impl KnowledgeBank {
    pub fn from_prompts(vocab: &Vocabulary, encoder: &dyn TextEncoder) -> Result<Self> {
        let dim = encoder.dim();
        let mut rows = Vec::with_capacity(vocab.num_combos() * dim);
        for hoi in 0..vocab.num_combos() {
            let v = encoder.encode(&vocab.prompt(hoi)?)?;
            ensure_arg!(v.len() == dim, "text encoder returned {} values, expected {}", v.len(), dim);
            rows.extend(v);
        }
        Ok(Self {
            rows,
            num_combos: vocab.num_combos(),
            dim,
            trainable: true,
            local_detached: true,
        })
    }

    pub fn row(&self, hoi: usize) -> &[f64] {
        &self.rows[hoi * self.dim..(hoi + 1) * self.dim]
    }
}

/// Fresh parameters: scaled Gaussian weights, zero biases, and the bank copied
/// from the prompt embeddings. Deterministic given `seed`.
pub fn init_params(
    cfg: &ModelConfig,
    vocab: &Vocabulary,
    text: &dyn TextEncoder,
    seed: u64,
) -> Result<ParameterStore> {
    cfg.validate()?;
    ensure_arg!(text.dim() == cfg.dim, "text encoder dim {} != model dim {}", text.dim(), cfg.dim);
    let d = cfg.dim as f64;
    let mut params = cfg.zero_params(vocab.num_verbs(), vocab.num_combos());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fan_in = |n: usize| 1.0 / (n as f64).sqrt();
    params.init_normal(ParamId::PatchW, fan_in(cfg.patch_len()), &mut rng);
    params.init_normal(ParamId::Pos, 0.1, &mut rng);
    for id in [ParamId::PoolQ, ParamId::PoolK, ParamId::PoolV, ParamId::PoolO] {
        params.init_normal(id, 1.0 / d.sqrt(), &mut rng);
    }
    params.init_normal(ParamId::SpatialW1, 0.5 * fan_in(2 * SPATIAL_DIM), &mut rng);
    params.init_normal(ParamId::EmbedW1, fan_in(3 * cfg.dim), &mut rng);
    for id in [
        ParamId::SpatialW2,
        ParamId::EmbedW2,
        ParamId::KtnW1,
        ParamId::KtnW2,
        ParamId::UnionW,
        ParamId::PairW,
        ParamId::RelW,
    ] {
        params.init_normal(id, fan_in(cfg.dim), &mut rng);
    }
    let bank = KnowledgeBank::from_prompts(vocab, text)?;
    params.get_mut(ParamId::Bank).copy_from_slice(&bank.rows);
    Ok(params)
}
