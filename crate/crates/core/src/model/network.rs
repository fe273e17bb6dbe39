use crate::config::{KtnMode, ModelConfig};
use crate::data::{Proposal, ProposalKind};
use crate::encoder::{
    attention_pool, attention_pool_backward, encode_image, encode_image_backward, region_feature,
    region_feature_backward, FeatureMap, Image, PoolCache, RegionCache,
};
use crate::error::{ensure_arg, Result};
use crate::geometry::{spatial_features, spatial_input, union_box, BBox, SPATIAL_DIM};
use crate::nn::{
    add_assign, add_outer, axpy, matvec, matvec_t, sigmoid, softmax, softmax_backward, Linear, Mlp,
    MlpCache, ParamId, ParameterStore,
};

/// A human proposal paired with an object proposal (indices into the proposal list).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub human: usize,
    pub object: usize,
    pub object_class: usize,
}

/// Every human × object combination in proposal order, skipping pairs whose two
/// boxes coincide.
pub fn enumerate_pairs(proposals: &[Proposal]) -> Vec<Pair> {
    let mut pairs = Vec::new();
    for (h, hp) in proposals.iter().enumerate() {
        if hp.kind != ProposalKind::Human {
            continue;
        }
        for (o, op) in proposals.iter().enumerate() {
            if op.kind != ProposalKind::Object || op.bbox == hp.bbox {
                continue;
            }
            if let Some(object_class) = op.class {
                pairs.push(Pair {
                    human: h,
                    object: o,
                    object_class,
                });
            }
        }
    }
    pairs
}

#[derive(Debug, Clone)]
enum Transfer {
    Attention {
        alpha: Vec<f64>,
        fused: MlpCache,
    },
    Union {
        fused: MlpCache,
    },
    Off,
}

/// Forward state of one pair: features, attention and scores.
#[derive(Debug, Clone)]
pub struct PairForward {
    pub pair: Pair,
    pub union: BBox,
    pub v_u: Vec<f64>,
    pub v_sp: Vec<f64>,
    pub v_p: Vec<f64>,
    pub v_meta: Vec<f64>,
    pub v_hat: Vec<f64>,
    /// Interaction logits, one per verb.
    pub s_p: Vec<f64>,
    /// Relatedness logit.
    pub s_b: f64,
    union_region: RegionCache,
    spatial: MlpCache,
    embed: MlpCache,
    transfer: Transfer,
}

impl PairForward {
    /// Attention over the bank rows; `None` in union-only and off modes.
    pub fn alpha(&self) -> Option<&[f64]> {
        match &self.transfer {
            Transfer::Attention { alpha, .. } => Some(alpha),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneForward {
    pub map: FeatureMap,
    pub v_g: Vec<f64>,
    /// Global HOI logits, one per combo.
    pub s_g: Vec<f64>,
    pub pairs: Vec<PairForward>,
    /// Appearance feature of each proposal that takes part in some pair.
    pub regions: Vec<Option<Vec<f64>>>,
    global: PoolCache,
    region_caches: Vec<Option<RegionCache>>,
}

impl SceneForward {
    /// The `M × A` bag of interaction logits.
    pub fn bag(&self) -> Vec<Vec<f64>> {
        self.pairs.iter().map(|p| p.s_p.clone()).collect()
    }
}

/// Gradients of the loss with respect to the network outputs.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub s_g: Vec<f64>,
    pub v_g: Vec<f64>,
    pub s_p: Vec<Vec<f64>>,
    pub s_b: Vec<f64>,
    /// Extra gradient on each holistic pair feature `v_p`.
    pub v_p: Vec<Vec<f64>>,
}

impl OutputGrads {
    pub fn zeros(fwd: &SceneForward) -> Self {
        let d = fwd.v_g.len();
        let m = fwd.pairs.len();
        let a = fwd.pairs.first().map_or(0, |p| p.s_p.len());
        Self {
            s_g: vec![0.0; fwd.s_g.len()],
            v_g: vec![0.0; d],
            s_p: vec![vec![0.0; a]; m],
            s_b: vec![0.0; m],
            v_p: vec![vec![0.0; d]; m],
        }
    }
}

/// The two-branch network over a parameter snapshot.
#[derive(Debug, Clone, Copy)]
pub struct Network<'a> {
    pub params: &'a ParameterStore,
    pub cfg: &'a ModelConfig,
    pub num_verbs: usize,
    pub num_combos: usize,
}

impl<'a> Network<'a> {
    pub fn new(params: &'a ParameterStore, cfg: &'a ModelConfig) -> Self {
        let bank = params.tensor(ParamId::Bank);
        let pair = params.tensor(ParamId::PairW);
        Self {
            params,
            cfg,
            num_verbs: pair.shape[0],
            num_combos: bank.shape[0],
        }
    }

    fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn spatial_net(&self) -> Mlp {
        let d = self.dim();
        Mlp {
            hidden: Linear { weight: ParamId::SpatialW1, bias: ParamId::SpatialB1, input: 2 * SPATIAL_DIM, output: d },
            out: Linear { weight: ParamId::SpatialW2, bias: ParamId::SpatialB2, input: d, output: d },
        }
    }

    pub fn embed_net(&self) -> Mlp {
        let d = self.dim();
        Mlp {
            hidden: Linear { weight: ParamId::EmbedW1, bias: ParamId::EmbedB1, input: 3 * d, output: d },
            out: Linear { weight: ParamId::EmbedW2, bias: ParamId::EmbedB2, input: d, output: d },
        }
    }

    pub fn transfer_net(&self) -> Mlp {
        let d = self.dim();
        Mlp {
            hidden: Linear { weight: ParamId::KtnW1, bias: ParamId::KtnB1, input: d, output: d },
            out: Linear { weight: ParamId::KtnW2, bias: ParamId::KtnB2, input: d, output: d },
        }
    }

    pub fn union_map(&self) -> Linear {
        let d = self.dim();
        Linear { weight: ParamId::UnionW, bias: ParamId::UnionB, input: d, output: d }
    }

    pub fn pair_head(&self) -> Linear {
        Linear { weight: ParamId::PairW, bias: ParamId::PairB, input: self.dim(), output: self.num_verbs }
    }

    pub fn relatedness_head(&self) -> Linear {
        Linear { weight: ParamId::RelW, bias: ParamId::RelB, input: self.dim(), output: 1 }
    }

    /// `v_p = F_E([v_h; v_o; v_sp])`.
    pub fn holistic_pair_feature(&self, v_h: &[f64], v_o: &[f64], v_sp: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let d = self.dim();
        ensure_arg!(
            v_h.len() == d && v_o.len() == d && v_sp.len() == d,
            "pair inputs must all have length {d}"
        );
        let input: Vec<f64> = v_h.iter().chain(v_o).chain(v_sp).copied().collect();
        Ok(self.embed_net().forward(self.params, &input))
    }

    /// `(s_p, s_b) = (F_P(v̂_p), F_B(v̂_p))`.
    pub fn pair_heads(&self, v_hat: &[f64]) -> Result<(Vec<f64>, f64)> {
        ensure_arg!(v_hat.len() == self.dim(), "pair feature must have length {}", self.dim());
        let s_p = self.pair_head().forward(self.params, v_hat);
        let s_b = self.relatedness_head().forward(self.params, v_hat)[0];
        Ok((s_p, s_b))
    }

    /// Knowledge transfer: returns `(v̂_p, v_meta, α)`; `α` is `None` in union-only
    /// and off modes. `bank` is the bank view used by the local branch.
    pub fn ktn(&self, v_p: &[f64], v_u: &[f64], bank: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> {
        let (v_hat, v_meta, transfer) = self.transfer_forward(v_p, v_u, bank)?;
        let alpha = match transfer {
            Transfer::Attention { alpha, .. } => Some(alpha),
            _ => None,
        };
        Ok((v_hat, v_meta, alpha))
    }

    fn transfer_forward(&self, v_p: &[f64], v_u: &[f64], bank: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Transfer)> {
        let d = self.dim();
        ensure_arg!(v_p.len() == d && v_u.len() == d, "KTN inputs must have length {d}");
        let n = self.num_combos;
        match self.cfg.ktn_mode {
            KtnMode::Softmax | KtnMode::Sigmoid | KtnMode::Uniform => {
                ensure_arg!(bank.len() == n * d, "bank view has the wrong size");
                let alpha = match self.cfg.ktn_mode {
                    KtnMode::Softmax => softmax(&matvec(bank, n, d, v_u)),
                    KtnMode::Sigmoid => matvec(bank, n, d, v_u).into_iter().map(sigmoid).collect(),
                    _ => vec![1.0 / n as f64; n],
                };
                let v_meta = matvec_t(bank, n, d, &alpha);
                let mut input = v_p.to_vec();
                add_assign(&mut input, &v_meta);
                let (v_hat, fused) = self.transfer_net().forward(self.params, &input);
                Ok((v_hat, v_meta, Transfer::Attention { alpha, fused }))
            }
            KtnMode::UnionOnly => {
                let mapped = self.union_map().forward(self.params, v_u);
                let mut input = v_p.to_vec();
                add_assign(&mut input, &mapped);
                let (v_hat, fused) = self.transfer_net().forward(self.params, &input);
                Ok((v_hat, mapped, Transfer::Union { fused }))
            }
            KtnMode::Off => Ok((v_p.to_vec(), vec![0.0; d], Transfer::Off)),
        }
    }

    /// Full forward pass. `local_bank` overrides the bank seen by the local branch
    /// (a frozen copy); `None` uses the live parameters.
    pub fn forward(&self, image: &Image, proposals: &[Proposal], local_bank: Option<&[f64]>) -> Result<SceneForward> {
        let cfg = self.cfg;
        let d = cfg.dim;
        ensure_arg!(
            image.width() == cfg.image_width && image.height() == cfg.image_height,
            "image is {}×{}, model expects {}×{}",
            image.width(),
            image.height(),
            cfg.image_width,
            cfg.image_height
        );
        let map = encode_image(self.params, d, cfg.patch, image)?;
        let (v_g, global) = attention_pool(self.params, d, map.cells())?;
        let bank = self.params.get(ParamId::Bank);
        let s_g = matvec(bank, self.num_combos, d, &v_g);
        let local_bank = local_bank.unwrap_or(bank);

        let pairs = enumerate_pairs(proposals);
        let mut regions: Vec<Option<Vec<f64>>> = vec![None; proposals.len()];
        let mut region_caches: Vec<Option<RegionCache>> = vec![None; proposals.len()];
        for p in &pairs {
            for idx in [p.human, p.object] {
                if regions[idx].is_none() {
                    let (v, cache) = region_feature(self.params, &map, &proposals[idx].bbox, cfg.roi_grid)?;
                    regions[idx] = Some(v);
                    region_caches[idx] = Some(cache);
                }
            }
        }

        let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);
        let mut out = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let hb = &proposals[pair.human].bbox;
            let ob = &proposals[pair.object].bbox;
            let union = union_box(hb, ob)?.clamp_to(w, h)?;
            let (v_u, union_region) = region_feature(self.params, &map, &union, cfg.roi_grid)?;
            let p = spatial_features(hb, ob, w, h)?;
            let (v_sp, spatial) = self.spatial_net().forward(self.params, &spatial_input(&p)?);
            let v_h = regions[pair.human].as_ref().expect("computed above");
            let v_o = regions[pair.object].as_ref().expect("computed above");
            let (v_p, embed) = self.holistic_pair_feature(v_h, v_o, &v_sp)?;
            let (v_hat, v_meta, transfer) = self.transfer_forward(&v_p, &v_u, local_bank)?;
            let (s_p, s_b) = self.pair_heads(&v_hat)?;
            out.push(PairForward {
                pair,
                union,
                v_u,
                v_sp,
                v_p,
                v_meta,
                v_hat,
                s_p,
                s_b,
                union_region,
                spatial,
                embed,
                transfer,
            });
        }
        Ok(SceneForward {
            map,
            v_g,
            s_g,
            pairs: out,
            regions,
            global,
            region_caches,
        })
    }

    /// Backpropagates `up` through the whole network into `grads`. The local branch
    /// writes no bank gradient when `local_detached` is set.
    pub fn backward(
        &self,
        image: &Image,
        fwd: &SceneForward,
        up: &OutputGrads,
        grads: &mut ParameterStore,
        local_bank: Option<&[f64]>,
    ) {
        let params = self.params;
        let d = self.dim();
        let n = self.num_combos;
        let bank = params.get(ParamId::Bank);
        let local_bank = local_bank.unwrap_or(bank);
        let write_local_bank = !self.cfg.local_detached;

        let mut d_cells = vec![0.0; fwd.map.cells().len()];
        let mut d_regions: Vec<Option<Vec<f64>>> = vec![None; fwd.regions.len()];

        for (m, pf) in fwd.pairs.iter().enumerate() {
            let mut d_hat = self.pair_head().backward(params, grads, &pf.v_hat, &up.s_p[m]);
            let d_rel = self.relatedness_head().backward(params, grads, &pf.v_hat, &[up.s_b[m]]);
            add_assign(&mut d_hat, &d_rel);

            let mut d_v_u = vec![0.0; d];
            let mut d_v_p = match &pf.transfer {
                Transfer::Attention { alpha, fused } => {
                    let d_in = self.transfer_net().backward(params, grads, fused, &d_hat);
                    // v_meta = Wᵀ α
                    if write_local_bank {
                        add_outer(grads.get_mut(ParamId::Bank), alpha, &d_in);
                    }
                    let d_alpha = matvec(local_bank, n, d, &d_in);
                    let d_logits = match self.cfg.ktn_mode {
                        KtnMode::Softmax => Some(softmax_backward(alpha, &d_alpha)),
                        KtnMode::Sigmoid => Some(
                            d_alpha.iter().zip(alpha).map(|(g, a)| g * a * (1.0 - a)).collect(),
                        ),
                        _ => None,
                    };
                    if let Some(d_logits) = d_logits {
                        // logits = W v_u
                        if write_local_bank {
                            add_outer(grads.get_mut(ParamId::Bank), &d_logits, &pf.v_u);
                        }
                        d_v_u = matvec_t(local_bank, n, d, &d_logits);
                    }
                    d_in
                }
                Transfer::Union { fused } => {
                    let d_in = self.transfer_net().backward(params, grads, fused, &d_hat);
                    d_v_u = self.union_map().backward(params, grads, &pf.v_u, &d_in);
                    d_in
                }
                Transfer::Off => d_hat,
            };
            add_assign(&mut d_v_p, &up.v_p[m]);

            let d_concat = self.embed_net().backward(params, grads, &pf.embed, &d_v_p);
            let (d_v_h, rest) = d_concat.split_at(d);
            let (d_v_o, d_v_sp) = rest.split_at(d);
            self.spatial_net().backward(params, grads, &pf.spatial, d_v_sp);
            for (idx, g) in [(pf.pair.human, d_v_h), (pf.pair.object, d_v_o)] {
                match &mut d_regions[idx] {
                    Some(acc) => add_assign(acc, g),
                    slot @ None => *slot = Some(g.to_vec()),
                }
            }
            region_feature_backward(params, grads, &pf.union_region, &d_v_u, &mut d_cells);
        }

        for (cache, g) in fwd.region_caches.iter().zip(&d_regions) {
            if let (Some(cache), Some(g)) = (cache, g) {
                region_feature_backward(params, grads, cache, g, &mut d_cells);
            }
        }

        // s_g = W_T v_g
        let mut d_v_g = up.v_g.clone();
        if up.s_g.iter().any(|v| *v != 0.0) {
            add_outer(grads.get_mut(ParamId::Bank), &up.s_g, &fwd.v_g);
            axpy(&mut d_v_g, 1.0, &matvec_t(bank, n, d, &up.s_g));
        }
        if d_v_g.iter().any(|v| *v != 0.0) {
            let d_global = attention_pool_backward(params, grads, &fwd.global, &d_v_g);
            add_assign(&mut d_cells, &d_global);
        }
        encode_image_backward(grads, image, &fwd.map, &d_cells);
    }
}
