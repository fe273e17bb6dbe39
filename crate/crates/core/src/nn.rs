//! Dense row-major f64 primitives, the named parameter store, and the two layer
//! shapes the network is built from. Everything here backpropagates by hand.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Result};

/// `W x` for a `rows × cols` row-major matrix.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    w.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

/// `Wᵀ y` for a `rows × cols` row-major matrix.
pub fn matvec_t(w: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(y.len(), rows);
    let mut out = vec![0.0; cols];
    for (row, &yr) in w.chunks_exact(cols).zip(y) {
        if yr != 0.0 {
            axpy(&mut out, yr, row);
        }
    }
    out
}

/// `g += a bᵀ`.
pub fn add_outer(g: &mut [f64], a: &[f64], b: &[f64]) {
    debug_assert_eq!(g.len(), a.len() * b.len());
    for (row, &ar) in g.chunks_exact_mut(b.len()).zip(a) {
        if ar != 0.0 {
            axpy(row, ar, b);
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha x`.
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn add_assign(y: &mut [f64], x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Backward through softmax given its output `p`: `dx_i = p_i (dp_i - Σ_j p_j dp_j)`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(pi, di)| pi * (di - inner)).collect()
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = l2_norm(a) * l2_norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// Every learnable tensor of the network, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    PatchW,
    PatchB,
    Pos,
    PoolQ,
    PoolK,
    PoolV,
    PoolO,
    SpatialW1,
    SpatialB1,
    SpatialW2,
    SpatialB2,
    EmbedW1,
    EmbedB1,
    EmbedW2,
    EmbedB2,
    KtnW1,
    KtnB1,
    KtnW2,
    KtnB2,
    UnionW,
    UnionB,
    PairW,
    PairB,
    RelW,
    RelB,
    Bank,
}

impl ParamId {
    pub const ALL: [ParamId; 26] = [
        ParamId::PatchW,
        ParamId::PatchB,
        ParamId::Pos,
        ParamId::PoolQ,
        ParamId::PoolK,
        ParamId::PoolV,
        ParamId::PoolO,
        ParamId::SpatialW1,
        ParamId::SpatialB1,
        ParamId::SpatialW2,
        ParamId::SpatialB2,
        ParamId::EmbedW1,
        ParamId::EmbedB1,
        ParamId::EmbedW2,
        ParamId::EmbedB2,
        ParamId::KtnW1,
        ParamId::KtnB1,
        ParamId::KtnW2,
        ParamId::KtnB2,
        ParamId::UnionW,
        ParamId::UnionB,
        ParamId::PairW,
        ParamId::PairB,
        ParamId::RelW,
        ParamId::RelB,
        ParamId::Bank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::PatchW => "encoder.patch_w",
            ParamId::PatchB => "encoder.patch_b",
            ParamId::Pos => "encoder.pos",
            ParamId::PoolQ => "pool.w_q",
            ParamId::PoolK => "pool.w_k",
            ParamId::PoolV => "pool.w_v",
            ParamId::PoolO => "pool.w_o",
            ParamId::SpatialW1 => "spatial.w1",
            ParamId::SpatialB1 => "spatial.b1",
            ParamId::SpatialW2 => "spatial.w2",
            ParamId::SpatialB2 => "spatial.b2",
            ParamId::EmbedW1 => "embed.w1",
            ParamId::EmbedB1 => "embed.b1",
            ParamId::EmbedW2 => "embed.w2",
            ParamId::EmbedB2 => "embed.b2",
            ParamId::KtnW1 => "ktn.w1",
            ParamId::KtnB1 => "ktn.b1",
            ParamId::KtnW2 => "ktn.w2",
            ParamId::KtnB2 => "ktn.b2",
            ParamId::UnionW => "union.w",
            ParamId::UnionB => "union.b",
            ParamId::PairW => "pair.w",
            ParamId::PairB => "pair.b",
            ParamId::RelW => "relatedness.w",
            ParamId::RelB => "relatedness.b",
            ParamId::Bank => "bank",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamId> {
        Self::ALL.iter().copied().find(|id| id.name() == name)
    }

    /// Visual encoder and pooling weights, which get the backbone learning rate.
    pub fn is_backbone(self) -> bool {
        matches!(
            self,
            ParamId::PatchW
                | ParamId::PatchB
                | ParamId::Pos
                | ParamId::PoolQ
                | ParamId::PoolK
                | ParamId::PoolV
                | ParamId::PoolO
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }
}

/// Named parameter tensors indexed by [`ParamId`]. The same type doubles as the
/// gradient buffer (see [`ParameterStore::zeros_like`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    tensors: Vec<Tensor>,
}

impl ParameterStore {
    pub fn from_shapes(shapes: impl Fn(ParamId) -> Vec<usize>) -> Self {
        Self {
            tensors: ParamId::ALL
                .iter()
                .map(|&id| Tensor::zeros(id.name(), &shapes(id)))
                .collect(),
        }
    }

    /// Rebuilds a store from named tensors, checking names and shapes against `reference`.
    pub fn from_tensors(tensors: Vec<Tensor>, reference: &ParameterStore) -> Result<Self> {
        ensure_arg!(
            tensors.len() == ParamId::ALL.len(),
            "expected {} tensors, got {}",
            ParamId::ALL.len(),
            tensors.len()
        );
        for (t, r) in tensors.iter().zip(&reference.tensors) {
            ensure_arg!(t.name == r.name, "tensor {} out of order (expected {})", t.name, r.name);
            ensure_arg!(
                t.shape == r.shape,
                "tensor {} has shape {:?}, expected {:?}",
                t.name,
                t.shape,
                r.shape
            );
            ensure_arg!(
                t.data.len() == t.shape.iter().product::<usize>(),
                "tensor {} data length does not match its shape",
                t.name
            );
        }
        Ok(Self { tensors })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(&t.name, &t.shape))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.tensors[id as usize].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id as usize].data
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id as usize]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = value);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// First tensor holding a non-finite value, for divergence diagnostics.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name.as_str())
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &ParameterStore) {
        for (t, o) in self.tensors.iter_mut().zip(&other.tensors) {
            axpy(&mut t.data, alpha, &o.data);
        }
    }

    pub fn init_normal<R: Rng>(&mut self, id: ParamId, std: f64, rng: &mut R) {
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in self.get_mut(id) {
            *v = normal.sample(rng);
        }
    }
}

/// Affine map `y = W x + b` with `W` stored `output × input`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn forward(&self, params: &ParameterStore, x: &[f64]) -> Vec<f64> {
        let mut y = matvec(params.get(self.weight), self.output, self.input, x);
        add_assign(&mut y, params.get(self.bias));
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(
        &self,
        params: &ParameterStore,
        grads: &mut ParameterStore,
        x: &[f64],
        dy: &[f64],
    ) -> Vec<f64> {
        add_outer(grads.get_mut(self.weight), dy, x);
        add_assign(grads.get_mut(self.bias), dy);
        matvec_t(params.get(self.weight), self.output, self.input, dy)
    }
}

/// One tanh hidden layer followed by a linear output layer.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl Mlp {
    pub fn forward(&self, params: &ParameterStore, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut h = self.hidden.forward(params, x);
        h.iter_mut().for_each(|v| *v = v.tanh());
        let y = self.out.forward(params, &h);
        (
            y,
            MlpCache {
                input: x.to_vec(),
                hidden: h,
            },
        )
    }

    pub fn backward(
        &self,
        params: &ParameterStore,
        grads: &mut ParameterStore,
        cache: &MlpCache,
        dy: &[f64],
    ) -> Vec<f64> {
        let mut dh = self.out.backward(params, grads, &cache.hidden, dy);
        for (d, h) in dh.iter_mut().zip(&cache.hidden) {
            *d *= 1.0 - h * h;
        }
        self.hidden.backward(params, grads, &cache.input, &dh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_loops() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(matvec(&w, 2, 3, &[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(matvec_t(&w, 2, 3, &[1.0, -1.0]), vec![-3.0, -3.0, -3.0]);
        let mut g = vec![0.0; 6];
        add_outer(&mut g, &[1.0, 2.0], &[1.0, 0.0, 3.0]);
        assert_eq!(g, vec![1.0, 0.0, 3.0, 2.0, 0.0, 6.0]);
    }

    #[test]
    fn softmax_is_stable_and_normalized() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && p[2] == 0.0);
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0);
    }

    #[test]
    fn param_names_round_trip() {
        for id in ParamId::ALL {
            assert_eq!(ParamId::from_name(id.name()), Some(id));
            assert_eq!(ParamId::ALL[id as usize], id);
        }
    }
}
