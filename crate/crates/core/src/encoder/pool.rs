use crate::error::{ensure_arg, Result};
use crate::nn::{add_outer, axpy, dot, matvec, matvec_t, softmax, softmax_backward, ParamId, ParameterStore};

/// Everything the backward pass of [`attention_pool`] needs.
#[derive(Debug, Clone)]
pub struct PoolCache {
    pub cells: Vec<f64>,
    pub count: usize,
    pub mean: Vec<f64>,
    pub query: Vec<f64>,
    /// `W_kᵀ q`, so that the score of cell `i` is `c_i · key_query / √D`.
    pub key_query: Vec<f64>,
    /// Attention weights α over the cells.
    pub weights: Vec<f64>,
    /// `Σ α_i c_i`.
    pub mixed: Vec<f64>,
    /// `W_v Σ α_i c_i`.
    pub context: Vec<f64>,
}

/// Single-query attention pooling over a set of `D`-vectors (stored back to back):
/// `q = W_q mean(c)`, `α = softmax(q · W_k c_i / √D)`, output `W_o Σ α_i W_v c_i`.
pub fn attention_pool(
    params: &ParameterStore,
    dim: usize,
    cells: &[f64],
) -> Result<(Vec<f64>, PoolCache)> {
    ensure_arg!(dim > 0 && cells.len().is_multiple_of(dim), "cell buffer is not a multiple of dim {dim}");
    let count = cells.len() / dim;
    ensure_arg!(count >= 1, "attention pool needs at least one cell");
    let (wq, wk, wv, wo) = (
        params.get(ParamId::PoolQ),
        params.get(ParamId::PoolK),
        params.get(ParamId::PoolV),
        params.get(ParamId::PoolO),
    );
    ensure_arg!(wq.len() == dim * dim, "pooling weights do not match dim {dim}");
    let scale = 1.0 / (dim as f64).sqrt();

    let mut mean = vec![0.0; dim];
    for c in cells.chunks_exact(dim) {
        axpy(&mut mean, 1.0 / count as f64, c);
    }
    let query = matvec(wq, dim, dim, &mean);
    let key_query = matvec_t(wk, dim, dim, &query);
    let scores: Vec<f64> = cells
        .chunks_exact(dim)
        .map(|c| dot(c, &key_query) * scale)
        .collect();
    let weights = softmax(&scores);
    let mut mixed = vec![0.0; dim];
    for (c, a) in cells.chunks_exact(dim).zip(&weights) {
        axpy(&mut mixed, *a, c);
    }
    let context = matvec(wv, dim, dim, &mixed);
    let out = matvec(wo, dim, dim, &context);
    Ok((
        out,
        PoolCache {
            cells: cells.to_vec(),
            count,
            mean,
            query,
            key_query,
            weights,
            mixed,
            context,
        },
    ))
}

/// Accumulates pooling-weight gradients and returns `dL/dcells`.
pub fn attention_pool_backward(
    params: &ParameterStore,
    grads: &mut ParameterStore,
    cache: &PoolCache,
    d_out: &[f64],
) -> Vec<f64> {
    let dim = cache.mean.len();
    let scale = 1.0 / (dim as f64).sqrt();
    let (wq, wk, wv, wo) = (
        params.get(ParamId::PoolQ),
        params.get(ParamId::PoolK),
        params.get(ParamId::PoolV),
        params.get(ParamId::PoolO),
    );

    add_outer(grads.get_mut(ParamId::PoolO), d_out, &cache.context);
    let d_context = matvec_t(wo, dim, dim, d_out);
    add_outer(grads.get_mut(ParamId::PoolV), &d_context, &cache.mixed);
    let d_mixed = matvec_t(wv, dim, dim, &d_context);

    let mut d_cells = vec![0.0; cache.cells.len()];
    let d_weights: Vec<f64> = cache
        .cells
        .chunks_exact(dim)
        .map(|c| dot(c, &d_mixed))
        .collect();
    for (dc, a) in d_cells.chunks_exact_mut(dim).zip(&cache.weights) {
        axpy(dc, *a, &d_mixed);
    }
    let d_scores = softmax_backward(&cache.weights, &d_weights);
    let mut d_key_query = vec![0.0; dim];
    for ((c, dc), ds) in cache
        .cells
        .chunks_exact(dim)
        .zip(d_cells.chunks_exact_mut(dim))
        .zip(&d_scores)
    {
        axpy(&mut d_key_query, ds * scale, c);
        axpy(dc, ds * scale, &cache.key_query);
    }
    // key_query = W_kᵀ q  ⇒  dW_k[r][j] += q_r · d_key_query_j
    add_outer(grads.get_mut(ParamId::PoolK), &cache.query, &d_key_query);
    let d_query = matvec(wk, dim, dim, &d_key_query);
    add_outer(grads.get_mut(ParamId::PoolQ), &d_query, &cache.mean);
    let d_mean = matvec_t(wq, dim, dim, &d_query);
    for dc in d_cells.chunks_exact_mut(dim) {
        axpy(dc, 1.0 / cache.count as f64, &d_mean);
    }
    d_cells
}
