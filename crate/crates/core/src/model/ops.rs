use crate::error::{ensure_arg, Result};
use crate::nn::{matvec, matvec_t, sigmoid, softmax};
use crate::vocab::Vocabulary;

/// `s_g = W_T v_g` for an `N × D` bank.
pub fn global_hoi_scores(bank: &[f64], num_combos: usize, v_g: &[f64]) -> Result<Vec<f64>> {
    ensure_arg!(
        num_combos > 0 && bank.len() == num_combos * v_g.len(),
        "bank of {} values is not {}×{}",
        bank.len(),
        num_combos,
        v_g.len()
    );
    Ok(matvec(bank, num_combos, v_g.len(), v_g))
}

/// Attention of a union feature over the bank rows, for the attention modes
/// (`softmax`, `sigmoid`, `uniform`). Returns `(α, v_meta = αᵀ W_T)`.
pub fn bank_attention(
    bank: &[f64],
    num_combos: usize,
    v_u: &[f64],
    mode: crate::config::KtnMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    use crate::config::KtnMode;
    let dim = v_u.len();
    ensure_arg!(bank.len() == num_combos * dim, "bank does not match union feature length");
    let alpha = match mode {
        KtnMode::Softmax => softmax(&matvec(bank, num_combos, dim, v_u)),
        KtnMode::Sigmoid => matvec(bank, num_combos, dim, v_u).into_iter().map(sigmoid).collect(),
        KtnMode::Uniform => vec![1.0 / num_combos as f64; num_combos],
        KtnMode::UnionOnly | KtnMode::Off => {
            return Err(crate::Error::invalid(format!("{mode:?} does not attend over the bank")))
        }
    };
    let meta = matvec_t(bank, num_combos, dim, &alpha);
    Ok((alpha, meta))
}

/// Column-wise max over the `M × A` bag; also returns the first argmax row per column.
/// `None` for an empty bag.
pub fn aggregate_scores(bag: &[Vec<f64>]) -> Option<(Vec<f64>, Vec<usize>)> {
    let first = bag.first()?;
    let mut best = first.clone();
    let mut arg = vec![0; first.len()];
    for (m, row) in bag.iter().enumerate().skip(1) {
        for (a, &v) in row.iter().enumerate() {
            if v > best[a] {
                best[a] = v;
                arg[a] = m;
            }
        }
    }
    Some((best, arg))
}

/// Inference-time normalization: softmax over pairs within each verb column, then
/// `e_p^m = σ(max_m S) ⊙ S̄[m]`. Returns `(S̄, e_p)`, both `M × A`.
pub fn normalize_pairs(bag: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let Some((maxes, _)) = aggregate_scores(bag) else {
        return Err(crate::Error::invalid("cannot normalize an empty bag"));
    };
    let verbs = maxes.len();
    ensure_arg!(bag.iter().all(|r| r.len() == verbs), "ragged score bag");
    let mut norm = vec![vec![0.0; verbs]; bag.len()];
    for a in 0..verbs {
        let column: Vec<f64> = bag.iter().map(|r| r[a]).collect();
        for (row, p) in norm.iter_mut().zip(softmax(&column)) {
            row[a] = p;
        }
    }
    let gate: Vec<f64> = maxes.iter().map(|&s| sigmoid(s)).collect();
    let e = norm
        .iter()
        .map(|row| row.iter().zip(&gate).map(|(p, g)| p * g).collect())
        .collect();
    Ok((norm, e))
}

/// Factors of one fused detection score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedScore {
    /// `σ(s_g^{a,c})`, or 1 when the global branch is disabled.
    pub global: f64,
    /// `e_p^a`.
    pub pair: f64,
    /// `σ(s_b)`, or 1 when relatedness is disabled.
    pub relatedness: f64,
    /// `(s_h · s_o)^γ`.
    pub det: f64,
    /// `s_{h,o}^a = global · pair · relatedness`.
    pub interaction: f64,
    /// `R = det · interaction`.
    pub score: f64,
}

/// `s_{h,o}^a = σ(s_g) · e_p^a · σ(s_b)`, `R = (s_h s_o)^γ · s_{h,o}^a`. Logits passed
/// as `None` contribute a factor of one.
pub fn fuse(
    global_logit: Option<f64>,
    pair: f64,
    relatedness_logit: Option<f64>,
    s_h: f64,
    s_o: f64,
    gamma: f64,
) -> FusedScore {
    let global = global_logit.map_or(1.0, sigmoid);
    let relatedness = relatedness_logit.map_or(1.0, sigmoid);
    let det = (s_h * s_o).powf(gamma);
    let interaction = global * pair * relatedness;
    FusedScore {
        global,
        pair,
        relatedness,
        det,
        interaction,
        score: det * interaction,
    }
}

/// Fusion for one `(verb, object class)` pair of a human-object pair. Returns
/// `None` when the combination is not in the vocabulary.
#[allow(clippy::too_many_arguments)]
pub fn fuse_scores(
    vocab: &Vocabulary,
    s_g: &[f64],
    e_p: &[f64],
    s_b: f64,
    verb: usize,
    object_class: usize,
    s_h: f64,
    s_o: f64,
    gamma: f64,
) -> Result<Option<FusedScore>> {
    ensure_arg!((0.0..=1.0).contains(&s_h) && (0.0..=1.0).contains(&s_o), "detection scores must be in [0, 1]");
    ensure_arg!(gamma > 0.0, "gamma must be positive");
    ensure_arg!(s_g.len() == vocab.num_combos() && e_p.len() == vocab.num_verbs(), "score lengths do not match the vocabulary");
    if verb >= vocab.num_verbs() || object_class >= vocab.num_objects() {
        return Ok(None);
    }
    Ok(vocab
        .hoi_index(verb, object_class)?
        .map(|hoi| fuse(Some(s_g[hoi]), e_p[verb], Some(s_b), s_h, s_o, gamma)))
}
