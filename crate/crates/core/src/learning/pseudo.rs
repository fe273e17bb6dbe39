use std::collections::BTreeSet;

use crate::error::{ensure_arg, Result};

/// Relatedness targets for the pairs of one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabels {
    /// `b_m` per pair.
    pub labels: Vec<bool>,
    /// `Z`: `M × A`, a row is all ones when the pair's object class is labeled.
    pub mask: Vec<Vec<bool>>,
    /// Pairs picked for each labeled verb, best first.
    pub selected: Vec<(usize, Vec<usize>)>,
}

impl PseudoLabels {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|b| **b).count()
    }
}

/// Marks as related the top-`k` masked-in pairs of every labeled verb column.
/// Pairs whose object class is not in `classes` are never selected; ties go to
/// the lower pair index; a column with fewer than `k` candidates selects all of them.
pub fn pseudo_labels(
    scores: &[Vec<f64>],
    pair_classes: &[usize],
    classes: &BTreeSet<usize>,
    verbs: &BTreeSet<usize>,
    k: usize,
) -> Result<PseudoLabels> {
    ensure_arg!(!scores.is_empty(), "pseudo labels need at least one pair");
    ensure_arg!(
        scores.len() == pair_classes.len(),
        "{} score rows but {} pair classes",
        scores.len(),
        pair_classes.len()
    );
    ensure_arg!(k >= 1, "top-k must be at least 1");
    let num_verbs = scores[0].len();
    ensure_arg!(scores.iter().all(|r| r.len() == num_verbs), "ragged score matrix");
    ensure_arg!(
        verbs.iter().all(|&a| a < num_verbs),
        "verb label out of range (have {num_verbs})"
    );

    let keep: Vec<bool> = pair_classes.iter().map(|c| classes.contains(c)).collect();
    let mask = keep.iter().map(|&z| vec![z; num_verbs]).collect();
    let mut labels = vec![false; scores.len()];
    let mut selected = Vec::with_capacity(verbs.len());
    for &a in verbs {
        let mut candidates: Vec<usize> = (0..scores.len()).filter(|&m| keep[m]).collect();
        candidates.sort_by(|&i, &j| scores[j][a].total_cmp(&scores[i][a]).then(i.cmp(&j)));
        candidates.truncate(k);
        for &m in &candidates {
            labels[m] = true;
        }
        selected.push((a, candidates));
    }
    Ok(PseudoLabels { labels, mask, selected })
}
