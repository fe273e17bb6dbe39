use crate::error::{ensure_arg, Result};
use crate::nn::sigmoid;

/// Binary cross-entropy on a logit, `max(x, 0) - x·y + ln(1 + e^{-|x|})`.
pub fn bce_logits(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

/// `dL/dlogit = σ(logit) - label`.
pub fn bce_grad(logit: f64, label: f64) -> f64 {
    sigmoid(logit) - label
}

fn multi_hot(len: usize, positives: &[usize], what: &str) -> Result<Vec<f64>> {
    let mut target = vec![0.0; len];
    for &p in positives {
        ensure_arg!(p < len, "{what} id {p} out of range (have {len})");
        target[p] = 1.0;
    }
    Ok(target)
}

fn multi_label(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let loss = logits.iter().zip(target).map(|(&x, &y)| bce_logits(x, y)).sum();
    let grad = logits.iter().zip(target).map(|(&x, &y)| bce_grad(x, y)).collect();
    (loss, grad)
}

/// Multi-label BCE of the global HOI logits against the image's HOI labels.
/// Returns the loss and `dL/ds_g`.
pub fn loss_global(s_g: &[f64], hoi_labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let target = multi_hot(s_g.len(), hoi_labels, "hoi")?;
    Ok(multi_label(s_g, &target))
}

/// Multi-label BCE of the aggregated verb logits against the image's verbs.
/// Returns the loss and `dL/ds̃_p`.
pub fn loss_pairwise(aggregated: &[f64], verbs: &[usize]) -> Result<(f64, Vec<f64>)> {
    let target = multi_hot(aggregated.len(), verbs, "verb")?;
    Ok(multi_label(aggregated, &target))
}

/// Sum of per-pair BCE against pseudo labels; zero (with zero gradient) while
/// `active` is false.
pub fn loss_relatedness(s_b: &[f64], labels: &[bool], active: bool) -> Result<(f64, Vec<f64>)> {
    ensure_arg!(
        s_b.len() == labels.len(),
        "{} relatedness logits but {} labels",
        s_b.len(),
        labels.len()
    );
    if !active {
        return Ok((0.0, vec![0.0; s_b.len()]));
    }
    let target: Vec<f64> = labels.iter().map(|&b| f64::from(u8::from(b))).collect();
    Ok(multi_label(s_b, &target))
}

/// `‖mean_m v_p − v_g‖²`. Returns the loss, the gradient shared by every `v_p`
/// row, and the gradient on `v_g`.
pub fn loss_mean_pool(v_p: &[Vec<f64>], v_g: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    ensure_arg!(!v_p.is_empty(), "no pair features to pool");
    ensure_arg!(v_p.iter().all(|v| v.len() == v_g.len()), "pair features do not match v_g");
    let m = v_p.len() as f64;
    let mut diff = vec![0.0; v_g.len()];
    for v in v_p {
        for (d, x) in diff.iter_mut().zip(v) {
            *d += x / m;
        }
    }
    for (d, g) in diff.iter_mut().zip(v_g) {
        *d -= g;
    }
    let loss = diff.iter().map(|d| d * d).sum();
    let d_pair = diff.iter().map(|d| 2.0 * d / m).collect();
    let d_global = diff.iter().map(|d| -2.0 * d).collect();
    Ok((loss, d_pair, d_global))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn naive_bce(x: f64, y: f64) -> f64 {
        let p = 1.0 / (1.0 + (-x).exp());
        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    }

    #[test]
    fn bce_examples() {
        assert!((bce_logits(0.0, 1.0) - LN_2).abs() < 1e-15);
        assert!(bce_logits(50.0, 1.0) < 1e-20);
        assert!(bce_logits(800.0, 0.0).is_finite());
        assert!((bce_logits(-800.0, 0.0)).abs() < 1e-300);
    }

    #[test]
    fn global_and_pairwise_examples() {
        let (l, _) = loss_global(&[0.0, 0.0], &[1]).unwrap();
        assert!((l - 2.0 * LN_2).abs() < 1e-15);
        let (l, _) = loss_global(&[-40.0, -40.0, -40.0], &[]).unwrap();
        assert!(l < 1e-15);
        assert!(loss_global(&[0.0; 2], &[2]).is_err());
        let (l, _) = loss_pairwise(&[0.0; 3], &[0]).unwrap();
        assert!((l - 3.0 * LN_2).abs() < 1e-15);
        assert!(loss_pairwise(&[0.0; 3], &[3]).is_err());
    }

    #[test]
    fn relatedness_examples() {
        let (l, g) = loss_relatedness(&[0.0, 0.0], &[true, false], true).unwrap();
        assert!((l - 2.0 * LN_2).abs() < 1e-15);
        assert_eq!(g, vec![-0.5, 0.5]);
        let (l, g) = loss_relatedness(&[3.0, -1.0], &[true, false], false).unwrap();
        assert_eq!((l, g), (0.0, vec![0.0, 0.0]));
        assert!(loss_relatedness(&[0.0], &[true, false], true).is_err());
    }

    #[test]
    fn mean_pool_gradient_matches_differences() {
        let v_p = vec![vec![0.3, -0.2], vec![0.1, 0.5], vec![-0.4, 0.2]];
        let v_g = vec![0.05, 0.1];
        let (_, d_pair, d_global) = loss_mean_pool(&v_p, &v_g).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut p = v_p.clone();
            p[1][k] += h;
            let mut q = v_p.clone();
            q[1][k] -= h;
            let fd = (loss_mean_pool(&p, &v_g).unwrap().0 - loss_mean_pool(&q, &v_g).unwrap().0) / (2.0 * h);
            assert!((fd - d_pair[k]).abs() < 1e-8);
            let mut g1 = v_g.clone();
            g1[k] += h;
            let mut g2 = v_g.clone();
            g2[k] -= h;
            let fd = (loss_mean_pool(&v_p, &g1).unwrap().0 - loss_mean_pool(&v_p, &g2).unwrap().0) / (2.0 * h);
            assert!((fd - d_global[k]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn bce_matches_naive_form(x in -15.0f64..15.0, y in prop::bool::ANY) {
            let y = f64::from(u8::from(y));
            prop_assert!((bce_logits(x, y) - naive_bce(x, y)).abs() < 1e-9);
            prop_assert!(bce_logits(x, y) >= 0.0);
        }

        #[test]
        fn bce_grad_matches_central_difference(x in -20.0f64..20.0, y in prop::bool::ANY) {
            let y = f64::from(u8::from(y));
            let h = 1e-5;
            let fd = (bce_logits(x + h, y) - bce_logits(x - h, y)) / (2.0 * h);
            prop_assert!((fd - bce_grad(x, y)).abs() < 1e-8);
        }

        #[test]
        fn relatedness_matches_scalar_loop(
            pairs in prop::collection::vec((-10.0f64..10.0, prop::bool::ANY), 1..10),
        ) {
            let logits: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let mut oracle = 0.0;
            for (x, b) in &pairs {
                oracle += naive_bce(*x, if *b { 1.0 } else { 0.0 });
            }
            let (l, _) = loss_relatedness(&logits, &labels, true).unwrap();
            prop_assert!((l - oracle).abs() < 1e-9);
        }
    }
}
