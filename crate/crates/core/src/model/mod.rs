//! The two-branch interaction network and score fusion.

mod bank;
mod detection;
mod network;
mod ops;

pub use bank::{init_params, KnowledgeBank};
pub use detection::{
    detect, detections_from_forward, write_detections, Detection, DetectionRecord, InferenceMode,
    ScoreComponents,
};
pub use network::{enumerate_pairs, Network, OutputGrads, Pair, PairForward, SceneForward};
pub use ops::{aggregate_scores, bank_attention, fuse, fuse_scores, global_hoi_scores, normalize_pairs, FusedScore};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{KtnMode, ModelConfig};
    use crate::data::{PixelSource, Proposal, ProposalKind, SceneRecord};
    use crate::encoder::{Image, ToyTextEncoder};
    use crate::geometry::BBox;
    use crate::nn::{ParamId, ParameterStore};
    use crate::vocab::Vocabulary;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            dim: 8,
            patch: 4,
            image_width: 16,
            image_height: 16,
            roi_grid: 2,
            ..Default::default()
        }
    }

    fn setup(cfg: &ModelConfig) -> (Vocabulary, ParameterStore) {
        let vocab = Vocabulary::synthetic(3, 2, 4).unwrap();
        let params = init_params(cfg, &vocab, &ToyTextEncoder::new(cfg.dim), 7).unwrap();
        (vocab, params)
    }

    fn proposal(b: [f64; 4], kind: ProposalKind, class: Option<usize>, score: f64) -> Proposal {
        Proposal {
            bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
            kind,
            class,
            score,
        }
    }

    fn scene(proposals: Vec<Proposal>) -> SceneRecord {
        SceneRecord {
            image_id: 3,
            width: 16,
            height: 16,
            pixels: PixelSource::Seed(11),
            proposals,
            image_labels: vec![],
            gt_instances: vec![],
        }
    }

    fn two_by_three() -> Vec<Proposal> {
        vec![
            proposal([0.0, 0.0, 6.0, 10.0], ProposalKind::Human, None, 0.9),
            proposal([8.0, 1.0, 15.0, 12.0], ProposalKind::Human, None, 0.8),
            proposal([2.0, 9.0, 7.0, 15.0], ProposalKind::Object, Some(0), 0.7),
            proposal([10.0, 10.0, 16.0, 16.0], ProposalKind::Object, Some(1), 0.95),
            proposal([5.0, 3.0, 9.0, 7.0], ProposalKind::Object, Some(0), 0.6),
        ]
    }

    fn naive_matvec(w: &[f64], rows: usize, x: &[f64]) -> Vec<f64> {
        let cols = x.len();
        let mut y = vec![0.0; rows];
        for r in 0..rows {
            for c in 0..cols {
                y[r] += w[r * cols + c] * x[c];
            }
        }
        y
    }

    #[test]
    fn global_scores_match_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank: Vec<f64> = (0..5 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = global_hoi_scores(&bank, 5, &v).unwrap();
        for (a, b) in s.iter().zip(naive_matvec(&bank, 5, &v)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(global_hoi_scores(&bank, 5, &[0.0; 4]).unwrap(), vec![0.0; 5]);
        let eye = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(global_hoi_scores(&eye, 2, &[3.0, -2.0]).unwrap(), vec![3.0, -2.0]);
        assert!(global_hoi_scores(&bank, 5, &[0.0; 3]).is_err());
    }

    #[test]
    fn bank_attention_modes() {
        let bank = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let (alpha, meta) = bank_attention(&bank, 3, &[0.3, -0.1], KtnMode::Softmax).unwrap();
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (_, meta_u) = bank_attention(&bank, 3, &[0.3, -0.1], KtnMode::Uniform).unwrap();
        assert!((meta_u[0] - 3.0).abs() < 1e-12 && (meta_u[1] - 4.0).abs() < 1e-12);
        assert_eq!(meta.len(), 2);
        let (alpha1, meta1) = bank_attention(&[0.5, -0.25], 1, &[9.0, 1.0], KtnMode::Softmax).unwrap();
        assert_eq!(alpha1, vec![1.0]);
        assert_eq!(meta1, vec![0.5, -0.25]);
        assert!(bank_attention(&bank, 3, &[0.3, -0.1], KtnMode::UnionOnly).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let (max, arg) = aggregate_scores(&[vec![0.2, 0.7], vec![0.5, 0.1]]).unwrap();
        assert_eq!(max, vec![0.5, 0.7]);
        assert_eq!(arg, vec![1, 0]);
        assert_eq!(aggregate_scores(&[vec![0.4, -1.0]]).unwrap().0, vec![0.4, -1.0]);
        assert!(aggregate_scores(&[]).is_none());
        let (_, arg) = aggregate_scores(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn normalize_examples() {
        let (norm, _) = normalize_pairs(&[vec![0.3, 1.0], vec![0.3, 2.0]]).unwrap();
        assert_eq!(norm[0][0], 0.5);
        assert_eq!(norm[1][0], 0.5);
        let (norm, e) = normalize_pairs(&[vec![0.3, -2.0]]).unwrap();
        assert_eq!(norm, vec![vec![1.0, 1.0]]);
        assert!((e[0][0] - crate::nn::sigmoid(0.3)).abs() < 1e-15);
        assert!(normalize_pairs(&[]).is_err());
    }

    #[test]
    fn fuse_worked_example() {
        // σ(0) = 0.5 and σ(ln 4) = 0.8.
        let f = fuse(Some(0.0), 0.4, Some(4f64.ln()), 0.9, 0.8, 2.8);
        assert!((f.interaction - 0.16).abs() < 1e-12);
        let expected = 0.72f64.powf(2.8) * 0.16;
        assert!((f.score - expected).abs() < 1e-12);
        assert!((f.score - 0.0638).abs() < 5e-5);
        assert_eq!(fuse(Some(0.0), 0.4, Some(0.0), 0.0, 0.8, 2.8).score, 0.0);
        assert_eq!(ModelConfig::default().gamma, 2.8);
    }

    #[test]
    fn fuse_scores_skips_invalid_combos() {
        let vocab = Vocabulary::synthetic(3, 2, 4).unwrap();
        let s_g = vec![0.0; 4];
        let e_p = vec![0.5; 3];
        let valid = vocab.combos()[0];
        let f = fuse_scores(&vocab, &s_g, &e_p, 0.0, valid.verb_id, valid.object_id, 1.0, 1.0, 2.8)
            .unwrap()
            .unwrap();
        assert!((f.score - 0.125).abs() < 1e-12);
        let missing = (0..3)
            .flat_map(|v| (0..2).map(move |o| (v, o)))
            .find(|&(v, o)| vocab.hoi_index(v, o).unwrap().is_none())
            .unwrap();
        assert!(fuse_scores(&vocab, &s_g, &e_p, 0.0, missing.0, missing.1, 1.0, 1.0, 2.8)
            .unwrap()
            .is_none());
        assert!(fuse_scores(&vocab, &s_g, &e_p, 0.0, 0, 0, 1.5, 1.0, 2.8).is_err());
    }

    #[test]
    fn pair_heads_zero_weights() {
        let cfg = small_cfg();
        let (_, params) = setup(&cfg);
        let zero = params.zeros_like();
        let net = Network::new(&zero, &cfg);
        let (s_p, s_b) = net.pair_heads(&[0.3; 8]).unwrap();
        assert_eq!(s_p, vec![0.0; 3]);
        assert_eq!(s_b, 0.0);
        assert!(net.pair_heads(&[0.3; 7]).is_err());
    }

    #[test]
    fn holistic_feature_is_not_symmetric() {
        let cfg = small_cfg();
        let (_, params) = setup(&cfg);
        let net = Network::new(&params, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut v = || (0..8).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (a, b, sp) = (v(), v(), v());
        let (x, _) = net.holistic_pair_feature(&a, &b, &sp).unwrap();
        let (y, _) = net.holistic_pair_feature(&b, &a, &sp).unwrap();
        assert_eq!(x.len(), 8);
        assert!(x.iter().zip(&y).any(|(p, q)| (p - q).abs() > 1e-6));
        assert!(net.holistic_pair_feature(&a, &b, &sp[..4]).is_err());
    }

    #[test]
    fn ktn_modes_shapes() {
        let mut cfg = small_cfg();
        let (_, params) = setup(&cfg);
        let bank = params.get(ParamId::Bank).to_vec();
        for mode in [KtnMode::Softmax, KtnMode::Uniform, KtnMode::Sigmoid, KtnMode::UnionOnly, KtnMode::Off] {
            cfg.ktn_mode = mode;
            let net = Network::new(&params, &cfg);
            let (v_hat, meta, alpha) = net.ktn(&[0.1; 8], &[0.2; 8], &bank).unwrap();
            assert_eq!(v_hat.len(), 8);
            assert_eq!(meta.len(), 8);
            match mode {
                KtnMode::Softmax => assert!((alpha.unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-12),
                KtnMode::Uniform => assert!(alpha.unwrap().iter().all(|a| (a - 0.25).abs() < 1e-15)),
                KtnMode::Sigmoid => assert!(alpha.unwrap().iter().all(|a| (0.0..1.0).contains(a))),
                _ => assert!(alpha.is_none()),
            }
        }
    }

    #[test]
    fn detect_counts_and_sorts() {
        let cfg = small_cfg();
        let (vocab, params) = setup(&cfg);
        let net = Network::new(&params, &cfg);
        let s = scene(two_by_three());
        let dets = detect(&net, &vocab, &s, InferenceMode::Full).unwrap();
        let pairs = enumerate_pairs(&s.proposals);
        assert_eq!(pairs.len(), 6);
        let expected: usize = pairs.iter().map(|p| vocab.verbs_for_object(p.object_class).count()).sum();
        assert_eq!(dets.len(), expected);
        assert!(dets.windows(2).all(|w| w[0].score() >= w[1].score()));
        for d in &dets {
            assert!(vocab.hoi_index(d.verb, d.object_class).unwrap() == Some(d.hoi_id));
            assert!((0.0..=1.0).contains(&d.score()));
        }
        let sim = detect(&net, &vocab, &s, InferenceMode::BankSimilarity).unwrap();
        assert_eq!(sim.len(), expected);
        assert!(sim.iter().all(|d| (0.0..=1.0).contains(&d.score())));
    }

    #[test]
    fn detect_without_humans_is_empty() {
        let cfg = small_cfg();
        let (vocab, params) = setup(&cfg);
        let net = Network::new(&params, &cfg);
        let objects: Vec<Proposal> = two_by_three().into_iter().skip(2).collect();
        assert!(detect(&net, &vocab, &scene(objects), InferenceMode::Full).unwrap().is_empty());
    }

    #[test]
    fn identical_boxes_are_not_paired() {
        let props = vec![
            proposal([1.0, 1.0, 5.0, 5.0], ProposalKind::Human, None, 0.9),
            proposal([1.0, 1.0, 5.0, 5.0], ProposalKind::Object, Some(0), 0.9),
            proposal([6.0, 6.0, 9.0, 9.0], ProposalKind::Object, Some(1), 0.9),
        ];
        let pairs = enumerate_pairs(&props);
        assert_eq!(pairs, vec![Pair { human: 0, object: 2, object_class: 1 }]);
    }

    #[test]
    fn raising_human_score_raises_its_detections() {
        let cfg = small_cfg();
        let (vocab, params) = setup(&cfg);
        let net = Network::new(&params, &cfg);
        let base = scene(two_by_three());
        let mut bumped = base.clone();
        bumped.proposals[0].score = 0.95;
        let a = detect(&net, &vocab, &base, InferenceMode::Full).unwrap();
        let b = detect(&net, &vocab, &bumped, InferenceMode::Full).unwrap();
        let key = |d: &Detection| (d.pair_index, d.verb);
        for da in a.iter().filter(|d| d.human_box == base.proposals[0].bbox) {
            let db = b.iter().find(|d| key(d) == key(da)).unwrap();
            assert!(db.score() > da.score());
        }
    }

    #[test]
    fn detections_serialize_with_expected_keys() {
        let cfg = small_cfg();
        let (vocab, params) = setup(&cfg);
        let net = Network::new(&params, &cfg);
        let dets = detect(&net, &vocab, &scene(two_by_three()), InferenceMode::Full).unwrap();
        let mut buf = Vec::new();
        write_detections(&dets[..1], &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        for key in ["image_id", "human_box", "object_box", "object_class", "verb", "score_R"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        for key in ["global", "pair", "relatedness", "det"] {
            assert!(v["score_components"].get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn detached_local_branch_writes_no_bank_gradient() {
        let cfg = small_cfg();
        let (_, params) = setup(&cfg);
        let net = Network::new(&params, &cfg);
        let image = Image::filled(16, 16, [0.3, 0.5, 0.7]);
        let s = scene(two_by_three());
        let fwd = net.forward(&image, &s.proposals, None).unwrap();
        let mut up = OutputGrads::zeros(&fwd);
        for row in &mut up.s_p {
            row.iter_mut().for_each(|v| *v = 0.3);
        }
        up.s_b.iter_mut().for_each(|v| *v = -0.2);
        let mut grads = params.zeros_like();
        net.backward(&image, &fwd, &up, &mut grads, None);
        assert!(grads.get(ParamId::Bank).iter().all(|g| *g == 0.0));
        assert!(grads.get(ParamId::PairW).iter().any(|g| *g != 0.0));

        let attached = ModelConfig { local_detached: false, ..cfg };
        let net = Network::new(&params, &attached);
        let mut grads = params.zeros_like();
        net.backward(&image, &fwd, &up, &mut grads, None);
        assert!(grads.get(ParamId::Bank).iter().any(|g| *g != 0.0));
    }

    proptest! {
        #[test]
        fn aggregate_is_row_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6),
            seed in any::<u64>(),
        ) {
            let mut shuffled = rows.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            prop_assert_eq!(aggregate_scores(&rows).unwrap().0, aggregate_scores(&shuffled).unwrap().0);
        }

        #[test]
        fn normalized_columns_sum_to_one(
            rows in prop::collection::vec(prop::collection::vec(-30.0f64..30.0, 4), 1..8),
        ) {
            let (norm, e) = normalize_pairs(&rows).unwrap();
            for a in 0..4 {
                let s: f64 = norm.iter().map(|r| r[a]).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            prop_assert!(e.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn fused_score_is_a_probability(
            g in -20.0f64..20.0, p in 0.0f64..=1.0, b in -20.0f64..20.0,
            sh in 0.0f64..=1.0, so in 0.0f64..=1.0, gamma in 0.1f64..5.0,
        ) {
            let f = fuse(Some(g), p, Some(b), sh, so, gamma);
            prop_assert!((0.0..=1.0).contains(&f.score));
        }

        #[test]
        fn detect_is_proposal_order_invariant(seed in any::<u64>()) {
            let cfg = small_cfg();
            let (vocab, params) = setup(&cfg);
            let net = Network::new(&params, &cfg);
            let base = scene(two_by_three());
            let mut shuffled = base.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.proposals.len()).rev() {
                shuffled.proposals.swap(i, rng.random_range(0..=i));
            }
            let key = |dets: Vec<Detection>| {
                let mut k: Vec<_> = dets
                    .iter()
                    .map(|d| (format!("{:?}{:?}", d.human_box, d.object_box), d.verb, d.score()))
                    .collect();
                k.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
                k
            };
            let a = key(detect(&net, &vocab, &base, InferenceMode::Full).unwrap());
            let b = key(detect(&net, &vocab, &shuffled, InferenceMode::Full).unwrap());
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(&x.0, &y.0);
                prop_assert_eq!(x.1, y.1);
                prop_assert!((x.2 - y.2).abs() < 1e-12);
            }
        }
    }
}
