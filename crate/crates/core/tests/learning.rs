use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakhoi::data::{generate, GenSpec, Proposal, ProposalKind};
use weakhoi::encoder::{Image, ToyTextEncoder};
use weakhoi::learning::{
    gradcheck, loss_and_grads, train, Ablation, Checkpoint, GradcheckOptions, LossWeights,
    Objective, SceneLabels, TrainConfig,
};
use weakhoi::model::{init_params, Network};
use weakhoi::nn::ParamId;
use weakhoi::{BBox, KtnMode, ModelConfig, Vocabulary};

fn small_cfg(mode: KtnMode) -> ModelConfig {
    ModelConfig {
        dim: 6,
        patch: 4,
        image_width: 16,
        image_height: 16,
        roi_grid: 2,
        ktn_mode: mode,
        ..Default::default()
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let x1 = rng.random_range(0.0..10.0);
    let y1 = rng.random_range(0.0..10.0);
    let x2 = rng.random_range(x1 + 2.0..16.0);
    let y2 = rng.random_range(y1 + 2.0..16.0);
    BBox::new(x1, y1, x2, y2).unwrap()
}

fn random_scene(rng: &mut ChaCha8Rng, vocab: &Vocabulary) -> (Image, Vec<Proposal>, SceneLabels) {
    let data = (0..16 * 16 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    let image = Image::new(16, 16, data).unwrap();
    let mut proposals = Vec::new();
    for _ in 0..2 {
        proposals.push(Proposal { bbox: random_box(rng), kind: ProposalKind::Human, class: None, score: 0.9 });
    }
    for _ in 0..rng.random_range(1..=2) {
        let class = rng.random_range(0..vocab.num_objects());
        proposals.push(Proposal { bbox: random_box(rng), kind: ProposalKind::Object, class: Some(class), score: 0.8 });
    }
    let objects: Vec<usize> = proposals.iter().filter_map(|p| p.class).collect();
    let hoi = vocab.verbs_for_object(objects[0]).next().unwrap().1;
    let combo = vocab.combo(hoi).unwrap();
    let labels = SceneLabels {
        hois: vec![hoi],
        verbs: BTreeSet::from([combo.verb_id]),
        objects: BTreeSet::from([combo.object_id]),
    };
    (image, proposals, labels)
}

fn setup(cfg: &ModelConfig, seed: u64) -> (Vocabulary, weakhoi::nn::ParameterStore) {
    let vocab = Vocabulary::synthetic(3, 2, 4).unwrap();
    let params = init_params(cfg, &vocab, &ToyTextEncoder::new(cfg.dim), seed).unwrap();
    (vocab, params)
}

#[test]
fn gradients_match_finite_differences_in_every_mode() {
    let objective = Objective {
        weights: LossWeights { reg: 1.0, ..Default::default() },
        top_k: 1,
        src_active: true,
    };
    for (i, mode) in [KtnMode::Softmax, KtnMode::Uniform, KtnMode::Sigmoid, KtnMode::UnionOnly, KtnMode::Off]
        .into_iter()
        .enumerate()
    {
        for detached in [true, false] {
            let cfg = ModelConfig { local_detached: detached, ..small_cfg(mode) };
            let (vocab, params) = setup(&cfg, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(40 + i as u64);
            let (image, proposals, labels) = random_scene(&mut rng, &vocab);
            let report =
                gradcheck(&cfg, &params, &image, &proposals, &labels, &objective, &GradcheckOptions::default())
                    .unwrap();
            assert!(report.passed, "{mode:?} detached={detached}: {} at {:e}", report.worst, report.max_rel_error);
            assert_eq!(report.tensors.len(), ParamId::ALL.len());
        }
    }
}

#[test]
fn corrupted_gradient_is_caught_and_named() {
    let cfg = small_cfg(KtnMode::Softmax);
    let (vocab, params) = setup(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (image, proposals, labels) = random_scene(&mut rng, &vocab);
    let opts = GradcheckOptions { corrupt: Some(ParamId::EmbedW1), ..Default::default() };
    let report = gradcheck(&cfg, &params, &image, &proposals, &labels, &Objective::default(), &opts).unwrap();
    assert!(!report.passed);
    assert_eq!(report.worst, "embed.w1");
}

#[test]
fn detached_bank_gets_no_local_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for detached in [true, false] {
        let cfg = ModelConfig { local_detached: detached, ..small_cfg(KtnMode::Softmax) };
        let (vocab, params) = setup(&cfg, 1);
        let (image, proposals, labels) = random_scene(&mut rng, &vocab);
        let objective = Objective {
            weights: LossWeights { global: 0.0, ..Default::default() },
            ..Default::default()
        };
        let mut grads = params.zeros_like();
        loss_and_grads(&Network::new(&params, &cfg), &image, &proposals, &labels, &objective, &mut grads, None)
            .unwrap();
        let bank = grads.get(ParamId::Bank);
        if detached {
            assert!(bank.iter().all(|g| *g == 0.0));
        } else {
            assert!(bank.iter().any(|g| *g != 0.0));
        }
    }
}

#[test]
fn zero_parameters_give_closed_form_loss() {
    let cfg = small_cfg(KtnMode::Softmax);
    let (vocab, params) = setup(&cfg, 0);
    let zero = params.zeros_like();
    let image = Image::filled(16, 16, [0.5; 3]);
    let proposals = vec![
        Proposal { bbox: BBox::new(0.0, 0.0, 6.0, 8.0).unwrap(), kind: ProposalKind::Human, class: None, score: 1.0 },
        Proposal { bbox: BBox::new(8.0, 8.0, 14.0, 14.0).unwrap(), kind: ProposalKind::Object, class: Some(0), score: 1.0 },
    ];
    let hoi = vocab.verbs_for_object(0).next().unwrap().1;
    let c = vocab.combo(hoi).unwrap();
    let labels = SceneLabels { hois: vec![hoi], verbs: BTreeSet::from([c.verb_id]), objects: BTreeSet::from([0]) };
    let mut grads = zero.zeros_like();
    let loss = loss_and_grads(&Network::new(&zero, &cfg), &image, &proposals, &labels, &Objective::default(), &mut grads, None)
        .unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((loss.global - 4.0 * ln2).abs() < 1e-12);
    assert!((loss.pairwise - 3.0 * ln2).abs() < 1e-12);
    assert!((loss.relatedness - ln2).abs() < 1e-12);
    assert!((loss.total - 8.0 * ln2).abs() < 1e-12);
}

fn toy_data(seed: u64, images: usize) -> (Vocabulary, weakhoi::data::Dataset) {
    generate(&GenSpec { seed, images, ..Default::default() }).unwrap()
}

fn toy_model() -> ModelConfig {
    ModelConfig { dim: 12, roi_grid: 2, ..Default::default() }
}

#[test]
fn zero_iterations_leave_parameters_unchanged() {
    let (vocab, data) = toy_data(1, 3);
    let cfg = toy_model();
    let params = init_params(&cfg, &vocab, &ToyTextEncoder::new(cfg.dim), 5).unwrap();
    let tc = TrainConfig { iterations: 0, ..Default::default() };
    let out = train(&cfg, &tc, &vocab, &data, params.clone()).unwrap();
    assert_eq!(out.params, params);
    assert!(out.metrics.is_empty());
}

#[test]
fn training_replays_exactly_and_checkpoints_round_trip() {
    let (vocab, data) = toy_data(2, 5);
    let cfg = toy_model();
    let params = init_params(&cfg, &vocab, &ToyTextEncoder::new(cfg.dim), 5).unwrap();
    let tc = TrainConfig { iterations: 12, batch_size: 2, seed: 4, ..Default::default() };
    let a = train(&cfg, &tc, &vocab, &data, params.clone()).unwrap();
    let b = train(&cfg, &tc, &vocab, &data, params).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.metrics.len(), 12);
    assert!(a.metrics[..2].iter().all(|m| m.loss.relatedness == 0.0));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    Checkpoint::new(&cfg, &tc, 12, &vocab, &a.params).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.params(&vocab).unwrap(), a.params);
    let other = Vocabulary::synthetic(6, 5, 11).unwrap();
    assert!(loaded.params(&other).is_err());
}

#[test]
fn training_loss_decreases_on_a_toy_set() {
    let mut ratios = Vec::new();
    for seed in 0..3 {
        let (vocab, data) = toy_data(10 + seed, 20);
        let cfg = toy_model();
        let params = init_params(&cfg, &vocab, &ToyTextEncoder::new(cfg.dim), seed).unwrap();
        let tc = TrainConfig { iterations: 300, seed, warmup_frac: 0.0, ..Default::default() };
        let out = train(&cfg, &tc, &vocab, &data, params).unwrap();
        let mean = |rows: &[weakhoi::learning::MetricRow]| rows.iter().map(|r| r.loss.total).sum::<f64>() / rows.len() as f64;
        ratios.push(mean(&out.metrics[280..]) / mean(&out.metrics[..20]));
    }
    ratios.sort_by(f64::total_cmp);
    assert!(ratios[1] < 1.0, "median end/start loss ratio {}", ratios[1]);
}

#[test]
fn ablation_presets() {
    let mut m = ModelConfig::default();
    let mut t = TrainConfig::default();
    Ablation::NoSrc.apply(&mut m, &mut t);
    assert_eq!(t.weights.relatedness, 0.0);
    assert!(!m.use_relatedness && m.use_global);
    let mut m = ModelConfig::default();
    let mut t = TrainConfig::default();
    Ablation::Baseline.apply(&mut m, &mut t);
    assert_eq!(m.ktn_mode, KtnMode::Off);
    assert!(!m.use_global);
}

#[test]
fn invalid_train_configs_are_rejected() {
    for tc in [
        TrainConfig { lr_heads: 0.0, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { warmup_frac: 1.0, ..Default::default() },
        TrainConfig { top_k: 0, ..Default::default() },
    ] {
        assert!(tc.validate().is_err());
    }
}
