use csilab_core::features::{build_dft_codebook, normalized_error};
use csilab_core::neural::{predict_topk, Head, MlpModel, TrainConfig};
use csilab_core::scene::{generate_channel, sample_scene, SceneConfig};
use csilab_core::tasks::{
    build_static_dataset, evaluate_static_with, run_dependence, DependenceTaskConfig, LinkConfig, StaticPredictor,
};

#[test]
fn test_sampled_scene_is_reproducible_and_channels_are_finite() {
    let cfg = SceneConfig::default();
    let a = sample_scene(&cfg, 42).unwrap();
    let b = sample_scene(&cfg, 42).unwrap();
    assert_eq!(a, b);
    let h = generate_channel(&a, "sbs", a.users[0].id, 0, 0).unwrap();
    assert_eq!(h.h.len(), 20);
    assert!(h.h.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    assert!(h.h.iter().any(|z| z.norm() > 0.0));
}

#[test]
fn test_best_codeword_has_zero_error() {
    let scene = sample_scene(&SceneConfig::default(), 3).unwrap();
    let h = generate_channel(&scene, "sbs", scene.users[0].id, 0, 0).unwrap().h;
    let cb = build_dft_codebook(20, 2);
    let g = cb.gains(&h).unwrap();
    let best = predict_topk(&g, 1).unwrap()[0];
    assert_eq!(normalized_error(&h, best, &cb).unwrap(), 0.0);
    for k in 0..cb.len() {
        let e = normalized_error(&h, k, &cb).unwrap();
        assert!((0.0..=1.0).contains(&e));
    }
}

#[test]
fn test_small_static_pipeline_beats_random() {
    let link = LinkConfig::default();
    let data = build_static_dataset(&link, 1500, 5).unwrap();
    let (train, test) = data.split(1200).unwrap();
    train.verify_disjoint(&test).unwrap();
    let mut m = MlpModel::new(&[train.feature_matrix().ncols(), 64, 20], Head::Softmax, 1).unwrap();
    let tc = TrainConfig {
        epochs: 15,
        seed: 2,
        ..Default::default()
    };
    m.train(&train.feature_matrix(), &train.labels(), None, &tc).unwrap();
    let cb = link.target_codebook().unwrap();
    let model = evaluate_static_with(&test, &cb, StaticPredictor::Model(&m)).unwrap();
    let random = evaluate_static_with(&test, &cb, StaticPredictor::Random { seed: 9 }).unwrap();
    let oracle = evaluate_static_with(&test, &cb, StaticPredictor::Oracle).unwrap();
    assert!(model.top1.mean() < random.top1.mean());
    assert_eq!(oracle.top1.mean(), 0.0);
}

#[test]
fn test_dependence_summary_respects_bounds() {
    let cfg = DependenceTaskConfig {
        link: LinkConfig::default(),
        source_oversampling: 1,
        ridge: 1e-9,
    };
    let rows = run_dependence(&cfg, &[200, 800], 4).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r.mi_bits >= 0.0 && r.mi_bits <= r.entropy_b_bits + 1e-12);
        assert!((0.0..=1.0).contains(&r.avg_cca));
    }
}
