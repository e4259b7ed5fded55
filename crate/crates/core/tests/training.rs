use ssg_core::autodiff::Init;
use ssg_core::eval::{evaluate, EchoScorer, ModelScorer};
use ssg_core::fixture::sg201_counts;
use ssg_core::graph::{EdgeKind, GeometricFeatures};
use ssg_core::model::{train_stage1, train_stage2, Checkpoint, Model, ModelConfig, ModelError, Prepared, Task};
use ssg_core::schema::{Dataset, Split};
use ssg_core::synth::{generate_dataset, SynthConfig};

fn synth(train: usize, val: usize, test: usize, seed: u64) -> Dataset {
    generate_dataset(&SynthConfig { train, val, test, seed, ..SynthConfig::default() }).unwrap()
}

fn config(d: &Dataset, epochs: usize) -> ModelConfig {
    let fp = GeometricFeatures::new(&d.catalog);
    ModelConfig { d_hidden: 12, epochs, seed: 5, ..ModelConfig::for_features(&fp) }
}

#[test]
fn single_frame_loss_descends() {
    let d = synth(1, 0, 0, 1);
    let fp = GeometricFeatures::new(&d.catalog);
    let out = train_stage1(&d, &fp, &ModelConfig { lr: 1e-2, ..config(&d, 30) }).unwrap();
    let steps = &out.history.steps;
    assert_eq!(steps.len(), 30);
    assert!(steps.last().unwrap().total < steps[0].total);
}

#[test]
fn logged_steps_satisfy_composite_identity() {
    let d = synth(20, 5, 0, 2);
    let fp = GeometricFeatures::new(&d.catalog);
    let cfg = config(&d, 3);
    let out = train_stage1(&d, &fp, &cfg).unwrap();
    assert_eq!(out.history.steps.len(), 3 * 3);
    for b in &out.history.steps {
        assert!((b.total - (b.lg + 0.6 * b.action + 0.001 * b.hand)).abs() < 1e-12);
        assert_eq!(b.lg, b.edge_exist + b.spatial);
        assert!(b.edge_exist >= 0.0 && b.spatial >= 0.0 && b.action >= 0.0 && b.hand >= 0.0);
    }
    let no_hand = train_stage1(&d, &fp, &ModelConfig { lambda_hand: 0.0, ..cfg }).unwrap();
    for b in &no_hand.history.steps {
        assert_eq!(b.total, b.lg + 0.6 * b.action);
    }
}

#[test]
fn overfits_one_frame() {
    let d = synth(1, 0, 0, 7);
    let fp = GeometricFeatures::new(&d.catalog);
    let cfg = ModelConfig { lr: 1e-2, lambda_action: 1.0, lambda_hand: 1.0, ..config(&d, 200) };
    let model = train_stage1(&d, &fp, &cfg).unwrap().model;
    let p = Prepared::new(&d.frames[0], &d.catalog, &fp).unwrap();
    let pred = model.predict(&p).unwrap();
    let gt_actions: Vec<usize> = p.graph.edges.iter().filter(|e| e.kind == EdgeKind::Action).map(|e| e.action_gt.unwrap()).collect();
    assert!(!gt_actions.is_empty());
    assert_eq!(pred.actions, gt_actions);
    let gt_hands: Vec<usize> = p.graph.nodes.iter().filter_map(|n| n.hand_gt).collect();
    assert_eq!(pred.hands, gt_hands);
}

#[test]
fn same_seed_same_checkpoint() {
    let d = synth(12, 4, 4, 3);
    let fp = GeometricFeatures::new(&d.catalog);
    let cfg = config(&d, 2);
    let a = Checkpoint::from_model(&train_stage1(&d, &fp, &cfg).unwrap().model).to_json();
    let b = Checkpoint::from_model(&train_stage1(&d, &fp, &cfg).unwrap().model).to_json();
    assert_eq!(a, b);
    let c = Checkpoint::from_model(&train_stage1(&d, &fp, &ModelConfig { seed: 6, ..cfg }).unwrap().model).to_json();
    assert_ne!(a, c);
}

#[test]
fn zero_lambdas_match_detached_heads() {
    let d = synth(16, 4, 0, 4);
    let fp = GeometricFeatures::new(&d.catalog);
    let base = ModelConfig { lambda_action: 0.0, lambda_hand: 0.0, ..config(&d, 3) };
    let with_heads = train_stage1(&d, &fp, &base).unwrap();
    let detached = train_stage1(&d, &fp, &ModelConfig { heads_detached: true, ..base }).unwrap();
    let lg = |h: &ssg_core::model::History| h.steps.iter().map(|s| s.lg.to_bits()).collect::<Vec<u64>>();
    assert_eq!(lg(&with_heads.history), lg(&detached.history));
    for (name, t) in detached.model.params.iter() {
        assert_eq!(with_heads.model.params.get(name), Some(t), "{name}");
    }
}

#[test]
fn empty_training_split_is_an_error() {
    let d = synth(0, 3, 0, 1);
    let fp = GeometricFeatures::new(&d.catalog);
    assert!(matches!(train_stage1(&d, &fp, &config(&d, 1)), Err(ModelError::EmptySplit(Split::Train))));
}

#[test]
fn decoder_widths() {
    let d = synth(6, 2, 2, 1);
    let fp = GeometricFeatures::new(&d.catalog);
    let s1 = train_stage1(&d, &fp, &config(&d, 1)).unwrap().model;
    let cvs = train_stage2(&s1, Task::Cvs, &d, &fp, &config(&d, 1)).unwrap().model;
    assert_eq!(cvs.params.get("decoder.w2").unwrap().cols(), 3);

    let fixture = sg201_counts();
    let ffp = GeometricFeatures::new(&fixture.catalog);
    let cfg = ModelConfig { d_hidden: 4, epochs: 0, ..ModelConfig::for_features(&ffp) };
    let m = Model::new(cfg.clone(), &fixture.catalog).unwrap();
    let t = train_stage2(&m, Task::Triplet, &fixture, &ffp, &cfg).unwrap().model;
    assert_eq!(t.params.get("decoder.w2").unwrap().cols(), 34);
    assert_eq!(t.task_labels.len(), 34);
}

#[test]
fn catalog_mismatch_is_rejected() {
    let d = synth(4, 0, 0, 1);
    let fp = GeometricFeatures::new(&d.catalog);
    let mut s1 = train_stage1(&d, &fp, &config(&d, 1)).unwrap().model;
    s1.catalog_hash = "0".repeat(64);
    assert!(matches!(train_stage2(&s1, Task::Cvs, &d, &fp, &config(&d, 1)), Err(ModelError::CatalogMismatch { .. })));
}

#[test]
fn stage2_improves_over_untrained_decoder() {
    let d = synth(60, 20, 20, 8);
    let fp = GeometricFeatures::new(&d.catalog);
    let cfg = ModelConfig { d_hidden: 16, epochs: 10, seed: 2, ..ModelConfig::for_features(&fp) };
    let s1 = train_stage1(&d, &fp, &cfg).unwrap().model;
    let s2 = train_stage2(&s1, Task::Cvs, &d, &fp, &cfg).unwrap();
    let best = s2.history.epochs.iter().filter_map(|e| e.val_map).fold(f64::NEG_INFINITY, f64::max);
    assert!(best > s2.initial_map.unwrap(), "{best} vs {:?}", s2.initial_map);
    assert!(s2.history.best_epoch > 0);
}

#[test]
fn evaluation_is_deterministic_and_echo_is_perfect() {
    let d = synth(10, 4, 6, 9);
    let fp = GeometricFeatures::new(&d.catalog);
    let cfg = config(&d, 2);
    let s1 = train_stage1(&d, &fp, &cfg).unwrap().model;
    let s2 = train_stage2(&s1, Task::Triplet, &d, &fp, &cfg).unwrap().model;
    let scorer = ModelScorer { model: &s2, features: &fp };
    let a = evaluate(&scorer, &d, Split::Test).unwrap();
    let b = evaluate(&scorer, &d, Split::Test).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    let reloaded = Checkpoint::from_json(&Checkpoint::from_model(&s2).to_json()).unwrap().into_model().unwrap();
    let c = evaluate(&ModelScorer { model: &reloaded, features: &fp }, &d, Split::Test).unwrap();
    assert_eq!(a, c);

    for task in [Task::Cvs, Task::Triplet] {
        let echo = evaluate(&EchoScorer::new(task, &d), &d, Split::Test).unwrap();
        assert_eq!(echo.map, Some(1.0));
    }
    let empty = synth(3, 0, 0, 1);
    assert!(evaluate(&EchoScorer::new(Task::Cvs, &empty), &empty, Split::Test).is_err());
}

#[test]
fn zero_init_mode_losses() {
    let d = synth(3, 0, 0, 1);
    let fp = GeometricFeatures::new(&d.catalog);
    let m = Model::new(ModelConfig { init: Init::Zeros, ..config(&d, 0) }, &d.catalog).unwrap();
    for f in &d.frames {
        let (a, h) = m.head_losses(&Prepared::new(f, &d.catalog, &fp).unwrap()).unwrap();
        assert!((a - 6f64.ln()).abs() < 1e-12 && (h - 3f64.ln()).abs() < 1e-12);
    }
}
