//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Exits non-zero if any
//! criterion fails, except those listed in `KNOWN_FAILURES`, which are
//! still reported as FAIL.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssg_core::autodiff::Init;
use ssg_core::eval::{average_precision, evaluate, ModelScorer};
use ssg_core::geometry::BBox;
use ssg_core::graph::{build_candidates, EdgeKind, GeometricFeatures};
use ssg_core::model::{train_stage1, train_stage2, History, Model, ModelConfig, Prepared, Task};
use ssg_core::schema::{Catalog, Dataset, FrameAnnotation, Kind, ObjectAnn, Split, TripletAnn};
use ssg_core::synth::{generate_dataset, synth_catalog, SynthConfig};

/// Criteria expected to fail; see the README for the measured numbers.
const KNOWN_FAILURES: &[u32] = &[8];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn ssg(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ssg")).args(args).output().expect("run ssg");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn synth(train: usize, val: usize, test: usize, sigma: f64, seed: u64) -> Dataset {
    generate_dataset(&SynthConfig { train, val, test, sigma, seed, ..SynthConfig::default() }).unwrap()
}

// ---- 1 ----

fn schema_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, _) = ssg(&["synth", "--counts-fixture", "--out", out]);
    if code != 0 {
        return outcome(false, format!("synth exited {code}"));
    }
    let ds = dir.path().join("dataset.json");
    let t = Instant::now();
    let (code, csv) = ssg(&["stats", "--dataset", ds.to_str().unwrap(), "--csv"]);
    let secs = t.elapsed().as_secs_f64();
    let expected: [(&str, [u64; 16]); 4] = [
        ("train", [1212, 686, 997, 128, 95, 41, 3, 601, 879, 72, 122, 41, 233, 986, 842, 122]),
        ("val", [409, 202, 347, 48, 36, 11, 0, 168, 308, 12, 44, 14, 98, 311, 268, 65]),
        ("test", [312, 172, 254, 43, 11, 17, 1, 147, 242, 11, 41, 5, 52, 246, 218, 34]),
        ("total", [1933, 1060, 1598, 219, 142, 69, 4, 916, 1429, 95, 207, 60, 383, 1543, 1328, 221]),
    ];
    let mut mismatches = 0;
    for (split, row) in expected {
        let line = csv.lines().find(|l| l.starts_with(&format!("{split},")));
        let got: Vec<u64> = line.map(|l| l.split(',').skip(1).filter_map(|v| v.parse().ok()).collect()).unwrap_or_default();
        mismatches += row.iter().zip(got.iter().chain(std::iter::repeat(&u64::MAX))).filter(|(a, b)| a != b).count();
    }
    outcome(code == 0 && mismatches == 0 && secs < 1.0, format!("{mismatches} mismatched counts, stats took {secs:.3}s"))
}

// ---- 2 ----

fn random_frame(rng: &mut ChaCha8Rng, cat: &Catalog, i: usize) -> FrameAnnotation {
    let (w, h) = (640.0, 480.0);
    let n = rng.random_range(0..=8);
    let objects = (0..n)
        .map(|k| {
            let kind = if rng.random_bool(0.4) { Kind::Tool } else { Kind::Anatomy };
            let bw = rng.random_range(5.0..200.0);
            let bh = rng.random_range(5.0..200.0);
            let bbox = BBox { x: rng.random_range(0.0..w - bw), y: rng.random_range(0.0..h - bh), w: bw, h: bh };
            ObjectAnn {
                id: format!("o{k}"),
                kind,
                class_index: rng.random_range(0..cat.classes(kind).len()),
                bbox,
                hand: (kind == Kind::Tool).then(|| rng.random_range(0..cat.hands.len())),
            }
        })
        .collect();
    FrameAnnotation { frame_id: format!("r{i}"), video_id: "v".into(), width: w, height: h, objects, triplets: vec![], cvs: None }
}

fn action_edge_exactness() -> Outcome {
    let cat = synth_catalog();
    let fp = GeometricFeatures::new(&cat);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    let mut edges = 0;
    for i in 0..1000 {
        let f = random_frame(&mut rng, &cat, i);
        let g = build_candidates(&f, &cat, &fp).unwrap();
        let got: BTreeSet<(String, String)> = g
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Action)
            .map(|e| (g.nodes[e.src].obj_id.clone(), g.nodes[e.dst].obj_id.clone()))
            .collect();
        let n_action = g.edges.iter().filter(|e| e.kind == EdgeKind::Action).count();
        let mut want = BTreeSet::new();
        for a in &f.objects {
            for b in &f.objects {
                if a.kind == Kind::Tool && b.kind == Kind::Anatomy {
                    want.insert((a.id.clone(), b.id.clone()));
                }
            }
        }
        edges += want.len();
        if got != want || n_action != want.len() {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations} violating frames out of 1000 ({edges} expected action edges)"))
}

// ---- 3 ----

fn composite_identity() -> Outcome {
    let d = synth(40, 10, 0, 0.0, 11);
    let fp = GeometricFeatures::new(&d.catalog);
    let cfg = ModelConfig { epochs: 5, seed: 11, ..ModelConfig::for_features(&fp) };
    let h = train_stage1(&d, &fp, &cfg).unwrap().history;
    let worst = h
        .steps
        .iter()
        .map(|s| (s.total - (s.lg + 0.6 * s.action + 0.001 * s.hand)).abs())
        .fold(0.0, f64::max);
    outcome(!h.steps.is_empty() && worst < 1e-12, format!("{} steps, max residual {worst:.3e}", h.steps.len()))
}

// ---- 4 ----

fn obj(id: &str, kind: Kind, class_index: usize, b: [f64; 4], hand: Option<usize>) -> ObjectAnn {
    ObjectAnn { id: id.into(), kind, class_index, bbox: BBox { x: b[0], y: b[1], w: b[2], h: b[3] }, hand }
}

/// One tool and three anatomies: four nodes and three tool→anatomy edges.
fn four_node_frame() -> FrameAnnotation {
    FrameAnnotation {
        frame_id: "g0".into(),
        video_id: "v".into(),
        width: 200.0,
        height: 100.0,
        objects: vec![
            obj("t0", Kind::Tool, 0, [40.0, 20.0, 40.0, 30.0], Some(1)),
            obj("a0", Kind::Anatomy, 0, [10.0, 10.0, 50.0, 40.0], None),
            obj("a1", Kind::Anatomy, 3, [70.0, 30.0, 60.0, 50.0], None),
            obj("a2", Kind::Anatomy, 4, [150.0, 5.0, 40.0, 40.0], None),
        ],
        triplets: vec![TripletAnn { tool: "t0".into(), action: 0, target: Some("a0".into()) }],
        cvs: Some([true, false, true]),
    }
}

fn gradient_check() -> Outcome {
    let t = Instant::now();
    let cat = synth_catalog();
    let fp = GeometricFeatures::new(&cat);
    let frame = four_node_frame();
    let p = Prepared::new(&frame, &cat, &fp).unwrap().with_task_targets(Some(vec![1.0, 0.0, 1.0]));
    let n_action = p.graph.edges.iter().filter(|e| e.kind == EdgeKind::Action).count();
    let mut model = Model::new(ModelConfig { d_hidden: 4, seed: 3, ..ModelConfig::for_features(&fp) }, &cat).unwrap();
    model.attach_decoder(Task::Cvs, vec!["c1".into(), "c2".into(), "c3".into()], vec![]).unwrap();
    let (_, grads) = model.objective_and_grads(&p).unwrap();

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut coords = 0;
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let mut probe = model.clone();
    for name in &names {
        let base = model.params.get(name).unwrap().clone();
        for i in 0..base.len() {
            let mut eval_at = |delta: f64| {
                let mut v = base.clone();
                v.data[i] += delta;
                probe.params.set(name, v).unwrap();
                probe.objective_and_grads(&p).unwrap().0
            };
            let fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
            let a = grads.get(name).map_or(0.0, |g| g.data[i]);
            worst = worst.max((a - fd).abs() / (a.abs() + fd.abs()).max(1e-10));
            coords += 1;
        }
        probe.params.set(name, base).unwrap();
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        n_action == 3 && p.graph.nodes.len() == 4 && worst < 1e-4 && secs < 30.0,
        format!("{coords} coordinates, max rel err {worst:.2e}, {secs:.2}s"),
    )
}

// ---- 5 ----

fn init_loss_sanity() -> Outcome {
    let d = synth(20, 0, 0, 0.0, 5);
    let fp = GeometricFeatures::new(&d.catalog);
    let m = Model::new(ModelConfig { init: Init::Zeros, ..ModelConfig::for_features(&fp) }, &d.catalog).unwrap();
    let (mut a, mut hnd) = (0.0, 0.0);
    for f in &d.frames {
        let (la, lh) = m.head_losses(&Prepared::new(f, &d.catalog, &fp).unwrap()).unwrap();
        a += la;
        hnd += lh;
    }
    let n = d.frames.len() as f64;
    let (ea, eh) = ((a / n - 6f64.ln()).abs(), (hnd / n - 3f64.ln()).abs());
    outcome(ea < 1e-6 && eh < 1e-6, format!("|action - ln6| = {ea:.2e}, |hand - ln3| = {eh:.2e}"))
}

// ---- 6 ----

/// AP from its definition: rank by descending score (earlier index first on
/// ties), then average precision@rank over positives.
fn brute_force_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n = scores.len();
    let rank_of = |i: usize| (0..n).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count() + 1;
    let mut ranked: Vec<(usize, usize)> = (0..n).filter(|&i| labels[i]).map(|i| (rank_of(i), i)).collect();
    if ranked.is_empty() {
        return None;
    }
    ranked.sort();
    let mut sum = 0.0;
    for &(rank, i) in &ranked {
        let hits = (0..n).filter(|&j| labels[j] && rank_of(j) <= rank_of(i)).count();
        sum += hits as f64 / rank as f64;
    }
    Some(sum / ranked.len() as f64)
}

fn ap_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..500 {
        let n = rng.random_range(1..=8);
        let coarse = rng.random_bool(0.5);
        let scores: Vec<f64> =
            (0..n).map(|_| if coarse { rng.random_range(0..3) as f64 / 2.0 } else { rng.random::<f64>() }).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if average_precision(&scores, &labels) != brute_force_ap(&scores, &labels) {
            mismatches += 1;
        }
    }
    let worked = average_precision(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
    let err = (worked - 5.0 / 6.0).abs();
    outcome(mismatches == 0 && err < 1e-9, format!("{mismatches}/500 mismatches, worked case {worked:.10}"))
}

// ---- 7 ----

fn test_map(task: Task, s1: &Model, d: &Dataset, fp: &GeometricFeatures, cfg: &ModelConfig) -> f64 {
    let m = train_stage2(s1, task, d, fp, cfg).unwrap().model;
    evaluate(&ModelScorer { model: &m, features: fp }, d, Split::Test).unwrap().map.unwrap()
}

fn learnability() -> Outcome {
    let t = Instant::now();
    let d = synth(200, 50, 50, 0.0, 1);
    let fp = GeometricFeatures::new(&d.catalog);
    let cfg = ModelConfig { seed: 1, ..ModelConfig::for_features(&fp) };
    let s1 = train_stage1(&d, &fp, &cfg).unwrap().model;
    let trip = test_map(Task::Triplet, &s1, &d, &fp, &cfg);
    let cvs = test_map(Task::Cvs, &s1, &d, &fp, &cfg);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        cfg.epochs <= 50 && trip >= 0.90 && cvs >= 0.90 && secs < 300.0,
        format!("triplet mAP {trip:.4}, CVS mAP {cvs:.4}, {} epochs, {secs:.1}s", cfg.epochs),
    )
}

// ---- 8 ----

fn ablation_direction() -> Outcome {
    let variants = [("spatial-only", 0.0, 0.0), ("+action", 0.6, 0.0), ("full", 0.6, 0.001)];
    let seeds = [1u64, 2, 3];
    let runs: Vec<(usize, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = variants
            .iter()
            .enumerate()
            .flat_map(|(vi, &(_, la, lh))| {
                seeds.iter().map(move |&seed| {
                    s.spawn(move || {
                        let d = synth(200, 50, 50, 0.1, seed);
                        let fp = GeometricFeatures::new(&d.catalog);
                        let cfg = ModelConfig { seed, lambda_action: la, lambda_hand: lh, ..ModelConfig::for_features(&fp) };
                        let s1 = train_stage1(&d, &fp, &cfg).unwrap().model;
                        (vi, test_map(Task::Triplet, &s1, &d, &fp, &cfg))
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mean = |vi: usize| runs.iter().filter(|r| r.0 == vi).map(|r| r.1).sum::<f64>() / seeds.len() as f64;
    let (sp, sae, full) = (mean(0), mean(1), mean(2));
    let pass = sp <= sae && sae <= full && full - sp >= 0.02;
    let per: Vec<String> = variants.iter().enumerate().map(|(vi, v)| format!("{} {:.4}", v.0, mean(vi))).collect();
    outcome(pass, format!("mean test triplet mAP: {}; full - spatial-only = {:+.4}", per.join(", "), full - sp))
}

// ---- 9 ----

fn run_pipeline(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let d = dir.to_str().unwrap();
    let ds = dir.join("dataset.json");
    let ds = ds.to_str().unwrap();
    let model = format!("{d}/stage2_triplet.json");
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth", "--train", "30", "--val", "10", "--test", "10", "--sigma", "0.1", "--seed", "4", "--out", d],
        vec!["train", "--stage", "1", "--dataset", ds, "--epochs", "3", "--seed", "4", "--out", d],
        vec!["train", "--stage", "2", "--task", "triplet", "--dataset", ds, "--epochs", "3", "--seed", "4", "--out", d],
        vec!["eval", "--task", "triplet", "--model", &model, "--dataset", ds, "--out", d],
    ];
    for s in &steps {
        let (code, _) = ssg(s);
        if code != 0 {
            return Err(format!("`ssg {}` exited {code}", s[0]));
        }
    }
    let files = ["dataset.json", "stage1.json", "stage1_history.json", "stage2_triplet.json", "metrics_triplet_test.csv", "summary_triplet_test.json"];
    files.iter().map(|f| std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"))).collect()
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (run_pipeline(a.path()), run_pipeline(b.path())) {
        (Ok(x), Ok(y)) => {
            let differing = x.iter().zip(&y).filter(|(p, q)| p != q).count();
            outcome(differing == 0, format!("{} artifacts compared across two runs, {differing} differ", x.len()))
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

// ---- 10 ----

fn baseline_reduction() -> Outcome {
    let d = synth(40, 10, 0, 0.1, 12);
    let fp = GeometricFeatures::new(&d.catalog);
    let base = ModelConfig { lambda_action: 0.0, lambda_hand: 0.0, epochs: 8, seed: 12, ..ModelConfig::for_features(&fp) };
    let bits = |h: &History| h.steps.iter().map(|s| s.lg.to_bits()).collect::<Vec<u64>>();
    let zero = train_stage1(&d, &fp, &base).unwrap();
    let detached = train_stage1(&d, &fp, &ModelConfig { heads_detached: true, ..base }).unwrap();
    let (x, y) = (bits(&zero.history), bits(&detached.history));
    let same = x == y;
    let heads = zero.model.params.names().filter(|n| n.starts_with("action") || n.starts_with("hand")).count();
    outcome(
        same && !x.is_empty() && heads > 0 && zero.model.params.len() > detached.model.params.len(),
        format!("{} logged L_LG values, identical: {same}", x.len()),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let checks: [(u32, &str, Check); 10] = [
        (1, "schema fidelity", schema_fidelity),
        (2, "action-edge exactness", action_edge_exactness),
        (3, "composite loss identity", composite_identity),
        (4, "gradient correctness", gradient_check),
        (5, "loss sanity at init", init_loss_sanity),
        (6, "AP oracle equivalence", ap_oracle),
        (7, "end-to-end learnability", learnability),
        (8, "ablation direction", ablation_direction),
        (9, "determinism", determinism),
        (10, "baseline reduction", baseline_reduction),
    ];
    let filter: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut unexpected = 0;
    for (id, name, check) in checks {
        if filter.as_ref().is_some_and(|f| !f.contains(&id)) {
            continue;
        }
        let o = check();
        let known = KNOWN_FAILURES.contains(&id);
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && known { " (known failure)" } else { "" };
        println!("{tag} [{id}] {name}: {}{note}", o.detail);
        if !o.pass && !known {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criterion(s) failed");
        std::process::exit(1);
    }
}
