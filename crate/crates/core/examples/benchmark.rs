//! Train both stages on the synthetic benchmark and report test mAP.
//!
//! cargo run --release -p ssg-core --example benchmark -- [sigma] [seed] [lambda_action] [lambda_hand] [lr] [epochs] [d_hidden] [batch]

use std::time::Instant;

use ssg_core::eval::{evaluate, ModelScorer};
use ssg_core::graph::GeometricFeatures;
use ssg_core::model::{train_stage1, train_stage2, ModelConfig, Task};
use ssg_core::schema::Split;
use ssg_core::synth::{generate_dataset, SynthConfig};

fn main() {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("number")).collect();
    let get = |i: usize, d: f64| args.get(i).copied().unwrap_or(d);
    let sigma = get(0, 0.0);
    let seed = get(1, 1.0) as u64;
    let d = generate_dataset(&SynthConfig { sigma, seed, ..SynthConfig::default() }).expect("synth");
    let fp = GeometricFeatures::new(&d.catalog);
    let cfg = ModelConfig {
        seed,
        lambda_action: get(2, 0.6),
        lambda_hand: get(3, 0.001),
        lr: get(4, 1e-3),
        epochs: get(5, 50.0) as usize,
        d_hidden: get(6, 32.0) as usize,
        batch_size: get(7, 8.0) as usize,
        ..ModelConfig::for_features(&fp)
    };
    let t0 = Instant::now();
    let s1 = train_stage1(&d, &fp, &cfg).expect("stage 1");
    println!("stage1 {:.1}s best epoch {} val {:?}", t0.elapsed().as_secs_f64(), s1.history.best_epoch, s1.history.epochs.last().and_then(|e| e.val));
    {
        use ssg_core::eval::map_multilabel;
        use ssg_core::graph::EdgeKind;
        use ssg_core::model::Prepared;
        use ssg_core::schema::{frame_triplet_labels, triplet_vocabulary, TripletLabel};
        let vocab = triplet_vocabulary(&d);
        let null = d.catalog.null_action().unwrap();
        let (mut sc, mut lb) = (Vec::new(), Vec::new());
        let (mut ok, mut n) = (0, 0);
        for f in d.split_frames(Split::Test) {
            let p = Prepared::new(f, &d.catalog, &fp).unwrap();
            let pred = s1.model.predict(&p).unwrap();
            let mut got = std::collections::BTreeSet::new();
            let acts: Vec<_> = p.graph.edges.iter().filter(|e| e.kind == EdgeKind::Action).collect();
            for (e, &a) in acts.iter().zip(&pred.actions) {
                n += 1;
                if Some(a) == e.action_gt { ok += 1; }
            }
            for (ti, tn) in p.graph.nodes.iter().enumerate() {
                if tn.kind != ssg_core::schema::Kind::Tool { continue; }
                let mut any = false;
                for (e, &a) in acts.iter().zip(&pred.actions) {
                    if e.src == ti && a != null { any = true; got.insert(TripletLabel { tool: tn.class_index, action: a, target: Some(p.graph.nodes[e.dst].class_index) }); }
                }
                if !any { got.insert(TripletLabel { tool: tn.class_index, action: null, target: None }); }
            }
            let truth = frame_triplet_labels(f);
            sc.push(vocab.iter().map(|l| if got.contains(l) { 1.0 } else { 0.0 }).collect::<Vec<f64>>());
            lb.push(vocab.iter().map(|l| truth.contains(l)).collect::<Vec<bool>>());
        }
        let names: Vec<String> = vocab.iter().map(|l| l.display(&d.catalog)).collect();
        let r = map_multilabel(&sc, &lb, &names).unwrap();
        println!("action-edge accuracy {ok}/{n}; triplets composed from edge predictions: test mAP {:.4}", r.map.unwrap());
    }
    for task in [Task::Triplet, Task::Cvs] {
        let t = Instant::now();
        let s2 = train_stage2(&s1.model, task, &d, &fp, &cfg).expect("stage 2");
        let r = evaluate(&ModelScorer { model: &s2.model, features: &fp }, &d, Split::Test).expect("eval");
        let tr = evaluate(&ModelScorer { model: &s2.model, features: &fp }, &d, Split::Train).expect("eval");
        println!("{task}: {:.1}s best epoch {} train mAP {:.4} test mAP {:.4}", t.elapsed().as_secs_f64(), s2.history.best_epoch, tr.map.unwrap_or(f64::NAN), r.map.unwrap_or(f64::NAN));
        if std::env::var_os("VERBOSE").is_some() {
            for (a, b) in r.labels.iter().zip(&tr.labels) {
                println!("  {:40} test {:?} ({}) train {:?} ({})", a.label, a.ap.map(|x| (x * 1000.0).round() / 1000.0), a.positives, b.ap.map(|x| (x * 1000.0).round() / 1000.0), b.positives);
            }
        }
    }
}
