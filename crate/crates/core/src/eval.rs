//! Non-interpolated average precision, multi-label mAP and metric reports.

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::graph::FeatureProvider;
use crate::model::{task_targets, Model, ModelError, Prepared, Task};
use crate::schema::{Dataset, FrameAnnotation, Split, TripletLabel, CVS_CRITERIA};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0} split has no labelled frames")]
    EmptySplit(Split),
    #[error("scorer catalog {found} does not match dataset catalog {expected}")]
    CatalogMismatch { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Mean of precision at each positive's rank, ranking by descending score
/// with ties kept in input order. `None` when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelMetric {
    pub label: String,
    /// `None` for labels without positives; those are left out of the mean.
    pub ap: Option<f64>,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub task: String,
    pub split: String,
    pub frames: usize,
    pub labels: Vec<LabelMetric>,
    pub map: Option<f64>,
    pub excluded: Vec<String>,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,ap,positives\n");
        for l in &self.labels {
            let ap = l.ap.map(|a| format!("{a:.6}")).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", l.label, ap, l.positives));
        }
        out
    }

    pub fn summary_json(&self, seed: u64, config_hash: &str) -> String {
        let v = json!({
            "map": self.map,
            "task": self.task,
            "split": self.split,
            "frames": self.frames,
            "seed": seed,
            "config_hash": config_hash,
            "excluded": self.excluded,
        });
        serde_json::to_string_pretty(&v).expect("json") + "\n"
    }
}

/// Per-label AP over columns of a frames × labels matrix, and their mean over defined labels.
pub fn map_multilabel(scores: &[Vec<f64>], labels: &[Vec<bool>], names: &[String]) -> Result<MetricsReport, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Shape(format!("{} score rows, {} label rows", scores.len(), labels.len())));
    }
    let k = names.len();
    for (i, (s, l)) in scores.iter().zip(labels).enumerate() {
        if s.len() != k || l.len() != k {
            return Err(EvalError::Shape(format!("row {i}: {} scores, {} labels, {k} names", s.len(), l.len())));
        }
    }
    let mut per = Vec::with_capacity(k);
    let (mut sum, mut defined) = (0.0, 0usize);
    for (c, name) in names.iter().enumerate() {
        let col_s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let col_l: Vec<bool> = labels.iter().map(|r| r[c]).collect();
        let ap = average_precision(&col_s, &col_l);
        if let Some(a) = ap {
            sum += a;
            defined += 1;
        }
        per.push(LabelMetric {
            label: name.clone(),
            ap,
            positives: col_l.iter().filter(|&&b| b).count(),
        });
    }
    Ok(MetricsReport {
        task: String::new(),
        split: String::new(),
        frames: scores.len(),
        excluded: per.iter().filter(|l| l.ap.is_none()).map(|l| l.label.clone()).collect(),
        labels: per,
        map: (defined > 0).then(|| sum / defined as f64),
    })
}

/// Anything that scores frames for a task.
pub trait Scorer {
    fn task(&self) -> Task;
    fn label_names(&self) -> Vec<String>;
    /// Labels used for ground truth; the triplet vocabulary for triplet tasks.
    fn vocabulary(&self) -> &[TripletLabel];
    fn catalog_hash(&self) -> Option<&str> {
        None
    }
    fn score(&self, frame: &FrameAnnotation, dataset: &Dataset) -> Result<Vec<f64>, EvalError>;
}

/// Returns the ground-truth labels as scores.
pub struct EchoScorer {
    pub task: Task,
    pub vocabulary: Vec<TripletLabel>,
    pub names: Vec<String>,
}

impl EchoScorer {
    pub fn new(task: Task, dataset: &Dataset) -> Self {
        let vocabulary = match task {
            Task::Cvs => Vec::new(),
            Task::Triplet => crate::schema::triplet_vocabulary(dataset),
        };
        EchoScorer { names: label_names(task, &vocabulary, dataset), task, vocabulary }
    }
}

pub fn label_names(task: Task, vocabulary: &[TripletLabel], dataset: &Dataset) -> Vec<String> {
    match task {
        Task::Cvs => CVS_CRITERIA.iter().map(|s| s.to_string()).collect(),
        Task::Triplet => vocabulary.iter().map(|l| l.display(&dataset.catalog)).collect(),
    }
}

impl Scorer for EchoScorer {
    fn task(&self) -> Task {
        self.task
    }
    fn label_names(&self) -> Vec<String> {
        self.names.clone()
    }
    fn vocabulary(&self) -> &[TripletLabel] {
        &self.vocabulary
    }
    fn score(&self, frame: &FrameAnnotation, _: &Dataset) -> Result<Vec<f64>, EvalError> {
        task_targets(frame, self.task, &self.vocabulary)
            .ok_or_else(|| EvalError::Shape(format!("frame {} has no {} labels", frame.frame_id, self.task)))
    }
}

/// A trained stage-2 model plus the feature provider it was trained with.
pub struct ModelScorer<'a> {
    pub model: &'a Model,
    pub features: &'a dyn FeatureProvider,
}

impl Scorer for ModelScorer<'_> {
    fn task(&self) -> Task {
        self.model.task.unwrap_or(Task::Cvs)
    }
    fn label_names(&self) -> Vec<String> {
        self.model.task_labels.clone()
    }
    fn vocabulary(&self) -> &[TripletLabel] {
        &self.model.vocabulary
    }
    fn catalog_hash(&self) -> Option<&str> {
        Some(&self.model.catalog_hash)
    }
    fn score(&self, frame: &FrameAnnotation, dataset: &Dataset) -> Result<Vec<f64>, EvalError> {
        let p = Prepared::new(frame, &dataset.catalog, self.features)?;
        let pred = self.model.predict(&p)?;
        pred.task
            .ok_or_else(|| EvalError::Model(ModelError::Checkpoint("model has no task decoder".into())))
    }
}

/// Score every labelled frame of a split and compute per-label AP and mAP.
pub fn evaluate(scorer: &dyn Scorer, dataset: &Dataset, split: Split) -> Result<MetricsReport, EvalError> {
    if let Some(h) = scorer.catalog_hash() {
        let expected = dataset.catalog.content_hash();
        if h != expected {
            return Err(EvalError::CatalogMismatch { expected, found: h.to_string() });
        }
    }
    let task = scorer.task();
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for frame in dataset.split_frames(split) {
        let Some(t) = task_targets(frame, task, scorer.vocabulary()) else { continue };
        scores.push(scorer.score(frame, dataset)?);
        labels.push(t.iter().map(|&v| v > 0.5).collect());
    }
    if scores.is_empty() {
        return Err(EvalError::EmptySplit(split));
    }
    let mut report = map_multilabel(&scores, &labels, &scorer.label_names())?;
    report.task = task.to_string();
    report.split = split.to_string();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerate every permutation; keep the one that is sorted by descending
    /// score with ties in index order, then apply the definition directly.
    pub(crate) fn brute_force_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
        fn perms(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(n - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }
        let positives = labels.iter().filter(|&&l| l).count();
        if positives == 0 {
            return None;
        }
        let ranking = perms(scores.len()).into_iter().find(|p| {
            p.windows(2).all(|w| scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1]))
        })?;
        let mut sum = 0.0;
        for k in 1..=ranking.len() {
            if labels[ranking[k - 1]] {
                let tp = ranking[..k].iter().filter(|&&i| labels[i]).count();
                sum += tp as f64 / k as f64;
            }
        }
        Some(sum / positives as f64)
    }

    #[test]
    fn worked_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert!((ap - 0.833_333_333_333_333_3).abs() < 1e-9);
        assert_eq!(average_precision(&[0.1, 0.9, 0.2], &[false, true, false]), Some(1.0));
        assert_eq!(average_precision(&[0.3, 0.1, 0.2], &[true, true, true]), Some(1.0));
        assert_eq!(average_precision(&[0.3, 0.1], &[false, false]), None);
        // ties keep input order: the negative listed first ranks first
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]), Some(0.5));
    }

    #[test]
    fn identity_map_and_exclusion() {
        let labels = vec![vec![true, false, false], vec![false, true, false], vec![true, true, false]];
        let scores: Vec<Vec<f64>> = labels.iter().map(|r| r.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).collect();
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = map_multilabel(&scores, &labels, &names).unwrap();
        assert_eq!(r.map, Some(1.0));
        assert_eq!(r.excluded, vec!["c".to_string()]);
        assert_eq!(r.labels[0].positives, 2);
        assert!(r.to_csv().starts_with("label,ap,positives\na,1.000000,2\n"));
        assert!(r.to_csv().ends_with("c,,0\n"));
        assert!(map_multilabel(&scores[..2], &labels, &names).is_err());
    }

    #[test]
    fn random_matrix_matches_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<Vec<f64>> = (0..10).map(|_| (0..5).map(|_| rng.random_range(0..4) as f64 / 4.0).collect()).collect();
        let labels: Vec<Vec<bool>> = (0..10).map(|_| (0..5).map(|_| rng.random_bool(0.4)).collect()).collect();
        let names: Vec<String> = (0..5).map(|i| i.to_string()).collect();
        let r = map_multilabel(&scores, &labels, &names).unwrap();
        for c in 0..5 {
            // 10 frames is beyond exhaustive enumeration; compare against the definition on the sorted order
            let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let lab: Vec<bool> = labels.iter().map(|r| r[c]).collect();
            let mut idx: Vec<usize> = (0..10).collect();
            idx.sort_by(|&a, &b| col[b].partial_cmp(&col[a]).unwrap().then(a.cmp(&b)));
            let pos = lab.iter().filter(|&&b| b).count();
            let expect = (pos > 0).then(|| {
                (1..=10)
                    .filter(|&k| lab[idx[k - 1]])
                    .map(|k| idx[..k].iter().filter(|&&i| lab[i]).count() as f64 / k as f64)
                    .sum::<f64>()
                    / pos as f64
            });
            assert_eq!(r.labels[c].ap, expect);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn matches_brute_force(
            case in (1usize..=7).prop_flat_map(|n| (
                proptest::collection::vec(0u8..5, n),
                proptest::collection::vec(any::<bool>(), n),
            ))
        ) {
            let scores: Vec<f64> = case.0.iter().map(|&s| s as f64 / 4.0).collect();
            prop_assert_eq!(average_precision(&scores, &case.1), brute_force_ap(&scores, &case.1));
        }

        #[test]
        fn invariant_under_monotone_maps(
            raw in proptest::collection::vec(-5.0f64..5.0, 1..30),
            bits in proptest::collection::vec(any::<bool>(), 30),
        ) {
            let labels = &bits[..raw.len()];
            let mapped: Vec<f64> = raw.iter().map(|&s| (2.0 * s).exp() + 3.0).collect();
            prop_assert_eq!(average_precision(&raw, labels), average_precision(&mapped, labels));
            if let Some(ap) = average_precision(&raw, labels) {
                prop_assert!((0.0..=1.0).contains(&ap));
            }
        }
    }
}
