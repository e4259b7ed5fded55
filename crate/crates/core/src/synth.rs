//! Seeded synthetic scenes whose labels are a known function of geometry.
//!
//! Anatomies sit in distinct cells of a 3×2 grid; tools are dropped near one
//! of them. A tool's action comes from a table indexed by its class and the
//! class of the nearest anatomy, its hand from the horizontal third it sits
//! in, and the CVS bits from class presence and triplets.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixture::ANATOMIES;
use crate::geometry::BBox;
use crate::schema::{Catalog, Dataset, FrameAnnotation, Kind, ObjectAnn, Splits, TripletAnn};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
}

/// One CVS criterion: every listed anatomy class present, and (when the list
/// is non-empty) at least one matching `(action, target class)` triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvsRule {
    pub requires: Vec<usize>,
    pub any_triplet: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    /// `action[tool class][anatomy class]`
    pub action: Vec<Vec<usize>>,
    /// Hand for the left, middle and right third of the frame.
    pub hand_by_third: [usize; 3],
    pub cvs: [CvsRule; 3],
}

impl RuleTable {
    /// The table used with the SG201-style catalog from [`synth_catalog`].
    pub fn standard() -> Self {
        const D: usize = 0;
        const R: usize = 1;
        const G: usize = 2;
        const C: usize = 3;
        const K: usize = 4;
        const N: usize = 5;
        RuleTable {
            // columns: cystic_plate, hepatocystic_triangle, cystic_artery, cystic_duct, gallbladder
            action: vec![
                vec![D, D, D, N, R], // Hook
                vec![R, G, N, G, R], // Grasper
                vec![N, N, C, C, N], // Clipper
                vec![K, D, K, N, K], // Bipolar
                vec![R, N, N, N, R], // Irrigator
                vec![N, N, D, D, N], // Scissors
            ],
            hand_by_third: [1, 0, 2],
            cvs: [
                CvsRule { requires: vec![2, 3], any_triplet: vec![] },
                CvsRule { requires: vec![], any_triplet: vec![(D, 1)] },
                CvsRule { requires: vec![], any_triplet: vec![(D, 0), (K, 0)] },
            ],
        }
    }

    fn check(&self, cat: &Catalog) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.action.len() != cat.tools.len() || self.action.iter().any(|r| r.len() != cat.anatomies.len()) {
            return bad(format!("action table must be {}x{}", cat.tools.len(), cat.anatomies.len()));
        }
        if self.action.iter().flatten().any(|&a| a >= cat.actions.len()) {
            return bad("action index out of range".into());
        }
        if self.hand_by_third.iter().any(|&h| h >= cat.hands.len()) {
            return bad("hand index out of range".into());
        }
        for r in &self.cvs {
            if r.requires.iter().any(|&a| a >= cat.anatomies.len())
                || r.any_triplet.iter().any(|&(a, t)| a >= cat.actions.len() || t >= cat.anatomies.len())
            {
                return bad("cvs rule index out of range".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub tools_per_frame: (usize, usize),
    pub anatomies_per_frame: (usize, usize),
    pub sigma: f64,
    pub seed: u64,
    pub width: f64,
    pub height: f64,
    pub rules: RuleTable,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train: 200,
            val: 50,
            test: 50,
            tools_per_frame: (1, 3),
            anatomies_per_frame: (2, 5),
            sigma: 0.0,
            seed: 0,
            width: 640.0,
            height: 480.0,
            rules: RuleTable::standard(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, cat: &Catalog) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        let (t0, t1) = self.tools_per_frame;
        let (a0, a1) = self.anatomies_per_frame;
        if t0 > t1 || a0 > a1 {
            return bad("range minimum exceeds maximum");
        }
        if a1 > cat.anatomies.len().min(6) {
            return bad("at most one anatomy per class and per grid cell (6)");
        }
        if t1 > 0 && a0 == 0 {
            return bad("tools need at least one anatomy to be placed near");
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return bad("sigma must lie in [0, 1]");
        }
        if !(self.width >= 120.0 && self.height >= 80.0 && self.width.is_finite() && self.height.is_finite()) {
            return bad("frame must be at least 120x80");
        }
        self.rules.check(cat)
    }
}

pub fn synth_catalog() -> Catalog {
    Catalog::sg201(&ANATOMIES)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn nearest_anatomy(frame: &FrameAnnotation, tool: &ObjectAnn) -> Option<usize> {
    let (tx, ty) = tool.bbox.center();
    let mut best: Option<(f64, usize)> = None;
    for (i, o) in frame.objects.iter().enumerate() {
        if o.kind != Kind::Anatomy {
            continue;
        }
        let (x, y) = o.bbox.center();
        let d = (x - tx).powi(2) + (y - ty).powi(2);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

fn third(frame: &FrameAnnotation, b: &BBox) -> usize {
    let (cx, _) = b.center();
    ((3.0 * cx / frame.width).floor() as usize).min(2)
}

/// Noise-free labels recomputed from geometry: triplets, per-object hands and CVS bits.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleLabels {
    pub triplets: Vec<TripletAnn>,
    pub hands: Vec<Option<usize>>,
    pub cvs: [bool; 3],
}

pub fn label_oracle(frame: &FrameAnnotation, catalog: &Catalog, rules: &RuleTable) -> OracleLabels {
    let null = catalog.null_action().unwrap_or(usize::MAX);
    let mut triplets = Vec::new();
    let mut hands = Vec::new();
    for o in &frame.objects {
        if o.kind != Kind::Tool {
            hands.push(None);
            continue;
        }
        hands.push(Some(rules.hand_by_third[third(frame, &o.bbox)]));
        if let Some(ai) = nearest_anatomy(frame, o) {
            let anat = &frame.objects[ai];
            let action = rules.action[o.class_index][anat.class_index];
            let target = (action != null).then(|| anat.id.clone());
            triplets.push(TripletAnn { tool: o.id.clone(), action, target });
        }
    }
    OracleLabels { cvs: cvs_bits(frame, &triplets, rules), triplets, hands }
}

fn cvs_bits(frame: &FrameAnnotation, triplets: &[TripletAnn], rules: &RuleTable) -> [bool; 3] {
    let present = |c: usize| frame.objects.iter().any(|o| o.kind == Kind::Anatomy && o.class_index == c);
    let hit = |action: usize, class: usize| {
        triplets.iter().any(|t| {
            t.action == action
                && t.target.as_ref().and_then(|id| frame.object(id)).is_some_and(|o| o.class_index == class)
        })
    };
    rules.cvs.clone().map(|r| {
        r.requires.iter().all(|&c| present(c))
            && (r.any_triplet.is_empty() || r.any_triplet.iter().any(|&(a, c)| hit(a, c)))
    })
}

fn other(rng: &mut ChaCha8Rng, n: usize, not: usize) -> usize {
    let k = rng.random_range(0..n - 1);
    if k >= not {
        k + 1
    } else {
        k
    }
}

fn generate_frame(cfg: &SynthConfig, cat: &Catalog, frame_id: String, video_id: String, seed: u64) -> FrameAnnotation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cfg.width, cfg.height);
    let (cw, ch) = (w / 3.0, h / 2.0);
    let mut objects = Vec::new();

    let n_anat = rng.random_range(cfg.anatomies_per_frame.0..=cfg.anatomies_per_frame.1);
    let classes = sample(&mut rng, cat.anatomies.len(), n_anat).into_vec();
    let cells = sample(&mut rng, 6, n_anat).into_vec();
    for (k, (&class, &cell)) in classes.iter().zip(&cells).enumerate() {
        let (cx0, cy0) = ((cell % 3) as f64 * cw, (cell / 3) as f64 * ch);
        let bw = cw * rng.random_range(0.45..0.85);
        let bh = ch * rng.random_range(0.45..0.85);
        let x = cx0 + rng.random_range(0.0..(cw - bw));
        let y = cy0 + rng.random_range(0.0..(ch - bh));
        objects.push(ObjectAnn { id: format!("a{k}"), kind: Kind::Anatomy, class_index: class, bbox: BBox { x, y, w: bw, h: bh }, hand: None });
    }

    let n_tools = if n_anat == 0 { 0 } else { rng.random_range(cfg.tools_per_frame.0..=cfg.tools_per_frame.1) };
    for k in 0..n_tools {
        let class = rng.random_range(0..cat.tools.len());
        let anchor = objects[rng.random_range(0..n_anat)].bbox;
        let (ax, ay) = anchor.center();
        let bw = (w * rng.random_range(0.06..0.14)).round();
        let bh = (h * rng.random_range(0.06..0.14)).round();
        let cx = ax + rng.random_range(-0.3..0.3) * anchor.w;
        let cy = ay + rng.random_range(-0.3..0.3) * anchor.h;
        let x = (cx - bw / 2.0).clamp(0.0, w - bw);
        let y = (cy - bh / 2.0).clamp(0.0, h - bh);
        objects.push(ObjectAnn { id: format!("t{k}"), kind: Kind::Tool, class_index: class, bbox: BBox { x, y, w: bw, h: bh }, hand: Some(0) });
    }

    let mut frame = FrameAnnotation { frame_id, video_id, width: w, height: h, objects, triplets: Vec::new(), cvs: None };
    let labels = label_oracle(&frame, cat, &cfg.rules);
    let null = cat.null_action().expect("sg201 catalog has a null action");
    let sigma = cfg.sigma;
    for (o, hand) in frame.objects.iter_mut().zip(labels.hands) {
        o.hand = hand.map(|h| if sigma > 0.0 && rng.random_bool(sigma) { other(&mut rng, cat.hands.len(), h) } else { h });
    }
    let mut triplets = labels.triplets;
    for t in &mut triplets {
        if sigma > 0.0 && rng.random_bool(sigma) {
            let action = other(&mut rng, cat.actions.len(), t.action);
            if action == null {
                t.target = None;
            } else if t.target.is_none() {
                let tool = frame.object(&t.tool).expect("own tool");
                t.target = nearest_anatomy(&frame, tool).map(|i| frame.objects[i].id.clone());
            }
            t.action = action;
        }
    }
    let mut cvs = labels.cvs;
    for bit in &mut cvs {
        if sigma > 0.0 && rng.random_bool(sigma) {
            *bit = !*bit;
        }
    }
    frame.triplets = triplets;
    frame.cvs = Some(cvs);
    frame
}

/// A dataset with `train`/`val`/`test` frames; frame `i` of the whole run uses its own derived seed.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    let cat = synth_catalog();
    cfg.validate(&cat)?;
    let mut frames = Vec::new();
    let mut splits = Splits::default();
    let mut index = 0u64;
    for (name, n, list) in [("train", cfg.train, &mut splits.train), ("val", cfg.val, &mut splits.val), ("test", cfg.test, &mut splits.test)] {
        for i in 0..n {
            let id = format!("{name}_{i:04}");
            let video = format!("{name}_v{:02}", i / 25);
            frames.push(generate_frame(cfg, &cat, id.clone(), video, splitmix(cfg.seed ^ splitmix(index))));
            list.push(id);
            index += 1;
        }
    }
    Ok(Dataset { catalog: cat, frames, splits })
}
