//! A deterministic annotation set whose category counts reproduce the
//! published SG201 distribution: split sizes 1212/409/312, per-split tool,
//! action and hand counts, and a 34-label triplet space.
//!
//! Geometry is schematic. Only the counts are meant to be faithful.

use std::collections::BTreeMap;

use crate::geometry::BBox;
use crate::schema::{Catalog, Dataset, FrameAnnotation, Kind, ObjectAnn, Splits, TripletAnn};

pub const FRAME_WIDTH: f64 = 854.0;
pub const FRAME_HEIGHT: f64 = 480.0;

/// Anatomy names used by the fixture and the synthetic generator.
pub const ANATOMIES: [&str; 5] = [
    "cystic_plate",
    "hepatocystic_triangle",
    "cystic_artery",
    "cystic_duct",
    "gallbladder",
];

pub const TRIPLET_LABELS: usize = 34;

pub struct SplitProfile {
    pub frames: usize,
    /// Hook, Grasper, Clipper, Bipolar, Irrigator, Scissors
    pub tools: [u64; 6],
    /// Dissect, Retract, Grasp, Clip, Coagulate, Null_verb
    pub actions: [u64; 6],
    /// Rt, Lt, Assi
    pub hands: [u64; 3],
}

pub const TRAIN: SplitProfile = SplitProfile {
    frames: 1212,
    tools: [686, 997, 128, 95, 41, 3],
    actions: [601, 879, 72, 122, 41, 233],
    hands: [986, 842, 122],
};

pub const VAL: SplitProfile = SplitProfile {
    frames: 409,
    tools: [202, 347, 48, 36, 11, 0],
    actions: [168, 308, 12, 44, 14, 98],
    hands: [311, 268, 65],
};

pub const TEST: SplitProfile = SplitProfile {
    frames: 312,
    tools: [172, 254, 43, 11, 17, 1],
    actions: [147, 242, 11, 41, 5, 52],
    hands: [246, 218, 34],
};

fn expand<const N: usize>(counts: &[u64; N]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(i, c as usize))
        .collect()
}

/// Per split: tool class, hand and optional action for every tool instance.
fn instances(p: &SplitProfile) -> Vec<(usize, usize, Option<usize>)> {
    let tools = expand(&p.tools);
    let hands = expand(&p.hands);
    let actions = expand(&p.actions);
    assert_eq!(tools.len(), hands.len(), "one hand per tool");
    assert!(actions.len() <= tools.len(), "at most one triplet per tool");
    tools
        .iter()
        .zip(&hands)
        .enumerate()
        .map(|(k, (&t, &h))| (t, h, actions.get(k).copied()))
        .collect()
}

/// Number of distinct targets per non-null (tool, action) pair so that the
/// label space has exactly [`TRIPLET_LABELS`] entries.
fn target_spread(all: &[Vec<(usize, usize, Option<usize>)>], null: usize) -> BTreeMap<(usize, usize), usize> {
    let mut uses: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for split in all {
        for &(t, _, a) in split {
            if let Some(a) = a {
                *uses.entry((t, a)).or_default() += 1;
            }
        }
    }
    let null_pairs = uses.keys().filter(|(_, a)| *a == null).count();
    let mut spread: BTreeMap<(usize, usize), usize> =
        uses.keys().filter(|(_, a)| *a != null).map(|&k| (k, 1)).collect();
    let mut have = null_pairs + spread.len();
    assert!(have <= TRIPLET_LABELS);
    while have < TRIPLET_LABELS {
        let mut grew = false;
        for (k, s) in spread.iter_mut() {
            if have == TRIPLET_LABELS {
                break;
            }
            if *s < ANATOMIES.len() && *s < uses[k] {
                *s += 1;
                have += 1;
                grew = true;
            }
        }
        assert!(grew, "cannot reach {TRIPLET_LABELS} labels");
    }
    spread
}

pub fn sg201_counts() -> Dataset {
    let catalog = Catalog::sg201(&ANATOMIES);
    let null = catalog.null_action().expect("SG201 catalog has Null_verb");
    let profiles = [("train", &TRAIN), ("val", &VAL), ("test", &TEST)];
    let all: Vec<_> = profiles.iter().map(|(_, p)| instances(p)).collect();
    let spread = target_spread(&all, null);
    let mut cursor: BTreeMap<(usize, usize), usize> = BTreeMap::new();

    let mut frames = Vec::new();
    let mut splits = Splits::default();
    for ((name, profile), inst) in profiles.iter().zip(&all) {
        let n = profile.frames;
        let mut split_frames: Vec<FrameAnnotation> = (0..n)
            .map(|i| FrameAnnotation {
                frame_id: format!("{name}_{i:04}"),
                video_id: format!("{name}_video_{:03}", i / 10),
                width: FRAME_WIDTH,
                height: FRAME_HEIGHT,
                objects: ANATOMIES
                    .iter()
                    .enumerate()
                    .map(|(c, _)| ObjectAnn {
                        id: format!("a{c}"),
                        kind: Kind::Anatomy,
                        class_index: c,
                        bbox: BBox { x: 20.0 + 165.0 * c as f64, y: 260.0, w: 150.0, h: 150.0 },
                        hand: None,
                    })
                    .collect(),
                triplets: Vec::new(),
                cvs: None,
            })
            .collect();
        for (k, &(tool, hand, action)) in inst.iter().enumerate() {
            let frame = &mut split_frames[k % n];
            let slot = k / n;
            let id = format!("t{slot}");
            frame.objects.push(ObjectAnn {
                id: id.clone(),
                kind: Kind::Tool,
                class_index: tool,
                bbox: BBox {
                    x: 20.0 + 100.0 * (slot % 8) as f64,
                    y: 20.0 + 60.0 * ((slot / 8) % 3) as f64,
                    w: 80.0,
                    h: 40.0,
                },
                hand: Some(hand),
            });
            if let Some(action) = action {
                let target = (action != null).then(|| {
                    let c = cursor.entry((tool, action)).or_default();
                    let t = *c % spread[&(tool, action)];
                    *c += 1;
                    format!("a{t}")
                });
                frame.triplets.push(TripletAnn { tool: id, action, target });
            }
        }
        let ids: Vec<String> = split_frames.iter().map(|f| f.frame_id.clone()).collect();
        match *name {
            "train" => splits.train = ids,
            "val" => splits.val = ids,
            _ => splits.test = ids,
        }
        frames.extend(split_frames);
    }

    Dataset { catalog, frames, splits }
}
