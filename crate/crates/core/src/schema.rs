//! Annotation datasets: class catalog, frames, triplets, splits.
//!
//! The on-disk format is a single JSON document with `catalog`, `frames` and
//! `splits`. Parsing resolves names to catalog indices and checks references;
//! the remaining content rules are reported by [`validate`] so that a broken
//! file can be inspected instead of rejected outright.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::BBox;

pub const SG201_TOOLS: [&str; 6] = ["Hook", "Grasper", "Clipper", "Bipolar", "Irrigator", "Scissors"];
pub const SG201_ACTIONS: [&str; 6] = ["Dissect", "Retract", "Grasp", "Clip", "Coagulate", "Null_verb"];
pub const SG201_HANDS: [&str; 3] = ["Rt", "Lt", "Assi"];
pub const SG201_ANATOMY_COUNT: usize = 5;
pub const CVS_CRITERIA: [&str; 3] = ["C1_two_structures", "C2_hct_dissection", "C3_cystic_plate"];

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("frame {frame_id}: dangling reference to '{reference}'")]
    DanglingReference { frame_id: String, reference: String },
    #[error("frame {frame_id}: unknown {list} class '{name}'")]
    UnknownClass {
        frame_id: String,
        list: &'static str,
        name: String,
    },
    #[error("frame {frame_id}: object '{object}' has kind '{kind}', expected 'tool' or 'anatomy'")]
    BadKind {
        frame_id: String,
        object: String,
        kind: String,
    },
    #[error("frame {frame_id}: cvs must have exactly 3 entries, got {len}")]
    CvsLength { frame_id: String, len: usize },
    #[error("catalog {list}: expected {expected} classes under the SG201 profile, found {found}")]
    CatalogCount {
        list: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("catalog actions contain no null action (Null_verb)")]
    NoNullAction,
}

/// Which count constraints apply to the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    /// Exactly 6 tools, 5 anatomies, 6 actions, 3 hands; tools must carry a hand.
    #[default]
    Sg201,
    /// Any non-empty class lists.
    Generic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub tools: Vec<String>,
    pub anatomies: Vec<String>,
    pub actions: Vec<String>,
    pub hands: Vec<String>,
}

impl Catalog {
    pub fn sg201(anatomies: &[&str]) -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Catalog {
            tools: own(&SG201_TOOLS),
            anatomies: own(anatomies),
            actions: own(&SG201_ACTIONS),
            hands: own(&SG201_HANDS),
        }
    }

    /// Index of the designated null action (`Null_verb`, case-insensitive; `null` also accepted).
    pub fn null_action(&self) -> Option<usize> {
        self.actions
            .iter()
            .position(|a| a.eq_ignore_ascii_case("null_verb") || a.eq_ignore_ascii_case("null"))
    }

    pub fn classes(&self, kind: Kind) -> &[String] {
        match kind {
            Kind::Tool => &self.tools,
            Kind::Anatomy => &self.anatomies,
        }
    }

    /// Tools and anatomies in one index space: tools first.
    pub fn n_object_classes(&self) -> usize {
        self.tools.len() + self.anatomies.len()
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    /// SHA-256 of the canonical JSON form; checkpoints carry it to detect mismatched data.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("catalog serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Tool,
    Anatomy,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Tool => "tool",
            Kind::Anatomy => "anatomy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAnn {
    pub id: String,
    pub kind: Kind,
    pub class_index: usize,
    pub bbox: BBox,
    pub hand: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletAnn {
    pub tool: String,
    pub action: usize,
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnnotation {
    pub frame_id: String,
    pub video_id: String,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<ObjectAnn>,
    pub triplets: Vec<TripletAnn>,
    pub cvs: Option<[bool; 3]>,
}

impl FrameAnnotation {
    pub fn object(&self, id: &str) -> Option<&ObjectAnn> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train, val or test)")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub catalog: Catalog,
    pub frames: Vec<FrameAnnotation>,
    pub splits: Splits,
}

impl Dataset {
    pub fn frame(&self, id: &str) -> Option<&FrameAnnotation> {
        self.frames.iter().find(|f| f.frame_id == id)
    }

    /// Frames of a split, in split-list order. Unknown ids are skipped.
    pub fn split_frames(&self, split: Split) -> Vec<&FrameAnnotation> {
        let index: HashMap<&str, &FrameAnnotation> =
            self.frames.iter().map(|f| (f.frame_id.as_str(), f)).collect();
        self.splits
            .get(split)
            .iter()
            .filter_map(|id| index.get(id.as_str()).copied())
            .collect()
    }
}

/// Result of a successful parse; `warnings` lists ignored unknown fields.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

// ---- wire format ----

type Extra = BTreeMap<String, Value>;

#[derive(Deserialize, Serialize)]
struct RawDataset {
    catalog: RawCatalog,
    frames: Vec<RawFrame>,
    splits: RawSplits,
    #[serde(flatten, skip_serializing)]
    extra: Extra,
}

#[derive(Deserialize, Serialize)]
struct RawCatalog {
    tools: Vec<String>,
    anatomies: Vec<String>,
    actions: Vec<String>,
    hands: Vec<String>,
    #[serde(flatten, skip_serializing)]
    extra: Extra,
}

#[derive(Deserialize, Serialize)]
struct RawSplits {
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
    #[serde(flatten, skip_serializing)]
    extra: Extra,
}

#[derive(Deserialize, Serialize)]
struct RawFrame {
    frame_id: String,
    video_id: String,
    width: f64,
    height: f64,
    objects: Vec<RawObject>,
    triplets: Vec<RawTriplet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cvs: Option<Vec<bool>>,
    #[serde(flatten, skip_serializing)]
    extra: Extra,
}

#[derive(Deserialize, Serialize)]
struct RawObject {
    id: String,
    kind: String,
    class: String,
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hand: Option<String>,
    #[serde(flatten, skip_serializing)]
    extra: Extra,
}

#[derive(Deserialize, Serialize)]
struct RawTriplet {
    tool: String,
    action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<String>,
    #[serde(flatten, skip_serializing)]
    extra: Extra,
}

fn warn_extra(warnings: &mut Vec<String>, path: &str, extra: &Extra) {
    for key in extra.keys() {
        warnings.push(format!("{path}: unknown field '{key}' ignored"));
    }
}

fn check_catalog(catalog: &Catalog, profile: Profile) -> Result<(), ParseError> {
    if profile == Profile::Sg201 {
        let lists: [(&'static str, usize, usize); 4] = [
            ("tools", SG201_TOOLS.len(), catalog.tools.len()),
            ("anatomies", SG201_ANATOMY_COUNT, catalog.anatomies.len()),
            ("actions", SG201_ACTIONS.len(), catalog.actions.len()),
            ("hands", SG201_HANDS.len(), catalog.hands.len()),
        ];
        for (list, expected, found) in lists {
            if expected != found {
                return Err(ParseError::CatalogCount {
                    list,
                    expected,
                    found,
                });
            }
        }
    }
    if catalog.null_action().is_none() {
        return Err(ParseError::NoNullAction);
    }
    Ok(())
}

pub fn parse_dataset(text: &str) -> Result<Parsed, ParseError> {
    parse_dataset_with(text, Profile::Sg201)
}

pub fn parse_dataset_with(text: &str, profile: Profile) -> Result<Parsed, ParseError> {
    let raw: RawDataset = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ParseError::Schema(e.to_string()),
        _ => ParseError::Malformed(e.to_string()),
    })?;
    let mut warnings = Vec::new();
    warn_extra(&mut warnings, "$", &raw.extra);
    warn_extra(&mut warnings, "$.catalog", &raw.catalog.extra);
    warn_extra(&mut warnings, "$.splits", &raw.splits.extra);

    let catalog = Catalog {
        tools: raw.catalog.tools,
        anatomies: raw.catalog.anatomies,
        actions: raw.catalog.actions,
        hands: raw.catalog.hands,
    };
    check_catalog(&catalog, profile)?;

    let mut frames = Vec::with_capacity(raw.frames.len());
    for (fi, rf) in raw.frames.into_iter().enumerate() {
        let fpath = format!("$.frames[{fi}]");
        warn_extra(&mut warnings, &fpath, &rf.extra);
        let frame_id = rf.frame_id;

        let mut objects = Vec::with_capacity(rf.objects.len());
        for (oi, ro) in rf.objects.into_iter().enumerate() {
            warn_extra(&mut warnings, &format!("{fpath}.objects[{oi}]"), &ro.extra);
            let kind = match ro.kind.as_str() {
                "tool" => Kind::Tool,
                "anatomy" => Kind::Anatomy,
                _ => {
                    return Err(ParseError::BadKind {
                        frame_id,
                        object: ro.id,
                        kind: ro.kind,
                    })
                }
            };
            let list = catalog.classes(kind);
            let class_index = list.iter().position(|c| *c == ro.class).ok_or_else(|| {
                ParseError::UnknownClass {
                    frame_id: frame_id.clone(),
                    list: kind.as_str(),
                    name: ro.class.clone(),
                }
            })?;
            let hand = match ro.hand {
                None => None,
                Some(h) => Some(catalog.hands.iter().position(|c| *c == h).ok_or_else(|| {
                    ParseError::UnknownClass {
                        frame_id: frame_id.clone(),
                        list: "hand",
                        name: h.clone(),
                    }
                })?),
            };
            let [x, y, w, h] = ro.bbox;
            objects.push(ObjectAnn {
                id: ro.id,
                kind,
                class_index,
                bbox: BBox { x, y, w, h },
                hand,
            });
        }

        let ids: HashSet<&str> = objects.iter().map(|o| o.id.as_str()).collect();
        let mut triplets = Vec::with_capacity(rf.triplets.len());
        for (ti, rt) in rf.triplets.into_iter().enumerate() {
            warn_extra(&mut warnings, &format!("{fpath}.triplets[{ti}]"), &rt.extra);
            for r in std::iter::once(&rt.tool).chain(rt.target.iter()) {
                if !ids.contains(r.as_str()) {
                    return Err(ParseError::DanglingReference {
                        frame_id,
                        reference: r.clone(),
                    });
                }
            }
            let action = catalog.action_index(&rt.action).ok_or_else(|| ParseError::UnknownClass {
                frame_id: frame_id.clone(),
                list: "action",
                name: rt.action.clone(),
            })?;
            triplets.push(TripletAnn {
                tool: rt.tool,
                action,
                target: rt.target,
            });
        }

        let cvs = match rf.cvs {
            None => None,
            Some(v) => match <[bool; 3]>::try_from(v.as_slice()) {
                Ok(arr) => Some(arr),
                Err(_) => {
                    return Err(ParseError::CvsLength {
                        frame_id,
                        len: v.len(),
                    })
                }
            },
        };

        frames.push(FrameAnnotation {
            frame_id,
            video_id: rf.video_id,
            width: rf.width,
            height: rf.height,
            objects,
            triplets,
            cvs,
        });
    }

    let known: HashSet<&str> = frames.iter().map(|f| f.frame_id.as_str()).collect();
    for id in raw
        .splits
        .train
        .iter()
        .chain(&raw.splits.val)
        .chain(&raw.splits.test)
    {
        if !known.contains(id.as_str()) {
            return Err(ParseError::DanglingReference {
                frame_id: "<splits>".into(),
                reference: id.clone(),
            });
        }
    }
    let splits = Splits {
        train: raw.splits.train,
        val: raw.splits.val,
        test: raw.splits.test,
    };

    Ok(Parsed {
        dataset: Dataset {
            catalog,
            frames,
            splits,
        },
        warnings,
    })
}

/// Serialize back to the annotation format. Class indices that fall outside
/// the catalog are written as `#<index>` so the output stays inspectable.
pub fn to_json(d: &Dataset) -> String {
    let name = |list: &[String], i: usize| list.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
    let raw = RawDataset {
        catalog: RawCatalog {
            tools: d.catalog.tools.clone(),
            anatomies: d.catalog.anatomies.clone(),
            actions: d.catalog.actions.clone(),
            hands: d.catalog.hands.clone(),
            extra: Extra::new(),
        },
        frames: d
            .frames
            .iter()
            .map(|f| RawFrame {
                frame_id: f.frame_id.clone(),
                video_id: f.video_id.clone(),
                width: f.width,
                height: f.height,
                objects: f
                    .objects
                    .iter()
                    .map(|o| RawObject {
                        id: o.id.clone(),
                        kind: o.kind.as_str().to_string(),
                        class: name(d.catalog.classes(o.kind), o.class_index),
                        bbox: o.bbox.as_array(),
                        hand: o.hand.map(|h| name(&d.catalog.hands, h)),
                        extra: Extra::new(),
                    })
                    .collect(),
                triplets: f
                    .triplets
                    .iter()
                    .map(|t| RawTriplet {
                        tool: t.tool.clone(),
                        action: name(&d.catalog.actions, t.action),
                        target: t.target.clone(),
                        extra: Extra::new(),
                    })
                    .collect(),
                cvs: f.cvs.map(|c| c.to_vec()),
                extra: Extra::new(),
            })
            .collect(),
        splits: RawSplits {
            train: d.splits.train.clone(),
            val: d.splits.val.clone(),
            test: d.splits.test.clone(),
            extra: Extra::new(),
        },
        extra: Extra::new(),
    };
    serde_json::to_string_pretty(&raw).expect("dataset serializes")
}

// ---- validation ----

/// Machine-readable names for every content rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Rule {
    CatalogCount,
    CatalogDuplicateName,
    CatalogNullAction,
    DuplicateFrameId,
    FrameSize,
    DuplicateObjectId,
    ClassIndex,
    BboxDegenerate,
    BboxBounds,
    HandRequired,
    HandOnAnatomy,
    HandIndex,
    DanglingReference,
    ActionIndex,
    TripletToolKind,
    TripletTargetKind,
    TripletTargetRequired,
    DuplicateTripletPair,
    SplitOverlap,
    SplitUnknownFrame,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::CatalogCount => "catalog-count",
            Rule::CatalogDuplicateName => "catalog-duplicate-name",
            Rule::CatalogNullAction => "catalog-null-action",
            Rule::DuplicateFrameId => "duplicate-frame-id",
            Rule::FrameSize => "frame-size",
            Rule::DuplicateObjectId => "duplicate-object-id",
            Rule::ClassIndex => "class-index",
            Rule::BboxDegenerate => "bbox-degenerate",
            Rule::BboxBounds => "bbox-bounds",
            Rule::HandRequired => "hand-required",
            Rule::HandOnAnatomy => "hand-on-anatomy",
            Rule::HandIndex => "hand-index",
            Rule::DanglingReference => "dangling-reference",
            Rule::ActionIndex => "action-index",
            Rule::TripletToolKind => "triplet-tool-kind",
            Rule::TripletTargetKind => "triplet-target-kind",
            Rule::TripletTargetRequired => "triplet-target-required",
            Rule::DuplicateTripletPair => "duplicate-triplet-pair",
            Rule::SplitOverlap => "split-overlap",
            Rule::SplitUnknownFrame => "split-unknown-frame",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub frame_id: Option<String>,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.frame_id {
            Some(id) => write!(f, "[{}] frame {}: {}", self.rule, id, self.detail),
            None => write!(f, "[{}] {}", self.rule, self.detail),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

pub fn validate(d: &Dataset) -> ValidationReport {
    validate_with(d, Profile::Sg201)
}

pub fn validate_with(d: &Dataset, profile: Profile) -> ValidationReport {
    let mut out = Vec::new();
    let mut push = |frame: Option<&str>, rule: Rule, detail: String| {
        out.push(Violation {
            frame_id: frame.map(str::to_string),
            rule,
            detail,
        })
    };
    let cat = &d.catalog;

    if let Err(ParseError::CatalogCount {
        list,
        expected,
        found,
    }) = check_catalog(cat, profile)
    {
        push(None, Rule::CatalogCount, format!("{list}: expected {expected}, found {found}"));
    }
    if cat.null_action().is_none() {
        push(None, Rule::CatalogNullAction, "no null action in catalog".into());
    }
    for (list, names) in [
        ("tools", &cat.tools),
        ("anatomies", &cat.anatomies),
        ("actions", &cat.actions),
        ("hands", &cat.hands),
    ] {
        let mut seen = HashSet::new();
        for n in names {
            if !seen.insert(n) {
                push(None, Rule::CatalogDuplicateName, format!("{list}: '{n}' repeated"));
            }
        }
    }

    let mut frame_ids = HashSet::new();
    for f in &d.frames {
        let fid = Some(f.frame_id.as_str());
        if !frame_ids.insert(f.frame_id.as_str()) {
            push(fid, Rule::DuplicateFrameId, "frame id repeated".into());
        }
        if !(f.width > 0.0 && f.height > 0.0) {
            push(fid, Rule::FrameSize, format!("{} x {}", f.width, f.height));
        }

        let mut ids = HashSet::new();
        for o in &f.objects {
            if !ids.insert(o.id.as_str()) {
                push(fid, Rule::DuplicateObjectId, format!("object '{}'", o.id));
            }
            if o.class_index >= cat.classes(o.kind).len() {
                push(fid, Rule::ClassIndex, format!("object '{}': {} class {}", o.id, o.kind.as_str(), o.class_index));
            }
            if !o.bbox.is_valid() {
                push(fid, Rule::BboxDegenerate, format!("object '{}': {:?}", o.id, o.bbox.as_array()));
            } else if !o.bbox.within(f.width, f.height) {
                push(fid, Rule::BboxBounds, format!("object '{}': {:?}", o.id, o.bbox.as_array()));
            }
            match (o.kind, o.hand) {
                (Kind::Tool, None) if profile == Profile::Sg201 => {
                    push(fid, Rule::HandRequired, format!("tool '{}' has no hand label", o.id))
                }
                (Kind::Anatomy, Some(_)) => {
                    push(fid, Rule::HandOnAnatomy, format!("anatomy '{}' has a hand label", o.id))
                }
                (_, Some(h)) if h >= cat.hands.len() => {
                    push(fid, Rule::HandIndex, format!("object '{}': hand {}", o.id, h))
                }
                _ => {}
            }
        }

        let mut pairs = HashSet::new();
        for t in &f.triplets {
            if t.action >= cat.actions.len() {
                push(fid, Rule::ActionIndex, format!("triplet on '{}': action {}", t.tool, t.action));
            }
            match f.object(&t.tool) {
                None => push(fid, Rule::DanglingReference, format!("tool '{}'", t.tool)),
                Some(o) if o.kind != Kind::Tool => {
                    push(fid, Rule::TripletToolKind, format!("'{}' is not a tool", t.tool))
                }
                _ => {}
            }
            match &t.target {
                Some(target) => match f.object(target) {
                    None => push(fid, Rule::DanglingReference, format!("target '{target}'")),
                    Some(o) if o.kind != Kind::Anatomy => {
                        push(fid, Rule::TripletTargetKind, format!("'{target}' is not an anatomy"))
                    }
                    _ => {}
                },
                None if Some(t.action) != cat.null_action() => push(
                    fid,
                    Rule::TripletTargetRequired,
                    format!("triplet on '{}' has a non-null action but no target", t.tool),
                ),
                None => {}
            }
            if !pairs.insert((t.tool.as_str(), t.target.as_deref())) {
                push(
                    fid,
                    Rule::DuplicateTripletPair,
                    format!("({}, {})", t.tool, t.target.as_deref().unwrap_or("-")),
                );
            }
        }
    }

    let mut owner: HashMap<&str, Split> = HashMap::new();
    for split in Split::ALL {
        for id in d.splits.get(split) {
            if !frame_ids.contains(id.as_str()) {
                push(None, Rule::SplitUnknownFrame, format!("{split}: '{id}'"));
            }
            if let Some(prev) = owner.insert(id.as_str(), split) {
                push(Some(id), Rule::SplitOverlap, format!("listed in {prev} and {split}"));
            }
        }
    }

    ValidationReport { violations: out }
}

// ---- statistics ----

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CategoryCounts {
    pub frames: u64,
    pub tools: Vec<u64>,
    pub actions: Vec<u64>,
    pub hands: Vec<u64>,
}

impl CategoryCounts {
    fn zeros(cat: &Catalog) -> Self {
        CategoryCounts {
            frames: 0,
            tools: vec![0; cat.tools.len()],
            actions: vec![0; cat.actions.len()],
            hands: vec![0; cat.hands.len()],
        }
    }

    fn add(&mut self, other: &CategoryCounts) {
        self.frames += other.frames;
        for (a, b) in self
            .tools
            .iter_mut()
            .chain(self.actions.iter_mut())
            .chain(self.hands.iter_mut())
            .zip(other.tools.iter().chain(&other.actions).chain(&other.hands))
        {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryStats {
    pub tool_names: Vec<String>,
    pub action_names: Vec<String>,
    pub hand_names: Vec<String>,
    pub train: CategoryCounts,
    pub val: CategoryCounts,
    pub test: CategoryCounts,
    pub total: CategoryCounts,
}

impl CategoryStats {
    pub fn split(&self, split: Split) -> &CategoryCounts {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// `split,frames,<tool...>,<action...>,<hand...>` with one row per split plus `total`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,frames");
        for n in self.tool_names.iter().chain(&self.action_names).chain(&self.hand_names) {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (name, c) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
            ("total", &self.total),
        ] {
            s.push_str(name);
            s.push_str(&format!(",{}", c.frames));
            for v in c.tools.iter().chain(&c.actions).chain(&c.hands) {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn compute_stats(d: &Dataset) -> CategoryStats {
    let cat = &d.catalog;
    let per = |split: Split| {
        let mut c = CategoryCounts::zeros(cat);
        for f in d.split_frames(split) {
            c.frames += 1;
            for o in f.objects.iter().filter(|o| o.kind == Kind::Tool) {
                if let Some(slot) = c.tools.get_mut(o.class_index) {
                    *slot += 1;
                }
                if let Some(slot) = o.hand.and_then(|h| c.hands.get_mut(h)) {
                    *slot += 1;
                }
            }
            for t in &f.triplets {
                if let Some(slot) = c.actions.get_mut(t.action) {
                    *slot += 1;
                }
            }
        }
        c
    };
    let train = per(Split::Train);
    let val = per(Split::Val);
    let test = per(Split::Test);
    let mut total = CategoryCounts::zeros(cat);
    for c in [&train, &val, &test] {
        total.add(c);
    }
    CategoryStats {
        tool_names: cat.tools.clone(),
        action_names: cat.actions.clone(),
        hand_names: cat.hands.clone(),
        train,
        val,
        test,
        total,
    }
}

// ---- triplet label space ----

/// A (tool class, action, target anatomy class) label; `target` is `None` for the null action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripletLabel {
    pub tool: usize,
    pub action: usize,
    pub target: Option<usize>,
}

impl TripletLabel {
    fn sort_key(&self) -> (usize, usize, usize, usize) {
        match self.target {
            Some(t) => (self.tool, self.action, 0, t),
            None => (self.tool, self.action, 1, 0),
        }
    }

    pub fn display(&self, cat: &Catalog) -> String {
        let get = |list: &[String], i: usize| list.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
        format!(
            "{}/{}/{}",
            get(&cat.tools, self.tool),
            get(&cat.actions, self.action),
            self.target.map(|t| get(&cat.anatomies, t)).unwrap_or_else(|| "null".into())
        )
    }
}

impl PartialOrd for TripletLabel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TripletLabel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

/// Resolve a frame's triplets to class-level labels; unresolvable triplets are skipped.
pub fn frame_triplet_labels(frame: &FrameAnnotation) -> BTreeSet<TripletLabel> {
    frame
        .triplets
        .iter()
        .filter_map(|t| {
            let tool = frame.object(&t.tool)?;
            let target = match &t.target {
                Some(id) => Some(frame.object(id)?.class_index),
                None => None,
            };
            Some(TripletLabel {
                tool: tool.class_index,
                action: t.action,
                target,
            })
        })
        .collect()
}

/// Distinct triplet labels over all frames, ordered by tool, action, then target with null last.
pub fn triplet_vocabulary(d: &Dataset) -> Vec<TripletLabel> {
    let mut all = BTreeSet::new();
    for f in &d.frames {
        all.extend(frame_triplet_labels(f));
    }
    all.into_iter().collect()
}
