//! Latent graph construction: typed nodes, candidate edges with union-region
//! features, the tool→anatomy action-edge mask and score-based retention.

use std::collections::HashMap;

use thiserror::Error;

use crate::geometry::{normalize_box, spatial_relation, union_box, BBox, GeometryError, SpatialRelation, DEFAULT_INSIDE_THRESHOLD};
use crate::schema::{Catalog, FrameAnnotation, Kind, ObjectAnn};

/// Default retention threshold on edge-existence probabilities.
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("feature dimension mismatch for '{object}': expected {expected}, got {got}")]
    FeatureDim {
        object: String,
        expected: usize,
        got: usize,
    },
    #[error("no appearance features for '{0}'")]
    MissingAppearance(String),
    #[error("{scores} scores for {edges} spatial candidates")]
    ScoreCount { scores: usize, edges: usize },
    #[error("catalog has no null action")]
    NoNullAction,
    #[error("bad sidecar file: {0}")]
    Sidecar(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Produces per-object feature vectors.
///
/// Edge features are the normalized union box of the endpoints followed by
/// the mean of the two endpoint feature vectors.
pub trait FeatureProvider {
    fn node_dim(&self) -> usize;

    fn node_features(&self, frame: &FrameAnnotation, obj: &ObjectAnn) -> Result<Vec<f64>, GraphError>;

    /// Soft class scores over the catalog classes of the object's kind, if available.
    fn class_scores(&self, _frame: &FrameAnnotation, _obj: &ObjectAnn) -> Option<Vec<f64>> {
        None
    }

    fn edge_dim(&self) -> usize {
        4 + self.node_dim()
    }

    fn edge_features(&self, frame: &FrameAnnotation, a: &Node, b: &Node) -> Result<Vec<f64>, GraphError> {
        let u = union_box(&a.bbox, &b.bbox);
        let mut out = Vec::with_capacity(self.edge_dim());
        out.extend_from_slice(&normalize_box(&u, frame.width, frame.height)?);
        out.extend(a.features.iter().zip(&b.features).map(|(x, y)| (x + y) / 2.0));
        Ok(out)
    }
}

/// Per-object appearance vectors loaded from a sidecar JSON object.
///
/// Keys are either `"<frame_id>/<obj_id>"` or a bare `obj_id`; the
/// frame-qualified key wins when both exist.
#[derive(Debug, Clone, PartialEq)]
pub struct Appearance {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl Appearance {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let vectors: HashMap<String, Vec<f64>> =
            serde_json::from_str(text).map_err(|e| GraphError::Sidecar(e.to_string()))?;
        let mut dims = vectors.values().map(Vec::len);
        let dim = dims.next().unwrap_or(0);
        if dims.any(|d| d != dim) {
            return Err(GraphError::Sidecar("appearance vectors differ in length".into()));
        }
        if vectors.values().flatten().any(|v| !v.is_finite()) {
            return Err(GraphError::Sidecar("non-finite appearance value".into()));
        }
        Ok(Appearance { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn lookup(&self, frame_id: &str, obj_id: &str) -> Option<&Vec<f64>> {
        self.vectors
            .get(&format!("{frame_id}/{obj_id}"))
            .or_else(|| self.vectors.get(obj_id))
    }
}

/// Class one-hot over tools then anatomies, normalized box geometry, then
/// optional appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricFeatures {
    n_tools: usize,
    n_anatomies: usize,
    appearance: Option<Appearance>,
}

impl GeometricFeatures {
    pub fn new(catalog: &Catalog) -> Self {
        GeometricFeatures {
            n_tools: catalog.tools.len(),
            n_anatomies: catalog.anatomies.len(),
            appearance: None,
        }
    }

    pub fn with_appearance(mut self, appearance: Appearance) -> Self {
        self.appearance = Some(appearance);
        self
    }
}

impl FeatureProvider for GeometricFeatures {
    fn node_dim(&self) -> usize {
        self.n_tools + self.n_anatomies + 4 + self.appearance.as_ref().map_or(0, Appearance::dim)
    }

    fn node_features(&self, frame: &FrameAnnotation, obj: &ObjectAnn) -> Result<Vec<f64>, GraphError> {
        let mut f = vec![0.0; self.n_tools + self.n_anatomies];
        let slot = match obj.kind {
            Kind::Tool => obj.class_index,
            Kind::Anatomy => self.n_tools + obj.class_index,
        };
        if let Some(v) = f.get_mut(slot) {
            *v = 1.0;
        }
        f.extend_from_slice(&normalize_box(&obj.bbox, frame.width, frame.height)?);
        if let Some(app) = &self.appearance {
            let v = app
                .lookup(&frame.frame_id, &obj.id)
                .ok_or_else(|| GraphError::MissingAppearance(format!("{}/{}", frame.frame_id, obj.id)))?;
            f.extend_from_slice(v);
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub obj_id: String,
    pub kind: Kind,
    pub class_index: usize,
    pub bbox: BBox,
    /// Class probabilities over the catalog classes of `kind`.
    pub probs: Vec<f64>,
    pub features: Vec<f64>,
    pub hand_gt: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Spatial,
    Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
    pub features: Vec<f64>,
    pub spatial_gt: Option<SpatialRelation>,
    /// Spatial candidates only: whether the pair is a meaningful (overlapping) one.
    pub exist_gt: Option<bool>,
    pub action_gt: Option<usize>,
}

/// Every candidate edge of a frame before retention.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGraph {
    pub frame_id: String,
    pub width: f64,
    pub height: f64,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl CandidateGraph {
    pub fn spatial_indices(&self) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == EdgeKind::Spatial)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_spatial(&self) -> usize {
        self.edges.iter().filter(|e| e.kind == EdgeKind::Spatial).count()
    }
}

/// Candidate graph plus the retention decision. Action edges are always
/// retained; spatial edges only when their existence score reaches `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGraph {
    pub frame_id: String,
    pub width: f64,
    pub height: f64,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub retained: Vec<bool>,
}

impl LatentGraph {
    pub fn retained_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(i, _)| self.retained[*i])
    }

    pub fn action_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == EdgeKind::Action)
    }

    pub fn tool_nodes(&self) -> impl Iterator<Item = (usize, &Node)> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.kind == Kind::Tool)
    }
}

/// One node per annotated object, in annotation order.
pub fn build_nodes(frame: &FrameAnnotation, catalog: &Catalog, fp: &dyn FeatureProvider) -> Result<Vec<Node>, GraphError> {
    frame
        .objects
        .iter()
        .map(|o| {
            let features = fp.node_features(frame, o)?;
            if features.len() != fp.node_dim() {
                return Err(GraphError::FeatureDim {
                    object: o.id.clone(),
                    expected: fp.node_dim(),
                    got: features.len(),
                });
            }
            let n_classes = catalog.classes(o.kind).len();
            let probs = match fp.class_scores(frame, o) {
                Some(p) => p,
                None => {
                    let mut p = vec![0.0; n_classes];
                    if let Some(v) = p.get_mut(o.class_index) {
                        *v = 1.0;
                    }
                    p
                }
            };
            Ok(Node {
                obj_id: o.id.clone(),
                kind: o.kind,
                class_index: o.class_index,
                bbox: o.bbox,
                probs,
                features,
                hand_gt: if o.kind == Kind::Tool { o.hand } else { None },
            })
        })
        .collect()
}

/// Entry `(i, j)` is true iff node `i` is a tool and node `j` is an anatomy.
pub fn action_edge_mask(nodes: &[Node]) -> Vec<Vec<bool>> {
    nodes
        .iter()
        .map(|a| {
            nodes
                .iter()
                .map(|b| a.kind == Kind::Tool && b.kind == Kind::Anatomy)
                .collect()
        })
        .collect()
}

/// All unordered pairs as spatial candidates (lower index first), then every
/// tool→anatomy pair as an action edge.
pub fn candidate_edges(
    frame: &FrameAnnotation,
    catalog: &Catalog,
    nodes: Vec<Node>,
    fp: &dyn FeatureProvider,
) -> Result<CandidateGraph, GraphError> {
    let null = catalog.null_action().ok_or(GraphError::NoNullAction)?;
    let mut annotated: HashMap<(&str, &str), usize> = HashMap::new();
    for t in &frame.triplets {
        if let Some(target) = &t.target {
            annotated.insert((t.tool.as_str(), target.as_str()), t.action);
        }
    }

    let n = nodes.len();
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&nodes[i], &nodes[j]);
            edges.push(Edge {
                src: i,
                dst: j,
                kind: EdgeKind::Spatial,
                features: fp.edge_features(frame, a, b)?,
                spatial_gt: Some(spatial_relation(&a.bbox, &b.bbox, DEFAULT_INSIDE_THRESHOLD)),
                exist_gt: Some(a.bbox.intersection_area(&b.bbox) > 0.0),
                action_gt: None,
            });
        }
    }
    let mask = action_edge_mask(&nodes);
    for i in 0..n {
        for j in 0..n {
            if !mask[i][j] {
                continue;
            }
            let (a, b) = (&nodes[i], &nodes[j]);
            let action = annotated
                .get(&(a.obj_id.as_str(), b.obj_id.as_str()))
                .copied()
                .unwrap_or(null);
            edges.push(Edge {
                src: i,
                dst: j,
                kind: EdgeKind::Action,
                features: fp.edge_features(frame, a, b)?,
                spatial_gt: None,
                exist_gt: None,
                action_gt: Some(action),
            });
        }
    }
    Ok(CandidateGraph {
        frame_id: frame.frame_id.clone(),
        width: frame.width,
        height: frame.height,
        nodes,
        edges,
    })
}

pub fn build_candidates(frame: &FrameAnnotation, catalog: &Catalog, fp: &dyn FeatureProvider) -> Result<CandidateGraph, GraphError> {
    let nodes = build_nodes(frame, catalog, fp)?;
    candidate_edges(frame, catalog, nodes, fp)
}

/// Retention flag per candidate edge: action edges always, spatial edges when
/// their score (in spatial-candidate order) reaches `tau`.
pub fn retention_mask(edges: &[Edge], scores: &[f64], tau: f64) -> Result<Vec<bool>, GraphError> {
    let n_spatial = edges.iter().filter(|e| e.kind == EdgeKind::Spatial).count();
    if scores.len() != n_spatial {
        return Err(GraphError::ScoreCount {
            scores: scores.len(),
            edges: n_spatial,
        });
    }
    let mut next = scores.iter();
    Ok(edges
        .iter()
        .map(|e| match e.kind {
            EdgeKind::Action => true,
            EdgeKind::Spatial => *next.next().expect("counted") >= tau,
        })
        .collect())
}

/// Keep spatial candidates whose score is at least `tau`; `scores` follows spatial-candidate order.
pub fn propose_edges(graph: CandidateGraph, scores: &[f64], tau: f64) -> Result<LatentGraph, GraphError> {
    let retained = retention_mask(&graph.edges, scores, tau)?;
    Ok(LatentGraph {
        frame_id: graph.frame_id,
        width: graph.width,
        height: graph.height,
        nodes: graph.nodes,
        edges: graph.edges,
        retained,
    })
}
