use crate::autodiff::{sigmoid, Grads, Init, ParamStore, Tape, Tensor, Var};
use crate::geometry::SpatialRelation;
use crate::graph::{build_candidates, retention_mask, CandidateGraph, EdgeKind, FeatureProvider, LatentGraph};
use crate::schema::{frame_triplet_labels, Catalog, FrameAnnotation, Kind, TripletLabel};

use super::{total_loss, LossBreakdown, LossParts, ModelConfig, ModelError, Readout, Task};

pub(crate) const N_SPATIAL: usize = 3;

/// A frame turned into tensors and supervision targets, computed once per dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub graph: CandidateGraph,
    x: Tensor,
    e: Tensor,
    src: Vec<usize>,
    dst: Vec<usize>,
    spatial: Vec<usize>,
    exist_t: Vec<f64>,
    /// Positions within `spatial` of meaningful pairs, with their relation.
    spatial_sup: Vec<usize>,
    spatial_t: Vec<usize>,
    action: Vec<usize>,
    action_t: Vec<usize>,
    tools: Vec<usize>,
    hand_sup: Vec<usize>,
    hand_t: Vec<usize>,
    pub(crate) task_t: Option<Vec<f64>>,
}

impl Prepared {
    pub fn new(frame: &FrameAnnotation, catalog: &Catalog, fp: &dyn FeatureProvider) -> Result<Self, ModelError> {
        let graph = build_candidates(frame, catalog, fp)?;
        let stack = |rows: Vec<&[f64]>, d: usize| -> Result<Tensor, ModelError> {
            let n = rows.len();
            Ok(Tensor::from_vec(n, d, rows.concat())?)
        };
        let x = stack(graph.nodes.iter().map(|n| n.features.as_slice()).collect(), fp.node_dim())?;
        let e = stack(graph.edges.iter().map(|e| e.features.as_slice()).collect(), fp.edge_dim())?;

        let mut p = Prepared {
            x,
            e,
            src: graph.edges.iter().map(|e| e.src).collect(),
            dst: graph.edges.iter().map(|e| e.dst).collect(),
            spatial: Vec::new(),
            exist_t: Vec::new(),
            spatial_sup: Vec::new(),
            spatial_t: Vec::new(),
            action: Vec::new(),
            action_t: Vec::new(),
            tools: Vec::new(),
            hand_sup: Vec::new(),
            hand_t: Vec::new(),
            task_t: None,
            graph: graph.clone(),
        };
        for (i, edge) in graph.edges.iter().enumerate() {
            match edge.kind {
                EdgeKind::Spatial => {
                    let exists = edge.exist_gt.unwrap_or(false);
                    if exists {
                        if let Some(rel) = edge.spatial_gt {
                            p.spatial_sup.push(p.spatial.len());
                            p.spatial_t.push(rel.index());
                        }
                    }
                    p.exist_t.push(if exists { 1.0 } else { 0.0 });
                    p.spatial.push(i);
                }
                EdgeKind::Action => {
                    p.action.push(i);
                    p.action_t.push(edge.action_gt.unwrap_or(0));
                }
            }
        }
        for (i, n) in graph.nodes.iter().enumerate() {
            if n.kind == Kind::Tool {
                if let Some(h) = n.hand_gt {
                    p.hand_sup.push(p.tools.len());
                    p.hand_t.push(h);
                }
                p.tools.push(i);
            }
        }
        Ok(p)
    }

    pub fn with_task_targets(mut self, targets: Option<Vec<f64>>) -> Self {
        self.task_t = targets;
        self
    }

    pub fn task_targets(&self) -> Option<&[f64]> {
        self.task_t.as_deref()
    }
}

/// Frame-level task labels: CVS bits, or a multi-hot over the triplet vocabulary.
pub fn task_targets(frame: &FrameAnnotation, task: Task, vocabulary: &[TripletLabel]) -> Option<Vec<f64>> {
    match task {
        Task::Cvs => frame.cvs.map(|c| c.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()),
        Task::Triplet => {
            let present = frame_triplet_labels(frame);
            Some(
                vocabulary
                    .iter()
                    .map(|l| if present.contains(l) { 1.0 } else { 0.0 })
                    .collect(),
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub nodes: Tensor,
    pub edges: Tensor,
}

/// Model outputs for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub exist_probs: Vec<f64>,
    pub retained: Vec<bool>,
    /// Per spatial candidate, in candidate order.
    pub spatial: Vec<SpatialRelation>,
    /// Per action edge, in candidate order.
    pub actions: Vec<usize>,
    /// Per tool node, in node order.
    pub hands: Vec<usize>,
    /// Task probabilities when a decoder is attached.
    pub task: Option<Vec<f64>>,
}

pub(crate) struct Pass {
    pub tape: Tape,
    exist: Var,
    spatial: Var,
    action: Option<Var>,
    hand: Option<Var>,
    task: Option<Var>,
    exist_logits: Var,
    spatial_logits: Var,
    action_logits: Option<Var>,
    hand_logits: Option<Var>,
    task_logits: Option<Var>,
    retained: Vec<bool>,
}

/// A parameter store plus the configuration that gives it meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub catalog_hash: String,
    pub task: Option<Task>,
    pub task_labels: Vec<String>,
    pub vocabulary: Vec<TripletLabel>,
}

fn mlp2(t: &mut Tape, s: &ParamStore, prefix: &str, x: Var) -> Result<Var, ModelError> {
    let w1 = t.param(s, &format!("{prefix}.w1"))?;
    let b1 = t.param(s, &format!("{prefix}.b1"))?;
    let w2 = t.param(s, &format!("{prefix}.w2"))?;
    let b2 = t.param(s, &format!("{prefix}.b2"))?;
    let h = t.linear(x, w1, b1)?;
    let h = t.relu(h);
    Ok(t.linear(h, w2, b2)?)
}

fn add_mlp2(s: &mut ParamStore, prefix: &str, d_in: usize, d_hidden: usize, d_out: usize, init: Init) -> Result<(), ModelError> {
    s.add(&format!("{prefix}.w1"), d_in, d_hidden, init)?;
    s.add(&format!("{prefix}.b1"), 1, d_hidden, Init::Zeros)?;
    s.add(&format!("{prefix}.w2"), d_hidden, d_out, init)?;
    s.add(&format!("{prefix}.b2"), 1, d_out, Init::Zeros)?;
    Ok(())
}

/// Message-passing topology: each retained edge sends one message to each endpoint.
struct Topology {
    other: Vec<usize>,
    via: Vec<usize>,
    target: Vec<usize>,
}

impl Topology {
    fn new(src: &[usize], dst: &[usize], retained: &[bool]) -> Self {
        let mut t = Topology { other: Vec::new(), via: Vec::new(), target: Vec::new() };
        for (k, _) in retained.iter().enumerate().filter(|(_, &r)| r) {
            t.target.extend([src[k], dst[k]]);
            t.other.extend([dst[k], src[k]]);
            t.via.extend([k, k]);
        }
        t
    }
}

#[allow(clippy::too_many_arguments)]
fn encode_on_tape(
    t: &mut Tape,
    s: &ParamStore,
    layers: usize,
    x: Var,
    e: Var,
    src: &[usize],
    dst: &[usize],
    topo: &Topology,
    n_nodes: usize,
) -> Result<(Var, Var), ModelError> {
    let (mut h, mut e) = (x, e);
    for l in 0..layers {
        let ws = t.param(s, &format!("gcn{l}.ws"))?;
        let bs = t.param(s, &format!("gcn{l}.bs"))?;
        let wn = t.param(s, &format!("gcn{l}.wn"))?;
        let we = t.param(s, &format!("gcn{l}.we"))?;
        let be = t.param(s, &format!("gcn{l}.be"))?;

        let own = t.linear(h, ws, bs)?;
        let ho = t.gather(h, &topo.other)?;
        let ev = t.gather(e, &topo.via)?;
        let msg = t.concat(&[ho, ev])?;
        let agg = t.scatter_mean(msg, &topo.target, n_nodes)?;
        let nb = t.matmul(agg, wn)?;
        let pre = t.add(own, nb)?;
        let h_next = t.relu(pre);

        let hs = t.gather(h, src)?;
        let hd = t.gather(h, dst)?;
        let cat = t.concat(&[hs, e, hd])?;
        let pre = t.linear(cat, we, be)?;
        e = t.relu(pre);
        h = h_next;
    }
    Ok((h, e))
}

impl Model {
    /// Fresh stage-1 parameters.
    pub fn new(config: ModelConfig, catalog: &Catalog) -> Result<Self, ModelError> {
        config.validate()?;
        let c = &config;
        let (hd, init) = (c.d_hidden, c.init);
        let mut s = ParamStore::new(c.seed);
        add_mlp2(&mut s, "exist", c.d_edge, hd, 1, init)?;
        for l in 0..c.gcn_layers {
            let (dn, de) = if l == 0 { (c.d_node, c.d_edge) } else { (hd, hd) };
            s.add(&format!("gcn{l}.ws"), dn, hd, init)?;
            s.add(&format!("gcn{l}.bs"), 1, hd, Init::Zeros)?;
            s.add(&format!("gcn{l}.wn"), dn + de, hd, init)?;
            s.add(&format!("gcn{l}.we"), 2 * dn + de, hd, init)?;
            s.add(&format!("gcn{l}.be"), 1, hd, Init::Zeros)?;
        }
        add_mlp2(&mut s, "spatial", hd, hd, N_SPATIAL, init)?;
        if !c.heads_detached {
            add_mlp2(&mut s, "action", hd, hd, catalog.actions.len(), init)?;
            add_mlp2(&mut s, "hand", hd, hd, catalog.hands.len(), init)?;
        }
        Ok(Model {
            config,
            params: s,
            catalog_hash: catalog.content_hash(),
            task: None,
            task_labels: Vec::new(),
            vocabulary: Vec::new(),
        })
    }

    /// Add a graph-level decoder with one output per label.
    pub fn attach_decoder(&mut self, task: Task, labels: Vec<String>, vocabulary: Vec<TripletLabel>) -> Result<(), ModelError> {
        if labels.is_empty() {
            return Err(ModelError::MissingTaskLabels(task));
        }
        let hd = self.config.d_hidden;
        add_mlp2(&mut self.params, "decoder", 2 * hd, hd, labels.len(), self.config.init)?;
        if self.config.readout == Readout::MeanEdgeMax {
            add_mlp2(&mut self.params, "decoder_edge", 3 * hd, hd, labels.len(), self.config.init)?;
        }
        self.task = Some(task);
        self.task_labels = labels;
        self.vocabulary = vocabulary;
        Ok(())
    }

    pub fn has_decoder(&self) -> bool {
        self.task.is_some()
    }

    pub(crate) fn forward(&self, p: &Prepared) -> Result<Pass, ModelError> {
        let s = &self.params;
        let c = &self.config;
        if p.x.cols() != c.d_node && p.x.rows() > 0 || p.e.cols() != c.d_edge && p.e.rows() > 0 {
            return Err(ModelError::Config(format!(
                "features are {}/{} wide, model expects {}/{}",
                p.x.cols(),
                p.e.cols(),
                c.d_node,
                c.d_edge
            )));
        }
        let x_t = if p.x.rows() == 0 { Tensor::zeros(0, c.d_node) } else { p.x.clone() };
        let e_t = if p.e.rows() == 0 { Tensor::zeros(0, c.d_edge) } else { p.e.clone() };
        let mut t = Tape::new();
        let x = t.input(x_t);
        let e = t.input(e_t);

        let es = t.gather(e, &p.spatial)?;
        let exist_logits = mlp2(&mut t, s, "exist", es)?;
        let exist = t.bce_mean(exist_logits, &p.exist_t)?;
        let scores: Vec<f64> = t.value(exist_logits).data.iter().map(|&z| sigmoid(z)).collect();
        let retained = retention_mask(&p.graph.edges, &scores, c.tau)?;

        let topo = Topology::new(&p.src, &p.dst, &retained);
        let (h, ef) = encode_on_tape(&mut t, s, c.gcn_layers, x, e, &p.src, &p.dst, &topo, p.graph.nodes.len())?;

        let sp = t.gather(ef, &p.spatial)?;
        let spatial_logits = mlp2(&mut t, s, "spatial", sp)?;
        let sup = t.gather(spatial_logits, &p.spatial_sup)?;
        let spatial = t.cross_entropy_mean(sup, &p.spatial_t)?;

        let (mut action, mut action_logits, mut hand, mut hand_logits) = (None, None, None, None);
        if !c.heads_detached {
            let ea = t.gather(ef, &p.action)?;
            let al = mlp2(&mut t, s, "action", ea)?;
            action = Some(t.cross_entropy_mean(al, &p.action_t)?);
            action_logits = Some(al);

            let ht = t.gather(h, &p.tools)?;
            let hl = mlp2(&mut t, s, "hand", ht)?;
            let hsup = t.gather(hl, &p.hand_sup)?;
            hand = Some(t.cross_entropy_mean(hsup, &p.hand_t)?);
            hand_logits = Some(hl);
        }

        let (mut task, mut task_logits) = (None, None);
        if self.task.is_some() {
            let kept: Vec<usize> = retained.iter().enumerate().filter(|(_, &r)| r).map(|(i, _)| i).collect();
            let ek = t.gather(ef, &kept)?;
            let node_mean = t.mean_rows(h);
            let edge_mean = t.mean_rows(ek);
            let readout = t.concat(&[node_mean, edge_mean])?;
            let mut logits = mlp2(&mut t, s, "decoder", readout)?;
            if c.readout == Readout::MeanEdgeMax {
                let ks: Vec<usize> = kept.iter().map(|&k| p.src[k]).collect();
                let kd: Vec<usize> = kept.iter().map(|&k| p.dst[k]).collect();
                let hs = t.gather(h, &ks)?;
                let hd = t.gather(h, &kd)?;
                let rows = t.concat(&[hs, ek, hd])?;
                let per_edge = mlp2(&mut t, s, "decoder_edge", rows)?;
                let peak = t.max_rows(per_edge);
                logits = t.add(logits, peak)?;
            }
            if let Some(target) = &p.task_t {
                task = Some(t.bce_mean(logits, target)?);
            }
            task_logits = Some(logits);
        }

        Ok(Pass {
            tape: t,
            exist,
            spatial,
            action,
            hand,
            task,
            exist_logits,
            spatial_logits,
            action_logits,
            hand_logits,
            task_logits,
            retained,
        })
    }

    pub(crate) fn parts(pass: &Pass) -> LossParts {
        let v = |x: Option<Var>| x.map(|x| pass.tape.scalar(x)).unwrap_or(0.0);
        LossParts {
            edge_exist: pass.tape.scalar(pass.exist),
            spatial: pass.tape.scalar(pass.spatial),
            action: v(pass.action),
            hand: v(pass.hand),
        }
    }

    /// Loss breakdown for one frame, without gradients.
    pub fn frame_loss(&self, p: &Prepared) -> Result<LossBreakdown, ModelError> {
        let pass = self.forward(p)?;
        total_loss(&Self::parts(&pass), self.config.lambda_action, self.config.lambda_hand)
    }

    /// `L_total` plus the task loss (if a decoder and targets exist) for one
    /// frame, with its gradient.
    pub fn objective_and_grads(&self, p: &Prepared) -> Result<(f64, Grads), ModelError> {
        let (parts, task, grads) = self.frame_grads(p, 1.0, 1.0)?;
        let b = total_loss(&parts, self.config.lambda_action, self.config.lambda_hand)?;
        Ok((b.total + task, grads))
    }

    /// Loss terms, task loss, and gradients of `weight * (task + aux)` for one frame.
    ///
    /// `aux` scales the stage-1 composite loss; zero-weighted terms contribute nothing.
    pub(crate) fn frame_grads(&self, p: &Prepared, weight: f64, aux: f64) -> Result<(LossParts, f64, Grads), ModelError> {
        let pass = self.forward(p)?;
        let c = &self.config;
        let mut seeds = vec![(pass.exist, weight * aux), (pass.spatial, weight * aux)];
        if let Some(a) = pass.action {
            seeds.push((a, weight * aux * c.lambda_action));
        }
        if let Some(h) = pass.hand {
            seeds.push((h, weight * aux * c.lambda_hand));
        }
        let mut task = 0.0;
        if let Some(tl) = pass.task {
            seeds.push((tl, weight));
            task = pass.tape.scalar(tl);
        }
        let grads = pass.tape.backward(&seeds);
        Ok((Self::parts(&pass), task, grads))
    }

    /// Task loss for one frame; zero when no decoder or no targets.
    pub(crate) fn frame_task_loss(&self, p: &Prepared) -> Result<(LossParts, f64), ModelError> {
        let pass = self.forward(p)?;
        let task = pass.task.map(|v| pass.tape.scalar(v)).unwrap_or(0.0);
        Ok((Self::parts(&pass), task))
    }

    pub fn predict(&self, p: &Prepared) -> Result<FramePrediction, ModelError> {
        let pass = self.forward(p)?;
        let t = &pass.tape;
        let argmax = |v: Option<Var>| -> Vec<usize> {
            let Some(v) = v else { return Vec::new() };
            let m = t.value(v);
            (0..m.rows())
                .map(|r| {
                    let row = m.row(r);
                    (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
                })
                .collect()
        };
        Ok(FramePrediction {
            exist_probs: t.value(pass.exist_logits).data.iter().map(|&z| sigmoid(z)).collect(),
            retained: pass.retained.clone(),
            spatial: argmax(Some(pass.spatial_logits))
                .into_iter()
                .map(|k| SpatialRelation::from_index(k).expect("3 classes"))
                .collect(),
            actions: argmax(pass.action_logits),
            hands: argmax(pass.hand_logits),
            task: pass
                .task_logits
                .map(|v| t.value(v).data.iter().map(|&z| sigmoid(z)).collect()),
        })
    }

    /// Mean action and hand cross-entropy for one frame (zero when absent).
    pub fn head_losses(&self, p: &Prepared) -> Result<(f64, f64), ModelError> {
        let parts = Self::parts(&self.forward(p)?);
        Ok((parts.action, parts.hand))
    }
}

/// Run the encoder alone over a latent graph.
pub fn encode(g: &LatentGraph, model: &Model) -> Result<Embeddings, ModelError> {
    let c = &model.config;
    let n = g.nodes.len();
    let mut x = Vec::with_capacity(n * c.d_node);
    for node in &g.nodes {
        if node.features.len() != c.d_node {
            return Err(ModelError::Config(format!("node '{}' has {} features, expected {}", node.obj_id, node.features.len(), c.d_node)));
        }
        x.extend_from_slice(&node.features);
    }
    let mut e = Vec::with_capacity(g.edges.len() * c.d_edge);
    for edge in &g.edges {
        if edge.features.len() != c.d_edge {
            return Err(ModelError::Config(format!("edge has {} features, expected {}", edge.features.len(), c.d_edge)));
        }
        e.extend_from_slice(&edge.features);
    }
    let src: Vec<usize> = g.edges.iter().map(|e| e.src).collect();
    let dst: Vec<usize> = g.edges.iter().map(|e| e.dst).collect();
    let mut t = Tape::new();
    let xv = t.input(Tensor::from_vec(n, c.d_node, x)?);
    let ev = t.input(Tensor::from_vec(g.edges.len(), c.d_edge, e)?);
    let topo = Topology::new(&src, &dst, &g.retained);
    let (h, ef) = encode_on_tape(&mut t, &model.params, c.gcn_layers, xv, ev, &src, &dst, &topo, n)?;
    Ok(Embeddings {
        nodes: t.value(h).clone(),
        edges: t.value(ef).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::fixture::ANATOMIES;
    use crate::geometry::BBox;
    use crate::graph::{propose_edges, Edge, GeometricFeatures, Node};
    use crate::schema::{ObjectAnn, TripletAnn};

    fn catalog() -> Catalog {
        Catalog::sg201(&ANATOMIES)
    }

    fn obj(id: &str, kind: Kind, class_index: usize, b: [f64; 4], hand: Option<usize>) -> ObjectAnn {
        ObjectAnn { id: id.into(), kind, class_index, bbox: BBox { x: b[0], y: b[1], w: b[2], h: b[3] }, hand }
    }

    /// One tool touching three anatomies: 4 nodes, 3 action edges, 6 spatial candidates.
    pub(crate) fn small_frame() -> FrameAnnotation {
        FrameAnnotation {
            frame_id: "f0".into(),
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

    fn tiny_config(fp: &GeometricFeatures) -> ModelConfig {
        ModelConfig { d_hidden: 4, seed: 3, ..ModelConfig::for_features(fp) }
    }

    #[test]
    fn zero_init_gives_uniform_cross_entropy() {
        let cat = catalog();
        let fp = GeometricFeatures::new(&cat);
        let cfg = ModelConfig { init: Init::Zeros, ..ModelConfig::for_features(&fp) };
        let model = Model::new(cfg, &cat).unwrap();
        let p = Prepared::new(&small_frame(), &cat, &fp).unwrap();
        let (a, h) = model.head_losses(&p).unwrap();
        assert!((a - 6f64.ln()).abs() < 1e-12, "{a}");
        assert!((h - 3f64.ln()).abs() < 1e-12, "{h}");
    }

    #[test]
    fn empty_frame_contributes_nothing() {
        let cat = catalog();
        let fp = GeometricFeatures::new(&cat);
        let mut f = small_frame();
        f.objects.clear();
        f.triplets.clear();
        let mut model = Model::new(tiny_config(&fp), &cat).unwrap();
        model.attach_decoder(Task::Cvs, vec!["c1".into(), "c2".into(), "c3".into()], vec![]).unwrap();
        let p = Prepared::new(&f, &cat, &fp).unwrap();
        let b = model.frame_loss(&p).unwrap();
        assert_eq!((b.edge_exist, b.spatial, b.action, b.hand), (0.0, 0.0, 0.0, 0.0));
        let pred = model.predict(&p).unwrap();
        assert_eq!(pred.task.unwrap().len(), 3);
        assert!(pred.actions.is_empty() && pred.hands.is_empty());
    }

    /// Straight-line transcription of one GCN layer.
    fn layer_oracle(
        s: &ParamStore,
        l: usize,
        h: &[Vec<f64>],
        e: &[Vec<f64>],
        ends: &[(usize, usize)],
        retained: &[bool],
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let w = |n: &str| s.get(&format!("gcn{l}.{n}")).unwrap().clone();
        let (ws, bs, wn, we, be) = (w("ws"), w("bs"), w("wn"), w("we"), w("be"));
        let hd = ws.cols();
        let affine = |x: &[f64], m: &Tensor, b: Option<&Tensor>| -> Vec<f64> {
            (0..hd)
                .map(|c| {
                    let mut acc = b.map_or(0.0, |b| b.data[c]);
                    for (r, xr) in x.iter().enumerate() {
                        acc += xr * m.get(r, c);
                    }
                    acc
                })
                .collect()
        };
        let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<f64>>();
        let mut h_out = Vec::new();
        for i in 0..h.len() {
            let mut sum = vec![0.0; hd];
            let mut count = 0;
            for (k, &(a, b)) in ends.iter().enumerate() {
                if !retained[k] || (a != i && b != i) {
                    continue;
                }
                let j = if a == i { b } else { a };
                let cat: Vec<f64> = h[j].iter().chain(&e[k]).copied().collect();
                for (s, v) in sum.iter_mut().zip(affine(&cat, &wn, None)) {
                    *s += v;
                }
                count += 1;
            }
            let own = affine(&h[i], &ws, Some(&bs));
            let nb: Vec<f64> = sum.iter().map(|v| if count > 0 { v / count as f64 } else { 0.0 }).collect();
            h_out.push(relu(own.iter().zip(&nb).map(|(a, b)| a + b).collect()));
        }
        let e_out = ends
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| {
                let cat: Vec<f64> = h[a].iter().chain(&e[k]).chain(&h[b]).copied().collect();
                relu(affine(&cat, &we, Some(&be)))
            })
            .collect();
        (h_out, e_out)
    }

    fn line_graph(fp: &GeometricFeatures, retained: Vec<bool>) -> LatentGraph {
        let cat = catalog();
        let f = FrameAnnotation {
            objects: vec![
                obj("a", Kind::Anatomy, 0, [0.0, 0.0, 20.0, 20.0], None),
                obj("b", Kind::Tool, 2, [15.0, 5.0, 20.0, 20.0], Some(0)),
                obj("c", Kind::Anatomy, 1, [30.0, 10.0, 30.0, 20.0], None),
            ],
            triplets: vec![],
            ..small_frame()
        };
        let nodes = crate::graph::build_nodes(&f, &cat, fp).unwrap();
        let mk = |s: usize, d: usize, nodes: &[Node]| Edge {
            src: s,
            dst: d,
            kind: EdgeKind::Spatial,
            features: fp.edge_features(&f, &nodes[s], &nodes[d]).unwrap(),
            spatial_gt: None,
            exist_gt: None,
            action_gt: None,
        };
        let edges = vec![mk(0, 1, &nodes), mk(1, 2, &nodes), mk(0, 2, &nodes)];
        LatentGraph { frame_id: "f".into(), width: f.width, height: f.height, nodes, edges, retained }
    }

    #[test]
    fn encoder_matches_layer_equations() {
        let cat = catalog();
        let fp = GeometricFeatures::new(&cat);
        let model = Model::new(ModelConfig { d_hidden: 5, seed: 11, ..ModelConfig::for_features(&fp) }, &cat).unwrap();
        // a - b - c with the a-c candidate dropped
        let g = line_graph(&fp, vec![true, true, false]);
        let out = encode(&g, &model).unwrap();
        let mut h: Vec<Vec<f64>> = g.nodes.iter().map(|n| n.features.clone()).collect();
        let mut e: Vec<Vec<f64>> = g.edges.iter().map(|e| e.features.clone()).collect();
        let ends: Vec<(usize, usize)> = g.edges.iter().map(|e| (e.src, e.dst)).collect();
        for l in 0..model.config.gcn_layers {
            (h, e) = layer_oracle(&model.params, l, &h, &e, &ends, &g.retained);
        }
        for (i, row) in h.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((out.nodes.get(i, c) - v).abs() < 1e-12);
            }
        }
        for (k, row) in e.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((out.edges.get(k, c) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isolated_node_uses_self_term() {
        let cat = catalog();
        let fp = GeometricFeatures::new(&cat);
        let cfg = ModelConfig { d_hidden: 6, gcn_layers: 1, ..ModelConfig::for_features(&fp) };
        let model = Model::new(cfg, &cat).unwrap();
        let mut g = line_graph(&fp, vec![false, false, false]);
        g.nodes.truncate(1);
        g.edges.clear();
        g.retained.clear();
        let out = encode(&g, &model).unwrap();
        let ws = model.params.get("gcn0.ws").unwrap();
        let x = Tensor::row_vector(g.nodes[0].features.clone());
        let expect: Vec<f64> = x.matmul(ws).unwrap().data.iter().map(|v| v.max(0.0)).collect();
        assert_eq!(out.nodes.data, expect);

        let zero = Model::new(ModelConfig { init: Init::Zeros, ..model.config.clone() }, &cat).unwrap();
        let g3 = line_graph(&fp, vec![true, true, true]);
        let z = encode(&g3, &zero).unwrap();
        assert!(z.nodes.data.iter().chain(&z.edges.data).all(|&v| v == 0.0));
    }

    #[test]
    fn action_logits_only_on_masked_pairs() {
        let cat = catalog();
        let fp = GeometricFeatures::new(&cat);
        let p = Prepared::new(&small_frame(), &cat, &fp).unwrap();
        let model = Model::new(tiny_config(&fp), &cat).unwrap();
        let pred = model.predict(&p).unwrap();
        assert_eq!(pred.actions.len(), 3);
        assert_eq!(pred.hands.len(), 1);
        assert_eq!(pred.spatial.len(), 6);
        for &k in &p.action {
            let e = &p.graph.edges[k];
            assert_eq!(p.graph.nodes[e.src].kind, Kind::Tool);
            assert_eq!(p.graph.nodes[e.dst].kind, Kind::Anatomy);
        }
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let cat = catalog();
        let fp = GeometricFeatures::new(&cat);
        let mut p = Prepared::new(&small_frame(), &cat, &fp).unwrap();
        p.task_t = Some(vec![1.0, 0.0, 1.0]);
        let mut model = Model::new(tiny_config(&fp), &cat).unwrap();
        model.attach_decoder(Task::Cvs, vec!["a".into(), "b".into(), "c".into()], vec![]).unwrap();
        let f = |s: &ParamStore| {
            let m = Model { params: s.clone(), ..model.clone() };
            let (parts, task, g) = m.frame_grads(&p, 1.0, 1.0).unwrap();
            let b = total_loss(&parts, m.config.lambda_action, m.config.lambda_hand).unwrap();
            (b.total + task, g)
        };
        let report = grad_check(f, &model.params, 1e-5);
        assert!(report.max_rel_err < 1e-4, "{report:?}");
        assert_eq!(report.coordinates, model.params.n_values());
    }

    #[test]
    fn retention_follows_threshold() {
        let cat = catalog();
        let fp = GeometricFeatures::new(&cat);
        let p = Prepared::new(&small_frame(), &cat, &fp).unwrap();
        let keep_all = Model::new(ModelConfig { tau: 0.0, ..tiny_config(&fp) }, &cat).unwrap();
        assert!(keep_all.predict(&p).unwrap().retained.iter().all(|&r| r));
        let keep_actions = Model::new(ModelConfig { tau: 1.0, ..tiny_config(&fp) }, &cat).unwrap();
        let r = keep_actions.predict(&p).unwrap().retained;
        let expect: Vec<bool> = p.graph.edges.iter().map(|e| e.kind == EdgeKind::Action).collect();
        assert_eq!(r, expect);
        let g = propose_edges(p.graph.clone(), &keep_actions.predict(&p).unwrap().exist_probs, 1.0).unwrap();
        assert_eq!(g.retained, expect);
    }
}
