//! Graphviz rendering of annotated frames: spatial relations as solid
//! undirected edges, annotated actions as dashed tool→anatomy edges.

use std::fmt::Write;

use crate::geometry::{spatial_relation, DEFAULT_INSIDE_THRESHOLD};
use crate::schema::{Catalog, FrameAnnotation, Kind};

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn node_label(frame: &FrameAnnotation, catalog: &Catalog, i: usize) -> String {
    let o = &frame.objects[i];
    let class = catalog.classes(o.kind).get(o.class_index).map(String::as_str).unwrap_or("?");
    match (o.kind, o.hand.and_then(|h| catalog.hands.get(h))) {
        (Kind::Tool, Some(hand)) => format!("{class} ({hand})"),
        _ => class.to_string(),
    }
}

/// Spatial edges join overlapping pairs and carry their relation; action edges
/// come from the frame's targeted triplets.
pub fn frame_to_dot(frame: &FrameAnnotation, catalog: &Catalog) -> String {
    let mut out = String::new();
    writeln!(out, "digraph {} {{", quote(&frame.frame_id)).unwrap();
    for (i, o) in frame.objects.iter().enumerate() {
        let shape = if o.kind == Kind::Tool { "box" } else { "ellipse" };
        writeln!(out, "  {} [label={}, shape={shape}];", quote(&o.id), quote(&node_label(frame, catalog, i))).unwrap();
    }
    let objs = &frame.objects;
    for i in 0..objs.len() {
        for j in i + 1..objs.len() {
            if objs[i].bbox.intersection_area(&objs[j].bbox) > 0.0 {
                let rel = spatial_relation(&objs[i].bbox, &objs[j].bbox, DEFAULT_INSIDE_THRESHOLD);
                writeln!(
                    out,
                    "  {} -> {} [style=solid, dir=none, label={}];",
                    quote(&objs[i].id),
                    quote(&objs[j].id),
                    quote(rel.name())
                )
                .unwrap();
            }
        }
    }
    for t in &frame.triplets {
        let Some(target) = &t.target else { continue };
        let action = catalog.actions.get(t.action).map(String::as_str).unwrap_or("?");
        writeln!(out, "  {} -> {} [style=dashed, label={}];", quote(&t.tool), quote(target), quote(action)).unwrap();
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::ANATOMIES;
    use crate::geometry::BBox;
    use crate::schema::{ObjectAnn, TripletAnn};

    fn frame(objects: Vec<ObjectAnn>, triplets: Vec<TripletAnn>) -> FrameAnnotation {
        FrameAnnotation { frame_id: "f1".into(), video_id: "v".into(), width: 100.0, height: 100.0, objects, triplets, cvs: None }
    }

    #[test]
    fn one_dissect_edge() {
        let cat = Catalog::sg201(&ANATOMIES);
        let f = frame(
            vec![
                ObjectAnn { id: "t0".into(), kind: Kind::Tool, class_index: 0, bbox: BBox { x: 0.0, y: 0.0, w: 30.0, h: 30.0 }, hand: Some(0) },
                ObjectAnn { id: "a0".into(), kind: Kind::Anatomy, class_index: 1, bbox: BBox { x: 20.0, y: 10.0, w: 30.0, h: 30.0 }, hand: None },
            ],
            vec![TripletAnn { tool: "t0".into(), action: 0, target: Some("a0".into()) }],
        );
        let dot = frame_to_dot(&f, &cat);
        let dashed: Vec<&str> = dot.lines().filter(|l| l.contains("style=dashed")).collect();
        assert_eq!(dashed, vec!["  \"t0\" -> \"a0\" [style=dashed, label=\"Dissect\"];"]);
        assert!(dot.contains("label=\"Hook (Rt)\""));
        assert!(dot.contains("label=\"hepatocystic_triangle\""));
        assert_eq!(dot.lines().filter(|l| l.contains("style=solid")).count(), 1);
    }

    #[test]
    fn empty_frame_has_empty_body() {
        let cat = Catalog::sg201(&ANATOMIES);
        assert_eq!(frame_to_dot(&frame(vec![], vec![]), &cat), "digraph \"f1\" {\n}\n");
    }

    #[test]
    fn quoting() {
        assert_eq!(quote("a\"b"), "\"a\\\"b\"");
    }
}
