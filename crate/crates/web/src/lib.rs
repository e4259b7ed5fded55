//! WebAssembly bindings for the demo page in `www/`.
//!
//! Each export takes plain values and returns a JSON string. The inner
//! functions are ordinary Rust so they can be tested natively.

use serde_json::{json, Value};
use ssg_core::dot::frame_to_dot;
use ssg_core::eval::average_precision;
use ssg_core::geometry::{containment_fraction, iou, spatial_relation, union_box, BBox};
use ssg_core::schema::{frame_triplet_labels, Kind};
use ssg_core::synth::{generate_dataset, SynthConfig};
use wasm_bindgen::prelude::*;

fn bbox(v: [f64; 4]) -> Result<BBox, String> {
    BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

pub fn relation_json(a: [f64; 4], b: [f64; 4], inside_threshold: f64) -> Result<String, String> {
    let (a, b) = (bbox(a)?, bbox(b)?);
    let overlap = a.intersection_area(&b);
    let v = json!({
        "relation": spatial_relation(&a, &b, inside_threshold).name(),
        "overlaps": overlap > 0.0,
        "intersection": overlap,
        "iou": iou(&a, &b),
        "a_in_b": containment_fraction(&a, &b),
        "b_in_a": containment_fraction(&b, &a),
        "union": union_box(&a, &b).as_array(),
    });
    Ok(v.to_string())
}

pub fn synth_frame_json(seed: u64, sigma: f64) -> Result<String, String> {
    let cfg = SynthConfig { train: 1, val: 0, test: 0, seed, sigma, ..SynthConfig::default() };
    let d = generate_dataset(&cfg).map_err(|e| e.to_string())?;
    let (f, cat) = (&d.frames[0], &d.catalog);
    let objects: Vec<Value> = f
        .objects
        .iter()
        .map(|o| {
            json!({
                "id": o.id,
                "kind": o.kind.as_str(),
                "class": cat.classes(o.kind)[o.class_index],
                "bbox": o.bbox.as_array(),
                "hand": o.hand.map(|h| cat.hands[h].clone()),
            })
        })
        .collect();
    let triplets: Vec<String> = frame_triplet_labels(f).iter().map(|t| t.display(cat)).collect();
    let v = json!({
        "frame_id": f.frame_id,
        "width": f.width,
        "height": f.height,
        "objects": objects,
        "tools": f.objects.iter().filter(|o| o.kind == Kind::Tool).count(),
        "triplets": triplets,
        "cvs": f.cvs,
        "dot": frame_to_dot(f, cat),
    });
    Ok(v.to_string())
}

fn parse_list<T>(text: &str, what: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, String> {
    text.split([',', ' ', '\n', '\t'])
        .filter(|s| !s.is_empty())
        .map(|s| parse(s).ok_or_else(|| format!("bad {what} value '{s}'")))
        .collect()
}

/// AP plus the precision/recall point at every rank.
pub fn ap_curve_json(scores: &str, labels: &str) -> Result<String, String> {
    let scores = parse_list(scores, "score", |s| s.parse::<f64>().ok().filter(|v| v.is_finite()))?;
    let labels = parse_list(labels, "label", |s| match s {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    })?;
    if scores.len() != labels.len() {
        return Err(format!("{} scores but {} labels", scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0;
    let curve: Vec<Value> = order
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            hits += labels[i] as usize;
            let recall = if positives == 0 { 0.0 } else { hits as f64 / positives as f64 };
            json!({"rank": k + 1, "index": i, "positive": labels[i], "precision": hits as f64 / (k + 1) as f64, "recall": recall})
        })
        .collect();
    Ok(json!({"ap": average_precision(&scores, &labels), "positives": positives, "curve": curve}).to_string())
}

#[wasm_bindgen]
pub fn box_relation(a: &[f64], b: &[f64], inside_threshold: f64) -> Result<String, JsError> {
    let four = |v: &[f64]| <[f64; 4]>::try_from(v).map_err(|_| JsError::new("a box needs exactly 4 numbers: x, y, w, h"));
    relation_json(four(a)?, four(b)?, inside_threshold).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn synth_frame(seed: u32, sigma: f64) -> Result<String, JsError> {
    synth_frame_json(seed as u64, sigma).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn ap_curve(scores: &str, labels: &str) -> Result<String, JsError> {
    ap_curve_json(scores, labels).map_err(|e| JsError::new(&e))
}
