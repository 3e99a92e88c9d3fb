//! JSON instance file format.
//!
//! ```json
//! {"K": 2,
//!  "points": [{"id": 0, "features": [0.0, 1.0]}, ...],
//!  "components": [{"label": 1, "S": [0], "T": [1], "U": [0, 1]}, ...],
//!  "S_weights": {"0": "1/2", ...}, "T_weights": {...}, "U_weights": {...},
//!  "B": {"0": [0, 1], ...},
//!  "teacher": {"0": 1, ...},
//!  "truth": {"0": 1, ...}}
//! ```
//!
//! Weights are numbers or exact rationals written as `"p/q"`. `U`,
//! `U_weights` and `truth` are optional. Points missing from `B` get `B(x) = {x}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Classifier, Component, Label, Measure, NeighborhoodRelation, Point, ShiftInstance};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    #[serde(rename = "K")]
    pub k: u32,
    pub points: Vec<PointEntry>,
    pub components: Vec<ComponentEntry>,
    #[serde(rename = "S_weights")]
    pub s_weights: BTreeMap<String, Weight>,
    #[serde(rename = "T_weights")]
    pub t_weights: BTreeMap<String, Weight>,
    #[serde(rename = "U_weights", default, skip_serializing_if = "Option::is_none")]
    pub u_weights: Option<BTreeMap<String, Weight>>,
    #[serde(rename = "B")]
    pub balls: BTreeMap<String, Vec<usize>>,
    pub teacher: BTreeMap<String, Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<BTreeMap<String, Label>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointEntry {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentEntry {
    pub label: Label,
    #[serde(rename = "S")]
    pub source: Vec<usize>,
    #[serde(rename = "T")]
    pub target: Vec<usize>,
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    pub cover: Option<Vec<usize>>,
}

/// A probability weight: a JSON number or a `"p/q"` / decimal string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weight {
    Number(f64),
    Text(String),
}

impl Weight {
    pub fn value(&self) -> std::result::Result<f64, String> {
        match self {
            Weight::Number(v) => Ok(*v),
            Weight::Text(s) => parse_rational(s),
        }
    }
}

/// Parses `"p/q"` or a plain decimal string.
pub fn parse_rational(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    match s.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
            let q: f64 = q.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
            if q == 0.0 {
                return Err(format!("zero denominator in {s:?}"));
            }
            Ok(p / q)
        }
        None => s.parse().map_err(|_| format!("not a number or p/q rational: {s:?}")),
    }
}

fn parse_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse { path: path.into(), message: message.into() }
}

fn point_key(field: &str, key: &str, n: usize) -> Result<usize> {
    let id: usize = key
        .parse()
        .map_err(|_| parse_err(format!("{field}.{key}"), "key is not a point id"))?;
    if id >= n {
        return Err(parse_err(format!("{field}.{key}"), format!("point id {id} outside 0..{n}")));
    }
    Ok(id)
}

fn dense_weights(field: &str, map: &BTreeMap<String, Weight>, n: usize) -> Result<Measure> {
    let mut w = vec![0.0; n];
    for (key, weight) in map {
        let id = point_key(field, key, n)?;
        w[id] = weight.value().map_err(|m| parse_err(format!("{field}.{key}"), m))?;
    }
    Measure::new(w).map_err(|e| parse_err(field, e.to_string()))
}

fn dense_labels(field: &str, map: &BTreeMap<String, Label>, n: usize, k: u32) -> Result<Classifier> {
    let mut labels = vec![0; n];
    for (key, &label) in map {
        labels[point_key(field, key, n)?] = label;
    }
    if let Some(x) = labels.iter().position(|&l| l == 0) {
        return Err(parse_err(format!("{field}.{x}"), "labeling must be total"));
    }
    Classifier::new(labels, k).map_err(|e| parse_err(field, e.to_string()))
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<ShiftInstance> {
        let n = self.points.len();
        let mut points = Vec::with_capacity(n);
        for (pos, p) in self.points.into_iter().enumerate() {
            if p.id != pos {
                return Err(parse_err(format!("points[{pos}].id"), format!("ids must be dense and ordered, found {}", p.id)));
            }
            points.push(Point { id: p.id, features: p.features });
        }
        let mut components = Vec::with_capacity(self.components.len());
        for (i, c) in self.components.into_iter().enumerate() {
            for (field, ids) in [("S", &c.source), ("T", &c.target)].into_iter().chain(c.cover.as_ref().map(|u| ("U", u))) {
                if let Some(&bad) = ids.iter().find(|&&x| x >= n) {
                    return Err(parse_err(format!("components[{i}].{field}"), format!("point id {bad} outside 0..{n}")));
                }
            }
            components.push(Component::new(c.label, c.source, c.target, c.cover));
        }
        let source = dense_weights("S_weights", &self.s_weights, n)?;
        let target = dense_weights("T_weights", &self.t_weights, n)?;
        let cover = match &self.u_weights {
            Some(u) => Some(dense_weights("U_weights", u, n)?),
            None => None,
        };
        let mut balls: Vec<Vec<usize>> = (0..n).map(|x| vec![x]).collect();
        for (key, ball) in &self.balls {
            let id = point_key("B", key, n)?;
            if let Some(&bad) = ball.iter().find(|&&y| y >= n) {
                return Err(parse_err(format!("B.{key}"), format!("point id {bad} outside 0..{n}")));
            }
            balls[id] = ball.clone();
        }
        let balls = NeighborhoodRelation::new(balls).map_err(|e| parse_err("B", e.to_string()))?;
        let teacher = dense_labels("teacher", &self.teacher, n, self.k)?;
        let truth = match &self.truth {
            Some(t) => Some(dense_labels("truth", t, n, self.k)?),
            None => None,
        };
        ShiftInstance::new(self.k, points, components, source, target, cover, balls, teacher, truth)
    }

    pub fn from_instance(inst: &ShiftInstance) -> Self {
        let sparse = |m: &Measure| -> BTreeMap<String, Weight> {
            m.support().into_iter().map(|x| (x.to_string(), Weight::Number(m.weight(x)))).collect()
        };
        let labels = |c: &Classifier| -> BTreeMap<String, Label> {
            c.labels().iter().enumerate().map(|(x, &l)| (x.to_string(), l)).collect()
        };
        Self {
            k: inst.num_classes,
            points: inst.points.iter().map(|p| PointEntry { id: p.id, features: p.features.clone() }).collect(),
            components: inst
                .components
                .iter()
                .map(|c| ComponentEntry {
                    label: c.label,
                    source: c.source.clone(),
                    target: c.target.clone(),
                    cover: c.cover.clone(),
                })
                .collect(),
            s_weights: sparse(&inst.source),
            t_weights: sparse(&inst.target),
            u_weights: inst.cover.as_ref().map(sparse),
            balls: inst.balls.balls().iter().enumerate().map(|(x, b)| (x.to_string(), b.clone())).collect(),
            teacher: labels(&inst.teacher),
            truth: Some(labels(&inst.truth)),
        }
    }
}

/// Parses an instance from JSON text; errors name the JSON path at fault.
pub fn instance_from_json(text: &str) -> Result<ShiftInstance> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: InstanceFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        parse_err(if path.is_empty() { "$".to_string() } else { path }, e.into_inner().to_string())
    })?;
    file.into_instance()
}

pub fn instance_to_json(inst: &ShiftInstance) -> String {
    crate::report::to_canonical_json(&InstanceFile::from_instance(inst)).expect("instance serializes")
}

pub fn read_instance(path: &Path) -> Result<ShiftInstance> {
    let text = std::fs::read_to_string(path)?;
    instance_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn rationals() {
        assert_eq!(parse_rational("1/4"), Ok(0.25));
        assert_eq!(parse_rational(" 3 / 4 "), Ok(0.75));
        assert_eq!(parse_rational("0.5"), Ok(0.5));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("a/b").is_err());
    }

    #[test]
    fn shipped_fixture_files_match_constructors() {
        for (name, inst) in fixtures::all() {
            let parsed = instance_from_json(fixtures::json(name).unwrap()).unwrap();
            assert_eq!(parsed, inst, "{name}");
        }
    }

    #[test]
    fn round_trip_through_text() {
        let inst = fixtures::chain();
        let back = instance_from_json(&instance_to_json(&inst)).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn error_names_path() {
        let text = fixtures::json("pair4").unwrap().replace("\"teacher\"", "\"teacher\": {\"0\": \"x\"}, \"old\"");
        let err = instance_from_json(&text).unwrap_err().to_string();
        assert!(err.contains("teacher"), "{err}");

        let text = fixtures::json("pair4").unwrap().replacen("\"1/2\"", "\"1/zero\"", 1);
        let err = instance_from_json(&text).unwrap_err().to_string();
        assert!(err.contains("S_weights.0"), "{err}");
    }

    #[test]
    fn missing_truth_is_derived() {
        let mut file = InstanceFile::from_instance(&fixtures::pair4());
        file.truth = None;
        let inst = file.into_instance().unwrap();
        assert_eq!(inst.truth, fixtures::pair4().truth);
    }
}
