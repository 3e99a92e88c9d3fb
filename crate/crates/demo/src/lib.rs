//! Browser front end over `subshift-core`.
//!
//! Three operations, each returning JSON text so the page stays framework-free:
//! [`explore`] generates a scenario and measures its expansion, [`bound_curve`]
//! solves and audits one instance over a range of `mu`, and [`margin_field`]
//! samples the all-layer margin of a toy network over the plane.

use serde::Serialize;
use subshift_core::audit::{lemma_audit, multiplicative_evidence, AuditReport, ExpansionParam};
use subshift_core::expansion::{best_multiplicative_c, BestConstant, RefKind, RefMeasure};
use subshift_core::format::{instance_from_json, instance_to_json};
use subshift_core::margins::{all_layer_margin, MarginOptions};
use subshift_core::propagation::{solve_constrained, HypothesisClass, SolveOptions};
use subshift_core::scenarios::{gen_scenario, ScenarioParams};
use subshift_core::{fixtures, validate_instance, AssumptionReport, Label, ShiftInstance};
use wasm_bindgen::prelude::*;

const CAP: usize = 20;
/// Square sampled by [`margin_field`].
pub const FIELD_EXTENT: f64 = 2.0;

#[derive(Serialize)]
struct PointView {
    id: usize,
    component: Option<usize>,
    source: f64,
    target: f64,
    cover: Option<f64>,
    teacher: Label,
    truth: Label,
    ball: Vec<usize>,
}

#[derive(Serialize)]
struct Exploration {
    instance: String,
    reference: &'static str,
    points: Vec<PointView>,
    assumptions: AssumptionReport,
    expansion: BestConstant,
}

#[derive(Serialize)]
struct CurvePoint {
    mu: f64,
    bound: Option<f64>,
    epsilon_t: Option<f64>,
    rb: Option<f64>,
    pass: bool,
    chosen: Vec<Label>,
    error: Option<String>,
}

fn reference(inst: &ShiftInstance) -> Result<(RefMeasure, &'static str), String> {
    let (kind, name) = if inst.cover.is_some() { (RefKind::CoverU, "cover") } else { (RefKind::MixtureSt, "mixture") };
    RefMeasure::resolve(inst, kind).map(|rm| (rm, name)).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

fn load(source: &str) -> Result<ShiftInstance, String> {
    match fixtures::by_name(source.trim()) {
        Some(inst) => Ok(inst),
        None if source.trim_start().starts_with('{') => instance_from_json(source).map_err(|e| e.to_string()),
        None => Err(format!("{:?} is not a scenario kind, fixture name or instance JSON", source.trim())),
    }
}

/// Builds an instance from a fixture name, a scenario kind, or instance JSON,
/// and reports its layout, assumptions and `c*` at `a = 1/2`.
pub fn explore_json(source: &str, seed: u64, m: usize, k: u32, teacher_error_rate: f64) -> Result<String, String> {
    let inst = match source.trim().parse() {
        Ok(kind) => {
            let p = ScenarioParams { m, k, teacher_error_rate, ..ScenarioParams::new(kind, seed) };
            gen_scenario(&p).map_err(|e| e.to_string())?
        }
        Err(_) => load(source)?,
    };
    let (rm, name) = reference(&inst)?;
    let points = (0..inst.len())
        .map(|x| PointView {
            id: x,
            component: inst.components.iter().position(|c| c.source.contains(&x) || c.target.contains(&x) || c.cover.as_ref().is_some_and(|u| u.contains(&x))),
            source: inst.source.weight(x),
            target: inst.target.weight(x),
            cover: inst.cover.as_ref().map(|u| u.weight(x)),
            teacher: inst.teacher.label(x),
            truth: inst.truth.label(x),
            ball: inst.balls.ball(x).to_vec(),
        })
        .collect();
    let assumptions = validate_instance(&inst).map_err(|e| e.to_string())?;
    let expansion = best_multiplicative_c(&inst, &rm, 0.5, CAP).map_err(|e| e.to_string())?;
    to_json(&Exploration { instance: instance_to_json(&inst), reference: name, points, assumptions, expansion })
}

fn audit_at(inst: &ShiftInstance, rm: &RefMeasure, mu: f64) -> Result<(Vec<Label>, AuditReport), String> {
    let solve = solve_constrained(inst, &HypothesisClass::AllLabelings, mu, rm, &SolveOptions::default())
        .map_err(|e| e.to_string())?;
    let evidence = multiplicative_evidence(inst, rm, CAP).map_err(|e| e.to_string())?;
    if let ExpansionParam::Multiplicative { c } = evidence.param {
        if !c.exceeds_one() {
            return Err(format!("no multiplicative expansion (c* = {c:?})"));
        }
    }
    let audit = lemma_audit(inst, &solve.chosen, mu, rm, &evidence).map_err(|e| e.to_string())?;
    Ok((solve.chosen.labels().to_vec(), audit))
}

/// Solves and audits the instance at each `mu`; failures become rows with an error.
pub fn bound_curve_json(instance: &str, mus: &[f64]) -> Result<String, String> {
    let inst = load(instance)?;
    let (rm, _) = reference(&inst)?;
    let rows: Vec<CurvePoint> = mus
        .iter()
        .map(|&mu| match audit_at(&inst, &rm, mu) {
            Ok((chosen, a)) => CurvePoint {
                mu,
                bound: Some(a.theorem.rhs),
                epsilon_t: Some(a.epsilon_t),
                rb: Some(a.rb),
                pass: a.all_pass(),
                chosen,
                error: None,
            },
            Err(e) => CurvePoint { mu, bound: None, epsilon_t: None, rb: None, pass: false, chosen: vec![], error: Some(e) },
        })
        .collect();
    to_json(&rows)
}

/// Names of the bundled two-input networks, in index order.
pub fn net_names() -> Vec<String> {
    fixtures::toy_nets().into_iter().map(|(n, _)| n.to_string()).collect()
}

/// Row-major `n × n` grid of `m(f, x, y)` at the cell centres of `[-2, 2]²`,
/// first row at the top. Inputs where the margin is undefined (`x = 0`) give NaN.
pub fn margin_grid(net: usize, label: Label, n: usize) -> Result<Vec<f64>, String> {
    let nets = fixtures::toy_nets();
    let (_, f) = nets.get(net).ok_or_else(|| format!("no network {net}; {} available", nets.len()))?;
    if n == 0 || label == 0 || label as usize > f.num_classes() {
        return Err(format!("need n >= 1 and a label in 1..={}", f.num_classes()));
    }
    let opts = MarginOptions { restarts: 2, max_iters: 60, ..MarginOptions::default() };
    let step = 2.0 * FIELD_EXTENT / n as f64;
    let centre = |i: usize| -FIELD_EXTENT + (i as f64 + 0.5) * step;
    let mut out = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let x = [centre(col), -centre(row)];
            out.push(all_layer_margin(f, &x, label, &opts).map_or(f64::NAN, |r| r.value));
        }
    }
    Ok(out)
}

// wasm-facing wrappers

#[wasm_bindgen]
pub fn explore(source: &str, seed: u32, m: u32, k: u32, teacher_error_rate: f64) -> Result<String, JsError> {
    explore_json(source, seed as u64, m as usize, k, teacher_error_rate).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn bound_curve(instance: &str, mus: Vec<f64>) -> Result<String, JsError> {
    bound_curve_json(instance, &mus).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn margin_field(net: u32, label: u32, n: u32) -> Result<Vec<f64>, JsError> {
    margin_grid(net as usize, label, n as usize).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn networks() -> String {
    net_names().join(",")
}
