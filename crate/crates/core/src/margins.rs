//! All-layer margins of small ReLU networks `x ↦ W_p φ(⋯φ(W_1 x)⋯)`.
//!
//! The network is viewed as `2p − 1` layers alternating between matrix
//! products and `max(0, ·)`; layer `i` receives a perturbation `δ_i` scaled
//! by the norm of its input:
//!
//! ```text
//! h_1 = f_1(x) + δ_1 ‖x‖,   h_i = f_i(h_{i−1}) + δ_i ‖h_{i−1}‖
//! ```
//!
//! `m(f, x, y)` is the smallest `‖δ‖` that moves the argmax off `y`. The
//! search here returns a verified misclassifying perturbation, so its value is
//! an upper bound on the true minimum.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::instance::{Classifier, EmpiricalInstance, Label, ShiftInstance};
use crate::rng::seeded;
use crate::TOLERANCE;

/// A bias-free ReLU network. `weights[i]` is `W_{i+1}`, row-major with
/// `dims[i+1]` rows and `dims[i]` columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedforwardNet {
    pub p: usize,
    pub dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
}

impl FeedforwardNet {
    pub fn new(dims: Vec<usize>, weights: Vec<Vec<f64>>) -> Result<Self> {
        let net = Self { p: weights.len(), dims, weights };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(invalid("a network needs at least one weight matrix"));
        }
        if self.dims.len() != self.p + 1 || self.weights.len() != self.p {
            return Err(invalid(format!(
                "p = {} needs {} dims and {} weight matrices, got {} and {}",
                self.p,
                self.p + 1,
                self.p,
                self.dims.len(),
                self.weights.len()
            )));
        }
        if self.dims.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        if self.num_classes() < 2 {
            return Err(invalid("the output layer needs at least two classes"));
        }
        for (i, w) in self.weights.iter().enumerate() {
            if w.len() != self.dims[i + 1] * self.dims[i] {
                return Err(invalid(format!(
                    "weights[{i}] has {} entries, expected {}×{}",
                    w.len(),
                    self.dims[i + 1],
                    self.dims[i]
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("weights[{i}] contains a non-finite entry")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        self.dims[self.p]
    }

    /// Largest layer width, input and output included.
    pub fn max_width(&self) -> usize {
        self.dims.iter().copied().max().unwrap_or(0)
    }

    pub fn frobenius_norms(&self) -> Vec<f64> {
        self.weights.iter().map(|w| norm(w)).collect()
    }

    /// Widths of `δ_1 .. δ_{2p−1}`.
    pub fn perturbation_dims(&self) -> Vec<usize> {
        (0..2 * self.p - 1).map(|i| self.dims[i / 2 + 1]).collect()
    }

    fn matvec(&self, layer: usize, h: &[f64]) -> Vec<f64> {
        let cols = self.dims[layer];
        self.weights[layer].chunks(cols).map(|row| row.iter().zip(h).map(|(a, b)| a * b).sum()).collect()
    }

    /// `f(x, δ)`; `delta = None` gives the unperturbed output.
    pub fn forward(&self, x: &[f64], delta: Option<&[f64]>) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut offset = 0;
        for i in 0..2 * self.p - 1 {
            let scale = norm(&h);
            h = if i % 2 == 0 { self.matvec(i / 2, &h) } else { h.iter().map(|v| v.max(0.0)).collect() };
            if let Some(d) = delta {
                let width = h.len();
                for (v, dv) in h.iter_mut().zip(&d[offset..offset + width]) {
                    *v += dv * scale;
                }
            }
            offset += h.len();
        }
        h
    }

    /// Predicted class (1-based); ties go to the smallest index.
    pub fn predict(&self, x: &[f64]) -> Label {
        argmax(&self.forward(x, None))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let net: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: {
                let p = e.path().to_string();
                if p.is_empty() { "$".into() } else { p }
            },
            message: e.into_inner().to_string(),
        })?;
        net.validate()?;
        Ok(net)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// 1-based argmax, smallest index on ties.
pub fn argmax(v: &[f64]) -> Label {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best as Label + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for MarginOptions {
    fn default() -> Self {
        Self { restarts: 8, max_iters: 200, tol: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginResult {
    pub value: f64,
    /// `‖δ_i‖` at the returned perturbation, `2p − 1` entries.
    pub delta_norms: Vec<f64>,
    /// At least two restarts reached the returned value within `tol`.
    pub converged: bool,
    pub restarts_used: usize,
}

const BOUNDARY_PUSH: f64 = 1e-12;
/// Margins at or below this are reported as exactly 0.
const ZERO_MARGIN: f64 = 1e-9;

struct Problem<'a> {
    net: &'a FeedforwardNet,
    x: &'a [f64],
    y: usize,
}

impl Problem<'_> {
    fn gap(&self, z: &[f64], k: usize) -> f64 {
        let out = self.net.forward(self.x, Some(z));
        out[k] - out[self.y]
    }

    fn flips(&self, z: &[f64]) -> bool {
        argmax(&self.net.forward(self.x, Some(z))) as usize != self.y + 1
    }

    fn gradient(&self, z: &[f64], k: usize) -> Vec<f64> {
        let h = 1e-7 * (1.0 + norm(z));
        let mut probe = z.to_vec();
        (0..z.len())
            .map(|j| {
                let orig = probe[j];
                probe[j] = orig + h;
                let up = self.gap(&probe, k);
                probe[j] = orig - h;
                let down = self.gap(&probe, k);
                probe[j] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// Linearize `gap_k` at the iterate and jump to the closest point of the
    /// linearized boundary, until the iterate stops moving.
    fn project(&self, mut z: Vec<f64>, k: usize, opts: &MarginOptions) -> Vec<f64> {
        for _ in 0..opts.max_iters {
            let f = self.gap(&z, k);
            let g = self.gradient(&z, k);
            let gg: f64 = g.iter().map(|v| v * v).sum();
            if gg < 1e-18 {
                break;
            }
            let gz: f64 = g.iter().zip(&z).map(|(a, b)| a * b).sum();
            // aim just past the boundary so ties at the iterate still move it
            let s = (gz - f + BOUNDARY_PUSH) / gg;
            let next: Vec<f64> = g.iter().map(|v| v * s).collect();
            let moved = norm(&next.iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>());
            z = next;
            if moved < 1e-12 * (1.0 + norm(&z)) {
                break;
            }
        }
        z
    }

    /// Moves along the ray through `z` to the smallest verified flip.
    fn repair(&self, z: &[f64]) -> Option<Vec<f64>> {
        if norm(z) == 0.0 {
            return None;
        }
        let at = |t: f64| z.iter().map(|v| v * t).collect::<Vec<_>>();
        let mut hi = 1.0;
        let mut tries = 0;
        while !self.flips(&at(hi)) {
            hi *= 2.0;
            tries += 1;
            if tries > 20 {
                return None;
            }
        }
        let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.flips(&at(mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(at(hi))
    }

    /// Tangential descent of `‖z‖` along the boundary, each step re-projected.
    fn polish(&self, mut z: Vec<f64>, k: usize, opts: &MarginOptions) -> Vec<f64> {
        let mut step = 0.1 * norm(&z);
        for _ in 0..opts.max_iters {
            if step < 1e-12 {
                break;
            }
            let g = self.gradient(&z, k);
            let gg: f64 = g.iter().map(|v| v * v).sum();
            if gg < 1e-18 {
                break;
            }
            let gz: f64 = g.iter().zip(&z).map(|(a, b)| a * b).sum();
            let tangent: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - b * gz / gg).collect();
            let tn = norm(&tangent);
            if tn < 1e-12 {
                break;
            }
            let trial: Vec<f64> = z.iter().zip(&tangent).map(|(a, b)| a - step * b / tn).collect();
            match self.repair(&self.project(trial, k, &MarginOptions { max_iters: 5, ..*opts })) {
                Some(c) if norm(&c) < norm(&z) => z = c,
                _ => step *= 0.5,
            }
        }
        z
    }
}

/// `m(f, x, y)`: 0 when `f` already predicts a class other than `y`.
pub fn all_layer_margin(net: &FeedforwardNet, x: &[f64], y: Label, opts: &MarginOptions) -> Result<MarginResult> {
    if x.len() != net.input_dim() {
        return Err(invalid(format!("input has {} coordinates, the network expects {}", x.len(), net.input_dim())));
    }
    let k = net.num_classes();
    if y == 0 || y as usize > k {
        return Err(invalid(format!("label {y} outside 1..={k}")));
    }
    let dims = net.perturbation_dims();
    let total: usize = dims.iter().sum();
    if net.predict(x) != y {
        return Ok(MarginResult { value: 0.0, delta_norms: vec![0.0; dims.len()], converged: true, restarts_used: 0 });
    }
    if norm(x) == 0.0 {
        return Err(Error::Degenerate("zero input: every perturbation is scaled by ‖x‖ = 0".into()));
    }
    let prob = Problem { net, x, y: y as usize - 1 };
    let mut rng = seeded(opts.seed);
    let mut values = Vec::new();
    let mut best: Option<Vec<f64>> = None;
    for restart in 0..opts.restarts.max(1) {
        let scale = rng.random_range(0.05..2.0);
        let start: Vec<f64> =
            if restart == 0 { vec![0.0; total] } else { (0..total).map(|_| rng.random_range(-scale..scale)).collect() };
        let mut restart_best: Option<Vec<f64>> = None;
        for target in (0..k).filter(|&c| c != prob.y) {
            let z = prob.project(start.clone(), target, opts);
            let Some(z) = prob.repair(&z) else { continue };
            let z = prob.polish(z, target, opts);
            if restart_best.as_ref().is_none_or(|b| norm(&z) < norm(b)) {
                restart_best = Some(z);
            }
        }
        if let Some(z) = restart_best {
            values.push(norm(&z));
            if best.as_ref().is_none_or(|b| norm(&z) < norm(b)) {
                best = Some(z);
            }
        }
    }
    let Some(z) = best else {
        return Err(Error::Degenerate("no misclassifying perturbation found".into()));
    };
    let mut value = norm(&z);
    if value <= ZERO_MARGIN {
        // flips arbitrarily close to δ = 0: the infimum is 0 (boundary case)
        value = 0.0;
    }
    let agreeing = values.iter().filter(|&&v| v <= value + opts.tol * value.max(1.0)).count();
    let mut delta_norms = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for d in dims {
        delta_norms.push(norm(&z[offset..offset + d]));
        offset += d;
    }
    Ok(MarginResult { value, delta_norms, converged: agreeing >= 2, restarts_used: opts.restarts.max(1) })
}

/// `m_B(f, x) = min_{x' ∈ B(x)} m(f, x', argmax f(x))`.
pub fn robust_margin(net: &FeedforwardNet, x: &[f64], bset: &[Vec<f64>], opts: &MarginOptions) -> Result<MarginResult> {
    if bset.is_empty() {
        return Err(invalid("robust margin needs a nonempty set of transformed inputs"));
    }
    let label = net.predict(x);
    let mut best: Option<MarginResult> = None;
    for cand in bset {
        let r = all_layer_margin(net, cand, label, opts)?;
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    Ok(best.expect("nonempty"))
}

/// Feature vectors of `B(x)` for every point, in ball order.
pub fn ball_features(inst: &ShiftInstance) -> Result<Vec<Vec<Vec<f64>>>> {
    (0..inst.len())
        .map(|x| {
            inst.balls
                .ball(x)
                .iter()
                .map(|&y| {
                    inst.points[y]
                        .features
                        .clone()
                        .ok_or_else(|| invalid(format!("point {y} has no features; margins need feature vectors")))
                })
                .collect()
        })
        .collect()
}

fn features(inst: &ShiftInstance, x: usize) -> Result<&[f64]> {
    inst.points[x]
        .features
        .as_deref()
        .ok_or_else(|| invalid(format!("point {x} has no features; margins need feature vectors")))
}

/// Per-point margins on the empirical supports: `m(f, x, g_tc(x))` on `Ŝ` and `m_B(f, x)` on `½(Ŝ+T̂)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointMargins {
    pub source: Vec<(usize, f64)>,
    pub robust: Vec<(usize, f64)>,
}

pub fn point_margins(
    net: &FeedforwardNet,
    emp: &EmpiricalInstance<'_>,
    teacher: &Classifier,
    bsets: &[Vec<Vec<f64>>],
    opts: &MarginOptions,
) -> Result<PointMargins> {
    let inst = emp.parent;
    let source = emp
        .source
        .support()
        .into_par_iter()
        .map(|x| Ok((x, all_layer_margin(net, features(inst, x)?, teacher.label(x), opts)?.value)))
        .collect::<Result<Vec<_>>>()?;
    let robust = emp
        .mixture()
        .support()
        .into_par_iter()
        .map(|x| Ok((x, robust_margin(net, features(inst, x)?, &bsets[x], opts)?.value)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PointMargins { source, robust })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MarginLosses {
    /// `P_{x∼Ŝ}[m(f, x, g_tc(x)) ≤ t]`.
    pub ls: f64,
    /// `P_{x∼½(Ŝ+T̂)}[m_B(f, x) ≤ t]`.
    pub lr: f64,
}

impl PointMargins {
    pub fn losses(&self, emp: &EmpiricalInstance<'_>, t: f64) -> MarginLosses {
        let mix = emp.mixture();
        let under = |pairs: &[(usize, f64)]| pairs.iter().filter(|(_, m)| *m <= t).map(|(x, _)| *x).collect::<Vec<_>>();
        MarginLosses { ls: emp.source.mass_of(&under(&self.source)), lr: mix.mass_of(&under(&self.robust)) }
    }
}

pub fn empirical_margin_losses(
    net: &FeedforwardNet,
    emp: &EmpiricalInstance<'_>,
    teacher: &Classifier,
    t: f64,
    bsets: &[Vec<Vec<f64>>],
    opts: &MarginOptions,
) -> Result<MarginLosses> {
    if !(t > 0.0) {
        return Err(invalid(format!("margin threshold t must be positive, got {t}")));
    }
    Ok(point_margins(net, emp, teacher, bsets, opts)?.losses(emp, t))
}

/// `Σ_i √q ‖W_i‖_F / (t √n) + √((ln(1/δ) + p ln n) / n)` with every hidden constant set to 1.
/// Diagnostic only.
pub fn complexity_term(net: &FeedforwardNet, t: f64, n: usize, delta: f64) -> Result<f64> {
    if !(t > 0.0) || n == 0 || !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("complexity term needs t > 0, n ≥ 1 and δ ∈ (0, 1)"));
    }
    let n = n as f64;
    let q = net.max_width() as f64;
    let norms: f64 = net.frobenius_norms().iter().map(|w| q.sqrt() * w).sum();
    Ok(norms / (t * n.sqrt()) + (((1.0 / delta).ln() + net.p as f64 * n.ln()) / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub index: usize,
    pub losses: MarginLosses,
    pub all: Vec<MarginLosses>,
}

/// Feasible family member (`lr ≤ μ`) with the smallest `ls`; ties by index.
pub fn margin_constrained_select(
    family: &[FeedforwardNet],
    emp: &EmpiricalInstance<'_>,
    teacher: &Classifier,
    t: f64,
    mu: f64,
    bsets: &[Vec<Vec<f64>>],
    opts: &MarginOptions,
) -> Result<Selection> {
    if family.is_empty() {
        return Err(invalid("empty network family"));
    }
    let all = family
        .iter()
        .map(|net| empirical_margin_losses(net, emp, teacher, t, bsets, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<usize> = None;
    for (i, l) in all.iter().enumerate() {
        if l.lr <= mu + TOLERANCE && best.is_none_or(|b| l.ls < all[b].ls) {
            best = Some(i);
        }
    }
    match best {
        Some(index) => Ok(Selection { index, losses: all[index], all }),
        None => Err(Error::MarginInfeasible { min_lr: all.iter().map(|l| l.lr).fold(f64::INFINITY, f64::min), mu }),
    }
}

/// Finite-sample quantities with every hidden constant set to 1. Diagnostic only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FiniteSampleDiagnostic {
    pub complexity: f64,
    /// `μ + complexity`.
    pub mu_hat: f64,
    /// `(P_Ŝ[m(f*, x, g_tc(x)) ≤ t] − L01^Ŝ(g*, g_tc)) + complexity`.
    pub delta: f64,
}

/// `reference` is the network whose argmax realizes the true labeling.
#[allow(clippy::too_many_arguments)]
pub fn finite_sample_diagnostic(
    reference: &FeedforwardNet,
    emp: &EmpiricalInstance<'_>,
    t: f64,
    mu: f64,
    confidence: f64,
    bsets: &[Vec<Vec<f64>>],
    opts: &MarginOptions,
) -> Result<FiniteSampleDiagnostic> {
    let inst = emp.parent;
    let complexity = complexity_term(reference, t, emp.n, confidence)?;
    let losses = empirical_margin_losses(reference, emp, &inst.teacher, t, bsets, opts)?;
    let wrong: Vec<usize> = (0..inst.len()).filter(|&x| inst.truth.label(x) != inst.teacher.label(x)).collect();
    let l01 = emp.source.mass_of(&wrong);
    Ok(FiniteSampleDiagnostic { complexity, mu_hat: mu + complexity, delta: losses.ls - l01 + complexity })
}
