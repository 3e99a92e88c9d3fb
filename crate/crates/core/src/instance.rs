//! Finite subpopulation-shift instances and the assumption validator.
//!
//! A [`ShiftInstance`] is a finite point space together with a component
//! structure `(S_i, T_i, U_i, y_i)`, source/target/cover measures, the
//! transformation balls `B(x)`, a teacher and the ground truth. Everything is
//! immutable once built; operations are pure functions over it.

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, structural, Result};
use crate::rng::seeded;

/// Class label in `1..=K`.
pub type Label = u32;

/// Total-mass tolerance for a probability measure.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Point {
    pub id: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

/// A probability measure over the point space, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct Measure {
    weights: Vec<f64>,
}

impl Measure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        for (x, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(structural(format!("weight of point {x} is {w}; weights must be finite and non-negative")));
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(structural(format!("measure has total mass {total}, expected 1 within {MASS_TOLERANCE}")));
        }
        Ok(Self { weights })
    }

    /// Uniform measure on `support` within a space of `n` points.
    pub fn uniform(n: usize, support: &[usize]) -> Result<Self> {
        if support.is_empty() {
            return Err(invalid("uniform measure needs a nonempty support"));
        }
        let mut weights = vec![0.0; n];
        let w = 1.0 / support.len() as f64;
        for &x in support {
            if x >= n {
                return Err(structural(format!("support point {x} outside space of {n} points")));
            }
            weights[x] = w;
        }
        Self::new(weights)
    }

    /// Normalizes arbitrary non-negative masses.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(invalid("cannot normalize a measure with zero or non-finite total mass"));
        }
        Self::new(raw.into_iter().map(|w| w / total).collect())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, x: usize) -> f64 {
        self.weights[x]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mass of a set. Sums in the order given; pass ascending ids for the
    /// canonical summation order used throughout the crate.
    pub fn mass_of<'a>(&self, ids: impl IntoIterator<Item = &'a usize>) -> f64 {
        ids.into_iter().fold(0.0, |acc, &x| acc + self.weights[x])
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&x| self.weights[x] > 0.0).collect()
    }

    /// Pointwise average of two measures on the same space.
    pub fn average(a: &Measure, b: &Measure) -> Measure {
        debug_assert_eq!(a.len(), b.len());
        Measure {
            weights: a.weights.iter().zip(&b.weights).map(|(x, y)| (x + y) / 2.0).collect(),
        }
    }

    pub fn sup_distance(&self, other: &Measure) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// One subpopulation: source/target supports, optional cover support and its label.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Component {
    pub label: Label,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cover: Option<Vec<usize>>,
}

impl Component {
    pub fn new(label: Label, source: Vec<usize>, target: Vec<usize>, cover: Option<Vec<usize>>) -> Self {
        Self {
            label,
            source: sorted_set(source),
            target: sorted_set(target),
            cover: cover.map(sorted_set),
        }
    }

    /// `S_i ∪ T_i`, ascending.
    pub fn source_target_union(&self) -> Vec<usize> {
        sorted_set(self.source.iter().chain(&self.target).copied().collect())
    }
}

pub(crate) fn sorted_set(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

/// The transformation sets `B(x)`; every ball contains its center.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodRelation {
    balls: Vec<Vec<usize>>,
}

impl NeighborhoodRelation {
    pub fn new(balls: Vec<Vec<usize>>) -> Result<Self> {
        let n = balls.len();
        let balls: Vec<Vec<usize>> = balls.into_iter().map(sorted_set).collect();
        for (x, ball) in balls.iter().enumerate() {
            if let Some(&bad) = ball.iter().find(|&&y| y >= n) {
                return Err(structural(format!("B({x}) contains {bad}, outside space of {n} points")));
            }
            if ball.binary_search(&x).is_err() {
                return Err(structural(format!("B({x}) must contain {x}")));
            }
        }
        Ok(Self { balls })
    }

    /// `B(x) = {x}` for every point.
    pub fn identity(n: usize) -> Self {
        Self { balls: (0..n).map(|x| vec![x]).collect() }
    }

    pub fn ball(&self, x: usize) -> &[usize] {
        &self.balls[x]
    }

    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    pub fn balls(&self) -> &[Vec<usize>] {
        &self.balls
    }

    /// Whether `B(x) ∩ B(y) ≠ ∅`.
    pub fn overlap(&self, x: usize, y: usize) -> bool {
        let (a, b) = (&self.balls[x], &self.balls[y]);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }
}

/// A total labeling of the point space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Classifier {
    labels: Vec<Label>,
}

impl Classifier {
    pub fn new(labels: Vec<Label>, num_classes: u32) -> Result<Self> {
        if let Some((x, &l)) = labels.iter().enumerate().find(|(_, &l)| l == 0 || l > num_classes) {
            return Err(structural(format!("label {l} of point {x} outside 1..={num_classes}")));
        }
        Ok(Self { labels })
    }

    pub fn constant(n: usize, label: Label) -> Self {
        Self { labels: vec![label; n] }
    }

    pub fn label(&self, x: usize) -> Label {
        self.labels[x]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copy with one point relabeled.
    pub fn with_label(&self, x: usize, label: Label) -> Self {
        let mut labels = self.labels.clone();
        labels[x] = label;
        Self { labels }
    }

    pub(crate) fn from_raw(labels: Vec<Label>) -> Self {
        Self { labels }
    }
}

/// Full setting: space, components, measures, balls, teacher and truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftInstance {
    pub num_classes: u32,
    pub points: Vec<Point>,
    pub components: Vec<Component>,
    pub source: Measure,
    pub target: Measure,
    pub cover: Option<Measure>,
    pub balls: NeighborhoodRelation,
    pub teacher: Classifier,
    pub truth: Classifier,
}

impl ShiftInstance {
    /// Builds an instance and checks that it is structurally well formed.
    /// Assumption-level defects (overlaps, margin) are left to [`validate_instance`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_classes: u32,
        points: Vec<Point>,
        components: Vec<Component>,
        source: Measure,
        target: Measure,
        cover: Option<Measure>,
        balls: NeighborhoodRelation,
        teacher: Classifier,
        truth: Option<Classifier>,
    ) -> Result<Self> {
        let n = points.len();
        let truth = match truth {
            Some(t) => t,
            None => derive_truth(n, &components),
        };
        let inst = Self { num_classes, points, components, source, target, cover, balls, teacher, truth };
        inst.check_structure()?;
        Ok(inst)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn check_structure(&self) -> Result<()> {
        let n = self.points.len();
        if self.num_classes == 0 {
            return Err(structural("K must be at least 1"));
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.id != i {
                return Err(structural(format!("point ids must be dense: position {i} holds id {}", p.id)));
            }
        }
        for (name, m) in [("S", Some(&self.source)), ("T", Some(&self.target)), ("U", self.cover.as_ref())] {
            if let Some(m) = m {
                if m.len() != n {
                    return Err(structural(format!("measure {name} has {} entries for {n} points", m.len())));
                }
                // Re-run the measure checks in case fields were edited directly.
                Measure::new(m.weights.clone())?;
            }
        }
        if self.balls.len() != n {
            return Err(structural(format!("B has {} balls for {n} points", self.balls.len())));
        }
        for (name, c) in [("teacher", &self.teacher), ("truth", &self.truth)] {
            if c.len() != n {
                return Err(structural(format!("{name} labels {} points of {n}", c.len())));
            }
            Classifier::new(c.labels.clone(), self.num_classes)?;
        }
        for (i, comp) in self.components.iter().enumerate() {
            if comp.label == 0 || comp.label > self.num_classes {
                return Err(structural(format!("component {i} label {} outside 1..={}", comp.label, self.num_classes)));
            }
            let all = comp.source.iter().chain(&comp.target).chain(comp.cover.iter().flatten());
            if let Some(&bad) = all.clone().find(|&&x| x >= n) {
                return Err(structural(format!("component {i} references point {bad} outside space of {n}")));
            }
        }
        Ok(())
    }
}

/// Ground truth derived from component labels; points outside every component get class 1.
pub fn derive_truth(n: usize, components: &[Component]) -> Classifier {
    let mut labels = vec![1; n];
    for comp in components {
        for &x in comp.source.iter().chain(&comp.target).chain(comp.cover.iter().flatten()) {
            if x < n {
                labels[x] = comp.label;
            }
        }
    }
    Classifier::from_raw(labels)
}

/// γ, r, κ and the list of broken structural assumptions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// Largest valid teacher margin, `min_i` of the per-component margins.
    pub gamma: f64,
    pub component_gamma: Vec<f64>,
    #[serde(serialize_with = "crate::report::extended_f64")]
    pub r: f64,
    /// Global covering constant `max_x max(S(x), T(x)) / U(x)`; U defaults to ½(S+T).
    #[serde(serialize_with = "crate::report::extended_f64")]
    pub kappa: f64,
    pub violations: Vec<String>,
}

impl AssumptionReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `P_{S_i}(g_tc = y_i) − max_{k≠y_i} P_{S_i}(g_tc = k)`, or `None` for a massless `S_i`.
pub fn component_margin(inst: &ShiftInstance, i: usize) -> Option<f64> {
    let comp = &inst.components[i];
    let total = inst.source.mass_of(&comp.source);
    if total <= 0.0 {
        return None;
    }
    let mut per_class = vec![0.0; inst.num_classes as usize + 1];
    for &x in &comp.source {
        per_class[inst.teacher.label(x) as usize] += inst.source.weight(x);
    }
    let own = per_class[comp.label as usize] / total;
    let best_other = (1..=inst.num_classes)
        .filter(|&k| k != comp.label)
        .map(|k| per_class[k as usize] / total)
        .fold(0.0, f64::max);
    Some(own - best_other)
}

/// The reference cover used for κ: `U` when present, else `½(S+T)`.
pub fn cover_or_mixture(inst: &ShiftInstance) -> Measure {
    inst.cover.clone().unwrap_or_else(|| mixture_measure(inst))
}

/// `max_x max(S(x), T(x)) / U(x)` over points charged by S or T.
pub fn covering_constant(inst: &ShiftInstance, cover: &Measure) -> f64 {
    let mut kappa: f64 = 0.0;
    for x in 0..inst.len() {
        let top = inst.source.weight(x).max(inst.target.weight(x));
        if top <= 0.0 {
            continue;
        }
        let u = cover.weight(x);
        if u <= 0.0 {
            return f64::INFINITY;
        }
        kappa = kappa.max(top / u);
    }
    kappa
}

/// `max_i P_T[T_i] / P_S[S_i]`.
pub fn population_ratio(inst: &ShiftInstance) -> f64 {
    let mut r: f64 = 0.0;
    for comp in &inst.components {
        let s = inst.source.mass_of(&comp.source);
        let t = inst.target.mass_of(&comp.target);
        if t <= 0.0 {
            continue;
        }
        if s <= 0.0 {
            return f64::INFINITY;
        }
        r = r.max(t / s);
    }
    r
}

pub fn validate_instance(inst: &ShiftInstance) -> Result<AssumptionReport> {
    inst.check_structure()?;
    let n = inst.len();
    let m = inst.num_components();
    let mut violations = Vec::new();

    let disjoint = |a: &[usize], b: &[usize]| a.iter().find(|x| b.binary_search(x).is_ok()).copied();
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let (ci, cj) = (&inst.components[i], &inst.components[j]);
            if i < j {
                if let Some(x) = disjoint(&ci.source, &cj.source) {
                    violations.push(format!("S_{i} and S_{j} share point {x}"));
                }
                if let Some(x) = disjoint(&ci.target, &cj.target) {
                    violations.push(format!("T_{i} and T_{j} share point {x}"));
                }
                if let (Some(ui), Some(uj)) = (&ci.cover, &cj.cover) {
                    if let Some(x) = disjoint(ui, uj) {
                        violations.push(format!("U_{i} and U_{j} share point {x}"));
                    }
                }
            }
            if let Some(x) = disjoint(&ci.source, &cj.target) {
                violations.push(format!("S_{i} and T_{j} share point {x}"));
            }
        }
    }

    check_support(&mut violations, "S", &inst.source, inst.components.iter().map(|c| c.source.as_slice()), n);
    check_support(&mut violations, "T", &inst.target, inst.components.iter().map(|c| c.target.as_slice()), n);
    match &inst.cover {
        Some(cover) => {
            let mut sets = Vec::with_capacity(m);
            for (i, comp) in inst.components.iter().enumerate() {
                match &comp.cover {
                    Some(u) => {
                        if let Some(x) = comp.source.iter().chain(&comp.target).find(|x| u.binary_search(x).is_err()) {
                            violations.push(format!("S_{i} ∪ T_{i} ⊄ U_{i}: point {x} missing"));
                        }
                        sets.push(u.as_slice());
                    }
                    None => violations.push(format!("U measure present but component {i} has no U_{i}")),
                }
            }
            check_support(&mut violations, "U", cover, sets.into_iter(), n);
        }
        None => {
            if inst.components.iter().any(|c| c.cover.is_some()) {
                violations.push("components declare U_i but no U measure is given".to_string());
            }
        }
    }

    for (i, comp) in inst.components.iter().enumerate() {
        let members = comp.source.iter().chain(&comp.target).chain(comp.cover.iter().flatten());
        if let Some(&x) = members.clone().find(|&&x| inst.truth.label(x) != comp.label) {
            violations.push(format!(
                "ground truth is not constant on component {i}: g*({x}) = {} ≠ y_{i} = {}",
                inst.truth.label(x),
                comp.label
            ));
        }
    }

    let mut component_gamma = Vec::with_capacity(m);
    for i in 0..m {
        match component_margin(inst, i) {
            Some(g) => {
                if g <= 0.0 {
                    violations.push(format!("teacher margin on component {i} is {g} ≤ 0"));
                }
                component_gamma.push(g);
            }
            None => {
                violations.push(format!("S_{i} carries no source mass"));
                component_gamma.push(f64::NAN);
            }
        }
    }
    let gamma = component_gamma.iter().copied().filter(|g| !g.is_nan()).fold(f64::INFINITY, f64::min);
    let gamma = if gamma.is_infinite() { f64::NEG_INFINITY } else { gamma };

    let cover = cover_or_mixture(inst);
    Ok(AssumptionReport {
        gamma,
        component_gamma,
        r: population_ratio(inst),
        kappa: covering_constant(inst, &cover),
        violations,
    })
}

fn check_support<'a>(
    violations: &mut Vec<String>,
    name: &str,
    measure: &Measure,
    sets: impl Iterator<Item = &'a [usize]>,
    n: usize,
) {
    let mut member = vec![false; n];
    for (i, set) in sets.enumerate() {
        for &x in set {
            member[x] = true;
            if measure.weight(x) <= 0.0 {
                violations.push(format!("point {x} of {name}_{i} has zero {name}-mass"));
            }
        }
    }
    for (x, &inside) in member.iter().enumerate() {
        if measure.weight(x) > 0.0 && !inside {
            violations.push(format!("point {x} carries {name}-mass but lies in no {name}_i"));
        }
    }
}

/// `½(S+T)` pointwise.
pub fn mixture_measure(inst: &ShiftInstance) -> Measure {
    Measure::average(&inst.source, &inst.target)
}

/// `n` i.i.d. draws from each of S and T.
#[derive(Clone, Debug)]
pub struct EmpiricalInstance<'a> {
    pub parent: &'a ShiftInstance,
    pub n: usize,
    pub seed: u64,
    pub source: Measure,
    pub target: Measure,
}

impl EmpiricalInstance<'_> {
    /// `½(Ŝ + T̂)`.
    pub fn mixture(&self) -> Measure {
        Measure::average(&self.source, &self.target)
    }
}

/// Draws `n` points from S then `n` from T with one ChaCha8 stream.
pub fn sample_empirical(inst: &ShiftInstance, n: usize, seed: u64) -> Result<EmpiricalInstance<'_>> {
    if n == 0 {
        return Err(invalid("sample size n must be at least 1"));
    }
    let mut rng = seeded(seed);
    let mut draw = |m: &Measure| -> Result<Measure> {
        let cdf: Vec<f64> = m
            .weights()
            .iter()
            .scan(0.0, |acc, &w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        let last = *cdf.last().ok_or_else(|| invalid("cannot sample from an empty space"))?;
        let mut counts = vec![0usize; m.len()];
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * last;
            // first index whose cumulative mass exceeds u, skipping zero-mass points
            let mut x = cdf.partition_point(|&c| c <= u).min(m.len() - 1);
            while m.weight(x) <= 0.0 && x > 0 {
                x -= 1;
            }
            counts[x] += 1;
        }
        Measure::new(counts.into_iter().map(|c| c as f64 / n as f64).collect())
    };
    let source = draw(&inst.source)?;
    let target = draw(&inst.target)?;
    Ok(EmpiricalInstance { parent: inst, n, seed, source, target })
}
