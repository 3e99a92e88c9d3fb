//! Consistency loss `R_B`, source disagreement, the robust-set / minority-set
//! constructions, and the constrained solver
//! `argmin_g L01^S(g, g_tc)  s.t.  R_B(g) ≤ μ` over a finite hypothesis class.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expansion::{RefMeasure, SampleOptions};
use crate::instance::{Classifier, Label, Measure, ShiftInstance};
use crate::rng::seeded;
use crate::TOLERANCE;

/// `g` is constant on `B(x)`.
pub fn is_robust(inst: &ShiftInstance, g: &Classifier, x: usize) -> bool {
    let l = g.label(x);
    inst.balls.ball(x).iter().all(|&y| g.label(y) == l)
}

fn non_robust_points(inst: &ShiftInstance, g: &Classifier) -> Vec<usize> {
    (0..inst.len()).filter(|&x| !is_robust(inst, g, x)).collect()
}

/// `R_B(g) = P_ref[{x : ∃x' ∈ B(x), g(x) ≠ g(x')}]`.
pub fn consistency_loss(inst: &ShiftInstance, g: &Classifier, rm: &RefMeasure) -> f64 {
    rm.measure.mass_of(&non_robust_points(inst, g))
}

/// Mass of `{x : g(x) ≠ h(x)}` under `measure`.
pub fn disagreement(measure: &Measure, g: &Classifier, h: &Classifier) -> f64 {
    let ids: Vec<usize> = (0..measure.len()).filter(|&x| g.label(x) != h.label(x)).collect();
    measure.mass_of(&ids)
}

/// `L01^S(g, g_tc)`.
pub fn source_disagreement(inst: &ShiftInstance, g: &Classifier) -> f64 {
    disagreement(&inst.source, g, &inst.teacher)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RobustPartition {
    pub robust_set: Vec<usize>,
    /// `cells[i][k-1] = RS(g) ∩ C_i ∩ {g = k}`.
    pub cells: Vec<Vec<Vec<usize>>>,
    /// `cell_mass[i][k-1] = P_ref,i[A_ik]` (conditional on component `i`).
    pub cell_mass: Vec<Vec<f64>>,
    pub y_maj: Vec<Label>,
    /// Components whose argmax was tied (including all-empty robust cells).
    pub ties: Vec<usize>,
    /// Components with zero reference mass; excluded from minority accounting.
    pub skipped: Vec<usize>,
}

pub fn robust_partition(inst: &ShiftInstance, g: &Classifier, rm: &RefMeasure) -> RobustPartition {
    let k = inst.num_classes as usize;
    let robust: Vec<bool> = (0..inst.len()).map(|x| is_robust(inst, g, x)).collect();
    let robust_set = (0..inst.len()).filter(|&x| robust[x]).collect();
    let mut cells = Vec::with_capacity(rm.components.len());
    let mut cell_mass = Vec::with_capacity(rm.components.len());
    let mut y_maj = Vec::with_capacity(rm.components.len());
    let mut ties = Vec::new();
    let mut skipped = Vec::new();
    for (i, comp) in rm.components.iter().enumerate() {
        let mut by_class = vec![Vec::new(); k];
        for &x in comp {
            if robust[x] {
                by_class[g.label(x) as usize - 1].push(x);
            }
        }
        let total = rm.component_mass[i];
        if total <= 0.0 {
            skipped.push(i);
        }
        let masses: Vec<f64> =
            by_class.iter().map(|c| if total > 0.0 { rm.measure.mass_of(c) / total } else { 0.0 }).collect();
        // smallest class index wins ties
        let mut best = 0;
        for (j, &m) in masses.iter().enumerate() {
            if m > masses[best] {
                best = j;
            }
        }
        if masses.iter().enumerate().any(|(j, &m)| j != best && m == masses[best]) {
            ties.push(i);
        }
        y_maj.push(best as Label + 1);
        cells.push(by_class);
        cell_mass.push(masses);
    }
    RobustPartition { robust_set, cells, cell_mass, y_maj, ties, skipped }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinorityReport {
    /// `M_i = RS(g) ∩ C_i ∩ {g ≠ y_maj[i]}`.
    pub robust_minority: Vec<Vec<usize>>,
    pub robust_minority_union: Vec<usize>,
    /// `M̃_i = C_i ∩ {g ≠ y_maj[i]}`.
    pub minority: Vec<Vec<usize>>,
    pub minority_union: Vec<usize>,
    /// `C = P_ref[M̃]`.
    #[serde(rename = "C")]
    pub c: f64,
    pub partition: RobustPartition,
}

pub fn minority_sets(inst: &ShiftInstance, g: &Classifier, rm: &RefMeasure) -> MinorityReport {
    let partition = robust_partition(inst, g, rm);
    let robust: Vec<bool> = {
        let mut r = vec![false; inst.len()];
        for &x in &partition.robust_set {
            r[x] = true;
        }
        r
    };
    let mut robust_minority = Vec::new();
    let mut minority = Vec::new();
    for (i, comp) in rm.components.iter().enumerate() {
        if partition.skipped.contains(&i) {
            robust_minority.push(Vec::new());
            minority.push(Vec::new());
            continue;
        }
        let m: Vec<usize> = comp.iter().copied().filter(|&x| g.label(x) != partition.y_maj[i]).collect();
        robust_minority.push(m.iter().copied().filter(|&x| robust[x]).collect());
        minority.push(m);
    }
    let union = |sets: &[Vec<usize>]| {
        let mut u: Vec<usize> = sets.iter().flatten().copied().collect();
        u.sort_unstable();
        u
    };
    let robust_minority_union = union(&robust_minority);
    let minority_union = union(&minority);
    let c = rm.measure.mass_of(&minority_union);
    MinorityReport { robust_minority, robust_minority_union, minority, minority_union, c, partition }
}

/// Splits the non-majority classes into two groups, each of conditional robust
/// mass ≤ 1/2: classes are visited in ascending order and each joins the
/// currently lighter side (ties go to the first side). `masses[k-1]` is the
/// conditional mass of class `k`.
pub fn greedy_partition(y_maj: Label, masses: &[f64]) -> (Vec<Label>, Vec<Label>) {
    let (mut j1, mut j2) = (Vec::new(), Vec::new());
    let (mut w1, mut w2) = (0.0, 0.0);
    for (j, &m) in masses.iter().enumerate() {
        let k = j as Label + 1;
        if k == y_maj {
            continue;
        }
        if w1 <= w2 {
            j1.push(k);
            w1 += m;
        } else {
            j2.push(k);
            w2 += m;
        }
    }
    (j1, j2)
}

/// `(J1, J2)` for component `i`.
pub fn partition_minority(inst: &ShiftInstance, g: &Classifier, rm: &RefMeasure, i: usize) -> Result<(Vec<Label>, Vec<Label>)> {
    if i >= rm.components.len() {
        return Err(invalid(format!("component {i} out of range")));
    }
    let p = robust_partition(inst, g, rm);
    Ok(greedy_partition(p.y_maj[i], &p.cell_mass[i]))
}

/// `(P_{S_i}[g ≠ g_tc], P_{S_i}[g_tc ≠ y_i])` for each component, `None` when `S_i` has no mass.
pub fn source_rates(inst: &ShiftInstance, g: &Classifier) -> Vec<Option<(f64, f64)>> {
    inst.components
        .iter()
        .map(|c| {
            let total = inst.source.mass_of(&c.source);
            if total <= 0.0 {
                return None;
            }
            let off: Vec<usize> = c.source.iter().copied().filter(|&x| g.label(x) != inst.teacher.label(x)).collect();
            let wrong: Vec<usize> = c.source.iter().copied().filter(|&x| inst.teacher.label(x) != c.label).collect();
            Some((inst.source.mass_of(&off) / total, inst.source.mass_of(&wrong) / total))
        })
        .collect()
}

/// `I = {i : P_{S_i}[g ≠ g_tc] > P_{S_i}[g_tc ≠ y_i] + γ/2}`.
pub fn inconsistent_components(inst: &ShiftInstance, g: &Classifier, gamma: f64) -> Result<Vec<usize>> {
    if !(gamma > 0.0) {
        return Err(Error::Precondition(format!("teacher margin gamma must be positive, got {gamma}")));
    }
    Ok(source_rates(inst, g)
        .into_iter()
        .enumerate()
        .filter_map(|(i, rates)| rates.filter(|(off, wrong)| *off > wrong + gamma / 2.0).map(|_| i))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HypothesisClass {
    /// Every labeling of the point space.
    AllLabelings,
    /// Labelings constant on each cell of a partition of the point space.
    CellConstant { cells: Vec<Vec<usize>> },
    Explicit { members: Vec<Classifier> },
}

impl HypothesisClass {
    /// Cells sorted by smallest member, so enumeration order is lexicographic in the label vector.
    fn cells(&self, n: usize) -> Result<Option<Vec<Vec<usize>>>> {
        match self {
            HypothesisClass::AllLabelings => Ok(Some((0..n).map(|x| vec![x]).collect())),
            HypothesisClass::CellConstant { cells } => {
                let mut seen = vec![false; n];
                let mut sorted = Vec::with_capacity(cells.len());
                for cell in cells {
                    if cell.is_empty() {
                        return Err(invalid("empty cell in cell-constant hypothesis class"));
                    }
                    let mut cell = cell.clone();
                    cell.sort_unstable();
                    for &x in &cell {
                        if x >= n || std::mem::replace(&mut seen[x], true) {
                            return Err(invalid(format!("cells must partition the points; point {x} is out of range or repeated")));
                        }
                    }
                    sorted.push(cell);
                }
                if let Some(x) = seen.iter().position(|s| !s) {
                    return Err(invalid(format!("cells must cover every point; point {x} missing")));
                }
                sorted.sort_by_key(|c| c[0]);
                Ok(Some(sorted))
            }
            HypothesisClass::Explicit { members } => {
                if members.is_empty() {
                    return Err(invalid("explicit hypothesis class is empty"));
                }
                if let Some(bad) = members.iter().position(|g| g.len() != n) {
                    return Err(invalid(format!("explicit member {bad} has the wrong length")));
                }
                Ok(None)
            }
        }
    }

    pub fn contains(&self, g: &Classifier) -> bool {
        match self {
            HypothesisClass::AllLabelings => true,
            HypothesisClass::CellConstant { cells } => {
                cells.iter().all(|c| c.iter().all(|&x| g.label(x) == g.label(c[0])))
            }
            HypothesisClass::Explicit { members } => members.contains(g),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Exhaustive,
    Heuristic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Exhaustive enumeration allowed while `K^cells ≤ 2^cap_log2`.
    pub cap_log2: u32,
    /// Budget for the seeded local search used above the cap.
    pub search: SampleOptions,
    /// Require `g* ∈ G` and `R_B(g*) ≤ μ`.
    pub require_realizable: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { cap_log2: 20, search: SampleOptions::default(), require_realizable: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveResult {
    pub chosen: Classifier,
    pub objective: f64,
    pub rb: f64,
    pub feasible_count: u64,
    pub enumerated_count: u64,
    /// Feasible classifiers sharing the optimal objective.
    pub optimal_count: u64,
    pub mode: SolveMode,
    /// False for heuristic search.
    pub certified: bool,
    pub tie_broken: bool,
}

/// Quantized total order: objective, then `R_B`, then position in lexicographic order.
type Key = (i64, i64, u64);

fn quantize(v: f64) -> i64 {
    (v * 1e12).round() as i64
}

#[derive(Clone, Copy)]
struct Tally {
    best: Option<(Key, f64, f64)>,
    optimal: u64,
    feasible: u64,
    enumerated: u64,
    min_rb: f64,
}

impl Default for Tally {
    fn default() -> Self {
        Self { best: None, optimal: 0, feasible: 0, enumerated: 0, min_rb: f64::INFINITY }
    }
}

impl Tally {
    fn push(&mut self, key: Key, obj: f64, rb: f64, feasible: bool) {
        self.enumerated += 1;
        self.min_rb = self.min_rb.min(rb);
        if !feasible {
            return;
        }
        self.feasible += 1;
        match self.best {
            Some((b, ..)) if b.0 < key.0 => {}
            Some((b, ..)) if b.0 == key.0 => {
                self.optimal += 1;
                if key < b {
                    self.best = Some((key, obj, rb));
                }
            }
            _ => {
                self.best = Some((key, obj, rb));
                self.optimal = 1;
            }
        }
    }

    fn merge(a: Tally, b: Tally) -> Tally {
        let (best, optimal) = match (a.best, b.best) {
            (None, x) => (x, b.optimal),
            (x, None) => (x, a.optimal),
            (Some(x), Some(y)) => {
                let count = match x.0 .0.cmp(&y.0 .0) {
                    std::cmp::Ordering::Less => a.optimal,
                    std::cmp::Ordering::Greater => b.optimal,
                    std::cmp::Ordering::Equal => a.optimal + b.optimal,
                };
                (Some(if y.0 < x.0 { y } else { x }), count)
            }
        };
        Tally {
            best,
            optimal,
            feasible: a.feasible + b.feasible,
            enumerated: a.enumerated + b.enumerated,
            min_rb: a.min_rb.min(b.min_rb),
        }
    }
}

fn labeling(cells: &[Vec<usize>], n: usize, k: u64, mut idx: u64) -> Vec<Label> {
    let mut labels = vec![0; n];
    for cell in cells.iter().rev() {
        let l = (idx % k) as Label + 1;
        idx /= k;
        for &x in cell {
            labels[x] = l;
        }
    }
    labels
}

fn evaluate(inst: &ShiftInstance, rm: &RefMeasure, g: &Classifier) -> (f64, f64) {
    (source_disagreement(inst, g), consistency_loss(inst, g, rm))
}

/// Solves the constrained program over `class`.
pub fn solve_constrained(
    inst: &ShiftInstance,
    class: &HypothesisClass,
    mu: f64,
    rm: &RefMeasure,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(invalid(format!("mu must lie in [0, 1], got {mu}")));
    }
    let n = inst.len();
    let cells = class.cells(n)?;
    if opts.require_realizable {
        if !class.contains(&inst.truth) {
            return Err(Error::Precondition("the true labeling is not in the hypothesis class".into()));
        }
        let rb = consistency_loss(inst, &inst.truth, rm);
        if rb > mu + TOLERANCE {
            return Err(Error::Precondition(format!("the true labeling has R_B = {rb} > mu = {mu}")));
        }
    }
    let feasible = |rb: f64| rb <= mu + TOLERANCE;
    let (tally, mode, pick): (Tally, SolveMode, Box<dyn Fn(u64) -> Classifier + Sync>) = match cells {
        None => {
            let HypothesisClass::Explicit { members } = class else { unreachable!() };
            let tally = members
                .par_iter()
                .enumerate()
                .map(|(idx, g)| {
                    let (obj, rb) = evaluate(inst, rm, g);
                    let mut t = Tally::default();
                    t.push((quantize(obj), quantize(rb), idx as u64), obj, rb, feasible(rb));
                    t
                })
                .reduce(Tally::default, Tally::merge);
            (tally, SolveMode::Exhaustive, Box::new(move |i| members[i as usize].clone()))
        }
        Some(cells) => {
            let k = inst.num_classes as u64;
            let log2 = cells.len() as f64 * (k as f64).log2();
            if log2 <= opts.cap_log2 as f64 + 1e-9 {
                let total = k.pow(cells.len() as u32);
                const CHUNK: u64 = 1 << 10;
                let tally = (0..total.div_ceil(CHUNK))
                    .into_par_iter()
                    .map(|ch| {
                        let mut t = Tally::default();
                        for idx in ch * CHUNK..((ch + 1) * CHUNK).min(total) {
                            let g = Classifier::from_raw(labeling(&cells, n, k, idx));
                            let (obj, rb) = evaluate(inst, rm, &g);
                            t.push((quantize(obj), quantize(rb), idx), obj, rb, feasible(rb));
                        }
                        t
                    })
                    .reduce(Tally::default, Tally::merge);
                let cells_for_pick = cells.clone();
                (tally, SolveMode::Exhaustive, Box::new(move |idx| Classifier::from_raw(labeling(&cells_for_pick, n, k, idx))))
            } else {
                let (tally, best) = local_search(inst, rm, &cells, mu, opts.search);
                (tally, SolveMode::Heuristic, Box::new(move |_| best.clone()))
            }
        }
    };
    let Some((key, objective, rb)) = tally.best else {
        return Err(Error::Infeasible { min_rb: tally.min_rb, mu });
    };
    Ok(SolveResult {
        chosen: pick(key.2),
        objective,
        rb,
        feasible_count: tally.feasible,
        enumerated_count: tally.enumerated,
        optimal_count: tally.optimal,
        mode,
        certified: mode == SolveMode::Exhaustive,
        tie_broken: tally.optimal > 1,
    })
}

/// Seeded restarts of single-cell relabeling moves. Infeasible states are
/// ranked by `R_B` so the search first walks into the feasible region.
fn local_search(inst: &ShiftInstance, rm: &RefMeasure, cells: &[Vec<usize>], mu: f64, opts: SampleOptions) -> (Tally, Classifier) {
    let k = inst.num_classes;
    let n = inst.len();
    let mut rng = seeded(opts.seed);
    let mut tally = Tally::default();
    let mut best: Option<(Key, Classifier)> = None;
    let score = |obj: f64, rb: f64| -> (bool, i64, i64) {
        let feasible = rb <= mu + TOLERANCE;
        if feasible { (false, quantize(obj), quantize(rb)) } else { (true, quantize(rb), quantize(obj)) }
    };
    for restart in 0..opts.restarts.max(1) {
        // first restart starts from the teacher's majority vote per cell, the rest at random
        let mut cell_labels: Vec<Label> = cells
            .iter()
            .map(|cell| {
                if restart == 0 {
                    let mut votes = vec![0.0; k as usize];
                    for &x in cell {
                        votes[inst.teacher.label(x) as usize - 1] += inst.source.weight(x) + inst.target.weight(x);
                    }
                    let mut b = 0;
                    for (j, &v) in votes.iter().enumerate() {
                        if v > votes[b] {
                            b = j;
                        }
                    }
                    b as Label + 1
                } else {
                    rng.random_range(1..=k)
                }
            })
            .collect();
        let build = |cl: &[Label]| {
            let mut labels = vec![0; n];
            for (cell, &l) in cells.iter().zip(cl) {
                for &x in cell {
                    labels[x] = l;
                }
            }
            Classifier::from_raw(labels)
        };
        let mut g = build(&cell_labels);
        let (mut obj, mut rb) = evaluate(inst, rm, &g);
        let mut current = score(obj, rb);
        for _ in 0..opts.iterations {
            let c = rng.random_range(0..cells.len());
            let old = cell_labels[c];
            cell_labels[c] = rng.random_range(1..=k);
            let cand = build(&cell_labels);
            let (o, r) = evaluate(inst, rm, &cand);
            let s = score(o, r);
            if s <= current {
                current = s;
                g = cand;
                (obj, rb) = (o, r);
            } else {
                cell_labels[c] = old;
            }
        }
        let feasible = rb <= mu + TOLERANCE;
        tally.push((quantize(obj), quantize(rb), restart as u64), obj, rb, feasible);
        if feasible {
            let key = (quantize(obj), quantize(rb), restart as u64);
            if best.as_ref().is_none_or(|(b, _)| key < *b) {
                best = Some((key, g));
            }
        }
    }
    let chosen = best.map(|(_, g)| g).unwrap_or_else(|| inst.teacher.clone());
    (tally, chosen)
}
