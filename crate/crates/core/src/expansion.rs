//! Neighborhoods `N(·)` and exact or sampled checks of multiplicative and
//! constant expansion over a reference measure (`½(S+T)` or `U`).
//!
//! Exact mode enumerates subsets as bitmasks over each component's
//! reference support. Masses are always summed over ascending point ids, so
//! a witness replayed through [`neighborhood_set`] and the `replay_*`
//! functions reproduces the enumerated numbers bit for bit.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::instance::{mixture_measure, Measure, ShiftInstance};
use crate::rng::seeded;
use crate::TOLERANCE;

/// Default enumeration cap (points per component, or total for constant expansion).
pub const DEFAULT_CAP: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefKind {
    /// `½(S+T)` with component supports `S_i ∪ T_i`.
    MixtureSt,
    /// `U` with component supports `U_i`.
    CoverU,
}

impl std::str::FromStr for RefKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixture" | "mixture_st" | "st" => Ok(RefKind::MixtureSt),
            "cover" | "cover_u" | "u" => Ok(RefKind::CoverU),
            other => Err(invalid(format!("unknown reference measure {other:?} (expected mixture or cover)"))),
        }
    }
}

/// A resolved reference measure with its component supports.
#[derive(Clone, Debug)]
pub struct RefMeasure {
    pub kind: RefKind,
    pub measure: Measure,
    /// Ascending point ids of each component's reference support.
    pub components: Vec<Vec<usize>>,
    pub component_of: Vec<Option<usize>>,
    pub component_mass: Vec<f64>,
}

impl RefMeasure {
    pub fn resolve(inst: &ShiftInstance, kind: RefKind) -> Result<Self> {
        let (measure, components) = match kind {
            RefKind::MixtureSt => (
                mixture_measure(inst),
                inst.components.iter().map(|c| c.source_target_union()).collect::<Vec<_>>(),
            ),
            RefKind::CoverU => {
                let measure = inst
                    .cover
                    .clone()
                    .ok_or_else(|| Error::Precondition("reference cover_U requested but the instance has no U".into()))?;
                let comps = inst
                    .components
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        c.cover
                            .clone()
                            .ok_or_else(|| Error::Precondition(format!("component {i} has no U_{i}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                (measure, comps)
            }
        };
        let mut component_of = vec![None; inst.len()];
        for (i, comp) in components.iter().enumerate() {
            for &x in comp {
                if component_of[x].is_some() {
                    return Err(Error::Precondition(format!(
                        "point {x} lies in two reference component supports; components must be disjoint"
                    )));
                }
                component_of[x] = Some(i);
            }
        }
        let component_mass = components.iter().map(|c| measure.mass_of(c)).collect();
        Ok(Self { kind, measure, components, component_of, component_mass })
    }

    /// Reference mass of an ascending id list.
    pub fn mass(&self, ids: &[usize]) -> f64 {
        self.measure.mass_of(ids)
    }

    /// `P_i[A]` for `A` inside component `i` (ascending ids).
    pub fn conditional(&self, i: usize, ids: &[usize]) -> f64 {
        self.mass(ids) / self.component_mass[i]
    }

    pub fn total_support(&self) -> usize {
        self.components.iter().map(Vec::len).sum()
    }
}

/// `N(x) = C(x) ∩ {x' : B(x) ∩ B(x') ≠ ∅}` for a point `x` of reference component `C(x)`.
pub fn point_neighborhood(inst: &ShiftInstance, rm: &RefMeasure, x: usize) -> Vec<usize> {
    match rm.component_of[x] {
        Some(i) => rm.components[i].iter().copied().filter(|&y| inst.balls.overlap(x, y)).collect(),
        None => Vec::new(),
    }
}

/// `N(A)`, ascending. Points of `A` outside every component contribute nothing.
pub fn neighborhood_set(inst: &ShiftInstance, rm: &RefMeasure, a: &[usize]) -> Vec<usize> {
    let mut hit = vec![false; inst.len()];
    for &x in a {
        for y in point_neighborhood(inst, rm, x) {
            hit[y] = true;
        }
    }
    (0..inst.len()).filter(|&y| hit[y]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub restarts: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { restarts: 32, iterations: 400, seed: 0 }
    }
}

/// How to search for violating subsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckMode {
    Exact { cap: usize },
    Sampled(SampleOptions),
}

impl CheckMode {
    pub fn exact() -> Self {
        CheckMode::Exact { cap: DEFAULT_CAP }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpansionReport {
    /// In sampled mode `true` only means "not falsified".
    pub satisfied: bool,
    /// Multiplicative: smallest `P_i[N(A)]/P_i[A]` over qualifying `A` with `P_i[N(A)] < 1`.
    /// Constant: smallest `(P[N(A)] − P[A]) / min(ξ, P[A])`. `inf` when nothing qualifies.
    #[serde(serialize_with = "crate::report::extended_f64")]
    pub worst_ratio: f64,
    /// Smallest `lhs − rhs` seen; negative beyond tolerance means violation.
    #[serde(serialize_with = "crate::report::extended_f64")]
    pub worst_slack: f64,
    /// A violating subset when `satisfied` is false, empty otherwise.
    pub witness: Vec<usize>,
    pub mode: Mode,
    pub subsets_examined: u64,
}

/// Re-evaluation of one subset against a definition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Replay {
    pub qualifies: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub violated: bool,
}

/// Re-checks multiplicative expansion on a single-component set `a` (ascending ids).
pub fn replay_multiplicative(inst: &ShiftInstance, rm: &RefMeasure, a_set: &[usize], a: f64, c: f64) -> Result<Replay> {
    let i = single_component(rm, a_set)?;
    let pa = rm.conditional(i, a_set);
    let n = neighborhood_set(inst, rm, a_set);
    let pn = if n.len() == rm.components[i].len() { 1.0 } else { rm.conditional(i, &n) };
    let rhs = (c * pa).min(1.0);
    let slack = pn - rhs;
    let qualifies = !a_set.is_empty() && pa <= a + TOLERANCE;
    Ok(Replay { qualifies, lhs: pn, rhs, slack, violated: qualifies && slack < -TOLERANCE })
}

/// Re-checks constant expansion on a set `a` (ascending ids).
pub fn replay_constant(inst: &ShiftInstance, rm: &RefMeasure, a_set: &[usize], q: f64, xi: f64) -> Replay {
    let pa = rm.mass(a_set);
    let n = neighborhood_set(inst, rm, a_set);
    let pn = rm.mass(&n);
    let per_component_ok = (0..rm.components.len()).all(|i| {
        let part: Vec<usize> = a_set.iter().copied().filter(|&x| rm.component_of[x] == Some(i)).collect();
        part.is_empty() || rm.conditional(i, &part) <= 0.5 + TOLERANCE
    });
    let qualifies = pa > 0.0 && pa >= q - TOLERANCE && per_component_ok;
    let rhs = xi.min(pa) + pa;
    let slack = pn - rhs;
    Replay { qualifies, lhs: pn, rhs, slack, violated: qualifies && slack < -TOLERANCE }
}

fn single_component(rm: &RefMeasure, a_set: &[usize]) -> Result<usize> {
    let first = a_set.first().ok_or_else(|| invalid("multiplicative replay needs a nonempty set"))?;
    let i = rm.component_of[*first].ok_or_else(|| invalid(format!("point {first} is outside every component")))?;
    if a_set.iter().any(|&x| rm.component_of[x] != Some(i)) {
        return Err(invalid("multiplicative replay set spans several components"));
    }
    Ok(i)
}

/// Bitmask view of one component for exact enumeration.
struct LocalComponent {
    ids: Vec<usize>,
    weights: Vec<f64>,
    neighbors: Vec<u32>,
    full: u32,
    total: f64,
}

impl LocalComponent {
    fn build(inst: &ShiftInstance, rm: &RefMeasure, i: usize) -> Self {
        let ids = rm.components[i].clone();
        debug_assert!(ids.len() <= 31);
        let weights: Vec<f64> = ids.iter().map(|&x| rm.measure.weight(x)).collect();
        let neighbors = ids
            .iter()
            .map(|&x| {
                ids.iter()
                    .enumerate()
                    .filter(|(_, &y)| inst.balls.overlap(x, y))
                    .fold(0u32, |m, (b, _)| m | (1 << b))
            })
            .collect();
        let full = if ids.len() == 32 { u32::MAX } else { (1u32 << ids.len()) - 1 };
        Self { ids, weights, neighbors, full, total: rm.component_mass[i] }
    }

    /// `P[N(A)] / P[A]` evaluated exactly on the stored weights, rounded once.
    fn exact_ratio(&self, mask: u32) -> f64 {
        use num_rational::BigRational;
        use num_traits::{ToPrimitive, Zero};
        let sum = |m: u32| {
            (0..self.ids.len())
                .filter(|b| m >> b & 1 == 1)
                .fold(BigRational::zero(), |acc, b| acc + BigRational::from_float(self.weights[b]).expect("finite weight"))
        };
        (sum(self.neighborhood(mask)) / sum(mask)).to_f64().unwrap_or(f64::NAN)
    }

    /// Sum over set bits in ascending order (matches `Measure::mass_of` on ascending ids).
    fn mass(&self, mask: u32) -> f64 {
        let mut s = 0.0;
        let mut m = mask;
        while m != 0 {
            let b = m.trailing_zeros() as usize;
            s += self.weights[b];
            m &= m - 1;
        }
        s
    }

    fn neighborhood(&self, mask: u32) -> u32 {
        let mut n = 0;
        let mut m = mask;
        while m != 0 {
            let b = m.trailing_zeros() as usize;
            n |= self.neighbors[b];
            m &= m - 1;
        }
        n
    }

    fn ids_of(&self, mask: u32) -> Vec<usize> {
        (0..self.ids.len()).filter(|b| mask & (1 << b) != 0).map(|b| self.ids[b]).collect()
    }
}

/// Deterministic minimum: smaller value first, then smaller key.
#[derive(Clone, Copy, Debug)]
struct Extremum {
    value: f64,
    key: (usize, u64),
}

fn better(a: Option<Extremum>, b: Option<Extremum>) -> Option<Extremum> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => {
            if y.value < x.value || (y.value == x.value && y.key < x.key) {
                Some(y)
            } else {
                Some(x)
            }
        }
    }
}

#[derive(Clone, Copy, Default)]
struct Scan {
    slack: Option<Extremum>,
    ratio: Option<Extremum>,
    examined: u64,
}

fn merge(a: Scan, b: Scan) -> Scan {
    Scan { slack: better(a.slack, b.slack), ratio: better(a.ratio, b.ratio), examined: a.examined + b.examined }
}

const CHUNK: u64 = 1 << 12;

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(invalid(format!("{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

fn exact_components(inst: &ShiftInstance, rm: &RefMeasure, cap: usize) -> Result<Vec<(usize, LocalComponent)>> {
    let cap = cap.min(31);
    let mut out = Vec::new();
    for i in 0..rm.components.len() {
        if rm.component_mass[i] <= 0.0 {
            continue;
        }
        let size = rm.components[i].len();
        if size > cap {
            return Err(Error::Capacity { what: format!("reference support of component {i}"), size, cap });
        }
        out.push((i, LocalComponent::build(inst, rm, i)));
    }
    Ok(out)
}

fn scan_multiplicative(locals: &[(usize, LocalComponent)], a: f64, c: f64) -> Scan {
    locals
        .par_iter()
        .map(|(i, lc)| {
            let total = 1u64 << lc.ids.len();
            let chunks = total.div_ceil(CHUNK);
            (0..chunks)
                .into_par_iter()
                .map(|ch| {
                    let mut scan = Scan::default();
                    for mask in (ch * CHUNK).max(1)..((ch + 1) * CHUNK).min(total) {
                        let mask = mask as u32;
                        let pa = lc.mass(mask) / lc.total;
                        if pa > a + TOLERANCE {
                            continue;
                        }
                        scan.examined += 1;
                        let nmask = lc.neighborhood(mask);
                        let pn = if nmask == lc.full { 1.0 } else { lc.mass(nmask) / lc.total };
                        let slack = pn - (c * pa).min(1.0);
                        let key = (*i, mask as u64);
                        scan.slack = better(scan.slack, Some(Extremum { value: slack, key }));
                        if nmask != lc.full {
                            scan.ratio = better(scan.ratio, Some(Extremum { value: pn / pa, key }));
                        }
                    }
                    scan
                })
                .reduce(Scan::default, merge)
        })
        .reduce(Scan::default, merge)
}

/// `(a, c)`-multiplicative expansion of the reference measure.
pub fn check_multiplicative(inst: &ShiftInstance, rm: &RefMeasure, a: f64, c: f64, mode: CheckMode) -> Result<ExpansionReport> {
    check_unit_interval("a", a)?;
    if !(c > 1.0) {
        return Err(invalid(format!("c must exceed 1, got {c}")));
    }
    match mode {
        CheckMode::Exact { cap } => {
            let locals = exact_components(inst, rm, cap)?;
            let scan = scan_multiplicative(&locals, a, c);
            let violated = scan.slack.filter(|s| s.value < -TOLERANCE);
            let witness = violated
                .map(|s| {
                    let lc = &locals.iter().find(|(i, _)| *i == s.key.0).expect("component present").1;
                    lc.ids_of(s.key.1 as u32)
                })
                .unwrap_or_default();
            Ok(ExpansionReport {
                satisfied: violated.is_none(),
                worst_ratio: scan.ratio.map_or(f64::INFINITY, |r| r.value),
                worst_slack: scan.slack.map_or(f64::INFINITY, |s| s.value),
                witness,
                mode: Mode::Exact,
                subsets_examined: scan.examined,
            })
        }
        CheckMode::Sampled(opts) => sampled_multiplicative(inst, rm, a, c, opts),
    }
}

/// Largest `c` for which `(a, c)`-multiplicative expansion holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ExpansionConstant {
    Finite(f64),
    /// Every qualifying `A` already has `P_i[N(A)] = 1`, so any `c` works.
    Unbounded,
}

impl ExpansionConstant {
    /// `max((c+1)/(c−1), 3)`; `Unbounded` maps to 3.
    pub fn minority_factor(self) -> f64 {
        match self {
            ExpansionConstant::Finite(c) => ((c + 1.0) / (c - 1.0)).max(3.0),
            ExpansionConstant::Unbounded => 3.0,
        }
    }

    pub fn exceeds_one(self) -> bool {
        match self {
            ExpansionConstant::Finite(c) => c > 1.0,
            ExpansionConstant::Unbounded => true,
        }
    }

    /// A finite constant usable as a check parameter (`fallback` for `Unbounded`).
    pub fn value_or(self, fallback: f64) -> f64 {
        match self {
            ExpansionConstant::Finite(c) => c,
            ExpansionConstant::Unbounded => fallback,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BestConstant {
    pub c: ExpansionConstant,
    /// Subset attaining the ratio (empty when unbounded).
    pub witness: Vec<usize>,
    pub subsets_examined: u64,
}

/// `c* = inf P_i[N(A)] / P_i[A]` over qualifying nonempty `A` with `P_i[N(A)] < 1`.
pub fn best_multiplicative_c(inst: &ShiftInstance, rm: &RefMeasure, a: f64, cap: usize) -> Result<BestConstant> {
    check_unit_interval("a", a)?;
    let locals = exact_components(inst, rm, cap)?;
    let scan = scan_multiplicative(&locals, a, 2.0);
    Ok(match scan.ratio {
        None => BestConstant { c: ExpansionConstant::Unbounded, witness: Vec::new(), subsets_examined: scan.examined },
        Some(r) => {
            let lc = &locals.iter().find(|(i, _)| *i == r.key.0).expect("component present").1;
            // The float scan picks the minimizer; its value is recomputed without summation error.
            BestConstant {
                c: ExpansionConstant::Finite(lc.exact_ratio(r.key.1 as u32)),
                witness: lc.ids_of(r.key.1 as u32),
                subsets_examined: scan.examined,
            }
        }
    })
}

/// Admissible per-component pieces for the constant check: (mask, P[A_i], P[N(A_i)]).
fn admissible_pieces(lc: &LocalComponent) -> Vec<(u32, f64, f64)> {
    let total = 1u64 << lc.ids.len();
    (0..total)
        .map(|m| m as u32)
        .filter_map(|mask| {
            let pa = lc.mass(mask);
            (pa / lc.total <= 0.5 + TOLERANCE).then(|| (mask, pa, lc.mass(lc.neighborhood(mask))))
        })
        .collect()
}

/// `(q, ξ)`-constant expansion of the reference measure.
pub fn check_constant(inst: &ShiftInstance, rm: &RefMeasure, q: f64, xi: f64, mode: CheckMode) -> Result<ExpansionReport> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(invalid(format!("q must be positive, got {q}")));
    }
    check_unit_interval("xi", xi).or_else(|e| if xi == 1.0 { Ok(()) } else { Err(e) })?;
    match mode {
        CheckMode::Exact { cap } => {
            let size = rm.total_support();
            if size > cap {
                return Err(Error::Capacity { what: "total reference support".into(), size, cap });
            }
            let locals = exact_components(inst, rm, cap)?;
            let pieces: Vec<Vec<(u32, f64, f64)>> = locals.iter().map(|(_, lc)| admissible_pieces(lc)).collect();
            let radices: Vec<u64> = pieces.iter().map(|p| p.len() as u64).collect();
            let total: u64 = radices.iter().product();
            let chunks = total.div_ceil(CHUNK);
            let scan = (0..chunks)
                .into_par_iter()
                .map(|ch| {
                    let mut scan = Scan::default();
                    for idx in ch * CHUNK..((ch + 1) * CHUNK).min(total) {
                        let mut rest = idx;
                        let (mut pa, mut pn) = (0.0, 0.0);
                        for (p, &radix) in pieces.iter().zip(&radices) {
                            let (_, a_i, n_i) = p[(rest % radix) as usize];
                            rest /= radix;
                            pa += a_i;
                            pn += n_i;
                        }
                        if !(pa > 0.0) || pa < q - TOLERANCE {
                            continue;
                        }
                        scan.examined += 1;
                        let growth = xi.min(pa);
                        let slack = pn - (growth + pa);
                        let key = (0, idx);
                        scan.slack = better(scan.slack, Some(Extremum { value: slack, key }));
                        scan.ratio = better(scan.ratio, Some(Extremum { value: (pn - pa) / growth, key }));
                    }
                    scan
                })
                .reduce(Scan::default, merge);
            let decode = |idx: u64| -> Vec<usize> {
                let mut rest = idx;
                let mut ids = Vec::new();
                for ((p, &radix), (_, lc)) in pieces.iter().zip(&radices).zip(&locals) {
                    ids.extend(lc.ids_of(p[(rest % radix) as usize].0));
                    rest /= radix;
                }
                ids.sort_unstable();
                ids
            };
            // Confirm the worst candidate with the canonical summation order.
            let mut satisfied = true;
            let mut witness = Vec::new();
            let mut worst_slack = scan.slack.map_or(f64::INFINITY, |s| s.value);
            if let Some(s) = scan.slack.filter(|s| s.value < -TOLERANCE) {
                let ids = decode(s.key.1);
                let replay = replay_constant(inst, rm, &ids, q, xi);
                worst_slack = replay.slack;
                if replay.violated {
                    satisfied = false;
                    witness = ids;
                }
            }
            Ok(ExpansionReport {
                satisfied,
                worst_ratio: scan.ratio.map_or(f64::INFINITY, |r| r.value),
                worst_slack,
                witness,
                mode: Mode::Exact,
                subsets_examined: scan.examined,
            })
        }
        CheckMode::Sampled(opts) => sampled_constant(inst, rm, q, xi, opts),
    }
}

fn sampled_multiplicative(inst: &ShiftInstance, rm: &RefMeasure, a: f64, c: f64, opts: SampleOptions) -> Result<ExpansionReport> {
    let mut rng = seeded(opts.seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut best_ratio = f64::INFINITY;
    let mut examined = 0u64;
    let live: Vec<usize> = (0..rm.components.len()).filter(|&i| rm.component_mass[i] > 0.0).collect();
    if live.is_empty() {
        return Ok(empty_report(Mode::Sampled));
    }
    for _ in 0..opts.restarts {
        let i = live[rng.random_range(0..live.len())];
        let comp = &rm.components[i];
        let mut member = vec![false; comp.len()];
        member[rng.random_range(0..comp.len())] = true;
        let eval = |member: &[bool]| -> Option<Replay> {
            let set: Vec<usize> = comp.iter().zip(member).filter(|(_, &b)| b).map(|(&x, _)| x).collect();
            let r = replay_multiplicative(inst, rm, &set, a, c).ok()?;
            r.qualifies.then_some(r)
        };
        let mut current = eval(&member);
        for _ in 0..opts.iterations {
            let flip = rng.random_range(0..comp.len());
            member[flip] = !member[flip];
            examined += 1;
            match (eval(&member), current) {
                (Some(next), Some(cur)) if next.slack <= cur.slack => current = Some(next),
                (Some(next), None) => current = Some(next),
                _ => member[flip] = !member[flip],
            }
            if let Some(cur) = current {
                if cur.lhs < 1.0 {
                    let set: Vec<usize> = comp.iter().zip(&member).filter(|(_, &b)| b).map(|(&x, _)| x).collect();
                    best_ratio = best_ratio.min(cur.lhs / rm.conditional(i, &set));
                }
                if best.as_ref().is_none_or(|(s, _)| cur.slack < *s) {
                    let set = comp.iter().zip(&member).filter(|(_, &b)| b).map(|(&x, _)| x).collect();
                    best = Some((cur.slack, set));
                }
            }
        }
    }
    Ok(sampled_report(best, best_ratio, examined))
}

fn sampled_constant(inst: &ShiftInstance, rm: &RefMeasure, q: f64, xi: f64, opts: SampleOptions) -> Result<ExpansionReport> {
    let mut rng = seeded(opts.seed);
    let pool: Vec<usize> = rm.components.iter().flatten().copied().collect();
    if pool.is_empty() {
        return Ok(empty_report(Mode::Sampled));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut best_ratio = f64::INFINITY;
    let mut examined = 0u64;
    let set_of = |member: &[bool]| -> Vec<usize> {
        let mut s: Vec<usize> = pool.iter().zip(member).filter(|(_, &b)| b).map(|(&x, _)| x).collect();
        s.sort_unstable();
        s
    };
    for _ in 0..opts.restarts {
        let mut member = vec![false; pool.len()];
        // grow a random set until it reaches mass q or no admissible point remains
        let mut order: Vec<usize> = (0..pool.len()).collect();
        for k in (1..order.len()).rev() {
            order.swap(k, rng.random_range(0..=k));
        }
        for &k in &order {
            member[k] = true;
            let r = replay_constant(inst, rm, &set_of(&member), 0.0, xi);
            let within = r.lhs >= 0.0 && per_component_half(rm, &set_of(&member));
            if !within {
                member[k] = false;
            }
            if rm.mass(&set_of(&member)) >= q {
                break;
            }
        }
        let mut current = Some(replay_constant(inst, rm, &set_of(&member), q, xi)).filter(|r| r.qualifies);
        for _ in 0..opts.iterations {
            let flip = rng.random_range(0..pool.len());
            member[flip] = !member[flip];
            examined += 1;
            let next = replay_constant(inst, rm, &set_of(&member), q, xi);
            match current {
                Some(cur) if next.qualifies && next.slack <= cur.slack => current = Some(next),
                None if next.qualifies => current = Some(next),
                _ => member[flip] = !member[flip],
            }
            if let Some(cur) = current {
                let set = set_of(&member);
                let pa = rm.mass(&set);
                best_ratio = best_ratio.min((cur.lhs - pa) / xi.min(pa));
                if best.as_ref().is_none_or(|(s, _)| cur.slack < *s) {
                    best = Some((cur.slack, set));
                }
            }
        }
    }
    Ok(sampled_report(best, best_ratio, examined))
}

fn per_component_half(rm: &RefMeasure, set: &[usize]) -> bool {
    (0..rm.components.len()).all(|i| {
        let part: Vec<usize> = set.iter().copied().filter(|&x| rm.component_of[x] == Some(i)).collect();
        part.is_empty() || rm.conditional(i, &part) <= 0.5 + TOLERANCE
    })
}

fn empty_report(mode: Mode) -> ExpansionReport {
    ExpansionReport {
        satisfied: true,
        worst_ratio: f64::INFINITY,
        worst_slack: f64::INFINITY,
        witness: Vec::new(),
        mode,
        subsets_examined: 0,
    }
}

fn sampled_report(best: Option<(f64, Vec<usize>)>, best_ratio: f64, examined: u64) -> ExpansionReport {
    let (slack, set) = best.unwrap_or((f64::INFINITY, Vec::new()));
    let violated = slack < -TOLERANCE;
    ExpansionReport {
        satisfied: !violated,
        worst_ratio: best_ratio,
        worst_slack: slack,
        witness: if violated { set } else { Vec::new() },
        mode: Mode::Sampled,
        subsets_examined: examined,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImplicationReport {
    pub c: f64,
    pub mu: f64,
    pub q: f64,
    pub multiplicative: ExpansionReport,
    pub constant: ExpansionReport,
    /// The implied `(μ/(c−1), μ)`-constant expansion holds.
    pub holds: bool,
}

/// Exact `(½, c)`-multiplicative expansion should imply `(μ/(c−1), μ)`-constant expansion.
pub fn implication_mult_to_const(inst: &ShiftInstance, rm: &RefMeasure, c: f64, mu: f64, cap: usize) -> Result<ImplicationReport> {
    check_unit_interval("mu", mu)?;
    let multiplicative = check_multiplicative(inst, rm, 0.5, c, CheckMode::Exact { cap })?;
    if !multiplicative.satisfied {
        return Err(Error::Precondition(format!(
            "(1/2, {c})-multiplicative expansion fails; witness {:?}",
            multiplicative.witness
        )));
    }
    let q = mu / (c - 1.0);
    let constant = check_constant(inst, rm, q, mu, CheckMode::Exact { cap })?;
    Ok(ImplicationReport { c, mu, q, holds: constant.satisfied, multiplicative, constant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn chain_u() -> (ShiftInstance, RefMeasure) {
        let inst = fixtures::chain();
        let rm = RefMeasure::resolve(&inst, RefKind::CoverU).unwrap();
        (inst, rm)
    }

    #[test]
    fn pair4_neighborhoods() {
        let inst = fixtures::pair4();
        let rm = RefMeasure::resolve(&inst, RefKind::MixtureSt).unwrap();
        assert_eq!(neighborhood_set(&inst, &rm, &[0]), vec![0, 1]);
        assert!(neighborhood_set(&inst, &rm, &[]).is_empty());
    }

    #[test]
    fn chain_neighborhood_of_first_point() {
        let (inst, rm) = chain_u();
        // B(p0) = {p0, p1} meets B(p1) = {p1, p2}; B(p2) = {p2, p3} is disjoint from it
        assert_eq!(neighborhood_set(&inst, &rm, &[0]), vec![0, 1]);
        assert_eq!(neighborhood_set(&inst, &rm, &[0, 1]), vec![0, 1, 2]);
    }

    #[test]
    fn chain_multiplicative_examples() {
        let (inst, rm) = chain_u();
        let ok = check_multiplicative(&inst, &rm, 0.5, 1.5, CheckMode::exact()).unwrap();
        assert!(ok.satisfied);
        let bad = check_multiplicative(&inst, &rm, 0.5, 2.0, CheckMode::exact()).unwrap();
        assert!(!bad.satisfied);
        assert_eq!(bad.witness, vec![0, 1]);
        let r = replay_multiplicative(&inst, &rm, &bad.witness, 0.5, 2.0).unwrap();
        assert!(r.violated);
        assert!((r.lhs - 0.6).abs() < 1e-15 && (r.rhs - 0.8).abs() < 1e-15);

        let best = best_multiplicative_c(&inst, &rm, 0.5, DEFAULT_CAP).unwrap();
        let ExpansionConstant::Finite(c) = best.c else { panic!("bounded") };
        assert_eq!(c, 1.5);
        assert_eq!(best.witness, vec![0, 1]);
    }

    #[test]
    fn pair4_multiplicative_is_unbounded() {
        let inst = fixtures::pair4();
        let rm = RefMeasure::resolve(&inst, RefKind::MixtureSt).unwrap();
        for c in [1.01, 3.0, 1e6] {
            assert!(check_multiplicative(&inst, &rm, 0.5, c, CheckMode::exact()).unwrap().satisfied);
        }
        assert_eq!(best_multiplicative_c(&inst, &rm, 0.5, DEFAULT_CAP).unwrap().c, ExpansionConstant::Unbounded);
    }

    #[test]
    fn single_point_component_is_unbounded() {
        let mut inst = fixtures::pair4();
        inst.components[0].target = vec![];
        inst.components[0].source = vec![0];
        let rm = RefMeasure::resolve(&inst, RefKind::MixtureSt).unwrap();
        let lc = LocalComponent::build(&inst, &rm, 0);
        assert_eq!(lc.ids, vec![0]);
        // only A = {a1}: N(A) is the whole (one-point) component
        let scan = scan_multiplicative(&[(0, lc)], 0.99, 2.0);
        assert!(scan.ratio.is_none());
    }

    #[test]
    fn constant_examples() {
        let inst = fixtures::pair4();
        let rm = RefMeasure::resolve(&inst, RefKind::MixtureSt).unwrap();
        let rep = check_constant(&inst, &rm, 0.2, 0.25, CheckMode::exact()).unwrap();
        assert!(rep.satisfied);
        let r = replay_constant(&inst, &rm, &[0, 2], 0.2, 0.25);
        assert!(r.qualifies && r.lhs == 1.0 && r.rhs == 0.75);

        let (inst, rm) = chain_u();
        assert!(check_constant(&inst, &rm, 0.1, 0.1, CheckMode::exact()).unwrap().satisfied);
    }

    #[test]
    fn implication_examples() {
        let (inst, rm) = chain_u();
        let rep = implication_mult_to_const(&inst, &rm, 1.5, 0.2, DEFAULT_CAP).unwrap();
        assert!((rep.q - 0.4).abs() < 1e-15);
        assert!(rep.holds);
        let rep = implication_mult_to_const(&inst, &rm, 1.5, 0.05, DEFAULT_CAP).unwrap();
        assert!((rep.q - 0.1).abs() < 1e-15);
        assert!(rep.holds);
        assert!(matches!(implication_mult_to_const(&inst, &rm, 2.5, 0.1, DEFAULT_CAP), Err(Error::Precondition(_))));
    }

    #[test]
    fn capacity_and_parameter_errors() {
        let (inst, rm) = chain_u();
        assert!(matches!(
            check_multiplicative(&inst, &rm, 0.5, 1.5, CheckMode::Exact { cap: 4 }),
            Err(Error::Capacity { .. })
        ));
        assert!(matches!(check_constant(&inst, &rm, 0.1, 0.1, CheckMode::Exact { cap: 9 }), Err(Error::Capacity { .. })));
        assert!(check_multiplicative(&inst, &rm, 0.5, 1.0, CheckMode::exact()).is_err());
        assert!(check_multiplicative(&inst, &rm, 1.0, 2.0, CheckMode::exact()).is_err());
        assert!(check_constant(&inst, &rm, 0.1, 0.0, CheckMode::exact()).is_err());
        let pair = fixtures::pair4();
        assert!(RefMeasure::resolve(&pair, RefKind::CoverU).is_err());
    }

    #[test]
    fn sampled_mode_finds_chain_violation_and_respects_satisfied_case() {
        let (inst, rm) = chain_u();
        let opts = SampleOptions { restarts: 16, iterations: 200, seed: 3 };
        let rep = check_multiplicative(&inst, &rm, 0.5, 2.0, CheckMode::Sampled(opts)).unwrap();
        assert_eq!(rep.mode, Mode::Sampled);
        assert!(!rep.satisfied);
        assert!(replay_multiplicative(&inst, &rm, &rep.witness, 0.5, 2.0).unwrap().violated);
        let rep = check_multiplicative(&inst, &rm, 0.5, 1.5, CheckMode::Sampled(opts)).unwrap();
        assert!(rep.satisfied);
        let rep = check_constant(&inst, &rm, 0.1, 0.1, CheckMode::Sampled(opts)).unwrap();
        assert!(rep.satisfied);
    }
}
