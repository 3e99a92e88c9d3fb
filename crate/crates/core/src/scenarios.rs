//! Seeded instance generators for the shift settings: unsupervised domain
//! adaptation, semi-supervised learning, domain expansion, domain
//! extrapolation, multi-source adaptation, and random metric instances.
//!
//! Component `i` has label `1 + i mod K`. Every generated instance passes
//! [`validate_instance`](crate::instance::validate_instance) with a positive
//! teacher margin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fixtures::forward_chain_balls;
use crate::instance::{Classifier, Component, Label, Measure, NeighborhoodRelation, Point, ShiftInstance};
use crate::rng::{seeded, Rng as ChaRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Uda,
    Ssl,
    DomainExpansion,
    Extrapolation,
    Multisource,
    RandomMetric,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Uda,
        ScenarioKind::Ssl,
        ScenarioKind::DomainExpansion,
        ScenarioKind::Extrapolation,
        ScenarioKind::Multisource,
        ScenarioKind::RandomMetric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Uda => "uda",
            ScenarioKind::Ssl => "ssl",
            ScenarioKind::DomainExpansion => "domain_expansion",
            ScenarioKind::Extrapolation => "extrapolation",
            ScenarioKind::Multisource => "multisource",
            ScenarioKind::RandomMetric => "random_metric",
        }
    }

    /// Settings that come with a covering measure `U`.
    pub fn has_cover(self) -> bool {
        matches!(self, ScenarioKind::Ssl | ScenarioKind::DomainExpansion | ScenarioKind::Extrapolation | ScenarioKind::Multisource)
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown scenario kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub kind: ScenarioKind,
    /// Number of components.
    pub m: usize,
    #[serde(rename = "K")]
    pub k: u32,
    pub points_min: usize,
    pub points_max: usize,
    /// Chance that a source point's teacher label is flipped to a random wrong class.
    pub teacher_error_rate: f64,
    /// Ball radius for `random_metric`.
    pub ball_radius: f64,
    /// Points per chain for `extrapolation`.
    pub chain_length: usize,
    /// Number of unlabeled source domains averaged into `U` for `multisource`.
    pub source_count: usize,
    pub seed: u64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Uda,
            m: 2,
            k: 2,
            points_min: 2,
            points_max: 4,
            teacher_error_rate: 0.1,
            ball_radius: 1.0,
            chain_length: 5,
            source_count: 3,
            seed: 0,
        }
    }
}

impl ScenarioParams {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Self { kind, seed, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        if self.k < 2 {
            return Err(invalid("K must be at least 2"));
        }
        let min_points = match self.kind {
            ScenarioKind::Uda | ScenarioKind::RandomMetric => 2,
            _ => 1,
        };
        if self.kind != ScenarioKind::Extrapolation && (self.points_min < min_points || self.points_min > self.points_max) {
            return Err(invalid(format!(
                "{} needs {min_points} ≤ points_min ≤ points_max, got {}..{}",
                self.kind, self.points_min, self.points_max
            )));
        }
        if !(0.0..1.0).contains(&self.teacher_error_rate) {
            return Err(invalid(format!("teacher_error_rate must lie in [0, 1), got {}", self.teacher_error_rate)));
        }
        if self.kind == ScenarioKind::RandomMetric && !(self.ball_radius > 0.0 && self.ball_radius.is_finite()) {
            return Err(invalid(format!("ball_radius must be positive, got {}", self.ball_radius)));
        }
        if self.kind == ScenarioKind::Extrapolation && self.chain_length < 3 {
            return Err(invalid(format!(
                "chain_length must be at least 3 so that source and target balls are disjoint, got {}",
                self.chain_length
            )));
        }
        if self.kind == ScenarioKind::Multisource && self.source_count == 0 {
            return Err(invalid("source_count must be at least 1"));
        }
        Ok(())
    }
}

/// Scratch state while a generator lays out points.
struct Layout {
    rng: ChaRng,
    n: usize,
    groups: Vec<Vec<usize>>,
}

impl Layout {
    fn new(seed: u64) -> Self {
        Self { rng: seeded(seed), n: 0, groups: Vec::new() }
    }

    fn group(&mut self, size: usize) -> Vec<usize> {
        let ids: Vec<usize> = (self.n..self.n + size).collect();
        self.n += size;
        self.groups.push(ids.clone());
        ids
    }

    fn size(&mut self, p: &ScenarioParams) -> usize {
        self.rng.random_range(p.points_min..=p.points_max)
    }

    /// Random positive weights, component masses drawn from `[0.5, 1.5]`, normalized.
    fn measure(&mut self, parts: &[&[usize]], uniform_components: bool) -> Measure {
        let mut w = vec![0.0; self.n];
        for part in parts {
            let comp_mass = if uniform_components { 1.0 } else { self.rng.random_range(0.5..1.5) };
            let raw: Vec<f64> = part.iter().map(|_| self.rng.random_range(0.5..1.5)).collect();
            let total: f64 = raw.iter().sum();
            for (&x, r) in part.iter().zip(raw) {
                w[x] += comp_mass * r / total;
            }
        }
        Measure::normalized(w).expect("positive weights")
    }
}

fn complete_balls(n: usize, groups: &[Vec<usize>]) -> NeighborhoodRelation {
    let mut balls: Vec<Vec<usize>> = (0..n).map(|x| vec![x]).collect();
    for g in groups {
        for &x in g {
            balls[x] = g.clone();
        }
    }
    NeighborhoodRelation::new(balls).expect("complete balls contain their centers")
}

fn label_of(i: usize, k: u32) -> Label {
    (i as u32 % k) + 1
}

/// Source-point flips, resampled per component until the teacher margin is positive.
fn teacher(rng: &mut ChaRng, p: &ScenarioParams, n: usize, components: &[Component], source: &Measure) -> Classifier {
    let mut labels: Vec<Label> = (0..n).map(|_| rng.random_range(1..=p.k)).collect();
    for comp in components {
        let y = comp.label;
        let mut accepted = false;
        for _ in 0..1000 {
            let mut wrong_mass = vec![0.0; p.k as usize + 1];
            let mut right = 0.0;
            for &x in &comp.source {
                if rng.random_bool(p.teacher_error_rate) {
                    let mut l = rng.random_range(1..p.k);
                    if l >= y {
                        l += 1;
                    }
                    labels[x] = l;
                    wrong_mass[l as usize] += source.weight(x);
                } else {
                    labels[x] = y;
                    right += source.weight(x);
                }
            }
            if right > wrong_mass.iter().copied().fold(0.0, f64::max) {
                accepted = true;
                break;
            }
        }
        if !accepted {
            for &x in &comp.source {
                labels[x] = y;
            }
        }
    }
    Classifier::from_raw(labels)
}

fn split_half(ids: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let cut = ids.len().div_ceil(2).min(ids.len() - 1).max(1);
    (ids[..cut].to_vec(), ids[cut..].to_vec())
}

/// Generates an instance of the requested setting.
pub fn gen_scenario(p: &ScenarioParams) -> Result<ShiftInstance> {
    p.validate()?;
    let mut lay = Layout::new(p.seed);
    let mut features: Option<Vec<Vec<f64>>> = None;
    let (components, source, target, cover, balls) = match p.kind {
        ScenarioKind::Uda => {
            let mut comps = Vec::new();
            for i in 0..p.m {
                let size = lay.size(p);
                let ids = lay.group(size);
                let (s, t) = split_half(&ids);
                comps.push(Component::new(label_of(i, p.k), s, t, None));
            }
            let s_parts: Vec<&[usize]> = comps.iter().map(|c| c.source.as_slice()).collect();
            let source = lay.measure(&s_parts, false);
            let t_parts: Vec<&[usize]> = comps.iter().map(|c| c.target.as_slice()).collect();
            let target = lay.measure(&t_parts, false);
            let balls = complete_balls(lay.n, &lay.groups);
            (comps, source, target, None, balls)
        }
        ScenarioKind::Ssl => {
            let mut comps = Vec::new();
            for i in 0..p.m {
                let size = lay.size(p);
                let ids = lay.group(size);
                comps.push(Component::new(label_of(i, p.k), ids.clone(), ids.clone(), Some(ids)));
            }
            let parts = lay.groups.clone();
            let refs: Vec<&[usize]> = parts.iter().map(Vec::as_slice).collect();
            let source = lay.measure(&refs, false);
            let target = lay.measure(&refs, false);
            let cover = Measure::average(&source, &target);
            let balls = complete_balls(lay.n, &lay.groups);
            (comps, source, target, Some(cover), balls)
        }
        ScenarioKind::DomainExpansion => {
            let mut comps = Vec::new();
            for i in 0..p.m {
                let size = lay.size(p);
                let ids = lay.group(size);
                let s = ids[..ids.len().div_ceil(2)].to_vec();
                comps.push(Component::new(label_of(i, p.k), s, ids.clone(), Some(ids)));
            }
            let s_parts: Vec<Vec<usize>> = comps.iter().map(|c| c.source.clone()).collect();
            let s_refs: Vec<&[usize]> = s_parts.iter().map(Vec::as_slice).collect();
            let source = lay.measure(&s_refs, false);
            let t_parts: Vec<Vec<usize>> = comps.iter().map(|c| c.target.clone()).collect();
            let t_refs: Vec<&[usize]> = t_parts.iter().map(Vec::as_slice).collect();
            let target = lay.measure(&t_refs, false);
            let balls = complete_balls(lay.n, &lay.groups);
            let cover = target.clone();
            (comps, source, target, Some(cover), balls)
        }
        ScenarioKind::Extrapolation => {
            let mut comps = Vec::new();
            let mut chains = Vec::new();
            for i in 0..p.m {
                let ids = lay.group(p.chain_length);
                comps.push(Component::new(label_of(i, p.k), vec![ids[0]], vec![ids[ids.len() - 1]], Some(ids.clone())));
                chains.push(ids);
            }
            let mut raw = vec![Vec::new(); lay.n];
            for chain in &chains {
                forward_chain_balls(&mut raw, chain);
            }
            let s_parts: Vec<Vec<usize>> = comps.iter().map(|c| c.source.clone()).collect();
            let source = lay.measure(&s_parts.iter().map(Vec::as_slice).collect::<Vec<_>>(), true);
            let t_parts: Vec<Vec<usize>> = comps.iter().map(|c| c.target.clone()).collect();
            let target = lay.measure(&t_parts.iter().map(Vec::as_slice).collect::<Vec<_>>(), true);
            let all: Vec<usize> = (0..lay.n).collect();
            let cover = Measure::uniform(lay.n, &all)?;
            (comps, source, target, Some(cover), NeighborhoodRelation::new(raw)?)
        }
        ScenarioKind::Multisource => {
            let groups: Vec<Vec<usize>> = (0..p.m).map(|_| {
                let size = lay.size(p);
                lay.group(size)
            }).collect();
            // each domain sees a nonempty subset of every component; domain j always owns point j mod size
            let mut domains = Vec::with_capacity(p.source_count);
            for j in 0..p.source_count {
                let parts: Vec<Vec<usize>> = groups
                    .iter()
                    .map(|g| {
                        let anchor = g[j % g.len()];
                        g.iter().copied().filter(|&x| x == anchor || lay.rng.random_bool(0.5)).collect()
                    })
                    .collect();
                let m = lay.measure(&parts.iter().map(Vec::as_slice).collect::<Vec<_>>(), false);
                domains.push((parts, m));
            }
            let mut u = vec![0.0; lay.n];
            for (_, m) in &domains {
                for (x, w) in u.iter_mut().enumerate() {
                    *w += m.weight(x) / p.source_count as f64;
                }
            }
            let cover = Measure::normalized(u)?;
            let u_sets: Vec<Vec<usize>> = groups
                .iter()
                .map(|g| g.iter().copied().filter(|&x| cover.weight(x) > 0.0).collect())
                .collect();
            let t_parts: Vec<Vec<usize>> = u_sets
                .iter()
                .map(|u| {
                    let anchor = u[u.len() - 1];
                    u.iter().copied().filter(|&x| x == anchor || lay.rng.random_bool(0.5)).collect()
                })
                .collect();
            let target = lay.measure(&t_parts.iter().map(Vec::as_slice).collect::<Vec<_>>(), false);
            let (s_parts, source) = domains.swap_remove(0);
            let comps = (0..p.m)
                .map(|i| Component::new(label_of(i, p.k), s_parts[i].clone(), t_parts[i].clone(), Some(u_sets[i].clone())))
                .collect();
            let balls = complete_balls(lay.n, &u_sets);
            (comps, source, target, Some(cover), balls)
        }
        ScenarioKind::RandomMetric => {
            let r0 = p.ball_radius;
            // boxes of side 2·r0 with gaps of 2·r0 + 1: no ball reaches another component
            let spacing = 4.0 * r0 + 1.0;
            let cols = (p.m as f64).sqrt().ceil() as usize;
            let mut coords = Vec::new();
            let mut comps = Vec::new();
            for i in 0..p.m {
                let size = lay.size(p);
                let ids = lay.group(size);
                let (cx, cy) = ((i % cols) as f64 * spacing, (i / cols) as f64 * spacing);
                let mut pts: Vec<[f64; 2]> = (0..size)
                    .map(|_| {
                        [cx + lay.rng.random_range(-r0..=r0), cy + lay.rng.random_range(-r0..=r0)]
                    })
                    .collect();
                // left half of the component is source, right half target
                pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
                coords.extend(pts);
                let (s, t) = split_half(&ids);
                comps.push(Component::new(label_of(i, p.k), s, t, None));
            }
            let n = lay.n;
            let balls: Vec<Vec<usize>> = (0..n)
                .map(|x| {
                    (0..n)
                        .filter(|&y| {
                            let (dx, dy) = (coords[x][0] - coords[y][0], coords[x][1] - coords[y][1]);
                            (dx * dx + dy * dy).sqrt() <= r0
                        })
                        .collect()
                })
                .collect();
            features = Some(coords.iter().map(|c| c.to_vec()).collect());
            let s_parts: Vec<Vec<usize>> = comps.iter().map(|c| c.source.clone()).collect();
            let source = lay.measure(&s_parts.iter().map(Vec::as_slice).collect::<Vec<_>>(), false);
            let t_parts: Vec<Vec<usize>> = comps.iter().map(|c| c.target.clone()).collect();
            let target = lay.measure(&t_parts.iter().map(Vec::as_slice).collect::<Vec<_>>(), false);
            (comps, source, target, None, NeighborhoodRelation::new(balls)?)
        }
    };
    let n = lay.n;
    let teacher = teacher(&mut lay.rng, p, n, &components, &source);
    let points = (0..n)
        .map(|id| Point { id, features: features.as_ref().map(|f| f[id].clone()) })
        .collect();
    ShiftInstance::new(p.k, points, components, source, target, cover, balls, teacher, None)
}
