//! Parameter sweeps: generate → solve → audit for every cell of a grid.
//!
//! Cells are independent and run on a dedicated thread pool; results are
//! collected in grid order, so output bytes do not depend on the number of
//! worker threads.

use serde::{Deserialize, Serialize};

use crate::audit::{
    attach_implication, constant_evidence, lemma_audit, multiplicative_evidence, AuditReport, AuditRow, ExpansionEvidence,
    ExpansionParam, CSV_HEADER,
};
use crate::error::{invalid, Error, Result};
use crate::expansion::{RefKind, RefMeasure, DEFAULT_CAP};
use crate::instance::ShiftInstance;
use crate::propagation::{solve_constrained, HypothesisClass, SolveOptions, SolveResult};
use crate::report::{to_canonical_json, LIBRARY_VERSION};
use crate::scenarios::{gen_scenario, ScenarioKind, ScenarioParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisMode {
    /// Every labeling of the points.
    All,
    /// Labelings constant on each component's points (others free).
    ComponentConstant,
}

impl std::str::FromStr for HypothesisMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(HypothesisMode::All),
            "component" | "component_constant" => Ok(HypothesisMode::ComponentConstant),
            other => Err(invalid(format!("unknown hypothesis class {other:?} (expected all or component)"))),
        }
    }
}

impl HypothesisMode {
    pub fn class_for(self, inst: &ShiftInstance) -> HypothesisClass {
        match self {
            HypothesisMode::All => HypothesisClass::AllLabelings,
            HypothesisMode::ComponentConstant => {
                let mut owner = vec![None; inst.len()];
                for (i, c) in inst.components.iter().enumerate() {
                    for &x in c.source.iter().chain(&c.target).chain(c.cover.iter().flatten()) {
                        owner[x] = Some(i);
                    }
                }
                let mut cells: Vec<Vec<usize>> = vec![Vec::new(); inst.num_components()];
                for (x, o) in owner.iter().enumerate() {
                    match o {
                        Some(i) => cells[*i].push(x),
                        None => cells.push(vec![x]),
                    }
                }
                cells.retain(|c| !c.is_empty());
                HypothesisClass::CellConstant { cells }
            }
        }
    }
}

/// Which expansion assumption each cell is audited under.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpansionSpec {
    /// `(1/2, c*)`-multiplicative with `c*` measured exactly per instance.
    Multiplicative,
    /// `(q, μ)`-constant.
    Constant { q: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefChoice {
    /// `U` for settings that have one, `½(S+T)` otherwise.
    Auto,
    Mixture,
    Cover,
}

impl RefChoice {
    pub fn resolve(self, kind: ScenarioKind) -> RefKind {
        match self {
            RefChoice::Mixture => RefKind::MixtureSt,
            RefChoice::Cover => RefKind::CoverU,
            RefChoice::Auto if kind.has_cover() => RefKind::CoverU,
            RefChoice::Auto => RefKind::MixtureSt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub kinds: Vec<ScenarioKind>,
    pub m: Vec<usize>,
    #[serde(rename = "K")]
    pub k: Vec<u32>,
    pub points_min: usize,
    pub points_max: usize,
    pub teacher_error_rate: Vec<f64>,
    pub ball_radius: Vec<f64>,
    pub chain_length: Vec<usize>,
    pub source_count: Vec<usize>,
    pub mu: Vec<f64>,
    pub seeds: Vec<u64>,
    pub hypothesis: HypothesisMode,
    pub expansion: ExpansionSpec,
    pub reference: RefChoice,
    /// Enumeration cap (points) for the exact expansion checks.
    pub cap: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            kinds: vec![ScenarioKind::Uda],
            m: vec![2],
            k: vec![2],
            points_min: 2,
            points_max: 4,
            teacher_error_rate: vec![0.1],
            ball_radius: vec![1.0],
            chain_length: vec![5],
            source_count: vec![3],
            mu: vec![0.05],
            seeds: (0..10).collect(),
            hypothesis: HypothesisMode::All,
            expansion: ExpansionSpec::Multiplicative,
            reference: RefChoice::Auto,
            cap: DEFAULT_CAP,
        }
    }
}

/// One grid cell: scenario parameters, μ and the audited assumption.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub params: ScenarioParams,
    pub mu: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("kinds", self.kinds.len()),
            ("m", self.m.len()),
            ("K", self.k.len()),
            ("teacher_error_rate", self.teacher_error_rate.len()),
            ("ball_radius", self.ball_radius.len()),
            ("chain_length", self.chain_length.len()),
            ("source_count", self.source_count.len()),
            ("mu", self.mu.len()),
            ("seeds", self.seeds.len()),
        ];
        if let Some((name, _)) = lists.iter().find(|(_, len)| *len == 0) {
            return Err(invalid(format!("sweep grid {name} is empty")));
        }
        if let Some(mu) = self.mu.iter().find(|mu| !(**mu > 0.0 && **mu < 1.0)) {
            return Err(invalid(format!("mu values must lie in (0, 1), got {mu}")));
        }
        if let ExpansionSpec::Constant { q } = self.expansion {
            if !(q > 0.0 && q < 1.0) {
                return Err(invalid(format!("q must lie in (0, 1), got {q}")));
            }
        }
        Ok(())
    }

    /// Cross-product in a fixed nesting order (kind, m, K, rate, radius, chain, sources, μ, seed).
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &kind in &self.kinds {
            for &m in &self.m {
                for &k in &self.k {
                    for &rate in &self.teacher_error_rate {
                        for &radius in &self.ball_radius {
                            for &chain in &self.chain_length {
                                for &sources in &self.source_count {
                                    for &mu in &self.mu {
                                        for &seed in &self.seeds {
                                            let params = ScenarioParams {
                                                kind,
                                                m,
                                                k,
                                                points_min: self.points_min,
                                                points_max: self.points_max,
                                                teacher_error_rate: rate,
                                                ball_radius: radius,
                                                chain_length: chain,
                                                source_count: sources,
                                                seed,
                                            };
                                            out.push(Cell { params, mu });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellOutcome {
    pub cell: Cell,
    /// Why the cell could not be audited, if it could not.
    pub error: Option<String>,
    pub solve: Option<SolveResult>,
    pub audit: Option<AuditReport>,
}

impl CellOutcome {
    pub fn pass(&self) -> bool {
        self.audit.as_ref().is_some_and(AuditReport::all_pass)
    }

    pub fn certified(&self) -> bool {
        self.audit.as_ref().is_some_and(|a| a.certified) && self.solve.as_ref().is_some_and(|s| s.certified)
    }

    pub fn csv_row(&self) -> String {
        let p = &self.cell.params;
        match &self.audit {
            Some(audit) => {
                let inst = gen_scenario(p).expect("audited cell regenerates");
                let mut row = AuditRow::from_report(p.kind.name(), p.seed, &inst, audit);
                row.certified = self.certified();
                row.to_csv()
            }
            None => AuditRow {
                kind: p.kind.name().to_string(),
                seed: p.seed,
                m: p.m,
                n_points: 0,
                c_or_q: f64::NAN,
                mu: self.cell.mu,
                gamma: f64::NAN,
                r: f64::NAN,
                kappa: f64::NAN,
                c: f64::NAN,
                eps_t: f64::NAN,
                bound: f64::NAN,
                pass: false,
                certified: false,
            }
            .to_csv(),
        }
    }
}

/// Generates, solves and audits one cell.
pub fn run_cell(spec: &SweepSpec, cell: &Cell) -> CellOutcome {
    let attempt = || -> Result<(SolveResult, AuditReport)> {
        let inst = gen_scenario(&cell.params)?;
        let rm = RefMeasure::resolve(&inst, spec.reference.resolve(cell.params.kind))?;
        let class = spec.hypothesis.class_for(&inst);
        let solve = solve_constrained(&inst, &class, cell.mu, &rm, &SolveOptions::default())?;
        let evidence = match spec.expansion {
            ExpansionSpec::Multiplicative => multiplicative_evidence(&inst, &rm, spec.cap),
            ExpansionSpec::Constant { q } => constant_evidence(&inst, &rm, q, cell.mu, spec.cap),
        };
        let evidence = match evidence {
            Ok(ev) => ev,
            Err(Error::Capacity { .. }) => ExpansionEvidence {
                param: match spec.expansion {
                    ExpansionSpec::Multiplicative => {
                        return Err(Error::Precondition("instance too large for exact expansion measurement".into()))
                    }
                    ExpansionSpec::Constant { q } => ExpansionParam::Constant { q },
                },
                report: None,
            },
            Err(e) => return Err(e),
        };
        if let ExpansionParam::Multiplicative { c } = evidence.param {
            if !c.exceeds_one() {
                return Err(Error::Precondition(format!("no multiplicative expansion: c* = {c:?}")));
            }
        }
        let mut audit = lemma_audit(&inst, &solve.chosen, cell.mu, &rm, &evidence)?;
        if evidence.certified() {
            attach_implication(&mut audit, &inst, &rm, spec.cap).ok();
        }
        Ok((solve, audit))
    };
    match attempt() {
        Ok((solve, audit)) => CellOutcome { cell: cell.clone(), error: None, solve: Some(solve), audit: Some(audit) },
        Err(e) => CellOutcome { cell: cell.clone(), error: Some(e.to_string()), solve: None, audit: None },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub version: &'static str,
    pub config: SweepSpec,
    pub cells: usize,
    pub passes: usize,
    pub certified: usize,
    pub certified_passes: usize,
    pub errors: usize,
    /// Grid indices of audited cells with a failed inequality.
    pub failed_cells: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub outcomes: Vec<CellOutcome>,
    pub summary: SweepSummary,
}

impl SweepOutcome {
    pub fn csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for o in &self.outcomes {
            out.push_str(&o.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self) -> String {
        to_canonical_json(&self.summary).expect("summary serializes")
    }

    pub fn summary_line(&self) -> String {
        let s = &self.summary;
        format!(
            "bound passes: {}/{} (certified {}/{}, errors {})",
            s.passes, s.cells, s.certified_passes, s.certified, s.errors
        )
    }

    /// Some audited cell failed an inequality.
    pub fn any_failure(&self) -> bool {
        !self.summary.failed_cells.is_empty()
    }
}

/// Runs every cell on a pool of `jobs` threads (`0` = available cores).
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<SweepOutcome> {
    use rayon::prelude::*;
    spec.validate()?;
    let cells = spec.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| cells.par_iter().map(|c| run_cell(spec, c)).collect());
    let failed_cells = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.audit.is_some() && !o.pass())
        .map(|(i, _)| i)
        .collect();
    let summary = SweepSummary {
        version: LIBRARY_VERSION,
        config: spec.clone(),
        cells: outcomes.len(),
        passes: outcomes.iter().filter(|o| o.pass()).count(),
        certified: outcomes.iter().filter(|o| o.certified()).count(),
        certified_passes: outcomes.iter().filter(|o| o.certified() && o.pass()).count(),
        errors: outcomes.iter().filter(|o| o.error.is_some()).count(),
        failed_cells,
    };
    Ok(SweepOutcome { outcomes, summary })
}
