//! Target error, the closed-form error bounds, and an end-to-end audit of the
//! minority-set → inconsistent-components → target-error inequality chain.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expansion::{
    best_multiplicative_c, check_constant, check_multiplicative, implication_mult_to_const, CheckMode, ExpansionConstant,
    ExpansionReport, Mode, RefMeasure,
};
use crate::instance::{validate_instance, Classifier, ShiftInstance};
use crate::propagation::{consistency_loss, inconsistent_components, minority_sets, source_disagreement};
use crate::report::format_float;
use crate::TOLERANCE;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TargetError {
    pub total: f64,
    /// `ε_T^i = P_T[T_i ∩ {g ≠ y_i}]`.
    pub per_component: Vec<f64>,
}

/// `ε_T(g) = P_T[g ≠ g*]` and its per-component split.
pub fn target_error(inst: &ShiftInstance, g: &Classifier) -> TargetError {
    let wrong: Vec<usize> = (0..inst.len()).filter(|&x| g.label(x) != inst.truth.label(x)).collect();
    let per_component = inst
        .components
        .iter()
        .map(|c| {
            let ids: Vec<usize> = c.target.iter().copied().filter(|&x| g.label(x) != c.label).collect();
            inst.target.mass_of(&ids)
        })
        .collect();
    TargetError { total: inst.target.mass_of(&wrong), per_component }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpansionParam {
    /// `(1/2, c)`-multiplicative expansion.
    Multiplicative { c: ExpansionConstant },
    /// `(q, μ)`-constant expansion.
    Constant { q: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundForm {
    /// `4κr/γ` times the minority-set bound.
    LemmaComposed,
    /// As printed, including the extra `μ` factor of the constant-expansion statements.
    PaperLiteral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundQuery {
    pub expansion: ExpansionParam,
    pub r: f64,
    pub mu: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub form: BoundForm,
}

impl BoundQuery {
    fn validate(&self) -> Result<()> {
        match self.expansion {
            ExpansionParam::Multiplicative { c: ExpansionConstant::Finite(c) } if !(c > 1.0) => {
                return Err(invalid(format!("c must exceed 1, got {c}")))
            }
            ExpansionParam::Constant { q } if !(q > 0.0 && q < 1.0) => {
                return Err(invalid(format!("q must lie in (0, 1), got {q}")))
            }
            _ => {}
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(invalid(format!("mu must lie in (0, 1), got {}", self.mu)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(invalid(format!("r must be positive and finite, got {}", self.r)));
        }
        if !(self.kappa >= 1.0) || !self.kappa.is_finite() {
            return Err(invalid(format!("kappa must be finite and at least 1, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Bound on the minority-set mass `C`.
pub fn minority_bound(expansion: ExpansionParam, mu: f64) -> f64 {
    match expansion {
        ExpansionParam::Multiplicative { c } => c.minority_factor() * mu,
        ExpansionParam::Constant { q } => 2.0 * q.max(mu) + mu,
    }
}

pub fn theorem_bound(q: &BoundQuery) -> Result<f64> {
    q.validate()?;
    let scale = 4.0 * q.kappa * q.r / q.gamma;
    let c = minority_bound(q.expansion, q.mu);
    Ok(match (q.form, q.expansion) {
        (BoundForm::PaperLiteral, ExpansionParam::Constant { .. }) => c * scale * q.mu,
        _ => scale * c,
    })
}

/// Expansion assumption claimed for an audit, with the check that supports it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpansionEvidence {
    pub param: ExpansionParam,
    pub report: Option<ExpansionReport>,
}

impl ExpansionEvidence {
    pub fn certified(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.satisfied && r.mode == Mode::Exact)
    }
}

/// Measures `c*` at `a = 1/2` and records the exact check at that constant
/// (`Unbounded` is checked at `c = 3`). Evidence is uncertified when `c* ≤ 1`.
pub fn multiplicative_evidence(inst: &ShiftInstance, rm: &RefMeasure, cap: usize) -> Result<ExpansionEvidence> {
    let best = best_multiplicative_c(inst, rm, 0.5, cap)?;
    if !best.c.exceeds_one() {
        return Ok(ExpansionEvidence { param: ExpansionParam::Multiplicative { c: best.c }, report: None });
    }
    let report = check_multiplicative(inst, rm, 0.5, best.c.value_or(3.0), CheckMode::Exact { cap })?;
    Ok(ExpansionEvidence { param: ExpansionParam::Multiplicative { c: best.c }, report: Some(report) })
}

/// Exact `(q, μ)`-constant check.
pub fn constant_evidence(inst: &ShiftInstance, rm: &RefMeasure, q: f64, mu: f64, cap: usize) -> Result<ExpansionEvidence> {
    let report = check_constant(inst, rm, q, mu, CheckMode::Exact { cap })?;
    Ok(ExpansionEvidence { param: ExpansionParam::Constant { q }, report: Some(report) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl Inequality {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        Self { lhs, rhs, pass: lhs <= rhs + TOLERANCE }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub mu: f64,
    pub gamma: f64,
    pub r: f64,
    pub kappa: f64,
    pub expansion: ExpansionParam,
    /// Exact expansion evidence present and satisfied.
    pub certified: bool,
    /// Hypotheses of the bound that do not hold for this input.
    pub precondition_failures: Vec<String>,
    pub rb: f64,
    pub source_disagreement: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub inconsistent: Vec<usize>,
    pub lemma1: Inequality,
    pub lemma2: Inequality,
    pub lemma3a: Inequality,
    pub lemma3b: Inequality,
    pub epsilon_t: f64,
    pub epsilon_t_components: Vec<f64>,
    pub theorem: Inequality,
    /// The printed-form bound, computed for comparison only.
    pub bound_paper_literal: f64,
    /// The bound is at least 1 and therefore says nothing.
    pub vacuous: bool,
    /// Result of the multiplicative ⇒ constant implication probe, when run.
    pub implication_holds: Option<bool>,
}

impl AuditReport {
    pub fn all_pass(&self) -> bool {
        self.lemma1.pass && self.lemma2.pass && self.lemma3a.pass && self.lemma3b.pass && self.theorem.pass
    }
}

/// Recomputes every quantity of the inequality chain for `g`.
pub fn lemma_audit(
    inst: &ShiftInstance,
    g: &Classifier,
    mu: f64,
    rm: &RefMeasure,
    evidence: &ExpansionEvidence,
) -> Result<AuditReport> {
    let assumptions = validate_instance(inst)?;
    let (gamma, r, kappa) = (assumptions.gamma, assumptions.r, assumptions.kappa);
    if !(gamma > 0.0) {
        return Err(Error::Precondition(format!("teacher margin gamma = {gamma} is not positive")));
    }
    let mut failures: Vec<String> = assumptions.violations.clone();
    if !evidence.certified() {
        failures.push("no exact, satisfied expansion check supports the claimed constant".into());
    }
    let rb = consistency_loss(inst, g, rm);
    if rb > mu + TOLERANCE {
        failures.push(format!("R_B(g) = {rb} exceeds mu = {mu}"));
    }
    let rb_truth = consistency_loss(inst, &inst.truth, rm);
    if rb_truth > mu + TOLERANCE {
        failures.push(format!("R_B(g*) = {rb_truth} exceeds mu = {mu}"));
    }
    let l01 = source_disagreement(inst, g);
    let l01_truth = source_disagreement(inst, &inst.truth);
    if l01 > l01_truth + TOLERANCE {
        failures.push(format!("g disagrees with the teacher more than g* does ({l01} > {l01_truth})"));
    }

    let minority = minority_sets(inst, g, rm);
    let c = minority.c;
    let inconsistent = inconsistent_components(inst, g, gamma)?;
    let eps = target_error(inst, g);

    let c_formula = minority_bound(evidence.param, mu);
    let lemma1 = Inequality::new(c, c_formula);
    let source_mass: Vec<f64> = inst.components.iter().map(|comp| inst.source.mass_of(&comp.source)).collect();
    let in_i = |i: usize| inconsistent.binary_search(&i).is_ok();
    let sum_over = |v: &[f64], inside: bool| (0..v.len()).filter(|&i| in_i(i) == inside).fold(0.0, |acc, i| acc + v[i]);
    let lemma2 = Inequality::new(sum_over(&source_mass, true), 2.0 * kappa * c / gamma);
    let rhs3 = 2.0 * kappa * r * c / gamma;
    let lemma3a = Inequality::new(sum_over(&eps.per_component, true), rhs3);
    let lemma3b = Inequality::new(sum_over(&eps.per_component, false), rhs3);

    let query = |form| BoundQuery { expansion: evidence.param, r, mu, gamma, kappa, form };
    let bound = theorem_bound(&query(BoundForm::LemmaComposed))?;
    let bound_paper_literal = theorem_bound(&query(BoundForm::PaperLiteral))?;
    let theorem = Inequality::new(eps.total, bound);

    Ok(AuditReport {
        mu,
        gamma,
        r,
        kappa,
        expansion: evidence.param,
        certified: evidence.certified(),
        precondition_failures: failures,
        rb,
        source_disagreement: l01,
        c,
        inconsistent,
        lemma1,
        lemma2,
        lemma3a,
        lemma3b,
        epsilon_t: eps.total,
        epsilon_t_components: eps.per_component,
        theorem,
        bound_paper_literal,
        vacuous: bound >= 1.0,
        implication_holds: None,
    })
}

/// Runs the multiplicative ⇒ constant implication probe and stores its verdict.
pub fn attach_implication(report: &mut AuditReport, inst: &ShiftInstance, rm: &RefMeasure, cap: usize) -> Result<()> {
    if let ExpansionParam::Multiplicative { c: ExpansionConstant::Finite(c) } = report.expansion {
        if c > 1.0 {
            report.implication_holds = Some(implication_mult_to_const(inst, rm, c, report.mu, cap)?.holds);
        }
    }
    Ok(())
}

/// One line of the sweep CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditRow {
    pub kind: String,
    pub seed: u64,
    pub m: usize,
    pub n_points: usize,
    pub c_or_q: f64,
    pub mu: f64,
    pub gamma: f64,
    pub r: f64,
    pub kappa: f64,
    pub c: f64,
    pub eps_t: f64,
    pub bound: f64,
    pub pass: bool,
    pub certified: bool,
}

pub const CSV_HEADER: &str = "kind,seed,m,n_points,c_or_q,mu,gamma,r,kappa,C,eps_T,bound,pass,certified";

impl AuditRow {
    pub fn from_report(kind: &str, seed: u64, inst: &ShiftInstance, report: &AuditReport) -> Self {
        let c_or_q = match report.expansion {
            ExpansionParam::Multiplicative { c } => c.value_or(f64::INFINITY),
            ExpansionParam::Constant { q } => q,
        };
        Self {
            kind: kind.to_string(),
            seed,
            m: inst.num_components(),
            n_points: inst.len(),
            c_or_q,
            mu: report.mu,
            gamma: report.gamma,
            r: report.r,
            kappa: report.kappa,
            c: report.c,
            eps_t: report.epsilon_t,
            bound: report.theorem.rhs,
            pass: report.all_pass(),
            certified: report.certified,
        }
    }

    pub fn to_csv(&self) -> String {
        let f = format_float;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.kind,
            self.seed,
            self.m,
            self.n_points,
            f(self.c_or_q),
            f(self.mu),
            f(self.gamma),
            f(self.r),
            f(self.kappa),
            f(self.c),
            f(self.eps_t),
            f(self.bound),
            self.pass,
            self.certified
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::{RefKind, DEFAULT_CAP};
    use crate::fixtures;
    use crate::propagation::{solve_constrained, HypothesisClass, SolveOptions};

    fn mult(c: f64) -> ExpansionParam {
        ExpansionParam::Multiplicative { c: ExpansionConstant::Finite(c) }
    }

    #[test]
    fn target_error_examples() {
        let six = fixtures::six();
        assert_eq!(target_error(&six, &six.truth).total, 0.0);
        let g = Classifier::constant(6, 2);
        let e = target_error(&six, &g);
        assert_eq!(e.total, 0.5);
        assert_eq!(e.per_component, vec![0.5, 0.0]);
    }

    #[test]
    fn bound_examples() {
        let q = BoundQuery { expansion: mult(3.0), r: 1.0, mu: 0.004, gamma: 0.5, kappa: 2.0, form: BoundForm::LemmaComposed };
        assert!((theorem_bound(&q).unwrap() - 0.192).abs() < 1e-12);
        let q = BoundQuery { expansion: ExpansionParam::Constant { q: 0.01 }, ..q };
        assert!((theorem_bound(&q).unwrap() - 0.384).abs() < 1e-12);
        let lit = BoundQuery { form: BoundForm::PaperLiteral, ..q };
        assert!((theorem_bound(&lit).unwrap() - 0.384 * 0.004).abs() < 1e-12);
        let unbounded = BoundQuery { expansion: ExpansionParam::Multiplicative { c: ExpansionConstant::Unbounded }, ..q };
        assert!((theorem_bound(&unbounded).unwrap() - 0.192).abs() < 1e-12);
        assert!(theorem_bound(&BoundQuery { expansion: mult(1.0), ..q }).is_err());
        assert!(theorem_bound(&BoundQuery { gamma: 0.0, ..q }).is_err());
    }

    #[test]
    fn pair4_pipeline() {
        let inst = fixtures::pair4();
        let rm = RefMeasure::resolve(&inst, RefKind::MixtureSt).unwrap();
        let g = solve_constrained(&inst, &HypothesisClass::AllLabelings, 0.1, &rm, &SolveOptions::default()).unwrap().chosen;
        let ev = multiplicative_evidence(&inst, &rm, DEFAULT_CAP).unwrap();
        assert_eq!(ev.param, ExpansionParam::Multiplicative { c: ExpansionConstant::Unbounded });
        let rep = lemma_audit(&inst, &g, 0.1, &rm, &ev).unwrap();
        assert!(rep.certified && rep.precondition_failures.is_empty());
        assert_eq!(rep.c, 0.0);
        assert_eq!(rep.epsilon_t, 0.0);
        assert!(rep.all_pass());
    }

    #[test]
    fn chain_pipeline_over_cover() {
        let inst = fixtures::chain();
        let rm = RefMeasure::resolve(&inst, RefKind::CoverU).unwrap();
        let g = solve_constrained(&inst, &HypothesisClass::AllLabelings, 0.05, &rm, &SolveOptions::default()).unwrap().chosen;
        assert_eq!(g, inst.truth);
        let ev = ExpansionEvidence {
            param: mult(1.5),
            report: Some(check_multiplicative(&inst, &rm, 0.5, 1.5, CheckMode::exact()).unwrap()),
        };
        let mut rep = lemma_audit(&inst, &g, 0.05, &rm, &ev).unwrap();
        attach_implication(&mut rep, &inst, &rm, DEFAULT_CAP).unwrap();
        assert!(rep.all_pass());
        assert_eq!(rep.c, 0.0);
        // max(5, 3) · 4κrμ/γ with κ = 5 (S, T point masses 1/2 over U = 1/10), r = 1, γ = 1
        assert_eq!(rep.kappa, 5.0);
        assert!((rep.theorem.rhs - 5.0 * 4.0 * 5.0 * 0.05).abs() < 1e-12);
        assert_eq!(rep.implication_holds, Some(true));
    }

    #[test]
    fn adversarial_classifier_flags_preconditions() {
        let six = fixtures::six();
        let rm = RefMeasure::resolve(&six, RefKind::MixtureSt).unwrap();
        let g = Classifier::constant(6, 1);
        let ev = multiplicative_evidence(&six, &rm, DEFAULT_CAP).unwrap();
        let rep = lemma_audit(&six, &g, 0.1, &rm, &ev).unwrap();
        assert!(!rep.precondition_failures.is_empty());
        assert!(!rep.all_pass());
        assert_eq!(rep.inconsistent, vec![1]);
        assert!(!rep.lemma2.pass);
    }

    #[test]
    fn csv_row_has_header_arity() {
        let inst = fixtures::pair4();
        let rm = RefMeasure::resolve(&inst, RefKind::MixtureSt).unwrap();
        let ev = multiplicative_evidence(&inst, &rm, DEFAULT_CAP).unwrap();
        let rep = lemma_audit(&inst, &inst.truth, 0.1, &rm, &ev).unwrap();
        let row = AuditRow::from_report("fixture", 0, &inst, &rep).to_csv();
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
        assert!(row.starts_with("fixture,0,2,4,inf,"));
    }
}
