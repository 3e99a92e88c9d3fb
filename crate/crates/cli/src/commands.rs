use std::fmt::Display;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use subshift_core::audit::{
    attach_implication, lemma_audit, multiplicative_evidence, AuditRow, ExpansionEvidence, ExpansionParam, CSV_HEADER,
};
use subshift_core::expansion::{
    best_multiplicative_c, check_constant, check_multiplicative, implication_mult_to_const, CheckMode,
    ExpansionConstant, RefMeasure, SampleOptions,
};
use subshift_core::format::{instance_to_json, read_instance};
use subshift_core::instance::{validate_instance, Classifier, ShiftInstance};
use subshift_core::margins::{
    all_layer_margin, ball_features, complexity_term, empirical_margin_losses, finite_sample_diagnostic,
    margin_constrained_select, robust_margin, FeedforwardNet, MarginOptions,
};
use subshift_core::propagation::{solve_constrained, HypothesisClass, SolveOptions, SolveResult};
use subshift_core::report::{to_canonical_json, LIBRARY_VERSION};
use subshift_core::scenarios::{gen_scenario, ScenarioParams};
use subshift_core::sweep::{run_sweep, ExpansionSpec, RefChoice, SweepSpec};
use subshift_core::{fixtures, Error};

use crate::args::*;

pub enum Status {
    Ok,
    AuditFailed,
}

/// Any failure that maps to exit code 1.
pub struct Failure(String);

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure(msg.into())
}

type Result<T> = std::result::Result<T, Failure>;

/// Every JSON report carries the library version and the resolved configuration.
#[derive(Serialize)]
struct Report<'a, C: Serialize, R: Serialize> {
    version: &'static str,
    command: &'static str,
    config: Config<'a, C>,
    result: R,
}

#[derive(Serialize)]
struct Config<'a, C: Serialize> {
    common: &'a Common,
    args: &'a C,
}

fn report<C: Serialize, R: Serialize>(command: &'static str, common: &Common, args: &C, result: R) -> Result<String> {
    let r = Report { version: LIBRARY_VERSION, command, config: Config { common, args }, result };
    to_canonical_json(&r).map_err(|e| usage(format!("serializing report: {e}")))
}

fn emit(common: &Common, text: &str) -> Result<()> {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match &common.out {
        Some(path) => std::fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| usage(format!("stdout: {e}"))),
    }
}

fn load(path: &Path) -> Result<ShiftInstance> {
    read_instance(path).map_err(|e| match e {
        Error::Io(io) => usage(format!("{}: {io}", path.display())),
        other => usage(format!("{}: {other}", path.display())),
    })
}

fn json_only(common: &Common, command: &str) -> Result<()> {
    match common.format() {
        Format::Json => Ok(()),
        Format::Csv => Err(usage(format!("{command} has no CSV output; use --format json"))),
    }
}

fn check_mode(check: &CheckArgs, seed: u64) -> CheckMode {
    match check.mode {
        ModeArg::Exact => CheckMode::Exact { cap: check.cap },
        ModeArg::Sampled => {
            CheckMode::Sampled(SampleOptions { restarts: check.restarts, iterations: check.iterations, seed })
        }
    }
}

pub fn run(cli: Cli) -> Result<Status> {
    let common = &cli.common;
    match &cli.command {
        Command::Gen(a) => gen(common, a),
        Command::Validate(a) => validate(common, a),
        Command::Expansion(a) => expansion(common, a),
        Command::Solve(a) => solve(common, a),
        Command::Audit(a) => audit(common, a),
        Command::Margin(a) => margin(common, a),
        Command::Sweep(a) => sweep(common, a),
    }
}

fn gen(common: &Common, a: &GenArgs) -> Result<Status> {
    json_only(common, "gen")?;
    let inst = match &a.fixture {
        Some(name) => fixtures::by_name(name).ok_or_else(|| usage(format!("unknown fixture {name:?} (pair4, six, chain)")))?,
        None => gen_scenario(&ScenarioParams {
            kind: a.kind,
            m: a.m,
            k: a.k,
            points_min: a.points_min,
            points_max: a.points_max,
            teacher_error_rate: a.teacher_error_rate,
            ball_radius: a.ball_radius,
            chain_length: a.chain_length,
            source_count: a.source_count,
            seed: common.seed,
        })?,
    };
    emit(common, &instance_to_json(&inst))?;
    Ok(Status::Ok)
}

fn validate(common: &Common, a: &InstanceArg) -> Result<Status> {
    json_only(common, "validate")?;
    let inst = load(&a.instance)?;
    let rep = validate_instance(&inst)?;
    emit(common, &report("validate", common, a, rep)?)?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct ExpansionResult {
    reference: String,
    best: Option<subshift_core::expansion::BestConstant>,
    report: Option<subshift_core::expansion::ExpansionReport>,
    implication: Option<subshift_core::expansion::ImplicationReport>,
}

fn resolve_ref(inst: &ShiftInstance, r: RefArg) -> Result<RefMeasure> {
    Ok(RefMeasure::resolve(inst, r.resolve(inst.cover.is_some()))?)
}

fn expansion(common: &Common, a: &ExpansionArgs) -> Result<Status> {
    json_only(common, "expansion")?;
    let inst = load(&a.instance)?;
    let rm = resolve_ref(&inst, a.check.r#ref)?;
    let mode = check_mode(&a.check, common.seed);
    let mut out = ExpansionResult { reference: format!("{:?}", rm.kind), best: None, report: None, implication: None };
    match a.expansion {
        ExpansionArg::Mult { a: frac, c: None } => {
            if a.check.mode == ModeArg::Sampled {
                return Err(usage("measuring c* needs exact mode; pass c=<value> to check a constant by sampling"));
            }
            let best = best_multiplicative_c(&inst, &rm, frac, a.check.cap)?;
            if let ExpansionConstant::Finite(c) = best.c {
                if c > 1.0 {
                    out.report = Some(check_multiplicative(&inst, &rm, frac, c, mode)?);
                }
            }
            out.best = Some(best);
        }
        ExpansionArg::Mult { a: frac, c: Some(c) } => {
            out.report = Some(check_multiplicative(&inst, &rm, frac, c, mode)?);
            if let Some(mu) = a.implies_mu {
                if frac != 0.5 {
                    return Err(usage("the implication is stated for a = 1/2"));
                }
                out.implication = Some(implication_mult_to_const(&inst, &rm, c, mu, a.check.cap)?);
            }
        }
        ExpansionArg::Const { q, xi } => {
            let xi = xi.ok_or_else(|| usage("constant expansion check needs xi=<value>"))?;
            out.report = Some(check_constant(&inst, &rm, q, xi, mode)?);
        }
    }
    emit(common, &report("expansion", common, a, out)?)?;
    Ok(Status::Ok)
}

fn hypothesis_class(inst: &ShiftInstance, h: &HypothesisArg) -> Result<HypothesisClass> {
    match h {
        HypothesisArg::Mode(mode) => Ok(mode.class_for(inst)),
        HypothesisArg::Labelings(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            let raw: Vec<Vec<u32>> = serde_path_to_error::deserialize(de).map_err(|e| {
                let at = e.path().to_string();
                usage(format!("{}: {}: {}", path.display(), if at.is_empty() { "$" } else { &at }, e.into_inner()))
            })?;
            let members = raw
                .into_iter()
                .enumerate()
                .map(|(i, labels)| {
                    if labels.len() != inst.len() {
                        return Err(usage(format!(
                            "{}: [{i}]: labeling has {} entries, instance has {} points",
                            path.display(),
                            labels.len(),
                            inst.len()
                        )));
                    }
                    Classifier::new(labels, inst.num_classes).map_err(|e| usage(format!("{}: [{i}]: {e}", path.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(HypothesisClass::Explicit { members })
        }
    }
}

fn solve_for(inst: &ShiftInstance, rm: &RefMeasure, h: &HypothesisArg, mu: f64, cap_log2: u32, realizable: bool, seed: u64) -> Result<SolveResult> {
    let opts = SolveOptions {
        cap_log2,
        search: SampleOptions { seed, ..SampleOptions::default() },
        require_realizable: realizable,
    };
    Ok(solve_constrained(inst, &hypothesis_class(inst, h)?, mu, rm, &opts)?)
}

fn solve(common: &Common, a: &SolveArgs) -> Result<Status> {
    let inst = load(&a.instance)?;
    let rm = resolve_ref(&inst, a.r#ref)?;
    let res = solve_for(&inst, &rm, &a.hypothesis, a.mu, a.cap_log2, a.require_realizable, common.seed)?;
    let text = match common.format() {
        Format::Json => report("solve", common, a, &res)?,
        Format::Csv => {
            let mut s = String::from("point,label\n");
            for (x, l) in res.chosen.labels().iter().enumerate() {
                s.push_str(&format!("{x},{l}\n"));
            }
            s
        }
    };
    emit(common, &text)?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct AuditResult<'a> {
    reference: String,
    solve: &'a SolveResult,
    evidence: &'a ExpansionEvidence,
    audit: &'a subshift_core::audit::AuditReport,
    pass: bool,
}

fn audit(common: &Common, a: &AuditArgs) -> Result<Status> {
    let inst = load(&a.instance)?;
    let rm = resolve_ref(&inst, a.check.r#ref)?;
    let mode = check_mode(&a.check, common.seed);
    let evidence = match a.expansion {
        ExpansionArg::Mult { a: frac, .. } if frac != 0.5 => {
            return Err(usage(format!("the bound uses (1/2, c)-multiplicative expansion; got a = {frac}")))
        }
        ExpansionArg::Mult { c: None, .. } => {
            if a.check.mode == ModeArg::Sampled {
                return Err(usage("measuring c* needs exact mode; pass c=<value> to check a constant by sampling"));
            }
            multiplicative_evidence(&inst, &rm, a.check.cap)?
        }
        ExpansionArg::Mult { c: Some(c), .. } => ExpansionEvidence {
            param: ExpansionParam::Multiplicative { c: ExpansionConstant::Finite(c) },
            report: Some(check_multiplicative(&inst, &rm, 0.5, c, mode)?),
        },
        ExpansionArg::Const { q, xi } => {
            if xi.is_some_and(|xi| xi != a.mu) {
                return Err(usage("the bound uses (q, mu)-constant expansion; omit xi or set it to --mu"));
            }
            ExpansionEvidence {
                param: ExpansionParam::Constant { q },
                report: Some(check_constant(&inst, &rm, q, a.mu, mode)?),
            }
        }
    };
    if let ExpansionParam::Multiplicative { c } = evidence.param {
        if !c.exceeds_one() {
            return Err(usage(format!("the instance has no multiplicative expansion at a = 1/2 (c* = {c:?}); no bound applies")));
        }
    }
    let solved = solve_for(&inst, &rm, &a.hypothesis, a.mu, a.cap_log2, false, common.seed)?;
    let mut rep = lemma_audit(&inst, &solved.chosen, a.mu, &rm, &evidence)?;
    if a.implication {
        attach_implication(&mut rep, &inst, &rm, a.check.cap)?;
    }
    let pass = rep.all_pass();
    let text = match common.format() {
        Format::Json => report(
            "audit",
            common,
            a,
            AuditResult { reference: format!("{:?}", rm.kind), solve: &solved, evidence: &evidence, audit: &rep, pass },
        )?,
        Format::Csv => {
            let kind = a.instance.file_stem().and_then(|s| s.to_str()).unwrap_or("instance");
            let mut row = AuditRow::from_report(kind, common.seed, &inst, &rep);
            row.certified = rep.certified && solved.certified;
            format!("{CSV_HEADER}\n{}\n", row.to_csv())
        }
    };
    emit(common, &text)?;
    Ok(if pass { Status::Ok } else { Status::AuditFailed })
}

fn parse_bset(s: &str) -> Result<Vec<Vec<f64>>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| usage(format!("--bset: not a number: {v:?}"))))
                .collect()
        })
        .collect()
}

#[derive(Serialize)]
struct PointMargin {
    net: String,
    prediction: u32,
    label: Option<u32>,
    margin: subshift_core::margins::MarginResult,
}

#[derive(Serialize)]
struct NetLosses {
    net: String,
    losses: subshift_core::margins::MarginLosses,
    complexity: f64,
}

#[derive(Serialize)]
struct EmpiricalResult {
    n: usize,
    t: f64,
    nets: Vec<NetLosses>,
    selection: Option<subshift_core::margins::Selection>,
    /// Computed with the first net that labels every point like g*.
    diagnostic: Option<(String, subshift_core::margins::FiniteSampleDiagnostic)>,
}

fn margin(common: &Common, a: &MarginArgs) -> Result<Status> {
    json_only(common, "margin")?;
    let nets = a
        .nets
        .iter()
        .map(|p| FeedforwardNet::read(p).map_err(|e| usage(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = a.nets.iter().map(|p| p.display().to_string()).collect();
    let opts = MarginOptions { restarts: a.restarts, max_iters: a.max_iters, seed: common.seed, ..MarginOptions::default() };
    let text = if let Some(x) = &a.x {
        let bset = a.bset.as_deref().map(parse_bset).transpose()?;
        let mut out = Vec::new();
        for (net, name) in nets.iter().zip(&names) {
            if x.len() != net.input_dim() {
                return Err(usage(format!("--x has {} coordinates, {name} expects {}", x.len(), net.input_dim())));
            }
            let prediction = net.predict(x);
            let (label, margin) = match &bset {
                Some(b) => (None, robust_margin(net, x, b, &opts)?),
                None => {
                    let y = a.y.unwrap_or(prediction);
                    (Some(y), all_layer_margin(net, x, y, &opts)?)
                }
            };
            out.push(PointMargin { net: name.clone(), prediction, label, margin });
        }
        report("margin", common, a, out)?
    } else if let Some(path) = &a.instance {
        let inst = load(path)?;
        let emp = subshift_core::instance::sample_empirical(&inst, a.n, common.seed)?;
        let bsets = ball_features(&inst)?;
        let mut rows = Vec::new();
        for (net, name) in nets.iter().zip(&names) {
            let losses = empirical_margin_losses(net, &emp, &inst.teacher, a.t, &bsets, &opts)?;
            rows.push(NetLosses { net: name.clone(), losses, complexity: complexity_term(net, a.t, a.n, a.delta)? });
        }
        let selection = match a.mu {
            Some(mu) => Some(margin_constrained_select(&nets, &emp, &inst.teacher, a.t, mu, &bsets, &opts)?),
            None => None,
        };
        let features = |x: usize| inst.points[x].features.clone().unwrap_or_default();
        let realizes = |net: &FeedforwardNet| (0..inst.len()).all(|x| net.predict(&features(x)) == inst.truth.label(x));
        let diagnostic = match nets.iter().position(realizes) {
            Some(i) => Some((
                names[i].clone(),
                finite_sample_diagnostic(&nets[i], &emp, a.t, a.mu.unwrap_or(0.0), a.delta, &bsets, &opts)?,
            )),
            None => None,
        };
        report("margin", common, a, EmpiricalResult { n: a.n, t: a.t, nets: rows, selection, diagnostic })?
    } else {
        return Err(usage("margin needs --x <coords> or --instance <file>"));
    };
    emit(common, &text)?;
    Ok(Status::Ok)
}

fn sweep_spec(a: &SweepArgs) -> Result<SweepSpec> {
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        return serde_path_to_error::deserialize(de).map_err(|e| {
            let at = e.path().to_string();
            usage(format!("{}: {}: {}", path.display(), if at.is_empty() { "$" } else { &at }, e.into_inner()))
        });
    }
    let expansion = match a.expansion {
        ExpansionArg::Mult { a: 0.5, c: None } => ExpansionSpec::Multiplicative,
        ExpansionArg::Mult { .. } => {
            return Err(usage("sweeps measure c* at a = 1/2 per instance; use --expansion mult or mult:a=0.5"))
        }
        ExpansionArg::Const { q, xi: None } => ExpansionSpec::Constant { q },
        ExpansionArg::Const { .. } => return Err(usage("sweeps check constant expansion at xi = mu; omit xi")),
    };
    Ok(SweepSpec {
        kinds: a.kinds.clone(),
        m: a.m.clone(),
        k: a.k.clone(),
        points_min: a.points_min,
        points_max: a.points_max,
        teacher_error_rate: a.teacher_error_rate.clone(),
        ball_radius: a.ball_radius.clone(),
        chain_length: a.chain_length.clone(),
        source_count: a.source_count.clone(),
        mu: a.mu.clone(),
        seeds: parse_seeds(&a.seeds).map_err(usage)?,
        hypothesis: a.hypothesis,
        expansion,
        reference: match a.r#ref {
            RefArg::Auto => RefChoice::Auto,
            RefArg::Mixture => RefChoice::Mixture,
            RefArg::Cover => RefChoice::Cover,
        },
        cap: a.cap,
    })
}

#[derive(Serialize)]
struct SweepJson<'a> {
    summary: &'a subshift_core::sweep::SweepSummary,
    cells: &'a [subshift_core::sweep::CellOutcome],
}

fn sweep(common: &Common, a: &SweepArgs) -> Result<Status> {
    let spec = sweep_spec(a)?;
    let outcome = run_sweep(&spec, common.jobs)?;
    let text = match common.format.unwrap_or(Format::Csv) {
        // rows are the hand-off format; JSON carries every cell in full
        Format::Csv => outcome.csv(),
        Format::Json => report("sweep", common, a, SweepJson { summary: &outcome.summary, cells: &outcome.outcomes })?,
    };
    emit(common, &text)?;
    if let Some(path) = &a.summary {
        std::fs::write(path, outcome.summary_json() + "\n").map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    if common.out.is_some() {
        println!("{}", outcome.summary_line());
    } else {
        eprintln!("{}", outcome.summary_line());
    }
    Ok(if outcome.any_failure() { Status::AuditFailed } else { Status::Ok })
}
