use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use subshift_core::expansion::RefKind;
use subshift_core::scenarios::ScenarioKind;
use subshift_core::sweep::HypothesisMode;

#[derive(Parser, Debug)]
#[command(name = "subshift", version, about = "Label propagation under subpopulation shift on finite instances")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Seed for every random choice of the command
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file (stdout when absent)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Report format (sweep defaults to csv, everything else to json)
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads; 0 = available cores
    // left out of reports: outputs must not depend on it
    #[arg(long, global = true, default_value_t = 0)]
    #[serde(skip)]
    pub jobs: usize,
}

impl Common {
    pub fn format(&self) -> Format {
        self.format.unwrap_or(Format::Json)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a scenario instance (or write a built-in fixture)
    Gen(GenArgs),
    /// Check structural assumptions and report gamma, r, kappa
    Validate(InstanceArg),
    /// Exact or sampled expansion checks
    Expansion(ExpansionArgs),
    /// Consistency-constrained teacher fitting
    Solve(SolveArgs),
    /// Solve, then audit every inequality of the error bound
    Audit(AuditArgs),
    /// All-layer margins of feedforward nets
    Margin(MarginArgs),
    /// Run generate → solve → audit over a parameter grid
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InstanceArg {
    #[arg(long)]
    pub instance: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GenArgs {
    /// Scenario kind: uda, ssl, domain_expansion, extrapolation, multisource, random_metric
    #[arg(long, default_value = "uda", value_parser = parse_from_str::<ScenarioKind>)]
    pub kind: ScenarioKind,
    /// Write a built-in fixture instead (pair4, six, chain)
    #[arg(long, conflicts_with = "kind")]
    pub fixture: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long = "K", alias = "k", default_value_t = 2)]
    pub k: u32,
    #[arg(long, default_value_t = 2)]
    pub points_min: usize,
    #[arg(long, default_value_t = 4)]
    pub points_max: usize,
    #[arg(long, default_value_t = 0.1)]
    pub teacher_error_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    pub ball_radius: f64,
    #[arg(long, default_value_t = 5)]
    pub chain_length: usize,
    #[arg(long, default_value_t = 3)]
    pub source_count: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RefArg {
    /// U when the instance has one, ½(S+T) otherwise
    Auto,
    Mixture,
    Cover,
}

impl RefArg {
    pub fn resolve(self, has_cover: bool) -> RefKind {
        match self {
            RefArg::Mixture => RefKind::MixtureSt,
            RefArg::Cover => RefKind::CoverU,
            RefArg::Auto if has_cover => RefKind::CoverU,
            RefArg::Auto => RefKind::MixtureSt,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Exact,
    Sampled,
}

/// `mult:a=0.5[,c=1.5]` or `const:q=0.2[,xi=0.1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpansionArg {
    Mult { a: f64, c: Option<f64> },
    Const { q: f64, xi: Option<f64> },
}

impl FromStr for ExpansionArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (head, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut fields = std::collections::BTreeMap::new();
        for kv in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got {kv:?}"))?;
            let v: f64 = v.parse().map_err(|_| format!("{k}: not a number: {v:?}"))?;
            fields.insert(k.trim().to_string(), v);
        }
        let mut take = |k: &str| fields.remove(k);
        let parsed = match head {
            "mult" | "multiplicative" => ExpansionArg::Mult { a: take("a").unwrap_or(0.5), c: take("c") },
            "const" | "constant" => ExpansionArg::Const {
                q: take("q").ok_or("constant expansion needs q=<value>")?,
                xi: take("xi"),
            },
            other => return Err(format!("unknown expansion kind {other:?} (expected mult or const)")),
        };
        match fields.keys().next() {
            Some(extra) => Err(format!("unknown expansion parameter {extra:?}")),
            None => Ok(parsed),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CheckArgs {
    #[arg(long, value_enum, default_value_t = RefArg::Auto)]
    pub r#ref: RefArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    pub mode: ModeArg,
    /// Largest component support enumerated exactly
    #[arg(long, default_value_t = 20)]
    pub cap: usize,
    /// Sampled mode: hill-climbing restarts
    #[arg(long, default_value_t = 32)]
    pub restarts: usize,
    /// Sampled mode: moves per restart
    #[arg(long, default_value_t = 400)]
    pub iterations: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ExpansionArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// mult:a=0.5 (measure c*), mult:a=0.5,c=1.5 (check c), const:q=0.2,xi=0.1
    #[arg(long, default_value = "mult:a=0.5", value_parser = parse_from_str::<ExpansionArg>)]
    pub expansion: ExpansionArg,
    /// Also test the implied (mu/(c-1), mu)-constant expansion at this mu
    #[arg(long)]
    pub implies_mu: Option<f64>,
    #[command(flatten)]
    pub check: CheckArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub mu: f64,
    /// all = every labeling; component = constant on each component; labelings:<file>
    #[arg(long, default_value = "all", value_parser = parse_from_str::<HypothesisArg>)]
    pub hypothesis: HypothesisArg,
    #[arg(long, value_enum, default_value_t = RefArg::Auto)]
    pub r#ref: RefArg,
    /// Exhaustive enumeration while K^cells ≤ 2^cap_log2
    #[arg(long, default_value_t = 20)]
    pub cap_log2: u32,
    /// Fail unless g* is in the class and satisfies the constraint
    #[arg(long)]
    pub require_realizable: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AuditArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub mu: f64,
    /// all, component, or labelings:<file>
    #[arg(long, default_value = "all", value_parser = parse_from_str::<HypothesisArg>)]
    pub hypothesis: HypothesisArg,
    #[arg(long, default_value = "mult:a=0.5", value_parser = parse_from_str::<ExpansionArg>)]
    pub expansion: ExpansionArg,
    #[arg(long, default_value_t = 20)]
    pub cap_log2: u32,
    /// Also probe the multiplicative ⇒ constant implication
    #[arg(long)]
    pub implication: bool,
    #[command(flatten)]
    pub check: CheckArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MarginArgs {
    /// Network file(s); several form a family for --mu selection
    #[arg(long = "net", required = true)]
    pub nets: Vec<PathBuf>,
    /// Single input point, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "instance")]
    pub x: Option<Vec<f64>>,
    /// Label for --x (defaults to the net's prediction)
    #[arg(long, requires = "x")]
    pub y: Option<u32>,
    /// Perturbation set for a robust margin: "x1,y1;x2,y2"
    #[arg(long, requires = "x", allow_hyphen_values = true)]
    pub bset: Option<String>,
    /// Instance with point features for empirical margin losses
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Margin threshold
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    /// Empirical sample size
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Select the family member with smallest source margin loss subject to lr ≤ mu
    #[arg(long)]
    pub mu: Option<f64>,
    /// Confidence parameter of the finite-sample diagnostic
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SweepArgs {
    /// JSON sweep specification; grid flags below are ignored when given
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "uda", value_parser = parse_from_str::<ScenarioKind>)]
    pub kinds: Vec<ScenarioKind>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub m: Vec<usize>,
    #[arg(long = "K", alias = "k", value_delimiter = ',', default_value = "2")]
    pub k: Vec<u32>,
    #[arg(long, default_value_t = 2)]
    pub points_min: usize,
    #[arg(long, default_value_t = 4)]
    pub points_max: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub teacher_error_rate: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub ball_radius: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub chain_length: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub source_count: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pub mu: Vec<f64>,
    /// Seed list "1,2,3" or half-open range "0..100"
    #[arg(long, default_value = "0..10")]
    pub seeds: String,
    #[arg(long, default_value = "all", value_parser = parse_from_str::<HypothesisMode>)]
    pub hypothesis: HypothesisMode,
    /// mult, or const:q=<value>
    #[arg(long, default_value = "mult:a=0.5", value_parser = parse_from_str::<ExpansionArg>)]
    pub expansion: ExpansionArg,
    #[arg(long, value_enum, default_value_t = RefArg::Auto)]
    pub r#ref: RefArg,
    #[arg(long, default_value_t = 20)]
    pub cap: usize,
    /// Write the JSON summary here
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

/// `all`, `component`, or `labelings:<file>` with a JSON list of label vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum HypothesisArg {
    Mode(HypothesisMode),
    Labelings(PathBuf),
}

impl FromStr for HypothesisArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some(("labelings", path)) if !path.is_empty() => Ok(HypothesisArg::Labelings(PathBuf::from(path))),
            _ => s.parse::<HypothesisMode>().map(HypothesisArg::Mode).map_err(|e| format!("{e}, or labelings:<file>")),
        }
    }
}

pub fn parse_from_str<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

/// `"0..100"` or `"3,5,8"`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range start {a:?}"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range end {b:?}"))?;
        return Ok((a..b).collect());
    }
    s.split(',').map(|p| p.trim().parse::<u64>().map_err(|_| format!("bad seed {p:?}"))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion_specs() {
        assert_eq!("mult:a=0.5".parse(), Ok(ExpansionArg::Mult { a: 0.5, c: None }));
        assert_eq!("mult:a=0.5,c=1.5".parse(), Ok(ExpansionArg::Mult { a: 0.5, c: Some(1.5) }));
        assert_eq!("const:q=0.2".parse(), Ok(ExpansionArg::Const { q: 0.2, xi: None }));
        assert!("const".parse::<ExpansionArg>().is_err());
        assert!("mult:a=0.5,z=1".parse::<ExpansionArg>().is_err());
        assert!("cheeger:h=1".parse::<ExpansionArg>().is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3"), Ok(vec![0, 1, 2]));
        assert_eq!(parse_seeds("4, 9"), Ok(vec![4, 9]));
        assert!(parse_seeds("a..b").is_err());
    }
}
