//! Subcommand implementations. Each returns the text to emit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gftlab::audits::{audit, audit_exact, AuditReport, EvalMode, CSV_VERSION};
use gftlab::bounds::{benchmark_decomposition, best_bilateral_fpp, bilateral_first_best, opt_b, sb_gft_upper};
use gftlab::instances::{InstanceSpec, NAMED_EXAMPLES};
use gftlab::mechanisms::MechanismSpec;
use gftlab::oracle::{second_best_lp_with, second_best_model, verify_ub_chain, Budget, DiscreteMarket};
use gftlab::{Error, MarketInstance, Mechanism};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error as ThisError;

use crate::selftest;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Library(#[from] Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("acceptance suite failed: criteria {0:?}")]
    Selftest(Vec<u8>),
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 3 for capacity or
    /// continuous inputs where a discrete one is required.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Library(e) => match e {
                Error::Capacity { .. } | Error::Unsupported(_) => 3,
                Error::Parameter(_) | Error::Domain(_) | Error::Json(_) | Error::Precondition(_) | Error::Construction(_) => 2,
                _ => 1,
            },
            CliError::Selftest(_) => 1,
        }
    }

    pub fn hint(&self) -> Option<&'static str> {
        match self {
            CliError::Library(Error::Unsupported(msg)) if msg.contains("discret") => {
                Some("hint: discretize first, e.g. use the a1_discrete or a2_discrete examples")
            }
            _ => None,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "gft-lab", version, about = "Gains-from-trade mechanisms, benchmarks and LP oracles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run mechanisms and emit one audit row per mechanism.
    Simulate(SimulateArgs),
    /// Benchmark decomposition and upper bounds.
    Bounds(BoundsArgs),
    /// Second-best and super-seller LPs on a discrete instance.
    Oracle(OracleArgs),
    /// Print a named example instance as JSON.
    Example(ExampleArgs),
    /// Run the acceptance suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, Default, ValueEnum, PartialEq, Eq)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct InstanceArgs {
    /// Instance JSON file.
    #[arg(long, conflicts_with = "example")]
    pub instance: Option<PathBuf>,
    /// Named example, see `gft-lab example --list`.
    #[arg(long)]
    pub example: Option<String>,
    /// Example parameter as key=value; repeatable.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    /// Write here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Enumerate every profile instead of sampling.
    #[arg(long, conflicts_with_all = ["samples", "seed"])]
    pub exact: bool,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl EvalArgs {
    fn mode(&self) -> CliResult<EvalMode> {
        if self.exact {
            return Ok(EvalMode::Exact);
        }
        match (self.samples, self.seed) {
            (Some(0), _) => Err(CliError::Config("--samples must be positive".into())),
            (Some(samples), Some(seed)) => Ok(EvalMode::Mc { samples, seed }),
            (_, None) => Err(CliError::Config("Monte Carlo runs need --seed (or pass --exact)".into())),
            (None, _) => Err(CliError::Config("Monte Carlo runs need --samples (or pass --exact)".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: InstanceArgs,
    /// buyer_offering, seller_offering, fpp, sapp_unlikely or sapp_reduction; repeatable.
    #[arg(long = "mechanism")]
    pub mechanisms: Vec<String>,
    /// Mechanism JSON file (one spec or a list); repeatable.
    #[arg(long = "mechanism-spec")]
    pub mechanism_specs: Vec<PathBuf>,
    /// Prices for `fpp`: a list (both sides equal) or {"theta_b": [...], "theta_s": [...]}.
    #[arg(long)]
    pub prices: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub source: InstanceArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Candidate prices in the bilateral fixed-price sweep.
    #[arg(long, default_value_t = 256)]
    pub sweep_points: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub source: InstanceArgs,
    /// Impose budget balance on every profile instead of in expectation.
    #[arg(long)]
    pub ex_post: bool,
    /// Write the second-best LP in text form to this file.
    #[arg(long)]
    pub lp_dump: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ExampleArgs {
    pub name: Option<String>,
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// List the named examples.
    #[arg(long)]
    pub list: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Run only these criteria; repeatable.
    #[arg(long = "criterion")]
    pub criteria: Vec<u8>,
    /// Print every check, not just one line per criterion.
    #[arg(long)]
    pub verbose: bool,
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

pub fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| CliError::Io { path: p.to_path_buf(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_params(raw: &[String]) -> CliResult<BTreeMap<String, f64>> {
    raw.iter()
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("parameter `{kv}` is not key=value")))?;
            let v: f64 = v.trim().parse().map_err(|_| CliError::Config(format!("parameter `{k}` has non-numeric value `{v}`")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

/// The instance named by the flags, with a label for reports.
pub fn load_instance(args: &InstanceArgs) -> CliResult<(MarketInstance, String)> {
    let (spec, label) = match (&args.instance, &args.example) {
        (Some(path), None) => {
            let text = read(path)?;
            if text.trim().is_empty() {
                return Err(CliError::Config(format!("{}: empty instance file", path.display())));
            }
            let spec = InstanceSpec::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let label = path.file_stem().map_or("instance".into(), |s| s.to_string_lossy().into_owned());
            (spec, label)
        }
        (None, Some(name)) => {
            let params = parse_params(&args.params)?;
            let label = std::iter::once(name.clone())
                .chain(params.iter().map(|(k, v)| format!("{k}={v}")))
                .collect::<Vec<_>>()
                .join(":");
            (InstanceSpec::Named { example: name.clone(), params }, label)
        }
        _ => return Err(CliError::Config("give exactly one of --instance or --example".into())),
    };
    Ok((spec.realize()?, label))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PriceFile {
    Symmetric(Vec<f64>),
    Split { theta_b: Vec<f64>, theta_s: Vec<f64> },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    One(MechanismSpec),
    Many(Vec<MechanismSpec>),
}

fn named_mechanism(name: &str, inst: &MarketInstance, prices: Option<&PriceFile>) -> CliResult<MechanismSpec> {
    Ok(match name {
        "buyer_offering" | "bo" => MechanismSpec::BuyerOffering,
        "seller_offering" | "so" => MechanismSpec::SellerOffering,
        "fpp" => match prices {
            Some(PriceFile::Symmetric(p)) => MechanismSpec::Fpp { theta_b: p.clone(), theta_s: p.clone() },
            Some(PriceFile::Split { theta_b, theta_s }) => MechanismSpec::Fpp { theta_b: theta_b.clone(), theta_s: theta_s.clone() },
            None => {
                let p: Vec<f64> = (0..inst.n()).map(|i| inst.buyer(i).survival_quantile(0.5)).collect::<Result<_, _>>()?;
                MechanismSpec::Fpp { theta_b: p.clone(), theta_s: p }
            }
        },
        "sapp_unlikely" | "sapp" => MechanismSpec::Sapp { rule: gftlab::mechanisms::RuleName::UnlikelyTrade, items: None },
        "sapp_reduction" => MechanismSpec::Sapp { rule: gftlab::mechanisms::RuleName::Reduction, items: None },
        other => {
            return Err(CliError::Config(format!(
                "unknown mechanism `{other}`; expected buyer_offering, seller_offering, fpp, sapp_unlikely or sapp_reduction"
            )))
        }
    })
}

fn mechanisms(args: &SimulateArgs, inst: &MarketInstance) -> CliResult<Vec<Box<dyn Mechanism>>> {
    let prices = match &args.prices {
        Some(p) => Some(serde_json::from_str::<PriceFile>(&read(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut specs = Vec::new();
    for name in &args.mechanisms {
        specs.push(named_mechanism(name, inst, prices.as_ref())?);
    }
    for path in &args.mechanism_specs {
        match serde_json::from_str::<SpecFile>(&read(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))? {
            SpecFile::One(s) => specs.push(s),
            SpecFile::Many(v) => specs.extend(v),
        }
    }
    if specs.is_empty() {
        return Err(CliError::Config("give at least one --mechanism or --mechanism-spec".into()));
    }
    specs.iter().map(|s| s.build(inst).map_err(CliError::from)).collect()
}

pub fn simulate(args: &SimulateArgs) -> CliResult<String> {
    let mode = args.eval.mode()?;
    let (inst, label) = load_instance(&args.source)?;
    let mechs = mechanisms(args, &inst)?;
    let reports: Vec<AuditReport> = mechs
        .iter()
        .map(|m| match mode {
            EvalMode::Exact => audit_exact(m.as_ref(), &inst, &label),
            EvalMode::Mc { samples, seed } => audit(m.as_ref(), &inst, &label, samples, seed),
        })
        .collect::<Result<_, _>>()?;
    Ok(match args.out.format {
        Format::Csv => {
            let mut out = AuditReport::csv_header();
            out.push('\n');
            for r in &reports {
                out.push_str(&r.csv_row());
                out.push('\n');
            }
            out
        }
        Format::Json => {
            let rows: Vec<Value> = reports.iter().map(serde_json::to_value).collect::<Result<_, _>>().map_err(Error::from)?;
            pretty(&json!({ "version": CSV_VERSION.trim_start_matches('#'), "rows": rows }))?
        }
    })
}

fn pretty(v: &Value) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

/// Flattens a JSON tree into `(dotted path, number)` rows.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), v, out);
            }
        }
        Value::Null => {}
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn tidy(doc: &Value, format: Format) -> CliResult<String> {
    match format {
        Format::Json => pretty(doc),
        Format::Csv => {
            let mut rows = Vec::new();
            flatten("", doc, &mut rows);
            let mut out = format!("{CSV_VERSION}\nquantity,value\n");
            for (k, v) in rows {
                out.push_str(&format!("{k},{}\n", v.trim_matches('"')));
            }
            Ok(out)
        }
    }
}

pub fn bounds(args: &BoundsArgs) -> CliResult<String> {
    let mode = args.eval.mode()?;
    let (inst, label) = load_instance(&args.source)?;
    let bench = benchmark_decomposition(&inst, mode)?;
    let mut doc = json!({
        "instance": label,
        "mode": mode,
        "trade_probabilities": inst.trade_probabilities(),
        "r": inst.min_trade_probability(),
        "benchmark": bench,
        "opt_b": opt_b(&inst, mode)?,
    });
    match sb_gft_upper(&inst, mode) {
        Ok(u) => doc["sb_gft_upper"] = serde_json::to_value(u).map_err(Error::from)?,
        Err(e) => doc["sb_gft_upper_error"] = Value::String(e.to_string()),
    }
    if inst.n() == 1 {
        let best = best_bilateral_fpp(&inst, args.sweep_points)?;
        doc["bilateral"] = json!({
            "first_best": bilateral_first_best(&inst)?,
            "best_fixed_price": best.price,
            "best_fixed_price_gft": best.gft,
            "ratio": bilateral_first_best(&inst)? / best.gft,
        });
    }
    tidy(&doc, args.out.format)
}

pub fn oracle(args: &OracleArgs) -> CliResult<String> {
    let (inst, label) = load_instance(&args.source)?;
    let market = DiscreteMarket::new(&inst)?;
    let budget = if args.ex_post { Budget::ExPost } else { Budget::ExAnte };
    if let Some(path) = &args.lp_dump {
        write_output(Some(path), &second_best_model(&market, budget).to_text())?;
    }
    let chain = verify_ub_chain(&market)?;
    let mut doc = json!({
        "instance": label,
        "cells": market.cells(),
        "budget": budget,
        "sb_gft": if args.ex_post { second_best_lp_with(&market, budget)? } else { chain.sb },
        "chain": chain,
        "verdicts": {
            "sb_le_fb": chain.sb_le_fb,
            "sb_lt_fb": chain.sb < chain.fb - gftlab::oracle::CHAIN_TOL * (1.0 + chain.fb.abs()),
            "sb_le_opt_b_plus_opt_s": chain.sb_le_opt_s_plus_opt_b,
            "all_hold": chain.all_hold(),
        },
    });
    doc["chain"]["all_hold"] = Value::Bool(chain.all_hold());
    tidy(&doc, args.out.format)
}

pub fn example(args: &ExampleArgs) -> CliResult<String> {
    if args.list {
        return Ok(NAMED_EXAMPLES.iter().map(|(n, p)| format!("{n}: {p}\n")).collect());
    }
    let name = args.name.clone().ok_or_else(|| CliError::Config("name an example or pass --list".into()))?;
    let spec = InstanceSpec::Named { example: name, params: parse_params(&args.params)? };
    let explicit = InstanceSpec::from_instance(&spec.realize()?)?;
    let mut text = explicit.to_json()?;
    text.push('\n');
    Ok(text)
}

pub fn selftest(args: &SelftestArgs) -> CliResult<String> {
    let ids = if args.criteria.is_empty() { selftest::criterion_ids() } else { args.criteria.clone() };
    let mut out = String::new();
    let mut failed = Vec::new();
    for id in ids {
        let v = selftest::run_criterion(id).ok_or_else(|| CliError::Config(format!("no criterion {id}")))?;
        out.push_str(&if args.verbose { v.report() } else { v.line() });
        out.push('\n');
        if !v.passed {
            failed.push(id);
        }
    }
    print!("{out}");
    if failed.is_empty() {
        Ok(String::new())
    } else {
        Err(CliError::Selftest(failed))
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => write_output(a.out.output.as_deref(), &simulate(a)?),
        Command::Bounds(a) => write_output(a.out.output.as_deref(), &bounds(a)?),
        Command::Oracle(a) => write_output(a.out.output.as_deref(), &oracle(a)?),
        Command::Example(a) => write_output(a.output.as_deref(), &example(a)?),
        Command::Selftest(a) => selftest(a).map(|_| ()),
    }
}
