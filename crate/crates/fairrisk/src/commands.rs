//! The subcommands. Each one resolves its inputs from a [`RunConfig`],
//! writes its files into `cfg.out` and returns their paths.

use std::path::{Path, PathBuf};

use fairrisk_core::distortion::WeightFunction;
use fairrisk_core::fairness::Variant;
use fairrisk_core::oracle::fd_sensitivity;
use fairrisk_core::pipeline::{
    audit, generate_portfolio, simulate_point, AuditReport, PolicyRecord, SimulationPoint, SimulationSeries, Summary,
};
use fairrisk_core::sensitivity::{sensitivity, Attribute, Convention, Scenario};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::io;

fn output(cfg: &RunConfig, stem: &str, ext: &str) -> PathBuf {
    cfg.out.join(format!("{stem}-{}.{ext}", cfg.hash()))
}

fn prepare(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    io::ensure_dir(&cfg.out)?;
    let path = output(cfg, "config", "json");
    io::write_json(&path, cfg)?;
    Ok(vec![path])
}

/// Four CSV series over the grid, analytic and Monte Carlo columns side by side.
pub fn run_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut files = prepare(cfg)?;
    let sim = cfg.simulate_config();
    let points = sim
        .grid
        .points()?
        .into_par_iter()
        .map(|x| simulate_point(&sim, x))
        .collect::<fairrisk_core::Result<Vec<SimulationPoint>>>()?;
    let series = SimulationSeries::from_points(&points);
    let mut put = |stem: &str, write: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = output(cfg, stem, "csv");
        write(&path)?;
        files.push(path);
        Ok(())
    };
    put("strategies", &|p| io::write_csv(p, &series.strategies))?;
    put("adjustment", &|p| io::write_csv(p, &series.adjustments))?;
    put("fair_rules", &|p| io::write_csv(p, &series.fair_rules))?;
    put("sensitivity", &|p| io::write_csv(p, &series.sensitivities))?;
    Ok(files)
}

/// Generator coefficients stored next to a synthetic portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub seed: u64,
    pub n: usize,
    pub intercept: f64,
    pub coefficients: Vec<(String, f64)>,
    pub truth: fairrisk_core::pipeline::GeneratorTruth,
}

pub fn run_generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut files = prepare(cfg)?;
    let truth = &cfg.generate.truth;
    let records = generate_portfolio(truth, cfg.generate.n, cfg.seed)?;
    let path = output(cfg, "portfolio", "csv");
    io::write_policies(&path, &records)?;
    files.push(path);
    let layout = truth.encoder().layout();
    let (intercept, beta) = truth.coefficients(&layout)?;
    let file = TruthFile {
        seed: cfg.seed,
        n: cfg.generate.n,
        intercept,
        coefficients: layout.names.iter().cloned().zip(beta).collect(),
        truth: truth.clone(),
    };
    let path = output(cfg, "truth", "json");
    io::write_json(&path, &file)?;
    files.push(path);
    Ok(files)
}

/// One decision row in CSV form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub id: usize,
    pub row: usize,
    pub gender: String,
    pub age: f64,
    pub p_u: f64,
    pub p_df: f64,
    pub p_mf_ev: f64,
    pub p_mf_es: f64,
    pub adjustment: f64,
    pub sensitivity_ev: f64,
    pub sensitivity_es: f64,
    pub flags: String,
}

pub fn load_portfolio(cfg: &RunConfig) -> Result<Vec<PolicyRecord>> {
    match &cfg.audit.input {
        Some(path) => io::read_policies(path),
        None => Ok(generate_portfolio(&cfg.generate.truth, cfg.generate.n, cfg.seed)?),
    }
}

pub fn run_audit(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut files = prepare(cfg)?;
    let records = load_portfolio(cfg)?;
    let out = audit(&records, &cfg.audit_config())?;
    let rows: Vec<DecisionRow> = out
        .decisions
        .rows
        .iter()
        .zip(&out.test_rows)
        .zip(&out.sensitivities)
        .map(|((d, &i), s)| DecisionRow {
            id: d.id,
            row: i,
            gender: records[i].gender.clone(),
            age: records[i].age,
            p_u: d.unaware,
            p_df: d.discrimination_free,
            p_mf_ev: d.fair_ev,
            p_mf_es: d.fair_es,
            adjustment: d.adjustment,
            sensitivity_ev: s.0,
            sensitivity_es: s.1,
            flags: d.flags.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"),
        })
        .collect();
    let path = output(cfg, "decisions", "csv");
    io::write_csv(&path, &rows)?;
    files.push(path);
    files.push(io::save_model(&cfg.out, &format!("model-{}.json", cfg.hash()), &out.model)?);
    let path = output(cfg, "audit", "json");
    io::write_json(&path, &out.report)?;
    files.push(path);
    files.extend(write_report_tables(&out.report, &cfg.out, &cfg.hash())?);
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AgeRow {
    group: String,
    measure: &'static str,
    count: usize,
    min: f64,
    q25: f64,
    median: f64,
    q75: f64,
    max: f64,
    mean: f64,
}

impl AgeRow {
    fn new(group: &str, measure: &'static str, s: &Summary) -> Self {
        Self {
            group: group.to_string(),
            measure,
            count: s.count,
            min: s.min,
            q25: s.q25,
            median: s.median,
            q75: s.q75,
            max: s.max,
            mean: s.mean,
        }
    }
}

/// Writes the tables of an audit report as CSV files tagged with `tag`.
pub fn write_report_tables(report: &AuditReport, dir: &Path, tag: &str) -> Result<Vec<PathBuf>> {
    io::ensure_dir(dir)?;
    let name = |stem: &str| dir.join(format!("{stem}-{tag}.csv"));
    let mut files = Vec::new();
    let path = name("decision_summary");
    io::write_csv(&path, &report.decision_summary)?;
    files.push(path);
    let path = name("adjustment_summary");
    io::write_csv(&path, &report.adjustment_summary)?;
    files.push(path);
    let age: Vec<AgeRow> = report
        .sensitivity_by_age
        .iter()
        .flat_map(|g| [AgeRow::new(&g.group, "ev", &g.ev), AgeRow::new(&g.group, "es", &g.es)])
        .collect();
    let path = name("sensitivity_by_age");
    io::write_csv(&path, &age)?;
    files.push(path);
    let path = name("gini");
    io::write_csv(&path, &report.gini)?;
    files.push(path);
    let path = name("quantile_bins");
    io::write_csv(&path, &report.quantile_bins)?;
    files.push(path);
    Ok(files)
}

/// Rebuilds the CSV tables from a saved `audit-*.json` report.
pub fn run_report(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let report: AuditReport = io::read_json(input)?;
    let tag = input
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("audit-"))
        .unwrap_or("report")
        .to_string();
    write_report_tables(&report, out, &tag)
}

/// Sensitivity of the gaussian-linear model at one point from one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub x: f64,
    pub rho: String,
    pub variant: Variant,
    /// `analytic`, `plug_in` or `oracle`.
    pub source: String,
    pub value: f64,
    pub se: f64,
}

pub fn run_sensitivity(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut files = prepare(cfg)?;
    let s = &cfg.sensitivity;
    let gl = &s.model;
    let model = gl.model()?;
    let spec = gl.cascade_spec()?;
    let cascade = match s.variant {
        Variant::Marginal => None,
        Variant::Cascade => Some(&spec),
    };
    let mc = cfg.sensitivity_mc();
    let jobs: Vec<(f64, &String)> = s.x.iter().flat_map(|&x| s.rho.iter().map(move |r| (x, r))).collect();
    let rows = jobs
        .into_par_iter()
        .map(|(x, r)| -> Result<Vec<SensitivityPoint>> {
            let rho = WeightFunction::parse(r)?;
            let scn = Scenario { model: &model, law: &gl.params, noise: gl.noise() };
            let attr = Attribute::continuous(0);
            let analytic = match s.variant {
                Variant::Marginal => gl.sensitivity(&rho, x),
                Variant::Cascade => gl.cascade_sensitivity(&rho, x),
            };
            let plug = sensitivity(&scn, &rho, &attr, &[x], cascade, Convention::Exact, &mc)?;
            let fd = fd_sensitivity(&scn, &rho, &attr, &[x], cascade, s.delta, &mc)?;
            let point = |source: &str, value: f64, se: f64| SensitivityPoint {
                x,
                rho: r.clone(),
                variant: s.variant,
                source: source.to_string(),
                value,
                se,
            };
            Ok(vec![
                point("analytic", analytic, 0.0),
                point("plug_in", plug.value, plug.se),
                point("oracle", fd.value, fd.se),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<SensitivityPoint> = rows.into_iter().flatten().collect();
    let path = output(cfg, "sensitivity_points", "csv");
    io::write_csv(&path, &rows)?;
    files.push(path);
    Ok(files)
}

