use std::collections::BTreeMap;

use cluster_expansion::config::RunConfig;
use cluster_expansion::correlation::CorrelationResult;
use cluster_expansion::engine::{Engine, ExpansionResult, Model};
use cluster_expansion::norms::check_hypotheses;
use cluster_expansion::oracle::{brute_force_log_z, decay_fit, oracle_correlations, DecayFit, OracleResult};
use cluster_expansion::{Error, Result};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{points_label, support_label, write_csv, Sink};
use crate::selftest;
use crate::{Command, Common};

pub fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Expand(c) => with_config(&c, |cfg, sink| expand(cfg, sink)),
        Command::Oracle(c) => with_config(&c, |cfg, sink| oracle(cfg, sink)),
        Command::Compare { common, tolerance } => with_config(&common, |cfg, sink| compare(cfg, sink, tolerance)),
        Command::CheckHypotheses(c) => with_config(&c, |cfg, sink| hypotheses(cfg, sink)),
        Command::Selftest(c) => with_config(&c, |cfg, sink| run_selftest(cfg, sink)),
        Command::Decay(c) => with_config(&c, |cfg, sink| decay(cfg, sink)),
    }
}

fn with_config(common: &Common, body: impl FnOnce(&RunConfig, &Sink) -> Result<u8>) -> Result<u8> {
    let cfg = common.load()?;
    if let Some(w) = cfg.workers {
        // a second call in the same process would fail; the pool is process-wide
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let sink = Sink::new(&cfg.output, common.output_dir.as_deref())?;
    sink.json("config", &cfg)?;
    body(&cfg, &sink)
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

#[derive(Serialize)]
struct PartialSumRow {
    order: usize,
    re: f64,
    im: f64,
    term_abs: f64,
}

#[derive(Serialize)]
struct ClusterRow {
    support: String,
    re: f64,
    im: f64,
}

#[derive(Serialize)]
struct CorrelationRow {
    points: String,
    re: f64,
    im: f64,
    error_estimate: f64,
    noise_dominated: bool,
}

fn correlation_rows(cs: &[CorrelationResult]) -> Vec<CorrelationRow> {
    cs.iter()
        .map(|c| CorrelationRow {
            points: points_label(&c.points),
            re: c.value.re,
            im: c.value.im,
            error_estimate: c.error_estimate,
            noise_dominated: c.noise_dominated,
        })
        .collect()
}

struct EngineRun {
    result: ExpansionResult,
    correlations: Vec<CorrelationResult>,
}

fn run_engine(cfg: &RunConfig, model: &Model) -> Result<EngineRun> {
    let engine = Engine::new(model, cfg.expansion.engine())?;
    let result = engine.log_z(&cfg.source_for(model)?)?;
    let correlations = if cfg.correlations.points.is_empty() {
        Vec::new()
    } else {
        engine.truncated_correlations(&cfg.correlations.points, &cfg.correlations.fd)?
    };
    Ok(EngineRun { result, correlations })
}

struct OracleRun {
    result: OracleResult,
    correlations: Vec<CorrelationResult>,
}

fn run_oracle(cfg: &RunConfig, model: &Model) -> Result<OracleRun> {
    let result = brute_force_log_z(model, &cfg.source_for(model)?, &cfg.oracle)?;
    let correlations = if cfg.correlations.points.is_empty() {
        Vec::new()
    } else {
        oracle_correlations(model, &cfg.correlations.points, &cfg.correlations.fd, &cfg.oracle)?
    };
    Ok(OracleRun { result, correlations })
}

fn expand(cfg: &RunConfig, sink: &Sink) -> Result<u8> {
    let model = cfg.model()?;
    let run = run_engine(cfg, &model)?;
    let r = &run.result;
    let mut doc = serde_json::to_value(r)?;
    doc["correlations"] = serde_json::to_value(&run.correlations)?;
    sink.json("expand", &doc)?;

    let sums: Vec<PartialSumRow> = r
        .partial_sums
        .iter()
        .zip(&r.diagnostics.order_magnitudes)
        .enumerate()
        .map(|(k, (s, t))| PartialSumRow {
            order: k + 1,
            re: s.re,
            im: s.im,
            term_abs: *t,
        })
        .collect();
    sink.csv("partial_sums", &sums)?;
    let clusters: Vec<ClusterRow> = r
        .clusters
        .iter()
        .map(|(x, v)| ClusterRow {
            support: support_label(&x.to_vec()),
            re: v.re,
            im: v.im,
        })
        .collect();
    sink.csv("clusters", &clusters)?;
    sink.csv("correlations", &correlation_rows(&run.correlations))?;
    print_json(&doc);
    Ok(0)
}

fn oracle(cfg: &RunConfig, sink: &Sink) -> Result<u8> {
    let model = cfg.model()?;
    let run = run_oracle(cfg, &model)?;
    let mut doc = serde_json::to_value(&run.result)?;
    doc["correlations"] = serde_json::to_value(&run.correlations)?;
    sink.json("oracle", &doc)?;
    sink.csv("oracle_correlations", &correlation_rows(&run.correlations))?;
    print_json(&doc);
    Ok(0)
}

#[derive(Serialize)]
struct CompareRow {
    quantity: String,
    engine_re: f64,
    engine_im: f64,
    oracle_re: f64,
    oracle_im: f64,
    diff: f64,
    tolerance: f64,
    pass: bool,
}

fn compare_row(quantity: String, engine: Complex64, oracle: Complex64, tolerance: f64) -> CompareRow {
    let diff = (engine - oracle).norm();
    CompareRow {
        quantity,
        engine_re: engine.re,
        engine_im: engine.im,
        oracle_re: oracle.re,
        oracle_im: oracle.im,
        diff,
        tolerance,
        pass: diff <= tolerance,
    }
}

fn compare(cfg: &RunConfig, sink: &Sink, tolerance: f64) -> Result<u8> {
    if !(tolerance >= 0.0) {
        return Err(Error::Config {
            path: "--tolerance".into(),
            message: "must be non-negative".into(),
        });
    }
    let model = cfg.model()?;
    let eng = run_engine(cfg, &model)?;
    let orc = run_oracle(cfg, &model)?;
    let mut rows = vec![compare_row("logZ".into(), eng.result.log_z, orc.result.log_z, tolerance)];
    for (e, o) in eng.correlations.iter().zip(&orc.correlations) {
        rows.push(compare_row(
            format!("corr[{}]", points_label(&e.points)),
            e.value,
            o.value,
            tolerance,
        ));
    }
    let pass = rows.iter().all(|r| r.pass);
    let doc = json!({
        "pass": pass,
        "tolerance": tolerance,
        "rows": rows,
        "engine": { "logZ": eng.result.log_z, "diagnostics": eng.result.diagnostics },
        "oracle": orc.result,
    });
    sink.json("compare", &doc)?;
    sink.csv("compare", &rows)?;
    print_json(&doc);
    Ok(if pass { 0 } else { 3 })
}

fn hypotheses(cfg: &RunConfig, sink: &Sink) -> Result<u8> {
    let model = cfg.model()?;
    let report = check_hypotheses(&model, &cfg.hypotheses)?;
    sink.json("hypotheses", &report)?;
    sink.csv("hypotheses", &report.conditions)?;
    print!("{}", report.to_text());
    Ok(0)
}

fn run_selftest(cfg: &RunConfig, sink: &Sink) -> Result<u8> {
    let counts = selftest::counting_table()?;
    let checks = selftest::covariance_checks(cfg.seed);
    write_csv(std::io::stdout().lock(), &counts)?;
    for c in &checks {
        eprintln!("{:<34} {:<4} {}", c.name, if c.pass { "ok" } else { "FAIL" }, c.detail);
    }
    let pass = counts.iter().all(|r| r.pass) && checks.iter().all(|c| c.pass);
    sink.csv("selftest_counts", &counts)?;
    sink.csv("selftest_covariance", &checks)?;
    sink.json("selftest", &json!({ "pass": pass, "counts": counts, "covariance": checks }))?;
    Ok(if pass { 0 } else { 3 })
}

#[derive(Serialize)]
struct DecayRow {
    distance: f64,
    site: usize,
    engine_re: f64,
    engine_im: f64,
    engine_abs: f64,
    covariance_abs: f64,
    error_estimate: f64,
}

fn decay(cfg: &RunConfig, sink: &Sink) -> Result<u8> {
    let model = cfg.model()?;
    let spec = &cfg.decay;
    let n = model.n_sites();
    if spec.origin >= n || spec.component >= model.components() {
        return Err(Error::Config {
            path: "decay".into(),
            message: "origin or component outside the lattice".into(),
        });
    }
    // one representative site per distance, the lowest index
    let mut by_distance: BTreeMap<u64, usize> = BTreeMap::new();
    for y in 0..n {
        let d = model.lattice.distance(spec.origin, y);
        if spec.max_distance.is_none_or(|m| d <= m + 1e-12) {
            by_distance.entry(d.to_bits()).or_insert(y);
        }
    }
    let mut sites: Vec<(f64, usize)> = by_distance.into_iter().map(|(d, y)| (f64::from_bits(d), y)).collect();
    sites.sort_by(|a, b| a.0.total_cmp(&b.0));
    let c = spec.component;
    let sets: Vec<Vec<(usize, usize)>> = sites.iter().map(|&(_, y)| vec![(spec.origin, c), (y, c)]).collect();

    let engine = Engine::new(&model, cfg.expansion.engine())?;
    let corr = engine.truncated_correlations(&sets, &cfg.correlations.fd)?;
    let rows: Vec<DecayRow> = sites
        .iter()
        .zip(&corr)
        .map(|(&(d, y), r)| DecayRow {
            distance: d,
            site: y,
            engine_re: r.value.re,
            engine_im: r.value.im,
            engine_abs: r.value.norm(),
            covariance_abs: model.covariance.entry(spec.origin, c, y, c).norm(),
            error_estimate: r.error_estimate,
        })
        .collect();
    let fit = |pick: fn(&DecayRow) -> f64| -> Result<DecayFit> {
        decay_fit(&rows.iter().map(|r| (r.distance, pick(r))).collect::<Vec<_>>(), spec.noise_floor)
    };
    let engine_fit = fit(|r| r.engine_abs)?;
    let covariance_fit = fit(|r| r.covariance_abs)?;
    let doc = json!({
        "origin": spec.origin,
        "component": c,
        "rows": rows,
        "engine_fit": engine_fit,
        "covariance_fit": covariance_fit,
        "mass_ratio": engine_fit.mass / covariance_fit.mass,
        "covariance_decay_mass": model.covariance.decay_mass(),
    });
    sink.json("decay", &doc)?;
    sink.csv("decay", &rows)?;
    print_json(&doc);
    Ok(0)
}
