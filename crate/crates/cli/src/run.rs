//! Experiment execution and output writing.
//!
//! Paths are simulated in parallel; results come back in path order and are
//! written by one sequential sink, so output bytes do not depend on the
//! worker count.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chainsde::analysis::{bounds_ensemble, convergence_order, excursion_ensemble, quantile, InvariantReport};
use chainsde::coupling::{coupled_divergence_ensemble, estimate_from_records, gronwall_kernel_check, required_level, Perturbation};
use chainsde::ensemble::{try_map_paths, NoiseSource};
use chainsde::stopping::classify;
use chainsde::{solve, StopReason};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::config::{Command, ConfigError, ExperimentConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] chainsde::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("cannot serialise summary: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

/// Where outputs go and how many workers compute them. Neither affects the
/// output bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub out: PathBuf,
    /// `None` uses every available core.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub checks: Vec<Check>,
    pub summary: PathBuf,
    pub trace: PathBuf,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

pub fn exit_code(result: &Result<RunOutcome, CliError>) -> i32 {
    match result {
        Ok(o) if o.passed() => EXIT_OK,
        Ok(_) => EXIT_CHECK_FAILED,
        Err(_) => EXIT_ERROR,
    }
}

/// Validates `cfg` and runs it on a pool of `opts.workers` threads.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    if opts.workers == Some(0) {
        return Err(ConfigError::new("workers", "must be positive").into());
    }
    #[cfg(feature = "parallel")]
    {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = opts.workers {
            builder = builder.num_threads(w);
        }
        let pool = builder.build().map_err(|e| CliError::Pool(e.to_string()))?;
        pool.install(|| execute(cfg, &opts.out))
    }
    #[cfg(not(feature = "parallel"))]
    {
        execute(cfg, &opts.out)
    }
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map_or(String::new(), num)
}

fn json_num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn json_opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, json_num)
}

struct Table {
    w: BufWriter<File>,
}

impl Table {
    fn create(path: &Path, header: &[&str]) -> io::Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", header.join(","))?;
        Ok(Self { w })
    }

    fn row(&mut self, cells: &[String]) -> io::Result<()> {
        writeln!(self.w, "{}", cells.join(","))
    }

    fn finish(mut self) -> io::Result<()> {
        self.w.flush()
    }
}

fn noise_source(cfg: &ExperimentConfig) -> NoiseSource {
    if cfg.zero_noise {
        NoiseSource::Zero
    } else {
        NoiseSource::Brownian { master: cfg.seed }
    }
}

fn execute(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome, CliError> {
    fs::create_dir_all(out)?;
    let trace = out.join("trace.csv");
    let summary = out.join("summary.json");
    let (checks, results, dump_level) = match cfg.command {
        Command::Simulate => simulate(cfg, &trace)?,
        Command::Couple => couple(cfg, &trace)?,
        Command::Bounds => bounds(cfg, &trace)?,
        Command::Excursions => excursions(cfg, &trace)?,
        Command::Converge => converge(cfg, &trace)?,
    };
    if cfg.dump_paths {
        let dir = out.join("paths");
        fs::create_dir_all(&dir)?;
        let noise = noise_source(cfg);
        for i in 0..cfg.m {
            noise.path(i, cfg.horizon_time(), dump_level)?.save(dir.join(format!("path_{i:06}.bpath")))?;
        }
    }

    let config: Map<String, Value> = cfg.echo().into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect();
    let check_values: Vec<Value> =
        checks.iter().map(|c| json!({"name": c.name, "passed": c.passed, "detail": c.detail})).collect();
    let doc = json!({
        "command": cfg.command.name(),
        "config": config,
        "passed": checks.iter().all(|c| c.passed),
        "checks": check_values,
        "results": results,
    });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(&summary, text)?;
    Ok(RunOutcome { checks, summary, trace })
}

type Outcome = (Vec<Check>, Value, u32);

fn simulate(cfg: &ExperimentConfig, trace: &Path) -> Result<Outcome, CliError> {
    let params = cfg.params()?;
    let scfg = cfg.solve_config();
    let noise = noise_source(cfg);
    let stride = cfg.trace_stride;
    let runs = try_map_paths(cfg.m, |i| -> chainsde::Result<_> {
        let traj = solve(&params, &noise.path(i, scfg.max_time, scfg.level)?, &scfg)?;
        let last = traj.states().len() - 1;
        let kept: Vec<_> = traj
            .states()
            .iter()
            .enumerate()
            .filter(|(k, _)| k % stride == 0 || *k == last)
            .map(|(_, s)| *s)
            .collect();
        Ok((traj.stop(), traj.stop_time(), traj.band_stop_time(), kept))
    })?;

    let three = cfg.chain_order.dim() == 3;
    let header: &[&str] = if three { &["path", "seed", "t", "x", "y", "z"] } else { &["path", "seed", "t", "x", "y"] };
    let mut table = Table::create(trace, header)?;
    for (i, (_, _, _, states)) in runs.iter().enumerate() {
        let seed = noise.seed(i).to_string();
        for s in states {
            let mut cells = vec![i.to_string(), seed.clone(), num(s.t)];
            cells.extend(s.coords().iter().map(|&c| num(c)));
            table.row(&cells)?;
        }
    }
    table.finish()?;

    let reasons = [
        StopReason::InnerBand,
        StopReason::OuterBand,
        StopReason::OriginHit,
        StopReason::Blowup,
        StopReason::HorizonReached,
    ];
    let counts: Map<String, Value> = reasons
        .iter()
        .map(|r| (r.name().to_string(), json!(runs.iter().filter(|x| x.0 == *r).count())))
        .collect();
    let band_times: Vec<f64> = runs.iter().filter_map(|x| x.2).collect();
    let mean_band = (!band_times.is_empty()).then(|| band_times.iter().sum::<f64>() / band_times.len() as f64);
    let results = json!({
        "paths": cfg.m,
        "stop_counts": counts,
        "band_stopped": band_times.len(),
        "mean_band_stop_time": json_opt(mean_band),
    });
    let finite = runs.iter().all(|x| x.3.iter().all(|s| s.is_finite()) || x.0 == StopReason::Blowup);
    let checks = vec![Check::new("states_finite_before_stop", finite, "")];
    Ok((checks, results, scfg.level))
}

fn couple(cfg: &ExperimentConfig, trace: &Path) -> Result<Outcome, CliError> {
    let params = cfg.params()?;
    let scfg = cfg.solve_config();
    let noise = noise_source(cfg);
    let pert = cfg.perturbation;
    let records = coupled_divergence_ensemble(&params, noise, pert, &scfg, cfg.m)?;
    let tr = estimate_from_records(records.iter().map(|r| r.as_slice()))?;

    let mut table = Table::create(trace, &["t", "d", "d_abs", "stderr", "count"])?;
    for k in 0..tr.len() {
        table.row(&[num(tr.times[k]), num(tr.d[k]), num(tr.d_abs[k]), num(tr.stderr[k]), tr.count[k].to_string()])?;
    }
    table.finish()?;

    let expected = pert.initial_divergence();
    let d0 = tr.d[0];
    let init_ok = if expected == 0.0 { d0 == 0.0 } else { (d0 - expected).abs() <= 1e-9 * expected };
    let mut checks = vec![
        Check::new("initial_divergence", init_ok, format!("D0 = {}, expected {}", num(d0), num(expected))),
        Check::new("divergence_nonnegative", tr.d.iter().all(|&d| d >= 0.0 && d.is_finite()), ""),
    ];
    if pert == Perturbation::InitJitter(0.0) {
        checks.push(Check::new("null_coupling", tr.d.iter().all(|&d| d == 0.0), "identical pairs must not diverge"));
    }

    let kernel = match classify(&params.initial(), cfg.n) {
        Ok(label) => {
            let window = *tr.times.last().unwrap_or(&0.0);
            let rep = gronwall_kernel_check(cfg.alpha, label, &tr, window)?;
            json!({
                "case": label.name(),
                "kappa": json_num(rep.kappa),
                "integrable": rep.integrable,
                "c_hat": json_opt(rep.c_hat),
                "window": json_num(rep.window),
            })
        }
        Err(_) => Value::Null,
    };
    let (d_end, se_end) = tr.terminal();
    let results = json!({
        "paths": cfg.m,
        "grid_points": tr.len(),
        "d0": json_num(d0),
        "terminal_time": json_num(*tr.times.last().unwrap_or(&0.0)),
        "terminal_d": json_num(d_end),
        "terminal_stderr": json_num(se_end),
        "terminal_count": tr.count.last().copied().unwrap_or(0),
        "kernel": kernel,
    });
    Ok((checks, results, required_level(pert, &scfg)))
}

fn bounds(cfg: &ExperimentConfig, trace: &Path) -> Result<Outcome, CliError> {
    let params = cfg.params()?;
    let scfg = cfg.solve_config();
    let noise = noise_source(cfg);
    let runs = bounds_ensemble(&params, noise, &scfg, cfg.m)?;
    let label = runs.first().map(|r| r.label.name()).unwrap_or("");

    let mut table =
        Table::create(trace, &["path", "seed", "case", "inequality", "window", "points", "worst_margin", "tol", "pass"])?;
    for (i, run) in runs.iter().enumerate() {
        for r in &run.records {
            table.row(&[
                i.to_string(),
                run.path_seed.to_string(),
                run.label.name().to_string(),
                r.inequality.name().to_string(),
                num(r.window),
                r.points.to_string(),
                num(r.worst_margin),
                num(r.tol),
                r.pass.to_string(),
            ])?;
        }
    }
    table.finish()?;

    let tn_found = runs.iter().filter(|r| r.tn.is_some()).count();
    let report = InvariantReport::from_records(runs.into_iter().flat_map(|r| r.records).collect());
    let mut checks = Vec::new();
    let mut per = Map::new();
    for s in &report.summary {
        checks.push(Check::new(
            s.inequality.name(),
            s.passed == s.total,
            format!("{}/{} paths, worst margin {}", s.passed, s.total, num(s.worst_margin)),
        ));
        per.insert(
            s.inequality.name().to_string(),
            json!({"passed": s.passed, "total": s.total, "pass_rate": json_num(s.pass_rate()), "worst_margin": json_num(s.worst_margin)}),
        );
    }
    let results = json!({"paths": cfg.m, "case": label, "tn_detected": tn_found, "inequalities": per});
    Ok((checks, results, scfg.level))
}

fn excursions(cfg: &ExperimentConfig, trace: &Path) -> Result<Outcome, CliError> {
    let params = cfg.params()?;
    let scfg = cfg.solve_config();
    let noise = noise_source(cfg);
    let ex = excursion_ensemble(&params, noise, &scfg, cfg.m)?;

    let mut table = Table::create(trace, &["path", "seed", "hits", "first_hit", "min_gap", "scanned_until"])?;
    for (i, e) in ex.iter().enumerate() {
        table.row(&[
            i.to_string(),
            e.path_seed.to_string(),
            e.stats.count().to_string(),
            opt_num(e.stats.hits.first().copied()),
            opt_num(e.stats.min_gap),
            num(e.stats.scanned_until),
        ])?;
    }
    table.finish()?;

    let gaps: Vec<f64> = ex.iter().filter_map(|e| e.stats.min_gap).collect();
    let increasing = ex.iter().all(|e| e.stats.hits.windows(2).all(|w| w[1] > w[0]));
    let positive = gaps.iter().all(|&g| g > 0.0);
    let mean_hits = ex.iter().map(|e| e.stats.count()).sum::<usize>() as f64 / cfg.m as f64;
    let checks = vec![
        Check::new("hits_strictly_increasing", increasing, ""),
        Check::new("min_gap_positive", positive, format!("{} paths with at least two hits", gaps.len())),
    ];
    let results = json!({
        "paths": cfg.m,
        "mean_hits": json_num(mean_hits),
        "paths_with_gap": gaps.len(),
        "min_gap": json_opt(gaps.iter().copied().reduce(f64::min)),
        "min_gap_q05": json_opt(quantile(&gaps, 0.05)),
        "min_gap_median": json_opt(quantile(&gaps, 0.5)),
    });
    Ok((checks, results, scfg.level))
}

fn converge(cfg: &ExperimentConfig, trace: &Path) -> Result<Outcome, CliError> {
    let params = cfg.params()?;
    let scfg = cfg.solve_config();
    let noise = noise_source(cfg);
    let r = convergence_order(&params, &cfg.levels, cfg.l_ref, cfg.m, noise, &scfg)?;

    let mut table = Table::create(trace, &["level", "step", "error", "stderr"])?;
    for k in 0..r.levels.len() {
        table.row(&[r.levels[k].to_string(), num(r.steps[k]), num(r.errors[k]), num(r.stderr[k])])?;
    }
    table.finish()?;

    let checks = vec![Check::new("errors_finite", r.errors.iter().all(|e| e.is_finite()), "")];
    let results = json!({
        "paths": cfg.m,
        "l_ref": r.l_ref,
        "levels": r.levels,
        "errors": r.errors.iter().map(|&e| json_num(e)).collect::<Vec<_>>(),
        "stderr": r.stderr.iter().map(|&e| json_num(e)).collect::<Vec<_>>(),
        "order": json_opt(r.order),
        "exact": r.exact,
    });
    Ok((checks, results, cfg.l_ref))
}
