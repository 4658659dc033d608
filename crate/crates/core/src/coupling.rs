//! Pairs of solutions driven by one Brownian path, and the mean-square
//! divergence `D_t = E[(X_a - X_b)^2]` between them.
//!
//! Two runs that share scheme, grid, noise and initial state agree bit for
//! bit, so divergence is probed through controlled perturbations: a
//! resolution split (same noise refined to two grid levels), a jitter of
//! `X0`, or a scheme split. The shrinking of `D` under refinement or smaller
//! jitter is the numerical proxy for pathwise uniqueness.

use crate::ensemble::{try_map_paths, NoiseSource};
use crate::error::{domain, Error, Result};
use crate::integrator::{solve, Scheme, SolveConfig, Trajectory};
use crate::model::{ChainState, SystemParams};
use crate::noise::BrownianPath;
use crate::stopping::{Case, CaseLabel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    /// Run `a` on grid level `.0`, run `b` on level `.1`.
    ResolutionSplit(u32, u32),
    /// Run `b` starts from `X0 + delta`.
    InitJitter(f64),
    /// Run `a` uses the drift-exact scheme, run `b` plain Euler.
    SchemeSplit,
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Perturbation::ResolutionSplit(a, b) if a == b => {
                domain(format!("resolution split needs distinct levels, got {a} and {b}"))
            }
            Perturbation::InitJitter(d) if !(d >= 0.0 && d.is_finite()) => {
                domain(format!("jitter must be finite and non-negative, got {d}"))
            }
            _ => Ok(()),
        }
    }

    /// Expected `(X_a - X_b)^2` at `t = 0`.
    pub fn initial_divergence(&self) -> f64 {
        match *self {
            Perturbation::InitJitter(d) => d * d,
            _ => 0.0,
        }
    }
}

/// One point of a coupled run's divergence record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergencePoint {
    pub t: f64,
    /// `(X_a - X_b)^2`
    pub sq: f64,
    /// `(|X_a| - |X_b|)^2`
    pub sq_abs: f64,
    /// `sup_{s <= t} |X_a - X_b|`
    pub sup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub path_seed: u64,
    pub perturbation: Perturbation,
    pub traj_a: Trajectory,
    pub traj_b: Trajectory,
    pub divergence: Vec<DivergencePoint>,
}

/// Solves both members of the pair on the canonical path of `seed` (horizon
/// `cfg.max_time`).
pub fn coupled_solve(params: &SystemParams, seed: u64, pert: Perturbation, cfg: &SolveConfig) -> Result<CoupledRun> {
    let path = BrownianPath::canonical(seed, cfg.max_time, required_level(pert, cfg))?;
    coupled_solve_on(params, &path, pert, cfg)
}

/// As [`coupled_solve`], on an explicit path (for instance the null path).
pub fn coupled_solve_on(
    params: &SystemParams,
    path: &BrownianPath,
    pert: Perturbation,
    cfg: &SolveConfig,
) -> Result<CoupledRun> {
    pert.validate()?;
    let (traj_a, traj_b) = match pert {
        Perturbation::ResolutionSplit(la, lb) => {
            let fine = path.at_level(la.max(lb))?;
            let a = solve(params, &fine, &SolveConfig { level: la, ..*cfg })?;
            let b = solve(params, &fine, &SolveConfig { level: lb, ..*cfg })?;
            (a, b)
        }
        Perturbation::InitJitter(delta) => {
            let s = params.initial();
            let jittered = params.with_initial(ChainState::from_slice(0.0, &{
                let mut c = s.coords().to_vec();
                c[0] += delta;
                c
            })?)?;
            (solve(params, path, cfg)?, solve(&jittered, path, cfg)?)
        }
        Perturbation::SchemeSplit => (
            solve(params, path, &cfg.with_scheme(Scheme::DriftExactEM))?,
            solve(params, path, &cfg.with_scheme(Scheme::PlainEM))?,
        ),
    };
    let divergence = divergence_record(&traj_a, &traj_b)?;
    Ok(CoupledRun { path_seed: path.seed(), perturbation: pert, traj_a, traj_b, divergence })
}

/// Divergence of two trajectories on the coarser of their grids, up to the
/// earlier of their live ends (band stop or last sample).
///
/// When both runs carry the drift-exact deviation, `X_a - X_b` is formed as
/// the difference of the closed-form zero-noise parts plus the difference of
/// deviations, which avoids the rounding floor of subtracting two nearly
/// equal states.
pub fn divergence_record(a: &Trajectory, b: &Trajectory) -> Result<Vec<DivergencePoint>> {
    let (stride_a, stride_b) = grid_strides(a, b)?;
    let live_a = a.live_end() / stride_a;
    let live_b = b.live_end() / stride_b;
    let count = live_a.min(live_b) + 1;

    let (ia, ib) = (a.initial(), b.initial());
    let same_initial = ia.coords() == ib.coords();
    let devs = match (a.deviation_x(), b.deviation_x()) {
        (Some(da), Some(db)) => Some((da, db)),
        _ => None,
    };

    let mut sup = 0.0f64;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let sa = &a.states()[k * stride_a];
        let sb = &b.states()[k * stride_b];
        let t = sa.t;
        let diff = match devs {
            Some((da, db)) => {
                let base = if same_initial {
                    0.0
                } else {
                    let (dx, dy, dz) = (ia.x() - ib.x(), ia.y() - ib.y(), ia.z() - ib.z());
                    dx + t * (dy + 0.5 * dz * t)
                };
                base + (da[k * stride_a] - db[k * stride_b])
            }
            None => sa.x() - sb.x(),
        };
        let abs_diff = if (sa.x() >= 0.0) == (sb.x() >= 0.0) {
            diff.abs()
        } else {
            sa.x().abs() + sb.x().abs()
        };
        sup = sup.max(diff.abs());
        out.push(DivergencePoint { t, sq: diff * diff, sq_abs: abs_diff * abs_diff, sup });
    }
    Ok(out)
}

fn grid_strides(a: &Trajectory, b: &Trajectory) -> Result<(usize, usize)> {
    let (ha, hb) = (a.step(), b.step());
    if a.states().len() == 1 || b.states().len() == 1 || ha == hb {
        return Ok((1, 1));
    }
    let ratio = if ha > hb { ha / hb } else { hb / ha };
    let r = ratio.round();
    if (ratio - r).abs() > 1e-9 * r || r < 1.0 {
        return domain(format!("grids are not nested: steps {ha} and {hb}"));
    }
    let r = r as usize;
    Ok(if ha > hb { (1, r) } else { (r, 1) })
}

/// Finest level a perturbation needs from the driving path.
pub fn required_level(pert: Perturbation, cfg: &SolveConfig) -> u32 {
    match pert {
        Perturbation::ResolutionSplit(a, b) => a.max(b),
        _ => cfg.level,
    }
}

/// Runs `m` coupled pairs and keeps only their divergence records, in path
/// order.
pub fn coupled_divergence_ensemble(
    params: &SystemParams,
    noise: NoiseSource,
    pert: Perturbation,
    cfg: &SolveConfig,
    m: usize,
) -> Result<Vec<Vec<DivergencePoint>>> {
    try_map_paths(m, |i| {
        let path = noise.path(i, cfg.max_time, required_level(pert, cfg))?;
        coupled_solve_on(params, &path, pert, cfg).map(|run| run.divergence)
    })
}

/// Ensemble estimate of `D_t` with per-time counts and standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceTrace {
    pub times: Vec<f64>,
    /// Mean of `(X_a - X_b)^2`.
    pub d: Vec<f64>,
    /// Mean of `(|X_a| - |X_b|)^2`.
    pub d_abs: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Number of runs still live at each time.
    pub count: Vec<usize>,
    pub m: usize,
}

impl DivergenceTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the last time `<= t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        self.times.iter().rposition(|&s| s <= t)
    }

    pub fn terminal(&self) -> (f64, f64) {
        let k = self.len() - 1;
        (self.d[k], self.stderr[k])
    }
}

pub fn estimate_divergence(runs: &[CoupledRun]) -> Result<DivergenceTrace> {
    estimate_from_records(runs.iter().map(|r| r.divergence.as_slice()))
}

/// Pointwise ensemble mean over divergence records. Records that end early
/// contribute up to their last point only. Folding is in input order.
pub fn estimate_from_records<'a, I>(records: I) -> Result<DivergenceTrace>
where
    I: IntoIterator<Item = &'a [DivergencePoint]>,
{
    let records: Vec<&[DivergencePoint]> = records.into_iter().collect();
    if records.is_empty() {
        return domain("cannot estimate divergence from an empty ensemble");
    }
    let longest = records.iter().copied().max_by_key(|r| r.len()).unwrap_or(&[]);
    if longest.is_empty() {
        return domain("divergence records are empty");
    }
    let times: Vec<f64> = longest.iter().map(|p| p.t).collect();
    let n = times.len();
    let mut sum = vec![0.0; n];
    let mut sum_abs = vec![0.0; n];
    let mut count = vec![0usize; n];
    for rec in &records {
        for (k, p) in rec.iter().enumerate() {
            if p.t.to_bits() != times[k].to_bits() {
                return Err(Error::Domain(format!("records disagree on the time grid at index {k}")));
            }
            sum[k] += p.sq;
            sum_abs[k] += p.sq_abs;
            count[k] += 1;
        }
    }
    let d: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let d_abs = sum_abs.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    let mut ss = vec![0.0; n];
    for rec in &records {
        for (k, p) in rec.iter().enumerate() {
            let e = p.sq - d[k];
            ss[k] += e * e;
        }
    }
    let stderr = ss
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c > 1 { (s / (c - 1) as f64 / c as f64).sqrt() } else { 0.0 })
        .collect();
    Ok(DivergenceTrace { times, d, d_abs, stderr, count, m: records.len() })
}

/// Exponent of the kernel `r^kappa` bounding `D_t`: `2 alpha - 2` for Cases
/// I/II and `4 alpha - 4` for Cases III/IV.
pub fn kernel_exponent(alpha: f64, case: CaseLabel) -> f64 {
    match case.case {
        Case::I | Case::II => 2.0 * alpha - 2.0,
        Case::III | Case::IV => 4.0 * alpha - 4.0,
    }
}

/// Outcome of fitting `D_t <= C * int_0^t r^kappa D_r dr` on a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub kappa: f64,
    /// `kappa > -1`; otherwise the kernel is not integrable at the origin.
    pub integrable: bool,
    /// Smallest `C` with `D_t <= C K_t` on the window, when integrable.
    pub c_hat: Option<f64>,
    /// `K_t` on the trace grid up to the window.
    pub kernel_integral: Vec<f64>,
    pub window: f64,
}

/// `int_a^b r^kappa (D_a + (D_b - D_a)(r - a)/(b - a)) dr` as weights on
/// `(D_a, D_b)`. Exact for `D` linear on the cell; handles the singular
/// endpoint `a = 0` for `kappa > -1`.
fn cell_weights(a: f64, b: f64, kappa: f64) -> (f64, f64) {
    let p1 = kappa + 1.0;
    let p2 = kappa + 2.0;
    let m0 = (b.powf(p1) - a.powf(p1)) / p1;
    let m1 = (b.powf(p2) - a.powf(p2)) / p2;
    let wb = (m1 - a * m0) / (b - a);
    (m0 - wb, wb)
}

/// Product-trapezoid evaluation of `K_t = int_0^t r^kappa D_r dr` on the
/// trace grid.
pub fn kernel_integral(times: &[f64], d: &[f64], kappa: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    // D is taken constant on [0, t_0] when the grid does not start at 0
    let mut acc = match (times.first(), d.first()) {
        (Some(&t0), Some(&d0)) if t0 > 0.0 => d0 * t0.powf(kappa + 1.0) / (kappa + 1.0),
        _ => 0.0,
    };
    out.push(acc);
    for k in 1..times.len() {
        let (wa, wb) = cell_weights(times[k - 1], times[k], kappa);
        acc += wa * d[k - 1] + wb * d[k];
        out.push(acc);
    }
    out
}

pub fn gronwall_kernel_check(
    alpha: f64,
    case: CaseLabel,
    trace: &DivergenceTrace,
    window: f64,
) -> Result<KernelReport> {
    if trace.is_empty() {
        return domain("empty divergence trace");
    }
    let last = *trace.times.last().unwrap_or(&0.0);
    if !(window >= 0.0) || window > last * (1.0 + 1e-12) {
        return domain(format!("window {window} exceeds the trace support [0, {last}]"));
    }
    let kappa = kernel_exponent(alpha, case);
    let integrable = kappa > -1.0;
    if !integrable {
        return Ok(KernelReport { kappa, integrable, c_hat: None, kernel_integral: Vec::new(), window });
    }
    let end = trace.index_at(window * (1.0 + 1e-12)).unwrap_or(0);
    let times = &trace.times[..=end];
    let d = &trace.d[..=end];
    let k = kernel_integral(times, d, kappa);
    let mut c_hat = 0.0f64;
    for i in 0..times.len() {
        if times[i] > 0.0 && d[i] > 0.0 {
            c_hat = c_hat.max(d[i] / k[i]);
        }
    }
    Ok(KernelReport { kappa, integrable, c_hat: Some(c_hat), kernel_integral: k, window })
}
