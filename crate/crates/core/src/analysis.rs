//! Pathwise checks on simulated trajectories.
//!
//! Every inequality checked here follows from the band constraint
//! `|Z| <= 2^n` before the band stop and from sign conditions on the start,
//! not from expectations, so each path is checked on its own. The drift-exact
//! scheme satisfies the discrete analogues exactly; the tolerance only covers
//! rounding and the one-cell lag of grid-time detection.

use std::fmt;

use crate::coupling::divergence_record;
use crate::ensemble::{try_map_paths, NoiseSource};
use crate::error::{domain, Error, Result};
use crate::integrator::{band_inner, solve, SolveConfig, Trajectory};
use crate::model::{ChainOrder, SystemParams};
use crate::stopping::{classify, detect_tn, guaranteed_window, t0n, Case, CaseLabel, StoppingBand};

/// Absolute part of every bound tolerance.
pub const ABS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Inequality {
    /// `|Y_t| <= 2^n (1 + t)` up to the band stop.
    AprioriY,
    /// `|X_t| <= 2^n (t + t^2/2)` up to the band stop.
    AprioriX,
    /// `|X_t| <= 2^-n` on `[0, t0n]`.
    SmallX,
    /// Case lower bound on `Y`.
    CaseY,
    /// Case lower bound on `X`.
    CaseX,
}

impl Inequality {
    pub const ALL: [Inequality; 5] =
        [Inequality::AprioriY, Inequality::AprioriX, Inequality::SmallX, Inequality::CaseY, Inequality::CaseX];

    pub fn name(self) -> &'static str {
        match self {
            Inequality::AprioriY => "apriori_y",
            Inequality::AprioriX => "apriori_x",
            Inequality::SmallX => "small_x_before_t0n",
            Inequality::CaseY => "case_y_lower",
            Inequality::CaseX => "case_x_lower",
        }
    }
}

impl fmt::Display for Inequality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of checking one inequality on one path. `worst_margin` is the
/// smallest slack over the checked grid points (positive when satisfied);
/// `pass` holds exactly when `worst_margin >= -tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRecord {
    pub path_seed: u64,
    pub case: Option<CaseLabel>,
    pub inequality: Inequality,
    pub window: f64,
    pub points: usize,
    pub worst_margin: f64,
    pub tol: f64,
    pub pass: bool,
}

impl BoundRecord {
    fn new(inequality: Inequality, case: Option<CaseLabel>, window: f64, margins: &[f64], tol: f64) -> Self {
        let worst_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
        let worst_margin = if margins.is_empty() { 0.0 } else { worst_margin };
        Self {
            path_seed: 0,
            case,
            inequality,
            window,
            points: margins.len(),
            worst_margin,
            tol,
            pass: worst_margin >= -tol,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.path_seed = seed;
        self
    }
}

fn require_excursion_start(traj: &Trajectory) -> Result<()> {
    let s = traj.initial();
    if s.order != ChainOrder::Three {
        return Err(Error::Precondition("bounds are stated for the three-dimensional chain".into()));
    }
    if s.x() != 0.0 {
        return Err(Error::Precondition(format!("excursion start needs X0 = 0, got {}", s.x())));
    }
    Ok(())
}

/// A-priori bounds up to the band stop:
/// `|Y_t| <= 2^n (1 + t)`, `|X_t| <= 2^n (t + t^2/2)`, and `|X_t| <= 2^-n`
/// on `[0, t0n]`.
pub fn check_apriori_bound(traj: &Trajectory, n: u32) -> Result<[BoundRecord; 3]> {
    require_excursion_start(traj)?;
    if traj.stop_index().is_none() {
        return Err(Error::Precondition("trajectory has not been run to a stop".into()));
    }
    let band = StoppingBand::new(n)?;
    let end = traj.live_end();
    let states = &traj.states()[..=end];
    let horizon = states[end].t;
    let tol = ABS_TOL * band.outer;

    let my: Vec<f64> = states.iter().map(|s| band.apriori_y(s.t) - s.y().abs()).collect();
    let mx: Vec<f64> = states.iter().map(|s| band.apriori_x(s.t) - s.x().abs()).collect();
    let small: Vec<f64> = states.iter().take_while(|s| s.t <= band.t0n).map(|s| band.inner - s.x().abs()).collect();
    Ok([
        BoundRecord::new(Inequality::AprioriY, None, horizon, &my, tol),
        BoundRecord::new(Inequality::AprioriX, None, horizon, &mx, tol),
        BoundRecord::new(Inequality::SmallX, None, band.t0n.min(horizon), &small, ABS_TOL),
    ])
}

/// Case lower bounds over the guaranteed window (capped at `Tn` for Cases
/// III and IV):
///
/// * I: `Y >= 2^-n / 2`, `X >= (2^-n / 2) t`
/// * II: `Y >= beta / 2`, `X >= (beta / 2) t` with `beta = Y0`
/// * III, IV: `Y >= (2^-n / 2) t`, `X >= (2^-n / 4) t^2`
///
/// Reflected starts are checked in the reflected frame.
pub fn check_case_bounds(traj: &Trajectory, label: CaseLabel, n: u32, tn: Option<f64>) -> Result<[BoundRecord; 2]> {
    require_excursion_start(traj)?;
    let actual = classify(traj.initial(), n)?;
    if actual != label {
        return Err(Error::Precondition(format!("label {label} does not match the start, which is {actual}")));
    }
    let initial = label.oriented(traj.initial());
    let mut window = guaranteed_window(label, traj.initial(), n);
    if label.uses_tn() {
        if let Some(t) = tn {
            window = window.min(t);
        }
    }
    let states: Vec<_> = traj.states().iter().take_while(|s| s.t <= window).map(|s| label.oriented(s)).collect();

    let half = 0.5 * band_inner(n);
    let (y_low, x_low): (Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>) = match label.case {
        Case::I => (Box::new(move |_| half), Box::new(move |t| half * t)),
        Case::II => {
            let b = 0.5 * initial.y();
            (Box::new(move |_| b), Box::new(move |t| b * t))
        }
        Case::III | Case::IV => (Box::new(move |t| half * t), Box::new(move |t| 0.5 * half * t * t)),
    };

    let h = traj.step();
    let max_z = states.iter().map(|s| s.z().abs()).fold(0.0, f64::max);
    let max_y = states.iter().map(|s| s.y().abs()).fold(0.0, f64::max);
    let slope_y = match label.case {
        Case::I | Case::II => 0.0,
        Case::III | Case::IV => half,
    };
    let slope_x = x_low(window.max(h)) / window.max(h) * 2.0;
    let tol_y = ABS_TOL + h * (max_z + slope_y);
    let tol_x = ABS_TOL + h * (max_y + slope_x);

    let my: Vec<f64> = states.iter().map(|s| s.y() - y_low(s.t)).collect();
    let mx: Vec<f64> = states.iter().map(|s| s.x() - x_low(s.t)).collect();
    let window = states.last().map_or(0.0, |s| s.t);
    Ok([
        BoundRecord::new(Inequality::CaseY, Some(label), window, &my, tol_y),
        BoundRecord::new(Inequality::CaseX, Some(label), window, &mx, tol_x),
    ])
}

/// Zero hits of `X` before the band stop.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionStats {
    pub hits: Vec<f64>,
    pub gaps: Vec<f64>,
    pub min_gap: Option<f64>,
    /// End of the scanned interval (band stop or last sample).
    pub scanned_until: f64,
}

impl ExcursionStats {
    pub fn count(&self) -> usize {
        self.hits.len()
    }
}

/// Detects zero hits of `X`: runs of grid points with `|X| <= origin_eps`
/// count once, at their first point; a sign change between two points
/// outside that tolerance counts at the linearly interpolated root.
pub fn excursion_scan(traj: &Trajectory, origin_eps: f64) -> ExcursionStats {
    let end = traj.live_end();
    let states = &traj.states()[..=end];
    let mut hits: Vec<f64> = Vec::new();
    let mut prev: Option<(f64, f64, bool)> = None;
    for s in states {
        let (t, x) = (s.t, s.x());
        let near = x.abs() <= origin_eps;
        let hit = match prev {
            None => near.then_some(t),
            Some((_, _, true)) => None,
            Some((_, _, false)) if near => Some(t),
            Some((tp, xp, false)) if (xp < 0.0) != (x < 0.0) => {
                let frac = xp.abs() / (xp.abs() + x.abs());
                Some(tp + frac * (t - tp))
            }
            Some(_) => None,
        };
        if let Some(th) = hit {
            if hits.last().is_none_or(|&last| th > last) {
                hits.push(th);
            }
        }
        prev = Some((t, x, near));
    }
    let gaps: Vec<f64> = hits.windows(2).map(|w| w[1] - w[0]).collect();
    let min_gap = gaps.iter().copied().reduce(f64::min);
    ExcursionStats { hits, gaps, min_gap, scanned_until: states[end].t }
}

/// Strong-error study: per level, the ensemble mean of
/// `sup_t |X^(L) - X^(L_ref)|` over the common live window.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub levels: Vec<u32>,
    pub l_ref: u32,
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Least-squares slope of `ln error` against `ln step`; `None` when the
    /// errors vanish or too few are positive.
    pub order: Option<f64>,
    /// All errors are exactly zero.
    pub exact: bool,
    pub m: usize,
}

pub fn convergence_order(
    params: &SystemParams,
    levels: &[u32],
    l_ref: u32,
    m: usize,
    noise: NoiseSource,
    cfg: &SolveConfig,
) -> Result<ConvergenceReport> {
    let mut distinct = levels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return domain("convergence fit needs at least two distinct levels");
    }
    if distinct.iter().any(|&l| l >= l_ref) {
        return domain(format!("all levels must be below the reference level {l_ref}"));
    }
    if m == 0 {
        return domain("ensemble size must be positive");
    }
    let per_path: Vec<Vec<f64>> = try_map_paths(m, |i| {
        let path = noise.path(i, cfg.max_time, l_ref)?;
        let reference = solve(params, &path, &SolveConfig { level: l_ref, ..*cfg })?;
        levels
            .iter()
            .map(|&l| {
                let coarse = solve(params, &path, &SolveConfig { level: l, ..*cfg })?;
                let rec = divergence_record(&coarse, &reference)?;
                Ok(rec.last().map_or(0.0, |p| p.sup))
            })
            .collect::<Result<Vec<f64>>>()
    })?;

    let mf = m as f64;
    let errors: Vec<f64> = (0..levels.len()).map(|j| per_path.iter().map(|e| e[j]).sum::<f64>() / mf).collect();
    let stderr = (0..levels.len())
        .map(|j| {
            if m < 2 {
                return 0.0;
            }
            let var = per_path.iter().map(|e| (e[j] - errors[j]).powi(2)).sum::<f64>() / (mf - 1.0);
            (var / mf).sqrt()
        })
        .collect();
    let steps: Vec<f64> = levels.iter().map(|&l| cfg.max_time * 2f64.powi(-(l as i32))).collect();
    let exact = errors.iter().all(|&e| e == 0.0);
    let pts: Vec<(f64, f64)> =
        steps.iter().zip(&errors).filter(|(_, &e)| e > 0.0).map(|(&h, &e)| (h.ln(), e.ln())).collect();
    let order = if pts.len() >= 2 { Some(ls_slope(&pts)) } else { None };
    Ok(ConvergenceReport { levels: levels.to_vec(), l_ref, steps, errors, stderr, order, exact, m })
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Bound checks of one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBounds {
    pub path_seed: u64,
    pub label: CaseLabel,
    pub tn: Option<f64>,
    pub records: Vec<BoundRecord>,
}

/// Simulates `m` paths from the start in `params` and runs the a-priori and
/// case checks on each. The solver continues past band stops with the noise
/// off so the case window is always covered.
pub fn bounds_ensemble(params: &SystemParams, noise: NoiseSource, cfg: &SolveConfig, m: usize) -> Result<Vec<PathBounds>> {
    let n = cfg.band_n;
    let label = classify(&params.initial(), n)?;
    let cfg = cfg.with_continuation(true);
    try_map_paths(m, |i| {
        let path = noise.path(i, cfg.max_time, cfg.level)?;
        let traj = solve(params, &path, &cfg)?;
        let tn = if label.uses_tn() { detect_tn(&traj, n) } else { None };
        let seed = noise.seed(i);
        let mut records: Vec<BoundRecord> =
            check_apriori_bound(&traj, n)?.into_iter().map(|r| r.with_seed(seed)).collect();
        records.extend(check_case_bounds(&traj, label, n, tn)?.into_iter().map(|r| r.with_seed(seed)));
        Ok(PathBounds { path_seed: seed, label, tn, records })
    })
}

/// Pass counts per inequality over an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantReport {
    pub records: Vec<BoundRecord>,
    pub summary: Vec<InequalitySummary>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalitySummary {
    pub inequality: Inequality,
    pub passed: usize,
    pub total: usize,
    pub worst_margin: f64,
}

impl InequalitySummary {
    pub fn pass_rate(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.passed as f64 / self.total as f64
        }
    }
}

impl InvariantReport {
    pub fn from_records(records: Vec<BoundRecord>) -> Self {
        let summary = Inequality::ALL
            .iter()
            .filter_map(|&ineq| {
                let rs: Vec<&BoundRecord> = records.iter().filter(|r| r.inequality == ineq).collect();
                (!rs.is_empty()).then(|| InequalitySummary {
                    inequality: ineq,
                    passed: rs.iter().filter(|r| r.pass).count(),
                    total: rs.len(),
                    worst_margin: rs.iter().map(|r| r.worst_margin).fold(f64::INFINITY, f64::min),
                })
            })
            .collect();
        Self { records, summary }
    }

    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }
}

/// Excursion scan of one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathExcursions {
    pub path_seed: u64,
    pub stats: ExcursionStats,
}

pub fn excursion_ensemble(
    params: &SystemParams,
    noise: NoiseSource,
    cfg: &SolveConfig,
    m: usize,
) -> Result<Vec<PathExcursions>> {
    try_map_paths(m, |i| {
        let path = noise.path(i, cfg.max_time, cfg.level)?;
        let traj = solve(params, &path, cfg)?;
        Ok(PathExcursions { path_seed: noise.seed(i), stats: excursion_scan(&traj, cfg.origin_eps) })
    })
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// `t0n <= 2` for every band index: the inequality is vacuous, kept as a
/// sanity assertion.
pub fn t0n_below_two(n: u32) -> bool {
    t0n(n) <= 2.0
}
