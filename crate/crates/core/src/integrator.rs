//! Time stepping along a [`BrownianPath`] with band stopping.
//!
//! The default scheme integrates the drift chain exactly over each cell and
//! applies the noise kick `|x_k|^alpha * dB_k` to the noisy coordinate with
//! the coefficient frozen at the start of the cell. Because the drift is
//! linear, the state is carried as the closed-form zero-noise solution plus
//! a noise-driven deviation that follows the same flow. Zero-noise runs
//! therefore reproduce the polynomial solution to rounding at any step count.

use crate::error::{domain, Error, Result};
use crate::model::{drift_flow_unchecked, holder_power, polynomial_at, ChainState, SystemParams};
use crate::noise::BrownianPath;

/// Upper limit on the band index so that `2^n` stays comfortably finite.
pub const MAX_BAND: u32 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Scheme {
    /// Exact drift flow per cell, Euler noise kick.
    #[default]
    DriftExactEM,
    /// Forward Euler on every row.
    PlainEM,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopReason {
    NotStopped,
    InnerBand,
    OuterBand,
    OriginHit,
    Blowup,
    HorizonReached,
}

impl StopReason {
    /// Stops that end the live (noise-on) part of a run: the band exits and
    /// the origin hit, which lies inside the inner band.
    pub fn is_band(self) -> bool {
        matches!(self, StopReason::InnerBand | StopReason::OuterBand | StopReason::OriginHit)
    }

    pub fn name(self) -> &'static str {
        match self {
            StopReason::NotStopped => "none",
            StopReason::InnerBand => "inner_band",
            StopReason::OuterBand => "outer_band",
            StopReason::OriginHit => "origin_hit",
            StopReason::Blowup => "blowup",
            StopReason::HorizonReached => "horizon",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    pub scheme: Scheme,
    pub level: u32,
    pub band_n: u32,
    pub origin_eps: f64,
    pub max_time: f64,
    /// Keep stepping with the noise switched off after a band stop.
    pub continue_after_band: bool,
}

impl SolveConfig {
    /// Drift-exact scheme, origin tolerance `2^(-n-6)`, no continuation.
    pub fn new(level: u32, band_n: u32, max_time: f64) -> Self {
        Self {
            scheme: Scheme::DriftExactEM,
            level,
            band_n,
            origin_eps: default_origin_eps(band_n),
            max_time,
            continue_after_band: false,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_continuation(mut self, on: bool) -> Self {
        self.continue_after_band = on;
        self
    }

    pub fn with_origin_eps(mut self, eps: f64) -> Self {
        self.origin_eps = eps;
        self
    }

    pub fn inner(&self) -> f64 {
        band_inner(self.band_n)
    }

    pub fn outer(&self) -> f64 {
        band_outer(self.band_n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.band_n == 0 || self.band_n > MAX_BAND {
            return Err(Error::Config(format!("band_n must be in 1..={MAX_BAND}, got {}", self.band_n)));
        }
        if !(self.origin_eps > 0.0) {
            return Err(Error::Config(format!("origin_eps must be positive, got {}", self.origin_eps)));
        }
        if self.origin_eps > self.inner() {
            return Err(Error::Config(format!(
                "origin_eps {} exceeds the inner band 2^-{}",
                self.origin_eps, self.band_n
            )));
        }
        if !(self.max_time > 0.0 && self.max_time.is_finite()) {
            return Err(Error::Config(format!("max_time must be positive, got {}", self.max_time)));
        }
        Ok(())
    }
}

pub fn default_origin_eps(n: u32) -> f64 {
    2f64.powi(-(n as i32) - 6)
}

pub fn band_inner(n: u32) -> f64 {
    2f64.powi(-(n as i32))
}

pub fn band_outer(n: u32) -> f64 {
    2f64.powi(n as i32)
}

/// Maximum absolute coordinate; NaN if any coordinate is NaN.
pub fn linf_norm(state: &ChainState) -> f64 {
    state.coords().iter().fold(0.0f64, |m, &c| if c.is_nan() || m.is_nan() { f64::NAN } else { m.max(c.abs()) })
}

/// One grid step of `scheme`. A non-finite result is returned as is; the
/// solver turns it into a [`StopReason::Blowup`].
pub fn step(state: &ChainState, params: &SystemParams, d_b: f64, h: f64, scheme: Scheme) -> ChainState {
    let kick = holder_power(state.x(), params.alpha()) * d_b;
    match scheme {
        Scheme::DriftExactEM => {
            let mut next = drift_flow_unchecked(state, h);
            *next.noisy_mut() += kick;
            next
        }
        Scheme::PlainEM => plain_step(state, kick, h),
    }
}

fn plain_step(state: &ChainState, kick: f64, h: f64) -> ChainState {
    let [x, y, z] = state.raw();
    let coords = match state.order {
        crate::model::ChainOrder::Three => [x + y * h, y + z * h, z + kick],
        crate::model::ChainOrder::Two => [x + y * h, y + kick, 0.0],
    };
    state.with_coords(coords).with_time(state.t + h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    initial: ChainState,
    step: f64,
    states: Vec<ChainState>,
    deviation_x: Option<Vec<f64>>,
    stop: StopReason,
    stop_index: Option<usize>,
}

impl Trajectory {
    /// Assembles a trajectory from grid samples. `stop_index` points into
    /// `states`. Intended for synthetic trajectories in analysis code.
    pub fn from_states(states: Vec<ChainState>, stop: StopReason, stop_index: Option<usize>) -> Result<Self> {
        if states.is_empty() {
            return domain("trajectory needs at least one state");
        }
        if states.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return domain("trajectory times must be strictly increasing");
        }
        if let Some(i) = stop_index {
            if i >= states.len() {
                return domain("stop index out of range");
            }
        }
        if (stop == StopReason::NotStopped) != stop_index.is_none() {
            return domain("stop index must be present exactly when the trajectory is stopped");
        }
        let step = if states.len() > 1 { states[1].t - states[0].t } else { 0.0 };
        Ok(Self { initial: states[0], step, states, deviation_x: None, stop, stop_index })
    }

    pub fn initial(&self) -> &ChainState {
        &self.initial
    }

    pub fn states(&self) -> &[ChainState] {
        &self.states
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn stop(&self) -> StopReason {
        self.stop
    }

    pub fn stop_index(&self) -> Option<usize> {
        self.stop_index
    }

    pub fn stop_time(&self) -> Option<f64> {
        self.stop_index.map(|i| self.states[i].t)
    }

    /// Time of the band or origin stop, if one occurred.
    pub fn band_stop_time(&self) -> Option<f64> {
        if self.stop.is_band() {
            self.stop_time()
        } else {
            None
        }
    }

    /// Index of the last sample at which the noise was still on.
    pub fn live_end(&self) -> usize {
        match (self.stop, self.stop_index) {
            (s, Some(i)) if s.is_band() => i,
            _ => self.states.len() - 1,
        }
    }

    /// Noise-driven part of X (state minus the zero-noise solution), when the
    /// scheme carries it.
    pub fn deviation_x(&self) -> Option<&[f64]> {
        self.deviation_x.as_deref()
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|s| s.x())
    }
}

/// Integrates `params` along `path` on the grid of `cfg.level`.
///
/// Stopping predicates are evaluated at grid points in the order origin hit,
/// inner band, outer band, blowup, horizon; the stop time is the first grid
/// time at which one holds.
pub fn solve(params: &SystemParams, path: &BrownianPath, cfg: &SolveConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if path.horizon() < cfg.max_time {
        return Err(Error::Config(format!(
            "path horizon {} shorter than max_time {}",
            path.horizon(),
            cfg.max_time
        )));
    }
    let grid = if path.level() == cfg.level { None } else { Some(path.at_level(cfg.level)?) };
    let incs = grid.as_ref().unwrap_or(path).increments();
    let h = path.horizon() / incs.len() as f64;
    let steps = ((cfg.max_time / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let steps = steps.min(incs.len());

    let initial = params.initial();
    let alpha = params.alpha();
    let inner = cfg.inner();
    let outer = cfg.outer();
    let classify = |s: &ChainState| -> Option<StopReason> {
        let norm = linf_norm(s);
        if norm <= cfg.origin_eps {
            Some(StopReason::OriginHit)
        } else if norm <= inner {
            Some(StopReason::InnerBand)
        } else if norm >= outer {
            Some(StopReason::OuterBand)
        } else if !s.is_finite() || norm.is_nan() {
            Some(StopReason::Blowup)
        } else {
            None
        }
    };

    let mut states = Vec::with_capacity(steps + 1);
    states.push(initial);
    let exact = cfg.scheme == Scheme::DriftExactEM;
    let mut deviation_x = exact.then(|| {
        let mut v = Vec::with_capacity(steps + 1);
        v.push(0.0);
        v
    });

    let stop = StopReason::NotStopped;
    let stop_index = None;
    let noise_on = true;
    let mut dev = ChainState::from_slice(0.0, &vec![0.0; initial.order.dim()])?;
    let mut current = initial;

    let mut stopper = Stopper { continue_after_band: cfg.continue_after_band, stop, stop_index, noise_on };
    if stopper.register(classify(&current), 0) {
        return Ok(stopper.finish(initial, h, states, deviation_x));
    }

    for (k, &d_b) in incs.iter().enumerate().take(steps) {
        let kick = if stopper.noise_on { holder_power(current.x(), alpha) * d_b } else { 0.0 };
        let t = (k + 1) as f64 * h;
        current = if exact {
            dev = drift_flow_unchecked(&dev, h);
            *dev.noisy_mut() += kick;
            let base = polynomial_at(&initial, t);
            let d = dev.raw();
            if let Some(v) = deviation_x.as_mut() {
                v.push(d[0]);
            }
            initial.with_coords([base[0] + d[0], base[1] + d[1], base[2] + d[2]]).with_time(t)
        } else {
            plain_step(&current, kick, h).with_time(t)
        };
        states.push(current);
        if stopper.register(classify(&current), k + 1) {
            return Ok(stopper.finish(initial, h, states, deviation_x));
        }
    }
    if stopper.stop == StopReason::NotStopped {
        stopper.stop = StopReason::HorizonReached;
        stopper.stop_index = Some(states.len() - 1);
    }
    Ok(stopper.finish(initial, h, states, deviation_x))
}

struct Stopper {
    continue_after_band: bool,
    stop: StopReason,
    stop_index: Option<usize>,
    noise_on: bool,
}

impl Stopper {
    /// Records the first stop; returns true when stepping must end.
    fn register(&mut self, reason: Option<StopReason>, k: usize) -> bool {
        match reason {
            Some(r) if self.stop == StopReason::NotStopped => {
                self.stop = r;
                self.stop_index = Some(k);
                self.noise_on = false;
                let continues = self.continue_after_band
                    && matches!(r, StopReason::InnerBand | StopReason::OuterBand);
                !continues
            }
            _ => false,
        }
    }

    fn finish(self, initial: ChainState, step: f64, states: Vec<ChainState>, deviation_x: Option<Vec<f64>>) -> Trajectory {
        Trajectory { initial, step, states, deviation_x, stop: self.stop, stop_index: self.stop_index }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params3(alpha: f64, x: f64, y: f64, z: f64) -> SystemParams {
        SystemParams::new(alpha, ChainState::new3(0.0, x, y, z)).unwrap()
    }

    #[test]
    fn step_examples() {
        let p = params3(0.9, 0.0, 1.0, 0.0);
        let s = step(&p.initial(), &p, 0.0, 0.25, Scheme::DriftExactEM);
        assert_eq!(s.coords(), &[0.25, 1.0, 0.0]);
        let p = params3(0.9, 1.0, 0.0, 0.0);
        let s = step(&p.initial(), &p, 0.1, 0.5, Scheme::DriftExactEM);
        assert_eq!(s.z(), 0.1);
        let s = step(&p.initial(), &p, 0.1, 0.5, Scheme::PlainEM);
        assert_eq!(s.coords(), &[1.0, 0.0, 0.1]);
        let p2 = SystemParams::new(0.5, ChainState::new2(0.0, 4.0, 1.0)).unwrap();
        let s = step(&p2.initial(), &p2, 0.25, 0.5, Scheme::DriftExactEM);
        assert_eq!(s.coords(), &[4.5, 1.5]);
    }

    #[test]
    fn linf_examples() {
        assert_eq!(linf_norm(&ChainState::new3(0.0, 0.3, -0.7, 0.2)), 0.7);
        assert_eq!(linf_norm(&ChainState::new3(0.0, 0.0, 0.0, 0.0)), 0.0);
        assert_eq!(linf_norm(&ChainState::new3(0.0, -256.0, 0.0, 0.0)), 256.0);
        assert!(linf_norm(&ChainState::new3(0.0, 1.0, f64::NAN, 0.0)).is_nan());
    }

    #[test]
    fn starts_inside_inner_band() {
        let p = params3(0.9, 0.0, 0.25 * 0.5, 0.0);
        let path = BrownianPath::canonical(1, 1.0, 6).unwrap();
        let tr = solve(&p, &path, &SolveConfig::new(6, 2, 1.0)).unwrap();
        assert_eq!(tr.stop(), StopReason::InnerBand);
        assert_eq!(tr.stop_time(), Some(0.0));
        assert_eq!(tr.states().len(), 1);
    }

    #[test]
    fn zero_noise_stays_in_band() {
        let p = params3(0.9, 0.0, 1.0, 0.0);
        let path = BrownianPath::null(1.0, 8).unwrap();
        let tr = solve(&p, &path, &SolveConfig::new(8, 8, 1.0)).unwrap();
        assert_eq!(tr.stop(), StopReason::HorizonReached);
        assert_eq!(tr.stop_time(), Some(1.0));
        for s in tr.states() {
            assert_eq!(s.x(), s.t);
        }
    }

    #[test]
    fn config_errors() {
        let p = params3(0.9, 0.0, 1.0, 0.0);
        let path = BrownianPath::null(1.0, 4).unwrap();
        let bad = SolveConfig::new(4, 2, 1.0).with_origin_eps(0.5);
        assert!(matches!(solve(&p, &path, &bad), Err(Error::Config(_))));
        assert!(matches!(solve(&p, &path, &SolveConfig::new(4, 2, 2.0)), Err(Error::Config(_))));
        assert!(matches!(solve(&p, &path, &SolveConfig::new(4, 0, 1.0)), Err(Error::Config(_))));
    }

    #[test]
    fn solve_agrees_with_iterated_step() {
        for scheme in [Scheme::DriftExactEM, Scheme::PlainEM] {
            let p = params3(0.8, 0.0, 0.7, -0.4);
            let path = BrownianPath::canonical(77, 1.0, 10).unwrap();
            let tr = solve(&p, &path, &SolveConfig::new(10, 6, 1.0).with_scheme(scheme)).unwrap();
            let mut s = p.initial();
            for (k, &d_b) in path.increments().iter().enumerate().take(tr.live_end()) {
                s = step(&s, &p, d_b, path.step(), scheme);
                let got = tr.states()[k + 1];
                for (a, b) in s.coords().iter().zip(got.coords()) {
                    assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{scheme:?} k={k}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn truncation_freezes_noisy_coordinate() {
        let p = params3(0.9, 0.0, 1.0, 0.0);
        let mut seen = 0;
        for seed in 0..40 {
            let path = BrownianPath::canonical(seed, 4.0, 10).unwrap();
            let cfg = SolveConfig::new(10, 1, 4.0).with_continuation(true);
            let tr = solve(&p, &path, &cfg).unwrap();
            if !matches!(tr.stop(), StopReason::InnerBand | StopReason::OuterBand) {
                continue;
            }
            seen += 1;
            let k = tr.stop_index().unwrap();
            let z = tr.states()[k].z();
            assert!(tr.states()[k..].iter().all(|s| s.z().to_bits() == z.to_bits()));
            assert_eq!(tr.states().len(), path.len() + 1);
        }
        assert!(seen > 0);
    }

    #[test]
    fn self_convergence_single_path() {
        let p = params3(0.9, 0.0, 1.0, 0.0);
        let fine = BrownianPath::canonical(2718, 0.5, 20).unwrap();
        let cfg = |level| SolveConfig::new(level, 30, 0.5);
        let a = solve(&p, &fine, &cfg(12)).unwrap();
        let b = solve(&p, &fine, &cfg(20)).unwrap();
        let stride = 1 << 8;
        let sup = a
            .states()
            .iter()
            .enumerate()
            .map(|(k, s)| (s.x() - b.states()[k * stride].x()).abs())
            .fold(0.0, f64::max);
        assert!(sup <= 1e-2, "sup error {sup}");
    }

    #[test]
    fn chain_order_two_runs() {
        let p = SystemParams::new(0.6, ChainState::new2(0.0, 0.0, 1.0)).unwrap();
        let path = BrownianPath::canonical(5, 1.0, 8).unwrap();
        let tr = solve(&p, &path, &SolveConfig::new(8, 6, 1.0)).unwrap();
        assert!(tr.states().iter().all(|s| s.coords().len() == 2));
    }

    #[test]
    fn synthetic_trajectory_validation() {
        let s0 = ChainState::new3(0.0, 0.0, 1.0, 0.0);
        let s1 = ChainState::new3(0.5, 0.5, 1.0, 0.0);
        assert!(Trajectory::from_states(vec![s0, s1], StopReason::NotStopped, None).is_ok());
        assert!(Trajectory::from_states(vec![s1, s0], StopReason::NotStopped, None).is_err());
        assert!(Trajectory::from_states(vec![s0, s1], StopReason::InnerBand, None).is_err());
        assert!(Trajectory::from_states(vec![], StopReason::NotStopped, None).is_err());
    }
}
