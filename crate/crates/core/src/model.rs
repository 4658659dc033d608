//! The chain system `dX = Y dt, dY = Z dt, dZ = |X|^alpha dB` and its
//! two-dimensional predecessor `dX = Y dt, dY = |X|^alpha dB`.
//!
//! In both orders the noise enters only the last coordinate; every other
//! coordinate is driven through the linear drift chain.

use std::fmt;

use crate::error::{domain, Error, Result};

/// Number of coordinates in the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChainOrder {
    Two,
    Three,
}

impl ChainOrder {
    pub fn dim(self) -> usize {
        match self {
            ChainOrder::Two => 2,
            ChainOrder::Three => 3,
        }
    }

    pub fn from_dim(d: usize) -> Result<Self> {
        match d {
            2 => Ok(ChainOrder::Two),
            3 => Ok(ChainOrder::Three),
            _ => domain(format!("chain order must be 2 or 3, got {d}")),
        }
    }
}

/// Solution vector at one time point.
///
/// Coordinates are stored in a fixed array; for [`ChainOrder::Two`] the third
/// slot is unused and kept at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainState {
    pub t: f64,
    pub order: ChainOrder,
    coords: [f64; 3],
}

impl ChainState {
    pub fn new3(t: f64, x: f64, y: f64, z: f64) -> Self {
        Self { t, order: ChainOrder::Three, coords: [x, y, z] }
    }

    pub fn new2(t: f64, x: f64, y: f64) -> Self {
        Self { t, order: ChainOrder::Two, coords: [x, y, 0.0] }
    }

    /// Builds a state from a slice of length 2 or 3.
    pub fn from_slice(t: f64, coords: &[f64]) -> Result<Self> {
        match *coords {
            [x, y] => Ok(Self::new2(t, x, y)),
            [x, y, z] => Ok(Self::new3(t, x, y, z)),
            _ => domain(format!("state needs 2 or 3 coordinates, got {}", coords.len())),
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.order.dim()]
    }

    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    pub fn y(&self) -> f64 {
        self.coords[1]
    }

    /// Third coordinate; zero at chain order 2.
    pub fn z(&self) -> f64 {
        self.coords[2]
    }

    /// The coordinate that receives the noise (Z at order 3, Y at order 2).
    pub fn noisy(&self) -> f64 {
        self.coords[self.order.dim() - 1]
    }

    pub(crate) fn noisy_mut(&mut self) -> &mut f64 {
        &mut self.coords[self.order.dim() - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.coords().iter().all(|c| c.is_finite())
    }

    pub fn is_origin(&self) -> bool {
        self.coords().iter().all(|&c| c == 0.0)
    }

    /// Sign reflection `(x, y, z) -> (-x, -y, -z)`, keeping the time.
    pub fn reflected(&self) -> Self {
        let mut out = *self;
        for c in &mut out.coords {
            *c = -*c;
        }
        out
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    pub(crate) fn with_coords(mut self, coords: [f64; 3]) -> Self {
        self.coords = coords;
        self
    }

    pub(crate) fn raw(&self) -> [f64; 3] {
        self.coords
    }
}

impl fmt::Display for ChainState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} (", self.t)?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Model parameters: Hölder exponent, chain order and initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    alpha: f64,
    initial: ChainState,
}

impl SystemParams {
    /// `alpha` must lie in `(0, 1]`; `alpha = 1` is the Lipschitz edge, kept
    /// as a reference point for convergence studies. The initial state is
    /// rebased to `t = 0` and must not be the origin.
    pub fn new(alpha: f64, initial: ChainState) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Domain(format!("alpha must be in (0, 1], got {alpha}")));
        }
        if !initial.is_finite() {
            return domain("initial state must be finite");
        }
        if initial.is_origin() {
            return domain("initial state must not be the origin");
        }
        Ok(Self { alpha, initial: initial.with_time(0.0) })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn order(&self) -> ChainOrder {
        self.initial.order
    }

    pub fn initial(&self) -> ChainState {
        self.initial
    }

    pub fn with_initial(&self, initial: ChainState) -> Result<Self> {
        Self::new(self.alpha, initial)
    }
}

/// `|x|^alpha`, evaluated as `exp(alpha * ln|x|)` with an exact zero at the
/// origin. Unchecked; callers guarantee a finite `x`.
#[inline]
pub fn holder_power(x: f64, alpha: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        (alpha * x.abs().ln()).exp()
    }
}

/// Diffusion coefficient `|x|^alpha` of the noisy row.
pub fn diffusion_coeff(x: f64, alpha: f64) -> Result<f64> {
    if !x.is_finite() {
        return domain(format!("diffusion coefficient needs finite x, got {x}"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return domain(format!("alpha must be in (0, 1], got {alpha}"));
    }
    Ok(holder_power(x, alpha))
}

/// Mean-value upper bound `alpha * a^(alpha-1) * (b - a)` for
/// `b^alpha - a^alpha` on `0 < a < b`.
pub fn mvt_bound(a: f64, b: f64, alpha: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) {
        return domain(format!("mean-value bound needs a > 0, got {a}"));
    }
    if !(b > a && b.is_finite()) {
        return domain(format!("mean-value bound needs b > a, got a={a}, b={b}"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return domain(format!("alpha must be in (0, 1], got {alpha}"));
    }
    Ok(alpha * a.powf(alpha - 1.0) * (b - a))
}

/// Exact flow of the drift chain with the noisy coordinate frozen.
///
/// Order 3: `(x + y h + z h^2/2, y + z h, z)`; order 2: `(x + y h, y)`.
pub fn drift_flow(state: &ChainState, h: f64) -> Result<ChainState> {
    if !(h > 0.0 && h.is_finite()) {
        return domain(format!("drift step must be positive and finite, got {h}"));
    }
    if !state.is_finite() {
        return domain("drift flow needs a finite state");
    }
    Ok(drift_flow_unchecked(state, h))
}

#[inline]
pub(crate) fn drift_flow_unchecked(state: &ChainState, h: f64) -> ChainState {
    let [x, y, z] = state.coords;
    let coords = match state.order {
        ChainOrder::Three => [x + h * (y + 0.5 * z * h), y + z * h, z],
        ChainOrder::Two => [x + y * h, y, 0.0],
    };
    ChainState { t: state.t + h, order: state.order, coords }
}

/// Zero-noise solution evaluated in closed form at elapsed time `t`.
#[inline]
pub(crate) fn polynomial_at(initial: &ChainState, t: f64) -> [f64; 3] {
    let [x, y, z] = initial.coords;
    match initial.order {
        ChainOrder::Three => [x + t * (y + 0.5 * z * t), y + z * t, z],
        ChainOrder::Two => [x + y * t, y, 0.0],
    }
}
