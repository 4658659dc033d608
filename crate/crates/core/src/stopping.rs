//! Level-`n` band machinery and the case analysis of excursion starts.
//!
//! An excursion starts at `X0 = 0` with the state outside the inner band.
//! States with `Y0 < 0`, or `Y0 = 0` and `Z0 < 0`, are mapped by the sign
//! reflection `(x, y, z) -> (-x, -y, -z)` first; the label records that.
//!
//! | case | start (after reflection)   | window                  |
//! |------|----------------------------|-------------------------|
//! | I    | `Y0 > 0`, `|Z0| <= 2^-n`   | `t0n`                   |
//! | II   | `Y0 > 0`, `Z0 < -2^-n`     | `t0n ∧ Y0 / 2^(n+1)`    |
//! | III  | `Y0 > 0`, `Z0 > 2^-n`      | `t0n ∧ Tn`              |
//! | IV   | `Y0 = 0`, `Z0 > 2^-n`      | `t0n ∧ Tn`              |
//!
//! with `t0n = 2^(-2n) / 2` and `Tn` the first time `Z` falls to `2^-n / 2`.

use std::fmt;

use crate::error::{Error, Result};
use crate::integrator::{band_inner, band_outer, linf_norm, Trajectory, MAX_BAND};
use crate::model::{ChainOrder, ChainState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingBand {
    pub n: u32,
    pub inner: f64,
    pub outer: f64,
    pub t0n: f64,
    /// `Y0 / 2^(n+1)` for Case II starts.
    pub tprime0n: Option<f64>,
}

impl StoppingBand {
    pub fn new(n: u32) -> Result<Self> {
        check_n(n)?;
        Ok(Self { n, inner: band_inner(n), outer: band_outer(n), t0n: t0n(n), tprime0n: None })
    }

    /// Band for a given excursion start; fills `tprime0n` in Case II.
    pub fn for_start(initial: &ChainState, n: u32) -> Result<Self> {
        let label = classify(initial, n)?;
        let mut band = Self::new(n)?;
        if label.case == Case::II {
            band.tprime0n = Some(tprime0n(label.oriented(initial).y(), n));
        }
        Ok(band)
    }

    /// `2^n (t + t^2/2)`, the a-priori bound on `|X_t|` before the band stop.
    pub fn apriori_x(&self, t: f64) -> f64 {
        self.outer * (t + 0.5 * t * t)
    }

    /// `2^n (1 + t)`, the a-priori bound on `|Y_t|`.
    pub fn apriori_y(&self, t: f64) -> f64 {
        self.outer * (1.0 + t)
    }
}

fn check_n(n: u32) -> Result<()> {
    if n == 0 || n > MAX_BAND {
        return Err(Error::Domain(format!("band index must be in 1..={MAX_BAND}, got {n}")));
    }
    Ok(())
}

/// `t0n = 2^(-2n) / 2`.
pub fn t0n(n: u32) -> f64 {
    2f64.powi(-2 * n as i32 - 1)
}

/// `t'0n = beta / 2^(n+1)`.
pub fn tprime0n(beta: f64, n: u32) -> f64 {
    beta * 2f64.powi(-(n as i32) - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Case {
    I,
    II,
    III,
    IV,
}

/// Case of an excursion start, plus whether the start was sign-reflected
/// before classification. A reflected Case IV start is the `Z0 < -2^-n`
/// branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CaseLabel {
    pub case: Case,
    pub reflected: bool,
}

impl CaseLabel {
    pub fn new(case: Case, reflected: bool) -> Self {
        Self { case, reflected }
    }

    /// Label of the reflected start.
    pub fn flipped(self) -> Self {
        Self { reflected: !self.reflected, ..self }
    }

    /// Whether the bounds use the `Tn` cap and the quartic kernel.
    pub fn uses_tn(self) -> bool {
        matches!(self.case, Case::III | Case::IV)
    }

    /// Maps a state into the frame in which the case bounds are stated.
    pub fn oriented(self, s: &ChainState) -> ChainState {
        if self.reflected {
            s.reflected()
        } else {
            *s
        }
    }

    pub fn name(self) -> &'static str {
        match (self.case, self.reflected) {
            (Case::I, false) => "I",
            (Case::II, false) => "II",
            (Case::III, false) => "III",
            (Case::IV, false) => "IV_zpos",
            (Case::I, true) => "I_reflected",
            (Case::II, true) => "II_reflected",
            (Case::III, true) => "III_reflected",
            (Case::IV, true) => "IV_zneg",
        }
    }
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Classifies an excursion start `(0, Y0, Z0)` for band index `n`.
///
/// Ties `|Z0| = 2^-n` go to Case I.
pub fn classify(initial: &ChainState, n: u32) -> Result<CaseLabel> {
    check_n(n)?;
    if initial.order != ChainOrder::Three {
        return Err(Error::Precondition("case analysis applies to the three-dimensional chain".into()));
    }
    if initial.x() != 0.0 {
        return Err(Error::Precondition(format!("excursion start needs X0 = 0, got {}", initial.x())));
    }
    let inner = band_inner(n);
    if !(linf_norm(initial) > inner) {
        return Err(Error::Precondition(format!("start {initial} lies inside the inner band 2^-{n}")));
    }
    let reflected = initial.y() < 0.0 || (initial.y() == 0.0 && initial.z() < 0.0);
    let s = if reflected { initial.reflected() } else { *initial };
    let (y, z) = (s.y(), s.z());
    let case = if y > 0.0 {
        if z.abs() <= inner {
            Case::I
        } else if z < 0.0 {
            Case::II
        } else {
            Case::III
        }
    } else {
        Case::IV
    };
    Ok(CaseLabel { case, reflected })
}

/// Deterministic part of the window on which the case bounds hold. For
/// Cases III and IV the caller still caps it at `Tn`.
pub fn guaranteed_window(label: CaseLabel, initial: &ChainState, n: u32) -> f64 {
    let base = t0n(n);
    match label.case {
        Case::II => base.min(tprime0n(label.oriented(initial).y(), n)),
        Case::I | Case::III | Case::IV => base,
    }
}

/// First grid time at which the noisy coordinate falls to `2^-n / 2`
/// (measured in the frame where `Z0 >= 0`).
pub fn detect_tn(traj: &Trajectory, n: u32) -> Option<f64> {
    let level = 0.5 * band_inner(n);
    let sign = if traj.initial().noisy() < 0.0 { -1.0 } else { 1.0 };
    traj.states().iter().find(|s| sign * s.noisy() <= level).map(|s| s.t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::StopReason;

    fn s(y: f64, z: f64) -> ChainState {
        ChainState::new3(0.0, 0.0, y, z)
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&s(1.0, 0.0), 1).unwrap(), CaseLabel::new(Case::I, false));
        assert_eq!(classify(&s(1.0, -0.75), 1).unwrap(), CaseLabel::new(Case::II, false));
        assert_eq!(classify(&s(0.0, 0.6), 1).unwrap(), CaseLabel::new(Case::IV, false));
        assert_eq!(classify(&s(1.0, 0.75), 1).unwrap(), CaseLabel::new(Case::III, false));
        assert_eq!(classify(&s(0.0, -0.6), 1).unwrap(), CaseLabel::new(Case::IV, true));
        assert_eq!(classify(&s(-1.0, 0.75), 1).unwrap(), CaseLabel::new(Case::II, true));
        assert_eq!(classify(&s(0.0, -0.6), 1).unwrap().name(), "IV_zneg");
    }

    #[test]
    fn classify_tie_goes_to_case_one() {
        assert_eq!(classify(&s(1.0, 0.5), 1).unwrap().case, Case::I);
        assert_eq!(classify(&s(1.0, -0.5), 1).unwrap().case, Case::I);
    }

    #[test]
    fn classify_errors() {
        assert!(matches!(classify(&ChainState::new3(0.0, 0.1, 1.0, 0.0), 1), Err(Error::Precondition(_))));
        assert!(matches!(classify(&s(0.25, 0.5), 1), Err(Error::Precondition(_))));
        assert!(classify(&ChainState::new2(0.0, 0.0, 1.0), 1).is_err());
        assert!(classify(&s(1.0, 0.0), 0).is_err());
    }

    #[test]
    fn window_examples() {
        let l1 = CaseLabel::new(Case::I, false);
        assert_eq!(guaranteed_window(l1, &s(1.0, 0.0), 2), 0.03125);
        let l2 = classify(&s(1.0, -0.75), 1).unwrap();
        assert_eq!(guaranteed_window(l2, &s(1.0, -0.75), 1), 0.125);
        let small = classify(&s(0.01, -0.75), 1).unwrap();
        assert_eq!(guaranteed_window(small, &s(0.01, -0.75), 1), 0.01 / 4.0);
        let mut prev = f64::INFINITY;
        for n in 1..40 {
            let w = guaranteed_window(l1, &s(1.0, 0.0), n);
            assert!(w < prev);
            prev = w;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn band_for_case_two_has_tprime() {
        let b = StoppingBand::for_start(&s(1.0, -0.75), 1).unwrap();
        assert_eq!(b.tprime0n, Some(0.25));
        assert_eq!(StoppingBand::for_start(&s(1.0, 0.0), 1).unwrap().tprime0n, None);
        let b = StoppingBand::new(3).unwrap();
        assert_eq!((b.inner, b.outer, b.t0n), (0.125, 8.0, 2f64.powi(-7)));
    }

    #[test]
    fn band_arithmetic_chain() {
        for n in 1..=20 {
            let b = StoppingBand::new(n).unwrap();
            assert!(b.inner < b.outer);
            assert!(b.apriori_x(b.t0n) <= b.inner, "n={n}");
            // the vacuous remark t0n <= 2
            assert!(b.t0n <= 2.0);
        }
    }

    fn synthetic(zs: &[f64]) -> Trajectory {
        let states = zs.iter().enumerate().map(|(k, &z)| ChainState::new3(k as f64 * 0.125, 0.0, 1.0, z)).collect();
        Trajectory::from_states(states, StopReason::NotStopped, None).unwrap()
    }

    #[test]
    fn detect_tn_grid_rule() {
        // n = 1: level 0.25
        assert_eq!(detect_tn(&synthetic(&[0.5, 0.5, 0.5]), 1), None);
        assert_eq!(detect_tn(&synthetic(&[0.9, 0.6, 0.3, 0.2, 0.1]), 1), Some(0.375));
        assert_eq!(detect_tn(&synthetic(&[-0.9, -0.6, -0.2]), 1), Some(0.25));
    }

    #[test]
    fn reflection_equivariance() {
        for &(y, z) in &[(1.0, 0.0), (1.0, -0.75), (0.5, 0.9), (0.0, 0.7), (0.0, -0.7), (-0.3, 0.7), (-2.0, -3.0)] {
            let a = classify(&s(y, z), 1).unwrap();
            let b = classify(&s(y, z).reflected(), 1).unwrap();
            assert_eq!(b, a.flipped(), "({y}, {z})");
            assert_eq!(a.oriented(&s(y, z)), b.oriented(&s(y, z).reflected()));
        }
    }
}
