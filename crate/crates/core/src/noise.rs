//! Seeded Brownian paths on dyadic grids.
//!
//! A path stores its increments on the grid `k * T * 2^-L`. All randomness is
//! drawn from ChaCha8 streams keyed by `(seed, kind, level)` at a word
//! position given by the increment index, so any increment or bridge midpoint
//! can be regenerated independently of evaluation order or thread layout.
//!
//! Refinement splits each parent increment `dB` into children
//! `left = dB/2 + xi`, `right = dB - left` with `xi ~ N(0, Delta/4)`.
//! Sampled values are rounded to a fixed quantum `q` that depends only on the
//! horizon (`2^52 q >= 64 sqrt(T)`), so increments at every level are
//! integers times `q`, `right` is exact and `left + right == dB` bit for bit.
//! Coarsening is the matching pairwise sum, so a refined path coarsens back
//! to its parent exactly at every level. The quantum is about `1e-14 sqrt(T)`,
//! far below the resolution of any grid this crate supports.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Error, Result};
use crate::gauss::{normal_quantile, open_unit};

/// Finest grid level a path may be generated or refined to (2^24 increments,
/// 128 MiB).
pub const MAX_LEVEL: u32 = 24;

pub const MAGIC: &[u8; 6] = b"BPATH1";

const STREAM_BASE: u64 = 0;
const STREAM_BRIDGE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    seed: u64,
    horizon: f64,
    level: u32,
    null: bool,
    increments: Vec<f64>,
}

fn check_level(level: u32) -> Result<()> {
    if level > MAX_LEVEL {
        return Err(Error::Resource(format!(
            "grid level {level} exceeds the memory budget (max {MAX_LEVEL})"
        )));
    }
    Ok(())
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return domain(format!("horizon must be positive and finite, got {horizon}"));
    }
    Ok(())
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[inline]
fn next_normal(rng: &mut ChaCha8Rng) -> f64 {
    normal_quantile(open_unit(rng.next_u64()))
}

#[inline]
fn ulp(x: f64) -> f64 {
    let a = x.abs();
    f64::from_bits(a.to_bits() + 1) - a
}

/// Quantum for paths on `[0, horizon]`: the power of two `q` with
/// `2^52 q` the smallest power of two at or above `64 sqrt(horizon)`.
fn quantum(horizon: f64) -> f64 {
    let bound = 64.0 * horizon.sqrt();
    let exp = ((bound.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    let k = if bound == 2f64.powi(exp) { exp } else { exp + 1 };
    2f64.powi(k - 52)
}

#[inline]
fn snap(v: f64, q: f64) -> f64 {
    (v / q).round() * q
}

/// Splits `parent` into two children summing to it exactly. `xi` is the
/// bridge displacement of the midpoint.
#[inline]
fn split_increment(parent: f64, xi: f64, quantum: f64) -> (f64, f64) {
    // paths built from foreign increments may not sit on the quantum grid
    let q = if (parent / quantum).fract() == 0.0 { quantum } else { ulp(parent) };
    let limit = q * 2f64.powi(52);
    let left = snap(0.5 * parent + xi, q);
    if left.abs() < limit && parent.abs() < limit {
        (left, parent - left)
    } else {
        let half = snap(0.5 * parent, q);
        (half, parent - half)
    }
}

impl BrownianPath {
    /// Independent increments sampled directly at `level`.
    pub fn generate(seed: u64, horizon: f64, level: u32) -> Result<Self> {
        check_horizon(horizon)?;
        check_level(level)?;
        let n = 1usize << level;
        let sd = (horizon / n as f64).sqrt();
        let mut rng = stream(seed, STREAM_BASE | level as u64);
        let q = quantum(horizon);
        let increments = (0..n).map(|_| snap(sd * next_normal(&mut rng), q)).collect();
        Ok(Self { seed, horizon, level, null: false, increments })
    }

    /// Path built by bridge refinement of a single level-0 increment. Two
    /// calls with the same seed and horizon agree on every common level, which
    /// is what coupled multi-resolution runs rely on.
    pub fn canonical(seed: u64, horizon: f64, level: u32) -> Result<Self> {
        Self::generate(seed, horizon, 0)?.refine_to(level)
    }

    /// The zero path. Refining it yields zeros again.
    pub fn null(horizon: f64, level: u32) -> Result<Self> {
        check_horizon(horizon)?;
        check_level(level)?;
        Ok(Self { seed: 0, horizon, level, null: true, increments: vec![0.0; 1 << level] })
    }

    /// Wraps explicit increments; the count must be a power of two.
    pub fn from_increments(seed: u64, horizon: f64, increments: Vec<f64>) -> Result<Self> {
        check_horizon(horizon)?;
        let n = increments.len();
        if n == 0 || !n.is_power_of_two() {
            return domain(format!("increment count must be a power of two, got {n}"));
        }
        let level = n.trailing_zeros();
        check_level(level)?;
        if increments.iter().any(|v| !v.is_finite()) {
            return domain("increments must be finite");
        }
        Ok(Self { seed, horizon, level, null: false, increments })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn is_null(&self) -> bool {
        self.null
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// Grid step `T * 2^-L`.
    pub fn step(&self) -> f64 {
        self.horizon / self.increments.len() as f64
    }

    /// One bridge refinement: level `L` to `L + 1`.
    pub fn refine(&self) -> Result<Self> {
        let level = self.level + 1;
        check_level(level)?;
        if self.null {
            return Self::null(self.horizon, level);
        }
        let sd = 0.5 * self.step().sqrt();
        let mut rng = stream(self.seed, STREAM_BRIDGE | level as u64);
        let q = quantum(self.horizon);
        let mut increments = Vec::with_capacity(2 * self.increments.len());
        for &parent in &self.increments {
            let (left, right) = split_increment(parent, sd * next_normal(&mut rng), q);
            increments.push(left);
            increments.push(right);
        }
        Ok(Self { seed: self.seed, horizon: self.horizon, level, null: false, increments })
    }

    pub fn refine_to(self, level: u32) -> Result<Self> {
        check_level(level)?;
        if level < self.level {
            return domain(format!("cannot refine level {} down to {level}", self.level));
        }
        let mut path = self;
        while path.level < level {
            path = path.refine()?;
        }
        Ok(path)
    }

    /// Pairwise sums down to a coarser level.
    pub fn coarsen_to(&self, level: u32) -> Result<Self> {
        if level > self.level {
            return domain(format!("cannot coarsen level {} up to {level}", self.level));
        }
        let mut increments = self.increments.clone();
        for _ in level..self.level {
            increments = increments.chunks_exact(2).map(|p| p[0] + p[1]).collect();
        }
        Ok(Self { seed: self.seed, horizon: self.horizon, level, null: self.null, increments })
    }

    /// Same noise realisation on the grid of `level`, refining or coarsening
    /// as needed.
    pub fn at_level(&self, level: u32) -> Result<Self> {
        if level >= self.level {
            self.clone().refine_to(level)
        } else {
            self.coarsen_to(level)
        }
    }

    /// `B` at the grid points `0, h, ..., T` (length `2^L + 1`).
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.increments.len() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for &d in &self.increments {
            acc += d;
            out.push(acc);
        }
        out
    }

    /// `B_t` by partial sums, interpolated linearly inside a cell.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return domain(format!("time {t} outside [0, {}]", self.horizon));
        }
        let h = self.step();
        let pos = t / h;
        let k = (pos.floor() as usize).min(self.increments.len());
        let base: f64 = self.increments[..k].iter().sum();
        if k == self.increments.len() {
            return Ok(base);
        }
        let frac = pos - k as f64;
        Ok(base + frac * self.increments[k])
    }

    /// Binary dump: `BPATH1`, seed (u64), horizon (f64), level (u32), then the
    /// increments as f64, all little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.horizon.to_le_bytes())?;
        w.write_all(&self.level.to_le_bytes())?;
        for v in &self.increments {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut b8 = [0u8; 8];
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let horizon = f64::from_le_bytes(b8);
        r.read_exact(&mut b4)?;
        let level = u32::from_le_bytes(b4);
        check_level(level).map_err(|e| Error::Format(e.to_string()))?;
        let n = 1usize << level;
        let mut increments = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)
                .map_err(|_| Error::Format(format!("expected {n} increments")))?;
            increments.push(f64::from_le_bytes(b8));
        }
        if r.read(&mut b8)? != 0 {
            return Err(Error::Format("trailing bytes after increments".into()));
        }
        Self::from_increments(seed, horizon, increments)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
