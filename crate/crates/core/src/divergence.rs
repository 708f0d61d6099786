//! Disparity measures between a test density `g` and a speaker density `f`.
//!
//! Everything here works on Pearson residuals `δ(x) = g(x)/f(x) - 1`
//! evaluated at the test frames. A disparity is generated by a strictly
//! convex `C` with `C(0) = 0`; its residual adjustment function is
//! `A(δ) = C'(δ)(δ + 1) - C(δ)`.
//!
//! Robustness comes from two devices applied to the residuals before
//! scoring: trimming a fixed fraction of the smallest and largest residuals,
//! and rescaling `δ* = sign(δ)|δ|^β`.
//!
//! All objectives are oriented so that larger is a better match.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gmm::GmmModel;

/// `log g - log f` is clamped to this magnitude before exponentiating.
pub const LOG_RATIO_CLAMP: f64 = 700.0;

/// Lower bound applied to `δ* + 1` wherever it is a divisor or under a root.
pub const RATIO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    /// Likelihood disparity.
    Ld,
    /// Hellinger distance.
    Hd,
    /// Pearson chi-square.
    Pcs,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Ld, Measure::Hd, Measure::Pcs];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Ld => "ld",
            Measure::Hd => "hd",
            Measure::Pcs => "pcs",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ld" => Ok(Measure::Ld),
            "hd" => Ok(Measure::Hd),
            "pcs" => Ok(Measure::Pcs),
            other => Err(Error::InvalidConfig(format!(
                "unknown measure '{other}' (expected ld, hd or pcs)"
            ))),
        }
    }
}

/// Type I uses each measure's direct empirical objective; Type II uses
/// `Σ C(δ*) / (δ* + 1)` for every measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorType {
    TypeI,
    TypeII,
}

impl EstimatorType {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorType::TypeI => "1",
            EstimatorType::TypeII => "2",
        }
    }
}

impl fmt::Display for EstimatorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "i" | "type1" | "typei" => Ok(EstimatorType::TypeI),
            "2" | "ii" | "type2" | "typeii" => Ok(EstimatorType::TypeII),
            other => Err(Error::InvalidConfig(format!(
                "unknown estimator type '{other}' (expected 1 or 2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceSpec {
    pub measure: Measure,
    pub estimator: EstimatorType,
    pub trim_low: f64,
    pub trim_high: f64,
    pub beta: f64,
}

impl Default for DivergenceSpec {
    fn default() -> Self {
        Self {
            measure: Measure::Ld,
            estimator: EstimatorType::TypeI,
            trim_low: 0.05,
            trim_high: 0.10,
            beta: 0.2,
        }
    }
}

impl DivergenceSpec {
    /// Plain maximum-likelihood scoring: LD, Type I, no trimming.
    pub fn maximum_likelihood() -> Self {
        Self {
            measure: Measure::Ld,
            estimator: EstimatorType::TypeI,
            trim_low: 0.0,
            trim_high: 0.0,
            beta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| f.is_finite() && (0.0..1.0).contains(&f);
        if !frac_ok(self.trim_low) || !frac_ok(self.trim_high) {
            return Err(Error::InvalidConfig(format!(
                "trim fractions must lie in [0, 1), got ({}, {})",
                self.trim_low, self.trim_high
            )));
        }
        if self.trim_low + self.trim_high >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "trim fractions sum to {} but must be below 1",
                self.trim_low + self.trim_high
            )));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn trims(&self) -> bool {
        self.trim_low > 0.0 || self.trim_high > 0.0
    }

    /// Whether residuals are rescaled before scoring. Type I LD scores log
    /// densities directly, so rescaling never applies there.
    pub fn rescales(&self) -> bool {
        !(self.measure == Measure::Ld && self.estimator == EstimatorType::TypeI)
    }

    /// Whether scoring needs a density estimate of the test utterance.
    /// Only untrimmed Type I LD can work from the empirical distribution
    /// alone; trimming selects frames by residual, which involves `g`.
    pub fn needs_test_density(&self) -> bool {
        self.rescales() || self.trims()
    }
}

/// Residuals at the test frames and the subset `B` still in play.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    residuals: Vec<f64>,
    kept: Vec<usize>,
}

impl ResidualSet {
    pub fn new(residuals: Vec<f64>) -> Result<Self> {
        if let Some(bad) = residuals.iter().find(|r| !(r.is_finite() && **r >= -1.0)) {
            return Err(Error::InvalidInput(format!("residual {bad} is not a finite value >= -1")));
        }
        let kept = (0..residuals.len()).collect();
        Ok(Self { residuals, kept })
    }

    pub fn with_kept(residuals: Vec<f64>, mut kept: Vec<usize>) -> Result<Self> {
        let mut set = Self::new(residuals)?;
        kept.sort_unstable();
        kept.dedup();
        if kept.last().is_some_and(|&i| i >= set.residuals.len()) {
            return Err(Error::InvalidInput("kept index out of range".into()));
        }
        set.kept = kept;
        Ok(set)
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    /// Kept indices in ascending order.
    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn kept_residuals(&self) -> impl Iterator<Item = f64> + '_ {
        self.kept.iter().map(|&i| self.residuals[i])
    }
}

/// `exp(clamp(log g - log f)) - 1`.
pub fn residual_from_logs(log_g: f64, log_f: f64) -> f64 {
    let diff = log_g - log_f;
    let diff = if diff.is_nan() {
        // both -inf (or both +inf): treat the densities as equal
        0.0
    } else {
        diff.clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP)
    };
    diff.exp() - 1.0
}

pub fn residuals_from_logs(log_g: &[f64], log_f: &[f64]) -> Result<ResidualSet> {
    if log_g.len() != log_f.len() {
        return Err(Error::DimensionMismatch {
            expected: log_g.len(),
            found: log_f.len(),
        });
    }
    ResidualSet::new(
        log_g
            .iter()
            .zip(log_f)
            .map(|(g, f)| residual_from_logs(*g, *f))
            .collect(),
    )
}

/// Pearson residuals of `g` relative to `f` at every frame.
pub fn pearson_residuals(g: &GmmModel, f: &GmmModel, frames: &FeatureMatrix) -> Result<ResidualSet> {
    let log_g = g.log_densities(frames)?;
    let log_f = f.log_densities(frames)?;
    residuals_from_logs(&log_g, &log_f)
}


/// `δ* = sign(δ) |δ|^β` with `sign(0) = +1`; `kept` is untouched.
pub fn rescale(residuals: &ResidualSet, beta: f64) -> ResidualSet {
    let rescaled = residuals
        .residuals
        .iter()
        .map(|&d| {
            let mag = d.abs().powf(beta);
            if d >= 0.0 {
                mag
            } else {
                -mag
            }
        })
        .collect();
    ResidualSet {
        residuals: rescaled,
        kept: residuals.kept.clone(),
    }
}

/// Drops `floor(low·M)` smallest and `floor(high·M)` largest kept residuals,
/// where `M` is the number currently kept.
///
/// Residuals are ranked by value with ties broken by frame index, so among
/// equal values the lowest indices go first at the low end and the highest
/// indices go first at the high end.
pub fn trim(residuals: &ResidualSet, low_frac: f64, high_frac: f64) -> Result<ResidualSet> {
    let frac_ok = |f: f64| f.is_finite() && (0.0..1.0).contains(&f);
    if !frac_ok(low_frac) || !frac_ok(high_frac) || low_frac + high_frac >= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "invalid trim fractions ({low_frac}, {high_frac})"
        )));
    }
    let m = residuals.kept.len();
    let n_low = (low_frac * m as f64).floor() as usize;
    let n_high = (high_frac * m as f64).floor() as usize;
    if n_low + n_high >= m {
        return Err(Error::InvalidInput(format!(
            "trimming {n_low} low and {n_high} high residuals leaves none of {m}"
        )));
    }
    let mut ranked = residuals.kept.clone();
    ranked.sort_by(|&a, &b| {
        residuals.residuals[a]
            .total_cmp(&residuals.residuals[b])
            .then(a.cmp(&b))
    });
    let mut kept = ranked[n_low..m - n_high].to_vec();
    kept.sort_unstable();
    Ok(ResidualSet {
        residuals: residuals.residuals.clone(),
        kept,
    })
}

fn check_domain(delta: f64) -> Result<()> {
    if delta.is_nan() || delta < -1.0 {
        return Err(Error::InvalidInput(format!("residual {delta} lies below -1")));
    }
    Ok(())
}

/// Untrimmed `C(δ)` of the measure.
///
/// LD: `(δ+1) ln(δ+1) - δ` (equal to 1 at δ = -1); HD: `2(√(δ+1) - 1)²`;
/// PCS: `δ²/2`.
pub fn c_function(measure: Measure, delta: f64) -> Result<f64> {
    check_domain(delta)?;
    Ok(c_unchecked(measure, delta))
}

fn c_unchecked(measure: Measure, delta: f64) -> f64 {
    match measure {
        Measure::Ld => {
            if delta == -1.0 {
                1.0
            } else {
                (delta + 1.0) * delta.ln_1p() - delta
            }
        }
        Measure::Hd => {
            let r = (delta + 1.0).sqrt() - 1.0;
            2.0 * r * r
        }
        Measure::Pcs => 0.5 * delta * delta,
    }
}

/// Residual adjustment function `A(δ)`.
///
/// LD: `δ`; HD: `2(√(δ+1) - 1)`; PCS: `δ + δ²/2`.
pub fn raf(measure: Measure, delta: f64) -> Result<f64> {
    check_domain(delta)?;
    Ok(raf_unchecked(measure, delta))
}

fn raf_unchecked(measure: Measure, delta: f64) -> f64 {
    match measure {
        Measure::Ld => delta,
        Measure::Hd => 2.0 * ((delta + 1.0).sqrt() - 1.0),
        Measure::Pcs => delta + 0.5 * delta * delta,
    }
}

/// A measure whose `C` and `A` are zeroed outside the open interval
/// `(lower, upper)` of residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModifiedMeasure {
    pub measure: Measure,
    pub lower: f64,
    pub upper: f64,
}

impl ModifiedMeasure {
    pub fn new(measure: Measure, lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower < -1.0 || lower >= upper {
            return Err(Error::InvalidInput(format!(
                "trimming interval ({lower}, {upper}) must satisfy -1 <= lower < upper"
            )));
        }
        Ok(Self {
            measure,
            lower,
            upper,
        })
    }

    fn inside(&self, delta: f64) -> bool {
        delta > self.lower && delta < self.upper
    }

    pub fn c(&self, delta: f64) -> Result<f64> {
        check_domain(delta)?;
        Ok(if self.inside(delta) {
            c_unchecked(self.measure, delta)
        } else {
            0.0
        })
    }

    pub fn raf(&self, delta: f64) -> Result<f64> {
        check_domain(delta)?;
        Ok(if self.inside(delta) {
            raf_unchecked(self.measure, delta)
        } else {
            0.0
        })
    }
}

/// Evenly spaced residual grid `start, start + step, …` up to `end`
/// (inclusive, within rounding).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            start: -0.99,
            end: 5.0,
            step: 0.01,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.start.is_finite() && self.end.is_finite() && self.step.is_finite()) {
            return Err(Error::InvalidConfig("grid bounds must be finite".into()));
        }
        if self.start < -1.0 {
            return Err(Error::InvalidConfig(format!(
                "grid starts at {} which is below -1",
                self.start
            )));
        }
        if self.step <= 0.0 || self.end < self.start {
            return Err(Error::InvalidConfig(format!(
                "grid needs step > 0 and end >= start, got [{}, {}] step {}",
                self.start, self.end, self.step
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.end - self.start) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid values. When `1/step` is an integer `n` and `start` a multiple of
    /// `step`, points are computed as `k / n` so values like 0 and 3 are exact.
    pub fn points(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let count = self.len();
        let inv = 1.0 / self.step;
        let n = inv.round();
        let k0 = (self.start * n).round();
        let exact = (inv - n).abs() < 1e-9 * n && (k0 / n - self.start).abs() < 1e-12;
        Ok((0..count)
            .map(|i| {
                if exact {
                    (k0 + i as f64) / n
                } else {
                    self.start + i as f64 * self.step
                }
            })
            .collect())
    }
}

/// `(δ, A(δ))` pairs for one measure.
pub fn raf_curve(measure: Measure, grid: &GridSpec) -> Result<Vec<(f64, f64)>> {
    grid.points()?
        .into_iter()
        .map(|d| raf(measure, d).map(|a| (d, a)))
        .collect()
}

/// One row per grid point: `[δ, A_LD, A_HD, A_PCS]`.
pub fn raf_table(grid: &GridSpec) -> Result<Vec<[f64; 4]>> {
    grid.points()?
        .into_iter()
        .map(|d| {
            Ok([
                d,
                raf(Measure::Ld, d)?,
                raf(Measure::Hd, d)?,
                raf(Measure::Pcs, d)?,
            ])
        })
        .collect()
}

/// CSV with header `delta,A_LD,A_HD,A_PCS`, shortest round-trip decimals.
pub fn write_raf_csv<W: Write>(out: &mut W, grid: &GridSpec) -> Result<()> {
    let rows = raf_table(grid)?;
    let io = |e| Error::io("<raf csv>", e);
    writeln!(out, "delta,A_LD,A_HD,A_PCS").map_err(io)?;
    for [d, ld, hd, pcs] in rows {
        writeln!(out, "{d},{ld},{hd},{pcs}").map_err(io)?;
    }
    Ok(())
}

fn require_kept(residuals: &ResidualSet) -> Result<()> {
    if residuals.kept.is_empty() {
        return Err(Error::InvalidInput("no residuals left to score".into()));
    }
    Ok(())
}

/// Type I objective over the kept frames.
///
/// LD: `Σ log f(x_i)`; HD: `Σ 1/√(δ*_i + 1)`; PCS: `-Σ (δ*_i + 1)`.
/// `residuals` must already be rescaled (except for LD) and trimmed.
pub fn objective_type1(spec: &DivergenceSpec, residuals: &ResidualSet, log_f: &[f64]) -> Result<f64> {
    require_kept(residuals)?;
    match spec.measure {
        Measure::Ld => {
            if log_f.len() != residuals.len() {
                return Err(Error::DimensionMismatch {
                    expected: residuals.len(),
                    found: log_f.len(),
                });
            }
            Ok(residuals.kept.iter().map(|&i| log_f[i]).sum())
        }
        Measure::Hd => Ok(residuals
            .kept_residuals()
            .map(|d| 1.0 / (d + 1.0).max(RATIO_FLOOR).sqrt())
            .sum()),
        Measure::Pcs => Ok(-residuals.kept_residuals().map(|d| d + 1.0).sum::<f64>()),
    }
}

/// `C(δ) / (δ + 1)` with the divisor floored at [`RATIO_FLOOR`]; rearranged
/// so large residuals do not overflow.
pub fn type2_term(measure: Measure, delta: f64) -> f64 {
    let r = delta + 1.0;
    if r < RATIO_FLOOR {
        return c_unchecked(measure, delta) / RATIO_FLOOR;
    }
    match measure {
        Measure::Ld => delta.ln_1p() - delta / r,
        Measure::Hd => {
            let q = 1.0 - 1.0 / r.sqrt();
            2.0 * q * q
        }
        Measure::Pcs => 0.5 * delta * (delta / r),
    }
}

/// Type II objective `-Σ C(δ*_i) / (δ*_i + 1)` over the kept frames.
pub fn objective_type2(spec: &DivergenceSpec, residuals: &ResidualSet) -> Result<f64> {
    require_kept(residuals)?;
    Ok(-residuals
        .kept_residuals()
        .map(|d| type2_term(spec.measure, d))
        .sum::<f64>())
}
