//! Piecewise-linear temporal potentials on the unit interval.
//!
//! A [`SegmentSet`] holds the coefficients of an `n`-piece linear function of
//! normalized time: per-segment slopes and intercepts plus the segment
//! endpoints partitioning `[0, 1]`. This module evaluates the raw function,
//! its temperature-smoothed blend across segment boundaries, its closed-form
//! integral, and the integral-normalized value whose temporal mean is pinned
//! to a target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible distance between consecutive segment endpoints.
pub const MIN_ENDPOINT_GAP: f64 = 1e-4;

/// Rounding slack when validating the minimum gap; projections that land
/// exactly on the gap may round one ulp under it.
const GAP_SLACK: f64 = 1e-12;

/// Tolerance on `sum(sizes) == 1` when converting interval sizes to endpoints.
pub const SIZE_SUM_TOLERANCE: f64 = 1e-12;

/// Exponent clamp for the logistic blend weights; `temperature * distance`
/// beyond this saturates.
const EXP_CLAMP: f64 = 50.0;

/// `1 / (1 + exp(z))` without overflow for any finite `z`.
fn inv_one_plus_exp(z: f64) -> f64 {
    let z = z.clamp(-EXP_CLAMP, EXP_CLAMP);
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Coefficients of an `n`-piece linear function on `[0, 1]`.
///
/// Endpoints are strictly increasing with `endpoints[0] == 0` and
/// `endpoints[n] == 1`; segment `i` owns the half-open interval
/// `[endpoints[i], endpoints[i+1])`, except the last segment which also owns
/// `1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSegmentSet", into = "RawSegmentSet")]
pub struct SegmentSet {
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
    endpoints: Vec<f64>,
}

/// Wire form of [`SegmentSet`]: `{"m": [...], "b": [...], "t": [...]}`.
#[derive(Serialize, Deserialize)]
struct RawSegmentSet {
    m: Vec<f64>,
    b: Vec<f64>,
    t: Vec<f64>,
}

impl TryFrom<RawSegmentSet> for SegmentSet {
    type Error = Error;

    fn try_from(raw: RawSegmentSet) -> Result<Self> {
        SegmentSet::new(raw.m, raw.b, raw.t)
    }
}

impl From<SegmentSet> for RawSegmentSet {
    fn from(set: SegmentSet) -> Self {
        RawSegmentSet {
            m: set.slopes,
            b: set.intercepts,
            t: set.endpoints,
        }
    }
}

impl SegmentSet {
    /// Validates and builds a segment set.
    ///
    /// Requires `slopes.len() == intercepts.len() == n >= 1`,
    /// `endpoints.len() == n + 1`, `endpoints[0] == 0`, `endpoints[n] == 1`,
    /// all entries finite, and consecutive endpoints at least
    /// [`MIN_ENDPOINT_GAP`] apart.
    pub fn new(slopes: Vec<f64>, intercepts: Vec<f64>, endpoints: Vec<f64>) -> Result<Self> {
        let n = slopes.len();
        if n == 0 {
            return Err(Error::Domain("segment count must be at least 1".into()));
        }
        if intercepts.len() != n {
            return Err(Error::Contract(format!(
                "slope/intercept length mismatch: {} vs {}",
                n,
                intercepts.len()
            )));
        }
        if endpoints.len() != n + 1 {
            return Err(Error::Contract(format!(
                "expected {} endpoints for {} segments, got {}",
                n + 1,
                n,
                endpoints.len()
            )));
        }
        for (name, v) in [("slope", &slopes), ("intercept", &intercepts), ("endpoint", &endpoints)]
        {
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("non-finite {name}: {bad}")));
            }
        }
        if endpoints[0] != 0.0 {
            return Err(Error::Domain(format!(
                "first endpoint must be exactly 0, got {}",
                endpoints[0]
            )));
        }
        if endpoints[n] != 1.0 {
            return Err(Error::Domain(format!(
                "last endpoint must be exactly 1, got {}",
                endpoints[n]
            )));
        }
        for i in 0..n {
            let gap = endpoints[i + 1] - endpoints[i];
            if gap < MIN_ENDPOINT_GAP - GAP_SLACK {
                return Err(Error::Domain(format!(
                    "endpoint gap {} between t[{}] and t[{}] is below the minimum {}",
                    gap,
                    i,
                    i + 1,
                    MIN_ENDPOINT_GAP
                )));
            }
        }
        Ok(SegmentSet {
            slopes,
            intercepts,
            endpoints,
        })
    }

    /// Single segment with the given line coefficients over all of `[0, 1]`.
    pub fn single(slope: f64, intercept: f64) -> Self {
        SegmentSet::new(vec![slope], vec![intercept], vec![0.0, 1.0])
            .expect("single segment over [0,1] is always valid")
    }

    /// `n` equal-length segments, all with zero slope and intercept.
    pub fn flat_uniform(n: usize) -> Result<Self> {
        let sizes = vec![1.0 / n as f64; n];
        let endpoints = endpoints_from_sizes(&sizes)?;
        SegmentSet::new(vec![0.0; n], vec![0.0; n], endpoints)
    }

    pub fn segment_count(&self) -> usize {
        self.slopes.len()
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn endpoints(&self) -> &[f64] {
        &self.endpoints
    }

    /// Interior endpoints `t[1] .. t[n-1]` (the trainable ones).
    pub fn interior_endpoints(&self) -> &[f64] {
        &self.endpoints[1..self.endpoints.len() - 1]
    }

    /// Index of the segment owning `tau`.
    ///
    /// Segment `i` owns `[t[i], t[i+1])`; the last segment also owns `1`.
    pub fn piece_index(&self, tau: f64) -> Result<usize> {
        check_tau(tau)?;
        let n = self.segment_count();
        if tau >= 1.0 {
            return Ok(n - 1);
        }
        // partition_point returns the count of endpoints <= tau; endpoints[0] = 0 <= tau.
        let idx = self.endpoints.partition_point(|&t| t <= tau);
        Ok((idx - 1).min(n - 1))
    }

    /// Value of the line owning `tau`: `m[i] * tau + b[i]`.
    pub fn eval(&self, tau: f64) -> Result<f64> {
        let i = self.piece_index(tau)?;
        Ok(self.line_value(i, tau))
    }

    /// Value of segment `i`'s line extended to arbitrary `x`.
    pub fn line_value(&self, i: usize, x: f64) -> f64 {
        self.slopes[i] * x + self.intercepts[i]
    }

    /// Logistic blend weights toward the neighbours of the segment owning `tau`.
    pub fn smoothing_weights(&self, tau: f64, temperature: f64) -> Result<SmoothingWeights> {
        check_temperature(temperature)?;
        let i = self.piece_index(tau)?;
        let n = self.segment_count();
        let left = if i == 0 {
            0.0
        } else {
            inv_one_plus_exp(temperature * (tau - self.endpoints[i]))
        };
        let right = if i == n - 1 {
            0.0
        } else {
            inv_one_plus_exp(temperature * (self.endpoints[i + 1] - tau))
        };
        Ok(SmoothingWeights {
            left,
            right,
            piece: i,
        })
    }

    /// Temperature-smoothed value: the owning line blended with its
    /// neighbours, converging to [`SegmentSet::eval`] as the temperature
    /// grows.
    pub fn eval_smoothed(&self, tau: f64, temperature: f64) -> Result<f64> {
        let w = self.smoothing_weights(tau, temperature)?;
        let i = w.piece;
        let mut value = (1.0 - w.left - w.right) * self.line_value(i, tau);
        if w.left > 0.0 {
            value += w.left * self.line_value(i - 1, tau);
        }
        if w.right > 0.0 {
            value += w.right * self.line_value(i + 1, tau);
        }
        Ok(value)
    }

    /// Closed-form integral over `[0, 1]`:
    /// `1/2 * sum_i m[i] (t[i+1]^2 - t[i]^2) + sum_i b[i] (t[i+1] - t[i])`.
    pub fn integral(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.segment_count() {
            let (lo, hi) = (self.endpoints[i], self.endpoints[i + 1]);
            acc += 0.5 * self.slopes[i] * (hi * hi - lo * lo) + self.intercepts[i] * (hi - lo);
        }
        acc
    }

    /// Integral-normalized value: the (optionally smoothed) value shifted so
    /// the temporal mean over `[0, 1]` equals `mean_target`.
    ///
    /// The shift always uses the closed-form unsmoothed integral; at finite
    /// temperature the realized smoothed mean differs from `mean_target` by
    /// `O(exp(-T * gap))`.
    pub fn eval_normalized(
        &self,
        mean_target: f64,
        tau: f64,
        temperature: Option<f64>,
    ) -> Result<f64> {
        let value = match temperature {
            Some(t) => self.eval_smoothed(tau, t)?,
            None => self.eval(tau)?,
        };
        Ok(value - self.integral() + mean_target)
    }

    /// Jump of the function across interior endpoint `t[i]`
    /// (`i` in `1..n`): right line minus left line evaluated there.
    pub fn jump_at(&self, i: usize) -> f64 {
        debug_assert!(i >= 1 && i < self.segment_count());
        self.line_value(i, self.endpoints[i]) - self.line_value(i - 1, self.endpoints[i])
    }
}

/// Blend weights toward the two neighbouring segments for one query time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingWeights {
    /// Weight toward the segment left of the owner; `0` for the first segment.
    pub left: f64,
    /// Weight toward the segment right of the owner; `0` for the last segment.
    pub right: f64,
    /// Index of the owning segment.
    pub piece: usize,
}

/// Cumulative endpoints from positive interval sizes summing to one.
///
/// Returns `t` with `t[0] = 0`, `t[i] = t[i-1] + sizes[i-1]`, and the final
/// endpoint snapped to exactly `1`.
pub fn endpoints_from_sizes(sizes: &[f64]) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return Err(Error::Domain("at least one interval size required".into()));
    }
    let mut sum = 0.0;
    for (i, &s) in sizes.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::Domain(format!(
                "interval size s[{i}] = {s} must be positive"
            )));
        }
        sum += s;
    }
    if (sum - 1.0).abs() > SIZE_SUM_TOLERANCE {
        return Err(Error::Domain(format!(
            "interval sizes sum to {sum}, expected 1 within {SIZE_SUM_TOLERANCE}"
        )));
    }
    let mut endpoints = Vec::with_capacity(sizes.len() + 1);
    endpoints.push(0.0);
    let mut acc = 0.0;
    for &s in sizes {
        acc += s;
        endpoints.push(acc);
    }
    *endpoints.last_mut().unwrap() = 1.0;
    Ok(endpoints)
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!(
            "query time {tau} outside the unit interval"
        )));
    }
    Ok(())
}

pub(crate) fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!(
            "temperature {temperature} must be positive"
        )));
    }
    Ok(())
}
