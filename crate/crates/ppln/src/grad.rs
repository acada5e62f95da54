//! Hand-derived backward passes for the evaluation paths in [`crate::plf`],
//! plus a reverse-accumulation driver for layer chains.
//!
//! Gradients are written out analytically per operation rather than produced
//! by a differentiation engine; the sparsity structure of each record is part
//! of the contract and is asserted by tests.

use crate::error::{Error, Result};
use crate::plf::{check_tau, check_temperature, SegmentSet};

/// Partial derivatives of a scalar with respect to one segment set and its
/// mean target.
///
/// Shapes mirror the parameter object: `d_slopes` and `d_intercepts` have one
/// entry per segment, `d_endpoints` one entry per *interior* endpoint
/// (`t[1] .. t[n-1]`; the boundary endpoints are pinned to 0 and 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub d_slopes: Vec<f64>,
    pub d_intercepts: Vec<f64>,
    pub d_endpoints: Vec<f64>,
    pub d_target_mean: f64,
}

impl GradientRecord {
    /// All-zero record shaped like `theta`.
    pub fn zeros(theta: &SegmentSet) -> Self {
        let n = theta.segment_count();
        GradientRecord {
            d_slopes: vec![0.0; n],
            d_intercepts: vec![0.0; n],
            d_endpoints: vec![0.0; n - 1],
            d_target_mean: 0.0,
        }
    }

    pub fn segment_count(&self) -> usize {
        self.d_slopes.len()
    }

    /// Accumulates `scale * other` into `self`, rejecting shape mismatches
    /// and non-finite contributions.
    pub fn add_scaled(&mut self, other: &GradientRecord, scale: f64) -> Result<()> {
        if other.d_slopes.len() != self.d_slopes.len()
            || other.d_endpoints.len() != self.d_endpoints.len()
        {
            return Err(Error::Contract(format!(
                "gradient shape mismatch: {} vs {} segments",
                self.d_slopes.len(),
                other.d_slopes.len()
            )));
        }
        if !scale.is_finite() {
            return Err(Error::Contract(format!("non-finite gradient scale {scale}")));
        }
        for (dst, src) in self.d_slopes.iter_mut().zip(&other.d_slopes) {
            *dst += scale * src;
        }
        for (dst, src) in self.d_intercepts.iter_mut().zip(&other.d_intercepts) {
            *dst += scale * src;
        }
        for (dst, src) in self.d_endpoints.iter_mut().zip(&other.d_endpoints) {
            *dst += scale * src;
        }
        self.d_target_mean += scale * other.d_target_mean;
        if !self.is_finite() {
            return Err(Error::Contract(
                "non-finite value accumulated into gradient record".into(),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.d_slopes.iter().all(|g| g.is_finite())
            && self.d_intercepts.iter().all(|g| g.is_finite())
            && self.d_endpoints.iter().all(|g| g.is_finite())
            && self.d_target_mean.is_finite()
    }

    /// Infinity norm over the trainable coefficients (slopes, intercepts,
    /// interior endpoints).
    pub fn inf_norm(&self) -> f64 {
        self.d_slopes
            .iter()
            .chain(&self.d_intercepts)
            .chain(&self.d_endpoints)
            .fold(0.0, |acc, g| acc.max(g.abs()))
    }

    /// Flattened view in the order slopes, intercepts, interior endpoints.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.d_slopes.len() + self.d_intercepts.len() + self.d_endpoints.len());
        out.extend_from_slice(&self.d_slopes);
        out.extend_from_slice(&self.d_intercepts);
        out.extend_from_slice(&self.d_endpoints);
        out
    }
}

/// Flattens a segment set's trainable coefficients in the order slopes,
/// intercepts, interior endpoints (matching [`GradientRecord::flatten`]).
pub fn pack_params(theta: &SegmentSet) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * theta.segment_count() - 1);
    out.extend_from_slice(theta.slopes());
    out.extend_from_slice(theta.intercepts());
    out.extend_from_slice(theta.interior_endpoints());
    out
}

/// Rebuilds a segment set from [`pack_params`] order.
pub fn unpack_params(segments: usize, flat: &[f64]) -> Result<SegmentSet> {
    if flat.len() != 3 * segments - 1 {
        return Err(Error::Contract(format!(
            "expected {} packed parameters for {} segments, got {}",
            3 * segments - 1,
            segments,
            flat.len()
        )));
    }
    let slopes = flat[..segments].to_vec();
    let intercepts = flat[segments..2 * segments].to_vec();
    let mut endpoints = Vec::with_capacity(segments + 1);
    endpoints.push(0.0);
    endpoints.extend_from_slice(&flat[2 * segments..]);
    endpoints.push(1.0);
    SegmentSet::new(slopes, intercepts, endpoints)
}

/// Gradient of the raw evaluation `theta.eval(tau)`.
///
/// One nonzero slope entry (value `tau`) and one nonzero intercept entry
/// (value `1`) at the owning segment; endpoints get exactly zero because the
/// raw value is locally constant in them.
pub fn grad_unsmoothed(theta: &SegmentSet, tau: f64) -> Result<GradientRecord> {
    let i = theta.piece_index(tau)?;
    let mut rec = GradientRecord::zeros(theta);
    rec.d_slopes[i] = tau;
    rec.d_intercepts[i] = 1.0;
    Ok(rec)
}

/// Gradient of the temperature-smoothed evaluation
/// `theta.eval_smoothed(tau, temperature)`.
///
/// The blend weights couple the owning segment's lines to its neighbours and
/// make the two boundary endpoints of the owning segment differentiable; the
/// weight derivatives are `T w (1 - w)` in overflow-safe form.
pub fn grad_smoothed(theta: &SegmentSet, tau: f64, temperature: f64) -> Result<GradientRecord> {
    check_tau(tau)?;
    check_temperature(temperature)?;
    let w = theta.smoothing_weights(tau, temperature)?;
    let i = w.piece;
    let n = theta.segment_count();
    let mut rec = GradientRecord::zeros(theta);

    let center = 1.0 - w.left - w.right;
    rec.d_slopes[i] = center * tau;
    rec.d_intercepts[i] = center;

    if i > 0 {
        rec.d_slopes[i - 1] = w.left * tau;
        rec.d_intercepts[i - 1] = w.left;
        // d w_left / d t[i] = T w (1 - w); t[i] is interior because i > 0.
        let dw = temperature * w.left * (1.0 - w.left);
        rec.d_endpoints[i - 1] =
            dw * (theta.line_value(i - 1, tau) - theta.line_value(i, tau));
    }
    if i < n - 1 {
        rec.d_slopes[i + 1] = w.right * tau;
        rec.d_intercepts[i + 1] = w.right;
        // d w_right / d t[i+1] = -T w (1 - w); t[i+1] is interior because i < n-1.
        let dw = -temperature * w.right * (1.0 - w.right);
        rec.d_endpoints[i] = dw * (theta.line_value(i + 1, tau) - theta.line_value(i, tau));
    }
    Ok(rec)
}

/// Gradient of the closed-form integral over `[0, 1]` with respect to the
/// coefficients.
pub fn grad_integral(theta: &SegmentSet) -> GradientRecord {
    let n = theta.segment_count();
    let t = theta.endpoints();
    let mut rec = GradientRecord::zeros(theta);
    for i in 0..n {
        rec.d_slopes[i] = 0.5 * (t[i + 1] * t[i + 1] - t[i] * t[i]);
        rec.d_intercepts[i] = t[i + 1] - t[i];
    }
    for j in 1..n {
        // t[j] is the upper limit of segment j-1 and the lower limit of segment j.
        rec.d_endpoints[j - 1] = theta.line_value(j - 1, t[j]) - theta.line_value(j, t[j]);
    }
    rec
}

/// Gradient of the integral-normalized raw evaluation
/// `theta.eval_normalized(target, tau, None)`.
///
/// Dense in slopes and intercepts (the raw one-hot entries minus each
/// segment's integral weight), nonzero in every interior endpoint through the
/// integral term, and `1` in the mean target.
pub fn grad_normalized(theta: &SegmentSet, tau: f64) -> Result<GradientRecord> {
    let mut rec = grad_unsmoothed(theta, tau)?;
    let integral = grad_integral(theta);
    rec.add_scaled(&integral, -1.0)?;
    rec.d_target_mean = 1.0;
    Ok(rec)
}

/// Gradient of the full evaluation path selected by the smoothing and
/// normalization switches; this is the record the fitting engine consumes.
pub fn grad_value(
    theta: &SegmentSet,
    tau: f64,
    temperature: Option<f64>,
    normalized: bool,
) -> Result<GradientRecord> {
    let mut rec = match temperature {
        Some(t) => grad_smoothed(theta, tau, t)?,
        None => grad_unsmoothed(theta, tau)?,
    };
    if normalized {
        let integral = grad_integral(theta);
        rec.add_scaled(&integral, -1.0)?;
        rec.d_target_mean = 1.0;
    }
    Ok(rec)
}

/// One link of an evaluated forward chain.
///
/// A link captures whatever forward state it needs; given the loss gradient
/// with respect to its output it produces the loss gradient with respect to
/// its own parameters (flattened) and with respect to its input.
pub trait ChainLink {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn backward(&self, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Reverse accumulation through a chain of evaluated links.
///
/// `links` must be in forward order and `upstream` must match the final
/// link's output shape; returns per-link parameter gradients in forward
/// order.
pub fn backprop_chain(links: &[&dyn ChainLink], upstream: &[f64]) -> Result<Vec<Vec<f64>>> {
    let Some(last) = links.last() else {
        return Err(Error::Contract("empty chain".into()));
    };
    if upstream.len() != last.output_len() {
        return Err(Error::Contract(format!(
            "upstream gradient has length {}, final link produces {}",
            upstream.len(),
            last.output_len()
        )));
    }
    for pair in links.windows(2) {
        if pair[0].output_len() != pair[1].input_len() {
            return Err(Error::Contract(format!(
                "chain shape mismatch: {} outputs feeding {} inputs",
                pair[0].output_len(),
                pair[1].input_len()
            )));
        }
    }
    let mut param_grads = vec![Vec::new(); links.len()];
    let mut flowing = upstream.to_vec();
    for (idx, link) in links.iter().enumerate().rev() {
        let (d_params, d_input) = link.backward(&flowing)?;
        if d_input.len() != link.input_len() {
            return Err(Error::Contract(format!(
                "link {idx} returned input gradient of length {}, expected {}",
                d_input.len(),
                link.input_len()
            )));
        }
        param_grads[idx] = d_params;
        flowing = d_input;
    }
    Ok(param_grads)
}
