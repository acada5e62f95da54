//! Independent brute-force references used by tests and the verification
//! command: central finite differences, midpoint quadrature, and a direct
//! quadruple-loop convolution.
//!
//! Nothing here shares code with the paths it checks.

use crate::error::{Error, Result};
use crate::tensor::{Tensor3, Tensor4};

/// Settings for finite-difference gradient checks.
#[derive(Debug, Clone, Copy)]
pub struct FiniteDiffSpec {
    /// Central-difference step.
    pub step: f64,
    /// Relative tolerance for agreement.
    pub rel_tol: f64,
    /// Differences below this absolute floor always pass.
    pub abs_floor: f64,
}

impl Default for FiniteDiffSpec {
    fn default() -> Self {
        FiniteDiffSpec {
            step: 1e-6,
            rel_tol: 1e-4,
            abs_floor: 1e-8,
        }
    }
}

impl FiniteDiffSpec {
    /// Same settings with a different relative tolerance.
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    /// Normalized disagreement between an analytic and a numeric value.
    /// Agreement holds when the result is at most `rel_tol`.
    pub fn disagreement(&self, analytic: f64, numeric: f64) -> f64 {
        let scale = analytic
            .abs()
            .max(numeric.abs())
            .max(self.abs_floor / self.rel_tol);
        (analytic - numeric).abs() / scale
    }

    /// Largest normalized disagreement across two gradient vectors.
    pub fn max_disagreement(&self, analytic: &[f64], numeric: &[f64]) -> f64 {
        assert_eq!(analytic.len(), numeric.len());
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| self.disagreement(a, n))
            .fold(0.0, f64::max)
    }
}

/// Central-difference gradient of a scalar function of a parameter vector.
pub fn fd_gradient<F>(f: F, params: &[f64], spec: &FiniteDiffSpec) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut grad = Vec::with_capacity(params.len());
    let mut probe = params.to_vec();
    for i in 0..params.len() {
        probe[i] = params[i] + spec.step;
        let up = f(&probe)?;
        probe[i] = params[i] - spec.step;
        let down = f(&probe)?;
        probe[i] = params[i];
        let slope = (up - down) / (2.0 * spec.step);
        if !slope.is_finite() {
            return Err(Error::Oracle(format!(
                "non-finite finite difference at coordinate {i}: f+ = {up}, f- = {down}"
            )));
        }
        grad.push(slope);
    }
    Ok(grad)
}

/// Midpoint-rule integral of `f` over `[0, 1]`.
///
/// Midpoints never coincide with the cell boundaries, so piecewise-linear
/// integrands are integrated exactly on every cell that does not straddle a
/// breakpoint.
pub fn quad_integral<F>(f: F, points: usize) -> f64
where
    F: Fn(f64) -> f64,
{
    let h = 1.0 / points as f64;
    let mut acc = 0.0;
    for i in 0..points {
        acc += f((i as f64 + 0.5) * h);
    }
    acc * h
}

/// Default cell count for [`quad_integral`].
pub const QUAD_POINTS: usize = 100_000;

/// Direct four-loop 2D convolution with zero padding.
///
/// `kernel` is `O x C x kH x kW`, `input` is `C x H x W`; iterates input
/// pixels and scatters their contributions, so the loop structure differs
/// from the gather-style path it cross-checks.
pub fn naive_conv2d(
    kernel: &Tensor4,
    input: &Tensor3,
    stride: usize,
    pad: (usize, usize),
) -> Result<Tensor3> {
    if kernel.in_channels != input.channels {
        return Err(Error::Contract(format!(
            "kernel expects {} input channels, input has {}",
            kernel.in_channels, input.channels
        )));
    }
    if stride == 0 {
        return Err(Error::Contract("stride must be positive".into()));
    }
    let (ph, pw) = pad;
    let padded_h = input.height + 2 * ph;
    let padded_w = input.width + 2 * pw;
    if padded_h < kernel.kernel_h || padded_w < kernel.kernel_w {
        return Err(Error::Contract(format!(
            "kernel {}x{} larger than padded input {}x{}",
            kernel.kernel_h, kernel.kernel_w, padded_h, padded_w
        )));
    }
    let out_h = (padded_h - kernel.kernel_h) / stride + 1;
    let out_w = (padded_w - kernel.kernel_w) / stride + 1;
    let mut out = Tensor3::zeros(kernel.out_channels, out_h, out_w);
    for c in 0..input.channels {
        for y in 0..input.height {
            for x in 0..input.width {
                let v = input.get(c, y, x);
                // Scatter this pixel into every output location whose window covers it.
                for ky in 0..kernel.kernel_h {
                    let num = y + ph;
                    if num < ky {
                        continue;
                    }
                    let oy_num = num - ky;
                    if oy_num % stride != 0 {
                        continue;
                    }
                    let oy = oy_num / stride;
                    if oy >= out_h {
                        continue;
                    }
                    for kx in 0..kernel.kernel_w {
                        let num = x + pw;
                        if num < kx {
                            continue;
                        }
                        let ox_num = num - kx;
                        if ox_num % stride != 0 {
                            continue;
                        }
                        let ox = ox_num / stride;
                        if ox >= out_w {
                            continue;
                        }
                        for o in 0..kernel.out_channels {
                            let w = kernel.get(o, c, ky, kx);
                            *out.get_mut(o, oy, ox) += w * v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_gradient_of_quadratic() {
        let spec = FiniteDiffSpec::default();
        let grad = fd_gradient(
            |p| Ok(p.iter().map(|x| x * x).sum()),
            &[1.0, 2.0],
            &spec,
        )
        .unwrap();
        assert!((grad[0] - 2.0).abs() < 1e-8);
        assert!((grad[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn fd_gradient_of_constant_is_zero() {
        let spec = FiniteDiffSpec::default();
        let grad = fd_gradient(|_| Ok(42.0), &[0.3, -0.7, 1.1], &spec).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn fd_gradient_reports_bad_coordinate() {
        let spec = FiniteDiffSpec::default();
        let err = fd_gradient(
            |p| Ok(if p[1] > 0.5 { f64::NAN } else { 0.0 }),
            &[0.0, 0.5],
            &spec,
        )
        .unwrap_err();
        assert!(err.to_string().contains("coordinate 1"));
    }

    #[test]
    fn quad_integral_of_simple_functions() {
        assert!((quad_integral(|_| 1.0, 1000) - 1.0).abs() < 1e-12);
        assert!((quad_integral(|t| t, QUAD_POINTS) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn naive_conv_identity_kernel() {
        let input = Tensor3::from_fn(1, 3, 3, |_, y, x| (y * 3 + x) as f64);
        let kernel = Tensor4::from_fn(1, 1, 1, 1, |_, _, _, _| 1.0);
        let out = naive_conv2d(&kernel, &input, 1, (0, 0)).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn naive_conv_ones_kernel_center() {
        let input = Tensor3::from_fn(1, 3, 3, |_, _, _| 1.0);
        let kernel = Tensor4::from_fn(1, 1, 3, 3, |_, _, _, _| 1.0);
        let out = naive_conv2d(&kernel, &input, 1, (0, 0)).unwrap();
        assert_eq!(out.height, 1);
        assert_eq!(out.width, 1);
        assert_eq!(out.get(0, 0, 0), 9.0);
        // Same-padded: the center still sums all nine ones.
        let padded = naive_conv2d(&kernel, &input, 1, (1, 1)).unwrap();
        assert_eq!(padded.height, 3);
        assert_eq!(padded.get(0, 1, 1), 9.0);
        assert_eq!(padded.get(0, 0, 0), 4.0);
    }

    #[test]
    fn naive_conv_rejects_channel_mismatch() {
        let input = Tensor3::zeros(2, 3, 3);
        let kernel = Tensor4::zeros(1, 3, 1, 1);
        assert!(naive_conv2d(&kernel, &input, 1, (0, 0)).is_err());
    }
}
