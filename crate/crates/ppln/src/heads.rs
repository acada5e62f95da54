//! Coefficient-prediction heads: trainable maps from an input vector (or
//! image) to the piecewise-linear coefficients of one or more nodes, plus the
//! node forward pass itself.
//!
//! The dense head predicts, for one node with `n` segments from a `k`-vector:
//! slopes through `tanh`, intercepts linearly, interval sizes through a
//! softmax, and the target temporal mean either linearly from the input
//! ("regressed") or from an externally observed value. The convolutional head
//! does the same per output pixel with a channel-wise softmax over each
//! node's size channels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plf::{endpoints_from_sizes, SegmentSet, MIN_ENDPOINT_GAP};
use crate::tensor::{Tensor3, Tensor4};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged matrix rows");
        Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix size mismatch");
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// `self^T * g`, accumulated into `out`.
    pub fn add_transpose_matvec(&self, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            let gr = g[r];
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += gr * w;
            }
        }
    }
}

/// Trainable weights of one dense node: three `n x k` blocks for slopes,
/// intercepts, and interval sizes, plus a `k`-vector for the regressed mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeWeights {
    pub slope_w: Matrix,
    pub intercept_w: Matrix,
    pub size_w: Matrix,
    pub mean_w: Vec<f64>,
}

impl NodeWeights {
    pub fn zeros(segments: usize, input_dim: usize) -> Self {
        NodeWeights {
            slope_w: Matrix::zeros(segments, input_dim),
            intercept_w: Matrix::zeros(segments, input_dim),
            size_w: Matrix::zeros(segments, input_dim),
            mean_w: vec![0.0; input_dim],
        }
    }

    pub fn segments(&self) -> usize {
        self.slope_w.rows
    }

    pub fn input_dim(&self) -> usize {
        self.slope_w.cols
    }

    pub fn param_count(&self) -> usize {
        3 * self.segments() * self.input_dim() + self.input_dim()
    }

    fn validate(&self) -> Result<()> {
        let (n, k) = (self.segments(), self.input_dim());
        for (name, m) in [
            ("intercept", &self.intercept_w),
            ("size", &self.size_w),
        ] {
            if m.rows != n || m.cols != k {
                return Err(Error::Contract(format!(
                    "{name} weights are {}x{}, expected {n}x{k}",
                    m.rows, m.cols
                )));
            }
        }
        if self.mean_w.len() != k {
            return Err(Error::Contract(format!(
                "mean weights have length {}, expected {k}",
                self.mean_w.len()
            )));
        }
        let finite = self
            .slope_w
            .data()
            .iter()
            .chain(self.intercept_w.data())
            .chain(self.size_w.data())
            .chain(&self.mean_w)
            .all(|w| w.is_finite());
        if !finite {
            return Err(Error::Contract("non-finite node weight".into()));
        }
        Ok(())
    }

    /// Weight blocks in declared order: slopes, intercepts, sizes, mean.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.slope_w.data());
        out.extend_from_slice(self.intercept_w.data());
        out.extend_from_slice(self.size_w.data());
        out.extend_from_slice(&self.mean_w);
        out
    }

    pub fn from_flat(segments: usize, input_dim: usize, flat: &[f64]) -> Result<Self> {
        let block = segments * input_dim;
        if flat.len() != 3 * block + input_dim {
            return Err(Error::Contract(format!(
                "expected {} parameters for a {segments}x{input_dim} node, got {}",
                3 * block + input_dim,
                flat.len()
            )));
        }
        Ok(NodeWeights {
            slope_w: Matrix::from_vec(segments, input_dim, flat[..block].to_vec()),
            intercept_w: Matrix::from_vec(segments, input_dim, flat[block..2 * block].to_vec()),
            size_w: Matrix::from_vec(segments, input_dim, flat[2 * block..3 * block].to_vec()),
            mean_w: flat[3 * block..].to_vec(),
        })
    }
}

/// Seeded initialization, uniform in `[-1/sqrt(k), 1/sqrt(k)]` per block.
pub fn random_node_weights<R: Rng>(segments: usize, input_dim: usize, rng: &mut R) -> NodeWeights {
    let bound = 1.0 / (input_dim as f64).sqrt();
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
    };
    NodeWeights {
        slope_w: Matrix::from_vec(segments, input_dim, draw(segments * input_dim)),
        intercept_w: Matrix::from_vec(segments, input_dim, draw(segments * input_dim)),
        size_w: Matrix::from_vec(segments, input_dim, draw(segments * input_dim)),
        mean_w: draw(input_dim),
    }
}

/// Where a node's target temporal mean comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum MeanMode {
    /// Inner product of the mean weights with the input.
    Regressed,
    /// Externally supplied constant.
    Observed(f64),
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Remaps simplex sizes so each is at least [`MIN_ENDPOINT_GAP`].
///
/// Applied only when a predicted size would collapse below the representable
/// gap; affine in the sizes, preserving order and the unit sum.
fn floor_sizes(sizes: &mut [f64]) {
    let gap = MIN_ENDPOINT_GAP;
    if sizes.iter().any(|&s| s < gap) {
        let n = sizes.len() as f64;
        let scale = 1.0 - n * gap;
        for s in sizes.iter_mut() {
            *s = gap + scale * *s;
        }
    }
}

/// Predicts one node's coefficients from an input vector.
///
/// Slopes are `tanh(W x)` (so `|slope| < 1`), intercepts `W x`, interval
/// sizes a softmax over `W x`, and the mean target either `<w, x>` or the
/// observed constant.
pub fn predict_coefficients(
    weights: &NodeWeights,
    x: &[f64],
    mean_mode: &MeanMode,
) -> Result<(SegmentSet, f64)> {
    weights.validate()?;
    if x.len() != weights.input_dim() {
        return Err(Error::Contract(format!(
            "input has dimension {}, node expects {}",
            x.len(),
            weights.input_dim()
        )));
    }
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("non-finite input entry {bad}")));
    }
    let slopes: Vec<f64> = weights.slope_w.matvec(x).iter().map(|a| a.tanh()).collect();
    let intercepts = weights.intercept_w.matvec(x);
    let mut sizes = softmax(&weights.size_w.matvec(x));
    floor_sizes(&mut sizes);
    let endpoints = endpoints_from_sizes(&sizes)?;
    let theta = SegmentSet::new(slopes, intercepts, endpoints)?;
    let mean = match mean_mode {
        MeanMode::Regressed => weights.mean_w.iter().zip(x).map(|(w, v)| w * v).sum(),
        MeanMode::Observed(value) => {
            if !value.is_finite() {
                return Err(Error::Contract(format!(
                    "observed mean {value} must be finite"
                )));
            }
            *value
        }
    };
    Ok((theta, mean))
}

/// Full node forward pass: predict coefficients, then evaluate the
/// integral-normalized (optionally smoothed) potential at `tau`.
pub fn node_forward(
    weights: &NodeWeights,
    x: &[f64],
    tau: f64,
    temperature: Option<f64>,
    mean_mode: &MeanMode,
) -> Result<f64> {
    let (theta, mean) = predict_coefficients(weights, x, mean_mode)?;
    theta.eval_normalized(mean, tau, temperature)
}

/// Forward pass of a layer of nodes sharing one input; all nodes receive the
/// same query time.
pub fn layer_forward(
    nodes: &[NodeWeights],
    x: &[f64],
    tau: f64,
    temperature: Option<f64>,
    mean_mode: &MeanMode,
) -> Result<Vec<f64>> {
    let Some(first) = nodes.first() else {
        return Err(Error::Contract("layer has no nodes".into()));
    };
    if nodes.iter().any(|n| n.input_dim() != first.input_dim()) {
        return Err(Error::Contract(
            "layer nodes disagree on input dimension".into(),
        ));
    }
    nodes
        .iter()
        .map(|n| node_forward(n, x, tau, temperature, mean_mode))
        .collect()
}

/// Spatial padding for the convolutional head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding preserving the spatial size at stride 1 (odd kernels).
    Same,
    /// Explicit zero padding (rows, cols).
    Explicit(usize, usize),
}

/// Trainable kernels of a convolutional node layer with `nodes` output nodes
/// of `segments` pieces each.
///
/// The slope/intercept/size kernels have `nodes * segments` output channels;
/// the mean kernel has `nodes`. One output pixel of one node gets its
/// coefficients from the channel block `[node * segments, (node+1) * segments)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNodeWeights {
    pub slope_k: Tensor4,
    pub intercept_k: Tensor4,
    pub size_k: Tensor4,
    pub mean_k: Tensor4,
    pub nodes: usize,
    pub segments: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvNodeWeights {
    pub fn in_channels(&self) -> usize {
        self.slope_k.in_channels
    }

    pub fn param_count(&self) -> usize {
        self.slope_k.len() + self.intercept_k.len() + self.size_k.len() + self.mean_k.len()
    }

    fn validate(&self) -> Result<()> {
        let coef_ch = self.nodes * self.segments;
        for (name, k, ch) in [
            ("slope", &self.slope_k, coef_ch),
            ("intercept", &self.intercept_k, coef_ch),
            ("size", &self.size_k, coef_ch),
            ("mean", &self.mean_k, self.nodes),
        ] {
            if k.out_channels != ch {
                return Err(Error::Contract(format!(
                    "{name} kernel has {} output channels, expected {ch}",
                    k.out_channels
                )));
            }
            if k.in_channels != self.slope_k.in_channels
                || k.kernel_h != self.slope_k.kernel_h
                || k.kernel_w != self.slope_k.kernel_w
            {
                return Err(Error::Contract(format!(
                    "{name} kernel geometry disagrees with the slope kernel"
                )));
            }
        }
        if self.slope_k.kernel_h == 0 || self.slope_k.kernel_w == 0 {
            return Err(Error::Contract("kernel spatial dims must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Contract("stride must be positive".into()));
        }
        if self.padding == Padding::Same
            && (self.slope_k.kernel_h % 2 == 0 || self.slope_k.kernel_w % 2 == 0)
        {
            return Err(Error::Contract(
                "same padding requires odd kernel dimensions".into(),
            ));
        }
        Ok(())
    }

    pub fn pad(&self) -> (usize, usize) {
        match self.padding {
            Padding::Same => ((self.slope_k.kernel_h - 1) / 2, (self.slope_k.kernel_w - 1) / 2),
            Padding::Explicit(ph, pw) => (ph, pw),
        }
    }

    /// Kernels in declared order: slopes, intercepts, sizes, mean.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.slope_k.data());
        out.extend_from_slice(self.intercept_k.data());
        out.extend_from_slice(self.size_k.data());
        out.extend_from_slice(self.mean_k.data());
        out
    }

    pub fn from_flat(
        nodes: usize,
        segments: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: Padding,
        flat: &[f64],
    ) -> Result<Self> {
        let coef = nodes * segments * in_channels * kernel_h * kernel_w;
        let mean = nodes * in_channels * kernel_h * kernel_w;
        if flat.len() != 3 * coef + mean {
            return Err(Error::Contract(format!(
                "expected {} conv parameters, got {}",
                3 * coef + mean,
                flat.len()
            )));
        }
        let t4 = |offset: usize, ch: usize| {
            Tensor4::from_vec(
                ch,
                in_channels,
                kernel_h,
                kernel_w,
                flat[offset..offset + ch * in_channels * kernel_h * kernel_w].to_vec(),
            )
        };
        Ok(ConvNodeWeights {
            slope_k: t4(0, nodes * segments),
            intercept_k: t4(coef, nodes * segments),
            size_k: t4(2 * coef, nodes * segments),
            mean_k: t4(3 * coef, nodes),
            nodes,
            segments,
            stride,
            padding,
        })
    }
}

/// Seeded convolutional initialization, uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with `fan_in = C * kH * kW`.
pub fn random_conv_node_weights<R: Rng>(
    nodes: usize,
    segments: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: Padding,
    rng: &mut R,
) -> ConvNodeWeights {
    let bound = 1.0 / ((in_channels * kernel_h * kernel_w) as f64).sqrt();
    let mut t4 = |out: usize| {
        Tensor4::from_fn(out, in_channels, kernel_h, kernel_w, |_, _, _, _| {
            rng.gen_range(-bound..bound)
        })
    };
    ConvNodeWeights {
        slope_k: t4(nodes * segments),
        intercept_k: t4(nodes * segments),
        size_k: t4(nodes * segments),
        mean_k: t4(nodes),
        nodes,
        segments,
        stride,
        padding,
    }
}

/// Where per-pixel target means come from in the convolutional head.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanField {
    /// Convolve the mean kernel with the input.
    Regressed,
    /// Externally observed per-node, per-pixel means (`nodes x H' x W'`).
    Observed(Tensor3),
}

/// Direct gather-style 2D convolution with zero padding.
///
/// This is the reference path for the prediction head; tests hold it against
/// the independent scatter-style oracle.
pub fn conv2d(kernel: &Tensor4, input: &Tensor3, stride: usize, pad: (usize, usize)) -> Result<Tensor3> {
    if kernel.in_channels != input.channels {
        return Err(Error::Contract(format!(
            "kernel expects {} input channels, input has {}",
            kernel.in_channels, input.channels
        )));
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
    for o in 0..kernel.out_channels {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = 0.0;
                for c in 0..input.channels {
                    for ky in 0..kernel.kernel_h {
                        let iy = (oy * stride + ky) as isize - ph as isize;
                        if iy < 0 || iy >= input.height as isize {
                            continue;
                        }
                        for kx in 0..kernel.kernel_w {
                            let ix = (ox * stride + kx) as isize - pw as isize;
                            if ix < 0 || ix >= input.width as isize {
                                continue;
                            }
                            acc += kernel.get(o, c, ky, kx) * input.get(c, iy as usize, ix as usize);
                        }
                    }
                }
                *out.get_mut(o, oy, ox) = acc;
            }
        }
    }
    Ok(out)
}

/// Predicted coefficients for every output node at every output pixel.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    pub nodes: usize,
    pub height: usize,
    pub width: usize,
    sets: Vec<SegmentSet>,
    means: Vec<f64>,
}

impl CoefficientField {
    #[inline]
    fn index(&self, node: usize, y: usize, x: usize) -> usize {
        (node * self.height + y) * self.width + x
    }

    pub fn set(&self, node: usize, y: usize, x: usize) -> &SegmentSet {
        &self.sets[self.index(node, y, x)]
    }

    pub fn mean(&self, node: usize, y: usize, x: usize) -> f64 {
        self.means[self.index(node, y, x)]
    }
}

/// Predicts the per-pixel coefficient field of a convolutional node layer.
///
/// The size logits get a softmax over each node's `segments` channels at each
/// pixel, so every pixel's interval sizes sum to one.
pub fn conv_predict_coefficients(
    weights: &ConvNodeWeights,
    input: &Tensor3,
    mean_field: &MeanField,
) -> Result<CoefficientField> {
    weights.validate()?;
    let pad = weights.pad();
    let slope_raw = conv2d(&weights.slope_k, input, weights.stride, pad)?;
    let intercept_raw = conv2d(&weights.intercept_k, input, weights.stride, pad)?;
    let size_raw = conv2d(&weights.size_k, input, weights.stride, pad)?;
    let (h, w) = (slope_raw.height, slope_raw.width);
    let n = weights.segments;

    let means: Tensor3 = match mean_field {
        MeanField::Regressed => conv2d(&weights.mean_k, input, weights.stride, pad)?,
        MeanField::Observed(field) => {
            if field.channels != weights.nodes || field.height != h || field.width != w {
                return Err(Error::Contract(format!(
                    "observed mean field is {}x{}x{}, expected {}x{h}x{w}",
                    field.channels, field.height, field.width, weights.nodes
                )));
            }
            field.clone()
        }
    };

    let mut sets = Vec::with_capacity(weights.nodes * h * w);
    let mut flat_means = Vec::with_capacity(weights.nodes * h * w);
    for node in 0..weights.nodes {
        for y in 0..h {
            for x in 0..w {
                let base = node * n;
                let slopes: Vec<f64> = (0..n)
                    .map(|s| slope_raw.get(base + s, y, x).tanh())
                    .collect();
                let intercepts: Vec<f64> =
                    (0..n).map(|s| intercept_raw.get(base + s, y, x)).collect();
                let logits: Vec<f64> = (0..n).map(|s| size_raw.get(base + s, y, x)).collect();
                let mut sizes = softmax(&logits);
                floor_sizes(&mut sizes);
                let endpoints = endpoints_from_sizes(&sizes)?;
                sets.push(SegmentSet::new(slopes, intercepts, endpoints)?);
                flat_means.push(means.get(node, y, x));
            }
        }
    }
    Ok(CoefficientField {
        nodes: weights.nodes,
        height: h,
        width: w,
        sets,
        means: flat_means,
    })
}

/// Convolutional node forward pass: per-pixel integral-normalized
/// (optionally smoothed) evaluation of the predicted coefficient field.
pub fn conv_node_forward(
    weights: &ConvNodeWeights,
    input: &Tensor3,
    tau: f64,
    temperature: Option<f64>,
    mean_field: &MeanField,
) -> Result<Tensor3> {
    let field = conv_predict_coefficients(weights, input, mean_field)?;
    let mut out = Tensor3::zeros(field.nodes, field.height, field.width);
    for node in 0..field.nodes {
        for y in 0..field.height {
            for x in 0..field.width {
                *out.get_mut(node, y, x) = field.set(node, y, x).eval_normalized(
                    field.mean(node, y, x),
                    tau,
                    temperature,
                )?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::naive_conv2d;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_gives_flat_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_node_weights(3, 4, &mut rng);
        let (theta, mean) = predict_coefficients(&w, &[0.0; 4], &MeanMode::Regressed).unwrap();
        assert!(theta.slopes().iter().all(|&m| m == 0.0));
        assert!(theta.intercepts().iter().all(|&b| b == 0.0));
        for w in theta.endpoints().windows(2) {
            assert!((w[1] - w[0] - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn tanh_slope_prediction() {
        let w = NodeWeights {
            slope_w: Matrix::from_rows(vec![vec![2.0], vec![-2.0]]),
            intercept_w: Matrix::zeros(2, 1),
            size_w: Matrix::zeros(2, 1),
            mean_w: vec![0.0],
        };
        let (theta, _) = predict_coefficients(&w, &[0.5], &MeanMode::Regressed).unwrap();
        assert!((theta.slopes()[0] - 0.76159).abs() < 1e-5);
        assert!((theta.slopes()[1] + 0.76159).abs() < 1e-5);
    }

    #[test]
    fn softmax_interval_sizes() {
        // Logits (0, ln 3) give sizes (1/4, 3/4).
        let w = NodeWeights {
            slope_w: Matrix::zeros(2, 1),
            intercept_w: Matrix::zeros(2, 1),
            size_w: Matrix::from_rows(vec![vec![0.0], vec![(3.0f64).ln()]]),
            mean_w: vec![0.0],
        };
        let (theta, _) = predict_coefficients(&w, &[1.0], &MeanMode::Regressed).unwrap();
        assert!((theta.endpoints()[1] - 0.25).abs() < 1e-12);
        assert_eq!(theta.endpoints()[2], 1.0);
    }

    #[test]
    fn observed_mean_pins_constant_output() {
        let w = NodeWeights::zeros(2, 3);
        for tau in [0.0, 0.4, 1.0] {
            let y = node_forward(&w, &[0.0; 3], tau, None, &MeanMode::Observed(2.5)).unwrap();
            assert_eq!(y, 2.5);
        }
    }

    #[test]
    fn zero_input_forward_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_node_weights(3, 5, &mut rng);
        for tau in [0.0, 0.31, 1.0] {
            let y = node_forward(&w, &[0.0; 5], tau, None, &MeanMode::Regressed).unwrap();
            assert_eq!(y, 0.0);
        }
    }

    #[test]
    fn forward_matches_hand_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (n, k) = (rng.gen_range(2..5), rng.gen_range(1..5));
            let w = random_node_weights(n, k, &mut rng);
            let x: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tau: f64 = rng.gen_range(0.0..=1.0);

            // Straight-line recomputation of the whole pipeline.
            let slopes: Vec<f64> = (0..n)
                .map(|r| {
                    w.slope_w
                        .row(r)
                        .iter()
                        .zip(&x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        .tanh()
                })
                .collect();
            let intercepts: Vec<f64> = (0..n)
                .map(|r| w.intercept_w.row(r).iter().zip(&x).map(|(a, b)| a * b).sum())
                .collect();
            let logits: Vec<f64> = (0..n)
                .map(|r| w.size_w.row(r).iter().zip(&x).map(|(a, b)| a * b).sum())
                .collect();
            let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - zmax).exp()).collect();
            let zsum: f64 = exps.iter().sum();
            let mut t = vec![0.0];
            for e in &exps {
                t.push(t.last().unwrap() + e / zsum);
            }
            *t.last_mut().unwrap() = 1.0;
            let piece = (0..n)
                .find(|&i| tau >= t[i] && (tau < t[i + 1] || i == n - 1))
                .unwrap();
            let value = slopes[piece] * tau + intercepts[piece];
            let mut integral = 0.0;
            for i in 0..n {
                integral += 0.5 * slopes[i] * (t[i + 1] * t[i + 1] - t[i] * t[i])
                    + intercepts[i] * (t[i + 1] - t[i]);
            }
            let mean: f64 = w.mean_w.iter().zip(&x).map(|(a, b)| a * b).sum();
            let expected = value - integral + mean;

            let y = node_forward(&w, &x, tau, None, &MeanMode::Regressed).unwrap();
            assert!((y - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_forward_is_per_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nodes: Vec<NodeWeights> = (0..3).map(|_| random_node_weights(2, 4, &mut rng)).collect();
        let x = [0.3, -0.2, 0.9, 0.1];
        let out = layer_forward(&nodes, &x, 0.6, None, &MeanMode::Regressed).unwrap();
        assert_eq!(out.len(), 3);
        for (i, node) in nodes.iter().enumerate() {
            assert_eq!(
                out[i],
                node_forward(node, &x, 0.6, None, &MeanMode::Regressed).unwrap()
            );
        }
        // Permuting nodes permutes outputs.
        let perm = vec![nodes[2].clone(), nodes[0].clone(), nodes[1].clone()];
        let out_perm = layer_forward(&perm, &x, 0.6, None, &MeanMode::Regressed).unwrap();
        assert_eq!(out_perm, vec![out[2], out[0], out[1]]);
        // Singleton layer wraps node_forward.
        let single = layer_forward(&nodes[..1], &x, 0.6, None, &MeanMode::Regressed).unwrap();
        assert_eq!(single[0], out[0]);
    }

    #[test]
    fn layer_rejects_mixed_input_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nodes = vec![
            random_node_weights(2, 4, &mut rng),
            random_node_weights(2, 3, &mut rng),
        ];
        assert!(layer_forward(&nodes, &[0.0; 4], 0.5, None, &MeanMode::Regressed).is_err());
    }

    #[test]
    fn slope_bound_and_simplex_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let (n, k) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let w = random_node_weights(n, k, &mut rng);
            let x: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (theta, _) = predict_coefficients(&w, &x, &MeanMode::Regressed).unwrap();
            assert!(theta.slopes().iter().all(|m| m.abs() < 1.0));
            let sizes: Vec<f64> = theta.endpoints().windows(2).map(|w| w[1] - w[0]).collect();
            assert!(sizes.iter().all(|&s| s > 0.0));
            let total: f64 = sizes.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let c: f64 = rng.gen_range(-10.0..10.0);
            let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
            let a = softmax(&logits);
            let b = softmax(&shifted);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn extreme_logits_still_produce_valid_partition() {
        let w = NodeWeights {
            slope_w: Matrix::zeros(2, 1),
            intercept_w: Matrix::zeros(2, 1),
            size_w: Matrix::from_rows(vec![vec![0.0], vec![40.0]]),
            mean_w: vec![0.0],
        };
        let (theta, _) = predict_coefficients(&w, &[1.0], &MeanMode::Regressed).unwrap();
        let first = theta.endpoints()[1];
        assert!(first >= MIN_ENDPOINT_GAP);
        assert!(1.0 - first >= MIN_ENDPOINT_GAP);
    }

    fn random_input<R: Rng>(c: usize, h: usize, w: usize, rng: &mut R) -> Tensor3 {
        Tensor3::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(stride, pad) in &[(1usize, (0usize, 0usize)), (1, (1, 1)), (2, (1, 0))] {
            let kernel = Tensor4::from_fn(3, 2, 3, 3, |_, _, _, _| rng.gen_range(-1.0..1.0));
            let input = random_input(2, 5, 5, &mut rng);
            let ours = conv2d(&kernel, &input, stride, pad).unwrap();
            let reference = naive_conv2d(&kernel, &input, stride, pad).unwrap();
            assert_eq!(ours.channels, reference.channels);
            assert_eq!(ours.height, reference.height);
            for (a, b) in ours.data().iter().zip(reference.data()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn conv_zero_input_gives_flat_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_conv_node_weights(2, 3, 2, 3, 3, 1, Padding::Same, &mut rng);
        let input = Tensor3::zeros(2, 4, 4);
        let field = conv_predict_coefficients(&w, &input, &MeanField::Regressed).unwrap();
        for node in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    let set = field.set(node, y, x);
                    assert!(set.slopes().iter().all(|&m| m == 0.0));
                    assert!(set.intercepts().iter().all(|&b| b == 0.0));
                    assert_eq!(field.mean(node, y, x), 0.0);
                }
            }
        }
        let out = conv_node_forward(&w, &input, 0.7, None, &MeanField::Regressed).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_conv_reduces_to_dense_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (nodes, n, k) = (2, 3, 4);
        let conv = random_conv_node_weights(nodes, n, k, 1, 1, 1, Padding::Explicit(0, 0), &mut rng);
        let x: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let input = Tensor3::from_vec(k, 1, 1, x.clone());

        let out = conv_node_forward(&conv, &input, 0.37, None, &MeanField::Regressed).unwrap();

        for node in 0..nodes {
            let take = |t4: &Tensor4, rows: usize, base: usize| {
                Matrix::from_rows(
                    (0..rows)
                        .map(|r| (0..k).map(|c| t4.get(base + r, c, 0, 0)).collect())
                        .collect(),
                )
            };
            let dense = NodeWeights {
                slope_w: take(&conv.slope_k, n, node * n),
                intercept_w: take(&conv.intercept_k, n, node * n),
                size_w: take(&conv.size_k, n, node * n),
                mean_w: (0..k).map(|c| conv.mean_k.get(node, c, 0, 0)).collect(),
            };
            let expected = node_forward(&dense, &x, 0.37, None, &MeanMode::Regressed).unwrap();
            assert!((out.get(node, 0, 0) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_observed_means_reproduce_image_with_zero_weights() {
        let nodes = 1;
        let conv = ConvNodeWeights {
            slope_k: Tensor4::zeros(2, 1, 3, 3),
            intercept_k: Tensor4::zeros(2, 1, 3, 3),
            size_k: Tensor4::zeros(2, 1, 3, 3),
            mean_k: Tensor4::zeros(nodes, 1, 3, 3),
            nodes,
            segments: 2,
            stride: 1,
            padding: Padding::Same,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let image = random_input(1, 4, 5, &mut rng);
        let observed = MeanField::Observed(image.clone());
        let input = Tensor3::zeros(1, 4, 5);
        for tau in [0.0, 0.5, 1.0] {
            let out = conv_node_forward(&conv, &input, tau, None, &observed).unwrap();
            for (a, b) in out.data().iter().zip(image.data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn conv_per_pixel_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w = random_conv_node_weights(2, 3, 2, 3, 3, 1, Padding::Same, &mut rng);
        let input = random_input(2, 4, 4, &mut rng);
        let field = conv_predict_coefficients(&w, &input, &MeanField::Regressed).unwrap();
        for node in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    let set = field.set(node, y, x);
                    let total: f64 = set.endpoints().windows(2).map(|w| w[1] - w[0]).sum();
                    assert!((total - 1.0).abs() < 1e-12);
                    assert!(set.slopes().iter().all(|m| m.abs() < 1.0));
                }
            }
        }
    }

    #[test]
    fn conv_rejects_bad_observed_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = random_conv_node_weights(1, 2, 1, 3, 3, 1, Padding::Same, &mut rng);
        let input = Tensor3::zeros(1, 4, 4);
        let wrong = MeanField::Observed(Tensor3::zeros(1, 3, 3));
        assert!(conv_node_forward(&w, &input, 0.5, None, &wrong).is_err());
    }
}
