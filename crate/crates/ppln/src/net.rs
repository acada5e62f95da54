//! Small trainable networks of stacked node layers.
//!
//! A model is an ordered list of layer descriptors (dense node layers,
//! convolutional node layers, elementwise rectifiers, reshape markers) with
//! global switches for integral normalization, boundary smoothing, and the
//! mean-target mode. Training is full vectors in, scalar-per-output out,
//! deterministic given the seed: seeded shuffles, sequential accumulation,
//! hand-written backward passes driven through the chain-rule driver.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{backprop_chain, grad_value, ChainLink};
use crate::heads::{
    random_conv_node_weights, random_node_weights, ConvNodeWeights, MeanField, MeanMode,
    NodeWeights, Padding,
};
use crate::plf::SegmentSet;
use crate::synth::Dataset;
use crate::tensor::{Tensor3, Tensor4};

/// One layer of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// Fully connected node layer: `inputs -> nodes`, each node with
    /// `segments` pieces.
    Dense {
        inputs: usize,
        nodes: usize,
        segments: usize,
    },
    /// Convolutional node layer on a declared input geometry; output is the
    /// flattened `nodes x H' x W'` grid.
    Conv {
        in_channels: usize,
        in_height: usize,
        in_width: usize,
        nodes: usize,
        segments: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    },
    /// Elementwise rectifier.
    Relu,
    /// Marker validating that the flat vector matches a spatial geometry;
    /// identity on the data.
    Reshape {
        channels: usize,
        height: usize,
        width: usize,
    },
}

/// Boundary smoothing policy of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Smoothing {
    Off,
    Fixed { temperature: f64 },
    /// Temperature grows geometrically per epoch up to the cap; inference
    /// uses the cap.
    Anneal { initial: f64, growth: f64, max: f64 },
}

impl Smoothing {
    pub fn at_epoch(&self, epoch: usize) -> Option<f64> {
        match *self {
            Smoothing::Off => None,
            Smoothing::Fixed { temperature } => Some(temperature),
            Smoothing::Anneal { initial, growth, max } => {
                Some((initial * growth.powi(epoch as i32)).min(max))
            }
        }
    }

    pub fn at_inference(&self) -> Option<f64> {
        match *self {
            Smoothing::Off => None,
            Smoothing::Fixed { temperature } => Some(temperature),
            Smoothing::Anneal { max, .. } => Some(max),
        }
    }
}

/// A full model: layers plus the global evaluation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub normalization: bool,
    pub smoothing: Smoothing,
    pub mean_mode: MeanMode,
    /// Append a constant-1 feature to every dense layer's input. The heads
    /// are bias-free linear maps; this is the opt-in way to let them express
    /// constant offsets.
    #[serde(default)]
    pub augment_bias: bool,
}

impl ModelSpec {
    /// Single dense node layer with the library defaults (normalization on,
    /// smoothing off, regressed means).
    pub fn dense(inputs: usize, nodes: usize, segments: usize) -> Self {
        ModelSpec {
            layers: vec![LayerSpec::Dense {
                inputs,
                nodes,
                segments,
            }],
            normalization: true,
            smoothing: Smoothing::Off,
            mean_mode: MeanMode::Regressed,
            augment_bias: false,
        }
    }

    /// Replaces the segment count of every node layer.
    pub fn with_segments(&self, segments: usize) -> Self {
        let mut spec = self.clone();
        for layer in &mut spec.layers {
            match layer {
                LayerSpec::Dense { segments: s, .. } => *s = segments,
                LayerSpec::Conv { segments: s, .. } => *s = segments,
                _ => {}
            }
        }
        spec
    }

    /// Output vector length of each layer, after validating composition.
    pub fn layer_dims(&self) -> Result<Vec<(usize, usize)>> {
        if self.layers.is_empty() {
            return Err(Error::Contract("model has no layers".into()));
        }
        let mut dims = Vec::with_capacity(self.layers.len());
        let mut current: Option<usize> = None;
        let mut has_node_layer = false;
        for (idx, layer) in self.layers.iter().enumerate() {
            let (input, output) = match layer {
                LayerSpec::Dense {
                    inputs,
                    nodes,
                    segments,
                } => {
                    if *nodes == 0 || *segments == 0 || *inputs == 0 {
                        return Err(Error::Contract(format!(
                            "layer {idx}: dense dimensions must be positive"
                        )));
                    }
                    has_node_layer = true;
                    (*inputs, *nodes)
                }
                LayerSpec::Conv {
                    in_channels,
                    in_height,
                    in_width,
                    nodes,
                    segments,
                    kernel,
                    stride,
                    padding,
                } => {
                    if *nodes == 0 || *segments == 0 {
                        return Err(Error::Contract(format!(
                            "layer {idx}: conv dimensions must be positive"
                        )));
                    }
                    has_node_layer = true;
                    let (out_h, out_w) = conv_out_dims(
                        *in_height, *in_width, *kernel, *stride, *padding,
                    )?;
                    (
                        in_channels * in_height * in_width,
                        nodes * out_h * out_w,
                    )
                }
                LayerSpec::Relu => {
                    let d = current.ok_or_else(|| {
                        Error::Contract("rectifier cannot be the first layer".into())
                    })?;
                    (d, d)
                }
                LayerSpec::Reshape {
                    channels,
                    height,
                    width,
                } => {
                    let d = channels * height * width;
                    (d, d)
                }
            };
            if let Some(prev) = current {
                if prev != input {
                    return Err(Error::Contract(format!(
                        "layer {idx} expects {input} inputs but receives {prev}"
                    )));
                }
            }
            dims.push((input, output));
            current = Some(output);
        }
        if !has_node_layer {
            return Err(Error::Contract("model needs at least one node layer".into()));
        }
        Ok(dims)
    }

    pub fn input_dim(&self) -> Result<usize> {
        Ok(self.layer_dims()?[0].0)
    }

    pub fn output_dim(&self) -> Result<usize> {
        Ok(self.layer_dims()?.last().unwrap().1)
    }
}

fn conv_out_dims(
    in_h: usize,
    in_w: usize,
    kernel: (usize, usize),
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 || kernel.0 == 0 || kernel.1 == 0 {
        return Err(Error::Contract("conv kernel and stride must be positive".into()));
    }
    let (ph, pw) = match padding {
        Padding::Same => {
            if kernel.0 % 2 == 0 || kernel.1 % 2 == 0 {
                return Err(Error::Contract(
                    "same padding requires odd kernel dimensions".into(),
                ));
            }
            ((kernel.0 - 1) / 2, (kernel.1 - 1) / 2)
        }
        Padding::Explicit(ph, pw) => (ph, pw),
    };
    let padded_h = in_h + 2 * ph;
    let padded_w = in_w + 2 * pw;
    if padded_h < kernel.0 || padded_w < kernel.1 {
        return Err(Error::Contract("kernel larger than padded input".into()));
    }
    Ok(((padded_h - kernel.0) / stride + 1, (padded_w - kernel.1) / stride + 1))
}

/// Trainable state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Dense(Vec<NodeWeights>),
    Conv(ConvNodeWeights),
    Stateless,
}

impl LayerParams {
    pub fn param_count(&self) -> usize {
        match self {
            LayerParams::Dense(nodes) => nodes.iter().map(NodeWeights::param_count).sum(),
            LayerParams::Conv(w) => w.param_count(),
            LayerParams::Stateless => 0,
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        match self {
            LayerParams::Dense(nodes) => nodes.iter().flat_map(NodeWeights::flatten).collect(),
            LayerParams::Conv(w) => w.flatten(),
            LayerParams::Stateless => Vec::new(),
        }
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        match self {
            LayerParams::Dense(nodes) => {
                let mut offset = 0;
                for node in nodes.iter_mut() {
                    let count = node.param_count();
                    *node = NodeWeights::from_flat(
                        node.segments(),
                        node.input_dim(),
                        &flat[offset..offset + count],
                    )?;
                    offset += count;
                }
            }
            LayerParams::Conv(w) => {
                *w = ConvNodeWeights::from_flat(
                    w.nodes,
                    w.segments,
                    w.in_channels(),
                    w.slope_k.kernel_h,
                    w.slope_k.kernel_w,
                    w.stride,
                    w.padding,
                    flat,
                )?;
            }
            LayerParams::Stateless => {}
        }
        Ok(())
    }
}

/// All trainable state of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

impl Params {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum()
    }
}

/// Seeded initialization of every layer, uniform in `+-1/sqrt(fan_in)`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<Params> {
    spec.layer_dims()?;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (idx, layer) in spec.layers.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(idx as u64);
        let params = match layer {
            LayerSpec::Dense {
                inputs,
                nodes,
                segments,
            } => {
                let fan_in = inputs + spec.augment_bias as usize;
                LayerParams::Dense(
                    (0..*nodes)
                        .map(|_| random_node_weights(*segments, fan_in, &mut rng))
                        .collect(),
                )
            }
            LayerSpec::Conv {
                in_channels,
                nodes,
                segments,
                kernel,
                stride,
                padding,
                ..
            } => LayerParams::Conv(random_conv_node_weights(
                *nodes, *segments, *in_channels, kernel.0, kernel.1, *stride, *padding, &mut rng,
            )),
            LayerSpec::Relu | LayerSpec::Reshape { .. } => LayerParams::Stateless,
        };
        layers.push(params);
    }
    Ok(Params { layers })
}

/// Evaluated dense layer captured for the backward pass.
struct DenseLink {
    nodes: Vec<NodeWeights>,
    /// Layer input, already carrying the constant-1 feature when augmented.
    x: Vec<f64>,
    augmented: bool,
    tau: f64,
    temperature: Option<f64>,
    normalized: bool,
    regressed_mean: bool,
    cache: Vec<(SegmentSet, f64)>,
}

impl ChainLink for DenseLink {
    fn input_len(&self) -> usize {
        self.x.len() - self.augmented as usize
    }

    fn output_len(&self) -> usize {
        self.nodes.len()
    }

    fn backward(&self, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if upstream.len() != self.nodes.len() {
            return Err(Error::Contract(format!(
                "upstream has {} entries for {} nodes",
                upstream.len(),
                self.nodes.len()
            )));
        }
        let k = self.x.len();
        let mut d_params = Vec::with_capacity(
            self.nodes.iter().map(NodeWeights::param_count).sum(),
        );
        let mut d_input = vec![0.0; k];
        for (node, (g, (theta, _mean))) in self
            .nodes
            .iter()
            .zip(upstream.iter().zip(&self.cache))
        {
            let n = theta.segment_count();
            let rec = grad_value(theta, self.tau, self.temperature, self.normalized)?;

            // Slopes came through tanh: d/d(pre-activation) = d_m * (1 - m^2).
            let d_slope_logits: Vec<f64> = rec
                .d_slopes
                .iter()
                .zip(theta.slopes())
                .map(|(d, m)| g * d * (1.0 - m * m))
                .collect();
            let d_intercept_logits: Vec<f64> =
                rec.d_intercepts.iter().map(|d| g * d).collect();

            // Endpoints are cumulative sums of the sizes: suffix sums.
            let mut d_sizes = vec![0.0; n];
            let mut suffix = 0.0;
            for q in (0..n.saturating_sub(1)).rev() {
                suffix += g * rec.d_endpoints[q];
                d_sizes[q] = suffix;
            }
            // Softmax Jacobian.
            let sizes: Vec<f64> = theta.endpoints().windows(2).map(|w| w[1] - w[0]).collect();
            let dot: f64 = sizes.iter().zip(&d_sizes).map(|(s, d)| s * d).sum();
            let d_size_logits: Vec<f64> = sizes
                .iter()
                .zip(&d_sizes)
                .map(|(s, d)| s * (d - dot))
                .collect();

            let d_mean = g * rec.d_target_mean;

            // Weight-block gradients in flatten order, input gradient on the side.
            for &da in &d_slope_logits {
                d_params.extend(self.x.iter().map(|xi| da * xi));
            }
            node.slope_w.add_transpose_matvec(&d_slope_logits, &mut d_input);
            for &db in &d_intercept_logits {
                d_params.extend(self.x.iter().map(|xi| db * xi));
            }
            node.intercept_w
                .add_transpose_matvec(&d_intercept_logits, &mut d_input);
            for &dc in &d_size_logits {
                d_params.extend(self.x.iter().map(|xi| dc * xi));
            }
            node.size_w.add_transpose_matvec(&d_size_logits, &mut d_input);

            if self.regressed_mean {
                d_params.extend(self.x.iter().map(|xi| d_mean * xi));
                for (o, w) in d_input.iter_mut().zip(&node.mean_w) {
                    *o += d_mean * w;
                }
            } else {
                d_params.extend(std::iter::repeat(0.0).take(k));
            }
        }
        if self.augmented {
            d_input.pop();
        }
        Ok((d_params, d_input))
    }
}

/// Evaluated convolutional layer captured for the backward pass.
struct ConvLink {
    weights: ConvNodeWeights,
    input: Tensor3,
    tau: f64,
    temperature: Option<f64>,
    normalized: bool,
    regressed_mean: bool,
    cache: Vec<(SegmentSet, f64)>,
    out_h: usize,
    out_w: usize,
}

impl ConvLink {
    fn cache_index(&self, node: usize, y: usize, x: usize) -> usize {
        (node * self.out_h + y) * self.out_w + x
    }
}

impl ChainLink for ConvLink {
    fn input_len(&self) -> usize {
        self.input.len()
    }

    fn output_len(&self) -> usize {
        self.weights.nodes * self.out_h * self.out_w
    }

    fn backward(&self, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if upstream.len() != self.output_len() {
            return Err(Error::Contract(format!(
                "upstream has {} entries for {} conv outputs",
                upstream.len(),
                self.output_len()
            )));
        }
        let w = &self.weights;
        let n = w.segments;
        let coef_ch = w.nodes * n;
        // Per-pixel gradients with respect to the raw convolution outputs.
        let mut d_slope_raw = Tensor3::zeros(coef_ch, self.out_h, self.out_w);
        let mut d_intercept_raw = Tensor3::zeros(coef_ch, self.out_h, self.out_w);
        let mut d_size_raw = Tensor3::zeros(coef_ch, self.out_h, self.out_w);
        let mut d_mean_raw = Tensor3::zeros(w.nodes, self.out_h, self.out_w);

        for node in 0..w.nodes {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let idx = self.cache_index(node, oy, ox);
                    let g = upstream[idx];
                    let (theta, _mean) = &self.cache[idx];
                    let rec = grad_value(theta, self.tau, self.temperature, self.normalized)?;

                    let mut d_sizes = vec![0.0; n];
                    let mut suffix = 0.0;
                    for q in (0..n.saturating_sub(1)).rev() {
                        suffix += g * rec.d_endpoints[q];
                        d_sizes[q] = suffix;
                    }
                    let sizes: Vec<f64> =
                        theta.endpoints().windows(2).map(|w| w[1] - w[0]).collect();
                    let dot: f64 = sizes.iter().zip(&d_sizes).map(|(s, d)| s * d).sum();
                    for s in 0..n {
                        let m = theta.slopes()[s];
                        *d_slope_raw.get_mut(node * n + s, oy, ox) =
                            g * rec.d_slopes[s] * (1.0 - m * m);
                        *d_intercept_raw.get_mut(node * n + s, oy, ox) = g * rec.d_intercepts[s];
                        *d_size_raw.get_mut(node * n + s, oy, ox) =
                            sizes[s] * (d_sizes[s] - dot);
                    }
                    if self.regressed_mean {
                        *d_mean_raw.get_mut(node, oy, ox) = g * rec.d_target_mean;
                    }
                }
            }
        }

        let mut d_input = Tensor3::zeros(self.input.channels, self.input.height, self.input.width);
        let mut d_params = Vec::with_capacity(w.param_count());
        for (kernel, d_raw) in [
            (&w.slope_k, &d_slope_raw),
            (&w.intercept_k, &d_intercept_raw),
            (&w.size_k, &d_size_raw),
            (&w.mean_k, &d_mean_raw),
        ] {
            let mut d_kernel = Tensor4::zeros(
                kernel.out_channels,
                kernel.in_channels,
                kernel.kernel_h,
                kernel.kernel_w,
            );
            self.backward_conv(kernel, d_raw, &mut d_kernel, &mut d_input);
            d_params.extend_from_slice(d_kernel.data());
        }
        Ok((d_params, d_input.data().to_vec()))
    }
}

impl ConvLink {
    /// Scatters output-side gradients into kernel and input gradients.
    fn backward_conv(
        &self,
        kernel: &Tensor4,
        d_raw: &Tensor3,
        d_kernel: &mut Tensor4,
        d_input: &mut Tensor3,
    ) {
        let (ph, pw) = self.weights.pad();
        let stride = self.weights.stride;
        for o in 0..kernel.out_channels {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let g = d_raw.get(o, oy, ox);
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..kernel.in_channels {
                        for ky in 0..kernel.kernel_h {
                            let iy = (oy * stride + ky) as isize - ph as isize;
                            if iy < 0 || iy >= self.input.height as isize {
                                continue;
                            }
                            for kx in 0..kernel.kernel_w {
                                let ix = (ox * stride + kx) as isize - pw as isize;
                                if ix < 0 || ix >= self.input.width as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                *d_kernel.get_mut(o, c, ky, kx) += g * self.input.get(c, iy, ix);
                                *d_input.get_mut(c, iy, ix) += g * kernel.get(o, c, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
}

struct ReluLink {
    input: Vec<f64>,
}

impl ChainLink for ReluLink {
    fn input_len(&self) -> usize {
        self.input.len()
    }
    fn output_len(&self) -> usize {
        self.input.len()
    }
    fn backward(&self, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d_input = upstream
            .iter()
            .zip(&self.input)
            .map(|(u, x)| if *x > 0.0 { *u } else { 0.0 })
            .collect();
        Ok((Vec::new(), d_input))
    }
}

struct IdentityLink {
    len: usize,
}

impl ChainLink for IdentityLink {
    fn input_len(&self) -> usize {
        self.len
    }
    fn output_len(&self) -> usize {
        self.len
    }
    fn backward(&self, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((Vec::new(), upstream.to_vec()))
    }
}

fn layer_forward_tape(
    layer: &LayerSpec,
    params: &LayerParams,
    spec: &ModelSpec,
    x: &[f64],
    tau: f64,
    temperature: Option<f64>,
) -> Result<(Vec<f64>, Box<dyn ChainLink>)> {
    match (layer, params) {
        (LayerSpec::Dense { .. }, LayerParams::Dense(nodes)) => {
            let mut x = x.to_vec();
            if spec.augment_bias {
                x.push(1.0);
            }
            let mut cache = Vec::with_capacity(nodes.len());
            let mut out = Vec::with_capacity(nodes.len());
            for node in nodes {
                let (theta, mean) =
                    crate::heads::predict_coefficients(node, &x, &spec.mean_mode)?;
                let value = if spec.normalization {
                    theta.eval_normalized(mean, tau, temperature)?
                } else {
                    match temperature {
                        Some(t) => theta.eval_smoothed(tau, t)?,
                        None => theta.eval(tau)?,
                    }
                };
                out.push(value);
                cache.push((theta, mean));
            }
            let link = DenseLink {
                nodes: nodes.clone(),
                x,
                augmented: spec.augment_bias,
                tau,
                temperature,
                normalized: spec.normalization,
                regressed_mean: matches!(spec.mean_mode, MeanMode::Regressed),
                cache,
            };
            Ok((out, Box::new(link)))
        }
        (
            LayerSpec::Conv {
                in_channels,
                in_height,
                in_width,
                ..
            },
            LayerParams::Conv(weights),
        ) => {
            if x.len() != in_channels * in_height * in_width {
                return Err(Error::Contract(format!(
                    "conv layer expects {} inputs, got {}",
                    in_channels * in_height * in_width,
                    x.len()
                )));
            }
            let input = Tensor3::from_vec(*in_channels, *in_height, *in_width, x.to_vec());
            let mean_field = match spec.mean_mode {
                MeanMode::Regressed => MeanField::Regressed,
                MeanMode::Observed(value) => {
                    let (out_h, out_w) = conv_out_dims(
                        *in_height,
                        *in_width,
                        (weights.slope_k.kernel_h, weights.slope_k.kernel_w),
                        weights.stride,
                        weights.padding,
                    )?;
                    let mut field = Tensor3::zeros(weights.nodes, out_h, out_w);
                    field.data_mut().fill(value);
                    MeanField::Observed(field)
                }
            };
            let field = crate::heads::conv_predict_coefficients(weights, &input, &mean_field)?;
            let (out_h, out_w) = (field.height, field.width);
            let mut out = Vec::with_capacity(weights.nodes * out_h * out_w);
            let mut cache = Vec::with_capacity(weights.nodes * out_h * out_w);
            for node in 0..weights.nodes {
                for y in 0..out_h {
                    for xx in 0..out_w {
                        let theta = field.set(node, y, xx).clone();
                        let mean = field.mean(node, y, xx);
                        let value = if spec.normalization {
                            theta.eval_normalized(mean, tau, temperature)?
                        } else {
                            match temperature {
                                Some(t) => theta.eval_smoothed(tau, t)?,
                                None => theta.eval(tau)?,
                            }
                        };
                        out.push(value);
                        cache.push((theta, mean));
                    }
                }
            }
            let link = ConvLink {
                weights: weights.clone(),
                input,
                tau,
                temperature,
                normalized: spec.normalization,
                regressed_mean: matches!(spec.mean_mode, MeanMode::Regressed),
                cache,
                out_h,
                out_w,
            };
            Ok((out, Box::new(link)))
        }
        (LayerSpec::Relu, LayerParams::Stateless) => {
            let out = x.iter().map(|v| v.max(0.0)).collect();
            Ok((
                out,
                Box::new(ReluLink {
                    input: x.to_vec(),
                }),
            ))
        }
        (LayerSpec::Reshape { channels, height, width }, LayerParams::Stateless) => {
            if x.len() != channels * height * width {
                return Err(Error::Contract(format!(
                    "reshape expects {} entries, got {}",
                    channels * height * width,
                    x.len()
                )));
            }
            Ok((x.to_vec(), Box::new(IdentityLink { len: x.len() })))
        }
        _ => Err(Error::Contract(
            "layer parameters do not match the layer spec".into(),
        )),
    }
}

fn forward_with_tape(
    spec: &ModelSpec,
    params: &Params,
    x: &[f64],
    tau: f64,
    temperature: Option<f64>,
) -> Result<(Vec<f64>, Vec<Box<dyn ChainLink>>)> {
    if params.layers.len() != spec.layers.len() {
        return Err(Error::Contract(format!(
            "{} parameter blocks for {} layers",
            params.layers.len(),
            spec.layers.len()
        )));
    }
    crate::plf::check_tau(tau)?;
    let mut tape: Vec<Box<dyn ChainLink>> = Vec::with_capacity(spec.layers.len());
    let mut current = x.to_vec();
    for (layer, layer_params) in spec.layers.iter().zip(&params.layers) {
        // Every node layer sees the same query time.
        let (next, link) = layer_forward_tape(layer, layer_params, spec, &current, tau, temperature)?;
        tape.push(link);
        current = next;
    }
    Ok((current, tape))
}

/// Sequential forward pass at the model's inference temperature.
pub fn model_forward(spec: &ModelSpec, params: &Params, x: &[f64], tau: f64) -> Result<Vec<f64>> {
    let (out, _) = forward_with_tape(spec, params, x, tau, spec.smoothing.at_inference())?;
    Ok(out)
}

/// Per-layer parameter gradients of `sum(upstream * output)` via the chain
/// driver; used by the verification suites.
pub fn model_gradients(
    spec: &ModelSpec,
    params: &Params,
    x: &[f64],
    tau: f64,
    upstream: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let (_, tape) = forward_with_tape(spec, params, x, tau, spec.smoothing.at_inference())?;
    let links: Vec<&dyn ChainLink> = tape.iter().map(|b| b.as_ref()).collect();
    backprop_chain(&links, upstream)
}

/// Training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
}

impl LossKind {
    fn value(&self, predicted: &[f64], target: &[f64]) -> f64 {
        match self {
            LossKind::L2 => predicted
                .iter()
                .zip(target)
                .map(|(p, t)| (p - t) * (p - t))
                .sum(),
            LossKind::L1 => predicted.iter().zip(target).map(|(p, t)| (p - t).abs()).sum(),
        }
    }

    fn upstream(&self, predicted: &[f64], target: &[f64], scale: f64) -> Vec<f64> {
        match self {
            LossKind::L2 => predicted
                .iter()
                .zip(target)
                .map(|(p, t)| scale * 2.0 * (p - t))
                .collect(),
            LossKind::L1 => predicted
                .iter()
                .zip(target)
                .map(|(p, t)| scale * (p - t).signum())
                .collect(),
        }
    }
}

/// Optimizer family and hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    RmsProp {
        lr: f64,
        alpha: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop(lr: f64) -> Self {
        OptimizerKind::RmsProp {
            lr,
            alpha: 0.99,
            eps: 1e-8,
        }
    }

    fn base_lr(&self) -> f64 {
        match *self {
            OptimizerKind::Sgd { lr }
            | OptimizerKind::Adam { lr, .. }
            | OptimizerKind::RmsProp { lr, .. } => lr,
        }
    }
}

/// Stepwise learning-rate decay at epoch milestones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub milestones: Vec<usize>,
    pub factor: f64,
}

/// Full training recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_decay: Option<LrDecay>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::adam(1e-2),
            loss: LossKind::L2,
            epochs: 200,
            batch_size: 32,
            lr_decay: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Domain("epochs and batch size must be positive".into()));
        }
        if !(self.optimizer.base_lr() > 0.0) {
            return Err(Error::Domain("learning rate must be positive".into()));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = self.optimizer.base_lr();
        if let Some(decay) = &self.lr_decay {
            for &milestone in &decay.milestones {
                if epoch >= milestone {
                    lr *= decay.factor;
                }
            }
        }
        lr
    }
}

/// Per-epoch mean training loss plus the final value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

struct OptimizerState {
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    fn new(params: &Params) -> Self {
        let shapes: Vec<usize> = params.layers.iter().map(LayerParams::param_count).collect();
        OptimizerState {
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn apply(
        &mut self,
        kind: &OptimizerKind,
        lr: f64,
        params: &mut Params,
        grads: &[Vec<f64>],
    ) -> Result<()> {
        self.step += 1;
        for (idx, layer) in params.layers.iter_mut().enumerate() {
            if layer.param_count() == 0 {
                continue;
            }
            let mut flat = layer.flatten();
            let g = &grads[idx];
            match *kind {
                OptimizerKind::Sgd { .. } => {
                    for (p, gi) in flat.iter_mut().zip(g) {
                        *p -= lr * gi;
                    }
                }
                OptimizerKind::Adam {
                    beta1, beta2, eps, ..
                } => {
                    let m = &mut self.first_moment[idx];
                    let v = &mut self.second_moment[idx];
                    let bc1 = 1.0 - beta1.powi(self.step as i32);
                    let bc2 = 1.0 - beta2.powi(self.step as i32);
                    for ((p, gi), (mi, vi)) in
                        flat.iter_mut().zip(g).zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
                OptimizerKind::RmsProp { alpha, eps, .. } => {
                    let v = &mut self.second_moment[idx];
                    for ((p, gi), vi) in flat.iter_mut().zip(g).zip(v.iter_mut()) {
                        *vi = alpha * *vi + (1.0 - alpha) * gi * gi;
                        *p -= lr * gi / (vi.sqrt() + eps);
                    }
                }
            }
            layer.assign_from_flat(&flat)?;
        }
        Ok(())
    }
}

/// Trains a model on `(x, tau, y)` rows; deterministic given the config seed.
pub fn train(
    spec: &ModelSpec,
    config: &TrainConfig,
    dataset: &Dataset,
) -> Result<(Params, TrainReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Domain("dataset is empty".into()));
    }
    let dims = spec.layer_dims()?;
    if dataset.input_dim != dims[0].0 {
        return Err(Error::Contract(format!(
            "dataset rows have {} features, model expects {}",
            dataset.input_dim, dims[0].0
        )));
    }
    if dataset.output_dim != dims.last().unwrap().1 {
        return Err(Error::Contract(format!(
            "dataset targets have {} entries, model produces {}",
            dataset.output_dim,
            dims.last().unwrap().1
        )));
    }
    for (row_idx, row) in dataset.rows.iter().enumerate() {
        if !(0.0..=1.0).contains(&row.tau) {
            return Err(Error::Domain(format!(
                "row {row_idx}: query time {} outside the unit interval",
                row.tau
            )));
        }
    }

    let mut params = init_params(spec, config.seed)?;
    let mut state = OptimizerState::new(&params);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(1_000 + epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let temperature = spec.smoothing.at_epoch(epoch);
        let lr = config.lr_at(epoch);

        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            let mut grads: Vec<Vec<f64>> = params
                .layers
                .iter()
                .map(|l| vec![0.0; l.param_count()])
                .collect();
            for &row_idx in batch {
                let row = &dataset.rows[row_idx];
                let (out, tape) =
                    forward_with_tape(spec, &params, &row.x, row.tau, temperature)?;
                batch_loss += scale * config.loss.value(&out, &row.y);
                let upstream = config.loss.upstream(&out, &row.y, scale);
                let links: Vec<&dyn ChainLink> = tape.iter().map(|b| b.as_ref()).collect();
                let sample_grads = backprop_chain(&links, &upstream)?;
                for (acc, g) in grads.iter_mut().zip(sample_grads) {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Train {
                    epoch,
                    batch: batch_idx,
                    msg: format!("non-finite batch loss {batch_loss}"),
                });
            }
            state.apply(&config.optimizer, lr, &mut params, &grads)?;
            epoch_loss += batch_loss * batch.len() as f64;
        }
        epoch_losses.push(epoch_loss / dataset.len() as f64);
    }

    let final_loss = *epoch_losses.last().unwrap();
    Ok((
        params,
        TrainReport {
            epoch_losses,
            final_loss,
        },
    ))
}

/// Mean per-row loss of a trained model on a dataset.
pub fn evaluate(
    spec: &ModelSpec,
    params: &Params,
    dataset: &Dataset,
    loss: LossKind,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Domain("dataset is empty".into()));
    }
    let mut total = 0.0;
    for row in &dataset.rows {
        let out = model_forward(spec, params, &row.x, row.tau)?;
        total += loss.value(&out, &row.y);
    }
    Ok(total / dataset.len() as f64)
}

/// Which switches to sweep in an ablation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationAxes {
    pub normalization: bool,
    pub smoothing: bool,
    pub segment_counts: Vec<usize>,
}

/// Outcome of one ablation variant; failures are recorded, not fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub label: String,
    pub normalization: bool,
    pub smoothing: bool,
    pub segments: usize,
    pub train_loss: Option<f64>,
    pub valid_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub variants: Vec<AblationOutcome>,
}

fn spec_segments(spec: &ModelSpec) -> usize {
    spec.layers
        .iter()
        .find_map(|l| match l {
            LayerSpec::Dense { segments, .. } | LayerSpec::Conv { segments, .. } => {
                Some(*segments)
            }
            _ => None,
        })
        .unwrap_or(0)
}

/// Trains one variant per combination of the requested axes, sharing the
/// training seed, holding out the tail of the dataset for validation.
pub fn ablate(
    spec: &ModelSpec,
    config: &TrainConfig,
    dataset: &Dataset,
    axes: &AblationAxes,
) -> AblationReport {
    let normalization_values: Vec<bool> = if axes.normalization {
        vec![true, false]
    } else {
        vec![spec.normalization]
    };
    let smoothing_values: Vec<bool> = if axes.smoothing {
        vec![true, false]
    } else {
        vec![!matches!(spec.smoothing, Smoothing::Off)]
    };
    let segment_values: Vec<usize> = if axes.segment_counts.is_empty() {
        vec![spec_segments(spec)]
    } else {
        axes.segment_counts.clone()
    };

    let (train_set, valid_set) = dataset.split_validation(0.2);
    let mut variants = Vec::new();
    for &segments in &segment_values {
        for &normalization in &normalization_values {
            for &smoothing in &smoothing_values {
                let mut variant_spec = spec.with_segments(segments);
                variant_spec.normalization = normalization;
                variant_spec.smoothing = if smoothing {
                    match spec.smoothing {
                        Smoothing::Off => Smoothing::Fixed { temperature: 100.0 },
                        other => other,
                    }
                } else {
                    Smoothing::Off
                };
                let label = format!(
                    "n{}-norm_{}-smooth_{}",
                    segments,
                    if normalization { "on" } else { "off" },
                    if smoothing { "on" } else { "off" }
                );
                let outcome = match train(&variant_spec, config, &train_set) {
                    Ok((params, report)) => {
                        match evaluate(&variant_spec, &params, &valid_set, config.loss) {
                            Ok(valid_loss) => AblationOutcome {
                                label,
                                normalization,
                                smoothing,
                                segments,
                                train_loss: Some(report.final_loss),
                                valid_loss: Some(valid_loss),
                                error: None,
                            },
                            Err(e) => AblationOutcome {
                                label,
                                normalization,
                                smoothing,
                                segments,
                                train_loss: Some(report.final_loss),
                                valid_loss: None,
                                error: Some(e.to_string()),
                            },
                        }
                    }
                    Err(e) => AblationOutcome {
                        label,
                        normalization,
                        smoothing,
                        segments,
                        train_loss: None,
                        valid_loss: None,
                        error: Some(e.to_string()),
                    },
                };
                variants.push(outcome);
            }
        }
    }
    AblationReport {
        seed: config.seed,
        variants,
    }
}

/// Manifest written next to a parameter blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsManifest {
    pub model: ModelSpec,
    pub param_count: usize,
    pub seed: u64,
}

/// Writes a JSON manifest plus a little-endian `f64` blob with every layer's
/// parameters in declared order.
pub fn save_params(
    manifest_path: &Path,
    blob_path: &Path,
    spec: &ModelSpec,
    params: &Params,
    seed: u64,
) -> Result<()> {
    let manifest = ParamsManifest {
        model: spec.clone(),
        param_count: params.param_count(),
        seed,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(manifest_path, json)?;
    let mut file = std::fs::File::create(blob_path)?;
    for layer in &params.layers {
        for value in layer.flatten() {
            file.write_all(&value.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a manifest/blob pair back into a model spec and parameters.
pub fn load_params(manifest_path: &Path, blob_path: &Path) -> Result<(ModelSpec, Params)> {
    let manifest: ParamsManifest =
        serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    let mut blob = Vec::new();
    std::fs::File::open(blob_path)?.read_to_end(&mut blob)?;
    if blob.len() != manifest.param_count * 8 {
        return Err(Error::Parse(format!(
            "parameter blob holds {} bytes, manifest declares {} parameters",
            blob.len(),
            manifest.param_count
        )));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut params = init_params(&manifest.model, manifest.seed)?;
    let mut offset = 0;
    for layer in &mut params.layers {
        let count = layer.param_count();
        layer.assign_from_flat(&values[offset..offset + count])?;
        offset += count;
    }
    Ok((manifest.model, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::layer_forward;
    use crate::oracle::{fd_gradient, FiniteDiffSpec};
    use crate::synth::{make_regression_task, TaskKind, TaskSizes};
    use rand::Rng;

    fn two_layer_spec() -> ModelSpec {
        ModelSpec {
            layers: vec![
                LayerSpec::Dense {
                    inputs: 3,
                    nodes: 4,
                    segments: 3,
                },
                LayerSpec::Dense {
                    inputs: 4,
                    nodes: 1,
                    segments: 3,
                },
            ],
            normalization: true,
            smoothing: Smoothing::Fixed { temperature: 50.0 },
            mean_mode: MeanMode::Regressed,
            augment_bias: false,
        }
    }

    #[test]
    fn single_layer_equals_heads_layer_forward() {
        let spec = ModelSpec::dense(4, 3, 2);
        let params = init_params(&spec, 7).unwrap();
        let LayerParams::Dense(nodes) = &params.layers[0] else {
            panic!("dense layer expected");
        };
        let x = [0.2, -0.4, 0.8, 0.1];
        let ours = model_forward(&spec, &params, &x, 0.63).unwrap();
        let reference = layer_forward(nodes, &x, 0.63, None, &MeanMode::Regressed).unwrap();
        assert_eq!(ours, reference);
    }

    #[test]
    fn zero_input_regressed_model_outputs_zero() {
        let spec = two_layer_spec();
        let params = init_params(&spec, 3).unwrap();
        let out = model_forward(&spec, &params, &[0.0; 3], 0.4).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_forward_matches_manual_composition() {
        let spec = two_layer_spec();
        let params = init_params(&spec, 11).unwrap();
        let (LayerParams::Dense(first), LayerParams::Dense(second)) =
            (&params.layers[0], &params.layers[1])
        else {
            panic!("dense layers expected");
        };
        let x = [0.5, -0.1, 0.3];
        let tau = 0.27;
        let mid = layer_forward(first, &x, tau, Some(50.0), &MeanMode::Regressed).unwrap();
        let expected = layer_forward(second, &mid, tau, Some(50.0), &MeanMode::Regressed).unwrap();
        let ours = model_forward(&spec, &params, &x, tau).unwrap();
        for (a, b) in ours.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn spec_validation_catches_mismatch() {
        let spec = ModelSpec {
            layers: vec![
                LayerSpec::Dense {
                    inputs: 3,
                    nodes: 4,
                    segments: 2,
                },
                LayerSpec::Dense {
                    inputs: 5,
                    nodes: 1,
                    segments: 2,
                },
            ],
            normalization: true,
            smoothing: Smoothing::Off,
            mean_mode: MeanMode::Regressed,
            augment_bias: false,
        };
        assert!(spec.layer_dims().is_err());
        let no_nodes = ModelSpec {
            layers: vec![LayerSpec::Reshape {
                channels: 1,
                height: 2,
                width: 2,
            }],
            normalization: true,
            smoothing: Smoothing::Off,
            mean_mode: MeanMode::Regressed,
            augment_bias: false,
        };
        assert!(no_nodes.layer_dims().is_err());
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let spec = two_layer_spec();
        let params = init_params(&spec, 19).unwrap();
        assert!(params.param_count() <= 200);
        let x = [0.4, -0.7, 0.2];
        let tau = 0.37;
        let fd = FiniteDiffSpec::default().with_rel_tol(1e-3);

        let analytic = model_gradients(&spec, &params, &x, tau, &[1.0]).unwrap();
        for layer_idx in 0..spec.layers.len() {
            let base = params.layers[layer_idx].flatten();
            let numeric = fd_gradient(
                |p| {
                    let mut probe = params.clone();
                    probe.layers[layer_idx].assign_from_flat(p)?;
                    Ok(model_forward(&spec, &probe, &x, tau)?[0])
                },
                &base,
                &fd,
            )
            .unwrap();
            let worst = fd.max_disagreement(&analytic[layer_idx], &numeric);
            assert!(worst <= fd.rel_tol, "layer {layer_idx} disagreement {worst}");
        }
    }

    #[test]
    fn conv_layer_gradients_match_finite_differences() {
        let spec = ModelSpec {
            layers: vec![
                LayerSpec::Conv {
                    in_channels: 2,
                    in_height: 4,
                    in_width: 4,
                    nodes: 2,
                    segments: 2,
                    kernel: (3, 3),
                    stride: 1,
                    padding: Padding::Same,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 32,
                    nodes: 1,
                    segments: 2,
                },
            ],
            normalization: true,
            smoothing: Smoothing::Fixed { temperature: 30.0 },
            mean_mode: MeanMode::Regressed,
            augment_bias: false,
        };
        let params = init_params(&spec, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tau = 0.41;
        let fd = FiniteDiffSpec::default().with_rel_tol(1e-3);
        let analytic = model_gradients(&spec, &params, &x, tau, &[1.0]).unwrap();
        let base = params.layers[0].flatten();
        let numeric = fd_gradient(
            |p| {
                let mut probe = params.clone();
                probe.layers[0].assign_from_flat(p)?;
                Ok(model_forward(&spec, &probe, &x, tau)?[0])
            },
            &base,
            &fd,
        )
        .unwrap();
        let worst = fd.max_disagreement(&analytic[0], &numeric);
        assert!(worst <= fd.rel_tol, "conv disagreement {worst}");
    }

    #[test]
    fn mean_identity_survives_the_head() {
        // The temporal mean of a normalized single-layer model equals the
        // regressed target mean, checked by integrating the output curve.
        let spec = ModelSpec::dense(3, 1, 3);
        let params = init_params(&spec, 23).unwrap();
        let LayerParams::Dense(nodes) = &params.layers[0] else {
            panic!()
        };
        let x = [0.3, -0.8, 0.5];
        let expected: f64 = nodes[0].mean_w.iter().zip(&x).map(|(w, v)| w * v).sum();
        let mean = crate::oracle::quad_integral(
            |tau| model_forward(&spec, &params, &x, tau).unwrap()[0],
            2_000_000,
        );
        assert!((mean - expected).abs() < 1e-6, "{mean} vs {expected}");
    }

    #[test]
    fn constant_task_trains_to_tiny_loss() {
        let sizes = TaskSizes {
            samples: 256,
            input_dim: 3,
            hidden_segments: 2,
        };
        let dataset = make_regression_task(TaskKind::Constant, &sizes, 3).unwrap();
        // Bias-free heads cannot express a nonzero constant; the augmented
        // constant-1 feature makes the task trivially representable.
        let mut spec = ModelSpec::dense(3, 1, 3);
        spec.augment_bias = true;
        let config = TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        };
        let (_, report) = train(&spec, &config, &dataset).unwrap();
        assert!(report.final_loss < 1e-4, "final loss {}", report.final_loss);
    }

    #[test]
    fn pwl_field_task_loss_drops_an_order_of_magnitude() {
        let sizes = TaskSizes {
            samples: 512,
            input_dim: 3,
            hidden_segments: 2,
        };
        let dataset = make_regression_task(TaskKind::PwlField, &sizes, 9).unwrap();
        let mut spec = ModelSpec::dense(3, 1, 2);
        spec.normalization = true;
        spec.smoothing = Smoothing::Fixed { temperature: 50.0 };
        let config = TrainConfig {
            epochs: 300,
            ..TrainConfig::default()
        };
        let (_, report) = train(&spec, &config, &dataset).unwrap();
        let first = report.epoch_losses[0];
        assert!(
            report.final_loss * 10.0 <= first,
            "first {first}, final {}",
            report.final_loss
        );
    }

    #[test]
    fn training_is_deterministic() {
        let sizes = TaskSizes {
            samples: 128,
            input_dim: 2,
            hidden_segments: 2,
        };
        let dataset = make_regression_task(TaskKind::SineInTau, &sizes, 4).unwrap();
        let spec = ModelSpec::dense(2, 1, 3);
        let config = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let (params_a, report_a) = train(&spec, &config, &dataset).unwrap();
        let (params_b, report_b) = train(&spec, &config, &dataset).unwrap();
        assert_eq!(report_a.epoch_losses, report_b.epoch_losses);
        assert_eq!(params_a, params_b);
    }

    #[test]
    fn ablation_sweeps_all_variants() {
        let sizes = TaskSizes {
            samples: 200,
            input_dim: 2,
            hidden_segments: 2,
        };
        let dataset = make_regression_task(TaskKind::PwlField, &sizes, 6).unwrap();
        let spec = ModelSpec::dense(2, 1, 2);
        let config = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        let axes = AblationAxes {
            normalization: true,
            smoothing: false,
            segment_counts: vec![],
        };
        let report = ablate(&spec, &config, &dataset, &axes);
        assert_eq!(report.variants.len(), 2);
        assert!(report.variants.iter().all(|v| v.error.is_none()));
        // Empty axes mean a single baseline run.
        let baseline = ablate(&spec, &config, &dataset, &AblationAxes::default());
        assert_eq!(baseline.variants.len(), 1);
    }

    #[test]
    fn params_round_trip_through_disk() {
        let dir = std::env::temp_dir().join(format!("ppln-params-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let spec = two_layer_spec();
        let params = init_params(&spec, 77).unwrap();
        let manifest = dir.join("params.json");
        let blob = dir.join("params.bin");
        save_params(&manifest, &blob, &spec, &params, 77).unwrap();
        let (spec_back, params_back) = load_params(&manifest, &blob).unwrap();
        assert_eq!(spec, spec_back);
        assert_eq!(params, params_back);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
