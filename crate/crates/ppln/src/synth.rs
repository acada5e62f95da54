//! Seeded synthetic data: ground-truth segment sets, noisy point samples,
//! and small regression tasks.
//!
//! Every generator is a pure function of its spec and seed. Each quantity
//! (endpoints, slopes, intercepts, sample placement, noise, task inputs)
//! draws from its own ChaCha stream so that, for example, asking for more
//! samples never perturbs the generated truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::SampleSet;
use crate::heads::{self, MeanMode, NodeWeights};
use crate::plf::{endpoints_from_sizes, SegmentSet, MIN_ENDPOINT_GAP};

/// Per-purpose RNG streams derived from one seed.
#[derive(Clone, Copy)]
enum Stream {
    Endpoints = 0,
    Slopes = 1,
    Intercepts = 2,
    Placement = 3,
    Noise = 4,
    TaskInputs = 5,
    TaskWeights = 6,
}

fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Noise applied to sampled values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseModel {
    /// Uniform on `[-bound, bound]`; `bound = 0` means noiseless.
    Uniform { bound: f64 },
    /// Zero-mean Gaussian with the given standard deviation (unbounded).
    Gaussian { sigma: f64 },
}

/// Placement of sample times on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauPlacement {
    /// `j / (m - 1)` for `j = 0 .. m-1`.
    Equispaced,
    /// Both unit-interval endpoints plus `m - 2` seeded uniform draws.
    Uniform,
}

/// Specification for generating a ground truth and samples from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub segments: usize,
    pub slope_range: (f64, f64),
    pub intercept_range: (f64, f64),
    /// Minimum segment length of the generated truth.
    pub min_gap: f64,
    pub samples: usize,
    pub noise: NoiseModel,
    pub placement: TauPlacement,
    /// Chain intercepts so the truth is continuous at every breakpoint.
    /// A discontinuous truth cannot be recovered to small supremum error:
    /// any breakpoint mismatch, however tiny, pays the whole jump.
    #[serde(default)]
    pub continuous: bool,
    pub seed: u64,
}

impl SynthSpec {
    /// Defaults matching the desk-scale experiments: bounded slopes and
    /// intercepts, a healthy minimum segment length, equispaced samples.
    pub fn new(segments: usize, samples: usize, noise_bound: f64, seed: u64) -> Self {
        SynthSpec {
            segments,
            slope_range: (-0.9, 0.9),
            intercept_range: (-0.5, 0.5),
            min_gap: 0.1,
            samples,
            noise: NoiseModel::Uniform { bound: noise_bound },
            placement: TauPlacement::Equispaced,
            continuous: false,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::Domain("segment count must be at least 1".into()));
        }
        if self.min_gap < MIN_ENDPOINT_GAP {
            return Err(Error::Domain(format!(
                "minimum gap {} is below the representable minimum {}",
                self.min_gap, MIN_ENDPOINT_GAP
            )));
        }
        if self.segments as f64 * self.min_gap > 1.0 {
            return Err(Error::Domain(format!(
                "{} segments with minimum gap {} cannot partition the unit interval",
                self.segments, self.min_gap
            )));
        }
        if self.samples < 2 {
            return Err(Error::Domain("at least two samples required".into()));
        }
        for (name, (lo, hi)) in [
            ("slope", self.slope_range),
            ("intercept", self.intercept_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Domain(format!("invalid {name} range ({lo}, {hi})")));
            }
        }
        match self.noise {
            NoiseModel::Uniform { bound } if !(bound >= 0.0) => {
                Err(Error::Domain(format!("noise bound {bound} must be >= 0")))
            }
            NoiseModel::Gaussian { sigma } if !(sigma >= 0.0) => {
                Err(Error::Domain(format!("noise sigma {sigma} must be >= 0")))
            }
            _ => Ok(()),
        }
    }
}

/// Draws a ground-truth segment set: interval sizes floored at the spec's
/// minimum gap, slopes and intercepts uniform in their ranges.
pub fn random_segment_set(spec: &SynthSpec) -> Result<SegmentSet> {
    spec.validate()?;
    let n = spec.segments;

    let endpoints = if n == 1 {
        vec![0.0, 1.0]
    } else {
        let mut rng = stream_rng(spec.seed, Stream::Endpoints);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let slack = 1.0 - n as f64 * spec.min_gap;
        let sizes: Vec<f64> = raw
            .iter()
            .map(|r| spec.min_gap + slack * r / total)
            .collect();
        endpoints_from_sizes(&sizes)?
    };

    let mut slope_rng = stream_rng(spec.seed, Stream::Slopes);
    let slopes: Vec<f64> = (0..n)
        .map(|_| slope_rng.gen_range(spec.slope_range.0..spec.slope_range.1))
        .collect();
    let mut intercept_rng = stream_rng(spec.seed, Stream::Intercepts);
    let intercepts: Vec<f64> = if spec.continuous {
        // First intercept free, the rest chained to meet at breakpoints.
        let mut intercepts = vec![intercept_rng
            .gen_range(spec.intercept_range.0..spec.intercept_range.1)];
        for i in 1..n {
            let b = intercepts[i - 1] + (slopes[i - 1] - slopes[i]) * endpoints[i];
            intercepts.push(b);
        }
        intercepts
    } else {
        (0..n)
            .map(|_| intercept_rng.gen_range(spec.intercept_range.0..spec.intercept_range.1))
            .collect()
    };

    SegmentSet::new(slopes, intercepts, endpoints)
}

/// Samples the truth at seeded times and applies the spec's noise model.
///
/// The sample times always include 0 and 1, and the recorded noise bound is a
/// true upper bound on the realized noise (the configured bound for uniform
/// noise, the realized maximum for Gaussian noise).
pub fn sample_from(theta: &SegmentSet, spec: &SynthSpec) -> Result<SampleSet> {
    spec.validate()?;
    let m = spec.samples;
    let taus: Vec<f64> = match spec.placement {
        TauPlacement::Equispaced => (0..m).map(|j| j as f64 / (m - 1) as f64).collect(),
        TauPlacement::Uniform => {
            let mut rng = stream_rng(spec.seed, Stream::Placement);
            let mut taus = vec![0.0, 1.0];
            taus.extend((0..m - 2).map(|_| rng.gen_range(0.0..1.0)));
            taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
            taus
        }
    };

    let mut noise_rng = stream_rng(spec.seed, Stream::Noise);
    let mut realized_max = 0.0f64;
    let mut vs = Vec::with_capacity(m);
    for &tau in &taus {
        let noise = match spec.noise {
            NoiseModel::Uniform { bound } => {
                if bound == 0.0 {
                    0.0
                } else {
                    noise_rng.gen_range(-bound..=bound)
                }
            }
            NoiseModel::Gaussian { sigma } => {
                if sigma == 0.0 {
                    0.0
                } else {
                    // Box-Muller keeps the stream layout explicit.
                    let u1: f64 = noise_rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = noise_rng.gen_range(0.0..1.0);
                    sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                }
            }
        };
        realized_max = realized_max.max(noise.abs());
        vs.push(theta.eval(tau)? + noise);
    }

    let bound = match spec.noise {
        NoiseModel::Uniform { bound } => bound,
        NoiseModel::Gaussian { .. } => realized_max,
    };
    SampleSet::new(taus, vs, Some(bound))
}

/// Built-in regression tasks mapping `(x, tau)` to a scalar target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// `y = c` everywhere.
    Constant,
    /// `y = A(x) sin(2 pi tau + phi(x))` with `A`, `phi` linear in `x`.
    SineInTau,
    /// `y` is the output of a hidden node: a per-input piecewise-linear
    /// function of `tau`, integral-normalized toward a regressed mean. A
    /// node with the same segment count represents the task exactly.
    PwlField,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(TaskKind::Constant),
            "sine-in-tau" => Ok(TaskKind::SineInTau),
            "pwl-field" => Ok(TaskKind::PwlField),
            other => Err(Error::Domain(format!(
                "unknown task '{other}' (expected constant, sine-in-tau, or pwl-field)"
            ))),
        }
    }
}

/// Sizing knobs for [`make_regression_task`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSizes {
    pub samples: usize,
    pub input_dim: usize,
    /// Segment count of the hidden generator (pwl-field only).
    pub hidden_segments: usize,
}

impl Default for TaskSizes {
    fn default() -> Self {
        TaskSizes {
            samples: 2000,
            input_dim: 3,
            hidden_segments: 3,
        }
    }
}

/// One supervised example: features, query time, target.
#[derive(Debug, Clone, PartialEq)]
pub struct DataRow {
    pub x: Vec<f64>,
    pub tau: f64,
    pub y: Vec<f64>,
}

/// An in-memory supervised dataset with fixed input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_dim: usize,
    pub output_dim: usize,
    pub rows: Vec<DataRow>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Splits off the last `fraction` of rows as a validation set.
    pub fn split_validation(&self, fraction: f64) -> (Dataset, Dataset) {
        let hold = ((self.rows.len() as f64) * fraction).round() as usize;
        let cut = self.rows.len().saturating_sub(hold.max(1));
        let train = Dataset {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            rows: self.rows[..cut].to_vec(),
        };
        let valid = Dataset {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            rows: self.rows[cut..].to_vec(),
        };
        (train, valid)
    }

    /// Writes `x0,..,x{k-1},tau,y` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.input_dim {
            out.push_str(&format!("x{i},"));
        }
        out.push_str("tau,y\n");
        for row in &self.rows {
            for v in &row.x {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{},{}\n", row.tau, row.y[0]));
        }
        out
    }

    /// Parses the format written by [`Dataset::to_csv`]; errors carry the
    /// 1-based line number.
    pub fn from_csv(text: &str) -> Result<Dataset> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("line 1: empty dataset file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[cols.len() - 2] != "tau" || cols[cols.len() - 1] != "y" {
            return Err(Error::Parse("line 1: expected header 'x0,..,tau,y'".into()));
        }
        let input_dim = cols.len() - 2;
        let mut rows = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != input_dim + 2 {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, found {}",
                    idx + 1,
                    input_dim + 2,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: invalid number '{}'", idx + 1, s)))
            };
            let x: Vec<f64> = fields[..input_dim]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<_>>()?;
            let tau = parse(fields[input_dim])?;
            let y = parse(fields[input_dim + 1])?;
            rows.push(DataRow { x, tau, y: vec![y] });
        }
        Ok(Dataset {
            input_dim,
            output_dim: 1,
            rows,
        })
    }
}

/// Generates one of the built-in regression tasks.
///
/// Inputs are uniform on `[-1, 1]^k`, times uniform on `[0, 1]`; everything
/// is a pure function of `(task, sizes, seed)`.
pub fn make_regression_task(task: TaskKind, sizes: &TaskSizes, seed: u64) -> Result<Dataset> {
    if sizes.samples == 0 || sizes.input_dim == 0 {
        return Err(Error::Domain("task sizes must be positive".into()));
    }
    let k = sizes.input_dim;
    let mut input_rng = stream_rng(seed, Stream::TaskInputs);
    let mut weight_rng = stream_rng(seed, Stream::TaskWeights);

    let hidden: Option<NodeWeights> = match task {
        TaskKind::PwlField => Some(heads::random_node_weights(
            sizes.hidden_segments,
            k,
            &mut weight_rng,
        )),
        _ => None,
    };
    // Fixed linear maps for amplitude and phase in the sine task.
    let amp_w: Vec<f64> = (0..k).map(|_| weight_rng.gen_range(-1.0..1.0)).collect();
    let phase_w: Vec<f64> = (0..k).map(|_| weight_rng.gen_range(-1.0..1.0)).collect();

    let mut rows = Vec::with_capacity(sizes.samples);
    for _ in 0..sizes.samples {
        let x: Vec<f64> = (0..k).map(|_| input_rng.gen_range(-1.0..1.0)).collect();
        let tau: f64 = input_rng.gen_range(0.0..=1.0);
        let y = match task {
            TaskKind::Constant => 0.75,
            TaskKind::SineInTau => {
                let amp: f64 = amp_w.iter().zip(&x).map(|(w, v)| w * v).sum();
                let phase: f64 = phase_w.iter().zip(&x).map(|(w, v)| w * v).sum();
                amp * (2.0 * std::f64::consts::PI * tau + phase).sin()
            }
            TaskKind::PwlField => {
                let w = hidden.as_ref().unwrap();
                let (theta, mean) = heads::predict_coefficients(w, &x, &MeanMode::Regressed)?;
                theta.eval_normalized(mean, tau, None)?
            }
        };
        rows.push(DataRow { x, tau, y: vec![y] });
    }
    Ok(Dataset {
        input_dim: k,
        output_dim: 1,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::uniform_sampling_constant;

    #[test]
    fn single_segment_truth_spans_unit_interval() {
        let spec = SynthSpec::new(1, 10, 0.0, 3);
        let theta = random_segment_set(&spec).unwrap();
        assert_eq!(theta.endpoints(), &[0.0, 1.0]);
    }

    #[test]
    fn same_seed_same_truth() {
        let spec = SynthSpec::new(3, 50, 0.01, 99);
        assert_eq!(
            random_segment_set(&spec).unwrap(),
            random_segment_set(&spec).unwrap()
        );
        let theta = random_segment_set(&spec).unwrap();
        let a = sample_from(&theta, &spec).unwrap();
        let b = sample_from(&theta, &spec).unwrap();
        assert_eq!(a.taus(), b.taus());
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn generated_gaps_respect_minimum() {
        for seed in 0..100 {
            let mut spec = SynthSpec::new(3, 10, 0.0, seed);
            spec.min_gap = 0.1;
            let theta = random_segment_set(&spec).unwrap();
            for w in theta.endpoints().windows(2) {
                assert!(w[1] - w[0] >= 0.1 - 1e-12, "seed {seed}");
            }
        }
    }

    #[test]
    fn infeasible_gap_is_rejected() {
        let mut spec = SynthSpec::new(4, 10, 0.0, 1);
        spec.min_gap = 0.3;
        assert!(random_segment_set(&spec).is_err());
    }

    #[test]
    fn noiseless_samples_lie_on_truth() {
        let spec = SynthSpec::new(2, 40, 0.0, 7);
        let theta = random_segment_set(&spec).unwrap();
        let samples = sample_from(&theta, &spec).unwrap();
        for (&tau, &v) in samples.taus().iter().zip(samples.values()) {
            assert_eq!(v, theta.eval(tau).unwrap());
        }
        assert_eq!(samples.taus()[0], 0.0);
        assert_eq!(*samples.taus().last().unwrap(), 1.0);
    }

    #[test]
    fn uniform_noise_stays_within_bound() {
        let spec = SynthSpec::new(2, 200, 0.05, 11);
        let theta = random_segment_set(&spec).unwrap();
        let samples = sample_from(&theta, &spec).unwrap();
        assert_eq!(samples.noise_bound(), Some(0.05));
        for (&tau, &v) in samples.taus().iter().zip(samples.values()) {
            assert!((v - theta.eval(tau).unwrap()).abs() <= 0.05);
        }
    }

    #[test]
    fn gaussian_noise_records_realized_max() {
        let mut spec = SynthSpec::new(2, 100, 0.0, 13);
        spec.noise = NoiseModel::Gaussian { sigma: 0.1 };
        let theta = random_segment_set(&spec).unwrap();
        let samples = sample_from(&theta, &spec).unwrap();
        let bound = samples.noise_bound().unwrap();
        let max = samples
            .taus()
            .iter()
            .zip(samples.values())
            .map(|(&tau, &v)| (v - theta.eval(tau).unwrap()).abs())
            .fold(0.0f64, f64::max);
        assert!(bound > 0.0);
        assert!((bound - max).abs() < 1e-12);
    }

    #[test]
    fn equispaced_placement_satisfies_sampling_assumption() {
        let spec = SynthSpec::new(2, 100, 0.0, 17);
        let theta = random_segment_set(&spec).unwrap();
        let samples = sample_from(&theta, &spec).unwrap();
        let c = uniform_sampling_constant(samples.taus()).unwrap();
        assert!(c <= 4.0, "constant {c}");
    }

    #[test]
    fn constant_task_targets_are_equal() {
        let sizes = TaskSizes {
            samples: 32,
            ..TaskSizes::default()
        };
        let ds = make_regression_task(TaskKind::Constant, &sizes, 1).unwrap();
        assert!(ds.rows.iter().all(|r| r.y[0] == 0.75));
    }

    #[test]
    fn tasks_are_deterministic_per_seed() {
        let sizes = TaskSizes {
            samples: 64,
            input_dim: 3,
            hidden_segments: 2,
        };
        let a = make_regression_task(TaskKind::PwlField, &sizes, 42).unwrap();
        let b = make_regression_task(TaskKind::PwlField, &sizes, 42).unwrap();
        assert_eq!(a, b);
        let c = make_regression_task(TaskKind::PwlField, &sizes, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let sizes = TaskSizes {
            samples: 16,
            input_dim: 2,
            hidden_segments: 2,
        };
        let ds = make_regression_task(TaskKind::SineInTau, &sizes, 5).unwrap();
        let text = ds.to_csv();
        let back = Dataset::from_csv(&text).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn dataset_csv_reports_bad_line() {
        let text = "x0,x1,tau,y\n0.1,0.2,0.3,0.4\n0.1,oops,0.3,0.4\n";
        let err = Dataset::from_csv(text).unwrap_err();
        assert!(err.to_string().contains("line 3"));
    }
}
