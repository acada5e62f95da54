use std::path::PathBuf;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ppln::grad::{grad_normalized, grad_smoothed, grad_unsmoothed, grad_value, pack_params, unpack_params};
use ppln::heads::{MeanMode, Padding};
use ppln::net::{init_params, model_forward, model_gradients, LayerSpec, ModelSpec, Smoothing};
use ppln::oracle::{fd_gradient, FiniteDiffSpec};
use ppln::synth::{random_segment_set, SynthSpec};

use crate::manifest::ManifestBuilder;
use crate::{resolve_out_dir, usage, AppError, AppResult};

#[derive(Args)]
pub struct GradcheckArgs {
    /// Randomized configurations per operation.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Restrict to one module: grad | heads | net.
    #[arg(long)]
    pub module: Option<String>,
    /// Output directory (default: $PPLN_OUT or the cwd).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct OpReport {
    module: &'static str,
    operation: String,
    trials: usize,
    max_disagreement: f64,
    tolerance: f64,
    worst_coordinate: usize,
    passed: bool,
}

struct Checker {
    rng: ChaCha8Rng,
    trials: usize,
    reports: Vec<OpReport>,
}

impl Checker {
    fn record(
        &mut self,
        module: &'static str,
        operation: &str,
        tolerance: f64,
        mut one_trial: impl FnMut(&mut ChaCha8Rng) -> ppln::Result<(Vec<f64>, Vec<f64>)>,
    ) -> ppln::Result<()> {
        let spec = FiniteDiffSpec::default().with_rel_tol(tolerance);
        let mut worst = 0.0f64;
        let mut worst_coord = 0;
        for _ in 0..self.trials {
            let (analytic, numeric) = one_trial(&mut self.rng)?;
            for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
                let d = spec.disagreement(a, n);
                if d > worst {
                    worst = d;
                    worst_coord = i;
                }
            }
        }
        self.reports.push(OpReport {
            module,
            operation: operation.to_string(),
            trials: self.trials,
            max_disagreement: worst,
            tolerance,
            worst_coordinate: worst_coord,
            passed: worst <= tolerance,
        });
        Ok(())
    }
}

fn check_grad_module(c: &mut Checker) -> ppln::Result<()> {
    let fd = FiniteDiffSpec::default();

    c.record("grad", "eval (raw)", 1e-4, |rng| {
        let n = rng.gen_range(2..=5);
        let seed = rng.gen::<u64>();
        let theta = random_segment_set(&SynthSpec::new(n, 10, 0.0, seed))?;
        let tau = loop {
            let t = rng.gen_range(0.01..0.99);
            if theta.endpoints().iter().all(|e| (t - e).abs() > 1e-3) {
                break t;
            }
        };
        let analytic = grad_unsmoothed(&theta, tau)?.flatten();
        let numeric = fd_gradient(|p| unpack_params(n, p)?.eval(tau), &pack_params(&theta), &fd)?;
        Ok((analytic, numeric))
    })?;

    c.record("grad", "eval (normalized)", 1e-4, |rng| {
        let n = rng.gen_range(2..=5);
        let seed = rng.gen::<u64>();
        let theta = random_segment_set(&SynthSpec::new(n, 10, 0.0, seed))?;
        let tau = loop {
            let t = rng.gen_range(0.01..0.99);
            if theta.endpoints().iter().all(|e| (t - e).abs() > 1e-3) {
                break t;
            }
        };
        let target = rng.gen_range(-1.0..1.0);
        let analytic = grad_normalized(&theta, tau)?.flatten();
        let numeric = fd_gradient(
            |p| unpack_params(n, p)?.eval_normalized(target, tau, None),
            &pack_params(&theta),
            &fd,
        )?;
        Ok((analytic, numeric))
    })?;

    for &temperature in &[1.0, 10.0, 100.0] {
        c.record(
            "grad",
            &format!("eval (smoothed, T={temperature})"),
            1e-4,
            |rng| {
                let n = rng.gen_range(2..=5);
                let seed = rng.gen::<u64>();
                let theta = random_segment_set(&SynthSpec::new(n, 10, 0.0, seed))?;
                let tau = rng.gen_range(0.0..=1.0);
                let analytic = grad_smoothed(&theta, tau, temperature)?.flatten();
                let numeric = fd_gradient(
                    |p| unpack_params(n, p)?.eval_smoothed(tau, temperature),
                    &pack_params(&theta),
                    &fd,
                )?;
                Ok((analytic, numeric))
            },
        )?;
    }

    c.record("grad", "eval (normalized + smoothed)", 1e-4, |rng| {
        let n = rng.gen_range(2..=5);
        let seed = rng.gen::<u64>();
        let theta = random_segment_set(&SynthSpec::new(n, 10, 0.0, seed))?;
        let tau = rng.gen_range(0.0..=1.0);
        let target = rng.gen_range(-1.0..1.0);
        let analytic = grad_value(&theta, tau, Some(25.0), true)?.flatten();
        let numeric = fd_gradient(
            |p| unpack_params(n, p)?.eval_normalized(target, tau, Some(25.0)),
            &pack_params(&theta),
            &fd,
        )?;
        Ok((analytic, numeric))
    })?;

    Ok(())
}

fn model_weight_check(
    c: &mut Checker,
    module: &'static str,
    operation: &str,
    spec: ModelSpec,
    tolerance: f64,
) -> ppln::Result<()> {
    let fd = FiniteDiffSpec::default().with_rel_tol(tolerance);
    let input_dim = spec.input_dim()?;
    c.record(module, operation, tolerance, |rng| {
        let params = init_params(&spec, rng.gen::<u64>())?;
        let x: Vec<f64> = (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tau = rng.gen_range(0.05..0.95);
        let upstream = vec![1.0; spec.output_dim()?];
        let analytic: Vec<f64> = model_gradients(&spec, &params, &x, tau, &upstream)?
            .into_iter()
            .flatten()
            .collect();
        let mut numeric = Vec::with_capacity(analytic.len());
        for layer_idx in 0..spec.layers.len() {
            let base = params.layers[layer_idx].flatten();
            if base.is_empty() {
                continue;
            }
            let layer_numeric = fd_gradient(
                |p| {
                    let mut probe = params.clone();
                    probe.layers[layer_idx].assign_from_flat(p)?;
                    Ok(model_forward(&spec, &probe, &x, tau)?.iter().sum())
                },
                &base,
                &fd,
            )?;
            numeric.extend(layer_numeric);
        }
        Ok((analytic, numeric))
    })
}

fn check_heads_module(c: &mut Checker) -> ppln::Result<()> {
    let dense = ModelSpec {
        layers: vec![LayerSpec::Dense {
            inputs: 4,
            nodes: 1,
            segments: 3,
        }],
        normalization: true,
        smoothing: Smoothing::Fixed { temperature: 30.0 },
        mean_mode: MeanMode::Regressed,
        augment_bias: false,
    };
    model_weight_check(c, "heads", "node_forward weights", dense, 1e-4)?;

    let conv = ModelSpec {
        layers: vec![LayerSpec::Conv {
            in_channels: 2,
            in_height: 4,
            in_width: 4,
            nodes: 2,
            segments: 2,
            kernel: (3, 3),
            stride: 1,
            padding: Padding::Same,
        }],
        normalization: true,
        smoothing: Smoothing::Fixed { temperature: 30.0 },
        mean_mode: MeanMode::Regressed,
        augment_bias: false,
    };
    model_weight_check(c, "heads", "conv_node_forward weights", conv, 1e-4)?;
    Ok(())
}

fn check_net_module(c: &mut Checker) -> ppln::Result<()> {
    let spec = ModelSpec {
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
    };
    model_weight_check(c, "net", "two-layer model weights", spec, 1e-3)
}

pub fn run(args: GradcheckArgs) -> AppResult<()> {
    if args.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let module = args.module.as_deref().unwrap_or("all");
    if !matches!(module, "all" | "grad" | "heads" | "net") {
        return Err(usage(format!(
            "--module unknown module '{module}' (expected grad, heads, or net)"
        )));
    }

    let out_dir = resolve_out_dir(&args.out);
    let mut manifest = ManifestBuilder::new(
        "gradcheck",
        serde_json::json!({ "trials": args.trials, "seed": args.seed, "module": module }),
        args.seed,
        &out_dir,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    rng.set_stream(9);
    let mut checker = Checker {
        rng,
        trials: args.trials,
        reports: Vec::new(),
    };
    if matches!(module, "all" | "grad") {
        check_grad_module(&mut checker)?;
    }
    if matches!(module, "all" | "heads") {
        check_heads_module(&mut checker)?;
    }
    if matches!(module, "all" | "net") {
        check_net_module(&mut checker)?;
    }
    let reports = checker.reports;

    for r in &reports {
        println!(
            "{:<7} {:<34} max_rel_err {:>10.3e}  tol {:>7.0e}  {}",
            r.module,
            r.operation,
            r.max_disagreement,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    let json = serde_json::to_string_pretty(&reports).map_err(ppln::Error::from)?;
    manifest.write_output("gradcheck.json", json.as_bytes())?;
    manifest.finish()?;

    let failures: Vec<&OpReport> = reports.iter().filter(|r| !r.passed).collect();
    if failures.is_empty() {
        println!("all gradient checks passed");
        Ok(())
    } else {
        let detail = failures
            .iter()
            .map(|r| {
                format!(
                    "{} ({}): max_rel_err {:.3e} at coordinate {}",
                    r.operation, r.module, r.max_disagreement, r.worst_coordinate
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        Err(AppError::Runtime(ppln::Error::Oracle(format!(
            "gradient checks failed: {detail}"
        ))))
    }
}
