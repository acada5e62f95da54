use std::path::PathBuf;

use clap::Args;

use ppln::fit::{fit_piecewise_linear, fitted_curve, sup_distance, FitConfig, FitInit, SampleSet};
use ppln::SegmentSet;

use crate::commands::{parse_switch, plot_grid};
use crate::manifest::ManifestBuilder;
use crate::{resolve_out_dir, usage, AppResult};

#[derive(Args)]
pub struct FitArgs {
    /// Samples CSV with header `tau,v`.
    #[arg(long)]
    pub input: PathBuf,
    /// Ground-truth segment set JSON for sup-error reporting.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Base configuration JSON (a serialized fit config); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub segments: Option<usize>,
    /// Initial temperature of the ladder.
    #[arg(long)]
    pub t0: Option<f64>,
    /// Geometric temperature growth factor.
    #[arg(long)]
    pub gamma_t: Option<f64>,
    /// Temperature cap.
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Gradient infinity-norm threshold ending an inner loop.
    #[arg(long)]
    pub eps_grad: Option<f64>,
    #[arg(long)]
    pub max_inner_iters: Option<usize>,
    /// Base learning rate (per-step rate is eta0 / T).
    #[arg(long)]
    pub eta0: Option<f64>,
    /// Initialization: uniform | warm.
    #[arg(long)]
    pub init: Option<String>,
    /// Integral normalization: on | off.
    #[arg(long)]
    pub normalization: Option<String>,
    /// Boundary smoothing: on | off.
    #[arg(long)]
    pub smoothing: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: $PPLN_OUT or the cwd).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn resolve_config(args: &FitArgs) -> AppResult<FitConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(ppln::Error::from)?;
            serde_json::from_str(&text).map_err(ppln::Error::from)?
        }
        None => FitConfig {
            segments: 3,
            ..FitConfig::default()
        },
    };
    if let Some(segments) = args.segments {
        if segments == 0 {
            return Err(usage("--segments must be at least 1"));
        }
        config.segments = segments;
    }
    if let Some(t0) = args.t0 {
        config.initial_temperature = t0;
    }
    if let Some(gamma) = args.gamma_t {
        config.temperature_growth = gamma;
    }
    if let Some(t_max) = args.t_max {
        config.max_temperature = t_max;
    }
    if let Some(eps) = args.eps_grad {
        config.grad_tolerance = eps;
    }
    if let Some(iters) = args.max_inner_iters {
        config.max_inner_iters = iters;
    }
    if let Some(eta0) = args.eta0 {
        config.base_learning_rate = eta0;
    }
    if let Some(init) = &args.init {
        config.init = match init.as_str() {
            "uniform" => FitInit::Uniform,
            "warm" => FitInit::WarmStart,
            other => return Err(usage(format!("--init unknown initialization '{other}'"))),
        };
    }
    if let Some(v) = &args.normalization {
        config.normalization = parse_switch("--normalization", v)?;
    }
    if let Some(v) = &args.smoothing {
        config.smoothing = parse_switch("--smoothing", v)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn run(args: FitArgs) -> AppResult<()> {
    let config = resolve_config(&args)?;
    let out_dir = resolve_out_dir(&args.out);
    let mut manifest = ManifestBuilder::new(
        "fit",
        serde_json::to_value(&config).map_err(ppln::Error::from)?,
        config.seed,
        &out_dir,
    );

    let text = std::fs::read_to_string(&args.input).map_err(ppln::Error::from)?;
    let samples = SampleSet::from_csv(&text)?;
    manifest.record_input(&args.input)?;

    let truth: Option<SegmentSet> = match &args.truth {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(ppln::Error::from)?;
            manifest.record_input(path)?;
            Some(serde_json::from_str(&text).map_err(ppln::Error::from)?)
        }
        None => None,
    };

    let (theta, mut report) = fit_piecewise_linear(&samples, &config)?;
    let curve = fitted_curve(&theta, &samples, &config);
    report.final_theta = curve.clone();
    if let Some(truth) = &truth {
        report.sup_error = Some(sup_distance(&curve, truth));
    }

    let theta_json = serde_json::to_string_pretty(&curve).map_err(ppln::Error::from)?;
    manifest.write_output("theta.json", theta_json.as_bytes())?;
    let report_json = serde_json::to_string_pretty(&report).map_err(ppln::Error::from)?;
    manifest.write_output("report.json", report_json.as_bytes())?;

    let mut csv = String::from(if truth.is_some() {
        "tau,fitted,truth\n"
    } else {
        "tau,fitted\n"
    });
    for tau in plot_grid(1000) {
        let fitted = curve.eval(tau)?;
        match &truth {
            Some(t) => csv.push_str(&format!("{tau},{fitted},{}\n", t.eval(tau)?)),
            None => csv.push_str(&format!("{tau},{fitted}\n")),
        }
    }
    manifest.write_output("curve.csv", csv.as_bytes())?;
    manifest.finish()?;

    match report.sup_error {
        Some(sup) => println!(
            "fit done: {} iterations, final loss {:.6e}, sup error {:.6e}",
            report.iterations, report.final_loss, sup
        ),
        None => println!(
            "fit done: {} iterations, final loss {:.6e}",
            report.iterations, report.final_loss
        ),
    }
    println!("endpoint_moved: {}", report.endpoint_moved);
    Ok(())
}
