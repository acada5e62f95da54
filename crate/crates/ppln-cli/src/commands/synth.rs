use std::path::PathBuf;

use clap::Args;

use ppln::synth::{random_segment_set, sample_from, NoiseModel, SynthSpec, TauPlacement};

use crate::manifest::ManifestBuilder;
use crate::{resolve_out_dir, usage, AppResult};

#[derive(Args)]
pub struct SynthArgs {
    /// Number of line segments in the generated truth.
    #[arg(long, default_value_t = 3)]
    pub segments: usize,
    /// Number of samples.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Noise level: the bound of uniform noise or the sigma of Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Noise model: uniform | gaussian.
    #[arg(long, default_value = "uniform")]
    pub noise_model: String,
    /// Sample placement: equispaced | uniform.
    #[arg(long, default_value = "equispaced")]
    pub placement: String,
    /// Chain intercepts so the truth is continuous at breakpoints.
    #[arg(long, default_value_t = false)]
    pub continuous: bool,
    /// Minimum segment length of the truth.
    #[arg(long, default_value_t = 0.1)]
    pub min_gap: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (default: $PPLN_OUT or the cwd).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: SynthArgs) -> AppResult<()> {
    if args.segments == 0 {
        return Err(usage("--segments must be at least 1"));
    }
    if args.samples < 2 {
        return Err(usage("--samples must be at least 2"));
    }
    if !(args.noise >= 0.0) {
        return Err(usage("--noise must be >= 0"));
    }
    let noise = match args.noise_model.as_str() {
        "uniform" => NoiseModel::Uniform { bound: args.noise },
        "gaussian" => NoiseModel::Gaussian { sigma: args.noise },
        other => return Err(usage(format!("--noise-model unknown model '{other}'"))),
    };
    let placement = match args.placement.as_str() {
        "equispaced" => TauPlacement::Equispaced,
        "uniform" => TauPlacement::Uniform,
        other => return Err(usage(format!("--placement unknown placement '{other}'"))),
    };

    let spec = SynthSpec {
        segments: args.segments,
        slope_range: (-0.9, 0.9),
        intercept_range: (-0.5, 0.5),
        min_gap: args.min_gap,
        samples: args.samples,
        noise,
        placement,
        continuous: args.continuous,
        seed: args.seed,
    };

    let out_dir = resolve_out_dir(&args.out);
    let mut manifest = ManifestBuilder::new(
        "synth",
        serde_json::to_value(&spec).map_err(ppln::Error::from)?,
        args.seed,
        &out_dir,
    );

    let truth = random_segment_set(&spec)?;
    let samples = sample_from(&truth, &spec)?;

    let truth_json = serde_json::to_string_pretty(&truth).map_err(ppln::Error::from)?;
    manifest.write_output("truth.json", truth_json.as_bytes())?;
    manifest.write_output("samples.csv", samples.to_csv().as_bytes())?;
    manifest.finish()?;
    println!(
        "wrote truth.json and samples.csv ({} samples, {} segments) to {}",
        args.samples,
        args.segments,
        out_dir.display()
    );
    Ok(())
}
