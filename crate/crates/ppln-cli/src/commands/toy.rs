use std::path::PathBuf;

use clap::Args;

use ppln::fit::{run_toy, ToyConfig};
use serde::Serialize;

use crate::manifest::ManifestBuilder;
use crate::{resolve_out_dir, usage, AppResult};

#[derive(Args)]
pub struct ToyArgs {
    /// Uniform noise bound on the generated samples.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (default: $PPLN_OUT or the cwd).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ToySummary {
    report: ppln::fit::ToyReport,
    /// Sup-errors of the normalization comparison in the pathological
    /// (smoothing-off) regime.
    normalization_on_sup: f64,
    normalization_off_sup: f64,
    normalization_improves: bool,
}

pub fn run(args: ToyArgs) -> AppResult<()> {
    if !(args.noise >= 0.0) {
        return Err(usage("--noise must be >= 0"));
    }
    if args.samples < 2 {
        return Err(usage("--samples must be at least 2"));
    }
    let config = ToyConfig {
        noise: args.noise,
        samples: args.samples,
        seed: args.seed,
        ..ToyConfig::default()
    };
    let out_dir = resolve_out_dir(&args.out);
    let mut manifest = ManifestBuilder::new(
        "toy",
        serde_json::to_value(&config).map_err(ppln::Error::from)?,
        args.seed,
        &out_dir,
    );

    let (report, samples) = run_toy(&config)?;

    for variant in &report.variants {
        let name = format!(
            "toy_norm_{}_smooth_{}.csv",
            if variant.normalization { "on" } else { "off" },
            if variant.smoothing { "on" } else { "off" }
        );
        let mut csv = String::from("tau,sample,initial,final,truth\n");
        for (&tau, &v) in samples.taus().iter().zip(samples.values()) {
            csv.push_str(&format!(
                "{tau},{v},{},{},{}\n",
                report.initial.eval(tau)?,
                variant.final_theta.eval(tau)?,
                report.truth.eval(tau)?
            ));
        }
        manifest.write_output(&name, csv.as_bytes())?;
    }

    let on = report.variant(true, false).sup_error;
    let off = report.variant(false, false).sup_error;
    let summary = ToySummary {
        normalization_on_sup: on,
        normalization_off_sup: off,
        normalization_improves: on < off,
        report,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(ppln::Error::from)?;
    manifest.write_output("summary.json", json.as_bytes())?;
    manifest.finish()?;

    println!(
        "toy done: normalization-on sup {:.4e} vs normalization-off sup {:.4e} (improves: {})",
        on,
        off,
        on < off
    );
    Ok(())
}
