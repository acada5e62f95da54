use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use ppln::net::{ablate, AblationAxes, AblationReport};

use crate::commands::train::{load_dataset, resolve_model, resolve_train_config};
use crate::manifest::ManifestBuilder;
use crate::{resolve_out_dir, usage, AppResult};

#[derive(Args)]
pub struct AblateArgs {
    /// Built-in task: constant | sine-in-tau | pwl-field.
    #[arg(long)]
    pub task: Option<String>,
    /// Dataset CSV (x columns, tau, y) instead of a built-in task.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model spec JSON; defaults to one dense node layer on the dataset.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Training config JSON; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated switch axes from {normalization, smoothing}.
    #[arg(long, default_value = "normalization")]
    pub axes: String,
    /// Comma-separated segment counts to sweep (e.g. "3,6").
    #[arg(long)]
    pub segment_counts: Option<String>,
    /// Segment count of the default model.
    #[arg(long, default_value_t = 3)]
    pub segments: usize,
    #[arg(long, default_value_t = 2000)]
    pub task_samples: usize,
    #[arg(long, default_value_t = 3)]
    pub task_dim: usize,
    /// Number of consecutive seeds to sweep.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: $PPLN_OUT or the cwd).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct AblateSummary {
    axes: AblationAxes,
    runs: Vec<AblationReport>,
}

pub fn run(args: AblateArgs) -> AppResult<()> {
    if args.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let mut axes = AblationAxes::default();
    for axis in args.axes.split(',').filter(|s| !s.is_empty()) {
        match axis.trim() {
            "normalization" => axes.normalization = true,
            "smoothing" => axes.smoothing = true,
            other => return Err(usage(format!("--axes unknown axis '{other}'"))),
        }
    }
    if let Some(counts) = &args.segment_counts {
        for part in counts.split(',') {
            let n: usize = part
                .trim()
                .parse()
                .map_err(|_| usage(format!("--segment-counts invalid count '{part}'")))?;
            if n == 0 {
                return Err(usage("--segment-counts entries must be at least 1"));
            }
            axes.segment_counts.push(n);
        }
    }

    let out_dir = resolve_out_dir(&args.out);
    let mut manifest = ManifestBuilder::new(
        "ablate",
        serde_json::Value::Null,
        args.seed.unwrap_or(0),
        &out_dir,
    );

    let base_config = resolve_train_config(
        &args.config,
        args.epochs,
        args.batch_size,
        args.lr,
        &None,
        &None,
        args.seed,
        &mut manifest,
    )?;
    let dataset = load_dataset(
        &args.task,
        &args.data,
        args.task_samples,
        args.task_dim,
        args.segments,
        base_config.seed,
        &mut manifest,
    )?;
    let spec = resolve_model(&args.model, &dataset, args.segments, &mut manifest)?;

    let mut manifest = manifest.with_config(serde_json::json!({
        "train": base_config,
        "model": spec,
        "axes": axes,
        "seeds": args.seeds,
        "task": args.task,
    }));

    let mut runs = Vec::with_capacity(args.seeds);
    let mut csv = String::from(
        "seed,label,normalization,smoothing,segments,train_loss,valid_loss,error\n",
    );
    for offset in 0..args.seeds {
        let mut config = base_config.clone();
        config.seed = base_config.seed + offset as u64;
        let report = ablate(&spec, &config, &dataset, &axes);
        for v in &report.variants {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                report.seed,
                v.label,
                v.normalization,
                v.smoothing,
                v.segments,
                v.train_loss.map_or(String::new(), |x| x.to_string()),
                v.valid_loss.map_or(String::new(), |x| x.to_string()),
                v.error.clone().unwrap_or_default()
            ));
        }
        runs.push(report);
    }

    if axes.normalization {
        let mut wins = 0;
        for run in &runs {
            let on = run
                .variants
                .iter()
                .find(|v| v.normalization)
                .and_then(|v| v.valid_loss);
            let off = run
                .variants
                .iter()
                .find(|v| !v.normalization)
                .and_then(|v| v.valid_loss);
            if let (Some(on), Some(off)) = (on, off) {
                if on <= off {
                    wins += 1;
                }
            }
        }
        println!(
            "normalization-on at or below normalization-off in {wins}/{} seeds",
            runs.len()
        );
    }

    manifest.write_output("ablation.csv", csv.as_bytes())?;
    let json =
        serde_json::to_string_pretty(&AblateSummary { axes, runs }).map_err(ppln::Error::from)?;
    manifest.write_output("ablation.json", json.as_bytes())?;
    manifest.finish()?;
    println!("wrote ablation.csv and ablation.json to {}", out_dir.display());
    Ok(())
}
