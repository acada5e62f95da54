use std::path::PathBuf;

use clap::Args;

use ppln::net::{
    save_params, train, LossKind, ModelSpec, OptimizerKind, TrainConfig,
};
use ppln::synth::{make_regression_task, Dataset, TaskKind, TaskSizes};

use crate::manifest::ManifestBuilder;
use crate::{resolve_out_dir, usage, AppResult};

#[derive(Args)]
pub struct TrainArgs {
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
    /// Segment count of the default model.
    #[arg(long, default_value_t = 3)]
    pub segments: usize,
    /// Sample count of a built-in task.
    #[arg(long, default_value_t = 2000)]
    pub task_samples: usize,
    /// Input dimension of a built-in task.
    #[arg(long, default_value_t = 3)]
    pub task_dim: usize,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Optimizer: sgd | adam | rmsprop.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Loss: l1 | l2.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: $PPLN_OUT or the cwd).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn load_dataset(
    task: &Option<String>,
    data: &Option<PathBuf>,
    task_samples: usize,
    task_dim: usize,
    segments: usize,
    seed: u64,
    manifest: &mut ManifestBuilder,
) -> AppResult<Dataset> {
    match (task, data) {
        (Some(name), None) => {
            let kind: TaskKind = name
                .parse()
                .map_err(|e: ppln::Error| usage(format!("--task {e}")))?;
            let sizes = TaskSizes {
                samples: task_samples,
                input_dim: task_dim,
                hidden_segments: segments,
            };
            Ok(make_regression_task(kind, &sizes, seed)?)
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(ppln::Error::from)?;
            manifest.record_input(path)?;
            Ok(Dataset::from_csv(&text)?)
        }
        _ => Err(usage("exactly one of --task or --data is required")),
    }
}

pub fn resolve_model(
    model: &Option<PathBuf>,
    dataset: &Dataset,
    segments: usize,
    manifest: &mut ManifestBuilder,
) -> AppResult<ModelSpec> {
    match model {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(ppln::Error::from)?;
            manifest.record_input(path)?;
            Ok(serde_json::from_str(&text).map_err(ppln::Error::from)?)
        }
        None => {
            // One node layer; the bias feature makes constant targets
            // representable, and boundary smoothing gives the size weights
            // a usable learning signal.
            let mut spec = ModelSpec::dense(dataset.input_dim, dataset.output_dim, segments);
            spec.augment_bias = true;
            spec.smoothing = ppln::net::Smoothing::Fixed { temperature: 50.0 };
            Ok(spec)
        }
    }
}

pub fn resolve_train_config(
    args_config: &Option<PathBuf>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    optimizer: &Option<String>,
    loss: &Option<String>,
    seed: Option<u64>,
    manifest: &mut ManifestBuilder,
) -> AppResult<TrainConfig> {
    let mut config = match args_config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(ppln::Error::from)?;
            manifest.record_input(path)?;
            serde_json::from_str(&text).map_err(ppln::Error::from)?
        }
        None => TrainConfig::default(),
    };
    if let Some(name) = optimizer {
        let lr_value = lr.unwrap_or(1e-2);
        config.optimizer = match name.as_str() {
            "sgd" => OptimizerKind::Sgd { lr: lr_value },
            "adam" => OptimizerKind::adam(lr_value),
            "rmsprop" => OptimizerKind::rmsprop(lr_value),
            other => return Err(usage(format!("--optimizer unknown optimizer '{other}'"))),
        };
    } else if let Some(lr_value) = lr {
        config.optimizer = match config.optimizer {
            OptimizerKind::Sgd { .. } => OptimizerKind::Sgd { lr: lr_value },
            OptimizerKind::Adam {
                beta1, beta2, eps, ..
            } => OptimizerKind::Adam {
                lr: lr_value,
                beta1,
                beta2,
                eps,
            },
            OptimizerKind::RmsProp { alpha, eps, .. } => OptimizerKind::RmsProp {
                lr: lr_value,
                alpha,
                eps,
            },
        };
    }
    if let Some(name) = loss {
        config.loss = match name.as_str() {
            "l1" => LossKind::L1,
            "l2" => LossKind::L2,
            other => return Err(usage(format!("--loss unknown loss '{other}'"))),
        };
    }
    if let Some(epochs) = epochs {
        config.epochs = epochs;
    }
    if let Some(batch) = batch_size {
        config.batch_size = batch;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn run(args: TrainArgs) -> AppResult<()> {
    if args.segments == 0 {
        return Err(usage("--segments must be at least 1"));
    }
    let out_dir = resolve_out_dir(&args.out);
    let mut manifest = ManifestBuilder::new(
        "train",
        serde_json::Value::Null,
        args.seed.unwrap_or(0),
        &out_dir,
    );

    let config = resolve_train_config(
        &args.config,
        args.epochs,
        args.batch_size,
        args.lr,
        &args.optimizer,
        &args.loss,
        args.seed,
        &mut manifest,
    )?;
    let dataset = load_dataset(
        &args.task,
        &args.data,
        args.task_samples,
        args.task_dim,
        args.segments,
        config.seed,
        &mut manifest,
    )?;
    let spec = resolve_model(&args.model, &dataset, args.segments, &mut manifest)?;

    let mut manifest = manifest.with_config(serde_json::json!({
        "train": config,
        "model": spec,
        "task": args.task,
        "task_samples": args.task_samples,
        "task_dim": args.task_dim,
    }));

    let (params, report) = train(&spec, &config, &dataset)?;

    let params_json = out_dir.join("params.json");
    let params_bin = out_dir.join("params.bin");
    save_params(&params_json, &params_bin, &spec, &params, config.seed)?;
    manifest.record_written_output(&params_json)?;
    manifest.record_written_output(&params_bin)?;

    let report_json = serde_json::to_string_pretty(&report).map_err(ppln::Error::from)?;
    manifest.write_output("train_report.json", report_json.as_bytes())?;
    manifest.finish()?;

    println!(
        "trained {} epochs, final loss {:.6e}",
        report.epoch_losses.len(),
        report.final_loss
    );
    Ok(())
}
