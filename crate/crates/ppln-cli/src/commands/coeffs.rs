use std::path::PathBuf;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ppln::heads::predict_coefficients;
use ppln::net::{load_params, LayerParams, LayerSpec};

use crate::commands::plot_grid;
use crate::manifest::ManifestBuilder;
use crate::{resolve_out_dir, usage, AppResult};

#[derive(Args)]
pub struct CoeffsArgs {
    /// Parameter manifest JSON written by `train`.
    #[arg(long)]
    pub params: PathBuf,
    /// Parameter blob; defaults to `params.bin` next to the manifest.
    #[arg(long)]
    pub blob: Option<PathBuf>,
    /// Number of sampled inputs (one curve file each).
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Points on the dense curve grid.
    #[arg(long, default_value_t = 256)]
    pub grid: usize,
    /// Use the all-zero input instead of random samples.
    #[arg(long, default_value_t = false)]
    pub zero_input: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (default: $PPLN_OUT or the cwd).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: CoeffsArgs) -> AppResult<()> {
    if args.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    if args.grid < 2 {
        return Err(usage("--grid must be at least 2"));
    }
    let blob = args
        .blob
        .clone()
        .unwrap_or_else(|| args.params.with_file_name("params.bin"));

    let out_dir = resolve_out_dir(&args.out);
    let mut manifest = ManifestBuilder::new(
        "coeffs",
        serde_json::json!({
            "count": args.count,
            "grid": args.grid,
            "zero_input": args.zero_input,
            "seed": args.seed,
        }),
        args.seed,
        &out_dir,
    );
    manifest.record_input(&args.params)?;
    manifest.record_input(&blob)?;

    let (spec, params) = load_params(&args.params, &blob)?;
    let (LayerSpec::Dense { inputs, .. }, LayerParams::Dense(nodes)) =
        (&spec.layers[0], &params.layers[0])
    else {
        return Err(ppln::Error::Contract(
            "coefficient curves need a dense first layer".into(),
        )
        .into());
    };

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    rng.set_stream(21);
    let grid = plot_grid(args.grid);
    for sample_idx in 0..args.count {
        let mut x: Vec<f64> = (0..*inputs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if args.zero_input {
            x.iter_mut().for_each(|v| *v = 0.0);
        }
        if spec.augment_bias {
            x.push(1.0);
        }

        let mut header = String::from("tau");
        for node_idx in 0..nodes.len() {
            header.push_str(&format!(",node{node_idx}"));
        }
        header.push('\n');
        let mut csv = header;

        let predicted: Vec<_> = nodes
            .iter()
            .map(|node| predict_coefficients(node, &x, &spec.mean_mode))
            .collect::<ppln::Result<_>>()?;
        for &tau in &grid {
            csv.push_str(&format!("{tau}"));
            for (theta, mean) in &predicted {
                let value = if spec.normalization {
                    theta.eval_normalized(*mean, tau, None)?
                } else {
                    theta.eval(tau)?
                };
                csv.push_str(&format!(",{value}"));
            }
            csv.push('\n');
        }
        manifest.write_output(&format!("coeffs_{sample_idx:03}.csv"), csv.as_bytes())?;
    }
    manifest.finish()?;
    println!(
        "wrote {} coefficient curve files to {}",
        args.count,
        out_dir.display()
    );
    Ok(())
}
