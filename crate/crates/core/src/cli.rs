//! Command implementations and argument parsing for the `effcd` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::app::{
    ablation_table, chip_dataset, evaluate, gradcheck, load_checkpoint, load_data, run_ablation, run_training,
    sliding_window_logits, AblationRow, ChipManifest, GradcheckOptions, GradcheckReport, Inference, RunConfig,
    SyntheticConfig, TrainOutcome,
};
use crate::config::ModelConfig;
use crate::datapipe::{load_mask, load_rgb, render_error_map, save_mask, save_rgb, BinaryMask, DatasetLayout};
use crate::error::{Error, Result};
use crate::objective::{ConfusionMatrix, MetricReport};

#[derive(Debug, Parser)]
#[command(name = "effcd", version, about = "Bi-temporal change detection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Model preset: b0..b5 or nano.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Disable the layer exchange around the FPN.
    #[arg(long, global = true)]
    pub no_changefpn: bool,
    /// Replace the distance-gated decoder with the ungated one.
    #[arg(long, global = true)]
    pub baseline_decoder: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and write `best/` and `last/` checkpoints.
    Train {
        /// Step budget (overrides the config file).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Train on this many generated pairs instead of files.
        #[arg(long)]
        synthetic: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Dataset root (defaults to the config or $EFFCD_DATA_ROOT).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the metrics as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Sliding-window prediction for one image pair.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image_a: PathBuf,
        #[arg(long)]
        image_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        window: usize,
        #[arg(long, default_value_t = 170)]
        stride: usize,
        /// Ground truth; enables the error map.
        #[arg(long)]
        label: Option<PathBuf>,
        #[arg(long)]
        error_map: Option<PathBuf>,
    },
    /// Cut a dataset into overlapping mirror-padded patches.
    Chip {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        dst: PathBuf,
        #[arg(long, default_value_t = 256)]
        patch: usize,
        #[arg(long, default_value_t = 64)]
        overlap: usize,
        #[arg(long, value_delimiter = ',', default_value = "train,val,test")]
        splits: Vec<String>,
    },
    /// Compare analytic gradients with finite differences (double precision).
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        samples: usize,
    },
    /// Train and evaluate the four ChangeFPN/decoder combinations.
    Ablate {
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        synthetic: Option<usize>,
    },
    /// Render a TP/TN/FP/FN error map from two masks.
    Viz {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        label: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl GlobalArgs {
    /// The run configuration after applying command-line overrides.
    pub fn run_config(&self, steps: Option<u64>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::new("nano", steps.unwrap_or(0)),
        };
        if let Some(s) = steps {
            cfg.max_steps = s;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(p) = &self.preset {
            cfg.preset = p.clone();
            cfg.model = None;
        }
        if self.no_changefpn || self.baseline_decoder {
            let mut m = cfg.model_config()?;
            m.use_changefpn &= !self.no_changefpn;
            m.use_distance_decoder &= !self.baseline_decoder;
            cfg.model = Some(m);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn require_budget(cfg: &RunConfig) -> Result<()> {
    if cfg.max_steps == 0 {
        return Err(Error::Config(
            "a step budget is required: set max_steps or pass --steps".into(),
        ));
    }
    Ok(())
}

/// Trains per `cfg`, writing checkpoints and `train_log.json` under the
/// checkpoint directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    require_budget(cfg)?;
    let (train, val) = load_data(cfg)?;
    std::fs::create_dir_all(&cfg.checkpoint_dir)?;
    std::fs::write(cfg.checkpoint_dir.join("run.toml"), cfg.to_toml())?;
    let outcome = run_training(cfg, &train, &val, Some(&cfg.checkpoint_dir))?;
    let log = serde_json::to_string_pretty(&outcome.history).expect("history serializes");
    std::fs::write(cfg.checkpoint_dir.join("train_log.json"), log)?;
    Ok(outcome)
}

/// Accumulates one confusion matrix over `split` and reports its metrics.
pub fn cmd_eval(
    checkpoint: &Path,
    expected: Option<&ModelConfig>,
    layout: &DatasetLayout,
    split: &str,
) -> Result<(ConfusionMatrix, MetricReport)> {
    let mut ck = load_checkpoint(checkpoint, expected)?;
    let samples = layout.load_split(split)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("split '{split}' is empty")));
    }
    let cm = evaluate(&mut ck.network, &samples)?;
    Ok((cm, cm.metrics()?))
}

/// Predicts a change mask for one pair and writes it (plus an error map
/// when a label is given).
#[allow(clippy::too_many_arguments)]
pub fn cmd_infer(
    checkpoint: &Path,
    expected: Option<&ModelConfig>,
    image_a: &Path,
    image_b: &Path,
    out: &Path,
    window: usize,
    stride: usize,
    label: Option<(&Path, &Path)>,
) -> Result<(Inference, BinaryMask)> {
    let mut ck = load_checkpoint(checkpoint, expected)?;
    let a = load_rgb(image_a)?;
    let b = load_rgb(image_b)?;
    let inf = sliding_window_logits(&mut ck.network, &a, &b, window, stride)?;
    let mask = BinaryMask::from_logits(&inf.logits);
    save_mask(&mask, out)?;
    if let Some((label_path, map_path)) = label {
        let truth = load_mask(label_path)?;
        save_rgb(&render_error_map(&mask, &truth)?, map_path)?;
    }
    Ok((inf, mask))
}

pub fn cmd_chip(src: &Path, dst: &Path, splits: &[String], patch: usize, overlap: usize) -> Result<ChipManifest> {
    let splits: Vec<&str> = splits.iter().map(String::as_str).collect();
    chip_dataset(src, dst, &splits, patch, overlap)
}

pub fn cmd_gradcheck(config: &ModelConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    gradcheck(config, opts)
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    require_budget(cfg)?;
    let (train, val) = load_data(cfg)?;
    run_ablation(cfg, &train, &val)
}

pub fn cmd_viz(pred: &Path, label: &Path, out: &Path) -> Result<()> {
    let map = render_error_map(&load_mask(pred)?, &load_mask(label)?)?;
    save_rgb(&map, out)
}

fn with_synthetic(mut cfg: RunConfig, pairs: Option<usize>) -> RunConfig {
    if let Some(pairs) = pairs {
        let size = cfg.model_config().map_or(64, |m| m.input_size);
        cfg.data.synthetic = Some(SyntheticConfig { pairs, size });
    }
    cfg
}

/// Runs a parsed command line; the result is the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let g = &cli.global;
    match cli.command {
        Command::Train {
            steps,
            checkpoint_dir,
            synthetic,
        } => {
            let mut cfg = with_synthetic(g.run_config(steps)?, synthetic);
            if let Some(dir) = checkpoint_dir {
                cfg.checkpoint_dir = dir;
            }
            let out = cmd_train(&cfg)?;
            if let Some((step, score)) = out.best {
                println!("best {:?} {score:.4} at step {step}", cfg.selection_metric);
            }
            println!("checkpoints in {}", cfg.checkpoint_dir.display());
        }
        Command::Eval {
            checkpoint,
            split,
            data,
            json,
        } => {
            let cfg = g.run_config(None)?;
            let root = match data {
                Some(d) => d,
                None => cfg.data.resolved_root()?,
            };
            let layout = DatasetLayout {
                root,
                manifest: cfg.data.manifest.clone(),
            };
            let expected = (g.config.is_some() || g.preset.is_some() || g.no_changefpn || g.baseline_decoder)
                .then(|| cfg.model_config())
                .transpose()?;
            let (cm, report) = cmd_eval(&checkpoint, expected.as_ref(), &layout, &split)?;
            info!("{cm:?}");
            print!("{}", MetricReport::table(&[("EfficientCD", report)]));
            if let Some(path) = json {
                std::fs::write(path, report.to_json())?;
            }
        }
        Command::Infer {
            checkpoint,
            image_a,
            image_b,
            out,
            window,
            stride,
            label,
            error_map,
        } => {
            let labels = match (&label, &error_map) {
                (Some(l), Some(m)) => Some((l.as_path(), m.as_path())),
                (Some(_), None) | (None, Some(_)) => {
                    return Err(Error::Config("--label and --error-map go together".into()))
                }
                _ => None,
            };
            let (inf, mask) = cmd_infer(&checkpoint, None, &image_a, &image_b, &out, window, stride, labels)?;
            println!(
                "{} windows, {} changed pixels -> {}",
                inf.windows,
                mask.count_ones(),
                out.display()
            );
        }
        Command::Chip {
            src,
            dst,
            patch,
            overlap,
            splits,
        } => {
            let m = cmd_chip(&src, &dst, &splits, patch, overlap)?;
            println!("{} tiles -> {}", m.tiles.len(), dst.display());
        }
        Command::Gradcheck { samples } => {
            let mut model = match &g.preset {
                Some(p) => ModelConfig::preset(p)?,
                None => ModelConfig::nano(),
            };
            model.use_changefpn &= !g.no_changefpn;
            model.use_distance_decoder &= !g.baseline_decoder;
            let opts = GradcheckOptions {
                seed: g.seed.unwrap_or(0),
                samples_per_tensor: samples,
                ..GradcheckOptions::default()
            };
            let report = cmd_gradcheck(&model, &opts)?;
            print!("{}", report.table());
            if !report.passed {
                return Ok(1);
            }
        }
        Command::Ablate { steps, synthetic } => {
            let cfg = with_synthetic(g.run_config(steps)?, synthetic);
            let rows = cmd_ablate(&cfg)?;
            print!("{}", ablation_table(&rows));
        }
        Command::Viz { pred, label, out } => cmd_viz(&pred, &label, &out)?,
    }
    Ok(0)
}
