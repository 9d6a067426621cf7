//! Command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rflcd_core::data::{BiTemporalSample, SynthConfig};
use rflcd_core::model::{RflCdNet, SIZE_MULTIPLE};
use rflcd_core::nn::param_count;
use rflcd_core::Tensor;

use crate::checkpoint::Checkpoint;
use crate::config::{help_text, RunConfig};
use crate::dataset::{evaluation_dir, DatasetIndex};
use crate::error::{Error, Result};
use crate::png;
use crate::run::run_training;
use crate::synth::write_dataset;
use crate::train::{evaluate_oracle, metrics_line, predict_maps};

#[derive(Debug, Parser)]
#[command(
    name = "rflcd",
    version,
    about = "Bi-temporal change detection with coarse-to-fine guiding and learnable fusion",
    after_long_help = help_text()
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of PNG triples and a manifest.
    Synth(SynthArgs),
    /// Train a model; writes a JSON-lines log and checkpoints.
    #[command(after_long_help = help_text())]
    Train(TrainArgs),
    /// Score a checkpoint on a labelled dataset.
    Eval(EvalArgs),
    /// Predict the change map of one image pair.
    Predict(PredictArgs),
    /// Parameter and multiply-accumulate counts per module.
    #[command(after_long_help = help_text())]
    Summary(SummaryArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML configuration file; defaults are used for missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--override model.lf=false`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE", alias = "set")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        base.with_overrides(&self.overrides)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Tile height and width; must be divisible by 16.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory (its `test/` subdirectory is used if present).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub threshold: f64,
    /// Check the model configuration of the checkpoint against this run
    /// configuration.
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Score the labels against themselves instead of running a model.
    #[arg(long)]
    pub oracle: bool,
    /// Write every predicted binary map as `<dir>/<tile>.png`.
    #[arg(long, value_name = "DIR")]
    pub dump_maps: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Binary change map (0/255, 8-bit PNG).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the fused probabilities as a 16-bit PNG.
    #[arg(long, value_name = "PATH")]
    pub prob: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Input height and width for the cost estimate.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Usage(format!("--threshold must be in [0, 1], got {t}")));
    }
    Ok(())
}

fn check_size(h: usize, w: usize, what: &str) -> Result<()> {
    if !h.is_multiple_of(SIZE_MULTIPLE) || !w.is_multiple_of(SIZE_MULTIPLE) {
        let up = |v: usize| v.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE;
        return Err(Error::Data(format!(
            "{what} is {h}x{w}; height and width must be divisible by {SIZE_MULTIPLE} (pad to {}x{})",
            up(h),
            up(w)
        )));
    }
    Ok(())
}

/// Runs one parsed command, writing its report to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let emit = |out: &mut dyn Write, text: String| writeln!(out, "{text}").map_err(Error::io(Path::new("<stdout>")));
    match &cli.command {
        Command::Synth(a) => {
            let cfg = SynthConfig {
                size: a.size,
                ..SynthConfig::default()
            };
            cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
            let manifest = write_dataset(&a.out, &cfg, a.seed, a.count, a.force)?;
            emit(out, manifest.display().to_string())
        }
        Command::Train(a) => {
            let cfg = a.config.resolve()?;
            let summary = run_training(&cfg, &mut |r| {
                eprintln!(
                    "epoch {} lr {} loss {:.4} val_F1 {}",
                    r.epoch,
                    r.lr,
                    r.loss_total,
                    r.val_f1.map_or("-".into(), |f| format!("{f:.4}"))
                );
            })?;
            emit(
                out,
                serde_json::json!({
                    "log": summary.log_path,
                    "last_checkpoint": summary.last_checkpoint,
                    "best_checkpoint": summary.best_checkpoint,
                    "best_epoch": summary.outcome.as_ref().and_then(|o| o.best.map(|b| b.0)),
                })
                .to_string(),
            )
        }
        Command::Eval(a) => {
            check_threshold(a.threshold)?;
            let index = DatasetIndex::open(&evaluation_dir(&a.data))?;
            if index.is_empty() {
                return Err(Error::Data(format!("no tiles under {}", index.root.display())));
            }
            let samples: Vec<BiTemporalSample<f32>> = index.load_all()?;
            let counts = if a.oracle {
                evaluate_oracle(&samples)?
            } else {
                let path = a.checkpoint.as_ref().expect("required unless --oracle");
                let ck = Checkpoint::load(path)?;
                let expected = if a.config.config.is_some() || !a.config.overrides.is_empty() {
                    Some(a.config.resolve()?.model_config()?)
                } else {
                    None
                };
                let mut model = ck.restore_model(expected.as_ref())?;
                let maps = predict_maps(&mut model, &samples, a.batch)?;
                let mut counts = rflcd_core::metrics::ConfusionCounts::default();
                for (map, s) in maps.iter().zip(&samples) {
                    counts.update_probs(map, &s.y, a.threshold)?;
                }
                if let Some(dir) = &a.dump_maps {
                    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
                    for (map, tile) in maps.iter().zip(&index.tiles) {
                        let [_, h, w] = [map.shape()[0], map.shape()[1], map.shape()[2]];
                        png::write(&dir.join(&tile.name), &png::binary_raster(h, w, map.data(), a.threshold))?;
                    }
                }
                counts
            };
            emit(out, metrics_line(&counts).to_string())
        }
        Command::Predict(a) => {
            check_threshold(a.threshold)?;
            let (ra, rb) = (png::read_rgb(&a.a)?, png::read_rgb(&a.b)?);
            if ra.dims() != rb.dims() {
                return Err(Error::Data(format!(
                    "image sizes differ: A is {:?}, B is {:?}",
                    ra.dims(),
                    rb.dims()
                )));
            }
            let (h, w) = ra.dims();
            check_size(h, w, "input")?;
            let mut model = Checkpoint::load(&a.checkpoint)?.restore_model(None)?;
            let batched = |t: Tensor<f32>| t.reshaped(&[1, 3, h, w]).expect("3-channel raster");
            let probs = model.predict(&batched(ra.to_tensor()), &batched(rb.to_tensor()))?;
            png::write(&a.out, &png::binary_raster(h, w, probs.data(), a.threshold))?;
            if let Some(p) = &a.prob {
                png::write_prob16(p, h, w, probs.data())?;
            }
            emit(out, a.out.display().to_string())
        }
        Command::Summary(a) => {
            let cfg = a.config.resolve()?;
            let model_cfg = cfg.model_config()?;
            let net = RflCdNet::<f32>::zeroed(model_cfg.clone())?;
            let report = net.cost_report(1, a.size, a.size);
            let mut text = format!(
                "model {} base_width {} input 1x3x{}x{}\n{:<12} {:>12} {:>16}\n",
                model_cfg.tag(),
                model_cfg.base_width,
                a.size,
                a.size,
                "module",
                "params",
                "macs"
            );
            for c in &report {
                text += &format!("{:<12} {:>12} {:>16}\n", c.name, c.params, c.macs);
            }
            let (params, macs): (usize, u64) = (report.iter().map(|c| c.params).sum(), net.flops_estimate(1, a.size, a.size));
            debug_assert_eq!(params, param_count(&net));
            text += &format!("{:<12} {:>12} {:>16}\n", "total", params, macs);
            text += &format!("{:.2}M parameters, {:.2}G multiply-accumulates", params as f64 / 1e6, macs as f64 / 1e9);
            emit(out, text)
        }
    }
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with_args<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    0
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    1
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
