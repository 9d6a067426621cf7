//! Training runs with their files: the JSON-lines log and checkpoints.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use rflcd_core::data::BiTemporalSample;
use rflcd_core::model::RflCdNet;
use rflcd_core::optim::AdamState;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::resolve_splits;
use crate::error::{Error, Result};
use crate::train::{train, EpochRecord, TrainOutcome};

pub struct RunSummary {
    pub outcome: Option<TrainOutcome>,
    pub log_path: PathBuf,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

pub struct LoadedData {
    pub train: Vec<BiTemporalSample<f32>>,
    pub val: Option<Vec<BiTemporalSample<f32>>>,
}

pub fn load_data(cfg: &RunConfig) -> Result<LoadedData> {
    let splits = resolve_splits(&cfg.data.root, cfg.data.val_root.as_deref(), cfg.data.val_fraction)?;
    if splits.train.is_empty() {
        return Err(Error::Data(format!("no training tiles under {}", splits.train.root.display())));
    }
    Ok(LoadedData {
        train: splits.train.load_all()?,
        val: splits.val.map(|v| v.load_all()).transpose()?,
    })
}

/// Trains as configured, writing the log and checkpoints under
/// `io.output_dir`. `progress` sees every epoch record.
pub fn run_training(cfg: &RunConfig, progress: &mut dyn FnMut(&EpochRecord)) -> Result<RunSummary> {
    let data = load_data(cfg)?;
    run_training_on(cfg, &data, progress)
}

pub fn run_training_on(cfg: &RunConfig, data: &LoadedData, progress: &mut dyn FnMut(&EpochRecord)) -> Result<RunSummary> {
    let out = &cfg.io.output_dir;
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let log_path = cfg.output_path(&cfg.io.log_file);
    let last = cfg.output_path(&cfg.io.last_checkpoint);
    let best = cfg.output_path(&cfg.io.best_checkpoint);
    let resume = cfg.io.resume.as_deref().map(Checkpoint::load).transpose()?;

    let mut log = match &resume {
        Some(_) => OpenOptions::new().create(true).append(true).open(&log_path),
        None => File::create(&log_path),
    }
    .map_err(Error::io(&log_path))?;

    let seed = cfg.optim.seed;
    let start = resume.as_ref().map_or(0, |c| c.epoch as usize);
    if start >= cfg.optim.epochs {
        // nothing to train: record the starting point
        let ck = match resume {
            Some(ck) => ck,
            None => {
                let net = RflCdNet::<f32>::new(cfg.model_config()?, seed)?;
                Checkpoint::capture(&net, &AdamState::new(&net), 0, seed)
            }
        };
        ck.save(&last)?;
        ck.save(&best)?;
        return Ok(RunSummary {
            outcome: None,
            log_path,
            last_checkpoint: last,
            best_checkpoint: best,
        });
    }

    let mut hook = |end: crate::train::EpochEnd<'_>| -> Result<()> {
        let line = serde_json::to_string(end.record).expect("record serializes");
        writeln!(log, "{line}").map_err(Error::io(&log_path))?;
        let ck = Checkpoint::capture(end.model, end.adam, end.completed as u32, seed);
        ck.save(&last)?;
        if end.improved {
            ck.save(&best)?;
        }
        progress(end.record);
        Ok(())
    };
    let outcome = train(cfg, &data.train, data.val.as_deref(), resume.as_ref(), &mut hook)?;
    Ok(RunSummary {
        outcome: Some(outcome),
        log_path,
        last_checkpoint: last,
        best_checkpoint: best,
    })
}
