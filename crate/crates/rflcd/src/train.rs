//! The training loop and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rflcd_core::data::{augment, stack, BiTemporalSample};
use rflcd_core::metrics::{ConfusionCounts, Prf1};
use rflcd_core::model::{RflCdNet, STAGES};
use rflcd_core::nn::Mode;
use rflcd_core::objective::total_loss;
use rflcd_core::optim::AdamState;
use rflcd_core::{seed, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};

/// Stream tags for [`seed::derive`].
const SHUFFLE: u64 = 1;
const AUGMENT: u64 = 2;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Means over the epoch's batches.
    pub loss_total: f64,
    pub loss_side: [Option<f64>; STAGES],
    pub loss_final: f64,
    #[serde(rename = "val_P")]
    pub val_p: Option<f64>,
    #[serde(rename = "val_R")]
    pub val_r: Option<f64>,
    #[serde(rename = "val_F1")]
    pub val_f1: Option<f64>,
}

/// Loss values of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub batch: usize,
    pub total: f64,
    pub side: [Option<f64>; STAGES],
    pub fused: f64,
}

pub struct TrainOutcome {
    pub model: RflCdNet<f32>,
    pub adam: AdamState<f32>,
    pub log: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    /// Model with the best validation F1 so far (the last one without
    /// validation data).
    pub best: Option<(usize, f64)>,
}

/// What the per-epoch hook is told.
pub struct EpochEnd<'a> {
    pub record: &'a EpochRecord,
    pub model: &'a RflCdNet<f32>,
    pub adam: &'a AdamState<f32>,
    /// Completed epochs, counting resumed ones.
    pub completed: usize,
    pub improved: bool,
}

/// Trains from scratch, or continues `resume`, for the remaining epochs of
/// `cfg.optim.epochs`. `hook` runs after every epoch.
pub fn train(
    cfg: &RunConfig,
    train_set: &[BiTemporalSample<f32>],
    val_set: Option<&[BiTemporalSample<f32>]>,
    resume: Option<&Checkpoint>,
    hook: &mut dyn FnMut(EpochEnd<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    let model_cfg = cfg.model_config()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let run_seed = cfg.optim.seed;
    let (mut model, mut adam, start) = match resume {
        Some(ck) => {
            let model = ck.restore_model(Some(&model_cfg))?;
            let adam = ck.restore_adam(&model)?;
            (model, adam, ck.epoch as usize)
        }
        None => {
            let model = RflCdNet::<f32>::new(model_cfg.clone(), run_seed)?;
            let adam = AdamState::new(&model);
            (model, adam, 0)
        }
    };
    let adam_cfg = cfg.adam();
    let schedule = cfg.schedule();
    let weights = cfg.loss_weights();
    let aug = cfg.augment_config();
    let supervised: Vec<usize> = model_cfg.supervised_stages().collect();
    let batch_size = cfg.optim.batch_size;

    let mut log = Vec::new();
    let mut steps = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for epoch in start..cfg.optim.epochs {
        let lr = schedule.lr(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(run_seed, &[SHUFFLE, epoch as u64])));

        let mut sums = (0.0, [0.0; STAGES], 0.0);
        let batches = order.chunks(batch_size).count();
        for (b, idx) in order.chunks(batch_size).enumerate() {
            let samples: Vec<BiTemporalSample<f32>> = idx
                .iter()
                .map(|&i| match &aug {
                    Some(a) => augment(&train_set[i], a, seed::derive(run_seed, &[AUGMENT, epoch as u64, i as u64])),
                    None => train_set[i].clone(),
                })
                .collect();
            let refs: Vec<&BiTemporalSample<f32>> = samples.iter().collect();
            let batch = stack(&refs)?;

            let diverged = |e: rflcd_core::Error| match e {
                rflcd_core::Error::NonFinite { op } => {
                    Error::Diverged(format!("non-finite value in {op} at epoch {epoch}, batch {b}"))
                }
                other => Error::Core(other),
            };
            let mut tape = Tape::new();
            let (xa, xb) = (tape.constant(batch.xa), tape.constant(batch.xb));
            let out = model.forward(&mut tape, xa, xb, Mode::Train).map_err(diverged)?;
            let terms = total_loss(&mut tape, &out.side_probs, &supervised, out.fused, &batch.y, &weights)
                .map_err(diverged)?;
            let total = tape.value(terms.total).item() as f64;
            if !total.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            let side = terms.side.map(|v| v.map(|v| tape.value(v).item() as f64));
            let fused = tape.value(terms.fused).item() as f64;
            tape.backward(terms.total).map_err(diverged)?;
            adam.step(&adam_cfg, &mut model, |id| tape.param_grad(id), lr)
                .map_err(|e| Error::Diverged(format!("{e} at epoch {epoch}, batch {b}")))?;

            sums.0 += total;
            for s in 0..STAGES {
                sums.1[s] += side[s].unwrap_or(0.0);
            }
            sums.2 += fused;
            steps.push(StepRecord {
                epoch,
                batch: b,
                total,
                side,
                fused,
            });
        }

        let n = batches as f64;
        let val = match val_set {
            Some(v) if !v.is_empty() => Some(evaluate(&mut model, v, 0.5, batch_size)?.prf1()),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            lr,
            loss_total: sums.0 / n,
            loss_side: core::array::from_fn(|s| supervised.contains(&s).then(|| sums.1[s] / n)),
            loss_final: sums.2 / n,
            val_p: val.map(|m| m.precision),
            val_r: val.map(|m| m.recall),
            val_f1: val.map(|m| m.f1),
        };
        let score = val.map_or(f64::NEG_INFINITY, |m| m.f1);
        let improved = val.is_none() || best.is_none_or(|(_, f1)| score > f1);
        if improved {
            best = Some((epoch, score));
        }
        hook(EpochEnd {
            record: &record,
            model: &model,
            adam: &adam,
            completed: epoch + 1,
            improved,
        })?;
        log.push(record);
    }
    Ok(TrainOutcome {
        model,
        adam,
        log,
        steps,
        best,
    })
}

/// Fused probability maps `[N, 1, H, W]` for a list of samples, computed in
/// chunks of `batch`.
pub fn predict_maps(model: &mut RflCdNet<f32>, samples: &[BiTemporalSample<f32>], batch: usize) -> Result<Vec<Tensor<f32>>> {
    let mut maps = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&BiTemporalSample<f32>> = chunk.iter().collect();
        let b = stack(&refs)?;
        let probs = model.predict(&b.xa, &b.xb)?;
        let [n, _, h, w] = probs.dims4("predict")?;
        for i in 0..n {
            maps.push(Tensor::from_vec(&[1, h, w], probs.plane(i, 0).to_vec())?);
        }
    }
    Ok(maps)
}

/// Micro-averaged confusion counts of the fused prediction thresholded at
/// `threshold`.
pub fn evaluate(
    model: &mut RflCdNet<f32>,
    samples: &[BiTemporalSample<f32>],
    threshold: f64,
    batch: usize,
) -> Result<ConfusionCounts> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let maps = predict_maps(model, samples, batch)?;
    let mut counts = ConfusionCounts::default();
    for (map, s) in maps.iter().zip(samples) {
        counts.update_probs(map, &s.y, threshold)?;
    }
    Ok(counts)
}

/// Scores the labels themselves, as a sanity check of the evaluation path.
pub fn evaluate_oracle(samples: &[BiTemporalSample<f32>]) -> Result<ConfusionCounts> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let mut counts = ConfusionCounts::default();
    for s in samples {
        counts.update(&s.y, &s.y)?;
    }
    Ok(counts)
}

pub fn metrics_line(counts: &ConfusionCounts) -> serde_json::Value {
    let Prf1 { precision, recall, f1 } = counts.prf1();
    serde_json::json!({
        "P": precision,
        "R": recall,
        "F1": f1,
        "tp": counts.tp,
        "fp": counts.fp,
        "fn": counts.fn_,
        "tn": counts.tn,
    })
}
