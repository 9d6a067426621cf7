use rflcd::config::RunConfig;
use rflcd::run::{run_training_on, LoadedData};
use rflcd::train::{evaluate, evaluate_oracle, train, StepRecord};
use rflcd::Error;
use rflcd_core::data::{generate_tile, BiTemporalSample, SynthConfig};
use rflcd_core::model::RflCdNet;

fn tiles(n: usize, seed: u64) -> Vec<BiTemporalSample<f32>> {
    let cfg = SynthConfig {
        size: 32,
        ..SynthConfig::default()
    };
    (0..n)
        .map(|i| {
            let t = generate_tile(&cfg, seed, i as u64).unwrap();
            BiTemporalSample::from_rasters(&t.a, &t.b, &t.label).unwrap()
        })
        .collect()
}

fn small(overrides: &[&str]) -> RunConfig {
    let mut all = vec!["model.base_width=2", "optim.epochs=2", "optim.seed=4"];
    all.extend_from_slice(overrides);
    RunConfig::default().with_overrides(&all).unwrap()
}

fn loss_bits(steps: &[StepRecord]) -> Vec<u64> {
    steps.iter().map(|s| s.total.to_bits()).collect()
}

#[test]
fn identical_seeds_reproduce_every_loss_bit() {
    let data = tiles(6, 1);
    let cfg = small(&[]);
    let run = || train(&cfg, &data, Some(&data[..2]), None, &mut |_| Ok(())).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(loss_bits(&a.steps), loss_bits(&b.steps));
    assert_eq!(a.log, b.log);
    let other = train(&small(&["optim.seed=5"]), &data, None, None, &mut |_| Ok(())).unwrap();
    assert_ne!(loss_bits(&a.steps), loss_bits(&other.steps));
}

#[test]
fn logged_total_is_the_weighted_sum_of_its_terms() {
    let data = tiles(5, 2);
    for overrides in [&[][..], &["model.lf=false"][..], &["model.lf=false", "model.c2fg=false", "model.dms=false"][..]] {
        let cfg = small(overrides);
        let w = cfg.loss_weights();
        let outcome = train(&cfg, &data, None, None, &mut |_| Ok(())).unwrap();
        for s in &outcome.steps {
            let side: f64 = s.side.iter().zip(w.side).map(|(v, l)| v.map_or(0.0, |v| l * v)).sum();
            let recomposed = side + w.fused * s.fused;
            assert!(
                (s.total - recomposed).abs() <= 1e-6 * s.total.abs().max(1.0),
                "{overrides:?} epoch {} batch {}: {} vs {recomposed}",
                s.epoch,
                s.batch,
                s.total
            );
        }
        let dms = cfg.model.dms;
        assert!(outcome.steps.iter().all(|s| s.side.iter().all(|v| v.is_some() == dms)));
    }
}

#[test]
fn epoch_records_average_their_steps() {
    let data = tiles(6, 3);
    let cfg = small(&["optim.batch_size=4"]);
    let outcome = train(&cfg, &data, None, None, &mut |_| Ok(())).unwrap();
    for r in &outcome.log {
        let steps: Vec<&StepRecord> = outcome.steps.iter().filter(|s| s.epoch == r.epoch).collect();
        assert_eq!(steps.len(), 2);
        let mean = steps.iter().map(|s| s.total).sum::<f64>() / 2.0;
        assert_eq!(r.loss_total, mean);
        assert!(r.val_f1.is_none());
    }
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = LoadedData {
        train: tiles(4, 4),
        val: None,
    };
    let cfg = |out: &str, epochs: usize| {
        let mut c = small(&[&format!("optim.epochs={epochs}")]);
        c.io.output_dir = dir.path().join(out);
        c
    };
    let straight = run_training_on(&cfg("straight", 10), &data, &mut |_| {}).unwrap();
    run_training_on(&cfg("split", 9), &data, &mut |_| {}).unwrap();
    let mut resume = cfg("split", 10);
    resume.io.resume = Some(resume.output_path("last.ckpt"));
    let resumed = run_training_on(&resume, &data, &mut |_| {}).unwrap();

    let tail = resumed.outcome.unwrap();
    assert_eq!(tail.log.len(), 1);
    assert_eq!((tail.log[0].epoch, tail.log[0].lr), (9, 0.0005));
    assert_eq!(tail.log[0], straight.outcome.unwrap().log[9]);
    assert_eq!(
        std::fs::read(resumed.log_path).unwrap(),
        std::fs::read(straight.log_path).unwrap()
    );
}

#[test]
fn best_checkpoint_follows_validation_f1() {
    let dir = tempfile::tempdir().unwrap();
    let data = LoadedData {
        train: tiles(4, 5),
        val: Some(tiles(2, 6)),
    };
    let mut cfg = small(&["optim.epochs=3"]);
    cfg.io.output_dir = dir.path().to_path_buf();
    let mut seen = Vec::new();
    let summary = run_training_on(&cfg, &data, &mut |r| seen.push(r.val_f1.unwrap())).unwrap();
    let outcome = summary.outcome.unwrap();
    let (best_epoch, best_f1) = outcome.best.unwrap();
    assert_eq!(best_f1, seen.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    assert_eq!(seen.iter().position(|&f| f == best_f1), Some(best_epoch));
    let best = rflcd::checkpoint::Checkpoint::load(&summary.best_checkpoint).unwrap();
    assert_eq!(best.epoch as usize, best_epoch + 1);
}

#[test]
fn exploding_learning_rate_is_reported_as_divergence() {
    let data = tiles(4, 7);
    let cfg = small(&["optim.lr=1e30", "optim.epochs=5"]);
    match train(&cfg, &data, None, None, &mut |_| Ok(())) {
        Err(Error::Diverged(msg)) => assert!(msg.contains("epoch"), "{msg}"),
        Err(other) => panic!("unexpected error {other}"),
        Ok(o) => panic!("trained through lr 1e30: {:?}", o.log.last()),
    }
}

#[test]
fn evaluation_edge_cases() {
    let data = tiles(3, 8);
    let counts = evaluate_oracle(&data).unwrap();
    assert_eq!(counts.prf1().f1, 1.0);
    let mut net = RflCdNet::<f32>::new(small(&[]).model_config().unwrap(), 1).unwrap();
    assert!(matches!(evaluate(&mut net, &[], 0.5, 2), Err(Error::Data(_))));
    assert!(evaluate_oracle(&[]).is_err());
    // nothing exceeds a threshold of one
    let none = evaluate(&mut net, &data, 1.0, 2).unwrap();
    assert_eq!((none.tp, none.fp), (0, 0));
    let m = none.prf1();
    assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    // batching does not change the counts
    assert_eq!(evaluate(&mut net, &data, 0.5, 1).unwrap(), evaluate(&mut net, &data, 0.5, 3).unwrap());
}

#[test]
fn empty_training_set_is_an_error() {
    assert!(matches!(train(&small(&[]), &[], None, None, &mut |_| Ok(())), Err(Error::Data(_))));
}
