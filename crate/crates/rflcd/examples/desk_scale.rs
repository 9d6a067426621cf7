//! Trains one configuration on in-memory synthetic tiles and reports the
//! test metrics.
//!
//! `cargo run --release -p rflcd --example desk_scale -- [key=value ...]`

use std::time::Instant;

use rflcd::config::RunConfig;
use rflcd::train::{evaluate, train};
use rflcd_core::data::{generate_tile, BiTemporalSample, SynthConfig};

fn tiles(seed: u64, count: usize) -> Vec<BiTemporalSample<f32>> {
    let cfg = SynthConfig::default();
    (0..count)
        .map(|i| {
            let t = generate_tile(&cfg, seed, i as u64).unwrap();
            BiTemporalSample::from_rasters(&t.a, &t.b, &t.label).unwrap()
        })
        .collect()
}

fn main() {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let cfg = RunConfig::default().with_overrides(&overrides).unwrap();
    let (train_set, test_set) = (tiles(1001, 200), tiles(2002, 50));
    let start = Instant::now();
    let mut outcome = train(&cfg, &train_set, Some(&test_set), None, &mut |end| {
        let r = end.record;
        eprintln!(
            "epoch {:2} lr {:.5} loss {:9.2} final {:8.2} F1 {:.4} ({:.0?})",
            r.epoch,
            r.lr,
            r.loss_total,
            r.loss_final,
            r.val_f1.unwrap_or(0.0),
            start.elapsed()
        );
        Ok(())
    })
    .unwrap();
    let counts = evaluate(&mut outcome.model, &test_set, 0.5, cfg.optim.batch_size).unwrap();
    println!("{} test {:?} in {:.0?}", cfg.model_config().unwrap().tag(), counts.prf1(), start.elapsed());
}
