//! Trains on a generated scene and prints reconstruction and mask quality.
//!
//! `cargo run --release -p bgrecon-core --example synthetic_run -- static 2500`

use std::time::Instant;

use bgrecon_core::evaluator::{evaluate_sequence, f_measure};
use bgrecon_core::segmenter::{segment_sequence, SegmentOptions};
use bgrecon_core::synthetic::{generate, SyntheticSpec};
use bgrecon_core::trainer::{train_with, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let scene = args.get(1).map(String::as_str).unwrap_or("static");
    let iterations: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(2500);
    let spec = match scene {
        "static" => SyntheticSpec::static_scene(0),
        "ramp" => SyntheticSpec::noise_ramp(0),
        "pan" => SyntheticSpec::panning(0),
        other => return Err(format!("unknown scene {other}").into()),
    };
    let data = generate(&spec)?;
    let mut config = TrainConfig {
        n_simple: iterations,
        ..TrainConfig::default()
    };
    config.complexity.n_eval = config.complexity.n_eval.min(iterations);
    config.plan.allow_small_frames = true;

    let start = Instant::now();
    let trained = train_with(&data.frames, &config, &mut |p| {
        if p.iteration % 100 == 0 {
            println!("{p}  t={:.0}s", start.elapsed().as_secs_f64());
        }
    })?;
    println!(
        "verdict {:?}, {} iterations",
        trained.verdict, trained.iterations
    );

    let results = segment_sequence(&trained.model, &data.frames, &SegmentOptions::default(), 32)?;
    let mut abs = 0.0f64;
    let mut n = 0usize;
    for (r, bg) in results.iter().zip(&data.backgrounds) {
        for (a, b) in r.background.pixels().iter().zip(bg.pixels()) {
            abs += (*a as f64 - *b as f64).abs();
            n += 1;
        }
    }
    let masks: Vec<_> = results.iter().map(|r| r.mask.clone()).collect();
    let counts = evaluate_sequence(&masks, &data.labels)?;
    println!(
        "background MAE {:.4}, F {:?}, counts {:?}, elapsed {:.0}s",
        abs / n as f64,
        f_measure(&counts),
        counts,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
