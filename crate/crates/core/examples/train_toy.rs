//! Trains the compact network on the three-object toy scene and reports
//! held-out metrics. Usage: `train_toy [iterations] [seed] [lr]`.

use objfield::dataset::generate_dataset;
use objfield::evaluate::{evaluate_field, EvalOptions};
use objfield::nn::{TrainConfig, Trainer};
use objfield::AnalyticScene;
use std::time::Instant;

fn main() -> objfield::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iterations: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let scene = AnalyticScene::toy3();
    let (train, test) = generate_dataset(&scene, 32, 8, 64, seed)?;
    let mut config = TrainConfig::compact(scene.h, iterations);
    config.seed = seed;
    if let Some(lr) = args.get(3).and_then(|s| s.parse::<f64>().ok()) {
        config.lr_start = lr;
        config.lr_end = lr / 10.0;
    }
    let mut trainer = Trainer::new(&train, config)?;
    let start = Instant::now();
    while !trainer.is_done() {
        let e = trainer.step()?.clone();
        if e.iteration % 250 == 0 || e.iteration == 1 {
            println!(
                "iter {:6} lr {:.2e} psnr {:6.2} obj2d {:+.4} empty {:.4} obj3d {:.4} ({:.1}s)",
                e.iteration,
                e.lr,
                e.psnr,
                e.objects[0].object_2d,
                e.objects[0].empty_3d,
                e.objects[0].object_3d,
                start.elapsed().as_secs_f64()
            );
        }
    }
    let report = evaluate_field(&trainer.network(0), &test, &EvalOptions::default())?;
    println!("{}", serde_json::to_string(&report).unwrap());
    Ok(())
}
