//! End-to-end tabular workflow on a CSV file: load, split, train, checkpoint,
//! reload, and evaluate. Uses a small synthetic 4-D file so it is
//! self-contained; point `load_csv` at your own data for real use.
//!
//! Run with: cargo run --release --example csv_workflow

use kernelflow::checkpoint::Checkpoint;
use kernelflow::data::load_csv;
use kernelflow::train::{objective, train, Schedule, TrainConfig};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use std::io::Write;

fn main() {
    // correlated 4-D Gaussian mixture written to a temp CSV
    let path = std::env::temp_dir().join("kernelflow_demo.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "a,b,c,d").unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    for i in 0..4000 {
        let centre = if i % 2 == 0 { 1.5 } else { -1.5 };
        let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        writeln!(
            f,
            "{},{},{},{}",
            centre + g[0],
            g[0] * 0.5 + g[1],
            -centre + g[2],
            g[2] * 0.8 + 0.3 * g[3]
        )
        .unwrap();
    }

    let ds = load_csv(&path, (0.8, 0.1, 0.1), 0).unwrap();
    println!("loaded {} ({} dims, {} train rows)", path.display(), ds.dim, ds.train.nrows());

    let cfg = TrainConfig {
        iterations: 1_000,
        schedule: Schedule::Cosine { t: 1_000 },
        seed: 1,
        ..TrainConfig::tabular_default()
    };
    let mut model = cfg.build_model(ds.dim).unwrap();
    let outcome = train(&mut model, &ds, &cfg).unwrap();
    println!("init NLL {:.4}, best val NLL {:.4}", outcome.init_nll, outcome.best_val_nll.unwrap());

    let ckpt_path = std::env::temp_dir().join("kernelflow_demo_ckpt.json");
    Checkpoint::new(&cfg, &model, &ds.standardization, &ds.name)
        .save(&ckpt_path)
        .unwrap();
    let reloaded = Checkpoint::load(&ckpt_path).unwrap();
    let test_nll = objective(&reloaded.model, ds.test.view()).unwrap();
    println!("test NLL from reloaded checkpoint: {test_nll:.4} nats");
}
