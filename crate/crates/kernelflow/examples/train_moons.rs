//! Trains a kernelised flow on the two-moons dataset and reports NLL.
//!
//! Run with: cargo run --release --example train_moons

use kernelflow::data::{gen_moons, toy_dataset};
use kernelflow::train::{objective, train, Schedule, TrainConfig};

fn main() {
    let ds = toy_dataset("moons", |n, s| gen_moons(n, 0.1, s), 20_000, 2_000, 5_000, 7).unwrap();

    let cfg = TrainConfig {
        iterations: 2_000,
        schedule: Schedule::Cosine { t: 2_000 },
        seed: 1,
        ..TrainConfig::default()
    };
    let mut model = cfg.build_model(ds.dim).unwrap();
    println!(
        "kernel coupling, {} blocks, {} aux points per layer, {} parameters",
        cfg.blocks,
        cfg.aux_points,
        model.param_count().total
    );

    let outcome = train(&mut model, &ds, &cfg).unwrap();
    println!("init NLL    {:.4} nats", outcome.init_nll);
    for r in outcome.curve.iter().filter(|r| r.split == "val").step_by(2) {
        println!("iter {:>5}  val NLL {:.4}", r.iteration, r.nll);
    }
    let test = objective(&model, ds.test.view()).unwrap();
    println!("test NLL    {test:.4} nats (standardised space)");
}
