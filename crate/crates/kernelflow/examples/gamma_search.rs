//! Coarse-to-fine search over the kernel bandwidth gamma on two moons.
//!
//! Run with: cargo run --release --example gamma_search

use kernelflow::data::{gen_moons, toy_dataset};
use kernelflow::train::{gamma_search, Schedule, TrainConfig};

fn main() {
    let ds = toy_dataset("moons", |n, s| gen_moons(n, 0.1, s), 4_000, 500, 500, 7).unwrap();
    // short budget per trial; the search ranks gammas, it does not need
    // fully converged models
    let cfg = TrainConfig {
        iterations: 400,
        schedule: Schedule::Cosine { t: 400 },
        seed: 1,
        ..TrainConfig::default()
    };
    let result = gamma_search(&ds, &cfg, &[0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0], 5).unwrap();
    for t in &result.trials {
        match t.val_nll {
            Some(v) => println!("{:<7} gamma {:>8.4}  val NLL {v:.4}", t.phase, t.gamma),
            None => println!("{:<7} gamma {:>8.4}  diverged", t.phase, t.gamma),
        }
    }
    println!("best gamma: {:.4}", result.best_gamma);
}
