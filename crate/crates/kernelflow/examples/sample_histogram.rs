//! Trains briefly on the pinwheel, draws samples, and prints an ASCII
//! density histogram next to one of the training data.
//!
//! Run with: cargo run --release --example sample_histogram

use kernelflow::cli::hist2d_counts;
use kernelflow::data::{gen_pinwheel, toy_dataset};
use kernelflow::train::{train, Schedule, TrainConfig};

fn render(grid: &[Vec<u64>]) -> Vec<String> {
    let max = grid.iter().flatten().copied().max().unwrap_or(1).max(1);
    let shades = [' ', '.', ':', '+', '*', '#', '@'];
    // transpose so the second coordinate runs upward
    (0..grid.len())
        .rev()
        .map(|j| {
            grid.iter()
                .map(|col| {
                    let level = (col[j] as f64 / max as f64 * (shades.len() - 1) as f64).round();
                    shades[level as usize]
                })
                .collect()
        })
        .collect()
}

fn main() {
    let ds = toy_dataset("pinwheel", |n, s| gen_pinwheel(n, 5, s), 20_000, 2_000, 2_000, 3).unwrap();
    let cfg = TrainConfig {
        iterations: 2_000,
        schedule: Schedule::Cosine { t: 2_000 },
        seed: 1,
        ..TrainConfig::default()
    };
    let mut model = cfg.build_model(ds.dim).unwrap();
    train(&mut model, &ds, &cfg).unwrap();

    let samples = model.sample(11, 20_000).unwrap();
    let (model_grid, _) = hist2d_counts(&samples, 36, -3.0, 3.0);
    let (data_grid, _) = hist2d_counts(&ds.train, 36, -3.0, 3.0);

    println!("{:<38} {}", "model samples", "training data");
    for (a, b) in render(&model_grid).iter().zip(render(&data_grid).iter()) {
        println!("{a:<38} {b}");
    }
}
