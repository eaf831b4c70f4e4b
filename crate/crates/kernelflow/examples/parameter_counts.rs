//! Parameter budgets of the kernel coupling against the MLP baseline, with
//! and without shared auxiliary points.
//!
//! Run with: cargo run --example parameter_counts

use kernelflow::baseline::baseline_model;
use kernelflow::flow::{CouplingKind, FlowModel, ModelSpec};

fn main() {
    println!(
        "{:>4} {:>8} {:>12} {:>12} {:>12} {:>7}",
        "D", "blocks", "kernel", "shared aux", "mlp (H=128)", "ratio"
    );
    for (dim, blocks, aux) in [(2, 5, 50), (6, 5, 50), (8, 5, 100), (43, 5, 100), (63, 10, 100)] {
        let spec = ModelSpec {
            dim,
            blocks,
            coupling: CouplingKind::Kernel,
            aux_points: aux,
            shared_aux: false,
            gamma: 1.0,
            s_clamp: Some(5.0),
            seed: 0,
        };
        let kernel = FlowModel::new(spec.clone()).unwrap().param_count().total;
        let shared = FlowModel::new(ModelSpec {
            shared_aux: true,
            ..spec.clone()
        })
        .unwrap()
        .param_count()
        .total;
        let mlp = baseline_model(&spec, 128).unwrap().param_count().total;
        println!(
            "{dim:>4} {blocks:>8} {kernel:>12} {shared:>12} {mlp:>12} {:>6.1}%",
            100.0 * kernel as f64 / mlp as f64
        );
    }
}
