//! Compares the hand-derived reverse-mode gradient against central finite
//! differences for both coupling kinds.
//!
//! Run with: cargo run --release --example gradient_check

use kernelflow::data::gen_pinwheel;
use kernelflow::diag::{finite_diff_grad, max_rel_error};
use kernelflow::flow::CouplingKind;
use kernelflow::train::{data_dependent_init, gradient, objective, TrainConfig};

fn main() {
    let data = gen_pinwheel(64, 5, 0);
    for (label, coupling) in [
        ("kernel", CouplingKind::Kernel),
        ("mlp baseline", CouplingKind::Mlp { hidden: 16 }),
    ] {
        let cfg = TrainConfig {
            blocks: 2,
            aux_points: 8,
            coupling,
            ..TrainConfig::default()
        };
        let mut model = cfg.build_model(2).unwrap();
        data_dependent_init(&mut model, data.view(), 0).unwrap();

        // nudge every parameter off the identity initialisation
        let params: Vec<f64> = model
            .param_vector()
            .iter()
            .enumerate()
            .map(|(i, p)| p + 0.03 * ((i as f64 * 0.7).sin()))
            .collect();
        model.set_param_vector(&params);

        let batch = data.slice(ndarray::s![..16, ..]);
        let analytic = gradient(&model, batch).unwrap();
        let mut probe = model.clone();
        let numeric = finite_diff_grad(
            |p| {
                probe.set_param_vector(p);
                objective(&probe, batch).unwrap()
            },
            &params,
            1e-6,
        );
        let err = max_rel_error(&analytic, &numeric, 1e-12);
        println!(
            "{label:<13} {} parameters, max relative error vs finite differences: {err:.3e}",
            params.len()
        );
    }
}
