//! MLP-coupling baseline: identical block scaffolding to the kernel flow,
//! with scale/translation produced by a two-hidden-layer tanh network whose
//! final layer starts at zero. NLL differences against the kernel flow then
//! isolate the coupling parameterisation.

use crate::error::{Error, Result};
use crate::flow::{CouplingKind, FlowModel, ModelSpec, ParamCount};

/// Scalars in one MLP coupling: two hidden layers of width `hidden` and an
/// output of 2*(D-d) scale logits and translations.
pub fn mlp_layer_scalar_count(d: usize, out: usize, hidden: usize) -> Result<usize> {
    if hidden == 0 {
        return Err(Error::Config("baseline hidden width must be >= 1".into()));
    }
    Ok((d * hidden + hidden) + (hidden * hidden + hidden) + (hidden * 2 * out + 2 * out))
}

/// Builds a baseline model sharing the given spec's block structure.
pub fn baseline_model(spec: &ModelSpec, hidden: usize) -> Result<FlowModel> {
    FlowModel::new(ModelSpec {
        coupling: CouplingKind::Mlp { hidden },
        ..spec.clone()
    })
}

pub fn baseline_param_count(model: &FlowModel) -> ParamCount {
    model.param_count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_layer_count_matches_enumeration() {
        // D=10, d=5, H=64
        let expect = (5 * 64 + 64) + (64 * 64 + 64) + (64 * 10 + 10);
        assert_eq!(mlp_layer_scalar_count(5, 5, 64).unwrap(), expect);
        assert!(mlp_layer_scalar_count(5, 5, 0).is_err());
    }

    #[test]
    fn model_count_matches_formula() {
        let spec = ModelSpec {
            dim: 10,
            blocks: 3,
            coupling: CouplingKind::Kernel,
            aux_points: 20,
            shared_aux: false,
            gamma: 1.0,
            s_clamp: None,
            seed: 0,
        };
        let model = baseline_model(&spec, 64).unwrap();
        let pc = baseline_param_count(&model);
        assert_eq!(
            pc.coupling_weights,
            6 * mlp_layer_scalar_count(5, 5, 64).unwrap()
        );
        assert_eq!(pc.aux_points, 0);
        assert_eq!(pc.actnorm, 60);
        assert_eq!(pc.total, pc.coupling_weights + 60);
    }

    #[test]
    fn kernel_smaller_than_h64_baseline() {
        let spec = ModelSpec {
            dim: 10,
            blocks: 3,
            coupling: CouplingKind::Kernel,
            aux_points: 20,
            shared_aux: false,
            gamma: 1.0,
            s_clamp: None,
            seed: 0,
        };
        let kernel = FlowModel::new(spec.clone()).unwrap().param_count();
        let mlp = baseline_model(&spec, 64).unwrap().param_count();
        assert!(kernel.total < mlp.total);
    }
}
