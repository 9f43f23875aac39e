//! Randomized copies of a trained network.
//!
//! Two protocols, both walking the parameterized layers from the output
//! layer back towards the input:
//!
//! - cascading: stage `k` re-initializes the top `k + 1` layers;
//! - independent: stage `k` re-initializes only the `k`-th layer.
//!
//! A layer's fresh weights depend only on the plan's seed and the layer's
//! name, so a layer randomized in cascading stage `k` carries the same
//! values in every later stage.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::nn::Network;
use crate::train::InitScheme;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Mode {
    Cascading,
    Independent,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Cascading => "cascading",
            Mode::Independent => "independent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RandomizationPlan {
    pub mode: Mode,
    /// Parameterized layer names, output layer first.
    pub targets: Vec<String>,
    pub reinit_seed_base: u64,
}

#[derive(Debug, Clone)]
pub struct RandomizedVariant {
    pub stage_index: usize,
    /// Name of the layer this stage added (cascading) or replaced (independent).
    pub stage_label: String,
    pub mode: Mode,
    pub network: Network,
}

pub fn make_plan(net: &Network, mode: Mode, seed: u64) -> Result<RandomizationPlan> {
    let arch = net.architecture();
    let mut targets: Vec<String> = arch.parameterized().map(|i| arch.layers()[i].name.clone()).collect();
    if targets.is_empty() {
        return Err(Error::network("no parameterized layers to randomize"));
    }
    targets.reverse();
    Ok(RandomizationPlan {
        mode,
        targets,
        reinit_seed_base: seed,
    })
}

/// Re-initializes the named layers of a copy of `net`.
fn reinitialize(net: &Network, layers: &[String], plan: &RandomizationPlan, scheme: &InitScheme) -> Result<Network> {
    let arch = net.architecture();
    let mut out = net.clone();
    for name in layers {
        let i = arch.index_of(name).expect("checked against plan");
        let (ws, bs) = arch.param_shapes(i).expect("parameterized");
        let layer_scheme = scheme.with_seed(seed::derive(plan.reinit_seed_base, name));
        out.set_params(i, layer_scheme.layer_params(name, &ws, &bs))?;
    }
    Ok(out)
}

/// One variant per plan target; `net` is left untouched.
pub fn variants(net: &Network, plan: &RandomizationPlan, scheme: &InitScheme) -> Result<Vec<RandomizedVariant>> {
    let arch = net.architecture();
    let expected: Vec<&str> = arch
        .parameterized()
        .rev()
        .map(|i| arch.layers()[i].name.as_str())
        .collect();
    let given: Vec<&str> = plan.targets.iter().map(String::as_str).collect();
    if expected != given {
        return Err(Error::network(format!(
            "plan targets {given:?} do not match the network's parameterized layers {expected:?}"
        )));
    }

    plan.targets
        .iter()
        .enumerate()
        .map(|(k, label)| {
            let layers = match plan.mode {
                Mode::Cascading => &plan.targets[..=k],
                Mode::Independent => &plan.targets[k..=k],
            };
            Ok(RandomizedVariant {
                stage_index: k,
                stage_label: label.clone(),
                mode: plan.mode,
                network: reinitialize(net, layers, plan, scheme)?,
            })
        })
        .collect()
}

/// Checkpoint file name for a variant: `<model>.<mode>.<stage>.<layer>.ckpt`.
pub fn variant_file_name(model: &str, variant: &RandomizedVariant) -> String {
    format!(
        "{model}.{}.{}.{}.ckpt",
        variant.mode.name(),
        variant.stage_index,
        variant.stage_label
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::presets;
    use crate::train::{initialize, InitKind};

    fn mlp() -> Network {
        let arch = presets::mlp(&[1, 4, 4], 3).unwrap();
        initialize(&arch, &InitScheme::new(InitKind::UniformFan, 1))
    }

    #[test]
    fn plan_is_output_first() {
        let plan = make_plan(&mlp(), Mode::Cascading, 9).unwrap();
        assert_eq!(plan.targets, ["out", "d3", "d2", "d1"]);
        assert_eq!(plan, make_plan(&mlp(), Mode::Cascading, 9).unwrap());
        let cnn = initialize(
            &presets::cnn(&[1, 28, 28], 10).unwrap(),
            &InitScheme::new(InitKind::UniformFan, 1),
        );
        assert_eq!(make_plan(&cnn, Mode::Independent, 0).unwrap().targets.len(), 4);
    }

    #[test]
    fn parameter_free_network_rejected() {
        let arch = crate::nn::Architecture::new(alloc::vec![3], alloc::vec![crate::nn::LayerSpec::relu("r")]).unwrap();
        let net = Network::new(arch, alloc::vec![None]).unwrap();
        assert!(make_plan(&net, Mode::Cascading, 0).is_err());
    }

    #[test]
    fn cascading_stage_zero_touches_only_output() {
        let net = mlp();
        let scheme = InitScheme::new(InitKind::UniformFan, 1);
        let plan = make_plan(&net, Mode::Cascading, 77).unwrap();
        let vs = variants(&net, &plan, &scheme).unwrap();
        let v0 = &vs[0].network;
        for name in ["d1", "d2", "d3"] {
            assert!(v0
                .params_by_name(name)
                .unwrap()
                .bit_identical(net.params_by_name(name).unwrap()));
        }
        assert!(!v0
            .params_by_name("out")
            .unwrap()
            .bit_identical(net.params_by_name("out").unwrap()));
        let last = &vs[3].network;
        for name in ["d1", "d2", "d3", "out"] {
            assert!(!last
                .params_by_name(name)
                .unwrap()
                .bit_identical(net.params_by_name(name).unwrap()));
        }
    }

    #[test]
    fn plan_mismatch_rejected() {
        let net = mlp();
        let mut plan = make_plan(&net, Mode::Independent, 1).unwrap();
        plan.targets.swap(0, 1);
        assert!(variants(&net, &plan, &InitScheme::new(InitKind::UniformFan, 1)).is_err());
    }

    #[test]
    fn file_names() {
        let net = mlp();
        let plan = make_plan(&net, Mode::Independent, 1).unwrap();
        let vs = variants(&net, &plan, &InitScheme::new(InitKind::UniformFan, 1)).unwrap();
        assert_eq!(variant_file_name("mlp", &vs[2]), "mlp.independent.2.d2.ckpt");
    }
}
