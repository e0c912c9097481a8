use std::path::{Path, PathBuf};

use ocprom::fem::{MeshParams, Physics};
use ocprom::numerics::OptimizerConfig;
use ocprom::ocp::{CostWeights, OcpProblem, ParamBox, UnsteadyConfig};
use ocprom::reduction::{AeArchitecture, Scaling};
use ocprom::surrogate::PhiSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a run needs; one JSON document with every key optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mesh: MeshParams,
    pub physics: Physics,
    pub cost: CostWeights,
    pub param_box: ParamBox,
    pub unsteady: Option<UnsteadyConfig>,
    pub snapshots: SnapshotConfig,
    pub reduction: ReductionConfig,
    pub phi: PhiConfig,
    /// Artifact directory.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mesh: MeshParams::default(),
            physics: Physics::default(),
            cost: CostWeights::default(),
            param_box: ParamBox::cooling(),
            unsteady: None,
            snapshots: SnapshotConfig::default(),
            reduction: ReductionConfig::default(),
            phi: PhiConfig::default(),
            out: PathBuf::from("run"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnapshotConfig {
    pub count: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub workers: usize,
    /// Optimizer of the unsteady snapshot solves.
    pub unsteady_optimizer: Option<OptimizerConfig>,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        Self {
            count: 100,
            seed: 1,
            test_fraction: 0.2,
            split_seed: 2,
            workers: 1,
            unsteady_optimizer: None,
        }
    }
}

/// Reduction of one field. A POD rank alone gives a linear reducer, an
/// autoencoder alone works on full-order vectors, and both together put the
/// autoencoder on the POD coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldReduction {
    #[serde(default)]
    pub pod_rank: Option<usize>,
    #[serde(default)]
    pub autoencoder: Option<AeConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    pub architecture: AeArchitecture,
    pub scaling: Scaling,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            architecture: AeArchitecture::default(),
            scaling: Scaling::Uniform,
            seed: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionConfig {
    pub state: FieldReduction,
    pub control: FieldReduction,
    pub optimizer: OptimizerConfig,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            state: FieldReduction {
                pod_rank: Some(72),
                autoencoder: Some(AeConfig::default()),
            },
            control: FieldReduction {
                pod_rank: Some(7),
                autoencoder: None,
            },
            optimizer: OptimizerConfig::lbfgs(2000, 1e-12).with_memory(30),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhiConfig {
    pub network: PhiSpec,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for PhiConfig {
    fn default() -> Self {
        Self {
            network: PhiSpec::default(),
            optimizer: OptimizerConfig::lbfgs(2000, 1e-12).with_memory(30),
            seed: 4,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn problem(&self) -> Result<OcpProblem, CliError> {
        let p = OcpProblem::cooling(self.mesh, self.physics, self.cost)?;
        Ok(OcpProblem::new(
            p.ops,
            p.source,
            p.cost,
            self.param_box.clone(),
            self.unsteady.clone(),
        )?)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"mesh": {"n": 32, "obstacle_radus": 0.1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"snapshot": {}}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }
}
