//! Experiment configuration files.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algebra::AlgebraSpec;
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::fcs::{ClusteringPlan, GeneratorEnsembleSpec, PsiOptions};
use crate::process::{DriverKind, EnsembleSpec, ErgodicDriver, ProcessPlan};
use crate::rng::{child_seed, stream};

/// Driver family. Seeds and random phases come from the master seed, one
/// substream per `ω` stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverConfig {
    IidShift,
    /// `omega0` defaults to a uniform draw per stream.
    Rotation {
        alpha: f64,
        #[serde(default)]
        omega0: Option<f64>,
    },
    Cyclic { period: u64 },
    Constant,
}

impl DriverConfig {
    /// Driver of stream `i`.
    pub fn driver(&self, master_seed: u64, i: usize) -> Result<ErgodicDriver> {
        let seed = child_seed(master_seed, "omega", i as i64);
        let kind = match self {
            DriverConfig::IidShift => DriverKind::IidShift { seed },
            DriverConfig::Rotation { alpha, omega0 } => {
                let omega0 = match omega0 {
                    Some(w) => *w,
                    None => stream(master_seed, "omega-phase", i as i64).random::<f64>(),
                };
                DriverKind::Rotation { alpha: *alpha, omega0 }
            }
            DriverConfig::Cyclic { period } => DriverKind::Cyclic { period: *period, seed },
            DriverConfig::Constant => DriverKind::Constant,
        };
        ErgodicDriver::new(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariancePlan {
    pub shifts: Vec<i64>,
    pub window: usize,
}

impl Default for CovariancePlan {
    fn default() -> Self {
        Self { shifts: vec![1, 2, 3], window: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BirkhoffPlan {
    pub n_max: usize,
    pub window: usize,
}

impl Default for BirkhoffPlan {
    fn default() -> Self {
        Self { n_max: 10, window: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcsPlan {
    pub clustering: ClusteringPlan,
    /// Single-site diagonals of `a` and `b`; default alternating ±1.
    pub observable_a: Option<Vec<Vec<f64>>>,
    pub observable_b: Option<Vec<Vec<f64>>>,
    pub covariance: Option<CovariancePlan>,
    pub birkhoff: Option<BirkhoffPlan>,
}

impl Default for FcsPlan {
    fn default() -> Self {
        Self {
            clustering: ClusteringPlan::default(),
            observable_a: None,
            observable_b: None,
            covariance: Some(CovariancePlan::default()),
            birkhoff: None,
        }
    }
}

/// A complete run description. The same config gives the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// On-site algebra (`process`) or `M` (`fcs`).
    pub algebra: AlgebraSpec,
    /// Bond algebra `W` for `fcs`.
    #[serde(default)]
    pub bond: Option<AlgebraSpec>,
    pub driver: DriverConfig,
    #[serde(default)]
    pub ensemble: Option<EnsembleSpec>,
    #[serde(default)]
    pub generators: Option<GeneratorEnsembleSpec>,
    #[serde(default = "one")]
    pub streams: usize,
    #[serde(default)]
    pub process: ProcessPlan,
    #[serde(default)]
    pub fcs: FcsPlan,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn check(&self) -> Result<()> {
        if self.streams == 0 {
            return Err(Error::InvalidInput("streams must be at least 1".into()));
        }
        self.algebra.build()?;
        if let Some(b) = &self.bond {
            b.build()?;
        }
        Ok(())
    }

    /// Canonical serialization; the hash in the manifest is taken over it.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Seeds the estimator streams of every plan from the master seed.
    pub fn seeded_process_plan(&self) -> ProcessPlan {
        let mut p = self.process.clone();
        p.record.seed = child_seed(self.master_seed, "sampling", 0);
        p
    }

    pub fn seeded_psi_options(&self) -> PsiOptions {
        let mut o = self.fcs.clustering.psi;
        o.record.seed = child_seed(self.master_seed, "sampling", 1);
        o
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
