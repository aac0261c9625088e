//! Run configuration: schema-validated TOML with a named noise preset
//! or a full inline noise table. Unknown keys are rejected everywhere.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ionbv_core::device::DeviceModel;
use ionbv_core::sim::NoiseConfig;

use crate::CliError;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Device description file; omitted means the built-in chain sized
    /// for the experiment.
    pub device: Option<PathBuf>,
    /// Named noise preset: "ideal" or "calibrated".
    pub preset: Option<String>,
    /// Full inline noise table; mutually exclusive with `preset`.
    pub noise: Option<NoiseConfig>,
    pub shots: Option<u64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// Hidden-string algorithm end to end.
    Bv {
        n: usize,
        /// Secrets to run; all 2^n when omitted.
        secrets: Option<Vec<usize>>,
        /// Independent noise realizations averaged per secret.
        #[serde(default = "one")]
        seed_count: u64,
    },
    /// Fixed-length randomized benchmarking on two ions.
    Rb {
        #[serde(default = "default_sequences")]
        sequence_count: usize,
        #[serde(default = "default_cliffords")]
        cliffords_per_ion: usize,
    },
    /// Benchmarking fidelity versus laser phase-noise frequency.
    PhaseSweep {
        freqs_khz: Vec<f64>,
        #[serde(default = "default_depth")]
        depth_rad: f64,
        #[serde(default = "default_sequences")]
        sequence_count: usize,
        #[serde(default = "default_cliffords")]
        cliffords_per_ion: usize,
    },
    /// Entangling gate on the spin ⊗ motion space.
    MsMotional {
        #[serde(default = "default_fock")]
        fock_dim: usize,
        #[serde(default = "one_u32")]
        loops: u32,
        #[serde(default = "default_tau")]
        tau_us: f64,
        #[serde(default)]
        heating: bool,
        /// Also report the error added by heating of the undriven mode.
        #[serde(default)]
        spectator: bool,
    },
    /// Carrier infidelity versus mean thermal occupation.
    ThermalScan {
        nbars: Vec<f64>,
        /// Infidelity level defining the reported threshold crossing.
        #[serde(default = "default_threshold")]
        threshold: f64,
        #[serde(default = "two")]
        ions: usize,
    },
    /// Parity scan of the ideal entangled pair.
    Parity {
        #[serde(default = "default_points")]
        points: usize,
    },
}

fn one() -> u64 {
    1
}
fn one_u32() -> u32 {
    1
}
fn two() -> usize {
    2
}
fn default_sequences() -> usize {
    50
}
fn default_cliffords() -> usize {
    15
}
fn default_depth() -> f64 {
    0.02
}
fn default_fock() -> usize {
    10
}
fn default_tau() -> f64 {
    160.0
}
fn default_threshold() -> f64 {
    1e-4
}
fn default_points() -> usize {
    64
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Bv { .. } => "bv",
            Experiment::Rb { .. } => "rb",
            Experiment::PhaseSweep { .. } => "phase-sweep",
            Experiment::MsMotional { .. } => "ms-motional",
            Experiment::ThermalScan { .. } => "thermal-scan",
            Experiment::Parity { .. } => "parity",
        }
    }

    /// Chain size the experiment needs when no device file is given.
    pub fn default_ion_count(&self) -> usize {
        match self {
            Experiment::Bv { n, .. } => n + 1,
            Experiment::ThermalScan { ions, .. } => *ions,
            _ => 2,
        }
    }
}

/// Config after CLI overrides, the form that is hashed and echoed.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub shots: u64,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub experiment: Experiment,
    pub device_toml: String,
}

impl Resolved {
    pub fn config_hash(&self) -> String {
        let text = toml::to_string(self).expect("resolved config serializes");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn resolve(
    cfg: &RunConfig,
    seed_override: Option<u64>,
    preset_override: Option<&str>,
) -> Result<(Resolved, DeviceModel), CliError> {
    if cfg.noise.is_some() && (cfg.preset.is_some() || preset_override.is_some()) {
        return Err(CliError::Config(
            "give either an inline [noise] table or a preset name, not both".into(),
        ));
    }
    let noise = if let Some(n) = &cfg.noise {
        n.clone()
    } else {
        match preset_override.or(cfg.preset.as_deref()).unwrap_or("ideal") {
            "ideal" => NoiseConfig::ideal(),
            "calibrated" => NoiseConfig::calibrated(),
            other => {
                return Err(CliError::Config(format!(
                    "unknown preset '{other}' (expected 'ideal' or 'calibrated')"
                )))
            }
        }
    };
    noise
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let device = match &cfg.device {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
            let (model, _presets) =
                DeviceModel::load_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
            model
        }
        None => DeviceModel::default_chain(cfg.experiment.default_ion_count())
            .map_err(|e| CliError::Config(e.to_string()))?,
    };
    let resolved = Resolved {
        shots: cfg.shots.unwrap_or(2000),
        seed: seed_override.or(cfg.seed).unwrap_or(7),
        noise,
        experiment: cfg.experiment.clone(),
        device_toml: device.to_toml_string(),
    };
    Ok((resolved, device))
}
