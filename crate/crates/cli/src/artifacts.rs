//! Run-directory layout, format-tagged JSON files and the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use edgesplit_core::arch::{validate_policy, DecompositionPolicy, DeviceFleet, TransformerConfig};
use edgesplit_core::booster::CalibrationRound;
use edgesplit_core::evaluator::ObjectiveValue;
use edgesplit_core::simulator::SimReport;
use edgesplit_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const POLICY_FORMAT: &str = "edgesplit-policy/1";
pub const SIM_FORMAT: &str = "edgesplit-sim/1";
pub const BOOST_FORMAT: &str = "edgesplit-boost/1";
pub const REPORT_FORMAT: &str = "edgesplit-report/1";
pub const MANIFEST_FORMAT: &str = "edgesplit-manifest/1";
/// Tag recorded in the manifest for comma-separated outputs.
pub const CSV_FORMAT: &str = "csv";

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const POLICY_FILE: &str = "policy.json";
pub const BO_LOG_FILE: &str = "bo_log.csv";
pub const PREDICTOR_REPORT_FILE: &str = "predictor_report.csv";
pub const BOOST_FILE: &str = "boost.json";
pub const BOOST_ROUNDS_FILE: &str = "boost_rounds.csv";
pub const SIM_SUMMARY_FILE: &str = "sim/summary.csv";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_MODES_FILE: &str = "report_modes.csv";
pub const REPORT_TRAJECTORY_FILE: &str = "report_trajectory.csv";

pub fn profile_file(device: &str) -> String {
    format!("profiles/{device}.csv")
}

pub fn predictor_file(device: &str) -> String {
    format!("predictors/{device}.json")
}

pub fn sim_file(mode: &str) -> String {
    format!("sim/{mode}.json")
}

pub fn timeline_file(mode: &str) -> String {
    format!("sim/{mode}_timeline.csv")
}

/// The run directory; every artifact path is relative to it.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).is_file()
    }

    pub fn require(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingArtifact(rel.to_string()))
        }
    }

    /// Creates parent directories as needed.
    pub fn create(&self, rel: &str) -> CliResult<std::fs::File> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(std::fs::File::create(p)?)
    }

    pub fn write_text(&self, rel: &str, text: &str) -> CliResult<()> {
        use std::io::Write;
        self.create(rel)?.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(rel, &text)
    }

    /// Reads a JSON artifact whose `format` field must equal `expected`.
    pub fn read_tagged<T: DeserializeOwned>(&self, rel: &str, expected: &str) -> CliResult<T> {
        let text = std::fs::read_to_string(self.require(rel)?)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        check_tag(rel, &value, expected)?;
        Ok(serde_json::from_value(value)?)
    }
}

fn check_tag(rel: &str, value: &serde_json::Value, expected: &str) -> CliResult<()> {
    let found = value.get("format").and_then(|f| f.as_str()).unwrap_or("<none>");
    if found != expected {
        return Err(Error::FormatVersion {
            found: format!("{found} ({rel})"),
            expected: expected.to_string(),
        }
        .into());
    }
    Ok(())
}

/// Index of every artifact in a run directory and the parameters of the
/// command that last wrote it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    /// Relative path to format tag.
    pub artifacts: BTreeMap<String, String>,
    /// Command name to its parameters.
    pub commands: BTreeMap<String, BTreeMap<String, String>>,
}

impl Manifest {
    pub fn load_or_new(dir: &RunDir) -> CliResult<Self> {
        if !dir.exists(MANIFEST_FILE) {
            return Ok(Self {
                format: MANIFEST_FORMAT.to_string(),
                artifacts: BTreeMap::new(),
                commands: BTreeMap::new(),
            });
        }
        dir.read_tagged(MANIFEST_FILE, MANIFEST_FORMAT)
    }

    pub fn record(dir: &RunDir, command: &str, params: &[(&str, String)], artifacts: &[(String, &str)]) -> CliResult<()> {
        let mut m = Self::load_or_new(dir)?;
        m.commands.insert(
            command.to_string(),
            params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        );
        for (path, tag) in artifacts {
            m.artifacts.insert(path.clone(), tag.to_string());
        }
        dir.write_json(MANIFEST_FILE, &m)
    }

    /// Every listed artifact must carry the tag this build writes.
    pub fn check_versions(&self) -> CliResult<()> {
        for (path, tag) in &self.artifacts {
            let expected = expected_tag(path);
            if tag != expected {
                return Err(Error::FormatVersion {
                    found: format!("{tag} ({path})"),
                    expected: expected.to_string(),
                }
                .into());
            }
        }
        Ok(())
    }
}

fn expected_tag(path: &str) -> &'static str {
    if path.ends_with(".csv") {
        CSV_FORMAT
    } else if path.starts_with("predictors/") {
        edgesplit_core::latency::PREDICTOR_FORMAT
    } else if path.starts_with("sim/") {
        SIM_FORMAT
    } else {
        match path {
            POLICY_FILE => POLICY_FORMAT,
            BOOST_FILE => BOOST_FORMAT,
            REPORT_FILE => REPORT_FORMAT,
            _ => "<unknown artifact>",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LatencySourceKind {
    /// Per-device trained predictors from `train-predictor`.
    Predictor,
    /// The noise-free synthetic profiler.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Synthetic,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub format: String,
    pub devices: Vec<String>,
    pub seed: u64,
    pub r: usize,
    pub iters: usize,
    pub latency: LatencySourceKind,
    pub oracle: OracleKind,
    pub objective: ObjectiveValue,
    pub policy: DecompositionPolicy,
}

impl PolicyFile {
    /// Loads a policy and re-checks it against the fleet it will run on.
    pub fn load(path: &Path, base: &TransformerConfig, fleet: &DeviceFleet) -> CliResult<Self> {
        if !path.is_file() {
            return Err(CliError::MissingArtifact(path.display().to_string()));
        }
        let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        check_tag(&path.display().to_string(), &value, POLICY_FORMAT)?;
        let file: Self = serde_json::from_value(value)?;
        let names: Vec<String> = fleet.devices.iter().map(|d| d.name.clone()).collect();
        if file.devices != names {
            return Err(CliError::Config(format!(
                "policy was built for devices {:?}, fleet has {:?}",
                file.devices, names
            )));
        }
        let report = validate_policy(&file.policy, base, fleet)?;
        if !report.satisfied() {
            return Err(Error::InfeasiblePolicy(report).into());
        }
        Ok(file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFile {
    pub format: String,
    pub report: SimReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostFile {
    pub format: String,
    pub seed: u64,
    pub flipped_sign: bool,
    pub teacher_hidden: usize,
    pub teacher_val_accuracy: f64,
    pub rounds: Vec<CalibrationRound>,
    /// Validation losses of the calibrated sub-models (the toy degradation oracle's output).
    pub toy_losses: Vec<f64>,
    pub aggregate_val_accuracy: f64,
    pub ensemble_average_val_accuracy: f64,
    pub ensemble_majority_val_accuracy: f64,
    pub aggregator_final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: String,
    pub end_to_end_ms: f64,
    pub energy_mj: f64,
    pub idle_share: f64,
    pub transmission_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub devices: Vec<String>,
    pub policy: DecompositionPolicy,
    pub objective: ObjectiveValue,
    pub evaluations: usize,
    pub first_best_psi: f64,
    pub final_best_psi: f64,
    pub modes: Vec<ModeSummary>,
    /// Aggregate-edge speedup over each baseline mode present.
    pub speedup: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictor_relative_rmse: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boost: Option<BoostSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostSummary {
    pub sub_model_val_accuracy: Vec<f64>,
    pub aggregate_val_accuracy: f64,
    pub ensemble_average_val_accuracy: f64,
    pub ensemble_majority_val_accuracy: f64,
}
