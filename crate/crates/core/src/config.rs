//! TOML ingestion of fleet and transformer descriptions.
//!
//! ```toml
//! central = "tx2"          # device name or index
//!
//! [[devices]]
//! name = "nano"
//! gflops = 235.8
//! mem_gb = 4
//! bandwidth_mbps = 100
//! busy_power_mw = 10000
//! idle_power_mw = 1500
//! flops_cap_g = 8
//!
//! [transformer]
//! layers = 12
//! dim = 768
//! heads = 12
//! mlp_dim = 3072
//! seq_len = 197
//! classes = 1000
//! bytes_per_param = 4
//! ```
//!
//! Fleet and transformer sections may live in one file or two.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{DeviceFleet, DeviceSpec, TransformerConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub name: String,
    pub gflops: f64,
    pub mem_gb: f64,
    pub bandwidth_mbps: f64,
    pub busy_power_mw: f64,
    pub idle_power_mw: f64,
    pub flops_cap_g: f64,
}

impl DeviceEntry {
    pub fn to_spec(&self) -> DeviceSpec {
        DeviceSpec {
            name: self.name.clone(),
            compute: self.gflops * 1e6,
            memory: self.mem_gb * 1e9,
            flops_cap: self.flops_cap_g * 1e9,
            bandwidth: self.bandwidth_mbps * 1e3,
            busy_power: self.busy_power_mw,
            idle_power: self.idle_power_mw,
        }
    }

    pub fn from_spec(spec: &DeviceSpec) -> Self {
        Self {
            name: spec.name.clone(),
            gflops: spec.compute / 1e6,
            mem_gb: spec.memory / 1e9,
            bandwidth_mbps: spec.bandwidth / 1e3,
            busy_power_mw: spec.busy_power,
            idle_power_mw: spec.idle_power,
            flops_cap_g: spec.flops_cap / 1e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CentralRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerEntry {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub seq_len: usize,
    pub classes: usize,
    pub bytes_per_param: f64,
}

impl TransformerEntry {
    pub fn to_config(&self) -> Result<TransformerConfig> {
        TransformerConfig::new(
            self.layers,
            self.dim,
            self.heads,
            self.mlp_dim,
            self.seq_len,
            self.classes,
            self.bytes_per_param,
        )
    }

    pub fn from_config(cfg: &TransformerConfig) -> Self {
        Self {
            layers: cfg.layers,
            dim: cfg.embed_dim,
            heads: cfg.heads,
            mlp_dim: cfg.mlp_dim,
            seq_len: cfg.seq_len,
            classes: cfg.num_classes,
            bytes_per_param: cfg.bytes_per_param,
        }
    }
}

/// Top-level file schema. Either section may be absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub devices: Vec<DeviceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub central: Option<CentralRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transformer: Option<TransformerEntry>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn fleet(&self) -> Result<DeviceFleet> {
        if self.devices.is_empty() {
            return Err(Error::InvalidConfig("no [[devices]] entries".into()));
        }
        let central = match &self.central {
            None => 0,
            Some(CentralRef::Index(i)) => *i,
            Some(CentralRef::Name(name)) => self
                .devices
                .iter()
                .position(|d| &d.name == name)
                .ok_or_else(|| Error::InvalidConfig(format!("central device `{name}` not found")))?,
        };
        let mut names: Vec<&str> = self.devices.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("device names must be unique".into()));
        }
        DeviceFleet::new(self.devices.iter().map(DeviceEntry::to_spec).collect(), central)
    }

    pub fn transformer(&self) -> Result<TransformerConfig> {
        self.transformer
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("missing [transformer] section".into()))?
            .to_config()
    }

    pub fn from_parts(fleet: &DeviceFleet, base: &TransformerConfig) -> Self {
        Self {
            devices: fleet.devices.iter().map(DeviceEntry::from_spec).collect(),
            central: Some(CentralRef::Name(fleet.central_device().name.clone())),
            transformer: Some(TransformerEntry::from_config(base)),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
central = "tx2"

[[devices]]
name = "nano"
gflops = 235.8
mem_gb = 4
bandwidth_mbps = 100
busy_power_mw = 10000
idle_power_mw = 1500
flops_cap_g = 8

[[devices]]
name = "tx2"
gflops = 665.6
mem_gb = 8
bandwidth_mbps = 100
busy_power_mw = 15000
idle_power_mw = 1500
flops_cap_g = 20

[transformer]
layers = 12
dim = 768
heads = 12
mlp_dim = 3072
seq_len = 197
classes = 1000
bytes_per_param = 4
"#;

    #[test]
    fn parses_fleet_and_transformer() {
        let cfg = ConfigFile::parse(EXAMPLE).unwrap();
        let fleet = cfg.fleet().unwrap();
        assert_eq!(fleet.len(), 2);
        assert_eq!(fleet.central, 1);
        let nano = &fleet.devices[0];
        assert!((nano.compute - 235.8e6).abs() < 1e-3);
        assert_eq!(nano.memory, 4e9);
        assert_eq!(nano.bandwidth, 1e5);
        assert_eq!(nano.flops_cap, 8e9);
        assert_eq!(cfg.transformer().unwrap(), TransformerConfig::deit_base());
    }

    #[test]
    fn central_by_index_and_errors() {
        let cfg = ConfigFile::parse(&EXAMPLE.replace("central = \"tx2\"", "central = 0")).unwrap();
        assert_eq!(cfg.fleet().unwrap().central, 0);
        let bad = ConfigFile::parse(&EXAMPLE.replace("central = \"tx2\"", "central = \"xavier\"")).unwrap();
        assert!(matches!(bad.fleet(), Err(Error::InvalidConfig(_))));
        let neg = ConfigFile::parse(&EXAMPLE.replace("gflops = 235.8", "gflops = -1")).unwrap();
        assert!(neg.fleet().is_err());
        assert!(ConfigFile::parse("devices = 3").is_err());
    }

    #[test]
    fn writes_back_what_it_reads() {
        let fleet = DeviceFleet::example();
        let base = TransformerConfig::deit_base();
        let text = ConfigFile::from_parts(&fleet, &base).to_toml();
        let back = ConfigFile::parse(&text).unwrap();
        let f2 = back.fleet().unwrap();
        assert_eq!(f2.central, fleet.central);
        for (a, b) in f2.devices.iter().zip(&fleet.devices) {
            assert_eq!(a.name, b.name);
            assert!((a.compute - b.compute).abs() <= 1e-6 * b.compute);
        }
        assert_eq!(back.transformer().unwrap(), base);
    }
}
