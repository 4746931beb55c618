//! Whole-system configuration: DRAM geometry and timing, NPU and PIM
//! throughput, and controller options, loaded from one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compute::{NpuSpec, PimSpec};
use crate::dram::{DramConfig, TimingParams};
use crate::error::{Error, Result};
use crate::timing::ControllerOptions;

/// File name of the bundled LPDDR5 configuration.
pub const BUNDLED_NAME: &str = "lpddr5-table1.json";

const BUNDLED: &str = include_str!("../configs/lpddr5-table1.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PimConfig {
    pub peak_flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub dram: DramConfig,
    pub timing: TimingParams,
    pub npu: NpuSpec,
    pub pim: PimConfig,
    #[serde(default)]
    pub controller: ControllerOptions,
}

impl SystemConfig {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED).expect("bundled configuration is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SystemConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Loads `path`, or the bundled configuration when `path` is `None` or
    /// names the bundled file and does not exist on disk.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::bundled()),
            Some(p) if !p.exists() && p.file_name().is_some_and(|n| n == BUNDLED_NAME) => {
                Ok(Self::bundled())
            }
            Some(p) => Self::load(p),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dram.validate()?;
        self.timing.validate()?;
        self.npu.validate()?;
        if !(self.pim.peak_flops.is_finite() && self.pim.peak_flops > 0.0) {
            return Err(Error::config("pim.peak_flops", "must be positive"));
        }
        if self.npu.element_size_bytes != self.dram.element_size_bytes {
            return Err(Error::config(
                "npu.element_size_bytes",
                "must match dram.element_size_bytes",
            ));
        }
        Ok(())
    }

    pub fn pim_spec(&self) -> PimSpec {
        PimSpec::new(&self.dram, self.pim.peak_flops)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_matches_builtins() {
        let c = SystemConfig::bundled();
        assert_eq!(c.dram, DramConfig::lpddr5_table1());
        assert_eq!(c.timing, TimingParams::lpddr5_table1());
        assert_eq!(c.npu, NpuSpec::ascend_310b_x2());
        assert_eq!(c.pim.peak_flops, 512e9);
        assert_eq!(c.controller, ControllerOptions::default());
        let pim = c.pim_spec();
        assert_eq!(pim.lanes, 64);
        assert_eq!(pim.per_bank_bw(), 8e9);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(BUNDLED).unwrap();
        v["dram"]["bogus"] = 1.into();
        assert!(SystemConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(BUNDLED).unwrap();
        v["extra"] = 1.into();
        assert!(SystemConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn invalid_geometry_is_config_error() {
        let mut v: serde_json::Value = serde_json::from_str(BUNDLED).unwrap();
        v["dram"]["banks_per_rank"] = 12.into();
        let e = SystemConfig::from_json(&v.to_string()).unwrap_err();
        assert!(e.is_config());
        assert!(e.to_string().contains("banks_per_rank"));
    }

    #[test]
    fn resolve_falls_back_to_bundled_name() {
        let c =
            SystemConfig::resolve(Some(Path::new("does/not/exist/lpddr5-table1.json"))).unwrap();
        assert_eq!(c, SystemConfig::bundled());
        assert!(SystemConfig::resolve(Some(Path::new("missing.json"))).is_err());
    }
}
