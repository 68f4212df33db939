use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::GroupAxis;
use crate::tile::{SerialSide, TileConfig};
use crate::{Error, Result};

/// Everything a run depends on. Loaded from `--config`, then overridden by
/// command-line flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub tile: TileConfig,
    /// Tile count of the bit-parallel baseline.
    pub baseline_tiles: usize,
    pub serial_side: SerialSide,
    /// Layer id -> accumulator fractional bits.
    pub acc_width_table: BTreeMap<String, u32>,
    pub trace: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub axis: GroupAxis,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tile: TileConfig::default(),
            baseline_tiles: 8,
            serial_side: SerialSide::A,
            acc_width_table: BTreeMap::new(),
            trace: None,
            out: None,
            seed: 1,
            axis: GroupAxis::Channel,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.tile.validate()?;
        if self.baseline_tiles == 0 {
            return Err(Error::Config("baseline_tiles must be >= 1".into()));
        }
        for (layer, &bits) in &self.acc_width_table {
            self.layer_tile(layer).validate().map_err(|e| e.context(format!("width table entry {layer}={bits}")))?;
        }
        Ok(())
    }

    /// Tile configuration for one layer, with its accumulator width applied.
    pub fn layer_tile(&self, layer: &str) -> TileConfig {
        let mut t = self.tile;
        if let Some(&bits) = self.acc_width_table.get(layer) {
            t.pe = t.pe.with_acc_frac_bits(bits);
        }
        t
    }

    pub fn baseline_tile(&self, layer: &str) -> TileConfig {
        TileConfig { tiles: self.baseline_tiles, ..self.layer_tile(layer) }
    }
}

pub fn load_width_table(path: &Path) -> Result<BTreeMap<String, u32>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"tile": {"rows": 4}, "acc_width_table": {"conv2": 6}}"#).unwrap();
        assert_eq!(c.tile.rows, 4);
        assert_eq!(c.tile.cols, 8);
        assert_eq!(c.tile.pe.max_delta, 3);
        assert_eq!(c.layer_tile("conv2").pe.policy.frac_bits, 6);
        assert_eq!(c.layer_tile("conv2").pe.ob_window, 6);
        assert_eq!(c.layer_tile("conv1").pe.policy.frac_bits, 12);
        c.validate().unwrap();
        let bad: RunConfig = serde_json::from_str(r#"{"acc_width_table": {"x": 13}}"#).unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_roundtrip() {
        let c = RunConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
    }
}
