//! Regression baselines: fitted exponents recorded once, then checked
//! against a drift tolerance.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub tolerance: f64,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum BaselineCheck {
    /// No stored value; the measurement was recorded.
    Recorded,
    Within { baseline: f64, drift: f64 },
    Drifted { baseline: f64, drift: f64 },
}

impl BaselineCheck {
    pub fn pass(&self) -> bool {
        !matches!(self, BaselineCheck::Drifted { .. })
    }
}

impl Baselines {
    pub fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            values: BTreeMap::new(),
        }
    }

    /// Reads `path`, or starts an empty table when it does not exist.
    pub fn load_or(path: &Path, tolerance: f64) -> std::io::Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::new(tolerance)),
            Err(e) => Err(e),
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("baselines serialize");
        std::fs::write(path, text + "\n")
    }

    pub fn check_or_record(&mut self, key: &str, value: f64) -> BaselineCheck {
        match self.values.get(key) {
            None => {
                self.values.insert(key.to_string(), value);
                BaselineCheck::Recorded
            }
            Some(&baseline) => {
                let drift = (value - baseline).abs();
                if drift <= self.tolerance {
                    BaselineCheck::Within { baseline, drift }
                } else {
                    BaselineCheck::Drifted { baseline, drift }
                }
            }
        }
    }
}
