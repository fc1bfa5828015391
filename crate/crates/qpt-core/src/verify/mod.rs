//! Analytic oracles and Monte Carlo diagnostics.

pub mod diagnostics;
pub mod moments;
pub mod s4;
pub mod tensor_network;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Serialized result of a Monte Carlo or analytic diagnostic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub quantity: String,
    pub n: usize,
    pub params: serde_json::Value,
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub samples: usize,
    pub seed: Option<u64>,
}

impl DiagnosticReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_json_shape() {
        let r = DiagnosticReport {
            quantity: "moment2".into(),
            n: 2,
            params: serde_json::json!({"rank_a": 2}),
            estimate: 0.5,
            stderr: Some(0.01),
            samples: 10,
            seed: Some(7),
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["quantity", "n", "params", "estimate", "stderr", "samples", "seed"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: DiagnosticReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
