//! JSON checkpoints of a trained [`Forecaster`].
//!
//! Floats are written with shortest round-trip formatting, so a save/load
//! cycle reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::predictor::{Layout, ParamVector};
use crate::training::Forecaster;

pub const FORMAT: &str = "eqpm-forecaster";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    activation: String,
    lookback: usize,
    std: f64,
    standardizer: Standardizer,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

/// Serialize `model`; `provenance` optionally records the config hash and seed.
pub fn to_json(model: &Forecaster, provenance: Option<(&str, u64)>) -> Result<String> {
    let doc = Document {
        format: FORMAT.into(),
        version: VERSION,
        layer_sizes: model.params.layout().sizes().to_vec(),
        activation: "tanh".into(),
        lookback: model.lookback,
        std: model.std,
        standardizer: model.standardizer,
        values: model.params.values().to_vec(),
        config_hash: provenance.map(|(h, _)| h.to_owned()),
        seed: provenance.map(|(_, s)| s),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Serde(e.to_string()))
}

pub fn from_json(text: &str) -> Result<Forecaster> {
    let doc: Document = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
    if doc.format != FORMAT || doc.version != VERSION {
        return Err(Error::Serde(format!(
            "unsupported checkpoint {} v{}",
            doc.format, doc.version
        )));
    }
    if doc.activation != "tanh" {
        return Err(Error::Serde(format!("unsupported activation {}", doc.activation)));
    }
    let layout = Layout::new(&doc.layer_sizes)?;
    if layout.input_dim() != doc.lookback {
        return Err(Error::dim("checkpoint lookback", layout.input_dim(), doc.lookback));
    }
    if !(doc.std > 0.0) {
        return Err(Error::Serde(format!("checkpoint std must be positive, got {}", doc.std)));
    }
    Ok(Forecaster {
        params: ParamVector::from_values(layout, doc.values)?,
        standardizer: doc.standardizer,
        std: doc.std,
        lookback: doc.lookback,
    })
}

pub fn save(model: &Forecaster, path: &Path, provenance: Option<(&str, u64)>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, to_json(model, provenance)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Forecaster> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text).map_err(|e| match e {
        Error::Serde(message) => Error::Schema {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::init_params;

    fn model() -> Forecaster {
        Forecaster {
            params: init_params(&[12, 8, 3], 7).unwrap(),
            standardizer: Standardizer {
                feature_mean: 0.1 + 0.2,
                feature_std: 1.0 / 3.0,
                target_mean: -2.5e-7,
                target_std: 9.87654321,
            },
            std: 0.1,
            lookback: 12,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = from_json(&to_json(&m, Some(("abc", 4))).unwrap()).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.params.values().iter().zip(m.params.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let text = to_json(&model(), None).unwrap().replace("\"lookback\": 12", "\"lookback\": 11");
        assert!(from_json(&text).is_err());
        let mut doc: serde_json::Value = serde_json::from_str(&to_json(&model(), None).unwrap()).unwrap();
        doc["values"].as_array_mut().unwrap().pop();
        assert!(from_json(&doc.to_string()).is_err());
    }
}
