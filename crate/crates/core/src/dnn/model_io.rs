//! Trained-policy file: the magic `HMPCNN01`, a little-endian `u32` header
//! length, a JSON header (layer sizes, activations, scaler), then the flat
//! parameter vector as little-endian `f64`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, MlpNetwork};
use super::scaler::Scaler;
use super::Policy;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"HMPCNN01";
pub const MODEL_VERSION: u32 = 1;
const MAX_HEADER_BYTES: usize = 1 << 20;
const MAX_LAYER_WIDTH: usize = 4096;
const MAX_LAYERS: usize = 64;

/// How the model was produced; informational.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingInfo {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_mse: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub scaler: Scaler,
    pub parameter_count: usize,
    pub training: Option<TrainingInfo>,
}

pub fn encode_model<W: Write>(policy: &Policy, training: Option<&TrainingInfo>, mut out: W) -> Result<()> {
    let header = ModelHeader {
        version: MODEL_VERSION,
        layer_sizes: policy.net().layer_sizes(),
        activations: policy.net().layers.iter().map(|l| l.activation).collect(),
        scaler: policy.scaler().clone(),
        parameter_count: policy.net().parameter_count(),
        training: training.cloned(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::format("model", e.to_string()))?;
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    for p in policy.net().parameters() {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn model_to_bytes(policy: &Policy, training: Option<&TrainingInfo>) -> Result<Vec<u8>> {
    let mut v = Vec::new();
    encode_model(policy, training, &mut v)?;
    Ok(v)
}

pub fn decode_model(bytes: &[u8]) -> Result<(Policy, ModelHeader)> {
    let bad = |reason: &str| Error::format("model", reason);
    let rest = bytes.strip_prefix(MODEL_MAGIC.as_slice()).ok_or_else(|| bad("missing magic"))?;
    let (len, rest) = rest.split_first_chunk::<4>().ok_or_else(|| bad("truncated header length"))?;
    let len = u32::from_le_bytes(*len) as usize;
    if len > MAX_HEADER_BYTES || len > rest.len() {
        return Err(bad("header length out of range"));
    }
    let (json, body) = rest.split_at(len);
    let header: ModelHeader = serde_json::from_slice(json).map_err(|e| Error::format("model", e.to_string()))?;
    if header.version != MODEL_VERSION {
        return Err(bad("unsupported version"));
    }
    let sizes = &header.layer_sizes;
    if sizes.len() < 2 || sizes.len() > MAX_LAYERS || sizes.iter().any(|&s| s == 0 || s > MAX_LAYER_WIDTH) {
        return Err(bad("layer sizes out of range"));
    }
    if header.activations.len() != sizes.len() - 1 {
        return Err(bad("one activation per layer expected"));
    }
    let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if header.parameter_count != expected || body.len() != expected * 8 {
        return Err(bad("parameter count does not match layer sizes"));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    if !params.iter().all(|p| p.is_finite()) {
        return Err(bad("non-finite parameter"));
    }
    let mut net = MlpNetwork::zeros(sizes)?;
    for (layer, &a) in net.layers.iter_mut().zip(&header.activations) {
        layer.activation = a;
    }
    net.set_parameters(&params)?;
    let policy = Policy::new(net, header.scaler.clone()).map_err(|e| Error::format("model", e.to_string()))?;
    Ok((policy, header))
}

pub fn save_model(policy: &Policy, training: Option<&TrainingInfo>, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(policy, training)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Policy> {
    Ok(decode_model(&std::fs::read(path)?)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnn::{MinMax, DEFAULT_LAYERS};

    fn policy() -> Policy {
        let scaler = Scaler {
            inputs: MinMax { min: (0..12).map(|i| -(i as f64) - 1.0).collect(), max: vec![2.0; 12] },
            targets: MinMax { min: vec![-40.0, -80.0, -20.0], max: vec![10.0, 90.0, 35.5] },
        };
        Policy::new(MlpNetwork::new(&DEFAULT_LAYERS, 42).unwrap(), scaler).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let p = policy();
        let info = TrainingInfo { seed: 42, epochs: 3, best_epoch: 2, best_mse: 0.5, samples: 10 };
        let bytes = model_to_bytes(&p, Some(&info)).unwrap();
        let (back, header) = decode_model(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(header.training, Some(info));
        assert_eq!(header.parameter_count, 12 * 50 + 50 + 2 * (50 * 50 + 50) + 50 * 3 + 3);
    }

    #[test]
    fn rejects_damaged_files() {
        let bytes = model_to_bytes(&policy(), None).unwrap();
        assert!(decode_model(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_model(b"HMPCNN01").is_err());
        assert!(decode_model(&[]).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(decode_model(&extra).is_err());
    }
}
