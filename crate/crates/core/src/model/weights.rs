//! Weight file: `WEIGHT_MAGIC`, u32 version, u32 header length, JSON header,
//! then every parameter as a little-endian f64 in storage order, followed by
//! the normalization values in `Normalization::flatten` order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Dims, Network, Normalization, TaskLayout};

pub const WEIGHT_MAGIC: &[u8; 8] = b"EGOWGT01";
pub const WEIGHT_VERSION: u32 = 2;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("not a weight file")]
    BadMagic,
    #[error("unsupported weight file version {0}")]
    Version(u32),
    #[error("truncated weight file")]
    Truncated,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("layout hash mismatch: file {file}, expected {expected}")]
    LayoutHashMismatch { file: String, expected: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightHeader {
    pub dims: Dims,
    pub layout_hash: String,
    pub layout: TaskLayout,
    pub seed: u64,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn save_weights(net: &Network, layout: &TaskLayout, seed: u64, meta: serde_json::Value) -> Vec<u8> {
    let header = WeightHeader { dims: net.dims.clone(), layout_hash: layout.hash(), layout: layout.clone(), seed, meta };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * net.params.len());
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in net.params.iter().chain(&net.normalization().flatten()) {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

/// Parses a weight file. With `expected_hash`, refuses files built for another layout.
pub fn load_weights(bytes: &[u8], expected_hash: Option<&str>) -> Result<(Network, WeightHeader), WeightError> {
    if bytes.len() < 16 {
        return Err(if bytes.starts_with(&WEIGHT_MAGIC[..bytes.len().min(8)]) { WeightError::Truncated } else { WeightError::BadMagic });
    }
    if &bytes[..8] != WEIGHT_MAGIC {
        return Err(WeightError::BadMagic);
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = u32_at(8);
    if version != WEIGHT_VERSION {
        return Err(WeightError::Version(version));
    }
    let len = u32_at(12) as usize;
    let body = bytes.get(16..16 + len).ok_or(WeightError::Truncated)?;
    let header: WeightHeader = serde_json::from_slice(body).map_err(|e| WeightError::Header(e.to_string()))?;
    if header.layout_hash != header.layout.hash() {
        return Err(WeightError::Header("layout does not match its recorded hash".into()));
    }
    if let Some(expected) = expected_hash {
        if expected != header.layout_hash {
            return Err(WeightError::LayoutHashMismatch { file: header.layout_hash, expected: expected.to_string() });
        }
    }
    let raw = &bytes[16 + len..];
    if raw.len() % 8 != 0 {
        return Err(WeightError::Truncated);
    }
    let mut params: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let d = &header.dims;
    let n_norm = 2 * (d.input + d.positions);
    if params.len() < n_norm {
        return Err(WeightError::Header(format!("{} values cannot hold {n_norm} normalization values", params.len())));
    }
    let norm_values = params.split_off(params.len() - n_norm);
    let bad = |e: super::ModelError| WeightError::Header(e.to_string());
    let mut net = Network::from_params(d.clone(), params).map_err(bad)?;
    net.set_normalization(Normalization::unflatten(&norm_values, d).map_err(bad)?).map_err(bad)?;
    Ok((net, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Task;
    use crate::skeleton::SkeletonProfile;
    use crate::synth::humanoid_skeleton;
    use ndarray::Array2;

    fn fixture() -> (Network, TaskLayout) {
        let skel = humanoid_skeleton();
        let profile = SkeletonProfile::humanoid().resolve(&skel).unwrap();
        let layout = TaskLayout::new(Task::ThreePoint, &skel, &profile, 4, 30.0);
        let dims = Dims { input: layout.input_width(), hidden: 6, mlp: vec![5], positions: layout.output_width(), logits: 0 };
        let mut net = Network::init(dims.clone(), 3);
        let mut norm = Normalization::identity(&dims);
        norm.input_mean[2] = 0.25;
        norm.output_scale[1] = 3.0;
        net.set_normalization(norm).unwrap();
        (net, layout)
    }

    #[test]
    fn round_trip_reproduces_outputs() {
        let (net, layout) = fixture();
        let bytes = save_weights(&net, &layout, 3, serde_json::json!({"note": "x"}));
        let (back, header) = load_weights(&bytes, Some(&layout.hash())).unwrap();
        assert_eq!(header.seed, 3);
        assert_eq!(back.params, net.params);
        assert_eq!(back.normalization(), net.normalization());
        let window = Array2::from_shape_fn((4, 27), |(t, i)| ((t * 27 + i) as f64 * 0.37).sin());
        let (a, _) = net.forward_window(window.view()).unwrap();
        let (b, _) = back.forward_window(window.view()).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12));
    }

    #[test]
    fn rejects_other_layouts_and_corruption() {
        let (net, layout) = fixture();
        let bytes = save_weights(&net, &layout, 0, serde_json::Value::Null);
        assert!(matches!(load_weights(&bytes, Some("00")), Err(WeightError::LayoutHashMismatch { .. })));
        assert!(matches!(load_weights(&bytes[..bytes.len() - 3], None), Err(WeightError::Truncated)));
        assert!(matches!(load_weights(&bytes[..bytes.len() - 8], None), Err(WeightError::Header(_))));
        assert!(matches!(load_weights(b"NOTAWEIGHTFILE!!", None), Err(WeightError::BadMagic)));
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(load_weights(&v, None), Err(WeightError::Version(9))));
    }
}
