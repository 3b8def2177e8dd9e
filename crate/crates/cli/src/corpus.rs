//! Internal corpus format.
//!
//! One `.seq` file per sequence, little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `EGOSEQ01` |
//! | 4 | format version (u32) |
//! | 4 | header length `n` (u32) |
//! | n | JSON [`SequenceHeader`] |
//! | rest | frames × (3 + 4·J) f64: root translation xyz, then per joint quaternion w, x, y, z |
//!
//! `index.json` lists every sequence with its subject and frame count.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use egopose::skeleton::{MotionSequence, Pose, Quat, Skeleton, Vec3};
use nalgebra::Quaternion;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEQ_MAGIC: &[u8; 8] = b"EGOSEQ01";
pub const SEQ_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceHeader {
    pub id: String,
    pub subject: String,
    pub source: String,
    pub fps: f64,
    pub frames: usize,
    pub skeleton: Skeleton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub id: String,
    pub subject: String,
    pub source: String,
    pub frames: usize,
    pub fps: f64,
}

pub fn encode_sequence_file(header: &SequenceHeader, seq: &MotionSequence) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + seq.len() * (3 + 4 * seq.skeleton.len()) * 8);
    out.extend_from_slice(SEQ_MAGIC);
    out.extend(SEQ_VERSION.to_le_bytes());
    out.extend((json.len() as u32).to_le_bytes());
    out.extend(json);
    for f in &seq.frames {
        for v in f.root_translation.iter() {
            out.extend(v.to_le_bytes());
        }
        for q in &f.rotations {
            for v in [q.w, q.i, q.j, q.k] {
                out.extend(v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_sequence_file(bytes: &[u8], path: &str) -> Result<(SequenceHeader, MotionSequence), CorpusError> {
    let bad = |reason: &str| CorpusError::Malformed { path: path.to_string(), reason: reason.to_string() };
    if bytes.len() < 16 || &bytes[..8] != SEQ_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != SEQ_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let json = bytes.get(16..16 + n).ok_or_else(|| bad("truncated header"))?;
    let header: SequenceHeader = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
    let body = &bytes[16 + n..];
    let j = header.skeleton.len();
    let stride = (3 + 4 * j) * 8;
    if body.len() != stride * header.frames {
        return Err(bad("frame data length does not match header"));
    }
    let vals: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let frames = vals
        .chunks_exact(3 + 4 * j)
        .map(|f| Pose {
            root_translation: Vec3::new(f[0], f[1], f[2]),
            rotations: f[3..].chunks_exact(4).map(|q| Quat::new_unchecked(Quaternion::new(q[0], q[1], q[2], q[3]))).collect(),
        })
        .collect();
    let seq = MotionSequence::new(Arc::new(header.skeleton.clone()), frames, header.fps).map_err(|e| bad(&e.to_string()))?;
    Ok((header, seq))
}

/// BVH files under `paths` (directories are walked recursively), sorted.
pub fn find_bvh(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CorpusError> {
    fn walk(p: &Path, out: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
        if p.is_dir() {
            let rd = std::fs::read_dir(p).map_err(|e| CorpusError::Io(p.display().to_string(), e))?;
            for entry in rd {
                let entry = entry.map_err(|e| CorpusError::Io(p.display().to_string(), e))?;
                walk(&entry.path(), out)?;
            }
        } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("bvh")) {
            out.push(p.to_path_buf());
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        walk(p, &mut out)?;
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Subject of a BVH file: its parent directory name.
pub fn subject_of(path: &Path) -> String {
    path.parent().and_then(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "unknown".into())
}

pub fn id_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use egopose::synth::{generate_motion, SynthConfig};

    #[test]
    fn sequence_file_round_trip() {
        let seq = generate_motion(&SynthConfig { seed: 3, subject: 1, duration_s: 0.2, fps: 30.0 });
        let header = SequenceHeader {
            id: "x".into(),
            subject: "s01".into(),
            source: "mem".into(),
            fps: seq.fps,
            frames: seq.len(),
            skeleton: (*seq.skeleton).clone(),
        };
        let bytes = encode_sequence_file(&header, &seq);
        let (h, back) = decode_sequence_file(&bytes, "x").unwrap();
        assert_eq!(h, header);
        assert_eq!(back.frames, seq.frames);
        assert!(decode_sequence_file(&bytes[..bytes.len() - 1], "x").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_sequence_file(&bad, "x").is_err());
    }

    #[test]
    fn subject_and_id_from_path() {
        let p = Path::new("/data/s03/walk_01.bvh");
        assert_eq!(subject_of(p), "s03");
        assert_eq!(id_of(p), "walk_01");
    }
}
