//! Occlusion run statistics, self-contact detection and record export.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::skeleton::{MotionSequence, ResolvedGroup};

use super::{shapes_overlap, OcclusionError, OcclusionRecord, OcclusionRig, Shape, Status};

const RLE_MAGIC: &[u8; 8] = b"OCCRLE01";

/// Hidden-frame ratio, mean contiguous hidden-run duration (seconds) and run count.
pub fn run_summary(hidden: &[bool], fps: f64) -> (f64, f64, usize) {
    if hidden.is_empty() {
        return (0.0, 0.0, 0);
    }
    let mut runs = 0usize;
    let mut total = 0usize;
    let mut prev = false;
    for &h in hidden {
        if h {
            total += 1;
            if !prev {
                runs += 1;
            }
        }
        prev = h;
    }
    let ratio = total as f64 / hidden.len() as f64;
    let avg = if runs == 0 { 0.0 } else { total as f64 / runs as f64 / fps };
    (ratio, avg, runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub name: String,
    pub kind: String,
    pub ratio: f64,
    pub avg_duration_s: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionStats {
    pub frames: usize,
    pub groups: Vec<GroupStats>,
    /// Aggregated over all groups sharing a kind.
    pub kinds: Vec<GroupStats>,
    pub contacts: Option<ContactStats>,
}

pub fn occlusion_stats(
    records: &[OcclusionRecord],
    groups: &[ResolvedGroup],
    fps: f64,
) -> Result<OcclusionStats, OcclusionError> {
    corpus_occlusion_stats(&[records], groups, fps)
}

/// Statistics pooled over several sequences; hidden runs never span a
/// sequence boundary.
pub fn corpus_occlusion_stats(
    sequences: &[&[OcclusionRecord]],
    groups: &[ResolvedGroup],
    fps: f64,
) -> Result<OcclusionStats, OcclusionError> {
    let frames: usize = sequences.iter().map(|s| s.len()).sum();
    if frames == 0 {
        return Err(OcclusionError::EmptyInput);
    }
    // (hidden frames, runs) per group.
    let counts: Vec<(usize, usize)> = (0..groups.len())
        .map(|g| {
            sequences.iter().fold((0, 0), |(h, r), seq| {
                let hidden: Vec<bool> = seq.iter().map(|rec| rec.statuses[g].hidden()).collect();
                let (_, _, runs) = run_summary(&hidden, fps);
                (h + hidden.iter().filter(|&&x| x).count(), r + runs)
            })
        })
        .collect();
    let summary = |name: &str, kind: &str, hidden: usize, slots: usize, runs: usize| GroupStats {
        name: name.to_string(),
        kind: kind.to_string(),
        ratio: hidden as f64 / slots as f64,
        avg_duration_s: if runs == 0 { 0.0 } else { hidden as f64 / runs as f64 / fps },
        runs,
    };
    let per_group: Vec<GroupStats> =
        groups.iter().zip(&counts).map(|(spec, &(h, r))| summary(&spec.name, &spec.kind, h, frames, r)).collect();
    let mut kinds: Vec<GroupStats> = Vec::new();
    for spec in groups {
        if kinds.iter().any(|k| k.kind == spec.kind) {
            continue;
        }
        let members: Vec<usize> = (0..groups.len()).filter(|&g| groups[g].kind == spec.kind).collect();
        let hidden: usize = members.iter().map(|&g| counts[g].0).sum();
        let runs: usize = members.iter().map(|&g| counts[g].1).sum();
        kinds.push(summary(&spec.kind, &spec.kind, hidden, frames * members.len(), runs));
    }
    Ok(OcclusionStats { frames, groups: per_group, kinds, contacts: None })
}

impl OcclusionStats {
    /// One row per joint kind plus the contact ratios when present.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("part,ratio,avg_duration_s\n");
        for k in &self.kinds {
            let _ = writeln!(out, "{},{:.6},{:.6}", k.name, k.ratio, k.avg_duration_s);
        }
        if let Some(c) = &self.contacts {
            let _ = writeln!(out, "self_contact,{:.6},", c.self_contact_ratio);
            let _ = writeln!(out, "hand_body_contact,{:.6},", c.hand_body_ratio);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactStats {
    pub frames: usize,
    pub self_contact_frames: usize,
    pub hand_body_frames: usize,
    pub self_contact_ratio: f64,
    pub hand_body_ratio: f64,
}

/// Whether any non-exempt pair interpenetrates, and whether any such pair
/// involves a hand primitive.
pub fn frame_contacts(shapes: &[Shape], rig: &OcclusionRig, inflation: f64) -> (bool, bool) {
    let grown: Vec<Shape> = shapes.iter().map(|s| s.inflated(inflation)).collect();
    let mut any = false;
    for i in 0..grown.len() {
        for j in i + 1..grown.len() {
            if rig.contact_exempt[i][j] || !shapes_overlap(&grown[i], &grown[j]) {
                continue;
            }
            if rig.hand_group[i] || rig.hand_group[j] {
                return (true, true);
            }
            any = true;
        }
    }
    (any, false)
}

pub fn detect_contacts(seq: &MotionSequence, rig: &OcclusionRig, inflation: f64) -> ContactStats {
    let mut self_contact_frames = 0;
    let mut hand_body_frames = 0;
    for world in seq.world_poses() {
        let (any, hand) = frame_contacts(&rig.pose(&world), rig, inflation);
        self_contact_frames += any as usize;
        hand_body_frames += hand as usize;
    }
    let n = seq.len().max(1) as f64;
    ContactStats {
        frames: seq.len(),
        self_contact_frames,
        hand_body_frames,
        self_contact_ratio: self_contact_frames as f64 / n,
        hand_body_ratio: hand_body_frames as f64 / n,
    }
}

/// `frame,group,status` rows.
pub fn records_to_csv(records: &[OcclusionRecord], groups: &[ResolvedGroup]) -> String {
    let mut out = String::from("frame,group,status\n");
    for r in records {
        for (g, s) in groups.iter().zip(&r.statuses) {
            let _ = writeln!(out, "{},{},{}", r.frame, g.name, s.as_str());
        }
    }
    out
}

/// Run-length encoding: magic, group names, frame count, then per group a
/// list of `(status code u8, length u32)` runs. Little-endian.
pub fn encode_runs(records: &[OcclusionRecord], groups: &[ResolvedGroup]) -> Vec<u8> {
    let mut out = RLE_MAGIC.to_vec();
    out.extend((groups.len() as u32).to_le_bytes());
    for g in groups {
        out.extend((g.name.len() as u32).to_le_bytes());
        out.extend(g.name.as_bytes());
    }
    out.extend((records.len() as u64).to_le_bytes());
    for g in 0..groups.len() {
        let mut runs: Vec<(Status, u32)> = Vec::new();
        for r in records {
            match runs.last_mut() {
                Some((s, n)) if *s == r.statuses[g] => *n += 1,
                _ => runs.push((r.statuses[g], 1)),
            }
        }
        out.extend((runs.len() as u32).to_le_bytes());
        for (s, n) in runs {
            out.push(s.code());
            out.extend(n.to_le_bytes());
        }
    }
    out
}

/// Inverse of [`encode_runs`]: group names and frame-major statuses.
pub fn decode_runs(bytes: &[u8]) -> Result<(Vec<String>, Vec<Vec<Status>>), OcclusionError> {
    let bad = |m: &str| OcclusionError::MalformedRuns(m.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], OcclusionError> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != RLE_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let n_groups = u32_at(take(4)?) as usize;
    let mut names = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let len = u32_at(take(4)?) as usize;
        names.push(String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("group name is not UTF-8"))?);
    }
    let n_frames = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut frames = vec![Vec::with_capacity(n_groups); n_frames];
    for _ in 0..n_groups {
        let n_runs = u32_at(take(4)?) as usize;
        let mut f = 0usize;
        for _ in 0..n_runs {
            let code = take(1)?[0];
            let status = Status::from_code(code).ok_or_else(|| bad("unknown status code"))?;
            let len = u32_at(take(4)?) as usize;
            if f + len > n_frames {
                return Err(bad("runs exceed frame count"));
            }
            for fr in &mut frames[f..f + len] {
                fr.push(status);
            }
            f += len;
        }
        if f != n_frames {
            return Err(bad("runs do not cover every frame"));
        }
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((names, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::GroupRule;

    fn group(name: &str, kind: &str) -> ResolvedGroup {
        ResolvedGroup { name: name.into(), kind: kind.into(), rule: GroupRule::Standard, members: vec![], probes: vec![] }
    }

    fn records(pattern: &[&[Status]]) -> Vec<OcclusionRecord> {
        pattern
            .iter()
            .enumerate()
            .map(|(f, s)| OcclusionRecord { frame: f, statuses: s.to_vec(), mask: vec![] })
            .collect()
    }

    #[test]
    fn single_run() {
        let mask: Vec<bool> = (0..10).map(|f| f < 6).collect();
        let (ratio, avg, runs) = run_summary(&mask, 120.0);
        assert_eq!((ratio, runs), (0.6, 1));
        assert!((avg - 0.05).abs() < 1e-15);
    }

    #[test]
    fn never_hidden() {
        assert_eq!(run_summary(&[false; 20], 30.0), (0.0, 0.0, 0));
    }

    #[test]
    fn two_runs() {
        let mut mask = vec![false; 100];
        mask[10..13].fill(true);
        mask[50..55].fill(true);
        let (ratio, avg, runs) = run_summary(&mask, 30.0);
        assert_eq!((ratio, runs), (0.08, 2));
        assert!((avg - 4.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn empty_records_rejected() {
        assert_eq!(occlusion_stats(&[], &[group("a", "a")], 30.0).unwrap_err(), OcclusionError::EmptyInput);
    }

    #[test]
    fn kinds_pool_left_and_right() {
        use Status::*;
        let recs = records(&[&[Occluded, Visible], &[Occluded, Visible], &[Visible, TooClose], &[Visible, Visible]]);
        let s = occlusion_stats(&recs, &[group("l_knee", "knee"), group("r_knee", "knee")], 2.0).unwrap();
        assert_eq!(s.groups[0].ratio, 0.5);
        assert_eq!(s.groups[1].ratio, 0.25);
        assert_eq!(s.kinds.len(), 1);
        assert_eq!(s.kinds[0].ratio, 3.0 / 8.0);
        // Runs of 2 and 1 frames at 2 fps.
        assert_eq!(s.kinds[0].avg_duration_s, 0.75);
    }

    #[test]
    fn run_length_round_trip() {
        use Status::*;
        let recs = records(&[&[Visible, OutOfView], &[Occluded, OutOfView], &[Occluded, TooClose]]);
        let groups = [group("a", "x"), group("bb", "y")];
        let bytes = encode_runs(&recs, &groups);
        let (names, frames) = decode_runs(&bytes).unwrap();
        assert_eq!(names, vec!["a", "bb"]);
        assert_eq!(frames, recs.iter().map(|r| r.statuses.clone()).collect::<Vec<_>>());
        assert!(decode_runs(&bytes[..bytes.len() - 1]).is_err());
        let csv = records_to_csv(&recs, &groups);
        assert_eq!(csv.lines().nth(4), Some("1,bb,out-of-view"));
    }
}
