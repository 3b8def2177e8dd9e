//! BVH (Biovision hierarchy) reading and writing.
//!
//! End sites become channel-less leaf joints named `<parent>_End`; zero-length
//! end sites carry no information and are dropped. Offsets and root
//! translation are multiplied by the unit scale on read and divided by it on
//! write. Non-root position channels are read but ignored: FK only rotates
//! rest offsets, which keeps bone lengths fixed.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use super::{euler_to_quat, quat_to_euler, Axis, Channel, Joint, MotionSequence, Pose, Skeleton, SkeletonError, Vec3};

/// Centimeter-authored files to meters.
pub const DEFAULT_UNIT_SCALE: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum BvhError {
    #[error("missing {0} section")]
    MissingSection(&'static str),
    #[error("frame {frame}: expected {expected} channel values, found {found}")]
    ChannelMismatch { frame: usize, expected: usize, found: usize },
    #[error("malformed hierarchy: {0}")]
    MalformedHierarchy(String),
    #[error("malformed motion section: {0}")]
    MalformedMotion(String),
    #[error("non-finite value `{0}`")]
    NonFiniteValue(String),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("joint `{0}` has a channel layout that cannot be written back")]
    UnsupportedChannels(String),
}

struct Tokens<'a> {
    inner: std::iter::Peekable<std::str::SplitWhitespace<'a>>,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<&'a str> {
        self.inner.next()
    }

    fn expect(&mut self, want: &str) -> Result<(), BvhError> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(BvhError::MalformedHierarchy(format!("expected `{want}`, found `{t}`"))),
            None => Err(BvhError::MalformedHierarchy(format!("expected `{want}`, found end of input"))),
        }
    }

    fn number(&mut self) -> Result<f64, BvhError> {
        let t = self
            .next()
            .ok_or_else(|| BvhError::MalformedHierarchy("unexpected end of input".into()))?;
        parse_number(t).map_err(|e| match e {
            BvhError::MalformedMotion(m) => BvhError::MalformedHierarchy(m),
            other => other,
        })
    }
}

fn parse_number(t: &str) -> Result<f64, BvhError> {
    let v: f64 = t
        .parse()
        .map_err(|_| BvhError::MalformedMotion(format!("`{t}` is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(BvhError::NonFiniteValue(t.to_string()))
    }
}

pub fn parse_bvh(text: &str) -> Result<MotionSequence, BvhError> {
    parse_bvh_with_scale(text, DEFAULT_UNIT_SCALE)
}

pub fn parse_bvh_with_scale(text: &str, scale: f64) -> Result<MotionSequence, BvhError> {
    let (hier_text, motion_text) = split_sections(text)?;

    let mut tokens = Tokens { inner: hier_text.split_whitespace().peekable() };
    let mut joints = Vec::new();
    tokens.expect("ROOT")?;
    let name = tokens
        .next()
        .ok_or_else(|| BvhError::MalformedHierarchy("ROOT without name".into()))?;
    parse_joint(&mut tokens, name.to_string(), None, scale, &mut joints)?;
    if let Some(t) = tokens.next() {
        return Err(BvhError::MalformedHierarchy(format!("trailing token `{t}` after root joint")));
    }
    let skeleton = Arc::new(Skeleton::new(joints)?);
    let channel_count: usize = skeleton.joints().iter().map(|j| j.channels.len()).sum();

    let mut lines = motion_text.lines().map(str::trim).filter(|l| !l.is_empty());
    let frames_line = lines
        .next()
        .ok_or_else(|| BvhError::MalformedMotion("missing `Frames:`".into()))?;
    let frame_count: usize = frames_line
        .strip_prefix("Frames:")
        .and_then(|r| r.trim().parse().ok())
        .ok_or_else(|| BvhError::MalformedMotion(format!("bad frame count line `{frames_line}`")))?;
    let time_line = lines
        .next()
        .ok_or_else(|| BvhError::MalformedMotion("missing `Frame Time:`".into()))?;
    let frame_time = time_line
        .strip_prefix("Frame Time:")
        .map(str::trim)
        .ok_or_else(|| BvhError::MalformedMotion(format!("bad frame time line `{time_line}`")))
        .and_then(parse_number)?;
    if frame_time <= 0.0 {
        return Err(BvhError::MalformedMotion(format!("frame time must be positive, got {frame_time}")));
    }

    let mut frames = Vec::with_capacity(frame_count);
    let mut values = Vec::with_capacity(channel_count);
    for (frame, line) in lines.enumerate() {
        values.clear();
        for tok in line.split_whitespace() {
            values.push(parse_number(tok)?);
        }
        if values.len() != channel_count {
            return Err(BvhError::ChannelMismatch { frame, expected: channel_count, found: values.len() });
        }
        frames.push(decode_frame(&skeleton, &values, scale));
    }
    if frames.len() != frame_count {
        return Err(BvhError::MalformedMotion(format!(
            "declared {frame_count} frames, found {}",
            frames.len()
        )));
    }
    Ok(MotionSequence::new(skeleton, frames, 1.0 / frame_time)?)
}

fn split_sections(text: &str) -> Result<(&str, &str), BvhError> {
    let h = find_keyword(text, "HIERARCHY").ok_or(BvhError::MissingSection("HIERARCHY"))?;
    let rest = &text[h + "HIERARCHY".len()..];
    let m = find_keyword(rest, "MOTION").ok_or(BvhError::MissingSection("MOTION"))?;
    Ok((&rest[..m], &rest[m + "MOTION".len()..]))
}

fn find_keyword(text: &str, kw: &str) -> Option<usize> {
    let mut offset = 0;
    while let Some(pos) = text[offset..].find(kw) {
        let start = offset + pos;
        let end = start + kw.len();
        let before_ok = start == 0 || text[..start].ends_with(char::is_whitespace);
        let after_ok = end == text.len() || text[end..].starts_with(char::is_whitespace);
        if before_ok && after_ok {
            return Some(start);
        }
        offset = end;
    }
    None
}

fn parse_joint(
    tokens: &mut Tokens<'_>,
    name: String,
    parent: Option<usize>,
    scale: f64,
    joints: &mut Vec<Joint>,
) -> Result<(), BvhError> {
    tokens.expect("{")?;
    tokens.expect("OFFSET")?;
    let offset = Vec3::new(tokens.number()?, tokens.number()?, tokens.number()?) * scale;
    tokens.expect("CHANNELS")?;
    let n = tokens.number()?;
    if n < 0.0 || n.fract() != 0.0 {
        return Err(BvhError::MalformedHierarchy(format!("bad channel count {n} on `{name}`")));
    }
    let mut channels = Vec::with_capacity(n as usize);
    for _ in 0..n as usize {
        let t = tokens
            .next()
            .ok_or_else(|| BvhError::MalformedHierarchy("unexpected end of input".into()))?;
        channels.push(
            Channel::parse(t)
                .ok_or_else(|| BvhError::MalformedHierarchy(format!("unknown channel `{t}`")))?,
        );
    }
    let index = joints.len();
    joints.push(Joint { name: name.clone(), parent, offset, channels });

    loop {
        match tokens.next() {
            Some("}") => return Ok(()),
            Some("JOINT") => {
                let child = tokens
                    .next()
                    .ok_or_else(|| BvhError::MalformedHierarchy("JOINT without name".into()))?;
                parse_joint(tokens, child.to_string(), Some(index), scale, joints)?;
            }
            Some("End") => {
                tokens.expect("Site")?;
                tokens.expect("{")?;
                tokens.expect("OFFSET")?;
                let off = Vec3::new(tokens.number()?, tokens.number()?, tokens.number()?) * scale;
                tokens.expect("}")?;
                if off.norm() > 0.0 {
                    joints.push(Joint {
                        name: format!("{name}_End"),
                        parent: Some(index),
                        offset: off,
                        channels: Vec::new(),
                    });
                }
            }
            Some(t) => {
                return Err(BvhError::MalformedHierarchy(format!("unexpected token `{t}` in `{name}`")))
            }
            None => return Err(BvhError::MalformedHierarchy(format!("unclosed brace for `{name}`"))),
        }
    }
}

fn decode_frame(skeleton: &Skeleton, values: &[f64], scale: f64) -> Pose {
    let mut cursor = 0;
    let mut pose = skeleton.rest_pose();
    let mut axes = Vec::with_capacity(3);
    let mut angles = Vec::with_capacity(3);
    for (i, joint) in skeleton.joints().iter().enumerate() {
        axes.clear();
        angles.clear();
        for ch in &joint.channels {
            let v = values[cursor];
            cursor += 1;
            if let Some(axis) = ch.rotation_axis() {
                axes.push(axis);
                angles.push(v);
            } else if let (Some(k), None) = (ch.position_axis(), joint.parent) {
                pose.root_translation[k] += v * scale;
            }
        }
        pose.rotations[i] = euler_to_quat(&axes, &angles);
    }
    pose
}

/// Serializes a motion sequence back to BVH text.
pub fn write_bvh(seq: &MotionSequence, scale: f64) -> Result<String, BvhError> {
    let skeleton = &seq.skeleton;
    let mut orders: Vec<Option<[Axis; 3]>> = Vec::with_capacity(skeleton.len());
    for j in skeleton.joints() {
        let axes: Vec<Axis> = j.channels.iter().filter_map(|c| c.rotation_axis()).collect();
        orders.push(match axes.len() {
            0 => None,
            3 if axes[0] != axes[1] && axes[1] != axes[2] && axes[0] != axes[2] => {
                Some([axes[0], axes[1], axes[2]])
            }
            _ => return Err(BvhError::UnsupportedChannels(j.name.clone())),
        });
    }

    let mut out = String::from("HIERARCHY\n");
    write_joint(skeleton, 0, 0, scale, &mut out);
    writeln!(out, "MOTION").unwrap();
    writeln!(out, "Frames: {}", seq.len()).unwrap();
    writeln!(out, "Frame Time: {}", 1.0 / seq.fps).unwrap();
    for pose in &seq.frames {
        let mut fields: Vec<String> = Vec::new();
        for (i, j) in skeleton.joints().iter().enumerate() {
            let euler = orders[i].map(|o| (o, quat_to_euler(&pose.rotations[i], o).unwrap()));
            let mut rot_slot = 0;
            for ch in &j.channels {
                if let Some(k) = ch.position_axis() {
                    let v = if j.parent.is_none() {
                        (pose.root_translation[k] - j.offset[k]) / scale
                    } else {
                        j.offset[k] / scale
                    };
                    fields.push(format_value(v));
                } else if let Some((_, angles)) = euler {
                    fields.push(format_value(angles[rot_slot]));
                    rot_slot += 1;
                }
            }
        }
        writeln!(out, "{}", fields.join(" ")).unwrap();
    }
    Ok(out)
}

fn format_value(v: f64) -> String {
    // Shortest representation that parses back to the same f64.
    let s = format!("{v}");
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn write_joint(skeleton: &Skeleton, i: usize, depth: usize, scale: f64, out: &mut String) {
    let pad = "\t".repeat(depth);
    let j = skeleton.joint(i);
    let off = j.offset / scale;
    if j.is_end_site() && skeleton.children(i).is_empty() && j.parent.is_some() {
        writeln!(out, "{pad}End Site").unwrap();
        writeln!(out, "{pad}{{").unwrap();
        writeln!(out, "{pad}\tOFFSET {} {} {}", format_value(off.x), format_value(off.y), format_value(off.z)).unwrap();
        writeln!(out, "{pad}}}").unwrap();
        return;
    }
    let kw = if j.parent.is_none() { "ROOT" } else { "JOINT" };
    writeln!(out, "{pad}{kw} {}", j.name).unwrap();
    writeln!(out, "{pad}{{").unwrap();
    writeln!(out, "{pad}\tOFFSET {} {} {}", format_value(off.x), format_value(off.y), format_value(off.z)).unwrap();
    let names: Vec<&str> = j.channels.iter().map(|c| c.name()).collect();
    writeln!(out, "{pad}\tCHANNELS {} {}", names.len(), names.join(" ")).unwrap();
    for &c in skeleton.children(i) {
        write_joint(skeleton, c, depth + 1, scale, out);
    }
    writeln!(out, "{pad}}}").unwrap();
}
