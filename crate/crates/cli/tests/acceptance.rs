//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::path::Path;
use std::process::Command as Process;
use std::sync::Arc;
use std::time::Instant;

use egopose::eval::{baseline_predict, compute_metrics, EvalReport, SUBSETS};
use egopose::ik::{solve_frame, IkConfig, IkTarget};
use egopose::model::Dims;
use egopose::occlusion::{
    detect_contacts, frustum_status, occlusion_stats, point_visible, ray_hit, CameraModel, FrustumStatus, OcclusionRecord,
    OcclusionRig, Shape, Status,
};
use egopose::skeleton::{forward_kinematics_full, Channel, Joint, MotionSequence, Pose, Quat, Skeleton, SkeletonProfile, Vec3};
use egopose::synth::{generate_motion, humanoid_skeleton, SynthConfig};
use egopose::training::gradient_check;
use egopose_cli::{execute, Command, Options, RunConfig};
use nalgebra::{Unit, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_rotation(rng: &mut ChaCha8Rng, max_deg: f64) -> Quat {
    let axis = Unit::new_normalize(Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    Quat::from_axis_angle(&axis, rng.random_range(0.0..max_deg).to_radians())
}

fn gradients() -> Outcome {
    let dims = Dims { input: 4, hidden: 8, mlp: vec![6, 5], positions: 9, logits: 2 };
    let r = gradient_check(&dims, 3, 100, 1e-5, 1e-4, 2024);
    outcome(
        r.pass && r.trials == 100,
        format!("{} trials, {} parameters, max relative error {:.2e} (tol 1e-4)", r.trials, r.parameters_checked, r.max_rel_error),
    )
}

/// First entry of `dir` into `shape` by sphere tracing the exact distance field.
fn sphere_trace(shape: &Shape, origin: &Vec3, dir: &Vec3, max_t: f64) -> Option<f64> {
    let mut t = 0.0;
    for _ in 0..200_000 {
        let d = shape.distance(&(origin + dir * t));
        if d < 1e-10 {
            return Some(t);
        }
        t += d;
        if t >= max_t {
            return None;
        }
    }
    None
}

/// Segment test by dense 1 mm marching; solids holding the origin are skipped.
fn march_blocked(origin: &Vec3, target: &Vec3, shapes: &[Shape], exclude: &[bool]) -> bool {
    let d = target - origin;
    let n = (d.norm() / 1e-3).ceil().max(1.0) as usize;
    let live: Vec<&Shape> = shapes.iter().zip(exclude).filter(|(s, ex)| !**ex && !s.contains(origin)).map(|(s, _)| s).collect();
    (1..n).any(|i| {
        let p = origin + d * (i as f64 / n as f64);
        live.iter().any(|s| s.contains(&p))
    })
}

fn occlusion_oracle() -> Outcome {
    let skel = humanoid_skeleton();
    let profile = SkeletonProfile::humanoid().resolve(&skel).unwrap();
    let rig = OcclusionRig::new(&skel, &profile, CameraModel::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut checks, mut agree) = (0usize, 0usize);
    let (mut hit_pairs, mut hit_agree, mut worst_dist) = (0usize, 0usize, 0.0f64);
    for k in 0..100 {
        let seq = generate_motion(&SynthConfig { seed: 500 + k, subject: (k % 4) as u32, duration_s: 1.0, fps: 10.0 });
        let mut pose = seq.frames[rng.random_range(0..seq.len())].clone();
        for (j, q) in pose.rotations.iter_mut().enumerate() {
            if !skel.joint(j).is_end_site() {
                *q = random_rotation(&mut rng, 25.0) * *q;
            }
        }
        let world = forward_kinematics_full(&skel, &pose);
        let shapes = rig.pose(&world);
        let camera = rig.camera(&world);
        for j in (0..skel.len()).filter(|&j| !skel.joint(j).is_end_site()) {
            let target = world.positions[j];
            let exclude = &rig.attached[j];
            let oracle = frustum_status(&camera, &target) == FrustumStatus::Inside && !march_blocked(&camera.origin, &target, &shapes, exclude);
            checks += 1;
            agree += usize::from(oracle == point_visible(&camera, &target, &shapes, exclude));

            let len = (target - camera.origin).norm();
            if len < 1e-9 {
                continue;
            }
            let dir = (target - camera.origin) / len;
            for s in shapes.iter().filter(|s| !s.contains(&camera.origin)) {
                let analytic = ray_hit(s, &camera.origin, &dir, len);
                let traced = sphere_trace(s, &camera.origin, &dir, len);
                hit_pairs += 1;
                hit_agree += usize::from(analytic.is_some() == traced.is_some());
                if let (Some(a), Some(b)) = (analytic, traced) {
                    worst_dist = worst_dist.max((a - b).abs());
                }
            }
        }
    }
    let vis = agree as f64 / checks as f64;
    let hits = hit_agree as f64 / hit_pairs as f64;
    outcome(
        vis >= 0.99 && hits >= 0.99 && worst_dist <= 1e-4,
        format!(
            "visibility agreement {:.2}% of {checks}, hit/miss agreement {:.2}% of {hit_pairs}, worst hit distance {:.1e} m",
            100.0 * vis,
            100.0 * hits,
            worst_dist
        ),
    )
}

fn two_link() -> Skeleton {
    let rot = vec![Channel::Zrotation, Channel::Xrotation, Channel::Yrotation];
    Skeleton::new(vec![
        Joint { name: "shoulder".into(), parent: None, offset: Vec3::zeros(), channels: rot.clone() },
        Joint { name: "elbow".into(), parent: Some(0), offset: Vec3::new(0.3, 0.0, 0.0), channels: rot },
        Joint { name: "wrist".into(), parent: Some(1), offset: Vec3::new(0.25, 0.0, 0.0), channels: vec![] },
    ])
    .unwrap()
}

fn ik() -> Outcome {
    let skel = humanoid_skeleton();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = IkConfig::default();
    let (mut worst_res, mut worst_iter, mut worst_bone) = (0.0f64, 0usize, 0.0f64);
    for _ in 0..100 {
        let mut pose = skel.rest_pose();
        pose.root_translation = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(0.6..1.1), rng.random_range(-0.5..0.5));
        for (j, q) in pose.rotations.iter_mut().enumerate() {
            if !skel.joint(j).is_end_site() {
                *q = random_rotation(&mut rng, 60.0);
            }
        }
        let gt = forward_kinematics_full(&skel, &pose);
        let targets: Vec<IkTarget> = (0..skel.len()).map(|j| IkTarget { joint: j, position: gt.positions[j], weight: 1.0 }).collect();
        let s = solve_frame(&skel, &targets, &skel.rest_pose(), &cfg).unwrap();
        let max_err = targets.iter().map(|t| (s.positions[t.joint] - t.position).norm()).fold(0.0, f64::max);
        worst_res = worst_res.max(max_err);
        worst_iter = worst_iter.max(s.iterations);
        for (p, c) in skel.edges() {
            let rest = skel.joint(c).offset.norm();
            if rest > 0.0 {
                worst_bone = worst_bone.max(((s.positions[c] - s.positions[p]).norm() - rest).abs() / rest);
            }
        }
    }
    // Planar two-link arm against the law of cosines.
    let arm = two_link();
    let (x, y) = (0.35, 0.2);
    let (l1, l2) = (0.3f64, 0.25f64);
    let d2 = x * x + y * y;
    let elbow = ((d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).acos();
    let shoulder = y.atan2(x) - (l2 * elbow.sin()).atan2(l1 + l2 * elbow.cos());
    let mut start = arm.rest_pose();
    start.rotations[1] = Quat::from_axis_angle(&Vector3::z_axis(), 0.3);
    let fixed = IkConfig { solve_root_translation: false, ..IkConfig::default() };
    let s = solve_frame(&arm, &[IkTarget { joint: 2, position: Vec3::new(x, y, 0.0), weight: 1.0 }], &start, &fixed).unwrap();
    let z_angle = |q: &Quat| q.scaled_axis().z;
    let angle_err = (z_angle(&s.pose.rotations[0]) - shoulder).abs().max((z_angle(&s.pose.rotations[1]) - elbow).abs());
    outcome(
        worst_res <= 1e-3 && worst_iter <= 50 && worst_bone <= 1e-9 && angle_err <= 1e-4,
        format!(
            "100 poses: worst target error {worst_res:.1e} m, max {worst_iter} iterations, bone drift {worst_bone:.1e}; two-link angle error {angle_err:.1e} rad"
        ),
    )
}

fn read_report(out: &Path) -> EvalReport {
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("eval/report.json")).unwrap()).unwrap();
    serde_json::from_value(doc["report"].clone()).unwrap()
}

/// Default-schedule training on the default synthetic corpus; used by criteria 4, 5 and 6.
fn end_to_end(dir: &Path) -> Result<(EvalReport, f64), String> {
    let cfg = RunConfig { out: dir.to_path_buf(), seed: 1, ..RunConfig::default() };
    let opts = Options { threads: egopose_cli::threads_from_env(), ..Options::default() };
    let start = Instant::now();
    for c in [Command::Synth, Command::Ingest, Command::Simulate, Command::Train, Command::Eval] {
        execute(c, &cfg, &opts).map_err(|e| format!("{}: {e}", c.name()))?;
    }
    Ok((read_report(dir), start.elapsed().as_secs_f64()))
}

fn ordering(report: &EvalReport, secs: f64) -> Outcome {
    let (Some(net), Some(base)) = (report.row("network", "body", "occluded"), report.row("baseline", "body", "occluded")) else {
        return outcome(false, "report lacks occluded body rows".into());
    };
    let all = |m: &str| report.row(m, "all", "occluded").map(|r| r.rmsjpe_cm).unwrap_or(f64::NAN);
    let ratio = net.rmsjpe_cm / base.rmsjpe_cm;
    outcome(
        ratio <= 0.8 && secs <= 1800.0,
        format!(
            "occluded body RMSJPE network {:.2} cm vs baseline {:.2} cm (ratio {ratio:.3}, need <= 0.8); occluded body+finger {:.2} vs {:.2} cm; {:.0} s",
            net.rmsjpe_cm,
            base.rmsjpe_cm,
            all("network"),
            all("baseline"),
            secs
        ),
    )
}

fn smoothing(report: &EvalReport) -> Outcome {
    let a = |k: &str| report.acceleration.get(k).copied().unwrap_or(f64::NAN);
    let (raw, post, gt) = (a("network"), a("network+post"), a("ground-truth"));
    outcome(
        post < raw && gt < 0.01,
        format!("strong-acceleration fraction raw {:.3}% -> post {:.3}%, ground truth {:.3}%", 100.0 * raw, 100.0 * post, 100.0 * gt),
    )
}

fn identities(report: Option<&EvalReport>) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    if let Some(r) = report {
        let bad = r.rows.iter().filter(|row| row.rmsjpe_cm < row.mpjpe_cm).count();
        ok &= bad == 0 && !r.rows.is_empty();
        notes.push(format!("{} report rows, {bad} with RMSJPE < MPJPE", r.rows.len()));
    } else {
        ok = false;
        notes.push("no end-to-end report".into());
    }
    let gt = vec![vec![Vec3::zeros(), Vec3::zeros()]];
    let pred = vec![vec![Vec3::new(0.03, 0.04, 0.0), Vec3::zeros()]];
    let one = compute_metrics(&pred, &gt, |_, j| j == 0).unwrap();
    let two = compute_metrics(&pred, &gt, |_, _| true).unwrap();
    let exact = (one.rmsjpe_cm - 5.0).abs() <= 1e-12
        && (one.mpjpe_cm - 5.0).abs() <= 1e-12
        && (two.mpjpe_cm - 2.5).abs() <= 1e-12
        && (two.rmsjpe_cm - 12.5f64.sqrt()).abs() <= 1e-12;
    ok &= exact;
    notes.push(format!("3-4-5 cases exact: {exact}"));
    let targets = Array2::from_shape_fn((50, 6), |(t, c)| (t as f64 * 0.1 + c as f64).sin());
    let observed = Array2::from_shape_fn((50, 2), |(t, k)| (t + k) % 3 != 0);
    let base = baseline_predict(targets.view(), observed.view(), &[0.0; 6]);
    let visible_zero = (0..50).all(|t| (0..2).all(|k| !observed[[t, k]] || (0..3).all(|c| base[[t, 3 * k + c]] == targets[[t, 3 * k + c]])));
    ok &= visible_zero;
    notes.push(format!("baseline exact on visible joints: {visible_zero}"));
    let _ = SUBSETS;
    outcome(ok, notes.join("; "))
}

fn determinism(bin: &Path, root: &Path) -> Outcome {
    let cfg = serde_json::json!({
        "corpus": {"synthetic": {"subjects": 2, "per_subject": 2, "duration_s": 8.0, "fps": 30.0}, "train_ratio": 0.75},
        "train": {"hidden": 32, "mlp": [32], "epochs": 2, "batch_schedule": [64, 64]},
        "seed": 21
    });
    let cfg_path = root.join("det.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(run);
        for c in ["synth", "ingest", "simulate", "train", "eval"] {
            let status = Process::new(bin)
                .args(["--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap(), c])
                .output()
                .unwrap();
            if !status.status.success() {
                return outcome(false, format!("{c} failed: {}", String::from_utf8_lossy(&status.stderr)));
            }
        }
        outputs.push(out);
    }
    let files = ["train/weights.bin", "train/log.jsonl", "eval/report.json", "eval/report.csv"];
    let same: Vec<bool> =
        files.iter().map(|f| std::fs::read(outputs[0].join(f)).unwrap() == std::fs::read(outputs[1].join(f)).unwrap()).collect();
    outcome(same.iter().all(|&s| s), format!("byte-identical across two CLI runs: {:?}", files.iter().zip(&same).collect::<Vec<_>>()))
}

fn statistics() -> Outcome {
    let skel = Arc::new(humanoid_skeleton());
    let profile = SkeletonProfile::humanoid().resolve(&skel).unwrap();
    let rig = OcclusionRig::new(&skel, &profile, CameraModel::default()).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;

    // Group 1 hidden as v h h v h v v h h h at 10 fps: ratio 0.6, 3 runs, 0.2 s mean.
    let pattern = "vhhvhvvhhh";
    let records: Vec<OcclusionRecord> = pattern
        .chars()
        .enumerate()
        .map(|(f, c)| {
            let mut statuses = vec![Status::Visible; profile.groups.len()];
            statuses[1] = if c == 'h' { Status::OutOfView } else { Status::Visible };
            rig.record(f, statuses)
        })
        .collect();
    let s = occlusion_stats(&records, &profile.groups, 10.0).unwrap();
    let g = &s.groups[1];
    let masks_ok = (0..skel.len()).all(|j| records[1].mask[j] == (rig.joint_group[j] == Some(1)));
    let stats_ok = g.runs == 3 && (g.ratio - 0.6).abs() < 1e-15 && (g.avg_duration_s - 0.2).abs() < 1e-15 && s.groups[0].ratio == 0.0;
    ok &= stats_ok && masks_ok;
    notes.push(format!("masks {masks_ok}, ratio {} runs {} mean {} s", g.ratio, g.runs, g.avg_duration_s));

    // Three T-pose frames, two frames with the left hand pressed into the chest,
    // one frame with the knees crossed.
    let rest = skel.rest_pose();
    let rest_world = forward_kinematics_full(&skel, &rest);
    let j = |n: &str| skel.index_of(n).unwrap();
    let chest = rest_world.positions[j("Spine2")] + Vec3::new(0.0, 0.0, 0.02);
    let keep: Vec<IkTarget> = ["Head", "RightHand", "LeftFoot", "RightFoot"]
        .iter()
        .map(|n| IkTarget { joint: j(n), position: rest_world.positions[j(n)], weight: 1.0 })
        .chain([IkTarget { joint: j("LeftHand"), position: chest, weight: 1.0 }])
        .collect();
    let fixed = IkConfig { solve_root_translation: false, max_iterations: 200, ..IkConfig::default() };
    let hand_on_chest = solve_frame(&skel, &keep, &rest, &fixed).unwrap().pose;
    let mut crossed = rest.clone();
    crossed.rotations[j("LeftUpLeg")] = Quat::from_axis_angle(&Vector3::z_axis(), (-20f64).to_radians());
    crossed.rotations[j("RightUpLeg")] = Quat::from_axis_angle(&Vector3::z_axis(), 20f64.to_radians());
    let frames: Vec<Pose> = vec![rest.clone(), rest.clone(), rest, hand_on_chest.clone(), hand_on_chest, crossed];
    let seq = MotionSequence::new(skel.clone(), frames, 30.0).unwrap();
    let c = detect_contacts(&seq, &rig, 0.01);
    let contacts_ok = c.frames == 6 && c.self_contact_frames == 3 && c.hand_body_frames == 2 && c.hand_body_ratio == 2.0 / 6.0;
    ok &= contacts_ok;
    notes.push(format!("contacts self {}/{} hand-body {}/{}", c.self_contact_frames, c.frames, c.hand_body_frames, c.frames));
    outcome(ok, notes.join("; "))
}

fn main() {
    // Ignore the libtest flags cargo passes (e.g. --quiet, filters).
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let bin = Path::new(env!("CARGO_BIN_EXE_egopose"));
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut timed = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!("[{}] {name} ({secs:.1} s): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o, secs));
    };
    timed("1 gradient correctness", &mut || {
        let t = Instant::now();
        let mut o = gradients();
        o.pass &= t.elapsed().as_secs_f64() < 60.0;
        o
    });
    timed("2 occlusion oracle", &mut || {
        let t = Instant::now();
        let mut o = occlusion_oracle();
        o.pass &= t.elapsed().as_secs_f64() < 120.0;
        o
    });
    timed("3 inverse kinematics", &mut || {
        let t = Instant::now();
        let mut o = ik();
        o.pass &= t.elapsed().as_secs_f64() < 60.0;
        o
    });
    let e2e = end_to_end(&tmp.path().join("e2e"));
    timed("4 end-to-end ordering", &mut || match &e2e {
        Ok((r, secs)) => ordering(r, *secs),
        Err(e) => outcome(false, e.clone()),
    });
    timed("5 smoothing effect", &mut || match &e2e {
        Ok((r, _)) => smoothing(r),
        Err(e) => outcome(false, e.clone()),
    });
    timed("6 metric identities", &mut || identities(e2e.as_ref().ok().map(|(r, _)| r)));
    timed("7 determinism", &mut || determinism(bin, tmp.path()));
    timed("8 statistics plumbing", &mut || statistics());
    let failed = results.iter().filter(|(_, o, _)| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed in {:.0} s", results.len() - failed, started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
