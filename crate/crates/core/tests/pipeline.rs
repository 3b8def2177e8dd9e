use std::sync::Arc;

use egopose::eval::{prepare_sequence, run_evaluation, EvalConfig, NetworkPredictor};
use egopose::model::{load_weights, save_weights, Task, TaskLayout};
use egopose::occlusion::{corpus_occlusion_stats, CameraModel, OcclusionRecord, OcclusionRig, Status};
use egopose::skeleton::{ResolvedProfile, Skeleton, SkeletonProfile};
use egopose::synth::{generate_motion, humanoid_skeleton, SynthConfig};
use egopose::training::{train, EncodedSequence, LossWeights, TrainConfig};

fn setup(task: Task) -> (Arc<Skeleton>, ResolvedProfile, TaskLayout, Vec<Arc<EncodedSequence>>) {
    let skel = Arc::new(humanoid_skeleton());
    let profile = SkeletonProfile::humanoid().resolve(&skel).unwrap();
    let layout = TaskLayout::new(task, &skel, &profile, 9, 30.0);
    let rig = OcclusionRig::new(&skel, &profile, CameraModel::default()).unwrap();
    let seqs = (0..3)
        .map(|i| {
            let seq = generate_motion(&SynthConfig { seed: 10 + i, subject: i as u32, duration_s: 4.0, fps: 30.0 });
            let rig = (task == Task::InsideOut).then_some(&rig);
            Arc::new(prepare_sequence(&format!("q{i}"), &seq, rig, &layout, &profile).unwrap())
        })
        .collect();
    (skel, profile, layout, seqs)
}

fn tiny() -> TrainConfig {
    TrainConfig { window: 9, hidden: 16, mlp: vec![24], epochs: 2, batch_schedule: vec![32, 64], ..TrainConfig::default() }
}

#[test]
fn train_then_evaluate_every_task() {
    for task in [Task::InsideOut, Task::ThreePoint, Task::Finger] {
        let (skel, profile, layout, seqs) = setup(task);
        let out = train(&seqs[..2], &layout, &tiny(), &LossWeights::default(), 5, 1, |_| {}).unwrap();
        assert_eq!(out.network.dims.logits, if task == Task::InsideOut { 13 } else { 0 });
        let bytes = save_weights(&out.network, &layout, 5, serde_json::Value::Null);
        let (net, _) = load_weights(&bytes, Some(&layout.hash())).unwrap();
        let cfg = EvalConfig { corpus_label: "synthetic-test".into(), ..EvalConfig::default() };
        let predictor = NetworkPredictor { net: &net, window: 9, chunk: 64 };
        let report = run_evaluation(&seqs[2..], &predictor, Some(&layout.hash()), &layout, &skel, &profile, &cfg).unwrap();
        assert_eq!(report.frames, 120 - 8);
        assert_eq!(report.corpus, "synthetic-test");
        for row in &report.rows {
            assert!(row.rmsjpe_cm.is_finite() && row.rmsjpe_cm >= row.mpjpe_cm - 1e-12, "{row:?}");
        }
        for model in ["baseline", "network", "network+post"] {
            assert!(report.row(model, "all", "all").is_some(), "{task:?} {model}");
        }
        assert_eq!(report.row("network", "all", "occluded").is_some(), task == Task::InsideOut);
        assert_eq!(report.mask_accuracy.is_some(), task == Task::InsideOut);
        let again = run_evaluation(&seqs[2..], &predictor, None, &layout, &skel, &profile, &cfg).unwrap();
        assert_eq!(report.to_json(), again.to_json());
    }
}

#[test]
fn training_is_reproducible() {
    let (_, _, layout, seqs) = setup(Task::InsideOut);
    let run = |threads| {
        let out = train(&seqs, &layout, &tiny(), &LossWeights::default(), 11, threads, |_| {}).unwrap();
        save_weights(&out.network, &layout, 11, serde_json::Value::Null)
    };
    assert_eq!(run(1), run(3));
}

fn records(pattern: &[&str]) -> Vec<OcclusionRecord> {
    pattern
        .iter()
        .enumerate()
        .map(|(f, s)| OcclusionRecord {
            frame: f,
            statuses: s.chars().map(|c| if c == 'h' { Status::Occluded } else { Status::Visible }).collect(),
            mask: vec![],
        })
        .collect()
}

#[test]
fn corpus_stats_do_not_join_runs_across_sequences() {
    let skel = humanoid_skeleton();
    let profile = SkeletonProfile::humanoid().resolve(&skel).unwrap();
    let groups = &profile.groups[..1];
    let a = records(&["v", "h", "h"]);
    let b = records(&["h", "v", "v", "h"]);
    let s = corpus_occlusion_stats(&[&a, &b], groups, 10.0).unwrap();
    assert_eq!(s.frames, 7);
    assert_eq!(s.groups[0].runs, 3);
    assert!((s.groups[0].ratio - 4.0 / 7.0).abs() < 1e-15);
    assert!((s.groups[0].avg_duration_s - 4.0 / 3.0 / 10.0).abs() < 1e-15);
    let joined: Vec<OcclusionRecord> = a.iter().chain(&b).cloned().collect();
    let one = corpus_occlusion_stats(&[&joined], groups, 10.0).unwrap();
    assert_eq!(one.groups[0].runs, 2);
}
