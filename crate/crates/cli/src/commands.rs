use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use egopose::eval::{prepare_sequence, run_evaluation, split_corpus, EvalReport, NetworkPredictor, Predictor, SplitEntry, SplitManifest};
use egopose::ik::{smooth_stream, solve_sequence, to_motion, IkTarget};
use egopose::model::{load_weights, save_weights, Network, Task, TaskLayout};
use egopose::occlusion::{corpus_occlusion_stats, decode_runs, detect_contacts, encode_runs, ContactStats, OcclusionRecord, OcclusionRig};
use egopose::skeleton::{parse_bvh_with_scale, resample, write_bvh, MotionSequence, ResolvedProfile, Skeleton, SkeletonProfile, Vec3};
use egopose::synth::{generate_bvh, plan_corpus};
use egopose::training::{decode_positions, encode_sequence, make_windows, predict_windows, train, EncodedSequence, LogRecord};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::config::{hex_digest, ConfigError, RunConfig};
use crate::corpus::{decode_sequence_file, encode_sequence_file, find_bvh, id_of, subject_of, CorpusError, IndexEntry, SequenceHeader};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Data(String),
    #[error("layout hash mismatch: weights {weights}, config {config}")]
    LayoutMismatch { weights: String, config: String },
    #[error("occluded RMSJPE {value:.3} cm exceeds threshold {threshold:.3} cm")]
    Threshold { value: f64, threshold: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Corpus(_) => 3,
            CliError::Data(_) => 4,
            CliError::LayoutMismatch { .. } => 5,
            CliError::Threshold { .. } => 6,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(ConfigError::UnknownKey { .. }) => "unknown_key",
            CliError::Config(ConfigError::Validation { .. }) => "validation",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Corpus(_) => "corpus",
            CliError::Data(_) => "data",
            CliError::LayoutMismatch { .. } => "layout_hash_mismatch",
            CliError::Threshold { .. } => "threshold",
        }
    }

    /// One-line machine-readable form for stderr.
    pub fn to_json(&self) -> String {
        json!({"error": self.kind(), "code": self.exit_code(), "message": self.to_string()}).to_string()
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io { path: path.display().to_string(), reason: e.to_string() }
}

/// Writes through a temporary sibling and renames, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| io_err(path, e))
}

/// Order-preserving map over `threads` scoped workers.
fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let per = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(per).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Ingest,
    Simulate,
    Stats,
    Train,
    Eval,
    Predict,
    Export,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest => "ingest",
            Command::Simulate => "simulate",
            Command::Stats => "stats",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Predict => "predict",
            Command::Export => "export",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub threshold_cm: Option<f64>,
    /// Source BVH for `predict` and `export`.
    pub input: Option<PathBuf>,
    pub threads: usize,
}

/// Worker count from `UNOC_THREADS`, else the available parallelism.
pub fn threads_from_env() -> usize {
    std::env::var("UNOC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config_hash: String,
    seed: u64,
    task: &'static str,
    artifacts: Vec<Artifact>,
    wall_s: f64,
    created_unix: u64,
}

/// Paths are relative to the output directory.
pub mod paths {
    pub const BVH: &str = "bvh";
    pub const CORPUS: &str = "corpus";
    pub const INDEX: &str = "corpus/index.json";
    pub const OCCLUSION: &str = "occlusion";
    pub const STATS_CSV: &str = "stats/stats.csv";
    pub const STATS_JSON: &str = "stats/stats.json";
    pub const WEIGHTS: &str = "train/weights.bin";
    pub const LOG: &str = "train/log.jsonl";
    pub const SPLIT: &str = "train/split.json";
    pub const REPORT_JSON: &str = "eval/report.json";
    pub const REPORT_CSV: &str = "eval/report.csv";
}

struct Run<'a> {
    cfg: &'a RunConfig,
    opts: &'a Options,
    written: Vec<Artifact>,
}

impl Run<'_> {
    fn out(&self, rel: &str) -> PathBuf {
        self.cfg.out.join(rel)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.out(rel), bytes)?;
        self.written.push(Artifact { path: rel.to_string(), sha256: hex_digest(bytes) });
        Ok(())
    }

    fn profile(&self, skeleton: &Skeleton) -> Result<ResolvedProfile, CliError> {
        let profile = match &self.cfg.profile {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                SkeletonProfile::from_json(&text).map_err(data)?
            }
            None => SkeletonProfile::humanoid(),
        };
        profile.resolve(skeleton).map_err(data)
    }

    fn layout(&self, skeleton: &Skeleton, profile: &ResolvedProfile) -> TaskLayout {
        TaskLayout::new(self.cfg.task, skeleton, profile, self.cfg.train.window, self.cfg.train.fps)
    }

    fn index(&self) -> Result<Vec<IndexEntry>, CliError> {
        let path = self.out(paths::INDEX);
        serde_json::from_slice(&read(&path)?).map_err(|e| io_err(&path, e))
    }

    fn load_sequence(&self, id: &str) -> Result<(SequenceHeader, MotionSequence), CliError> {
        let path = self.out(&format!("{}/{id}.seq", paths::CORPUS));
        Ok(decode_sequence_file(&read(&path)?, &path.display().to_string())?)
    }

    fn load_records(&self, id: &str, rig: &OcclusionRig, frames: usize) -> Result<Vec<OcclusionRecord>, CliError> {
        let path = self.out(&format!("{}/{id}.occ", paths::OCCLUSION));
        if !path.exists() {
            return Err(CliError::Data(format!("no occlusion records for {id}; run simulate first")));
        }
        let (names, statuses) = decode_runs(&read(&path)?).map_err(data)?;
        if names.iter().ne(rig.groups.iter().map(|g| &g.name)) || statuses.len() != frames {
            return Err(CliError::Data(format!("occlusion records for {id} do not match the profile or sequence")));
        }
        Ok(statuses.into_iter().enumerate().map(|(f, s)| rig.record(f, s)).collect())
    }

    fn rig(&self, skeleton: &Skeleton, profile: &ResolvedProfile) -> Result<OcclusionRig, CliError> {
        OcclusionRig::new(skeleton, profile, self.cfg.camera).map_err(data)
    }

    fn split(&self, index: &[IndexEntry]) -> Result<SplitManifest, CliError> {
        let entries: Vec<SplitEntry> =
            index.iter().map(|e| SplitEntry { id: e.id.clone(), subject: Some(e.subject.clone()) }).collect();
        let c = &self.cfg.corpus;
        split_corpus(&entries, c.train_ratio, &c.held_out_subjects, self.cfg.seed).map_err(data)
    }

    /// Loads and encodes `ids` for the configured task.
    fn encode(&self, ids: &[String]) -> Result<(Arc<Skeleton>, ResolvedProfile, TaskLayout, Vec<Arc<EncodedSequence>>), CliError> {
        let first = ids.first().ok_or_else(|| CliError::Data("no sequences selected".into()))?;
        let skeleton = self.load_sequence(first)?.1.skeleton;
        let profile = self.profile(&skeleton)?;
        let layout = self.layout(&skeleton, &profile);
        let rig = self.rig(&skeleton, &profile)?;
        let encoded = par_map(ids, self.opts.threads, |id| -> Result<Arc<EncodedSequence>, CliError> {
            let (_, seq) = self.load_sequence(id)?;
            if *seq.skeleton != *skeleton {
                return Err(CliError::Data(format!("{id} uses a different skeleton")));
            }
            let records = match self.cfg.task {
                Task::InsideOut => Some(self.load_records(id, &rig, seq.len())?),
                _ => None,
            };
            Ok(Arc::new(encode_sequence(id, &seq, records.as_deref(), &layout, &profile).map_err(data)?))
        });
        let encoded = encoded.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok((skeleton, profile, layout, encoded))
    }

    fn load_network(&self, layout: &TaskLayout) -> Result<Network, CliError> {
        let path = self.out(paths::WEIGHTS);
        let (net, header) = load_weights(&read(&path)?, None).map_err(data)?;
        if header.layout_hash != layout.hash() {
            return Err(CliError::LayoutMismatch { weights: header.layout_hash, config: layout.hash() });
        }
        Ok(net)
    }

    /// Encodes an arbitrary BVH at the model rate, simulating occlusion for the inside-out task.
    fn encode_input(&self) -> Result<(Arc<EncodedSequence>, MotionSequence, Arc<Skeleton>, ResolvedProfile, TaskLayout), CliError> {
        let input = self.opts.input.as_ref().ok_or_else(|| CliError::Data("--input is required".into()))?;
        let text = std::fs::read_to_string(input).map_err(|e| io_err(input, e))?;
        let seq = parse_bvh_with_scale(&text, self.cfg.corpus.unit_scale).map_err(data)?;
        let seq = resample(&seq, self.cfg.train.fps).map_err(data)?;
        let skeleton = seq.skeleton.clone();
        let profile = self.profile(&skeleton)?;
        let layout = self.layout(&skeleton, &profile);
        let rig = self.rig(&skeleton, &profile)?;
        let rig = (self.cfg.task == Task::InsideOut).then_some(&rig);
        let enc = prepare_sequence(&id_of(input), &seq, rig, &layout, &profile).map_err(data)?;
        Ok((Arc::new(enc), seq, skeleton, profile, layout))
    }

    /// Global output positions for frames `window − 1 ..`.
    fn predict_global(&self, net: &Network, enc: &Arc<EncodedSequence>, layout: &TaskLayout, profile: &ResolvedProfile) -> Result<Vec<Vec<Vec3>>, CliError> {
        let windows = make_windows(enc, layout.window, 1).map_err(data)?;
        let (pos, _) = predict_windows(net, &windows, self.cfg.eval.chunk);
        Ok(windows.iter().enumerate().map(|(i, w)| decode_positions(layout, profile, &enc.context[w.end], pos.row(i))).collect())
    }
}

/// Runs one subcommand. Returns text for stdout.
pub fn execute(command: Command, cfg: &RunConfig, opts: &Options) -> Result<String, CliError> {
    cfg.validate()?;
    let started = Instant::now();
    let mut run = Run { cfg, opts, written: Vec::new() };
    let stdout = match command {
        Command::Synth => synth(&mut run)?,
        Command::Ingest => ingest(&mut run)?,
        Command::Simulate => simulate(&mut run)?,
        Command::Stats => stats(&mut run)?,
        Command::Train => train_cmd(&mut run)?,
        Command::Eval => eval_cmd(&mut run)?,
        Command::Predict => predict(&mut run)?,
        Command::Export => export(&mut run)?,
    };
    let manifest = Manifest {
        tool: "egopose",
        version: env!("CARGO_PKG_VERSION"),
        command: command.name(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        task: cfg.task.as_str(),
        artifacts: std::mem::take(&mut run.written),
        wall_s: started.elapsed().as_secs_f64(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&cfg.out.join(format!("manifests/{}.json", command.name())), &bytes)?;
    Ok(stdout)
}

fn synth(run: &mut Run) -> Result<String, CliError> {
    let s = &run.cfg.corpus.synthetic;
    let plan = plan_corpus(run.cfg.seed, s.subjects, s.per_subject, s.duration_s, s.fps);
    let texts = par_map(&plan, run.opts.threads, |e| generate_bvh(&e.config));
    for (e, text) in plan.iter().zip(&texts) {
        run.write(&format!("{}/{}/{}.bvh", paths::BVH, e.subject, e.id), text.as_bytes())?;
    }
    Ok(format!("wrote {} synthetic sequences ({:.1} min)\n", plan.len(), plan.len() as f64 * s.duration_s / 60.0))
}

fn ingest(run: &mut Run) -> Result<String, CliError> {
    let roots = if run.cfg.corpus.paths.is_empty() { vec![run.out(paths::BVH)] } else { run.cfg.corpus.paths.clone() };
    let files = find_bvh(&roots)?;
    if files.is_empty() {
        return Err(CliError::Data("no BVH files found".into()));
    }
    let (scale, fps) = (run.cfg.corpus.unit_scale, run.cfg.train.fps);
    let parsed = par_map(&files, run.opts.threads, |p| -> Result<MotionSequence, CliError> {
        let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        let seq = parse_bvh_with_scale(&text, scale).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        resample(&seq, fps).map_err(data)
    });
    let mut index: Vec<IndexEntry> = Vec::new();
    let mut skeleton: Option<Arc<Skeleton>> = None;
    for (path, seq) in files.iter().zip(parsed) {
        let seq = seq?;
        let (id, subject) = (id_of(path), subject_of(path));
        if index.iter().any(|e| e.id == id) {
            return Err(CliError::Data(format!("duplicate sequence id {id}")));
        }
        match &skeleton {
            None => {
                run.profile(&seq.skeleton)?;
                skeleton = Some(seq.skeleton.clone());
            }
            Some(s) if **s != *seq.skeleton => return Err(CliError::Data(format!("{id} uses a different skeleton"))),
            _ => {}
        }
        let header = SequenceHeader {
            id: id.clone(),
            subject: subject.clone(),
            source: path.display().to_string(),
            fps: seq.fps,
            frames: seq.len(),
            skeleton: (*seq.skeleton).clone(),
        };
        run.write(&format!("{}/{id}.seq", paths::CORPUS), &encode_sequence_file(&header, &seq))?;
        index.push(IndexEntry { id, subject, source: header.source, frames: seq.len(), fps: seq.fps });
    }
    index.sort_by(|a, b| a.id.cmp(&b.id));
    let frames: usize = index.iter().map(|e| e.frames).sum();
    run.write(paths::INDEX, &serde_json::to_vec_pretty(&index).expect("index serializes"))?;
    Ok(format!("ingested {} sequences, {frames} frames at {fps} fps\n", index.len()))
}

fn simulate(run: &mut Run) -> Result<String, CliError> {
    let index = run.index()?;
    let first = index.first().ok_or_else(|| CliError::Data("empty corpus".into()))?;
    let skeleton = run.load_sequence(&first.id)?.1.skeleton;
    let profile = run.profile(&skeleton)?;
    let rig = run.rig(&skeleton, &profile)?;
    let encoded = par_map(&index, run.opts.threads, |e| -> Result<Vec<u8>, CliError> {
        let (_, seq) = run.load_sequence(&e.id)?;
        Ok(encode_runs(&rig.simulate_sequence(&seq), &profile.groups))
    });
    for (e, bytes) in index.iter().zip(encoded) {
        run.write(&format!("{}/{}.occ", paths::OCCLUSION, e.id), &bytes?)?;
    }
    Ok(format!("simulated {} sequences\n", index.len()))
}

fn stats(run: &mut Run) -> Result<String, CliError> {
    let index = run.index()?;
    let first = index.first().ok_or_else(|| CliError::Data("empty corpus".into()))?;
    let skeleton = run.load_sequence(&first.id)?.1.skeleton;
    let profile = run.profile(&skeleton)?;
    let rig = run.rig(&skeleton, &profile)?;
    let inflation = run.cfg.contact_inflation;
    let per_seq = par_map(&index, run.opts.threads, |e| -> Result<(Vec<OcclusionRecord>, ContactStats), CliError> {
        let (_, seq) = run.load_sequence(&e.id)?;
        Ok((run.load_records(&e.id, &rig, seq.len())?, detect_contacts(&seq, &rig, inflation)))
    });
    let per_seq = per_seq.into_iter().collect::<Result<Vec<_>, _>>()?;
    let records: Vec<&[OcclusionRecord]> = per_seq.iter().map(|(r, _)| r.as_slice()).collect();
    let mut stats = corpus_occlusion_stats(&records, &profile.groups, run.cfg.train.fps).map_err(data)?;
    let (frames, self_frames, hand_frames) = per_seq
        .iter()
        .fold((0, 0, 0), |(f, s, h), (_, c)| (f + c.frames, s + c.self_contact_frames, h + c.hand_body_frames));
    stats.contacts = Some(ContactStats {
        frames,
        self_contact_frames: self_frames,
        hand_body_frames: hand_frames,
        self_contact_ratio: self_frames as f64 / frames.max(1) as f64,
        hand_body_ratio: hand_frames as f64 / frames.max(1) as f64,
    });
    let csv = stats.to_csv();
    run.write(paths::STATS_CSV, csv.as_bytes())?;
    let doc = json!({"seed": run.cfg.seed, "config_hash": run.cfg.hash(), "inflation": inflation, "stats": stats});
    run.write(paths::STATS_JSON, &serde_json::to_vec_pretty(&doc).expect("stats serialize"))?;
    Ok(csv)
}

fn train_cmd(run: &mut Run) -> Result<String, CliError> {
    let index = run.index()?;
    let split = run.split(&index)?;
    let (_, _, layout, corpus) = run.encode(&split.train)?;
    let mut log = String::new();
    let outcome = train(&corpus, &layout, &run.cfg.train, &run.cfg.loss, run.cfg.seed, run.opts.threads, |rec: &LogRecord| {
        let mut v = serde_json::to_value(rec).expect("log serializes");
        // Wall-clock time would make the log differ between identical runs.
        if let Some(o) = v.as_object_mut() {
            o.remove("wall_ms");
        }
        log.push_str(&v.to_string());
        log.push('\n');
    })
    .map_err(data)?;
    let meta = json!({"config_hash": run.cfg.hash(), "train": split.train, "version": env!("CARGO_PKG_VERSION")});
    run.write(paths::WEIGHTS, &save_weights(&outcome.network, &layout, run.cfg.seed, meta))?;
    run.write(paths::LOG, log.as_bytes())?;
    run.write(paths::SPLIT, &serde_json::to_vec_pretty(&split).expect("split serializes"))?;
    let last = log.lines().last().unwrap_or("").to_string();
    Ok(format!("trained on {} sequences; {last}\n", split.train.len()))
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    seed: u64,
    config_hash: String,
    split: &'a SplitManifest,
    report: &'a EvalReport,
}

fn eval_cmd(run: &mut Run) -> Result<String, CliError> {
    let index = run.index()?;
    let split = run.split(&index)?;
    let (skeleton, profile, layout, test) = run.encode(&split.test)?;
    let net = run.load_network(&layout)?;
    let predictor = NetworkPredictor { net: &net, window: layout.window, chunk: run.cfg.eval.chunk };
    let report = run_evaluation(&test, &predictor, Some(&layout.hash()), &layout, &skeleton, &profile, &run.cfg.eval).map_err(data)?;
    let doc = ReportDoc { seed: run.cfg.seed, config_hash: run.cfg.hash(), split: &split, report: &report };
    run.write(paths::REPORT_JSON, &serde_json::to_vec_pretty(&doc).expect("report serializes"))?;
    let csv = report.to_csv();
    run.write(paths::REPORT_CSV, csv.as_bytes())?;
    if let Some(threshold) = run.opts.threshold_cm {
        let row = report
            .row(predictor.name(), "body", "occluded")
            .or_else(|| report.row(predictor.name(), "all", "all"))
            .ok_or_else(|| CliError::Data("report has no network rows".into()))?;
        if row.rmsjpe_cm > threshold {
            return Err(CliError::Threshold { value: row.rmsjpe_cm, threshold });
        }
    }
    Ok(csv)
}

fn predict(run: &mut Run) -> Result<String, CliError> {
    let (enc, _, _, profile, layout) = run.encode_input()?;
    let net = run.load_network(&layout)?;
    let global = run.predict_global(&net, &enc, &layout, &profile)?;
    let mut out = String::from("frame,joint,x,y,z\n");
    for (i, frame) in global.iter().enumerate() {
        for (o, p) in layout.outputs.iter().zip(frame) {
            out.push_str(&format!("{},{},{:.6},{:.6},{:.6}\n", i + layout.window - 1, o.name, p.x, p.y, p.z));
        }
    }
    Ok(out)
}

fn export(run: &mut Run) -> Result<String, CliError> {
    let (enc, _, skeleton, profile, layout) = run.encode_input()?;
    let net = run.load_network(&layout)?;
    let global = run.predict_global(&net, &enc, &layout, &profile)?;
    let smoothed = smooth_stream(&global, run.cfg.eval.smooth_beta).map_err(data)?;
    let targets: Vec<Vec<IkTarget>> = smoothed
        .iter()
        .map(|f| layout.outputs.iter().zip(f).map(|(o, p)| IkTarget { joint: o.joint, position: *p, weight: 1.0 }).collect())
        .collect();
    let solved = solve_sequence(&skeleton, &targets, None, &run.cfg.eval.ik).map_err(data)?;
    let motion = to_motion(skeleton, &solved, run.cfg.train.fps).map_err(data)?;
    let bvh = write_bvh(&motion, run.cfg.corpus.unit_scale).map_err(data)?;
    let stem = id_of(run.opts.input.as_deref().unwrap_or(Path::new("input")));
    run.write(&format!("export/{stem}.bvh"), bvh.as_bytes())?;
    let residual: BTreeMap<&str, f64> = [
        ("mean_residual_cm", 100.0 * solved.iter().map(|s| s.residual).sum::<f64>() / solved.len().max(1) as f64),
        ("frames", solved.len() as f64),
    ]
    .into_iter()
    .collect();
    Ok(format!("{}\n", serde_json::to_string(&residual).expect("summary serializes")))
}
