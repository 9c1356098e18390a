//! Stage drivers behind the CLI: file formats, feature assembly, and the
//! policy-comparison experiment.
//!
//! Every stage reads and writes plain files under a run directory named by
//! the config digest, with a manifest recording input hashes, so each stage
//! can be rerun independently and identical configs reproduce identical
//! bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{
    auc, consistency_table, detection_lag, gauc, ConsistencyRow, OnsetLag, ScoredExample,
};
use crate::model::{
    load_checkpoint, predict, predict_ctr_series, save_checkpoint, train_stream, FeatureVector,
    ModelConfig, ModelParams, ObjectiveMode, Prediction, ProbeRoom, ProbeSpec, TrainOptions,
    TrainResult,
};
use crate::seq::{build_bundle, HistoryIndex, HistoryItem, SeqSlot};
use crate::sim::{
    ground_truth_series, simulate, InteractionEvent, RoomState, SimConfig, SimOutput, VideoMeta,
};
use crate::streaming::{assemble, PolicyKind, ReportPolicy, TrainingSample};
use crate::types::*;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const TRUTH_FILE: &str = "ground_truth.csv";
pub const CATALOG_FILE: &str = "catalog.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const COMPARISON_FILE: &str = "comparison.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let data = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(hex::encode(Sha256::digest(&data)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Rooms plus short-video catalog, persisted next to the event log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Catalog {
    pub rooms: Vec<RoomState>,
    pub videos: Vec<VideoMeta>,
}

impl Catalog {
    pub fn authors(&self) -> BTreeMap<ItemId, AuthorId> {
        let mut map = BTreeMap::new();
        for r in &self.rooms {
            map.insert(r.room_id, r.author_id);
        }
        for v in &self.videos {
            map.insert(v.video_id, v.author_id);
        }
        map
    }

    pub fn room(&self, room_id: ItemId) -> Option<&RoomState> {
        self.rooms.iter().find(|r| r.room_id == room_id)
    }
}

pub fn write_events(path: &Path, events: &[InteractionEvent]) -> Result<()> {
    let mut out = Vec::new();
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_events(path: &Path) -> Result<Vec<InteractionEvent>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: InteractionEvent = serde_json::from_str(&line).map_err(|e| {
            Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            }
        })?;
        events.push(event);
    }
    Ok(events)
}

pub fn write_samples(path: &Path, samples: &[TrainingSample]) -> Result<()> {
    let mut out = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_samples(path: &Path) -> Result<Vec<TrainingSample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: TrainingSample = serde_json::from_str(&line).map_err(|e| {
            Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            }
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

fn write_truth_csv(path: &Path, rows: &[(ItemId, f64, f64)]) -> Result<()> {
    let mut out = String::from("room_id,t,attractiveness\n");
    for (room_id, t, a) in rows {
        out.push_str(&format!("{room_id},{t},{a}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_trace_csv(path: &Path, result: &TrainResult) -> Result<()> {
    let mut out = String::from("step,report_ts,loss");
    for t in TaskKind::ALL {
        out.push(',');
        out.push_str(t.name());
    }
    out.push('\n');
    for row in &result.trace {
        out.push_str(&format!("{},{},{}", row.step, row.report_ts, row.loss));
        for t in TaskKind::ALL {
            out.push_str(&format!(",{}", row.per_task[t.index()]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_series_csv(path: &Path, result: &TrainResult) -> Result<()> {
    let mut out = String::from("room_id,t,predicted_ctr\n");
    let mut rooms: Vec<ItemId> = result
        .snapshots
        .first()
        .map(|s| s.room_ctr.keys().copied().collect())
        .unwrap_or_default();
    rooms.sort_unstable();
    for room in rooms {
        for (t, v) in predict_ctr_series(&result.snapshots, room) {
            out.push_str(&format!("{room},{t},{v}\n"));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_history(path: &Path, index: &HistoryIndex) -> Result<()> {
    let mut out = Vec::new();
    for record in index.records() {
        serde_json::to_writer(&mut out, record)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// simulate stage: event log, ground truth series, catalog, history store.
pub fn run_simulate(config: &RunConfig, dir: &Path) -> Result<SimOutput> {
    config.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let output = simulate(&config.sim)?;
    write_events(&dir.join(EVENTS_FILE), &output.events)?;
    let truth = ground_truth_series(&output.rooms, config.sim.horizon, config.sim.truth_grid);
    write_truth_csv(&dir.join(TRUTH_FILE), &truth)?;
    let catalog = Catalog {
        rooms: output.rooms.clone(),
        videos: output.videos.clone(),
    };
    let mut catalog_json = serde_json::to_string_pretty(&catalog)?;
    catalog_json.push('\n');
    fs::write(dir.join(CATALOG_FILE), catalog_json)
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    let history = HistoryIndex::from_events(&output.events, &catalog.authors())?;
    write_history(&dir.join(HISTORY_FILE), &history)?;
    write_manifest(
        dir,
        &Manifest {
            command: "simulate".into(),
            config_digest: config.digest(),
            inputs: BTreeMap::new(),
            outputs: vec![
                EVENTS_FILE.into(),
                TRUTH_FILE.into(),
                CATALOG_FILE.into(),
                HISTORY_FILE.into(),
            ],
        },
    )?;
    Ok(output)
}

pub fn load_catalog(path: &Path) -> Result<Catalog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Feature materialization shared by training and evaluation.
pub struct FeatureAssembler {
    room_meta: BTreeMap<ItemId, (AuthorId, u64)>,
    history: Option<HistoryIndex>,
    seq_length: usize,
}

impl FeatureAssembler {
    pub fn new(catalog: &Catalog, history: Option<HistoryIndex>, seq_length: usize) -> Self {
        let room_meta = catalog
            .rooms
            .iter()
            .map(|r| (r.room_id, (r.author_id, r.category.id())))
            .collect();
        FeatureAssembler {
            room_meta,
            history,
            seq_length,
        }
    }

    pub fn featurize(
        &self,
        params: &ModelParams,
        sample: &TrainingSample,
    ) -> Result<FeatureVector> {
        let (author, category) = self
            .room_meta
            .get(&sample.item_id)
            .copied()
            .unwrap_or((0, 2));
        let mut features =
            FeatureVector::new(sample.user_id, sample.item_id, author, category);
        if let Some(history) = &self.history {
            let records = history.snapshot(sample.user_id, sample.report_ts);
            let items: Vec<HistoryItem> = records
                .iter()
                .map(|r| HistoryItem {
                    item_id: r.item_id,
                    domain: r.domain,
                    author_id: r.author_id,
                    timestamp: r.timestamp,
                    behaviors: r.behaviors.clone(),
                    embedding: params.item_table.lookup(r.item_id).to_vec(),
                })
                .collect();
            let candidate = params.item_table.lookup(sample.item_id).to_vec();
            let bundle = build_bundle(&items, &candidate, author, self.seq_length)?;
            features = features.with_bundle(bundle);
        }
        Ok(features)
    }
}

fn model_config_from(config: &RunConfig) -> ModelConfig {
    ModelConfig {
        embed_dim: config.trainer.embed_dim,
        hidden_dim: config.trainer.hidden_dim,
        dense_dim: 0,
        att_dim: config.seq.att_dim,
        seq_slots: if config.seq.enabled {
            SeqSlot::ALL.to_vec()
        } else {
            Vec::new()
        },
        logit_clamp: config.trainer.logit_clamp,
        init_scale: config.trainer.init_scale,
        seed: config.sim.seed,
    }
}

fn probe_spec(config: &RunConfig, catalog: &Catalog) -> ProbeSpec {
    let users = (1..=config.sim.num_users.min(config.trainer.probe_users as u64)).collect();
    let rooms = catalog
        .rooms
        .iter()
        .map(|r| ProbeRoom {
            room_id: r.room_id,
            author_id: r.author_id,
            category: r.category,
        })
        .collect();
    ProbeSpec { users, rooms }
}

pub struct TrainArtifacts {
    pub params: ModelParams,
    pub result: TrainResult,
}

/// train stage: one pass over the sample stream, snapshots on the config
/// grid, checkpoint plus trace and series files.
pub fn run_train(
    config: &RunConfig,
    samples: &[TrainingSample],
    catalog: &Catalog,
    history: Option<HistoryIndex>,
    mode: ObjectiveMode,
    dir: &Path,
    label: &str,
) -> Result<TrainArtifacts> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut params = ModelParams::new(model_config_from(config));
    let assembler = FeatureAssembler::new(catalog, history, config.seq.length);
    let opts = TrainOptions {
        learning_rate: config.trainer.learning_rate,
        grad_clip: config.trainer.grad_clip,
        batch_bucket: config.trainer.batch_bucket,
        snapshot_every: Some(config.trainer.snapshot_every),
        snapshot_until: config.sim.horizon,
        probe: Some(probe_spec(config, catalog)),
        contrastive: if config.seq.enabled && config.trainer.batch_bucket > 0.0 {
            Some(crate::model::ContrastiveOpts {
                tau: config.seq.temperature,
                weight: config.seq.contrastive_weight,
            })
        } else {
            None
        },
    };
    let result = train_stream(&mut params, samples, mode, &opts, |p, s| {
        assembler.featurize(p, s)
    })?;
    save_checkpoint(&params, &dir.join(format!("checkpoint_{label}.ckpt")))?;
    write_trace_csv(&dir.join(format!("trace_{label}.csv")), &result)?;
    write_series_csv(&dir.join(format!("ctr_series_{label}.csv")), &result)?;
    Ok(TrainArtifacts { params, result })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskEval {
    pub auc: Option<f64>,
    pub gauc: Option<f64>,
    pub positives: u64,
    pub examples: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_task: BTreeMap<String, TaskEval>,
}

/// Score fully labeled exit samples and compute per-task AUC/GAUC.
pub fn evaluate_model(
    params: &ModelParams,
    assembler: &FeatureAssembler,
    exit_samples: &[TrainingSample],
) -> Result<EvalReport> {
    let mut scored: BTreeMap<TaskKind, Vec<ScoredExample>> = BTreeMap::new();
    for sample in exit_samples {
        let features = assembler.featurize(params, sample)?;
        let prediction: Prediction = predict(params, &features)?;
        for t in TaskKind::ALL {
            scored.entry(t).or_default().push(ScoredExample {
                user_id: sample.user_id,
                score: prediction.per_task[t.index()],
                label: sample.labels[t.index()],
            });
        }
    }
    let mut per_task = BTreeMap::new();
    for (task, examples) in scored {
        per_task.insert(
            task.name().to_string(),
            TaskEval {
                auc: auc(&examples),
                gauc: gauc(&examples),
                positives: examples.iter().filter(|e| e.label == 1).count() as u64,
                examples: examples.len() as u64,
            },
        );
    }
    Ok(EvalReport { per_task })
}

/// Held-out log: same rooms and videos, fresh behavior draws.
pub fn heldout_sim_config(config: &RunConfig, catalog: &Catalog) -> SimConfig {
    let mut sim = config.sim.clone();
    sim.seed = config.sim.seed.wrapping_add(config.eval_seed_offset);
    sim.rooms = Some(catalog.rooms.clone());
    sim.videos = Some(catalog.videos.clone());
    sim
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoomDetection {
    pub room_id: ItemId,
    pub onsets: Vec<OnsetLag>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyReport {
    pub sample_count: usize,
    pub mean_detection_lag: Option<f64>,
    pub detection: Vec<RoomDetection>,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config_digest: String,
    pub policies: BTreeMap<String, PolicyReport>,
    pub consistency: Vec<ConsistencyRow>,
    pub sample_volume_ratio_realtime_vs_fast_slow: f64,
    /// fast_slow mean lag minus realtime mean lag, seconds.
    pub detection_gap_seconds: Option<f64>,
    /// Mean predicted probability lift of later tasks on held-out sessions
    /// that clicked versus those that did not (realtime-trained model).
    /// Diagnostic only.
    pub interaction_beyond_lift: BTreeMap<String, f64>,
}

fn detection_for_policy(
    config: &RunConfig,
    catalog: &Catalog,
    result: &TrainResult,
) -> Result<(Vec<RoomDetection>, Option<f64>)> {
    let mut rows = Vec::new();
    let mut lags = Vec::new();
    for room in &catalog.rooms {
        let onsets: Vec<f64> = room.highlight_schedule.iter().map(|h| h.start).collect();
        if onsets.is_empty() {
            continue;
        }
        let series = predict_ctr_series(&result.snapshots, room.room_id);
        let lag = detection_lag(&series, &onsets, config.sim.horizon, &config.detection)?;
        lags.extend(lag.per_onset.iter().map(|o| o.lag));
        rows.push(RoomDetection {
            room_id: room.room_id,
            onsets: lag.per_onset,
        });
    }
    let mean = if lags.is_empty() {
        None
    } else {
        Some(lags.iter().sum::<f64>() / lags.len() as f64)
    };
    Ok((rows, mean))
}

fn interaction_beyond_lift(
    params: &ModelParams,
    assembler: &FeatureAssembler,
    exit_samples: &[TrainingSample],
) -> Result<BTreeMap<String, f64>> {
    let mut with_click: BTreeMap<TaskKind, (f64, u64)> = BTreeMap::new();
    let mut without_click: BTreeMap<TaskKind, (f64, u64)> = BTreeMap::new();
    for sample in exit_samples {
        let features = assembler.featurize(params, sample)?;
        let prediction = predict(params, &features)?;
        let bucket = if sample.labels[TaskKind::Click.index()] == 1 {
            &mut with_click
        } else {
            &mut without_click
        };
        for t in [TaskKind::Like, TaskKind::Comment, TaskKind::Gift] {
            let e = bucket.entry(t).or_insert((0.0, 0));
            e.0 += prediction.per_task[t.index()];
            e.1 += 1;
        }
    }
    let mut lift = BTreeMap::new();
    for t in [TaskKind::Like, TaskKind::Comment, TaskKind::Gift] {
        let a = with_click.get(&t).filter(|(_, n)| *n > 0);
        let b = without_click.get(&t).filter(|(_, n)| *n > 0);
        if let (Some((sa, na)), Some((sb, nb))) = (a, b) {
            lift.insert(
                t.name().to_string(),
                sa / *na as f64 - sb / *nb as f64,
            );
        }
    }
    Ok(lift)
}

/// The full experiment: one event log, each policy assembled and trained on
/// it, detection lag and ranking quality per policy.
pub fn run_compare(config: &RunConfig, dir: &Path) -> Result<ComparisonReport> {
    config.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let output = run_simulate(config, dir)?;
    let catalog = Catalog {
        rooms: output.rooms.clone(),
        videos: output.videos.clone(),
    };

    // Held-out log for ranking metrics: same catalog, fresh draws.
    let heldout = simulate(&heldout_sim_config(config, &catalog))?;
    let heldout_exit = assemble(&heldout.events, &ReportPolicy::exit_report())?;
    let heldout_history = if config.seq.enabled {
        Some(HistoryIndex::from_events(&heldout.events, &catalog.authors())?)
    } else {
        None
    };
    let eval_assembler =
        FeatureAssembler::new(&catalog, heldout_history, config.seq.length);

    let train_history = if config.seq.enabled {
        Some(HistoryIndex::from_events(&output.events, &catalog.authors())?)
    } else {
        None
    };

    let mut policies = BTreeMap::new();
    let mut sample_counts = BTreeMap::new();
    let mut consistency = Vec::new();
    let mut interaction_beyond = BTreeMap::new();

    for (name, policy, mode) in [
        (
            "realtime",
            ReportPolicy {
                kind: PolicyKind::Realtime,
                ..config.policy
            },
            ObjectiveMode::Realtime,
        ),
        (
            "fast_slow",
            ReportPolicy {
                kind: PolicyKind::FastSlow,
                ..config.policy
            },
            ObjectiveMode::FastSlow,
        ),
    ] {
        let samples = assemble(&output.events, &policy)?;
        write_samples(&dir.join(format!("samples_{name}.jsonl")), &samples)?;
        if policy.kind == PolicyKind::FastSlow {
            consistency = consistency_table(&samples);
        }
        let artifacts = run_train(
            config,
            &samples,
            &catalog,
            train_history.clone(),
            mode,
            dir,
            name,
        )?;
        let (detection, mean_lag) = detection_for_policy(config, &catalog, &artifacts.result)?;
        let eval = evaluate_model(&artifacts.params, &eval_assembler, &heldout_exit)?;
        if mode == ObjectiveMode::Realtime {
            interaction_beyond =
                interaction_beyond_lift(&artifacts.params, &eval_assembler, &heldout_exit)?;
        }
        sample_counts.insert(name, samples.len());
        policies.insert(
            name.to_string(),
            PolicyReport {
                sample_count: samples.len(),
                mean_detection_lag: mean_lag,
                detection,
                eval,
            },
        );
    }

    let ratio = sample_counts["realtime"] as f64 / sample_counts["fast_slow"].max(1) as f64;
    let gap = match (
        policies["fast_slow"].mean_detection_lag,
        policies["realtime"].mean_detection_lag,
    ) {
        (Some(fs), Some(rt)) => Some(fs - rt),
        _ => None,
    };
    let report = ComparisonReport {
        config_digest: config.digest(),
        policies,
        consistency,
        sample_volume_ratio_realtime_vs_fast_slow: ratio,
        detection_gap_seconds: gap,
        interaction_beyond_lift: interaction_beyond,
    };
    let path = dir.join(COMPARISON_FILE);
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(report)
}

/// Resolve the run directory for a config under a base output directory.
pub fn run_dir(base: &Path, config: &RunConfig) -> PathBuf {
    base.join(&config.digest()[..12])
}

/// Human-readable summary of a comparison report.
pub fn render_comparison(report: &ComparisonReport, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "run {}", &report.config_digest[..12])?;
    writeln!(
        out,
        "sample volume realtime / fast_slow: {:.3}",
        report.sample_volume_ratio_realtime_vs_fast_slow
    )?;
    for (name, policy) in &report.policies {
        let lag = policy
            .mean_detection_lag
            .map(|l| format!("{l:.1}s"))
            .unwrap_or_else(|| "n/a".into());
        writeln!(
            out,
            "{name}: {} samples, mean detection lag {lag}",
            policy.sample_count
        )?;
        for (task, eval) in &policy.eval.per_task {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "null".into());
            writeln!(
                out,
                "  {task}: auc {} gauc {} ({} pos / {} ex)",
                fmt(eval.auc),
                fmt(eval.gauc),
                eval.positives,
                eval.examples
            )?;
        }
    }
    if let Some(gap) = report.detection_gap_seconds {
        writeln!(out, "detection gap (fast_slow - realtime): {gap:.1}s")?;
    }
    writeln!(out, "label consistency (fast window / slow window):")?;
    for row in &report.consistency {
        let c = row
            .consistency
            .map(|c| format!("{:.1}%", c * 100.0))
            .unwrap_or_else(|| "null".into());
        writeln!(
            out,
            "  {}: {c} ({}/{})",
            row.task.name(),
            row.fast_positive_count,
            row.slow_window_positive_count
        )?;
    }
    for (task, lift) in &report.interaction_beyond_lift {
        writeln!(out, "interaction-beyond lift {task}: {lift:+.4}")?;
    }
    Ok(())
}

pub use crate::model::checkpoint_digest;

/// assemble stage helper used by the CLI.
pub fn run_assemble(events_path: &Path, policy: &ReportPolicy, out_path: &Path) -> Result<usize> {
    let events = read_events(events_path)?;
    let samples = assemble(&events, policy)?;
    write_samples(out_path, &samples)?;
    Ok(samples.len())
}

/// eval stage helper: checkpoint + event log -> metrics report file.
pub fn run_eval(
    checkpoint_path: &Path,
    events_path: &Path,
    catalog_path: &Path,
    seq_length: usize,
    out_path: &Path,
) -> Result<EvalReport> {
    let params = load_checkpoint(checkpoint_path)?;
    let events = read_events(events_path)?;
    let catalog = load_catalog(catalog_path)?;
    let history = if params.config.uses_sequences() {
        Some(HistoryIndex::from_events(&events, &catalog.authors())?)
    } else {
        None
    };
    let assembler = FeatureAssembler::new(&catalog, history, seq_length);
    let exit_samples = assemble(&events, &ReportPolicy::exit_report())?;
    let report = evaluate_model(&params, &assembler, &exit_samples)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(out_path, text).map_err(|e| Error::io(out_path.display().to_string(), e))?;
    Ok(report)
}
