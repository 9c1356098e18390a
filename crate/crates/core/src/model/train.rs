//! Online training over the merged sample stream in report-timestamp order.
//!
//! Gradient arrival time is the experiment's core variable: one SGD step per
//! sample (optionally small report-time buckets), so a policy that reports
//! labels sooner moves the parameters sooner. Snapshot hooks evaluate a fixed
//! probe set at fixed simulated-time intervals to expose each room's
//! predicted-CTR trajectory.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::seq::{contrastive_align_with_grad, pool_l2, pool_l2_backward, SeqSlot};
use crate::sim::RoomCategory;
use crate::streaming::{Flow, TrainingSample};
use crate::types::*;

use super::{
    apply_gradients, backward, forward, loss_masked, loss_slow_pu, FeatureVector, FieldKind,
    GradBuf, ModelParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveMode {
    /// Fast samples train the plain log-likelihood; slow samples apply the
    /// positive-unlabeled correction.
    FastSlow,
    /// Every sample trains the first-only masked log-likelihood.
    Realtime,
}

impl ObjectiveMode {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveMode::FastSlow => "fast_slow",
            ObjectiveMode::Realtime => "realtime",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "fast_slow" => Some(ObjectiveMode::FastSlow),
            "realtime" => Some(ObjectiveMode::Realtime),
            _ => None,
        }
    }
}

/// One probe room evaluated at every snapshot.
#[derive(Debug, Clone)]
pub struct ProbeRoom {
    pub room_id: ItemId,
    pub author_id: AuthorId,
    pub category: RoomCategory,
}

#[derive(Debug, Clone, Default)]
pub struct ProbeSpec {
    pub users: Vec<UserId>,
    pub rooms: Vec<ProbeRoom>,
}

#[derive(Debug, Clone, Copy)]
pub struct ContrastiveOpts {
    pub tau: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub grad_clip: Option<f64>,
    /// Width of report-time mini-batch buckets; 0 trains per sample.
    pub batch_bucket: f64,
    pub snapshot_every: Option<f64>,
    /// Keep snapshotting up to this time after the stream ends.
    pub snapshot_until: f64,
    pub probe: Option<ProbeSpec>,
    /// In-batch contrastive alignment; needs batch_bucket > 0 to ever see
    /// more than one sample at a time.
    pub contrastive: Option<ContrastiveOpts>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            learning_rate: 0.05,
            grad_clip: Some(10.0),
            batch_bucket: 0.0,
            snapshot_every: None,
            snapshot_until: 0.0,
            probe: None,
            contrastive: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub report_ts: f64,
    pub loss: f64,
    pub per_task: [f64; TASK_COUNT],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub t: f64,
    /// Mean predicted click probability per probe room.
    pub room_ctr: BTreeMap<ItemId, f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainResult {
    pub steps: u64,
    pub trace: Vec<TraceRow>,
    pub snapshots: Vec<SnapshotRow>,
    pub contrastive_loss_total: f64,
}

/// Mean predicted click probability of `room` over the probe users.
pub fn predict_room_ctr(params: &ModelParams, room: &ProbeRoom, users: &[UserId]) -> Result<f64> {
    if users.is_empty() {
        return Err(Error::Empty("probe user set".into()));
    }
    let mut acc = 0.0;
    for user in users {
        let features = FeatureVector::new(*user, room.room_id, room.author_id, room.category.id());
        acc += super::predict(params, &features)?.get(TaskKind::Click);
    }
    Ok(acc / users.len() as f64)
}

/// Extract one room's (t, predicted ctr) series from snapshot rows.
pub fn predict_ctr_series(snapshots: &[SnapshotRow], room_id: ItemId) -> Vec<(f64, f64)> {
    snapshots
        .iter()
        .filter_map(|s| s.room_ctr.get(&room_id).map(|v| (s.t, *v)))
        .collect()
}

/// dL/d logit per task for one sample under the given objective.
fn route_dlogits(
    sample: &TrainingSample,
    pred: &super::Prediction,
    mode: ObjectiveMode,
) -> Result<[f64; TASK_COUNT]> {
    let mut dlogits = [0.0; TASK_COUNT];
    let routing_err = || Error::Routing {
        flow: sample.flow.name().into(),
        mode: mode.name().into(),
    };
    match (mode, sample.flow) {
        (ObjectiveMode::FastSlow, Flow::Fast | Flow::Exit)
        | (ObjectiveMode::Realtime, Flow::RtFirst | Flow::RtExit | Flow::Exit) => {
            for t in TaskKind::ALL {
                let i = t.index();
                if sample.mask[i] {
                    dlogits[i] = pred.per_task[i] - sample.labels[i] as f64;
                }
            }
        }
        (ObjectiveMode::FastSlow, Flow::Slow) => {
            // d/dz of -(ln σ(z) − ln(1−σ(z))) is exactly −1.
            for t in TaskKind::ALL {
                if sample.mask[t.index()] {
                    dlogits[t.index()] = -1.0;
                }
            }
        }
        _ => return Err(routing_err()),
    }
    Ok(dlogits)
}

/// Loss value and per-task contributions for the trace.
fn route_loss(
    sample: &TrainingSample,
    pred: &super::Prediction,
    mode: ObjectiveMode,
) -> Result<(f64, [f64; TASK_COUNT])> {
    let mut per_task = [0.0; TASK_COUNT];
    match (mode, sample.flow) {
        (ObjectiveMode::FastSlow, Flow::Fast | Flow::Exit)
        | (ObjectiveMode::Realtime, Flow::RtFirst | Flow::RtExit | Flow::Exit) => {
            let total = loss_masked(pred, &sample.labels, &sample.mask)?;
            for t in TaskKind::ALL {
                if sample.mask[t.index()] {
                    per_task[t.index()] =
                        super::bce_term(sample.labels[t.index()], pred.per_task[t.index()]);
                }
            }
            Ok((total, per_task))
        }
        (ObjectiveMode::FastSlow, Flow::Slow) => {
            let total = loss_slow_pu(pred, &sample.mask)?;
            for t in TaskKind::ALL {
                if sample.mask[t.index()] {
                    per_task[t.index()] = super::pu_term(pred.per_task[t.index()]);
                }
            }
            Ok((total, per_task))
        }
        _ => Err(Error::Routing {
            flow: sample.flow.name().into(),
            mode: mode.name().into(),
        }),
    }
}

fn take_snapshot(params: &ModelParams, probe: &ProbeSpec, t: f64) -> Result<SnapshotRow> {
    let mut room_ctr = BTreeMap::new();
    for room in &probe.rooms {
        room_ctr.insert(room.room_id, predict_room_ctr(params, room, &probe.users)?);
    }
    Ok(SnapshotRow { t, room_ctr })
}

fn contrastive_group_step(
    params: &ModelParams,
    features: &[FeatureVector],
    opts: &ContrastiveOpts,
    grads: &mut GradBuf,
) -> Result<f64> {
    let mut total = 0.0;
    for slot in [SeqSlot::Short, SeqSlot::Long, SeqSlot::AidHard, SeqSlot::LiveLong] {
        let mut anchors = Vec::new();
        let mut others = Vec::new();
        let mut members = Vec::new();
        for f in features {
            let Some(bundle) = &f.bundle else { continue };
            let (Some(anchor), Some(other)) = (pool_l2(&bundle.mixed), pool_l2(bundle.get(slot)))
            else {
                continue;
            };
            anchors.push(anchor);
            others.push(other);
            members.push(bundle);
        }
        if anchors.len() < 2 {
            continue;
        }
        let (loss, d_anchors, d_others) =
            contrastive_align_with_grad(&anchors, &others, opts.tau)?;
        total += opts.weight * loss;
        for (i, bundle) in members.iter().enumerate() {
            let scaled_a: Vec<f64> = d_anchors[i].iter().map(|g| g * opts.weight).collect();
            for (item_id, g) in pool_l2_backward(&bundle.mixed, &scaled_a) {
                grads.add_row(FieldKind::Item, item_id, &g);
            }
            let scaled_o: Vec<f64> = d_others[i].iter().map(|g| g * opts.weight).collect();
            for (item_id, g) in pool_l2_backward(bundle.get(slot), &scaled_o) {
                grads.add_row(FieldKind::Item, item_id, &g);
            }
        }
    }
    let _ = params;
    Ok(total)
}

/// Stream the samples through SGD in report-timestamp order.
///
/// `featurize` materializes the features for one sample; it sees the current
/// parameters so retrieval can use up-to-date embeddings.
pub fn train_stream<F>(
    params: &mut ModelParams,
    samples: &[TrainingSample],
    mode: ObjectiveMode,
    opts: &TrainOptions,
    mut featurize: F,
) -> Result<TrainResult>
where
    F: FnMut(&ModelParams, &TrainingSample) -> Result<FeatureVector>,
{
    for pair in samples.windows(2) {
        if pair[0].report_ts > pair[1].report_ts {
            return Err(Error::Config(
                "sample stream must be sorted by report_ts".into(),
            ));
        }
    }

    let mut result = TrainResult::default();
    let mut next_snapshot = opts.snapshot_every;

    // Consecutive runs sharing a report-time bucket form one batch.
    let mut groups: Vec<&[TrainingSample]> = Vec::new();
    if opts.batch_bucket > 0.0 {
        let mut start = 0;
        for i in 1..=samples.len() {
            let split = i == samples.len() || {
                let a = (samples[start].report_ts / opts.batch_bucket).floor();
                let b = (samples[i].report_ts / opts.batch_bucket).floor();
                a != b
            };
            if split && i > start {
                groups.push(&samples[start..i]);
                start = i;
            }
        }
    } else {
        groups.extend(samples.chunks(1));
    }

    let mut step: u64 = 0;
    for group in groups {
        if let (Some(every), Some(probe)) = (opts.snapshot_every, opts.probe.as_ref()) {
            let mut t = next_snapshot.unwrap_or(every);
            while t <= group[0].report_ts {
                result.snapshots.push(take_snapshot(params, probe, t)?);
                t += every;
            }
            next_snapshot = Some(t);
        }

        let mut grads = GradBuf::zeros_like(params);
        let mut group_features = Vec::with_capacity(group.len());
        for sample in group {
            let features = featurize(&*params, sample)?;
            let fwd = forward(params, &features)?;
            let dlogits = route_dlogits(sample, &fwd.prediction, mode)?;
            let (loss, per_task) = route_loss(sample, &fwd.prediction, mode)?;
            backward(params, &features, &fwd, &dlogits, &mut grads)?;
            step += 1;
            result.trace.push(TraceRow {
                step,
                report_ts: sample.report_ts,
                loss,
                per_task,
            });
            group_features.push(features);
        }
        if group.len() > 1 {
            grads.scale(1.0 / group.len() as f64);
        }
        if let Some(cl) = &opts.contrastive {
            if group_features.len() >= 2 {
                result.contrastive_loss_total +=
                    contrastive_group_step(params, &group_features, cl, &mut grads)?;
            }
        }
        apply_gradients(params, &grads, opts.learning_rate, opts.grad_clip);
    }
    result.steps = step;

    if let (Some(every), Some(probe)) = (opts.snapshot_every, opts.probe.as_ref()) {
        let mut t = next_snapshot.unwrap_or(every);
        while t <= opts.snapshot_until {
            result.snapshots.push(take_snapshot(params, probe, t)?);
            t += every;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{predict, ModelConfig};

    fn sample(flow: Flow, labels: [u8; TASK_COUNT], mask: [bool; TASK_COUNT]) -> TrainingSample {
        TrainingSample {
            session_id: 1,
            user_id: 1,
            item_id: 2,
            report_ts: 10.0,
            flow,
            labels,
            mask,
        }
    }

    fn plain_featurize(_: &ModelParams, s: &TrainingSample) -> crate::error::Result<FeatureVector> {
        Ok(FeatureVector::new(s.user_id, s.item_id, 3, 0))
    }

    fn tiny_params() -> ModelParams {
        ModelParams::new(ModelConfig {
            embed_dim: 4,
            hidden_dim: 6,
            dense_dim: 0,
            ..ModelConfig::default()
        })
    }

    #[test]
    fn empty_stream_leaves_params_unchanged() {
        let mut params = tiny_params();
        let before = params.flatten();
        let result = train_stream(
            &mut params,
            &[],
            ObjectiveMode::Realtime,
            &TrainOptions::default(),
            plain_featurize,
        )
        .unwrap();
        assert_eq!(result.steps, 0);
        assert_eq!(params.flatten(), before);
    }

    #[test]
    fn repeated_positive_sample_pushes_probability_up() {
        let mut params = tiny_params();
        let mut labels = [0u8; TASK_COUNT];
        labels[TaskKind::Click.index()] = 1;
        let mut mask = [false; TASK_COUNT];
        mask[TaskKind::Click.index()] = true;
        let stream: Vec<TrainingSample> = (0..30)
            .map(|i| {
                let mut s = sample(Flow::RtFirst, labels, mask);
                s.report_ts = i as f64;
                s
            })
            .collect();
        let features = FeatureVector::new(1, 2, 3, 0);
        let mut last = predict(&params, &features).unwrap().get(TaskKind::Click);
        for s in &stream {
            train_stream(
                &mut params,
                std::slice::from_ref(s),
                ObjectiveMode::Realtime,
                &TrainOptions::default(),
                plain_featurize,
            )
            .unwrap();
            let now = predict(&params, &features).unwrap().get(TaskKind::Click);
            assert!(now > last, "click probability must rise: {now} vs {last}");
            last = now;
        }
    }

    #[test]
    fn routing_errors_on_flow_mode_mismatch() {
        let mut params = tiny_params();
        let slow = sample(Flow::Slow, [0; TASK_COUNT], [true; TASK_COUNT]);
        let err = train_stream(
            &mut params,
            &[slow],
            ObjectiveMode::Realtime,
            &TrainOptions::default(),
            plain_featurize,
        )
        .unwrap_err();
        assert!(err.to_string().contains("routing"), "{err}");

        let rt = sample(Flow::RtFirst, [0; TASK_COUNT], [true; TASK_COUNT]);
        assert!(train_stream(
            &mut params,
            &[rt],
            ObjectiveMode::FastSlow,
            &TrainOptions::default(),
            plain_featurize,
        )
        .is_err());
    }

    #[test]
    fn unsorted_stream_is_rejected() {
        let mut params = tiny_params();
        let mut a = sample(Flow::RtExit, [0; TASK_COUNT], [true; TASK_COUNT]);
        a.report_ts = 5.0;
        let mut b = a.clone();
        b.report_ts = 1.0;
        assert!(train_stream(
            &mut params,
            &[a, b],
            ObjectiveMode::Realtime,
            &TrainOptions::default(),
            plain_featurize,
        )
        .is_err());
    }

    /// Gradients of all three routed losses against finite differences,
    /// end to end through the model.
    #[test]
    fn routed_loss_gradients_match_finite_differences() {
        use crate::model::{backward, forward, GradBuf};
        let cases = [
            (
                ObjectiveMode::FastSlow,
                sample(Flow::Fast, [1, 0, 1, 0, 0, 0], [true; TASK_COUNT]),
            ),
            (ObjectiveMode::FastSlow, {
                let mut mask = [false; TASK_COUNT];
                mask[TaskKind::Gift.index()] = true;
                let mut labels = [0u8; TASK_COUNT];
                labels[TaskKind::Gift.index()] = 1;
                sample(Flow::Slow, labels, mask)
            }),
            (ObjectiveMode::Realtime, {
                let mut mask = [false; TASK_COUNT];
                mask[TaskKind::Click.index()] = true;
                mask[TaskKind::Like.index()] = true;
                sample(Flow::RtExit, [0; TASK_COUNT], mask)
            }),
        ];
        for (mode, s) in cases {
            let mut params = tiny_params();
            let features = plain_featurize(&params, &s).unwrap();
            for (field, id) in &features.ids {
                params.table_mut(*field).ensure_row(*id);
            }
            let fwd = forward(&params, &features).unwrap();
            let dlogits = route_dlogits(&s, &fwd.prediction, mode).unwrap();
            let mut grads = GradBuf::zeros_like(&params);
            backward(&params, &features, &fwd, &dlogits, &mut grads).unwrap();

            let flat = params.flatten();
            let h = 1e-6;
            // Sample a few parameter coordinates across the layout.
            for i in (0..flat.len()).step_by(7) {
                let mut plus = flat.clone();
                plus[i] += h;
                let mut minus = flat.clone();
                minus[i] -= h;
                let mut p2 = params.clone();
                p2.unflatten(&plus).unwrap();
                let up = route_loss(&s, &forward(&p2, &features).unwrap().prediction, mode)
                    .unwrap()
                    .0;
                p2.unflatten(&minus).unwrap();
                let down = route_loss(&s, &forward(&p2, &features).unwrap().prediction, mode)
                    .unwrap()
                    .0;
                let num = (up - down) / (2.0 * h);

                // Locate coordinate i in the gradient layout.
                let analytic = analytic_at(&params, &grads, i);
                let rel = (analytic - num).abs() / num.abs().max(1e-5);
                assert!(
                    rel < 1e-4,
                    "{} flow {:?} coord {i}: {analytic} vs {num}",
                    mode.name(),
                    s.flow
                );
            }
        }
    }

    fn analytic_at(params: &ModelParams, grads: &GradBuf, mut i: usize) -> f64 {
        for field in crate::model::FieldKind::ALL {
            let table = params.table(field);
            let dim = params.config.embed_dim;
            for id in table.row_ids().collect::<Vec<_>>() {
                if i < dim {
                    return grads
                        .rows
                        .get(&(field, id))
                        .map(|g| g[i])
                        .unwrap_or(0.0);
                }
                i -= dim;
            }
        }
        if i < grads.trunk_w.data.len() {
            return grads.trunk_w.data[i];
        }
        i -= grads.trunk_w.data.len();
        if i < grads.trunk_b.len() {
            return grads.trunk_b[i];
        }
        i -= grads.trunk_b.len();
        for t in &grads.towers {
            if i < t.w.len() {
                return t.w[i];
            }
            i -= t.w.len();
            if i == 0 {
                return t.b;
            }
            i -= 1;
        }
        if let Some(a) = &grads.attention {
            for m in [&a.wq, &a.wk, &a.wv] {
                if i < m.data.len() {
                    return m.data[i];
                }
                i -= m.data.len();
            }
        }
        panic!("coordinate out of range");
    }

    #[test]
    fn untouched_room_embedding_row_stays_absent() {
        let mut params = tiny_params();
        let mut labels = [0u8; TASK_COUNT];
        labels[0] = 1;
        let stream: Vec<TrainingSample> = (0..20)
            .map(|i| {
                let mut s = sample(Flow::RtFirst, labels, {
                    let mut m = [false; TASK_COUNT];
                    m[0] = true;
                    m
                });
                s.report_ts = i as f64;
                s.item_id = 2;
                s
            })
            .collect();
        train_stream(
            &mut params,
            &stream,
            ObjectiveMode::Realtime,
            &TrainOptions::default(),
            plain_featurize,
        )
        .unwrap();
        assert!(params.item_table.get_row(2).is_some());
        assert!(
            params.item_table.get_row(999).is_none(),
            "a never-exposed room must keep no row"
        );
    }

    #[test]
    fn snapshots_cover_quiet_tail_and_start_at_half() {
        let mut params = tiny_params();
        // Zeroed params: every prediction is exactly 0.5.
        let zeros = vec![0.0; params.flatten().len()];
        params.unflatten(&zeros).unwrap();
        let opts = TrainOptions {
            snapshot_every: Some(10.0),
            snapshot_until: 50.0,
            probe: Some(ProbeSpec {
                users: vec![1, 2],
                rooms: vec![ProbeRoom {
                    room_id: 42,
                    author_id: 1,
                    category: RoomCategory::Other,
                }],
            }),
            learning_rate: 0.0,
            ..TrainOptions::default()
        };
        let result = train_stream(
            &mut params,
            &[],
            ObjectiveMode::Realtime,
            &opts,
            plain_featurize,
        )
        .unwrap();
        assert_eq!(result.snapshots.len(), 5);
        for row in &result.snapshots {
            assert_eq!(row.room_ctr[&42], 0.5);
        }
    }
}
