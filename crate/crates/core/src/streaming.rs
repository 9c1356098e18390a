//! Streaming label assembly: turns session events into training samples
//! under three report policies.
//!
//! * `exit_report` — one fully labeled sample per session at exit.
//! * `fast_slow` — a fast sample with everything observed by
//!   `enter + fast_window` (or exit if earlier), then one single-task
//!   positive sample per label first observed inside the slow window;
//!   later positives fall into the ignored window and report nothing.
//! * `realtime` — per-tick samples unmasking only the tasks whose first
//!   positive landed in the closing tick, plus one exit-time sample
//!   unmasking the never-positive tasks at 0. Repeats of an
//!   already-reported task emit nothing.
//!
//! Samples are produced for live sessions; short-video sessions only feed
//! the history store.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::sim::{group_sessions, InteractionEvent, SessionRecord};
use crate::types::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    ExitReport,
    FastSlow,
    Realtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportPolicy {
    pub kind: PolicyKind,
    pub fast_window: f64,
    pub slow_window: f64,
    pub tick: f64,
    /// Optional cap on how late a positive may still be reported under
    /// `realtime`; production behavior is uncapped.
    pub realtime_cap: Option<f64>,
}

impl Default for ReportPolicy {
    fn default() -> Self {
        ReportPolicy {
            kind: PolicyKind::Realtime,
            fast_window: 300.0,
            slow_window: 3600.0,
            tick: 30.0,
            realtime_cap: None,
        }
    }
}

impl ReportPolicy {
    pub fn exit_report() -> Self {
        ReportPolicy {
            kind: PolicyKind::ExitReport,
            ..ReportPolicy::default()
        }
    }

    pub fn fast_slow(fast_window: f64, slow_window: f64) -> Self {
        ReportPolicy {
            kind: PolicyKind::FastSlow,
            fast_window,
            slow_window,
            ..ReportPolicy::default()
        }
    }

    pub fn realtime(tick: f64) -> Self {
        ReportPolicy {
            kind: PolicyKind::Realtime,
            tick,
            ..ReportPolicy::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fast_window < self.slow_window) {
            return Err(Error::Config(
                "fast_window must be below slow_window".into(),
            ));
        }
        if !(self.tick > 0.0) {
            return Err(Error::Config("tick must be positive".into()));
        }
        if self.tick > self.fast_window {
            return Err(Error::Config("tick must not exceed fast_window".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    Exit,
    Fast,
    Slow,
    RtFirst,
    RtExit,
}

impl Flow {
    pub fn name(self) -> &'static str {
        match self {
            Flow::Exit => "exit",
            Flow::Fast => "fast",
            Flow::Slow => "slow",
            Flow::RtFirst => "rt_first",
            Flow::RtExit => "rt_exit",
        }
    }

    fn rank(self) -> u8 {
        match self {
            Flow::Exit => 0,
            Flow::Fast => 1,
            Flow::Slow => 2,
            Flow::RtFirst => 3,
            Flow::RtExit => 4,
        }
    }
}

/// One emitted training sample. `mask[t]` marks the task as learnable;
/// masked tasks contribute neither loss nor gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub session_id: SessionId,
    pub user_id: UserId,
    pub item_id: ItemId,
    pub report_ts: f64,
    pub flow: Flow,
    pub labels: [u8; TASK_COUNT],
    pub mask: [bool; TASK_COUNT],
}

impl TrainingSample {
    pub fn unmasked_tasks(&self) -> impl Iterator<Item = TaskKind> + '_ {
        TaskKind::ALL
            .iter()
            .copied()
            .filter(move |t| self.mask[t.index()])
    }
}

impl Serialize for TrainingSample {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut labels = BTreeMap::new();
        let mut mask = BTreeMap::new();
        for t in TaskKind::ALL {
            labels.insert(t.name(), self.labels[t.index()]);
            mask.insert(t.name(), self.mask[t.index()]);
        }
        let mut s = serializer.serialize_struct("TrainingSample", 7)?;
        s.serialize_field("session_id", &self.session_id)?;
        s.serialize_field("user_id", &self.user_id)?;
        s.serialize_field("item_id", &self.item_id)?;
        s.serialize_field("report_ts", &self.report_ts)?;
        s.serialize_field("flow", &self.flow)?;
        s.serialize_field("labels", &labels)?;
        s.serialize_field("mask", &mask)?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for TrainingSample {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            session_id: SessionId,
            user_id: UserId,
            item_id: ItemId,
            report_ts: f64,
            flow: Flow,
            labels: BTreeMap<String, u8>,
            mask: BTreeMap<String, bool>,
        }
        let w = Wire::deserialize(deserializer)?;
        let mut labels = [0u8; TASK_COUNT];
        let mut mask = [false; TASK_COUNT];
        for t in TaskKind::ALL {
            labels[t.index()] = *w
                .labels
                .get(t.name())
                .ok_or_else(|| D::Error::custom(format!("missing label for task {}", t.name())))?;
            mask[t.index()] = *w
                .mask
                .get(t.name())
                .ok_or_else(|| D::Error::custom(format!("missing mask for task {}", t.name())))?;
        }
        Ok(TrainingSample {
            session_id: w.session_id,
            user_id: w.user_id,
            item_id: w.item_id,
            report_ts: w.report_ts,
            flow: w.flow,
            labels,
            mask,
        })
    }
}

/// Per-(session, task) first-positive bookkeeping for the realtime flow.
#[derive(Debug, Default, Clone)]
pub struct LabelLedger {
    entries: BTreeMap<(SessionId, TaskKind), LedgerEntry>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LedgerEntry {
    pub first_positive_ts: Option<f64>,
    pub reported: bool,
}

impl LabelLedger {
    pub fn observe_positive(&mut self, session: SessionId, task: TaskKind, ts: f64) {
        let e = self.entries.entry((session, task)).or_default();
        if e.first_positive_ts.is_none() {
            e.first_positive_ts = Some(ts);
        }
    }

    /// Flips `reported`; a second flip for the same key is a bug upstream.
    pub fn mark_reported(&mut self, session: SessionId, task: TaskKind) -> Result<()> {
        let e = self.entries.entry((session, task)).or_default();
        if e.reported {
            return Err(Error::MalformedLog(format!(
                "task {} of session {} reported twice",
                task.name(),
                session
            )));
        }
        e.reported = true;
        Ok(())
    }

    pub fn get(&self, session: SessionId, task: TaskKind) -> Option<&LedgerEntry> {
        self.entries.get(&(session, task))
    }
}

/// Earliest positive timestamp per task, None where the task never fired.
pub fn first_only_filter(session: &SessionRecord) -> [Option<f64>; TASK_COUNT] {
    let mut first = [None; TASK_COUNT];
    for e in &session.events {
        if let Some(task) = TaskKind::from_behavior(e.behavior) {
            let slot = &mut first[task.index()];
            match slot {
                Some(ts) if *ts <= e.ts => {}
                _ => *slot = Some(e.ts),
            }
        }
    }
    first
}

fn push_exit_sample(session: &SessionRecord, out: &mut Vec<TrainingSample>) {
    let first = first_only_filter(session);
    let mut labels = [0u8; TASK_COUNT];
    for t in TaskKind::ALL {
        labels[t.index()] = u8::from(first[t.index()].is_some());
    }
    out.push(TrainingSample {
        session_id: session.session_id,
        user_id: session.user_id,
        item_id: session.room_id,
        report_ts: session.exit,
        flow: Flow::Exit,
        labels,
        mask: [true; TASK_COUNT],
    });
}

fn push_fast_slow_samples(
    session: &SessionRecord,
    policy: &ReportPolicy,
    out: &mut Vec<TrainingSample>,
) {
    let first = first_only_filter(session);
    let fast_ts = (session.enter + policy.fast_window).min(session.exit);
    let slow_end = session.enter + policy.slow_window;

    let mut labels = [0u8; TASK_COUNT];
    for t in TaskKind::ALL {
        labels[t.index()] = u8::from(matches!(first[t.index()], Some(ts) if ts <= fast_ts));
    }
    out.push(TrainingSample {
        session_id: session.session_id,
        user_id: session.user_id,
        item_id: session.room_id,
        report_ts: fast_ts,
        flow: Flow::Fast,
        labels,
        mask: [true; TASK_COUNT],
    });

    for t in TaskKind::ALL {
        if let Some(ts) = first[t.index()] {
            if ts > fast_ts && ts <= slow_end {
                let mut labels = [0u8; TASK_COUNT];
                let mut mask = [false; TASK_COUNT];
                labels[t.index()] = 1;
                mask[t.index()] = true;
                out.push(TrainingSample {
                    session_id: session.session_id,
                    user_id: session.user_id,
                    item_id: session.room_id,
                    report_ts: ts,
                    flow: Flow::Slow,
                    labels,
                    mask,
                });
            }
            // Beyond slow_end: the ignored window, nothing is reported.
        }
    }
}

fn push_realtime_samples(
    session: &SessionRecord,
    policy: &ReportPolicy,
    ledger: &mut LabelLedger,
    out: &mut Vec<TrainingSample>,
) -> Result<()> {
    let first = first_only_filter(session);
    for t in TaskKind::ALL {
        if let Some(ts) = first[t.index()] {
            ledger.observe_positive(session.session_id, t, ts);
        }
    }

    // Tick k covers (enter + (k-1)*tick, enter + k*tick]; a positive exactly
    // at enter belongs to tick 1. Positives in the final partial tick flush
    // at exit so nothing pre-exit is ever dropped.
    let mut by_report: BTreeMap<u64, (f64, Vec<TaskKind>)> = BTreeMap::new();
    for t in TaskKind::ALL {
        let Some(ts) = first[t.index()] else { continue };
        if let Some(cap) = policy.realtime_cap {
            if ts > session.enter + cap {
                continue;
            }
        }
        let offset = ts - session.enter;
        let k = (offset / policy.tick).ceil().max(1.0) as u64;
        let boundary = session.enter + k as f64 * policy.tick;
        let (key, report_ts) = if boundary > session.exit {
            (u64::MAX, session.exit)
        } else {
            (k, boundary)
        };
        by_report
            .entry(key)
            .or_insert_with(|| (report_ts, Vec::new()))
            .1
            .push(t);
    }
    for (_, (report_ts, tasks)) in by_report {
        let mut labels = [0u8; TASK_COUNT];
        let mut mask = [false; TASK_COUNT];
        for t in &tasks {
            labels[t.index()] = 1;
            mask[t.index()] = true;
            ledger.mark_reported(session.session_id, *t)?;
        }
        out.push(TrainingSample {
            session_id: session.session_id,
            user_id: session.user_id,
            item_id: session.room_id,
            report_ts,
            flow: Flow::RtFirst,
            labels,
            mask,
        });
    }

    let mut mask = [false; TASK_COUNT];
    let mut any_negative = false;
    for t in TaskKind::ALL {
        if first[t.index()].is_none() {
            mask[t.index()] = true;
            any_negative = true;
            ledger.mark_reported(session.session_id, t)?;
        }
    }
    if any_negative {
        out.push(TrainingSample {
            session_id: session.session_id,
            user_id: session.user_id,
            item_id: session.room_id,
            report_ts: session.exit,
            flow: Flow::RtExit,
            labels: [0u8; TASK_COUNT],
            mask,
        });
    }
    Ok(())
}

/// Assemble the merged training-sample stream for a sorted event log.
///
/// The output is ordered by report timestamp (ties resolved by session,
/// flow, then task) and is deterministic for a given input.
pub fn assemble(events: &[InteractionEvent], policy: &ReportPolicy) -> Result<Vec<TrainingSample>> {
    policy.validate()?;
    let sessions = group_sessions(events)?;
    let mut out = Vec::new();
    let mut ledger = LabelLedger::default();
    for session in &sessions {
        if session.domain != Domain::Live {
            continue;
        }
        match policy.kind {
            PolicyKind::ExitReport => push_exit_sample(session, &mut out),
            PolicyKind::FastSlow => push_fast_slow_samples(session, policy, &mut out),
            PolicyKind::Realtime => {
                push_realtime_samples(session, policy, &mut ledger, &mut out)?
            }
        }
    }
    out.sort_by(|a, b| {
        a.report_ts
            .partial_cmp(&b.report_ts)
            .unwrap()
            .then_with(|| a.session_id.cmp(&b.session_id))
            .then_with(|| a.flow.rank().cmp(&b.flow.rank()))
            .then_with(|| a.labels.cmp(&b.labels))
    });
    Ok(out)
}

/// |a| / |b|. Errors when the denominator stream is empty.
pub fn sample_volume_ratio(a: &[TrainingSample], b: &[TrainingSample]) -> Result<f64> {
    if b.is_empty() {
        return Err(Error::Empty("denominator sample stream".into()));
    }
    Ok(a.len() as f64 / b.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, SimConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn event(
        event_id: EventId,
        session_id: SessionId,
        behavior: BehaviorKind,
        ts: f64,
    ) -> InteractionEvent {
        InteractionEvent {
            event_id,
            user_id: 1,
            item_id: 1,
            domain: Domain::Live,
            behavior,
            ts,
            session_id,
            value: if behavior == BehaviorKind::Gift {
                Some(5.0)
            } else {
                None
            },
        }
    }

    /// enter@0, click@10, like@400, exit@500 — the hand-traced session.
    fn traced_session() -> Vec<InteractionEvent> {
        vec![
            event(1, 1, BehaviorKind::Impression, 0.0),
            event(2, 1, BehaviorKind::Click, 10.0),
            event(3, 1, BehaviorKind::Like, 400.0),
            event(4, 1, BehaviorKind::Exit, 500.0),
        ]
    }

    #[test]
    fn first_only_filter_takes_minimum() {
        let events = vec![
            event(1, 1, BehaviorKind::Impression, 0.0),
            event(2, 1, BehaviorKind::Comment, 50.0),
            event(3, 1, BehaviorKind::Comment, 80.0),
            event(4, 1, BehaviorKind::Comment, 90.0),
            event(5, 1, BehaviorKind::Click, 12.0),
            event(6, 1, BehaviorKind::Click, 10.0),
            event(7, 1, BehaviorKind::Exit, 100.0),
        ];
        let session = &group_sessions(&events).unwrap()[0];
        let first = first_only_filter(session);
        assert_eq!(first[TaskKind::Comment.index()], Some(50.0));
        assert_eq!(first[TaskKind::Click.index()], Some(10.0));
        assert_eq!(first[TaskKind::Gift.index()], None);
    }

    #[test]
    fn fast_slow_hand_trace() {
        let samples = assemble(&traced_session(), &ReportPolicy::fast_slow(300.0, 3600.0)).unwrap();
        assert_eq!(samples.len(), 2);

        let fast = &samples[0];
        assert_eq!(fast.flow, Flow::Fast);
        assert_eq!(fast.report_ts, 300.0);
        assert!(fast.mask.iter().all(|&m| m));
        assert_eq!(fast.labels[TaskKind::Click.index()], 1);
        assert_eq!(fast.labels[TaskKind::Like.index()], 0);

        let slow = &samples[1];
        assert_eq!(slow.flow, Flow::Slow);
        assert_eq!(slow.report_ts, 400.0);
        assert_eq!(
            slow.unmasked_tasks().collect::<Vec<_>>(),
            vec![TaskKind::Like]
        );
        assert_eq!(slow.labels[TaskKind::Like.index()], 1);
    }

    #[test]
    fn realtime_hand_trace() {
        let samples = assemble(&traced_session(), &ReportPolicy::realtime(30.0)).unwrap();
        assert_eq!(samples.len(), 3);

        assert_eq!(samples[0].flow, Flow::RtFirst);
        assert_eq!(samples[0].report_ts, 30.0);
        assert_eq!(
            samples[0].unmasked_tasks().collect::<Vec<_>>(),
            vec![TaskKind::Click]
        );

        assert_eq!(samples[1].flow, Flow::RtFirst);
        assert_eq!(samples[1].report_ts, 420.0);
        assert_eq!(
            samples[1].unmasked_tasks().collect::<Vec<_>>(),
            vec![TaskKind::Like]
        );

        let rt_exit = &samples[2];
        assert_eq!(rt_exit.flow, Flow::RtExit);
        assert_eq!(rt_exit.report_ts, 500.0);
        assert!(!rt_exit.mask[TaskKind::Click.index()]);
        assert!(!rt_exit.mask[TaskKind::Like.index()]);
        for t in [
            TaskKind::EffectiveView,
            TaskKind::LongView,
            TaskKind::Comment,
            TaskKind::Gift,
        ] {
            assert!(rt_exit.mask[t.index()]);
            assert_eq!(rt_exit.labels[t.index()], 0);
        }
    }

    #[test]
    fn realtime_all_negative_session() {
        let events = vec![
            event(1, 1, BehaviorKind::Impression, 0.0),
            event(2, 1, BehaviorKind::Exit, 50.0),
        ];
        let samples = assemble(&events, &ReportPolicy::realtime(30.0)).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].flow, Flow::RtExit);
        assert!(samples[0].mask.iter().all(|&m| m));
        assert!(samples[0].labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn realtime_boundary_and_enter_positives() {
        // A positive exactly on a tick boundary belongs to the closing tick;
        // a positive at enter belongs to tick 1.
        let events = vec![
            event(1, 1, BehaviorKind::Impression, 100.0),
            event(2, 1, BehaviorKind::Click, 100.0),
            event(3, 1, BehaviorKind::Like, 160.0),
            event(4, 1, BehaviorKind::Exit, 300.0),
        ];
        let samples = assemble(&events, &ReportPolicy::realtime(30.0)).unwrap();
        let firsts: Vec<(f64, Vec<TaskKind>)> = samples
            .iter()
            .filter(|s| s.flow == Flow::RtFirst)
            .map(|s| (s.report_ts, s.unmasked_tasks().collect()))
            .collect();
        assert_eq!(
            firsts,
            vec![
                (130.0, vec![TaskKind::Click]),
                (160.0, vec![TaskKind::Like]),
            ]
        );
    }

    #[test]
    fn realtime_partial_tick_flushes_at_exit() {
        let events = vec![
            event(1, 1, BehaviorKind::Impression, 0.0),
            event(2, 1, BehaviorKind::Click, 44.0),
            event(3, 1, BehaviorKind::Exit, 50.0),
        ];
        let samples = assemble(&events, &ReportPolicy::realtime(30.0)).unwrap();
        let first = samples.iter().find(|s| s.flow == Flow::RtFirst).unwrap();
        assert_eq!(first.report_ts, 50.0);
        assert_eq!(
            first.unmasked_tasks().collect::<Vec<_>>(),
            vec![TaskKind::Click]
        );
    }

    #[test]
    fn exit_report_one_sample_per_session() {
        let samples = assemble(&traced_session(), &ReportPolicy::exit_report()).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].flow, Flow::Exit);
        assert_eq!(samples[0].report_ts, 500.0);
        assert_eq!(samples[0].labels[TaskKind::Click.index()], 1);
        assert_eq!(samples[0].labels[TaskKind::Like.index()], 1);
        assert_eq!(samples[0].labels[TaskKind::Gift.index()], 0);
        assert!(samples[0].mask.iter().all(|&m| m));
    }

    #[test]
    fn missing_exit_is_malformed() {
        let events = vec![
            event(1, 1, BehaviorKind::Impression, 0.0),
            event(2, 1, BehaviorKind::Click, 10.0),
        ];
        let err = assemble(&events, &ReportPolicy::exit_report()).unwrap_err();
        assert!(err.to_string().contains("session 1"), "{err}");
    }

    #[test]
    fn short_video_sessions_are_skipped() {
        let mut events = traced_session();
        for e in &mut events {
            e.domain = Domain::ShortVideo;
        }
        let samples = assemble(&events, &ReportPolicy::exit_report()).unwrap();
        assert!(samples.is_empty());
    }

    #[test]
    fn wire_roundtrip() {
        let samples = assemble(&traced_session(), &ReportPolicy::realtime(30.0)).unwrap();
        for s in &samples {
            let line = serde_json::to_string(s).unwrap();
            let back: TrainingSample = serde_json::from_str(&line).unwrap();
            assert_eq!(&back, s);
            let v: serde_json::Value = serde_json::from_str(&line).unwrap();
            for key in [
                "session_id",
                "user_id",
                "item_id",
                "report_ts",
                "flow",
                "labels",
                "mask",
            ] {
                assert!(v.get(key).is_some(), "missing key {key}");
            }
        }
    }

    /// Brute-force oracle: positives per (session, task) straight off the log.
    fn oracle_positive_set(
        events: &[InteractionEvent],
        within: impl Fn(&SessionRecord, f64) -> bool,
    ) -> std::collections::BTreeSet<(SessionId, TaskKind)> {
        let mut set = std::collections::BTreeSet::new();
        for s in group_sessions(events).unwrap() {
            if s.domain != Domain::Live {
                continue;
            }
            for e in &s.events {
                if let Some(t) = TaskKind::from_behavior(e.behavior) {
                    if within(&s, e.ts) {
                        set.insert((s.session_id, t));
                    }
                }
            }
        }
        set
    }

    fn unmasked_positive_set(
        samples: &[TrainingSample],
    ) -> std::collections::BTreeSet<(SessionId, TaskKind)> {
        let mut set = std::collections::BTreeSet::new();
        for s in samples {
            for t in s.unmasked_tasks() {
                if s.labels[t.index()] == 1 {
                    set.insert((s.session_id, t));
                }
            }
        }
        set
    }

    /// Random sessions with adversarial timing: a mix of short and long
    /// watches and delays that straddle every window boundary.
    fn random_log(seed: u64, sessions: usize) -> Vec<InteractionEvent> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut events = Vec::new();
        let mut event_id = 1;
        for sid in 1..=sessions as u64 {
            let enter = rng.random::<f64>() * 5000.0;
            let duration = 5.0 + rng.random::<f64>() * 5000.0;
            let exit = enter + duration;
            events.push(event(event_id, sid, BehaviorKind::Impression, enter));
            event_id += 1;
            for behavior in [
                BehaviorKind::Click,
                BehaviorKind::EffectiveView,
                BehaviorKind::LongView,
                BehaviorKind::Like,
                BehaviorKind::Comment,
                BehaviorKind::Gift,
            ] {
                // Up to three occurrences per behavior to exercise
                // first-only handling.
                for _ in 0..rng.random_range(0..3u32) {
                    if rng.random::<f64>() < 0.5 {
                        let ts = enter + rng.random::<f64>() * duration;
                        events.push(event(event_id, sid, behavior, ts));
                        event_id += 1;
                    }
                }
            }
            events.push(event(event_id, sid, BehaviorKind::Exit, exit));
            event_id += 1;
        }
        events.sort_by(|a, b| {
            a.ts.partial_cmp(&b.ts)
                .unwrap()
                .then_with(|| a.event_id.cmp(&b.event_id))
        });
        events
    }

    #[test]
    fn positive_coverage_matches_oracle() {
        for seed in 0..5 {
            let events = random_log(seed, 80);
            let policy = ReportPolicy::fast_slow(300.0, 3600.0);

            let rt = assemble(&events, &ReportPolicy::realtime(30.0)).unwrap();
            let oracle_rt = oracle_positive_set(&events, |_, _| true);
            assert_eq!(unmasked_positive_set(&rt), oracle_rt);

            let fs = assemble(&events, &policy).unwrap();
            let oracle_fs =
                oracle_positive_set(&events, |s, ts| ts <= s.enter + policy.slow_window);
            assert_eq!(unmasked_positive_set(&fs), oracle_fs);

            let exit = assemble(&events, &ReportPolicy::exit_report()).unwrap();
            assert_eq!(unmasked_positive_set(&exit), oracle_rt);
        }
    }

    #[test]
    fn realtime_single_report_and_no_fake_negatives() {
        for seed in 0..5 {
            let events = random_log(seed + 100, 80);
            let samples = assemble(&events, &ReportPolicy::realtime(30.0)).unwrap();
            let mut seen = std::collections::BTreeSet::new();
            for s in &samples {
                for t in s.unmasked_tasks() {
                    assert!(
                        seen.insert((s.session_id, t)),
                        "({}, {}) unmasked twice",
                        s.session_id,
                        t.name()
                    );
                }
            }
            let positives = oracle_positive_set(&events, |_, _| true);
            for s in &samples {
                for t in s.unmasked_tasks() {
                    if s.labels[t.index()] == 0 {
                        assert!(
                            !positives.contains(&(s.session_id, t)),
                            "fake negative for ({}, {})",
                            s.session_id,
                            t.name()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn fast_slow_fake_negative_accounting() {
        for seed in 0..5 {
            let events = random_log(seed + 200, 80);
            let policy = ReportPolicy::fast_slow(300.0, 3600.0);
            let samples = assemble(&events, &policy).unwrap();
            let sessions: BTreeMap<SessionId, SessionRecord> = group_sessions(&events)
                .unwrap()
                .into_iter()
                .map(|s| (s.session_id, s))
                .collect();
            let mut fake_negatives = 0usize;
            for s in samples.iter().filter(|s| s.flow == Flow::Fast) {
                let record = &sessions[&s.session_id];
                let first = first_only_filter(record);
                for t in TaskKind::ALL {
                    if s.labels[t.index()] == 0 {
                        if let Some(ts) = first[t.index()] {
                            assert!(ts > s.report_ts);
                            if ts <= record.enter + policy.slow_window {
                                fake_negatives += 1;
                            }
                        }
                    }
                }
            }
            let slow_count = samples.iter().filter(|s| s.flow == Flow::Slow).count();
            assert_eq!(fake_negatives, slow_count);
        }
    }

    #[test]
    fn report_latency_bounds() {
        let events = random_log(7, 120);
        let sessions: BTreeMap<SessionId, SessionRecord> = group_sessions(&events)
            .unwrap()
            .into_iter()
            .map(|s| (s.session_id, s))
            .collect();

        let rt = assemble(&events, &ReportPolicy::realtime(30.0)).unwrap();
        for s in rt.iter().filter(|s| s.flow == Flow::RtFirst) {
            let first = first_only_filter(&sessions[&s.session_id]);
            for t in s.unmasked_tasks() {
                let fp = first[t.index()].unwrap();
                assert!(s.report_ts <= fp + 30.0 + 1e-9);
                assert!(s.report_ts >= fp);
            }
        }

        let policy = ReportPolicy::fast_slow(300.0, 3600.0);
        let fs = assemble(&events, &policy).unwrap();
        for s in fs.iter().filter(|s| s.flow == Flow::Fast) {
            let record = &sessions[&s.session_id];
            assert!(s.report_ts <= record.enter + policy.fast_window + 1e-9);
        }
    }

    #[test]
    fn stream_sorted_and_deterministic_on_sim_log() {
        let config = SimConfig {
            num_users: 50,
            num_rooms: 3,
            num_short_videos: 10,
            horizon: 4000.0,
            ..SimConfig::default()
        };
        let out = simulate(&config).unwrap();
        for policy in [
            ReportPolicy::exit_report(),
            ReportPolicy::fast_slow(300.0, 3600.0),
            ReportPolicy::realtime(30.0),
        ] {
            let a = assemble(&out.events, &policy).unwrap();
            let b = assemble(&out.events, &policy).unwrap();
            assert_eq!(a, b);
            for w in a.windows(2) {
                assert!(w[0].report_ts <= w[1].report_ts);
            }
        }
    }

    #[test]
    fn volume_ratio_identity_and_empty() {
        let events = random_log(3, 40);
        let rt = assemble(&events, &ReportPolicy::realtime(30.0)).unwrap();
        assert_eq!(sample_volume_ratio(&rt, &rt).unwrap(), 1.0);
        assert!(sample_volume_ratio(&rt, &[]).is_err());
    }

    #[test]
    fn volume_ratio_bounded_for_sparse_sessions() {
        // Sessions with at most one positive task: realtime emits at most
        // one rt_first plus one rt_exit, fast_slow at least one fast sample.
        let mut events = Vec::new();
        let mut event_id = 1;
        for sid in 1..=50u64 {
            let enter = sid as f64 * 10.0;
            events.push(event(event_id, sid, BehaviorKind::Impression, enter));
            event_id += 1;
            if sid % 2 == 0 {
                events.push(event(event_id, sid, BehaviorKind::Click, enter + 5.0));
                event_id += 1;
            }
            events.push(event(event_id, sid, BehaviorKind::Exit, enter + 100.0));
            event_id += 1;
        }
        let rt = assemble(&events, &ReportPolicy::realtime(30.0)).unwrap();
        let fs = assemble(&events, &ReportPolicy::fast_slow(300.0, 3600.0)).unwrap();
        let ratio = sample_volume_ratio(&rt, &fs).unwrap();
        assert!(ratio <= 1.5 + 1e-9, "ratio {ratio}");
    }
}
