//! Deterministic session simulator.
//!
//! Rooms carry a piecewise-constant latent attractiveness: a base level plus
//! disjoint additive highlight boosts, clamped to [0, 1]. Users arrive in
//! sequential sessions; on each arrival the per-behavior occurrence
//! probability is `sparsity[b] * attractiveness(item, enter)`, and occurrence
//! times are `enter + shifted-exponential delay`. Watch-duration behaviors
//! (`effective_view`, `long_view`) are derived from `exit - enter`, never
//! sampled.
//!
//! All randomness comes from tagged substreams of the master seed (see
//! [`crate::rng`]), so the draws for a given (user, session) do not depend on
//! room parameters. Rerunning with one room's boost changed replays the same
//! uniforms against shifted probabilities, which keeps boosted runs a
//! superset in positives.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::types::*;

const TAG_ROOMS: u64 = 1;
const TAG_VIDEOS: u64 = 2;
const TAG_SCHEDULE: u64 = 3;
const TAG_SESSION: u64 = 4;

/// One highlight interval: attractiveness gains `boost` on `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub start: f64,
    pub end: f64,
    pub boost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomCategory {
    TalentShow,
    GamePlay,
    Other,
}

impl RoomCategory {
    /// Stable id used as the category embedding key.
    pub fn id(self) -> u64 {
        match self {
            RoomCategory::TalentShow => 0,
            RoomCategory::GamePlay => 1,
            RoomCategory::Other => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomState {
    pub room_id: ItemId,
    pub author_id: AuthorId,
    pub category: RoomCategory,
    pub start_time: f64,
    pub end_time: f64,
    pub highlight_schedule: Vec<Highlight>,
    pub base_attractiveness: f64,
}

impl RoomState {
    pub fn validate(&self) -> Result<()> {
        if !(self.end_time > self.start_time) {
            return Err(Error::Config(format!(
                "room {}: end_time must exceed start_time",
                self.room_id
            )));
        }
        if !(0.0..=1.0).contains(&self.base_attractiveness) {
            return Err(Error::Config(format!(
                "room {}: base_attractiveness outside [0,1]",
                self.room_id
            )));
        }
        let mut prev_end = self.start_time;
        for (i, h) in self.highlight_schedule.iter().enumerate() {
            if h.boost < 0.0 {
                return Err(Error::Config(format!(
                    "room {}: highlight {} has negative boost",
                    self.room_id, i
                )));
            }
            if h.start < prev_end || h.end <= h.start || h.end > self.end_time {
                return Err(Error::Config(format!(
                    "room {}: highlight {} not disjoint/sorted within the room lifetime",
                    self.room_id, i
                )));
            }
            prev_end = h.end;
        }
        Ok(())
    }

    /// Latent attractiveness at time `t`.
    ///
    /// Inside a highlight interval the boost is added to the base, then the
    /// sum is clamped to [0, 1]; everywhere else the base applies.
    pub fn attractiveness(&self, t: f64) -> Result<f64> {
        if t < self.start_time || t > self.end_time {
            return Err(Error::Domain(format!(
                "t={} outside room {} lifetime [{}, {}]",
                t, self.room_id, self.start_time, self.end_time
            )));
        }
        let mut a = self.base_attractiveness;
        for h in &self.highlight_schedule {
            if t >= h.start && t <= h.end {
                a += h.boost;
                break;
            }
        }
        Ok(a.clamp(0.0, 1.0))
    }
}

/// One logged user behavior. Wire format is one JSON object per line with
/// exactly these keys; `value` is the gift price and is null otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub event_id: EventId,
    pub user_id: UserId,
    pub item_id: ItemId,
    pub domain: Domain,
    pub behavior: BehaviorKind,
    pub ts: f64,
    pub session_id: SessionId,
    #[serde(default)]
    pub value: Option<f64>,
}

/// A user's contiguous watch of one item, reassembled from the event log.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub session_id: SessionId,
    pub user_id: UserId,
    pub room_id: ItemId,
    pub domain: Domain,
    pub enter: f64,
    pub exit: f64,
    pub events: Vec<InteractionEvent>,
}

/// Shifted exponential: `shift + Exp(mean)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayDist {
    pub shift: f64,
    pub mean: f64,
}

impl DelayDist {
    pub fn new(shift: f64, mean: f64) -> Self {
        DelayDist { shift, mean }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        self.shift + -self.mean * (1.0 - u).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorParams {
    /// Base occurrence rate, multiplied by attractiveness at enter time.
    pub sparsity: f64,
    pub delay: DelayDist,
}

/// Random-room generation knobs. Ranges are inclusive uniform draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoomGen {
    pub base_attractiveness: (f64, f64),
    pub highlights_per_room: u32,
    pub highlight_duration: (f64, f64),
    pub highlight_boost: (f64, f64),
    /// Onset window as fractions of the horizon.
    pub onset_window: (f64, f64),
}

impl Default for RoomGen {
    fn default() -> Self {
        RoomGen {
            base_attractiveness: (0.08, 0.15),
            highlights_per_room: 1,
            highlight_duration: (900.0, 1500.0),
            highlight_boost: (0.5, 0.65),
            onset_window: (0.35, 0.7),
        }
    }
}

/// One fully scripted session, bypassing all random draws. Behaviors whose
/// delay exceeds `duration` are discarded, matching the sampled path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedSession {
    pub user_id: UserId,
    pub item_id: ItemId,
    pub domain: Domain,
    pub enter: f64,
    pub duration: f64,
    #[serde(default)]
    pub behaviors: Vec<ScriptedBehavior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedBehavior {
    pub behavior: BehaviorKind,
    pub delay: f64,
    #[serde(default)]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub num_users: u64,
    pub num_rooms: u64,
    pub num_short_videos: u64,
    /// Arrivals stop at the horizon; an open session may run past it.
    pub horizon: f64,
    pub seed: u64,
    pub effective_view_threshold: f64,
    pub long_view_threshold: f64,
    /// Drawable behaviors only: click, like, comment, gift.
    pub behaviors: BTreeMap<BehaviorKind, BehaviorParams>,
    /// Gap from a session's exit to the user's next arrival.
    pub session_gap: DelayDist,
    /// Probability an arrival lands on a live room rather than a short video.
    pub live_fraction: f64,
    pub live_watch_duration: DelayDist,
    pub video_watch_duration: DelayDist,
    /// Static per-video attractiveness range.
    pub video_attractiveness: (f64, f64),
    pub room_gen: RoomGen,
    /// Explicit room list; overrides random generation when present.
    pub rooms: Option<Vec<RoomState>>,
    /// Explicit short-video catalog; overrides random generation.
    pub videos: Option<Vec<VideoMeta>>,
    /// Fully scripted schedule; when present no random sessions are generated.
    pub scripted_sessions: Option<Vec<ScriptedSession>>,
    /// Grid step for the ground-truth attractiveness series.
    pub truth_grid: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let mut behaviors = BTreeMap::new();
        behaviors.insert(
            BehaviorKind::Click,
            BehaviorParams {
                sparsity: 0.5,
                delay: DelayDist::new(2.0, 60.0),
            },
        );
        behaviors.insert(
            BehaviorKind::Like,
            BehaviorParams {
                sparsity: 0.25,
                delay: DelayDist::new(5.0, 150.0),
            },
        );
        behaviors.insert(
            BehaviorKind::Comment,
            BehaviorParams {
                sparsity: 0.2,
                delay: DelayDist::new(5.0, 170.0),
            },
        );
        behaviors.insert(
            BehaviorKind::Gift,
            BehaviorParams {
                sparsity: 0.08,
                delay: DelayDist::new(30.0, 350.0),
            },
        );
        SimConfig {
            num_users: 2000,
            num_rooms: 20,
            num_short_videos: 400,
            horizon: 21_600.0,
            seed: 42,
            effective_view_threshold: 60.0,
            long_view_threshold: 180.0,
            behaviors,
            session_gap: DelayDist::new(10.0, 180.0),
            live_fraction: 0.25,
            live_watch_duration: DelayDist::new(30.0, 600.0),
            video_watch_duration: DelayDist::new(5.0, 40.0),
            video_attractiveness: (0.2, 0.9),
            room_gen: RoomGen::default(),
            rooms: None,
            videos: None,
            scripted_sessions: None,
            truth_grid: 30.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if !(self.effective_view_threshold < self.long_view_threshold) {
            return Err(Error::Config(
                "effective_view_threshold must be below long_view_threshold".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.live_fraction) {
            return Err(Error::Config("live_fraction outside [0,1]".into()));
        }
        for (b, p) in &self.behaviors {
            match b {
                BehaviorKind::Click
                | BehaviorKind::Like
                | BehaviorKind::Comment
                | BehaviorKind::Gift => {}
                other => {
                    return Err(Error::Config(format!(
                        "behavior {} is structural or derived, not drawable",
                        other.name()
                    )))
                }
            }
            if !(0.0..=1.0).contains(&p.sparsity) {
                return Err(Error::Config(format!(
                    "sparsity for {} outside [0,1]",
                    b.name()
                )));
            }
            if p.delay.shift < 0.0 || p.delay.mean < 0.0 {
                return Err(Error::Config(format!(
                    "delay parameters for {} must be non-negative",
                    b.name()
                )));
            }
        }
        if !(self.truth_grid > 0.0) {
            return Err(Error::Config("truth_grid must be positive".into()));
        }
        if let Some(rooms) = &self.rooms {
            for r in rooms {
                r.validate()?;
            }
        }
        Ok(())
    }

    /// Item ids are one shared space: rooms first, short videos after.
    pub fn first_video_id(&self) -> ItemId {
        self.num_rooms + 1
    }
}

/// Short-video catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: ItemId,
    pub author_id: AuthorId,
    pub attractiveness: f64,
}

/// Everything a simulation run produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Sorted by (ts, event_id).
    pub events: Vec<InteractionEvent>,
    pub rooms: Vec<RoomState>,
    pub videos: Vec<VideoMeta>,
}

fn uniform_in(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    let u: f64 = rng.random();
    range.0 + u * (range.1 - range.0)
}

fn generate_rooms(config: &SimConfig) -> Result<Vec<RoomState>> {
    if let Some(rooms) = &config.rooms {
        return Ok(rooms.clone());
    }
    let g = &config.room_gen;
    let mut rooms = Vec::with_capacity(config.num_rooms as usize);
    for idx in 0..config.num_rooms {
        let room_id = idx + 1;
        let mut rng = substream(config.seed, &[TAG_ROOMS, room_id]);
        let base = uniform_in(&mut rng, g.base_attractiveness);
        let category = match rng.random_range(0..3u32) {
            0 => RoomCategory::TalentShow,
            1 => RoomCategory::GamePlay,
            _ => RoomCategory::Other,
        };
        let mut highlights = Vec::new();
        let n = g.highlights_per_room as usize;
        for k in 0..n {
            // One onset per equal slice of the onset window keeps intervals
            // disjoint without rejection sampling.
            let lo = g.onset_window.0 + (g.onset_window.1 - g.onset_window.0) * k as f64 / n as f64;
            let hi =
                g.onset_window.0 + (g.onset_window.1 - g.onset_window.0) * (k + 1) as f64 / n as f64;
            let start = uniform_in(&mut rng, (lo * config.horizon, hi * config.horizon));
            let duration = uniform_in(&mut rng, g.highlight_duration);
            let boost = uniform_in(&mut rng, g.highlight_boost);
            let end = (start + duration).min(config.horizon);
            if let Some(prev) = highlights.last() {
                let prev: &Highlight = prev;
                if start <= prev.end {
                    continue;
                }
            }
            if end > start {
                highlights.push(Highlight { start, end, boost });
            }
        }
        let room = RoomState {
            room_id,
            author_id: room_id,
            category,
            start_time: 0.0,
            end_time: config.horizon,
            highlight_schedule: highlights,
            base_attractiveness: base,
        };
        room.validate()?;
        rooms.push(room);
    }
    Ok(rooms)
}

fn generate_videos(config: &SimConfig) -> Vec<VideoMeta> {
    if let Some(videos) = &config.videos {
        return videos.clone();
    }
    let author_pool = config.num_rooms.max(1);
    (0..config.num_short_videos)
        .map(|idx| {
            let video_id = config.first_video_id() + idx;
            let mut rng = substream(config.seed, &[TAG_VIDEOS, video_id]);
            let attractiveness = uniform_in(&mut rng, config.video_attractiveness);
            let author_id = rng.random_range(0..author_pool) + 1;
            VideoMeta {
                video_id,
                author_id,
                attractiveness,
            }
        })
        .collect()
}

/// Raw per-session plan before event-id assignment.
struct SessionPlan {
    user_id: UserId,
    item_id: ItemId,
    domain: Domain,
    enter: f64,
    duration: f64,
    /// (ts, behavior, value), unsorted.
    occurrences: Vec<(f64, BehaviorKind, Option<f64>)>,
}

impl SessionPlan {
    fn push_derived(&mut self, config: &SimConfig) {
        if self.duration >= config.effective_view_threshold {
            self.occurrences.push((
                self.enter + config.effective_view_threshold,
                BehaviorKind::EffectiveView,
                None,
            ));
        }
        if self.duration >= config.long_view_threshold {
            self.occurrences.push((
                self.enter + config.long_view_threshold,
                BehaviorKind::LongView,
                None,
            ));
        }
    }
}

const DRAW_ORDER: [BehaviorKind; 4] = [
    BehaviorKind::Click,
    BehaviorKind::Like,
    BehaviorKind::Comment,
    BehaviorKind::Gift,
];

/// Sample one session's behaviors. Every (uniform, delay) pair plus the gift
/// value is always drawn so the stream stays aligned across configs that
/// differ only in attractiveness parameters.
fn sample_session(
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
    user_id: UserId,
    item_id: ItemId,
    domain: Domain,
    enter: f64,
    duration: f64,
    attractiveness: f64,
) -> SessionPlan {
    let mut plan = SessionPlan {
        user_id,
        item_id,
        domain,
        enter,
        duration,
        occurrences: Vec::new(),
    };
    let gift_value_draw: f64;
    {
        let mut draws = Vec::with_capacity(DRAW_ORDER.len());
        for behavior in DRAW_ORDER {
            let u: f64 = rng.random();
            let delay = config
                .behaviors
                .get(&behavior)
                .map(|p| p.delay.sample(rng))
                .unwrap_or_else(|| {
                    // Keep the stream aligned even when a behavior is absent
                    // from the config.
                    let _: f64 = rng.random();
                    f64::INFINITY
                });
            draws.push((behavior, u, delay));
        }
        gift_value_draw = rng.random();
        for (behavior, u, delay) in draws {
            let Some(params) = config.behaviors.get(&behavior) else {
                continue;
            };
            let p = (params.sparsity * attractiveness).clamp(0.0, 1.0);
            if u < p && delay <= duration {
                let value = if behavior == BehaviorKind::Gift {
                    Some((1.0 + gift_value_draw * 99.0 * 100.0).round() / 100.0)
                } else {
                    None
                };
                plan.occurrences.push((enter + delay, behavior, value));
            }
        }
    }
    plan.push_derived(config);
    plan
}

fn scripted_plan(config: &SimConfig, s: &ScriptedSession) -> SessionPlan {
    let mut plan = SessionPlan {
        user_id: s.user_id,
        item_id: s.item_id,
        domain: s.domain,
        enter: s.enter,
        duration: s.duration,
        occurrences: Vec::new(),
    };
    for b in &s.behaviors {
        if b.delay <= s.duration {
            plan.occurrences
                .push((s.enter + b.delay, b.behavior, b.value));
        }
    }
    plan.push_derived(config);
    plan
}

/// Run the simulation. Identical (config, seed) gives a bit-identical log.
pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let rooms = generate_rooms(config)?;
    let videos = generate_videos(config);

    let mut plans: Vec<SessionPlan> = Vec::new();
    if let Some(scripted) = &config.scripted_sessions {
        for s in scripted {
            plans.push(scripted_plan(config, s));
        }
    } else {
        for user_idx in 0..config.num_users {
            let user_id = user_idx + 1;
            let mut schedule = substream(config.seed, &[TAG_SCHEDULE, user_id]);
            let mut t = 0.0_f64;
            let mut session_idx: u64 = 0;
            loop {
                let gap = config.session_gap.sample(&mut schedule);
                let enter = t + gap;
                if enter >= config.horizon {
                    break;
                }
                let is_live = schedule.random::<f64>() < config.live_fraction;
                // Item choice draws happen unconditionally to keep the
                // schedule stream independent of catalog contents.
                let room_pick = schedule.random_range(0..rooms.len().max(1) as u64);
                let video_pick = schedule.random_range(0..videos.len().max(1) as u64);

                let mut session_rng =
                    substream(config.seed, &[TAG_SESSION, user_id, session_idx]);
                session_idx += 1;

                let (item_id, domain, duration, attractiveness) = if is_live && !rooms.is_empty() {
                    let room = &rooms[room_pick as usize];
                    let duration = config.live_watch_duration.sample(&mut session_rng);
                    if enter < room.start_time || enter > room.end_time {
                        t = enter;
                        continue;
                    }
                    let attr = room.attractiveness(enter)?;
                    (room.room_id, Domain::Live, duration, attr)
                } else if !is_live && !videos.is_empty() {
                    let video = &videos[video_pick as usize];
                    let duration = config.video_watch_duration.sample(&mut session_rng);
                    (
                        video.video_id,
                        Domain::ShortVideo,
                        duration,
                        video.attractiveness,
                    )
                } else {
                    t = enter;
                    continue;
                };

                plans.push(sample_session(
                    config,
                    &mut session_rng,
                    user_id,
                    item_id,
                    domain,
                    enter,
                    duration,
                    attractiveness,
                ));
                t = enter + duration;
            }
        }
    }

    // Stamp ids in generation order, then order the log by (ts, event_id).
    let mut events: Vec<InteractionEvent> = Vec::new();
    let mut next_event_id: EventId = 1;
    for (i, plan) in plans.iter_mut().enumerate() {
        let session_id = (i + 1) as SessionId;
        let exit_ts = plan.enter + plan.duration;
        let mut in_session: Vec<(f64, BehaviorKind, Option<f64>)> =
            vec![(plan.enter, BehaviorKind::Impression, None)];
        in_session.append(&mut plan.occurrences);
        in_session.push((exit_ts, BehaviorKind::Exit, None));
        in_session.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then_with(|| a.1.cmp(&b.1))
        });
        for (ts, behavior, value) in in_session {
            events.push(InteractionEvent {
                event_id: next_event_id,
                user_id: plan.user_id,
                item_id: plan.item_id,
                domain: plan.domain,
                behavior,
                ts,
                session_id,
                value,
            });
            next_event_id += 1;
        }
    }
    events.sort_by(|a, b| {
        a.ts.partial_cmp(&b.ts)
            .unwrap()
            .then_with(|| a.event_id.cmp(&b.event_id))
    });

    Ok(SimOutput {
        events,
        rooms,
        videos,
    })
}

/// Ground-truth attractiveness rows (room_id, t, attractiveness) on the grid.
pub fn ground_truth_series(rooms: &[RoomState], horizon: f64, grid: f64) -> Vec<(ItemId, f64, f64)> {
    let mut rows = Vec::new();
    let steps = (horizon / grid).floor() as u64;
    for room in rooms {
        for k in 0..=steps {
            let t = k as f64 * grid;
            if t < room.start_time || t > room.end_time {
                continue;
            }
            rows.push((room.room_id, t, room.attractiveness(t).unwrap()));
        }
    }
    rows
}

/// Group a sorted event log into sessions, validating per-session structure.
pub fn group_sessions(events: &[InteractionEvent]) -> Result<Vec<SessionRecord>> {
    let mut by_session: BTreeMap<SessionId, Vec<InteractionEvent>> = BTreeMap::new();
    for e in events {
        by_session.entry(e.session_id).or_default().push(e.clone());
    }
    let mut sessions = Vec::with_capacity(by_session.len());
    for (session_id, mut evs) in by_session {
        evs.sort_by(|a, b| {
            a.ts.partial_cmp(&b.ts)
                .unwrap()
                .then_with(|| a.event_id.cmp(&b.event_id))
        });
        let exits: Vec<&InteractionEvent> = evs
            .iter()
            .filter(|e| e.behavior == BehaviorKind::Exit)
            .collect();
        if exits.len() != 1 {
            return Err(Error::MalformedLog(format!(
                "session {} has {} exit events, expected exactly one",
                session_id,
                exits.len()
            )));
        }
        let exit_ts = exits[0].ts;
        let enter = evs[0].ts;
        if evs.iter().any(|e| e.ts > exit_ts) {
            return Err(Error::MalformedLog(format!(
                "session {} has events after its exit",
                session_id
            )));
        }
        if evs.iter().any(|e| e.ts < enter) {
            return Err(Error::MalformedLog(format!(
                "session {} has events before its enter",
                session_id
            )));
        }
        let first = &evs[0];
        if evs
            .iter()
            .any(|e| e.user_id != first.user_id || e.item_id != first.item_id)
        {
            return Err(Error::MalformedLog(format!(
                "session {} mixes users or items",
                session_id
            )));
        }
        sessions.push(SessionRecord {
            session_id,
            user_id: first.user_id,
            room_id: first.item_id,
            domain: first.domain,
            enter,
            exit: exit_ts,
            events: evs,
        });
    }
    Ok(sessions)
}

/// Per-window CTR for one room.
#[derive(Debug, Clone, PartialEq)]
pub struct CtrWindow {
    pub start: f64,
    pub impressions: u64,
    pub clicks: u64,
}

impl CtrWindow {
    /// Undefined (None) when the window saw no impressions.
    pub fn ctr(&self) -> Option<f64> {
        if self.impressions == 0 {
            None
        } else {
            Some(self.clicks as f64 / self.impressions as f64)
        }
    }
}

/// Windowed clicks / impressions for `room_id` over `[0, horizon)`.
pub fn empirical_ctr(
    events: &[InteractionEvent],
    room_id: ItemId,
    window: f64,
    horizon: f64,
) -> Result<Vec<CtrWindow>> {
    if !(window > 0.0) {
        return Err(Error::Config("window must be positive".into()));
    }
    let n = (horizon / window).ceil() as usize;
    let mut windows: Vec<CtrWindow> = (0..n)
        .map(|k| CtrWindow {
            start: k as f64 * window,
            impressions: 0,
            clicks: 0,
        })
        .collect();
    for e in events {
        if e.item_id != room_id || e.ts < 0.0 || e.ts >= horizon {
            continue;
        }
        let k = (e.ts / window).floor() as usize;
        if k >= windows.len() {
            continue;
        }
        match e.behavior {
            BehaviorKind::Impression => windows[k].impressions += 1,
            BehaviorKind::Click => windows[k].clicks += 1,
            _ => {}
        }
    }
    Ok(windows)
}
