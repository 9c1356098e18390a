//! Shared identifiers and behavior vocabulary used across the pipeline.

use serde::{Deserialize, Serialize};

pub type UserId = u64;
pub type ItemId = u64;
pub type AuthorId = u64;
pub type SessionId = u64;
pub type EventId = u64;

/// Which service surface an interaction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Live,
    ShortVideo,
}

/// The raw behaviors a session can contain.
///
/// `impression` and `exit` are structural (one each per session); the rest
/// are the learnable task behaviors. `effective_view` and `long_view` are
/// derived from watch duration, never sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    Impression,
    Click,
    EffectiveView,
    LongView,
    Like,
    Comment,
    Gift,
    Exit,
}

impl BehaviorKind {
    pub fn name(self) -> &'static str {
        match self {
            BehaviorKind::Impression => "impression",
            BehaviorKind::Click => "click",
            BehaviorKind::EffectiveView => "effective_view",
            BehaviorKind::LongView => "long_view",
            BehaviorKind::Like => "like",
            BehaviorKind::Comment => "comment",
            BehaviorKind::Gift => "gift",
            BehaviorKind::Exit => "exit",
        }
    }
}

/// The per-behavior prediction tasks: `BehaviorKind` minus impression/exit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Click,
    EffectiveView,
    LongView,
    Like,
    Comment,
    Gift,
}

pub const TASK_COUNT: usize = 6;

impl TaskKind {
    pub const ALL: [TaskKind; TASK_COUNT] = [
        TaskKind::Click,
        TaskKind::EffectiveView,
        TaskKind::LongView,
        TaskKind::Like,
        TaskKind::Comment,
        TaskKind::Gift,
    ];

    pub fn index(self) -> usize {
        match self {
            TaskKind::Click => 0,
            TaskKind::EffectiveView => 1,
            TaskKind::LongView => 2,
            TaskKind::Like => 3,
            TaskKind::Comment => 4,
            TaskKind::Gift => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Click => "click",
            TaskKind::EffectiveView => "effective_view",
            TaskKind::LongView => "long_view",
            TaskKind::Like => "like",
            TaskKind::Comment => "comment",
            TaskKind::Gift => "gift",
        }
    }

    pub fn from_name(name: &str) -> Option<TaskKind> {
        TaskKind::ALL.iter().copied().find(|t| t.name() == name)
    }

    /// The task a positive behavior counts toward, if any.
    pub fn from_behavior(behavior: BehaviorKind) -> Option<TaskKind> {
        match behavior {
            BehaviorKind::Click => Some(TaskKind::Click),
            BehaviorKind::EffectiveView => Some(TaskKind::EffectiveView),
            BehaviorKind::LongView => Some(TaskKind::LongView),
            BehaviorKind::Like => Some(TaskKind::Like),
            BehaviorKind::Comment => Some(TaskKind::Comment),
            BehaviorKind::Gift => Some(TaskKind::Gift),
            BehaviorKind::Impression | BehaviorKind::Exit => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_indices_match_all_order() {
        for (i, task) in TaskKind::ALL.iter().enumerate() {
            assert_eq!(task.index(), i);
            assert_eq!(TaskKind::from_name(task.name()), Some(*task));
        }
    }

    #[test]
    fn structural_behaviors_have_no_task() {
        assert_eq!(TaskKind::from_behavior(BehaviorKind::Impression), None);
        assert_eq!(TaskKind::from_behavior(BehaviorKind::Exit), None);
        assert_eq!(
            TaskKind::from_behavior(BehaviorKind::Gift),
            Some(TaskKind::Gift)
        );
    }
}
