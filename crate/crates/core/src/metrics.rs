//! Ranking and diagnostics metrics: AUC, user-grouped AUC, the label
//! consistency table, and highlight detection lag.
//!
//! Undefined values (single-class inputs, empty denominators) are explicit
//! `None`, never 0, and serialize as JSON null.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::streaming::{Flow, TrainingSample};
use crate::types::*;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub user_id: UserId,
    pub score: f64,
    pub label: u8,
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half; computed from midranks. `None` on single-class input.
pub fn auc(examples: &[ScoredExample]) -> Option<f64> {
    let positives = examples.iter().filter(|e| e.label == 1).count();
    let negatives = examples.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by(|&a, &b| examples[a].score.partial_cmp(&examples[b].score).unwrap());

    // Midranks over tied score runs.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && examples[order[j]].score == examples[order[i]].score {
            j += 1;
        }
        // Ranks are 1-based; a run [i, j) shares the average rank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if examples[idx].label == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Example-count-weighted mean of per-user AUCs; users lacking both classes
/// are excluded from numerator and denominator. `None` when no user is
/// eligible.
pub fn gauc(examples: &[ScoredExample]) -> Option<f64> {
    let mut by_user: BTreeMap<UserId, Vec<ScoredExample>> = BTreeMap::new();
    for e in examples {
        by_user.entry(e.user_id).or_default().push(e.clone());
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (_, group) in by_user {
        if let Some(a) = auc(&group) {
            let w = group.len() as f64;
            num += w * a;
            den += w;
        }
    }
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub task: TaskKind,
    pub fast_positive_count: u64,
    pub slow_window_positive_count: u64,
    /// None when the slow-window count is zero.
    pub consistency: Option<f64>,
}

/// Per task, the fraction of slow-window-observed positives that were
/// already observed in the fast window. Input is a fast_slow sample stream;
/// fast samples carry the fast-window observations, slow samples the
/// corrections.
pub fn consistency_table(samples: &[TrainingSample]) -> Vec<ConsistencyRow> {
    let mut fast = [0u64; TASK_COUNT];
    let mut slow = [0u64; TASK_COUNT];
    for s in samples {
        match s.flow {
            Flow::Fast => {
                for t in TaskKind::ALL {
                    if s.mask[t.index()] && s.labels[t.index()] == 1 {
                        fast[t.index()] += 1;
                    }
                }
            }
            Flow::Slow => {
                for t in TaskKind::ALL {
                    if s.mask[t.index()] && s.labels[t.index()] == 1 {
                        slow[t.index()] += 1;
                    }
                }
            }
            _ => {}
        }
    }
    TaskKind::ALL
        .iter()
        .map(|&task| {
            let f = fast[task.index()];
            let total = f + slow[task.index()];
            ConsistencyRow {
                task,
                fast_positive_count: f,
                slow_window_positive_count: total,
                consistency: if total == 0 {
                    None
                } else {
                    Some(f as f64 / total as f64)
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    /// Standard deviations above the pre-onset mean that count as detected.
    pub threshold_sigmas: f64,
    /// Length of the pre-onset baseline window, seconds.
    pub baseline_window: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            threshold_sigmas: 2.0,
            baseline_window: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetLag {
    pub onset: f64,
    /// None when the series never crossed the threshold; such onsets
    /// contribute the capped penalty to the mean.
    pub detected_at: Option<f64>,
    pub lag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLag {
    pub per_onset: Vec<OnsetLag>,
    pub mean_lag: f64,
}

/// Mean delay between each onset and the first time the series exceeds its
/// pre-onset mean by `threshold_sigmas` standard deviations. Undetected
/// onsets are charged `horizon_end - onset`.
pub fn detection_lag(
    series: &[(f64, f64)],
    onsets: &[f64],
    horizon_end: f64,
    config: &DetectionConfig,
) -> Result<DetectionLag> {
    if series.is_empty() {
        return Err(Error::Empty("predicted series".into()));
    }
    if onsets.is_empty() {
        return Err(Error::Empty("onset list".into()));
    }
    let mut per_onset = Vec::with_capacity(onsets.len());
    for &onset in onsets {
        let baseline: Vec<f64> = series
            .iter()
            .filter(|(t, _)| *t >= onset - config.baseline_window && *t < onset)
            .map(|(_, v)| *v)
            .collect();
        let (mean, sd) = if baseline.is_empty() {
            (0.0, 0.0)
        } else {
            let m = baseline.iter().sum::<f64>() / baseline.len() as f64;
            let var =
                baseline.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / baseline.len() as f64;
            (m, var.sqrt())
        };
        let threshold = mean + config.threshold_sigmas * sd;
        let detected_at = series
            .iter()
            .find(|(t, v)| *t >= onset && *v > threshold)
            .map(|(t, _)| *t);
        let lag = match detected_at {
            Some(t) => t - onset,
            None => horizon_end - onset,
        };
        per_onset.push(OnsetLag {
            onset,
            detected_at,
            lag,
        });
    }
    let mean_lag = per_onset.iter().map(|o| o.lag).sum::<f64>() / per_onset.len() as f64;
    Ok(DetectionLag {
        per_onset,
        mean_lag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, SimConfig};
    use crate::streaming::{assemble, ReportPolicy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex(user_id: UserId, score: f64, label: u8) -> ScoredExample {
        ScoredExample {
            user_id,
            score,
            label,
        }
    }

    /// Exhaustive pairwise oracle, ties counting one half.
    fn auc_oracle(examples: &[ScoredExample]) -> Option<f64> {
        let pos: Vec<f64> = examples
            .iter()
            .filter(|e| e.label == 1)
            .map(|e| e.score)
            .collect();
        let neg: Vec<f64> = examples
            .iter()
            .filter(|e| e.label == 0)
            .map(|e| e.score)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut acc = 0.0;
        for p in &pos {
            for n in &neg {
                acc += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        Some(acc / (pos.len() * neg.len()) as f64)
    }

    #[test]
    fn auc_hand_cases() {
        let separated = vec![ex(1, 0.9, 1), ex(1, 0.8, 1), ex(1, 0.2, 0), ex(1, 0.1, 0)];
        assert_eq!(auc(&separated), Some(1.0));

        // The six-example fixture: 7/9 concordant pairs.
        let six = vec![
            ex(1, 0.9, 1),
            ex(1, 0.8, 0),
            ex(1, 0.7, 1),
            ex(1, 0.6, 1),
            ex(1, 0.5, 0),
            ex(1, 0.4, 0),
        ];
        let got = auc(&six).unwrap();
        assert!((got - 7.0 / 9.0).abs() < 1e-12);
        assert_eq!(auc(&six), auc_oracle(&six));

        assert_eq!(auc(&[ex(1, 0.5, 1)]), None);
        assert_eq!(auc(&[ex(1, 0.5, 1), ex(1, 0.2, 1)]), None);
    }

    #[test]
    fn auc_random_scores_hover_at_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let examples: Vec<ScoredExample> = (0..20_000)
            .map(|_| ex(1, rng.random(), rng.random_range(0..2u8) as u8))
            .collect();
        let got = auc(&examples).unwrap();
        assert!((got - 0.5).abs() < 0.02, "{got}");
    }

    #[test]
    fn auc_matches_pairwise_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(2..200usize);
            let examples: Vec<ScoredExample> = (0..n)
                .map(|_| {
                    // Coarse scores force plenty of ties.
                    let score = (rng.random::<f64>() * 8.0).round() / 8.0;
                    ex(1, score, rng.random_range(0..2u8))
                })
                .collect();
            match (auc(&examples), auc_oracle(&examples)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "{a} vs {b}"),
                (None, None) => {}
                (a, b) => panic!("disagree on definedness: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let examples: Vec<ScoredExample> = (0..150)
            .map(|_| ex(1, rng.random::<f64>() * 4.0 - 2.0, rng.random_range(0..2u8)))
            .collect();
        let base = auc(&examples).unwrap();
        let transformed: Vec<ScoredExample> = examples
            .iter()
            .map(|e| ex(e.user_id, (e.score * 3.0).exp(), e.label))
            .collect();
        assert!((auc(&transformed).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn gauc_weighted_mean_and_exclusions() {
        // User 1: AUC 1.0 over 10 examples; user 2: AUC 0.5 over 30.
        let mut examples = Vec::new();
        for i in 0..5 {
            examples.push(ex(1, 0.9 + i as f64 * 0.01, 1));
            examples.push(ex(1, 0.1 + i as f64 * 0.01, 0));
        }
        for _ in 0..15 {
            examples.push(ex(2, 0.5, 1));
            examples.push(ex(2, 0.5, 0));
        }
        let got = gauc(&examples).unwrap();
        assert!((got - 0.625).abs() < 1e-12, "{got}");

        // Single eligible user falls back to that user's AUC.
        let single = vec![ex(7, 0.8, 1), ex(7, 0.3, 0), ex(9, 0.5, 1)];
        assert_eq!(gauc(&single), auc(&single[..2]));

        // All users single-class: undefined.
        let degenerate = vec![ex(1, 0.8, 1), ex(2, 0.3, 0)];
        assert_eq!(gauc(&degenerate), None);
    }

    #[test]
    fn gauc_uniform_per_user_auc_is_that_auc() {
        // Every user has the same 6-example pattern with AUC 7/9.
        let mut examples = Vec::new();
        for user in 1..=5u64 {
            for (s, l) in [
                (0.9, 1u8),
                (0.8, 0),
                (0.7, 1),
                (0.6, 1),
                (0.5, 0),
                (0.4, 0),
            ] {
                examples.push(ex(user, s, l));
            }
        }
        assert!((gauc(&examples).unwrap() - 7.0 / 9.0).abs() < 1e-12);
    }

    fn scripted_fast_slow_samples() -> Vec<TrainingSample> {
        use crate::sim::InteractionEvent;
        use crate::types::BehaviorKind as B;
        let mut events = Vec::new();
        let mut event_id = 1;
        let mut push = |sid: u64, behavior, ts: f64| {
            events.push(InteractionEvent {
                event_id,
                user_id: sid,
                item_id: 1,
                domain: Domain::Live,
                behavior,
                ts,
                session_id: sid,
                value: None,
            });
            event_id += 1;
        };
        // Four sessions with likes; three inside the fast window.
        for sid in 1..=4u64 {
            let enter = sid as f64 * 10_000.0;
            push(sid, B::Impression, enter);
            let like_delay = if sid == 4 { 1000.0 } else { 100.0 };
            push(sid, B::Like, enter + like_delay);
            push(sid, B::Exit, enter + 2000.0);
        }
        events.sort_by(|a, b| a.ts.partial_cmp(&b.ts).unwrap());
        assemble(&events, &ReportPolicy::fast_slow(300.0, 3600.0)).unwrap()
    }

    #[test]
    fn consistency_table_hand_count() {
        let rows = consistency_table(&scripted_fast_slow_samples());
        let like = rows
            .iter()
            .find(|r| r.task == TaskKind::Like)
            .unwrap();
        assert_eq!(like.fast_positive_count, 3);
        assert_eq!(like.slow_window_positive_count, 4);
        assert_eq!(like.consistency, Some(0.75));

        let gift = rows.iter().find(|r| r.task == TaskKind::Gift).unwrap();
        assert_eq!(gift.consistency, None, "no gifts at all: undefined row");
    }

    #[test]
    fn consistency_all_in_fast_window_is_one() {
        let config = SimConfig {
            num_users: 60,
            num_rooms: 2,
            num_short_videos: 10,
            horizon: 4000.0,
            ..SimConfig::default()
        };
        let out = simulate(&config).unwrap();
        // A slow window barely above the fast one, with every delay shorter
        // than the fast window, leaves nothing for the slow flow.
        let mut cfg_fast = config.clone();
        for p in cfg_fast.behaviors.values_mut() {
            p.delay.shift = 0.5;
            p.delay.mean = 1.0;
        }
        let out_fast = simulate(&cfg_fast).unwrap();
        let samples = assemble(&out_fast.events, &ReportPolicy::fast_slow(300.0, 3600.0)).unwrap();
        for row in consistency_table(&samples) {
            if let Some(c) = row.consistency {
                assert!(c > 0.999, "task {:?}: {c}", row.task);
            }
        }
        drop(out);
    }

    #[test]
    fn consistency_monotone_in_fast_window() {
        let config = SimConfig {
            num_users: 150,
            num_rooms: 3,
            num_short_videos: 10,
            horizon: 8000.0,
            ..SimConfig::default()
        };
        let out = simulate(&config).unwrap();
        let wide = consistency_table(&assemble(&out.events, &ReportPolicy::fast_slow(600.0, 3600.0)).unwrap());
        let narrow = consistency_table(&assemble(&out.events, &ReportPolicy::fast_slow(120.0, 3600.0)).unwrap());
        for (w, n) in wide.iter().zip(&narrow) {
            if let (Some(cw), Some(cn)) = (w.consistency, n.consistency) {
                assert!(
                    cn <= cw + 1e-12,
                    "shrinking the fast window must not raise consistency ({:?}: {cn} vs {cw})",
                    w.task
                );
            }
        }
    }

    #[test]
    fn detection_lag_shifted_copy_and_flat_series() {
        // Ground truth jumps at t = 1000; prediction is the same shape
        // shifted 120 s later.
        let grid: Vec<f64> = (0..200).map(|k| k as f64 * 30.0).collect();
        let truth: Vec<(f64, f64)> = grid
            .iter()
            .map(|&t| (t, if t >= 1000.0 { 0.8 } else { 0.1 }))
            .collect();
        let shifted: Vec<(f64, f64)> = grid
            .iter()
            .map(|&t| (t, if t >= 1120.0 { 0.8 } else { 0.1 }))
            .collect();
        let config = DetectionConfig::default();
        let lag = detection_lag(&shifted, &[1000.0], 6000.0, &config).unwrap();
        // First grid point at or after 1120.
        assert!((lag.mean_lag - 140.0).abs() < 30.0 + 1e-9, "{}", lag.mean_lag);
        assert!(lag.per_onset[0].detected_at.is_some());

        let flat: Vec<(f64, f64)> = grid.iter().map(|&t| (t, 0.3)).collect();
        let lag = detection_lag(&flat, &[1000.0], 6000.0, &config).unwrap();
        assert_eq!(lag.per_onset[0].detected_at, None);
        assert_eq!(lag.mean_lag, 5000.0, "capped at horizon end");
        drop(truth);
    }

    #[test]
    fn detection_lag_rejects_empty_inputs() {
        let config = DetectionConfig::default();
        assert!(detection_lag(&[], &[1.0], 10.0, &config).is_err());
        assert!(detection_lag(&[(0.0, 0.1)], &[], 10.0, &config).is_err());
    }
}
