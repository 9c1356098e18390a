//! Cross-domain interest features: retrieval over long user histories,
//! pooled contrastive alignment, and target-item attention.
//!
//! Five retrieval units select subsequences of a user's history for one
//! candidate live room:
//!
//! * `short` — the most recent short-video items,
//! * `long` — short-video items with the highest embedding dot product
//!   against the candidate,
//! * `aid_hard` — short-video items by the candidate's author,
//! * `live_long` — live items with the highest dot product,
//! * `mixed` — the most recent long-viewed items of either domain.
//!
//! Pools of the mixed sequence anchor a symmetric in-batch InfoNCE that
//! pulls the other four sequence pools toward it. A single-head target-item
//! attention compresses each retrieved sequence into one vector for the
//! ranking model; padding positions are masked from softmax.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, Mat};
use crate::sim::InteractionEvent;
use crate::types::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeqSlot {
    Short,
    Long,
    AidHard,
    LiveLong,
    Mixed,
}

pub const SLOT_COUNT: usize = 5;

impl SeqSlot {
    pub const ALL: [SeqSlot; SLOT_COUNT] = [
        SeqSlot::Short,
        SeqSlot::Long,
        SeqSlot::AidHard,
        SeqSlot::LiveLong,
        SeqSlot::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SeqSlot::Short => "short",
            SeqSlot::Long => "long",
            SeqSlot::AidHard => "aid_hard",
            SeqSlot::LiveLong => "live_long",
            SeqSlot::Mixed => "mixed",
        }
    }
}

/// One consumed item in a user's history, embedding attached at retrieval.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryItem {
    pub item_id: ItemId,
    pub domain: Domain,
    pub author_id: AuthorId,
    pub timestamp: f64,
    pub behaviors: BTreeSet<BehaviorKind>,
    pub embedding: Vec<f64>,
}

/// A retrieved sequence of at most `capacity` items. Positions beyond
/// `items.len()` are padding: zero embeddings that pooling and attention
/// mask out.
#[derive(Debug, Clone, PartialEq)]
pub struct GsuSequence {
    pub items: Vec<HistoryItem>,
    pub capacity: usize,
}

impl GsuSequence {
    pub fn empty(capacity: usize) -> Self {
        GsuSequence {
            items: Vec::new(),
            capacity,
        }
    }

    pub fn valid_len(&self) -> usize {
        self.items.len()
    }

    pub fn is_all_padding(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBundle {
    pub short: GsuSequence,
    pub long: GsuSequence,
    pub aid_hard: GsuSequence,
    pub live_long: GsuSequence,
    pub mixed: GsuSequence,
}

impl SequenceBundle {
    pub fn get(&self, slot: SeqSlot) -> &GsuSequence {
        match slot {
            SeqSlot::Short => &self.short,
            SeqSlot::Long => &self.long,
            SeqSlot::AidHard => &self.aid_hard,
            SeqSlot::LiveLong => &self.live_long,
            SeqSlot::Mixed => &self.mixed,
        }
    }
}

/// Candidate-side features driving the attention query.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateContext {
    /// Concatenated candidate embeddings (item, author, category).
    pub live_side_embedding: Vec<f64>,
    pub author_id: AuthorId,
}

/// Recency order: later timestamp first, higher item id breaking ties.
fn recency_key(item: &HistoryItem) -> (f64, ItemId) {
    (item.timestamp, item.item_id)
}

fn take_most_recent(mut filtered: Vec<HistoryItem>, l: usize) -> GsuSequence {
    filtered.sort_by(|a, b| {
        let (ta, ia) = recency_key(a);
        let (tb, ib) = recency_key(b);
        tb.partial_cmp(&ta).unwrap().then_with(|| ib.cmp(&ia))
    });
    filtered.truncate(l);
    GsuSequence {
        items: filtered,
        capacity: l,
    }
}

/// The ≤L most recent short-video items.
pub fn gsu_recent(history: &[HistoryItem], l: usize) -> GsuSequence {
    take_most_recent(
        history
            .iter()
            .filter(|h| h.domain == Domain::ShortVideo)
            .cloned()
            .collect(),
        l,
    )
}

/// Top-L by dot product with the candidate embedding among domain-filtered
/// items; ties broken by recency, then item id.
pub fn gsu_dot_topk(
    history: &[HistoryItem],
    domain: Option<Domain>,
    candidate: &[f64],
    l: usize,
) -> Result<GsuSequence> {
    let mut scored: Vec<(f64, HistoryItem)> = Vec::new();
    for h in history {
        if let Some(d) = domain {
            if h.domain != d {
                continue;
            }
        }
        if h.embedding.len() != candidate.len() {
            return Err(Error::Dimension(format!(
                "item {} embedding has dim {}, candidate has {}",
                h.item_id,
                h.embedding.len(),
                candidate.len()
            )));
        }
        scored.push((dot(&h.embedding, candidate), h.clone()));
    }
    scored.sort_by(|(sa, a), (sb, b)| {
        sb.partial_cmp(sa)
            .unwrap()
            .then_with(|| {
                let (ta, ia) = recency_key(a);
                let (tb, ib) = recency_key(b);
                tb.partial_cmp(&ta).unwrap().then_with(|| ib.cmp(&ia))
            })
    });
    scored.truncate(l);
    Ok(GsuSequence {
        items: scored.into_iter().map(|(_, h)| h).collect(),
        capacity: l,
    })
}

/// Most recent ≤L short-video items by the given author.
pub fn gsu_hard_author(history: &[HistoryItem], author_id: AuthorId, l: usize) -> GsuSequence {
    take_most_recent(
        history
            .iter()
            .filter(|h| h.domain == Domain::ShortVideo && h.author_id == author_id)
            .cloned()
            .collect(),
        l,
    )
}

/// Most recent ≤L items of either domain carrying a long view.
pub fn gsu_mixed_longview(history: &[HistoryItem], l: usize) -> GsuSequence {
    take_most_recent(
        history
            .iter()
            .filter(|h| h.behaviors.contains(&BehaviorKind::LongView))
            .cloned()
            .collect(),
        l,
    )
}

/// All five retrievals for one (history, candidate) pair.
pub fn build_bundle(
    history: &[HistoryItem],
    candidate_embedding: &[f64],
    candidate_author: AuthorId,
    l: usize,
) -> Result<SequenceBundle> {
    Ok(SequenceBundle {
        short: gsu_recent(history, l),
        long: gsu_dot_topk(history, Some(Domain::ShortVideo), candidate_embedding, l)?,
        aid_hard: gsu_hard_author(history, candidate_author, l),
        live_long: gsu_dot_topk(history, Some(Domain::Live), candidate_embedding, l)?,
        mixed: gsu_mixed_longview(history, l),
    })
}

/// Mean of non-padding embeddings, L2-normalized. `None` marks an invalid
/// pool (all padding, or a zero-norm mean), excluded from contrastive
/// batches.
pub fn pool_l2(seq: &GsuSequence) -> Option<Vec<f64>> {
    if seq.is_all_padding() {
        return None;
    }
    let dim = seq.items[0].embedding.len();
    let mut mean = vec![0.0; dim];
    for item in &seq.items {
        for (m, e) in mean.iter_mut().zip(&item.embedding) {
            *m += e;
        }
    }
    let n = seq.items.len() as f64;
    for m in mean.iter_mut() {
        *m /= n;
    }
    let norm = l2_norm(&mean);
    if norm < 1e-12 {
        return None;
    }
    Some(mean.iter().map(|m| m / norm).collect())
}

/// Gradient of a function of the pooled unit vector with respect to each
/// member embedding: (item_id, d/d embedding) pairs.
pub fn pool_l2_backward(seq: &GsuSequence, grad_unit: &[f64]) -> Vec<(ItemId, Vec<f64>)> {
    if seq.is_all_padding() {
        return Vec::new();
    }
    let dim = seq.items[0].embedding.len();
    let mut mean = vec![0.0; dim];
    for item in &seq.items {
        for (m, e) in mean.iter_mut().zip(&item.embedding) {
            *m += e;
        }
    }
    let n = seq.items.len() as f64;
    for m in mean.iter_mut() {
        *m /= n;
    }
    let norm = l2_norm(&mean);
    if norm < 1e-12 {
        return Vec::new();
    }
    let unit: Vec<f64> = mean.iter().map(|m| m / norm).collect();
    // d unit / d mean = (I - u uᵀ) / ||mean||; d mean / d e_k = I / n.
    let proj = dot(&unit, grad_unit);
    let per_member: Vec<f64> = grad_unit
        .iter()
        .zip(&unit)
        .map(|(g, u)| (g - proj * u) / (norm * n))
        .collect();
    seq.items
        .iter()
        .map(|item| (item.item_id, per_member.clone()))
        .collect()
}

/// Symmetric in-batch InfoNCE between paired unit-vector batches.
///
/// Row i of `anchors` pairs with row i of `others`; all other rows of the
/// opposite batch act as negatives. The loss averages the anchor→other and
/// other→anchor directions.
pub fn contrastive_align(anchors: &[Vec<f64>], others: &[Vec<f64>], tau: f64) -> Result<f64> {
    contrastive_align_with_grad(anchors, others, tau).map(|(loss, _, _)| loss)
}

/// InfoNCE loss plus gradients with respect to both batches.
pub fn contrastive_align_with_grad(
    anchors: &[Vec<f64>],
    others: &[Vec<f64>],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let b = anchors.len();
    if b < 2 {
        return Err(Error::Empty(
            "contrastive batch needs at least two pairs".into(),
        ));
    }
    if others.len() != b {
        return Err(Error::Dimension(format!(
            "anchor batch has {} rows, other batch has {}",
            b,
            others.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let dim = anchors[0].len();
    for v in anchors.iter().chain(others.iter()) {
        if v.len() != dim {
            return Err(Error::Dimension("ragged contrastive batch".into()));
        }
    }

    // Similarity matrix, scaled by temperature.
    let mut sim = Mat::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            sim.set(i, j, dot(&anchors[i], &others[j]) / tau);
        }
    }

    let row_softmax = |m: &Mat, i: usize| -> Vec<f64> {
        let row = m.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    };
    let col_softmax = |m: &Mat, j: usize| -> Vec<f64> {
        let col: Vec<f64> = (0..b).map(|i| m.get(i, j)).collect();
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = col.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    };

    let mut loss = 0.0;
    // dL/dS, accumulated over both directions.
    let mut dsim = Mat::zeros(b, b);
    for i in 0..b {
        let p = row_softmax(&sim, i);
        loss += -p[i].ln();
        for j in 0..b {
            let delta = if i == j { 1.0 } else { 0.0 };
            dsim.set(i, j, dsim.get(i, j) + (p[j] - delta) / (2.0 * b as f64));
        }
    }
    for j in 0..b {
        let p = col_softmax(&sim, j);
        loss += -p[j].ln();
        for i in 0..b {
            let delta = if i == j { 1.0 } else { 0.0 };
            dsim.set(i, j, dsim.get(i, j) + (p[i] - delta) / (2.0 * b as f64));
        }
    }
    loss /= 2.0 * b as f64;

    let mut danchors = vec![vec![0.0; dim]; b];
    let mut dothers = vec![vec![0.0; dim]; b];
    for i in 0..b {
        for j in 0..b {
            let g = dsim.get(i, j) / tau;
            for d in 0..dim {
                danchors[i][d] += g * others[j][d];
                dothers[j][d] += g * anchors[i][d];
            }
        }
    }
    Ok((loss, danchors, dothers))
}

/// Attention output for one (candidate, sequence) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnOutput {
    /// One vector of the attention dimension; zero when `valid` is false.
    pub out: Vec<f64>,
    /// Softmax weights over the non-padding positions.
    pub weights: Vec<f64>,
    /// False when every position was padding.
    pub valid: bool,
}

/// Single-head target-item attention over one retrieved sequence:
/// softmax((c Wq)(E Wk)ᵀ / √d) · (E Wv), padding masked out.
pub fn esu_target_attention(
    candidate: &[f64],
    seq: &GsuSequence,
    wq: &Mat,
    wk: &Mat,
    wv: &Mat,
) -> Result<AttnOutput> {
    let att_dim = wq.cols;
    if wk.cols != att_dim || wv.cols != att_dim {
        return Err(Error::Dimension(
            "projection output dims must agree".into(),
        ));
    }
    if candidate.len() != wq.rows {
        return Err(Error::Dimension(format!(
            "candidate has dim {}, Wq expects {}",
            candidate.len(),
            wq.rows
        )));
    }
    if seq.is_all_padding() {
        return Ok(AttnOutput {
            out: vec![0.0; att_dim],
            weights: Vec::new(),
            valid: false,
        });
    }
    for item in &seq.items {
        if item.embedding.len() != wk.rows {
            return Err(Error::Dimension(format!(
                "item {} embedding has dim {}, Wk expects {}",
                item.item_id,
                item.embedding.len(),
                wk.rows
            )));
        }
    }

    let q = wq.matvec_t(candidate);
    let scale = (att_dim as f64).sqrt();
    let scores: Vec<f64> = seq
        .items
        .iter()
        .map(|item| dot(&q, &wk.matvec_t(&item.embedding)) / scale)
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.into_iter().map(|e| e / z).collect();

    let mut out = vec![0.0; att_dim];
    for (item, w) in seq.items.iter().zip(&weights) {
        let v = wv.matvec_t(&item.embedding);
        for (o, vi) in out.iter_mut().zip(&v) {
            *o += w * vi;
        }
    }
    Ok(AttnOutput {
        out,
        weights,
        valid: true,
    })
}

/// Gradients of the attention output for one sequence.
#[derive(Debug, Clone)]
pub struct AttnGrads {
    pub d_candidate: Vec<f64>,
    /// Parallel to `seq.items`.
    pub d_items: Vec<Vec<f64>>,
    pub d_wq: Mat,
    pub d_wk: Mat,
    pub d_wv: Mat,
}

/// Backward pass of [`esu_target_attention`] given dL/d out.
pub fn esu_attention_backward(
    candidate: &[f64],
    seq: &GsuSequence,
    wq: &Mat,
    wk: &Mat,
    wv: &Mat,
    grad_out: &[f64],
) -> Result<AttnGrads> {
    let att_dim = wq.cols;
    let mut grads = AttnGrads {
        d_candidate: vec![0.0; candidate.len()],
        d_items: vec![vec![0.0; wk.rows]; seq.items.len()],
        d_wq: Mat::zeros(wq.rows, wq.cols),
        d_wk: Mat::zeros(wk.rows, wk.cols),
        d_wv: Mat::zeros(wv.rows, wv.cols),
    };
    if seq.is_all_padding() {
        return Ok(grads);
    }
    let fwd = esu_target_attention(candidate, seq, wq, wk, wv)?;
    let q = wq.matvec_t(candidate);
    let scale = (att_dim as f64).sqrt();
    let keys: Vec<Vec<f64>> = seq
        .items
        .iter()
        .map(|item| wk.matvec_t(&item.embedding))
        .collect();
    let values: Vec<Vec<f64>> = seq
        .items
        .iter()
        .map(|item| wv.matvec_t(&item.embedding))
        .collect();

    // out = Σ α_i v_i
    let dalpha: Vec<f64> = values.iter().map(|v| dot(grad_out, v)).collect();
    for (i, item) in seq.items.iter().enumerate() {
        let coeff = fwd.weights[i];
        // dWv += e_i ⊗ (α_i g); d e_i += Wv (α_i g)
        let scaled: Vec<f64> = grad_out.iter().map(|g| g * coeff).collect();
        grads.d_wv.add_outer(&item.embedding, &scaled, 1.0);
        let de = wv.matvec(&scaled);
        for (d, v) in grads.d_items[i].iter_mut().zip(&de) {
            *d += v;
        }
    }

    // Softmax jacobian: ds_i = α_i (dα_i − Σ_j α_j dα_j)
    let mix: f64 = fwd.weights.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
    let dscores: Vec<f64> = fwd
        .weights
        .iter()
        .zip(&dalpha)
        .map(|(a, d)| a * (d - mix))
        .collect();

    let mut dq = vec![0.0; att_dim];
    for (i, item) in seq.items.iter().enumerate() {
        let ds = dscores[i] / scale;
        for (dqd, k) in dq.iter_mut().zip(&keys[i]) {
            *dqd += ds * k;
        }
        let dk: Vec<f64> = q.iter().map(|qd| qd * ds).collect();
        grads.d_wk.add_outer(&item.embedding, &dk, 1.0);
        let de = wk.matvec(&dk);
        for (d, v) in grads.d_items[i].iter_mut().zip(&de) {
            *d += v;
        }
    }
    grads.d_wq.add_outer(candidate, &dq, 1.0);
    grads.d_candidate = wq.matvec(&dq);
    Ok(grads)
}

/// Wire form of a history entry; embeddings attach at retrieval time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub user_id: UserId,
    pub item_id: ItemId,
    pub domain: Domain,
    pub author_id: AuthorId,
    pub timestamp: f64,
    pub behaviors: BTreeSet<BehaviorKind>,
}

/// In-memory per-user history index; one entry per completed session,
/// ordered by completion time.
#[derive(Debug, Clone, Default)]
pub struct HistoryIndex {
    by_user: BTreeMap<UserId, Vec<HistoryRecord>>,
}

impl HistoryIndex {
    pub fn from_records(records: Vec<HistoryRecord>) -> Self {
        let mut by_user: BTreeMap<UserId, Vec<HistoryRecord>> = BTreeMap::new();
        for r in records {
            by_user.entry(r.user_id).or_default().push(r);
        }
        for list in by_user.values_mut() {
            list.sort_by(|a, b| {
                a.timestamp
                    .partial_cmp(&b.timestamp)
                    .unwrap()
                    .then_with(|| a.item_id.cmp(&b.item_id))
            });
        }
        HistoryIndex { by_user }
    }

    /// Build from an event log; `authors` maps item id to author id.
    pub fn from_events(
        events: &[InteractionEvent],
        authors: &BTreeMap<ItemId, AuthorId>,
    ) -> Result<Self> {
        let sessions = crate::sim::group_sessions(events)?;
        let mut records = Vec::with_capacity(sessions.len());
        for s in sessions {
            let behaviors: BTreeSet<BehaviorKind> =
                s.events.iter().map(|e| e.behavior).collect();
            records.push(HistoryRecord {
                user_id: s.user_id,
                item_id: s.room_id,
                domain: s.domain,
                author_id: authors.get(&s.room_id).copied().unwrap_or(0),
                timestamp: s.exit,
                behaviors,
            });
        }
        Ok(HistoryIndex::from_records(records))
    }

    /// Completed sessions of `user` with timestamp strictly before `as_of`.
    pub fn snapshot(&self, user: UserId, as_of: f64) -> &[HistoryRecord] {
        let Some(list) = self.by_user.get(&user) else {
            return &[];
        };
        let end = list.partition_point(|r| r.timestamp < as_of);
        &list[..end]
    }

    pub fn records(&self) -> impl Iterator<Item = &HistoryRecord> {
        self.by_user.values().flatten()
    }
}
