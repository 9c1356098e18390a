//! Multi-task CTR model: per-field embedding tables feeding a shared tanh
//! trunk with one linear tower per task, sigmoid outputs, and optional
//! target-attention features over retrieved history sequences.
//!
//! The forward/backward passes are hand-rolled; every gradient is checked
//! against central finite differences in the test suites.

mod losses;
mod train;

pub use losses::*;
pub use train::*;

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::rng::substream;
use crate::seq::{
    esu_attention_backward, esu_target_attention, SeqSlot, SequenceBundle,
};
use crate::types::*;

const TAG_EMBED: u64 = 101;
const TAG_TRUNK: u64 = 102;
const TAG_TOWER: u64 = 103;
const TAG_ATTENTION: u64 = 104;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    User,
    Item,
    Author,
    Category,
}

pub const FIELD_COUNT: usize = 4;

impl FieldKind {
    pub const ALL: [FieldKind; FIELD_COUNT] = [
        FieldKind::User,
        FieldKind::Item,
        FieldKind::Author,
        FieldKind::Category,
    ];

    pub fn index(self) -> usize {
        match self {
            FieldKind::User => 0,
            FieldKind::Item => 1,
            FieldKind::Author => 2,
            FieldKind::Category => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::User => "user",
            FieldKind::Item => "item",
            FieldKind::Author => "author",
            FieldKind::Category => "category",
        }
    }
}

/// Input features for one prediction: one id per field, optional dense
/// values, and an optional bundle of retrieved history sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub ids: [(FieldKind, u64); FIELD_COUNT],
    pub dense: Vec<f64>,
    pub bundle: Option<SequenceBundle>,
}

impl FeatureVector {
    pub fn new(user: UserId, item: ItemId, author: AuthorId, category: u64) -> Self {
        FeatureVector {
            ids: [
                (FieldKind::User, user),
                (FieldKind::Item, item),
                (FieldKind::Author, author),
                (FieldKind::Category, category),
            ],
            dense: Vec::new(),
            bundle: None,
        }
    }

    pub fn with_bundle(mut self, bundle: SequenceBundle) -> Self {
        self.bundle = Some(bundle);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dense_dim: usize,
    pub att_dim: usize,
    /// Which retrieved sequences feed the trunk; empty disables them.
    pub seq_slots: Vec<SeqSlot>,
    pub logit_clamp: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 16,
            hidden_dim: 32,
            dense_dim: 0,
            att_dim: 16,
            seq_slots: Vec::new(),
            logit_clamp: 15.0,
            init_scale: 0.1,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn with_all_sequences(mut self) -> Self {
        self.seq_slots = SeqSlot::ALL.to_vec();
        self
    }

    pub fn uses_sequences(&self) -> bool {
        !self.seq_slots.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        FIELD_COUNT * self.embed_dim + self.dense_dim + self.seq_slots.len() * self.att_dim
    }

    /// Candidate side: item + author + category embeddings concatenated.
    pub fn candidate_dim(&self) -> usize {
        3 * self.embed_dim
    }
}

/// One embedding table with lazily created rows. Unknown ids resolve to a
/// shared all-zero out-of-vocabulary row at prediction time; training
/// creates rows on first touch with values derived only from
/// (seed, field, id), so vocabulary growth order never matters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub field: FieldKind,
    pub dim: usize,
    seed: u64,
    init_scale: f64,
    rows: BTreeMap<u64, Vec<f64>>,
    oov: Vec<f64>,
}

impl EmbeddingTable {
    fn new(field: FieldKind, dim: usize, seed: u64, init_scale: f64) -> Self {
        EmbeddingTable {
            field,
            dim,
            seed,
            init_scale,
            rows: BTreeMap::new(),
            oov: vec![0.0; dim],
        }
    }

    fn init_values(&self, id: u64) -> Vec<f64> {
        let mut rng = substream(self.seed, &[TAG_EMBED, self.field.index() as u64, id]);
        (0..self.dim)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * self.init_scale)
            .collect()
    }

    pub fn lookup(&self, id: u64) -> &[f64] {
        self.rows.get(&id).map(|v| v.as_slice()).unwrap_or(&self.oov)
    }

    pub fn ensure_row(&mut self, id: u64) {
        if !self.rows.contains_key(&id) {
            let values = self.init_values(id);
            self.rows.insert(id, values);
        }
    }

    pub fn get_row(&self, id: u64) -> Option<&Vec<f64>> {
        self.rows.get(&id)
    }

    pub fn row_mut(&mut self, id: u64) -> &mut Vec<f64> {
        self.ensure_row(id);
        self.rows.get_mut(&id).unwrap()
    }

    pub fn row_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.rows.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub w: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub user_table: EmbeddingTable,
    pub item_table: EmbeddingTable,
    pub author_table: EmbeddingTable,
    pub category_table: EmbeddingTable,
    pub trunk_w: Mat,
    pub trunk_b: Vec<f64>,
    pub towers: Vec<Tower>,
    pub attention: Option<AttentionParams>,
}

fn init_mat(seed: u64, tags: &[u64], rows: usize, cols: usize, scale: f64) -> Mat {
    let mut rng = substream(seed, tags);
    Mat::from_fn(rows, cols, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * scale)
}

impl ModelParams {
    pub fn new(config: ModelConfig) -> Self {
        let d = config.embed_dim;
        let seed = config.seed;
        let scale = config.init_scale;
        let input_dim = config.input_dim();
        let trunk_w = init_mat(seed, &[TAG_TRUNK, 0], config.hidden_dim, input_dim, scale);
        let trunk_b = vec![0.0; config.hidden_dim];
        let towers = (0..TASK_COUNT)
            .map(|t| {
                let mut rng = substream(seed, &[TAG_TOWER, t as u64]);
                Tower {
                    w: (0..config.hidden_dim)
                        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
                        .collect(),
                    b: 0.0,
                }
            })
            .collect();
        let attention = if config.uses_sequences() {
            Some(AttentionParams {
                wq: init_mat(seed, &[TAG_ATTENTION, 0], 3 * d, config.att_dim, scale),
                wk: init_mat(seed, &[TAG_ATTENTION, 1], d, config.att_dim, scale),
                wv: init_mat(seed, &[TAG_ATTENTION, 2], d, config.att_dim, scale),
            })
        } else {
            None
        };
        ModelParams {
            user_table: EmbeddingTable::new(FieldKind::User, d, seed, scale),
            item_table: EmbeddingTable::new(FieldKind::Item, d, seed, scale),
            author_table: EmbeddingTable::new(FieldKind::Author, d, seed, scale),
            category_table: EmbeddingTable::new(FieldKind::Category, d, seed, scale),
            trunk_w,
            trunk_b,
            towers,
            attention,
            config,
        }
    }

    pub fn table(&self, field: FieldKind) -> &EmbeddingTable {
        match field {
            FieldKind::User => &self.user_table,
            FieldKind::Item => &self.item_table,
            FieldKind::Author => &self.author_table,
            FieldKind::Category => &self.category_table,
        }
    }

    pub fn table_mut(&mut self, field: FieldKind) -> &mut EmbeddingTable {
        match field {
            FieldKind::User => &mut self.user_table,
            FieldKind::Item => &mut self.item_table,
            FieldKind::Author => &mut self.author_table,
            FieldKind::Category => &mut self.category_table,
        }
    }

    /// Candidate-side vector for attention queries.
    pub fn candidate_embedding(&self, features: &FeatureVector) -> Vec<f64> {
        let item = self.item_table.lookup(features.ids[FieldKind::Item.index()].1);
        let author = self
            .author_table
            .lookup(features.ids[FieldKind::Author.index()].1);
        let category = self
            .category_table
            .lookup(features.ids[FieldKind::Category.index()].1);
        let mut out = Vec::with_capacity(3 * self.config.embed_dim);
        out.extend_from_slice(item);
        out.extend_from_slice(author);
        out.extend_from_slice(category);
        out
    }
}

/// Per-task probabilities, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub per_task: [f64; TASK_COUNT],
}

impl Prediction {
    pub fn get(&self, task: TaskKind) -> f64 {
        self.per_task[task.index()]
    }
}

/// Forward-pass cache kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub prediction: Prediction,
    x: Vec<f64>,
    h: Vec<f64>,
    /// Raw (pre-clamp) logits; clamped entries pass no gradient.
    logits_raw: [f64; TASK_COUNT],
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Forward pass; errors name the offending tower on non-finite output.
pub fn forward(params: &ModelParams, features: &FeatureVector) -> Result<Forward> {
    let config = &params.config;
    if features.dense.len() != config.dense_dim {
        return Err(Error::Dimension(format!(
            "expected {} dense features, got {}",
            config.dense_dim,
            features.dense.len()
        )));
    }
    for (slot, (field, _)) in features.ids.iter().enumerate() {
        if *field != FieldKind::ALL[slot] {
            return Err(Error::Dimension("id fields out of schema order".into()));
        }
    }

    let mut x = Vec::with_capacity(config.input_dim());
    for (field, id) in &features.ids {
        x.extend_from_slice(params.table(*field).lookup(*id));
    }
    x.extend_from_slice(&features.dense);
    if config.uses_sequences() {
        let att = params.attention.as_ref().expect("attention params");
        let candidate = params.candidate_embedding(features);
        for slot in &config.seq_slots {
            match features.bundle.as_ref() {
                Some(bundle) => {
                    let out =
                        esu_target_attention(&candidate, bundle.get(*slot), &att.wq, &att.wk, &att.wv)?;
                    x.extend_from_slice(&out.out);
                }
                None => x.extend(std::iter::repeat(0.0).take(config.att_dim)),
            }
        }
    }

    let h_pre = params.trunk_w.matvec(&x);
    let h: Vec<f64> = h_pre
        .iter()
        .zip(&params.trunk_b)
        .map(|(v, b)| (v + b).tanh())
        .collect();

    let mut logits_raw = [0.0; TASK_COUNT];
    let mut per_task = [0.0; TASK_COUNT];
    for task in TaskKind::ALL {
        let tower = &params.towers[task.index()];
        let z = dot(&tower.w, &h) + tower.b;
        if !z.is_finite() {
            return Err(Error::Numeric {
                place: format!("tower {}", task.name()),
                message: "non-finite logit".into(),
            });
        }
        logits_raw[task.index()] = z;
        per_task[task.index()] = sigmoid(z.clamp(-config.logit_clamp, config.logit_clamp));
    }

    Ok(Forward {
        prediction: Prediction { per_task },
        x,
        h,
        logits_raw,
    })
}

/// Predict per-task probabilities. Deterministic for fixed params.
pub fn predict(params: &ModelParams, features: &FeatureVector) -> Result<Prediction> {
    forward(params, features).map(|f| f.prediction)
}

/// Accumulated gradients mirroring the parameter layout. Embedding-row
/// gradients are sparse, keyed by (field, id).
#[derive(Debug, Clone)]
pub struct GradBuf {
    pub rows: BTreeMap<(FieldKind, u64), Vec<f64>>,
    pub trunk_w: Mat,
    pub trunk_b: Vec<f64>,
    pub towers: Vec<Tower>,
    pub attention: Option<AttentionParams>,
}

impl GradBuf {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradBuf {
            rows: BTreeMap::new(),
            trunk_w: Mat::zeros(params.trunk_w.rows, params.trunk_w.cols),
            trunk_b: vec![0.0; params.trunk_b.len()],
            towers: params
                .towers
                .iter()
                .map(|t| Tower {
                    w: vec![0.0; t.w.len()],
                    b: 0.0,
                })
                .collect(),
            attention: params.attention.as_ref().map(|a| AttentionParams {
                wq: Mat::zeros(a.wq.rows, a.wq.cols),
                wk: Mat::zeros(a.wk.rows, a.wk.cols),
                wv: Mat::zeros(a.wv.rows, a.wv.cols),
            }),
        }
    }

    pub fn add_row(&mut self, field: FieldKind, id: u64, grad: &[f64]) {
        let slot = self
            .rows
            .entry((field, id))
            .or_insert_with(|| vec![0.0; grad.len()]);
        for (s, g) in slot.iter_mut().zip(grad) {
            *s += g;
        }
    }

    pub fn sq_norm(&self) -> f64 {
        let mut acc = 0.0;
        for v in self.rows.values() {
            acc += dot(v, v);
        }
        acc += dot(&self.trunk_w.data, &self.trunk_w.data);
        acc += dot(&self.trunk_b, &self.trunk_b);
        for t in &self.towers {
            acc += dot(&t.w, &t.w) + t.b * t.b;
        }
        if let Some(a) = &self.attention {
            acc += dot(&a.wq.data, &a.wq.data);
            acc += dot(&a.wk.data, &a.wk.data);
            acc += dot(&a.wv.data, &a.wv.data);
        }
        acc
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.rows.values_mut() {
            for x in v.iter_mut() {
                *x *= s;
            }
        }
        for x in self.trunk_w.data.iter_mut() {
            *x *= s;
        }
        for x in self.trunk_b.iter_mut() {
            *x *= s;
        }
        for t in self.towers.iter_mut() {
            for x in t.w.iter_mut() {
                *x *= s;
            }
            t.b *= s;
        }
        if let Some(a) = self.attention.as_mut() {
            for m in [&mut a.wq, &mut a.wk, &mut a.wv] {
                for x in m.data.iter_mut() {
                    *x *= s;
                }
            }
        }
    }
}

/// Backpropagate `dlogits` (dL/d logit per task) into a gradient buffer.
pub fn backward(
    params: &ModelParams,
    features: &FeatureVector,
    fwd: &Forward,
    dlogits: &[f64; TASK_COUNT],
    grads: &mut GradBuf,
) -> Result<()> {
    let config = &params.config;
    let mut dh = vec![0.0; config.hidden_dim];
    for task in TaskKind::ALL {
        let i = task.index();
        // Clamped logits pass no gradient.
        let dz = if fwd.logits_raw[i].abs() > config.logit_clamp {
            0.0
        } else {
            dlogits[i]
        };
        if dz == 0.0 {
            continue;
        }
        let tower = &params.towers[task.index()];
        let gt = &mut grads.towers[i];
        for (gw, hv) in gt.w.iter_mut().zip(&fwd.h) {
            *gw += dz * hv;
        }
        gt.b += dz;
        for (dhv, wv) in dh.iter_mut().zip(&tower.w) {
            *dhv += dz * wv;
        }
    }

    let dh_pre: Vec<f64> = dh
        .iter()
        .zip(&fwd.h)
        .map(|(d, h)| d * (1.0 - h * h))
        .collect();
    grads.trunk_w.add_outer(&dh_pre, &fwd.x, 1.0);
    for (gb, d) in grads.trunk_b.iter_mut().zip(&dh_pre) {
        *gb += d;
    }
    let dx = params.trunk_w.matvec_t(&dh_pre);

    let d = config.embed_dim;
    let mut offset = 0;
    for (field, id) in &features.ids {
        grads.add_row(*field, *id, &dx[offset..offset + d]);
        offset += d;
    }
    offset += config.dense_dim;

    if config.uses_sequences() {
        if let Some(bundle) = features.bundle.as_ref() {
            let att = params.attention.as_ref().expect("attention params");
            let candidate = params.candidate_embedding(features);
            let mut d_candidate_total = vec![0.0; candidate.len()];
            let mut slot_grads = Vec::new();
            for slot in &config.seq_slots {
                let grad_out = &dx[offset..offset + config.att_dim];
                offset += config.att_dim;
                let seq = bundle.get(*slot);
                if seq.is_all_padding() {
                    continue;
                }
                let ag =
                    esu_attention_backward(&candidate, seq, &att.wq, &att.wk, &att.wv, grad_out)?;
                for (acc, g) in d_candidate_total.iter_mut().zip(&ag.d_candidate) {
                    *acc += g;
                }
                for (item, grad) in seq.items.iter().zip(&ag.d_items) {
                    grads.add_row(FieldKind::Item, item.item_id, grad);
                }
                slot_grads.push(ag);
            }
            let ga = grads.attention.as_mut().expect("attention grads");
            for ag in &slot_grads {
                for (acc, part) in [
                    (&mut ga.wq, &ag.d_wq),
                    (&mut ga.wk, &ag.d_wk),
                    (&mut ga.wv, &ag.d_wv),
                ] {
                    for (a, b) in acc.data.iter_mut().zip(&part.data) {
                        *a += b;
                    }
                }
            }
            // The candidate vector is the concat of item/author/category rows.
            grads.add_row(
                FieldKind::Item,
                features.ids[FieldKind::Item.index()].1,
                &d_candidate_total[0..d],
            );
            grads.add_row(
                FieldKind::Author,
                features.ids[FieldKind::Author.index()].1,
                &d_candidate_total[d..2 * d],
            );
            grads.add_row(
                FieldKind::Category,
                features.ids[FieldKind::Category.index()].1,
                &d_candidate_total[2 * d..3 * d],
            );
        }
    }
    Ok(())
}

/// SGD step: `param -= lr * grad`, with optional global-norm clipping.
/// Embedding rows are created (deterministically) on first touch.
pub fn apply_gradients(params: &mut ModelParams, grads: &GradBuf, lr: f64, clip: Option<f64>) {
    let mut factor = lr;
    if let Some(max_norm) = clip {
        let norm = grads.sq_norm().sqrt();
        if norm > max_norm {
            factor = lr * max_norm / norm;
        }
    }
    for ((field, id), g) in &grads.rows {
        let row = params.table_mut(*field).row_mut(*id);
        for (p, gv) in row.iter_mut().zip(g) {
            *p -= factor * gv;
        }
    }
    for (p, g) in params.trunk_w.data.iter_mut().zip(&grads.trunk_w.data) {
        *p -= factor * g;
    }
    for (p, g) in params.trunk_b.iter_mut().zip(&grads.trunk_b) {
        *p -= factor * g;
    }
    for (tower, g) in params.towers.iter_mut().zip(&grads.towers) {
        for (p, gv) in tower.w.iter_mut().zip(&g.w) {
            *p -= factor * gv;
        }
        tower.b -= factor * g.b;
    }
    if let (Some(a), Some(g)) = (params.attention.as_mut(), grads.attention.as_ref()) {
        for (pm, gm) in [(&mut a.wq, &g.wq), (&mut a.wk, &g.wk), (&mut a.wv, &g.wv)] {
            for (p, gv) in pm.data.iter_mut().zip(&gm.data) {
                *p -= factor * gv;
            }
        }
    }
}

impl ModelParams {
    /// Canonical flat view of every parameter: embedding rows in
    /// (field, id) order, then trunk, towers, attention projections.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for field in FieldKind::ALL {
            let table = self.table(field);
            for id in table.row_ids().collect::<Vec<_>>() {
                out.extend_from_slice(table.get_row(id).unwrap());
            }
        }
        out.extend_from_slice(&self.trunk_w.data);
        out.extend_from_slice(&self.trunk_b);
        for t in &self.towers {
            out.extend_from_slice(&t.w);
            out.push(t.b);
        }
        if let Some(a) = &self.attention {
            out.extend_from_slice(&a.wq.data);
            out.extend_from_slice(&a.wk.data);
            out.extend_from_slice(&a.wv.data);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) over the same row structure.
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let mut pos = 0;
        let mut take = |n: usize| -> Result<std::ops::Range<usize>> {
            if pos + n > flat.len() {
                return Err(Error::Dimension("flat parameter vector too short".into()));
            }
            let r = pos..pos + n;
            pos += n;
            Ok(r)
        };
        for field in FieldKind::ALL {
            let ids: Vec<u64> = self.table(field).row_ids().collect();
            let dim = self.table(field).dim;
            for id in ids {
                let r = take(dim)?;
                self.table_mut(field)
                    .row_mut(id)
                    .copy_from_slice(&flat[r]);
            }
        }
        let r = take(self.trunk_w.data.len())?;
        self.trunk_w.data.copy_from_slice(&flat[r]);
        let r = take(self.trunk_b.len())?;
        self.trunk_b.copy_from_slice(&flat[r]);
        for t in 0..self.towers.len() {
            let n = self.towers[t].w.len();
            let r = take(n)?;
            self.towers[t].w.copy_from_slice(&flat[r]);
            let r = take(1)?;
            self.towers[t].b = flat[r.start];
        }
        if self.attention.is_some() {
            let lens = {
                let a = self.attention.as_ref().unwrap();
                (a.wq.data.len(), a.wk.data.len(), a.wv.data.len())
            };
            let rq = take(lens.0)?;
            let rk = take(lens.1)?;
            let rv = take(lens.2)?;
            let a = self.attention.as_mut().unwrap();
            a.wq.data.copy_from_slice(&flat[rq]);
            a.wk.data.copy_from_slice(&flat[rk]);
            a.wv.data.copy_from_slice(&flat[rv]);
        }
        if pos != flat.len() {
            return Err(Error::Dimension("flat parameter vector too long".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config: ModelConfig,
    rows: BTreeMap<String, Vec<u64>>,
    param_count: usize,
}

/// Checkpoint layout: one JSON header line (schema + row ids), then the
/// flat parameter vector as little-endian f64 bytes. Byte-stable for
/// identical params.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let flat = params.flatten();
    let mut rows = BTreeMap::new();
    for field in FieldKind::ALL {
        rows.insert(
            field.name().to_string(),
            params.table(field).row_ids().collect(),
        );
    }
    let header = CheckpointHeader {
        format: "livectr-checkpoint-v1".into(),
        config: params.config.clone(),
        rows,
        param_count: flat.len(),
    };
    let mut buf = serde_json::to_vec(&header)?;
    buf.push(b'\n');
    for v in &flat {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let data = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let newline = data
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Config("checkpoint missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&data[..newline])?;
    if header.format != "livectr-checkpoint-v1" {
        return Err(Error::Config(format!(
            "unknown checkpoint format {}",
            header.format
        )));
    }
    let mut params = ModelParams::new(header.config);
    for field in FieldKind::ALL {
        if let Some(ids) = header.rows.get(field.name()) {
            for id in ids {
                params.table_mut(field).ensure_row(*id);
            }
        }
    }
    let blob = &data[newline + 1..];
    if blob.len() != header.param_count * 8 {
        return Err(Error::Config(format!(
            "checkpoint blob holds {} bytes, expected {}",
            blob.len(),
            header.param_count * 8
        )));
    }
    let mut flat = Vec::with_capacity(header.param_count);
    let mut rdr = std::io::Cursor::new(blob);
    let mut bytes = [0u8; 8];
    for _ in 0..header.param_count {
        rdr.read_exact(&mut bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        flat.push(f64::from_le_bytes(bytes));
    }
    params.unflatten(&flat)?;
    Ok(params)
}

/// Convenience for manifests: sha256 of the flat parameter vector.
pub fn checkpoint_digest(params: &ModelParams) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for v in params.flatten() {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}
