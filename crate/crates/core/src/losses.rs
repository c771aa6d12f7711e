//! Cosine-similarity kernel, the coarse and fine contrastive objectives with
//! analytic gradients, a toy optimizer that co-trains free embeddings, and
//! the prompt matcher used at test time.

use std::io::BufRead;

use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::forgery_typing::ForgeryType;
use crate::mask_region::RegionName;
use crate::prompting::{CoarseLabel, PromptKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("row {0} is a zero vector")]
    ZeroVector(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("batch needs at least {needed} rows, got {got}")]
    NotEnoughRows { needed: usize, got: usize },
    #[error("label at position {0} is not 0 or 1")]
    BadLabel(usize),
    #[error("non-finite value in batch")]
    NonFinite,
    #[error("loss diverged at step {0}")]
    Divergence(usize),
    #[error("bad embedding record: {0}")]
    Parse(String),
}

const MIN_NORM: f64 = 1e-12;

/// N x D matrix of embedding rows; no row may be (near) zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingBatch {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self, LossError> {
        if data.len() != rows * dim || dim == 0 || rows == 0 {
            return Err(LossError::DimensionMismatch(rows * dim, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LossError::NonFinite);
        }
        let batch = Self { rows, dim, data };
        for i in 0..rows {
            if batch.row_norm(i) <= MIN_NORM {
                return Err(LossError::ZeroVector(i));
            }
        }
        Ok(batch)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn row_norm(&self, i: usize) -> f64 {
        self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Gradient-descent step; fails if a row collapses to zero or a value
    /// stops being finite.
    pub fn apply_step(&mut self, grad: &[f64], lr: f64) -> Result<(), LossError> {
        if grad.len() != self.data.len() {
            return Err(LossError::DimensionMismatch(self.data.len(), grad.len()));
        }
        for (v, g) in self.data.iter_mut().zip(grad) {
            *v -= lr * g;
            if !v.is_finite() {
                return Err(LossError::NonFinite);
            }
        }
        for i in 0..self.rows {
            if self.row_norm(i) <= MIN_NORM {
                return Err(LossError::ZeroVector(i));
            }
        }
        Ok(())
    }

    pub fn random<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Self {
        loop {
            let data: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Ok(batch) = Self::new(rows, dim, data) {
                return batch;
            }
        }
    }
}

/// Row-major similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl SimMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Pairwise cosine similarity between the rows of `u` and `v`.
pub fn cosine_sim(u: &EmbeddingBatch, v: &EmbeddingBatch) -> Result<SimMatrix, LossError> {
    if u.dim != v.dim {
        return Err(LossError::DimensionMismatch(u.dim, v.dim));
    }
    let u_norms: Vec<f64> = (0..u.rows).map(|i| u.row_norm(i)).collect();
    let v_norms: Vec<f64> = (0..v.rows).map(|i| v.row_norm(i)).collect();
    let mut data = Vec::with_capacity(u.rows * v.rows);
    for i in 0..u.rows {
        for j in 0..v.rows {
            let dot: f64 = u.row(i).iter().zip(v.row(j)).map(|(a, b)| a * b).sum();
            data.push((dot / (u_norms[i] * v_norms[j])).clamp(-1.0, 1.0));
        }
    }
    Ok(SimMatrix {
        rows: u.rows,
        cols: v.rows,
        data,
    })
}

/// Training hyperparameters.
#[derive(Debug, Clone, serde::Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct C2FConfig {
    /// Fine-loss weight in the total objective.
    pub phi: f64,
    /// Similarity temperature; logits are `s / tau`.
    pub tau: f64,
    pub coarse_batch: usize,
    pub fine_batch: usize,
}

impl Default for C2FConfig {
    fn default() -> Self {
        Self {
            phi: 0.1,
            tau: 1.0,
            coarse_batch: 32,
            fine_batch: 24,
        }
    }
}

impl C2FConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.phi < 0.0 {
            return Err(format!("phi {} must be >= 0", self.phi));
        }
        if self.tau <= 0.0 {
            return Err(format!("tau {} must be > 0", self.tau));
        }
        Ok(())
    }
}

fn log_softmax_row(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    z.iter().map(|v| v - lse).collect()
}

/// dL/ds contribution folded back through the cosine similarity: given the
/// upstream coefficient for entry (i, j), accumulate into both row gradients.
fn backprop_cosine(
    u: &EmbeddingBatch,
    v: &EmbeddingBatch,
    sims: &SimMatrix,
    coeff: impl Fn(usize, usize) -> f64,
    grad_u: &mut [f64],
    grad_v: &mut [f64],
) {
    let u_norms: Vec<f64> = (0..u.rows).map(|i| u.row_norm(i)).collect();
    let v_norms: Vec<f64> = (0..v.rows).map(|i| v.row_norm(i)).collect();
    for i in 0..u.rows {
        for j in 0..v.rows {
            let c = coeff(i, j);
            if c == 0.0 {
                continue;
            }
            let s = sims.get(i, j);
            let (nu, nv) = (u_norms[i], v_norms[j]);
            let ur = u.row(i);
            let vr = v.row(j);
            for k in 0..u.dim {
                grad_u[i * u.dim + k] += c * (vr[k] / (nu * nv) - s * ur[k] / (nu * nu));
                grad_v[j * v.dim + k] += c * (ur[k] / (nu * nv) - s * vr[k] / (nv * nv));
            }
        }
    }
}

/// Coarse loss value and gradients.
#[derive(Debug, Clone)]
pub struct CoarseLossResult {
    pub loss: f64,
    pub grad_visual: Vec<f64>,
    pub grad_text: Vec<f64>,
}

/// Softmax cross-entropy over the two coarse prompt similarities.
/// Row 0 of `text` is the real-prompt feature, row 1 the fake-prompt feature;
/// labels are 0 (real) or 1 (fake).
pub fn coarse_loss(
    visual: &EmbeddingBatch,
    text: &EmbeddingBatch,
    labels: &[u8],
    cfg: &C2FConfig,
) -> Result<CoarseLossResult, LossError> {
    if text.rows != 2 {
        return Err(LossError::NotEnoughRows {
            needed: 2,
            got: text.rows,
        });
    }
    if labels.len() != visual.rows {
        return Err(LossError::DimensionMismatch(visual.rows, labels.len()));
    }
    if let Some(pos) = labels.iter().position(|&y| y > 1) {
        return Err(LossError::BadLabel(pos));
    }
    let sims = cosine_sim(visual, text)?;
    let b = visual.rows;
    let mut loss = 0.0;
    // dL/dz, flattened row-major
    let mut dz = vec![0.0f64; b * 2];
    for i in 0..b {
        let z = [sims.get(i, 0) / cfg.tau, sims.get(i, 1) / cfg.tau];
        let logp = log_softmax_row(&z);
        let y = labels[i] as usize;
        loss -= logp[y];
        for j in 0..2 {
            dz[i * 2 + j] = (logp[j].exp() - if j == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    loss /= b as f64;

    let mut grad_visual = vec![0.0; visual.data.len()];
    let mut grad_text = vec![0.0; text.data.len()];
    backprop_cosine(
        visual,
        text,
        &sims,
        |i, j| dz[i * 2 + j] / cfg.tau,
        &mut grad_visual,
        &mut grad_text,
    );
    Ok(CoarseLossResult {
        loss,
        grad_visual,
        grad_text,
    })
}

/// Fine loss value and gradients.
#[derive(Debug, Clone)]
pub struct FineLossResult {
    pub loss: f64,
    pub grad_visual: Vec<f64>,
    pub grad_text: Vec<f64>,
}

/// Symmetric softmax cross-entropy over the N x N similarity matrix of
/// paired visual/text rows: the mean of the image-to-text and text-to-image
/// diagonal cross-entropies.
pub fn fine_loss(
    visual: &EmbeddingBatch,
    text: &EmbeddingBatch,
    cfg: &C2FConfig,
) -> Result<FineLossResult, LossError> {
    if visual.rows != text.rows {
        return Err(LossError::DimensionMismatch(visual.rows, text.rows));
    }
    if visual.rows < 2 {
        return Err(LossError::NotEnoughRows {
            needed: 2,
            got: visual.rows,
        });
    }
    let n = visual.rows;
    let sims = cosine_sim(visual, text)?;
    let z: Vec<f64> = sims.data().iter().map(|s| s / cfg.tau).collect();

    let mut loss = 0.0;
    let mut dz = vec![0.0f64; n * n];
    // image -> text (rows)
    for i in 0..n {
        let logp = log_softmax_row(&z[i * n..(i + 1) * n]);
        loss -= logp[i];
        for j in 0..n {
            dz[i * n + j] += (logp[j].exp() - if i == j { 1.0 } else { 0.0 }) / (2.0 * n as f64);
        }
    }
    // text -> image (columns)
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| z[i * n + j]).collect();
        let logp = log_softmax_row(&col);
        loss -= logp[j];
        for i in 0..n {
            dz[i * n + j] += (logp[i].exp() - if i == j { 1.0 } else { 0.0 }) / (2.0 * n as f64);
        }
    }
    loss /= 2.0 * n as f64;

    let mut grad_visual = vec![0.0; visual.data.len()];
    let mut grad_text = vec![0.0; text.data.len()];
    backprop_cosine(
        visual,
        text,
        &sims,
        |i, j| dz[i * n + j] / cfg.tau,
        &mut grad_visual,
        &mut grad_text,
    );
    Ok(FineLossResult {
        loss,
        grad_visual,
        grad_text,
    })
}

/// Combined objective `L = L_c + phi * L_f` with all four gradients.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub coarse: f64,
    pub fine: f64,
    pub total: f64,
    pub grad_coarse_visual: Vec<f64>,
    pub grad_coarse_text: Vec<f64>,
    pub grad_fine_visual: Vec<f64>,
    pub grad_fine_text: Vec<f64>,
}

pub fn total_loss(
    coarse_visual: &EmbeddingBatch,
    coarse_text: &EmbeddingBatch,
    labels: &[u8],
    fine_visual: &EmbeddingBatch,
    fine_text: &EmbeddingBatch,
    cfg: &C2FConfig,
) -> Result<LossReport, LossError> {
    let c = coarse_loss(coarse_visual, coarse_text, labels, cfg)?;
    let f = fine_loss(fine_visual, fine_text, cfg)?;
    let scale = |g: &[f64]| g.iter().map(|v| v * cfg.phi).collect::<Vec<f64>>();
    Ok(LossReport {
        coarse: c.loss,
        fine: f.loss,
        total: c.loss + cfg.phi * f.loss,
        grad_coarse_visual: c.grad_visual,
        grad_coarse_text: c.grad_text,
        grad_fine_visual: scale(&f.grad_visual),
        grad_fine_text: scale(&f.grad_text),
    })
}

/// Free-embedding toy problem for exercising the objectives end to end.
#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub coarse_visual: EmbeddingBatch,
    pub coarse_labels: Vec<u8>,
    pub coarse_text: EmbeddingBatch,
    pub fine_visual: EmbeddingBatch,
    pub fine_text: EmbeddingBatch,
}

impl ToyDataset {
    pub fn random<R: Rng>(coarse_batch: usize, fine_batch: usize, dim: usize, rng: &mut R) -> Self {
        let coarse_labels = (0..coarse_batch).map(|_| rng.random_range(0..2u8)).collect();
        Self {
            coarse_visual: EmbeddingBatch::random(coarse_batch, dim, rng),
            coarse_labels,
            coarse_text: EmbeddingBatch::random(2, dim, rng),
            fine_visual: EmbeddingBatch::random(fine_batch, dim, rng),
            fine_text: EmbeddingBatch::random(fine_batch, dim, rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CotrainOutcome {
    pub dataset: ToyDataset,
    /// Total loss before each step, plus the final value (`steps + 1` entries).
    pub trace: Vec<f64>,
}

/// Plain gradient descent on all four embedding parameter sets.
pub fn toy_cotrain(
    mut dataset: ToyDataset,
    cfg: &C2FConfig,
    steps: usize,
    lr: f64,
) -> Result<CotrainOutcome, LossError> {
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        let report = total_loss(
            &dataset.coarse_visual,
            &dataset.coarse_text,
            &dataset.coarse_labels,
            &dataset.fine_visual,
            &dataset.fine_text,
            cfg,
        )?;
        if !report.total.is_finite() {
            return Err(LossError::Divergence(step));
        }
        trace.push(report.total);
        dataset.coarse_visual.apply_step(&report.grad_coarse_visual, lr)?;
        dataset.coarse_text.apply_step(&report.grad_coarse_text, lr)?;
        dataset.fine_visual.apply_step(&report.grad_fine_visual, lr)?;
        dataset.fine_text.apply_step(&report.grad_fine_text, lr)?;
    }
    let final_report = total_loss(
        &dataset.coarse_visual,
        &dataset.coarse_text,
        &dataset.coarse_labels,
        &dataset.fine_visual,
        &dataset.fine_text,
        cfg,
    )?;
    if !final_report.total.is_finite() {
        return Err(LossError::Divergence(steps));
    }
    trace.push(final_report.total);
    Ok(CotrainOutcome { dataset, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatchLabel {
    Coarse(CoarseLabel),
    Fine(RegionName, ForgeryType),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    /// Row index into the full vocabulary-aligned text feature matrix.
    pub vocabulary_index: usize,
    pub similarity: f64,
    pub label: MatchLabel,
}

/// Argmax cosine match of one image feature against vocabulary-aligned text
/// features: coarse mode scans rows 0-1, fine mode rows 2-21. Ties break to
/// the lowest index.
pub fn match_feature(
    feature: &[f64],
    text_features: &EmbeddingBatch,
    mode: MatchMode,
) -> Result<MatchOutcome, LossError> {
    if feature.len() != text_features.dim {
        return Err(LossError::DimensionMismatch(feature.len(), text_features.dim));
    }
    let query = EmbeddingBatch::new(1, feature.len(), feature.to_vec())?;
    let (lo, hi) = match mode {
        MatchMode::Coarse => (0usize, 2usize),
        MatchMode::Fine => (2usize, 22usize),
    };
    if text_features.rows < hi {
        return Err(LossError::NotEnoughRows {
            needed: hi,
            got: text_features.rows,
        });
    }
    let sims = cosine_sim(&query, text_features)?;
    let mut best = lo;
    let mut best_sim = sims.get(0, lo);
    for j in lo + 1..hi {
        let s = sims.get(0, j);
        if s > best_sim {
            best_sim = s;
            best = j;
        }
    }
    let label = match mode {
        MatchMode::Coarse => MatchLabel::Coarse(if best == 0 {
            CoarseLabel::Real
        } else {
            CoarseLabel::Fake
        }),
        MatchMode::Fine => {
            let k = best - 2;
            let region = RegionName::ALL[k / ForgeryType::ALL.len()];
            let ftype = ForgeryType::ALL[k % ForgeryType::ALL.len()];
            MatchLabel::Fine(region, ftype)
        }
    };
    Ok(MatchOutcome {
        vocabulary_index: best,
        similarity: best_sim,
        label,
    })
}

/// Classifies a vocabulary kind for a matched row, mirroring
/// [`crate::prompting::vocabulary`] order.
pub fn vocabulary_kind(index: usize) -> Option<PromptKind> {
    match index {
        0 => Some(PromptKind::CoarseReal),
        1 => Some(PromptKind::CoarseFake),
        2..=21 => {
            let k = index - 2;
            Some(PromptKind::Fine(
                RegionName::ALL[k / ForgeryType::ALL.len()],
                ForgeryType::ALL[k % ForgeryType::ALL.len()],
            ))
        }
        _ => None,
    }
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    #[serde(default)]
    prompt_index: Option<usize>,
    #[serde(default)]
    id: Option<String>,
    vector: Vec<f64>,
}

/// Reads prompt-feature JSONL records (`{"prompt_index": k, "vector": [...]}`)
/// and orders rows by prompt index, which must be contiguous from zero.
pub fn load_text_features<R: BufRead>(reader: R) -> Result<EmbeddingBatch, LossError> {
    let mut records: Vec<(usize, Vec<f64>)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| LossError::Parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line)
            .map_err(|e| LossError::Parse(format!("line {}: {e}", lineno + 1)))?;
        let idx = rec
            .prompt_index
            .ok_or_else(|| LossError::Parse(format!("line {}: missing prompt_index", lineno + 1)))?;
        records.push((idx, rec.vector));
    }
    records.sort_by_key(|(idx, _)| *idx);
    let dim = records
        .first()
        .map(|(_, v)| v.len())
        .ok_or(LossError::Parse("no records".into()))?;
    let mut data = Vec::with_capacity(records.len() * dim);
    for (pos, (idx, v)) in records.iter().enumerate() {
        if *idx != pos {
            return Err(LossError::Parse(format!(
                "prompt_index values must be contiguous from 0, found {idx} at position {pos}"
            )));
        }
        if v.len() != dim {
            return Err(LossError::DimensionMismatch(dim, v.len()));
        }
        data.extend_from_slice(v);
    }
    EmbeddingBatch::new(records.len(), dim, data)
}

/// Reads image-feature JSONL records (`{"id": "...", "vector": [...]}`) in
/// file order.
pub fn load_image_features<R: BufRead>(
    reader: R,
) -> Result<(Vec<String>, EmbeddingBatch), LossError> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| LossError::Parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line)
            .map_err(|e| LossError::Parse(format!("line {}: {e}", lineno + 1)))?;
        let id = rec
            .id
            .or_else(|| rec.prompt_index.map(|i| i.to_string()))
            .ok_or_else(|| LossError::Parse(format!("line {}: missing id", lineno + 1)))?;
        let d = *dim.get_or_insert(rec.vector.len());
        if rec.vector.len() != d {
            return Err(LossError::DimensionMismatch(d, rec.vector.len()));
        }
        ids.push(id);
        data.extend_from_slice(&rec.vector);
    }
    let dim = dim.ok_or(LossError::Parse("no records".into()))?;
    let batch = EmbeddingBatch::new(ids.len(), dim, data)?;
    Ok((ids, batch))
}

#[derive(Deserialize)]
struct LabelRecord {
    label: u8,
}

/// Reads label JSONL records (`{"label": 0|1}`), one per coarse sample, in
/// file order.
pub fn load_labels<R: BufRead>(reader: R) -> Result<Vec<u8>, LossError> {
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| LossError::Parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(&line)
            .map_err(|e| LossError::Parse(format!("line {}: {e}", lineno + 1)))?;
        if rec.label > 1 {
            return Err(LossError::BadLabel(lineno));
        }
        labels.push(rec.label);
    }
    Ok(labels)
}

/// Central finite differences of the total objective with respect to every
/// input batch; used by the gradcheck command.
pub struct GradCheckReport {
    pub trials: usize,
    pub max_relative_error: f64,
    pub threshold: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.threshold
    }
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn relative_gradient_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let mut diff = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        diff += (a - n) * (a - n);
    }
    diff.sqrt() / (l2(analytic) + l2(numeric)).max(1e-12)
}

/// Runs `trials` random instances (sizes up to `n` x `d`) and compares the
/// analytic gradients of the total objective against central differences.
pub fn gradient_check<R: Rng>(
    n: usize,
    d: usize,
    trials: usize,
    rng: &mut R,
) -> Result<GradCheckReport, LossError> {
    let h = 1e-6;
    let cfg = C2FConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let b = rng.random_range(2..=n.max(2));
        let nf = rng.random_range(2..=n.max(2));
        let dim = rng.random_range(2..=d.max(2));
        let ds = ToyDataset::random(b, nf, dim, rng);
        let report = total_loss(
            &ds.coarse_visual,
            &ds.coarse_text,
            &ds.coarse_labels,
            &ds.fine_visual,
            &ds.fine_text,
            &cfg,
        )?;
        let eval = |ds: &ToyDataset| -> Result<f64, LossError> {
            Ok(total_loss(
                &ds.coarse_visual,
                &ds.coarse_text,
                &ds.coarse_labels,
                &ds.fine_visual,
                &ds.fine_text,
                &cfg,
            )?
            .total)
        };
        // perturb each batch in turn
        let batches: [(&EmbeddingBatch, &Vec<f64>); 4] = [
            (&ds.coarse_visual, &report.grad_coarse_visual),
            (&ds.coarse_text, &report.grad_coarse_text),
            (&ds.fine_visual, &report.grad_fine_visual),
            (&ds.fine_text, &report.grad_fine_text),
        ];
        for (which, (batch, analytic)) in batches.iter().enumerate() {
            let mut numeric = vec![0.0; batch.data.len()];
            for k in 0..batch.data.len() {
                let mut plus = ds.clone();
                let mut minus = ds.clone();
                let target_plus = match which {
                    0 => &mut plus.coarse_visual,
                    1 => &mut plus.coarse_text,
                    2 => &mut plus.fine_visual,
                    _ => &mut plus.fine_text,
                };
                target_plus.data[k] += h;
                let target_minus = match which {
                    0 => &mut minus.coarse_visual,
                    1 => &mut minus.coarse_text,
                    2 => &mut minus.fine_visual,
                    _ => &mut minus.fine_text,
                };
                target_minus.data[k] -= h;
                numeric[k] = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            }
            worst = worst.max(relative_gradient_error(analytic, &numeric));
        }
    }
    Ok(GradCheckReport {
        trials,
        max_relative_error: worst,
        threshold: 1e-5,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // frozen oracle values, not derived from the constants they resemble
    #[allow(clippy::approx_constant)]
    const LN2: f64 = 0.6931471805599453;
    // -ln(e / (e + 1))
    const ALIGNED_PAIR_LOSS: f64 = 0.3132616875182228;

    fn unit_axis(dim: usize, axis: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    #[test]
    fn batch_rejects_zero_rows_and_nonfinite() {
        assert!(matches!(
            EmbeddingBatch::new(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            Err(LossError::ZeroVector(1))
        ));
        assert!(matches!(
            EmbeddingBatch::new(1, 2, vec![f64::NAN, 1.0]),
            Err(LossError::NonFinite)
        ));
    }

    #[test]
    fn cosine_identity_on_orthonormal_rows() {
        let data: Vec<f64> = (0..4).flat_map(|i| unit_axis(4, i)).collect();
        let batch = EmbeddingBatch::new(4, 4, data).unwrap();
        let sims = cosine_sim(&batch, &batch).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((sims.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_scale_invariance() {
        let u = EmbeddingBatch::new(1, 3, vec![0.3, -0.4, 0.5]).unwrap();
        let scaled = EmbeddingBatch::new(1, 3, vec![0.9, -1.2, 1.5]).unwrap();
        let sims = cosine_sim(&u, &scaled).unwrap();
        assert!((sims.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_matches_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u = EmbeddingBatch::random(5, 4, &mut rng);
        let v = EmbeddingBatch::random(5, 4, &mut rng);
        let sims = cosine_sim(&u, &v).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut dot = 0.0;
                let mut nu = 0.0;
                let mut nv = 0.0;
                for k in 0..4 {
                    dot += u.row(i)[k] * v.row(j)[k];
                    nu += u.row(i)[k] * u.row(i)[k];
                    nv += v.row(j)[k] * v.row(j)[k];
                }
                let oracle = dot / (nu.sqrt() * nv.sqrt());
                assert!((sims.get(i, j) - oracle).abs() < 1e-12);
                assert!(sims.get(i, j) >= -1.0 && sims.get(i, j) <= 1.0);
            }
        }
    }

    #[test]
    fn coarse_uniform_similarities_give_ln2() {
        // both prompt rows identical -> equal similarity for every sample
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let visual = EmbeddingBatch::random(6, 8, &mut rng);
        let row: Vec<f64> = (0..8).map(|k| (k as f64 + 1.0) / 8.0).collect();
        let mut text_data = row.clone();
        text_data.extend_from_slice(&row);
        let text = EmbeddingBatch::new(2, 8, text_data).unwrap();
        let labels = vec![0, 1, 0, 1, 1, 0];
        let out = coarse_loss(&visual, &text, &labels, &C2FConfig::default()).unwrap();
        assert!((out.loss - LN2).abs() < 1e-12);
    }

    #[test]
    fn coarse_aligned_single_sample() {
        // sim to the true class is 1, to the other class 0
        let visual = EmbeddingBatch::new(1, 4, unit_axis(4, 0)).unwrap();
        let mut text_data = unit_axis(4, 0);
        text_data.extend_from_slice(&unit_axis(4, 1));
        let text = EmbeddingBatch::new(2, 4, text_data).unwrap();
        let out = coarse_loss(&visual, &text, &[0], &C2FConfig::default()).unwrap();
        assert!((out.loss - ALIGNED_PAIR_LOSS).abs() < 1e-12, "loss {}", out.loss);
    }

    #[test]
    fn fine_uniform_similarities_give_ln_n() {
        let n = 5;
        let row: Vec<f64> = vec![0.4; 6];
        let visual = EmbeddingBatch::new(n, 6, row.repeat(n)).unwrap();
        let text = EmbeddingBatch::new(n, 6, row.repeat(n)).unwrap();
        let out = fine_loss(&visual, &text, &C2FConfig::default()).unwrap();
        assert!((out.loss - (n as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn fine_identity_similarity_two_rows() {
        let mut data = unit_axis(4, 0);
        data.extend_from_slice(&unit_axis(4, 1));
        let visual = EmbeddingBatch::new(2, 4, data.clone()).unwrap();
        let text = EmbeddingBatch::new(2, 4, data).unwrap();
        let out = fine_loss(&visual, &text, &C2FConfig::default()).unwrap();
        assert!((out.loss - ALIGNED_PAIR_LOSS).abs() < 1e-12, "loss {}", out.loss);
    }

    #[test]
    fn fine_loss_invariant_under_joint_row_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let visual = EmbeddingBatch::random(6, 5, &mut rng);
        let text = EmbeddingBatch::random(6, 5, &mut rng);
        let base = fine_loss(&visual, &text, &C2FConfig::default()).unwrap().loss;
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permute = |b: &EmbeddingBatch| {
            let mut data = Vec::new();
            for &i in &perm {
                data.extend_from_slice(b.row(i));
            }
            EmbeddingBatch::new(6, 5, data).unwrap()
        };
        let shuffled = fine_loss(&permute(&visual), &permute(&text), &C2FConfig::default())
            .unwrap()
            .loss;
        assert!((base - shuffled).abs() < 1e-12);
    }

    #[test]
    fn losses_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let ds = ToyDataset::random(4, 5, 6, &mut rng);
            let report = total_loss(
                &ds.coarse_visual,
                &ds.coarse_text,
                &ds.coarse_labels,
                &ds.fine_visual,
                &ds.fine_text,
                &C2FConfig::default(),
            )
            .unwrap();
            assert!(report.coarse >= 0.0 && report.fine >= 0.0);
        }
    }

    #[test]
    fn total_loss_linearity_in_phi() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = ToyDataset::random(5, 4, 8, &mut rng);
        let at = |phi: f64| {
            total_loss(
                &ds.coarse_visual,
                &ds.coarse_text,
                &ds.coarse_labels,
                &ds.fine_visual,
                &ds.fine_text,
                &C2FConfig { phi, ..Default::default() },
            )
            .unwrap()
        };
        let zero = at(0.0);
        assert_eq!(zero.total, zero.coarse);
        let phi = 0.1;
        let r = at(phi);
        assert!((r.total - (r.coarse + phi * r.fine)).abs() < 1e-12);
        assert!((r.total - zero.total - phi * r.fine).abs() < 1e-12);
        // gradient additivity: total gradient = coarse gradient + phi * fine gradient
        for (a, b) in r.grad_coarse_visual.iter().zip(&zero.grad_coarse_visual) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    // test-local central-difference oracle, independent of gradient_check
    fn finite_diff_total(ds: &ToyDataset, cfg: &C2FConfig, which: usize) -> Vec<f64> {
        let h = 1e-6;
        let eval = |ds: &ToyDataset| {
            total_loss(
                &ds.coarse_visual,
                &ds.coarse_text,
                &ds.coarse_labels,
                &ds.fine_visual,
                &ds.fine_text,
                cfg,
            )
            .unwrap()
            .total
        };
        let len = match which {
            0 => ds.coarse_visual.data().len(),
            1 => ds.coarse_text.data().len(),
            2 => ds.fine_visual.data().len(),
            _ => ds.fine_text.data().len(),
        };
        (0..len)
            .map(|k| {
                let mut plus = ds.clone();
                let mut minus = ds.clone();
                match which {
                    0 => {
                        plus.coarse_visual.data[k] += h;
                        minus.coarse_visual.data[k] -= h;
                    }
                    1 => {
                        plus.coarse_text.data[k] += h;
                        minus.coarse_text.data[k] -= h;
                    }
                    2 => {
                        plus.fine_visual.data[k] += h;
                        minus.fine_visual.data[k] -= h;
                    }
                    _ => {
                        plus.fine_text.data[k] += h;
                        minus.fine_text.data[k] -= h;
                    }
                }
                (eval(&plus) - eval(&minus)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let cfg = C2FConfig::default();
        for _ in 0..10 {
            let b = rng.random_range(2..=6);
            let n = rng.random_range(2..=6);
            let d = rng.random_range(3..=16);
            let ds = ToyDataset::random(b, n, d, &mut rng);
            let report = total_loss(
                &ds.coarse_visual,
                &ds.coarse_text,
                &ds.coarse_labels,
                &ds.fine_visual,
                &ds.fine_text,
                &cfg,
            )
            .unwrap();
            let analytic = [
                &report.grad_coarse_visual,
                &report.grad_coarse_text,
                &report.grad_fine_visual,
                &report.grad_fine_text,
            ];
            for which in 0..4 {
                let numeric = finite_diff_total(&ds, &cfg, which);
                let err = relative_gradient_error(analytic[which], &numeric);
                assert!(err < 1e-5, "batch {which} relative error {err}");
            }
        }
    }

    #[test]
    fn cotrain_descends_at_small_learning_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ds = ToyDataset::random(32, 24, 32, &mut rng);
        let out = toy_cotrain(ds, &C2FConfig::default(), 10, 0.1).unwrap();
        assert_eq!(out.trace.len(), 11);
        for i in 0..10 {
            assert!(out.trace[i + 1] < out.trace[i], "no descent at step {i}");
        }
    }

    #[test]
    fn cotrain_learns_retrieval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ds = ToyDataset::random(32, 24, 32, &mut rng);
        let cfg = C2FConfig::default();
        let out = toy_cotrain(ds.clone(), &cfg, 500, 5.0).unwrap();
        assert_eq!(out.trace.len(), 501);
        assert!(out.trace.iter().all(|l| l.is_finite()));
        assert!(out.trace[500] < out.trace[0]);
        // image -> text retrieval on the trained fine batch
        let sims = cosine_sim(&out.dataset.fine_visual, &out.dataset.fine_text).unwrap();
        for i in 0..24 {
            let mut best = 0;
            for j in 1..24 {
                if sims.get(i, j) > sims.get(i, best) {
                    best = j;
                }
            }
            assert_eq!(best, i, "retrieval failed for row {i}");
        }

        // zero steps leave embeddings untouched
        let zero = toy_cotrain(ds.clone(), &cfg, 0, 0.5).unwrap();
        assert_eq!(zero.dataset.fine_visual, ds.fine_visual);
        assert_eq!(zero.trace.len(), 1);
    }

    #[test]
    fn match_feature_identity_rows() {
        // 22 orthonormal-ish rows in 22 dims
        let dim = 22;
        let data: Vec<f64> = (0..22).flat_map(|i| unit_axis(dim, i)).collect();
        let text = EmbeddingBatch::new(22, dim, data).unwrap();

        let real = unit_axis(dim, 0);
        let m = match_feature(&real, &text, MatchMode::Coarse).unwrap();
        assert_eq!(m.label, MatchLabel::Coarse(CoarseLabel::Real));
        assert!((m.similarity - 1.0).abs() < 1e-12);

        // fine row for (mouth, blur): fine index 2 + 0*5 + 1 = 3
        let mouth_blur = unit_axis(dim, 3);
        let m = match_feature(&mouth_blur, &text, MatchMode::Fine).unwrap();
        assert_eq!(
            m.label,
            MatchLabel::Fine(RegionName::Mouth, ForgeryType::Blur)
        );
        assert_eq!(m.vocabulary_index, 3);
    }

    #[test]
    fn match_feature_agrees_with_bruteforce_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let text = EmbeddingBatch::random(22, 12, &mut rng);
        for _ in 0..50 {
            let feature: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0f64)).collect();
            if feature.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6 {
                continue;
            }
            for (mode, lo, hi) in [(MatchMode::Coarse, 0, 2), (MatchMode::Fine, 2, 22)] {
                let m = match_feature(&feature, &text, mode).unwrap();
                let query = EmbeddingBatch::new(1, 12, feature.clone()).unwrap();
                let sims = cosine_sim(&query, &text).unwrap();
                let mut best = lo;
                for j in lo..hi {
                    if sims.get(0, j) > sims.get(0, best) {
                        best = j;
                    }
                }
                assert_eq!(m.vocabulary_index, best);
            }
        }
    }

    #[test]
    fn match_feature_scale_invariant_and_tie_breaks_low() {
        let dim = 4;
        // rows 0 and 1 identical: tie must resolve to index 0
        let mut data = vec![0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0];
        for i in 2..22 {
            data.extend_from_slice(&unit_axis(dim, 2 + (i % 2)));
        }
        let text = EmbeddingBatch::new(22, dim, data).unwrap();
        let feature = [1.0, 1.0, 0.0, 0.0];
        let m = match_feature(&feature, &text, MatchMode::Coarse).unwrap();
        assert_eq!(m.vocabulary_index, 0);
        let scaled: Vec<f64> = feature.iter().map(|v| v * 7.5).collect();
        let m2 = match_feature(&scaled, &text, MatchMode::Coarse).unwrap();
        assert_eq!(m.vocabulary_index, m2.vocabulary_index);
    }

    #[test]
    fn embedding_jsonl_loaders() {
        let text_jsonl = "\
{\"prompt_index\": 1, \"vector\": [0.0, 1.0]}\n\
{\"prompt_index\": 0, \"vector\": [1.0, 0.0]}\n";
        let batch = load_text_features(text_jsonl.as_bytes()).unwrap();
        assert_eq!(batch.rows(), 2);
        assert_eq!(batch.row(0), &[1.0, 0.0]);
        assert_eq!(batch.row(1), &[0.0, 1.0]);

        let gap = "{\"prompt_index\": 2, \"vector\": [1.0]}\n";
        assert!(load_text_features(gap.as_bytes()).is_err());

        let image_jsonl = "\
{\"id\": \"a\", \"vector\": [1.0, 0.0]}\n\
{\"id\": \"b\", \"vector\": [0.5, 0.5]}\n";
        let (ids, feats) = load_image_features(image_jsonl.as_bytes()).unwrap();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(feats.rows(), 2);

        let labels = load_labels("{\"label\": 0}\n{\"label\": 1}\n".as_bytes()).unwrap();
        assert_eq!(labels, vec![0, 1]);
        assert!(load_labels("{\"label\": 3}\n".as_bytes()).is_err());
    }

    #[test]
    fn gradient_check_helper_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let report = gradient_check(4, 8, 3, &mut rng).unwrap();
        assert!(report.passed(), "max err {}", report.max_relative_error);
    }
}
