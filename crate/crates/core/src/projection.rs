//! Linear projection head trained with InfoNCE over in-batch negatives.
//!
//! The head maps a base embedding `x` to `normalize(W x)` and is shared by
//! the query and knowledge sides. For one query `q` with positive `k+` and
//! negatives `k-_1..k-_t`,
//!
//! ```text
//! Z = sum_{i=0..t} exp(sim(q, k_i) / tau)      (i = 0 is the positive)
//! L = -(sim(q, k+) / tau - ln Z)
//! ```
//!
//! Gradients are derived by hand through the cosine similarity and the
//! re-normalization of both sides; the test suite checks them against
//! central finite differences.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::cosine;
use crate::store::{write_atomic, ByteReader, EmbeddingStore, EmbeddingVector};

pub const HEAD_MAGIC: [u8; 4] = *b"WVRH";
pub const HEAD_VERSION: u16 = 1;
pub const HEAD_HEADER_LEN: usize = 4 + 2 + 4 + 4;

pub const DEFAULT_TAU: f64 = 0.05;

/// `D_out x D_in` weight matrix, row-major, kept in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    d_in: usize,
    d_out: usize,
    weights: Vec<f64>,
}

impl ProjectionHead {
    pub fn new(d_in: usize, d_out: usize, weights: Vec<f64>) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::InvalidArgument("head dims must be positive".into()));
        }
        if weights.len() != d_in * d_out {
            return Err(Error::DimMismatch {
                expected: d_in * d_out,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("head weights"));
        }
        Ok(Self {
            d_in,
            d_out,
            weights,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Self {
            d_in: dim,
            d_out: dim,
            weights: w,
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.d_in)
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// `normalize(W v)`.
    pub fn apply(&self, v: &EmbeddingVector) -> Result<EmbeddingVector> {
        if v.dim() != self.d_in {
            return Err(Error::DimMismatch {
                expected: self.d_in,
                got: v.dim(),
            });
        }
        let x: Vec<f64> = v.as_slice().iter().map(|&a| f64::from(a)).collect();
        let y = self.matvec(&x);
        if y.iter().all(|&a| a == 0.0) {
            return Err(Error::DegenerateProjection);
        }
        EmbeddingVector::from_f64(&y)
    }

    /// Projects every row of a base-embedding store into head space.
    pub fn project_store(&self, store: &EmbeddingStore) -> Result<EmbeddingStore> {
        let mut out = EmbeddingStore::new(self.d_out)?;
        for (id, row) in store.rows() {
            let v = EmbeddingVector::normalized(row)?;
            out.push(id, &self.apply(&v)?)?;
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEAD_HEADER_LEN + self.weights.len() * 8);
        out.extend_from_slice(&HEAD_MAGIC);
        out.extend_from_slice(&HEAD_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d_in as u32).to_le_bytes());
        out.extend_from_slice(&(self.d_out as u32).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "head");
        let magic = r.take(4)?;
        if magic != HEAD_MAGIC {
            return Err(Error::format("magic", format!("expected \"WVRH\", found {magic:02x?}")));
        }
        let version = r.u16()?;
        if version != HEAD_VERSION {
            return Err(Error::format("version", format!("unsupported version {version}")));
        }
        let d_in = r.u32()? as usize;
        let d_out = r.u32()? as usize;
        if d_in == 0 || d_out == 0 {
            return Err(Error::format("dim", format!("dims must be positive, got {d_in}x{d_out}")));
        }
        let n = d_in
            .checked_mul(d_out)
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| Error::format("dim", "weight count overflows"))?;
        let raw = r.take(n * 8)?;
        if r.remaining() != 0 {
            return Err(Error::format("trailing", format!("{} unexpected bytes", r.remaining())));
        }
        let weights: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| {
                let mut a = [0u8; 8];
                a.copy_from_slice(c);
                f64::from_le_bytes(a)
            })
            .collect();
        Self::new(d_in, d_out, weights).map_err(|_| Error::format("weights", "non-finite weight"))
    }
}

pub fn write_head(head: &ProjectionHead, path: &Path) -> Result<()> {
    write_atomic(path, &head.to_bytes())
}

pub fn read_head(path: &Path) -> Result<ProjectionHead> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ProjectionHead::from_bytes(&bytes)
}

/// Stable `ln(sum exp(xs))`, split as `(max, ln(sum exp(xs - max)))` so the
/// InfoNCE loss can be formed as a sum of two non-negative terms.
fn log_sum_exp_parts(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    (m, s.ln())
}

/// InfoNCE loss of one query given similarity logits, positive at index 0.
fn nce_from_sims(sims: &[f64], tau: f64) -> f64 {
    let logits: Vec<f64> = sims.iter().map(|s| s / tau).collect();
    let (m, log_tail) = log_sum_exp_parts(&logits);
    (m - logits[0]) + log_tail
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")));
    }
    Ok(())
}

pub fn info_nce_loss(
    q: &EmbeddingVector,
    pos: &EmbeddingVector,
    negs: &[EmbeddingVector],
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    let mut sims = Vec::with_capacity(1 + negs.len());
    sims.push(cosine(q.as_slice(), pos.as_slice())?);
    for n in negs {
        sims.push(cosine(q.as_slice(), n.as_slice())?);
    }
    let loss = nce_from_sims(&sims, tau);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("info_nce_loss = {loss}")));
    }
    Ok(loss)
}

/// Aligned (query, positive) base embeddings. For item `i`, negatives are
/// the positives of every other item plus `extra_negatives[i]`.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub queries: Vec<EmbeddingVector>,
    pub positives: Vec<EmbeddingVector>,
    /// Empty, or one list per item.
    pub extra_negatives: Vec<Vec<EmbeddingVector>>,
}

impl TrainBatch {
    pub fn new(queries: Vec<EmbeddingVector>, positives: Vec<EmbeddingVector>) -> Result<Self> {
        let b = Self {
            queries,
            positives,
            extra_negatives: Vec::new(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.queries.len();
        if self.positives.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{n} queries but {} positives",
                self.positives.len()
            )));
        }
        if !self.extra_negatives.is_empty() && self.extra_negatives.len() != n {
            return Err(Error::InvalidArgument(
                "extra_negatives must be empty or have one list per item".into(),
            ));
        }
        let has_extras = self.extra_negatives.iter().any(|e| !e.is_empty());
        if n < 2 && !(n == 1 && has_extras) {
            return Err(Error::InvalidArgument(
                "batch needs >= 2 items for in-batch negatives".into(),
            ));
        }
        let d = self.queries[0].dim();
        let all = self
            .queries
            .iter()
            .chain(&self.positives)
            .chain(self.extra_negatives.iter().flatten());
        for v in all {
            if v.dim() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    got: v.dim(),
                });
            }
        }
        Ok(())
    }
}

/// `W x`, its norm, and the normalized output, for backprop.
struct Projected {
    x: Vec<f64>,
    norm: f64,
    unit: Vec<f64>,
}

impl Projected {
    fn new(head: &ProjectionHead, v: &EmbeddingVector) -> Result<Self> {
        let x: Vec<f64> = v.as_slice().iter().map(|&a| f64::from(a)).collect();
        let u = head.matvec(&x);
        let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateProjection);
        }
        let unit = u.iter().map(|a| a / norm).collect();
        Ok(Self { x, norm, unit })
    }

    /// Accumulates dL/dW given dL/d(unit).
    fn backprop(&self, d_unit: &[f64], grad: &mut [f64]) {
        let radial: f64 = self.unit.iter().zip(d_unit).map(|(a, d)| a * d).sum();
        let d_in = self.x.len();
        for (r, row) in grad.chunks_exact_mut(d_in).enumerate() {
            let du = (d_unit[r] - self.unit[r] * radial) / self.norm;
            if du != 0.0 {
                for (g, x) in row.iter_mut().zip(&self.x) {
                    *g += du * x;
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(acc: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += alpha * v;
    }
}

/// Mean InfoNCE loss over the batch and its gradient w.r.t. the head weights
/// (row-major, same layout as [`ProjectionHead::weights`]).
pub fn loss_gradient(head: &ProjectionHead, batch: &TrainBatch, tau: f64) -> Result<(f64, Vec<f64>)> {
    check_tau(tau)?;
    batch.validate()?;
    if batch.queries[0].dim() != head.d_in {
        return Err(Error::DimMismatch {
            expected: head.d_in,
            got: batch.queries[0].dim(),
        });
    }
    let b = batch.len();
    let d_out = head.d_out;
    let qs = batch
        .queries
        .iter()
        .map(|v| Projected::new(head, v))
        .collect::<Result<Vec<_>>>()?;
    let ps = batch
        .positives
        .iter()
        .map(|v| Projected::new(head, v))
        .collect::<Result<Vec<_>>>()?;
    let extras = batch
        .extra_negatives
        .iter()
        .map(|list| list.iter().map(|v| Projected::new(head, v)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;

    let mut d_q = vec![vec![0.0; d_out]; b];
    let mut d_p = vec![vec![0.0; d_out]; b];
    let mut d_e: Vec<Vec<Vec<f64>>> = extras.iter().map(|l| vec![vec![0.0; d_out]; l.len()]).collect();
    let mut total = 0.0;
    let scale = 1.0 / b as f64;

    for i in 0..b {
        let a = &qs[i].unit;
        let no_extras = Vec::new();
        let ex = extras.get(i).unwrap_or(&no_extras);
        // candidate order: own positive first, then other positives, then extras
        let mut cands: Vec<(usize, Option<usize>)> = Vec::with_capacity(b + ex.len());
        cands.push((i, None));
        cands.extend((0..b).filter(|&j| j != i).map(|j| (j, None)));
        cands.extend((0..ex.len()).map(|e| (i, Some(e))));
        let sims: Vec<f64> = cands
            .iter()
            .map(|&(j, e)| match e {
                None => dot(a, &ps[j].unit),
                Some(e) => dot(a, &ex[e].unit),
            })
            .collect();
        let loss_i = nce_from_sims(&sims, tau);
        if !loss_i.is_finite() {
            return Err(Error::NonFiniteLoss(format!("item {i}: loss = {loss_i}")));
        }
        total += loss_i;

        let logits: Vec<f64> = sims.iter().map(|s| s / tau).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        for (c, (&(j, e), wc)) in cands.iter().zip(&w).enumerate() {
            let indicator = if c == 0 { 1.0 } else { 0.0 };
            let g = (wc / z - indicator) / tau * scale;
            match e {
                None => {
                    axpy(&mut d_q[i], g, &ps[j].unit);
                    axpy(&mut d_p[j], g, a);
                }
                Some(e) => {
                    axpy(&mut d_q[i], g, &ex[e].unit);
                    axpy(&mut d_e[i][e], g, a);
                }
            }
        }
    }

    let mut grad = vec![0.0; head.weights.len()];
    for (p, d) in qs.iter().zip(&d_q) {
        p.backprop(d, &mut grad);
    }
    for (p, d) in ps.iter().zip(&d_p) {
        p.backprop(d, &mut grad);
    }
    for (list, ds) in extras.iter().zip(&d_e) {
        for (p, d) in list.iter().zip(ds) {
            p.backprop(d, &mut grad);
        }
    }
    Ok((total * scale, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            lr: 0.05,
            epochs: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument("lr must be finite and >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch_size must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    /// Dataset loss of the starting head.
    pub initial_loss: f64,
    /// Dataset loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Consecutive batches of `batch_size` over `order`; a trailing batch of one
/// item has no in-batch negative and is skipped.
fn batches<'a>(
    pairs: &'a [(EmbeddingVector, EmbeddingVector)],
    order: &'a [usize],
    batch_size: usize,
) -> impl Iterator<Item = TrainBatch> + 'a {
    order.chunks(batch_size).filter(|c| c.len() >= 2).map(|c| TrainBatch {
        queries: c.iter().map(|&i| pairs[i].0.clone()).collect(),
        positives: c.iter().map(|&i| pairs[i].1.clone()).collect(),
        extra_negatives: Vec::new(),
    })
}

/// Mean per-item loss over the dataset, batched in dataset order.
pub fn dataset_loss(
    head: &ProjectionHead,
    pairs: &[(EmbeddingVector, EmbeddingVector)],
    batch_size: usize,
    tau: f64,
) -> Result<f64> {
    let order: Vec<usize> = (0..pairs.len()).collect();
    let (mut sum, mut n) = (0.0, 0usize);
    for batch in batches(pairs, &order, batch_size) {
        let len = batch.len();
        let (loss, _) = loss_gradient(head, &batch, tau)?;
        sum += loss * len as f64;
        n += len;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("dataset has no usable batch".into()));
    }
    Ok(sum / n as f64)
}

/// Plain mini-batch gradient descent. Each epoch shuffles with a generator
/// seeded once from `cfg.seed`, so runs are bit-reproducible.
pub fn train(
    head: &ProjectionHead,
    pairs: &[(EmbeddingVector, EmbeddingVector)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    if pairs.len() < cfg.batch_size {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} pairs, fewer than batch_size {}",
            pairs.len(),
            cfg.batch_size
        )));
    }
    let mut head = head.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial_loss = dataset_loss(&head, pairs, cfg.batch_size, cfg.tau)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in batches(pairs, &order, cfg.batch_size) {
            let (loss, grad) = loss_gradient(&head, &batch, cfg.tau)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!("epoch {epoch}: batch loss {loss}")));
            }
            if cfg.lr != 0.0 {
                for (w, g) in head.weights.iter_mut().zip(&grad) {
                    *w -= cfg.lr * g;
                }
            }
        }
        if head.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteLoss(format!("epoch {epoch}: weights diverged")));
        }
        epoch_losses.push(dataset_loss(&head, pairs, cfg.batch_size, cfg.tau)?);
    }
    Ok(TrainOutcome {
        head,
        initial_loss,
        epoch_losses,
    })
}
