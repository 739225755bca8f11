//! Two-modality synthetic retrieval benchmark for the projection head.
//!
//! `C` unit latent vectors stand for concepts. A pair from cluster `c` is
//! `query = normalize(A (latent_c + e))`, `positive = normalize(B (latent_c + e'))`
//! with `e, e' ~ N(0, sigma^2 I)` and `A`, `B` two fixed random orthogonal
//! matrices. Because `A != B`, the identity head scores near chance; a head
//! must learn to align the two "modalities".

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::projection::ProjectionHead;
use crate::retrieval::top_k;
use crate::store::{EmbeddingStore, EmbeddingVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub clusters: usize,
    pub train_pairs: usize,
    pub heldout_pairs: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            clusters: 16,
            train_pairs: 512,
            heldout_pairs: 128,
            sigma: 0.1,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub cluster: usize,
    pub query: EmbeddingVector,
    pub positive: EmbeddingVector,
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub spec: SyntheticSpec,
    pub train: Vec<SyntheticPair>,
    pub heldout: Vec<SyntheticPair>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= n);
}

/// Random orthogonal matrix (rows) via Gram-Schmidt on Gaussian rows.
fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v = gaussian(rng, dim);
        for r in &rows {
            let p: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|a| *a /= n);
            rows.push(v);
        }
    }
    rows
}

fn apply(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

impl SyntheticBenchmark {
    pub fn generate(spec: SyntheticSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let latents: Vec<Vec<f64>> = (0..spec.clusters)
            .map(|_| {
                let mut v = gaussian(&mut rng, spec.dim);
                normalize(&mut v);
                v
            })
            .collect();
        let a = random_orthogonal(&mut rng, spec.dim);
        let b = random_orthogonal(&mut rng, spec.dim);
        let mut draw = |i: usize| -> Result<SyntheticPair> {
            let c = i % spec.clusters;
            let noisy = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                latents[c]
                    .iter()
                    .zip(gaussian(rng, spec.dim))
                    .map(|(l, e)| l + spec.sigma * e)
                    .collect()
            };
            let q = noisy(&mut rng);
            let p = noisy(&mut rng);
            Ok(SyntheticPair {
                cluster: c,
                query: EmbeddingVector::from_f64(&apply(&a, &q))?,
                positive: EmbeddingVector::from_f64(&apply(&b, &p))?,
            })
        };
        let train = (0..spec.train_pairs).map(&mut draw).collect::<Result<Vec<_>>>()?;
        let heldout = (0..spec.heldout_pairs).map(&mut draw).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            train,
            heldout,
        })
    }

    pub fn train_pairs(&self) -> Vec<(EmbeddingVector, EmbeddingVector)> {
        self.train
            .iter()
            .map(|p| (p.query.clone(), p.positive.clone()))
            .collect()
    }

    /// Fraction of held-out queries whose top-1 held-out positive (after the
    /// head on both sides) comes from the query's own cluster.
    pub fn heldout_recall_at_1(&self, head: &ProjectionHead) -> Result<f64> {
        let mut store = EmbeddingStore::new(head.d_out())?;
        for (i, p) in self.heldout.iter().enumerate() {
            store.push(format!("p{i:04}"), &head.apply(&p.positive)?)?;
        }
        let mut hits = 0usize;
        for p in &self.heldout {
            let q = head.apply(&p.query)?;
            let best = &top_k(&store, q.as_slice(), 1)?[0];
            let j: usize = best.id[1..].parse().expect("synthetic id");
            if self.heldout[j].cluster == p.cluster {
                hits += 1;
            }
        }
        Ok(hits as f64 / self.heldout.len() as f64)
    }
}
