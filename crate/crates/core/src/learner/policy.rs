use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Dataset;
use crate::env::Features;

/// Linear scores per action over a sparse feature vector, with a softmax head.
///
/// `weights` is row-major `num_actions x dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmax {
    pub num_actions: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl LinearSoftmax {
    pub fn zeros(num_actions: usize, dim: usize) -> Self {
        LinearSoftmax { num_actions, dim, weights: vec![0.0; num_actions * dim] }
    }

    pub fn logits(&self, x: &Features, temperature: f64) -> Vec<f64> {
        (0..self.num_actions)
            .map(|a| {
                let row = &self.weights[a * self.dim..(a + 1) * self.dim];
                x.iter().map(|&(k, v)| row[k] * v).sum::<f64>() / temperature
            })
            .collect()
    }

    pub fn probs(&self, x: &Features, temperature: f64) -> Vec<f64> {
        softmax(&self.logits(x, temperature))
    }

    /// Mean cross-entropy over `batch`.
    pub fn loss(&self, batch: &[(&Features, usize)], temperature: f64) -> f64 {
        batch.iter().map(|(x, y)| -self.probs(x, temperature)[*y].ln()).sum::<f64>() / batch.len() as f64
    }

    /// Dense gradient of [`LinearSoftmax::loss`]:
    /// `(p_a - 1[a = y]) x_k / (temperature |batch|)`.
    pub fn gradient(&self, batch: &[(&Features, usize)], temperature: f64) -> Vec<f64> {
        let mut grad = vec![0.0; self.weights.len()];
        for (a, k, g) in self.sparse_gradient(batch, temperature) {
            grad[a * self.dim + k] += g;
        }
        grad
    }

    fn sparse_gradient(&self, batch: &[(&Features, usize)], temperature: f64) -> Vec<(usize, usize, f64)> {
        let scale = 1.0 / (temperature * batch.len() as f64);
        let mut terms = Vec::with_capacity(batch.len() * self.num_actions * 2);
        for (x, y) in batch {
            let p = self.probs(x, temperature);
            for (a, pa) in p.iter().enumerate() {
                let err = pa - if a == *y { 1.0 } else { 0.0 };
                for &(k, v) in x.iter() {
                    terms.push((a, k, err * v * scale));
                }
            }
        }
        terms
    }

    pub fn sgd_step(&mut self, batch: &[(&Features, usize)], temperature: f64, lr: f64) {
        if batch.is_empty() {
            return;
        }
        for (a, k, g) in self.sparse_gradient(batch, temperature) {
            self.weights[a * self.dim + k] -= lr * g;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    /// Argmax of `dist`, ties to the lowest index.
    pub action: usize,
    /// Mean of the member distributions.
    pub dist: Vec<f64>,
    pub member_dists: Vec<Vec<f64>>,
}

/// The shared robot policy: one or more bootstrapped linear-softmax members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub members: Vec<LinearSoftmax>,
    pub temperature: f64,
    pub learning_rate: f64,
    /// Per-member dataset indices (with multiplicity) used for minibatches.
    /// Unused with a single member, which samples the whole dataset.
    bootstrap: Vec<Vec<usize>>,
    /// Dataset prefix already distributed to bootstrap sets.
    bootstrapped_len: usize,
}

/// Poisson(1) draw by inversion, for online bootstrap weights.
fn poisson_one<R: Rng + ?Sized>(rng: &mut R) -> usize {
    let limit = (-1.0f64).exp();
    let mut k = 0;
    let mut p: f64 = rng.gen();
    while p > limit {
        k += 1;
        p *= rng.gen::<f64>();
    }
    k
}

impl PolicyModel {
    pub fn new(num_actions: usize, dim: usize, ensemble_size: usize, temperature: f64) -> Self {
        let size = ensemble_size.max(1);
        PolicyModel {
            members: vec![LinearSoftmax::zeros(num_actions, dim); size],
            temperature,
            learning_rate: 1.0,
            bootstrap: vec![Vec::new(); size],
            bootstrapped_len: 0,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn ensemble_size(&self) -> usize {
        self.members.len()
    }

    pub fn num_actions(&self) -> usize {
        self.members[0].num_actions
    }

    pub fn act(&self, x: &Features) -> ActOutput {
        let member_dists: Vec<Vec<f64>> = self.members.iter().map(|m| m.probs(x, self.temperature)).collect();
        let k = member_dists.len() as f64;
        let mut dist = vec![0.0; self.num_actions()];
        for d in &member_dists {
            for (acc, p) in dist.iter_mut().zip(d) {
                *acc += p / k;
            }
        }
        let mut action = 0;
        for (a, &p) in dist.iter().enumerate() {
            if p > dist[action] {
                action = a;
            }
        }
        ActOutput { action, dist, member_dists }
    }

    /// Replaces a member's bootstrap index set.
    pub fn set_bootstrap(&mut self, member: usize, indices: Vec<usize>, covered_len: usize) {
        self.bootstrap[member] = indices;
        self.bootstrapped_len = self.bootstrapped_len.max(covered_len);
    }

    pub fn bootstrap(&self, member: usize) -> &[usize] {
        &self.bootstrap[member]
    }

    /// Distributes dataset entries added since the last call to the members'
    /// bootstrap sets with Poisson(1) multiplicities.
    pub fn sync_bootstrap<R: Rng + ?Sized>(&mut self, dataset_len: usize, rng: &mut R) {
        if self.members.len() > 1 {
            for idx in self.bootstrapped_len..dataset_len {
                for set in self.bootstrap.iter_mut() {
                    for _ in 0..poisson_one(rng) {
                        set.push(idx);
                    }
                }
            }
        }
        self.bootstrapped_len = self.bootstrapped_len.max(dataset_len);
    }

    /// Runs `steps` minibatch SGD steps of size `batch_size` per member.
    pub fn update<R: Rng + ?Sized>(&mut self, dataset: &Dataset, steps: usize, batch_size: usize, rng: &mut R) {
        if dataset.is_empty() {
            log::warn!("policy update skipped: empty dataset");
            return;
        }
        if steps == 0 || batch_size == 0 {
            return;
        }
        self.sync_bootstrap(dataset.len(), rng);
        let single = self.members.len() == 1;
        for _ in 0..steps {
            for (m, member) in self.members.iter_mut().enumerate() {
                let pool = &self.bootstrap[m];
                if !single && pool.is_empty() {
                    continue;
                }
                let batch: Vec<(&Features, usize)> = (0..batch_size)
                    .map(|_| {
                        let idx = if single { rng.gen_range(0..dataset.len()) } else { pool[rng.gen_range(0..pool.len())] };
                        let p = dataset.get(idx);
                        (&p.features, p.action)
                    })
                    .collect();
                member.sgd_step(&batch, self.temperature, self.learning_rate);
            }
        }
    }

    /// Little-endian bytes of every member's weights.
    pub fn weight_bytes(&self) -> Vec<u8> {
        self.members.iter().flat_map(|m| m.weights.iter().flat_map(|w| w.to_le_bytes())).collect()
    }

    pub fn weight_digest(&self) -> String {
        hex::encode(Sha256::digest(self.weight_bytes()))
    }
}
