use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    /// Discounted probability of a constraint violation.
    Safety,
    /// Discounted probability of reaching the goal.
    Goal,
}

/// One environment transition as seen by the critics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub violated: bool,
    pub succeeded: bool,
    /// Episode ended (violation, success or horizon); no bootstrapping.
    pub done: bool,
}

impl Transition {
    pub fn is_positive(&self, kind: CriticKind) -> bool {
        match kind {
            CriticKind::Safety => self.violated,
            CriticKind::Goal => self.succeeded,
        }
    }
}

/// Replay buffer indexed by violation and success labels for balanced sampling.
#[derive(Debug, Clone, Default)]
pub struct TransitionBuffer {
    items: Vec<Transition>,
    violated: Vec<usize>,
    safe: Vec<usize>,
    succeeded: Vec<usize>,
    unsucceeded: Vec<usize>,
}

impl TransitionBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tr: Transition) {
        let i = self.items.len();
        if tr.violated {
            self.violated.push(i)
        } else {
            self.safe.push(i)
        }
        if tr.succeeded {
            self.succeeded.push(i)
        } else {
            self.unsucceeded.push(i)
        }
        self.items.push(tr);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.items
    }

    fn split(&self, kind: CriticKind) -> (&[usize], &[usize]) {
        match kind {
            CriticKind::Safety => (&self.violated, &self.safe),
            CriticKind::Goal => (&self.succeeded, &self.unsucceeded),
        }
    }
}

impl FromIterator<Transition> for TransitionBuffer {
    fn from_iter<I: IntoIterator<Item = Transition>>(iter: I) -> Self {
        let mut b = TransitionBuffer::new();
        for t in iter {
            b.push(t);
        }
        b
    }
}

/// Minibatch indices with `round(fraction * batch)` positives whenever the
/// buffer holds both positives and negatives; uniform otherwise.
pub fn sample_balanced_batch<R: Rng + ?Sized>(
    buffer: &TransitionBuffer,
    kind: CriticKind,
    batch: usize,
    fraction: f64,
    rng: &mut R,
) -> Vec<usize> {
    if buffer.is_empty() {
        return Vec::new();
    }
    let (pos, neg) = buffer.split(kind);
    if pos.is_empty() || neg.is_empty() {
        if pos.is_empty() {
            log::debug!("{kind:?} critic: no positive samples, sampling uniformly");
        }
        return (0..batch).map(|_| rng.gen_range(0..buffer.len())).collect();
    }
    let n_pos = (fraction * batch as f64).round() as usize;
    let n_pos = n_pos.min(batch);
    let mut out = Vec::with_capacity(batch);
    for k in 0..batch {
        let pool = if k < n_pos { pos } else { neg };
        out.push(pool[rng.gen_range(0..pool.len())]);
    }
    out
}

/// Tabular Q-function over `num_states x num_actions` trained with a sparse
/// {0,1} reward on its positive event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularCritic {
    pub kind: CriticKind,
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    q: Vec<f64>,
}

impl TabularCritic {
    pub fn new(kind: CriticKind, num_states: usize, num_actions: usize, gamma: f64) -> Self {
        TabularCritic { kind, num_states, num_actions, gamma, learning_rate: 0.5, q: vec![0.0; num_states * num_actions] }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn fill(&mut self, v: f64) {
        self.q.fill(v);
    }

    pub fn table(&self) -> &[f64] {
        &self.q
    }

    fn idx(&self, s: usize, a: usize) -> Result<usize> {
        if s >= self.num_states || a >= self.num_actions {
            return Err(Error::usage(format!(
                "critic entry ({s},{a}) outside {}x{}",
                self.num_states, self.num_actions
            )));
        }
        Ok(s * self.num_actions + a)
    }

    pub fn value(&self, s: usize, a: usize) -> Result<f64> {
        Ok(self.q[self.idx(s, a)?])
    }

    pub fn max_value(&self, s: usize) -> f64 {
        self.q[s * self.num_actions..(s + 1) * self.num_actions].iter().copied().fold(0.0, f64::max)
    }

    /// `r + γ max_a' Q(s', a')`, without the bootstrap term at episode ends.
    pub fn target(&self, tr: &Transition) -> f64 {
        let r = if tr.is_positive(self.kind) { 1.0 } else { 0.0 };
        if tr.done {
            r
        } else {
            r + self.gamma * self.max_value(tr.next_state)
        }
    }

    /// One gradient step on the mean squared TD error of a minibatch; each
    /// touched entry moves by `lr` times its mean TD error. Values stay in [0, 1].
    pub fn gradient_step(&mut self, buffer: &TransitionBuffer, batch: &[usize]) -> Result<()> {
        let mut acc: HashMap<usize, (f64, u32)> = HashMap::new();
        for &i in batch {
            let tr = buffer.get(i);
            let k = self.idx(tr.state, tr.action)?;
            self.idx(tr.next_state, 0)?;
            let td = self.target(tr) - self.q[k];
            let e = acc.entry(k).or_insert((0.0, 0));
            e.0 += td;
            e.1 += 1;
        }
        // Apply in index order so results do not depend on hash iteration.
        let mut updates: Vec<(usize, f64)> = acc.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
        updates.sort_by_key(|u| u.0);
        for (k, td) in updates {
            self.q[k] = (self.q[k] + self.learning_rate * td).clamp(0.0, 1.0);
        }
        Ok(())
    }

    /// Q-learning for `steps` balanced minibatches.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        buffer: &TransitionBuffer,
        steps: usize,
        batch_size: usize,
        balance_fraction: f64,
        rng: &mut R,
    ) -> Result<()> {
        if buffer.is_empty() {
            return Ok(());
        }
        if buffer.split(self.kind).0.is_empty() {
            log::warn!("{:?} critic trained without positive samples", self.kind);
        }
        for _ in 0..steps {
            let batch = sample_balanced_batch(buffer, self.kind, batch_size, balance_fraction, rng);
            self.gradient_step(buffer, &batch)?;
        }
        Ok(())
    }
}
