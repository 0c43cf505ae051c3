//! Supervisor allocation: the robot-human assignment matrix and the
//! priority-driven meta-allocator that fills it each timestep.

use serde::{Deserialize, Serialize};

use crate::env::{InterventionKind, InterventionRecord};
use crate::{Error, Result};

/// `N x M` binary matrix; entry `(i, j)` is set when human `j` assists robot `i`.
///
/// Valid matrices have at most one entry per row and per column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AllocationMatrix {
    n: usize,
    m: usize,
    entries: Vec<bool>,
}

impl AllocationMatrix {
    pub fn zeros(n: usize, m: usize) -> Self {
        AllocationMatrix { n, m, entries: vec![false; n * m] }
    }

    /// Builds a matrix from `(robot, human)` pairs without validating it.
    pub fn from_pairs(n: usize, m: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut a = Self::zeros(n, m);
        for &(i, j) in pairs {
            if i >= n || j >= m {
                return Err(Error::usage(format!("pair ({i},{j}) outside a {n}x{m} matrix")));
            }
            a.assign(i, j);
        }
        Ok(a)
    }

    pub fn num_robots(&self) -> usize {
        self.n
    }

    pub fn num_humans(&self) -> usize {
        self.m
    }

    pub fn get(&self, robot: usize, human: usize) -> bool {
        self.entries[robot * self.m + human]
    }

    pub fn assign(&mut self, robot: usize, human: usize) {
        self.entries[robot * self.m + human] = true;
    }

    pub fn row_sum(&self, robot: usize) -> usize {
        self.entries[robot * self.m..(robot + 1) * self.m].iter().filter(|&&e| e).count()
    }

    pub fn col_sum(&self, human: usize) -> usize {
        (0..self.n).filter(|&i| self.get(i, human)).count()
    }

    pub fn human_of(&self, robot: usize) -> Option<usize> {
        (0..self.m).find(|&j| self.get(robot, j))
    }

    pub fn robot_of(&self, human: usize) -> Option<usize> {
        (0..self.n).find(|&i| self.get(i, human))
    }

    pub fn is_assisted(&self, robot: usize) -> bool {
        self.row_sum(robot) > 0
    }

    /// Set entries as `(robot, human)` pairs, in robot order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (0..self.m).filter(move |&j| self.get(i, j)).map(move |j| (i, j)))
    }

    /// Squared Frobenius norm, which for a binary matrix is the number of
    /// set entries.
    pub fn frobenius_sq(&self) -> usize {
        self.entries.iter().filter(|&&e| e).count()
    }

    /// Checks the row and column constraints.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            if self.row_sum(i) > 1 {
                return Err(Error::Precondition(format!("robot {i} has more than one human")));
            }
        }
        for j in 0..self.m {
            if self.col_sum(j) > 1 {
                return Err(Error::Precondition(format!("human {j} assists more than one robot")));
            }
        }
        Ok(())
    }
}

/// Per-robot non-negative priority scores. Zero means "do not assist".
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PriorityVector(pub Vec<f64>);

impl PriorityVector {
    pub fn zeros(n: usize) -> Self {
        PriorityVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &s) in self.0.iter().enumerate() {
            if s.is_nan() {
                return Err(Error::Input(format!("priority of robot {i} is NaN")));
            }
            if s < 0.0 {
                return Err(Error::Input(format!("priority of robot {i} is negative ({s})")));
            }
        }
        Ok(())
    }

    /// Robots with positive priority, highest first; ties go to the lower index.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.0.len()).filter(|&i| self.0[i] > 0.0).collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        idx
    }
}

impl From<Vec<f64>> for PriorityVector {
    fn from(v: Vec<f64>) -> Self {
        PriorityVector(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocatorConfig {
    /// Minimum teleoperation timesteps.
    pub t_teleop: u32,
    /// Hard-reset duration in timesteps.
    pub t_reset: u32,
    /// Keep a human on a robot whose minimum time has elapsed while the
    /// robot's priority stays positive. `false` reproduces the plain
    /// free-and-resort behaviour.
    pub sticky_reassignment: bool,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        AllocatorConfig { t_teleop: 5, t_reset: 5, sticky_reassignment: true }
    }
}

impl AllocatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_teleop == 0 || self.t_reset == 0 {
            return Err(Error::config("t_T and t_R must be >= 1"));
        }
        Ok(())
    }
}

/// Computes this timestep's assignment.
///
/// 1. Hard resets shorter than `t_reset` and teleoperation shorter than
///    `t_teleop` keep their human.
/// 2. With sticky reassignment, any other ongoing intervention on a robot with
///    positive priority keeps its human.
/// 3. Free humans, lowest index first, go to unassisted robots with positive
///    priority, highest first (ties to the lower robot index).
pub fn allocate(
    priorities: &PriorityVector,
    prev: &AllocationMatrix,
    interventions: &[InterventionRecord],
    cfg: &AllocatorConfig,
) -> Result<AllocationMatrix> {
    let n = prev.num_robots();
    let m = prev.num_humans();
    if priorities.len() != n || interventions.len() != n {
        return Err(Error::usage(format!(
            "allocation over {n} robots got {} priorities and {} records",
            priorities.len(),
            interventions.len()
        )));
    }
    cfg.validate()?;
    prev.validate()?;
    priorities.validate()?;

    let scores = priorities.scores();
    let mut alloc = AllocationMatrix::zeros(n, m);
    let mut carried = Vec::new();
    for (i, j) in prev.pairs() {
        let rec = &interventions[i];
        let within_minimum = match rec.kind {
            InterventionKind::HardReset => rec.duration < cfg.t_reset,
            InterventionKind::Teleop => rec.duration < cfg.t_teleop,
            InterventionKind::None => false,
        };
        if within_minimum {
            alloc.assign(i, j);
        } else if cfg.sticky_reassignment && rec.kind != InterventionKind::None && scores[i] > 0.0 {
            carried.push((i, j));
        }
    }
    for (i, j) in carried {
        alloc.assign(i, j);
    }

    let free_humans = (0..m).filter(|&j| alloc.col_sum(j) == 0);
    let candidates = priorities.ranked().into_iter().filter(|&i| !alloc.is_assisted(i));
    for (j, i) in free_humans.zip(candidates).collect::<Vec<_>>() {
        alloc.assign(i, j);
    }
    Ok(alloc)
}

/// Intervention type a robot receives under `alloc`.
pub fn intervention_kind(robot: usize, violations: &[bool], alloc: &AllocationMatrix) -> InterventionKind {
    if !alloc.is_assisted(robot) {
        InterventionKind::None
    } else if violations[robot] {
        InterventionKind::HardReset
    } else {
        InterventionKind::Teleop
    }
}

pub fn intervention_kinds(violations: &[bool], alloc: &AllocationMatrix) -> Vec<InterventionKind> {
    (0..alloc.num_robots()).map(|i| intervention_kind(i, violations, alloc)).collect()
}

/// Updates intervention records after a step executed under `alloc`.
///
/// A robot kept by the same human with the same intervention kind increments
/// its duration; a new assignment starts at 1; an unassigned robot is cleared.
/// A hard reset that has now run `t_reset` steps is complete and cleared.
pub fn advance_bookkeeping(
    prev: &[InterventionRecord],
    alloc: &AllocationMatrix,
    kinds: &[InterventionKind],
    t_reset: u32,
) -> Result<Vec<InterventionRecord>> {
    let n = alloc.num_robots();
    if prev.len() != n || kinds.len() != n {
        return Err(Error::usage("bookkeeping lengths disagree with the allocation"));
    }
    Ok((0..n)
        .map(|i| {
            let Some(j) = alloc.human_of(i) else {
                return InterventionRecord::NONE;
            };
            let kind = kinds[i];
            if kind == InterventionKind::None {
                return InterventionRecord::NONE;
            }
            let continued = prev[i].kind == kind && prev[i].human == Some(j);
            let duration = if continued { prev[i].duration + 1 } else { 1 };
            if kind == InterventionKind::HardReset && duration >= t_reset {
                InterventionRecord::NONE
            } else {
                InterventionRecord { kind, duration, human: Some(j) }
            }
        })
        .collect())
}
