use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::supervisor::{Assignment, Supervisor};
use crate::allocation::{advance_bookkeeping, allocate, intervention_kinds, AllocationMatrix};
use crate::env::{step_fleet, Environment, FleetState, GridEnv, InterventionKind, StepConfig, SupervisorAction};
use crate::learner::{
    collect_expert_pairs, collect_pretraining_data, constraint_dataset_stats, Actor, CriticKind, Dataset, PolicyModel,
    TabularCritic, Transition, TransitionBuffer,
};
use crate::metrics::{record_step, MetricsRecord};
use crate::priorities::{ensemble_variance, entropy_uncertainty, raw_goal_failure, raw_risk, Prioritizer, PriorityInputs, UncertaintyMeasure};
use crate::rng::{robot_streams, stream, Stream, StreamRng};
use crate::{Error, Result};

/// One robot's view of one timestep, as written to `steps.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: u64,
    pub robot: usize,
    pub priority: f64,
    pub human: Option<usize>,
    pub kind: InterventionKind,
    /// Action supplied by the allocated human: an index or `R`.
    pub human_action: Option<String>,
    /// Action applied to the environment: an index or `R`.
    pub applied: String,
    pub violating: bool,
    pub reward: f64,
    pub new_violation: bool,
    pub success: bool,
    pub reset_completed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PretrainStats {
    pub offline_pairs: usize,
    pub safety_transitions: usize,
    pub safety_violations: usize,
    pub goal_transitions: usize,
    pub goal_successes: usize,
}

/// SHA-256 digests of a run's logs and final policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digests {
    pub metrics: String,
    pub steps: String,
    pub dataset: String,
    pub initial_policy: String,
    pub final_policy: String,
}

/// Paths written by [`RunOutcome::write_artifacts`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub steps: PathBuf,
    pub dataset: PathBuf,
    pub config: PathBuf,
    pub policy: PathBuf,
    pub digests: Digests,
    pub final_metrics: MetricsRecord,
}

/// Everything a finished run produced, held in memory.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub num_robots: usize,
    pub num_humans: usize,
    pub metrics: Vec<MetricsRecord>,
    pub steps: Vec<StepRow>,
    pub dataset: Dataset,
    pub initial_policy: PolicyModel,
    pub policy: PolicyModel,
    pub pretrain: PretrainStats,
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunOutcome {
    pub fn final_metrics(&self) -> MetricsRecord {
        self.metrics.last().copied().unwrap_or_default()
    }

    pub fn metrics_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(&self.metrics)
    }

    pub fn steps_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(&self.steps)
    }

    pub fn dataset_records(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.dataset.write_records(&mut out)?;
        Ok(out)
    }

    pub fn digests(&self) -> Result<Digests> {
        Ok(Digests {
            metrics: sha_hex(&self.metrics_csv()?),
            steps: sha_hex(&self.steps_csv()?),
            dataset: sha_hex(&self.dataset_records()?),
            initial_policy: self.initial_policy.weight_digest(),
            final_policy: self.policy.weight_digest(),
        })
    }

    /// Writes metrics, step log, dataset, config snapshot, final policy and
    /// digests into `dir`.
    pub fn write_artifacts(&self, dir: &Path, cfg: &RunConfig) -> Result<RunArtifacts> {
        std::fs::create_dir_all(dir)?;
        let art = RunArtifacts {
            dir: dir.to_path_buf(),
            metrics: dir.join("metrics.csv"),
            steps: dir.join("steps.csv"),
            dataset: dir.join("dataset.tsv"),
            config: dir.join("config.toml"),
            policy: dir.join("policy.json"),
            digests: self.digests()?,
            final_metrics: self.final_metrics(),
        };
        std::fs::write(&art.metrics, self.metrics_csv()?)?;
        std::fs::write(&art.steps, self.steps_csv()?)?;
        std::fs::write(&art.dataset, self.dataset_records()?)?;
        let snapshot = RunConfig { seeds: vec![self.seed], output_dir: None, ..cfg.clone() };
        std::fs::write(&art.config, snapshot.to_toml()?)?;
        std::fs::write(&art.policy, serde_json::to_vec_pretty(&self.policy)?)?;
        std::fs::write(dir.join("digests.json"), serde_json::to_vec_pretty(&art.digests)?)?;
        std::fs::write(dir.join("pretrain.json"), serde_json::to_vec_pretty(&self.pretrain)?)?;
        Ok(art)
    }
}

/// One seeded run of the fleet learning loop.
pub struct Experiment<'s> {
    cfg: RunConfig,
    seed: u64,
    env: GridEnv,
    step_cfg: StepConfig,
    fleet: FleetState,
    robot_rngs: Vec<StreamRng>,
    priority_rng: StreamRng,
    learner_rng: StreamRng,
    critic_rng: StreamRng,
    alloc: AllocationMatrix,
    prioritizer: Prioritizer,
    policy: PolicyModel,
    initial_policy: PolicyModel,
    dataset: Dataset,
    safety: Option<TabularCritic>,
    goal: Option<TabularCritic>,
    transitions: TransitionBuffer,
    metrics: MetricsRecord,
    history: Vec<MetricsRecord>,
    steps: Vec<StepRow>,
    pretrain: PretrainStats,
    supervisor: Box<dyn Supervisor + 's>,
}

impl<'s> Experiment<'s> {
    /// Builds the environment and fleet, behaviour-clones the initial policy
    /// and pretrains whichever critics the priority function reads.
    pub fn new(cfg: &RunConfig, seed: u64, supervisor: Box<dyn Supervisor + 's>) -> Result<Self> {
        cfg.validate()?;
        let env = cfg.env.build()?;
        let n = cfg.num_robots;
        let l = cfg.learner;
        let mut robot_rngs = robot_streams(seed, n);
        let fleet = FleetState::reset(&env, &mut robot_rngs)?;

        let mut offline_rng = stream(seed, Stream::Offline);
        let dataset = collect_expert_pairs(&env, l.offline_pairs, &mut offline_rng)?;
        let mut policy = PolicyModel::new(env.spec().action_arity, env.feature_dim(), l.ensemble_size, l.temperature)
            .with_learning_rate(l.learning_rate);
        if !dataset.is_empty() {
            policy.update(&dataset, l.pretrain_steps, l.batch_size, &mut stream(seed, Stream::Bootstrap));
        }

        let mut pretrain = PretrainStats { offline_pairs: dataset.len(), ..Default::default() };
        let mut critic_rng = stream(seed, Stream::Critic);
        let mut transitions = TransitionBuffer::new();
        let new_critic = |kind| {
            TabularCritic::new(kind, env.num_states(), env.spec().action_arity, l.critic_gamma)
                .with_learning_rate(l.critic_learning_rate)
        };
        let mut safety = None;
        let mut goal = None;
        if cfg.priority.needs_safety_critic() {
            let actor = Actor::Policy { model: &policy, epsilon: l.critic_pretrain_epsilon };
            let data = collect_pretraining_data(&env, actor, l.critic_pretrain_timesteps, &mut critic_rng)?;
            (pretrain.safety_transitions, pretrain.safety_violations) = constraint_dataset_stats(&data);
            data.into_iter().for_each(|t| transitions.push(t));
            let mut critic = new_critic(CriticKind::Safety);
            critic.train(&transitions, l.critic_pretrain_steps, l.critic_batch_size, l.balance_fraction, &mut critic_rng)?;
            safety = Some(critic);
        }
        if cfg.priority.needs_goal_critic() {
            let data = collect_pretraining_data(&env, Actor::Expert, l.critic_pretrain_timesteps, &mut critic_rng)?;
            pretrain.goal_transitions = data.len();
            pretrain.goal_successes = data.iter().filter(|t| t.succeeded).count();
            data.into_iter().for_each(|t| transitions.push(t));
            let mut critic = new_critic(CriticKind::Goal);
            critic.train(&transitions, l.critic_pretrain_steps, l.critic_batch_size, l.balance_fraction, &mut critic_rng)?;
            goal = Some(critic);
        }

        Ok(Experiment {
            seed,
            step_cfg: StepConfig::new(cfg.t_reset),
            fleet,
            robot_rngs,
            priority_rng: stream(seed, Stream::Priority),
            learner_rng: stream(seed, Stream::Learner),
            critic_rng,
            alloc: AllocationMatrix::zeros(n, cfg.num_humans),
            prioritizer: Prioritizer::new(cfg.priority, cfg.priority_params)?,
            initial_policy: policy.clone(),
            policy,
            dataset,
            safety,
            goal,
            transitions,
            metrics: MetricsRecord::default(),
            history: Vec::new(),
            steps: Vec::new(),
            pretrain,
            supervisor,
            env,
            cfg: cfg.clone(),
        })
    }

    pub fn env(&self) -> &GridEnv {
        &self.env
    }

    pub fn fleet(&self) -> &FleetState {
        &self.fleet
    }

    pub fn t(&self) -> u64 {
        self.fleet.t
    }

    pub fn policy(&self) -> &PolicyModel {
        &self.policy
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn metrics(&self) -> &MetricsRecord {
        &self.metrics
    }

    pub fn allocation(&self) -> &AllocationMatrix {
        &self.alloc
    }

    pub fn safety_critic(&self) -> Option<&TabularCritic> {
        self.safety.as_ref()
    }

    fn uncertainty(&self, out: &crate::learner::ActOutput) -> Result<f64> {
        match self.cfg.priority_params.uncertainty {
            UncertaintyMeasure::Entropy => entropy_uncertainty(&out.dist),
            UncertaintyMeasure::EnsembleVariance => ensemble_variance(&out.member_dists),
        }
    }

    /// Runs one synchronized timestep.
    pub fn step(&mut self) -> Result<&MetricsRecord> {
        let env: &dyn Environment = &self.env;
        let n = self.fleet.len();
        let t = self.fleet.t;

        let violations = self.fleet.robots.iter().map(|s| env.constraint(s)).collect::<Result<Vec<_>>>()?;
        let acts: Vec<_> = self.fleet.robots.iter().map(|s| self.policy.act(&env.featurize(s))).collect();
        let robot_actions: Vec<usize> = acts.iter().map(|a| a.action).collect();
        let uncertainty = if self.cfg.priority.needs_uncertainty() {
            acts.iter().map(|a| self.uncertainty(a)).collect::<Result<Vec<_>>>()?
        } else {
            vec![0.0; n]
        };
        let risk = match &self.safety {
            Some(c) => Some(raw_risk(env, &self.fleet.robots, c, &robot_actions)?),
            None => None,
        };
        let goal_failure = match &self.goal {
            Some(c) => Some(raw_goal_failure(env, &self.fleet.robots, c, &robot_actions)?),
            None => None,
        };
        let inputs = PriorityInputs {
            t,
            violations: &violations,
            uncertainty: &uncertainty,
            risk: risk.as_deref(),
            goal_failure: goal_failure.as_deref(),
        };
        let priorities = self.prioritizer.score(inputs, &mut self.priority_rng)?;

        let alloc = allocate(&priorities, &self.alloc, &self.fleet.interventions, &self.cfg.allocator())?;
        let kinds = intervention_kinds(&violations, &alloc);

        // Gather every human action before any robot moves.
        let assignments: Vec<Assignment<'_>> = alloc
            .pairs()
            .map(|(robot, human)| {
                let rec = self.fleet.interventions[robot];
                let continued = rec.human == Some(human) && rec.kind == kinds[robot];
                Assignment {
                    t,
                    robot,
                    human,
                    kind: kinds[robot],
                    elapsed: if continued { rec.duration } else { 0 },
                    state: &self.fleet.robots[robot],
                }
            })
            .collect();
        let answers = self.supervisor.act(env, &assignments)?;
        if answers.len() != assignments.len() {
            return Err(Error::usage(format!(
                "supervisor answered {} of {} assignments",
                answers.len(),
                assignments.len()
            )));
        }
        let mut human_actions: Vec<Option<SupervisorAction>> = vec![None; n];
        for (a, ans) in assignments.iter().zip(answers) {
            human_actions[a.robot] = Some(ans);
        }
        drop(assignments);

        self.dataset.aggregate(env, &self.fleet.robots, &alloc, &human_actions, t)?;

        let applied: Vec<SupervisorAction> = (0..n)
            .map(|i| human_actions[i].unwrap_or(SupervisorAction::Move(robot_actions[i])))
            .collect();
        let before: Vec<usize> = self.fleet.robots.iter().map(|s| env.state_index(s)).collect();
        let outcome = step_fleet(env, &mut self.fleet, &applied, &self.step_cfg, &mut self.robot_rngs)?;
        self.fleet.interventions =
            advance_bookkeeping(&self.fleet.interventions, &alloc, &kinds, self.cfg.t_reset)?;

        let l = self.cfg.learner;
        if self.safety.is_some() || self.goal.is_some() {
            for (i, ev) in outcome.events.iter().enumerate() {
                let (Some(next), SupervisorAction::Move(a)) = (&ev.moved_to, applied[i]) else {
                    continue;
                };
                self.transitions.push(Transition {
                    state: before[i],
                    action: a,
                    next_state: env.state_index(next),
                    violated: ev.new_violation,
                    succeeded: ev.success,
                    done: ev.new_violation || ev.soft_reset,
                });
            }
            for critic in [self.safety.as_mut(), self.goal.as_mut()].into_iter().flatten() {
                critic.train(
                    &self.transitions,
                    l.critic_steps_per_timestep,
                    l.critic_batch_size,
                    l.balance_fraction,
                    &mut self.critic_rng,
                )?;
            }
        }

        // The policy only moves once humans have contributed data, so a run
        // without teleoperation keeps its initial weights.
        if self.dataset.online_len() > 0 {
            self.policy.update(&self.dataset, l.steps_per_timestep, l.batch_size, &mut self.learner_rng);
        }

        self.metrics = record_step(&self.metrics, &alloc, &violations, &outcome, &self.cfg.rohe())?;
        for (i, ev) in outcome.events.iter().enumerate() {
            self.steps.push(StepRow {
                t,
                robot: i,
                priority: priorities.0[i],
                human: alloc.human_of(i),
                kind: kinds[i],
                human_action: human_actions[i].map(|a| a.to_string()),
                applied: applied[i].to_string(),
                violating: violations[i],
                reward: ev.reward,
                new_violation: ev.new_violation,
                success: ev.success,
                reset_completed: ev.reset_completed,
            });
        }
        self.history.push(self.metrics);
        self.alloc = alloc;
        self.supervisor.publish(&self.metrics);
        Ok(&self.metrics)
    }

    pub fn run(mut self) -> Result<RunOutcome> {
        for _ in 0..self.cfg.timesteps {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> RunOutcome {
        RunOutcome {
            seed: self.seed,
            num_robots: self.cfg.num_robots,
            num_humans: self.cfg.num_humans,
            metrics: self.history,
            steps: self.steps,
            dataset: self.dataset,
            initial_policy: self.initial_policy,
            policy: self.policy,
            pretrain: self.pretrain,
        }
    }
}

/// Runs `cfg` for one seed with the scripted supervisor.
pub fn run_scripted(cfg: &RunConfig, seed: u64) -> Result<RunOutcome> {
    Experiment::new(cfg, seed, Box::new(super::ScriptedSupervisor))?.run()
}
