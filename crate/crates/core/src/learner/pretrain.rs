use rand::Rng;

use super::critic::Transition;
use super::dataset::Dataset;
use super::policy::PolicyModel;
use crate::env::{expert_policy, Environment, SupervisorAction};
use crate::Result;

/// Behaviour used to collect critic pretraining data.
#[derive(Debug, Clone, Copy)]
pub enum Actor<'a> {
    /// The scripted supervisor.
    Expert,
    /// The robot policy, with an `epsilon` chance of a uniform action.
    Policy { model: &'a PolicyModel, epsilon: f64 },
    Random,
}

/// Runs one robot for `timesteps` steps and returns its transitions.
///
/// Violations, successes and horizon cuts end the episode and the robot is
/// resampled immediately.
pub fn collect_pretraining_data<R: Rng>(
    env: &dyn Environment,
    actor: Actor<'_>,
    timesteps: usize,
    rng: &mut R,
) -> Result<Vec<Transition>> {
    let arity = env.spec().action_arity;
    let horizon = env.spec().horizon;
    let mut out = Vec::with_capacity(timesteps);
    if timesteps == 0 {
        return Ok(out);
    }
    let mut state = env.sample_initial(rng)?;
    while out.len() < timesteps {
        let action = match actor {
            Actor::Expert => match expert_policy(env, &state)?.action {
                SupervisorAction::Move(a) => a,
                SupervisorAction::HardReset => rng.gen_range(0..arity),
            },
            Actor::Policy { model, epsilon } => {
                if rng.gen::<f64>() < epsilon {
                    rng.gen_range(0..arity)
                } else {
                    model.act(&env.featurize(&state)).action
                }
            }
            Actor::Random => rng.gen_range(0..arity),
        };
        let tr = env.transition(&state, action)?;
        let mut next = tr.next;
        next.episode_step += 1;
        let violated = env.constraint(&next)?;
        let succeeded = tr.reached_goal && !violated;
        let truncated = horizon.is_some_and(|h| next.episode_step >= h);
        let done = violated || succeeded || truncated;
        out.push(Transition {
            state: env.state_index(&state),
            action,
            next_state: env.state_index(&next),
            violated,
            succeeded,
            done,
        });
        state = if done { env.sample_initial(rng)? } else { next };
    }
    Ok(out)
}

/// Offline behaviour-cloning pairs: `n` expert labels on states visited by
/// expert rollouts.
pub fn collect_expert_pairs<R: Rng>(env: &dyn Environment, n: usize, rng: &mut R) -> Result<Dataset> {
    let horizon = env.spec().horizon;
    let mut ds = Dataset::new();
    if n == 0 {
        return Ok(ds);
    }
    let mut state = env.sample_initial(rng)?;
    while ds.len() < n {
        let SupervisorAction::Move(a) = expert_policy(env, &state)?.action else {
            state = env.sample_initial(rng)?;
            continue;
        };
        ds.push_offline(env.featurize(&state), a);
        let tr = env.transition(&state, a)?;
        let mut next = tr.next;
        next.episode_step += 1;
        let ended = tr.reached_goal || env.constraint(&next)? || horizon.is_some_and(|h| next.episode_step >= h);
        state = if ended { env.sample_initial(rng)? } else { next };
    }
    Ok(ds)
}

/// `(transitions, violations)` counts of a pretraining dataset.
pub fn constraint_dataset_stats(transitions: &[Transition]) -> (usize, usize) {
    (transitions.len(), transitions.iter().filter(|t| t.violated).count())
}
