use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fleetlearn::allocation::{advance_bookkeeping, allocate, intervention_kinds, AllocationMatrix, AllocatorConfig};
use fleetlearn::env::{
    expert_policy, make_gridworld, step_fleet, Cell, CellDist, Environment, FleetState, InterventionKind,
    StepConfig, SupervisorAction,
};
use fleetlearn::rng::robot_streams;
use fleetlearn::runner::RunConfig;

fn grid(w: usize, h: usize, mask: &[bool]) -> (Vec<Cell>, Vec<Cell>) {
    let (mut hazards, mut free) = (Vec::new(), Vec::new());
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] {
                hazards.push(Cell::new(x, y));
            } else {
                free.push(Cell::new(x, y));
            }
        }
    }
    (hazards, free)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// From every free cell with a path to the goal, following the expert
    /// reaches it within width*height steps without touching a hazard.
    #[test]
    fn expert_reaches_goal_safely(
        w in 2usize..=8,
        h in 2usize..=8,
        mask in proptest::collection::vec(proptest::bool::weighted(0.2), 64),
        pick in any::<prop::sample::Index>(),
    ) {
        let (hazards, free) = grid(w, h, &mask[..w * h]);
        prop_assume!(free.len() >= 2);
        let goal = free[pick.index(free.len())];
        let env = make_gridworld(w, h, &hazards, CellDist::Uniform, CellDist::Cells(vec![goal])).unwrap();
        for &start in free.iter().filter(|&&c| c != goal) {
            if env.distance(start, goal).is_none() {
                continue;
            }
            let mut s = fleetlearn::env::RobotState::new(start, Some(goal));
            let mut reached = false;
            for _ in 0..w * h {
                let SupervisorAction::Move(a) = expert_policy(&env, &s).unwrap().action else {
                    panic!("expert reset a safe state");
                };
                let tr = env.transition(&s, a).unwrap();
                prop_assert!(!env.constraint(&tr.next).unwrap(), "expert entered a hazard from {}", start);
                if tr.reached_goal {
                    reached = true;
                    break;
                }
                s = tr.next;
            }
            prop_assert!(reached, "expert did not reach {} from {}", goal, start);
        }
    }
}

/// One randomized fleet run: random priority streams, scripted humans on
/// allocated robots, random actions elsewhere. Returns every fleet snapshot.
fn simulate(n: usize, m: usize, cfg: AllocatorConfig, steps: usize, seed: u64) -> Vec<FleetState> {
    let env = RunConfig::default().env.build().unwrap();
    let mut rngs = robot_streams(seed, n);
    let mut fleet = FleetState::reset(&env, &mut rngs).unwrap();
    let mut noise = ChaCha8Rng::seed_from_u64(seed ^ 0xF1EE7);
    let mut alloc = AllocationMatrix::zeros(n, m);
    let step_cfg = StepConfig::new(cfg.t_reset);
    let mut snapshots = vec![fleet.clone()];
    // (robot, human, kind) -> length of the running stint
    let mut stints: HashMap<(usize, usize, InterventionKind), u32> = HashMap::new();

    for _ in 0..steps {
        let violations: Vec<bool> = fleet.robots.iter().map(|s| env.constraint(s).unwrap()).collect();
        let priorities: Vec<f64> =
            (0..n).map(|i| if violations[i] || noise.gen_bool(0.3) { noise.gen_range(0.1..5.0) } else { 0.0 }).collect();
        let next = allocate(&priorities.into(), &alloc, &fleet.interventions, &cfg).unwrap();
        let kinds = intervention_kinds(&violations, &next);
        let actions: Vec<SupervisorAction> = (0..n)
            .map(|i| match next.human_of(i) {
                Some(_) => expert_policy(&env, &fleet.robots[i]).unwrap().action,
                None => SupervisorAction::Move(noise.gen_range(0..4)),
            })
            .collect();

        // Stints that ended this step must have met their minimum.
        let current: Vec<(usize, usize, InterventionKind)> = next.pairs().map(|(i, j)| (i, j, kinds[i])).collect();
        stints.retain(|key, len| {
            if current.contains(key) {
                return true;
            }
            let min = match key.2 {
                InterventionKind::HardReset => cfg.t_reset,
                _ => cfg.t_teleop,
            };
            assert!(*len >= min, "{key:?} ended after {len} < {min} steps");
            false
        });
        for key in current {
            *stints.entry(key).or_insert(0) += 1;
        }

        let before = fleet.clone();
        let out = step_fleet(&env, &mut fleet, &actions, &step_cfg, &mut rngs).unwrap();
        fleet.interventions = advance_bookkeeping(&before.interventions, &next, &kinds, cfg.t_reset).unwrap();
        // A completed hard reset closes its stint at exactly t_R steps.
        for (i, ev) in out.events.iter().enumerate() {
            if ev.reset_completed {
                let j = next.human_of(i).unwrap();
                assert_eq!(stints.remove(&(i, j, InterventionKind::HardReset)), Some(cfg.t_reset));
            }
            if violations[i] && !next.is_assisted(i) {
                assert_eq!(fleet.robots[i], before.robots[i], "idle violator moved");
                assert_eq!(ev.reward, 0.0);
            }
        }
        assert_eq!(fleet.t, before.t + 1);
        assert!(fleet.humans_unique());
        assert!(fleet.interventions.iter().all(|r| r.is_well_formed()));
        assert!(fleet.interventions.iter().all(|r| r.kind != InterventionKind::HardReset || r.duration < cfg.t_reset));
        alloc = next;
        snapshots.push(fleet.clone());
    }
    snapshots
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fleet_loop_invariants_and_determinism(
        n in 1usize..10,
        m_frac in 0.0f64..1.0,
        t_teleop in 1u32..6,
        t_reset in 1u32..6,
        sticky in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let m = 1 + ((n - 1) as f64 * m_frac) as usize;
        let cfg = AllocatorConfig { t_teleop, t_reset, sticky_reassignment: sticky };
        let a = simulate(n, m, cfg, 150, seed);
        let b = simulate(n, m, cfg, 150, seed);
        prop_assert_eq!(a, b);
    }
}
