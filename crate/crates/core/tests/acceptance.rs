//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::thread;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fleetlearn::allocation::{allocate, AllocationMatrix, AllocatorConfig, PriorityVector};
use fleetlearn::env::{InterventionKind, InterventionRecord};
use fleetlearn::learner::{sample_balanced_batch, CriticKind, LinearSoftmax, TabularCritic, Transition, TransitionBuffer};
use fleetlearn::metrics::MetricsRecord;
use fleetlearn::priorities::PriorityKind;
use fleetlearn::runner::{baseline_matching_budget, run_scripted, RunConfig, RunOutcome, SweepAxis};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs `cfg` for every seed on its own thread.
fn run_seeds(cfg: &RunConfig, seeds: &[u64]) -> Vec<RunOutcome> {
    thread::scope(|s| {
        let handles: Vec<_> = seeds.iter().map(|&seed| s.spawn(move || run_scripted(cfg, seed).unwrap())).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

// ---------------------------------------------------------------------------
// Allocation fuzz

fn random_case(rng: &mut ChaCha8Rng) -> (PriorityVector, AllocationMatrix, Vec<InterventionRecord>, AllocatorConfig) {
    let n = rng.gen_range(1..=12);
    let m = rng.gen_range(1..=n.min(6));
    let cfg = AllocatorConfig {
        t_teleop: rng.gen_range(1..=6),
        t_reset: rng.gen_range(1..=6),
        sticky_reassignment: rng.gen_bool(0.5),
    };
    let scores = (0..n)
        .map(|_| match rng.gen_range(0..4) {
            0 => 0.0,
            1 => rng.gen_range(1..4) as f64,
            _ => rng.gen_range(0.0..3000.0),
        })
        .collect::<Vec<f64>>();
    let mut prev = AllocationMatrix::zeros(n, m);
    let mut recs = vec![InterventionRecord::NONE; n];
    let mut robots: Vec<usize> = (0..n).collect();
    for j in 0..m {
        if rng.gen_bool(0.3) {
            continue;
        }
        let i = robots.swap_remove(rng.gen_range(0..robots.len()));
        prev.assign(i, j);
        let kind = if rng.gen_bool(0.5) { InterventionKind::Teleop } else { InterventionKind::HardReset };
        let cap = if kind == InterventionKind::Teleop { cfg.t_teleop + 3 } else { cfg.t_reset };
        recs[i] = InterventionRecord { kind, duration: rng.gen_range(1..=cap), human: Some(j) };
    }
    (scores.into(), prev, recs, cfg)
}

fn check_allocation(
    p: &PriorityVector,
    prev: &AllocationMatrix,
    recs: &[InterventionRecord],
    cfg: &AllocatorConfig,
    out: &AllocationMatrix,
) -> Result<(), String> {
    let (n, m) = (prev.num_robots(), prev.num_humans());
    for i in 0..n {
        let row = (0..m).filter(|&j| out.get(i, j)).count();
        if row > 1 {
            return Err(format!("robot {i} has {row} humans"));
        }
    }
    for j in 0..m {
        let col = (0..n).filter(|&i| out.get(i, j)).count();
        if col > 1 {
            return Err(format!("human {j} has {col} robots"));
        }
    }
    let mut protected = HashSet::new();
    for i in 0..n {
        let r = recs[i];
        let Some(j) = r.human else { continue };
        let minimum = match r.kind {
            InterventionKind::Teleop => cfg.t_teleop,
            InterventionKind::HardReset => cfg.t_reset,
            InterventionKind::None => 0,
        };
        if r.duration < minimum {
            if !out.get(i, j) {
                return Err(format!("robot {i} lost human {j} before its minimum time"));
            }
            protected.insert((i, j));
        }
    }
    for i in 0..n {
        for j in 0..m {
            if out.get(i, j) && !protected.contains(&(i, j)) && p.0[i] <= 0.0 {
                return Err(format!("zero-priority robot {i} got human {j}"));
            }
        }
    }
    // No free human while an unassisted positive-priority robot waits.
    let free = (0..m).any(|j| (0..n).all(|i| !out.get(i, j)));
    let waiting = (0..n).any(|i| p.0[i] > 0.0 && (0..m).all(|j| !out.get(i, j)));
    if free && waiting {
        return Err("idle human left a positive-priority robot unassisted".into());
    }
    Ok(())
}

fn allocation_fuzz() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA110C);
    let cases = 100_000;
    for k in 0..cases {
        let (p, prev, recs, cfg) = random_case(&mut rng);
        let out = allocate(&p, &prev, &recs, &cfg).unwrap();
        if let Err(e) = check_allocation(&p, &prev, &recs, &cfg, &out) {
            return verdict(false, format!("case {k}: {e}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(secs < 30.0, format!("{cases} cases, 0 violations, {secs:.1}s (limit 30s)"))
}

// ---------------------------------------------------------------------------
// ROHE recomputed from the raw step log

struct Totals {
    reward: f64,
    human_steps: u64,
    successes: u64,
    resets: u64,
    violations: u64,
    idle: u64,
}

fn totals_from_csv(bytes: &[u8]) -> Totals {
    let mut r = csv::Reader::from_reader(bytes);
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (human, reward, success, reset, newv, viol) =
        (col("human"), col("reward"), col("success"), col("reset_completed"), col("new_violation"), col("violating"));
    let mut t = Totals { reward: 0.0, human_steps: 0, successes: 0, resets: 0, violations: 0, idle: 0 };
    for rec in r.records() {
        let rec = rec.unwrap();
        let flag = |i: usize| u64::from(&rec[i] == "true");
        t.reward += rec[reward].parse::<f64>().unwrap();
        t.human_steps += u64::from(!rec[human].is_empty());
        t.successes += flag(success);
        t.resets += flag(reset);
        t.violations += flag(newv);
        t.idle += flag(viol);
    }
    t
}

fn rohe_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x20E);
    let priorities = [PriorityKind::Cur, PriorityKind::Random, PriorityKind::Constraint, PriorityKind::Uc, PriorityKind::Ugc];
    let mut worst = 0.0f64;
    for k in 0..20 {
        let n = rng.gen_range(2..=12);
        let cfg = RunConfig {
            num_robots: n,
            num_humans: rng.gen_range(1..=n.min(4)),
            timesteps: rng.gen_range(20..=200),
            t_teleop: rng.gen_range(1..=6),
            t_reset: rng.gen_range(1..=6),
            priority: priorities[k % priorities.len()],
            human_time_unit: [1, 7, 100][k % 3],
            ..Default::default()
        };
        let out = run_scripted(&cfg, rng.gen()).unwrap();
        let last = out.final_metrics();
        let t = totals_from_csv(&out.steps_csv().unwrap());
        let ints = [
            (t.human_steps, last.cum_human_steps),
            (t.successes, last.cum_successes),
            (t.resets, last.cum_hard_resets),
            (t.violations, last.cum_violations),
            (t.idle, last.cum_idle_time),
        ];
        if ints.iter().any(|(a, b)| a != b) || t.reward.to_bits() != last.cum_reward.to_bits() {
            return verdict(false, format!("run {k}: logged totals disagree with streamed metrics"));
        }
        // (M R u) / (N (u + H)), evaluated in a different order from the streamed value.
        let (m, nn, u) = (cfg.num_humans as f64, n as f64, cfg.human_time_unit as f64);
        let expect = (m * t.reward * u) / (nn * (u + t.human_steps as f64));
        let rel = if expect == 0.0 { last.rohe.abs() } else { ((last.rohe - expect) / expect).abs() };
        worst = worst.max(rel);
    }
    verdict(worst <= 1e-12, format!("20 runs, integer totals exact, reward bitwise, max ROHE rel err {worst:.2e} (limit 1e-12)"))
}

// ---------------------------------------------------------------------------
// Idle time equals t_R per completed hard reset

fn idle_reset_structure() -> Verdict {
    let cfg = RunConfig {
        num_robots: 5,
        num_humans: 5,
        t_reset: 5,
        priority: PriorityKind::Constraint,
        ..Default::default()
    };
    let out = run_scripted(&cfg, 0).unwrap();
    let bad_quiescent = out
        .metrics
        .iter()
        .filter(|r| r.violating == 0)
        .filter(|r| r.cum_idle_time != 5 * r.cum_hard_resets)
        .count();
    let quiescent = out.metrics.iter().filter(|r| r.violating == 0).count();

    // Idle steps already spent by resets still running at the end.
    let mut trailing = vec![0u64; cfg.num_robots];
    for row in &out.steps {
        trailing[row.robot] = if row.reset_completed || !row.violating { 0 } else { trailing[row.robot] + 1 };
    }
    let in_flight: u64 = trailing.iter().sum();
    let last = out.final_metrics();
    let pass = bad_quiescent == 0 && last.cum_hard_resets > 0 && last.cum_idle_time == 5 * last.cum_hard_resets + in_flight;
    verdict(
        pass,
        format!(
            "idle {} = 5 x {} resets + {in_flight} in flight; {quiescent} quiescent records, {bad_quiescent} mismatched",
            last.cum_idle_time, last.cum_hard_resets
        ),
    )
}

// ---------------------------------------------------------------------------

fn constraint_frozen() -> Verdict {
    let cfg = RunConfig { priority: PriorityKind::Constraint, timesteps: 2000, ..Default::default() };
    let out = run_scripted(&cfg, 0).unwrap();
    let same = out.initial_policy.weight_bytes() == out.policy.weight_bytes();
    verdict(
        same,
        format!(
            "T=2000, {} online pairs, {} human steps, weights {}",
            out.dataset.online_len(),
            out.final_metrics().cum_human_steps,
            if same { "byte-identical" } else { "changed" }
        ),
    )
}

fn dataset_audit() -> Verdict {
    let cfg = RunConfig::default();
    let out = run_scripted(&cfg, 0).unwrap();
    let rows: HashMap<(u64, usize), _> = out.steps.iter().map(|r| ((r.t, r.robot), r)).collect();
    let mut bad = 0;
    let mut seen = HashSet::new();
    for pair in out.dataset.pairs() {
        let Some(p) = pair.provenance else { continue };
        let ok = match rows.get(&(p.t, p.robot)) {
            Some(r) => {
                r.human.is_some()
                    && r.kind == InterventionKind::Teleop
                    && r.human_action.as_deref() == Some(pair.action.to_string().as_str())
            }
            None => false,
        };
        bad += usize::from(!ok || !seen.insert((p.t, p.robot)));
    }
    let labelled_rows =
        out.steps.iter().filter(|r| r.human.is_some() && r.human_action.as_deref() != Some("R")).count();
    let offline = out.dataset.len() - out.dataset.online_len();
    let pass = bad == 0 && seen.len() == labelled_rows && offline == cfg.learner.offline_pairs;
    verdict(
        pass,
        format!("{} online pairs, {bad} violations, {labelled_rows} labelled rows, {offline} offline pairs", seen.len()),
    )
}

// ---------------------------------------------------------------------------
// Safety critic on a chain

/// Five states in a row; action 1 moves right, action 0 moves left (clamped).
/// Moving right from the last state is a constraint violation and ends the episode.
fn chain_transitions() -> Vec<Transition> {
    let mut out = Vec::new();
    for s in 0..5usize {
        for a in 0..2 {
            let violated = s == 4 && a == 1;
            let next = if a == 1 { (s + 1).min(4) } else { s.saturating_sub(1) };
            out.push(Transition { state: s, action: a, next_state: next, violated, succeeded: false, done: violated });
        }
    }
    out
}

fn value_iteration(trs: &[Transition], gamma: f64) -> Vec<f64> {
    let mut q = vec![0.0f64; 10];
    loop {
        let mut next = q.clone();
        for tr in trs {
            let r = if tr.violated { 1.0 } else { 0.0 };
            let boot = if tr.done { 0.0 } else { q[tr.next_state * 2].max(q[tr.next_state * 2 + 1]) };
            next[tr.state * 2 + tr.action] = r + gamma * boot;
        }
        let delta = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        if delta < 1e-14 {
            return q;
        }
    }
}

fn critic_correctness() -> Verdict {
    let start = Instant::now();
    let gamma = 0.9;
    let trs = chain_transitions();
    let oracle = value_iteration(&trs, gamma);
    let buffer: TransitionBuffer = trs.iter().cycle().take(200).copied().collect();
    let mut critic = TabularCritic::new(CriticKind::Safety, 5, 2, gamma);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    critic.train(&buffer, 4000, 64, 0.25, &mut rng).unwrap();
    let err = critic.table().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let mut fractions_ok = true;
    for batch in [4, 16, 64, 256] {
        for _ in 0..200 {
            let idx = sample_balanced_batch(&buffer, CriticKind::Safety, batch, 0.25, &mut rng);
            let pos = idx.iter().filter(|&&i| buffer.get(i).violated).count();
            fractions_ok &= idx.len() == batch && pos * 4 == batch;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        err <= 1e-3 && fractions_ok && secs < 10.0,
        format!(
            "max |Q - Q*| {err:.2e} (limit 1e-3), positive fraction {} 25%, {secs:.2}s (limit 10s)",
            if fractions_ok { "exactly" } else { "NOT" }
        ),
    )
}

// ---------------------------------------------------------------------------

fn gradient_check() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x96AD);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let actions = rng.gen_range(2..=5);
        let dim = rng.gen_range(3..=12);
        let mut model = LinearSoftmax::zeros(actions, dim);
        model.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.5..1.5));
        let temperature = rng.gen_range(0.5..2.0);
        let xs: Vec<Vec<(usize, f64)>> = (0..rng.gen_range(1..=8))
            .map(|_| {
                let mut ks: Vec<usize> = (0..dim).filter(|_| rng.gen_bool(0.4)).collect();
                if ks.is_empty() {
                    ks.push(rng.gen_range(0..dim));
                }
                ks.into_iter().map(|k| (k, rng.gen_range(-2.0..2.0))).collect()
            })
            .collect();
        let batch: Vec<(&Vec<(usize, f64)>, usize)> = xs.iter().map(|x| (x, rng.gen_range(0..actions))).collect();

        let analytic = model.gradient(&batch, temperature);
        let h = 1e-5;
        let mut numeric = vec![0.0; analytic.len()];
        for (w, g) in numeric.iter_mut().enumerate() {
            let orig = model.weights[w];
            model.weights[w] = orig + h;
            let up = model.loss(&batch, temperature);
            model.weights[w] = orig - h;
            let down = model.loss(&batch, temperature);
            model.weights[w] = orig;
            *g = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm_a: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let norm_n: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / (norm_a + norm_n).max(1e-12));
    }
    verdict(worst < 1e-5, format!("100 fixtures, max relative error {worst:.2e} (limit 1e-5)"))
}

// ---------------------------------------------------------------------------

fn directional_benchmark() -> (Verdict, Vec<RunOutcome>) {
    let start = Instant::now();
    let cfg = RunConfig { num_robots: 20, num_humans: 2, timesteps: 2000, ..Default::default() };
    let cur = run_seeds(&cfg, &SEEDS);
    let finals: Vec<MetricsRecord> = cur.iter().map(|o| o.final_metrics()).collect();
    let budget = baseline_matching_budget(&cfg, &finals).unwrap();
    let random: Vec<MetricsRecord> = run_seeds(&budget.random, &SEEDS).iter().map(|o| o.final_metrics()).collect();

    let med_cur = median(finals.iter().map(|r| r.rohe).collect());
    let med_rand = median(random.iter().map(|r| r.rohe).collect());
    let wins = finals.iter().zip(&random).filter(|(c, r)| c.cum_successes > r.cum_successes).count();
    let secs = start.elapsed().as_secs_f64();
    let pass = med_cur >= med_rand && wins >= 3 && secs < 300.0;
    let detail = format!(
        "median ROHE C.U.R. {med_cur:.3} vs Random {med_rand:.3} (threshold {:.4}, {:.0} vs {:.0} mean human steps); \
         successes C.U.R. {:?} vs Random {:?}, {wins}/5 wins; {secs:.1}s (limit 300s)",
        budget.random.priority_params.random_threshold,
        budget.reference_human_steps,
        random.iter().map(|r| r.cum_human_steps as f64).sum::<f64>() / 5.0,
        finals.iter().map(|r| r.cum_successes).collect::<Vec<_>>(),
        random.iter().map(|r| r.cum_successes).collect::<Vec<_>>(),
    );
    (verdict(pass, detail), cur)
}

fn reset_sweep() -> Verdict {
    let base = RunConfig::default();
    let mut med_succ = Vec::new();
    let mut med_rohe = Vec::new();
    for v in ["1", "5", "20"] {
        let cfg = SweepAxis::TReset.apply(&base, v).unwrap();
        let finals: Vec<MetricsRecord> = run_seeds(&cfg, &SEEDS).iter().map(|o| o.final_metrics()).collect();
        med_succ.push(median(finals.iter().map(|r| r.cum_successes as f64).collect()));
        med_rohe.push(median(finals.iter().map(|r| r.rohe).collect()));
    }
    let non_increasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        non_increasing(&med_succ) && non_increasing(&med_rohe),
        format!("t_R 1/5/20: median successes {med_succ:?}, median ROHE {:.3?}", med_rohe),
    )
}

fn determinism(reference: Option<&RunOutcome>) -> Verdict {
    let cfg = RunConfig::default();
    let a = run_scripted(&cfg, 0).unwrap().digests().unwrap();
    let b = run_scripted(&cfg, 0).unwrap().digests().unwrap();
    let mut same = a == b;
    if let Some(r) = reference {
        same &= r.digests().unwrap() == a;
    }
    verdict(same, format!("metrics {}..., final policy {}...", &a.metrics[..12], &a.final_policy[..12]))
}

// ---------------------------------------------------------------------------

fn report(name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    let took = start.elapsed().as_secs_f64();
    println!("{} {name}: {} [{took:.1}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    v.pass
}

fn main() {
    let mut ok = true;
    ok &= report("allocation_fuzz", allocation_fuzz);
    ok &= report("rohe_oracle", rohe_oracle);
    ok &= report("idle_reset_structure", idle_reset_structure);
    ok &= report("constraint_frozen_policy", constraint_frozen);
    ok &= report("dataset_provenance_audit", dataset_audit);
    ok &= report("critic_correctness", critic_correctness);
    ok &= report("gradient_check", gradient_check);
    let mut cur_runs = Vec::new();
    ok &= report("directional_benchmark", || {
        let (v, runs) = directional_benchmark();
        cur_runs = runs;
        v
    });
    ok &= report("reset_time_sweep", reset_sweep);
    ok &= report("determinism", || determinism(cur_runs.first()));
    if !ok {
        std::process::exit(1);
    }
}
