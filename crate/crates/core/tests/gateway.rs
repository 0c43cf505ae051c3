use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use fleetlearn::env::{expert_policy, Cell, Environment, InterventionKind, RobotState, SupervisorAction};
use fleetlearn::gateway::{codes, ActionRequest, Gateway, GatewayClient, GatewayConfig, GatewaySupervisor, SessionMsg};
use fleetlearn::metrics::MetricsRecord;
use fleetlearn::runner::{run_scripted, Experiment, RunConfig};

const WAIT: Duration = Duration::from_secs(5);

fn gateway(capacity: usize, token: Option<&str>) -> Gateway {
    Gateway::serve(
        "127.0.0.1:0",
        GatewayConfig { capacity, action_arity: 4, token: token.map(String::from), transcript_dir: None },
    )
    .unwrap()
}

fn request(human: usize, t: u64, robot: usize, kind: InterventionKind) -> ActionRequest {
    ActionRequest::new(
        human,
        SessionMsg::AssignmentOffer { t, robot: Some(robot), kind, elapsed: 0, min_steps: 5 },
        SessionMsg::Observation {
            t,
            robot,
            kind,
            render: vec!["R..".into(), "..G".into()],
            position: Cell::new(0, 0),
            goal: Some(Cell::new(2, 1)),
            actions: vec!["up".into(), "down".into(), "left".into(), "right".into()],
        },
    )
    .unwrap()
}

fn error_code(m: &SessionMsg) -> Option<&str> {
    match m {
        SessionMsg::Error { code, .. } => Some(code),
        _ => None,
    }
}

fn is_observation(m: &SessionMsg) -> bool {
    matches!(m, SessionMsg::Observation { .. })
}

#[test]
fn hello_grants_lowest_free_slot_then_fleet_full() {
    let g = gateway(2, None);
    let (_a, ra) = GatewayClient::join(&g.url(), None, None).unwrap();
    let (_b, rb) = GatewayClient::join(&g.url(), None, None).unwrap();
    assert!(matches!(ra, SessionMsg::Hello { human: Some(0), .. }));
    assert!(matches!(rb, SessionMsg::Hello { human: Some(1), .. }));
    let (_c, rc) = GatewayClient::join(&g.url(), None, None).unwrap();
    assert_eq!(error_code(&rc), Some(codes::FLEET_FULL));
    assert_eq!(g.connected(), vec![0, 1]);
}

#[test]
fn version_and_token_are_checked() {
    let g = gateway(1, Some("secret"));
    let mut c = GatewayClient::connect(&g.url()).unwrap();
    c.send(&SessionMsg::Hello { version: 99, token: Some("secret".into()), human: None, session: None }).unwrap();
    assert_eq!(error_code(&c.recv().unwrap()), Some(codes::VERSION));

    let (_c, r) = GatewayClient::join(&g.url(), Some("wrong"), None).unwrap();
    assert_eq!(error_code(&r), Some(codes::AUTH));
    let (_c, r) = GatewayClient::join(&g.url(), Some("secret"), Some(0)).unwrap();
    assert!(matches!(r, SessionMsg::Hello { human: Some(0), .. }));
}

#[test]
fn lock_step_waits_for_every_answer() {
    let g = Arc::new(gateway(2, None));
    let (mut a, _) = GatewayClient::join(&g.url(), None, Some(0)).unwrap();
    let (mut b, _) = GatewayClient::join(&g.url(), None, Some(1)).unwrap();
    let done = Arc::new(AtomicBool::new(false));
    let (g2, d2) = (Arc::clone(&g), Arc::clone(&done));
    let waiter = thread::spawn(move || {
        let reqs = [request(0, 7, 3, InterventionKind::Teleop), request(1, 7, 5, InterventionKind::HardReset)];
        let out = g2.gather_actions(&reqs, None).unwrap();
        d2.store(true, Ordering::SeqCst);
        out
    });
    assert!(a.recv_until(WAIT, is_observation).unwrap().is_some());
    assert!(b.recv_until(WAIT, is_observation).unwrap().is_some());
    a.send(&SessionMsg::Action { t: 7, action: 2 }).unwrap();

    // Human 1 stays silent: the round must not complete.
    thread::sleep(Duration::from_millis(1500));
    assert!(!done.load(Ordering::SeqCst));

    b.send(&SessionMsg::HardResetAck { t: 7 }).unwrap();
    let out = waiter.join().unwrap();
    assert_eq!(out, vec![SupervisorAction::Move(2), SupervisorAction::HardReset]);
}

#[test]
fn stale_invalid_and_wrong_kind_answers_are_rejected() {
    let g = Arc::new(gateway(1, None));
    let (mut a, _) = GatewayClient::join(&g.url(), None, None).unwrap();
    let g2 = Arc::clone(&g);
    let waiter = thread::spawn(move || g2.gather_actions(&[request(0, 4, 1, InterventionKind::Teleop)], None).unwrap());
    assert!(a.recv_until(WAIT, is_observation).unwrap().is_some());

    a.send(&SessionMsg::Action { t: 3, action: 1 }).unwrap();
    let m = a.recv_until(WAIT, |m| error_code(m).is_some()).unwrap().unwrap();
    assert_eq!(error_code(&m), Some(codes::STALE));

    a.send(&SessionMsg::Action { t: 4, action: 7 }).unwrap();
    let m = a.recv_until(WAIT, |m| error_code(m).is_some()).unwrap().unwrap();
    assert_eq!(error_code(&m), Some(codes::INVALID_ACTION));
    // Re-prompted with the same observation.
    assert!(matches!(a.recv_until(WAIT, is_observation).unwrap(), Some(SessionMsg::Observation { t: 4, .. })));

    a.send(&SessionMsg::HardResetAck { t: 4 }).unwrap();
    let m = a.recv_until(WAIT, |m| error_code(m).is_some()).unwrap().unwrap();
    assert_eq!(error_code(&m), Some(codes::WRONG_ANSWER_KIND));

    a.send(&SessionMsg::Action { t: 4, action: 3 }).unwrap();
    assert_eq!(waiter.join().unwrap(), vec![SupervisorAction::Move(3)]);

    // A late duplicate is stale.
    a.send(&SessionMsg::Action { t: 4, action: 0 }).unwrap();
    let m = a.recv_until(WAIT, |m| error_code(m).is_some()).unwrap().unwrap();
    assert_eq!(error_code(&m), Some(codes::STALE));
}

#[test]
fn reconnect_receives_the_outstanding_offer() {
    let g = Arc::new(gateway(1, None));
    let (mut a, _) = GatewayClient::join(&g.url(), None, None).unwrap();
    let g2 = Arc::clone(&g);
    let waiter = thread::spawn(move || g2.gather_actions(&[request(0, 9, 2, InterventionKind::Teleop)], None).unwrap());
    assert!(a.recv_until(WAIT, is_observation).unwrap().is_some());
    a.close();

    let start = Instant::now();
    while !g.connected().is_empty() {
        assert!(start.elapsed() < WAIT, "disconnect not noticed");
        thread::sleep(Duration::from_millis(10));
    }
    assert!(g.is_paused());

    let (mut b, hello) = GatewayClient::join(&g.url(), None, None).unwrap();
    assert!(matches!(hello, SessionMsg::Hello { human: Some(0), .. }));
    let offer = b.recv_until(WAIT, |m| matches!(m, SessionMsg::AssignmentOffer { .. })).unwrap().unwrap();
    assert!(matches!(offer, SessionMsg::AssignmentOffer { t: 9, robot: Some(2), .. }));
    assert!(b.recv_until(WAIT, is_observation).unwrap().is_some());
    b.send(&SessionMsg::Action { t: 9, action: 1 }).unwrap();
    assert_eq!(waiter.join().unwrap(), vec![SupervisorAction::Move(1)]);
}

#[test]
fn timeout_pauses_and_retry_resumes() {
    let g = gateway(1, None);
    let (mut a, _) = GatewayClient::join(&g.url(), None, None).unwrap();
    let reqs = [request(0, 1, 0, InterventionKind::Teleop)];
    let err = g.gather_actions(&reqs, Some(Duration::from_millis(100))).unwrap_err();
    assert!(err.to_string().contains("timed out"));
    assert!(g.is_paused());
    assert!(a.recv_until(WAIT, |m| matches!(m, SessionMsg::Pause { .. })).unwrap().is_some());

    thread::scope(|s| {
        let h = s.spawn(|| g.gather_actions(&reqs, None).unwrap());
        assert!(a.recv_until(WAIT, |m| matches!(m, SessionMsg::Resume {})).unwrap().is_some());
        assert!(a.recv_until(WAIT, is_observation).unwrap().is_some());
        a.send(&SessionMsg::Action { t: 1, action: 0 }).unwrap();
        assert_eq!(h.join().unwrap(), vec![SupervisorAction::Move(0)]);
    });
}

#[test]
fn metrics_ticks_and_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let g = Gateway::serve(
        "127.0.0.1:0",
        GatewayConfig { capacity: 1, action_arity: 4, token: None, transcript_dir: Some(dir.path().to_path_buf()) },
    )
    .unwrap();
    let (mut a, hello) = GatewayClient::join(&g.url(), None, None).unwrap();
    let SessionMsg::Hello { session: Some(session), .. } = hello else { panic!("no session id") };
    let rec = MetricsRecord { t: 3, cum_successes: 2, ..Default::default() };
    g.publish_metrics(&rec);
    assert_eq!(g.last_tick(), Some(rec));
    let tick = a.recv_until(WAIT, |m| matches!(m, SessionMsg::MetricsTick { .. })).unwrap().unwrap();
    assert_eq!(tick, SessionMsg::MetricsTick { record: rec });

    let kinds: Vec<(String, &str)> = g.transcript(&session).iter().map(|e| (e.dir.clone(), e.msg.kind())).collect();
    assert_eq!(kinds[0], ("in".to_string(), "hello"));
    assert_eq!(kinds[1], ("out".to_string(), "hello"));
    assert!(kinds.contains(&("out".to_string(), "metrics_tick")));
    let file = std::fs::read_to_string(dir.path().join(format!("session-{session}.jsonl"))).unwrap();
    assert_eq!(file.lines().count(), kinds.len());
}

/// Answers every observation with the scripted expert's action.
fn expert_bot(url: String, human: usize, stop: Arc<AtomicBool>, cfg: RunConfig) -> thread::JoinHandle<usize> {
    thread::spawn(move || {
        let env = cfg.env.build().unwrap();
        let (mut c, _) = GatewayClient::join(&url, None, Some(human)).unwrap();
        let mut answered = 0;
        while !stop.load(Ordering::SeqCst) {
            let Ok(Some(msg)) = c.recv_timeout(Duration::from_millis(50)) else { continue };
            if let SessionMsg::Observation { t, position, goal, .. } = msg {
                let state = RobotState::new(position, goal);
                let reply = match expert_policy(&env, &state).unwrap().action {
                    SupervisorAction::HardReset => SessionMsg::HardResetAck { t },
                    SupervisorAction::Move(a) => SessionMsg::Action { t, action: a },
                };
                c.send(&reply).unwrap();
                answered += 1;
            }
        }
        answered
    })
}

#[test]
fn gateway_run_with_expert_bots_matches_scripted_run() {
    let cfg = RunConfig { num_robots: 6, num_humans: 2, timesteps: 60, ..Default::default() };
    let g = Gateway::serve(
        "127.0.0.1:0",
        GatewayConfig {
            capacity: 2,
            action_arity: cfg.env.build().unwrap().spec().action_arity,
            token: None,
            transcript_dir: None,
        },
    )
    .unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let bots: Vec<_> = (0..2).map(|h| expert_bot(g.url(), h, Arc::clone(&stop), cfg.clone())).collect();

    let sup = GatewaySupervisor::new(&g, None, cfg.t_teleop, cfg.t_reset);
    let live = Experiment::new(&cfg, 5, Box::new(sup)).unwrap().run().unwrap();
    stop.store(true, Ordering::SeqCst);
    let answered: usize = bots.into_iter().map(|b| b.join().unwrap()).sum();

    let scripted = run_scripted(&cfg, 5).unwrap();
    assert_eq!(live.digests().unwrap(), scripted.digests().unwrap());
    assert_eq!(answered as u64, live.final_metrics().cum_human_steps);
    assert_eq!(g.last_tick(), Some(live.final_metrics()));
}

#[test]
fn absent_supervisor_pauses_until_they_join() {
    let g = Arc::new(gateway(2, None));
    let (mut a, _) = GatewayClient::join(&g.url(), None, Some(0)).unwrap();
    let g2 = Arc::clone(&g);
    let waiter = thread::spawn(move || {
        g2.gather_actions(&[request(0, 2, 0, InterventionKind::Teleop), request(1, 2, 1, InterventionKind::Teleop)], None)
            .unwrap()
    });
    let pause = a.recv_until(WAIT, |m| matches!(m, SessionMsg::Pause { .. })).unwrap().unwrap();
    assert!(matches!(pause, SessionMsg::Pause { reason } if reason.contains("[1]")));
    assert!(g.is_paused());
    a.send(&SessionMsg::Action { t: 2, action: 0 }).unwrap();

    let (mut b, _) = GatewayClient::join(&g.url(), None, Some(1)).unwrap();
    assert!(a.recv_until(WAIT, |m| matches!(m, SessionMsg::Resume {})).unwrap().is_some());
    assert!(b.recv_until(WAIT, is_observation).unwrap().is_some());
    b.send(&SessionMsg::Action { t: 2, action: 1 }).unwrap();
    assert_eq!(waiter.join().unwrap(), vec![SupervisorAction::Move(0), SupervisorAction::Move(1)]);
}
