use std::collections::BTreeMap;
use std::io::{ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use super::protocol::{codes, SessionMsg, PROTOCOL_VERSION};
use crate::env::{InterventionKind, SupervisorAction};
use crate::metrics::MetricsRecord;
use crate::{Error, Result};

const POLL: Duration = Duration::from_millis(10);
const HELLO_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayConfig {
    /// Number of human slots (M).
    pub capacity: usize,
    pub action_arity: usize,
    pub token: Option<String>,
    /// Directory for per-session JSONL transcripts.
    pub transcript_dir: Option<PathBuf>,
}

/// One allocated robot whose human must answer this timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionRequest {
    pub human: usize,
    pub offer: SessionMsg,
    pub observation: SessionMsg,
    t: u64,
    robot: usize,
    kind: InterventionKind,
}

impl ActionRequest {
    /// `offer` must be an [`SessionMsg::AssignmentOffer`] naming a robot and
    /// `observation` the matching [`SessionMsg::Observation`].
    pub fn new(human: usize, offer: SessionMsg, observation: SessionMsg) -> Result<Self> {
        match (&offer, &observation) {
            (
                SessionMsg::AssignmentOffer { t, robot: Some(robot), kind, .. },
                SessionMsg::Observation { t: ot, robot: or, .. },
            ) if t == ot && robot == or && *kind != InterventionKind::None => {
                Ok(ActionRequest { human, t: *t, robot: *robot, kind: *kind, offer, observation })
            }
            _ => Err(Error::usage("action request needs a matching assignment offer and observation")),
        }
    }

    fn same_question(&self, other: &ActionRequest) -> bool {
        self.t == other.t && self.robot == other.robot && self.kind == other.kind
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    /// `in` for client-to-server, `out` for server-to-client.
    pub dir: String,
    pub msg: SessionMsg,
}

struct Pending {
    request: ActionRequest,
    answer: Option<SupervisorAction>,
}

struct Slot {
    session: String,
    outbox: Sender<SessionMsg>,
}

#[derive(Default)]
struct State {
    sessions: BTreeMap<usize, Slot>,
    pending: BTreeMap<usize, Pending>,
    /// Robot last offered to each human.
    offered: BTreeMap<usize, Option<usize>>,
    next_session: u64,
    paused: bool,
    last_tick: Option<MetricsRecord>,
    transcripts: BTreeMap<String, Vec<TranscriptEntry>>,
}

impl State {
    fn send(&self, human: usize, msg: SessionMsg) {
        if let Some(slot) = self.sessions.get(&human) {
            // A closed outbox means the session is going away; it will be
            // re-offered on reconnect.
            let _ = slot.outbox.send(msg);
        }
    }

    fn broadcast(&self, msg: &SessionMsg) {
        for slot in self.sessions.values() {
            let _ = slot.outbox.send(msg.clone());
        }
    }

    fn offer(&self, p: &Pending) {
        self.send(p.request.human, p.request.offer.clone());
        self.send(p.request.human, p.request.observation.clone());
    }
}

struct Shared {
    cfg: GatewayConfig,
    state: Mutex<State>,
    changed: Condvar,
    stop: AtomicBool,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// WebSocket service through which live supervisors answer for their
/// allocated robots, one lock-step timestep at a time.
pub struct Gateway {
    shared: Arc<Shared>,
    addr: SocketAddr,
    acceptor: Option<JoinHandle<()>>,
}

impl Gateway {
    /// Binds `addr` and starts accepting sessions.
    pub fn serve(addr: &str, cfg: GatewayConfig) -> Result<Gateway> {
        let listener =
            TcpListener::bind(addr).map_err(|e| Error::Gateway(format!("cannot bind {addr}: {e}")))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        if let Some(dir) = &cfg.transcript_dir {
            std::fs::create_dir_all(dir)?;
        }
        let shared = Arc::new(Shared {
            cfg,
            state: Mutex::new(State::default()),
            changed: Condvar::new(),
            stop: AtomicBool::new(false),
        });
        let acc = Arc::clone(&shared);
        let acceptor = std::thread::spawn(move || accept_loop(listener, acc));
        log::info!("gateway listening on ws://{addr}");
        Ok(Gateway { shared, addr, acceptor: Some(acceptor) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    /// Human indices with a live session.
    pub fn connected(&self) -> Vec<usize> {
        self.shared.lock().sessions.keys().copied().collect()
    }

    pub fn last_tick(&self) -> Option<MetricsRecord> {
        self.shared.lock().last_tick
    }

    pub fn is_paused(&self) -> bool {
        self.shared.lock().paused
    }

    /// Messages exchanged with one session so far.
    pub fn transcript(&self, session: &str) -> Vec<TranscriptEntry> {
        self.shared.lock().transcripts.get(session).cloned().unwrap_or_default()
    }

    pub fn publish_metrics(&self, record: &MetricsRecord) {
        let mut st = self.shared.lock();
        st.last_tick = Some(*record);
        st.broadcast(&SessionMsg::MetricsTick { record: *record });
    }

    /// Offers every request to its human and blocks until all of them have
    /// answered. Humans without a request are told they are idle.
    ///
    /// With a timeout, an unanswered round broadcasts `Pause` and returns a
    /// gateway error; calling again with the same requests resumes, keeping
    /// answers already received.
    pub fn gather_actions(&self, requests: &[ActionRequest], timeout: Option<Duration>) -> Result<Vec<SupervisorAction>> {
        let mut seen = std::collections::HashSet::new();
        for r in requests {
            if r.human >= self.shared.cfg.capacity || !seen.insert(r.human) {
                return Err(Error::usage(format!("invalid or duplicate human {} in requests", r.human)));
            }
        }
        let deadline = timeout.map(|d| Instant::now() + d);
        let mut st = self.shared.lock();
        if st.paused {
            st.paused = false;
            st.broadcast(&SessionMsg::Resume {});
        }
        let mut pending = BTreeMap::new();
        for r in requests {
            let kept = st.pending.remove(&r.human).filter(|p| p.request.same_question(r));
            pending.insert(r.human, kept.unwrap_or(Pending { request: r.clone(), answer: None }));
        }
        st.pending = pending;
        for human in 0..self.shared.cfg.capacity {
            let robot = requests.iter().find(|r| r.human == human).map(|r| r.robot);
            if robot.is_none() && st.offered.get(&human).copied().flatten().is_some() {
                let t = requests.first().map(|r| r.t).unwrap_or_default();
                st.send(
                    human,
                    SessionMsg::AssignmentOffer { t, robot: None, kind: InterventionKind::None, elapsed: 0, min_steps: 0 },
                );
            }
            st.offered.insert(human, robot);
        }
        for p in st.pending.values().filter(|p| p.answer.is_none()) {
            st.offer(p);
        }
        // Never substitute actions for an absent human: pause until they join.
        let absent: Vec<usize> = st.pending.keys().copied().filter(|h| !st.sessions.contains_key(h)).collect();
        if !absent.is_empty() && !st.paused {
            st.paused = true;
            log::warn!("waiting for supervisors {absent:?} to connect");
            st.broadcast(&SessionMsg::Pause { reason: format!("waiting for supervisors {absent:?}") });
        }

        loop {
            if st.pending.values().all(|p| p.answer.is_some()) {
                let answers = requests
                    .iter()
                    .map(|r| st.pending[&r.human].answer.expect("checked above"))
                    .collect();
                st.pending.clear();
                return Ok(answers);
            }
            if self.shared.stop.load(Ordering::SeqCst) {
                return Err(Error::Gateway("gateway shut down".into()));
            }
            match deadline {
                None => {
                    st = self.shared.changed.wait_timeout(st, Duration::from_millis(200)).unwrap_or_else(|e| e.into_inner()).0;
                }
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        st.paused = true;
                        let waiting: Vec<usize> =
                            st.pending.iter().filter(|(_, p)| p.answer.is_none()).map(|(h, _)| *h).collect();
                        st.broadcast(&SessionMsg::Pause { reason: "timeout".into() });
                        return Err(Error::Gateway(format!("timed out waiting for humans {waiting:?}")));
                    }
                    st = self.shared.changed.wait_timeout(st, d - now).unwrap_or_else(|e| e.into_inner()).0;
                }
            }
        }
    }

    pub fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.shared.changed.notify_all();
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let sh = Arc::clone(&shared);
                std::thread::spawn(move || {
                    if let Err(e) = run_session(stream, &sh) {
                        log::debug!("session from {peer} ended: {e}");
                    }
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(POLL);
            }
        }
    }
}

struct Conn {
    ws: WebSocket<TcpStream>,
    session: String,
    log: Option<std::fs::File>,
}

impl Conn {
    fn record(&mut self, shared: &Shared, dir: &str, msg: &SessionMsg) {
        let entry = TranscriptEntry { dir: dir.into(), msg: msg.clone() };
        if let Some(f) = &mut self.log {
            let _ = writeln!(f, "{}", serde_json::to_string(&entry).expect("serializable"));
        }
        shared.lock().transcripts.entry(self.session.clone()).or_default().push(entry);
    }

    fn send(&mut self, shared: &Shared, msg: &SessionMsg) -> Result<()> {
        self.record(shared, "out", msg);
        self.ws.send(Message::text(msg.to_json())).map_err(|e| Error::Gateway(e.to_string()))
    }

    /// Next text frame, or `None` when the read timed out.
    fn poll(&mut self) -> Result<Option<String>> {
        match self.ws.read() {
            Ok(Message::Text(t)) => Ok(Some(t.to_string())),
            Ok(Message::Close(_)) => Err(Error::Gateway("closed by peer".into())),
            Ok(_) => Ok(None),
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                Ok(None)
            }
            Err(e) => Err(Error::Gateway(e.to_string())),
        }
    }

    fn close(&mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}

fn run_session(stream: TcpStream, shared: &Arc<Shared>) -> Result<()> {
    stream.set_nonblocking(false)?;
    let ws = tungstenite::accept(stream).map_err(|e| Error::Gateway(format!("handshake: {e}")))?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    let session = {
        let mut st = shared.lock();
        st.next_session += 1;
        format!("s{}", st.next_session)
    };
    let log = match &shared.cfg.transcript_dir {
        Some(dir) => Some(
            std::fs::OpenOptions::new().create(true).append(true).open(dir.join(format!("session-{session}.jsonl")))?,
        ),
        None => None,
    };
    let mut conn = Conn { ws, session, log };

    let started = Instant::now();
    let hello = loop {
        if started.elapsed() > HELLO_TIMEOUT || shared.stop.load(Ordering::SeqCst) {
            conn.close();
            return Err(Error::Gateway("no hello".into()));
        }
        if let Some(text) = conn.poll()? {
            break text;
        }
    };
    let (human, outbox) = match register(&mut conn, shared, &hello)? {
        Some(ok) => ok,
        None => {
            conn.close();
            return Ok(());
        }
    };
    let result = session_loop(&mut conn, shared, human, outbox);
    let mut st = shared.lock();
    if st.sessions.get(&human).is_some_and(|s| s.session == conn.session) {
        st.sessions.remove(&human);
        if st.pending.get(&human).is_some_and(|p| p.answer.is_none()) {
            st.paused = true;
            st.broadcast(&SessionMsg::Pause { reason: format!("supervisor {human} disconnected") });
        }
    }
    drop(st);
    log::info!("session {} (human {human}) closed", conn.session);
    result
}

/// Validates the opening hello and claims a human slot.
fn register(conn: &mut Conn, shared: &Arc<Shared>, text: &str) -> Result<Option<(usize, Receiver<SessionMsg>)>> {
    let msg = match SessionMsg::from_json(text) {
        Ok(m) => m,
        Err(e) => {
            conn.send(shared, &SessionMsg::error(codes::BAD_MESSAGE, e.to_string()))?;
            return Ok(None);
        }
    };
    conn.record(shared, "in", &msg);
    let SessionMsg::Hello { version, token, human, .. } = msg else {
        conn.send(shared, &SessionMsg::error(codes::UNEXPECTED, "expected hello"))?;
        return Ok(None);
    };
    if version != PROTOCOL_VERSION {
        let m = format!("server speaks version {PROTOCOL_VERSION}, client sent {version}");
        conn.send(shared, &SessionMsg::error(codes::VERSION, m))?;
        return Ok(None);
    }
    if shared.cfg.token.is_some() && token != shared.cfg.token {
        conn.send(shared, &SessionMsg::error(codes::AUTH, "bad token"))?;
        return Ok(None);
    }
    let (tx, rx) = mpsc::channel();
    let mut st = shared.lock();
    let cap = shared.cfg.capacity;
    let granted = match human {
        Some(h) if h < cap && !st.sessions.contains_key(&h) => Ok(h),
        Some(h) if h < cap => Err((codes::HUMAN_UNAVAILABLE, format!("human {h} already connected"))),
        Some(h) => Err((codes::HUMAN_UNAVAILABLE, format!("human {h} outside 0..{cap}"))),
        None => (0..cap)
            .find(|h| !st.sessions.contains_key(h))
            .ok_or((codes::FLEET_FULL, format!("all {cap} supervisor slots taken"))),
    };
    let h = match granted {
        Ok(h) => h,
        Err((code, m)) => {
            drop(st);
            conn.send(shared, &SessionMsg::error(code, m))?;
            return Ok(None);
        }
    };
    st.sessions.insert(h, Slot { session: conn.session.clone(), outbox: tx });
    let welcome =
        SessionMsg::Hello { version: PROTOCOL_VERSION, token: None, human: Some(h), session: Some(conn.session.clone()) };
    st.send(h, welcome);
    if let Some(rec) = st.last_tick {
        st.send(h, SessionMsg::MetricsTick { record: rec });
    }
    // Re-offer an outstanding assignment to a reconnecting human.
    if let Some(p) = st.pending.get(&h).filter(|p| p.answer.is_none()) {
        st.offer(p);
        if st.paused && st.pending.values().all(|p| p.answer.is_some() || st.sessions.contains_key(&p.request.human)) {
            st.paused = false;
            st.broadcast(&SessionMsg::Resume {});
        }
    }
    drop(st);
    log::info!("session {} joined as human {h}", conn.session);
    Ok(Some((h, rx)))
}

fn session_loop(conn: &mut Conn, shared: &Arc<Shared>, human: usize, outbox: Receiver<SessionMsg>) -> Result<()> {
    loop {
        if shared.stop.load(Ordering::SeqCst) {
            conn.close();
            return Ok(());
        }
        while let Ok(msg) = outbox.try_recv() {
            conn.send(shared, &msg)?;
        }
        let Some(text) = conn.poll()? else {
            continue;
        };
        let msg = match SessionMsg::from_json(&text) {
            Ok(m) => m,
            Err(e) => {
                conn.send(shared, &SessionMsg::error(codes::BAD_MESSAGE, e.to_string()))?;
                continue;
            }
        };
        conn.record(shared, "in", &msg);
        if let Some(reply) = handle_answer(shared, human, &msg) {
            for r in reply {
                conn.send(shared, &r)?;
            }
        }
    }
}

/// Applies an answer from `human`; returns messages to send back.
fn handle_answer(shared: &Shared, human: usize, msg: &SessionMsg) -> Option<Vec<SessionMsg>> {
    let (t, answer) = match *msg {
        SessionMsg::Action { t, action } => (t, SupervisorAction::Move(action)),
        SessionMsg::HardResetAck { t } => (t, SupervisorAction::HardReset),
        _ => return Some(vec![SessionMsg::error(codes::UNEXPECTED, format!("clients may not send {}", msg.kind()))]),
    };
    let mut st = shared.lock();
    let Some(p) = st.pending.get_mut(&human).filter(|p| p.answer.is_none() && p.request.t == t) else {
        return Some(vec![SessionMsg::error(codes::STALE, format!("no open question for timestep {t}"))]);
    };
    let reprompt = |code: &str, m: String| {
        Some(vec![SessionMsg::error(code, m), p.request.offer.clone(), p.request.observation.clone()])
    };
    match (p.request.kind, answer) {
        (InterventionKind::HardReset, SupervisorAction::Move(_)) => {
            reprompt(codes::WRONG_ANSWER_KIND, "robot is being hard-reset; answer with hard_reset_ack".into())
        }
        (InterventionKind::Teleop, SupervisorAction::HardReset) => {
            reprompt(codes::WRONG_ANSWER_KIND, "robot is not violating; answer with an action".into())
        }
        (_, SupervisorAction::Move(a)) if a >= shared.cfg.action_arity => {
            reprompt(codes::INVALID_ACTION, format!("action {a} out of range for {} actions", shared.cfg.action_arity))
        }
        _ => {
            p.answer = Some(answer);
            shared.changed.notify_all();
            None
        }
    }
}
