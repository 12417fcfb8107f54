//! TCP execution across workers.
//!
//! The coordinator owns the control plane: it handshakes with every worker,
//! sends the unit placement, feeds the input records and collects the final
//! unit states. Workers host units and exchange data frames directly.
//!
//! Every connection opens with a control `HELLO` frame carrying a
//! [`Handshake`]. On control connections both routing fields are `0xFFFF`;
//! on data connections they name the sending unit (processor, partition),
//! with the coordinator's feeder using `(0xFFFF, 0)`. Control opcodes travel
//! in the sequence field.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use smdm_core::codec::{Reader, Writer};
use smdm_core::Instance;

use crate::assignment::{Assignment, PeerTable};
use crate::topology::{EdgeId, ProcId, Topology, EXTERNAL_EDGE_MAX, FIRST_EXTERNAL_EDGE};
use crate::unit::{ChannelKey, Msg, Step, UnitCore};
use crate::wire::{encode_instance, event_from_frame, EventKind, Frame, FrameKind, Handshake, ReadError};
use crate::{EngineError, Pipeline, RunResult, UnitStats, WorkerId};

const CONTROL_MARK: u16 = 0xFFFF;
/// Worker id used by the coordinator's feeder and for "no worker".
const COORDINATOR: WorkerId = 0xFFFF;

const OP_HELLO: u64 = 0;
const OP_ASSIGN: u64 = 1;
const OP_START: u64 = 2;
const OP_ABORT: u64 = 3;
const OP_DONE: u64 = 4;
const OP_READY: u64 = 5;

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistributedOptions {
    pub connect_timeout: Duration,
    /// Limit for each setup phase (handshake, assignment, readiness).
    pub phase_timeout: Duration,
    /// Limit for the whole data phase.
    pub run_timeout: Duration,
    /// Unacknowledged frames allowed per connection.
    pub window: u64,
    pub ack_every: u64,
    /// Fault injection: the worker drops every connection once it has received this many data frames.
    pub crash_after_frames: Option<u64>,
}

impl Default for DistributedOptions {
    fn default() -> Self {
        Self {
            connect_timeout: Duration::from_secs(10),
            phase_timeout: Duration::from_secs(10),
            run_timeout: Duration::from_secs(600),
            window: 1024,
            ack_every: 64,
            crash_after_frames: None,
        }
    }
}

impl DistributedOptions {
    fn validate(&self) -> Result<(), EngineError> {
        if self.window == 0 || self.ack_every == 0 || self.ack_every > self.window {
            return Err(EngineError::InvalidPipeline(format!(
                "flow control needs 0 < ack_every <= window, got {} and {}",
                self.ack_every, self.window
            )));
        }
        Ok(())
    }
}

fn control(opcode: u64, payload: Vec<u8>) -> Frame {
    Frame::new(FrameKind::Control, CONTROL_MARK, CONTROL_MARK, opcode, payload)
}

fn abort_frame(lost: WorkerId, message: &str) -> Frame {
    let mut w = Writer::new();
    w.u16(lost).str16(message);
    control(OP_ABORT, w.into_bytes())
}

fn abort_error(payload: &[u8]) -> EngineError {
    let mut r = Reader::new(payload);
    match (r.u16(), r.str16()) {
        (Ok(lost), _) if lost != COORDINATOR => EngineError::ConnectionLost(lost),
        (Ok(_), Ok(message)) => EngineError::Aborted(message),
        _ => EngineError::Aborted("peer aborted the run".into()),
    }
}

fn lost_worker(e: &EngineError) -> WorkerId {
    match e {
        EngineError::ConnectionLost(w) => *w,
        _ => COORDINATOR,
    }
}

fn mismatch(expected: &Handshake, got: &Handshake) -> Option<String> {
    if got.topology_hash != expected.topology_hash {
        Some(format!(
            "topology hash {:#018x} != {:#018x}",
            got.topology_hash, expected.topology_hash
        ))
    } else if got.schema_hash != expected.schema_hash {
        Some(format!(
            "schema hash {:#018x} != {:#018x}",
            got.schema_hash, expected.schema_hash
        ))
    } else if got.worker_id != expected.worker_id {
        Some(format!("worker id {} != {}", got.worker_id, expected.worker_id))
    } else {
        None
    }
}

fn encode_state(snapshot: &[u8], stats: &UnitStats) -> Vec<u8> {
    let mut w = Writer::with_capacity(snapshot.len() + 64);
    w.blob(snapshot);
    for counts in [&stats.received, &stats.emitted] {
        w.u16(counts.len() as u16);
        for (&e, &n) in counts {
            w.u16(e).u64(n);
        }
    }
    w.into_bytes()
}

fn decode_state(payload: &[u8]) -> Result<(Vec<u8>, UnitStats), EngineError> {
    let run = || -> Result<(Vec<u8>, UnitStats), smdm_core::codec::DecodeError> {
        let mut r = Reader::new(payload);
        let snapshot = r.blob()?.to_vec();
        let mut stats = UnitStats::default();
        for counts in [&mut stats.received, &mut stats.emitted] {
            for _ in 0..r.u16()? {
                counts.insert(r.u16()?, r.u64()?);
            }
        }
        r.finish()?;
        Ok((snapshot, stats))
    };
    run().map_err(|e| EngineError::Protocol(format!("bad state transfer: {e}")))
}

/// Clones of every socket, so a failing run can tear them all down.
#[derive(Default)]
struct Sockets(Mutex<Vec<TcpStream>>);

impl Sockets {
    fn track(&self, s: &TcpStream) {
        if let Ok(c) = s.try_clone() {
            self.0.lock().unwrap().push(c);
        }
    }

    fn kill_all(&self) {
        for s in self.0.lock().unwrap().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
    }

    fn release(&self) {
        self.0.lock().unwrap().clear();
    }
}

fn connect(addr: &str, peer: WorkerId, timeout: Duration) -> Result<TcpStream, EngineError> {
    let deadline = Instant::now() + timeout;
    loop {
        let attempt = addr.to_socket_addrs().and_then(|mut it| {
            let sa = it
                .next()
                .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "no address"))?;
            let left = deadline.saturating_duration_since(Instant::now()).max(POLL);
            TcpStream::connect_timeout(&sa, left.min(Duration::from_secs(1)))
        });
        match attempt {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) if Instant::now() >= deadline => {
                return Err(EngineError::Timeout(format!("connect to worker {peer} at {addr}: {e}")))
            }
            Err(_) => thread::sleep(POLL * 2),
        }
    }
}

fn write_control(s: &mut TcpStream, frame: &Frame, peer: WorkerId) -> Result<(), EngineError> {
    frame.write_to(s).map_err(|_| EngineError::ConnectionLost(peer))
}

/// Reads the next control frame within `timeout`.
fn read_control(s: &mut TcpStream, timeout: Duration, peer: WorkerId, phase: &str) -> Result<Frame, EngineError> {
    s.set_read_timeout(Some(timeout))?;
    match Frame::read_from(s) {
        Ok(Some(f)) if f.kind == FrameKind::Control => Ok(f),
        Ok(Some(f)) => Err(EngineError::Protocol(format!(
            "expected a control frame during {phase}, got {:?}",
            f.kind
        ))),
        Ok(None) => Err(EngineError::ConnectionLost(peer)),
        Err(ReadError::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
            Err(EngineError::Timeout(format!("{phase} with worker {peer}")))
        }
        Err(ReadError::Io(_)) => Err(EngineError::ConnectionLost(peer)),
        Err(ReadError::Wire(e)) => Err(e.into()),
    }
}

#[derive(Default)]
struct AckState {
    /// (frames acknowledged, connection closed)
    inner: Mutex<(u64, bool)>,
    cv: Condvar,
}

/// Outgoing data connection with a credit window.
struct Link {
    peer: WorkerId,
    stream: TcpStream,
    sent: u64,
    acks: Arc<AckState>,
    window: u64,
    stall: Duration,
}

impl Link {
    fn open(
        addr: &str,
        peer: WorkerId,
        hello: Handshake,
        from: (u16, u16),
        opts: &DistributedOptions,
        sockets: &Sockets,
    ) -> Result<Self, EngineError> {
        let mut stream = connect(addr, peer, opts.connect_timeout)?;
        sockets.track(&stream);
        Frame::new(FrameKind::Control, from.0, from.1, OP_HELLO, hello.encode())
            .write_to(&mut stream)
            .map_err(|_| EngineError::ConnectionLost(peer))?;
        let acks = Arc::new(AckState::default());
        let mut reader = stream.try_clone()?;
        let state = Arc::clone(&acks);
        thread::spawn(move || {
            while let Ok(Some(f)) = Frame::read_from(&mut reader) {
                if f.kind == FrameKind::Ack {
                    let mut g = state.inner.lock().unwrap();
                    g.0 = g.0.max(f.seq);
                    state.cv.notify_all();
                }
            }
            state.inner.lock().unwrap().1 = true;
            state.cv.notify_all();
        });
        Ok(Self {
            peer,
            stream,
            sent: 0,
            acks,
            window: opts.window,
            stall: opts.run_timeout,
        })
    }

    fn send(&mut self, frame: &Frame) -> Result<(), EngineError> {
        {
            let deadline = Instant::now() + self.stall;
            let mut g = self.acks.inner.lock().unwrap();
            while self.sent - g.0 >= self.window {
                if g.1 {
                    return Err(EngineError::ConnectionLost(self.peer));
                }
                let now = Instant::now();
                if now >= deadline {
                    return Err(EngineError::Timeout(format!(
                        "acknowledgement from worker {}",
                        self.peer
                    )));
                }
                g = self.acks.cv.wait_timeout(g, deadline - now).unwrap().0;
            }
        }
        frame
            .write_to(&mut self.stream)
            .map_err(|_| EngineError::ConnectionLost(self.peer))?;
        self.sent += 1;
        Ok(())
    }

    fn close(mut self) -> Result<(), EngineError> {
        write_control(&mut self.stream, &control(OP_DONE, Vec::new()), self.peer)?;
        let _ = self.stream.shutdown(Shutdown::Write);
        Ok(())
    }
}

fn destination(topo: &Topology, edge: EdgeId) -> Option<ProcId> {
    if edge >= FIRST_EXTERNAL_EDGE {
        let p = EXTERNAL_EDGE_MAX - edge;
        ((p as usize) < topo.processor_count() && topo.is_source(p)).then_some(p)
    } else {
        ((edge as usize) < topo.edge_count()).then(|| topo.edge_endpoints(edge).1)
    }
}

// ---------------------------------------------------------------- worker

enum WorkerEvent {
    Control(TcpStream, Handshake),
    ControlFrame(Frame),
    ControlClosed,
    UnitDone {
        unit: (ProcId, u16),
        snapshot: Vec<u8>,
        stats: UnitStats,
    },
    Failed(EngineError),
    Crash,
}

type Inbound = ((ProcId, u16), ChannelKey, Msg);

struct WorkerShared {
    pipeline: Pipeline,
    me: Handshake,
    opts: DistributedOptions,
    sockets: Sockets,
    stop: AtomicBool,
    received: AtomicU64,
}

/// Serves one run on `listener`, returning once the local units have
/// finished and their states have been handed to the coordinator.
pub fn run_worker(
    pipeline: &Pipeline,
    worker_id: WorkerId,
    listener: TcpListener,
    opts: &DistributedOptions,
) -> Result<(), EngineError> {
    opts.validate()?;
    if worker_id == COORDINATOR {
        return Err(EngineError::InvalidPipeline("worker id 65535 is reserved".into()));
    }
    let shared = Arc::new(WorkerShared {
        pipeline: pipeline.clone(),
        me: Handshake {
            topology_hash: pipeline.topology().hash(),
            schema_hash: pipeline.schema_hash(),
            worker_id,
        },
        opts: opts.clone(),
        sockets: Sockets::default(),
        stop: AtomicBool::new(false),
        received: AtomicU64::new(0),
    });
    let (ev_tx, ev_rx) = mpsc::channel();
    let (in_tx, in_rx) = mpsc::channel::<Inbound>();
    listener.set_nonblocking(true)?;
    {
        let shared = Arc::clone(&shared);
        let ev_tx = ev_tx.clone();
        thread::spawn(move || accept_loop(listener, shared, ev_tx, in_tx));
    }
    let result = worker_session(&shared, &ev_rx, ev_tx, in_rx);
    shared.stop.store(true, Ordering::SeqCst);
    match &result {
        Ok(()) => shared.sockets.release(),
        Err(e) => {
            warn!("worker {worker_id}: {e}");
            shared.sockets.kill_all();
        }
    }
    result
}

fn accept_loop(listener: TcpListener, shared: Arc<WorkerShared>, ev: Sender<WorkerEvent>, inbox: Sender<Inbound>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if stream.set_nonblocking(false).is_err() || stream.set_nodelay(true).is_err() {
                    continue;
                }
                shared.sockets.track(&stream);
                let shared = Arc::clone(&shared);
                let ev = ev.clone();
                let inbox = inbox.clone();
                thread::spawn(move || serve_connection(stream, shared, ev, inbox));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL / 2),
            Err(e) => {
                let _ = ev.send(WorkerEvent::Failed(e.into()));
                return;
            }
        }
    }
}

fn serve_connection(mut stream: TcpStream, shared: Arc<WorkerShared>, ev: Sender<WorkerEvent>, inbox: Sender<Inbound>) {
    if stream.set_read_timeout(Some(shared.opts.phase_timeout)).is_err() {
        return;
    }
    let hello = match Frame::read_from(&mut stream) {
        Ok(Some(f)) if f.kind == FrameKind::Control && f.seq == OP_HELLO => f,
        _ => return,
    };
    let Ok(peer) = Handshake::decode(&hello.payload) else {
        return;
    };
    if stream.set_read_timeout(None).is_err() {
        return;
    }
    if (hello.edge_id, hello.target_partition) == (CONTROL_MARK, CONTROL_MARK) {
        let _ = ev.send(WorkerEvent::Control(stream, peer));
        return;
    }
    let expected = Handshake {
        worker_id: peer.worker_id,
        ..shared.me
    };
    if let Some(detail) = mismatch(&expected, &peer) {
        let _ = ev.send(WorkerEvent::Failed(EngineError::HandshakeMismatch {
            worker: peer.worker_id,
            detail,
        }));
        return;
    }
    match receive_data(
        &mut stream,
        hello.target_partition,
        peer.worker_id,
        &shared,
        &ev,
        &inbox,
    ) {
        Ok(()) => {}
        Err(e) if !shared.stop.load(Ordering::SeqCst) => {
            let _ = ev.send(WorkerEvent::Failed(e));
        }
        Err(_) => {}
    }
    let _ = stream.shutdown(Shutdown::Both);
}

fn receive_data(
    stream: &mut TcpStream,
    upstream: u16,
    peer: WorkerId,
    shared: &WorkerShared,
    ev: &Sender<WorkerEvent>,
    inbox: &Sender<Inbound>,
) -> Result<(), EngineError> {
    let topo = shared.pipeline.topology();
    let mut writer = stream.try_clone()?;
    let mut count = 0u64;
    let mut done = false;
    loop {
        let frame = match Frame::read_from(stream) {
            Ok(Some(f)) => f,
            Ok(None) | Err(ReadError::Io(_)) if done => return Ok(()),
            Ok(None) | Err(ReadError::Io(_)) => return Err(EngineError::ConnectionLost(peer)),
            Err(ReadError::Wire(e)) => return Err(e.into()),
        };
        match frame.kind {
            FrameKind::Control if frame.seq == OP_DONE => done = true,
            FrameKind::Data | FrameKind::EndOfStream => {
                let edge = frame.edge_id;
                let to = destination(topo, edge)
                    .ok_or_else(|| EngineError::Protocol(format!("frame for unknown edge {edge}")))?;
                let is_end = frame.kind == FrameKind::EndOfStream;
                let event = event_from_frame(frame, shared.pipeline.edge_schema(edge))?;
                let msg = match event.kind {
                    EventKind::Data(inst) => Msg::Data(event.seq, inst),
                    EventKind::EndOfStream => Msg::End(event.seq),
                };
                if inbox
                    .send(((to, event.target_partition), (edge, upstream), msg))
                    .is_err()
                {
                    return Ok(());
                }
                count += 1;
                if let (Some(limit), false) = (shared.opts.crash_after_frames, is_end) {
                    if shared.received.fetch_add(1, Ordering::SeqCst) + 1 >= limit {
                        let _ = ev.send(WorkerEvent::Crash);
                        return Ok(());
                    }
                }
                if is_end || count.is_multiple_of(shared.opts.ack_every) {
                    Frame::new(FrameKind::Ack, edge, 0, count, Vec::new())
                        .write_to(&mut writer)
                        .map_err(|_| EngineError::ConnectionLost(peer))?;
                }
            }
            other => {
                return Err(EngineError::Protocol(format!(
                    "unexpected {other:?} frame on a data connection"
                )))
            }
        }
    }
}

fn worker_session(
    shared: &Arc<WorkerShared>,
    ev_rx: &Receiver<WorkerEvent>,
    ev_tx: Sender<WorkerEvent>,
    in_rx: Receiver<Inbound>,
) -> Result<(), EngineError> {
    let me = shared.me;
    let opts = &shared.opts;
    let pipeline = &shared.pipeline;

    let (mut ctl, coord) = loop {
        match ev_rx.recv_timeout(opts.run_timeout) {
            Ok(WorkerEvent::Control(s, h)) => break (s, h),
            Ok(WorkerEvent::Failed(e)) => return Err(e),
            Ok(WorkerEvent::Crash) => return Err(crashed()),
            Ok(_) => {}
            Err(_) => return Err(EngineError::Timeout("waiting for the coordinator".into())),
        }
    };
    write_control(&mut ctl, &control(OP_HELLO, me.encode()), COORDINATOR)?;
    if let Some(detail) = mismatch(&me, &coord) {
        return Err(EngineError::HandshakeMismatch {
            worker: me.worker_id,
            detail,
        });
    }
    debug!("worker {}: handshake complete", me.worker_id);

    let f = read_control(&mut ctl, opts.phase_timeout, COORDINATOR, "assignment")?;
    let assignment = match f.seq {
        OP_ASSIGN => Arc::new(Assignment::decode(&f.payload)?),
        OP_ABORT => return Err(abort_error(&f.payload)),
        op => return Err(EngineError::Protocol(format!("expected assignment, got opcode {op}"))),
    };
    assignment.validate(pipeline.topology())?;
    let local_units = assignment.units_of(me.worker_id);
    debug!("worker {}: hosting {:?}", me.worker_id, local_units);

    let mut inboxes = BTreeMap::new();
    let mut receivers = Vec::new();
    for &u in &local_units {
        let (tx, rx) = mpsc::channel();
        inboxes.insert(u, tx);
        receivers.push((u, rx));
    }
    let mut runners = Vec::new();
    for (u, rx) in receivers {
        let mut links = BTreeMap::new();
        for peer in downstream_workers(pipeline.topology(), &assignment, u) {
            if peer == me.worker_id {
                continue;
            }
            let addr = assignment
                .peers
                .address(peer)
                .ok_or_else(|| EngineError::InvalidPipeline(format!("worker {peer} has no address")))?;
            links.insert(peer, Link::open(addr, peer, me, u, opts, &shared.sockets)?);
        }
        runners.push(UnitRunner {
            core: UnitCore::new(pipeline, u.0, u.1)?,
            inbox: rx,
            local: inboxes.clone(),
            links,
            assignment: Arc::clone(&assignment),
            shared: Arc::clone(shared),
            events: ev_tx.clone(),
        });
    }
    for r in runners {
        thread::spawn(move || r.run());
    }
    {
        let ev = ev_tx.clone();
        thread::spawn(move || {
            for (unit, ch, msg) in in_rx {
                match inboxes.get(&unit) {
                    Some(tx) => {
                        let _ = tx.send((ch, msg));
                    }
                    None => {
                        let _ = ev.send(WorkerEvent::Failed(EngineError::Protocol(format!(
                            "unit {unit:?} is not hosted here"
                        ))));
                    }
                }
            }
        });
    }

    write_control(&mut ctl, &control(OP_READY, Vec::new()), COORDINATOR)?;
    let f = read_control(&mut ctl, opts.run_timeout, COORDINATOR, "start")?;
    match f.seq {
        OP_START => {}
        OP_ABORT => return Err(abort_error(&f.payload)),
        op => return Err(EngineError::Protocol(format!("expected start, got opcode {op}"))),
    }
    ctl.set_read_timeout(None)?;
    {
        let mut reader = ctl.try_clone()?;
        let ev = ev_tx.clone();
        thread::spawn(move || loop {
            match Frame::read_from(&mut reader) {
                Ok(Some(f)) => {
                    if ev.send(WorkerEvent::ControlFrame(f)).is_err() {
                        return;
                    }
                }
                _ => {
                    let _ = ev.send(WorkerEvent::ControlClosed);
                    return;
                }
            }
        });
    }
    drop(ev_tx);

    let deadline = Instant::now() + opts.run_timeout;
    let mut finished = BTreeMap::new();
    while finished.len() < local_units.len() {
        let left = deadline.saturating_duration_since(Instant::now());
        match ev_rx.recv_timeout(left) {
            Ok(WorkerEvent::UnitDone { unit, snapshot, stats }) => {
                finished.insert(unit, (snapshot, stats));
            }
            Ok(WorkerEvent::Failed(e)) => {
                let _ = abort_frame(lost_worker(&e), &e.to_string()).write_to(&mut ctl);
                return Err(e);
            }
            Ok(WorkerEvent::Crash) => return Err(crashed()),
            Ok(WorkerEvent::ControlFrame(f)) if f.seq == OP_ABORT => return Err(abort_error(&f.payload)),
            Ok(WorkerEvent::ControlFrame(f)) => {
                return Err(EngineError::Protocol(format!("unexpected control opcode {}", f.seq)))
            }
            Ok(WorkerEvent::ControlClosed) => {
                return Err(EngineError::Aborted("coordinator closed the control connection".into()))
            }
            Ok(WorkerEvent::Control(..)) => {}
            Err(RecvTimeoutError::Timeout) => return Err(EngineError::Timeout("data phase".into())),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(EngineError::Aborted("worker threads exited early".into()))
            }
        }
    }
    for ((p, i), (snapshot, stats)) in finished {
        let frame = Frame::new(FrameKind::StateTransfer, p, i, 0, encode_state(&snapshot, &stats));
        write_control(&mut ctl, &frame, COORDINATOR)?;
    }
    write_control(&mut ctl, &control(OP_DONE, Vec::new()), COORDINATOR)?;
    let _ = ctl.shutdown(Shutdown::Write);
    debug!("worker {}: done", me.worker_id);
    Ok(())
}

fn crashed() -> EngineError {
    EngineError::Aborted("fault injection: worker dropped its connections".into())
}

fn downstream_workers(topo: &Topology, assignment: &Assignment, unit: (ProcId, u16)) -> BTreeSet<WorkerId> {
    let mut out = BTreeSet::new();
    for e in topo.outgoing(unit.0) {
        let to = topo.edge_endpoints(e).1;
        for part in 0..topo.parallelism(to) {
            if let Some(w) = assignment.worker_of((to, part)) {
                out.insert(w);
            }
        }
    }
    out
}

struct UnitRunner {
    core: UnitCore,
    inbox: Receiver<(ChannelKey, Msg)>,
    local: BTreeMap<(ProcId, u16), Sender<(ChannelKey, Msg)>>,
    links: BTreeMap<WorkerId, Link>,
    assignment: Arc<Assignment>,
    shared: Arc<WorkerShared>,
    events: Sender<WorkerEvent>,
}

impl UnitRunner {
    fn run(mut self) {
        let unit = (self.core.proc, self.core.partition);
        let event = match self.drive() {
            Ok(()) => WorkerEvent::UnitDone {
                unit,
                snapshot: self.core.snapshot(),
                stats: self.core.stats().clone(),
            },
            Err(_) if self.shared.stop.load(Ordering::SeqCst) => return,
            Err(e) => WorkerEvent::Failed(e),
        };
        let _ = self.events.send(event);
    }

    fn drive(&mut self) -> Result<(), EngineError> {
        let mut out = Vec::new();
        loop {
            let step = self.core.step(&mut out, None)?;
            for o in out.drain(..) {
                self.dispatch(o.edge, (o.to_proc, o.to_partition), o.msg)?;
            }
            match step {
                Step::Processed => {}
                Step::Finished => break,
                Step::Blocked => loop {
                    match self.inbox.recv_timeout(POLL * 5) {
                        Ok((ch, msg)) => {
                            self.core.push(ch, msg)?;
                            while let Ok((ch, msg)) = self.inbox.try_recv() {
                                self.core.push(ch, msg)?;
                            }
                            break;
                        }
                        Err(RecvTimeoutError::Timeout) if !self.shared.stop.load(Ordering::SeqCst) => {}
                        Err(_) => return Err(EngineError::Aborted("unit inbox closed".into())),
                    }
                },
            }
        }
        for link in std::mem::take(&mut self.links).into_values() {
            link.close()?;
        }
        Ok(())
    }

    fn dispatch(&mut self, edge: EdgeId, dest: (ProcId, u16), msg: Msg) -> Result<(), EngineError> {
        let worker = self
            .assignment
            .worker_of(dest)
            .ok_or_else(|| EngineError::Protocol(format!("unit {dest:?} is not placed")))?;
        if worker == self.shared.me.worker_id {
            return self.local[&dest]
                .send(((edge, self.core.partition), msg))
                .map_err(|_| EngineError::Aborted(format!("local unit {dest:?} has stopped")));
        }
        let frame = match msg {
            Msg::Data(seq, inst) => Frame::new(
                FrameKind::Data,
                edge,
                dest.1,
                seq,
                encode_instance(&inst, self.shared.pipeline.edge_schema(edge))?,
            ),
            Msg::End(seq) => Frame::new(FrameKind::EndOfStream, edge, dest.1, seq, Vec::new()),
        };
        self.links
            .get_mut(&worker)
            .ok_or_else(|| EngineError::Protocol(format!("no connection to worker {worker}")))?
            .send(&frame)
    }
}

// ----------------------------------------------------------- coordinator

/// Runs the pipeline on the workers in `peers`, placing units round-robin.
pub fn run_coordinator<I>(
    pipeline: &Pipeline,
    peers: &PeerTable,
    records: I,
    opts: &DistributedOptions,
) -> Result<RunResult, EngineError>
where
    I: IntoIterator<Item = Instance>,
{
    if peers.is_empty() {
        return Err(EngineError::InvalidPipeline("no workers".into()));
    }
    run_assigned(
        pipeline,
        &Assignment::round_robin(pipeline.topology(), peers),
        records,
        opts,
    )
}

/// Runs the pipeline with an explicit placement.
pub fn run_assigned<I>(
    pipeline: &Pipeline,
    assignment: &Assignment,
    records: I,
    opts: &DistributedOptions,
) -> Result<RunResult, EngineError>
where
    I: IntoIterator<Item = Instance>,
{
    opts.validate()?;
    assignment.validate(pipeline.topology())?;
    let sockets = Sockets::default();
    let mut controls = BTreeMap::new();
    let result = coordinate(pipeline, assignment, records, opts, &sockets, &mut controls);
    match &result {
        Ok(_) => sockets.release(),
        Err(e) => {
            warn!("coordinator: {e}");
            let frame = abort_frame(lost_worker(e), &e.to_string());
            for s in controls.values_mut() {
                let _ = frame.write_to(s);
            }
            sockets.kill_all();
        }
    }
    result
}

fn coordinate<I>(
    pipeline: &Pipeline,
    assignment: &Assignment,
    records: I,
    opts: &DistributedOptions,
    sockets: &Sockets,
    controls: &mut BTreeMap<WorkerId, TcpStream>,
) -> Result<RunResult, EngineError>
where
    I: IntoIterator<Item = Instance>,
{
    let base = Handshake {
        topology_hash: pipeline.topology().hash(),
        schema_hash: pipeline.schema_hash(),
        worker_id: COORDINATOR,
    };
    for (&w, addr) in &assignment.peers.peers {
        let mut s = connect(addr, w, opts.connect_timeout)?;
        sockets.track(&s);
        let expected = Handshake { worker_id: w, ..base };
        write_control(&mut s, &control(OP_HELLO, expected.encode()), w)?;
        let reply = read_control(&mut s, opts.phase_timeout, w, "handshake")?;
        if reply.seq != OP_HELLO {
            return Err(EngineError::Protocol(format!(
                "worker {w} answered the handshake with opcode {}",
                reply.seq
            )));
        }
        let got = Handshake::decode(&reply.payload)?;
        controls.insert(w, s);
        if let Some(detail) = mismatch(&expected, &got) {
            return Err(EngineError::HandshakeMismatch { worker: w, detail });
        }
    }
    debug!("coordinator: {} workers connected", controls.len());

    let payload = assignment.encode();
    for (&w, s) in controls.iter_mut() {
        write_control(s, &control(OP_ASSIGN, payload.clone()), w)?;
    }
    for (&w, s) in controls.iter_mut() {
        let f = read_control(s, opts.phase_timeout, w, "setup")?;
        match f.seq {
            OP_READY => {}
            OP_ABORT => return Err(abort_error(&f.payload)),
            op => {
                return Err(EngineError::Protocol(format!(
                    "worker {w} sent opcode {op} during setup"
                )))
            }
        }
    }
    let (tx, rx) = mpsc::channel();
    for (&w, s) in controls.iter_mut() {
        write_control(s, &control(OP_START, Vec::new()), w)?;
        s.set_read_timeout(None)?;
        let mut reader = s.try_clone()?;
        let tx = tx.clone();
        thread::spawn(move || loop {
            match Frame::read_from(&mut reader) {
                Ok(Some(f)) => {
                    if tx.send((w, Some(f))).is_err() {
                        return;
                    }
                }
                _ => {
                    let _ = tx.send((w, None));
                    return;
                }
            }
        });
    }
    drop(tx);

    let mut watch = Watch {
        rx,
        workers: controls.len(),
        done: BTreeSet::new(),
        aborts: Vec::new(),
        closed: Vec::new(),
        result: RunResult::default(),
    };
    if let Err(e) = feed(pipeline, assignment, records, opts, sockets) {
        return Err(watch.diagnose(e));
    }
    debug!("coordinator: input fed");

    let deadline = Instant::now() + opts.run_timeout;
    while watch.done.len() < controls.len() {
        if let Err(e) = watch.next(deadline) {
            return Err(watch.diagnose(e));
        }
    }
    let mut result = watch.result;
    let expected = pipeline.topology().units();
    if result.states.len() != expected.len() || expected.iter().any(|u| !result.states.contains_key(u)) {
        return Err(EngineError::Protocol("workers did not return every unit state".into()));
    }
    result.trace.clear();
    Ok(result)
}

struct Watch {
    rx: Receiver<(WorkerId, Option<Frame>)>,
    workers: usize,
    done: BTreeSet<WorkerId>,
    /// Workers that reported a failure, with what they reported.
    aborts: Vec<(WorkerId, EngineError)>,
    /// Workers whose control connection ended before they were done.
    closed: Vec<WorkerId>,
    result: RunResult,
}

impl Watch {
    /// Consumes one control-plane event.
    fn next(&mut self, deadline: Instant) -> Result<(), EngineError> {
        let left = deadline.saturating_duration_since(Instant::now());
        match self.rx.recv_timeout(left) {
            Ok((w, Some(f))) => match (f.kind, f.seq) {
                (FrameKind::StateTransfer, _) => {
                    let (snapshot, stats) = decode_state(&f.payload)?;
                    self.result.states.insert((f.edge_id, f.target_partition), snapshot);
                    self.result.stats.insert((f.edge_id, f.target_partition), stats);
                    Ok(())
                }
                (FrameKind::Control, OP_DONE) => {
                    self.done.insert(w);
                    Ok(())
                }
                (FrameKind::Control, OP_ABORT) => {
                    let e = abort_error(&f.payload);
                    self.aborts.push((w, e.clone()));
                    Err(e)
                }
                (kind, op) => Err(EngineError::Protocol(format!("worker {w} sent {kind:?} frame {op}"))),
            },
            Ok((w, None)) if self.done.contains(&w) => Ok(()),
            Ok((w, None)) => {
                self.closed.push(w);
                Err(EngineError::ConnectionLost(w))
            }
            Err(RecvTimeoutError::Timeout) => Err(EngineError::Timeout("data phase".into())),
            Err(RecvTimeoutError::Disconnected) => Err(EngineError::Protocol("control plane closed".into())),
        }
    }

    /// Picks the root cause of a failure.
    ///
    /// One lost worker makes its peers abort in cascade, so the first report
    /// to arrive may blame a bystander. Reports are gathered for a short
    /// while; a worker that vanished without aborting is the culprit.
    fn diagnose(&mut self, first: EngineError) -> EngineError {
        let grace = Instant::now() + Duration::from_millis(1500);
        while self.closed.len() + self.done.len() < self.workers && Instant::now() < grace {
            match self.next(grace) {
                Err(EngineError::Timeout(_)) => break,
                Err(EngineError::Protocol(m)) if m == "control plane closed" => break,
                _ => {}
            }
        }
        let aborted: BTreeSet<WorkerId> = self.aborts.iter().map(|(w, _)| *w).collect();
        if let Some(&w) = self.closed.iter().find(|w| !aborted.contains(w)) {
            return EngineError::ConnectionLost(w);
        }
        let reported = self.aborts.iter().map(|(_, e)| e);
        if let Some(e) = reported.clone().find(|e| matches!(e, EngineError::ConnectionLost(_))) {
            return e.clone();
        }
        reported.clone().next().cloned().unwrap_or(first)
    }
}

fn feed<I>(
    pipeline: &Pipeline,
    assignment: &Assignment,
    records: I,
    opts: &DistributedOptions,
    sockets: &Sockets,
) -> Result<(), EngineError>
where
    I: IntoIterator<Item = Instance>,
{
    let topo = pipeline.topology();
    let hello = Handshake {
        topology_hash: topo.hash(),
        schema_hash: pipeline.schema_hash(),
        worker_id: COORDINATOR,
    };
    let mut routes: Vec<(ProcId, EdgeId, Vec<WorkerId>)> = Vec::new();
    let mut links: BTreeMap<WorkerId, Link> = BTreeMap::new();
    for &s in topo.sources() {
        let mut hosts = Vec::new();
        for part in 0..topo.parallelism(s) {
            let w = assignment.worker_of((s, part)).expect("validated assignment");
            if let std::collections::btree_map::Entry::Vacant(slot) = links.entry(w) {
                let addr = assignment.peers.address(w).expect("validated assignment");
                slot.insert(Link::open(addr, w, hello, (CONTROL_MARK, 0), opts, sockets)?);
            }
            hosts.push(w);
        }
        routes.push((s, topo.external_edge(s), hosts));
    }
    let schema = pipeline.input_schema();
    let mut count = 0u64;
    for inst in records {
        let payload = encode_instance(&inst, schema)?;
        for (_, edge, hosts) in &routes {
            let part = (count % hosts.len() as u64) as usize;
            let frame = Frame::new(FrameKind::Data, *edge, part as u16, count, payload.clone());
            links.get_mut(&hosts[part]).unwrap().send(&frame)?;
        }
        count += 1;
    }
    for (_, edge, hosts) in &routes {
        for (part, w) in hosts.iter().enumerate() {
            let frame = Frame::new(FrameKind::EndOfStream, *edge, part as u16, count, Vec::new());
            links.get_mut(w).unwrap().send(&frame)?;
        }
    }
    for link in links.into_values() {
        link.close()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_payload_round_trip() {
        let mut stats = UnitStats::default();
        stats.received.insert(0xFFFF, 10);
        stats.emitted.insert(0, 7);
        stats.emitted.insert(3, 2);
        let bytes = encode_state(b"snap", &stats);
        assert_eq!(decode_state(&bytes).unwrap(), (b"snap".to_vec(), stats));
        assert!(decode_state(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn abort_payload_names_the_lost_worker() {
        let f = abort_frame(3, "gone");
        assert_eq!(abort_error(&f.payload), EngineError::ConnectionLost(3));
        let f = abort_frame(COORDINATOR, "logic failed");
        assert_eq!(abort_error(&f.payload), EngineError::Aborted("logic failed".into()));
    }

    #[test]
    fn options_are_checked() {
        let bad = DistributedOptions {
            ack_every: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(DistributedOptions::default().validate().is_ok());
    }
}
