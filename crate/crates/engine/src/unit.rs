//! One processor partition: input merging, logic invocation and routing.
//!
//! Every input channel is identified by `(edge, upstream partition)` and
//! carries events in non-decreasing sequence order. The unit only consumes
//! once each open channel has a queued event, and then takes the smallest
//! `(seq, edge, upstream partition)`, which makes the processing order a pure
//! function of the channel contents, whatever the arrival timing.

use std::collections::{BTreeMap, VecDeque};

use smdm_core::{Cell, Instance};

use crate::topology::{key_partition, EdgeId, Grouping, ProcId};
use crate::{Delivery, EngineError, KeySource, Pipeline, UnitStats};

pub(crate) type ChannelKey = (EdgeId, u16);

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Msg {
    Data(u64, Instance),
    End(u64),
}

/// A message leaving a unit towards one downstream partition.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Outbound {
    pub edge: EdgeId,
    pub to_proc: ProcId,
    pub to_partition: u16,
    pub msg: Msg,
}

#[derive(Default)]
struct Channel {
    queue: VecDeque<(u64, Instance)>,
    closed: bool,
}

struct Route {
    edge: EdgeId,
    to_proc: ProcId,
    fanout: u16,
    grouping: Grouping,
    key: Option<KeySource>,
    round_robin: u64,
    /// Last data seq sent per downstream partition, for end-of-stream numbering.
    last_seq: Vec<Option<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Step {
    Processed,
    Blocked,
    Finished,
}

pub(crate) struct UnitCore {
    pub proc: ProcId,
    pub partition: u16,
    name: String,
    logic: Box<dyn crate::ProcessorLogic>,
    channels: BTreeMap<ChannelKey, Channel>,
    routes: Vec<Route>,
    stats: UnitStats,
    finished: bool,
    scratch: Vec<Instance>,
}

impl UnitCore {
    pub fn new(pipeline: &Pipeline, proc: ProcId, partition: u16) -> Result<Self, EngineError> {
        let topo = pipeline.topology();
        let mut channels = BTreeMap::new();
        if topo.is_source(proc) {
            channels.insert((topo.external_edge(proc), 0), Channel::default());
        }
        for e in topo.incoming(proc) {
            let (from, _) = topo.edge_endpoints(e);
            for up in 0..topo.parallelism(from) {
                channels.insert((e, up), Channel::default());
            }
        }
        let routes = topo
            .outgoing(proc)
            .map(|e| {
                let (_, to) = topo.edge_endpoints(e);
                let fanout = topo.parallelism(to);
                Route {
                    edge: e,
                    to_proc: to,
                    fanout,
                    grouping: topo.edge(e).grouping.clone(),
                    key: pipeline.key_source(e),
                    round_robin: 0,
                    last_seq: vec![None; fanout as usize],
                }
            })
            .collect();
        Ok(Self {
            proc,
            partition,
            name: topo.processor(proc).name.clone(),
            logic: pipeline.create_logic(proc, partition)?,
            channels,
            routes,
            stats: UnitStats::default(),
            finished: false,
            scratch: Vec::new(),
        })
    }

    pub fn push(&mut self, channel: ChannelKey, msg: Msg) -> Result<(), EngineError> {
        let name = &self.name;
        let ch = self.channels.get_mut(&channel).ok_or_else(|| {
            EngineError::Protocol(format!("{name}[{}] has no input channel {channel:?}", self.partition))
        })?;
        if ch.closed {
            return Err(EngineError::Protocol(format!(
                "{name}[{}] got data after end of stream on {channel:?}",
                self.partition
            )));
        }
        match msg {
            Msg::Data(seq, inst) => {
                *self.stats.received.entry(channel.0).or_default() += 1;
                ch.queue.push_back((seq, inst));
            }
            Msg::End(_) => ch.closed = true,
        }
        Ok(())
    }

    /// Processes at most one event, or finishes the unit once every input is drained.
    pub fn step(&mut self, out: &mut Vec<Outbound>, trace: Option<&mut Vec<Delivery>>) -> Result<Step, EngineError> {
        if self.finished {
            return Ok(Step::Finished);
        }
        let mut best: Option<(u64, ChannelKey)> = None;
        for (&key, ch) in &self.channels {
            match ch.queue.front() {
                Some(&(seq, _)) => {
                    if best.is_none_or(|(s, k)| (seq, key) < (s, k)) {
                        best = Some((seq, key));
                    }
                }
                None if ch.closed => {}
                None => return Ok(Step::Blocked),
            }
        }
        let Some((_, key)) = best else {
            self.finish(out)?;
            return Ok(Step::Finished);
        };
        let (seq, instance) = self.channels.get_mut(&key).unwrap().queue.pop_front().unwrap();
        self.scratch.clear();
        self.logic
            .process(seq, &instance, &mut self.scratch)
            .map_err(|message| self.fail(Some(seq), message))?;
        let outputs = std::mem::take(&mut self.scratch);
        let mut trace = trace;
        for inst in &outputs {
            self.route(seq, inst, out, trace.as_deref_mut());
        }
        self.scratch = outputs;
        Ok(Step::Processed)
    }

    fn fail(&self, seq: Option<u64>, message: String) -> EngineError {
        EngineError::Logic {
            processor: self.name.clone(),
            partition: self.partition,
            seq,
            message,
        }
    }

    fn route(&mut self, seq: u64, inst: &Instance, out: &mut Vec<Outbound>, mut trace: Option<&mut Vec<Delivery>>) {
        for r in &mut self.routes {
            let targets: Vec<u16> = match &r.grouping {
                Grouping::Broadcast => (0..r.fanout).collect(),
                Grouping::Shuffle => {
                    let t = (r.round_robin % u64::from(r.fanout)) as u16;
                    r.round_robin += 1;
                    vec![t]
                }
                Grouping::Key(_) => {
                    let key = key_bytes(r.key.expect("key source resolved"), seq, inst);
                    vec![key_partition(&key, r.fanout)]
                }
            };
            for t in targets {
                r.last_seq[t as usize] = Some(seq);
                *self.stats.emitted.entry(r.edge).or_default() += 1;
                if let Some(trace) = trace.as_deref_mut() {
                    trace.push(Delivery {
                        edge: r.edge,
                        from_partition: self.partition,
                        to_partition: t,
                        seq,
                    });
                }
                out.push(Outbound {
                    edge: r.edge,
                    to_proc: r.to_proc,
                    to_partition: t,
                    msg: Msg::Data(seq, inst.clone()),
                });
            }
        }
    }

    fn finish(&mut self, out: &mut Vec<Outbound>) -> Result<(), EngineError> {
        self.logic.on_end().map_err(|m| self.fail(None, m))?;
        for r in &self.routes {
            for t in 0..r.fanout {
                let seq = r.last_seq[t as usize].map_or(0, |s| s + 1);
                out.push(Outbound {
                    edge: r.edge,
                    to_proc: r.to_proc,
                    to_partition: t,
                    msg: Msg::End(seq),
                });
            }
        }
        self.finished = true;
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<u8> {
        self.logic.snapshot()
    }

    pub fn stats(&self) -> &UnitStats {
        &self.stats
    }
}

/// Bytes hashed to pick a partition on a key-grouped edge.
pub(crate) fn key_bytes(source: KeySource, seq: u64, inst: &Instance) -> Vec<u8> {
    match source {
        KeySource::RecordId => seq.to_be_bytes().to_vec(),
        KeySource::Label => inst.label.map(|l| l.to_be_bytes().to_vec()).unwrap_or_default(),
        KeySource::Feature(i) => match inst.values[i] {
            Cell::Numeric(v) => v.to_be_bytes().to_vec(),
            Cell::Categorical(c) => c.to_be_bytes().to_vec(),
            Cell::Missing => Vec::new(),
        },
    }
}
