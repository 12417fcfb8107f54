//! Stream-processing topologies over `smdm-core` records.
//!
//! A [`TopologySpec`] names processors, their parallelism and the logic each
//! runs, plus the edges between them. [`Pipeline`] binds a validated topology
//! to an input schema and a [`LogicFactory`]; it can then be executed by
//! [`run_local`] in one process or by [`distributed::run_coordinator`] and
//! [`distributed::run_worker`] across TCP-connected workers.
//!
//! Each unit (processor partition) merges its input channels by record
//! sequence number, so for a given input both engines process every unit's
//! events in the same order and end in bit-identical states.

pub mod assignment;
pub mod distributed;
pub mod local;
pub mod logic;
pub mod topology;
mod unit;
pub mod wire;

use std::collections::BTreeMap;
use std::sync::Arc;

use smdm_core::DatasetSchema;
use thiserror::Error;

pub use assignment::{parse_peer_table, Assignment, PeerTable};
pub use distributed::{run_assigned, run_coordinator, run_worker, DistributedOptions};
pub use local::run_local;
pub use logic::{prediction_schema, EvaluatorReport, LogicError, LogicFactory, ProcessorLogic, StandardLogics};
pub use topology::{
    build_topology, key_partition, EdgeId, Grouping, KeySpec, ProcId, Topology, TopologyError, TopologySpec,
};
pub use wire::{deserialize_event, serialize_event, ContentEvent, EventKind, Frame, FrameKind, WireError};

pub type WorkerId = u16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),
    #[error("processor {processor}[{partition}] failed at seq {seq:?}: {message}")]
    Logic {
        processor: String,
        partition: u16,
        seq: Option<u64>,
        message: String,
    },
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("lost connection to worker {0}")]
    ConnectionLost(WorkerId),
    #[error("handshake mismatch with worker {worker}: {detail}")]
    HandshakeMismatch { worker: WorkerId, detail: String },
    #[error("timed out during {0}")]
    Timeout(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("run aborted: {0}")]
    Aborted(String),
}

impl From<std::io::Error> for EngineError {
    fn from(e: std::io::Error) -> Self {
        EngineError::Io(e.to_string())
    }
}

/// How a key-grouped edge extracts its key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum KeySource {
    Feature(usize),
    Label,
    RecordId,
}

/// A topology bound to schemas and processor logics.
#[derive(Clone)]
pub struct Pipeline {
    topology: Topology,
    input_schema: DatasetSchema,
    edge_schemas: Vec<DatasetSchema>,
    key_sources: Vec<Option<KeySource>>,
    factory: Arc<dyn LogicFactory>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("topology", &self.topology)
            .field("input_schema", &self.input_schema.name)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    pub fn new(
        topology: Topology,
        input_schema: DatasetSchema,
        factory: Arc<dyn LogicFactory>,
    ) -> Result<Self, EngineError> {
        let mut edge_schemas: Vec<Option<DatasetSchema>> = vec![None; topology.edge_count()];
        for &p in topology.topological_order() {
            let name = &topology.processor(p).name;
            let input = if topology.is_source(p) {
                input_schema.clone()
            } else {
                let mut schemas = topology.incoming(p).map(|e| edge_schemas[e as usize].clone().unwrap());
                let first = schemas.next().expect("reachable processors have inputs");
                if schemas.any(|s| s != first) {
                    return Err(EngineError::InvalidPipeline(format!(
                        "inputs of `{name}` carry different schemas"
                    )));
                }
                first
            };
            let logic = factory
                .create(&topology.processor(p).logic, &input, 0)
                .map_err(|e| EngineError::InvalidPipeline(format!("processor `{name}`: {e}")))?;
            let output = logic.output_schema();
            for e in topology.outgoing(p) {
                edge_schemas[e as usize] = Some(output.clone());
            }
        }
        let edge_schemas: Vec<DatasetSchema> = edge_schemas.into_iter().map(Option::unwrap).collect();
        let mut key_sources = Vec::with_capacity(edge_schemas.len());
        for (e, schema) in edge_schemas.iter().enumerate() {
            key_sources.push(match &topology.edge(e as EdgeId).grouping {
                Grouping::Key(KeySpec::RecordId) => Some(KeySource::RecordId),
                Grouping::Key(KeySpec::Attribute(name)) => Some(match schema.feature_index(name) {
                    Some(i) => KeySource::Feature(i),
                    None if schema.class_attribute().name == *name => KeySource::Label,
                    None => {
                        return Err(EngineError::InvalidPipeline(format!(
                            "edge {e} keys on unknown attribute `{name}`"
                        )))
                    }
                }),
                _ => None,
            });
        }
        Ok(Self {
            topology,
            input_schema,
            edge_schemas,
            key_sources,
            factory,
        })
    }

    /// Builds the topology from `spec` and binds it with the built-in logics.
    pub fn standard(spec: TopologySpec, input_schema: DatasetSchema) -> Result<Self, EngineError> {
        Self::new(build_topology(spec)?, input_schema, Arc::new(StandardLogics))
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn input_schema(&self) -> &DatasetSchema {
        &self.input_schema
    }

    /// Schema carried by an edge; external edges carry the input schema.
    pub fn edge_schema(&self, edge: EdgeId) -> &DatasetSchema {
        self.edge_schemas.get(edge as usize).unwrap_or(&self.input_schema)
    }

    pub fn schema_hash(&self) -> u64 {
        self.input_schema.fingerprint()
    }

    pub(crate) fn key_source(&self, edge: EdgeId) -> Option<KeySource> {
        self.key_sources[edge as usize]
    }

    pub(crate) fn create_logic(&self, proc: ProcId, partition: u16) -> Result<Box<dyn ProcessorLogic>, EngineError> {
        let spec = self.topology.processor(proc);
        let input = if self.topology.is_source(proc) {
            &self.input_schema
        } else {
            let e = self.topology.incoming(proc).next().expect("non-source has inputs");
            &self.edge_schemas[e as usize]
        };
        self.factory
            .create(&spec.logic, input, partition)
            .map_err(|e| EngineError::InvalidPipeline(format!("processor `{}`: {e}", spec.name)))
    }
}

/// Per-unit delivery counters, keyed by edge id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnitStats {
    pub received: BTreeMap<EdgeId, u64>,
    pub emitted: BTreeMap<EdgeId, u64>,
}

/// One data event crossing an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub edge: EdgeId,
    pub from_partition: u16,
    pub to_partition: u16,
    pub seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunResult {
    /// Final snapshot of every (processor, partition).
    pub states: BTreeMap<(ProcId, u16), Vec<u8>>,
    pub stats: BTreeMap<(ProcId, u16), UnitStats>,
    /// Data deliveries in execution order; only the local engine records it.
    pub trace: Vec<Delivery>,
}

impl RunResult {
    /// Snapshots of one processor's partitions, in partition order.
    pub fn processor_states(&self, proc: ProcId) -> Vec<&[u8]> {
        self.states
            .range((proc, 0)..=(proc, u16::MAX))
            .map(|(_, s)| s.as_slice())
            .collect()
    }

    /// Per declared edge: (events emitted, events received) summed over partitions.
    pub fn edge_totals(&self) -> BTreeMap<EdgeId, (u64, u64)> {
        let mut totals: BTreeMap<EdgeId, (u64, u64)> = BTreeMap::new();
        for s in self.stats.values() {
            for (&e, &n) in &s.emitted {
                totals.entry(e).or_default().0 += n;
            }
            for (&e, &n) in s.received.range(..topology::FIRST_EXTERNAL_EDGE) {
                totals.entry(e).or_default().1 += n;
            }
        }
        totals
    }
}
