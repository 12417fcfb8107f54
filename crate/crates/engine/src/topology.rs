use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use smdm_core::codec::fnv1a64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("edge graph contains a cycle through `{0}`")]
    CycleDetected(String),
    #[error("edge references undeclared processor `{0}`")]
    DanglingEdge(String),
    #[error("processor `{0}` declared twice")]
    DuplicateProcessor(String),
    #[error("processor `{0}` is not reachable from any source")]
    UnreachableProcessor(String),
    #[error("invalid topology: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum KeySpec {
    /// Value of the named attribute of the carried instance.
    Attribute(String),
    /// The record sequence number.
    RecordId,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Grouping {
    /// Round-robin per upstream partition.
    Shuffle,
    Key(KeySpec),
    Broadcast,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grouping::Shuffle => f.write_str("shuffle"),
            Grouping::Broadcast => f.write_str("broadcast"),
            Grouping::Key(KeySpec::RecordId) => f.write_str("key:id"),
            Grouping::Key(KeySpec::Attribute(a)) => write!(f, "key:{a}"),
        }
    }
}

impl std::str::FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shuffle" => Ok(Grouping::Shuffle),
            "broadcast" => Ok(Grouping::Broadcast),
            "key:id" => Ok(Grouping::Key(KeySpec::RecordId)),
            _ => match s.strip_prefix("key:") {
                Some(attr) if !attr.is_empty() => Ok(Grouping::Key(KeySpec::Attribute(attr.to_string()))),
                _ => Err(format!(
                    "unknown grouping `{s}` (shuffle, broadcast, key:id or key:<attribute>)"
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessorSpec {
    pub name: String,
    pub parallelism: u16,
    /// Logic reference resolved by a [`crate::LogicFactory`].
    pub logic: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamEdge {
    pub from: String,
    pub to: String,
    pub grouping: Grouping,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TopologySpec {
    pub processors: Vec<ProcessorSpec>,
    pub edges: Vec<StreamEdge>,
    pub sources: Vec<String>,
}

impl TopologySpec {
    pub fn processor(mut self, name: &str, parallelism: u16, logic: &str) -> Self {
        self.processors.push(ProcessorSpec {
            name: name.to_string(),
            parallelism,
            logic: logic.to_string(),
        });
        self
    }

    pub fn edge(mut self, from: &str, to: &str, grouping: Grouping) -> Self {
        self.edges.push(StreamEdge {
            from: from.to_string(),
            to: to.to_string(),
            grouping,
        });
        self
    }

    pub fn source(mut self, name: &str) -> Self {
        self.sources.push(name.to_string());
        self
    }

    /// Line-oriented form hashed into the topology fingerprint.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for p in &self.processors {
            out.push_str(&format!("processor {} {} {}\n", p.name, p.parallelism, p.logic));
        }
        for e in &self.edges {
            out.push_str(&format!("edge {} {} {}\n", e.from, e.to, e.grouping));
        }
        for s in &self.sources {
            out.push_str(&format!("source {s}\n"));
        }
        out
    }
}

pub type ProcId = u16;
pub type EdgeId = u16;

/// External records reach source processor `p` on edge `EXTERNAL_EDGE_MAX - p`.
/// Declared edges stay below `0x8000`, so the two ranges never meet.
pub const EXTERNAL_EDGE_MAX: EdgeId = u16::MAX;
pub(crate) const FIRST_EXTERNAL_EDGE: EdgeId = 0x8000;

/// Validated, immutable topology. Ids follow declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    spec: TopologySpec,
    edge_from: Vec<ProcId>,
    edge_to: Vec<ProcId>,
    sources: Vec<ProcId>,
    order: Vec<ProcId>,
    hash: u64,
}

pub fn build_topology(spec: TopologySpec) -> Result<Topology, TopologyError> {
    let mut ids: HashMap<&str, ProcId> = HashMap::new();
    if spec.processors.len() >= 0x8000 || spec.edges.len() >= 0x8000 {
        return Err(TopologyError::Invalid("too many processors or edges".into()));
    }
    for (i, p) in spec.processors.iter().enumerate() {
        if p.name.is_empty() || p.name.contains(char::is_whitespace) {
            return Err(TopologyError::Invalid(format!("bad processor name `{}`", p.name)));
        }
        if p.parallelism == 0 {
            return Err(TopologyError::Invalid(format!(
                "processor `{}` has parallelism 0",
                p.name
            )));
        }
        if ids.insert(p.name.as_str(), i as ProcId).is_some() {
            return Err(TopologyError::DuplicateProcessor(p.name.clone()));
        }
    }
    let lookup = |name: &str| {
        ids.get(name)
            .copied()
            .ok_or_else(|| TopologyError::DanglingEdge(name.to_string()))
    };
    let mut edge_from = Vec::with_capacity(spec.edges.len());
    let mut edge_to = Vec::with_capacity(spec.edges.len());
    for e in &spec.edges {
        edge_from.push(lookup(&e.from)?);
        edge_to.push(lookup(&e.to)?);
    }
    let mut sources = Vec::new();
    for s in &spec.sources {
        let id = lookup(s)?;
        if sources.contains(&id) {
            return Err(TopologyError::Invalid(format!("source `{s}` listed twice")));
        }
        sources.push(id);
    }
    if sources.is_empty() {
        return Err(TopologyError::Invalid("no source processor".into()));
    }
    let n = spec.processors.len();
    if let Some(&to) = edge_to.iter().find(|t| sources.contains(t)) {
        return Err(TopologyError::Invalid(format!(
            "source `{}` has an incoming edge",
            spec.processors[to as usize].name
        )));
    }

    // Kahn's algorithm; leftovers sit on a cycle.
    let mut indegree = vec![0usize; n];
    for &t in &edge_to {
        indegree[t as usize] += 1;
    }
    let mut queue: VecDeque<ProcId> = (0..n as ProcId).filter(|&p| indegree[p as usize] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(p) = queue.pop_front() {
        order.push(p);
        for (i, &f) in edge_from.iter().enumerate() {
            if f == p {
                let t = edge_to[i] as usize;
                indegree[t] -= 1;
                if indegree[t] == 0 {
                    queue.push_back(t as ProcId);
                }
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&p| indegree[p] > 0).unwrap();
        return Err(TopologyError::CycleDetected(spec.processors[stuck].name.clone()));
    }

    let mut reached: BTreeSet<ProcId> = sources.iter().copied().collect();
    for &p in &order {
        if reached.contains(&p) {
            for (i, &f) in edge_from.iter().enumerate() {
                if f == p {
                    reached.insert(edge_to[i]);
                }
            }
        }
    }
    if let Some(p) = (0..n as ProcId).find(|p| !reached.contains(p)) {
        return Err(TopologyError::UnreachableProcessor(
            spec.processors[p as usize].name.clone(),
        ));
    }

    let hash = fnv1a64(spec.canonical_text().as_bytes());
    Ok(Topology {
        spec,
        edge_from,
        edge_to,
        sources,
        order,
        hash,
    })
}

impl Topology {
    pub fn spec(&self) -> &TopologySpec {
        &self.spec
    }

    pub fn hash(&self) -> u64 {
        self.hash
    }

    pub fn processor_count(&self) -> usize {
        self.spec.processors.len()
    }

    pub fn processor(&self, id: ProcId) -> &ProcessorSpec {
        &self.spec.processors[id as usize]
    }

    pub fn processor_id(&self, name: &str) -> Option<ProcId> {
        self.spec
            .processors
            .iter()
            .position(|p| p.name == name)
            .map(|i| i as ProcId)
    }

    pub fn parallelism(&self, id: ProcId) -> u16 {
        self.processor(id).parallelism
    }

    pub fn edge_count(&self) -> usize {
        self.spec.edges.len()
    }

    pub fn edge(&self, id: EdgeId) -> &StreamEdge {
        &self.spec.edges[id as usize]
    }

    pub fn edge_endpoints(&self, id: EdgeId) -> (ProcId, ProcId) {
        (self.edge_from[id as usize], self.edge_to[id as usize])
    }

    pub fn sources(&self) -> &[ProcId] {
        &self.sources
    }

    pub fn is_source(&self, id: ProcId) -> bool {
        self.sources.contains(&id)
    }

    /// Processors in a topological order.
    pub fn topological_order(&self) -> &[ProcId] {
        &self.order
    }

    pub fn outgoing(&self, id: ProcId) -> impl Iterator<Item = EdgeId> + '_ {
        (0..self.edge_count() as EdgeId).filter(move |&e| self.edge_from[e as usize] == id)
    }

    pub fn incoming(&self, id: ProcId) -> impl Iterator<Item = EdgeId> + '_ {
        (0..self.edge_count() as EdgeId).filter(move |&e| self.edge_to[e as usize] == id)
    }

    /// Edge id carrying external records into source processor `id`.
    pub fn external_edge(&self, id: ProcId) -> EdgeId {
        EXTERNAL_EDGE_MAX - id
    }

    /// Every (processor, partition) pair in id order.
    pub fn units(&self) -> Vec<(ProcId, u16)> {
        (0..self.processor_count() as ProcId)
            .flat_map(|p| (0..self.parallelism(p)).map(move |i| (p, i)))
            .collect()
    }
}

/// FNV-1a of `key_bytes`, modulo `n`.
pub fn key_partition(key_bytes: &[u8], n: u16) -> u16 {
    assert!(n >= 1, "partition count must be >= 1");
    (fnv1a64(key_bytes) % u64::from(n)) as u16
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> TopologySpec {
        TopologySpec::default()
            .processor("source", 1, "source")
            .processor("learner", 2, "learner/nb")
            .processor("evaluator", 1, "evaluator")
            .edge("source", "learner", Grouping::Key(KeySpec::RecordId))
            .edge("learner", "evaluator", Grouping::Shuffle)
            .source("source")
    }

    #[test]
    fn chain_is_valid() {
        let t = build_topology(chain()).unwrap();
        assert_eq!(t.edge_endpoints(0), (0, 1));
        assert_eq!(t.edge_endpoints(1), (1, 2));
        assert_eq!(t.topological_order(), &[0, 1, 2]);
        assert_eq!(t.units(), vec![(0, 0), (1, 0), (1, 1), (2, 0)]);
        assert_eq!(t.hash(), build_topology(chain()).unwrap().hash());
    }

    #[test]
    fn cycle_detected() {
        let spec = TopologySpec::default()
            .processor("s", 1, "source")
            .processor("a", 1, "x")
            .processor("b", 1, "x")
            .edge("s", "a", Grouping::Shuffle)
            .edge("a", "b", Grouping::Shuffle)
            .edge("b", "a", Grouping::Shuffle)
            .source("s");
        assert!(matches!(build_topology(spec), Err(TopologyError::CycleDetected(_))));
    }

    #[test]
    fn dangling_edge() {
        let spec = chain().edge("learner", "X", Grouping::Broadcast);
        assert_eq!(build_topology(spec), Err(TopologyError::DanglingEdge("X".into())));
    }

    #[test]
    fn duplicate_and_unreachable() {
        let spec = chain().processor("learner", 1, "x");
        assert_eq!(
            build_topology(spec),
            Err(TopologyError::DuplicateProcessor("learner".into()))
        );
        let spec = chain().processor("orphan", 1, "x");
        assert_eq!(
            build_topology(spec),
            Err(TopologyError::UnreachableProcessor("orphan".into()))
        );
    }

    #[test]
    fn hash_tracks_spec() {
        let a = build_topology(chain()).unwrap();
        let mut spec = chain();
        spec.processors[1].parallelism = 3;
        let b = build_topology(spec).unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn key_partition_cases() {
        assert_eq!(key_partition(b"anything", 1), 0);
        assert_eq!(key_partition(b"", 7), (14_695_981_039_346_656_037u64 % 7) as u16);
        assert_eq!(key_partition(b"abc", 5), key_partition(b"abc", 5));
    }

    #[test]
    fn grouping_text() {
        for g in ["shuffle", "broadcast", "key:id", "key:job"] {
            assert_eq!(g.parse::<Grouping>().unwrap().to_string(), g);
        }
        assert!("key:".parse::<Grouping>().is_err());
    }
}
