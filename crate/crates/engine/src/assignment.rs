use std::collections::BTreeMap;

use smdm_core::codec::{Reader, Writer};

use crate::topology::{ProcId, Topology};
use crate::{EngineError, WorkerId};

/// Worker id to `host:port`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PeerTable {
    pub peers: BTreeMap<WorkerId, String>,
}

impl PeerTable {
    pub fn new(peers: impl IntoIterator<Item = (WorkerId, String)>) -> Self {
        Self {
            peers: peers.into_iter().collect(),
        }
    }

    pub fn address(&self, worker: WorkerId) -> Option<&str> {
        self.peers.get(&worker).map(String::as_str)
    }

    pub fn workers(&self) -> impl Iterator<Item = WorkerId> + '_ {
        self.peers.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }
}

/// Parses `worker_id host:port` lines; blank lines and `#` comments are skipped.
pub fn parse_peer_table(text: &str) -> Result<PeerTable, EngineError> {
    let mut peers = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| EngineError::InvalidPipeline(format!("peer table line {}: {what}", i + 1));
        let mut fields = line.split_whitespace();
        let (Some(id), Some(addr), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad("expected `worker_id host:port`"));
        };
        let id: WorkerId = id.parse().map_err(|_| bad("worker id is not a 16-bit integer"))?;
        if id == WorkerId::MAX {
            return Err(bad("worker id 65535 is reserved"));
        }
        if !addr
            .rsplit_once(':')
            .is_some_and(|(h, p)| !h.is_empty() && p.parse::<u16>().is_ok())
        {
            return Err(bad("address must be host:port"));
        }
        if peers.insert(id, addr.to_string()).is_some() {
            return Err(bad("duplicate worker id"));
        }
    }
    if peers.is_empty() {
        return Err(EngineError::InvalidPipeline("peer table lists no workers".into()));
    }
    Ok(PeerTable { peers })
}

/// Placement of every (processor, partition) on exactly one worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub placements: BTreeMap<(ProcId, u16), WorkerId>,
    pub peers: PeerTable,
}

impl Assignment {
    /// Deals units, in id order, to the workers in id order.
    pub fn round_robin(topology: &Topology, peers: &PeerTable) -> Self {
        let workers: Vec<WorkerId> = peers.workers().collect();
        let placements = topology
            .units()
            .into_iter()
            .enumerate()
            .map(|(i, unit)| (unit, workers[i % workers.len()]))
            .collect();
        Self {
            placements,
            peers: peers.clone(),
        }
    }

    pub fn worker_of(&self, unit: (ProcId, u16)) -> Option<WorkerId> {
        self.placements.get(&unit).copied()
    }

    pub fn units_of(&self, worker: WorkerId) -> Vec<(ProcId, u16)> {
        self.placements
            .iter()
            .filter(|(_, &w)| w == worker)
            .map(|(&u, _)| u)
            .collect()
    }

    /// Checks full coverage of the topology by known workers.
    pub fn validate(&self, topology: &Topology) -> Result<(), EngineError> {
        let units = topology.units();
        if units.len() != self.placements.len() || units.iter().any(|u| !self.placements.contains_key(u)) {
            return Err(EngineError::InvalidPipeline(
                "assignment does not cover the topology".into(),
            ));
        }
        if let Some(w) = self.placements.values().find(|w| !self.peers.peers.contains_key(w)) {
            return Err(EngineError::InvalidPipeline(format!("worker {w} has no address")));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.placements.len() as u32);
        for (&(p, i), &worker) in &self.placements {
            w.u16(p).u16(i).u16(worker);
        }
        w.u16(self.peers.len() as u16);
        for (&id, addr) in &self.peers.peers {
            w.u16(id).str16(addr);
        }
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EngineError> {
        let mut r = Reader::new(bytes);
        let run = |r: &mut Reader<'_>| -> Result<Self, smdm_core::codec::DecodeError> {
            let n = r.u32()?;
            let mut placements = BTreeMap::new();
            for _ in 0..n {
                placements.insert((r.u16()?, r.u16()?), r.u16()?);
            }
            let m = r.u16()?;
            let mut peers = BTreeMap::new();
            for _ in 0..m {
                peers.insert(r.u16()?, r.str16()?);
            }
            r.finish()?;
            Ok(Self {
                placements,
                peers: PeerTable { peers },
            })
        };
        run(&mut r).map_err(|e| EngineError::Protocol(format!("bad assignment: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_topology, Grouping, KeySpec, TopologySpec};

    fn topo() -> Topology {
        build_topology(
            TopologySpec::default()
                .processor("source", 1, "source")
                .processor("learner", 2, "learner/nb")
                .processor("evaluator", 1, "evaluator")
                .edge("source", "learner", Grouping::Key(KeySpec::RecordId))
                .edge("learner", "evaluator", Grouping::Shuffle)
                .source("source"),
        )
        .unwrap()
    }

    #[test]
    fn peer_table_parsing() {
        let t = parse_peer_table("# workers\n1 127.0.0.1:7001\n\n2 localhost:7002 # second\n").unwrap();
        assert_eq!(t.address(2), Some("localhost:7002"));
        assert_eq!(t.len(), 2);
        assert!(parse_peer_table("1 nohost").is_err());
        assert!(parse_peer_table("1 a:1\n1 b:2").is_err());
        assert!(parse_peer_table("").is_err());
        assert!(parse_peer_table("x a:1").is_err());
    }

    #[test]
    fn round_robin_covers_everything() {
        let t = topo();
        let peers = PeerTable::new([(3, "a:1".to_string()), (5, "b:2".to_string())]);
        let a = Assignment::round_robin(&t, &peers);
        a.validate(&t).unwrap();
        assert_eq!(a.units_of(3), vec![(0, 0), (1, 1)]);
        assert_eq!(a.units_of(5), vec![(1, 0), (2, 0)]);
        assert_eq!(Assignment::decode(&a.encode()).unwrap(), a);
    }
}
