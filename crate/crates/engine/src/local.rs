use std::collections::BTreeMap;

use smdm_core::Instance;

use crate::topology::ProcId;
use crate::unit::{Msg, Outbound, Step, UnitCore};
use crate::{EngineError, Pipeline, RunResult};

/// Runs the pipeline in the calling thread.
///
/// Record `i` gets sequence number `i` and is dealt to partition
/// `i mod parallelism` of every source processor. Units then run in
/// topological order, each to completion.
pub fn run_local<I>(pipeline: &Pipeline, records: I) -> Result<RunResult, EngineError>
where
    I: IntoIterator<Item = Instance>,
{
    let topo = pipeline.topology();
    let mut units: BTreeMap<(ProcId, u16), UnitCore> = BTreeMap::new();
    for (p, i) in topo.units() {
        units.insert((p, i), UnitCore::new(pipeline, p, i)?);
    }
    let mut count = 0u64;
    for (seq, inst) in records.into_iter().enumerate() {
        for &s in topo.sources() {
            let part = (seq as u64 % u64::from(topo.parallelism(s))) as u16;
            let unit = units.get_mut(&(s, part)).unwrap();
            unit.push((topo.external_edge(s), 0), Msg::Data(seq as u64, inst.clone()))?;
        }
        count += 1;
    }
    for &s in topo.sources() {
        for part in 0..topo.parallelism(s) {
            let unit = units.get_mut(&(s, part)).unwrap();
            unit.push((topo.external_edge(s), 0), Msg::End(count))?;
        }
    }

    let mut result = RunResult::default();
    let mut out: Vec<Outbound> = Vec::new();
    for &p in topo.topological_order() {
        for part in 0..topo.parallelism(p) {
            let mut unit = units.remove(&(p, part)).unwrap();
            loop {
                let step = unit.step(&mut out, Some(&mut result.trace))?;
                for o in out.drain(..) {
                    let target = units
                        .get_mut(&(o.to_proc, o.to_partition))
                        .expect("downstream units run later in topological order");
                    target.push((o.edge, part), o.msg)?;
                }
                match step {
                    Step::Processed => {}
                    Step::Finished => break,
                    Step::Blocked => {
                        return Err(EngineError::Protocol(format!(
                            "unit {p}[{part}] blocked after its inputs were closed"
                        )))
                    }
                }
            }
            result.states.insert((p, part), unit.snapshot());
            result.stats.insert((p, part), unit.stats().clone());
        }
    }
    Ok(result)
}
