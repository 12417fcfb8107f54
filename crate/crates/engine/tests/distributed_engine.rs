use std::net::TcpListener;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use smdm_core::evaluation::synth_campaign_stream;
use smdm_core::schema::builtin_bank_marketing_schema;
use smdm_core::Instance;
use smdm_engine::{
    run_coordinator, run_local, run_worker, DistributedOptions, EngineError, EvaluatorReport, Grouping, KeySpec,
    PeerTable, Pipeline, TopologySpec, WorkerId,
};

fn records(n: u64, seed: u64) -> Vec<Instance> {
    synth_campaign_stream(n, seed, 0.1).unwrap().collect()
}

fn pipeline(learner: &str, learners: u16) -> Pipeline {
    let spec = TopologySpec::default()
        .processor("source", 2, "source")
        .processor("learner", learners, learner)
        .processor("evaluator", 1, "evaluator/500/1000")
        .edge("source", "learner", Grouping::Key(KeySpec::RecordId))
        .edge("learner", "evaluator", Grouping::Key(KeySpec::RecordId))
        .source("source");
    Pipeline::standard(spec, builtin_bank_marketing_schema()).unwrap()
}

fn opts() -> DistributedOptions {
    DistributedOptions {
        connect_timeout: Duration::from_secs(5),
        phase_timeout: Duration::from_secs(5),
        run_timeout: Duration::from_secs(60),
        ..Default::default()
    }
}

type Workers = Vec<(WorkerId, JoinHandle<Result<(), EngineError>>)>;

fn spawn_workers(pipelines: Vec<(Pipeline, DistributedOptions)>) -> (PeerTable, Workers) {
    let mut peers = Vec::new();
    let mut handles = Vec::new();
    for (i, (p, o)) in pipelines.into_iter().enumerate() {
        let id = i as WorkerId + 1;
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        peers.push((id, listener.local_addr().unwrap().to_string()));
        handles.push((id, thread::spawn(move || run_worker(&p, id, listener, &o))));
    }
    (PeerTable::new(peers), handles)
}

#[test]
fn distributed_matches_local_for_one_to_four_workers() {
    let p = pipeline("learner/nb", 3);
    let input = records(10_000, 21);
    let local = run_local(&p, input.clone()).unwrap();
    for workers in 1..=4 {
        let (peers, handles) = spawn_workers(vec![(p.clone(), opts()); workers]);
        let dist = run_coordinator(&p, &peers, input.clone(), &opts()).unwrap();
        for (id, h) in handles {
            h.join().unwrap().unwrap_or_else(|e| panic!("worker {id}: {e}"));
        }
        assert_eq!(dist.states, local.states, "{workers} workers");
        assert_eq!(dist.stats, local.stats, "{workers} workers");
        for (emitted, received) in dist.edge_totals().values() {
            assert_eq!(emitted, received);
        }
    }
}

#[test]
fn hoeffding_states_survive_the_network() {
    let p = pipeline("learner/ht/100/1e-5/0.05", 2);
    let input = records(4_000, 8);
    let local = run_local(&p, input.clone()).unwrap();
    let (peers, handles) = spawn_workers(vec![(p.clone(), opts()); 3]);
    let dist = run_coordinator(&p, &peers, input, &opts()).unwrap();
    for (_, h) in handles {
        h.join().unwrap().unwrap();
    }
    assert_eq!(dist.states, local.states);
    let eval = p.topology().processor_id("evaluator").unwrap();
    let report = EvaluatorReport::decode(dist.processor_states(eval)[0]).unwrap();
    assert_eq!(report.confusion.total(), 4_000);
}

#[test]
fn empty_input_still_terminates() {
    let p = pipeline("learner/majority", 2);
    let (peers, handles) = spawn_workers(vec![(p.clone(), opts()); 2]);
    let dist = run_coordinator(&p, &peers, Vec::new(), &opts()).unwrap();
    for (_, h) in handles {
        h.join().unwrap().unwrap();
    }
    assert_eq!(dist.states, run_local(&p, Vec::new()).unwrap().states);
}

#[test]
fn killed_worker_is_reported() {
    let p = pipeline("learner/nb", 3);
    let crashing = DistributedOptions {
        crash_after_frames: Some(300),
        ..opts()
    };
    let victim: WorkerId = 2;
    let (peers, handles) = spawn_workers(vec![(p.clone(), opts()), (p.clone(), crashing), (p.clone(), opts())]);
    let started = Instant::now();
    let err = run_coordinator(&p, &peers, records(10_000, 3), &opts()).unwrap_err();
    assert_eq!(err, EngineError::ConnectionLost(victim));
    assert!(started.elapsed() < opts().run_timeout);
    for (_, h) in handles {
        assert!(h.join().unwrap().is_err());
    }
}

#[test]
fn topology_mismatch_is_refused() {
    let p = pipeline("learner/nb", 3);
    let other = pipeline("learner/nb", 2);
    let (peers, handles) = spawn_workers(vec![(p.clone(), opts()), (other, opts())]);
    let err = run_coordinator(&p, &peers, records(100, 1), &opts()).unwrap_err();
    assert!(
        matches!(err, EngineError::HandshakeMismatch { worker: 2, .. }),
        "{err:?}"
    );
    let results: Vec<_> = handles.into_iter().map(|(_, h)| h.join().unwrap()).collect();
    assert!(matches!(results[1], Err(EngineError::HandshakeMismatch { .. })));
    assert!(results[0].is_err());
}

#[test]
fn unreachable_worker_times_out() {
    let p = pipeline("learner/nb", 2);
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let peers = PeerTable::new([(1, format!("127.0.0.1:{port}"))]);
    let quick = DistributedOptions {
        connect_timeout: Duration::from_millis(300),
        ..opts()
    };
    let err = run_coordinator(&p, &peers, records(10, 1), &quick).unwrap_err();
    assert!(matches!(err, EngineError::Timeout(_)), "{err:?}");
}
