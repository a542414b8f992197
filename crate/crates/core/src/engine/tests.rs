use super::*;
use crate::perf::PowerRule;

fn small(schemes: &[SchedulerKind], blocks: usize, replicas: usize) -> RunConfig {
    RunConfig { schemes: schemes.to_vec(), blocks, replicas, seed: 7, ..RunConfig::default() }
}

#[test]
fn single_deterministic_block_matches_its_metrics() {
    let mut cfg = small(&[SchedulerKind::MhmpLl], 1, 1);
    cfg.scenario.channel.shadowing_sigma_db = 0.0;
    let report = run(&cfg).unwrap();
    let rec = &report.records[0];
    let s = report.scheme(SchedulerKind::MhmpLl).unwrap();
    for q in 0..2 {
        assert_eq!(s.avg_latency_ms[q].mean, rec.worst_latency_s[q] * 1e3);
        assert_eq!(s.avg_latency_ms[q].ci95_half_width, None);
    }
    assert_eq!(s.avg_power_mw.mean, rec.total_power_w * 1e3);
    // Symmetric links: every link loss equals the deterministic pathloss.
    let losses = &report.channel_trace.blocks[&0];
    assert!(losses.iter().all(|&l| l == losses[0]));
}

#[test]
fn repeated_runs_are_identical() {
    let cfg = small(&[SchedulerKind::SpLl, SchedulerKind::MhmpLp, SchedulerKind::Allp], 3, 2);
    let a = SummaryFile::from_report(&run(&cfg).unwrap()).to_json().unwrap();
    let b = SummaryFile::from_report(&run(&cfg).unwrap()).to_json().unwrap();
    assert_eq!(a, b);
    let c = SummaryFile::from_report(&run(&RunConfig { seed: 8, ..cfg }).unwrap()).to_json().unwrap();
    assert_ne!(a, c);
}

#[test]
fn schemes_share_realizations() {
    let a = run(&small(&[SchedulerKind::SpLl], 3, 1)).unwrap();
    let b = run(&small(&[SchedulerKind::MhmpLl, SchedulerKind::Ps1Ll], 3, 1)).unwrap();
    assert_eq!(a.channel_trace, b.channel_trace);
    assert_eq!(a.traffic_trace, b.traffic_trace);
}

#[test]
fn block_average_of_maxima_dominates_maximum_of_averages() {
    let report = run(&small(&[SchedulerKind::MhmpLl, SchedulerKind::Ps2Ll], 6, 1)).unwrap();
    for kind in [SchedulerKind::MhmpLl, SchedulerKind::Ps2Ll] {
        let recs: Vec<_> = report.records_of(kind).collect();
        let n = recs.len() as f64;
        for q in 0..2 {
            let avg_max = recs.iter().map(|r| r.worst_latency_s[q]).sum::<f64>() / n;
            let paths = recs[0].path_latency_s[q].len();
            let max_avg = (0..paths)
                .filter(|&b| recs.iter().all(|r| r.routed[q][b]))
                .map(|b| recs.iter().map(|r| r.path_latency_s[q][b]).sum::<f64>() / n)
                .fold(0.0, f64::max);
            assert!(avg_max >= max_avg, "{kind} service {q}");
        }
    }
}

#[test]
fn replayed_traces_reproduce_a_run_under_another_seed() {
    let cfg = small(&[SchedulerKind::MhmpLl], 3, 1);
    let first = run(&cfg).unwrap();
    let replay = RunConfig {
        seed: 99,
        channel_trace: Some(first.channel_trace.clone()),
        traffic_trace: Some(first.traffic_trace.clone()),
        ..cfg
    };
    let second = run(&replay).unwrap();
    assert_eq!(first.records, second.records);
}

#[test]
fn closed_loop_backlog_stays_consistent() {
    let mut cfg = small(&[SchedulerKind::SpLl, SchedulerKind::MhmpLl], 4, 1);
    cfg.scenario.queue_mode = QueueMode::ClosedLoop;
    let report = run(&cfg).unwrap();
    assert_eq!(report.records.len(), 8);
    assert!(report.records.iter().all(|r| r.worst_latency_s.iter().all(|v| v.is_finite())));
}

#[test]
fn served_packets_never_exceed_the_queue() {
    let topo = build_topology(1, &LinkDistances::default()).unwrap();
    let d = Decision::uniform(&topo, 1, 0.2, 0);
    let mut state = TrafficState::zeros(0, topo.num_nodes(), 1);
    state.arrivals[0][0] = 3;
    state.backlog[0][0] = 2;
    let served = served_packets(&topo, &d, &vec![1e9; topo.num_links()], &state, &[1000.0], 0.5);
    assert_eq!(served[0][0], 5);
    let slow = served_packets(&topo, &d, &vec![1000.0; topo.num_links()], &state, &[1000.0], 0.5);
    // Half of a 1 kb/s link for half a second carries no whole 1 kb packet.
    assert_eq!(slow[0][0], 0);
}

#[test]
fn flow_mode_runs_and_feeds_relays() {
    let mut cfg = small(&[SchedulerKind::MhmpLl], 2, 1);
    cfg.scenario.traffic_mode = TrafficMode::FlowPropagated;
    let report = run(&cfg).unwrap();
    let d = report.records[1].decision.as_ref().unwrap();
    assert_eq!(d.rule, PowerRule::Full);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(matches!(run(&small(&[SchedulerKind::SpLl], 0, 1)), Err(EngineError::Config(_))));
    assert!(matches!(run(&small(&[], 1, 1)), Err(EngineError::Config(_))));
    let mut cfg = small(&[SchedulerKind::SpLl], 1, 1);
    cfg.block_s = 0.0;
    assert!(matches!(run(&cfg), Err(EngineError::Config(_))));
}

#[test]
fn single_layer_sweep_has_one_row() {
    let rows = hop_sweep(&small(&[], 2, 2), 2..=2, SweepMetric::Latency).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].relay_layers, 2);
    assert!(rows[0].savings.mean > 0.0 && rows[0].savings.mean < 1.0);
}
