use nms_disloc::engine::{analyze, EngineConfig};
use nms_disloc::sim::{parse_scenario, random_scenario, run, RandomScenario, SimTopology};
use nms_disloc::{Side, Symbol, VenueId};

fn coalescing() -> EngineConfig {
    EngineConfig { coalesce_us: true, ..EngineConfig::default() }
}

fn busy_params() -> RandomScenario {
    RandomScenario {
        venues: vec![VenueId(1), VenueId(2), VenueId(4), VenueId(7), VenueId(11)],
        symbols: vec![Symbol::new("AAPL").unwrap(), Symbol::new("IBM").unwrap()],
        orders: 1500,
        mean_gap_us: 150,
        ..RandomScenario::default()
    }
}

#[test]
fn detector_matches_truth_on_random_scenarios() {
    let mut total = 0;
    for seed in 0..100u64 {
        let topo = SimTopology::default_nms(seed % 7 * 10);
        let out = run(&topo, &random_scenario(&busy_params(), seed), u64::MAX).unwrap();
        let got = analyze(&out.events, &coalescing(), 1).unwrap();
        assert_eq!(got.segments, out.truth.segments, "seed {seed}");
        total += got.segments.len();
    }
    assert!(total > 1000, "scenarios should produce plenty of segments, got {total}");
}

#[test]
fn parallel_engine_matches_truth() {
    let out = run(&SimTopology::default_nms(20), &random_scenario(&busy_params(), 99), u64::MAX).unwrap();
    let got = analyze(&out.events, &coalescing(), 4).unwrap();
    assert_eq!(got.segments, out.truth.segments);
}

/// The stream round-trips through the CSV encoding unchanged.
#[test]
fn emitted_stream_is_ingest_compatible() {
    let out = run(&SimTopology::default_nms(20), &random_scenario(&busy_params(), 5), u64::MAX).unwrap();
    let mut buf = Vec::new();
    nms_disloc::ingest::write_events_csv(&mut buf, &out.events).unwrap();
    let back = nms_disloc::ingest::read_events(&buf[..]).unwrap();
    assert_eq!(back, out.events);
    assert!(nms_disloc::ingest::validate_stream(&back).is_ordered());
}

fn remote_topology(processing_us: u64) -> SimTopology {
    SimTopology::parse(&format!(
        "[sites]\nlist = Obs, Far, Tape\n\
         [links]\nObs-Far = 20km fiber\nFar-Tape = 10km fiber\nTape-Obs = 15km fiber\n\
         [venues]\n1 = Far\n[tapes]\nC = Tape\n[symbols]\ndefault = C\n\
         [sip]\nprocessing_us = {processing_us}\n[observer]\nsite = Obs\n"
    ))
    .unwrap()
}

/// One quote change on an established two-sided market yields one segment
/// on the changed side lasting the SIP path's extra delay.
#[test]
fn isolated_change_segment_duration() {
    let scen = parse_scenario(
        "1000 1 AAPL B 991300 100 -\n\
         1000 1 AAPL S 991500 100 -\n\
         50000 1 AAPL B 991400 100 -\n",
    )
    .unwrap();
    for delta in [1u64, 7, 40, 300] {
        let out = run(&remote_topology(delta), &scen, 100_000).unwrap();
        let segs = analyze(&out.events, &EngineConfig::default(), 1).unwrap().segments;
        assert_eq!(segs.len(), 1);
        let s = segs[0];
        assert_eq!(s.side, Side::Bid);
        assert_eq!(s.direction, -1);
        assert_eq!(s.min_dp.0, -100);
        // SIP path: 25 km of fiber plus processing; direct path: 20 km.
        // Arrivals are rounded to the microsecond separately.
        let sip_arrival = (25.0 * 4.9 + delta as f64).round() as u64;
        let direct_arrival = (20.0f64 * 4.9).round() as u64;
        let expected = sip_arrival - direct_arrival;
        assert_eq!(s.duration_us(), expected, "delta {delta}");
        assert_eq!(segs, out.truth.segments);
    }
}

/// For a single isolated change, more SIP processing time never shortens the
/// resulting dislocation.
#[test]
fn isolated_change_duration_is_monotone_in_latency() {
    let scen = parse_scenario(
        "1000 1 AAPL B 991300 100 -\n\
         1000 1 AAPL S 991500 100 -\n\
         50000 1 AAPL B 991400 100 -\n",
    )
    .unwrap();
    let mut prev = 0;
    for delta in 0..600u64 {
        let out = run(&remote_topology(delta), &scen, 100_000).unwrap();
        let d = out.truth.dislocated_us(Side::Bid);
        assert!(d >= prev, "delta {delta}: {d} < {prev}");
        prev = d;
    }
}

/// Monotonicity fails for periodic quoting: when the SIP lags by exactly one
/// full period it shows the same phase as the direct feed, while a half
/// period of lag keeps it permanently out of phase.
#[test]
fn periodic_quotes_break_latency_monotonicity() {
    const HALF: u64 = 500;
    let mut text = String::from("1000 1 AAPL B 991300 100 id=1\n1000 1 AAPL S 991500 100 id=2\n");
    for k in 0..100u64 {
        let t = 10_000 + k * HALF;
        if k % 2 == 0 {
            text.push_str(&format!("{t} 1 AAPL B 991400 100 id={}\n", 10 + k));
        } else {
            text.push_str(&format!("{t} 1 AAPL - - - cancel={}\n", 9 + k));
        }
    }
    let scen = parse_scenario(&text).unwrap();
    let dislocated = |lag: u64| {
        // The SIP path is 25 us longer than the direct path before processing.
        let out = run(&remote_topology(lag - 25), &scen, u64::MAX).unwrap();
        out.truth.dislocated_us(Side::Bid)
    };
    let half_period = dislocated(HALF);
    let full_period = dislocated(2 * HALF);
    assert!(
        half_period > 10 * full_period.max(1),
        "half-period lag {half_period} us vs full-period lag {full_period} us"
    );
}
