use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use super::*;
use crate::geo::pixel_of;
use crate::model::{encode_event, vocab, Status, StatusEvent};
use crate::query::{parse_query, DETECTION_QUERY, LISTING_QUERY};

fn detection() -> ContinuousQuery {
    parse_query(DETECTION_QUERY).unwrap()
}

fn event(id: &str, lat: f64, lon: f64, status: Status, ts: u64) -> Vec<TimestampedTriple> {
    encode_event(&StatusEvent::new(id, lat, lon, status, ts).unwrap())
}

fn lost_phones(n: usize, ts: u64) -> Vec<TimestampedTriple> {
    (0..n)
        .flat_map(|k| event(&format!("p{k}"), 29.8631, 112.9012, Status::UnReachable, ts))
        .collect()
}

#[test]
fn threshold_is_strictly_greater_than_ten() {
    for (n, expected) in [(10, None), (11, Some(11))] {
        let mut engine = Engine::default();
        engine.register_query(detection(), None).unwrap();
        engine.ingest(vocab::STREAM, &lost_phones(n, 1_000)).unwrap();
        let evals = engine.advance_clock(5_000).unwrap();
        assert_eq!(evals.len(), 1);
        let rows = &evals[0].rows;
        assert_eq!(rows.first().and_then(|r| r.int("counter")), expected, "n = {n}");
        if let Some(row) = rows.first() {
            assert_eq!(row.int("roundLat"), Some(29863));
            assert_eq!(row.int("roundLong"), Some(112901));
            let names: Vec<&str> = row.columns.iter().map(|(n, _)| n.as_str()).collect();
            assert_eq!(names, ["roundLat", "roundLong", "counter", "lat", "long"]);
        }
    }
}

#[test]
fn window_is_open_on_the_left() {
    let mut engine = Engine::default();
    let h = engine.register_query(detection(), None).unwrap();
    engine.ingest(vocab::STREAM, &lost_phones(12, 5_000)).unwrap();
    let evals = engine.advance_clock(1_805_000).unwrap();
    let at = |t: u64| {
        evals
            .iter()
            .find(|e| e.handle == h && e.eval_time == t)
            .map(|e| e.rows.len())
            .unwrap()
    };
    assert_eq!(at(5_000), 1);
    assert_eq!(at(1_800_000), 1);
    assert_eq!(at(1_805_000), 0);
    assert_eq!(evals.len(), 361);
    // The stream no longer holds anything older than the window.
    assert_eq!(engine.with_buffer(vocab::STREAM, |b| b.live_len()), Some(0));
}

#[test]
fn plain_count_counts_refreshed_triples_once() {
    // Set semantics: a phone repeating the same report keeps one triple.
    let mut engine = Engine::default();
    let q = parse_query(LISTING_QUERY).unwrap();
    engine.register_query(q, None).unwrap();
    let mut triples = lost_phones(11, 1_000);
    triples.extend(lost_phones(11, 2_000));
    engine.ingest(vocab::STREAM, &triples).unwrap();
    let evals = engine.advance_clock(5_000).unwrap();
    assert_eq!(evals[0].rows[0].int("counter"), Some(11));
}

#[test]
fn schedule_is_anchored_at_registration() {
    let mut engine = Engine::default();
    engine.advance_clock(1_234).unwrap();
    let h = engine.register_query(detection(), None).unwrap();
    assert_eq!(engine.info(h).registration_time, 1_234);
    assert_eq!(engine.info(h).next_eval_time, 6_234);
    let evals = engine.advance_clock(21_233).unwrap();
    let times: Vec<u64> = evals.iter().map(|e| e.eval_time).collect();
    assert_eq!(times, [6_234, 11_234, 16_234]);
    assert_eq!(engine.info(h).next_eval_time, 21_234);
    assert_eq!(engine.info(h).evaluations, 3);
    assert_eq!(
        engine.evaluate_step(h, 21_000),
        Err(EngineError::NotDue {
            query: "LostSilence".into(),
            due: 21_234,
            requested: 21_000
        })
    );
    assert!(engine.evaluate_step(h, 21_234).unwrap().is_empty());
    // A manual step is not repeated by the clock.
    assert_eq!(engine.advance_clock(26_233).unwrap().len(), 0);
    assert_eq!(engine.advance_clock(26_234).unwrap().len(), 1);
    assert_eq!(
        engine.advance_clock(1),
        Err(EngineError::ClockRegression {
            now: 26_234,
            requested: 1
        })
    );
}

#[test]
fn late_and_unknown_ingestion_is_rejected() {
    let mut engine = Engine::default();
    engine.register_query(detection(), None).unwrap();
    assert!(matches!(
        engine.ingest("http://example.org/none", &lost_phones(1, 1)),
        Err(EngineError::UnknownStream(_))
    ));
    engine.ingest(vocab::STREAM, &lost_phones(1, 4_000)).unwrap();
    assert_eq!(
        engine.ingest(vocab::STREAM, &lost_phones(1, 3_999)),
        Err(EngineError::LateEvent {
            stream: vocab::STREAM.into(),
            timestamp: 3_999,
            watermark: 4_000
        })
    );
    engine.advance_clock(5_000).unwrap();
    assert!(matches!(
        engine.ingest(vocab::STREAM, &lost_phones(1, 5_000)),
        Err(EngineError::AlreadyEvaluated { timestamp: 5_000, .. })
    ));
    // Nothing from a refused call is kept.
    let mut mixed = lost_phones(1, 6_000);
    mixed.extend(lost_phones(1, 5_500));
    assert!(engine.ingest(vocab::STREAM, &mixed).is_err());
    assert_eq!(engine.with_buffer(vocab::STREAM, |b| b.pending_len()), Some(0));
    engine.ingest(vocab::STREAM, &lost_phones(1, 5_001)).unwrap();
}

#[test]
fn registration_errors() {
    let mut engine = Engine::default();
    engine.register_query(detection(), None).unwrap();
    assert_eq!(
        engine.register_query(detection(), None),
        Err(EngineError::AlreadyRegistered("LostSilence".into()))
    );
    let mut bad = detection().retargeted("bad", vocab::STREAM);
    bad.group_by.push(crate::query::Var::new("nowhere"));
    assert!(matches!(
        engine.register_query(bad, None),
        Err(EngineError::InvalidQuery { .. })
    ));
}

#[test]
fn sinks_receive_every_evaluation() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let sink = move |name: &str, t: u64, rows: &[ResultRow]| {
        log.lock().unwrap().push((name.to_string(), t, rows.len()));
    };
    let mut engine = Engine::default();
    engine.register_query(detection(), Some(Arc::new(sink))).unwrap();
    engine.ingest(vocab::STREAM, &lost_phones(11, 7_000)).unwrap();
    engine.advance_clock(10_000).unwrap();
    assert_eq!(
        *seen.lock().unwrap(),
        vec![("LostSilence".to_string(), 5_000, 0), ("LostSilence".to_string(), 10_000, 1)]
    );
}

#[test]
fn one_query_per_pixel_at_full_scale() {
    // 29,215 populated pixels, each with its own stream and query.
    let base = detection();
    let mut engine = Engine::new(EngineOptions { parallel: true });
    let mut streams = Vec::new();
    for i in 0..29_215u32 {
        let stream = format!("{}/pixel/{i}", vocab::STREAM);
        engine
            .register_query(base.retargeted(format!("q{i}"), stream.clone()), None)
            .unwrap();
        streams.push(stream);
    }
    assert_eq!(engine.query_count(), 29_215);
    engine.ingest(&streams[7], &lost_phones(11, 100)).unwrap();
    let evals = engine.advance_clock(5_000).unwrap();
    assert_eq!(evals.len(), 29_215);
    let alerting: Vec<&str> = evals
        .iter()
        .filter(|e| !e.rows.is_empty())
        .map(|e| e.query.as_str())
        .collect();
    assert_eq!(alerting, ["q7"]);
}

#[derive(Debug, Clone)]
struct Ev {
    phone: u8,
    cell: (u8, u8),
    status: Status,
    dt: u64,
}

fn ev() -> impl Strategy<Value = Ev> {
    (
        0u8..30,
        (0u8..3, 0u8..3),
        prop_oneof![
            Just(Status::UnReachable),
            Just(Status::Attached),
            Just(Status::Detached)
        ],
        0u64..4_000,
    )
        .prop_map(|(phone, cell, status, dt)| Ev {
            phone,
            cell,
            status,
            dt,
        })
}

/// Positions are fixed per phone and cell so that every phone has one point.
fn position(e: &Ev) -> (f64, f64) {
    let lat = 30.0 + e.cell.0 as f64 * 0.001 + 0.0001 * (e.phone % 4) as f64;
    let lon = 113.0 + e.cell.1 as f64 * 0.001 + 0.0001 * (e.phone % 3) as f64;
    (lat, lon)
}

fn phone_id(e: &Ev) -> String {
    format!("ph{}_{}_{}", e.phone, e.cell.0, e.cell.1)
}

fn small_window_query(having: bool) -> ContinuousQuery {
    let mut q = detection();
    q.window = crate::query::WindowSpec {
        range_ms: 7_000,
        step_ms: 2_000,
    };
    match &mut q.having {
        Some(h) if having => h.value = crate::query::Number::Integer(2),
        h => *h = None,
    }
    q
}

fn run(events: &[Ev], query: ContinuousQuery, parallel: bool) -> (Vec<Evaluation>, Vec<(u64, Ev)>) {
    let mut engine = Engine::new(EngineOptions { parallel });
    engine.register_query(query, None).unwrap();
    let mut t = 0;
    let mut stamped = Vec::new();
    let mut evals = Vec::new();
    for e in events {
        t += e.dt;
        evals.extend(engine.advance_clock(t.saturating_sub(1).max(engine.now())).unwrap());
        let (lat, lon) = position(e);
        engine
            .ingest(vocab::STREAM, &event(&phone_id(e), lat, lon, e.status, t))
            .unwrap();
        stamped.push((t, e.clone()));
    }
    evals.extend(engine.advance_clock(t + 10_000).unwrap());
    (evals, stamped)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_match_brute_force(events in proptest::collection::vec(ev(), 1..120)) {
        let (evals, stamped) = run(&events, small_window_query(false), false);
        for eval in &evals {
            let e = eval.eval_time;
            let mut expected: BTreeMap<(i64, i64), BTreeSet<String>> = BTreeMap::new();
            for (ts, ev) in &stamped {
                if *ts <= e && *ts + 7_000 > e && ev.status == Status::UnReachable {
                    let (lat, lon) = position(ev);
                    let p = pixel_of(lat, lon, Default::default()).unwrap();
                    expected.entry((p.lat_milli, p.lon_milli)).or_default().insert(phone_id(ev));
                }
            }
            let got: BTreeMap<(i64, i64), i64> = eval
                .rows
                .iter()
                .map(|r| ((r.int("roundLat").unwrap(), r.int("roundLong").unwrap()), r.int("counter").unwrap()))
                .collect();
            let want: BTreeMap<(i64, i64), i64> =
                expected.into_iter().map(|(k, v)| (k, v.len() as i64)).collect();
            prop_assert_eq!(got, want, "at {}", e);
        }
    }

    #[test]
    fn having_only_filters_and_parallel_changes_nothing(events in proptest::collection::vec(ev(), 1..80)) {
        let (all, _) = run(&events, small_window_query(false), false);
        let (filtered, _) = run(&events, small_window_query(true), true);
        prop_assert_eq!(all.len(), filtered.len());
        for (a, f) in all.iter().zip(&filtered) {
            let kept: Vec<&ResultRow> = a.rows.iter().filter(|r| r.int("counter").unwrap() > 2).collect();
            prop_assert_eq!(kept, f.rows.iter().collect::<Vec<_>>());
        }
        let (again, _) = run(&events, small_window_query(true), false);
        prop_assert_eq!(filtered, again);
    }

    #[test]
    fn adding_a_lost_phone_never_lowers_a_count(events in proptest::collection::vec(ev(), 1..60)) {
        let (before, _) = run(&events, small_window_query(false), false);
        let mut more = events.clone();
        let mut extra = events[events.len() - 1].clone();
        extra.phone = 99;
        extra.status = Status::UnReachable;
        extra.dt = 0;
        more.push(extra);
        let (after, _) = run(&more, small_window_query(false), false);
        for (b, a) in before.iter().zip(&after) {
            for row in &b.rows {
                let key = (row.get("roundLat"), row.get("roundLong"));
                let grown = a.rows.iter().find(|r| (r.get("roundLat"), r.get("roundLong")) == key);
                prop_assert!(grown.is_some_and(|g| g.int("counter") >= row.int("counter")));
            }
        }
    }
}
