//! Drives generators, engine and detector through a scenario, and replays
//! recorded logs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{self, BufRead, Read, Write};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use super::config::{ClockMode, QueryMode, ScenarioConfig};
use super::world::{plan_incidents, plan_pixels, EventSource, IncidentPlan};
use super::SimError;
use crate::detector::{
    compute_metrics, Alert, AlertColumns, BlindZoneList, Coverage, Detector, GroundTruth,
    MetricsReport, SeriesLog, SeriesPoint,
};
use crate::engine::{Engine, EngineOptions, EngineStats, QueryHandle, ResultRow};
use crate::geo::GeoPixel;
use crate::model::{encode_event, read_ntriples, write_ntriples, Status, StatusEvent, TimestampedTriple};
use crate::query::{ContinuousQuery, WindowSpec};

/// First line of every event log.
pub const LOG_HEADER_PREFIX: &str = "# run_length_ms=";

pub fn log_header(run_length: u64) -> String {
    format!("{LOG_HEADER_PREFIX}{run_length}")
}

pub fn parse_log_header(line: &str) -> Option<u64> {
    line.trim().strip_prefix(LOG_HEADER_PREFIX)?.parse().ok()
}

/// Header line of the detection results CSV.
pub const RESULTS_HEADER: &str = "eval_time_ms,roundLat,roundLong,counter";

/// Optional streaming outputs of a run.
#[derive(Default)]
pub struct RunSinks<'a> {
    /// N-Triples event log.
    pub events: Option<&'a mut dyn Write>,
    /// Detection rows before blind-zone filtering, as CSV.
    pub results: Option<&'a mut dyn Write>,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub resolved: ScenarioConfig,
    /// Detection query as registered (per-pixel copies differ only in name
    /// and stream).
    pub query: ContinuousQuery,
    pub alerts: Vec<Alert>,
    pub metrics: MetricsReport,
    pub series: SeriesLog,
    /// Distinct phones that reported UnReachable, per pixel.
    pub pixel_totals: BTreeMap<GeoPixel, u64>,
    pub events: u64,
    pub triples: u64,
    pub queries: usize,
    pub stats: EngineStats,
    pub wall: Duration,
}

/// The detection query with the scenario's window and step.
pub fn effective_query(cfg: &ScenarioConfig, base: &ContinuousQuery) -> ContinuousQuery {
    ContinuousQuery {
        window: WindowSpec {
            range_ms: cfg.window(),
            step_ms: cfg.query.step.get(),
        },
        ..base.clone()
    }
}

pub fn pixel_stream(base: &str, p: GeoPixel) -> String {
    format!("{base}/pixel/{}_{}", p.lat_milli, p.lon_milli)
}

fn pixel_name(base: &str, p: GeoPixel) -> String {
    format!("{base}/{}_{}", p.lat_milli, p.lon_milli)
}

#[derive(Debug, Clone, Copy)]
enum Role {
    Detect,
    Monitor(GeoPixel),
    MonitorAll,
}

/// Gathers the evaluations of one step and hands them to the detector once
/// the step is complete.
struct Collector<'w> {
    roles: Vec<Role>,
    columns: AlertColumns,
    detector: Detector,
    monitored: BTreeSet<GeoPixel>,
    current: Option<u64>,
    step_rows: Vec<ResultRow>,
    step_counts: BTreeMap<GeoPixel, u64>,
    monitor_seen: bool,
    alerts: Vec<Alert>,
    series: SeriesLog,
    results: Option<&'w mut dyn Write>,
    io_error: Option<io::Error>,
}

impl<'w> Collector<'w> {
    fn new(
        columns: AlertColumns,
        blind_zones: BlindZoneList,
        monitored: BTreeSet<GeoPixel>,
        results: Option<&'w mut dyn Write>,
    ) -> Self {
        let series = monitored.iter().map(|&p| (p, Vec::new())).collect();
        Collector {
            roles: Vec::new(),
            detector: Detector::new(blind_zones, columns.clone()),
            columns,
            monitored,
            current: None,
            step_rows: Vec::new(),
            step_counts: BTreeMap::new(),
            monitor_seen: false,
            alerts: Vec::new(),
            series,
            results,
            io_error: None,
        }
    }

    fn register(&mut self, handle: QueryHandle, role: Role) {
        debug_assert_eq!(handle.index(), self.roles.len());
        self.roles.push(role);
    }

    fn on_eval(&mut self, handle: QueryHandle, eval_time: u64, rows: Vec<ResultRow>) {
        if self.current != Some(eval_time) {
            self.flush();
            self.current = Some(eval_time);
        }
        match self.roles[handle.index()] {
            Role::Detect => self.step_rows.extend(rows),
            Role::Monitor(p) => {
                self.monitor_seen = true;
                let count = rows.first().and_then(|r| self.columns.counter(r)).unwrap_or(0);
                self.step_counts.insert(p, count);
            }
            Role::MonitorAll => {
                self.monitor_seen = true;
                for r in &rows {
                    if let (Some(p), Some(c)) = (self.columns.pixel(r), self.columns.counter(r)) {
                        if self.monitored.contains(&p) {
                            self.step_counts.insert(p, c);
                        }
                    }
                }
            }
        }
    }

    fn flush(&mut self) {
        let Some(t) = self.current.take() else {
            return;
        };
        let columns = &self.columns;
        self.step_rows
            .sort_by_cached_key(|r| (columns.pixel(r), columns.counter(r)));
        if let Some(w) = self.results.as_mut() {
            if self.io_error.is_none() {
                for r in &self.step_rows {
                    let result = writeln!(
                        w,
                        "{},{},{},{}",
                        t,
                        r.get(&columns.lat).map(ToString::to_string).unwrap_or_default(),
                        r.get(&columns.lon).map(ToString::to_string).unwrap_or_default(),
                        r.get(&columns.counter).map(ToString::to_string).unwrap_or_default(),
                    );
                    if let Err(e) = result {
                        self.io_error = Some(e);
                        break;
                    }
                }
            }
        }
        self.alerts.extend(self.detector.step(t, &self.step_rows));
        self.step_rows.clear();
        if self.monitor_seen {
            for (p, points) in self.series.iter_mut() {
                points.push(SeriesPoint {
                    eval_time_ms: t,
                    counter: self.step_counts.get(p).copied().unwrap_or(0),
                });
            }
        }
        self.step_counts.clear();
        self.monitor_seen = false;
    }

    fn finish(mut self) -> Result<(Vec<Alert>, SeriesLog), SimError> {
        self.flush();
        if let Some(e) = self.io_error {
            return Err(e.into());
        }
        Ok((self.alerts, self.series))
    }
}

fn advance(engine: &mut Engine, collector: &mut Collector, to: u64) -> Result<(), SimError> {
    if to > engine.now() {
        engine.advance_clock_each(to, |h, _, t, rows| collector.on_eval(h, t, rows))?;
    }
    Ok(())
}

enum Feed {
    Event(usize, StatusEvent),
    /// Every event up to this time has been sent.
    Watermark(u64),
}

/// Runs a scenario. `base_query` is the detection query before the
/// scenario's window and step are applied.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    base_query: &ContinuousQuery,
    mut sinks: RunSinks,
) -> Result<ScenarioOutput, SimError> {
    cfg.validate()?;
    let started = Instant::now();
    let query = effective_query(cfg, base_query);
    let columns = AlertColumns::from_query(&query).ok_or_else(|| SimError::Config {
        field: "query.file".into(),
        message: "the detection query needs two group keys and a COUNT".into(),
    })?;
    let plans = plan_pixels(cfg);
    let incidents = plan_incidents(cfg);
    let run_length = cfg.run_length.get();

    let mut monitored: BTreeSet<GeoPixel> = cfg.monitor_pixels().collect();
    monitored.extend(incidents.iter().map(|i| i.pixel));
    let blind: BlindZoneList = cfg.blind_zone_pixels().collect();

    let mut engine = Engine::new(EngineOptions {
        parallel: cfg.parallel,
    });
    let mut collector = Collector::new(columns, blind, monitored.clone(), sinks.results.take());
    let streams: Vec<String> = match cfg.query_mode {
        QueryMode::Global => {
            let h = engine.register_query(query.clone(), None)?;
            collector.register(h, Role::Detect);
            let h = engine.register_query(query.without_having(format!("{}/monitor", query.name)), None)?;
            collector.register(h, Role::MonitorAll);
            vec![query.stream_iri.clone(); plans.len()]
        }
        QueryMode::PerPixel => {
            let mut streams = Vec::with_capacity(plans.len());
            for plan in &plans {
                let stream = pixel_stream(&query.stream_iri, plan.pixel);
                let q = query.retargeted(pixel_name(&query.name, plan.pixel), stream.clone());
                let h = engine.register_query(q, None)?;
                collector.register(h, Role::Detect);
                streams.push(stream);
            }
            for plan in plans.iter().filter(|p| monitored.contains(&p.pixel)) {
                let name = pixel_name(&format!("{}/monitor", query.name), plan.pixel);
                let mut q = query.retargeted(name, pixel_stream(&query.stream_iri, plan.pixel));
                q.having = None;
                let h = engine.register_query(q, None)?;
                collector.register(h, Role::Monitor(plan.pixel));
            }
            streams
        }
    };

    if let Some(w) = sinks.events.as_mut() {
        writeln!(w, "{}", log_header(run_length))?;
    }
    let mut lost: HashMap<usize, HashSet<String>> = HashMap::new();
    let mut events = 0u64;
    let mut triples = 0u64;
    let mut consume = |engine: &mut Engine, collector: &mut Collector, feed: Feed| -> Result<(), SimError> {
        match feed {
            Feed::Watermark(t) => advance(engine, collector, t.min(run_length)),
            Feed::Event(idx, ev) => {
                if ev.timestamp > 0 {
                    advance(engine, collector, ev.timestamp - 1)?;
                }
                let encoded = encode_event(&ev);
                if let Some(w) = sinks.events.as_mut() {
                    write_ntriples(&mut **w, &encoded)?;
                }
                if ev.status == Status::UnReachable {
                    lost.entry(idx).or_default().insert(ev.phone_id);
                }
                events += 1;
                triples += encoded.len() as u64;
                engine.ingest(&streams[idx], &encoded)?;
                Ok(())
            }
        }
    };

    let source = EventSource::new(cfg, &plans, &incidents);
    match cfg.clock {
        ClockMode::Virtual => {
            for (idx, ev) in source {
                consume(&mut engine, &mut collector, Feed::Event(idx, ev))?;
            }
        }
        ClockMode::Realtime => {
            let speedup = cfg.realtime_speedup;
            let (tx, rx) = mpsc::sync_channel::<Feed>(4096);
            std::thread::scope(|scope| -> Result<(), SimError> {
                scope.spawn(move || produce_realtime(source, tx, speedup, run_length));
                for feed in rx {
                    consume(&mut engine, &mut collector, feed)?;
                }
                Ok(())
            })?;
        }
    }
    advance(&mut engine, &mut collector, run_length)?;
    if let Some(w) = sinks.events.as_mut() {
        w.flush()?;
    }
    let (alerts, series) = collector.finish()?;

    let coverage = match cfg.query_mode {
        QueryMode::Global => Coverage::All,
        QueryMode::PerPixel => Coverage::Pixels(plans.iter().map(|p| p.pixel).collect()),
    };
    let truth: Vec<GroundTruth> = incidents.iter().map(ground_truth).collect();
    let metrics = compute_metrics(&alerts, &truth, &series, &coverage);
    let pixel_totals = lost
        .into_iter()
        .map(|(idx, phones)| (plans[idx].pixel, phones.len() as u64))
        .collect();
    Ok(ScenarioOutput {
        resolved: cfg.resolved(),
        query,
        alerts,
        metrics,
        series,
        pixel_totals,
        events,
        triples,
        queries: engine.query_count(),
        stats: engine.stats(),
        wall: started.elapsed(),
    })
}

fn ground_truth(inc: &IncidentPlan) -> GroundTruth {
    GroundTruth {
        pixel: inc.pixel,
        start_ms: inc.start_ms,
        phone_count: inc.phone_count,
    }
}

/// Paces events by the wall clock: simulated time `t` is released at
/// `t / speedup` wall milliseconds after the start. Watermarks let the
/// consumer evaluate while no event is due.
fn produce_realtime(source: EventSource, tx: mpsc::SyncSender<Feed>, speedup: f64, run_length: u64) {
    let start = Instant::now();
    let sim_now = || (start.elapsed().as_secs_f64() * 1_000.0 * speedup) as u64;
    let tick = Duration::from_millis(20);
    let wait_until = |target: u64, tx: &mpsc::SyncSender<Feed>| -> bool {
        loop {
            let now = sim_now();
            if now >= target {
                return true;
            }
            if now > 0 && tx.send(Feed::Watermark(now.min(target - 1))).is_err() {
                return false;
            }
            let remaining = Duration::from_secs_f64((target - now) as f64 / speedup / 1_000.0);
            std::thread::sleep(remaining.min(tick));
        }
    };
    for (idx, ev) in source {
        if !wait_until(ev.timestamp, &tx) || tx.send(Feed::Event(idx, ev)).is_err() {
            return;
        }
    }
    if wait_until(run_length, &tx) {
        let _ = tx.send(Feed::Watermark(run_length));
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    /// End of the run; defaults to the log header, else the last timestamp.
    pub run_length: Option<u64>,
    pub blind_zones: BlindZoneList,
    pub monitor: Vec<GeoPixel>,
    pub parallel: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub alerts: Vec<Alert>,
    pub series: SeriesLog,
    pub triples: u64,
    pub run_length: u64,
}

/// Feeds a recorded log through one query on its own stream.
pub fn replay(
    mut reader: impl BufRead,
    query: &ContinuousQuery,
    options: &ReplayOptions,
    results: Option<&mut dyn Write>,
) -> Result<ReplayOutput, SimError> {
    let columns = AlertColumns::from_query(query).ok_or_else(|| SimError::Config {
        field: "query".into(),
        message: "the detection query needs two group keys and a COUNT".into(),
    })?;
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let header = parse_log_header(&first);
    let reader = io::Cursor::new(first.into_bytes()).chain(reader);

    let mut engine = Engine::new(EngineOptions {
        parallel: options.parallel,
    });
    let monitored: BTreeSet<GeoPixel> = options.monitor.iter().copied().collect();
    let mut collector = Collector::new(columns, options.blind_zones.clone(), monitored.clone(), results);
    let h = engine.register_query(query.clone(), None)?;
    collector.register(h, Role::Detect);
    if !monitored.is_empty() {
        let h = engine.register_query(query.without_having(format!("{}/monitor", query.name)), None)?;
        collector.register(h, Role::MonitorAll);
    }

    let stream = query.stream_iri.clone();
    let mut batch: Vec<TimestampedTriple> = Vec::new();
    let mut triples = 0u64;
    let mut last = 0u64;
    for triple in read_ntriples(reader) {
        let triple = triple?;
        if batch.last().is_some_and(|b| b.timestamp != triple.timestamp) {
            engine.ingest(&stream, &batch)?;
            batch.clear();
        }
        if batch.is_empty() && triple.timestamp > 0 {
            advance(&mut engine, &mut collector, triple.timestamp - 1)?;
        }
        last = triple.timestamp;
        triples += 1;
        batch.push(triple);
    }
    if !batch.is_empty() {
        engine.ingest(&stream, &batch)?;
    }
    let run_length = options.run_length.or(header).unwrap_or(last);
    advance(&mut engine, &mut collector, run_length)?;
    let (alerts, series) = collector.finish()?;
    Ok(ReplayOutput {
        alerts,
        series,
        triples,
        run_length,
    })
}
