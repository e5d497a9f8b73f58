//! Continuous evaluation of registered queries over timestamped triple
//! streams.
//!
//! Windows are time-based and sliding: an evaluation at `E` sees every triple
//! whose latest timestamp lies in `(E - range, E]`. Evaluations are anchored
//! at registration time and repeat every `step`; when the clock jumps several
//! steps, each intermediate step is still evaluated, in time order.
//!
//! Ingestion into one stream is in-order. A batch becomes visible to
//! evaluations only as a whole, once an evaluation passes its timestamp.
//! Different streams may be fed from different threads through
//! [`Engine::ingest`], which takes `&self`.

mod buffer;
mod eval;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

pub use buffer::StreamBuffer;
use buffer::Refusal;
use eval::CompiledQuery;

use crate::model::{Term, TimestampedTriple};
use crate::query::{validate, ContinuousQuery, Diagnostic};

/// A cell of a result row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Unbound,
    Int(i64),
    Term(Term),
}

impl Value {
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Term(Term::Literal(lit)) => lit.as_f64(),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Unbound => Ok(()),
            Value::Int(i) => write!(f, "{i}"),
            Value::Term(Term::Iri(iri)) => write!(f, "{iri}"),
            Value::Term(Term::Blank(b)) => write!(f, "_:{b}"),
            Value::Term(Term::Literal(lit)) => f.write_str(&lit.lexical),
        }
    }
}

/// One group (or solution) that passed HAVING at an evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultRow {
    pub eval_time: u64,
    /// Group keys first, then the remaining projections in query order.
    pub columns: Vec<(String, Value)>,
}

impl ResultRow {
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    pub fn int(&self, name: &str) -> Option<i64> {
        self.get(name).and_then(Value::as_i64)
    }
}

/// Receives every evaluation of the queries it is attached to.
pub trait ResultSink: Send + Sync {
    fn deliver(&self, query: &str, eval_time: u64, rows: &[ResultRow]);
}

impl<F> ResultSink for F
where
    F: Fn(&str, u64, &[ResultRow]) + Send + Sync,
{
    fn deliver(&self, query: &str, eval_time: u64, rows: &[ResultRow]) {
        self(query, eval_time, rows)
    }
}

/// Sink that keeps every non-empty result in memory.
#[derive(Default)]
pub struct CollectingSink {
    rows: Mutex<Vec<(String, ResultRow)>>,
}

impl CollectingSink {
    pub fn take(&self) -> Vec<(String, ResultRow)> {
        std::mem::take(&mut *self.rows.lock().expect("sink lock"))
    }
}

impl ResultSink for CollectingSink {
    fn deliver(&self, query: &str, _eval_time: u64, rows: &[ResultRow]) {
        if rows.is_empty() {
            return;
        }
        let mut guard = self.rows.lock().expect("sink lock");
        guard.extend(rows.iter().map(|r| (query.to_string(), r.clone())));
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("query `{0}` is already registered")]
    AlreadyRegistered(String),
    #[error("query `{name}` is invalid: {}", .diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidQuery {
        name: String,
        diagnostics: Vec<Diagnostic>,
    },
    #[error("unknown stream <{0}>")]
    UnknownStream(String),
    #[error("late event on <{stream}>: timestamp {timestamp} is before the stream watermark {watermark}")]
    LateEvent {
        stream: String,
        timestamp: u64,
        watermark: u64,
    },
    #[error("late event on <{stream}>: timestamp {timestamp} falls in an already evaluated step (evaluated up to {evaluated})")]
    AlreadyEvaluated {
        stream: String,
        timestamp: u64,
        evaluated: u64,
    },
    #[error("query `{query}` is due at {due}, not {requested}")]
    NotDue {
        query: String,
        due: u64,
        requested: u64,
    },
    #[error("clock cannot move back from {now} to {requested}")]
    ClockRegression { now: u64, requested: u64 },
}

/// Identifies a registered query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueryHandle(usize);

impl QueryHandle {
    /// Registration order, starting at 0.
    pub fn index(self) -> usize {
        self.0
    }
}

/// Scheduling state of a registered query.
#[derive(Debug, Clone)]
pub struct QueryInfo {
    pub query: ContinuousQuery,
    pub registration_time: u64,
    pub next_eval_time: u64,
    pub evaluations: u64,
}

struct Registered {
    info: QueryInfo,
    compiled: CompiledQuery,
    stream: usize,
    sink: Option<Arc<dyn ResultSink>>,
}

struct Stream {
    iri: String,
    buffer: Mutex<StreamBuffer>,
    /// Longest window among the queries reading this stream.
    max_range: u64,
}

/// One evaluation performed by [`Engine::advance_clock`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub handle: QueryHandle,
    pub query: String,
    pub eval_time: u64,
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EngineOptions {
    /// Evaluate handles that fall due together on a thread pool.
    pub parallel: bool,
}

/// Per-evaluation processing time, for reporting only.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EngineStats {
    pub evaluations: u64,
    pub total_nanos: u128,
    pub max_nanos: u128,
}

impl EngineStats {
    pub fn mean_micros(&self) -> f64 {
        if self.evaluations == 0 {
            0.0
        } else {
            self.total_nanos as f64 / self.evaluations as f64 / 1_000.0
        }
    }
}

pub struct Engine {
    streams: Vec<Stream>,
    stream_ids: HashMap<String, usize>,
    queries: Vec<Registered>,
    query_ids: HashMap<String, usize>,
    schedule: BinaryHeap<Reverse<(u64, usize)>>,
    clock: u64,
    options: EngineOptions,
    stats: EngineStats,
}

impl Default for Engine {
    fn default() -> Self {
        Engine::new(EngineOptions::default())
    }
}

fn lock(buffer: &Mutex<StreamBuffer>) -> MutexGuard<'_, StreamBuffer> {
    buffer.lock().unwrap_or_else(|e| e.into_inner())
}

impl Engine {
    pub fn new(options: EngineOptions) -> Self {
        Engine {
            streams: Vec::new(),
            stream_ids: HashMap::new(),
            queries: Vec::new(),
            query_ids: HashMap::new(),
            schedule: BinaryHeap::new(),
            clock: 0,
            options,
            stats: EngineStats::default(),
        }
    }

    /// Current engine time in milliseconds.
    pub fn now(&self) -> u64 {
        self.clock
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    /// Declares a stream. Registering an existing stream is a no-op.
    pub fn register_stream(&mut self, iri: &str) {
        if self.stream_ids.contains_key(iri) {
            return;
        }
        self.stream_ids.insert(iri.to_string(), self.streams.len());
        self.streams.push(Stream {
            iri: iri.to_string(),
            buffer: Mutex::new(StreamBuffer::new()),
            max_range: 0,
        });
    }

    pub fn has_stream(&self, iri: &str) -> bool {
        self.stream_ids.contains_key(iri)
    }

    /// Registers a query at the current engine time; the first evaluation is
    /// one step later. The query's stream is declared if needed.
    pub fn register_query(
        &mut self,
        query: ContinuousQuery,
        sink: Option<Arc<dyn ResultSink>>,
    ) -> Result<QueryHandle, EngineError> {
        if self.query_ids.contains_key(&query.name) {
            return Err(EngineError::AlreadyRegistered(query.name));
        }
        let diagnostics = validate(&query);
        if !diagnostics.is_empty() {
            return Err(EngineError::InvalidQuery {
                name: query.name,
                diagnostics,
            });
        }
        self.register_stream(&query.stream_iri);
        let stream = self.stream_ids[&query.stream_iri];
        let compiled = {
            let entry = &mut self.streams[stream];
            entry.max_range = entry.max_range.max(query.window.range_ms);
            CompiledQuery::compile(&query, entry.buffer.get_mut().unwrap_or_else(|e| e.into_inner()))
        };
        let registration_time = self.clock;
        let next_eval_time = registration_time + query.window.step_ms;
        let id = self.queries.len();
        self.query_ids.insert(query.name.clone(), id);
        self.schedule.push(Reverse((next_eval_time, id)));
        self.queries.push(Registered {
            info: QueryInfo {
                query,
                registration_time,
                next_eval_time,
                evaluations: 0,
            },
            compiled,
            stream,
            sink,
        });
        Ok(QueryHandle(id))
    }

    pub fn handle(&self, name: &str) -> Option<QueryHandle> {
        self.query_ids.get(name).map(|&i| QueryHandle(i))
    }

    pub fn info(&self, handle: QueryHandle) -> &QueryInfo {
        &self.queries[handle.0].info
    }

    pub fn query_count(&self) -> usize {
        self.queries.len()
    }

    /// Appends triples to a stream. The whole call is rejected if any
    /// timestamp is out of order or falls in an already evaluated step.
    pub fn ingest(&self, stream_iri: &str, triples: &[TimestampedTriple]) -> Result<(), EngineError> {
        let &id = self
            .stream_ids
            .get(stream_iri)
            .ok_or_else(|| EngineError::UnknownStream(stream_iri.to_string()))?;
        let mut buffer = lock(&self.streams[id].buffer);
        buffer.check(triples).map_err(|(timestamp, refusal)| match refusal {
            Refusal::BeforeWatermark { watermark } => EngineError::LateEvent {
                stream: stream_iri.to_string(),
                timestamp,
                watermark,
            },
            Refusal::AlreadyEvaluated { evaluated } => EngineError::AlreadyEvaluated {
                stream: stream_iri.to_string(),
                timestamp,
                evaluated,
            },
        })?;
        buffer.append(triples);
        Ok(())
    }

    /// Runs `f` with read access to a stream buffer.
    pub fn with_buffer<R>(&self, stream_iri: &str, f: impl FnOnce(&StreamBuffer) -> R) -> Option<R> {
        let &id = self.stream_ids.get(stream_iri)?;
        Some(f(&lock(&self.streams[id].buffer)))
    }

    fn run_one(streams: &[Stream], reg: &Registered, eval_time: u64) -> (Vec<ResultRow>, u128) {
        let started = Instant::now();
        let stream = &streams[reg.stream];
        let mut buffer = lock(&stream.buffer);
        buffer.materialize(eval_time);
        if let Some(cutoff) = eval_time.checked_sub(stream.max_range) {
            buffer.evict(cutoff);
        }
        let rows = reg.compiled.evaluate(&buffer, eval_time);
        (rows, started.elapsed().as_nanos())
    }

    fn record(&mut self, id: usize, eval_time: u64, rows: &[ResultRow], nanos: u128) {
        let reg = &mut self.queries[id];
        reg.info.next_eval_time = eval_time + reg.info.query.window.step_ms;
        reg.info.evaluations += 1;
        self.schedule.push(Reverse((reg.info.next_eval_time, id)));
        if let Some(sink) = &reg.sink {
            sink.deliver(&reg.info.query.name, eval_time, rows);
        }
        self.stats.evaluations += 1;
        self.stats.total_nanos += nanos;
        self.stats.max_nanos = self.stats.max_nanos.max(nanos);
    }

    /// Evaluates one query at its scheduled time.
    pub fn evaluate_step(
        &mut self,
        handle: QueryHandle,
        eval_time: u64,
    ) -> Result<Vec<ResultRow>, EngineError> {
        let reg = &self.queries[handle.0];
        if eval_time != reg.info.next_eval_time {
            return Err(EngineError::NotDue {
                query: reg.info.query.name.clone(),
                due: reg.info.next_eval_time,
                requested: eval_time,
            });
        }
        let (rows, nanos) = Engine::run_one(&self.streams, reg, eval_time);
        self.record(handle.0, eval_time, &rows, nanos);
        Ok(rows)
    }

    /// Runs every evaluation due at or before `to`, in time order (handles
    /// due together run in registration order), and moves the clock to `to`.
    pub fn advance_clock(&mut self, to: u64) -> Result<Vec<Evaluation>, EngineError> {
        let mut out = Vec::new();
        self.advance_clock_each(to, |handle, name, eval_time, rows| {
            out.push(Evaluation {
                handle,
                query: name.to_string(),
                eval_time,
                rows,
            })
        })?;
        Ok(out)
    }

    /// Like [`Engine::advance_clock`], handing each evaluation to `f` as
    /// `(handle, query name, eval_time, rows)`.
    pub fn advance_clock_each(
        &mut self,
        to: u64,
        mut f: impl FnMut(QueryHandle, &str, u64, Vec<ResultRow>),
    ) -> Result<(), EngineError> {
        if to < self.clock {
            return Err(EngineError::ClockRegression {
                now: self.clock,
                requested: to,
            });
        }
        let mut batch = Vec::new();
        loop {
            let Some(&Reverse((due, _))) = self.schedule.peek() else {
                break;
            };
            if due > to {
                break;
            }
            batch.clear();
            while let Some(&Reverse((t, id))) = self.schedule.peek() {
                if t != due {
                    break;
                }
                self.schedule.pop();
                // Entries left behind by a manual evaluate_step are stale.
                if self.queries[id].info.next_eval_time == t {
                    batch.push(id);
                }
            }
            batch.sort_unstable();
            batch.dedup();
            let results: Vec<(Vec<ResultRow>, u128)> = if self.options.parallel && batch.len() > 1 {
                let streams = &self.streams;
                let queries = &self.queries;
                batch
                    .par_iter()
                    .map(|&id| Engine::run_one(streams, &queries[id], due))
                    .collect()
            } else {
                batch
                    .iter()
                    .map(|&id| Engine::run_one(&self.streams, &self.queries[id], due))
                    .collect()
            };
            for (&id, (rows, nanos)) in batch.iter().zip(results) {
                self.record(id, due, &rows, nanos);
                f(QueryHandle(id), &self.queries[id].info.query.name, due, rows);
            }
        }
        self.clock = to;
        Ok(())
    }

    pub fn stream_iris(&self) -> impl Iterator<Item = &str> {
        self.streams.iter().map(|s| s.iri.as_str())
    }
}

#[cfg(test)]
mod tests;
