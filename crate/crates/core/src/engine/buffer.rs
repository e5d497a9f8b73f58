//! Per-stream window state.
//!
//! Ingested batches wait in `pending` until an evaluation at time `E`
//! materializes every batch with timestamp `<= E`. Materialized triples are
//! held with set semantics: one entry per distinct triple, stamped with the
//! latest timestamp it was seen at. Two ordered indexes serve the pattern
//! lookups, `(p, s) -> o` and `(p, o) -> s`.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};

use crate::model::{Term, TimestampedTriple};

pub(crate) type TermId = u32;
pub(crate) type TripleKey = [TermId; 3];

#[derive(Default)]
pub(crate) struct Dictionary {
    ids: HashMap<Term, TermId>,
    terms: Vec<Term>,
}

impl Dictionary {
    pub fn intern(&mut self, term: &Term) -> TermId {
        if let Some(&id) = self.ids.get(term) {
            return id;
        }
        let id = self.terms.len() as TermId;
        self.terms.push(term.clone());
        self.ids.insert(term.clone(), id);
        id
    }

    pub fn term(&self, id: TermId) -> &Term {
        &self.terms[id as usize]
    }
}

struct Batch {
    timestamp: u64,
    triples: Vec<TripleKey>,
}

/// Time-ordered content of one stream.
pub struct StreamBuffer {
    pub(crate) dict: Dictionary,
    pending: VecDeque<Batch>,
    live: HashMap<TripleKey, u64>,
    by_subject: HashMap<TermId, BTreeSet<(TermId, TermId)>>,
    by_object: HashMap<TermId, BTreeSet<(TermId, TermId)>>,
    expiry: BinaryHeap<Reverse<(u64, TripleKey)>>,
    watermark: Option<u64>,
    materialized_until: Option<u64>,
    ingested: u64,
}

/// Reason a batch was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Refusal {
    BeforeWatermark { watermark: u64 },
    AlreadyEvaluated { evaluated: u64 },
}

impl StreamBuffer {
    pub(crate) fn new() -> Self {
        StreamBuffer {
            dict: Dictionary::default(),
            pending: VecDeque::new(),
            live: HashMap::new(),
            by_subject: HashMap::new(),
            by_object: HashMap::new(),
            expiry: BinaryHeap::new(),
            watermark: None,
            materialized_until: None,
            ingested: 0,
        }
    }

    /// Timestamp of the newest ingested triple.
    pub fn watermark(&self) -> Option<u64> {
        self.watermark
    }

    /// Distinct triples currently held in the window.
    pub fn live_len(&self) -> usize {
        self.live.len()
    }

    /// Triples ingested but not yet visible to any evaluation.
    pub fn pending_len(&self) -> usize {
        self.pending.iter().map(|b| b.triples.len()).sum()
    }

    pub fn ingested(&self) -> u64 {
        self.ingested
    }

    /// Oldest timestamp among live triples.
    pub fn oldest_live(&self) -> Option<u64> {
        self.live.values().copied().min()
    }

    /// Checks ordering for a whole call before anything is appended.
    pub(crate) fn check(&self, triples: &[TimestampedTriple]) -> Result<(), (u64, Refusal)> {
        let mut watermark = self.watermark;
        for t in triples {
            if let Some(w) = watermark {
                if t.timestamp < w {
                    return Err((t.timestamp, Refusal::BeforeWatermark { watermark: w }));
                }
            }
            if let Some(e) = self.materialized_until {
                if t.timestamp <= e {
                    return Err((t.timestamp, Refusal::AlreadyEvaluated { evaluated: e }));
                }
            }
            watermark = Some(t.timestamp);
        }
        Ok(())
    }

    /// Appends triples; consecutive triples with one timestamp form one
    /// batch that becomes visible atomically.
    pub(crate) fn append(&mut self, triples: &[TimestampedTriple]) {
        for t in triples {
            let key = [
                self.dict.intern(&t.subject),
                self.dict.intern(&Term::Iri(t.predicate.clone())),
                self.dict.intern(&t.object),
            ];
            match self.pending.back_mut() {
                Some(batch) if batch.timestamp == t.timestamp => batch.triples.push(key),
                _ => self.pending.push_back(Batch {
                    timestamp: t.timestamp,
                    triples: vec![key],
                }),
            }
            self.watermark = Some(t.timestamp);
            self.ingested += 1;
        }
    }

    /// Makes every pending batch with timestamp `<= until` visible.
    pub(crate) fn materialize(&mut self, until: u64) {
        while let Some(batch) = self.pending.front() {
            if batch.timestamp > until {
                break;
            }
            let batch = self.pending.pop_front().expect("front exists");
            for key in batch.triples {
                match self.live.insert(key, batch.timestamp) {
                    Some(_) => {}
                    None => {
                        let [s, p, o] = key;
                        self.by_subject.entry(p).or_default().insert((s, o));
                        self.by_object.entry(p).or_default().insert((o, s));
                        self.expiry.push(Reverse((batch.timestamp, key)));
                    }
                }
            }
        }
        self.materialized_until = Some(self.materialized_until.map_or(until, |m| m.max(until)));
    }

    /// Drops every triple whose latest timestamp is `<= cutoff`.
    pub(crate) fn evict(&mut self, cutoff: u64) {
        while let Some(&Reverse((stamp, key))) = self.expiry.peek() {
            if stamp > cutoff {
                break;
            }
            self.expiry.pop();
            let latest = self.live[&key];
            if latest > stamp {
                self.expiry.push(Reverse((latest, key)));
                continue;
            }
            self.live.remove(&key);
            let [s, p, o] = key;
            if let Some(set) = self.by_subject.get_mut(&p) {
                set.remove(&(s, o));
                if set.is_empty() {
                    self.by_subject.remove(&p);
                }
            }
            if let Some(set) = self.by_object.get_mut(&p) {
                set.remove(&(o, s));
                if set.is_empty() {
                    self.by_object.remove(&p);
                }
            }
        }
    }

    pub(crate) fn latest(&self, key: &TripleKey) -> Option<u64> {
        self.live.get(key).copied()
    }

    /// `(s, o)` pairs for predicate `p`, optionally restricted to subject `s`.
    pub(crate) fn subjects_objects(
        &self,
        p: TermId,
        s: Option<TermId>,
    ) -> impl Iterator<Item = (TermId, TermId)> + '_ {
        let set = self.by_subject.get(&p);
        let range = match s {
            Some(s) => (s, 0)..=(s, TermId::MAX),
            None => (0, 0)..=(TermId::MAX, TermId::MAX),
        };
        set.into_iter().flat_map(move |set| set.range(range.clone()).copied())
    }

    /// Subjects with predicate `p` and object `o`.
    pub(crate) fn subjects_of(&self, p: TermId, o: TermId) -> impl Iterator<Item = TermId> + '_ {
        self.by_object
            .get(&p)
            .into_iter()
            .flat_map(move |set| set.range((o, 0)..=(o, TermId::MAX)).map(|&(_, s)| s))
    }

    pub(crate) fn all_live(&self) -> impl Iterator<Item = (&TripleKey, &u64)> {
        self.live.iter()
    }
}
