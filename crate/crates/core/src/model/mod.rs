//! Phone status events and their RDF triple encoding.
//!
//! One [`StatusEvent`] becomes seven triples that all carry the event
//! timestamp: typing triples for the phone and its point, the location link,
//! the two coordinate literals, the status typing triple and the `hasStatus`
//! triple. Node identifiers are derived from the phone id, so repeated
//! reports of the same phone produce the same subjects.

mod ntriples;
pub mod vocab;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ntriples::{
    format_triple, parse_triple_line, read_ntriples, write_ntriples, NTriplesError, NTriplesReader,
};

/// Connectivity status of a phone as recorded by the location registers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    Attached,
    Detached,
    UnReachable,
}

impl Status {
    pub const ALL: [Status; 3] = [Status::Attached, Status::Detached, Status::UnReachable];

    pub fn iri(self) -> &'static str {
        match self {
            Status::Attached => vocab::ATTACHED,
            Status::Detached => vocab::DETACHED,
            Status::UnReachable => vocab::UNREACHABLE,
        }
    }

    pub fn from_iri(iri: &str) -> Option<Status> {
        Status::ALL.into_iter().find(|s| s.iri() == iri)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Attached => "Attached",
            Status::Detached => "Detached",
            Status::UnReachable => "unReachable",
        })
    }
}

/// A shared, immutable IRI string.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Iri(Arc<str>);

impl Iri {
    pub fn new(value: impl AsRef<str>) -> Self {
        Iri(Arc::from(value.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.0)
    }
}

impl fmt::Display for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Iri {
    fn from(value: &str) -> Self {
        Iri::new(value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Datatype {
    String,
    Double,
}

impl Datatype {
    pub fn iri(self) -> &'static str {
        match self {
            Datatype::String => vocab::XSD_STRING,
            Datatype::Double => vocab::XSD_DOUBLE,
        }
    }

    pub fn from_iri(iri: &str) -> Option<Datatype> {
        match iri {
            vocab::XSD_STRING => Some(Datatype::String),
            vocab::XSD_DOUBLE => Some(Datatype::Double),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub lexical: String,
    pub datatype: Datatype,
}

impl Literal {
    pub fn double(value: f64) -> Self {
        Literal {
            lexical: format!("{value}"),
            datatype: Datatype::Double,
        }
    }

    pub fn string(value: impl Into<String>) -> Self {
        Literal {
            lexical: value.into(),
            datatype: Datatype::String,
        }
    }

    /// Numeric value of the lexical form. Plain strings are accepted when
    /// they hold a number, as in hand-written example graphs.
    pub fn as_f64(&self) -> Option<f64> {
        self.lexical.trim().parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Iri(Iri),
    Blank(String),
    Literal(Literal),
}

impl Term {
    pub fn iri(value: impl AsRef<str>) -> Self {
        Term::Iri(Iri::new(value))
    }

    pub fn as_iri(&self) -> Option<&Iri> {
        match self {
            Term::Iri(iri) => Some(iri),
            _ => None,
        }
    }

    pub fn as_literal(&self) -> Option<&Literal> {
        match self {
            Term::Literal(lit) => Some(lit),
            _ => None,
        }
    }
}

impl From<Iri> for Term {
    fn from(value: Iri) -> Self {
        Term::Iri(value)
    }
}

impl From<Literal> for Term {
    fn from(value: Literal) -> Self {
        Term::Literal(value)
    }
}

/// One element of an RDF stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TimestampedTriple {
    pub subject: Term,
    pub predicate: Iri,
    pub object: Term,
    pub timestamp: u64,
}

impl TimestampedTriple {
    pub fn new(subject: Term, predicate: Iri, object: Term, timestamp: u64) -> Self {
        TimestampedTriple {
            subject,
            predicate,
            object,
            timestamp,
        }
    }
}

/// One phone's position and connectivity at a stream timestamp (milliseconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusEvent {
    pub phone_id: String,
    pub lat: f64,
    pub lon: f64,
    pub status: Status,
    pub timestamp: u64,
}

impl StatusEvent {
    pub fn new(
        phone_id: impl Into<String>,
        lat: f64,
        lon: f64,
        status: Status,
        timestamp: u64,
    ) -> Result<Self, ModelError> {
        let event = StatusEvent {
            phone_id: phone_id.into(),
            lat,
            lon,
            status,
            timestamp,
        };
        event.validate()?;
        Ok(event)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.phone_id.is_empty() {
            return Err(ModelError::InvalidEvent("empty phone id".into()));
        }
        if !self.lat.is_finite() || !self.lon.is_finite() {
            return Err(ModelError::InvalidEvent(format!(
                "non-finite coordinate ({}, {})",
                self.lat, self.lon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("incomplete event graph: no `{0}` triple")]
    IncompleteGraph(&'static str),
    #[error("ambiguous event graph: conflicting `{0}` triples")]
    AmbiguousGraph(&'static str),
    #[error("unrecognized node `{0}`")]
    UnrecognizedNode(String),
    #[error("`{predicate}` value `{lexical}` is not a number")]
    InvalidLiteral {
        predicate: &'static str,
        lexical: String,
    },
}

/// Subject IRI of a phone.
pub fn phone_iri(phone_id: &str) -> Iri {
    Iri::new(format!("{}{}", vocab::PHONE_PREFIX, encode_local(phone_id)))
}

/// IRI of the point node that carries a phone's coordinates.
pub fn point_iri(phone_id: &str) -> Iri {
    Iri::new(format!("{}{}", vocab::POINT_PREFIX, encode_local(phone_id)))
}

/// Recovers the phone id from a phone subject IRI.
pub fn phone_id_of(iri: &str) -> Option<String> {
    iri.strip_prefix(vocab::PHONE_PREFIX).and_then(decode_local)
}

fn is_local_safe(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.')
}

fn encode_local(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if is_local_safe(b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn decode_local(local: &str) -> Option<String> {
    let bytes = local.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = local.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok().filter(|s| !s.is_empty())
}

/// Encodes an event as its seven-triple graph.
pub fn encode_event(event: &StatusEvent) -> Vec<TimestampedTriple> {
    let t = event.timestamp;
    let phone = Term::Iri(phone_iri(&event.phone_id));
    let point = Term::Iri(point_iri(&event.phone_id));
    let status = Term::iri(event.status.iri());
    let rdf_type = Iri::new(vocab::RDF_TYPE);
    vec![
        TimestampedTriple::new(
            phone.clone(),
            rdf_type.clone(),
            Term::iri(vocab::USER_EQUIPMENT),
            t,
        ),
        TimestampedTriple::new(point.clone(), rdf_type.clone(), Term::iri(vocab::POINT), t),
        TimestampedTriple::new(phone.clone(), Iri::new(vocab::LOCATION), point.clone(), t),
        TimestampedTriple::new(
            point.clone(),
            Iri::new(vocab::LAT),
            Literal::double(event.lat).into(),
            t,
        ),
        TimestampedTriple::new(
            point,
            Iri::new(vocab::LONG),
            Literal::double(event.lon).into(),
            t,
        ),
        TimestampedTriple::new(status.clone(), rdf_type, Term::iri(vocab::STATUS), t),
        TimestampedTriple::new(phone, Iri::new(vocab::HAS_STATUS), status, t),
    ]
}

/// Number of triples [`encode_event`] emits per event.
pub const TRIPLES_PER_EVENT: usize = 7;

fn unique<'a, T: Ord + Clone + 'a>(
    values: impl Iterator<Item = &'a T>,
    predicate: &'static str,
) -> Result<T, ModelError> {
    let set: BTreeSet<&T> = values.collect();
    let mut iter = set.into_iter();
    match (iter.next(), iter.next()) {
        (None, _) => Err(ModelError::IncompleteGraph(predicate)),
        (Some(v), None) => Ok(v.clone()),
        (Some(_), Some(_)) => Err(ModelError::AmbiguousGraph(predicate)),
    }
}

/// Inverse of [`encode_event`]. Accepts `pos:latitude` / `pos:longitude` as
/// well as `pos:lat` / `pos:long` for the coordinate properties.
pub fn decode_event(triples: &[TimestampedTriple]) -> Result<StatusEvent, ModelError> {
    let status_triples: Vec<&TimestampedTriple> = triples
        .iter()
        .filter(|t| t.predicate.as_str() == vocab::HAS_STATUS)
        .collect();
    let phone = unique(status_triples.iter().map(|t| &t.subject), "hasStatus")?;
    let status_term = unique(status_triples.iter().map(|t| &t.object), "hasStatus")?;
    let timestamp = status_triples[0].timestamp;

    let phone_id = match &phone {
        Term::Iri(iri) => phone_id_of(iri.as_str()),
        _ => None,
    }
    .ok_or_else(|| ModelError::UnrecognizedNode(format!("{phone:?}")))?;
    let status = status_term
        .as_iri()
        .and_then(|iri| Status::from_iri(iri.as_str()))
        .ok_or_else(|| ModelError::UnrecognizedNode(format!("{status_term:?}")))?;

    let point = unique(
        triples
            .iter()
            .filter(|t| t.predicate.as_str() == vocab::LOCATION && t.subject == phone)
            .map(|t| &t.object),
        "location",
    )?;

    let coordinate = |names: [&str; 2], label: &'static str| -> Result<f64, ModelError> {
        let term = unique(
            triples
                .iter()
                .filter(|t| names.contains(&t.predicate.as_str()) && t.subject == point)
                .map(|t| &t.object),
            label,
        )?;
        let lit = term
            .as_literal()
            .ok_or_else(|| ModelError::UnrecognizedNode(format!("{term:?}")))?;
        lit.as_f64()
            .filter(|v| v.is_finite())
            .ok_or_else(|| ModelError::InvalidLiteral {
                predicate: label,
                lexical: lit.lexical.clone(),
            })
    };
    let lat = coordinate([vocab::LAT, vocab::LATITUDE], "lat")?;
    let lon = coordinate([vocab::LONG, vocab::LONGITUDE], "long")?;

    StatusEvent::new(phone_id, lat, lon, status, timestamp)
}

/// Splits a triple log into per-event graphs. A new graph starts at every
/// `rdf:type net:UserEquipment` triple.
pub fn group_events(triples: Vec<TimestampedTriple>) -> Vec<Vec<TimestampedTriple>> {
    let mut groups: Vec<Vec<TimestampedTriple>> = Vec::new();
    for triple in triples {
        let starts = triple.predicate.as_str() == vocab::RDF_TYPE
            && matches!(&triple.object, Term::Iri(o) if o.as_str() == vocab::USER_EQUIPMENT);
        match groups.last_mut() {
            Some(group) if !starts => group.push(triple),
            _ => groups.push(vec![triple]),
        }
    }
    groups
}

impl FromStr for Status {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "attached" => Ok(Status::Attached),
            "detached" => Ok(Status::Detached),
            "unreachable" => Ok(Status::UnReachable),
            _ => Err(ModelError::UnrecognizedNode(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn documented_example(t: u64) -> Vec<TimestampedTriple> {
        // The documented graph, with the figure's property names and plain literals.
        let phone = Term::iri(format!("{}Phone_1", vocab::NET));
        let point = Term::iri(format!("{}Point_1", vocab::POS));
        let ty = Iri::new(vocab::RDF_TYPE);
        vec![
            TimestampedTriple::new(phone.clone(), ty.clone(), Term::iri(vocab::USER_EQUIPMENT), t),
            TimestampedTriple::new(point.clone(), ty.clone(), Term::iri(vocab::POINT), t),
            TimestampedTriple::new(phone.clone(), Iri::new(vocab::LOCATION), point.clone(), t),
            TimestampedTriple::new(
                point.clone(),
                Iri::new(vocab::LATITUDE),
                Literal::string("329.860").into(),
                t,
            ),
            TimestampedTriple::new(
                point,
                Iri::new(vocab::LONGITUDE),
                Literal::string("246.792").into(),
                t,
            ),
            TimestampedTriple::new(
                Term::iri(vocab::UNREACHABLE),
                ty,
                Term::iri(vocab::STATUS),
                t,
            ),
            TimestampedTriple::new(
                phone,
                Iri::new(vocab::HAS_STATUS),
                Term::iri(vocab::UNREACHABLE),
                t,
            ),
        ]
    }

    #[test]
    fn encodes_the_lost_phone_example() {
        let e = StatusEvent::new("1", 329.860, 246.792, Status::UnReachable, 42).unwrap();
        let triples = encode_event(&e);
        assert_eq!(triples.len(), TRIPLES_PER_EVENT);
        assert!(triples.iter().all(|t| t.timestamp == 42));
        let last = &triples[6];
        assert_eq!(
            last.subject,
            Term::iri(format!("{}Phone_1", vocab::NET))
        );
        assert_eq!(last.predicate.as_str(), vocab::HAS_STATUS);
        assert_eq!(last.object, Term::iri(vocab::UNREACHABLE));
        assert_eq!(triples[3].object, Literal::double(329.86).into());
    }

    #[test]
    fn attached_has_same_shape() {
        let lost = StatusEvent::new("7", 1.0, 2.0, Status::UnReachable, 0).unwrap();
        let ok = StatusEvent {
            status: Status::Attached,
            ..lost.clone()
        };
        let a = encode_event(&lost);
        let b = encode_event(&ok);
        assert_eq!(a[..5], b[..5]);
        assert_eq!(b[6].object, Term::iri(vocab::ATTACHED));
        assert_eq!(b[5].subject, Term::iri(vocab::ATTACHED));
    }

    #[test]
    fn decodes_the_documented_graph() {
        let e = decode_event(&documented_example(9)).unwrap();
        assert_eq!(
            e,
            StatusEvent::new("1", 329.860, 246.792, Status::UnReachable, 9).unwrap()
        );
    }

    #[test]
    fn decode_errors() {
        assert_eq!(
            decode_event(&[]),
            Err(ModelError::IncompleteGraph("hasStatus"))
        );
        let mut g = documented_example(0);
        g.retain(|t| t.predicate.as_str() != vocab::LOCATION);
        assert_eq!(decode_event(&g), Err(ModelError::IncompleteGraph("location")));

        let mut g = documented_example(0);
        g.retain(|t| t.predicate.as_str() != vocab::LONGITUDE);
        assert_eq!(decode_event(&g), Err(ModelError::IncompleteGraph("long")));

        let mut g = documented_example(0);
        let mut extra = g[3].clone();
        extra.object = Literal::string("329.861").into();
        g.push(extra);
        assert_eq!(decode_event(&g), Err(ModelError::AmbiguousGraph("lat")));

        // An identical duplicate is not a conflict.
        let mut g = documented_example(0);
        g.push(g[3].clone());
        assert!(decode_event(&g).is_ok());

        let mut g = documented_example(0);
        g[3].object = Literal::string("north").into();
        assert!(matches!(
            decode_event(&g),
            Err(ModelError::InvalidLiteral { predicate: "lat", .. })
        ));
    }

    #[test]
    fn event_validation() {
        assert!(StatusEvent::new("", 0.0, 0.0, Status::Attached, 0).is_err());
        assert!(StatusEvent::new("x", f64::NAN, 0.0, Status::Attached, 0).is_err());
    }

    #[test]
    fn groups_concatenated_events() {
        let mut log = Vec::new();
        for i in 0..3 {
            let e = StatusEvent::new(format!("p{i}"), 1.0, 2.0, Status::Attached, i).unwrap();
            log.extend(encode_event(&e));
        }
        let groups = group_events(log);
        assert_eq!(groups.len(), 3);
        assert_eq!(decode_event(&groups[2]).unwrap().phone_id, "p2");
    }

    fn status() -> impl Strategy<Value = Status> {
        prop_oneof![
            Just(Status::Attached),
            Just(Status::Detached),
            Just(Status::UnReachable)
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn decode_inverts_encode(
            id in "[A-Za-z0-9_ %/é#-]{1,16}",
            lat in -1.0e4f64..1.0e4,
            lon in -1.0e4f64..1.0e4,
            status in status(),
            t in 0u64..u64::MAX,
        ) {
            let e = StatusEvent::new(id, lat, lon, status, t).unwrap();
            let triples = encode_event(&e);
            prop_assert_eq!(triples.len(), TRIPLES_PER_EVENT);
            for tr in &triples {
                for iri in [tr.subject.as_iri(), Some(&tr.predicate), tr.object.as_iri()]
                    .into_iter()
                    .flatten()
                {
                    prop_assert!(vocab::is_known(iri.as_str())
                        || iri == &phone_iri(&e.phone_id)
                        || iri == &point_iri(&e.phone_id));
                }
            }
            prop_assert_eq!(decode_event(&triples).unwrap(), e);
        }
    }
}
