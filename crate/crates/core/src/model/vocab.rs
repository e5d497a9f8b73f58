//! IRI constants for the network-resource and position vocabularies.

pub const NET: &str = "http://home.eps.hw.ac.uk/~qz1/ontologies/wirelessnetwork_networkResource.owl/";
pub const CORE: &str = "http://home.eps.hw.ac.uk/~qz1/ontologies/wirelessnetwork.owl/";
pub const POS: &str = "http://www.w3.org/2003/01/geo/wgs84_pos/";
pub const XSD: &str = "http://www.w3.org/2001/XMLSchema#";
pub const FN: &str = "http://www.w3.org/2005/xpath-functions#";
pub const RDF: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";

pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
pub const XSD_DOUBLE: &str = "http://www.w3.org/2001/XMLSchema#double";
pub const XSD_STRING: &str = "http://www.w3.org/2001/XMLSchema#string";

pub const USER_EQUIPMENT: &str =
    "http://home.eps.hw.ac.uk/~qz1/ontologies/wirelessnetwork_networkResource.owl/UserEquipment";
pub const HAS_STATUS: &str =
    "http://home.eps.hw.ac.uk/~qz1/ontologies/wirelessnetwork_networkResource.owl/hasStatus";
pub const STATUS: &str =
    "http://home.eps.hw.ac.uk/~qz1/ontologies/wirelessnetwork_networkResource.owl/Status";
pub const ATTACHED: &str =
    "http://home.eps.hw.ac.uk/~qz1/ontologies/wirelessnetwork_networkResource.owl/Attached";
pub const DETACHED: &str =
    "http://home.eps.hw.ac.uk/~qz1/ontologies/wirelessnetwork_networkResource.owl/Detached";
pub const UNREACHABLE: &str =
    "http://home.eps.hw.ac.uk/~qz1/ontologies/wirelessnetwork_networkResource.owl/unReachable";

pub const POINT: &str = "http://www.w3.org/2003/01/geo/wgs84_pos/Point";
pub const LOCATION: &str = "http://www.w3.org/2003/01/geo/wgs84_pos/location";
pub const LAT: &str = "http://www.w3.org/2003/01/geo/wgs84_pos/lat";
pub const LONG: &str = "http://www.w3.org/2003/01/geo/wgs84_pos/long";
pub const ALT: &str = "http://www.w3.org/2003/01/geo/wgs84_pos/alt";
/// Alternative spellings accepted when decoding.
pub const LATITUDE: &str = "http://www.w3.org/2003/01/geo/wgs84_pos/latitude";
pub const LONGITUDE: &str = "http://www.w3.org/2003/01/geo/wgs84_pos/longitude";

/// Default stream the detection query reads from.
pub const STREAM: &str =
    "http://home.eps.hw.ac.uk/~qz1/ontologies/wirelessnetwork_networkResource.owl/stream";

pub const PHONE_PREFIX: &str =
    "http://home.eps.hw.ac.uk/~qz1/ontologies/wirelessnetwork_networkResource.owl/Phone_";
pub const POINT_PREFIX: &str = "http://www.w3.org/2003/01/geo/wgs84_pos/Point_";

const KNOWN: [&str; 17] = [
    RDF_TYPE,
    XSD_DOUBLE,
    XSD_STRING,
    USER_EQUIPMENT,
    HAS_STATUS,
    STATUS,
    ATTACHED,
    DETACHED,
    UNREACHABLE,
    POINT,
    LOCATION,
    LAT,
    LONG,
    ALT,
    LATITUDE,
    LONGITUDE,
    STREAM,
];

pub fn is_known(iri: &str) -> bool {
    KNOWN.contains(&iri)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_expand_their_prefixes() {
        for (iri, ns, local) in [
            (USER_EQUIPMENT, NET, "UserEquipment"),
            (HAS_STATUS, NET, "hasStatus"),
            (UNREACHABLE, NET, "unReachable"),
            (POINT, POS, "Point"),
            (LAT, POS, "lat"),
            (LONG, POS, "long"),
            (RDF_TYPE, RDF, "type"),
            (XSD_DOUBLE, XSD, "double"),
            (STREAM, NET, "stream"),
        ] {
            assert_eq!(iri, format!("{ns}{local}"));
        }
        assert!(PHONE_PREFIX.starts_with(NET));
        assert!(CORE.ends_with('/'));
    }
}
