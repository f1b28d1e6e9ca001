//! Geo-referenced radial feeder model and its native JSON document format.
//!
//! A document is one JSON object:
//!
//! ```json
//! {
//!   "buses":  [{"id": "b0", "lat": 37.3, "lon": -121.9, "base_kv": 12.47}],
//!   "lines":  [{"id": "l1", "from_bus": "b0", "to_bus": "b1",
//!               "resistance_ohm": 0.2, "reactance_ohm": 0.4, "ampacity_a": 400}],
//!   "loads":  [{"id": "ld1", "bus_id": "b1", "kw": 120, "kvar": 40}],
//!   "source": {"bus_id": "b0", "voltage_pu": 1.0},
//!   "units":  {"coordinates": "deg", "voltage": "kV", ...}
//! }
//! ```
//!
//! `units` is optional; when present every tag must match the fixed unit
//! system. A bus may carry `"transformer": true` to mark it as a candidate
//! target for station assignment.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::num::{round_to, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("schema violation at {element}: {message}")]
    Schema { element: String, message: String },
    #[error("dangling bus reference: {bus} (from {element})")]
    DanglingBus { element: String, bus: String },
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("invalid value at {element}: {message}")]
    Invalid { element: String, message: String },
}

impl From<serde_json::Error> for NetworkError {
    fn from(e: serde_json::Error) -> Self {
        NetworkError::Json(e.to_string())
    }
}

fn ser_coord<T: Scalar, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_to(v.as_f64(), 6))
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct Bus<T> {
    pub id: String,
    #[serde(serialize_with = "ser_coord")]
    pub lat: T,
    #[serde(serialize_with = "ser_coord")]
    pub lon: T,
    pub base_kv: T,
    #[serde(default, skip_serializing_if = "is_false")]
    pub transformer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct Line<T> {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub resistance_ohm: T,
    pub reactance_ohm: T,
    pub ampacity_a: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct LoadPoint<T> {
    pub id: String,
    pub bus_id: String,
    pub kw: T,
    pub kvar: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct Source<T> {
    pub bus_id: String,
    pub voltage_pu: T,
}

/// Unit tags accepted in the optional `units` block.
pub const UNIT_TAGS: [(&str, &str); 5] = [
    ("coordinates", "deg"),
    ("voltage", "kV"),
    ("impedance", "ohm"),
    ("current", "A"),
    ("power", "kW"),
];

/// Radial feeder: buses, lines, constant-power loads and a single source.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct Network<T> {
    pub buses: Vec<Bus<T>>,
    pub lines: Vec<Line<T>>,
    pub loads: Vec<LoadPoint<T>>,
    pub source: Source<T>,
}

impl<T: Scalar> Network<T> {
    pub fn bus(&self, id: &str) -> Option<&Bus<T>> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn line(&self, id: &str) -> Option<&Line<T>> {
        self.lines.iter().find(|l| l.id == id)
    }

    pub fn source_bus(&self) -> Option<&Bus<T>> {
        self.bus(&self.source.bus_id)
    }

    /// Sum of real load over all load points.
    pub fn total_load_kw(&self) -> T {
        let kws: Vec<T> = self.loads.iter().map(|l| l.kw).collect();
        crate::num::pairwise_sum(&kws)
    }

    /// Checks every field and referential invariant.
    pub fn validate(&self) -> Result<(), NetworkError> {
        let mut bus_ids = HashSet::new();
        for b in &self.buses {
            if !bus_ids.insert(b.id.as_str()) {
                return Err(NetworkError::DuplicateId(b.id.clone()));
            }
            check_bus(b)?;
        }
        let mut line_ids = HashSet::new();
        for l in &self.lines {
            if !line_ids.insert(l.id.as_str()) {
                return Err(NetworkError::DuplicateId(l.id.clone()));
            }
            for end in [&l.from_bus, &l.to_bus] {
                if !bus_ids.contains(end.as_str()) {
                    return Err(NetworkError::DanglingBus { element: l.id.clone(), bus: end.clone() });
                }
            }
            check_line(l)?;
        }
        let mut load_ids = HashSet::new();
        for ld in &self.loads {
            if !load_ids.insert(ld.id.as_str()) {
                return Err(NetworkError::DuplicateId(ld.id.clone()));
            }
            if !bus_ids.contains(ld.bus_id.as_str()) {
                return Err(NetworkError::DanglingBus { element: ld.id.clone(), bus: ld.bus_id.clone() });
            }
            if !(ld.kw >= T::zero()) || !ld.kvar.is_finite() {
                return Err(invalid(&ld.id, "kw must be >= 0 and kvar finite"));
            }
        }
        if !bus_ids.contains(self.source.bus_id.as_str()) {
            return Err(NetworkError::DanglingBus {
                element: "source".into(),
                bus: self.source.bus_id.clone(),
            });
        }
        let v = self.source.voltage_pu;
        if !(v >= T::of(0.8) && v <= T::of(1.2)) {
            return Err(invalid("source", "voltage_pu must lie in [0.8, 1.2]"));
        }
        Ok(())
    }
}

fn invalid(element: &str, message: &str) -> NetworkError {
    NetworkError::Invalid { element: element.to_string(), message: message.to_string() }
}

fn check_bus<T: Scalar>(b: &Bus<T>) -> Result<(), NetworkError> {
    if b.id.is_empty() {
        return Err(invalid("bus", "empty id"));
    }
    if !(b.lat >= T::of(-90.0) && b.lat <= T::of(90.0)) {
        return Err(invalid(&b.id, "lat outside [-90, 90]"));
    }
    if !(b.lon >= T::of(-180.0) && b.lon <= T::of(180.0)) {
        return Err(invalid(&b.id, "lon outside [-180, 180]"));
    }
    if !(b.base_kv > T::zero()) || !b.base_kv.is_finite() {
        return Err(invalid(&b.id, "base_kv must be > 0"));
    }
    Ok(())
}

fn check_line<T: Scalar>(l: &Line<T>) -> Result<(), NetworkError> {
    if l.from_bus == l.to_bus {
        return Err(invalid(&l.id, "from_bus equals to_bus"));
    }
    if !(l.ampacity_a > T::zero()) || !l.ampacity_a.is_finite() {
        return Err(invalid(&l.id, "ampacity_a must be > 0"));
    }
    let (r, x) = (l.resistance_ohm, l.reactance_ohm);
    if !(r >= T::zero() && x >= T::zero()) || !r.is_finite() || !x.is_finite() {
        return Err(invalid(&l.id, "resistance_ohm and reactance_ohm must be >= 0"));
    }
    if r == T::zero() && x == T::zero() {
        return Err(invalid(&l.id, "zero impedance"));
    }
    Ok(())
}

fn element_label(v: &Value, kind: &str, index: usize) -> String {
    match v.get("id").and_then(Value::as_str) {
        Some(id) => id.to_string(),
        None => format!("{kind}[{index}]"),
    }
}

fn parse_array<E: serde::de::DeserializeOwned>(doc: &Value, key: &str) -> Result<Vec<E>, NetworkError> {
    let arr = doc
        .get(key)
        .ok_or_else(|| NetworkError::Schema { element: "document".into(), message: format!("missing field `{key}`") })?
        .as_array()
        .ok_or_else(|| NetworkError::Schema { element: key.into(), message: "expected an array".into() })?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value(v.clone()).map_err(|e| NetworkError::Schema {
                element: element_label(v, key, i),
                message: e.to_string(),
            })
        })
        .collect()
}

fn check_units(doc: &Value) -> Result<(), NetworkError> {
    let Some(units) = doc.get("units") else {
        return Ok(());
    };
    let obj = units
        .as_object()
        .ok_or_else(|| NetworkError::Schema { element: "units".into(), message: "expected an object".into() })?;
    for (key, tag) in obj {
        let expected = UNIT_TAGS
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, t)| *t)
            .ok_or_else(|| NetworkError::Schema { element: "units".into(), message: format!("unknown unit key `{key}`") })?;
        if tag.as_str() != Some(expected) {
            return Err(NetworkError::Schema {
                element: "units".into(),
                message: format!("wrong unit tag for {key}: expected \"{expected}\", found {tag}"),
            });
        }
    }
    Ok(())
}

/// Parses and validates a native network document.
pub fn parse_network<T: Scalar>(document: &str) -> Result<Network<T>, NetworkError> {
    let doc: Value = serde_json::from_str(document)?;
    if !doc.is_object() {
        return Err(NetworkError::Schema { element: "document".into(), message: "expected a JSON object".into() });
    }
    check_units(&doc)?;
    let buses = parse_array::<Bus<T>>(&doc, "buses")?;
    let lines = parse_array::<Line<T>>(&doc, "lines")?;
    let loads = parse_array::<LoadPoint<T>>(&doc, "loads")?;
    let source_value = doc
        .get("source")
        .ok_or_else(|| NetworkError::Schema { element: "document".into(), message: "missing field `source`".into() })?;
    let source: Source<T> = serde_json::from_value(source_value.clone())
        .map_err(|e| NetworkError::Schema { element: "source".into(), message: e.to_string() })?;
    let net = Network { buses, lines, loads, source };
    net.validate()?;
    Ok(net)
}

#[derive(Serialize)]
#[serde(bound = "T: Scalar")]
struct Document<'a, T> {
    buses: &'a [Bus<T>],
    lines: &'a [Line<T>],
    loads: &'a [LoadPoint<T>],
    source: &'a Source<T>,
    units: BTreeMap<&'static str, &'static str>,
}

/// Serializes a network in the native document format (keys in schema order,
/// coordinates at 6 decimals).
pub fn serialize_network<T: Scalar>(net: &Network<T>) -> String {
    let doc = Document {
        buses: &net.buses,
        lines: &net.lines,
        loads: &net.loads,
        source: &net.source,
        units: UNIT_TAGS.iter().copied().collect(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("network serializes");
    out.push('\n');
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TopologyReport {
    pub connected: bool,
    pub radial: bool,
    pub orphan_buses: Vec<String>,
}

/// Reachability from the source bus and the tree edge-count test.
pub fn validate_radial<T: Scalar>(net: &Network<T>) -> TopologyReport {
    let mut adjacency: HashMap<&str, Vec<&str>> = net.buses.iter().map(|b| (b.id.as_str(), Vec::new())).collect();
    for l in &net.lines {
        if adjacency.contains_key(l.from_bus.as_str()) && adjacency.contains_key(l.to_bus.as_str()) {
            adjacency.get_mut(l.from_bus.as_str()).unwrap().push(&l.to_bus);
            adjacency.get_mut(l.to_bus.as_str()).unwrap().push(&l.from_bus);
        }
    }
    let mut seen: HashSet<&str> = HashSet::new();
    let mut queue = VecDeque::new();
    if adjacency.contains_key(net.source.bus_id.as_str()) {
        seen.insert(net.source.bus_id.as_str());
        queue.push_back(net.source.bus_id.as_str());
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    let orphan_buses: BTreeSet<String> =
        net.buses.iter().filter(|b| !seen.contains(b.id.as_str())).map(|b| b.id.clone()).collect();
    let connected = orphan_buses.is_empty() && !net.buses.is_empty();
    let radial = connected && net.lines.len() + 1 == net.buses.len();
    TopologyReport { connected, radial, orphan_buses: orphan_buses.into_iter().collect() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct CatalogEntry<T> {
    pub id: String,
    pub lat: T,
    pub lon: T,
}

/// Bus coordinates ordered by id (byte-wise ascending). Construction always
/// re-sorts, so the order never depends on how entries were supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct BusCatalog<T> {
    entries: Vec<CatalogEntry<T>>,
}

impl<T: Scalar> BusCatalog<T> {
    pub fn new(mut entries: Vec<CatalogEntry<T>>) -> Self {
        entries.sort_by(|a, b| a.id.as_bytes().cmp(b.id.as_bytes()));
        Self { entries }
    }

    /// Every bus in the model.
    pub fn all_buses(net: &Network<T>) -> Self {
        Self::from_filter(net, |_| true)
    }

    /// Buses that already carry at least one load point.
    pub fn load_buses(net: &Network<T>) -> Self {
        let with_load: HashSet<&str> = net.loads.iter().map(|l| l.bus_id.as_str()).collect();
        Self::from_filter(net, |b| with_load.contains(b.id.as_str()))
    }

    /// Buses tagged `"transformer": true`.
    pub fn tagged_buses(net: &Network<T>) -> Self {
        Self::from_filter(net, |b| b.transformer)
    }

    fn from_filter(net: &Network<T>, keep: impl Fn(&Bus<T>) -> bool) -> Self {
        Self::new(
            net.buses
                .iter()
                .filter(|b| keep(b))
                .map(|b| CatalogEntry { id: b.id.clone(), lat: b.lat, lon: b.lon })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[CatalogEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Ordered `(id, lat, lon)` list of every bus.
pub fn bus_catalog<T: Scalar>(net: &Network<T>) -> Vec<CatalogEntry<T>> {
    BusCatalog::all_buses(net).entries
}
