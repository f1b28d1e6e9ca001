//! Station-to-bus assignment by great-circle distance and EV load injection.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{BusCatalog, LoadPoint, Network};
use crate::num::Scalar;
use crate::stations::{classify, Allocation, EvStation, StationError};

/// Mean Earth radius, meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum AssignError {
    #[error("bus catalog is empty")]
    EmptyCatalog,
    #[error("unknown bus id: {0}")]
    UnknownBus(String),
    #[error(transparent)]
    Station(#[from] StationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GeoPoint<T> {
    pub lat: T,
    pub lon: T,
}

impl<T> GeoPoint<T> {
    pub fn new(lat: T, lon: T) -> Self {
        Self { lat, lon }
    }
}

/// Great-circle distance in meters on a spherical Earth.
pub fn haversine<T: Scalar>(a: GeoPoint<T>, b: GeoPoint<T>) -> T {
    let radius = T::of(EARTH_RADIUS_M);
    let two = T::of(2.0);
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / two).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / two).sin().powi(2);
    two * radius * h.sqrt().min(T::one()).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Assignment<T> {
    pub station_id: String,
    pub bus_id: String,
    pub distance_m: T,
    pub assigned_kw: T,
}

/// Closest catalog bus; equal distances resolve to the smaller id.
pub fn nearest_bus<T: Scalar>(station: &EvStation<T>, catalog: &BusCatalog<T>) -> Result<(String, T), AssignError> {
    let here = GeoPoint::new(station.lat, station.lon);
    let mut best: Option<(&str, T)> = None;
    // catalog entries are id-sorted, so strict `<` keeps the first of any tie
    for e in catalog.entries() {
        let d = haversine(here, GeoPoint::new(e.lat, e.lon));
        match best {
            Some((_, bd)) if !(d < bd) => {}
            _ => best = Some((&e.id, d)),
        }
    }
    best.map(|(id, d)| (id.to_string(), d)).ok_or(AssignError::EmptyCatalog)
}

/// Maps every station to its nearest bus with its class allocation.
pub fn assign_stations<T: Scalar>(
    stations: &[EvStation<T>],
    allocation: &Allocation<T>,
    catalog: &BusCatalog<T>,
) -> Result<Vec<Assignment<T>>, AssignError> {
    stations
        .par_iter()
        .map(|s| {
            let (bus_id, distance_m) = nearest_bus(s, catalog)?;
            let class = classify(s.rated_kw)?;
            Ok(Assignment { station_id: s.id.clone(), bus_id, distance_m, assigned_kw: allocation.per_station_kw(class) })
        })
        .collect()
}

/// Returns a copy of `net` with each assignment's kW added to its bus.
///
/// The kW lands on the first load point at the bus (document order); a bus
/// without one gets a new `ev_<bus>` load. Reactive power is untouched.
pub fn inject_loads<T: Scalar>(net: &Network<T>, assignments: &[Assignment<T>]) -> Result<Network<T>, AssignError> {
    let buses: HashSet<&str> = net.buses.iter().map(|b| b.id.as_str()).collect();
    for a in assignments {
        if !buses.contains(a.bus_id.as_str()) {
            return Err(AssignError::UnknownBus(a.bus_id.clone()));
        }
    }
    let mut out = net.clone();
    let mut load_at: HashMap<String, usize> = HashMap::new();
    for (i, l) in out.loads.iter().enumerate() {
        load_at.entry(l.bus_id.clone()).or_insert(i);
    }
    let mut taken: HashSet<String> = out.loads.iter().map(|l| l.id.clone()).collect();
    for a in assignments {
        let idx = match load_at.get(&a.bus_id) {
            Some(&i) => i,
            None => {
                let mut id = format!("ev_{}", a.bus_id);
                let mut k = 1;
                while taken.contains(&id) {
                    id = format!("ev_{}_{k}", a.bus_id);
                    k += 1;
                }
                taken.insert(id.clone());
                out.loads.push(LoadPoint { id, bus_id: a.bus_id.clone(), kw: T::zero(), kvar: T::zero() });
                load_at.insert(a.bus_id.clone(), out.loads.len() - 1);
                out.loads.len() - 1
            }
        };
        out.loads[idx].kw = out.loads[idx].kw + a.assigned_kw;
    }
    Ok(out)
}

/// Audit manifest, header `station_id,bus_id,distance_m,assigned_kw`.
pub fn assignments_csv<T: Scalar>(assignments: &[Assignment<T>]) -> String {
    let mut out = String::from("station_id,bus_id,distance_m,assigned_kw\n");
    for a in assignments {
        let _ = writeln!(out, "{},{},{:.3},{:.6}", a.station_id, a.bus_id, a.distance_m.as_f64(), a.assigned_kw.as_f64());
    }
    out
}
