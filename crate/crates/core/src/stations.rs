//! Charging-station registry, capacity classes and peak allocation.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{pairwise_sum, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum StationError {
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("row {row}: non-numeric {field}")]
    NonNumeric { row: u64, field: &'static str },
    #[error("row {row}: duplicate id {id}")]
    DuplicateId { row: u64, id: String },
    #[error("row {row}: {message}")]
    InvalidRow { row: u64, message: String },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("non-positive rating: {0} kW")]
    NonPositiveRating(f64),
    #[error("census has no weighted stations")]
    EmptyCensus,
    #[error("peak must be a finite non-negative kW value, got {0}")]
    InvalidPeak(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EvStation<T> {
    pub id: String,
    pub name: String,
    pub lat: T,
    pub lon: T,
    pub rated_kw: T,
}

/// Four station capacity levels by nameplate rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CapacityClass {
    L1,
    L2,
    L3,
    L4,
}

impl CapacityClass {
    pub const ALL: [CapacityClass; 4] = [CapacityClass::L1, CapacityClass::L2, CapacityClass::L3, CapacityClass::L4];

    /// Half-open `[lo, hi)` bounds in kW; the top class is unbounded.
    pub fn bounds_kw(self) -> (f64, f64) {
        match self {
            CapacityClass::L1 => (0.0, 50.0),
            CapacityClass::L2 => (50.0, 150.0),
            CapacityClass::L3 => (150.0, 350.0),
            CapacityClass::L4 => (350.0, f64::INFINITY),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CapacityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

/// Class for a nameplate rating.
pub fn classify<T: Scalar>(rated_kw: T) -> Result<CapacityClass, StationError> {
    let kw = rated_kw.as_f64();
    if !(kw > 0.0) || !kw.is_finite() {
        return Err(StationError::NonPositiveRating(kw));
    }
    Ok(CapacityClass::ALL
        .into_iter()
        .find(|c| {
            let (lo, hi) = c.bounds_kw();
            kw >= lo && kw < hi
        })
        .expect("class bounds cover (0, inf)"))
}

/// Allocation weight per class, indexed by [`CapacityClass::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClassWeights<T>(pub [T; 4]);

impl<T: Scalar> Default for ClassWeights<T> {
    fn default() -> Self {
        ClassWeights([T::of(1.0), T::of(2.0), T::of(4.0), T::of(8.0)])
    }
}

impl<T: Scalar> ClassWeights<T> {
    pub fn weight(&self, class: CapacityClass) -> T {
        self.0[class.index()]
    }
}

/// Station counts per class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationCensus {
    pub l1: u64,
    pub l2: u64,
    pub l3: u64,
    pub l4: u64,
}

impl StationCensus {
    pub fn new(counts: [u64; 4]) -> Self {
        Self { l1: counts[0], l2: counts[1], l3: counts[2], l4: counts[3] }
    }

    pub fn counts(&self) -> [u64; 4] {
        [self.l1, self.l2, self.l3, self.l4]
    }

    pub fn count(&self, class: CapacityClass) -> u64 {
        self.counts()[class.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts().iter().sum()
    }

    pub fn from_stations<T: Scalar>(stations: &[EvStation<T>]) -> Result<Self, StationError> {
        let mut counts = [0u64; 4];
        for s in stations {
            counts[classify(s.rated_kw)?.index()] += 1;
        }
        Ok(Self::new(counts))
    }
}

/// Per-station kW for each class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Allocation<T> {
    pub l1: T,
    pub l2: T,
    pub l3: T,
    pub l4: T,
}

impl<T: Scalar> Allocation<T> {
    pub fn per_station_kw(&self, class: CapacityClass) -> T {
        self.as_array()[class.index()]
    }

    pub fn as_array(&self) -> [T; 4] {
        [self.l1, self.l2, self.l3, self.l4]
    }

    /// Σ n_c · s_c.
    pub fn reconstruct(&self, census: &StationCensus) -> T {
        let parts: Vec<T> = CapacityClass::ALL
            .iter()
            .map(|&c| T::of_count(census.count(c)) * self.per_station_kw(c))
            .collect();
        pairwise_sum(&parts)
    }
}

/// Splits `peak_kw` over stations in proportion to class weight:
/// `s_c = peak · w_c / Σ n_c w_c`.
pub fn allocate_peak<T: Scalar>(
    peak_kw: T,
    census: &StationCensus,
    weights: &ClassWeights<T>,
) -> Result<Allocation<T>, StationError> {
    if !(peak_kw >= T::zero()) || !peak_kw.is_finite() {
        return Err(StationError::InvalidPeak(peak_kw.as_f64()));
    }
    let terms: Vec<T> = CapacityClass::ALL
        .iter()
        .map(|&c| T::of_count(census.count(c)) * weights.weight(c))
        .collect();
    let denominator = pairwise_sum(&terms);
    if !(denominator > T::zero()) {
        return Err(StationError::EmptyCensus);
    }
    let per_weight = peak_kw / denominator;
    let s = |c| per_weight * weights.weight(c);
    Ok(Allocation {
        l1: s(CapacityClass::L1),
        l2: s(CapacityClass::L2),
        l3: s(CapacityClass::L3),
        l4: s(CapacityClass::L4),
    })
}

const COLUMNS: [&str; 5] = ["id", "name", "lat", "lon", "rated_kw"];

/// Parses the station registry CSV (`id,name,lat,lon,rated_kw`, any column
/// order). Row numbers in errors count the header as row 1.
pub fn parse_stations<T: Scalar>(table: &str) -> Result<Vec<EvStation<T>>, StationError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(table.as_bytes());
    let headers = reader.headers().map_err(|e| StationError::Csv(e.to_string()))?.clone();
    let mut index = [0usize; 5];
    for (slot, name) in index.iter_mut().zip(COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| StationError::MissingColumn(name.into()))?;
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i as u64 + 2;
        let record = record.map_err(|e| StationError::Csv(format!("row {row}: {e}")))?;
        let field = |k: usize| record.get(index[k]).unwrap_or("");
        let number = |k: usize, name: &'static str| -> Result<T, StationError> {
            field(k)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(T::of)
                .ok_or(StationError::NonNumeric { row, field: name })
        };
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(StationError::InvalidRow { row, message: "empty id".into() });
        }
        let lat = number(2, "lat")?;
        let lon = number(3, "lon")?;
        let rated_kw = number(4, "rated_kw")?;
        if !(lat >= T::of(-90.0) && lat <= T::of(90.0) && lon >= T::of(-180.0) && lon <= T::of(180.0)) {
            return Err(StationError::InvalidRow { row, message: "coordinates outside WGS84 bounds".into() });
        }
        if !(rated_kw > T::zero()) {
            return Err(StationError::InvalidRow { row, message: "rated_kw must be > 0".into() });
        }
        if !seen.insert(id.clone()) {
            return Err(StationError::DuplicateId { row, id });
        }
        out.push(EvStation { id, name: field(1).to_string(), lat, lon, rated_kw });
    }
    Ok(out)
}
