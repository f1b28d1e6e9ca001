//! Styled GeoJSON export of line impacts.
//!
//! Each line becomes a `LineString` feature between its endpoint buses, in
//! `[lon, lat]` order. Properties carry the styling attributes a GIS client
//! reads directly: `line_color`, `line_width` and `line_opacity`.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::impact::{categorize, pct_json, Category, ImpactRecord, Metric};
use crate::netmodel::Network;
use crate::num::{round_to, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum ExportError {
    #[error("impact record references unknown line: {0}")]
    UnknownLine(String),
}

/// Width and opacity mapping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StyleConfig {
    pub min_width: f64,
    pub max_width: f64,
    /// Width added per unit of utilization (current / ampacity).
    pub width_per_utilization: f64,
    /// Opacity for lines without an impact record.
    pub default_opacity: f64,
    /// Opacity per category, in [`Category::ALL`] order.
    pub category_opacity: [f64; 5],
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            min_width: 1.0,
            max_width: 5.0,
            width_per_utilization: 4.0,
            default_opacity: 0.6,
            category_opacity: [0.6, 0.8, 0.9, 1.0, 1.0],
        }
    }
}

impl StyleConfig {
    pub fn opacity(&self, category: Category) -> f64 {
        self.category_opacity[category as usize]
    }

    /// `clamp(min + gain · u, min, max)` with `u = I / ampacity` and the
    /// current of a balanced three-phase flow at `base_kv`.
    pub fn width(&self, flow_kw: f64, ampacity_a: f64, base_kv: f64) -> f64 {
        let current_a = flow_kw.abs() / (3f64.sqrt() * base_kv);
        let utilization = current_a / ampacity_a;
        (self.min_width + self.width_per_utilization * utilization).clamp(self.min_width, self.max_width)
    }
}

/// Line width in points under the default style.
pub fn style_width<T: Scalar>(flow_kw: T, ampacity_a: T, base_kv: T) -> T {
    T::of(StyleConfig::default().width(flow_kw.as_f64(), ampacity_a.as_f64(), base_kv.as_f64()))
}

#[derive(Debug, Serialize)]
struct FeatureCollection {
    #[serde(rename = "type")]
    kind: &'static str,
    features: Vec<Feature>,
}

#[derive(Debug, Serialize)]
struct Feature {
    #[serde(rename = "type")]
    kind: &'static str,
    id: String,
    geometry: Geometry,
    properties: StyledProperties,
}

#[derive(Debug, Serialize)]
struct Geometry {
    #[serde(rename = "type")]
    kind: &'static str,
    coordinates: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize)]
struct StyledProperties {
    line_id: String,
    line_color: &'static str,
    line_width: f64,
    line_opacity: f64,
    pct_change: Option<f64>,
    ampacity_a: f64,
    category: Option<Category>,
}

/// Builds the styled feature collection.
///
/// Lines are styled from their flow record when one exists, otherwise from a
/// loss record; lines without records keep the default gray style. Output is
/// byte-stable: fixed key order, 6-decimal coordinates, 3-decimal percents.
pub fn export_geojson<T: Scalar>(
    net: &Network<T>,
    records: &[ImpactRecord<T>],
    style: &StyleConfig,
) -> Result<String, ExportError> {
    let mut by_line: HashMap<&str, &ImpactRecord<T>> = HashMap::new();
    for r in records {
        if net.line(&r.line_id).is_none() {
            return Err(ExportError::UnknownLine(r.line_id.clone()));
        }
        let slot = by_line.entry(r.line_id.as_str()).or_insert(r);
        if slot.metric == Metric::Loss && r.metric == Metric::Flow {
            *slot = r;
        }
    }
    let coords: HashMap<&str, (f64, f64, f64)> =
        net.buses.iter().map(|b| (b.id.as_str(), (b.lon.as_f64(), b.lat.as_f64(), b.base_kv.as_f64()))).collect();

    let features = net
        .lines
        .iter()
        .map(|l| {
            let (lon0, lat0, kv) = coords[l.from_bus.as_str()];
            let (lon1, lat1, _) = coords[l.to_bus.as_str()];
            let ampacity = l.ampacity_a.as_f64();
            let properties = match by_line.get(l.id.as_str()) {
                Some(r) => {
                    let category = categorize(r.pct_change);
                    let width = match r.metric {
                        Metric::Flow => style.width(r.after.as_f64(), ampacity, kv),
                        Metric::Loss => style.min_width,
                    };
                    StyledProperties {
                        line_id: l.id.clone(),
                        line_color: category.color_hex(),
                        line_width: round_to(width, 3),
                        line_opacity: style.opacity(category),
                        pct_change: pct_json(r.pct_change),
                        ampacity_a: ampacity,
                        category: Some(category),
                    }
                }
                None => StyledProperties {
                    line_id: l.id.clone(),
                    line_color: Category::Gray.color_hex(),
                    line_width: style.min_width,
                    line_opacity: style.default_opacity,
                    pct_change: None,
                    ampacity_a: ampacity,
                    category: None,
                },
            };
            Feature {
                kind: "Feature",
                id: l.id.clone(),
                geometry: Geometry {
                    kind: "LineString",
                    coordinates: vec![[round_to(lon0, 6), round_to(lat0, 6)], [round_to(lon1, 6), round_to(lat1, 6)]],
                },
                properties,
            }
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&FeatureCollection { kind: "FeatureCollection", features })
        .expect("feature collection serializes");
    out.push('\n');
    Ok(out)
}
