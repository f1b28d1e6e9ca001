//! Before/after comparison of line flows and losses.
//!
//! Every line gets a percent change, which maps onto five color categories:
//!
//! | category | percent change | color     |
//! |----------|----------------|-----------|
//! | Gray     | [0, 0.05)      | `#808080` |
//! | Green    | [0.05, 10)     | `#00FF00` |
//! | Blue     | [10, 50)       | `#0000FF` |
//! | Pink     | [50, 80)       | `#FF00FF` |
//! | Red      | [80, ∞)        | `#e31a1c` |

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::netmodel::Network;
use crate::num::{round_to, Scalar};
use crate::powerflow::PowerFlowSolution;

/// Baseline magnitude (kW) below which a line is treated as carrying nothing.
pub const BASELINE_EPS_KW: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ImpactError {
    #[error("line sets differ: {0}")]
    LineSetMismatch(String),
    #[error("histogram edges must be non-empty and strictly ascending")]
    BadEdges,
    #[error("non-positive baseline: {0}")]
    NonPositiveBaseline(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Gray,
    Green,
    Blue,
    Pink,
    Red,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::Gray, Category::Green, Category::Blue, Category::Pink, Category::Red];

    /// `[lo, hi)` in percent.
    pub fn bounds_pct(self) -> (f64, f64) {
        match self {
            Category::Gray => (0.0, 0.05),
            Category::Green => (0.05, 10.0),
            Category::Blue => (10.0, 50.0),
            Category::Pink => (50.0, 80.0),
            Category::Red => (80.0, f64::INFINITY),
        }
    }

    pub fn color_hex(self) -> &'static str {
        match self {
            Category::Gray => "#808080",
            Category::Green => "#00FF00",
            Category::Blue => "#0000FF",
            Category::Pink => "#FF00FF",
            Category::Red => "#e31a1c",
        }
    }

    /// Lower bounds of the five categories, usable as histogram edges.
    pub fn default_edges<T: Scalar>() -> Vec<T> {
        Category::ALL.iter().map(|c| T::of(c.bounds_pct().0)).collect()
    }
}

/// `|after - before| / before * 100`.
///
/// A baseline at or below [`BASELINE_EPS_KW`] yields `+inf` when the new value
/// is above it (a brand-new flow) and `0` otherwise.
pub fn pct_change<T: Scalar>(before: T, after: T) -> T {
    let eps = T::of(BASELINE_EPS_KW);
    let (b, a) = (before.abs(), after.abs());
    if b > eps {
        (a - b).abs() / b * T::of(100.0)
    } else if a > eps {
        T::infinity()
    } else {
        T::zero()
    }
}

/// Category for a percent change; `+inf` is Red. Negative input is treated as Gray.
pub fn categorize<T: Scalar>(pct: T) -> Category {
    let p = pct.as_f64();
    if p.is_nan() {
        return Category::Red;
    }
    Category::ALL
        .into_iter()
        .rev()
        .find(|c| p >= c.bounds_pct().0)
        .unwrap_or(Category::Gray)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// |real power| at the line's upstream end.
    Flow,
    /// I²R loss of the line.
    Loss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpactRecord<T> {
    pub line_id: String,
    pub metric: Metric,
    pub before: T,
    pub after: T,
    pub pct_change: T,
    pub category: Category,
}

impl<T: Scalar> Serialize for ImpactRecord<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("ImpactRecord", 7)?;
        st.serialize_field("line_id", &self.line_id)?;
        st.serialize_field("metric", &self.metric)?;
        st.serialize_field("before", &round_to(self.before.as_f64(), 6))?;
        st.serialize_field("after", &round_to(self.after.as_f64(), 6))?;
        st.serialize_field("pct_change", &pct_json(self.pct_change))?;
        st.serialize_field("category", &self.category)?;
        st.serialize_field("color", self.category.color_hex())?;
        st.end()
    }
}

/// Percent at 3 decimals; an infinite change (new flow) becomes `null`.
pub(crate) fn pct_json<T: Scalar>(pct: T) -> Option<f64> {
    let p = pct.as_f64();
    p.is_finite().then(|| round_to(p, 3))
}

/// One record per line comparing two solutions over the same line set.
pub fn build_records<T: Scalar>(
    before: &PowerFlowSolution<T>,
    after: &PowerFlowSolution<T>,
    metric: Metric,
) -> Result<Vec<ImpactRecord<T>>, ImpactError> {
    let after_index: HashMap<&str, usize> = after.line_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    if after.line_ids.len() != before.line_ids.len() {
        return Err(ImpactError::LineSetMismatch(format!(
            "{} lines before, {} after",
            before.line_ids.len(),
            after.line_ids.len()
        )));
    }
    let value = |sol: &PowerFlowSolution<T>, i: usize| match metric {
        Metric::Flow => sol.line_flow_kw[i].abs(),
        Metric::Loss => sol.line_loss_kw[i],
    };
    before
        .line_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let j = *after_index
                .get(id.as_str())
                .ok_or_else(|| ImpactError::LineSetMismatch(format!("line {id} missing after")))?;
            let (b, a) = (value(before, i), value(after, j));
            let pct = pct_change(b, a);
            Ok(ImpactRecord { line_id: id.clone(), metric, before: b, after: a, pct_change: pct, category: categorize(pct) })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct Histogram<T> {
    /// Lower edge of each bin; bin `i` is `[edge_i, edge_{i+1})` and the last
    /// bin is open-ended. Values below the first edge land in the first bin.
    pub bin_edges: Vec<T>,
    pub counts: Vec<u64>,
}

impl<T: Scalar> Histogram<T> {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// CSV with header `bin_lo,bin_hi,count`; the open upper edge prints as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let lo = self.bin_edges[i].as_f64();
            let hi = self.bin_edges.get(i + 1).map(|e| e.as_f64().to_string()).unwrap_or_else(|| "inf".into());
            let _ = writeln!(out, "{lo},{hi},{c}");
        }
        out
    }
}

pub fn build_histogram<T: Scalar>(records: &[ImpactRecord<T>], edges: &[T]) -> Result<Histogram<T>, ImpactError> {
    if edges.is_empty() || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ImpactError::BadEdges);
    }
    let mut counts = vec![0u64; edges.len()];
    for r in records {
        // number of edges <= pct, minus one, clamped into range
        let k = edges.partition_point(|&e| e <= r.pct_change || r.pct_change.is_nan());
        counts[k.saturating_sub(1)] += 1;
    }
    Ok(Histogram { bin_edges: edges.to_vec(), counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct SystemSummary<T> {
    pub demand_before_kw: T,
    pub demand_after_kw: T,
    pub demand_pct: T,
    pub loss_before_kw: T,
    pub loss_after_kw: T,
    pub loss_pct: T,
}

/// Signed percent changes of total demand and losses.
pub fn summarize<T: Scalar>(
    before_demand: T,
    after_demand: T,
    before_loss: T,
    after_loss: T,
) -> Result<SystemSummary<T>, ImpactError> {
    if !(before_demand > T::zero()) {
        return Err(ImpactError::NonPositiveBaseline("demand"));
    }
    if !(before_loss > T::zero()) {
        return Err(ImpactError::NonPositiveBaseline("loss"));
    }
    let hundred = T::of(100.0);
    Ok(SystemSummary {
        demand_before_kw: before_demand,
        demand_after_kw: after_demand,
        demand_pct: (after_demand - before_demand) / before_demand * hundred,
        loss_before_kw: before_loss,
        loss_after_kw: after_loss,
        loss_pct: (after_loss - before_loss) / before_loss * hundred,
    })
}

/// Ids of lines whose ampacity is strictly above `threshold_a`, ascending by id.
pub fn filter_by_ampacity<T: Scalar>(net: &Network<T>, threshold_a: T) -> Vec<String> {
    let mut ids: Vec<String> = net.lines.iter().filter(|l| l.ampacity_a > threshold_a).map(|l| l.id.clone()).collect();
    ids.sort_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
    ids
}

/// Impact report document: `{summary, records}`.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct ImpactReport<T> {
    pub summary: SystemSummary<T>,
    pub records: Vec<ImpactRecord<T>>,
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::netmodel::{Bus, Line, Source};

    fn solution(ids: &[&str], flows: &[f64]) -> PowerFlowSolution<f64> {
        PowerFlowSolution {
            bus_ids: Arc::from(vec![]),
            line_ids: ids.iter().map(|s| s.to_string()).collect::<Vec<_>>().into(),
            bus_voltage: vec![],
            line_flow_kw: flows.to_vec(),
            line_flow_kvar: vec![0.0; flows.len()],
            line_current_a: vec![0.0; flows.len()],
            line_loss_kw: flows.iter().map(|f| f * 0.01).collect(),
            total_loss_kw: 0.0,
            source_kw: 0.0,
            source_kvar: 0.0,
            load_kw: 0.0,
            converged: true,
            iterations: 1,
            max_update_pu: 0.0,
            collapsed_bus: None,
        }
    }

    fn record(pct: f64) -> ImpactRecord<f64> {
        ImpactRecord { line_id: "l".into(), metric: Metric::Flow, before: 1.0, after: 1.0, pct_change: pct, category: categorize(pct) }
    }

    #[test]
    fn pct_examples() {
        assert_eq!(pct_change(100.0, 125.0), 25.0);
        assert_eq!(pct_change(42.0, 42.0), 0.0);
        assert_eq!(pct_change(0.0, 50.0), f64::INFINITY);
        assert_eq!(categorize(pct_change(0.0, 50.0)), Category::Red);
        assert_eq!(pct_change(0.0, 0.0), 0.0);
        assert_eq!(pct_change(-100.0, 50.0), 50.0);
    }

    #[test]
    fn categorize_examples() {
        assert_eq!(categorize(0.04), Category::Gray);
        assert_eq!(categorize(25.0), Category::Blue);
        assert_eq!(categorize(90.0), Category::Red);
        assert_eq!(Category::Gray.color_hex(), "#808080");
        assert_eq!(Category::Blue.color_hex(), "#0000FF");
        assert_eq!(Category::Red.color_hex(), "#e31a1c");
    }

    #[test]
    fn records_identical_solutions_are_gray() {
        let s = solution(&["a", "b"], &[10.0, -5.0]);
        let recs = build_records(&s, &s, Metric::Flow).unwrap();
        assert!(recs.iter().all(|r| r.pct_change == 0.0 && r.category == Category::Gray));
    }

    #[test]
    fn records_single_line_red() {
        let recs = build_records(&solution(&["l"], &[100.0]), &solution(&["l"], &[190.0]), Metric::Flow).unwrap();
        assert_eq!(recs.len(), 1);
        assert!((recs[0].pct_change - 90.0).abs() < 1e-12);
        assert_eq!(recs[0].category, Category::Red);
        let loss = build_records(&solution(&["l"], &[100.0]), &solution(&["l"], &[190.0]), Metric::Loss).unwrap();
        assert!((loss[0].before - 1.0).abs() < 1e-12);
    }

    #[test]
    fn records_line_mismatch() {
        let a = solution(&["a"], &[1.0]);
        let b = solution(&["a", "b"], &[1.0, 2.0]);
        assert!(matches!(build_records(&a, &b, Metric::Flow), Err(ImpactError::LineSetMismatch(_))));
        let c = solution(&["c"], &[1.0]);
        assert!(matches!(build_records(&a, &c, Metric::Flow), Err(ImpactError::LineSetMismatch(_))));
    }

    #[test]
    fn records_match_by_id_not_position() {
        let before = solution(&["a", "b"], &[10.0, 20.0]);
        let after = solution(&["b", "a"], &[20.0, 15.0]);
        let recs = build_records(&before, &after, Metric::Flow).unwrap();
        assert_eq!(recs[0].pct_change, 50.0);
        assert_eq!(recs[1].pct_change, 0.0);
    }

    #[test]
    fn histogram_one_per_bin() {
        let recs: Vec<_> = [0.01, 5.0, 25.0, 60.0, 90.0].into_iter().map(record).collect();
        let h = build_histogram(&recs, &Category::default_edges::<f64>()).unwrap();
        assert_eq!(h.counts, vec![1, 1, 1, 1, 1]);
        let empty = build_histogram::<f64>(&[], &Category::default_edges()).unwrap();
        assert_eq!(empty.counts, vec![0; 5]);
        assert_eq!(build_histogram::<f64>(&[], &[1.0, 1.0]), Err(ImpactError::BadEdges));
        assert_eq!(build_histogram::<f64>(&[], &[]), Err(ImpactError::BadEdges));
    }

    #[test]
    fn histogram_open_ends() {
        let recs: Vec<_> = [f64::INFINITY, 0.0, 3.0].into_iter().map(record).collect();
        let h = build_histogram(&recs, &[1.0, 2.0]).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!(h.to_csv(), "bin_lo,bin_hi,count\n1,2,1\n2,inf,2\n");
    }

    #[test]
    fn summary_examples() {
        let s = summarize(1_697_000.0f64, 1_827_000.0, 1.0, 1.0).unwrap();
        assert!((s.demand_pct - 7.6605).abs() < 1e-3);
        let s = summarize(1_697_000.0f64, 2_031_770.0, 1.0, 1.0).unwrap();
        assert!((s.demand_pct - 19.727).abs() < 1e-3);
        let s = summarize(5.0, 5.0, 2.0, 2.0).unwrap();
        assert_eq!((s.demand_pct, s.loss_pct), (0.0, 0.0));
        assert_eq!(summarize(0.0, 1.0, 1.0, 1.0), Err(ImpactError::NonPositiveBaseline("demand")));
    }

    #[test]
    fn ampacity_filter_is_strict() {
        let line = |id: &str, amp| Line {
            id: id.into(),
            from_bus: "a".into(),
            to_bus: "b".into(),
            resistance_ohm: 0.1,
            reactance_ohm: 0.1,
            ampacity_a: amp,
        };
        let bus = |id: &str| Bus { id: id.into(), lat: 0.0, lon: 0.0, base_kv: 1.0, transformer: false };
        let net = Network {
            buses: vec![bus("a"), bus("b")],
            lines: vec![line("l3", 600.0), line("l1", 100.0), line("l2", 400.0)],
            loads: vec![],
            source: Source { bus_id: "a".into(), voltage_pu: 1.0 },
        };
        assert_eq!(filter_by_ampacity(&net, 400.0), vec!["l3".to_string()]);
        assert_eq!(filter_by_ampacity(&net, 0.0), vec!["l1", "l2", "l3"]);
        assert!(filter_by_ampacity(&net, 1e4).is_empty());
    }

    #[test]
    fn record_json_shape() {
        let mut r = record(f64::INFINITY);
        r.before = 0.0;
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["pct_change"], serde_json::Value::Null);
        assert_eq!(v["category"], "Red");
        assert_eq!(v["color"], "#e31a1c");
        assert_eq!(v["metric"], "flow");
    }
}
