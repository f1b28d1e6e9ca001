//! Distribution-grid impact analysis for electric-vehicle charging demand.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the pipeline uses.

// `!(x > 0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assign;
pub mod evfleet;
pub mod geoexport;
pub mod impact;
pub mod netmodel;
pub mod num;
pub mod pipeline;
pub mod powerflow;
pub mod stations;

pub use num::Scalar;

pub type NetworkModel = netmodel::Network<f64>;
pub type BusRecord = netmodel::Bus<f64>;
pub type LineRecord = netmodel::Line<f64>;
pub type Load = netmodel::LoadPoint<f64>;
pub type Catalog = netmodel::BusCatalog<f64>;

pub type Scenario = evfleet::ScenarioConfig<f64>;
pub type ChargeSchedule = evfleet::Schedule<f64>;
pub type FleetCohort = evfleet::Cohort<f64>;
pub type Profile = evfleet::DemandProfile<f64>;

pub type Station = stations::EvStation<f64>;
pub type PeakAllocation = stations::Allocation<f64>;
pub type Weights = stations::ClassWeights<f64>;

pub type StationAssignment = assign::Assignment<f64>;

pub type Solver = powerflow::RadialSolver<f64>;
pub type SolverSettings = powerflow::SolverConfig<f64>;
pub type Solution = powerflow::PowerFlowSolution<f64>;
pub type Qsts = powerflow::QstsResult<f64>;

pub type Record = impact::ImpactRecord<f64>;
pub type Summary = impact::SystemSummary<f64>;
pub type PctHistogram = impact::Histogram<f64>;

/// Single-precision variants, for memory-bound batch studies.
pub mod f32 {
    pub type NetworkModel = crate::netmodel::Network<f32>;
    pub type Solution = crate::powerflow::PowerFlowSolution<f32>;
    pub type Profile = crate::evfleet::DemandProfile<f32>;
}
