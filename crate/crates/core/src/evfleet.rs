//! Deterministic EV fleet cohorts and their 24-hour charging demand.
//!
//! A scenario (fleet size, driving, vehicle mix, charger access and the
//! home/workplace charging strategies) is split into cohorts of identical
//! vehicles. Each cohort yields one daily charging block per vehicle, which
//! is rasterized onto a fixed timestep grid and scaled by the cohort size.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{pairwise_sum, Scalar};

const DAY_H: f64 = 24.0;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid cohort: {0}")]
    InvalidCohort(String),
    #[error("timestep {0} h must be positive and divide 24 h")]
    InvalidTimestep(f64),
    #[error("timestep mismatch: expected {expected} h, found {found} h")]
    MismatchedTimestep { expected: f64, found: f64 },
    #[error("empty profile")]
    EmptyProfile,
    #[error("invalid scenario JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChargingStrategy {
    /// Full power from arrival until the need is met or the vehicle leaves.
    ImmediateFast,
    /// Lowest constant power that delivers the need over the whole dwell.
    ImmediateSlow,
    /// Full power, starting as late as possible while still finishing at departure.
    DelayedFinishByDeparture,
    /// Full power from 00:00; home only.
    DelayedStartMidnight,
}

impl ChargingStrategy {
    pub const ALL: [ChargingStrategy; 4] = [
        ChargingStrategy::ImmediateFast,
        ChargingStrategy::ImmediateSlow,
        ChargingStrategy::DelayedFinishByDeparture,
        ChargingStrategy::DelayedStartMidnight,
    ];

    pub fn allowed_at(self, location: Location) -> bool {
        self != ChargingStrategy::DelayedStartMidnight || location == Location::Home
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Home,
    Workplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleType {
    Bev,
    Phev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChargerLevel {
    Level1,
    Level2,
}

mod defaults {
    use crate::num::Scalar;

    pub fn kwh_per_mile_bev<T: Scalar>() -> T {
        T::of(0.30)
    }
    pub fn kwh_per_mile_phev<T: Scalar>() -> T {
        T::of(0.28)
    }
    pub fn one<T: Scalar>() -> T {
        T::one()
    }
    pub fn half<T: Scalar>() -> T {
        T::of(0.5)
    }
    pub fn phev_battery_kwh<T: Scalar>() -> T {
        T::of(10.0)
    }
    pub fn level1_kw<T: Scalar>() -> T {
        T::of(1.4)
    }
    pub fn level2_kw<T: Scalar>() -> T {
        T::of(7.2)
    }
    pub fn temp_f<T: Scalar>() -> T {
        T::of(70.0)
    }
    pub fn home_arrive<T: Scalar>() -> T {
        T::of(18.0)
    }
    pub fn home_depart<T: Scalar>() -> T {
        T::of(7.0)
    }
    pub fn work_arrive<T: Scalar>() -> T {
        T::of(9.0)
    }
    pub fn work_depart<T: Scalar>() -> T {
        T::of(17.0)
    }
}

/// Scenario factors for one fleet.
///
/// `ambient_temp_f` and `sedan_share` are recorded for reporting only; the
/// temperature effect enters through `temp_multiplier`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct ScenarioConfig<T> {
    pub fleet_size: u64,
    pub avg_daily_miles: T,
    #[serde(default = "defaults::temp_f")]
    pub ambient_temp_f: T,
    #[serde(default = "defaults::half")]
    pub bev_share: T,
    #[serde(default = "defaults::half")]
    pub sedan_share: T,
    #[serde(default = "defaults::half")]
    pub work_mix_l1: T,
    #[serde(default = "defaults::one")]
    pub home_access: T,
    #[serde(default = "defaults::half")]
    pub home_mix_l1: T,
    #[serde(default = "defaults::one")]
    pub home_preference: T,
    pub home_strategy: ChargingStrategy,
    pub work_strategy: ChargingStrategy,
    #[serde(default = "defaults::kwh_per_mile_bev")]
    pub kwh_per_mile_bev: T,
    #[serde(default = "defaults::kwh_per_mile_phev")]
    pub kwh_per_mile_phev: T,
    #[serde(default = "defaults::one")]
    pub temp_multiplier: T,
    #[serde(default = "defaults::phev_battery_kwh")]
    pub phev_battery_kwh: T,
    #[serde(default = "defaults::level1_kw")]
    pub level1_kw: T,
    #[serde(default = "defaults::level2_kw")]
    pub level2_kw: T,
}

impl<T: Scalar> ScenarioConfig<T> {
    /// 350,000 vehicles, 25 mi/day, 80 °F, even BEV/PHEV split, universal
    /// home access with 80% preferring home; slow charging at home and fast
    /// charging at work.
    pub fn scenario_one() -> Self {
        Self {
            fleet_size: 350_000,
            avg_daily_miles: T::of(25.0),
            ambient_temp_f: T::of(80.0),
            bev_share: T::of(0.5),
            sedan_share: T::of(0.5),
            work_mix_l1: T::of(0.5),
            home_access: T::one(),
            home_mix_l1: T::of(0.5),
            home_preference: T::of(0.8),
            home_strategy: ChargingStrategy::ImmediateSlow,
            work_strategy: ChargingStrategy::ImmediateFast,
            kwh_per_mile_bev: defaults::kwh_per_mile_bev(),
            kwh_per_mile_phev: defaults::kwh_per_mile_phev(),
            temp_multiplier: T::one(),
            phev_battery_kwh: defaults::phev_battery_kwh(),
            level1_kw: defaults::level1_kw(),
            level2_kw: defaults::level2_kw(),
        }
    }

    /// Same factors as [`ScenarioConfig::scenario_one`] with the fleet doubled.
    pub fn scenario_two() -> Self {
        Self { fleet_size: 700_000, ..Self::scenario_one() }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let fractions = [
            ("bev_share", self.bev_share),
            ("sedan_share", self.sedan_share),
            ("work_mix_l1", self.work_mix_l1),
            ("home_access", self.home_access),
            ("home_mix_l1", self.home_mix_l1),
            ("home_preference", self.home_preference),
        ];
        for (name, f) in fractions {
            if !(f >= T::zero() && f <= T::one()) {
                return Err(ProfileError::InvalidScenario(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.avg_daily_miles > T::zero()) || !self.avg_daily_miles.is_finite() {
            return Err(ProfileError::InvalidScenario("avg_daily_miles must be > 0".into()));
        }
        let non_negative = [
            ("kwh_per_mile_bev", self.kwh_per_mile_bev),
            ("kwh_per_mile_phev", self.kwh_per_mile_phev),
            ("temp_multiplier", self.temp_multiplier),
            ("phev_battery_kwh", self.phev_battery_kwh),
        ];
        for (name, v) in non_negative {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(ProfileError::InvalidScenario(format!("{name} must be >= 0")));
            }
        }
        if !(self.level1_kw > T::zero() && self.level2_kw > T::zero()) {
            return Err(ProfileError::InvalidScenario("charger ratings must be > 0".into()));
        }
        if !self.work_strategy.allowed_at(Location::Workplace) {
            return Err(ProfileError::InvalidScenario(
                "delayed_start_midnight is a home-only strategy".into(),
            ));
        }
        Ok(())
    }

    pub fn rated_kw(&self, level: ChargerLevel) -> T {
        match level {
            ChargerLevel::Level1 => self.level1_kw,
            ChargerLevel::Level2 => self.level2_kw,
        }
    }

    /// Daily energy need of one vehicle of the given type.
    pub fn energy_need_kwh(&self, vehicle: VehicleType) -> T {
        let per_mile = match vehicle {
            VehicleType::Bev => self.kwh_per_mile_bev,
            VehicleType::Phev => self.kwh_per_mile_phev,
        };
        let need = self.avg_daily_miles * per_mile * self.temp_multiplier;
        match vehicle {
            VehicleType::Bev => need,
            VehicleType::Phev => need.min(self.phev_battery_kwh),
        }
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario<T: Scalar>(text: &str) -> Result<ScenarioConfig<T>, ProfileError> {
    let cfg: ScenarioConfig<T> = serde_json::from_str(text).map_err(|e| ProfileError::Json(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Plug-in and plug-out times per location, hours after midnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct Schedule<T> {
    #[serde(default = "defaults::home_arrive")]
    pub home_arrive_h: T,
    #[serde(default = "defaults::home_depart")]
    pub home_depart_h: T,
    #[serde(default = "defaults::work_arrive")]
    pub work_arrive_h: T,
    #[serde(default = "defaults::work_depart")]
    pub work_depart_h: T,
}

impl<T: Scalar> Default for Schedule<T> {
    fn default() -> Self {
        Self {
            home_arrive_h: defaults::home_arrive(),
            home_depart_h: defaults::home_depart(),
            work_arrive_h: defaults::work_arrive(),
            work_depart_h: defaults::work_depart(),
        }
    }
}

impl<T: Scalar> Schedule<T> {
    pub fn window(&self, location: Location) -> (T, T) {
        match location {
            Location::Home => (self.home_arrive_h, self.home_depart_h),
            Location::Workplace => (self.work_arrive_h, self.work_depart_h),
        }
    }
}

/// A group of identical vehicles with one charging session per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Cohort<T> {
    pub vehicle: VehicleType,
    pub level: ChargerLevel,
    pub location: Location,
    pub count: u64,
    pub energy_need_kwh: T,
    pub arrive_h: T,
    pub depart_h: T,
    pub max_rate_kw: T,
    pub strategy: ChargingStrategy,
}

fn wrap_day<T: Scalar>(h: T) -> T {
    let day = T::of(DAY_H);
    let r = h % day;
    if r < T::zero() {
        r + day
    } else {
        r
    }
}

impl<T: Scalar> Cohort<T> {
    /// Parked duration, arrival to departure, modulo 24 h.
    pub fn dwell_h(&self) -> T {
        wrap_day(self.depart_h - self.arrive_h)
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let day = T::of(DAY_H);
        let in_day = |h: T| h >= T::zero() && h < day;
        if !in_day(self.arrive_h) || !in_day(self.depart_h) {
            return Err(ProfileError::InvalidCohort("arrive_h and depart_h must lie in [0, 24)".into()));
        }
        if !(self.dwell_h() > T::zero()) {
            return Err(ProfileError::InvalidCohort("dwell must be positive".into()));
        }
        if !(self.energy_need_kwh >= T::zero()) || !self.energy_need_kwh.is_finite() {
            return Err(ProfileError::InvalidCohort("energy_need_kwh must be >= 0".into()));
        }
        if !(self.max_rate_kw > T::zero()) || !self.max_rate_kw.is_finite() {
            return Err(ProfileError::InvalidCohort("max_rate_kw must be > 0".into()));
        }
        if !self.strategy.allowed_at(self.location) {
            return Err(ProfileError::InvalidCohort("delayed_start_midnight is a home-only strategy".into()));
        }
        Ok(())
    }

    /// Whether the full need fits in the dwell at the rated power.
    pub fn is_feasible(&self) -> bool {
        self.energy_need_kwh <= self.max_rate_kw * self.dwell_h()
    }
}

/// Largest-remainder apportionment of `total` over `shares` (which sum to 1).
/// Leftover units go to the largest fractional parts; ties resolve to the
/// earliest position.
fn apportion(total: u64, shares: &[f64]) -> Vec<u64> {
    let quotas: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut left = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..shares.len()).filter(|&i| shares[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut k = 0;
    while left > 0 && !order.is_empty() {
        counts[order[k % order.len()]] += 1;
        left -= 1;
        k += 1;
    }
    counts
}

/// Splits the fleet by vehicle type, charging location and charger level.
///
/// Catalog order is type (BEV, PHEV), then location (home, workplace), then
/// level (L1, L2). Home charging share is `home_access * home_preference`;
/// everyone else charges at work. Empty cohorts are omitted.
pub fn build_cohorts<T: Scalar>(cfg: &ScenarioConfig<T>, schedule: &Schedule<T>) -> Vec<Cohort<T>> {
    let bev = cfg.bev_share.as_f64();
    let home = (cfg.home_access * cfg.home_preference).as_f64();
    let home_l1 = cfg.home_mix_l1.as_f64();
    let work_l1 = cfg.work_mix_l1.as_f64();

    let mut keys = Vec::with_capacity(8);
    let mut shares = Vec::with_capacity(8);
    for (vehicle, vshare) in [(VehicleType::Bev, bev), (VehicleType::Phev, 1.0 - bev)] {
        for (location, lshare, l1) in [(Location::Home, home, home_l1), (Location::Workplace, 1.0 - home, work_l1)] {
            for (level, share) in [(ChargerLevel::Level1, l1), (ChargerLevel::Level2, 1.0 - l1)] {
                keys.push((vehicle, location, level));
                shares.push(vshare * lshare * share);
            }
        }
    }
    let counts = apportion(cfg.fleet_size, &shares);
    keys.into_iter()
        .zip(counts)
        .filter(|&(_, count)| count > 0)
        .map(|((vehicle, location, level), count)| {
            let (arrive_h, depart_h) = schedule.window(location);
            let strategy = match location {
                Location::Home => cfg.home_strategy,
                Location::Workplace => cfg.work_strategy,
            };
            Cohort {
                vehicle,
                level,
                location,
                count,
                energy_need_kwh: cfg.energy_need_kwh(vehicle),
                arrive_h,
                depart_h,
                max_rate_kw: cfg.rated_kw(level),
                strategy,
            }
        })
        .collect()
}

/// kW samples over one day on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DemandProfile<T> {
    pub dt_h: T,
    pub values_kw: Vec<T>,
    /// Energy the profile delivers, kWh.
    pub energy_kwh: T,
    /// Set when some cohort could not receive its full need before departure.
    pub truncated: bool,
}

impl<T: Scalar> DemandProfile<T> {
    pub fn zeros(dt_h: T) -> Result<Self, ProfileError> {
        let n = steps_per_day(dt_h)?;
        Ok(Self { dt_h, values_kw: vec![T::zero(); n], energy_kwh: T::zero(), truncated: false })
    }

    pub fn len(&self) -> usize {
        self.values_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_kw.is_empty()
    }

    /// Σ kW · dt over the samples.
    pub fn integrated_kwh(&self) -> T {
        pairwise_sum(&self.values_kw) * self.dt_h
    }

    /// CSV with header `hour,kw`; `hour` is the start of each step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("hour,kw\n");
        let dt = self.dt_h.as_f64();
        for (k, v) in self.values_kw.iter().enumerate() {
            let _ = writeln!(out, "{},{:.6}", k as f64 * dt, v.as_f64());
        }
        out
    }
}

/// Number of samples in a day; `dt_h` must divide 24 h.
pub fn steps_per_day<T: Scalar>(dt_h: T) -> Result<usize, ProfileError> {
    let dt = dt_h.as_f64();
    if !(dt > 0.0) || !dt.is_finite() || dt > DAY_H {
        return Err(ProfileError::InvalidTimestep(dt));
    }
    let n = (DAY_H / dt).round();
    if (n * dt - DAY_H).abs() > 1e-9 {
        return Err(ProfileError::InvalidTimestep(dt));
    }
    Ok(n as usize)
}

/// A single charging block at constant power, in hours from midnight
/// (may extend past 24 h and wraps).
#[derive(Debug, Clone, Copy)]
struct Block<T> {
    start_h: T,
    len_h: T,
    rate_kw: T,
}

fn charging_block<T: Scalar>(c: &Cohort<T>, energy: T) -> Block<T> {
    let day = T::of(DAY_H);
    let dwell = c.dwell_h();
    let rate = c.max_rate_kw;
    let full_power_h = energy / rate;
    match c.strategy {
        ChargingStrategy::ImmediateFast => Block { start_h: c.arrive_h, len_h: full_power_h, rate_kw: rate },
        ChargingStrategy::ImmediateSlow => Block { start_h: c.arrive_h, len_h: dwell, rate_kw: energy / dwell },
        ChargingStrategy::DelayedFinishByDeparture => Block {
            start_h: c.arrive_h + dwell - full_power_h,
            len_h: full_power_h,
            rate_kw: rate,
        },
        ChargingStrategy::DelayedStartMidnight => {
            let to_midnight = wrap_day(day - c.arrive_h);
            if to_midnight >= dwell {
                // parked window does not contain midnight: charge on arrival
                Block { start_h: c.arrive_h, len_h: full_power_h, rate_kw: rate }
            } else if full_power_h <= dwell - to_midnight {
                Block { start_h: c.arrive_h + to_midnight, len_h: full_power_h, rate_kw: rate }
            } else {
                // midnight start cannot finish before departure: start earlier
                Block { start_h: c.arrive_h + dwell - full_power_h, len_h: full_power_h, rate_kw: rate }
            }
        }
    }
}

/// Energy per step for a block wrapped onto a one-day grid.
fn rasterize<T: Scalar>(block: Block<T>, dt: T, n: usize) -> Vec<T> {
    let mut energy = vec![T::zero(); n];
    if !(block.len_h > T::zero()) || !(block.rate_kw > T::zero()) {
        return energy;
    }
    let day = T::of(DAY_H);
    let mut start = wrap_day(block.start_h);
    let mut remaining = block.len_h;
    // a block is shorter than a day, so it wraps at most once
    for _ in 0..3 {
        if !(remaining > T::zero()) {
            break;
        }
        let piece = remaining.min(day - start);
        let end = start + piece;
        let first = (start / dt).floor().to_usize().unwrap_or(0).min(n - 1);
        let mut x = start;
        for (k, slot) in energy.iter_mut().enumerate().skip(first) {
            let edge = if k + 1 == n { end } else { T::of_count(k as u64 + 1) * dt };
            let hi = edge.min(end);
            if hi > x {
                *slot = *slot + block.rate_kw * (hi - x);
                x = hi;
            }
            if x >= end {
                break;
            }
        }
        remaining = remaining - piece;
        start = T::zero();
    }
    energy
}

/// Aggregate demand of one cohort on a `dt_h` grid.
///
/// Infeasible cohorts deliver `max_rate_kw × dwell` and set `truncated`.
pub fn cohort_profile<T: Scalar>(c: &Cohort<T>, dt_h: T) -> Result<DemandProfile<T>, ProfileError> {
    c.validate()?;
    let n = steps_per_day(dt_h)?;
    let deliverable = c.max_rate_kw * c.dwell_h();
    let truncated = c.energy_need_kwh > deliverable;
    if truncated {
        log::warn!(
            "cohort {:?}/{:?}/{:?}: need {} kWh exceeds deliverable {} kWh",
            c.vehicle,
            c.location,
            c.level,
            c.energy_need_kwh,
            deliverable
        );
    }
    let energy = c.energy_need_kwh.min(deliverable);
    let count = T::of_count(c.count);
    let per_vehicle = rasterize(charging_block(c, energy), dt_h, n);
    let values_kw = per_vehicle.into_iter().map(|e| e / dt_h * count).collect();
    Ok(DemandProfile { dt_h, values_kw, energy_kwh: energy * count, truncated })
}

/// Pointwise sum; an empty input gives a zero profile on the `dt_h` grid.
pub fn aggregate_profiles<T: Scalar>(profiles: &[DemandProfile<T>], dt_h: T) -> Result<DemandProfile<T>, ProfileError> {
    let n = steps_per_day(dt_h)?;
    for p in profiles {
        if p.dt_h != dt_h || p.values_kw.len() != n {
            return Err(ProfileError::MismatchedTimestep { expected: dt_h.as_f64(), found: p.dt_h.as_f64() });
        }
    }
    let mut column = Vec::with_capacity(profiles.len());
    let values_kw = (0..n)
        .map(|k| {
            column.clear();
            column.extend(profiles.iter().map(|p| p.values_kw[k]));
            pairwise_sum(&column)
        })
        .collect();
    let energies: Vec<T> = profiles.iter().map(|p| p.energy_kwh).collect();
    Ok(DemandProfile {
        dt_h,
        values_kw,
        energy_kwh: pairwise_sum(&energies),
        truncated: profiles.iter().any(|p| p.truncated),
    })
}

/// Index and value of the maximum sample; ties go to the earliest index.
pub fn find_peak<T: Scalar>(p: &DemandProfile<T>) -> Result<(usize, T), ProfileError> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in p.values_kw.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.ok_or(ProfileError::EmptyProfile)
}

/// Profiles for every cohort of a scenario, summed.
pub fn scenario_profile<T: Scalar>(
    cfg: &ScenarioConfig<T>,
    schedule: &Schedule<T>,
    dt_h: T,
) -> Result<(Vec<Cohort<T>>, DemandProfile<T>), ProfileError> {
    cfg.validate()?;
    let cohorts = build_cohorts(cfg, schedule);
    let profiles = cohorts.iter().map(|c| cohort_profile(c, dt_h)).collect::<Result<Vec<_>, _>>()?;
    Ok((cohorts, aggregate_profiles(&profiles, dt_h)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn evening(strategy: ChargingStrategy) -> Cohort<f64> {
        Cohort {
            vehicle: VehicleType::Bev,
            level: ChargerLevel::Level2,
            location: Location::Home,
            count: 1,
            energy_need_kwh: 10.0,
            arrive_h: 18.0,
            depart_h: 6.0,
            max_rate_kw: 7.2,
            strategy,
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn immediate_slow_spreads_evenly() {
        let p = cohort_profile(&evening(ChargingStrategy::ImmediateSlow), 1.0).unwrap();
        for (h, v) in p.values_kw.iter().enumerate() {
            let parked = !(6..18).contains(&h);
            let expected = if parked { 10.0 / 12.0 } else { 0.0 };
            assert!(close(*v, expected), "hour {h}: {v}");
        }
        assert!(close(p.integrated_kwh(), 10.0));
        assert!(!p.truncated);
    }

    #[test]
    fn immediate_fast_front_loads() {
        let p = cohort_profile(&evening(ChargingStrategy::ImmediateFast), 1.0).unwrap();
        assert!(close(p.values_kw[18], 7.2));
        assert!(close(p.values_kw[19], 2.8));
        let rest: f64 = p.values_kw.iter().enumerate().filter(|(h, _)| *h != 18 && *h != 19).map(|(_, v)| v).sum();
        assert_eq!(rest, 0.0);
    }

    #[test]
    fn midnight_start() {
        let p = cohort_profile(&evening(ChargingStrategy::DelayedStartMidnight), 1.0).unwrap();
        assert!(close(p.values_kw[0], 7.2));
        assert!(close(p.values_kw[1], 2.8));
        assert!(p.values_kw[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finish_by_departure_back_loads() {
        let p = cohort_profile(&evening(ChargingStrategy::DelayedFinishByDeparture), 1.0).unwrap();
        // 10 kWh at 7.2 kW ends at 06:00, so it starts at 04:36.67
        assert!(close(p.values_kw[5], 7.2));
        assert!(close(p.values_kw[4], 2.8));
        assert!(close(p.integrated_kwh(), 10.0));
    }

    #[test]
    fn midnight_outside_window_charges_on_arrival() {
        let mut c = evening(ChargingStrategy::DelayedStartMidnight);
        c.arrive_h = 1.0;
        c.depart_h = 7.0;
        let p = cohort_profile(&c, 1.0).unwrap();
        assert!(close(p.values_kw[1], 7.2));
    }

    #[test]
    fn infeasible_cohort_truncates() {
        let mut c = evening(ChargingStrategy::ImmediateFast);
        c.energy_need_kwh = 200.0;
        let p = cohort_profile(&c, 1.0).unwrap();
        assert!(p.truncated);
        assert!(close(p.energy_kwh, 7.2 * 12.0));
        assert!((p.integrated_kwh() - p.energy_kwh).abs() < 1e-9);
    }

    #[test]
    fn cohort_errors() {
        let mut c = evening(ChargingStrategy::DelayedStartMidnight);
        c.location = Location::Workplace;
        assert!(matches!(cohort_profile(&c, 1.0), Err(ProfileError::InvalidCohort(_))));
        let c = evening(ChargingStrategy::ImmediateSlow);
        assert_eq!(cohort_profile(&c, 0.7), Err(ProfileError::InvalidTimestep(0.7)));
        let mut c = evening(ChargingStrategy::ImmediateSlow);
        c.depart_h = c.arrive_h;
        assert!(matches!(cohort_profile(&c, 1.0), Err(ProfileError::InvalidCohort(_))));
    }

    #[test]
    fn quarter_hour_grid() {
        let p = cohort_profile(&evening(ChargingStrategy::ImmediateFast), 0.25).unwrap();
        assert_eq!(p.len(), 96);
        assert!(close(p.integrated_kwh(), 10.0));
        assert!(close(p.values_kw[72], 7.2));
    }

    #[test]
    fn symmetric_split() {
        let cfg = ScenarioConfig::<f64> {
            fleet_size: 100,
            bev_share: 0.5,
            home_access: 1.0,
            home_preference: 1.0,
            home_mix_l1: 0.0,
            ..ScenarioConfig::scenario_one()
        };
        let cohorts = build_cohorts(&cfg, &Schedule::default());
        assert_eq!(cohorts.len(), 2);
        assert_eq!(cohorts[0].vehicle, VehicleType::Bev);
        assert_eq!(cohorts[1].vehicle, VehicleType::Phev);
        assert!(cohorts.iter().all(|c| c.count == 50 && c.level == ChargerLevel::Level2 && c.location == Location::Home));
    }

    #[test]
    fn empty_fleet() {
        let cfg = ScenarioConfig::<f64> { fleet_size: 0, ..ScenarioConfig::scenario_one() };
        assert!(build_cohorts(&cfg, &Schedule::default()).is_empty());
    }

    #[test]
    fn scenario_one_split() {
        let cohorts = build_cohorts(&ScenarioConfig::<f64>::scenario_one(), &Schedule::default());
        let total: u64 = cohorts.iter().map(|c| c.count).sum();
        let home: u64 = cohorts.iter().filter(|c| c.location == Location::Home).map(|c| c.count).sum();
        assert_eq!(total, 350_000);
        assert_eq!(home, 280_000);
        assert_eq!(total - home, 70_000);
        assert_eq!(cohorts.len(), 8);
        let bev = &cohorts[0];
        assert!(close(bev.energy_need_kwh, 7.5));
        assert_eq!(bev.strategy, ChargingStrategy::ImmediateSlow);
    }

    #[test]
    fn phev_need_is_capped() {
        let cfg = ScenarioConfig::<f64> { avg_daily_miles: 45.0, ..ScenarioConfig::scenario_one() };
        assert!(close(cfg.energy_need_kwh(VehicleType::Phev), 10.0));
        assert!(close(cfg.energy_need_kwh(VehicleType::Bev), 13.5));
    }

    #[test]
    fn largest_remainder_conserves() {
        assert_eq!(apportion(10, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]), vec![4, 3, 3]);
        assert_eq!(apportion(7, &[0.5, 0.0, 0.5]), vec![4, 0, 3]);
    }

    #[test]
    fn aggregation() {
        let z = aggregate_profiles::<f64>(&[], 1.0).unwrap();
        assert_eq!(z.values_kw, vec![0.0; 24]);
        let p = cohort_profile(&evening(ChargingStrategy::ImmediateFast), 1.0).unwrap();
        let twice = aggregate_profiles(&[p.clone(), p.clone()], 1.0).unwrap();
        for (a, b) in twice.values_kw.iter().zip(&p.values_kw) {
            assert_eq!(*a, 2.0 * b);
        }
        let q = cohort_profile(&evening(ChargingStrategy::ImmediateFast), 0.5).unwrap();
        assert!(matches!(aggregate_profiles(&[p, q], 1.0), Err(ProfileError::MismatchedTimestep { .. })));
    }

    #[test]
    fn peak_tie_break() {
        let mk = |v: Vec<f64>| DemandProfile { dt_h: 1.0, values_kw: v, energy_kwh: 0.0, truncated: false };
        assert_eq!(find_peak(&mk(vec![1.0, 3.0, 2.0])).unwrap(), (1, 3.0));
        assert_eq!(find_peak(&mk(vec![5.0, 5.0])).unwrap(), (0, 5.0));
        assert_eq!(find_peak(&mk(vec![0.0; 24])).unwrap(), (0, 0.0));
        assert_eq!(find_peak(&mk(vec![])), Err(ProfileError::EmptyProfile));
    }

    #[test]
    fn scenario_json_defaults() {
        let cfg: ScenarioConfig<f64> = parse_scenario(
            r#"{"fleet_size": 10, "avg_daily_miles": 35, "home_strategy": "delayed_start_midnight",
                "work_strategy": "immediate_slow"}"#,
        )
        .unwrap();
        assert_eq!(cfg.kwh_per_mile_bev, 0.30);
        assert_eq!(cfg.level2_kw, 7.2);
        let bad = parse_scenario::<f64>(
            r#"{"fleet_size": 10, "avg_daily_miles": 35, "home_strategy": "immediate_slow",
                "work_strategy": "delayed_start_midnight"}"#,
        );
        assert!(matches!(bad, Err(ProfileError::InvalidScenario(_))));
    }

    #[test]
    fn csv_header() {
        let p = cohort_profile(&evening(ChargingStrategy::ImmediateFast), 1.0).unwrap();
        let csv = p.to_csv();
        assert!(csv.starts_with("hour,kw\n0,0.000000\n"));
        assert!(csv.contains("\n18,7.200000\n"));
        assert_eq!(csv.lines().count(), 25);
    }
}
