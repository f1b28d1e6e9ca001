//! Backward/forward sweep power flow for radial feeders and the quasi-static
//! time-series (QSTS) driver built on it.
//!
//! Per-unit system: 1 MVA three-phase base; each bus uses its own `base_kv`.
//! Line impedances are given in ohms referred to the `from_bus` voltage level,
//! and line currents in amperes are reported on that level too. Loads are
//! constant power.
//!
//! One sweep iteration:
//! 1. backward: load currents `conj(S / V)` are accumulated from the leaves
//!    towards the source, giving each branch current;
//! 2. forward: voltages are rebuilt from the source as `V_child = V_parent - Z I`.
//!
//! Iteration stops once the largest voltage change drops below `tol_pu`.
//! Reported branch currents come from one extra backward pass on the final
//! voltages.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};
use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evfleet::DemandProfile;
use crate::netmodel::{validate_radial, Network};
use crate::num::{pairwise_sum, Scalar};

/// Three-phase system base, kVA.
pub const SYSTEM_BASE_KVA: f64 = 1000.0;

/// Voltage magnitude below which a sweep is abandoned.
pub const COLLAPSE_PU: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum PowerFlowError {
    #[error("network is not radial (connected: {connected}, orphan buses: {orphans:?})")]
    NotRadial { connected: bool, orphans: Vec<String> },
    #[error("voltage collapse at bus {bus}: |V| = {magnitude_pu:.4} pu")]
    VoltageCollapse { bus: String, magnitude_pu: f64 },
    #[error("unknown load id: {0}")]
    UnknownLoad(String),
    #[error("load shape for {load} has timestep {found} h, expected {expected} h")]
    ShapeTimestep { load: String, expected: f64, found: f64 },
    #[error("load shape for {0} is empty")]
    EmptyShape(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
pub struct SolverConfig<T> {
    pub tol_pu: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self { tol_pu: T::of(1e-6), max_iter: 50 }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<(), PowerFlowError> {
        if !(self.tol_pu > T::zero()) || !self.tol_pu.is_finite() {
            return Err(PowerFlowError::InvalidConfig("tol_pu must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(PowerFlowError::InvalidConfig("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Steady-state result of one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution<T> {
    pub bus_ids: Arc<[String]>,
    pub line_ids: Arc<[String]>,
    /// `(magnitude pu, angle rad)` per bus, in network order.
    pub bus_voltage: Vec<(T, T)>,
    /// Real power entering the line at its upstream end, signed in the
    /// `from_bus -> to_bus` direction.
    pub line_flow_kw: Vec<T>,
    pub line_flow_kvar: Vec<T>,
    pub line_current_a: Vec<T>,
    /// `I^2 R` per line.
    pub line_loss_kw: Vec<T>,
    pub total_loss_kw: T,
    pub source_kw: T,
    pub source_kvar: T,
    pub load_kw: T,
    pub converged: bool,
    pub iterations: usize,
    pub max_update_pu: T,
    /// Set when the sweep stopped on a collapsing voltage.
    pub collapsed_bus: Option<String>,
}

impl<T: Scalar> PowerFlowSolution<T> {
    pub fn line_index(&self, id: &str) -> Option<usize> {
        self.line_ids.iter().position(|l| l == id)
    }

    pub fn voltage(&self, bus_id: &str) -> Option<(T, T)> {
        self.bus_ids.iter().position(|b| b == bus_id).map(|i| self.bus_voltage[i])
    }

    pub fn min_voltage_pu(&self) -> T {
        self.bus_voltage.iter().map(|v| v.0).fold(T::infinity(), T::min)
    }

    pub fn max_voltage_pu(&self) -> T {
        self.bus_voltage.iter().map(|v| v.0).fold(T::neg_infinity(), T::max)
    }
}

/// Feeder preprocessed for repeated solves: tree order, per-unit impedances
/// and load-to-bus mapping.
#[derive(Debug, Clone)]
pub struct RadialSolver<T> {
    bus_ids: Arc<[String]>,
    line_ids: Arc<[String]>,
    source: usize,
    source_voltage: T,
    /// Buses in breadth-first order from the source.
    order: Vec<usize>,
    /// Upstream bus of each bus (source maps to itself).
    parent: Vec<usize>,
    /// Line feeding each bus (unused for the source).
    feeder_line: Vec<usize>,
    /// Downstream bus of each line.
    line_child: Vec<usize>,
    /// Whether `from_bus` is the upstream end.
    line_from_upstream: Vec<bool>,
    z_pu: Vec<Complex<T>>,
    current_base_a: Vec<T>,
    load_ids: Vec<String>,
    load_bus: Vec<usize>,
    base_loads: Vec<(T, T)>,
}

impl<T: Scalar> RadialSolver<T> {
    pub fn new(net: &Network<T>) -> Result<Self, PowerFlowError> {
        let topo = validate_radial(net);
        if !topo.radial {
            return Err(PowerFlowError::NotRadial { connected: topo.connected, orphans: topo.orphan_buses });
        }
        let n = net.buses.len();
        let index: HashMap<&str, usize> = net.buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();
        let source = index[net.source.bus_id.as_str()];

        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (li, l) in net.lines.iter().enumerate() {
            let (f, t) = (index[l.from_bus.as_str()], index[l.to_bus.as_str()]);
            adjacency[f].push((t, li));
            adjacency[t].push((f, li));
        }
        let mut parent = vec![usize::MAX; n];
        let mut feeder_line = vec![usize::MAX; n];
        let mut order = Vec::with_capacity(n);
        parent[source] = source;
        order.push(source);
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &(v, li) in &adjacency[u] {
                if parent[v] == usize::MAX {
                    parent[v] = u;
                    feeder_line[v] = li;
                    order.push(v);
                }
            }
        }

        let m = net.lines.len();
        let mut line_child = vec![0; m];
        let mut line_from_upstream = vec![true; m];
        for &b in &order[1..] {
            let li = feeder_line[b];
            line_child[li] = b;
            line_from_upstream[li] = index[net.lines[li].to_bus.as_str()] == b;
        }
        let base_kva = T::of(SYSTEM_BASE_KVA);
        let sqrt3 = T::of(3f64.sqrt());
        let mut z_pu = Vec::with_capacity(m);
        let mut current_base_a = Vec::with_capacity(m);
        for l in &net.lines {
            let kv = net.buses[index[l.from_bus.as_str()]].base_kv;
            // Z_base = kV^2 / MVA
            let z_base = kv * kv / (base_kva / T::of(1000.0));
            z_pu.push(Complex::new(l.resistance_ohm / z_base, l.reactance_ohm / z_base));
            current_base_a.push(base_kva / (sqrt3 * kv));
        }
        Ok(Self {
            bus_ids: net.buses.iter().map(|b| b.id.clone()).collect(),
            line_ids: net.lines.iter().map(|l| l.id.clone()).collect(),
            source,
            source_voltage: net.source.voltage_pu,
            order,
            parent,
            feeder_line,
            line_child,
            line_from_upstream,
            z_pu,
            current_base_a,
            load_ids: net.loads.iter().map(|l| l.id.clone()).collect(),
            load_bus: net.loads.iter().map(|l| index[l.bus_id.as_str()]).collect(),
            base_loads: net.loads.iter().map(|l| (l.kw, l.kvar)).collect(),
        })
    }

    pub fn load_ids(&self) -> &[String] {
        &self.load_ids
    }

    /// Nominal `(kW, kvar)` of every load, in network order.
    pub fn base_loads(&self) -> &[(T, T)] {
        &self.base_loads
    }

    /// Bus currents drawn by constant-power loads, accumulated into branch
    /// currents. Entry `b` is the current flowing into bus `b` from its parent;
    /// the source entry is the total feeder-head current.
    fn backward(&self, s_pu: &[Complex<T>], v: &[Complex<T>], acc: &mut [Complex<T>]) {
        for (a, (s, v)) in acc.iter_mut().zip(s_pu.iter().zip(v)) {
            *a = (*s / *v).conj();
        }
        for &b in self.order[1..].iter().rev() {
            let p = self.parent[b];
            acc[p] = acc[p] + acc[b];
        }
    }

    /// Solves with per-load `(kW, kvar)` in network order.
    pub fn solve_loads(&self, loads: &[(T, T)], cfg: &SolverConfig<T>) -> PowerFlowSolution<T> {
        assert_eq!(loads.len(), self.load_bus.len(), "one (kW, kvar) pair per load");
        let n = self.bus_ids.len();
        let base_kva = T::of(SYSTEM_BASE_KVA);
        let mut s_pu = vec![Complex::new(T::zero(), T::zero()); n];
        for (&(kw, kvar), &b) in loads.iter().zip(&self.load_bus) {
            s_pu[b] = s_pu[b] + Complex::new(kw / base_kva, kvar / base_kva);
        }

        let v0 = Complex::new(self.source_voltage, T::zero());
        let mut v = vec![v0; n];
        let mut acc = vec![Complex::new(T::zero(), T::zero()); n];
        let collapse = T::of(COLLAPSE_PU);
        let mut converged = false;
        let mut iterations = 0;
        let mut max_update = T::zero();
        let mut collapsed_bus = None;

        while iterations < cfg.max_iter {
            iterations += 1;
            self.backward(&s_pu, &v, &mut acc);
            max_update = T::zero();
            for &b in &self.order[1..] {
                let updated = v[self.parent[b]] - self.z_pu[self.feeder_line[b]] * acc[b];
                let delta = (updated - v[b]).norm();
                if delta > max_update || delta.is_nan() {
                    max_update = delta;
                }
                v[b] = updated;
            }
            if let Some(&b) = self.order.iter().find(|&&b| !(v[b].norm() >= collapse)) {
                collapsed_bus = Some(self.bus_ids[b].clone());
                break;
            }
            if max_update < cfg.tol_pu {
                converged = true;
                break;
            }
        }
        self.backward(&s_pu, &v, &mut acc);

        let m = self.line_ids.len();
        let mut line_flow_kw = Vec::with_capacity(m);
        let mut line_flow_kvar = Vec::with_capacity(m);
        let mut line_current_a = Vec::with_capacity(m);
        let mut line_loss_kw = Vec::with_capacity(m);
        for li in 0..m {
            let child = self.line_child[li];
            let current = acc[child];
            let upstream = v[self.parent[child]] * current.conj() * base_kva;
            let sign = if self.line_from_upstream[li] { T::one() } else { -T::one() };
            line_flow_kw.push(sign * upstream.re);
            line_flow_kvar.push(sign * upstream.im);
            line_current_a.push(current.norm() * self.current_base_a[li]);
            line_loss_kw.push(current.norm_sqr() * self.z_pu[li].re * base_kva);
        }
        let source_power = v[self.source] * acc[self.source].conj() * base_kva;
        let load_kw: Vec<T> = loads.iter().map(|l| l.0).collect();
        PowerFlowSolution {
            bus_ids: self.bus_ids.clone(),
            line_ids: self.line_ids.clone(),
            bus_voltage: v.iter().map(|x| (x.norm(), x.arg())).collect(),
            total_loss_kw: pairwise_sum(&line_loss_kw),
            line_flow_kw,
            line_flow_kvar,
            line_current_a,
            line_loss_kw,
            source_kw: source_power.re,
            source_kvar: source_power.im,
            load_kw: pairwise_sum(&load_kw),
            converged,
            iterations,
            max_update_pu: max_update,
            collapsed_bus,
        }
    }
}

/// Solves one snapshot of the network as given.
///
/// Non-convergence within `max_iter` is reported through `converged = false`;
/// a collapsing voltage is an error.
pub fn solve_snapshot<T: Scalar>(net: &Network<T>, cfg: &SolverConfig<T>) -> Result<PowerFlowSolution<T>, PowerFlowError> {
    cfg.validate()?;
    let solver = RadialSolver::new(net)?;
    let sol = solver.solve_loads(solver.base_loads(), cfg);
    if let Some(bus) = &sol.collapsed_bus {
        let i = sol.bus_ids.iter().position(|b| b == bus).expect("collapsed bus exists");
        return Err(PowerFlowError::VoltageCollapse { bus: bus.clone(), magnitude_pu: sol.bus_voltage[i].0.as_f64() });
    }
    Ok(sol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

/// kW samples for one load on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadShape<T> {
    pub dt_h: T,
    pub values_kw: Vec<T>,
}

impl<T: Scalar> From<&DemandProfile<T>> for LoadShape<T> {
    fn from(p: &DemandProfile<T>) -> Self {
        Self { dt_h: p.dt_h, values_kw: p.values_kw.clone() }
    }
}

/// Time-series request: per-load kW shapes replace the nominal kW at each
/// step (reactive power keeps the nominal power factor). Shapes repeat
/// cyclically when `steps` exceeds their length.
#[derive(Debug, Clone, PartialEq)]
pub struct QstsPlan<T> {
    pub dt_h: T,
    pub steps: usize,
    pub shapes: BTreeMap<String, LoadShape<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QstsResult<T> {
    pub dt_h: T,
    pub steps: Vec<PowerFlowSolution<T>>,
}

impl<T: Scalar> QstsResult<T> {
    pub fn converged_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.converged).count()
    }

    /// Per-line per-step CSV, header `step,line_id,kw,kvar,amps`.
    pub fn write_line_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "step,line_id,kw,kvar,amps")?;
        for (k, s) in self.steps.iter().enumerate() {
            for (i, id) in s.line_ids.iter().enumerate() {
                writeln!(
                    w,
                    "{k},{id},{:.6},{:.6},{:.6}",
                    s.line_flow_kw[i].as_f64(),
                    s.line_flow_kvar[i].as_f64(),
                    s.line_current_a[i].as_f64()
                )?;
            }
        }
        Ok(())
    }

    /// Per-step CSV, header `step,source_kw,loss_kw,min_v_pu,max_v_pu`.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "step,source_kw,loss_kw,min_v_pu,max_v_pu")?;
        for (k, s) in self.steps.iter().enumerate() {
            writeln!(
                w,
                "{k},{:.6},{:.6},{:.6},{:.6}",
                s.source_kw.as_f64(),
                s.total_loss_kw.as_f64(),
                s.min_voltage_pu().as_f64(),
                s.max_voltage_pu().as_f64()
            )?;
        }
        Ok(())
    }
}

/// Runs `plan.steps` snapshots. Divergent or collapsed steps are kept in the
/// result (flagged) rather than aborting the run.
pub fn run_qsts<T: Scalar>(
    net: &Network<T>,
    plan: &QstsPlan<T>,
    cfg: &SolverConfig<T>,
    execution: Execution,
) -> Result<QstsResult<T>, PowerFlowError> {
    cfg.validate()?;
    let solver = RadialSolver::new(net)?;
    let mut shaped: Vec<(usize, &LoadShape<T>)> = Vec::with_capacity(plan.shapes.len());
    for (id, shape) in &plan.shapes {
        let li = solver.load_ids.iter().position(|l| l == id).ok_or_else(|| PowerFlowError::UnknownLoad(id.clone()))?;
        if shape.values_kw.is_empty() {
            return Err(PowerFlowError::EmptyShape(id.clone()));
        }
        if shape.dt_h != plan.dt_h {
            return Err(PowerFlowError::ShapeTimestep {
                load: id.clone(),
                expected: plan.dt_h.as_f64(),
                found: shape.dt_h.as_f64(),
            });
        }
        shaped.push((li, shape));
    }

    let step = |k: usize| {
        let mut loads = solver.base_loads.clone();
        for &(li, shape) in &shaped {
            let (kw0, kvar0) = solver.base_loads[li];
            let kw = shape.values_kw[k % shape.values_kw.len()];
            let kvar = if kw0 > T::zero() { kvar0 * kw / kw0 } else { kvar0 };
            loads[li] = (kw, kvar);
        }
        solver.solve_loads(&loads, cfg)
    };
    let steps = match execution {
        Execution::Sequential => (0..plan.steps).map(step).collect(),
        Execution::Parallel => (0..plan.steps).into_par_iter().map(step).collect(),
    };
    Ok(QstsResult { dt_h: plan.dt_h, steps })
}

/// Integrated loss energy of a time-series run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct LossEnergy<T> {
    pub kwh: T,
    /// False when some step did not converge; `kwh` is then a subtotal
    /// over the converged steps only.
    pub complete: bool,
}

/// Σ loss_kw · dt over converged steps.
pub fn total_losses<T: Scalar>(r: &QstsResult<T>) -> LossEnergy<T> {
    let losses: Vec<T> = r.steps.iter().filter(|s| s.converged).map(|s| s.total_loss_kw).collect();
    LossEnergy { kwh: pairwise_sum(&losses) * r.dt_h, complete: losses.len() == r.steps.len() }
}
