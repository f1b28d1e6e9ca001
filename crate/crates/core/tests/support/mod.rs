#![allow(dead_code)]

use std::path::PathBuf;

use evgrid::netmodel::{Bus, Line, LoadPoint, Network, Source};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub struct FeederSpec {
    pub max_buses: usize,
    /// Per-line series impedance range, pu on a 1 MVA base.
    pub z_pu: (f64, f64),
    /// Total connected load range, pu.
    pub total_load_pu: (f64, f64),
}

pub const SMALL: FeederSpec = FeederSpec { max_buses: 20, z_pu: (0.002, 0.02), total_load_pu: (0.02, 0.3) };
pub const LARGE: FeederSpec = FeederSpec { max_buses: 200, z_pu: (0.0005, 0.005), total_load_pu: (0.02, 0.5) };

/// Random tree: each new bus hangs off a random earlier one; ids are
/// shuffled and some lines are stored against the flow direction.
pub fn random_feeder(seed: u64, spec: &FeederSpec) -> Network<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = rng.random_range(2..=spec.max_buses);
    let kv = [4.16, 12.47, 13.8, 34.5][rng.random_range(0..4)];
    let z_base = kv * kv;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let name = |i: usize| format!("n{:03}", ids[i]);
    let buses = (0..n)
        .map(|i| Bus {
            id: name(i),
            lat: 37.0 + rng.random_range(0.0..0.05),
            lon: -122.0 + rng.random_range(0.0..0.05),
            base_kv: kv,
            transformer: false,
        })
        .collect();
    let mut lines = Vec::new();
    for i in 1..n {
        let parent = rng.random_range(0..i);
        let (r, x) = (rng.random_range(spec.z_pu.0..spec.z_pu.1), rng.random_range(spec.z_pu.0..spec.z_pu.1));
        let (from, to) = if rng.random_bool(0.8) { (parent, i) } else { (i, parent) };
        lines.push(Line {
            id: format!("e{i:03}"),
            from_bus: name(from),
            to_bus: name(to),
            resistance_ohm: r * z_base,
            reactance_ohm: x * z_base,
            ampacity_a: rng.random_range(100.0..600.0),
        });
    }
    let weights: Vec<f64> = (1..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let total_kw = rng.random_range(spec.total_load_pu.0..spec.total_load_pu.1) * 1000.0;
    let sum_w: f64 = weights.iter().sum::<f64>().max(1e-12);
    let mut loads = Vec::new();
    for i in 1..n {
        if rng.random_bool(0.85) {
            let kw = total_kw * weights[i - 1] / sum_w;
            let kvar = kw * rng.random_range(0.0..0.5);
            loads.push(LoadPoint { id: format!("ld{i:03}"), bus_id: name(i), kw, kvar });
        }
    }
    let voltage_pu = rng.random_range(0.98..1.05);
    Network { buses, lines, loads, source: Source { bus_id: name(0), voltage_pu } }
}

pub struct NewtonSolution {
    pub voltage: Vec<Complex64>,
    pub iterations: usize,
    pub mismatch: f64,
}

/// Dense polar Newton-Raphson on the bus admittance matrix. The source bus
/// is the slack; every other bus is PQ with constant-power loads.
pub fn newton(net: &Network<f64>, tol: f64) -> NewtonSolution {
    let n = net.buses.len();
    let idx = |id: &str| net.buses.iter().position(|b| b.id == id).unwrap();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for l in &net.lines {
        let (f, t) = (idx(&l.from_bus), idx(&l.to_bus));
        let kv = net.buses[f].base_kv;
        let z = Complex64::new(l.resistance_ohm, l.reactance_ohm) / (kv * kv);
        let ys = z.inv();
        y[f][f] += ys;
        y[t][t] += ys;
        y[f][t] -= ys;
        y[t][f] -= ys;
    }
    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    for ld in &net.loads {
        let b = idx(&ld.bus_id);
        p_spec[b] -= ld.kw / 1000.0;
        q_spec[b] -= ld.kvar / 1000.0;
    }
    let slack = idx(&net.source.bus_id);
    let pq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = pq.len();
    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    vm[slack] = net.source.voltage_pu;

    let injections = |vm: &[f64], va: &[f64]| {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                let (g, b) = (y[i][k].re, y[i][k].im);
                if g == 0.0 && b == 0.0 {
                    continue;
                }
                let th = va[i] - va[k];
                p[i] += vm[i] * vm[k] * (g * th.cos() + b * th.sin());
                q[i] += vm[i] * vm[k] * (g * th.sin() - b * th.cos());
            }
        }
        (p, q)
    };

    let mut iterations = 0;
    let mut mismatch = f64::INFINITY;
    while iterations < 50 {
        let (p, q) = injections(&vm, &va);
        let mut f = DVector::zeros(2 * m);
        for (r, &i) in pq.iter().enumerate() {
            f[r] = p_spec[i] - p[i];
            f[m + r] = q_spec[i] - q[i];
        }
        mismatch = f.amax();
        if mismatch < tol {
            break;
        }
        iterations += 1;
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pq.iter().enumerate() {
                let (g, b) = (y[i][k].re, y[i][k].im);
                if i == k {
                    jac[(r, c)] = -q[i] - b * vm[i] * vm[i];
                    jac[(r, m + c)] = p[i] / vm[i] + g * vm[i];
                    jac[(m + r, c)] = p[i] - g * vm[i] * vm[i];
                    jac[(m + r, m + c)] = q[i] / vm[i] - b * vm[i];
                } else {
                    let th = va[i] - va[k];
                    let (s, co) = th.sin_cos();
                    jac[(r, c)] = vm[i] * vm[k] * (g * s - b * co);
                    jac[(r, m + c)] = vm[i] * (g * co + b * s);
                    jac[(m + r, c)] = -vm[i] * vm[k] * (g * co + b * s);
                    jac[(m + r, m + c)] = vm[i] * (g * s - b * co);
                }
            }
        }
        let dx = jac.lu().solve(&f).expect("non-singular jacobian");
        for (r, &i) in pq.iter().enumerate() {
            va[i] += dx[r];
            vm[i] += dx[m + r];
        }
    }
    NewtonSolution {
        voltage: (0..n).map(|i| Complex64::from_polar(vm[i], va[i])).collect(),
        iterations,
        mismatch,
    }
}
