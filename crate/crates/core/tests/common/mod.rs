//! Reference implementations used as oracles by the integration tests.
//! They are written from the definitions, without calling the library
//! routines they check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use qequiv::configuration::ConfigId;
use qequiv::geometry::Variance;
use qequiv::lattice::Site;
use qequiv::quantum_manifold::{Axiom, PointId, QuantumFibreBundle};

// ------------------------------------------------------------ propagators

/// `sqrt(m / (2 pi i hbar t)) exp(i m (y_f - y_i)^2 / (2 hbar t))`.
pub fn free_kernel(m: f64, hbar: f64, t: f64, y_i: f64, y_f: f64) -> Complex64 {
    let pre = Complex64::new(0.0, -m / (2.0 * PI * hbar * t)).sqrt();
    pre * Complex64::new(0.0, m * (y_f - y_i).powi(2) / (2.0 * hbar * t)).exp()
}

/// Mehler kernel for `0 < omega t < pi`.
pub fn mehler_kernel(m: f64, hbar: f64, omega: f64, t: f64, y_i: f64, y_f: f64) -> Complex64 {
    let s = (omega * t).sin();
    assert!(s > 0.0, "oracle only covers the first half period");
    let pre = Complex64::new(0.0, -m * omega / (2.0 * PI * hbar * s)).sqrt();
    let arg = m * omega / (2.0 * hbar * s) * ((y_i * y_i + y_f * y_f) * (omega * t).cos() - 2.0 * y_i * y_f);
    pre * Complex64::new(0.0, arg).exp()
}

/// Time-sliced action with forward-difference velocity and the potential
/// sampled at the left end of each step.
pub fn sliced_action(m: f64, omega: f64, dt: f64, ys: &[f64]) -> f64 {
    ys.windows(2)
        .map(|w| {
            let v = (w[1] - w[0]) / dt;
            (0.5 * m * v * v - 0.5 * m * omega * omega * w[0] * w[0]) * dt
        })
        .sum()
}

/// `sum over interior positions of (1/Z) exp(i S / hbar)` with
/// `1/Z = (m / (2 pi i hbar dt))^{N/2} dy^{N-1}`, by nested enumeration.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_kernel(m: f64, hbar: f64, omega: f64, positions: &[f64], dt: f64, slices: usize, j_i: usize, j_f: usize) -> Complex64 {
    let p = positions.len();
    let dy = positions[1] - positions[0];
    let z = Complex64::new(0.0, -m / (2.0 * PI * hbar * dt)).sqrt().powi(slices as i32) * dy.powi(slices as i32 - 1);
    let interior = slices - 1;
    let total = p.pow(interior as u32);
    let mut re = 0.0;
    let mut im = 0.0;
    let mut ys = vec![0.0; slices + 1];
    for n in 0..total {
        ys[0] = positions[j_i];
        ys[slices] = positions[j_f];
        let mut rest = n;
        for k in (1..=interior).rev() {
            ys[k] = positions[rest % p];
            rest /= p;
        }
        let phase = sliced_action(m, omega, dt, &ys) / hbar;
        re += phase.cos();
        im += phase.sin();
    }
    z * Complex64::new(re, im)
}

// ------------------------------------------------------------ tensors

/// Contraction by summing the outer product over every index assignment
/// and keeping the terms whose paired indices agree.
pub fn contraction_oracle(
    b_slots: &[Variance],
    b: &[f64],
    c_slots: &[Variance],
    c: &[f64],
    dim: usize,
    pairing: &[(usize, usize)],
) -> Vec<f64> {
    let (rb, rc) = (b_slots.len(), c_slots.len());
    let free_b: Vec<usize> = (0..rb).filter(|i| !pairing.iter().any(|p| p.0 == *i)).collect();
    let free_c: Vec<usize> = (0..rc).filter(|j| !pairing.iter().any(|p| p.1 == *j)).collect();
    let out_rank = free_b.len() + free_c.len();
    let mut out = vec![0.0; dim.pow(out_rank as u32)];
    let digits = |mut n: usize, rank: usize| {
        let mut d = vec![0; rank];
        for k in (0..rank).rev() {
            d[k] = n % dim;
            n /= dim;
        }
        d
    };
    for (ib, bv) in b.iter().enumerate() {
        let bi = digits(ib, rb);
        for (ic, cv) in c.iter().enumerate() {
            let ci = digits(ic, rc);
            if pairing.iter().any(|&(i, j)| bi[i] != ci[j]) {
                continue;
            }
            let mut flat = 0;
            for &i in &free_b {
                flat = flat * dim + bi[i];
            }
            for &j in &free_c {
                flat = flat * dim + ci[j];
            }
            out[flat] += bv * cv;
        }
    }
    out
}

// ------------------------------------------------------------ bundles

/// A shared site with its grid points in two charts.
type OverlapPair = (Site, Vec<i64>, Vec<i64>);

fn adjacent(a: &[i64], b: &[i64]) -> bool {
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).sum::<u64>() == 1
}

/// Chart entries whose point exists and lies over the stated branch, as
/// `(branch, site, grid point)`.
fn valid_entries(b: &QuantumFibreBundle, i: usize) -> Vec<(ConfigId, Site, Vec<i64>)> {
    b.charts[i]
        .map
        .iter()
        .filter_map(|(q, (u, x))| match b.point_map.get(q) {
            Some((hu, p)) if hu == u => Some((u.clone(), p.clone(), x.clone())),
            _ => None,
        })
        .collect()
}

/// Every axiom some part of `b` violates, found by exhaustive search.
pub fn bundle_violations(b: &QuantumFibreBundle, full: bool) -> BTreeSet<Axiom> {
    let mut out = BTreeSet::new();
    let fibre_keys: BTreeSet<ConfigId> = b.fibres.keys().cloned().collect();
    if fibre_keys != b.base {
        out.insert(Axiom::FibreDomain);
    }

    let points: BTreeSet<PointId> = b.point_map.keys().copied().collect();
    let pi_domain: BTreeSet<PointId> = b.projection.keys().copied().collect();
    if pi_domain != points || points.iter().any(|q| b.projection.get(q) != Some(&b.point_map[q].0)) {
        out.insert(Axiom::Projection);
    }

    let mut fibre_points: Vec<(ConfigId, Site)> = Vec::new();
    for (u, m) in &b.fibres {
        for p in m.sites() {
            fibre_points.push((u.clone(), p));
        }
    }
    let hits = |t: &(ConfigId, Site)| b.point_map.values().filter(|v| *v == t).count();
    if fibre_points.iter().any(|t| hits(t) != 1) || b.point_map.values().any(|v| !fibre_points.contains(v)) {
        out.insert(Axiom::PointMapBijective);
    }

    if points.iter().any(|q| !b.charts.iter().any(|c| c.map.contains_key(q))) {
        out.insert(Axiom::ChartCover);
    }

    let entries: Vec<Vec<(ConfigId, Site, Vec<i64>)>> = (0..b.charts.len()).map(|i| valid_entries(b, i)).collect();
    for (i, c) in b.charts.iter().enumerate() {
        if entries[i].len() != c.map.len() {
            out.insert(Axiom::ChartBijective);
        }
        let e = &entries[i];
        for (k, (u, _, x)) in e.iter().enumerate() {
            if !c.grid.contains(x) {
                out.insert(Axiom::OmegaInvertible);
            }
            if e[k + 1..].iter().any(|(v, _, y)| v == u && y == x) {
                out.insert(Axiom::OmegaInvertible);
            }
        }
        let branches: BTreeSet<&ConfigId> = e.iter().map(|t| &t.0).collect();
        for u in branches {
            for x in c.grid.sites() {
                if !e.iter().any(|(v, _, y)| v == u && *y == x.0) {
                    out.insert(Axiom::ChartBijective);
                }
            }
        }
    }

    for (u, p) in &fibre_points {
        if !entries.iter().any(|e| e.iter().any(|(v, s, _)| v == u && s == p)) {
            out.insert(Axiom::BranchCover);
        }
    }

    for i in 0..entries.len() {
        for j in 0..entries.len() {
            if i == j {
                continue;
            }
            // Pairs (omega_i(p), omega_j(p)) over shared sites of one branch.
            let mut graph: BTreeMap<ConfigId, Vec<OverlapPair>> = BTreeMap::new();
            for (u, p, x) in &entries[i] {
                for (v, s, y) in &entries[j] {
                    if u == v && p == s {
                        graph.entry(u.clone()).or_default().push((p.clone(), x.clone(), y.clone()));
                    }
                }
            }
            for g in graph.values() {
                for (a, (_, xa, ya)) in g.iter().enumerate() {
                    for (_, xb, yb) in &g[a + 1..] {
                        if (xa == xb) != (ya == yb) {
                            out.insert(Axiom::OverlapBijective);
                        }
                        if adjacent(xa, xb) && !adjacent(ya, yb) {
                            out.insert(Axiom::AdjacencySurrogate);
                        }
                    }
                }
            }
        }
    }

    if !full {
        return out;
    }

    let mentioned: Vec<&ConfigId> = b
        .equiv
        .iter()
        .flat_map(|w| [&w.u, &w.v])
        .chain(b.order.iter().flat_map(|(x, y)| [x, y]))
        .collect();
    if mentioned.iter().any(|u| !b.base.contains(*u)) {
        out.insert(Axiom::RelationDomain);
    }
    for w in &b.equiv {
        let (Some(mu), Some(mv)) = (b.fibres.get(&w.u), b.fibres.get(&w.v)) else { continue };
        let h = mu.spacing_f64();
        let mut image = BTreeSet::new();
        let mut ok = mu.spacing() == mv.spacing();
        for p in mu.sites() {
            match w.map.map_site(&p, &h) {
                Ok(Some(s)) => {
                    image.insert(s);
                }
                _ => ok = false,
            }
        }
        if !ok || image != mv.sites().into_iter().collect::<BTreeSet<Site>>() {
            out.insert(Axiom::EquivFibre);
        }
    }
    for (u, v) in &b.order {
        let (Some(mu), Some(mv)) = (b.fibres.get(u), b.fibres.get(v)) else { continue };
        let inside = mu.sites().iter().all(|p| mv.sites().contains(p));
        if mu.spacing() != mv.spacing() || !inside {
            out.insert(Axiom::OrderFibre);
        }
    }

    let ids: Vec<&ConfigId> = b.base.iter().collect();
    let eq = |a: &ConfigId, c: &ConfigId| {
        a == c || b.equiv.iter().any(|w| (&w.u == a && &w.v == c) || (&w.u == c && &w.v == a))
    };
    let le = |a: &ConfigId, c: &ConfigId| a == c || b.order.iter().any(|(x, y)| x == a && y == c);
    for a in &ids {
        for c in &ids {
            if a != c && le(a, c) && le(c, a) {
                out.insert(Axiom::OrderPartial);
            }
            for d in &ids {
                if le(a, c) && le(c, d) && !le(a, d) {
                    out.insert(Axiom::OrderPartial);
                }
                if eq(a, c) && eq(c, d) && !eq(a, d) {
                    out.insert(Axiom::EquivTransitive);
                }
                if le(a, c) && eq(c, d) && !ids.iter().any(|y| eq(a, y) && le(y, d)) {
                    out.insert(Axiom::Completeness);
                }
            }
        }
    }
    out
}

// ------------------------------------------------------------ metrics

/// `g = J^{-T} g(x) J^{-1}` at `x' = phi(x)`, with `J = dx'/dx`.
pub fn push_metric(g: &DMatrix<f64>, j: &DMatrix<f64>) -> DMatrix<f64> {
    let inv = j.clone().try_inverse().expect("invertible Jacobian");
    inv.transpose() * g * &inv
}

pub fn max_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Whether all metrics are positive multiples of the first.
pub fn proportional(gs: &[DMatrix<f64>], tol: f64) -> bool {
    let r = &gs[0];
    gs.iter().all(|g| {
        let (mut num, mut den) = (0.0, 0.0);
        for (a, b) in g.iter().zip(r.iter()) {
            num += a * b;
            den += b * b;
        }
        let lambda = num / den;
        lambda > 0.0 && max_entry(&(g - r * lambda)) <= tol * max_entry(g)
    })
}
