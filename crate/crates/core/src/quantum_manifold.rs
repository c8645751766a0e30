//! Quantum fibre bundles as finite data: points, per-branch fibres, the
//! point map, charts onto coordinate grids, and the equivalence and
//! containment relations on branches. Also quantum tensor fields and their
//! contraction.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::configuration::{ConfigId, Configuration};
use crate::error::{Error, Result};
use crate::extended_state::{CoeffLayout, CoeffSet, Coefficient, ExtendedAState, Superposition};
use crate::geometry::tensor::num_components;
use crate::geometry::{contract_components, Diffeo, LatticeMap, TensorField, Variance};
use crate::lattice::{IndexBox, LatticePatch, Site};
use crate::quantum_coords::{IdentificationFamily, IdentificationMap};

pub type PointId = u64;

/// A chart `g_i: R_i -> pi(R_i) x V_i` with `V_i` an integer grid box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub grid: IndexBox,
    #[serde(with = "crate::serde_util::pairs")]
    pub map: BTreeMap<PointId, (ConfigId, Vec<i64>)>,
}

/// A stored equivalence `u ~ v` with the map carrying `M(u)` onto `M(v)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivWitness {
    pub u: ConfigId,
    pub v: ConfigId,
    pub map: Diffeo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantumFibreBundle {
    pub base: BTreeSet<ConfigId>,
    #[serde(with = "crate::serde_util::pairs")]
    pub fibres: BTreeMap<ConfigId, LatticePatch>,
    /// `pi`, stored explicitly.
    #[serde(with = "crate::serde_util::pairs")]
    pub projection: BTreeMap<PointId, ConfigId>,
    /// `h`; its domain is the total space.
    #[serde(with = "crate::serde_util::pairs")]
    pub point_map: BTreeMap<PointId, (ConfigId, Site)>,
    pub charts: Vec<Chart>,
    #[serde(default)]
    pub equiv: Vec<EquivWitness>,
    /// Stored containments `u <= v`.
    #[serde(default)]
    pub order: Vec<(ConfigId, ConfigId)>,
    /// Configurations attached to branches, for export to extended states.
    #[serde(default, with = "crate::serde_util::pairs")]
    pub configs: BTreeMap<ConfigId, Configuration>,
}

impl QuantumFibreBundle {
    /// Bundle with the given fibres, points numbered in branch then site
    /// order, and no charts.
    pub fn from_fibres(fibres: BTreeMap<ConfigId, LatticePatch>) -> Self {
        let mut projection = BTreeMap::new();
        let mut point_map = BTreeMap::new();
        let mut q = 0;
        for (u, patch) in &fibres {
            for p in patch.sites() {
                projection.insert(q, u.clone());
                point_map.insert(q, (u.clone(), p));
                q += 1;
            }
        }
        QuantumFibreBundle {
            base: fibres.keys().cloned().collect(),
            fibres,
            projection,
            point_map,
            charts: Vec::new(),
            equiv: Vec::new(),
            order: Vec::new(),
            configs: BTreeMap::new(),
        }
    }

    /// Bundle of the field branches of a state, with one identity chart per
    /// branch box and the configurations attached.
    pub fn from_field_state<C: Coefficient>(state: &Superposition<C>) -> Result<Self> {
        let mut fibres = BTreeMap::new();
        let mut configs = BTreeMap::new();
        for (u, t) in state.terms() {
            let f = t.config.as_field().ok_or(Error::KindMismatch)?;
            fibres.insert(u.clone(), f.support().clone());
            configs.insert(u.clone(), t.config.clone());
        }
        let mut b = Self::from_fibres(fibres);
        b.configs = configs;
        let boxes: Vec<(ConfigId, IndexBox)> = b
            .fibres
            .iter()
            .flat_map(|(u, p)| p.boxes().iter().map(move |x| (u.clone(), x.clone())))
            .collect();
        for (u, grid) in boxes {
            let dim = grid.dim();
            b.add_chart(grid, &BTreeMap::from([(u, LatticeMap::identity(dim))]))?;
        }
        Ok(b)
    }

    /// `h^{-1}(u, p)`.
    pub fn point_of(&self, u: &ConfigId, p: &Site) -> Option<PointId> {
        self.point_map
            .iter()
            .find(|(_, (v, s))| v == u && s == p)
            .map(|(q, _)| *q)
    }

    fn inverse_point_map(&self) -> BTreeMap<(ConfigId, Site), PointId> {
        self.point_map.iter().map(|(q, k)| (k.clone(), *q)).collect()
    }

    /// Adds a chart on `grid` covering, for each listed branch `u`, the
    /// points `h^{-1}(u, m_u(x))` for every `x` in the grid.
    pub fn add_chart(&mut self, grid: IndexBox, maps: &BTreeMap<ConfigId, LatticeMap>) -> Result<usize> {
        let inv = self.inverse_point_map();
        let mut map = BTreeMap::new();
        for (u, m) in maps {
            for x in grid.sites() {
                let p = m.apply(&x);
                let q = inv
                    .get(&(u.clone(), p.clone()))
                    .ok_or_else(|| Error::InvalidModel(format!("chart point {p} is not in the fibre of {u}")))?;
                map.insert(*q, (u.clone(), x.0));
            }
        }
        self.charts.push(Chart { grid, map });
        Ok(self.charts.len() - 1)
    }

    pub fn add_equiv(&mut self, u: ConfigId, v: ConfigId, map: Diffeo) {
        self.equiv.push(EquivWitness { u, v, map });
    }

    pub fn add_order(&mut self, u: ConfigId, v: ConfigId) {
        self.order.push((u, v));
    }

    /// Branch sets `O_ui = {p : h^{-1}(u, p) in R_i}`.
    pub fn chart_region(&self, i: usize, u: &ConfigId) -> BTreeSet<Site> {
        self.charts.get(i).map_or_else(BTreeSet::new, |c| {
            c.map
                .keys()
                .filter_map(|q| self.point_map.get(q))
                .filter(|(v, _)| v == u)
                .map(|(_, p)| p.clone())
                .collect()
        })
    }

    /// `pi(R_i)`.
    pub fn chart_branches(&self, i: usize) -> BTreeSet<ConfigId> {
        self.charts
            .get(i)
            .map_or_else(BTreeSet::new, |c| c.map.values().map(|(u, _)| u.clone()).collect())
    }

    fn equivalent(&self, a: &ConfigId, b: &ConfigId) -> bool {
        a == b || self.equiv.iter().any(|w| (&w.u == a && &w.v == b) || (&w.u == b && &w.v == a))
    }

    fn contained(&self, a: &ConfigId, b: &ConfigId) -> bool {
        a == b || self.order.iter().any(|(x, y)| x == a && y == b)
    }
}

/// Compact description of a bundle: fibres, charts given by one lattice map
/// per branch, and the stored relations. Points are numbered as in
/// [`QuantumFibreBundle::from_fibres`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleSpec {
    pub fibres: BTreeMap<ConfigId, LatticePatch>,
    #[serde(default)]
    pub charts: Vec<ChartSpec>,
    #[serde(default)]
    pub equiv: Vec<EquivWitness>,
    #[serde(default)]
    pub order: Vec<(ConfigId, ConfigId)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub grid: IndexBox,
    pub maps: BTreeMap<ConfigId, LatticeMap>,
}

impl BundleSpec {
    pub fn build(&self) -> Result<QuantumFibreBundle> {
        let mut b = QuantumFibreBundle::from_fibres(self.fibres.clone());
        for c in &self.charts {
            b.add_chart(c.grid.clone(), &c.maps)?;
        }
        b.equiv = self.equiv.clone();
        b.order = self.order.clone();
        Ok(b)
    }
}

/// The axioms checked by the validators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    /// Base and fibre keys agree.
    FibreDomain,
    /// `pi` is defined on every point and equals the first component of `h`.
    Projection,
    /// `h` is a bijection onto `{(u, p) : p in M(u)}`.
    PointMapBijective,
    /// The chart domains cover the total space.
    ChartCover,
    /// Each chart is a bijection onto `pi(R_i) x V_i`.
    ChartBijective,
    /// The sets `O_ui` cover every fibre.
    BranchCover,
    /// Each `omega_ui` is injective into `V_i`.
    OmegaInvertible,
    /// Overlap maps `omega_uj o omega_ui^{-1}` are bijections.
    OverlapBijective,
    /// Overlap maps send grid neighbours to grid neighbours.
    AdjacencySurrogate,
    /// Relations mention only base branches.
    RelationDomain,
    EquivTransitive,
    /// Each equivalence witness maps `M(u)` onto `M(v)`.
    EquivFibre,
    /// The containment relation is antisymmetric and transitive.
    OrderPartial,
    /// `u <= v` implies `M(u)` is a subset of `M(v)`.
    OrderFibre,
    Completeness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub axiom: Axiom,
    pub detail: String,
}

/// Validation outcome; the smoothness surrogate is kept apart from the hard
/// axioms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleReport {
    pub hard: Vec<Finding>,
    pub surrogate: Vec<Finding>,
}

impl BundleReport {
    /// No hard axiom fails.
    pub fn is_valid(&self) -> bool {
        self.hard.is_empty()
    }

    /// No hard axiom and no surrogate check fails.
    pub fn is_clean(&self) -> bool {
        self.hard.is_empty() && self.surrogate.is_empty()
    }

    pub fn axioms(&self) -> BTreeSet<Axiom> {
        self.hard.iter().chain(&self.surrogate).map(|f| f.axiom).collect()
    }

    fn hard(&mut self, axiom: Axiom, detail: String) {
        self.hard.push(Finding { axiom, detail });
    }
}

fn grid_adjacent(a: &[i64], b: &[i64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<i64>() == 1
}

/// Checks the point map, the charts and the overlap maps.
pub fn validate_basic(b: &QuantumFibreBundle) -> BundleReport {
    let mut r = BundleReport::default();
    let fibre_keys: BTreeSet<ConfigId> = b.fibres.keys().cloned().collect();
    if fibre_keys != b.base {
        r.hard(Axiom::FibreDomain, "fibres are not indexed by exactly the base".into());
    }

    for (q, (u, _)) in &b.point_map {
        match b.projection.get(q) {
            Some(v) if v == u => {}
            Some(v) => r.hard(Axiom::Projection, format!("pi({q}) = {v} but h({q}) lies over {u}")),
            None => r.hard(Axiom::Projection, format!("pi is undefined at {q}")),
        }
    }
    for q in b.projection.keys() {
        if !b.point_map.contains_key(q) {
            r.hard(Axiom::Projection, format!("pi is defined at {q}, which is not a point"));
        }
    }

    let mut hit: BTreeMap<(ConfigId, Site), PointId> = BTreeMap::new();
    for (q, (u, p)) in &b.point_map {
        if !b.fibres.get(u).is_some_and(|m| m.contains_site(p)) {
            r.hard(Axiom::PointMapBijective, format!("h({q}) = ({u}, {p}) is not a fibre point"));
        }
        if let Some(q0) = hit.insert((u.clone(), p.clone()), *q) {
            r.hard(Axiom::PointMapBijective, format!("points {q0} and {q} both map to ({u}, {p})"));
        }
    }
    for (u, m) in &b.fibres {
        for p in m.sites() {
            if !hit.contains_key(&(u.clone(), p.clone())) {
                r.hard(Axiom::PointMapBijective, format!("({u}, {p}) has no point"));
            }
        }
    }

    let covered: BTreeSet<PointId> = b.charts.iter().flat_map(|c| c.map.keys().cloned()).collect();
    for q in b.point_map.keys() {
        if !covered.contains(q) {
            r.hard(Axiom::ChartCover, format!("point {q} is in no chart"));
        }
    }

    // omega_ui as site -> grid tuple, per chart and branch.
    let mut omegas: Vec<BTreeMap<ConfigId, BTreeMap<Site, Vec<i64>>>> = Vec::new();
    for (i, c) in b.charts.iter().enumerate() {
        let mut images: BTreeMap<(ConfigId, Vec<i64>), PointId> = BTreeMap::new();
        let mut omega: BTreeMap<ConfigId, BTreeMap<Site, Vec<i64>>> = BTreeMap::new();
        for (q, (u, x)) in &c.map {
            let Some((hu, p)) = b.point_map.get(q) else {
                r.hard(Axiom::ChartBijective, format!("chart {i} maps unknown point {q}"));
                continue;
            };
            if hu != u {
                r.hard(Axiom::ChartBijective, format!("chart {i} sends {q} over {u}, but pi({q}) = {hu}"));
                continue;
            }
            if !c.grid.contains(x) {
                r.hard(Axiom::OmegaInvertible, format!("chart {i} sends {q} to {x:?} outside its grid"));
            }
            if let Some(q0) = images.insert((u.clone(), x.clone()), *q) {
                r.hard(Axiom::OmegaInvertible, format!("chart {i} sends {q0} and {q} to ({u}, {x:?})"));
            }
            omega.entry(u.clone()).or_default().insert(p.clone(), x.clone());
        }
        for u in omega.keys() {
            for x in c.grid.sites() {
                if !images.contains_key(&(u.clone(), x.0.clone())) {
                    r.hard(Axiom::ChartBijective, format!("chart {i} misses ({u}, {})", x));
                }
            }
        }
        omegas.push(omega);
    }

    for (u, m) in &b.fibres {
        for p in m.sites() {
            if !omegas.iter().any(|o| o.get(u).is_some_and(|w| w.contains_key(&p))) {
                r.hard(Axiom::BranchCover, format!("({u}, {p}) lies in no branch set of any chart"));
            }
        }
    }

    for (i, oi) in omegas.iter().enumerate() {
        for (j, oj) in omegas.iter().enumerate() {
            if i == j {
                continue;
            }
            for (u, wi) in oi {
                let Some(wj) = oj.get(u) else { continue };
                let overlap: BTreeMap<&Vec<i64>, &Vec<i64>> = wi
                    .iter()
                    .filter_map(|(p, x)| wj.get(p).map(|y| (x, y)))
                    .collect();
                let targets: BTreeSet<&Vec<i64>> = overlap.values().cloned().collect();
                if targets.len() != overlap.len() {
                    r.hard(Axiom::OverlapBijective, format!("overlap map {i} -> {j} on {u} is not injective"));
                }
                let xs: Vec<(&Vec<i64>, &Vec<i64>)> = overlap.into_iter().collect();
                for (a, (xa, ya)) in xs.iter().enumerate() {
                    for (xb, yb) in &xs[a + 1..] {
                        if grid_adjacent(xa, xb) && !grid_adjacent(ya, yb) {
                            r.surrogate.push(Finding {
                                axiom: Axiom::AdjacencySurrogate,
                                detail: format!(
                                    "overlap map {i} -> {j} on {u} sends neighbours {xa:?}, {xb:?} to {ya:?}, {yb:?}"
                                ),
                            });
                        }
                    }
                }
            }
        }
    }
    r
}

fn same_grid_subset(a: &LatticePatch, b: &LatticePatch) -> bool {
    a.same_grid(b) && a.is_subset_of(b)
}

/// Everything in [`validate_basic`] plus the relation axioms and the
/// completeness condition, checked over all triples.
pub fn validate_full(b: &QuantumFibreBundle) -> BundleReport {
    let mut r = validate_basic(b);
    let mentioned = b
        .equiv
        .iter()
        .flat_map(|w| [&w.u, &w.v])
        .chain(b.order.iter().flat_map(|(x, y)| [x, y]));
    for u in mentioned {
        if !b.base.contains(u) {
            r.hard(Axiom::RelationDomain, format!("relation mentions {u}, which is not in the base"));
        }
    }

    for w in &b.equiv {
        let (Some(mu), Some(mv)) = (b.fibres.get(&w.u), b.fibres.get(&w.v)) else {
            continue;
        };
        let h = mu.spacing_f64();
        let image: Option<BTreeSet<Site>> = mu
            .sites()
            .iter()
            .map(|p| w.map.map_site(p, &h).ok().flatten())
            .collect();
        if image.as_ref() != Some(&mv.site_set()) || !mu.same_grid(mv) {
            r.hard(Axiom::EquivFibre, format!("witness for {} ~ {} does not carry M({}) onto M({})", w.u, w.v, w.u, w.v));
        }
    }
    for (u, v) in &b.order {
        if let (Some(mu), Some(mv)) = (b.fibres.get(u), b.fibres.get(v)) {
            if !same_grid_subset(mu, mv) {
                r.hard(Axiom::OrderFibre, format!("{u} <= {v} but M({u}) is not inside M({v})"));
            }
        }
    }

    let ids: Vec<&ConfigId> = b.base.iter().collect();
    for u in &ids {
        for v in &ids {
            if u != v && b.contained(u, v) && b.contained(v, u) {
                r.hard(Axiom::OrderPartial, format!("{u} <= {v} and {v} <= {u}"));
            }
            for w in &ids {
                if b.equivalent(u, v) && b.equivalent(v, w) && !b.equivalent(u, w) {
                    r.hard(Axiom::EquivTransitive, format!("{u} ~ {v} ~ {w} but not {u} ~ {w}"));
                }
                if b.contained(u, v) && b.contained(v, w) && !b.contained(u, w) {
                    r.hard(Axiom::OrderPartial, format!("{u} <= {v} <= {w} but not {u} <= {w}"));
                }
                if b.contained(u, v)
                    && b.equivalent(v, w)
                    && !ids.iter().any(|y| b.equivalent(u, y) && b.contained(y, w))
                {
                    r.hard(Axiom::Completeness, format!("({u}, {v}, {w}) has no witness"));
                }
            }
        }
    }
    r
}

/// `proj_2 g_i(q)`.
pub fn coordinate(b: &QuantumFibreBundle, i: usize, q: PointId) -> Result<Vec<i64>> {
    b.charts
        .get(i)
        .and_then(|c| c.map.get(&q))
        .map(|(_, x)| x.clone())
        .ok_or(Error::NotInChart(q, i))
}

/// `phi_{u->v}(p) = proj_2 h(g_i^{-1}(v, omega_ui(p)))` as a site table.
pub fn derive_identification(b: &QuantumFibreBundle, i: usize, u: &ConfigId, v: &ConfigId) -> Result<BTreeMap<Site, Site>> {
    let branches = b.chart_branches(i);
    for w in [u, v] {
        if !branches.contains(w) {
            return Err(Error::BranchNotInChart(w.clone(), i));
        }
    }
    let c = &b.charts[i];
    let inv: BTreeMap<(&ConfigId, &Vec<i64>), PointId> = c.map.iter().map(|(q, (w, x))| ((w, x), *q)).collect();
    let mut out = BTreeMap::new();
    for (q, (w, x)) in &c.map {
        if w != u {
            continue;
        }
        let (_, p) = b.point_map.get(q).ok_or(Error::NotInChart(*q, i))?;
        if let Some(q2) = inv.get(&(v, x)) {
            let (_, p2) = b.point_map.get(q2).ok_or(Error::NotInChart(*q2, i))?;
            out.insert(p.clone(), p2.clone());
        }
    }
    Ok(out)
}

/// The identification family of chart `i`, one site table per ordered pair
/// of its branches.
pub fn chart_identification_family(b: &QuantumFibreBundle, i: usize) -> Result<IdentificationFamily> {
    let branches = b.chart_branches(i);
    let spacing: Vec<Rational64> = branches
        .iter()
        .next()
        .and_then(|u| b.fibres.get(u))
        .map(|m| m.spacing().to_vec())
        .ok_or_else(|| Error::InvalidModel(format!("chart {i} has no branches with fibres")))?;
    let regions = branches.iter().map(|u| (u.clone(), b.chart_region(i, u))).collect();
    let mut maps = BTreeMap::new();
    for u in &branches {
        for v in &branches {
            maps.insert(
                (u.clone(), v.clone()),
                IdentificationMap::Table(derive_identification(b, i, u, v)?),
            );
        }
    }
    Ok(IdentificationFamily::explicit(spacing, regions, maps))
}

/// A tensor `A(q)` at every point of the total space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantumTensorField {
    slots: Vec<Variance>,
    dim: usize,
    #[serde(with = "crate::serde_util::pairs")]
    values: BTreeMap<PointId, Vec<f64>>,
}

impl QuantumTensorField {
    pub fn new(slots: Vec<Variance>, dim: usize, values: BTreeMap<PointId, Vec<f64>>) -> Result<Self> {
        let n = num_components(dim, slots.len());
        if let Some((q, v)) = values.iter().find(|(_, v)| v.len() != n) {
            return Err(Error::InvalidTensor(format!("point {q} has {} components, expected {n}", v.len())));
        }
        Ok(QuantumTensorField { slots, dim, values })
    }

    /// Reads `A(q)` from the coefficient sets of a state over the bundle.
    pub fn from_coeffs(b: &QuantumFibreBundle, state: &ExtendedAState) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut shape: Option<(Vec<Variance>, usize)> = None;
        for (q, (u, p)) in &b.point_map {
            let t = state.get(u).ok_or_else(|| Error::MissingConfig(u.clone()))?;
            let f = &t.coeff.field;
            match &shape {
                None => shape = Some((f.slots().to_vec(), f.dim())),
                Some((s, d)) if s.as_slice() == f.slots() && *d == f.dim() => {}
                Some(_) => return Err(Error::InvalidTensor("coefficient ranks differ between branches".into())),
            }
            let v = f
                .get(p)
                .ok_or_else(|| Error::InvalidTensor(format!("no coefficient at ({u}, {p})")))?;
            values.insert(*q, v.to_vec());
        }
        let (slots, dim) = shape.ok_or_else(|| Error::InvalidTensor("bundle has no points".into()))?;
        Self::new(slots, dim, values)
    }

    pub fn slots(&self) -> &[Variance] {
        &self.slots
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &BTreeMap<PointId, Vec<f64>> {
        &self.values
    }

    pub fn get(&self, q: PointId) -> Option<&[f64]> {
        self.values.get(&q).map(Vec::as_slice)
    }
}

/// Pointwise contraction over the slot pairs `(slot of b, slot of c)`;
/// free slots of `b` come first.
pub fn contract(b: &QuantumTensorField, c: &QuantumTensorField, pairing: &[(usize, usize)]) -> Result<QuantumTensorField> {
    if b.dim != c.dim {
        return Err(Error::PairingMismatch(format!("dimensions {} and {}", b.dim, c.dim)));
    }
    if !b.values.keys().eq(c.values.keys()) {
        return Err(Error::PairingMismatch("fields live on different point sets".into()));
    }
    let mut slots = Vec::new();
    let mut values = BTreeMap::new();
    if b.values.is_empty() {
        slots = contract_components(&b.slots, &vec![0.0; num_components(b.dim, b.slots.len())], &c.slots, &vec![0.0; num_components(c.dim, c.slots.len())], b.dim, pairing)?.0;
    }
    for (q, bv) in &b.values {
        let (s, v) = contract_components(&b.slots, bv, &c.slots, &c.values[q], b.dim, pairing)?;
        slots = s;
        values.insert(*q, v);
    }
    Ok(QuantumTensorField { slots, dim: b.dim, values })
}

/// Assembles per-branch coefficient sets `{(A(q), p) : h(q) = (u, p)}` into
/// an extended state over the bundle's attached configurations.
pub fn bundle_to_extended_state(
    b: &QuantumFibreBundle,
    a: &QuantumTensorField,
    weights: &BTreeMap<ConfigId, Complex64>,
    name: &str,
) -> Result<ExtendedAState> {
    let mut per_branch: BTreeMap<&ConfigId, BTreeMap<Site, Vec<f64>>> = BTreeMap::new();
    for (q, (u, p)) in &b.point_map {
        let v = a
            .get(*q)
            .ok_or_else(|| Error::InvalidTensor(format!("no tensor at point {q}")))?;
        per_branch.entry(u).or_default().insert(p.clone(), v.to_vec());
    }
    let mut out = ExtendedAState::new();
    for u in &b.base {
        let w = *weights.get(u).ok_or_else(|| Error::MissingWeight(u.clone()))?;
        let config = b.configs.get(u).ok_or_else(|| Error::MissingConfig(u.clone()))?;
        let field = TensorField::new(a.slots.clone(), a.dim, per_branch.remove(u).unwrap_or_default())?;
        out.insert_with_id(u.clone(), config.clone(), w, CoeffSet::new(name, CoeffLayout::PerSite, field))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::FieldConfig;
    use crate::extended_state::{extract_a, ExtendedState, Quantity};
    use crate::geometry::minkowski;
    use crate::quantum_coords::verify_consistency;

    fn id(s: &str) -> ConfigId {
        ConfigId::new(s)
    }

    fn patch(lo: [i64; 2], hi: [i64; 2]) -> LatticePatch {
        LatticePatch::uniform_box(Rational64::from_integer(1), IndexBox::new(lo.to_vec(), hi.to_vec())).unwrap()
    }

    fn trivial() -> QuantumFibreBundle {
        let mut b = QuantumFibreBundle::from_fibres(BTreeMap::from([(id("u"), patch([0, 0], [2, 2]))]));
        b.add_chart(IndexBox::new(vec![0, 0], vec![2, 2]), &BTreeMap::from([(id("u"), LatticeMap::identity(2))]))
            .unwrap();
        b
    }

    /// Two branches sharing a two-chart atlas.
    fn two_chart() -> QuantumFibreBundle {
        let mut b = QuantumFibreBundle::from_fibres(BTreeMap::from([
            (id("u"), patch([0, 0], [3, 1])),
            (id("v"), patch([10, 0], [13, 1])),
        ]));
        let left = IndexBox::new(vec![0, 0], vec![2, 1]);
        b.add_chart(
            left.clone(),
            &BTreeMap::from([(id("u"), LatticeMap::identity(2)), (id("v"), LatticeMap::translation(vec![10, 0]))]),
        )
        .unwrap();
        b.add_chart(
            left,
            &BTreeMap::from([(id("u"), LatticeMap::translation(vec![1, 0])), (id("v"), LatticeMap::translation(vec![11, 0]))]),
        )
        .unwrap();
        b
    }

    #[test]
    fn trivial_bundle_is_clean() {
        let b = trivial();
        assert!(validate_basic(&b).is_clean());
        assert!(validate_full(&b).is_clean());
        let q = b.point_of(&id("u"), &Site::new(vec![1, 2])).unwrap();
        assert_eq!(coordinate(&b, 0, q).unwrap(), vec![1, 2]);
        assert_eq!(coordinate(&b, 1, q), Err(Error::NotInChart(q, 1)));
    }

    #[test]
    fn uncovered_point_is_named() {
        let mut b = trivial();
        let q = b.point_of(&id("u"), &Site::new(vec![0, 0])).unwrap();
        b.charts[0].map.remove(&q);
        let r = validate_basic(&b);
        assert!(r.axioms().contains(&Axiom::ChartCover));
        assert!(r.hard.iter().any(|f| f.detail.contains(&format!("point {q} "))));
    }

    #[test]
    fn overlap_coordinates_are_chart_local() {
        let b = two_chart();
        assert!(validate_full(&b).is_clean(), "{:?}", validate_full(&b));
        let q = b.point_of(&id("u"), &Site::new(vec![1, 0])).unwrap();
        assert_eq!(coordinate(&b, 0, q).unwrap(), vec![1, 0]);
        assert_eq!(coordinate(&b, 1, q).unwrap(), vec![0, 0]);
    }

    #[test]
    fn adjacency_breaking_overlap_is_flagged() {
        let mut b = two_chart();
        // Swap two chart-1 coordinates of branch u so neighbours separate.
        let c = &mut b.charts[1];
        let qa = *c.map.iter().find(|(_, (u, x))| u == &id("u") && x == &vec![0, 0]).unwrap().0;
        let qb = *c.map.iter().find(|(_, (u, x))| u == &id("u") && x == &vec![2, 1]).unwrap().0;
        let xa = c.map[&qa].1.clone();
        let xb = c.map[&qb].1.clone();
        c.map.get_mut(&qa).unwrap().1 = xb;
        c.map.get_mut(&qb).unwrap().1 = xa;
        let r = validate_basic(&b);
        assert!(r.is_valid());
        assert!(r.axioms().contains(&Axiom::AdjacencySurrogate));
    }

    #[test]
    fn derived_identifications_are_consistent() {
        let b = two_chart();
        let phi = derive_identification(&b, 0, &id("u"), &id("v")).unwrap();
        assert_eq!(phi[&Site::new(vec![2, 1])], Site::new(vec![12, 1]));
        let same = derive_identification(&b, 0, &id("u"), &id("u")).unwrap();
        assert!(same.iter().all(|(a, b)| a == b));
        assert!(verify_consistency(&chart_identification_family(&b, 1).unwrap()).is_clean());
        assert_eq!(derive_identification(&b, 0, &id("u"), &id("w")), Err(Error::BranchNotInChart(id("w"), 0)));
    }

    #[test]
    fn completeness_needs_a_witness() {
        let mut b = QuantumFibreBundle::from_fibres(BTreeMap::from([
            (id("u"), patch([0, 0], [1, 1])),
            (id("v"), patch([0, 0], [2, 2])),
            (id("w"), patch([5, 0], [7, 2])),
        ]));
        for (u, g) in [("u", [1, 1]), ("v", [2, 2])] {
            b.add_chart(IndexBox::new(vec![0, 0], g.to_vec()), &BTreeMap::from([(id(u), LatticeMap::identity(2))]))
                .unwrap();
        }
        b.add_chart(IndexBox::new(vec![0, 0], vec![2, 2]), &BTreeMap::from([(id("w"), LatticeMap::translation(vec![5, 0]))]))
            .unwrap();
        assert!(validate_full(&b).is_clean());
        b.add_order(id("u"), id("v"));
        b.add_equiv(id("v"), id("w"), Diffeo::translation(vec![5, 0]));
        let r = validate_full(&b);
        assert_eq!(r.axioms(), BTreeSet::from([Axiom::Completeness]));
        assert!(r.hard[0].detail.contains("(u, v, w)"));

        let mut fibres = b.fibres.clone();
        fibres.insert(id("y"), patch([5, 0], [6, 1]));
        let mut c = QuantumFibreBundle::from_fibres(fibres);
        for u in ["u", "v", "w", "y"] {
            let m = &c.fibres[&id(u)];
            let bx = m.boxes()[0].clone();
            let lo = bx.lo.clone();
            let grid = IndexBox::new(vec![0, 0], bx.hi.iter().zip(&lo).map(|(h, l)| h - l).collect::<Vec<_>>());
            c.add_chart(grid, &BTreeMap::from([(id(u), LatticeMap::translation(lo))])).unwrap();
        }
        c.order = b.order.clone();
        c.equiv = b.equiv.clone();
        c.add_equiv(id("u"), id("y"), Diffeo::translation(vec![5, 0]));
        c.add_order(id("y"), id("w"));
        assert!(validate_full(&c).is_clean(), "{:?}", validate_full(&c));
    }

    #[test]
    fn contraction_examples() {
        let delta = QuantumTensorField::new(vec![Variance::Up, Variance::Down], 2, BTreeMap::from([(0, vec![1.0, 0.0, 0.0, 1.0])])).unwrap();
        let c = QuantumTensorField::new(vec![Variance::Up], 2, BTreeMap::from([(0, vec![3.0, -2.0])])).unwrap();
        assert_eq!(contract(&delta, &c, &[(1, 0)]).unwrap().get(0).unwrap(), &[3.0, -2.0]);
        assert!(matches!(contract(&delta, &c, &[(0, 0)]), Err(Error::PairingMismatch(_))));
        let zero = QuantumTensorField::new(vec![Variance::Up], 2, BTreeMap::from([(0, vec![0.0, 0.0])])).unwrap();
        assert_eq!(contract(&delta, &zero, &[(1, 0)]).unwrap().get(0).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn export_round_trip() {
        let mk = |s: f64| {
            Configuration::Field(FieldConfig::from_metric_fn(patch([0, 0], [2, 1]), move |x| minkowski(2) * (1.0 + s * x[0])).unwrap())
        };
        let st = ExtendedState::from_configs([(mk(0.1), Complex64::new(0.5, 0.0)), (mk(0.2), Complex64::new(0.0, 0.5))]).unwrap();
        let st = extract_a(&st, &Quantity::Metric).unwrap();
        let b = QuantumFibreBundle::from_field_state(&st).unwrap();
        assert!(validate_full(&b).is_clean());
        let a = QuantumTensorField::from_coeffs(&b, &st).unwrap();
        let name = st.terms().next().unwrap().1.coeff.name.clone();
        let weights: BTreeMap<ConfigId, Complex64> = st.terms().map(|(u, t)| (u.clone(), t.weight)).collect();
        assert_eq!(bundle_to_extended_state(&b, &a, &weights, &name).unwrap(), st);
        let zeros = weights.keys().map(|u| (u.clone(), Complex64::new(0.0, 0.0))).collect();
        assert!(bundle_to_extended_state(&b, &a, &zeros, &name).unwrap().normalize().is_empty());
        let missing = BTreeMap::new();
        assert!(matches!(bundle_to_extended_state(&b, &a, &missing, &name), Err(Error::MissingWeight(_))));
    }
}
