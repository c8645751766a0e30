//! Quantum coordinate systems: identification maps pairing points of
//! different branch manifolds, a shared coordinate on the paired points,
//! and classical and quantum coordinate transformations.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::configuration::ConfigId;
use crate::error::{Error, Result};
use crate::extended_state::ExtendedAState;
use crate::geometry::Diffeo;
use crate::lattice::{rational_to_f64, LatticePatch, Site};
use crate::numerics::canonical_bits;
use crate::quantum_diffeo::{apply_restricted, RestrictedQD};

/// Analytic identification maps may deviate from the cocycle by this much
/// (coordinate units) before a triple is reported.
pub const ANALYTIC_TOLERANCE: f64 = 1e-9;

/// A map between branch regions: either a diffeomorphism of the lattice or
/// an explicit site table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentificationMap {
    Diffeo(Diffeo),
    Table(#[serde(with = "crate::serde_util::pairs")] BTreeMap<Site, Site>),
}

impl IdentificationMap {
    pub fn apply_site(&self, s: &Site, spacing: &[f64]) -> Option<Site> {
        match self {
            IdentificationMap::Diffeo(d) => d.map_site(s, spacing).ok().flatten(),
            IdentificationMap::Table(t) => t.get(s).cloned(),
        }
    }

    /// Image in coordinates (for cocycle deviations).
    fn apply_coords(&self, x: &[f64], spacing: &[f64]) -> Option<Vec<f64>> {
        match self {
            IdentificationMap::Diffeo(d) => d.map_point(x, spacing).ok(),
            IdentificationMap::Table(t) => {
                let k = Site(
                    x.iter()
                        .zip(spacing)
                        .map(|(c, h)| (c / h).round() as i64)
                        .collect(),
                );
                t.get(&k).map(|s| coords(s, spacing))
            }
        }
    }

    fn is_exact(&self) -> bool {
        match self {
            IdentificationMap::Diffeo(d) => d.is_lattice_exact(),
            IdentificationMap::Table(_) => true,
        }
    }

    /// `self` first, then `next`.
    pub fn then(&self, next: &IdentificationMap, domain: &BTreeSet<Site>, spacing: &[f64]) -> IdentificationMap {
        match (self, next) {
            (IdentificationMap::Diffeo(a), IdentificationMap::Diffeo(b)) => {
                IdentificationMap::Diffeo(a.then(b))
            }
            _ => IdentificationMap::Table(
                domain
                    .iter()
                    .filter_map(|s| {
                        let m = self.apply_site(s, spacing)?;
                        Some((s.clone(), next.apply_site(&m, spacing)?))
                    })
                    .collect(),
            ),
        }
    }

    /// Inverse on the image of `domain`.
    pub fn inverse(&self, domain: &BTreeSet<Site>, spacing: &[f64]) -> IdentificationMap {
        match self {
            IdentificationMap::Diffeo(d) => IdentificationMap::Diffeo(d.inverse()),
            IdentificationMap::Table(_) => IdentificationMap::Table(
                domain
                    .iter()
                    .filter_map(|s| Some((self.apply_site(s, spacing)?, s.clone())))
                    .collect(),
            ),
        }
    }
}

fn coords(s: &Site, spacing: &[f64]) -> Vec<f64> {
    s.0.iter().zip(spacing).map(|(k, h)| *k as f64 * h).collect()
}

/// Image of a site set under a map, required to be injective and to land on
/// lattice sites.
fn image_of(map: &IdentificationMap, sites: &BTreeSet<Site>, spacing: &[f64]) -> Result<BTreeSet<Site>> {
    let mut out = BTreeSet::new();
    for s in sites {
        let t = map
            .apply_site(s, spacing)
            .ok_or_else(|| Error::NotInvertibleOnPatch(format!("site {s} has no lattice image")))?;
        if !out.insert(t.clone()) {
            return Err(Error::NotInvertibleOnPatch(format!("two sites map to {t}")));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Storage {
    /// `phi_{u->v} = s_v o s_u^{-1}` from maps `s_u` out of a reference region.
    Seeded {
        reference: BTreeSet<Site>,
        #[serde(with = "crate::serde_util::pairs")]
        seeds: BTreeMap<ConfigId, Diffeo>,
    },
    /// Every ordered pair stored explicitly.
    Explicit {
        #[serde(with = "crate::serde_util::pairs")]
        maps: BTreeMap<(ConfigId, ConfigId), IdentificationMap>,
    },
}

/// Identification maps `phi_{u->v}` between per-branch regions `O_u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentificationFamily {
    spacing: Vec<Rational64>,
    #[serde(with = "crate::serde_util::pairs")]
    regions: BTreeMap<ConfigId, BTreeSet<Site>>,
    storage: Storage,
    /// Replacements for individual pairs, applied over `storage`.
    #[serde(with = "crate::serde_util::pairs")]
    overrides: BTreeMap<(ConfigId, ConfigId), IdentificationMap>,
}

/// One cocycle failure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleViolation {
    pub u: ConfigId,
    pub v: ConfigId,
    pub w: ConfigId,
    /// Largest coordinate distance between `phi_{u->w}(p)` and
    /// `phi_{v->w}(phi_{u->v}(p))`; infinite when one side is undefined.
    pub max_deviation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub triples_checked: usize,
    pub violations: Vec<TripleViolation>,
    /// Pairs whose map is not a bijection between the declared regions.
    pub non_bijective: Vec<(ConfigId, ConfigId)>,
}

impl ConsistencyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.non_bijective.is_empty()
    }
}

impl IdentificationFamily {
    /// Family generated from per-branch maps `s_u` of a reference region.
    pub fn seeded(
        spacing: Vec<Rational64>,
        reference: BTreeSet<Site>,
        seeds: BTreeMap<ConfigId, Diffeo>,
    ) -> Result<Self> {
        let h: Vec<f64> = spacing.iter().map(|r| rational_to_f64(*r)).collect();
        let regions = seeds
            .iter()
            .map(|(u, s)| Ok((u.clone(), image_of(&IdentificationMap::Diffeo(s.clone()), &reference, &h)?)))
            .collect::<Result<_>>()?;
        Ok(IdentificationFamily {
            spacing,
            regions,
            storage: Storage::Seeded { reference, seeds },
            overrides: BTreeMap::new(),
        })
    }

    /// Family with every ordered pair given explicitly.
    pub fn explicit(
        spacing: Vec<Rational64>,
        regions: BTreeMap<ConfigId, BTreeSet<Site>>,
        maps: BTreeMap<(ConfigId, ConfigId), IdentificationMap>,
    ) -> Self {
        IdentificationFamily {
            spacing,
            regions,
            storage: Storage::Explicit { maps },
            overrides: BTreeMap::new(),
        }
    }

    /// Replaces the stored map for one ordered pair.
    pub fn with_override(mut self, u: ConfigId, v: ConfigId, map: IdentificationMap) -> Self {
        self.overrides.insert((u, v), map);
        self
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.spacing.iter().map(|r| rational_to_f64(*r)).collect()
    }

    pub fn spacing_exact(&self) -> &[Rational64] {
        &self.spacing
    }

    pub fn dim(&self) -> usize {
        self.spacing.len()
    }

    pub fn branches(&self) -> impl Iterator<Item = &ConfigId> {
        self.regions.keys()
    }

    pub fn has_branch(&self, u: &ConfigId) -> bool {
        self.regions.contains_key(u)
    }

    pub fn region(&self, u: &ConfigId) -> Option<&BTreeSet<Site>> {
        self.regions.get(u)
    }

    /// `phi_{u->v}`.
    pub fn map(&self, u: &ConfigId, v: &ConfigId) -> Result<IdentificationMap> {
        if let Some(m) = self.overrides.get(&(u.clone(), v.clone())) {
            return Ok(m.clone());
        }
        match &self.storage {
            Storage::Seeded { seeds, .. } => {
                let su = seeds.get(u).ok_or_else(|| Error::MissingBranchMap(u.clone()))?;
                let sv = seeds.get(v).ok_or_else(|| Error::MissingBranchMap(v.clone()))?;
                if u == v {
                    return Ok(IdentificationMap::Diffeo(Diffeo::Identity));
                }
                Ok(IdentificationMap::Diffeo(su.inverse().then(sv)))
            }
            Storage::Explicit { maps } => match maps.get(&(u.clone(), v.clone())) {
                Some(m) => Ok(m.clone()),
                None if u == v && self.has_branch(u) => {
                    Ok(IdentificationMap::Diffeo(Diffeo::Identity))
                }
                None => Err(Error::MissingBranchMap(v.clone())),
            },
        }
    }

    /// All ordered pairs, materialised.
    pub fn all_pairs(&self) -> Result<BTreeMap<(ConfigId, ConfigId), IdentificationMap>> {
        let mut out = BTreeMap::new();
        for u in self.branches() {
            for v in self.branches() {
                out.insert((u.clone(), v.clone()), self.map(u, v)?);
            }
        }
        Ok(out)
    }
}

/// Checks that every map is a bijection between the declared regions,
/// that `phi_{u->u}` is the identity, and the cocycle
/// `phi_{u->w} = phi_{v->w} o phi_{u->v}` on `O_u` for distinct triples.
pub fn verify_consistency(fam: &IdentificationFamily) -> ConsistencyReport {
    let h = fam.spacing();
    let mut report = ConsistencyReport::default();
    let ids: Vec<&ConfigId> = fam.branches().collect();
    let mut maps = BTreeMap::new();
    for u in &ids {
        for v in &ids {
            let m = fam.map(u, v).ok();
            let ok = m.as_ref().is_some_and(|m| {
                image_of(m, &fam.regions[*u], &h).is_ok_and(|img| img == fam.regions[*v])
            });
            let identity_ok = u != v
                || m.as_ref().is_some_and(|m| {
                    fam.regions[*u].iter().all(|s| m.apply_site(s, &h).as_ref() == Some(s))
                });
            if !ok || !identity_ok {
                report.non_bijective.push(((*u).clone(), (*v).clone()));
            }
            maps.insert(((*u).clone(), (*v).clone()), m);
        }
    }
    for u in &ids {
        for v in &ids {
            for w in &ids {
                if u == v || v == w || u == w {
                    continue;
                }
                report.triples_checked += 1;
                let get = |a: &ConfigId, b: &ConfigId| maps[&(a.clone(), b.clone())].as_ref();
                let (Some(uv), Some(vw), Some(uw)) = (get(u, v), get(v, w), get(u, w)) else {
                    report.violations.push(TripleViolation {
                        u: (*u).clone(),
                        v: (*v).clone(),
                        w: (*w).clone(),
                        max_deviation: f64::INFINITY,
                    });
                    continue;
                };
                let exact = uv.is_exact() && vw.is_exact() && uw.is_exact();
                let mut dev: f64 = 0.0;
                for p in &fam.regions[*u] {
                    let x = coords(p, &h);
                    let direct = uw.apply_coords(&x, &h);
                    let via = uv.apply_coords(&x, &h).and_then(|y| vw.apply_coords(&y, &h));
                    dev = match (direct, via) {
                        (Some(a), Some(b)) => a
                            .iter()
                            .zip(&b)
                            .fold(dev, |m, (p, q)| m.max((p - q).abs())),
                        _ => f64::INFINITY,
                    };
                }
                let tol = if exact { 0.0 } else { ANALYTIC_TOLERANCE };
                if dev > tol {
                    report.violations.push(TripleViolation {
                        u: (*u).clone(),
                        v: (*v).clone(),
                        w: (*w).clone(),
                        max_deviation: dev,
                    });
                }
            }
        }
    }
    report
}

/// Exact lookup key for a coordinate tuple.
pub type CoordKey = Vec<u64>;

pub fn coord_key(x: &[f64]) -> CoordKey {
    x.iter().map(|c| canonical_bits(*c)).collect()
}

/// A point of a quantum coordinate system: its coordinate and the branch
/// points it identifies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QCPoint {
    pub x: Vec<f64>,
    #[serde(with = "crate::serde_util::pairs")]
    pub branch_points: BTreeMap<ConfigId, Site>,
}

/// An identification family plus a chart on the seed branch's region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantumCoordinateSystem {
    family: Arc<IdentificationFamily>,
    seed: ConfigId,
    #[serde(with = "crate::serde_util::pairs")]
    chart: BTreeMap<Site, Vec<f64>>,
}

impl QuantumCoordinateSystem {
    /// Chart given explicitly on the seed region.
    pub fn new(
        family: Arc<IdentificationFamily>,
        seed: ConfigId,
        chart: BTreeMap<Site, Vec<f64>>,
    ) -> Result<Self> {
        let region = family
            .region(&seed)
            .ok_or_else(|| Error::BranchMismatch(format!("seed {seed} is not a branch")))?;
        if chart.len() != region.len() || !region.iter().all(|s| chart.contains_key(s)) {
            return Err(Error::NotInvertible("chart must cover exactly the seed region".into()));
        }
        let keys: BTreeSet<CoordKey> = chart.values().map(|x| coord_key(x)).collect();
        if keys.len() != chart.len() || chart.values().any(|x| x.len() != family.dim()) {
            return Err(Error::NotInvertible("chart is not injective".into()));
        }
        Ok(QuantumCoordinateSystem { family, seed, chart })
    }

    /// Chart equal to the lattice coordinates of the seed region.
    pub fn with_lattice_chart(family: Arc<IdentificationFamily>, seed: ConfigId) -> Result<Self> {
        let h = family.spacing();
        let region = family
            .region(&seed)
            .ok_or_else(|| Error::BranchMismatch(format!("seed {seed} is not a branch")))?;
        let chart = region.iter().map(|s| (s.clone(), coords(s, &h))).collect();
        Self::new(family, seed, chart)
    }

    pub fn family(&self) -> &Arc<IdentificationFamily> {
        &self.family
    }

    pub fn seed(&self) -> &ConfigId {
        &self.seed
    }

    pub fn seed_chart(&self) -> &BTreeMap<Site, Vec<f64>> {
        &self.chart
    }

    /// `x_v(p) = x_seed(phi_{v->seed}(p))`.
    pub fn coordinate(&self, v: &ConfigId, p: &Site) -> Result<Vec<f64>> {
        let m = self.family.map(v, &self.seed)?;
        let q = m
            .apply_site(p, &self.family.spacing())
            .ok_or_else(|| Error::BranchMismatch(format!("{p} has no image in the seed region")))?;
        self.chart
            .get(&q)
            .cloned()
            .ok_or_else(|| Error::BranchMismatch(format!("{p} is outside the region of {v}")))
    }

    /// The point with coordinate `x`.
    pub fn point(&self, x: &[f64]) -> Result<QCPoint> {
        let key = coord_key(x);
        let (site, _) = self
            .chart
            .iter()
            .find(|(_, y)| coord_key(y) == key)
            .ok_or_else(|| Error::NotInvertible(format!("{x:?} is not a chart value")))?;
        self.point_at_seed(site)
    }

    fn point_at_seed(&self, site: &Site) -> Result<QCPoint> {
        let h = self.family.spacing();
        let mut branch_points = BTreeMap::new();
        for v in self.family.branches() {
            let m = self.family.map(&self.seed, v)?;
            let p = m
                .apply_site(site, &h)
                .ok_or_else(|| Error::BranchMismatch(format!("{site} has no image in {v}")))?;
            branch_points.insert(v.clone(), p);
        }
        Ok(QCPoint {
            x: self.chart[site].clone(),
            branch_points,
        })
    }

    /// Every point of the system, in seed-site order.
    pub fn points(&self) -> Result<Vec<QCPoint>> {
        self.chart.keys().map(|s| self.point_at_seed(s)).collect()
    }

    /// The identified branch-point families, without coordinates.
    pub fn pairings(&self) -> Result<BTreeSet<BTreeMap<ConfigId, Site>>> {
        Ok(self.points()?.into_iter().map(|p| p.branch_points).collect())
    }
}

/// Relabels coordinates with `f` (acting on coordinate tuples, unit
/// spacing); the identification family is shared, not copied.
pub fn classical_coord_transform(qcs: &QuantumCoordinateSystem, f: &Diffeo) -> Result<QuantumCoordinateSystem> {
    let unit = vec![1.0; qcs.family.dim()];
    let chart = qcs
        .chart
        .iter()
        .map(|(s, x)| {
            f.map_point(x, &unit)
                .map(|y| (s.clone(), y))
                .map_err(|e| Error::NotInvertible(e.to_string()))
        })
        .collect::<Result<_>>()?;
    QuantumCoordinateSystem::new(Arc::clone(&qcs.family), qcs.seed.clone(), chart)
}

/// Conjugates the identification family by per-branch maps:
/// `phi'_{u->v} = phi_v o phi_{u->v} o phi_u^{-1}`, regions `phi_u(O_u)`,
/// charts `x'_u(p) = x_u(phi_u^{-1}(p))`. Branches without a map keep the
/// identity.
pub fn quantum_coord_transform(
    qcs: &QuantumCoordinateSystem,
    per_branch: &BTreeMap<ConfigId, Diffeo>,
) -> Result<QuantumCoordinateSystem> {
    let fam = &*qcs.family;
    let h = fam.spacing();
    let phi = |u: &ConfigId| per_branch.get(u).cloned().unwrap_or(Diffeo::Identity);
    let mut regions = BTreeMap::new();
    for (u, r) in &fam.regions {
        regions.insert(u.clone(), image_of(&IdentificationMap::Diffeo(phi(u)), r, &h)?);
    }
    let storage = match &fam.storage {
        Storage::Seeded { reference, seeds } => Storage::Seeded {
            reference: reference.clone(),
            seeds: seeds.iter().map(|(u, s)| (u.clone(), s.then(&phi(u)))).collect(),
        },
        Storage::Explicit { .. } => Storage::Explicit {
            maps: conjugated_pairs(fam, &phi, &regions, &h)?,
        },
    };
    let overrides = fam
        .overrides
        .keys()
        .map(|(u, v)| Ok(((u.clone(), v.clone()), conjugate(fam, u, v, &phi, &regions, &h)?)))
        .collect::<Result<_>>()?;
    let new_fam = IdentificationFamily {
        spacing: fam.spacing.clone(),
        regions,
        storage,
        overrides,
    };
    let seed_map = IdentificationMap::Diffeo(phi(&qcs.seed));
    let chart = qcs
        .chart
        .iter()
        .map(|(s, x)| {
            let t = seed_map
                .apply_site(s, &h)
                .ok_or_else(|| Error::NotInvertibleOnPatch(format!("{s} has no lattice image")))?;
            Ok((t, x.clone()))
        })
        .collect::<Result<_>>()?;
    QuantumCoordinateSystem::new(Arc::new(new_fam), qcs.seed.clone(), chart)
}

fn conjugate(
    fam: &IdentificationFamily,
    u: &ConfigId,
    v: &ConfigId,
    phi: &impl Fn(&ConfigId) -> Diffeo,
    new_regions: &BTreeMap<ConfigId, BTreeSet<Site>>,
    h: &[f64],
) -> Result<IdentificationMap> {
    let inv_u = IdentificationMap::Diffeo(phi(u).inverse());
    let old = fam.map(u, v)?;
    let fwd_v = IdentificationMap::Diffeo(phi(v));
    let first = inv_u.then(&old, &new_regions[u], h);
    Ok(first.then(&fwd_v, &new_regions[u], h))
}

fn conjugated_pairs(
    fam: &IdentificationFamily,
    phi: &impl Fn(&ConfigId) -> Diffeo,
    new_regions: &BTreeMap<ConfigId, BTreeSet<Site>>,
    h: &[f64],
) -> Result<BTreeMap<(ConfigId, ConfigId), IdentificationMap>> {
    let mut out = BTreeMap::new();
    for u in fam.branches() {
        for v in fam.branches() {
            out.insert((u.clone(), v.clone()), conjugate(fam, u, v, phi, new_regions, h)?);
        }
    }
    Ok(out)
}

/// Maps every branch of `state` onto branch `target` through the
/// identification maps, so that identified points coincide.
pub fn to_coincidence(
    state: &ExtendedAState,
    qcs: &QuantumCoordinateSystem,
    target: &ConfigId,
) -> Result<(RestrictedQD, ExtendedAState)> {
    let fam = &qcs.family;
    if !fam.has_branch(target) {
        return Err(Error::BranchMismatch(format!("{target} is not a branch of the system")));
    }
    let mut maps = BTreeMap::new();
    for u in state.ids() {
        if !fam.has_branch(u) {
            return Err(Error::BranchMismatch(format!("state branch {u} is not in the system")));
        }
        let IdentificationMap::Diffeo(d) = fam.map(u, target)? else {
            return Err(Error::BranchMismatch(format!(
                "identification {u} -> {target} is a site table, not a diffeomorphism"
            )));
        };
        maps.insert(u.clone(), d);
    }
    let qd = RestrictedQD::from_maps(maps);
    let out = apply_restricted(&qd, state)?;
    Ok((qd, out))
}

/// Sites of each branch support not covered by any system's region.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub uncovered: Vec<(ConfigId, Site)>,
}

impl CoverageReport {
    pub fn is_clean(&self) -> bool {
        self.uncovered.is_empty()
    }
}

/// Checks that the regions of `atlas` jointly cover every branch support.
pub fn check_atlas(
    atlas: &[QuantumCoordinateSystem],
    supports: &BTreeMap<ConfigId, LatticePatch>,
) -> CoverageReport {
    let mut report = CoverageReport::default();
    for (u, patch) in supports {
        for s in patch.sites() {
            let covered = atlas
                .iter()
                .any(|q| q.family.region(u).is_some_and(|r| r.contains(&s)));
            if !covered {
                report.uncovered.push((u.clone(), s));
            }
        }
    }
    report
}

/// One single-branch system per support, each covering its whole branch.
pub fn trivial_atlas(supports: &BTreeMap<ConfigId, LatticePatch>) -> Result<Vec<QuantumCoordinateSystem>> {
    supports
        .iter()
        .map(|(u, patch)| {
            let fam = IdentificationFamily::seeded(
                patch.spacing().to_vec(),
                patch.site_set(),
                BTreeMap::from([(u.clone(), Diffeo::Identity)]),
            )?;
            QuantumCoordinateSystem::with_lattice_chart(Arc::new(fam), u.clone())
        })
        .collect()
}
