//! Classical configurations: particle paths on a time grid and field
//! configurations on lattice patches.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::frame::is_lorentzian;
use crate::geometry::tensor::{TensorField, Variance};
use crate::lattice::{LatticePatch, PositionLattice, Site, Support, TimeSupport};
use crate::numerics::canonical_bits;

/// Identity of a configuration inside superpositions and catalogs.
///
/// Ids derived from content are `cfg:<sha256>`; hand-assigned labels are
/// also accepted (bundle corpora name their base points).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigId(String);

impl ConfigId {
    pub fn new(label: impl Into<String>) -> Self {
        ConfigId(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Deserialize)]
struct RawPath {
    support: TimeSupport,
    lattice: PositionLattice,
    #[serde(with = "crate::serde_util::pairs")]
    values: BTreeMap<i64, i64>,
}

/// A particle history: one position index per time index of the support.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPath")]
pub struct PathConfig {
    support: TimeSupport,
    lattice: PositionLattice,
    #[serde(with = "crate::serde_util::pairs")]
    values: BTreeMap<i64, i64>,
}

impl TryFrom<RawPath> for PathConfig {
    type Error = Error;
    fn try_from(r: RawPath) -> Result<Self> {
        PathConfig::new(r.support, r.lattice, r.values)
    }
}

impl PathConfig {
    pub fn new(
        support: TimeSupport,
        lattice: PositionLattice,
        values: BTreeMap<i64, i64>,
    ) -> Result<Self> {
        if support.len() != values.len() || !support.indices().all(|k| values.contains_key(&k)) {
            return Err(Error::InvalidConfig(
                "path values must cover exactly the support indices".into(),
            ));
        }
        if let Some((k, j)) = values.iter().find(|(_, j)| !lattice.contains(**j)) {
            return Err(Error::InvalidConfig(format!(
                "position index {j} at time index {k} is off the lattice"
            )));
        }
        Ok(PathConfig {
            support,
            lattice,
            values,
        })
    }

    /// Path on a single interval starting at index `start`.
    pub fn from_positions(
        origin: num_rational::Rational64,
        step: num_rational::Rational64,
        start: i64,
        lattice: PositionLattice,
        positions: &[i64],
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidConfig("a path needs at least one site".into()));
        }
        let support =
            TimeSupport::interval(origin, step, start, start + positions.len() as i64 - 1)?;
        let values = positions
            .iter()
            .enumerate()
            .map(|(i, j)| (start + i as i64, *j))
            .collect();
        Self::new(support, lattice, values)
    }

    pub fn support(&self) -> &TimeSupport {
        &self.support
    }

    pub fn lattice(&self) -> &PositionLattice {
        &self.lattice
    }

    pub fn values(&self) -> &BTreeMap<i64, i64> {
        &self.values
    }

    pub fn index_at(&self, k: i64) -> Option<i64> {
        self.values.get(&k).copied()
    }

    pub fn position_at(&self, k: i64) -> Option<f64> {
        self.index_at(k).map(|j| self.lattice.position(j))
    }

    pub fn restrict(&self, s: &TimeSupport) -> Result<PathConfig> {
        if !s.is_subset_of(&self.support) {
            return Err(Error::SupportNotContained);
        }
        let values = s.indices().map(|k| (k, self.values[&k])).collect();
        Ok(PathConfig {
            support: s.clone(),
            lattice: self.lattice,
            values,
        })
    }
}

#[derive(Deserialize)]
struct RawField {
    support: LatticePatch,
    metric: TensorField,
    #[serde(default)]
    matter: BTreeMap<String, TensorField>,
}

/// Metric plus named matter tensors on every site of a lattice patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawField")]
pub struct FieldConfig {
    support: LatticePatch,
    metric: TensorField,
    matter: BTreeMap<String, TensorField>,
}

impl TryFrom<RawField> for FieldConfig {
    type Error = Error;
    fn try_from(r: RawField) -> Result<Self> {
        FieldConfig::new(r.support, r.metric, r.matter)
    }
}

fn check_covers(name: &str, f: &TensorField, sites: &BTreeSet<Site>, dim: usize) -> Result<()> {
    if f.dim() != dim {
        return Err(Error::InvalidConfig(format!("field `{name}` has dimension {}", f.dim())));
    }
    if f.values().len() != sites.len() || !f.sites().all(|s| sites.contains(s)) {
        return Err(Error::InvalidConfig(format!(
            "field `{name}` must be defined on exactly the support sites"
        )));
    }
    Ok(())
}

impl FieldConfig {
    pub fn new(
        support: LatticePatch,
        metric: TensorField,
        matter: BTreeMap<String, TensorField>,
    ) -> Result<Self> {
        let sites = support.site_set();
        let dim = support.dim();
        if metric.slots() != [Variance::Down, Variance::Down] {
            return Err(Error::InvalidConfig("metric must be a covariant rank-2 field".into()));
        }
        check_covers("metric", &metric, &sites, dim)?;
        for s in &sites {
            let g = metric.matrix_at(s).expect("coverage checked");
            if g != g.transpose() {
                return Err(Error::InvalidConfig(format!("metric not symmetric at {s}")));
            }
            if !is_lorentzian(&g) {
                return Err(Error::WrongSignature(format!("metric not Lorentzian at {s}")));
            }
        }
        for (name, f) in &matter {
            check_covers(name, f, &sites, dim)?;
        }
        Ok(FieldConfig {
            support,
            metric,
            matter,
        })
    }

    /// Builds a configuration whose metric is `f` evaluated at each site's
    /// coordinates.
    pub fn from_metric_fn(
        support: LatticePatch,
        f: impl Fn(&[f64]) -> nalgebra::DMatrix<f64>,
    ) -> Result<Self> {
        let metric = TensorField::metric_from_fn(support.dim(), support.sites(), |s| {
            f(&support.coords(s))
        });
        Self::new(support, metric, BTreeMap::new())
    }

    pub fn with_matter(mut self, name: impl Into<String>, f: TensorField) -> Result<Self> {
        let name = name.into();
        check_covers(&name, &f, &self.support.site_set(), self.support.dim())?;
        self.matter.insert(name, f);
        Ok(self)
    }

    pub fn support(&self) -> &LatticePatch {
        &self.support
    }

    pub fn metric(&self) -> &TensorField {
        &self.metric
    }

    pub fn matter(&self) -> &BTreeMap<String, TensorField> {
        &self.matter
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn restrict(&self, s: &LatticePatch) -> Result<FieldConfig> {
        if !s.is_subset_of(&self.support) {
            return Err(Error::SupportNotContained);
        }
        let sites = s.site_set();
        let cut = |f: &TensorField| f.restricted(&sites).expect("subset checked");
        Ok(FieldConfig {
            support: s.clone(),
            metric: cut(&self.metric),
            matter: self.matter.iter().map(|(k, f)| (k.clone(), cut(f))).collect(),
        })
    }

    /// Assembles a configuration from parts that are already known to be
    /// consistent (used by pullbacks, which preserve every invariant).
    pub(crate) fn from_parts_unchecked(
        support: LatticePatch,
        metric: TensorField,
        matter: BTreeMap<String, TensorField>,
    ) -> Self {
        FieldConfig {
            support,
            metric,
            matter,
        }
    }
}

/// A classical history of either kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Configuration {
    Path(PathConfig),
    Field(FieldConfig),
}

impl From<PathConfig> for Configuration {
    fn from(p: PathConfig) -> Self {
        Configuration::Path(p)
    }
}

impl From<FieldConfig> for Configuration {
    fn from(f: FieldConfig) -> Self {
        Configuration::Field(f)
    }
}

struct IdHasher(Sha256);

impl IdHasher {
    fn tag(&mut self, t: &str) {
        self.0.update((t.len() as u64).to_le_bytes());
        self.0.update(t.as_bytes());
    }

    fn int(&mut self, x: i64) {
        self.0.update(x.to_le_bytes());
    }

    fn float(&mut self, x: f64) {
        self.0.update(canonical_bits(x).to_le_bytes());
    }

    fn rational(&mut self, r: num_rational::Rational64) {
        self.int(*r.numer());
        self.int(*r.denom());
    }

    fn tensor(&mut self, f: &TensorField) {
        self.int(f.dim() as i64);
        for v in f.slots() {
            self.tag(match v {
                Variance::Up => "up",
                Variance::Down => "down",
            });
        }
        self.int(f.values().len() as i64);
        for (s, comps) in f.values() {
            for k in &s.0 {
                self.int(*k);
            }
            for x in comps {
                self.float(*x);
            }
        }
    }
}

impl Configuration {
    /// Content-derived identity. Equal configurations (with `-0.0` and `0.0`
    /// identified) get equal ids.
    pub fn id(&self) -> ConfigId {
        let mut h = IdHasher(Sha256::new());
        match self {
            Configuration::Path(p) => {
                h.tag("path");
                h.rational(p.support.origin());
                h.rational(p.support.step());
                for [a, b] in p.support.intervals() {
                    h.int(*a);
                    h.int(*b);
                }
                h.tag("lattice");
                h.rational(p.lattice.origin);
                h.rational(p.lattice.step);
                h.int(p.lattice.count as i64);
                for (k, j) in &p.values {
                    h.int(*k);
                    h.int(*j);
                }
            }
            Configuration::Field(f) => {
                h.tag("field");
                h.int(f.support.dim() as i64);
                for s in f.support.spacing() {
                    h.rational(*s);
                }
                // Two patches with the same sites must hash alike however
                // their boxes are split, so the site set is hashed, not boxes.
                h.tensor(&f.metric);
                for (name, m) in &f.matter {
                    h.tag(name);
                    h.tensor(m);
                }
            }
        }
        ConfigId(format!("cfg:{}", hex::encode(h.0.finalize())))
    }

    pub fn support(&self) -> Support {
        match self {
            Configuration::Path(p) => Support::Time(p.support.clone()),
            Configuration::Field(f) => Support::Lattice(f.support.clone()),
        }
    }

    pub fn as_path(&self) -> Option<&PathConfig> {
        match self {
            Configuration::Path(p) => Some(p),
            Configuration::Field(_) => None,
        }
    }

    pub fn as_field(&self) -> Option<&FieldConfig> {
        match self {
            Configuration::Field(f) => Some(f),
            Configuration::Path(_) => None,
        }
    }

    pub fn same_kind(&self, other: &Configuration) -> bool {
        matches!(
            (self, other),
            (Configuration::Path(_), Configuration::Path(_))
                | (Configuration::Field(_), Configuration::Field(_))
        )
    }

    /// Sites of the support; path sites are one-dimensional `[k]`.
    pub fn sites(&self) -> Vec<Site> {
        match self {
            Configuration::Path(p) => p.support.indices().map(|k| Site(vec![k])).collect(),
            Configuration::Field(f) => f.support.sites(),
        }
    }

    pub fn restrict(&self, s: &Support) -> Result<Configuration> {
        match (self, s) {
            (Configuration::Path(p), Support::Time(t)) => p.restrict(t).map(Configuration::Path),
            (Configuration::Field(f), Support::Lattice(l)) => {
                f.restrict(l).map(Configuration::Field)
            }
            _ => Err(Error::KindMismatch),
        }
    }
}

pub fn restrict(v: &Configuration, s: &Support) -> Result<Configuration> {
    v.restrict(s)
}

/// `u` is contained in `v`: its support lies inside `v`'s and it agrees
/// with `v` there exactly.
pub fn contains(u: &Configuration, v: &Configuration) -> Result<bool> {
    match (u, v) {
        (Configuration::Path(a), Configuration::Path(b)) => Ok(a.lattice == b.lattice
            && a.support.is_subset_of(&b.support)
            && a.values.iter().all(|(k, j)| b.values.get(k) == Some(j))),
        (Configuration::Field(a), Configuration::Field(b)) => {
            if !a.support.is_subset_of(&b.support)
                || a.matter.keys().ne(b.matter.keys())
            {
                return Ok(false);
            }
            let agrees = |x: &TensorField, y: &TensorField| {
                x.same_shape(y) && x.values().iter().all(|(s, c)| y.get(s) == Some(c.as_slice()))
            };
            Ok(agrees(&a.metric, &b.metric)
                && a.matter.iter().all(|(k, f)| agrees(f, &b.matter[k])))
        }
        _ => Err(Error::KindMismatch),
    }
}

/// The containment bracket: 1 when `u` is contained in `v`, else 0.
pub fn bracket(u: &Configuration, v: &Configuration) -> Result<u8> {
    contains(u, v).map(u8::from)
}

/// A registered configuration with its declared relations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub config: Configuration,
    /// Diffeo-equivalence class label; equal labels mean `u ~ v`.
    #[serde(default)]
    pub class: Option<String>,
    /// Ids of configurations this one is declared to be contained in.
    #[serde(default)]
    pub parents: Vec<ConfigId>,
}

/// A finite set of configurations keyed by id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    #[serde(with = "crate::serde_util::pairs")]
    entries: BTreeMap<ConfigId, CatalogEntry>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, config: Configuration) -> ConfigId {
        let id = config.id();
        self.entries.entry(id.clone()).or_insert(CatalogEntry {
            config,
            class: None,
            parents: Vec::new(),
        });
        id
    }

    pub fn register_tagged(
        &mut self,
        config: Configuration,
        class: Option<String>,
        parents: Vec<ConfigId>,
    ) -> ConfigId {
        let id = config.id();
        self.entries.insert(
            id.clone(),
            CatalogEntry {
                config,
                class,
                parents,
            },
        );
        id
    }

    pub fn get(&self, id: &ConfigId) -> Option<&Configuration> {
        self.entries.get(id).map(|e| &e.config)
    }

    pub fn entry(&self, id: &ConfigId) -> Option<&CatalogEntry> {
        self.entries.get(id)
    }

    pub fn contains_id(&self, id: &ConfigId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &ConfigId> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn equivalent(&self, a: &ConfigId, b: &ConfigId) -> bool {
        a == b
            || matches!(
                (self.entries.get(a), self.entries.get(b)),
                (Some(x), Some(y)) if x.class.is_some() && x.class == y.class
            )
    }

    /// All ordered pairs `(u, v)` with `u` contained in `v`, computed from
    /// configuration data.
    pub fn containment_pairs(&self) -> Vec<(ConfigId, ConfigId)> {
        let mut out = Vec::new();
        for (a, ea) in &self.entries {
            for (b, eb) in &self.entries {
                if contains(&ea.config, &eb.config) == Ok(true) {
                    out.push((a.clone(), b.clone()));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::IndexBox;
    use num_rational::Rational64;

    fn r(n: i64) -> Rational64 {
        Rational64::from_integer(n)
    }

    fn lat() -> PositionLattice {
        PositionLattice::new(r(-2), r(1), 5).unwrap()
    }

    fn path(start: i64, ys: &[i64]) -> Configuration {
        PathConfig::from_positions(r(0), Rational64::new(1, 4), start, lat(), ys)
            .unwrap()
            .into()
    }

    fn tsupport(a: i64, b: i64) -> Support {
        Support::Time(TimeSupport::interval(r(0), Rational64::new(1, 4), a, b).unwrap())
    }

    #[test]
    fn restriction_identity_and_subset() {
        let v = path(0, &[0, 1, 2, 3, 4, 2]);
        assert_eq!(v.restrict(&v.support()).unwrap(), v);
        let u = v.restrict(&tsupport(2, 3)).unwrap();
        assert_eq!(u.as_path().unwrap().values(), &BTreeMap::from([(2, 2), (3, 3)]));
        assert_eq!(v.restrict(&tsupport(4, 9)), Err(Error::SupportNotContained));
    }

    #[test]
    fn bracket_is_asymmetric() {
        let v = path(0, &[0, 1, 2, 3]);
        let u = v.restrict(&tsupport(1, 2)).unwrap();
        assert_eq!(bracket(&u, &v), Ok(1));
        assert_eq!(bracket(&v, &u), Ok(0));
        assert_eq!(bracket(&u, &u), Ok(1));
        let changed = path(1, &[1, 4]);
        assert_eq!(bracket(&changed, &v), Ok(0));
        let disjoint = path(7, &[0, 0]);
        assert_eq!(bracket(&disjoint, &v), Ok(0));
    }

    fn eta_field(b: IndexBox) -> Configuration {
        let patch = LatticePatch::uniform_box(r(1), b).unwrap();
        FieldConfig::from_metric_fn(patch, |_| crate::geometry::frame::minkowski(2))
            .unwrap()
            .into()
    }

    #[test]
    fn kinds_do_not_mix() {
        let p = path(0, &[0]);
        let f = eta_field(IndexBox::new(vec![0, 0], vec![1, 1]));
        assert_eq!(contains(&p, &f), Err(Error::KindMismatch));
        assert_eq!(bracket(&f, &p), Err(Error::KindMismatch));
    }

    #[test]
    fn field_restriction_is_contained() {
        let v = eta_field(IndexBox::new(vec![0, 0], vec![3, 3]));
        let s = Support::Lattice(
            LatticePatch::uniform_box(r(1), IndexBox::new(vec![1, 1], vec![2, 3])).unwrap(),
        );
        let u = v.restrict(&s).unwrap();
        assert_eq!(contains(&u, &v), Ok(true));
        assert_eq!(contains(&v, &u), Ok(false));
    }

    #[test]
    fn non_lorentzian_metric_rejected() {
        let patch =
            LatticePatch::uniform_box(r(1), IndexBox::new(vec![0, 0], vec![1, 1])).unwrap();
        let err = FieldConfig::from_metric_fn(patch, |_| nalgebra::DMatrix::identity(2, 2));
        assert!(matches!(err, Err(Error::WrongSignature(_))));
    }

    #[test]
    fn ids_survive_json_round_trip() {
        for c in [path(3, &[1, 2, 0]), eta_field(IndexBox::new(vec![0, 0], vec![2, 1]))] {
            let json = serde_json::to_string(&c).unwrap();
            let back: Configuration = serde_json::from_str(&json).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.id(), c.id());
        }
    }

    #[test]
    fn invalid_path_json_rejected() {
        let json = r#"{"path":{"support":{"origin":[0,1],"step":[1,1],"intervals":[[0,1]]},
            "lattice":{"origin":[0,1],"step":[1,1],"count":3},"values":[[0,1]]}}"#;
        assert!(serde_json::from_str::<Configuration>(json).is_err());
    }
}
