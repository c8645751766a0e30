//! Finite superpositions of configurations, with optional per-site
//! coefficient sets, and the project / exp-int / amplitude pipeline.

use std::collections::BTreeMap;

use num_complex::Complex64;
use num_rational::Rational64;
use rayon::prelude::*;
use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::configuration::{contains, ConfigId, Configuration};
use crate::error::{Error, Result};
use crate::geometry::tensor::TensorField;
use crate::lattice::{rational_to_f64, LatticePatch, Site, Support, TimeSupport};
use crate::numerics::{ComplexSum, CompensatedSum};
use crate::path_integral::Potential;

/// Which support sites carry a coefficient value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffLayout {
    /// One value per support site.
    PerSite,
    /// One value per site except the last of each time interval; the value
    /// at `k` may depend on the configuration at `k` and `k + 1`.
    LeftPoint,
}

/// Sites of `config` that carry a coefficient under `layout`.
pub fn sample_sites(config: &Configuration, layout: CoeffLayout) -> Vec<Site> {
    match (config, layout) {
        (Configuration::Path(p), CoeffLayout::LeftPoint) => left_point_sites(p.support()),
        _ => config.sites(),
    }
}

fn left_point_sites(t: &TimeSupport) -> Vec<Site> {
    t.indices()
        .filter(|k| !t.is_last_in_interval(*k))
        .map(|k| Site(vec![k]))
        .collect()
}

/// A named per-site quantity attached to one term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoeffSet {
    pub name: String,
    pub layout: CoeffLayout,
    pub field: TensorField,
}

impl CoeffSet {
    pub fn new(name: impl Into<String>, layout: CoeffLayout, field: TensorField) -> Self {
        CoeffSet {
            name: name.into(),
            layout,
            field,
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.field.is_scalar()
    }

    /// Restriction to the sample sites of a contained configuration.
    pub fn restricted_to(&self, target: &Configuration) -> Option<CoeffSet> {
        let sites = sample_sites(target, self.layout);
        Some(CoeffSet {
            name: self.name.clone(),
            layout: self.layout,
            field: self.field.restricted(&sites)?,
        })
    }
}

/// Per-term payload of a superposition.
pub trait Coefficient: Clone + PartialEq + Send + Sync {
    fn check(&self, config: &Configuration) -> Result<()>;
}

/// Marker payload for plain extended states.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoCoeff;

impl Coefficient for NoCoeff {
    fn check(&self, _: &Configuration) -> Result<()> {
        Ok(())
    }
}

impl Coefficient for CoeffSet {
    fn check(&self, config: &Configuration) -> Result<()> {
        let expected = sample_sites(config, self.layout);
        if self.field.values().len() != expected.len()
            || !expected.iter().all(|s| self.field.get(s).is_some())
        {
            return Err(Error::InvalidSupport(format!(
                "coefficient set `{}` does not match the configuration support",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term<C> {
    pub config: Configuration,
    pub weight: Complex64,
    pub coeff: C,
}

/// A finite superposition `sum_u c_u |u]` keyed by configuration id.
#[derive(Clone, Debug, PartialEq)]
pub struct Superposition<C> {
    terms: BTreeMap<ConfigId, Term<C>>,
}

pub type ExtendedState = Superposition<NoCoeff>;
pub type ExtendedAState = Superposition<CoeffSet>;

impl<C> Default for Superposition<C> {
    fn default() -> Self {
        Superposition {
            terms: BTreeMap::new(),
        }
    }
}

fn check_weight(w: Complex64) -> Result<()> {
    if w.re.is_finite() && w.im.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteWeight(format!("{w}")))
    }
}

impl<C: Coefficient> Superposition<C> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `weight |config]` under the configuration's content id. Adding
    /// to an existing term sums the weights; its coefficients must agree.
    pub fn insert(&mut self, config: Configuration, weight: Complex64, coeff: C) -> Result<ConfigId> {
        let id = config.id();
        self.insert_with_id(id.clone(), config, weight, coeff)?;
        Ok(id)
    }

    /// As [`insert`](Self::insert) but under a caller-chosen id.
    pub fn insert_with_id(
        &mut self,
        id: ConfigId,
        config: Configuration,
        weight: Complex64,
        coeff: C,
    ) -> Result<()> {
        check_weight(weight)?;
        coeff.check(&config)?;
        match self.terms.get_mut(&id) {
            Some(t) => {
                if t.coeff != coeff {
                    return Err(Error::CoeffConflict);
                }
                t.weight += weight;
            }
            None => {
                self.terms.insert(id, Term { config, weight, coeff });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&ConfigId, &Term<C>)> {
        self.terms.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ConfigId> {
        self.terms.keys()
    }

    pub fn get(&self, id: &ConfigId) -> Option<&Term<C>> {
        self.terms.get(id)
    }

    pub fn weight(&self, id: &ConfigId) -> Option<Complex64> {
        self.terms.get(id).map(|t| t.weight)
    }

    /// Removes zero-weight terms.
    pub fn normalize(mut self) -> Self {
        self.terms.retain(|_, t| t.weight != Complex64::new(0.0, 0.0));
        self
    }

    pub fn scaled(&self, alpha: Complex64) -> Result<Self> {
        check_weight(alpha)?;
        let mut out = self.clone();
        for t in out.terms.values_mut() {
            t.weight *= alpha;
            check_weight(t.weight)?;
        }
        Ok(out)
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: Complex64, other: &Self, beta: Complex64) -> Result<Self> {
        let mut out = self.scaled(alpha)?;
        for (id, t) in &other.terms {
            out.insert_with_id(id.clone(), t.config.clone(), t.weight * beta, t.coeff.clone())?;
        }
        Ok(out)
    }

    /// Keeps only the terms for which `keep` holds.
    pub fn filtered(&self, mut keep: impl FnMut(&ConfigId, &Term<C>) -> bool) -> Self {
        Superposition {
            terms: self
                .terms
                .iter()
                .filter(|(id, t)| keep(id, t))
                .map(|(id, t)| (id.clone(), t.clone()))
                .collect(),
        }
    }

    pub fn total_norm_sqr(&self) -> f64 {
        self.terms.values().map(|t| t.weight.norm_sqr()).collect::<CompensatedSum>().value()
    }

    fn from_map(terms: BTreeMap<ConfigId, Term<C>>) -> Self {
        Superposition { terms }
    }
}

impl ExtendedAState {
    /// Forgets the coefficient sets, keeping weights.
    pub fn drop_coeffs(&self) -> ExtendedState {
        Superposition::from_map(
            self.terms
                .iter()
                .map(|(id, t)| {
                    (
                        id.clone(),
                        Term {
                            config: t.config.clone(),
                            weight: t.weight,
                            coeff: NoCoeff,
                        },
                    )
                })
                .collect(),
        )
    }
}

impl ExtendedState {
    pub fn from_configs(items: impl IntoIterator<Item = (Configuration, Complex64)>) -> Result<Self> {
        let mut s = Self::new();
        for (c, w) in items {
            s.insert(c, w, NoCoeff)?;
        }
        Ok(s)
    }
}

impl<C: Serialize> Serialize for Superposition<C> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.terms.iter())
    }
}

impl<'de, C: Coefficient + Deserialize<'de>> Deserialize<'de> for Superposition<C> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let items: Vec<(ConfigId, Term<C>)> = Vec::deserialize(d)?;
        let n = items.len();
        let mut out = Superposition::new();
        for (id, t) in items {
            check_weight(t.weight).map_err(serde::de::Error::custom)?;
            t.coeff.check(&t.config).map_err(serde::de::Error::custom)?;
            out.terms.insert(id, t);
        }
        if out.terms.len() != n {
            return Err(serde::de::Error::custom("duplicate configuration id"));
        }
        Ok(out)
    }
}

/// Condition imposed on the boundary sites of a field region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FieldCondition {
    Unconstrained,
    /// Metric components (row-major) equal at every boundary site.
    MetricEquals { components: Vec<f64> },
}

/// Boundary data selecting configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySpec {
    Path {
        t_i: Rational64,
        t_f: Rational64,
        #[serde(default)]
        y_i: Option<Rational64>,
        #[serde(default)]
        y_f: Option<Rational64>,
    },
    Field {
        region: LatticePatch,
        condition: FieldCondition,
    },
}

impl BoundarySpec {
    pub fn path(
        t_i: Rational64,
        t_f: Rational64,
        y_i: Option<Rational64>,
        y_f: Option<Rational64>,
    ) -> Result<Self> {
        let b = BoundarySpec::Path { t_i, t_f, y_i, y_f };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BoundarySpec::Path { t_i, t_f, .. } if t_i >= t_f => {
                Err(Error::InvalidBoundary(format!("t_i = {t_i} must precede t_f = {t_f}")))
            }
            BoundarySpec::Field { region, .. } if region.is_empty() => {
                Err(Error::InvalidBoundary("empty field region".into()))
            }
            _ => Ok(()),
        }
    }

    fn path_support(&self, like: &TimeSupport) -> Option<TimeSupport> {
        let BoundarySpec::Path { t_i, t_f, .. } = self else {
            return None;
        };
        let (a, b) = (like.index_of(*t_i)?, like.index_of(*t_f)?);
        TimeSupport::interval(like.origin(), like.step(), a, b).ok()
    }

    /// True when `config` is itself a full boundary-matching configuration.
    pub fn selects(&self, config: &Configuration) -> bool {
        match (self, config) {
            (BoundarySpec::Path { .. }, Configuration::Path(p)) => {
                self.path_support(p.support()).as_ref() == Some(p.support())
                    && self.endpoints_match(config)
            }
            (BoundarySpec::Field { region, .. }, Configuration::Field(f)) => {
                f.support().same_sites(region) && self.endpoints_match(config)
            }
            _ => false,
        }
    }

    fn endpoints_match(&self, config: &Configuration) -> bool {
        match (self, config) {
            (BoundarySpec::Path { t_i, t_f, y_i, y_f }, Configuration::Path(p)) => {
                let check = |t: &Rational64, y: &Option<Rational64>| match y {
                    None => true,
                    Some(y) => {
                        let k = p.support().index_of(*t);
                        let j = p.lattice().index_of(*y);
                        k.is_some() && j.is_some() && p.index_at(k.unwrap()) == j
                    }
                };
                check(t_i, y_i) && check(t_f, y_f)
            }
            (BoundarySpec::Field { region, condition }, Configuration::Field(f)) => {
                match condition {
                    FieldCondition::Unconstrained => true,
                    FieldCondition::MetricEquals { components } => region
                        .sites()
                        .iter()
                        .filter(|s| !region.is_interior(s))
                        .all(|s| f.metric().get(s) == Some(components.as_slice())),
                }
            }
            _ => false,
        }
    }

    /// The part of `config` on the boundary's support, when it exists and
    /// meets the boundary values.
    pub fn cut(&self, config: &Configuration) -> Option<Configuration> {
        let support = match (self, config) {
            (BoundarySpec::Path { .. }, Configuration::Path(p)) => {
                Support::Time(self.path_support(p.support())?)
            }
            (BoundarySpec::Field { region, .. }, Configuration::Field(_)) => {
                Support::Lattice(region.clone())
            }
            _ => return None,
        };
        let v = config.restrict(&support).ok()?;
        self.endpoints_match(&v).then_some(v)
    }
}

/// What to project onto.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectTarget {
    Configs(Vec<Configuration>),
    Supports(Vec<Support>),
    Boundary(BoundarySpec),
}

/// Projects an A-state onto target configurations.
///
/// Each target keeps the coefficients of the terms containing it,
/// restricted to its own support. When several terms contain a target
/// their weights add, provided the restricted coefficients agree.
pub fn project(state: &ExtendedAState, target: &ProjectTarget) -> Result<ExtendedAState> {
    // target id -> (target config, containing term ids)
    let mut groups: BTreeMap<ConfigId, (Configuration, Vec<&ConfigId>)> = BTreeMap::new();
    match target {
        ProjectTarget::Configs(configs) => {
            for v in configs {
                let parents: Vec<&ConfigId> = state
                    .terms
                    .iter()
                    .filter(|(_, t)| v.same_kind(&t.config) && contains(v, &t.config) == Ok(true))
                    .map(|(id, _)| id)
                    .collect();
                if parents.is_empty() {
                    return Err(Error::NotContained);
                }
                groups.insert(v.id(), (v.clone(), parents));
            }
        }
        ProjectTarget::Supports(supports) => {
            for s in supports {
                let mut hit = false;
                for (id, t) in &state.terms {
                    // A term containing the restriction of another term to
                    // `s` restricts to that same configuration, so grouping
                    // restrictions by id recovers every containing term.
                    if let Ok(v) = t.config.restrict(s) {
                        hit = true;
                        groups.entry(v.id()).or_insert_with(|| (v, vec![])).1.push(id);
                    }
                }
                if !hit {
                    return Err(Error::NotContained);
                }
            }
            for (_, parents) in groups.values_mut() {
                parents.sort();
                parents.dedup();
            }
        }
        ProjectTarget::Boundary(b) => {
            b.validate()?;
            for (id, t) in &state.terms {
                if let Some(v) = b.cut(&t.config) {
                    groups.entry(v.id()).or_insert_with(|| (v, vec![])).1.push(id);
                }
            }
            if groups.is_empty() {
                return Err(Error::NotContained);
            }
        }
    }
    let mut out = BTreeMap::new();
    for (vid, (v, parents)) in groups {
        let mut weight = ComplexSum::new();
        let mut coeff: Option<CoeffSet> = None;
        for pid in parents {
            let t = &state.terms[pid];
            let c = t.coeff.restricted_to(&v).ok_or(Error::NotContained)?;
            match &coeff {
                Some(prev) if *prev != c => return Err(Error::Ambiguous),
                Some(_) => {}
                None => coeff = Some(c),
            }
            weight.add(t.weight);
        }
        out.insert(
            vid,
            Term {
                config: v,
                weight: weight.value(),
                coeff: coeff.expect("at least one parent"),
            },
        );
    }
    Ok(Superposition::from_map(out))
}

/// The `1/Z` factor applied by [`exp_int`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Normalization {
    Unit,
    Constant { re: f64, im: f64 },
    /// Time-sliced particle measure: per interval of `n` steps,
    /// `(m / (2 pi i hbar dt))^{n/2} dy^{n-1}`.
    TimeSliced { mass: f64, dy: f64 },
}

impl Normalization {
    fn factor(&self, config: &Configuration, hbar: f64) -> Result<Complex64> {
        match self {
            Normalization::Unit => Ok(Complex64::new(1.0, 0.0)),
            Normalization::Constant { re, im } => Ok(Complex64::new(*re, *im)),
            Normalization::TimeSliced { mass, dy } => {
                let Configuration::Path(p) = config else {
                    return Err(Error::InvalidModel(
                        "time-sliced normalisation applies to paths only".into(),
                    ));
                };
                let dt = rational_to_f64(p.support().step());
                let c = Complex64::from_polar(
                    (mass / (2.0 * std::f64::consts::PI * hbar * dt)).sqrt(),
                    -std::f64::consts::FRAC_PI_4,
                );
                let mut z = Complex64::new(1.0, 0.0);
                for [a, b] in p.support().intervals() {
                    let n = (b - a) as i32;
                    if n > 0 {
                        z *= c.powi(n) * dy.powi(n - 1);
                    }
                }
                Ok(z)
            }
        }
    }
}

fn cell_measure(config: &Configuration) -> f64 {
    match config {
        Configuration::Path(p) => rational_to_f64(p.support().step()),
        Configuration::Field(f) => f.support().spacing_f64().iter().product(),
    }
}

/// Replaces each coefficient set of scalar Lagrangian samples by the weight
/// factor `exp(i S / hbar) / Z`, with `S` the sum of samples times the cell
/// measure.
pub fn exp_int(state: &ExtendedAState, hbar: f64, norm: &Normalization) -> Result<ExtendedState> {
    if state.terms.values().any(|t| !t.coeff.is_scalar()) {
        return Err(Error::NonScalarCoeff);
    }
    let terms: Vec<(ConfigId, Term<NoCoeff>)> = state
        .terms
        .par_iter()
        .map(|(id, t)| {
            let s = t
                .coeff
                .field
                .values()
                .values()
                .map(|v| v[0])
                .collect::<CompensatedSum>()
                .value()
                * cell_measure(&t.config);
            let w = t.weight * norm.factor(&t.config, hbar)? * Complex64::from_polar(1.0, s / hbar);
            check_weight(w)?;
            Ok((
                id.clone(),
                Term {
                    config: t.config.clone(),
                    weight: w,
                    coeff: NoCoeff,
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(Superposition::from_map(terms.into_iter().collect()))
}

/// Sum of the weights of every term that is a full boundary-matching
/// configuration for `selector`.
pub fn amplitude<C: Coefficient>(state: &Superposition<C>, selector: &BoundarySpec) -> Result<Complex64> {
    selector.validate()?;
    let mut acc = ComplexSum::new();
    let mut any = false;
    for t in state.terms.values() {
        if selector.selects(&t.config) {
            acc.add(t.weight);
            any = true;
        }
    }
    if !any {
        return Err(Error::EmptySelection);
    }
    Ok(acc.value())
}

/// A per-site quantity computable from stored configuration data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Quantity {
    /// `L = m v^2 / 2 - V(y)` with forward-difference velocity.
    Lagrangian { mass: f64, potential: Potential },
    Metric,
    Matter { name: String },
}

impl Quantity {
    /// Parses `L`, `g` / `metric`, or `matter:<name>`; the Lagrangian needs
    /// particle data.
    pub fn parse(name: &str, particle: Option<(f64, Potential)>) -> Result<Quantity> {
        match (name, particle) {
            ("L" | "lagrangian", Some((mass, potential))) => {
                Ok(Quantity::Lagrangian { mass, potential })
            }
            ("g" | "metric", _) => Ok(Quantity::Metric),
            _ => match name.strip_prefix("matter:") {
                Some(m) if !m.is_empty() => Ok(Quantity::Matter { name: m.to_string() }),
                _ => Err(Error::UnknownQuantity(name.to_string())),
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            Quantity::Lagrangian { .. } => "L".into(),
            Quantity::Metric => "g".into(),
            Quantity::Matter { name } => format!("matter:{name}"),
        }
    }

    fn evaluate(&self, config: &Configuration) -> Result<CoeffSet> {
        match (self, config) {
            (Quantity::Lagrangian { mass, potential }, Configuration::Path(p)) => {
                let dt = rational_to_f64(p.support().step());
                let values = left_point_sites(p.support())
                    .into_iter()
                    .map(|s| {
                        let k = s.0[0];
                        let y0 = p.position_at(k).expect("support index");
                        let y1 = p.position_at(k + 1).expect("interior index");
                        let v = (y1 - y0) / dt;
                        (s, 0.5 * mass * v * v - potential.value(*mass, y0))
                    })
                    .collect();
                Ok(CoeffSet::new(self.label(), CoeffLayout::LeftPoint, TensorField::scalar(1, values)))
            }
            (Quantity::Metric, Configuration::Field(f)) => {
                Ok(CoeffSet::new(self.label(), CoeffLayout::PerSite, f.metric().clone()))
            }
            (Quantity::Matter { name }, Configuration::Field(f)) => f
                .matter()
                .get(name)
                .map(|m| CoeffSet::new(self.label(), CoeffLayout::PerSite, m.clone()))
                .ok_or_else(|| Error::UnknownQuantity(self.label())),
            _ => Err(Error::UnknownQuantity(format!(
                "{} is not defined for this configuration kind",
                self.label()
            ))),
        }
    }
}

/// Attaches the per-site values of `quantity` to every term.
pub fn extract_a(state: &ExtendedState, quantity: &Quantity) -> Result<ExtendedAState> {
    let terms: Vec<(ConfigId, Term<CoeffSet>)> = state
        .terms
        .par_iter()
        .map(|(id, t)| {
            Ok((
                id.clone(),
                Term {
                    config: t.config.clone(),
                    weight: t.weight,
                    coeff: quantity.evaluate(&t.config)?,
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(Superposition::from_map(terms.into_iter().collect()))
}
