//! Quantum diffeomorphisms: per-branch classical maps (optionally weighted
//! families of them) acting termwise on extended A-states, with an
//! antisymmetric phase function.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::configuration::{Catalog, ConfigId, Configuration, FieldConfig};
use crate::error::{Error, Result};
use crate::extended_state::{CoeffSet, ExtendedAState, Term};
use crate::geometry::{Diffeo, LatticeMap, TensorField};

#[derive(Deserialize)]
struct RawPhaseTable(Vec<(ConfigId, ConfigId, f64)>);

/// Stored phases `theta(u, v)`, closed under antisymmetry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPhaseTable", into = "RawPhaseTableOut")]
pub struct PhaseTable {
    entries: BTreeMap<(ConfigId, ConfigId), f64>,
}

#[derive(Serialize)]
struct RawPhaseTableOut(Vec<(ConfigId, ConfigId, f64)>);

impl From<PhaseTable> for RawPhaseTableOut {
    fn from(t: PhaseTable) -> Self {
        RawPhaseTableOut(t.entries.into_iter().map(|((u, v), th)| (u, v, th)).collect())
    }
}

impl TryFrom<RawPhaseTable> for PhaseTable {
    type Error = Error;
    fn try_from(r: RawPhaseTable) -> Result<Self> {
        PhaseTable::new(r.0)
    }
}

impl PhaseTable {
    /// Builds a table from `(u, v, theta)` triples. Missing reverse entries
    /// are filled with `-theta`; present ones must equal it exactly.
    pub fn new(triples: impl IntoIterator<Item = (ConfigId, ConfigId, f64)>) -> Result<Self> {
        let mut entries: BTreeMap<(ConfigId, ConfigId), f64> = BTreeMap::new();
        for (u, v, th) in triples {
            let bad = || Error::PhaseNotAntisymmetric(u.clone(), v.clone());
            if !th.is_finite() || (u == v && th != 0.0) {
                return Err(bad());
            }
            match entries.get(&(u.clone(), v.clone())) {
                Some(prev) if *prev != th => return Err(bad()),
                _ => {}
            }
            match entries.get(&(v.clone(), u.clone())) {
                Some(rev) if *rev != -th => return Err(bad()),
                _ => {}
            }
            entries.insert((v.clone(), u.clone()), -th);
            entries.insert((u, v), th);
        }
        Ok(PhaseTable { entries })
    }

    pub fn get(&self, u: &ConfigId, v: &ConfigId) -> Option<f64> {
        self.entries.get(&(u.clone(), v.clone())).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn triples(&self) -> impl Iterator<Item = (&ConfigId, &ConfigId, f64)> {
        self.entries.iter().map(|((u, v), th)| (u, v, *th))
    }
}

/// The phase function `theta(u, v)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseFn {
    /// `theta = 0` everywhere.
    #[default]
    Zero,
    Table(PhaseTable),
}

impl PhaseFn {
    pub fn table(triples: impl IntoIterator<Item = (ConfigId, ConfigId, f64)>) -> Result<Self> {
        PhaseTable::new(triples).map(PhaseFn::Table)
    }

    pub fn eval(&self, u: &ConfigId, v: &ConfigId) -> Result<f64> {
        match self {
            PhaseFn::Zero => Ok(0.0),
            _ if u == v => Ok(0.0),
            PhaseFn::Table(t) => t
                .get(u, v)
                .ok_or_else(|| Error::PhaseUndefined(u.clone(), v.clone())),
        }
    }

    /// Phase function defined wherever either input is.
    pub fn union(&self, other: &PhaseFn) -> Result<PhaseFn> {
        match (self, other) {
            (PhaseFn::Zero, PhaseFn::Zero) => Ok(PhaseFn::Zero),
            (PhaseFn::Zero, t) | (t, PhaseFn::Zero) => Ok(t.clone()),
            (PhaseFn::Table(a), PhaseFn::Table(b)) => PhaseFn::table(
                a.triples()
                    .chain(b.triples())
                    .map(|(u, v, th)| (u.clone(), v.clone(), th)),
            ),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, PhaseFn::Zero)
    }
}

/// One weighted member of a general branch family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedMap {
    pub a: f64,
    pub map: Diffeo,
}

/// A quantum diffeomorphism with one classical map per branch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RestrictedQD {
    #[serde(with = "crate::serde_util::pairs")]
    pub maps: BTreeMap<ConfigId, Diffeo>,
    /// Map used for branches without an explicit entry.
    #[serde(default)]
    pub default: Option<Diffeo>,
    #[serde(default)]
    pub phase: PhaseFn,
}

/// A quantum diffeomorphism with a real-weighted family of maps per branch,
/// `sum_alpha a_alpha^2 = 1`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneralQD {
    #[serde(with = "crate::serde_util::pairs")]
    pub families: BTreeMap<ConfigId, Vec<WeightedMap>>,
    #[serde(default)]
    pub default: Option<Vec<WeightedMap>>,
    #[serde(default)]
    pub phase: PhaseFn,
}

const NORMALIZATION_TOLERANCE: f64 = 1e-12;

fn check_family(f: &[WeightedMap]) -> Result<()> {
    let s: f64 = f.iter().map(|w| w.a * w.a).sum();
    if f.iter().any(|w| !w.a.is_finite()) || (s - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::BadNormalization(s));
    }
    Ok(())
}

impl RestrictedQD {
    pub fn identity() -> Self {
        RestrictedQD {
            maps: BTreeMap::new(),
            default: Some(Diffeo::Identity),
            phase: PhaseFn::Zero,
        }
    }

    /// The same map on every branch.
    pub fn uniform(map: Diffeo) -> Self {
        RestrictedQD {
            maps: BTreeMap::new(),
            default: Some(map),
            phase: PhaseFn::Zero,
        }
    }

    pub fn from_maps(maps: BTreeMap<ConfigId, Diffeo>) -> Self {
        RestrictedQD {
            maps,
            default: None,
            phase: PhaseFn::Zero,
        }
    }

    pub fn with_phase(mut self, phase: PhaseFn) -> Self {
        self.phase = phase;
        self
    }

    pub fn map_for(&self, u: &ConfigId) -> Result<&Diffeo> {
        self.maps
            .get(u)
            .or(self.default.as_ref())
            .ok_or_else(|| Error::MissingBranchMap(u.clone()))
    }

    pub fn to_general(&self) -> GeneralQD {
        let one = |d: &Diffeo| vec![WeightedMap { a: 1.0, map: d.clone() }];
        GeneralQD {
            families: self.maps.iter().map(|(k, d)| (k.clone(), one(d))).collect(),
            default: self.default.as_ref().map(one),
            phase: self.phase.clone(),
        }
    }
}

impl GeneralQD {
    pub fn new(
        families: BTreeMap<ConfigId, Vec<WeightedMap>>,
        default: Option<Vec<WeightedMap>>,
        phase: PhaseFn,
    ) -> Result<Self> {
        families.values().chain(default.iter()).try_for_each(|f| check_family(f))?;
        Ok(GeneralQD {
            families,
            default,
            phase,
        })
    }

    pub fn family_for(&self, u: &ConfigId) -> Result<&[WeightedMap]> {
        self.families
            .get(u)
            .or(self.default.as_ref())
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingBranchMap(u.clone()))
    }
}

/// Pulls a configuration and its coefficient set through one map.
///
/// Only field configurations can be moved; the identity leaves any
/// configuration alone.
pub fn pullback_term(
    phi: &Diffeo,
    config: &Configuration,
    coeff: Option<&CoeffSet>,
) -> Result<(Configuration, Option<CoeffSet>)> {
    if phi.is_identity() {
        return Ok((config.clone(), coeff.cloned()));
    }
    let Configuration::Field(f) = config else {
        return Err(Error::KindMismatch);
    };
    let mut fields: Vec<&TensorField> = vec![f.metric()];
    fields.extend(f.matter().values());
    if let Some(c) = coeff {
        fields.push(&c.field);
    }
    let (patch, mut out) = phi.pullback_fields(f.support(), &fields)?;
    let new_coeff = coeff.map(|c| CoeffSet {
        name: c.name.clone(),
        layout: c.layout,
        field: out.pop().expect("coefficient field pulled back"),
    });
    let matter = f.matter().keys().cloned().zip(out.drain(1..)).collect();
    let metric = out.pop().expect("metric pulled back");
    Ok((
        Configuration::Field(FieldConfig::from_parts_unchecked(patch, metric, matter)),
        new_coeff,
    ))
}

fn phase_factor(phase: &PhaseFn, u: &ConfigId, v: &ConfigId) -> Result<Option<Complex64>> {
    let th = phase.eval(u, v)?;
    Ok((th != 0.0).then(|| Complex64::from_polar(1.0, th)))
}

/// One output term before merging.
struct Image {
    id: ConfigId,
    term: Term<CoeffSet>,
}

fn images(
    family_for: impl Fn(&ConfigId) -> Result<Vec<(f64, Diffeo)>>,
    phase: &PhaseFn,
    state: &ExtendedAState,
) -> Result<Vec<Image>> {
    let mut out = Vec::new();
    for (u, t) in state.terms() {
        for (a, phi) in family_for(u)? {
            let (config, coeff) = pullback_term(&phi, &t.config, Some(&t.coeff))?;
            let id = if phi.is_identity() { u.clone() } else { config.id() };
            let mut weight = t.weight;
            if a != 1.0 {
                weight *= a;
            }
            if let Some(f) = phase_factor(phase, u, &id)? {
                weight *= f;
            }
            out.push(Image {
                id,
                term: Term {
                    config,
                    weight,
                    coeff: coeff.expect("coefficient set present"),
                },
            });
        }
    }
    Ok(out)
}

fn merge(images: Vec<Image>) -> Result<ExtendedAState> {
    let mut out = ExtendedAState::new();
    for im in images {
        out.insert_with_id(im.id, im.term.config, im.term.weight, im.term.coeff)?;
    }
    Ok(out)
}

/// `sum_u c_u e^{i theta(u, phi_u* u)} |phi_u* u]` with pulled-back
/// coefficients; coinciding images add.
pub fn apply_restricted(qd: &RestrictedQD, state: &ExtendedAState) -> Result<ExtendedAState> {
    let ims = images(|u| Ok(vec![(1.0, qd.map_for(u)?.clone())]), &qd.phase, state)?;
    merge(ims)
}

/// Each term fans out into one term per family member with weight
/// `c_u a_alpha e^{i theta}`; coinciding images add.
pub fn apply_general(qd: &GeneralQD, state: &ExtendedAState) -> Result<ExtendedAState> {
    let family = |u: &ConfigId| -> Result<Vec<(f64, Diffeo)>> {
        let f = qd.family_for(u)?;
        check_family(f)?;
        Ok(f.iter().map(|w| (w.a, w.map.clone())).collect())
    };
    merge(images(family, &qd.phase, state)?)
}

fn image_id(phi: &Diffeo, u: &ConfigId, config: &Configuration) -> Result<ConfigId> {
    if phi.is_identity() {
        return Ok(u.clone());
    }
    Ok(pullback_term(phi, config, None)?.0.id())
}

/// `qd1` followed by `qd2`, materialised on every catalog branch where
/// `qd1` is defined. The phase is evaluated directly between a branch and
/// its final image, using the union of both phase tables.
pub fn compose_general(qd1: &GeneralQD, qd2: &GeneralQD, catalog: &Catalog) -> Result<GeneralQD> {
    let mut families = BTreeMap::new();
    for u in catalog.ids() {
        let Ok(f1) = qd1.family_for(u) else {
            continue;
        };
        let config = catalog.get(u).expect("catalog id");
        let mut fam = Vec::new();
        for w1 in f1 {
            let v = image_id(&w1.map, u, config)?;
            let f2 = qd2.family_for(&v).map_err(|_| Error::DomainMismatch(v.clone()))?;
            for w2 in f2 {
                fam.push(WeightedMap {
                    a: w1.a * w2.a,
                    map: w1.map.then(&w2.map),
                });
            }
        }
        families.insert(u.clone(), fam);
    }
    Ok(GeneralQD {
        families,
        default: None,
        phase: qd1.phase.union(&qd2.phase)?,
    })
}

/// Restricted composition: `qd1` first, then `qd2`.
pub fn compose(qd1: &RestrictedQD, qd2: &RestrictedQD, catalog: &Catalog) -> Result<RestrictedQD> {
    let g = compose_general(&qd1.to_general(), &qd2.to_general(), catalog)?;
    Ok(RestrictedQD {
        maps: g
            .families
            .into_iter()
            .map(|(u, mut f)| (u, f.pop().expect("single member").map))
            .collect(),
        default: None,
        phase: g.phase,
    })
}

/// The quantum diffeomorphism undoing `qd` on `state`: at each image branch
/// it applies the inverse of the map that produced it.
pub fn reverse_for(qd: &RestrictedQD, state: &ExtendedAState) -> Result<RestrictedQD> {
    let mut maps = BTreeMap::new();
    for (u, t) in state.terms() {
        let phi = qd.map_for(u)?;
        let v = image_id(phi, u, &t.config)?;
        if maps.insert(v, phi.inverse()).is_some() {
            return Err(Error::Irreversible);
        }
    }
    Ok(RestrictedQD {
        maps,
        default: None,
        phase: qd.phase.clone(),
    })
}

/// Records which source branches land on which image, for callers that
/// need the correspondence.
pub fn branch_images(qd: &RestrictedQD, state: &ExtendedAState) -> Result<BTreeMap<ConfigId, ConfigId>> {
    state
        .terms()
        .map(|(u, t)| Ok((u.clone(), image_id(qd.map_for(u)?, u, &t.config)?)))
        .collect()
}

/// A random signed axis permutation with shifts in `[-max_shift, max_shift]`.
pub fn random_lattice_map<R: Rng>(rng: &mut R, dim: usize, max_shift: i64, reflect: bool) -> LatticeMap {
    let mut perm: Vec<usize> = (0..dim).collect();
    for i in (1..dim).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let signs = (0..dim)
        .map(|_| if reflect && rng.random_bool(0.5) { -1 } else { 1 })
        .collect();
    let shift = (0..dim).map(|_| rng.random_range(-max_shift..=max_shift)).collect();
    LatticeMap::new(perm, signs, shift).expect("valid by construction")
}
