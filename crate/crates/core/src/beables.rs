//! Beable functionals, sampled invariance testing and operational-space
//! selection of extended states.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configuration::{Configuration, FieldConfig};
use crate::error::{Error, Result};
use crate::extended_state::{Coefficient, ExtendedAState, Superposition};
use crate::geometry::{Diffeo, LatticeMap, TensorField, Variance};
use crate::lattice::Site;
use crate::numerics::canonical_bits;
use crate::quantum_diffeo::{apply_restricted, random_lattice_map, RestrictedQD};

/// Tolerance for comparing real-valued beables.
pub const VALUE_TOLERANCE: f64 = 1e-9;

/// Product with factors multiplied in order of increasing magnitude, so the
/// result depends only on the multiset of factors up to sign.
fn sorted_product(factors: &mut [f64]) -> f64 {
    factors.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    factors.iter().product()
}

/// Sum with terms added in value order, so the result depends only on the
/// multiset of terms.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

fn permutations(n: usize) -> Vec<(Vec<usize>, f64)> {
    if n == 0 {
        return vec![(vec![], 1.0)];
    }
    let mut out = Vec::new();
    for (p, s) in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            let moved = (p.len() - pos) as i32;
            out.push((q, if moved % 2 == 0 { s } else { -s }));
        }
    }
    out
}

/// Determinant by the Leibniz expansion with order-independent arithmetic.
fn leibniz_det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    sorted_sum(
        permutations(n)
            .into_iter()
            .map(|(p, s)| {
                let mut f: Vec<f64> = (0..n).map(|i| m[i][p[i]]).collect();
                s * sorted_product(&mut f)
            })
            .collect(),
    )
}

/// Inverse by cofactors, evaluated so that relabeling or reflecting axes
/// permutes and negates entries exactly.
fn covariant_inverse(g: &[f64], n: usize) -> Result<Vec<f64>> {
    let m: Vec<Vec<f64>> = (0..n).map(|i| g[i * n..(i + 1) * n].to_vec()).collect();
    let det = leibniz_det(&m);
    if det == 0.0 || !det.is_finite() {
        return Err(Error::SingularMetric);
    }
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let minor: Vec<Vec<f64>> = (0..n)
                .filter(|r| *r != j)
                .map(|r| (0..n).filter(|c| *c != i).map(|c| m[r][c]).collect())
                .collect();
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            inv[i * n + j] = sign * leibniz_det(&minor) / det;
        }
    }
    Ok(inv)
}

/// One scalar constructor of an operational-space list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarSpec {
    /// A rank-0 matter field.
    MatterScalar { name: String },
    /// `g(V, V)` for a vector or covector matter field.
    VectorNorm { name: String },
    /// Norm of the trace-free part of a covariant rank-2 field; the metric
    /// itself when `name` is absent.
    TraceFreeNorm {
        #[serde(default)]
        name: Option<String>,
    },
    /// `g^{mu nu} d_mu phi d_nu phi` with central differences.
    GradientNorm { name: String },
}

/// Ordered list of scalar constructors.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalarList(pub Vec<ScalarSpec>);

impl ScalarList {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn matter<'a>(u: &'a FieldConfig, name: &str) -> Result<&'a TensorField> {
    u.matter()
        .get(name)
        .ok_or_else(|| Error::UnknownQuantity(format!("matter field `{name}`")))
}

struct SiteFrame {
    n: usize,
    g: Vec<f64>,
    ginv: Vec<f64>,
}

impl ScalarSpec {
    fn eval(&self, u: &FieldConfig, s: &Site, frame: &SiteFrame) -> Result<f64> {
        let n = frame.n;
        match self {
            ScalarSpec::MatterScalar { name } => {
                let f = matter(u, name)?;
                if !f.is_scalar() {
                    return Err(Error::InvalidTensor(format!("`{name}` is not a scalar")));
                }
                Ok(f.get(s).expect("field covers support")[0])
            }
            ScalarSpec::VectorNorm { name } => {
                let f = matter(u, name)?;
                let metric = match f.slots() {
                    [Variance::Up] => &frame.g,
                    [Variance::Down] => &frame.ginv,
                    _ => return Err(Error::InvalidTensor(format!("`{name}` is not a vector"))),
                };
                let v = f.get(s).expect("field covers support");
                Ok(sorted_sum(
                    (0..n)
                        .flat_map(|a| (0..n).map(move |b| (a, b)))
                        .map(|(a, b)| sorted_product(&mut [metric[a * n + b], v[a], v[b]]))
                        .collect(),
                ))
            }
            ScalarSpec::TraceFreeNorm { name } => {
                let t: Vec<f64> = match name {
                    None => frame.g.clone(),
                    Some(name) => {
                        let f = matter(u, name)?;
                        if f.slots() != [Variance::Down, Variance::Down] {
                            return Err(Error::InvalidTensor(format!("`{name}` is not covariant rank 2")));
                        }
                        f.get(s).expect("field covers support").to_vec()
                    }
                };
                let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).collect();
                let trace = sorted_sum(
                    pairs
                        .iter()
                        .map(|&(a, b)| sorted_product(&mut [frame.ginv[a * n + b], t[a * n + b]]))
                        .collect(),
                );
                let tf: Vec<f64> = (0..n * n).map(|i| t[i] - frame.g[i] * trace / n as f64).collect();
                let mut terms = Vec::with_capacity(n.pow(4));
                for &(m, a) in &pairs {
                    for &(nu, b) in &pairs {
                        terms.push(sorted_product(&mut [
                            frame.ginv[m * n + a],
                            frame.ginv[nu * n + b],
                            tf[m * n + nu],
                            tf[a * n + b],
                        ]));
                    }
                }
                Ok(sorted_sum(terms))
            }
            ScalarSpec::GradientNorm { name } => {
                let f = matter(u, name)?;
                if !f.is_scalar() {
                    return Err(Error::InvalidTensor(format!("`{name}` is not a scalar")));
                }
                let h = u.support().spacing_f64();
                let d: Vec<f64> = (0..n)
                    .map(|a| {
                        let p = f.get(&s.offset(a, 1)).map(|v| v[0]);
                        let m = f.get(&s.offset(a, -1)).map(|v| v[0]);
                        match (p, m) {
                            (Some(p), Some(m)) => Ok((p - m) / (2.0 * h[a])),
                            _ => Err(Error::BoundarySite(s.0.clone())),
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(sorted_sum(
                    (0..n)
                        .flat_map(|a| (0..n).map(move |b| (a, b)))
                        .map(|(a, b)| sorted_product(&mut [frame.ginv[a * n + b], d[a], d[b]]))
                        .collect(),
                ))
            }
        }
    }
}

/// Canonical key of a point of operational space.
fn point_key(p: &[f64]) -> Vec<u64> {
    p.iter().map(|x| canonical_bits(*x)).collect()
}

/// `{S(p) : p interior site}`, deduplicated and sorted.
pub fn scalar_plot(u: &FieldConfig, scalars: &ScalarList) -> Result<Vec<Vec<f64>>> {
    let interior = u.support().interior_sites();
    if interior.is_empty() {
        return Err(Error::BoundaryOnlySupport);
    }
    let n = u.dim();
    let mut out: BTreeMap<Vec<u64>, Vec<f64>> = BTreeMap::new();
    for s in interior {
        let g = u.metric().get(&s).expect("metric covers support").to_vec();
        let ginv = covariant_inverse(&g, n)?;
        let frame = SiteFrame { n, g, ginv };
        let p: Vec<f64> = scalars
            .0
            .iter()
            .map(|k| k.eval(u, &s, &frame).map(|v| if v == 0.0 { 0.0 } else { v }))
            .collect::<Result<_>>()?;
        out.insert(point_key(&p), p);
    }
    Ok(out.into_values().collect())
}

/// A closed axis-aligned box in operational space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl RealBox {
    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.lo.len()
            && p.iter().zip(&self.lo).zip(&self.hi).all(|((x, l), h)| l <= x && x <= h)
    }

    pub fn is_subset_of(&self, other: &RealBox) -> bool {
        self.lo.len() == other.lo.len()
            && self.lo.iter().zip(&other.lo).all(|(a, b)| a >= b)
            && self.hi.iter().zip(&other.hi).all(|(a, b)| a <= b)
    }
}

/// A region of operational space: all of it, or a finite union of boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    All,
    Boxes(Vec<RealBox>),
}

impl Region {
    pub fn empty() -> Region {
        Region::Boxes(Vec::new())
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            Region::All => true,
            Region::Boxes(b) => b.iter().any(|b| b.contains(p)),
        }
    }
}

/// Keeps the terms whose operational-space plot lies inside `region`. Terms
/// that cannot be plotted (path configurations, boundary-only supports,
/// missing fields) do not plot into any region and are dropped.
pub fn select_region<C: Coefficient>(state: &Superposition<C>, scalars: &ScalarList, region: &Region) -> Superposition<C> {
    state.filtered(|_, t| match &t.config {
        Configuration::Field(f) => scalar_plot(f, scalars)
            .map(|pts| pts.iter().all(|p| region.contains(p)))
            .unwrap_or(false),
        Configuration::Path(_) => false,
    })
}

/// Built-in functionals of an extended state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BeableFn {
    Constant { value: f64 },
    /// Number of terms.
    TermCount,
    /// `sum_u c_u n_u`, with `n_u` the number of interior sites of branch
    /// `u` whose scalars fall in `region`.
    ScalarCoincidence { scalars: ScalarList, region: Region },
    /// Summed weight per number of support boxes.
    TopologySignature,
    /// `sum_u c_u g_u(site)[component]`, zero where a branch lacks the site.
    FixedSiteValue { site: Vec<i64>, component: usize },
    /// Union of the operational-space plots of all branches.
    RegionPlot { scalars: ScalarList },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum BeableValue {
    Count(u64),
    Complex([f64; 2]),
    Signature(Vec<(usize, [f64; 2])>),
    Points(Vec<Vec<f64>>),
}

fn c2(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

impl BeableValue {
    /// Whether the value is exact (compared bitwise).
    pub fn is_discrete(&self) -> bool {
        matches!(self, BeableValue::Count(_) | BeableValue::Points(_))
    }

    /// Distance between two values; infinite for different kinds or
    /// unequal discrete values.
    pub fn distance(&self, other: &BeableValue) -> f64 {
        let cz = |a: &[f64; 2], b: &[f64; 2]| Complex64::new(a[0] - b[0], a[1] - b[1]).norm();
        match (self, other) {
            (BeableValue::Count(a), BeableValue::Count(b)) => {
                if a == b { 0.0 } else { f64::INFINITY }
            }
            (BeableValue::Complex(a), BeableValue::Complex(b)) => cz(a, b),
            (BeableValue::Signature(a), BeableValue::Signature(b)) => {
                let ma: BTreeMap<usize, [f64; 2]> = a.iter().cloned().collect();
                let mb: BTreeMap<usize, [f64; 2]> = b.iter().cloned().collect();
                let keys: BTreeSet<usize> = ma.keys().chain(mb.keys()).cloned().collect();
                keys.iter()
                    .map(|k| cz(ma.get(k).unwrap_or(&[0.0; 2]), mb.get(k).unwrap_or(&[0.0; 2])))
                    .fold(0.0, f64::max)
            }
            (BeableValue::Points(a), BeableValue::Points(b)) => {
                let ka: Vec<Vec<u64>> = a.iter().map(|p| point_key(p)).collect();
                let kb: Vec<Vec<u64>> = b.iter().map(|p| point_key(p)).collect();
                if ka == kb { 0.0 } else { f64::INFINITY }
            }
            _ => f64::INFINITY,
        }
    }

    /// Equality: bitwise for discrete values, within [`VALUE_TOLERANCE`]
    /// relative to the magnitude otherwise.
    pub fn matches(&self, other: &BeableValue) -> bool {
        let d = self.distance(other);
        if self.is_discrete() {
            d == 0.0
        } else {
            d <= VALUE_TOLERANCE * self.magnitude().max(other.magnitude()).max(1.0)
        }
    }

    fn magnitude(&self) -> f64 {
        match self {
            BeableValue::Complex(z) => Complex64::new(z[0], z[1]).norm(),
            BeableValue::Signature(v) => v.iter().map(|(_, z)| Complex64::new(z[0], z[1]).norm()).fold(0.0, f64::max),
            _ => 0.0,
        }
    }
}

impl BeableFn {
    pub fn label(&self) -> &'static str {
        match self {
            BeableFn::Constant { .. } => "constant",
            BeableFn::TermCount => "term_count",
            BeableFn::ScalarCoincidence { .. } => "scalar_coincidence",
            BeableFn::TopologySignature => "topology_signature",
            BeableFn::FixedSiteValue { .. } => "fixed_site_value",
            BeableFn::RegionPlot { .. } => "region_plot",
        }
    }

    pub fn eval<C: Coefficient>(&self, state: &Superposition<C>) -> Result<BeableValue> {
        let fields = || {
            state.terms().map(|(_, t)| match &t.config {
                Configuration::Field(f) => Ok((f, t.weight)),
                Configuration::Path(_) => Err(Error::KindMismatch),
            })
        };
        match self {
            BeableFn::Constant { value } => Ok(BeableValue::Complex([*value, 0.0])),
            BeableFn::TermCount => Ok(BeableValue::Count(state.len() as u64)),
            BeableFn::ScalarCoincidence { scalars, region } => {
                let mut total = Complex64::new(0.0, 0.0);
                for item in fields() {
                    let (f, w) = item?;
                    let count = plot_counts(f, scalars)?
                        .into_iter()
                        .filter(|(p, _)| region.contains(p))
                        .map(|(_, c)| c)
                        .sum::<usize>();
                    total += w * count as f64;
                }
                Ok(BeableValue::Complex(c2(total)))
            }
            BeableFn::TopologySignature => {
                let mut sig: BTreeMap<usize, Complex64> = BTreeMap::new();
                for item in fields() {
                    let (f, w) = item?;
                    *sig.entry(f.support().boxes().len()).or_default() += w;
                }
                Ok(BeableValue::Signature(sig.into_iter().map(|(k, z)| (k, c2(z))).collect()))
            }
            BeableFn::FixedSiteValue { site, component } => {
                let site = Site::new(site.clone());
                let mut total = Complex64::new(0.0, 0.0);
                for item in fields() {
                    let (f, w) = item?;
                    if let Some(v) = f.metric().get(&site) {
                        let x = *v
                            .get(*component)
                            .ok_or_else(|| Error::InvalidTensor(format!("no component {component}")))?;
                        total += w * x;
                    }
                }
                Ok(BeableValue::Complex(c2(total)))
            }
            BeableFn::RegionPlot { scalars } => {
                let mut pts: BTreeMap<Vec<u64>, Vec<f64>> = BTreeMap::new();
                for item in fields() {
                    let (f, _) = item?;
                    for p in scalar_plot(f, scalars)? {
                        pts.insert(point_key(&p), p);
                    }
                }
                Ok(BeableValue::Points(pts.into_values().collect()))
            }
        }
    }
}

/// Interior-site multiplicity of each operational-space point.
fn plot_counts(u: &FieldConfig, scalars: &ScalarList) -> Result<Vec<(Vec<f64>, usize)>> {
    let n = u.dim();
    let mut out: BTreeMap<Vec<u64>, (Vec<f64>, usize)> = BTreeMap::new();
    for s in u.support().interior_sites() {
        let g = u.metric().get(&s).expect("metric covers support").to_vec();
        let ginv = covariant_inverse(&g, n)?;
        let frame = SiteFrame { n, g, ginv };
        let p: Vec<f64> = scalars
            .0
            .iter()
            .map(|k| k.eval(u, &s, &frame).map(|v| if v == 0.0 { 0.0 } else { v }))
            .collect::<Result<_>>()?;
        out.entry(point_key(&p)).or_insert((p, 0)).1 += 1;
    }
    Ok(out.into_values().collect())
}

/// `B(state) = beta`; a functional that cannot be evaluated on the state
/// does not satisfy any constraint.
pub fn beable_constraint<C: Coefficient>(b: &BeableFn, beta: &BeableValue, state: &Superposition<C>) -> bool {
    b.eval(state).is_ok_and(|v| v.matches(beta))
}

/// Generator of random quantum diffeomorphisms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QdSampler {
    /// Independent random signed axis permutations and shifts per branch.
    LatticeExact { max_shift: i64, reflect: bool },
    /// Independent random translations per branch.
    Translation { max_shift: i64 },
    /// The same random lattice map on every branch.
    Uniform { max_shift: i64, reflect: bool },
}

impl QdSampler {
    pub fn sample(&self, rng: &mut ChaCha8Rng, state: &ExtendedAState) -> Result<RestrictedQD> {
        let dim = state
            .terms()
            .map(|(_, t)| t.config.as_field().map(FieldConfig::dim))
            .next()
            .flatten()
            .ok_or_else(|| Error::SamplerFailure("sampler needs a field state with at least one term".into()))?;
        let mut maps = BTreeMap::new();
        let shared = match self {
            QdSampler::Uniform { max_shift, reflect } => Some(random_lattice_map(rng, dim, *max_shift, *reflect)),
            _ => None,
        };
        for (u, t) in state.terms() {
            match t.config.as_field() {
                Some(f) if f.dim() == dim => {}
                _ => return Err(Error::SamplerFailure(format!("branch {u} is not a {dim}-dimensional field"))),
            }
            let m = match self {
                QdSampler::LatticeExact { max_shift, reflect } => random_lattice_map(rng, dim, *max_shift, *reflect),
                QdSampler::Translation { max_shift } => {
                    LatticeMap::translation((0..dim).map(|_| rng.random_range(-max_shift..=*max_shift)).collect())
                }
                QdSampler::Uniform { .. } => shared.clone().expect("shared map"),
            };
            maps.insert(u.clone(), Diffeo::Lattice(m));
        }
        Ok(RestrictedQD::from_maps(maps))
    }
}

/// Random stream for sample `i` of a run with root seed `seed`.
pub fn sample_rng(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub sample: u64,
    pub deviation: f64,
}

/// Outcome of sampled falsification; never a proof of invariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeableReport {
    pub beable: String,
    /// Always "sampled": invariance is only tested on the drawn maps.
    pub method: String,
    pub samples: u64,
    pub seed: u64,
    pub violations: Vec<Violation>,
    pub max_deviation: f64,
}

impl BeableReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Evaluates `b` before and after `n` sampled quantum diffeomorphisms.
pub fn is_beable_sampled(
    b: &BeableFn,
    state: &ExtendedAState,
    sampler: &QdSampler,
    n: u64,
    seed: u64,
) -> Result<BeableReport> {
    if n == 0 {
        return Err(Error::SamplerFailure("at least one sample is required".into()));
    }
    let before = b.eval(state)?;
    let results: Vec<(u64, f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let qd = sampler.sample(&mut rng, state)?;
            let after = apply_restricted(&qd, state)
                .map_err(|e| Error::SamplerFailure(format!("sample {i}: {e}")))?;
            let v = b.eval(&after)?;
            Ok((i, before.distance(&v), before.matches(&v)))
        })
        .collect::<Result<_>>()?;
    let violations: Vec<Violation> = results
        .iter()
        .filter(|r| !r.2)
        .map(|r| Violation {
            sample: r.0,
            deviation: r.1,
        })
        .collect();
    let max_deviation = results.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(BeableReport {
        beable: b.label().to_string(),
        method: "sampled".to_string(),
        samples: n,
        seed,
        violations,
        max_deviation,
    })
}
