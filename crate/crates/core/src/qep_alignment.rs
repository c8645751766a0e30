//! First-order alignment of branch metrics at a point.
//!
//! Stage one moves every branch onto a common branch through the
//! identification maps of a quantum coordinate system. Stage two applies,
//! per branch, a quadratic map fixing the point whose linear part takes the
//! metric to Minkowski form and whose quadratic part removes the metric's
//! first derivatives (normal coordinates).

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_rational::Rational64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::configuration::{ConfigId, Configuration, FieldConfig};
use crate::error::{Error, Result};
use crate::generators::random_symmetric;
use crate::extended_state::{extract_a, ExtendedAState, ExtendedState, Quantity};
use crate::geometry::{is_lorentzian, minkowski, minkowski_frame, Diffeo, MetricJet, QuadraticMap, TensorField, Variance};
use crate::lattice::{rational_to_f64, IndexBox, LatticePatch, Site};
use crate::quantum_coords::{to_coincidence, IdentificationFamily, QCPoint, QuantumCoordinateSystem};
use crate::quantum_diffeo::{apply_restricted, branch_images, RestrictedQD};

/// Lattice steps of margin required around the point in every branch.
pub const REQUIRED_MARGIN: i64 = 2;
/// Step of the central differences used for first-order residuals.
pub const DERIVATIVE_STEP: f64 = 1e-4;
/// Radii at which pairwise differences are sampled, as fractions of the
/// requested radius.
pub const RADIUS_FRACTIONS: [f64; 3] = [1.0, 0.1, 0.01];

pub const ZEROTH_TOLERANCE: f64 = 1e-10;
pub const FIRST_TOLERANCE: f64 = 1e-6;
pub const MIN_SLOPE: f64 = 1.9;
const CONFORMAL_TOLERANCE: f64 = 1e-9;

/// A metric that can be evaluated at arbitrary coordinate points.
pub trait MetricModel {
    fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>>;
}

impl<F: Fn(&[f64]) -> DMatrix<f64>> MetricModel for F {
    fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self(x))
    }
}

impl MetricModel for MetricJet {
    fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.eval(x))
    }
}

/// Second-order model of one branch metric pulled back through a map.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalMetric {
    pub jet: MetricJet,
    pub map: Diffeo,
    pub spacing: Vec<f64>,
}

impl LocalMetric {
    pub fn then(&self, next: &Diffeo) -> LocalMetric {
        LocalMetric {
            jet: self.jet.clone(),
            map: self.map.then(next),
            spacing: self.spacing.clone(),
        }
    }
}

impl MetricModel for LocalMetric {
    fn metric_at(&self, xp: &[f64]) -> Result<DMatrix<f64>> {
        if self.map.is_identity() {
            return Ok(self.jet.eval(xp));
        }
        let x = self.map.inverse_point(xp, &self.spacing)?;
        let inv = self
            .map
            .jacobian(&x, &self.spacing)?
            .try_inverse()
            .ok_or_else(|| Error::NotInvertibleOnPatch("singular Jacobian".into()))?;
        Ok(inv.transpose() * self.jet.eval(&x) * inv)
    }
}

/// Input of [`align_at_point`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTask {
    /// Field state whose coefficient sets hold the branch metrics.
    pub state: ExtendedAState,
    pub qcs: QuantumCoordinateSystem,
    pub point: QCPoint,
    /// Validation radius in coordinate units.
    pub radius: f64,
    /// Optional future-pointing vector at the point, per branch, in that
    /// branch's own coordinates.
    #[serde(default, with = "crate::serde_util::pairs")]
    pub time_orientation: BTreeMap<ConfigId, Vec<f64>>,
}

impl AlignmentTask {
    pub fn new(state: ExtendedAState, qcs: QuantumCoordinateSystem, point: QCPoint, radius: f64) -> Self {
        AlignmentTask {
            state,
            qcs,
            point,
            radius,
            time_orientation: BTreeMap::new(),
        }
    }

    /// Largest radius the lattice data supports.
    pub fn max_radius(&self) -> f64 {
        let h = self.qcs.family().spacing();
        REQUIRED_MARGIN as f64 * h.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InsufficientMargin(format!("radius {} must be positive", self.radius)));
        }
        if self.radius > self.max_radius() {
            return Err(Error::InsufficientMargin(format!(
                "radius {} exceeds {} lattice steps",
                self.radius, REQUIRED_MARGIN
            )));
        }
        let fam = self.qcs.family();
        for u in self.state.ids() {
            let site = self
                .point
                .branch_points
                .get(u)
                .ok_or_else(|| Error::BranchMismatch(format!("point has no site on branch {u}")))?;
            let region = fam
                .region(u)
                .ok_or_else(|| Error::BranchMismatch(format!("{u} is not a branch of the system")))?;
            let inside = IndexBox::around(&site.0, REQUIRED_MARGIN)
                .sites()
                .iter()
                .all(|s| region.contains(s));
            if !inside {
                return Err(Error::InsufficientMargin(format!(
                    "point {site} is closer than {REQUIRED_MARGIN} steps to the edge of branch {u}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchAlignment {
    /// Branch id in the input state.
    pub source: ConfigId,
    /// Branch id in the aligned state.
    pub aligned: ConfigId,
    /// `dx/dx'` at the point: the Minkowski frame of the branch metric.
    pub jacobian: Vec<Vec<f64>>,
    /// Quadratic coefficients `B^mu_{alpha beta}` of the stage-two map.
    pub quadratic: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub branches: Vec<BranchAlignment>,
    /// Largest entry of `|g_u(x1) - eta|` over branches.
    pub eta_residual: f64,
    /// Largest entry of `|g_u(x1) - g_v(x1)|` over branch pairs.
    pub zeroth_residual: f64,
    /// Largest pairwise difference of central-difference first derivatives.
    pub first_residual: f64,
    pub metric_scale: f64,
    pub radii: Vec<f64>,
    /// Largest pairwise difference on the sphere of each radius.
    pub pairwise_max: Vec<f64>,
    /// Fitted exponent of `pairwise_max` against radius; absent when every
    /// difference is at rounding level.
    pub slope: Option<f64>,
    pub passed: bool,
}

/// A state after stage two, with a metric model per branch.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedState {
    pub state: ExtendedAState,
    pub point: Vec<f64>,
    pub max_radius: f64,
    pub branches: BTreeMap<ConfigId, LocalMetric>,
}

impl AlignedState {
    pub fn check(&self, radius: f64) -> Result<AlignmentReport> {
        check_alignment(&self.branches, &self.point, radius, self.max_radius)
    }
}

/// Output of [`align_at_point`].
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub coincidence: RestrictedQD,
    pub align: RestrictedQD,
    pub aligned: AlignedState,
    pub report: AlignmentReport,
}

fn metric_field<'a>(config: &'a Configuration, coeff: &'a TensorField) -> Result<&'a TensorField> {
    if coeff.slots() == [Variance::Down, Variance::Down] {
        return Ok(coeff);
    }
    config
        .as_field()
        .map(FieldConfig::metric)
        .ok_or(Error::KindMismatch)
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn max_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Stage one, with the per-branch metric jets at the point in the common
/// coordinates (unaligned models).
pub struct Coincidence {
    pub qd: RestrictedQD,
    pub state: ExtendedAState,
    /// Input branch id to stage-one branch id.
    pub ids: BTreeMap<ConfigId, ConfigId>,
    pub site: Site,
    pub point: Vec<f64>,
    pub models: BTreeMap<ConfigId, LocalMetric>,
}

pub fn coincidence_stage(task: &AlignmentTask) -> Result<Coincidence> {
    task.validate()?;
    let target = task.qcs.seed().clone();
    let (qd, state) = to_coincidence(&task.state, &task.qcs, &target)?;
    let ids = branch_images(&qd, &task.state)?;
    let spacing = task.qcs.family().spacing();
    let site = task
        .point
        .branch_points
        .get(&target)
        .cloned()
        .ok_or_else(|| Error::BranchMismatch(format!("point has no site on {target}")))?;
    let point: Vec<f64> = site.0.iter().zip(&spacing).map(|(k, h)| *k as f64 * h).collect();
    let mut models = BTreeMap::new();
    for (id, t) in state.terms() {
        let g = metric_field(&t.config, &t.coeff.field)?;
        let jet = MetricJet::from_lattice(g, &spacing, &site)?;
        models.insert(
            id.clone(),
            LocalMetric {
                jet,
                map: Diffeo::Identity,
                spacing: spacing.clone(),
            },
        );
    }
    Ok(Coincidence {
        qd,
        state,
        ids,
        site,
        point,
        models,
    })
}

/// Runs both stages and checks the result on the task radius.
pub fn align_at_point(task: &AlignmentTask) -> Result<Alignment> {
    let c = coincidence_stage(task)?;
    let n = c.point.len();
    let mut maps = BTreeMap::new();
    let mut details = Vec::new();
    for (source, id) in &c.ids {
        let jet = &c.models[id].jet;
        let mut frame = minkowski_frame(jet.value())?;
        if let Some(v) = task.time_orientation.get(source) {
            let stage_one = task.qcs.family().spacing();
            let j1 = c.qd.map_for(source)?.jacobian(&c.point, &stage_one)?;
            let v1 = j1 * DMatrix::from_column_slice(n, 1, v);
            let a = frame
                .clone()
                .try_inverse()
                .ok_or(Error::SingularMetric)?;
            if (a * v1)[0] < 0.0 {
                frame.column_mut(0).neg_mut();
            }
        }
        let a = frame.clone().try_inverse().ok_or(Error::SingularMetric)?;
        let gamma = jet.christoffel()?;
        let b: Vec<DMatrix<f64>> = (0..n)
            .map(|mu| {
                DMatrix::from_fn(n, n, |al, be| {
                    (0..n).map(|l| a[(mu, l)] * gamma.get(l, al, be)).sum()
                })
            })
            .collect();
        let map = if frame == DMatrix::identity(n, n) && gamma.max_abs() == 0.0 {
            Diffeo::Identity
        } else {
            Diffeo::Quadratic(QuadraticMap::from_parts(&c.point, &a, &b, &c.point)?)
        };
        maps.insert(id.clone(), map);
        details.push((source.clone(), id.clone(), frame, b));
    }
    let align = RestrictedQD::from_maps(maps);
    let state = apply_restricted(&align, &c.state)?;
    let final_ids = branch_images(&align, &c.state)?;
    let branches = c
        .models
        .iter()
        .map(|(id, m)| (final_ids[id].clone(), m.then(align.map_for(id).expect("map present"))))
        .collect();
    let aligned = AlignedState {
        state,
        point: c.point.clone(),
        max_radius: task.max_radius(),
        branches,
    };
    let mut report = aligned.check(task.radius)?;
    report.branches = details
        .into_iter()
        .map(|(source, id, frame, b)| BranchAlignment {
            source,
            aligned: final_ids[&id].clone(),
            jacobian: to_rows(&frame),
            quadratic: b.iter().map(to_rows).collect(),
        })
        .collect();
    Ok(Alignment {
        coincidence: c.qd,
        align,
        aligned,
        report,
    })
}

fn directions(n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for mu in 0..n {
        for s in [1.0, -1.0] {
            let mut d = vec![0.0; n];
            d[mu] = s;
            out.push(d);
        }
        for nu in mu + 1..n {
            for (s, t) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut d = vec![0.0; n];
                d[mu] = s * std::f64::consts::FRAC_1_SQRT_2;
                d[nu] = t * std::f64::consts::FRAC_1_SQRT_2;
                out.push(d);
            }
        }
    }
    out
}

fn pairwise_max(values: &[DMatrix<f64>]) -> f64 {
    let mut m: f64 = 0.0;
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            m = m.max(max_entry(&(a - b)));
        }
    }
    m
}

fn fit_slope(radii: &[f64], values: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > floor)
        .map(|(r, v)| (r.log10(), v.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Measures agreement of the branch metrics at `x1` and around it.
pub fn check_alignment<M: MetricModel>(
    branches: &BTreeMap<ConfigId, M>,
    x1: &[f64],
    radius: f64,
    max_radius: f64,
) -> Result<AlignmentReport> {
    if !(radius > 0.0 && radius <= max_radius) {
        return Err(Error::InsufficientMargin(format!(
            "radius {radius} outside (0, {max_radius}]"
        )));
    }
    let n = x1.len();
    let models: Vec<&M> = branches.values().collect();
    let at = |x: &[f64]| -> Result<Vec<DMatrix<f64>>> { models.iter().map(|m| m.metric_at(x)).collect() };
    let g0 = at(x1)?;
    let eta = minkowski(n);
    let eta_residual = g0.iter().map(|g| max_entry(&(g - &eta))).fold(0.0, f64::max);
    let metric_scale = g0.iter().map(max_entry).fold(0.0, f64::max);
    let zeroth_residual = pairwise_max(&g0);

    let mut first_residual: f64 = 0.0;
    for a in 0..n {
        let mut plus = x1.to_vec();
        let mut minus = x1.to_vec();
        plus[a] += DERIVATIVE_STEP;
        minus[a] -= DERIVATIVE_STEP;
        let gp = at(&plus)?;
        let gm = at(&minus)?;
        let d: Vec<DMatrix<f64>> = gp
            .iter()
            .zip(&gm)
            .map(|(p, m)| (p - m) / (2.0 * DERIVATIVE_STEP))
            .collect();
        first_residual = first_residual.max(pairwise_max(&d));
    }

    let dirs = directions(n);
    let radii: Vec<f64> = RADIUS_FRACTIONS.iter().map(|f| radius * f).collect();
    let mut sampled = Vec::new();
    for r in &radii {
        let mut m: f64 = 0.0;
        for d in &dirs {
            let x: Vec<f64> = x1.iter().zip(d).map(|(c, e)| c + r * e).collect();
            m = m.max(pairwise_max(&at(&x)?));
        }
        sampled.push(m);
    }
    let floor = 1e-13 * metric_scale.max(1.0);
    let slope = fit_slope(&radii, &sampled, floor);
    let passed = zeroth_residual <= ZEROTH_TOLERANCE
        && first_residual <= FIRST_TOLERANCE * metric_scale
        && slope.is_none_or(|s| s >= MIN_SLOPE);
    Ok(AlignmentReport {
        branches: Vec::new(),
        eta_residual,
        zeroth_residual,
        first_residual,
        metric_scale,
        radii,
        pairwise_max: sampled,
        slope,
        passed,
    })
}

/// Conformal factor of each branch metric at `x1` relative to the first
/// branch, or `None` when some pair of null cones differs.
pub fn conformal_factors<M: MetricModel>(
    branches: &BTreeMap<ConfigId, M>,
    x1: &[f64],
) -> Result<Option<BTreeMap<ConfigId, f64>>> {
    let mut metrics = Vec::new();
    for (id, m) in branches {
        let g = m.metric_at(x1)?;
        if !is_lorentzian(&g) {
            return Err(Error::WrongSignature(format!("branch {id} at the point")));
        }
        metrics.push((id.clone(), g));
    }
    let Some((_, reference)) = metrics.first().cloned() else {
        return Ok(Some(BTreeMap::new()));
    };
    let inv = reference.clone().try_inverse().ok_or(Error::SingularMetric)?;
    let n = reference.nrows() as f64;
    let mut out = BTreeMap::new();
    for (id, g) in metrics {
        let lambda = (&inv * &g).trace() / n;
        let off = max_entry(&(&g - &reference * lambda));
        if !(lambda > 0.0) || off > CONFORMAL_TOLERANCE * max_entry(&g) {
            return Ok(None);
        }
        out.insert(id, lambda);
    }
    Ok(Some(out))
}

/// True when every branch metric at `x1` is a positive multiple of the
/// others, so that all null cones coincide.
pub fn lightcone_coincidence<M: MetricModel>(branches: &BTreeMap<ConfigId, M>, x1: &[f64]) -> Result<bool> {
    Ok(conformal_factors(branches, x1)?.is_some())
}

/// Rescales each branch about the point so that all conformal factors
/// equal the smallest one.
pub fn align_conformal(aligned: &AlignedState) -> Result<(RestrictedQD, AlignedState)> {
    let factors = conformal_factors(&aligned.branches, &aligned.point)?.ok_or(Error::ConesNotAligned)?;
    let min = factors.values().cloned().fold(f64::INFINITY, f64::min);
    let n = aligned.point.len();
    let mut maps = BTreeMap::new();
    for (id, lambda) in &factors {
        let s = (lambda / min).sqrt();
        let map = if s == 1.0 {
            Diffeo::Identity
        } else {
            let a = DMatrix::identity(n, n) * s;
            Diffeo::Quadratic(QuadraticMap::linear_about(&aligned.point, &a)?)
        };
        maps.insert(id.clone(), map);
    }
    let qd = RestrictedQD::from_maps(maps);
    let state = apply_restricted(&qd, &aligned.state)?;
    let ids = branch_images(&qd, &aligned.state)?;
    let branches = aligned
        .branches
        .iter()
        .map(|(id, m)| {
            let key = ids.get(id).cloned().unwrap_or_else(|| id.clone());
            (key, m.then(qd.map_for(id).expect("map present")))
        })
        .collect();
    Ok((
        qd,
        AlignedState {
            state,
            point: aligned.point.clone(),
            max_radius: aligned.max_radius,
            branches,
        },
    ))
}

/// Minkowski metric in coordinates moving with velocity `v` along spatial
/// axis `axis` (`x^axis -> x^axis + v t`). Its null cone is tilted relative
/// to that of `eta`; a Lorentz boost would leave `eta` unchanged.
pub fn moving_frame_eta(dim: usize, axis: usize, v: f64) -> DMatrix<f64> {
    let mut s = DMatrix::identity(dim, dim);
    s[(axis, 0)] = -v;
    s.transpose() * minkowski(dim) * s
}

/// Parameters of the generated alignment family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFamily {
    pub dim: usize,
    pub branches: usize,
    /// Half width of each branch box, in lattice steps.
    pub half_width: i64,
    pub spacing: Rational64,
    /// Bound on the linear and quadratic perturbation coefficients.
    pub perturbation: f64,
    pub max_velocity: f64,
    pub radius: f64,
}

impl TaskFamily {
    pub fn standard(dim: usize) -> Self {
        TaskFamily {
            dim,
            branches: 3,
            half_width: if dim > 2 { 2 } else { 3 },
            spacing: Rational64::new(1, 4),
            perturbation: 0.05,
            max_velocity: 0.6,
            radius: 0.1,
        }
    }
}

/// `g(x) = base + sum_a lin[a] y_a + sum_{a <= c} quad[a][c] y_a y_c` with
/// `y = x - center`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialMetric {
    pub center: Vec<f64>,
    pub base: DMatrix<f64>,
    pub lin: Vec<DMatrix<f64>>,
    pub quad: Vec<Vec<DMatrix<f64>>>,
}

impl PolynomialMetric {
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.center.len();
        let y: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let mut g = self.base.clone();
        for a in 0..n {
            g += &self.lin[a] * y[a];
            for c in a..n {
                g += &self.quad[a][c] * (y[a] * y[c]);
            }
        }
        g
    }
}

impl MetricModel for PolynomialMetric {
    fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.eval(x))
    }
}

/// A random task: branch metrics are conformally scaled Minkowski metrics in
/// moving coordinates plus linear and quadratic perturbations, on translated
/// boxes identified by the translations. Branch 0 is at rest; the others
/// move with speed at least half of `max_velocity`.
pub fn random_task<R: Rng>(rng: &mut R, family: &TaskFamily) -> Result<AlignmentTask> {
    Ok(random_task_with_metrics(rng, family)?.0)
}

/// [`random_task`] together with the exact metric of each branch, keyed by
/// branch id, in that branch's own coordinates.
pub fn random_task_with_metrics<R: Rng>(
    rng: &mut R,
    family: &TaskFamily,
) -> Result<(AlignmentTask, BTreeMap<ConfigId, PolynomialMetric>)> {
    let n = family.dim;
    if n < 2 || family.branches == 0 {
        return Err(Error::InvalidModel("alignment family needs dim >= 2 and a branch".into()));
    }
    let h = rational_to_f64(family.spacing);
    let mut configs = Vec::new();
    let mut shifts = Vec::new();
    let mut metrics = Vec::new();
    for b in 0..family.branches {
        let shift: Vec<i64> = if b == 0 {
            vec![0; n]
        } else {
            (0..n).map(|_| rng.random_range(-3..=3)).collect()
        };
        let v = if b == 0 {
            0.0
        } else {
            let s = rng.random_range(0.5 * family.max_velocity..=family.max_velocity);
            if rng.random_bool(0.5) { s } else { -s }
        };
        let axis = rng.random_range(1..n);
        let lambda = rng.random_range(0.5..=2.0);
        let metric = PolynomialMetric {
            center: shift.iter().map(|k| *k as f64 * h).collect(),
            base: moving_frame_eta(n, axis, v) * lambda,
            lin: (0..n).map(|_| random_symmetric(rng, n, family.perturbation)).collect(),
            quad: (0..n)
                .map(|_| (0..n).map(|_| random_symmetric(rng, n, family.perturbation)).collect())
                .collect(),
        };
        let patch = LatticePatch::uniform_box(family.spacing, IndexBox::around(&shift, family.half_width))?;
        let config = FieldConfig::from_metric_fn(patch, |x| metric.eval(x))?;
        configs.push(Configuration::Field(config));
        shifts.push(shift);
        metrics.push(metric);
    }
    let weights: Vec<Complex64> = (0..family.branches)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let state = ExtendedState::from_configs(configs.iter().cloned().zip(weights))?;
    let state = extract_a(&state, &Quantity::Metric)?;
    let ids: Vec<ConfigId> = configs.iter().map(Configuration::id).collect();
    let reference = IndexBox::around(&vec![0; n], family.half_width).sites().into_iter().collect();
    let seeds = ids
        .iter()
        .zip(&shifts)
        .map(|(id, s)| (id.clone(), Diffeo::translation(s.clone())))
        .collect();
    let fam = IdentificationFamily::seeded(vec![family.spacing; n], reference, seeds)?;
    let qcs = QuantumCoordinateSystem::with_lattice_chart(Arc::new(fam), ids[0].clone())?;
    let point = qcs.point(&vec![0.0; n])?;
    let truth = ids.into_iter().zip(metrics).collect();
    Ok((AlignmentTask::new(state, qcs, point, family.radius), truth))
}

/// A task whose branches carry the given constant metrics on a common box of
/// spacing 1/2 around the origin, identified by the identity.
pub fn constant_metric_task(metrics: &[DMatrix<f64>], radius: f64) -> Result<AlignmentTask> {
    let n = metrics
        .first()
        .ok_or_else(|| Error::InvalidModel("at least one branch metric is required".into()))?
        .nrows();
    let spacing = Rational64::new(1, 2);
    let patch = LatticePatch::uniform_box(spacing, IndexBox::around(&vec![0; n], REQUIRED_MARGIN))?;
    let configs = metrics
        .iter()
        .map(|g| Ok(Configuration::Field(FieldConfig::from_metric_fn(patch.clone(), |_| g.clone())?)))
        .collect::<Result<Vec<Configuration>>>()?;
    let state = ExtendedState::from_configs(configs.iter().cloned().map(|c| (c, Complex64::new(1.0, 0.0))))?;
    let state = extract_a(&state, &Quantity::Metric)?;
    let seeds = state.ids().map(|id| (id.clone(), Diffeo::Identity)).collect();
    let fam = IdentificationFamily::seeded(vec![spacing; n], patch.site_set(), seeds)?;
    let qcs = QuantumCoordinateSystem::with_lattice_chart(Arc::new(fam), configs[0].id())?;
    let point = qcs.point(&vec![0.0; n])?;
    Ok(AlignmentTask::new(state, qcs, point, radius))
}
